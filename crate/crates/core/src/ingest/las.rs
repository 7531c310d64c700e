//! Uncompressed LAS 1.2–1.4, point data formats 0 through 3.

use std::io::{Read, Seek, SeekFrom};

use super::{laz_unsupported, ColorDepth, IngestError, COLOR_SNIFF_COUNT};
use crate::point::PointRecord;

const MIN_HEADER_SIZE: u16 = 227;

#[derive(Debug, Clone, PartialEq)]
pub struct LasHeader {
    pub version: (u8, u8),
    pub header_size: u16,
    pub offset_to_points: u32,
    pub point_format: u8,
    pub record_length: u16,
    pub point_count: u64,
    pub scale: [f64; 3],
    pub offset: [f64; 3],
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl LasHeader {
    pub fn has_color(&self) -> bool {
        matches!(self.point_format, 2 | 3)
    }

    fn color_offset(&self) -> Option<usize> {
        match self.point_format {
            2 => Some(20),
            3 => Some(28),
            _ => None,
        }
    }

    fn min_record_length(format: u8) -> u16 {
        match format {
            0 => 20,
            1 => 28,
            2 => 26,
            _ => 34,
        }
    }

    /// Parses the public header block and checks it against the file size.
    pub fn parse(raw: &[u8], file_len: u64) -> Result<Self, IngestError> {
        if raw.len() < MIN_HEADER_SIZE as usize {
            return Err(IngestError::CorruptHeader(format!(
                "header truncated at {} bytes",
                raw.len()
            )));
        }
        if &raw[0..4] != b"LASF" {
            return Err(IngestError::CorruptHeader(
                "signature is not \"LASF\"".into(),
            ));
        }
        let version = (raw[24], raw[25]);
        if version.0 != 1 || !(2..=4).contains(&version.1) {
            return Err(IngestError::UnsupportedFormat(format!(
                "LAS version {}.{} (supported: 1.2 to 1.4)",
                version.0, version.1
            )));
        }
        let header_size = u16_at(raw, 94);
        let offset_to_points = u32_at(raw, 96);
        let format_byte = raw[104];
        if format_byte & 0xC0 != 0 {
            return Err(laz_unsupported());
        }
        if format_byte > 3 {
            return Err(IngestError::UnsupportedFormat(format!(
                "LAS point data format {format_byte} (supported: 0 to 3)"
            )));
        }
        let record_length = u16_at(raw, 105);
        let legacy_count = u32_at(raw, 107) as u64;
        let mut point_count = legacy_count;
        if version.1 >= 4 && legacy_count == 0 && header_size >= 255 && raw.len() >= 255 {
            point_count = u64_at(raw, 247);
        }
        let f = |o: usize| f64_at(raw, o);
        let scale = [f(131), f(139), f(147)];
        let offset = [f(155), f(163), f(171)];
        let max = [f(179), f(195), f(211)];
        let min = [f(187), f(203), f(219)];

        if header_size < MIN_HEADER_SIZE {
            return Err(IngestError::CorruptHeader(format!(
                "header size {header_size} below {MIN_HEADER_SIZE}"
            )));
        }
        if (offset_to_points as u64) < header_size as u64 {
            return Err(IngestError::CorruptHeader(format!(
                "point data offset {offset_to_points} inside the header"
            )));
        }
        if record_length < Self::min_record_length(format_byte) {
            return Err(IngestError::CorruptHeader(format!(
                "record length {record_length} too short for point format {format_byte}"
            )));
        }
        if scale.iter().any(|s| !s.is_finite() || *s == 0.0)
            || offset.iter().any(|o| !o.is_finite())
        {
            return Err(IngestError::CorruptHeader("invalid scale or offset".into()));
        }
        let needed = offset_to_points as u64 + point_count * record_length as u64;
        if needed > file_len {
            return Err(IngestError::CorruptHeader(format!(
                "{point_count} records of {record_length} bytes need {needed} bytes, file has {file_len}"
            )));
        }
        Ok(LasHeader {
            version,
            header_size,
            offset_to_points,
            point_format: format_byte,
            record_length,
            point_count,
            scale,
            offset,
            min,
            max,
        })
    }

    fn decode(&self, rec: &[u8], depth: ColorDepth) -> PointRecord {
        let raw = [
            i32::from_le_bytes(rec[0..4].try_into().unwrap()),
            i32::from_le_bytes(rec[4..8].try_into().unwrap()),
            i32::from_le_bytes(rec[8..12].try_into().unwrap()),
        ];
        let mut p = PointRecord::new(
            raw[0] as f64 * self.scale[0] + self.offset[0],
            raw[1] as f64 * self.scale[1] + self.offset[1],
            raw[2] as f64 * self.scale[2] + self.offset[2],
        );
        p.intensity = u16::from_le_bytes([rec[12], rec[13]]);
        p.classification = rec[15] & 0x1F;
        if let Some(o) = self.color_offset() {
            let c = rgb16(&rec[o..o + 6]);
            p.r = depth.reduce(c[0]);
            p.g = depth.reduce(c[1]);
            p.b = depth.reduce(c[2]);
        }
        p
    }
}

fn rgb16(b: &[u8]) -> [u16; 3] {
    [
        u16::from_le_bytes([b[0], b[1]]),
        u16::from_le_bytes([b[2], b[3]]),
        u16::from_le_bytes([b[4], b[5]]),
    ]
}

fn u16_at(b: &[u8], o: usize) -> u16 {
    u16::from_le_bytes([b[o], b[o + 1]])
}
fn u32_at(b: &[u8], o: usize) -> u32 {
    u32::from_le_bytes(b[o..o + 4].try_into().unwrap())
}
fn u64_at(b: &[u8], o: usize) -> u64 {
    u64::from_le_bytes(b[o..o + 8].try_into().unwrap())
}
fn f64_at(b: &[u8], o: usize) -> f64 {
    f64::from_le_bytes(b[o..o + 8].try_into().unwrap())
}

pub struct LasReader<R> {
    inner: R,
    header: LasHeader,
    depth: ColorDepth,
    remaining: u64,
    buf: Vec<u8>,
}

impl<R: Read + Seek> LasReader<R> {
    pub fn new(mut inner: R, file_len: u64) -> Result<Self, IngestError> {
        let mut raw = vec![0u8; 375];
        let n = super::read_up_to(&mut inner, &mut raw)?;
        raw.truncate(n);
        if n == 0 {
            return Err(IngestError::CorruptHeader("empty file".into()));
        }
        let header = LasHeader::parse(&raw, file_len)?;
        inner.seek(SeekFrom::Start(header.offset_to_points as u64))?;
        let mut buf = vec![0u8; header.record_length as usize];

        let depth = match header.color_offset() {
            Some(o) => {
                let sniff = header.point_count.min(COLOR_SNIFF_COUNT as u64);
                let mut colors = Vec::with_capacity(sniff as usize);
                for _ in 0..sniff {
                    inner.read_exact(&mut buf)?;
                    colors.push(rgb16(&buf[o..o + 6]));
                }
                inner.seek(SeekFrom::Start(header.offset_to_points as u64))?;
                ColorDepth::sniff(colors)
            }
            None => ColorDepth::Eight,
        };
        Ok(LasReader {
            inner,
            remaining: header.point_count,
            header,
            depth,
            buf,
        })
    }

    pub fn header(&self) -> &LasHeader {
        &self.header
    }
}

impl<R: Read + Seek> Iterator for LasReader<R> {
    type Item = Result<PointRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        let index = self.header.point_count - self.remaining;
        self.remaining -= 1;
        if let Err(e) = self.inner.read_exact(&mut self.buf) {
            self.remaining = 0;
            return Some(Err(IngestError::MalformedRecord {
                location: format!("LAS record {index}"),
                detail: e.to_string(),
            }));
        }
        Some(Ok(self.header.decode(&self.buf, self.depth)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining as usize;
        (n, Some(n))
    }
}

#[cfg(test)]
pub(crate) mod test_writer {
    //! Minimal LAS 1.2 writer used to generate fixtures.

    use crate::point::PointRecord;

    pub struct Fixture {
        pub format: u8,
        pub scale: [f64; 3],
        pub offset: [f64; 3],
        pub wide_color: bool,
    }

    impl Fixture {
        pub fn quantize(&self, v: f64, axis: usize) -> i32 {
            ((v - self.offset[axis]) / self.scale[axis]).round() as i32
        }

        pub fn write(&self, points: &[PointRecord]) -> Vec<u8> {
            let rec_len: u16 = match self.format {
                0 => 20,
                1 => 28,
                2 => 26,
                _ => 34,
            };
            let mut out = vec![0u8; 227];
            out[0..4].copy_from_slice(b"LASF");
            out[24] = 1;
            out[25] = 2;
            out[94..96].copy_from_slice(&227u16.to_le_bytes());
            out[96..100].copy_from_slice(&227u32.to_le_bytes());
            out[104] = self.format;
            out[105..107].copy_from_slice(&rec_len.to_le_bytes());
            out[107..111].copy_from_slice(&(points.len() as u32).to_le_bytes());
            let mut min = [f64::INFINITY; 3];
            let mut max = [f64::NEG_INFINITY; 3];
            for p in points {
                for (i, v) in p.position().iter().enumerate() {
                    min[i] = min[i].min(*v);
                    max[i] = max[i].max(*v);
                }
            }
            let put = |out: &mut Vec<u8>, o: usize, v: f64| {
                out[o..o + 8].copy_from_slice(&v.to_le_bytes())
            };
            for i in 0..3 {
                put(&mut out, 131 + 8 * i, self.scale[i]);
                put(&mut out, 155 + 8 * i, self.offset[i]);
                put(&mut out, 179 + 16 * i, max[i]);
                put(&mut out, 187 + 16 * i, min[i]);
            }
            for p in points {
                let start = out.len();
                out.resize(start + rec_len as usize, 0);
                let rec = &mut out[start..];
                for (i, v) in p.position().iter().enumerate() {
                    rec[4 * i..4 * i + 4].copy_from_slice(&self.quantize(*v, i).to_le_bytes());
                }
                rec[12..14].copy_from_slice(&p.intensity.to_le_bytes());
                rec[15] = p.classification;
                let color_at = match self.format {
                    2 => Some(20),
                    3 => Some(28),
                    _ => None,
                };
                if let Some(o) = color_at {
                    for (k, c) in [p.r, p.g, p.b].into_iter().enumerate() {
                        let v = if self.wide_color {
                            (c as u16) << 8 | 0x7f
                        } else {
                            c as u16
                        };
                        rec[o + 2 * k..o + 2 * k + 2].copy_from_slice(&v.to_le_bytes());
                    }
                }
            }
            out
        }
    }
}
