//! PLY reader for `ascii` and `binary_little_endian` files.
//!
//! Only the `vertex` element is decoded; other elements preceding it are
//! skipped, elements after it are never touched.

use std::io::{BufRead, Seek, SeekFrom};

use super::{ColorDepth, IngestError, COLOR_SNIFF_COUNT};
use crate::point::PointRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: u64,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

/// Where each attribute of interest lives inside a vertex row.
#[derive(Debug, Clone, Default)]
struct Layout {
    xyz: [Option<usize>; 3],
    rgb: [Option<usize>; 3],
    intensity: Option<usize>,
    classification: Option<usize>,
}

pub struct PlyReader<R> {
    inner: R,
    encoding: Encoding,
    vertex: Element,
    layout: Layout,
    depth: ColorDepth,
    remaining: u64,
    values: Vec<f64>,
    line: String,
    row: Vec<u8>,
}

impl<R: BufRead + Seek> PlyReader<R> {
    pub fn new(mut inner: R) -> Result<Self, IngestError> {
        let (encoding, elements) = parse_header(&mut inner)?;
        let vertex_pos = elements
            .iter()
            .position(|e| e.name == "vertex")
            .ok_or_else(|| IngestError::CorruptHeader("no vertex element".into()))?;
        for e in &elements[..vertex_pos] {
            skip_element(&mut inner, encoding, e)?;
        }
        let vertex = elements[vertex_pos].clone();
        let mut layout = Layout::default();
        for (i, p) in vertex.props.iter().enumerate() {
            let Property::Scalar { name, .. } = p else {
                continue;
            };
            match name.as_str() {
                "x" => layout.xyz[0] = Some(i),
                "y" => layout.xyz[1] = Some(i),
                "z" => layout.xyz[2] = Some(i),
                "red" | "r" => layout.rgb[0] = Some(i),
                "green" | "g" => layout.rgb[1] = Some(i),
                "blue" | "b" => layout.rgb[2] = Some(i),
                "intensity" | "scalar_intensity" => layout.intensity = Some(i),
                "classification" | "scalar_classification" => layout.classification = Some(i),
                _ => {}
            }
        }
        if layout.xyz.iter().any(Option::is_none) {
            return Err(IngestError::CorruptHeader(
                "vertex element lacks x, y or z".into(),
            ));
        }
        let mut reader = PlyReader {
            inner,
            encoding,
            remaining: vertex.count,
            values: vec![0.0; vertex.props.len()],
            vertex,
            layout,
            depth: ColorDepth::Eight,
            line: String::new(),
            row: Vec::new(),
        };
        if reader.has_color() {
            let start = reader.inner.stream_position()?;
            let n = reader.remaining.min(COLOR_SNIFF_COUNT as u64);
            let mut colors = Vec::with_capacity(n as usize);
            for _ in 0..n {
                reader.read_row()?;
                let c = reader
                    .layout
                    .rgb
                    .map(|i| reader.values[i.unwrap()].clamp(0.0, 65535.0) as u16);
                colors.push(c);
            }
            reader.depth = ColorDepth::sniff(colors);
            reader.inner.seek(SeekFrom::Start(start))?;
        }
        Ok(reader)
    }

    pub fn has_color(&self) -> bool {
        self.layout.rgb.iter().all(Option::is_some)
    }

    pub fn has_intensity(&self) -> bool {
        self.layout.intensity.is_some()
    }

    fn read_row(&mut self) -> Result<(), IngestError> {
        let index = self.vertex.count - self.remaining;
        let malformed = |detail: String| IngestError::MalformedRecord {
            location: format!("PLY vertex {index}"),
            detail,
        };
        match self.encoding {
            Encoding::Ascii => {
                self.line.clear();
                if self.inner.read_line(&mut self.line)? == 0 {
                    return Err(malformed("unexpected end of file".into()));
                }
                let mut tokens = self.line.split_ascii_whitespace();
                for (slot, prop) in self.values.iter_mut().zip(&self.vertex.props) {
                    match prop {
                        Property::Scalar { .. } => {
                            let tok = tokens
                                .next()
                                .ok_or_else(|| malformed("too few values".into()))?;
                            *slot = tok
                                .parse::<f64>()
                                .map_err(|_| malformed(format!("not a number: {tok:?}")))?;
                        }
                        Property::List { .. } => {
                            let tok = tokens
                                .next()
                                .ok_or_else(|| malformed("missing list count".into()))?;
                            let n: usize = tok
                                .parse()
                                .map_err(|_| malformed(format!("bad list count {tok:?}")))?;
                            for _ in 0..n {
                                tokens
                                    .next()
                                    .ok_or_else(|| malformed("short list".into()))?;
                            }
                        }
                    }
                }
            }
            Encoding::BinaryLe => {
                for (slot, prop) in self.values.iter_mut().zip(&self.vertex.props) {
                    match prop {
                        Property::Scalar { ty, .. } => {
                            self.row.resize(ty.size(), 0);
                            self.inner
                                .read_exact(&mut self.row)
                                .map_err(|e| malformed(e.to_string()))?;
                            *slot = ty.read_le(&self.row);
                        }
                        Property::List { count, item } => {
                            self.row.resize(count.size(), 0);
                            self.inner
                                .read_exact(&mut self.row)
                                .map_err(|e| malformed(e.to_string()))?;
                            let n = count.read_le(&self.row) as usize;
                            self.row.resize(n * item.size(), 0);
                            self.inner
                                .read_exact(&mut self.row)
                                .map_err(|e| malformed(e.to_string()))?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn current(&self) -> Result<PointRecord, IngestError> {
        let v = |i: Option<usize>| self.values[i.unwrap()];
        let mut p = PointRecord::new(
            v(self.layout.xyz[0]),
            v(self.layout.xyz[1]),
            v(self.layout.xyz[2]),
        );
        if !p.is_finite() {
            return Err(IngestError::MalformedRecord {
                location: format!("PLY vertex {}", self.vertex.count - self.remaining - 1),
                detail: "non-finite coordinate".into(),
            });
        }
        if self.has_color() {
            let c = self
                .layout
                .rgb
                .map(|i| self.depth.reduce(v(i).clamp(0.0, 65535.0) as u16));
            p = p.with_color(c[0], c[1], c[2]);
        }
        if let Some(i) = self.layout.intensity {
            p.intensity = self.values[i].round().clamp(0.0, 65535.0) as u16;
        }
        if let Some(i) = self.layout.classification {
            p.classification = self.values[i].clamp(0.0, 255.0) as u8;
        }
        Ok(p)
    }
}

impl<R: BufRead + Seek> Iterator for PlyReader<R> {
    type Item = Result<PointRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        let res = self.read_row();
        self.remaining -= 1;
        if let Err(e) = res {
            self.remaining = 0;
            return Some(Err(e));
        }
        Some(self.current())
    }
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<(Encoding, Vec<Element>), IngestError> {
    let corrupt = |m: String| IngestError::CorruptHeader(m);
    let mut line = String::new();
    let next_line = |r: &mut R, line: &mut String| -> Result<bool, IngestError> {
        line.clear();
        Ok(r.read_line(line)? > 0)
    };
    if !next_line(r, &mut line)? || line.trim_end() != "ply" {
        return Err(corrupt("missing \"ply\" magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next_line(r, &mut line)? {
            return Err(corrupt("header not terminated by end_header".into()));
        }
        let mut words = line.split_ascii_whitespace();
        match words.next() {
            Some("format") => {
                encoding = Some(match words.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    Some(other) => {
                        return Err(IngestError::UnsupportedFormat(format!(
                            "PLY encoding {other}"
                        )))
                    }
                    None => return Err(corrupt("format line without encoding".into())),
                })
            }
            Some("element") => {
                let name = words
                    .next()
                    .ok_or_else(|| corrupt("unnamed element".into()))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| corrupt(format!("element {name} without count")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| corrupt("property before any element".into()))?;
                let ty = words
                    .next()
                    .ok_or_else(|| corrupt("empty property".into()))?;
                let prop = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => Property::List { count, item },
                        _ => return Err(corrupt(format!("bad list property: {}", line.trim()))),
                    }
                } else {
                    let ty =
                        Scalar::parse(ty).ok_or_else(|| corrupt(format!("unknown type {ty}")))?;
                    let name = words
                        .next()
                        .ok_or_else(|| corrupt("unnamed property".into()))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                elem.props.push(prop);
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(corrupt(format!("unexpected header keyword {other}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| corrupt("missing format line".into()))?;
    Ok((encoding, elements))
}

fn skip_element<R: BufRead>(r: &mut R, enc: Encoding, e: &Element) -> Result<(), IngestError> {
    let mut buf = Vec::new();
    for _ in 0..e.count {
        match enc {
            Encoding::Ascii => {
                buf.clear();
                if r.read_until(b'\n', &mut buf)? == 0 {
                    return Err(IngestError::CorruptHeader(format!(
                        "element {} truncated",
                        e.name
                    )));
                }
            }
            Encoding::BinaryLe => {
                for p in &e.props {
                    match p {
                        Property::Scalar { ty, .. } => {
                            buf.resize(ty.size(), 0);
                            r.read_exact(&mut buf)?;
                        }
                        Property::List { count, item } => {
                            buf.resize(count.size(), 0);
                            r.read_exact(&mut buf)?;
                            let n = count.read_le(&buf) as usize;
                            buf.resize(n * item.size(), 0);
                            r.read_exact(&mut buf)?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(bytes: Vec<u8>) -> Result<Vec<PointRecord>, IngestError> {
        PlyReader::new(Cursor::new(bytes))?.collect()
    }

    #[test]
    fn binary_with_double_coords_and_colors() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\ncomment made by hand\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for (p, c) in [
            ([1.5f64, -2.0, 3.25], [10u8, 20, 30]),
            ([0.0, 0.0, 0.0], [255, 0, 1]),
        ] {
            for v in p {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.extend_from_slice(&c);
        }
        let pts = read(bytes).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].position(), [1.5, -2.0, 3.25]);
        assert_eq!((pts[0].r, pts[0].g, pts[0].b), (10, 20, 30));
        assert_eq!((pts[1].r, pts[1].g, pts[1].b), (255, 0, 1));
    }

    #[test]
    fn skips_leading_elements() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement camera 1\nproperty float fx\nproperty list uchar float dist\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        bytes.extend_from_slice(&9.0f32.to_le_bytes());
        bytes.push(2);
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        for v in [4.0f32, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(read(bytes).unwrap()[0].position(), [4.0, 5.0, 6.0]);
    }

    #[test]
    fn ushort_colors_are_reduced() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty ushort red\nproperty ushort green\nproperty ushort blue\nend_header\n0 0 0 65535 32768 0\n1 1 1 256 0 512\n".to_vec();
        let pts = read(bytes).unwrap();
        assert_eq!((pts[0].r, pts[0].g, pts[0].b), (255, 128, 0));
        assert_eq!((pts[1].r, pts[1].g, pts[1].b), (1, 0, 2));
    }

    #[test]
    fn big_endian_is_unsupported() {
        let bytes = b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n".to_vec();
        assert!(matches!(
            read(bytes),
            Err(IngestError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn missing_coordinate_property() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n".to_vec();
        assert!(matches!(read(bytes), Err(IngestError::CorruptHeader(_))));
    }

    #[test]
    fn truncated_ascii_body() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n".to_vec();
        assert!(matches!(
            read(bytes),
            Err(IngestError::MalformedRecord { .. })
        ));
    }
}
