//! Whitespace separated text: `x y z [intensity] [r g b]`, `#` comments.
//!
//! Column counts: 3 = position, 4 or 5 = position + intensity (a fifth
//! column is ignored), 6 = position + color, 7 or more = position +
//! intensity + color.

use std::io::{BufRead, Seek, SeekFrom};
use std::path::Path;

use super::{ColorDepth, IngestError, COLOR_SNIFF_COUNT};
use crate::point::PointRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Row {
    xyz: [f64; 3],
    intensity: Option<f64>,
    rgb: Option<[f64; 3]>,
}

pub struct XyzReader<R> {
    inner: R,
    name: String,
    line_no: u64,
    line: String,
    depth: ColorDepth,
    has_color: bool,
    has_intensity: bool,
    done: bool,
}

impl<R: BufRead + Seek> XyzReader<R> {
    pub fn new(inner: R, path: &Path) -> Result<Self, IngestError> {
        let mut reader = XyzReader {
            inner,
            name: path.display().to_string(),
            line_no: 0,
            line: String::new(),
            depth: ColorDepth::Eight,
            has_color: false,
            has_intensity: false,
            done: false,
        };
        // Sniff the first rows for column layout and color depth.
        let mut colors = Vec::new();
        let mut seen = 0;
        while seen < COLOR_SNIFF_COUNT {
            match reader.next_row() {
                Some(Ok(row)) => {
                    seen += 1;
                    reader.has_intensity |= row.intensity.is_some();
                    if let Some(c) = row.rgb {
                        reader.has_color = true;
                        colors.push(c.map(|v| v.clamp(0.0, 65535.0) as u16));
                    }
                }
                Some(Err(_)) | None => break,
            }
        }
        if seen == 0 && reader.line_no == 0 {
            return Err(IngestError::CorruptHeader("empty file".into()));
        }
        reader.depth = ColorDepth::sniff(colors);
        reader.inner.seek(SeekFrom::Start(0))?;
        reader.line_no = 0;
        reader.done = false;
        Ok(reader)
    }

    pub fn has_color(&self) -> bool {
        self.has_color
    }

    pub fn has_intensity(&self) -> bool {
        self.has_intensity
    }

    fn next_row(&mut self) -> Option<Result<Row, IngestError>> {
        if self.done {
            return None;
        }
        loop {
            self.line.clear();
            match self.inner.read_line(&mut self.line) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
            self.line_no += 1;
            let content = match self.line.find('#') {
                Some(i) => &self.line[..i],
                None => &self.line[..],
            };
            if content.trim().is_empty() {
                continue;
            }
            return Some(
                parse_row(content).map_err(|detail| IngestError::MalformedRecord {
                    location: format!("{}:{}", self.name, self.line_no),
                    detail,
                }),
            );
        }
    }
}

fn parse_row(content: &str) -> Result<Row, String> {
    let mut vals = [0.0f64; 7];
    let mut n = 0;
    for tok in content
        .split(|c: char| c.is_ascii_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
    {
        if n == 7 {
            break;
        }
        vals[n] = tok
            .parse::<f64>()
            .map_err(|_| format!("not a number: {tok:?}"))?;
        n += 1;
    }
    if n < 3 {
        return Err(format!("expected at least 3 numeric fields, found {n}"));
    }
    let xyz = [vals[0], vals[1], vals[2]];
    if xyz.iter().any(|v| !v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    let (intensity, rgb) = match n {
        3 => (None, None),
        4 | 5 => (Some(vals[3]), None),
        6 => (None, Some([vals[3], vals[4], vals[5]])),
        _ => (Some(vals[3]), Some([vals[4], vals[5], vals[6]])),
    };
    Ok(Row {
        xyz,
        intensity,
        rgb,
    })
}

impl<R: BufRead + Seek> Iterator for XyzReader<R> {
    type Item = Result<PointRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        let row = match self.next_row()? {
            Ok(r) => r,
            Err(e) => {
                self.done = true;
                return Some(Err(e));
            }
        };
        let mut p = PointRecord::new(row.xyz[0], row.xyz[1], row.xyz[2]);
        if let Some(i) = row.intensity {
            p.intensity = i.round().clamp(0.0, 65535.0) as u16;
        }
        if let Some(c) = row.rgb {
            let c = c.map(|v| self.depth.reduce(v.round().clamp(0.0, 65535.0) as u16));
            p = p.with_color(c[0], c[1], c[2]);
        }
        Some(Ok(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &str) -> Result<Vec<PointRecord>, IngestError> {
        XyzReader::new(Cursor::new(text.as_bytes().to_vec()), Path::new("t.xyz"))?.collect()
    }

    #[test]
    fn column_dialects() {
        let pts = read("# header\n1 2 3\n1 2 3 40\n1 2 3 40 99\n1 2 3 10 20 30\n1,2,3,7,10,20,30 # trailing\n\n").unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[0], PointRecord::new(1.0, 2.0, 3.0));
        assert_eq!(pts[1].intensity, 40);
        assert_eq!(pts[2].intensity, 40);
        assert_eq!(
            (pts[3].r, pts[3].g, pts[3].b, pts[3].intensity),
            (10, 20, 30, 0)
        );
        assert_eq!((pts[4].r, pts[4].intensity), (10, 7));
    }

    #[test]
    fn too_few_fields_is_malformed() {
        match read("1 2 3\n4 5\n") {
            Err(IngestError::MalformedRecord { location, .. }) => assert_eq!(location, "t.xyz:2"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read("1 2 x\n"),
            Err(IngestError::MalformedRecord { .. })
        ));
    }

    #[test]
    fn comments_only_file_yields_nothing() {
        assert_eq!(read("# nothing here\n").unwrap(), vec![]);
    }

    #[test]
    fn wide_colors_are_shifted() {
        let pts = read("0 0 0 65535 256 0\n").unwrap();
        assert_eq!((pts[0].r, pts[0].g, pts[0].b), (255, 1, 0));
    }
}
