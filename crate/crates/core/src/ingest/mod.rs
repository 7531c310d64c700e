//! Readers that turn LAS, PLY and XYZ files into a uniform stream of
//! [`PointRecord`]s.
//!
//! [`open_source`] scans the file once to produce a [`SourceSummary`] with a
//! tight bounding box and then hands back a fresh streaming reader.

mod las;
mod ply;
mod xyz;

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::point::{Aabb, PointRecord};

pub use self::las::{LasHeader, LasReader};
pub use self::ply::PlyReader;
pub use self::xyz::XyzReader;

/// Number of leading records inspected to decide whether colors are 16 bit.
pub const COLOR_SNIFF_COUNT: usize = 1000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("malformed record at {location}: {detail}")]
    MalformedRecord { location: String, detail: String },
    #[error("degenerate extent: {points} points claimed but the bounding box has no extent")]
    DegenerateExtent { points: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::UnsupportedFormat(_) => "UnsupportedFormat",
            IngestError::CorruptHeader(_) => "CorruptHeader",
            IngestError::MalformedRecord { .. } => "MalformedRecord",
            IngestError::DegenerateExtent { .. } => "DegenerateExtent",
            IngestError::Io(_) => "IO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceFormat {
    Las,
    Ply,
    Xyz,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSummary {
    pub point_count: u64,
    pub aabb: Aabb,
    pub has_color: bool,
    pub has_intensity: bool,
    pub source_format: SourceFormat,
}

/// A single-consumer stream of points in file order.
pub type PointStream = Box<dyn Iterator<Item = Result<PointRecord, IngestError>> + Send>;

/// Sniffs the format of `path` from its magic bytes, falling back to the
/// extension for text formats.
pub fn detect_format(path: &Path) -> Result<SourceFormat, IngestError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    if ext == "laz" {
        return Err(laz_unsupported());
    }
    let mut file = File::open(path)?;
    let mut magic = [0u8; 4];
    let n = read_up_to(&mut file, &mut magic)?;
    if n == 0 {
        return Err(IngestError::CorruptHeader("empty file".into()));
    }
    if &magic[..n] == b"LASF" {
        return Ok(SourceFormat::Las);
    }
    if n >= 3 && &magic[..3] == b"ply" {
        return Ok(SourceFormat::Ply);
    }
    match ext.as_str() {
        "las" => Err(IngestError::CorruptHeader(format!(
            "LAS signature is {:?}, expected \"LASF\"",
            String::from_utf8_lossy(&magic[..n])
        ))),
        "ply" => Err(IngestError::CorruptHeader("missing \"ply\" magic".into())),
        "xyz" | "txt" | "pts" | "asc" | "csv" => Ok(SourceFormat::Xyz),
        _ if looks_like_text(&magic[..n]) => Ok(SourceFormat::Xyz),
        _ => Err(IngestError::UnsupportedFormat(format!(
            "cannot identify {}",
            path.display()
        ))),
    }
}

pub(crate) fn laz_unsupported() -> IngestError {
    IngestError::UnsupportedFormat(
        "LAZ is compressed; decompress to uncompressed LAS first (e.g. `laszip -i in.laz -o out.las`)"
            .into(),
    )
}

fn looks_like_text(bytes: &[u8]) -> bool {
    bytes
        .iter()
        .all(|b| b.is_ascii_digit() || b" \t\r\n#+-.,eE".contains(b))
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// An openable point source: remembers the path and format so that several
/// independent scans can be made.
#[derive(Debug, Clone)]
pub struct Source {
    path: PathBuf,
    format: SourceFormat,
}

impl Source {
    pub fn new(path: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let path = path.into();
        let format = detect_format(&path)?;
        Ok(Source { path, format })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn format(&self) -> SourceFormat {
        self.format
    }

    /// Opens a fresh stream over every record, in file order.
    pub fn stream(&self) -> Result<PointStream, IngestError> {
        let file = BufReader::with_capacity(1 << 16, File::open(&self.path)?);
        Ok(match self.format {
            SourceFormat::Las => Box::new(LasReader::new(file, file_len(&self.path)?)?),
            SourceFormat::Ply => Box::new(PlyReader::new(file)?),
            SourceFormat::Xyz => Box::new(XyzReader::new(file, &self.path)?),
        })
    }

    /// Full scan computing count and tight bounds.
    pub fn summarize(&self) -> Result<SourceSummary, IngestError> {
        let (has_color, has_intensity) = match self.format {
            SourceFormat::Las => {
                let file = BufReader::new(File::open(&self.path)?);
                let r = LasReader::new(file, file_len(&self.path)?)?;
                (r.header().has_color(), true)
            }
            SourceFormat::Ply => {
                let r = PlyReader::new(BufReader::new(File::open(&self.path)?))?;
                (r.has_color(), r.has_intensity())
            }
            SourceFormat::Xyz => {
                let r = XyzReader::new(BufReader::new(File::open(&self.path)?), &self.path)?;
                (r.has_color(), r.has_intensity())
            }
        };
        let mut aabb = Aabb::empty();
        let mut point_count = 0u64;
        for p in self.stream()? {
            let p = p?;
            aabb.extend(p.position());
            point_count += 1;
        }
        if point_count == 0 {
            aabb = Aabb::new([0.0; 3], [0.0; 3]);
        }
        Ok(SourceSummary {
            point_count,
            aabb,
            has_color,
            has_intensity,
            source_format: self.format,
        })
    }
}

fn file_len(path: &Path) -> io::Result<u64> {
    Ok(std::fs::metadata(path)?.len())
}

/// Opens `path`, scans it for a summary and returns a fresh stream positioned
/// at the first record.
pub fn open_source(path: impl AsRef<Path>) -> Result<(PointStream, SourceSummary), IngestError> {
    let source = Source::new(path.as_ref())?;
    let summary = source.summarize()?;
    Ok((source.stream()?, summary))
}

/// Reduces 16 bit color channels to 8 bit when any sniffed channel exceeds
/// 255; otherwise channels are taken as-is (clamped).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ColorDepth {
    Eight,
    Sixteen,
}

impl ColorDepth {
    pub(crate) fn sniff<I: IntoIterator<Item = [u16; 3]>>(colors: I) -> Self {
        if colors
            .into_iter()
            .take(COLOR_SNIFF_COUNT)
            .any(|c| c.iter().any(|v| *v > 255))
        {
            ColorDepth::Sixteen
        } else {
            ColorDepth::Eight
        }
    }

    #[inline]
    pub(crate) fn reduce(self, v: u16) -> u8 {
        match self {
            ColorDepth::Sixteen => (v >> 8) as u8,
            ColorDepth::Eight => v.min(255) as u8,
        }
    }
}
