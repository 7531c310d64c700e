//! The low-density byproduct cloud: `byproduct.json` holds the planes and
//! metadata, `byproduct.bin` holds 20-byte records (an 18-byte tile record
//! relative to the index origin followed by a little-endian u16 plane index).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::octree::{decimate, stream_node, tile, IndexError, IndexManifest};
use crate::point::PointRecord;

use super::{segment_planes, Plane, SegmentConfig, SegmentError, SegmentationResult};

pub const BYPRODUCT_JSON: &str = "byproduct.json";
pub const BYPRODUCT_BIN: &str = "byproduct.bin";
pub const BYPRODUCT_RECORD_SIZE: usize = tile::RECORD_SIZE + 2;
const BYPRODUCT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ByproductConfig {
    pub target_points: u64,
    #[serde(flatten)]
    pub segment: SegmentConfig,
}

impl Default for ByproductConfig {
    fn default() -> Self {
        ByproductConfig {
            target_points: 500_000,
            segment: SegmentConfig::default(),
        }
    }
}

/// Contents of `byproduct.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Byproduct {
    pub version: String,
    /// Positions in `byproduct.bin` are relative to this point.
    pub origin: [f64; 3],
    pub point_count: u64,
    pub record_size: usize,
    pub seed: u64,
    pub config: ByproductConfig,
    pub planes: Vec<Plane>,
}

/// Decimates the index at `dir`, segments the quantized sample and writes the
/// byproduct files next to the manifest.
pub fn run_byproduct(
    dir: &Path,
    manifest: &IndexManifest,
    cfg: &ByproductConfig,
) -> Result<SegmentationResult, SegmentError> {
    cfg.segment.validate()?;
    if cfg.target_points == 0 {
        return Err(SegmentError::InvalidConfig(
            "target_points must be at least 1".into(),
        ));
    }
    let origin = manifest.aabb.min;
    let stream = manifest.nodes.iter().flat_map(
        |n| -> Box<dyn Iterator<Item = Result<PointRecord, IndexError>>> {
            match stream_node(dir, manifest, &n.code) {
                Ok(reader) => Box::new(reader),
                Err(e) => Box::new(std::iter::once(Err(e))),
            }
        },
    );
    let sample: Vec<PointRecord> = decimate(stream, cfg.target_points, cfg.segment.seed)?
        .into_iter()
        .map(|p| tile::quantize(&p, origin))
        .collect();
    let result = if sample.len() < 3 {
        SegmentationResult {
            labels: vec![0; sample.len()],
            points: sample,
            planes: Vec::new(),
            seed: cfg.segment.seed,
        }
    } else {
        segment_planes(&sample, &cfg.segment)?
    };
    write_byproduct(dir, origin, cfg, &result)?;
    tracing::info!(
        points = result.points.len(),
        planes = result.planes.len(),
        "byproduct written"
    );
    Ok(result)
}

pub fn write_byproduct(
    dir: &Path,
    origin: [f64; 3],
    cfg: &ByproductConfig,
    result: &SegmentationResult,
) -> Result<(), SegmentError> {
    let mut bin = Vec::with_capacity(result.points.len() * BYPRODUCT_RECORD_SIZE);
    for (p, label) in result.points.iter().zip(&result.labels) {
        tile::encode_into(&mut bin, p, origin);
        bin.extend_from_slice(&label.to_le_bytes());
    }
    let meta = Byproduct {
        version: BYPRODUCT_VERSION.into(),
        origin,
        point_count: result.points.len() as u64,
        record_size: BYPRODUCT_RECORD_SIZE,
        seed: result.seed,
        config: *cfg,
        planes: result.planes.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&meta).expect("byproduct metadata serializes");
    json.push(b'\n');
    write_atomic(&dir.join(BYPRODUCT_BIN), &bin)?;
    write_atomic(&dir.join(BYPRODUCT_JSON), &json)?;
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IndexError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads both byproduct files back as (metadata, points, plane labels).
pub fn read_byproduct(dir: &Path) -> Result<(Byproduct, Vec<PointRecord>, Vec<u16>), SegmentError> {
    let meta: Byproduct = serde_json::from_slice(&fs::read(dir.join(BYPRODUCT_JSON))?)
        .map_err(|e| SegmentError::Corrupt(format!("{BYPRODUCT_JSON}: {e}")))?;
    let bin = fs::read(dir.join(BYPRODUCT_BIN))?;
    let expected = meta.point_count * BYPRODUCT_RECORD_SIZE as u64;
    if meta.record_size != BYPRODUCT_RECORD_SIZE || bin.len() as u64 != expected {
        return Err(SegmentError::Corrupt(format!(
            "{BYPRODUCT_BIN}: expected {expected} bytes, found {}",
            bin.len()
        )));
    }
    let mut points = Vec::with_capacity(meta.point_count as usize);
    let mut labels = Vec::with_capacity(meta.point_count as usize);
    for rec in bin.chunks_exact(BYPRODUCT_RECORD_SIZE) {
        points.push(tile::decode(rec, meta.origin));
        let label = u16::from_le_bytes([rec[18], rec[19]]);
        if label as usize > meta.planes.len() {
            return Err(SegmentError::Corrupt(format!(
                "plane index {label} out of range ({} planes)",
                meta.planes.len()
            )));
        }
        labels.push(label);
    }
    Ok((meta, points, labels))
}
