//! Typed measurement series, drawings and annotations, their evaluation,
//! and layer interchange.

mod dxf;
mod evaluate;
mod interchange;
mod profile;
mod sample;
mod snap;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use uuid::Uuid;

use crate::octree::{IndexError, NodeCode};

pub use self::dxf::export_dxf;
pub use self::evaluate::{evaluate, Measurement};
pub use self::interchange::{
    export_layer, import_layer, to_canonical_json, write_canonical, LayerFormat, LAYER_SCHEMA,
    SCHEMA_VERSION,
};
pub use self::profile::{extract_profile, ProfileSample};
pub use self::sample::{random_layer, random_series};
pub use self::snap::snap;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("schema version unsupported: {0}")]
    SchemaVersionUnsupported(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Index(#[from] IndexError),
}

impl MeasureError {
    pub fn code(&self) -> &'static str {
        match self {
            MeasureError::DegenerateGeometry(_) => "DegenerateGeometry",
            MeasureError::ValidationFailed(_) => "ValidationFailed",
            MeasureError::SchemaVersionUnsupported(_) => "SchemaVersionUnsupported",
            MeasureError::UnsupportedFormat(_) => "UnsupportedFormat",
            MeasureError::InvalidArgument(_) => "InvalidArgument",
            MeasureError::Index(e) => e.code(),
        }
    }
}

/// Unknown JSON members carried through import and export untouched.
pub type Extra = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Vertex3 {
    pub position: [f64; 3],
    pub snapped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snap_node: Option<NodeCode>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Vertex3 {
    pub fn free(position: [f64; 3]) -> Self {
        Vertex3 {
            position,
            snapped: false,
            snap_node: None,
            extra: Extra::new(),
        }
    }

    pub fn snapped_to(position: [f64; 3], node: NodeCode) -> Self {
        Vertex3 {
            position,
            snapped: true,
            snap_node: Some(node),
            extra: Extra::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Distance,
    Height,
    Angle,
    Area,
    Volume,
    Profile,
    Polygon,
    Annotation,
}

impl SeriesKind {
    pub const ALL: [SeriesKind; 8] = [
        SeriesKind::Distance,
        SeriesKind::Height,
        SeriesKind::Angle,
        SeriesKind::Area,
        SeriesKind::Volume,
        SeriesKind::Profile,
        SeriesKind::Polygon,
        SeriesKind::Annotation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SeriesKind::Distance => "Distance",
            SeriesKind::Height => "Height",
            SeriesKind::Angle => "Angle",
            SeriesKind::Area => "Area",
            SeriesKind::Volume => "Volume",
            SeriesKind::Profile => "Profile",
            SeriesKind::Polygon => "Polygon",
            SeriesKind::Annotation => "Annotation",
        }
    }

    /// Allowed vertex count as (min, max).
    pub fn vertex_bounds(self) -> (usize, Option<usize>) {
        match self {
            SeriesKind::Distance | SeriesKind::Profile => (2, None),
            SeriesKind::Height => (2, Some(2)),
            SeriesKind::Angle => (3, Some(3)),
            SeriesKind::Area | SeriesKind::Polygon => (3, None),
            SeriesKind::Annotation | SeriesKind::Volume => (1, Some(1)),
        }
    }
}

/// Oriented box of a volume measurement: full edge lengths and rotation
/// about the vertical axis, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxExtent {
    pub extent: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MeasurementSeries {
    pub id: Uuid,
    pub kind: SeriesKind,
    pub vertices: Vec<Vertex3>,
    pub label: String,
    pub color: [u8; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_extent: Option<BoxExtent>,
    pub version: u64,
    pub author: String,
    #[serde(flatten)]
    pub extra: Extra,
}

impl MeasurementSeries {
    pub fn new(
        id: Uuid,
        kind: SeriesKind,
        vertices: Vec<Vertex3>,
        author: impl Into<String>,
    ) -> Self {
        MeasurementSeries {
            id,
            kind,
            vertices,
            label: String::new(),
            color: [255, 255, 0],
            profile_width: None,
            box_extent: None,
            version: 1,
            author: author.into(),
            extra: Extra::new(),
        }
    }

    pub fn set_vertices(&mut self, vertices: Vec<Vertex3>) {
        self.vertices = vertices;
        self.version += 1;
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
        self.version += 1;
    }

    pub fn set_color(&mut self, color: [u8; 3]) {
        self.color = color;
        self.version += 1;
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        let fail = |m: String| Err(MeasureError::ValidationFailed(m));
        let n = self.vertices.len();
        let name = self.kind.name();
        match self.kind.vertex_bounds() {
            (1, Some(1)) if n != 1 => {
                let what = if self.kind == SeriesKind::Volume {
                    "1 center vertex"
                } else {
                    "1 vertex"
                };
                return fail(format!("{name} requires {what}"));
            }
            (lo, Some(hi)) if lo == hi && n != lo => {
                return fail(format!("{name} requires {lo} vertices"))
            }
            (lo, None) if n < lo => return fail(format!("{name} requires at least {lo} vertices")),
            _ => {}
        }
        if self
            .vertices
            .iter()
            .any(|v| v.position.iter().any(|c| !c.is_finite()))
        {
            return fail(format!("{name} vertex coordinates must be finite"));
        }
        if self
            .vertices
            .iter()
            .any(|v| v.snap_node.is_some() && !v.snapped)
        {
            return fail("a vertex with a snap node must be marked snapped".into());
        }
        match self.kind {
            SeriesKind::Profile => match self.profile_width {
                Some(w) if w > 0.0 && w.is_finite() => {}
                _ => return fail("Profile requires a positive profile width".into()),
            },
            _ if self.profile_width.is_some() => {
                return fail(format!("{name} must not carry a profile width"))
            }
            _ => {}
        }
        match self.kind {
            SeriesKind::Volume => match self.box_extent {
                Some(b)
                    if b.extent.iter().all(|e| e.is_finite() && *e >= 0.0) && b.yaw.is_finite() => {
                }
                _ => return fail("Volume requires a finite, non-negative box extent".into()),
            },
            _ if self.box_extent.is_some() => {
                return fail(format!("{name} must not carry a box extent"))
            }
            _ => {}
        }
        if self.version == 0 {
            return fail("series version starts at 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ImportProvenance {
    pub layer_id: Uuid,
    /// New series id to original series id.
    pub series: BTreeMap<Uuid, Uuid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LayerDocument {
    pub id: Uuid,
    pub name: String,
    pub base_version: u64,
    pub series: Vec<MeasurementSeries>,
    #[serde(default)]
    pub plane_refs: Vec<Uuid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imported_from: Option<ImportProvenance>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl LayerDocument {
    pub fn new(id: Uuid, name: impl Into<String>) -> Self {
        LayerDocument {
            id,
            name: name.into(),
            base_version: 0,
            series: Vec::new(),
            plane_refs: Vec::new(),
            imported_from: None,
            extra: Extra::new(),
        }
    }

    pub fn series(&self, id: &Uuid) -> Option<&MeasurementSeries> {
        self.series.iter().find(|s| s.id == *id)
    }

    pub fn series_mut(&mut self, id: &Uuid) -> Option<&mut MeasurementSeries> {
        self.series.iter_mut().find(|s| s.id == *id)
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        let mut ids = HashSet::new();
        for s in &self.series {
            if !ids.insert(s.id) {
                return Err(MeasureError::ValidationFailed(format!(
                    "series ids must be unique within a layer ({} repeats)",
                    s.id
                )));
            }
            s.validate()?;
        }
        Ok(())
    }
}
