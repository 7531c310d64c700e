use serde::Serialize;

use super::{MeasureError, MeasurementSeries, SeriesKind};

/// Scalar result of a series together with its per-segment breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Measurement {
    Distance {
        total: f64,
        segments: Vec<f64>,
    },
    Height {
        delta: f64,
    },
    /// Interior angles at A, B and C in degrees.
    Angle {
        degrees: [f64; 3],
    },
    Area {
        area: f64,
    },
    Volume {
        volume: f64,
    },
    /// Horizontal length of the profile axis and of each of its segments.
    /// Samples come from [`super::extract_profile`].
    Profile {
        mileage: f64,
        segments: Vec<f64>,
    },
    None,
}

impl Measurement {
    /// Primary scalar, if the kind has one.
    pub fn scalar(&self) -> Option<f64> {
        match self {
            Measurement::Distance { total, .. } => Some(*total),
            Measurement::Height { delta } => Some(*delta),
            Measurement::Angle { degrees } => Some(degrees[1]),
            Measurement::Area { area } => Some(*area),
            Measurement::Volume { volume } => Some(*volume),
            Measurement::Profile { mileage, .. } => Some(*mileage),
            Measurement::None => None,
        }
    }
}

pub fn evaluate(series: &MeasurementSeries) -> Result<Measurement, MeasureError> {
    series.validate()?;
    let p: Vec<[f64; 3]> = series.vertices.iter().map(|v| v.position).collect();
    Ok(match series.kind {
        SeriesKind::Distance => {
            let segments: Vec<f64> = p.windows(2).map(|w| norm(sub(w[1], w[0]))).collect();
            Measurement::Distance {
                total: segments.iter().sum(),
                segments,
            }
        }
        SeriesKind::Height => Measurement::Height {
            delta: (p[1][2] - p[0][2]).abs(),
        },
        SeriesKind::Angle => Measurement::Angle {
            degrees: triangle_angles(p[0], p[1], p[2])?,
        },
        SeriesKind::Area => Measurement::Area {
            area: newell_area(&p),
        },
        SeriesKind::Volume => {
            let e = series.box_extent.expect("validated").extent;
            if e.contains(&0.0) {
                return Err(MeasureError::DegenerateGeometry(
                    "Volume box has a zero extent".into(),
                ));
            }
            Measurement::Volume {
                volume: e[0] * e[1] * e[2],
            }
        }
        SeriesKind::Profile => {
            let segments: Vec<f64> = p
                .windows(2)
                .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
                .collect();
            Measurement::Profile {
                mileage: segments.iter().sum(),
                segments,
            }
        }
        SeriesKind::Polygon | SeriesKind::Annotation => Measurement::None,
    })
}

fn triangle_angles(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Result<[f64; 3], MeasureError> {
    if a == b || b == c || c == a {
        return Err(MeasureError::DegenerateGeometry(
            "Angle has repeated vertices".into(),
        ));
    }
    let at = |o: [f64; 3], u: [f64; 3], v: [f64; 3]| {
        let (du, dv) = (sub(u, o), sub(v, o));
        let cos = dot(du, dv) / (norm(du) * norm(dv));
        cos.clamp(-1.0, 1.0).acos().to_degrees()
    };
    Ok([at(a, b, c), at(b, c, a), at(c, a, b)])
}

/// Half the magnitude of the Newell normal, taken relative to the first
/// vertex. Equals the planar area for planar polygons.
pub(crate) fn newell_area(p: &[[f64; 3]]) -> f64 {
    let o = p[0];
    let mut n = [0.0; 3];
    for i in 0..p.len() {
        let a = sub(p[i], o);
        let b = sub(p[(i + 1) % p.len()], o);
        let c = cross(a, b);
        for k in 0..3 {
            n[k] += c[k];
        }
    }
    norm(n) / 2.0
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
