use serde::{Deserialize, Serialize};

/// Default gray used for sources that carry no color.
pub const DEFAULT_GRAY: u8 = 128;

/// One decoded survey point. Positions are in meters after scale and offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: u8,
    pub g: u8,
    pub b: u8,
    pub intensity: u16,
    pub classification: u8,
}

impl PointRecord {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        PointRecord {
            x,
            y,
            z,
            r: DEFAULT_GRAY,
            g: DEFAULT_GRAY,
            b: DEFAULT_GRAY,
            intensity: 0,
            classification: 0,
        }
    }

    pub fn with_color(mut self, r: u8, g: u8, b: u8) -> Self {
        self.r = r;
        self.g = g;
        self.b = b;
        self
    }

    #[inline]
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Axis-aligned bounding box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    /// An inverted box that any `extend` call will replace.
    pub fn empty() -> Self {
        Aabb {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn extend(&mut self, p: [f64; 3]) {
        for i in 0..3 {
            if p[i] < self.min[i] {
                self.min[i] = p[i];
            }
            if p[i] > self.max[i] {
                self.max[i] = p[i];
            }
        }
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn diagonal(&self) -> f64 {
        let e = self.extent();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    /// Inclusive containment on every face.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }

    /// Squared distance from `p` to the closest point of the box.
    pub fn distance_squared(&self, p: [f64; 3]) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    /// Cube sharing the min corner with edge equal to the largest extent.
    /// A box with no extent at all (single point or coincident points) gets
    /// a 1 m edge so that downstream spacing never collapses to zero.
    pub fn cubify(&self) -> Aabb {
        let e = self.extent();
        let mut edge = e[0].max(e[1]).max(e[2]);
        if edge <= 0.0 {
            edge = 1.0;
        }
        // min + (max - min) can round below max; grow the edge by ulps until
        // the input is covered.
        loop {
            let max = [self.min[0] + edge, self.min[1] + edge, self.min[2] + edge];
            if (0..3).all(|i| max[i] >= self.max[i]) {
                return Aabb { min: self.min, max };
            }
            edge = edge.next_up();
        }
    }

    /// Like [`Aabb::cubify`] but refuses a zero-extent box for a source that
    /// claims more than one point, which usually means a broken header.
    pub fn cubify_checked(&self, claimed_points: u64) -> Result<Aabb, crate::IngestError> {
        let e = self.extent();
        if claimed_points > 1 && e.iter().all(|v| *v == 0.0) {
            return Err(crate::IngestError::DegenerateExtent {
                points: claimed_points,
            });
        }
        Ok(self.cubify())
    }
}
