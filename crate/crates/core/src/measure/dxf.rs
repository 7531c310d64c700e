//! One-way ASCII DXF (R12) export.

use std::fmt::Write;

use super::{LayerDocument, MeasurementSeries, SeriesKind};

const TEXT_HEIGHT: f64 = 0.25;

struct Dxf(String);

impl Dxf {
    fn pair(&mut self, code: u16, value: impl std::fmt::Display) {
        let _ = write!(self.0, "{code:>3}\r\n{value}\r\n");
    }

    fn point(&mut self, base: u16, p: [f64; 3]) {
        self.pair(base, p[0]);
        self.pair(base + 10, p[1]);
        self.pair(base + 20, p[2]);
    }
}

fn layer_name(kind: SeriesKind) -> String {
    kind.name().to_ascii_uppercase()
}

/// POLYLINE for linear kinds, a 3DFACE fan for areas, faces of the oriented
/// box for volumes, TEXT for labels and annotations. One DXF layer per kind.
pub fn export_dxf(doc: &LayerDocument) -> Vec<u8> {
    let mut d = Dxf(String::new());
    d.pair(0, "SECTION");
    d.pair(2, "HEADER");
    d.pair(9, "$ACADVER");
    d.pair(1, "AC1009");
    d.pair(0, "ENDSEC");

    d.pair(0, "SECTION");
    d.pair(2, "TABLES");
    d.pair(0, "TABLE");
    d.pair(2, "LAYER");
    d.pair(70, SeriesKind::ALL.len());
    for (i, kind) in SeriesKind::ALL.iter().enumerate() {
        d.pair(0, "LAYER");
        d.pair(2, layer_name(*kind));
        d.pair(70, 0);
        d.pair(62, i + 1);
        d.pair(6, "CONTINUOUS");
    }
    d.pair(0, "ENDTAB");
    d.pair(0, "ENDSEC");

    d.pair(0, "SECTION");
    d.pair(2, "ENTITIES");
    for s in &doc.series {
        entities(&mut d, s);
    }
    d.pair(0, "ENDSEC");
    d.pair(0, "EOF");
    d.0.into_bytes()
}

fn entities(d: &mut Dxf, s: &MeasurementSeries) {
    let layer = layer_name(s.kind);
    let pts: Vec<[f64; 3]> = s.vertices.iter().map(|v| v.position).collect();
    match s.kind {
        SeriesKind::Distance | SeriesKind::Height | SeriesKind::Angle | SeriesKind::Profile => {
            polyline(d, &layer, &pts, false)
        }
        SeriesKind::Polygon => polyline(d, &layer, &pts, true),
        SeriesKind::Area => {
            for i in 1..pts.len().saturating_sub(1) {
                face(d, &layer, [pts[0], pts[i], pts[i + 1], pts[i + 1]]);
            }
        }
        SeriesKind::Volume => {
            if let (Some(c), Some(b)) = (pts.first(), s.box_extent) {
                for f in box_faces(*c, b.extent, b.yaw) {
                    face(d, &layer, f);
                }
            }
        }
        SeriesKind::Annotation => {}
    }
    if let Some(anchor) = pts.first() {
        if !s.label.is_empty() || s.kind == SeriesKind::Annotation {
            text(d, &layer, *anchor, &s.label);
        }
    }
}

fn polyline(d: &mut Dxf, layer: &str, pts: &[[f64; 3]], closed: bool) {
    d.pair(0, "POLYLINE");
    d.pair(8, layer);
    d.pair(66, 1);
    d.point(10, [0.0; 3]);
    d.pair(70, if closed { 9 } else { 8 });
    for p in pts {
        d.pair(0, "VERTEX");
        d.pair(8, layer);
        d.point(10, *p);
        d.pair(70, 32);
    }
    d.pair(0, "SEQEND");
    d.pair(8, layer);
}

fn face(d: &mut Dxf, layer: &str, c: [[f64; 3]; 4]) {
    d.pair(0, "3DFACE");
    d.pair(8, layer);
    for (i, p) in c.iter().enumerate() {
        d.point(10 + i as u16, *p);
    }
}

fn text(d: &mut Dxf, layer: &str, at: [f64; 3], value: &str) {
    let value: String = value
        .chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect();
    d.pair(0, "TEXT");
    d.pair(8, layer);
    d.point(10, at);
    d.pair(40, TEXT_HEIGHT);
    d.pair(1, value);
}

fn box_faces(c: [f64; 3], e: [f64; 3], yaw: f64) -> [[[f64; 3]; 4]; 6] {
    let (s, co) = yaw.sin_cos();
    let corner = |sx: f64, sy: f64, sz: f64| {
        let (x, y) = (sx * e[0] / 2.0, sy * e[1] / 2.0);
        [
            c[0] + co * x - s * y,
            c[1] + s * x + co * y,
            c[2] + sz * e[2] / 2.0,
        ]
    };
    let q = |a: (f64, f64, f64), b: (f64, f64, f64), cc: (f64, f64, f64), dd: (f64, f64, f64)| {
        [
            corner(a.0, a.1, a.2),
            corner(b.0, b.1, b.2),
            corner(cc.0, cc.1, cc.2),
            corner(dd.0, dd.1, dd.2),
        ]
    };
    let (l, h) = (-1.0, 1.0);
    [
        q((l, l, l), (h, l, l), (h, h, l), (l, h, l)),
        q((l, l, h), (h, l, h), (h, h, h), (l, h, h)),
        q((l, l, l), (h, l, l), (h, l, h), (l, l, h)),
        q((l, h, l), (h, h, l), (h, h, h), (l, h, h)),
        q((l, l, l), (l, h, l), (l, h, h), (l, l, h)),
        q((h, l, l), (h, h, l), (h, h, h), (h, l, h)),
    ]
}
