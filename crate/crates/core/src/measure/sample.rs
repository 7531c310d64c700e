//! Random layer documents for property tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use uuid::Uuid;

use crate::octree::NodeCode;

use super::{
    BoxExtent, Extra, ImportProvenance, LayerDocument, MeasurementSeries, SeriesKind, Vertex3,
};

const LABELS: [&str; 6] = [
    "",
    "wall A",
    "niveau 2",
    "quote \" and \\ slash",
    "tab\there",
    "Δz ≈ 3 m",
];

/// A valid document with up to `max_series` series of every kind, exercising
/// extreme floats, unicode labels and unknown fields at every level.
pub fn random_layer(seed: u64, max_series: usize) -> LayerDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut doc = LayerDocument::new(Uuid::from_u128(rng.gen()), format!("layer {seed}"));
    doc.base_version = rng.gen_range(0..1_000_000);
    for _ in 0..rng.gen_range(0..=3) {
        doc.plane_refs.push(Uuid::from_u128(rng.gen()));
    }
    if rng.gen_bool(0.2) {
        let mut p = ImportProvenance {
            layer_id: Uuid::from_u128(rng.gen()),
            series: Default::default(),
        };
        p.series
            .insert(Uuid::from_u128(rng.gen()), Uuid::from_u128(rng.gen()));
        doc.imported_from = Some(p);
    }
    doc.extra = random_extra(&mut rng);
    let n = rng.gen_range(0..=max_series);
    for _ in 0..n {
        doc.series.push(random_series(&mut rng));
    }
    doc
}

pub fn random_series<R: Rng>(rng: &mut R) -> MeasurementSeries {
    let kind = SeriesKind::ALL[rng.gen_range(0..SeriesKind::ALL.len())];
    let count = match kind.vertex_bounds() {
        (lo, Some(hi)) => rng.gen_range(lo..=hi),
        (lo, None) => rng.gen_range(lo..lo + 6),
    };
    let vertices = (0..count).map(|_| random_vertex(rng)).collect();
    let mut s = MeasurementSeries::new(Uuid::from_u128(rng.gen()), kind, vertices, "surveyor");
    s.label = LABELS[rng.gen_range(0..LABELS.len())].to_string();
    s.color = rng.gen();
    s.version = rng.gen_range(1..u64::MAX / 2);
    if kind == SeriesKind::Profile {
        s.profile_width = Some(rng.gen_range(1e-3..50.0));
    }
    if kind == SeriesKind::Volume {
        s.box_extent = Some(BoxExtent {
            extent: [
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..100.0),
            ],
            yaw: rng.gen_range(-3.2..3.2),
        });
    }
    s.extra = random_extra(rng);
    s
}

fn random_vertex<R: Rng>(rng: &mut R) -> Vertex3 {
    let mut c = || match rng.gen_range(0..5) {
        0 => rng.gen_range(-1e-9..1e-9),
        1 => rng.gen_range(-1e7..1e7),
        2 => f64::from_bits(rng.gen::<u64>() >> 2),
        3 => rng.gen_range(-1000i32..1000) as f64,
        _ => rng.gen::<f64>(),
    };
    let position = [c(), c(), c()];
    let mut v = if rng.gen_bool(0.3) {
        let depth = rng.gen_range(0..6);
        let code = (0..depth).fold(NodeCode::root(), |c, _| c.child(rng.gen_range(0..8)));
        Vertex3::snapped_to(position, code)
    } else {
        Vertex3::free(position)
    };
    if rng.gen_bool(0.1) {
        v.extra = random_extra(rng);
    }
    v
}

fn random_extra<R: Rng>(rng: &mut R) -> Extra {
    let mut e = Extra::new();
    if rng.gen_bool(0.5) {
        return e;
    }
    let pool = [
        ("crs", json!("EPSG:2154")),
        (
            "x-tags",
            json!(["a", "b", {"nested": [1, -2.5, null, true]}]),
        ),
        ("x-source", json!({"scanner": "TLS", "pass": 3})),
        ("x-weight", json!(rng.gen_range(-1e6..1e6))),
        ("x-big", json!(u64::MAX)),
        ("x-neg", json!(i64::MIN)),
    ];
    for (k, v) in pool {
        if rng.gen_bool(0.4) {
            e.insert(k.to_string(), v);
        }
    }
    e.insert(
        format!("x-{}", rng.gen::<u16>()),
        Value::from(rng.gen::<f64>()),
    );
    e
}
