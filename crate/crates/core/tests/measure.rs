//! Measurements against independent oracles: triangle fans, brute-force
//! corridor filters, a third-party DXF reader and the shipped JSON schema.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use cloudatelier_core::measure::{
    export_dxf, random_layer, to_canonical_json, ProfileSample, LAYER_SCHEMA,
};
use cloudatelier_core::octree::{tile_attributes, MemoryIndex};
use cloudatelier_core::{
    build_index, evaluate, export_layer, extract_profile, import_layer, snap, Aabb, BuildConfig,
    IndexManifest, LayerDocument, LayerFormat, MeasureError, Measurement, MeasurementSeries,
    NodeCode, NodeSource, OctreeNode, PointRecord, SeriesKind, SourceFormat, SourceSummary,
    TileSet, Vertex3,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

fn series(kind: SeriesKind, pts: &[[f64; 3]]) -> MeasurementSeries {
    let vs = pts.iter().map(|p| Vertex3::free(*p)).collect();
    MeasurementSeries::new(Uuid::from_u128(1), kind, vs, "t")
}

fn scalar(kind: SeriesKind, pts: &[[f64; 3]]) -> f64 {
    evaluate(&series(kind, pts)).unwrap().scalar().unwrap()
}

fn fan_area(p: &[[f64; 3]]) -> f64 {
    let tri = |a: [f64; 3], b: [f64; 3], c: [f64; 3]| {
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let x = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() / 2.0
    };
    (1..p.len() - 1).map(|i| tri(p[0], p[i], p[i + 1])).sum()
}

/// Rotation from three angles, applied as Rz * Ry * Rx.
fn rotate(p: [f64; 3], a: [f64; 3]) -> [f64; 3] {
    let (sx, cx) = a[0].sin_cos();
    let (sy, cy) = a[1].sin_cos();
    let (sz, cz) = a[2].sin_cos();
    let p = [p[0], cx * p[1] - sx * p[2], sx * p[1] + cx * p[2]];
    let p = [cy * p[0] + sy * p[2], p[1], -sy * p[0] + cy * p[2]];
    [cz * p[0] - sz * p[1], sz * p[0] + cz * p[1], p[2]]
}

/// Star-shaped planar polygon around the origin, so a fan from vertex 0
/// through the center is not required: the polygon is convex.
fn convex_polygon(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    let mut angles: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    let r = rng.gen_range(0.5..20.0);
    angles
        .iter()
        .map(|a| [r * a.cos(), r * a.sin(), 0.0])
        .collect()
}

#[test]
fn planar_area_matches_fan_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let n = rng.gen_range(3..12);
        let rot = [
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        ];
        let shift = [
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
        ];
        let poly: Vec<[f64; 3]> = convex_polygon(&mut rng, n)
            .into_iter()
            .map(|p| {
                let q = rotate(p, rot);
                [q[0] + shift[0], q[1] + shift[1], q[2] + shift[2]]
            })
            .collect();
        let newell = scalar(SeriesKind::Area, &poly);
        assert!(
            (newell - fan_area(&poly)).abs() <= 1e-9,
            "{newell} vs {}",
            fan_area(&poly)
        );
    }
}

#[test]
fn non_planar_quad_diverges_from_fan() {
    let quad = [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 1.0],
        [0.0, 1.0, 0.0],
    ];
    let newell = scalar(SeriesKind::Area, &quad);
    // Newell normal is (-1, -1, 2) / 2 per half, so the magnitude is sqrt(6) / 2
    assert!((newell - 6f64.sqrt() / 2.0).abs() < 1e-12);
    // the fan sums two tilted triangles, each sqrt(2) / 2
    let fan = fan_area(&quad);
    assert!((fan - 2f64.sqrt()).abs() < 1e-12);
    assert!(newell < fan);
}

#[test]
fn area_unit_square_and_reversal() {
    let sq = [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
    ];
    assert_eq!(scalar(SeriesKind::Area, &sq), 1.0);
    let mut rev = sq;
    rev.reverse();
    assert_eq!(scalar(SeriesKind::Area, &rev), 1.0);
}

fn v3() -> impl Strategy<Value = [f64; 3]> {
    [-100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rigid_motion_invariance(
        pts in prop::collection::vec(v3(), 3..8),
        rot in [-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0],
        shift in v3(),
    ) {
        let moved: Vec<[f64; 3]> = pts.iter().map(|p| {
            let q = rotate(*p, rot);
            [q[0] + shift[0], q[1] + shift[1], q[2] + shift[2]]
        }).collect();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs());
        prop_assert!(close(scalar(SeriesKind::Distance, &pts), scalar(SeriesKind::Distance, &moved)));
        prop_assert!(close(scalar(SeriesKind::Area, &pts), scalar(SeriesKind::Area, &moved)));
        let a = evaluate(&series(SeriesKind::Angle, &pts[..3])).unwrap();
        let b = evaluate(&series(SeriesKind::Angle, &moved[..3])).unwrap();
        if let (Measurement::Angle { degrees: a }, Measurement::Angle { degrees: b }) = (a, b) {
            for i in 0..3 {
                prop_assert!((a[i] - b[i]).abs() <= 1e-6, "{a:?} {b:?}");
            }
            prop_assert!((a.iter().sum::<f64>() - 180.0).abs() <= 1e-9);
        }
        let mut rev = pts.clone();
        rev.reverse();
        prop_assert!(close(scalar(SeriesKind::Area, &pts), scalar(SeriesKind::Area, &rev)));
    }

    #[test]
    fn height_invariant_under_z_rotation(p in v3(), q in v3(), yaw in -3.0f64..3.0, shift in v3()) {
        let m = |x: [f64; 3]| {
            let r = rotate(x, [0.0, 0.0, yaw]);
            [r[0] + shift[0], r[1] + shift[1], r[2] + shift[2]]
        };
        let h0 = scalar(SeriesKind::Height, &[p, q]);
        let h1 = scalar(SeriesKind::Height, &[m(p), m(q)]);
        prop_assert!((h0 - h1).abs() <= 1e-9);
    }

    #[test]
    fn json_round_trip_is_identity(seed in any::<u64>()) {
        let doc = random_layer(seed, 12);
        let bytes = export_layer(&doc, LayerFormat::Json);
        let back = import_layer(&bytes, LayerFormat::Json).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(export_layer(&back, LayerFormat::Json), bytes);
    }
}

#[test]
fn exported_documents_validate_against_schema() {
    let schema: serde_json::Value = serde_json::from_str(LAYER_SCHEMA).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let empty = LayerDocument::new(Uuid::from_u128(3), "empty");
    let mut docs = vec![empty];
    docs.extend((0..200).map(|s| random_layer(s, 10)));
    for doc in &docs {
        let v: serde_json::Value =
            serde_json::from_slice(&export_layer(doc, LayerFormat::Json)).unwrap();
        let result = compiled
            .validate(&v)
            .map_err(|errors| errors.map(|e| e.to_string()).collect::<Vec<_>>());
        assert!(result.is_ok(), "{result:?}");
    }
    let mut bad: serde_json::Value =
        serde_json::from_slice(&export_layer(&random_layer(1, 0), LayerFormat::Json)).unwrap();
    bad["series"] = serde_json::json!([{
        "id": Uuid::from_u128(5).to_string(), "kind": "angle", "vertices": [],
        "label": "", "color": [0, 0, 0], "version": 1, "author": "a"
    }]);
    assert!(!compiled.is_valid(&bad));
}

#[test]
fn injected_unknown_field_is_byte_preserved() {
    let doc = random_layer(5, 3);
    let mut v: serde_json::Value =
        serde_json::from_slice(&export_layer(&doc, LayerFormat::Json)).unwrap();
    v["crs"] = "EPSG:2154".into();
    let mut bytes = to_canonical_json(&v);
    bytes.push(b'\n');
    let back = import_layer(&bytes, LayerFormat::Json).unwrap();
    assert_eq!(export_layer(&back, LayerFormat::Json), bytes);
}

#[test]
fn dxf_parses_in_independent_reader() {
    let mut doc = LayerDocument::new(Uuid::from_u128(4), "d");
    let mut poly = series(
        SeriesKind::Polygon,
        &[[0.0, 0.0, 1.0], [4.0, 0.0, 1.5], [2.0, 3.0, 2.0]],
    );
    poly.label = "roof".into();
    doc.series.push(poly);
    let bytes = export_dxf(&doc);
    let drawing = dxf::Drawing::load(&mut bytes.as_slice()).unwrap();
    let polylines: Vec<_> = drawing
        .entities()
        .filter_map(|e| match &e.specific {
            dxf::entities::EntityType::Polyline(p) => Some((e.common.layer.clone(), p)),
            _ => None,
        })
        .collect();
    assert_eq!(polylines.len(), 1);
    let (layer, p) = &polylines[0];
    assert_eq!(layer, "POLYGON");
    let vs: Vec<[f64; 3]> = p
        .vertices()
        .map(|v| [v.location.x, v.location.y, v.location.z])
        .collect();
    assert_eq!(vs, vec![[0.0, 0.0, 1.0], [4.0, 0.0, 1.5], [2.0, 3.0, 2.0]]);
    assert!(p.is_closed());
    let texts: Vec<_> = drawing
        .entities()
        .filter_map(|e| match &e.specific {
            dxf::entities::EntityType::Text(t) => Some(t.value.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(texts, vec!["roof".to_string()]);
}

#[test]
fn dxf_area_fan_and_layers_per_kind() {
    let mut doc = LayerDocument::new(Uuid::from_u128(4), "d");
    let square = [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
    ];
    doc.series.push(series(SeriesKind::Area, &square));
    doc.series.push(series(SeriesKind::Distance, &square[..2]));
    let mut note = series(SeriesKind::Annotation, &square[..1]);
    note.label = "crack".into();
    doc.series.push(note);
    for seed in 0..50 {
        doc.series.extend(random_layer(seed, 4).series);
    }
    let drawing = dxf::Drawing::load(&mut export_dxf(&doc).as_slice()).unwrap();
    let layers: BTreeSet<String> = drawing.layers().map(|l| l.name.clone()).collect();
    for k in SeriesKind::ALL {
        assert!(layers.contains(&k.name().to_ascii_uppercase()));
    }
    let faces: Vec<f64> = drawing
        .entities()
        .filter(|e| e.common.layer == "AREA")
        .filter_map(|e| match &e.specific {
            dxf::entities::EntityType::Face3D(f) => {
                let p = [&f.first_corner, &f.second_corner, &f.third_corner];
                Some(fan_area(&p.map(|c| [c.x, c.y, c.z])))
            }
            _ => None,
        })
        .collect();
    assert_eq!(&faces[..2], &[0.5, 0.5]);
    assert!(drawing.entities().all(|e| layers.contains(&e.common.layer)));
}

fn summary_of(points: &[PointRecord]) -> SourceSummary {
    let mut aabb = Aabb::empty();
    for p in points {
        aabb.extend(p.position());
    }
    SourceSummary {
        point_count: points.len() as u64,
        aabb,
        has_color: false,
        has_intensity: false,
        source_format: SourceFormat::Xyz,
    }
}

fn build_tiles(points: &[PointRecord], dir: &Path) -> TileSet {
    let cfg = BuildConfig {
        node_capacity: 1000,
        ..BuildConfig::default()
    };
    build_index(
        points.iter().copied().map(Ok),
        &summary_of(points),
        dir,
        &cfg,
    )
    .unwrap();
    TileSet::open(dir).unwrap()
}

fn two_node_index(a: PointRecord, b: PointRecord) -> MemoryIndex {
    let aabb = Aabb::new([0.0; 3], [2.0; 3]);
    let (r0, r4) = (NodeCode::root().child(0), NodeCode::root().child(4));
    let node = |code: &NodeCode| OctreeNode {
        code: code.clone(),
        count: 1,
        aabb: code.bounds(&aabb),
        overflow: false,
    };
    let root = OctreeNode {
        code: NodeCode::root(),
        count: 0,
        aabb,
        overflow: false,
    };
    let manifest = IndexManifest {
        version: "1".into(),
        aabb,
        root_spacing: 1.0,
        total_points: 2,
        attributes: tile_attributes(),
        entwine_mode: false,
        nodes: vec![root, node(&r0), node(&r4)],
    };
    MemoryIndex::new(
        manifest,
        HashMap::from([(NodeCode::root(), vec![]), (r4, vec![b]), (r0, vec![a])]),
    )
}

#[test]
fn snap_examples() {
    let a = PointRecord::new(0.5, 0.5, 0.5);
    let b = PointRecord::new(1.5, 0.5, 0.5);
    let idx = two_node_index(a, b);

    let hit = snap([0.5, 0.5, 0.5], 0.1, &idx).unwrap();
    assert!(hit.snapped);
    assert_eq!(hit.position, a.position());
    assert_eq!(hit.snap_node, Some(NodeCode::root().child(0)));

    let near = snap([0.9, 0.5, 0.5], 1.0, &idx).unwrap();
    assert_eq!(near.position, a.position());
    let near = snap([1.1, 0.5, 0.5], 1.0, &idx).unwrap();
    assert_eq!(near.position, b.position());

    // exactly equidistant: the smaller node code wins
    let tie = snap([1.0, 0.5, 0.5], 1.0, &idx).unwrap();
    assert_eq!(tie.snap_node.unwrap().as_str(), "r0");

    let miss = snap([1.0, 0.5, 0.5], 0.2, &idx).unwrap();
    assert_eq!(miss, Vertex3::free([1.0, 0.5, 0.5]));

    assert!(matches!(
        snap([0.0; 3], 0.0, &idx),
        Err(MeasureError::InvalidArgument(_))
    ));
}

#[test]
fn snap_matches_brute_force_over_tiles() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<PointRecord> = (0..20_000)
        .map(|_| {
            PointRecord::new(
                rng.gen_range(0.0..50.0),
                rng.gen_range(0.0..50.0),
                rng.gen_range(0.0..5.0),
            )
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let tiles = build_tiles(&pts, dir.path());
    let stored = tiles.traverse().unwrap();
    for _ in 0..200 {
        let q = [
            rng.gen_range(-1.0..51.0),
            rng.gen_range(-1.0..51.0),
            rng.gen_range(-1.0..6.0),
        ];
        let radius = rng.gen_range(0.05..1.0);
        let got = snap(q, radius, &tiles).unwrap();
        let d2 = |p: [f64; 3]| (0..3).map(|i| (p[i] - q[i]).powi(2)).sum::<f64>();
        let mut in_node: HashMap<&NodeCode, usize> = HashMap::new();
        let best = stored
            .iter()
            .map(|(c, p)| {
                let i = in_node.entry(c).or_default();
                *i += 1;
                (d2(p.position()), c, *i - 1, p.position())
            })
            .filter(|(d, ..)| *d <= radius * radius)
            .min_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then_with(|| a.1.cmp(b.1))
                    .then(a.2.cmp(&b.2))
            });
        match best {
            Some((_, code, _, p)) => {
                assert_eq!(got, Vertex3::snapped_to(p, code.clone()));
            }
            None => assert!(!got.snapped),
        }
    }
}

/// Distance from `p` to segment `ab` in the plane as the minimum over the two
/// endpoints and, when the foot lies inside, the perpendicular distance.
fn brute_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let ends = (p[0] - a[0])
        .hypot(p[1] - a[1])
        .min((p[0] - b[0]).hypot(p[1] - b[1]));
    let along = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / len;
    if (0.0..=len).contains(&along) {
        let perp = ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])).abs() / len;
        ends.min(perp)
    } else {
        ends
    }
}

#[test]
fn profile_matches_brute_force_corridor() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pts: Vec<PointRecord> = (0..10_000)
        .map(|_| {
            PointRecord::new(
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..10.0),
            )
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let tiles = build_tiles(&pts, dir.path());
    let stored = tiles.traverse().unwrap();
    let depth = tiles.manifest().depth();
    for _ in 0..20 {
        let line: Vec<Vertex3> = (0..rng.gen_range(2..5))
            .map(|_| Vertex3::free([rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), 0.0]))
            .collect();
        let width = rng.gen_range(0.5..10.0);
        let got = extract_profile(&line, width, &tiles, depth).unwrap();
        let got_set: BTreeSet<(String, u64, u64)> = got
            .iter()
            .map(|s: &ProfileSample| (s.node.to_string(), s.point.x.to_bits(), s.point.y.to_bits()))
            .collect();
        let expected: BTreeSet<(String, u64, u64)> = stored
            .iter()
            .filter(|(_, p)| {
                line.windows(2).any(|w| {
                    brute_segment_distance(
                        [p.x, p.y],
                        [w[0].position[0], w[0].position[1]],
                        [w[1].position[0], w[1].position[1]],
                    ) <= width / 2.0
                })
            })
            .map(|(c, p)| (c.to_string(), p.x.to_bits(), p.y.to_bits()))
            .collect();
        assert_eq!(got_set, expected);
        assert_eq!(got.len(), expected.len());
        assert!(got.windows(2).all(|w| w[0].mileage <= w[1].mileage));
        for s in &got {
            assert!(s.lateral.abs() <= width / 2.0);
            assert_eq!(s.elevation, s.point.z);
        }
    }
}

#[test]
fn profile_respects_depth_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<PointRecord> = (0..5000)
        .map(|_| PointRecord::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0), 0.0))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let tiles = build_tiles(&pts, dir.path());
    let line = [
        Vertex3::free([0.0, 5.0, 0.0]),
        Vertex3::free([10.0, 5.0, 0.0]),
    ];
    let shallow = extract_profile(&line, 20.0, &tiles, 0).unwrap();
    assert!(shallow.iter().all(|s| s.node.is_root()));
    assert_eq!(shallow.len() as u32, tiles.manifest().nodes[0].count);
    let all = extract_profile(&line, 20.0, &tiles, 64).unwrap();
    assert_eq!(all.len(), pts.len());
}
