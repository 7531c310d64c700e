//! Ingest checked against the `las` crate as an independent reader/writer.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::Path;

use cloudatelier_core::{open_source, Aabb, IngestError, PointRecord, Source, SourceFormat};
use las::point::Format;
use las::{Builder, Color, Transform, Vector, Write as _, Writer};
use proptest::prelude::*;

fn write_las(
    path: &Path,
    version: (u8, u8),
    format: u8,
    scale: f64,
    offset: [f64; 3],
    points: &[PointRecord],
    wide_color: bool,
) {
    let mut builder = Builder::from(version);
    builder.point_format = Format::new(format).unwrap();
    builder.transforms = Vector {
        x: Transform {
            scale,
            offset: offset[0],
        },
        y: Transform {
            scale,
            offset: offset[1],
        },
        z: Transform {
            scale,
            offset: offset[2],
        },
    };
    let header = builder.into_header().unwrap();
    let mut w = Writer::from_path(path, header).unwrap();
    for p in points {
        let widen = |c: u8| {
            if wide_color {
                (c as u16) << 8
            } else {
                c as u16
            }
        };
        let fmt = Format::new(format).unwrap();
        w.write(las::Point {
            x: p.x,
            y: p.y,
            z: p.z,
            intensity: p.intensity,
            classification: las::point::Classification::new(p.classification).unwrap(),
            gps_time: fmt.has_gps_time.then_some(0.0),
            color: fmt
                .has_color
                .then(|| Color::new(widen(p.r), widen(p.g), widen(p.b))),
            ..Default::default()
        })
        .unwrap();
    }
    w.close().unwrap();
}

#[test]
fn scale_and_offset_are_applied() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.las");
    write_las(
        &path,
        (1, 2),
        0,
        0.01,
        [100.0, 0.0, 0.0],
        &[PointRecord::new(102.5, 0.0, 0.0)],
        false,
    );
    // the oracle stored raw X = 250
    let bytes = fs::read(&path).unwrap();
    let offset = u32::from_le_bytes(bytes[96..100].try_into().unwrap()) as usize;
    assert_eq!(
        i32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()),
        250
    );

    let (stream, summary) = open_source(&path).unwrap();
    let pts: Vec<_> = stream.collect::<Result<_, _>>().unwrap();
    assert_eq!(summary.source_format, SourceFormat::Las);
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0].position(), [102.5, 0.0, 0.0]);
}

#[test]
fn agrees_with_independent_reader_for_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let mut k = 0;
    for version in [(1, 2), (1, 3), (1, 4)] {
        for format in 0..=3u8 {
            for wide in [false, true] {
                let src: Vec<PointRecord> = (0..300)
                    .map(|i| {
                        let f = i as f64;
                        let mut p = PointRecord::new(1000.0 + f * 0.37, -20.0 + f * 0.011, f.sin())
                            .with_color((i % 256) as u8, (i * 7 % 256) as u8, 255);
                        p.intensity = (i * 131 % 65536) as u16;
                        p.classification = [1u8, 2, 3, 5, 6, 9, 17, 18][i % 8];
                        p
                    })
                    .collect();
                let path = dir.path().join(format!("f{k}.las"));
                k += 1;
                write_las(
                    &path,
                    version,
                    format,
                    0.001,
                    [1000.0, 0.0, 0.0],
                    &src,
                    wide,
                );

                let mut oracle = las::Reader::from_path(&path).unwrap();
                let expected: Vec<las::Point> =
                    las::Read::points(&mut oracle).map(|p| p.unwrap()).collect();
                let (stream, summary) = open_source(&path).unwrap();
                let got: Vec<_> = stream.collect::<Result<_, _>>().unwrap();
                assert_eq!(got.len(), expected.len());
                assert_eq!(summary.point_count, 300);
                assert_eq!(summary.has_color, format >= 2);
                for (g, e) in got.iter().zip(&expected) {
                    assert_eq!(g.position(), [e.x, e.y, e.z]);
                    assert_eq!(g.intensity, e.intensity);
                    assert_eq!(g.classification, u8::from(e.classification));
                    if let Some(c) = e.color {
                        let shift = if wide { 8 } else { 0 };
                        assert_eq!(
                            (g.r, g.g, g.b),
                            (
                                (c.red >> shift) as u8,
                                (c.green >> shift) as u8,
                                (c.blue >> shift) as u8
                            )
                        );
                    } else {
                        assert_eq!((g.r, g.g, g.b), (128, 128, 128));
                    }
                }
                for (g, s) in got.iter().zip(&src) {
                    for i in 0..3 {
                        assert!((g.position()[i] - s.position()[i]).abs() <= 0.5 * 0.001 + 1e-9);
                    }
                    if format >= 2 {
                        assert_eq!((g.r, g.g, g.b), (s.r, s.g, s.b));
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn las_round_trip_within_one_quantum(
        coords in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4, -100f64..100.0), 1..200),
        scale in prop::sample::select(vec![0.1f64, 0.01, 0.001]),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.las");
        let src: Vec<_> = coords.iter().map(|c| PointRecord::new(c.0, c.1, c.2)).collect();
        write_las(&path, (1, 2), 1, scale, [0.0; 3], &src, false);
        let source = Source::new(&path).unwrap();
        let first: Vec<_> = source.stream().unwrap().collect::<Result<_, _>>().unwrap();
        let second: Vec<_> = source.stream().unwrap().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(&first, &second);
        let summary = source.summarize().unwrap();
        for (g, s) in first.iter().zip(&src) {
            for i in 0..3 {
                prop_assert!((g.position()[i] - s.position()[i]).abs() <= 0.5 * scale * (1.0 + 1e-9));
            }
        }
        // tight bounds: every face is attained
        for i in 0..3 {
            prop_assert!(first.iter().any(|p| p.position()[i] == summary.aabb.min[i]));
            prop_assert!(first.iter().any(|p| p.position()[i] == summary.aabb.max[i]));
        }
    }

    #[test]
    fn xyz_summary_is_tight(coords in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3), 1..100)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.xyz");
        let mut f = File::create(&path).unwrap();
        for c in &coords {
            writeln!(f, "{} {} {}", c.0, c.1, c.2).unwrap();
        }
        drop(f);
        let (stream, summary) = open_source(&path).unwrap();
        let pts: Vec<_> = stream.collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(pts.len() as u64, summary.point_count);
        let mut b = Aabb::empty();
        for c in &coords {
            b.extend([c.0, c.1, c.2]);
        }
        prop_assert_eq!(summary.aabb, b);
    }
}

#[test]
fn truncated_las_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.las");
    let src = vec![PointRecord::new(1.0, 2.0, 3.0); 10];
    write_las(&path, (1, 2), 0, 0.01, [0.0; 3], &src, false);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(
        open_source(&path).map(|_| ()),
        Err(IngestError::CorruptHeader(_))
    ));
}

#[test]
fn missing_file_is_io() {
    let err = open_source("/nonexistent/missing.las")
        .map(|_| ())
        .unwrap_err();
    assert_eq!(err.code(), "IO");
}
