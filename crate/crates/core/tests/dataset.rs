use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synthforge::dataset::{
    expand_dataset, load_dataset, random_affine, write_dataset, write_png, AugmentConfig, Dataset, DatasetError,
    ImageRecord, ImageTensor, Source,
};

fn pattern(side: usize, seed: usize) -> ImageTensor {
    let data = (0..3 * side * side).map(|i| (((i * 7 + seed * 13) % 255) as f32 / 127.5) - 1.0).collect();
    ImageTensor::new(3, side, side, data)
}

fn write_class(root: &Path, label: &str, n: usize, side: usize) {
    let dir = root.join(label);
    fs::create_dir_all(&dir).unwrap();
    for i in 0..n {
        write_png(&dir.join(format!("img_{i:03}.png")), &pattern(side, i)).unwrap();
    }
}

fn toy(counts: &[(&str, usize)], side: usize) -> Dataset {
    let mut records = Vec::new();
    for (label, n) in counts {
        for i in 0..*n {
            records.push(ImageRecord {
                class_label: label.to_string(),
                pixels: pattern(side, i),
                source: Source::Synthetic(format!("{label}{i}")),
            });
        }
    }
    Dataset::from_records(records).unwrap()
}

#[test]
fn loads_labels_sorted_by_class_then_file() {
    let dir = tempfile::tempdir().unwrap();
    write_class(dir.path(), "G2", 1, 8);
    write_class(dir.path(), "G1", 2, 8);
    fs::write(dir.path().join("G1/notes.txt"), "ignored").unwrap();
    let ds = load_dataset(dir.path(), 8).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.class_counts(), BTreeMap::from([("G1".to_string(), 2), ("G2".to_string(), 1)]));
    let names: Vec<String> = ds.records().iter().map(|r| format!("{}/{}", r.class_label, r.source.file_name())).collect();
    assert_eq!(names, ["G1/img_000.png", "G1/img_001.png", "G2/img_000.png"]);
    assert!(ds.records().iter().all(|r| r.pixels.in_range()));
    assert_eq!(ds.records()[0].pixels, pattern(8, 0));
}

#[test]
fn corpus_of_185_expands_to_700() {
    let dir = tempfile::tempdir().unwrap();
    for (label, n) in [("G1", 62), ("G2", 62), ("G3", 61)] {
        write_class(dir.path(), label, n, 64);
    }
    let ds = load_dataset(dir.path(), 64).unwrap();
    assert_eq!(ds.len(), 185);
    assert_eq!(ds.class_index().len(), 3);

    let out = expand_dataset(&ds, 700, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.len(), 700);
    assert_eq!(&out.records()[..185], ds.records());
    for (label, n) in out.class_counts() {
        let share = 700.0 * ds.class_counts()[&label] as f64 / 185.0;
        assert!((n as f64 - share).abs() <= 1.0, "{label}: {n} vs {share}");
    }

    let written = write_dataset(&out, &dir.path().join("expanded")).unwrap();
    assert_eq!(written.len(), 700);
    assert!(dir.path().join("expanded/G1/img_000_aug1.png").is_file());
    assert_eq!(load_dataset(&dir.path().join("expanded"), 64).unwrap().len(), 700);
}

#[test]
fn load_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(&dir.path().join("nope"), 64), Err(DatasetError::MissingRoot(_))));
    assert!(matches!(load_dataset(dir.path(), 64), Err(DatasetError::EmptyDataset(_))));
    fs::create_dir(dir.path().join("A")).unwrap();
    assert!(matches!(load_dataset(dir.path(), 64), Err(DatasetError::EmptyDataset(_))));

    write_class(dir.path(), "A", 1, 32);
    match load_dataset(dir.path(), 64) {
        Err(DatasetError::ResolutionMismatch { got_w: 32, got_h: 32, expected: 64, .. }) => {}
        other => panic!("{other:?}"),
    }

    fs::write(dir.path().join("A/broken.png"), b"not a png").unwrap();
    match load_dataset(dir.path(), 32) {
        Err(DatasetError::UnreadableImage { path, .. }) => assert!(path.ends_with("A/broken.png")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn round_robin_over_equal_classes() {
    let ds = toy(&[("A", 4), ("B", 4), ("C", 4)], 4);
    let out = expand_dataset(&ds, 24, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for n in out.class_counts().values() {
        assert!((7..=9).contains(n));
    }
    // Each class gets 4 extra copies, one per original, in order.
    let parents: Vec<(String, usize)> = out.records()[12..]
        .iter()
        .map(|r| match &r.source {
            Source::Augmented { parent, copy } => (parent.file_name(), *copy),
            s => panic!("{s:?}"),
        })
        .collect();
    let expected: Vec<(String, usize)> =
        ["A", "B", "C"].iter().flat_map(|c| (0..4).map(move |i| (format!("{c}{i}.png"), 1))).collect();
    assert_eq!(parents, expected);
}

#[test]
fn copies_cycle_when_target_exceeds_twice_the_class() {
    let ds = toy(&[("A", 2)], 4);
    let out = expand_dataset(&ds, 7, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let names: Vec<String> = out.records().iter().map(|r| r.source.file_name()).collect();
    assert_eq!(names, ["A0.png", "A1.png", "A0_aug1.png", "A1_aug1.png", "A0_aug2.png", "A1_aug2.png", "A0_aug3.png"]);
}

#[test]
fn target_bounds() {
    let ds = toy(&[("A", 3), ("B", 2)], 4);
    let same = expand_dataset(&ds, 5, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(same, ds);
    assert!(matches!(
        expand_dataset(&ds, 4, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)),
        Err(DatasetError::TargetTooSmall { target: 4, size: 5 })
    ));
}

#[test]
fn class_filter_and_batch() {
    let ds = toy(&[("A", 2), ("B", 3)], 4);
    let b = ds.filter_class("B").unwrap();
    assert_eq!(b.len(), 3);
    assert!(ds.filter_class("Z").is_none());
    let t = ds.batch(&[4, 0]);
    assert_eq!(t.shape(), [2, 3, 4, 4]);
    assert_eq!(&t.data()[..48], ds.records()[4].pixels.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmentation_keeps_shape_label_and_range(seed in any::<u64>(), side in 3usize..12, p in 0.0f64..=1.0) {
        let rec = ImageRecord { class_label: "G2".into(), pixels: pattern(side, 3), source: Source::Synthetic("x".into()) };
        let cfg = AugmentConfig { p_rotate: p, p_translate: p, p_scale: p, rotate_degrees: 180.0, translate_fraction: 0.5, scale_range: (0.5, 2.0), ..Default::default() };
        let out = random_affine(&rec, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&out.class_label, "G2");
        prop_assert_eq!((out.pixels.channels(), out.pixels.height(), out.pixels.width()), (3, side, side));
        prop_assert!(out.pixels.in_range());
    }

    #[test]
    fn zero_probability_is_bit_identical(seed in any::<u64>(), side in 1usize..10) {
        let rec = ImageRecord { class_label: "A".into(), pixels: pattern(side, 5), source: Source::Synthetic("x".into()) };
        let out = random_affine(&rec, &AugmentConfig::identity(), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(out.pixels.data(), rec.pixels.data());
    }

    #[test]
    fn expansion_is_exact_proportional_and_reproducible(
        counts in prop::collection::vec(1usize..7, 1..5),
        extra in 0usize..30,
        seed in any::<u64>(),
    ) {
        let labels: Vec<String> = (0..counts.len()).map(|i| format!("c{i}")).collect();
        let spec: Vec<(&str, usize)> = labels.iter().map(String::as_str).zip(counts.iter().copied()).collect();
        let ds = toy(&spec, 3);
        let target = ds.len() + extra;
        let cfg = AugmentConfig::default();
        let a = expand_dataset(&ds, target, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = expand_dataset(&ds, target, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), target);
        prop_assert_eq!(&a.records()[..ds.len()], ds.records());
        for (label, n) in a.class_counts() {
            let share = target as f64 * ds.class_counts()[&label] as f64 / ds.len() as f64;
            prop_assert!((n as f64 - share).abs() <= 1.0, "{} has {} records, share {}", label, n, share);
        }
    }
}
