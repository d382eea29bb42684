use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use signforge_core::models::{asl_letters, Normalization};
use signforge_dataset::*;

fn write_png(path: &Path, img: &RgbImage) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    img.save(path).unwrap();
}

fn noisy(seed: u32, size: u32) -> RgbImage {
    RgbImage::from_fn(size, size, |x, y| {
        let v = (x * 37 + y * 91 + seed * 13) % 251;
        Rgb([v as u8, (v * 3 % 256) as u8, (255 - v) as u8])
    })
}

fn letter_tree(root: &Path, letters: &[String], per_class: usize) {
    for l in letters {
        for i in 0..per_class {
            write_png(&root.join(l).join(format!("{i:03}.png")), &noisy(i as u32, 8));
        }
    }
}

fn opts(val: ValidationSource) -> ManifestOptions {
    ManifestOptions {
        image_size: [8, 8],
        validation: val,
        seed: 7,
    }
}

#[test]
fn twenty_four_letter_folders() {
    let dir = tempfile::tempdir().unwrap();
    letter_tree(dir.path(), &asl_letters(), 10);
    let m = build_manifest(dir.path(), &opts(ValidationSource::Fraction(0.0))).unwrap();
    assert_eq!(m.samples.len(), 240);
    assert_eq!(m.classes, asl_letters());
    assert!(m.counts().iter().all(|(_, n)| *n == 10));
    let h = class_histogram(&m);
    assert_eq!(h.imbalance_ratio(), 1.0);
    assert_eq!(h.total(), 240);
    assert!(h.to_csv().starts_with("label,count\nA,10\n"));
}

#[test]
fn dynamic_letter_folder_rejected() {
    let dir = tempfile::tempdir().unwrap();
    letter_tree(dir.path(), &["A".into(), "B".into(), "J".into(), "Z".into()], 2);
    match build_manifest(dir.path(), &opts(ValidationSource::Fraction(0.0))) {
        Err(DatasetError::UnknownFolders(f)) => assert_eq!(f, vec!["J".to_string(), "Z".to_string()]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_class_named() {
    let dir = tempfile::tempdir().unwrap();
    letter_tree(dir.path(), &["A".into(), "B".into()], 2);
    fs::create_dir_all(dir.path().join("C")).unwrap();
    match build_manifest(dir.path(), &opts(ValidationSource::Fraction(0.0))) {
        Err(DatasetError::EmptyClass(c)) => assert_eq!(c, "C"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn seeded_fraction_split_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    letter_tree(dir.path(), &["A".into(), "B".into(), "C".into()], 10);
    let a = build_manifest(dir.path(), &opts(ValidationSource::Fraction(0.1))).unwrap();
    let b = build_manifest(dir.path(), &opts(ValidationSource::Fraction(0.1))).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.split_indices(Split::Validation).len(), 3);
    let mut other = opts(ValidationSource::Fraction(0.1));
    other.seed = 8;
    let c = build_manifest(dir.path(), &other).unwrap();
    assert_eq!(c.split_indices(Split::Validation).len(), 3);
}

#[test]
fn explicit_validation_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val) = (dir.path().join("train"), dir.path().join("val"));
    letter_tree(&train, &["A".into(), "B".into()], 4);
    letter_tree(&val, &["A".into(), "B".into()], 2);
    let m = build_manifest(&train, &opts(ValidationSource::Dir(val))).unwrap();
    assert_eq!(m.split_indices(Split::Train).len(), 8);
    assert_eq!(m.split_indices(Split::Validation).len(), 4);
    let path = dir.path().join("out").join("manifest.json");
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    m.save(&path).unwrap();
    let back = DatasetManifest::load(&path).unwrap();
    assert_eq!(back.samples.len(), 12);
    for (a, b) in m.samples.iter().zip(&back.samples) {
        assert_eq!(fs::canonicalize(m.resolve(a)).unwrap(), fs::canonicalize(back.resolve(b)).unwrap());
    }
}

#[test]
fn imbalance_of_two() {
    let dir = tempfile::tempdir().unwrap();
    letter_tree(dir.path(), &["A".into(), "B".into(), "C".into()], 10);
    for i in 10..20 {
        write_png(&dir.path().join("B").join(format!("{i:03}.png")), &noisy(i, 8));
    }
    let m = build_manifest(dir.path(), &opts(ValidationSource::Fraction(0.0))).unwrap();
    let h = class_histogram(&m);
    assert_eq!(h.imbalance_ratio(), 2.0);
    assert!(h.render_bars(20).contains("B | #################### 20"));
}

#[test]
fn black_png_standardizes_to_constant() {
    let dir = tempfile::tempdir().unwrap();
    letter_tree(dir.path(), &["A".into(), "B".into()], 1);
    write_png(&dir.path().join("A").join("000.png"), &RgbImage::new(5, 5));
    let m = build_manifest(dir.path(), &opts(ValidationSource::Fraction(0.0))).unwrap();
    let idx = m.samples.iter().position(|s| s.label == "A").unwrap();
    let norm = Normalization::default();
    let t = load_batch(&m, &[idx], [4, 4], Some(&norm)).unwrap();
    assert_eq!(t.shape(), &[1, 3, 4, 4]);
    assert!(t.data().iter().all(|&v| v == (0.0 - 0.5) / 0.5));
}

#[test]
fn batch_rows_follow_indices() {
    let dir = tempfile::tempdir().unwrap();
    letter_tree(dir.path(), &["A".into(), "B".into()], 3);
    let m = build_manifest(dir.path(), &opts(ValidationSource::Fraction(0.0))).unwrap();
    let norm = Normalization::default();
    let one = load_batch(&m, &[4], [8, 8], Some(&norm)).unwrap();
    let two = load_batch(&m, &[4, 1], [8, 8], Some(&norm)).unwrap();
    assert_eq!(one.data(), &two.data()[..one.len()]);
}

#[test]
fn corrupt_image_error_names_path() {
    let dir = tempfile::tempdir().unwrap();
    letter_tree(dir.path(), &["A".into(), "B".into()], 1);
    let bad = dir.path().join("B").join("000.png");
    fs::write(&bad, b"not a png").unwrap();
    let err = build_manifest(dir.path(), &opts(ValidationSource::Fraction(0.0))).unwrap_err();
    assert!(err.to_string().contains("000.png"), "{err}");
}

#[test]
fn zero_threshold_keeps_everything_and_constant_is_rejected() {
    let samples: Vec<LabeledSample> = [0.0, 3.0, 0.5]
        .iter()
        .enumerate()
        .map(|(i, &q)| LabeledSample {
            path: format!("{i}.png").into(),
            label: "A".into(),
            split: Split::Train,
            quality: q,
        })
        .collect();
    let (kept, rejected) = filter_invalid(samples.clone(), 0.0);
    assert_eq!((kept.len(), rejected.len()), (3, 0));
    let (kept, rejected) = filter_invalid(samples, 0.1);
    assert_eq!(rejected.len(), 1);
    assert_eq!(rejected[0].quality, 0.0);
    assert_eq!(kept.len(), 2);
}

proptest! {
    #[test]
    fn extract_count_law(len in 1usize..80, stride_seed in 0usize..1000) {
        let stride = 1 + stride_seed % len;
        let frames = vec![RgbImage::new(1, 1); len];
        let s = FrameStream::new("p", 30.0, frames).unwrap();
        prop_assert_eq!(extract_frames(&s, stride).unwrap().len(), len.div_ceil(stride));
    }

    #[test]
    fn filter_is_partition(qs in prop::collection::vec(0.0f64..10.0, 0..40), t in 0.0f64..10.0) {
        let samples: Vec<LabeledSample> = qs.iter().enumerate().map(|(i, &q)| LabeledSample {
            path: format!("{i}").into(), label: "A".into(), split: Split::Train, quality: q,
        }).collect();
        let (kept, rejected) = filter_invalid(samples.clone(), t);
        prop_assert!(kept.iter().all(|s| s.quality >= t) && rejected.iter().all(|s| s.quality < t));
        let mut all: Vec<_> = kept.into_iter().chain(rejected).map(|s| s.path).collect();
        all.sort();
        let mut want: Vec<_> = samples.into_iter().map(|s| s.path).collect();
        want.sort();
        prop_assert_eq!(all, want);
    }

    #[test]
    fn histogram_counts_sum(labels in prop::collection::vec(0usize..5, 0..60)) {
        let classes: Vec<String> = ["A", "B", "C", "D", "E"].iter().map(|s| s.to_string()).collect();
        let samples = labels.iter().enumerate().map(|(i, &l)| LabeledSample {
            path: format!("{i}").into(), label: classes[l].clone(), split: Split::Train, quality: 1.0,
        }).collect();
        let m = DatasetManifest::new(classes, [4, 4], samples, Default::default()).unwrap();
        prop_assert_eq!(class_histogram(&m).total(), labels.len());
    }

    #[test]
    fn augmentation_keeps_label_and_finite(seed in 0u64..10_000, label in 0usize..24) {
        let img = Planar::from_rgb(&noisy(seed as u32, 12));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = augment_planar(&img, &AugmentConfig::default(), &mut rng);
        prop_assert!(out.data.iter().all(|v| v.is_finite() && (0.0..=1.0 + 1e-6).contains(v)));
        let (_, l) = augment(&noisy(1, 6), label, &AugmentConfig::default(), &mut rng);
        prop_assert_eq!(l, label);
    }
}
