use dermfuse_core::data::{load_dataset, load_manifest, normalize, split, synthetic, PreprocessConfig, SmoothKind, SplitConfig};
use dermfuse_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PLAIN: PreprocessConfig = PreprocessConfig {
    smoothing: SmoothKind::None,
    target: None,
};

#[test]
fn written_dataset_reloads_exactly() {
    for channels in [1, 3] {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = synthetic::write_dataset(dir.path(), 30, channels, 5, 7, 3).unwrap();
        let manifest = load_manifest(&manifest_path).unwrap();
        assert_eq!(manifest.len(), 30);
        let all: Vec<usize> = (0..30).collect();
        let loaded = load_dataset(&manifest, &all, &PLAIN).unwrap();
        assert_eq!(loaded, synthetic::dataset(30, channels, 5, 7, 3));
    }
}

#[test]
fn manifest_split_is_stable_and_class_balanced_enough() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = load_manifest(&synthetic::write_dataset(dir.path(), 200, 3, 8, 8, 42).unwrap()).unwrap();
    let s = split(&manifest, &SplitConfig::default()).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (144, 16, 40));
    let labels = manifest.labels();
    for subset in [&s.train, &s.validation, &s.test] {
        assert!(subset.iter().any(|&i| labels[i] == 0) && subset.iter().any(|&i| labels[i] == 1));
    }
}

#[test]
fn resize_target_reshapes_every_sample() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = load_manifest(&synthetic::write_dataset(dir.path(), 4, 3, 10, 6, 1).unwrap()).unwrap();
    let cfg = PreprocessConfig {
        smoothing: SmoothKind::Median3,
        target: Some((3, 8, 8)),
    };
    let ds = load_dataset(&manifest, &[0, 1, 2, 3], &cfg).unwrap();
    assert!(ds.samples.iter().all(|s| s.pixels.shape() == [3, 8, 8]));
    let wrong = PreprocessConfig {
        target: Some((1, 8, 8)),
        ..cfg
    };
    assert!(load_dataset(&manifest, &[0], &wrong).is_err());
}

#[test]
fn normalize_inverts_within_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let raw = Tensor::from_fn(&[3, 4, 4], |_| rng.gen_range(0..=255) as f32);
        let back = normalize(&raw).unwrap().map(|v| v * 255.0);
        for (a, b) in raw.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
