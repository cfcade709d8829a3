use daseg::data::{
    load_volume, raw_crop, sample_patch_batch, save_volume, save_volume_as, split_x, subset_labels, synth_domain_pair,
    synth_domain_pair_with, Augment, Dtype, PatchSpec, Shift, SynthConfig, Volume, LABEL_ABSENT,
};
use daseg::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_volume(shape: [usize; 3], seed: u64, labeled: bool) -> Volume {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.gen::<f32>()).collect();
    let labels = labeled.then(|| (0..n).map(|_| r.gen_range(0..2u8)).collect());
    Volume::new(shape, data, labels, [10.0, 5.0, 5.0]).unwrap()
}

fn write_header(dir: &std::path::Path, shape: [usize; 3], dtype: &str) -> std::path::PathBuf {
    let p = dir.join("v.json");
    std::fs::write(&p, format!(r#"{{"shape":{shape:?},"dtype":"{dtype}","spacing_nm":[1.0,1.0,1.0]}}"#)).unwrap();
    p
}

#[test]
fn u8_full_scale_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let h = write_header(dir.path(), [2, 2, 2], "u8");
    std::fs::write(dir.path().join("v.raw"), [255u8; 8]).unwrap();
    let v = load_volume(&dir.path().join("v.raw"), &h).unwrap();
    assert!(v.intensities().iter().all(|&x| x == 1.0));
    assert!(!v.has_labels());
}

#[test]
fn short_file_names_expected_size() {
    let dir = tempfile::tempdir().unwrap();
    let h = write_header(dir.path(), [2, 2, 2], "u8");
    std::fs::write(dir.path().join("v.raw"), [0u8; 7]).unwrap();
    match load_volume(&dir.path().join("v.raw"), &h) {
        Err(Error::Format(msg)) => assert!(msg.contains("8 bytes"), "{msg}"),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn unknown_dtype_and_fields_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let h = write_header(dir.path(), [1, 1, 1], "i16");
    std::fs::write(dir.path().join("v.raw"), [0u8; 2]).unwrap();
    assert!(matches!(load_volume(&dir.path().join("v.raw"), &h), Err(Error::Format(_))));
    std::fs::write(&h, r#"{"shape":[1,1,1],"dtype":"u8","spacing_nm":[1,1,1],"extra":1}"#).unwrap();
    assert!(matches!(load_volume(&dir.path().join("v.raw"), &h), Err(Error::Format(_))));
}

#[test]
fn round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let v = random_volume([3, 5, 7], 1, true);
    let (d, h) = (dir.path().join("a.raw"), dir.path().join("a.json"));
    save_volume(&v, &d, &h).unwrap();
    assert_eq!(load_volume(&d, &h).unwrap(), v);
    assert!(dir.path().join("a.labels.raw").exists());
    assert_eq!(std::fs::read(dir.path().join("a.labels.raw")).unwrap(), v.labels().unwrap());
}

#[test]
fn zero_volume_size_and_header_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::new([2, 3, 4], vec![0.0; 24], None, [1.0, 1.0, 1.0]).unwrap();
    save_volume(&v, &dir.path().join("a.raw"), &dir.path().join("a.json")).unwrap();
    save_volume(&v, &dir.path().join("b.raw"), &dir.path().join("b.json")).unwrap();
    assert_eq!(std::fs::metadata(dir.path().join("a.raw")).unwrap().len(), 2 * 3 * 4 * 4);
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let pos: Vec<_> = ["\"shape\"", "\"dtype\"", "\"spacing_nm\""].iter().map(|k| text.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn u8_save_quantizes() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::new([1, 1, 3], vec![0.0, 0.5, 1.0], None, [1.0; 3]).unwrap();
    let (d, h) = (dir.path().join("q.raw"), dir.path().join("q.json"));
    save_volume_as(&v, &d, &h, Dtype::U8).unwrap();
    assert_eq!(std::fs::read(&d).unwrap(), vec![0, 128, 255]);
    assert_eq!(load_volume(&d, &h).unwrap().intensities(), &[0.0, 128.0 / 255.0, 1.0]);
}

#[test]
fn unwritable_path_is_io_error() {
    let v = random_volume([1, 2, 2], 2, false);
    let bad = std::path::Path::new("/nonexistent-dir/x.raw");
    assert!(matches!(save_volume(&v, bad, bad), Err(Error::Io { .. })));
}

#[test]
fn split_examples() {
    let v = random_volume([1, 2, 512], 3, false);
    let (a, b) = split_x(&v, 0.67).unwrap();
    assert_eq!((a.shape()[2], b.shape()[2]), (343, 169));
    let v = random_volume([2, 2, 3], 4, true);
    let (a, b) = split_x(&v, 0.67).unwrap();
    assert_eq!((a.shape()[2], b.shape()[2]), (2, 1));
    for f in [0.0, 1.0, -0.2, 1.5] {
        assert!(split_x(&v, f).is_err());
    }
}

#[test]
fn subset_label_examples() {
    let v = random_volume([20, 4, 4], 5, true);
    assert_eq!(subset_labels(&v, 1.0).unwrap(), v);
    let none = subset_labels(&v, 0.0).unwrap();
    assert!(none.labels().unwrap().iter().all(|&l| l == LABEL_ABSENT));
    assert!(none.labeled_slices().is_empty());
    let s = subset_labels(&v, 0.15).unwrap();
    assert_eq!(s.labeled_slices(), vec![0, 1, 2]);
    // Never fabricates: every retained label equals the input's.
    for (a, b) in s.labels().unwrap().iter().zip(v.labels().unwrap()) {
        assert!(*a == LABEL_ABSENT || a == b);
    }
    let tiny = subset_labels(&random_volume([3, 2, 2], 6, true), 0.2).unwrap();
    assert!(tiny.labeled_slices().is_empty());
    assert!(subset_labels(&random_volume([3, 2, 2], 6, false), 0.5).is_err());
}

fn spec(n: usize, h: usize, w: usize, augment: bool, with_labels: bool) -> PatchSpec {
    PatchSpec { n, height: h, width: w, augment, with_labels }
}

#[test]
fn sampling_is_seeded() {
    let v = random_volume([4, 16, 16], 7, true);
    let s = spec(5, 8, 8, true, true);
    assert_eq!(sample_patch_batch(&v, &s, 11).unwrap(), sample_patch_batch(&v, &s, 11).unwrap());
    assert_ne!(sample_patch_batch(&v, &s, 11).unwrap(), sample_patch_batch(&v, &s, 12).unwrap());
}

#[test]
fn unaugmented_patch_is_raw_crop() {
    let v = random_volume([4, 16, 12], 8, true);
    let b = sample_patch_batch(&v, &spec(6, 8, 4, false, true), 3).unwrap();
    assert_eq!(b.images.shape(), &[6, 1, 8, 4]);
    for (k, p) in b.provenance.iter().enumerate() {
        assert_eq!(p.augment, Augment::IDENTITY);
        let raw: Vec<f64> = raw_crop(&v, p, 8, 4).unwrap().into_iter().map(f64::from).collect();
        assert_eq!(&b.images.data()[k * 32..(k + 1) * 32], raw.as_slice());
        let lab = v.label_slice(p.z).unwrap();
        let want: Vec<usize> = (0..8).flat_map(|r| (0..4).map(move |c| lab[(p.y + r) * 12 + p.x + c] as usize)).collect();
        assert_eq!(&b.labels.as_ref().unwrap()[k * 32..(k + 1) * 32], want.as_slice());
    }
}

#[test]
fn oversized_patch_rejected() {
    let v = random_volume([2, 8, 8], 9, false);
    assert!(sample_patch_batch(&v, &spec(1, 16, 8, false, false), 0).is_err());
    assert!(sample_patch_batch(&v, &spec(1, 8, 8, false, true), 0).is_err());
}

#[test]
fn labeled_sampling_uses_labeled_slices_only() {
    let v = subset_labels(&random_volume([10, 8, 8], 10, true), 0.3).unwrap();
    let b = sample_patch_batch(&v, &spec(200, 4, 4, true, true), 1).unwrap();
    assert!(b.provenance.iter().all(|p| p.z < 3));
    assert!(b.labels.unwrap().iter().all(|&l| l < 2));
    let b = sample_patch_batch(&v, &spec(200, 4, 4, false, false), 1).unwrap();
    assert!(b.labels.is_none());
    assert!(b.provenance.iter().any(|p| p.z >= 3));
}

#[test]
fn origins_are_uniform() {
    // Chi-square over the 5·5·5 = 125 possible origins, 10^5 draws.
    let v = random_volume([5, 6, 6], 11, false);
    let b = sample_patch_batch(&v, &spec(100_000, 2, 2, false, false), 99).unwrap();
    let mut counts = vec![0f64; 125];
    for p in &b.provenance {
        counts[(p.z * 5 + p.y) * 5 + p.x] += 1.0;
    }
    let expected = 100_000.0 / 125.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    // 124 degrees of freedom: the 0.999 quantile is about 176.
    assert!(chi2 < 176.0, "chi2 = {chi2}");
}

#[test]
fn augment_inverse_hand_case() {
    // 2×3 array [[1,2,3],[4,5,6]].
    let a = [1, 2, 3, 4, 5, 6];
    let aug = Augment { flip_h: false, flip_v: false, rot90: 1 };
    assert_eq!(aug.apply(&a, 2, 3), vec![3, 6, 2, 5, 1, 4]);
    let aug = Augment { flip_h: true, flip_v: false, rot90: 0 };
    assert_eq!(aug.apply(&a, 2, 3), vec![3, 2, 1, 6, 5, 4]);
    let aug = Augment { flip_h: false, flip_v: true, rot90: 0 };
    assert_eq!(aug.apply(&a, 2, 3), vec![4, 5, 6, 1, 2, 3]);
}

#[test]
fn synth_examples() {
    let pair = synth_domain_pair(3, Shift::Invert);
    let truth = pair.target_labeled();
    for v in [pair.source(), &truth] {
        let fg = v.labels().unwrap().iter().filter(|&&l| l == 1).count() as f64 / v.len() as f64;
        assert!((0.05..=0.30).contains(&fg), "foreground fraction {fg}");
    }
    let (ms, mt) = (pair.source().mean_intensity(), pair.target_images().mean_intensity());
    assert!((mt - (1.0 - ms)).abs() < 0.02, "source {ms} target {mt}");
    assert!(pair.target_images().labels().is_none());

    for shift in Shift::ALL {
        let a = synth_domain_pair(5, shift);
        let b = synth_domain_pair(5, shift);
        assert_eq!(a.source(), b.source());
        assert_eq!(a.target_labeled(), b.target_labeled());
        assert_eq!(shift.name().parse::<Shift>().unwrap(), shift);
    }
    assert!(matches!("sepia".parse::<Shift>(), Err(Error::Config(m)) if m.contains("invert")));
}

#[test]
fn domain_pair_counts_target_access() {
    let cfg = SynthConfig { shape: [4, 16, 16], ..SynthConfig::default() };
    let pair = synth_domain_pair_with(1, Shift::ContrastNoise, &cfg).unwrap();
    assert_eq!((pair.target_image_reads(), pair.target_label_reads()), (0, 0));
    let _ = pair.target_images();
    let _ = pair.target_labeled();
    assert_eq!((pair.target_image_reads(), pair.target_label_reads()), (1, 1));
    let (train, test) = pair.split_x(0.67).unwrap();
    assert_eq!(train.source().shape(), [4, 16, 10]);
    assert_eq!(test.target_images().shape(), [4, 16, 6]);
    assert_eq!(train.target_label_reads(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_partitions(z in 1usize..4, y in 1usize..5, x in 2usize..40, f in 0.05f64..0.95, seed in any::<u64>()) {
        let v = random_volume([z, y, x], seed, seed % 2 == 0);
        if let Ok((a, b)) = split_x(&v, f) {
            prop_assert_eq!(a.len() + b.len(), v.len());
            prop_assert_eq!(a.shape()[2], (f * x as f64).floor() as usize);
            prop_assert_eq!(a.concat_x(&b).unwrap(), v);
        } else {
            prop_assert!((f * x as f64).floor() < 1.0);
        }
    }

    #[test]
    fn augmentation_inverts_to_raw_crop(seed in any::<u64>(), square in any::<bool>()) {
        let v = random_volume([3, 12, 12], seed, false);
        let (h, w) = if square { (4, 4) } else { (4, 6) };
        let b = sample_patch_batch(&v, &spec(8, h, w, true, false), seed).unwrap();
        for (k, p) in b.provenance.iter().enumerate() {
            let patch = &b.images.data()[k * h * w..(k + 1) * h * w];
            let (oh, ow) = p.augment.out_dims(h, w);
            prop_assert_eq!((oh, ow), (h, w));
            let back = p.augment.invert(patch, h, w);
            let raw: Vec<f64> = raw_crop(&v, p, h, w).unwrap().into_iter().map(f64::from).collect();
            prop_assert_eq!(back, raw);
        }
    }

    #[test]
    fn augment_round_trip_any_shape(h in 1usize..6, w in 1usize..6, fh in any::<bool>(), fv in any::<bool>(), r in 0u8..4) {
        let a: Vec<usize> = (0..h * w).collect();
        let aug = Augment { flip_h: fh, flip_v: fv, rot90: r };
        prop_assert_eq!(aug.invert(&aug.apply(&a, h, w), h, w), a);
    }
}
