use daseg::data::{Volume, LABEL_ABSENT};
use daseg::eval::{
    activation_maps, activation_shift, curve_csv, emit_report, export_activations, export_images, fmt2, iou, predict_volume, read_csv,
    read_pgm, table_csv, write_pgm, ActivationMap, CurvePoint, EvalResult, Segmenter,
};
use daseg::nn::{build_unet, UNetConfig};
use daseg::{Exec, Result, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn iou_examples() {
    assert_eq!(iou(&[1, 1, 0], &[1, 1, 0], 1).unwrap(), 1.0);
    assert_eq!(iou(&[1, 1, 0, 0], &[0, 0, 1, 1], 1).unwrap(), 0.0);
    let pred = [1, 1, 1, 1, 0, 0, 0, 0];
    let gt = [0, 0, 1, 1, 1, 1, 0, 0];
    assert!((iou(&pred, &gt, 1).unwrap() - 2.0 / 6.0).abs() < 1e-15);
    assert_eq!(iou(&[0, 0], &[0, 0], 1).unwrap(), 1.0);
    assert!(iou(&[0], &[0, 1], 1).is_err());
}

proptest! {
    #[test]
    fn iou_symmetric_and_permutation_invariant(seed in any::<u64>(), n in 1usize..60) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let b: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        prop_assert_eq!(iou(&a, &b, 1).unwrap(), iou(&b, &a, 1).unwrap());
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.gen_range(0..=i));
        }
        let pa: Vec<u8> = perm.iter().map(|&i| a[i]).collect();
        let pb: Vec<u8> = perm.iter().map(|&i| b[i]).collect();
        prop_assert_eq!(iou(&a, &b, 1).unwrap(), iou(&pa, &pb, 1).unwrap());
        let v = iou(&a, &b, 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }
}

/// Logits fixed per class, independent of the input.
struct ConstantNet(Vec<f64>);

impl Segmenter for ConstantNet {
    fn num_classes(&self) -> usize {
        self.0.len()
    }
    fn spatial_multiple(&self) -> usize {
        4
    }
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = x.dims4()?;
        let c = self.0.len();
        let data = (0..n * c * h * w).map(|i| self.0[(i / (h * w)) % c]).collect();
        Tensor::new(vec![n, c, h, w], data)
    }
}

/// Foreground wherever the input is darker than 0.5, via position-dependent
/// logits so tiling errors would show.
struct ThresholdNet;

impl Segmenter for ThresholdNet {
    fn num_classes(&self) -> usize {
        2
    }
    fn spatial_multiple(&self) -> usize {
        4
    }
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = x.dims4()?;
        let mut out = Vec::with_capacity(n * 2 * h * w);
        for k in 0..n {
            let img = &x.data()[k * h * w..(k + 1) * h * w];
            out.extend(img.iter().map(|&v| v));
            out.extend(img.iter().map(|&v| 1.0 - v));
        }
        Tensor::new(vec![n, 2, h, w], out)
    }
}

fn random_volume(shape: [usize; 3], seed: u64) -> Volume {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| r.gen::<f32>()).collect();
    let labels = data.iter().map(|&v| (v < 0.5) as u8).collect();
    Volume::new(shape, data, Some(labels), [1.0; 3]).unwrap()
}

#[test]
fn constant_stub_gives_constant_volume() {
    let v = random_volume([3, 12, 20], 1);
    for (logits, class) in [(vec![0.0, 1.0], 1u8), (vec![2.0, -1.0], 0u8)] {
        for overlap in [0, 2] {
            let p = predict_volume(&ConstantNet(logits.clone()), &v, [8, 8], overlap, Exec::Sequential).unwrap();
            assert!(p.labels().unwrap().iter().all(|&l| l == class));
        }
    }
    // Equal logits tie to the lower class.
    let p = predict_volume(&ConstantNet(vec![0.5, 0.5]), &v, [4, 4], 0, Exec::Sequential).unwrap();
    assert!(p.labels().unwrap().iter().all(|&l| l == 0));
}

#[test]
fn overlap_does_not_change_uniform_stub() {
    let v = random_volume([2, 16, 16], 2);
    let net = ConstantNet(vec![0.1, 0.3, -0.2]);
    let a = predict_volume(&net, &v, [8, 8], 0, Exec::Sequential).unwrap();
    let b = predict_volume(&net, &v, [8, 8], 4, Exec::Sequential).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tiling_reproduces_pointwise_net() {
    let v = random_volume([2, 13, 22], 3);
    for (tile, overlap) in [([4, 4], 0), ([8, 12], 3), ([12, 20], 6)] {
        let p = predict_volume(&ThresholdNet, &v, tile, overlap, Exec::default()).unwrap();
        assert_eq!(p.labels(), v.labels(), "tile {tile:?} overlap {overlap}");
        let (per, fg) = EvalResult::score(&p, &v, 2).unwrap();
        assert_eq!((per, fg), (vec![100.0, 100.0], 100.0));
    }
}

#[test]
fn single_tile_equals_whole_slice_prediction() {
    let cfg = UNetConfig { levels: 2, input_channels: 1, base_channels: 4, num_classes: 2 };
    let net = build_unet(cfg, 7).unwrap();
    let v = random_volume([2, 8, 8], 4);
    let tiled = predict_volume(&net, &v, [8, 8], 2, Exec::Sequential).unwrap();
    for z in 0..2 {
        let x = Tensor::new(vec![1, 1, 8, 8], v.slice(z).iter().map(|&p| p as f64).collect()).unwrap();
        let logits = net.predict_logits(&x).unwrap();
        let want: Vec<u8> = (0..64).map(|i| (logits.data()[64 + i] > logits.data()[i]) as u8).collect();
        assert_eq!(tiled.label_slice(z).unwrap(), want.as_slice());
    }
    let parallel = predict_volume(&net, &v, [4, 4], 2, Exec::default()).unwrap();
    let sequential = predict_volume(&net, &v, [4, 4], 2, Exec::Sequential).unwrap();
    assert_eq!(parallel, sequential);
}

#[test]
fn tile_contracts() {
    let v = random_volume([1, 8, 8], 5);
    assert!(predict_volume(&ConstantNet(vec![0.0, 1.0]), &v, [12, 8], 0, Exec::Sequential).is_err());
    assert!(predict_volume(&ConstantNet(vec![0.0, 1.0]), &v, [6, 8], 0, Exec::Sequential).is_err());
    assert!(predict_volume(&ConstantNet(vec![0.0, 1.0]), &v, [4, 4], 4, Exec::Sequential).is_err());
}

#[test]
fn score_skips_absent_labels() {
    let truth = Volume::new([1, 1, 4], vec![0.0; 4], Some(vec![1, 0, LABEL_ABSENT, LABEL_ABSENT]), [1.0; 3]).unwrap();
    let pred = Volume::new([1, 1, 4], vec![0.0; 4], Some(vec![1, 0, 1, 1]), [1.0; 3]).unwrap();
    assert_eq!(EvalResult::score(&pred, &truth, 2).unwrap().1, 100.0);
}

fn result(method: &str, dataset: &str, iou: f64) -> EvalResult {
    EvalResult {
        method: method.into(),
        dataset: dataset.into(),
        fraction: 0.0,
        seed: 0,
        config_digest: "x".into(),
        iou_per_class: vec![100.0 - iou, iou],
        foreground_iou: iou,
    }
}

#[test]
fn table_formats_two_decimals() {
    assert_eq!(fmt2(22.51), "22.51");
    assert_eq!(fmt2(8.8251), "8.83");
    let t = table_csv(&[result("Y-NET", "HeLa", 22.51), result("FT", "HeLa", 8.83), result("FT", "Drosophila", 42.0)]);
    assert_eq!(t, "method,HeLa,Drosophila\nY-NET,22.51,\nFT,8.83,42.00\n");
}

#[test]
fn report_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let results = vec![result("FT", "synth", 12.345), result("FT", "synth", 14.0), result("DANN", "synth", 30.5)];
    let written = emit_report(&results, &[], dir.path()).unwrap();
    assert_eq!(written, vec![dir.path().join("table.csv")]);
    let (header, rows) = read_csv(&std::fs::read_to_string(&written[0]).unwrap()).unwrap();
    assert_eq!(header, vec!["method", "synth"]);
    assert_eq!(rows, vec![("FT".to_string(), vec![Some(13.17)]), ("DANN".to_string(), vec![Some(30.5)])]);

    let curves: Vec<CurvePoint> = [(1.0, 80.0), (0.05, 20.0), (0.15, 41.234), (0.5, 70.0)]
        .iter()
        .map(|&(fraction, iou)| CurvePoint { method: "DANN".into(), fraction, iou })
        .collect();
    let written = emit_report(&results, &curves, dir.path()).unwrap();
    assert_eq!(written.len(), 2);
    let text = std::fs::read_to_string(dir.path().join("curve_dann.csv")).unwrap();
    assert_eq!(text, curve_csv(&curves, "DANN"));
    let (header, rows) = read_csv(&text).unwrap();
    assert_eq!(header, vec!["fraction", "iou"]);
    let fractions: Vec<&str> = rows.iter().map(|(f, _)| f.as_str()).collect();
    assert_eq!(fractions, vec!["0.05", "0.15", "0.50", "1.00"]);
    assert_eq!(rows[1].1, vec![Some(41.23)]);
    let again = emit_report(&results, &curves, dir.path()).unwrap();
    assert_eq!(again, written);
}

#[test]
fn pgm_round_trip_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pgm");
    let px: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
    write_pgm(&path, 4, 3, &px).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
    assert_eq!(read_pgm(&path).unwrap(), (4, 3, px));
}

#[test]
fn image_export() {
    let dir = tempfile::tempdir().unwrap();
    let v = random_volume([6, 5, 7], 6);
    let zero = Volume::new([6, 5, 7], vec![0.0; 210], Some(vec![0; 210]), [1.0; 3]).unwrap();
    let files = export_images(&v, &zero, &[0, 5], 2, dir.path()).unwrap();
    assert_eq!(files.len(), 6);
    let (w, h, px) = read_pgm(&dir.path().join("slice000_pred.pgm")).unwrap();
    assert_eq!((w, h), (7, 5));
    assert!(px.iter().all(|&p| p == 0));
    let (_, _, raw) = read_pgm(&dir.path().join("slice005_raw.pgm")).unwrap();
    let want: Vec<u8> = v.slice(5).iter().map(|&x| daseg::eval::quantize(x)).collect();
    assert_eq!(raw, want);
    let (_, _, gt) = read_pgm(&dir.path().join("slice005_gt.pgm")).unwrap();
    assert!(gt.iter().zip(v.label_slice(5).unwrap()).all(|(&g, &l)| g == l * 255));
    assert!(export_images(&v, &zero, &[6], 2, dir.path()).is_err());
}

#[test]
fn activation_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = UNetConfig { levels: 3, input_channels: 1, base_channels: 2, num_classes: 2 };
    let net = build_unet(cfg, 1).unwrap();
    let x = Tensor::uniform(&[1, 1, 8, 8], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let files = export_activations(&net, &x, "src_", dir.path()).unwrap();
    assert_eq!(files.len(), 3 + 2);
    let (w, h, _) = read_pgm(&dir.path().join("src_enc3.pgm")).unwrap();
    assert_eq!((w, h), (2, 2));
    let maps = activation_maps(&net, &x).unwrap();
    let names: Vec<_> = maps.iter().map(|m| m.name.as_str()).collect();
    assert_eq!(names, ["enc1", "enc2", "enc3", "dec1", "dec2"]);
    let flat = ActivationMap { name: "c".into(), height: 2, width: 2, values: vec![0.3; 4] };
    assert_eq!(flat.to_gray(), vec![128; 4]);
}

#[test]
fn activation_shift_matches_maps() {
    let cfg = UNetConfig { levels: 3, input_channels: 1, base_channels: 2, num_classes: 2 };
    let net = build_unet(cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = Tensor::uniform(&[1, 1, 8, 8], 0.0, 1.0, &mut rng);
    let t = Tensor::new(vec![1, 1, 8, 8], s.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    let shift = activation_shift(&net, &s, &t).unwrap();
    let (ms, mt) = (activation_maps(&net, &s).unwrap(), activation_maps(&net, &t).unwrap());
    for ((name, d), (a, b)) in shift.iter().zip(ms.iter().zip(&mt)) {
        assert_eq!(name, &a.name);
        let mut want = 0.0;
        for i in 0..a.values.len() {
            want += (a.values[i] - b.values[i]).abs();
        }
        assert!((d - want / a.values.len() as f64).abs() < 1e-12);
    }
    assert!(activation_shift(&net, &s, &s).unwrap().iter().all(|(_, d)| *d == 0.0));
}

#[test]
fn exports_are_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let v = random_volume([2, 4, 4], 8);
    for d in [a.path(), b.path()] {
        export_images(&v, &v, &[0, 1], 2, d).unwrap();
        emit_report(&[result("FT", "s", 1.0)], &[], d).unwrap();
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in names {
        assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
    }
}
