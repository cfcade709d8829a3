use daseg::nn::{
    attach_reconstruction_decoder, build_unet, strip_reconstruction_decoder, DomainClassifier, Heads, SegNet,
    UNetConfig,
};
use daseg::{ConvSpec, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(levels: usize, base: usize) -> UNetConfig {
    UNetConfig { levels, input_channels: 1, base_channels: base, num_classes: 2 }
}

fn rand_input(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Hand-derived parameter count of the segmentation network.
fn seg_param_count(c: &UNetConfig) -> usize {
    let ch = |i: usize| c.base_channels << (i - 1);
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let mut total = 0;
    let mut cin = c.input_channels;
    for i in 1..=c.levels {
        total += conv(cin, ch(i), 3) + conv(ch(i), ch(i), 3);
        cin = ch(i);
    }
    for i in 1..c.levels {
        total += conv(ch(i + 1), ch(i), 2) + conv(2 * ch(i), ch(i), 3) + conv(ch(i), ch(i), 3);
    }
    total + conv(ch(1), c.num_classes, 1)
}

fn recon_param_count(c: &UNetConfig) -> usize {
    let ch = |i: usize| c.base_channels << (i - 1);
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    (1..c.levels).map(|i| conv(ch(i + 1), ch(i), 2) + 2 * conv(ch(i), ch(i), 3)).sum::<usize>()
        + conv(ch(1), c.input_channels, 1)
}

#[test]
fn parameter_count_matches_closed_form() {
    let c = cfg(3, 8);
    let net = build_unet(c, 0).unwrap();
    assert_eq!(seg_param_count(&c), 29_330);
    assert_eq!(net.params().num_scalars(), 29_330);
    let y = attach_reconstruction_decoder(&net, 1).unwrap();
    assert_eq!(recon_param_count(&c), 8_401);
    assert_eq!(y.params().num_scalars(), 29_330 + 8_401);
    let stripped = strip_reconstruction_decoder(&y).unwrap();
    assert_eq!(y.params().num_scalars() - stripped.params().num_scalars(), recon_param_count(&c));
}

#[test]
fn initialization_is_seed_deterministic() {
    let a = build_unet(cfg(3, 4), 42).unwrap();
    let b = build_unet(cfg(3, 4), 42).unwrap();
    let c = build_unet(cfg(3, 4), 43).unwrap();
    let bytes = |n: &SegNet| {
        n.params().iter().flat_map(|(_, t)| t.data().iter().flat_map(|v| v.to_le_bytes())).collect::<Vec<u8>>()
    };
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn feature_extents_halve_per_level() {
    let net = build_unet(cfg(3, 2), 0).unwrap();
    let tape = Tape::new();
    let b = net.bind(&tape);
    let out = net.forward(&b, tape.constant(rand_input(&[2, 1, 16, 16], 1))).unwrap();
    let spatial: Vec<Vec<usize>> = out.encoder_features.iter().map(|f| f.shape()[2..].to_vec()).collect();
    assert_eq!(spatial, vec![vec![16, 16], vec![8, 8], vec![4, 4]]);
    let channels: Vec<usize> = out.encoder_features.iter().map(|f| f.shape()[1]).collect();
    assert_eq!(channels, vec![2, 4, 8]);
    let dec: Vec<Vec<usize>> = out.decoder_features.iter().map(|f| f.shape()).collect();
    assert_eq!(dec, vec![vec![2, 2, 16, 16], vec![2, 4, 8, 8]]);
    assert_eq!(out.logits.unwrap().shape(), vec![2, 2, 16, 16]);
    assert!(out.reconstruction.is_none());
}

#[test]
fn zero_head_gives_zero_logits() {
    let mut net = build_unet(cfg(2, 2), 0).unwrap();
    net.params_mut().set("head.w", Tensor::zeros(&[2, 2, 1, 1])).unwrap();
    let logits = net.predict_logits(&rand_input(&[1, 1, 8, 8], 3)).unwrap();
    assert!(logits.data().iter().all(|&v| v == 0.0));
}

/// Independent composition of the same graph from tensor-core ops, with an
/// optional override that replaces the skip input of one decoder level.
fn oracle_logits(net: &SegNet, x: &Tensor, zero_skip: Option<usize>) -> Tensor {
    let tape = Tape::new();
    oracle_on(&tape, net, x, zero_skip)
}

fn oracle_on<'t>(tape: &'t Tape, net: &SegNet, x: &Tensor, zero_skip: Option<usize>) -> Tensor {
    let p = |name: &str| -> Var<'t> { tape.constant(net.params().get(name).unwrap().clone()) };
    let c = net.config();
    let ch = |i: usize| c.base_channels << (i - 1);
    let conv = |h: Var<'t>, name: &str, cin: usize, cout: usize, k: usize| -> Var<'t> {
        h.conv2d(p(&format!("{name}.w")), p(&format!("{name}.b")), &ConvSpec::same(k, cin, cout)).unwrap()
    };
    let mut h = tape.constant(x.clone());
    let mut feats = vec![];
    let mut cin = 1;
    for i in 1..=c.levels {
        if i > 1 {
            h = h.max_pool2d().unwrap();
        }
        h = conv(h, &format!("enc{i}.conv1"), cin, ch(i), 3).relu().unwrap();
        h = conv(h, &format!("enc{i}.conv2"), ch(i), ch(i), 3).relu().unwrap();
        feats.push(h);
        cin = ch(i);
    }
    for i in (1..c.levels).rev() {
        let up = h
            .up_conv2d(p(&format!("dec{i}.up.w")), Some(p(&format!("dec{i}.up.b"))), &ConvSpec::up2(ch(i + 1), ch(i)))
            .unwrap();
        let skip = if zero_skip == Some(i) {
            tape.constant(Tensor::zeros(&feats[i - 1].shape()))
        } else {
            feats[i - 1]
        };
        h = conv(skip.concat_channels(up).unwrap(), &format!("dec{i}.conv1"), 2 * ch(i), ch(i), 3).relu().unwrap();
        h = conv(h, &format!("dec{i}.conv2"), ch(i), ch(i), 3).relu().unwrap();
    }
    let out = conv(h, "head", ch(1), c.num_classes, 1);
    (*out.value()).clone()
}

#[test]
fn forward_matches_compositional_oracle() {
    let net = build_unet(cfg(3, 3), 9).unwrap();
    let x = rand_input(&[2, 1, 8, 12], 10);
    let got = net.predict_logits(&x).unwrap();
    assert_eq!(got, oracle_logits(&net, &x, None));
}

#[test]
fn skips_are_live() {
    let net = build_unet(cfg(3, 3), 11).unwrap();
    let x = rand_input(&[1, 1, 8, 8], 12);
    let base = oracle_logits(&net, &x, None);
    for level in 1..3 {
        let cut = oracle_logits(&net, &x, Some(level));
        assert!(base.max_abs_diff(&cut) > 1e-6, "zeroing skip {level} had no effect");
    }
}

#[test]
fn reconstruction_decoder_is_non_interfering() {
    let net = build_unet(cfg(3, 2), 5).unwrap();
    let y = attach_reconstruction_decoder(&net, 6).unwrap();
    let x = rand_input(&[2, 1, 8, 8], 7);
    assert_eq!(net.predict_logits(&x).unwrap(), y.predict_logits(&x).unwrap());

    let tape = Tape::new();
    let b = y.bind(&tape);
    let xv = tape.constant(x.clone());
    let out = y.forward(&b, xv).unwrap();
    assert_eq!(out.reconstruction.unwrap().shape(), x.shape());

    let stripped = strip_reconstruction_decoder(&y).unwrap();
    assert_eq!(stripped.predict_logits(&x).unwrap(), y.predict_logits(&x).unwrap());
}

#[test]
fn decoders_are_gradient_separated() {
    let y = attach_reconstruction_decoder(&build_unet(cfg(3, 2), 1).unwrap(), 2).unwrap();
    let x = rand_input(&[2, 1, 8, 8], 3);
    let labels: Vec<usize> = (0..128).map(|i| (i / 3) % 2).collect();

    let tape = Tape::new();
    let b = y.bind(&tape);
    let xv = tape.constant(x.clone());
    let out = y.forward(&b, xv).unwrap();
    let recon_loss = out.reconstruction.unwrap().mse(xv).unwrap();
    let grads = tape.backward(recon_loss).unwrap();
    let names = y.params().names();
    for (name, g) in names.iter().zip(b.gradients(&grads)) {
        let is_seg_decoder = name.starts_with("dec") || name.starts_with("head");
        if is_seg_decoder {
            assert!(g.data().iter().all(|&v| v == 0.0), "{name} got reconstruction gradient");
        }
    }
    let enc_grad: f64 = names
        .iter()
        .zip(b.gradients(&grads))
        .filter(|(n, _)| n.starts_with("enc"))
        .map(|(_, g)| g.data().iter().map(|v| v.abs()).sum::<f64>())
        .sum();
    assert!(enc_grad > 0.0);

    let tape = Tape::new();
    let b = y.bind(&tape);
    let out = y.forward(&b, tape.constant(x)).unwrap();
    let seg_loss = out.logits.unwrap().softmax_cross_entropy(&labels).unwrap();
    let grads = tape.backward(seg_loss).unwrap();
    for (name, g) in names.iter().zip(b.gradients(&grads)) {
        if name.starts_with("recon.") {
            assert!(g.data().iter().all(|&v| v == 0.0), "{name} got segmentation gradient");
        }
    }
}

#[test]
fn encoder_only_forward_skips_heads() {
    let y = attach_reconstruction_decoder(&build_unet(cfg(2, 2), 1).unwrap(), 2).unwrap();
    let tape = Tape::new();
    let b = y.bind(&tape);
    let out = y.forward_heads(&b, tape.constant(rand_input(&[1, 1, 4, 4], 0)), Heads::ENCODER).unwrap();
    assert!(out.logits.is_none() && out.reconstruction.is_none());
    assert_eq!(out.encoder_features.len(), 2);
    assert!(out.logits().is_err());
}

#[test]
fn grl_scales_any_graph_gradient() {
    let net = build_unet(cfg(2, 2), 4).unwrap();
    let x = rand_input(&[1, 1, 4, 4], 5);
    let grad = |lambda: Option<f64>| {
        let tape = Tape::new();
        let b = net.bind(&tape);
        let xv = tape.param(x.clone());
        let input = match lambda {
            Some(l) => xv.grl(l).unwrap(),
            None => xv,
        };
        let out = net.forward(&b, input).unwrap();
        let loss = out.logits.unwrap().sum().unwrap();
        tape.backward(loss).unwrap().get_or_zeros(xv)
    };
    let plain = grad(None);
    for lambda in [0.0, 0.3, 1.0, 2.5] {
        let reversed = grad(Some(lambda));
        for (r, p) in reversed.data().iter().zip(plain.data()) {
            assert_eq!(*r, -lambda * p);
        }
    }
}

#[test]
fn domain_classifier_examples() {
    let clf = DomainClassifier::new(2, 3, 5, 8).unwrap();
    let tape = Tape::new();
    let b = clf.bind(&tape);
    let f = tape.constant(Tensor::full(&[2, 3, 4, 4], 0.25));
    let pooled = f.global_avg_pool().unwrap();
    assert!(pooled.value().data().iter().all(|&v| v == 0.25));
    assert_eq!(clf.forward(&b, f).unwrap().shape(), vec![2, 1]);
    assert!(clf.forward(&b, tape.constant(Tensor::zeros(&[2, 4, 2, 2]))).is_err());

    let mut zero = clf.clone();
    let names = zero.params().names();
    for n in names {
        let shape = zero.params().get(&n).unwrap().shape().to_vec();
        zero.params_mut().set(&n, Tensor::zeros(&shape)).unwrap();
    }
    let tape = Tape::new();
    let b = zero.bind(&tape);
    let logit = zero.forward(&b, tape.constant(rand_input(&[1, 3, 4, 4], 1))).unwrap();
    assert_eq!(logit.value().data(), [0.0]);
    assert_eq!(logit.sigmoid().unwrap().item(), 0.5);
}

#[test]
fn domain_classifier_matches_matrix_oracle() {
    let clf = DomainClassifier::new(1, 3, 4, 21).unwrap();
    let f = Tensor::uniform(&[2, 3, 2, 2], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(22));
    let p = |n: &str| clf.params().get(&format!("dann.l1.{n}")).unwrap().clone();
    let (w1, b1, w2, b2) = (p("fc1.w"), p("fc1.b"), p("fc2.w"), p("fc2.b"));
    let tape = Tape::new();
    let b = clf.bind(&tape);
    let got = clf.forward(&b, tape.constant(f.clone())).unwrap().value();
    for i in 0..2 {
        let pooled: Vec<f64> = (0..3).map(|c| f.data()[(i * 3 + c) * 4..(i * 3 + c + 1) * 4].iter().sum::<f64>() / 4.0).collect();
        let hidden: Vec<f64> = (0..4)
            .map(|h| (b1.data()[h] + (0..3).map(|c| w1.data()[h * 3 + c] * pooled[c]).sum::<f64>()).max(0.0))
            .collect();
        let logit = b2.data()[0] + (0..4).map(|h| w2.data()[h] * hidden[h]).sum::<f64>();
        assert!((got.data()[i] - logit).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn halving_invariant(levels in 2usize..4, ky in 1usize..3, kx in 1usize..3) {
        let c = cfg(levels, 2);
        let m = c.spatial_multiple();
        let (h, w) = (m * ky, m * kx);
        let net = build_unet(c, 0).unwrap();
        let tape = Tape::new();
        let b = net.bind(&tape);
        let out = net.forward(&b, tape.constant(Tensor::zeros(&[1, 1, h, w]))).unwrap();
        for (i, f) in out.encoder_features.iter().enumerate() {
            prop_assert_eq!(f.shape()[2..].to_vec(), vec![h >> i, w >> i]);
        }
    }
}
