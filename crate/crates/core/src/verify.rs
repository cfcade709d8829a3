//! Self-check suite: gradient checks, loss oracles and structural
//! invariants, each reported with the module it covers and the value
//! observed.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{load_volume, save_volume, split_x, Volume};
use crate::error::Result;
use crate::eval::{fmt2, iou};
use crate::losses::{
    alignment_total_loss, coral, dann_loss, mmd2, ynet_total_loss, AlignmentSpec, BandwidthPolicy, Domain, FeatureBatch,
    Method, SpecDiscrepancy,
};
use crate::nn::{attach_reconstruction_decoder, build_unet, strip_reconstruction_decoder, DomainClassifier, Heads, UNetConfig};
use crate::tensor::{grad_check_report, grad_check_scaled, ConvSpec, Tape, Tensor, Var, GRAD_CHECK_EPS};
use crate::train::{Adam, AdamConfig, Phase, TrainConfig, Trainer};

/// A discrepancy between two feature batches.
pub type PairLoss = for<'t> fn(&FeatureBatch<'t>, &FeatureBatch<'t>) -> Result<Var<'t>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub module: &'static str,
    pub name: String,
    pub observed: f64,
    /// Passing bound on `observed`, described by `rule`.
    pub limit: f64,
    pub rule: Rule,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    /// observed < limit
    Below,
    /// |observed − limit| ≤ 1e-9 (or the stated tolerance folded into limit)
    Equals,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let rule = match self.rule {
            Rule::Below => "<",
            Rule::Equals => "==",
        };
        write!(f, "{status} {}/{} observed={:e} ({rule} {:e})", self.module, self.name, self.observed, self.limit)
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().len();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// The functions under test; swap one out to confirm the suite notices.
#[derive(Clone, Copy)]
pub struct Suite {
    pub coral: PairLoss,
    pub mmd: fn(&FeatureBatch<'_>, &FeatureBatch<'_>, &[f64]) -> Result<Tensor>,
    pub seed: u64,
}

fn mmd_value(s: &FeatureBatch<'_>, t: &FeatureBatch<'_>, bw: &[f64]) -> Result<Tensor> {
    Ok((*mmd2(s, t, bw)?.value()).clone())
}

impl Default for Suite {
    fn default() -> Self {
        Suite { coral, mmd: mmd_value, seed: 7 }
    }
}

struct Collector {
    checks: Vec<Check>,
}

impl Collector {
    fn below(&mut self, module: &'static str, name: &str, observed: Result<f64>, limit: f64) {
        let observed = observed.unwrap_or(f64::INFINITY);
        let passed = observed < limit;
        self.checks.push(Check { module, name: name.into(), observed, limit, rule: Rule::Below, passed });
    }

    fn equals(&mut self, module: &'static str, name: &str, observed: Result<f64>, want: f64, tol: f64) {
        let observed = observed.unwrap_or(f64::NAN);
        let passed = (observed - want).abs() <= tol;
        self.checks.push(Check { module, name: name.into(), observed, limit: want, rule: Rule::Equals, passed });
    }

    fn holds(&mut self, module: &'static str, name: &str, ok: Result<bool>) {
        let ok = ok.unwrap_or(false);
        let observed = if ok { 1.0 } else { 0.0 };
        self.checks.push(Check { module, name: name.into(), observed, limit: 1.0, rule: Rule::Equals, passed: ok });
    }
}

fn grad_err<F>(f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    Ok(grad_check_report(f, inputs, GRAD_CHECK_EPS)?.max_rel_error)
}

/// Distinct values at least 0.01 apart, shuffled: no max-pool ties and no
/// relu kinks within the finite-difference step.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * 0.01 + 0.003).collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals).expect("shape matches")
}

fn batch<'t>(v: Var<'t>, d: Domain) -> Result<FeatureBatch<'t>> {
    FeatureBatch::new(v, d)
}

impl Suite {
    pub fn run(&self) -> VerifyReport {
        let mut c = Collector { checks: Vec::new() };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.tensor_checks(&mut c, &mut rng);
        self.loss_checks(&mut c, &mut rng);
        network_checks(&mut c);
        data_checks(&mut c, &mut rng);
        training_checks(&mut c);
        c.equals("evaluation-report", "iou_counting", iou(&[1, 1, 1, 1, 0, 0], &[0, 0, 1, 1, 1, 1], 1), 2.0 / 6.0, 1e-15);
        c.holds("evaluation-report", "two_decimal_format", Ok(fmt2(22.51) == "22.51"));
        VerifyReport { checks: c.checks }
    }

    fn tensor_checks(&self, c: &mut Collector, rng: &mut ChaCha8Rng) {
        const M: &str = "tensor-core";
        let x = Tensor::uniform(&[2, 2, 5, 5], -1.0, 1.0, rng);
        let w = Tensor::uniform(&[3, 2, 3, 3], -1.0, 1.0, rng);
        let b = Tensor::uniform(&[3], -1.0, 1.0, rng);
        let spec = ConvSpec { kernel_h: 3, kernel_w: 3, stride: 2, padding: 1, in_channels: 2, out_channels: 3 };
        c.below(M, "grad_check.conv2d", grad_err(|_, v| v[0].conv2d(v[1], v[2], &spec)?.sum(), &[x, w, b]), 1e-6);

        let x = Tensor::uniform(&[2, 3, 3, 3], -1.0, 1.0, rng);
        let w = Tensor::uniform(&[3, 2, 2, 2], -1.0, 1.0, rng);
        let b = Tensor::uniform(&[2], -1.0, 1.0, rng);
        let target = Tensor::uniform(&[2, 2, 6, 6], -1.0, 1.0, rng);
        c.below(
            M,
            "grad_check.up_conv2d",
            grad_err(
                |t, v| v[0].up_conv2d(v[1], Some(v[2]), &ConvSpec::up2(3, 2))?.mse(t.constant(target.clone())),
                &[x, w, b],
            ),
            1e-6,
        );

        let x = off_kink(&[2, 2, 4, 4], rng);
        let weights = Tensor::uniform(&[2, 2, 2, 2], -1.0, 1.0, rng);
        c.below(
            M,
            "grad_check.max_pool2d",
            grad_err(|t, v| v[0].max_pool2d()?.mul(t.constant(weights.clone()))?.sum(), &[x]),
            1e-6,
        );

        let x = off_kink(&[3, 4], rng);
        let y = Tensor::uniform(&[3, 4], -1.0, 1.0, rng);
        c.below(
            M,
            "grad_check.activations",
            grad_err(|_, v| v[0].relu()?.mul(v[1].sigmoid()?)?.add(v[1].relu()?)?.sum(), &[x, y]),
            1e-6,
        );

        let logits = Tensor::uniform(&[2, 3, 2, 2], -2.0, 2.0, rng);
        let labels = [0, 1, 2, 1, 2, 0, 0, 1];
        c.below(
            M,
            "grad_check.softmax_cross_entropy",
            grad_err(|_, v| v[0].softmax_cross_entropy(&labels), &[logits]),
            1e-6,
        );
        let a = Tensor::uniform(&[2, 3], -1.0, 1.0, rng);
        let b = Tensor::uniform(&[2, 3], -1.0, 1.0, rng);
        c.below(M, "grad_check.mse", grad_err(|_, v| v[0].mse(v[1]), &[a, b]), 1e-6);

        c.equals(
            M,
            "uniform_logit_cross_entropy",
            (|| {
                let tape = Tape::new();
                Ok(tape.constant(Tensor::zeros(&[1, 2, 2, 2])).softmax_cross_entropy(&[0, 1, 1, 0])?.item())
            })(),
            std::f64::consts::LN_2,
            1e-12,
        );

        // GRL: gradient equals −λ times the plain gradient, bit for bit.
        let x = Tensor::uniform(&[2, 3], -1.0, 1.0, rng);
        let wts = Tensor::uniform(&[2, 3], -1.0, 1.0, rng);
        let grl_exact = (|| {
            let mut ok = true;
            for lambda in [0.0, 0.5, 1.0, 3.0] {
                let grad = |reverse: bool| -> Result<Tensor> {
                    let tape = Tape::new();
                    let v = tape.param(x.clone());
                    let h = if reverse { v.grl(lambda)? } else { v };
                    let out = h.mul(tape.constant(wts.clone()))?.sigmoid()?.sum()?;
                    Ok(tape.backward(out)?.get_or_zeros(v))
                };
                let (plain, rev) = (grad(false)?, grad(true)?);
                ok &= plain.data().iter().zip(rev.data()).all(|(p, r)| *r == -lambda * p);
            }
            Ok(ok)
        })();
        c.holds(M, "grl_reverses_gradient_exactly", grl_exact);
    }

    fn loss_checks(&self, c: &mut Collector, rng: &mut ChaCha8Rng) {
        const M: &str = "da-losses";
        let s = Tensor::uniform(&[4, 3], -1.0, 1.0, rng);
        let t = Tensor::uniform(&[5, 3], -1.0, 2.0, rng);
        let coral_fn = self.coral;
        let mmd_fn = self.mmd;

        let closed = (|| {
            let tape = Tape::new();
            let a = tape.constant(Tensor::new(vec![2, 1], vec![0.0, 0.0])?);
            let b = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0])?);
            Ok(mmd_fn(&batch(a, Domain::Source)?, &batch(b, Domain::Target)?, &[1.0])?.item())
        })();
        c.equals(M, "mmd2_single_pair_closed_form", closed, 2.0 - 2.0 * (-0.5f64).exp(), 1e-9);

        let coral_1d = (|| {
            let tape = Tape::new();
            let a = tape.constant(Tensor::new(vec![2, 1], vec![-1.0, 1.0])?);
            let b = tape.constant(Tensor::new(vec![2, 1], vec![-2.0, 2.0])?);
            Ok(coral_fn(&batch(a, Domain::Source)?, &batch(b, Domain::Target)?)?.item())
        })();
        c.equals("da-losses", "coral_one_dimensional", coral_1d, 9.0, 1e-12);

        let coral_zero = (|| {
            let tape = Tape::new();
            let a = tape.constant(s.clone());
            Ok(coral_fn(&batch(a, Domain::Source)?, &batch(a, Domain::Target)?)?.item())
        })();
        c.equals(M, "coral_identical_batches", coral_zero, 0.0, 0.0);

        c.below(
            M,
            "grad_check.mmd2",
            grad_err(
                |_, v| mmd2(&batch(v[0], Domain::Source)?, &batch(v[1], Domain::Target)?, &[0.5, 1.0, 2.0]),
                &[s.clone(), t.clone()],
            ),
            1e-6,
        );
        c.below(
            M,
            "grad_check.coral",
            grad_err(|_, v| coral_fn(&batch(v[0], Domain::Source)?, &batch(v[1], Domain::Target)?), &[s.clone(), t.clone()]),
            1e-6,
        );

        let clf = DomainClassifier::new(1, 3, 5, self.seed).expect("valid classifier");
        let mut inputs = vec![s.clone(), t.clone()];
        inputs.extend(clf.params().iter().map(|(_, p)| p.clone()));
        let grl = 0.7;
        let mut scale = vec![-grl, -grl];
        scale.extend(std::iter::repeat(1.0).take(clf.params().len()));
        let dann_err = grad_check_scaled(
            |_, v| {
                let bound = clf.params().bind_vars(&v[2..])?;
                dann_loss(&batch(v[0], Domain::Source)?, &batch(v[1], Domain::Target)?, &clf, &bound, grl)
            },
            &inputs,
            &scale,
            GRAD_CHECK_EPS,
        )
        .map(|r| r.max_rel_error);
        c.below(M, "grad_check.dann_loss", dann_err, 1e-6);

        // Alignment objective on two levels, then its degenerate case.
        let logits = Tensor::uniform(&[2, 2, 4, 4], -2.0, 2.0, rng);
        let labels: Vec<usize> = (0..32).map(|i| (i * 5 / 3) % 2).collect();
        let es = [Tensor::uniform(&[2, 3, 4, 4], 0.0, 2.0, rng), Tensor::uniform(&[2, 4, 2, 2], 0.0, 2.0, rng)];
        let et = [Tensor::uniform(&[2, 3, 4, 4], 0.5, 2.5, rng), Tensor::uniform(&[2, 4, 2, 2], 0.0, 3.0, rng)];
        let inputs = vec![logits.clone(), es[0].clone(), es[1].clone(), et[0].clone(), et[1].clone()];
        for method in [Method::Mmd, Method::Coral] {
            let spec = AlignmentSpec {
                bandwidths: BandwidthPolicy::Fixed(vec![0.5, 1.0, 2.0]),
                ..AlignmentSpec::encoder_alignment(method, &[1, 2], if method == Method::Coral { 50.0 } else { 0.5 })
            };
            let err = grad_err(
                |_, v| {
                    let d = SpecDiscrepancy { spec: &spec, classifiers: &[] };
                    Ok(alignment_total_loss(v[0], &labels, &v[1..3], &v[3..5], &spec, &d)?.total)
                },
                &inputs,
            );
            c.below(M, &format!("grad_check.alignment_total_loss.{method}"), err, 1e-6);
        }
        let clfs = [
            DomainClassifier::new(1, 3, 4, 1).expect("valid"),
            DomainClassifier::new(2, 4, 4, 2).expect("valid"),
        ];
        let dspec = AlignmentSpec { grl_lambda: grl, ..AlignmentSpec::encoder_alignment(Method::Dann, &[1, 2], 0.5) };
        let mut dinputs = inputs.clone();
        for k in &clfs {
            dinputs.extend(k.params().iter().map(|(_, p)| p.clone()));
        }
        let mut dscale = vec![1.0, -grl, -grl, -grl, -grl];
        dscale.extend(std::iter::repeat(1.0).take(dinputs.len() - 5));
        let n1 = clfs[0].params().len();
        let err = grad_check_scaled(
            |_, v| {
                let bound = vec![
                    (clfs[0].clone(), clfs[0].params().bind_vars(&v[5..5 + n1])?),
                    (clfs[1].clone(), clfs[1].params().bind_vars(&v[5 + n1..])?),
                ];
                let d = SpecDiscrepancy { spec: &dspec, classifiers: &bound };
                Ok(alignment_total_loss(v[0], &labels, &v[1..3], &v[3..5], &dspec, &d)?.total)
            },
            &dinputs,
            &dscale,
            GRAD_CHECK_EPS,
        )
        .map(|r| r.max_rel_error);
        c.below(M, "grad_check.alignment_total_loss.dann", err, 1e-6);

        let zero = (|| {
            let tape = Tape::new();
            let spec = AlignmentSpec::encoder_alignment(Method::Mmd, &[1, 2], 0.0);
            let d = SpecDiscrepancy { spec: &spec, classifiers: &[] };
            let vs: Vec<Var<'_>> = es.iter().map(|x| tape.constant(x.clone())).collect();
            let vt: Vec<Var<'_>> = et.iter().map(|x| tape.constant(x.clone())).collect();
            let out = alignment_total_loss(tape.constant(logits.clone()), &labels, &vs, &vt, &spec, &d)?;
            Ok(out.total.item().to_bits() == out.segmentation.item().to_bits())
        })();
        c.holds(M, "alignment_total_loss_zero_lambda_is_segmentation", zero);

        let imgs: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(&[2, 1, 4, 4], 0.0, 1.0, rng)).collect();
        let mut yin = vec![logits.clone()];
        yin.extend(imgs.iter().cloned());
        c.below(
            M,
            "grad_check.ynet_total_loss",
            grad_err(|_, v| Ok(ynet_total_loss(v[0], &labels, v[1], v[2], v[3], v[4], 0.7, 1.3)?.total), &yin),
            1e-6,
        );
        let yzero = (|| {
            let tape = Tape::new();
            let v: Vec<Var<'_>> = yin.iter().map(|x| tape.constant(x.clone())).collect();
            let out = ynet_total_loss(v[0], &labels, v[1], v[2], v[3], v[4], 0.0, 0.0)?;
            Ok(out.total.item().to_bits() == out.segmentation.item().to_bits())
        })();
        c.holds(M, "ynet_total_loss_zero_lambda_is_segmentation", yzero);
    }
}

fn network_checks(c: &mut Collector) {
    const M: &str = "network-zoo";
    let cfg = UNetConfig { levels: 3, input_channels: 1, base_channels: 4, num_classes: 2 };
    let result = (|| {
        let net = build_unet(cfg.clone(), 1)?;
        let ynet = attach_reconstruction_decoder(&net, 2)?;
        let back = strip_reconstruction_decoder(&ynet)?;
        let x = Tensor::uniform(&[2, 1, 8, 8], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let (a, b, d) = (net.predict_logits(&x)?, ynet.predict_logits(&x)?, back.predict_logits(&x)?);
        let same = a.data().iter().zip(b.data()).zip(d.data()).all(|((p, q), r)| p.to_bits() == q.to_bits() && q.to_bits() == r.to_bits());

        // Segmentation loss reaches no reconstruction parameter and vice versa.
        let tape = Tape::new();
        let bound = ynet.bind(&tape);
        let out = ynet.forward_heads(&bound, tape.constant(x.clone()), Heads::ALL)?;
        let seg = out.logits()?.sum()?;
        let g = tape.backward(seg)?;
        let names = ynet.params().names();
        let grads = bound.gradients(&g);
        let seg_clean = names.iter().zip(&grads).filter(|(n, _)| n.starts_with("recon.")).all(|(_, g)| g.data().iter().all(|&v| v == 0.0));
        let rec = out.reconstruction()?.sum()?;
        let g = tape.backward(rec)?;
        let grads = bound.gradients(&g);
        let dec = |n: &str| n.starts_with("dec") || n.starts_with("head");
        let rec_clean = names.iter().zip(&grads).filter(|(n, _)| dec(n)).all(|(_, g)| g.data().iter().all(|&v| v == 0.0));
        Ok((same, seg_clean && rec_clean))
    })();
    let (same, clean) = match result {
        Ok(v) => (Ok(v.0), Ok(v.1)),
        Err(e) => (Err(e), Ok(false)),
    };
    c.holds(M, "reconstruction_decoder_leaves_logits_bit_identical", same);
    c.holds(M, "cross_decoder_gradients_zero", clean);
}

fn data_checks(c: &mut Collector, rng: &mut ChaCha8Rng) {
    const M: &str = "data-pipeline";
    use rand::Rng;
    let n = 3 * 4 * 7;
    let v = Volume::new(
        [3, 4, 7],
        (0..n).map(|_| rng.gen::<f32>()).collect(),
        Some((0..n).map(|_| rng.gen_range(0..2)).collect()),
        [1.0, 2.0, 3.0],
    )
    .expect("valid volume");
    let round_trip = (|| {
        let dir = std::env::temp_dir().join(format!("daseg-verify-{}", std::process::id()));
        std::fs::create_dir_all(&dir).map_err(|e| crate::Error::io(&dir, e))?;
        let (d, h) = (dir.join("v.raw"), dir.join("v.json"));
        save_volume(&v, &d, &h)?;
        let back = load_volume(&d, &h)?;
        let _ = std::fs::remove_dir_all(&dir);
        Ok(back == v)
    })();
    c.holds(M, "volume_round_trip", round_trip);
    let split = (|| {
        let (a, b) = split_x(&v, 0.67)?;
        Ok(a.shape()[2] == 4 && a.concat_x(&b)? == v)
    })();
    c.holds(M, "split_x_partition", split);
}

fn training_checks(c: &mut Collector) {
    const M: &str = "training-engine";
    let adam = (|| {
        let mut p = crate::nn::ParamStore::new();
        p.insert("w", Tensor::from_vec(vec![1.0]))?;
        let mut a = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        a.step(&mut p, &[Tensor::from_vec(vec![2.0])])?;
        Ok(p.get("w").map(|t| t.data()[0]).unwrap_or(f64::NAN))
    })();
    c.equals(M, "adam_single_step", adam, 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-12);
    let ckpt = (|| {
        let cfg = UNetConfig { levels: 2, input_channels: 1, base_channels: 2, num_classes: 2 };
        let net = attach_reconstruction_decoder(&build_unet(cfg, 4)?, 5)?;
        let tc = TrainConfig { alignment: AlignmentSpec::ynet(1.0, 1.0), patch: [8, 8], ..TrainConfig::default() };
        let t = Trainer::new(net, tc, Phase::Pretrain)?;
        let bytes = t.checkpoint_bytes();
        Ok(Trainer::from_checkpoint_bytes(&bytes)?.checkpoint_bytes() == bytes)
    })();
    c.holds(M, "checkpoint_round_trip", ckpt);
}
