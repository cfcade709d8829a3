//! End-to-end protocol: unsupervised phase, evaluation on the target test
//! split, then finetuning curves over label fractions.

use serde::{Deserialize, Serialize};

use crate::data::{DomainPair, Volume};
use crate::error::{contract, Error, Result};
use crate::eval::{predict_volume, CurvePoint, EvalResult};
use crate::losses::{AlignmentSpec, Method};
use crate::nn::{attach_reconstruction_decoder, build_unet, strip_reconstruction_decoder, SegNet, UNetConfig, DEFAULT_HIDDEN};
use crate::par::Exec;
use crate::rng::hex_digest;
use crate::train::{finetune_target, train_da, train_source_only, AdamConfig, PhaseReport, TrainConfig};

/// Label fractions of the finetuning curve.
pub const CURVE_FRACTIONS: [f64; 4] = [0.05, 0.15, 0.5, 1.0];

/// User-facing run configuration. Method weights are optional here so that a
/// missing one is reported instead of silently defaulted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub net: UNetConfig,
    pub seed: u64,
    pub steps: usize,
    pub finetune_steps: usize,
    pub batch_size: usize,
    pub patch: [usize; 2],
    pub augment: bool,
    pub lr: f64,
    /// Level-1 weight of the feature discrepancy; level i gets `lambda0 · 2^(i-1)`.
    pub lambda0: Option<f64>,
    /// Aligned encoder levels; all levels when absent.
    pub levels: Option<Vec<usize>>,
    pub grl_lambda: f64,
    pub lambda_recon_source: Option<f64>,
    pub lambda_recon_target: Option<f64>,
    pub classifier_hidden: usize,
    pub tile: [usize; 2],
    pub overlap: usize,
    pub train_fraction: f64,
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            net: UNetConfig { levels: 3, input_channels: 1, base_channels: 8, num_classes: 2 },
            seed: 0,
            steps: 600,
            finetune_steps: 150,
            batch_size: 4,
            patch: [32, 32],
            augment: true,
            lr: 1e-3,
            lambda0: None,
            levels: None,
            grl_lambda: 1.0,
            lambda_recon_source: None,
            lambda_recon_target: None,
            classifier_hidden: DEFAULT_HIDDEN,
            tile: [32, 32],
            overlap: 16,
            train_fraction: 0.67,
            checkpoint_every: 0,
        }
    }
}

fn missing(key: &str, method: Method, what: &str) -> Error {
    Error::Config(format!("method {method} requires `{key}`: {what}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))
    }

    /// Alignment settings for `method`; fails when a weight it needs is unset.
    pub fn alignment(&self, method: Method) -> Result<AlignmentSpec> {
        Ok(match method {
            Method::None => AlignmentSpec::none(),
            Method::Mmd | Method::Coral | Method::Dann => {
                let lambda0 = self.lambda0.ok_or_else(|| {
                    missing(
                        "lambda0",
                        method,
                        "the level-1 weight λ0 of the encoder discrepancy sum segmentation + Σ λ_i·L_d(f_i^s, f_i^t)",
                    )
                })?;
                let levels = self.levels.clone().unwrap_or_else(|| (1..=self.net.levels).collect());
                AlignmentSpec {
                    grl_lambda: self.grl_lambda,
                    ..AlignmentSpec::encoder_alignment(method, &levels, lambda0)
                }
            }
            Method::Ynet => {
                let what = "the reconstruction weights λ_r^s, λ_r^t of the Y-Net objective \
                            segmentation + λ_r^s·L_r(x̂^s, x^s) + λ_r^t·L_r(x̂^t, x^t)";
                let s = self.lambda_recon_source.ok_or_else(|| missing("lambda_recon_source", method, what))?;
                let t = self.lambda_recon_target.ok_or_else(|| missing("lambda_recon_target", method, what))?;
                AlignmentSpec::ynet(s, t)
            }
        })
    }

    fn base(&self, alignment: AlignmentSpec, steps: usize) -> TrainConfig {
        TrainConfig {
            alignment,
            optimizer: AdamConfig { lr: self.lr, ..AdamConfig::default() },
            steps,
            batch_size: self.batch_size,
            patch: self.patch,
            augment: self.augment,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            classifier_hidden: self.classifier_hidden,
        }
    }

    /// Unsupervised-phase training config for `method`.
    pub fn train_config(&self, method: Method) -> Result<TrainConfig> {
        let cfg = self.base(self.alignment(method)?, self.steps);
        cfg.validate(&self.net)?;
        Ok(cfg)
    }

    /// Supervised target finetuning config.
    pub fn finetune_config(&self) -> Result<TrainConfig> {
        let cfg = self.base(AlignmentSpec::none(), self.finetune_steps);
        cfg.validate(&self.net)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        contract!(
            self.train_fraction > 0.0 && self.train_fraction < 1.0,
            "train_fraction must lie in (0, 1), got {}",
            self.train_fraction
        );
        contract!(self.overlap < self.tile[0].min(self.tile[1]), "overlap {} must be below the tile size", self.overlap);
        self.finetune_config().map(|_| ())
    }

    pub fn digest(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Network with the method's extra parts attached, seeded from `seed`.
    pub fn initial_net(&self, method: Method) -> Result<SegNet> {
        let net = build_unet(self.net, self.seed)?;
        if method == Method::Ynet {
            attach_reconstruction_decoder(&net, self.seed.wrapping_add(1))
        } else {
            Ok(net)
        }
    }
}

/// Runs the unsupervised phase for `method` on the training part of `pair`.
/// The returned network has any reconstruction decoder removed.
pub fn train_phase1(pair: &DomainPair, method: Method, cfg: &ExperimentConfig) -> Result<(SegNet, PhaseReport)> {
    let net = cfg.initial_net(method)?;
    let tc = cfg.train_config(method)?;
    let (net, report) = if method == Method::None {
        train_source_only(net, pair.source(), &tc)?
    } else {
        let (net, _, report) = train_da(net, pair, &tc)?;
        (net, report)
    };
    let net = if net.has_reconstruction() { strip_reconstruction_decoder(&net)? } else { net };
    Ok((net, report))
}

/// Scores `net` on the labelled volume `truth`.
pub fn evaluate(
    net: &SegNet,
    truth: &Volume,
    method: Method,
    dataset: &str,
    fraction: f64,
    cfg: &ExperimentConfig,
    exec: Exec,
) -> Result<(EvalResult, Volume)> {
    let pred = predict_volume(net, truth, cfg.tile, cfg.overlap, exec)?;
    let (per, fg) = EvalResult::score(&pred, truth, net.config().num_classes)?;
    let result = EvalResult {
        method: method.label().to_string(),
        dataset: dataset.to_string(),
        fraction,
        seed: cfg.seed,
        config_digest: cfg.digest(),
        iou_per_class: per,
        foreground_iou: fg,
    };
    Ok((result, pred))
}

/// Everything one method produces under the protocol.
#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub method: Method,
    pub phase1: PhaseReport,
    /// Target test score straight after the unsupervised phase.
    pub unsupervised: EvalResult,
    /// One point per finetuning fraction.
    pub curve: Vec<CurvePoint>,
}

/// Unsupervised phase, evaluation, then one finetuning run per fraction,
/// each starting from the phase-1 network. Finetuning uses the target labels
/// of the training split; scores always come from the test split.
pub fn run_protocol(
    pair: &DomainPair,
    method: Method,
    dataset: &str,
    fractions: &[f64],
    cfg: &ExperimentConfig,
) -> Result<MethodOutcome> {
    cfg.validate()?;
    let (train, test) = pair.split_x(cfg.train_fraction)?;
    let truth = test.target_labeled();
    let exec = Exec::default();
    let (net, phase1) = train_phase1(&train, method, cfg)?;
    let (unsupervised, _) = evaluate(&net, &truth, method, dataset, 0.0, cfg, exec)?;
    let ft = cfg.finetune_config()?;
    let target_train = train.target_labeled();
    let mut curve = Vec::with_capacity(fractions.len());
    for &p in fractions {
        let (tuned, _) = finetune_target(net.clone(), &target_train, p, &ft)?;
        let (r, _) = evaluate(&tuned, &truth, method, dataset, p, cfg, exec)?;
        curve.push(CurvePoint { method: method.label().to_string(), fraction: p, iou: r.foreground_iou });
    }
    Ok(MethodOutcome { method, phase1, unsupervised, curve })
}
