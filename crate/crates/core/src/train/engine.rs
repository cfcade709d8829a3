use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_patch_batch_with, subset_labels, DomainPair, PatchBatch, PatchSpec, Volume};
use crate::error::{contract, Error, Result};
use crate::losses::{alignment_total_loss, ynet_total_loss, AlignmentSpec, LossBreakdown, Method, SpecDiscrepancy};
use crate::nn::{DomainClassifier, Heads, SegNet};
use crate::par::Exec;
use crate::rng::keyed_rng;
use crate::tensor::Tape;
use crate::train::adam::Adam;
use crate::train::config::TrainConfig;

/// Which half of the two-phase protocol a trainer is running. Each phase
/// draws its batches from its own keyed stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Source-only or unsupervised adaptation.
    Pretrain,
    /// Supervised training on revealed target labels.
    Finetune,
}

impl Phase {
    fn key(self) -> u64 {
        match self {
            Phase::Pretrain => 0,
            Phase::Finetune => 1,
        }
    }
}

/// Where a trainer's batches come from.
#[derive(Clone, Copy)]
pub enum PhaseData<'a> {
    /// Labeled patches from one volume (source-only pretraining, finetuning).
    Supervised(&'a Volume),
    /// Labeled source plus unlabeled target.
    Adapt(&'a DomainPair),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// `seg` first, then the weighted alignment or reconstruction terms.
    pub components: Vec<(String, f64)>,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct PhaseReport {
    pub phase: Phase,
    pub method: Method,
    pub records: Vec<StepRecord>,
    pub wall_clock_secs: f64,
    /// Digest of all trainable parameters after the last step.
    pub final_digest: String,
}

impl PhaseReport {
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["step".to_string()];
        if let Some(r) = self.records.first() {
            cols.extend(r.components.iter().map(|(n, _)| n.clone()));
        }
        cols.push("total".into());
        cols
    }

    /// One row per step; values in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns().join(",");
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.step.to_string());
            for (_, v) in &r.components {
                out.push_str(&format!(",{v:?}"));
            }
            out.push_str(&format!(",{:?}\n", r.total));
        }
        out
    }

    pub fn last_total(&self) -> Option<f64> {
        self.records.last().map(|r| r.total)
    }
}

/// Network, domain classifiers and optimizer state for one phase.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub phase: Phase,
    pub net: SegNet,
    pub classifiers: Vec<DomainClassifier>,
    pub adam: Adam,
    /// Steps completed in this phase.
    pub step: usize,
    exec: Exec,
}

impl Trainer {
    pub fn new(net: SegNet, config: TrainConfig, phase: Phase) -> Result<Trainer> {
        config.validate(net.config())?;
        let method = config.alignment.method;
        contract!(
            method != Method::Ynet || net.has_reconstruction(),
            "ynet training needs a network with an attached reconstruction decoder"
        );
        contract!(
            method == Method::Ynet || !net.has_reconstruction(),
            "a reconstruction decoder is attached but method {method} would leave it untrained; strip it first"
        );
        let mut classifiers = Vec::new();
        if method == Method::Dann {
            for &level in &config.alignment.levels {
                let seed: u64 = keyed_rng(config.seed, &[u64::MAX, level as u64]).gen();
                let c = net.config().channels(level);
                classifiers.push(DomainClassifier::new(level, c, config.classifier_hidden, seed)?);
            }
        }
        let adam = Adam::new(config.optimizer.clone());
        Ok(Trainer { config, phase, net, classifiers, adam, step: 0, exec: Exec::default() })
    }

    /// Reassembles a trainer from checkpointed parts.
    pub(crate) fn from_parts(
        config: TrainConfig,
        phase: Phase,
        net: SegNet,
        classifiers: Vec<DomainClassifier>,
        adam: Adam,
        step: usize,
    ) -> Trainer {
        Trainer { config, phase, net, classifiers, adam, step, exec: Exec::default() }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    /// Digest over network and classifier parameters.
    pub fn digest(&self) -> String {
        let mut all = self.net.params().clone();
        for c in &self.classifiers {
            all.extend(c.params()).expect("classifier names are disjoint from network names");
        }
        all.digest()
    }

    /// Runs the remaining steps, writing a checkpoint to `checkpoint` at the
    /// configured cadence.
    pub fn run(&mut self, data: PhaseData<'_>, checkpoint: Option<&Path>) -> Result<PhaseReport> {
        self.run_until(data, self.config.steps, checkpoint)
    }

    pub fn run_until(&mut self, data: PhaseData<'_>, until: usize, checkpoint: Option<&Path>) -> Result<PhaseReport> {
        let start = Instant::now();
        let until = until.min(self.config.steps);
        let mut records = Vec::with_capacity(until.saturating_sub(self.step));
        while self.step < until {
            records.push(self.train_step(data)?);
            let every = self.config.checkpoint_every;
            if let Some(path) = checkpoint {
                if every > 0 && self.step % every == 0 {
                    self.save_checkpoint(path)?;
                }
            }
        }
        Ok(PhaseReport {
            phase: self.phase,
            method: self.config.alignment.method,
            records,
            wall_clock_secs: start.elapsed().as_secs_f64(),
            final_digest: self.digest(),
        })
    }

    fn sample(&self, volume: &Volume, domain: u64, with_labels: bool) -> Result<PatchBatch> {
        let spec = PatchSpec {
            n: self.config.batch_size,
            height: self.config.patch[0],
            width: self.config.patch[1],
            augment: self.config.augment,
            with_labels,
        };
        let mut rng = keyed_rng(self.config.seed, &[self.phase.key(), self.step as u64, domain]);
        sample_patch_batch_with(volume, &spec, &mut rng)
    }

    /// One optimizer step on freshly sampled batches.
    pub fn train_step(&mut self, data: PhaseData<'_>) -> Result<StepRecord> {
        let step = self.step;
        let spec = self.config.alignment.clone();
        let (source, target) = match data {
            PhaseData::Supervised(v) => {
                contract!(spec.method == Method::None, "method {} needs a domain pair", spec.method);
                (v, None)
            }
            PhaseData::Adapt(pair) => {
                let t = (spec.method != Method::None).then(|| pair.target_images());
                (pair.source(), t)
            }
        };
        let src = self.sample(source, 0, true)?;
        let tgt = target.map(|t| self.sample(t, 1, false)).transpose()?;
        let labels = src.labels.as_ref().expect("sampled with labels");

        let tape = Tape::with_exec(self.exec);
        let bound = self.net.bind(&tape);
        let classifiers: Vec<_> = self.classifiers.iter().map(|c| (c.clone(), c.bind(&tape))).collect();
        let breakdown = self.objective(&tape, &bound, &classifiers, &spec, &src, tgt.as_ref(), labels);
        let breakdown = breakdown.map_err(|e| at_step(e, step))?;
        let record = StepRecord {
            step,
            components: breakdown.components(),
            total: breakdown.total.item(),
        };
        if !record.total.is_finite() {
            return Err(Error::NonFinite { context: format!("training step {step}: total loss {}", record.total) });
        }
        let grads = tape.backward(breakdown.total).map_err(|e| at_step(e, step))?;
        let net_grads = bound.gradients(&grads);
        let clf_grads: Vec<_> = classifiers.iter().map(|(_, b)| b.gradients(&grads)).collect();
        if net_grads.iter().chain(clf_grads.iter().flatten()).any(|g| !g.all_finite()) {
            return Err(Error::NonFinite { context: format!("training step {step}: gradient") });
        }
        self.adam.tick();
        self.adam.apply(self.net.params_mut(), &net_grads)?;
        for (c, g) in self.classifiers.iter_mut().zip(&clf_grads) {
            self.adam.apply(c.params_mut(), g)?;
        }
        self.step += 1;
        Ok(record)
    }

    #[allow(clippy::too_many_arguments)]
    fn objective<'t>(
        &self,
        tape: &'t Tape,
        bound: &crate::nn::Bound<'t>,
        classifiers: &[(DomainClassifier, crate::nn::Bound<'t>)],
        spec: &AlignmentSpec,
        src: &PatchBatch,
        tgt: Option<&PatchBatch>,
        labels: &[usize],
    ) -> Result<LossBreakdown<'t>> {
        let xs = tape.constant(src.images.clone());
        let disc = SpecDiscrepancy { spec, classifiers };
        match spec.method {
            Method::None => {
                let fs = self.net.forward_heads(bound, xs, Heads::SEGMENTATION)?;
                alignment_total_loss(fs.logits()?, labels, &[], &[], spec, &disc)
            }
            Method::Ynet => {
                let xt = tape.constant(tgt.expect("target batch").images.clone());
                let fs = self.net.forward_heads(bound, xs, Heads::ALL)?;
                let ft = self.net.forward_heads(bound, xt, Heads::RECONSTRUCTION)?;
                ynet_total_loss(
                    fs.logits()?,
                    labels,
                    fs.reconstruction()?,
                    xs,
                    ft.reconstruction()?,
                    xt,
                    spec.recon_source,
                    spec.recon_target,
                )
            }
            _ => {
                let xt = tape.constant(tgt.expect("target batch").images.clone());
                let fs = self.net.forward_heads(bound, xs, Heads::SEGMENTATION)?;
                let ft = self.net.forward_heads(bound, xt, Heads::ENCODER)?;
                alignment_total_loss(fs.logits()?, labels, &fs.encoder_features, &ft.encoder_features, spec, &disc)
            }
        }
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { context } => Error::NonFinite { context: format!("training step {step}: {context}") },
        other => other,
    }
}

/// Supervised training on the labeled source only (the FT baseline's first
/// phase).
pub fn train_source_only(net: SegNet, source: &Volume, cfg: &TrainConfig) -> Result<(SegNet, PhaseReport)> {
    contract!(source.has_labels(), "source volume must be labeled");
    let cfg = TrainConfig { alignment: AlignmentSpec::none(), ..cfg.clone() };
    let mut t = Trainer::new(net, cfg, Phase::Pretrain)?;
    let report = t.run(PhaseData::Supervised(source), None)?;
    Ok((t.net, report))
}

/// Unsupervised adaptation: labeled source batches plus unlabeled target
/// batches. Target labels are never read.
pub fn train_da(net: SegNet, pair: &DomainPair, cfg: &TrainConfig) -> Result<(SegNet, Vec<DomainClassifier>, PhaseReport)> {
    let mut t = Trainer::new(net, cfg.clone(), Phase::Pretrain)?;
    let report = t.run(PhaseData::Adapt(pair), None)?;
    Ok((t.net, t.classifiers, report))
}

/// Supervised training on the first `floor(p·Z)` labeled target slices.
pub fn finetune_target(net: SegNet, target: &Volume, fraction: f64, cfg: &TrainConfig) -> Result<(SegNet, PhaseReport)> {
    let (t, report) = finetune_trainer(net, target, fraction, cfg, None)?;
    Ok((t.net, report))
}

/// [`finetune_target`], keeping the trainer (for checkpointing) and writing
/// periodic checkpoints to `checkpoint`.
pub fn finetune_trainer(
    net: SegNet,
    target: &Volume,
    fraction: f64,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<(Trainer, PhaseReport)> {
    contract!(
        fraction > 0.0,
        "label fraction 0 leaves nothing to finetune on; evaluate the unsupervised model directly"
    );
    let revealed = subset_labels(target, fraction)?;
    contract!(
        !revealed.labeled_slices().is_empty(),
        "label fraction {fraction} of {} slices reveals no labeled slice",
        target.shape()[0]
    );
    let cfg = TrainConfig { alignment: AlignmentSpec::none(), ..cfg.clone() };
    let mut t = Trainer::new(net, cfg, Phase::Finetune)?;
    let report = t.run(PhaseData::Supervised(&revealed), checkpoint)?;
    Ok((t, report))
}
