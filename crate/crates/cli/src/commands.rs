use std::fs;
use std::path::{Path, PathBuf};

use daseg::data::{load_volume, save_volume, synth_domain_pair_with, DomainPair, SynthConfig, Volume};
use daseg::eval::{activation_shift, emit_report, export_activations, export_images, results_csv, CurvePoint, EvalResult};
use daseg::experiment::{evaluate, run_protocol, ExperimentConfig};
use daseg::losses::Method;
use daseg::nn::{strip_reconstruction_decoder, SegNet, RECON_PREFIX};
use daseg::train::{finetune_trainer, Phase, PhaseData, PhaseReport, Trainer};
use daseg::tensor::Tensor;
use daseg::verify::Suite;
use daseg::Exec;
use log::info;
use serde_json::json;

use crate::error::{usage, CliError, CliResult};
use crate::manifest::{runtime_io, RunManifest};
use crate::{EvalArgs, ExperimentArgs, FinetuneArgs, Overrides, SynthArgs, TrainArgs};

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const LOSS_CSV: &str = "loss.csv";
const VOLUMES: [&str; 2] = ["source", "target"];

fn volume_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.raw")), dir.join(format!("{name}.json")))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| runtime_io(dir, e))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| runtime_io(path, e))
}

/// Loads a dataset directory: `source.{raw,json}` with labels and
/// `target.{raw,json}` whose labels are the held-back ground truth.
fn load_pair(dir: &Path, manifest: &mut RunManifest) -> CliResult<DomainPair> {
    let mut vols = Vec::new();
    for name in VOLUMES {
        let (data, header) = volume_paths(dir, name);
        manifest.add_input(&format!("{name}.raw"), &data)?;
        manifest.add_input(&format!("{name}.json"), &header)?;
        vols.push(load_volume(&data, &header)?);
    }
    let target = vols.pop().expect("two volumes");
    let source = vols.pop().expect("two volumes");
    if !source.has_labels() {
        return usage(format!("{}: source volume has no labels", dir.display()));
    }
    manifest.data = Some(dir.canonicalize().map_err(|e| runtime_io(dir, e))?);
    Ok(DomainPair::new(source, target)?)
}

fn read_config(path: Option<&Path>, manifest: &mut RunManifest) -> CliResult<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            manifest.add_input("config", p)?;
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            Ok(ExperimentConfig::from_json(&text)?)
        }
    }
}

fn apply(cfg: &mut ExperimentConfig, o: &Overrides) {
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = o.$field.clone() {
                cfg.$field = v;
            })*
        };
    }
    set!(seed, steps, finetune_steps, batch_size, patch, lr, grl_lambda, checkpoint_every, train_fraction);
    macro_rules! set_opt {
        ($($field:ident),*) => {
            $(if o.$field.is_some() {
                cfg.$field = o.$field.clone();
            })*
        };
    }
    set_opt!(lambda0, levels, lambda_recon_source, lambda_recon_target);
    if o.no_augment {
        cfg.augment = false;
    }
}

fn write_report(out: &Path, report: &PhaseReport, manifest: &mut RunManifest) -> CliResult<()> {
    let path = out.join(LOSS_CSV);
    write_file(&path, &report.to_csv())?;
    manifest.add_output(out, &path);
    Ok(())
}

fn is_empty_dir(dir: &Path) -> CliResult<bool> {
    match fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_none()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(true),
        Err(e) => Err(runtime_io(dir, e)),
    }
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    if !a.force && !is_empty_dir(&a.out)? {
        return usage(format!("{} is not empty; pass --force to overwrite", a.out.display()));
    }
    let mut cfg = SynthConfig::default();
    if let Some(shape) = a.shape {
        cfg.shape = shape;
    }
    let pair = synth_domain_pair_with(a.seed, a.shift, &cfg)?;
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("synth", a.seed, json!({ "shift": a.shift.name(), "synth": cfg }));
    let target = pair.target_labeled();
    for (name, v) in VOLUMES.into_iter().zip([pair.source(), &target]) {
        let (data, header) = volume_paths(&a.out, name);
        save_volume(v, &data, &header)?;
        manifest.add_output(&a.out, &data);
        manifest.add_output(&a.out, &daseg::data::labels_path(&data));
        manifest.add_output(&a.out, &header);
    }
    manifest.write(&a.out)?;
    info!("wrote {} ({} shift, seed {})", a.out.display(), a.shift, a.seed);
    Ok(())
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("train", 0, json!(null));
    let mut cfg = read_config(a.config.as_deref(), &mut manifest)?;
    apply(&mut cfg, &a.overrides);
    cfg.validate()?;
    let tc = cfg.train_config(a.method)?;
    let pair = load_pair(&a.data, &mut manifest)?;
    let (train, _) = pair.split_x(cfg.train_fraction)?;
    create_dir(&a.out)?;
    manifest.seed = cfg.seed;
    manifest.method = Some(a.method.label().to_string());
    manifest.config = json!({ "experiment": cfg, "train": tc });
    let ckpt = a.out.join(CHECKPOINT);
    manifest.write(&a.out)?;

    let mut trainer = if a.resume && ckpt.exists() {
        let t = Trainer::resume(&ckpt, &tc)?;
        manifest.log.push(format!("resumed at step {}", t.step));
        t
    } else {
        Trainer::new(cfg.initial_net(a.method)?, tc, Phase::Pretrain)?
    };
    let data = match a.method {
        Method::None => PhaseData::Supervised(train.source()),
        _ => PhaseData::Adapt(&train),
    };
    info!("training {} for {} steps", a.method, cfg.steps);
    let report = trainer.run(data, Some(&ckpt))?;
    trainer.save_checkpoint(&ckpt)?;
    manifest.add_output(&a.out, &ckpt);
    write_report(&a.out, &report, &mut manifest)?;
    manifest.target_image_reads = Some(train.target_image_reads());
    manifest.target_label_reads = Some(train.target_label_reads());
    manifest.write(&a.out)?;
    info!("final loss {:?}, digest {}", report.last_total(), report.final_digest);
    Ok(())
}

/// Experiment config and method recorded by whichever command produced
/// `checkpoint`, falling back to defaults around the stored network.
fn provenance(checkpoint: &Path, trainer: &Trainer) -> CliResult<(ExperimentConfig, String, Option<RunManifest>)> {
    let prior = RunManifest::beside(checkpoint)?;
    let mut cfg = prior
        .as_ref()
        .and_then(|m| m.config.get("experiment").cloned())
        .map(serde_json::from_value::<ExperimentConfig>)
        .transpose()
        .map_err(|e| CliError::Runtime(format!("manifest beside {}: {e}", checkpoint.display())))?
        .unwrap_or_default();
    cfg.net = *trainer.net.config();
    let method = prior
        .as_ref()
        .and_then(|m| m.method.clone())
        .unwrap_or_else(|| trainer.config.alignment.method.label().to_string());
    Ok((cfg, method, prior))
}

fn strip_if_needed(net: SegNet, manifest: &mut RunManifest) -> CliResult<SegNet> {
    if !net.has_reconstruction() {
        return Ok(net);
    }
    let n = net.params().num_scalars_with_prefix(RECON_PREFIX);
    let stripped = strip_reconstruction_decoder(&net)?;
    manifest.log.push(format!("stripped reconstruction decoder ({n} parameters)"));
    Ok(stripped)
}

pub fn finetune(a: &FinetuneArgs) -> CliResult<()> {
    if a.fraction == 0.0 {
        return usage(
            "fraction 0 uses no target labels; score the unsupervised checkpoint with `daseg eval` instead",
        );
    }
    if !(a.fraction > 0.0 && a.fraction <= 1.0) {
        return usage(format!("fraction must lie in (0, 1], got {}", a.fraction));
    }
    let mut manifest = RunManifest::new("finetune", 0, json!(null));
    manifest.add_input(CHECKPOINT, &a.checkpoint)?;
    let source = Trainer::load_checkpoint(&a.checkpoint)?;
    let (mut cfg, method, prior) = provenance(&a.checkpoint, &source)?;
    if let Some(s) = a.steps {
        cfg.finetune_steps = s;
    }
    let data_dir = match (&a.data, prior.as_ref().and_then(|m| m.data.clone())) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => d,
        (None, None) => return usage("no --data given and none recorded beside the checkpoint"),
    };
    let pair = load_pair(&data_dir, &mut manifest)?;
    let (train, _) = pair.split_x(cfg.train_fraction)?;
    let ft = cfg.finetune_config()?;
    create_dir(&a.out)?;
    manifest.seed = cfg.seed;
    manifest.method = Some(method);
    manifest.config = json!({ "experiment": cfg, "finetune": ft, "fraction": a.fraction });
    let net = strip_if_needed(source.net, &mut manifest)?;
    manifest.write(&a.out)?;

    let ckpt = a.out.join(CHECKPOINT);
    let (trainer, report) = finetune_trainer(net, &train.target_labeled(), a.fraction, &ft, Some(&ckpt))?;
    trainer.save_checkpoint(&ckpt)?;
    manifest.add_output(&a.out, &ckpt);
    write_report(&a.out, &report, &mut manifest)?;
    manifest.write(&a.out)?;
    info!("finetuned on fraction {} for {} steps", a.fraction, ft.steps);
    Ok(())
}

fn check_compatible(net: &SegNet, truth: &Volume) -> CliResult<()> {
    let c = net.config();
    if c.input_channels != 1 {
        return Err(daseg::Error::Incompatible(format!(
            "network expects {} input channels; volumes have 1",
            c.input_channels
        ))
        .into());
    }
    let max = truth.labels().into_iter().flatten().filter(|&&l| l != daseg::data::LABEL_ABSENT).max();
    if let Some(&m) = max {
        if m as usize >= c.num_classes {
            return Err(daseg::Error::Incompatible(format!(
                "data has label {m}; network predicts {} classes",
                c.num_classes
            ))
            .into());
        }
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("eval", 0, json!(null));
    manifest.add_input(CHECKPOINT, &a.checkpoint)?;
    let trainer = Trainer::load_checkpoint(&a.checkpoint)?;
    let (mut cfg, method_label, prior) = provenance(&a.checkpoint, &trainer)?;
    if let Some(t) = a.tile {
        cfg.tile = t;
    }
    if let Some(o) = a.overlap {
        cfg.overlap = o;
    }
    if let Some(f) = a.train_fraction {
        cfg.train_fraction = f;
    }
    let fraction = prior
        .as_ref()
        .and_then(|m| m.config.get("fraction"))
        .and_then(|v| v.as_f64())
        .unwrap_or(0.0);
    let pair = load_pair(&a.data, &mut manifest)?;
    let (_, test) = pair.split_x(cfg.train_fraction)?;
    let truth = test.target_labeled();
    let net = strip_if_needed(trainer.net, &mut manifest)?;
    check_compatible(&net, &truth)?;
    if let Some(&z) = a.slices.iter().chain(&a.activations).find(|&&z| z >= truth.shape()[0]) {
        return usage(format!("slice {z} out of range for a test volume of {} slices", truth.shape()[0]));
    }
    create_dir(&a.out)?;
    manifest.seed = cfg.seed;
    manifest.method = Some(method_label.clone());
    manifest.config = json!({ "experiment": cfg, "dataset": a.dataset, "fraction": fraction });
    manifest.write(&a.out)?;

    let method: Method = method_label.parse()?;
    let (mut result, pred) = evaluate(&net, &truth, method, &a.dataset, fraction, &cfg, Exec::default())?;
    result.method = method_label;
    let path = a.out.join("eval.csv");
    write_file(&path, &results_csv(std::slice::from_ref(&result)))?;
    manifest.add_output(&a.out, &path);
    for p in emit_report(std::slice::from_ref(&result), &[], &a.out)? {
        manifest.add_output(&a.out, &p);
    }
    for p in export_images(&truth, &pred, &a.slices, net.config().num_classes, &a.out)? {
        manifest.add_output(&a.out, &p);
    }
    if let Some(z) = a.activations {
        let [th, tw] = cfg.tile;
        let [_, h, w] = truth.shape();
        if th > h || tw > w {
            return usage(format!("tile {th}x{tw} does not fit a {h}x{w} test slice"));
        }
        let dir = a.out.join("activations");
        let crop = |v: &Volume| {
            let plane = v.slice(z);
            let data = (0..th).flat_map(|y| plane[y * w..y * w + tw].iter().map(|&p| p as f64)).collect();
            Tensor::new(vec![1, 1, th, tw], data)
        };
        let (xs, xt) = (crop(test.source())?, crop(&truth)?);
        for (x, prefix) in [(&xs, "source_"), (&xt, "target_")] {
            for p in export_activations(&net, x, prefix, &dir)? {
                manifest.add_output(&a.out, &p);
            }
        }
        let mut csv = String::from("map,mean_abs_diff\n");
        for (name, d) in activation_shift(&net, &xs, &xt)? {
            info!("activation shift {name}: {d:.4}");
            csv.push_str(&format!("{name},{d:.6}\n"));
        }
        let path = dir.join("shift.csv");
        write_file(&path, &csv)?;
        manifest.add_output(&a.out, &path);
    }
    manifest.write(&a.out)?;
    println!("{} {} foreground IoU {:.2}", result.method, result.dataset, result.foreground_iou);
    Ok(())
}

pub fn verify() -> CliResult<()> {
    let report = Suite::default().run();
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<String> = report.failures().iter().map(|c| format!("{}/{}", c.module, c.name)).collect();
        Err(CliError::Runtime(format!("verification failed: {}", names.join(", "))))
    }
}

pub fn experiment(a: &ExperimentArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("experiment", 0, json!(null));
    let mut cfg = read_config(a.config.as_deref(), &mut manifest)?;
    apply(&mut cfg, &a.overrides);
    cfg.validate()?;
    for &m in &a.methods {
        cfg.train_config(m)?;
    }
    if let Some(p) = a.fractions.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return usage(format!("finetuning fractions must lie in (0, 1], got {p}"));
    }
    let pair = load_pair(&a.data, &mut manifest)?;
    create_dir(&a.out)?;
    manifest.seed = cfg.seed;
    manifest.config = json!({
        "experiment": cfg,
        "methods": a.methods.iter().map(|m| m.cli_name()).collect::<Vec<_>>(),
        "fractions": a.fractions,
        "dataset": a.dataset,
    });
    manifest.write(&a.out)?;

    let mut results: Vec<EvalResult> = Vec::new();
    let mut curves: Vec<CurvePoint> = Vec::new();
    for &m in &a.methods {
        info!("protocol for {m}");
        let outcome = run_protocol(&pair, m, &a.dataset, &a.fractions, &cfg)?;
        let path = a.out.join(format!("loss_{}.csv", m.cli_name()));
        write_file(&path, &outcome.phase1.to_csv())?;
        manifest.add_output(&a.out, &path);
        println!("{} unsupervised foreground IoU {:.2}", m.label(), outcome.unsupervised.foreground_iou);
        results.push(outcome.unsupervised);
        curves.extend(outcome.curve);
    }
    let path = a.out.join("results.csv");
    write_file(&path, &results_csv(&results))?;
    manifest.add_output(&a.out, &path);
    for p in emit_report(&results, &curves, &a.out)? {
        manifest.add_output(&a.out, &p);
    }
    manifest.write(&a.out)?;
    Ok(())
}
