//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs sequentially; the timed criteria assume one core.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use daseg::data::{load_volume, save_volume, split_x, synth_domain_pair, DomainPair, Shift, Volume};
use daseg::eval::{curve_csv, emit_report, CurvePoint, EvalResult};
use daseg::experiment::{evaluate, train_phase1, ExperimentConfig, CURVE_FRACTIONS};
use daseg::losses::Method;
use daseg::nn::{build_unet, SegNet, UNetConfig};
use daseg::rng::keyed_rng;
use daseg::train::{finetune_target, train_source_only, Phase, PhaseData, TrainConfig, Trainer};
use daseg::verify::{Check, Rule, Suite, VerifyReport};
use daseg::Exec;
use rand::Rng;
use tempfile::TempDir;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> Outcome {
    println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    Outcome { name, passed, detail }
}

fn table_csv_emission() -> Outcome {
    let cell = |method: &str, dataset: &str, iou: f64| EvalResult {
        method: method.into(),
        dataset: dataset.into(),
        fraction: 0.0,
        seed: 0,
        config_digest: String::new(),
        iou_per_class: vec![],
        foreground_iou: iou,
    };
    let results = [
        cell("FT", "HeLa", 8.83),
        cell("MMD", "HeLa", 2.33),
        cell("Y-NET", "HeLa", 22.51),
        cell("DANN", "Drosophila", 49.9),
    ];
    let tmp = TempDir::new().expect("tempdir");
    let written = emit_report(&results, &[], tmp.path()).expect("report written");
    let table = fs::read_to_string(tmp.path().join("table.csv")).expect("table.csv");
    let want = "method,HeLa,Drosophila\nFT,8.83,\nMMD,2.33,\nY-NET,22.51,\nDANN,,49.90\n";
    outcome(
        "table-csv-emission",
        table == want && written.len() == 1,
        format!("table.csv {:?}", table),
    )
}

fn checks_matching<'a>(report: &'a VerifyReport, pred: impl Fn(&Check) -> bool) -> Vec<&'a Check> {
    report.checks.iter().filter(|c| pred(c)).collect()
}

fn summarize(name: &'static str, checks: &[&Check], expected: usize, extra: &str) -> Outcome {
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.to_string()).collect();
    let below: Vec<f64> = checks.iter().filter(|c| c.rule == Rule::Below).map(|c| c.observed).collect();
    let ok = failed.is_empty() && checks.len() == expected;
    let detail = if ok && !below.is_empty() {
        let worst = below.iter().cloned().fold(0.0f64, f64::max);
        format!("{} checks{extra}, max error {worst:e}", checks.len())
    } else if ok {
        format!("{} checks{extra}", checks.len())
    } else {
        format!("{} of {expected} checks present, failures {failed:?}", checks.len())
    };
    outcome(name, ok, detail)
}

fn verify_criteria(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let report = Suite::default().run();
    let secs = start.elapsed().as_secs_f64();

    let grads = checks_matching(&report, |c| c.name.starts_with("grad_check."));
    let mut o = summarize("gradient-integrity", &grads, 13, &format!(" in {secs:.1}s"));
    if secs >= 120.0 {
        o.passed = false;
        o.detail += " (over the 120 s budget)";
        println!("FAIL gradient-integrity: runtime {secs:.1}s");
    }
    out.push(o);

    let oracle_names = [
        "mmd2_single_pair_closed_form",
        "coral_one_dimensional",
        "uniform_logit_cross_entropy",
        "alignment_total_loss_zero_lambda_is_segmentation",
        "ynet_total_loss_zero_lambda_is_segmentation",
    ];
    let oracles = checks_matching(&report, |c| oracle_names.contains(&c.name.as_str()));
    out.push(summarize("loss-oracles", &oracles, oracle_names.len(), ""));

    let grl = checks_matching(&report, |c| c.name == "grl_reverses_gradient_exactly");
    out.push(summarize("grl-contract", &grl, 1, ""));

    let ynet = checks_matching(&report, |c| c.module == "network-zoo");
    out.push(summarize("ynet-structural-invariants", &ynet, 2, ""));
}

fn overfit_smoke() -> Outcome {
    // The 32×32 source crop with the most foreground, fed unaugmented: every
    // batch is the same.
    let pair = synth_domain_pair(0, Shift::Invert);
    let src = pair.source();
    let [z, h, w] = src.shape();
    let labels = src.labels().expect("source labels");
    let fg = |z: usize| labels[z * h * w..(z + 1) * h * w].iter().filter(|&&l| l == 1).count();
    let best = (0..z).max_by_key(|&z| fg(z)).unwrap_or(0);
    let mut img = Vec::with_capacity(32 * 32);
    let mut lab = Vec::with_capacity(32 * 32);
    for y in 0..32 {
        let row = best * h * w + y * w;
        img.extend_from_slice(&src.intensities()[row..row + 32]);
        lab.extend_from_slice(&labels[row..row + 32]);
    }
    let v = Volume::new([1, 32, 32], img, Some(lab), src.spacing_nm()).expect("crop volume");
    let net = build_unet(UNetConfig { levels: 3, input_channels: 1, base_channels: 8, num_classes: 2 }, 0).expect("net");
    let cfg = TrainConfig { steps: 500, batch_size: 2, patch: [32, 32], augment: false, ..TrainConfig::default() };
    let start = Instant::now();
    let (_, report) = train_source_only(net, &v, &cfg).expect("training runs");
    let secs = start.elapsed().as_secs_f64();
    let seg: Vec<f64> = report.records.iter().map(|r| r.components[0].1).collect();
    let hit = seg.iter().position(|&l| l < 0.05);
    let ok = hit.is_some() && secs < 300.0;
    let detail = match hit {
        Some(k) => format!("segmentation loss < 0.05 at step {}, final {:.4}, {secs:.1}s", k + 1, seg[seg.len() - 1]),
        None => format!("final segmentation loss {:.4} after 500 steps, {secs:.1}s", seg[seg.len() - 1]),
    };
    outcome("overfit-smoke", ok, detail)
}

/// Desk-scale protocol settings shared by the adaptation criteria.
fn desk_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        steps: 1000,
        finetune_steps: 150,
        lambda0: Some(0.3),
        levels: Some(vec![1]),
        grl_lambda: 1.0,
        lambda_recon_source: Some(0.1),
        lambda_recon_target: Some(1.0),
        ..ExperimentConfig::default()
    }
}

/// Per-method alignment levels and weights used for the adaptation runs.
fn method_config(method: Method, seed: u64) -> ExperimentConfig {
    let base = desk_config(seed);
    match method {
        Method::Mmd => ExperimentConfig { lambda0: Some(0.1), levels: Some(vec![1]), ..base },
        Method::Coral => ExperimentConfig { lambda0: Some(10.0), levels: Some(vec![1]), ..base },
        _ => base,
    }
}

struct Phase1 {
    method: Method,
    seed: u64,
    net: SegNet,
    iou: f64,
}

const SEEDS: u64 = 5;
const METHODS: [Method; 5] = [Method::None, Method::Ynet, Method::Dann, Method::Mmd, Method::Coral];

fn da_improvement(runs: &mut Vec<Phase1>) -> Outcome {
    let start = Instant::now();
    for seed in 0..SEEDS {
        let pair = synth_domain_pair(seed, Shift::Invert);
        let (train, test) = pair.split_x(0.67).expect("split");
        let truth = test.target_labeled();
        for method in METHODS {
            let cfg = method_config(method, seed);
            let (net, _) = train_phase1(&train, method, &cfg).expect("phase 1 runs");
            let (r, _) = evaluate(&net, &truth, method, "invert", 0.0, &cfg, Exec::default()).expect("evaluation runs");
            runs.push(Phase1 { method, seed, net, iou: r.foreground_iou });
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mean = |m: Method| {
        let v: Vec<f64> = runs.iter().filter(|r| r.method == m).map(|r| r.iou).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let ft = mean(Method::None);
    let means: Vec<String> = METHODS.iter().map(|&m| format!("{} {:.2}", m.label(), mean(m))).collect();
    let ynet_ok = mean(Method::Ynet) >= ft + 5.0;
    let dann_ok = mean(Method::Dann) >= ft + 5.0;
    let ok = ynet_ok && dann_ok && secs <= 1800.0;
    outcome(
        "da-improvement",
        ok,
        format!(
            "mean target foreground IoU over {SEEDS} seeds: {}; Y-NET {} FT+5, DANN {} FT+5; {secs:.0}s",
            means.join(", "),
            if ynet_ok { "meets" } else { "misses" },
            if dann_ok { "meets" } else { "misses" },
        ),
    )
}

fn semi_supervised_monotonicity(runs: &[Phase1]) -> Outcome {
    let seed = 0;
    let pair = synth_domain_pair(seed, Shift::Invert);
    let (train, test) = pair.split_x(0.67).expect("split");
    let truth = test.target_labeled();
    let target_train = train.target_labeled();
    let tmp = TempDir::new().expect("tempdir");
    let mut curves = Vec::new();
    let mut broken = Vec::new();
    for method in METHODS {
        let run = runs.iter().find(|r| r.method == method && r.seed == seed).expect("phase-1 run");
        let cfg = method_config(method, seed);
        let ft = cfg.finetune_config().expect("finetune config");
        let mut points = Vec::new();
        for p in CURVE_FRACTIONS {
            let (tuned, _) = finetune_target(run.net.clone(), &target_train, p, &ft).expect("finetuning runs");
            let (r, _) = evaluate(&tuned, &truth, method, "invert", p, &cfg, Exec::default()).expect("evaluation");
            points.push(CurvePoint { method: method.label().into(), fraction: p, iou: r.foreground_iou });
        }
        if points[3].iou <= points[0].iou {
            broken.push(format!("{} {:.2} -> {:.2}", method.label(), points[0].iou, points[3].iou));
        }
        curves.extend(points);
    }
    let written = emit_report(&[], &curves, tmp.path()).expect("curves written");
    let mut shape_ok = written.len() == 1 + METHODS.len();
    let mut summary = Vec::new();
    for method in METHODS {
        let file = tmp.path().join(format!("curve_{}.csv", method.label().to_lowercase()));
        let text = fs::read_to_string(&file).unwrap_or_default();
        shape_ok &= text == curve_csv(&curves, method.label()) && text.starts_with("fraction,iou\n0.05,");
        let ious: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap_or("")).collect();
        summary.push(format!("{} [{}]", method.label(), ious.join(" ")));
    }
    outcome(
        "semi-supervised-monotonicity",
        broken.is_empty() && shape_ok,
        if broken.is_empty() {
            format!("IoU at fractions 0.05/0.15/0.5/1.0: {}", summary.join(", "))
        } else {
            format!("not increasing: {}", broken.join(", "))
        },
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_daseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn pipeline(root: &Path) -> bool {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let (data, tr, ft, ev) = (p("data"), p("train"), p("ft"), p("eval"));
    run_cli(&["synth", "--seed", "3", "--shift", "invert", "--shape", "8,32,96", "--out", &data])
        && run_cli(&[
            "train", "--method", "ynet", "--data", &data, "--out", &tr, "--steps", "20", "--batch-size", "2",
            "--lambda-recon-source", "1", "--lambda-recon-target", "1",
        ])
        && run_cli(&["finetune", "--checkpoint", &format!("{tr}/checkpoint.bin"), "--fraction", "0.15", "--out", &ft, "--steps", "10"])
        && run_cli(&["eval", "--checkpoint", &format!("{ft}/checkpoint.bin"), "--data", &data, "--out", &ev, "--slices", "0"])
}

fn determinism() -> Outcome {
    let (a, b) = (TempDir::new().expect("tempdir"), TempDir::new().expect("tempdir"));
    let ran = pipeline(a.path()) && pipeline(b.path());
    let artifacts = [
        "train/checkpoint.bin",
        "train/loss.csv",
        "ft/checkpoint.bin",
        "ft/loss.csv",
        "eval/eval.csv",
        "eval/table.csv",
        "eval/slice000_pred.pgm",
    ];
    let mut differing = Vec::new();
    for f in artifacts {
        let (x, y) = (fs::read(a.path().join(f)), fs::read(b.path().join(f)));
        if !matches!((&x, &y), (Ok(x), Ok(y)) if x == y) {
            differing.push(f);
        }
    }

    // Interrupted and resumed versus uninterrupted, same config.
    let pair = synth_domain_pair(4, Shift::Invert);
    let cfg = desk_config(4);
    let tc = TrainConfig { steps: 12, checkpoint_every: 5, ..cfg.train_config(Method::Dann).expect("config") };
    let fresh = || Trainer::new(cfg.initial_net(Method::Dann).expect("net"), tc.clone(), Phase::Pretrain).expect("trainer");
    let full = fresh().run(PhaseData::Adapt(&pair), None).expect("full run");
    let tmp = TempDir::new().expect("tempdir");
    let ckpt = tmp.path().join("ckpt.bin");
    let mut first = fresh();
    let head = first.run_until(PhaseData::Adapt(&pair), 7, Some(&ckpt)).expect("first part");
    drop(first);
    let mut resumed = Trainer::resume(&ckpt, &tc).expect("resume");
    let resumed_at = resumed.step;
    let tail = resumed.run(PhaseData::Adapt(&pair), None).expect("second part");
    let mut joined: Vec<_> = head.records[..resumed_at].to_vec();
    joined.extend(tail.records);
    let same_trajectory = joined == full.records && tail.final_digest == full.final_digest;

    outcome(
        "determinism",
        ran && differing.is_empty() && same_trajectory,
        format!(
            "pipeline ran twice: {ran}; differing artifacts {differing:?}; resume from step {resumed_at} matches: {same_trajectory}"
        ),
    )
}

fn data_round_trips() -> Outcome {
    let tmp = TempDir::new().expect("tempdir");
    let mut rng = keyed_rng(11, &[]);
    let mut failures = Vec::new();
    for case in 0..20 {
        let shape = [rng.gen_range(1..5), rng.gen_range(1..9), rng.gen_range(2..17)];
        let n = shape.iter().product();
        let v = Volume::new(
            shape,
            (0..n).map(|_| rng.gen::<f32>()).collect(),
            Some((0..n).map(|_| rng.gen_range(0..2)).collect()),
            [rng.gen_range(1.0..9.0), 5.0, 5.0],
        )
        .expect("volume");
        let (d, h) = (tmp.path().join(format!("v{case}.raw")), tmp.path().join(format!("v{case}.json")));
        save_volume(&v, &d, &h).expect("save");
        if load_volume(&d, &h).ok().as_ref() != Some(&v) {
            failures.push(format!("volume {shape:?}"));
        }
        let f = rng.gen_range(0.05..0.95);
        if let Ok((a, b)) = split_x(&v, f) {
            if a.concat_x(&b).ok().as_ref() != Some(&v) || a.shape()[2] != (f * shape[2] as f64).floor() as usize {
                failures.push(format!("split {shape:?} at {f}"));
            }
        }
    }
    let pair: DomainPair = synth_domain_pair(5, Shift::ContrastNoise);
    let cfg = desk_config(5);
    let mut t = Trainer::new(cfg.initial_net(Method::Ynet).expect("net"), cfg.train_config(Method::Ynet).expect("cfg"), Phase::Pretrain)
        .expect("trainer");
    t.run_until(PhaseData::Adapt(&pair), 3, None).expect("steps");
    let ckpt = tmp.path().join("c.bin");
    t.save_checkpoint(&ckpt).expect("save checkpoint");
    let bytes = fs::read(&ckpt).expect("read checkpoint");
    let back = Trainer::load_checkpoint(&ckpt).expect("load checkpoint");
    if back.checkpoint_bytes() != bytes || back.digest() != t.digest() || back.net.params() != t.net.params() {
        failures.push("checkpoint".into());
    }
    outcome(
        "data-round-trips",
        failures.is_empty(),
        if failures.is_empty() { "20 volumes, 20 splits, 1 checkpoint bit-identical".into() } else { format!("{failures:?}") },
    )
}

fn main() -> ExitCode {
    let mut out = vec![table_csv_emission()];
    verify_criteria(&mut out);
    out.push(overfit_smoke());
    out.push(determinism());
    out.push(data_round_trips());
    let mut runs = Vec::new();
    out.push(da_improvement(&mut runs));
    out.push(semi_supervised_monotonicity(&runs));

    let failed: Vec<&Outcome> = out.iter().filter(|o| !o.passed).collect();
    println!("{} criteria, {} failed", out.len(), failed.len());
    for f in &failed {
        println!("  failed: {} ({})", f.name, f.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
