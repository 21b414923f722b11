use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use splatclean::bundle::{read_bundle, write_labeled, Bundle};
use splatclean::config::RunConfig;
use splatclean::evidence::EvidenceLedger;
use splatclean::pipeline::{evaluate, label_counts, prune_cloud, removed_initial, sweep_table, threshold_sweep};
use splatclean::plot;
use splatclean::ply::{load_ply_with, save_ply, PlyLoadOptions};
use splatclean::pruning::{PruneReport, PruneSummary};
use splatclean::synth::{make_box_scene, make_depth_priors, Label};
use splatclean::trainer::{read_json, write_json, TrainTrace, Trainer};
use splatclean::{Error, Result};

#[derive(Parser)]
#[command(name = "splatclean", version, about = "Floater pruning for Gaussian splat scenes")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a labeled synthetic scene bundle.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a scene bundle with periodic pruning.
    Train {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write a checkpoint every K steps.
        #[arg(long)]
        checkpoint_every: Option<u64>,
        /// Resume from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Prune a splat PLY, with training evidence or offline.
    Prune {
        #[arg(long)]
        input: PathBuf,
        /// Evidence sidecar written by `train`; offline mode without it.
        #[arg(long)]
        evidence: Option<PathBuf>,
        /// Scene bundle providing cameras (required offline) and labels.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compute metrics, plots, and optionally the threshold sweep.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        /// Model to evaluate (default: the run's final model, else the scene's points).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Training run directory, for the default model and trace plots.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Directory with `<view>_fg.png` / `<view>_static.png` masks.
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Train once per (tau_vis, tau_grad) pair and tabulate floater recall.
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Summarize a train or prune run.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            emit_error("usage", &e.to_string());
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            emit_error("usage", "--threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            emit_error("internal", &e.to_string());
            return ExitCode::from(2);
        }
    }
    match std::panic::catch_unwind(|| run(cli.cmd)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            emit_error(e.kind(), &e.to_string());
            ExitCode::from(exit_code(&e))
        }
        Err(_) => {
            emit_error("internal", "panic");
            ExitCode::from(2)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) | Error::Index { .. } => 2,
        _ => 1,
    }
}

fn emit_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { out, cfg } => cmd_synth(&out, &load_config(&cfg)?),
        Cmd::Train {
            scene,
            out,
            checkpoint_every,
            resume,
            cfg,
        } => cmd_train(&scene, &out, checkpoint_every, resume.as_deref(), &load_config(&cfg)?),
        Cmd::Prune {
            input,
            evidence,
            scene,
            out,
            cfg,
        } => cmd_prune(&input, evidence.as_deref(), scene.as_deref(), &out, &load_config(&cfg)?),
        Cmd::Eval {
            scene,
            model,
            run,
            masks,
            sweep,
            out,
            cfg,
        } => cmd_eval(&scene, model.as_deref(), run.as_deref(), masks.as_deref(), sweep, &out, &load_config(&cfg)?),
        Cmd::Report { run, json } => cmd_report(&run, json),
    }
}

fn load_config(a: &ConfigArgs) -> Result<RunConfig> {
    RunConfig::load(a.config.as_deref(), &a.overrides)
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, s: &str) -> Result<()> {
    fs::write(p, s).map_err(|e| Error::io(p, e))
}

fn start_run(out: &Path, cfg: &RunConfig) -> Result<()> {
    mkdir(out)?;
    write_json(&out.join("config.json"), cfg)
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    bytes: u64,
    fnv1a64: String,
}

/// Lists every file under `out` (except the manifest) with size and hash.
fn write_manifest(out: &Path, command: &str) -> Result<()> {
    let mut files = Vec::new();
    collect_files(out, out, &mut files)?;
    files.sort();
    let mut entries = Vec::new();
    for rel in files {
        if rel == "manifest.json" {
            continue;
        }
        let p = out.join(&rel);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        entries.push(ManifestEntry {
            path: rel,
            bytes: bytes.len() as u64,
            fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
        });
    }
    write_json(
        &out.join("manifest.json"),
        &json!({
            "tool": "splatclean",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": "config.json",
            "files": entries,
        }),
    )
}

fn collect_files(root: &Path, dir: &Path, acc: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(root, &p, acc)?;
        } else {
            let rel = p.strip_prefix(root).unwrap_or(&p);
            acc.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn cmd_synth(out: &Path, cfg: &RunConfig) -> Result<()> {
    start_run(out, cfg)?;
    let mut ls = make_box_scene(&cfg.synth.recipe)?;
    if let Some(corruption) = &cfg.synth.depth {
        let priors = make_depth_priors(&ls.clean, &ls.scene.views, ls.scene.background, corruption);
        for (v, (d, w)) in ls.scene.views.iter_mut().zip(priors) {
            v.depth_prior = Some(d);
            v.uncertainty = Some(w);
        }
    }
    write_labeled(out, &ls)?;
    let counts = label_counts(&ls.labels, 0..ls.labels.len());
    println!("{}", serde_json::to_string(&json!({ "gaussians": ls.labels.len(), "labels": counts }))?);
    write_manifest(out, "synth")
}

fn ply_opts(cfg: &RunConfig) -> PlyLoadOptions {
    PlyLoadOptions {
        default_importance_logit: cfg.prune.default_importance_logit,
    }
}

#[derive(Serialize)]
struct CleanupOverview {
    step: u64,
    summary: PruneSummary,
    removed_by_label: Option<std::collections::BTreeMap<String, usize>>,
}

fn cmd_train(scene_dir: &Path, out: &Path, every: Option<u64>, resume: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    start_run(out, cfg)?;
    let bundle = read_bundle(scene_dir, None, ply_opts(cfg))?;
    let mut t = match resume {
        Some(dir) => Trainer::resume(&bundle.scene, cfg.train.clone(), dir)?,
        None => Trainer::new(&bundle.scene, cfg.train.clone())?,
    };
    while t.step_index() < cfg.train.steps {
        t.step_once()?;
        if let Some(k) = every.filter(|&k| k > 0) {
            if t.step_index() % k == 0 && t.step_index() < cfg.train.steps {
                t.save_checkpoint(&out.join(format!("checkpoint_{:06}", t.step_index())))?;
            }
        }
    }
    let final_dir = out.join("final");
    t.save_checkpoint(&final_dir)?;
    write_trace_exports(out, t.trace())?;
    let cleanups: Vec<CleanupOverview> = t
        .trace()
        .cleanups
        .iter()
        .map(|c| CleanupOverview {
            step: c.step,
            summary: c.summary.clone(),
            removed_by_label: bundle.labels.as_ref().map(|l| {
                label_counts(l, c.removed_ids.iter().map(|&id| (id as usize).min(l.len())))
            }),
        })
        .collect();
    write_json(&out.join("cleanups.json"), &cleanups)?;
    let removed_by_label = bundle
        .labels
        .as_ref()
        .map(|l| label_counts(l, removed_initial(t.trace(), l.len())));
    println!(
        "{}",
        serde_json::to_string(&json!({
            "steps": t.step_index(),
            "initial": t.trace().initial_count,
            "final": t.cloud().len(),
            "heldout_psnr": t.heldout_psnr(),
            "removed_by_label": removed_by_label,
        }))?
    );
    write_manifest(out, "train")
}

fn write_trace_exports(out: &Path, trace: &TrainTrace) -> Result<()> {
    write_text(&out.join("trace.csv"), &plot::trace_csv(trace))?;
    let plots = out.join("plots");
    mkdir(&plots)?;
    write_text(&plots.join("count.svg"), &plot::count_plot(trace))?;
    write_text(&plots.join("activity.svg"), &plot::activity_plot(trace))?;
    write_text(&plots.join("psnr.svg"), &plot::psnr_plot(trace))?;
    write_text(&plots.join("loss.svg"), &plot::loss_plot(trace))
}

#[derive(Serialize)]
struct PruneOutput<'a> {
    input: String,
    summary: PruneSummary,
    removed_by_label: Option<std::collections::BTreeMap<String, usize>>,
    report: &'a PruneReport,
}

fn cmd_prune(input: &Path, evidence: Option<&Path>, scene: Option<&Path>, out: &Path, cfg: &RunConfig) -> Result<()> {
    start_run(out, cfg)?;
    let mut cloud = load_ply_with(input, ply_opts(cfg))?;
    let ledger = evidence.map(EvidenceLedger::load).transpose()?;
    let bundle: Option<Bundle> = scene.map(|d| read_bundle(d, Some(input), ply_opts(cfg))).transpose()?;
    let labels: Option<Vec<Label>> = match scene {
        Some(d) if d.join("labels.json").exists() => {
            let l: Vec<Label> = read_json(&d.join("labels.json"))?;
            (l.len() == cloud.len()).then_some(l)
        }
        _ => None,
    };
    let (views, background) = match &bundle {
        Some(b) => (b.scene.views.clone(), b.scene.background),
        None => (Vec::new(), [0.0; 3]),
    };
    let report = prune_cloud(&mut cloud, ledger, &views, background, &cfg.prune)?;
    save_ply(&cloud, &out.join("pruned.ply"))?;
    let removed_by_label = labels.as_ref().map(|l| label_counts(l, report.removed_indices()));
    let summary = report.summary();
    write_json(
        &out.join("prune_report.json"),
        &PruneOutput {
            input: input.display().to_string(),
            summary: summary.clone(),
            removed_by_label: removed_by_label.clone(),
            report: &report,
        },
    )?;
    if report.offline_mode {
        log::warn!("offline mode: pruning used visibility, opacity, importance and isolation only");
    }
    println!(
        "{}",
        serde_json::to_string(&json!({
            "before": summary.gaussians_before,
            "after": summary.gaussians_after,
            "removed": summary.removed,
            "offline_mode": summary.offline_mode,
            "removed_by_label": removed_by_label,
        }))?
    );
    write_manifest(out, "prune")
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    scene_dir: &Path,
    model: Option<&Path>,
    run: Option<&Path>,
    masks: Option<&Path>,
    sweep: bool,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    start_run(out, cfg)?;
    let model_path = match (model, run) {
        (Some(m), _) => m.to_path_buf(),
        (None, Some(r)) => r.join("final").join("model.ply"),
        (None, None) => scene_dir.join("points.ply"),
    };
    let mut bundle = read_bundle(scene_dir, None, ply_opts(cfg))?;
    let cloud = load_ply_with(&model_path, ply_opts(cfg))?;
    if let Some(dir) = masks {
        for (v, m) in bundle.scene.views.iter().zip(bundle.masks.iter_mut()) {
            let fg = dir.join(format!("{}_fg.png", v.name));
            let st = dir.join(format!("{}_static.png", v.name));
            if fg.exists() {
                m.foreground = Some(splatclean::image::read_png_mask(&fg)?);
            }
            if st.exists() {
                m.static_region = Some(splatclean::image::read_png_mask(&st)?);
            }
        }
    }
    let report = evaluate(&cloud, &bundle.scene, &bundle.masks, &cfg.eval)?;
    write_json(&out.join("metrics.json"), &report)?;
    write_text(&out.join("metrics.txt"), &report.to_text())?;
    let mut csv = String::from("view,psnr,ssim,silhouette_leakage,depth_stability,background_consistency\n");
    let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for v in &report.views {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            v.view,
            f(v.psnr),
            f(v.ssim),
            f(v.silhouette_leakage),
            f(v.depth_stability),
            f(v.background_consistency)
        ));
    }
    write_text(&out.join("metrics.csv"), &csv)?;
    print!("{}", report.to_text());
    if let Some(r) = run {
        let trace: TrainTrace = read_json(&r.join("final").join("trace.json"))?;
        write_trace_exports(out, &trace)?;
    }
    if sweep {
        let labels = bundle
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("the sweep needs a labeled scene (labels.json)".into()))?;
        let rows = threshold_sweep(&bundle.scene, labels, &cfg.train, &cfg.eval.sweep)?;
        write_json(&out.join("sweep.json"), &rows)?;
        let table = sweep_table(&rows);
        write_text(&out.join("sweep.txt"), &table)?;
        print!("{table}");
    }
    write_manifest(out, "eval")
}

fn cmd_report(run: &Path, as_json: bool) -> Result<()> {
    let trace_path = run.join("final").join("trace.json");
    let prune_path = run.join("prune_report.json");
    let value = if trace_path.exists() {
        let trace: TrainTrace = read_json(&trace_path)?;
        let cleanups: serde_json::Value = if run.join("cleanups.json").exists() {
            read_json(&run.join("cleanups.json"))?
        } else {
            serde_json::to_value(trace.cleanups.iter().map(|c| &c.summary).collect::<Vec<_>>())?
        };
        let last = trace.steps.last();
        json!({
            "kind": "train",
            "steps": last.map_or(0, |r| r.step),
            "initial_count": trace.initial_count,
            "final_count": last.map_or(trace.initial_count, |r| r.count),
            "added": trace.steps.iter().map(|r| r.added).sum::<usize>(),
            "pruned": trace.steps.iter().map(|r| r.pruned).sum::<usize>(),
            "final_heldout_psnr": trace.steps.iter().rev().find_map(|r| r.heldout_psnr),
            "cleanups": cleanups,
        })
    } else if prune_path.exists() {
        let v: serde_json::Value = read_json(&prune_path)?;
        json!({
            "kind": "prune",
            "input": v["input"],
            "summary": v["summary"],
            "removed_by_label": v["removed_by_label"],
        })
    } else {
        return Err(Error::InvalidArgument(format!(
            "{} holds neither a training run nor a prune report",
            run.display()
        )));
    };
    if as_json {
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        print!("{}", report_text(&value));
    }
    Ok(())
}

fn report_text(v: &serde_json::Value) -> String {
    let mut s = String::new();
    let summary_line = |c: &serde_json::Value| {
        format!(
            "candidates {:>5}  guarded {:>5}  pool {:>5}  isolated {:>5}  removed {:>4}/{:<4} cap use {:.2}  offline {}  reasons {}",
            c["base_candidates"],
            c["guarded"],
            c["prune_pool"],
            c["isolated"],
            c["removed"],
            c["global_cap"],
            c["global_cap_utilization"].as_f64().unwrap_or(0.0),
            c["offline_mode"],
            c["guard_reasons"]
        )
    };
    if v["kind"] == "train" {
        s.push_str(&format!(
            "training run: {} steps, {} -> {} Gaussians ({} added, {} pruned), held-out PSNR {}\n",
            v["steps"], v["initial_count"], v["final_count"], v["added"], v["pruned"], v["final_heldout_psnr"]
        ));
        for c in v["cleanups"].as_array().into_iter().flatten() {
            let (step, summary) = if c.get("summary").is_some() {
                (c["step"].to_string(), &c["summary"])
            } else {
                ("-".to_string(), c)
            };
            s.push_str(&format!("  step {step:>5}: {}", summary_line(summary)));
            if let Some(l) = c.get("removed_by_label").filter(|l| !l.is_null()) {
                s.push_str(&format!("  labels {l}"));
            }
            s.push('\n');
        }
    } else {
        s.push_str(&format!("prune run on {}\n  {}\n", v["input"], summary_line(&v["summary"])));
        if !v["removed_by_label"].is_null() {
            s.push_str(&format!("  removed by label {}\n", v["removed_by_label"]));
        }
    }
    s
}
