//! `defectforge` command-line interface.
//!
//! Exit codes: 0 success, 1 validation error (bad config, spec or input
//! file), 2 runtime failure.

mod stats;

use clap::{Parser, Subcommand};
use defectforge_core::annotate::{read_manifest, AnnotateError, Split};
use defectforge_core::augment::{augment_manifest, AugmentError, AugmentSpec};
use defectforge_core::config::{load_config, ConfigError, SEED_ENV_VAR};
use defectforge_core::evaluate::{curve_series, read_ground_truth, read_predictions, transfer_report, EvalError, EvalSet};
use defectforge_core::pipeline::generate;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "defectforge", version, about = "Synthetic defect imagery: generate, inspect, augment and evaluate datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset from a configuration file.
    Generate {
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Worker threads (default: available cores). Output does not depend on it.
        #[arg(short, long)]
        jobs: Option<usize>,
        /// Override a config key, e.g. `--set render.spp=16` or `--set lights.0.power=12`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Parse and check a configuration without generating anything.
    ValidateConfig {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Summarize a dataset manifest.
    Stats {
        #[arg(short, long)]
        manifest: PathBuf,
        /// Also write the summary as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write augmented copies of a dataset.
    Augment {
        #[arg(short, long)]
        manifest: PathBuf,
        /// Augmentation spec (JSON). The built-in suite is used when omitted.
        #[arg(short, long)]
        spec: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Augmented variants per input image.
        #[arg(long, default_value_t = 1)]
        copies: u32,
        /// Keep images whose boxes all left the frame.
        #[arg(long)]
        keep_empty: bool,
    },
    /// Score predictions against ground truth.
    Evaluate {
        /// Ground truth: a dataset manifest or `{"image", "bbox"}` lines.
        #[arg(short, long)]
        gt: PathBuf,
        /// Named prediction file, `NAME=PATH`; repeat for several test sets.
        #[arg(short, long = "pred", value_name = "NAME=PATH", required = true)]
        preds: Vec<String>,
        /// Per-set ground truth overriding `--gt`, `NAME=PATH`.
        #[arg(long = "set-gt", value_name = "NAME=PATH")]
        set_gt: Vec<String>,
        /// Only score manifest records of this split.
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        /// Directory for `report.json`.
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
        /// Confidence at which precision and recall are reported.
        #[arg(long, default_value_t = 0.5)]
        reference_threshold: f64,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?} (train or test)")),
    }
}

/// Command failure with its exit code.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<AnnotateError> for Failure {
    fn from(e: AnnotateError) -> Self {
        match e {
            AnnotateError::Malformed { .. } => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<AugmentError> for Failure {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::Invalid { .. } | AugmentError::Syntax(_) => Failure::Validation(e.to_string()),
            AugmentError::Manifest(m) => m.into(),
            AugmentError::Image { .. } => Failure::Runtime(e.to_string()),
        }
    }
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV_VAR).ok()
}

fn named(arg: &str) -> Result<(String, PathBuf), Failure> {
    match arg.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Err(Failure::Validation(format!("expected NAME=PATH, got {arg:?}"))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_generate(config: &Path, out: Option<PathBuf>, jobs: Option<usize>, overrides: &[String]) -> Result<(), Failure> {
    let cfg = load_config(config, env_seed().as_deref(), overrides)?;
    let out = out.unwrap_or_else(|| cfg.output.dir.clone());
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    log::info!("generating {} scenes into {} with {jobs} jobs", cfg.scene_count, out.display());
    let s = generate(&cfg, &out, jobs).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{} scenes, {} views: {} rendered, {} skipped", s.scenes, s.views, s.rendered, s.skipped);
    println!("{} annotations; split {} train / {} test", s.annotations, s.train, s.test);
    println!("manifest: {}", out.join(&s.manifest).display());
    println!("summary: {}", out.join("summary.json").display());
    Ok(())
}

fn cmd_validate(config: &Path, overrides: &[String]) -> Result<(), Failure> {
    let cfg = load_config(config, env_seed().as_deref(), overrides)?;
    println!(
        "ok: {} scenes, {} cameras, {} lights, {} part models, {} defect kinds",
        cfg.scene_count,
        cfg.cameras.camera_specs().len(),
        cfg.lights.len(),
        cfg.parts.catalog.len(),
        cfg.defects.len()
    );
    Ok(())
}

fn cmd_stats(manifest: &Path, json: Option<PathBuf>) -> Result<(), Failure> {
    let m = read_manifest(manifest)?;
    let s = stats::compute(&m);
    print!("{}", s.render_text());
    if let Some(path) = json {
        write_text(&path, &format!("{:#}\n", s.to_json()))?;
    }
    Ok(())
}

fn cmd_augment(manifest: &Path, spec: Option<PathBuf>, out: &Path, seed: u64, copies: u32, keep_empty: bool) -> Result<(), Failure> {
    let spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| Failure::Validation(format!("{}: {e}", p.display())))?;
            AugmentSpec::from_json(&text)?
        }
        None => AugmentSpec::default(),
    };
    let (_, s) = augment_manifest(manifest, &spec, out, seed, copies, keep_empty)?;
    println!(
        "{} augmented images, {} of {} annotations kept, {} images dropped",
        s.images, s.annotations_out, s.annotations_in, s.dropped_images
    );
    println!("manifest: {}", out.join("manifest.jsonl").display());
    Ok(())
}

fn cmd_evaluate(
    gt: &Path,
    preds: &[String],
    set_gt: &[String],
    split: Option<Split>,
    out: &Path,
    reference_threshold: f64,
) -> Result<(), Failure> {
    let overrides: Vec<(String, PathBuf)> = set_gt.iter().map(|a| named(a)).collect::<Result<_, _>>()?;
    let mut sets = Vec::new();
    for arg in preds {
        let (name, path) = named(arg)?;
        let gt_path = overrides.iter().find(|(n, _)| *n == name).map_or(gt, |(_, p)| p.as_path());
        let base = read_ground_truth(gt_path, split)?;
        let preds = read_predictions(&path)?;
        sets.push((name, EvalSet { preds, ..base }));
    }
    let report = transfer_report(&sets)?;
    print!("{}", report.table());
    let series = curve_series(std::slice::from_ref(&report), reference_threshold)?;
    for (name, points) in &series {
        let p = points[0];
        println!("{name}: precision {:.3}, recall {:.3} at confidence {reference_threshold}", p.precision, p.recall);
    }
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    write_text(&out.join("report.json"), &format!("{}\n", report.to_json()))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, out, jobs, overrides } => cmd_generate(&config, out, jobs, &overrides),
        Command::ValidateConfig { config, overrides } => cmd_validate(&config, &overrides),
        Command::Stats { manifest, json } => cmd_stats(&manifest, json),
        Command::Augment { manifest, spec, out, seed, copies, keep_empty } => {
            cmd_augment(&manifest, spec, &out, seed, copies, keep_empty)
        }
        Command::Evaluate { gt, preds, set_gt, split, out, reference_threshold } => {
            cmd_evaluate(&gt, &preds, &set_gt, split, &out, reference_threshold)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Validation(m) | Failure::Runtime(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
