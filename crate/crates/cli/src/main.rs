//! `densedet`: subset extraction, COCO evaluation, ROC export, gradient audit,
//! toy training and report rendering.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use densedet_core::dataio::{extract_person_subset, parse_coco, read_detections, CocoDataset};
use densedet_core::metrics::report::{render_csv, render_table, render_text};
use densedet_core::metrics::{coco_summary, roc_auc, ApSummary, EvalParams, GroundTruthBox};
use densedet_core::trainkit::{
    compare_summaries, run_gradient_audit, synthetic_splits, train_toy_detector, AuditCheck, RunReport, TrainConfig,
};
use densedet_core::Error;
use rayon::prelude::*;

use config::CliConfig;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Core(#[from] Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Verify(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Core(Error::Io(_)) => 1,
            CliError::Verify(_) => 3,
            CliError::Core(Error::Divergence { .. }) => 4,
            CliError::Core(_) => 2,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "densedet", version, about = "Person detection with a dense surface-embedding head")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Keep the images holding enough annotations of one category.
    ExtractSubset {
        /// COCO instances JSON.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value = "person")]
        category: String,
        #[arg(long, default_value_t = 1)]
        min_instances: usize,
        /// Sample at most this many of the qualifying images.
        #[arg(long)]
        max_images: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Take defaults from the `subset` section; explicit flags still win.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// COCO summary of a results file against ground truth.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        /// COCO results JSON (list of detections).
        #[arg(long)]
        dets: PathBuf,
        #[arg(long, default_value = "person")]
        category: String,
        #[arg(long, default_value_t = 0.5)]
        iou_min: f64,
        #[arg(long, default_value_t = 0.95)]
        iou_max: f64,
        #[arg(long, default_value_t = 0.05)]
        iou_step: f64,
        #[arg(long, default_value_t = 100)]
        max_dets: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Take defaults from the `metrics` section; explicit flags still win.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// ROC curve of detection scores, TP vs FP at one IoU threshold.
    Roc {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        #[arg(long, default_value = "person")]
        category: String,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// CSV destination (`threshold,fpr,tpr` plus an `auc=` line).
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference audit of every hand-written backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per check.
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        /// Test hook: perturb the analytic gradient of one check.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Train the toy detector on synthetic scenes.
    TrainToy {
        /// JSON configuration; missing keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Train with and without the dense head for every seed in `--seeds`.
        #[arg(long)]
        paired: bool,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Format a six-column row given in percent.
    Render {
        /// AP, AP50, AP75, APs, APm, APl, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1, required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        #[arg(long)]
        ar: Option<f64>,
        /// Print this line above the table.
        #[arg(long)]
        title: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Print the full default configuration as JSON.
    Defaults,
    /// Side-by-side final summaries of two training reports.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        dense: PathBuf,
    },
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(path: Option<&Path>) -> CliResult<CliConfig> {
    match path {
        Some(p) => {
            let text = String::from_utf8_lossy(&read(p)?).into_owned();
            Ok(CliConfig::from_json(&text)?)
        }
        None => Ok(CliConfig::default()),
    }
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn ground_truth(ds: &CocoDataset, category: &str) -> CliResult<(u64, Vec<GroundTruthBox>)> {
    let id = ds
        .category_id(category)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown category `{category}`")))?;
    Ok((id, ds.ground_truth(id)?))
}

fn load_eval_inputs(gt: &Path, dets: &Path, category: &str) -> CliResult<(Vec<GroundTruthBox>, Vec<densedet_core::metrics::Detection>)> {
    let ds = parse_coco(&read(gt)?)?;
    let (id, gts) = ground_truth(&ds, category)?;
    let dets = read_detections(&read(dets)?)?
        .into_iter()
        .filter(|d| d.category_id == id)
        .collect();
    Ok((gts, dets))
}

fn print_summary(s: &ApSummary, format: Format) {
    match format {
        Format::Text => print!("{}", render_text(s, true)),
        Format::Csv => print!("{}", render_csv(s, true)),
    }
}

/// Field-wise mean, skipping undefined (-1) entries.
fn mean_summary(all: &[ApSummary]) -> ApSummary {
    let mean = |f: fn(&ApSummary) -> f64| {
        let v: Vec<f64> = all.iter().map(f).filter(|x| *x >= 0.0).collect();
        if v.is_empty() {
            -1.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    ApSummary {
        ap: mean(|s| s.ap),
        ap50: mean(|s| s.ap50),
        ap75: mean(|s| s.ap75),
        ap_small: mean(|s| s.ap_small),
        ap_medium: mean(|s| s.ap_medium),
        ap_large: mean(|s| s.ap_large),
        ar: mean(|s| s.ar),
    }
}

fn write_run(dir: &Path, report: &RunReport) -> CliResult {
    write(&dir.join("report.json"), &report.to_json()?)?;
    write(&dir.join("loss.csv"), &report.loss_csv())
}

fn train_paired(cfg: &TrainConfig, seeds: &[u64], out: &Path) -> CliResult {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("--seeds needs at least one seed".into()).into());
    }
    let jobs: Vec<(u64, bool)> = seeds.iter().flat_map(|&s| [(s, false), (s, true)]).collect();
    let reports = jobs
        .par_iter()
        .map(|&(seed, dense)| {
            let cfg = TrainConfig {
                seed,
                with_dense_head: dense,
                ..cfg.clone()
            };
            let (train, val) = synthetic_splits(&cfg)?;
            train_toy_detector(&cfg, &train, &val)
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let (mut base, mut dense) = (Vec::new(), Vec::new());
    for (&(seed, with), report) in jobs.iter().zip(&reports) {
        let tag = if with { "dense" } else { "baseline" };
        write_run(&out.join(format!("seed{seed}")).join(tag), report)?;
        println!("seed {seed} {tag:<8} AP {:.4}", report.final_summary.ap);
        if with { &mut dense } else { &mut base }.push(report.final_summary);
    }
    let (a, b) = (mean_summary(&base), mean_summary(&dense));
    println!("mean over seeds (baseline, dense, delta):");
    print!("{}", compare_summaries(&a, &b).render());
    let holds = b.ap >= a.ap - 0.01;
    println!(
        "directional: {} (dense {:.4} vs baseline {:.4})",
        if holds { "pass" } else { "fail" },
        b.ap,
        a.ap
    );
    if holds {
        Ok(())
    } else {
        Err(CliError::Verify("dense head lowered mean AP by more than 0.01".into()))
    }
}

fn run(cli: Cli, m: &ArgMatches) -> CliResult {
    match cli.command {
        Command::ExtractSubset {
            annotations,
            category,
            min_instances,
            max_images,
            seed,
            out,
            config,
        } => {
            let mut spec = load_config(config.as_deref())?.subset;
            if config.is_none() || explicit(m, "category") {
                spec.category_name = category;
            }
            if config.is_none() || explicit(m, "min_instances") {
                spec.min_instances = min_instances;
            }
            if max_images.is_some() {
                spec.max_images = max_images;
            }
            if config.is_none() || explicit(m, "seed") {
                spec.seed = seed;
            }
            let ds = parse_coco(&read(&annotations)?)?;
            let subset = extract_person_subset(&ds, &spec)?;
            write(&out, &subset.to_json()?)?;
            println!("images={} annotations={}", subset.images.len(), subset.annotations.len());
        }
        Command::Evaluate {
            gt,
            dets,
            category,
            iou_min,
            iou_max,
            iou_step,
            max_dets,
            format,
            config,
        } => {
            let sweep = ["iou_min", "iou_max", "iou_step"].iter().any(|id| explicit(m, id));
            let mut params = match &config {
                Some(_) => load_config(config.as_deref())?.metrics,
                None => EvalParams::default(),
            };
            if config.is_none() || sweep {
                params.iou_thresholds = EvalParams::with_sweep(iou_min, iou_max, iou_step)?.iou_thresholds;
            }
            if config.is_none() || explicit(m, "max_dets") {
                params.max_dets = max_dets;
            }
            let (gts, dets) = load_eval_inputs(&gt, &dets, &category)?;
            print_summary(&coco_summary(&dets, &gts, &params)?, format);
        }
        Command::Roc {
            gt,
            dets,
            category,
            iou,
            out,
        } => {
            let (gts, dets) = load_eval_inputs(&gt, &dets, &category)?;
            let curve = roc_auc(&dets, &gts, iou)?;
            write(&out, &curve.to_csv())?;
            println!("auc={:.6}", curve.auc);
        }
        Command::Gradcheck { seed, seeds, corrupt } => {
            let corrupt = corrupt.map(|c| c.parse::<AuditCheck>()).transpose()?;
            let results = run_gradient_audit(seed, seeds, corrupt)?;
            let mut failed = Vec::new();
            for r in &results {
                println!(
                    "{:<10} max_rel_error={:.3e} threshold={:.0e} seeds={} coords={} kinks={} {}",
                    r.check.name(),
                    r.max_rel_error,
                    r.threshold,
                    r.seeds,
                    r.coordinates,
                    r.kink_crossings,
                    if r.passed { "pass" } else { "FAIL" }
                );
                if !r.passed {
                    failed.push(r.check.name());
                }
            }
            if !failed.is_empty() {
                return Err(CliError::Verify(format!("gradient check failed: {}", failed.join(", "))));
            }
        }
        Command::TrainToy {
            config,
            out,
            paired,
            seeds,
        } => {
            let cfg = load_config(config.as_deref())?.train;
            if paired {
                return train_paired(&cfg, &seeds, &out);
            }
            let (train, val) = synthetic_splits(&cfg)?;
            let report = train_toy_detector(&cfg, &train, &val)?;
            write_run(&out, &report)?;
            print!("{}", render_text(&report.final_summary, true));
        }
        Command::Render {
            values,
            ar,
            title,
            format,
        } => {
            let row: [f64; 6] = values.as_slice().try_into().map_err(|_| {
                Error::InvalidArgument(format!("--values needs 6 numbers, got {}", values.len()))
            })?;
            let s = ApSummary::from_percent(row, ar);
            let with_ar = ar.is_some();
            let body = match format {
                Format::Text => render_text(&s, with_ar),
                Format::Csv => render_csv(&s, with_ar),
            };
            match (title, format) {
                (Some(t), Format::Text) if !with_ar => print!("{}", render_table(&t, &s)),
                (Some(t), _) => print!("{t}\n{body}"),
                (None, _) => print!("{body}"),
            }
        }
        Command::Defaults => println!("{}", CliConfig::default().to_json()),
        Command::Compare { baseline, dense } => {
            let load = |p: &Path| -> CliResult<RunReport> {
                Ok(RunReport::from_json(&String::from_utf8_lossy(&read(p)?))?)
            };
            let (a, b) = (load(&baseline)?, load(&dense)?);
            print!("{}", compare_summaries(&a.final_summary, &b.final_summary).render());
        }
    }
    Ok(())
}

fn init_threads() -> CliResult {
    let Ok(raw) = std::env::var("DENSEDET_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("DENSEDET_THREADS must be a count, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(())
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let sub = matches.subcommand().map(|(_, m)| m.clone()).unwrap_or_default();
    match init_threads().and_then(|()| run(cli, &sub)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
