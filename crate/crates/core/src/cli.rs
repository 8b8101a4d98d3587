//! Command-line front end. Diagnostics and progress go to standard error;
//! data artifacts go to `--out` or standard output.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::experiments::{
    cross_dataset_report, cv_report, eval_report, evaluate, prepare, provenance, run_cross_dataset, run_cv,
    train_full, BalanceMode, ExperimentConfig, ExperimentError, FoldScores, NoopObserver, Observer,
    ProgressObserver,
};
use crate::landmark_io::{load_dataset, occurrence_stats, stats_csv, AuId, DatasetManifest};
use crate::metrics::ReportFormat;
use crate::neuralnet::gradcheck::{check_network, NetworkCheck};
use crate::neuralnet::{load_checkpoint, save_checkpoint, ArchitectureDescriptor, Variant};
use crate::synthgen::{generate, write_dataset, SynthSpec};
use crate::voxelizer::encode_frame;
use crate::{Error, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "au3d", version, about = "Action unit detection from 3D facial landmarks")]
pub struct Cli {
    /// Suppress per-epoch progress lines.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-AU occurrence percentages as CSV.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode every frame of a dataset to a voxel file.
    Voxelize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 24)]
        c: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a whole dataset and write a checkpoint.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Subject-disjoint k-fold cross-validation on one dataset.
    Crossval {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Train fold models on one dataset and test each on another.
    Crossdataset {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Finite-difference gradient check of a whole network in f64.
    Gradcheck {
        /// default-binary, default-3class, small-binary or small-3class.
        #[arg(long, default_value = "default-binary")]
        descriptor: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Entries checked per parameter tensor; 0 checks all of them.
        #[arg(long, default_value_t = 16)]
        samples: usize,
    },
    /// Write a synthetic dataset directory.
    Synth {
        /// JSON spec file; otherwise a preset is used.
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// bp4d (12 AUs) or bp4d-plus (11 AUs).
        #[arg(long, default_value = "bp4d")]
        preset: String,
        #[arg(long, default_value_t = 20)]
        subjects: usize,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        #[arg(long, default_value_t = 0.02)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        unknown_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Experiment settings; each flag overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset for within-dataset runs.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub test_manifest: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// One or more fold counts, e.g. `3,10`.
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub balance: Option<BalanceMode>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// pooled or per-fold-mean.
    #[arg(long, value_parser = parse_fold_scores)]
    pub fold_scores: Option<FoldScores>,
    /// Train folds one after another (the default).
    #[arg(long, conflicts_with = "parallel")]
    pub deterministic: bool,
    /// Train folds on several threads.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    pub format: ReportFormat,
}

fn parse_fold_scores(s: &str) -> Result<FoldScores, String> {
    match s {
        "pooled" => Ok(FoldScores::Pooled),
        "per-fold-mean" | "per_fold_mean" => Ok(FoldScores::PerFoldMean),
        other => Err(format!("unknown fold score mode {other:?} (expected pooled or per-fold-mean)")),
    }
}

/// Relative paths in a config file are taken relative to that file.
fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

/// Config file, then flag overrides, then validation.
pub fn resolve_config(args: &ExperimentArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => {
            let raw = fs::read_to_string(path)
                .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let mut cfg = ExperimentConfig::from_json(&raw)
                .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new(""));
            rebase(base, &mut cfg.train_manifest);
            rebase(base, &mut cfg.test_manifest);
            cfg
        }
        None => ExperimentConfig::default(),
    };
    if let Some(m) = &args.manifest {
        cfg.train_manifest = Some(m.clone());
    }
    if let Some(m) = &args.train_manifest {
        cfg.train_manifest = Some(m.clone());
    }
    if let Some(m) = &args.test_manifest {
        cfg.test_manifest = Some(m.clone());
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(f) = &args.folds {
        cfg.folds = f.clone();
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(c) = args.c {
        cfg.c = c;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(b) = args.balance {
        cfg.balance = b;
    }
    if let Some(t) = args.threshold {
        cfg.threshold = t;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(f) = args.fold_scores {
        cfg.fold_scores = f;
    }
    if args.parallel {
        cfg.parallel = true;
    }
    if args.deterministic {
        cfg.parallel = false;
    }
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(cfg)
}

fn require(p: &Option<PathBuf>, flag: &str) -> Result<PathBuf, Error> {
    p.clone().ok_or_else(|| Error::Usage(format!("missing {flag} (flag or config field)")))
}

fn write_out(out: Option<&Path>, content: &[u8]) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, content).map_err(|source| Error::Io { path: path.to_path_buf(), source }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content)
                .and_then(|_| stdout.flush())
                .map_err(|source| Error::Io { path: "<stdout>".into(), source })
        }
    }
}

fn tool_provenance() -> Value {
    json!({"tool": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION")})
}

fn descriptor_by_name(name: &str) -> Result<ArchitectureDescriptor, Error> {
    let (size, variant) = name
        .split_once('-')
        .ok_or_else(|| Error::Usage(format!("unknown descriptor {name:?}")))?;
    let variant: Variant = variant.parse().map_err(Error::Usage)?;
    match size {
        "default" => Ok(ArchitectureDescriptor::default_for(variant)),
        "small" => Ok(ArchitectureDescriptor::small(variant)),
        _ => Err(Error::Usage(format!(
            "unknown descriptor {name:?} (expected default-binary, default-3class, small-binary or small-3class)"
        ))),
    }
}

pub fn run(cli: Cli) -> Result<(), Error> {
    let progress: &dyn Observer = if cli.quiet { &NoopObserver } else { &ProgressObserver };
    match cli.command {
        Command::Stats { manifest, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let stats = occurrence_stats(&m.load_labels()?)?;
            let prov = json!({"tool": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION"), "manifest": manifest});
            let text = format!("# provenance: {prov}\n{}", stats_csv(&stats));
            write_out(out.as_deref(), text.as_bytes())
        }
        Command::Voxelize { manifest, c, out } => {
            if c < 2 {
                return Err(Error::Usage(format!("c must be at least 2, got {c}")));
            }
            let ds = load_dataset(&manifest)?;
            fs::create_dir_all(&out).map_err(|source| Error::Io { path: out.clone(), source })?;
            let mut frames = Vec::with_capacity(ds.frames.len());
            for f in &ds.frames {
                let grid = encode_frame(&f.points, c)
                    .map_err(|source| ExperimentError::Frame { frame_id: f.frame_id.clone(), source })?;
                let file = format!("{}.vox", f.frame_id);
                let path = out.join(&file);
                fs::write(&path, grid.to_bytes()).map_err(|source| Error::Io { path, source })?;
                frames.push(json!({"frame_id": f.frame_id, "subject_id": f.subject_id, "file": file, "active": grid.count()}));
            }
            let mut prov = tool_provenance();
            prov["manifest"] = json!(manifest);
            prov["c"] = json!(c);
            let index = json!({"provenance": prov, "frames": frames});
            let path = out.join("index.json");
            let body = serde_json::to_vec_pretty(&index).expect("JSON values serialize");
            fs::write(&path, body).map_err(|source| Error::Io { path, source })
        }
        Command::Train { exp, out } => {
            let cfg = resolve_config(&exp)?;
            let ds = load_dataset(&require(&cfg.train_manifest, "--manifest")?)?;
            let data = prepare(&ds, ds.au_ids(), cfg.c)?;
            let outcome = train_full(&cfg, &data, progress)?;
            let mut prov = provenance(&cfg);
            prov["aus"] = json!(data.au_ids.iter().map(|a| a.0.clone()).collect::<Vec<_>>());
            prov["final_loss"] = json!(outcome.epoch_losses.last());
            let bytes = save_checkpoint(&outcome.network, Some(&prov));
            write_out(Some(&out), &bytes)
        }
        Command::Eval { model, manifest, threshold, batch_size, output } => {
            let bytes = fs::read(&model).map_err(|source| Error::Io { path: model.clone(), source })?;
            let (net, header) = load_checkpoint(&bytes)
                .map_err(|source| Error::Net { context: model.display().to_string(), source })?;
            let prov = header.provenance.unwrap_or(Value::Null);
            let mut cfg = prov
                .get("config")
                .and_then(|c| serde_json::from_value::<ExperimentConfig>(c.clone()).ok())
                .unwrap_or_default();
            cfg.variant = header.descriptor.variant;
            cfg.c = header.descriptor.input_c;
            cfg.test_manifest = Some(manifest.clone());
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
            let ds = load_dataset(&manifest)?;
            let aus: Vec<AuId> = match prov.get("aus").and_then(|a| a.as_array()) {
                Some(list) => list.iter().filter_map(|v| v.as_str()).map(|s| AuId(s.to_string())).collect(),
                None => ds.au_ids().to_vec(),
            };
            let data = prepare(&ds, &aus, cfg.c)?;
            let scores = evaluate(&net, &data, cfg.threshold, batch_size, 0, &NoopObserver)?;
            let mut report = eval_report(&cfg, &aus, &scores);
            report.provenance["model"] = json!(model);
            write_out(output.out.as_deref(), report.emit(output.format).as_bytes())
        }
        Command::Crossval { exp, output } => {
            let cfg = resolve_config(&exp)?;
            let ds = load_dataset(&require(&cfg.train_manifest, "--manifest")?)?;
            let data = prepare(&ds, ds.au_ids(), cfg.c)?;
            let results =
                cfg.folds.iter().map(|&k| run_cv(&cfg, &data, k, progress)).collect::<Result<Vec<_>, _>>()?;
            let report = cv_report(&cfg, &results);
            write_out(output.out.as_deref(), report.emit(output.format).as_bytes())
        }
        Command::Crossdataset { exp, output } => {
            let cfg = resolve_config(&exp)?;
            let train = load_dataset(&require(&cfg.train_manifest, "--train-manifest")?)?;
            let test = load_dataset(&require(&cfg.test_manifest, "--test-manifest")?)?;
            let results = cfg
                .folds
                .iter()
                .map(|&k| run_cross_dataset(&cfg, &train, &test, k, progress))
                .collect::<Result<Vec<_>, _>>()?;
            let report = cross_dataset_report(&cfg, &results);
            write_out(output.out.as_deref(), report.emit(output.format).as_bytes())
        }
        Command::Gradcheck { descriptor, seed, samples } => {
            let desc = descriptor_by_name(&descriptor)?;
            let opts = NetworkCheck { per_tensor: (samples > 0).then_some(samples), ..Default::default() };
            let r = check_network(&desc, seed, opts)
                .map_err(|source| Error::Net { context: format!("gradcheck {descriptor}"), source })?;
            println!("descriptor {descriptor} seed {seed} checked {} skipped {}", r.checked, r.skipped);
            println!("max relative error {:e} at {}", r.max_rel_error, r.worst);
            if r.passed() {
                Ok(())
            } else {
                Err(Error::GradCheck { max_rel_error: r.max_rel_error, worst: r.worst })
            }
        }
        Command::Synth { spec, preset, subjects, frames, sigma, unknown_rate, seed, out } => {
            let spec = match spec {
                Some(path) => {
                    let raw = fs::read_to_string(&path)
                        .map_err(|e| Error::Usage(format!("cannot read spec {}: {e}", path.display())))?;
                    serde_json::from_str::<SynthSpec>(&raw)
                        .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?
                }
                None => {
                    let mut s = match preset.as_str() {
                        "bp4d" => SynthSpec::bp4d(subjects, frames, sigma, seed),
                        "bp4d-plus" => SynthSpec::bp4d_plus(subjects, frames, sigma, seed),
                        other => return Err(Error::Usage(format!("unknown preset {other:?} (expected bp4d or bp4d-plus)"))),
                    };
                    s.unknown_rate = unknown_rate;
                    s
                }
            };
            let ds = generate(&spec)?;
            let manifest = write_dataset(&ds, &out)?;
            let path = out.join("synth_spec.json");
            let mut record = serde_json::to_value(&spec).expect("spec serializes");
            record["provenance"] = tool_provenance();
            let body = serde_json::to_vec_pretty(&record).expect("JSON values serialize");
            fs::write(&path, body).map_err(|source| Error::Io { path, source })?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

/// Parse `args` (program name first), run, and map the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
