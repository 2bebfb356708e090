use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use tamformer::autodiff::DEFAULT_THRESHOLD;
use tamformer::data::{
    generate_synthetic, load_dataset, save_dataset, split_dataset, DatasetManifest,
    FeatureSequence, GeneratorConfig,
};
use tamformer::error::{Error, Result};
use tamformer::eval::{evaluate_at_times, emit_report, ReportFormat};
use tamformer::json_io;
use tamformer::maskgen::{dump_mask_csv, sparsity_stats, DEFAULT_SPARSITY_THRESHOLD};
use tamformer::model::{forward_trace, gradient_probe, load_checkpoint, ModelConfig};
use tamformer::plot::plot_f1_over_time;
use tamformer::training::{train_two_stage, TrainConfig};

#[derive(Parser)]
#[command(name = "tamformer", version, about = "Early crossing-intent prediction on synthetic pedestrian sequences")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    /// Small dimensions for fast runs and tests.
    Desk,
    /// Published-scale dimensions.
    Paper,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (JSONL plus a manifest sidecar).
    GenData {
        /// Number of samples.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Output JSONL path.
        #[arg(long)]
        out: PathBuf,
        /// Crossing-class fraction.
        #[arg(long, default_value_t = 0.5)]
        balance: f64,
        /// Optional "train,val,test" fractions; writes three stratified
        /// files next to --out instead of one.
        #[arg(long)]
        split: Option<String>,
    },
    /// Two-stage training: cross entropy, then cross entropy plus the
    /// anticipation-gap regularizer.
    Train {
        /// Dataset JSONL to train on.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and the train log.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        /// Model config JSON overriding the profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Off trains stage 1 only.
        #[arg(long, value_enum, default_value_t = Toggle::On)]
        stage2: Toggle,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs_stage1: Option<usize>,
        #[arg(long)]
        epochs_stage2: Option<usize>,
        #[arg(long)]
        reg_scale: Option<f64>,
        /// Expand the train set with shifted encoding windows.
        #[arg(long)]
        augment: bool,
    },
    /// Score a split at the query steps nearest the given lead times.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated lead times in seconds, e.g. "0.8,0.7,0.6,0.5".
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        /// Report output path.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Defaults to json when --report ends in .json, csv otherwise.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Check analytic gradients against central finite differences over
    /// every parameter; exits 2 if the max relative error reaches 1e-4.
    GradCheck {
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        /// Model config JSON overriding the profile.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Write both learned masks of every sample as CSV grids.
    DumpMasks {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Mask value counted as "frame used".
        #[arg(long, default_value_t = DEFAULT_SPARSITY_THRESHOLD)]
        threshold: f64,
    },
    /// F1-over-lead-time SVG from one or more JSON reports.
    Plot {
        /// Comma-separated report JSON paths.
        #[arg(long, value_delimiter = ',', required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated legend names; defaults to file stems.
        #[arg(long, value_delimiter = ',')]
        names: Option<Vec<String>>,
    },
}

fn model_config(profile: Profile, config: &Option<PathBuf>) -> Result<ModelConfig> {
    let cfg = match config {
        Some(path) => json_io::read_json_file(path)?,
        None => match profile {
            Profile::Desk => ModelConfig::desk(),
            Profile::Paper => ModelConfig::paper(),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn class_counts(samples: &[FeatureSequence]) -> (usize, usize) {
    let pos = samples.iter().filter(|s| s.label == 1).count();
    (pos, samples.len() - pos)
}

fn save_split(
    path: &Path,
    samples: &[FeatureSequence],
    base: &DatasetManifest,
    fractions: (f64, f64, f64),
) -> Result<()> {
    let (pos, neg) = class_counts(samples);
    let manifest = DatasetManifest {
        n_crossing: pos,
        n_not_crossing: neg,
        split_fractions: fractions,
        ..base.clone()
    };
    save_dataset(path, samples, &manifest)?;
    println!("wrote {} samples ({pos} crossing / {neg} not) to {}", samples.len(), path.display());
    Ok(())
}

fn with_suffix(out: &Path, tag: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("jsonl");
    out.with_file_name(format!("{stem}.{tag}.{ext}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { n, seed, out, balance, split } => {
            let gen = GeneratorConfig { balance, ..GeneratorConfig::default() };
            let (samples, manifest) = generate_synthetic(n, seed, &gen)?;
            match split {
                None => save_split(&out, &samples, &manifest, (1.0, 0.0, 0.0)),
                Some(spec) => {
                    let fs: Vec<f64> = spec
                        .split(',')
                        .map(|p| p.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| {
                            Error::Contract(format!("--split must be three numbers, got {spec:?}"))
                        })?;
                    if fs.len() != 3 {
                        return Err(Error::Contract(format!(
                            "--split must be three numbers, got {spec:?}"
                        )));
                    }
                    let fractions = (fs[0], fs[1], fs[2]);
                    let (tr, va, te) = split_dataset(&samples, fractions, seed)?;
                    save_split(&with_suffix(&out, "train"), &tr, &manifest, fractions)?;
                    save_split(&with_suffix(&out, "val"), &va, &manifest, fractions)?;
                    save_split(&with_suffix(&out, "test"), &te, &manifest, fractions)
                }
            }
        }
        Cmd::Train {
            data,
            out,
            profile,
            config,
            stage2,
            seed,
            lr,
            batch_size,
            epochs_stage1,
            epochs_stage2,
            reg_scale,
            augment,
        } => {
            let mcfg = model_config(profile, &config)?;
            let mut tcfg = match profile {
                Profile::Desk => TrainConfig::default(),
                Profile::Paper => TrainConfig::paper(),
            };
            tcfg.seed = seed;
            tcfg.augment = augment;
            if let Some(v) = lr {
                tcfg.lr = v;
            }
            if let Some(v) = batch_size {
                tcfg.batch_size = v;
            }
            if let Some(v) = epochs_stage1 {
                tcfg.epochs_stage1 = v;
            }
            if let Some(v) = epochs_stage2 {
                tcfg.epochs_stage2 = v;
            }
            if let Some(v) = reg_scale {
                tcfg.reg_scale = v;
            }
            if stage2 == Toggle::Off {
                tcfg.epochs_stage2 = 0;
            }
            std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            let (samples, _) = load_dataset(&data)?;
            let (_, log) = train_two_stage(&samples, &mcfg, &tcfg, &out)?;
            log.write_csv(&out.join("train_log.csv"))?;
            if let Some(last) = log.rows.last() {
                let auc = last.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into());
                println!(
                    "epoch {} (stage {}): l_total {:.6} acc {:.4} auc {auc} f1 {:.4}",
                    last.epoch, last.stage, last.l_total, last.accuracy, last.f1
                );
            }
            println!("checkpoints and train_log.csv in {}", out.display());
            Ok(())
        }
        Cmd::Eval { data, checkpoint, times, report, threshold, format } => {
            let (samples, manifest) = load_dataset(&data)?;
            let (mcfg, params) = load_checkpoint(&checkpoint)?;
            let mut rep = evaluate_at_times(&params, &mcfg, &samples, &times, threshold)?;
            rep.dataset_seed = Some(manifest.seed);
            let fmt = match format {
                Some(Format::Csv) => ReportFormat::Csv,
                Some(Format::Json) => ReportFormat::Json,
                None => match report.extension().and_then(|e| e.to_str()) {
                    Some("json") => ReportFormat::Json,
                    _ => ReportFormat::Csv,
                },
            };
            for r in &rep.rows {
                let auc = r.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into());
                println!(
                    "t_a {:.2}s: acc {:.4} auc {auc} f1 {:.4} ({} crossing / {} not, mask uses {:.1}/{:.1} frames)",
                    r.t_a, r.accuracy, r.f1, r.n_pos, r.n_neg, r.mean_frames_used, r.mean_frames_available
                );
            }
            emit_report(&rep, &report, fmt)?;
            println!("report written to {}", report.display());
            Ok(())
        }
        Cmd::GradCheck { profile, config, eps, seed } => {
            let cfg = model_config(profile, &config)?;
            let rep = gradient_probe(&cfg, seed, eps)?;
            println!(
                "max relative error {:.3e} over {} parameter elements (eps {:.1e})",
                rep.max_rel_error, rep.n_elements, eps
            );
            if let Some(w) = &rep.worst {
                println!(
                    "worst: {}[{}] analytic {:.6e} numeric {:.6e}",
                    w.param, w.index, w.analytic, w.numeric
                );
            }
            if rep.max_rel_error >= DEFAULT_THRESHOLD {
                return Err(Error::Contract(format!(
                    "max relative error {:.3e} reaches the {DEFAULT_THRESHOLD:.0e} gate",
                    rep.max_rel_error
                )));
            }
            Ok(())
        }
        Cmd::DumpMasks { data, checkpoint, out, threshold } => {
            let (samples, _) = load_dataset(&data)?;
            let (mcfg, params) = load_checkpoint(&checkpoint)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            let mut used = [0usize; 2];
            let mut avail = [0usize; 2];
            for s in &samples {
                let (_, mask_e, mask_d) = forward_trace(&params, &mcfg, s)?;
                for (k, mask) in [&mask_e, &mask_d].into_iter().enumerate() {
                    for (u, a) in sparsity_stats(mask, threshold)? {
                        used[k] += u;
                        avail[k] += a;
                    }
                }
                dump_mask_csv(&mask_e, &out.join(format!("{}.enc.csv", s.sample_id)))?;
                dump_mask_csv(&mask_d, &out.join(format!("{}.dec.csv", s.sample_id)))?;
            }
            for (k, name) in ["encoder", "decoder"].into_iter().enumerate() {
                println!(
                    "{name} mask: {} of {} causal entries at or above {threshold} ({:.1}%)",
                    used[k],
                    avail[k],
                    100.0 * used[k] as f64 / avail[k].max(1) as f64
                );
            }
            println!("{} mask grids written to {}", 2 * samples.len(), out.display());
            Ok(())
        }
        Cmd::Plot { reports, out, names } => {
            let names = match names {
                Some(ns) => {
                    if ns.len() != reports.len() {
                        return Err(Error::Contract(format!(
                            "{} names for {} reports",
                            ns.len(),
                            reports.len()
                        )));
                    }
                    ns
                }
                None => reports
                    .iter()
                    .map(|p| {
                        p.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string()
                    })
                    .collect(),
            };
            let mut pairs = Vec::with_capacity(reports.len());
            for (path, name) in reports.iter().zip(names) {
                pairs.push((name, json_io::read_json_file(path)?));
            }
            plot_f1_over_time(&pairs, &out)?;
            println!("plot written to {}", out.display());
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
