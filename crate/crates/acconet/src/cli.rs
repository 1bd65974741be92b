//! Command-line interface: train / infer / eval / plot-pr, driven by one
//! configuration file with flag overrides (flag > file > default).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::loss::LossMode;
use crate::metrics;
use crate::plot;
use crate::trainer;
use crate::DefaultScalar;

#[derive(Parser, Debug)]
#[command(name = "acconet", version, about = "Salient object detection for optical remote-sensing images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Ablation variant: full, Baseline, +ACCoM, +BAB, w/o LB, w/o AB,
    /// w/ DC, w/ NC, BCE-only, IoU-only.
    #[arg(long)]
    pub ablation: Option<String>,
    /// both | bce | iou
    #[arg(long)]
    pub loss_mode: Option<String>,
    /// vgg16-shaped | custom
    #[arg(long)]
    pub backbone: Option<String>,
    /// Use the scaled-down schedule (64x64, channels 8/16/32/64/64).
    #[arg(long)]
    pub micro: bool,
}

impl Overrides {
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.data_root {
            cfg.data_root = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = &self.ablation {
            cfg.ablation = v.clone();
        }
        if let Some(v) = &self.loss_mode {
            cfg.loss_mode = LossMode::parse(v)?;
        }
        if let Some(v) = &self.backbone {
            cfg.backbone = v.clone();
        }
        if self.micro {
            cfg.micro = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on `<data_root>/train`.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        /// Validate the configuration and print the resolved parameter
        /// table without training.
        #[arg(long)]
        dry_run: bool,
        /// Resume from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write saliency maps for a directory of images.
    Infer {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of input images.
        #[arg(long)]
        images: PathBuf,
    },
    /// Evaluate saliency maps against ground-truth masks and write the
    /// nine-metric report plus the PR curve.
    Eval {
        /// Directory of predicted saliency maps.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth masks.
        #[arg(long)]
        gt: PathBuf,
        /// Output directory for report.txt and pr_curve.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Plot one or more PR-curve files to an image.
    PlotPr {
        /// PR-curve CSV files (repeatable).
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Output plot image path.
        #[arg(long, default_value = "pr_plot.png")]
        out: PathBuf,
        /// Also write the merged delimited text here.
        #[arg(long)]
        combined: Option<PathBuf>,
    },
}

/// Run the CLI against explicit arguments (the first entry is the program
/// name). Errors bubble up for the binary to report with a nonzero exit.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Train {
            overrides,
            dry_run,
            resume,
        } => {
            let mut cfg = overrides.resolve()?;
            if let Some(r) = resume {
                cfg.resume = Some(r);
            }
            if dry_run {
                print!("{}", cfg.resolved_table());
                return Ok(());
            }
            let outcome = trainer::train::<DefaultScalar>(&cfg)?;
            println!(
                "trained {} epoch(s); loss {:.6} -> {:.6}; checkpoint {}",
                outcome.epochs_run,
                outcome.initial_loss,
                outcome.final_loss,
                outcome.final_checkpoint.display()
            );
            Ok(())
        }
        Command::Infer {
            overrides,
            checkpoint,
            images,
        } => {
            let cfg = overrides.resolve()?;
            let out_dir = cfg.out_dir.join("saliency");
            let written = trainer::infer::<DefaultScalar>(&cfg, &checkpoint, &images, &out_dir)?;
            println!("wrote {} saliency map(s) to {}", written.len(), out_dir.display());
            Ok(())
        }
        Command::Eval { pred, gt, out } => {
            let report = metrics::evaluate_dataset(&pred, &gt)?;
            std::fs::create_dir_all(&out)?;
            let report_path = out.join("report.txt");
            let pr_path = out.join("pr_curve.csv");
            metrics::write_report(&report, &report_path)?;
            metrics::write_pr_csv(&report.pr_curve, &pr_path)?;
            print!("{}", metrics::report_to_string(&report));
            println!("report: {}", report_path.display());
            println!("pr curve: {}", pr_path.display());
            Ok(())
        }
        Command::PlotPr { inputs, out, combined } => {
            let mut curves = Vec::new();
            for path in &inputs {
                let points = metrics::read_pr_csv(path)?;
                let label = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("curve")
                    .to_string();
                curves.push((label, points));
            }
            plot::render_pr_plot(&curves, &out)?;
            if let Some(combined_path) = combined {
                let mut text = String::from("curve,threshold,precision,recall\n");
                for (label, points) in &curves {
                    for p in points {
                        text.push_str(&format!(
                            "{label},{:.6},{:.6},{:.6}\n",
                            p.threshold, p.precision, p.recall
                        ));
                    }
                }
                std::fs::write(&combined_path, text)?;
            }
            println!("plot: {}", out.display());
            Ok(())
        }
    }
}
