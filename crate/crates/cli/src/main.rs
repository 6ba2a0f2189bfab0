use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use isofno::darcy::generate_dataset;
use isofno::grid::{ChannelField, GroupElement};
use isofno::io::{
    load_checkpoint, load_dataset, save_checkpoint, save_dataset, write_eval_csv,
    write_metrics_csv, write_prediction_csv,
};
use isofno::metrics::dataset_report;
use isofno::model::{count_parameters, count_spectral_parameters, ModelConfig, Operator, Variant};
use isofno::suites::{run_suite, Suite};
use isofno::train::{train_with, TrainConfig};

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Standard,
    Iso,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Standard => Variant::Standard,
            VariantArg::Iso => Variant::Isotropic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    None,
    FlipX,
    FlipY,
    Transpose,
    Rot90,
}

impl From<TransformArg> for GroupElement {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::None => GroupElement::Identity,
            TransformArg::FlipX => GroupElement::FlipX,
            TransformArg::FlipY => GroupElement::FlipY,
            TransformArg::Transpose => GroupElement::Transpose,
            TransformArg::Rot90 => GroupElement::Rot90,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Fft,
    Symmetry,
    Equivariance,
    Gradcheck,
    Darcy,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Fft => Suite::Fft,
            SuiteArg::Symmetry => Suite::Symmetry,
            SuiteArg::Equivariance => Suite::Equivariance,
            SuiteArg::Gradcheck => Suite::Gradcheck,
            SuiteArg::Darcy => Suite::Darcy,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "isofno",
    version,
    about = "Fourier neural operators with an isotropic spectral kernel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Darcy-flow dataset.
    Generate {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = VariantArg::Iso)]
        variant: VariantArg,
        #[arg(long, default_value_t = 16)]
        modes: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        /// Zero cells added around the lifted field; needed to learn
        /// problems with a non-periodic boundary.
        #[arg(long, default_value_t = 0)]
        padding: usize,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 20)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset, optionally transformed.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = TransformArg::None)]
        transform: TransformArg,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Print the exact parameter count of a configuration.
    Params {
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[arg(long)]
        modes: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        layers: usize,
    },
    /// Export input, reference and prediction grids for one sample.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Run a property suite and exit nonzero if any check fails.
    Check {
        #[arg(long, value_enum)]
        suite: SuiteArg,
    },
}

fn create(path: &PathBuf) -> isofno::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> isofno::Result<bool> {
    match cli.command {
        Command::Generate {
            count,
            resolution,
            seed,
            out,
        } => {
            let data = generate_dataset(count, seed, resolution)?;
            save_dataset(&out, &data)?;
            println!(
                "wrote {count} samples at {resolution}x{resolution} to {}",
                out.display()
            );
        }
        Command::Train {
            data,
            test,
            variant,
            modes,
            width,
            layers,
            padding,
            epochs,
            batch,
            lr,
            seed,
            out,
            metrics_csv,
        } => {
            let variant = Variant::from(variant);
            let train_set = load_dataset(&data)?;
            let test_set = load_dataset(&test)?;
            let mcfg = ModelConfig {
                padding,
                ..ModelConfig::new(variant, width, modes, layers)
            };
            let cfg = TrainConfig {
                epochs,
                batch_size: batch,
                lr0: lr,
                seed,
                ..TrainConfig::default()
            };
            println!("{variant} model, {} parameters", count_parameters(&mcfg));
            println!("epoch  train_l2  test_l2  train_h2  test_h2");
            let outcome = train_with(&cfg, &mcfg, &train_set, &test_set, |r| {
                println!(
                    "{:5}  {:.5}  {:.5}  {:.5}  {:.5}",
                    r.epoch, r.train_l2, r.test_l2, r.train_h2, r.test_h2
                );
            })?;
            save_checkpoint(&out, &outcome.params)?;
            if let Some(path) = metrics_csv {
                let mut w = create(&path)?;
                write_metrics_csv(&mut w, &outcome.history)?;
                w.flush()?;
            }
        }
        Command::Eval {
            model,
            data,
            transform,
            out_csv,
        } => {
            let params = load_checkpoint(&model)?;
            let samples = load_dataset(&data)?;
            let op = Operator::new(&params)?;
            let transform = GroupElement::from(transform);
            let report = dataset_report(&op, &samples, transform)?;
            println!(
                "transform {transform}: mean l2 {} mean h2 {}",
                report.mean_l2, report.mean_h2
            );
            if let Some(path) = out_csv {
                let mut w = create(&path)?;
                write_eval_csv(&mut w, &report)?;
                w.flush()?;
            }
        }
        Command::Params {
            variant,
            modes,
            width,
            layers,
        } => {
            let cfg = ModelConfig::new(variant.into(), width, modes, layers);
            cfg.validate()?;
            println!("total {}", count_parameters(&cfg));
            println!("spectral {}", count_spectral_parameters(&cfg));
        }
        Command::Predict {
            model,
            data,
            index,
            out_csv,
        } => {
            let params = load_checkpoint(&model)?;
            let samples = load_dataset(&data)?;
            let s = samples.get(index).ok_or_else(|| {
                isofno::Error::Bounds(format!(
                    "index {index} outside a dataset of {}",
                    samples.len()
                ))
            })?;
            let pred = Operator::new(&params)?
                .forward(&ChannelField::from_grid(&s.a))?
                .grid(0);
            let mut w = create(&out_csv)?;
            write_prediction_csv(&mut w, &s.a, &s.u, &pred)?;
            w.flush()?;
        }
        Command::Check { suite } => {
            let suite = Suite::from(suite);
            let report = run_suite(suite)?;
            for c in &report.checks {
                println!("{c}");
            }
            let passed = report.passed();
            println!(
                "suite {suite}: {}",
                if passed { "passed" } else { "FAILED" }
            );
            return Ok(passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
