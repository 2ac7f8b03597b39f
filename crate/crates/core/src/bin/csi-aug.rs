use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use csi_aug::augment::{self, AugmentMethod, AugmentPlan};
use csi_aug::channel::{synthesize_dataset, Scenario};
use csi_aug::harness::{self, ExperimentConfig, ExperimentReport, Regime, Subsample};
use csi_aug::io::{self, AxisOrder};
use csi_aug::mlp::{self, Checkpoint, MlpModel, Standardizer, TrainConfig};
use csi_aug::{Error, Result};

#[derive(Parser)]
#[command(name = "csi-aug", version, about = "CSI augmentation and MLP localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Phase,
    Amplitude,
    Noise,
}

impl From<MethodArg> for AugmentMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Phase => AugmentMethod::Phase,
            MethodArg::Amplitude => AugmentMethod::Amplitude,
            MethodArg::Noise => AugmentMethod::Noise,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsampleArg {
    Random,
    Prefix,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset from a scenario file.
    Generate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        n: usize,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario noise variance to reach this SNR.
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand a dataset with one augmentation method.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Output size as a multiple of the input size.
        #[arg(long, conflicts_with = "target_size", required_unless_present = "target_size")]
        multiple: Option<f64>,
        #[arg(long)]
        target_size: Option<usize>,
        #[arg(long, default_value_t = 1.5)]
        p_star_db: f64,
        #[arg(long, default_value_t = augment::DEFAULT_NOISE_VARIANCE)]
        noise_var: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train an MLP and save a checkpoint.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_standardize: bool,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Print test MSE and RMSE of a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run a methods × multiples × repetitions grid.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        regime: Option<String>,
        #[arg(long, value_enum)]
        subsample: Option<SubsampleArg>,
        #[arg(long)]
        no_standardize: bool,
    },
    /// Train on clean data, evaluate on a perturbed test set.
    Robustness {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_standardize: bool,
    },
    /// Convert a raw little-endian f32 (re, im) array plus a labels CSV into `.csid`.
    Ingest {
        #[arg(long)]
        values: PathBuf,
        /// CSV with columns x,y (header optional).
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, num_args = 3, value_names = ["M", "R", "K"])]
        dims: Vec<usize>,
        /// Axis order of the raw array as letters n, m, r, a.
        #[arg(long, default_value = "narm")]
        order: String,
        #[arg(long, default_value = "wild")]
        env_tag: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, preset: Option<String>) -> Result<ExperimentConfig> {
    let mut text = fs::read_to_string(path)?;
    if let Some(p) = preset {
        text = format!("preset = {}\n{text}", toml::Value::String(p));
    }
    ExperimentConfig::from_toml_str(&text)
}

fn print_summary(report: &ExperimentReport) {
    println!("environment,regime,multiple,method,runs,median_mse,min_mse,max_mse,median_rmse");
    for s in &report.summary {
        println!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            s.environment, s.regime, s.multiple, s.method, s.runs, s.median_mse, s.min_mse, s.max_mse, s.median_rmse
        );
    }
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed; see the report sidecar");
    }
}

fn read_labels(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 {
            return Err(Error::Format(format!("labels line {}: expected 2 columns, got {}", i + 1, rec.len())));
        }
        match (rec[0].trim().parse::<f64>(), rec[1].trim().parse::<f64>()) {
            (Ok(x), Ok(y)) => out.extend([x, y]),
            _ if i == 0 => continue,
            _ => return Err(Error::Format(format!("labels line {}: not numeric", i + 1))),
        }
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { scenario, n, seed, snr_db, out } => {
            let mut s = Scenario::from_toml_str(&fs::read_to_string(scenario)?)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(snr) = snr_db {
                s = s.with_snr_db(snr);
            }
            let ds = synthesize_dataset(&s, n)?;
            let bytes = io::write_csid_file(&ds, &out)?;
            println!("wrote {} samples ({bytes} bytes) to {}", ds.len(), out.display());
        }
        Command::Augment { input, out, method, multiple, target_size, p_star_db, noise_var, seed } => {
            let ds = io::read_csid_file(&input)?;
            let target = match (multiple, target_size) {
                (Some(m), None) => AugmentPlan::target_for_multiple(m, ds.len())?,
                (None, Some(t)) => t,
                _ => unreachable!("clap enforces exactly one"),
            };
            let plan = AugmentPlan {
                method: method.into(),
                target_size: target,
                p_star_db: Some(p_star_db),
                noise_variance: noise_var,
                seed,
            };
            let aug = augment::augment(&ds, &plan)?;
            io::write_csid_file(&aug, &out)?;
            println!("wrote {} samples ({} augmented) to {}", aug.len(), aug.len() - ds.len(), out.display());
        }
        Command::Train { input, epochs, batch, lr, seed, no_standardize, model_out } => {
            let ds = io::read_csid_file(&input)?;
            ds.check()?;
            let mut enc = mlp::encode_dataset(&ds);
            let standardizer = if no_standardize {
                None
            } else {
                let st = Standardizer::fit(enc.features.view())?;
                st.apply(&mut enc.features)?;
                Some(st)
            };
            let config = TrainConfig {
                epochs,
                batch_size: batch,
                learning_rate: lr,
                shuffle_seed: seed,
                init_seed: seed,
                ..TrainConfig::default()
            };
            config.validate()?;
            let model = MlpModel::new(&MlpModel::default_sizes(enc.features.ncols()), seed)?;
            let outcome = mlp::train(model, &enc, &config)?;
            let ckpt = Checkpoint { model: outcome.model, standardizer, init_seed: seed, shuffle_seed: seed };
            ckpt.save(&model_out)?;
            println!(
                "trained {epochs} epochs on {} samples; final training loss {:.6}",
                enc.len(),
                outcome.loss_trace.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Evaluate { model, input } => {
            let ckpt = Checkpoint::load(model)?;
            let ds = io::read_csid_file(input)?;
            let enc = ckpt.prepare(&ds)?;
            let mse = mlp::evaluate_mse(&ckpt.model, &enc)?;
            println!("MSE {mse:.6}");
            println!("RMSE {:.6}", mse.sqrt());
        }
        Command::Experiment { config, out, preset, regime, subsample, no_standardize } => {
            let mut c = load_config(&config, preset)?;
            if let Some(r) = regime {
                c.regime = r.parse::<Regime>()?;
            }
            if let Some(s) = subsample {
                c.subsample = match s {
                    SubsampleArg::Random => Subsample::Random,
                    SubsampleArg::Prefix => Subsample::Prefix,
                };
            }
            if no_standardize {
                c.train.standardize = false;
            }
            c.validate()?;
            print_summary(&harness::run_experiment(&c, Some(&out))?);
        }
        Command::Robustness { config, out, no_standardize } => {
            let mut c = load_config(&config, None)?;
            if no_standardize {
                c.train.standardize = false;
            }
            print_summary(&harness::run_robustness(&c, Some(&out))?);
        }
        Command::Ingest { values, labels, dims, order, env_tag, out } => {
            let dims = csi_aug::csi::TensorDims::new(dims[0], dims[1], dims[2])?;
            let raw = fs::read(values)?;
            if raw.len() % 8 != 0 {
                return Err(Error::Format(format!("value file length {} is not a multiple of 8", raw.len())));
            }
            let values: Vec<_> = raw
                .chunks_exact(8)
                .map(|c| {
                    let re = f32::from_le_bytes(c[..4].try_into().unwrap());
                    let im = f32::from_le_bytes(c[4..].try_into().unwrap());
                    csi_aug::csi::ComplexValue::new(re, im)
                })
                .collect();
            let labels = read_labels(&labels)?;
            let order: AxisOrder = order.parse()?;
            let ds = io::ingest_raw(&values, &labels, dims, &env_tag, order)?;
            io::write_csid_file(&ds, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
