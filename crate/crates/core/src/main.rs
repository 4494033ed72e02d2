use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nef_core::experiments::{paired_difference, run_ablation, sweep_hidden, ExperimentConfig};
use nef_core::hardware::{capacity_plan, layer_throughput, multiplier_schedule, time_per_digit, HardwareParams};
use nef_core::mnist::{binarize, load_split, Dataset, GreyImage, Split, IMAGE_PIXELS};
use nef_core::neuron::{tuning_table, RateNeuronParams};
use nef_core::readout::{infer, load_model, save_model, QuantizedReadout, Rounding};
use nef_core::trainer::{evaluate_float, evaluate_model, seed_regression, train_calibrated, RegressionSettings, Variant};
use nef_core::pipeline::FeatureMap;
use nef_core::{Error, Result};

#[derive(Parser)]
#[command(name = "nef", version, about = "Fixed-point NEF digit recognizer")]
struct Cli {
    /// Report format.
    #[arg(long, value_enum, global = true, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct Data {
    /// Directory with the MNIST IDX files (raw or gzip).
    #[arg(long)]
    mnist_dir: PathBuf,
    /// Use only the first N training digits.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N test digits.
    #[arg(long)]
    test_limit: Option<usize>,
}

impl Data {
    fn load(&self, split: Split) -> Result<Dataset> {
        let ds = load_split(&self.mnist_dir, split)?;
        let limit = match split {
            Split::Train => self.train_limit,
            Split::Test => self.test_limit,
        };
        Ok(match limit {
            Some(n) => ds.truncated(n),
            None => ds,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    Lite,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::Lite => Variant::Lite,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundingArg {
    /// Data-aware rounding against the training activations.
    Calibrated,
    Nearest,
    ErrorFeedback,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write it as a .nefp file.
    Train {
        #[command(flatten)]
        data: Data,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1024)]
        hidden: usize,
        #[arg(long, value_enum, default_value_t = VariantArg::Lite)]
        variant: VariantArg,
        #[arg(long, value_enum, default_value_t = RoundingArg::Calibrated)]
        rounding: RoundingArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test-set error of a saved model.
    Eval {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        model: PathBuf,
    },
    /// Classify one digit.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// A file of 784 raw grey-scale bytes, row-major.
        #[arg(long, conflicts_with_all = ["mnist_dir", "index"])]
        image: Option<PathBuf>,
        #[arg(long, requires = "index")]
        mnist_dir: Option<PathBuf>,
        /// Index into the test split.
        #[arg(long, requires = "mnist_dir")]
        index: Option<usize>,
    },
    /// Configuration ablation over a shared seed list.
    Ablate {
        #[command(flatten)]
        data: Data,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        configs: Vec<u8>,
        #[command(flatten)]
        seeds: Seeds,
        #[arg(long, default_value_t = 1024)]
        hidden: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Median error against hidden-layer size.
    Sweep {
        #[command(flatten)]
        data: Data,
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096")]
        sizes: Vec<usize>,
        #[command(flatten)]
        seeds: Seeds,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        medians_out: Option<PathBuf>,
    },
    /// Seed search with OPIUM lite, then full OPIUM at the chosen seed.
    Regress {
        #[command(flatten)]
        data: Data,
        #[arg(long, default_value_t = 1024)]
        hidden: usize,
        #[arg(long, default_value_t = RegressionSettings::DEFAULT_THRESHOLD)]
        threshold: usize,
        #[arg(long, default_value_t = RegressionSettings::DEFAULT_MAX_SEEDS)]
        max_seeds: usize,
        #[arg(long, default_value_t = 0)]
        start_seed: u64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Throughput and layer-capacity arithmetic.
    Capacity {
        #[arg(long, default_value = "de5")]
        preset: String,
        /// Hidden neurons per digit for the latency figure.
        #[arg(long, default_value_t = 8192)]
        neurons: u64,
    },
    /// Dump the 64×256 tuning-curve table.
    Curves {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Seeds {
    /// Explicit seed list; overrides --seed-start/--seed-count.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, default_value_t = 0)]
    seed_start: u64,
    #[arg(long, default_value_t = 5)]
    seed_count: usize,
}

impl Seeds {
    fn list(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| {
            (0..self.seed_count as u64)
                .map(|i| self.seed_start.wrapping_add(i))
                .collect()
        })
    }
}

struct Report {
    format: Format,
    out: Option<PathBuf>,
}

impl Report {
    fn write_table<T: Serialize>(&self, header: &[&str], rows: &[T], cells: impl Fn(&T) -> Vec<String>) -> Result<()> {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let text = match self.format {
            Format::Csv => {
                let mut s = format!("# generated_unix={stamp}\n{}\n", header.join(","));
                for r in rows {
                    s.push_str(&cells(r).join(","));
                    s.push('\n');
                }
                s
            }
            Format::Json => {
                let body = serde_json::json!({ "generated_unix": stamp, "rows": rows });
                let mut s = serde_json::to_string_pretty(&body).expect("serializable report");
                s.push('\n');
                s
            }
        };
        self.emit(&text)
    }

    fn write_value<T: Serialize>(&self, value: &T, csv: impl Fn(&T) -> String) -> Result<()> {
        let text = match self.format {
            Format::Csv => csv(value),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(value).expect("serializable report");
                s.push('\n');
                s
            }
        };
        self.emit(&text)
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p.clone(), e)),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn log(msg: impl AsRef<str>) {
    let _ = writeln!(std::io::stderr(), "{}", msg.as_ref());
}

fn read_raw_image(path: &Path) -> Result<GreyImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != IMAGE_PIXELS {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {IMAGE_PIXELS} raw bytes, got {}",
            path.display(),
            bytes.len()
        )));
    }
    // The label is unknown for a raw image; 0 is a placeholder.
    GreyImage::new(&bytes, 0)
}

fn run(cli: Cli) -> Result<()> {
    let format = cli.format;
    match cli.command {
        Command::Train {
            data,
            seed,
            hidden,
            variant,
            rounding,
            out,
        } => {
            let train_set = data.load(Split::Train)?;
            let started = Instant::now();
            let features = FeatureMap::fixed_point(seed, hidden)?;
            let (w, gram) = train_calibrated(&features, train_set.images(), variant.into())?;
            log(format!(
                "trained seed {seed}, {hidden} neurons on {} digits in {:.1}s",
                train_set.len(),
                started.elapsed().as_secs_f64()
            ));
            let model = match rounding {
                RoundingArg::Calibrated => {
                    QuantizedReadout::from_weights_calibrated(&w, &gram, seed, features.mapping())?
                }
                RoundingArg::Nearest => {
                    QuantizedReadout::from_weights(&w, seed, features.mapping(), Rounding::Nearest)?
                }
                RoundingArg::ErrorFeedback => {
                    QuantizedReadout::from_weights(&w, seed, features.mapping(), Rounding::ErrorFeedback)?
                }
            };
            save_model(&model, &out)?;
            #[derive(Serialize)]
            struct Trained<'a> {
                model: &'a Path,
                seed: u64,
                hidden: usize,
                scale: f64,
            }
            let t = Trained {
                model: &out,
                seed,
                hidden,
                scale: model.scale(),
            };
            Report { format, out: None }.write_value(&t, |t| {
                format!("model,seed,hidden,scale\n{},{},{},{}\n", t.model.display(), t.seed, t.hidden, t.scale)
            })
        }
        Command::Eval { data, model } => {
            let test = data.load(Split::Test)?;
            let m = load_model(&model)?;
            let e = evaluate_model(&m, test.images())?;
            #[derive(Serialize)]
            struct Eval {
                errors: usize,
                total: usize,
                error_rate: f64,
            }
            let r = Eval {
                errors: e.errors,
                total: e.total,
                error_rate: e.error_rate(),
            };
            Report { format, out: None }.write_value(&r, |r| {
                format!("errors,total,error_rate\n{},{},{:.6}\n", r.errors, r.total, r.error_rate)
            })
        }
        Command::Infer {
            model,
            image,
            mnist_dir,
            index,
        } => {
            let m = load_model(&model)?;
            let (img, label) = match (image, mnist_dir, index) {
                (Some(p), _, _) => (read_raw_image(&p)?, None),
                (None, Some(dir), Some(i)) => {
                    let test = load_split(dir, Split::Test)?;
                    let g = test.images().get(i).cloned().ok_or_else(|| {
                        Error::InvalidArgument(format!("index {i} beyond {} test digits", test.len()))
                    })?;
                    let label = g.label();
                    (g, Some(label))
                }
                _ => return Err(Error::InvalidArgument("give --image or --mnist-dir with --index".into())),
            };
            let digit = infer(&binarize(&img), &m)?;
            #[derive(Serialize)]
            struct Inferred {
                digit: u8,
                label: Option<u8>,
            }
            let r = Inferred { digit, label };
            Report { format, out: None }.write_value(&r, |r| {
                let label = r.label.map(|l| l.to_string()).unwrap_or_default();
                format!("digit,label\n{},{}\n", r.digit, label)
            })
        }
        Command::Ablate {
            data,
            configs,
            seeds,
            hidden,
            out,
        } => {
            let (train_set, test) = (data.load(Split::Train)?, data.load(Split::Test)?);
            let seeds = seeds.list();
            log(format!("ablation: configs {configs:?}, seeds {seeds:?}, {hidden} neurons"));
            let cfgs = configs
                .iter()
                .map(|&c| ExperimentConfig::preset(c, hidden, seeds.clone()))
                .collect::<Result<Vec<_>>>()?;
            let rows = run_ablation(&cfgs, &train_set, &test)?;
            for pair in configs.windows(2) {
                let pick = |c: u8| -> Vec<usize> {
                    rows.iter().filter(|r| r.config == c).map(|r| r.errors).collect()
                };
                let s = paired_difference(&pick(pair[0]), &pick(pair[1]))?;
                log(format!(
                    "config {} - config {}: mean {:+.1}, median {:+.1}, range [{}, {}]",
                    pair[1], pair[0], s.mean, s.median, s.min, s.max
                ));
            }
            Report { format, out }.write_table(&["config", "seed", "errors"], &rows, |r| {
                vec![r.config.to_string(), r.seed.to_string(), r.errors.to_string()]
            })
        }
        Command::Sweep {
            data,
            sizes,
            seeds,
            out,
            medians_out,
        } => {
            let (train_set, test) = (data.load(Split::Train)?, data.load(Split::Test)?);
            let (rows, medians) = sweep_hidden(&sizes, &seeds.list(), &train_set, &test)?;
            for m in &medians {
                log(format!("{} neurons: median error {:.2}%", m.size, 100.0 * m.median_error_rate));
            }
            Report { format, out }.write_table(&["size", "seed", "errors"], &rows, |r| {
                vec![r.size.to_string(), r.seed.to_string(), r.errors.to_string()]
            })?;
            if let Some(p) = medians_out {
                Report { format, out: Some(p) }.write_table(&["size", "median_error_rate"], &medians, |m| {
                    vec![m.size.to_string(), format!("{:.6}", m.median_error_rate)]
                })?;
            }
            Ok(())
        }
        Command::Regress {
            data,
            hidden,
            threshold,
            max_seeds,
            start_seed,
            checkpoint,
            out,
        } => {
            let (train_set, test) = (data.load(Split::Train)?, data.load(Split::Test)?);
            let settings = RegressionSettings {
                n_hidden: hidden,
                error_threshold: threshold,
                max_seeds,
                start_seed,
                checkpoint,
            };
            log(format!("seed regression from s0 = {start_seed}, threshold {threshold}, max {max_seeds} seeds"));
            let outcome = seed_regression(&train_set, &test, &settings)?;
            let model = &outcome.final_model;
            save_model(model, &out)?;
            let features = FeatureMap::fixed_point(outcome.best_seed, hidden)?;
            let full_errors = evaluate_float(&features, &outcome.final_weights, test.images()).errors;
            let fixed_errors = evaluate_model(model, test.images())?.errors;
            #[derive(Serialize)]
            struct Regressed {
                best_seed: u64,
                best_lite_error: usize,
                full_error: usize,
                fixed6_error: usize,
                seeds_tried: usize,
                timed_out: bool,
            }
            let r = Regressed {
                best_seed: outcome.best_seed,
                best_lite_error: outcome.best_lite_error,
                full_error: full_errors,
                fixed6_error: fixed_errors,
                seeds_tried: outcome.seeds_tried,
                timed_out: outcome.timed_out,
            };
            Report { format, out: None }.write_value(&r, |r| {
                format!(
                    "best_seed,best_lite_error,full_error,fixed6_error,seeds_tried,timed_out\n{},{},{},{},{},{}\n",
                    r.best_seed, r.best_lite_error, r.full_error, r.fixed6_error, r.seeds_tried, r.timed_out
                )
            })
        }
        Command::Capacity { preset, neurons } => {
            let hw = match preset.as_str() {
                "de5" => HardwareParams::de5(),
                other => return Err(Error::InvalidArgument(format!("unknown hardware preset {other:?}"))),
            };
            let plan = capacity_plan(&hw);
            #[derive(Serialize)]
            struct Capacity {
                neurons: u64,
                seconds_per_digit: f64,
                layer_digits_per_second: f64,
                max_physical_neurons: u64,
                onchip_layers: u64,
                external_layers: u64,
                total_layers: u64,
                digits_per_second: f64,
            }
            let c = Capacity {
                neurons,
                seconds_per_digit: time_per_digit(&hw, neurons),
                layer_digits_per_second: layer_throughput(&hw, neurons),
                max_physical_neurons: plan.max_physical_neurons,
                onchip_layers: plan.onchip_layers,
                external_layers: plan.external_layers,
                total_layers: plan.total_layers,
                digits_per_second: plan.digits_per_second,
            };
            if matches!(format, Format::Json) {
                let body = serde_json::json!({ "capacity": c, "multiplier_schedule": multiplier_schedule() });
                println!("{}", serde_json::to_string_pretty(&body).expect("serializable"));
                return Ok(());
            }
            Report { format, out: None }.write_value(&c, |c| {
                format!(
                    "neurons,seconds_per_digit,layer_digits_per_second,max_physical_neurons,onchip_layers,external_layers,total_layers,digits_per_second\n{},{:.9},{:.1},{},{},{},{},{}\n",
                    c.neurons, c.seconds_per_digit, c.layer_digits_per_second, c.max_physical_neurons,
                    c.onchip_layers, c.external_layers, c.total_layers, c.digits_per_second
                )
            })
        }
        Command::Curves { out } => {
            let table = tuning_table(&RateNeuronParams::default());
            match (format, out) {
                (Format::Csv, Some(p)) => {
                    let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                    table.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::io(&p, e))
                }
                (Format::Csv, None) => table
                    .write_csv(std::io::stdout().lock())
                    .map_err(|e| Error::io("<stdout>", e)),
                (Format::Json, out) => {
                    let rows: Vec<Vec<u8>> = table.rows().iter().map(|r| r.to_vec()).collect();
                    let text = serde_json::to_string(&serde_json::json!({ "rates": rows })).expect("serializable");
                    Report { format, out }.emit(&(text + "\n"))
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log(format!("error: {e}"));
            ExitCode::FAILURE
        }
    }
}
