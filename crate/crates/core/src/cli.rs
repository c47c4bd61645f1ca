//! Command-line interface. Exit codes: 0 success, 1 validation failure,
//! 2 filesystem failure, 3 a scanned graph is suspicious.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::archjson;
use crate::data::{Family, SyntheticTask};
use crate::detector::{inject_mab, DetectorConfig, DetectorMode};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, ExperimentConfig, ExperimentResult};
use crate::models;
use crate::poison::{poison_dataset, LabelPolicy, PoisonSpec, PoisonedExample};
use crate::scanner::{scan_graph, ScanConfig, Verdict};
use crate::train::{evaluate, train, TrainConfig};
use crate::trigger::TriggerSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_SUSPICIOUS: i32 = 3;

/// Environment variable naming the default experiment output directory.
pub const OUT_ENV: &str = "ARCHDOOR_OUT";

#[derive(Debug, Parser)]
#[command(name = "archdoor", version, about = "Architectural backdoor lab: build, inject, train and scan network graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a built-in architecture as an .archjson file.
    Build {
        #[arg(long)]
        arch: String,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        input_size: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Add a trigger-detector branch to a graph.
    Inject {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Robust)]
        mode: ModeArg,
        #[arg(long, default_value_t = 10)]
        alpha: u32,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, default_value_t = 3)]
        window: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Poison a dataset and write the manifest of changed examples.
    Poison {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        fraction: f64,
        /// Relabel poisoned examples to this class; omit for random labels.
        #[arg(long)]
        target: Option<usize>,
        #[arg(long, value_enum, default_value_t = PatternArg::Checkerboard)]
        trigger: PatternArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train a graph from a JSON training config.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = PatternArg::Checkerboard)]
        trigger: PatternArg,
        /// Parameter store output (JSON).
        #[arg(short, long)]
        out: PathBuf,
        /// Per-epoch metrics as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run a multi-seed experiment from a JSON config.
    Experiment {
        config: PathBuf,
        /// Output directory; overrides the config and the ARCHDOOR_OUT variable.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Comma-separated seeds overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Scan graph files; exit 3 if any is suspicious.
    Scan {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 100.0)]
        threshold: f64,
    },
    /// Print the summary table of a finished experiment.
    Report { dir: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Naive,
    Robust,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PatternArg {
    Checkerboard,
    WhiteBox,
}

impl PatternArg {
    fn spec(self) -> TriggerSpec {
        match self {
            PatternArg::Checkerboard => TriggerSpec::checkerboard(),
            PatternArg::WhiteBox => TriggerSpec::white_box(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Shapes,
    Stripes,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Synthetic family (used unless IDX or CIFAR paths are given).
    #[arg(long, value_enum, default_value_t = FamilyArg::Shapes)]
    pub synthetic: FamilyArg,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    #[arg(long, num_args = 1.., conflicts_with = "idx_images")]
    pub cifar: Option<Vec<PathBuf>>,
}

impl DataArgs {
    fn load(&self) -> Result<crate::data::Dataset> {
        use crate::data::{load_cifar_binary, load_idx, Split};
        if let (Some(i), Some(l)) = (&self.idx_images, &self.idx_labels) {
            return load_idx(i, l, Split::Train);
        }
        if let Some(paths) = &self.cifar {
            return load_cifar_binary(paths, Split::Train);
        }
        let family = match self.synthetic {
            FamilyArg::Shapes => Family::Shapes,
            FamilyArg::Stripes => Family::Stripes,
        };
        SyntheticTask { family, ..SyntheticTask::shapes(self.classes) }.generate(self.n, self.data_seed, Split::Train)
    }
}

#[derive(Serialize)]
struct PoisonManifest<'a> {
    num_examples: usize,
    spec: &'a PoisonSpec,
    seed: u64,
    poisoned: Vec<PoisonedExample>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    archjson::write_atomic(path, &serde_json::to_string_pretty(value).expect("serializes"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Execute one parsed command; returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Build { arch, classes, input_size, out } => {
            let g = models::build_named_sized(&arch, classes, input_size)?;
            archjson::write(&out, &g)?;
            println!("wrote {} ({} nodes) to {}", g.name, g.len(), out.display());
        }
        Command::Inject { input, mode, alpha, beta, delta, window, out } => {
            let mode = match mode {
                ModeArg::Naive => DetectorMode::Naive,
                ModeArg::Robust => DetectorMode::Robust,
            };
            let cfg = DetectorConfig { alpha, beta, delta, window, mode };
            let host = archjson::read(&input)?;
            let (g, inj) = inject_mab(&host, &cfg)?;
            archjson::write(&out, &g)?;
            println!(
                "injected {} detector nodes at node {} (merge node {}) into {}",
                inj.detector.len(),
                inj.site,
                inj.merge,
                out.display()
            );
        }
        Command::Poison { data, fraction, target, trigger, seed, out } => {
            let ds = data.load()?;
            let spec = PoisonSpec {
                fraction,
                trigger: trigger.spec(),
                label_policy: target.map_or(LabelPolicy::Random, LabelPolicy::FixedTarget),
            };
            let (_, poisoned) = poison_dataset(&ds, &spec, seed)?;
            println!("poisoned {} of {} examples", poisoned.len(), ds.len());
            write_json(&out, &PoisonManifest { num_examples: ds.len(), spec: &spec, seed, poisoned })?;
        }
        Command::Train { graph, config, epochs, seed, trigger, out, history } => {
            let g = archjson::read(&graph)?;
            let mut cfg: TrainConfig = read_json(&config)?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let t = trigger.spec();
            let (params, hist) = train(&g, &cfg, Some(&t))?;
            let (_, test) = cfg.dataset.load()?;
            let m = evaluate(&g, &params, &test, Some(&t))?;
            write_json(&out, &params)?;
            if let Some(h) = history {
                archjson::write_atomic(&h, &hist.to_csv())?;
            }
            println!(
                "task accuracy {:.4}, triggered accuracy {:.4}, ratio {:.3}",
                m.task_accuracy, m.triggered_accuracy, m.ratio
            );
        }
        Command::Experiment { config, out, jobs, seeds } => {
            let mut cfg = ExperimentConfig::read(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(o) = out {
                cfg.out_dir = Some(o);
            }
            let dir = cfg
                .out_dir
                .clone()
                .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("archdoor-out"));
            let result = run_experiment(&cfg, Some(&dir), jobs)?;
            print!("{}", result.summary());
            println!("results in {}", dir.display());
        }
        Command::Scan { files, json, threshold } => {
            let cfg = ScanConfig { absolute_threshold: threshold, ..ScanConfig::default() };
            let mut suspicious = false;
            let mut reports = Vec::new();
            for f in &files {
                let g = archjson::read(f)?;
                let r = scan_graph(&g, &cfg)?;
                suspicious |= r.verdict == Verdict::Suspicious;
                if !json {
                    print!("{}: {r}", f.display());
                }
                reports.push(r);
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&reports).expect("serializes"));
            }
            return Ok(if suspicious { EXIT_SUSPICIOUS } else { EXIT_OK });
        }
        Command::Report { dir } => {
            let result: ExperimentResult = read_json(&dir.join("aggregate.json"))?;
            print!("{}", result.summary());
        }
    }
    Ok(EXIT_OK)
}

/// Parse arguments, run, and map errors to exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
