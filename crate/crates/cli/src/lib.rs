//! Argument parsing and command dispatch for the `taskdiff` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use taskdiff::baselines::{CartParams, ForestParams, KnnParams};
use taskdiff::eval::{bench_csv, bench_report, run_benchmark, BenchConfig, CausalForestSpec, ModelKind};
use taskdiff::io::{read_dataset, write_atomic};
use taskdiff::mapgen::{build_grid, difficulty_map, export_map_csv, render_svg_slice, DivergingPalette};
use taskdiff::synth::{generate_dataset, DgpSpec, GroundTruthRecord};
use taskdiff::{parse_model, serialize_model, CausalTreeParams, EffectModel, Error, Result, Workspace};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "taskdiff",
    version,
    about = "Personalized task difficulty maps from reach-time data",
    after_help = "Exit codes: 0 success, 1 domain or I/O error, 2 usage error."
)]
struct Cli {
    /// Worker threads for parallel fitting and benchmarking [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: RawCommand,
}

#[derive(Debug, Subcommand)]
enum RawCommand {
    /// Generate a synthetic dataset and a `<out>.truth.toml` record
    Gen {
        /// DGP config (TOML)
        #[arg(long)]
        dgp: PathBuf,
        /// Control samples
        #[arg(long)]
        n0: usize,
        /// Individual samples
        #[arg(long)]
        n1: usize,
        #[arg(long)]
        seed: u64,
        /// Output CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an effect model to a dataset CSV
    Fit(FitArgs),
    /// Print the estimate at one task point
    #[command(allow_negative_numbers = true)]
    Predict {
        /// Model document (JSON)
        #[arg(long)]
        model: PathBuf,
        #[arg(short = 'x', value_parser = finite)]
        x: f64,
        #[arg(short = 'y', value_parser = finite)]
        y: f64,
        #[arg(short = 'z', value_parser = finite)]
        z: f64,
    },
    /// Run a multi-run benchmark, print the table and write CSV
    Bench {
        /// Bench config (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Output CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model over the workspace lattice
    Map {
        /// Model document (JSON)
        #[arg(long)]
        model: PathBuf,
        /// Height of the slice in meters; omit for a layered map (CSV only)
        #[arg(long, value_parser = finite)]
        z_slice: Option<f64>,
        /// Cell size in meters
        #[arg(long, default_value_t = 0.05, value_parser = finite)]
        resolution: f64,
        /// Workspace radius in meters
        #[arg(long, default_value_t = 0.30, value_parser = finite)]
        radius: f64,
        /// Workspace height in meters
        #[arg(long, default_value_t = 0.40, value_parser = finite)]
        height: f64,
        #[arg(long)]
        out_svg: Option<PathBuf>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
}

fn finite(text: &str) -> std::result::Result<f64, String> {
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} is not finite")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ModelChoice {
    CausalTree,
    CausalForest,
    TCart,
    TForest,
    TKnn,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Dataset CSV
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: ModelChoice,
    /// Required; fitting without a seed is refused
    #[arg(long)]
    seed: Option<u64>,
    /// Output model document (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Tree depth limit [default: 6 for causal models, 8 for t_cart and t_forest]
    #[arg(long)]
    max_depth: Option<usize>,
    /// Per-group leaf minimum of causal models [default: 5]
    #[arg(long)]
    min_group_leaf: Option<usize>,
    /// Share of each group used to choose splits [default: 0.5]
    #[arg(long, value_parser = finite)]
    honest_fraction: Option<f64>,
    /// Ensemble size [default: 50 for causal_forest, 100 for t_forest]
    #[arg(long)]
    n_trees: Option<usize>,
    /// Per-tree subsample ratio of causal_forest [default: 0.5]
    #[arg(long, value_parser = finite)]
    subsample_ratio: Option<f64>,
    /// Leaf minimum of t_cart and t_forest [default: 5]
    #[arg(long)]
    min_leaf: Option<usize>,
    /// Features tried per split in t_forest [default: 2]
    #[arg(long)]
    features_per_split: Option<usize>,
    /// Neighbours in t_knn [default: 5]
    #[arg(long)]
    k: Option<usize>,
    /// z-score features before t_knn distances [default: off]
    #[arg(long)]
    standardize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Generate {
        dgp: PathBuf,
        n0: usize,
        n1: usize,
        seed: u64,
        out: PathBuf,
    },
    Fit {
        data: PathBuf,
        /// Seed inside is a placeholder until `seed` is applied.
        model: ModelKind,
        seed: Option<u64>,
        out: PathBuf,
    },
    Predict {
        model: PathBuf,
        x: f64,
        y: f64,
        z: f64,
    },
    Bench {
        config: PathBuf,
        out: PathBuf,
    },
    Map {
        model: PathBuf,
        z_slice: Option<f64>,
        resolution: f64,
        workspace: Workspace,
        out_svg: Option<PathBuf>,
        out_csv: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub threads: Option<usize>,
    pub command: Command,
}

/// Why parsing stopped: help or version text (exit 0) or a usage error
/// (exit 2). Both carry the text to print.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseStop {
    Info(String),
    Usage(String),
}

impl ParseStop {
    pub fn exit_code(&self) -> u8 {
        match self {
            ParseStop::Info(_) => EXIT_OK,
            ParseStop::Usage(_) => EXIT_USAGE,
        }
    }
}

/// `argv[0]` is the program name.
pub fn parse_args<I, T>(argv: I) -> std::result::Result<Invocation, ParseStop>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        let text = e.render().to_string();
        if e.use_stderr() {
            ParseStop::Usage(text)
        } else {
            ParseStop::Info(text)
        }
    })?;
    let command = match cli.command {
        RawCommand::Gen { dgp, n0, n1, seed, out } => Command::Generate { dgp, n0, n1, seed, out },
        RawCommand::Fit(args) => {
            let model = model_kind(&args).map_err(|m| ParseStop::Usage(format!("error: {m}\n")))?;
            Command::Fit {
                data: args.data,
                model,
                seed: args.seed,
                out: args.out,
            }
        }
        RawCommand::Predict { model, x, y, z } => Command::Predict { model, x, y, z },
        RawCommand::Bench { config, out } => Command::Bench { config, out },
        RawCommand::Map {
            model,
            z_slice,
            resolution,
            radius,
            height,
            out_svg,
            out_csv,
        } => {
            if out_svg.is_none() && out_csv.is_none() {
                return Err(ParseStop::Usage("error: map needs --out-svg, --out-csv or both\n".into()));
            }
            Command::Map {
                model,
                z_slice,
                resolution,
                workspace: Workspace { radius, height },
                out_svg,
                out_csv,
            }
        }
    };
    Ok(Invocation {
        threads: cli.threads,
        command,
    })
}

fn model_kind(a: &FitArgs) -> std::result::Result<ModelKind, String> {
    use ModelChoice::*;
    let flags: [(&str, bool, &[ModelChoice]); 8] = [
        ("--max-depth", a.max_depth.is_some(), &[CausalTree, CausalForest, TCart, TForest]),
        ("--min-group-leaf", a.min_group_leaf.is_some(), &[CausalTree, CausalForest]),
        ("--honest-fraction", a.honest_fraction.is_some(), &[CausalTree, CausalForest]),
        ("--n-trees", a.n_trees.is_some(), &[CausalForest, TForest]),
        ("--subsample-ratio", a.subsample_ratio.is_some(), &[CausalForest]),
        ("--min-leaf", a.min_leaf.is_some(), &[TCart, TForest]),
        ("--features-per-split", a.features_per_split.is_some(), &[TForest]),
        ("--k", a.k.is_some(), &[TKnn]),
    ];
    let mut unused: Vec<&str> = flags
        .iter()
        .filter(|(_, set, models)| *set && !models.contains(&a.model))
        .map(|(name, ..)| *name)
        .collect();
    if a.standardize && a.model != TKnn {
        unused.push("--standardize");
    }
    if !unused.is_empty() {
        return Err(format!(
            "{} not used by --model {}",
            unused.join(", "),
            a.model.to_possible_value().expect("no skipped variants").get_name()
        ));
    }
    Ok(match a.model {
        ModelChoice::CausalTree => {
            let d = CausalTreeParams::default();
            ModelKind::CausalTree(CausalTreeParams {
                max_depth: a.max_depth.unwrap_or(d.max_depth),
                min_group_leaf: a.min_group_leaf.unwrap_or(d.min_group_leaf),
                honest_fraction: a.honest_fraction.unwrap_or(d.honest_fraction),
                seed: d.seed,
            })
        }
        ModelChoice::CausalForest => {
            let d = CausalForestSpec::default();
            ModelKind::CausalForest(CausalForestSpec {
                max_depth: a.max_depth.unwrap_or(d.max_depth),
                min_group_leaf: a.min_group_leaf.unwrap_or(d.min_group_leaf),
                honest_fraction: a.honest_fraction.unwrap_or(d.honest_fraction),
                seed: d.seed,
                n_trees: a.n_trees.unwrap_or(d.n_trees),
                subsample_ratio: a.subsample_ratio.unwrap_or(d.subsample_ratio),
            })
        }
        ModelChoice::TCart => {
            let d = CartParams::default();
            ModelKind::TCart(CartParams {
                max_depth: a.max_depth.unwrap_or(d.max_depth),
                min_leaf: a.min_leaf.unwrap_or(d.min_leaf),
                seed: d.seed,
            })
        }
        ModelChoice::TForest => {
            let d = ForestParams::default();
            ModelKind::TForest(ForestParams {
                n_trees: a.n_trees.unwrap_or(d.n_trees),
                max_depth: a.max_depth.unwrap_or(d.max_depth),
                min_leaf: a.min_leaf.unwrap_or(d.min_leaf),
                features_per_split: a.features_per_split.unwrap_or(d.features_per_split),
                seed: d.seed,
            })
        }
        ModelChoice::TKnn => {
            let d = KnnParams::default();
            ModelKind::TKnn(KnnParams {
                k: a.k.unwrap_or(d.k),
                standardize: a.standardize,
                seed: d.seed,
            })
        }
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_model(path: &Path) -> Result<taskdiff::FittedModel> {
    parse_model(&read_text(path)?)
}

/// Sidecar path `<out>.truth.toml`.
pub fn truth_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".truth.toml");
    PathBuf::from(name)
}

/// Runs one command, writing human-readable output to `stdout`.
pub fn run_command(command: &Command, stdout: &mut dyn Write) -> Result<()> {
    let say = |stdout: &mut dyn Write, text: &str| {
        stdout.write_all(text.as_bytes()).map_err(|e| Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        })
    };
    match command {
        Command::Generate { dgp, n0, n1, seed, out } => {
            let spec = DgpSpec::from_toml(&read_text(dgp)?, &dgp.display().to_string())?;
            let (data, _) = generate_dataset(&spec, *n0, *n1, *seed)?;
            write_atomic(out, taskdiff::io::dataset_to_csv(&data).as_bytes())?;
            let record = GroundTruthRecord {
                seed: *seed,
                n_control: *n0,
                n_individual: *n1,
                dgp: spec,
            };
            let truth = truth_path(out);
            write_atomic(&truth, record.to_toml().as_bytes())?;
            say(
                stdout,
                &format!(
                    "wrote {} samples to {} and ground truth to {}\n",
                    data.len(),
                    out.display(),
                    truth.display()
                ),
            )
        }
        Command::Fit { data, model, seed, out } => {
            let seed = seed.ok_or_else(|| Error::InvalidParameter("fit requires --seed".into()))?;
            let d = read_dataset(data)?;
            let fitted = model.with_seed(seed).fit(&d)?;
            write_atomic(out, serialize_model(&fitted).as_bytes())?;
            say(stdout, &format!("wrote {} model to {}\n", fitted.kind(), out.display()))
        }
        Command::Predict { model, x, y, z } => {
            let m = read_model(model)?;
            let est = m.predict(&taskdiff::features_from_xyz(*x, *y, *z)?);
            let leaf = est.leaf_id.map(|l| l.to_string()).unwrap_or_else(|| "none".into());
            say(stdout, &format!("tau_hat_s={} leaf_id={leaf}\n", est.tau_hat))
        }
        Command::Bench { config, out } => {
            let cfg = BenchConfig::from_toml(&read_text(config)?, &config.display().to_string())?;
            let rows = run_benchmark(&cfg)?;
            write_atomic(out, bench_csv(&rows).as_bytes())?;
            say(stdout, &bench_report(&cfg, &rows))
        }
        Command::Map {
            model,
            z_slice,
            resolution,
            workspace,
            out_svg,
            out_csv,
        } => {
            let m = read_model(model)?;
            let grid = build_grid(workspace, *resolution, *z_slice)?;
            let map = difficulty_map(&m, &grid, *resolution, *z_slice);
            let svg = match out_svg {
                Some(_) => Some(render_svg_slice(&map, &DivergingPalette::default())?),
                None => None,
            };
            if let (Some(path), Some(svg)) = (out_svg, svg) {
                write_atomic(path, svg.as_bytes())?;
            }
            if let Some(path) = out_csv {
                write_atomic(path, export_map_csv(&map).as_bytes())?;
            }
            say(stdout, &format!("mapped {} cells\n", map.grid.len()))
        }
    }
}

/// One diagnostic line: `error: <Kind>: <detail>`.
pub fn error_line(e: &Error) -> String {
    format!("error: {}: {e}", e.kind())
}

/// Full program: parse, configure threads, run. Returns the exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let inv = match parse_args(argv) {
        Ok(inv) => inv,
        Err(stop) => {
            let text = match &stop {
                ParseStop::Info(t) => {
                    let _ = stdout.write_all(t.as_bytes());
                    return stop.exit_code();
                }
                ParseStop::Usage(t) => t,
            };
            let _ = stderr.write_all(text.as_bytes());
            return stop.exit_code();
        }
    };
    if let Some(n) = inv.threads {
        if n == 0 {
            let _ = writeln!(stderr, "error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        // A pool can only be installed once per process; later calls keep the first.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run_command(&inv.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_line(&e));
            EXIT_ERROR
        }
    }
}
