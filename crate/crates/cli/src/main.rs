use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use spikeres::config::ExperimentConfig;
use spikeres::digits::{self, ClassifierReport, FoldPlan};
use spikeres::export::{self, write_atomic};
use spikeres::readout::Ridge;
use spikeres::reservoir::{build_reservoir, Boundary, GridTopology};
use spikeres::tasks::{self, CapacitySummary, TaskKind, TaskReport};
use spikeres::{Error, VERSION};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "spikeres", version, about = "Spiking-neuron reservoir simulator and task harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Delay-task (short-term memory) capacity over a seed sweep
    Stm(Common),
    /// Temporal XOR capacity over a seed sweep
    Xor(Common),
    /// 5-fold spoken-digit classification against the raw-feature baseline
    Digits(DigitsArgs),
    /// Run the reservoir on random bits and dump every counter reading
    Simulate(RunArgs),
    /// Run on random bits and write states with their 4-step input history
    ExportStates(RunArgs),
    /// Write the seeded synthetic cochleagram set
    GenSyntheticDigits(SynthArgs),
    /// Write the configured behavioral curves as a curve file
    Curves(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid size, e.g. 10x10
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Wrap the grid into a torus
    #[arg(long)]
    toroidal: bool,
    /// Weight seed (first of the sweep)
    #[arg(long)]
    seed: Option<u64>,
    /// Number of weight seeds
    #[arg(long)]
    seeds: Option<usize>,
    /// Device-variation standard deviation
    #[arg(long)]
    variation: Option<f64>,
    /// Seed of the variation draw; weights stay on --seed
    #[arg(long)]
    variation_seed: Option<u64>,
    /// Sweep this many variation draws on the fixed weights of --seed
    #[arg(long)]
    variation_draws: Option<usize>,
    /// Only the positive VCO drives the readout
    #[arg(long)]
    single_vco: bool,
    /// Absolute ridge parameter
    #[arg(long)]
    lambda: Option<f64>,
    /// Total input steps of the capacity protocol (washout/train/test scale along)
    #[arg(long)]
    steps: Option<usize>,
    /// Worker threads (0 = one per core)
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra overrides as dotted key=value, e.g. reservoir.input_gain_word=9
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct DigitsArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of feature files; without it the synthetic set is used
    #[arg(long)]
    data: Option<PathBuf>,
    /// Size of the synthetic set
    #[arg(long, default_value_t = 500)]
    synthetic: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Input steps to run
    #[arg(long, default_value_t = 100)]
    length: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("grid {s:?} is not ROWSxCOLS"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("grid {s:?}: {e}"));
    Ok((parse(r)?, parse(c)?))
}

/// An error and the exit code it maps to.
struct Failure(u8, Error);

fn config_err(e: Error) -> Failure {
    Failure(EXIT_CONFIG, e)
}

fn runtime(e: Error) -> Failure {
    Failure(EXIT_RUNTIME, e)
}

fn resolve(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).map_err(config_err)?,
        None => ExperimentConfig::default(),
    };
    let r = &mut cfg.reservoir;
    if let Some((rows, cols)) = c.grid {
        r.topology = GridTopology {
            rows,
            cols,
            boundary: r.topology.boundary,
        };
    }
    if c.toroidal {
        r.topology.boundary = Boundary::Toroidal;
    }
    if let Some(s) = c.seed {
        r.seed = s;
    }
    if let Some(v) = c.variation {
        r.variation_std = v;
    }
    if c.variation_seed.is_some() {
        r.variation_seed = c.variation_seed;
    }
    r.single_vco_mode |= c.single_vco;
    if let Some(l) = c.lambda {
        cfg.readout.ridge = Ridge::Absolute(l);
        cfg.digits.ridge = Ridge::Absolute(l);
    }
    if let Some(n) = c.seeds {
        cfg.seeds = n;
    }
    if let Some(n) = c.variation_draws {
        cfg.variation_draws = n;
    }
    if let Some(t) = c.steps {
        let p = &mut cfg.protocol;
        p.total = t;
        p.washout = t / 10;
        p.test = t / 5;
        p.train = t - p.washout - p.test;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(o) = &c.out {
        cfg.output = o.clone();
    }
    cfg.apply_overrides(&c.overrides).map_err(config_err)?;
    cfg.validate().map_err(config_err)?;
    if cfg.workers > 0 {
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes()).map_err(runtime)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn save_config(cfg: &ExperimentConfig) -> Result<(), Failure> {
    cfg.save(&cfg.output.join("config.toml")).map_err(runtime)
}

#[derive(Serialize)]
struct SweepDocument<'a> {
    kind: TaskKind,
    config_hash: String,
    version: &'a str,
    seeds: Vec<u64>,
    variation_seeds: Vec<Option<u64>>,
    summary: Option<CapacitySummary>,
    runs: &'a [TaskReport],
}

fn capacity(kind: TaskKind, c: &Common) -> Result<(), Failure> {
    let cfg = resolve(c)?;
    save_config(&cfg)?;
    let configs = cfg.sweep();
    let seeds: Vec<u64> = configs.iter().map(|r| r.seed).collect();
    let variation_seeds = configs.iter().map(|r| r.variation_seed).collect();
    let protocol = cfg.protocol.clone();
    let runs: Vec<TaskReport> = tasks::run_capacity_sweep(&configs, &[kind], |_| protocol.clone(), &cfg.readout)
        .map_err(runtime)?
        .into_iter()
        .flatten()
        .collect();
    let summary = tasks::summarize(&runs);
    let mut csv = format!("{}\n", tasks::CSV_HEADER);
    runs.iter().for_each(|r| csv.push_str(&r.csv_rows()));
    let doc = SweepDocument {
        kind,
        config_hash: cfg.hash(),
        version: VERSION,
        seeds,
        variation_seeds,
        summary: summary.clone(),
        runs: &runs,
    };
    let name = kind.as_str();
    write(&cfg.output.join(format!("{name}_r2.csv")), &csv)?;
    write(
        &cfg.output.join(format!("{name}_report.json")),
        &serde_json::to_string_pretty(&doc).expect("report serializes"),
    )?;
    if let Some(s) = summary {
        println!(
            "{name}: N = {}, {} runs, capacity mean {:.3} std {:.3} (config {})",
            cfg.reservoir.topology.len(),
            s.runs,
            s.mean,
            s.std,
            cfg.hash()
        );
    }
    Ok(())
}

fn run_digits(a: &DigitsArgs) -> Result<(), Failure> {
    let cfg = resolve(&a.common)?;
    save_config(&cfg)?;
    let instances = match &a.data {
        Some(dir) => digits::load_dataset(dir),
        None => digits::synthetic_dataset(a.synthetic, cfg.reservoir.seed),
    }
    .map_err(runtime)?;
    let labels: Vec<u8> = instances.iter().map(|i| i.label).collect();
    let plan = FoldPlan::stratified(&labels, cfg.digits.folds, cfg.digits.fold_seed).map_err(runtime)?;
    let reservoir = digits::classify_run(&instances, &cfg.reservoir, &plan, &cfg.digits).map_err(runtime)?;
    let baseline = digits::baseline_linear(&instances, &plan, &cfg.digits).map_err(runtime)?;
    let emit = |r: &ClassifierReport| -> Result<(), Failure> {
        write(&cfg.output.join(format!("digits_{}.json", r.method)), &r.to_json())?;
        write(&cfg.output.join(format!("digits_{}_confusion.csv", r.method)), &r.confusion_csv())?;
        println!(
            "{}: mean accuracy {:.2} % over {} folds",
            r.method,
            100.0 * r.mean_accuracy,
            r.fold_accuracy.len()
        );
        Ok(())
    };
    emit(&reservoir)?;
    emit(&baseline)
}

fn run_states(a: &RunArgs, history: bool) -> Result<(), Failure> {
    let cfg = resolve(&a.common)?;
    save_config(&cfg)?;
    let inputs = tasks::gen_binary_sequence(a.length, cfg.protocol.seed).map_err(runtime)?;
    if history {
        let path = cfg.output.join("states_history.csv");
        export::export_states(&cfg.reservoir, &inputs, &path).map_err(runtime)?;
        log::info!("wrote {}", path.display());
    } else {
        let mut r = build_reservoir(&cfg.reservoir).map_err(runtime)?;
        let states = r.run_scalar_sequence(&inputs).map_err(runtime)?;
        write(&cfg.output.join("states.csv"), &export::state_dump_csv(&states))?;
        r.weights()
            .save(&cfg.output.join("weights.txt"))
            .map_err(runtime)?;
    }
    Ok(())
}

fn run_curves(c: &Common) -> Result<(), Failure> {
    let cfg = resolve(c)?;
    let curves = cfg.reservoir.curves.load().map_err(config_err)?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| runtime(e.into()))?;
    let path = cfg.output.join("curves.txt");
    curves.save(&path).map_err(runtime)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Stm(c) => capacity(TaskKind::Stm, &c),
        Command::Xor(c) => capacity(TaskKind::Xor, &c),
        Command::Digits(a) => run_digits(&a),
        Command::Simulate(a) => run_states(&a, false),
        Command::ExportStates(a) => run_states(&a, true),
        Command::GenSyntheticDigits(a) => {
            let set = digits::synthetic_dataset(a.count, a.seed).map_err(runtime)?;
            digits::save_dataset(&a.out, &set).map_err(runtime)
        }
        Command::Curves(c) => run_curves(&c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
