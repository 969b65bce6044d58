use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use branchmc::channel::{expected_trace, ChannelParams, SymbolSequence, VelocityMode};
use branchmc::mle::{estimate, MleConfig, NoiseModel};
use branchmc::nn::{ModelParams, TrainConfig};
use branchmc::pipeline::{
    build_dataset, evaluate, read_summaries, report_tables, Dataset, Estimator, ExperimentPlan,
    MleSettings, RunManifest, Split,
};
use branchmc::sim::{
    random_sequences, SimConfig, DEFAULT_DT_SAMPLE, DEFAULT_HORIZON, DEFAULT_N_TX, DEFAULT_SYMBOLS,
};
use branchmc::{BranchTopology, Error, Result, TimeGrid};

#[derive(Parser)]
#[command(
    name = "branchmc",
    version,
    about = "Distance estimation in branched flow channels"
)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo particle runs at fixed Tx distances.
    Simulate(SimulateArgs),
    /// Expected receiver counts from the closed-form channel model.
    Analytic(AnalyticArgs),
    /// Maximum-likelihood distance estimate for one trace.
    Mle(MleArgs),
    /// Simulate every configuration of an experiment plan.
    Dataset(DatasetArgs),
    /// Train the windowed BiLSTM regressor on a dataset.
    Train(TrainArgs),
    /// Score an estimator on a dataset split.
    Eval(EvalArgs),
    /// Combine summary CSVs into a threshold table.
    Report(ReportArgs),
}

#[derive(Args)]
struct Protocol {
    /// Molecules released per '1' symbol.
    #[arg(long, default_value_t = DEFAULT_N_TX)]
    n_tx: u64,
    /// Symbol duration (s).
    #[arg(long, default_value_t = 1.0)]
    t_s: f64,
    /// Sampling interval (s).
    #[arg(long, default_value_t = DEFAULT_DT_SAMPLE)]
    dt: f64,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: f64,
    /// OOK symbols per branch and iteration.
    #[arg(long, default_value_t = DEFAULT_SYMBOLS)]
    symbols: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Topology JSON; defaults to identical reference branches.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Tx-Rx distance per branch in cm, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    distances: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    iterations: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    protocol: Protocol,
}

#[derive(Args)]
struct AnalyticArgs {
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Tx-Rx distance per branch in cm, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    distances: Vec<f64>,
    /// One bit string per branch, comma separated; random when omitted.
    #[arg(long, value_delimiter = ',')]
    sequences: Vec<String>,
    #[arg(long, default_value = "harmonic")]
    velocity: VelocityMode,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    protocol: Protocol,
}

#[derive(Args)]
struct MleArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Run manifest written next to the trace.
    #[arg(long)]
    manifest: PathBuf,
    /// min:max:step in meters.
    #[arg(long, default_value = "0.02:0.26:0.01")]
    grid: String,
    #[arg(long, default_value = "poisson")]
    noise: NoiseModel,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value = "harmonic")]
    velocity: VelocityMode,
    /// Also write the estimate JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DatasetArgs {
    /// Plan JSON `{sources, distance_configs_cm, iterations, seed}`.
    #[arg(long, conflicts_with_all = ["sources", "values_cm"])]
    plan: Option<PathBuf>,
    /// Sources per configuration when no plan file is given.
    #[arg(long)]
    sources: Option<usize>,
    /// Candidate distances in cm for generated plans.
    #[arg(long, value_delimiter = ',', default_value = "6,12,18,24")]
    values_cm: Vec<f64>,
    /// Draw this many random configurations instead of the full grid.
    #[arg(long)]
    random_configs: Option<usize>,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    protocol: Protocol,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training config JSON; the reference architecture when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write the per-epoch log as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained model file.
    #[arg(long, required_unless_present = "mle")]
    model: Option<PathBuf>,
    /// Use the likelihood estimator instead of a model.
    #[arg(long, conflicts_with = "model")]
    mle: bool,
    #[arg(long, default_value = "0.02:0.26:0.01")]
    grid: String,
    #[arg(long, default_value = "poisson")]
    noise: NoiseModel,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Per-configuration report CSV.
    #[arg(long)]
    report: PathBuf,
    /// Summary CSV; `<report>.summary.csv` when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    scatter: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Summary CSVs; each row becomes a column.
    #[arg(long = "summary", required = true)]
    summaries: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cm_to_m(cm: &[f64]) -> Vec<f64> {
    cm.iter().map(|c| c / 100.0).collect()
}

fn topology_for(path: Option<&Path>, distances: &[f64]) -> Result<BranchTopology> {
    match path {
        Some(p) => BranchTopology::load(p)?.with_distances(distances),
        None => BranchTopology::symmetric(distances),
    }
}

fn sim_config(topology: BranchTopology, protocol: &Protocol, seed: u64) -> SimConfig {
    SimConfig {
        n_tx: protocol.n_tx,
        t_s: protocol.t_s,
        horizon: protocol.horizon,
        dt_sample: protocol.dt,
        n_symbols: protocol.symbols,
        seed,
        ..SimConfig::new(topology)
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn simulate(args: SimulateArgs, seed: u64) -> Result<()> {
    let distances = cm_to_m(&args.distances);
    let topology = topology_for(args.topology.as_deref(), &distances)?;
    let cfg = SimConfig {
        n_iterations: args.iterations,
        ..sim_config(topology, &args.protocol, seed)
    };
    let manifest = RunManifest::write_run(&args.out, &cfg, &distances, seed)?;
    eprintln!(
        "wrote {} traces to {}",
        manifest.iterations.len(),
        args.out.display()
    );
    Ok(())
}

fn analytic(args: AnalyticArgs, seed: u64) -> Result<()> {
    let distances = cm_to_m(&args.distances);
    let topology = topology_for(args.topology.as_deref(), &distances)?;
    let k = topology.branch_count();
    let seqs = if args.sequences.is_empty() {
        random_sequences(
            &mut ChaCha8Rng::seed_from_u64(seed),
            k,
            args.protocol.symbols,
        )
    } else {
        args.sequences
            .iter()
            .map(|s| SymbolSequence::parse(s))
            .collect::<Result<Vec<_>>>()?
    };
    let params = (0..k)
        .map(|i| {
            ChannelParams::for_branch(
                &topology,
                i,
                args.velocity,
                args.protocol.n_tx as f64,
                args.protocol.t_s,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = TimeGrid::over_horizon(args.protocol.dt, args.protocol.horizon)?;
    let trace = expected_trace(&params, &seqs, grid)?;
    write_text(args.out.as_deref(), &trace.to_csv_string("expected_count"))
}

fn mle_config(grid: &str, tolerance: f64, noise: NoiseModel) -> Result<MleConfig> {
    let (lo, hi, step) = MleConfig::parse_grid(grid)?;
    MleConfig::new(lo, hi, step, tolerance, noise)
}

fn mle(args: MleArgs, seed: u64) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    let file_name = args
        .trace
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Argument(format!("bad trace path {}", args.trace.display())))?;
    let record = manifest.record_for_file(file_name)?;
    let known = manifest.known_channel(record, args.velocity)?;
    let dir = args.trace.parent().unwrap_or(Path::new("."));
    let trace = manifest.read_trace(dir, record)?;
    let cfg = mle_config(&args.grid, args.tolerance, args.noise)?
        .for_branches(known.topology.branch_count(), seed);
    let est = estimate(&trace, &known, &cfg)?;
    let text = to_json(&est);
    if let Some(p) = &args.out {
        write_text(Some(p), &text)?;
    }
    write_text(None, &text)
}

fn dataset(args: DatasetArgs, seed: Option<u64>) -> Result<()> {
    let mut plan = match (&args.plan, args.sources) {
        (Some(p), _) => ExperimentPlan::load(p)?,
        (None, Some(k)) => {
            let s = seed.unwrap_or(0);
            match args.random_configs {
                Some(n) => ExperimentPlan::random(k, n, &args.values_cm, args.iterations, s)?,
                None => ExperimentPlan::grid(k, &args.values_cm, args.iterations, s)?,
            }
        }
        (None, None) => return Err(Error::Argument("give either --plan or --sources".into())),
    };
    if let Some(s) = seed {
        plan.seed = s;
    }
    let first = plan.distances_m(0);
    let topology = topology_for(args.topology.as_deref(), &first)?;
    let base = sim_config(topology, &args.protocol, plan.seed);
    let data = build_dataset(&plan, &base, &args.out)?;
    eprintln!(
        "wrote {} configurations x {} iterations to {}",
        data.runs.len(),
        plan.iterations,
        args.out.display()
    );
    Ok(())
}

fn train_cmd(args: TrainArgs, seed: Option<u64>) -> Result<()> {
    let data = Dataset::open(&args.data)?;
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::reference(data.branch_count()),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.model.outputs != data.branch_count() {
        return Err(Error::Config(format!(
            "model has {} outputs but the dataset has {} sources",
            cfg.model.outputs,
            data.branch_count()
        )));
    }
    let quiet = args.quiet;
    let train = data.windows(Split::Train, &cfg.window)?;
    let val = data.windows(Split::Validation, &cfg.window)?;
    if !quiet {
        eprintln!(
            "training on {} windows, validating on {}",
            train.len(),
            val.len()
        );
    }
    let (model, log) = branchmc::nn::train_with_progress(&train, &val, &cfg, |e| {
        if !quiet {
            eprintln!(
                "epoch {:4}  train {:.6e}  val {:.6e}",
                e.epoch, e.train_mse, e.validation_mse
            );
        }
    })?;
    model.save(&args.out)?;
    if let Some(p) = &args.log {
        let mut text = String::from("epoch,train_mse,validation_mse\n");
        for e in &log.epochs {
            text.push_str(&format!(
                "{},{},{}\n",
                e.epoch, e.train_mse, e.validation_mse
            ));
        }
        write_text(Some(p), &text)?;
    }
    eprintln!(
        "best epoch {} (validation mse {:.6e})",
        log.best_epoch, model.metadata.best_validation_mse
    );
    Ok(())
}

fn eval(args: EvalArgs, seed: u64) -> Result<()> {
    let data = Dataset::open(&args.data)?;
    let estimator = if args.mle {
        Estimator::Mle(MleSettings {
            config: mle_config(&args.grid, args.tolerance, args.noise)?,
            velocity_mode: VelocityMode::Harmonic,
            seed,
        })
    } else {
        let path = args.model.as_ref().expect("clap requires a model");
        Estimator::Sbrnn(Box::new(ModelParams::load(path)?))
    };
    let result = evaluate(&estimator, &data, args.split)?;
    result.per_iteration.write_report_csv(&args.report)?;
    let summary = args
        .summary
        .clone()
        .unwrap_or_else(|| args.report.with_extension("summary.csv"));
    result.per_iteration.write_summary_csv(&summary)?;
    if let Some(p) = &args.scatter {
        result.write_scatter_csv(p)?;
    }
    let f = result.per_iteration.fractions;
    println!(
        "{}: RE<5% {:.2}  RE<10% {:.2}  RE<20% {:.2}  (per iteration, {} traces)",
        result.per_iteration.estimator,
        f.re_lt_5,
        f.re_lt_10,
        f.re_lt_20,
        result.records.len()
    );
    if let Some(w) = &result.per_window {
        let f = w.fractions;
        println!(
            "{}: RE<5% {:.2}  RE<10% {:.2}  RE<20% {:.2}",
            w.estimator, f.re_lt_5, f.re_lt_10, f.re_lt_20
        );
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut all = Vec::new();
    for p in &args.summaries {
        all.extend(read_summaries(p)?);
    }
    write_text(args.out.as_deref(), &report_tables(&all))
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Simulate(a) => simulate(a, seed),
        Command::Analytic(a) => analytic(a, seed),
        Command::Mle(a) => mle(a, seed),
        Command::Dataset(a) => dataset(a, cli.seed),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Eval(a) => eval(a, seed),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
