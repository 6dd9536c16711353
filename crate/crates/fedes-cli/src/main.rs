//! Command-line front end: one subcommand per role, config file plus flag
//! overrides, exit code 1 for usage problems and 2 for runtime failures.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedes::data::{batches, partition, PartitionMode};
use fedes::detrand::{derive_seed, fill_gaussian, CommonSeed, INIT_LANE, PARTITION_LANE};
use fedes::error::Error;
use fedes::escore::{
    aggregate, client_round, sgd_update, ClientWeights, LearningRate, LossReport, RoundConfig,
    SeededEpsilon,
};
use fedes::exp::{
    self, client_experiment, run_experiment, serve_experiment, synthetic_dataset,
    ExperimentConfig, Transport,
};
use fedes::nn::{init_params, MlpSpec, ParamVector};

#[derive(Parser)]
#[command(
    name = "fedes",
    version,
    about = "Federated neural-network training that uplinks scalar losses instead of gradients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a complete experiment in this process and write metrics.csv
    /// and params.bin.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Bind the configured listen address and train against standalone
    /// clients.
    Serve {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Connect to a server and answer rounds as client K.
    Client {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Client index in 0..clients; decides which shard this process
        /// computes from the shared seed.
        k: u32,
    },
    /// Print the per-client sample counts and label histograms the
    /// config produces.
    PartitionInspect {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Machine-determinism fixtures: a pinned Gaussian stream and a tiny
    /// self-contained training run.
    Golden {
        #[command(subcommand)]
        action: GoldenAction,
    },
}

#[derive(Subcommand)]
enum GoldenAction {
    /// Write the fixtures.
    Emit {
        #[arg(long, default_value = "golden")]
        out: PathBuf,
    },
    /// Recompute the fixtures and compare byte-for-byte.
    Check {
        #[arg(long, default_value = "golden")]
        out: PathBuf,
    },
}

/// Config path plus overrides. Flags win over file values; the merged
/// config is echoed to stderr before work starts.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    sigma: Option<f32>,
    #[arg(long)]
    alpha: Option<f32>,
    #[arg(long)]
    beta: Option<f32>,
    #[arg(long = "n-b")]
    n_b: Option<u32>,
    #[arg(long)]
    clients: Option<u32>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PartitionMode>,
    #[arg(long, value_parser = parse_transport)]
    transport: Option<Transport>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    connect: Option<String>,
    /// Common seed as 64 hex digits.
    #[arg(long)]
    seed: Option<String>,
    /// Output directory for metrics.csv and params.bin.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<PartitionMode, String> {
    match s {
        "iid" => Ok(PartitionMode::Iid),
        "noniid" => Ok(PartitionMode::NonIid),
        _ => Err(format!("expected iid or noniid, got {s:?}")),
    }
}

fn parse_transport(s: &str) -> Result<Transport, String> {
    match s {
        "inproc" => Ok(Transport::Inproc),
        "tcp" => Ok(Transport::Tcp),
        _ => Err(format!("expected inproc or tcp, got {s:?}")),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(v) = self.rounds {
            cfg.rounds = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.n_b {
            cfg.n_b = v;
        }
        if let Some(v) = self.clients {
            cfg.clients = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.transport {
            cfg.transport = v;
        }
        if let Some(v) = &self.listen {
            cfg.listen = Some(v.clone());
        }
        if let Some(v) = &self.connect {
            cfg.connect = Some(v.clone());
        }
        if let Some(v) = &self.seed {
            cfg.common_seed = v.clone();
        }
        cfg.validate()?;
        eprintln!(
            "{}",
            serde_json::to_string_pretty(&cfg).expect("config serializes")
        );
        Ok(cfg)
    }
}

#[derive(Debug)]
enum CliError {
    Lib(Error),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Lib(e) => e.fmt(f),
            CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_usage() => 1,
            _ => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; only real parse
            // problems count as usage errors.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { cfg } => {
            let config = cfg.resolve()?;
            let artifacts = run_experiment(&config, &cfg.out)?;
            println!(
                "wrote {} and {}",
                artifacts.csv_path.display(),
                artifacts.params_path.display()
            );
            Ok(())
        }
        Command::Serve { cfg } => {
            let config = cfg.resolve()?;
            let artifacts = serve_experiment(&config, &cfg.out)?;
            println!(
                "wrote {} and {}",
                artifacts.csv_path.display(),
                artifacts.params_path.display()
            );
            Ok(())
        }
        Command::Client { cfg, k } => {
            let config = cfg.resolve()?;
            client_experiment(&config, k)?;
            println!("client {k} finished");
            Ok(())
        }
        Command::PartitionInspect { cfg } => {
            let config = cfg.resolve()?;
            inspect(&config)?;
            Ok(())
        }
        Command::Golden { action } => match action {
            GoldenAction::Emit { out } => golden_emit(&out),
            GoldenAction::Check { out } => golden_check(&out),
        },
    }
}

fn inspect(config: &ExperimentConfig) -> Result<(), Error> {
    let (_, _, common) = config.validate()?;
    let train = exp::load_train(config)?;
    let part = exp::partition_of(config, &common, &train)?;
    println!(
        "{:?} partition of {} samples across {} clients ({} dropped)",
        part.mode,
        train.len() - part.dropped as usize,
        part.clients(),
        part.dropped
    );
    println!("client  samples  classes  label histogram 0..9");
    for k in 0..part.clients() {
        let idxs = part.client(k);
        let hist = train.class_counts(idxs);
        let classes = hist.iter().filter(|&&c| c > 0).count();
        let cells: Vec<String> = hist.iter().map(|c| c.to_string()).collect();
        println!(
            "{k:>6}  {:>7}  {classes:>7}  {}",
            idxs.len(),
            cells.join(" ")
        );
    }
    Ok(())
}

/// First 64 values of a fixed perturbation stream, one f32 bit pattern
/// per line. Catches any drift in hashing, keystream, or the normal
/// transform on this machine.
fn golden_stream() -> String {
    let common = CommonSeed::from_bytes([90; 32]);
    let mut vals = vec![0.0f32; 64];
    fill_gaussian(&derive_seed(&common, 0, 0, 0), 1.0, &mut vals)
        .expect("fixture sigma is positive");
    vals.iter()
        .map(|v| format!("{:08x}\n", v.to_bits()))
        .collect()
}

/// Final parameters of a six-round, two-client run on a synthetic
/// dataset. Exercises init, perturbation replay, loss evaluation,
/// aggregation, and the update rule end to end with no external data.
fn golden_training() -> ParamVector {
    let common = CommonSeed::from_bytes([90; 32]);
    let data = synthetic_dataset(&common, 96, 16, 3);
    let spec = MlpSpec::new(vec![16, 12, 3]).expect("fixture widths are valid");
    let part = partition(
        &data,
        2,
        PartitionMode::Iid,
        &derive_seed(&common, 0, PARTITION_LANE, 0),
    )
    .expect("fixture partition is valid");
    let weights = ClientWeights::from_sample_counts(&part.sample_counts(), 8)
        .expect("fixture weights are valid");
    let shards: Vec<_> = (0..2).map(|k| batches(&data, part.client(k), 8)).collect();
    let cfg0 = RoundConfig::new(0.05, LearningRate::Constant(0.05), 8, 1.0, 1)
        .expect("fixture round config is valid");
    let source = SeededEpsilon::new(common, 0.05).expect("fixture sigma is positive");
    let mut w = init_params(&spec, &derive_seed(&common, 0, INIT_LANE, 0));
    for t in 1..=6 {
        let cfg = cfg0.with_round(t);
        let reports: Vec<LossReport> = (0..2u32)
            .map(|k| {
                client_round(k, &w, &cfg, &common, &shards[k as usize])
                    .expect("fixture shards are nonempty")
            })
            .collect();
        let g = aggregate(&reports, &cfg, &weights, &source, w.len())
            .expect("fixture reports are well formed");
        let g = ParamVector::from_values(w.spec(), g).expect("aggregate length matches");
        w = sgd_update(&w, &g, &cfg).expect("fixture step is valid");
    }
    w
}

fn golden_emit(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let stream_path = out.join("gauss.txt");
    std::fs::write(&stream_path, golden_stream()).map_err(|source| Error::Io {
        path: stream_path.clone(),
        source,
    })?;
    let params_path = out.join("params.bin");
    exp::write_params(&params_path, &golden_training())?;
    println!(
        "wrote {} and {}",
        stream_path.display(),
        params_path.display()
    );
    Ok(())
}

fn golden_check(out: &Path) -> Result<(), CliError> {
    let stream_path = out.join("gauss.txt");
    let stored = std::fs::read_to_string(&stream_path).map_err(|source| Error::Io {
        path: stream_path.clone(),
        source,
    })?;
    if stored != golden_stream() {
        return Err(CliError::Runtime(format!(
            "{} does not match this machine's perturbation stream",
            stream_path.display()
        )));
    }
    let params_path = out.join("params.bin");
    let stored = exp::read_params(&params_path)?;
    let fresh = golden_training();
    let same = stored.len() == fresh.len()
        && stored
            .iter()
            .zip(fresh.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    if !same {
        return Err(CliError::Runtime(format!(
            "{} does not match a fresh training run",
            params_path.display()
        )));
    }
    println!("fixtures match");
    Ok(())
}
