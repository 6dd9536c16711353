//! Experiment orchestration: config files, the FedES and FedGD runners,
//! communication accounting, metrics emission, and the quadratic-oracle
//! convergence study.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{batches, load_idx, partition, Dataset, Partition, PartitionMode};
use crate::detrand::{derive_seed, CommonSeed, GaussStream, INIT_LANE, PARTITION_LANE, STUDY_LANE};
use crate::error::{ConfigError, Error};
use crate::escore::{
    es_estimate_antithetic, sgd_update, ClientWeights, LearningRate, SeededEpsilon,
};
use crate::fednet::{
    client_run, inproc_pair, server_run, FrameLink, RoundOutcome, TcpLink, TimeoutPolicy,
};
use crate::nn::{accuracy, backward, init_params, Batch, Evaluator, MlpSpec, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Fedes,
    Fedgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Inproc,
    Tcp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    InverseT,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeoutBehavior {
    #[default]
    Abort,
    Skip,
}

fn default_clients() -> u32 {
    10
}

fn default_n_b() -> u32 {
    64
}

fn default_sigma() -> f32 {
    0.01
}

fn default_alpha() -> f32 {
    0.01
}

fn default_beta() -> f32 {
    1.0
}

fn default_eval_every() -> u32 {
    10
}

fn default_timeout_secs() -> u64 {
    60
}

/// One experiment, as read from a JSON config file. Keys match field
/// names; unknown keys are rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algo: Algo,
    /// Layer widths, input first, classes last.
    pub widths: Vec<u32>,
    #[serde(default = "default_clients")]
    pub clients: u32,
    #[serde(default = "default_n_b")]
    pub n_b: u32,
    #[serde(default = "default_sigma")]
    pub sigma: f32,
    #[serde(default = "default_alpha")]
    pub alpha: f32,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_beta")]
    pub beta: f32,
    #[serde(default)]
    pub mode: PartitionMode,
    pub rounds: u64,
    /// Pre-shared common seed, 64 hex digits. Never sent over the wire.
    pub common_seed: String,
    /// Directory holding the four IDX files under their standard names,
    /// raw or with a .gz suffix.
    pub data_dir: PathBuf,
    /// Use only the first N training samples when set.
    #[serde(default)]
    pub train_limit: Option<u64>,
    #[serde(default)]
    pub transport: Transport,
    #[serde(default = "default_eval_every")]
    pub eval_every: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub on_timeout: TimeoutBehavior,
    /// Server bind address for the TCP roles.
    #[serde(default)]
    pub listen: Option<String>,
    /// Server address a standalone client connects to.
    #[serde(default)]
    pub connect: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(ConfigError::File {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            Error::Config(ConfigError::File {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks cross-field constraints and returns the derived pieces every
    /// runner needs.
    pub fn validate(&self) -> Result<(MlpSpec, crate::escore::RoundConfig, CommonSeed), Error> {
        let spec = MlpSpec::new(self.widths.clone())?;
        let alpha = match self.schedule {
            Schedule::Constant => LearningRate::Constant(self.alpha),
            Schedule::InverseT => LearningRate::InverseT,
        };
        let round = crate::escore::RoundConfig::new(self.sigma, alpha, self.n_b, self.beta, 1)?;
        let seed = CommonSeed::from_hex(&self.common_seed)?;
        if self.clients == 0 {
            return Err(ConfigError::NoClients.into());
        }
        if self.algo == Algo::Fedgd && self.transport == Transport::Tcp {
            return Err(ConfigError::Invalid(
                "the gradient baseline has no wire protocol; use the inproc transport".into(),
            )
            .into());
        }
        Ok((spec, round, seed))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs.max(1))
    }
}

fn resolve_idx(dir: &Path, base: &str) -> PathBuf {
    let plain = dir.join(base);
    if plain.exists() {
        plain
    } else {
        dir.join(format!("{base}.gz"))
    }
}

/// Loads the training set, honoring `train_limit`.
pub fn load_train(cfg: &ExperimentConfig) -> Result<Dataset, Error> {
    let data = load_idx(
        &resolve_idx(&cfg.data_dir, "train-images-idx3-ubyte"),
        &resolve_idx(&cfg.data_dir, "train-labels-idx1-ubyte"),
    )?;
    Ok(match cfg.train_limit {
        Some(limit) => data.truncate(limit as usize),
        None => data,
    })
}

pub fn load_test(cfg: &ExperimentConfig) -> Result<Dataset, Error> {
    Ok(load_idx(
        &resolve_idx(&cfg.data_dir, "t10k-images-idx3-ubyte"),
        &resolve_idx(&cfg.data_dir, "t10k-labels-idx1-ubyte"),
    )?)
}

/// The deterministic client assignment for this config and dataset.
pub fn partition_of(
    cfg: &ExperimentConfig,
    seed: &CommonSeed,
    train: &Dataset,
) -> Result<Partition, Error> {
    Ok(partition(
        train,
        cfg.clients,
        cfg.mode,
        &derive_seed(seed, 0, PARTITION_LANE, 0),
    )?)
}

/// Mean loss over the listed samples, evaluated in fixed-size slices.
pub fn pooled_loss(w: &ParamVector, data: &Dataset, idxs: &[u32]) -> Result<f32, Error> {
    if idxs.is_empty() {
        return Err(crate::error::ModelError::EmptyDataset.into());
    }
    let mut eval = Evaluator::new();
    let mut total = 0.0f64;
    for batch in batches(data, idxs, 512) {
        total += eval.loss(w, &batch)? as f64 * batch.len() as f64;
    }
    Ok((total / idxs.len() as f64) as f32)
}

const PARAMS_MAGIC: &[u8; 4] = b"FESW";
const PARAMS_VERSION: u32 = 1;

/// Writes parameters as a flat LE f32 file with a 16-byte header: magic,
/// format version, count.
pub fn write_params(path: &Path, w: &ParamVector) -> Result<(), Error> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut inner = || -> std::io::Result<()> {
        out.write_all(PARAMS_MAGIC)?;
        out.write_all(&PARAMS_VERSION.to_le_bytes())?;
        out.write_all(&(w.len() as u64).to_le_bytes())?;
        for v in w.values() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    };
    inner().map_err(io_err)
}

/// Reads a parameter file written by [`write_params`].
pub fn read_params(path: &Path) -> Result<Vec<f32>, Error> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(io_err)?
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    let bad = |reason: &str| {
        Error::Config(ConfigError::File {
            path: path.to_path_buf(),
            reason: reason.into(),
        })
    };
    if bytes.len() < 16 || &bytes[..4] != PARAMS_MAGIC {
        return Err(bad("not a parameter file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != PARAMS_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 16 + 4 * n {
        return Err(bad("parameter count disagrees with file size"));
    }
    Ok(bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

struct MetricsWriter {
    out: BufWriter<File>,
    started: Instant,
}

impl MetricsWriter {
    fn create(path: &Path) -> Result<Self, Error> {
        let mut out = BufWriter::new(File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?);
        writeln!(out, "t,train_loss,test_acc,uplink,downlink,wall_ms").map_err(|source| {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        })?;
        Ok(MetricsWriter {
            out,
            started: Instant::now(),
        })
    }

    /// Appends one round and flushes, so an aborted run keeps its rows.
    fn row(
        &mut self,
        t: u64,
        train_loss: Option<f32>,
        test_acc: Option<f32>,
        uplink: u64,
        downlink: u64,
    ) -> std::io::Result<()> {
        let train = train_loss.map(|v| format!("{v}")).unwrap_or_default();
        let acc = test_acc.map(|v| format!("{v}")).unwrap_or_default();
        let wall = self.started.elapsed().as_millis();
        writeln!(
            self.out,
            "{t},{train},{acc},{uplink},{downlink},{wall}"
        )?;
        self.out.flush()
    }
}

/// Outputs of a finished run.
pub struct RunArtifacts {
    pub final_params: ParamVector,
    pub csv_path: PathBuf,
    pub params_path: PathBuf,
}

/// Runs the configured experiment end to end and writes `metrics.csv` and
/// `params.bin` under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts, Error> {
    let (spec, round_cfg, common) = cfg.validate()?;
    let train = load_train(cfg)?;
    let test = load_test(cfg)?;
    if train.width() != spec.input_width() {
        return Err(ConfigError::Invalid(format!(
            "network expects {} inputs but images have {} pixels",
            spec.input_width(),
            train.width()
        ))
        .into());
    }
    let part = partition_of(cfg, &common, &train)?;
    let shards: Vec<Vec<Batch>> = (0..cfg.clients as usize)
        .map(|k| batches(&train, part.client(k), cfg.n_b))
        .collect();
    let mut train_idxs: Vec<u32> = (0..cfg.clients as usize)
        .flat_map(|k| part.client(k).iter().copied())
        .collect();
    train_idxs.sort_unstable();
    let w0 = init_params(&spec, &derive_seed(&common, 0, INIT_LANE, 0));

    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let csv_path = out_dir.join("metrics.csv");
    let params_path = out_dir.join("params.bin");
    let mut metrics = MetricsWriter::create(&csv_path)?;

    let eval_every = cfg.eval_every.max(1) as u64;
    let mut observe = |w: &ParamVector, outcome: &RoundOutcome| -> Result<(), Error> {
        let evaluate = outcome.t % eval_every == 0 || outcome.t == cfg.rounds;
        let (train_loss, test_acc) = if evaluate {
            (
                Some(pooled_loss(w, &train, &train_idxs)?),
                Some(accuracy(w, &test)?),
            )
        } else {
            (None, None)
        };
        metrics
            .row(
                outcome.t,
                train_loss,
                test_acc,
                outcome.uplink_per_client,
                outcome.downlink_per_client,
            )
            .map_err(|source| Error::Io {
                path: csv_path.clone(),
                source,
            })
    };

    let final_params = match cfg.algo {
        Algo::Fedes => match cfg.transport {
            Transport::Inproc => {
                run_fedes_inproc(cfg, &spec, &round_cfg, &common, &shards, w0, &mut observe)?
            }
            Transport::Tcp => {
                run_fedes_local_tcp(cfg, &spec, &round_cfg, &common, &shards, w0, &mut observe)?
            }
        },
        Algo::Fedgd => {
            let counts: Vec<u64> = shards
                .iter()
                .map(|s| s.iter().map(|b| b.len() as u64).sum())
                .collect();
            let weights = ClientWeights::from_sample_counts(&counts, cfg.n_b)?;
            let mut w = w0;
            let n = spec.param_count();
            for t in 1..=cfg.rounds {
                w = run_fedgd_round(&w, &shards, &weights, &round_cfg.with_round(t))?;
                let outcome = RoundOutcome {
                    t,
                    uplink_per_client: n,
                    downlink_per_client: n,
                    skipped: Vec::new(),
                };
                observe(&w, &outcome)?;
            }
            w
        }
    };

    write_params(&params_path, &final_params)?;
    Ok(RunArtifacts {
        final_params,
        csv_path,
        params_path,
    })
}

fn policy_of(cfg: &ExperimentConfig) -> TimeoutPolicy {
    match cfg.on_timeout {
        TimeoutBehavior::Abort => TimeoutPolicy::Abort,
        TimeoutBehavior::Skip => TimeoutPolicy::Skip,
    }
}

/// Joins client worker results, preferring their error as the root cause
/// when the server failed as a consequence (e.g. by timing out).
fn finish_clients(
    server: Result<ParamVector, Error>,
    results: mpsc::Receiver<Result<(), Error>>,
) -> Result<ParamVector, Error> {
    let mut client_err = None;
    while let Ok(res) = results.recv() {
        if let Err(e) = res {
            client_err.get_or_insert(e);
        }
    }
    match (server, client_err) {
        (Ok(w), None) => Ok(w),
        (Ok(_), Some(e)) => Err(e),
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(e),
    }
}

fn run_fedes_inproc(
    cfg: &ExperimentConfig,
    spec: &MlpSpec,
    round_cfg: &crate::escore::RoundConfig,
    common: &CommonSeed,
    shards: &[Vec<Batch>],
    w0: ParamVector,
    observe: &mut dyn FnMut(&ParamVector, &RoundOutcome) -> Result<(), Error>,
) -> Result<ParamVector, Error> {
    let timeout = cfg.timeout();
    let source = SeededEpsilon::new(*common, cfg.sigma)?;
    let (result_tx, result_rx) = mpsc::channel();
    let server = std::thread::scope(|scope| {
        let mut links: Vec<Box<dyn FrameLink>> = Vec::with_capacity(shards.len());
        for (k, shard) in shards.iter().enumerate() {
            let (server_side, mut client_side) = inproc_pair(timeout);
            links.push(Box::new(server_side));
            let tx = result_tx.clone();
            let round_cfg = *round_cfg;
            scope.spawn(move || {
                let res = client_run(
                    &mut client_side,
                    k as u32,
                    &round_cfg,
                    common,
                    spec,
                    shard,
                );
                let _ = tx.send(res);
            });
        }
        drop(result_tx);
        server_run(
            links,
            w0,
            round_cfg,
            cfg.rounds,
            &source,
            policy_of(cfg),
            observe,
        )
    });
    finish_clients(server, result_rx)
}

/// Single-process TCP run: the server accepts on a loopback listener while
/// each client connects from its own thread. Wire behavior is identical to
/// the standalone serve/client roles.
fn run_fedes_local_tcp(
    cfg: &ExperimentConfig,
    spec: &MlpSpec,
    round_cfg: &crate::escore::RoundConfig,
    common: &CommonSeed,
    shards: &[Vec<Batch>],
    w0: ParamVector,
    observe: &mut dyn FnMut(&ParamVector, &RoundOutcome) -> Result<(), Error>,
) -> Result<ParamVector, Error> {
    let bind = cfg.listen.clone().unwrap_or_else(|| "127.0.0.1:0".into());
    let listener = TcpListener::bind(&bind).map_err(|e| Error::Protocol(e.into()))?;
    let addr = listener.local_addr().map_err(|e| Error::Protocol(e.into()))?;
    let timeout = cfg.timeout();
    let source = SeededEpsilon::new(*common, cfg.sigma)?;
    let (result_tx, result_rx) = mpsc::channel();
    let server = std::thread::scope(|scope| {
        for (k, shard) in shards.iter().enumerate() {
            let tx = result_tx.clone();
            let round_cfg = *round_cfg;
            scope.spawn(move || {
                let res = (|| -> Result<(), Error> {
                    let stream =
                        TcpStream::connect(addr).map_err(|e| Error::Protocol(e.into()))?;
                    let mut link = TcpLink::new(stream, timeout)?;
                    client_run(&mut link, k as u32, &round_cfg, common, spec, shard)
                })();
                let _ = tx.send(res);
            });
        }
        drop(result_tx);
        let links = (0..shards.len())
            .map(|_| -> Result<Box<dyn FrameLink>, Error> {
                let (stream, _) = listener.accept().map_err(|e| Error::Protocol(e.into()))?;
                Ok(Box::new(TcpLink::new(stream, timeout)?) as Box<dyn FrameLink>)
            })
            .collect::<Result<Vec<_>, _>>();
        match links {
            Ok(links) => server_run(
                links,
                w0,
                round_cfg,
                cfg.rounds,
                &source,
                policy_of(cfg),
                observe,
            ),
            Err(e) => Err(e),
        }
    });
    finish_clients(server, result_rx)
}

/// Serves a TCP experiment for standalone clients: binds `listen`, waits
/// for `clients` connections, trains, then writes the usual artifacts.
pub fn serve_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts, Error> {
    let (spec, round_cfg, common) = cfg.validate()?;
    if cfg.algo != Algo::Fedes {
        return Err(ConfigError::Invalid(
            "only the seed-sharing algorithm runs over TCP".into(),
        )
        .into());
    }
    let listen = cfg.listen.clone().ok_or_else(|| {
        Error::Config(ConfigError::Invalid(
            "serve role needs a listen address in the config".into(),
        ))
    })?;
    let train = load_train(cfg)?;
    let test = load_test(cfg)?;
    let part = partition_of(cfg, &common, &train)?;
    let mut train_idxs: Vec<u32> = (0..cfg.clients as usize)
        .flat_map(|k| part.client(k).iter().copied())
        .collect();
    train_idxs.sort_unstable();
    let w0 = init_params(&spec, &derive_seed(&common, 0, INIT_LANE, 0));

    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let csv_path = out_dir.join("metrics.csv");
    let params_path = out_dir.join("params.bin");
    let mut metrics = MetricsWriter::create(&csv_path)?;
    let eval_every = cfg.eval_every.max(1) as u64;

    let listener = TcpListener::bind(&listen).map_err(|e| Error::Protocol(e.into()))?;
    let links = (0..cfg.clients)
        .map(|_| -> Result<Box<dyn FrameLink>, Error> {
            let (stream, _) = listener.accept().map_err(|e| Error::Protocol(e.into()))?;
            Ok(Box::new(TcpLink::new(stream, cfg.timeout())?) as Box<dyn FrameLink>)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let source = SeededEpsilon::new(common, cfg.sigma)?;
    let final_params = server_run(
        links,
        w0,
        &round_cfg,
        cfg.rounds,
        &source,
        policy_of(cfg),
        |w, outcome| {
            let evaluate = outcome.t % eval_every == 0 || outcome.t == cfg.rounds;
            let (train_loss, test_acc) = if evaluate {
                (
                    Some(pooled_loss(w, &train, &train_idxs)?),
                    Some(accuracy(w, &test)?),
                )
            } else {
                (None, None)
            };
            metrics
                .row(
                    outcome.t,
                    train_loss,
                    test_acc,
                    outcome.uplink_per_client,
                    outcome.downlink_per_client,
                )
                .map_err(|source| Error::Io {
                    path: csv_path.clone(),
                    source,
                })
        },
    )?;
    write_params(&params_path, &final_params)?;
    Ok(RunArtifacts {
        final_params,
        csv_path,
        params_path,
    })
}

/// Runs client `k` against a remote server: computes its shard from the
/// shared seed and answers rounds until shutdown.
pub fn client_experiment(cfg: &ExperimentConfig, k: u32) -> Result<(), Error> {
    let (spec, round_cfg, common) = cfg.validate()?;
    if k >= cfg.clients {
        return Err(ConfigError::TooManyClients {
            n: cfg.clients as usize,
            k,
        }
        .into());
    }
    let connect = cfg.connect.clone().ok_or_else(|| {
        Error::Config(ConfigError::Invalid(
            "client role needs a connect address in the config".into(),
        ))
    })?;
    let train = load_train(cfg)?;
    let part = partition_of(cfg, &common, &train)?;
    let shard = batches(&train, part.client(k as usize), cfg.n_b);
    let stream = TcpStream::connect(&connect).map_err(|e| Error::Protocol(e.into()))?;
    let mut link = TcpLink::new(stream, cfg.timeout())?;
    client_run(&mut link, k, &round_cfg, &common, &spec, &shard)
}

/// One synchronous round of the gradient baseline: every client computes
/// its exact shard gradient, the server averages them by rho and steps.
pub fn run_fedgd_round(
    w: &ParamVector,
    shards: &[Vec<Batch>],
    weights: &ClientWeights,
    cfg: &crate::escore::RoundConfig,
) -> Result<ParamVector, Error> {
    if shards.is_empty() {
        return Err(ConfigError::NoClients.into());
    }
    let mut acc = vec![0.0f64; w.len()];
    for (k, shard) in shards.iter().enumerate() {
        if shard.is_empty() {
            return Err(ConfigError::EmptyShard { client: k as u32 }.into());
        }
        let n_k: f64 = shard.iter().map(|b| b.len() as f64).sum();
        let rho = weights.rho(k) as f64;
        for batch in shard {
            // backward returns the batch mean; weight it back to a sample
            // sum so short final batches do not skew the shard gradient.
            let grad = backward(w, batch)?;
            let scale = rho * batch.len() as f64 / n_k;
            for (a, &g) in acc.iter_mut().zip(grad.values()) {
                *a += scale * g as f64;
            }
        }
    }
    let g = ParamVector::from_values(w.spec(), acc.iter().map(|&a| a as f32).collect())
        .expect("accumulator matches parameter length");
    sgd_update(w, &g, cfg)
}

/// Parameters of the quadratic-oracle study.
#[derive(Clone, Copy, Debug)]
pub struct StudyParams {
    pub d: u32,
    /// Perturbation directions per step, the stand-in for n/n_B.
    pub directions: u32,
    pub sigma: f32,
    /// Scale of the per-sample optimum jitter; 0 makes the objective
    /// noiseless.
    pub noise: f32,
    /// Initial displacement per coordinate from the optimum.
    pub offset: f32,
    pub schedule: LearningRate,
    pub rounds: u64,
    pub repeats: u32,
}

/// Per-round mean loss gap and the fitted log-log slope over t in
/// [10, rounds].
#[derive(Clone, Debug)]
pub struct StudyOutcome {
    /// mean over repeats of L(w^t) − L(w*); index t−1.
    pub mean_loss: Vec<f64>,
    pub slope: f64,
}

/// Convergence study on the quadratic oracle L(w) = ½‖w − w*‖².
///
/// Each step estimates the gradient antithetically from `directions`
/// probes of per-sample objectives f(w; ξ) = ½‖w − ξ‖² with fresh
/// ξ ~ N(w*, noise²·I). Their mean is the quadratic above (plus a
/// constant), and the per-sample gradient noise at w* has covariance
/// noise²·I, the regime in which a 1/t schedule yields a 1/t loss gap.
/// The reported gap itself is evaluated exactly, without sampling.
pub fn quadratic_study_with(p: &StudyParams, seed: &CommonSeed) -> StudyOutcome {
    assert!(p.d >= 1 && p.d <= 100, "desk-scale dimensions only");
    assert!(p.directions >= 1 && p.repeats >= 1 && p.rounds >= 1);
    let d = p.d as usize;
    let mut sum_loss = vec![0.0f64; p.rounds as usize];
    for r in 0..p.repeats {
        let repeat_seed =
            CommonSeed::from_bytes(*derive_seed(seed, r as u64, STUDY_LANE, 0).as_bytes());
        let source = SeededEpsilon::new(repeat_seed, p.sigma).expect("positive sigma");
        let cfg0 = crate::escore::RoundConfig::new(p.sigma, p.schedule, 1, 1.0, 1)
            .expect("valid study config");
        let mut w = vec![p.offset; d];
        for t in 1..=p.rounds {
            let gap: f64 = w.iter().map(|&x| 0.5 * (x as f64).powi(2)).sum();
            sum_loss[(t - 1) as usize] += gap;

            let mut samples = vec![vec![0.0f32; d]; p.directions as usize];
            if p.noise > 0.0 {
                // Optimum jitter lives on a batch index the direction
                // stream never touches, keeping the two independent.
                let mut jitter = GaussStream::new(
                    &derive_seed(&repeat_seed, t, STUDY_LANE, u32::MAX),
                    p.noise,
                )
                .expect("positive noise");
                for xi in &mut samples {
                    jitter.fill(xi);
                }
            }
            let cfg = cfg0.with_round(t);
            let g = es_estimate_antithetic(&w, &samples, &cfg, &source, |wp, xi| {
                wp.iter()
                    .zip(xi.iter())
                    .map(|(&a, &b)| {
                        let e = a as f64 - b as f64;
                        0.5 * e * e
                    })
                    .sum()
            });
            let alpha = p.schedule.at(t).expect("t >= 1");
            for (wi, &gi) in w.iter_mut().zip(&g) {
                *wi = (*wi as f64 - alpha * gi as f64) as f32;
            }
        }
    }
    let mean_loss: Vec<f64> = sum_loss
        .iter()
        .map(|&s| s / p.repeats as f64)
        .collect();
    let slope = fit_loglog_slope(&mean_loss, 10);
    StudyOutcome { mean_loss, slope }
}

/// The headline study: 64 directions per step, unit optimum jitter, and an
/// initial displacement sized so the noise floor dominates early.
pub fn quadratic_study(
    d: u32,
    schedule: LearningRate,
    rounds: u64,
    repeats: u32,
    seed: &CommonSeed,
) -> StudyOutcome {
    quadratic_study_with(
        &StudyParams {
            d,
            directions: 64,
            sigma: 0.1,
            noise: 1.0,
            offset: 0.4,
            schedule,
            rounds,
            repeats,
        },
        seed,
    )
}

/// Least-squares slope of ln(loss) against ln(t) for t in [t_min, T].
/// Rounds with a zero mean loss make the fit meaningless; they return NaN.
pub fn fit_loglog_slope(mean_loss: &[f64], t_min: u64) -> f64 {
    let points: Vec<(f64, f64)> = mean_loss
        .iter()
        .enumerate()
        .filter(|&(i, _)| (i + 1) as u64 >= t_min)
        .map(|(i, &l)| ((i as f64 + 1.0).ln(), l.ln()))
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Deterministic labeled dataset for self-contained fixtures: inputs are
/// seeded Gaussians, the label is the largest of `classes` fixed random
/// projections of the image.
pub fn synthetic_dataset(seed: &CommonSeed, n: usize, width: usize, classes: u8) -> Dataset {
    assert!((1..=10).contains(&classes));
    let mut images = vec![0.0f32; n * width];
    fill(seed, 1, &mut images);
    let mut proj = vec![0.0f32; classes as usize * width];
    fill(seed, 2, &mut proj);
    let labels: Vec<u8> = (0..n)
        .map(|i| {
            let img = &images[i * width..(i + 1) * width];
            let mut best = (f64::NEG_INFINITY, 0u8);
            for c in 0..classes {
                let row = &proj[c as usize * width..(c as usize + 1) * width];
                let score: f64 = img
                    .iter()
                    .zip(row)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                if score > best.0 {
                    best = (score, c);
                }
            }
            best.1
        })
        .collect();
    Dataset::from_parts(width, images, labels).expect("consistent by construction")
}

fn fill(seed: &CommonSeed, batch: u32, out: &mut [f32]) {
    let mut stream = GaussStream::new(&derive_seed(seed, 0, STUDY_LANE, batch), 1.0)
        .expect("unit sigma");
    stream.fill(out);
}
