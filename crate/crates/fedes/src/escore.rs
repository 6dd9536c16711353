//! Evolution-strategy training core: antithetic loss probes on the client,
//! natural-gradient reconstruction on the server, elite selection, and the
//! parameter update.
//!
//! The only state a client sends is per-batch scalar losses. Everything
//! else (which directions were probed) is regenerated on the server from
//! the pre-shared seed, so estimator code here is written against an
//! [`EpsilonSource`] rather than concrete buffers.

use rayon::prelude::*;

use crate::detrand::{derive_seed, CommonSeed, GaussStream, STUDY_LANE};
use crate::error::{ConfigError, Error, ModelError, ProtocolError};
use crate::nn::{Batch, Evaluator, ParamVector};

/// Step-size rule for [`sgd_update`]. `InverseT` uses 1/t and ignores any
/// base rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LearningRate {
    Constant(f32),
    InverseT,
}

impl LearningRate {
    /// Step size at round `t` (1-based).
    pub fn at(self, t: u64) -> Result<f64, ConfigError> {
        match self {
            LearningRate::Constant(a) => Ok(a as f64),
            LearningRate::InverseT => {
                if t == 0 {
                    Err(ConfigError::ZeroRound)
                } else {
                    Ok(1.0 / t as f64)
                }
            }
        }
    }
}

/// Per-round hyperparameters shared by server and clients. Valid by
/// construction: sigma > 0, 0 < beta <= 1, n_b >= 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundConfig {
    sigma: f32,
    alpha: LearningRate,
    n_b: u32,
    beta: f32,
    t: u64,
}

impl RoundConfig {
    pub fn new(
        sigma: f32,
        alpha: LearningRate,
        n_b: u32,
        beta: f32,
        t: u64,
    ) -> Result<Self, ConfigError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(ConfigError::NonPositiveSigma(sigma));
        }
        if let LearningRate::Constant(a) = alpha {
            if !(a.is_finite() && a > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "learning rate must be positive and finite, got {a}"
                )));
            }
        }
        if n_b == 0 {
            return Err(ConfigError::ZeroBatchSize);
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(ConfigError::BetaOutOfRange(beta));
        }
        Ok(RoundConfig {
            sigma,
            alpha,
            n_b,
            beta,
            t,
        })
    }

    pub fn sigma(&self) -> f32 {
        self.sigma
    }

    pub fn alpha(&self) -> LearningRate {
        self.alpha
    }

    pub fn n_b(&self) -> u32 {
        self.n_b
    }

    pub fn beta(&self) -> f32 {
        self.beta
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Same hyperparameters at a different round.
    pub fn with_round(mut self, t: u64) -> Self {
        self.t = t;
        self
    }
}

/// Aggregation weights: rho_k sums to 1 across participating clients, B_k
/// is the number of batches client k evaluates per round.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientWeights {
    rho: Vec<f32>,
    batch_counts: Vec<u32>,
}

impl ClientWeights {
    /// Derives rho_k = n_k/n and B_k = ceil(n_k/n_b) from per-client sample
    /// counts.
    pub fn from_sample_counts(counts: &[u64], n_b: u32) -> Result<Self, ConfigError> {
        if counts.is_empty() {
            return Err(ConfigError::NoClients);
        }
        if n_b == 0 {
            return Err(ConfigError::ZeroBatchSize);
        }
        let total: u64 = counts.iter().sum();
        let mut rho = Vec::with_capacity(counts.len());
        let mut batch_counts = Vec::with_capacity(counts.len());
        for (k, &n_k) in counts.iter().enumerate() {
            if n_k == 0 {
                return Err(ConfigError::EmptyShard { client: k as u32 });
            }
            rho.push((n_k as f64 / total as f64) as f32);
            let b = n_k.div_ceil(n_b as u64);
            batch_counts.push(u32::try_from(b).map_err(|_| {
                ConfigError::Invalid(format!("client {k}: {b} batches overflow u32"))
            })?);
        }
        Ok(ClientWeights { rho, batch_counts })
    }

    pub fn clients(&self) -> usize {
        self.rho.len()
    }

    pub fn rho(&self, k: usize) -> f32 {
        self.rho[k]
    }

    pub fn batch_count(&self, k: usize) -> u32 {
        self.batch_counts[k]
    }

    /// Zeroes the weight of clients not in `keep` and renormalizes the rest
    /// to sum to 1. Client indices are unchanged.
    pub fn restrict(&self, keep: &[bool]) -> Result<Self, ConfigError> {
        assert_eq!(keep.len(), self.rho.len(), "keep mask length");
        let total: f64 = self
            .rho
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&r, _)| r as f64)
            .sum();
        if total <= 0.0 {
            return Err(ConfigError::NoClients);
        }
        let rho = self
            .rho
            .iter()
            .zip(keep)
            .map(|(&r, &k)| if k { (r as f64 / total) as f32 } else { 0.0 })
            .collect();
        Ok(ClientWeights {
            rho,
            batch_counts: self.batch_counts.clone(),
        })
    }
}

/// One client's scalar uplink for one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEntry {
    pub batch: u32,
    pub loss: f32,
}

/// Everything a client uplinks for one round: 16 bytes of addressing plus
/// 8 bytes per entry on the wire, regardless of model size.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub round: u64,
    pub client: u32,
    pub entries: Vec<LossEntry>,
}

/// Antithetic loss probe: ½[L(w+ε) − L(w−ε)], with L the batch mean loss.
///
/// The perturbed parameters are built in a scratch copy; `w` is never
/// touched, so its bits are preserved exactly (an in-place add/subtract
/// round trip would not be).
pub fn antithetic_batch_loss(
    w: &ParamVector,
    eps: &ParamVector,
    batch: &Batch,
) -> Result<f32, ModelError> {
    if eps.len() != w.len() {
        return Err(ModelError::ShapeMismatch {
            what: "perturbation length",
            expected: w.len(),
            got: eps.len(),
        });
    }
    let mut eval = Evaluator::new();
    let mut shifted = w.clone();
    Ok(antithetic_probe(w, eps.values(), batch, &mut shifted, &mut eval)? as f32)
}

fn antithetic_probe(
    w: &ParamVector,
    eps: &[f32],
    batch: &Batch,
    shifted: &mut ParamVector,
    eval: &mut Evaluator,
) -> Result<f64, ModelError> {
    let up = shifted.values_mut();
    for ((s, &base), &e) in up.iter_mut().zip(w.values()).zip(eps) {
        *s = base + e;
    }
    let plus = eval.loss_f64(shifted, batch)?;
    let down = shifted.values_mut();
    for ((s, &base), &e) in down.iter_mut().zip(w.values()).zip(eps) {
        *s = base - e;
    }
    let minus = eval.loss_f64(shifted, batch)?;
    Ok(0.5 * (plus - minus))
}

/// Runs one client round: probes every batch with its seed-derived
/// perturbation and returns the elite-selected loss report for `cfg.t()`.
///
/// `shard` must be the client's batches in batch-index order.
pub fn client_round(
    k: u32,
    w: &ParamVector,
    cfg: &RoundConfig,
    common: &CommonSeed,
    shard: &[Batch],
) -> Result<LossReport, Error> {
    if shard.is_empty() {
        return Err(ConfigError::EmptyShard { client: k }.into());
    }
    let sigma = cfg.sigma();
    let t = cfg.t();
    let entries = shard
        .par_iter()
        .enumerate()
        .map_init(
            || (Evaluator::new(), w.clone(), vec![0.0f32; w.len()]),
            |(eval, shifted, eps), (b, batch)| {
                let b = b as u32;
                let seed = derive_seed(common, t, k, b);
                GaussStream::new(&seed, sigma)
                    .expect("sigma validated by RoundConfig")
                    .fill(eps);
                let loss = antithetic_probe(w, eps, batch, shifted, eval)?;
                Ok(LossEntry {
                    batch: b,
                    loss: loss as f32,
                })
            },
        )
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(LossReport {
        round: t,
        client: k,
        entries: elite_select(entries, cfg.beta())?,
    })
}

/// Number of entries an elite report keeps out of `batches`.
pub fn elite_count(batches: u32, beta: f32) -> Result<u32, ConfigError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(ConfigError::BetaOutOfRange(beta));
    }
    // The slack absorbs f32 widening error in decimal rates (0.1f32 * 10
    // lands just above 1.0), without disturbing exact products.
    let m = (beta as f64 * batches as f64 - 1e-6).ceil() as u32;
    Ok(m.clamp(1, batches.max(1)))
}

/// Keeps the max(1, ceil(beta·B)) entries of largest |loss|, returned in
/// batch order. Ties prefer the lower batch index.
pub fn elite_select(entries: Vec<LossEntry>, beta: f32) -> Result<Vec<LossEntry>, ConfigError> {
    if entries.is_empty() {
        return Err(ConfigError::Invalid(
            "elite selection needs at least one loss entry".into(),
        ));
    }
    let m = elite_count(entries.len() as u32, beta)? as usize;
    if m >= entries.len() {
        return Ok(entries);
    }
    let mut ranked = entries;
    ranked.sort_by(|a, b| {
        b.loss
            .abs()
            .total_cmp(&a.loss.abs())
            .then(a.batch.cmp(&b.batch))
    });
    ranked.truncate(m);
    ranked.sort_by_key(|e| e.batch);
    Ok(ranked)
}

/// Supplier of perturbation chunks addressed by (round, client, batch) and
/// a parameter offset. The production source regenerates them from the
/// common seed; tests inject fixed tables.
pub trait EpsilonSource: Sync {
    fn fill(&self, round: u64, client: u32, batch: u32, offset: u64, out: &mut [f32]);
}

/// Regenerates perturbations from the pre-shared common seed, exactly as
/// the clients drew them.
pub struct SeededEpsilon {
    common: CommonSeed,
    sigma: f32,
}

impl SeededEpsilon {
    pub fn new(common: CommonSeed, sigma: f32) -> Result<Self, ConfigError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(ConfigError::NonPositiveSigma(sigma));
        }
        Ok(SeededEpsilon { common, sigma })
    }
}

impl EpsilonSource for SeededEpsilon {
    fn fill(&self, round: u64, client: u32, batch: u32, offset: u64, out: &mut [f32]) {
        let seed = derive_seed(&self.common, round, client, batch);
        let mut stream =
            GaussStream::new(&seed, self.sigma).expect("sigma validated at construction");
        stream.seek(offset);
        stream.fill(out);
    }
}

/// Parameter span each aggregation task owns. Fixed so the accumulation
/// order per coordinate never depends on thread count.
const AGG_CHUNK: usize = 1 << 16;

/// Reconstructs the natural-gradient estimate from scalar loss reports:
/// g̃ = (1/σ²) Σ_k (ρ_k/B_k) Σ_b ε_k^b · l_k^b.
///
/// The divisor stays B_k under elite selection, so missing entries count
/// as zero. Perturbations are regenerated chunk-wise; peak memory is the
/// output plus one f64 chunk per worker, never K·B·n_params.
pub fn aggregate<S: EpsilonSource>(
    reports: &[LossReport],
    cfg: &RoundConfig,
    weights: &ClientWeights,
    source: &S,
    n_params: usize,
) -> Result<Vec<f32>, ProtocolError> {
    let clients = weights.clients() as u32;
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by_key(|&i| reports[i].client);
    for pair in order.windows(2) {
        if reports[pair[0]].client == reports[pair[1]].client {
            return Err(ProtocolError::DuplicateClient(reports[pair[1]].client));
        }
    }
    let mut scales = vec![0.0f64; reports.len()];
    for &i in &order {
        let report = &reports[i];
        if report.client >= clients {
            return Err(ProtocolError::ClientRange {
                client: report.client,
                clients,
            });
        }
        if report.round != cfg.t() {
            return Err(ProtocolError::StaleRound {
                got: report.round,
                want: cfg.t(),
            });
        }
        let limit = weights.batch_count(report.client as usize);
        for (e, entry) in report.entries.iter().enumerate() {
            if entry.batch >= limit {
                return Err(ProtocolError::BatchRange {
                    client: report.client,
                    batch: entry.batch,
                    limit,
                });
            }
            if e > 0 && report.entries[e - 1].batch >= entry.batch {
                return Err(ProtocolError::UnorderedBatches { entry: e });
            }
        }
        scales[i] = weights.rho(report.client as usize) as f64 / limit as f64;
    }

    let inv_sigma_sq = 1.0 / (cfg.sigma() as f64 * cfg.sigma() as f64);
    let mut g = vec![0.0f32; n_params];
    g.par_chunks_mut(AGG_CHUNK).enumerate().for_each(|(ci, out)| {
        let offset = (ci * AGG_CHUNK) as u64;
        let mut acc = vec![0.0f64; out.len()];
        let mut eps = vec![0.0f32; out.len()];
        for &ri in &order {
            let report = &reports[ri];
            for entry in &report.entries {
                source.fill(report.round, report.client, entry.batch, offset, &mut eps);
                let scale = scales[ri] * entry.loss as f64;
                for (a, &e) in acc.iter_mut().zip(eps.iter()) {
                    *a += scale * e as f64;
                }
            }
        }
        for (o, a) in out.iter_mut().zip(acc.iter()) {
            *o = (a * inv_sigma_sq) as f32;
        }
    });
    Ok(g)
}

/// One descent step: w − α_t·g, with α_t from the schedule in `cfg`.
pub fn sgd_update(w: &ParamVector, g: &ParamVector, cfg: &RoundConfig) -> Result<ParamVector, Error> {
    if g.len() != w.len() {
        return Err(ModelError::ShapeMismatch {
            what: "gradient length",
            expected: w.len(),
            got: g.len(),
        }
        .into());
    }
    let alpha = cfg.alpha().at(cfg.t())?;
    let values = w
        .values()
        .iter()
        .zip(g.values())
        .map(|(&wi, &gi)| (wi as f64 - alpha * gi as f64) as f32)
        .collect();
    Ok(ParamVector::from_values(w.spec(), values).expect("length preserved"))
}

fn shifted_buf(w: &[f32], eps: &[f32], sign: f64, buf: &mut [f32]) {
    for ((s, &base), &e) in buf.iter_mut().zip(w).zip(eps) {
        *s = (base as f64 + sign * e as f64) as f32;
    }
}

/// Plain one-sided estimator over generic objectives:
/// g̃ = (1/(nσ²)) Σ_i f(w+ε^i; ξ_i) ε^i.
///
/// Directions are addressed on the reserved study lane at round `cfg.t()`,
/// batch index i. Kept for comparison studies; training uses the
/// antithetic path.
pub fn es_estimate_plain<S, Xi, F>(
    w: &[f32],
    samples: &[Xi],
    cfg: &RoundConfig,
    source: &S,
    mut objective: F,
) -> Vec<f32>
where
    S: EpsilonSource,
    F: FnMut(&[f32], &Xi) -> f64,
{
    es_estimate_impl(w, samples, cfg, source, |w_shift, _, xi| {
        objective(w_shift, xi)
    })
}

/// Antithetic estimator over generic objectives:
/// g̃ = (1/(nσ²)) Σ_i ½[f(w+ε^i; ξ_i) − f(w−ε^i; ξ_i)] ε^i.
pub fn es_estimate_antithetic<S, Xi, F>(
    w: &[f32],
    samples: &[Xi],
    cfg: &RoundConfig,
    source: &S,
    mut objective: F,
) -> Vec<f32>
where
    S: EpsilonSource,
    F: FnMut(&[f32], &Xi) -> f64,
{
    let mut minus = vec![0.0f32; w.len()];
    let mut eps_copy = vec![0.0f32; w.len()];
    es_estimate_impl(w, samples, cfg, source, |w_plus, eps, xi| {
        eps_copy.copy_from_slice(eps);
        let up = objective(w_plus, xi);
        shifted_buf(w, &eps_copy, -1.0, &mut minus);
        let down = objective(&minus, xi);
        0.5 * (up - down)
    })
}

fn es_estimate_impl<S, Xi, F>(
    w: &[f32],
    samples: &[Xi],
    cfg: &RoundConfig,
    source: &S,
    mut loss_of: F,
) -> Vec<f32>
where
    S: EpsilonSource,
    F: FnMut(&[f32], &[f32], &Xi) -> f64,
{
    let d = w.len();
    let mut acc = vec![0.0f64; d];
    let mut eps = vec![0.0f32; d];
    let mut plus = vec![0.0f32; d];
    for (i, xi) in samples.iter().enumerate() {
        source.fill(cfg.t(), STUDY_LANE, i as u32, 0, &mut eps);
        shifted_buf(w, &eps, 1.0, &mut plus);
        let l = loss_of(&plus, &eps, xi);
        for (a, &e) in acc.iter_mut().zip(eps.iter()) {
            *a += l * e as f64;
        }
    }
    let scale = 1.0 / (samples.len() as f64 * cfg.sigma() as f64 * cfg.sigma() as f64);
    acc.iter().map(|&a| (a * scale) as f32).collect()
}
