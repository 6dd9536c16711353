//! System-level acceptance checks, one test per numbered property. Every
//! test prints a single PASS/FAIL line with the measured values; the
//! tolerance it enforces sits in a named constant directly above the
//! check. Run with `-- --nocapture` to see the lines for passing tests.
//!
//! Checks 01 and 03..06 and 10 are self-contained. Checks 02, 07, 08 and
//! 09 need the four MNIST IDX files under data/mnist at the workspace
//! root (gzip accepted); see the README for fetch instructions.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use fedes::data::{batches, PartitionMode};
use fedes::detrand::{derive_seed, CommonSeed, GaussStream};
use fedes::escore::{
    aggregate, antithetic_batch_loss, client_round, es_estimate_antithetic, ClientWeights,
    EpsilonSource, LearningRate, LossEntry, LossReport, RoundConfig, SeededEpsilon,
};
use fedes::exp::{
    load_test, quadratic_study, run_experiment, synthetic_dataset, Algo, ExperimentConfig,
    RunArtifacts, Schedule, TimeoutBehavior, Transport,
};
use fedes::fednet::{decode, encode, Message, MAX_PAYLOAD};
use fedes::nn::{accuracy, backward, init_params, Batch, MlpSpec, ParamVector};

fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {}. {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn seed(tag: u8) -> CommonSeed {
    CommonSeed::from_bytes([tag; 32])
}

fn mnist_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let present = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .iter()
    .all(|base| dir.join(base).exists() || dir.join(format!("{base}.gz")).exists());
    assert!(
        present,
        "MNIST IDX files not found under {}; fetch them as described in the README (gzip accepted)",
        dir.display()
    );
    dir
}

fn desk_config(mode: PartitionMode, beta: f32) -> ExperimentConfig {
    ExperimentConfig {
        algo: Algo::Fedes,
        widths: vec![784, 128, 128, 10],
        clients: 4,
        n_b: 64,
        sigma: 0.01,
        alpha: 0.01,
        schedule: Schedule::Constant,
        beta,
        mode,
        rounds: 300,
        common_seed: "2a".repeat(32),
        data_dir: mnist_dir(),
        train_limit: Some(4000),
        transport: Transport::Inproc,
        eval_every: 10,
        timeout_secs: 300,
        on_timeout: TimeoutBehavior::Abort,
        listen: None,
        connect: None,
    }
}

struct DeskRun {
    _out: tempfile::TempDir,
    artifacts: RunArtifacts,
    test_acc: f32,
}

fn run_desk(mode: PartitionMode, beta: f32) -> DeskRun {
    let cfg = desk_config(mode, beta);
    let out = tempfile::tempdir().expect("tempdir");
    let artifacts = run_experiment(&cfg, out.path()).expect("desk run completes");
    let test = load_test(&cfg).expect("test set loads");
    let test_acc = accuracy(&artifacts.final_params, &test).expect("final params evaluable");
    DeskRun {
        _out: out,
        artifacts,
        test_acc,
    }
}

fn desk_iid() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| run_desk(PartitionMode::Iid, 1.0))
}

fn desk_noniid() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| run_desk(PartitionMode::NonIid, 1.0))
}

fn desk_elite() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| run_desk(PartitionMode::Iid, 0.25))
}

/// Column `idx` of every data row of a metrics CSV.
fn csv_column(path: &Path, idx: usize) -> Vec<String> {
    std::fs::read_to_string(path)
        .expect("csv readable")
        .lines()
        .skip(1)
        .map(|row| row.split(',').nth(idx).expect("column present").to_string())
        .collect()
}

#[test]
fn criterion_01_communication_accounting() {
    // Per-client uplink scalars per round at n_k = 6000, via real client
    // rounds on a small network.
    let data = synthetic_dataset(&seed(17), 6000, 8, 4);
    let idxs: Vec<u32> = (0..6000).collect();
    let spec = MlpSpec::new(vec![8, 6, 4]).unwrap();
    let w = init_params(&spec, &derive_seed(&seed(17), 0, u32::MAX, 0));
    let common = seed(18);
    let mut measured = Vec::new();
    for n_b in [64u32, 256, 1024] {
        let shard = batches(&data, &idxs, n_b);
        let cfg = RoundConfig::new(0.01, LearningRate::Constant(0.01), n_b, 1.0, 1).unwrap();
        let report = client_round(0, &w, &cfg, &common, &shard).unwrap();
        measured.push(report.entries.len() as u32);
    }
    let counts_ok = measured == [94, 24, 6];

    let n = MlpSpec::new(vec![784, 1024, 1024, 10]).unwrap().param_count();
    let fedgd_ok = n == 1_863_690;

    const RATIO_BAND: (f64, f64) = (1.8e4, 2.1e4);
    let ratio = n as f64 / 94.0;
    let ratio_ok = ratio >= RATIO_BAND.0 && ratio <= RATIO_BAND.1;

    verdict(
        "01",
        counts_ok && fedgd_ok && ratio_ok,
        &format!(
            "uplink scalars {measured:?} (want [94, 24, 6]), fedgd uplink {n} \
             (want 1863690), ratio {ratio:.0} in [18000, 21000]"
        ),
    );
}

#[test]
fn criterion_02_determinism_across_runs_and_transports() {
    let mut cfg = desk_config(PartitionMode::Iid, 1.0);
    cfg.train_limit = Some(1024);
    cfg.rounds = 20;
    cfg.eval_every = 5;
    let dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&cfg, &dir.path().join("a")).unwrap();
    let b = run_experiment(&cfg, &dir.path().join("b")).unwrap();
    let mut tcp_cfg = cfg.clone();
    tcp_cfg.transport = Transport::Tcp;
    let c = run_experiment(&tcp_cfg, &dir.path().join("c")).unwrap();

    let params = |r: &RunArtifacts| std::fs::read(&r.params_path).unwrap();
    let params_ok = params(&a) == params(&b);
    let tcp_ok = params(&a) == params(&c);

    // Everything except the wall-clock column must agree.
    let stable_cells = |r: &RunArtifacts| -> Vec<String> {
        std::fs::read_to_string(&r.csv_path)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let csv_ok = stable_cells(&a) == stable_cells(&b) && stable_cells(&a) == stable_cells(&c);

    verdict(
        "02",
        params_ok && csv_ok && tcp_ok,
        &format!(
            "repeat run params identical: {params_ok}, csv identical apart from wall_ms: \
             {csv_ok}, tcp matches inproc: {tcp_ok} ({} parameter bytes)",
            params(&a).len()
        ),
    );
}

#[test]
fn criterion_03_estimator_matches_quadratic_gradient() {
    // L(w) = ½‖w − w*‖² with w* = 0, so ∇L = w; every coordinate of the
    // probe point has magnitude 1.
    const DIRECTIONS: usize = 100_000;
    const REL_TOL: f64 = 0.05;
    let d = 10usize;
    let w: Vec<f32> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let cfg = RoundConfig::new(0.05, LearningRate::Constant(0.01), 1, 1.0, 1).unwrap();
    let source = SeededEpsilon::new(seed(23), 0.05).unwrap();
    let samples = vec![(); DIRECTIONS];
    let g = es_estimate_antithetic(&w, &samples, &cfg, &source, |wp, _| {
        wp.iter().map(|&a| 0.5 * (a as f64) * (a as f64)).sum()
    });
    let worst = g
        .iter()
        .zip(&w)
        .map(|(&est, &grad)| ((est as f64 - grad as f64) / grad as f64).abs())
        .fold(0.0f64, f64::max);
    verdict(
        "03",
        worst <= REL_TOL,
        &format!(
            "worst coordinate relative error {worst:.4} over {DIRECTIONS} antithetic \
             perturbations (tolerance {REL_TOL})"
        ),
    );
}

/// Addresses a client's local batch indices into one shared probe pool,
/// so different client splits see the same perturbations.
struct PoolSource {
    inner: SeededEpsilon,
    starts: Vec<u32>,
}

impl EpsilonSource for PoolSource {
    fn fill(&self, round: u64, client: u32, batch: u32, offset: u64, out: &mut [f32]) {
        self.inner
            .fill(round, 0, self.starts[client as usize] + batch, offset, out);
    }
}

#[test]
fn criterion_04_weighted_aggregation_equals_pooled_estimator() {
    const ELEM_TOL: f32 = 1e-6;
    const BATCHES: u32 = 64;
    // Crosses the aggregation chunk boundary.
    let n_params = 70_001usize;
    let sigma = 0.05f32;
    let cfg = RoundConfig::new(sigma, LearningRate::Constant(0.01), 8, 1.0, 1).unwrap();
    let source = SeededEpsilon::new(seed(29), sigma).unwrap();

    let mut losses = vec![0.0f32; BATCHES as usize];
    GaussStream::new(&derive_seed(&seed(31), 0, 0, 0), 1.0)
        .unwrap()
        .fill(&mut losses);

    let pooled_report = LossReport {
        round: 1,
        client: 0,
        entries: (0..BATCHES)
            .map(|b| LossEntry {
                batch: b,
                loss: losses[b as usize],
            })
            .collect(),
    };
    let pooled_weights =
        ClientWeights::from_sample_counts(&[(BATCHES * 8) as u64], 8).unwrap();
    let pooled = aggregate(&[pooled_report], &cfg, &pooled_weights, &source, n_params).unwrap();

    // Five deterministic random compositions of the same 64 batches.
    let mut rng = 0x243f_6a88_85a3_08d3u64;
    let mut next = move || {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        rng
    };
    let mut worst = 0.0f32;
    for _split in 0..5 {
        let clients = 2 + (next() % 5) as u32;
        let mut cuts: Vec<u32> = (0..clients - 1).map(|_| 1 + (next() % 63) as u32).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut bounds = vec![0u32];
        bounds.extend(&cuts);
        bounds.push(BATCHES);

        let mut reports = Vec::new();
        let mut counts = Vec::new();
        let mut starts = Vec::new();
        for k in 0..bounds.len() - 1 {
            let width = bounds[k + 1] - bounds[k];
            starts.push(bounds[k]);
            counts.push((width * 8) as u64);
            reports.push(LossReport {
                round: 1,
                client: k as u32,
                entries: (0..width)
                    .map(|b| LossEntry {
                        batch: b,
                        loss: losses[(bounds[k] + b) as usize],
                    })
                    .collect(),
            });
        }
        let weights = ClientWeights::from_sample_counts(&counts, 8).unwrap();
        let pool = PoolSource {
            inner: SeededEpsilon::new(seed(29), sigma).unwrap(),
            starts,
        };
        let split = aggregate(&reports, &cfg, &weights, &pool, n_params).unwrap();
        for (a, b) in split.iter().zip(&pooled) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        "04",
        worst <= ELEM_TOL,
        &format!(
            "worst elementwise gap {worst:.2e} between rho-weighted splits and the pooled \
             flat estimator over 5 random compositions (tolerance {ELEM_TOL:.0e})"
        ),
    );
}

#[test]
fn criterion_05_inverse_t_schedule_gives_reciprocal_convergence() {
    const SLOPE_BAND: (f64, f64) = (-1.25, -0.75);
    let outcome = quadratic_study(10, LearningRate::InverseT, 1000, 20, &seed(37));
    let ok = outcome.slope >= SLOPE_BAND.0 && outcome.slope <= SLOPE_BAND.1;
    verdict(
        "05",
        ok,
        &format!(
            "fitted log-log slope {:.3} over t in [10, 1000], 20 repeats (band [{}, {}])",
            outcome.slope, SLOPE_BAND.0, SLOPE_BAND.1
        ),
    );
}

/// f64 forward pass over the same layout, independent of the production
/// code, for the finite-difference oracle.
fn shadow_loss(widths: &[usize], values: &[f64], batch: &Batch) -> f64 {
    let mut total = 0.0;
    for s in 0..batch.len() {
        let mut act: Vec<f64> = batch.input(s).iter().map(|&v| v as f64).collect();
        let mut offset = 0usize;
        for l in 0..widths.len() - 1 {
            let (fi, fo) = (widths[l], widths[l + 1]);
            let mut next = vec![0.0f64; fo];
            for (j, n) in next.iter_mut().enumerate() {
                *n = values[offset + fi * fo + j];
                for (i, &a) in act.iter().enumerate() {
                    *n += a * values[offset + i * fo + j];
                }
            }
            offset += fi * fo + fo;
            if l < widths.len() - 2 {
                for n in next.iter_mut() {
                    *n = n.max(0.0);
                }
            }
            act = next;
        }
        let m = act.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = act.iter().map(|&v| (v - m).exp()).sum();
        total += z.ln() + m - act[batch.label(s) as usize];
    }
    total / batch.len() as f64
}

#[test]
fn criterion_06_backward_matches_finite_differences() {
    const REL_TOL: f64 = 1e-4;
    const PROBES: usize = 100;
    let spec = MlpSpec::new(vec![5, 4, 3]).unwrap();
    let params = init_params(&spec, &derive_seed(&seed(41), 0, 0, 0));
    let inputs: Vec<f32> = (0..5 * 7).map(|i| ((i * 29 % 97) as f32) / 97.0).collect();
    let labels = vec![0u8, 2, 1, 0, 1, 2, 2];
    let batch = Batch::new(5, inputs, labels).unwrap();
    let grad = backward(&params, &batch).unwrap();

    let shadow: Vec<f64> = params.values().iter().map(|&v| v as f64).collect();
    let widths = [5usize, 4, 3];
    let h = 1e-3;
    let mut worst = 0.0f64;
    // Stride 7 is coprime to the 39 parameters, so all coordinates are
    // covered.
    for probe in 0..PROBES {
        let c = (probe * 7) % params.len();
        let mut plus = shadow.clone();
        let mut minus = shadow.clone();
        plus[c] += h;
        minus[c] -= h;
        let fd = (shadow_loss(&widths, &plus, &batch) - shadow_loss(&widths, &minus, &batch))
            / (2.0 * h);
        let got = grad.values()[c] as f64;
        worst = worst.max((got - fd).abs() / fd.abs().max(1e-6));
    }
    verdict(
        "06",
        worst <= REL_TOL,
        &format!(
            "worst relative error {worst:.2e} over {PROBES} finite-difference probes of a \
             [5,4,3] net (tolerance {REL_TOL:.0e})"
        ),
    );
}

#[test]
fn criterion_07_desk_scale_mnist_accuracy() {
    const FLOOR: f32 = 0.80;
    const GAP_TOL: f32 = 0.05;
    let iid = desk_iid().test_acc;
    let noniid = desk_noniid().test_acc;
    let ok = iid >= FLOOR && noniid >= FLOOR && (iid - noniid).abs() <= GAP_TOL;
    verdict(
        "07",
        ok,
        &format!(
            "test accuracy after 300 rounds: iid {:.2}%, noniid {:.2}%, gap {:.2} points \
             (floor {:.0}%, gap tolerance {:.0} points)",
            iid * 100.0,
            noniid * 100.0,
            (iid - noniid).abs() * 100.0,
            FLOOR * 100.0,
            GAP_TOL * 100.0
        ),
    );
}

#[test]
#[ignore = "full-scale run: days of single-core compute; best effort, not gating"]
fn criterion_08_full_scale_training() {
    const TARGET: f32 = 0.956;
    const TOL: f32 = 0.010;
    let cfg = ExperimentConfig {
        algo: Algo::Fedes,
        widths: vec![784, 1024, 1024, 10],
        clients: 10,
        n_b: 64,
        sigma: 0.01,
        alpha: 0.01,
        schedule: Schedule::Constant,
        beta: 1.0,
        mode: PartitionMode::Iid,
        rounds: 3000,
        common_seed: "2a".repeat(32),
        data_dir: mnist_dir(),
        train_limit: None,
        transport: Transport::Inproc,
        eval_every: 50,
        timeout_secs: 3600,
        on_timeout: TimeoutBehavior::Abort,
        listen: None,
        connect: None,
    };
    let out = tempfile::tempdir().unwrap();
    let artifacts = run_experiment(&cfg, out.path()).unwrap();
    let test = load_test(&cfg).unwrap();
    let acc = accuracy(&artifacts.final_params, &test).unwrap();
    verdict(
        "08",
        (acc - TARGET).abs() <= TOL,
        &format!(
            "full-scale test accuracy {:.2}% (target {:.1}% ± {:.0} point)",
            acc * 100.0,
            TARGET * 100.0,
            TOL * 100.0
        ),
    );
}

#[test]
fn criterion_09_elite_selection_accuracy_and_uplink() {
    // Keeping every loss must leave reports untouched: compare a client
    // round at beta 1 with a direct per-batch evaluation.
    let data = synthetic_dataset(&seed(43), 48, 12, 3);
    let idxs: Vec<u32> = (0..48).collect();
    let spec = MlpSpec::new(vec![12, 8, 3]).unwrap();
    let w = init_params(&spec, &derive_seed(&seed(43), 0, u32::MAX, 0));
    let common = seed(44);
    let shard = batches(&data, &idxs, 8);
    let cfg = RoundConfig::new(0.02, LearningRate::Constant(0.01), 8, 1.0, 3).unwrap();
    let report = client_round(5, &w, &cfg, &common, &shard).unwrap();
    let identity_ok = report.entries.len() == shard.len()
        && report.entries.iter().enumerate().all(|(b, entry)| {
            let mut eps = ParamVector::zeros(&spec);
            GaussStream::new(&derive_seed(&common, 3, 5, b as u32), 0.02)
                .unwrap()
                .fill(eps.values_mut());
            let direct = antithetic_batch_loss(&w, &eps, &shard[b]).unwrap();
            entry.batch == b as u32 && entry.loss.to_bits() == direct.to_bits()
        });

    // Desk scale: a quarter of 16 batches is exactly 4 scalars per round.
    let elite = desk_elite();
    let baseline = desk_iid();
    let elite_uplink = csv_column(&elite.artifacts.csv_path, 3);
    let base_uplink = csv_column(&baseline.artifacts.csv_path, 3);
    let uplink_ok = elite_uplink.iter().all(|c| c == "4")
        && base_uplink.iter().all(|c| c == "16");

    const DROP_TOL: f32 = 0.10;
    let drop = baseline.test_acc - elite.test_acc;
    let acc_ok = drop <= DROP_TOL;
    verdict(
        "09",
        identity_ok && uplink_ok && acc_ok,
        &format!(
            "beta 1 reports bit-identical to direct evaluation: {identity_ok}; uplink 16 -> 4 \
             scalars (exactly 4x): {uplink_ok}; accuracy {:.2}% vs {:.2}%, drop {:.2} points \
             (tolerance {:.0})",
            elite.test_acc * 100.0,
            baseline.test_acc * 100.0,
            drop * 100.0,
            DROP_TOL * 100.0
        ),
    );
}

#[test]
fn criterion_10_uplink_frames_stay_scalar_sized() {
    // Frame layout: 4-byte payload length, 1-byte tag, payload.
    let frame_ok = [0usize, 1, 5, 94].iter().all(|&n| {
        let report = LossReport {
            round: 7,
            client: 2,
            entries: (0..n as u32)
                .map(|b| LossEntry {
                    batch: b,
                    loss: 0.25,
                })
                .collect(),
        };
        let bytes = encode(&Message::Report(report));
        bytes.len() == 5 + 16 + 8 * n
    });

    // The downlink broadcast is the only parameter-sized message.
    let round_start = encode(&Message::RoundStart {
        t: 1,
        params: vec![0.0; 1000],
    });
    let downlink_ok = round_start.len() == 5 + 8 + 4 * 1000;

    // Structural rejection: a count field inconsistent with the payload
    // length, and an oversize length prefix.
    let mut inconsistent = Vec::new();
    inconsistent.extend_from_slice(&17u32.to_le_bytes());
    inconsistent.push(2);
    inconsistent.extend_from_slice(&[0u8; 17]);
    let malformed_ok = decode(&inconsistent).is_err();
    let mut oversize = Vec::new();
    oversize.extend_from_slice(&((MAX_PAYLOAD + 1) as u32).to_le_bytes());
    oversize.push(2);
    let oversize_ok = decode(&oversize).is_err();

    // A report smuggling a parameter vector as entries decodes (it is
    // shaped like a report) but the server bounds check rejects it: batch
    // indices beyond the client's batch count cannot aggregate.
    let n_params = 1000usize;
    let smuggle = LossReport {
        round: 1,
        client: 0,
        entries: (0..(n_params / 2) as u32)
            .map(|b| LossEntry {
                batch: b,
                loss: 1.0,
            })
            .collect(),
    };
    let cfg = RoundConfig::new(0.05, LearningRate::Constant(0.01), 64, 1.0, 1).unwrap();
    let weights = ClientWeights::from_sample_counts(&[1024], 64).unwrap();
    let source = SeededEpsilon::new(seed(47), 0.05).unwrap();
    let smuggle_ok = aggregate(&[smuggle], &cfg, &weights, &source, n_params).is_err();

    let mut rng = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = move || {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        rng
    };

    // Decode inverts encode for random reports, consuming the whole frame.
    let mut round_trip_ok = true;
    for _ in 0..1000 {
        let report = LossReport {
            round: next(),
            client: next() as u32,
            entries: (0..next() % 95)
                .map(|b| LossEntry {
                    batch: b as u32,
                    // Mask keeps the exponent below all-ones: finite values.
                    loss: f32::from_bits(next() as u32 & 0x7f7f_ffff),
                })
                .collect(),
        };
        let bytes = encode(&Message::Report(report.clone()));
        round_trip_ok &= matches!(
            decode(&bytes),
            Ok((Message::Report(got), consumed))
                if got == report && consumed == bytes.len()
        );
    }

    // Fuzz: random frames never panic the decoder, and everything that
    // decodes as a report satisfies the size law.
    let mut decoded_reports = 0u32;
    let mut fuzz_ok = true;
    for _ in 0..20_000 {
        let len = (next() % 96) as usize;
        let mut buf: Vec<u8> = (0..len).map(|_| next() as u8).collect();
        // Half the time, make the prefix plausible so deeper paths run.
        if len >= 5 && next() % 2 == 0 {
            let payload = (len - 5) as u32;
            buf[..4].copy_from_slice(&payload.to_le_bytes());
            buf[4] = (next() % 5) as u8;
            // A consistent count field lets some reports decode fully.
            if buf[4] == 2 && len >= 21 && (len - 21) % 8 == 0 {
                buf[17..21].copy_from_slice(&(((len - 21) / 8) as u32).to_le_bytes());
            }
        }
        if let Ok((Message::Report(r), consumed)) = decode(&buf) {
            decoded_reports += 1;
            fuzz_ok &= consumed == 5 + 16 + 8 * r.entries.len();
        }
    }

    verdict(
        "10",
        frame_ok
            && downlink_ok
            && malformed_ok
            && oversize_ok
            && smuggle_ok
            && round_trip_ok
            && decoded_reports > 0
            && fuzz_ok,
        &format!(
            "report frames 16+8n bytes: {frame_ok}; downlink 8+4N: {downlink_ok}; \
             inconsistent count rejected: {malformed_ok}; oversize rejected: {oversize_ok}; \
             parameter-shaped report rejected at aggregation: {smuggle_ok}; 1000 round trips \
             exact: {round_trip_ok}; fuzz 20000 frames ({decoded_reports} decoded as reports, \
             all size-lawful: {fuzz_ok})"
        ),
    );
}
