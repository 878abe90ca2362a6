//! Distributed-mean-estimation experiments: NMSE/vNMSE measurement over
//! synthetic inputs, the per-coordinate quantizer-MSE integral, parameter
//! sweeps, and a distributed power-iteration simulation.
//!
//! Randomness derives from `(seed, trial, client)` through the shared PRF,
//! so reports are reproducible across schedules and thread counts.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::codecs::{self, expected_sq_error, Codec, CodecError, CodecParams, SeedSet};
use crate::prf;
use crate::solver::{self, SolverError, SolverOptions};
use crate::tables::{normal, QuantConfig, QuantTable, TableError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown input distribution {0:?}")]
    UnknownDist(String),
    #[error("config/table mismatch: {0}")]
    TableMismatch(String),
    #[error("invalid experiment: {0}")]
    BadExperiment(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Synthetic input families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputDist {
    /// Independent LogNormal(0,1) vector per client.
    LogNormal,
    /// Independent standard-normal vector per client.
    Normal,
    /// One LogNormal(0,1) vector shared by every client.
    IdenticalLogNormal,
    /// `nonzeros` spikes at random positions (adversarial rotation input).
    SparseSpike { nonzeros: usize },
}

impl InputDist {
    pub fn parse(name: &str, spike_nonzeros: usize) -> Result<Self, HarnessError> {
        match name {
            "lognormal" => Ok(InputDist::LogNormal),
            "normal" => Ok(InputDist::Normal),
            "identical_lognormal" => Ok(InputDist::IdenticalLogNormal),
            "sparse_spike" => Ok(InputDist::SparseSpike { nonzeros: spike_nonzeros.max(1) }),
            other => Err(HarnessError::UnknownDist(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InputDist::LogNormal => "lognormal",
            InputDist::Normal => "normal",
            InputDist::IdenticalLogNormal => "identical_lognormal",
            InputDist::SparseSpike { .. } => "sparse_spike",
        }
    }
}

/// One DME experiment: scheme, population, dimension, codec parameters,
/// input family, and trial count.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scheme: String,
    pub clients: usize,
    pub dim: usize,
    pub bits: u8,
    pub shared_bits: u8,
    pub p_num: u64,
    pub p_den: u64,
    pub dist: InputDist,
    pub trials: usize,
    pub seed: u64,
}

/// Per-experiment metrics.
#[derive(Debug, Clone)]
pub struct DmeReport {
    /// `E ||x_avg_hat - mean||^2 / ((1/n) sum ||x_c||^2)`, trial average.
    pub nmse: f64,
    /// Per-client `E ||x_c - x_c_hat||^2 / ||x_c||^2`, trial averages.
    pub vnmse_per_client: Vec<f64>,
    /// Per-coordinate quantizer MSE of the table, when the scheme has one.
    pub chi_estimate: Option<f64>,
    /// Accounted bits per coordinate, averaged over messages.
    pub bits_per_coord: f64,
    /// Fraction of coordinates sent exactly, averaged over messages.
    pub outlier_fraction: f64,
    /// Median wall-clock seconds per trial (all clients).
    pub encode_seconds: f64,
    pub decode_seconds: f64,
}

impl DmeReport {
    pub fn mean_vnmse(&self) -> f64 {
        self.vnmse_per_client.iter().sum::<f64>() / self.vnmse_per_client.len() as f64
    }
}

/// Generates the client vectors for one trial.
pub fn generate_inputs(dist: InputDist, dim: usize, clients: usize, seed: u64) -> Vec<Vec<f64>> {
    let log_normal = LogNormal::new(0.0, 1.0).expect("valid parameters");
    let vector = |tag: u64| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(prf::chain(seed, &[tag]));
        match dist {
            InputDist::LogNormal | InputDist::IdenticalLogNormal => {
                (0..dim).map(|_| log_normal.sample(&mut rng)).collect()
            }
            InputDist::Normal => (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
            InputDist::SparseSpike { nonzeros } => {
                let mut x = vec![0.0; dim];
                for k in 0..nonzeros.min(dim) {
                    let idx = prf::prf(prf::chain(seed, &[tag, k as u64]), 0) as usize % dim;
                    let magnitude: f64 = StandardNormal.sample(&mut rng);
                    x[idx] += magnitude + magnitude.signum();
                }
                x
            }
        }
    };
    match dist {
        InputDist::IdenticalLogNormal => {
            let shared = vector(0);
            vec![shared; clients]
        }
        _ => (0..clients).map(|c| vector(c as u64)).collect(),
    }
}

fn build_codec(
    cfg: &ExperimentConfig,
    table: Option<Arc<QuantTable>>,
) -> Result<Box<dyn Codec>, HarnessError> {
    if let Some(table) = &table {
        let tc = table.config();
        if tc.bits != cfg.bits
            || tc.shared_bits != cfg.shared_bits
            || tc.p_num != cfg.p_num
            || tc.p_den != cfg.p_den
        {
            return Err(HarnessError::TableMismatch(format!(
                "table is b={} l={} p={}/{}, experiment wants b={} l={} p={}/{}",
                tc.bits,
                tc.shared_bits,
                tc.p_num,
                tc.p_den,
                cfg.bits,
                cfg.shared_bits,
                cfg.p_num,
                cfg.p_den
            )));
        }
    }
    let params = CodecParams { table, bits: cfg.bits, p_num: cfg.p_num, p_den: cfg.p_den };
    Ok(codecs::by_name(&cfg.scheme, &params)?)
}

/// Seed derivation: the rotation seed is shared per trial, client/private
/// streams are per `(trial, client)`.
fn seeds_for(root: u64, trial: u64, client: u64) -> SeedSet {
    let trial_seed = prf::chain(root, &[trial]);
    SeedSet {
        global: prf::chain(root, &[0xA11, trial]),
        client: prf::chain(trial_seed, &[2 * client]),
        private: prf::chain(trial_seed, &[2 * client + 1]),
    }
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

/// Runs one experiment: per trial, generates inputs, encodes every client,
/// aggregates, and accumulates NMSE (mean estimate) plus per-client vNMSE
/// (single-client decodes).
pub fn run_dme(
    cfg: &ExperimentConfig,
    table: Option<Arc<QuantTable>>,
) -> Result<DmeReport, HarnessError> {
    if cfg.clients == 0 || cfg.trials == 0 || cfg.dim == 0 {
        return Err(HarnessError::BadExperiment(
            "clients, trials, and dim must be positive".into(),
        ));
    }
    let chi_estimate = table.as_ref().map(|t| estimate_quantizer_mse(t)).transpose()?;
    let codec = build_codec(cfg, table)?;

    // One untimed round so first-touch costs stay out of the medians.
    {
        let x = generate_inputs(cfg.dist, cfg.dim, 1, prf::chain(cfg.seed, &[0xFEED]));
        let msg = codec.encode(&x[0], &seeds_for(cfg.seed, u64::MAX, 0))?;
        codec.decode_aggregate(&[&msg])?;
    }

    let mut nmse_sum = 0.0;
    let mut vnmse_sum = vec![0.0; cfg.clients];
    let mut bits_sum = 0.0;
    let mut outlier_sum = 0.0;
    let mut encode_times = Vec::with_capacity(cfg.trials);
    let mut decode_times = Vec::with_capacity(cfg.trials);

    for trial in 0..cfg.trials {
        let inputs = generate_inputs(
            cfg.dist,
            cfg.dim,
            cfg.clients,
            prf::chain(cfg.seed, &[1, trial as u64]),
        );
        let mean: Vec<f64> = (0..cfg.dim)
            .map(|i| inputs.iter().map(|x| x[i]).sum::<f64>() / cfg.clients as f64)
            .collect();

        let started = Instant::now();
        let messages: Vec<Vec<u8>> = inputs
            .par_iter()
            .enumerate()
            .map(|(c, x)| codec.encode(x, &seeds_for(cfg.seed, trial as u64, c as u64)))
            .collect::<Result<_, _>>()?;
        encode_times.push(started.elapsed().as_secs_f64());

        for msg in &messages {
            bits_sum += codec.bits_per_coordinate(msg)?;
            outlier_sum += codec.outlier_fraction(msg)?;
        }

        let raw: Vec<&[u8]> = messages.iter().map(Vec::as_slice).collect();
        let started = Instant::now();
        let estimate = codec.decode_aggregate(&raw)?;
        decode_times.push(started.elapsed().as_secs_f64());

        let err = estimate.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let denom = inputs.iter().map(|x| sq_norm(x)).sum::<f64>() / cfg.clients as f64;
        if denom > 0.0 {
            nmse_sum += err / denom;
        }

        let singles: Vec<f64> = (0..cfg.clients)
            .into_par_iter()
            .map(|c| -> Result<f64, HarnessError> {
                let decoded = codec.decode_aggregate(&[raw[c]])?;
                let err = decoded
                    .iter()
                    .zip(&inputs[c])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                let denom = sq_norm(&inputs[c]);
                Ok(if denom > 0.0 { err / denom } else { 0.0 })
            })
            .collect::<Result<_, _>>()?;
        for (acc, v) in vnmse_sum.iter_mut().zip(&singles) {
            *acc += v;
        }
    }

    let trials = cfg.trials as f64;
    Ok(DmeReport {
        nmse: nmse_sum / trials,
        vnmse_per_client: vnmse_sum.into_iter().map(|v| v / trials).collect(),
        chi_estimate,
        bits_per_coord: bits_sum / (trials * cfg.clients as f64),
        outlier_fraction: outlier_sum / (trials * cfg.clients as f64),
        encode_seconds: median(&mut encode_times),
        decode_seconds: median(&mut decode_times),
    })
}

/// Default node count for [`estimate_quantizer_mse`].
pub const QUANTIZER_MSE_NODES: usize = (1 << 17) + 1;

/// Per-coordinate quantizer MSE of the interpolated codec on a truncated
/// standard normal: trapezoid rule over `[-T, T]` weighted by the normal
/// density and normalized by the truncated mass.
pub fn estimate_quantizer_mse(table: &QuantTable) -> Result<f64, HarnessError> {
    estimate_quantizer_mse_with_nodes(table, QUANTIZER_MSE_NODES)
}

pub fn estimate_quantizer_mse_with_nodes(
    table: &QuantTable,
    nodes: usize,
) -> Result<f64, HarnessError> {
    let t = table.config().threshold;
    let nodes = nodes.max(3);
    let step = 2.0 * t / (nodes - 1) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..nodes {
        let z = (-t + step * k as f64).clamp(-t, t);
        let w = normal::pdf(z) * if k == 0 || k == nodes - 1 { 0.5 } else { 1.0 };
        num += w * expected_sq_error(z, table)?;
        den += w;
    }
    Ok(num / den)
}

/// One sweep cell.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub bits: u8,
    pub shared_bits: u8,
    pub p_num: u64,
    pub p_den: u64,
    pub chi: Option<f64>,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

/// Solves a table per `(b, l, p)` cell and reports its quantizer MSE.
/// Within a `(b, p)` group, cells run in ascending `l` and each solve is
/// warm-started with the previous solution embedded into the larger
/// shared-randomness alphabet, which enforces the diminishing-returns
/// shape. Solver failures flag the row and the sweep continues.
pub fn sweep(
    b_range: &[u8],
    ell_range: &[u8],
    p_range: &[(u64, u64)],
    quantile_count: usize,
    opts: &SolverOptions,
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &(p_num, p_den) in p_range {
        for &bits in b_range {
            let mut ells: Vec<u8> = ell_range.to_vec();
            ells.sort_unstable();
            let mut previous: Option<(u8, Vec<Vec<f64>>)> = None;
            for &shared_bits in &ells {
                let cell = (|| -> Result<(f64, f64, Vec<Vec<f64>>), HarnessError> {
                    let cfg = QuantConfig::new(bits, shared_bits, quantile_count, p_num, p_den)?;
                    let mut starts = Vec::new();
                    if let Some((prev_l, prev_recon)) = &previous {
                        let mut embedded = prev_recon.clone();
                        for _ in *prev_l..shared_bits {
                            embedded = solver::embed_shared_bit(&embedded);
                        }
                        if embedded.len() == cfg.num_shared() {
                            starts.push(embedded);
                        }
                    }
                    let result = solver::solve_table_with_starts(&cfg, opts, &starts)?;
                    let chi = estimate_quantizer_mse(&result.table)?;
                    Ok((chi, result.objective, result.table.recon().to_vec()))
                })();
                match cell {
                    Ok((chi, objective, recon)) => {
                        previous = Some((shared_bits, recon));
                        rows.push(SweepRow {
                            bits,
                            shared_bits,
                            p_num,
                            p_den,
                            chi: Some(chi),
                            objective: Some(objective),
                            error: None,
                        });
                    }
                    Err(e) => rows.push(SweepRow {
                        bits,
                        shared_bits,
                        p_num,
                        p_den,
                        chi: None,
                        objective: None,
                        error: Some(e.to_string()),
                    }),
                }
            }
        }
    }
    rows
}

/// Serializes a real with 9 significant digits for CSV output.
pub fn csv_real(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn write_sweep_csv(rows: &[SweepRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "b,l,p_num,p_den,chi,objective,error")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.bits,
            row.shared_bits,
            row.p_num,
            row.p_den,
            row.chi.map(csv_real).unwrap_or_default(),
            row.objective.map(csv_real).unwrap_or_default(),
            row.error.clone().unwrap_or_default()
        )?;
    }
    Ok(())
}

pub fn write_report_csv(
    cfg: &ExperimentConfig,
    report: &DmeReport,
    out: &mut impl Write,
) -> std::io::Result<()> {
    writeln!(
        out,
        "scheme,n,d,b,l,p_num,p_den,dist,trials,seed,nmse,vnmse_mean,chi,\
         bits_per_coord,outlier_fraction,encode_s,decode_s"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        cfg.scheme,
        cfg.clients,
        cfg.dim,
        cfg.bits,
        cfg.shared_bits,
        cfg.p_num,
        cfg.p_den,
        cfg.dist.name(),
        cfg.trials,
        cfg.seed,
        csv_real(report.nmse),
        csv_real(report.mean_vnmse()),
        report.chi_estimate.map(csv_real).unwrap_or_default(),
        csv_real(report.bits_per_coord),
        csv_real(report.outlier_fraction),
        csv_real(report.encode_seconds),
        csv_real(report.decode_seconds)
    )
}

/// Distributed power-iteration configuration. With `scheme = None` the
/// clients communicate uncompressed; the reported error is always relative
/// to the internal uncompressed twin run.
#[derive(Debug, Clone)]
pub struct PowerIterationConfig {
    pub scheme: Option<String>,
    pub clients: usize,
    pub dim: usize,
    pub bits: u8,
    pub p_num: u64,
    pub p_den: u64,
    pub rounds: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Second eigenvalue of the synthetic matrix (the top one is 1).
    pub second_eigenvalue: f64,
}

/// Synthetic symmetric PSD matrices with a controlled spectral gap, one per
/// client: a shared dominant eigenstructure plus small client-specific
/// rank-one noise.
fn client_matrices(cfg: &PowerIterationConfig) -> Vec<Vec<Vec<f64>>> {
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(prf::chain(cfg.seed, &[0xBA5E]));
    let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let nu = sq_norm(&u).sqrt();
    u.iter_mut().for_each(|x| *x /= nu);
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let uv: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    for i in 0..d {
        v[i] -= uv * u[i];
    }
    let nv = sq_norm(&v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);

    (0..cfg.clients)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(prf::chain(cfg.seed, &[0xC0, c as u64]));
            let noise = 0.02;
            let mut w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nw = sq_norm(&w).sqrt();
            w.iter_mut().for_each(|x| *x /= nw);
            let mut a = vec![vec![0.0; d]; d];
            for i in 0..d {
                for j in 0..d {
                    a[i][j] =
                        u[i] * u[j] + cfg.second_eigenvalue * v[i] * v[j] + noise * w[i] * w[j];
                }
            }
            a
        })
        .collect()
}

fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(m, v)| m * v).sum()).collect()
}

/// Runs compressed distributed power iteration against its uncompressed
/// twin and reports the L2 distance between the two eigenvector estimates
/// per round. Each round every client takes one local power step, encodes
/// the difference to the previous global estimate, and the server averages
/// the decoded diffs scaled by the learning rate.
pub fn power_iteration(
    cfg: &PowerIterationConfig,
    table: Option<Arc<QuantTable>>,
) -> Result<Vec<f64>, HarnessError> {
    if cfg.dim == 0 || cfg.clients == 0 {
        return Err(HarnessError::BadExperiment("dim and clients must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.second_eigenvalue) {
        return Err(HarnessError::BadExperiment(
            "second eigenvalue must lie in [0, 1) for a spectral gap".into(),
        ));
    }
    let codec: Option<Box<dyn Codec>> = match &cfg.scheme {
        None => None,
        Some(name) => {
            let exp = ExperimentConfig {
                scheme: name.clone(),
                clients: cfg.clients,
                dim: cfg.dim,
                bits: cfg.bits,
                shared_bits: table.as_ref().map_or(0, |t| t.config().shared_bits),
                p_num: cfg.p_num,
                p_den: cfg.p_den,
                dist: InputDist::Normal,
                trials: 1,
                seed: cfg.seed,
            };
            Some(build_codec(&exp, table)?)
        }
    };

    let matrices = client_matrices(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(prf::chain(cfg.seed, &[0x5EED]));
    let mut start: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let ns = sq_norm(&start).sqrt();
    start.iter_mut().for_each(|x| *x /= ns);

    let normalize = |x: &mut Vec<f64>| {
        let n = sq_norm(x).sqrt();
        if n > 0.0 {
            x.iter_mut().for_each(|v| *v /= n);
        }
    };

    let mut compressed = start.clone();
    let mut exact = start;
    let mut errors = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let step = |estimate: &[f64],
                    compress: bool|
         -> Result<Vec<f64>, HarnessError> {
            let diffs: Vec<Vec<f64>> = matrices
                .iter()
                .map(|a| {
                    matvec(a, estimate).iter().zip(estimate).map(|(w, v)| w - v).collect()
                })
                .collect();
            if !compress {
                let mut acc = vec![0.0; cfg.dim];
                for d in &diffs {
                    for i in 0..cfg.dim {
                        acc[i] += d[i];
                    }
                }
                return Ok(acc.iter().map(|v| v / cfg.clients as f64).collect());
            }
            let codec = codec.as_ref().expect("compress implies codec");
            let messages: Vec<Vec<u8>> = diffs
                .iter()
                .enumerate()
                .map(|(c, d)| codec.encode(d, &seeds_for(cfg.seed, round as u64, c as u64)))
                .collect::<Result<_, _>>()?;
            let raw: Vec<&[u8]> = messages.iter().map(Vec::as_slice).collect();
            Ok(codec.decode_aggregate(&raw)?)
        };

        let exact_avg = step(&exact, false)?;
        for i in 0..cfg.dim {
            exact[i] += cfg.learning_rate * exact_avg[i];
        }
        normalize(&mut exact);

        let avg = step(&compressed, codec.is_some())?;
        for i in 0..cfg.dim {
            compressed[i] += cfg.learning_rate * avg[i];
        }
        normalize(&mut compressed);

        let err: f64 =
            compressed.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        errors.push(err);
    }
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_lognormal_clones_one_vector() {
        let inputs = generate_inputs(InputDist::IdenticalLogNormal, 32, 5, 9);
        for c in 1..5 {
            assert_eq!(inputs[c], inputs[0]);
        }
    }

    #[test]
    fn lognormal_entries_positive_and_independent() {
        let inputs = generate_inputs(InputDist::LogNormal, 64, 3, 11);
        for x in &inputs {
            assert!(x.iter().all(|&v| v > 0.0));
        }
        assert_ne!(inputs[0], inputs[1]);
    }

    #[test]
    fn sparse_spike_has_requested_support() {
        let inputs = generate_inputs(InputDist::SparseSpike { nonzeros: 1 }, 128, 4, 13);
        for x in &inputs {
            assert_eq!(x.iter().filter(|&&v| v != 0.0).count(), 1);
        }
    }

    #[test]
    fn dist_parsing() {
        assert_eq!(InputDist::parse("normal", 1).unwrap(), InputDist::Normal);
        assert_eq!(
            InputDist::parse("sparse_spike", 4).unwrap(),
            InputDist::SparseSpike { nonzeros: 4 }
        );
        assert!(matches!(InputDist::parse("cauchy", 1), Err(HarnessError::UnknownDist(_))));
    }

    #[test]
    fn reports_are_deterministic_across_thread_counts() {
        let cfg = ExperimentConfig {
            scheme: "qsgd".into(),
            clients: 4,
            dim: 256,
            bits: 2,
            shared_bits: 0,
            p_num: 1,
            p_den: 512,
            dist: InputDist::LogNormal,
            trials: 3,
            seed: 77,
        };
        let solo = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let quad = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = solo.install(|| run_dme(&cfg, None).unwrap());
        let b = quad.install(|| run_dme(&cfg, None).unwrap());
        assert_eq!(a.nmse.to_bits(), b.nmse.to_bits());
        assert_eq!(a.vnmse_per_client.len(), b.vnmse_per_client.len());
        for (x, y) in a.vnmse_per_client.iter().zip(&b.vnmse_per_client) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a.bits_per_coord.to_bits(), b.bits_per_coord.to_bits());
    }

    #[test]
    fn nmse_equals_vnmse_for_single_client() {
        let cfg = ExperimentConfig {
            scheme: "qsgd".into(),
            clients: 1,
            dim: 512,
            bits: 2,
            shared_bits: 0,
            p_num: 1,
            p_den: 512,
            dist: InputDist::Normal,
            trials: 4,
            seed: 5,
        };
        let report = run_dme(&cfg, None).unwrap();
        let vnmse = report.vnmse_per_client[0];
        assert!(
            (report.nmse - vnmse).abs() <= 1e-12 * vnmse.max(1e-12),
            "nmse {} vs vnmse {vnmse}",
            report.nmse
        );
    }

    #[test]
    fn quantizer_mse_endpoint_costs_vanish() {
        // Two-quantile table: the decisions at +-T are deterministic and
        // exact, so a point-mass average over the endpoints is zero.
        let cfg = QuantConfig::new(1, 0, 2, 1, 512).unwrap();
        let t = cfg.threshold;
        let table = QuantTable::new(cfg, vec![vec![-t, t]], None).unwrap();
        let at = |z: f64| expected_sq_error(z, &table).unwrap();
        assert!(at(-t).abs() <= 1e-20);
        assert!(at(t).abs() <= 1e-20);
    }

    #[test]
    fn rejects_size_zero_experiments() {
        let cfg = ExperimentConfig {
            scheme: "qsgd".into(),
            clients: 0,
            dim: 8,
            bits: 1,
            shared_bits: 0,
            p_num: 1,
            p_den: 512,
            dist: InputDist::Normal,
            trials: 1,
            seed: 0,
        };
        assert!(matches!(run_dme(&cfg, None), Err(HarnessError::BadExperiment(_))));
    }

    #[test]
    fn table_mismatch_is_reported() {
        let cfg_table = QuantConfig::new(1, 0, 2, 1, 512).unwrap();
        let t = cfg_table.threshold;
        let table = Arc::new(QuantTable::new(cfg_table, vec![vec![-t, t]], None).unwrap());
        let cfg = ExperimentConfig {
            scheme: "quicfl".into(),
            clients: 1,
            dim: 8,
            bits: 1,
            shared_bits: 3,
            p_num: 1,
            p_den: 512,
            dist: InputDist::Normal,
            trials: 1,
            seed: 0,
        };
        assert!(matches!(run_dme(&cfg, Some(table)), Err(HarnessError::TableMismatch(_))));
    }
}
