//! Solves the discretized unbiased quantization problem.
//!
//! Variables are sender probabilities `s[h][q][x]` and receiver values
//! `r[h][x]`; the objective is the mean squared error over quantiles and
//! shared randomness subject to per-quantile unbiasedness and per-`(h,q)`
//! simplex constraints. The product `s*r` makes the problem bilinear, so we
//! alternate two exact subproblem solves from randomized restarts:
//!
//! * [`s_step`] — with `r` fixed the problem splits into one tiny linear
//!   program per quantile. For a fixed per-`h` support the minimum-cost
//!   unbiased distribution is a two-point bracket, and the cost of raising a
//!   row mean is piecewise linear with increasing slopes, so a greedy fill
//!   over globally slope-sorted segments solves the LP exactly.
//! * [`r_step`] — with `s` fixed the objective is a diagonally weighted
//!   least squares over `r` with the unbiasedness (plus optional boundary
//!   and symmetry) equalities; solved through the KKT conditions via an
//!   orthonormal nullspace basis, with minimum-norm resolution of rank
//!   deficiency.
//!
//! Restarts run in parallel on independent seed streams; the best feasible
//! objective wins, ties broken by restart index, so the result is
//! reproducible bit-for-bit for a given seed regardless of thread count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::prf;
use crate::tables::normal::truncated_quantile;
use crate::tables::{compute_quantiles, QuantConfig, QuantTable, TableError};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no restart reached feasibility; best attempt violates unbiasedness by {violation:e}")]
    Infeasible { violation: f64, best: Box<SolverResult> },
    #[error("quantile {index} (q = {quantile}) is not reachable: {reason}")]
    LpInfeasible { index: usize, quantile: f64, reason: String },
    #[error("unbiasedness equalities inconsistent for the given probabilities (residual {residual:e})")]
    InconsistentEqualities { residual: f64 },
    #[error("bad solver options: {0}")]
    BadOptions(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Domain(#[from] crate::tables::DomainError),
}

/// Parameters of the alternating solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub restarts: usize,
    pub max_iters: usize,
    /// Objective-improvement stopping threshold.
    pub tol: f64,
    pub seed: u64,
    pub enforce_symmetry: bool,
    pub enforce_monotone: bool,
    pub enforce_boundary: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            restarts: 16,
            max_iters: 500,
            tol: 1e-10,
            seed: 0,
            enforce_symmetry: true,
            enforce_monotone: true,
            enforce_boundary: true,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<(), SolverError> {
        if self.restarts < 1 {
            return Err(SolverError::BadOptions("restarts must be at least 1".into()));
        }
        if self.max_iters < 1 {
            return Err(SolverError::BadOptions("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(SolverError::BadOptions("tol must be positive".into()));
        }
        Ok(())
    }
}

/// A solved table with diagnostics.
#[derive(Debug, Clone)]
pub struct SolverResult {
    pub table: QuantTable,
    pub objective: f64,
    pub max_unbias_violation: f64,
    pub iterations: usize,
    pub restart_index: usize,
}

/// Acceptance bar for a restart's unbiasedness residual.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Quantile grid for the solver's subproblems. A single-quantile problem is
/// degenerate but well-posed; its quantile sits at the distribution midpoint.
fn quantile_grid(cfg: &QuantConfig) -> Result<Vec<f64>, SolverError> {
    if cfg.quantile_count == 1 {
        return Ok(vec![0.0]);
    }
    Ok(compute_quantiles(cfg.quantile_count, cfg.threshold)?)
}

/// Exact evaluation of the objective
/// `1/(m 2^l) * sum_{h,q,x} s[h][q][x] (q - r[h][x])^2`.
pub fn objective(sender: &[Vec<Vec<f64>>], recon: &[Vec<f64>], cfg: &QuantConfig) -> f64 {
    let quantiles = quantile_grid(cfg).expect("config quantiles");
    let mut sum = 0.0;
    for (h, per_q) in sender.iter().enumerate() {
        for (qi, row) in per_q.iter().enumerate() {
            let q = quantiles[qi];
            for (x, &p) in row.iter().enumerate() {
                let e = q - recon[h][x];
                sum += p * e * e;
            }
        }
    }
    sum / (cfg.quantile_count as f64 * cfg.num_shared() as f64)
}

/// Largest per-quantile unbiasedness violation of a `(s, r)` pair.
pub fn max_unbias_violation(
    sender: &[Vec<Vec<f64>>],
    recon: &[Vec<f64>],
    cfg: &QuantConfig,
) -> f64 {
    let quantiles = quantile_grid(cfg).expect("config quantiles");
    let shared = cfg.num_shared() as f64;
    let mut worst = 0.0f64;
    for (qi, &q) in quantiles.iter().enumerate() {
        let mut expect = 0.0;
        for (h, per_q) in sender.iter().enumerate() {
            for (x, &p) in per_q[qi].iter().enumerate() {
                expect += p * recon[h][x];
            }
        }
        worst = worst.max((expect / shared - q).abs());
    }
    worst
}

/// One mass-moving segment of a row: raising the row mean from `lo` to `hi`
/// costs marginal slope `lo + hi - 2q`, which orders segments identically
/// for every quantile.
#[derive(Debug, Clone, Copy)]
struct Segment {
    h: usize,
    pos: usize,
    width: f64,
}

/// Objective of the exact LP response without materializing the
/// probabilities: prefix sums over the slope-sorted segment sequence give
/// each quantile's optimal cost by binary search.
fn response_objective(
    recon: &[Vec<f64>],
    cfg: &QuantConfig,
    quantiles: &[f64],
) -> Result<f64, SolverError> {
    let shared = cfg.num_shared();
    let messages = cfg.num_messages();

    let sorted_rows: Vec<Vec<f64>> = recon
        .iter()
        .map(|row| {
            let mut r = row.clone();
            r.sort_by(f64::total_cmp);
            r
        })
        .collect();
    let mut base_sum = 0.0;
    let mut base_sq = 0.0;
    for row in &sorted_rows {
        base_sum += row[0];
        base_sq += row[0] * row[0];
    }
    let mut segments = Vec::with_capacity(shared * (messages - 1));
    for (h, row) in sorted_rows.iter().enumerate() {
        for pos in 0..messages - 1 {
            segments.push(Segment { h, pos, width: row[pos + 1] - row[pos] });
        }
    }
    segments.sort_by(|a, b| {
        let ka = sorted_rows[a.h][a.pos] + sorted_rows[a.h][a.pos + 1];
        let kb = sorted_rows[b.h][b.pos] + sorted_rows[b.h][b.pos + 1];
        ka.total_cmp(&kb).then(a.h.cmp(&b.h)).then(a.pos.cmp(&b.pos))
    });

    // After j full fills: cumulative width, sum, and sum of squares of the
    // per-row current values.
    let k = segments.len();
    let mut cumw = Vec::with_capacity(k + 1);
    let mut s1 = Vec::with_capacity(k + 1);
    let mut s2 = Vec::with_capacity(k + 1);
    cumw.push(0.0);
    s1.push(base_sum);
    s2.push(base_sq);
    let mut cur_sum = base_sum;
    let mut cur_sq = base_sq;
    let mut w = 0.0;
    for seg in &segments {
        let lo = sorted_rows[seg.h][seg.pos];
        let hi = sorted_rows[seg.h][seg.pos + 1];
        w += seg.width;
        cur_sum += hi - lo;
        cur_sq += hi * hi - lo * lo;
        cumw.push(w);
        s1.push(cur_sum);
        s2.push(cur_sq);
    }
    let total_width = cumw[k];

    let mut sum_cost = 0.0;
    for (qi, &q) in quantiles.iter().enumerate() {
        let target = shared as f64 * q - base_sum;
        let slack = 1e-9 * (1.0 + q.abs() * shared as f64);
        if target < -slack || target > total_width + slack {
            return Err(SolverError::LpInfeasible {
                index: qi,
                quantile: q,
                reason: format!(
                    "required mean lift {target} outside [0, {total_width}] \
                     (boundary invariant violated)"
                ),
            });
        }
        let lift = target.clamp(0.0, total_width);
        let j = cumw.partition_point(|&c| c < lift);
        // A fractional fill moves one row value from lo to hi with weights
        // (1-f, f), so both prefix sums interpolate linearly.
        let cost = if j == 0 {
            s2[0] - 2.0 * q * s1[0] + shared as f64 * q * q
        } else {
            let width = cumw[j] - cumw[j - 1];
            debug_assert!(width > 0.0);
            let frac = (lift - cumw[j - 1]) / width;
            let sum = s1[j - 1] + frac * (s1[j] - s1[j - 1]);
            let sq = s2[j - 1] + frac * (s2[j] - s2[j - 1]);
            sq - 2.0 * q * sum + shared as f64 * q * q
        };
        sum_cost += cost;
    }
    Ok(sum_cost / (cfg.quantile_count as f64 * shared as f64))
}

/// Exact LP solve for fixed receiver values: for each quantile
/// independently, the minimum-MSE message distribution subject to the
/// per-`(h,q)` simplex constraints and the unbiasedness equality.
pub fn s_step(recon: &[Vec<f64>], cfg: &QuantConfig) -> Result<Vec<Vec<Vec<f64>>>, SolverError> {
    let shared = cfg.num_shared();
    let messages = cfg.num_messages();
    let m = cfg.quantile_count;
    let quantiles = quantile_grid(cfg)?;

    // Per-row support sorted by value; the identity for monotone tables.
    let mut order: Vec<Vec<usize>> = Vec::with_capacity(shared);
    for row in recon {
        let mut idx: Vec<usize> = (0..messages).collect();
        idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        order.push(idx);
    }
    let value = |h: usize, pos: usize| recon[h][order[h][pos]];

    let mut segments = Vec::with_capacity(shared * (messages - 1));
    let mut base_sum = 0.0;
    let mut total_width = 0.0;
    for h in 0..shared {
        base_sum += value(h, 0);
        for pos in 0..messages - 1 {
            let width = value(h, pos + 1) - value(h, pos);
            total_width += width;
            segments.push(Segment { h, pos, width });
        }
    }
    segments.sort_by(|a, b| {
        let ka = value(a.h, a.pos) + value(a.h, a.pos + 1);
        let kb = value(b.h, b.pos) + value(b.h, b.pos + 1);
        ka.total_cmp(&kb).then(a.h.cmp(&b.h)).then(a.pos.cmp(&b.pos))
    });

    let mut sender = vec![vec![vec![0.0; messages]; m]; shared];
    let mut fill = vec![0usize; shared];
    for (qi, &q) in quantiles.iter().enumerate() {
        let target = shared as f64 * q - base_sum;
        let slack = 1e-9 * (1.0 + q.abs() * shared as f64);
        if target < -slack || target > total_width + slack {
            return Err(SolverError::LpInfeasible {
                index: qi,
                quantile: q,
                reason: format!(
                    "required mean lift {target} outside [0, {total_width}] \
                     (boundary invariant violated)"
                ),
            });
        }
        let mut remaining = target.clamp(0.0, total_width);
        fill.iter_mut().for_each(|f| *f = 0);
        let mut pivot: Option<(usize, f64)> = None;
        for (si, seg) in segments.iter().enumerate() {
            if remaining <= 0.0 {
                break;
            }
            if seg.width <= remaining {
                remaining -= seg.width;
                fill[seg.h] = seg.pos + 1;
            } else {
                pivot = Some((si, remaining / seg.width));
                break;
            }
        }
        for h in 0..shared {
            sender[h][qi][order[h][fill[h]]] = 1.0;
        }
        if let Some((si, frac)) = pivot {
            let seg = &segments[si];
            let row = &mut sender[seg.h][qi];
            row[order[seg.h][seg.pos]] = 1.0 - frac;
            row[order[seg.h][seg.pos + 1]] = frac;
        }
    }
    Ok(sender)
}

/// Result of [`r_step`]: receiver values, and whether the reduced normal
/// system was rank-deficient (in which case the minimum-norm optimum was
/// chosen).
#[derive(Debug, Clone)]
pub struct RStepOutcome {
    pub recon: Vec<Vec<f64>>,
    pub rank_deficient: bool,
}

/// Equality constraints imposed by [`r_step`].
#[derive(Debug, Clone, Copy)]
pub struct StepConstraints {
    pub symmetry: bool,
    pub boundary: bool,
}

impl From<&SolverOptions> for StepConstraints {
    fn from(o: &SolverOptions) -> Self {
        StepConstraints { symmetry: o.enforce_symmetry, boundary: o.enforce_boundary }
    }
}

type Svd = nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>;

fn svd_rank(svd: &Svd) -> usize {
    let max = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > max * 1e-10).count()
}

fn svd_solve(svd: &Svd, rhs: &DVector<f64>) -> DVector<f64> {
    let eps = 1e-10 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(rhs, eps).expect("u/v_t requested")
}

/// Orthonormal basis of the nullspace of `c`, as matrix columns.
fn nullspace(c: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = c.shape();
    let svd = c.clone().svd(false, true);
    let rank = svd_rank(&svd);
    let v_t = svd.v_t.expect("requested");
    if rows >= cols {
        // Thin SVD of a tall matrix carries the complete right basis.
        let mut z = DMatrix::zeros(cols, cols - rank);
        for (k, i) in (rank..v_t.nrows()).enumerate() {
            for j in 0..cols {
                z[(j, k)] = v_t[(i, j)];
            }
        }
        z
    } else {
        // Wide system: complete the row-space basis to an orthonormal basis
        // by sweeping unit vectors with two orthogonalization passes.
        let mut basis: Vec<DVector<f64>> =
            (0..rank).map(|i| DVector::from_fn(cols, |j, _| v_t[(i, j)])).collect();
        let mut null_cols: Vec<DVector<f64>> = Vec::with_capacity(cols - rank);
        for j in 0..cols {
            if basis.len() == cols {
                break;
            }
            let mut cand: DVector<f64> = DVector::zeros(cols);
            cand[j] = 1.0;
            for _ in 0..2 {
                for b in &basis {
                    let proj = b.dot(&cand);
                    cand.axpy(-proj, b, 1.0);
                }
            }
            let norm = cand.norm();
            if norm > 1e-8 {
                cand /= norm;
                basis.push(cand.clone());
                null_cols.push(cand);
            }
        }
        let mut z = DMatrix::zeros(cols, null_cols.len());
        for (k, col) in null_cols.iter().enumerate() {
            z.set_column(k, col);
        }
        z
    }
}

/// Weighted least squares `min (v-t)' W (v-t)` subject to `C v = d`: a
/// feasible point from the pseudoinverse, the optimum on the constraint
/// nullspace, and minimum-norm resolution when weightless directions leave
/// the optimum underdetermined.
fn constrained_least_squares(
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    weights: &DVector<f64>,
    targets: &DVector<f64>,
) -> Result<(DVector<f64>, bool), SolverError> {
    let svd = c.clone().svd(true, true);
    let v0 = svd_solve(&svd, d);
    let residual = (c * &v0 - d).amax();
    if residual > 1e-8 * (1.0 + d.amax()) {
        return Err(SolverError::InconsistentEqualities { residual });
    }

    let z = nullspace(c);
    let k = z.ncols();
    if k == 0 {
        return Ok((v0, false));
    }
    let wz = DMatrix::from_fn(z.nrows(), k, |i, j| z[(i, j)] * weights[i]);
    let m = z.transpose() * &wz;
    let rhs = wz.transpose() * (targets - &v0);
    let m_svd = m.clone().svd(true, true);
    let rank_m = svd_rank(&m_svd);
    let mut y = svd_solve(&m_svd, &rhs);
    let deficient = rank_m < k;
    if deficient {
        let n_m = nullspace(&m);
        if n_m.ncols() > 0 {
            let b = &z * &n_m;
            let b_svd = b.clone().svd(true, true);
            let resid = &v0 + &z * &y;
            let w = svd_solve(&b_svd, &(-resid));
            y += n_m * w;
        }
    }
    Ok((v0 + z * y, deficient))
}

/// Weighted least-squares solve for the receiver values given fixed sender
/// probabilities, under the unbiasedness equalities plus the requested
/// boundary/symmetry constraints.
pub fn r_step(
    sender: &[Vec<Vec<f64>>],
    cfg: &QuantConfig,
    constraints: StepConstraints,
) -> Result<RStepOutcome, SolverError> {
    let shared = cfg.num_shared();
    let messages = cfg.num_messages();
    let m = cfg.quantile_count;
    let n_full = shared * messages;
    let quantiles = quantile_grid(cfg)?;
    let flat = |h: usize, x: usize| h * messages + x;

    // Diagonal weights and weighted quantile targets per cell.
    let mut weight = vec![0.0f64; n_full];
    let mut wtarget = vec![0.0f64; n_full];
    for h in 0..shared {
        for (qi, &q) in quantiles.iter().enumerate() {
            for x in 0..messages {
                let p = sender[h][qi][x];
                weight[flat(h, x)] += p;
                wtarget[flat(h, x)] += p * q;
            }
        }
    }

    // Variable map: the full vector, or the canonical half under symmetry
    // with signs (+1 canonical cell, -1 mirrored cell).
    let (var_of, sign_of, n_vars): (Vec<usize>, Vec<f64>, usize) = if constraints.symmetry {
        let mut var = vec![usize::MAX; n_full];
        let mut sign = vec![0.0f64; n_full];
        let mut next = 0usize;
        for h in 0..shared {
            for x in 0..messages {
                let id = flat(h, x);
                let partner = flat(shared - 1 - h, messages - 1 - x);
                if id < partner {
                    var[id] = next;
                    sign[id] = 1.0;
                    var[partner] = next;
                    sign[partner] = -1.0;
                    next += 1;
                }
            }
        }
        (var, sign, next)
    } else {
        ((0..n_full).collect(), vec![1.0; n_full], n_full)
    };

    let mut w_red: DVector<f64> = DVector::zeros(n_vars);
    let mut t_num: DVector<f64> = DVector::zeros(n_vars);
    for id in 0..n_full {
        let j = var_of[id];
        w_red[j] += weight[id];
        t_num[j] += sign_of[id] * wtarget[id];
    }
    let t_red =
        DVector::from_fn(n_vars, |j, _| if w_red[j] > 0.0 { t_num[j] / w_red[j] } else { 0.0 });

    let boundary_rows = match (constraints.boundary, constraints.symmetry) {
        (false, _) => 0,
        // Under symmetry the two boundary rows are the same constraint.
        (true, true) => 1,
        (true, false) => 2,
    };
    let mut c = DMatrix::zeros(m + boundary_rows, n_vars);
    let mut d = DVector::zeros(m + boundary_rows);
    for (qi, &q) in quantiles.iter().enumerate() {
        for h in 0..shared {
            for x in 0..messages {
                let id = flat(h, x);
                c[(qi, var_of[id])] += sign_of[id] * sender[h][qi][x];
            }
        }
        d[qi] = shared as f64 * q;
    }
    if constraints.boundary {
        for h in 0..shared {
            let id = flat(h, 0);
            c[(m, var_of[id])] += sign_of[id];
        }
        d[m] = -(shared as f64) * cfg.threshold;
        if !constraints.symmetry {
            for h in 0..shared {
                let id = flat(h, messages - 1);
                c[(m + 1, var_of[id])] += sign_of[id];
            }
            d[m + 1] = shared as f64 * cfg.threshold;
        }
    }

    let (v, rank_deficient) = constrained_least_squares(&c, &d, &w_red, &t_red)?;
    let mut recon = vec![vec![0.0; messages]; shared];
    for h in 0..shared {
        for x in 0..messages {
            let id = flat(h, x);
            recon[h][x] = sign_of[id] * v[var_of[id]];
        }
    }
    Ok(RStepOutcome { recon, rank_deficient })
}

fn is_monotone(recon: &[Vec<f64>], tol: f64) -> bool {
    let shared = recon.len();
    let messages = recon[0].len();
    for h in 0..shared {
        for x in 0..messages {
            if x + 1 < messages && recon[h][x] > recon[h][x + 1] + tol {
                return false;
            }
            if h + 1 < shared && recon[h][x] > recon[h + 1][x] + tol {
                return false;
            }
        }
    }
    true
}

/// Initial receiver values for one restart: a probability grid on the
/// truncated-normal quantile function (jittered for restarts past the
/// first), filled column-major so the layout is monotone in both indices,
/// then symmetrized and rescaled onto the boundary.
fn init_recon(cfg: &QuantConfig, opts: &SolverOptions, restart: usize) -> Vec<Vec<f64>> {
    let shared = cfg.num_shared();
    let messages = cfg.num_messages();
    let n = shared * messages;
    let t = cfg.threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(prf::chain(opts.seed, &[restart as u64]));
    // Restarts past the first jitter the probability grid and reshape the
    // spread (|v|^gamma keeps order and sign) so different tail widths are
    // explored.
    let gamma: f64 = if restart == 0 { 1.0 } else { (0.8 * (rng.random::<f64>() - 0.5)).exp() };
    let values: Vec<f64> = (0..n)
        .map(|j| {
            let jitter: f64 = if restart == 0 { 0.5 } else { rng.random() };
            let u = ((j as f64 + jitter) / n as f64).clamp(1e-12, 1.0 - 1e-12);
            let v = truncated_quantile(u, t);
            v.signum() * v.abs().powf(gamma)
        })
        .collect();
    let mut recon = vec![vec![0.0; messages]; shared];
    for x in 0..messages {
        for h in 0..shared {
            recon[h][x] = values[x * shared + h];
        }
    }
    if opts.enforce_symmetry {
        let orig = recon.clone();
        for h in 0..shared {
            for x in 0..messages {
                recon[h][x] = 0.5 * (orig[h][x] - orig[shared - 1 - h][messages - 1 - x]);
            }
        }
    }
    if opts.enforce_boundary {
        let mean0: f64 = (0..shared).map(|h| recon[h][0]).sum::<f64>() / shared as f64;
        if mean0 < 0.0 {
            let factor = -t / mean0;
            for row in &mut recon {
                for v in row.iter_mut() {
                    *v *= factor;
                }
            }
        }
    }
    recon
}

/// Step bound on one coordinate move that keeps the grid monotone in both
/// indices; the mirrored cell moves oppositely, so under symmetry the bound
/// also covers its window.
fn monotone_window(recon: &[Vec<f64>], h: usize, x: usize) -> (f64, f64) {
    let shared = recon.len();
    let messages = recon[0].len();
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    if h > 0 {
        lo = lo.max(recon[h - 1][x]);
    }
    if x > 0 {
        lo = lo.max(recon[h][x - 1]);
    }
    if h + 1 < shared {
        hi = hi.min(recon[h + 1][x]);
    }
    if x + 1 < messages {
        hi = hi.min(recon[h][x + 1]);
    }
    (lo, hi)
}

fn rescale_to_boundary(recon: &mut [Vec<f64>], cfg: &QuantConfig) {
    let shared = recon.len();
    let mean0: f64 = recon.iter().map(|row| row[0]).sum::<f64>() / shared as f64;
    if mean0 < 0.0 {
        let factor = -cfg.threshold / mean0;
        for row in recon.iter_mut() {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Compass search over the free receiver values against the exact LP
/// response. Alternating minimization alone stalls at blocked stationary
/// points of the bilinear problem (the bracket structure freezes), so each
/// restart interleaves this local search with fresh alternating rounds.
fn polish(
    recon: &mut Vec<Vec<f64>>,
    cfg: &QuantConfig,
    opts: &SolverOptions,
    max_sweeps: usize,
) -> Option<f64> {
    let shared = cfg.num_shared();
    let messages = cfg.num_messages();
    // Coordinates: canonical cells under symmetry, every cell otherwise.
    let mut coords = Vec::new();
    for h in 0..shared {
        for x in 0..messages {
            let id = h * messages + x;
            let partner = (shared - 1 - h) * messages + (messages - 1 - x);
            if !opts.enforce_symmetry || id < partner {
                coords.push((h, x));
            }
        }
    }
    let quantiles = quantile_grid(cfg).ok()?;
    let mut best = response_objective(recon, cfg, &quantiles).ok()?;
    let spread = cfg.threshold / (shared * messages) as f64;
    let mut steps = vec![4.0 * spread; coords.len()];
    let mut improved_any = false;
    for _ in 0..max_sweeps {
        let mut sweep_improved = false;
        for (ci, &(h, x)) in coords.iter().enumerate() {
            let mut moved = false;
            for dir in [1.0, -1.0] {
                let mut cand = recon.clone();
                let target = cand[h][x] + dir * steps[ci];
                let clamped = if opts.enforce_monotone {
                    let (lo, hi) = monotone_window(&cand, h, x);
                    if lo > hi {
                        continue;
                    }
                    target.clamp(lo, hi)
                } else {
                    target
                };
                if clamped == cand[h][x] {
                    continue;
                }
                cand[h][x] = clamped;
                if opts.enforce_symmetry {
                    cand[shared - 1 - h][messages - 1 - x] = -clamped;
                }
                if opts.enforce_boundary {
                    rescale_to_boundary(&mut cand, cfg);
                }
                let Ok(obj) = response_objective(&cand, cfg, &quantiles) else { continue };
                if obj < best - 1e-13 {
                    best = obj;
                    *recon = cand;
                    steps[ci] *= 1.6;
                    moved = true;
                    sweep_improved = true;
                    improved_any = true;
                    break;
                }
            }
            if !moved {
                steps[ci] *= 0.5;
            }
        }
        if !sweep_improved && steps.iter().all(|&s| s < 1e-10) {
            break;
        }
    }
    improved_any.then_some(best)
}

struct RestartOutcome {
    recon: Vec<Vec<f64>>,
    sender: Vec<Vec<Vec<f64>>>,
    objective: f64,
    violation: f64,
    iterations: usize,
}

/// Duplicates every shared-randomness row: an `l`-bit table embedded into
/// `l+1` bits with identical behavior.
pub fn embed_shared_bit(recon: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * recon.len());
    for row in recon {
        out.push(row.clone());
        out.push(row.clone());
    }
    out
}

/// Duplicates every message column: a `b`-bit table embedded into `b+1`
/// bits with identical behavior.
pub fn embed_message_bit(recon: &[Vec<f64>]) -> Vec<Vec<f64>> {
    recon
        .iter()
        .map(|row| {
            let mut out = Vec::with_capacity(2 * row.len());
            for &v in row {
                out.push(v);
                out.push(v);
            }
            out
        })
        .collect()
}

fn run_restart(cfg: &QuantConfig, opts: &SolverOptions, mut recon: Vec<Vec<f64>>) -> Option<RestartOutcome> {
    let constraints = StepConstraints::from(opts);
    let mut best: Option<RestartOutcome> = None;
    let mut prev_obj = f64::INFINITY;
    let mut iters = 0usize;
    let mut polish_rounds = 0usize;
    while iters < opts.max_iters {
        // Alternating phase: exact LP response, then constrained least
        // squares, while the objective improves.
        let mut stalled = false;
        while iters < opts.max_iters {
            iters += 1;
            let Ok(sender) = s_step(&recon, cfg) else { return best };
            let obj = objective(&sender, &recon, cfg);
            if obj > prev_obj + 1e-12 {
                stalled = true;
                break;
            }
            let improved = prev_obj - obj;
            prev_obj = obj;
            let violation = max_unbias_violation(&sender, &recon, cfg);
            best = Some(RestartOutcome {
                recon: recon.clone(),
                sender,
                objective: obj,
                violation,
                iterations: iters,
            });
            if improved < opts.tol {
                stalled = true;
                break;
            }
            let Ok(step) = r_step(&best.as_ref().unwrap().sender, cfg, constraints) else {
                stalled = true;
                break;
            };
            if opts.enforce_monotone && !is_monotone(&step.recon, 1e-12) {
                stalled = true;
                break;
            }
            recon = step.recon;
        }
        if !stalled || polish_rounds >= 8 {
            break;
        }
        // Local-search phase from the best accepted iterate.
        let current = best.as_ref()?;
        recon = current.recon.clone();
        match polish(&mut recon, cfg, opts, 400) {
            Some(obj) if obj < current.objective - opts.tol => {
                polish_rounds += 1;
                // Loop back into alternation from the polished point.
            }
            _ => break,
        }
    }
    best
}

/// Runs the alternating solver with randomized restarts and returns the best
/// feasible table (minimum objective, ties to the lowest restart index).
pub fn solve_table(cfg: &QuantConfig, opts: &SolverOptions) -> Result<SolverResult, SolverError> {
    solve_table_with_starts(cfg, opts, &[])
}

/// As [`solve_table`], with caller-provided warm starts appended after the
/// seeded restarts (e.g. a neighboring solution embedded via
/// [`embed_shared_bit`] or [`embed_message_bit`]). Since refinement only
/// accepts improvements, a warm start bounds the result by the start's own
/// objective.
pub fn solve_table_with_starts(
    cfg: &QuantConfig,
    opts: &SolverOptions,
    starts: &[Vec<Vec<f64>>],
) -> Result<SolverResult, SolverError> {
    opts.validate()?;
    match cfg.validate() {
        Ok(()) => {}
        // More messages than quantiles is degenerate (some messages go
        // unused) but the subproblems stay well-posed; accept it here.
        Err(TableError::TooFewQuantiles { .. }) => {}
        Err(e) => return Err(e.into()),
    }
    for start in starts {
        if start.len() != cfg.num_shared()
            || start.iter().any(|row| row.len() != cfg.num_messages())
        {
            return Err(SolverError::BadOptions("warm start has wrong dimensions".into()));
        }
    }

    let outcomes: Vec<Option<RestartOutcome>> = (0..opts.restarts + starts.len())
        .into_par_iter()
        .map(|k| {
            let init = if k < opts.restarts {
                init_recon(cfg, opts, k)
            } else {
                starts[k - opts.restarts].clone()
            };
            run_restart(cfg, opts, init)
        })
        .collect();

    let mut best_feasible: Option<(usize, RestartOutcome)> = None;
    let mut best_attempt: Option<(usize, RestartOutcome)> = None;
    for (k, outcome) in outcomes.into_iter().enumerate() {
        let Some(out) = outcome else { continue };
        if out.violation <= FEASIBILITY_TOL {
            if best_feasible.as_ref().is_none_or(|(_, b)| out.objective < b.objective) {
                best_feasible = Some((k, out));
            }
        } else if best_feasible.is_none()
            && best_attempt.as_ref().is_none_or(|(_, b)| out.violation < b.violation)
        {
            best_attempt = Some((k, out));
        }
    }

    let build = |(k, out): (usize, RestartOutcome)| -> Result<SolverResult, SolverError> {
        let table = QuantTable::new(cfg.clone(), out.recon, Some(out.sender))?;
        Ok(SolverResult {
            table,
            objective: out.objective,
            max_unbias_violation: out.violation,
            iterations: out.iterations,
            restart_index: k,
        })
    };
    match (best_feasible, best_attempt) {
        (Some(win), _) => build(win),
        (None, Some(attempt)) => {
            let best = build(attempt)?;
            Err(SolverError::Infeasible {
                violation: best.max_unbias_violation,
                best: Box::new(best),
            })
        }
        (None, None) => {
            Err(SolverError::BadOptions("no restart produced any accepted iterate".into()))
        }
    }
}
