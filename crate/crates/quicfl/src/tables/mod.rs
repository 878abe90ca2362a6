//! Quantization-table data model: scheme parameters, receiver values, optional
//! sender probabilities, derived lookup structures, validation, and the
//! canonical table file format.

pub mod io;
pub mod normal;

use thiserror::Error;

pub use io::{read_table, read_table_file, write_table, write_table_file};
pub use normal::{compute_quantiles, compute_threshold, compute_threshold_real, DomainError};

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("bits-per-coordinate b = {0} outside 1..=8")]
    BadBits(u8),
    #[error("shared-randomness bits l = {0} outside 0..=8")]
    BadSharedBits(u8),
    #[error("2^b = {messages} messages exceed m = {quantiles} quantiles")]
    TooFewQuantiles { messages: usize, quantiles: usize },
    #[error("threshold {got} does not satisfy Pr[|Z|>T]=p (off by {err})")]
    BadThreshold { got: f64, err: f64 },
    #[error("structural mismatch: {0}")]
    Structural(String),
    #[error(transparent)]
    Parse(#[from] io::ParseError),
}

/// Scheme parameters: `b` bits per coordinate, `l` shared-randomness bits,
/// `m` quantiles, exact-send fraction `p = p_num/p_den`, and the derived
/// threshold `T` with `Pr[|Z| > T] = p`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantConfig {
    pub bits: u8,
    pub shared_bits: u8,
    pub quantile_count: usize,
    pub p_num: u64,
    pub p_den: u64,
    pub threshold: f64,
}

impl QuantConfig {
    pub fn new(
        bits: u8,
        shared_bits: u8,
        quantile_count: usize,
        p_num: u64,
        p_den: u64,
    ) -> Result<Self, TableError> {
        let threshold = compute_threshold(p_num, p_den)?;
        let cfg = QuantConfig { bits, shared_bits, quantile_count, p_num, p_den, threshold };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the parameter ranges and that the stored threshold matches `p`.
    pub fn validate(&self) -> Result<(), TableError> {
        if !(1..=8).contains(&self.bits) {
            return Err(TableError::BadBits(self.bits));
        }
        if self.shared_bits > 8 {
            return Err(TableError::BadSharedBits(self.shared_bits));
        }
        if self.quantile_count < 2 {
            return Err(DomainError::BadQuantileCount(self.quantile_count).into());
        }
        if self.num_messages() > self.quantile_count {
            return Err(TableError::TooFewQuantiles {
                messages: self.num_messages(),
                quantiles: self.quantile_count,
            });
        }
        let p = self.p_num as f64 / self.p_den as f64;
        if !(p > 0.0 && p <= 1.0) {
            return Err(DomainError::BadFraction(p).into());
        }
        let err = (normal::two_sided_tail(self.threshold) - p).abs();
        if err > 1e-10 {
            return Err(TableError::BadThreshold { got: self.threshold, err });
        }
        Ok(())
    }

    /// Message alphabet size `2^b`.
    pub fn num_messages(&self) -> usize {
        1usize << self.bits
    }

    /// Shared-randomness alphabet size `2^l`.
    pub fn num_shared(&self) -> usize {
        1usize << self.shared_bits
    }

    /// Exact-send fraction as a real.
    pub fn p(&self) -> f64 {
        self.p_num as f64 / self.p_den as f64
    }
}

/// Receiver table `r[h][x]`, optional sender probabilities `s[h][q][x]`,
/// quantiles, and the precomputed lookup structures used by the
/// interpolated encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTable {
    config: QuantConfig,
    recon: Vec<Vec<f64>>,
    sender: Option<Vec<Vec<Vec<f64>>>>,
    quantiles: Vec<f64>,
    col_means: Vec<f64>,
    prefix: Vec<Vec<f64>>,
    table_hash: u64,
}

/// Maximum absolute violation per invariant class, as reported by
/// [`QuantTable::validate`]. A table is valid when every class is within its
/// tolerance; callers inspecting near-misses (e.g. tables rounded to a few
/// significant digits) can read the raw numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableDiagnostics {
    /// `|r[h][x] + r[2^l-1-h][2^b-1-x]|`
    pub symmetry: f64,
    /// Decrease of `r` along `h` or `x`.
    pub monotonicity: f64,
    /// `|M[0] + T|` and `|M[2^b-1] - T|`.
    pub boundary: f64,
    /// Non-increase of the column means `M[x]`.
    pub col_mean_order: f64,
    /// Decrease of the prefix row `P[x][h]` along `h`.
    pub prefix_order: f64,
    /// `|sum_x s[h][q][x] - 1|`.
    pub simplex_sum: f64,
    /// Magnitude of negative probability entries.
    pub simplex_negative: f64,
    /// `|1/2^l * sum_{h,x} s[h][q][x] r[h][x] - q|`.
    pub unbiasedness: f64,
}

pub const TOL_BOUNDARY: f64 = 1e-8;
pub const TOL_SIMPLEX: f64 = 1e-8;
pub const TOL_NEGATIVE: f64 = 1e-12;
pub const TOL_UNBIASEDNESS: f64 = 1e-6;
pub const TOL_SHAPE: f64 = 1e-8;

impl TableDiagnostics {
    pub fn is_valid(&self) -> bool {
        self.symmetry <= TOL_SHAPE
            && self.monotonicity <= TOL_SHAPE
            && self.boundary <= TOL_BOUNDARY
            && self.col_mean_order <= TOL_SHAPE
            && self.prefix_order <= TOL_SHAPE
            && self.simplex_sum <= TOL_SIMPLEX
            && self.simplex_negative <= TOL_NEGATIVE
            && self.unbiasedness <= TOL_UNBIASEDNESS
    }

    pub fn max_violation(&self) -> f64 {
        [
            self.symmetry,
            self.monotonicity,
            self.boundary,
            self.col_mean_order,
            self.prefix_order,
            self.simplex_sum,
            self.simplex_negative,
            self.unbiasedness,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl QuantTable {
    /// Builds a table from receiver values (indexed `[h][x]`) and optional
    /// sender probabilities (indexed `[h][q][x]`). Dimension mismatches are
    /// structural errors; numeric invariants are checked by [`validate`].
    ///
    /// [`validate`]: QuantTable::validate
    pub fn new(
        config: QuantConfig,
        recon: Vec<Vec<f64>>,
        sender: Option<Vec<Vec<Vec<f64>>>>,
    ) -> Result<Self, TableError> {
        let shared = config.num_shared();
        let messages = config.num_messages();
        let m = config.quantile_count;
        if recon.len() != shared {
            return Err(TableError::Structural(format!(
                "receiver table has {} rows, config expects 2^l = {shared}",
                recon.len()
            )));
        }
        for (h, row) in recon.iter().enumerate() {
            if row.len() != messages {
                return Err(TableError::Structural(format!(
                    "receiver row h={h} has {} entries, config expects 2^b = {messages}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(TableError::Structural(format!("non-finite receiver value at h={h}")));
            }
        }
        if let Some(s) = &sender {
            if s.len() != shared {
                return Err(TableError::Structural(format!(
                    "sender table has {} h-slices, expected {shared}",
                    s.len()
                )));
            }
            for (h, per_q) in s.iter().enumerate() {
                if per_q.len() != m {
                    return Err(TableError::Structural(format!(
                        "sender slice h={h} has {} quantile rows, expected m = {m}",
                        per_q.len()
                    )));
                }
                for (q, row) in per_q.iter().enumerate() {
                    if row.len() != messages {
                        return Err(TableError::Structural(format!(
                            "sender row h={h} q={q} has {} entries, expected 2^b = {messages}",
                            row.len()
                        )));
                    }
                }
            }
        }
        let quantiles = compute_quantiles(m, config.threshold)?;

        let col_means: Vec<f64> = (0..messages)
            .map(|x| recon.iter().map(|row| row[x]).sum::<f64>() / shared as f64)
            .collect();
        // prefix[x][h] = mean of (r[h'][x+1] for h' < h, r[h'][x] for h' >= h):
        // the receiver expectation when messages x+1 are sent below h and x at
        // or above h. Defined for x < 2^b - 1.
        let mut prefix = Vec::with_capacity(messages.saturating_sub(1));
        for x in 0..messages.saturating_sub(1) {
            let mut row = Vec::with_capacity(shared);
            let mut acc: f64 = recon.iter().map(|r| r[x]).sum();
            row.push(acc / shared as f64);
            for h in 1..shared {
                acc += recon[h - 1][x + 1] - recon[h - 1][x];
                row.push(acc / shared as f64);
            }
            prefix.push(row);
        }

        let mut table = QuantTable {
            config,
            recon,
            sender,
            quantiles,
            col_means,
            prefix,
            table_hash: 0,
        };
        table.table_hash = io::canonical_hash(&table);
        Ok(table)
    }

    pub fn config(&self) -> &QuantConfig {
        &self.config
    }

    /// Receiver values `r[h][x]`.
    pub fn recon(&self) -> &[Vec<f64>] {
        &self.recon
    }

    /// Sender probabilities `s[h][q][x]`, when the table carries them.
    pub fn sender(&self) -> Option<&Vec<Vec<Vec<f64>>>> {
        self.sender.as_ref()
    }

    /// Returns a copy of the table without sender probabilities. Note the
    /// hash changes: the hash covers the canonical serialization, and sender
    /// probabilities are part of it when present.
    pub fn without_sender(&self) -> QuantTable {
        QuantTable::new(self.config.clone(), self.recon.clone(), None)
            .expect("structure already checked")
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    /// Column means `M[x] = 2^-l * sum_h r[h][x]`.
    pub fn col_means(&self) -> &[f64] {
        &self.col_means
    }

    /// Prefix rows `P[x][h]`, indexed `[x][h]` for `x < 2^b - 1`.
    pub fn prefix(&self) -> &[Vec<f64>] {
        &self.prefix
    }

    /// FNV-1a-64 digest of the canonical serialization.
    pub fn table_hash(&self) -> u64 {
        self.table_hash
    }

    /// Re-checks structure and measures the numeric invariants.
    pub fn validate(&self) -> Result<TableDiagnostics, TableError> {
        // Structure may have been bypassed by direct deserialization paths;
        // re-run the constructor checks.
        QuantTable::new(self.config.clone(), self.recon.clone(), self.sender.clone())?;

        let shared = self.config.num_shared();
        let messages = self.config.num_messages();
        let t = self.config.threshold;
        let mut d = TableDiagnostics::default();

        for h in 0..shared {
            for x in 0..messages {
                let mirrored = self.recon[shared - 1 - h][messages - 1 - x];
                d.symmetry = d.symmetry.max((self.recon[h][x] + mirrored).abs());
                if h + 1 < shared {
                    d.monotonicity =
                        d.monotonicity.max(self.recon[h][x] - self.recon[h + 1][x]);
                }
                if x + 1 < messages {
                    d.monotonicity =
                        d.monotonicity.max(self.recon[h][x] - self.recon[h][x + 1]);
                }
            }
        }
        d.monotonicity = d.monotonicity.max(0.0);

        d.boundary = (self.col_means[0] + t).abs().max((self.col_means[messages - 1] - t).abs());
        for x in 0..messages - 1 {
            d.col_mean_order = d.col_mean_order.max(self.col_means[x] - self.col_means[x + 1]);
        }
        d.col_mean_order = d.col_mean_order.max(0.0);
        for row in &self.prefix {
            for h in 0..shared - 1 {
                d.prefix_order = d.prefix_order.max(row[h] - row[h + 1]);
            }
        }
        d.prefix_order = d.prefix_order.max(0.0);

        if let Some(s) = &self.sender {
            for per_q in s.iter() {
                for row in per_q.iter() {
                    let sum: f64 = row.iter().sum();
                    d.simplex_sum = d.simplex_sum.max((sum - 1.0).abs());
                    for &v in row {
                        d.simplex_negative = d.simplex_negative.max(-v);
                    }
                }
            }
            d.simplex_negative = d.simplex_negative.max(0.0);
            for (qi, &q) in self.quantiles.iter().enumerate() {
                let mut expect = 0.0;
                for h in 0..shared {
                    for x in 0..messages {
                        expect += s[h][qi][x] * self.recon[h][x];
                    }
                }
                expect /= shared as f64;
                d.unbiasedness = d.unbiasedness.max((expect - q).abs());
            }
        }
        Ok(d)
    }
}
