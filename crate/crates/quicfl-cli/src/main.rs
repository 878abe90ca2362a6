//! Command-line entry point: table solving and validation, vector
//! encode/decode, and the benchmark harness. All numeric work lives in the
//! library; this binary parses flags, resolves tables, and moves bytes.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use quicfl::codecs;
use quicfl::harness::{self, ExperimentConfig, InputDist, PowerIterationConfig};
use quicfl::solver::{solve_table, SolverOptions};
use quicfl::tables::{self, QuantConfig, QuantTable};
use quicfl::wire::EncodedVector;

/// Environment variable holding the default table directory.
const TABLE_DIR_ENV: &str = "QUICFL_TABLE_DIR";

#[derive(Parser)]
#[command(name = "quicfl", version, about = "Distributed mean estimation toolkit")]
struct Cli {
    /// Cap the worker thread count (0 keeps the default). Results do not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

/// Exact fraction `num/den` parsed from `NUM/DEN`.
#[derive(Debug, Clone, Copy)]
struct Fraction {
    num: u64,
    den: u64,
}

impl std::str::FromStr for Fraction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (num, den) = s.split_once('/').ok_or("expected NUM/DEN, e.g. 1/512")?;
        Ok(Fraction {
            num: num.parse().map_err(|e| format!("numerator: {e}"))?,
            den: den.parse().map_err(|e| format!("denominator: {e}"))?,
        })
    }
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a quantization table and write it as a table file.
    Solve(SolveArgs),
    /// Validate a table file and print per-invariant diagnostics.
    Validate {
        /// Table file to check.
        table: PathBuf,
    },
    /// Encode a raw little-endian f32 vector file into a message file.
    Encode(EncodeArgs),
    /// Decode one or more message files into the mean-estimate vector.
    Decode(DecodeArgs),
    /// Measure NMSE/vNMSE of a scheme on synthetic inputs.
    BenchNmse(BenchNmseArgs),
    /// Solve tables over a (b, l, p) grid and report quantizer MSE per cell.
    BenchSweep(BenchSweepArgs),
    /// Distributed power iteration versus the uncompressed baseline.
    BenchPower(BenchPowerArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Bits per coordinate.
    #[arg(long)]
    b: u8,
    /// Shared-randomness bits.
    #[arg(long)]
    l: u8,
    /// Quantile count.
    #[arg(long, default_value_t = 512)]
    m: usize,
    /// Exact-send fraction.
    #[arg(long, default_value = "1/512")]
    p: Fraction,
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Include sender probabilities in the file (needed by quicfl_alg1).
    #[arg(long)]
    with_s: bool,
    /// Output table file.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    /// Table file (defaults to a QUICFL_TABLE_DIR lookup is not possible
    /// here; encoding always needs an explicit table).
    #[arg(long)]
    table: PathBuf,
    /// Input vector file (u64 length prefix + little-endian f32 values).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    global_seed: u64,
    #[arg(long)]
    client_seed: u64,
    #[arg(long)]
    private_seed: u64,
    /// Use the quantile-first encoder (table must carry probabilities).
    #[arg(long)]
    alg1: bool,
    /// Output message file.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    /// Table file; when omitted, QUICFL_TABLE_DIR is scanned for a table
    /// whose hash matches the message headers.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Message files to aggregate.
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output vector file.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchNmseArgs {
    /// One of quicfl, quicfl_alg1, bsq, qsgd, minmax_hadamard.
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    b: u8,
    /// Shared-randomness bits (table schemes).
    #[arg(long, default_value_t = 0)]
    l: u8,
    #[arg(long, default_value = "1/512")]
    p: Fraction,
    /// lognormal | normal | identical_lognormal | sparse_spike.
    #[arg(long, default_value = "lognormal")]
    dist: String,
    /// Nonzero count for sparse_spike.
    #[arg(long, default_value_t = 1)]
    spike_k: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Table file (table schemes; defaults to a QUICFL_TABLE_DIR lookup).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Output CSV.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchSweepArgs {
    /// Bit budgets, e.g. --b 1 --b 2.
    #[arg(long, required = true)]
    b: Vec<u8>,
    /// Shared-randomness bit counts.
    #[arg(long, required = true)]
    l: Vec<u8>,
    /// Exact-send fractions.
    #[arg(long, default_values = ["1/512"])]
    p: Vec<Fraction>,
    #[arg(long, default_value_t = 64)]
    m: usize,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchPowerArgs {
    /// Scheme name, or "none" for the uncompressed path.
    #[arg(long, default_value = "quicfl")]
    scheme: String,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 256)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    b: u8,
    #[arg(long, default_value = "1/512")]
    p: Fraction,
    #[arg(long, default_value_t = 50)]
    rounds: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.7)]
    gap_eigenvalue: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    table: Option<PathBuf>,
    /// Output CSV of per-round errors.
    #[arg(short, long)]
    output: PathBuf,
}

fn read_vector(path: &Path) -> Result<Vec<f64>, String> {
    let mut file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut len = [0u8; 8];
    file.read_exact(&mut len).map_err(|e| format!("{}: {e}", path.display()))?;
    let count = u64::from_le_bytes(len) as usize;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    if bytes.len() != 4 * count {
        return Err(format!(
            "{}: expected {count} f32 values ({} bytes), found {} bytes",
            path.display(),
            4 * count,
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

fn write_vector(path: &Path, data: &[f64]) -> Result<(), String> {
    let mut out = Vec::with_capacity(8 + 4 * data.len());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| format!("{}: {e}", path.display()))
}

fn table_dir() -> Option<PathBuf> {
    std::env::var_os(TABLE_DIR_ENV).map(PathBuf::from)
}

fn tables_in_dir(dir: &Path) -> Vec<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "qfl"))
        .collect();
    found.sort();
    found
}

/// Loads the given table, or scans QUICFL_TABLE_DIR for one matching the
/// predicate (in sorted filename order).
fn resolve_table(
    explicit: Option<&PathBuf>,
    what: &str,
    predicate: impl Fn(&QuantTable) -> bool,
) -> Result<QuantTable, String> {
    if let Some(path) = explicit {
        return tables::read_table_file(path).map_err(|e| format!("{}: {e}", path.display()));
    }
    let dir = table_dir().ok_or_else(|| {
        format!("no --table given and {TABLE_DIR_ENV} is unset; cannot find a table for {what}")
    })?;
    for path in tables_in_dir(&dir) {
        if let Ok(table) = tables::read_table_file(&path) {
            if predicate(&table) {
                return Ok(table);
            }
        }
    }
    Err(format!("no table matching {what} under {}", dir.display()))
}

fn needs_table(scheme: &str) -> bool {
    matches!(scheme, "quicfl" | "quicfl_alg1")
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Solve(args) => {
            let cfg = QuantConfig::new(args.b, args.l, args.m, args.p.num, args.p.den)
                .map_err(|e| e.to_string())?;
            let opts = SolverOptions {
                restarts: args.restarts,
                max_iters: args.max_iters,
                seed: args.seed,
                ..SolverOptions::default()
            };
            let result = solve_table(&cfg, &opts).map_err(|e| e.to_string())?;
            tables::write_table_file(&result.table, args.with_s, &args.output)
                .map_err(|e| e.to_string())?;
            println!(
                "solved b={} l={} m={} p={}: objective {:.9e}, unbiasedness residual {:.3e}, \
                 restart {} ({} iterations) -> {}",
                args.b,
                args.l,
                args.m,
                args.p,
                result.objective,
                result.max_unbias_violation,
                result.restart_index,
                result.iterations,
                args.output.display()
            );
            Ok(())
        }
        Command::Validate { table } => {
            let table = tables::read_table_file(&table).map_err(|e| e.to_string())?;
            let diag = table.validate().map_err(|e| e.to_string())?;
            let cfg = table.config();
            println!(
                "table b={} l={} m={} p={}/{} hash={:016x}",
                cfg.bits, cfg.shared_bits, cfg.quantile_count, cfg.p_num, cfg.p_den,
                table.table_hash()
            );
            println!("symmetry violation:      {:.3e}", diag.symmetry);
            println!("monotonicity violation:  {:.3e}", diag.monotonicity);
            println!("boundary violation:      {:.3e}", diag.boundary);
            println!("column-mean order:       {:.3e}", diag.col_mean_order);
            println!("prefix order:            {:.3e}", diag.prefix_order);
            println!("simplex sum:             {:.3e}", diag.simplex_sum);
            println!("negative probability:    {:.3e}", diag.simplex_negative);
            println!("unbiasedness violation:  {:.3e}", diag.unbiasedness);
            if diag.is_valid() {
                println!("valid");
                Ok(())
            } else {
                Err("table violates invariants".into())
            }
        }
        Command::Encode(args) => {
            let table =
                tables::read_table_file(&args.table).map_err(|e| e.to_string())?;
            let x = read_vector(&args.input)?;
            let message = if args.alg1 {
                codecs::encode_alg1(&x, &table, args.global_seed, args.client_seed, args.private_seed)
            } else {
                codecs::encode_quicfl(
                    &x,
                    &table,
                    args.global_seed,
                    args.client_seed,
                    args.private_seed,
                )
            }
            .map_err(|e| e.to_string())?;
            fs::write(&args.output, message.to_bytes())
                .map_err(|e| format!("{}: {e}", args.output.display()))?;
            println!(
                "encoded {} coordinates, {} exact, {:.4} bits/coordinate -> {}",
                message.dim,
                message.outliers.len(),
                message.bits_per_coordinate(),
                args.output.display()
            );
            Ok(())
        }
        Command::Decode(args) => {
            let mut messages = Vec::new();
            for path in &args.input {
                let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
                messages
                    .push(EncodedVector::from_bytes(&bytes).map_err(|e| e.to_string())?);
            }
            let hash = messages[0].table_hash;
            let global_seed = messages[0].global_seed;
            let table = resolve_table(args.table.as_ref(), "the message table hash", |t| {
                t.table_hash() == hash
            })?;
            let decoded = codecs::decode_aggregate(&messages, &table, global_seed)
                .map_err(|e| e.to_string())?;
            write_vector(&args.output, &decoded)?;
            println!(
                "decoded {} messages into {} coordinates -> {}",
                messages.len(),
                decoded.len(),
                args.output.display()
            );
            Ok(())
        }
        Command::BenchNmse(args) => {
            let dist = InputDist::parse(&args.dist, args.spike_k).map_err(|e| e.to_string())?;
            let cfg = ExperimentConfig {
                scheme: args.scheme.clone(),
                clients: args.n,
                dim: args.d,
                bits: args.b,
                shared_bits: args.l,
                p_num: args.p.num,
                p_den: args.p.den,
                dist,
                trials: args.trials,
                seed: args.seed,
            };
            let table = if needs_table(&args.scheme) {
                let want = (args.b, args.l, args.p.num, args.p.den);
                Some(Arc::new(resolve_table(
                    args.table.as_ref(),
                    &format!("b={} l={} p={}", args.b, args.l, args.p),
                    |t| {
                        let c = t.config();
                        (c.bits, c.shared_bits, c.p_num, c.p_den) == want
                    },
                )?))
            } else {
                None
            };
            let report = harness::run_dme(&cfg, table).map_err(|e| e.to_string())?;
            let mut out = fs::File::create(&args.output)
                .map_err(|e| format!("{}: {e}", args.output.display()))?;
            harness::write_report_csv(&cfg, &report, &mut out).map_err(|e| e.to_string())?;
            println!(
                "nmse {:.6e}, mean vnmse {:.6e}, {:.4} bits/coordinate -> {}",
                report.nmse,
                report.mean_vnmse(),
                report.bits_per_coord,
                args.output.display()
            );
            Ok(())
        }
        Command::BenchSweep(args) => {
            let opts = SolverOptions {
                restarts: args.restarts,
                seed: args.seed,
                ..SolverOptions::default()
            };
            let p: Vec<(u64, u64)> = args.p.iter().map(|f| (f.num, f.den)).collect();
            let rows = harness::sweep(&args.b, &args.l, &p, args.m, &opts);
            let mut out = fs::File::create(&args.output)
                .map_err(|e| format!("{}: {e}", args.output.display()))?;
            harness::write_sweep_csv(&rows, &mut out).map_err(|e| e.to_string())?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} cells ({failed} failed) -> {}", rows.len(), args.output.display());
            Ok(())
        }
        Command::BenchPower(args) => {
            let scheme = (args.scheme != "none").then(|| args.scheme.clone());
            let table = match &scheme {
                Some(s) if needs_table(s) => {
                    let want = (args.b, args.p.num, args.p.den);
                    Some(Arc::new(resolve_table(
                        args.table.as_ref(),
                        &format!("b={} p={}", args.b, args.p),
                        |t| {
                            let c = t.config();
                            (c.bits, c.p_num, c.p_den) == want
                        },
                    )?))
                }
                _ => None,
            };
            let cfg = PowerIterationConfig {
                scheme,
                clients: args.n,
                dim: args.d,
                bits: args.b,
                p_num: args.p.num,
                p_den: args.p.den,
                rounds: args.rounds,
                learning_rate: args.lr,
                seed: args.seed,
                second_eigenvalue: args.gap_eigenvalue,
            };
            let errors = harness::power_iteration(&cfg, table).map_err(|e| e.to_string())?;
            let mut out = fs::File::create(&args.output)
                .map_err(|e| format!("{}: {e}", args.output.display()))?;
            writeln!(out, "round,l2_error").map_err(|e| e.to_string())?;
            for (round, err) in errors.iter().enumerate() {
                writeln!(out, "{},{}", round + 1, harness::csv_real(*err))
                    .map_err(|e| e.to_string())?;
            }
            println!(
                "{} rounds, final error {:.6e} -> {}",
                errors.len(),
                errors.last().copied().unwrap_or(0.0),
                args.output.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Thread count only affects scheduling, never results.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
