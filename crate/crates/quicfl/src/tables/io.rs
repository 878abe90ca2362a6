//! Canonical table file format.
//!
//! Line-oriented text, human-diffable, versioned and checksummed:
//!
//! ```text
//! QUICFL-TABLE v1
//! b=<int> l=<int> m=<int> p=<num>/<den>
//! T=<17-significant-digit decimal>
//! r:
//! <2^l lines of 2^b space-separated decimals, h ascending, x ascending>
//! s:                                  (optional)
//! <2^l * m lines of 2^b decimals, h-major then q>
//! checksum=<16 hex digits>
//! ```
//!
//! The checksum is FNV-1a-64 over every byte preceding the checksum line.
//! Values are printed with 17 significant digits so write-then-read
//! reproduces every `f64` bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{QuantConfig, QuantTable, TableError};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("not a table file: first line {0:?}")]
    BadMagic(String),
    #[error("unsupported table version {0:?} (expected v1)")]
    BadVersion(String),
    #[error("line {line}: malformed {what}")]
    Malformed { line: usize, what: String },
    #[error("checksum mismatch: file says {stated:016x}, contents hash to {actual:016x}")]
    Checksum { stated: u64, actual: u64 },
    #[error("missing checksum line")]
    MissingChecksum,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// FNV-1a 64-bit over a byte stream.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1_0000_0000_01b3);
    }
    hash
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Canonical serialization without the checksum line.
fn canonical_body(table: &QuantTable) -> String {
    let cfg = table.config();
    let mut out = String::new();
    out.push_str("QUICFL-TABLE v1\n");
    let _ = writeln!(
        out,
        "b={} l={} m={} p={}/{}",
        cfg.bits, cfg.shared_bits, cfg.quantile_count, cfg.p_num, cfg.p_den
    );
    let _ = writeln!(out, "T={}", format_value(cfg.threshold));
    out.push_str("r:\n");
    for row in table.recon() {
        let line: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    if let Some(s) = table.sender() {
        out.push_str("s:\n");
        for per_q in s {
            for row in per_q {
                let line: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
    }
    out
}

/// Digest of the canonical serialization; doubles as the file checksum.
pub fn canonical_hash(table: &QuantTable) -> u64 {
    fnv1a(canonical_body(table).as_bytes())
}

/// Serializes a table to the canonical text format. With `include_sender`
/// unset, sender probabilities are omitted (the interpolated encoder needs
/// only receiver values); note the hash covers what is written.
pub fn write_table(table: &QuantTable, include_sender: bool) -> String {
    let stripped;
    let table = if include_sender || table.sender().is_none() {
        table
    } else {
        stripped = table.without_sender();
        &stripped
    };
    let body = canonical_body(table);
    let hash = fnv1a(body.as_bytes());
    format!("{body}checksum={hash:016x}\n")
}

pub fn write_table_file(
    table: &QuantTable,
    include_sender: bool,
    path: impl AsRef<Path>,
) -> Result<(), ParseError> {
    std::fs::write(path, write_table(table, include_sender))?;
    Ok(())
}

fn parse_values(line: &str, expected: usize, line_no: usize) -> Result<Vec<f64>, ParseError> {
    let vals: Result<Vec<f64>, _> = line.split(' ').map(str::parse::<f64>).collect();
    match vals {
        Ok(v) if v.len() == expected => Ok(v),
        Ok(v) => Err(ParseError::Malformed {
            line: line_no,
            what: format!("row: expected {expected} values, found {}", v.len()),
        }),
        Err(e) => Err(ParseError::Malformed { line: line_no, what: format!("value: {e}") }),
    }
}

/// Parses the canonical text format, verifying the checksum and every field.
pub fn read_table(text: &str) -> Result<QuantTable, TableError> {
    // Locate the checksum line and verify the preceding bytes first.
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    let (body_end, checksum_line) = match trimmed.rfind('\n') {
        Some(pos) => (pos + 1, &trimmed[pos + 1..]),
        None => (0, trimmed),
    };
    let stated = checksum_line
        .strip_prefix("checksum=")
        .ok_or(ParseError::MissingChecksum)?;
    let stated = u64::from_str_radix(stated, 16).map_err(|e| ParseError::Malformed {
        line: trimmed.lines().count(),
        what: format!("checksum: {e}"),
    })?;
    let actual = fnv1a(text[..body_end].as_bytes());
    if stated != actual {
        return Err(ParseError::Checksum { stated, actual }.into());
    }

    let mut lines = text[..body_end].lines().enumerate();
    let (_, magic) = lines.next().ok_or(ParseError::BadMagic(String::new()))?;
    match magic {
        "QUICFL-TABLE v1" => {}
        m if m.starts_with("QUICFL-TABLE") => {
            return Err(ParseError::BadVersion(m["QUICFL-TABLE".len()..].trim().into()).into());
        }
        m => return Err(ParseError::BadMagic(m.into()).into()),
    }

    let (no, header) = lines
        .next()
        .ok_or(ParseError::Malformed { line: 2, what: "missing parameter line".into() })?;
    let mut bits = None;
    let mut shared_bits = None;
    let mut m_count = None;
    let mut p = None;
    for field in header.split(' ') {
        let (key, value) = field.split_once('=').ok_or_else(|| ParseError::Malformed {
            line: no + 1,
            what: format!("parameter field {field:?}"),
        })?;
        let bad = |what: String| ParseError::Malformed { line: no + 1, what };
        match key {
            "b" => bits = Some(value.parse::<u8>().map_err(|e| bad(format!("b: {e}")))?),
            "l" => shared_bits = Some(value.parse::<u8>().map_err(|e| bad(format!("l: {e}")))?),
            "m" => m_count = Some(value.parse::<usize>().map_err(|e| bad(format!("m: {e}")))?),
            "p" => {
                let (num, den) = value
                    .split_once('/')
                    .ok_or_else(|| bad(format!("p: expected num/den, found {value:?}")))?;
                p = Some((
                    num.parse::<u64>().map_err(|e| bad(format!("p numerator: {e}")))?,
                    den.parse::<u64>().map_err(|e| bad(format!("p denominator: {e}")))?,
                ));
            }
            other => return Err(bad(format!("unknown parameter {other:?}")).into()),
        }
    }
    let missing = |what: &str| ParseError::Malformed { line: no + 1, what: format!("missing {what}") };
    let bits = bits.ok_or_else(|| missing("b"))?;
    let shared_bits = shared_bits.ok_or_else(|| missing("l"))?;
    let m_count = m_count.ok_or_else(|| missing("m"))?;
    let (p_num, p_den) = p.ok_or_else(|| missing("p"))?;

    let (no, t_line) = lines
        .next()
        .ok_or(ParseError::Malformed { line: 3, what: "missing threshold line".into() })?;
    let threshold = t_line
        .strip_prefix("T=")
        .ok_or_else(|| ParseError::Malformed { line: no + 1, what: "threshold line".into() })?
        .parse::<f64>()
        .map_err(|e| ParseError::Malformed { line: no + 1, what: format!("threshold: {e}") })?;

    let config = QuantConfig { bits, shared_bits, quantile_count: m_count, p_num, p_den, threshold };
    config.validate()?;

    let (no, r_marker) = lines
        .next()
        .ok_or(ParseError::Malformed { line: 4, what: "missing r: section".into() })?;
    if r_marker != "r:" {
        return Err(ParseError::Malformed { line: no + 1, what: format!("expected r:, found {r_marker:?}") }.into());
    }
    let shared = config.num_shared();
    let messages = config.num_messages();
    let mut recon = Vec::with_capacity(shared);
    for _ in 0..shared {
        let (no, line) = lines.next().ok_or(ParseError::Malformed {
            line: 0,
            what: "receiver rows truncated".into(),
        })?;
        recon.push(parse_values(line, messages, no + 1)?);
    }

    let sender = match lines.next() {
        None => None,
        Some((no, "s:")) => {
            let mut s = vec![Vec::with_capacity(m_count); shared];
            for h in 0..shared {
                for _ in 0..m_count {
                    let (no, line) = lines.next().ok_or(ParseError::Malformed {
                        line: 0,
                        what: "sender rows truncated".into(),
                    })?;
                    s[h].push(parse_values(line, messages, no + 1)?);
                }
            }
            if let Some((no, extra)) = lines.next() {
                return Err(ParseError::Malformed {
                    line: no + 1,
                    what: format!("unexpected trailing line {extra:?}"),
                }
                .into());
            }
            let _ = no;
            Some(s)
        }
        Some((no, other)) => {
            return Err(ParseError::Malformed {
                line: no + 1,
                what: format!("expected s: or end of table, found {other:?}"),
            }
            .into())
        }
    };

    let table = QuantTable::new(config, recon, sender)?;
    // Hash recomputed from the parsed values; differs from the file checksum
    // only if the file was not in canonical form.
    if table.table_hash() != actual {
        return Err(ParseError::Checksum { stated, actual: table.table_hash() }.into());
    }
    Ok(table)
}

pub fn read_table_file(path: impl AsRef<Path>) -> Result<QuantTable, TableError> {
    let text = std::fs::read_to_string(path).map_err(ParseError::Io)?;
    read_table(&text)
}

#[cfg(test)]
mod tests {
    use super::super::tests::rounded_reference_recon;
    use super::*;

    fn sample_table(with_sender: bool) -> QuantTable {
        let cfg = QuantConfig::new(2, 2, 4, 1, 512).unwrap();
        let sender = with_sender.then(|| {
            let mut s = vec![vec![vec![0.0; 4]; 4]; 4];
            for h in 0..4 {
                for q in 0..4 {
                    s[h][q][(h + q) % 4] = 0.75;
                    s[h][q][(h + q + 1) % 4] = 0.25;
                }
            }
            s
        });
        QuantTable::new(cfg, rounded_reference_recon(), sender).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for with_sender in [false, true] {
            let table = sample_table(with_sender);
            let text = write_table(&table, true);
            let back = read_table(&text).unwrap();
            assert_eq!(back, table);
            assert_eq!(back.table_hash(), table.table_hash());
            assert_eq!(write_table(&back, true), text);
        }
    }

    #[test]
    fn stripping_sender_changes_hash() {
        let table = sample_table(true);
        let text = write_table(&table, false);
        let back = read_table(&text).unwrap();
        assert!(back.sender().is_none());
        assert_ne!(back.table_hash(), table.table_hash());
        assert_eq!(back.table_hash(), table.without_sender().table_hash());
    }

    #[test]
    fn edited_value_fails_checksum() {
        let text = write_table(&sample_table(false), true);
        let tampered = text.replacen("-5.48", "-5.49", 1);
        match read_table(&tampered) {
            Err(TableError::Parse(ParseError::Checksum { .. })) => {}
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_distinct_error() {
        let text = write_table(&sample_table(false), true);
        let body = text.replacen("QUICFL-TABLE v1", "QUICFL-TABLE v2", 1);
        // Re-checksum so the version check is what trips.
        let end = body.rfind("checksum=").unwrap();
        let fixed = format!("{}checksum={:016x}\n", &body[..end], fnv1a(body[..end].as_bytes()));
        match read_table(&fixed) {
            Err(TableError::Parse(ParseError::BadVersion(v))) => assert_eq!(v, "v2"),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_field_is_distinct_error() {
        let text = write_table(&sample_table(false), true);
        let body = text.replacen("p=1/512", "p=1:512", 1);
        let end = body.rfind("checksum=").unwrap();
        let fixed = format!("{}checksum={:016x}\n", &body[..end], fnv1a(body[..end].as_bytes()));
        match read_table(&fixed) {
            Err(TableError::Parse(ParseError::Malformed { line, .. })) => assert_eq!(line, 2),
            other => panic!("expected malformed-field error, got {other:?}"),
        }
    }

    #[test]
    fn missing_checksum_rejected() {
        let text = write_table(&sample_table(false), true);
        let end = text.rfind("checksum=").unwrap();
        assert!(matches!(
            read_table(&text[..end]),
            Err(TableError::Parse(ParseError::MissingChecksum))
                | Err(TableError::Parse(ParseError::Checksum { .. }))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.qfl");
        let table = sample_table(true);
        write_table_file(&table, true, &path).unwrap();
        let back = read_table_file(&path).unwrap();
        assert_eq!(back, table);
    }
}
