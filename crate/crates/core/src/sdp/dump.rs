//! Plain-text sparse triplet dump of a packed problem.
//!
//! ```text
//! # sdp vars=<n> blocks=<d1,d2,...> equalities=<m>
//! <block> <row> <col> <var> <coefficient>
//! ```
//!
//! Blocks, rows, columns and variables are 1-based; variable 0 is the
//! constant term. Block 0 holds the objective (row = col = 0, variable 0 is
//! the offset). Equality `j` appears as block `-j` with row = col = 0;
//! its variable-0 coefficient is the right-hand side.

use std::fmt::Write as _;

use super::{BlockEntry, LinearEquality, SdpBlock, SdpProblem};
use crate::error::{Error, Result};
use crate::io::fmt_f64;

pub fn write_dump(p: &SdpProblem) -> String {
    let mut out = String::new();
    let dims: Vec<String> = p.blocks.iter().map(|b| b.dim.to_string()).collect();
    let _ = writeln!(
        out,
        "# sdp vars={} blocks={} equalities={}",
        p.num_vars,
        dims.join(","),
        p.equalities.len()
    );
    if p.objective_offset != 0.0 {
        let _ = writeln!(out, "0 0 0 0 {}", fmt_f64(p.objective_offset));
    }
    for (i, &c) in p.objective.iter().enumerate() {
        if c != 0.0 {
            let _ = writeln!(out, "0 0 0 {} {}", i + 1, fmt_f64(c));
        }
    }
    for (k, b) in p.blocks.iter().enumerate() {
        for e in &b.entries {
            let var = e.var.map_or(0, |v| v + 1);
            let _ = writeln!(out, "{} {} {} {} {}", k + 1, e.row + 1, e.col + 1, var, fmt_f64(e.value));
        }
    }
    for (j, eq) in p.equalities.iter().enumerate() {
        let _ = writeln!(out, "-{} 0 0 0 {}", j + 1, fmt_f64(eq.rhs));
        for &(i, a) in &eq.coeffs {
            let _ = writeln!(out, "-{} 0 0 {} {}", j + 1, i + 1, fmt_f64(a));
        }
    }
    out
}

fn header_field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.split_whitespace()
        .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Format(format!("dump header lacks `{key}`")))
}

pub fn read_dump(text: &str) -> Result<SdpProblem> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty dump".into()))?;
    let bad = |what: &str| Error::Format(format!("dump: bad {what}"));
    let n: usize = header_field(header, "vars")?.parse().map_err(|_| bad("vars"))?;
    let dims_s = header_field(header, "blocks")?;
    let dims: Vec<usize> = if dims_s.is_empty() {
        Vec::new()
    } else {
        dims_s
            .split(',')
            .map(|d| d.parse().map_err(|_| bad("block dims")))
            .collect::<Result<_>>()?
    };
    let m: usize = header_field(header, "equalities")?.parse().map_err(|_| bad("equalities"))?;

    let mut p = SdpProblem::new(n);
    p.blocks = dims.into_iter().map(SdpBlock::new).collect();
    p.equalities = vec![LinearEquality::default(); m];
    for (ln, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 5 {
            return Err(Error::Format(format!("dump line {}: expected 5 fields", ln + 2)));
        }
        let block: i64 = t[0].parse().map_err(|_| bad("block"))?;
        let row: usize = t[1].parse().map_err(|_| bad("row"))?;
        let col: usize = t[2].parse().map_err(|_| bad("col"))?;
        let var: usize = t[3].parse().map_err(|_| bad("variable"))?;
        let value: f64 = t[4].parse().map_err(|_| bad("coefficient"))?;
        if var > n {
            return Err(bad("variable"));
        }
        let var = var.checked_sub(1);
        match block {
            0 => match var {
                None => p.objective_offset += value,
                Some(i) => p.objective[i] += value,
            },
            b if b > 0 => {
                let blk = p.blocks.get_mut(b as usize - 1).ok_or_else(|| bad("block"))?;
                if row == 0 || col == 0 {
                    return Err(bad("row/col"));
                }
                blk.entries.push(BlockEntry { var, row: row - 1, col: col - 1, value });
            }
            b => {
                let eq = p.equalities.get_mut((-b) as usize - 1).ok_or_else(|| bad("equality"))?;
                match var {
                    None => eq.rhs = value,
                    Some(i) => eq.coeffs.push((i, value)),
                }
            }
        }
    }
    p.validate()?;
    Ok(p)
}
