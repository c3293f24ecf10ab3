//! Parser for the MATPOWER `.m` case subset.
//!
//! Reads the `mpc.baseMVA`, `mpc.bus`, `mpc.branch`, `mpc.gen` and
//! `mpc.gencost` assignments; every other statement (version strings, cell
//! arrays like `mpc.bus_name`, comments) is parsed and skipped. Matrix rows
//! are `;`-terminated and whitespace-insensitive; `%` starts a comment.
//!
//! Columns used: bus BUS_I/PD, branch F_BUS/T_BUS/BR_X/RATE_A/BR_STATUS,
//! gen GEN_BUS/GEN_STATUS/PMAX, gencost linear coefficient. RATE_A = 0
//! means no thermal limit. Out-of-service branches and generators are
//! dropped; gencost rows must be polynomial of degree at most one (higher
//! coefficients may be present only when exactly zero).

use std::collections::HashMap;

use super::CaseError;
use crate::network::{Bus, Network, RawBranch, RawGenerator};
use crate::scalar::Scalar;

struct MatrixRow {
    values: Vec<f64>,
    line: usize,
}

struct Scanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Scanner {
            bytes: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn error(&self, msg: impl Into<String>) -> CaseError {
        CaseError::syntax(self.line, self.col, msg)
    }

    /// Skips whitespace, `%` line comments and MATLAB `...` continuations.
    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'%') => {
                    while let Some(b) = self.peek() {
                        if b == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                Some(b'.') if self.bytes[self.pos..].starts_with(b"...") => {
                    while let Some(b) = self.peek() {
                        if b == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    fn skip_to_eol(&mut self) {
        while let Some(b) = self.peek() {
            self.bump();
            if b == b'\n' {
                break;
            }
        }
    }

    fn read_ident(&mut self) -> String {
        let mut s = String::new();
        while let Some(b) = self.peek() {
            if b.is_ascii_alphanumeric() || b == b'_' || b == b'.' {
                s.push(b as char);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn read_number(&mut self) -> Result<f64, CaseError> {
        let (line, col) = (self.line, self.col);
        let start = self.pos;
        if matches!(self.peek(), Some(b'+') | Some(b'-')) {
            self.bump();
        }
        let mut digits = false;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
            self.bump();
            digits = true;
        }
        if self.peek() == Some(b'.') {
            self.bump();
            while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
                self.bump();
                digits = true;
            }
        }
        if !digits {
            return Err(CaseError::syntax(line, col, "expected a number"));
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            self.bump();
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.bump();
            }
            let mut exp_digits = false;
            while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
                self.bump();
                exp_digits = true;
            }
            if !exp_digits {
                return Err(CaseError::syntax(self.line, self.col, "malformed exponent"));
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map_err(|_| CaseError::syntax(line, col, format!("invalid number '{text}'")))
    }

    fn read_matrix(&mut self) -> Result<Vec<MatrixRow>, CaseError> {
        // Opening '[' already consumed by the caller.
        let mut rows = Vec::new();
        let mut pending: Vec<f64> = Vec::new();
        let mut row_line = self.line;
        loop {
            self.skip_trivia();
            match self.peek() {
                None => return Err(self.error("unterminated matrix: expected ']'")),
                Some(b']') => {
                    self.bump();
                    if !pending.is_empty() {
                        rows.push(MatrixRow {
                            values: std::mem::take(&mut pending),
                            line: row_line,
                        });
                    }
                    return Ok(rows);
                }
                Some(b';') => {
                    self.bump();
                    if !pending.is_empty() {
                        rows.push(MatrixRow {
                            values: std::mem::take(&mut pending),
                            line: row_line,
                        });
                    }
                }
                Some(b',') => {
                    self.bump();
                }
                Some(_) => {
                    if pending.is_empty() {
                        row_line = self.line;
                    }
                    pending.push(self.read_number()?);
                }
            }
        }
    }

    fn skip_cell(&mut self) -> Result<(), CaseError> {
        // Opening '{' already consumed; cells may nest.
        let mut depth = 1usize;
        while depth > 0 {
            self.skip_trivia();
            match self.bump() {
                None => return Err(self.error("unterminated cell array: expected '}'")),
                Some(b'{') => depth += 1,
                Some(b'}') => depth -= 1,
                Some(b'\'') => self.skip_string()?,
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn skip_string(&mut self) -> Result<(), CaseError> {
        // Opening quote already consumed.
        loop {
            match self.bump() {
                None => return Err(self.error("unterminated string literal")),
                Some(b'\'') => return Ok(()),
                Some(_) => {}
            }
        }
    }
}

#[derive(Default)]
struct CaseBlocks {
    scalars: HashMap<String, f64>,
    matrices: HashMap<String, Vec<MatrixRow>>,
}

fn scan_blocks(text: &str) -> Result<CaseBlocks, CaseError> {
    let mut sc = Scanner::new(text);
    let mut blocks = CaseBlocks::default();
    loop {
        sc.skip_trivia();
        let Some(b) = sc.peek() else { break };
        if !(b.is_ascii_alphabetic() || b == b'_') {
            return Err(sc.error(format!("unexpected character '{}'", b as char)));
        }
        let ident = sc.read_ident();
        if ident == "function" {
            sc.skip_to_eol();
            continue;
        }
        sc.skip_trivia();
        if sc.peek() != Some(b'=') {
            return Err(sc.error(format!("expected '=' after '{ident}'")));
        }
        sc.bump();
        sc.skip_trivia();
        match sc.peek() {
            None => return Err(sc.error("unexpected end of file after '='")),
            Some(b'[') => {
                sc.bump();
                let rows = sc.read_matrix()?;
                blocks.matrices.insert(ident, rows);
            }
            Some(b'{') => {
                sc.bump();
                sc.skip_cell()?;
            }
            Some(b'\'') => {
                sc.bump();
                sc.skip_string()?;
            }
            Some(_) => {
                let v = sc.read_number()?;
                blocks.scalars.insert(ident, v);
            }
        }
        sc.skip_trivia();
        if sc.peek() == Some(b';') {
            sc.bump();
        }
    }
    Ok(blocks)
}

fn as_bus_id(block: &'static str, row: usize, v: f64) -> Result<u64, CaseError> {
    if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(CaseError::BadRow {
            block,
            row,
            msg: format!("'{v}' is not a valid bus id"),
        });
    }
    Ok(v as u64)
}

/// Parses a MATPOWER case into a validated [`Network`].
pub fn parse_matpower<S: Scalar>(text: &str) -> Result<Network<S>, CaseError> {
    let blocks = scan_blocks(text)?;
    let base_mva = *blocks
        .scalars
        .get("mpc.baseMVA")
        .ok_or(CaseError::MissingBlock("mpc.baseMVA"))?;
    let bus_rows = blocks
        .matrices
        .get("mpc.bus")
        .ok_or(CaseError::MissingBlock("mpc.bus"))?;
    let branch_rows = blocks
        .matrices
        .get("mpc.branch")
        .ok_or(CaseError::MissingBlock("mpc.branch"))?;
    let gen_rows = blocks
        .matrices
        .get("mpc.gen")
        .ok_or(CaseError::MissingBlock("mpc.gen"))?;
    let gencost_rows = blocks
        .matrices
        .get("mpc.gencost")
        .ok_or(CaseError::MissingBlock("mpc.gencost"))?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    for (r, row) in bus_rows.iter().enumerate() {
        if row.values.len() < 3 {
            return Err(CaseError::BadRow {
                block: "bus",
                row: r,
                msg: format!("expected at least 3 columns, found {} (line {})", row.values.len(), row.line),
            });
        }
        buses.push(Bus {
            id: as_bus_id("bus", r, row.values[0])?,
            load: S::c(row.values[2]),
        });
    }

    let mut branches = Vec::new();
    for (r, row) in branch_rows.iter().enumerate() {
        if row.values.len() < 11 {
            return Err(CaseError::BadRow {
                block: "branch",
                row: r,
                msg: format!("expected at least 11 columns, found {} (line {})", row.values.len(), row.line),
            });
        }
        if row.values[10] == 0.0 {
            continue; // out of service
        }
        let rate_a = row.values[5];
        branches.push(RawBranch {
            from_id: as_bus_id("branch", r, row.values[0])?,
            to_id: as_bus_id("branch", r, row.values[1])?,
            reactance: S::c(row.values[3]),
            capacity: if rate_a == 0.0 { None } else { Some(S::c(rate_a)) },
        });
    }

    if gencost_rows.len() != gen_rows.len() {
        return Err(CaseError::GencostCount {
            gencost: gencost_rows.len(),
            gens: gen_rows.len(),
        });
    }
    let mut generators = Vec::new();
    for (r, (gen, cost)) in gen_rows.iter().zip(gencost_rows).enumerate() {
        if gen.values.len() < 9 {
            return Err(CaseError::BadRow {
                block: "gen",
                row: r,
                msg: format!("expected at least 9 columns, found {} (line {})", gen.values.len(), gen.line),
            });
        }
        let marginal = linear_marginal_cost(r, &cost.values)?;
        if gen.values[7] <= 0.0 {
            continue; // out of service
        }
        generators.push(RawGenerator {
            bus_id: as_bus_id("gen", r, gen.values[0])?,
            p_max: S::c(gen.values[8]),
            marginal_cost: S::c(marginal),
        });
    }

    Ok(Network::new(buses, branches, generators, S::c(base_mva))?)
}

/// Extracts the linear marginal cost from a polynomial gencost row.
fn linear_marginal_cost(row: usize, values: &[f64]) -> Result<f64, CaseError> {
    if values.len() < 4 {
        return Err(CaseError::BadRow {
            block: "gencost",
            row,
            msg: format!("expected at least 4 columns, found {}", values.len()),
        });
    }
    if values[0] != 2.0 {
        return Err(CaseError::BadRow {
            block: "gencost",
            row,
            msg: format!("cost model {} is not polynomial", values[0]),
        });
    }
    let ncost = values[3];
    if ncost < 1.0 || ncost.fract() != 0.0 {
        return Err(CaseError::BadRow {
            block: "gencost",
            row,
            msg: format!("invalid coefficient count {ncost}"),
        });
    }
    let n = ncost as usize;
    if values.len() < 4 + n {
        return Err(CaseError::BadRow {
            block: "gencost",
            row,
            msg: format!("declares {n} coefficients but lists {}", values.len() - 4),
        });
    }
    let coeffs = &values[4..4 + n]; // highest degree first
    // Degree >= 2 terms must be identically zero.
    if n >= 3 && coeffs[..n - 2].iter().any(|c| *c != 0.0) {
        return Err(CaseError::NonlinearCost { row });
    }
    Ok(if n >= 2 { coeffs[n - 2] } else { 0.0 })
}
