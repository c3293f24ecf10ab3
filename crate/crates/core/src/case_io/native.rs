//! Native network format: a plain structured-text document mirroring the
//! network type, with canonical field order and fixed decimal formatting so
//! that parse/serialize round trips are byte-identical.
//!
//! ```text
//! buses <count>
//! <id> <load>
//! branches <count>
//! <from_id> <to_id> <reactance> <capacity>   (capacity 0 = unlimited)
//! generators <count>
//! <bus_id> <p_max> <marginal_cost>
//! base_mva <value>
//! ```

use super::CaseError;
use crate::network::{Bus, Network, RawBranch, RawGenerator};
use crate::scalar::Scalar;

fn fmt<S: Scalar>(v: S) -> String {
    format!("{:.6}", v)
}

/// Canonical serialization of a network.
pub fn serialize_network<S: Scalar>(net: &Network<S>) -> String {
    let mut out = String::new();
    out.push_str(&format!("buses {}\n", net.n_buses()));
    for bus in net.buses() {
        out.push_str(&format!("{} {}\n", bus.id, fmt(bus.load)));
    }
    out.push_str(&format!("branches {}\n", net.n_branches()));
    for br in net.branches() {
        let cap = br.capacity.unwrap_or_else(S::zero);
        out.push_str(&format!(
            "{} {} {} {}\n",
            net.bus_id(br.from),
            net.bus_id(br.to),
            fmt(br.reactance),
            fmt(cap)
        ));
    }
    out.push_str(&format!("generators {}\n", net.generators().len()));
    for g in net.generators() {
        out.push_str(&format!(
            "{} {} {}\n",
            net.bus_id(g.bus),
            fmt(g.p_max),
            fmt(g.marginal_cost)
        ));
    }
    out.push_str(&format!("base_mva {}\n", fmt(net.base_mva())));
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            let t = line.trim();
            if !t.is_empty() {
                return Some((i + 1, t));
            }
        }
        None
    }
}

fn parse_count(line: usize, text: &str, keyword: &'static str) -> Result<usize, CaseError> {
    let mut parts = text.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(n), None) if k == keyword => n
            .parse()
            .map_err(|_| CaseError::syntax(line, 1, format!("invalid {keyword} count '{n}'"))),
        _ => Err(CaseError::syntax(
            line,
            1,
            format!("expected '{keyword} <count>', found '{text}'"),
        )),
    }
}

fn parse_fields(line: usize, text: &str, n: usize) -> Result<Vec<f64>, CaseError> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != n {
        return Err(CaseError::syntax(
            line,
            1,
            format!("expected {n} fields, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| CaseError::syntax(line, 1, format!("invalid number '{f}'")))
        })
        .collect()
}

fn as_id(line: usize, v: f64) -> Result<u64, CaseError> {
    if v < 0.0 || v.fract() != 0.0 {
        return Err(CaseError::syntax(line, 1, format!("invalid bus id '{v}'")));
    }
    Ok(v as u64)
}

/// Parses the native network format.
pub fn parse_network<S: Scalar>(text: &str) -> Result<Network<S>, CaseError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let eof = || CaseError::syntax(0, 0, "unexpected end of file");

    let (ln, t) = lines.next_content().ok_or_else(eof)?;
    let n_buses = parse_count(ln, t, "buses")?;
    let mut buses = Vec::with_capacity(n_buses);
    for _ in 0..n_buses {
        let (ln, t) = lines.next_content().ok_or_else(eof)?;
        let f = parse_fields(ln, t, 2)?;
        buses.push(Bus {
            id: as_id(ln, f[0])?,
            load: S::c(f[1]),
        });
    }

    let (ln, t) = lines.next_content().ok_or_else(eof)?;
    let n_branches = parse_count(ln, t, "branches")?;
    let mut branches = Vec::with_capacity(n_branches);
    for _ in 0..n_branches {
        let (ln, t) = lines.next_content().ok_or_else(eof)?;
        let f = parse_fields(ln, t, 4)?;
        branches.push(RawBranch {
            from_id: as_id(ln, f[0])?,
            to_id: as_id(ln, f[1])?,
            reactance: S::c(f[2]),
            capacity: if f[3] == 0.0 { None } else { Some(S::c(f[3])) },
        });
    }

    let (ln, t) = lines.next_content().ok_or_else(eof)?;
    let n_gens = parse_count(ln, t, "generators")?;
    let mut generators = Vec::with_capacity(n_gens);
    for _ in 0..n_gens {
        let (ln, t) = lines.next_content().ok_or_else(eof)?;
        let f = parse_fields(ln, t, 3)?;
        generators.push(RawGenerator {
            bus_id: as_id(ln, f[0])?,
            p_max: S::c(f[1]),
            marginal_cost: S::c(f[2]),
        });
    }

    let (ln, t) = lines.next_content().ok_or_else(eof)?;
    let mut parts = t.split_whitespace();
    let base_mva = match (parts.next(), parts.next(), parts.next()) {
        (Some("base_mva"), Some(v), None) => v
            .parse::<f64>()
            .map_err(|_| CaseError::syntax(ln, 1, format!("invalid base_mva '{v}'")))?,
        _ => return Err(CaseError::syntax(ln, 1, format!("expected 'base_mva <value>', found '{t}'"))),
    };
    if let Some((ln, t)) = lines.next_content() {
        return Err(CaseError::syntax(ln, 1, format!("trailing content '{t}'")));
    }

    Ok(Network::new(buses, branches, generators, S::c(base_mva))?)
}
