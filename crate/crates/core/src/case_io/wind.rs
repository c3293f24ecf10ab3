//! Wind injection files: CSV with header `bus_id,mw`.

use std::collections::BTreeMap;

use super::CaseError;
use crate::scalar::Scalar;

/// Parses per-bus wind availability. Bus existence is checked later, when
/// the offer book is built against a network.
pub fn parse_wind<S: Scalar>(text: &str) -> Result<BTreeMap<u64, S>, CaseError> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((i, line)) => {
                let t = line.trim();
                if !t.is_empty() {
                    break (i + 1, t);
                }
            }
            None => return Err(CaseError::syntax(0, 0, "empty wind file")),
        }
    };
    if header.1 != "bus_id,mw" {
        return Err(CaseError::syntax(
            header.0,
            1,
            format!("expected header 'bus_id,mw', found '{}'", header.1),
        ));
    }
    let mut wind = BTreeMap::new();
    for (i, line) in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let Some((id_text, mw_text)) = t.split_once(',') else {
            return Err(CaseError::syntax(
                i + 1,
                1,
                format!("expected 'bus_id,mw', found '{t}'"),
            ));
        };
        let bus_id: u64 = id_text.trim().parse().map_err(|_| {
            CaseError::syntax(i + 1, 1, format!("invalid bus id '{}'", id_text.trim()))
        })?;
        let mw: f64 = mw_text.trim().parse().map_err(|_| {
            CaseError::syntax(i + 1, 1, format!("invalid MW value '{}'", mw_text.trim()))
        })?;
        if mw < 0.0 {
            return Err(CaseError::syntax(
                i + 1,
                1,
                format!("negative wind injection {mw} at bus {bus_id}"),
            ));
        }
        if wind.insert(bus_id, S::c(mw)).is_some() {
            return Err(CaseError::syntax(
                i + 1,
                1,
                format!("duplicate wind record for bus {bus_id}"),
            ));
        }
    }
    Ok(wind)
}
