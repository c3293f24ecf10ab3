//! Zone division files: CSV with header `bus_id,zone`, one assignment per
//! line.

use super::CaseError;
use crate::network::{Network, ZoneDivision};
use crate::scalar::Scalar;

/// Loads and validates a zone division against its network.
pub fn load_zone_division<S: Scalar>(
    text: &str,
    net: &Network<S>,
) -> Result<ZoneDivision, CaseError> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((i, line)) => {
                let t = line.trim();
                if !t.is_empty() {
                    break (i + 1, t);
                }
            }
            None => return Err(CaseError::syntax(0, 0, "empty zone division file")),
        }
    };
    if header.1 != "bus_id,zone" {
        return Err(CaseError::syntax(
            header.0,
            1,
            format!("expected header 'bus_id,zone', found '{}'", header.1),
        ));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let Some((id_text, zone)) = t.split_once(',') else {
            return Err(CaseError::syntax(
                i + 1,
                1,
                format!("expected 'bus_id,zone', found '{t}'"),
            ));
        };
        let bus_id: u64 = id_text.trim().parse().map_err(|_| {
            CaseError::syntax(i + 1, 1, format!("invalid bus id '{}'", id_text.trim()))
        })?;
        records.push((bus_id, zone.trim().to_string()));
    }
    Ok(ZoneDivision::from_records(records, net)?)
}

/// Serializes a division in the same format (buses in network order).
pub fn serialize_zone_division<S: Scalar>(div: &ZoneDivision, net: &Network<S>) -> String {
    let mut out = String::from("bus_id,zone\n");
    for b in 0..net.n_buses() {
        out.push_str(&format!("{},{}\n", net.bus_id(b), div.label(div.zone_of(b))));
    }
    out
}
