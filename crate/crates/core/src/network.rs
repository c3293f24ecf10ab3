//! Grid model: buses, branches, generators and zone divisions.
//!
//! Buses are re-indexed to a dense 0-based index at construction; external
//! ids are kept for file formats and reporting. All objects are immutable
//! after validation and safe to share across threads.

use std::collections::HashMap;

use thiserror::Error;

use crate::scalar::Scalar;

/// Dense bus index (0-based, internal).
pub type BusIdx = usize;
/// Dense zone index (0-based, position in [`ZoneDivision::zones`]).
pub type ZoneIdx = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Bus<S> {
    /// External id as found in the case file.
    pub id: u64,
    /// Active-power demand at the bus, MW.
    pub load: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch<S> {
    pub from: BusIdx,
    pub to: BusIdx,
    /// Series reactance, per unit. Strictly positive.
    pub reactance: S,
    /// Thermal limit in MW; `None` = unlimited (0 in file formats).
    pub capacity: Option<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<S> {
    pub bus: BusIdx,
    /// Maximum output, MW.
    pub p_max: S,
    /// Linear marginal cost, money/MWh.
    pub marginal_cost: S,
}

/// Validated, connected grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    buses: Vec<Bus<S>>,
    branches: Vec<Branch<S>>,
    generators: Vec<Generator<S>>,
    base_mva: S,
    id_to_idx: HashMap<u64, BusIdx>,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("duplicate bus id {0}")]
    DuplicateBusId(u64),
    #[error("{kind} references unknown bus id {id}")]
    DanglingBusRef { kind: &'static str, id: u64 },
    #[error("branch {index} has non-positive reactance {reactance}")]
    NonPositiveReactance { index: usize, reactance: f64 },
    #[error("bus {id} has negative load {load}")]
    NegativeLoad { id: u64, load: f64 },
    #[error("generator {index} has negative p_max {p_max}")]
    NegativePMax { index: usize, p_max: f64 },
    #[error("network is not connected: bus {unreached_id} unreachable from bus {root_id}")]
    Disconnected { root_id: u64, unreached_id: u64 },
    #[error("network has no buses")]
    Empty,
}

/// Raw (still externally-id'd) inputs to [`Network::new`].
#[derive(Debug, Clone)]
pub struct RawBranch<S> {
    pub from_id: u64,
    pub to_id: u64,
    pub reactance: S,
    pub capacity: Option<S>,
}

#[derive(Debug, Clone)]
pub struct RawGenerator<S> {
    pub bus_id: u64,
    pub p_max: S,
    pub marginal_cost: S,
}

impl<S: Scalar> Network<S> {
    /// Validates and re-indexes a grid description.
    pub fn new(
        buses: Vec<Bus<S>>,
        branches: Vec<RawBranch<S>>,
        generators: Vec<RawGenerator<S>>,
        base_mva: S,
    ) -> Result<Self, NetworkError> {
        if buses.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut id_to_idx = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if id_to_idx.insert(bus.id, i).is_some() {
                return Err(NetworkError::DuplicateBusId(bus.id));
            }
            if bus.load < S::zero() {
                return Err(NetworkError::NegativeLoad {
                    id: bus.id,
                    load: bus.load.to_f64_lossy(),
                });
            }
        }
        let lookup = |kind: &'static str, id: u64| {
            id_to_idx
                .get(&id)
                .copied()
                .ok_or(NetworkError::DanglingBusRef { kind, id })
        };
        let mut dense_branches = Vec::with_capacity(branches.len());
        for (i, br) in branches.into_iter().enumerate() {
            if br.reactance <= S::zero() {
                return Err(NetworkError::NonPositiveReactance {
                    index: i,
                    reactance: br.reactance.to_f64_lossy(),
                });
            }
            dense_branches.push(Branch {
                from: lookup("branch", br.from_id)?,
                to: lookup("branch", br.to_id)?,
                reactance: br.reactance,
                capacity: br.capacity,
            });
        }
        let mut dense_gens = Vec::with_capacity(generators.len());
        for (i, g) in generators.into_iter().enumerate() {
            if g.p_max < S::zero() {
                return Err(NetworkError::NegativePMax {
                    index: i,
                    p_max: g.p_max.to_f64_lossy(),
                });
            }
            dense_gens.push(Generator {
                bus: lookup("generator", g.bus_id)?,
                p_max: g.p_max,
                marginal_cost: g.marginal_cost,
            });
        }
        let net = Network {
            buses,
            branches: dense_branches,
            generators: dense_gens,
            base_mva,
            id_to_idx,
        };
        net.check_connected()?;
        Ok(net)
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        if count != n {
            let unreached = seen.iter().position(|s| !s).unwrap();
            return Err(NetworkError::Disconnected {
                root_id: self.buses[0].id,
                unreached_id: self.buses[unreached].id,
            });
        }
        Ok(())
    }

    pub fn buses(&self) -> &[Bus<S>] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch<S>] {
        &self.branches
    }

    pub fn generators(&self) -> &[Generator<S>] {
        &self.generators
    }

    pub fn base_mva(&self) -> S {
        self.base_mva
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn bus_index(&self, external_id: u64) -> Option<BusIdx> {
        self.id_to_idx.get(&external_id).copied()
    }

    pub fn bus_id(&self, idx: BusIdx) -> u64 {
        self.buses[idx].id
    }
}

/// Total assignment of buses to zones.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneDivision {
    /// Distinct zone labels, in order of first appearance.
    zones: Vec<String>,
    /// Per dense bus index, the zone index into `zones`.
    assignment: Vec<ZoneIdx>,
}

#[derive(Debug, Error, PartialEq)]
pub enum DivisionError {
    #[error("bus {0} is not assigned to any zone")]
    MissingBus(u64),
    #[error("unknown bus id {0} in zone assignment")]
    UnknownBus(u64),
    #[error("bus {bus} assigned to both zone '{first}' and zone '{second}'")]
    ConflictingAssignment { bus: u64, first: String, second: String },
    #[error("zone label '{0}' is empty or contains a comma or line break")]
    BadLabel(String),
}

impl ZoneDivision {
    /// Builds a division from `(external bus id, label)` records. Labels are
    /// ordered by first appearance; duplicate records are fine as long as
    /// they agree.
    pub fn from_records<S: Scalar>(
        records: impl IntoIterator<Item = (u64, String)>,
        net: &Network<S>,
    ) -> Result<Self, DivisionError> {
        let mut zones: Vec<String> = Vec::new();
        let mut assignment: Vec<Option<ZoneIdx>> = vec![None; net.n_buses()];
        for (bus_id, label) in records {
            if label.is_empty() || label.contains(',') || label.contains('\n') || label.contains('\r')
            {
                return Err(DivisionError::BadLabel(label));
            }
            let idx = net
                .bus_index(bus_id)
                .ok_or(DivisionError::UnknownBus(bus_id))?;
            let zone = match zones.iter().position(|z| *z == label) {
                Some(z) => z,
                None => {
                    zones.push(label.clone());
                    zones.len() - 1
                }
            };
            match assignment[idx] {
                None => assignment[idx] = Some(zone),
                Some(prev) if prev == zone => {}
                Some(prev) => {
                    return Err(DivisionError::ConflictingAssignment {
                        bus: bus_id,
                        first: zones[prev].clone(),
                        second: label,
                    })
                }
            }
        }
        let mut dense = Vec::with_capacity(assignment.len());
        for (idx, z) in assignment.iter().enumerate() {
            match z {
                Some(z) => dense.push(*z),
                None => return Err(DivisionError::MissingBus(net.bus_id(idx))),
            }
        }
        Ok(ZoneDivision {
            zones,
            assignment: dense,
        })
    }

    /// Single-zone division covering the whole network.
    pub fn single_zone<S: Scalar>(net: &Network<S>, label: &str) -> Self {
        ZoneDivision {
            zones: vec![label.to_string()],
            assignment: vec![0; net.n_buses()],
        }
    }

    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn zones(&self) -> &[String] {
        &self.zones
    }

    pub fn zone_of(&self, bus: BusIdx) -> ZoneIdx {
        self.assignment[bus]
    }

    pub fn label(&self, zone: ZoneIdx) -> &str {
        &self.zones[zone]
    }

    /// Buses belonging to `zone`, in dense index order.
    pub fn members(&self, zone: ZoneIdx) -> impl Iterator<Item = BusIdx> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, z)| **z == zone)
            .map(|(b, _)| b)
    }
}
