//! DC power-flow linear algebra: susceptance system, nodal PTDF, GSK and
//! zonal PTDF construction.
//!
//! Flows are in MW, signed positive in the branch's from->to direction.
//! Angles never leave this module; the susceptance system is factorized
//! once and reused for every solve against it.

mod ldl;

use thiserror::Error;

use crate::network::{BusIdx, Network, ZoneDivision, ZoneIdx};
use crate::scalar::Scalar;
use ldl::{LdlFactor, SymmetricBuilder};

#[derive(Debug, Error, PartialEq)]
pub enum DcflowError {
    #[error("singular susceptance system (network not connected once bus {slack} is removed)")]
    Singular { slack: BusIdx },
    #[error("injection vector has {got} entries, network has {expected} buses")]
    InjectionLength { expected: usize, got: usize },
    #[error("slack index {0} out of range")]
    SlackOutOfRange(BusIdx),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Branch flows in MW, network branch order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowVector<S> {
    pub values: Vec<S>,
}

/// Reduced susceptance matrix in symmetric CSR form, kept next to its
/// factor for residual computations.
struct ReducedMatrix<S> {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> ReducedMatrix<S> {
    fn from_entries(n: usize, entries: &[(usize, usize, S)]) -> Self {
        let mut rows: Vec<Vec<(usize, S)>> = vec![Vec::new(); n];
        for &(i, j, v) in entries {
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v));
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = row[k].1;
                k += 1;
                while k < row.len() && row[k].0 == c {
                    v = v + row[k].1;
                    k += 1;
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        ReducedMatrix {
            row_ptr,
            col_idx,
            values,
        }
    }

    fn residual(&self, x: &[S], rhs: &[S], out: &mut [S]) {
        for i in 0..x.len() {
            let mut acc = rhs[i];
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc = acc - self.values[p] * x[self.col_idx[p]];
            }
            out[i] = acc;
        }
    }
}

/// Factorized reduced susceptance system for one slack choice.
pub struct SusceptanceSystem<S> {
    slack: BusIdx,
    /// Dense bus index -> reduced index (slack has none).
    reduced: Vec<Option<usize>>,
    factor: LdlFactor<S>,
    matrix: ReducedMatrix<S>,
}

impl<S: Scalar> SusceptanceSystem<S> {
    pub fn build(net: &Network<S>, slack: BusIdx) -> Result<Self, DcflowError> {
        let n = net.n_buses();
        if slack >= n {
            return Err(DcflowError::SlackOutOfRange(slack));
        }
        let mut reduced = vec![None; n];
        let mut next = 0usize;
        for (i, r) in reduced.iter_mut().enumerate() {
            if i != slack {
                *r = Some(next);
                next += 1;
            }
        }
        let mut entries: Vec<(usize, usize, S)> = Vec::new();
        for br in net.branches() {
            let b = S::one() / br.reactance;
            match (reduced[br.from], reduced[br.to]) {
                (Some(i), Some(j)) => {
                    entries.push((i, i, b));
                    entries.push((j, j, b));
                    entries.push((i.min(j), i.max(j), -b));
                }
                (Some(i), None) => entries.push((i, i, b)),
                (None, Some(j)) => entries.push((j, j, b)),
                (None, None) => {}
            }
        }
        let mut builder = SymmetricBuilder::new(next);
        for &(i, j, v) in &entries {
            builder.add(i, j, v);
        }
        let factor = builder
            .factorize()
            .ok_or(DcflowError::Singular { slack })?;
        let matrix = ReducedMatrix::from_entries(next, &entries);
        Ok(SusceptanceSystem {
            slack,
            reduced,
            factor,
            matrix,
        })
    }

    pub fn slack(&self) -> BusIdx {
        self.slack
    }

    /// Factorized solve plus one step of iterative refinement: large grids
    /// make the plain solve residual visible at the MW tolerances used by
    /// the flow identities downstream.
    fn solve_refined(&self, rhs: &[S]) -> Vec<S> {
        let mut x = self.factor.solve(rhs);
        let mut r = vec![S::zero(); x.len()];
        self.matrix.residual(&x, rhs, &mut r);
        let dx = self.factor.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi = *xi + *di;
        }
        x
    }

    /// Solves for bus potentials given MW injections; the slack absorbs any
    /// imbalance. Returned vector is indexed by dense bus, slack entry zero.
    fn potentials(&self, injections: &[S]) -> Vec<S> {
        let mut rhs = vec![S::zero(); self.factor.n()];
        for (bus, inj) in injections.iter().enumerate() {
            if let Some(r) = self.reduced[bus] {
                rhs[r] = *inj;
            }
        }
        let sol = self.solve_refined(&rhs);
        let mut theta = vec![S::zero(); injections.len()];
        for (bus, r) in self.reduced.iter().enumerate() {
            if let Some(r) = *r {
                theta[bus] = sol[r];
            }
        }
        theta
    }

    /// Branch flows for the given MW injection vector.
    pub fn flows(&self, net: &Network<S>, injections: &[S]) -> Result<FlowVector<S>, DcflowError> {
        if injections.len() != net.n_buses() {
            return Err(DcflowError::InjectionLength {
                expected: net.n_buses(),
                got: injections.len(),
            });
        }
        let theta = self.potentials(injections);
        let values = net
            .branches()
            .iter()
            .map(|br| (theta[br.from] - theta[br.to]) / br.reactance)
            .collect();
        Ok(FlowVector { values })
    }
}

/// One-shot DC power flow: factorize and solve.
pub fn dc_power_flow<S: Scalar>(
    net: &Network<S>,
    injections: &[S],
    slack: BusIdx,
) -> Result<FlowVector<S>, DcflowError> {
    SusceptanceSystem::build(net, slack)?.flows(net, injections)
}

/// Dense nodal PTDF: sensitivity of each branch flow to a unit injection at
/// each bus, withdrawn at the slack. Row order = branch order; the slack
/// column is identically zero.
pub struct PtdfMatrix<S> {
    values: Vec<S>,
    n_buses: usize,
    n_branches: usize,
    slack: BusIdx,
}

impl<S: Scalar> PtdfMatrix<S> {
    pub fn get(&self, branch: usize, bus: BusIdx) -> S {
        self.values[branch * self.n_buses + bus]
    }

    pub fn row(&self, branch: usize) -> &[S] {
        &self.values[branch * self.n_buses..(branch + 1) * self.n_buses]
    }

    pub fn slack(&self) -> BusIdx {
        self.slack
    }

    pub fn n_branches(&self) -> usize {
        self.n_branches
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    /// Flows implied by an MW injection vector (must be balanced for the
    /// result to be slack-independent).
    pub fn apply(&self, injections: &[S]) -> Vec<S> {
        (0..self.n_branches)
            .map(|k| {
                self.row(k)
                    .iter()
                    .zip(injections)
                    .fold(S::zero(), |acc, (p, u)| acc + *p * *u)
            })
            .collect()
    }

    /// Branch-major CSV dump: header `branch_id,<bus ids...>`.
    pub fn to_csv(&self, net: &Network<S>) -> String {
        let mut out = String::from("branch_id");
        for bus in net.buses() {
            out.push(',');
            out.push_str(&bus.id.to_string());
        }
        out.push('\n');
        for k in 0..self.n_branches {
            out.push_str(&k.to_string());
            for v in self.row(k) {
                out.push(',');
                out.push_str(&format!("{:.9}", v));
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the dense nodal PTDF via one factorization and one triangular
/// solve per branch row.
pub fn build_nodal_ptdf<S: Scalar>(
    net: &Network<S>,
    slack: BusIdx,
) -> Result<PtdfMatrix<S>, DcflowError> {
    let system = SusceptanceSystem::build(net, slack)?;
    let n = net.n_buses();
    let l = net.n_branches();
    let mut values = vec![S::zero(); l * n];
    let mut rhs = vec![S::zero(); system.factor.n()];
    for (k, br) in net.branches().iter().enumerate() {
        for v in rhs.iter_mut() {
            *v = S::zero();
        }
        let b = S::one() / br.reactance;
        if let Some(i) = system.reduced[br.from] {
            rhs[i] = b;
        }
        if let Some(j) = system.reduced[br.to] {
            rhs[j] = rhs[j] - b;
        }
        let y = system.solve_refined(&rhs);
        let row = &mut values[k * n..(k + 1) * n];
        for (bus, r) in system.reduced.iter().enumerate() {
            if let Some(r) = *r {
                row[bus] = y[r];
            }
        }
    }
    Ok(PtdfMatrix {
        values,
        n_buses: n,
        n_branches: l,
        slack,
    })
}

/// Generation shift keys: share of each zone's net position realized at each
/// bus. Entry (bus, zone) is zero outside the zone; columns sum to one.
pub struct GskMatrix<S> {
    values: Vec<S>,
    n_buses: usize,
    n_zones: usize,
}

impl<S: Scalar> GskMatrix<S> {
    pub fn get(&self, bus: BusIdx, zone: ZoneIdx) -> S {
        self.values[bus * self.n_zones + zone]
    }

    pub fn n_zones(&self) -> usize {
        self.n_zones
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    /// Nodal injections implied by zonal net positions.
    pub fn distribute(&self, zonal_net: &[S]) -> Vec<S> {
        (0..self.n_buses)
            .map(|b| {
                zonal_net
                    .iter()
                    .enumerate()
                    .fold(S::zero(), |acc, (j, q)| acc + self.get(b, j) * *q)
            })
            .collect()
    }

    /// CSV dump: header `bus_id,<zone labels...>`.
    pub fn to_csv(&self, net: &Network<S>, div: &ZoneDivision) -> String {
        let mut out = String::from("bus_id");
        for z in div.zones() {
            out.push(',');
            out.push_str(z);
        }
        out.push('\n');
        for (b, bus) in net.buses().iter().enumerate() {
            out.push_str(&bus.id.to_string());
            for j in 0..self.n_zones {
                out.push(',');
                out.push_str(&format!("{:.9}", self.get(b, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Zonal net injection below which a zone's GSK column falls back to a
/// uniform split (the proportional rule would divide by ~0).
const GSK_DEGENERATE_MW: f64 = 1e-6;

/// Builds the GSK from a bootstrap nodal injection profile: entry (n, j) is
/// the share of zone j's net injection realized at bus n. A zone whose net
/// injection is (near) zero gets a uniform column over its generator buses,
/// or over all its buses when it has no generator.
pub fn build_gsk<S: Scalar>(
    net: &Network<S>,
    div: &ZoneDivision,
    nodal_injections: &[S],
) -> Result<GskMatrix<S>, DcflowError> {
    if nodal_injections.len() != net.n_buses() {
        return Err(DcflowError::InjectionLength {
            expected: net.n_buses(),
            got: nodal_injections.len(),
        });
    }
    let n = net.n_buses();
    let j_zones = div.n_zones();
    let mut values = vec![S::zero(); n * j_zones];
    let mut has_gen = vec![false; n];
    for g in net.generators() {
        has_gen[g.bus] = true;
    }
    for j in 0..j_zones {
        let members: Vec<BusIdx> = div.members(j).collect();
        let total = members
            .iter()
            .fold(S::zero(), |acc, &b| acc + nodal_injections[b]);
        if total.abs() < S::c(GSK_DEGENERATE_MW) {
            let gen_buses: Vec<BusIdx> = members.iter().copied().filter(|&b| has_gen[b]).collect();
            let pool = if gen_buses.is_empty() { &members } else { &gen_buses };
            let share = S::one() / S::from_usize(pool.len()).unwrap();
            for &b in pool {
                values[b * j_zones + j] = share;
            }
        } else {
            for &b in &members {
                values[b * j_zones + j] = nodal_injections[b] / total;
            }
        }
    }
    Ok(GskMatrix {
        values,
        n_buses: n,
        n_zones: j_zones,
    })
}

/// Zonal PTDF: rows of `PTDF * GSK` restricted to the branches whose
/// endpoints lie in different zones.
pub struct ZonalPtdf<S> {
    /// K x J, row-major; row order follows `interzonal`.
    values: Vec<S>,
    /// Branch indices (network order) crossing a zone border.
    pub interzonal: Vec<usize>,
    n_zones: usize,
}

impl<S: Scalar> ZonalPtdf<S> {
    pub fn n_rows(&self) -> usize {
        self.interzonal.len()
    }

    pub fn n_zones(&self) -> usize {
        self.n_zones
    }

    pub fn row(&self, k: usize) -> &[S] {
        &self.values[k * self.n_zones..(k + 1) * self.n_zones]
    }

    pub fn get(&self, k: usize, zone: ZoneIdx) -> S {
        self.values[k * self.n_zones + zone]
    }

    /// Inter-zonal flows implied by zonal net positions, in `interzonal`
    /// row order.
    pub fn apply(&self, zonal_net: &[S]) -> Vec<S> {
        (0..self.n_rows())
            .map(|k| {
                self.row(k)
                    .iter()
                    .zip(zonal_net)
                    .fold(S::zero(), |acc, (p, q)| acc + *p * *q)
            })
            .collect()
    }
}

/// Lists border branches and forms the zonal PTDF. A single-zone division
/// legally yields zero rows.
pub fn zonal_ptdf<S: Scalar>(
    ptdf: &PtdfMatrix<S>,
    gsk: &GskMatrix<S>,
    net: &Network<S>,
    div: &ZoneDivision,
) -> Result<ZonalPtdf<S>, DcflowError> {
    if ptdf.n_buses() != net.n_buses() || gsk.n_buses() != net.n_buses() {
        return Err(DcflowError::Dimension(format!(
            "ptdf buses {} / gsk buses {} / network buses {}",
            ptdf.n_buses(),
            gsk.n_buses(),
            net.n_buses()
        )));
    }
    if gsk.n_zones() != div.n_zones() {
        return Err(DcflowError::Dimension(format!(
            "gsk zones {} / division zones {}",
            gsk.n_zones(),
            div.n_zones()
        )));
    }
    let interzonal: Vec<usize> = net
        .branches()
        .iter()
        .enumerate()
        .filter(|(_, br)| div.zone_of(br.from) != div.zone_of(br.to))
        .map(|(k, _)| k)
        .collect();
    let j_zones = div.n_zones();
    let mut values = vec![S::zero(); interzonal.len() * j_zones];
    for (r, &k) in interzonal.iter().enumerate() {
        let prow = ptdf.row(k);
        let out = &mut values[r * j_zones..(r + 1) * j_zones];
        for (bus, p) in prow.iter().enumerate() {
            if *p != S::zero() {
                let j = div.zone_of(bus);
                // GSK is zone-sparse: only the bus's own zone column is set.
                out[j] = out[j] + *p * gsk.get(bus, j);
            }
        }
    }
    Ok(ZonalPtdf {
        values,
        interzonal,
        n_zones: j_zones,
    })
}
