//! Offer construction and flow-based auction clearing.
//!
//! Offers follow the standard day-ahead recipe: every conventional
//! generator sells its full capability at its (constant) marginal cost,
//! wind is sold at price zero so it always clears first, and each nodal
//! load bids inelastically at a common demand price that exceeds every
//! production cost. Clearing maximizes welfare over acceptance fractions
//! `A in [0,1]^N` subject to a global energy balance and two-sided limits
//! on inter-zonal line flows.
//!
//! Multi-zone runs are two-stage: a bootstrap pass constrains nodal-PTDF
//! flows directly and its dispatch profile seeds the GSK; the main pass
//! then clears against the zonal PTDF.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dcflow::{DcflowError, GskMatrix, PtdfMatrix, ZonalPtdf};
use crate::network::{BusIdx, Network, ZoneDivision};
use crate::qpsolve::{
    solve_concave_qp_with, QpError, QpProblem, QpSolution, QpStatus,
};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("demand price {demand_price} does not exceed the highest marginal cost {max_cost}")]
    DemandPriceTooLow { demand_price: f64, max_cost: f64 },
    #[error("wind injection references unknown bus id {0}")]
    UnknownWindBus(u64),
    #[error("offer {id}: {msg}")]
    BadOffer { id: usize, msg: String },
    #[error("flow constraint for branch {branch} has {got} coefficients, expected {expected}")]
    RowLength {
        branch: usize,
        expected: usize,
        got: usize,
    },
    #[error("bootstrap requires at least two zones")]
    SingleZoneBootstrap,
    #[error("multi-zone clearing requires a GSK")]
    MissingGsk,
    #[error("{stage}: problem is infeasible")]
    Infeasible { stage: &'static str },
    #[error("{stage}: solver stopped after {iterations} iterations without a certificate")]
    IterationLimit {
        stage: &'static str,
        iterations: usize,
    },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Dcflow(#[from] DcflowError),
}

/// One market offer. Positive volume sells, negative volume buys; the price
/// ramps linearly from `p0` at zero acceptance to `p1` at full acceptance.
#[derive(Debug, Clone, PartialEq)]
pub struct Offer<S> {
    pub id: usize,
    pub bus: BusIdx,
    /// Traded volume in MW; `> 0` sell, `< 0` buy, never zero.
    pub q: S,
    pub p0: S,
    pub p1: S,
}

impl<S: Scalar> Offer<S> {
    pub fn is_sell(&self) -> bool {
        self.q > S::zero()
    }

    /// Marginal price at acceptance `a`.
    pub fn price_at(&self, a: S) -> S {
        self.p0 + (self.p1 - self.p0) * a
    }
}

#[derive(Debug, Clone)]
pub struct OfferBook<S> {
    pub offers: Vec<Offer<S>>,
    pub demand_price: S,
}

impl<S: Scalar> OfferBook<S> {
    pub fn len(&self) -> usize {
        self.offers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offers.is_empty()
    }

    /// CSV export `id,bus,zone,q,p0,p1` (zone derived from the division).
    pub fn to_csv(&self, net: &Network<S>, div: &ZoneDivision) -> String {
        let mut out = String::from("id,bus,zone,q,p0,p1\n");
        for o in &self.offers {
            out.push_str(&format!(
                "{},{},{},{:.3},{:.2},{:.2}\n",
                o.id,
                net.bus_id(o.bus),
                div.label(div.zone_of(o.bus)),
                o.q,
                o.p0,
                o.p1
            ));
        }
        out
    }
}

/// Builds the offer book for a case: one constant-price sell per
/// conventional generator, one zero-price sell per wind entry, one buy at
/// the common demand price per loaded bus. Zero-volume entries are skipped.
pub fn build_offer_book<S: Scalar>(
    net: &Network<S>,
    wind: &BTreeMap<u64, S>,
    demand_price: S,
) -> Result<OfferBook<S>, MarketError> {
    let max_cost = net
        .generators()
        .iter()
        .map(|g| g.marginal_cost)
        .fold(S::zero(), S::max);
    if !net.generators().is_empty() && demand_price <= max_cost {
        return Err(MarketError::DemandPriceTooLow {
            demand_price: demand_price.to_f64_lossy(),
            max_cost: max_cost.to_f64_lossy(),
        });
    }
    let mut offers = Vec::new();
    let mut push = |bus: BusIdx, q: S, p: S| {
        offers.push(Offer {
            id: offers.len(),
            bus,
            q,
            p0: p,
            p1: p,
        });
    };
    for g in net.generators() {
        if g.p_max > S::zero() {
            push(g.bus, g.p_max, g.marginal_cost);
        }
    }
    for (&bus_id, &mw) in wind {
        let bus = net
            .bus_index(bus_id)
            .ok_or(MarketError::UnknownWindBus(bus_id))?;
        if mw > S::zero() {
            push(bus, mw, S::zero());
        }
    }
    for (bus, b) in net.buses().iter().enumerate() {
        if b.load > S::zero() {
            push(bus, -b.load, demand_price);
        }
    }
    Ok(OfferBook {
        offers,
        demand_price,
    })
}

/// One two-sided flow limit expressed over offer acceptances.
#[derive(Debug, Clone)]
pub struct FlowConstraint<S> {
    /// Network branch index this limit belongs to.
    pub branch: usize,
    /// Flow on the branch per unit acceptance of each offer.
    pub coeffs: Vec<S>,
    pub capacity: S,
}

/// Assembled clearing problem: a concave QP over acceptances.
#[derive(Debug, Clone)]
pub struct CouplingProblem<S> {
    pub qp: QpProblem<S>,
    /// Branch index per inequality row of `qp`.
    pub constrained_branches: Vec<usize>,
    pub n_offers: usize,
}

/// Expands offers into the welfare QP: maximize
/// `sum_n (-q_n p0_n A_n - q_n (p1_n - p0_n)/2 A_n^2)` subject to the
/// global balance `sum_n q_n A_n = 0`, the flow limits and `A in [0,1]`.
pub fn assemble_problem<S: Scalar>(
    book: &OfferBook<S>,
    constraints: &[FlowConstraint<S>],
) -> Result<CouplingProblem<S>, MarketError> {
    let n = book.len();
    let half = S::c(0.5);
    let mut hessian = Vec::with_capacity(n);
    let mut linear = Vec::with_capacity(n);
    let mut balance = Vec::with_capacity(n);
    for o in &book.offers {
        if o.q == S::zero() {
            return Err(MarketError::BadOffer {
                id: o.id,
                msg: "zero volume".into(),
            });
        }
        let slope_ok = if o.is_sell() { o.p1 >= o.p0 } else { o.p1 <= o.p0 };
        if !slope_ok {
            return Err(MarketError::BadOffer {
                id: o.id,
                msg: format!(
                    "price slope violates the {} convention (p0 {}, p1 {})",
                    if o.is_sell() { "sell" } else { "buy" },
                    o.p0,
                    o.p1
                ),
            });
        }
        hessian.push(-o.q * (o.p1 - o.p0) * half);
        linear.push(-o.q * o.p0);
        balance.push(o.q);
    }
    let mut qp = QpProblem::boxed(hessian, linear, vec![(S::zero(), S::one()); n]);
    if n > 0 {
        qp.eq_rows.push(balance);
        qp.eq_rhs.push(S::zero());
    }
    let mut constrained_branches = Vec::with_capacity(constraints.len());
    for c in constraints {
        if c.coeffs.len() != n {
            return Err(MarketError::RowLength {
                branch: c.branch,
                expected: n,
                got: c.coeffs.len(),
            });
        }
        qp.ineq_rows.push(c.coeffs.clone());
        qp.ineq_lower.push(-c.capacity);
        qp.ineq_upper.push(c.capacity);
        constrained_branches.push(c.branch);
    }
    Ok(CouplingProblem {
        qp,
        constrained_branches,
        n_offers: n,
    })
}

/// Solver tolerances threaded through the clearing stages.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions<S> {
    pub feasibility: S,
    pub stationarity: S,
    pub max_iter: usize,
}

impl<S: Scalar> Default for SolveOptions<S> {
    fn default() -> Self {
        SolveOptions {
            feasibility: S::c(1e-6),
            stationarity: S::c(1e-6),
            max_iter: 10_000,
        }
    }
}

fn run_qp<S: Scalar>(
    problem: &CouplingProblem<S>,
    opts: &SolveOptions<S>,
    stage: &'static str,
) -> Result<QpSolution<S>, MarketError> {
    let sol = solve_concave_qp_with(
        &problem.qp,
        opts.feasibility,
        opts.stationarity,
        opts.max_iter,
    )?;
    match sol.status {
        QpStatus::Optimal => Ok(sol),
        QpStatus::Infeasible => Err(MarketError::Infeasible { stage }),
        QpStatus::IterationLimit => Err(MarketError::IterationLimit {
            stage,
            iterations: sol.iterations,
        }),
    }
}

fn nodal_injections<S: Scalar>(net: &Network<S>, book: &OfferBook<S>, acceptance: &[S]) -> Vec<S> {
    let mut inj = vec![S::zero(); net.n_buses()];
    for (o, a) in book.offers.iter().zip(acceptance) {
        inj[o.bus] = inj[o.bus] + o.q * *a;
    }
    inj
}

/// Flow limits for the bootstrap stage: nodal PTDF rows over the capped
/// inter-zonal branches, composed with the offer-to-bus incidence.
pub fn nodal_flow_constraints<S: Scalar>(
    net: &Network<S>,
    div: &ZoneDivision,
    ptdf: &PtdfMatrix<S>,
    book: &OfferBook<S>,
) -> Vec<FlowConstraint<S>> {
    net.branches()
        .iter()
        .enumerate()
        .filter(|(_, br)| div.zone_of(br.from) != div.zone_of(br.to))
        .filter_map(|(k, br)| br.capacity.map(|cap| (k, cap)))
        .map(|(k, cap)| FlowConstraint {
            branch: k,
            coeffs: book
                .offers
                .iter()
                .map(|o| ptdf.get(k, o.bus) * o.q)
                .collect(),
            capacity: cap,
        })
        .collect()
}

/// Flow limits for the zonal stage: zonal PTDF rows over the capped
/// inter-zonal branches, composed with offer-to-zone aggregation.
pub fn zonal_flow_constraints<S: Scalar>(
    net: &Network<S>,
    div: &ZoneDivision,
    zptdf: &ZonalPtdf<S>,
    book: &OfferBook<S>,
) -> Vec<FlowConstraint<S>> {
    zptdf
        .interzonal
        .iter()
        .enumerate()
        .filter_map(|(r, &k)| net.branches()[k].capacity.map(|cap| (r, k, cap)))
        .map(|(r, k, cap)| FlowConstraint {
            branch: k,
            coeffs: book
                .offers
                .iter()
                .map(|o| zptdf.get(r, div.zone_of(o.bus)) * o.q)
                .collect(),
            capacity: cap,
        })
        .collect()
}

/// First-stage clearing without a GSK: flows are constrained through the
/// nodal PTDF directly, and the resulting bus-level dispatch profile is
/// returned as the GSK seed.
pub fn bootstrap_run<S: Scalar>(
    net: &Network<S>,
    div: &ZoneDivision,
    book: &OfferBook<S>,
    ptdf: &PtdfMatrix<S>,
    opts: &SolveOptions<S>,
) -> Result<Vec<S>, MarketError> {
    if div.n_zones() < 2 {
        return Err(MarketError::SingleZoneBootstrap);
    }
    let constraints = nodal_flow_constraints(net, div, ptdf, book);
    let problem = assemble_problem(book, &constraints)?;
    let sol = run_qp(&problem, opts, "bootstrap")?;
    Ok(nodal_injections(net, book, &sol.x))
}

/// Multipliers attached to the clearing solution.
#[derive(Debug, Clone)]
pub struct CouplingDuals<S> {
    /// Multiplier of the global balance constraint.
    pub balance: S,
    /// One signed multiplier per constrained branch (positive: the
    /// from->to direction limit binds).
    pub flows: Vec<(usize, S)>,
}

/// Cleared market state.
#[derive(Debug, Clone)]
pub struct CouplingSolution<S> {
    /// Acceptance per offer id, clamped to `[0, 1]`.
    pub acceptance: Vec<S>,
    /// Net position per zone (sells positive), division zone order.
    pub zonal_net: Vec<S>,
    /// Inter-zonal branch indices, network branch order.
    pub interzonal: Vec<usize>,
    /// Flow per inter-zonal branch, aligned with `interzonal`.
    pub interzonal_flows: Vec<S>,
    /// Bus-level net injections of the accepted offers.
    pub nodal_injections: Vec<S>,
    /// Cleared welfare objective.
    pub objective: S,
    pub duals: CouplingDuals<S>,
    /// Max per-zone violation of the border-flow balance identity.
    pub cut_residual: S,
    pub iterations: usize,
}

/// Clears the zonal market. For a single zone only the balance and the
/// acceptance box apply (no flow model needed); otherwise flows are
/// constrained through `PTDF * GSK` and the per-zone border-flow identity
/// is re-checked on the way out.
pub fn solve_coupling<S: Scalar>(
    net: &Network<S>,
    div: &ZoneDivision,
    book: &OfferBook<S>,
    flow_model: Option<(&PtdfMatrix<S>, &GskMatrix<S>)>,
    opts: &SolveOptions<S>,
) -> Result<CouplingSolution<S>, MarketError> {
    let j = div.n_zones();
    let (zptdf, constraints) = if j >= 2 {
        let (ptdf, gsk) = flow_model.ok_or(MarketError::MissingGsk)?;
        let zptdf = crate::dcflow::zonal_ptdf(ptdf, gsk, net, div)?;
        let constraints = zonal_flow_constraints(net, div, &zptdf, book);
        (Some(zptdf), constraints)
    } else {
        (None, Vec::new())
    };
    let problem = assemble_problem(book, &constraints)?;
    let sol = run_qp(&problem, opts, "coupling")?;

    let mut zonal_net = vec![S::zero(); j];
    for (o, a) in book.offers.iter().zip(&sol.x) {
        let z = div.zone_of(o.bus);
        zonal_net[z] = zonal_net[z] + o.q * *a;
    }
    let (interzonal, interzonal_flows) = match &zptdf {
        Some(zptdf) => (zptdf.interzonal.clone(), zptdf.apply(&zonal_net)),
        None => (Vec::new(), Vec::new()),
    };

    // Border-flow identity: the signed border flows of each zone must add
    // up to its net position.
    let mut cut_residual = S::zero();
    for zone in 0..j {
        let mut out = S::zero();
        for (r, &k) in interzonal.iter().enumerate() {
            let br = &net.branches()[k];
            if div.zone_of(br.from) == zone {
                out = out + interzonal_flows[r];
            } else if div.zone_of(br.to) == zone {
                out = out - interzonal_flows[r];
            }
        }
        cut_residual = cut_residual.max((out - zonal_net[zone]).abs());
    }
    if cut_residual > S::c(1e-6) {
        log::warn!(
            "border-flow identity residual {:.3e} exceeds 1e-6 MW",
            cut_residual.to_f64_lossy()
        );
    }
    let duals = CouplingDuals {
        balance: sol.eq_duals.first().copied().unwrap_or_else(S::zero),
        flows: problem
            .constrained_branches
            .iter()
            .copied()
            .zip(sol.ineq_duals.iter().copied())
            .collect(),
    };
    Ok(CouplingSolution {
        nodal_injections: nodal_injections(net, book, &sol.x),
        acceptance: sol.x,
        zonal_net,
        interzonal,
        interzonal_flows,
        objective: sol.objective,
        duals,
        cut_residual,
        iterations: sol.iterations,
    })
}
