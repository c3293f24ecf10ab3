//! Settlement of a cleared market: zonal clearing prices, social welfare
//! with congestion rent, and the redispatch-cost upper bound.

use std::collections::BTreeMap;

use crate::dcflow::{dc_power_flow, DcflowError};
use crate::market::{CouplingSolution, OfferBook};
use crate::network::{BusIdx, Network, ZoneDivision, ZoneIdx};
use crate::scalar::Scalar;
use crate::textfmt::{fmt_money, fmt_mw};

/// Acceptance above which an offer counts as (partially) accepted.
const ACCEPT_EPS: f64 = 1e-6;
/// Shortfall below which a buy offer counts as fully satisfied.
const SATISFIED_EPS: f64 = 1e-6;
/// Net zone-pair flow below which no import relation is assumed.
const FLOW_EPS: f64 = 1e-6;

/// Net flows aggregated per unordered zone pair, keyed `(a, b)` with
/// `a < b` and positive values flowing `a -> b`.
pub fn zone_pair_flows<S: Scalar>(
    net: &Network<S>,
    div: &ZoneDivision,
    sol: &CouplingSolution<S>,
) -> BTreeMap<(ZoneIdx, ZoneIdx), S> {
    let mut pairs = BTreeMap::new();
    for (r, &k) in sol.interzonal.iter().enumerate() {
        let br = &net.branches()[k];
        let (zf, zt) = (div.zone_of(br.from), div.zone_of(br.to));
        let (key, signed) = if zf < zt {
            ((zf, zt), sol.interzonal_flows[r])
        } else {
            ((zt, zf), -sol.interzonal_flows[r])
        };
        let e = pairs.entry(key).or_insert_with(S::zero);
        *e = *e + signed;
    }
    pairs
}

/// Zonal market clearing prices.
///
/// Rule (i): when every buy offer of a zone cleared in full, the price is
/// the highest accepted sell price among the zone's own offers and the
/// offers of zones exporting to it over a direct border. Rule (ii): any
/// curtailed buy pins the price at the common demand price. A zone with
/// satisfied (empty) demand and nothing accepted or imported prices at 0.
pub fn clearing_prices<S: Scalar>(
    sol: &CouplingSolution<S>,
    book: &OfferBook<S>,
    net: &Network<S>,
    div: &ZoneDivision,
    demand_price: S,
) -> Vec<S> {
    let j = div.n_zones();
    let accept = S::c(ACCEPT_EPS);
    let satisfied = S::one() - S::c(SATISFIED_EPS);

    let mut demand_met = vec![true; j];
    let mut accepted_sell_max = vec![None::<S>; j];
    for (o, &a) in book.offers.iter().zip(&sol.acceptance) {
        let z = div.zone_of(o.bus);
        if o.is_sell() {
            if a > accept {
                let price = o.price_at(a);
                accepted_sell_max[z] = Some(match accepted_sell_max[z] {
                    Some(p) => p.max(price),
                    None => price,
                });
            }
        } else if a < satisfied {
            demand_met[z] = false;
        }
    }

    let pair_flows = zone_pair_flows(net, div, sol);
    let flow_eps = S::c(FLOW_EPS);
    (0..j)
        .map(|z| {
            if !demand_met[z] {
                return demand_price;
            }
            let mut best = accepted_sell_max[z];
            for (&(a, b), &f) in &pair_flows {
                let exporter = if b == z && f > flow_eps {
                    Some(a)
                } else if a == z && f < -flow_eps {
                    Some(b)
                } else {
                    None
                };
                if let Some(e) = exporter {
                    if let Some(p) = accepted_sell_max[e] {
                        best = Some(match best {
                            Some(cur) => cur.max(p),
                            None => p,
                        });
                    }
                }
            }
            match best {
                Some(p) => p,
                None => {
                    log::warn!(
                        "zone '{}' trades nothing and imports nothing; clearing price set to 0",
                        div.label(z)
                    );
                    S::zero()
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Welfare<S> {
    pub sw: S,
    pub congestion_rent: S,
}

/// Social welfare of the cleared state: zonal trade surpluses valued at the
/// clearing prices plus the operator's congestion rent on zone borders,
/// each border priced importer-minus-exporter.
pub fn social_welfare<S: Scalar>(
    sol: &CouplingSolution<S>,
    book: &OfferBook<S>,
    mcp: &[S],
    net: &Network<S>,
    div: &ZoneDivision,
) -> Welfare<S> {
    let half = S::c(0.5);
    let mut surplus = S::zero();
    for (o, &a) in book.offers.iter().zip(&sol.acceptance) {
        let z = div.zone_of(o.bus);
        let avg_price = (o.price_at(a) + o.p0) * half;
        surplus = surplus + a * o.q * (mcp[z] - avg_price);
    }
    let mut rent = S::zero();
    for (&(a, b), &f) in &zone_pair_flows(net, div, sol) {
        // f > 0 flows a -> b, so b imports: rent = (MCP_b - MCP_a) * f.
        let pair_rent = (mcp[b] - mcp[a]) * f;
        if pair_rent < -S::c(1e-6) {
            // Possible in flow-based coupling when flows run against the
            // price spread; worth surfacing but not an error.
            log::warn!(
                "negative congestion rent {} between zones '{}' and '{}'",
                pair_rent.to_f64_lossy(),
                div.label(a),
                div.label(b)
            );
        }
        rent = rent + pair_rent;
    }
    Welfare {
        sw: surplus + rent,
        congestion_rent: rent,
    }
}

/// Upper bound on the cost of relieving intra-zonal overloads: each
/// overloaded in-zone branch contributes its excess times the costliest
/// marginal cost among the zone's generators (system-wide max for a zone
/// without generators). Border branches are excluded; they are limited by
/// the market itself.
pub fn redispatch_cost<S: Scalar>(
    net: &Network<S>,
    div: &ZoneDivision,
    sol: &CouplingSolution<S>,
    slack: BusIdx,
) -> Result<S, DcflowError> {
    let flows = dc_power_flow(net, &sol.nodal_injections, slack)?;
    let system_max = net
        .generators()
        .iter()
        .map(|g| g.marginal_cost)
        .fold(S::zero(), S::max);
    let mut zone_max = vec![None::<S>; div.n_zones()];
    for g in net.generators() {
        let z = div.zone_of(g.bus);
        zone_max[z] = Some(match zone_max[z] {
            Some(m) => m.max(g.marginal_cost),
            None => g.marginal_cost,
        });
    }
    let mut cost = S::zero();
    for (k, br) in net.branches().iter().enumerate() {
        let (zf, zt) = (div.zone_of(br.from), div.zone_of(br.to));
        if zf != zt {
            continue;
        }
        let Some(cap) = br.capacity else { continue };
        let overload = flows.values[k].abs() - cap;
        if overload > S::zero() {
            let price = zone_max[zf].unwrap_or(system_max);
            cost = cost + overload * price;
        }
    }
    Ok(cost)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSummary<S> {
    pub zone: String,
    pub n_buses: usize,
    pub demand_mw: S,
    pub n_generators: usize,
    pub dispatched_mw: S,
    pub mcp: S,
}

/// One border aggregate, oriented exporter to importer.
#[derive(Debug, Clone, PartialEq)]
pub struct ZonalFlow<S> {
    pub from: String,
    pub to: String,
    pub mw: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettlementReport<S> {
    pub division: String,
    pub mcp: Vec<S>,
    pub sw: S,
    pub congestion_rent: S,
    pub redispatch_cost: S,
    pub sw_corrected: S,
    pub per_zone: Vec<ZoneSummary<S>>,
    pub zonal_flows: Vec<ZonalFlow<S>>,
}

/// Runs the full settlement of a cleared solution.
pub fn settle<S: Scalar>(
    net: &Network<S>,
    div: &ZoneDivision,
    book: &OfferBook<S>,
    sol: &CouplingSolution<S>,
    slack: BusIdx,
    division_id: &str,
) -> Result<SettlementReport<S>, DcflowError> {
    let mcp = clearing_prices(sol, book, net, div, book.demand_price);
    let welfare = social_welfare(sol, book, &mcp, net, div);
    let redispatch = redispatch_cost(net, div, sol, slack)?;

    let j = div.n_zones();
    let mut demand = vec![S::zero(); j];
    let mut n_buses = vec![0usize; j];
    for (b, bus) in net.buses().iter().enumerate() {
        let z = div.zone_of(b);
        n_buses[z] += 1;
        demand[z] = demand[z] + bus.load;
    }
    let mut n_gens = vec![0usize; j];
    for g in net.generators() {
        n_gens[div.zone_of(g.bus)] += 1;
    }
    let mut dispatched = vec![S::zero(); j];
    for (o, &a) in book.offers.iter().zip(&sol.acceptance) {
        if o.is_sell() {
            let z = div.zone_of(o.bus);
            dispatched[z] = dispatched[z] + o.q * a;
        }
    }
    let per_zone = (0..j)
        .map(|z| ZoneSummary {
            zone: div.label(z).to_string(),
            n_buses: n_buses[z],
            demand_mw: demand[z],
            n_generators: n_gens[z],
            dispatched_mw: dispatched[z],
            mcp: mcp[z],
        })
        .collect();

    let zonal_flows = zone_pair_flows(net, div, sol)
        .into_iter()
        .map(|((a, b), f)| {
            if f >= S::zero() {
                ZonalFlow {
                    from: div.label(a).to_string(),
                    to: div.label(b).to_string(),
                    mw: f,
                }
            } else {
                ZonalFlow {
                    from: div.label(b).to_string(),
                    to: div.label(a).to_string(),
                    mw: -f,
                }
            }
        })
        .collect();

    Ok(SettlementReport {
        division: division_id.to_string(),
        sw_corrected: welfare.sw - redispatch,
        mcp,
        sw: welfare.sw,
        congestion_rent: welfare.congestion_rent,
        redispatch_cost: redispatch,
        per_zone,
        zonal_flows,
    })
}

impl<S: Scalar> SettlementReport<S> {
    /// Structured-text rendering (deterministic).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("division {}\n", self.division));
        out.push_str("status feasible\n");
        out.push_str(&format!("zones {}\n", self.per_zone.len()));
        for z in &self.per_zone {
            out.push_str(&format!("mcp {} {}\n", z.zone, fmt_money(z.mcp)));
        }
        out.push_str(&format!("sw {}\n", fmt_money(self.sw)));
        out.push_str(&format!(
            "congestion_rent {}\n",
            fmt_money(self.congestion_rent)
        ));
        out.push_str(&format!(
            "redispatch_cost {}\n",
            fmt_money(self.redispatch_cost)
        ));
        out.push_str(&format!("sw_corrected {}\n", fmt_money(self.sw_corrected)));
        for f in &self.zonal_flows {
            out.push_str(&format!(
                "zonal_flow {} {} {}\n",
                f.from,
                f.to,
                fmt_mw(f.mw)
            ));
        }
        for z in &self.per_zone {
            out.push_str(&format!(
                "zone {},{},{},{},{},{}\n",
                z.zone,
                z.n_buses,
                fmt_mw(z.demand_mw),
                z.n_generators,
                fmt_mw(z.dispatched_mw),
                fmt_money(z.mcp)
            ));
        }
        out
    }

    /// Per-zone summary as CSV.
    pub fn per_zone_csv(&self) -> String {
        let mut out = String::from("zone,n_buses,demand_mw,n_generators,dispatched_mw,mcp\n");
        for z in &self.per_zone {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                z.zone,
                z.n_buses,
                fmt_mw(z.demand_mw),
                z.n_generators,
                fmt_mw(z.dispatched_mw),
                fmt_money(z.mcp)
            ));
        }
        out
    }

    /// Report stub for a division whose evaluation failed.
    pub fn infeasible_stub(division_id: &str, reason: &str) -> String {
        format!(
            "division {division_id}\nstatus infeasible\nreason {reason}\n"
        )
    }
}
