//! Shared fixtures and independent oracles for the integration suites.
//!
//! Random fixtures are radial (tree) networks with zones that are connected
//! subtrees and with volumes, prices and ratings drawn from grids chosen so
//! the exact clearing optimum lands on the 0.01 acceptance grid; the
//! exhaustive grid-search oracle can therefore match the solver two-sided.

use std::collections::BTreeMap;

use fbmc_core::dcflow::{build_gsk, build_nodal_ptdf, GskMatrix, PtdfMatrix};
use fbmc_core::market::{
    bootstrap_run, build_offer_book, solve_coupling, CouplingSolution, OfferBook, SolveOptions,
};
use fbmc_core::network::{Bus, RawBranch, RawGenerator, ZoneDivision};
use fbmc_core::Network;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub struct Fixture {
    pub net: Network,
    pub div: ZoneDivision,
    pub wind: BTreeMap<u64, f64>,
    pub seed: u64,
}

const VOLUMES: [f64; 4] = [5.0, 10.0, 25.0, 50.0];
const COSTS: [f64; 8] = [4.0, 6.0, 9.0, 11.0, 14.0, 17.0, 22.0, 26.0];

/// Deterministic random fixture with at most `max_offers` offers.
pub fn random_fixture(seed: u64, max_offers: usize) -> Fixture {
    let mut rng = StdRng::seed_from_u64(seed);
    let n_buses = rng.gen_range(2..=5usize);

    // Random tree: each bus joins an earlier one.
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 1..n_buses {
        let parent = rng.gen_range(0..i);
        edges.push((parent, i));
    }
    let xs: Vec<f64> = (0..edges.len())
        .map(|_| [0.05, 0.1, 0.2][rng.gen_range(0..3)])
        .collect();

    // Zones: connected components after removing cut edges.
    let j = rng.gen_range(1..=3usize.min(n_buses));
    let mut cut = vec![false; edges.len()];
    if j >= 2 {
        let mut idx: Vec<usize> = (0..edges.len()).collect();
        idx.shuffle(&mut rng);
        for &e in idx.iter().take(j - 1) {
            cut[e] = true;
        }
    }
    let mut comp = vec![usize::MAX; n_buses];
    let mut next_comp = 0;
    for start in 0..n_buses {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next_comp;
        while let Some(u) = stack.pop() {
            for (e, &(a, b)) in edges.iter().enumerate() {
                if cut[e] {
                    continue;
                }
                let other = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if comp[other] == usize::MAX {
                    comp[other] = next_comp;
                    stack.push(other);
                }
            }
        }
        next_comp += 1;
    }

    // Offers: distinct-bus buys (loads), sells (generators or wind).
    let n_offers = max_offers.max(2);
    let n_buys = rng.gen_range(1..=(n_offers - 1).min(n_buses));
    let n_sells = n_offers - n_buys;

    let mut bus_order: Vec<usize> = (0..n_buses).collect();
    bus_order.shuffle(&mut rng);
    let mut loads = vec![0.0; n_buses];
    for &b in bus_order.iter().take(n_buys) {
        loads[b] = VOLUMES[rng.gen_range(0..VOLUMES.len())];
    }

    let mut costs = COSTS.to_vec();
    costs.shuffle(&mut rng);
    let mut gens = Vec::new();
    let mut wind: BTreeMap<u64, f64> = BTreeMap::new();
    for s in 0..n_sells {
        let bus = rng.gen_range(0..n_buses);
        let vol = VOLUMES[rng.gen_range(0..VOLUMES.len())];
        let bus_id = bus as u64 + 1;
        if rng.gen_bool(0.25) && !wind.contains_key(&bus_id) {
            wind.insert(bus_id, vol);
        } else {
            gens.push(RawGenerator {
                bus_id,
                p_max: vol,
                marginal_cost: costs[s % costs.len()],
            });
        }
    }

    // At most one capped border branch keeps the binding optimum on the
    // 0.01 grid (see module docs); everything else is unlimited. Small
    // integer ratings relative to the 5-50 MW volumes bind often.
    let mut caps: Vec<Option<f64>> = vec![None; edges.len()];
    if j >= 2 && rng.gen_bool(0.8) {
        let cut_edges: Vec<usize> = (0..edges.len()).filter(|&e| cut[e]).collect();
        let e = cut_edges[rng.gen_range(0..cut_edges.len())];
        caps[e] = Some(rng.gen_range(2..=12) as f64);
    }

    let buses: Vec<Bus<f64>> = (0..n_buses)
        .map(|i| Bus {
            id: i as u64 + 1,
            load: loads[i],
        })
        .collect();
    let branches: Vec<RawBranch<f64>> = edges
        .iter()
        .enumerate()
        .map(|(e, &(a, b))| RawBranch {
            from_id: a as u64 + 1,
            to_id: b as u64 + 1,
            reactance: xs[e],
            capacity: caps[e],
        })
        .collect();
    let net = Network::new(buses, branches, gens, 100.0).unwrap();
    let div = ZoneDivision::from_records(
        (0..n_buses).map(|i| (i as u64 + 1, format!("Z{}", comp[i]))),
        &net,
    )
    .unwrap();
    Fixture {
        net,
        div,
        wind,
        seed,
    }
}

/// The deterministic fixture set used across the acceptance criteria:
/// 24 fixtures, at most 4 offers each (exhaustive oracle stays tractable).
pub fn fixture_set() -> Vec<Fixture> {
    (0..24u64)
        .map(|i| {
            let max_offers = if i % 8 == 5 {
                4
            } else if i % 3 == 0 {
                2
            } else {
                3
            };
            random_fixture(1000 + i, max_offers)
        })
        .collect()
}

pub fn default_opts() -> SolveOptions<f64> {
    SolveOptions::default()
}

pub struct Cleared {
    pub book: OfferBook<f64>,
    pub ptdf: PtdfMatrix<f64>,
    pub gsk: Option<GskMatrix<f64>>,
    pub sol: CouplingSolution<f64>,
}

/// Full two-stage clearing of a fixture (bootstrap + GSK for multi-zone).
pub fn clear(f: &Fixture) -> Cleared {
    clear_with(&f.net, &f.div, &f.wind)
}

pub fn clear_with(net: &Network, div: &ZoneDivision, wind: &BTreeMap<u64, f64>) -> Cleared {
    let opts = default_opts();
    let book = build_offer_book(net, wind, 2000.0).unwrap();
    let ptdf = build_nodal_ptdf(net, 0).unwrap();
    let (gsk, sol) = if div.n_zones() >= 2 {
        let inj = bootstrap_run(net, div, &book, &ptdf, &opts).unwrap();
        let gsk = build_gsk(net, div, &inj).unwrap();
        let sol = solve_coupling(net, div, &book, Some((&ptdf, &gsk)), &opts).unwrap();
        (Some(gsk), sol)
    } else {
        let sol = solve_coupling(net, div, &book, None, &opts).unwrap();
        (None, sol)
    };
    Cleared {
        book,
        ptdf,
        gsk,
        sol,
    }
}

/// Rebuilds a network with every finite rating scaled by `factor`
/// (`None` drops all ratings).
pub fn with_capacity_scale(net: &Network, factor: Option<f64>) -> Network {
    let buses: Vec<Bus<f64>> = net.buses().to_vec();
    let branches: Vec<RawBranch<f64>> = net
        .branches()
        .iter()
        .map(|br| RawBranch {
            from_id: net.bus_id(br.from),
            to_id: net.bus_id(br.to),
            reactance: br.reactance,
            capacity: factor.and_then(|f| br.capacity.map(|c| c * f)),
        })
        .collect();
    let gens: Vec<RawGenerator<f64>> = net
        .generators()
        .iter()
        .map(|g| RawGenerator {
            bus_id: net.bus_id(g.bus),
            p_max: g.p_max,
            marginal_cost: g.marginal_cost,
        })
        .collect();
    Network::new(buses, branches, gens, net.base_mva()).unwrap()
}

/// Test-side reconstruction of the zonal flow rows (coefficients over
/// offers plus the rating), independent of the library's assembly path.
pub fn oracle_flow_rows(
    net: &Network,
    div: &ZoneDivision,
    ptdf: &PtdfMatrix<f64>,
    gsk: Option<&GskMatrix<f64>>,
    book: &OfferBook<f64>,
) -> Vec<(Vec<f64>, f64)> {
    let Some(gsk) = gsk else { return Vec::new() };
    let j = div.n_zones();
    let mut rows = Vec::new();
    for (k, br) in net.branches().iter().enumerate() {
        if div.zone_of(br.from) == div.zone_of(br.to) {
            continue;
        }
        let Some(cap) = br.capacity else { continue };
        let mut zrow = vec![0.0; j];
        for b in 0..net.n_buses() {
            let z = div.zone_of(b);
            zrow[z] += ptdf.get(k, b) * gsk.get(b, z);
        }
        let coeffs: Vec<f64> = book
            .offers
            .iter()
            .map(|o| zrow[div.zone_of(o.bus)] * o.q)
            .collect();
        rows.push((coeffs, cap));
    }
    rows
}

/// Exhaustive grid search over acceptances. Points are repaired onto the
/// balance hyperplane by scaling the sells, kept when the imbalance after
/// repair is at most 0.5 MW and every flow row is within its rating, and
/// scored by the clearing objective. Returns the best objective found.
pub fn grid_oracle(book: &OfferBook<f64>, rows: &[(Vec<f64>, f64)], step: f64) -> f64 {
    let n = book.len();
    if n == 0 {
        return 0.0;
    }
    let levels = (1.0 / step).round() as usize;
    let q: Vec<f64> = book.offers.iter().map(|o| o.q).collect();
    let p0: Vec<f64> = book.offers.iter().map(|o| o.p0).collect();
    let quad: Vec<f64> = book
        .offers
        .iter()
        .map(|o| -o.q * (o.p1 - o.p0) * 0.5)
        .collect();
    let is_sell: Vec<bool> = book.offers.iter().map(|o| o.q > 0.0).collect();

    let mut idx = vec![0usize; n];
    let mut a = vec![0.0f64; n];
    let mut best = f64::NEG_INFINITY;
    loop {
        for (i, &v) in idx.iter().enumerate() {
            a[i] = v as f64 * step;
        }
        let mut sell_sum = 0.0;
        let mut buy_sum = 0.0;
        for i in 0..n {
            if is_sell[i] {
                sell_sum += q[i] * a[i];
            } else {
                buy_sum += q[i] * a[i];
            }
        }
        let mut ok = true;
        let imbalance = sell_sum + buy_sum;
        if imbalance.abs() > 1e-12 {
            // Repair by scaling the sells to absorb the buy volume.
            if sell_sum > 0.0 {
                let t = -buy_sum / sell_sum;
                if t <= 1.0 + 1e-12 {
                    for i in 0..n {
                        if is_sell[i] {
                            a[i] *= t;
                        }
                    }
                } else {
                    ok = false;
                }
            } else {
                ok = false;
            }
        }
        if ok {
            let balance: f64 = (0..n).map(|i| q[i] * a[i]).sum();
            ok = balance.abs() <= 0.5;
        }
        if ok {
            for (coeffs, cap) in rows {
                let flow: f64 = coeffs.iter().zip(&a).map(|(c, x)| c * x).sum();
                if flow.abs() > cap + 1e-9 {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let mut obj = 0.0;
            for i in 0..n {
                obj += -q[i] * a[i] * p0[i] + quad[i] * a[i] * a[i];
            }
            if obj > best {
                best = obj;
            }
        }
        // Odometer.
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            idx[k] += 1;
            if idx[k] <= levels {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Merit-order acceptance oracle: buys clear in full, sells fill in
/// ascending price order until the demand is covered.
pub fn merit_order_acceptance(book: &OfferBook<f64>) -> Vec<f64> {
    let demand: f64 = book
        .offers
        .iter()
        .filter(|o| o.q < 0.0)
        .map(|o| -o.q)
        .sum();
    let mut sells: Vec<usize> = (0..book.len()).filter(|&i| book.offers[i].q > 0.0).collect();
    sells.sort_by(|&x, &y| {
        book.offers[x]
            .p0
            .total_cmp(&book.offers[y].p0)
            .then(x.cmp(&y))
    });
    let mut acc = vec![0.0; book.len()];
    for o in &book.offers {
        if o.q < 0.0 {
            acc[o.id] = 1.0;
        }
    }
    let mut remaining = demand;
    for i in sells {
        if remaining <= 0.0 {
            break;
        }
        let take = book.offers[i].q.min(remaining);
        acc[i] = take / book.offers[i].q;
        remaining -= take;
    }
    acc
}

pub fn merit_order_objective(book: &OfferBook<f64>) -> f64 {
    merit_order_acceptance(book)
        .iter()
        .zip(&book.offers)
        .map(|(a, o)| -o.q * a * o.p0)
        .sum()
}

/// The marginal (highest) price among merit-order-accepted sells.
pub fn merit_order_marginal_price(book: &OfferBook<f64>) -> f64 {
    merit_order_acceptance(book)
        .iter()
        .zip(&book.offers)
        .filter(|(a, o)| o.q > 0.0 && **a > 1e-9)
        .map(|(_, o)| o.p0)
        .fold(0.0, f64::max)
}

pub const POLISH_BUSES: usize = 2383;
pub const POLISH_BRANCHES: usize = 2896;
pub const POLISH_GENS: usize = 327;

/// Looks for the real MATPOWER winter-peak case (not redistributable with
/// this repository): `$FBMC_CASE2383` first, then `fixtures/case2383wp.m`
/// at the crate and workspace roots.
pub fn real_polish_case() -> Option<(String, String)> {
    let mut candidates: Vec<std::path::PathBuf> = Vec::new();
    if let Ok(p) = std::env::var("FBMC_CASE2383") {
        candidates.push(p.into());
    }
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    candidates.push(manifest.join("tests/fixtures/case2383wp.m"));
    candidates.push(manifest.join("../../fixtures/case2383wp.m"));
    for c in candidates {
        if let Ok(text) = std::fs::read_to_string(&c) {
            return Some((text, c.display().to_string()));
        }
    }
    None
}

/// Deterministic synthetic case with the Polish winter-peak dimensions:
/// 2383 buses, 2896 branches (a ring plus 513 chords), 327 in-service
/// generators with distinct linear costs, ~24 GW of load against ~28 GW of
/// capability. Emitted as MATPOWER text so parsing is exercised at scale.
pub fn synthetic_polish_case() -> String {
    let mut rng = StdRng::seed_from_u64(0x706f_6c69_7368);
    let n = POLISH_BUSES;

    // Loads: three of every four buses carry 8-19 MW.
    let loads: Vec<f64> = (1..=n)
        .map(|i| {
            if i % 4 == 0 {
                0.0
            } else {
                rng.gen_range(8.0..19.0f64).round()
            }
        })
        .collect();

    // Generators at 327 distinct buses; costs are distinct integers so the
    // merit order is unambiguous.
    let mut gen_buses: Vec<usize> = (1..=n).collect();
    gen_buses.shuffle(&mut rng);
    gen_buses.truncate(POLISH_GENS);
    gen_buses.sort_unstable();
    let mut cost_perm: Vec<usize> = (0..POLISH_GENS).collect();
    cost_perm.shuffle(&mut rng);
    let gens: Vec<(usize, f64, f64)> = gen_buses
        .iter()
        .enumerate()
        .map(|(i, &bus)| {
            let p_max = rng.gen_range(40..=130) as f64;
            let cost = 20.0 + cost_perm[i] as f64;
            (bus, p_max, cost)
        })
        .collect();

    // Branches: ring backbone plus chords, every branch in service.
    let mut branches: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(POLISH_BRANCHES);
    let rate = |rng: &mut StdRng| -> f64 {
        if rng.gen_bool(0.25) {
            rng.gen_range(100..=900) as f64
        } else {
            0.0
        }
    };
    for i in 1..=n {
        let to = if i == n { 1 } else { i + 1 };
        let x = (rng.gen_range(0.02..0.30f64) * 1e4).round() / 1e4;
        let r = rate(&mut rng);
        branches.push((i, to, x, r));
    }
    while branches.len() < POLISH_BRANCHES {
        let a = rng.gen_range(1..=n);
        let d = rng.gen_range(3..=300);
        let b = ((a - 1 + d) % n) + 1;
        let x = (rng.gen_range(0.02..0.30f64) * 1e4).round() / 1e4;
        let r = rate(&mut rng);
        branches.push((a, b, x, r));
    }

    let mut s = String::with_capacity(400_000);
    s.push_str("function mpc = synthetic2383\n");
    s.push_str("% synthetic grid with winter-peak dimensions\n");
    s.push_str("mpc.version = '2';\n");
    s.push_str("mpc.baseMVA = 100;\n");
    s.push_str("mpc.bus = [\n");
    for (i, load) in loads.iter().enumerate() {
        s.push_str(&format!(
            "{} 1 {:.3} 0 0 0 1 1 0 110 1 1.1 0.9;\n",
            i + 1,
            load
        ));
    }
    s.push_str("];\n");
    s.push_str("mpc.gen = [\n");
    for (bus, p_max, _) in &gens {
        s.push_str(&format!("{bus} 0 0 0 0 1 100 1 {p_max:.1} 0;\n"));
    }
    s.push_str("];\n");
    s.push_str("mpc.gencost = [\n");
    for (_, _, cost) in &gens {
        s.push_str(&format!("2 0 0 2 {cost:.2} 0;\n"));
    }
    s.push_str("];\n");
    s.push_str("mpc.branch = [\n");
    for (f, t, x, r) in &branches {
        s.push_str(&format!("{f} {t} 0.01 {x:.4} 0 {r:.1} 0 0 0 0 1 -360 360;\n"));
    }
    s.push_str("];\n");
    s
}

/// Contiguous bisection of the synthetic (or real) case bus ids.
pub fn bisection_csv(net: &Network) -> String {
    let mut ids: Vec<u64> = net.buses().iter().map(|b| b.id).collect();
    ids.sort_unstable();
    let half = ids.len() / 2;
    let mut out = String::from("bus_id,zone\n");
    for (i, id) in ids.iter().enumerate() {
        out.push_str(&format!(
            "{},{}\n",
            id,
            if i < half { "west" } else { "east" }
        ));
    }
    out
}

/// Deterministic pseudo-random balanced injection vector.
pub fn balanced_injections(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let mean = u.iter().sum::<f64>() / n as f64;
    for v in u.iter_mut() {
        *v -= mean;
    }
    u
}
