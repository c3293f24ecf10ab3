//! Self-contained solver for concave quadratic maximization over box bounds
//! with linear equality and two-sided inequality constraints.
//!
//! The problem solved is
//!
//! ```text
//!     maximize    sum_i  h_i x_i^2 + c_i x_i         (h_i <= 0)
//!     subject to  E x = b
//!                 l <= G x <= u
//!                 lo <= x <= hi                      (finite boxes)
//! ```
//!
//! Internally a primal-dual interior-point method with a Mehrotra corrector
//! runs on the slack form `G x - s = 0, s in [l, u]`; the diagonal Hessian
//! keeps the Newton systems small (one dense solve of constraint-count
//! order per iteration). The method is deterministic: no randomness, no
//! data-dependent thread scheduling.
//!
//! Sign conventions for reported multipliers (maximization form):
//! stationarity is `c + 2 h x - E'y - G'lambda + zl - zu = 0` with
//! `zl, zu >= 0`; an inequality multiplier `lambda_i` is positive when the
//! upper side binds and negative when the lower side binds.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("hessian_diag[{index}] = {value} is positive; problem is not concave")]
    NotConcave { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
}

/// Concave QP with diagonal Hessian.
#[derive(Debug, Clone)]
pub struct QpProblem<S> {
    /// Per-variable coefficient of `x^2` (all `<= 0`).
    pub hessian_diag: Vec<S>,
    /// Per-variable linear coefficient.
    pub linear: Vec<S>,
    pub eq_rows: Vec<Vec<S>>,
    pub eq_rhs: Vec<S>,
    pub ineq_rows: Vec<Vec<S>>,
    pub ineq_lower: Vec<S>,
    pub ineq_upper: Vec<S>,
    /// Per-variable `[lo, hi]`, finite.
    pub bounds: Vec<(S, S)>,
}

impl<S: Scalar> QpProblem<S> {
    /// Box-only problem; constraints can be pushed afterwards.
    pub fn boxed(hessian_diag: Vec<S>, linear: Vec<S>, bounds: Vec<(S, S)>) -> Self {
        QpProblem {
            hessian_diag,
            linear,
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            ineq_rows: Vec::new(),
            ineq_lower: Vec::new(),
            ineq_upper: Vec::new(),
            bounds,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &[S]) -> S {
        x.iter()
            .enumerate()
            .fold(S::zero(), |acc, (i, &xi)| {
                acc + self.hessian_diag[i] * xi * xi + self.linear[i] * xi
            })
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.n_vars();
        if self.hessian_diag.len() != n || self.bounds.len() != n {
            return Err(QpError::Dimension(format!(
                "vars {n}, hessian {}, bounds {}",
                self.hessian_diag.len(),
                self.bounds.len()
            )));
        }
        if self.eq_rows.len() != self.eq_rhs.len() {
            return Err(QpError::Dimension(format!(
                "eq rows {} vs rhs {}",
                self.eq_rows.len(),
                self.eq_rhs.len()
            )));
        }
        if self.ineq_rows.len() != self.ineq_lower.len()
            || self.ineq_rows.len() != self.ineq_upper.len()
        {
            return Err(QpError::Dimension(format!(
                "ineq rows {} vs bounds {}/{}",
                self.ineq_rows.len(),
                self.ineq_lower.len(),
                self.ineq_upper.len()
            )));
        }
        for row in self.eq_rows.iter().chain(&self.ineq_rows) {
            if row.len() != n {
                return Err(QpError::Dimension(format!(
                    "constraint row has {} coefficients, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(QpError::NonFinite("constraint row"));
            }
        }
        for (i, h) in self.hessian_diag.iter().enumerate() {
            if !h.is_finite() {
                return Err(QpError::NonFinite("hessian_diag"));
            }
            if *h > S::zero() {
                return Err(QpError::NotConcave {
                    index: i,
                    value: h.to_f64_lossy(),
                });
            }
        }
        if self.linear.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("linear"));
        }
        if self
            .bounds
            .iter()
            .any(|(lo, hi)| !lo.is_finite() || !hi.is_finite())
        {
            return Err(QpError::NonFinite("bounds"));
        }
        if self
            .eq_rhs
            .iter()
            .chain(&self.ineq_lower)
            .chain(&self.ineq_upper)
            .any(|v| !v.is_finite())
        {
            return Err(QpError::NonFinite("rhs"));
        }
        Ok(())
    }

    /// Plain-text listing of the problem for external cross-checking.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("variables {}\n", self.n_vars()));
        for i in 0..self.n_vars() {
            out.push_str(&format!(
                "x{i} quad {} lin {} in [{}, {}]\n",
                self.hessian_diag[i], self.linear[i], self.bounds[i].0, self.bounds[i].1
            ));
        }
        out.push_str(&format!("equalities {}\n", self.eq_rows.len()));
        for (r, row) in self.eq_rows.iter().enumerate() {
            out.push_str(&format!("eq{r}:"));
            for (i, a) in row.iter().enumerate() {
                if *a != S::zero() {
                    out.push_str(&format!(" {a}*x{i}"));
                }
            }
            out.push_str(&format!(" = {}\n", self.eq_rhs[r]));
        }
        out.push_str(&format!("inequalities {}\n", self.ineq_rows.len()));
        for (r, row) in self.ineq_rows.iter().enumerate() {
            out.push_str(&format!("ineq{r}: {} <=", self.ineq_lower[r]));
            for (i, a) in row.iter().enumerate() {
                if *a != S::zero() {
                    out.push_str(&format!(" {a}*x{i}"));
                }
            }
            out.push_str(&format!(" <= {}\n", self.ineq_upper[r]));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution<S> {
    pub x: Vec<S>,
    pub objective: S,
    pub eq_duals: Vec<S>,
    /// Signed: positive when the row's upper side binds, negative for lower.
    pub ineq_duals: Vec<S>,
    /// Per variable `(lower, upper)` bound multipliers, both nonnegative.
    pub bound_duals: Vec<(S, S)>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Max of the four normalized KKT block residuals (see [`verify_kkt`]).
    pub kkt_residual: S,
}

/// Residual report from [`verify_kkt`]. Each entry is the max-norm violation
/// of the corresponding KKT block; stationarity and complementarity are
/// normalized by the objective-gradient scale, primal equality rows by
/// `1 + |rhs|`, so the values are comparable across problem scales.
#[derive(Debug, Clone, Copy)]
pub struct KktReport<S> {
    pub stationarity: S,
    pub primal_feas: S,
    pub dual_feas: S,
    pub complementarity: S,
}

impl<S: Scalar> KktReport<S> {
    pub fn max(&self) -> S {
        self.stationarity
            .max(self.primal_feas)
            .max(self.dual_feas)
            .max(self.complementarity)
    }
}

/// Gradient scale used to normalize stationarity and complementarity.
fn objective_scale<S: Scalar>(p: &QpProblem<S>) -> S {
    let mut s = S::one();
    for i in 0..p.n_vars() {
        let (lo, hi) = p.bounds[i];
        let box_mag = lo.abs().max(hi.abs()).max(S::one());
        let g = p.linear[i].abs() + (S::c(2.0) * p.hessian_diag[i]).abs() * box_mag;
        s = s.max(g);
    }
    s
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

/// KKT residuals of a candidate solution, in the maximization convention of
/// this module. Pure diagnostic; does not mutate anything.
pub fn verify_kkt<S: Scalar>(p: &QpProblem<S>, s: &QpSolution<S>) -> Result<KktReport<S>, QpError> {
    p.validate()?;
    let n = p.n_vars();
    if s.x.len() != n
        || s.bound_duals.len() != n
        || s.eq_duals.len() != p.eq_rows.len()
        || s.ineq_duals.len() != p.ineq_rows.len()
    {
        return Err(QpError::Dimension(
            "solution dimensions do not match problem".into(),
        ));
    }
    let s_obj = objective_scale(p);
    let two = S::c(2.0);

    let mut stationarity = S::zero();
    for i in 0..n {
        let mut r = p.linear[i] + two * p.hessian_diag[i] * s.x[i];
        for (row, y) in p.eq_rows.iter().zip(&s.eq_duals) {
            r = r - row[i] * *y;
        }
        for (row, lam) in p.ineq_rows.iter().zip(&s.ineq_duals) {
            r = r - row[i] * *lam;
        }
        r = r + s.bound_duals[i].0 - s.bound_duals[i].1;
        stationarity = stationarity.max(r.abs() / s_obj);
    }

    let mut primal = S::zero();
    let mut dual = S::zero();
    let mut comp = S::zero();
    for i in 0..n {
        let (lo, hi) = p.bounds[i];
        let (zl, zu) = s.bound_duals[i];
        primal = primal.max(lo - s.x[i]).max(s.x[i] - hi);
        dual = dual.max(-zl).max(-zu);
        let pl = (s.x[i] - lo).max(S::zero());
        let pu = (hi - s.x[i]).max(S::zero());
        comp = comp.max(zl * pl / (s_obj * (S::one() + pl)));
        comp = comp.max(zu * pu / (s_obj * (S::one() + pu)));
    }
    for (r, row) in p.eq_rows.iter().enumerate() {
        let v = (dot(row, &s.x) - p.eq_rhs[r]).abs();
        primal = primal.max(v / (S::one() + p.eq_rhs[r].abs()));
    }
    for (r, row) in p.ineq_rows.iter().enumerate() {
        let gx = dot(row, &s.x);
        let (l, u) = (p.ineq_lower[r], p.ineq_upper[r]);
        let scale = S::one() + l.abs().max(u.abs());
        primal = primal.max((l - gx).max(gx - u).max(S::zero()) / scale);
        // Active-side tolerance for sign checks.
        let act = S::c(1e-6) * scale;
        let lam = s.ineq_duals[r];
        let upper_active = u - gx <= act;
        let lower_active = gx - l <= act;
        if !lower_active {
            // Lower side slack: a negative multiplier is a sign violation.
            dual = dual.max(-lam);
            comp = comp.max(lam.max(S::zero()) * S::zero().max(u - gx) / (s_obj * (S::one() + (u - gx).abs())));
        }
        if !upper_active {
            dual = dual.max(lam);
            comp = comp.max((-lam).max(S::zero()) * S::zero().max(gx - l) / (s_obj * (S::one() + (gx - l).abs())));
        }
        if !lower_active && !upper_active {
            // Fully interior row: any multiplier magnitude is a violation.
            dual = dual.max(lam.abs());
        }
    }

    Ok(KktReport {
        stationarity,
        primal_feas: primal,
        dual_feas: dual,
        complementarity: comp,
    })
}

/// Convenience wrapper with a single tolerance for feasibility and
/// stationarity.
pub fn solve_concave_qp<S: Scalar>(
    p: &QpProblem<S>,
    tol: S,
    max_iter: usize,
) -> Result<QpSolution<S>, QpError> {
    solve_concave_qp_with(p, tol, tol, max_iter)
}

/// Width below which a variable (or slack) is pre-fixed and eliminated.
const FIX_WIDTH: f64 = 1e-12;

/// Solves the QP with separate feasibility and stationarity tolerances.
pub fn solve_concave_qp_with<S: Scalar>(
    p: &QpProblem<S>,
    feas_tol: S,
    stat_tol: S,
    max_iter: usize,
) -> Result<QpSolution<S>, QpError> {
    p.validate()?;
    let n = p.n_vars();
    let m_e = p.eq_rows.len();
    let m_i = p.ineq_rows.len();

    let infeasible = |iterations: usize| {
        let x: Vec<S> = p.bounds.iter().map(|(lo, hi)| (*lo + *hi) / S::c(2.0)).collect();
        QpSolution {
            objective: p.objective(&x),
            x,
            eq_duals: vec![S::zero(); m_e],
            ineq_duals: vec![S::zero(); m_i],
            bound_duals: vec![(S::zero(), S::zero()); n],
            status: QpStatus::Infeasible,
            iterations,
            kkt_residual: S::infinity(),
        }
    };

    // ---- presolve: fix degenerate variables, screen impossible rows ----
    let fix_w = S::c(FIX_WIDTH);
    let mut fixed: Vec<Option<S>> = vec![None; n];
    for i in 0..n {
        let (lo, hi) = p.bounds[i];
        if lo > hi {
            return Ok(infeasible(0));
        }
        if hi - lo <= fix_w {
            fixed[i] = Some((lo + hi) / S::c(2.0));
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let n_f = free.len();

    // Effective rows over free variables.
    struct Row<S> {
        coef: Vec<S>, // over free vars
        max_abs: S,
    }
    let project = |row: &[S]| -> (Row<S>, S) {
        let mut shift = S::zero();
        for (i, v) in fixed.iter().enumerate() {
            if let Some(v) = v {
                shift = shift + row[i] * *v;
            }
        }
        let coef: Vec<S> = free.iter().map(|&i| row[i]).collect();
        let max_abs = coef.iter().fold(S::zero(), |a, c| a.max(c.abs()));
        (Row { coef, max_abs }, shift)
    };

    // Interval reachability of a row over the free box.
    let row_range = |row: &Row<S>| -> (S, S) {
        let mut lo_sum = S::zero();
        let mut hi_sum = S::zero();
        for (k, &i) in free.iter().enumerate() {
            let (lo, hi) = p.bounds[i];
            let a = row.coef[k];
            if a >= S::zero() {
                lo_sum = lo_sum + a * lo;
                hi_sum = hi_sum + a * hi;
            } else {
                lo_sum = lo_sum + a * hi;
                hi_sum = hi_sum + a * lo;
            }
        }
        (lo_sum, hi_sum)
    };

    let mut eq_keep: Vec<usize> = Vec::new();
    let mut eqs: Vec<(Row<S>, S)> = Vec::new(); // (row, rhs)
    for (r, row) in p.eq_rows.iter().enumerate() {
        let (pr, shift) = project(row);
        let rhs = p.eq_rhs[r] - shift;
        let slack_tol = feas_tol * (S::one() + p.eq_rhs[r].abs());
        if pr.max_abs <= S::c(1e-14) {
            if rhs.abs() > slack_tol {
                return Ok(infeasible(0));
            }
            continue; // trivially satisfied; dual stays zero
        }
        let (lo, hi) = row_range(&pr);
        if rhs < lo - slack_tol || rhs > hi + slack_tol {
            return Ok(infeasible(0));
        }
        eq_keep.push(r);
        eqs.push((pr, rhs));
    }

    let mut ineq_keep: Vec<usize> = Vec::new();
    let mut ineqs: Vec<(Row<S>, S, S)> = Vec::new(); // (row, l, u)
    for (r, row) in p.ineq_rows.iter().enumerate() {
        let (l0, u0) = (p.ineq_lower[r], p.ineq_upper[r]);
        if l0 > u0 {
            return Ok(infeasible(0));
        }
        let (pr, shift) = project(row);
        let l = l0 - shift;
        let u = u0 - shift;
        let scale = S::one() + l0.abs().max(u0.abs());
        let slack_tol = feas_tol * scale;
        if pr.max_abs <= S::c(1e-14) {
            if l > slack_tol || u < -slack_tol {
                return Ok(infeasible(0));
            }
            continue;
        }
        let (rlo, rhi) = row_range(&pr);
        if u < rlo - slack_tol || l > rhi + slack_tol {
            return Ok(infeasible(0));
        }
        ineq_keep.push(r);
        ineqs.push((pr, l, u));
    }
    let k_e = eqs.len();
    let k_i = ineqs.len();

    // ---- scaling ----
    let s_obj = objective_scale(p);
    let mut h_s: Vec<S> = free.iter().map(|&i| p.hessian_diag[i] / s_obj).collect();
    let c_s: Vec<S> = free.iter().map(|&i| p.linear[i] / s_obj).collect();
    // Guard tiny negative curvature that is numerically zero.
    for h in h_s.iter_mut() {
        if h.abs() < S::min_positive_value() {
            *h = S::zero();
        }
    }
    let mut row_scale = Vec::with_capacity(k_e + k_i);
    for (row, _) in eqs.iter() {
        row_scale.push(row.max_abs.max(S::c(1e-12)));
    }
    for (row, _, _) in ineqs.iter() {
        row_scale.push(row.max_abs.max(S::c(1e-12)));
    }
    let eq_scaled: Vec<(Vec<S>, S)> = eqs
        .iter()
        .enumerate()
        .map(|(r, (row, rhs))| {
            let s = row_scale[r];
            (row.coef.iter().map(|&a| a / s).collect(), *rhs / s)
        })
        .collect();
    let ineq_scaled: Vec<(Vec<S>, S, S)> = ineqs
        .iter()
        .enumerate()
        .map(|(r, (row, l, u))| {
            let s = row_scale[k_e + r];
            (
                row.coef.iter().map(|&a| a / s).collect(),
                *l / s,
                *u / s,
            )
        })
        .collect();

    // ---- interior point on z = (x_free, s) ----
    let n_z = n_f + k_i;
    let m = k_e + k_i;
    let mut lo_z = Vec::with_capacity(n_z);
    let mut hi_z = Vec::with_capacity(n_z);
    for &i in &free {
        lo_z.push(p.bounds[i].0);
        hi_z.push(p.bounds[i].1);
    }
    for (_, l, u) in &ineq_scaled {
        lo_z.push(*l);
        hi_z.push(*u);
    }
    // Slacks of near-zero width are pinned mid-box like variables would be;
    // treat them as ordinary (the IPM needs strictly positive widths).
    for i in 0..n_z {
        if hi_z[i] - lo_z[i] <= fix_w {
            // Widen symmetrically by a hair; the row residual tolerance
            // absorbs the perturbation.
            let mid = (lo_z[i] + hi_z[i]) / S::c(2.0);
            let half = S::c(0.5) * fix_w + S::c(1e-9);
            lo_z[i] = mid - half;
            hi_z[i] = mid + half;
        }
    }

    let q_diag: Vec<S> = (0..n_z)
        .map(|i| {
            if i < n_f {
                -S::c(2.0) * h_s[i]
            } else {
                S::zero()
            }
        })
        .collect();
    let g_lin: Vec<S> = (0..n_z)
        .map(|i| if i < n_f { -c_s[i] } else { S::zero() })
        .collect();
    // rhs of A z = b: eq rows then zero for slack rows.
    let b_vec: Vec<S> = eq_scaled
        .iter()
        .map(|(_, b)| *b)
        .chain(std::iter::repeat_n(S::zero(), k_i))
        .collect();

    // Row access helpers: rows 0..k_e are (eq coef | 0), rows k_e..m are
    // (ineq coef | -e_i).
    let row_x = |r: usize| -> &[S] {
        if r < k_e {
            &eq_scaled[r].0
        } else {
            &ineq_scaled[r - k_e].0
        }
    };

    let mut z: Vec<S> = (0..n_z)
        .map(|i| (lo_z[i] + hi_z[i]) / S::c(2.0))
        .collect();
    let mut y = vec![S::zero(); m];
    let mut zl = vec![S::one(); n_z];
    let mut zu = vec![S::one(); n_z];

    let a_times = |z: &[S]| -> Vec<S> {
        let mut out = vec![S::zero(); m];
        for r in 0..m {
            let mut acc = dot(row_x(r), &z[..n_f]);
            if r >= k_e {
                acc = acc - z[n_f + (r - k_e)];
            }
            out[r] = acc;
        }
        out
    };
    let at_times = |y: &[S]| -> Vec<S> {
        let mut out = vec![S::zero(); n_z];
        for r in 0..m {
            let yr = y[r];
            if yr != S::zero() {
                for (k, a) in row_x(r).iter().enumerate() {
                    out[k] = out[k] + *a * yr;
                }
                if r >= k_e {
                    out[n_f + (r - k_e)] = out[n_f + (r - k_e)] - yr;
                }
            }
        }
        out
    };

    let mut iterations = 0usize;
    let mut status = QpStatus::IterationLimit;
    let mut best_gap = S::infinity();
    let mut stall = 0usize;

    if n_z > 0 {
        for iter in 0..max_iter {
            iterations = iter + 1;
            let p_gap: Vec<S> = (0..n_z).map(|i| z[i] - lo_z[i]).collect();
            let q_gap: Vec<S> = (0..n_z).map(|i| hi_z[i] - z[i]).collect();

            // Residuals.
            let az = a_times(&z);
            let r_p: Vec<S> = (0..m).map(|r| az[r] - b_vec[r]).collect();
            let aty = at_times(&y);
            let r_d: Vec<S> = (0..n_z)
                .map(|i| q_diag[i] * z[i] + g_lin[i] + aty[i] - zl[i] + zu[i])
                .collect();
            let gap = (0..n_z).fold(S::zero(), |acc, i| {
                acc + p_gap[i] * zl[i] + q_gap[i] * zu[i]
            });
            let mu = gap / S::from_usize(2 * n_z).unwrap();

            // Convergence in physical units: row residuals unscale by
            // row_scale (MW), dual residual is already in gradient scale.
            let mut primal_ok = true;
            for r in 0..m {
                if r_p[r].abs() * row_scale[r] > feas_tol {
                    primal_ok = false;
                    break;
                }
            }
            let dual_inf = r_d.iter().fold(S::zero(), |a, v| a.max(v.abs()));
            let dual_ok = dual_inf <= stat_tol;
            // The duality gap bounds the objective deficit of the iterate,
            // so the target is set on the total gap relative to the scaled
            // objective magnitude.
            let obj_mag = {
                let v = (0..n_z).fold(S::zero(), |acc, i| {
                    acc + (S::c(0.5) * q_diag[i] * z[i] + g_lin[i]) * z[i]
                });
                S::one() + v.abs()
            };
            // Targets scale with the working precision so the same code
            // serves f32 and f64.
            let gap_strict = S::epsilon() * S::c(1e4) * obj_mag;
            let gap_loose = S::epsilon() * S::c(1e7) * obj_mag;
            let mu_ok = gap <= gap_strict || (stall >= 8 && gap <= gap_loose);
            if primal_ok && dual_ok && mu_ok {
                status = QpStatus::Optimal;
                break;
            }
            if mu < best_gap * S::c(0.95) {
                best_gap = mu;
                stall = 0;
            } else {
                stall += 1;
            }
            // Infeasibility heuristics: duals exploding while primal stuck.
            let dual_norm = y
                .iter()
                .chain(&zl)
                .chain(&zu)
                .fold(S::zero(), |a, v| a.max(v.abs()));
            if (dual_norm > S::c(1e11) && !primal_ok)
                || (stall > 30 && !primal_ok && gap < gap_loose)
            {
                return Ok(infeasible(iterations));
            }
            if stall > 60 {
                break; // no progress; report iteration limit with best iterate
            }

            // Newton system pieces. M = A D^-1 A' is factorized once per
            // iteration and reused for the predictor and corrector solves.
            let d: Vec<S> = (0..n_z)
                .map(|i| q_diag[i] + zl[i] / p_gap[i] + zu[i] / q_gap[i])
                .collect();
            let chol = if m > 0 {
                let mut mmat = vec![S::zero(); m * m];
                for r in 0..m {
                    for c in r..m {
                        let rx = row_x(r);
                        let cx = row_x(c);
                        let mut acc = S::zero();
                        for k in 0..n_f {
                            acc = acc + rx[k] * cx[k] / d[k];
                        }
                        if r >= k_e && r == c {
                            let sidx = n_f + (r - k_e);
                            acc = acc + S::one() / d[sidx];
                        }
                        mmat[r * m + c] = acc;
                        mmat[c * m + r] = acc;
                    }
                }
                Some(factor_spd(mmat, m))
            } else {
                None
            };

            let solve_direction = |comp_l: &[S],
                                   comp_u: &[S],
                                   r_p: &[S],
                                   r_d: &[S]|
             -> (Vec<S>, Vec<S>, Vec<S>, Vec<S>) {
                // r_hat = -r_d + comp_l/p - comp_u/q
                let r_hat: Vec<S> = (0..n_z)
                    .map(|i| -r_d[i] + comp_l[i] / p_gap[i] - comp_u[i] / q_gap[i])
                    .collect();
                let rhat_over_d: Vec<S> = (0..n_z).map(|i| r_hat[i] / d[i]).collect();
                let dy = match &chol {
                    Some(chol) => {
                        // M dy = A D^-1 r_hat + r_p
                        let mut rhs = vec![S::zero(); m];
                        for r in 0..m {
                            let mut acc = dot(row_x(r), &rhat_over_d[..n_f]);
                            if r >= k_e {
                                acc = acc - rhat_over_d[n_f + (r - k_e)];
                            }
                            rhs[r] = acc + r_p[r];
                        }
                        chol.solve(&rhs)
                    }
                    None => Vec::new(),
                };
                let atdy = at_times(&dy);
                let dz: Vec<S> = (0..n_z).map(|i| (r_hat[i] - atdy[i]) / d[i]).collect();
                let dzl: Vec<S> = (0..n_z)
                    .map(|i| (comp_l[i] - zl[i] * dz[i]) / p_gap[i])
                    .collect();
                let dzu: Vec<S> = (0..n_z)
                    .map(|i| (comp_u[i] + zu[i] * dz[i]) / q_gap[i])
                    .collect();
                (dz, dy, dzl, dzu)
            };

            // Affine (predictor) direction.
            let comp_l_aff: Vec<S> = (0..n_z).map(|i| -(p_gap[i] * zl[i])).collect();
            let comp_u_aff: Vec<S> = (0..n_z).map(|i| -(q_gap[i] * zu[i])).collect();
            let (dz_a, _dy_a, dzl_a, dzu_a) = solve_direction(&comp_l_aff, &comp_u_aff, &r_p, &r_d);

            let step_primal = |dz: &[S]| -> S {
                let mut a = S::one();
                for i in 0..n_z {
                    if dz[i] < S::zero() {
                        a = a.min(-p_gap[i] / dz[i]);
                    } else if dz[i] > S::zero() {
                        a = a.min(q_gap[i] / dz[i]);
                    }
                }
                a
            };
            let step_dual = |dzl: &[S], dzu: &[S]| -> S {
                let mut a = S::one();
                for i in 0..n_z {
                    if dzl[i] < S::zero() {
                        a = a.min(-zl[i] / dzl[i]);
                    }
                    if dzu[i] < S::zero() {
                        a = a.min(-zu[i] / dzu[i]);
                    }
                }
                a
            };

            let ap_aff = step_primal(&dz_a);
            let ad_aff = step_dual(&dzl_a, &dzu_a);
            let gap_aff = (0..n_z).fold(S::zero(), |acc, i| {
                acc + (p_gap[i] + ap_aff * dz_a[i]) * (zl[i] + ad_aff * dzl_a[i])
                    + (q_gap[i] - ap_aff * dz_a[i]) * (zu[i] + ad_aff * dzu_a[i])
            });
            let mu_aff = gap_aff / S::from_usize(2 * n_z).unwrap();
            let sigma = {
                let ratio = (mu_aff / mu).max(S::zero()).min(S::one());
                (ratio * ratio * ratio).max(S::c(1e-8))
            };

            // Corrector.
            let smu = sigma * mu;
            let comp_l: Vec<S> = (0..n_z)
                .map(|i| smu - p_gap[i] * zl[i] - dz_a[i] * dzl_a[i])
                .collect();
            let comp_u: Vec<S> = (0..n_z)
                .map(|i| smu - q_gap[i] * zu[i] + dz_a[i] * dzu_a[i])
                .collect();
            let (dz, dy, dzl, dzu) = solve_direction(&comp_l, &comp_u, &r_p, &r_d);

            let tau = {
                let loose = S::one() - S::c(100.0) * mu;
                loose.max(S::c(0.995)).min(S::c(0.999999))
            };
            let ap = (tau * step_primal(&dz)).min(S::one());
            let ad = (tau * step_dual(&dzl, &dzu)).min(S::one());

            for i in 0..n_z {
                z[i] = z[i] + ap * dz[i];
                zl[i] = zl[i] + ad * dzl[i];
                zu[i] = zu[i] + ad * dzu[i];
                // Numerical guard: keep multipliers strictly positive.
                let floor = S::min_positive_value();
                if zl[i] < floor {
                    zl[i] = floor;
                }
                if zu[i] < floor {
                    zu[i] = floor;
                }
            }
            for r in 0..m {
                y[r] = y[r] + ad * dy[r];
            }
        }
    } else {
        // No free variables: everything was fixed by presolve.
        status = QpStatus::Optimal;
    }

    // ---- map back to the original problem ----
    let mut x = vec![S::zero(); n];
    for (k, &i) in free.iter().enumerate() {
        // Clamp the strictly-interior iterate onto the box on output.
        x[i] = z[k].max(p.bounds[i].0).min(p.bounds[i].1);
    }
    for (i, v) in fixed.iter().enumerate() {
        if let Some(v) = v {
            x[i] = *v;
        }
    }

    let mut eq_duals = vec![S::zero(); m_e];
    for (slot, &r) in eq_keep.iter().enumerate() {
        eq_duals[r] = y[slot] * s_obj / row_scale[slot];
    }
    let mut ineq_duals = vec![S::zero(); m_i];
    for (slot, &r) in ineq_keep.iter().enumerate() {
        ineq_duals[r] = y[k_e + slot] * s_obj / row_scale[k_e + slot];
    }
    let mut bound_duals = vec![(S::zero(), S::zero()); n];
    for (k, &i) in free.iter().enumerate() {
        bound_duals[i] = (zl[k] * s_obj, zu[k] * s_obj);
    }
    // Fixed variables absorb their stationarity residual into bound duals.
    let two = S::c(2.0);
    for (i, v) in fixed.iter().enumerate() {
        if v.is_some() {
            let mut r = p.linear[i] + two * p.hessian_diag[i] * x[i];
            for (row, yv) in p.eq_rows.iter().zip(&eq_duals) {
                r = r - row[i] * *yv;
            }
            for (row, lam) in p.ineq_rows.iter().zip(&ineq_duals) {
                r = r - row[i] * *lam;
            }
            if r <= S::zero() {
                bound_duals[i] = (-r, S::zero());
            } else {
                bound_duals[i] = (S::zero(), r);
            }
        }
    }

    let mut sol = QpSolution {
        objective: p.objective(&x),
        x,
        eq_duals,
        ineq_duals,
        bound_duals,
        status,
        iterations,
        kkt_residual: S::zero(),
    };
    let report = verify_kkt(p, &sol)?;
    sol.kkt_residual = report.max();
    if sol.status == QpStatus::Optimal && sol.kkt_residual > S::c(1e-6).max(stat_tol) {
        // The iterate stalled short of the certificate; be honest about it.
        sol.status = QpStatus::IterationLimit;
    }
    Ok(sol)
}

/// Dense Cholesky factor with escalating diagonal regularization.
struct SpdFactor<S> {
    l: Vec<S>,
    dim: usize,
}

fn factor_spd<S: Scalar>(m: Vec<S>, dim: usize) -> SpdFactor<S> {
    let max_diag = (0..dim).fold(S::zero(), |a, i| a.max(m[i * dim + i].abs()));
    let mut reg = S::c(1e-13);
    loop {
        let mut l = m.clone();
        for i in 0..dim {
            l[i * dim + i] = l[i * dim + i] + reg * (S::one() + max_diag);
        }
        if try_cholesky(&mut l, dim) {
            return SpdFactor { l, dim };
        }
        reg = reg * S::c(100.0);
        if reg > S::one() {
            // Identity fallback keeps the iteration deterministic even on a
            // hopeless system; the step will simply be poor.
            let mut l = vec![S::zero(); dim * dim];
            for i in 0..dim {
                l[i * dim + i] = S::one();
            }
            return SpdFactor { l, dim };
        }
    }
}

fn try_cholesky<S: Scalar>(m: &mut [S], dim: usize) -> bool {
    for k in 0..dim {
        let mut d = m[k * dim + k];
        for j in 0..k {
            d = d - m[k * dim + j] * m[k * dim + j];
        }
        if d <= S::zero() || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        m[k * dim + k] = d;
        for i in k + 1..dim {
            let mut v = m[i * dim + k];
            for j in 0..k {
                v = v - m[i * dim + j] * m[k * dim + j];
            }
            m[i * dim + k] = v / d;
        }
    }
    true
}

impl<S: Scalar> SpdFactor<S> {
    fn solve(&self, rhs: &[S]) -> Vec<S> {
        let dim = self.dim;
        let mut x = rhs.to_vec();
        for i in 0..dim {
            for j in 0..i {
                let t = self.l[i * dim + j] * x[j];
                x[i] = x[i] - t;
            }
            x[i] = x[i] / self.l[i * dim + i];
        }
        for i in (0..dim).rev() {
            for j in i + 1..dim {
                let t = self.l[j * dim + i] * x[j];
                x[i] = x[i] - t;
            }
            x[i] = x[i] / self.l[i * dim + i];
        }
        x
    }
}
