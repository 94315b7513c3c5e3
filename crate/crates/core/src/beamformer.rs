//! Closed-form precoder updates and multiplier search under power budgets.
//!
//! For fixed decoders and weights the surrogate is a concave quadratic in
//! each precoder, so `V = (Xi + mu I)^{-1} B` with the multiplier chosen by
//! bisection so that the budget binds (or `mu = 0` when it does not).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob2, hermitian_part, hpd_cholesky, trace_re, try_cholesky, CMat};
use crate::system::{BeamformerSet, EffectiveChannels, Weights};
use crate::wmmse::WmmseState;

/// Multipliers after a beamformer update together with the resulting slacks.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub mu_d: f64,
    pub lambda_u: Vec<f64>,
    /// `P_B - sum_k Tr(V_kd V_kd^H)`.
    pub slack_d: f64,
    /// `P_U - Tr(V_ku V_ku^H)` per user.
    pub slack_u: Vec<f64>,
    pub budget_d: f64,
    pub budget_u: f64,
}

impl DualState {
    /// Largest relative budget overshoot, zero when every budget holds.
    pub fn max_power_violation(&self) -> f64 {
        let rel = |slack: f64, budget: f64| if budget > 0.0 { (-slack / budget).max(0.0) } else { (-slack).max(0.0) };
        self.slack_u
            .iter()
            .map(|&s| rel(s, self.budget_u))
            .fold(rel(self.slack_d, self.budget_d), f64::max)
    }

    /// Largest `mu * slack / (P max(mu, 1))` over all constraints.
    pub fn max_slackness(&self) -> f64 {
        let term = |m: f64, slack: f64, budget: f64| {
            if budget > 0.0 {
                (m * slack).abs() / (budget * m.max(1.0))
            } else {
                0.0
            }
        };
        self.lambda_u
            .iter()
            .zip(&self.slack_u)
            .map(|(&m, &s)| term(m, s, self.budget_u))
            .fold(term(self.mu_d, self.slack_d, self.budget_d), f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BisectionSettings {
    /// Acceptance tolerance on relative power feasibility and slackness.
    pub epsilon: f64,
    /// Relative gap `(budget - power) / budget` at which bisection stops early.
    pub power_rel_tol: f64,
    pub max_doublings: usize,
    pub max_iters: usize,
}

impl Default for BisectionSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            power_rel_tol: 1e-12,
            max_doublings: 60,
            max_iters: 200,
        }
    }
}

impl BisectionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.power_rel_tol > 0.0) {
            return Err(Error::Parameter("bisection tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("bisection needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Result of a multiplier search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionOutcome {
    pub multiplier: f64,
    pub power: f64,
    pub iterations: usize,
}

/// Finds the smallest multiplier whose power fits `budget`, given a
/// nonincreasing `power_of`. A value of `f64::INFINITY` from `power_of` means
/// the unregularized system is singular. The returned multiplier always lies
/// on the feasible side of the bracket.
pub fn bisect_multiplier<F>(mut power_of: F, budget: f64, settings: &BisectionSettings) -> Result<BisectionOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::Parameter(format!("power budget must be positive, got {budget}")));
    }
    let p0 = power_of(0.0)?;
    if p0 <= budget {
        return Ok(BisectionOutcome {
            multiplier: 0.0,
            power: p0,
            iterations: 0,
        });
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut p_hi = power_of(hi)?;
    let mut doublings = 0;
    while p_hi > budget {
        if doublings == settings.max_doublings {
            return Err(Error::Bracket {
                upper: hi,
                power: p_hi,
                budget,
            });
        }
        lo = hi;
        hi *= 2.0;
        p_hi = power_of(hi)?;
        doublings += 1;
    }
    let mut iterations = 0;
    while iterations < settings.max_iters {
        if (budget - p_hi) <= settings.power_rel_tol * budget {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = power_of(mid)?;
        iterations += 1;
        if p > budget {
            lo = mid;
        } else {
            hi = mid;
            p_hi = p;
        }
    }
    Ok(BisectionOutcome {
        multiplier: hi,
        power: p_hi,
        iterations: doublings + iterations,
    })
}

fn add_ridge(mut m: CMat, mu: f64) -> CMat {
    for i in 0..m.nrows() {
        m[(i, i)] += mu;
    }
    m
}

/// `sum_i gamma_iu U_iu W_iu U_iu^H`, the uplink receive-side weighting.
fn uplink_receive_weight(wm: &WmmseState, weights: &Weights) -> CMat {
    let n = wm.u_u[0].nrows();
    let mut acc = CMat::zeros(n, n);
    for (i, (u, w)) in wm.u_u.iter().zip(&wm.w_u).enumerate() {
        acc += (u * w * u.adjoint()).scale(weights.gamma_u[i]);
    }
    acc
}

/// `Xi_kd(mu)`.
pub fn xi_down(eff: &EffectiveChannels, wm: &WmmseState, weights: &Weights, mu: f64, k: usize) -> CMat {
    let h = &eff.h_kd[k];
    let (u, w) = (&wm.u_d[k], &wm.w_d[k]);
    let own = (h.adjoint() * u * w * u.adjoint() * h).scale(weights.gamma_d[k]);
    let si = eff.h_t.adjoint() * uplink_receive_weight(wm, weights) * &eff.h_t;
    add_ridge(hermitian_part(&(own + si)), mu)
}

/// `Xi_ku(lambda)`; `h_jk[k][j]` is the channel from user `k` into user `j`.
pub fn xi_up(eff: &EffectiveChannels, wm: &WmmseState, weights: &Weights, lambda: f64, k: usize) -> CMat {
    let n = eff.h_ku[k].ncols();
    let mut acc = CMat::zeros(n, n);
    for j in 0..eff.users() {
        let h = &eff.h_jk[k][j];
        let (u, w) = (&wm.u_d[j], &wm.w_d[j]);
        acc += (h.adjoint() * u * w * u.adjoint() * h).scale(weights.gamma_d[j]);
    }
    let h = &eff.h_ku[k];
    acc += h.adjoint() * uplink_receive_weight(wm, weights) * h;
    add_ridge(hermitian_part(&acc), lambda)
}

/// `gamma_kd H_kd^H U_kd W_kd`.
pub fn linear_term_down(eff: &EffectiveChannels, wm: &WmmseState, weights: &Weights, k: usize) -> CMat {
    (eff.h_kd[k].adjoint() * &wm.u_d[k] * &wm.w_d[k]).scale(weights.gamma_d[k])
}

/// `gamma_ku H_ku^H U_ku W_ku`.
pub fn linear_term_up(eff: &EffectiveChannels, wm: &WmmseState, weights: &Weights, k: usize) -> CMat {
    (eff.h_ku[k].adjoint() * &wm.u_u[k] * &wm.w_u[k]).scale(weights.gamma_u[k])
}

pub fn update_v_down(eff: &EffectiveChannels, wm: &WmmseState, weights: &Weights, mu: f64, k: usize) -> Result<CMat> {
    let b = linear_term_down(eff, wm, weights, k);
    Ok(hpd_cholesky(&xi_down(eff, wm, weights, mu, k))?.solve(&b))
}

pub fn update_v_up(eff: &EffectiveChannels, wm: &WmmseState, weights: &Weights, lambda: f64, k: usize) -> Result<CMat> {
    let b = linear_term_up(eff, wm, weights, k);
    Ok(hpd_cholesky(&xi_up(eff, wm, weights, lambda, k))?.solve(&b))
}

/// Solves `Xi(m) X = B` for each pair, refusing to regularize when `m == 0`.
/// Returns `None` when the unregularized system is singular.
fn solve_family(xis: &[CMat], bs: &[CMat], m: f64) -> Result<Option<Vec<CMat>>> {
    let mut out = Vec::with_capacity(xis.len());
    for (xi, b) in xis.iter().zip(bs) {
        let shifted = add_ridge(xi.clone(), m);
        let chol = if m == 0.0 {
            match try_cholesky(&shifted) {
                Some(c) => c,
                None => return Ok(None),
            }
        } else {
            hpd_cholesky(&shifted)?
        };
        let v = chol.solve(b);
        if !crate::linalg::all_finite(&v) {
            if m == 0.0 {
                return Ok(None);
            }
            return Err(Error::Numerical("precoder solve produced a non-finite value".into()));
        }
        out.push(v);
    }
    Ok(Some(out))
}

/// Minimizes the Lagrangian over a block of precoders sharing one budget.
fn solve_budgeted(xis: &[CMat], bs: &[CMat], budget: f64, settings: &BisectionSettings) -> Result<(Vec<CMat>, f64)> {
    if budget <= 0.0 || bs.iter().all(|b| frob2(b) == 0.0) {
        return Ok((bs.iter().map(|b| CMat::zeros(b.nrows(), b.ncols())).collect(), 0.0));
    }
    let power_of = |m: f64| -> Result<f64> {
        Ok(match solve_family(xis, bs, m)? {
            Some(vs) => vs.iter().map(frob2).sum(),
            None => f64::INFINITY,
        })
    };
    let outcome = bisect_multiplier(power_of, budget, settings)?;
    let vs = solve_family(xis, bs, outcome.multiplier)?
        .ok_or_else(|| Error::Numerical("unregularized precoder system became singular".into()))?;
    Ok((vs, outcome.multiplier))
}

/// Which precoder blocks a beamformer update may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveBlocks {
    pub downlink: bool,
    pub uplink: bool,
}

impl ActiveBlocks {
    pub const ALL: Self = Self {
        downlink: true,
        uplink: true,
    };
}

/// Power budgets in linear units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budgets {
    pub p_b: f64,
    pub p_u: f64,
}

/// Jointly updates all active precoders for fixed decoders and weights.
pub fn update_beamformers(
    eff: &EffectiveChannels,
    wm: &WmmseState,
    weights: &Weights,
    current: &BeamformerSet,
    budgets: Budgets,
    active: ActiveBlocks,
    settings: &BisectionSettings,
) -> Result<(BeamformerSet, DualState)> {
    let k_users = eff.users();
    let mut next = current.clone();
    let mut mu_d = 0.0;
    if active.downlink {
        let xis: Vec<CMat> = (0..k_users).map(|k| xi_down(eff, wm, weights, 0.0, k)).collect();
        let bs: Vec<CMat> = (0..k_users).map(|k| linear_term_down(eff, wm, weights, k)).collect();
        let (vs, mu) = solve_budgeted(&xis, &bs, budgets.p_b, settings)?;
        next.v_d = vs;
        mu_d = mu;
    }
    let mut lambda_u = vec![0.0; k_users];
    if active.uplink {
        for k in 0..k_users {
            let xi = [xi_up(eff, wm, weights, 0.0, k)];
            let b = [linear_term_up(eff, wm, weights, k)];
            let (mut vs, lam) = solve_budgeted(&xi, &b, budgets.p_u, settings)?;
            next.v_u[k] = vs.remove(0);
            lambda_u[k] = lam;
        }
    }
    let dual = DualState {
        mu_d,
        slack_d: budgets.p_b - next.downlink_power(),
        slack_u: (0..k_users).map(|k| budgets.p_u - next.uplink_power(k)).collect(),
        lambda_u,
        budget_d: budgets.p_b,
        budget_u: budgets.p_u,
    };
    Ok((next, dual))
}

/// Lagrangian of the precoder subproblem:
/// `sum_k [Tr(V^H Xi(0) V) - 2 Re Tr(B^H V)] + mu (P_d - P_B) + sum_k lambda_k (P_ku - P_U)`.
pub fn lagrangian(
    eff: &EffectiveChannels,
    wm: &WmmseState,
    weights: &Weights,
    bf: &BeamformerSet,
    dual: (f64, &[f64]),
    budgets: Budgets,
) -> f64 {
    let (mu, lambdas) = dual;
    let mut total = mu * (bf.downlink_power() - budgets.p_b);
    let quad = |xi: &CMat, b: &CMat, v: &CMat| trace_re(&(v.adjoint() * xi * v)) - 2.0 * trace_re(&(b.adjoint() * v));
    for k in 0..eff.users() {
        total += quad(&xi_down(eff, wm, weights, 0.0, k), &linear_term_down(eff, wm, weights, k), &bf.v_d[k]);
        total += quad(&xi_up(eff, wm, weights, 0.0, k), &linear_term_up(eff, wm, weights, k), &bf.v_u[k]);
        total += lambdas[k] * (bf.uplink_power(k) - budgets.p_u);
    }
    total
}

/// `2 (Xi_kd(mu) V_kd - B_kd)`: real and imaginary parts are the partial
/// derivatives of [`lagrangian`] with respect to `Re V` and `Im V`.
pub fn lagrangian_gradient_down(
    eff: &EffectiveChannels,
    wm: &WmmseState,
    weights: &Weights,
    v: &CMat,
    mu: f64,
    k: usize,
) -> CMat {
    (xi_down(eff, wm, weights, mu, k) * v - linear_term_down(eff, wm, weights, k)).scale(2.0)
}

pub fn lagrangian_gradient_up(
    eff: &EffectiveChannels,
    wm: &WmmseState,
    weights: &Weights,
    v: &CMat,
    lambda: f64,
    k: usize,
) -> CMat {
    (xi_up(eff, wm, weights, lambda, k) * v - linear_term_up(eff, wm, weights, k)).scale(2.0)
}
