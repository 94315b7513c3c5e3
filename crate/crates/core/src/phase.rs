//! Surface coefficient update as a convex QCQP.
//!
//! With precoders, decoders and weights fixed, the surrogate splits into a
//! constant minus
//!
//! ```text
//! g'(phi_t, theta_t, phi_u, theta_u) = sum_v  v^H Q_v v - 2 Re(v^H b_v)
//! ```
//!
//! where each `Q_v` is a sum of Hadamard products `A (.) B^T` of PSD
//! matrices, from `Tr(Phi^H A Phi B) = phi^H (A (.) B^T) phi`. The feasible
//! set is a product of per-element balls `|theta_l|^2 + |phi_l|^2 <= 1`, one
//! per face, so projected gradient descent with radial projection solves it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ChannelSet;
use crate::linalg::{gram, hermitian_eigen, CMat, CVec, C64};
use crate::system::{BeamformerSet, IosState, Noise, Side, Weights};
use crate::wmmse::{constant_part, WmmseState};

/// Matrices and constants of the surface subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFormSet {
    /// `gamma_kd H_iu_k U_kd W_kd U_kd^H H_iu_k^H`.
    pub a: Vec<CMat>,
    /// `H_ti V_kd V_kd^H H_ti^H`.
    pub b: Vec<CMat>,
    /// `gamma_ku H_ir U_ku W_ku U_ku^H H_ir^H`.
    pub x: Vec<CMat>,
    /// `H_ui_j V_ju V_ju^H H_ui_j^H`.
    pub d: Vec<CMat>,
    /// `gamma_kd H_ti V_kd W_kd U_kd^H H_iu_k^H`.
    pub c_mats: Vec<CMat>,
    /// `gamma_ku H_ui_k V_ku W_ku U_ku^H H_ir^H`.
    pub z_mats: Vec<CMat>,
    /// `f_mats[k][j] = -gamma_ku H_ti V_jd V_jd^H H_tr^H U_ku W_ku U_ku^H H_ir^H`.
    pub f_mats: Vec<Vec<CMat>>,
    /// `y_mats[k][j] = -gamma_kd H_ui_j V_ju V_ju^H H_uu[j][k]^H U_kd W_kd U_kd^H H_iu_k^H`.
    pub y_mats: Vec<Vec<CMat>>,
    pub c: CVec,
    pub f: CVec,
    pub y: CVec,
    pub z: CVec,
    /// Coefficient-independent part of the surrogate.
    pub r_cg: f64,
}

fn sum_mats(ms: impl IntoIterator<Item = CMat>, l: usize) -> CMat {
    ms.into_iter().fold(CMat::zeros(l, l), |acc, m| acc + m)
}

fn diag_of(m: &CMat) -> CVec {
    m.diagonal()
}

/// Builds every quadratic and linear term from the current precoders,
/// decoders and weights.
pub fn build_quadratic_forms(
    ch: &ChannelSet,
    bf: &BeamformerSet,
    wm: &WmmseState,
    weights: &Weights,
    noise: &Noise,
) -> Result<QuadraticFormSet> {
    let l = ch.elements();
    let k_users = ch.users();
    if bf.users() != k_users || wm.users() != k_users {
        return Err(Error::Structural("user counts disagree between channels and state".into()));
    }
    let h_iu: Vec<CMat> = (0..k_users).map(|k| ch.h_iu(k)).collect();
    let h_ui: Vec<CMat> = (0..k_users).map(|k| ch.h_ui(k)).collect();

    // Receive-side factors P = H U, so that H U W U^H H^H = P W P^H.
    let p_d: Vec<CMat> = (0..k_users).map(|k| &h_iu[k] * &wm.u_d[k]).collect();
    let p_u: Vec<CMat> = (0..k_users).map(|k| &ch.h_ir * &wm.u_u[k]).collect();
    // Transmit-side factors G = H V.
    let g_d: Vec<CMat> = (0..k_users).map(|k| &ch.h_ti * &bf.v_d[k]).collect();
    let g_u: Vec<CMat> = (0..k_users).map(|k| &h_ui[k] * &bf.v_u[k]).collect();

    let a: Vec<CMat> = (0..k_users)
        .map(|k| (&p_d[k] * &wm.w_d[k] * p_d[k].adjoint()).scale(weights.gamma_d[k]))
        .collect();
    let x: Vec<CMat> = (0..k_users)
        .map(|k| (&p_u[k] * &wm.w_u[k] * p_u[k].adjoint()).scale(weights.gamma_u[k]))
        .collect();
    let b: Vec<CMat> = g_d.iter().map(gram).collect();
    let d: Vec<CMat> = g_u.iter().map(gram).collect();

    let c_mats: Vec<CMat> = (0..k_users)
        .map(|k| (&g_d[k] * &wm.w_d[k] * p_d[k].adjoint()).scale(weights.gamma_d[k]))
        .collect();
    let z_mats: Vec<CMat> = (0..k_users)
        .map(|k| (&g_u[k] * &wm.w_u[k] * p_u[k].adjoint()).scale(weights.gamma_u[k]))
        .collect();

    let tr_v: Vec<CMat> = (0..k_users).map(|j| &ch.h_tr * &bf.v_d[j]).collect();
    let f_mats: Vec<Vec<CMat>> = (0..k_users)
        .map(|k| {
            let tail = &wm.u_u[k] * &wm.w_u[k] * p_u[k].adjoint();
            (0..k_users)
                .map(|j| (&g_d[j] * tr_v[j].adjoint() * &tail).scale(-weights.gamma_u[k]))
                .collect()
        })
        .collect();
    let y_mats: Vec<Vec<CMat>> = (0..k_users)
        .map(|k| {
            let tail = &wm.u_d[k] * &wm.w_d[k] * p_d[k].adjoint();
            (0..k_users)
                .map(|j| {
                    let uu_v = &ch.h_uu[j][k] * &bf.v_u[j];
                    (&g_u[j] * uu_v.adjoint() * &tail).scale(-weights.gamma_d[k])
                })
                .collect()
        })
        .collect();

    let c = diag_of(&sum_mats(c_mats.iter().cloned(), l));
    let z = diag_of(&sum_mats(z_mats.iter().cloned(), l));
    let f = diag_of(&sum_mats(f_mats.iter().flatten().cloned(), l));
    let y = diag_of(&sum_mats(y_mats.iter().flatten().cloned(), l));

    // Terms that involve only the direct user-user and transceiver links.
    let mut r_cg = constant_part(wm, weights, noise)?;
    for k in 0..k_users {
        let (u, w) = (&wm.u_d[k], &wm.w_d[k]);
        for j in 0..k_users {
            let m = u.adjoint() * &ch.h_uu[j][k] * &bf.v_u[j];
            r_cg -= weights.gamma_d[k] * (w * gram(&m)).trace().re;
        }
        let (u, w) = (&wm.u_u[k], &wm.w_u[k]);
        for t in &tr_v {
            let m = u.adjoint() * t;
            r_cg -= weights.gamma_u[k] * (w * gram(&m)).trace().re;
        }
    }

    Ok(QuadraticFormSet {
        a,
        b,
        x,
        d,
        c_mats,
        z_mats,
        f_mats,
        y_mats,
        c,
        f,
        y,
        z,
        r_cg,
    })
}

/// `A (.) B^T`, the matrix with `Tr(diag(v)^H A diag(v) B) = v^H (A (.) B^T) v`.
pub fn hadamard_transpose(a: &CMat, b: &CMat) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * b[(j, i)])
}

/// One face of the QCQP:
/// `theta^H Q_theta theta - 2 Re(theta^H b_theta) + phi^H Q_phi phi - 2 Re(phi^H b_phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SideQp {
    pub q_theta: CMat,
    pub b_theta: CVec,
    pub q_phi: CMat,
    pub b_phi: CVec,
}

impl SideQp {
    pub fn elements(&self) -> usize {
        self.b_theta.len()
    }

    pub fn objective(&self, theta: &CVec, phi: &CVec) -> f64 {
        quad_value(&self.q_theta, &self.b_theta, theta) + quad_value(&self.q_phi, &self.b_phi, phi)
    }

    /// `(2 (Q_theta theta - b_theta), 2 (Q_phi phi - b_phi))`. Real and imaginary
    /// parts are the partials with respect to the real and imaginary parts of
    /// each coefficient.
    pub fn gradient(&self, theta: &CVec, phi: &CVec) -> (CVec, CVec) {
        (
            (&self.q_theta * theta - &self.b_theta).scale(2.0),
            (&self.q_phi * phi - &self.b_phi).scale(2.0),
        )
    }

    fn sum(&self, other: &SideQp) -> SideQp {
        SideQp {
            q_theta: &self.q_theta + &other.q_theta,
            b_theta: &self.b_theta + &other.b_theta,
            q_phi: &self.q_phi + &other.q_phi,
            b_phi: &self.b_phi + &other.b_phi,
        }
    }
}

fn quad_value(q: &CMat, b: &CVec, v: &CVec) -> f64 {
    v.dotc(&(q * v)).re - 2.0 * v.dotc(b).re
}

/// Both faces of the QCQP. The faces share no terms.
#[derive(Debug, Clone, PartialEq)]
pub struct QpData {
    pub t: SideQp,
    pub u: SideQp,
}

impl QpData {
    pub fn side(&self, side: Side) -> &SideQp {
        match side {
            Side::T => &self.t,
            Side::U => &self.u,
        }
    }

    /// Full `g'` at a surface state.
    pub fn objective(&self, ios: &IosState) -> f64 {
        self.t.objective(&ios.theta_t, &ios.phi_t) + self.u.objective(&ios.theta_u, &ios.phi_u)
    }

    /// Gradient of `g'` laid out like an [`IosState`].
    pub fn gradient(&self, ios: &IosState) -> IosState {
        let (theta_t, phi_t) = self.t.gradient(&ios.theta_t, &ios.phi_t);
        let (theta_u, phi_u) = self.u.gradient(&ios.theta_u, &ios.phi_u);
        IosState {
            theta_t,
            phi_t,
            theta_u,
            phi_u,
        }
    }

    /// Single problem for the case where both faces share one coefficient set.
    pub fn tied(&self) -> SideQp {
        self.t.sum(&self.u)
    }
}

/// Assembles the Hadamard-form QCQP.
pub fn vectorize(qf: &QuadraticFormSet) -> QpData {
    let l = qf.c.len();
    let q_phi_t = sum_mats(qf.a.iter().zip(&qf.b).map(|(a, b)| hadamard_transpose(a, b)), l);
    let sum_a = sum_mats(qf.a.iter().cloned(), l);
    let sum_x = sum_mats(qf.x.iter().cloned(), l);
    let sum_b = sum_mats(qf.b.iter().cloned(), l);
    let sum_d = sum_mats(qf.d.iter().cloned(), l);
    QpData {
        t: SideQp {
            q_theta: hadamard_transpose(&sum_x, &sum_b),
            b_theta: qf.f.conjugate(),
            q_phi: q_phi_t,
            b_phi: qf.c.conjugate(),
        },
        u: SideQp {
            q_theta: hadamard_transpose(&sum_a, &sum_d),
            b_theta: qf.y.conjugate(),
            q_phi: hadamard_transpose(&sum_x, &sum_d),
            b_phi: qf.z.conjugate(),
        },
    }
}

/// Surrogate value `R_cg - g'` at a surface state.
pub fn surrogate_from_forms(qf: &QuadraticFormSet, qp: &QpData, ios: &IosState) -> f64 {
    qf.r_cg - qp.objective(ios)
}

/// Radial projection of one coefficient pair onto `|theta|^2 + |phi|^2 <= 1`.
pub fn project_feasible(theta: C64, phi: C64) -> (C64, C64) {
    let n2 = theta.norm_sqr() + phi.norm_sqr();
    // Rounding slack keeps the map idempotent on its own output.
    if n2 <= 1.0 + 4.0 * f64::EPSILON {
        return (theta, phi);
    }
    let s = 1.0 / n2.sqrt();
    (theta * s, phi * s)
}

fn project_vectors(theta: &mut CVec, phi: &mut CVec) {
    for (t, p) in theta.iter_mut().zip(phi.iter_mut()) {
        let (a, b) = project_feasible(*t, *p);
        *t = a;
        *p = b;
    }
}

/// Projects every element pair of both faces.
pub fn project_state(ios: &IosState) -> IosState {
    let mut out = ios.clone();
    project_vectors(&mut out.theta_t, &mut out.phi_t);
    project_vectors(&mut out.theta_u, &mut out.phi_u);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgdSettings {
    pub max_iters: usize,
    /// Stop once the relative objective decrease of an iteration falls below this.
    pub tolerance: f64,
    /// Nesterov extrapolation with restart on any objective increase.
    pub momentum: bool,
    /// Step halvings tried before declaring a point stationary.
    pub max_backtracks: usize,
}

impl Default for PgdSettings {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tolerance: 1e-8,
            momentum: true,
            max_backtracks: 40,
        }
    }
}

impl PgdSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Parameter(format!("PGD tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("PGD needs at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdReport {
    pub iterations: usize,
    pub initial: f64,
    pub objective: f64,
}

/// Validates that `q` is PSD up to `1e-9 * trace`, clipping small negative
/// eigenvalues. Returns the (possibly clipped) matrix and its largest eigenvalue.
fn psd_checked(q: &CMat, name: &str) -> Result<(CMat, f64)> {
    if q.nrows() == 0 {
        return Ok((q.clone(), 0.0));
    }
    if !crate::linalg::all_finite(q) {
        return Err(Error::Numerical(format!("{name} has a non-finite entry")));
    }
    let herm = crate::linalg::hermitian_part(q);
    let (vals, vecs) = hermitian_eigen(&herm);
    let trace: f64 = vals.iter().map(|v| v.abs()).sum();
    let min = vals[0];
    let max = vals[vals.len() - 1].max(0.0);
    if min < -1e-9 * trace.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "{name} is not positive semidefinite: eigenvalue {min:e} against trace {trace:e}"
        )));
    }
    // Rounding-level negative eigenvalues are harmless to the descent; only
    // rebuild the matrix when the deficit is visible above rounding.
    if min < -1e-13 * trace {
        let clipped = CVec::from_iterator(vals.len(), vals.iter().map(|v| C64::new(v.max(0.0), 0.0)));
        let q = &vecs * CMat::from_diagonal(&clipped) * vecs.adjoint();
        return Ok((crate::linalg::hermitian_part(&q), max));
    }
    Ok((herm, max))
}

/// Minimizes one face of the QCQP from `init` by projected gradient descent.
pub fn solve_side(qp: &SideQp, init: (&CVec, &CVec), settings: &PgdSettings) -> Result<(CVec, CVec, PgdReport)> {
    settings.validate()?;
    let (q_theta, l_theta) = psd_checked(&qp.q_theta, "Q_theta")?;
    let (q_phi, l_phi) = psd_checked(&qp.q_phi, "Q_phi")?;
    let qp = SideQp {
        q_theta,
        b_theta: qp.b_theta.clone(),
        q_phi,
        b_phi: qp.b_phi.clone(),
    };
    let mut theta = init.0.clone();
    let mut phi = init.1.clone();
    project_vectors(&mut theta, &mut phi);
    let mut x = Iterate::new(&qp, theta, phi);
    let initial = x.f;

    let lin_scale = qp.b_theta.norm().max(qp.b_phi.norm());
    let lipschitz = l_theta.max(l_phi).max(1e-12 * lin_scale);
    if lipschitz <= 0.0 {
        // Objective is identically zero.
        let f = x.f;
        return Ok((x.theta, x.phi, PgdReport { iterations: 0, initial, objective: f }));
    }
    let base_step = 0.5 / lipschitz;

    // Products with Q are cached per iterate; the extrapolated point's
    // products follow by linearity.
    let step_from = |y: &Iterate, eta: f64| -> Iterate {
        let mut nt = &y.theta - (&y.q_theta - &qp.b_theta).scale(2.0 * eta);
        let mut np = &y.phi - (&y.q_phi - &qp.b_phi).scale(2.0 * eta);
        project_vectors(&mut nt, &mut np);
        Iterate::new(&qp, nt, np)
    };

    let mut prev = x.clone();
    let mut t_k = 1.0f64;
    let mut iterations = 0;
    while iterations < settings.max_iters {
        iterations += 1;
        let mut next = if settings.momentum && iterations > 1 {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
            let beta = (t_k - 1.0) / t_next;
            t_k = t_next;
            step_from(&x.extrapolate(&prev, beta), base_step)
        } else {
            step_from(&x, base_step)
        };
        if next.f > x.f {
            // Restart from the current iterate with a plain step, backtracking if needed.
            t_k = 1.0;
            let mut eta = base_step;
            let mut accepted = None;
            for _ in 0..=settings.max_backtracks {
                let c = step_from(&x, eta);
                if c.f <= x.f {
                    accepted = Some(c);
                    break;
                }
                eta *= 0.5;
            }
            match accepted {
                Some(c) => next = c,
                None => break,
            }
        }
        let decrease = x.f - next.f;
        prev = std::mem::replace(&mut x, next);
        let scale = x.f.abs().max(initial.abs()).max(f64::MIN_POSITIVE);
        if decrease <= settings.tolerance * scale {
            break;
        }
    }
    let objective = x.f;
    Ok((
        x.theta,
        x.phi,
        PgdReport {
            iterations,
            initial,
            objective,
        },
    ))
}

#[derive(Clone)]
struct Iterate {
    theta: CVec,
    phi: CVec,
    q_theta: CVec,
    q_phi: CVec,
    f: f64,
}

impl Iterate {
    fn new(qp: &SideQp, theta: CVec, phi: CVec) -> Self {
        let q_theta = &qp.q_theta * &theta;
        let q_phi = &qp.q_phi * &phi;
        let f = theta.dotc(&q_theta).re - 2.0 * theta.dotc(&qp.b_theta).re + phi.dotc(&q_phi).re
            - 2.0 * phi.dotc(&qp.b_phi).re;
        Self {
            theta,
            phi,
            q_theta,
            q_phi,
            f,
        }
    }

    /// `self + beta (self - prev)`; the objective field is not meaningful.
    fn extrapolate(&self, prev: &Iterate, beta: f64) -> Iterate {
        let mix = |a: &CVec, b: &CVec| a + (a - b).scale(beta);
        Iterate {
            theta: mix(&self.theta, &prev.theta),
            phi: mix(&self.phi, &prev.phi),
            q_theta: mix(&self.q_theta, &prev.q_theta),
            q_phi: mix(&self.q_phi, &prev.q_phi),
            f: f64::NAN,
        }
    }
}

/// Minimizes both faces independently.
pub fn solve_qcqp(qp: &QpData, init: &IosState, settings: &PgdSettings) -> Result<(IosState, PgdReport)> {
    let (theta_t, phi_t, rt) = solve_side(&qp.t, (&init.theta_t, &init.phi_t), settings)?;
    let (theta_u, phi_u, ru) = solve_side(&qp.u, (&init.theta_u, &init.phi_u), settings)?;
    Ok((
        IosState {
            theta_t,
            phi_t,
            theta_u,
            phi_u,
        },
        PgdReport {
            iterations: rt.iterations.max(ru.iterations),
            initial: rt.initial + ru.initial,
            objective: rt.objective + ru.objective,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_layout, sample_channels, ArrayConfig, FadingParams};
    use crate::linalg::{c, diag_matrix, eye};
    use crate::system::{compose_effective, Dims};
    use crate::wmmse::{surrogate_objective, update_wmmse};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, cc: usize) -> CMat {
        CMat::from_fn(r, cc, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn small_channels(seed: u64, elements: usize) -> ChannelSet {
        let cfg = ArrayConfig {
            elements,
            ..ArrayConfig::default()
        };
        sample_channels(&build_layout(&cfg).unwrap(), &FadingParams::default(), seed).unwrap()
    }

    fn random_state(ch: &ChannelSet, rng: &mut ChaCha8Rng) -> (BeamformerSet, IosState) {
        let dims = Dims::of(ch);
        let k = ch.users();
        let bf = BeamformerSet {
            v_d: (0..k).map(|_| random_mat(rng, dims.n_t, dims.s_d())).collect(),
            v_u: (0..k).map(|_| random_mat(rng, dims.n_ut, dims.s_u())).collect(),
        };
        let l = ch.elements();
        let ios = project_state(&IosState {
            theta_t: random_vec(rng, l),
            phi_t: random_vec(rng, l),
            theta_u: random_vec(rng, l),
            phi_u: random_vec(rng, l),
        });
        (bf, ios)
    }

    #[test]
    fn trace_identity_pins_transpose_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a = gram(&random_mat(&mut rng, 4, 4));
            let b = random_mat(&mut rng, 4, 4);
            let v = random_vec(&mut rng, 4);
            let phi = diag_matrix(&v);
            let lhs = (phi.adjoint() * &a * &phi * &b).trace();
            let rhs = (v.adjoint() * hadamard_transpose(&a, &b) * &v)[(0, 0)];
            assert!((lhs - rhs).norm() < 1e-12 * (1.0 + lhs.norm()));
        }
    }

    #[test]
    fn scalar_trace_identity() {
        let a = CMat::from_element(1, 1, c(2.0, 0.0));
        let b = CMat::from_element(1, 1, c(3.0, 0.0));
        let v = CVec::from_element(1, c(0.3, -0.4));
        let q = hadamard_transpose(&a, &b);
        assert!(((v.adjoint() * q * &v)[(0, 0)].re - 0.25 * 6.0).abs() < 1e-15);
    }

    #[test]
    fn linear_term_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cm = random_mat(&mut rng, 5, 5);
        let v = random_vec(&mut rng, 5);
        let phi = diag_matrix(&v);
        let lhs = (phi.adjoint() * cm.adjoint()).trace() + (&phi * &cm).trace();
        let rhs = 2.0 * v.dotc(&cm.diagonal().conjugate()).re;
        assert!(lhs.im.abs() < 1e-12);
        assert!((lhs.re - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_precoders_leave_only_constant() {
        let ch = small_channels(3, 4);
        let dims = Dims::of(&ch);
        let bf = BeamformerSet::zeros(3, &dims);
        let eff = compose_effective(&ch, &IosState::uniform(4)).unwrap();
        let noise = Noise::from_dbm(3, -80.0);
        let weights = Weights::uniform(3, 0.5);
        let wm = update_wmmse(&eff, &bf, &noise).unwrap();
        let qf = build_quadratic_forms(&ch, &bf, &wm, &weights, &noise).unwrap();
        for m in qf.b.iter().chain(&qf.d).chain(&qf.c_mats).chain(&qf.z_mats) {
            assert_eq!(m.norm(), 0.0);
        }
        assert_eq!(qf.c.norm() + qf.f.norm() + qf.y.norm() + qf.z.norm(), 0.0);
        assert_eq!(qf.r_cg, constant_part(&wm, &weights, &noise).unwrap());
    }

    #[test]
    fn scalar_a_matrix() {
        let s = |x: f64| CMat::from_element(1, 1, c(x, 0.0));
        let (h_iu, u, w, g) = (0.7, 1.3, 2.1, 0.4);
        let ch = ChannelSet::from_parts(s(1.0), s(0.0), s(1.0), vec![s(h_iu)], vec![s(1.0)], vec![vec![s(0.0)]]).unwrap();
        let bf = BeamformerSet {
            v_d: vec![s(1.0)],
            v_u: vec![s(1.0)],
        };
        let wm = WmmseState {
            u_d: vec![s(u)],
            w_d: vec![s(w)],
            u_u: vec![s(u)],
            w_u: vec![s(w)],
        };
        let qf = build_quadratic_forms(&ch, &bf, &wm, &Weights::uniform(1, g), &Noise::uniform(1, 1.0)).unwrap();
        assert!((qf.a[0][(0, 0)].re - g * h_iu * h_iu * u * w * u).abs() < 1e-15);
    }

    #[test]
    fn forms_reproduce_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let weights = Weights {
            gamma_d: vec![0.3, 0.5, 0.8],
            gamma_u: vec![0.6, 0.4, 0.2],
        };
        let noise = Noise::from_dbm(3, -80.0);
        for seed in 0..5 {
            let ch = small_channels(seed, 9);
            let (bf, ios0) = random_state(&ch, &mut rng);
            let bf = BeamformerSet {
                v_d: bf.v_d.iter().map(|v| v.scale(3.0)).collect(),
                v_u: bf.v_u.iter().map(|v| v.scale(2.0)).collect(),
            };
            let eff = compose_effective(&ch, &ios0).unwrap();
            let wm = update_wmmse(&eff, &bf, &noise).unwrap();
            let qf = build_quadratic_forms(&ch, &bf, &wm, &weights, &noise).unwrap();
            let qp = vectorize(&qf);
            // Evaluate at points other than the one used for the decoders.
            for _ in 0..3 {
                let (_, ios) = random_state(&ch, &mut rng);
                let eff = compose_effective(&ch, &ios).unwrap();
                let direct = surrogate_objective(&eff, &bf, &wm, &weights, &noise).unwrap();
                let via_forms = surrogate_from_forms(&qf, &qp, &ios);
                assert!(
                    (direct - via_forms).abs() <= 1e-8 * (1.0 + direct.abs()),
                    "{direct} vs {via_forms}"
                );
            }
        }
    }

    #[test]
    fn aggregated_matrices_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = small_channels(1, 16);
        let (bf, ios) = random_state(&ch, &mut rng);
        let noise = Noise::from_dbm(3, -80.0);
        let wm = update_wmmse(&compose_effective(&ch, &ios).unwrap(), &bf, &noise).unwrap();
        let qf = build_quadratic_forms(&ch, &bf, &wm, &Weights::uniform(3, 0.5), &noise).unwrap();
        let qp = vectorize(&qf);
        for q in [&qp.t.q_theta, &qp.t.q_phi, &qp.u.q_theta, &qp.u.q_phi] {
            assert!((q - q.adjoint()).norm() <= 1e-12 * q.norm());
            let (vals, _) = hermitian_eigen(q);
            let tr: f64 = vals.iter().sum();
            assert!(vals[0] >= -1e-9 * tr);
        }
    }

    #[test]
    fn projection_examples() {
        let (a, b) = project_feasible(c(0.0, 0.0), c(0.0, 0.0));
        assert_eq!((a, b), (c(0.0, 0.0), c(0.0, 0.0)));
        let r2 = 2f64.sqrt();
        let (a, b) = project_feasible(c(r2, 0.0), c(r2, 0.0));
        assert!((a - c(r2 / 2.0, 0.0)).norm() < 1e-15);
        assert!((b - c(r2 / 2.0, 0.0)).norm() < 1e-15);
        assert!((a.norm_sqr() + b.norm_sqr() - 1.0).abs() < 1e-15);
        let inside = (c(0.3, 0.1), c(-0.2, 0.4));
        assert_eq!(project_feasible(inside.0, inside.1), inside);
    }

    #[test]
    fn projection_is_nearest_point() {
        // Compare with a polar grid over the unit sphere surface in C^2 = R^4.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let t = c(rng.random::<f64>() * 3.0 - 1.5, rng.random::<f64>() * 3.0 - 1.5);
            let p = c(rng.random::<f64>() * 3.0 - 1.5, rng.random::<f64>() * 3.0 - 1.5);
            if t.norm_sqr() + p.norm_sqr() <= 1.0 {
                continue;
            }
            let (pt, pp) = project_feasible(t, p);
            let dist = ((pt - t).norm_sqr() + (pp - p).norm_sqr()).sqrt();
            let n = 24;
            let mut best = f64::INFINITY;
            for i in 0..=n {
                let psi = 0.5 * PI * i as f64 / n as f64;
                for j in 0..n {
                    for k in 0..n {
                        let gt = C64::from_polar(psi.cos(), 2.0 * PI * j as f64 / n as f64);
                        let gp = C64::from_polar(psi.sin(), 2.0 * PI * k as f64 / n as f64);
                        best = best.min(((gt - t).norm_sqr() + (gp - p).norm_sqr()).sqrt());
                    }
                }
            }
            assert!(dist <= best + 1e-12);
        }
    }

    fn identity_side(l: usize, b_phi: CVec) -> SideQp {
        SideQp {
            q_theta: eye(l),
            b_theta: CVec::zeros(l),
            q_phi: eye(l),
            b_phi,
        }
    }

    #[test]
    fn interior_optimum() {
        let mut b = CVec::zeros(3);
        b[0] = c(0.3, 0.0);
        let qp = identity_side(3, b);
        let z = CVec::zeros(3);
        let (theta, phi, _) = solve_side(&qp, (&z, &z), &PgdSettings::default()).unwrap();
        assert!((phi[0] - c(0.3, 0.0)).norm() < 1e-6);
        assert!(theta.norm() < 1e-6 && phi.rows(1, 2).norm() < 1e-6);
    }

    #[test]
    fn boundary_optimum_takes_phase_of_linear_term() {
        let mut b = CVec::zeros(2);
        b[0] = C64::from_polar(2.0, 0.7);
        let qp = identity_side(2, b);
        let init = CVec::from_element(2, c(FRAC_1_SQRT_2, 0.0));
        let (theta, phi, _) = solve_side(&qp, (&init, &init), &PgdSettings::default()).unwrap();
        assert!((phi[0].norm() - 1.0).abs() < 1e-6);
        assert!((phi[0].arg() - 0.7).abs() < 1e-6);
        assert!(theta[0].norm() < 1e-6);
    }

    #[test]
    fn pgd_descends_and_stays_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let l = 6;
            let qp = SideQp {
                q_theta: gram(&random_mat(&mut rng, l, l)),
                b_theta: random_vec(&mut rng, l),
                q_phi: gram(&random_mat(&mut rng, l, 2)),
                b_phi: random_vec(&mut rng, l).scale(3.0),
            };
            let init = CVec::from_element(l, c(FRAC_1_SQRT_2, 0.0));
            let f0 = qp.objective(&init, &init);
            let (theta, phi, rep) = solve_side(&qp, (&init, &init), &PgdSettings::default()).unwrap();
            assert!(rep.objective <= f0 + 1e-12);
            for (t, p) in theta.iter().zip(phi.iter()) {
                assert!(t.norm_sqr() + p.norm_sqr() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let l = 4;
        let qp = SideQp {
            q_theta: gram(&random_mat(&mut rng, l, l)),
            b_theta: random_vec(&mut rng, l),
            q_phi: gram(&random_mat(&mut rng, l, l)),
            b_phi: random_vec(&mut rng, l),
        };
        let theta = random_vec(&mut rng, l);
        let phi = random_vec(&mut rng, l);
        let (gt, _) = qp.gradient(&theta, &phi);
        let h = 1e-6;
        for i in 0..l {
            for (dir, part) in [(c(1.0, 0.0), 0), (c(0.0, 1.0), 1)] {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[i] += dir * h;
                dn[i] -= dir * h;
                let fd = (qp.objective(&up, &phi) - qp.objective(&dn, &phi)) / (2.0 * h);
                let an = if part == 0 { gt[i].re } else { gt[i].im };
                assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()));
            }
        }
    }

    #[test]
    fn non_psd_input_rejected() {
        let mut q = eye(2);
        q[(1, 1)] = c(-1.0, 0.0);
        let qp = SideQp {
            q_theta: q,
            b_theta: CVec::zeros(2),
            q_phi: eye(2),
            b_phi: CVec::zeros(2),
        };
        let z = CVec::zeros(2);
        assert!(matches!(solve_side(&qp, (&z, &z), &PgdSettings::default()), Err(Error::Numerical(_))));
    }

    #[test]
    fn lowering_g_raises_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let noise = Noise::from_dbm(3, -80.0);
        let weights = Weights::uniform(3, 0.5);
        for seed in 0..3 {
            let ch = small_channels(seed, 16);
            let (bf, ios) = random_state(&ch, &mut rng);
            let bf = BeamformerSet {
                v_d: bf.v_d.iter().map(|v| v.scale(2.0)).collect(),
                v_u: bf.v_u.clone(),
            };
            let eff = compose_effective(&ch, &ios).unwrap();
            let wm = update_wmmse(&eff, &bf, &noise).unwrap();
            let before = surrogate_objective(&eff, &bf, &wm, &weights, &noise).unwrap();
            let qp = vectorize(&build_quadratic_forms(&ch, &bf, &wm, &weights, &noise).unwrap());
            let (next, _) = solve_qcqp(&qp, &ios, &PgdSettings::default()).unwrap();
            let after = surrogate_objective(&compose_effective(&ch, &next).unwrap(), &bf, &wm, &weights, &noise).unwrap();
            assert!(after >= before - 1e-9 * (1.0 + before.abs()));
        }
    }
}
