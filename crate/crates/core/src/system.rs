//! Optimization state, effective channels and exact rate evaluation.
//!
//! Rates are computed in nats internally and converted to bits/s/Hz only in
//! [`RateReport`].

use std::f64::consts::{LN_2, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ChannelSet;
use crate::linalg::{adjoint_diag_mul, frob2, gram, hpd_cholesky, logdet_of, CMat, CVec, C64};

/// Feasibility slack on `|theta_l|^2 + |phi_l|^2 <= 1`.
pub const IOS_FEASIBILITY_TOL: f64 = 1e-9;

/// Which face of the surface a coefficient pair belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Waves arriving from the transceiver.
    T,
    /// Waves arriving from the users.
    U,
}

/// Reflection (`theta`) and refraction (`phi`) coefficients for both faces.
#[derive(Debug, Clone, PartialEq)]
pub struct IosState {
    pub theta_t: CVec,
    pub phi_t: CVec,
    pub theta_u: CVec,
    pub phi_u: CVec,
}

impl IosState {
    pub fn zeros(l: usize) -> Self {
        let z = CVec::zeros(l);
        Self {
            theta_t: z.clone(),
            phi_t: z.clone(),
            theta_u: z.clone(),
            phi_u: z,
        }
    }

    /// Even power split with zero phase on every element.
    pub fn uniform(l: usize) -> Self {
        let v = CVec::from_element(l, C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0));
        Self {
            theta_t: v.clone(),
            phi_t: v.clone(),
            theta_u: v.clone(),
            phi_u: v,
        }
    }

    pub fn elements(&self) -> usize {
        self.theta_t.len()
    }

    pub fn side(&self, side: Side) -> (&CVec, &CVec) {
        match side {
            Side::T => (&self.theta_t, &self.phi_t),
            Side::U => (&self.theta_u, &self.phi_u),
        }
    }

    pub fn side_mut(&mut self, side: Side) -> (&mut CVec, &mut CVec) {
        match side {
            Side::T => (&mut self.theta_t, &mut self.phi_t),
            Side::U => (&mut self.theta_u, &mut self.phi_u),
        }
    }

    /// Largest `|theta_l|^2 + |phi_l|^2 - 1` over both faces (negative when strictly inside).
    pub fn max_violation(&self) -> f64 {
        [Side::T, Side::U]
            .iter()
            .flat_map(|&s| {
                let (th, ph) = self.side(s);
                th.iter().zip(ph.iter()).map(|(a, b)| a.norm_sqr() + b.norm_sqr() - 1.0)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_feasible(&self) -> bool {
        self.all_finite() && self.max_violation() <= IOS_FEASIBILITY_TOL
    }

    pub fn all_finite(&self) -> bool {
        [&self.theta_t, &self.phi_t, &self.theta_u, &self.phi_u]
            .iter()
            .all(|v| v.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    /// Elementwise sum; used to check linearity of channel composition.
    pub fn add(&self, other: &Self) -> Self {
        Self {
            theta_t: &self.theta_t + &other.theta_t,
            phi_t: &self.phi_t + &other.phi_t,
            theta_u: &self.theta_u + &other.theta_u,
            phi_u: &self.phi_u + &other.phi_u,
        }
    }
}

/// Amplitude and phase of a coefficient, with the phase in `[0, 2 pi)`.
pub fn amplitude_phase(z: C64) -> (f64, f64) {
    let a = z.norm();
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let p = z.arg().rem_euclid(TAU);
    (a, if p >= TAU { 0.0 } else { p })
}

/// Downlink and uplink precoders of every user.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    /// `N_t x s_d` per user.
    pub v_d: Vec<CMat>,
    /// `N_ut x s_u` per user.
    pub v_u: Vec<CMat>,
}

impl BeamformerSet {
    pub fn zeros(k: usize, dims: &Dims) -> Self {
        Self {
            v_d: vec![CMat::zeros(dims.n_t, dims.s_d()); k],
            v_u: vec![CMat::zeros(dims.n_ut, dims.s_u()); k],
        }
    }

    pub fn users(&self) -> usize {
        self.v_d.len()
    }

    /// `sum_k Tr(V_kd V_kd^H)`.
    pub fn downlink_power(&self) -> f64 {
        self.v_d.iter().map(frob2).sum()
    }

    /// `Tr(V_ku V_ku^H)`.
    pub fn uplink_power(&self, k: usize) -> f64 {
        frob2(&self.v_u[k])
    }
}

/// Antenna counts shared by every user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_t: usize,
    pub n_r: usize,
    pub n_ut: usize,
    pub n_ur: usize,
}

impl Dims {
    pub fn of(ch: &ChannelSet) -> Self {
        Self {
            n_t: ch.n_t(),
            n_r: ch.n_r(),
            n_ut: ch.n_ut(),
            n_ur: ch.n_ur(),
        }
    }

    pub fn s_d(&self) -> usize {
        self.n_t.min(self.n_ur)
    }

    pub fn s_u(&self) -> usize {
        self.n_r.min(self.n_ut)
    }
}

/// Rate weights `gamma_kd`, `gamma_ku`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub gamma_d: Vec<f64>,
    pub gamma_u: Vec<f64>,
}

impl Weights {
    pub fn uniform(k: usize, gamma: f64) -> Self {
        Self {
            gamma_d: vec![gamma; k],
            gamma_u: vec![gamma; k],
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.gamma_d.len() != k || self.gamma_u.len() != k {
            return Err(Error::Parameter(format!(
                "expected {k} downlink and uplink weights, got {} and {}",
                self.gamma_d.len(),
                self.gamma_u.len()
            )));
        }
        if let Some(g) = self
            .gamma_d
            .iter()
            .chain(&self.gamma_u)
            .find(|g| !(**g > 0.0 && **g < 1.0))
        {
            return Err(Error::Parameter(format!("weights must lie in (0, 1), got {g}")));
        }
        Ok(())
    }
}

/// White noise powers in linear units (mW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    /// Per-user receiver noise `sigma_uk^2`.
    pub sigma2_user: Vec<f64>,
    /// Transceiver receive noise `sigma_r^2`.
    pub sigma2_rx: f64,
}

impl Noise {
    pub fn uniform(k: usize, sigma2: f64) -> Self {
        Self {
            sigma2_user: vec![sigma2; k],
            sigma2_rx: sigma2,
        }
    }

    pub fn from_dbm(k: usize, dbm: f64) -> Self {
        Self::uniform(k, dbm_to_mw(dbm))
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.sigma2_user.len() != k {
            return Err(Error::Parameter(format!(
                "expected {k} user noise powers, got {}",
                self.sigma2_user.len()
            )));
        }
        if let Some(s) = self
            .sigma2_user
            .iter()
            .chain(std::iter::once(&self.sigma2_rx))
            .find(|s| !(s.is_finite() && **s > 0.0))
        {
            return Err(Error::Parameter(format!("noise power must be positive, got {s}")));
        }
        Ok(())
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Channels seen by the beamformers once the surface is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    /// Transmitter -> user `k`, `N_ur x N_t`.
    pub h_kd: Vec<CMat>,
    /// `h_jk[j][k]`: user `j` transmit -> user `k` receive, `N_ur x N_ut`.
    pub h_jk: Vec<Vec<CMat>>,
    /// User `k` -> receiver, `N_r x N_ut`.
    pub h_ku: Vec<CMat>,
    /// Self-interference path, `N_r x N_t`.
    pub h_t: CMat,
}

impl EffectiveChannels {
    pub fn users(&self) -> usize {
        self.h_kd.len()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n_t: self.h_t.ncols(),
            n_r: self.h_t.nrows(),
            n_ut: self.h_ku[0].ncols(),
            n_ur: self.h_kd[0].nrows(),
        }
    }
}

fn check_len(v: &CVec, l: usize, name: &str) -> Result<()> {
    if v.len() != l {
        return Err(Error::Structural(format!("{name} has length {}, expected {l}", v.len())));
    }
    Ok(())
}

/// Cascaded channels through the surface plus the direct user-user and
/// transmitter-receiver links.
pub fn compose_effective(ch: &ChannelSet, ios: &IosState) -> Result<EffectiveChannels> {
    let l = ch.elements();
    check_len(&ios.theta_t, l, "theta_t")?;
    check_len(&ios.phi_t, l, "phi_t")?;
    check_len(&ios.theta_u, l, "theta_u")?;
    check_len(&ios.phi_u, l, "phi_u")?;
    let k_users = ch.users();
    let h_iu: Vec<CMat> = (0..k_users).map(|k| ch.h_iu(k)).collect();
    let h_ui: Vec<CMat> = (0..k_users).map(|k| ch.h_ui(k)).collect();

    let h_kd = h_iu.iter().map(|iu| adjoint_diag_mul(iu, &ios.phi_t, &ch.h_ti)).collect();
    let h_ku = h_ui.iter().map(|ui| adjoint_diag_mul(&ch.h_ir, &ios.phi_u, ui)).collect();
    let h_jk = (0..k_users)
        .map(|j| {
            (0..k_users)
                .map(|k| &ch.h_uu[j][k] + adjoint_diag_mul(&h_iu[k], &ios.theta_u, &h_ui[j]))
                .collect()
        })
        .collect();
    let h_t = &ch.h_tr + adjoint_diag_mul(&ch.h_ir, &ios.theta_t, &ch.h_ti);
    Ok(EffectiveChannels { h_kd, h_jk, h_ku, h_t })
}

/// Channels without any surface: the direct transmitter-user and
/// user-receiver links replace the cascades.
pub fn compose_direct(ch: &ChannelSet) -> Result<EffectiveChannels> {
    let (tu, ur) = match (&ch.h_direct_tu, &ch.h_direct_ur) {
        (Some(tu), Some(ur)) => (tu, ur),
        _ => {
            return Err(Error::Structural(
                "direct channels were not sampled for this realization".into(),
            ))
        }
    };
    Ok(EffectiveChannels {
        h_kd: tu.clone(),
        h_jk: ch.h_uu.clone(),
        h_ku: ur.clone(),
        h_t: ch.h_tr.clone(),
    })
}

fn add_sigma(mut m: CMat, sigma2: f64) -> CMat {
    for i in 0..m.nrows() {
        m[(i, i)] += sigma2;
    }
    m
}

fn check_user(eff: &EffectiveChannels, bf: &BeamformerSet, k: usize) -> Result<()> {
    let n = eff.users();
    if k >= n || bf.v_d.len() != n || bf.v_u.len() != n {
        return Err(Error::Structural(format!(
            "user {k} out of range for {n} channel users and {} beamformer users",
            bf.v_d.len()
        )));
    }
    Ok(())
}

/// Interference-plus-noise covariance at user `k`:
/// `sum_j H_jk V_ju V_ju^H H_jk^H + sigma^2 I`.
pub fn downlink_interference(eff: &EffectiveChannels, bf: &BeamformerSet, k: usize, sigma2: f64) -> CMat {
    let n = eff.h_kd[k].nrows();
    let mut acc = CMat::zeros(n, n);
    for j in 0..eff.users() {
        acc += gram(&(&eff.h_jk[j][k] * &bf.v_u[j]));
    }
    add_sigma(acc, sigma2)
}

/// Interference-plus-noise covariance of uplink `k` at the receiver:
/// other uplinks plus the self-interference of every downlink stream.
pub fn uplink_interference(eff: &EffectiveChannels, bf: &BeamformerSet, k: usize, sigma2: f64) -> CMat {
    let n = eff.h_t.nrows();
    let mut acc = CMat::zeros(n, n);
    for j in 0..eff.users() {
        if j != k {
            acc += gram(&(&eff.h_ku[j] * &bf.v_u[j]));
        }
        acc += gram(&(&eff.h_t * &bf.v_d[j]));
    }
    add_sigma(acc, sigma2)
}

/// `ln |I + S N^{-1}| = ln |S + N| - ln |N|` with both terms from Cholesky factors.
pub fn log_det_ratio(signal: &CMat, interference: &CMat) -> Result<f64> {
    let n_chol = hpd_cholesky(interference)?;
    let t_chol = hpd_cholesky(&(signal + interference))?;
    Ok((logdet_of(&t_chol) - logdet_of(&n_chol)).max(0.0))
}

fn check_sigma(sigma2: f64) -> Result<()> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::Numerical(format!("noise power must be positive, got {sigma2}")));
    }
    Ok(())
}

pub fn downlink_rate_nats(eff: &EffectiveChannels, bf: &BeamformerSet, k: usize, sigma2: f64) -> Result<f64> {
    check_user(eff, bf, k)?;
    check_sigma(sigma2)?;
    let s = gram(&(&eff.h_kd[k] * &bf.v_d[k]));
    log_det_ratio(&s, &downlink_interference(eff, bf, k, sigma2))
}

pub fn uplink_rate_nats(eff: &EffectiveChannels, bf: &BeamformerSet, k: usize, sigma2: f64) -> Result<f64> {
    check_user(eff, bf, k)?;
    check_sigma(sigma2)?;
    let s = gram(&(&eff.h_ku[k] * &bf.v_u[k]));
    log_det_ratio(&s, &uplink_interference(eff, bf, k, sigma2))
}

/// Downlink rate of user `k` in bits/s/Hz.
pub fn downlink_rate(eff: &EffectiveChannels, bf: &BeamformerSet, k: usize, sigma2: f64) -> Result<f64> {
    Ok(downlink_rate_nats(eff, bf, k, sigma2)? / LN_2)
}

/// Uplink rate of user `k` in bits/s/Hz.
pub fn uplink_rate(eff: &EffectiveChannels, bf: &BeamformerSet, k: usize, sigma2: f64) -> Result<f64> {
    Ok(uplink_rate_nats(eff, bf, k, sigma2)? / LN_2)
}

/// Per-user rates and their weighted sum, in bits/s/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub r_down: Vec<f64>,
    pub r_up: Vec<f64>,
    pub weighted_sum: f64,
    pub gamma_d: Vec<f64>,
    pub gamma_u: Vec<f64>,
}

impl RateReport {
    pub fn weighted_sum_nats(&self) -> f64 {
        self.weighted_sum * LN_2
    }
}

pub fn weighted_sum_rate(
    eff: &EffectiveChannels,
    bf: &BeamformerSet,
    weights: &Weights,
    noise: &Noise,
) -> Result<RateReport> {
    let k_users = eff.users();
    weights.validate(k_users)?;
    noise.validate(k_users)?;
    let mut r_down = Vec::with_capacity(k_users);
    let mut r_up = Vec::with_capacity(k_users);
    let mut weighted_sum = 0.0;
    for k in 0..k_users {
        let d = downlink_rate(eff, bf, k, noise.sigma2_user[k])?;
        let u = uplink_rate(eff, bf, k, noise.sigma2_rx)?;
        weighted_sum += weights.gamma_d[k] * d + weights.gamma_u[k] * u;
        r_down.push(d);
        r_up.push(u);
    }
    Ok(RateReport {
        r_down,
        r_up,
        weighted_sum,
        gamma_d: weights.gamma_d.clone(),
        gamma_u: weights.gamma_u.clone(),
    })
}
