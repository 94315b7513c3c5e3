//! Array geometry and per-realization channel sampling.
//!
//! Positions are in meters. Every link uses the spherical-wave phase
//! `exp(-j 2 pi r / lambda)`; Rician links mix that line-of-sight term with a
//! unit-variance circularly-symmetric Gaussian scatter term.
//!
//! | link                    | amplitude                                   | fading  |
//! |-------------------------|---------------------------------------------|---------|
//! | transmitter -> IOS      | `lambda sqrt(G_t) / (4 pi r)`               | LoS     |
//! | transmitter -> receiver | `lambda sqrt(G_t G_r) / (4 pi r^(kappa/2))` | Rician  |
//! | IOS <-> user            | `lambda / (4 pi r^(kappa/2))`               | Rician  |
//! | IOS -> receiver         | `lambda sqrt(G_r) / (4 pi r)`               | LoS     |
//! | user -> user            | `lambda / (4 pi r)`                         | Rician  |
//! | direct (no IOS)         | `lambda / (4 pi r^(kappa/2))`               | Rician  |
//!
//! Scatter draws are consumed in a fixed order: transmitter->receiver
//! row-major, then each user's IOS matrix row-major, then user->user pairs
//! (transmitting user outer, receiving user inner, entries row-major), then
//! the direct transmitter->user matrices followed by the direct user->receiver
//! matrices.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};

pub type Point3 = Vector3<f64>;

const MIN_DISTANCE: f64 = 1e-12;

/// User-facing description of where each array sits and how it is oriented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub tx_anchor: [f64; 3],
    pub rx_anchor: [f64; 3],
    pub ios_anchor: [f64; 3],
    /// Receive-array anchor of each user.
    pub user_anchors: Vec<[f64; 3]>,
    /// Offset from a user's receive array to its transmit array.
    pub user_tx_offset: [f64; 3],
    pub n_t: usize,
    pub n_r: usize,
    pub n_ut: usize,
    pub n_ur: usize,
    /// Number of IOS elements `L`.
    pub elements: usize,
    pub wavelength: f64,
    /// Direction along which linear antenna arrays extend.
    pub antenna_axis: [f64; 3],
    /// In-plane axes of the IOS planar array.
    pub ios_row_axis: [f64; 3],
    pub ios_col_axis: [f64; 3],
    /// IOS face normal pointing toward the transceiver.
    pub ios_normal: [f64; 3],
    pub tx_boresight: [f64; 3],
    pub rx_boresight: [f64; 3],
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            tx_anchor: [0.0, 0.0, 5.0],
            rx_anchor: [0.0, 1.0, 5.0],
            ios_anchor: [1.0, 1.0, 5.0],
            user_anchors: vec![[20.0, 20.0, 1.5], [25.0, -35.0, 1.5], [35.0, -25.0, 1.5]],
            user_tx_offset: [0.0, 1.0, 0.0],
            n_t: 2,
            n_r: 2,
            n_ut: 2,
            n_ur: 2,
            elements: 16,
            wavelength: 0.05,
            antenna_axis: [0.0, 0.0, 1.0],
            ios_row_axis: [0.0, 1.0, 0.0],
            ios_col_axis: [0.0, 0.0, 1.0],
            ios_normal: [-1.0, 0.0, 0.0],
            tx_boresight: [1.0, 1.0, 0.0],
            rx_boresight: [1.0, 0.0, 0.0],
        }
    }
}

impl ArrayConfig {
    pub fn users(&self) -> usize {
        self.user_anchors.len()
    }
}

/// Concrete element positions for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialLayout {
    pub tx_antenna_positions: Vec<Point3>,
    pub rx_antenna_positions: Vec<Point3>,
    pub ios_element_positions: Vec<Point3>,
    /// Receive antennas of each user.
    pub user_rx_positions: Vec<Vec<Point3>>,
    /// Transmit antennas of each user.
    pub user_tx_positions: Vec<Vec<Point3>>,
    pub carrier_wavelength: f64,
    pub ios_normal: Point3,
    pub tx_boresight: Point3,
    pub rx_boresight: Point3,
}

impl SpatialLayout {
    pub fn users(&self) -> usize {
        self.user_rx_positions.len()
    }

    pub fn elements(&self) -> usize {
        self.ios_element_positions.len()
    }
}

fn unit(v: [f64; 3], what: &str) -> Result<Point3> {
    let p = Point3::from(v);
    let n = p.norm();
    if !n.is_finite() || n <= 0.0 {
        return Err(Error::Geometry(format!("{what} must be a nonzero finite vector")));
    }
    Ok(p / n)
}

fn finite_point(v: [f64; 3], what: &str) -> Result<Point3> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Point3::from(v))
    } else {
        Err(Error::Geometry(format!("{what} has a non-finite coordinate")))
    }
}

fn linear_array(anchor: Point3, axis: Point3, spacing: f64, count: usize) -> Vec<Point3> {
    (0..count).map(|i| anchor + axis * (spacing * i as f64)).collect()
}

/// Near-square planar array; element `i` sits at row `i / cols`, column `i % cols`.
fn planar_array(anchor: Point3, row_axis: Point3, col_axis: Point3, spacing: f64, count: usize) -> Vec<Point3> {
    let cols = (count as f64).sqrt().ceil().max(1.0) as usize;
    (0..count)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            anchor + row_axis * (spacing * c as f64) + col_axis * (spacing * r as f64)
        })
        .collect()
}

fn min_distance(a: &[Point3], b: &[Point3]) -> f64 {
    a.iter()
        .flat_map(|p| b.iter().map(move |q| (p - q).norm()))
        .fold(f64::INFINITY, f64::min)
}

/// Places uniform arrays with half-wavelength spacing at the configured anchors.
pub fn build_layout(cfg: &ArrayConfig) -> Result<SpatialLayout> {
    for (name, n) in [
        ("n_t", cfg.n_t),
        ("n_r", cfg.n_r),
        ("n_ut", cfg.n_ut),
        ("n_ur", cfg.n_ur),
        ("elements", cfg.elements),
    ] {
        if n == 0 {
            return Err(Error::Parameter(format!("{name} must be at least 1")));
        }
    }
    if cfg.user_anchors.is_empty() {
        return Err(Error::Parameter("at least one user is required".into()));
    }
    if !(cfg.wavelength.is_finite() && cfg.wavelength > 0.0) {
        return Err(Error::Parameter(format!(
            "wavelength must be positive, got {}",
            cfg.wavelength
        )));
    }
    let spacing = cfg.wavelength / 2.0;
    let axis = unit(cfg.antenna_axis, "antenna_axis")?;
    let row_axis = unit(cfg.ios_row_axis, "ios_row_axis")?;
    let col_axis = unit(cfg.ios_col_axis, "ios_col_axis")?;

    let tx = linear_array(finite_point(cfg.tx_anchor, "tx_anchor")?, axis, spacing, cfg.n_t);
    let rx = linear_array(finite_point(cfg.rx_anchor, "rx_anchor")?, axis, spacing, cfg.n_r);
    let ios = planar_array(
        finite_point(cfg.ios_anchor, "ios_anchor")?,
        row_axis,
        col_axis,
        spacing,
        cfg.elements,
    );
    let offset = finite_point(cfg.user_tx_offset, "user_tx_offset")?;
    let mut user_rx = Vec::with_capacity(cfg.users());
    let mut user_tx = Vec::with_capacity(cfg.users());
    for (k, anchor) in cfg.user_anchors.iter().enumerate() {
        let a = finite_point(*anchor, &format!("user_anchors[{k}]"))?;
        user_rx.push(linear_array(a, axis, spacing, cfg.n_ur));
        user_tx.push(linear_array(a + offset, axis, spacing, cfg.n_ut));
    }

    let layout = SpatialLayout {
        tx_antenna_positions: tx,
        rx_antenna_positions: rx,
        ios_element_positions: ios,
        user_rx_positions: user_rx,
        user_tx_positions: user_tx,
        carrier_wavelength: cfg.wavelength,
        ios_normal: unit(cfg.ios_normal, "ios_normal")?,
        tx_boresight: unit(cfg.tx_boresight, "tx_boresight")?,
        rx_boresight: unit(cfg.rx_boresight, "rx_boresight")?,
    };
    check_distances(&layout)?;
    Ok(layout)
}

fn check_distances(layout: &SpatialLayout) -> Result<()> {
    let mut pairs: Vec<(String, f64)> = vec![
        (
            "transmitter-IOS".into(),
            min_distance(&layout.tx_antenna_positions, &layout.ios_element_positions),
        ),
        (
            "receiver-IOS".into(),
            min_distance(&layout.rx_antenna_positions, &layout.ios_element_positions),
        ),
        (
            "transmitter-receiver".into(),
            min_distance(&layout.tx_antenna_positions, &layout.rx_antenna_positions),
        ),
    ];
    for k in 0..layout.users() {
        let (urx, utx) = (&layout.user_rx_positions[k], &layout.user_tx_positions[k]);
        pairs.push((format!("IOS-user {k} rx"), min_distance(&layout.ios_element_positions, urx)));
        pairs.push((format!("IOS-user {k} tx"), min_distance(&layout.ios_element_positions, utx)));
        pairs.push((format!("transmitter-user {k}"), min_distance(&layout.tx_antenna_positions, urx)));
        pairs.push((format!("user {k}-receiver"), min_distance(utx, &layout.rx_antenna_positions)));
        for j in 0..layout.users() {
            pairs.push((
                format!("user {j} tx-user {k} rx"),
                min_distance(&layout.user_tx_positions[j], urx),
            ));
        }
    }
    for (name, d) in pairs {
        if !(d.is_finite() && d > MIN_DISTANCE) {
            return Err(Error::Geometry(format!("{name} distance is {d:e} m")));
        }
    }
    Ok(())
}

/// Cosine-power element pattern `2 (rho + 1) cos^rho(theta)` on the front
/// hemisphere and zero behind it. Integrates to `4 pi` over the hemisphere.
pub fn antenna_gain(theta: f64, exponent: f64) -> Result<f64> {
    if !(exponent.is_finite() && exponent >= 0.0) {
        return Err(Error::Parameter(format!(
            "gain exponent must be nonnegative, got {exponent}"
        )));
    }
    if !theta.is_finite() {
        return Err(Error::Parameter("elevation angle is not finite".into()));
    }
    let theta = theta.abs();
    if theta > FRAC_PI_2 {
        return Ok(0.0);
    }
    // sin(pi/2 - theta) is exact at the horizon where cos(pi/2) is not.
    let cos = (FRAC_PI_2 - theta).sin().max(0.0);
    Ok(2.0 * (exponent + 1.0) * cos.powf(exponent))
}

/// Angle between `axis` and the ray `origin -> target`.
pub fn elevation(origin: &Point3, target: &Point3, axis: &Point3) -> f64 {
    let d = target - origin;
    (d.dot(axis) / d.norm()).clamp(-1.0, 1.0).acos()
}

/// Small-scale and large-scale fading parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingParams {
    /// Linear Rician factor.
    pub rician_factor: f64,
    pub pathloss_exponent: f64,
    pub gain_exponent_tx: f64,
    pub gain_exponent_rx: f64,
    /// When true the user-user link uses the free-space `4 pi r` denominator;
    /// otherwise it decays with `r^(kappa/2)` like the other Rician links.
    pub uu_free_space: bool,
}

impl Default for FadingParams {
    fn default() -> Self {
        Self::from_db(3.0, 2.5, 2.0, 2.0)
    }
}

impl FadingParams {
    pub fn from_db(rician_db: f64, pathloss_exponent: f64, gain_exponent_tx: f64, gain_exponent_rx: f64) -> Self {
        Self {
            rician_factor: 10f64.powf(rician_db / 10.0),
            pathloss_exponent,
            gain_exponent_tx,
            gain_exponent_rx,
            uu_free_space: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rician_factor > 0.0 && !self.rician_factor.is_nan()) {
            return Err(Error::Parameter(format!(
                "Rician factor must be positive, got {}",
                self.rician_factor
            )));
        }
        if !(self.pathloss_exponent.is_finite() && self.pathloss_exponent > 0.0) {
            return Err(Error::Parameter(format!(
                "path-loss exponent must be positive, got {}",
                self.pathloss_exponent
            )));
        }
        if self.pathloss_exponent < 2.0 {
            log::warn!(
                "path-loss exponent {} is below free-space decay",
                self.pathloss_exponent
            );
        }
        for (name, rho) in [("tx", self.gain_exponent_tx), ("rx", self.gain_exponent_rx)] {
            if !(rho.is_finite() && rho >= 0.0) {
                return Err(Error::Parameter(format!("gain exponent {name} must be nonnegative, got {rho}")));
            }
        }
        Ok(())
    }

    fn los_weight(&self) -> f64 {
        if self.rician_factor.is_infinite() {
            1.0
        } else {
            (self.rician_factor / (self.rician_factor + 1.0)).sqrt()
        }
    }

    fn nlos_weight(&self) -> f64 {
        if self.rician_factor.is_infinite() {
            0.0
        } else {
            (1.0 / (self.rician_factor + 1.0)).sqrt()
        }
    }
}

/// All channel matrices of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Transmitter -> IOS, `L x N_t`.
    pub h_ti: CMat,
    /// Transmitter -> receiver, `N_r x N_t`.
    pub h_tr: CMat,
    /// IOS -> receiver, `L x N_r`; the receive map is `h_ir^H`.
    pub h_ir: CMat,
    /// Per-user IOS coefficients, `L x (N_ur + N_ut)`. The first `N_ur`
    /// columns face the user's receive antennas, the rest its transmit antennas.
    user_ios: Vec<CMat>,
    /// `h_uu[j][k]`: user `j` transmit -> user `k` receive, `N_ur x N_ut`.
    pub h_uu: Vec<Vec<CMat>>,
    /// Transmitter -> user `k` without the surface, `N_ur x N_t`.
    pub h_direct_tu: Option<Vec<CMat>>,
    /// User `k` -> receiver without the surface, `N_r x N_ut`.
    pub h_direct_ur: Option<Vec<CMat>>,
    n_ur: usize,
    n_ut: usize,
}

impl ChannelSet {
    /// Assembles a channel set from explicit matrices (tests, external data).
    pub fn from_parts(
        h_ti: CMat,
        h_tr: CMat,
        h_ir: CMat,
        h_iu: Vec<CMat>,
        h_ui: Vec<CMat>,
        h_uu: Vec<Vec<CMat>>,
    ) -> Result<Self> {
        let l = h_ti.nrows();
        let (n_t, n_r) = (h_ti.ncols(), h_ir.ncols());
        let k = h_iu.len();
        if h_ui.len() != k || h_uu.len() != k || k == 0 {
            return Err(Error::Structural("per-user channel lists disagree on K".into()));
        }
        let n_ur = h_iu[0].ncols();
        let n_ut = h_ui[0].ncols();
        if h_tr.shape() != (n_r, n_t) || h_ir.nrows() != l {
            return Err(Error::Structural("transceiver channel shapes disagree".into()));
        }
        let mut user_ios = Vec::with_capacity(k);
        for (iu, ui) in h_iu.iter().zip(&h_ui) {
            if iu.shape() != (l, n_ur) || ui.shape() != (l, n_ut) {
                return Err(Error::Structural("IOS-user channel shape mismatch".into()));
            }
            let mut m = CMat::zeros(l, n_ur + n_ut);
            m.columns_mut(0, n_ur).copy_from(iu);
            m.columns_mut(n_ur, n_ut).copy_from(ui);
            user_ios.push(m);
        }
        for row in &h_uu {
            if row.len() != k || row.iter().any(|m| m.shape() != (n_ur, n_ut)) {
                return Err(Error::Structural("user-user channel shape mismatch".into()));
            }
        }
        Ok(Self {
            h_ti,
            h_tr,
            h_ir,
            user_ios,
            h_uu,
            h_direct_tu: None,
            h_direct_ur: None,
            n_ur,
            n_ut,
        })
    }

    pub fn with_direct(mut self, tu: Vec<CMat>, ur: Vec<CMat>) -> Result<Self> {
        let k = self.users();
        let (n_t, n_r) = (self.n_t(), self.n_r());
        if tu.len() != k || ur.len() != k {
            return Err(Error::Structural("direct channel lists disagree on K".into()));
        }
        if tu.iter().any(|m| m.shape() != (self.n_ur, n_t)) || ur.iter().any(|m| m.shape() != (n_r, self.n_ut)) {
            return Err(Error::Structural("direct channel shape mismatch".into()));
        }
        self.h_direct_tu = Some(tu);
        self.h_direct_ur = Some(ur);
        Ok(self)
    }

    pub fn users(&self) -> usize {
        self.user_ios.len()
    }

    pub fn elements(&self) -> usize {
        self.h_ti.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.h_ti.ncols()
    }

    pub fn n_r(&self) -> usize {
        self.h_ir.ncols()
    }

    pub fn n_ur(&self) -> usize {
        self.n_ur
    }

    pub fn n_ut(&self) -> usize {
        self.n_ut
    }

    /// IOS -> user `k` receive antennas, `L x N_ur` (receive map is its adjoint).
    pub fn h_iu(&self, k: usize) -> CMat {
        self.user_ios[k].columns(0, self.n_ur).into_owned()
    }

    /// User `k` transmit antennas -> IOS, `L x N_ut`. Same stored
    /// coefficients as [`Self::h_iu`], indexed from the user side.
    pub fn h_ui(&self, k: usize) -> CMat {
        self.user_ios[k].columns(self.n_ur, self.n_ut).into_owned()
    }

    /// Raw per-user coefficient block.
    pub fn user_ios_block(&self, k: usize) -> &CMat {
        &self.user_ios[k]
    }

    pub fn all_finite(&self) -> bool {
        let mut mats: Vec<&CMat> = vec![&self.h_ti, &self.h_tr, &self.h_ir];
        mats.extend(self.user_ios.iter());
        mats.extend(self.h_uu.iter().flatten());
        if let Some(v) = &self.h_direct_tu {
            mats.extend(v.iter());
        }
        if let Some(v) = &self.h_direct_ur {
            mats.extend(v.iter());
        }
        mats.into_iter().all(crate::linalg::all_finite)
    }
}

struct Sampler<'a> {
    rng: ChaCha8Rng,
    fading: &'a FadingParams,
    wavelength: f64,
}

impl Sampler<'_> {
    fn los_phase(&self, r: f64) -> C64 {
        C64::from_polar(1.0, -2.0 * PI * r / self.wavelength)
    }

    fn scatter(&mut self) -> C64 {
        let re: f64 = StandardNormal.sample(&mut self.rng);
        let im: f64 = StandardNormal.sample(&mut self.rng);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    fn rician(&mut self, r: f64, amplitude: f64) -> C64 {
        let los = self.los_phase(r) * self.fading.los_weight();
        let nlos = self.scatter() * self.fading.nlos_weight();
        (los + nlos) * amplitude
    }

    fn decay(&self, r: f64) -> f64 {
        r.powf(self.fading.pathloss_exponent / 2.0)
    }

    fn user_user_decay(&self, r: f64) -> f64 {
        if self.fading.uu_free_space {
            r
        } else {
            self.decay(r)
        }
    }
}

/// Draws one realization of every channel except the direct ones.
pub fn sample_channels(layout: &SpatialLayout, fading: &FadingParams, seed: u64) -> Result<ChannelSet> {
    sample_inner(layout, fading, seed, false)
}

/// Like [`sample_channels`] and additionally draws the IOS-free direct links.
/// The shared matrices are bit-identical to those of [`sample_channels`].
pub fn sample_channels_with_direct(layout: &SpatialLayout, fading: &FadingParams, seed: u64) -> Result<ChannelSet> {
    sample_inner(layout, fading, seed, true)
}

fn sample_inner(layout: &SpatialLayout, fading: &FadingParams, seed: u64, direct: bool) -> Result<ChannelSet> {
    fading.validate()?;
    check_distances(layout)?;
    let lambda = layout.carrier_wavelength;
    let four_pi = 4.0 * PI;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
        fading,
        wavelength: lambda,
    };
    let ios = &layout.ios_element_positions;
    let tx = &layout.tx_antenna_positions;
    let rx = &layout.rx_antenna_positions;
    let (l, n_t, n_r) = (ios.len(), tx.len(), rx.len());

    let mut h_ti = CMat::zeros(l, n_t);
    for (i, e) in ios.iter().enumerate() {
        for (m, a) in tx.iter().enumerate() {
            let r = (a - e).norm();
            let g = antenna_gain(elevation(e, a, &layout.ios_normal), fading.gain_exponent_tx)?;
            h_ti[(i, m)] = s.los_phase(r) * (lambda * g.sqrt() / (four_pi * r));
        }
    }

    let mut h_ir = CMat::zeros(l, n_r);
    for (i, e) in ios.iter().enumerate() {
        for (n, b) in rx.iter().enumerate() {
            let r = (b - e).norm();
            let g = antenna_gain(elevation(e, b, &layout.ios_normal), fading.gain_exponent_rx)?;
            h_ir[(i, n)] = s.los_phase(r) * (lambda * g.sqrt() / (four_pi * r));
        }
    }

    let mut h_tr = CMat::zeros(n_r, n_t);
    for (n, b) in rx.iter().enumerate() {
        for (m, a) in tx.iter().enumerate() {
            let r = (b - a).norm();
            let gt = antenna_gain(elevation(a, b, &layout.tx_boresight), fading.gain_exponent_tx)?;
            let gr = antenna_gain(elevation(b, a, &layout.rx_boresight), fading.gain_exponent_rx)?;
            let amp = lambda * (gt * gr).sqrt() / (four_pi * s.decay(r));
            h_tr[(n, m)] = s.rician(r, amp);
        }
    }

    let k_users = layout.users();
    let mut user_ios = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let ants: Vec<&Point3> = layout.user_rx_positions[k]
            .iter()
            .chain(layout.user_tx_positions[k].iter())
            .collect();
        let mut m = CMat::zeros(l, ants.len());
        for (i, e) in ios.iter().enumerate() {
            for (n, u) in ants.iter().enumerate() {
                let r = (*u - e).norm();
                let amp = lambda / (four_pi * s.decay(r));
                m[(i, n)] = s.rician(r, amp);
            }
        }
        user_ios.push(m);
    }

    let mut h_uu = Vec::with_capacity(k_users);
    for j in 0..k_users {
        let mut row = Vec::with_capacity(k_users);
        for k in 0..k_users {
            let (tx_j, rx_k) = (&layout.user_tx_positions[j], &layout.user_rx_positions[k]);
            let mut m = CMat::zeros(rx_k.len(), tx_j.len());
            for (n, b) in rx_k.iter().enumerate() {
                for (mm, a) in tx_j.iter().enumerate() {
                    let r = (b - a).norm();
                    let amp = lambda / (four_pi * s.user_user_decay(r));
                    m[(n, mm)] = s.rician(r, amp);
                }
            }
            row.push(m);
        }
        h_uu.push(row);
    }

    let (h_direct_tu, h_direct_ur) = if direct {
        let mut tu = Vec::with_capacity(k_users);
        for k in 0..k_users {
            let urx = &layout.user_rx_positions[k];
            let mut m = CMat::zeros(urx.len(), n_t);
            for (n, b) in urx.iter().enumerate() {
                for (mm, a) in tx.iter().enumerate() {
                    let r = (b - a).norm();
                    let amp = lambda / (four_pi * s.decay(r));
                    m[(n, mm)] = s.rician(r, amp);
                }
            }
            tu.push(m);
        }
        let mut ur = Vec::with_capacity(k_users);
        for k in 0..k_users {
            let utx = &layout.user_tx_positions[k];
            let mut m = CMat::zeros(n_r, utx.len());
            for (n, b) in rx.iter().enumerate() {
                for (mm, a) in utx.iter().enumerate() {
                    let r = (b - a).norm();
                    let amp = lambda / (four_pi * s.decay(r));
                    m[(n, mm)] = s.rician(r, amp);
                }
            }
            ur.push(m);
        }
        (Some(tu), Some(ur))
    } else {
        (None, None)
    };

    let n_ur = layout.user_rx_positions[0].len();
    let n_ut = layout.user_tx_positions[0].len();
    let set = ChannelSet {
        h_ti,
        h_tr,
        h_ir,
        user_ios,
        h_uu,
        h_direct_tu,
        h_direct_ur,
        n_ur,
        n_ut,
    };
    if !set.all_finite() {
        return Err(Error::Numerical("sampled channel has a non-finite entry".into()));
    }
    Ok(set)
}
