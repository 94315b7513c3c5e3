//! Random problem instances shared by the integration suites.
#![allow(dead_code)]

use dsios_core::beamformer::Budgets;
use dsios_core::geometry::{build_layout, sample_channels_with_direct, ArrayConfig, FadingParams};
use dsios_core::linalg::{CMat, CVec, C64};
use dsios_core::system::{dbm_to_mw, Dims};
use dsios_core::{BeamformerSet, ChannelSet, IosState, Noise, RunConfig, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cgauss(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn cmat(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cgauss(rng) * scale)
}

pub fn cvec(rng: &mut impl Rng, n: usize, scale: f64) -> CVec {
    CVec::from_fn(n, |_, _| cgauss(rng) * scale)
}

/// Hermitian PSD matrix of the given rank with unit trace.
pub fn psd(rng: &mut impl Rng, n: usize, rank: usize) -> CMat {
    let m = cmat(rng, n, rank, 1.0);
    let q = &m * m.adjoint();
    let tr = q.trace().re;
    q.unscale(tr)
}

fn feasible_pair(rng: &mut impl Rng) -> (C64, C64) {
    let r: f64 = rng.random::<f64>().sqrt();
    let split: f64 = rng.random::<f64>() * std::f64::consts::FRAC_PI_2;
    let p1: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let p2: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    (C64::from_polar(r * split.cos(), p1), C64::from_polar(r * split.sin(), p2))
}

/// Feasible surface state with random amplitudes and phases.
pub fn random_ios(rng: &mut impl Rng, l: usize) -> IosState {
    let mut s = IosState::zeros(l);
    for i in 0..l {
        (s.theta_t[i], s.phi_t[i]) = feasible_pair(rng);
        (s.theta_u[i], s.phi_u[i]) = feasible_pair(rng);
    }
    s
}

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub k: usize,
    pub n_t: usize,
    pub n_r: usize,
    pub n_ut: usize,
    pub n_ur: usize,
    pub l: usize,
}

impl Shape {
    pub fn random(rng: &mut impl Rng, max_k: usize, max_n: usize, max_l: usize) -> Self {
        Self {
            k: rng.random_range(1..=max_k),
            n_t: rng.random_range(1..=max_n),
            n_r: rng.random_range(1..=max_n),
            n_ut: rng.random_range(1..=max_n),
            n_ur: rng.random_range(1..=max_n),
            l: rng.random_range(1..=max_l),
        }
    }
}

/// Unit-scale channels, with direct links, of the given shape.
pub fn random_channels(rng: &mut impl Rng, s: Shape) -> ChannelSet {
    let ch = ChannelSet::from_parts(
        cmat(rng, s.l, s.n_t, 1.0),
        cmat(rng, s.n_r, s.n_t, 0.3),
        cmat(rng, s.l, s.n_r, 1.0),
        (0..s.k).map(|_| cmat(rng, s.l, s.n_ur, 1.0)).collect(),
        (0..s.k).map(|_| cmat(rng, s.l, s.n_ut, 1.0)).collect(),
        (0..s.k)
            .map(|_| (0..s.k).map(|_| cmat(rng, s.n_ur, s.n_ut, 0.3)).collect())
            .collect(),
    )
    .unwrap();
    ch.with_direct(
        (0..s.k).map(|_| cmat(rng, s.n_ur, s.n_t, 1.0)).collect(),
        (0..s.k).map(|_| cmat(rng, s.n_r, s.n_ut, 1.0)).collect(),
    )
    .unwrap()
}

pub fn random_beamformers(rng: &mut impl Rng, ch: &ChannelSet, scale: f64) -> BeamformerSet {
    let dims = Dims::of(ch);
    let k = ch.users();
    BeamformerSet {
        v_d: (0..k).map(|_| cmat(rng, dims.n_t, dims.s_d(), scale)).collect(),
        v_u: (0..k).map(|_| cmat(rng, dims.n_ut, dims.s_u(), scale)).collect(),
    }
}

pub fn random_weights(rng: &mut impl Rng, k: usize) -> Weights {
    Weights {
        gamma_d: (0..k).map(|_| rng.random_range(0.05..0.95)).collect(),
        gamma_u: (0..k).map(|_| rng.random_range(0.05..0.95)).collect(),
    }
}

pub fn random_noise(rng: &mut impl Rng, k: usize) -> Noise {
    Noise {
        sigma2_user: (0..k).map(|_| rng.random_range(0.1..2.0)).collect(),
        sigma2_rx: rng.random_range(0.1..2.0),
    }
}

/// A fully specified random instance at unit scale.
pub struct Instance {
    pub ch: ChannelSet,
    pub ios: IosState,
    pub bf: BeamformerSet,
    pub weights: Weights,
    pub noise: Noise,
}

pub fn random_instance(seed: u64, max_k: usize, max_n: usize, max_l: usize) -> Instance {
    let mut r = rng(seed);
    let shape = Shape::random(&mut r, max_k, max_n, max_l);
    let ch = random_channels(&mut r, shape);
    let ios = random_ios(&mut r, shape.l);
    let bf = random_beamformers(&mut r, &ch, 1.0);
    let weights = random_weights(&mut r, shape.k);
    let noise = random_noise(&mut r, shape.k);
    Instance {
        ch,
        ios,
        bf,
        weights,
        noise,
    }
}

/// Default-geometry channels with the first `k` default users.
pub fn reference_channels(seed: u64, elements: usize, k: usize) -> ChannelSet {
    let defaults = ArrayConfig::default();
    let cfg = ArrayConfig {
        elements,
        user_anchors: defaults.user_anchors[..k].to_vec(),
        ..defaults
    };
    sample_channels_with_direct(&build_layout(&cfg).unwrap(), &FadingParams::default(), seed).unwrap()
}

pub fn reference_run_config(k: usize, p_b_dbm: f64, p_u_dbm: f64) -> RunConfig {
    RunConfig {
        weights: Weights::uniform(k, 0.5),
        noise: Noise::from_dbm(k, -80.0),
        budgets: Budgets {
            p_b: dbm_to_mw(p_b_dbm),
            p_u: dbm_to_mw(p_u_dbm),
        },
    }
}
