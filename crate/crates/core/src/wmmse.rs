//! MSE matrices, optimal receive filters and weights, and the WMMSE surrogate.

use crate::error::{Error, Result};
use crate::linalg::{gram, hermitian_part, hpd_cholesky, inv_hpd, logdet_of, solve_hpd, trace_re, CMat};
use crate::system::{downlink_interference, uplink_interference, BeamformerSet, EffectiveChannels, Noise, Weights};

/// Receive filters `U` and weights `W` for every downlink and uplink.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    pub u_d: Vec<CMat>,
    pub w_d: Vec<CMat>,
    pub u_u: Vec<CMat>,
    pub w_u: Vec<CMat>,
}

impl WmmseState {
    pub fn users(&self) -> usize {
        self.u_d.len()
    }

    pub fn all_finite(&self) -> bool {
        self.u_d
            .iter()
            .chain(&self.w_d)
            .chain(&self.u_u)
            .chain(&self.w_u)
            .all(crate::linalg::all_finite)
    }
}

/// `(U^H H V - I)(U^H H V - I)^H + U^H N U`.
fn mse(u: &CMat, h: &CMat, v: &CMat, interference: &CMat) -> Result<CMat> {
    let g = u.adjoint() * h * v;
    if g.nrows() != g.ncols() {
        return Err(Error::Structural(format!(
            "U^H H V is {}x{}; decoder and precoder stream counts differ",
            g.nrows(),
            g.ncols()
        )));
    }
    let resid = g - CMat::identity(u.ncols(), u.ncols());
    Ok(hermitian_part(&(gram(&resid) + u.adjoint() * interference * u)))
}

pub fn mse_matrix_down(eff: &EffectiveChannels, bf: &BeamformerSet, u: &CMat, k: usize, sigma2: f64) -> Result<CMat> {
    mse(u, &eff.h_kd[k], &bf.v_d[k], &downlink_interference(eff, bf, k, sigma2))
}

pub fn mse_matrix_up(eff: &EffectiveChannels, bf: &BeamformerSet, u: &CMat, k: usize, sigma2: f64) -> Result<CMat> {
    mse(u, &eff.h_ku[k], &bf.v_u[k], &uplink_interference(eff, bf, k, sigma2))
}

fn mmse_decoder(h: &CMat, v: &CMat, interference: &CMat) -> Result<CMat> {
    let hv = h * v;
    if !crate::linalg::all_finite(&hv) || !crate::linalg::all_finite(interference) {
        return Err(Error::Numerical("non-finite channel or precoder".into()));
    }
    let cov = gram(&hv) + interference;
    solve_hpd(&cov, &hv)
}

/// `(H V V^H H^H + N)^{-1} H V` for downlink `k`.
pub fn optimal_decoder_down(eff: &EffectiveChannels, bf: &BeamformerSet, k: usize, sigma2: f64) -> Result<CMat> {
    mmse_decoder(&eff.h_kd[k], &bf.v_d[k], &downlink_interference(eff, bf, k, sigma2))
}

pub fn optimal_decoder_up(eff: &EffectiveChannels, bf: &BeamformerSet, k: usize, sigma2: f64) -> Result<CMat> {
    mmse_decoder(&eff.h_ku[k], &bf.v_u[k], &uplink_interference(eff, bf, k, sigma2))
}

/// `E(U)^{-1}`.
pub fn optimal_weight_down(eff: &EffectiveChannels, bf: &BeamformerSet, u: &CMat, k: usize, sigma2: f64) -> Result<CMat> {
    inv_hpd(&mse_matrix_down(eff, bf, u, k, sigma2)?)
}

pub fn optimal_weight_up(eff: &EffectiveChannels, bf: &BeamformerSet, u: &CMat, k: usize, sigma2: f64) -> Result<CMat> {
    inv_hpd(&mse_matrix_up(eff, bf, u, k, sigma2)?)
}

/// Optimal decoders followed by the matching optimal weights for all users.
pub fn update_wmmse(eff: &EffectiveChannels, bf: &BeamformerSet, noise: &Noise) -> Result<WmmseState> {
    update_decoders(eff, bf, noise).and_then(|(u_d, u_u)| update_weights(eff, bf, noise, u_d, u_u))
}

pub fn update_decoders(eff: &EffectiveChannels, bf: &BeamformerSet, noise: &Noise) -> Result<(Vec<CMat>, Vec<CMat>)> {
    let k_users = eff.users();
    let u_d = (0..k_users)
        .map(|k| optimal_decoder_down(eff, bf, k, noise.sigma2_user[k]))
        .collect::<Result<Vec<_>>>()?;
    let u_u = (0..k_users)
        .map(|k| optimal_decoder_up(eff, bf, k, noise.sigma2_rx))
        .collect::<Result<Vec<_>>>()?;
    Ok((u_d, u_u))
}

pub fn update_weights(
    eff: &EffectiveChannels,
    bf: &BeamformerSet,
    noise: &Noise,
    u_d: Vec<CMat>,
    u_u: Vec<CMat>,
) -> Result<WmmseState> {
    let k_users = eff.users();
    let w_d = (0..k_users)
        .map(|k| optimal_weight_down(eff, bf, &u_d[k], k, noise.sigma2_user[k]))
        .collect::<Result<Vec<_>>>()?;
    let w_u = (0..k_users)
        .map(|k| optimal_weight_up(eff, bf, &u_u[k], k, noise.sigma2_rx))
        .collect::<Result<Vec<_>>>()?;
    Ok(WmmseState { u_d, w_d, u_u, w_u })
}

fn logdet_weight(w: &CMat) -> Result<f64> {
    Ok(logdet_of(&hpd_cholesky(w)?))
}

/// `Re Tr(W U^H M U)`.
fn weighted_quad(w: &CMat, u: &CMat, m: &CMat) -> f64 {
    trace_re(&(w * u.adjoint() * m * u))
}

/// `Re Tr(W U^H G)` with `G = H V`.
fn weighted_cross(w: &CMat, u: &CMat, g: &CMat) -> f64 {
    trace_re(&(w * u.adjoint() * g))
}

/// The constant part `R_c`: weight log-determinants, weight traces, noise
/// terms and stream counts.
pub fn constant_part(wm: &WmmseState, weights: &Weights, noise: &Noise) -> Result<f64> {
    let mut rc = 0.0;
    for k in 0..wm.users() {
        let (u, w) = (&wm.u_d[k], &wm.w_d[k]);
        rc += weights.gamma_d[k]
            * (logdet_weight(w)? - trace_re(w) - noise.sigma2_user[k] * trace_re(&(w * u.adjoint() * u))
                + w.nrows() as f64);
        let (u, w) = (&wm.u_u[k], &wm.w_u[k]);
        rc += weights.gamma_u[k]
            * (logdet_weight(w)? - trace_re(w) - noise.sigma2_rx * trace_re(&(w * u.adjoint() * u))
                + w.nrows() as f64);
    }
    Ok(rc)
}

/// Weighted surrogate `R_w` in nats, summed from its individual trace terms.
pub fn surrogate_objective(
    eff: &EffectiveChannels,
    bf: &BeamformerSet,
    wm: &WmmseState,
    weights: &Weights,
    noise: &Noise,
) -> Result<f64> {
    let k_users = eff.users();
    let mut total = constant_part(wm, weights, noise)?;
    let hv_u: Vec<CMat> = (0..k_users).map(|j| &eff.h_ku[j] * &bf.v_u[j]).collect();
    let si: Vec<CMat> = (0..k_users).map(|j| &eff.h_t * &bf.v_d[j]).collect();
    for k in 0..k_users {
        let (u, w) = (&wm.u_d[k], &wm.w_d[k]);
        let g = &eff.h_kd[k] * &bf.v_d[k];
        let mut term = 2.0 * weighted_cross(w, u, &g) - weighted_quad(w, u, &gram(&g));
        for j in 0..k_users {
            term -= weighted_quad(w, u, &gram(&(&eff.h_jk[j][k] * &bf.v_u[j])));
        }
        total += weights.gamma_d[k] * term;

        let (u, w) = (&wm.u_u[k], &wm.w_u[k]);
        let mut term = 2.0 * weighted_cross(w, u, &hv_u[k]);
        for j in 0..k_users {
            term -= weighted_quad(w, u, &gram(&si[j]));
            term -= weighted_quad(w, u, &gram(&hv_u[j]));
        }
        total += weights.gamma_u[k] * term;
    }
    Ok(total)
}

/// `sum_k gamma (ln|W| - Tr(W E) + s)` over both directions.
pub fn compact_objective(
    eff: &EffectiveChannels,
    bf: &BeamformerSet,
    wm: &WmmseState,
    weights: &Weights,
    noise: &Noise,
) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..eff.users() {
        let w = &wm.w_d[k];
        let e = mse_matrix_down(eff, bf, &wm.u_d[k], k, noise.sigma2_user[k])?;
        total += weights.gamma_d[k] * (logdet_weight(w)? - trace_re(&(w * e)) + w.nrows() as f64);
        let w = &wm.w_u[k];
        let e = mse_matrix_up(eff, bf, &wm.u_u[k], k, noise.sigma2_rx)?;
        total += weights.gamma_u[k] * (logdet_weight(w)? - trace_re(&(w * e)) + w.nrows() as f64);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, eye, hermitian_eigen};
    use crate::system::{downlink_rate_nats, uplink_rate_nats, weighted_sum_rate, Dims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, cc: usize) -> CMat {
        CMat::from_fn(r, cc, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn instance(seed: u64, k: usize, d: Dims) -> (EffectiveChannels, BeamformerSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eff = EffectiveChannels {
            h_kd: (0..k).map(|_| random_mat(&mut rng, d.n_ur, d.n_t)).collect(),
            h_jk: (0..k).map(|_| (0..k).map(|_| random_mat(&mut rng, d.n_ur, d.n_ut)).collect()).collect(),
            h_ku: (0..k).map(|_| random_mat(&mut rng, d.n_r, d.n_ut)).collect(),
            h_t: random_mat(&mut rng, d.n_r, d.n_t),
        };
        let bf = BeamformerSet {
            v_d: (0..k).map(|_| random_mat(&mut rng, d.n_t, d.s_d())).collect(),
            v_u: (0..k).map(|_| random_mat(&mut rng, d.n_ut, d.s_u())).collect(),
        };
        (eff, bf)
    }

    const D: Dims = Dims {
        n_t: 3,
        n_r: 2,
        n_ut: 2,
        n_ur: 2,
    };

    #[test]
    fn zero_decoder_gives_identity_error() {
        let (eff, bf) = instance(1, 2, D);
        let u = CMat::zeros(2, 2);
        let e = mse_matrix_down(&eff, &bf, &u, 0, 0.3).unwrap();
        assert!((e - eye(2)).norm() < 1e-15);
    }

    #[test]
    fn zero_precoder_error_formula() {
        let (eff, mut bf) = instance(2, 2, D);
        bf.v_d[1] = CMat::zeros(3, 2);
        let u = random_mat(&mut ChaCha8Rng::seed_from_u64(9), 2, 2);
        let n = downlink_interference(&eff, &bf, 1, 0.3);
        let expected = eye(2) + u.adjoint() * n * &u;
        let e = mse_matrix_down(&eff, &bf, &u, 1, 0.3).unwrap();
        assert!((e - expected).norm() < 1e-12);
    }

    #[test]
    fn scalar_decoder_and_weight() {
        let one = CMat::from_element(1, 1, c(1.0, 0.0));
        let eff = EffectiveChannels {
            h_kd: vec![one.clone()],
            h_jk: vec![vec![CMat::zeros(1, 1)]],
            h_ku: vec![one.clone()],
            h_t: CMat::zeros(1, 1),
        };
        let bf = BeamformerSet {
            v_d: vec![one.clone()],
            v_u: vec![CMat::zeros(1, 1)],
        };
        let u = optimal_decoder_down(&eff, &bf, 0, 1.0).unwrap();
        assert!((u[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);
        let e = mse_matrix_down(&eff, &bf, &u, 0, 1.0).unwrap();
        assert!((e[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);
        let w = optimal_weight_down(&eff, &bf, &u, 0, 1.0).unwrap();
        assert!((w[(0, 0)] - c(2.0, 0.0)).norm() < 1e-14);
        let u0 = optimal_decoder_up(&eff, &bf, 0, 1.0).unwrap();
        assert!(u0.iter().all(|z| *z == c(0.0, 0.0)));
        let w0 = optimal_weight_up(&eff, &bf, &u0, 0, 1.0).unwrap();
        assert!((w0 - one).norm() < 1e-15);
    }

    #[test]
    fn decoder_minimizes_mse_trace() {
        let (eff, bf) = instance(4, 3, D);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for k in 0..3 {
            let u = optimal_decoder_down(&eff, &bf, k, 0.2).unwrap();
            let base = trace_re(&mse_matrix_down(&eff, &bf, &u, k, 0.2).unwrap());
            let uu = optimal_decoder_up(&eff, &bf, k, 0.2).unwrap();
            let base_u = trace_re(&mse_matrix_up(&eff, &bf, &uu, k, 0.2).unwrap());
            for _ in 0..20 {
                let p = random_mat(&mut rng, 2, 2).scale(1e-3);
                assert!(trace_re(&mse_matrix_down(&eff, &bf, &(&u + &p), k, 0.2).unwrap()) > base);
                assert!(trace_re(&mse_matrix_up(&eff, &bf, &(&uu + &p), k, 0.2).unwrap()) > base_u);
            }
        }
    }

    #[test]
    fn weighted_mse_gradient_vanishes_at_decoder() {
        // d/dU Tr(W E(U)) = 2 (cov U - H V) W for any Hermitian W; checked by differences.
        let (eff, bf) = instance(6, 2, D);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_mat(&mut rng, 2, 2);
        let w = gram(&a) + eye(2).scale(0.1);
        let u = optimal_decoder_down(&eff, &bf, 0, 0.4).unwrap();
        let f = |u: &CMat| trace_re(&(&w * mse_matrix_down(&eff, &bf, u, 0, 0.4).unwrap()));
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..2 {
                for dir in [c(1.0, 0.0), c(0.0, 1.0)] {
                    let mut up = u.clone();
                    let mut dn = u.clone();
                    up[(i, j)] += dir * h;
                    dn[(i, j)] -= dir * h;
                    let g = (f(&up) - f(&dn)) / (2.0 * h);
                    assert!(g.abs() < 1e-6, "gradient {g}");
                }
            }
        }
    }

    #[test]
    fn log_weight_equals_rate() {
        for seed in 0..10 {
            let (eff, bf) = instance(seed, 3, D);
            for k in 0..3 {
                let u = optimal_decoder_down(&eff, &bf, k, 0.1).unwrap();
                let w = optimal_weight_down(&eff, &bf, &u, k, 0.1).unwrap();
                let r = downlink_rate_nats(&eff, &bf, k, 0.1).unwrap();
                assert!((logdet_weight(&w).unwrap() - r).abs() < 1e-9 * (1.0 + r));
                let u = optimal_decoder_up(&eff, &bf, k, 0.1).unwrap();
                let w = optimal_weight_up(&eff, &bf, &u, k, 0.1).unwrap();
                let r = uplink_rate_nats(&eff, &bf, k, 0.1).unwrap();
                assert!((logdet_weight(&w).unwrap() - r).abs() < 1e-9 * (1.0 + r));
            }
        }
    }

    #[test]
    fn weights_are_hermitian_positive() {
        let (eff, bf) = instance(12, 3, D);
        let noise = Noise::uniform(3, 0.05);
        let wm = update_wmmse(&eff, &bf, &noise).unwrap();
        for w in wm.w_d.iter().chain(&wm.w_u) {
            assert!((w - w.adjoint()).norm() < 1e-10);
            let (vals, _) = hermitian_eigen(w);
            assert!(vals[0] > 0.0);
        }
    }

    #[test]
    fn surrogate_equals_rate_at_optimum() {
        let weights = Weights {
            gamma_d: vec![0.3, 0.6, 0.5],
            gamma_u: vec![0.7, 0.2, 0.5],
        };
        let noise = Noise::uniform(3, 0.05);
        for seed in 0..10 {
            let (eff, bf) = instance(100 + seed, 3, D);
            let wm = update_wmmse(&eff, &bf, &noise).unwrap();
            let rw = surrogate_objective(&eff, &bf, &wm, &weights, &noise).unwrap();
            let rate = weighted_sum_rate(&eff, &bf, &weights, &noise).unwrap().weighted_sum_nats();
            assert!((rw - rate).abs() <= 1e-8 * (1.0 + rate.abs()), "{rw} vs {rate}");
        }
    }

    #[test]
    fn surrogate_matches_compact_form_anywhere() {
        let weights = Weights::uniform(2, 0.5);
        let noise = Noise::uniform(2, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for seed in 0..5 {
            let (eff, bf) = instance(seed, 2, D);
            let wm = WmmseState {
                u_d: (0..2).map(|_| random_mat(&mut rng, 2, 2)).collect(),
                w_d: (0..2).map(|_| gram(&random_mat(&mut rng, 2, 2)) + eye(2)).collect(),
                u_u: (0..2).map(|_| random_mat(&mut rng, 2, 2)).collect(),
                w_u: (0..2).map(|_| gram(&random_mat(&mut rng, 2, 2)) + eye(2)).collect(),
            };
            let a = surrogate_objective(&eff, &bf, &wm, &weights, &noise).unwrap();
            let b = compact_objective(&eff, &bf, &wm, &weights, &noise).unwrap();
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn zero_state_surrogate_is_zero() {
        let dims = Dims {
            n_t: 2,
            n_r: 2,
            n_ut: 2,
            n_ur: 2,
        };
        let (eff, _) = instance(3, 2, dims);
        let bf = BeamformerSet::zeros(2, &dims);
        let wm = WmmseState {
            u_d: vec![CMat::zeros(2, 2); 2],
            w_d: vec![eye(2); 2],
            u_u: vec![CMat::zeros(2, 2); 2],
            w_u: vec![eye(2); 2],
        };
        let rw = surrogate_objective(&eff, &bf, &wm, &Weights::uniform(2, 0.5), &Noise::uniform(2, 0.1)).unwrap();
        assert!(rw.abs() < 1e-15);
    }

    #[test]
    fn perturbing_weight_lowers_surrogate() {
        let weights = Weights::uniform(3, 0.5);
        let noise = Noise::uniform(3, 0.1);
        let (eff, bf) = instance(44, 3, D);
        let wm = update_wmmse(&eff, &bf, &noise).unwrap();
        let base = surrogate_objective(&eff, &bf, &wm, &weights, &noise).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut p = wm.clone();
            let d = random_mat(&mut rng, 2, 2).scale(0.05);
            p.w_d[0] = hermitian_part(&(&p.w_d[0] + &d + d.adjoint()));
            p.w_u[2] = hermitian_part(&(&p.w_u[2] + eye(2).scale(0.02)));
            assert!(surrogate_objective(&eff, &bf, &p, &weights, &noise).unwrap() < base);
        }
    }

    #[test]
    fn mismatched_streams_are_structural() {
        let (eff, bf) = instance(1, 1, D);
        let u = CMat::zeros(2, 1);
        assert!(matches!(mse_matrix_down(&eff, &bf, &u, 0, 0.1), Err(Error::Structural(_))));
    }
}
