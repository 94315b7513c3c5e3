//! Alternating optimization loop and the benchmark schemes.
//!
//! Each outer iteration refreshes the receive filters and weights, then the
//! precoders, then the surface coefficients, and finally re-evaluates the
//! exact weighted sum rate. Every step is a block-ascent step on the same
//! surrogate, so the recorded rates are nondecreasing.

use std::f64::consts::{LN_2, TAU};

use serde::{Deserialize, Serialize};

use crate::beamformer::{update_beamformers, ActiveBlocks, BisectionSettings, Budgets, DualState};
use crate::error::{Error, Result};
use crate::geometry::ChannelSet;
use crate::linalg::{scaled_identity_columns, CVec, C64};
use crate::phase::{build_quadratic_forms, project_state, solve_side, vectorize, PgdSettings, QpData};
use crate::system::{
    compose_direct, compose_effective, weighted_sum_rate, BeamformerSet, Dims, EffectiveChannels, IosState, Noise,
    RateReport, Side, Weights,
};
use crate::wmmse::{surrogate_objective, update_wmmse, WmmseState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeKind {
    /// Both faces of the surface are optimized.
    #[serde(rename = "DS_IOS")]
    DsIos,
    /// Only the user-facing side; the downlink is switched off.
    #[serde(rename = "SS_IOS")]
    SsIos,
    /// No surface; direct links only.
    #[serde(rename = "WO_IOS")]
    WoIos,
}

impl SchemeKind {
    pub fn label(&self) -> &'static str {
        match self {
            SchemeKind::DsIos => "DS_IOS",
            SchemeKind::SsIos => "SS_IOS",
            SchemeKind::WoIos => "WO_IOS",
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DS_IOS" => Ok(SchemeKind::DsIos),
            "SS_IOS" => Ok(SchemeKind::SsIos),
            "WO_IOS" => Ok(SchemeKind::WoIos),
            other => Err(Error::Parameter(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    #[serde(default)]
    pub quantization_bits: Option<u32>,
    /// Force the transceiver-side and user-side coefficients to coincide.
    #[serde(default)]
    pub tie_sides: bool,
    /// Quantize only once after convergence instead of inside the loop.
    #[serde(default)]
    pub quantize_at_end: bool,
    /// Single-side scheme only: keep the initial downlink precoders on (so
    /// they still cause self-interference) instead of switching them off.
    #[serde(default)]
    pub ss_downlink_on: bool,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            quantization_bits: None,
            tie_sides: false,
            quantize_at_end: false,
            ss_downlink_on: false,
        }
    }

    pub fn with_bits(mut self, bits: u32) -> Self {
        self.quantization_bits = Some(bits);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.quantization_bits {
            if !(1..=16).contains(&b) {
                return Err(Error::Parameter(format!("quantization bits must be in [1, 16], got {b}")));
            }
        }
        Ok(())
    }

    /// Short name used in file names and result rows, e.g. `DS_IOS` or `DS_IOS_q4`.
    pub fn label(&self) -> String {
        let mut s = self.kind.label().to_string();
        if let Some(b) = self.quantization_bits {
            s.push_str(&format!("_q{b}"));
        }
        if self.tie_sides {
            s.push_str("_tied");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Relative change of the weighted sum rate that ends the loop.
    pub epsilon_w: f64,
    pub max_outer_iters: usize,
    /// Relative drop of the weighted sum rate treated as divergence.
    pub divergence_tol: f64,
    pub bisection: BisectionSettings,
    pub pgd: PgdSettings,
    /// Dual-side scheme only: also start from silent downlink precoders and
    /// keep whichever start ends higher. Strong self-interference can trap
    /// the full-power start in a point worse than the uplink-only solution.
    pub silent_downlink_start: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            epsilon_w: 1e-4,
            max_outer_iters: 500,
            divergence_tol: 1e-6,
            bisection: BisectionSettings::default(),
            pgd: PgdSettings::default(),
            silent_downlink_start: true,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_w > 0.0 && self.divergence_tol > 0.0) {
            return Err(Error::Parameter("solver tolerances must be positive".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Parameter("max_outer_iters must be at least 1".into()));
        }
        self.bisection.validate()?;
        self.pgd.validate()
    }
}

/// Physical inputs of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub weights: Weights,
    pub noise: Noise,
    /// Linear power budgets (mW).
    pub budgets: Budgets,
}

impl RunConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        self.weights.validate(k)?;
        self.noise.validate(k)?;
        for (name, p) in [("P_B", self.budgets.p_b), ("P_U", self.budgets.p_u)] {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::Parameter(format!("{name} must be nonnegative, got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    #[serde(rename = "tolerance")]
    Tolerance,
    #[serde(rename = "max_iters")]
    MaxIters,
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Tolerance => "tolerance",
            Termination::MaxIters => "max_iters",
        }
    }
}

/// Surrogate values (nats) recorded inside one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Exact weighted sum rate at the start of the iteration.
    pub start: f64,
    pub after_wmmse: f64,
    pub after_beamformer: f64,
    pub after_phase: f64,
    pub dual: DualState,
}

/// Weighted sum rate after every outer iteration, starting with the initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    /// bits/s/Hz; entry 0 is the initial point.
    pub rates: Vec<f64>,
    pub iterations: usize,
    pub terminated_by: Termination,
    pub steps: Vec<StepRecord>,
}

impl ConvergenceTrace {
    /// Largest drop between consecutive recorded rates.
    pub fn max_drop(&self) -> f64 {
        self.rates.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }

    /// Largest drop of the surrogate across any single block step.
    pub fn max_step_drop(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| {
                [
                    s.start - s.after_wmmse,
                    s.after_wmmse - s.after_beamformer,
                    s.after_beamformer - s.after_phase,
                ]
            })
            .fold(0.0, f64::max)
    }
}

/// Which variables a scheme optimizes and which channels it sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemView {
    pub scheme: SchemeSpec,
    pub blocks: ActiveBlocks,
    pub optimize_t: bool,
    pub optimize_u: bool,
    pub direct_links: bool,
}

impl ProblemView {
    pub fn effective(&self, ch: &ChannelSet, ios: &IosState) -> Result<EffectiveChannels> {
        if self.direct_links {
            compose_direct(ch)
        } else {
            compose_effective(ch, ios)
        }
    }

    pub fn optimizes_surface(&self) -> bool {
        self.optimize_t || self.optimize_u
    }

    /// Starting surface state for this scheme.
    pub fn initial_ios(&self, l: usize) -> IosState {
        match self.scheme.kind {
            SchemeKind::DsIos => IosState::uniform(l),
            SchemeKind::SsIos => {
                let mut s = IosState::uniform(l);
                s.theta_t = CVec::zeros(l);
                s.phi_t = CVec::zeros(l);
                s
            }
            SchemeKind::WoIos => IosState::zeros(l),
        }
    }

    /// Starting precoders: scaled identity columns using `P_B / K` per
    /// downlink and `P_U` per uplink.
    pub fn initial_beamformers(&self, k: usize, dims: &Dims, budgets: Budgets) -> BeamformerSet {
        let downlink_on = self.blocks.downlink || self.scheme.ss_downlink_on;
        BeamformerSet {
            v_d: (0..k)
                .map(|_| {
                    let p = if downlink_on { budgets.p_b / k as f64 } else { 0.0 };
                    scaled_identity_columns(dims.n_t, dims.s_d(), p)
                })
                .collect(),
            v_u: (0..k).map(|_| scaled_identity_columns(dims.n_ut, dims.s_u(), budgets.p_u)).collect(),
        }
    }
}

/// Maps a scheme onto the set of free variables and the channel model.
pub fn apply_scheme(scheme: &SchemeSpec) -> ProblemView {
    match scheme.kind {
        SchemeKind::DsIos => ProblemView {
            scheme: *scheme,
            blocks: ActiveBlocks::ALL,
            optimize_t: true,
            optimize_u: true,
            direct_links: false,
        },
        SchemeKind::SsIos => ProblemView {
            scheme: *scheme,
            blocks: ActiveBlocks {
                downlink: false,
                uplink: true,
            },
            optimize_t: false,
            optimize_u: true,
            direct_links: false,
        },
        SchemeKind::WoIos => ProblemView {
            scheme: *scheme,
            blocks: ActiveBlocks::ALL,
            optimize_t: false,
            optimize_u: false,
            direct_links: true,
        },
    }
}

/// Snaps every coefficient phase to the nearest multiple of `2 pi / 2^bits`,
/// keeping amplitudes.
pub fn quantize_phases(ios: &IosState, bits: u32) -> Result<IosState> {
    if !(1..=16).contains(&bits) {
        return Err(Error::Parameter(format!("quantization bits must be in [1, 16], got {bits}")));
    }
    let step = TAU / f64::from(1u32 << bits);
    let snap = |v: &CVec| {
        v.map(|z| {
            let a = z.norm();
            if a == 0.0 {
                return C64::new(0.0, 0.0);
            }
            let level = (z.arg().rem_euclid(TAU) / step).round();
            C64::from_polar(a, level * step)
        })
    };
    Ok(project_state(&IosState {
        theta_t: snap(&ios.theta_t),
        phi_t: snap(&ios.phi_t),
        theta_u: snap(&ios.theta_u),
        phi_u: snap(&ios.phi_u),
    }))
}

/// Everything produced by one optimization run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub beamformers: BeamformerSet,
    pub ios: IosState,
    pub trace: ConvergenceTrace,
    pub report: RateReport,
}

struct PhaseStep<'a> {
    view: &'a ProblemView,
    ch: &'a ChannelSet,
    cfg: &'a RunConfig,
    settings: &'a SolverSettings,
}

impl PhaseStep<'_> {
    fn surrogate(&self, bf: &BeamformerSet, wm: &WmmseState, ios: &IosState) -> Result<f64> {
        let eff = self.view.effective(self.ch, ios)?;
        surrogate_objective(&eff, bf, wm, &self.cfg.weights, &self.cfg.noise)
    }

    /// Continuous QCQP step on the active faces.
    fn continuous(&self, qp: &QpData, ios: &IosState) -> Result<IosState> {
        let mut next = ios.clone();
        if self.view.scheme.tie_sides && self.view.optimize_t && self.view.optimize_u {
            let tied = qp.tied();
            let (theta, phi, _) = solve_side(&tied, (&ios.theta_t, &ios.phi_t), &self.settings.pgd)?;
            next.theta_u = theta.clone();
            next.phi_u = phi.clone();
            next.theta_t = theta;
            next.phi_t = phi;
            return Ok(next);
        }
        for (side, on) in [(Side::T, self.view.optimize_t), (Side::U, self.view.optimize_u)] {
            if !on {
                continue;
            }
            let (th, ph) = ios.side(side);
            let (theta, phi, _) = solve_side(qp.side(side), (th, ph), &self.settings.pgd)?;
            let (t_mut, p_mut) = next.side_mut(side);
            *t_mut = theta;
            *p_mut = phi;
        }
        Ok(next)
    }

    fn run(&self, bf: &BeamformerSet, wm: &WmmseState, ios: &IosState, before: f64) -> Result<(IosState, f64)> {
        let qf = build_quadratic_forms(self.ch, bf, wm, &self.cfg.weights, &self.cfg.noise)?;
        let qp = vectorize(&qf);
        let cont = self.continuous(&qp, ios)?;
        match self.view.scheme.quantization_bits {
            Some(bits) if !self.view.scheme.quantize_at_end => {
                let q = quantize_phases(&cont, bits)?;
                let value = self.surrogate(bf, wm, &q)?;
                if value >= before {
                    Ok((q, value))
                } else {
                    Ok((ios.clone(), before))
                }
            }
            _ => {
                let value = self.surrogate(bf, wm, &cont)?;
                Ok((cont, value))
            }
        }
    }
}

/// Runs the alternating optimization for one channel realization.
pub fn run_algorithm2(
    ch: &ChannelSet,
    cfg: &RunConfig,
    scheme: &SchemeSpec,
    settings: &SolverSettings,
) -> Result<RunOutcome> {
    scheme.validate()?;
    settings.validate()?;
    let k_users = ch.users();
    cfg.validate(k_users)?;
    let view = apply_scheme(scheme);
    let dims = Dims::of(ch);
    let ios = view.initial_ios(ch.elements());
    let bf = view.initial_beamformers(k_users, &dims, cfg.budgets);

    let mut best = descend(&view, ch, cfg, settings, ios.clone(), bf.clone())?;
    if scheme.kind == SchemeKind::DsIos && settings.silent_downlink_start {
        let silent = BeamformerSet {
            v_d: bf.v_d.iter().map(|v| v.map(|_| C64::new(0.0, 0.0))).collect(),
            v_u: bf.v_u,
        };
        let alt = descend(&view, ch, cfg, settings, ios, silent)?;
        if alt.report.weighted_sum > best.report.weighted_sum {
            log::debug!("silent-downlink start wins: {} > {}", alt.report.weighted_sum, best.report.weighted_sum);
            best = alt;
        }
    }
    let RunOutcome {
        beamformers: bf,
        mut ios,
        trace,
        mut report,
    } = best;

    if let (Some(bits), true) = (scheme.quantization_bits, scheme.quantize_at_end) {
        if view.optimizes_surface() {
            ios = quantize_phases(&ios, bits)?;
            let eff = view.effective(ch, &ios)?;
            report = weighted_sum_rate(&eff, &bf, &cfg.weights, &cfg.noise)?;
        }
    }

    Ok(RunOutcome {
        beamformers: bf,
        ios,
        trace,
        report,
    })
}

/// The alternating loop from one starting point.
fn descend(
    view: &ProblemView,
    ch: &ChannelSet,
    cfg: &RunConfig,
    settings: &SolverSettings,
    mut ios: IosState,
    mut bf: BeamformerSet,
) -> Result<RunOutcome> {
    let mut eff = view.effective(ch, &ios)?;
    let mut report = weighted_sum_rate(&eff, &bf, &cfg.weights, &cfg.noise)?;
    let mut rates = vec![report.weighted_sum];
    let mut steps = Vec::new();
    let mut terminated_by = Termination::MaxIters;
    let phase = PhaseStep {
        view,
        ch,
        cfg,
        settings,
    };

    let mut iterations = 0;
    while iterations < settings.max_outer_iters {
        iterations += 1;
        let start = report.weighted_sum_nats();

        let wm = update_wmmse(&eff, &bf, &cfg.noise)?;
        let after_wmmse = surrogate_objective(&eff, &bf, &wm, &cfg.weights, &cfg.noise)?;

        let (next_bf, dual) = update_beamformers(&eff, &wm, &cfg.weights, &bf, cfg.budgets, view.blocks, &settings.bisection)?;
        let after_beamformer = surrogate_objective(&eff, &next_bf, &wm, &cfg.weights, &cfg.noise)?;
        bf = next_bf;

        let after_phase = if view.optimizes_surface() {
            let (next_ios, value) = phase.run(&bf, &wm, &ios, after_beamformer)?;
            ios = next_ios;
            value
        } else {
            after_beamformer
        };

        eff = view.effective(ch, &ios)?;
        let prev = report.weighted_sum;
        report = weighted_sum_rate(&eff, &bf, &cfg.weights, &cfg.noise)?;
        let current = report.weighted_sum;
        steps.push(StepRecord {
            start,
            after_wmmse,
            after_beamformer,
            after_phase,
            dual,
        });
        rates.push(current);
        log::debug!("iteration {iterations}: weighted sum rate {current:.9} bit/s/Hz");

        if current < prev - settings.divergence_tol * prev.abs() {
            return Err(Error::Divergence {
                iteration: iterations,
                previous: prev,
                current,
            });
        }
        if current == 0.0 || (current - prev).abs() <= settings.epsilon_w * current.abs() {
            terminated_by = Termination::Tolerance;
            break;
        }
    }

    Ok(RunOutcome {
        beamformers: bf,
        ios,
        trace: ConvergenceTrace {
            rates,
            iterations,
            terminated_by,
            steps,
        },
        report,
    })
}

/// Converts a rate in nats to bits.
pub fn nats_to_bits(x: f64) -> f64 {
    x / LN_2
}
