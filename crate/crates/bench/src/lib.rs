//! Fixtures shared by the benchmarks.

use dsios_core::geometry::{build_layout, sample_channels_with_direct};
use dsios_core::orchestrator::apply_scheme;
use dsios_core::system::{dbm_to_mw, Dims};
use dsios_core::{
    ArrayConfig, BeamformerSet, Budgets, ChannelSet, EffectiveChannels, FadingParams, IosState, Noise, RunConfig,
    SchemeKind, SchemeSpec, Weights, WmmseState,
};

/// One optimization problem in the default geometry, at its initial point.
pub struct Fixture {
    pub channels: ChannelSet,
    pub run: RunConfig,
    pub ios: IosState,
    pub beamformers: BeamformerSet,
    pub effective: EffectiveChannels,
    pub wmmse: WmmseState,
}

impl Fixture {
    pub fn new(elements: usize, seed: u64) -> Self {
        let cfg = ArrayConfig {
            elements,
            ..ArrayConfig::default()
        };
        let layout = build_layout(&cfg).expect("default geometry is valid");
        let channels = sample_channels_with_direct(&layout, &FadingParams::default(), seed).expect("channels");
        let k = channels.users();
        let run = RunConfig {
            weights: Weights::uniform(k, 0.5),
            noise: Noise::from_dbm(k, -80.0),
            budgets: Budgets {
                p_b: dbm_to_mw(10.0),
                p_u: dbm_to_mw(5.0),
            },
        };
        let view = apply_scheme(&SchemeSpec::new(SchemeKind::DsIos));
        let ios = view.initial_ios(elements);
        let beamformers = view.initial_beamformers(k, &Dims::of(&channels), run.budgets);
        let effective = view.effective(&channels, &ios).expect("effective channels");
        let wmmse = dsios_core::wmmse::update_wmmse(&effective, &beamformers, &run.noise).expect("wmmse");
        Self {
            channels,
            run,
            ios,
            beamformers,
            effective,
            wmmse,
        }
    }
}
