#![allow(dead_code)]

use qdpair_core::cascade::{DetectorParams, EmitterParams, ExcitationParams, REP_PERIOD_76MHZ_PS};
use qdpair_core::correlate::{cross_correlate, integrate_peaks, CoincidenceHistogram};
use qdpair_core::quantum::AnalyzerSetting;
use qdpair_core::sim::{derive_block_seed, simulate, SimConfig, TimeTagStream, Topology};
use qdpair_core::tomography::{standard_settings, TomoRecord};

pub const REP: f64 = REP_PERIOD_76MHZ_PS;

pub fn config(emitter: EmitterParams, detectors: DetectorParams, topology: Topology, duration_s: f64, seed: u64) -> SimConfig {
    SimConfig {
        emitter,
        excitation: ExcitationParams::default(),
        detectors,
        topology,
        analyzer_a: AnalyzerSetting::named('H').unwrap(),
        analyzer_b: AnalyzerSetting::named('H').unwrap(),
        duration_s,
        seed,
        record_sync: false,
    }
}

/// Channel 0 → channel 1 histogram spanning `periods` pulses on each side.
pub fn pulsed_histogram(stream: &TimeTagStream, bin_ps: f64, periods: u32) -> CoincidenceHistogram {
    cross_correlate(&stream.channel(0), &stream.channel(1), bin_ps, (periods as f64 + 0.5) * REP).unwrap()
}

/// Raw coincidences in the zero-delay window of a cross-polarization run.
pub fn center_coincidences(stream: &TimeTagStream) -> u64 {
    let h = cross_correlate(&stream.channel(0), &stream.channel(1), 50.0, 1.5 * REP).unwrap();
    integrate_peaks(&h, REP, REP / 2.0).unwrap().peak_areas[&0].0
}

/// Sixteen cross-correlation runs, one per standard tomography setting.
pub fn simulated_tomo_record(emitter: &EmitterParams, detectors: &DetectorParams, seconds: f64, seed: u64) -> TomoRecord {
    let settings = standard_settings();
    let counts = settings
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let mut cfg = config(emitter.clone(), detectors.clone(), Topology::Cross, seconds, derive_block_seed(seed, i as u64));
            cfg.analyzer_a = a;
            cfg.analyzer_b = b;
            center_coincidences(&simulate(&cfg).unwrap())
        })
        .collect();
    TomoRecord::new(settings, counts, vec![seconds; 16]).unwrap()
}
