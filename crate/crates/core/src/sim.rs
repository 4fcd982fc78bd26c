//! Monte Carlo generator of time-tagged detection events.
//!
//! Pulses are processed in fixed-size blocks. Each block draws from its own
//! ChaCha stream seeded by [`derive_block_seed`], so a block always produces
//! the same events no matter which worker runs it or in what order. Within a
//! block, pulses that cannot produce a detection are skipped with a geometric
//! draw, which keeps long low-efficiency runs cheap.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{state_at_delay, xx_population, DetectorParams, EmitterParams, ExcitationParams};
use crate::error::{Error, Result};
use crate::quantum::{analyzer_ket, AnalyzerSetting, PolarizationKet, TwoPhotonKet};

/// Pulses per simulation block.
pub const BLOCK_PULSES: u64 = 1 << 16;

pub const SYNC_CHANNEL: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhotonEvent {
    pub channel: u8,
    /// Picoseconds since the start of the acquisition.
    pub timestamp: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeTagStream {
    pub events: Vec<PhotonEvent>,
    pub channel_count: u8,
    pub resolution_ps: u32,
}

impl TimeTagStream {
    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp)
    }

    /// Timestamps of one channel, in stream order.
    pub fn channel(&self, channel: u8) -> Vec<u64> {
        self.events.iter().filter(|e| e.channel == channel).map(|e| e.timestamp).collect()
    }

    pub fn counts_per_channel(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.channel_count.max(1) as usize];
        for e in &self.events {
            let c = e.channel as usize;
            if c >= counts.len() {
                counts.resize(c + 1, 0);
            }
            counts[c] += 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    /// XX photons through analyzer A to channel 0, X photons through analyzer
    /// B to channel 1.
    #[serde(rename = "CROSS")]
    Cross,
    /// XX photons split 50:50 onto channels 0 and 1.
    #[serde(rename = "HBT_XX")]
    HbtXx,
    /// X photons split 50:50 onto channels 0 and 1.
    #[serde(rename = "HBT_X")]
    HbtX,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub emitter: EmitterParams,
    pub excitation: ExcitationParams,
    pub detectors: DetectorParams,
    pub topology: Topology,
    pub analyzer_a: AnalyzerSetting,
    pub analyzer_b: AnalyzerSetting,
    pub duration_s: f64,
    pub seed: u64,
    /// Emit one laser-sync event per pulse on [`SYNC_CHANNEL`].
    pub record_sync: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.emitter.validate()?;
        self.excitation.validate()?;
        self.detectors.validate()?;
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidParameter(format!("duration must be > 0 s, got {}", self.duration_s)));
        }
        Ok(())
    }

    pub fn n_pulses(&self) -> u64 {
        (self.duration_s * 1e12 / self.excitation.rep_period_ps).floor() as u64
    }

    /// Upper estimate of the number of events the run will produce.
    pub fn expected_events(&self) -> f64 {
        let n = self.n_pulses() as f64;
        let photons = n * xx_population(&self.excitation) * self.detection_weights().1 * 2.0;
        let darks: f64 = self.detectors.dark_rate_cps.iter().sum::<f64>() * self.duration_s;
        let sync = if self.record_sync { n } else { 0.0 };
        photons + darks + sync
    }

    /// (per-pulse candidate probabilities, probability that an excited pulse
    /// yields any candidate detection)
    fn detection_weights(&self) -> ([f64; 3], f64) {
        let [e0, e1] = self.detectors.efficiency;
        match self.topology {
            Topology::Cross => {
                let any = 1.0 - (1.0 - e0) * (1.0 - e1);
                // only A, only B, both
                ([e0 * (1.0 - e1), (1.0 - e0) * e1, e0 * e1], any)
            }
            Topology::HbtXx | Topology::HbtX => {
                let any = 0.5 * (e0 + e1);
                ([0.5 * e0, 0.5 * e1, 0.0], any)
            }
        }
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer (Stafford variant 13).
fn splitmix_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seed for pulse block `block_index`.
///
/// `mix(mix(seed) + (block_index + 1)·γ)` with SplitMix64's mixing function
/// and `γ = 0x9E3779B97F4A7C15`. The mixer is a bijection, so for a fixed seed
/// distinct blocks never collide, and for a fixed block distinct seeds never
/// collide.
pub fn derive_block_seed(seed: u64, block_index: u64) -> u64 {
    splitmix_mix(splitmix_mix(seed).wrapping_add(block_index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

fn random_polarization<R: Rng>(rng: &mut R) -> PolarizationKet {
    let cos_theta: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let c = ((1.0 + cos_theta) / 2.0).sqrt();
    let s = ((1.0 - cos_theta) / 2.0).max(0.0).sqrt();
    PolarizationKet { h: C64::new(c, 0.0), v: C64::from_polar(s, phi) }
}

/// `(⟨p|⊗I)|ψ⟩`: unnormalized state of the second photon after projecting the
/// first onto `p`.
fn project_first(psi: &TwoPhotonKet, p: &PolarizationKet) -> PolarizationKet {
    let [hh, hv, vh, vv] = psi.amps;
    PolarizationKet { h: p.h.conj() * hh + p.v.conj() * vh, v: p.h.conj() * hv + p.v.conj() * vv }
}

/// `(I⊗⟨p|)|ψ⟩`
fn project_second(psi: &TwoPhotonKet, p: &PolarizationKet) -> PolarizationKet {
    let [hh, hv, vh, vv] = psi.amps;
    PolarizationKet { h: p.h.conj() * hh + p.v.conj() * hv, v: p.h.conj() * vh + p.v.conj() * vv }
}

struct BlockContext<'a> {
    cfg: &'a SimConfig,
    p_xx: f64,
    cand: ([f64; 3], f64),
    ket_a: PolarizationKet,
    ket_b: PolarizationKet,
    exp_xx: Exp<f64>,
    exp_x: Exp<f64>,
    jitter: Option<Normal<f64>>,
    t_max: f64,
    n_pulses: u64,
}

impl BlockContext<'_> {
    fn stamp(&self, t: f64) -> u64 {
        t.clamp(0.0, self.t_max).round() as u64
    }

    fn jittered<R: Rng>(&self, rng: &mut R, t: f64) -> u64 {
        let j = self.jitter.map_or(0.0, |n| n.sample(rng));
        self.stamp(t + j)
    }

    fn run_block(&self, block: u64) -> Vec<PhotonEvent> {
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_block_seed(cfg.seed, block));
        let rep = cfg.excitation.rep_period_ps;
        let first = block * BLOCK_PULSES;
        let last = ((block + 1) * BLOCK_PULSES).min(self.n_pulses);
        let mut events = Vec::new();

        if cfg.record_sync {
            events.extend((first..last).map(|n| PhotonEvent { channel: SYNC_CHANNEL, timestamp: self.stamp(n as f64 * rep) }));
        }

        let q = self.p_xx * self.cand.1;
        if q > 0.0 {
            let geo = (q < 1.0).then(|| Geometric::new(q).expect("probability in (0,1)"));
            let mut pulse = first;
            loop {
                if let Some(g) = &geo {
                    pulse = pulse.saturating_add(g.sample(&mut rng));
                }
                if pulse >= last {
                    break;
                }
                self.emit_pulse(&mut rng, pulse as f64 * rep, &mut events);
                pulse += 1;
            }
        }

        // Dark counts over this block's share of the acquisition window.
        let t_start = first as f64 * rep;
        let t_end = if last == self.n_pulses { cfg.duration_s * 1e12 } else { last as f64 * rep };
        if t_end > t_start {
            for (ch, &rate) in cfg.detectors.dark_rate_cps.iter().enumerate() {
                let mean = rate * (t_end - t_start) * 1e-12;
                if mean <= 0.0 {
                    continue;
                }
                let n = Poisson::new(mean).expect("positive mean").sample(&mut rng) as u64;
                for _ in 0..n {
                    let t = rng.random_range(t_start..t_end);
                    events.push(PhotonEvent { channel: ch as u8, timestamp: self.stamp(t) });
                }
            }
        }
        events.sort_by_key(|e| e.timestamp);
        events
    }

    /// One pulse known to yield at least one candidate detection.
    fn emit_pulse<R: Rng>(&self, rng: &mut R, t_pulse: f64, events: &mut Vec<PhotonEvent>) {
        let cfg = self.cfg;
        let em = &cfg.emitter;
        let t_xx = t_pulse + self.exp_xx.sample(rng);
        let tau = self.exp_x.sample(rng);
        let t_x = t_xx + tau;

        let (w, any) = self.cand;
        let u: f64 = rng.random::<f64>() * any;
        match cfg.topology {
            Topology::HbtXx | Topology::HbtX => {
                let ch = if u < w[0] { 0 } else { 1 };
                let t = if cfg.topology == Topology::HbtXx { t_xx } else { t_x };
                events.push(PhotonEvent { channel: ch, timestamp: self.jittered(rng, t) });
            }
            Topology::Cross => {
                let (flag_a, flag_b) = if u < w[0] {
                    (true, false)
                } else if u < w[0] + w[1] {
                    (false, true)
                } else {
                    (true, true)
                };

                let psi = if rng.random::<f64>() >= em.k {
                    TwoPhotonKet::product(&random_polarization(rng), &random_polarization(rng))
                } else if rng.random::<f64>() < 1.0 - (-tau / em.t_ss_ps).exp() {
                    let one = C64::new(1.0, 0.0);
                    let zero = C64::new(0.0, 0.0);
                    if rng.random::<bool>() {
                        TwoPhotonKet { amps: [one, zero, zero, zero] }
                    } else {
                        TwoPhotonKet { amps: [zero, zero, zero, one] }
                    }
                } else {
                    state_at_delay(em.fss_uev, tau)
                };

                let (pass_a, pass_b) = match (flag_a, flag_b) {
                    (true, false) => (rng.random::<f64>() < project_first(&psi, &self.ket_a).norm_sqr(), false),
                    (false, true) => (false, rng.random::<f64>() < project_second(&psi, &self.ket_b).norm_sqr()),
                    _ => {
                        let pass = project_first(&psi, &self.ket_a);
                        let p_a = pass.norm_sqr();
                        let a_ok = rng.random::<f64>() < p_a;
                        let cond = if a_ok { pass } else { project_first(&psi, &self.ket_a.orthogonal()) };
                        let norm = cond.norm_sqr();
                        let p_b = if norm > 0.0 { self.ket_b.inner(&cond).norm_sqr() / norm } else { 0.0 };
                        (a_ok, rng.random::<f64>() < p_b)
                    }
                };
                if pass_a {
                    events.push(PhotonEvent { channel: 0, timestamp: self.jittered(rng, t_xx) });
                }
                if pass_b {
                    events.push(PhotonEvent { channel: 1, timestamp: self.jittered(rng, t_x) });
                }
            }
        }
    }
}

/// Runs the simulation on the global rayon pool.
pub fn simulate(config: &SimConfig) -> Result<TimeTagStream> {
    config.validate()?;
    let expected = config.expected_events();
    if expected > u32::MAX as f64 {
        return Err(Error::TooManyEvents(expected as u64));
    }
    let n_pulses = config.n_pulses();
    let sigma = config.detectors.jitter_sigma_ps();
    let ctx = BlockContext {
        cfg: config,
        p_xx: xx_population(&config.excitation),
        cand: config.detection_weights(),
        ket_a: analyzer_ket(config.analyzer_a),
        ket_b: analyzer_ket(config.analyzer_b),
        exp_xx: Exp::new(1.0 / config.emitter.t1_xx_ps).expect("positive rate"),
        exp_x: Exp::new(1.0 / config.emitter.t1_x_ps).expect("positive rate"),
        jitter: (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("positive sigma")),
        t_max: config.duration_s * 1e12 + 10.0 * config.excitation.rep_period_ps,
        n_pulses,
    };
    // A run shorter than one pulse still gets a block for its dark counts.
    let n_blocks = n_pulses.div_ceil(BLOCK_PULSES).max(1);
    let blocks: Vec<Vec<PhotonEvent>> = (0..n_blocks).into_par_iter().map(|b| ctx.run_block(b)).collect();
    let mut events: Vec<PhotonEvent> = blocks.into_iter().flatten().collect();
    // Stable sort of a block-ordered concatenation is deterministic.
    events.par_sort_by_key(|e| e.timestamp);
    Ok(TimeTagStream { events, channel_count: if config.record_sync { 3 } else { 2 }, resolution_ps: 1 })
}

/// Runs the simulation on a dedicated pool with `threads` workers. The output
/// does not depend on `threads`.
pub fn simulate_with_threads(config: &SimConfig, threads: usize) -> Result<TimeTagStream> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| simulate(config))
}
