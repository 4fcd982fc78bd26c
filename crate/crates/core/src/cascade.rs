//! Analytic model of the biexciton → exciton → ground cascade.
//!
//! The exciton dwell time `τ` sets the relative phase `S·τ/ħ` between the
//! `|HH⟩` and `|VV⟩` components. Averaging over the exponential dwell-time
//! distribution turns the phase into the `1/(1 + x²)` coherence factor of the
//! fidelity model, with `x = g·S·T₁,X/ħ`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::Mat4;
use crate::quantum::{bell_psi_plus, DensityMatrix, PhysConsts, TwoPhotonKet};

/// Repetition period of a 76 MHz pulsed laser, in ps.
pub const REP_PERIOD_76MHZ_PS: f64 = 1e12 / 76e6;

/// FWHM → standard deviation for a Gaussian.
pub const FWHM_TO_SIGMA: f64 = 1.0 / 2.354_820_045_030_949;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterParams {
    pub fss_uev: f64,
    pub t1_xx_ps: f64,
    pub t1_x_ps: f64,
    /// Fraction of emission unaffected by cross-dephasing and spin scattering.
    #[serde(default = "one")]
    pub g1_hv: f64,
    /// Fraction of emission unaffected by spin scattering.
    #[serde(default = "one")]
    pub g1p_hv: f64,
    /// Probability that a detected pair originates from the dot.
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_t_ss")]
    pub t_ss_ps: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength_nm: f64,
}

fn one() -> f64 {
    1.0
}
fn default_k() -> f64 {
    0.97
}
fn default_t_ss() -> f64 {
    15_000.0
}
fn default_wavelength() -> f64 {
    779.8
}

impl Default for EmitterParams {
    fn default() -> Self {
        EmitterParams {
            fss_uev: 2.3,
            t1_xx_ps: 112.0,
            t1_x_ps: 134.0,
            g1_hv: 1.0,
            g1p_hv: 1.0,
            k: 0.97,
            t_ss_ps: 15_000.0,
            wavelength_nm: 779.8,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}

fn unit_interval(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl EmitterParams {
    pub fn validate(&self) -> Result<()> {
        check(self.fss_uev >= 0.0 && self.fss_uev.is_finite(), || format!("fss_uev must be >= 0, got {}", self.fss_uev))?;
        check(self.t1_xx_ps > 0.0 && self.t1_xx_ps.is_finite(), || format!("t1_xx_ps must be > 0, got {}", self.t1_xx_ps))?;
        check(self.t1_x_ps > 0.0 && self.t1_x_ps.is_finite(), || format!("t1_x_ps must be > 0, got {}", self.t1_x_ps))?;
        check(self.t_ss_ps > 0.0, || format!("t_ss_ps must be > 0, got {}", self.t_ss_ps))?;
        check(unit_interval(self.g1_hv), || format!("g1_hv must lie in [0,1], got {}", self.g1_hv))?;
        check(unit_interval(self.g1p_hv), || format!("g1p_hv must lie in [0,1], got {}", self.g1p_hv))?;
        check(unit_interval(self.k), || format!("k must lie in [0,1], got {}", self.k))?;
        // PSD condition of the {HH, VV} block at zero phase spread.
        check(2.0 * self.g1_hv <= 1.0 + self.g1p_hv + 1e-12, || {
            format!("g1_hv = {} is too large for g1p_hv = {} (need 2·g1 ≤ 1 + g1p)", self.g1_hv, self.g1p_hv)
        })
    }

    /// `x = g·S·T₁,X/ħ`
    pub fn phase_spread(&self) -> f64 {
        self.g1_hv * self.fss_uev * self.t1_x_ps / PhysConsts::HBAR_UEV_PS
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationParams {
    /// Pulse area Θ in units of π.
    #[serde(default = "one")]
    pub pulse_area_pi: f64,
    #[serde(default = "default_rep_period")]
    pub rep_period_ps: f64,
    /// Damping of the Rabi oscillation per π of pulse area.
    #[serde(default)]
    pub damping_gamma: f64,
}

fn default_rep_period() -> f64 {
    REP_PERIOD_76MHZ_PS
}

impl Default for ExcitationParams {
    fn default() -> Self {
        ExcitationParams { pulse_area_pi: 1.0, rep_period_ps: REP_PERIOD_76MHZ_PS, damping_gamma: 0.0 }
    }
}

impl ExcitationParams {
    pub fn validate(&self) -> Result<()> {
        check(self.rep_period_ps > 0.0 && self.rep_period_ps.is_finite(), || {
            format!("rep_period_ps must be > 0, got {}", self.rep_period_ps)
        })?;
        check(self.pulse_area_pi >= 0.0 && self.pulse_area_pi.is_finite(), || {
            format!("pulse_area_pi must be >= 0, got {}", self.pulse_area_pi)
        })?;
        check(self.damping_gamma >= 0.0, || format!("damping_gamma must be >= 0, got {}", self.damping_gamma))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    #[serde(default = "default_irf")]
    pub irf_fwhm_ps: f64,
    /// Detection efficiency of photon channels 0 and 1.
    #[serde(default = "default_efficiency")]
    pub efficiency: [f64; 2],
    /// Dark count rate of photon channels 0 and 1, counts per second.
    #[serde(default = "default_dark")]
    pub dark_rate_cps: [f64; 2],
    #[serde(default = "default_bin")]
    pub bin_width_ps: f64,
}

fn default_irf() -> f64 {
    100.0
}
// Placeholder values; real setups should measure their own.
fn default_efficiency() -> [f64; 2] {
    [0.05, 0.05]
}
fn default_dark() -> [f64; 2] {
    [100.0, 100.0]
}
fn default_bin() -> f64 {
    4.0
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            irf_fwhm_ps: default_irf(),
            efficiency: default_efficiency(),
            dark_rate_cps: default_dark(),
            bin_width_ps: default_bin(),
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        check(self.irf_fwhm_ps >= 0.0 && self.irf_fwhm_ps.is_finite(), || {
            format!("irf_fwhm_ps must be >= 0, got {}", self.irf_fwhm_ps)
        })?;
        for (i, e) in self.efficiency.iter().enumerate() {
            check(unit_interval(*e), || format!("efficiency[{i}] must lie in [0,1], got {e}"))?;
        }
        for (i, d) in self.dark_rate_cps.iter().enumerate() {
            check(*d >= 0.0 && d.is_finite(), || format!("dark_rate_cps[{i}] must be >= 0, got {d}"))?;
        }
        check(self.bin_width_ps > 0.0, || format!("bin_width_ps must be > 0, got {}", self.bin_width_ps))
    }

    pub fn jitter_sigma_ps(&self) -> f64 {
        self.irf_fwhm_ps * FWHM_TO_SIGMA
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Species {
    #[serde(rename = "XX")]
    Xx,
    X,
}

/// `(|HH⟩ + e^{iSτ/ħ}|VV⟩)/√2` after an exciton dwell time `tau_ps`.
pub fn state_at_delay(fss_uev: f64, tau_ps: f64) -> TwoPhotonKet {
    let phi = fss_uev * tau_ps / PhysConsts::HBAR_UEV_PS;
    let a = std::f64::consts::FRAC_1_SQRT_2;
    TwoPhotonKet {
        amps: [C64::new(a, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::from_polar(a, phi)],
    }
}

/// Dwell-time averaged two-photon state with spin scattering and background.
///
/// `ρ = k·ρ_dot + (1-k)·I/4` where `ρ_dot` has populations
/// `((1+g')/4, (1-g')/4, (1-g')/4, (1+g')/4)` and the HH–VV coherence
/// `ρ[HH,VV] = g·(1 - ix)/(2(1 + x²))`.
pub fn ensemble_density_matrix(p: &EmitterParams) -> Result<DensityMatrix> {
    p.validate()?;
    let x = p.phase_spread();
    let gp = p.g1p_hv;
    let mut dot = Mat4::from_diagonal(&[(1.0 + gp) / 4.0, (1.0 - gp) / 4.0, (1.0 - gp) / 4.0, (1.0 + gp) / 4.0]);
    let coh = C64::new(1.0, -x) * (p.g1_hv / (2.0 * (1.0 + x * x)));
    dot.0[0][3] = coh;
    dot.0[3][0] = coh.conj();
    let rho = dot.scale(p.k) + Mat4::identity().scale((1.0 - p.k) / 4.0);
    DensityMatrix::new(rho)
}

/// Fidelity to `|ψ⁺⟩` of the dwell-time averaged state:
/// `F = ¼·(1 + k·g' + 2k·g/(1 + x²))`.
pub fn predicted_fidelity(p: &EmitterParams) -> Result<f64> {
    p.validate()?;
    let x = p.phase_spread();
    Ok(0.25 * (1.0 + p.k * p.g1p_hv + 2.0 * p.k * p.g1_hv / (1.0 + x * x)))
}

/// Fidelity of the model state evaluated through the density matrix.
pub fn model_fidelity(p: &EmitterParams) -> Result<f64> {
    crate::quantum::fidelity(&ensemble_density_matrix(p)?, &bell_psi_plus())
}

/// Biexciton population after a pulse of area `theta` (radians):
/// `½·(1 - cos Θ·e^{-γΘ/π})`.
pub fn xx_population_at(theta: f64, gamma: f64) -> f64 {
    0.5 * (1.0 - theta.cos() * (-gamma * theta / std::f64::consts::PI).exp())
}

pub fn xx_population(e: &ExcitationParams) -> f64 {
    xx_population_at(e.pulse_area_pi * std::f64::consts::PI, e.damping_gamma)
}

/// Scaled complementary error function `e^{z²}·erfc(z)` for `z ≥ 0`.
pub(crate) fn erfcx(z: f64) -> f64 {
    if z < 20.0 {
        (z * z).exp() * erfc(z)
    } else {
        // Asymptotic series; the next term is below 1e-13 relative at z = 20.
        let inv2z2 = 1.0 / (2.0 * z * z);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..=6 {
            term *= -((2 * n - 1) as f64) * inv2z2;
            sum += term;
        }
        sum / (z * std::f64::consts::PI.sqrt())
    }
}

/// Gaussian kernel with standard deviation `sigma`.
pub(crate) fn gaussian(t: f64, sigma: f64) -> f64 {
    (-t * t / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// `u(t) = (e^{-λs}·H(s)) ⊛ G_σ` evaluated at `t`, with its derivatives.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ExpGauss {
    pub value: f64,
    pub d_t: f64,
    pub d_rate: f64,
}

pub(crate) fn exp_gauss(t: f64, rate: f64, sigma: f64) -> ExpGauss {
    if sigma <= 0.0 {
        if t < 0.0 {
            return ExpGauss { value: 0.0, d_t: 0.0, d_rate: 0.0 };
        }
        let v = (-rate * t).exp();
        return ExpGauss { value: v, d_t: -rate * v, d_rate: -t * v };
    }
    let z = (rate * sigma * sigma - t) / (std::f64::consts::SQRT_2 * sigma);
    let value = if z >= 0.0 {
        0.5 * (-t * t / (2.0 * sigma * sigma)).exp() * erfcx(z)
    } else {
        0.5 * (rate * rate * sigma * sigma / 2.0 - rate * t).exp() * erfc(z)
    };
    let g = gaussian(t, sigma);
    ExpGauss {
        value,
        d_t: g - rate * value,
        d_rate: (rate * sigma * sigma - t) * value - sigma * sigma * g,
    }
}

/// Decay curve value with derivatives with respect to time and both decay
/// rates (λ_XX, λ_X).
#[derive(Clone, Copy, Debug)]
pub(crate) struct DecayEval {
    pub value: f64,
    pub d_t: f64,
    pub d_rate_xx: f64,
    pub d_rate_x: f64,
}

const DEGENERATE_REL: f64 = 1e-6;

pub(crate) fn decay_eval(t: f64, rate_xx: f64, rate_x: f64, sigma: f64, species: Species) -> DecayEval {
    let uxx = exp_gauss(t, rate_xx, sigma);
    match species {
        Species::Xx => DecayEval {
            value: rate_xx * uxx.value,
            d_t: rate_xx * uxx.d_t,
            d_rate_xx: uxx.value + rate_xx * uxx.d_rate,
            d_rate_x: 0.0,
        },
        Species::X => {
            let diff = rate_x - rate_xx;
            if diff.abs() <= DEGENERATE_REL * rate_x.max(rate_xx) {
                // λ²·(t e^{-λt}) ⊛ G = -λ²·∂u/∂λ, with λ the mean rate.
                let lam = 0.5 * (rate_x + rate_xx);
                let h = 1e-4 * lam;
                let u = |r: f64| exp_gauss(t, r, sigma);
                let val = |r: f64| -r * r * u(r).d_rate;
                let value = val(lam);
                let dt = {
                    let eps = 1e-3 * sigma.max(1.0);
                    let f = |tt: f64| -lam * lam * exp_gauss(tt, lam, sigma).d_rate;
                    (f(t + eps) - f(t - eps)) / (2.0 * eps)
                };
                let dl = (val(lam + h) - val(lam - h)) / (2.0 * h);
                return DecayEval { value, d_t: dt, d_rate_xx: 0.5 * dl, d_rate_x: 0.5 * dl };
            }
            let ux = exp_gauss(t, rate_x, sigma);
            let c = rate_x * rate_xx / diff;
            let dc_dxx = rate_x * rate_x / (diff * diff);
            let dc_dx = -rate_xx * rate_xx / (diff * diff);
            let delta = uxx.value - ux.value;
            DecayEval {
                value: c * delta,
                d_t: c * (uxx.d_t - ux.d_t),
                d_rate_xx: dc_dxx * delta + c * uxx.d_rate,
                d_rate_x: dc_dx * delta - c * ux.d_rate,
            }
        }
    }
}

/// Normalized emission-time distribution of the XX or X photon after the
/// excitation pulse, convolved with a Gaussian IRF of the detector's FWHM.
pub fn cascade_decay_curve(t_ps: f64, p: &EmitterParams, d: &DetectorParams, species: Species) -> f64 {
    decay_eval(t_ps, 1.0 / p.t1_xx_ps, 1.0 / p.t1_x_ps, d.jitter_sigma_ps(), species).value
}

/// Time of the X-curve maximum without IRF: `ln(λ_XX/λ_X)/(λ_XX - λ_X)`.
pub fn x_peak_time(t1_xx_ps: f64, t1_x_ps: f64) -> f64 {
    let (a, b) = (1.0 / t1_xx_ps, 1.0 / t1_x_ps);
    if ((a - b) / a).abs() < DEGENERATE_REL {
        return t1_x_ps;
    }
    (a / b).ln() / (a - b)
}
