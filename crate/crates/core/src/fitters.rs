//! Curve fits: IRF-convolved cascade decays, Rabi oscillations, FSS from
//! waveplate-rotation spectra, Lorentzian fidelity-vs-FSS trends, plus
//! ensemble statistics.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::cascade::{decay_eval, predicted_fidelity, EmitterParams, Species, FWHM_TO_SIGMA};
use crate::correlate::CoincidenceHistogram;
use crate::error::{Error, Result};
use crate::linalg::solve;
use crate::lm::{levenberg_marquardt, LmOptions, LmOutcome, Model};
use crate::sim::derive_block_seed;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitParam {
    pub name: &'static str,
    pub unit: &'static str,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub params: Vec<FitParam>,
    pub chi2_reduced: f64,
    pub converged: bool,
    pub n_iterations: usize,
}

impl FitResult {
    fn from_outcome(names: &[(&'static str, &'static str)], o: &LmOutcome) -> Self {
        FitResult {
            params: names
                .iter()
                .zip(o.params.iter().zip(&o.stderrs))
                .map(|(&(name, unit), (&value, &stderr))| FitParam { name, unit, value, stderr })
                .collect(),
            chi2_reduced: o.chi2_reduced(),
            converged: o.converged,
            n_iterations: o.iterations,
        }
    }

    pub fn get(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Value of a named parameter; panics on an unknown name.
    pub fn value(&self, name: &str) -> f64 {
        self.get(name).unwrap_or_else(|| panic!("no fit parameter '{name}'")).value
    }

    pub fn stderr(&self, name: &str) -> f64 {
        self.get(name).unwrap_or_else(|| panic!("no fit parameter '{name}'")).stderr
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        for p in &self.params {
            let _ = writeln!(out, "{:<14} = {:>14.6} ± {:<12.6} {}", p.name, p.value, p.stderr, p.unit);
        }
        let _ = writeln!(out, "chi2_reduced   = {:.6}", self.chi2_reduced);
        let _ = writeln!(out, "converged      = {} ({} iterations)", self.converged, self.n_iterations);
        out
    }
}

fn require_converged(o: &LmOutcome, what: &str) -> Result<()> {
    if o.converged {
        Ok(())
    } else {
        Err(Error::Fit(format!("{what} did not converge in {} iterations", o.iterations)))
    }
}

/// Paired samples read from `x,y[,yerr]` CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct XyData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub yerr: Option<Vec<f64>>,
}

impl XyData {
    /// Parses comma-separated rows; `#` lines and a non-numeric first row
    /// are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut first = true;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            match parsed {
                Ok(v) => {
                    if v.len() < 2 || v.len() > 3 {
                        return Err(Error::parse(format!("line {}", n + 1), format!("expected 2 or 3 columns, found {}", v.len())));
                    }
                    if let Some(r) = rows.first() {
                        if r.len() != v.len() {
                            return Err(Error::parse(format!("line {}", n + 1), "inconsistent column count"));
                        }
                    }
                    rows.push(v);
                }
                Err(_) if first => {}
                Err(_) => return Err(Error::parse(format!("line {}", n + 1), "non-numeric value")),
            }
            first = false;
        }
        let has_err = rows.first().is_some_and(|r| r.len() == 3);
        Ok(XyData {
            x: rows.iter().map(|r| r[0]).collect(),
            y: rows.iter().map(|r| r[1]).collect(),
            yerr: has_err.then(|| rows.iter().map(|r| r[2]).collect()),
        })
    }
}

/// `x,model` rows for plotting.
pub fn model_curve_csv(x: &[f64], f: impl Fn(f64) -> f64) -> String {
    let mut out = String::from("x,model\n");
    for &xi in x {
        let _ = writeln!(out, "{},{}", xi, f(xi));
    }
    out
}

// ---------------------------------------------------------------- decay

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecayModel {
    /// Parameters: amplitude, t0, t1_xx, floor.
    Xx,
    /// Parameters: amplitude, t0, t1_xx, t1_x, floor. The X curve is
    /// symmetric in the two lifetimes, so pinning T₁,XX from a separate XX
    /// fit is what makes the X lifetime identifiable by name.
    X { fixed_t1_xx_ps: Option<f64> },
}

/// Counts per bin: `A·w·curve(t - t0) + floor`, with `A` the decay area.
pub struct DecayCurve {
    pub species: Species,
    pub sigma: f64,
    pub bin_width: f64,
}

impl Model for DecayCurve {
    fn eval(&self, t: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let (a, t0, t_xx) = (p[0], p[1], p[2]);
        let (t_x, floor_idx) = match self.species {
            Species::Xx => (t_xx * 1.5, 3),
            Species::X => (p[3], 4),
        };
        let e = decay_eval(t - t0, 1.0 / t_xx, 1.0 / t_x, self.sigma, self.species);
        let w = self.bin_width;
        g[0] = w * e.value;
        g[1] = -a * w * e.d_t;
        g[2] = -a * w * e.d_rate_xx / (t_xx * t_xx);
        if self.species == Species::X {
            g[3] = -a * w * e.d_rate_x / (t_x * t_x);
        }
        g[floor_idx] = 1.0;
        a * w * e.value + p[floor_idx]
    }

    fn valid(&self, p: &[f64]) -> bool {
        p[2] > 0.0 && (self.species == Species::Xx || p[3] > 0.0)
    }
}

/// Fitted decay model as a function of delay, parameters in the order
/// reported by [`fit_decay`].
pub fn decay_model_fn(species: Species, irf_fwhm_ps: f64, bin_width_ps: f64, params: Vec<f64>) -> impl Fn(f64) -> f64 {
    let curve = DecayCurve { species, sigma: irf_fwhm_ps * FWHM_TO_SIGMA, bin_width: bin_width_ps };
    move |t| curve.eval(t, &params, &mut [0.0; 5])
}

fn percentile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[((s.len() - 1) as f64 * q).round() as usize]
}

/// Fits the IRF-convolved cascade decay to a start(sync)–stop histogram.
/// With zero IRF width the onset `t0` is pinned to the lower edge of the
/// maximum bin, since a sharp edge carries no gradient information.
pub fn fit_decay(h: &CoincidenceHistogram, irf_fwhm_ps: f64, model: DecayModel) -> Result<FitResult> {
    if !(irf_fwhm_ps >= 0.0) {
        return Err(Error::InvalidParameter(format!("IRF FWHM must be >= 0, got {irf_fwhm_ps}")));
    }
    let x: Vec<f64> = (0..h.counts.len()).map(|i| h.bin_center(i)).collect();
    let y: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    let sigma: Vec<f64> = y.iter().map(|&c| c.max(1.0).sqrt()).collect();
    let species = match model {
        DecayModel::Xx => Species::Xx,
        DecayModel::X { .. } => Species::X,
    };
    let n_free_max = if species == Species::Xx { 4 } else { 5 };
    if x.len() < n_free_max + 3 {
        return Err(Error::InsufficientData(format!("decay fit needs at least {} bins, got {}", n_free_max + 3, x.len())));
    }

    let floor0 = percentile(&y, 0.2);
    let ipk = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    let t_pk = x[ipk];
    let (mut num, mut den) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(&y).skip(ipk) {
        let c = (yi - floor0).max(0.0);
        num += c * (xi - t_pk);
        den += c;
    }
    let tau0 = if den > 0.0 { (num / den).clamp(10.0, 5000.0) } else { 100.0 };
    let area0 = y.iter().map(|c| (c - floor0).max(0.0)).sum::<f64>() / h.bin_width_ps;
    let sig = irf_fwhm_ps * FWHM_TO_SIGMA;
    let pinned_t0 = irf_fwhm_ps == 0.0;
    let t0 = if pinned_t0 { t_pk - 0.5 * h.bin_width_ps } else { t_pk - 0.5 * sig };

    let lm = LmOptions::default();
    let curve = DecayCurve { species, sigma: sig, bin_width: h.bin_width_ps };
    let (p0, free, names): (Vec<f64>, Vec<bool>, Vec<(&'static str, &'static str)>) = match model {
        DecayModel::Xx => (
            vec![area0, t0, tau0, floor0],
            vec![true, !pinned_t0, true, true],
            vec![("amplitude", "counts"), ("t0", "ps"), ("t1_xx", "ps"), ("floor", "counts/bin")],
        ),
        DecayModel::X { fixed_t1_xx_ps } => {
            let (txx, fix) = match fixed_t1_xx_ps {
                Some(v) if v > 0.0 => (v, true),
                Some(v) => return Err(Error::InvalidParameter(format!("fixed T1,XX must be > 0, got {v}"))),
                None => (0.6 * tau0, false),
            };
            let tx = if ((tau0 - txx) / tau0).abs() < 0.05 { tau0 * 1.2 } else { tau0 };
            (
                vec![area0, t0 - 0.3 * txx, txx, tx, floor0],
                vec![true, !pinned_t0, !fix, true, true],
                vec![("amplitude", "counts"), ("t0", "ps"), ("t1_xx", "ps"), ("t1_x", "ps"), ("floor", "counts/bin")],
            )
        }
    };
    let o = levenberg_marquardt(&curve, &x, &y, Some(&sigma), &p0, &free, &lm);
    require_converged(&o, "decay fit")?;
    Ok(FitResult::from_outcome(&names, &o))
}

// ---------------------------------------------------------------- Rabi

/// `A·P_XX(s·x, γ)` with parameters `[A, s, γ]`.
pub struct RabiCurve;

impl Model for RabiCurve {
    fn eval(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let (a, s, gamma) = (p[0], p[1], p[2]);
        let theta = s * x;
        let (sin, cos) = theta.sin_cos();
        let damp = (-gamma * theta / PI).exp();
        let pop = 0.5 * (1.0 - cos * damp);
        let d_theta = 0.5 * damp * (sin + cos * gamma / PI);
        g[0] = pop;
        g[1] = a * d_theta * x;
        g[2] = a * 0.5 * cos * damp * theta / PI;
        a * pop
    }

    fn valid(&self, p: &[f64]) -> bool {
        p[1] > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RabiFit {
    pub fit: FitResult,
    /// Pulse area of the first maximum of the fitted model, in radians.
    pub first_max_theta: f64,
    /// Maxima up to 7π on the calibrated axis (first maximum at exactly 1), in units of π.
    pub maxima_pi: Vec<f64>,
    /// Same maxima in the input abscissa units.
    pub maxima_x: Vec<f64>,
}

impl RabiFit {
    /// Converts an input abscissa to calibrated pulse area in units of π.
    pub fn calibrated_area_pi(&self, x: f64) -> f64 {
        self.fit.value("scale") * x / self.first_max_theta
    }
}

/// Fits intensity vs excitation amplitude (pulse area or √power) to a damped
/// Rabi curve and reports maxima with the first one calibrated to π.
pub fn fit_rabi(x: &[f64], y: &[f64]) -> Result<RabiFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter("abscissa and intensity lengths differ".into()));
    }
    if x.len() < 10 {
        return Err(Error::InsufficientData(format!("Rabi fit needs at least 10 points, got {}", x.len())));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let imax = ys.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    if imax == 0 || imax == ys.len() - 1 {
        return Err(Error::Fit("no interior maximum in the data range".into()));
    }
    let x_max = xs[xs.len() - 1];
    if !(x_max > 0.0) {
        return Err(Error::InvalidParameter("Rabi abscissa must extend to positive values".into()));
    }

    // Coarse grid over the scale and damping with the amplitude solved
    // linearly, then polish.
    let mut best = (f64::INFINITY, [0.0; 3]);
    let mut g = [0.0; 3];
    for k in 0..800 {
        let theta_end = PI * 1.5 * (40.0f64 / 1.5).powf(k as f64 / 799.0);
        let s = theta_end / x_max;
        for gamma in [0.0, 0.05, 0.15, 0.4] {
            let pops: Vec<f64> = xs.iter().map(|&xi| RabiCurve.eval(xi, &[1.0, s, gamma], &mut g)).collect();
            let spp: f64 = pops.iter().map(|p| p * p).sum();
            if spp == 0.0 {
                continue;
            }
            let a = pops.iter().zip(&ys).map(|(p, y)| p * y).sum::<f64>() / spp;
            let c2: f64 = pops.iter().zip(&ys).map(|(p, y)| (y - a * p).powi(2)).sum();
            if c2 < best.0 {
                best = (c2, [a, s, gamma]);
            }
        }
    }
    let o = levenberg_marquardt(&RabiCurve, &xs, &ys, None, &best.1, &[true, true, true], &LmOptions::default());
    require_converged(&o, "Rabi fit")?;
    let fit = FitResult::from_outcome(&[("amplitude", "a.u."), ("scale", "rad/unit"), ("gamma", "")], &o);
    let (s, gamma) = (o.params[1], o.params[2]);
    if s * (xs[xs.len() - 1] - xs[0]) < 2.0 * PI {
        return Err(Error::InsufficientData("data span less than 2π of pulse area".into()));
    }
    let shift = (gamma / PI).atan();
    let first = PI - shift;
    let x_first = first / s;
    if !(x_first > xs[0] && x_first < xs[xs.len() - 1]) {
        return Err(Error::Fit("no interior maximum in the data range".into()));
    }
    let thetas: Vec<f64> = [1.0, 3.0, 5.0, 7.0].iter().map(|k| k * PI - shift).collect();
    Ok(RabiFit {
        maxima_pi: thetas.iter().map(|t| t / first).collect(),
        maxima_x: thetas.iter().map(|t| t / s).collect(),
        first_max_theta: first,
        fit,
    })
}

// ---------------------------------------------------------------- FSS

/// Which amplitude of the X−XX oscillation is reported as the FSS.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FssConvention {
    /// Full swing of the difference, `S` in `E₀ + (S/2)·cos(4α + φ)`.
    #[default]
    PeakToPeak,
    /// Sinusoid semi-amplitude.
    SemiAmplitude,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSeries {
    pub alpha_rad: Vec<f64>,
    pub x_uev: Vec<f64>,
    pub xx_uev: Vec<f64>,
}

impl SpectrumSeries {
    pub fn new(alpha_rad: Vec<f64>, x_uev: Vec<f64>, xx_uev: Vec<f64>) -> Result<Self> {
        if alpha_rad.len() != x_uev.len() || alpha_rad.len() != xx_uev.len() {
            return Err(Error::InvalidParameter("spectrum series columns differ in length".into()));
        }
        if alpha_rad.len() < 8 {
            return Err(Error::InsufficientData(format!("need at least 8 angles, got {}", alpha_rad.len())));
        }
        let lo = alpha_rad.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = alpha_rad.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < PI / 2.0 - 1e-12 {
            return Err(Error::InsufficientData(format!("angles span {:.4} rad, need at least π/2", hi - lo)));
        }
        Ok(SpectrumSeries { alpha_rad, x_uev, xx_uev })
    }

    /// Reads `alpha_rad,x_uev,xx_uev` rows.
    pub fn from_csv(text: &str) -> Result<Self> {
        let (mut a, mut x, mut xx) = (Vec::new(), Vec::new(), Vec::new());
        let mut header_seen = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let loc = format!("line {}", n + 1);
            if !header_seen {
                header_seen = true;
                if line.replace(' ', "") == "alpha_rad,x_uev,xx_uev" {
                    continue;
                }
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::parse(loc, format!("expected 3 columns, found {}", cols.len())));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(loc.clone(), format!("bad number '{s}'")));
            a.push(parse(cols[0])?);
            x.push(parse(cols[1])?);
            xx.push(parse(cols[2])?);
        }
        SpectrumSeries::new(a, x, xx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FssFit {
    /// Parameters `e0` (μeV), `s` (μeV), `phase` (rad).
    pub fit: FitResult,
    pub convention: FssConvention,
    /// Amplitude within one standard error of zero, or numerically zero.
    pub degenerate: bool,
}

/// Linear least squares of the X−XX energy difference on
/// `E₀ + a·cos4α + b·sin4α`.
pub fn fit_fss(series: &SpectrumSeries, convention: FssConvention) -> Result<FssFit> {
    let s = SpectrumSeries::new(series.alpha_rad.clone(), series.x_uev.clone(), series.xx_uev.clone())?;
    let d: Vec<f64> = s.x_uev.iter().zip(&s.xx_uev).map(|(x, xx)| x - xx).collect();
    let rows: Vec<[f64; 3]> = s.alpha_rad.iter().map(|&a| [1.0, (4.0 * a).cos(), (4.0 * a).sin()]).collect();
    let mut ata = vec![vec![0.0; 3]; 3];
    let mut atb = vec![0.0; 3];
    for (r, &di) in rows.iter().zip(&d) {
        for i in 0..3 {
            atb[i] += r[i] * di;
            for j in 0..3 {
                ata[i][j] += r[i] * r[j];
            }
        }
    }
    let c = solve(&ata, &atb).ok_or_else(|| Error::Fit("angles do not resolve the 4α harmonic".into()))?;
    let rss: f64 = rows.iter().zip(&d).map(|(r, di)| (di - (c[0] * r[0] + c[1] * r[1] + c[2] * r[2])).powi(2)).sum();
    let dof = d.len() - 3;
    let var = rss / dof as f64;
    let cov: Vec<Vec<f64>> = (0..3)
        .map(|j| {
            let mut e = vec![0.0; 3];
            e[j] = 1.0;
            solve(&ata, &e).expect("solvable").iter().map(|v| v * var).collect()
        })
        .collect();
    let (a, b) = (c[1], c[2]);
    let amp = a.hypot(b);
    let amp_err = if amp > 0.0 {
        ((a * a * cov[1][1] + b * b * cov[2][2] + 2.0 * a * b * cov[1][2]) / (amp * amp)).max(0.0).sqrt()
    } else {
        (0.5 * (cov[1][1] + cov[2][2])).max(0.0).sqrt()
    };
    let phase = (-b).atan2(a);
    let phase_err = if amp > 0.0 {
        ((b * b * cov[1][1] + a * a * cov[2][2] - 2.0 * a * b * cov[1][2]) / amp.powi(4)).max(0.0).sqrt()
    } else {
        f64::INFINITY
    };
    let factor = match convention {
        FssConvention::PeakToPeak => 2.0,
        FssConvention::SemiAmplitude => 1.0,
    };
    let fit = FitResult {
        params: vec![
            FitParam { name: "e0", unit: "ueV", value: c[0], stderr: cov[0][0].max(0.0).sqrt() },
            FitParam { name: "s", unit: "ueV", value: factor * amp, stderr: factor * amp_err },
            FitParam { name: "phase", unit: "rad", value: phase, stderr: phase_err },
        ],
        chi2_reduced: var,
        converged: true,
        n_iterations: 1,
    };
    let numeric_zero = 1e-12 * d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(FssFit { fit, convention, degenerate: amp <= amp_err.max(numeric_zero) })
}

// ---------------------------------------------------------------- Lorentzian

/// `F∞ + A/(1 + (S/w)²)` with parameters `[F∞, A, w]`.
pub struct Lorentzian;

impl Model for Lorentzian {
    fn eval(&self, s: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let (floor, a, w) = (p[0], p[1], p[2]);
        let u = (s / w).powi(2);
        let l = 1.0 / (1.0 + u);
        g[0] = 1.0;
        g[1] = l;
        g[2] = a * 2.0 * u * l * l / w;
        floor + a * l
    }

    fn valid(&self, p: &[f64]) -> bool {
        p[2] != 0.0
    }
}

pub fn fit_lorentzian(s_uev: &[f64], f: &[f64]) -> Result<FitResult> {
    if s_uev.len() != f.len() {
        return Err(Error::InvalidParameter("S and F lengths differ".into()));
    }
    if s_uev.len() < 5 {
        return Err(Error::InsufficientData(format!("Lorentzian fit needs at least 5 points, got {}", s_uev.len())));
    }
    let (i_lo, f_lo) = f.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, v)| (i, *v)).unwrap();
    let (i_hi, f_hi) = f.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, v)| (i, *v)).unwrap();
    let half = 0.5 * (f_lo + f_hi);
    let s_abs: Vec<f64> = s_uev.iter().map(|s| s.abs()).collect();
    let w0 = s_abs
        .iter()
        .zip(f)
        .filter(|(_, &fi)| fi <= half)
        .map(|(s, _)| *s)
        .fold(f64::INFINITY, f64::min);
    let w0 = if w0.is_finite() && w0 > 0.0 { w0 } else { percentile(&s_abs, 0.5).max(1e-3) };
    let a0 = if s_abs[i_hi] <= s_abs[i_lo] { f_hi - f_lo } else { f_lo - f_hi };
    let floor0 = if a0 >= 0.0 { f_lo } else { f_hi };
    let o = levenberg_marquardt(&Lorentzian, s_uev, f, None, &[floor0, a0, w0], &[true, true, true], &LmOptions::default());
    require_converged(&o, "Lorentzian fit")?;
    let mut r = FitResult::from_outcome(&[("floor", ""), ("amplitude", ""), ("width", "ueV")], &o);
    r.params[2].value = r.params[2].value.abs();
    Ok(r)
}

// ---------------------------------------------------------------- ensemble

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YieldParams {
    /// Mean and standard deviation of the FSS after folding at zero.
    pub fss_mean_uev: f64,
    pub fss_sd_uev: f64,
    pub t1_min_ps: f64,
    pub t1_max_ps: f64,
    pub k: f64,
    pub g1_hv: f64,
    pub g1p_hv: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for YieldParams {
    fn default() -> Self {
        YieldParams {
            fss_mean_uev: 4.8,
            fss_sd_uev: 2.4,
            t1_min_ps: 120.0,
            t1_max_ps: 220.0,
            k: 0.97,
            g1_hv: 1.0,
            g1p_hv: 1.0,
            n_samples: 100_000,
            seed: 0,
        }
    }
}

fn folded_mean(mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mu.abs();
    }
    let n = StatNormal::new(0.0, 1.0).expect("unit normal");
    sigma * (2.0 / PI).sqrt() * (-mu * mu / (2.0 * sigma * sigma)).exp() + mu * (1.0 - 2.0 * n.cdf(-mu / sigma))
}

/// Parameters `(μ, σ)` of the normal whose absolute value has the given mean
/// and standard deviation.
pub fn folded_normal_params(mean: f64, sd: f64) -> Result<(f64, f64)> {
    if !(mean >= 0.0 && sd >= 0.0) {
        return Err(Error::InvalidParameter(format!("folded normal needs mean, sd >= 0, got {mean}, {sd}")));
    }
    let m2 = mean * mean + sd * sd;
    if sd == 0.0 || m2 == 0.0 {
        return Ok((mean, 0.0));
    }
    let root = m2.sqrt();
    if mean < folded_mean(0.0, root) - 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "no folded normal has mean {mean} and sd {sd} (sd/mean too large)"
        )));
    }
    let (mut lo, mut hi) = (0.0, root);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if folded_mean(mid, (m2 - mid * mid).max(0.0).sqrt()) < mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    Ok((mu, (m2 - mu * mu).max(0.0).sqrt()))
}

const YIELD_BLOCK: usize = 4096;

/// Fraction of sampled emitters whose predicted fidelity exceeds 0.5.
pub fn ensemble_yield(p: &YieldParams) -> Result<f64> {
    if p.n_samples < 10_000 {
        return Err(Error::InvalidParameter(format!("need at least 10^4 samples, got {}", p.n_samples)));
    }
    if !(p.t1_min_ps > 0.0 && p.t1_max_ps >= p.t1_min_ps) {
        return Err(Error::InvalidParameter(format!("bad T1 range [{}, {}]", p.t1_min_ps, p.t1_max_ps)));
    }
    let (mu, sigma) = folded_normal_params(p.fss_mean_uev, p.fss_sd_uev)?;
    let base = EmitterParams { k: p.k, g1_hv: p.g1_hv, g1p_hv: p.g1p_hv, ..EmitterParams::default() };
    base.validate()?;
    let n_blocks = p.n_samples.div_ceil(YIELD_BLOCK);
    let hits: Vec<Result<usize>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_block_seed(p.seed, b as u64));
            let normal = Normal::new(mu, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let n = YIELD_BLOCK.min(p.n_samples - b * YIELD_BLOCK);
            let mut count = 0;
            for _ in 0..n {
                let s = normal.sample(&mut rng).abs();
                let t1 = if p.t1_max_ps > p.t1_min_ps { rng.random_range(p.t1_min_ps..p.t1_max_ps) } else { p.t1_min_ps };
                let e = EmitterParams { fss_uev: s, t1_x_ps: t1, ..base };
                if predicted_fidelity(&e)? > 0.5 {
                    count += 1;
                }
            }
            Ok(count)
        })
        .collect();
    let mut total = 0;
    for h in hits {
        total += h?;
    }
    Ok(total as f64 / p.n_samples as f64)
}

/// Arithmetic mean and unbiased standard deviation.
pub fn sample_stats(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 values, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::xx_population_at;
    use rand_distr::Poisson;

    fn decay_hist(species: Species, p: &[f64], sigma: f64, bw: f64, lo: f64, n: usize) -> CoincidenceHistogram {
        let curve = DecayCurve { species, sigma, bin_width: bw };
        let mut g = vec![0.0; p.len()];
        let counts = (0..n).map(|i| curve.eval(lo + (i as f64 + 0.5) * bw, p, &mut g).round() as u64).collect();
        CoincidenceHistogram::new(bw, lo, counts).unwrap()
    }

    fn noiseless(species: Species, p: &[f64], sigma: f64, bw: f64, lo: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let curve = DecayCurve { species, sigma, bin_width: bw };
        let mut g = vec![0.0; p.len()];
        let x: Vec<f64> = (0..n).map(|i| lo + (i as f64 + 0.5) * bw).collect();
        let y = x.iter().map(|&t| curve.eval(t, p, &mut g)).collect();
        (x, y)
    }

    fn jacobian_check<M: Model>(m: &M, x: f64, p: &[f64]) {
        let mut g = vec![0.0; p.len()];
        let mut scratch = vec![0.0; p.len()];
        m.eval(x, p, &mut g);
        for k in 0..p.len() {
            let h = 1e-5 * p[k].abs().max(1e-3);
            let mut pp = p.to_vec();
            pp[k] += h;
            let fp = m.eval(x, &pp, &mut scratch);
            pp[k] -= 2.0 * h;
            let fm = m.eval(x, &pp, &mut scratch);
            let fd = (fp - fm) / (2.0 * h);
            let scale = g[k].abs().max(fd.abs()).max(1e-8);
            assert!((g[k] - fd).abs() <= 1e-6 * scale, "param {k} at x={x}, p={p:?}: analytic {} vs fd {fd}", g[k]);
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let sigma = rng.random_range(20.0..80.0);
            let xx = [rng.random_range(1e3..1e5), rng.random_range(-50.0..50.0), rng.random_range(60.0..200.0), rng.random_range(0.0..10.0)];
            let t = rng.random_range(-100.0..800.0);
            jacobian_check(&DecayCurve { species: Species::Xx, sigma, bin_width: 4.0 }, t, &xx);
            let t_x = xx[2] * rng.random_range(1.1..2.0);
            let x5 = [xx[0], xx[1], xx[2], t_x, xx[3]];
            jacobian_check(&DecayCurve { species: Species::X, sigma, bin_width: 4.0 }, t, &x5);
            let rabi = [rng.random_range(0.5..2.0), rng.random_range(0.5..4.0), rng.random_range(0.0..0.5)];
            jacobian_check(&RabiCurve, rng.random_range(0.1..8.0), &rabi);
            let lor = [rng.random_range(0.2..0.4), rng.random_range(0.1..0.8), rng.random_range(0.5..6.0)];
            jacobian_check(&Lorentzian, rng.random_range(0.0..15.0), &lor);
        }
    }

    #[test]
    fn decay_xx_noiseless_recovery() {
        let sigma = 100.0 * FWHM_TO_SIGMA;
        let h = decay_hist(Species::Xx, &[1e6, 0.0, 112.0, 0.0], sigma, 4.0, -400.0, 400);
        let r = fit_decay(&h, 100.0, DecayModel::Xx).unwrap();
        assert!((r.value("t1_xx") - 112.0).abs() < 0.005 * 112.0, "{}", r.report());
    }

    #[test]
    fn decay_x_poisson_recovery() {
        let sigma = 100.0 * FWHM_TO_SIGMA;
        let curve = DecayCurve { species: Species::X, sigma, bin_width: 4.0 };
        let p = [1e5, 0.0, 112.0, 134.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut g = [0.0; 5];
        let counts = (0..500)
            .map(|i| {
                let m = curve.eval(-400.0 + (i as f64 + 0.5) * 4.0, &p, &mut g);
                Poisson::new(m).unwrap().sample(&mut rng) as u64
            })
            .collect();
        let h = CoincidenceHistogram::new(4.0, -400.0, counts).unwrap();
        let r = fit_decay(&h, 100.0, DecayModel::X { fixed_t1_xx_ps: Some(112.0) }).unwrap();
        assert!((r.value("t1_x") - 134.0).abs() < 0.05 * 134.0, "{}", r.report());
        assert_eq!(r.stderr("t1_xx"), 0.0);
    }

    #[test]
    fn decay_zero_irf_matches_log_linear_slope() {
        let h = decay_hist(Species::Xx, &[1e9, 0.0, 150.0, 0.0], 0.0, 5.0, -100.0, 220);
        let r = fit_decay(&h, 0.0, DecayModel::Xx).unwrap();
        let pts: Vec<(f64, f64)> = (0..h.counts.len())
            .filter(|&i| h.bin_center(i) > 0.0 && h.counts[i] > 0)
            .map(|i| (h.bin_center(i), (h.counts[i] as f64).ln()))
            .collect();
        let n = pts.len() as f64;
        let (sx, sy) = (pts.iter().map(|p| p.0).sum::<f64>(), pts.iter().map(|p| p.1).sum::<f64>());
        let sxx = pts.iter().map(|p| p.0 * p.0).sum::<f64>();
        let sxy = pts.iter().map(|p| p.0 * p.1).sum::<f64>();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let tau_ll = -1.0 / slope;
        assert!((r.value("t1_xx") - tau_ll).abs() < 1e-3 * tau_ll, "{} vs {tau_ll}", r.value("t1_xx"));
    }

    #[test]
    fn decay_invariant_under_amplitude_scaling() {
        let sigma = 100.0 * FWHM_TO_SIGMA;
        let a = fit_decay(&decay_hist(Species::Xx, &[1e5, 10.0, 112.0, 0.0], sigma, 4.0, -400.0, 400), 100.0, DecayModel::Xx).unwrap();
        let b = fit_decay(&decay_hist(Species::Xx, &[1e5, 10.0, 112.0, 0.0], sigma, 4.0, -400.0, 400), 100.0, DecayModel::Xx).unwrap();
        let c = fit_decay(&decay_hist(Species::Xx, &[7e6, 10.0, 112.0, 0.0], sigma, 4.0, -400.0, 400), 100.0, DecayModel::Xx).unwrap();
        assert_eq!(a, b);
        assert!((a.value("t1_xx") - c.value("t1_xx")).abs() < 0.5, "{} vs {}", a.value("t1_xx"), c.value("t1_xx"));
    }

    #[test]
    fn decay_needs_enough_bins() {
        let h = CoincidenceHistogram::new(4.0, 0.0, vec![1; 6]).unwrap();
        assert!(matches!(fit_decay(&h, 100.0, DecayModel::Xx), Err(Error::InsufficientData(_))));
        assert!(fit_decay(&h, -1.0, DecayModel::Xx).is_err());
    }

    #[test]
    fn fixed_point_property() {
        let sigma = 100.0 * FWHM_TO_SIGMA;
        let (x, y) = noiseless(Species::X, &[1e5, 3.0, 112.0, 134.0, 0.2], sigma, 4.0, -300.0, 300);
        let truth = [1e5, 3.0, 112.0, 134.0, 0.2];
        let sig: Vec<f64> = y.iter().map(|v: &f64| v.max(1.0).sqrt()).collect();
        let curve = DecayCurve { species: Species::X, sigma, bin_width: 4.0 };
        let o = levenberg_marquardt(&curve, &x, &y, Some(&sig), &truth, &[true; 5], &LmOptions::default());
        for (a, b) in o.params.iter().zip(&truth) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{:?}", o.params);
        }

        let xr: Vec<f64> = (0..80).map(|i| i as f64 * 0.1).collect();
        let truth = [1.0, PI, 0.1];
        let yr: Vec<f64> = xr.iter().map(|&v| RabiCurve.eval(v, &truth, &mut [0.0; 3])).collect();
        let r = fit_rabi(&xr, &yr).unwrap();
        for (p, t) in r.fit.params.iter().zip(&truth) {
            assert!((p.value - t).abs() <= 1e-8, "{p:?}");
        }

        let s: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let truth = [0.25, 0.5, 1.5];
        let f: Vec<f64> = s.iter().map(|&v| Lorentzian.eval(v, &truth, &mut [0.0; 3])).collect();
        let l = fit_lorentzian(&s, &f).unwrap();
        for (p, t) in l.params.iter().zip(&truth) {
            assert!((p.value - t).abs() <= 1e-8, "{p:?}");
        }
    }

    #[test]
    fn rabi_noiseless_maxima() {
        let x: Vec<f64> = (1..=90).map(|i| i as f64 * 0.09).collect();
        let y: Vec<f64> = x.iter().map(|&v| 3.0 * xx_population_at(PI * v, 0.0)).collect();
        let r = fit_rabi(&x, &y).unwrap();
        for (m, k) in r.maxima_pi.iter().zip([1.0, 3.0, 5.0, 7.0]) {
            assert!((m - k).abs() < 1e-12, "{:?}", r.maxima_pi);
        }
        assert!((r.maxima_x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rabi_recovers_damping_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x: Vec<f64> = (1..=160).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| {
                let clean = xx_population_at(PI * v, 0.1);
                clean * (1.0 + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            })
            .collect();
        let r = fit_rabi(&x, &y).unwrap();
        assert!((r.fit.value("gamma") - 0.1).abs() < 0.02, "{}", r.fit.report());
    }

    #[test]
    fn rabi_rejects_bad_input() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let mono: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
        assert!(matches!(fit_rabi(&x, &mono), Err(Error::Fit(_))));
        assert!(matches!(fit_rabi(&x[..5], &mono[..5]), Err(Error::InsufficientData(_))));
    }

    fn fss_series(s: f64, phase: f64, offset: f64, noise: Option<(f64, u64)>) -> SpectrumSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.map_or(0, |n| n.1));
        let alpha: Vec<f64> = (0..24).map(|i| i as f64 * PI / 24.0).collect();
        let mut x = Vec::new();
        let mut xx = Vec::new();
        for &a in &alpha {
            let half = s / 4.0 * (4.0 * a + phase).cos();
            let mut nx = 0.0;
            let mut nxx = 0.0;
            if let Some((sd, _)) = noise {
                let n = Normal::new(0.0, sd).unwrap();
                nx = n.sample(&mut rng);
                nxx = n.sample(&mut rng);
            }
            x.push(1_590_000.0 + offset + half + nx);
            xx.push(1_557_000.0 + offset - half + nxx);
        }
        SpectrumSeries::new(alpha, x, xx).unwrap()
    }

    #[test]
    fn fss_round_trip() {
        let r = fit_fss(&fss_series(4.8, 0.3, 0.0, None), FssConvention::PeakToPeak).unwrap();
        assert!((r.fit.value("s") - 4.8).abs() < 1e-6);
        assert!((r.fit.value("phase") - 0.3).abs() < 1e-6);
        assert!(!r.degenerate);
        let semi = fit_fss(&fss_series(4.8, 0.3, 0.0, None), FssConvention::SemiAmplitude).unwrap();
        assert!((semi.fit.value("s") - 2.4).abs() < 1e-6);
    }

    #[test]
    fn fss_zero_is_degenerate() {
        let r = fit_fss(&fss_series(0.0, 0.0, 0.0, None), FssConvention::PeakToPeak).unwrap();
        assert!(r.fit.value("s").abs() < 1e-6);
        assert!(r.degenerate);
    }

    #[test]
    fn fss_with_noise_and_offset() {
        let r = fit_fss(&fss_series(2.3, 1.0, 0.0, Some((0.5, 3))), FssConvention::PeakToPeak).unwrap();
        assert!((r.fit.value("s") - 2.3).abs() < 2.0 * r.fit.stderr("s"), "{}", r.fit.report());
        let shifted = fit_fss(&fss_series(2.3, 1.0, 123.4, Some((0.5, 3))), FssConvention::PeakToPeak).unwrap();
        assert!((shifted.fit.value("s") - r.fit.value("s")).abs() < 1e-6);
    }

    #[test]
    fn fss_series_validation() {
        assert!(SpectrumSeries::new(vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]).is_err());
        let a: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        assert!(SpectrumSeries::new(a.clone(), vec![0.0; 10], vec![0.0; 10]).is_err());
        let csv = "alpha_rad,x_uev,xx_uev\n0,1,0\n";
        assert!(matches!(SpectrumSeries::from_csv(csv), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn lorentzian_round_trip_and_flat() {
        let s: Vec<f64> = (0..15).map(|i| i as f64 * 0.5).collect();
        let f: Vec<f64> = s.iter().map(|&v| 0.25 + 0.5 / (1.0 + (v / 1.5).powi(2))).collect();
        let r = fit_lorentzian(&s, &f).unwrap();
        assert!((r.value("amplitude") - 0.5).abs() < 1e-6);
        assert!((r.value("width") - 1.5).abs() < 1e-6);
        assert!((r.value("floor") - 0.25).abs() < 1e-6);

        let flat = vec![0.4; 8];
        let r = fit_lorentzian(&s[..8], &flat).unwrap();
        assert!(r.value("amplitude").abs() < 1e-9);
        assert!(fit_lorentzian(&s[..4], &flat[..4]).is_err());
    }

    #[test]
    fn lorentzian_width_of_fidelity_model() {
        let s: Vec<f64> = (0..30).map(|i| i as f64 * 0.5).collect();
        let f: Vec<f64> = s
            .iter()
            .map(|&v| predicted_fidelity(&EmitterParams { fss_uev: v, t1_x_ps: 134.0, ..EmitterParams::default() }).unwrap())
            .collect();
        let r = fit_lorentzian(&s, &f).unwrap();
        let expected = crate::quantum::PhysConsts::HBAR_UEV_PS / 134.0;
        assert!((r.value("width") - expected).abs() < 0.1 * expected);
    }

    #[test]
    fn folded_normal_solution() {
        let (mu, sigma) = folded_normal_params(4.8, 2.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(mu, sigma).unwrap();
        let v: Vec<f64> = (0..200_000).map(|_| n.sample(&mut rng).abs()).collect();
        let (m, sd) = sample_stats(&v).unwrap();
        assert!((m - 4.8).abs() < 0.03 && (sd - 2.4).abs() < 0.03, "{m} {sd}");
        assert!(folded_normal_params(1.0, 5.0).is_err());
    }

    #[test]
    fn ensemble_yield_cases() {
        let base = YieldParams { n_samples: 20_000, seed: 5, ..YieldParams::default() };
        let y = ensemble_yield(&base).unwrap();
        assert!(y >= 0.999, "{y}");
        assert_eq!(y, ensemble_yield(&base).unwrap());
        assert_eq!(ensemble_yield(&YieldParams { fss_mean_uev: 0.0, fss_sd_uev: 0.0, ..base }).unwrap(), 1.0);
        assert_eq!(ensemble_yield(&YieldParams { k: 0.0, ..base }).unwrap(), 0.0);
        assert!(ensemble_yield(&YieldParams { n_samples: 10, ..base }).is_err());
    }

    #[test]
    fn stats_cases() {
        assert_eq!(sample_stats(&[1.0, 1.0, 1.0]).unwrap(), (1.0, 0.0));
        let (m, s) = sample_stats(&[0.0, 2.0]).unwrap();
        assert_eq!(m, 1.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert!(sample_stats(&[1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = Normal::new(779.8, 1.6).unwrap();
        let v: Vec<f64> = (0..10_000).map(|_| n.sample(&mut rng)).collect();
        let (m, s) = sample_stats(&v).unwrap();
        assert!((m - 779.8).abs() < 0.05 && (s - 1.6).abs() < 0.05);
    }

    #[test]
    fn xy_csv_parsing() {
        let d = XyData::from_csv("x,y\n1,2\n3,4\n").unwrap();
        assert_eq!(d.x, vec![1.0, 3.0]);
        assert!(d.yerr.is_none());
        let e = XyData::from_csv("1,2,0.1\n3,4,0.2\n").unwrap();
        assert_eq!(e.yerr, Some(vec![0.1, 0.2]));
        assert!(matches!(XyData::from_csv("1,2\n3,oops\n"), Err(Error::Parse { .. })));
    }
}
