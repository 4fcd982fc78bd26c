//! Two-photon polarization state reconstruction from 16 projective
//! coincidence measurements.
//!
//! The maximum-likelihood estimator parameterizes `ρ = T†T / tr(T†T)` with a
//! lower-triangular `T` and profiles the overall count rate out of the
//! Poisson likelihood. With `q_i = ‖T·ψ_i‖²` the objective reduces to
//!
//! `f(T) = -Σ n_i ln q_i + N·ln Σ s_i q_i`,  `N = Σ n_i`,
//!
//! which is invariant under rescaling `T`; the expected counts are
//! `μ_i = N·s_i q_i / Σ s_j q_j`.

use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, hermitian_function, solve, symmetric_rank, Mat4};
use crate::quantum::{analyzer_ket, bell_psi_plus, concurrence, fidelity, AnalyzerSetting, DensityMatrix, TwoPhotonKet};
use crate::sim::derive_block_seed;

pub const N_SETTINGS: usize = 16;
const GRAM_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct TomoRecord {
    settings: Vec<(AnalyzerSetting, AnalyzerSetting)>,
    pub counts: Vec<u64>,
    pub seconds: Vec<f64>,
}

fn projector_kets(settings: &[(AnalyzerSetting, AnalyzerSetting)]) -> Vec<TwoPhotonKet> {
    settings.iter().map(|&(a, b)| TwoPhotonKet::product(&analyzer_ket(a), &analyzer_ket(b))).collect()
}

/// Rank of the Gram matrix `tr(P_m P_n) = |⟨ψ_m|ψ_n⟩|²` of the projectors.
pub fn gram_rank(settings: &[(AnalyzerSetting, AnalyzerSetting)]) -> usize {
    let kets = projector_kets(settings);
    let gram: Vec<Vec<f64>> = kets.iter().map(|a| kets.iter().map(|b| a.inner(b).norm_sqr()).collect()).collect();
    symmetric_rank(&gram, GRAM_RANK_TOL)
}

/// `{H,V,D,R} ⊗ {H,V,D,R}` in row-major order (first photon outer).
pub fn standard_settings() -> Vec<(AnalyzerSetting, AnalyzerSetting)> {
    let names = ['H', 'V', 'D', 'R'];
    let mut out = Vec::with_capacity(N_SETTINGS);
    for a in names {
        for b in names {
            out.push((AnalyzerSetting::named(a).expect("named"), AnalyzerSetting::named(b).expect("named")));
        }
    }
    out
}

impl TomoRecord {
    pub fn new(settings: Vec<(AnalyzerSetting, AnalyzerSetting)>, counts: Vec<u64>, seconds: Vec<f64>) -> Result<Self> {
        if settings.len() != N_SETTINGS || counts.len() != N_SETTINGS || seconds.len() != N_SETTINGS {
            return Err(Error::InvalidParameter(format!(
                "tomography record needs exactly {N_SETTINGS} settings, counts and times (got {}, {}, {})",
                settings.len(),
                counts.len(),
                seconds.len()
            )));
        }
        if let Some(s) = seconds.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!("acquisition time must be > 0, got {s}")));
        }
        let rank = gram_rank(&settings);
        if rank < N_SETTINGS {
            return Err(Error::RankDeficient(rank));
        }
        Ok(TomoRecord { settings, counts, seconds })
    }

    pub fn settings(&self) -> &[(AnalyzerSetting, AnalyzerSetting)] {
        &self.settings
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Rounded expected counts for a source of pair rate `rate_per_s`.
    pub fn expected(rho: &DensityMatrix, settings: Vec<(AnalyzerSetting, AnalyzerSetting)>, rate_per_s: f64, seconds: f64) -> Result<Self> {
        let counts = settings
            .iter()
            .map(|&(a, b)| {
                let p = crate::quantum::pair_projection_probability(rho, a, b).max(0.0);
                (rate_per_s * seconds * p).round() as u64
            })
            .collect();
        TomoRecord::new(settings, counts, vec![seconds; N_SETTINGS])
    }

    /// Reads `setting_a,setting_b,counts,seconds` rows with settings named by
    /// letters from {H,V,D,A,R,L}.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut settings = Vec::new();
        let mut counts = Vec::new();
        let mut seconds = Vec::new();
        let mut header_seen = false;
        for (n, line) in text.lines().enumerate() {
            let loc = || format!("line {}", n + 1);
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols != ["setting_a", "setting_b", "counts", "seconds"] {
                    return Err(Error::parse(loc(), "expected header 'setting_a,setting_b,counts,seconds'"));
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(Error::parse(loc(), format!("expected 4 columns, found {}", cols.len())));
            }
            let setting = |s: &str| -> Result<AnalyzerSetting> {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => AnalyzerSetting::named(c),
                    _ => None,
                }
                .ok_or_else(|| Error::parse(loc(), format!("unknown setting '{s}'")))
            };
            settings.push((setting(cols[0])?, setting(cols[1])?));
            counts.push(cols[2].parse::<u64>().map_err(|_| Error::parse(loc(), format!("bad count '{}'", cols[2])))?);
            seconds.push(cols[3].parse::<f64>().map_err(|_| Error::parse(loc(), format!("bad time '{}'", cols[3])))?);
        }
        TomoRecord::new(settings, counts, seconds)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from("setting_a,setting_b,counts,seconds\n");
        for ((a, b), (n, s)) in self.settings.iter().zip(self.counts.iter().zip(&self.seconds)) {
            let name = |x: &AnalyzerSetting| {
                x.name().ok_or_else(|| Error::InvalidParameter("setting is not one of H,V,D,A,R,L".into()))
            };
            let _ = writeln!(out, "{},{},{},{}", name(a)?, name(b)?, n, s);
        }
        Ok(out)
    }
}

/// Design matrix mapping the 16 real parameters of a Hermitian matrix
/// (4 diagonal entries, then Re and Im of the 6 upper off-diagonal entries)
/// to the projection probabilities `⟨ψ_m|ρ|ψ_m⟩`.
fn design_matrix(kets: &[TwoPhotonKet]) -> Vec<Vec<f64>> {
    kets.iter()
        .map(|k| {
            let a = &k.amps;
            let mut row: Vec<f64> = (0..4).map(|i| a[i].norm_sqr()).collect();
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let c = a[i].conj() * a[j];
                    row.push(2.0 * c.re);
                    row.push(-2.0 * c.im);
                }
            }
            row
        })
        .collect()
}

fn hermitian_from_params(x: &[f64]) -> Mat4 {
    let mut m = Mat4::zeros();
    for i in 0..4 {
        m.0[i][i] = C64::new(x[i], 0.0);
    }
    let mut k = 4;
    for i in 0..4 {
        for j in (i + 1)..4 {
            m.0[i][j] = C64::new(x[k], x[k + 1]);
            m.0[j][i] = C64::new(x[k], -x[k + 1]);
            k += 2;
        }
    }
    m
}

/// Least-squares inversion of the measured rates `n_i / s_i`, normalized to
/// unit trace. The result may have negative eigenvalues and is flagged
/// unconstrained.
pub fn linear_reconstruct(rec: &TomoRecord) -> Result<DensityMatrix> {
    if rec.total_counts() == 0 {
        return Err(Error::InsufficientData("tomography record has no counts".into()));
    }
    let a = design_matrix(&projector_kets(&rec.settings));
    let rates: Vec<f64> = rec.counts.iter().zip(&rec.seconds).map(|(&n, &s)| n as f64 / s).collect();
    let mut ata = vec![vec![0.0; N_SETTINGS]; N_SETTINGS];
    let mut atb = vec![0.0; N_SETTINGS];
    for (row, &r) in a.iter().zip(&rates) {
        for i in 0..N_SETTINGS {
            atb[i] += row[i] * r;
            for j in 0..N_SETTINGS {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let x = solve(&ata, &atb).ok_or(Error::RankDeficient(symmetric_rank(&ata, GRAM_RANK_TOL)))?;
    let m = hermitian_from_params(&x);
    let tr = m.trace().re;
    if !(tr > 0.0) {
        return Err(Error::InsufficientData("linear estimate has non-positive trace".into()));
    }
    DensityMatrix::new_unconstrained(m.scale(1.0 / tr))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MleResult {
    pub rho: DensityMatrix,
    pub neg_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleOptions {
    pub max_iterations: usize,
    pub step_tol: f64,
    pub decrease_tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions { max_iterations: 2000, step_tol: 1e-9, decrease_tol: 1e-10 }
    }
}

/// Entries of `T` carried by each real parameter: `(row, col, imaginary)`.
fn cholesky_layout() -> Vec<(usize, usize, bool)> {
    let mut layout: Vec<(usize, usize, bool)> = (0..4).map(|i| (i, i, false)).collect();
    for i in 1..4 {
        for j in 0..i {
            layout.push((i, j, false));
            layout.push((i, j, true));
        }
    }
    layout
}

fn t_from_params(t: &[f64], layout: &[(usize, usize, bool)]) -> Mat4 {
    let mut m = Mat4::zeros();
    for (&v, &(i, j, imag)) in t.iter().zip(layout) {
        if imag {
            m.0[i][j].im = v;
        } else {
            m.0[i][j].re = v;
        }
    }
    m
}

/// Lower-triangular `T` with `ρ = T†T`, for positive-definite `ρ`.
fn lower_factor(rho: &Mat4) -> Result<Mat4> {
    // Cholesky of the index-reversed matrix J·ρ·J = L·L†, then T = (J·L·J)†.
    let mut a = [[C64::new(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = rho.0[3 - i][3 - j];
        }
    }
    let mut l = [[C64::new(0.0, 0.0); 4]; 4];
    for j in 0..4 {
        let d = a[j][j].re - (0..j).map(|k| l[j][k].norm_sqr()).sum::<f64>();
        if !(d > 0.0) {
            return Err(Error::NonPhysical("initial state is not positive definite".into()));
        }
        l[j][j] = C64::new(d.sqrt(), 0.0);
        for i in (j + 1)..4 {
            let s: C64 = (0..j).map(|k| l[i][k] * l[j][k].conj()).sum();
            l[i][j] = (a[i][j] - s) / l[j][j].re;
        }
    }
    let mut upper = Mat4::zeros();
    for i in 0..4 {
        for j in 0..4 {
            upper.0[i][j] = l[3 - i][3 - j];
        }
    }
    Ok(upper.adjoint())
}

struct Objective<'a> {
    kets: Vec<TwoPhotonKet>,
    rec: &'a TomoRecord,
    layout: Vec<(usize, usize, bool)>,
    n_total: f64,
}

struct Eval {
    f: f64,
    q: Vec<f64>,
    tpsi: Vec<[C64; 4]>,
}

impl<'a> Objective<'a> {
    fn new(rec: &'a TomoRecord) -> Self {
        Objective {
            kets: projector_kets(&rec.settings),
            rec,
            layout: cholesky_layout(),
            n_total: rec.total_counts() as f64,
        }
    }

    fn eval(&self, t: &[f64]) -> Eval {
        let tm = t_from_params(t, &self.layout);
        let tpsi: Vec<[C64; 4]> = self.kets.iter().map(|k| tm.mul_vec(&k.amps)).collect();
        let q: Vec<f64> = tpsi.iter().map(|v| v.iter().map(|z| z.norm_sqr()).sum()).collect();
        let sq: f64 = q.iter().zip(&self.rec.seconds).map(|(q, s)| q * s).sum();
        let mut f = self.n_total * sq.ln();
        for (&n, &qi) in self.rec.counts.iter().zip(&q) {
            if n > 0 {
                f -= n as f64 * qi.ln();
            }
        }
        if !f.is_finite() {
            f = f64::INFINITY;
        }
        Eval { f, q, tpsi }
    }

    /// Gradient of `ln q_i` for each setting.
    fn log_q_gradients(&self, e: &Eval) -> Vec<[f64; N_SETTINGS]> {
        self.kets
            .iter()
            .zip(&e.tpsi)
            .zip(&e.q)
            .map(|((k, u), &q)| {
                let mut g = [0.0; N_SETTINGS];
                for (p, &(i, j, imag)) in self.layout.iter().enumerate() {
                    let c = u[i].conj() * k.amps[j];
                    g[p] = if imag { -2.0 * c.im } else { 2.0 * c.re } / q;
                }
                g
            })
            .collect()
    }

    fn expected_counts(&self, e: &Eval) -> Vec<f64> {
        let sq: f64 = e.q.iter().zip(&self.rec.seconds).map(|(q, s)| q * s).sum();
        e.q.iter().zip(&self.rec.seconds).map(|(q, s)| self.n_total * s * q / sq).collect()
    }
}

fn normalize(t: &mut [f64]) {
    let n = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        t.iter_mut().for_each(|v| *v /= n);
    }
}

fn rho_from_params(t: &[f64], layout: &[(usize, usize, bool)]) -> Result<DensityMatrix> {
    let tm = t_from_params(t, layout);
    let m = (tm.adjoint() * tm).hermitian_part();
    let tr = m.trace().re;
    let m = m.scale(1.0 / tr);
    match DensityMatrix::new(m) {
        Ok(r) => Ok(r),
        Err(_) => DensityMatrix::new_unconstrained(m)?.project_physical(),
    }
}

/// Poisson negative log-likelihood `Σ [μ_i - n_i ln μ_i]` of `ρ` with the
/// overall rate at its maximum-likelihood value.
pub fn neg_log_likelihood(rec: &TomoRecord, rho: &DensityMatrix) -> f64 {
    let kets = projector_kets(&rec.settings);
    let p: Vec<f64> = kets.iter().map(|k| rho.matrix().expectation(&k.amps).re.max(0.0)).collect();
    let n_total = rec.total_counts() as f64;
    let sp: f64 = p.iter().zip(&rec.seconds).map(|(p, s)| p * s).sum();
    let mut nll = 0.0;
    for ((&n, &pi), &s) in rec.counts.iter().zip(&p).zip(&rec.seconds) {
        let mu = n_total * s * pi / sp;
        nll += mu;
        if n > 0 {
            nll -= n as f64 * mu.ln();
        }
    }
    if nll.is_nan() { f64::INFINITY } else { nll }
}

/// Linear estimate with eigenvalues floored at `1e-6` and renormalized.
pub fn regularized_linear(rec: &TomoRecord) -> Result<DensityMatrix> {
    let lin = linear_reconstruct(rec)?;
    let floored = hermitian_function(&lin.matrix().hermitian_part(), |l| l.max(1e-6));
    let tr = floored.trace().re;
    DensityMatrix::new(floored.scale(1.0 / tr))
}

pub fn mle_reconstruct(rec: &TomoRecord, init: Option<&DensityMatrix>) -> Result<MleResult> {
    mle_reconstruct_with(rec, init, MleOptions::default())
}

/// Damped Gauss–Newton (Fisher scoring) on the Cholesky parameters. A step is
/// accepted only if it lowers the objective; otherwise the damping grows.
pub fn mle_reconstruct_with(rec: &TomoRecord, init: Option<&DensityMatrix>, opts: MleOptions) -> Result<MleResult> {
    if rec.total_counts() == 0 {
        return Err(Error::InsufficientData("tomography record has no counts".into()));
    }
    let start = match init {
        Some(r) => {
            let floored = hermitian_function(&r.matrix().hermitian_part(), |l| l.max(1e-6));
            floored.scale(1.0 / floored.trace().re)
        }
        None => match regularized_linear(rec) {
            Ok(r) => *r.matrix(),
            Err(Error::InsufficientData(_)) => *DensityMatrix::maximally_mixed().matrix(),
            Err(e) => return Err(e),
        },
    };
    let obj = Objective::new(rec);
    // An ill-conditioned start can defeat the factorization; the mixed state never does.
    let tm = lower_factor(&start).or_else(|_| lower_factor(DensityMatrix::maximally_mixed().matrix()))?;
    let mut t: Vec<f64> = obj.layout.iter().map(|&(i, j, imag)| if imag { tm.0[i][j].im } else { tm.0[i][j].re }).collect();
    normalize(&mut t);

    let mut cur = obj.eval(&t);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let grads = obj.log_q_gradients(&cur);
        let mu = obj.expected_counts(&cur);
        let mut grad = [0.0; N_SETTINGS];
        let mut mean_g = [0.0; N_SETTINGS];
        for ((g, &m), &n) in grads.iter().zip(&mu).zip(&rec.counts) {
            for p in 0..N_SETTINGS {
                grad[p] += (m - n as f64) * g[p];
                mean_g[p] += m * g[p] / obj.n_total;
            }
        }
        let mut fisher = vec![vec![0.0; N_SETTINGS]; N_SETTINGS];
        for (g, &m) in grads.iter().zip(&mu) {
            for a in 0..N_SETTINGS {
                let da = g[a] - mean_g[a];
                for b in 0..N_SETTINGS {
                    fisher[a][b] += m * da * (g[b] - mean_g[b]);
                }
            }
        }
        let scale = (0..N_SETTINGS).map(|i| fisher[i][i]).fold(0.0f64, f64::max).max(1e-300);

        let mut accepted = false;
        while lambda < 1e20 {
            let mut damped = fisher.clone();
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * scale;
            }
            let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
            let step = solve(&damped, &neg_grad).unwrap_or_else(|| neg_grad.iter().map(|g| g / (lambda * scale)).collect());
            let mut trial: Vec<f64> = t.iter().zip(&step).map(|(a, b)| a + b).collect();
            normalize(&mut trial);
            let next = obj.eval(&trial);
            if next.f <= cur.f {
                let step_norm = trial.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let decrease = cur.f - next.f;
                t = trial;
                cur = next;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if step_norm < opts.step_tol && decrease < opts.decrease_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step exists at any damping: stationary to precision.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let rho = rho_from_params(&t, &obj.layout)?;
    Ok(MleResult { neg_log_likelihood: neg_log_likelihood(rec, &rho), rho, iterations, converged })
}

/// Inverts a white-noise admixture: `(ρ - (1-k)·I/4)/k`, projected onto the
/// physical set.
pub fn background_correct(rho: &DensityMatrix, k: f64) -> Result<DensityMatrix> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::InvalidParameter(format!("background fraction k must lie in (0, 1], got {k}")));
    }
    let m = (*rho.matrix() - Mat4::identity().scale((1.0 - k) / 4.0)).scale(1.0 / k);
    let projected = hermitian_function(&m.hermitian_part(), |l| l.max(0.0));
    let tr = projected.trace().re;
    let out = projected.scale(1.0 / tr);
    match DensityMatrix::new(out) {
        Ok(r) => Ok(r),
        Err(_) => DensityMatrix::new_unconstrained(out)?.project_physical(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BootstrapErrors {
    pub fidelity_mean: f64,
    pub fidelity_stderr: f64,
    pub concurrence_mean: f64,
    pub concurrence_stderr: f64,
    pub n_resamples: usize,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Poisson-resamples every setting's counts, re-runs the MLE and reports the
/// sample standard deviation of the fidelity to `|ψ⁺⟩` and the concurrence.
/// With `correction = Some(k)` each resample is background-corrected first.
pub fn bootstrap_errors(rec: &TomoRecord, n_resamples: usize, seed: u64, correction: Option<f64>) -> Result<BootstrapErrors> {
    if n_resamples < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 resamples, got {n_resamples}")));
    }
    let target = bell_psi_plus();
    let samples: Vec<(f64, f64)> = (0..n_resamples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_block_seed(seed, i));
            let counts = rec
                .counts
                .iter()
                .map(|&n| if n == 0 { 0 } else { Poisson::new(n as f64).expect("positive mean").sample(&mut rng) as u64 })
                .collect();
            let resampled = TomoRecord { settings: rec.settings.clone(), counts, seconds: rec.seconds.clone() };
            let mut rho = mle_reconstruct(&resampled, None)?.rho;
            if let Some(k) = correction {
                rho = background_correct(&rho, k)?;
            }
            Ok((fidelity(&rho, &target)?, concurrence(&rho)?))
        })
        .collect::<Result<_>>()?;
    let (fm, fs) = mean_sd(&samples.iter().map(|s| s.0).collect::<Vec<_>>());
    let (cm, cs) = mean_sd(&samples.iter().map(|s| s.1).collect::<Vec<_>>());
    Ok(BootstrapErrors { fidelity_mean: fm, fidelity_stderr: fs, concurrence_mean: cm, concurrence_stderr: cs, n_resamples })
}

/// Summary written next to a reconstructed density matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TomoMetrics {
    pub fidelity: f64,
    pub concurrence: f64,
    pub purity: f64,
    pub eigenvalues: [f64; 4],
    pub converged: bool,
    pub iterations: usize,
    pub neg_log_likelihood: f64,
}

impl TomoMetrics {
    pub fn from_result(r: &MleResult) -> Result<Self> {
        Ok(TomoMetrics {
            fidelity: fidelity(&r.rho, &bell_psi_plus())?,
            concurrence: concurrence(&r.rho)?,
            purity: r.rho.purity(),
            eigenvalues: hermitian_eigen(r.rho.matrix()).0,
            converged: r.converged,
            iterations: r.iterations,
            neg_log_likelihood: r.neg_log_likelihood,
        })
    }
}
