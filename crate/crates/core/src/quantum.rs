//! Two-photon polarization states in the {HH, HV, VH, VV} basis.
//!
//! Conventions:
//! - Retarders follow `R(θ)·diag(1, e^{iδ})·R(-θ)` with the fast axis at `θ`
//!   from horizontal; quarter-wave `δ = π/2`, half-wave `δ = π`.
//! - Circular states: `R = (|H⟩ + i|V⟩)/√2`, `L = (|H⟩ - i|V⟩)/√2`.
//! - The analyzer in each arm passes light through the half-wave plate, then the
//!   quarter-wave plate, then a horizontal polarizer, so the transmitted state is
//!   `HWP(h)†·QWP(q)†·|H⟩`.
//!
//! With these conventions the cascade state `(|LR⟩ + |RL⟩)/√2` expands to
//! `(|HH⟩ + |VV⟩)/√2`, which is what [`bell_psi_plus`] returns.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, FRAC_PI_8, PI};
use std::fmt::Write as _;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, hermitian_function, Mat4};

/// Physical constants used across the crate.
pub struct PhysConsts;

impl PhysConsts {
    /// Reduced Planck constant in μeV·ps.
    pub const HBAR_UEV_PS: f64 = 658.2119;
}

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = -1e-8;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarizationKet {
    pub h: C64,
    pub v: C64,
}

impl PolarizationKet {
    /// Normalizes `(h, v)`; fails on the zero vector.
    pub fn new(h: C64, v: C64) -> Result<Self> {
        let n = (h.norm_sqr() + v.norm_sqr()).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidParameter("zero or non-finite polarization vector".into()));
        }
        Ok(PolarizationKet { h: h / n, v: v / n })
    }

    pub fn horizontal() -> Self {
        PolarizationKet { h: ONE, v: ZERO }
    }
    pub fn vertical() -> Self {
        PolarizationKet { h: ZERO, v: ONE }
    }
    pub fn diagonal() -> Self {
        PolarizationKet { h: C64::new(FRAC_1_SQRT_2, 0.0), v: C64::new(FRAC_1_SQRT_2, 0.0) }
    }
    pub fn antidiagonal() -> Self {
        PolarizationKet { h: C64::new(FRAC_1_SQRT_2, 0.0), v: C64::new(-FRAC_1_SQRT_2, 0.0) }
    }
    pub fn right() -> Self {
        PolarizationKet { h: C64::new(FRAC_1_SQRT_2, 0.0), v: C64::new(0.0, FRAC_1_SQRT_2) }
    }
    pub fn left() -> Self {
        PolarizationKet { h: C64::new(FRAC_1_SQRT_2, 0.0), v: C64::new(0.0, -FRAC_1_SQRT_2) }
    }

    /// The orthogonal state `(-v*, h*)`.
    pub fn orthogonal(&self) -> Self {
        PolarizationKet { h: -self.v.conj(), v: self.h.conj() }
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.h.conj() * other.h + self.v.conj() * other.v
    }

    pub fn norm_sqr(&self) -> f64 {
        self.h.norm_sqr() + self.v.norm_sqr()
    }

    /// Removes the global phase: the first component with non-negligible
    /// magnitude is made real and positive.
    pub fn canonical_phase(self) -> Self {
        let pivot = if self.h.norm() > 1e-12 { self.h } else { self.v };
        let phase = pivot.conj() / pivot.norm();
        PolarizationKet { h: self.h * phase, v: self.v * phase }
    }

    /// `|⟨self|other⟩|² ≈ 1`
    pub fn same_state(&self, other: &Self, tol: f64) -> bool {
        (self.inner(other).norm_sqr() - 1.0).abs() < tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPhotonKet {
    /// Ordered (HH, HV, VH, VV).
    pub amps: [C64; 4],
}

impl TwoPhotonKet {
    pub fn new(amps: [C64; 4]) -> Result<Self> {
        let n = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidParameter("zero or non-finite two-photon vector".into()));
        }
        Ok(TwoPhotonKet { amps: amps.map(|z| z / n) })
    }

    pub fn product(a: &PolarizationKet, b: &PolarizationKet) -> Self {
        TwoPhotonKet { amps: [a.h * b.h, a.h * b.v, a.v * b.h, a.v * b.v] }
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Closed-form concurrence of a pure state: `2|a_HH·a_VV - a_HV·a_VH|`.
    pub fn pure_concurrence(&self) -> f64 {
        let [hh, hv, vh, vv] = self.amps;
        2.0 * (hh * vv - hv * vh).norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: Mat4,
    /// Set for linear-inversion estimates that may have negative eigenvalues.
    pub unconstrained: bool,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(matrix: Mat4) -> Result<Self> {
        let rho = DensityMatrix { matrix, unconstrained: false };
        rho.check_physical()?;
        Ok(rho)
    }

    /// Wraps a Hermitian, trace-one matrix without a positivity check.
    pub fn new_unconstrained(matrix: Mat4) -> Result<Self> {
        let rho = DensityMatrix { matrix, unconstrained: true };
        rho.check_hermitian_unit_trace()?;
        Ok(rho)
    }

    pub fn from_ket(ket: &TwoPhotonKet) -> Self {
        DensityMatrix { matrix: Mat4::outer(&ket.amps, &ket.amps), unconstrained: false }
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix { matrix: Mat4::identity().scale(0.25), unconstrained: false }
    }

    /// `p·|ψ⁺⟩⟨ψ⁺| + (1-p)·I/4`
    pub fn werner(p: f64) -> Self {
        let bell = Self::from_ket(&bell_psi_plus()).matrix.scale(p);
        let mixed = Mat4::identity().scale((1.0 - p) / 4.0);
        DensityMatrix { matrix: bell + mixed, unconstrained: false }
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.matrix.0[i][j]
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> [f64; 4] {
        hermitian_eigen(&self.matrix).0
    }

    fn check_hermitian_unit_trace(&self) -> Result<()> {
        let herm = self.matrix.hermiticity_error();
        if !(herm <= HERMITIAN_TOL) {
            return Err(Error::NonPhysical(format!("not Hermitian (max deviation {herm:.3e})")));
        }
        let tr = self.matrix.trace();
        if !((tr.re - 1.0).abs() <= TRACE_TOL && tr.im.abs() <= TRACE_TOL) {
            return Err(Error::NonPhysical(format!("trace {tr} differs from 1")));
        }
        Ok(())
    }

    pub fn check_physical(&self) -> Result<()> {
        self.check_hermitian_unit_trace()?;
        let min = self.eigenvalues()[0];
        if min < PSD_TOL {
            return Err(Error::NonPhysical(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    pub fn is_physical(&self) -> bool {
        self.check_physical().is_ok()
    }

    /// `tr(ρ²)`
    pub fn purity(&self) -> f64 {
        (self.matrix * self.matrix).trace().re
    }

    /// `½·tr|ρ - σ|`
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let diff = (self.matrix - other.matrix).hermitian_part();
        hermitian_eigen(&diff).0.iter().map(|l| l.abs()).sum::<f64>() * 0.5
    }

    /// Clips negative eigenvalues to zero and renormalizes the trace.
    pub fn project_physical(&self) -> Result<DensityMatrix> {
        let herm = self.matrix.hermitian_part();
        let clipped = hermitian_function(&herm, |l| l.max(0.0));
        let tr = clipped.trace().re;
        if !(tr > 0.0) {
            return Err(Error::NonPhysical("no positive spectral weight".into()));
        }
        Ok(DensityMatrix { matrix: clipped.scale(1.0 / tr), unconstrained: false })
    }

    /// Serializes to four lines of four `re+imi` entries, 12 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in &self.matrix.0 {
            let line: Vec<String> = row.iter().map(|z| format_complex(*z)).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    /// Parses the format written by [`DensityMatrix::to_text`]. The result is
    /// flagged unconstrained if it fails the positivity check but is otherwise
    /// Hermitian with unit trace.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Mat4::zeros();
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .collect();
        if lines.len() != 4 {
            return Err(Error::parse("density matrix", format!("expected 4 rows, found {}", lines.len())));
        }
        for (r, (lineno, line)) in lines.iter().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    format!("line {}", lineno + 1),
                    format!("expected 4 entries, found {}", fields.len()),
                ));
            }
            for (c, f) in fields.iter().enumerate() {
                m.0[r][c] = parse_complex(f)
                    .ok_or_else(|| Error::parse(format!("line {}", lineno + 1), format!("bad complex entry '{f}'")))?;
            }
        }
        match DensityMatrix::new(m) {
            Ok(rho) => Ok(rho),
            Err(_) => DensityMatrix::new_unconstrained(m),
        }
    }
}

fn format_complex(z: C64) -> String {
    format!("{:.11e}{:+.11e}i", z.re, z.im)
}

fn parse_complex(s: &str) -> Option<C64> {
    let body = s.strip_suffix('i')?;
    let bytes = body.as_bytes();
    // The imaginary part starts at the last sign that is not an exponent sign
    // and not the leading sign.
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'))?;
    let re: f64 = body[..split].parse().ok()?;
    let im: f64 = body[split..].parse().ok()?;
    Some(C64::new(re, im))
}

/// Waveplate angles of one polarization analyzer, stored modulo π.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyzerSetting {
    qwp: f64,
    hwp: f64,
}

fn wrap_pi(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    // rem_euclid can return PI itself for tiny negative inputs
    if r >= PI { 0.0 } else { r }
}

impl AnalyzerSetting {
    pub fn new(qwp_angle: f64, hwp_angle: f64) -> Self {
        AnalyzerSetting { qwp: wrap_pi(qwp_angle), hwp: wrap_pi(hwp_angle) }
    }

    pub fn qwp_angle(&self) -> f64 {
        self.qwp
    }

    pub fn hwp_angle(&self) -> f64 {
        self.hwp
    }

    /// Named analyzer settings for H, V, D, A, R, L.
    pub fn named(name: char) -> Option<Self> {
        let (q, h) = match name.to_ascii_uppercase() {
            'H' => (0.0, 0.0),
            'V' => (0.0, FRAC_PI_4),
            'D' => (0.0, FRAC_PI_8),
            'A' => (0.0, 3.0 * FRAC_PI_8),
            'R' => (3.0 * FRAC_PI_4, 0.0),
            'L' => (FRAC_PI_4, 0.0),
            _ => return None,
        };
        Some(AnalyzerSetting::new(q, h))
    }

    /// Name of the basis state this setting projects on, if it is one of
    /// H, V, D, A, R, L.
    pub fn name(&self) -> Option<char> {
        let ket = analyzer_ket(*self);
        ['H', 'V', 'D', 'A', 'R', 'L']
            .into_iter()
            .find(|&c| named_ket(c).is_some_and(|k| k.same_state(&ket, 1e-9)))
    }
}

/// Polarization basis state by letter.
pub fn named_ket(name: char) -> Option<PolarizationKet> {
    Some(match name.to_ascii_uppercase() {
        'H' => PolarizationKet::horizontal(),
        'V' => PolarizationKet::vertical(),
        'D' => PolarizationKet::diagonal(),
        'A' => PolarizationKet::antidiagonal(),
        'R' => PolarizationKet::right(),
        'L' => PolarizationKet::left(),
        _ => return None,
    })
}

type Jones = [[C64; 2]; 2];

fn retarder(theta: f64, retardance: f64) -> Jones {
    let (s, c) = theta.sin_cos();
    let e = C64::from_polar(1.0, retardance);
    // R(θ)·diag(1, e)·R(-θ)
    [
        [C64::new(c * c, 0.0) + e * s * s, C64::new(c * s, 0.0) - e * c * s],
        [C64::new(c * s, 0.0) - e * c * s, C64::new(s * s, 0.0) + e * c * c],
    ]
}

fn adjoint_apply(m: &Jones, v: [C64; 2]) -> [C64; 2] {
    [
        m[0][0].conj() * v[0] + m[1][0].conj() * v[1],
        m[0][1].conj() * v[0] + m[1][1].conj() * v[1],
    ]
}

/// State transmitted with unit probability by the analyzer.
pub fn analyzer_ket(setting: AnalyzerSetting) -> PolarizationKet {
    let qwp = retarder(setting.qwp, PI / 2.0);
    let hwp = retarder(setting.hwp, PI);
    let v = adjoint_apply(&hwp, adjoint_apply(&qwp, [ONE, ZERO]));
    PolarizationKet { h: v[0], v: v[1] }.canonical_phase()
}

/// `(|HH⟩ + |VV⟩)/√2`, the linear-basis form of `(|LR⟩ + |RL⟩)/√2`.
pub fn bell_psi_plus() -> TwoPhotonKet {
    let a = C64::new(FRAC_1_SQRT_2, 0.0);
    TwoPhotonKet { amps: [a, ZERO, ZERO, a] }
}

/// `⟨target|ρ|target⟩`
pub fn fidelity(rho: &DensityMatrix, target: &TwoPhotonKet) -> Result<f64> {
    rho.check_physical()?;
    Ok(rho.matrix().expectation(&target.amps).re.clamp(0.0, 1.0))
}

fn spin_flip() -> Mat4 {
    let mut m = Mat4::zeros();
    m.0[0][3] = C64::new(-1.0, 0.0);
    m.0[3][0] = C64::new(-1.0, 0.0);
    m.0[1][2] = ONE;
    m.0[2][1] = ONE;
    m
}

/// Wootters concurrence.
///
/// The square roots of the eigenvalues of `ρ·ρ̃` are computed as the singular
/// values of `τ = Wᵀ·(σ_y⊗σ_y)·W`, where `ρ = W·W†` and the columns of `W` are
/// the eigenvectors of `ρ` scaled by the square roots of their eigenvalues.
/// Eigenvalues below `1e-12·λ_max` are treated as exact zeros so that pure
/// and low-rank states do not pick up square-root noise.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    rho.check_physical()?;
    let (vals, vecs) = hermitian_eigen(&rho.matrix().hermitian_part());
    let cutoff = 1e-12 * vals[3].max(0.0);
    let mut w = Mat4::zeros();
    for (k, &l) in vals.iter().enumerate() {
        let s = if l > cutoff { l.sqrt() } else { 0.0 };
        for i in 0..4 {
            w.0[i][k] = vecs.0[i][k] * s;
        }
    }
    let tau = w.adjoint().conj() * spin_flip() * w;
    let (sq, _) = hermitian_eigen(&(tau.adjoint() * tau).hermitian_part());
    let mut lam: Vec<f64> = sq.iter().map(|v| v.max(0.0).sqrt()).collect();
    lam.sort_by(|a, b| b.total_cmp(a));
    Ok((lam[0] - lam[1] - lam[2] - lam[3]).clamp(0.0, 1.0))
}

/// Probability that the pair passes analyzer `a` (first photon) and `b`
/// (second photon).
pub fn pair_projection_probability(rho: &DensityMatrix, a: AnalyzerSetting, b: AnalyzerSetting) -> f64 {
    let ket = TwoPhotonKet::product(&analyzer_ket(a), &analyzer_ket(b));
    rho.matrix().expectation(&ket.amps).re
}
