//! Command-line front end. Each subcommand reads its inputs, calls into the
//! library and writes a short report to the given writer plus any requested
//! output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cascade::{predicted_fidelity, EmitterParams, REP_PERIOD_76MHZ_PS};
use crate::config::RunConfig;
use crate::correlate::{contrast, cross_correlate, fidelity_from_contrasts, g2_zero, CoincidenceHistogram, Estimate, G2Result};
use crate::error::{Error, Result};
use crate::fitters::{
    ensemble_yield, fit_decay, fit_fss, fit_lorentzian, fit_rabi, model_curve_csv, DecayModel, FssConvention, SpectrumSeries,
    XyData, YieldParams,
};
use crate::qdtt;
use crate::sim::{simulate, simulate_with_threads};
use crate::tomography::{background_correct, bootstrap_errors, mle_reconstruct, MleResult, TomoMetrics, TomoRecord};

#[derive(Debug, Parser)]
#[command(name = "qdpair", version, about = "Quantum-dot photon-pair simulation and entanglement analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the event simulator and write a QDTT time-tag file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Worker threads; the output does not depend on this.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Cross-correlate two channels of a QDTT file and report g²(0).
    G2 {
        #[arg(long)]
        input: PathBuf,
        /// Histogram CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        corr: CorrelationArgs,
    },
    /// Correlation contrasts and the three-basis fidelity.
    Contrast(ContrastArgs),
    /// Maximum-likelihood tomography from a `setting_a,setting_b,counts,seconds` CSV.
    Tomo {
        #[arg(long)]
        input: PathBuf,
        /// Density matrix output (text format).
        #[arg(long)]
        out_rho: Option<PathBuf>,
        /// Metrics JSON output.
        #[arg(long)]
        out_metrics: Option<PathBuf>,
        /// Background fraction k for the corrected state.
        #[arg(long)]
        k: Option<f64>,
        /// Number of bootstrap resamples (0 disables).
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the IRF-convolved cascade decay to a histogram or `x,y` CSV.
    FitDecay {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        irf_fwhm_ps: f64,
        #[arg(long, value_enum)]
        species: SpeciesArg,
        /// Pin the biexciton lifetime when fitting the X curve.
        #[arg(long)]
        fixed_t1_xx_ps: Option<f64>,
        #[arg(long)]
        out_curve: Option<PathBuf>,
    },
    /// Fit a damped Rabi curve to `x,y` intensity data.
    FitRabi {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_curve: Option<PathBuf>,
    },
    /// Extract the FSS from an `alpha_rad,x_uev,xx_uev` series.
    FitFss {
        #[arg(long)]
        input: PathBuf,
        /// Report the sinusoid semi-amplitude instead of the peak-to-peak swing.
        #[arg(long)]
        semi_amplitude: bool,
    },
    /// Fit a Lorentzian to fidelity-vs-FSS `x,y` data.
    FitLorentzian {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_curve: Option<PathBuf>,
    },
    /// Model fidelity for a given FSS, lifetime and background fraction.
    Predict {
        #[arg(long)]
        s: f64,
        #[arg(long)]
        t1x: f64,
        #[arg(long, default_value_t = 0.97)]
        k: f64,
        #[arg(long, default_value_t = 1.0)]
        g: f64,
        #[arg(long, default_value_t = 1.0)]
        gp: f64,
    },
    /// Fraction of a simulated dot ensemble with fidelity above 0.5.
    Yield {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 4.8)]
        fss_mean: f64,
        #[arg(long, default_value_t = 2.4)]
        fss_sd: f64,
        #[arg(long, default_value_t = 120.0)]
        t1_min: f64,
        #[arg(long, default_value_t = 220.0)]
        t1_max: f64,
        #[arg(long, default_value_t = 0.97)]
        k: f64,
        #[arg(long, default_value_t = 1.0)]
        g: f64,
        #[arg(long, default_value_t = 1.0)]
        gp: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpeciesArg {
    #[value(name = "XX", alias = "xx")]
    Xx,
    #[value(name = "X", alias = "x")]
    X,
}

#[derive(Debug, Args)]
pub struct CorrelationArgs {
    #[arg(long, default_value_t = 0)]
    pub start: u8,
    #[arg(long, default_value_t = 1)]
    pub stop: u8,
    #[arg(long, default_value_t = 50.0)]
    pub bin_ps: f64,
    #[arg(long, default_value_t = REP_PERIOD_76MHZ_PS)]
    pub rep_period_ps: f64,
    /// Integration window per peak; defaults to half the repetition period.
    #[arg(long)]
    pub window_ps: Option<f64>,
    /// Side peaks on each side of zero delay.
    #[arg(long, default_value_t = 12)]
    pub periods: u32,
}

#[derive(Debug, Args)]
pub struct ContrastArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub c_lin: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub c_diag: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub c_circ: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub c_lin_err: f64,
    #[arg(long, default_value_t = 0.0)]
    pub c_diag_err: f64,
    #[arg(long, default_value_t = 0.0)]
    pub c_circ_err: f64,
    /// Six QDTT files: linear co, linear cross, diagonal co, diagonal cross,
    /// circular co, circular cross.
    #[arg(long, num_args = 6, conflicts_with_all = ["c_lin", "c_diag", "c_circ"])]
    pub qdtt: Option<Vec<PathBuf>>,
    #[command(flatten)]
    pub corr: CorrelationArgs,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn correlate_file(path: &Path, c: &CorrelationArgs) -> Result<(CoincidenceHistogram, G2Result)> {
    let stream = qdtt::read_file(path)?;
    let max_delay = (c.periods as f64 + 0.5) * c.rep_period_ps;
    let h = cross_correlate(&stream.channel(c.start), &stream.channel(c.stop), c.bin_ps, max_delay)?;
    let window = c.window_ps.unwrap_or(c.rep_period_ps / 2.0);
    let g2 = g2_zero(&h, c.rep_period_ps, window)?;
    Ok((h, g2))
}

fn hist_or_xy(text: &str) -> Result<CoincidenceHistogram> {
    if text.lines().any(|l| l.trim_start().starts_with("# bin_width_ps")) {
        return CoincidenceHistogram::from_csv(text);
    }
    let d = XyData::from_csv(text)?;
    if d.x.len() < 2 {
        return Err(Error::InsufficientData("decay data needs at least two rows".into()));
    }
    let bw = d.x[1] - d.x[0];
    let counts = d
        .y
        .iter()
        .map(|&y| if y >= 0.0 { Ok(y.round() as u64) } else { Err(Error::InvalidParameter(format!("negative count {y}"))) })
        .collect::<Result<Vec<u64>>>()?;
    CoincidenceHistogram::new(bw, d.x[0] - bw / 2.0, counts)
}

fn tomo_report(out: &mut dyn Write, label: &str, r: &MleResult) -> Result<TomoMetrics> {
    let m = TomoMetrics::from_result(r)?;
    writeln!(out, "{label}: fidelity={:.4} concurrence={:.4} purity={:.4}", m.fidelity, m.concurrence, m.purity)?;
    Ok(m)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out: path, seed, threads } => {
            let cfg = RunConfig::from_file(&config)?.to_sim_config(seed)?;
            let stream = match threads {
                Some(n) => simulate_with_threads(&cfg, n)?,
                None => simulate(&cfg)?,
            };
            qdtt::write_file(&stream, &path)?;
            writeln!(out, "seed={seed} duration_s={} events={}", cfg.duration_s, stream.events.len())?;
            for (ch, n) in stream.counts_per_channel().iter().enumerate() {
                writeln!(out, "channel {ch}: {n}")?;
            }
        }
        Command::G2 { input, out: hist_out, corr } => {
            let (h, g2) = correlate_file(&input, &corr)?;
            if let Some(p) = hist_out {
                let meta = [
                    ("normalization", "side_peak_mean".to_string()),
                    ("rep_period_ps", corr.rep_period_ps.to_string()),
                    ("window_ps", g2.summary.window_width_ps.to_string()),
                    ("g2_zero", g2.g2.value.to_string()),
                    ("g2_zero_stderr", g2.g2.stderr.to_string()),
                ];
                write_file(&p, &h.to_csv(&meta))?;
            }
            writeln!(out, "g2(0) = {:.4} ± {:.4} ({} side peaks)", g2.g2.value, g2.g2.stderr, g2.n_side_peaks)?;
        }
        Command::Contrast(a) => {
            let (lin, diag, circ) = match &a.qdtt {
                Some(files) => {
                    let mut g = Vec::with_capacity(6);
                    for f in files {
                        g.push(correlate_file(f, &a.corr)?.1.g2);
                    }
                    (contrast(g[0], g[1])?, contrast(g[2], g[3])?, contrast(g[4], g[5])?)
                }
                None => {
                    let need = |v: Option<f64>, name: &str| {
                        v.ok_or_else(|| Error::InvalidParameter(format!("missing --{name} (or pass --qdtt with six files)")))
                    };
                    (
                        Estimate::new(need(a.c_lin, "c-lin")?, a.c_lin_err),
                        Estimate::new(need(a.c_diag, "c-diag")?, a.c_diag_err),
                        Estimate::new(need(a.c_circ, "c-circ")?, a.c_circ_err),
                    )
                }
            };
            let f = fidelity_from_contrasts(lin, diag, circ);
            writeln!(out, "C_linear = {:.4} ± {:.4}", lin.value, lin.stderr)?;
            writeln!(out, "C_diagonal = {:.4} ± {:.4}", diag.value, diag.stderr)?;
            writeln!(out, "C_circular = {:.4} ± {:.4}", circ.value, circ.stderr)?;
            writeln!(out, "F={:.3} ± {:.3}", f.value, f.stderr)?;
        }
        Command::Tomo { input, out_rho, out_metrics, k, bootstrap, seed } => {
            let rec = TomoRecord::from_csv(&fs::read_to_string(&input)?)?;
            let r = mle_reconstruct(&rec, None)?;
            let raw = tomo_report(out, "raw", &r)?;
            let mut json = serde_json::json!({ "raw": raw });
            let mut rho = r.rho;
            if let Some(k) = k {
                let corrected = MleResult { rho: background_correct(&r.rho, k)?, ..r.clone() };
                json["corrected"] = serde_json::to_value(tomo_report(out, "corrected", &corrected)?).expect("serializable");
                json["k"] = k.into();
                rho = corrected.rho;
            }
            if bootstrap > 0 {
                let seed = seed.ok_or_else(|| Error::InvalidParameter("--bootstrap requires --seed".into()))?;
                let b = bootstrap_errors(&rec, bootstrap, seed, k)?;
                writeln!(out, "bootstrap: fidelity ± {:.4}, concurrence ± {:.4}", b.fidelity_stderr, b.concurrence_stderr)?;
                json["bootstrap"] = serde_json::to_value(b).expect("serializable");
            }
            writeln!(out, "converged={} iterations={}", r.converged, r.iterations)?;
            if let Some(p) = out_rho {
                write_file(&p, &rho.to_text())?;
            }
            if let Some(p) = out_metrics {
                write_file(&p, &(serde_json::to_string_pretty(&json).expect("serializable") + "\n"))?;
            }
        }
        Command::FitDecay { input, irf_fwhm_ps, species, fixed_t1_xx_ps, out_curve } => {
            let h = hist_or_xy(&fs::read_to_string(&input)?)?;
            let model = match species {
                SpeciesArg::Xx => DecayModel::Xx,
                SpeciesArg::X => DecayModel::X { fixed_t1_xx_ps },
            };
            let fit = fit_decay(&h, irf_fwhm_ps, model)?;
            write!(out, "{}", fit.report())?;
            if let Some(p) = out_curve {
                let values: Vec<f64> = fit.params.iter().map(|p| p.value).collect();
                let species = match species {
                    SpeciesArg::Xx => crate::cascade::Species::Xx,
                    SpeciesArg::X => crate::cascade::Species::X,
                };
                let curve = crate::fitters::decay_model_fn(species, irf_fwhm_ps, h.bin_width_ps, values);
                let x: Vec<f64> = (0..h.counts.len()).map(|i| h.bin_center(i)).collect();
                write_file(&p, &model_curve_csv(&x, curve))?;
            }
        }
        Command::FitRabi { input, out_curve } => {
            let d = XyData::from_csv(&fs::read_to_string(&input)?)?;
            let r = fit_rabi(&d.x, &d.y)?;
            write!(out, "{}", r.fit.report())?;
            let maxima: Vec<String> = r.maxima_pi.iter().map(|m| format!("{m:.3}π")).collect();
            writeln!(out, "maxima (calibrated) = {}", maxima.join(", "))?;
            if let Some(p) = out_curve {
                let (a, s, g) = (r.fit.value("amplitude"), r.fit.value("scale"), r.fit.value("gamma"));
                write_file(&p, &model_curve_csv(&d.x, |x| a * crate::cascade::xx_population_at(s * x, g)))?;
            }
        }
        Command::FitFss { input, semi_amplitude } => {
            let series = SpectrumSeries::from_csv(&fs::read_to_string(&input)?)?;
            let conv = if semi_amplitude { FssConvention::SemiAmplitude } else { FssConvention::PeakToPeak };
            let r = fit_fss(&series, conv)?;
            write!(out, "{}", r.fit.report())?;
            writeln!(out, "convention = {:?}, degenerate = {}", r.convention, r.degenerate)?;
        }
        Command::FitLorentzian { input, out_curve } => {
            let d = XyData::from_csv(&fs::read_to_string(&input)?)?;
            let r = fit_lorentzian(&d.x, &d.y)?;
            write!(out, "{}", r.report())?;
            if let Some(p) = out_curve {
                let (f0, a, w) = (r.value("floor"), r.value("amplitude"), r.value("width"));
                write_file(&p, &model_curve_csv(&d.x, |s| f0 + a / (1.0 + (s / w).powi(2))))?;
            }
        }
        Command::Predict { s, t1x, k, g, gp } => {
            let p = EmitterParams { fss_uev: s, t1_x_ps: t1x, k, g1_hv: g, g1p_hv: gp, ..EmitterParams::default() };
            writeln!(out, "F={:.3}", predicted_fidelity(&p)?)?;
        }
        Command::Yield { seed, n, fss_mean, fss_sd, t1_min, t1_max, k, g, gp } => {
            let p = YieldParams {
                fss_mean_uev: fss_mean,
                fss_sd_uev: fss_sd,
                t1_min_ps: t1_min,
                t1_max_ps: t1_max,
                k,
                g1_hv: g,
                g1p_hv: gp,
                n_samples: n,
                seed,
            };
            writeln!(out, "yield={:.5}", ensemble_yield(&p)?)?;
        }
    }
    Ok(())
}
