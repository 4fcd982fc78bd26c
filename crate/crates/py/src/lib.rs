//! Python module `qdpair`: thin wrappers over `qdpair_core`.

use pyo3::prelude::*;

fn py_err(e: qdpair_core::Error) -> PyErr {
    pyo3::exceptions::PyValueError::new_err(e.to_string())
}

#[pymodule]
mod qdpair {
    use std::path::PathBuf;

    use pyo3::prelude::*;
    use pyo3::types::PyDict;

    use qdpair_core::cascade::{self, EmitterParams};
    use qdpair_core::config::RunConfig;
    use qdpair_core::correlate::{self, Estimate};
    use qdpair_core::fitters::{self, FssConvention, SpectrumSeries, YieldParams};
    use qdpair_core::quantum::{bell_psi_plus, concurrence, fidelity};
    use qdpair_core::tomography::{mle_reconstruct, standard_settings, TomoRecord};
    use qdpair_core::{qdtt, sim};

    use super::py_err;

    /// Model fidelity to ψ⁺ for splitting `fss_uev` and exciton lifetime `t1_x_ps`.
    #[pyfunction]
    #[pyo3(signature = (fss_uev, t1_x_ps, k = 0.97, g1_hv = 1.0, g1p_hv = 1.0))]
    fn predicted_fidelity(fss_uev: f64, t1_x_ps: f64, k: f64, g1_hv: f64, g1p_hv: f64) -> PyResult<f64> {
        let p = EmitterParams { fss_uev, t1_x_ps, k, g1_hv, g1p_hv, ..EmitterParams::default() };
        cascade::predicted_fidelity(&p).map_err(py_err)
    }

    #[pyfunction]
    fn fidelity_from_contrasts(c_lin: f64, c_diag: f64, c_circ: f64) -> f64 {
        correlate::fidelity_from_contrasts(Estimate::exact(c_lin), Estimate::exact(c_diag), Estimate::exact(c_circ)).value
    }

    /// Simulate the run described by a TOML config and write a QDTT file; returns the event count.
    #[pyfunction]
    #[pyo3(signature = (config_path, out_path, seed, threads = None))]
    fn simulate(py: Python<'_>, config_path: PathBuf, out_path: PathBuf, seed: u64, threads: Option<usize>) -> PyResult<usize> {
        py.detach(|| {
            let cfg = RunConfig::from_file(&config_path)?.to_sim_config(seed)?;
            let stream = match threads {
                Some(n) => sim::simulate_with_threads(&cfg, n)?,
                None => sim::simulate(&cfg)?,
            };
            qdtt::write_file(&stream, &out_path)?;
            Ok(stream.events.len())
        })
        .map_err(py_err)
    }

    /// `(channels, timestamps_ps)` from a QDTT file.
    #[pyfunction]
    fn read_qdtt(path: PathBuf) -> PyResult<(Vec<u8>, Vec<u64>)> {
        let s = qdtt::read_file(&path).map_err(py_err)?;
        Ok(s.events.iter().map(|e| (e.channel, e.timestamp)).unzip())
    }

    /// Zero-delay g² from sorted start/stop timestamps; returns `(value, stderr)`.
    #[pyfunction]
    #[pyo3(signature = (start, stop, rep_period_ps = cascade::REP_PERIOD_76MHZ_PS, bin_ps = 50.0, periods = 12))]
    fn g2_zero(start: Vec<u64>, stop: Vec<u64>, rep_period_ps: f64, bin_ps: f64, periods: u32) -> PyResult<(f64, f64)> {
        let h = correlate::cross_correlate(&start, &stop, bin_ps, (periods as f64 + 0.5) * rep_period_ps).map_err(py_err)?;
        let g = correlate::g2_zero(&h, rep_period_ps, rep_period_ps / 2.0).map_err(py_err)?;
        Ok((g.g2.value, g.g2.stderr))
    }

    /// Maximum-likelihood state from 16 counts in the standard {H,V,D,R}² order.
    #[pyfunction]
    #[pyo3(signature = (counts, seconds = None))]
    fn tomography<'py>(py: Python<'py>, counts: Vec<u64>, seconds: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let seconds = seconds.unwrap_or_else(|| vec![1.0; counts.len()]);
        let rec = TomoRecord::new(standard_settings(), counts, seconds).map_err(py_err)?;
        let r = mle_reconstruct(&rec, None).map_err(py_err)?;
        let rho: Vec<Vec<(f64, f64)>> = (0..4).map(|i| (0..4).map(|j| (r.rho.get(i, j).re, r.rho.get(i, j).im)).collect()).collect();
        let d = PyDict::new(py);
        d.set_item("rho", rho)?;
        d.set_item("fidelity", fidelity(&r.rho, &bell_psi_plus()).map_err(py_err)?)?;
        d.set_item("concurrence", concurrence(&r.rho).map_err(py_err)?)?;
        d.set_item("purity", r.rho.purity())?;
        d.set_item("converged", r.converged)?;
        Ok(d)
    }

    /// Fine-structure splitting from polarization-resolved line positions; returns `(s, s_err, phase)`.
    #[pyfunction]
    #[pyo3(signature = (alpha_rad, x_uev, xx_uev, semi_amplitude = false))]
    fn fit_fss(alpha_rad: Vec<f64>, x_uev: Vec<f64>, xx_uev: Vec<f64>, semi_amplitude: bool) -> PyResult<(f64, f64, f64)> {
        let series = SpectrumSeries::new(alpha_rad, x_uev, xx_uev).map_err(py_err)?;
        let conv = if semi_amplitude { FssConvention::SemiAmplitude } else { FssConvention::PeakToPeak };
        let r = fitters::fit_fss(&series, conv).map_err(py_err)?;
        Ok((r.fit.value("s"), r.fit.stderr("s"), r.fit.value("phase")))
    }

    #[pyfunction]
    #[pyo3(signature = (seed, n_samples = 100_000))]
    fn ensemble_yield(seed: u64, n_samples: usize) -> PyResult<f64> {
        fitters::ensemble_yield(&YieldParams { seed, n_samples, ..YieldParams::default() }).map_err(py_err)
    }
}
