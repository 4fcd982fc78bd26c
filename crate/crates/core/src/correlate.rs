//! Start–stop delay histograms and the quantities derived from them: pulsed
//! g²(0) with flat-background correction, correlation contrasts, and the
//! three-basis fidelity estimate.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A value with a one-sigma uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Estimate { value, stderr }
    }

    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }
}

/// Delay histogram. Bin `i` is centered on `origin_ps + (i + ½)·bin_width_ps`;
/// histograms built by [`cross_correlate`] have a bin centered on zero delay.
#[derive(Clone, Debug, PartialEq)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: f64,
    pub origin_ps: f64,
    pub counts: Vec<u64>,
    pub n_start_events: u64,
    pub n_stop_events: u64,
    pub acquisition_time_s: f64,
}

impl CoincidenceHistogram {
    pub fn new(bin_width_ps: f64, origin_ps: f64, counts: Vec<u64>) -> Result<Self> {
        if !(bin_width_ps > 0.0) {
            return Err(Error::InvalidParameter(format!("bin width must be > 0, got {bin_width_ps}")));
        }
        if counts.is_empty() {
            return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
        }
        Ok(CoincidenceHistogram {
            bin_width_ps,
            origin_ps,
            counts,
            n_start_events: 0,
            n_stop_events: 0,
            acquisition_time_s: 0.0,
        })
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.origin_ps + (i as f64 + 0.5) * self.bin_width_ps
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Elementwise accumulation of a histogram with identical binning.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if self.counts.len() != other.counts.len()
            || self.bin_width_ps != other.bin_width_ps
            || self.origin_ps != other.origin_ps
        {
            return Err(Error::InvalidParameter("cannot merge histograms with different binning".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.n_start_events += other.n_start_events;
        self.n_stop_events += other.n_stop_events;
        self.acquisition_time_s += other.acquisition_time_s;
        Ok(())
    }

    /// CSV with `#` metadata lines followed by `delay_ps,counts` rows.
    pub fn to_csv(&self, extra: &[(&str, String)]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# bin_width_ps={}", self.bin_width_ps);
        let _ = writeln!(out, "# origin_ps={}", self.origin_ps);
        let _ = writeln!(out, "# n_start_events={}", self.n_start_events);
        let _ = writeln!(out, "# n_stop_events={}", self.n_stop_events);
        let _ = writeln!(out, "# acquisition_time_s={}", self.acquisition_time_s);
        for (k, v) in extra {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str("delay_ps,counts\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.bin_center(i), c);
        }
        out
    }

    /// Reads the format written by [`CoincidenceHistogram::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut rows = Vec::new();
        let mut header_seen = false;
        for (n, line) in text.lines().enumerate() {
            let loc = || format!("line {}", n + 1);
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(m) = line.strip_prefix('#') {
                if let Some((k, v)) = m.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !header_seen {
                if line != "delay_ps,counts" {
                    return Err(Error::parse(loc(), "expected header 'delay_ps,counts'"));
                }
                header_seen = true;
                continue;
            }
            let (d, c) = line.split_once(',').ok_or_else(|| Error::parse(loc(), "expected two columns"))?;
            let d: f64 = d.trim().parse().map_err(|_| Error::parse(loc(), format!("bad delay '{d}'")))?;
            let c: u64 = c.trim().parse().map_err(|_| Error::parse(loc(), format!("bad count '{c}'")))?;
            rows.push((d, c));
        }
        let get = |k: &str| -> Result<f64> {
            meta.get(k)
                .ok_or_else(|| Error::parse("header", format!("missing '{k}'")))?
                .parse()
                .map_err(|_| Error::parse("header", format!("bad value for '{k}'")))
        };
        let mut h = CoincidenceHistogram::new(get("bin_width_ps")?, get("origin_ps")?, rows.iter().map(|r| r.1).collect())?;
        h.n_start_events = get("n_start_events").unwrap_or(0.0) as u64;
        h.n_stop_events = get("n_stop_events").unwrap_or(0.0) as u64;
        h.acquisition_time_s = get("acquisition_time_s").unwrap_or(0.0);
        Ok(h)
    }
}

fn check_sorted(ts: &[u64], which: &'static str) -> Result<()> {
    if ts.windows(2).all(|w| w[0] <= w[1]) {
        Ok(())
    } else {
        Err(Error::Unsorted(which))
    }
}

/// Histogram of `stop - start` delays.
///
/// Bins are centered on integer multiples of `bin_width_ps`; a delay `d` goes
/// to bin `round(d / bin_width)` (ties away from zero), which makes the
/// histogram exactly mirror-symmetric under swapping start and stop. With
/// `M = floor(max_delay / bin_width)` the histogram covers delays in the open
/// interval `(-(M+½)·w, (M+½)·w)`.
pub fn cross_correlate(start: &[u64], stop: &[u64], bin_width_ps: f64, max_delay_ps: f64) -> Result<CoincidenceHistogram> {
    if !(bin_width_ps > 0.0) || !(max_delay_ps >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need bin width > 0 and max delay >= 0, got {bin_width_ps} and {max_delay_ps}"
        )));
    }
    check_sorted(start, "start channel")?;
    check_sorted(stop, "stop channel")?;

    let m = (max_delay_ps / bin_width_ps).floor() as i64;
    let n_bins = (2 * m + 1) as usize;
    let reach = (m as f64 + 0.5) * bin_width_ps;
    let mut counts = vec![0u64; n_bins];

    let mut lo = 0usize;
    for &s in start {
        while lo < stop.len() && (stop[lo] as f64 - s as f64) <= -reach {
            lo += 1;
        }
        for &t in &stop[lo..] {
            let d = t as f64 - s as f64;
            if d >= reach {
                break;
            }
            let j = (d / bin_width_ps).round() as i64;
            if j.abs() <= m {
                counts[(j + m) as usize] += 1;
            }
        }
    }

    let span = start.last().copied().unwrap_or(0).max(stop.last().copied().unwrap_or(0));
    Ok(CoincidenceHistogram {
        bin_width_ps,
        origin_ps: -reach,
        counts,
        n_start_events: start.len() as u64,
        n_stop_events: stop.len() as u64,
        acquisition_time_s: span as f64 * 1e-12,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeakSummary {
    /// Pulse index → (raw counts, background-subtracted counts).
    pub peak_areas: BTreeMap<i64, (u64, f64)>,
    pub window_width_ps: f64,
    /// Flat background density, counts per ps.
    pub background_per_ps: f64,
    pub background_counts: u64,
    pub background_bins: usize,
    pub bins_per_window: BTreeMap<i64, usize>,
}

/// Integrates the peaks at `n·rep_period` over a `window_ps` wide window and
/// estimates a flat floor from the bins between those windows.
pub fn integrate_peaks(h: &CoincidenceHistogram, rep_period_ps: f64, window_ps: f64) -> Result<PeakSummary> {
    if !(window_ps > 0.0 && window_ps <= rep_period_ps) {
        return Err(Error::InvalidParameter(format!(
            "window must lie in (0, rep_period], got {window_ps} for period {rep_period_ps}"
        )));
    }
    let lo_edge = h.origin_ps;
    let hi_edge = h.origin_ps + h.counts.len() as f64 * h.bin_width_ps;
    let half = window_ps / 2.0;
    let n_min = ((lo_edge + half) / rep_period_ps).ceil() as i64;
    let n_max = ((hi_edge - half) / rep_period_ps).floor() as i64;

    let mut peak_raw: BTreeMap<i64, (u64, usize)> = (n_min..=n_max).map(|n| (n, (0, 0))).collect();
    let mut bg_counts = 0u64;
    let mut bg_bins = 0usize;
    for (i, &c) in h.counts.iter().enumerate() {
        let x = h.bin_center(i);
        let n = (x / rep_period_ps).round() as i64;
        let center = n as f64 * rep_period_ps;
        if x >= center - half && x < center + half && (n_min..=n_max).contains(&n) {
            let e = peak_raw.get_mut(&n).expect("peak in range");
            e.0 += c;
            e.1 += 1;
        } else if x >= (n_min as f64 - 0.5) * rep_period_ps && x < (n_max as f64 + 0.5) * rep_period_ps {
            bg_counts += c;
            bg_bins += 1;
        }
    }
    let bg_per_bin = if bg_bins > 0 { bg_counts as f64 / bg_bins as f64 } else { 0.0 };
    let peak_areas = peak_raw.iter().map(|(&n, &(raw, bins))| (n, (raw, raw as f64 - bg_per_bin * bins as f64))).collect();
    Ok(PeakSummary {
        peak_areas,
        window_width_ps: window_ps,
        background_per_ps: bg_per_bin / h.bin_width_ps,
        background_counts: bg_counts,
        background_bins: bg_bins,
        bins_per_window: peak_raw.iter().map(|(&n, &(_, b))| (n, b)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct G2Result {
    pub g2: Estimate,
    pub summary: PeakSummary,
    pub n_side_peaks: usize,
}

/// Pulsed g²(0): background-subtracted center-peak area over the mean
/// background-subtracted side-peak area, with first-order Poisson errors.
/// Normalization is by the side-peak mean.
pub fn g2_zero(h: &CoincidenceHistogram, rep_period_ps: f64, window_ps: f64) -> Result<G2Result> {
    let summary = integrate_peaks(h, rep_period_ps, window_ps)?;
    let sides: Vec<i64> = summary.peak_areas.keys().copied().filter(|&n| n != 0).collect();
    if !summary.peak_areas.contains_key(&0) || sides.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "g2 needs the center peak and at least 10 side peaks, found {} side peaks",
            sides.len()
        )));
    }

    let bg_var_per_bin2 = if summary.background_bins > 0 {
        summary.background_counts as f64 / (summary.background_bins as f64).powi(2)
    } else {
        0.0
    };
    let var = |n: i64| {
        let (raw, _) = summary.peak_areas[&n];
        let bins = summary.bins_per_window[&n] as f64;
        raw as f64 + bins * bins * bg_var_per_bin2
    };

    let center = summary.peak_areas[&0].1;
    let center_var = var(0);
    let k = sides.len() as f64;
    let side_mean = sides.iter().map(|n| summary.peak_areas[n].1).sum::<f64>() / k;
    let side_var = sides.iter().map(|&n| var(n)).sum::<f64>() / (k * k);
    if !(side_mean > 0.0) {
        return Err(Error::UndefinedRatio("side peaks contain no counts above background"));
    }
    let value = center / side_mean;
    let stderr = ((center_var / (side_mean * side_mean)) + center * center * side_var / side_mean.powi(4)).sqrt();
    Ok(G2Result { g2: Estimate::new(value, stderr), summary, n_side_peaks: sides.len() })
}

/// `(g_co - g_cross)/(g_co + g_cross)` with first-order error propagation.
pub fn contrast(g2_co: Estimate, g2_cross: Estimate) -> Result<Estimate> {
    let sum = g2_co.value + g2_cross.value;
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::UndefinedRatio("co- plus cross-polarized correlation is zero"));
    }
    let value = (g2_co.value - g2_cross.value) / sum;
    let d_co = 2.0 * g2_cross.value / (sum * sum);
    let d_cross = -2.0 * g2_co.value / (sum * sum);
    let stderr = ((d_co * g2_co.stderr).powi(2) + (d_cross * g2_cross.stderr).powi(2)).sqrt();
    Ok(Estimate::new(value, stderr))
}

/// `F = (1 + C_lin + C_diag - C_circ)/4`
pub fn fidelity_from_contrasts(c_lin: Estimate, c_diag: Estimate, c_circ: Estimate) -> Estimate {
    let value = (1.0 + c_lin.value + c_diag.value - c_circ.value) / 4.0;
    let stderr = (c_lin.stderr.powi(2) + c_diag.stderr.powi(2) + c_circ.stderr.powi(2)).sqrt() / 4.0;
    Estimate::new(value, stderr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_pairs(a: &[u64], b: &[u64], reach: f64) -> u64 {
        let mut n = 0;
        for &s in a {
            for &t in b {
                let d = t as f64 - s as f64;
                if d > -reach && d < reach {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn empty_streams_give_zero_histogram() {
        let h = cross_correlate(&[], &[], 100.0, 1000.0).unwrap();
        assert_eq!(h.counts.len(), 21);
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn single_pair_lands_in_its_bin() {
        let h = cross_correlate(&[0], &[500], 100.0, 1000.0).unwrap();
        assert_eq!(h.total(), 1);
        let i = h.counts.iter().position(|&c| c == 1).unwrap();
        assert!((h.bin_center(i) - 500.0).abs() < 1e-9);
        let lo = h.bin_center(i) - 50.0;
        assert!(lo <= 500.0 && 500.0 < lo + 100.0);
    }

    #[test]
    fn unsorted_input_rejected() {
        assert!(matches!(cross_correlate(&[5, 1], &[], 1.0, 10.0), Err(Error::Unsorted(_))));
        assert!(matches!(cross_correlate(&[], &[3, 2], 1.0, 10.0), Err(Error::Unsorted(_))));
    }

    fn poisson_stream(rng: &mut ChaCha8Rng, rate_per_ps: f64, duration_ps: f64) -> Vec<u64> {
        let mut t = 0.0;
        let mut out = Vec::new();
        loop {
            t += -rng.random::<f64>().ln() / rate_per_ps;
            if t >= duration_ps {
                return out;
            }
            out.push(t as u64);
        }
    }

    #[test]
    fn poisson_streams_give_flat_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (r1, r2, dur) = (2e-6, 3e-6, 2e10);
        let a = poisson_stream(&mut rng, r1, dur);
        let b = poisson_stream(&mut rng, r2, dur);
        let bw = 1000.0;
        let h = cross_correlate(&a, &b, bw, 50_000.0).unwrap();
        let expected = r1 * r2 * dur * bw;
        let mean = h.total() as f64 / h.counts.len() as f64;
        let sigma = (expected / h.counts.len() as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * sigma, "mean {mean} expected {expected} sigma {sigma}");
    }

    fn synthetic_pulsed(center: f64, side: f64, floor: u64, rep: f64, bw: f64, n_periods: i64) -> CoincidenceHistogram {
        let m = (n_periods as f64 * rep / bw).floor() as i64;
        let origin = -(m as f64 + 0.5) * bw;
        let mut h = CoincidenceHistogram::new(bw, origin, vec![floor; (2 * m + 1) as usize]).unwrap();
        for i in 0..h.counts.len() {
            let x = h.bin_center(i);
            let n = (x / rep).round();
            let dx = x - n * rep;
            let amp = if n == 0.0 { center } else { side };
            h.counts[i] += (amp * (-dx * dx / (2.0 * 150.0f64.powi(2))).exp()).round() as u64;
        }
        h
    }

    #[test]
    fn g2_of_empty_center_is_zero() {
        let h = synthetic_pulsed(0.0, 100.0, 0, 12_500.0, 50.0, 12);
        let r = g2_zero(&h, 12_500.0, 6_250.0).unwrap();
        assert_eq!(r.g2.value, 0.0);
        assert_eq!(r.g2.stderr, 0.0);
        assert!(r.n_side_peaks >= 10);
    }

    #[test]
    fn g2_of_equal_peaks_is_one() {
        let h = synthetic_pulsed(100.0, 100.0, 3, 12_500.0, 50.0, 12);
        let r = g2_zero(&h, 12_500.0, 6_250.0).unwrap();
        assert!((r.g2.value - 1.0).abs() < 1e-12, "{:?}", r.g2);
    }

    #[test]
    fn g2_error_paths() {
        let h = synthetic_pulsed(10.0, 0.0, 0, 12_500.0, 50.0, 12);
        assert!(matches!(g2_zero(&h, 12_500.0, 6_250.0), Err(Error::UndefinedRatio(_))));
        let short = synthetic_pulsed(10.0, 10.0, 0, 12_500.0, 50.0, 4);
        assert!(matches!(g2_zero(&short, 12_500.0, 6_250.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn g2_insensitive_to_flat_floor() {
        let rep = 13_157.9;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = synthetic_pulsed(20.0, 400.0, 0, rep, 40.0, 12);
        let reference = g2_zero(&base, rep, rep / 2.0).unwrap().g2;
        for level in 1..=10 {
            let floor_mean = level as f64 * 3.0;
            let mut h = base.clone();
            for c in h.counts.iter_mut() {
                let poisson = rand_distr::Poisson::new(floor_mean).unwrap();
                *c += rand_distr::Distribution::sample(&poisson, &mut rng) as u64;
            }
            let r = g2_zero(&h, rep, rep / 2.0).unwrap().g2;
            assert!((r.value - reference.value).abs() < 3.0 * r.stderr, "level {level}: {r:?} vs {reference:?}");
        }
    }

    #[test]
    fn contrast_values() {
        let c = contrast(Estimate::exact(1.8), Estimate::exact(0.2)).unwrap();
        assert!((c.value - 0.8).abs() < 1e-15);
        assert_eq!(contrast(Estimate::exact(0.7), Estimate::exact(0.7)).unwrap().value, 0.0);
        assert!(contrast(Estimate::exact(0.0), Estimate::exact(0.0)).is_err());
        let e = contrast(Estimate::new(1.0, 0.1), Estimate::new(1.0, 0.1)).unwrap();
        assert!((e.stderr - (2.0f64).sqrt() * 0.05).abs() < 1e-15);
    }

    #[test]
    fn fidelity_from_reported_contrasts() {
        let f = fidelity_from_contrasts(Estimate::new(0.89, 0.03), Estimate::new(0.83, 0.04), Estimate::new(-0.78, 0.04));
        assert!((f.value - 0.875).abs() < 1e-12);
        assert!((f.value - 0.88).abs() <= 0.005 + 1e-12);
        assert!((fidelity_from_contrasts(Estimate::exact(1.0), Estimate::exact(1.0), Estimate::exact(-1.0)).value - 1.0).abs() < 1e-15);
        assert!((fidelity_from_contrasts(Estimate::exact(0.0), Estimate::exact(0.0), Estimate::exact(0.0)).value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip_and_merge() {
        let h = cross_correlate(&[0, 100, 250], &[90, 300, 310], 20.0, 200.0).unwrap();
        let text = h.to_csv(&[("normalization", "side_peak_mean".into())]);
        assert!(text.contains("# normalization=side_peak_mean"));
        let back = CoincidenceHistogram::from_csv(&text).unwrap();
        assert_eq!(back.counts, h.counts);
        assert_eq!(back.origin_ps, h.origin_ps);
        let mut merged = h.clone();
        merged.merge(&back).unwrap();
        assert_eq!(merged.total(), 2 * h.total());
        assert!(matches!(CoincidenceHistogram::from_csv("# bin_width_ps=1\nfoo\n"), Err(Error::Parse { .. })));
    }

    fn sorted_stream(max_len: usize) -> impl Strategy<Value = Vec<u64>> {
        prop::collection::vec(0u64..200_000, 0..max_len).prop_map(|mut v| {
            v.sort_unstable();
            v
        })
    }

    proptest! {
        #[test]
        fn histogram_mirror_identity(a in sorted_stream(300), b in sorted_stream(300), bw in 1u32..500, max in 0u32..20_000) {
            let ab = cross_correlate(&a, &b, bw as f64, max as f64).unwrap();
            let ba = cross_correlate(&b, &a, bw as f64, max as f64).unwrap();
            let rev: Vec<u64> = ba.counts.iter().rev().copied().collect();
            prop_assert_eq!(ab.counts, rev);
        }

        #[test]
        fn histogram_total_matches_brute_force(a in sorted_stream(1000), b in sorted_stream(1000), bw in 1u32..500, max in 0u32..20_000) {
            let h = cross_correlate(&a, &b, bw as f64, max as f64).unwrap();
            let reach = h.origin_ps.abs();
            prop_assert_eq!(h.total(), brute_force_pairs(&a, &b, reach));
        }

        #[test]
        fn contrast_bounded(co in 0.0f64..10.0, cross in 0.0f64..10.0) {
            prop_assume!(co + cross > 0.0);
            let c = contrast(Estimate::exact(co), Estimate::exact(cross)).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c.value));
        }
    }
}
