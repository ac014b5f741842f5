//! Independent reference computations used to check the analytics.
//!
//! Nothing here calls into the library's numeric code; each routine is the
//! textbook formula evaluated the slow, obvious way.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Two-pass sample standard deviation: mean first, then squared deviations.
pub fn sdnn_two_pass(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

pub fn mean_hr(values: &[f64]) -> f64 {
    60_000.0 / (values.iter().sum::<f64>() / values.len() as f64)
}

/// Direct O(n²) DFT periodogram `|Σ y e^{-2πikn/N}|² / N` of the
/// mean-subtracted series, for bins `k`.
pub fn dft_periodogram(values: &[f64], bins: &[usize]) -> Vec<f64> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    bins.iter()
        .map(|&k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in values.iter().enumerate() {
                let arg = -2.0 * PI * (k * j % n) as f64 / n as f64;
                re += (v - mean) * arg.cos();
                im += (v - mean) * arg.sin();
            }
            (re * re + im * im) / n as f64
        })
        .collect()
}

/// Lomb-Scargle evaluated straight from its definition: τ from atan2, then
/// explicit shifted cosine and sine sums.
pub fn lomb_scargle_naive(times: &[f64], values: &[f64], freqs: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    freqs
        .iter()
        .map(|&f| {
            if var == 0.0 {
                return 0.0;
            }
            let w = 2.0 * PI * f;
            let s2: f64 = times.iter().map(|t| (2.0 * w * t).sin()).sum();
            let c2: f64 = times.iter().map(|t| (2.0 * w * t).cos()).sum();
            let tau = s2.atan2(c2) / (2.0 * w);
            let mut yc = 0.0;
            let mut ys = 0.0;
            let mut cc = 0.0;
            let mut ss = 0.0;
            for (t, v) in times.iter().zip(values) {
                let arg = w * (t - tau);
                yc += (v - mean) * arg.cos();
                ys += (v - mean) * arg.sin();
                cc += arg.cos().powi(2);
                ss += arg.sin().powi(2);
            }
            0.5 * (yc * yc / cc + ys * ys / ss)
        })
        .collect()
}

/// Trapezoid over the grid points lying inside `[lo, hi]`.
pub fn trapezoid_in(freqs: &[f64], power: &[f64], lo: f64, hi: f64) -> f64 {
    let pts: Vec<(f64, f64)> = freqs
        .iter()
        .zip(power)
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .map(|(f, p)| (*f, *p))
        .collect();
    pts.windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

/// RR series whose intervals oscillate at `freq_hz` around `mean_ms`; the
/// modulation phase follows the running R-peak time.
pub fn modulated_rr(n: usize, mean_ms: f64, amp_ms: f64, freq_hz: f64) -> Vec<(u64, u32)> {
    let mut t_ms: u64 = 0;
    (0..n)
        .map(|_| {
            let t_s = t_ms as f64 / 1000.0;
            let rr = (mean_ms + amp_ms * (2.0 * PI * freq_hz * t_s).sin()).round() as u32;
            t_ms += u64::from(rr);
            (t_ms, rr)
        })
        .collect()
}
