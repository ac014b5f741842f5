use std::f64::consts::PI;

use super::{Band, FrequencyBands, HrvError, RRWindow};

/// Power evaluated on a strictly increasing frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPowers {
    pub vlf: f64,
    pub lf: f64,
    pub hf: f64,
}

impl BandPowers {
    pub fn total(&self) -> f64 {
        self.vlf + self.lf + self.hf
    }

    pub fn lf_hf_ratio(&self) -> Option<f64> {
        (self.hf > 0.0).then(|| self.lf / self.hf)
    }
}

fn check_grid(freqs: &[f64]) -> Result<(), HrvError> {
    if freqs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(HrvError::InvalidGrid("frequencies must be positive".into()));
    }
    if freqs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HrvError::InvalidGrid("frequencies must increase".into()));
    }
    Ok(())
}

/// Classical Lomb-Scargle periodogram of `values` sampled at `times_s`.
///
/// The series is mean-subtracted first. Output is in squared value units and
/// reduces to `|DFT|² / N` at Fourier frequencies of evenly sampled input.
/// A zero-variance series yields all-zero power.
pub fn lomb_scargle(times_s: &[f64], values: &[f64], freqs: &[f64]) -> Result<Vec<f64>, HrvError> {
    assert_eq!(times_s.len(), values.len(), "times and values differ in length");
    let n = values.len();
    if n < 4 {
        return Err(HrvError::InsufficientData { needed: 4, got: n });
    }
    check_grid(freqs)?;

    let mean = values.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = values.iter().map(|v| v - mean).collect();
    if y.iter().all(|v| *v == 0.0) {
        return Ok(vec![0.0; freqs.len()]);
    }
    // The periodogram is invariant to a time offset; anchoring at the first
    // sample keeps ωt small.
    let t0 = times_s[0];
    let t: Vec<f64> = times_s.iter().map(|x| x - t0).collect();
    let nf = n as f64;

    let power = freqs
        .iter()
        .map(|&f| {
            let omega = 2.0 * PI * f;
            let (mut c2, mut s2) = (0.0, 0.0);
            let (mut yc, mut ys) = (0.0, 0.0);
            for (ti, yi) in t.iter().zip(&y) {
                let (s, c) = (omega * ti).sin_cos();
                // Double-angle identities avoid a second sin_cos per sample.
                c2 += c * c - s * s;
                s2 += 2.0 * s * c;
                yc += yi * c;
                ys += yi * s;
            }
            // τ satisfies tan(2ωτ) = s2 / c2; work with cos/sin of 2ωτ directly.
            let r = c2.hypot(s2);
            let (cos2, sin2) = if r > 0.0 { (c2 / r, s2 / r) } else { (1.0, 0.0) };
            let cos1 = ((1.0 + cos2) / 2.0).max(0.0).sqrt();
            let sin1 = ((1.0 - cos2) / 2.0).max(0.0).sqrt().copysign(sin2);
            let yc_shift = cos1 * yc + sin1 * ys;
            let ys_shift = cos1 * ys - sin1 * yc;
            let cc = (nf + r) / 2.0;
            let ss = (nf - r) / 2.0;
            let mut p = 0.0;
            if cc > nf * 1e-12 {
                p += yc_shift * yc_shift / cc;
            }
            if ss > nf * 1e-12 {
                p += ys_shift * ys_shift / ss;
            }
            (p / 2.0).max(0.0)
        })
        .collect();
    Ok(power)
}

/// Lomb-Scargle over a window's RR series, abscissa = R-peak time in seconds.
pub fn lomb_scargle_power(window: &RRWindow, freqs: &[f64]) -> Result<Spectrum, HrvError> {
    let times: Vec<f64> = window
        .samples()
        .iter()
        .map(|s| s.r_timestamp_ms as f64 / 1000.0)
        .collect();
    let values: Vec<f64> = window.intervals_ms().collect();
    let power = lomb_scargle(&times, &values, freqs)?;
    Ok(Spectrum {
        freqs: freqs.to_vec(),
        power,
    })
}

fn integrate_band(spectrum: &Spectrum, band: &Band, name: &'static str) -> Result<f64, HrvError> {
    let points: Vec<(f64, f64)> = spectrum
        .freqs
        .iter()
        .zip(&spectrum.power)
        .filter(|(f, _)| band.contains(**f))
        .map(|(f, p)| (*f, *p))
        .collect();
    if points.len() < 2 {
        return Err(HrvError::EmptyBand {
            band: name,
            points: points.len(),
        });
    }
    Ok(points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum())
}

/// Trapezoidal integral of the spectrum over each band (grid points inside
/// the closed band interval only).
pub fn band_powers(spectrum: &Spectrum, bands: &FrequencyBands) -> Result<BandPowers, HrvError> {
    if spectrum.freqs.len() != spectrum.power.len() {
        return Err(HrvError::InvalidGrid("power and frequency lengths differ".into()));
    }
    check_grid(&spectrum.freqs)?;
    Ok(BandPowers {
        vlf: integrate_band(spectrum, &bands.vlf, "vlf")?,
        lf: integrate_band(spectrum, &bands.lf, "lf")?,
        hf: integrate_band(spectrum, &bands.hf, "hf")?,
    })
}
