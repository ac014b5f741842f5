use super::{HrvError, RRWindow};

/// Sample standard deviation (n − 1 divisor) of the window's RR intervals.
///
/// Single pass (Welford), so long windows do not need a second sweep.
pub fn sdnn(window: &RRWindow) -> Result<f64, HrvError> {
    let n = window.len();
    if n < 2 {
        return Err(HrvError::InsufficientData { needed: 2, got: n });
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, x) in window.intervals_ms().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    Ok((m2 / (n - 1) as f64).sqrt())
}

/// `60000 / mean(rr)` in beats per minute.
pub fn mean_heart_rate(window: &RRWindow) -> Result<f64, HrvError> {
    let n = window.len();
    if n == 0 {
        return Err(HrvError::InsufficientData { needed: 1, got: 0 });
    }
    // Integer sum is exact for any realistic window length.
    let total: u64 = window
        .samples()
        .iter()
        .map(|s| u64::from(s.rr_interval_ms))
        .sum();
    Ok(60_000.0 * n as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hrv::RRSample;

    fn window(rrs: &[u32]) -> RRWindow {
        let mut t = 0;
        let samples = rrs
            .iter()
            .map(|&rr| {
                t += u64::from(rr);
                RRSample::new("c", t, rr)
            })
            .collect();
        RRWindow::spanning("c", samples).unwrap()
    }

    #[test]
    fn sdnn_of_constant_is_zero() {
        assert_eq!(sdnn(&window(&[800; 50])).unwrap(), 0.0);
    }

    #[test]
    fn sdnn_three_point() {
        // mean 800, squared deviations 100 + 0 + 100, divisor 2.
        let v = sdnn(&window(&[790, 800, 810])).unwrap();
        assert!((v - 10.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn sdnn_needs_two() {
        assert_eq!(
            sdnn(&window(&[800])),
            Err(HrvError::InsufficientData { needed: 2, got: 1 })
        );
    }

    #[test]
    fn sdnn_is_shift_invariant() {
        let a = sdnn(&window(&[700, 850, 910, 640, 800])).unwrap();
        let b = sdnn(&window(&[800, 950, 1010, 740, 900])).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn mean_hr_definition() {
        assert_eq!(mean_heart_rate(&window(&[1000; 4])).unwrap(), 60.0);
        assert_eq!(mean_heart_rate(&window(&[500; 4])).unwrap(), 120.0);
        let mixed = mean_heart_rate(&window(&[800, 1000])).unwrap();
        assert!((mixed - 60000.0 / 900.0).abs() < 1e-12);
        assert!(mean_heart_rate(&RRWindow::new("c", 0, 0, vec![]).unwrap()).is_err());
    }
}
