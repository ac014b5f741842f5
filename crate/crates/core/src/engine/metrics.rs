use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EngineError, Mode};

/// Measurements for one closed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub interval_index: u64,
    pub record_count: usize,
    pub input_bytes: u64,
    /// From window close until the last result of the window was ready.
    pub processing_ms: f64,
    /// Windows closed but not yet finished when this one closed.
    pub queue_depth: usize,
    pub rss_kb: Option<u64>,
}

pub const METRICS_HEADER: &str = "interval_index,record_count,input_bytes,processing_ms";

impl BatchMetrics {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{:.3}",
            self.interval_index, self.record_count, self.input_bytes, self.processing_ms
        )
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let mut f = line.trim().split(',');
        let m = Self {
            interval_index: f.next()?.parse().ok()?,
            record_count: f.next()?.parse().ok()?,
            input_bytes: f.next()?.parse().ok()?,
            processing_ms: f.next()?.parse().ok()?,
            queue_depth: 0,
            rss_kb: None,
        };
        f.next().is_none().then_some(m)
    }
}

pub fn mean_processing_ms(metrics: &[BatchMetrics]) -> Option<f64> {
    if metrics.is_empty() {
        return None;
    }
    Some(metrics.iter().map(|m| m.processing_ms).sum::<f64>() / metrics.len() as f64)
}

/// True iff the mean processing time exceeds the interval. `metrics` are
/// the post-warmup measurements.
pub fn is_unstable(metrics: &[BatchMetrics], interval_s: f64) -> Result<bool, EngineError> {
    let mean = mean_processing_ms(metrics).ok_or(EngineError::NoData)?;
    Ok(mean > interval_s * 1000.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub mode: Mode,
    pub interval_s: f64,
    pub warmup_intervals: usize,
    pub metrics: Vec<BatchMetrics>,
    pub mean_processing_ms: f64,
    pub unstable: bool,
}

impl StabilityReport {
    /// Judges a run, ignoring its first `warmup_intervals` windows.
    pub fn from_metrics(
        mode: Mode,
        interval_s: f64,
        warmup_intervals: usize,
        metrics: Vec<BatchMetrics>,
    ) -> Result<Self, EngineError> {
        let measured = metrics.get(warmup_intervals..).unwrap_or(&[]);
        let unstable = is_unstable(measured, interval_s)?;
        Ok(Self {
            mode,
            interval_s,
            warmup_intervals,
            mean_processing_ms: mean_processing_ms(measured).expect("non-empty"),
            unstable,
            metrics,
        })
    }

    pub fn record_count(&self) -> usize {
        self.metrics.iter().map(|m| m.record_count).sum()
    }
}

/// Best-effort resident set size of this process.
pub fn resident_set_kb() -> Option<u64> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * 4)
}

/// Writes metric lines to a file and optionally echoes them to stdout.
pub struct MetricsWriter {
    file: Option<BufWriter<File>>,
    echo: bool,
}

impl MetricsWriter {
    pub fn new(path: Option<&Path>, echo: bool) -> io::Result<Self> {
        let file = match path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "{METRICS_HEADER}")?;
                w.flush()?;
                Some(w)
            }
            None => None,
        };
        Ok(Self { file, echo })
    }

    pub fn record(&mut self, m: &BatchMetrics) -> io::Result<()> {
        let line = m.to_line();
        if let Some(f) = &mut self.file {
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        if self.echo {
            println!("{line}");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(ms: f64) -> BatchMetrics {
        BatchMetrics {
            interval_index: 0,
            record_count: 0,
            input_bytes: 0,
            processing_ms: ms,
            queue_depth: 0,
            rss_kb: None,
        }
    }

    #[test]
    fn threshold_examples() {
        assert!(!is_unstable(&[m(9_900.0)], 10.0).unwrap());
        assert!(is_unstable(&[m(10_100.0)], 10.0).unwrap());
        assert!(!is_unstable(&[m(10_000.0)], 10.0).unwrap());
        assert!(is_unstable(&[m(5_000.0), m(15_000.0), m(10_001.0)], 10.0).unwrap());
        assert!(matches!(is_unstable(&[], 10.0), Err(EngineError::NoData)));
    }

    #[test]
    fn warmup_is_excluded() {
        let metrics = vec![m(50_000.0), m(50_000.0), m(1.0), m(3.0)];
        let r = StabilityReport::from_metrics(Mode::Plain, 10.0, 2, metrics.clone()).unwrap();
        assert!(!r.unstable);
        assert_eq!(r.mean_processing_ms, 2.0);
        assert!(StabilityReport::from_metrics(Mode::Plain, 10.0, 4, metrics).is_err());
    }

    #[test]
    fn line_format() {
        let x = BatchMetrics {
            interval_index: 3,
            record_count: 20,
            input_bytes: 4096,
            processing_ms: 12.5,
            queue_depth: 1,
            rss_kb: Some(1),
        };
        assert_eq!(x.to_line(), "3,20,4096,12.500");
        let back = BatchMetrics::parse_line(&x.to_line()).unwrap();
        assert_eq!((back.interval_index, back.record_count, back.processing_ms), (3, 20, 12.5));
        assert!(BatchMetrics::parse_line("1,2,3").is_none());
    }
}
