//! Sweep output: every judged point as CSV, and a summary table of maxima
//! and proportions.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::{Experiment, SweepResult};
use crate::engine::Mode;

pub const CSV_HEADER: &str =
    "experiment,mode,point,stable,mean_processing_ms,overhead_per_call_ms,overhead_per_kb_ms,seed";

pub fn write_csv<W: Write>(results: &[SweepResult], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in results {
        for o in &r.outcomes {
            for p in &o.points {
                writeln!(
                    out,
                    "{},{},{},{},{:.3},{},{},{}",
                    p.experiment,
                    p.mode,
                    p.point,
                    p.stable,
                    p.mean_processing_ms,
                    r.overhead.per_call_ms,
                    r.overhead.per_kb_ms,
                    p.seed
                )?;
            }
        }
    }
    Ok(())
}

fn heading(e: Experiment) -> (&'static str, &'static str) {
    match e {
        Experiment::Clients => ("Maximum Number of Clients Served in Parallel", "# Clients"),
        Experiment::Load => ("Maximum Input Load per Second", "Load (kB/sec)"),
    }
}

fn value(e: Experiment, v: Option<u64>) -> String {
    match (e, v) {
        (_, None) => "n/a".into(),
        (Experiment::Clients, Some(v)) => v.to_string(),
        (Experiment::Load, Some(v)) => format!("{:.2}", v as f64 / 1000.0),
    }
}

/// Markdown table of per-mode maxima and proportions, followed by the
/// overhead disclosure and any search warnings.
pub fn summary_table(results: &[SweepResult]) -> String {
    let mut s = String::from("| | Secure | Plain |\n|---|---|---|\n");
    for r in results {
        let e = r.config.experiment;
        let (title, row) = heading(e);
        let secure = r.maximum(Mode::Secure);
        let plain = r.maximum(Mode::Plain);
        let _ = writeln!(s, "| **{title}** | | |");
        let _ = writeln!(s, "| {row} | {} | {} |", value(e, secure), value(e, plain));
        let proportion = r.proportion().map_or("n/a".into(), |p| format!("{p:.2}"));
        let _ = writeln!(s, "| Proportion | {proportion} | 1 |");
    }
    s.push('\n');
    for r in results {
        let _ = writeln!(
            s,
            "{}: {}; virtual time scale x{:.3}; {} s per point, {} s interval, seed {}",
            r.config.experiment,
            r.overhead.disclosure(),
            r.time_scale,
            r.config.run_duration_s,
            r.config.interval_s,
            r.config.seed
        );
        for o in &r.outcomes {
            if o.never_unstable {
                let _ = writeln!(s, "warning: {} {} never became unstable below {}", r.config.experiment, o.mode, r.config.upper);
            }
            if o.non_monotone {
                let _ = writeln!(s, "warning: {} {} stability was not monotone near its maximum", r.config.experiment, o.mode);
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub json: PathBuf,
}

/// Writes `sweep.csv`, `summary.md` and `results.json` under `dir`.
pub fn emit_report(results: &[SweepResult], dir: &Path) -> io::Result<ReportFiles> {
    fs::create_dir_all(dir)?;
    let files = ReportFiles {
        csv: dir.join("sweep.csv"),
        summary: dir.join("summary.md"),
        json: dir.join("results.json"),
    };
    write_csv(results, io::BufWriter::new(fs::File::create(&files.csv)?))?;
    fs::write(&files.summary, summary_table(results))?;
    fs::write(&files.json, serde_json::to_vec_pretty(results).map_err(io::Error::other)?)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::super::{sweep, StubOracle, SweepConfig};
    use super::*;
    use crate::enclave::OverheadModel;

    #[test]
    fn empty_results_give_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn table_rows_follow_figure_layout() {
        let overhead = OverheadModel::new(0.5, 0.25).unwrap();
        let clients = sweep(&mut StubOracle::new(110, 225), &SweepConfig::clients(7), overhead, 1.0).unwrap();
        let load = sweep(&mut StubOracle::new(16_000, 32_000), &SweepConfig::load(7), overhead, 1.0).unwrap();
        let table = summary_table(&[clients.clone(), load]);
        assert!(table.contains("| # Clients |"));
        assert!(table.contains("| Load (kB/sec) |"));
        assert_eq!(table.matches("| Proportion |").count(), 2);
        assert!(table.contains("per_call_ms=0.5 per_kb_ms=0.25"));

        let mut buf = Vec::new();
        write_csv(&[clients], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("clients,secure,1,true,"));
        assert!(row.ends_with(",0.5,0.25,7"));
    }
}
