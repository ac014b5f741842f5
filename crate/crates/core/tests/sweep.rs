mod support;

use cardiogrid_core::enclave::OverheadModel;
use cardiogrid_core::sweep::{
    calibrate, search, sweep, write_csv, CalibrationConfig, CostModel, CostModelOracle, EngineOracle, Experiment,
    PointOutcome, StabilityOracle, StubOracle, SweepConfig, SweepError, Tolerance,
};
use cardiogrid_core::Mode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::fixtures::{launcher, root_key, spec};

#[test]
fn stub_thresholds_are_recovered_within_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let t = rng.gen_range(1..3000);
        let out = search(&mut StubOracle::new(t, t), &SweepConfig::clients(1), Mode::Plain).unwrap();
        assert!(out.maximum <= t && t - out.maximum <= 4, "clients {t} -> {}", out.maximum);

        let t = rng.gen_range(1_000..2_000_000);
        let out = search(&mut StubOracle::new(t, t), &SweepConfig::load(1), Mode::Secure).unwrap();
        let err = (t - out.maximum) as f64 / t as f64;
        assert!(out.maximum <= t && err <= 0.10, "load {t} -> {}", out.maximum);
    }
}

#[test]
fn sixteen_kilobytes_per_second_is_found() {
    let out = search(&mut StubOracle::new(16_000, 32_000), &SweepConfig::load(3), Mode::Secure).unwrap();
    assert!((out.maximum as f64 - 16_000.0).abs() / 16_000.0 <= 0.10, "{}", out.maximum);
}

#[test]
fn doubling_never_overshoots_twice_the_threshold() {
    for t in [1u64, 2, 5, 63, 64, 65, 110, 225, 1000] {
        let out = search(&mut StubOracle::new(t, t), &SweepConfig::clients(1), Mode::Plain).unwrap();
        let highest = out.points.iter().map(|p| p.point).max().unwrap();
        assert!(highest <= 2 * t, "threshold {t}: tested {highest}");
    }
}

fn point_set(oracle: &mut dyn StabilityOracle, cfg: &SweepConfig) -> Vec<String> {
    let r = sweep(oracle, cfg, OverheadModel::NONE, 1.0).unwrap();
    let mut buf = Vec::new();
    write_csv(&[r], &mut buf).unwrap();
    String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            [f[0], f[1], f[2], f[3], f[7]].join(",")
        })
        .collect()
}

fn modeled(per_batch_ms: f64, overhead: OverheadModel) -> CostModelOracle {
    CostModelOracle {
        cost: CostModel { per_batch_ms, per_kb_ms: 0.0 },
        overhead,
    }
}

#[test]
fn same_seed_gives_same_points() {
    let cfg = SweepConfig::clients(11);
    let overhead = OverheadModel::new(20.0, 0.0).unwrap();
    assert_eq!(point_set(&mut modeled(20.0, overhead), &cfg), point_set(&mut modeled(20.0, overhead), &cfg));
}

#[test]
fn zero_overhead_gives_equal_maxima() {
    for cfg in [SweepConfig::clients(5), SweepConfig::load(5)] {
        let r = sweep(&mut modeled(25.0, OverheadModel::NONE), &cfg, OverheadModel::NONE, 1.0).unwrap();
        let (s, p) = (r.maximum(Mode::Secure).unwrap(), r.maximum(Mode::Plain).unwrap());
        assert_eq!(s, p, "{:?}", cfg.experiment);
        assert!(r.outcomes.iter().all(|o| !o.never_unstable));
    }
}

#[test]
fn doubled_batch_cost_halves_the_maxima() {
    let overhead = OverheadModel::new(25.0, 0.0).unwrap();
    for cfg in [SweepConfig::clients(6), SweepConfig::load(6)] {
        let r = sweep(&mut modeled(25.0, overhead), &cfg, overhead, 1.0).unwrap();
        let p = r.proportion().unwrap();
        assert!((p - 0.5).abs() <= 0.5 * 0.3, "{:?}: {p}", cfg.experiment);
    }
}

/// Stable at or below `t`, except that the first answer for any point
/// above `t` is a false "stable".
struct FlakyOnce {
    t: u64,
    seen: std::collections::HashSet<u64>,
}

impl StabilityOracle for FlakyOnce {
    fn run_point(&mut self, _: &SweepConfig, _: Mode, point: u64) -> Result<PointOutcome, SweepError> {
        let first = self.seen.insert(point);
        let stable = point <= self.t || (first && point == self.t + 8);
        Ok(PointOutcome {
            stable,
            mean_processing_ms: if stable { 9_000.0 } else { 11_000.0 },
        })
    }
}

/// Unstable at `t` every other time it is asked.
struct Alternating {
    t: u64,
    flips: u64,
}

impl StabilityOracle for Alternating {
    fn run_point(&mut self, _: &SweepConfig, _: Mode, point: u64) -> Result<PointOutcome, SweepError> {
        let stable = if point == self.t {
            self.flips += 1;
            self.flips % 2 == 1
        } else {
            point < self.t
        };
        Ok(PointOutcome {
            stable,
            mean_processing_ms: 0.0,
        })
    }
}

#[test]
fn frontier_noise_is_rerun_and_persistent_noise_flagged() {
    let mut cfg = SweepConfig::clients(1);
    cfg.tolerance = Tolerance::Absolute(1);
    let out = search(&mut FlakyOnce { t: 100, seen: Default::default() }, &cfg, Mode::Plain).unwrap();
    assert!(!out.non_monotone);

    // Stable, then unstable on confirmation, then stable: transient.
    let out = search(&mut Alternating { t: 37, flips: 0 }, &cfg, Mode::Plain).unwrap();
    assert_eq!(out.maximum, 37);
    assert!(!out.non_monotone);
    let reruns = out.points.iter().filter(|p| p.point == 37).count();
    assert_eq!(reruns, 3);

    // Unstable on confirmation and again on the tiebreak: flagged.
    struct Persistent(u64, u64);
    impl StabilityOracle for Persistent {
        fn run_point(&mut self, _: &SweepConfig, _: Mode, p: u64) -> Result<PointOutcome, SweepError> {
            let stable = if p == self.0 {
                self.1 += 1;
                self.1 == 1
            } else {
                p < self.0
            };
            Ok(PointOutcome {
                stable,
                mean_processing_ms: 0.0,
            })
        }
    }
    let out = search(&mut Persistent(37, 0), &cfg, Mode::Plain).unwrap();
    assert!(out.non_monotone);
}

#[test]
fn engine_oracle_judges_real_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (key_file, root) = root_key(dir.path(), 31);
    let mut oracle = EngineOracle {
        launcher: launcher(),
        spec: spec(&key_file, OverheadModel::NONE),
        root,
        time_scale: 1.0,
    };
    let cfg = SweepConfig::clients(2);
    for mode in [Mode::Secure, Mode::Plain] {
        let out = oracle.run_point(&cfg, mode, 3).unwrap();
        assert!(out.stable && out.mean_processing_ms < 1_000.0, "{mode}: {out:?}");
    }
    oracle.time_scale = 1.0e7;
    for mode in [Mode::Secure, Mode::Plain] {
        assert!(!oracle.run_point(&cfg, mode, 3).unwrap().stable);
    }
    let load = SweepConfig::load(2);
    assert_eq!(load.experiment, Experiment::Load);
    oracle.time_scale = 1.0;
    assert!(oracle.run_point(&load, Mode::Secure, 2_000).unwrap().stable);
}

#[test]
fn calibration_fits_a_non_negative_model() {
    let dir = tempfile::tempdir().unwrap();
    let (key_file, root) = root_key(dir.path(), 32);
    let cfg = CalibrationConfig {
        batches_per_round: 40,
        rounds: 3,
        ..CalibrationConfig::default()
    };
    let c = calibrate(&launcher(), &spec(&key_file, OverheadModel::NONE), &root, &cfg).unwrap();
    assert!(c.overhead.per_call_ms >= 0.0 && c.overhead.per_kb_ms >= 0.0);
    assert!(c.plain_ms.iter().all(|&p| p > 0.0));
    assert!(c.crossing_bytes[1] > c.crossing_bytes[0]);
    assert!(c.clients_time_scale > 0.0 && c.load_time_scale > 0.0);
    println!("{c:#?}");
}
