//! Deterministic parallel experiment runner.
//!
//! Trial `t` of procedure `p` at sweep point `s` is simulated from the seed
//! [`derive_seed`]`(base_seed, p, s, t)`. Per-trial summaries are integers
//! (sample counts and error indicators), and the reduction only adds them in
//! `u128`, so the aggregate is exactly the same for any number of workers and
//! any scheduling order.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::calibrate_thresholds;
use crate::error::{Error, Result};
use crate::llr::{Thresholds, DEFAULT_HORIZON};
use crate::procedures::{run_procedure, ProcedureSpec, SimulatedStreams, TrialResult};
use crate::stats::proportion_se;
use crate::stream_models::{GroundTruth, StreamModel};

/// Minimum expected number of error events for a meaningful rate estimate.
pub const MIN_EXPECTED_ERRORS: f64 = 10.0;

/// CSV header of a study.
pub const CSV_HEADER: [&str; 10] = [
    "procedure",
    "sweep_value",
    "k",
    "mean",
    "se",
    "fwe1",
    "fwe2",
    "trials",
    "mean_tstop",
    "se_tstop",
];

/// How the thresholds of an experiment are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSpec {
    Explicit {
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_prime: Option<f64>,
    },
    Calibrated {
        alpha: f64,
        beta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_prime: Option<f64>,
    },
}

impl ThresholdSpec {
    pub fn resolve(&self, streams: usize) -> Result<Thresholds> {
        let (base, b_prime) = match *self {
            Self::Explicit { a, b, b_prime } => (Thresholds::with_default_b_prime(a, b)?, b_prime),
            Self::Calibrated { alpha, beta, b_prime } => (calibrate_thresholds(alpha, beta, streams)?, b_prime),
        };
        match b_prime {
            Some(bp) => base.with_b_prime(bp),
            None => Ok(base),
        }
    }

    pub fn b_prime(&self) -> Option<f64> {
        match *self {
            Self::Explicit { b_prime, .. } | Self::Calibrated { b_prime, .. } => b_prime,
        }
    }
}

/// One swept parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum Sweep {
    /// Exploration threshold `b'`, other thresholds fixed.
    BPrime(Vec<f64>),
    /// Symmetric thresholds `a = b`; `b'` follows `log a` unless fixed.
    Threshold(Vec<f64>),
}

impl Sweep {
    pub fn values(&self) -> &[f64] {
        match self {
            Self::BPrime(v) | Self::Threshold(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub models: Vec<StreamModel>,
    pub truth: GroundTruth,
    pub thresholds: ThresholdSpec,
    pub procedures: Vec<ProcedureSpec>,
    pub trials: u64,
    pub base_seed: u64,
    pub sweep: Option<Sweep>,
    /// Share trial seeds across procedures (paired comparisons).
    pub common_random_numbers: bool,
    pub horizon: u64,
}

impl ExperimentConfig {
    pub fn new(models: Vec<StreamModel>, truth: GroundTruth, thresholds: ThresholdSpec) -> Self {
        Self {
            models,
            truth,
            thresholds,
            procedures: vec![ProcedureSpec::proposed()],
            trials: 10_000,
            base_seed: 0,
            sweep: None,
            common_random_numbers: false,
            horizon: DEFAULT_HORIZON,
        }
    }

    /// Thresholds at every sweep point (a single point without a sweep).
    pub fn sweep_points(&self) -> Result<Vec<(Option<f64>, Thresholds)>> {
        let k = self.models.len();
        let base = self.thresholds.resolve(k)?.with_horizon(self.horizon);
        let Some(sweep) = &self.sweep else {
            return Ok(vec![(None, base)]);
        };
        if sweep.values().is_empty() {
            return Err(Error::InvalidConfig("sweep has no values".into()));
        }
        sweep
            .values()
            .iter()
            .map(|&v| {
                if !v.is_finite() {
                    return Err(Error::InvalidConfig(format!("sweep value {v} is not finite")));
                }
                let t = match sweep {
                    Sweep::BPrime(_) => base.with_b_prime(v)?,
                    Sweep::Threshold(_) => {
                        let t = Thresholds::symmetric(v)?;
                        match self.thresholds.b_prime() {
                            Some(bp) => t.with_b_prime(bp)?,
                            None => t,
                        }
                    }
                };
                Ok((Some(v), t.with_horizon(self.horizon)))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::InvalidConfig("no stream models".into()));
        }
        if let Some(bad) = self.truth.signals().iter().find(|i| **i >= self.models.len()) {
            return Err(Error::InvalidConfig(format!("signal index {bad} out of range")));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.procedures.is_empty() {
            return Err(Error::InvalidConfig("no procedures".into()));
        }
        let mut labels: Vec<String> = self.procedures.iter().map(ProcedureSpec::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig(format!("procedure {} listed twice", w[0])));
        }
        for (_, t) in self.sweep_points()? {
            for spec in &self.procedures {
                if let ProcedureSpec::Proposed { b_prime: Some(bp), .. } = spec {
                    t.with_b_prime(*bp)?;
                }
            }
        }
        Ok(())
    }
}

/// Monte Carlo estimates for one procedure at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub procedure: String,
    pub sweep_index: usize,
    pub sweep_value: Option<f64>,
    pub thresholds: Thresholds,
    /// `E[T_k ∧ T_stop]` at index `k - 1`.
    pub mean_tk_min_tstop: Vec<f64>,
    pub se_tk: Vec<f64>,
    pub mean_tstop: f64,
    pub se_tstop: f64,
    pub fwe1_rate: f64,
    pub fwe1_se: f64,
    pub fwe2_rate: f64,
    pub fwe2_se: f64,
    pub false_alarms: u64,
    pub missed_detections: u64,
    pub trials_used: u64,
}

/// splitmix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one trial: `h = splitmix64(base)`, then for each of
/// `(procedure, sweep_index, trial)` in turn `h = splitmix64(h ^ splitmix64(x))`.
pub fn derive_seed(base_seed: u64, procedure: u64, sweep_index: u64, trial: u64) -> u64 {
    [procedure, sweep_index, trial]
        .into_iter()
        .fold(splitmix64(base_seed), |h, x| splitmix64(h ^ splitmix64(x)))
}

/// Exact integer sums over trials.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Accumulator {
    sum_tk: Vec<u128>,
    sumsq_tk: Vec<u128>,
    sum_tstop: u128,
    sumsq_tstop: u128,
    false_alarms: u64,
    missed: u64,
    trials: u64,
}

impl Accumulator {
    fn new(k: usize) -> Self {
        Self {
            sum_tk: vec![0; k],
            sumsq_tk: vec![0; k],
            sum_tstop: 0,
            sumsq_tstop: 0,
            false_alarms: 0,
            missed: 0,
            trials: 0,
        }
    }

    fn push(&mut self, r: &TrialResult) {
        for (k, (s, s2)) in self.sum_tk.iter_mut().zip(self.sumsq_tk.iter_mut()).enumerate() {
            let t = r.tk_min_tstop(k + 1) as u128;
            *s += t;
            *s2 += t * t;
        }
        let t = r.t_stop as u128;
        self.sum_tstop += t;
        self.sumsq_tstop += t * t;
        self.false_alarms += r.false_alarm as u64;
        self.missed += r.missed_detection as u64;
        self.trials += 1;
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.sum_tk.iter_mut().zip(other.sum_tk) {
            *a += b;
        }
        for (a, b) in self.sumsq_tk.iter_mut().zip(other.sumsq_tk) {
            *a += b;
        }
        self.sum_tstop += other.sum_tstop;
        self.sumsq_tstop += other.sumsq_tstop;
        self.false_alarms += other.false_alarms;
        self.missed += other.missed;
        self.trials += other.trials;
        self
    }
}

/// Mean and standard error `sd / sqrt(n)` from exact sums.
fn mean_se(sum: u128, sumsq: u128, n: u64) -> (f64, f64) {
    let n128 = n as u128;
    let mean = sum as f64 / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    // n * sumsq - sum^2 is exact and non-negative by Cauchy-Schwarz.
    let centered = n128 * sumsq - sum * sum;
    let var = centered as f64 / (n as f64 * (n - 1) as f64);
    (mean, (var / n as f64).sqrt())
}

type TrialOutcome = std::result::Result<Accumulator, (u64, Error)>;

fn combine(a: TrialOutcome, b: TrialOutcome) -> TrialOutcome {
    match (a, b) {
        (Ok(x), Ok(y)) => Ok(x.merge(y)),
        (Err(x), Err(y)) => Err(if x.0 <= y.0 { x } else { y }),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

/// Run every procedure at every sweep point. Results are ordered by sweep
/// point, then by procedure as listed in the config.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<Vec<AggregateStats>> {
    config.validate()?;
    let points = config.sweep_points()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let k = config.models.len();

    let mut out = Vec::with_capacity(points.len() * config.procedures.len());
    for (sweep_index, (sweep_value, thresholds)) in points.iter().enumerate() {
        for (proc_index, spec) in config.procedures.iter().enumerate() {
            let proc_id = if config.common_random_numbers {
                0
            } else {
                proc_index as u64
            };
            let run_trial = |trial: u64| -> TrialOutcome {
                let seed = derive_seed(config.base_seed, proc_id, sweep_index as u64, trial);
                let mut source = SimulatedStreams::new(&config.models, &config.truth, seed);
                let r = run_procedure(spec, &config.models, &config.truth, thresholds, &mut source)
                    .map_err(|e| (trial, e))?;
                let mut acc = Accumulator::new(k);
                acc.push(&r);
                Ok(acc)
            };
            let total = if workers <= 1 {
                (0..config.trials).map(run_trial).fold(Ok(Accumulator::new(k)), combine)
            } else {
                pool.install(|| {
                    (0..config.trials)
                        .into_par_iter()
                        .map(run_trial)
                        .reduce(|| Ok(Accumulator::new(k)), combine)
                })
            };
            let acc = total.map_err(|(trial, e)| Error::TrialFailed {
                procedure: spec.label(),
                sweep_index,
                trial,
                source: Box::new(e),
            })?;
            out.push(summarise(spec, sweep_index, *sweep_value, *thresholds, &acc));
        }
    }
    Ok(out)
}

fn summarise(
    spec: &ProcedureSpec,
    sweep_index: usize,
    sweep_value: Option<f64>,
    thresholds: Thresholds,
    acc: &Accumulator,
) -> AggregateStats {
    let n = acc.trials;
    let (mean_tk_min_tstop, se_tk) = acc
        .sum_tk
        .iter()
        .zip(&acc.sumsq_tk)
        .map(|(s, s2)| mean_se(*s, *s2, n))
        .unzip();
    let (mean_tstop, se_tstop) = mean_se(acc.sum_tstop, acc.sumsq_tstop, n);
    AggregateStats {
        procedure: spec.label(),
        sweep_index,
        sweep_value,
        thresholds: match spec {
            ProcedureSpec::Proposed { b_prime: Some(bp), .. } => thresholds.with_b_prime(*bp).unwrap_or(thresholds),
            _ => thresholds,
        },
        mean_tk_min_tstop,
        se_tk,
        mean_tstop,
        se_tstop,
        fwe1_rate: acc.false_alarms as f64 / n as f64,
        fwe1_se: proportion_se(acc.false_alarms, n),
        fwe2_rate: acc.missed as f64 / n as f64,
        fwe2_se: proportion_se(acc.missed, n),
        false_alarms: acc.false_alarms,
        missed_detections: acc.missed,
        trials_used: n,
    }
}

/// Which familywise error an estimate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    /// At least one false alarm.
    TypeI,
    /// At least one missed signal.
    TypeII,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RateWarning {
    /// Fewer than [`MIN_EXPECTED_ERRORS`] events expected at the error bound.
    InsufficientTrials { kind: ErrorKind, expected_errors: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateEstimate {
    pub procedure: String,
    pub sweep_value: Option<f64>,
    pub fwe1: f64,
    pub fwe1_se: f64,
    pub fwe2: f64,
    pub fwe2_se: f64,
    /// `(K - |B|) e^{-a}` and `|B| e^{-b}`.
    pub fwe1_bound: f64,
    pub fwe2_bound: f64,
    pub warnings: Vec<RateWarning>,
}

/// Familywise error frequencies with binomial standard errors, flagged when
/// the trial count is too small to see errors at the theoretical rates.
pub fn estimate_error_rates(config: &ExperimentConfig, workers: usize) -> Result<Vec<ErrorRateEstimate>> {
    let stats = run_experiment(config, workers)?;
    let k = config.models.len() as f64;
    let signals = config.truth.len() as f64;
    Ok(stats
        .into_iter()
        .map(|s| {
            let fwe1_bound = (k - signals) * (-s.thresholds.a()).exp();
            let fwe2_bound = signals * (-s.thresholds.b()).exp();
            let mut warnings = Vec::new();
            for (kind, bound) in [(ErrorKind::TypeI, fwe1_bound), (ErrorKind::TypeII, fwe2_bound)] {
                let expected_errors = bound * s.trials_used as f64;
                if bound > 0.0 && expected_errors < MIN_EXPECTED_ERRORS {
                    warnings.push(RateWarning::InsufficientTrials { kind, expected_errors });
                }
            }
            ErrorRateEstimate {
                procedure: s.procedure,
                sweep_value: s.sweep_value,
                fwe1: s.fwe1_rate,
                fwe1_se: s.fwe1_se,
                fwe2: s.fwe2_rate,
                fwe2_se: s.fwe2_se,
                fwe1_bound,
                fwe2_bound,
                warnings,
            }
        })
        .collect())
}

/// Write the study CSV: one row per procedure, sweep point and `k`.
pub fn write_csv<W: Write>(stats: &[AggregateStats], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in stats {
        let sweep = s.sweep_value.map(|v| v.to_string()).unwrap_or_default();
        for (k, (mean, se)) in s.mean_tk_min_tstop.iter().zip(&s.se_tk).enumerate() {
            w.write_record([
                s.procedure.clone(),
                sweep.clone(),
                (k + 1).to_string(),
                mean.to_string(),
                se.to_string(),
                s.fwe1_rate.to_string(),
                s.fwe2_rate.to_string(),
                s.trials_used.to_string(),
                s.mean_tstop.to_string(),
                s.se_tstop.to_string(),
            ])?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llr::run_local_sprt;
    use crate::procedures::stream_rng;
    use crate::stream_models::Hypothesis;

    fn small_config() -> ExperimentConfig {
        let models = [1.0, 0.8, 0.5]
            .iter()
            .map(|d| StreamModel::gaussian(*d).unwrap())
            .collect();
        let mut c = ExperimentConfig::new(
            models,
            GroundTruth::new([1], 3).unwrap(),
            ThresholdSpec::Explicit {
                a: 4.0,
                b: 4.0,
                b_prime: None,
            },
        );
        c.procedures = vec![
            ProcedureSpec::proposed(),
            ProcedureSpec::FollowTheLeader,
            ProcedureSpec::Oracle,
        ];
        c.trials = 500;
        c.base_seed = 17;
        c
    }

    #[test]
    fn mean_se_is_exact_on_small_inputs() {
        // values 1, 2, 3: mean 2, sd 1
        let (m, se) = mean_se(6, 14, 3);
        assert_eq!(m, 2.0);
        assert!((se - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!(mean_se(5, 25, 1).1.is_nan());
    }

    #[test]
    fn seeds_differ_along_every_axis() {
        let s = derive_seed(1, 0, 0, 0);
        assert_ne!(s, derive_seed(2, 0, 0, 0));
        assert_ne!(s, derive_seed(1, 1, 0, 0));
        assert_ne!(s, derive_seed(1, 0, 1, 0));
        assert_ne!(s, derive_seed(1, 0, 0, 1));
        assert_ne!(derive_seed(1, 1, 0, 0), derive_seed(1, 0, 1, 0));
    }

    #[test]
    fn single_trial_is_deterministic() {
        let mut c = small_config();
        c.trials = 1;
        // SEs are NaN for a single trial, so compare the serialised report.
        let csv = || {
            let mut buf = Vec::new();
            write_csv(&run_experiment(&c, 1).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(csv(), csv());
    }

    #[test]
    fn parallel_equals_serial() {
        let c = small_config();
        let serial = run_experiment(&c, 1).unwrap();
        for workers in [2, 3, 8] {
            assert_eq!(serial, run_experiment(&c, workers).unwrap());
        }
    }

    #[test]
    fn aggregate_order_statistics_are_monotone() {
        let stats = run_experiment(&small_config(), 4).unwrap();
        for s in &stats {
            assert!(s.mean_tk_min_tstop.windows(2).all(|w| w[0] <= w[1]));
            assert!(*s.mean_tk_min_tstop.last().unwrap() <= s.mean_tstop);
        }
    }

    #[test]
    fn single_stream_matches_standalone_sprt() {
        let mut c = ExperimentConfig::new(
            vec![StreamModel::gaussian(0.8).unwrap()],
            GroundTruth::full(1),
            ThresholdSpec::Explicit {
                a: 6.0,
                b: 6.0,
                b_prime: None,
            },
        );
        c.trials = 20_000;
        c.base_seed = 5;
        let stats = &run_experiment(&c, 4).unwrap()[0];

        // Independent plain SPRT simulation with unrelated seeds.
        let t = Thresholds::new(6.0, 6.0, 0.0).unwrap();
        let runs = 20_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..runs {
            let mut rng = stream_rng(splitmix64(1_000_000 + i), 0);
            let n = run_local_sprt(&c.models[0], Hypothesis::Signal, &t, &mut rng)
                .unwrap()
                .samples as f64;
            s += n;
            s2 += n * n;
        }
        let mean = s / runs as f64;
        let se = ((s2 / runs as f64 - mean * mean) / runs as f64).sqrt();
        let combined = (se * se + stats.se_tstop * stats.se_tstop).sqrt();
        assert!(
            (stats.mean_tstop - mean).abs() < 2.0 * combined,
            "{} vs {mean}",
            stats.mean_tstop
        );
    }

    #[test]
    fn error_rates_are_exactly_zero_when_impossible() {
        let mut c = small_config();
        c.truth = GroundTruth::empty();
        for e in estimate_error_rates(&c, 2).unwrap() {
            assert_eq!(e.fwe2, 0.0);
        }
        c.truth = GroundTruth::full(3);
        for e in estimate_error_rates(&c, 2).unwrap() {
            assert_eq!(e.fwe1, 0.0);
        }
    }

    #[test]
    fn insufficient_trials_warning() {
        let mut c = small_config();
        c.trials = 50;
        let est = estimate_error_rates(&c, 1).unwrap();
        assert!(est[0].warnings.iter().any(|w| matches!(
            w,
            RateWarning::InsufficientTrials {
                kind: ErrorKind::TypeI,
                ..
            }
        )));
    }

    #[test]
    fn sweep_points_follow_the_axis() {
        let mut c = small_config();
        c.sweep = Some(Sweep::Threshold(vec![5.0, 10.0]));
        let pts = c.sweep_points().unwrap();
        assert_eq!(pts[1].1.a(), 10.0);
        assert!((pts[1].1.b_prime() - 10f64.ln()).abs() < 1e-15);
        c.sweep = Some(Sweep::BPrime(vec![0.0, 2.0]));
        let pts = c.sweep_points().unwrap();
        assert_eq!(pts[1].1.b_prime(), 2.0);
        assert_eq!(pts[1].1.a(), 4.0);
        c.sweep = Some(Sweep::BPrime(vec![5.0]));
        assert!(c.validate().is_err());
    }

    #[test]
    fn horizon_failure_is_located() {
        let mut c = small_config();
        c.horizon = 2;
        c.thresholds = ThresholdSpec::Explicit {
            a: 1000.0,
            b: 1000.0,
            b_prime: Some(0.0),
        };
        match run_experiment(&c, 3) {
            Err(Error::TrialFailed {
                procedure,
                trial,
                source,
                ..
            }) => {
                assert_eq!(procedure, "proposed");
                assert_eq!(trial, 0);
                assert!(matches!(*source, Error::HorizonExceeded { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_procedures_are_rejected() {
        let mut c = small_config();
        c.procedures = vec![ProcedureSpec::Oracle, ProcedureSpec::Oracle];
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn csv_layout() {
        let mut c = small_config();
        c.trials = 10;
        let stats = run_experiment(&c, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&stats, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.count(), 3 * 3);
        assert!(text.contains("\nfollow_the_leader,,1,"));
    }
}
