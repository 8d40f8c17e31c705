//! Study files, presets and command-line overrides.
//!
//! A study file is JSON with the sections `models`, `truth`, `thresholds`,
//! `procedures` and `study`. Stream indices in `truth` are 1-based.

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use seqdetect_core::{
    ExperimentConfig, GroundTruth, ProcedureSpec, StreamModel, Sweep, ThresholdSpec, DEFAULT_HORIZON,
};

use crate::error::CliError;

/// Mean shifts of the reference configuration.
pub const REFERENCE_DELTAS: [f64; 10] = [1.5, 1.5, 1.25, 1.25, 1.0, 1.0, 0.75, 0.75, 0.5, 0.5];
/// Signal streams of the reference configuration, 1-based.
pub const REFERENCE_SIGNALS: [usize; 5] = [2, 4, 6, 8, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub models: Vec<StreamModel>,
    #[serde(default)]
    pub truth: Vec<usize>,
    pub thresholds: ThresholdsSection,
    #[serde(default = "default_procedures")]
    pub procedures: Vec<ProcedureSpec>,
    #[serde(default)]
    pub study: StudySection,
}

/// Either `a` (and optionally `b`) or `alpha` (and optionally `beta`).
/// A missing `b` equals `a`, a missing `beta` equals `alpha`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_prime: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub name: String,
    pub trials: u64,
    pub base_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    pub common_random_numbers: bool,
    pub horizon: u64,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            trials: 10_000,
            base_seed: 0,
            sweep: None,
            common_random_numbers: false,
            horizon: DEFAULT_HORIZON,
        }
    }
}

fn default_procedures() -> Vec<ProcedureSpec> {
    vec![ProcedureSpec::proposed()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Preset {
    /// Proposed procedure at a = b = 20 over a grid of b'.
    BprimeSweep,
    /// Proposed, follow-the-leader and oracle over a = b in {5, 10, 20}.
    ProcedureComparison,
    /// Proposed and oracle over a = b in {5, 10, 20, 40}.
    OracleRatio,
    /// Proposed procedure at a = b = 20, no sweep.
    Custom,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Self::BprimeSweep => "bprime_sweep",
            Self::ProcedureComparison => "procedure_comparison",
            Self::OracleRatio => "oracle_ratio",
            Self::Custom => "custom",
        }
    }

    pub fn study_file(self) -> StudyFile {
        let (procedures, sweep) = match self {
            Self::BprimeSweep => (
                vec![ProcedureSpec::proposed()],
                Some(Sweep::BPrime(vec![0.0, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0])),
            ),
            Self::ProcedureComparison => (
                vec![
                    ProcedureSpec::proposed(),
                    ProcedureSpec::FollowTheLeader,
                    ProcedureSpec::Oracle,
                ],
                Some(Sweep::Threshold(vec![5.0, 10.0, 20.0])),
            ),
            Self::OracleRatio => (
                vec![ProcedureSpec::proposed(), ProcedureSpec::Oracle],
                Some(Sweep::Threshold(vec![5.0, 10.0, 20.0, 40.0])),
            ),
            Self::Custom => (vec![ProcedureSpec::proposed()], None),
        };
        StudyFile {
            models: REFERENCE_DELTAS
                .iter()
                .map(|d| StreamModel::gaussian(*d).expect("reference deltas are positive"))
                .collect(),
            truth: REFERENCE_SIGNALS.to_vec(),
            thresholds: ThresholdsSection {
                a: Some(20.0),
                ..Default::default()
            },
            procedures,
            study: StudySection {
                name: self.name().into(),
                sweep,
                ..Default::default()
            },
        }
    }
}

/// Command-line values that replace fields of a study file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub b_prime: Option<f64>,
    pub b_prime_grid: Option<Vec<f64>>,
    pub a_grid: Option<Vec<f64>>,
    pub common_random_numbers: bool,
}

impl StudyFile {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study files always serialize")
    }

    /// Apply overrides. Setting `a` or `b` switches to explicit thresholds and
    /// setting `alpha` or `beta` switches to calibrated ones; a partner value
    /// not given on the command line follows the one that was.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if (o.a.is_some() || o.b.is_some()) && (o.alpha.is_some() || o.beta.is_some()) {
            return Err(CliError::Config(
                "--a/--b and --alpha/--beta are mutually exclusive".into(),
            ));
        }
        if o.b_prime_grid.is_some() && o.a_grid.is_some() {
            return Err(CliError::Config(
                "--bprime-grid and --a-grid are mutually exclusive".into(),
            ));
        }
        let t = &mut self.thresholds;
        if o.a.is_some() || o.b.is_some() {
            t.alpha = None;
            t.beta = None;
            if o.a.is_some() {
                t.a = o.a;
                t.b = o.b;
            } else {
                t.b = o.b;
            }
        }
        if o.alpha.is_some() || o.beta.is_some() {
            t.a = None;
            t.b = None;
            if o.alpha.is_some() {
                t.alpha = o.alpha;
                t.beta = o.beta;
            } else {
                t.beta = o.beta;
            }
        }
        if o.b_prime.is_some() {
            t.b_prime = o.b_prime;
        }
        if let Some(v) = o.trials {
            self.study.trials = v;
        }
        if let Some(v) = o.seed {
            self.study.base_seed = v;
        }
        if let Some(g) = &o.b_prime_grid {
            self.study.sweep = Some(Sweep::BPrime(g.clone()));
        }
        if let Some(g) = &o.a_grid {
            self.study.sweep = Some(Sweep::Threshold(g.clone()));
        }
        if o.common_random_numbers {
            self.study.common_random_numbers = true;
        }
        Ok(())
    }

    pub fn truth(&self) -> Result<GroundTruth, CliError> {
        let k = self.models.len();
        if let Some(bad) = self.truth.iter().find(|i| **i == 0 || **i > k) {
            return Err(CliError::Config(format!("truth index {bad} is outside 1..={k}")));
        }
        Ok(GroundTruth::new(self.truth.iter().map(|i| i - 1), k)?)
    }

    pub fn threshold_spec(&self) -> Result<ThresholdSpec, CliError> {
        let t = self.thresholds;
        match (t.a, t.b, t.alpha, t.beta) {
            (Some(a), b, None, None) => Ok(ThresholdSpec::Explicit {
                a,
                b: b.unwrap_or(a),
                b_prime: t.b_prime,
            }),
            (None, None, Some(alpha), beta) => Ok(ThresholdSpec::Calibrated {
                alpha,
                beta: beta.unwrap_or(alpha),
                b_prime: t.b_prime,
            }),
            (None, Some(_), None, None) => Err(CliError::Config("thresholds: b given without a".into())),
            (None, None, None, Some(_)) => Err(CliError::Config("thresholds: beta given without alpha".into())),
            (None, None, None, None) => Err(CliError::Config("thresholds: need a or alpha".into())),
            _ => Err(CliError::Config(
                "thresholds: give either a/b or alpha/beta, not both".into(),
            )),
        }
    }

    /// The validated experiment this file describes.
    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = ExperimentConfig::new(self.models.clone(), self.truth()?, self.threshold_spec()?);
        config.procedures = self.procedures.clone();
        config.trials = self.study.trials;
        config.base_seed = self.study.base_seed;
        config.sweep = self.study.sweep.clone();
        config.common_random_numbers = self.study.common_random_numbers;
        config.horizon = self.study.horizon;
        config.validate()?;
        Ok(config)
    }
}
