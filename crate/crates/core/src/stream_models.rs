//! Simple-versus-simple density pairs for a single stream.
//!
//! Every stream tests a null density `f` (noise) against an alternative `g`
//! (signal). Downstream code never sees raw observations: a model turns one
//! draw into the log-likelihood ratio increment `log(g(X)/f(X))` directly.
//!
//! Randomness: Gaussian observations use `rand_distr::StandardNormal`
//! (ziggurat) on top of whatever generator the caller supplies; Bernoulli and
//! table models consume one `f64` uniform per draw. With the ChaCha8 stream
//! generators used by the simulator this makes every increment sequence a pure
//! function of the seed.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a table model.
const MASS_TOLERANCE: f64 = 1e-12;

/// Which density a stream's observations are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Observations follow `g`.
    Signal,
    /// Observations follow `f`.
    Noise,
}

/// Declarative form of a stream model, as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Unit-variance Gaussian, mean 0 (noise) against mean `delta` (signal).
    Gaussian { delta: f64 },
    /// Bernoulli(`p0`) noise against Bernoulli(`p1`) signal.
    Bernoulli { p0: f64, p1: f64 },
    /// Finite support with explicit noise (`f`) and signal (`g`) probabilities.
    Table {
        support: Vec<f64>,
        f: Vec<f64>,
        g: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Gaussian {
        delta: f64,
    },
    Bernoulli {
        p0: f64,
        p1: f64,
        llr_one: f64,
        llr_zero: f64,
    },
    Table {
        support: Vec<f64>,
        f: Vec<f64>,
        g: Vec<f64>,
        llr: Vec<f64>,
        cdf_f: Vec<f64>,
        cdf_g: Vec<f64>,
    },
}

/// A validated stream model with its two KL divergences cached.
///
/// `signal_kl` is `I = E_g[log(g/f)]` and `noise_kl` is `J = E_f[log(f/g)]`;
/// both are strictly positive and finite for every constructed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct StreamModel {
    kind: Kind,
    signal_kl: f64,
    noise_kl: f64,
}

impl StreamModel {
    pub fn gaussian(delta: f64) -> Result<Self> {
        if !delta.is_finite() {
            return Err(Error::InvalidModel(format!(
                "gaussian delta must be finite, got {delta}"
            )));
        }
        if delta <= 0.0 {
            if delta == 0.0 {
                return Err(Error::DegenerateModel("gaussian delta = 0".into()));
            }
            return Err(Error::InvalidModel(format!(
                "gaussian delta must be positive, got {delta}"
            )));
        }
        Self::finish(Kind::Gaussian { delta })
    }

    pub fn bernoulli(p0: f64, p1: f64) -> Result<Self> {
        for (name, p) in [("p0", p0), ("p1", p1)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidModel(format!(
                    "bernoulli {name} must lie in (0,1), got {p}"
                )));
            }
        }
        Self::finish(Kind::Bernoulli {
            p0,
            p1,
            llr_one: (p1 / p0).ln(),
            llr_zero: ((1.0 - p1) / (1.0 - p0)).ln(),
        })
    }

    /// Finite-support model. Every atom needs positive mass under both
    /// densities so that the LLR is finite everywhere.
    pub fn table(support: Vec<f64>, f: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidModel("table support is empty".into()));
        }
        if f.len() != support.len() || g.len() != support.len() {
            return Err(Error::InvalidModel(format!(
                "table lengths differ: support {}, f {}, g {}",
                support.len(),
                f.len(),
                g.len()
            )));
        }
        for (name, probs) in [("f", &f), ("g", &g)] {
            if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                return Err(Error::InvalidModel(format!(
                    "table {name} has a non-positive or non-finite atom ({p}); zero-mass atoms are not allowed"
                )));
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > MASS_TOLERANCE {
                return Err(Error::InvalidModel(format!("table {name} sums to {total}, not 1")));
            }
        }
        let llr = f.iter().zip(&g).map(|(fp, gp)| (gp / fp).ln()).collect();
        Self::finish(Kind::Table {
            cdf_f: cumulative(&f),
            cdf_g: cumulative(&g),
            support,
            f,
            g,
            llr,
        })
    }

    fn finish(kind: Kind) -> Result<Self> {
        let (signal_kl, noise_kl) = divergences(&kind);
        for (name, kl) in [("signal", signal_kl), ("noise", noise_kl)] {
            if !(kl.is_finite() && kl > 0.0) {
                return Err(Error::DegenerateModel(format!("{name} divergence is {kl}")));
            }
        }
        Ok(Self {
            kind,
            signal_kl,
            noise_kl,
        })
    }

    /// `I`, the divergence of `g` against `f`.
    pub fn signal_kl(&self) -> f64 {
        self.signal_kl
    }

    /// `J`, the divergence of `f` against `g`.
    pub fn noise_kl(&self) -> f64 {
        self.noise_kl
    }

    pub fn spec(&self) -> ModelSpec {
        match &self.kind {
            Kind::Gaussian { delta } => ModelSpec::Gaussian { delta: *delta },
            Kind::Bernoulli { p0, p1, .. } => ModelSpec::Bernoulli { p0: *p0, p1: *p1 },
            Kind::Table { support, f, g, .. } => ModelSpec::Table {
                support: support.clone(),
                f: f.clone(),
                g: g.clone(),
            },
        }
    }

    /// LLR of a single given observation value.
    ///
    /// For table models `x` must be one of the support points.
    pub fn llr_of(&self, x: f64) -> Result<f64> {
        match &self.kind {
            Kind::Gaussian { delta } => Ok(delta * x - 0.5 * delta * delta),
            Kind::Bernoulli { llr_one, llr_zero, .. } => match x {
                1.0 => Ok(*llr_one),
                0.0 => Ok(*llr_zero),
                _ => Err(Error::Domain(format!("bernoulli observation must be 0 or 1, got {x}"))),
            },
            Kind::Table { support, llr, .. } => support
                .iter()
                .position(|s| *s == x)
                .map(|j| llr[j])
                .ok_or_else(|| Error::Domain(format!("{x} is not in the table support"))),
        }
    }

    /// Draw one observation under `hypothesis` and return its LLR increment.
    pub fn sample_increment<R: Rng + ?Sized>(&self, hypothesis: Hypothesis, rng: &mut R) -> f64 {
        match &self.kind {
            Kind::Gaussian { delta } => {
                let z: f64 = rng.sample(StandardNormal);
                let x = match hypothesis {
                    Hypothesis::Signal => delta + z,
                    Hypothesis::Noise => z,
                };
                delta * x - 0.5 * delta * delta
            }
            Kind::Bernoulli {
                p0,
                p1,
                llr_one,
                llr_zero,
            } => {
                let p = match hypothesis {
                    Hypothesis::Signal => *p1,
                    Hypothesis::Noise => *p0,
                };
                if rng.random::<f64>() < p {
                    *llr_one
                } else {
                    *llr_zero
                }
            }
            Kind::Table { llr, cdf_f, cdf_g, .. } => {
                let cdf = match hypothesis {
                    Hypothesis::Signal => cdf_g,
                    Hypothesis::Noise => cdf_f,
                };
                let u: f64 = rng.random();
                let j = cdf.partition_point(|c| *c <= u).min(llr.len() - 1);
                llr[j]
            }
        }
    }
}

impl TryFrom<ModelSpec> for StreamModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        match spec {
            ModelSpec::Gaussian { delta } => Self::gaussian(delta),
            ModelSpec::Bernoulli { p0, p1 } => Self::bernoulli(p0, p1),
            ModelSpec::Table { support, f, g } => Self::table(support, f, g),
        }
    }
}

impl From<StreamModel> for ModelSpec {
    fn from(model: StreamModel) -> Self {
        model.spec()
    }
}

/// `(I, J)` for a model: closed forms for Gaussian and Bernoulli, an exact
/// finite sum for tables.
pub fn kl_divergences(model: &StreamModel) -> (f64, f64) {
    (model.signal_kl, model.noise_kl)
}

/// Free-function form of [`StreamModel::sample_increment`].
pub fn sample_llr_increment<R: Rng + ?Sized>(model: &StreamModel, hypothesis: Hypothesis, rng: &mut R) -> f64 {
    model.sample_increment(hypothesis, rng)
}

fn divergences(kind: &Kind) -> (f64, f64) {
    match kind {
        Kind::Gaussian { delta } => {
            let kl = 0.5 * delta * delta;
            (kl, kl)
        }
        Kind::Bernoulli { p0, p1, .. } => (bernoulli_divergence(*p1, *p0), bernoulli_divergence(*p0, *p1)),
        Kind::Table { f, g, llr, .. } => {
            let signal = g.iter().zip(llr).map(|(gp, l)| gp * l).sum();
            let noise = -f.iter().zip(llr).map(|(fp, l)| fp * l).sum::<f64>();
            (signal, noise)
        }
    }
}

/// KL divergence of Bernoulli(p) against Bernoulli(q).
fn bernoulli_divergence(p: f64, q: f64) -> f64 {
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

/// The true signal set `B`, as 0-based stream indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    signals: Vec<usize>,
}

impl GroundTruth {
    /// Build from arbitrary indices; duplicates are collapsed and indices must be `< k`.
    pub fn new(signals: impl IntoIterator<Item = usize>, k: usize) -> Result<Self> {
        let mut signals: Vec<usize> = signals.into_iter().collect();
        signals.sort_unstable();
        signals.dedup();
        if let Some(bad) = signals.iter().find(|i| **i >= k) {
            return Err(Error::InvalidConfig(format!(
                "signal index {bad} out of range for {k} streams"
            )));
        }
        Ok(Self { signals })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn full(k: usize) -> Self {
        Self {
            signals: (0..k).collect(),
        }
    }

    /// Sorted signal indices.
    pub fn signals(&self) -> &[usize] {
        &self.signals
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn is_signal(&self, stream: usize) -> bool {
        self.signals.binary_search(&stream).is_ok()
    }

    pub fn hypothesis(&self, stream: usize) -> Hypothesis {
        if self.is_signal(stream) {
            Hypothesis::Signal
        } else {
            Hypothesis::Noise
        }
    }
}
