//! Per-stream LLR accumulation and the two-sided SPRT boundaries.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream_models::{Hypothesis, StreamModel};

/// Default per-stream sample cap. Every procedure here terminates almost
/// surely, so reaching it means a broken model or procedure.
pub const DEFAULT_HORIZON: u64 = 10_000_000;

/// Detection threshold `a`, noise threshold `b`, exploration threshold `b'`.
///
/// `alpha`/`beta` are present only when the thresholds were produced by
/// [`crate::bounds::calibrate_thresholds`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    a: f64,
    b: f64,
    b_prime: f64,
    alpha: Option<f64>,
    beta: Option<f64>,
    horizon: u64,
}

impl Thresholds {
    pub fn new(a: f64, b: f64, b_prime: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidThresholds(format!(
                "a must be positive and finite, got {a}"
            )));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidThresholds(format!(
                "b must be positive and finite, got {b}"
            )));
        }
        if !(0.0..=b).contains(&b_prime) {
            return Err(Error::InvalidThresholds(format!(
                "b' must satisfy 0 <= b' <= b, got b'={b_prime}, b={b}"
            )));
        }
        Ok(Self {
            a,
            b,
            b_prime,
            alpha: None,
            beta: None,
            horizon: DEFAULT_HORIZON,
        })
    }

    /// `a` and `b` with `b'` at its default `ln a`, clamped to `[0, b]`.
    pub fn with_default_b_prime(a: f64, b: f64) -> Result<Self> {
        let bp = if a.is_finite() && a > 0.0 {
            a.ln().clamp(0.0, b.max(0.0))
        } else {
            0.0
        };
        Self::new(a, b, bp)
    }

    /// Symmetric thresholds `a = b` with the default `b'`.
    pub fn symmetric(a: f64) -> Result<Self> {
        Self::with_default_b_prime(a, a)
    }

    pub(crate) fn calibrated(a: f64, b: f64, alpha: f64, beta: f64) -> Result<Self> {
        let mut t = Self::with_default_b_prime(a, b)?;
        t.alpha = Some(alpha);
        t.beta = Some(beta);
        Ok(t)
    }

    /// Same `a`, `b` (and calibration record) with a different `b'`.
    pub fn with_b_prime(self, b_prime: f64) -> Result<Self> {
        let mut t = Self::new(self.a, self.b, b_prime)?;
        t.alpha = self.alpha;
        t.beta = self.beta;
        t.horizon = self.horizon;
        Ok(t)
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon.max(1);
        self
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn b_prime(&self) -> f64 {
        self.b_prime
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }
}

/// Decision state of one stream. Both non-active states are absorbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Active,
    DetectedSignal,
    DeclaredNoise,
}

/// Running LLR of a stream under some sampling rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlrState {
    pub value: f64,
    pub samples: u64,
    pub status: Status,
}

impl Default for LlrState {
    fn default() -> Self {
        Self {
            value: 0.0,
            samples: 0,
            status: Status::Active,
        }
    }
}

impl LlrState {
    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    /// Add one increment and re-evaluate the boundaries.
    ///
    /// The upper boundary is checked first; overshoot stays in `value`.
    /// `stream` only labels errors.
    pub fn apply(&mut self, increment: f64, thresholds: &Thresholds, stream: usize) -> Result<Status> {
        if !self.is_active() {
            return Err(Error::SampledInactiveStream { stream });
        }
        self.value += increment;
        self.samples += 1;
        if self.value >= thresholds.a {
            self.status = Status::DetectedSignal;
        } else if self.value <= -thresholds.b {
            self.status = Status::DeclaredNoise;
        } else if self.samples >= thresholds.horizon {
            return Err(Error::HorizonExceeded {
                stream,
                cap: thresholds.horizon,
            });
        }
        Ok(self.status)
    }
}

/// Value-style wrapper around [`LlrState::apply`].
pub fn apply_increment(state: LlrState, increment: f64, thresholds: &Thresholds) -> Result<LlrState> {
    let mut next = state;
    next.apply(increment, thresholds, 0)?;
    Ok(next)
}

/// Boundary reached by an SPRT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Signal,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SprtOutcome {
    pub samples: u64,
    pub decision: Decision,
}

/// Sample one stream continuously until its LLR leaves `(-b, a)`.
pub fn run_local_sprt<R: Rng + ?Sized>(
    model: &StreamModel,
    hypothesis: Hypothesis,
    thresholds: &Thresholds,
    rng: &mut R,
) -> Result<SprtOutcome> {
    let mut state = LlrState::default();
    loop {
        match state.apply(model.sample_increment(hypothesis, rng), thresholds, 0)? {
            Status::Active => {}
            Status::DetectedSignal => {
                return Ok(SprtOutcome {
                    samples: state.samples,
                    decision: Decision::Signal,
                })
            }
            Status::DeclaredNoise => {
                return Ok(SprtOutcome {
                    samples: state.samples,
                    decision: Decision::Noise,
                })
            }
        }
    }
}
