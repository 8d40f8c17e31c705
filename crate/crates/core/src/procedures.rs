//! Full detection procedures: the two-phase rule with exploration threshold
//! `b'`, pure follow-the-leader, and the oracle that knows the signal set.
//!
//! All three share the same detection and termination rules: a stream is a
//! detected signal once its LLR reaches `a`, declared noise once it reaches
//! `-b`, and never sampled again afterwards. They differ only in which active
//! stream is observed at each time instant.
//!
//! Procedures work on the streams in [`sort_streams`] order (non-increasing
//! signal KL, ties by index) and report everything in the caller's indexing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llr::{LlrState, Status, Thresholds};
use crate::stream_models::{GroundTruth, Hypothesis, StreamModel};

/// Supplies LLR increments for individual streams on demand.
pub trait IncrementSource {
    /// Next increment of `stream` (its next observation turned into an LLR).
    fn draw(&mut self, stream: usize) -> f64;
}

/// Generator for stream `stream` of a trial: ChaCha8 seeded with the trial
/// seed, with the stream index selecting the ChaCha stream.
pub fn stream_rng(trial_seed: u64, stream: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream(stream as u64);
    rng
}

/// Simulated data: stream `i` draws from `g_i` if it is in the truth set and
/// from `f_i` otherwise, each stream with its own generator.
///
/// Per-stream generators make the `n`-th observation of a stream independent
/// of the order in which a procedure visits streams.
pub struct SimulatedStreams<'a> {
    models: &'a [StreamModel],
    hypotheses: Vec<Hypothesis>,
    rngs: Vec<ChaCha8Rng>,
}

impl<'a> SimulatedStreams<'a> {
    pub fn new(models: &'a [StreamModel], truth: &GroundTruth, trial_seed: u64) -> Self {
        Self {
            models,
            hypotheses: (0..models.len()).map(|i| truth.hypothesis(i)).collect(),
            rngs: (0..models.len()).map(|i| stream_rng(trial_seed, i)).collect(),
        }
    }
}

impl IncrementSource for SimulatedStreams<'_> {
    fn draw(&mut self, stream: usize) -> f64 {
        self.models[stream].sample_increment(self.hypotheses[stream], &mut self.rngs[stream])
    }
}

/// Sampling rule after the exploration phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase2Rule {
    /// Active stream with the largest LLR.
    #[default]
    FollowTheLeader,
    /// Active stream with the largest absolute LLR.
    FollowTheAbsoluteLeader,
    /// Active stream with the smallest index.
    InOrder,
}

/// Which procedure to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcedureSpec {
    /// Two-phase rule. `b_prime: None` uses the `b'` carried by the thresholds.
    Proposed {
        #[serde(default)]
        b_prime: Option<f64>,
        #[serde(default)]
        phase2: Phase2Rule,
    },
    FollowTheLeader,
    Oracle,
}

impl ProcedureSpec {
    pub fn proposed() -> Self {
        Self::Proposed {
            b_prime: None,
            phase2: Phase2Rule::FollowTheLeader,
        }
    }

    /// Name used in reports.
    pub fn label(&self) -> String {
        match self {
            Self::Proposed { b_prime, phase2 } => {
                let mut s = String::from("proposed");
                match phase2 {
                    Phase2Rule::FollowTheLeader => {}
                    Phase2Rule::FollowTheAbsoluteLeader => s.push_str("_absolute_leader"),
                    Phase2Rule::InOrder => s.push_str("_in_order"),
                }
                if let Some(bp) = b_prime {
                    s.push_str(&format!("_bp{bp}"));
                }
                s
            }
            Self::FollowTheLeader => "follow_the_leader".into(),
            Self::Oracle => "oracle".into(),
        }
    }
}

/// Outcome of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Global times of the detection events, strictly increasing.
    pub detection_times: Vec<u64>,
    /// Total number of observations at termination.
    pub t_stop: u64,
    /// Streams declared signals, ascending.
    pub detected_set: Vec<usize>,
    /// Streams in the order they were detected.
    pub detection_order: Vec<usize>,
    /// Observations taken from each stream.
    pub per_stream_samples: Vec<u64>,
    /// A noise stream was declared a signal.
    pub false_alarm: bool,
    /// A signal stream was declared noise.
    pub missed_detection: bool,
    /// End of the exploration phase (two-phase rule only).
    pub phase1_end: Option<u64>,
}

impl TrialResult {
    /// `T_k ∧ T_stop` for 1-based `k`; `t_stop` when fewer than `k` detections occurred.
    pub fn tk_min_tstop(&self, k: usize) -> u64 {
        assert!(k >= 1, "k is 1-based");
        self.detection_times
            .get(k - 1)
            .copied()
            .unwrap_or(self.t_stop)
            .min(self.t_stop)
    }

    /// Re-check the structural invariants of a result.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let total: u64 = self.per_stream_samples.iter().sum();
        if total != self.t_stop {
            return Err(format!("per-stream samples sum to {total}, t_stop is {}", self.t_stop));
        }
        if self.detection_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!(
                "detection times not strictly increasing: {:?}",
                self.detection_times
            ));
        }
        if self.detection_times.last().is_some_and(|t| *t > self.t_stop) {
            return Err("detection after termination".into());
        }
        if self.detected_set.len() != self.detection_times.len()
            || self.detection_order.len() != self.detected_set.len()
        {
            return Err("detected set and detection times disagree in length".into());
        }
        if let Some(end) = self.phase1_end {
            if end > self.t_stop {
                return Err("exploration phase ends after termination".into());
            }
        }
        Ok(())
    }
}

/// Stable ordering of streams by non-increasing signal KL, ties by index.
pub fn sort_streams(models: &[StreamModel]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&i, &j| models[j].signal_kl().total_cmp(&models[i].signal_kl()));
    order
}

/// Bookkeeping shared by all procedures: LLRs, the global clock and the
/// detection record.
struct Tracker<'t> {
    thresholds: &'t Thresholds,
    states: Vec<LlrState>,
    clock: u64,
    detection_times: Vec<u64>,
    detection_order: Vec<usize>,
    active: usize,
}

impl<'t> Tracker<'t> {
    fn new(k: usize, thresholds: &'t Thresholds) -> Self {
        Self {
            thresholds,
            states: vec![LlrState::default(); k],
            clock: 0,
            detection_times: Vec::new(),
            detection_order: Vec::new(),
            active: k,
        }
    }

    fn sample<S: IncrementSource + ?Sized>(&mut self, stream: usize, source: &mut S) -> Result<Status> {
        if !self.states[stream].is_active() {
            return Err(Error::SampledInactiveStream { stream });
        }
        let increment = source.draw(stream);
        self.clock += 1;
        let status = self.states[stream].apply(increment, self.thresholds, stream)?;
        match status {
            Status::Active => {}
            Status::DetectedSignal => {
                self.detection_times.push(self.clock);
                self.detection_order.push(stream);
                self.active -= 1;
            }
            Status::DeclaredNoise => self.active -= 1,
        }
        Ok(status)
    }

    fn value(&self, stream: usize) -> f64 {
        self.states[stream].value
    }

    fn is_active(&self, stream: usize) -> bool {
        self.states[stream].is_active()
    }

    fn any_active(&self) -> bool {
        self.active > 0
    }

    /// First active stream in `order` maximising `score`.
    fn pick_max(&self, order: &[usize], score: impl Fn(f64) -> f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &i in order {
            if !self.is_active(i) {
                continue;
            }
            let s = score(self.value(i));
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| i)
    }

    fn finish(self, truth: &GroundTruth, phase1_end: Option<u64>) -> TrialResult {
        debug_assert!(!self.any_active());
        let per_stream_samples: Vec<u64> = self.states.iter().map(|s| s.samples).collect();
        let mut detected_set = self.detection_order.clone();
        detected_set.sort_unstable();
        let false_alarm = detected_set.iter().any(|i| !truth.is_signal(*i));
        let missed_detection = truth.signals().iter().any(|i| detected_set.binary_search(i).is_err());
        let result = TrialResult {
            detection_times: self.detection_times,
            t_stop: self.clock,
            detected_set,
            detection_order: self.detection_order,
            per_stream_samples,
            false_alarm,
            missed_detection,
            phase1_end,
        };
        debug_assert_eq!(result.check_invariants(), Ok(()));
        result
    }
}

fn check_inputs(models: &[StreamModel], truth: &GroundTruth) -> Result<()> {
    if models.is_empty() {
        return Err(Error::InvalidConfig("at least one stream is required".into()));
    }
    if let Some(bad) = truth.signals().iter().find(|i| **i >= models.len()) {
        return Err(Error::InvalidConfig(format!(
            "signal index {bad} out of range for {} streams",
            models.len()
        )));
    }
    Ok(())
}

/// Two-phase rule with exploration threshold `thresholds.b_prime()`.
///
/// Phase I visits streams in sorted order, sampling each until its LLR leaves
/// `(-b', a)`; streams left in `(-b, -b']` stay active with their LLR intact.
/// Phase II samples the remaining active streams by `phase2` until all are
/// decided.
pub fn run_proposed<S: IncrementSource + ?Sized>(
    models: &[StreamModel],
    truth: &GroundTruth,
    thresholds: &Thresholds,
    phase2: Phase2Rule,
    source: &mut S,
) -> Result<TrialResult> {
    check_inputs(models, truth)?;
    let order = sort_streams(models);
    let explore = -thresholds.b_prime();
    let mut tracker = Tracker::new(models.len(), thresholds);

    for &i in &order {
        while tracker.sample(i, source)? == Status::Active && tracker.value(i) > explore {}
    }
    let phase1_end = tracker.clock;

    while tracker.any_active() {
        let next = match phase2 {
            Phase2Rule::FollowTheLeader => tracker.pick_max(&order, |v| v),
            Phase2Rule::FollowTheAbsoluteLeader => tracker.pick_max(&order, f64::abs),
            Phase2Rule::InOrder => order.iter().copied().find(|&i| tracker.is_active(i)),
        }
        .expect("an active stream exists");
        tracker.sample(next, source)?;
    }
    Ok(tracker.finish(truth, Some(phase1_end)))
}

/// Always sample the active stream with the largest LLR.
pub fn run_follow_the_leader<S: IncrementSource + ?Sized>(
    models: &[StreamModel],
    truth: &GroundTruth,
    thresholds: &Thresholds,
    source: &mut S,
) -> Result<TrialResult> {
    check_inputs(models, truth)?;
    let order = sort_streams(models);
    let mut tracker = Tracker::new(models.len(), thresholds);
    while let Some(next) = tracker.pick_max(&order, |v| v) {
        tracker.sample(next, source)?;
    }
    Ok(tracker.finish(truth, None))
}

/// Full SPRTs one stream at a time: true signals by non-increasing signal KL,
/// then true noises by index.
pub fn run_oracle<S: IncrementSource + ?Sized>(
    models: &[StreamModel],
    truth: &GroundTruth,
    thresholds: &Thresholds,
    source: &mut S,
) -> Result<TrialResult> {
    check_inputs(models, truth)?;
    let order = sort_streams(models);
    let signals = order.iter().copied().filter(|i| truth.is_signal(*i));
    let noises = (0..models.len()).filter(|i| !truth.is_signal(*i));
    let mut tracker = Tracker::new(models.len(), thresholds);
    for i in signals.chain(noises) {
        while tracker.sample(i, source)? == Status::Active {}
    }
    Ok(tracker.finish(truth, None))
}

/// Dispatch on a [`ProcedureSpec`].
pub fn run_procedure<S: IncrementSource + ?Sized>(
    spec: &ProcedureSpec,
    models: &[StreamModel],
    truth: &GroundTruth,
    thresholds: &Thresholds,
    source: &mut S,
) -> Result<TrialResult> {
    match *spec {
        ProcedureSpec::Proposed { b_prime, phase2 } => {
            let t = match b_prime {
                Some(bp) => thresholds.with_b_prime(bp)?,
                None => *thresholds,
            };
            run_proposed(models, truth, &t, phase2, source)
        }
        ProcedureSpec::FollowTheLeader => run_follow_the_leader(models, truth, thresholds, source),
        ProcedureSpec::Oracle => run_oracle(models, truth, thresholds, source),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Fixed per-stream increment scripts.
    struct Scripted(Vec<VecDeque<f64>>);

    impl Scripted {
        fn new(scripts: &[&[f64]]) -> Self {
            Self(scripts.iter().map(|s| s.iter().copied().collect()).collect())
        }
    }

    impl IncrementSource for Scripted {
        fn draw(&mut self, stream: usize) -> f64 {
            self.0[stream].pop_front().expect("script exhausted")
        }
    }

    fn gaussians(deltas: &[f64]) -> Vec<StreamModel> {
        deltas.iter().map(|d| StreamModel::gaussian(*d).unwrap()).collect()
    }

    #[test]
    fn sort_is_stable_by_signal_kl() {
        let models = vec![
            StreamModel::gaussian(1.0).unwrap(),
            StreamModel::gaussian(1.5).unwrap(),
            StreamModel::gaussian(1.0).unwrap(),
        ];
        assert_eq!(sort_streams(&models), vec![1, 0, 2]);
        let sorted = gaussians(&[2.0, 1.0, 0.5]);
        assert_eq!(sort_streams(&sorted), vec![0, 1, 2]);
        let reference = gaussians(&[1.5, 1.5, 1.25, 1.25, 1.0, 1.0, 0.75, 0.75, 0.5, 0.5]);
        assert_eq!(sort_streams(&reference), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn scripted_two_phase_run() {
        // a = b = 3, b' = 1. Stream 0 drops below -1 then is finished in phase II.
        let models = gaussians(&[1.0, 1.0]);
        let t = Thresholds::new(3.0, 3.0, 1.0).unwrap();
        let truth = GroundTruth::new([1], 2).unwrap();
        let mut src = Scripted::new(&[&[-0.6, -0.6, -2.0], &[0.5, 1.0, 2.0]]);
        let r = run_proposed(&models, &truth, &t, Phase2Rule::FollowTheLeader, &mut src).unwrap();
        assert_eq!(r.phase1_end, Some(5));
        assert_eq!(r.detection_times, vec![5]);
        assert_eq!(r.detected_set, vec![1]);
        assert_eq!(r.per_stream_samples, vec![3, 3]);
        assert_eq!(r.t_stop, 6);
        assert!(!r.false_alarm && !r.missed_detection);
    }

    #[test]
    fn phase2_rules_choose_differently() {
        // After phase I (b' = 0.5): LLRs are 0 -> -0.6, 1 -> -1.5, 2 -> -0.7.
        let models = gaussians(&[1.0, 1.0, 1.0]);
        let t = Thresholds::new(2.0, 2.0, 0.5).unwrap();
        let truth = GroundTruth::empty();
        let scripts: [&[f64]; 3] = [&[-0.6, -5.0], &[-1.5, -5.0], &[-0.7, -5.0]];
        struct Recording<'s>(Scripted, &'s mut Vec<usize>);
        impl IncrementSource for Recording<'_> {
            fn draw(&mut self, stream: usize) -> f64 {
                self.1.push(stream);
                self.0.draw(stream)
            }
        }
        let visits = |rule| {
            let mut log = Vec::new();
            let mut src = Recording(Scripted::new(&scripts), &mut log);
            run_proposed(&models, &truth, &t, rule, &mut src).unwrap();
            log
        };
        assert_eq!(visits(Phase2Rule::FollowTheLeader), vec![0, 1, 2, 0, 2, 1]);
        assert_eq!(visits(Phase2Rule::FollowTheAbsoluteLeader), vec![0, 1, 2, 1, 2, 0]);
        assert_eq!(visits(Phase2Rule::InOrder), vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn argmax_ties_go_to_smallest_index() {
        let models = gaussians(&[1.0, 1.0, 1.0]);
        let t = Thresholds::new(1.0, 1.0, 0.0).unwrap();
        let truth = GroundTruth::full(3);
        let mut src = Scripted::new(&[&[1.0], &[1.0], &[1.0]]);
        let r = run_follow_the_leader(&models, &truth, &t, &mut src).unwrap();
        assert_eq!(r.detection_order, vec![0, 1, 2]);
        assert_eq!(r.detection_times, vec![1, 2, 3]);
    }

    #[test]
    fn oracle_visits_signals_by_difficulty_then_noises() {
        let models = gaussians(&[0.5, 2.0, 1.0]);
        let t = Thresholds::new(1.0, 1.0, 0.0).unwrap();
        let truth = GroundTruth::new([0, 1], 3).unwrap();
        let mut src = Scripted::new(&[&[0.4, 0.7], &[1.5], &[-2.0]]);
        let r = run_oracle(&models, &truth, &t, &mut src).unwrap();
        assert_eq!(r.detection_order, vec![1, 0]);
        assert_eq!(r.detection_times, vec![1, 3]);
        assert_eq!(r.t_stop, 4);
    }

    #[test]
    fn out_of_range_truth_is_rejected() {
        let models = gaussians(&[1.0]);
        let truth = GroundTruth::new([0], 1).unwrap();
        let t = Thresholds::symmetric(2.0).unwrap();
        let mut src = SimulatedStreams::new(&models, &truth, 1);
        assert!(run_oracle(&models, &GroundTruth::full(2), &t, &mut src).is_err());
    }

    #[test]
    fn inactive_stream_sampling_is_an_error() {
        let t = Thresholds::new(1.0, 1.0, 0.0).unwrap();
        let mut tracker = Tracker::new(1, &t);
        let mut src = Scripted::new(&[&[2.0, 0.0]]);
        tracker.sample(0, &mut src).unwrap();
        assert_eq!(
            tracker.sample(0, &mut src),
            Err(Error::SampledInactiveStream { stream: 0 })
        );
    }

    #[test]
    fn proposed_b_prime_above_b_is_rejected() {
        let models = gaussians(&[1.0]);
        let truth = GroundTruth::empty();
        let t = Thresholds::symmetric(3.0).unwrap();
        let spec = ProcedureSpec::Proposed {
            b_prime: Some(4.0),
            phase2: Phase2Rule::FollowTheLeader,
        };
        let mut src = SimulatedStreams::new(&models, &truth, 0);
        assert!(matches!(
            run_procedure(&spec, &models, &truth, &t, &mut src),
            Err(Error::InvalidThresholds(_))
        ));
    }

    #[test]
    fn labels() {
        assert_eq!(ProcedureSpec::proposed().label(), "proposed");
        assert_eq!(ProcedureSpec::FollowTheLeader.label(), "follow_the_leader");
        let s = ProcedureSpec::Proposed {
            b_prime: Some(2.5),
            phase2: Phase2Rule::InOrder,
        };
        assert_eq!(s.label(), "proposed_in_order_bp2.5");
    }
}
