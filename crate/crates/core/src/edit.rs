//! Timbre editing by condition swap at a chosen sampling step.
//!
//! Pass 1 generates under the source condition while a latent-space
//! classifier labels the per-step clean estimate. A selection rule picks
//! the swap step from that prediction trace; pass 2 reruns the identical
//! trajectory from the same seed with the condition swapped from the chosen
//! step onward. The canonical rule takes the latest step (smallest index) at
//! which the prediction changed; an online variant stops at the first
//! change that stays stable for a window of steps.

use rand::Rng;

use crate::classify::Prediction;
use crate::corpus::NUM_CLASSES;
use crate::diffusion::{
    sample, Condition, ConditionPlan, DenoiserNet, NoiseSchedule, SampleInit, Trajectory,
    SAMPLE_STEPS,
};
use crate::error::Error;
use crate::latent::Latent;
use crate::rng;
use crate::Result;

/// Probing classifier wired into the sampler: sees each clean-latent
/// estimate, cannot fail, cannot alter the trajectory.
pub type ProbeFn<'a> = dyn Fn(&Latent) -> Prediction + 'a;

/// Swap-point selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Latest prediction change over the full probe trace.
    LastChange,
    /// First prediction change that stays stable for `window` steps.
    Online { window: usize },
    /// Uniform over the non-degenerate interior steps.
    Random,
    /// Fixed midpoint of the run.
    Midpoint,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::LastChange => "last_change",
            Strategy::Online { .. } => "online",
            Strategy::Random => "random",
            Strategy::Midpoint => "midpoint",
        }
    }

    /// Parse a strategy name; `online` takes its window from the caller.
    pub fn parse(name: &str, online_window: usize) -> Result<Strategy> {
        match name {
            "last_change" => Ok(Strategy::LastChange),
            "online" => Ok(Strategy::Online { window: online_window }),
            "random" => Ok(Strategy::Random),
            "midpoint" => Ok(Strategy::Midpoint),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

/// What to do when the trace never changes prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackPolicy {
    Error,
    Midpoint,
}

impl FallbackPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            FallbackPolicy::Error => "error",
            FallbackPolicy::Midpoint => "midpoint",
        }
    }

    pub fn parse(name: &str) -> Result<FallbackPolicy> {
        match name {
            "error" => Ok(FallbackPolicy::Error),
            "midpoint" => Ok(FallbackPolicy::Midpoint),
            other => Err(Error::Config(format!("unknown fallback policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapStatus {
    Selected,
    NoChangeFallback,
    NoChangeError,
}

impl SwapStatus {
    pub fn name(&self) -> &'static str {
        match self {
            SwapStatus::Selected => "selected",
            SwapStatus::NoChangeFallback => "no_change_fallback",
            SwapStatus::NoChangeError => "no_change_error",
        }
    }
}

/// One edit job.
#[derive(Debug, Clone)]
pub struct EditRequest {
    pub seed: u64,
    pub source: usize,
    pub target: usize,
    pub guidance: f32,
    pub strategy: Strategy,
    pub fallback: FallbackPolicy,
    /// Steps with confidence below this are excluded from the change scan
    /// (0.0 disables the filter).
    pub min_confidence: f32,
}

impl EditRequest {
    pub fn validate(&self) -> Result<()> {
        if self.source == self.target {
            return Err(Error::InvalidInput(
                "source and target instruments must differ".into(),
            ));
        }
        if self.source >= NUM_CLASSES || self.target >= NUM_CLASSES {
            return Err(Error::InvalidInput("instrument id out of range".into()));
        }
        if self.guidance < 0.0 {
            return Err(Error::InvalidInput("guidance scale must be nonnegative".into()));
        }
        Ok(())
    }
}

/// The chosen swap point plus the evidence behind it.
#[derive(Debug, Clone)]
pub struct SwapDecision {
    pub t_star: Option<usize>,
    /// Predictions ordered t = 49..0.
    pub trace: Vec<Prediction>,
    pub status: SwapStatus,
    pub strategy: Strategy,
}

/// Edited output plus everything needed to reproduce and inspect it.
#[derive(Debug, Clone)]
pub struct EditResult {
    pub edited: Latent,
    pub source_output: Latent,
    pub decision: SwapDecision,
    pub source_trajectory: Trajectory,
    pub edited_trajectory: Trajectory,
}

/// Pass 1: full sampling run under the source condition with the classifier
/// probing every step.
pub fn probe_trajectory(
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    probe: &ProbeFn,
    seed: u64,
    source: usize,
    guidance: f32,
) -> Result<Trajectory> {
    let mut hook = |x0_est: &Latent, _idx: usize| probe(x0_est);
    sample(
        net,
        schedule,
        SampleInit::Seed(seed),
        ConditionPlan::Constant(Condition::Instrument(source)),
        guidance,
        Some(&mut hook),
    )
}

/// Latest change in a class-id trace ordered t = high..0: the smallest t
/// where the prediction differs from the one before it. `None` for a
/// constant trace.
pub fn select_timestep_last_change(class_ids: &[usize]) -> Option<usize> {
    let len = class_ids.len();
    let mut t_star = None;
    for i in 1..len {
        if class_ids[i] != class_ids[i - 1] {
            t_star = Some(len - 1 - i);
        }
    }
    t_star
}

/// The last-change rule over a full prediction trace, optionally ignoring
/// low-confidence steps. Change positions are reported as the timestep of
/// the later (lower-t) member of a differing pair.
pub fn last_change_with_confidence(trace: &[Prediction], min_confidence: f32) -> Option<usize> {
    let len = trace.len();
    let kept: Vec<(usize, usize)> = trace
        .iter()
        .enumerate()
        .filter(|(_, p)| p.confidence >= min_confidence)
        .map(|(i, p)| (len - 1 - i, p.class_id))
        .collect();
    let mut t_star = None;
    for w in kept.windows(2) {
        if w[1].1 != w[0].1 {
            t_star = Some(w[1].0);
        }
    }
    t_star
}

/// Online rule: scanning t = high..0, return the step of the most recent
/// change once the prediction has stayed constant for `window` further
/// steps; reaching the end of the stream also confirms. `None` if no change
/// is ever observed.
pub fn select_timestep_online(class_ids: &[usize], window: usize) -> Option<usize> {
    assert!(window >= 1, "stability window must be at least 1");
    let len = class_ids.len();
    let mut candidate = None;
    let mut stable = 0usize;
    for i in 1..len {
        if class_ids[i] != class_ids[i - 1] {
            candidate = Some(len - 1 - i);
            stable = 0;
        } else if candidate.is_some() {
            stable += 1;
            if stable >= window {
                return candidate;
            }
        }
    }
    candidate
}

/// Online rule over a prediction trace with the confidence filter.
pub fn online_with_confidence(
    trace: &[Prediction],
    window: usize,
    min_confidence: f32,
) -> Option<usize> {
    let len = trace.len();
    let kept: Vec<(usize, usize)> = trace
        .iter()
        .enumerate()
        .filter(|(_, p)| p.confidence >= min_confidence)
        .map(|(i, p)| (len - 1 - i, p.class_id))
        .collect();
    let mut candidate = None;
    let mut stable = 0usize;
    for w in kept.windows(2) {
        if w[1].1 != w[0].1 {
            candidate = Some(w[1].0);
            stable = 0;
        } else if candidate.is_some() {
            stable += 1;
            if stable >= window {
                return candidate;
            }
        }
    }
    candidate
}

/// Uniform draw over the interior steps; both endpoints are degenerate
/// (no-op swap / full regeneration) and excluded.
pub fn select_timestep_random<R: Rng>(rng: &mut R) -> usize {
    rng.gen_range(1..=SAMPLE_STEPS - 2)
}

pub fn select_timestep_midpoint() -> usize {
    SAMPLE_STEPS / 2
}

/// Regenerate with the condition swapped at a fixed step. Used by `edit`
/// once the strategy has resolved, and directly by timestep sweeps.
pub fn regenerate_with_swap(
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    seed: u64,
    source: usize,
    target: usize,
    t_star: usize,
    guidance: f32,
) -> Result<Trajectory> {
    sample(
        net,
        schedule,
        SampleInit::Seed(seed),
        ConditionPlan::Swap {
            source: Condition::Instrument(source),
            target: Condition::Instrument(target),
            swap_index: t_star,
        },
        guidance,
        None,
    )
}

/// Full two-pass edit.
pub fn edit(
    req: &EditRequest,
    net: &DenoiserNet,
    schedule: &NoiseSchedule,
    probe: &ProbeFn,
) -> Result<EditResult> {
    req.validate()?;
    let source_trajectory =
        probe_trajectory(net, schedule, probe, req.seed, req.source, req.guidance)?;
    let trace: Vec<Prediction> = source_trajectory
        .steps
        .iter()
        .map(|s| s.prediction.clone().expect("probe ran at every step"))
        .collect();

    let selected = match req.strategy {
        Strategy::LastChange => last_change_with_confidence(&trace, req.min_confidence),
        Strategy::Online { window } => {
            online_with_confidence(&trace, window, req.min_confidence)
        }
        Strategy::Random => {
            let mut r = rng::stream(req.seed, "random_swap_step");
            Some(select_timestep_random(&mut r))
        }
        Strategy::Midpoint => Some(select_timestep_midpoint()),
    };

    let (t_star, status) = match selected {
        Some(t) => (t, SwapStatus::Selected),
        None => match req.fallback {
            FallbackPolicy::Error => {
                return Err(Error::NoPredictionChange {
                    trace: trace.iter().map(|p| p.class_id).collect(),
                });
            }
            FallbackPolicy::Midpoint => (select_timestep_midpoint(), SwapStatus::NoChangeFallback),
        },
    };

    let edited_trajectory = regenerate_with_swap(
        net,
        schedule,
        req.seed,
        req.source,
        req.target,
        t_star,
        req.guidance,
    )?;

    Ok(EditResult {
        edited: edited_trajectory.output().clone(),
        source_output: source_trajectory.output().clone(),
        decision: SwapDecision { t_star: Some(t_star), trace, status, strategy: req.strategy },
        source_trajectory,
        edited_trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{Condition, ConditionPlan, SampleInit};
    use crate::latent::LATENT_DIM;
    use crate::nn::Tensor;

    /// Brute-force reference: collect every t where the prediction at t
    /// differs from the one at t+1, then take the minimum.
    fn oracle_last_change(class_ids: &[usize]) -> Option<usize> {
        let len = class_ids.len();
        let pred_at = |t: usize| class_ids[len - 1 - t];
        (0..len - 1).filter(|&t| pred_at(t) != pred_at(t + 1)).min()
    }

    fn preds(ids: &[usize]) -> Vec<Prediction> {
        ids.iter()
            .map(|&c| Prediction { class_id: c, confidence: 1.0, probs: vec![0.0; NUM_CLASSES] })
            .collect()
    }

    #[test]
    fn last_change_matches_worked_examples() {
        // t = 5..0: A A B B B B -> single change at t = 3
        assert_eq!(select_timestep_last_change(&[0, 0, 1, 1, 1, 1]), Some(3));
        // t = 5..0: A B A B A A -> changes at t = 4,3,2,1 -> t* = 1
        assert_eq!(select_timestep_last_change(&[0, 1, 0, 1, 0, 0]), Some(1));
        assert_eq!(select_timestep_last_change(&[2, 2, 2, 2, 2, 2]), None);
    }

    #[test]
    fn last_change_agrees_with_brute_force_on_random_traces() {
        let mut r = rng::stream(99, "trace_oracle");
        for case in 0..1000 {
            let len = 50;
            let classes = r.gen_range(2..=NUM_CLASSES);
            // mostly-constant traces with occasional flips, plus some fully
            // constant ones
            let mut ids = Vec::with_capacity(len);
            let mut cur = r.gen_range(0..classes);
            let flip_p: f64 = if case % 10 == 0 { 0.0 } else { r.gen_range(0.02..0.3) };
            for _ in 0..len {
                if r.gen_bool(flip_p) {
                    cur = r.gen_range(0..classes);
                }
                ids.push(cur);
            }
            assert_eq!(
                select_timestep_last_change(&ids),
                oracle_last_change(&ids),
                "case {case}: {ids:?}"
            );
        }
    }

    #[test]
    fn confidence_filter_skips_low_confidence_steps() {
        // trace t=4..0: A(0.9) B(0.2) A(0.9) A(0.9) A(0.9); with the filter
        // at 0.5 the lone B is noise and no change survives
        let mut trace = preds(&[0, 1, 0, 0, 0]);
        trace[1].confidence = 0.2;
        assert_eq!(last_change_with_confidence(&trace, 0.0), Some(2));
        assert_eq!(last_change_with_confidence(&trace, 0.5), None);
    }

    #[test]
    fn online_rule_confirms_after_window_or_stream_end() {
        // t = 9..0: A A B B B B B B B B, window 3: change at t = 7,
        // confirmed three steps later
        let ids = [0, 0, 1, 1, 1, 1, 1, 1, 1, 1];
        assert_eq!(select_timestep_online(&ids, 3), Some(7));
        // change at the very last step: end of stream confirms
        let ids = [0, 0, 0, 0, 1];
        assert_eq!(select_timestep_online(&ids, 3), Some(0));
        // constant stream has nothing to confirm
        assert_eq!(select_timestep_online(&[4, 4, 4, 4], 2), None);
    }

    #[test]
    fn online_rule_stops_at_first_stable_change() {
        // t = 9..0: A B B B B A A A A A with window 3: the A->B change at
        // t = 8 is confirmed before the later B->A change is seen
        let ids = [0, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        assert_eq!(select_timestep_online(&ids, 3), Some(8));
        // the offline rule instead reports the latest change
        assert_eq!(select_timestep_last_change(&ids), Some(4));
    }

    #[test]
    fn random_selector_is_reproducible_and_covers_the_interior() {
        let mut r1 = rng::stream(5, "rand_t");
        let mut r2 = rng::stream(5, "rand_t");
        let a: Vec<usize> = (0..20).map(|_| select_timestep_random(&mut r1)).collect();
        let b: Vec<usize> = (0..20).map(|_| select_timestep_random(&mut r2)).collect();
        assert_eq!(a, b);

        let mut counts = [0u32; SAMPLE_STEPS];
        let mut r = rng::stream(8, "rand_t_hist");
        let draws = 10000usize;
        for _ in 0..draws {
            counts[select_timestep_random(&mut r)] += 1;
        }
        assert_eq!(counts[0], 0);
        assert_eq!(counts[SAMPLE_STEPS - 1], 0);
        let k = (SAMPLE_STEPS - 2) as f64;
        let expect = draws as f64 / k;
        let sigma = (draws as f64 * (1.0 / k) * (1.0 - 1.0 / k)).sqrt();
        for (t, &c) in counts.iter().enumerate().take(SAMPLE_STEPS - 1).skip(1) {
            assert!(
                (c as f64 - expect).abs() <= 3.0 * sigma,
                "step {t} drawn {c} times, expected {expect:.1} ± {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn midpoint_is_25_for_a_50_step_run() {
        assert_eq!(select_timestep_midpoint(), 25);
    }

    /// An untrained denoiser with randomized condition embeddings, so
    /// conditions actually steer the trajectory.
    fn test_net(seed: u64) -> DenoiserNet {
        let mut net = DenoiserNet::new(seed);
        let mut r = rng::stream(seed, "test_cond_embed");
        let rows = NUM_CLASSES + 1;
        let data: Vec<f32> = (0..rows * 16).map(|_| r.gen_range(-0.5..0.5)).collect();
        net.params.insert("denoiser.cond_embed", Tensor::new(vec![rows, 16], data).unwrap());
        net
    }

    fn constant_probe(class: usize) -> impl Fn(&Latent) -> Prediction {
        move |_: &Latent| Prediction {
            class_id: class,
            confidence: 1.0,
            probs: vec![1.0 / NUM_CLASSES as f32; NUM_CLASSES],
        }
    }

    fn flippy_probe() -> impl Fn(&Latent) -> Prediction {
        |z: &Latent| Prediction {
            class_id: if z.values[0] > 0.0 { 1 } else { 2 },
            confidence: 0.9,
            probs: vec![1.0 / NUM_CLASSES as f32; NUM_CLASSES],
        }
    }

    fn request(strategy: Strategy, fallback: FallbackPolicy) -> EditRequest {
        EditRequest {
            seed: 404,
            source: 1,
            target: 4,
            guidance: 2.0,
            strategy,
            fallback,
            min_confidence: 0.0,
        }
    }

    #[test]
    fn probe_trace_is_complete_and_final_step_matches_output() {
        let net = test_net(31);
        let schedule = NoiseSchedule::toy_default();
        let probe = flippy_probe();
        let traj = probe_trajectory(&net, &schedule, &probe, 11, 2, 2.0).unwrap();
        assert_eq!(traj.steps.len(), SAMPLE_STEPS);
        assert_eq!(traj.steps[0].step_index, SAMPLE_STEPS - 1);
        assert_eq!(traj.steps.last().unwrap().step_index, 0);
        let last_pred = traj.steps.last().unwrap().prediction.clone().unwrap();
        assert_eq!(last_pred, probe(traj.output()));
        let again = probe_trajectory(&net, &schedule, &probe, 11, 2, 2.0).unwrap();
        assert!(traj.output().bit_equal(again.output()));
    }

    #[test]
    fn constant_trace_with_midpoint_fallback_equals_midpoint_strategy() {
        let net = test_net(17);
        let schedule = NoiseSchedule::toy_default();
        let probe = constant_probe(1);
        let fallback_result = edit(
            &request(Strategy::LastChange, FallbackPolicy::Midpoint),
            &net,
            &schedule,
            &probe,
        )
        .unwrap();
        let midpoint_result =
            edit(&request(Strategy::Midpoint, FallbackPolicy::Midpoint), &net, &schedule, &probe)
                .unwrap();
        assert_eq!(fallback_result.decision.status, SwapStatus::NoChangeFallback);
        assert_eq!(midpoint_result.decision.status, SwapStatus::Selected);
        assert_eq!(fallback_result.decision.t_star, Some(25));
        assert!(fallback_result.edited.bit_equal(&midpoint_result.edited));
        assert!(fallback_result.source_output.bit_equal(&midpoint_result.source_output));
    }

    #[test]
    fn constant_trace_with_error_fallback_carries_the_trace() {
        let net = test_net(23);
        let schedule = NoiseSchedule::toy_default();
        let probe = constant_probe(3);
        match edit(&request(Strategy::LastChange, FallbackPolicy::Error), &net, &schedule, &probe)
        {
            Err(Error::NoPredictionChange { trace }) => {
                assert_eq!(trace.len(), SAMPLE_STEPS);
                assert!(trace.iter().all(|&c| c == 3));
            }
            other => panic!("expected no-change error, got {other:?}"),
        }
    }

    #[test]
    fn pass_two_prefix_states_bit_equal_pass_one() {
        let net = test_net(41);
        let schedule = NoiseSchedule::toy_default();
        let probe = flippy_probe();
        let result =
            edit(&request(Strategy::Midpoint, FallbackPolicy::Midpoint), &net, &schedule, &probe)
                .unwrap();
        let t_star = result.decision.t_star.unwrap();
        for (a, b) in result
            .source_trajectory
            .steps
            .iter()
            .zip(result.edited_trajectory.steps.iter())
        {
            if a.step_index > t_star {
                assert!(a.x_t.bit_equal(&b.x_t), "diverged above t* at {}", a.step_index);
                assert!(a.eps_hat.bit_equal(&b.eps_hat));
                assert!(a.x0_est.bit_equal(&b.x0_est));
            }
        }
    }

    #[test]
    fn swap_at_the_first_step_reproduces_pure_target_generation() {
        let net = test_net(59);
        let schedule = NoiseSchedule::toy_default();
        let swapped =
            regenerate_with_swap(&net, &schedule, 606, 0, 5, SAMPLE_STEPS - 1, 3.0).unwrap();
        let pure = sample(
            &net,
            &schedule,
            SampleInit::Seed(606),
            ConditionPlan::Constant(Condition::Instrument(5)),
            3.0,
            None,
        )
        .unwrap();
        assert!(swapped.output().bit_equal(pure.output()));
    }

    #[test]
    fn editing_degree_shrinks_as_the_swap_moves_later() {
        // with a condition-sensitive net, swapping later (smaller index)
        // leaves less room for divergence
        let net = test_net(73);
        let schedule = NoiseSchedule::toy_default();
        let swap_points = [49usize, 44, 39, 34, 29, 24, 19, 14, 9, 4];
        let mut violations = 0;
        for seed in [1u64, 2, 3] {
            let source = sample(
                &net,
                &schedule,
                SampleInit::Seed(seed),
                ConditionPlan::Constant(Condition::Instrument(0)),
                3.0,
                None,
            )
            .unwrap();
            let mut prev = f32::INFINITY;
            for &t in &swap_points {
                let edited = regenerate_with_swap(&net, &schedule, seed, 0, 3, t, 3.0).unwrap();
                let d = edited.output().l2_distance(source.output());
                if d > prev + 1e-6 {
                    violations += 1;
                }
                prev = d;
            }
        }
        assert!(violations <= 2, "{violations} isotonic violations");
    }

    #[test]
    fn request_validation_rejects_degenerate_pairs() {
        let mut req = request(Strategy::Midpoint, FallbackPolicy::Midpoint);
        req.target = req.source;
        assert!(req.validate().is_err());
        let mut req = request(Strategy::Midpoint, FallbackPolicy::Midpoint);
        req.target = NUM_CLASSES;
        assert!(req.validate().is_err());
    }

    #[test]
    fn strategy_and_fallback_names_roundtrip() {
        for s in [Strategy::LastChange, Strategy::Online { window: 5 }, Strategy::Random, Strategy::Midpoint] {
            assert_eq!(Strategy::parse(s.name(), 5).unwrap(), s);
        }
        assert!(Strategy::parse("bogus", 5).is_err());
        for f in [FallbackPolicy::Error, FallbackPolicy::Midpoint] {
            assert_eq!(FallbackPolicy::parse(f.name()).unwrap(), f);
        }
    }

    #[test]
    fn latent_dim_unchanged() {
        // editing state and classifier probes share this dimension
        assert_eq!(LATENT_DIM, 64);
    }
}

