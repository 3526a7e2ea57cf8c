//! Uniform random pairwise scheduler on the complete interaction graph.
//!
//! A run repeatedly samples an ordered pair of distinct agents, applies the
//! protocol transition to that pair, and maintains O(1) bookkeeping: the
//! contender count (the convergence test), the largest magnitude seen so far
//! (the backup-dynamics flag), and an always-at-least-one-contender monitor
//! that aborts the run if a transition would wipe out every contender.
//!
//! Time is measured in interaction steps. One unit of *parallel time* is `n`
//! steps; steps are stored as integers and divided by `n` only when reported.
//!
//! A single run is inherently sequential. Independent runs can execute
//! concurrently: a [`Population`] and [`Scheduler`] belong to one run each
//! and are `Send` but never shared mutably.

use std::io::Write;

use thiserror::Error;

use crate::protocol::{
    Baseline, LeaderMinion, Output, Protocol, ProtocolError, ProtocolKind, ProtocolParams,
};
use crate::rng::Scheduler;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    /// The contender-count monitor tripped. Unreachable for the shipped
    /// protocols; exists to catch broken transition rules.
    #[error(
        "invariant violated: interaction ({initiator}, {responder}) would leave zero contenders"
    )]
    ContendersExhausted { initiator: usize, responder: usize },
    #[error("protocol ceiling m = {protocol_m} disagrees with params.m = {params_m}")]
    CeilingMismatch { protocol_m: u32, params_m: u32 },
    #[error("trace write failed: {0}")]
    Trace(#[from] std::io::Error),
}

/// What one step did: the sampled pair, both states before and after, and
/// the contender count after the step. Feeds the optional trace output.
#[derive(Debug, Clone, Copy)]
pub struct StepEvent<S> {
    pub initiator: usize,
    pub responder: usize,
    pub before: (S, S),
    pub after: (S, S),
    pub contenders: usize,
}

/// The multiset of agent states, stored agent-indexed, with cached counters.
#[derive(Debug, Clone)]
pub struct Population<P: Protocol> {
    states: Vec<P::State>,
    contender_count: usize,
    max_magnitude_seen: u32,
    params: ProtocolParams,
}

impl<P: Protocol> Population<P> {
    /// All agents in the protocol's initial state. Rejects populations too
    /// small for the protocol, `m < 1`, and a `params.m` that disagrees with
    /// the protocol's own ceiling.
    pub fn new(protocol: &P, params: ProtocolParams) -> Result<Self, EngineError> {
        if params.m < 1 || params.m > crate::protocol::MAX_M {
            return Err(ProtocolError::InvalidM { m: params.m }.into());
        }
        if params.n < protocol.min_population() {
            let err = if protocol.name() == ProtocolKind::Lm.name() {
                ProtocolError::LmPopulationTooSmall { n: params.n }
            } else {
                ProtocolError::PopulationTooSmall {
                    protocol: protocol.name(),
                    n: params.n,
                    min: protocol.min_population(),
                }
            };
            return Err(err.into());
        }
        if let Some(m) = protocol.backup_threshold() {
            if m != params.m {
                return Err(EngineError::CeilingMismatch {
                    protocol_m: m,
                    params_m: params.m,
                });
            }
        }
        Ok(Self::new_unchecked(protocol, params))
    }

    /// Uniform initial population with no parameter validation. This is the
    /// escape hatch for harnesses that deliberately bypass the `n > 2` guard
    /// to demonstrate why it exists.
    pub fn new_unchecked(protocol: &P, params: ProtocolParams) -> Self {
        let initial = protocol.initial_state();
        let states = vec![initial; params.n];
        let contender_count = if protocol.output(initial) == Output::Win {
            params.n
        } else {
            0
        };
        Population {
            states,
            contender_count,
            max_magnitude_seen: protocol.magnitude(initial),
            params,
        }
    }

    /// Adopt an explicit state snapshot; counters are recomputed from it.
    pub fn from_states(protocol: &P, states: Vec<P::State>, m: u32) -> Self {
        let contender_count = states
            .iter()
            .filter(|&&s| protocol.output(s) == Output::Win)
            .count();
        let max_magnitude_seen = states
            .iter()
            .map(|&s| protocol.magnitude(s))
            .max()
            .unwrap_or(0);
        let n = states.len();
        Population {
            states,
            contender_count,
            max_magnitude_seen,
            params: ProtocolParams::new_unchecked(n, m),
        }
    }

    pub fn states(&self) -> &[P::State] {
        &self.states
    }

    pub fn params(&self) -> ProtocolParams {
        self.params
    }

    /// Cached number of agents whose output is Win.
    pub fn contender_count(&self) -> usize {
        self.contender_count
    }

    /// Full rescan of the state array; the oracle for the cached count.
    pub fn recount_contenders(&self, protocol: &P) -> usize {
        self.states
            .iter()
            .filter(|&&s| protocol.output(s) == Output::Win)
            .count()
    }

    /// Largest magnitude any agent has held since the start of the run.
    /// Nondecreasing.
    pub fn max_magnitude_seen(&self) -> u32 {
        self.max_magnitude_seen
    }

    pub fn is_converged(&self) -> bool {
        self.contender_count == 1
    }

    /// Apply the protocol transition to an explicit (initiator, responder)
    /// pair. Exactly these two entries change. Errors out *before* touching
    /// the state if the interaction would leave zero contenders.
    pub fn apply_pair(
        &mut self,
        protocol: &P,
        initiator: usize,
        responder: usize,
    ) -> Result<StepEvent<P::State>, EngineError> {
        debug_assert_ne!(initiator, responder);
        let x = self.states[initiator];
        let y = self.states[responder];
        let (x_new, y_new) = protocol.transition(x, y);

        let wins = |s: P::State| -> isize { (protocol.output(s) == Output::Win) as isize };
        let delta = wins(x_new) + wins(y_new) - wins(x) - wins(y);
        let new_count = (self.contender_count as isize + delta) as usize;
        if new_count == 0 {
            return Err(EngineError::ContendersExhausted {
                initiator,
                responder,
            });
        }

        self.states[initiator] = x_new;
        self.states[responder] = y_new;
        self.contender_count = new_count;
        self.max_magnitude_seen = self
            .max_magnitude_seen
            .max(protocol.magnitude(x_new))
            .max(protocol.magnitude(y_new));
        Ok(StepEvent {
            initiator,
            responder,
            before: (x, y),
            after: (x_new, y_new),
            contenders: new_count,
        })
    }

    /// One scheduler step: sample a uniform ordered pair of distinct agents
    /// and apply the transition to it.
    pub fn step(
        &mut self,
        protocol: &P,
        sched: &mut Scheduler,
    ) -> Result<StepEvent<P::State>, EngineError> {
        let (initiator, responder) = sched.sample_pair(self.params.n);
        self.apply_pair(protocol, initiator, responder)
    }
}

/// Everything measured about one run. `steps` is exact; parallel time is
/// derived on demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationOutcome {
    pub protocol: String,
    pub n: usize,
    pub m: u32,
    pub seed: u64,
    pub steps: u64,
    pub max_abs_value: u32,
    pub backup_triggered: bool,
    pub converged: bool,
}

impl SimulationOutcome {
    /// Steps divided by the population size.
    pub fn parallel_time(&self) -> f64 {
        self.steps as f64 / self.n as f64
    }
}

/// Ceiling of log2 for `n >= 2`.
pub fn ceil_log2(n: usize) -> u32 {
    debug_assert!(n >= 2);
    u64::BITS - ((n as u64) - 1).leading_zeros()
}

/// Default step cap: `200 * n * ceil(log2 n)^3`, far above the observed
/// convergence times, so hitting it signals something genuinely wrong.
pub fn default_max_steps(n: usize) -> u64 {
    200 * n as u64 * u64::from(ceil_log2(n)).pow(3)
}

/// Run until a single contender remains or `max_steps` interactions have
/// been executed. Hitting the cap is not an error: the outcome comes back
/// with `converged = false`.
pub fn run_until_converged<P: Protocol>(
    protocol: &P,
    params: ProtocolParams,
    seed: u64,
    max_steps: u64,
) -> Result<SimulationOutcome, EngineError> {
    run_with_trace(protocol, params, seed, max_steps, None)
}

/// Like [`run_until_converged`], optionally writing one plain-text line per
/// step: `step=<k> initiator=<i> responder=<j> x=<v> y=<v> x'=<v> y'=<v>
/// contenders=<c>`. Tracing costs a write per step, so it is opt-in.
pub fn run_with_trace<P: Protocol>(
    protocol: &P,
    params: ProtocolParams,
    seed: u64,
    max_steps: u64,
    mut trace: Option<&mut dyn Write>,
) -> Result<SimulationOutcome, EngineError> {
    let mut pop = Population::new(protocol, params)?;
    let mut sched = Scheduler::new(seed);
    let mut steps: u64 = 0;
    while !pop.is_converged() && steps < max_steps {
        let ev = pop.step(protocol, &mut sched)?;
        steps += 1;
        if let Some(w) = trace.as_deref_mut() {
            writeln!(
                w,
                "step={} initiator={} responder={} x={} y={} x'={} y'={} contenders={}",
                steps,
                ev.initiator,
                ev.responder,
                ev.before.0,
                ev.before.1,
                ev.after.0,
                ev.after.1,
                ev.contenders
            )?;
        }
    }
    Ok(SimulationOutcome {
        protocol: protocol.name().to_string(),
        n: params.n,
        m: params.m,
        seed,
        steps,
        max_abs_value: pop.max_magnitude_seen(),
        backup_triggered: protocol
            .backup_threshold()
            .is_some_and(|t| pop.max_magnitude_seen() >= t),
        converged: pop.is_converged(),
    })
}

/// Dispatch one simulation by protocol kind; sweeps and the CLI go through
/// here.
pub fn run_trial(
    kind: ProtocolKind,
    n: usize,
    m: u32,
    seed: u64,
    max_steps: u64,
) -> Result<SimulationOutcome, EngineError> {
    let params = ProtocolParams::new(kind, n, m)?;
    match kind {
        ProtocolKind::Lm => run_until_converged(&LeaderMinion::new(m)?, params, seed, max_steps),
        ProtocolKind::Baseline => run_until_converged(&Baseline, params, seed, max_steps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{BaselineState, StateValue};

    fn sv(value: i32, m: u32) -> StateValue {
        StateValue::new(value, m).unwrap()
    }

    fn lm(m: u32) -> LeaderMinion {
        LeaderMinion::new(m).unwrap()
    }

    #[test]
    fn new_population_is_uniform() {
        let p = lm(8);
        let pop = Population::new(&p, ProtocolParams::new_unchecked(5, 8)).unwrap();
        assert_eq!(
            pop.states().iter().map(|s| s.value()).collect::<Vec<_>>(),
            vec![1, 1, 1, 1, 1]
        );
        assert_eq!(pop.contender_count(), 5);
        assert_eq!(pop.max_magnitude_seen(), 1);
    }

    #[test]
    fn new_population_rejects_two_agents_for_lm() {
        let p = lm(8);
        let err = Population::new(&p, ProtocolParams::new_unchecked(2, 8)).unwrap_err();
        assert!(matches!(
            err,
            EngineError::Protocol(ProtocolError::LmPopulationTooSmall { n: 2 })
        ));
        assert!(err.to_string().contains("n > 2"));
    }

    #[test]
    fn new_population_baseline_two_agents() {
        let pop = Population::new(&Baseline, ProtocolParams::new_unchecked(2, 1)).unwrap();
        assert_eq!(
            pop.states(),
            &[BaselineState::Leader, BaselineState::Leader]
        );
        assert_eq!(pop.contender_count(), 2);
    }

    #[test]
    fn new_population_rejects_mismatched_ceiling() {
        let p = lm(8);
        let err = Population::new(&p, ProtocolParams::new_unchecked(5, 9)).unwrap_err();
        assert!(matches!(err, EngineError::CeilingMismatch { .. }));
    }

    #[test]
    fn apply_pair_matches_hand_traces() {
        let m = 8;
        let p = lm(m);
        let mut pop = Population::from_states(&p, vec![sv(5, m), sv(3, m), sv(-1, m)], m);
        let ev = pop.apply_pair(&p, 0, 1).unwrap();
        assert_eq!(
            pop.states().iter().map(|s| s.value()).collect::<Vec<_>>(),
            vec![6, -5, -1]
        );
        assert_eq!(ev.contenders, 1);
        assert_eq!(pop.contender_count(), 1);

        let mut pop = Population::from_states(&p, vec![sv(9, m), sv(8, m), sv(-2, m)], m);
        pop.apply_pair(&p, 0, 1).unwrap();
        assert_eq!(
            pop.states().iter().map(|s| s.value()).collect::<Vec<_>>(),
            vec![8, -8, -2]
        );
    }

    #[test]
    fn apply_pair_baseline_initiator_wins() {
        let mut pop = Population::new(&Baseline, ProtocolParams::new_unchecked(2, 1)).unwrap();
        pop.apply_pair(&Baseline, 1, 0).unwrap();
        assert_eq!(
            pop.states(),
            &[BaselineState::Follower, BaselineState::Leader]
        );
    }

    #[test]
    fn step_touches_at_most_two_agents() {
        let p = lm(4);
        let mut pop = Population::new(&p, ProtocolParams::new_unchecked(20, 4)).unwrap();
        let mut sched = Scheduler::new(9);
        for _ in 0..500 {
            let before = pop.states().to_vec();
            let ev = pop.step(&p, &mut sched).unwrap();
            let changed: Vec<usize> = (0..before.len())
                .filter(|&i| before[i] != pop.states()[i])
                .collect();
            assert!(changed.len() <= 2);
            assert!(changed
                .iter()
                .all(|&i| i == ev.initiator || i == ev.responder));
        }
    }

    #[test]
    fn contender_cache_matches_rescan() {
        let p = lm(3);
        let mut pop = Population::new(&p, ProtocolParams::new_unchecked(30, 3)).unwrap();
        let mut sched = Scheduler::new(13);
        let mut max_seen_prev = pop.max_magnitude_seen();
        for step in 0..20_000 {
            pop.step(&p, &mut sched).unwrap();
            assert!(pop.max_magnitude_seen() >= max_seen_prev);
            max_seen_prev = pop.max_magnitude_seen();
            if step % 97 == 0 {
                assert_eq!(pop.contender_count(), pop.recount_contenders(&p));
            }
        }
        assert_eq!(pop.contender_count(), pop.recount_contenders(&p));
    }

    #[test]
    fn run_converges_and_replays_identically() {
        for seed in [0u64, 1, 42, 0xDEAD_BEEF] {
            let params = ProtocolParams::new(ProtocolKind::Lm, 3, 8).unwrap();
            let a = run_until_converged(&lm(8), params, seed, 1_000_000).unwrap();
            let b = run_until_converged(&lm(8), params, seed, 1_000_000).unwrap();
            assert!(a.converged, "seed {seed} did not converge");
            assert_eq!(a, b);
            assert_eq!(a.parallel_time(), a.steps as f64 / 3.0);
        }
    }

    #[test]
    fn run_reports_cap_without_error() {
        let params = ProtocolParams::new(ProtocolKind::Lm, 3, 8).unwrap();
        let out = run_until_converged(&lm(8), params, 7, 1).unwrap();
        assert!(!out.converged);
        assert_eq!(out.steps, 1);
    }

    #[test]
    fn backup_flag_tracks_ceiling_band() {
        // With m = 1 the value band {m, m+1} is live from the start.
        let out = run_trial(ProtocolKind::Lm, 4, 1, 5, 100_000).unwrap();
        assert!(out.backup_triggered);
        assert!(out.max_abs_value == 1 || out.max_abs_value == 2);
        // A large ceiling is never approached at small n.
        let out = run_trial(ProtocolKind::Lm, 64, 10_000, 5, 10_000_000).unwrap();
        assert!(!out.backup_triggered);
        assert!(out.converged);
    }

    #[test]
    fn unique_contender_is_permanent_and_the_same_agent() {
        let p = lm(2);
        let params = ProtocolParams::new(ProtocolKind::Lm, 6, 2).unwrap();
        let mut pop = Population::new(&p, params).unwrap();
        let mut sched = Scheduler::new(21);
        while !pop.is_converged() {
            pop.step(&p, &mut sched).unwrap();
        }
        let leader = pop.states().iter().position(|s| s.is_contender()).unwrap();
        for _ in 0..20_000 {
            pop.step(&p, &mut sched).unwrap();
            assert_eq!(pop.contender_count(), 1);
            assert!(pop.states()[leader].is_contender());
        }
    }

    #[test]
    fn baseline_run_converges() {
        let out = run_trial(ProtocolKind::Baseline, 16, 1, 3, 1_000_000).unwrap();
        assert!(out.converged);
        assert!(!out.backup_triggered);
        assert_eq!(out.protocol, "baseline");
    }

    #[test]
    fn trial_determinism_spans_protocols() {
        for kind in [ProtocolKind::Lm, ProtocolKind::Baseline] {
            let a = run_trial(kind, 32, 9, 99, 10_000_000).unwrap();
            let b = run_trial(kind, 32, 9, 99, 10_000_000).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn two_agent_lm_population_never_converges() {
        // The n > 2 guard exists because from [1, 1] the symmetric rules
        // keep both agents identical forever.
        let p = lm(8);
        let mut pop = Population::new_unchecked(&p, ProtocolParams::new_unchecked(2, 8));
        let mut sched = Scheduler::new(17);
        for _ in 0..100_000 {
            pop.step(&p, &mut sched).unwrap();
            assert_eq!(pop.states()[0], pop.states()[1]);
            assert_eq!(pop.contender_count(), 2);
        }
    }

    #[test]
    fn trace_emits_one_line_per_step() {
        let p = lm(8);
        let params = ProtocolParams::new(ProtocolKind::Lm, 4, 8).unwrap();
        let mut buf: Vec<u8> = Vec::new();
        let out = run_with_trace(&p, params, 77, 5, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), out.steps as usize);
        assert!(lines[0].starts_with("step=1 initiator="));
        for line in &lines {
            assert!(line.contains(" x=") && line.contains(" x'=") && line.contains(" contenders="));
        }
    }

    #[test]
    fn monitor_catches_a_contender_zeroing_mutant() {
        // Like lm but a contender only survives on *strictly* larger
        // magnitude, so two initial 1-values wipe each other out.
        struct Mutant {
            m: u32,
        }
        impl Protocol for Mutant {
            type State = StateValue;
            fn name(&self) -> &'static str {
                "lm-mutant"
            }
            fn initial_state(&self) -> StateValue {
                StateValue::new(1, self.m).unwrap()
            }
            fn transition(&self, x: StateValue, y: StateValue) -> (StateValue, StateValue) {
                let pick = |a: StateValue, b: StateValue| {
                    if a.is_contender() && a.magnitude() > b.magnitude() {
                        crate::protocol::contend_priority(a, b, self.m)
                    } else {
                        crate::protocol::minion_priority(a, b, self.m)
                    }
                };
                (pick(x, y), pick(y, x))
            }
            fn output(&self, s: StateValue) -> Output {
                crate::protocol::lm_output(s)
            }
            fn symmetric(&self) -> bool {
                true
            }
            fn state_space(&self) -> Vec<StateValue> {
                LeaderMinion::new(self.m).unwrap().state_space()
            }
            fn magnitude(&self, s: StateValue) -> u32 {
                s.magnitude()
            }
            fn backup_threshold(&self) -> Option<u32> {
                Some(self.m)
            }
            fn min_population(&self) -> usize {
                3
            }
        }

        // The run stops at one contender, so drive the population past
        // convergence by hand until the last contender would vanish.
        let p = Mutant { m: 1 };
        let mut pop = Population::new_unchecked(&p, ProtocolParams::new_unchecked(3, 1));
        let mut sched = Scheduler::new(2);
        let err = loop {
            match pop.step(&p, &mut sched) {
                Ok(_) => continue,
                Err(e) => break e,
            }
        };
        assert!(matches!(err, EngineError::ContendersExhausted { .. }));
        assert!(
            pop.contender_count() >= 1,
            "monitor must abort before committing the state"
        );
    }

    #[test]
    fn default_cap_shape() {
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(9), 4);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(100_000), 17);
        assert_eq!(default_max_steps(8), 200 * 8 * 27);
    }
}
