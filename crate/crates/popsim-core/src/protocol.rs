//! State spaces and deterministic pairwise update rules.
//!
//! Two protocols live here: the leader-minion protocol (`lm`), whose agents
//! carry a signed integer value, and a two-state leader-elimination
//! `baseline`. Everything in this module is a pure function of the
//! interacting pair of states; the scheduler and population bookkeeping are
//! in [`crate::engine`].
//!
//! In the leader-minion protocol an agent with a positive value is a
//! *contender* (still eligible to win) and an agent with a negative value is
//! a *minion* that follows the leaders by propagating large absolute values.
//! Values are capped: `m + 1` is the largest representable value and wraps
//! back to `m` on the winning side, so contenders whose values reach the
//! ceiling break ties through the two-valued `m`/`m + 1` band. `-(m + 1)` is
//! not representable; the losing side of a ceiling interaction lands on `-m`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Largest supported value ceiling; keeps `m + 1` comfortably inside `i32`.
pub const MAX_M: u32 = 1 << 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("m must be in 1..={MAX_M} (got {m})")]
    InvalidM { m: u32 },
    #[error("state value {value} is outside the valid range for m = {m}")]
    InvalidStateValue { value: i32, m: u32 },
    #[error(
        "lm requires n > 2 (got {n}): the symmetric update rules cannot break a two-agent tie"
    )]
    LmPopulationTooSmall { n: usize },
    #[error("{protocol} requires at least {min} agents (got {n})")]
    PopulationTooSmall {
        protocol: &'static str,
        n: usize,
        min: usize,
    },
    #[error("unknown protocol {0:?} (expected \"lm\" or \"baseline\")")]
    UnknownProtocol(String),
}

/// What an agent's state means for the election output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    Win,
    Lose,
}

/// One leader-minion agent state: a nonzero integer in
/// `{-m, ..., -1, 1, ..., m, m+1}`.
///
/// The sign is the role (positive = contender, negative = minion); the
/// update rules never produce `-(m + 1)`, and neither does [`StateValue::new`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateValue(i32);

impl StateValue {
    pub fn new(value: i32, m: u32) -> Result<Self, ProtocolError> {
        let ceiling = i64::from(m) + 1;
        let v = i64::from(value);
        if value == 0 || v < -i64::from(m) || v > ceiling {
            return Err(ProtocolError::InvalidStateValue { value, m });
        }
        Ok(StateValue(value))
    }

    pub fn value(self) -> i32 {
        self.0
    }

    /// Absolute value of the state.
    pub fn magnitude(self) -> u32 {
        self.0.unsigned_abs()
    }

    pub fn is_contender(self) -> bool {
        self.0 > 0
    }
}

impl fmt::Display for StateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// True iff the state is a contender (positive value).
pub fn is_contender(x: StateValue) -> bool {
    x.is_contender()
}

/// New value for an agent that stays in contention: one past the larger
/// magnitude of the pair, except that a ceiling magnitude of `m + 1` wraps
/// back to `m`.
pub fn contend_priority(x: StateValue, y: StateValue, m: u32) -> StateValue {
    let max = x.magnitude().max(y.magnitude());
    if max == m + 1 {
        StateValue(m as i32)
    } else {
        StateValue(max as i32 + 1)
    }
}

/// New value for an agent that follows: the larger magnitude of the pair
/// with a negative sign, clamped to `-m` when the maximum is `m + 1`.
pub fn minion_priority(x: StateValue, y: StateValue, m: u32) -> StateValue {
    let max = x.magnitude().max(y.magnitude());
    if max == m + 1 {
        StateValue(-(m as i32))
    } else {
        StateValue(-(max as i32))
    }
}

/// The leader-minion pairwise update. Completely symmetric in its two
/// arguments: each side stays in contention iff it is a contender whose
/// magnitude is at least the partner's.
pub fn lm_update(x: StateValue, y: StateValue, m: u32) -> (StateValue, StateValue) {
    let x_new = if x.is_contender() && x.magnitude() >= y.magnitude() {
        contend_priority(x, y, m)
    } else {
        minion_priority(x, y, m)
    };
    let y_new = if y.is_contender() && y.magnitude() >= x.magnitude() {
        contend_priority(x, y, m)
    } else {
        minion_priority(x, y, m)
    };
    (x_new, y_new)
}

/// Election output: positive states win, negative states lose.
pub fn lm_output(x: StateValue) -> Output {
    if x.is_contender() {
        Output::Win
    } else {
        Output::Lose
    }
}

/// State of the two-state elimination baseline. All agents start as leaders;
/// two leaders meeting eliminate one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BaselineState {
    Leader,
    Follower,
}

impl fmt::Display for BaselineState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineState::Leader => write!(f, "Leader"),
            BaselineState::Follower => write!(f, "Follower"),
        }
    }
}

/// Baseline update: when two leaders meet, the initiator keeps the lead and
/// the responder drops out. Every other pair is unchanged, so the protocol
/// is asymmetric and relies on the initiator/responder distinction.
pub fn baseline_update(
    initiator: BaselineState,
    responder: BaselineState,
) -> (BaselineState, BaselineState) {
    match (initiator, responder) {
        (BaselineState::Leader, BaselineState::Leader) => {
            (BaselineState::Leader, BaselineState::Follower)
        }
        other => other,
    }
}

/// The two shipped protocols, for runtime dispatch (CLI, sweeps, CSV rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolKind {
    Lm,
    Baseline,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Lm => "lm",
            ProtocolKind::Baseline => "baseline",
        }
    }

    /// Smallest population the protocol elects a leader on. The symmetric lm
    /// rules need `n > 2`; the baseline works from two agents up.
    pub fn min_population(self) -> usize {
        match self {
            ProtocolKind::Lm => 3,
            ProtocolKind::Baseline => 2,
        }
    }

    pub fn validate_population(self, n: usize) -> Result<(), ProtocolError> {
        if n >= self.min_population() {
            return Ok(());
        }
        match self {
            ProtocolKind::Lm => Err(ProtocolError::LmPopulationTooSmall { n }),
            ProtocolKind::Baseline => Err(ProtocolError::PopulationTooSmall {
                protocol: self.name(),
                n,
                min: self.min_population(),
            }),
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lm" => Ok(ProtocolKind::Lm),
            "baseline" => Ok(ProtocolKind::Baseline),
            other => Err(ProtocolError::UnknownProtocol(other.to_string())),
        }
    }
}

/// Population size and value ceiling for one run. `m` is carried for every
/// protocol so that experiment records stay uniform; the baseline ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolParams {
    pub n: usize,
    pub m: u32,
}

impl ProtocolParams {
    /// Validated constructor: `1 <= m <= MAX_M` and `n` large enough for the
    /// protocol kind.
    pub fn new(kind: ProtocolKind, n: usize, m: u32) -> Result<Self, ProtocolError> {
        if !(1..=MAX_M).contains(&m) {
            return Err(ProtocolError::InvalidM { m });
        }
        kind.validate_population(n)?;
        Ok(ProtocolParams { n, m })
    }

    /// No validation; used by test harnesses that deliberately bypass the
    /// population-size guard.
    pub fn new_unchecked(n: usize, m: u32) -> Self {
        ProtocolParams { n, m }
    }
}

/// A pairwise protocol: deterministic transition plus win/lose output.
///
/// `transition` receives the initiator's state first. Symmetric protocols
/// ignore the ordering; asymmetric ones (the baseline) use it.
pub trait Protocol {
    type State: Copy + Eq + Ord + std::hash::Hash + fmt::Debug + fmt::Display + Send + Sync;

    fn name(&self) -> &'static str;
    fn initial_state(&self) -> Self::State;
    fn transition(
        &self,
        initiator: Self::State,
        responder: Self::State,
    ) -> (Self::State, Self::State);
    fn output(&self, state: Self::State) -> Output;
    /// Whether `transition(x, y) = (a, b)` implies `transition(y, x) = (b, a)`.
    fn symmetric(&self) -> bool;
    /// All states in the canonical index order used by the verifier.
    fn state_space(&self) -> Vec<Self::State>;
    /// Absolute value carried by a state (1 for protocols without values).
    fn magnitude(&self, state: Self::State) -> u32;
    /// Value ceiling at which the tie-breaker band starts, if any.
    fn backup_threshold(&self) -> Option<u32>;
    fn min_population(&self) -> usize;
}

/// The leader-minion protocol with value ceiling `m` (`2m + 1` states).
#[derive(Debug, Clone, Copy)]
pub struct LeaderMinion {
    m: u32,
}

impl LeaderMinion {
    pub fn new(m: u32) -> Result<Self, ProtocolError> {
        if !(1..=MAX_M).contains(&m) {
            return Err(ProtocolError::InvalidM { m });
        }
        Ok(LeaderMinion { m })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn state_count(&self) -> usize {
        2 * self.m as usize + 1
    }
}

impl Protocol for LeaderMinion {
    type State = StateValue;

    fn name(&self) -> &'static str {
        "lm"
    }

    fn initial_state(&self) -> StateValue {
        StateValue(1)
    }

    fn transition(&self, initiator: StateValue, responder: StateValue) -> (StateValue, StateValue) {
        lm_update(initiator, responder, self.m)
    }

    fn output(&self, state: StateValue) -> Output {
        lm_output(state)
    }

    fn symmetric(&self) -> bool {
        true
    }

    /// Canonical order is ascending numeric value: `-m, ..., -1, 1, ..., m+1`.
    fn state_space(&self) -> Vec<StateValue> {
        let m = self.m as i32;
        (-m..=m + 1).filter(|&v| v != 0).map(StateValue).collect()
    }

    fn magnitude(&self, state: StateValue) -> u32 {
        state.magnitude()
    }

    fn backup_threshold(&self) -> Option<u32> {
        Some(self.m)
    }

    fn min_population(&self) -> usize {
        ProtocolKind::Lm.min_population()
    }
}

/// The two-state elimination baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct Baseline;

impl Protocol for Baseline {
    type State = BaselineState;

    fn name(&self) -> &'static str {
        "baseline"
    }

    fn initial_state(&self) -> BaselineState {
        BaselineState::Leader
    }

    fn transition(
        &self,
        initiator: BaselineState,
        responder: BaselineState,
    ) -> (BaselineState, BaselineState) {
        baseline_update(initiator, responder)
    }

    fn output(&self, state: BaselineState) -> Output {
        match state {
            BaselineState::Leader => Output::Win,
            BaselineState::Follower => Output::Lose,
        }
    }

    fn symmetric(&self) -> bool {
        false
    }

    fn state_space(&self) -> Vec<BaselineState> {
        vec![BaselineState::Leader, BaselineState::Follower]
    }

    fn magnitude(&self, _state: BaselineState) -> u32 {
        1
    }

    fn backup_threshold(&self) -> Option<u32> {
        None
    }

    fn min_population(&self) -> usize {
        ProtocolKind::Baseline.min_population()
    }
}
