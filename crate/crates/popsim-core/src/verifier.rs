//! Exhaustive model checking over anonymous configurations.
//!
//! Agents are anonymous and the transitions depend only on states, so a
//! configuration can be quotiented to a count-per-state vector without losing
//! reachability information. The verifier builds the full BFS closure of the
//! uniform initial configuration under every ordered interaction, then checks
//! the election safety properties on the resulting graph:
//!
//! * `always-one-contender` — no reachable configuration is contender-free;
//! * `single-contender-absorbing` — once one contender remains the property
//!   persists, and every bottom SCC (no outgoing edges) consists of
//!   single-contender configurations only, so election happens with
//!   probability 1 under the uniform scheduler.
//!
//! Failing verdicts carry a witness path from the initial configuration.
//!
//! The module also hosts the exhaustive transition-grid checks for the
//! leader-minion rules (symmetry, closure, minion absorption, magnitude
//! monotonicity), which are properties of the update function alone.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::hash::Hash;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use thiserror::Error;

use crate::protocol::{lm_update, LeaderMinion, Output, Protocol, ProtocolParams, StateValue};

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error(
        "node cap {cap} exceeded: {nodes} configurations reached with {frontier} still on the frontier"
    )]
    NodeCapExceeded {
        cap: usize,
        nodes: usize,
        frontier: usize,
    },
    #[error("transition output {output} is outside the declared state space")]
    NonClosedTransition { output: String },
}

/// Precomputed transition function over the canonical state indices. The
/// verifier's inner loop works on indices; the table must agree with the
/// computed transitions everywhere (tested).
pub struct TransitionTable<S> {
    states: Vec<S>,
    entries: Vec<(u32, u32)>,
}

impl<S: Copy + Eq + Hash + std::fmt::Display> TransitionTable<S> {
    pub fn new<P: Protocol<State = S>>(protocol: &P) -> Result<Self, VerifierError> {
        let states = protocol.state_space();
        let index: HashMap<S, u32> = states
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, i as u32))
            .collect();
        let k = states.len();
        let mut entries = Vec::with_capacity(k * k);
        for &x in &states {
            for &y in &states {
                let (a, b) = protocol.transition(x, y);
                let ia = *index
                    .get(&a)
                    .ok_or_else(|| VerifierError::NonClosedTransition {
                        output: a.to_string(),
                    })?;
                let ib = *index
                    .get(&b)
                    .ok_or_else(|| VerifierError::NonClosedTransition {
                        output: b.to_string(),
                    })?;
                entries.push((ia, ib));
            }
        }
        Ok(TransitionTable { states, entries })
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    /// Transition on state indices.
    pub fn apply(&self, i: usize, j: usize) -> (usize, usize) {
        let (a, b) = self.entries[i * self.states.len() + j];
        (a as usize, b as usize)
    }
}

/// BFS closure of the initial configuration. Node 0 is the initial
/// configuration; `succ` lists are sorted and deduplicated.
#[derive(Debug)]
pub struct ReachabilityGraph<S> {
    protocol_name: String,
    params: ProtocolParams,
    states: Vec<S>,
    nodes: Vec<Vec<u32>>,
    succ: Vec<Vec<u32>>,
    parent: Vec<u32>,
    contenders: Vec<u32>,
}

impl<S: Copy + std::fmt::Display> ReachabilityGraph<S> {
    pub fn protocol_name(&self) -> &str {
        &self.protocol_name
    }

    pub fn params(&self) -> ProtocolParams {
        self.params
    }

    /// States in canonical index order (the configuration vector layout).
    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn initial(&self) -> usize {
        0
    }

    /// Count-per-state vector of one configuration.
    pub fn config(&self, id: usize) -> &[u32] {
        &self.nodes[id]
    }

    pub fn successors(&self, id: usize) -> &[u32] {
        &self.succ[id]
    }

    /// Total number of Win-output agents in the configuration.
    pub fn contender_total(&self, id: usize) -> u32 {
        self.contenders[id]
    }

    /// Nonzero counts rendered as `{state:count, ...}` in canonical order.
    pub fn format_config(&self, id: usize) -> String {
        let mut parts = Vec::new();
        for (i, &c) in self.nodes[id].iter().enumerate() {
            if c > 0 {
                parts.push(format!("{}:{}", self.states[i], c));
            }
        }
        format!("{{{}}}", parts.join(", "))
    }

    /// BFS-tree path from the initial configuration to `id`, inclusive.
    pub fn path_from_initial(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while cur != 0 {
            cur = self.parent[cur] as usize;
            path.push(cur);
        }
        path.reverse();
        path
    }
}

/// Breadth-first closure of the all-agents-initial configuration under every
/// ordered interaction of two distinct agents. An interaction between states
/// `s` and `t` is enabled when `counts[s] >= 1 && counts[t] >= 1` for
/// `s != t`, or `counts[s] >= 2` for `s = t`. Fails cleanly when more than
/// `node_cap` configurations are reached.
pub fn build_reachability<P: Protocol>(
    protocol: &P,
    params: ProtocolParams,
    node_cap: usize,
) -> Result<ReachabilityGraph<P::State>, VerifierError> {
    assert!(params.n >= 2, "reachability needs at least two agents");
    let table = TransitionTable::new(protocol)?;
    let states = table.states().to_vec();
    let k = states.len();
    let state_index: HashMap<P::State, usize> =
        states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let win_states: Vec<bool> = states
        .iter()
        .map(|&s| protocol.output(s) == Output::Win)
        .collect();
    let contender_total = |counts: &[u32]| -> u32 {
        counts
            .iter()
            .zip(&win_states)
            .filter(|(_, &w)| w)
            .map(|(&c, _)| c)
            .sum()
    };

    let mut initial = vec![0u32; k];
    initial[state_index[&protocol.initial_state()]] = params.n as u32;

    let mut index: HashMap<Vec<u32>, u32> = HashMap::new();
    let mut nodes: Vec<Vec<u32>> = Vec::new();
    let mut succ: Vec<Vec<u32>> = Vec::new();
    let mut parent: Vec<u32> = Vec::new();
    let mut contenders: Vec<u32> = Vec::new();
    let mut queue: VecDeque<u32> = VecDeque::new();

    contenders.push(contender_total(&initial));
    index.insert(initial.clone(), 0);
    nodes.push(initial);
    parent.push(0);
    queue.push_back(0);

    while let Some(id) = queue.pop_front() {
        let counts = nodes[id as usize].clone();
        let mut out: Vec<u32> = Vec::new();
        for i in 0..k {
            if counts[i] == 0 {
                continue;
            }
            for j in 0..k {
                let needed = if i == j { 2 } else { 1 };
                if counts[j] < needed {
                    continue;
                }
                let (a, b) = table.apply(i, j);
                let mut next = counts.clone();
                next[i] -= 1;
                next[j] -= 1;
                next[a] += 1;
                next[b] += 1;
                let next_id = match index.get(&next) {
                    Some(&existing) => existing,
                    None => {
                        let new_id = nodes.len() as u32;
                        if nodes.len() >= node_cap {
                            return Err(VerifierError::NodeCapExceeded {
                                cap: node_cap,
                                nodes: nodes.len(),
                                frontier: queue.len() + 1,
                            });
                        }
                        contenders.push(contender_total(&next));
                        index.insert(next.clone(), new_id);
                        nodes.push(next);
                        parent.push(id);
                        queue.push_back(new_id);
                        new_id
                    }
                };
                out.push(next_id);
            }
        }
        out.sort_unstable();
        out.dedup();
        succ.push(out);
    }

    Ok(ReachabilityGraph {
        protocol_name: protocol.name().to_string(),
        params,
        states,
        nodes,
        succ,
        parent,
        contenders,
    })
}

/// Outcome of one property check. A failing verdict carries the property
/// name and a witness path of node ids from the initial configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Fails {
        property: &'static str,
        witness: Vec<usize>,
    },
}

impl Verdict {
    pub fn holds(&self) -> bool {
        matches!(self, Verdict::Holds)
    }
}

pub const PROP_ALWAYS_ONE_CONTENDER: &str = "always-one-contender";
pub const PROP_SINGLE_CONTENDER_ABSORBING: &str = "single-contender-absorbing";

/// No reachable configuration has zero contenders.
pub fn check_always_one_contender<S: Copy + std::fmt::Display>(
    graph: &ReachabilityGraph<S>,
) -> Verdict {
    for id in 0..graph.node_count() {
        if graph.contender_total(id) == 0 {
            return Verdict::Fails {
                property: PROP_ALWAYS_ONE_CONTENDER,
                witness: graph.path_from_initial(id),
            };
        }
    }
    Verdict::Holds
}

/// Single-contender configurations only step to single-contender
/// configurations, and every bottom SCC consists of them, so the process
/// settles into an elected state with probability 1.
pub fn check_single_contender_absorbing<S: Copy + std::fmt::Display>(
    graph: &ReachabilityGraph<S>,
) -> Verdict {
    for id in 0..graph.node_count() {
        if graph.contender_total(id) != 1 {
            continue;
        }
        for &next in graph.successors(id) {
            if graph.contender_total(next as usize) != 1 {
                let mut witness = graph.path_from_initial(id);
                witness.push(next as usize);
                return Verdict::Fails {
                    property: PROP_SINGLE_CONTENDER_ABSORBING,
                    witness,
                };
            }
        }
    }

    for scc in bottom_sccs(graph) {
        for id in scc {
            if graph.contender_total(id) != 1 {
                return Verdict::Fails {
                    property: PROP_SINGLE_CONTENDER_ABSORBING,
                    witness: graph.path_from_initial(id),
                };
            }
        }
    }
    Verdict::Holds
}

/// Strongly connected components with no edge leaving the component.
pub fn bottom_sccs<S>(graph: &ReachabilityGraph<S>) -> Vec<Vec<usize>> {
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(graph.nodes.len(), 0);
    for _ in 0..graph.nodes.len() {
        g.add_node(());
    }
    for (id, out) in graph.succ.iter().enumerate() {
        for &next in out {
            g.add_edge(NodeIndex::new(id), NodeIndex::new(next as usize), ());
        }
    }
    let sccs = tarjan_scc(&g);
    let mut scc_of = vec![0usize; graph.nodes.len()];
    for (scc_id, members) in sccs.iter().enumerate() {
        for &node in members {
            scc_of[node.index()] = scc_id;
        }
    }
    let mut is_bottom = vec![true; sccs.len()];
    for (id, out) in graph.succ.iter().enumerate() {
        for &next in out {
            if scc_of[id] != scc_of[next as usize] {
                is_bottom[scc_of[id]] = false;
            }
        }
    }
    sccs.into_iter()
        .enumerate()
        .filter(|(scc_id, _)| is_bottom[*scc_id])
        .map(|(_, members)| members.into_iter().map(|n| n.index()).collect())
        .collect()
}

/// Exhaustive property suite for the leader-minion update rules over the
/// full `(2m+1)^2` interaction grid:
///
/// * symmetry: `update(x, y) = (a, b)` iff `update(y, x) = (b, a)`;
/// * closure: outputs stay in the state space, and `-(m+1)` never appears;
/// * minion absorption: a minion never becomes a contender;
/// * monotonicity below the ceiling: when `max(|x|, |y|) <= m`, magnitudes
///   never shrink;
/// * ceiling exception: a magnitude shrinks only from `m+1`, and then
///   exactly to `m`.
pub fn check_lm_transition_grid(m: u32) -> Result<(), String> {
    let protocol = LeaderMinion::new(m).map_err(|e| e.to_string())?;
    let states = protocol.state_space();
    for &x in &states {
        for &y in &states {
            let (a, b) = lm_update(x, y, m);

            let (b2, a2) = lm_update(y, x, m);
            if (a, b) != (a2, b2) {
                return Err(format!(
                    "symmetry broken at ({x}, {y}): got ({a}, {b}) vs mirrored ({a2}, {b2})"
                ));
            }

            for out in [a, b] {
                if StateValue::new(out.value(), m).is_err() {
                    return Err(format!("closure broken at ({x}, {y}): output {out}"));
                }
                if out.value() == -(m as i32 + 1) {
                    return Err(format!("-(m+1) produced at ({x}, {y})"));
                }
            }

            for (before, after) in [(x, a), (y, b)] {
                if !before.is_contender() && after.is_contender() {
                    return Err(format!(
                        "minion absorption broken at ({x}, {y}): {before} -> {after}"
                    ));
                }
                let ceiling = x.magnitude().max(y.magnitude()) == m + 1;
                if !ceiling && after.magnitude() < before.magnitude() {
                    return Err(format!(
                        "magnitude decreased below ceiling at ({x}, {y}): {before} -> {after}"
                    ));
                }
                if after.magnitude() < before.magnitude()
                    && !(before.magnitude() == m + 1 && after.magnitude() == m)
                {
                    return Err(format!(
                        "illegal magnitude drop at ({x}, {y}): {before} -> {after}"
                    ));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Baseline, BaselineState, ProtocolKind};

    fn lm(m: u32) -> LeaderMinion {
        LeaderMinion::new(m).unwrap()
    }

    fn params(n: usize, m: u32) -> ProtocolParams {
        ProtocolParams::new_unchecked(n, m)
    }

    #[test]
    fn table_agrees_with_computed_transitions() {
        for m in [1u32, 2, 3, 8] {
            let p = lm(m);
            let table = TransitionTable::new(&p).unwrap();
            let states = table.states().to_vec();
            for (i, &x) in states.iter().enumerate() {
                for (j, &y) in states.iter().enumerate() {
                    let (a, b) = table.apply(i, j);
                    assert_eq!((states[a], states[b]), p.transition(x, y));
                }
            }
        }
        let table = TransitionTable::new(&Baseline).unwrap();
        assert_eq!(table.apply(0, 0), (0, 1));
    }

    #[test]
    fn grid_checks_pass_for_small_ceilings() {
        for m in [1, 2, 8] {
            check_lm_transition_grid(m).unwrap();
        }
    }

    #[test]
    fn initial_node_and_agent_conservation() {
        let g = build_reachability(&lm(1), params(3, 1), 1_000_000).unwrap();
        // canonical order for m = 1 is [-1, 1, 2]; initial is three agents at 1
        assert_eq!(g.config(g.initial()), &[0, 3, 0]);
        for id in 0..g.node_count() {
            assert_eq!(g.config(id).iter().sum::<u32>(), 3);
        }
        assert_eq!(g.format_config(g.initial()), "{1:3}");
    }

    #[test]
    fn safety_properties_hold_on_small_instances() {
        for (n, m) in [(3, 1), (4, 2), (5, 2)] {
            let g = build_reachability(&lm(m), params(n, m), 10_000_000).unwrap();
            assert!(check_always_one_contender(&g).holds(), "(n={n}, m={m})");
            assert!(
                check_single_contender_absorbing(&g).holds(),
                "(n={n}, m={m})"
            );
        }
    }

    #[test]
    fn bottom_sccs_are_the_leader_oscillation() {
        let m = 2;
        let g = build_reachability(&lm(m), params(4, m), 10_000_000).unwrap();
        let bottoms = bottom_sccs(&g);
        assert!(!bottoms.is_empty());
        // state order for m = 2: [-2, -1, 1, 2, 3]
        for scc in &bottoms {
            for &id in scc {
                assert_eq!(g.contender_total(id), 1);
                let counts = g.config(id);
                assert_eq!(counts[0], 3, "all minions at -m: {}", g.format_config(id));
                assert_eq!(counts[1], 0);
                assert_eq!(counts[2], 0);
                assert_eq!(
                    counts[3] + counts[4],
                    1,
                    "leader in the ceiling band: {}",
                    g.format_config(id)
                );
            }
        }
    }

    #[test]
    fn baseline_bottom_scc_is_the_elected_configuration() {
        let g = build_reachability(&Baseline, params(3, 1), 1_000_000).unwrap();
        assert!(check_always_one_contender(&g).holds());
        assert!(check_single_contender_absorbing(&g).holds());
        let bottoms = bottom_sccs(&g);
        assert_eq!(bottoms.len(), 1);
        assert_eq!(bottoms[0].len(), 1);
        let elected = bottoms[0][0];
        assert_eq!(g.config(elected), &[1, 2]);
        assert_eq!(g.format_config(elected), "{Leader:1, Follower:2}");
        assert_eq!(
            g.states(),
            &[BaselineState::Leader, BaselineState::Follower]
        );
    }

    #[test]
    fn two_agent_lm_graph_shows_the_election_failure() {
        // Bypassing the n > 2 guard: both agents stay equal forever, so the
        // bottom SCC is a two-contender oscillation and absorption fails.
        let g = build_reachability(&lm(1), params(2, 1), 1_000_000).unwrap();
        assert!(check_always_one_contender(&g).holds());
        let verdict = check_single_contender_absorbing(&g);
        assert!(!verdict.holds());
        let baseline_two = build_reachability(&Baseline, params(2, 1), 1_000_000).unwrap();
        assert!(check_single_contender_absorbing(&baseline_two).holds());
    }

    #[test]
    fn no_edge_decreases_magnitude_except_from_the_ceiling() {
        let m = 2;
        let p = lm(m);
        let g = build_reachability(&p, params(4, m), 10_000_000).unwrap();
        let table = TransitionTable::new(&p).unwrap();
        let states = table.states().to_vec();
        for id in 0..g.node_count() {
            let counts = g.config(id);
            for i in 0..states.len() {
                for j in 0..states.len() {
                    let enabled = if i == j {
                        counts[i] >= 2
                    } else {
                        counts[i] >= 1 && counts[j] >= 1
                    };
                    if !enabled {
                        continue;
                    }
                    let (a, b) = table.apply(i, j);
                    for (before, after) in [(states[i], states[a]), (states[j], states[b])] {
                        if after.magnitude() < before.magnitude() {
                            assert_eq!(before.magnitude(), m + 1);
                            assert_eq!(after.magnitude(), m);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn node_cap_fails_cleanly() {
        let err = build_reachability(&lm(2), params(4, 2), 3).unwrap_err();
        match err {
            VerifierError::NodeCapExceeded { cap, nodes, .. } => {
                assert_eq!(cap, 3);
                assert_eq!(nodes, 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn mutant_protocol_is_detected_with_a_witness() {
        struct Mutant;
        impl Protocol for Mutant {
            type State = StateValue;
            fn name(&self) -> &'static str {
                "lm-mutant"
            }
            fn initial_state(&self) -> StateValue {
                StateValue::new(1, 1).unwrap()
            }
            fn transition(&self, x: StateValue, y: StateValue) -> (StateValue, StateValue) {
                let pick = |a: StateValue, b: StateValue| {
                    if a.is_contender() && a.magnitude() > b.magnitude() {
                        crate::protocol::contend_priority(a, b, 1)
                    } else {
                        crate::protocol::minion_priority(a, b, 1)
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
                LeaderMinion::new(1).unwrap().state_space()
            }
            fn magnitude(&self, s: StateValue) -> u32 {
                s.magnitude()
            }
            fn backup_threshold(&self) -> Option<u32> {
                Some(1)
            }
            fn min_population(&self) -> usize {
                3
            }
        }

        let g = build_reachability(&Mutant, params(3, 1), 1_000_000).unwrap();
        match check_always_one_contender(&g) {
            Verdict::Fails { property, witness } => {
                assert_eq!(property, PROP_ALWAYS_ONE_CONTENDER);
                assert_eq!(witness[0], g.initial());
                let last = *witness.last().unwrap();
                assert_eq!(g.contender_total(last), 0);
                // every consecutive pair in the witness is an edge
                for w in witness.windows(2) {
                    assert!(g.successors(w[0]).contains(&(w[1] as u32)));
                }
            }
            Verdict::Holds => panic!("mutant not detected"),
        }
    }

    #[test]
    fn graph_carries_run_metadata() {
        let g = build_reachability(&lm(1), params(3, 1), 1_000).unwrap();
        assert_eq!(g.protocol_name(), ProtocolKind::Lm.name());
        assert_eq!(g.params(), params(3, 1));
    }
}
