//! Per-agent Q-learning over unallocated-task states, action availability,
//! the action-sample history and the selection functions.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Action, AgentId, AgentState, TaskTypeId, Tick};

pub const DEFAULT_Q: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("{name} = {value} is out of range")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error("values sum to {0}, expected a positive sum")]
    ZeroSum(f64),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("nothing to select from")]
    Empty,
    #[error("sample at {time} precedes latest sample at {latest}")]
    OutOfOrder { time: Tick, latest: Tick },
}

/// Learning state: the multiset of task types the agent still has to
/// allocate, kept sorted so equal multisets compare equal.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QState(Vec<TaskTypeId>);

impl QState {
    pub fn new(types: impl IntoIterator<Item = TaskTypeId>) -> Self {
        let mut v: Vec<_> = types.into_iter().collect();
        v.sort();
        QState(v)
    }

    pub fn types(&self) -> &[TaskTypeId] {
        &self.0
    }

    /// Distinct types, ascending.
    pub fn distinct(&self) -> Vec<TaskTypeId> {
        let mut v = self.0.clone();
        v.dedup();
        v
    }

    pub fn is_terminal(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    entries: BTreeMap<QState, BTreeMap<Action, f64>>,
    pub default_q: f64,
}

impl Default for QTable {
    fn default() -> Self {
        Self::new(DEFAULT_Q)
    }
}

impl QTable {
    pub fn new(default_q: f64) -> Self {
        Self {
            entries: BTreeMap::new(),
            default_q,
        }
    }

    pub fn get(&self, state: &QState, action: &Action) -> f64 {
        self.learned(state, action).unwrap_or(self.default_q)
    }

    /// The stored value, if the entry has ever been written.
    pub fn learned(&self, state: &QState, action: &Action) -> Option<f64> {
        self.entries.get(state).and_then(|m| m.get(action)).copied()
    }

    pub fn set(&mut self, state: &QState, action: Action, q: f64) {
        assert!(q.is_finite(), "q value must be finite");
        self.entries
            .entry(state.clone())
            .or_default()
            .insert(action, q);
    }

    /// Written entries of one state.
    pub fn state_entries(&self, state: &QState) -> impl Iterator<Item = (&Action, &f64)> {
        self.entries.get(state).into_iter().flatten()
    }

    pub fn states(&self) -> impl Iterator<Item = &QState> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&QState, &Action, f64)> {
        self.entries
            .iter()
            .flat_map(|(s, m)| m.iter().map(move |(a, q)| (s, a, *q)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&QState, &mut BTreeMap<Action, f64>)> {
        self.entries.iter_mut()
    }

    /// Best learned value in `state`; `default_q` when nothing has been
    /// learned there and 0 in the terminal state.
    pub fn max_value(&self, state: &QState) -> f64 {
        if state.is_terminal() {
            return 0.0;
        }
        self.state_entries(state)
            .map(|(_, q)| *q)
            .reduce(f64::max)
            .unwrap_or(self.default_q)
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<(), LearningError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(LearningError::ParameterOutOfRange { name, value })
    }
}

/// One Q-learning step on a single entry.
pub fn rl_update(
    q: &mut QTable,
    state: &QState,
    action: Action,
    reward: f64,
    next_state: &QState,
    alpha: f64,
    gamma: f64,
) -> Result<(), LearningError> {
    check_unit("alpha", alpha)?;
    check_unit("gamma", gamma)?;
    if !reward.is_finite() {
        return Err(LearningError::ParameterOutOfRange {
            name: "reward",
            value: reward,
        });
    }
    if alpha == 0.0 {
        return Ok(());
    }
    let old = q.get(state, &action);
    let target = reward + gamma * q.max_value(next_state);
    q.set(state, action, old + alpha * (target - old));
    Ok(())
}

/// Values of the given actions in `state`, defaults filled in.
pub fn rl_select(q: &QTable, state: &QState, actions: &[Action]) -> Vec<(Action, f64)> {
    actions.iter().map(|a| (*a, q.get(state, a))).collect()
}

/// Whether `action` is currently possible for the agent given its knowledge
/// and neighbourhood. Allocation and information requests go to neighbours,
/// links go to known non-neighbours.
pub fn is_available(action: &Action, agent: &AgentState) -> bool {
    match *action {
        Action::Alloc { target, .. } | Action::Info { target, .. } => {
            agent.neighbourhood.contains(&target)
        }
        Action::Link { known, .. } => {
            agent.knowledge.contains(&known) && !agent.neighbourhood.contains(&known)
        }
        Action::RemoveLink { neighbour, .. } => agent.neighbourhood.contains(&neighbour),
        Action::RemoveInfo { known, .. } => {
            agent.knowledge.contains(&known) && !agent.neighbourhood.contains(&known)
        }
        Action::Exec { .. } | Action::ProvideInfo { .. } => true,
    }
}

/// Every learnable action open to `actor` in `state`: an ALLOC per
/// (type, neighbour), an INFO per neighbour and a LINK per known
/// non-neighbour.
pub fn action_space(actor: AgentId, state: &QState, agent: &AgentState) -> Vec<Action> {
    let mut out = Vec::new();
    for task_type in state.distinct() {
        for &target in &agent.neighbourhood {
            out.push(Action::Alloc {
                actor,
                task_type,
                target,
            });
        }
    }
    for &target in &agent.neighbourhood {
        out.push(Action::Info { actor, target });
    }
    for known in agent.known_only() {
        out.push(Action::Link { actor, known });
    }
    out
}

/// Currently possible actions with their values.
pub fn available(
    q: &QTable,
    actor: AgentId,
    state: &QState,
    agent: &AgentState,
) -> Vec<(Action, f64)> {
    rl_select(q, state, &action_space(actor, state, agent))
}

/// Learned, targeted entries of `state` that are not currently possible.
pub fn unavailable(q: &QTable, state: &QState, agent: &AgentState) -> Vec<(Action, f64)> {
    q.state_entries(state)
        .filter(|(a, _)| a.target().is_some() && !is_available(a, agent))
        .map(|(a, v)| (*a, *v))
        .collect()
}

/// Deletes every entry of the given actions, in every state.
pub fn rl_remove(q: &mut QTable, actions: &BTreeSet<Action>) {
    for m in q.entries.values_mut() {
        m.retain(|a, _| !actions.contains(a));
    }
    q.entries.retain(|_, m| !m.is_empty());
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    pub action: Action,
    pub time: Tick,
    pub quality: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct ActionStats {
    count: usize,
    latest: Tick,
}

/// Time-ordered history of one agent's actions. Per-action counts and
/// per-agent quality sums are indexed so the retention metrics stay cheap.
#[derive(Clone, Debug, Default)]
pub struct ActionSampleStore {
    samples: Vec<ActionSample>,
    stats: BTreeMap<Action, ActionStats>,
    by_agent: BTreeMap<AgentId, f64>,
    allocs_to: BTreeMap<AgentId, usize>,
}

impl ActionSampleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sample: ActionSample) -> Result<(), LearningError> {
        if let Some(last) = self.samples.last() {
            if sample.time < last.time {
                return Err(LearningError::OutOfOrder {
                    time: sample.time,
                    latest: last.time,
                });
            }
        }
        let st = self.stats.entry(sample.action).or_default();
        st.count += 1;
        st.latest = sample.time;
        for a in unique(sample.action.payload_agents()) {
            *self.by_agent.entry(a).or_insert(0.0) += sample.quality;
        }
        if let Action::Alloc { target, .. } = sample.action {
            *self.allocs_to.entry(target).or_insert(0) += 1;
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn samples(&self) -> &[ActionSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples whose action is in `actions`, in history order.
    pub fn select<'a>(
        &'a self,
        actions: &'a BTreeSet<Action>,
    ) -> impl Iterator<Item = &'a ActionSample> + 'a {
        self.samples
            .iter()
            .filter(move |s| actions.contains(&s.action))
    }

    pub fn count(&self, action: &Action) -> usize {
        self.stats.get(action).map_or(0, |s| s.count)
    }

    pub fn latest(&self, action: &Action) -> Option<Tick> {
        self.stats.get(action).map(|s| s.latest)
    }

    /// Whether any sample involves `agent`.
    pub fn mentions(&self, agent: AgentId) -> bool {
        self.by_agent.contains_key(&agent)
    }

    /// Whether any ALLOC sample targeted `agent`, i.e. it has returned a
    /// quality (possibly zero) at least once.
    pub fn has_returns(&self, agent: AgentId) -> bool {
        self.allocs_to.contains_key(&agent)
    }

    /// Drops every sample of the given actions, keeping the rest in order.
    pub fn remove_actions(&mut self, actions: &BTreeSet<Action>) {
        if actions.iter().all(|a| !self.stats.contains_key(a)) {
            return;
        }
        self.samples.retain(|s| !actions.contains(&s.action));
        self.rebuild_index();
    }

    fn rebuild_index(&mut self) {
        self.stats.clear();
        self.by_agent.clear();
        self.allocs_to.clear();
        let samples = std::mem::take(&mut self.samples);
        for s in samples {
            self.push(s).expect("history was already ordered");
        }
    }
}

fn unique(mut v: Vec<AgentId>) -> Vec<AgentId> {
    v.sort();
    v.dedup();
    v
}

/// Information value of an action's history: sample count over staleness.
/// Zero without samples and infinite when the latest sample is from `now`.
pub fn mv(store: &ActionSampleStore, action: &Action, now: Tick) -> f64 {
    match store.stats.get(action) {
        None => 0.0,
        Some(st) => {
            if now <= st.latest {
                f64::INFINITY
            } else {
                st.count as f64 / (now - st.latest) as f64
            }
        }
    }
}

/// Summed quality of the samples whose action involves any member of `group`.
pub fn nval(store: &ActionSampleStore, group: &BTreeSet<AgentId>) -> f64 {
    if group.len() == 1 {
        let a = group.iter().next().unwrap();
        return store.by_agent.get(a).copied().unwrap_or(0.0);
    }
    store
        .samples
        .iter()
        .filter(|s| s.action.targets_any(group))
        .map(|s| s.quality)
        .sum()
}

/// The neighbour with the lowest information value, lowest id on ties.
pub fn mvn(store: &ActionSampleStore, neighbourhood: &BTreeSet<AgentId>) -> Option<AgentId> {
    let mut best: Option<(AgentId, f64)> = None;
    for &n in neighbourhood {
        let v = store.by_agent.get(&n).copied().unwrap_or(0.0);
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((n, v));
        }
    }
    best.map(|(n, _)| n)
}

pub fn sumnorm<T: Clone>(pairs: &[(T, f64)]) -> Result<Vec<(T, f64)>, LearningError> {
    let sum: f64 = pairs.iter().map(|(_, v)| v).sum();
    if !(sum > 0.0) {
        return Err(LearningError::ZeroSum(sum));
    }
    Ok(pairs.iter().map(|(x, v)| (x.clone(), v / sum)).collect())
}

pub fn softmax<T: Clone>(pairs: &[(T, f64)]) -> Vec<(T, f64)> {
    let max = pairs
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = pairs.iter().map(|(_, v)| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    pairs
        .iter()
        .zip(exps)
        .map(|((x, _), e)| (x.clone(), e / sum))
        .collect()
}

pub fn rand_select<T: Clone, R: Rng + ?Sized>(
    pairs: &[(T, f64)],
    rng: &mut R,
) -> Result<T, LearningError> {
    if pairs.is_empty() {
        return Err(LearningError::Empty);
    }
    Ok(pairs[rng.random_range(0..pairs.len())].0.clone())
}

/// An element of maximal value, uniformly among ties.
pub fn max_select<T: Clone, R: Rng + ?Sized>(
    pairs: &[(T, f64)],
    rng: &mut R,
) -> Result<T, LearningError> {
    let max = pairs
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<&T> = pairs
        .iter()
        .filter(|(_, v)| *v == max)
        .map(|(x, _)| x)
        .collect();
    if ties.is_empty() {
        return Err(LearningError::Empty);
    }
    Ok(ties[rng.random_range(0..ties.len())].clone())
}

/// Draws from the softmax of `value / tau`.
pub fn boltzmann_select<T: Clone, R: Rng + ?Sized>(
    pairs: &[(T, f64)],
    tau: f64,
    rng: &mut R,
) -> Result<T, LearningError> {
    if !(tau > 0.0) {
        return Err(LearningError::NonPositiveTemperature(tau));
    }
    if pairs.is_empty() {
        return Err(LearningError::Empty);
    }
    let scaled: Vec<(T, f64)> = pairs.iter().map(|(x, v)| (x.clone(), v / tau)).collect();
    let probs = softmax(&scaled);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (x, p) in &probs {
        acc += p;
        if u < acc {
            return Ok(x.clone());
        }
    }
    Ok(probs.last().unwrap().0.clone())
}
