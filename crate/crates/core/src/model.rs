//! Domain types of the task-allocation system and the operational semantics
//! of its action rules.
//!
//! Every `apply_*` function is a pure transition: it takes the current
//! [`SystemState`] by reference and returns the successor state (or an error
//! naming the violated precondition). Nothing here touches global state, so a
//! replay of the same `(state, action, seed)` triple always yields the same
//! successor.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Discrete simulation time.
pub type Tick = u64;

/// Identifier of an atomic task type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskTypeId(pub u16);

/// Identifier of a composite task type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CompositeTypeId(pub u16);

/// Identifier of an agent inside the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub u32);

/// Identifier of an external requester. External agents carry no state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExternalId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

impl fmt::Display for TaskTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ap{}", self.0)
    }
}

/// An individually executable task.
///
/// `origin` is the time identifier of the requirement the task belongs to and
/// `index` its position inside that composite, so two tasks of the same type
/// in one composite stay distinct.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AtomicTask {
    pub task_type: TaskTypeId,
    pub origin: Tick,
    pub index: u16,
    pub creation_time: Tick,
}

/// A set of atomic tasks overseen by one parent agent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeTask {
    pub composite_type: CompositeTypeId,
    pub tasks: Vec<AtomicTask>,
    pub arrival_time: Tick,
}

impl CompositeTask {
    /// Builds the composite for a type multiset arriving at `arrival_time`.
    pub fn new(composite_type: CompositeTypeId, types: &[TaskTypeId], arrival_time: Tick) -> Self {
        let tasks = types
            .iter()
            .enumerate()
            .map(|(i, &task_type)| AtomicTask {
                task_type,
                origin: arrival_time,
                index: i as u16,
                creation_time: arrival_time,
            })
            .collect();
        Self {
            composite_type,
            tasks,
            arrival_time,
        }
    }

    /// The sorted multiset of member task types.
    pub fn type_multiset(&self) -> Vec<TaskTypeId> {
        let mut v: Vec<_> = self.tasks.iter().map(|t| t.task_type).collect();
        v.sort();
        v
    }
}

/// Static description of an agent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub capabilities: BTreeSet<TaskTypeId>,
    pub responsibilities: BTreeSet<CompositeTypeId>,
    /// Neighbourhood constraint.
    pub delta_n: usize,
    /// Knowledge constraint.
    pub delta_k: usize,
}

impl AgentSpec {
    pub fn is_capable(&self, task_type: TaskTypeId) -> bool {
        self.capabilities.contains(&task_type)
    }
}

/// Dynamic knowledge and neighbourhood of an agent. `N ⊆ K` always holds.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub knowledge: BTreeSet<AgentId>,
    pub neighbourhood: BTreeSet<AgentId>,
}

impl AgentState {
    pub fn new(knowledge: BTreeSet<AgentId>, neighbourhood: BTreeSet<AgentId>) -> Self {
        debug_assert!(neighbourhood.is_subset(&knowledge));
        Self {
            knowledge,
            neighbourhood,
        }
    }

    /// Known agents that are not neighbours.
    pub fn known_only(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.knowledge
            .iter()
            .copied()
            .filter(|k| !self.neighbourhood.contains(k))
    }
}

/// Who handed a task to its allocatee.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Allocator {
    External(ExternalId),
    Agent(AgentId),
}

/// What an allocation record carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordKind {
    /// A requirement handed to a parent.
    Composite(CompositeTypeId),
    /// A singleton atomic allocation from a parent to a child.
    Atomic,
    /// The information pseudo-task created by an INFO action.
    Info,
}

/// `⟨T, t, allocator, allocatee⟩`.
///
/// Atomic records inherit the time identifier of the requirement they were
/// split from, which is what lets EXEC find every record holding a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub kind: RecordKind,
    pub tasks: Vec<AtomicTask>,
    pub t: Tick,
    pub allocator: Allocator,
    pub allocatee: AgentId,
}

/// Action categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionCategory {
    Alloc,
    Exec,
    Info,
    ProvideInfo,
    RemoveInfo,
    Link,
    RemoveLink,
}

impl ActionCategory {
    pub const ALL: [ActionCategory; 7] = [
        ActionCategory::Alloc,
        ActionCategory::Exec,
        ActionCategory::Info,
        ActionCategory::ProvideInfo,
        ActionCategory::RemoveInfo,
        ActionCategory::Link,
        ActionCategory::RemoveLink,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionCategory::Alloc => "ALLOC",
            ActionCategory::Exec => "EXEC",
            ActionCategory::Info => "INFO",
            ActionCategory::ProvideInfo => "PROVIDE_INFO",
            ActionCategory::RemoveInfo => "REMOVE_INFO",
            ActionCategory::Link => "LINK",
            ActionCategory::RemoveLink => "REMOVE_LINK",
        }
    }
}

/// An action taken by `actor`.
///
/// ALLOC and EXEC name the task *type* rather than the task instance: that is
/// the identity the learner keys its values on, and the instance is supplied
/// to the transition functions separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Alloc {
        actor: AgentId,
        task_type: TaskTypeId,
        target: AgentId,
    },
    Exec {
        actor: AgentId,
        task_type: TaskTypeId,
    },
    Info {
        actor: AgentId,
        target: AgentId,
    },
    ProvideInfo {
        actor: AgentId,
        requester: AgentId,
        subject: AgentId,
    },
    RemoveInfo {
        actor: AgentId,
        known: AgentId,
    },
    Link {
        actor: AgentId,
        known: AgentId,
    },
    RemoveLink {
        actor: AgentId,
        neighbour: AgentId,
    },
}

impl Action {
    pub fn category(&self) -> ActionCategory {
        match self {
            Action::Alloc { .. } => ActionCategory::Alloc,
            Action::Exec { .. } => ActionCategory::Exec,
            Action::Info { .. } => ActionCategory::Info,
            Action::ProvideInfo { .. } => ActionCategory::ProvideInfo,
            Action::RemoveInfo { .. } => ActionCategory::RemoveInfo,
            Action::Link { .. } => ActionCategory::Link,
            Action::RemoveLink { .. } => ActionCategory::RemoveLink,
        }
    }

    pub fn actor(&self) -> AgentId {
        match *self {
            Action::Alloc { actor, .. }
            | Action::Exec { actor, .. }
            | Action::Info { actor, .. }
            | Action::ProvideInfo { actor, .. }
            | Action::RemoveInfo { actor, .. }
            | Action::Link { actor, .. }
            | Action::RemoveLink { actor, .. } => actor,
        }
    }

    /// Agents referenced by the payload (the actor itself is not included).
    pub fn payload_agents(&self) -> Vec<AgentId> {
        match *self {
            Action::Alloc { target, .. } | Action::Info { target, .. } => vec![target],
            Action::Exec { .. } => Vec::new(),
            Action::ProvideInfo {
                requester, subject, ..
            } => vec![requester, subject],
            Action::RemoveInfo { known, .. } | Action::Link { known, .. } => vec![known],
            Action::RemoveLink { neighbour, .. } => vec![neighbour],
        }
    }

    /// The single agent an agent-to-agent action is aimed at, if any.
    pub fn target(&self) -> Option<AgentId> {
        match *self {
            Action::Alloc { target, .. } | Action::Info { target, .. } => Some(target),
            Action::ProvideInfo { requester, .. } => Some(requester),
            Action::RemoveInfo { known, .. } | Action::Link { known, .. } => Some(known),
            Action::RemoveLink { neighbour, .. } => Some(neighbour),
            Action::Exec { .. } => None,
        }
    }

    /// Whether the payload references any member of `group`.
    pub fn targets_any(&self, group: &BTreeSet<AgentId>) -> bool {
        self.payload_agents().iter().any(|a| group.contains(a))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Action::Alloc {
                actor,
                task_type,
                target,
            } => write!(f, "ALLOC({actor},{task_type},{target})"),
            Action::Exec { actor, task_type } => write!(f, "EXEC({actor},{task_type})"),
            Action::Info { actor, target } => write!(f, "INFO({actor},{target})"),
            Action::ProvideInfo {
                actor,
                requester,
                subject,
            } => write!(f, "PROVIDE_INFO({actor},{requester},{subject})"),
            Action::RemoveInfo { actor, known } => write!(f, "REMOVE_INFO({actor},{known})"),
            Action::Link { actor, known } => write!(f, "LINK({actor},{known})"),
            Action::RemoveLink { actor, neighbour } => {
                write!(f, "REMOVE_LINK({actor},{neighbour})")
            }
        }
    }
}

/// Actions of `actor` whose payload references a member of `group`.
pub fn target_actions<'a, I>(actions: I, actor: AgentId, group: &BTreeSet<AgentId>) -> Vec<Action>
where
    I: IntoIterator<Item = &'a Action>,
{
    actions
        .into_iter()
        .filter(|a| a.actor() == actor && a.targets_any(group))
        .copied()
        .collect()
}

/// How a provider picks the agent it reports on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProvideInfoSource {
    /// Uniform over the provider's whole knowledge base.
    #[default]
    Knowledge,
    /// Uniform over the provider's neighbourhood only.
    Neighbourhood,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransitionError {
    #[error("no agent is responsible for composite type {0:?}")]
    NoResponsibleAgent(CompositeTypeId),
    #[error("{target} is not in the neighbourhood of {actor}")]
    NotInNeighbourhood { actor: AgentId, target: AgentId },
    #[error("{actor} does not hold the task")]
    TaskNotHeld { actor: AgentId },
    #[error("task has already been allocated")]
    AlreadyAllocated,
    #[error("{actor} is not capable of {task_type}")]
    NotCapable {
        actor: AgentId,
        task_type: TaskTypeId,
    },
    #[error("{provider} knows no agents")]
    EmptyKnowledge { provider: AgentId },
    #[error("{actor} has no pending information request from {requester}")]
    NoInfoRequest { actor: AgentId, requester: AgentId },
    #[error("{known} is in the neighbourhood of {actor}")]
    InNeighbourhood { actor: AgentId, known: AgentId },
    #[error("{known} is not known to {actor}")]
    NotKnown { actor: AgentId, known: AgentId },
    #[error("{neighbour} is not a neighbour of {actor}")]
    NotNeighbour { actor: AgentId, neighbour: AgentId },
    #[error("neighbourhood of {actor} is full")]
    NeighbourhoodFull { actor: AgentId },
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
}

/// The system state: the agent universe, their dynamic states and the live
/// allocations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub specs: BTreeMap<AgentId, AgentSpec>,
    pub agent_states: BTreeMap<AgentId, AgentState>,
    pub allocations: Vec<AllocationRecord>,
    pub clock: Tick,
    /// Tasks executed by each agent in the current concurrency window.
    pub window_load: BTreeMap<AgentId, u32>,
}

impl SystemState {
    pub fn new(specs: Vec<AgentSpec>, states: BTreeMap<AgentId, AgentState>) -> Self {
        let specs: BTreeMap<_, _> = specs.into_iter().map(|s| (s.id, s)).collect();
        let mut agent_states = states;
        for id in specs.keys() {
            agent_states.entry(*id).or_default();
        }
        Self {
            specs,
            agent_states,
            allocations: Vec::new(),
            clock: 0,
            window_load: BTreeMap::new(),
        }
    }

    pub fn spec(&self, id: AgentId) -> Result<&AgentSpec, TransitionError> {
        self.specs.get(&id).ok_or(TransitionError::UnknownAgent(id))
    }

    pub fn agent_state(&self, id: AgentId) -> Result<&AgentState, TransitionError> {
        self.agent_states
            .get(&id)
            .ok_or(TransitionError::UnknownAgent(id))
    }

    pub fn agent_state_mut(&mut self, id: AgentId) -> Result<&mut AgentState, TransitionError> {
        self.agent_states
            .get_mut(&id)
            .ok_or(TransitionError::UnknownAgent(id))
    }

    /// Current concurrent count for `agent` (tasks executed in this window).
    pub fn concurrent_count(&self, agent: AgentId) -> u32 {
        self.window_load.get(&agent).copied().unwrap_or(0)
    }

    /// Ends the current concurrency window.
    pub fn close_window(&mut self) {
        self.window_load.clear();
    }

    /// Whether `actor` holds `task` in a live record.
    pub fn holds(&self, actor: AgentId, task: &AtomicTask) -> bool {
        self.allocations
            .iter()
            .any(|r| r.allocatee == actor && r.kind != RecordKind::Info && r.tasks.contains(task))
    }

    fn tick(&mut self) -> Tick {
        let t = self.clock;
        self.clock += 1;
        t
    }
}

/// Requirement assignment: hands `composite` to a uniformly random responsible
/// agent, using the current clock as the time identifier.
pub fn apply_requirement<R: Rng + ?Sized>(
    state: &SystemState,
    composite: &CompositeTask,
    external: ExternalId,
    rng: &mut R,
) -> Result<(SystemState, AgentId), TransitionError> {
    let responsible: Vec<AgentId> = state
        .specs
        .values()
        .filter(|s| s.responsibilities.contains(&composite.composite_type))
        .map(|s| s.id)
        .collect();
    let parent = *responsible
        .choose(rng)
        .ok_or(TransitionError::NoResponsibleAgent(
            composite.composite_type,
        ))?;
    let mut next = state.clone();
    let t = next.tick();
    let tasks = composite
        .tasks
        .iter()
        .map(|at| AtomicTask { origin: t, ..*at })
        .collect();
    next.allocations.push(AllocationRecord {
        kind: RecordKind::Composite(composite.composite_type),
        tasks,
        t,
        allocator: Allocator::External(external),
        allocatee: parent,
    });
    Ok((next, parent))
}

/// Allocation: `actor` hands a task it holds to a neighbour.
pub fn apply_alloc(
    state: &SystemState,
    actor: AgentId,
    task: &AtomicTask,
    target: AgentId,
) -> Result<SystemState, TransitionError> {
    let st = state.agent_state(actor)?;
    state.spec(target)?;
    if !st.neighbourhood.contains(&target) {
        return Err(TransitionError::NotInNeighbourhood { actor, target });
    }
    let already = state
        .allocations
        .iter()
        .any(|r| r.kind == RecordKind::Atomic && r.tasks.contains(task));
    if already {
        return Err(TransitionError::AlreadyAllocated);
    }
    if !state.holds(actor, task) {
        return Err(TransitionError::TaskNotHeld { actor });
    }
    let mut next = state.clone();
    next.tick();
    next.allocations.push(AllocationRecord {
        kind: RecordKind::Atomic,
        tasks: vec![*task],
        t: task.origin,
        allocator: Allocator::Agent(actor),
        allocatee: target,
    });
    Ok(next)
}

/// Execution: `actor` completes a task it holds. The task disappears from
/// every live record sharing its time identifier; records left empty are
/// dropped. Returns the completion quality computed by `quality` at the
/// actor's concurrent count in the current window (this task included).
pub fn apply_exec<F>(
    state: &SystemState,
    actor: AgentId,
    task: &AtomicTask,
    quality: F,
) -> Result<(SystemState, f64), TransitionError>
where
    F: FnOnce(AgentId, TaskTypeId, u32) -> f64,
{
    let spec = state.spec(actor)?;
    if !state.holds(actor, task) {
        return Err(TransitionError::TaskNotHeld { actor });
    }
    if !spec.is_capable(task.task_type) {
        return Err(TransitionError::NotCapable {
            actor,
            task_type: task.task_type,
        });
    }
    let mut next = state.clone();
    next.tick();
    let k = next.concurrent_count(actor) + 1;
    next.window_load.insert(actor, k);
    for r in next.allocations.iter_mut().filter(|r| r.t == task.origin) {
        r.tasks.retain(|x| x != task);
    }
    next.allocations
        .retain(|r| r.kind == RecordKind::Info || !r.tasks.is_empty());
    let q = quality(actor, task.task_type, k);
    Ok((next, q))
}

/// Information request: records the information pseudo-task on `target`.
pub fn apply_info(
    state: &SystemState,
    actor: AgentId,
    target: AgentId,
) -> Result<SystemState, TransitionError> {
    let st = state.agent_state(actor)?;
    if !st.neighbourhood.contains(&target) {
        return Err(TransitionError::NotInNeighbourhood { actor, target });
    }
    let mut next = state.clone();
    let t = next.tick();
    next.allocations.push(AllocationRecord {
        kind: RecordKind::Info,
        tasks: Vec::new(),
        t,
        allocator: Allocator::Agent(actor),
        allocatee: target,
    });
    Ok(next)
}

/// Provide information: `provider` answers the oldest pending request from
/// `requester` by telling it about `subject`.
pub fn apply_provide_info(
    state: &SystemState,
    provider: AgentId,
    requester: AgentId,
    subject: AgentId,
) -> Result<SystemState, TransitionError> {
    let pk = state.agent_state(provider)?;
    if pk.knowledge.is_empty() {
        return Err(TransitionError::EmptyKnowledge { provider });
    }
    if !pk.knowledge.contains(&subject) {
        return Err(TransitionError::NotKnown {
            actor: provider,
            known: subject,
        });
    }
    let pos = state
        .allocations
        .iter()
        .position(|r| {
            r.kind == RecordKind::Info
                && r.allocatee == provider
                && r.allocator == Allocator::Agent(requester)
        })
        .ok_or(TransitionError::NoInfoRequest {
            actor: provider,
            requester,
        })?;
    let mut next = state.clone();
    next.tick();
    next.allocations.remove(pos);
    next.agent_state_mut(requester)?.knowledge.insert(subject);
    Ok(next)
}

/// Picks the subject a provider reports on.
pub fn choose_info_subject<R: Rng + ?Sized>(
    state: &SystemState,
    provider: AgentId,
    source: ProvideInfoSource,
    rng: &mut R,
) -> Result<AgentId, TransitionError> {
    let st = state.agent_state(provider)?;
    let pool: Vec<AgentId> = match source {
        ProvideInfoSource::Knowledge => st.knowledge.iter().copied().collect(),
        ProvideInfoSource::Neighbourhood => st.neighbourhood.iter().copied().collect(),
    };
    pool.choose(rng)
        .copied()
        .ok_or(TransitionError::EmptyKnowledge { provider })
}

/// INFO resolved synchronously: the request is recorded and answered in one
/// transition. Returns the successor state and the subject reported.
pub fn apply_info_exchange<R: Rng + ?Sized>(
    state: &SystemState,
    actor: AgentId,
    target: AgentId,
    source: ProvideInfoSource,
    rng: &mut R,
) -> Result<(SystemState, AgentId), TransitionError> {
    let requested = apply_info(state, actor, target)?;
    let subject = choose_info_subject(&requested, target, source, rng)?;
    let next = apply_provide_info(&requested, target, actor, subject)?;
    Ok((next, subject))
}

/// Remove info: forget a known agent that is not a neighbour.
pub fn apply_remove_info(
    state: &SystemState,
    actor: AgentId,
    known: AgentId,
) -> Result<SystemState, TransitionError> {
    let st = state.agent_state(actor)?;
    if st.neighbourhood.contains(&known) {
        return Err(TransitionError::InNeighbourhood { actor, known });
    }
    if !st.knowledge.contains(&known) {
        return Err(TransitionError::NotKnown { actor, known });
    }
    let mut next = state.clone();
    next.tick();
    next.agent_state_mut(actor)?.knowledge.remove(&known);
    Ok(next)
}

/// Link: add a known agent to the neighbourhood. One element of overflow
/// beyond `delta_n` is tolerated; pruning restores the bound.
pub fn apply_link(
    state: &SystemState,
    actor: AgentId,
    known: AgentId,
) -> Result<SystemState, TransitionError> {
    let spec = state.spec(actor)?;
    let st = state.agent_state(actor)?;
    if !st.knowledge.contains(&known) {
        return Err(TransitionError::NotKnown { actor, known });
    }
    if st.neighbourhood.contains(&known) {
        return Ok(state.clone());
    }
    if st.neighbourhood.len() > spec.delta_n {
        return Err(TransitionError::NeighbourhoodFull { actor });
    }
    let mut next = state.clone();
    next.tick();
    next.agent_state_mut(actor)?.neighbourhood.insert(known);
    Ok(next)
}

/// Remove link: drop a neighbour. Knowledge is unchanged.
pub fn apply_remove_link(
    state: &SystemState,
    actor: AgentId,
    neighbour: AgentId,
) -> Result<SystemState, TransitionError> {
    let st = state.agent_state(actor)?;
    if !st.neighbourhood.contains(&neighbour) {
        return Err(TransitionError::NotNeighbour { actor, neighbour });
    }
    let mut next = state.clone();
    next.tick();
    next.agent_state_mut(actor)?
        .neighbourhood
        .remove(&neighbour);
    Ok(next)
}

/// Whether `N` exceeds `delta_n` (a LINK has left one element of overflow).
pub fn needs_prune(state: &SystemState, actor: AgentId) -> Result<bool, TransitionError> {
    Ok(state.agent_state(actor)?.neighbourhood.len() > state.spec(actor)?.delta_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tt(i: u16) -> TaskTypeId {
        TaskTypeId(i)
    }

    fn spec(id: u32, caps: &[u16], resp: &[u16]) -> AgentSpec {
        AgentSpec {
            id: AgentId(id),
            capabilities: caps.iter().map(|&c| tt(c)).collect(),
            responsibilities: resp.iter().map(|&c| CompositeTypeId(c)).collect(),
            delta_n: 2,
            delta_k: 3,
        }
    }

    fn ids(v: &[u32]) -> BTreeSet<AgentId> {
        v.iter().map(|&i| AgentId(i)).collect()
    }

    /// Parent 0 responsible for composite 0, children 1..=3.
    fn system() -> SystemState {
        let specs = vec![
            spec(0, &[], &[0]),
            spec(1, &[0, 1], &[]),
            spec(2, &[1], &[]),
            spec(3, &[0], &[]),
        ];
        let mut states = BTreeMap::new();
        states.insert(AgentId(0), AgentState::new(ids(&[1, 2, 3]), ids(&[1, 2])));
        states.insert(AgentId(1), AgentState::new(ids(&[2, 3]), ids(&[2])));
        states.insert(AgentId(2), AgentState::new(ids(&[0]), ids(&[])));
        SystemState::new(specs, states)
    }

    fn with_requirement() -> (SystemState, CompositeTask) {
        let s = system();
        let ct = CompositeTask::new(CompositeTypeId(0), &[tt(0), tt(1)], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, parent) = apply_requirement(&s, &ct, ExternalId(0), &mut rng).unwrap();
        assert_eq!(parent, AgentId(0));
        let held = s.allocations[0].tasks.clone();
        (s, CompositeTask { tasks: held, ..ct })
    }

    #[test]
    fn requirement_without_responsible_agent() {
        let s = system();
        let ct = CompositeTask::new(CompositeTypeId(9), &[tt(0)], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            apply_requirement(&s, &ct, ExternalId(0), &mut rng).unwrap_err(),
            TransitionError::NoResponsibleAgent(CompositeTypeId(9))
        );
    }

    #[test]
    fn requirement_choice_is_uniform_over_responsible_agents() {
        let mut specs = vec![spec(0, &[], &[0]), spec(1, &[], &[0]), spec(2, &[0], &[])];
        specs[1].responsibilities.insert(CompositeTypeId(0));
        let s = SystemState::new(specs, BTreeMap::new());
        let ct = CompositeTask::new(CompositeTypeId(0), &[tt(0)], 0);
        let trials = 10_000;
        let mut first = 0;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, p) = apply_requirement(&s, &ct, ExternalId(0), &mut rng).unwrap();
            assert_ne!(p, AgentId(2));
            if p == AgentId(0) {
                first += 1;
            }
        }
        let frac = first as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn alloc_appends_one_record() {
        let (s, ct) = with_requirement();
        let n = s.allocations.len();
        let s2 = apply_alloc(&s, AgentId(0), &ct.tasks[0], AgentId(1)).unwrap();
        assert_eq!(s2.allocations.len(), n + 1);
        let rec = s2.allocations.last().unwrap();
        assert_eq!(rec.allocatee, AgentId(1));
        assert_eq!(rec.t, ct.tasks[0].origin);
        assert!(s2.clock > s.clock);
    }

    #[test]
    fn alloc_preconditions() {
        let (s, ct) = with_requirement();
        assert!(matches!(
            apply_alloc(&s, AgentId(0), &ct.tasks[0], AgentId(3)),
            Err(TransitionError::NotInNeighbourhood { .. })
        ));
        let s2 = apply_alloc(&s, AgentId(0), &ct.tasks[0], AgentId(1)).unwrap();
        assert_eq!(
            apply_alloc(&s2, AgentId(0), &ct.tasks[0], AgentId(2)).unwrap_err(),
            TransitionError::AlreadyAllocated
        );
        // Agent 1 does not hold the second task.
        assert!(matches!(
            apply_alloc(&s2, AgentId(1), &ct.tasks[1], AgentId(2)),
            Err(TransitionError::TaskNotHeld { .. })
        ));
        // A child may not pass an allocated task on.
        assert_eq!(
            apply_alloc(&s2, AgentId(1), &ct.tasks[0], AgentId(2)).unwrap_err(),
            TransitionError::AlreadyAllocated
        );
    }

    #[test]
    fn exec_removes_task_from_every_record_with_its_identifier() {
        let (s, ct) = with_requirement();
        let s = apply_alloc(&s, AgentId(0), &ct.tasks[0], AgentId(1)).unwrap();
        let shared = s
            .allocations
            .iter()
            .filter(|r| r.tasks.contains(&ct.tasks[0]))
            .count();
        assert_eq!(shared, 2);
        let (s2, q) = apply_exec(&s, AgentId(1), &ct.tasks[0], |_, _, k| 0.8 / k as f64).unwrap();
        assert_eq!(q, 0.8);
        assert!(s2
            .allocations
            .iter()
            .all(|r| !r.tasks.contains(&ct.tasks[0])));
        // The composite record still holds the other task.
        assert!(s2.holds(AgentId(0), &ct.tasks[1]));
        assert_eq!(s2.concurrent_count(AgentId(1)), 1);
    }

    #[test]
    fn exec_requires_capability_and_possession() {
        let (s, ct) = with_requirement();
        let s = apply_alloc(&s, AgentId(0), &ct.tasks[0], AgentId(2)).unwrap();
        assert!(matches!(
            apply_exec(&s, AgentId(2), &ct.tasks[0], |_, _, _| 1.0),
            Err(TransitionError::NotCapable { .. })
        ));
        assert!(matches!(
            apply_exec(&s, AgentId(3), &ct.tasks[0], |_, _, _| 1.0),
            Err(TransitionError::TaskNotHeld { .. })
        ));
    }

    #[test]
    fn concurrency_window_counts_executions() {
        let (s, ct) = with_requirement();
        let s = apply_alloc(&s, AgentId(0), &ct.tasks[0], AgentId(1)).unwrap();
        let s = apply_alloc(&s, AgentId(0), &ct.tasks[1], AgentId(1)).unwrap();
        let (s, q0) = apply_exec(&s, AgentId(1), &ct.tasks[0], |_, _, k| 0.8 / k as f64).unwrap();
        let (mut s, q1) =
            apply_exec(&s, AgentId(1), &ct.tasks[1], |_, _, k| 0.8 / k as f64).unwrap();
        assert_eq!((q0, q1), (0.8, 0.4));
        s.close_window();
        assert_eq!(s.concurrent_count(AgentId(1)), 0);
    }

    #[test]
    fn info_exchange_extends_knowledge() {
        let s = system();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Agent 1 knows {2, 3}; both are new to nobody but 0 already knows them.
        let (s2, subject) = apply_info_exchange(
            &s,
            AgentId(0),
            AgentId(1),
            ProvideInfoSource::Knowledge,
            &mut rng,
        )
        .unwrap();
        assert!(ids(&[2, 3]).contains(&subject));
        assert_eq!(s2.agent_states[&AgentId(0)].knowledge, ids(&[1, 2, 3]));
        assert!(s2.allocations.iter().all(|r| r.kind != RecordKind::Info));
    }

    #[test]
    fn provide_info_adds_new_subject_once() {
        let mut s = system();
        s.agent_states
            .get_mut(&AgentId(1))
            .unwrap()
            .knowledge
            .insert(AgentId(4));
        s.specs.insert(AgentId(4), spec(4, &[0], &[]));
        s.agent_states.insert(AgentId(4), AgentState::default());
        let s = apply_info(&s, AgentId(0), AgentId(1)).unwrap();
        let before = s.agent_states[&AgentId(0)].knowledge.len();
        let s2 = apply_provide_info(&s, AgentId(1), AgentId(0), AgentId(4)).unwrap();
        assert_eq!(s2.agent_states[&AgentId(0)].knowledge.len(), before + 1);
        // The request has been consumed.
        assert!(matches!(
            apply_provide_info(&s2, AgentId(1), AgentId(0), AgentId(4)),
            Err(TransitionError::NoInfoRequest { .. })
        ));
    }

    #[test]
    fn provide_info_known_subject_is_idempotent() {
        let s = apply_info(&system(), AgentId(0), AgentId(1)).unwrap();
        let s2 = apply_provide_info(&s, AgentId(1), AgentId(0), AgentId(2)).unwrap();
        assert_eq!(
            s2.agent_states[&AgentId(0)].knowledge,
            s.agent_states[&AgentId(0)].knowledge
        );
    }

    #[test]
    fn provider_knowing_only_requester_reports_requester() {
        // Agent 2 knows only agent 0.
        let mut s = system();
        s.agent_states
            .get_mut(&AgentId(0))
            .unwrap()
            .neighbourhood
            .insert(AgentId(2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s2, subject) = apply_info_exchange(
            &s,
            AgentId(0),
            AgentId(2),
            ProvideInfoSource::Knowledge,
            &mut rng,
        )
        .unwrap();
        assert_eq!(subject, AgentId(0));
        // Self-knowledge is recorded as-is by the formal rule.
        assert!(s2.agent_states[&AgentId(0)].knowledge.contains(&AgentId(0)));
    }

    #[test]
    fn provide_info_from_empty_knowledge() {
        let s = apply_info(&system(), AgentId(0), AgentId(1)).unwrap();
        let mut s = s;
        s.agent_states
            .get_mut(&AgentId(1))
            .unwrap()
            .knowledge
            .clear();
        s.agent_states
            .get_mut(&AgentId(1))
            .unwrap()
            .neighbourhood
            .clear();
        assert!(matches!(
            apply_provide_info(&s, AgentId(1), AgentId(0), AgentId(2)),
            Err(TransitionError::EmptyKnowledge { .. })
        ));
    }

    #[test]
    fn info_to_non_neighbour() {
        assert!(matches!(
            apply_info(&system(), AgentId(0), AgentId(3)),
            Err(TransitionError::NotInNeighbourhood { .. })
        ));
    }

    #[test]
    fn remove_info_rules() {
        let s = system();
        let s2 = apply_remove_info(&s, AgentId(0), AgentId(3)).unwrap();
        assert_eq!(s2.agent_states[&AgentId(0)].knowledge.len(), 2);
        assert!(matches!(
            apply_remove_info(&s, AgentId(0), AgentId(1)),
            Err(TransitionError::InNeighbourhood { .. })
        ));
        assert!(matches!(
            apply_remove_info(&s, AgentId(0), AgentId(7)),
            Err(TransitionError::NotKnown { .. })
        ));
    }

    #[test]
    fn link_and_remove_link_are_inverse() {
        let s = system();
        let mut s1 = s.clone();
        s1.agent_states
            .get_mut(&AgentId(0))
            .unwrap()
            .neighbourhood
            .remove(&AgentId(2));
        let s2 = apply_link(&s1, AgentId(0), AgentId(3)).unwrap();
        let s3 = apply_remove_link(&s2, AgentId(0), AgentId(3)).unwrap();
        assert_eq!(s3.agent_states[&AgentId(0)], s1.agent_states[&AgentId(0)]);
        assert!(matches!(
            apply_remove_link(&s3, AgentId(0), AgentId(3)),
            Err(TransitionError::NotNeighbour { .. })
        ));
    }

    #[test]
    fn link_existing_neighbour_is_idempotent() {
        let s = system();
        let s2 = apply_link(&s, AgentId(0), AgentId(1)).unwrap();
        assert_eq!(s2.agent_states, s.agent_states);
    }

    #[test]
    fn link_overflows_by_exactly_one() {
        let s = system();
        // |N| = delta_n = 2: one transient extra is permitted.
        let s2 = apply_link(&s, AgentId(0), AgentId(3)).unwrap();
        assert_eq!(s2.agent_states[&AgentId(0)].neighbourhood.len(), 3);
        assert!(needs_prune(&s2, AgentId(0)).unwrap());
        let mut s3 = s2.clone();
        s3.agent_states
            .get_mut(&AgentId(0))
            .unwrap()
            .knowledge
            .insert(AgentId(1_000));
        s3.specs.insert(AgentId(1_000), spec(1_000, &[], &[]));
        assert!(matches!(
            apply_link(&s3, AgentId(0), AgentId(1_000)),
            Err(TransitionError::NeighbourhoodFull { .. })
        ));
        assert!(matches!(
            apply_link(&s, AgentId(0), AgentId(9)),
            Err(TransitionError::NotKnown { .. })
        ));
    }

    #[test]
    fn target_actions_filters_by_group() {
        let a = AgentId(0);
        let actions = vec![
            Action::Alloc {
                actor: a,
                task_type: tt(0),
                target: AgentId(1),
            },
            Action::Info {
                actor: a,
                target: AgentId(2),
            },
            Action::Link {
                actor: a,
                known: AgentId(3),
            },
            Action::Exec {
                actor: a,
                task_type: tt(1),
            },
            Action::RemoveLink {
                actor: a,
                neighbour: AgentId(1),
            },
        ];
        assert!(target_actions(&actions, a, &BTreeSet::new()).is_empty());
        let hit = target_actions(&actions, a, &ids(&[1]));
        assert_eq!(hit.len(), 2);
        let all = target_actions(&actions, a, &ids(&[1, 2, 3]));
        assert_eq!(all.len(), 4);
        assert!(target_actions(&actions, AgentId(5), &ids(&[1])).is_empty());
    }

    #[test]
    fn transitions_are_replay_deterministic() {
        let s = system();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            apply_info_exchange(
                &s,
                AgentId(0),
                AgentId(1),
                ProvideInfoSource::Knowledge,
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(run(11), run(11));
    }
}
