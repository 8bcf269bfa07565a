use std::collections::{BTreeMap, HashSet, VecDeque};

use rand::Rng;

use super::{RelabelError, Transition};
use crate::envs::{Embedding, EnvState};

#[derive(Debug, Clone)]
struct Episode {
    task_id: u64,
    episode_id: u64,
    /// Global position of the first transition.
    start: u64,
    transitions: Vec<Transition>,
    /// `s_0 .. s_L`, omitting a failed final successor.
    states: Vec<EnvState>,
}

#[derive(Debug, Clone, Default)]
struct TaskIndex {
    seen: HashSet<Embedding>,
    states: Vec<EnvState>,
}

impl TaskIndex {
    fn insert(&mut self, s: EnvState) {
        if self.seen.insert(s.embedding()) {
            self.states.push(s);
        }
    }
}

/// Position of a transition inside the store: episode slot and time index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeRef {
    pub episode: usize,
    pub t: usize,
}

/// Episodic FIFO replay with whole-episode eviction and per-task indices of
/// distinct experienced states.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    capacity: usize,
    episodes: VecDeque<Episode>,
    len: usize,
    pushed: u64,
    tasks: BTreeMap<u64, TaskIndex>,
}

impl ReplayStore {
    /// `capacity` counts transitions.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            episodes: VecDeque::new(),
            len: 0,
            pushed: 0,
            tasks: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn push(&mut self, tr: Transition) -> Result<(), RelabelError> {
        if tr.t == 0 {
            if let Some(last) = self.episodes.back() {
                if last.episode_id == tr.episode_id && last.task_id == tr.task_id {
                    return Err(RelabelError::NonContiguous(format!(
                        "episode {} restarted at t = 0",
                        tr.episode_id
                    )));
                }
            }
            self.episodes.push_back(Episode {
                task_id: tr.task_id,
                episode_id: tr.episode_id,
                start: self.pushed,
                transitions: Vec::new(),
                states: vec![tr.s],
            });
        } else {
            let last = self.episodes.back().ok_or_else(|| {
                RelabelError::NonContiguous(format!("t = {} with no open episode", tr.t))
            })?;
            let prev = last.transitions.last().expect("episodes are never empty");
            if last.episode_id != tr.episode_id
                || last.task_id != tr.task_id
                || prev.t + 1 != tr.t
                || prev.terminal()
                || prev.next != tr.s
            {
                return Err(RelabelError::NonContiguous(format!(
                    "episode {} t = {} does not continue episode {} t = {}",
                    tr.episode_id, tr.t, last.episode_id, prev.t
                )));
            }
        }
        let ep = self.episodes.back_mut().expect("just ensured");
        if !tr.next.failed() {
            ep.states.push(tr.next);
        }
        ep.transitions.push(tr);
        let index = self.tasks.entry(tr.task_id).or_default();
        index.insert(tr.s);
        if !tr.next.failed() {
            index.insert(tr.next);
        }
        self.len += 1;
        self.pushed += 1;
        while self.len > self.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().expect("more than one episode");
            self.len -= old.transitions.len();
        }
        Ok(())
    }

    pub fn sample_ref<R: Rng + ?Sized>(&self, rng: &mut R) -> EpisodeRef {
        assert!(!self.is_empty(), "sampling from an empty store");
        let base = self.episodes.front().expect("non-empty").start;
        let g = base + rng.random_range(0..self.len as u64);
        let episode = self.episodes.partition_point(|e| e.start <= g) - 1;
        EpisodeRef {
            episode,
            t: (g - self.episodes[episode].start) as usize,
        }
    }

    pub fn transition(&self, at: EpisodeRef) -> &Transition {
        &self.episodes[at.episode].transitions[at.t]
    }

    pub fn episode_transitions(&self, episode: usize) -> &[Transition] {
        &self.episodes[episode].transitions
    }

    /// States visited by an episode in order, the final successor included
    /// unless it failed.
    pub fn episode_states(&self, episode: usize) -> &[EnvState] {
        &self.episodes[episode].states
    }

    /// Distinct states ever observed on a task, in first-seen order.
    pub fn task_states(&self, task_id: u64) -> Option<&[EnvState]> {
        self.tasks.get(&task_id).map(|t| t.states.as_slice())
    }

    pub fn task_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.tasks.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }
}
