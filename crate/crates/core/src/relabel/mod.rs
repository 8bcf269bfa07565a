//! Hindsight relabeling over an episodic replay store.

mod store;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

pub use store::{EpisodeRef, ReplayStore};

use crate::envs::{indicator, target_of, Action, Embedding, EnvState, Target};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub task_id: u64,
    pub episode_id: u64,
    pub t: u32,
    pub s: EnvState,
    pub action: Action,
    pub reward: f64,
    pub next: EnvState,
}

impl Transition {
    pub fn terminal(&self) -> bool {
        self.next.terminal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Future,
    Episode,
    Pertask,
    Generate,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Future,
        Strategy::Episode,
        Strategy::Pertask,
        Strategy::Generate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Future => "future",
            Strategy::Episode => "episode",
            Strategy::Pertask => "pertask",
            Strategy::Generate => "generate",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = RelabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| RelabelError::InvalidMix(format!("unknown strategy `{s}`")))
    }
}

/// A transition paired with a hindsight target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelabeledSample {
    pub transition: Transition,
    pub target: Target,
    /// `h(s', target)`.
    pub h_flag: bool,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RelabelError {
    #[error("replay store is empty")]
    EmptyStore,
    #[error("no later state in the episode")]
    FutureEmpty,
    #[error("generate strategy requested without a generator")]
    MissingGenerator,
    #[error("generator abstained")]
    GeneratorAbstained,
    #[error("no states recorded for task {0}")]
    UnknownTask(u64),
    #[error("transition breaks episode contiguity: {0}")]
    NonContiguous(String),
    #[error("invalid mix: {0}")]
    InvalidMix(String),
}

/// Proposes targets conditioned on a transition's source state.
pub trait TargetGenerator {
    /// `None` means abstention.
    fn generate(&self, transition: &Transition, rng: &mut dyn RngCore) -> Option<Target>;
}

/// Strategy weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mix {
    weights: Vec<(Strategy, f64)>,
}

impl Mix {
    pub fn new(weights: Vec<(Strategy, f64)>) -> Result<Self, RelabelError> {
        if weights.is_empty() {
            return Err(RelabelError::InvalidMix("no strategies".into()));
        }
        if weights.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(RelabelError::InvalidMix("weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(RelabelError::InvalidMix(format!("weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    /// 50% episode, 25% pertask, 25% generate.
    pub fn fepg() -> Self {
        Self::new(vec![
            (Strategy::Episode, 0.5),
            (Strategy::Pertask, 0.25),
            (Strategy::Generate, 0.25),
        ])
        .expect("valid preset")
    }

    pub fn only(strategy: Strategy) -> Self {
        Self::new(vec![(strategy, 1.0)]).expect("valid preset")
    }

    pub fn episode_pertask() -> Self {
        Self::new(vec![(Strategy::Episode, 0.5), (Strategy::Pertask, 0.5)]).expect("valid preset")
    }

    pub fn episode_generate() -> Self {
        Self::new(vec![(Strategy::Episode, 0.5), (Strategy::Generate, 0.5)]).expect("valid preset")
    }

    /// Parses `name` presets or `strategy:weight,...` lists.
    pub fn parse(s: &str) -> Result<Self, RelabelError> {
        match s {
            "fepg" => return Ok(Self::fepg()),
            "feg" => return Ok(Self::episode_generate()),
            "fep" => return Ok(Self::episode_pertask()),
            "future" | "episode" | "pertask" | "generate" => return Ok(Self::only(s.parse()?)),
            _ => {}
        }
        let mut weights = Vec::new();
        for part in s.split(',') {
            let (name, w) = part
                .split_once(':')
                .ok_or_else(|| RelabelError::InvalidMix(format!("expected strategy:weight, got `{part}`")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| RelabelError::InvalidMix(format!("bad weight `{w}`")))?;
            weights.push((name.trim().parse()?, w));
        }
        Self::new(weights)
    }

    pub fn weights(&self) -> &[(Strategy, f64)] {
        &self.weights
    }

    pub fn weight(&self, strategy: Strategy) -> f64 {
        self.weights
            .iter()
            .filter(|(k, _)| *k == strategy)
            .map(|(_, w)| w)
            .sum()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, exclude: Option<Strategy>) -> Option<Strategy> {
        let total: f64 = self
            .weights
            .iter()
            .filter(|(k, _)| Some(*k) != exclude)
            .map(|(_, w)| w)
            .sum();
        if total <= 0.0 {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        let mut last = None;
        for &(k, w) in &self.weights {
            if Some(k) == exclude || w <= 0.0 {
                continue;
            }
            if u < w {
                return Some(k);
            }
            u -= w;
            last = Some(k);
        }
        last
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .weights
            .iter()
            .map(|(k, w)| format!("{k}:{w}"))
            .collect();
        f.write_str(&parts.join(","))
    }
}

/// Relabels one stored transition with a single strategy.
pub fn relabel<R: Rng>(
    store: &ReplayStore,
    at: EpisodeRef,
    strategy: Strategy,
    generator: Option<&dyn TargetGenerator>,
    radius: u8,
    rng: &mut R,
) -> Result<Target, RelabelError> {
    let tr = store.transition(at);
    let state = match strategy {
        Strategy::Future => {
            let states = store.episode_states(at.episode);
            let t = tr.t as usize;
            if t + 1 >= states.len() {
                return Err(RelabelError::FutureEmpty);
            }
            states[rng.random_range(t + 1..states.len())]
        }
        Strategy::Episode => {
            let states = store.episode_states(at.episode);
            states[rng.random_range(0..states.len())]
        }
        Strategy::Pertask => {
            let aux = store
                .task_states(tr.task_id)
                .ok_or(RelabelError::UnknownTask(tr.task_id))?;
            aux[rng.random_range(0..aux.len())]
        }
        Strategy::Generate => {
            let generator = generator.ok_or(RelabelError::MissingGenerator)?;
            return generator
                .generate(tr, rng)
                .map(|t| Target::new(t.embedding, radius))
                .ok_or(RelabelError::GeneratorAbstained);
        }
    };
    Ok(target_of(&state, radius))
}

/// Draws `batch_size` uniformly chosen transitions and relabels each with a
/// strategy drawn from `mix`.
///
/// A `future` draw with no later state falls back to `episode`; a generator
/// abstention redraws among the remaining strategies in proportion to their
/// weights.
pub fn sample_batch<R: Rng>(
    store: &ReplayStore,
    mix: &Mix,
    batch_size: usize,
    generator: Option<&dyn TargetGenerator>,
    radius: u8,
    rng: &mut R,
) -> Result<Vec<RelabeledSample>, RelabelError> {
    if store.is_empty() {
        return Err(RelabelError::EmptyStore);
    }
    if generator.is_none() && mix.weight(Strategy::Generate) > 0.0 {
        return Err(RelabelError::MissingGenerator);
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let at = store.sample_ref(rng);
        let mut strategy = mix.draw(rng, None).expect("mix has positive weight");
        let target = loop {
            match relabel(store, at, strategy, generator, radius, rng) {
                Ok(t) => break t,
                Err(RelabelError::FutureEmpty) => strategy = Strategy::Episode,
                Err(RelabelError::GeneratorAbstained) => {
                    strategy = mix.draw(rng, Some(Strategy::Generate)).unwrap_or(Strategy::Episode)
                }
                Err(e) => return Err(e),
            }
        };
        let transition = *store.transition(at);
        out.push(RelabeledSample {
            transition,
            target,
            h_flag: indicator(&transition.next, &target),
            strategy,
        });
    }
    Ok(out)
}

/// The distinct samples the episode strategy can produce: each transition
/// paired with each state of its own episode, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct EpisodeSupport {
    radius: u8,
    seen: std::collections::HashSet<(u64, Embedding, Action, Target)>,
    samples: Vec<RelabeledSample>,
}

impl EpisodeSupport {
    pub fn new(radius: u8) -> Self {
        Self {
            radius,
            ..Self::default()
        }
    }

    /// Adds one contiguous episode.
    pub fn add_episode(&mut self, episode: &[Transition]) {
        let Some(first) = episode.first() else { return };
        let mut states: Vec<EnvState> = std::iter::once(first.s).chain(episode.iter().map(|t| t.next)).collect();
        if states.last().is_some_and(|s| s.failed()) {
            states.pop();
        }
        for tr in episode {
            for s in &states {
                let target = target_of(s, self.radius);
                if self.seen.insert((tr.task_id, tr.s.embedding(), tr.action, target)) {
                    self.samples.push(RelabeledSample {
                        transition: *tr,
                        target,
                        h_flag: indicator(&tr.next, &target),
                        strategy: Strategy::Episode,
                    });
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[RelabeledSample] {
        &self.samples
    }
}
