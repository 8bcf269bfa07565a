use std::collections::BTreeSet;

use super::{fill_store, random_walk_episodes, space_map, stream, train_evaluator, ExperimentError};
use crate::envs::{generate_task, Family, Target};
use crate::evaluator::{TabularConfig, TabularEvaluator};
use crate::generator::{CandidateGenerator, ConditionalTargetSampler, HallucinationInjector};
use crate::metrics::{e_error_pooled, ErrorPair};
use crate::oracle::{categorize_with, target_table, Category, PolicySpec};
use crate::relabel::Mix;

/// Radius-1 targets: E0/E1/E2 over the course of FEPG training.
#[derive(Debug, Clone, PartialEq)]
pub struct NonSingletonConfig {
    pub width: usize,
    pub height: usize,
    pub difficulty: f64,
    pub task_seed: u64,
    pub seed: u64,
    pub radius: u8,
    pub episodes: usize,
    pub max_len: usize,
    pub snapshots: usize,
    pub batches_per_snapshot: usize,
    pub batch_size: usize,
    pub p_g1: f64,
    pub p_g2: f64,
    pub k: Option<usize>,
    pub cross_class: bool,
    /// Training batches between evaluator target syncs.
    pub sync_period: u64,
    /// Held-out generator draws used as evaluation pairs.
    pub eval_draws: usize,
}

impl Default for NonSingletonConfig {
    fn default() -> Self {
        Self {
            width: 6,
            height: 6,
            difficulty: 0.2,
            task_seed: 300,
            seed: 0,
            radius: 1,
            episodes: 3_000,
            max_len: 64,
            snapshots: 8,
            batches_per_snapshot: 5_000,
            batch_size: 512,
            p_g1: 0.45,
            p_g2: 0.45,
            k: None,
            cross_class: true,
            sync_period: 20,
            eval_draws: 3_000,
        }
    }
}

/// Pooled errors at one snapshot; `None` where a category has no pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSnapshot {
    pub batches: usize,
    pub e0: Option<f64>,
    pub e1: Option<f64>,
    pub e2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonSingletonReport {
    /// Snapshot 0 is the untrained evaluator.
    pub curve: Vec<ErrorSnapshot>,
    pub pairs: [usize; 3],
}

pub fn non_singleton(cfg: &NonSingletonConfig) -> Result<NonSingletonReport, ExperimentError> {
    let task = generate_task(Family::Ssm, cfg.width, cfg.height, cfg.difficulty, cfg.task_seed)?;
    let tasks = [task];
    let spaces = space_map(&tasks);
    let task_id = tasks[0].task_id;
    let space = spaces[&task_id].clone();

    let mut rng = stream(cfg.seed, 0);
    let episodes = random_walk_episodes(&tasks, &spaces, cfg.episodes, cfg.max_len, &mut rng);
    let store = fill_store(&episodes)?;
    let mut sampler = ConditionalTargetSampler::new(1.0);
    for ep in 0..store.n_episodes() {
        sampler.fit_episode(task_id, store.episode_states(ep));
    }
    let injector = HallucinationInjector::new(cfg.p_g1, cfg.p_g2)?.with_k(cfg.k).with_cross_class(cfg.cross_class);
    let generator = CandidateGenerator::new(sampler, injector, spaces.clone(), cfg.radius);

    // evaluation pairs: held-out generator draws from visited sources
    let mut rng = stream(cfg.seed, 1);
    let sources: Vec<_> = store.iter().map(|t| t.s).collect();
    let mut drawn = BTreeSet::new();
    for _ in 0..cfg.eval_draws {
        let s = sources[rand::Rng::random_range(&mut rng, 0..sources.len())];
        let inj = generator.sample_one(task_id, &s, &mut rng);
        drawn.insert((s.embedding(), inj.target));
    }
    let policy = PolicySpec::<f64>::GreedyToTarget;
    let mut pairs = Vec::new();
    let mut by_target: std::collections::BTreeMap<Target, Vec<_>> = std::collections::BTreeMap::new();
    for (e, t) in drawn {
        by_target.entry(t).or_default().push(e);
    }
    for (target, srcs) in by_target {
        let table = target_table(&space, &policy, &target, 16);
        let mask = space.hit_mask(&target);
        let first = space.first_hit(&mask);
        for e in srcs {
            let i = space.index_of_embedding(&e).expect("visited sources are valid");
            pairs.push(ErrorPair {
                task_id,
                source: e,
                target,
                truth: table.row(i).clone(),
                category: categorize_with(&mask, &space.reachable_from(i)),
                shortest: first[i],
            });
        }
    }
    let count = |c: Category| pairs.iter().filter(|p| p.category == c).count();

    let mut ev = TabularEvaluator::<f64>::new(TabularConfig {
        sync_period: cfg.sync_period,
        ..TabularConfig::default()
    });
    let mix = Mix::fepg();
    let mut rng = stream(cfg.seed, 2);
    let snap = |ev: &TabularEvaluator<f64>, batches| ErrorSnapshot {
        batches,
        e0: e_error_pooled(ev, &pairs, Category::G0),
        e1: e_error_pooled(ev, &pairs, Category::G1),
        e2: e_error_pooled(ev, &pairs, Category::G2),
    };
    let mut curve = vec![snap(&ev, 0)];
    for k in 1..=cfg.snapshots {
        train_evaluator(
            &mut ev,
            &store,
            &mix,
            Some(&generator),
            cfg.radius,
            cfg.batches_per_snapshot,
            cfg.batch_size,
            &mut rng,
        )?;
        curve.push(snap(&ev, k * cfg.batches_per_snapshot));
    }
    Ok(NonSingletonReport {
        curve,
        pairs: [count(Category::G0), count(Category::G1), count(Category::G2)],
    })
}
