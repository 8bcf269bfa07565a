use crate::envs::{Action, Embedding, EnvState, StateSpace, Target};
use crate::evaluator::FeasibilityEvaluator;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig<F> {
    pub gamma: F,
    /// Commitment horizon; also the cap of the discount support.
    pub tau: usize,
    /// Disconnect targets with `p(D <= T-1) < theta` (the "+" variant).
    pub reject: bool,
    pub theta: F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    Current,
    Candidate,
    Goal,
}

/// Directed graph over the current state, candidate targets and the goal.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanGraph<F> {
    /// Vertex 0 is the current state; the last vertex is the goal.
    pub vertices: Vec<(VertexKind, Target)>,
    /// Row-major `n x n` estimated cumulative discounts.
    pub discount: Vec<F>,
    /// Row-major `n x n` estimated cumulative rewards.
    pub reward: Vec<F>,
    /// Vertices whose incoming edges were zeroed.
    pub disconnected: Vec<bool>,
}

impl<F: Scalar> PlanGraph<F> {
    pub fn n(&self) -> usize {
        self.vertices.len()
    }

    pub fn discount(&self, u: usize, v: usize) -> F {
        self.discount[u * self.n() + v]
    }

    pub fn reward(&self, u: usize, v: usize) -> F {
        self.reward[u * self.n() + v]
    }

    pub fn goal(&self) -> usize {
        self.n() - 1
    }

    pub fn candidates(&self) -> impl Iterator<Item = &Target> {
        self.vertices
            .iter()
            .filter(|(k, _)| *k == VertexKind::Candidate)
            .map(|(_, t)| t)
    }

    /// Multiplies every edge reward by `c`.
    pub fn scale_rewards(&mut self, c: F) {
        for r in &mut self.reward {
            *r *= c;
        }
    }
}

/// The goal vertex of a task: the success state's embedding.
pub fn goal_target(space: &StateSpace) -> Target {
    Target::singleton(space.state(space.success_index()).embedding())
}

/// Builds the plan graph.
///
/// Duplicate candidates are dropped first. Edge discounts come from the
/// evaluator's histogram read on `gamma^min(t, tau)`; only edges into the goal
/// carry reward, equal to their discount. The "+" variant zeroes every
/// incoming edge of a vertex rejected from the current state and every
/// individually rejected edge. Vertices left unreachable from the current
/// state are then pruned.
pub fn build_plan_graph<F: Scalar, E: FeasibilityEvaluator<F> + ?Sized>(
    evaluator: &E,
    task_id: u64,
    current: &EnvState,
    candidates: &[Target],
    goal: Target,
    cfg: &PlanConfig<F>,
) -> PlanGraph<F> {
    let t_bins = evaluator.t_bins();
    let here = Target::singleton(current.embedding());
    let mut vertices = vec![(VertexKind::Current, here)];
    for c in candidates {
        let dup = vertices.iter().any(|(_, t)| t == c) || *c == goal;
        if !dup {
            vertices.push((VertexKind::Candidate, *c));
        }
    }
    vertices.push((VertexKind::Goal, goal));
    let n = vertices.len();
    let source = |u: usize| -> Embedding { vertices[u].1.embedding };

    let mut discount = vec![F::zero(); n * n];
    let mut rejected = vec![false; n * n];
    for u in 0..n - 1 {
        for v in 1..n {
            if u == v {
                continue;
            }
            let h = evaluator.predict(task_id, &source(u), None, &vertices[v].1);
            discount[u * n + v] = h.expected_discount(cfg.gamma, cfg.tau);
            rejected[u * n + v] = cfg.reject && h.reject(t_bins - 1, cfg.theta);
        }
    }
    let mut disconnected = vec![false; n];
    if cfg.reject {
        disconnected[1..].copy_from_slice(&rejected[1..n]);
        for u in 0..n {
            for v in 0..n {
                if disconnected[v] || rejected[u * n + v] {
                    discount[u * n + v] = F::zero();
                }
            }
        }
    }

    // drop vertices the current state cannot reach through positive edges
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if !seen[v] && discount[u * n + v] > F::zero() {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen[n - 1] = true;
    let keep: Vec<usize> = (0..n).filter(|&v| seen[v]).collect();
    let m = keep.len();
    let mut d2 = vec![F::zero(); m * m];
    let mut r2 = vec![F::zero(); m * m];
    for (i, &u) in keep.iter().enumerate() {
        for (j, &v) in keep.iter().enumerate() {
            let d = discount[u * n + v];
            d2[i * m + j] = d;
            if v == n - 1 {
                r2[i * m + j] = d;
            }
        }
    }
    PlanGraph {
        vertices: keep.iter().map(|&v| vertices[v]).collect(),
        discount: d2,
        reward: r2,
        disconnected: keep.iter().map(|&v| disconnected[v]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    Candidate(Target),
    /// Head for the goal directly.
    Goal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult<F> {
    pub selection: Selection,
    /// Vertex index of the first hop.
    pub vertex: usize,
    pub values: Vec<F>,
    pub sweeps: usize,
}

/// Value iteration over vertex values `U(u) = max_v r(u,v) + gamma(u,v) U(v)`
/// with the goal absorbing at zero, then the best first hop from the current
/// state (lowest vertex index on ties; the goal when nothing is connected).
pub fn plan_and_select<F: Scalar>(graph: &PlanGraph<F>) -> PlanResult<F> {
    let n = graph.n();
    let goal = graph.goal();
    let mut u = vec![F::zero(); n];
    let backup = |u: &[F], x: usize| -> (F, Option<usize>) {
        let mut best = (F::zero(), None);
        for v in 1..n {
            if v == x || graph.discount(x, v) <= F::zero() {
                continue;
            }
            let val = graph.reward(x, v) + graph.discount(x, v) * u[v];
            if best.1.is_none() || val > best.0 {
                best = (val, Some(v));
            }
        }
        best
    };
    let mut sweeps = 0;
    for _ in 0..n {
        sweeps += 1;
        let mut changed = false;
        let mut next = u.clone();
        for x in 0..n {
            if x == goal {
                continue;
            }
            let (val, _) = backup(&u, x);
            if val != next[x] {
                next[x] = val;
                changed = true;
            }
        }
        u = next;
        if !changed {
            break;
        }
    }
    let (_, first) = backup(&u, 0);
    let vertex = first.unwrap_or(goal);
    let selection = if vertex == goal {
        Selection::Goal
    } else {
        Selection::Candidate(graph.vertices[vertex].1)
    };
    PlanResult {
        selection,
        vertex,
        values: u,
        sweeps,
    }
}

/// Action with the least expected distance to `target`, lowest index on ties.
pub fn goal_policy_action<F: Scalar, E: FeasibilityEvaluator<F> + ?Sized>(
    evaluator: &E,
    task_id: u64,
    state: &EnvState,
    target: &Target,
) -> Action {
    let per_action = evaluator.predict_actions(task_id, &state.embedding(), target);
    Action::ALL[crate::evaluator::greedy_index(&per_action)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::DistanceHistogram;
    use std::collections::HashMap;

    /// Fixed histograms per (source, target) pair; overflow elsewhere.
    struct Table(HashMap<(Embedding, Embedding), DistanceHistogram<f64>>);

    impl FeasibilityEvaluator<f64> for Table {
        fn t_bins(&self) -> usize {
            16
        }

        fn predict(&self, _: u64, s: &Embedding, _: Option<Action>, t: &Target) -> DistanceHistogram<f64> {
            self.0
                .get(&(*s, t.embedding))
                .cloned()
                .unwrap_or_else(|| DistanceHistogram::overflow_only(16))
        }
    }

    fn e(x: u16) -> Embedding {
        Embedding::new(x, 0, true, true)
    }

    fn cfg(reject: bool) -> PlanConfig<f64> {
        PlanConfig {
            gamma: 0.9,
            tau: 15,
            reject,
            theta: 0.05,
        }
    }

    fn point(d: usize) -> DistanceHistogram<f64> {
        DistanceHistogram::point(16, d)
    }

    #[test]
    fn duplicates_are_pruned() {
        let ev = Table(HashMap::new());
        let cands: Vec<Target> = [1, 2, 1, 3, 2].iter().map(|&x| Target::singleton(e(x))).collect();
        let g = build_plan_graph(&ev, 0, &EnvState::alive(e(0)), &cands, Target::singleton(e(9)), &cfg(false));
        assert!(g.candidates().count() <= 3);
    }

    #[test]
    fn improving_candidate_is_selected() {
        let mut m = HashMap::new();
        m.insert((e(0), e(9)), point(12));
        m.insert((e(0), e(1)), point(2));
        m.insert((e(1), e(9)), point(2));
        let ev = Table(m);
        let g = build_plan_graph(&ev, 0, &EnvState::alive(e(0)), &[Target::singleton(e(1))], Target::singleton(e(9)), &cfg(true));
        let r = plan_and_select(&g);
        assert_eq!(r.selection, Selection::Candidate(Target::singleton(e(1))));
        assert!(r.values[0] >= g.reward(0, g.goal()));
        assert!(r.sweeps <= g.n());
    }

    #[test]
    fn all_disconnected_falls_back_to_goal() {
        let ev = Table(HashMap::new());
        let cands = [Target::singleton(e(1)), Target::singleton(e(2))];
        let g = build_plan_graph(&ev, 0, &EnvState::alive(e(0)), &cands, Target::singleton(e(9)), &cfg(true));
        assert_eq!(plan_and_select(&g).selection, Selection::Goal);
    }

    #[test]
    fn rejection_changes_a_deluded_choice() {
        // the naive evaluator believes the candidate is two steps away; the
        // corrected one knows it is never reached
        let mut naive = HashMap::new();
        naive.insert((e(0), e(5)), point(2));
        naive.insert((e(5), e(9)), point(1));
        naive.insert((e(0), e(9)), point(8));
        let mut corrected = naive.clone();
        corrected.insert((e(0), e(5)), DistanceHistogram::overflow_only(16));
        let cands = [Target::singleton(e(5))];
        let goal = Target::singleton(e(9));
        let here = EnvState::alive(e(0));
        let base = plan_and_select(&build_plan_graph(&Table(naive), 0, &here, &cands, goal, &cfg(false)));
        let plus_graph = build_plan_graph(&Table(corrected), 0, &here, &cands, goal, &cfg(true));
        let plus = plan_and_select(&plus_graph);
        assert_eq!(base.selection, Selection::Candidate(cands[0]));
        assert_eq!(plus.selection, Selection::Goal);
        assert!(plus_graph.candidates().all(|c| *c != cands[0]));
    }

    #[test]
    fn rejected_vertex_loses_incoming_edges() {
        let mut m = HashMap::new();
        m.insert((e(0), e(1)), point(2));
        m.insert((e(1), e(9)), point(2));
        m.insert((e(0), e(2)), DistanceHistogram::overflow_only(16));
        m.insert((e(1), e(2)), point(1));
        m.insert((e(2), e(9)), point(1));
        let cands = [Target::singleton(e(1)), Target::singleton(e(2))];
        let g = build_plan_graph(&Table(m), 0, &EnvState::alive(e(0)), &cands, Target::singleton(e(9)), &cfg(true));
        assert!(g.candidates().all(|c| c.embedding != e(2)));
    }

    #[test]
    fn reward_scaling_keeps_selection() {
        let mut m = HashMap::new();
        m.insert((e(0), e(9)), point(10));
        m.insert((e(0), e(1)), point(3));
        m.insert((e(1), e(9)), point(3));
        m.insert((e(0), e(2)), point(1));
        m.insert((e(2), e(9)), point(9));
        let ev = Table(m);
        let cands = [Target::singleton(e(1)), Target::singleton(e(2))];
        let mut g = build_plan_graph(&ev, 0, &EnvState::alive(e(0)), &cands, Target::singleton(e(9)), &cfg(false));
        let before = plan_and_select(&g).selection;
        g.scale_rewards(7.5);
        assert_eq!(plan_and_select(&g).selection, before);
    }

    #[test]
    fn goal_policy_ties_pick_first_action() {
        let ev = Table(HashMap::new());
        let a = goal_policy_action(&ev, 0, &EnvState::alive(e(0)), &Target::singleton(e(3)));
        assert_eq!(a, Action::Up);
    }
}
