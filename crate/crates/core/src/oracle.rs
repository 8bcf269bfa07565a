//! Exact dynamic-programming ground truth over an enumerated state graph.

use std::fmt::Write as _;

use crate::envs::{Action, Indicator, Next, StateSpace, Target, TargetSet};
use crate::evaluator::DistanceHistogram;
use crate::scalar::Scalar;

/// The behaviour policy a distance distribution is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec<F> {
    UniformRandom,
    /// Shortest-path action toward the target set, lowest action index on
    /// ties; action 0 where the target is unreachable.
    GreedyToTarget,
    /// Explicit per-state action distribution, indexed like the state space.
    Table(Vec<[F; 4]>),
}

impl<F: Scalar> PolicySpec<F> {
    pub fn tag(&self) -> &'static str {
        match self {
            PolicySpec::UniformRandom => "uniform_random",
            PolicySpec::GreedyToTarget => "greedy_to_target",
            PolicySpec::Table(_) => "table",
        }
    }

    /// Per-state action probabilities for the given hit mask.
    pub fn action_probs(&self, space: &StateSpace, mask: &[bool]) -> Vec<[F; 4]> {
        match self {
            PolicySpec::UniformRandom => vec![[F::of(0.25); 4]; space.len()],
            PolicySpec::Table(t) => {
                assert_eq!(t.len(), space.len(), "policy table size mismatch");
                t.clone()
            }
            PolicySpec::GreedyToTarget => {
                let d0 = space.steps_to(mask);
                (0..space.len())
                    .map(|i| {
                        let mut row = [F::zero(); 4];
                        row[greedy_action(space, &d0, i).index()] = F::one();
                        row
                    })
                    .collect()
            }
        }
    }
}

fn greedy_action(space: &StateSpace, d0: &[Option<u32>], i: usize) -> Action {
    let mut best: Option<(u32, Action)> = None;
    if space.is_terminal(i) {
        return Action::Up;
    }
    for a in Action::ALL {
        if let Next::State(j) = space.next(i, a) {
            if let Some(d) = d0[j] {
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, a));
                }
            }
        }
    }
    best.map(|(_, a)| a).unwrap_or(Action::Up)
}

/// Exact distance histograms from every state to one target set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable<F> {
    pub t_bins: usize,
    pub policy_tag: &'static str,
    pub target_key: String,
    /// Row `i` holds the state-level histogram of state `i`.
    rows: Vec<DistanceHistogram<F>>,
    /// Per-action histograms, `4 * i + a`.
    action_rows: Vec<DistanceHistogram<F>>,
}

impl<F: Scalar> DistanceTable<F> {
    pub fn row(&self, state: usize) -> &DistanceHistogram<F> {
        &self.rows[state]
    }

    pub fn action_row(&self, state: usize, action: Action) -> &DistanceHistogram<F> {
        &self.action_rows[4 * state + action.index()]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn tau_feasibility(&self, state: usize, tau: usize) -> F {
        self.rows[state].tau_feasibility(tau)
    }

    /// CSV lines `state_index,target_key,bin_1..bin_T` (no header).
    pub fn write_csv_rows(&self, out: &mut String) {
        for (i, h) in self.rows.iter().enumerate() {
            let _ = write!(out, "{},{}", i, self.target_key);
            for p in h.probs() {
                let _ = write!(out, ",{:.8e}", p.as_f64());
            }
            out.push('\n');
        }
    }
}

pub fn csv_header(t_bins: usize) -> String {
    let mut h = String::from("state_index,target_key");
    for t in 1..=t_bins {
        let _ = write!(h, ",bin_{t}");
    }
    h.push('\n');
    h
}

/// First-hit-time distribution of the target set from every state, computed by
/// `T-1` backward sweeps. Terminal states put all mass in overflow.
pub fn distance_distribution<F: Scalar>(
    space: &StateSpace,
    policy: &PolicySpec<F>,
    target: &impl Indicator,
    target_key: String,
    t_bins: usize,
) -> DistanceTable<F> {
    assert!(t_bins >= 2, "T must be at least 2");
    let n = space.len();
    let mask = space.hit_mask(target);
    let pi = policy.action_probs(space, &mask);
    let last = t_bins - 1;

    // f[t][i] = p(D = t + 1 | i); filled one distance at a time
    let mut f = vec![vec![F::zero(); n]; last];
    let mut fa = vec![vec![[F::zero(); 4]; n]; last];
    for t in 0..last {
        for i in 0..n {
            if space.is_terminal(i) {
                continue;
            }
            let mut acc = F::zero();
            for a in Action::ALL {
                let v = match space.next(i, a) {
                    Next::Fail => F::zero(),
                    Next::State(j) => {
                        if t == 0 {
                            if mask[j] {
                                F::one()
                            } else {
                                F::zero()
                            }
                        } else if mask[j] || space.is_terminal(j) {
                            F::zero()
                        } else {
                            f[t - 1][j]
                        }
                    }
                };
                fa[t][i][a.index()] = v;
                acc += pi[i][a.index()] * v;
            }
            f[t][i] = acc;
        }
    }

    let finish = |mut probs: Vec<F>| {
        let s: F = probs[..last].iter().copied().sum();
        probs[last] = (F::one() - s).max(F::zero());
        DistanceHistogram::from_vec(probs)
    };
    let mut rows = Vec::with_capacity(n);
    let mut action_rows = Vec::with_capacity(4 * n);
    for i in 0..n {
        let mut probs = vec![F::zero(); t_bins];
        for t in 0..last {
            probs[t] = f[t][i];
        }
        rows.push(finish(probs));
        for a in 0..4 {
            let mut probs = vec![F::zero(); t_bins];
            for t in 0..last {
                probs[t] = fa[t][i][a];
            }
            action_rows.push(finish(probs));
        }
    }
    DistanceTable {
        t_bins,
        policy_tag: policy.tag(),
        target_key,
        rows,
        action_rows,
    }
}

pub fn target_table<F: Scalar>(
    space: &StateSpace,
    policy: &PolicySpec<F>,
    target: &Target,
    t_bins: usize,
) -> DistanceTable<F> {
    distance_distribution(space, policy, target, target.key(), t_bins)
}

/// `p(D <= tau)` of a table row.
pub fn tau_feasibility_exact<F: Scalar>(table: &DistanceTable<F>, state: usize, tau: usize) -> F {
    table.tau_feasibility(state, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    /// Reachable from the source.
    G0,
    /// Matches no state of the task.
    G1,
    /// Matches valid states, none reachable from the source.
    G2,
}

impl Category {
    pub fn infeasible(self) -> bool {
        self != Category::G0
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::G0 => "G0",
            Category::G1 => "G1",
            Category::G2 => "G2",
        }
    }
}

/// Categorizes a target set relative to a source, with reachability taken
/// over all action sequences (the source itself counts as reachable).
pub fn categorize(space: &StateSpace, source: usize, target: &impl Indicator) -> Category {
    let mask = space.hit_mask(target);
    if !mask.iter().any(|&m| m) {
        return Category::G1;
    }
    categorize_with(&mask, &space.reachable_from(source))
}

/// Same as [`categorize`] with precomputed hit mask and reachability.
pub fn categorize_with(mask: &[bool], reachable: &[bool]) -> Category {
    if !mask.iter().any(|&m| m) {
        Category::G1
    } else if mask.iter().zip(reachable).any(|(&m, &r)| m && r) {
        Category::G0
    } else {
        Category::G2
    }
}

/// Optimal action values by value iteration to a 1e-10 sup-norm.
pub fn optimal_q<F: Scalar>(space: &StateSpace, gamma: F) -> Vec<[F; 4]> {
    assert!(gamma > F::zero() && gamma <= F::one());
    let n = space.len();
    let mut v = vec![F::zero(); n];
    let mut q = vec![[F::zero(); 4]; n];
    let tol = F::of(1e-10);
    loop {
        let mut delta = F::zero();
        for i in 0..n {
            if space.is_terminal(i) {
                continue;
            }
            for a in Action::ALL {
                let r = F::of(space.reward(i, a));
                let cont = match space.next(i, a) {
                    Next::State(j) if !space.is_terminal(j) => gamma * v[j],
                    _ => F::zero(),
                };
                q[i][a.index()] = r + cont;
            }
            let best = q[i].iter().copied().fold(F::neg_infinity(), F::max);
            delta = delta.max((best - v[i]).abs());
            v[i] = best;
        }
        if delta <= tol {
            return q;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalReport<F> {
    pub reachable_mixed: bool,
    pub reachable_pruned: bool,
    pub feasibility_mixed: F,
    pub feasibility_pruned: F,
    pub removed: usize,
}

impl<F: Scalar> RemovalReport<F> {
    pub fn holds(&self) -> bool {
        self.reachable_mixed == self.reachable_pruned
            && self.feasibility_mixed == self.feasibility_pruned
    }
}

/// Compares a mixed target set against the same set with its infeasible
/// members removed, both by reachability and by `p(D <= tau)` under `policy`.
pub fn removal_invariance<F: Scalar>(
    space: &StateSpace,
    source: usize,
    members: &[Target],
    tau: usize,
    t_bins: usize,
    policy: &PolicySpec<F>,
) -> RemovalReport<F> {
    let reach = space.reachable_from(source);
    let pruned: Vec<Target> = members
        .iter()
        .copied()
        .filter(|m| categorize_with(&space.hit_mask(m), &reach) == Category::G0)
        .collect();
    let mixed = TargetSet::new(members.to_vec());
    let kept = TargetSet::new(pruned);
    let reachable = |set: &TargetSet| categorize_with(&space.hit_mask(set), &reach) == Category::G0;
    let feas = |set: &TargetSet| {
        distance_distribution(space, policy, set, String::new(), t_bins).tau_feasibility(source, tau)
    };
    RemovalReport {
        reachable_mixed: reachable(&mixed),
        reachable_pruned: reachable(&kept),
        feasibility_mixed: feas(&mixed),
        feasibility_pruned: feas(&kept),
        removed: members.len() - kept.members.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{generate_task, Embedding, EnvState, Family, GridTask};

    fn corridor() -> (GridTask, StateSpace) {
        let task = GridTask::from_layout(Family::Rds, &["...G"]).unwrap();
        let space = StateSpace::new(&task);
        (task, space)
    }

    fn right_policy(space: &StateSpace) -> PolicySpec<f64> {
        PolicySpec::Table(vec![[0.0, 0.0, 0.0, 1.0]; space.len()])
    }

    #[test]
    fn corridor_point_mass() {
        let (_, space) = corridor();
        let target = Target::singleton(Embedding::new(2, 0, true, true));
        let table = target_table(&space, &right_policy(&space), &target, 16);
        assert_eq!(table.row(0), &DistanceHistogram::point(16, 2));
        assert_eq!(tau_feasibility_exact(&table, 0, 1), 0.0);
        assert_eq!(tau_feasibility_exact(&table, 0, 2), 1.0);
    }

    #[test]
    fn two_state_geometric() {
        // A stays put half of the time (wall bump) and moves to B otherwise
        let task = GridTask::from_layout(Family::Rds, &["..G"]).unwrap();
        let space = StateSpace::new(&task);
        let mut pi = vec![[0.0; 4]; space.len()];
        pi[0] = [0.0, 0.0, 0.5, 0.5];
        let table = target_table(
            &space,
            &PolicySpec::Table(pi),
            &Target::singleton(Embedding::new(1, 0, true, true)),
            10,
        );
        for t in 1..10 {
            assert!((table.row(0).p(t) - 0.5f64.powi(t as i32)).abs() < 1e-15);
        }
        assert!((tau_feasibility_exact(&table, 0, 2) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_hit_set_is_all_overflow() {
        let task = generate_task(Family::Ssm, 6, 6, 0.2, 1).unwrap();
        let space = StateSpace::new(&task);
        let target = Target::singleton(Embedding::new(50, 50, false, false));
        let table = target_table::<f64>(&space, &PolicySpec::UniformRandom, &target, 16);
        for i in 0..space.len() {
            assert_eq!(table.row(i).overflow(), 1.0);
        }
    }

    #[test]
    fn rows_normalized_and_monotone() {
        let task = generate_task(Family::Ssm, 6, 6, 0.2, 2).unwrap();
        let space = StateSpace::new(&task);
        let target = Target::singleton(space.state(5).embedding());
        let table = target_table::<f64>(&space, &PolicySpec::UniformRandom, &target, 16);
        for i in 0..space.len() {
            assert!((table.row(i).sum() - 1.0).abs() < 1e-12);
            let mut prev = 0.0;
            for tau in 1..16 {
                let f = table.tau_feasibility(i, tau);
                assert!(f >= prev);
                prev = f;
            }
        }
    }

    #[test]
    fn greedy_matches_bfs() {
        let task = generate_task(Family::Rds, 6, 6, 0.2, 4).unwrap();
        let space = StateSpace::new(&task);
        let target = Target::singleton(space.state(3).embedding());
        let table = target_table::<f64>(&space, &PolicySpec::GreedyToTarget, &target, 32);
        let fh = space.first_hit(&space.hit_mask(&target));
        for i in space.nonterminal() {
            let d = fh[i].unwrap() as usize;
            assert_eq!(table.row(i), &DistanceHistogram::point(32, d));
        }
    }

    #[test]
    fn categories() {
        let task = generate_task(Family::Ssm, 8, 8, 0.2, 6).unwrap();
        let space = StateSpace::new(&task);
        let src = space
            .nonterminal()
            .find(|&i| space.state(i).embedding().class() == 3)
            .unwrap();
        let back = Target::singleton(space.state(src).embedding().with_class(0));
        assert_eq!(categorize(&space, src, &back), Category::G2);
        let own = Target::singleton(space.state(src).embedding());
        assert_eq!(categorize(&space, src, &own), Category::G0);
        let (lx, ly) = task.find(crate::envs::Cell::Lava).unwrap();
        let lava = Target::singleton(Embedding::new(lx, ly, true, true));
        assert_eq!(categorize(&space, src, &lava), Category::G1);
    }

    #[test]
    fn optimal_q_cases() {
        let task = GridTask::from_layout(Family::Rds, &["L..G"]).unwrap();
        let space = StateSpace::new(&task);
        let q = optimal_q(&space, 0.9f64);
        let idx = |x| space.index_of(&EnvState::alive(Embedding::new(x, 0, true, true))).unwrap();
        assert!((q[idx(2)][Action::Right.index()] - 1.0).abs() < 1e-12);
        let best = q[idx(1)].iter().copied().fold(f64::MIN, f64::max);
        assert!((best - 0.9).abs() < 1e-9);
        assert_eq!(q[idx(1)][Action::Left.index()], 0.0);
    }

    #[test]
    fn removal_invariance_simple() {
        let task = generate_task(Family::Ssm, 6, 6, 0.2, 8).unwrap();
        let space = StateSpace::new(&task);
        let src = space.nonterminal().next().unwrap();
        let near = Action::ALL
            .iter()
            .find_map(|&a| match space.next(src, a) {
                Next::State(j) => Some(j),
                Next::Fail => None,
            })
            .unwrap();
        let g0 = Target::singleton(space.state(near).embedding());
        let g1s: Vec<Target> = (0..3)
            .map(|k| Target::singleton(Embedding::new(90 + k, 0, false, false)))
            .collect();
        let mut members = vec![g0];
        members.extend(&g1s);
        let r = removal_invariance::<f64>(&space, src, &members, 5, 16, &PolicySpec::UniformRandom);
        assert!(r.holds());
        assert_eq!(r.removed, 3);
        let only = removal_invariance::<f64>(&space, src, &g1s, 5, 16, &PolicySpec::UniformRandom);
        assert!(only.holds());
        assert_eq!(only.feasibility_mixed, 0.0);
    }

    #[test]
    fn csv_dump() {
        let (_, space) = corridor();
        let target = Target::singleton(Embedding::new(2, 0, true, true));
        let table = target_table(&space, &right_policy(&space), &target, 4);
        let mut out = csv_header(4);
        table.write_csv_rows(&mut out);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "state_index,target_key,bin_1,bin_2,bin_3,bin_4");
        assert!(lines[1].starts_with("0,2:0:1:1:0,0.00000000e0,1.00000000e0"));
    }
}
