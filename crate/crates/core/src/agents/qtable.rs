use crate::envs::{Action, Embedding};
use crate::relabel::Transition;
use crate::scalar::Scalar;

/// Dense action values over every embedding of a grid.
///
/// Embeddings outside the grid (hallucinated successors) read as `init` and
/// are never written.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<F> {
    pub width: usize,
    pub height: usize,
    values: Vec<[F; 4]>,
    pub alpha: F,
    pub gamma: F,
    pub init: F,
}

impl<F: Scalar> QTable<F> {
    pub fn new(width: usize, height: usize, alpha: F, gamma: F, init: F) -> Self {
        Self {
            width,
            height,
            values: vec![[init; 4]; 4 * width * height],
            alpha,
            gamma,
            init,
        }
    }

    fn index(&self, e: &Embedding) -> Option<usize> {
        let (x, y) = (e.x as usize, e.y as usize);
        (x < self.width && y < self.height)
            .then(|| e.class() * self.width * self.height + y * self.width + x)
    }

    pub fn q(&self, e: &Embedding, a: Action) -> F {
        self.index(e).map_or(self.init, |i| self.values[i][a.index()])
    }

    pub fn row(&self, e: &Embedding) -> [F; 4] {
        self.index(e).map_or([self.init; 4], |i| self.values[i])
    }

    pub fn value(&self, e: &Embedding) -> F {
        self.row(e).into_iter().fold(F::neg_infinity(), F::max)
    }

    /// Highest-valued action, lowest index on ties.
    pub fn greedy(&self, e: &Embedding) -> Action {
        let row = self.row(e);
        let mut best = 0;
        for a in 1..4 {
            if row[a] > row[best] {
                best = a;
            }
        }
        Action::ALL[best]
    }

    /// `Q(s,a) += alpha (r + gamma max Q(s',.) [not terminal] - Q(s,a))`.
    pub fn update(&mut self, s: &Embedding, a: Action, reward: F, next: &Embedding, terminal: bool) {
        let Some(i) = self.index(s) else { return };
        let cont = if terminal {
            F::zero()
        } else {
            self.gamma * self.value(next)
        };
        let q = &mut self.values[i][a.index()];
        *q += self.alpha * (reward + cont - *q);
    }

    pub fn q_update(&mut self, tr: &Transition) {
        self.update(
            &tr.s.embedding(),
            tr.action,
            F::of(tr.reward),
            &tr.next.embedding(),
            tr.terminal(),
        );
    }

    pub fn values(&self) -> &[[F; 4]] {
        &self.values
    }
}

/// Linear annealing from `start` to `end` over `steps`, constant after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl EpsilonSchedule {
    pub fn new(steps: u64) -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            steps,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if self.steps == 0 || step >= self.steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.steps as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{step, Family, GridTask, StateSpace};
    use crate::oracle::optimal_q;

    #[test]
    fn terminal_success_with_unit_rate() {
        let mut q = QTable::<f64>::new(3, 1, 1.0, 0.9, 0.0);
        let s = Embedding::new(1, 0, true, true);
        q.update(&s, Action::Right, 1.0, &Embedding::new(2, 0, true, true), true);
        assert_eq!(q.q(&s, Action::Right), 1.0);
    }

    #[test]
    fn zero_fixed_point() {
        let mut q = QTable::<f64>::new(3, 1, 0.5, 0.9, 0.0);
        let before = q.clone();
        let s = Embedding::new(0, 0, true, true);
        q.update(&s, Action::Left, 0.0, &s, false);
        assert_eq!(q, before);
    }

    #[test]
    fn sweeps_reach_optimal_q() {
        let task = GridTask::from_layout(Family::Ssm, &["S.L.", "....", "H..M"]).unwrap();
        let space = StateSpace::new(&task);
        let qstar = optimal_q(&space, 0.9f64);
        let mut q = QTable::<f64>::new(4, 3, 1.0, 0.9, 0.0);
        for _ in 0..100 {
            for i in space.nonterminal() {
                for a in Action::ALL {
                    let s = *space.state(i);
                    let (n, r, term) = step(&task, &s, a).unwrap();
                    q.update(&s.embedding(), a, r, &n.embedding(), term);
                }
            }
        }
        for i in space.nonterminal() {
            for a in Action::ALL {
                let diff = (q.q(&space.state(i).embedding(), a) - qstar[i][a.index()]).abs();
                assert!(diff < 1e-6);
            }
        }
    }

    #[test]
    fn off_grid_reads_init() {
        let q = QTable::<f32>::new(2, 2, 0.5, 0.9, 0.25);
        assert_eq!(q.value(&Embedding::new(5, 0, false, false)), 0.25);
    }

    #[test]
    fn epsilon_anneals_linearly() {
        let e = EpsilonSchedule::new(100);
        assert_eq!(e.value(0), 1.0);
        assert!((e.value(50) - 0.525).abs() < 1e-12);
        assert_eq!(e.value(1000), 0.05);
    }
}
