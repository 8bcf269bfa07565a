use std::collections::VecDeque;

use rand::Rng;

use super::grid::{step, Cell, Family, GridTask, InitMode};
use super::state::{Action, Embedding, EnvState, Indicator};

/// Successor of an enumerated state under one action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Next {
    State(usize),
    /// Lava or an unarmed monster encounter.
    Fail,
}

/// The enumerated state graph of a task.
///
/// States are ordered class-major (`2 * sword + shield`), then row-major by
/// position. The success terminal is an ordinary entry (monster or goal
/// position in class `<1,1>`); failed terminals are not enumerated.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub family: Family,
    pub width: usize,
    pub height: usize,
    states: Vec<EnvState>,
    /// Dense lookup over every embedding of the grid; `u32::MAX` if invalid.
    lookup: Vec<u32>,
    next: Vec<[Next; 4]>,
    preds: Vec<Vec<usize>>,
    success: usize,
}

fn class_allows(family: Family, class: usize, cell: Cell) -> bool {
    match cell {
        Cell::Lava => false,
        Cell::Floor | Cell::Goal => true,
        Cell::Sword => family == Family::Ssm && class & 2 != 0,
        Cell::Shield => family == Family::Ssm && class & 1 != 0,
        Cell::Monster => class == 3,
    }
}

impl StateSpace {
    pub fn new(task: &GridTask) -> Self {
        let (w, h) = (task.width, task.height);
        let classes: &[usize] = match task.family {
            Family::Rds => &[3],
            Family::Ssm => &[0, 1, 2, 3],
        };
        let mut states = Vec::new();
        let mut lookup = vec![u32::MAX; 4 * w * h];
        let mut success = usize::MAX;
        for &class in classes {
            for y in 0..h {
                for x in 0..w {
                    let cell = task.cell(x, y);
                    if !class_allows(task.family, class, cell) {
                        continue;
                    }
                    let mut s = EnvState::alive(
                        Embedding::new(x as u16, y as u16, false, false).with_class(class),
                    );
                    if matches!(cell, Cell::Monster | Cell::Goal) {
                        s.terminal = true;
                        s.success = true;
                        success = states.len();
                    }
                    lookup[class * w * h + y * w + x] = states.len() as u32;
                    states.push(s);
                }
            }
        }
        let mut space = StateSpace {
            family: task.family,
            width: w,
            height: h,
            states,
            lookup,
            next: Vec::new(),
            preds: Vec::new(),
            success,
        };
        let mut next = Vec::with_capacity(space.states.len());
        let mut preds = vec![Vec::new(); space.states.len()];
        for (i, s) in space.states.iter().enumerate() {
            if s.terminal {
                next.push([Next::State(i); 4]);
                continue;
            }
            let mut row = [Next::Fail; 4];
            for a in Action::ALL {
                let (n, _, _) = step(task, s, a).expect("non-terminal state");
                if let Some(j) = space.index_of(&n) {
                    row[a.index()] = Next::State(j);
                    if !preds[j].contains(&i) {
                        preds[j].push(i);
                    }
                }
            }
            next.push(row);
        }
        space.next = next;
        space.preds = preds;
        space
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &EnvState {
        &self.states[i]
    }

    pub fn states(&self) -> &[EnvState] {
        &self.states
    }

    pub fn success_index(&self) -> usize {
        self.success
    }

    pub fn is_terminal(&self, i: usize) -> bool {
        self.states[i].terminal
    }

    pub fn nonterminal(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.states[i].terminal)
    }

    /// Index of the enumerated state with this embedding, if any.
    pub fn index_of_embedding(&self, e: &Embedding) -> Option<usize> {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= self.width || y >= self.height {
            return None;
        }
        let v = self.lookup[e.class() * self.width * self.height + y * self.width + x];
        (v != u32::MAX).then_some(v as usize)
    }

    /// Index of a valid state; failed terminals have none.
    pub fn index_of(&self, s: &EnvState) -> Option<usize> {
        if s.failed() {
            return None;
        }
        let i = self.index_of_embedding(&s.embedding())?;
        (self.states[i].terminal == s.terminal).then_some(i)
    }

    pub fn next(&self, i: usize, a: Action) -> Next {
        self.next[i][a.index()]
    }

    pub fn reward(&self, i: usize, a: Action) -> f64 {
        match self.next(i, a) {
            Next::State(j) if j == self.success && !self.is_terminal(i) => 1.0,
            _ => 0.0,
        }
    }

    /// Mask of enumerated states satisfying an indicator.
    pub fn hit_mask(&self, ind: &impl Indicator) -> Vec<bool> {
        self.states.iter().map(|s| ind.matches(s)).collect()
    }

    /// States reachable from `source` in zero or more steps under any actions.
    pub fn reachable_from(&self, source: usize) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([source]);
        seen[source] = true;
        while let Some(i) = queue.pop_front() {
            if self.is_terminal(i) {
                continue;
            }
            for n in &self.next[i] {
                if let Next::State(j) = *n {
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        seen
    }

    /// Shortest number of steps from each state until a masked state is
    /// occupied (0 on the mask itself). Terminal states off the mask never
    /// reach it.
    pub fn steps_to(&self, mask: &[bool]) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.len()];
        let mut queue = VecDeque::new();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                dist[i] = Some(0);
                queue.push_back(i);
            }
        }
        while let Some(j) = queue.pop_front() {
            let d = dist[j].expect("queued states have a distance");
            for &p in &self.preds[j] {
                if dist[p].is_none() {
                    dist[p] = Some(d + 1);
                    queue.push_back(p);
                }
            }
        }
        dist
    }

    /// Shortest first-hit time (at least one step) of the masked set from each
    /// non-terminal state.
    pub fn first_hit(&self, mask: &[bool]) -> Vec<Option<u32>> {
        let d0 = self.steps_to(mask);
        (0..self.len())
            .map(|i| {
                if self.is_terminal(i) {
                    return None;
                }
                self.next[i]
                    .iter()
                    .filter_map(|n| match *n {
                        Next::State(j) => d0[j].map(|d| d + 1),
                        Next::Fail => None,
                    })
                    .min()
            })
            .collect()
    }

    pub fn steps_to_success(&self) -> Vec<Option<u32>> {
        let mut mask = vec![false; self.len()];
        if self.success < self.len() {
            mask[self.success] = true;
        }
        self.steps_to(&mask)
    }

    /// Every non-terminal state can reach the success terminal.
    pub fn is_solvable(&self) -> bool {
        if self.success >= self.len() {
            return false;
        }
        let d = self.steps_to_success();
        self.nonterminal().all(|i| d[i].is_some())
    }

    /// The state farthest from success in the starting class, lowest index on
    /// ties.
    pub fn fixed_farthest(&self) -> usize {
        let start_class = match self.family {
            Family::Rds => 3,
            Family::Ssm => 0,
        };
        let d = self.steps_to_success();
        let mut best: Option<(u32, usize)> = None;
        for i in self.nonterminal() {
            if self.states[i].embedding().class() != start_class {
                continue;
            }
            if let Some(di) = d[i] {
                if best.is_none_or(|(bd, _)| di > bd) {
                    best = Some((di, i));
                }
            }
        }
        best.map(|(_, i)| i)
            .or_else(|| self.nonterminal().next())
            .expect("task has a non-terminal state")
    }

    pub fn reset_index<R: Rng + ?Sized>(&self, mode: InitMode, rng: &mut R) -> usize {
        match mode {
            InitMode::FixedFarthest => self.fixed_farthest(),
            InitMode::AllNonterminal => {
                let n = self.len() - 1;
                // the single terminal is the success state; skip over it
                let k = rng.random_range(0..n);
                if k >= self.success {
                    k + 1
                } else {
                    k
                }
            }
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, mode: InitMode, rng: &mut R) -> EnvState {
        self.states[self.reset_index(mode, rng)]
    }
}

/// Enumerates the valid states of a task in canonical order.
pub fn enumerate_states(task: &GridTask) -> Vec<EnvState> {
    StateSpace::new(task).states
}
