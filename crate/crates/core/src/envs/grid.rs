use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::space::StateSpace;
use super::state::{Action, EnvState};
use super::EnvError;

/// Resamples allowed before generation gives up.
pub const MAX_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    /// Navigation to a goal; the agent always holds both items.
    Rds,
    /// Collect sword and shield, then defeat the monster.
    Ssm,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Rds => "rds",
            Family::Ssm => "ssm",
        })
    }
}

impl FromStr for Family {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rds" => Ok(Family::Rds),
            "ssm" => Ok(Family::Ssm),
            other => Err(EnvError::UnknownFamily(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Floor,
    Lava,
    Sword,
    Shield,
    Monster,
    Goal,
}

impl Cell {
    pub fn glyph(self) -> char {
        match self {
            Cell::Floor => '.',
            Cell::Lava => 'L',
            Cell::Sword => 'S',
            Cell::Shield => 'H',
            Cell::Monster => 'M',
            Cell::Goal => 'G',
        }
    }

    pub fn from_glyph(c: char) -> Option<Cell> {
        Some(match c {
            '.' => Cell::Floor,
            'L' => Cell::Lava,
            'S' => Cell::Sword,
            'H' => Cell::Shield,
            'M' => Cell::Monster,
            'G' => Cell::Goal,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum InitMode {
    /// Uniform over every non-terminal state (training).
    #[default]
    AllNonterminal,
    /// The state farthest from success in the starting class (evaluation).
    FixedFarthest,
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::AllNonterminal => "all_nonterminal",
            InitMode::FixedFarthest => "fixed_farthest",
        })
    }
}

impl FromStr for InitMode {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_nonterminal" => Ok(InitMode::AllNonterminal),
            "fixed_farthest" => Ok(InitMode::FixedFarthest),
            other => Err(EnvError::Invalid(format!("unknown init mode `{other}`"))),
        }
    }
}

/// An immutable task instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTask {
    pub family: Family,
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub cells: Vec<Cell>,
    pub difficulty: f64,
    pub seed: u64,
    pub task_id: u64,
    pub init_mode: InitMode,
}

impl GridTask {
    /// Builds a task from glyph rows and checks the layout invariants (but not
    /// solvability, so hand-made fixtures may be arbitrarily small).
    pub fn from_layout(family: Family, rows: &[&str]) -> Result<Self, EnvError> {
        let height = rows.len();
        let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        let mut cells = Vec::with_capacity(width * height);
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(EnvError::Invalid(format!("row {y} has the wrong width")));
            }
            for c in row.chars() {
                cells.push(Cell::from_glyph(c).ok_or_else(|| {
                    EnvError::Invalid(format!("unknown glyph `{c}` in row {y}"))
                })?);
            }
        }
        let task = GridTask {
            family,
            width,
            height,
            cells,
            difficulty: 0.0,
            seed: 0,
            task_id: 0,
            init_mode: InitMode::AllNonterminal,
        };
        task.validate_layout()?;
        Ok(task)
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.cells[y * self.width + x]
    }

    pub fn find(&self, kind: Cell) -> Option<(u16, u16)> {
        self.cells
            .iter()
            .position(|&c| c == kind)
            .map(|i| ((i % self.width) as u16, (i / self.width) as u16))
    }

    pub fn count(&self, kind: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == kind).count()
    }

    /// Cells that may hold lava: everything except the special cells.
    pub fn eligible_cells(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(c, Cell::Floor | Cell::Lava))
            .count()
    }

    pub fn lava_fraction(&self) -> f64 {
        let eligible = self.eligible_cells();
        if eligible == 0 {
            0.0
        } else {
            self.count(Cell::Lava) as f64 / eligible as f64
        }
    }

    /// Position of the success cell (monster or goal).
    pub fn success_cell(&self) -> (u16, u16) {
        let kind = match self.family {
            Family::Rds => Cell::Goal,
            Family::Ssm => Cell::Monster,
        };
        self.find(kind).expect("validated task has a success cell")
    }

    pub fn with_task_id(mut self, task_id: u64) -> Self {
        self.task_id = task_id;
        self
    }

    pub(crate) fn validate_layout(&self) -> Result<(), EnvError> {
        if self.width == 0 || self.height == 0 || self.cells.len() != self.width * self.height {
            return Err(EnvError::Invalid("empty or ragged grid".into()));
        }
        if self.width > 4000 || self.height > 4000 {
            return Err(EnvError::Invalid("grid too large".into()));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(EnvError::DifficultyOutOfRange(self.difficulty));
        }
        let expect = |kind: Cell, n: usize| -> Result<(), EnvError> {
            let got = self.count(kind);
            if got != n {
                return Err(EnvError::Invalid(format!(
                    "{} task needs {n} `{}` cell(s), found {got}",
                    self.family,
                    kind.glyph()
                )));
            }
            Ok(())
        };
        match self.family {
            Family::Rds => {
                expect(Cell::Goal, 1)?;
                expect(Cell::Monster, 0)?;
                expect(Cell::Sword, 0)?;
                expect(Cell::Shield, 0)?;
            }
            Family::Ssm => {
                expect(Cell::Monster, 1)?;
                expect(Cell::Sword, 1)?;
                expect(Cell::Shield, 1)?;
                expect(Cell::Goal, 0)?;
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in self.cells.chunks(self.width) {
            out.extend(row.iter().map(|c| c.glyph()));
            out.push('\n');
        }
        out
    }
}

fn generation_seed(family: Family, width: usize, height: usize, difficulty: f64, seed: u64) -> u64 {
    // splitmix64 over the identifying fields
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [
        family as u64 + 1,
        width as u64,
        height as u64,
        difficulty.to_bits(),
    ] {
        h = h.wrapping_add(v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 29;
    }
    h
}

/// Procedurally generates a solvable task.
///
/// Lava is placed one cell at a time in a random order, skipping any cell
/// whose placement would strand some permitted initial state; a layout is
/// accepted once exactly `round(difficulty * eligible)` cells are lava.
pub fn generate_task(
    family: Family,
    width: usize,
    height: usize,
    difficulty: f64,
    seed: u64,
) -> Result<GridTask, EnvError> {
    if width < 4 || height < 4 {
        return Err(EnvError::Invalid(format!(
            "grid must be at least 4x4, got {width}x{height}"
        )));
    }
    if width > 4000 || height > 4000 {
        return Err(EnvError::Invalid("grid too large".into()));
    }
    if !(0.0..=1.0).contains(&difficulty) || difficulty.is_nan() {
        return Err(EnvError::DifficultyOutOfRange(difficulty));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(generation_seed(family, width, height, difficulty, seed));
    let specials: &[Cell] = match family {
        Family::Rds => &[Cell::Goal],
        Family::Ssm => &[Cell::Sword, Cell::Shield, Cell::Monster],
    };
    let n = width * height;
    let eligible = n - specials.len();
    let n_lava = (difficulty * eligible as f64).round() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_RESAMPLES {
        order.shuffle(&mut rng);
        let mut task = GridTask {
            family,
            width,
            height,
            cells: vec![Cell::Floor; n],
            difficulty,
            seed,
            task_id: seed,
            init_mode: InitMode::AllNonterminal,
        };
        for (i, &kind) in specials.iter().enumerate() {
            task.cells[order[i]] = kind;
        }
        if !StateSpace::new(&task).is_solvable() {
            continue;
        }
        let mut placed = 0;
        for &cell in &order[specials.len()..] {
            if placed == n_lava {
                break;
            }
            task.cells[cell] = Cell::Lava;
            if StateSpace::new(&task).is_solvable() {
                placed += 1;
            } else {
                task.cells[cell] = Cell::Floor;
            }
        }
        if placed == n_lava {
            return Ok(task);
        }
    }
    Err(EnvError::GenerationExhausted {
        attempts: MAX_RESAMPLES,
        difficulty,
    })
}

/// Deterministic transition. Returns the successor, its reward and whether it
/// is terminal.
pub fn step(task: &GridTask, state: &EnvState, action: Action) -> Result<(EnvState, f64, bool), EnvError> {
    if state.terminal {
        return Err(EnvError::SteppedTerminal);
    }
    let (dx, dy) = action.delta();
    let nx = state.x as i64 + dx as i64;
    let ny = state.y as i64 + dy as i64;
    if nx < 0 || ny < 0 || nx >= task.width as i64 || ny >= task.height as i64 {
        return Ok((*state, 0.0, false));
    }
    let mut next = *state;
    next.x = nx as u16;
    next.y = ny as u16;
    let reward = match task.cell(nx as usize, ny as usize) {
        Cell::Floor => 0.0,
        Cell::Lava => {
            next.terminal = true;
            0.0
        }
        Cell::Sword => {
            next.has_sword = true;
            0.0
        }
        Cell::Shield => {
            next.has_shield = true;
            0.0
        }
        Cell::Monster => {
            next.terminal = true;
            if state.has_sword && state.has_shield {
                next.success = true;
                1.0
            } else {
                0.0
            }
        }
        Cell::Goal => {
            next.terminal = true;
            next.success = true;
            1.0
        }
    };
    Ok((next, reward, next.terminal))
}
