//! Procedurally generated gridworlds: navigation (RDS) and sword/shield/monster (SSM).

mod grid;
mod io;
mod space;
mod state;

pub use grid::{generate_task, step, Cell, Family, GridTask, InitMode, MAX_RESAMPLES};
pub use io::{load_task, save_task, task_from_str, task_to_string};
pub use space::{enumerate_states, Next, StateSpace};
pub use state::{indicator, target_of, Action, Embedding, EnvState, Indicator, Target, TargetSet};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("no solvable layout after {attempts} resamples at difficulty {difficulty}")]
    GenerationExhausted { attempts: usize, difficulty: f64 },
    #[error("step called on a terminal state")]
    SteppedTerminal,
    #[error("difficulty {0} outside [0, 1]")]
    DifficultyOutOfRange(f64),
    #[error("unknown task family `{0}`")]
    UnknownFamily(String),
    #[error("invalid task: {0}")]
    Invalid(String),
    #[error("line {line}, field `{field}`: {msg}")]
    Parse {
        line: usize,
        field: String,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
