use std::fmt;

/// The four movement actions, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// Column / row offset of the move.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }
}

/// Structured form of a configuration: the output of the target embedding
/// function and the evaluator's input features.
///
/// An embedding need not describe a reachable (or even valid) state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Embedding {
    pub x: u16,
    pub y: u16,
    pub has_sword: bool,
    pub has_shield: bool,
}

impl Embedding {
    pub fn new(x: u16, y: u16, has_sword: bool, has_shield: bool) -> Self {
        Self {
            x,
            y,
            has_sword,
            has_shield,
        }
    }

    /// Semantic class index: `2 * sword + shield`.
    pub fn class(&self) -> usize {
        (self.has_sword as usize) * 2 + self.has_shield as usize
    }

    pub fn with_class(mut self, class: usize) -> Self {
        self.has_sword = class & 2 != 0;
        self.has_shield = class & 1 != 0;
        self
    }

    pub fn manhattan(&self, other: &Embedding) -> u32 {
        (self.x as i32 - other.x as i32).unsigned_abs()
            + (self.y as i32 - other.y as i32).unsigned_abs()
    }

    /// Grid-independent packing used as a table key.
    pub fn pack(&self) -> u32 {
        self.x as u32
            | (self.y as u32) << 12
            | (self.has_sword as u32) << 24
            | (self.has_shield as u32) << 25
    }

    pub fn unpack(v: u32) -> Self {
        Self {
            x: (v & 0xfff) as u16,
            y: ((v >> 12) & 0xfff) as u16,
            has_sword: v & (1 << 24) != 0,
            has_shield: v & (1 << 25) != 0,
        }
    }
}

impl fmt::Display for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{},{})",
            self.x, self.y, self.has_sword as u8, self.has_shield as u8
        )
    }
}

/// An agent configuration as seen by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub x: u16,
    pub y: u16,
    pub has_sword: bool,
    pub has_shield: bool,
    pub terminal: bool,
    pub success: bool,
}

impl EnvState {
    pub fn alive(e: Embedding) -> Self {
        Self {
            x: e.x,
            y: e.y,
            has_sword: e.has_sword,
            has_shield: e.has_shield,
            terminal: false,
            success: false,
        }
    }

    pub fn embedding(&self) -> Embedding {
        Embedding::new(self.x, self.y, self.has_sword, self.has_shield)
    }

    /// Terminated without success: stepped into lava or met the monster unarmed.
    pub fn failed(&self) -> bool {
        self.terminal && !self.success
    }
}

/// A target: an embedding plus the neighbourhood radius of its indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Target {
    pub embedding: Embedding,
    pub radius: u8,
}

impl Target {
    pub const MAX_RADIUS: u8 = 1;

    pub fn new(embedding: Embedding, radius: u8) -> Self {
        assert!(radius <= Self::MAX_RADIUS, "target radius must be 0 or 1");
        Self { embedding, radius }
    }

    pub fn singleton(embedding: Embedding) -> Self {
        Self::new(embedding, 0)
    }

    pub fn pack(&self) -> u32 {
        self.embedding.pack() | (self.radius as u32) << 28
    }

    pub fn unpack(v: u32) -> Self {
        Self {
            embedding: Embedding::unpack(v & 0x0fff_ffff),
            radius: (v >> 28) as u8,
        }
    }

    /// Key used in CSV dumps: `x:y:sword:shield:radius`.
    pub fn key(&self) -> String {
        let e = &self.embedding;
        format!(
            "{}:{}:{}:{}:{}",
            e.x, e.y, e.has_sword as u8, e.has_shield as u8, self.radius
        )
    }
}

/// Anything that decides membership of a state in a target set.
pub trait Indicator {
    fn matches(&self, state: &EnvState) -> bool;
}

impl Indicator for Target {
    fn matches(&self, state: &EnvState) -> bool {
        indicator(state, self)
    }
}

/// An explicit union of member targets; matches when any member does.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSet {
    pub members: Vec<Target>,
}

impl TargetSet {
    pub fn new(members: Vec<Target>) -> Self {
        Self { members }
    }
}

impl Indicator for TargetSet {
    fn matches(&self, state: &EnvState) -> bool {
        self.members.iter().any(|m| indicator(state, m))
    }
}

/// The target embedding function `g`.
pub fn target_of(state: &EnvState, radius: u8) -> Target {
    Target::new(state.embedding(), radius)
}

/// The indicator `h`.
///
/// A failed terminal state has no configuration left to match and never
/// satisfies any target. Radius 1 requires equal possession flags and a
/// Manhattan distance of at most one.
pub fn indicator(state: &EnvState, target: &Target) -> bool {
    if state.failed() {
        return false;
    }
    let e = state.embedding();
    let t = &target.embedding;
    match target.radius {
        0 => e == *t,
        _ => {
            e.has_sword == t.has_sword
                && e.has_shield == t.has_shield
                && e.manhattan(t) <= target.radius as u32
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(x: u16, y: u16, sw: bool, sh: bool) -> EnvState {
        EnvState::alive(Embedding::new(x, y, sw, sh))
    }

    #[test]
    fn embedding_projects_state() {
        let s = st(3, 4, true, false);
        assert_eq!(target_of(&s, 0).embedding, Embedding::new(3, 4, true, false));
    }

    #[test]
    fn terminal_flag_not_embedded() {
        let a = st(2, 2, true, true);
        let mut b = a;
        b.terminal = true;
        b.success = true;
        assert_eq!(target_of(&a, 0), target_of(&b, 0));
    }

    #[test]
    fn identity_round_trip() {
        let s = st(1, 5, false, true);
        assert!(indicator(&s, &target_of(&s, 0)));
        assert!(indicator(&s, &target_of(&s, 1)));
    }

    #[test]
    fn radius_one_neighbourhood() {
        let s = st(3, 3, true, true);
        let t = Target::new(Embedding::new(3, 4, true, true), 1);
        assert!(indicator(&s, &t));
        let far = Target::new(Embedding::new(4, 4, true, true), 1);
        assert!(!indicator(&s, &far));
        assert!(!indicator(&s, &Target::new(Embedding::new(3, 4, true, true), 0)));
    }

    #[test]
    fn radius_one_requires_equal_flags() {
        let s = st(3, 3, true, false);
        let t = Target::new(Embedding::new(3, 3, false, false), 1);
        assert!(!indicator(&s, &t));
    }

    #[test]
    fn failed_state_matches_nothing() {
        let mut s = st(0, 0, false, false);
        s.terminal = true;
        assert!(!indicator(&s, &target_of(&s, 0)));
    }

    #[test]
    fn pack_round_trip() {
        let t = Target::new(Embedding::new(11, 7, true, false), 1);
        assert_eq!(Target::unpack(t.pack()), t);
        assert_eq!(t.key(), "11:7:1:0:1");
    }
}
