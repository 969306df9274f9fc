//! Deterministic grid simulators behind a uniform reset/step interface.
//!
//! Observations are flat binary vectors made of two planes over the grid
//! cells: a visitation plane (1 where the agent has been this episode)
//! followed by a position one-hot plane. Entropy measurement uses only
//! the first plane; the position plane exists to keep the observation
//! Markov for the policy. In [`WallGridWorld`], unobservable cells read 0
//! in both planes for the whole episode.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("size and horizon must be positive")]
    Config,
    #[error("action {action} out of range for {count} actions")]
    InvalidAction { action: usize, count: usize },
    #[error("step called after episode end")]
    EpisodeOver,
    #[error("layout error at line {line}, column {column}: {message}")]
    Layout {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("layout error: {0}")]
    LayoutShape(String),
}

/// One environment step: `(s, a, r, s', done)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<u16>,
    pub next_state: Vec<u16>,
    pub action: usize,
    pub extrinsic_reward: f64,
    pub done: bool,
}

/// Grid actions, indexed 0..4.
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

/// Uniform interface over the grid environments.
pub trait Env {
    /// Start a fresh episode and return its first observation.
    fn reset(&mut self) -> Vec<u16>;
    /// Apply an action. Off-edge and into-wall moves keep the position
    /// but still consume a step.
    fn step(&mut self, action: usize) -> Result<Transition, EnvError>;
    fn action_count(&self) -> usize;
    /// Cells per plane; the observation is `2 * cells()` long and its
    /// first `cells()` entries are the entropy-measured visitation plane.
    fn cells(&self) -> usize;
    fn observation_len(&self) -> usize {
        2 * self.cells()
    }
    /// Flat cell index of the agent, for occupancy maps.
    fn position_index(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CellKind {
    Observable,
    Unobservable,
    Wall,
    Goal,
}

/// Shared movement/observation engine for the square grid and the
/// wall variant. `observation` holds the visitation plane then the
/// position one-hot plane; masked (unobservable) cells stay 0 in both.
#[derive(Debug, Clone)]
struct GridCore {
    rows: usize,
    cols: usize,
    kinds: Vec<CellKind>,
    start: usize,
    horizon: usize,
    pos: usize,
    step_count: usize,
    done: bool,
    observation: Vec<u16>,
}

impl GridCore {
    fn new(rows: usize, cols: usize, kinds: Vec<CellKind>, start: usize, horizon: usize) -> Self {
        let mut core = Self {
            rows,
            cols,
            kinds,
            start,
            horizon,
            pos: start,
            step_count: 0,
            done: false,
            observation: vec![0; 2 * rows * cols],
        };
        core.reset();
        core
    }

    fn cells(&self) -> usize {
        self.rows * self.cols
    }

    fn observable(&self, cell: usize) -> bool {
        self.kinds[cell] != CellKind::Unobservable
    }

    fn reset(&mut self) -> Vec<u16> {
        self.pos = self.start;
        self.step_count = 0;
        self.done = false;
        self.observation.fill(0);
        self.mark_position();
        self.observation.clone()
    }

    fn mark_position(&mut self) {
        let cells = self.cells();
        if self.observable(self.pos) {
            self.observation[self.pos] = 1;
            self.observation[cells + self.pos] = 1;
        }
    }

    fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        if action >= 4 {
            return Err(EnvError::InvalidAction { action, count: 4 });
        }
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let state = self.observation.clone();
        let (row, col) = (self.pos / self.cols, self.pos % self.cols);
        let (nr, nc) = match action {
            UP => (row.wrapping_sub(1), col),
            DOWN => (row + 1, col),
            LEFT => (row, col.wrapping_sub(1)),
            _ => (row, col + 1),
        };
        let cells = self.cells();
        if nr < self.rows && nc < self.cols && self.kinds[nr * self.cols + nc] != CellKind::Wall {
            if self.observable(self.pos) {
                self.observation[cells + self.pos] = 0;
            }
            self.pos = nr * self.cols + nc;
            self.mark_position();
        }
        self.step_count += 1;
        let on_goal = self.kinds[self.pos] == CellKind::Goal;
        let extrinsic_reward = if on_goal { 1.0 } else { 0.0 };
        self.done = on_goal || self.step_count >= self.horizon;
        Ok(Transition {
            state,
            next_state: self.observation.clone(),
            action,
            extrinsic_reward,
            done: self.done,
        })
    }
}

/// Open square grid: start at (0,0), no extrinsic reward, fixed horizon.
#[derive(Debug, Clone)]
pub struct GridWorld {
    core: GridCore,
}

impl GridWorld {
    pub fn new(size: usize, horizon: usize) -> Result<Self, EnvError> {
        if size == 0 || horizon == 0 {
            return Err(EnvError::Config);
        }
        let kinds = vec![CellKind::Observable; size * size];
        Ok(Self {
            core: GridCore::new(size, size, kinds, 0, horizon),
        })
    }

    pub fn size(&self) -> usize {
        self.core.rows
    }
}

impl Env for GridWorld {
    fn reset(&mut self) -> Vec<u16> {
        self.core.reset()
    }

    fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        self.core.step(action)
    }

    fn action_count(&self) -> usize {
        4
    }

    fn cells(&self) -> usize {
        self.core.cells()
    }

    fn position_index(&self) -> usize {
        self.core.pos
    }
}

/// Grid with walls, a goal, and an unobservable region whose cells never
/// show up in the observation. Reaching the goal pays +1 and ends the
/// episode.
#[derive(Debug, Clone)]
pub struct WallGridWorld {
    core: GridCore,
}

/// Cell legend for layout text: `.` observable, `B` unobservable,
/// `#` wall, `G` goal, `S` start (observable). Rows must be equal length;
/// exactly one `S`, at least one `G`.
pub fn parse_layout(text: &str) -> Result<(Vec<LayoutCell>, usize, usize), EnvError> {
    let mut kinds = Vec::new();
    let mut cols = None;
    let mut start = None;
    let mut goals = 0usize;
    let mut rows = 0usize;
    for (row, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let width = line.chars().count();
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(EnvError::Layout {
                    line: row + 1,
                    column: width.min(c) + 1,
                    message: format!("ragged row: expected width {c}, found {width}"),
                })
            }
            _ => {}
        }
        for (col, ch) in line.chars().enumerate() {
            let kind = match ch {
                '.' => LayoutCell::Observable,
                'B' => LayoutCell::Unobservable,
                '#' => LayoutCell::Wall,
                'G' => {
                    goals += 1;
                    LayoutCell::Goal
                }
                'S' => {
                    if start.is_some() {
                        return Err(EnvError::Layout {
                            line: row + 1,
                            column: col + 1,
                            message: "duplicate start cell".into(),
                        });
                    }
                    start = Some(rows * cols.unwrap() + col);
                    LayoutCell::Start
                }
                other => {
                    return Err(EnvError::Layout {
                        line: row + 1,
                        column: col + 1,
                        message: format!("unknown character {other:?}"),
                    })
                }
            };
            kinds.push(kind);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(EnvError::LayoutShape("empty layout".into()));
    }
    if start.is_none() {
        return Err(EnvError::LayoutShape("missing start cell".into()));
    }
    if goals == 0 {
        return Err(EnvError::LayoutShape("missing goal cell".into()));
    }
    Ok((kinds, rows, cols.unwrap()))
}

/// Cell kinds as parsed from layout text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutCell {
    Observable,
    Unobservable,
    Wall,
    Goal,
    Start,
}

impl WallGridWorld {
    pub fn from_layout(text: &str, horizon: usize) -> Result<Self, EnvError> {
        if horizon == 0 {
            return Err(EnvError::Config);
        }
        let (parsed, rows, cols) = parse_layout(text)?;
        let mut start = 0;
        let kinds = parsed
            .iter()
            .enumerate()
            .map(|(i, &k)| match k {
                LayoutCell::Observable => CellKind::Observable,
                LayoutCell::Unobservable => CellKind::Unobservable,
                LayoutCell::Wall => CellKind::Wall,
                LayoutCell::Goal => CellKind::Goal,
                LayoutCell::Start => {
                    start = i;
                    CellKind::Observable
                }
            })
            .collect();
        Ok(Self {
            core: GridCore::new(rows, cols, kinds, start, horizon),
        })
    }

    pub fn rows(&self) -> usize {
        self.core.rows
    }

    pub fn cols(&self) -> usize {
        self.core.cols
    }

    /// True at cells that never appear in observations.
    pub fn unobservable_mask(&self) -> Vec<bool> {
        self.core
            .kinds
            .iter()
            .map(|&k| k == CellKind::Unobservable)
            .collect()
    }

    /// True at plain observable floor cells (walls, goals, and
    /// unobservable cells excluded).
    pub fn open_observable_mask(&self) -> Vec<bool> {
        self.core
            .kinds
            .iter()
            .map(|&k| k == CellKind::Observable)
            .collect()
    }
}

impl Env for WallGridWorld {
    fn reset(&mut self) -> Vec<u16> {
        self.core.reset()
    }

    fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        self.core.step(action)
    }

    fn action_count(&self) -> usize {
        4
    }

    fn cells(&self) -> usize {
        self.core.cells()
    }

    fn position_index(&self) -> usize {
        self.core.pos
    }
}

/// Integer line walk for the tail-probability analysis: starts at 0,
/// steps ±1, runs exactly `horizon` steps. Not part of the [`Env`]
/// family — its observation is the signed position itself.
#[derive(Debug, Clone)]
pub struct RandomWalk1D {
    pub position: i64,
    pub horizon: usize,
    step_count: usize,
}

impl RandomWalk1D {
    pub fn new(horizon: usize) -> Result<Self, EnvError> {
        if horizon == 0 {
            return Err(EnvError::Config);
        }
        Ok(Self {
            position: 0,
            horizon,
            step_count: 0,
        })
    }

    pub fn reset(&mut self) -> i64 {
        self.position = 0;
        self.step_count = 0;
        self.position
    }

    pub fn done(&self) -> bool {
        self.step_count >= self.horizon
    }

    /// Action 0 steps left, 1 steps right.
    pub fn step(&mut self, action: usize) -> Result<i64, EnvError> {
        if action >= 2 {
            return Err(EnvError::InvalidAction { action, count: 2 });
        }
        if self.done() {
            return Err(EnvError::EpisodeOver);
        }
        self.position += if action == 0 { -1 } else { 1 };
        self.step_count += 1;
        Ok(self.position)
    }
}

/// Action sequence that snakes through every cell of a `size` grid:
/// right across the first row, one step down, left across, and so on.
/// Step `t` of the sequence always enters an unvisited cell, so a
/// `horizon`-step episode visits `horizon + 1` distinct cells (grid
/// permitting) — the exploration ceiling used in tests.
pub fn serpentine_actions(size: usize) -> Vec<usize> {
    let mut actions = Vec::with_capacity(size * size - 1);
    for row in 0..size {
        let along = if row % 2 == 0 { RIGHT } else { LEFT };
        for _ in 0..size - 1 {
            actions.push(along);
        }
        if row + 1 < size {
            actions.push(DOWN);
        }
    }
    actions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(plane: &[u16]) -> usize {
        plane.iter().filter(|&&v| v == 1).count()
    }

    #[test]
    fn reset_marks_start_cell_only() {
        let mut env = GridWorld::new(5, 30).unwrap();
        let obs = env.reset();
        assert_eq!(obs.len(), 50);
        assert_eq!(ones(&obs[..25]), 1);
        assert_eq!(obs[0], 1);
        assert_eq!(ones(&obs[25..]), 1);
        assert_eq!(obs[25], 1);
    }

    #[test]
    fn edges_clamp_and_consume_steps() {
        let mut env = GridWorld::new(3, 10).unwrap();
        env.reset();
        let t = env.step(LEFT).unwrap();
        assert_eq!(env.position_index(), 0);
        assert_eq!(t.extrinsic_reward, 0.0);
        assert!(!t.done);
        assert_eq!(t.state[..9], t.next_state[..9]);
        let t = env.step(UP).unwrap();
        assert_eq!(env.position_index(), 0);
        assert!(!t.done);
        let t = env.step(DOWN).unwrap();
        assert_eq!(env.position_index(), 3);
        assert_eq!(t.next_state[3], 1);
        assert_eq!(t.next_state[9 + 3], 1);
        assert_eq!(t.next_state[9], 0, "position one-hot moved");
        assert_eq!(t.next_state[0], 1, "visitation is sticky");
    }

    #[test]
    fn horizon_terminates_and_stepping_after_done_is_an_error() {
        let mut env = GridWorld::new(3, 4).unwrap();
        env.reset();
        for i in 0..4 {
            let t = env.step(RIGHT).unwrap();
            assert_eq!(t.done, i == 3);
        }
        assert_eq!(env.step(RIGHT).unwrap_err(), EnvError::EpisodeOver);
        env.reset();
        assert!(env.step(RIGHT).is_ok());
    }

    #[test]
    fn invalid_action_is_rejected() {
        let mut env = GridWorld::new(3, 4).unwrap();
        env.reset();
        assert_eq!(
            env.step(7).unwrap_err(),
            EnvError::InvalidAction { action: 7, count: 4 }
        );
    }

    #[test]
    fn identical_action_sequences_are_deterministic() {
        let mut a = GridWorld::new(6, 50).unwrap();
        let mut b = GridWorld::new(6, 50).unwrap();
        assert_eq!(a.reset(), b.reset());
        let actions = [DOWN, DOWN, RIGHT, UP, LEFT, RIGHT, RIGHT, DOWN];
        for &act in actions.iter().cycle().take(50) {
            assert_eq!(a.step(act).unwrap(), b.step(act).unwrap());
        }
    }

    #[test]
    fn serpentine_visits_horizon_plus_one_cells() {
        let size = 7;
        let mut env = GridWorld::new(size, size * size - 1).unwrap();
        env.reset();
        let mut last = None;
        for &a in &serpentine_actions(size) {
            last = Some(env.step(a).unwrap());
        }
        let t = last.unwrap();
        assert!(t.done);
        assert_eq!(ones(&t.next_state[..size * size]), size * size);
    }

    #[test]
    fn visited_count_matches_unique_positions() {
        let mut env = GridWorld::new(5, 60).unwrap();
        env.reset();
        let mut positions = std::collections::HashSet::new();
        positions.insert(env.position_index());
        let actions = [DOWN, RIGHT, RIGHT, UP, DOWN, LEFT, DOWN, DOWN, RIGHT, UP];
        let mut final_obs = Vec::new();
        for &a in actions.iter().cycle().take(60) {
            let t = env.step(a).unwrap();
            positions.insert(env.position_index());
            final_obs = t.next_state;
        }
        assert_eq!(ones(&final_obs[..25]), positions.len());
    }

    #[test]
    fn layout_parses_all_kinds() {
        let env = WallGridWorld::from_layout("S#\nBG", 10).unwrap();
        assert_eq!(env.rows(), 2);
        assert_eq!(env.cols(), 2);
        assert_eq!(env.unobservable_mask(), vec![false, false, true, false]);
    }

    #[test]
    fn layout_errors_carry_positions() {
        match parse_layout("S.\n.").unwrap_err() {
            EnvError::Layout { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("ragged"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_layout("S.\n.X").unwrap_err() {
            EnvError::Layout { line, column, message } => {
                assert_eq!((line, column), (2, 2));
                assert!(message.contains('X'));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_layout("S.\nS.").unwrap_err() {
            EnvError::Layout { line, column, message } => {
                assert_eq!((line, column), (2, 1));
                assert!(message.contains("duplicate start"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_layout("..\n.G"), Err(EnvError::LayoutShape(_))));
        assert!(matches!(parse_layout("S.\n.."), Err(EnvError::LayoutShape(_))));
    }

    #[test]
    fn walls_block_and_goal_terminates_with_reward() {
        // S next to a wall on the right; goal below.
        let mut env = WallGridWorld::from_layout("S#\nG.", 10).unwrap();
        env.reset();
        let t = env.step(RIGHT).unwrap();
        assert_eq!(env.position_index(), 0, "wall blocks");
        assert!(!t.done);
        let t = env.step(DOWN).unwrap();
        assert_eq!(t.extrinsic_reward, 1.0);
        assert!(t.done);
    }

    #[test]
    fn unobservable_cells_read_zero_in_both_planes() {
        // Corridor of B cells between start and goal.
        let mut env = WallGridWorld::from_layout("SBBG", 20).unwrap();
        env.reset();
        let mask = env.unobservable_mask();
        let t = loop {
            let t = env.step(RIGHT).unwrap();
            for (cell, &m) in mask.iter().enumerate() {
                if m {
                    assert_eq!(t.next_state[cell], 0);
                    assert_eq!(t.next_state[4 + cell], 0);
                }
            }
            if t.done {
                break t;
            }
        };
        assert_eq!(t.extrinsic_reward, 1.0);
        assert_eq!(env.position_index(), 3);
    }

    #[test]
    fn random_walk_tracks_position() {
        let mut walk = RandomWalk1D::new(4).unwrap();
        assert_eq!(walk.reset(), 0);
        assert_eq!(walk.step(1).unwrap(), 1);
        assert_eq!(walk.step(1).unwrap(), 2);
        assert_eq!(walk.step(0).unwrap(), 1);
        assert_eq!(walk.step(1).unwrap(), 2);
        assert!(walk.done());
        assert_eq!(walk.step(1).unwrap_err(), EnvError::EpisodeOver);
        assert!(walk.position.unsigned_abs() as usize <= 4);
    }
}
