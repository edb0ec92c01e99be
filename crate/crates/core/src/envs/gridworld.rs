use rand::{Rng, RngCore};

use crate::dlcmdp::{Action, ActionSpace, DlcmdpSpec, EnvStep, Environment};
use crate::error::{Error, Result};

pub const GRID_SIZE: usize = 5;
pub const STEP_REWARD: f64 = -0.1;
pub const GOAL_REWARD: f64 = 1.0;
pub const NUM_CELLS: usize = GRID_SIZE * GRID_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl GridAction {
    pub const ALL: [GridAction; 5] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
        GridAction::Stay,
    ];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

/// One move on an `n x n` grid. Walls are no-ops; the goal never ends the
/// episode because it may move when the next session starts.
pub fn grid_step(n: usize, pos: Cell, action: GridAction, goal: Cell) -> (Cell, f64) {
    let mut next = pos;
    match action {
        GridAction::Up if pos.y + 1 < n => next.y += 1,
        GridAction::Down if pos.y > 0 => next.y -= 1,
        GridAction::Left if pos.x > 0 => next.x -= 1,
        GridAction::Right if pos.x + 1 < n => next.x += 1,
        _ => {}
    }
    let reward = if next == goal {
        GOAL_REWARD
    } else {
        STEP_REWARD
    };
    (next, reward)
}

/// Gridworld whose goal cell is the latent context. Observations and
/// contexts are one-hot cells.
#[derive(Clone, Debug)]
pub struct GridworldEnv {
    spec: DlcmdpSpec,
    pos: Cell,
    t: usize,
}

impl GridworldEnv {
    pub fn new(horizon: usize, switch_prob: f64) -> Self {
        Self {
            spec: DlcmdpSpec {
                name: "gridworld".into(),
                state_dim: NUM_CELLS,
                action_space: ActionSpace::Discrete { n: 5 },
                latent_dim: NUM_CELLS,
                switch_prob,
                horizon,
            },
            pos: Cell { x: 0, y: 0 },
            t: 0,
        }
    }

    /// One-hot vector over the `GRID_SIZE * GRID_SIZE` cells, row-major.
    pub fn encode_cell(c: Cell) -> Vec<f64> {
        let mut v = vec![0.0; NUM_CELLS];
        v[c.y * GRID_SIZE + c.x] = 1.0;
        v
    }

    pub fn decode_cell(v: &[f64]) -> Result<Cell> {
        if v.len() != NUM_CELLS {
            return Err(Error::invalid(format!(
                "grid cells are one-hot vectors of length {NUM_CELLS}, got {}",
                v.len()
            )));
        }
        let hot: Vec<usize> = (0..NUM_CELLS).filter(|&i| v[i] == 1.0).collect();
        match hot[..] {
            [i] if v.iter().all(|&x| x == 0.0 || x == 1.0) => Ok(Cell {
                x: i % GRID_SIZE,
                y: i / GRID_SIZE,
            }),
            _ => Err(Error::invalid("not a one-hot grid cell")),
        }
    }

    pub fn position(&self) -> Cell {
        self.pos
    }

    pub fn set_position(&mut self, c: Cell) {
        self.pos = c;
    }
}

fn random_cell(rng: &mut dyn RngCore) -> Cell {
    Cell {
        x: rng.random_range(0..GRID_SIZE),
        y: rng.random_range(0..GRID_SIZE),
    }
}

impl Environment for GridworldEnv {
    fn spec(&self) -> &DlcmdpSpec {
        &self.spec
    }

    fn sample_latent(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        Self::encode_cell(random_cell(rng))
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.pos = random_cell(rng);
        self.t = 0;
        Self::encode_cell(self.pos)
    }

    fn step(&mut self, action: &Action, latent: &[f64]) -> Result<EnvStep> {
        let a = match action {
            Action::Discrete(i) => GridAction::from_index(*i)
                .ok_or_else(|| Error::invalid(format!("grid action {i}")))?,
            Action::Continuous(_) => {
                return Err(Error::invalid("gridworld takes discrete actions"))
            }
        };
        let goal = Self::decode_cell(latent)?;
        let (next, reward) = grid_step(GRID_SIZE, self.pos, a, goal);
        self.pos = next;
        self.t += 1;
        Ok(EnvStep {
            state: Self::encode_cell(next),
            reward,
            done: self.t >= self.spec.horizon,
        })
    }
}
