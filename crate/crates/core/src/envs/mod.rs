//! Desk-scale DLCMDP environments and the name registry.

mod gridworld;
mod reacher;
mod windy;

pub use gridworld::{
    grid_step, Cell, GridAction, GridworldEnv, GOAL_REWARD, GRID_SIZE, NUM_CELLS, STEP_REWARD,
};
pub use reacher::{reacher_step, PointReacherEnv, ARENA, REACHER_DT};
pub use windy::{
    windy_step, WindyChainEnv, TARGET_VELOCITY_BOUND, VELOCITY_LIMIT, WINDY_DT, WIND_STRENGTH,
};

use crate::config::table1;
use crate::dlcmdp::{DlcmdpSpec, Environment};
use crate::error::{Error, Result};

pub const ENV_NAMES: [&str; 3] = ["gridworld", "point-reacher", "windy-chain"];

/// Environment kind resolved from its registry name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Gridworld,
    PointReacher,
    WindyChain,
}

impl EnvKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gridworld" => Ok(EnvKind::Gridworld),
            "point-reacher" => Ok(EnvKind::PointReacher),
            "windy-chain" => Ok(EnvKind::WindyChain),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Gridworld => "gridworld",
            EnvKind::PointReacher => "point-reacher",
            EnvKind::WindyChain => "windy-chain",
        }
    }

    /// Hyperparameter column this environment takes its defaults from.
    pub fn column(self) -> &'static table1::Column {
        match self {
            EnvKind::Gridworld => &table1::GRIDWORLD,
            EnvKind::PointReacher => &table1::REACHER,
            EnvKind::WindyChain => &table1::HALF_CHEETAH,
        }
    }

    /// Whether the context changes the transition (and so needs a state decoder).
    pub fn dynamics_vary(self) -> bool {
        self == EnvKind::WindyChain
    }
}

/// Builds an environment; `None` overrides fall back to the defaults.
pub fn make_env(
    name: &str,
    horizon: Option<usize>,
    switch_prob: Option<f64>,
) -> Result<Box<dyn Environment>> {
    let kind = EnvKind::parse(name)?;
    let col = kind.column();
    let horizon = horizon.unwrap_or(col.horizon);
    let p = switch_prob.unwrap_or(col.switch_prob);
    let env: Box<dyn Environment> = match kind {
        EnvKind::Gridworld => Box::new(GridworldEnv::new(horizon, p)),
        EnvKind::PointReacher => Box::new(PointReacherEnv::new(horizon, p)),
        EnvKind::WindyChain => Box::new(WindyChainEnv::new(horizon, p)),
    };
    env.spec().validate()?;
    Ok(env)
}

pub fn env_spec(name: &str) -> Result<DlcmdpSpec> {
    Ok(make_env(name, None, None)?.spec().clone())
}
