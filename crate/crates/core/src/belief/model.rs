use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PosteriorState;
use crate::dlcmdp::BeliefEncoder;
use crate::error::{ensure, Result};
use crate::numerics::{Activation, Gru, Init, Linear, Mlp, ModelParams, ParamsBuilder, Tape, Var};

/// Lower bound applied to the softplus standard deviation head.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Initial bias of the standard deviation head; `softplus(-2.25) ~ 0.1`.
pub const SIGMA_BIAS_INIT: f64 = -2.25;

/// Architecture of the belief model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeliefArch {
    /// Width of each of the state, action and reward embeddings.
    pub embed_size: usize,
    pub trunk_sizes: Vec<usize>,
    pub gru_hidden: usize,
    pub latent_dim: usize,
    pub decoder_sizes: Vec<usize>,
}

impl Default for BeliefArch {
    fn default() -> Self {
        Self {
            embed_size: 8,
            trunk_sizes: vec![64, 64],
            gru_hidden: 64,
            latent_dim: 5,
            decoder_sizes: vec![32, 32],
        }
    }
}

/// Recurrent encoder with Gaussian and termination heads, plus reward and
/// (optionally) next-state decoders. All weights live in one
/// [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefModel {
    pub arch: BeliefArch,
    pub state_dim: usize,
    pub action_dim: usize,
    state_embed: Linear,
    action_embed: Linear,
    reward_embed: Linear,
    trunk: Mlp,
    gru: Gru,
    mu_head: Linear,
    sigma_head: Linear,
    term_head: Linear,
    reward_decoder: Mlp,
    state_decoder: Option<Mlp>,
    builder_len: usize,
    layout: Vec<crate::numerics::SliceInfo>,
}

/// Tape handles for one encoder step.
#[derive(Clone, Copy, Debug)]
pub struct EncodedStep {
    pub mu: Var,
    pub sigma: Var,
    pub term_logit: Var,
    pub hidden: Var,
}

impl BeliefModel {
    pub fn new(
        arch: BeliefArch,
        state_dim: usize,
        action_dim: usize,
        with_state_decoder: bool,
    ) -> Self {
        let mut b = ParamsBuilder::new();
        let e = arch.embed_size;
        let state_embed = Linear::new(&mut b, "encoder.state_embed", state_dim, e);
        let action_embed = Linear::new(&mut b, "encoder.action_embed", action_dim, e);
        let reward_embed = Linear::new(&mut b, "encoder.reward_embed", 1, e);
        let mut trunk_sizes = vec![3 * e];
        trunk_sizes.extend(&arch.trunk_sizes);
        let trunk = Mlp::new(&mut b, "encoder.trunk", &trunk_sizes, Activation::Relu);
        let trunk_out = *trunk_sizes.last().unwrap();
        let gru = Gru::new(&mut b, "encoder.gru", trunk_out, arch.gru_hidden);
        let mu_head = Linear::new(&mut b, "encoder.mu", arch.gru_hidden, arch.latent_dim);
        let sigma_head = Linear::with_inits(
            &mut b,
            "encoder.sigma",
            arch.gru_hidden,
            arch.latent_dim,
            Init::FanInUniform,
            Init::Constant(SIGMA_BIAS_INIT),
        );
        let term_head = Linear::new(&mut b, "encoder.termination", arch.gru_hidden, 1);
        let dec_sizes = |out: usize| {
            let mut v = vec![arch.latent_dim + state_dim + action_dim];
            v.extend(&arch.decoder_sizes);
            v.push(out);
            v
        };
        let reward_decoder = Mlp::new(&mut b, "decoder.reward", &dec_sizes(1), Activation::Relu);
        let state_decoder = with_state_decoder.then(|| {
            Mlp::new(
                &mut b,
                "decoder.state",
                &dec_sizes(state_dim),
                Activation::Relu,
            )
        });
        let builder_len = b.len();
        let layout = b
            .build_zeros()
            .expect("belief model names are unique")
            .slices()
            .to_vec();
        Self {
            arch,
            state_dim,
            action_dim,
            state_embed,
            action_embed,
            reward_embed,
            trunk,
            gru,
            mu_head,
            sigma_head,
            term_head,
            reward_decoder,
            state_decoder,
            builder_len,
            layout,
        }
    }

    pub fn num_params(&self) -> usize {
        self.builder_len
    }

    pub fn has_state_decoder(&self) -> bool {
        self.state_decoder.is_some()
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.arch.gru_hidden
    }

    /// Fresh parameters: fan-in uniform weights, orthogonal recurrent
    /// kernels, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParams {
        let mut b = ParamsBuilder::new();
        for s in &self.layout {
            match s.shape.as_slice() {
                [r, c] => b.matrix(s.name.clone(), *r, *c, s.init),
                [n] => b.vector(s.name.clone(), *n, s.init),
                _ => unreachable!("belief slices are matrices or vectors"),
            };
        }
        b.build(rng).expect("belief model names are unique")
    }

    pub fn zero_params(&self) -> ModelParams {
        ModelParams::from_parts(self.layout.clone(), vec![0.0; self.builder_len])
            .expect("layout is contiguous")
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        ensure(params.len() == self.builder_len, || {
            format!(
                "belief parameters have length {}, model needs {}",
                params.len(),
                self.builder_len
            )
        })
    }

    /// One recurrent update on the tape from `(a_{t-1}, r_t, s_t)`.
    pub fn encode_var(
        &self,
        tape: &mut Tape<'_>,
        hidden: Var,
        prev_action: Var,
        reward: Var,
        state: Var,
    ) -> EncodedStep {
        let es = self.state_embed.forward(tape, state);
        let es = tape.relu(es);
        let ea = self.action_embed.forward(tape, prev_action);
        let ea = tape.relu(ea);
        let er = self.reward_embed.forward(tape, reward);
        let er = tape.relu(er);
        let joined = tape.concat(&[es, ea, er]);
        let trunk = self.trunk.forward(tape, joined);
        let trunk = tape.relu(trunk);
        let h = self.gru.step(tape, hidden, trunk);
        let mu = self.mu_head.forward(tape, h);
        let raw = self.sigma_head.forward(tape, h);
        let sp = tape.softplus(raw);
        let floor = tape.constant(&vec![SIGMA_FLOOR; self.arch.latent_dim]);
        let sigma = tape.max(sp, floor);
        let term_logit = self.term_head.forward(tape, h);
        EncodedStep {
            mu,
            sigma,
            term_logit,
            hidden: h,
        }
    }

    pub fn decode_reward_var(
        &self,
        tape: &mut Tape<'_>,
        latent: Var,
        next_state: Var,
        action: Var,
    ) -> Var {
        let x = tape.concat(&[latent, next_state, action]);
        self.reward_decoder.forward(tape, x)
    }

    /// Predicted next state, `s + f(m, s, a)`. `None` when the model has no
    /// state decoder.
    pub fn decode_state_var(
        &self,
        tape: &mut Tape<'_>,
        latent: Var,
        state: Var,
        action: Var,
    ) -> Option<Var> {
        let dec = self.state_decoder.as_ref()?;
        let x = tape.concat(&[latent, state, action]);
        let delta = dec.forward(tape, x);
        Some(tape.add(state, delta))
    }

    pub fn initial_state(&self) -> PosteriorState {
        PosteriorState {
            mu: vec![0.0; self.arch.latent_dim],
            sigma: vec![1.0; self.arch.latent_dim],
            term_logit: 0.0,
            hidden: vec![0.0; self.arch.gru_hidden],
        }
    }

    fn check_step(&self, prev: &PosteriorState, prev_action: &[f64], state: &[f64]) -> Result<()> {
        ensure(prev.hidden.len() == self.arch.gru_hidden, || {
            format!(
                "hidden has length {}, expected {}",
                prev.hidden.len(),
                self.arch.gru_hidden
            )
        })?;
        ensure(prev_action.len() == self.action_dim, || {
            format!(
                "action has length {}, expected {}",
                prev_action.len(),
                self.action_dim
            )
        })?;
        ensure(state.len() == self.state_dim, || {
            format!(
                "state has length {}, expected {}",
                state.len(),
                self.state_dim
            )
        })
    }
}

/// Checked encoder step: `(a_{t-1}, r_t, s_t)` and the previous posterior
/// in, new posterior out.
pub fn encode_step(
    params: &ModelParams,
    model: &BeliefModel,
    prev: &PosteriorState,
    prev_action: &[f64],
    reward: f64,
    state: &[f64],
) -> Result<PosteriorState> {
    model.check_params(params)?;
    model.check_step(prev, prev_action, state)?;
    let mut tape = Tape::new(params.as_slice());
    let h = tape.constant(&prev.hidden);
    let a = tape.constant(prev_action);
    let r = tape.constant(&[reward]);
    let s = tape.constant(state);
    let out = model.encode_var(&mut tape, h, a, r, s);
    Ok(PosteriorState {
        mu: tape.value(out.mu).to_vec(),
        sigma: tape.value(out.sigma).to_vec(),
        term_logit: tape.scalar_value(out.term_logit),
        hidden: tape.value(out.hidden).to_vec(),
    })
}

/// Reward prediction for `(m, s', a)`, where `s'` is the state the
/// transition lands in.
pub fn decode_reward(
    params: &ModelParams,
    model: &BeliefModel,
    latent: &[f64],
    next_state: &[f64],
    action: &[f64],
) -> Result<f64> {
    model.check_params(params)?;
    check_decoder_inputs(model, latent, next_state, action)?;
    let mut tape = Tape::new(params.as_slice());
    let m = tape.constant(latent);
    let s = tape.constant(next_state);
    let a = tape.constant(action);
    let y = model.decode_reward_var(&mut tape, m, s, a);
    Ok(tape.scalar_value(y))
}

/// Next-state prediction; `None` when the state decoder is disabled.
pub fn decode_state(
    params: &ModelParams,
    model: &BeliefModel,
    latent: &[f64],
    state: &[f64],
    action: &[f64],
) -> Result<Option<Vec<f64>>> {
    model.check_params(params)?;
    check_decoder_inputs(model, latent, state, action)?;
    let mut tape = Tape::new(params.as_slice());
    let m = tape.constant(latent);
    let s = tape.constant(state);
    let a = tape.constant(action);
    Ok(model
        .decode_state_var(&mut tape, m, s, a)
        .map(|y| tape.value(y).to_vec()))
}

fn check_decoder_inputs(
    model: &BeliefModel,
    latent: &[f64],
    state: &[f64],
    action: &[f64],
) -> Result<()> {
    ensure(
        latent.len() == model.latent_dim()
            && state.len() == model.state_dim
            && action.len() == model.action_dim,
        || "decoder input dimensions do not match the model".to_string(),
    )
}

/// Posteriors `q_0 ..= q_T` for a whole trajectory: `q_0` sees `s_0` with a
/// zero action and reward, `q_{t+1}` adds `(a_t, r_t, s_{t+1})`.
pub fn encode_trajectory(
    params: &ModelParams,
    model: &BeliefModel,
    traj: &crate::dlcmdp::Trajectory,
    space: &crate::dlcmdp::ActionSpace,
) -> Result<Vec<PosteriorState>> {
    let enc = FrozenEncoder { model, params };
    let mut out = Vec::with_capacity(traj.len() + 1);
    let zero = vec![0.0; model.action_dim];
    let mut q = enc.update(&enc.initial(), &zero, 0.0, &traj.states[0])?;
    out.push(q.clone());
    for t in 0..traj.len() {
        q = enc.update(
            &q,
            &space.encode(&traj.actions[t]),
            traj.rewards[t],
            &traj.states[t + 1],
        )?;
        out.push(q.clone());
    }
    Ok(out)
}

/// A belief model with fixed parameters, usable during rollouts.
#[derive(Clone, Copy)]
pub struct FrozenEncoder<'a> {
    pub model: &'a BeliefModel,
    pub params: &'a ModelParams,
}

impl BeliefEncoder for FrozenEncoder<'_> {
    fn initial(&self) -> PosteriorState {
        self.model.initial_state()
    }

    fn update(
        &self,
        prev: &PosteriorState,
        prev_action: &[f64],
        reward: f64,
        state: &[f64],
    ) -> Result<PosteriorState> {
        encode_step(self.params, self.model, prev, prev_action, reward, state)
    }
}
