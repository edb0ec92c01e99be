use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{BeliefInput, Method};
use crate::dlcmdp::{Action, ActionSpace, Actor, Observation};
use crate::error::{ensure, Error, Result};
use crate::numerics::{
    diag_gaussian_entropy_var, diag_gaussian_log_prob_var, Activation, Gru, Init, Linear, Mlp,
    ModelParams, ParamsBuilder, SliceInfo, Slot, Tape, Var,
};

/// The sampled action before squashing; what log-probabilities refer to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawAction {
    Discrete(usize),
    /// Pre-tanh Gaussian sample.
    Continuous(Vec<f64>),
}

/// What the policy network reads each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyInput {
    /// State and posterior `[mu, sigma]`.
    Belief,
    /// State and one posterior sample.
    BeliefSample,
    /// State and the true context.
    TrueLatent,
    StateOnly,
    /// `[s_t, r_{t-1}, a_{t-1}]` into a recurrent cell.
    History,
}

impl PolicyInput {
    pub fn for_method(method: Method, belief_input: BeliefInput) -> Self {
        match method {
            Method::Dynamite | Method::VaribadAblation => match belief_input {
                BeliefInput::MeanSigma => PolicyInput::Belief,
                BeliefInput::Sample => PolicyInput::BeliefSample,
            },
            Method::Rl2Lite => PolicyInput::History,
            Method::Blind => PolicyInput::StateOnly,
            Method::Oracle => PolicyInput::TrueLatent,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Feedforward { actor: Mlp, critic: Mlp },
    Recurrent(Rl2Body),
}

#[derive(Clone, Debug, PartialEq)]
struct Rl2Body {
    state_embed: Linear,
    reward_embed: Linear,
    gru: Gru,
    actor: Linear,
    critic: Linear,
}

/// Actor-critic over one of the [`PolicyInput`] layouts. Feedforward
/// variants use separate actor and critic MLPs; the recurrent variant
/// shares a GRU between two linear heads.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub input: PolicyInput,
    pub space: ActionSpace,
    pub state_dim: usize,
    /// Length of the per-step feature vector.
    pub feature_dim: usize,
    body: Body,
    log_std: Option<Slot>,
    layout: Vec<SliceInfo>,
    len: usize,
}

/// Tape handles for one step: logits (discrete) or Gaussian mean, and value.
#[derive(Clone, Copy, Debug)]
pub struct StepHeads {
    pub dist: Var,
    pub value: Var,
}

const RL2_EMBED: usize = 32;

impl PolicyNet {
    /// `context_dim` is the posterior latent size for belief inputs or the
    /// environment's context size for the oracle; ignored otherwise.
    pub fn new(
        input: PolicyInput,
        space: ActionSpace,
        state_dim: usize,
        context_dim: usize,
        hidden: &[usize],
    ) -> Self {
        let out = match &space {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Continuous { dim, .. } => *dim,
        };
        let action_dim = space.encoded_dim();
        let feature_dim = match input {
            PolicyInput::Belief => state_dim + 2 * context_dim,
            PolicyInput::BeliefSample | PolicyInput::TrueLatent => state_dim + context_dim,
            PolicyInput::StateOnly => state_dim,
            PolicyInput::History => state_dim + 1 + action_dim,
        };
        let mut b = ParamsBuilder::new();
        let body = if input == PolicyInput::History {
            let h = hidden.last().copied().unwrap_or(128);
            let state_embed = Linear::new(&mut b, "rl2.state_embed", state_dim, RL2_EMBED);
            let reward_embed = Linear::new(&mut b, "rl2.reward_embed", 1, RL2_EMBED);
            let gru = Gru::new(&mut b, "rl2.gru", 2 * RL2_EMBED + action_dim, h);
            let actor = Linear::with_init(&mut b, "rl2.actor", h, out, Init::Zeros);
            let critic = Linear::new(&mut b, "rl2.critic", h, 1);
            Body::Recurrent(Rl2Body {
                state_embed,
                reward_embed,
                gru,
                actor,
                critic,
            })
        } else {
            let sizes = |o: usize| {
                let mut v = vec![feature_dim];
                v.extend(hidden);
                v.push(o);
                v
            };
            Body::Feedforward {
                actor: Mlp::new(&mut b, "actor", &sizes(out), Activation::Relu),
                critic: Mlp::new(&mut b, "critic", &sizes(1), Activation::Relu),
            }
        };
        let log_std = matches!(space, ActionSpace::Continuous { .. })
            .then(|| b.vector("actor.log_std", out, Init::Zeros));
        let len = b.len();
        let layout = b
            .build_zeros()
            .expect("policy names are unique")
            .slices()
            .to_vec();
        Self {
            input,
            space,
            state_dim,
            feature_dim,
            body,
            log_std,
            layout,
            len,
        }
    }

    pub fn num_params(&self) -> usize {
        self.len
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self.body, Body::Recurrent(_))
    }

    pub fn hidden_dim(&self) -> usize {
        match &self.body {
            Body::Recurrent(r) => r.gru.hidden_dim(),
            Body::Feedforward { .. } => 0,
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParams {
        let mut b = ParamsBuilder::new();
        for s in &self.layout {
            match s.shape.as_slice() {
                [r, c] => b.matrix(s.name.clone(), *r, *c, s.init),
                [n] => b.vector(s.name.clone(), *n, s.init),
                _ => unreachable!("policy slices are matrices or vectors"),
            };
        }
        b.build(rng).expect("policy names are unique")
    }

    pub fn zero_params(&self) -> ModelParams {
        ModelParams::from_parts(self.layout.clone(), vec![0.0; self.len])
            .expect("layout is contiguous")
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        ensure(params.len() == self.len, || {
            format!(
                "policy parameters have length {}, network needs {}",
                params.len(),
                self.len
            )
        })
    }

    /// Feature vector for one step.
    pub fn features(&self, obs: &Observation<'_>, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        ensure(obs.state.len() == self.state_dim, || {
            format!(
                "state has length {}, expected {}",
                obs.state.len(),
                self.state_dim
            )
        })?;
        let mut f = Vec::with_capacity(self.feature_dim);
        f.extend_from_slice(obs.state);
        match self.input {
            PolicyInput::Belief | PolicyInput::BeliefSample => {
                let b = obs.belief.ok_or_else(|| {
                    Error::invalid("belief-conditioned policy rolled out without an encoder")
                })?;
                if self.input == PolicyInput::Belief {
                    f.extend(&b.mu);
                    f.extend(&b.sigma);
                } else {
                    for (m, s) in b.mu.iter().zip(&b.sigma) {
                        let e: f64 = StandardNormal.sample(rng);
                        f.push(m + s * e);
                    }
                }
            }
            PolicyInput::TrueLatent => f.extend_from_slice(obs.latent),
            PolicyInput::StateOnly => {}
            PolicyInput::History => {
                f.push(obs.prev_reward);
                match obs.prev_action {
                    Some(a) => f.extend(self.space.encode(a)),
                    None => f.extend(std::iter::repeat_n(0.0, self.space.encoded_dim())),
                }
            }
        }
        ensure(f.len() == self.feature_dim, || {
            format!(
                "policy features have length {}, expected {}",
                f.len(),
                self.feature_dim
            )
        })?;
        Ok(f)
    }

    /// Heads for a single step. For the recurrent body, `hidden` is the
    /// incoming state and the outgoing one is returned.
    pub fn step_var(
        &self,
        tape: &mut Tape<'_>,
        features: Var,
        hidden: Option<Var>,
    ) -> (StepHeads, Option<Var>) {
        match &self.body {
            Body::Feedforward { actor, critic } => {
                let dist = actor.forward(tape, features);
                let value = critic.forward(tape, features);
                (StepHeads { dist, value }, None)
            }
            Body::Recurrent(r) => {
                let sd = self.state_dim;
                let ad = self.space.encoded_dim();
                let s = tape.slice(features, 0, sd);
                let rew = tape.slice(features, sd, 1);
                let a = tape.slice(features, sd + 1, ad);
                let es = r.state_embed.forward(tape, s);
                let es = tape.relu(es);
                let er = r.reward_embed.forward(tape, rew);
                let er = tape.relu(er);
                let x = tape.concat(&[es, er, a]);
                let h0 = match hidden {
                    Some(h) => h,
                    None => tape.constant(&vec![0.0; r.gru.hidden_dim()]),
                };
                let h = r.gru.step(tape, h0, x);
                let dist = r.actor.forward(tape, h);
                let value = r.critic.forward(tape, h);
                (StepHeads { dist, value }, Some(h))
            }
        }
    }

    /// Heads for a whole episode. The recurrent body threads its hidden
    /// state through the steps when `carry` is set and restarts from zero
    /// at every step otherwise.
    pub fn episode_var(
        &self,
        tape: &mut Tape<'_>,
        features: &[Vec<f64>],
        carry: bool,
    ) -> Vec<StepHeads> {
        let mut hidden = None;
        let mut out = Vec::with_capacity(features.len());
        for f in features {
            let x = tape.constant(f);
            let (heads, h) = self.step_var(tape, x, if carry { hidden } else { None });
            hidden = h;
            out.push(heads);
        }
        out
    }

    pub fn log_std_var(&self, tape: &mut Tape<'_>) -> Option<Var> {
        self.log_std.map(|s| tape.param(s))
    }

    /// Log-probability of the stored pre-squash action. The tanh Jacobian
    /// is omitted: it depends only on the sample and cancels in ratios.
    pub fn log_prob_var(
        &self,
        tape: &mut Tape<'_>,
        dist: Var,
        log_std: Option<Var>,
        action: &RawAction,
    ) -> Result<Var> {
        match (action, log_std) {
            (RawAction::Discrete(a), None) => {
                ensure(*a < tape.dim(dist), || {
                    format!("action {a} outside {} logits", tape.dim(dist))
                })?;
                let ls = tape.log_softmax(dist);
                Ok(tape.slice(ls, *a, 1))
            }
            (RawAction::Continuous(u), Some(ls)) => {
                ensure(u.len() == tape.dim(dist), || {
                    "continuous action has the wrong dimension".to_string()
                })?;
                Ok(diag_gaussian_log_prob_var(tape, dist, ls, u))
            }
            _ => Err(Error::invalid(
                "action kind does not match the policy's action space",
            )),
        }
    }

    pub fn entropy_var(&self, tape: &mut Tape<'_>, dist: Var, log_std: Option<Var>) -> Var {
        match log_std {
            None => {
                let ls = tape.log_softmax(dist);
                let p = tape.exp(ls);
                let plp = tape.dot(p, ls);
                tape.neg(plp)
            }
            Some(ls) => diag_gaussian_entropy_var(tape, ls),
        }
    }
}

/// Squashes a pre-tanh sample into the box `[low, high]`.
pub fn squash(u: &[f64], low: f64, high: f64) -> Vec<f64> {
    u.iter()
        .map(|x| low + 0.5 * (x.tanh() + 1.0) * (high - low))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ActMode {
    #[default]
    Sample,
    /// Most likely action: arg-max logit or squashed mean.
    Greedy,
}

/// Rollout-side bookkeeping for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub features: Vec<f64>,
    pub raw: RawAction,
    pub log_prob: f64,
    pub value: f64,
}

/// Samples actions from a [`PolicyNet`] with fixed parameters. The
/// log-probability and value are computed through the same tape path the
/// loss uses, so they are reproduced bit for bit during the update.
pub struct PolicyActor<'a> {
    pub net: &'a PolicyNet,
    pub params: &'a ModelParams,
    pub mode: ActMode,
    pub carry_hidden: bool,
    hidden: Option<Vec<f64>>,
}

impl<'a> PolicyActor<'a> {
    pub fn new(
        net: &'a PolicyNet,
        params: &'a ModelParams,
        mode: ActMode,
        carry_hidden: bool,
    ) -> Result<Self> {
        net.check_params(params)?;
        Ok(Self {
            net,
            params,
            mode,
            carry_hidden,
            hidden: None,
        })
    }
}

impl Actor for PolicyActor<'_> {
    type Info = StepInfo;

    fn begin_episode(&mut self) {
        self.hidden = None;
    }

    fn act(&mut self, obs: &Observation<'_>, rng: &mut dyn RngCore) -> Result<(Action, StepInfo)> {
        let net = self.net;
        let features = net.features(obs, rng)?;
        let mut tape = Tape::new(self.params.as_slice());
        let x = tape.constant(&features);
        let h_in = match (&self.hidden, self.carry_hidden) {
            (Some(h), true) => Some(tape.constant(h)),
            _ => None,
        };
        let (heads, h_out) = net.step_var(&mut tape, x, h_in);
        self.hidden = h_out.map(|h| tape.value(h).to_vec());
        let dist = tape.value(heads.dist).to_vec();
        let value = tape.scalar_value(heads.value);
        let log_std = net.log_std_var(&mut tape);
        let (raw, action) = match &net.space {
            ActionSpace::Discrete { .. } => {
                let a = match self.mode {
                    ActMode::Greedy => argmax(&dist),
                    ActMode::Sample => sample_categorical(&dist, rng),
                };
                (RawAction::Discrete(a), Action::Discrete(a))
            }
            ActionSpace::Continuous { low, high, .. } => {
                let ls = tape
                    .value(log_std.expect("continuous policies carry a log-std"))
                    .to_vec();
                let u: Vec<f64> = match self.mode {
                    ActMode::Greedy => dist.clone(),
                    ActMode::Sample => dist
                        .iter()
                        .zip(&ls)
                        .map(|(m, l)| {
                            let e: f64 = StandardNormal.sample(rng);
                            m + l.exp() * e
                        })
                        .collect(),
                };
                let a = squash(&u, *low, *high);
                (RawAction::Continuous(u), Action::Continuous(a))
            }
        };
        let lp = net.log_prob_var(&mut tape, heads.dist, log_std, &raw)?;
        let log_prob = tape.scalar_value(lp);
        if !log_prob.is_finite() || !value.is_finite() {
            return Err(Error::Divergence {
                stage: "rollout",
                iteration: 0,
                detail: format!("non-finite policy output (log-prob {log_prob}, value {value})"),
            });
        }
        Ok((
            action,
            StepInfo {
                features,
                raw,
                log_prob,
                value,
            },
        ))
    }
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from `softmax(logits)`.
fn sample_categorical(logits: &[f64], rng: &mut dyn RngCore) -> usize {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn discrete_net(input: PolicyInput) -> PolicyNet {
        PolicyNet::new(input, ActionSpace::Discrete { n: 5 }, 2, 3, &[16, 16])
    }

    #[test]
    fn zero_recurrent_params_give_uniform_policy() {
        let net = discrete_net(PolicyInput::History);
        let p = net.zero_params();
        let mut tape = Tape::new(p.as_slice());
        let feats = vec![vec![0.3, -0.2, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]; 4];
        for h in net.episode_var(&mut tape, &feats, true) {
            assert_eq!(tape.value(h.dist), &[0.0; 5]);
        }
    }

    #[test]
    fn feature_layouts() {
        assert_eq!(discrete_net(PolicyInput::Belief).feature_dim, 8);
        assert_eq!(discrete_net(PolicyInput::TrueLatent).feature_dim, 5);
        assert_eq!(discrete_net(PolicyInput::StateOnly).feature_dim, 2);
        assert_eq!(discrete_net(PolicyInput::History).feature_dim, 8);
    }

    #[test]
    fn categorical_entropy_of_uniform_logits() {
        let net = discrete_net(PolicyInput::StateOnly);
        let p = net.zero_params();
        let mut tape = Tape::new(p.as_slice());
        let x = tape.constant(&[0.1, 0.2]);
        let (h, _) = net.step_var(&mut tape, x, None);
        let e = net.entropy_var(&mut tape, h.dist, None);
        assert!((tape.scalar_value(e) - 5f64.ln()).abs() < 1e-14);
        let lp = net
            .log_prob_var(&mut tape, h.dist, None, &RawAction::Discrete(3))
            .unwrap();
        assert!((tape.scalar_value(lp) + 5f64.ln()).abs() < 1e-14);
        assert!(net
            .log_prob_var(&mut tape, h.dist, None, &RawAction::Discrete(5))
            .is_err());
    }

    #[test]
    fn gaussian_log_prob_matches_closed_form() {
        let space = ActionSpace::Continuous {
            dim: 2,
            low: -1.0,
            high: 1.0,
        };
        let net = PolicyNet::new(PolicyInput::StateOnly, space, 2, 0, &[8]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = net.init_params(&mut rng);
        p.get_mut("actor.log_std")
            .unwrap()
            .copy_from_slice(&[0.3, -0.7]);
        let mut tape = Tape::new(p.as_slice());
        let x = tape.constant(&[0.5, -0.5]);
        let (h, _) = net.step_var(&mut tape, x, None);
        let ls = net.log_std_var(&mut tape);
        let u = vec![0.2, -1.1];
        let lp = net
            .log_prob_var(&mut tape, h.dist, ls, &RawAction::Continuous(u.clone()))
            .unwrap();
        let mean = tape.value(h.dist).to_vec();
        let expected: f64 = [0.3f64, -0.7]
            .iter()
            .zip(&mean)
            .zip(&u)
            .map(|((l, m), x)| {
                let s = l.exp();
                -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .sum();
        assert!((tape.scalar_value(lp) - expected).abs() < 1e-12);
        let e = net.entropy_var(&mut tape, h.dist, ls);
        let expected_e = (0.3 - 0.7) + (1.0 + (2.0 * std::f64::consts::PI).ln());
        assert!((tape.scalar_value(e) - expected_e).abs() < 1e-12);
    }

    #[test]
    fn squash_maps_into_bounds() {
        let a = squash(&[-50.0, 0.0, 50.0], -2.0, 4.0);
        assert_eq!(a, vec![-2.0, 1.0, 4.0]);
    }

    #[test]
    fn categorical_sampler_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = [0.0, 1.0f64.ln(), 2.0f64.ln()];
        let mut counts = [0usize; 3];
        for _ in 0..40_000 {
            counts[sample_categorical(&logits, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip([0.25, 0.25, 0.5]) {
            assert!((*c as f64 / 40_000.0 - p).abs() < 0.01);
        }
    }
}
