//! Dense layers, MLPs and the gated recurrent cell.

use serde::{Deserialize, Serialize};

use super::params::{Init, ModelParams, ParamsBuilder, Slot};
use super::tape::{Tape, Var};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape<'_>, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: Slot,
    pub bias: Slot,
}

impl Linear {
    pub fn new(b: &mut ParamsBuilder, name: &str, input: usize, output: usize) -> Self {
        Self::with_init(b, name, input, output, Init::FanInUniform)
    }

    pub fn with_init(
        b: &mut ParamsBuilder,
        name: &str,
        input: usize,
        output: usize,
        init: Init,
    ) -> Self {
        Self::with_inits(b, name, input, output, init, Init::Zeros)
    }

    pub fn with_inits(
        b: &mut ParamsBuilder,
        name: &str,
        input: usize,
        output: usize,
        weight_init: Init,
        bias_init: Init,
    ) -> Self {
        Self {
            weight: b.matrix(format!("{name}.weight"), output, input, weight_init),
            bias: b.vector(format!("{name}.bias"), output, bias_init),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        tape.affine(self.weight, Some(self.bias), x)
    }
}

/// Affine layers with `activation` between them; the last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes` lists every width including input and output, so
    /// `[4, 32, 32, 1]` has two hidden layers.
    pub fn new(b: &mut ParamsBuilder, name: &str, sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(b, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.output_dim()).unwrap_or(0)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h);
            if i < last {
                h = self.activation.apply(tape, h);
            }
        }
        h
    }
}

/// Gated recurrent unit.
///
/// Gate convention, used by every recurrent model in the crate:
///
/// ```text
/// r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
///
/// `h'` is a convex combination of `n` and `h`, so `|h| <= 1` is preserved.
/// `b_iz` starts at [`GRU_UPDATE_BIAS`] so fresh cells lean towards keeping
/// their state.
pub const GRU_UPDATE_BIAS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gru {
    pub input_reset: Linear,
    pub input_update: Linear,
    pub input_new: Linear,
    pub hidden_reset: Linear,
    pub hidden_update: Linear,
    pub hidden_new: Linear,
}

impl Gru {
    pub fn new(b: &mut ParamsBuilder, name: &str, input: usize, hidden: usize) -> Self {
        let inp = |b: &mut ParamsBuilder, g: &str| {
            Linear::new(b, &format!("{name}.input_{g}"), input, hidden)
        };
        let hid = |b: &mut ParamsBuilder, g: &str| {
            Linear::with_init(
                b,
                &format!("{name}.hidden_{g}"),
                hidden,
                hidden,
                Init::Orthogonal,
            )
        };
        Self {
            input_reset: inp(b, "reset"),
            input_update: Linear::with_inits(
                b,
                &format!("{name}.input_update"),
                input,
                hidden,
                Init::FanInUniform,
                Init::Constant(GRU_UPDATE_BIAS),
            ),
            input_new: inp(b, "new"),
            hidden_reset: hid(b, "reset"),
            hidden_update: hid(b, "update"),
            hidden_new: hid(b, "new"),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_reset.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_reset.output_dim()
    }

    pub fn step(&self, tape: &mut Tape<'_>, hidden: Var, x: Var) -> Var {
        let ir = self.input_reset.forward(tape, x);
        let hr = self.hidden_reset.forward(tape, hidden);
        let r_pre = tape.add(ir, hr);
        let r = tape.sigmoid(r_pre);

        let iz = self.input_update.forward(tape, x);
        let hz = self.hidden_update.forward(tape, hidden);
        let z_pre = tape.add(iz, hz);
        let z = tape.sigmoid(z_pre);

        let inn = self.input_new.forward(tape, x);
        let hn = self.hidden_new.forward(tape, hidden);
        let gated = tape.mul(r, hn);
        let n_pre = tape.add(inn, gated);
        let n = tape.tanh(n_pre);

        // h' = n + z * (h - n)
        let diff = tape.sub(hidden, n);
        let zd = tape.mul(z, diff);
        tape.add(n, zd)
    }
}

/// Checked single forward pass through `mlp`.
pub fn mlp_forward(params: &ModelParams, mlp: &Mlp, input: &[f64]) -> Result<Vec<f64>> {
    ensure(input.len() == mlp.input_dim(), || {
        format!(
            "mlp input has length {}, expected {}",
            input.len(),
            mlp.input_dim()
        )
    })?;
    check_extent(params, mlp.layers.iter().flat_map(|l| [l.weight, l.bias]))?;
    let mut tape = Tape::new(params.as_slice());
    let x = tape.constant(input);
    let y = mlp.forward(&mut tape, x);
    Ok(tape.value(y).to_vec())
}

/// Checked single recurrent step.
pub fn gru_step(
    params: &ModelParams,
    gru: &Gru,
    hidden: &[f64],
    input: &[f64],
) -> Result<Vec<f64>> {
    ensure(hidden.len() == gru.hidden_dim(), || {
        format!(
            "hidden has length {}, expected {}",
            hidden.len(),
            gru.hidden_dim()
        )
    })?;
    ensure(input.len() == gru.input_dim(), || {
        format!(
            "input has length {}, expected {}",
            input.len(),
            gru.input_dim()
        )
    })?;
    check_extent(
        params,
        [
            gru.input_reset,
            gru.input_update,
            gru.input_new,
            gru.hidden_reset,
            gru.hidden_update,
            gru.hidden_new,
        ]
        .into_iter()
        .flat_map(|l| [l.weight, l.bias]),
    )?;
    let mut tape = Tape::new(params.as_slice());
    let h = tape.constant(hidden);
    let x = tape.constant(input);
    let y = gru.step(&mut tape, h, x);
    Ok(tape.value(y).to_vec())
}

fn check_extent(params: &ModelParams, slots: impl IntoIterator<Item = Slot>) -> Result<()> {
    for s in slots {
        ensure(s.offset + s.len() <= params.len(), || {
            format!(
                "layer slot {}..{} exceeds parameter store of length {}",
                s.offset,
                s.offset + s.len(),
                params.len()
            )
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_mlp_outputs_zero() {
        let mut b = ParamsBuilder::new();
        let mlp = Mlp::new(&mut b, "m", &[3, 8, 8, 2], Activation::Relu);
        let p = b.build_zeros().unwrap();
        assert_eq!(
            mlp_forward(&p, &mlp, &[1.0, -2.0, 3.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn identity_mlp_passes_input_through() {
        let mut b = ParamsBuilder::new();
        let mlp = Mlp::new(&mut b, "m", &[3, 3, 3], Activation::Identity);
        let mut p = b.build_zeros().unwrap();
        for name in ["m.0.weight", "m.1.weight"] {
            let w = p.get_mut(name).unwrap();
            for i in 0..3 {
                w[i * 3 + i] = 1.0;
            }
        }
        let x = [0.25, -4.0, 7.5];
        assert_eq!(mlp_forward(&p, &mlp, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn shape_mismatch_is_invalid_argument() {
        let mut b = ParamsBuilder::new();
        let mlp = Mlp::new(&mut b, "m", &[3, 2], Activation::Relu);
        let gru = Gru::new(&mut b, "g", 2, 4);
        let p = b.build_zeros().unwrap();
        assert!(mlp_forward(&p, &mlp, &[1.0]).is_err());
        assert!(gru_step(&p, &gru, &[0.0; 3], &[0.0; 2]).is_err());
        assert!(gru_step(&p, &gru, &[0.0; 4], &[0.0; 5]).is_err());
    }

    #[test]
    fn zero_gru_keeps_zero_hidden() {
        let mut b = ParamsBuilder::new();
        let gru = Gru::new(&mut b, "g", 3, 5);
        let p = b.build_zeros().unwrap();
        assert_eq!(
            gru_step(&p, &gru, &[0.0; 5], &[1.0, 2.0, 3.0]).unwrap(),
            vec![0.0; 5]
        );
    }

    #[test]
    fn gru_hidden_stays_in_unit_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut b = ParamsBuilder::new();
        let gru = Gru::new(&mut b, "g", 2, 6);
        let mut p = b.build(&mut rng).unwrap();
        for x in p.as_mut_slice() {
            *x *= 5.0;
        }
        let input = [3.0, -2.0];
        let mut h = vec![0.0; 6];
        for _ in 0..200 {
            h = gru_step(&p, &gru, &h, &input).unwrap();
            assert!(h.iter().all(|v| v.abs() <= 1.0), "{h:?}");
        }
    }

    fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        b.iter()
            .enumerate()
            .map(|(i, bi)| {
                bi + x
                    .iter()
                    .enumerate()
                    .map(|(j, xj)| w[i * x.len() + j] * xj)
                    .sum::<f64>()
            })
            .collect()
    }

    #[test]
    fn mlp_matches_explicit_matrix_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [Activation::Relu, Activation::Tanh] {
            let mut b = ParamsBuilder::new();
            let mlp = Mlp::new(&mut b, "m", &[4, 6, 5, 3], act);
            let mut p = b.build(&mut rng).unwrap();
            p.as_mut_slice().iter_mut().for_each(|x| *x += 0.1);
            let x = [0.5, -1.2, 2.0, 0.3];
            let mut h = x.to_vec();
            for i in 0..3 {
                h = dense(
                    p.get(&format!("m.{i}.weight")).unwrap(),
                    p.get(&format!("m.{i}.bias")).unwrap(),
                    &h,
                );
                if i < 2 {
                    h = h
                        .into_iter()
                        .map(|v| {
                            if act == Activation::Relu {
                                v.max(0.0)
                            } else {
                                v.tanh()
                            }
                        })
                        .collect();
                }
            }
            let got = mlp_forward(&p, &mlp, &x).unwrap();
            assert!(got.iter().zip(&h).all(|(a, b)| (a - b).abs() < 1e-13));
        }
    }

    #[test]
    fn gru_matches_scalar_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut b = ParamsBuilder::new();
        let gru = Gru::new(&mut b, "g", 3, 4);
        let mut p = b.build(&mut rng).unwrap();
        p.as_mut_slice().iter_mut().for_each(|x| *x += 0.05);
        assert!(p
            .get("g.input_update.bias")
            .unwrap()
            .iter()
            .all(|&v| v == GRU_UPDATE_BIAS + 0.05));
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let lin = |name: &str, x: &[f64]| {
            dense(
                p.get(&format!("g.{name}.weight")).unwrap(),
                p.get(&format!("g.{name}.bias")).unwrap(),
                x,
            )
        };
        let mut h = vec![0.2, -0.4, 0.0, 0.9];
        for x in [[1.0, 0.0, -1.0], [0.3, 0.3, 0.3], [-2.0, 1.5, 0.1]] {
            let (ir, hr) = (lin("input_reset", &x), lin("hidden_reset", &h));
            let (iz, hz) = (lin("input_update", &x), lin("hidden_update", &h));
            let (inn, hn) = (lin("input_new", &x), lin("hidden_new", &h));
            let want: Vec<f64> = (0..4)
                .map(|k| {
                    let r = sig(ir[k] + hr[k]);
                    let z = sig(iz[k] + hz[k]);
                    let n = (inn[k] + r * hn[k]).tanh();
                    (1.0 - z) * n + z * h[k]
                })
                .collect();
            let got = gru_step(&p, &gru, &h, &x).unwrap();
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-14));
            h = got;
        }
    }
}
