//! Dense numeric layer: parameter store, reverse-mode tape, layers,
//! Gaussian helpers, Adam and gradient checking.

mod adam;
mod checkpoint;
mod gaussian;
mod gradcheck;
mod nn;
mod params;
mod tape;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader,
};
pub use gaussian::{
    diag_gaussian_entropy_var, diag_gaussian_log_prob_var, kl_diag_gaussian, kl_diag_gaussian_var,
    kl_standard_normal_var, reparameterize, reparameterize_var,
};
pub use gradcheck::{grad_check, grad_check_sweep, GradCheckReport};
pub use nn::{gru_step, mlp_forward, Activation, Gru, Linear, Mlp};
pub use params::{Init, ModelParams, ParamsBuilder, SliceInfo, Slot};
pub use tape::{log_sum_exp, sigmoid, softplus, Tape, Var};
