//! Diagonal Gaussian utilities: reparameterized sampling and closed-form KL.

use super::tape::{Tape, Var};
use crate::error::{ensure, Result};

/// `mu + sigma * epsilon`, elementwise.
pub fn reparameterize(mu: &[f64], sigma: &[f64], epsilon: &[f64]) -> Result<Vec<f64>> {
    ensure(mu.len() == sigma.len() && mu.len() == epsilon.len(), || {
        format!(
            "reparameterize: lengths differ (mu {}, sigma {}, epsilon {})",
            mu.len(),
            sigma.len(),
            epsilon.len()
        )
    })?;
    check_positive("sigma", sigma)?;
    Ok(mu
        .iter()
        .zip(sigma)
        .zip(epsilon)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// Differentiable reparameterized sample; gradients reach `mu` and `sigma`.
pub fn reparameterize_var(tape: &mut Tape<'_>, mu: Var, sigma: Var, epsilon: &[f64]) -> Var {
    let eps = tape.constant(epsilon);
    let noise = tape.mul(sigma, eps);
    tape.add(mu, noise)
}

/// `KL(N(mu_q, diag sigma_q^2) || N(mu_p, diag sigma_p^2))`, summed over
/// dimensions.
pub fn kl_diag_gaussian(
    mu_q: &[f64],
    sigma_q: &[f64],
    mu_p: &[f64],
    sigma_p: &[f64],
) -> Result<f64> {
    let n = mu_q.len();
    ensure(
        sigma_q.len() == n && mu_p.len() == n && sigma_p.len() == n,
        || "kl_diag_gaussian: dimension mismatch".to_string(),
    )?;
    check_positive("sigma_q", sigma_q)?;
    check_positive("sigma_p", sigma_p)?;
    let mut kl = 0.0;
    for i in 0..n {
        let ratio = sigma_q[i] / sigma_p[i];
        let diff = (mu_q[i] - mu_p[i]) / sigma_p[i];
        kl += 0.5 * (ratio * ratio + diff * diff - 1.0) - ratio.ln();
    }
    Ok(kl.max(0.0))
}

/// Tape version of [`kl_diag_gaussian`]; returns a scalar node.
pub fn kl_diag_gaussian_var(
    tape: &mut Tape<'_>,
    mu_q: Var,
    sigma_q: Var,
    mu_p: Var,
    sigma_p: Var,
) -> Var {
    let n = tape.dim(mu_q);
    let log_q = tape.ln(sigma_q);
    let log_p = tape.ln(sigma_p);
    let log_ratio = tape.sub(log_p, log_q);
    let var_q = tape.square(sigma_q);
    let var_p = tape.square(sigma_p);
    let d = tape.sub(mu_q, mu_p);
    let d2 = tape.square(d);
    let num = tape.add(var_q, d2);
    let inv_var_p = {
        let lv = tape.ln(var_p);
        let neg = tape.neg(lv);
        tape.exp(neg)
    };
    let frac = tape.mul(num, inv_var_p);
    let half = tape.scale(frac, 0.5);
    let terms = tape.add(log_ratio, half);
    let s = tape.sum(terms);
    tape.shift(s, -0.5 * n as f64)
}

/// KL against the standard normal prior, `sum(0.5 (sigma^2 + mu^2 - 1) - ln sigma)`.
pub fn kl_standard_normal_var(tape: &mut Tape<'_>, mu: Var, sigma: Var) -> Var {
    let n = tape.dim(mu);
    let var = tape.square(sigma);
    let mu2 = tape.square(mu);
    let s = tape.add(var, mu2);
    let half = tape.scale(s, 0.5);
    let log_s = tape.ln(sigma);
    let terms = tape.sub(half, log_s);
    let total = tape.sum(terms);
    tape.shift(total, -0.5 * n as f64)
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log N(x; mean, diag(exp(log_std))^2)` summed over dimensions, with `x`
/// a constant sample.
pub fn diag_gaussian_log_prob_var(tape: &mut Tape<'_>, mean: Var, log_std: Var, x: &[f64]) -> Var {
    let c = tape.constant(x);
    let d = tape.sub(c, mean);
    let nls = tape.neg(log_std);
    let inv = tape.exp(nls);
    let z = tape.mul(d, inv);
    let z2 = tape.square(z);
    let q = tape.sum(z2);
    let q = tape.scale(q, -0.5);
    let s = tape.sum(log_std);
    let lp = tape.sub(q, s);
    tape.shift(lp, -0.5 * x.len() as f64 * LN_2PI)
}

/// Entropy of a diagonal Gaussian from its log standard deviations.
pub fn diag_gaussian_entropy_var(tape: &mut Tape<'_>, log_std: Var) -> Var {
    let d = tape.dim(log_std) as f64;
    let s = tape.sum(log_std);
    tape.shift(s, 0.5 * d * (1.0 + LN_2PI))
}

fn check_positive(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        Some(i) => Err(crate::Error::invalid(format!(
            "{name}[{i}] = {} is not positive",
            v[i]
        ))),
        None => Ok(()),
    }
}
