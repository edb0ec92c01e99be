/// `|tau - 1{u < 0}| * u^2`
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    expectile_weight(u, tau) * u * u
}

/// Asymmetric weight of a residual.
pub fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// Minimizer over `e` of `sum_i expectile_loss(x_i - e, tau)`, found by
/// solving the weighted-mean condition on each gap of the sorted samples.
pub fn sample_expectile(samples: &[f64], tau: f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let total: f64 = x.iter().sum();
    let mut below = 0.0;
    for k in 0..=n {
        let e = ((1.0 - tau) * below + tau * (total - below))
            / ((1.0 - tau) * k as f64 + tau * (n - k) as f64);
        let lo = if k == 0 { f64::NEG_INFINITY } else { x[k - 1] };
        let hi = if k == n { f64::INFINITY } else { x[k] };
        if lo <= e && e <= hi {
            return e;
        }
        if k < n {
            below += x[k];
        }
    }
    f64::NAN
}

/// `min(exp(beta * advantage), w_max)`
pub fn awr_weight(advantage: f64, beta: f64, w_max: f64) -> f64 {
    (beta * advantage).exp().min(w_max)
}

/// `-mean(w * log_prob)` with clipped exponential weights.
pub fn awr_policy_loss(log_probs: &[f64], advantages: &[f64], beta: f64, w_max: f64) -> f64 {
    assert_eq!(log_probs.len(), advantages.len());
    if log_probs.is_empty() {
        return 0.0;
    }
    let s: f64 = log_probs
        .iter()
        .zip(advantages)
        .map(|(lp, a)| awr_weight(*a, beta, w_max) * lp)
        .sum();
    -s / log_probs.len() as f64
}

/// Half-cosine decay from `lr0` to zero; steps past the end give zero.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return 0.0;
    }
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
}
