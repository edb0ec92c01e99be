use crate::error::{ensure, Result};

/// Generalized advantage estimates and returns.
///
/// `values` carries the bootstrap value at index `T`. A set `dones[t]` cuts
/// both the bootstrap and the recursion after step `t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    ensure(values.len() == n + 1, || {
        format!("{} values for {n} rewards (need T + 1)", values.len())
    })?;
    ensure(dones.len() == n, || {
        format!("{} done flags for {n} rewards", dones.len())
    })?;
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * values[t + 1] - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Zero mean, unit population standard deviation (plus `1e-8`). Fewer than
/// two entries give zeros.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.len() < 2 {
        return vec![0.0; adv.len()];
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_identity() {
        let (a, r) = compute_gae(&[0.7], &[0.2, 1.5], &[false], 0.99, 0.95).unwrap();
        assert!((a[0] - (0.7 + 0.99 * 1.5 - 0.2)).abs() < 1e-15);
        assert!((r[0] - (a[0] + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn zeros_give_zero_advantage() {
        let (a, _) = compute_gae(&[0.0; 5], &[0.0; 6], &[false; 5], 0.99, 0.95).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn length_checks() {
        assert!(compute_gae(&[1.0], &[0.0], &[false], 0.99, 0.95).is_err());
        assert!(compute_gae(&[1.0], &[0.0, 0.0], &[], 0.99, 0.95).is_err());
    }

    #[test]
    fn done_cuts_bootstrap() {
        let (a, _) = compute_gae(&[1.0, 1.0], &[0.0, 5.0, 9.0], &[false, true], 0.5, 1.0).unwrap();
        assert_eq!(a[1], 1.0 - 5.0);
        assert_eq!(a[0], 1.0 + 0.5 * 5.0 + 0.5 * (1.0 - 5.0));
    }

    #[test]
    fn normalization_edge_cases() {
        assert_eq!(normalize_advantages(&[3.0]), vec![0.0]);
        assert_eq!(normalize_advantages(&[]), Vec::<f64>::new());
        assert!(normalize_advantages(&[2.5; 7]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unit_rewards_without_values() {
        let (a, _) = compute_gae(&[1.0; 3], &[0.0; 4], &[false; 3], 0.99, 0.95).unwrap();
        let k = 0.99 * 0.95;
        let want = [1.0 + k + k * k, 1.0 + k, 1.0];
        assert!(a.iter().zip(want).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!((a[0] - 2.8250).abs() < 1e-4 && (a[1] - 1.9405).abs() < 1e-4);
    }

    #[test]
    fn normalize_three_values() {
        let z = normalize_advantages(&[1.0, 2.0, 3.0]);
        let sd = (2.0f64 / 3.0).sqrt() + 1e-8;
        assert_eq!(z, vec![-1.0 / sd, 0.0, 1.0 / sd]);
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn recursion_equals_discounted_td_sum(
            rv in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0u8..10), 1..64),
            last in -5.0f64..5.0,
            gamma in 0.0f64..1.0,
            lambda in 0.0f64..1.0,
        ) {
            let r: Vec<f64> = rv.iter().map(|x| x.0).collect();
            let mut v: Vec<f64> = rv.iter().map(|x| x.1).collect();
            v.push(last);
            let d: Vec<bool> = rv.iter().map(|x| x.2 == 0).collect();
            let (adv, ret) = compute_gae(&r, &v, &d, gamma, lambda).unwrap();
            let n = r.len();
            for t in 0..n {
                let mut sum = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    let live = if d[k] { 0.0 } else { 1.0 };
                    sum += w * (r[k] + gamma * live * v[k + 1] - v[k]);
                    if d[k] {
                        break;
                    }
                    w *= gamma * lambda;
                }
                prop_assert!((adv[t] - sum).abs() < 1e-10);
                prop_assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
            }
        }

        #[test]
        fn normalized_advantages_are_standardized(x in proptest::collection::vec(-100.0f64..100.0, 2..50)) {
            let z = normalize_advantages(&x);
            let n = z.len() as f64;
            let m = z.iter().sum::<f64>() / n;
            prop_assert!(m.abs() < 1e-9);
            let var = z.iter().map(|v| v * v).sum::<f64>() / n;
            let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 1e-3 {
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
        }
    }
}
