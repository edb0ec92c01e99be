//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub probes: usize,
}

/// Compares the analytic gradient of `loss` at `params` with central
/// differences on `probe_count` distinct random coordinates (all of them if
/// there are fewer). Relative error uses `max(|g|, |fd|, 1e-8)` as the
/// denominator.
///
/// `loss` returns the scalar loss and its full gradient.
pub fn grad_check<F, R>(
    loss: F,
    params: &[f64],
    probe_count: usize,
    step_size: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    R: Rng + ?Sized,
{
    grad_check_sweep(loss, params, probe_count, &[step_size], rng)
}

/// [`grad_check`] over several step sizes: each coordinate is scored by its
/// smallest relative error across `steps`. Large steps tame roundoff on
/// coordinates with tiny gradients; small steps avoid straddling kinks.
pub fn grad_check_sweep<F, R>(
    loss: F,
    params: &[f64],
    probe_count: usize,
    steps: &[f64],
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    R: Rng + ?Sized,
{
    if steps.is_empty() || steps.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::GradCheck("step sizes must be positive".into()));
    }
    let (base, grad) = loss(params)?;
    if !base.is_finite() {
        return Err(Error::GradCheck(format!("loss is not finite ({base})")));
    }
    if grad.len() != params.len() {
        return Err(Error::GradCheck(format!(
            "gradient has {} entries for {} parameters",
            grad.len(),
            params.len()
        )));
    }
    let probes: Vec<usize> = if probe_count >= params.len() {
        (0..params.len()).collect()
    } else {
        let mut v = sample(rng, params.len(), probe_count).into_vec();
        v.sort_unstable();
        v
    };
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: probes.first().copied().unwrap_or(0),
        probes: probes.len(),
    };
    for &i in &probes {
        let orig = theta[i];
        let mut best = f64::INFINITY;
        for &h in steps {
            theta[i] = orig + h;
            let (up, _) = loss(&theta)?;
            theta[i] = orig - h;
            let (down, _) = loss(&theta)?;
            theta[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::GradCheck(format!(
                    "loss not finite while probing coordinate {i}"
                )));
            }
            let fd = (up - down) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            best = best.min((grad[i] - fd).abs() / denom);
            if best == 0.0 {
                break;
            }
        }
        if best > report.max_rel_error {
            report.max_rel_error = best;
            report.worst_coordinate = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_squared_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let theta: Vec<f64> = (0..100)
            .map(|i| 1.0 + 0.5 * (i as f64 * 0.37).cos())
            .collect();
        let loss = |p: &[f64]| Ok((0.5 * p.iter().map(|x| x * x).sum::<f64>(), p.to_vec()));
        // Central differences are exact on a quadratic, so a wide step only
        // trims roundoff.
        let r = grad_check(loss, &theta, 64, 1e-3, &mut rng).unwrap();
        assert_eq!(r.probes, 64);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn sweep_still_rejects_wrong_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = |p: &[f64]| Ok((p[0].sin(), vec![1.02 * p[0].cos()]));
        let r = grad_check_sweep(loss, &[0.3], 1, &[1e-3, 1e-5, 1e-7], &mut rng).unwrap();
        assert!(r.max_rel_error > 0.01, "{r:?}");
        let good = |p: &[f64]| Ok((p[0].sin(), vec![p[0].cos()]));
        let r = grad_check_sweep(good, &[0.3], 1, &[1e-3, 1e-5], &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert!(grad_check_sweep(good, &[0.3], 1, &[], &mut rng).is_err());
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = |p: &[f64]| Ok((4.2, vec![0.0; p.len()]));
        let r = grad_check(loss, &[1.0, 2.0, 3.0], 64, 1e-5, &mut rng).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.probes, 3);
    }

    #[test]
    fn wrong_gradient_is_detected_and_nan_is_failure() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = |p: &[f64]| Ok((p[0] * p[0], vec![p[0]]));
        let r = grad_check(loss, &[1.0], 1, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error > 0.4);
        let bad = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(matches!(
            grad_check(bad, &[1.0], 1, 1e-5, &mut rng),
            Err(Error::GradCheck(_))
        ));
    }
}
