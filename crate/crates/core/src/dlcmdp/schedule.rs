use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Session boundaries of one episode.
///
/// `switch_flags[t]` set means a fresh context takes effect at step `t + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSchedule {
    pub switch_flags: Vec<bool>,
    pub session_ids: Vec<usize>,
}

impl SessionSchedule {
    pub fn from_flags(switch_flags: Vec<bool>) -> Self {
        let mut session_ids = Vec::with_capacity(switch_flags.len() + 1);
        let mut id = 0;
        session_ids.push(0);
        for &f in &switch_flags {
            id += f as usize;
            session_ids.push(id);
        }
        Self {
            switch_flags,
            session_ids,
        }
    }

    /// Rebuilds the schedule from per-step session ids.
    pub fn from_session_ids(session_ids: Vec<usize>) -> Result<Self> {
        if session_ids.first().copied().unwrap_or(0) != 0 {
            return Err(Error::invalid("session ids must start at 0"));
        }
        let mut flags = Vec::with_capacity(session_ids.len().saturating_sub(1));
        for w in session_ids.windows(2) {
            match w[1].checked_sub(w[0]) {
                Some(0) => flags.push(false),
                Some(1) => flags.push(true),
                _ => {
                    return Err(Error::invalid(
                        "session ids must increase by 0 or 1 per step",
                    ))
                }
            }
        }
        Ok(Self::from_flags(flags))
    }

    pub fn horizon(&self) -> usize {
        self.session_ids.len()
    }

    pub fn num_switches(&self) -> usize {
        self.switch_flags.iter().filter(|&&f| f).count()
    }

    pub fn num_sessions(&self) -> usize {
        1 + self.num_switches()
    }

    /// Lengths of the sessions in order; they sum to the horizon.
    pub fn session_lengths(&self) -> Vec<usize> {
        let mut lens = vec![0; self.num_sessions()];
        for &id in &self.session_ids {
            lens[id] += 1;
        }
        lens
    }

    /// Step index within the current session (0 at a session start).
    pub fn steps_into_session(&self, t: usize) -> usize {
        let id = self.session_ids[t];
        self.session_ids[..=t]
            .iter()
            .rev()
            .take_while(|&&s| s == id)
            .count()
            - 1
    }
}

/// Draws `horizon - 1` independent Bernoulli(`p`) switch flags.
pub fn sample_session_schedule<R: Rng + ?Sized>(
    horizon: usize,
    p: f64,
    rng: &mut R,
) -> Result<SessionSchedule> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!(
            "switch probability {p} outside [0, 1]"
        )));
    }
    let flags = (0..horizon - 1).map(|_| rng.random::<f64>() < p).collect();
    Ok(SessionSchedule::from_flags(flags))
}

/// One fresh context per session, drawn from `sampler`.
pub fn resample_latents<R, F>(
    schedule: &SessionSchedule,
    mut sampler: F,
    rng: &mut R,
) -> Vec<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Vec<f64>,
{
    (0..schedule.num_sessions()).map(|_| sampler(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn extreme_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_session_schedule(60, 0.0, &mut rng).unwrap();
        assert_eq!(s.num_switches(), 0);
        assert_eq!(s.num_sessions(), 1);
        let s = sample_session_schedule(5, 1.0, &mut rng).unwrap();
        assert_eq!(s.num_switches(), 4);
        assert_eq!(s.session_ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_session_schedule(0, 0.5, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
        assert!(sample_session_schedule(3, 1.5, &mut rng).is_err());
    }

    #[test]
    fn latent_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let one = SessionSchedule::from_flags(vec![false; 9]);
        assert_eq!(
            resample_latents(
                &one,
                |r: &mut ChaCha8Rng| vec![rand::Rng::random(r)],
                &mut rng
            )
            .len(),
            1
        );
        let three = SessionSchedule::from_flags(vec![false, true, false, true]);
        let l = resample_latents(&three, |_: &mut ChaCha8Rng| vec![4.0, 2.0], &mut rng);
        assert_eq!(l.len(), 3);
        assert!(l.iter().all(|m| m == &vec![4.0, 2.0]));
    }

    #[test]
    fn steps_into_session_counts_from_boundary() {
        let s = SessionSchedule::from_flags(vec![false, true, false, false, true]);
        let got: Vec<_> = (0..6).map(|t| s.steps_into_session(t)).collect();
        assert_eq!(got, vec![0, 1, 0, 1, 2, 0]);
        assert_eq!(s.session_lengths(), vec![2, 3, 1]);
    }

    proptest! {
        #[test]
        fn schedule_invariants(horizon in 1usize..200, p in 0.0f64..=1.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_session_schedule(horizon, p, &mut rng).unwrap();
            prop_assert_eq!(s.switch_flags.len(), horizon - 1);
            prop_assert_eq!(s.session_ids.len(), horizon);
            prop_assert_eq!(s.session_ids[0], 0);
            for t in 0..horizon - 1 {
                prop_assert_eq!(s.session_ids[t + 1] - s.session_ids[t], s.switch_flags[t] as usize);
            }
            prop_assert_eq!(s.num_sessions(), 1 + s.switch_flags.iter().filter(|f| **f).count());
            prop_assert_eq!(s.session_lengths().iter().sum::<usize>(), horizon);
            let again = SessionSchedule::from_session_ids(s.session_ids.clone()).unwrap();
            prop_assert_eq!(again, s.clone());
            let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
            prop_assert_eq!(sample_session_schedule(horizon, p, &mut rng2).unwrap(), s);
        }
    }

    #[test]
    fn session_lengths_are_geometric() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let (p, horizon, n) = (0.1, 40usize, 20_000);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = vec![0.0; horizon + 1];
        for _ in 0..n {
            counts[sample_session_schedule(horizon, p, &mut rng)
                .unwrap()
                .session_lengths()[0]] += 1.0;
        }
        let expect = |k: usize| {
            let q: f64 = 1.0 - p;
            n as f64
                * if k < horizon {
                    q.powi(k as i32 - 1) * p
                } else {
                    q.powi(horizon as i32 - 1)
                }
        };
        // Lengths 1..=horizon all have expected counts above 5 here.
        let chi2: f64 = (1..=horizon)
            .map(|k| (counts[k] - expect(k)).powi(2) / expect(k))
            .sum();
        assert!(expect(horizon - 1) > 5.0);
        let crit = ChiSquared::new((horizon - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999);
        assert!(chi2 < crit, "chi2 {chi2} vs {crit}");
    }
}
