use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{loss_of, random_pair};
use crate::error::{Result, VonError};
use crate::metrics::{MetricContext, QualityMetric};
use crate::points::Ordering;

const WARMUP_PROPOSALS: usize = 100;
const WARMUP_ACCEPTANCE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SAConfig {
    pub cooling_rate: f64,
    /// Proposals per temperature, as a multiple of `n`.
    pub temp_length_per_n: usize,
    pub restarts: usize,
    /// Stopping temperature as a fraction of the starting temperature.
    pub stop_temp: f64,
    /// Fixed starting temperature; derived from warm-up swaps when absent.
    pub initial_temp: Option<f64>,
}

impl Default for SAConfig {
    fn default() -> Self {
        Self { cooling_rate: 0.9, temp_length_per_n: 100, restarts: 5, stop_temp: 0.1, initial_temp: None }
    }
}

impl SAConfig {
    /// Slower cooling with more restarts.
    pub fn tuned() -> Self {
        Self { cooling_rate: 0.95, restarts: 20, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return Err(VonError::Config(format!("cooling_rate must lie in (0, 1), got {}", self.cooling_rate)));
        }
        if self.temp_length_per_n == 0 || self.restarts == 0 {
            return Err(VonError::Config("temp_length_per_n and restarts must be positive".into()));
        }
        if !(self.stop_temp > 0.0 && self.stop_temp < 1.0) {
            return Err(VonError::Config(format!("stop_temp must lie in (0, 1), got {}", self.stop_temp)));
        }
        if let Some(t) = self.initial_temp {
            if !(t > 0.0 && t.is_finite()) {
                return Err(VonError::Config(format!("initial_temp must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

pub fn acceptance_probability(delta: f64, temp: f64) -> f64 {
    if delta <= 0.0 {
        1.0
    } else {
        (-delta / temp).exp()
    }
}

/// Temperature at which the median warm-up uphill move is accepted with probability 0.8.
fn warmup_temperature<R: Rng>(ctx: &MetricContext, metric: &dyn QualityMetric, n: usize, rng: &mut R) -> Result<f64> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    let base = loss_of(metric, ctx, &p)?;
    let mut deltas = Vec::with_capacity(WARMUP_PROPOSALS);
    for _ in 0..WARMUP_PROPOSALS {
        let (i, j) = random_pair(n, rng);
        p.swap(i, j);
        deltas.push((loss_of(metric, ctx, &p)? - base).abs());
        p.swap(i, j);
    }
    deltas.sort_by(f64::total_cmp);
    let median = deltas[deltas.len() / 2];
    // flat landscapes still need a positive temperature
    let median = if median > 0.0 { median } else { 1e-12 };
    Ok(median / (1.0 / WARMUP_ACCEPTANCE).ln())
}

/// Annealing over arbitrary pair swaps; returns the best order seen over all restarts.
pub fn simulated_annealing<R: Rng>(
    ctx: &MetricContext,
    metric: &dyn QualityMetric,
    cfg: &SAConfig,
    rng: &mut R,
) -> Result<(Ordering, f64)> {
    simulated_annealing_until(ctx, metric, cfg, rng, None)
}

/// [`simulated_annealing`] that gives up with `Timeout` once `deadline` passes.
pub fn simulated_annealing_until<R: Rng>(
    ctx: &MetricContext,
    metric: &dyn QualityMetric,
    cfg: &SAConfig,
    rng: &mut R,
    deadline: Option<Instant>,
) -> Result<(Ordering, f64)> {
    let start = Instant::now();
    cfg.validate()?;
    let n = metric.ordering_len(ctx)?;
    if n < 2 {
        return Err(VonError::Domain(format!("simulated annealing needs n >= 2, got {n}")));
    }
    let t0 = match cfg.initial_temp {
        Some(t) => t,
        None => warmup_temperature(ctx, metric, n, rng)?,
    };
    let t_stop = t0 * cfg.stop_temp;
    let block = cfg.temp_length_per_n * n;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..cfg.restarts {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(rng);
        let mut cur = loss_of(metric, ctx, &p)?;
        if best.as_ref().is_none_or(|b| cur < b.1) {
            best = Some((p.clone(), cur));
        }
        let mut temp = t0;
        while temp > t_stop {
            for _ in 0..block {
                let (i, j) = random_pair(n, rng);
                p.swap(i, j);
                let l = loss_of(metric, ctx, &p)?;
                let delta = l - cur;
                if delta <= 0.0 || rng.gen::<f64>() < acceptance_probability(delta, temp) {
                    cur = l;
                    if cur < best.as_ref().unwrap().1 {
                        best = Some((p.clone(), cur));
                    }
                } else {
                    p.swap(i, j);
                }
            }
            temp *= cfg.cooling_rate;
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Err(VonError::Timeout { millis: start.elapsed().as_millis() });
            }
        }
    }
    let (p, l) = best.unwrap();
    Ok((Ordering::new(p)?, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::brute_force;
    use crate::metrics::test_support::points_ctx;
    use crate::metrics::Metric;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn acceptance_examples() {
        assert_eq!(acceptance_probability(0.0, 2.0), 1.0);
        assert_eq!(acceptance_probability(-1.0, 2.0), 1.0);
        assert!((acceptance_probability(1.5, 1.5) - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn defaults_and_preset() {
        let d = SAConfig::default();
        assert_eq!((d.cooling_rate, d.temp_length_per_n, d.restarts, d.stop_temp), (0.9, 100, 5, 0.1));
        let t = SAConfig::tuned();
        assert_eq!((t.cooling_rate, t.restarts), (0.95, 20));
        assert!(SAConfig { cooling_rate: 1.0, ..d }.validate().is_err());
    }

    #[test]
    fn matches_brute_force_on_small_tsp() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut hits = 0;
        for _ in 0..100 {
            let coords: Vec<f64> = (0..12).map(|_| rng.gen()).collect();
            let ctx = points_ctx(coords, 6, 2);
            let (_, best) = brute_force(&ctx, &Metric::Tsp, 6).unwrap();
            let (o, l) = simulated_annealing(&ctx, &Metric::Tsp, &SAConfig::default(), &mut rng).unwrap();
            assert!((Metric::Tsp.loss(&ctx, &o).unwrap() - l).abs() <= 1e-9);
            if (l - best).abs() <= 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 90, "{hits}/100");
    }

    #[test]
    fn past_deadline_times_out() {
        let ctx = points_ctx(vec![0.0, 0.0, 1.0, 0.0, 2.0, 1.0, 0.0, 3.0], 4, 2);
        let r = simulated_annealing_until(&ctx, &Metric::Tsp, &SAConfig::default(), &mut ChaCha8Rng::seed_from_u64(1), Some(Instant::now()));
        assert!(matches!(r, Err(VonError::Timeout { .. })));
    }

    #[test]
    fn seeded_runs_repeat() {
        let ctx = points_ctx(vec![0.1, 0.9, 0.4, 0.3, 0.8, 0.2, 0.5, 0.7], 4, 2);
        let a = simulated_annealing(&ctx, &Metric::Stress, &SAConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = simulated_annealing(&ctx, &Metric::Stress, &SAConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }
}
