//! One entry point for ordering an instance with a model or a classical solver.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::Method;
use crate::error::{Result, VonError};
use crate::instance::Instance;
use crate::metrics::{score_from_loss, Metric, QualityMetric};
use crate::model::{CheckpointInfo, Model};
use crate::points::Ordering;

/// The JSON shape every ordering command and endpoint returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderResult {
    pub order: Vec<usize>,
    pub score: f64,
    pub loss: f64,
    pub millis: f64,
}

/// `model:<id>` or a baseline key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MethodSpec {
    Model(String),
    Baseline(Method),
}

impl FromStr for MethodSpec {
    type Err = VonError;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("model:") {
            Some("") => Err(VonError::Config("`model:` needs a checkpoint id".into())),
            Some(id) => Ok(MethodSpec::Model(id.to_string())),
            None => s.parse().map(MethodSpec::Baseline),
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodSpec::Model(id) => write!(f, "model:{id}"),
            MethodSpec::Baseline(m) => write!(f, "{m}"),
        }
    }
}

pub enum Solver<'a> {
    Model(&'a Model),
    Baseline(Method),
}

/// Rejects requests for a metric the checkpoint was not trained on.
pub fn check_checkpoint_metric(info: &CheckpointInfo, requested: Metric) -> Result<()> {
    if info.metric != requested {
        return Err(VonError::MetricMismatch { trained: info.metric.to_string(), requested: requested.to_string() });
    }
    Ok(())
}

/// Orders `inst`; models decode greedily, solvers draw from a `seed`-ed stream.
pub fn solve(solver: &Solver<'_>, inst: &Instance, metric: Metric, seed: u64, deadline: Option<Instant>) -> Result<OrderResult> {
    let start = Instant::now();
    let (order, loss) = match solver {
        Solver::Model(m) => {
            let o: Ordering = m.greedy(&inst.input)?;
            let l = metric.loss(&inst.ctx, &o)?;
            (o, l)
        }
        Solver::Baseline(method) => method.solve_until(&inst.ctx, &metric, &mut ChaCha8Rng::seed_from_u64(seed), deadline)?,
    };
    Ok(OrderResult {
        order: order.into_vec(),
        score: score_from_loss(metric.direction(), loss),
        loss,
        millis: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::uniform_points;
    use crate::metrics::MetricParams;
    use crate::points::validate_ordering;

    #[test]
    fn method_specs_parse() {
        assert_eq!("model:tsp20".parse::<MethodSpec>().unwrap(), MethodSpec::Model("tsp20".into()));
        assert_eq!("sa-tuned".parse::<MethodSpec>().unwrap(), MethodSpec::Baseline(Method::SaTuned));
        assert!("model:".parse::<MethodSpec>().is_err());
        assert!("magic".parse::<MethodSpec>().is_err());
        assert_eq!(MethodSpec::Model("x".into()).to_string(), "model:x");
    }

    #[test]
    fn results_satisfy_the_loss_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = Instance::from_points(Metric::Ks, &MetricParams::default(), uniform_points(6, 2, &mut rng)).unwrap();
        let r = solve(&Solver::Baseline(Method::Rs), &inst, Metric::Ks, 3, None).unwrap();
        assert!(validate_ordering(&r.order, 6));
        assert_eq!(r.score, -r.loss);
        assert_eq!(r, OrderResult { millis: r.millis, ..solve(&Solver::Baseline(Method::Rs), &inst, Metric::Ks, 3, None).unwrap() });
    }

    #[test]
    fn checkpoint_metric_must_match() {
        let info = CheckpointInfo { metric: Metric::Tsp, metric_params: MetricParams::default(), train_config_hash: None, epochs_completed: 0 };
        assert!(check_checkpoint_metric(&info, Metric::Tsp).is_ok());
        assert!(matches!(check_checkpoint_metric(&info, Metric::Stress), Err(VonError::MetricMismatch { .. })));
    }
}
