use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::{Graph, Var};
use crate::scalar::{Scalar, PROB_FLOOR};

/// Training objective of the confidence head.
///
/// `Mse` regresses the true class probability; the others use only the
/// success flag of the classifier's prediction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ConfidenceLoss {
    #[default]
    Mse,
    Bce,
    Focal {
        gamma: f64,
    },
    Ranking {
        margin: f64,
    },
}

impl ConfidenceLoss {
    pub const DEFAULT_GAMMA: f64 = 2.0;
    pub const DEFAULT_MARGIN: f64 = 0.5;

    pub fn name(&self) -> &'static str {
        match self {
            ConfidenceLoss::Mse => "mse",
            ConfidenceLoss::Bce => "bce",
            ConfidenceLoss::Focal { .. } => "focal",
            ConfidenceLoss::Ranking { .. } => "ranking",
        }
    }

    /// Parses `mse`, `bce`, `focal` or `ranking` with default parameters.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "mse" => ConfidenceLoss::Mse,
            "bce" => ConfidenceLoss::Bce,
            "focal" => ConfidenceLoss::Focal {
                gamma: Self::DEFAULT_GAMMA,
            },
            "ranking" => ConfidenceLoss::Ranking {
                margin: Self::DEFAULT_MARGIN,
            },
            _ => return None,
        })
    }

    /// Adds the loss of confidences `conf` (a `B × 1` node) to the graph.
    pub fn apply<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        conf: Var,
        tcp: &[T],
        success: &[bool],
    ) -> Result<Var> {
        let b = g.value(conf).nrows();
        if b == 0 {
            return Err(Error::invalid("batch", "confidence loss of an empty batch"));
        }
        if g.value(conf).ncols() != 1 || tcp.len() != b || success.len() != b {
            return Err(Error::shape(
                "confidence loss",
                format!(
                    "confidences {:?} with {} targets and {} flags",
                    g.value(conf).dim(),
                    tcp.len(),
                    success.len()
                ),
            ));
        }
        match *self {
            ConfidenceLoss::Mse => mse(g, conf, tcp),
            ConfidenceLoss::Bce => {
                let pt = true_outcome_prob(g, conf, success)?;
                let logs = g.log_floor(pt, T::lit(PROB_FLOOR));
                let mean = g.mean(logs)?;
                Ok(g.scale(mean, -T::one()))
            }
            ConfidenceLoss::Focal { gamma } => {
                if !(gamma >= 0.0) {
                    return Err(Error::invalid(
                        "gamma",
                        format!("{gamma} must be nonnegative"),
                    ));
                }
                let pt = true_outcome_prob(g, conf, success)?;
                let logs = g.log_floor(pt, T::lit(PROB_FLOOR));
                let miss = g.scale(pt, -T::one());
                let miss = g.shift(miss, T::one());
                let weight = g.powf(miss, T::lit(gamma));
                let weighted = g.mul(weight, logs)?;
                let mean = g.mean(weighted)?;
                Ok(g.scale(mean, -T::one()))
            }
            ConfidenceLoss::Ranking { margin } => {
                let good: Vec<usize> = (0..b).filter(|&i| success[i]).collect();
                let bad: Vec<usize> = (0..b).filter(|&i| !success[i]).collect();
                if good.is_empty() || bad.is_empty() {
                    return Ok(g.constant(Array2::zeros((1, 1))));
                }
                let (mut left, mut right) = (Vec::new(), Vec::new());
                for &i in &good {
                    for &j in &bad {
                        left.push(i);
                        right.push(j);
                    }
                }
                let ci = g.select_rows(conf, &left)?;
                let cj = g.select_rows(conf, &right)?;
                let gap = g.sub(ci, cj)?;
                let slack = g.scale(gap, -T::one());
                let slack = g.shift(slack, T::lit(margin));
                let hinge = g.relu(slack);
                g.mean(hinge)
            }
        }
    }

    /// Loss value for plain confidence vectors.
    pub fn evaluate<T: Scalar>(&self, conf: &[T], tcp: &[T], success: &[bool]) -> Result<T> {
        let mut g = Graph::new();
        let c = g.constant(column(conf));
        let loss = self.apply(&mut g, c, tcp, success)?;
        Ok(g.scalar(loss))
    }
}

/// Mean squared difference between a `B × 1` node and the targets.
pub fn mse<T: Scalar>(g: &mut Graph<T>, conf: Var, targets: &[T]) -> Result<Var> {
    let t = g.constant(column(targets));
    let diff = g.sub(conf, t)?;
    let sq = g.mul(diff, diff)?;
    g.mean(sq)
}

/// `c` where the prediction succeeded, `1 − c` where it failed.
fn true_outcome_prob<T: Scalar>(g: &mut Graph<T>, conf: Var, success: &[bool]) -> Result<Var> {
    let sign: Vec<T> = success
        .iter()
        .map(|&s| if s { T::one() } else { -T::one() })
        .collect();
    let offset: Vec<T> = success
        .iter()
        .map(|&s| if s { T::zero() } else { T::one() })
        .collect();
    let sv = g.constant(column(&sign));
    let ov = g.constant(column(&offset));
    let signed = g.mul(conf, sv)?;
    g.add(signed, ov)
}

pub(crate) fn column<T: Scalar>(v: &[T]) -> Array2<T> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column shape")
}
