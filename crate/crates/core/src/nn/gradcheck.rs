//! Finite-difference checks of reverse-mode gradients.
//!
//! Every entry of every leaf is moved by `±h` and the central difference of
//! the rebuilt loss is compared with the gradient from [`Graph::backward`].

use ndarray::Array2;

use super::graph::{Graph, Var};
use super::layers::{Mode, Network};
use crate::seeded_rng;

/// Step and scale floor for a check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub step: f64,
    /// Gradients smaller than this are compared on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-2,
        }
    }
}

impl GradCheck {
    pub fn relative_error(&self, analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor)
    }

    /// Largest relative error over every entry of `leaves` for the scalar `build`.
    pub fn leaves<F>(&self, leaves: &[Array2<f64>], build: F) -> f64
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Var,
    {
        let eval = |values: &[Array2<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = values.iter().map(|v| g.param(v.clone())).collect();
            let loss = build(&mut g, &vars);
            g.scalar(loss)
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves.iter().map(|v| g.param(v.clone())).collect();
        let loss = build(&mut g, &vars);
        let grads = g.backward(loss).expect("scalar loss");
        let mut worst: f64 = 0.0;
        for (i, leaf) in leaves.iter().enumerate() {
            let analytic = grads
                .get(vars[i])
                .cloned()
                .unwrap_or_else(|| Array2::zeros(leaf.dim()));
            for ((r, c), &a) in analytic.indexed_iter() {
                let mut plus = leaves.to_vec();
                plus[i][[r, c]] += self.step;
                let mut minus = leaves.to_vec();
                minus[i][[r, c]] -= self.step;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * self.step);
                worst = worst.max(self.relative_error(a, numeric));
            }
        }
        worst
    }

    /// Same check over the parameters of `net` applied to `x` and fed to `head`.
    /// With `mask_seed` set, dropout runs in training mode and every
    /// evaluation replays the same masks.
    pub fn network<F>(
        &self,
        net: &Network<f64>,
        x: &Array2<f64>,
        mask_seed: Option<u64>,
        head: F,
    ) -> f64
    where
        F: Fn(&mut Graph<f64>, Var) -> Var,
    {
        let run = |net: &Network<f64>, g: &mut Graph<f64>| {
            let bound = net.bind(g);
            let input = g.constant(x.clone());
            let mut rng = seeded_rng(mask_seed.unwrap_or(0));
            let mut mode = match mask_seed {
                Some(_) => Mode::Train(&mut rng),
                None => Mode::Eval,
            };
            let out = net.forward(g, &bound, input, &mut mode).expect("forward");
            (head(g, out), bound)
        };
        let mut probe = net.clone();
        probe.zero_grad();
        let mut g = Graph::new();
        let (loss, bound) = run(&probe, &mut g);
        let mut grads = g.backward(loss).expect("scalar loss");
        probe
            .collect_grads(&mut grads, &bound)
            .expect("matching shapes");
        let analytic: Vec<Array2<f64>> = probe
            .params()
            .iter()
            .map(|p| {
                p.grad()
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(p.shape()))
            })
            .collect();
        let eval = |n: &Network<f64>| {
            let mut g = Graph::new();
            let (loss, _) = run(n, &mut g);
            g.scalar(loss)
        };
        let mut worst: f64 = 0.0;
        for (i, grad) in analytic.iter().enumerate() {
            for ((r, c), &a) in grad.indexed_iter() {
                let mut plus = net.clone();
                plus.params_mut()[i].value_mut()[[r, c]] += self.step;
                let mut minus = net.clone();
                minus.params_mut()[i].value_mut()[[r, c]] -= self.step;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * self.step);
                worst = worst.max(self.relative_error(a, numeric));
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Array2::from_shape_vec((1, 2), vec![0.3, -0.8]).unwrap();
        let check = GradCheck::default();
        let exact = check.leaves(std::slice::from_ref(&x), |g, v| {
            let sq = g.mul(v[0], v[0]).unwrap();
            g.sum(sq)
        });
        assert!(exact < 1e-8);
        // relu at an exact kink: the one-sided slopes disagree with the subgradient
        let kink = Array2::zeros((1, 1));
        let bad = check.leaves(std::slice::from_ref(&kink), |g, v| {
            let r = g.relu(v[0]);
            g.sum(r)
        });
        assert!(bad > 0.1);
    }

    #[test]
    fn network_check_is_small_for_a_smooth_net() {
        let mut rng = seeded_rng(3);
        let net = Network::mlp(
            &[3, 4, 2],
            Activation::Sigmoid,
            Activation::Softmax,
            None,
            &mut rng,
        )
        .unwrap();
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let worst = GradCheck::default().network(&net, &x, None, |g, out| {
            let picked = g.gather_cols(out, &[0, 1, 1, 0, 1]).unwrap();
            g.mean(picked).unwrap()
        });
        assert!(worst < 1e-7, "{worst}");
    }
}
