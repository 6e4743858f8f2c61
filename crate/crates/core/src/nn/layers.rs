use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Uniform};

use super::graph::{sigmoid, softmax_rows, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::Rng64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Softmax => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Softmax,
            _ => return None,
        })
    }

    fn apply<T: Scalar>(self, mut x: Array2<T>) -> Array2<T> {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
                x
            }
            Activation::Sigmoid => {
                x.mapv_inplace(sigmoid);
                x
            }
            Activation::Softmax => softmax_rows(&x),
        }
    }

    fn apply_graph<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Softmax => g.softmax_rows(x),
        }
    }
}

/// Fully connected layer `y = act(x · Wᵀ + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    /// Glorot-uniform weights in `±√(6/(in+out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng64) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let weight = Array2::from_shape_fn((outputs, inputs), |_| T::lit(dist.sample(rng)));
        Self {
            weight: Tensor::new(weight, true),
            bias: Tensor::zeros(1, outputs, true),
            activation,
        }
    }

    pub fn from_parts(weight: Array2<T>, bias: Array2<T>, activation: Activation) -> Result<Self> {
        if bias.nrows() != 1 || bias.ncols() != weight.nrows() {
            return Err(Error::shape(
                "dense",
                format!(
                    "bias {:?} inconsistent with weight {:?}",
                    bias.dim(),
                    weight.dim()
                ),
            ));
        }
        Ok(Self {
            weight: Tensor::new(weight, true),
            bias: Tensor::new(bias, true),
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape().1
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape().0
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.inputs() {
            return Err(Error::shape(
                "dense",
                format!(
                    "input width {cols} does not match layer in-width {}",
                    self.inputs()
                ),
            ));
        }
        Ok(())
    }

    pub fn infer(&self, x: &Array2<T>) -> Result<Array2<T>> {
        self.check_input(x.ncols())?;
        let z = x.dot(&self.weight.value().t()) + self.bias.value();
        Ok(self.activation.apply(z))
    }
}

/// Inverted dropout: at train time units are kept with probability `keep`
/// and rescaled by `1/keep`; at eval time the layer is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    keep: f64,
}

impl Dropout {
    pub fn new(keep: f64) -> Result<Self> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::invalid("keep", format!("{keep} not in (0, 1]")));
        }
        Ok(Self { keep })
    }

    pub fn keep(&self) -> f64 {
        self.keep
    }

    fn mask<T: Scalar>(&self, dim: (usize, usize), rng: &mut Rng64) -> Array2<T> {
        let scale = T::lit(1.0 / self.keep);
        let coin = Bernoulli::new(self.keep).expect("keep validated");
        Array2::from_shape_fn(dim, |_| if coin.sample(rng) { scale } else { T::zero() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Dense(DenseLayer<T>),
    Dropout(Dropout),
}

/// Dropout behaviour for one forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng64),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Graph handles for the parameters of a bound network, one pair per dense layer.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<(Var, Var)>,
}

/// A feed-forward stack of dense and dropout layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        let mut width: Option<usize> = None;
        for layer in &layers {
            if let Layer::Dense(d) = layer {
                if let Some(w) = width {
                    if w != d.inputs() {
                        return Err(Error::shape(
                            "network",
                            format!("layer expects {} inputs after width {w}", d.inputs()),
                        ));
                    }
                }
                width = Some(d.outputs());
            }
        }
        Ok(Self { layers })
    }

    /// Dense stack with the given widths; hidden layers use `hidden`, the last uses `last`.
    /// A dropout layer follows every hidden activation when `dropout_keep` is set.
    pub fn mlp(
        widths: &[usize],
        hidden: Activation,
        last: Activation,
        dropout_keep: Option<f64>,
        rng: &mut Rng64,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid(
                "widths",
                "need at least input and output width",
            ));
        }
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let is_last = i + 2 == widths.len();
            let act = if is_last { last } else { hidden };
            layers.push(Layer::Dense(DenseLayer::glorot(pair[0], pair[1], act, rng)));
            if !is_last {
                if let Some(keep) = dropout_keep {
                    layers.push(Layer::Dropout(Dropout::new(keep)?));
                }
            }
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Dropout(_)))
    }

    pub fn input_width(&self) -> Option<usize> {
        self.dense().next().map(DenseLayer::inputs)
    }

    pub fn output_width(&self) -> Option<usize> {
        self.dense().last().map(DenseLayer::outputs)
    }

    pub fn dense(&self) -> impl Iterator<Item = &DenseLayer<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            Layer::Dropout(_) => None,
        })
    }

    pub fn dense_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            Layer::Dropout(_) => None,
        })
    }

    /// Parameter tensors in a fixed order: weight then bias for each dense layer.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.dense_mut()
            .flat_map(|d| [&mut d.weight, &mut d.bias])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.dense().flat_map(|d| [&d.weight, &d.bias]).collect()
    }

    pub fn set_trainable(&mut self, flag: bool) {
        for p in self.params_mut() {
            p.set_requires_grad(flag);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Registers the parameters on `g`; trainable tensors become gradient leaves.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        let vars = self
            .dense()
            .map(|d| {
                let leaf = |g: &mut Graph<T>, t: &Tensor<T>| {
                    if t.requires_grad() {
                        g.param(t.value().clone())
                    } else {
                        g.constant(t.value().clone())
                    }
                };
                (leaf(g, &d.weight), leaf(g, &d.bias))
            })
            .collect();
        Bound { vars }
    }

    /// Registers every parameter as a constant, whatever its trainable flag.
    pub fn bind_constant(&self, g: &mut Graph<T>) -> Bound {
        let vars = self
            .dense()
            .map(|d| {
                (
                    g.constant(d.weight.value().clone()),
                    g.constant(d.bias.value().clone()),
                )
            })
            .collect();
        Bound { vars }
    }

    /// Differentiable forward pass on a graph.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        x: Var,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let mut h = x;
        let mut dense_idx = 0;
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    let (w, b) = bound.vars[dense_idx];
                    dense_idx += 1;
                    let z = g.matmul_t(h, w)?;
                    let z = g.add_row(z, b)?;
                    h = d.activation.apply_graph(g, z);
                }
                Layer::Dropout(dr) => {
                    if let Mode::Train(rng) = mode {
                        let mask = dr.mask(g.value(h).dim(), rng);
                        let m = g.constant(mask);
                        h = g.mul(h, m)?;
                    }
                }
            }
        }
        Ok(h)
    }

    /// Graph-free forward pass.
    pub fn infer(&self, x: &Array2<T>, mode: &mut Mode<'_>) -> Result<Array2<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => h = d.infer(&h)?,
                Layer::Dropout(dr) => {
                    if let Mode::Train(rng) = mode {
                        let mask = dr.mask::<T>(h.dim(), rng);
                        h = h * mask;
                    }
                }
            }
        }
        Ok(h)
    }

    /// Eval-mode forward over `x` in chunks of `chunk` rows.
    pub fn predict(&self, x: &Array2<T>, chunk: usize) -> Result<Array2<T>> {
        let chunk = chunk.max(1);
        let width = self
            .output_width()
            .ok_or_else(|| Error::invalid("network", "no dense layers"))?;
        let mut out = Array2::zeros((x.nrows(), width));
        for (i, block) in x.axis_chunks_iter(Axis(0), chunk).enumerate() {
            let y = self.infer(&block.to_owned(), &mut Mode::Eval)?;
            out.slice_mut(ndarray::s![i * chunk..i * chunk + y.nrows(), ..])
                .assign(&y);
        }
        Ok(out)
    }

    /// Pulls gradients for the bound parameters out of `grads` into the tensors.
    pub fn collect_grads(
        &mut self,
        grads: &mut super::graph::Gradients<T>,
        bound: &Bound,
    ) -> Result<()> {
        for (d, &(w, b)) in self.dense_mut().zip(&bound.vars) {
            if d.weight.requires_grad() {
                if let Some(gw) = grads.take(w) {
                    d.weight.accumulate_grad(&gw)?;
                }
            }
            if d.bias.requires_grad() {
                if let Some(gb) = grads.take(b) {
                    d.bias.accumulate_grad(&gb)?;
                }
            }
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a digest over every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in self.params() {
            for v in p.value() {
                for b in v.to_f64_lossy().to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Row indices `0..n` shuffled in place with `rng`.
pub fn shuffled_indices(n: usize, rng: &mut Rng64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
