use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::Tensor;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub requires_grad: bool,
}

/// Owner of every trainable array of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = vec![0.0; value.len()];
        self.params.push(Parameter { name: name.into(), value, grad, requires_grad: true });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    /// Xavier/Glorot uniform with the given fan-in and fan-out.
    pub fn xavier(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    /// Square orthogonal matrix from the QR factor of a Gaussian matrix.
    pub fn orthogonal(&mut self, name: impl Into<String>, n: usize, rng: &mut Rng) -> ParamId {
        let g = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
        let qr = g.qr();
        let (mut q, r) = (qr.q(), qr.r());
        // sign fix makes the distribution uniform over the orthogonal group
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let data = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect();
        self.add(name, Tensor::new(vec![n, n], data).expect("square"))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of scalars over all parameters, frozen or not.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.requires_grad).map(|p| p.value.len()).sum()
    }

    pub fn set_requires_grad(&mut self, ids: &[ParamId], flag: bool) {
        for id in ids {
            self.params[id.0].requires_grad = flag;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `lambda * ||theta||^2` over trainable parameters to the gradients
    /// and returns the penalty.
    pub fn add_l2(&mut self, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        let mut penalty = 0.0;
        for p in self.params.iter_mut().filter(|p| p.requires_grad) {
            for (g, v) in p.grad.iter_mut().zip(p.value.data()) {
                penalty += v * v;
                *g += 2.0 * lambda * v;
            }
        }
        lambda * penalty
    }

    /// Sum of squares of the trainable values.
    pub fn l2_norm_sq(&self) -> f64 {
        self.params.iter().filter(|p| p.requires_grad).flat_map(|p| p.value.data()).map(|v| v * v).sum()
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().flat_map(|p| p.grad.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }

    /// All values concatenated in registration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}
