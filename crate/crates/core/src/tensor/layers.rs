use rand::Rng as _;

use super::{ParamId, ParamStore, Result, Tape, Tensor, TensorError, Var};
use crate::rng::Rng;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(TensorError::Validation(format!("NaN logit in {logits:?}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Mean squared error between two equally shaped values.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let n = tape.value(pred).len() as f64;
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / n))
}

/// `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub w: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let w = store.xavier(format!("{name}.w"), &[n_out, n_in], n_in, n_out, rng);
        let b = store.zeros(format!("{name}.b"), &[n_out]);
        Self { name: name.to_string(), w, b, n_in, n_out }
    }

    pub fn param_count(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LinearVars {
        LinearVars { w: tape.param(store, self.w), b: tape.param(store, self.b), name: self.name.clone() }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.bind(tape, store).forward(tape, x)
    }
}

/// A [`Linear`] whose parameters are already recorded on a tape.
#[derive(Debug, Clone)]
pub struct LinearVars {
    w: Var,
    b: Var,
    name: String,
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let wx = tape.matvec(self.w, x).map_err(|e| e.in_layer(&self.name))?;
        tape.add(wx, self.b).map_err(|e| e.in_layer(&self.name))
    }
}

/// Gated recurrent unit with one bias per gate:
///
/// ```text
/// z = sigmoid(Wz x + Uz h + bz)
/// r = sigmoid(Wr x + Ur h + br)
/// c = tanh(Wc x + Uc (r * h) + bc)
/// h' = (1 - z) * h + z * c
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub name: String,
    pub n_in: usize,
    pub n_h: usize,
    /// `[Wz, Uz, bz, Wr, Ur, br, Wc, Uc, bc]`
    ids: [ParamId; 9],
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, n_h: usize, rng: &mut Rng) -> Self {
        let mut ids = Vec::with_capacity(9);
        for gate in ["z", "r", "c"] {
            ids.push(store.xavier(format!("{name}.W{gate}"), &[n_h, n_in], n_in, n_h, rng));
            ids.push(store.orthogonal(format!("{name}.U{gate}"), n_h, rng));
            ids.push(store.zeros(format!("{name}.b{gate}"), &[n_h]));
        }
        Self { name: name.to_string(), n_in, n_h, ids: ids.try_into().expect("nine gate parameters") }
    }

    pub fn param_count(&self) -> usize {
        3 * (self.n_h * self.n_in + self.n_h * self.n_h + self.n_h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.ids.to_vec()
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> GruVars {
        GruVars { v: self.ids.map(|id| tape.param(store, id)), name: self.name.clone() }
    }

    pub fn initial_state(&self, tape: &mut Tape) -> Var {
        tape.input(Tensor::zeros(&[self.n_h]))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        self.bind(tape, store).step(tape, x, h)
    }
}

#[derive(Debug, Clone)]
pub struct GruVars {
    v: [Var; 9],
    name: String,
}

impl GruVars {
    fn gate(&self, tape: &mut Tape, k: usize, x: Var, h: Var) -> Result<Var> {
        let wx = tape.matvec(self.v[3 * k], x)?;
        let uh = tape.matvec(self.v[3 * k + 1], h)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, self.v[3 * k + 2])
    }

    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let inner = |tape: &mut Tape| -> Result<Var> {
            let z_pre = self.gate(tape, 0, x, h)?;
            let z = tape.sigmoid(z_pre);
            let r_pre = self.gate(tape, 1, x, h)?;
            let r = tape.sigmoid(r_pre);
            let rh = tape.mul(r, h)?;
            let c_pre = self.gate(tape, 2, x, rh)?;
            let c = tape.tanh(c_pre);
            let one_minus_z = tape.affine(z, -1.0, 1.0);
            let keep = tape.mul(one_minus_z, h)?;
            let new = tape.mul(z, c)?;
            tape.add(keep, new)
        };
        inner(tape).map_err(|e| e.in_layer(&self.name))
    }
}

/// 2-D convolution over `[c_in, h, w]` inputs.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub kernel: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: (usize, usize),
}

impl Conv2d {
    /// Stride 1 with "same" padding `((kh - 1) / 2, (kw - 1) / 2)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kh: usize, kw: usize, rng: &mut Rng) -> Self {
        Self::with_geometry(store, name, c_in, c_out, (kh, kw), 1, ((kh - 1) / 2, (kw - 1) / 2), rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_geometry(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        (kh, kw): (usize, usize),
        stride: usize,
        pad: (usize, usize),
        rng: &mut Rng,
    ) -> Self {
        let fan_in = c_in * kh * kw;
        let fan_out = c_out * kh * kw;
        let kernel = store.xavier(format!("{name}.k"), &[c_out, c_in, kh, kw], fan_in, fan_out, rng);
        let bias = store.zeros(format!("{name}.b"), &[c_out]);
        Self { name: name.to_string(), kernel, bias, c_in, c_out, kh, kw, stride, pad }
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.kh * self.kw + self.c_out
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.kernel, self.bias]
    }

    pub fn output_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad.0 - self.kh) / self.stride + 1,
            (w + 2 * self.pad.1 - self.kw) / self.stride + 1,
        )
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let k = tape.param(store, self.kernel);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, k, b, self.stride, self.pad).map_err(|e| e.in_layer(&self.name))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaxPool2d {
    pub ph: usize,
    pub pw: usize,
}

impl MaxPool2d {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.max_pool(x, self.ph, self.pw).map_err(|e| e.in_layer("maxpool"))
    }

    pub fn output_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.ph, w / self.pw)
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during
/// training so evaluation needs no rescaling.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    /// Identity when `rng` is `None` (evaluation) or the rate is zero.
    pub fn forward(&self, tape: &mut Tape, x: Var, rng: Option<&mut Rng>) -> Result<Var> {
        let Some(rng) = rng else { return Ok(x) };
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).len();
        let mask = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let m = tape.input(Tensor::new(shape, mask)?);
        tape.mul(x, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[2.0; 4]).unwrap(), vec![0.25; 4]);
        let p = softmax(&[0.0, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let q = softmax(&[1000.0, 1000.0 + 3f64.ln()]).unwrap();
        assert!((p[0] - q[0]).abs() < 1e-12);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn reference_parameter_counts() {
        let mut store = ParamStore::new();
        let mut r = rng::seeded(0);
        let gru = GruCell::new(&mut store, "gru", 4, 3, &mut r);
        let out = Linear::new(&mut store, "out", 3, 4, &mut r);
        assert_eq!(gru.param_count() + out.param_count(), 88);
        assert_eq!(store.scalar_count(), 88);
        assert_eq!(Linear::new(&mut ParamStore::new(), "a", 3, 4, &mut r).param_count(), 16);
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![1.0, -2.0, 0.5]));
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let loss = mse_loss(&mut tape, x, x).unwrap();
        assert_eq!(tape.scalar(loss), 0.0);
        tape.backward(loss, &mut store);
        assert!(store.get(id).grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shape_error_names_layer() {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "head", 3, 2, &mut rng::seeded(1));
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0; 4]));
        let err = lin.forward(&mut tape, &store, x).unwrap_err();
        assert!(err.to_string().contains("head"), "{err}");
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0]));
        let d = Dropout { rate: 0.5 };
        assert_eq!(d.forward(&mut tape, x, None).unwrap(), x);
        let mut r = rng::seeded(3);
        let y = d.forward(&mut tape, x, Some(&mut r)).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0 || v == 4.0));
    }
}
