use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::EstimatorError;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `in x out`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w: Array2::zeros((d_in, d_out)),
            b: Array1::zeros(d_out),
        }
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Fully connected network with ELU hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Layer inputs and pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        Self {
            dims: dims.to_vec(),
            layers: dims.windows(2).map(|d| Layer::zeros(d[0], d[1])).collect(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(dims);
        for layer in &mut net.layers {
            let (d_in, d_out) = layer.w.dim();
            let limit = (6.0 / (d_in + d_out) as f64).sqrt();
            layer.w.mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum()
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<(), EstimatorError> {
        if x.ncols() != self.input_dim() {
            return Err(EstimatorError::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, EstimatorError> {
        self.check(&x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.w) + &layer.b;
            if i < last {
                h.mapv_inplace(elu);
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache), EstimatorError> {
        self.check(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.w) + &layer.b;
            inputs.push(h);
            h = if i < last { z.mapv(elu) } else { z.clone() };
            pre.push(z);
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>, EstimatorError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// Parameter gradients given `dL/d(output)`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> Vec<Layer> {
        let last = self.layers.len() - 1;
        let mut grads = vec![Layer::zeros(0, 0); self.layers.len()];
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                g.zip_mut_with(&cache.pre[i], |gi, &z| *gi *= elu_grad(z));
            }
            grads[i] = Layer {
                w: cache.inputs[i].t().dot(&g),
                b: g.sum_axis(Axis(0)),
            };
            if i > 0 {
                g = g.dot(&self.layers[i].w.t());
            }
        }
        grads
    }

    /// All parameters in a fixed order: each layer's weights row-major, then its bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), EstimatorError> {
        if flat.len() != self.param_count() {
            return Err(EstimatorError::Dimension {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for w in l.w.iter_mut().chain(l.b.iter_mut()) {
                *w = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.w.len();
            if k < nw {
                return l.w.iter_mut().nth(k).unwrap();
            }
            k -= nw;
            if k < l.b.len() {
                return &mut l.b[k];
            }
            k -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    /// `self <- decay * self + (1 - decay) * other`.
    pub fn ema_from(&mut self, other: &Mlp, decay: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.zip_mut_with(&b.w, |x, &y| *x = decay * *x + (1.0 - decay) * y);
            a.b.zip_mut_with(&b.b, |x, &y| *x = decay * *x + (1.0 - decay) * y);
        }
    }
}

pub fn flatten_grads(grads: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in grads {
        out.extend(l.w.iter());
        out.extend(l.b.iter());
    }
    out
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let zeros: Vec<Layer> = net.dims.windows(2).map(|d| Layer::zeros(d[0], d[1])).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &[Layer]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.lr;
        let eps = self.eps;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut layer.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dims_and_param_count() {
        let net = Mlp::new(&[270, 128, 64, 17], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(net.param_count(), 270 * 128 + 128 + 128 * 64 + 64 + 64 * 17 + 17);
        assert_eq!(net.params().len(), net.param_count());
        let out = net.forward(Array2::zeros((3, 270)).view()).unwrap();
        assert_eq!(out.dim(), (3, 17));
        assert!(matches!(net.forward(Array2::zeros((1, 269)).view()), Err(EstimatorError::Dimension { .. })));
    }

    #[test]
    fn zero_weights_output_the_bias() {
        let mut net = Mlp::zeros(&[4, 3, 2]);
        net.layers[1].b = Array1::from(vec![0.5, -2.0]);
        assert_eq!(net.forward_one(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.5, -2.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[5, 7, 4, 3], &mut rng);
        let x = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        // L = sum(c * out^2) / 2
        let loss = |n: &Mlp| -> f64 {
            let y = n.forward(x.view()).unwrap();
            (&y * &y * &c).sum() / 2.0
        };
        let (y, cache) = net.forward_cached(x.view()).unwrap();
        let g = flatten_grads(&net.backward(&cache, &(&y * &c)));
        for k in 0..net.param_count() {
            let p = *net.param_mut(k);
            *net.param_mut(k) = p + 1e-6;
            let up = loss(&net);
            *net.param_mut(k) = p - 1e-6;
            let down = loss(&net);
            *net.param_mut(k) = p;
            let fd = (up - down) / 2e-6;
            assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1.0), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn params_round_trip() {
        let net = Mlp::new(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(1));
        let mut other = Mlp::zeros(&[3, 4, 2]);
        other.set_params(&net.params()).unwrap();
        assert_eq!(other, net);
    }
}
