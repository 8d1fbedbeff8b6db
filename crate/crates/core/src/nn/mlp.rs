use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{orthogonal_init, Matrix, NnError, Tensor};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: &mut [f64]) {
        if self == Activation::Tanh {
            x.iter_mut().for_each(|v| *v = v.tanh());
        }
    }

    /// Turns an upstream gradient into a pre-activation gradient, given the
    /// post-activation values.
    fn backprop(self, grad: &mut [f64], post: &[f64]) {
        if self == Activation::Tanh {
            for (g, y) in grad.iter_mut().zip(post) {
                *g *= 1.0 - y * y;
            }
        }
    }
}

/// Feed-forward network: hidden layers use `activation`, the output layer is
/// linear. Parameters are stored as `[w0, b0, w1, b1, ...]` with each weight
/// shaped `(fan_in, fan_out)` and each bias `(1, fan_out)`.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<Tensor>,
    version: u64,
}

/// Activations saved by [`Mlp::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer; entry 0 is the network input.
    inputs: Vec<Matrix>,
    version: u64,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    /// Aligned with [`Mlp::params`].
    pub params: Vec<Vec<f64>>,
    pub input: Matrix,
}

impl Mlp {
    /// Orthogonally initialized network. Hidden layers use gain `sqrt(2)`,
    /// the output layer uses `output_gain`; biases start at zero.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], output_gain: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        assert!(dims.iter().all(|&d| d > 0), "layer dims must be positive");
        let layers = dims.len() - 1;
        let mut params = Vec::with_capacity(2 * layers);
        for l in 0..layers {
            let gain = if l + 1 == layers { output_gain } else { 2f64.sqrt() };
            let w = orthogonal_init(dims[l], dims[l + 1], gain, rng);
            params.push(Tensor::new(format!("l{l}.weight"), w));
            params.push(Tensor::new(format!("l{l}.bias"), Matrix::zeros(1, dims[l + 1])));
        }
        Self {
            dims: dims.to_vec(),
            activation: Activation::Tanh,
            params,
            version: fresh_version(),
        }
    }

    /// Builds a network from explicit `(weight, bias)` pairs.
    pub fn from_layers(layers: Vec<(Matrix, Vec<f64>)>, activation: Activation) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Shape("no layers".into()));
        }
        let mut dims = vec![layers[0].0.rows()];
        let mut params = Vec::new();
        for (l, (w, b)) in layers.into_iter().enumerate() {
            if w.rows() != *dims.last().unwrap() || b.len() != w.cols() {
                return Err(NnError::Shape(format!(
                    "layer {l}: weight {:?} and bias {} do not chain from width {}",
                    w.shape(),
                    b.len(),
                    dims.last().unwrap()
                )));
            }
            dims.push(w.cols());
            let out = w.cols();
            params.push(Tensor::new(format!("l{l}.weight"), w));
            params.push(Tensor::new(format!("l{l}.bias"), Matrix::from_vec(1, out, b)));
        }
        Ok(Self {
            dims,
            activation,
            params,
            version: fresh_version(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access. Any cache taken before this call is stale.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.version = fresh_version();
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|t| t.data().len()).sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<(), NnError> {
        if x.cols() != self.input_dim() {
            return Err(NnError::Shape(format!(
                "input width {} but network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn layer(&self, l: usize, x: &Matrix) -> Matrix {
        let w = self.params[2 * l].matrix();
        let b = self.params[2 * l + 1].data();
        let mut y = x.matmul(w);
        for r in 0..y.rows() {
            y.row_mut(r).iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
        }
        y
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Inference-only forward pass.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix, NnError> {
        self.check_input(x)?;
        let mut h = self.layer(0, x);
        for l in 1..self.n_layers() {
            self.activation.apply(h.as_mut_slice());
            h = self.layer(l, &h);
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache), NnError> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        inputs.push(x.clone());
        let mut h = self.layer(0, x);
        for l in 1..self.n_layers() {
            self.activation.apply(h.as_mut_slice());
            let next = self.layer(l, &h);
            inputs.push(h);
            h = next;
        }
        Ok((
            h,
            MlpCache {
                inputs,
                version: self.version,
            },
        ))
    }

    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<MlpGrads, NnError> {
        if cache.version != self.version || cache.inputs.len() != self.n_layers() {
            return Err(NnError::StaleCache);
        }
        let batch = cache.inputs[0].rows();
        if grad_out.shape() != (batch, self.output_dim()) {
            return Err(NnError::Shape(format!(
                "output gradient {:?} but forward produced {:?}",
                grad_out.shape(),
                (batch, self.output_dim())
            )));
        }
        let mut params = vec![Vec::new(); self.params.len()];
        let mut delta = grad_out.clone();
        for l in (0..self.n_layers()).rev() {
            let x = &cache.inputs[l];
            params[2 * l] = x.t_matmul(&delta).into_vec();
            let mut db = vec![0.0; delta.cols()];
            for r in 0..delta.rows() {
                db.iter_mut().zip(delta.row(r)).for_each(|(s, v)| *s += v);
            }
            params[2 * l + 1] = db;
            let mut dx = delta.matmul_t(self.params[2 * l].matrix());
            if l > 0 {
                self.activation.backprop(dx.as_mut_slice(), x.as_slice());
            }
            delta = dx;
        }
        Ok(MlpGrads { params, input: delta })
    }
}
