//! Predictors producing the scalar score: linear xᵀθ and feedforward ReLU
//! networks, with hand-derived backprop and parameter-norm diagnostics.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What kind of predictor an experiment fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    Linear,
    /// Hidden+output weight matrix count is `widths.len() - 1`.
    Mlp { widths: Vec<usize> },
}

impl ModelKind {
    /// Parse "linear" or "mlp:<L>". For "mlp:<L>" the widths follow the
    /// simulation schedule (p, ⌈0.6p⌉, ⌈0.4p⌉, …, 1) truncated or extended to
    /// L hidden layers; explicit widths can be set via `Mlp { widths }`.
    pub fn from_name(name: &str, p: usize) -> Result<Self> {
        if name == "linear" {
            return Ok(ModelKind::Linear);
        }
        if let Some(depth) = name.strip_prefix("mlp:") {
            let depth: usize = depth
                .parse()
                .map_err(|_| Error::Config(format!("bad mlp depth: {name}")))?;
            if depth == 0 {
                return Err(Error::Config("mlp depth must be >= 1".into()));
            }
            return Ok(ModelKind::Mlp {
                widths: simulation_widths(p, depth),
            });
        }
        Err(Error::Config(format!("unknown model kind: {name}")))
    }
}

/// The (p, ⌈0.6p⌉, ⌈0.4p⌉, 1) schedule for 2 hidden layers, shrinking
/// geometrically for deeper nets.
pub fn simulation_widths(p: usize, hidden_layers: usize) -> Vec<usize> {
    let mut widths = vec![p];
    for l in 1..=hidden_layers {
        let frac = 0.6 - 0.2 * (l as f64 - 1.0);
        let w = ((p as f64) * frac.max(0.1)).ceil() as usize;
        widths.push(w.max(1));
    }
    widths.push(1);
    widths
}

/// Parameters of a predictor. `Mlp` holds matrices W_0..W_L applied left to
/// right with ReLU between them and identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Linear(Array1<f64>),
    Mlp(Vec<Array2<f64>>),
}

impl Params {
    pub fn zeros_linear(p: usize) -> Self {
        Params::Linear(Array1::zeros(p))
    }

    /// Glorot-style uniform init, seeded by the caller's generator.
    pub fn init_mlp<R: Rng>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Dimension("mlp needs at least input and output widths".into()));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::Dimension("mlp output width must be 1".into()));
        }
        let mut weights = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            let matrix = Array2::from_shape_fn((n_out, n_in), |_| rng.gen_range(-bound..bound));
            weights.push(matrix);
        }
        Ok(Params::Mlp(weights))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Params::Linear(theta) => theta.len(),
            Params::Mlp(ws) => ws[0].ncols(),
        }
    }

    /// ‖θ‖: the ℓ2 norm for linear, the Frobenius norm over all matrices
    /// for the network.
    pub fn norm(&self) -> f64 {
        match self {
            Params::Linear(theta) => theta.dot(theta).sqrt(),
            Params::Mlp(ws) => ws
                .iter()
                .map(|w| w.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Params::Linear(theta) => theta.iter().all(|v| v.is_finite()),
            Params::Mlp(ws) => ws.iter().all(|w| w.iter().all(|v| v.is_finite())),
        }
    }

    /// θ ← θ − step·g.
    pub fn axpy(&mut self, step: f64, g: &Gradient) {
        match (self, g) {
            (Params::Linear(theta), Gradient::Linear(gt)) => {
                theta.scaled_add(-step, gt);
            }
            (Params::Mlp(ws), Gradient::Mlp(gs)) => {
                for (w, g) in ws.iter_mut().zip(gs) {
                    w.scaled_add(-step, g);
                }
            }
            _ => panic!("gradient shape does not match parameters"),
        }
    }

    /// Euclidean projection onto the centered ball of the given radius.
    pub fn project(&mut self, radius: f64) {
        let n = self.norm();
        if n > radius {
            let scale = radius / n;
            match self {
                Params::Linear(theta) => theta.mapv_inplace(|v| v * scale),
                Params::Mlp(ws) => {
                    for w in ws.iter_mut() {
                        w.mapv_inplace(|v| v * scale);
                    }
                }
            }
        }
    }

    pub fn l2_distance(&self, other: &Params) -> f64 {
        match (self, other) {
            (Params::Linear(a), Params::Linear(b)) => {
                (a - b).mapv(|v| v * v).sum().sqrt()
            }
            (Params::Mlp(a), Params::Mlp(b)) => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).mapv(|v| v * v).sum())
                .sum::<f64>()
                .sqrt(),
            _ => f64::NAN,
        }
    }
}

/// Accumulated gradient with the same shapes as the parameters.
#[derive(Debug, Clone)]
pub enum Gradient {
    Linear(Array1<f64>),
    Mlp(Vec<Array2<f64>>),
}

impl Gradient {
    pub fn zeros_like(params: &Params) -> Self {
        match params {
            Params::Linear(theta) => Gradient::Linear(Array1::zeros(theta.len())),
            Params::Mlp(ws) => {
                Gradient::Mlp(ws.iter().map(|w| Array2::zeros(w.dim())).collect())
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        match self {
            Gradient::Linear(g) => g.mapv_inplace(|v| v * c),
            Gradient::Mlp(gs) => {
                for g in gs.iter_mut() {
                    g.mapv_inplace(|v| v * c);
                }
            }
        }
    }

    /// self += c · (∂s/∂θ at x scaled by upstream), plumbing predict's chain.
    pub fn add_assign(&mut self, other: &Gradient, c: f64) {
        match (self, other) {
            (Gradient::Linear(a), Gradient::Linear(b)) => a.scaled_add(c, b),
            (Gradient::Mlp(a), Gradient::Mlp(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    x.scaled_add(c, y);
                }
            }
            _ => panic!("gradient shapes differ"),
        }
    }

    /// self += c·θ, for norm-penalty subgradients.
    pub fn add_params(&mut self, params: &Params, c: f64) {
        match (self, params) {
            (Gradient::Linear(g), Params::Linear(theta)) => g.scaled_add(c, theta),
            (Gradient::Mlp(gs), Params::Mlp(ws)) => {
                for (g, w) in gs.iter_mut().zip(ws) {
                    g.scaled_add(c, w);
                }
            }
            _ => panic!("gradient shapes differ"),
        }
    }
}

/// Score s = f_θ(x).
pub fn predict(params: &Params, x: ArrayView1<f64>) -> Result<f64> {
    if x.len() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "input has dim {}, model expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    Ok(predict_unchecked(params, x))
}

#[inline]
pub fn predict_unchecked(params: &Params, x: ArrayView1<f64>) -> f64 {
    match params {
        Params::Linear(theta) => theta.dot(&x),
        Params::Mlp(ws) => {
            let mut h = x.to_owned();
            for (l, w) in ws.iter().enumerate() {
                let mut z = w.dot(&h);
                if l + 1 < ws.len() {
                    z.mapv_inplace(|v| v.max(0.0)); // ReLU on hidden layers
                }
                h = z;
            }
            h[0]
        }
    }
}

/// ∂s/∂θ scaled by `upstream`. ReLU subgradient at 0 is 0.
pub fn backward(params: &Params, x: ArrayView1<f64>, upstream: f64) -> Result<Gradient> {
    if x.len() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "input has dim {}, model expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    match params {
        Params::Linear(_) => Ok(Gradient::Linear(x.mapv(|v| v * upstream))),
        Params::Mlp(ws) => {
            // forward pass, caching pre-ReLU activations
            let mut acts: Vec<Array1<f64>> = Vec::with_capacity(ws.len() + 1);
            acts.push(x.to_owned());
            for (l, w) in ws.iter().enumerate() {
                let mut z = w.dot(acts.last().unwrap());
                if l + 1 < ws.len() {
                    z.mapv_inplace(|v| v.max(0.0));
                }
                acts.push(z);
            }
            // backward pass
            let mut grads: Vec<Array2<f64>> = ws.iter().map(|w| Array2::zeros(w.dim())).collect();
            let mut delta = Array1::from_elem(1, upstream);
            for l in (0..ws.len()).rev() {
                let input = &acts[l];
                for (r, d) in delta.iter().enumerate() {
                    if *d != 0.0 {
                        for (c, v) in input.iter().enumerate() {
                            grads[l][[r, c]] = d * v;
                        }
                    }
                }
                if l > 0 {
                    let mut back = ws[l].t().dot(&delta);
                    // hidden activation was ReLU: gate by the post-activation
                    for (b, a) in back.iter_mut().zip(acts[l].iter()) {
                        if *a <= 0.0 {
                            *b = 0.0;
                        }
                    }
                    delta = back;
                }
            }
            Ok(Gradient::Mlp(grads))
        }
    }
}

/// Parameter-norm diagnostics for a network.
#[derive(Debug, Clone)]
pub struct MlpDiagnostics {
    pub frobenius: f64,
    pub spectral_per_layer: Vec<f64>,
    pub spectral_max: f64,
}

/// Spectral norm by power iteration (50 steps, tolerance 1e-6).
fn spectral_norm<R: Rng>(w: &Array2<f64>, rng: &mut R) -> f64 {
    let n = w.ncols();
    let mut v = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0f64));
    let mut norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    v.mapv_inplace(|x| x / norm);
    let mut sigma = 0.0;
    for _ in 0..50 {
        let wv = w.dot(&v);
        let mut wtwv = w.t().dot(&wv);
        norm = wtwv.dot(&wtwv).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        wtwv.mapv_inplace(|x| x / norm);
        let new_sigma = w.dot(&wtwv).mapv(|x| x * x).sum().sqrt();
        let done = (new_sigma - sigma).abs() <= 1e-6 * new_sigma.max(1.0);
        sigma = new_sigma;
        v = wtwv;
        if done {
            break;
        }
    }
    sigma
}

pub fn mlp_diagnostics<R: Rng>(params: &Params, rng: &mut R) -> Result<MlpDiagnostics> {
    let Params::Mlp(ws) = params else {
        return Err(Error::Dimension("diagnostics require network parameters".into()));
    };
    let spectral_per_layer: Vec<f64> = ws.iter().map(|w| spectral_norm(w, rng)).collect();
    let spectral_max = spectral_per_layer.iter().cloned().fold(0.0, f64::max);
    Ok(MlpDiagnostics {
        frobenius: params.norm(),
        spectral_per_layer,
        spectral_max,
    })
}

impl MlpDiagnostics {
    /// 2·a^L·√L·‖x‖·max_l Π_{j≠l} σ_max(W_j) with a = 1 for ReLU and L the
    /// number of weight matrices; the empty product (L = 1) is 1.
    pub fn lipschitz_bound(&self, x_norm: f64) -> f64 {
        let l = self.spectral_per_layer.len();
        let mut max_prod: f64 = 0.0;
        for skip in 0..l {
            let prod: f64 = self
                .spectral_per_layer
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != skip)
                .map(|(_, s)| *s)
                .product();
            max_prod = max_prod.max(prod);
        }
        2.0 * (l as f64).sqrt() * x_norm * max_prod
    }
}
