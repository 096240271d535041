//! The fully connected ReLU network `f(x) = V σ(W_L σ(⋯ σ(W₁ x)⋯))`.
//!
//! Hidden weights are trained; the output matrix `V` is fixed after
//! initialization. The ReLU derivative at zero is taken to be 0.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::numerics::{
    gaussian_matrix, mul_rows_by, mul_rows_by_transpose, spectral_norm_default,
    sum_outer_products, Matrix, Rng,
};
use crate::{Error, Result};

/// Layer sizes: `depth` hidden layers of `width` units, `input_dim → output_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dims {
    pub fn new(depth: usize, width: usize, input_dim: usize, output_dim: usize) -> Self {
        Self {
            depth,
            width,
            input_dim,
            output_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.width < 1 || self.input_dim < 2 || self.output_dim < 1 {
            return Err(Error::Dimension(format!(
                "need L >= 1, m >= 1, d >= 2, k >= 1; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Output-layer initialization variance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputInit {
    /// Entries `N(0, 1/k)`.
    #[default]
    InverseOutputDim,
    /// Entries `N(0, 1/d)`.
    InverseInputDim,
    /// Entries `N(0, variance)`.
    Variance(f64),
}

impl OutputInit {
    fn variance(self, dims: &Dims) -> f64 {
        match self {
            OutputInit::InverseOutputDim => 1.0 / dims.output_dim as f64,
            OutputInit::InverseInputDim => 1.0 / dims.input_dim as f64,
            OutputInit::Variance(v) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    /// `W₁ (m×d), W₂..W_L (m×m)`.
    pub weights: Vec<Matrix>,
    /// `V (k×m)`, frozen.
    pub output: Matrix,
}

impl NetworkParams {
    pub fn new(weights: Vec<Matrix>, output: Matrix) -> Result<Self> {
        let p = Self { weights, output };
        p.check_shapes()?;
        Ok(p)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            depth: self.weights.len(),
            width: self.output.cols(),
            input_dim: self.weights[0].cols(),
            output_dim: self.output.rows(),
        }
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    fn check_shapes(&self) -> Result<()> {
        let Some(first) = self.weights.first() else {
            return Err(Error::Dimension("network needs at least one hidden layer".into()));
        };
        let m = first.rows();
        for (l, w) in self.weights.iter().enumerate().skip(1) {
            if w.shape() != (m, m) {
                return Err(Error::Dimension(format!(
                    "layer {} is {:?}, expected ({m}, {m})",
                    l + 1,
                    w.shape()
                )));
            }
        }
        if self.output.cols() != m {
            return Err(Error::Dimension(format!(
                "output layer has {} columns, expected {m}",
                self.output.cols()
            )));
        }
        if !self.weights.iter().all(Matrix::is_finite) || !self.output.is_finite() {
            return Err(Error::Validation("non-finite parameter".into()));
        }
        Ok(())
    }

    /// `self − other` on the hidden layers.
    pub fn difference(&self, other: &Self) -> GradientBundle {
        GradientBundle {
            layers: self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    /// `self + alpha · direction` on the hidden layers.
    pub fn displaced(&self, alpha: f64, direction: &GradientBundle) -> Self {
        let mut p = self.clone();
        p.step(alpha, direction);
        p
    }

    /// `W_l += alpha · direction_l` for every hidden layer.
    pub fn step(&mut self, alpha: f64, direction: &GradientBundle) {
        for (w, g) in self.weights.iter_mut().zip(&direction.layers) {
            w.axpy(alpha, g);
        }
    }

    /// Per-layer `‖W_l − W_l^ref‖₂`.
    pub fn spectral_distances(&self, reference: &Self) -> Result<Vec<f64>> {
        self.weights
            .iter()
            .zip(&reference.weights)
            .map(|(w, w0)| spectral_norm_default(&w.sub(w0)))
            .collect()
    }
}

/// Hidden layers `W_l ~ N(0, 2/m)` drawn in order `W₁..W_L`, then `V ~ N(0, 1/k)`.
pub fn init_params(dims: Dims, rng: &mut Rng) -> Result<NetworkParams> {
    init_params_with(dims, OutputInit::default(), rng)
}

pub fn init_params_with(dims: Dims, output: OutputInit, rng: &mut Rng) -> Result<NetworkParams> {
    dims.validate()?;
    let std = (2.0 / dims.width as f64).sqrt();
    let mut weights = Vec::with_capacity(dims.depth);
    for l in 0..dims.depth {
        let cols = if l == 0 { dims.input_dim } else { dims.width };
        weights.push(gaussian_matrix(dims.width, cols, std, rng)?);
    }
    let v = gaussian_matrix(
        dims.output_dim,
        dims.width,
        output.variance(&dims).sqrt(),
        rng,
    )?;
    NetworkParams::new(weights, v)
}

/// Forward-pass record for a batch of examples (one row per example).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTrace {
    /// The batch inputs (`x_{0,i}`).
    pub input: Matrix,
    /// Per layer, `n×m` pre-activations.
    pub pre: Vec<Matrix>,
    /// Per layer, `n×m` post-activations `x_{l,i}`.
    pub post: Vec<Matrix>,
    /// `n×k` network outputs.
    pub output: Matrix,
}

impl BatchTrace {
    pub fn len(&self) -> usize {
        self.input.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.input.rows() == 0
    }

    /// Input to hidden layer `l` (0-based), i.e. `x_{l}` in 1-based terms.
    pub fn layer_input(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }

    /// Activation flag `σ'(pre) = 1(pre > 0)` of unit `j` at layer `l` on example `i`.
    pub fn active(&self, l: usize, i: usize, j: usize) -> bool {
        self.pre[l][(i, j)] > 0.0
    }

    /// Number of `(example, unit)` activation flags at layer `l` that differ.
    pub fn sign_flips(&self, other: &Self, l: usize) -> usize {
        self.pre[l]
            .as_slice()
            .iter()
            .zip(other.pre[l].as_slice())
            .filter(|(a, b)| (**a > 0.0) != (**b > 0.0))
            .count()
    }

    /// Trace of a single example.
    pub fn example(&self, i: usize) -> ActivationTrace {
        ActivationTrace {
            pre: self.pre.iter().map(|p| p.row(i).to_vec()).collect(),
            post: self.post.iter().map(|p| p.row(i).to_vec()).collect(),
            output: self.output.row(i).to_vec(),
        }
    }
}

/// Forward-pass record for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl ActivationTrace {
    /// The sign pattern `Σ_l` as booleans.
    pub fn sign_pattern(&self, l: usize) -> Vec<bool> {
        self.pre[l].iter().map(|&z| z > 0.0).collect()
    }
}

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Forward pass over every row of `x`.
pub fn forward_batch(p: &NetworkParams, x: &Matrix) -> Result<BatchTrace> {
    let dims = p.dims();
    if x.cols() != dims.input_dim {
        return Err(Error::Dimension(format!(
            "input has {} features, network expects {}",
            x.cols(),
            dims.input_dim
        )));
    }
    let mut pre = Vec::with_capacity(dims.depth);
    let mut post: Vec<Matrix> = Vec::with_capacity(dims.depth);
    for w in &p.weights {
        let h = post.last().unwrap_or(x);
        let z = mul_rows_by_transpose(h, w);
        let mut a = z.clone();
        a.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
        pre.push(z);
        post.push(a);
    }
    let output = mul_rows_by_transpose(post.last().expect("depth >= 1"), &p.output);
    Ok(BatchTrace {
        input: x.clone(),
        pre,
        post,
        output,
    })
}

/// Forward pass on one input.
pub fn forward(p: &NetworkParams, x: &[f64]) -> Result<(Vec<f64>, ActivationTrace)> {
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let t = forward_batch(p, &xm)?.example(0);
    Ok((t.output.clone(), t))
}

/// `½‖y − ŷ‖²` for each row.
pub fn per_example_losses(output: &Matrix, targets: &Matrix) -> Vec<f64> {
    (0..output.rows())
        .map(|i| {
            let mut s = 0.0;
            for (a, b) in output.row(i).iter().zip(targets.row(i)) {
                s += (b - a) * (b - a);
            }
            0.5 * s
        })
        .collect()
}

/// Mean of per-example losses, summed in index order.
pub fn mean_loss(losses: &[f64]) -> f64 {
    let mut s = 0.0;
    for l in losses {
        s += l;
    }
    s / losses.len() as f64
}

/// Training loss `L(W) = (1/n) Σᵢ ½‖yᵢ − f(xᵢ)‖²`.
pub fn loss(p: &NetworkParams, ds: &Dataset) -> Result<f64> {
    let t = forward_batch(p, &ds.x)?;
    Ok(mean_loss(&per_example_losses(&t.output, &ds.y)))
}

/// Per-layer gradients of a loss with respect to `W₁..W_L`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<Matrix>,
}

impl GradientBundle {
    pub fn zeros_like(p: &NetworkParams) -> Self {
        Self {
            layers: p
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
        }
    }

    /// Collection norm `√(Σ_l ‖G_l‖_F²)`.
    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.layers.iter().map(Matrix::frobenius_norm_sq).sum()
    }

    /// Collection inner product `Σ_l ⟨A_l, B_l⟩`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| a.inner(b))
            .sum()
    }

    /// `max_l ‖G_l‖_{2,∞}`.
    pub fn two_infinity_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(Matrix::two_infinity_norm)
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.as_slice().iter().all(|&v| v == 0.0))
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }
}

/// Norm families of a gradient bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradNorms {
    pub frobenius: f64,
    pub spectral: Vec<f64>,
    pub two_infinity: Vec<f64>,
}

pub fn grad_norms(g: &GradientBundle) -> Result<GradNorms> {
    Ok(GradNorms {
        frobenius: g.frobenius_norm(),
        spectral: g
            .layers
            .iter()
            .map(spectral_norm_default)
            .collect::<Result<_>>()?,
        two_infinity: g.layers.iter().map(Matrix::two_infinity_norm).collect(),
    })
}

/// Loss, gradient and forward trace for one batch.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub per_example_loss: Vec<f64>,
    pub gradient: GradientBundle,
    pub trace: BatchTrace,
}

/// Backpropagation for the mean of per-example losses over the rows of `x`.
///
/// With residuals `rᵢ = ŷᵢ − yᵢ`, the output-side signal is
/// `δ_{L,i} = Σ_{L,i} Vᵀ rᵢ`, then `δ_{l,i} = Σ_{l,i} W_{l+1}ᵀ δ_{l+1,i}`, and
/// `∇_{W_l} = (1/n) Σᵢ δ_{l,i} x_{l−1,i}ᵀ` summed in row order.
pub fn evaluate_batch(p: &NetworkParams, x: &Matrix, y: &Matrix) -> Result<Evaluation> {
    if x.rows() == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }
    if y.rows() != x.rows() || y.cols() != p.output.rows() {
        return Err(Error::Dimension(format!(
            "targets are {:?}, expected ({}, {})",
            y.shape(),
            x.rows(),
            p.output.rows()
        )));
    }
    let trace = forward_batch(p, x)?;
    let per_example_loss = per_example_losses(&trace.output, y);
    let loss = mean_loss(&per_example_loss);
    let residual = trace.output.sub(y);
    let n = x.rows() as f64;

    let depth = p.depth();
    let mut layers = vec![Matrix::zeros(0, 0); depth];
    let mut delta = mul_rows_by(&residual, &p.output);
    for l in (0..depth).rev() {
        mask_inactive(&mut delta, &trace.pre[l]);
        layers[l] = sum_outer_products(&delta, trace.layer_input(l), n);
        if l > 0 {
            delta = mul_rows_by(&delta, &p.weights[l]);
        }
    }
    Ok(Evaluation {
        loss,
        per_example_loss,
        gradient: GradientBundle { layers },
        trace,
    })
}

fn mask_inactive(delta: &mut Matrix, pre: &Matrix) {
    for (d, &z) in delta.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Full-batch loss, gradient and trace.
pub fn evaluate(p: &NetworkParams, ds: &Dataset) -> Result<Evaluation> {
    evaluate_batch(p, &ds.x, &ds.y)
}

/// `∇L(W)` over the whole dataset.
pub fn gradient(p: &NetworkParams, ds: &Dataset) -> Result<GradientBundle> {
    Ok(evaluate(p, ds)?.gradient)
}

/// `(1/B) Σ_{s∈batch} ∇ℓ(f(x_s), y_s)`, accumulated in batch order.
pub fn stochastic_gradient(
    p: &NetworkParams,
    ds: &Dataset,
    batch: &[usize],
) -> Result<GradientBundle> {
    Ok(evaluate_subset(p, ds, batch)?.gradient)
}

pub fn evaluate_subset(p: &NetworkParams, ds: &Dataset, batch: &[usize]) -> Result<Evaluation> {
    if batch.is_empty() {
        return Err(Error::Domain("empty minibatch".into()));
    }
    let (x, y) = ds.subset(batch)?;
    evaluate_batch(p, &x, &y)
}

/// The last-layer gradient evaluated straight from its closed form
/// `(1/n) Σᵢ ((f(xᵢ) − yᵢ)ᵀ V Σ_{L,i})ᵀ x_{L−1,i}ᵀ`, without backpropagation.
pub fn last_layer_gradient_direct(p: &NetworkParams, ds: &Dataset) -> Result<Matrix> {
    let trace = forward_batch(p, &ds.x)?;
    let dims = p.dims();
    let last = dims.depth - 1;
    let (n, m, k) = (ds.n(), dims.width, dims.output_dim);
    let x_prev = trace.layer_input(last);
    let mut grad = Matrix::zeros(m, x_prev.cols());
    for j in 0..m {
        for i in 0..n {
            if !trace.active(last, i, j) {
                continue;
            }
            // (rᵢᵀ V)_j, summed over outputs in order.
            let mut c = 0.0;
            for o in 0..k {
                c += (trace.output[(i, o)] - ds.y[(i, o)]) * p.output[(o, j)];
            }
            if c == 0.0 {
                continue;
            }
            for (g, &xv) in grad.row_mut(j).iter_mut().zip(x_prev.row(i)) {
                *g += c * xv;
            }
        }
        for g in grad.row_mut(j) {
            *g /= n as f64;
        }
    }
    Ok(grad)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"RLABCKP1";

/// Header of a parameter checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    #[serde(rename = "L")]
    pub depth: usize,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub seed: Option<u64>,
    pub step: Option<u64>,
}

/// Writes `magic | u32 header length | JSON header | f64 LE blocks W₁..W_L, V`.
pub fn write_checkpoint(
    p: &NetworkParams,
    seed: Option<u64>,
    step: Option<u64>,
    mut out: impl Write,
) -> Result<()> {
    let dims = p.dims();
    let header = serde_json::to_vec(&CheckpointHeader {
        depth: dims.depth,
        m: dims.width,
        d: dims.input_dim,
        k: dims.output_dim,
        seed,
        step,
    })?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::new();
    for m in p.weights.iter().chain(std::iter::once(&p.output)) {
        buf.clear();
        buf.reserve(m.as_slice().len() * 8);
        for v in m.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint(mut input: impl Read) -> Result<(CheckpointHeader, NetworkParams)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Validation("not a relu-lab checkpoint".into()));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut header)?;
    let header: CheckpointHeader = serde_json::from_slice(&header)?;
    let mut read_block = |rows: usize, cols: usize| -> Result<Matrix> {
        let mut bytes = vec![0u8; rows * cols * 8];
        input.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Matrix::from_vec(rows, cols, data)
    };
    let mut weights = Vec::with_capacity(header.depth);
    for l in 0..header.depth {
        let cols = if l == 0 { header.d } else { header.m };
        weights.push(read_block(header.m, cols)?);
    }
    let output = read_block(header.k, header.m)?;
    Ok((header, NetworkParams::new(weights, output)?))
}

pub fn save_checkpoint(
    p: &NetworkParams,
    seed: Option<u64>,
    step: Option<u64>,
    path: &Path,
) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(p, seed, step, std::io::BufWriter::new(f))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, NetworkParams)> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;

    fn padded_identity(rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    #[test]
    fn init_shapes() {
        let p = init_params(Dims::new(1, 4, 3, 2), &mut Rng::new(1)).unwrap();
        assert_eq!(p.weights[0].shape(), (4, 3));
        assert_eq!(p.output.shape(), (2, 4));
        let p = init_params(Dims::new(3, 5, 3, 2), &mut Rng::new(1)).unwrap();
        assert_eq!(p.weights[2].shape(), (5, 5));
        assert!(init_params(Dims::new(0, 5, 3, 2), &mut Rng::new(1)).is_err());
        assert!(init_params(Dims::new(1, 5, 1, 2), &mut Rng::new(1)).is_err());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let p = init_params(Dims::new(2, 8, 3, 2), &mut Rng::new(2)).unwrap();
        let (y, t) = forward(&p, &[0.0, 0.0, 0.0]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(t.pre.iter().flatten().all(|&v| v == 0.0));
        assert!(t.sign_pattern(0).iter().all(|&s| !s));
    }

    #[test]
    fn identity_network_is_positive_part() {
        let p = NetworkParams::new(vec![padded_identity(4, 3)], padded_identity(3, 4)).unwrap();
        let (y, t) = forward(&p, &[0.5, -2.0, 1.5]).unwrap();
        assert_eq!(y, vec![0.5, 0.0, 1.5]);
        for (post, pre) in t.post[0].iter().zip(&t.pre[0]) {
            assert_eq!(*post, relu(*pre));
        }
    }

    #[test]
    fn loss_examples() {
        let p = NetworkParams::new(vec![padded_identity(2, 2)], padded_identity(2, 2)).unwrap();
        let x = Matrix::from_rows(&[vec![0.6, 0.8]]).unwrap();
        let y = Matrix::from_rows(&[vec![0.6 - 3.0, 0.8 - 4.0]]).unwrap();
        let ds = Dataset::new(x.clone(), y, 0.8).unwrap();
        assert!((loss(&p, &ds).unwrap() - 12.5).abs() < 1e-12);
        let exact = Dataset::new(x.clone(), x, 0.8).unwrap();
        assert_eq!(loss(&p, &exact).unwrap(), 0.0);
    }

    #[test]
    fn positive_homogeneity_single_layer() {
        let mut p = init_params(Dims::new(1, 16, 4, 2), &mut Rng::new(3)).unwrap();
        let x = [0.3, -0.2, 0.1, 0.5];
        let (y1, _) = forward(&p, &x).unwrap();
        p.weights[0].scale_in_place(2.0);
        let (y2, _) = forward(&p, &x).unwrap();
        for (a, b) in y1.iter().zip(&y2) {
            assert!((2.0 * a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let mut ds = generate_dataset(6, 5, 2, 0.5, 0.1, &mut Rng::new(4)).unwrap();
        let p = init_params(Dims::new(2, 12, 5, 2), &mut Rng::new(5)).unwrap();
        ds.y = forward_batch(&p, &ds.x).unwrap().output;
        let g = gradient(&p, &ds).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn full_batch_is_gradient() {
        let ds = generate_dataset(6, 5, 2, 0.5, 0.1, &mut Rng::new(6)).unwrap();
        let p = init_params(Dims::new(3, 10, 5, 2), &mut Rng::new(7)).unwrap();
        let all: Vec<usize> = (0..6).collect();
        assert_eq!(
            stochastic_gradient(&p, &ds, &all).unwrap(),
            gradient(&p, &ds).unwrap()
        );
        assert!(matches!(
            stochastic_gradient(&p, &ds, &[0, 6]),
            Err(Error::IndexOutOfRange { index: 6, len: 6 })
        ));
        assert!(stochastic_gradient(&p, &ds, &[]).is_err());
    }

    #[test]
    fn last_layer_matches_closed_form() {
        let ds = generate_dataset(8, 6, 3, 0.5, 0.1, &mut Rng::new(8)).unwrap();
        for depth in 1..=3 {
            let p = init_params(Dims::new(depth, 20, 6, 3), &mut Rng::new(9)).unwrap();
            let g = gradient(&p, &ds).unwrap();
            assert_eq!(g.layers[depth - 1], last_layer_gradient_direct(&p, &ds).unwrap());
        }
    }

    #[test]
    fn grad_norm_examples() {
        let g = GradientBundle {
            layers: vec![Matrix::from_diag(&[3.0, 1.0])],
        };
        let n = grad_norms(&g).unwrap();
        assert!((n.frobenius - 10f64.sqrt()).abs() < 1e-15);
        assert!((n.spectral[0] - 3.0).abs() < 1e-7);
        assert_eq!(n.two_infinity[0], 3.0);
        let z = GradientBundle {
            layers: vec![Matrix::zeros(3, 3)],
        };
        let n = grad_norms(&z).unwrap();
        assert_eq!((n.frobenius, n.spectral[0], n.two_infinity[0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let p = init_params(Dims::new(2, 7, 4, 3), &mut Rng::new(10)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, Some(10), Some(42), &mut buf).unwrap();
        let (h, q) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(q, p);
        assert_eq!((h.depth, h.m, h.d, h.k, h.seed, h.step), (2, 7, 4, 3, Some(10), Some(42)));
        buf[0] = b'X';
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
