use relu_lab::data::Dataset;
use relu_lab::network::{GradientBundle, NetworkParams};
use relu_lab::numerics::{Matrix, Rng};

/// One example through the network with nested loops.
///
/// Returns `(output, pre-activations per layer, post-activations per layer)`.
/// Sums run over the input index in increasing order.
pub fn loop_forward(p: &NetworkParams, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut h = x.to_vec();
    let mut pres = Vec::new();
    let mut posts = Vec::new();
    for w in &p.weights {
        let mut pre = vec![0.0; w.rows()];
        for (j, z) in pre.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, hk) in h.iter().enumerate() {
                acc += hk * w[(j, k)];
            }
            *z = acc;
        }
        let post: Vec<f64> = pre.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect();
        pres.push(pre);
        h = post.clone();
        posts.push(post);
    }
    let v = &p.output;
    let mut out = vec![0.0; v.rows()];
    for (c, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, hj) in h.iter().enumerate() {
            acc += hj * v[(c, j)];
        }
        *o = acc;
    }
    (out, pres, posts)
}

/// Loss and gradient of `(1/n) Σ ½‖f(xᵢ) − yᵢ‖²` by per-example loops.
pub fn loop_backward(p: &NetworkParams, ds: &Dataset) -> (f64, GradientBundle) {
    let n = ds.n();
    let depth = p.weights.len();
    let mut sums: Vec<Matrix> = p
        .weights
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        let x = ds.x.row(i);
        let (out, pres, posts) = loop_forward(p, x);
        let r: Vec<f64> = out.iter().zip(ds.y.row(i)).map(|(o, y)| o - y).collect();
        let mut sq = 0.0;
        for (o, y) in out.iter().zip(ds.y.row(i)) {
            sq += (y - o) * (y - o);
        }
        total += 0.5 * sq;

        // Output-side signal, then walk down the layers.
        let m = p.output.cols();
        let mut delta = vec![0.0; m];
        for (j, dj) in delta.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, rc) in r.iter().enumerate() {
                acc += rc * p.output[(c, j)];
            }
            *dj = if pres[depth - 1][j] > 0.0 { acc } else { 0.0 };
        }
        for l in (0..depth).rev() {
            let input: &[f64] = if l == 0 { x } else { &posts[l - 1] };
            for (j, dj) in delta.iter().enumerate() {
                for (k, xk) in input.iter().enumerate() {
                    sums[l][(j, k)] += dj * xk;
                }
            }
            if l > 0 {
                let w = &p.weights[l];
                let mut below = vec![0.0; w.cols()];
                for (k, bk) in below.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, dj) in delta.iter().enumerate() {
                        acc += dj * w[(j, k)];
                    }
                    *bk = if pres[l - 1][k] > 0.0 { acc } else { 0.0 };
                }
                delta = below;
            }
        }
    }
    for s in &mut sums {
        for v in s.as_mut_slice() {
            *v /= n as f64;
        }
    }
    (total / n as f64, GradientBundle { layers: sums })
}

/// Elementwise mean of bundles, summed in slice order.
pub fn average_bundles(bundles: &[GradientBundle]) -> GradientBundle {
    let first = &bundles[0];
    let mut layers: Vec<Matrix> = first
        .layers
        .iter()
        .map(|g| Matrix::zeros(g.rows(), g.cols()))
        .collect();
    for b in bundles {
        for (acc, g) in layers.iter_mut().zip(&b.layers) {
            for (a, v) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += v;
            }
        }
    }
    for acc in &mut layers {
        for a in acc.as_mut_slice() {
            *a /= bundles.len() as f64;
        }
    }
    GradientBundle { layers }
}

/// Monte Carlo estimate of `E_w[xᵢᵀxⱼ 1(wᵀxᵢ > 0) 1(wᵀxⱼ > 0)]`, `w ~ N(0, I)`.
pub fn mc_gram_entry(xi: &[f64], xj: &[f64], samples: usize, rng: &mut Rng) -> f64 {
    let rho: f64 = xi.iter().zip(xj).map(|(a, b)| a * b).sum();
    let mut hits = 0usize;
    let mut w = vec![0.0; xi.len()];
    for _ in 0..samples {
        for v in w.iter_mut() {
            *v = rng.normal();
        }
        let a: f64 = w.iter().zip(xi).map(|(a, b)| a * b).sum();
        let b: f64 = w.iter().zip(xj).map(|(a, b)| a * b).sum();
        if a > 0.0 && b > 0.0 {
            hits += 1;
        }
    }
    rho * hits as f64 / samples as f64
}
