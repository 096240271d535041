use crate::network::loop_forward;
use relu_lab::data::Dataset;
use relu_lab::network::NetworkParams;

/// Pre-activations closer than this to zero make a coordinate unsafe to difference.
pub const KINK_GUARD: f64 = 1e-3;

/// Entry `(row, col)` of hidden weight matrix `layer` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coord {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdOutcome {
    Value(f64),
    /// The perturbed unit sits within the guard of its kink for some example.
    NearKink,
    /// Some activation anywhere in the network changed sign between `+h` and `−h`.
    PatternChanged,
}

struct Snapshot {
    loss: f64,
    signs: Vec<bool>,
    pres: Vec<Vec<Vec<f64>>>,
    inputs: Vec<Vec<Vec<f64>>>,
}

fn snapshot(p: &NetworkParams, ds: &Dataset) -> Snapshot {
    let mut loss = 0.0;
    let mut signs = Vec::new();
    let mut pres = Vec::new();
    let mut inputs = Vec::new();
    for i in 0..ds.n() {
        let x = ds.x.row(i);
        let (out, pre, post) = loop_forward(p, x);
        let mut sq = 0.0;
        for (o, y) in out.iter().zip(ds.y.row(i)) {
            sq += (y - o) * (y - o);
        }
        loss += 0.5 * sq;
        for layer in &pre {
            signs.extend(layer.iter().map(|&z| z > 0.0));
        }
        let mut ins = vec![x.to_vec()];
        ins.extend(post.iter().take(post.len() - 1).cloned());
        inputs.push(ins);
        pres.push(pre);
    }
    Snapshot {
        loss: loss / ds.n() as f64,
        signs,
        pres,
        inputs,
    }
}

/// Central differences `(L(p + h e) − L(p − h e)) / 2h` at each coordinate.
///
/// The loss is recomputed with [`loop_forward`], never the production path.
pub fn fd_gradient(p: &NetworkParams, ds: &Dataset, coords: &[Coord], h: f64) -> Vec<FdOutcome> {
    assert!(h > 0.0, "step must be positive");
    let base = snapshot(p, ds);
    coords
        .iter()
        .map(|c| {
            let near = (0..ds.n()).any(|i| {
                base.inputs[i][c.layer][c.col] != 0.0
                    && base.pres[i][c.layer][c.row].abs() < KINK_GUARD
            });
            if near {
                return FdOutcome::NearKink;
            }
            let mut plus = p.clone();
            plus.weights[c.layer][(c.row, c.col)] += h;
            let mut minus = p.clone();
            minus.weights[c.layer][(c.row, c.col)] -= h;
            let up = snapshot(&plus, ds);
            let down = snapshot(&minus, ds);
            if up.signs != base.signs || down.signs != base.signs {
                return FdOutcome::PatternChanged;
            }
            FdOutcome::Value((up.loss - down.loss) / (2.0 * h))
        })
        .collect()
}
