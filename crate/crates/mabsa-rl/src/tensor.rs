//! Dense f64 matrix helpers shared by the agent and trainer: row softmax
//! with its backward pass, adaptive mean pooling along the row axis, weight
//! initialization, and first-order optimizers (SGD / Adam) with global-norm
//! gradient clipping.

use ndarray::{Array1, Array2};
use rand::Rng;

pub type Mat = Array2<f64>;

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Backward pass of row softmax: given `p = softmax_rows(s)` and `dL/dp`,
/// returns `dL/ds` where `ds_ij = p_ij (dp_ij - sum_k dp_ik p_ik)`.
pub fn softmax_rows_grad(p: &Mat, dp: &Mat) -> Mat {
    let mut out = Mat::zeros(p.raw_dim());
    for i in 0..p.nrows() {
        let dot: f64 = p.row(i).iter().zip(dp.row(i).iter()).map(|(a, b)| a * b).sum();
        for j in 0..p.ncols() {
            out[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot);
        }
    }
    out
}

/// Row ranges for adaptive mean pooling from `n_in` rows to `n_out` rows.
/// Group `i` covers `floor(i*n_in/n_out) .. ceil((i+1)*n_in/n_out)`; every
/// group is non-empty for `n_in >= 1`, and rows may be shared when upsampling.
pub fn pool_ranges(n_in: usize, n_out: usize) -> Vec<(usize, usize)> {
    assert!(n_in >= 1 && n_out >= 1);
    (0..n_out)
        .map(|i| {
            let start = i * n_in / n_out;
            let end = ((i + 1) * n_in).div_ceil(n_out);
            (start, end.max(start + 1).min(n_in.max(start + 1)))
        })
        .collect()
}

/// Mean-pool adjacent rows of `x` into exactly `n_out` rows.
pub fn adaptive_mean_pool(x: &Mat, n_out: usize) -> Mat {
    let ranges = pool_ranges(x.nrows(), n_out);
    let mut out = Mat::zeros((n_out, x.ncols()));
    for (i, &(s, e)) in ranges.iter().enumerate() {
        let scale = 1.0 / (e - s) as f64;
        for r in s..e {
            for c in 0..x.ncols() {
                out[[i, c]] += x[[r, c]] * scale;
            }
        }
    }
    out
}

/// Backward pass of [`adaptive_mean_pool`]: scatter `dy` (n_out rows) back
/// onto the `n_in` input rows.
pub fn adaptive_mean_pool_grad(n_in: usize, dy: &Mat) -> Mat {
    let ranges = pool_ranges(n_in, dy.nrows());
    let mut dx = Mat::zeros((n_in, dy.ncols()));
    for (i, &(s, e)) in ranges.iter().enumerate() {
        let scale = 1.0 / (e - s) as f64;
        for r in s..e {
            for c in 0..dy.ncols() {
                dx[[r, c]] += dy[[i, c]] * scale;
            }
        }
    }
    dx
}

/// Column sums as a 1 x k matrix (bias gradients).
pub fn colsum(x: &Mat) -> Mat {
    let s: Array1<f64> = x.sum_axis(ndarray::Axis(0));
    s.insert_axis(ndarray::Axis(0))
}

/// Uniform Xavier/Glorot initialization.
pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Global L2 norm over a set of gradient tensors.
pub fn global_norm(mats: &[&Mat]) -> f64 {
    mats.iter()
        .map(|m| m.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Scale all tensors in place so their global norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(mats: &mut [&mut Mat], max_norm: f64) -> f64 {
    let norm = {
        let views: Vec<&Mat> = mats.iter().map(|m| &**m).collect();
        global_norm(&views)
    };
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for m in mats.iter_mut() {
            m.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

/// First-order optimizer over an ordered list of parameter tensors.
///
/// Parameters are matched to internal state by position, so callers must
/// present tensors in a stable order on every step.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Vec<Mat>,
        v: Vec<Mat>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, new_lr: f64) {
        match self {
            Optimizer::Sgd { lr } => *lr = new_lr,
            Optimizer::Adam { lr, .. } => *lr = new_lr,
        }
    }

    /// Apply one descent step (`param -= update(grad)`), pairing each
    /// parameter with its gradient by position.
    pub fn step(&mut self, mut pairs: Vec<(&mut Mat, &Mat)>) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in pairs.iter_mut() {
                    **p -= &(*g * *lr);
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                if m.is_empty() {
                    for (p, _) in &pairs {
                        m.push(Mat::zeros(p.raw_dim()));
                        v.push(Mat::zeros(p.raw_dim()));
                    }
                }
                assert_eq!(m.len(), pairs.len(), "optimizer state / parameter mismatch");
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for (idx, (p, g)) in pairs.iter_mut().enumerate() {
                    let mi = &mut m[idx];
                    let vi = &mut v[idx];
                    mi.zip_mut_with(g, |mv, gv| *mv = *beta1 * *mv + (1.0 - *beta1) * gv);
                    vi.zip_mut_with(g, |vv, gv| *vv = *beta2 * *vv + (1.0 - *beta2) * gv * gv);
                    for ((pv, mv), vv) in p.iter_mut().zip(mi.iter()).zip(vi.iter()) {
                        let mhat = mv / bc1;
                        let vhat = vv / bc2;
                        *pv -= *lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
            }
        }
    }
}
