use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{self, PatchPlan, Tensor};

/// Largest image the dense `d x d` covariance oracle accepts.
pub const MAX_COVARIANCE_DIM: usize = 2048;

/// Input indices of one patch (`None` for padding) and the values there.
type Patch = (Vec<Option<usize>>, Vec<f64>);

fn patches(x: &Tensor, plan: &PatchPlan) -> Result<Vec<Patch>> {
    if x.shape() != plan.input_shape() {
        return Err(Error::shape("oracle input", &plan.input_shape(), x.shape()));
    }
    Ok((0..plan.patch_count())
        .map(|j| {
            let taps: Vec<Option<usize>> = plan.patch_indices(j).collect();
            let y = taps.iter().map(|t| t.map_or(0.0, |i| x.data()[i])).collect();
            (taps, y)
        })
        .collect())
}

/// Unit vector along `sum_j D_j^T y_j / |y_j|`, the large-N direction of a
/// random three-layer CNN's GBP map. All-zero patches are skipped.
pub fn gbp_theorem1_oracle(x: &Tensor, plan: &PatchPlan) -> Result<Tensor> {
    let mut out = vec![0.0; plan.input_len()];
    let mut used = 0;
    for (taps, y) in patches(x, plan)? {
        let norm = tensor::l2_norm(&y);
        if norm == 0.0 {
            continue;
        }
        used += 1;
        for (t, v) in taps.iter().zip(&y) {
            if let Some(i) = t {
                out[*i] += v / norm;
            }
        }
    }
    if used == 0 {
        return Err(Error::InvalidArgument("every patch of the input is zero".into()));
    }
    let norm = tensor::l2_norm(&out);
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    Tensor::new(plan.input_shape().to_vec(), out)
}

/// `I - Lambda / (2p)` with `Lambda = sum_j D_j^T y_j y_j^T D_j / |y_j|^2`.
#[derive(Debug, Clone)]
pub struct CovarianceOracle {
    /// `[d, d]`.
    pub matrix: Tensor,
    pub trace: f64,
    /// Patches with non-zero norm that entered `Lambda`.
    pub patches_used: usize,
    pub patch_len: usize,
}

impl CovarianceOracle {
    /// `d - J / (2p)` for the patches that were used.
    pub fn expected_trace(&self) -> f64 {
        let d = self.matrix.shape()[0] as f64;
        d - self.patches_used as f64 / (2.0 * self.patch_len as f64)
    }
}

pub fn saliency_covariance_oracle(x: &Tensor, plan: &PatchPlan) -> Result<CovarianceOracle> {
    let d = plan.input_len();
    if d > MAX_COVARIANCE_DIM {
        return Err(Error::InvalidArgument(format!(
            "covariance oracle limited to d <= {MAX_COVARIANCE_DIM}, got {d}"
        )));
    }
    let p = plan.patch_len();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    let mut used = 0;
    for (taps, y) in patches(x, plan)? {
        let sq: f64 = y.iter().map(|v| v * v).sum();
        if sq == 0.0 {
            continue;
        }
        used += 1;
        let scale = 1.0 / (2.0 * p as f64 * sq);
        for (ta, ya) in taps.iter().zip(&y) {
            let Some(a) = ta else { continue };
            for (tb, yb) in taps.iter().zip(&y) {
                let Some(b) = tb else { continue };
                m[a * d + b] -= scale * ya * yb;
            }
        }
    }
    let trace = (0..d).map(|i| m[i * d + i]).sum();
    Ok(CovarianceOracle {
        matrix: Tensor::new(vec![d, d], m)?,
        trace,
        patches_used: used,
        patch_len: p,
    })
}

/// `c^2 sqrt(N p)`: scales a random three-layer CNN's saliency map to unit
/// per-pixel variance.
pub fn saliency_normalizer(c: f64, n: usize, p: usize) -> f64 {
    c * c * ((n * p) as f64).sqrt()
}

/// `2 pi C0 / (c^2 p)`: the analytic GBP normalizer when every patch has
/// norm `C0`.
pub fn gbp_normalizer(c: f64, p: usize, c0: f64) -> f64 {
    2.0 * PI * c0 / (c * c * p as f64)
}
