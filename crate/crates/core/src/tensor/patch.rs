use super::Tensor;
use crate::error::{Error, Result};

/// Marks a patch tap that falls in the zero padding.
const PAD: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Only fully in-bounds windows.
    Valid,
    /// `ceil(extent / stride)` windows per axis, out-of-bounds taps read zero.
    Same,
}

impl Padding {
    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
        }
    }

    pub fn parse(s: &str) -> Option<Padding> {
        match s {
            "valid" => Some(Padding::Valid),
            "same" => Some(Padding::Same),
            _ => None,
        }
    }
}

/// Explicit patch-extraction operator: patch `j` is the row selection `D_j`
/// applied to a flattened `[H, W, C]` image.
///
/// Within a patch, taps are ordered `(dy, dx, c)` row-major, which matches the
/// flattening of a `[kH, kW, C, N]` filter bank into a `p x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPlan {
    input_dims: (usize, usize, usize),
    filter_dims: (usize, usize),
    stride: usize,
    padding: Padding,
    out_dims: (usize, usize),
    indices: Vec<usize>,
}

impl PatchPlan {
    pub fn new(
        input_dims: (usize, usize, usize),
        filter_dims: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (h, w, c) = input_dims;
        let (kh, kw) = filter_dims;
        if h == 0 || w == 0 || c == 0 || kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "patch plan needs positive dims, got input {input_dims:?}, filter {filter_dims:?}, stride {stride}"
            )));
        }
        let (out_h, pad_top) = axis_layout(h, kh, stride, padding).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "filter height {kh} exceeds input height {h} with valid padding"
            ))
        })?;
        let (out_w, pad_left) = axis_layout(w, kw, stride, padding).ok_or_else(|| {
            Error::InvalidArgument(format!("filter width {kw} exceeds input width {w} with valid padding"))
        })?;

        let p = kh * kw * c;
        let mut indices = Vec::with_capacity(out_h * out_w * p);
        for oy in 0..out_h {
            for ox in 0..out_w {
                for dy in 0..kh {
                    let iy = (oy * stride + dy) as isize - pad_top as isize;
                    for dx in 0..kw {
                        let ix = (ox * stride + dx) as isize - pad_left as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                        for ch in 0..c {
                            indices.push(if inside {
                                (iy as usize * w + ix as usize) * c + ch
                            } else {
                                PAD
                            });
                        }
                    }
                }
            }
        }
        Ok(PatchPlan {
            input_dims,
            filter_dims,
            stride,
            padding,
            out_dims: (out_h, out_w),
            indices,
        })
    }

    /// A plan over a length-`d` signal stored as a `[1, d, 1]` image.
    pub fn one_d(d: usize, patch: usize, stride: usize, padding: Padding) -> Result<Self> {
        Self::new((1, d, 1), (1, patch), stride, padding)
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        self.input_dims
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let (h, w, c) = self.input_dims;
        [h, w, c]
    }

    pub fn input_len(&self) -> usize {
        let (h, w, c) = self.input_dims;
        h * w * c
    }

    pub fn filter_dims(&self) -> (usize, usize) {
        self.filter_dims
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    /// Spatial extent of the patch grid.
    pub fn out_dims(&self) -> (usize, usize) {
        self.out_dims
    }

    /// `J`.
    pub fn patch_count(&self) -> usize {
        self.out_dims.0 * self.out_dims.1
    }

    /// `p = kH * kW * C`.
    pub fn patch_len(&self) -> usize {
        self.filter_dims.0 * self.filter_dims.1 * self.input_dims.2
    }

    /// Flat input indices of patch `j`, `None` for padding taps.
    pub fn patch_indices(&self, j: usize) -> impl Iterator<Item = Option<usize>> + '_ {
        let p = self.patch_len();
        self.indices[j * p..(j + 1) * p]
            .iter()
            .map(|&i| (i != PAD).then_some(i))
    }

    /// Number of patches covering each input element.
    pub fn coverage(&self) -> Vec<usize> {
        let mut counts = vec![0; self.input_len()];
        for &i in &self.indices {
            if i != PAD {
                counts[i] += 1;
            }
        }
        counts
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape() {
            return Err(Error::shape("gather_patches", &self.input_shape(), x.shape()));
        }
        Ok(())
    }

    /// Row `j` of the result is `D_j x`.
    pub fn gather(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let out = self.gather_slice(x.data());
        Tensor::new(vec![self.patch_count(), self.patch_len()], out)
    }

    pub(crate) fn gather_slice(&self, x: &[f64]) -> Vec<f64> {
        self.indices
            .iter()
            .map(|&i| if i == PAD { 0.0 } else { x[i] })
            .collect()
    }

    /// `sum_j D_j^T rows_j`.
    pub fn scatter(&self, rows: &Tensor) -> Result<Tensor> {
        let expected = [self.patch_count(), self.patch_len()];
        if rows.shape() != expected {
            return Err(Error::shape("scatter_patches", &expected, rows.shape()));
        }
        let mut out = vec![0.0; self.input_len()];
        self.scatter_into(rows.data(), &mut out);
        Tensor::new(self.input_shape().to_vec(), out)
    }

    pub(crate) fn scatter_into(&self, rows: &[f64], out: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(rows) {
            if i != PAD {
                out[i] += v;
            }
        }
    }
}

fn axis_layout(extent: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => (k <= extent).then(|| ((extent - k) / stride + 1, 0)),
        Padding::Same => {
            let out = extent.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(extent);
            Some((out, total / 2))
        }
    }
}

/// `Y[j, :] = D_j x`.
pub fn gather_patches(x: &Tensor, plan: &PatchPlan) -> Result<Tensor> {
    plan.gather(x)
}

/// `sum_j D_j^T rows[j, :]`.
pub fn scatter_patches(rows: &Tensor, plan: &PatchPlan) -> Result<Tensor> {
    plan.scatter(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn signal(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn non_overlapping_tiling() {
        let plan = PatchPlan::one_d(4, 2, 2, Padding::Valid).unwrap();
        let y = plan.gather(&signal(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(plan.scatter(&y).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn consecutive_pixels_stride_one() {
        let plan = PatchPlan::one_d(4, 3, 1, Padding::Valid).unwrap();
        let y = plan.gather(&signal(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn scatter_accumulates_overlap() {
        let plan = PatchPlan::one_d(4, 3, 1, Padding::Valid).unwrap();
        let y = plan.gather(&signal(&[1.0; 4])).unwrap();
        assert_eq!(plan.scatter(&y).unwrap().data(), &[1.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn zeros_stay_zero() {
        let plan = PatchPlan::new((5, 6, 3), (3, 2), 2, Padding::Same).unwrap();
        let x = Tensor::zeros(vec![5, 6, 3]).unwrap();
        let y = plan.gather(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let back = plan.scatter(&Tensor::zeros(y.shape().to_vec()).unwrap()).unwrap();
        assert!(back.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let plan = PatchPlan::one_d(4, 2, 2, Padding::Valid).unwrap();
        let err = plan.gather(&signal(&[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
        assert!(plan.scatter(&Tensor::zeros(vec![3, 2]).unwrap()).is_err());
    }

    #[test]
    fn valid_rejects_oversized_filter() {
        assert!(PatchPlan::new((3, 3, 1), (4, 1), 1, Padding::Valid).is_err());
        assert!(PatchPlan::new((3, 3, 1), (4, 1), 1, Padding::Same).is_ok());
    }

    #[test]
    fn same_padding_geometry() {
        let plan = PatchPlan::new((5, 5, 1), (3, 3), 1, Padding::Same).unwrap();
        assert_eq!(plan.out_dims(), (5, 5));
        // Top-left patch has its first row and column in the padding.
        let first: Vec<_> = plan.patch_indices(0).collect();
        assert_eq!(first[0], None);
        assert_eq!(first[4], Some(0));
        let plan = PatchPlan::new((64, 64, 3), (7, 7), 2, Padding::Valid).unwrap();
        assert_eq!(plan.out_dims(), (29, 29));
        assert_eq!(plan.patch_len(), 147);
    }

    #[test]
    fn coverage_matches_scatter_of_ones() {
        let plan = PatchPlan::new((6, 7, 2), (3, 3), 2, Padding::Same).unwrap();
        let ones = Tensor::full(vec![plan.patch_count(), plan.patch_len()], 1.0).unwrap();
        let s = plan.scatter(&ones).unwrap();
        let cov: Vec<f64> = plan.coverage().into_iter().map(|c| c as f64).collect();
        assert_eq!(s.data(), cov.as_slice());
    }

    proptest! {
        #[test]
        fn gather_scatter_adjoint(
            h in 1usize..7, w in 1usize..7, c in 1usize..3,
            kh in 1usize..4, kw in 1usize..4, stride in 1usize..3, same in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let padding = if same { Padding::Same } else { Padding::Valid };
            prop_assume!(same || (kh <= h && kw <= w));
            let plan = PatchPlan::new((h, w, c), (kh, kw), stride, padding).unwrap();
            let spec = crate::tensor::RngSpec::gaussian(seed, 0.0, 1.0);
            let mut s = spec.sampler().unwrap();
            let x = s.tensor(vec![h, w, c]).unwrap();
            let r = s.tensor(vec![plan.patch_count(), plan.patch_len()]).unwrap();
            let lhs = plan.gather(&x).unwrap().dot(&r).unwrap();
            let rhs = x.dot(&plan.scatter(&r).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));

            // scatter(gather(x)) == coverage .* x
            let back = plan.scatter(&plan.gather(&x).unwrap()).unwrap();
            for ((b, xv), cov) in back.data().iter().zip(x.data()).zip(plan.coverage()) {
                prop_assert!((b - xv * cov as f64).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
