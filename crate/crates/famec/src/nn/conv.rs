//! Same-padding stride-1 2-D convolution via im2col + GEMM.

use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::he_normal;

/// Convolution with square kernels, zero padding of `k/2`, and unit stride,
/// so spatial dimensions are preserved. Weights are stored flattened as
/// `(out_channels, in_channels * k * k)` to make both passes plain GEMMs.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

/// Cached im2col matrix from a forward pass, reused by backward.
#[derive(Debug, Clone)]
pub struct Conv2dTrace {
    pub columns: Array2<f32>,
    pub height: usize,
    pub width: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "same-padding convolution needs an odd kernel");
        let weight = he_normal(out_channels, in_channels * kernel * kernel, rng);
        Self { weight, bias: Array1::zeros(out_channels), in_channels, out_channels, kernel }
    }

    /// `x` is `(in_channels, H, W)`; returns `(out_channels, H, W)` plus the
    /// trace needed for backprop.
    pub fn forward(&self, x: &Array3<f32>) -> (Array3<f32>, Conv2dTrace) {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "channel mismatch");
        let columns = im2col(x, self.kernel);
        let mut y_mat = self.weight.dot(&columns);
        for (mut row, &b) in y_mat.rows_mut().into_iter().zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        let y = y_mat
            .into_shape_with_order((self.out_channels, h, w))
            .expect("shape preserved by construction");
        (y, Conv2dTrace { columns, height: h, width: w })
    }

    /// Backprop: returns the input gradient and accumulates (dW, db).
    pub fn backward(
        &self,
        trace: &Conv2dTrace,
        dy: &Array3<f32>,
    ) -> (Array3<f32>, Array2<f32>, Array1<f32>) {
        let (oc, h, w) = dy.dim();
        assert_eq!(oc, self.out_channels);
        let dy_mat = dy
            .view()
            .into_shape_with_order((oc, h * w))
            .expect("contiguous gradient");
        let dw = dy_mat.dot(&trace.columns.t());
        let db = dy_mat.sum_axis(ndarray::Axis(1));
        let dcols = self.weight.t().dot(&dy_mat);
        let dx = col2im(&dcols, self.in_channels, h, w, self.kernel);
        (dx, dw, db)
    }

    pub fn params(&self) -> Vec<ArrayViewD<'_, f32>> {
        vec![self.weight.view().into_dyn(), self.bias.view().into_dyn()]
    }

    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f32>> {
        vec![self.weight.view_mut().into_dyn(), self.bias.view_mut().into_dyn()]
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, ArrayViewD<'_, f32>)> {
        vec![
            (format!("{prefix}.weight"), self.weight.view().into_dyn()),
            (format!("{prefix}.bias"), self.bias.view().into_dyn()),
        ]
    }
}

/// Unfold `(C, H, W)` into `(C*k*k, H*W)` with zero padding `k/2`.
fn im2col(x: &Array3<f32>, kernel: usize) -> Array2<f32> {
    let (c, h, w) = x.dim();
    let pad = (kernel / 2) as isize;
    let mut cols = Array2::zeros((c * kernel * kernel, h * w));
    for ch in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ch * kernel + ki) * kernel + kj;
                let di = ki as isize - pad;
                let dj = kj as isize - pad;
                for i in 0..h {
                    let si = i as isize + di;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        let sj = j as isize + dj;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        cols[(row, i * w + j)] = x[(ch, si as usize, sj as usize)];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col`: scatter-add column gradients back to image layout.
fn col2im(cols: &Array2<f32>, channels: usize, h: usize, w: usize, kernel: usize) -> Array3<f32> {
    let pad = (kernel / 2) as isize;
    let mut x = Array3::zeros((channels, h, w));
    for ch in 0..channels {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ch * kernel + ki) * kernel + kj;
                let di = ki as isize - pad;
                let dj = kj as isize - pad;
                for i in 0..h {
                    let si = i as isize + di;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        let sj = j as isize + dj;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        x[(ch, si as usize, sj as usize)] += cols[(row, i * w + j)];
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A 1x1 identity kernel passes the input through untouched.
    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new(1, 1, 1, &mut rng);
        conv.weight.fill(1.0);
        conv.bias.fill(0.0);
        let x = Array3::from_shape_fn((1, 4, 5), |(_, i, j)| (i * 5 + j) as f32);
        let (y, _) = conv.forward(&x);
        assert_eq!(y, x);
    }

    /// Hand-checked 3x3 convolution on a tiny image.
    #[test]
    fn three_by_three_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new(1, 1, 3, &mut rng);
        conv.weight.fill(1.0); // box filter
        conv.bias.fill(0.5);
        let x = Array3::from_shape_vec((1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = conv.forward(&x);
        // Zero padding: each output is the sum of in-range neighbors + bias.
        assert_eq!(y[(0, 0, 0)], 1.0 + 2.0 + 3.0 + 4.0 + 0.5);
        assert_eq!(y[(0, 1, 1)], 10.5);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::new(2, 3, 3, &mut rng);
        let x = Array3::from_shape_fn((2, 4, 4), |_| super::super::standard_normal(&mut rng));

        let loss = |conv: &Conv2d, x: &Array3<f32>| -> f32 {
            let (y, _) = conv.forward(x);
            0.5 * y.iter().map(|v| v * v).sum::<f32>()
        };

        let (y, trace) = conv.forward(&x);
        let (dx, dw, db) = conv.backward(&trace, &y);

        let eps = 1e-2f32;
        // Weight probe.
        for &(r, c) in &[(0usize, 0usize), (2, 7), (1, 17)] {
            let orig = conv.weight[[r, c]];
            conv.weight[[r, c]] = orig + eps;
            let plus = loss(&conv, &x);
            conv.weight[[r, c]] = orig - eps;
            let minus = loss(&conv, &x);
            conv.weight[[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            assert!(
                (dw[[r, c]] - numeric).abs() <= 3e-2 * numeric.abs().max(0.5),
                "dW[{r},{c}] analytic {} vs numeric {}",
                dw[[r, c]],
                numeric
            );
        }
        // Bias probe.
        let orig = conv.bias[1];
        conv.bias[1] = orig + eps;
        let plus = loss(&conv, &x);
        conv.bias[1] = orig - eps;
        let minus = loss(&conv, &x);
        conv.bias[1] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        assert!((db[1] - numeric).abs() <= 3e-2 * numeric.abs().max(0.5));
        // Input probe.
        let mut xp = x.clone();
        xp[(1, 2, 2)] += eps;
        let mut xm = x.clone();
        xm[(1, 2, 2)] -= eps;
        let numeric = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps);
        assert!(
            (dx[(1, 2, 2)] - numeric).abs() <= 3e-2 * numeric.abs().max(0.5),
            "dx analytic {} vs numeric {}",
            dx[(1, 2, 2)],
            numeric
        );
    }

    #[test]
    fn output_shape_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let conv = Conv2d::new(4, 8, 3, &mut rng);
        let x = Array3::zeros((4, 16, 24));
        let (y, _) = conv.forward(&x);
        assert_eq!(y.dim(), (8, 16, 24));
    }
}
