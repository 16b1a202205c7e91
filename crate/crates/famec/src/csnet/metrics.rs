//! Reconstruction quality metrics: PSNR and SSIM on unit-range images.

use ndarray::Array2;

use super::CsError;

/// PSNR in dB for images in `[0, 1]`, capped at 100 dB when the MSE drops
/// below 1e-10 so identical images do not report infinity.
pub fn psnr(reference: &Array2<f32>, reconstruction: &Array2<f32>) -> Result<f64, CsError> {
    check_shapes(reference, reconstruction)?;
    let mse: f64 = reference
        .iter()
        .zip(reconstruction.iter())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / reference.len() as f64;
    if mse < 1e-10 {
        return Ok(100.0);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Normalized Gaussian window of the given side and standard deviation.
pub fn gaussian_window(side: usize, sigma: f64) -> Array2<f64> {
    let half = (side as isize - 1) / 2;
    let mut w = Array2::zeros((side, side));
    for i in 0..side {
        for j in 0..side {
            let di = i as isize - half;
            let dj = j as isize - half;
            let r2 = (di * di + dj * dj) as f64;
            w[(i, j)] = (-r2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let sum = w.sum();
    w.mapv(|v| v / sum)
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// stabilizers K1 = 0.01 and K2 = 0.03, and dynamic range 1. Windows are
/// evaluated at fully interior positions; images smaller than the window
/// fall back to a single whole-image window.
pub fn ssim(reference: &Array2<f32>, reconstruction: &Array2<f32>) -> Result<f64, CsError> {
    check_shapes(reference, reconstruction)?;
    const K1: f64 = 0.01;
    const K2: f64 = 0.03;
    let c1 = (K1 * 1.0) * (K1 * 1.0);
    let c2 = (K2 * 1.0) * (K2 * 1.0);

    let (h, w) = reference.dim();
    let side = 11.min(h).min(w);
    let window = if side == 11 {
        gaussian_window(11, 1.5)
    } else {
        // Degenerate fallback for tiny images: uniform weights.
        Array2::from_elem((side, side), 1.0 / (side * side) as f64)
    };

    let mut total = 0.0f64;
    let mut count = 0usize;
    for top in 0..=(h - side) {
        for left in 0..=(w - side) {
            let mut mu_x = 0.0;
            let mut mu_y = 0.0;
            for i in 0..side {
                for j in 0..side {
                    let wv = window[(i, j)];
                    mu_x += wv * reference[(top + i, left + j)] as f64;
                    mu_y += wv * reconstruction[(top + i, left + j)] as f64;
                }
            }
            let mut var_x = 0.0;
            let mut var_y = 0.0;
            let mut cov = 0.0;
            for i in 0..side {
                for j in 0..side {
                    let wv = window[(i, j)];
                    let dx = reference[(top + i, left + j)] as f64 - mu_x;
                    let dy = reconstruction[(top + i, left + j)] as f64 - mu_y;
                    var_x += wv * dx * dx;
                    var_y += wv * dy * dy;
                    cov += wv * dx * dy;
                }
            }
            let value = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
            total += value;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Both metrics together.
pub fn quality_metrics(
    reference: &Array2<f32>,
    reconstruction: &Array2<f32>,
) -> Result<(f64, f64), CsError> {
    Ok((psnr(reference, reconstruction)?, ssim(reference, reconstruction)?))
}

fn check_shapes(a: &Array2<f32>, b: &Array2<f32>) -> Result<(), CsError> {
    if a.dim() != b.dim() {
        return Err(CsError::BlockShape {
            got_h: b.nrows(),
            got_w: b.ncols(),
            block: a.nrows(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_images_hit_the_caps() {
        let img = Array2::from_shape_fn((16, 16), |(i, j)| ((i + j) as f32 * 0.31).sin().abs());
        let (p, s) = quality_metrics(&img, &img).unwrap();
        assert_eq!(p, 100.0);
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn psnr_of_known_mse() {
        let a = Array2::zeros((10, 10));
        let b = Array2::from_elem((10, 10), 0.1f32);
        // MSE = 0.01 -> PSNR = 20 dB.
        assert_relative_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-6);
    }

    /// Hand evaluation of the SSIM formula on two constant images.
    #[test]
    fn ssim_of_constant_images_matches_hand_formula() {
        let a = Array2::from_elem((16, 16), 0.4f32);
        let b = Array2::from_elem((16, 16), 0.6f32);
        let c1 = 0.01f64 * 0.01;
        let c2 = 0.03f64 * 0.03;
        // Variances and covariance vanish.
        let expected = ((2.0 * 0.4 * 0.6 + c1) * c2) / ((0.16 + 0.36 + c1) * c2);
        assert_relative_eq!(ssim(&a, &b).unwrap(), expected, epsilon = 1e-6);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Array2::zeros((8, 8));
        let b = Array2::zeros((8, 9));
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn ssim_penalizes_structure_loss_more_than_psnr_alike_noise() {
        let img = Array2::from_shape_fn((32, 32), |(i, j)| {
            (0.5 + 0.5 * ((i as f32 / 4.0).sin() * (j as f32 / 4.0).cos())) * 0.8
        });
        let blurred = Array2::from_elem((32, 32), img.sum() / 1024.0);
        let s = ssim(&img, &blurred).unwrap();
        assert!(s < 0.5, "structure destroyed, ssim = {s}");
    }
}
