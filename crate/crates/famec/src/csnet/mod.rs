//! Compressed-sensing channel estimation with an information-bottleneck
//! importance generator.
//!
//! The pipeline turns complex channel grids into grayscale images, samples
//! each `B_k x B_k` block with a learned linear operator (no bias, no
//! activation), and reconstructs through a two-stage decoder: a per-block
//! linear initial reconstruction followed by a residual convolutional
//! refinement added back through a long skip connection.
//!
//! What distinguishes the estimator from plain block compressed sensing is
//! the importance generator: two fully connected layers, a sigmoid, and a
//! small blur that map each measurement vector `y` to gates `kappa` in
//! `[0, 1]`. During its own training step the gates blend the measurements
//! with noise, `Z = kappa .* y + (1 - kappa) .* eps`, and a closed-form KL
//! bound on the information passed through `Z` regularizes the gates; during
//! the sensing/decoder step (and at inference) the decoder sees the gated
//! measurements `kappa .* y`.

mod estimate;
mod metrics;
mod model;
mod train;

pub use estimate::{estimate_channel, EstimationDetail};
pub use metrics::{gaussian_window, psnr, quality_metrics, ssim};
pub use model::{
    Decoder, DecoderTrace, EstimatorBundle, ImportanceGenerator, SensingNet,
};
pub use train::{
    bottleneck_interpolate, kl_upper_bound, kl_upper_bound_gradient, train_estimator,
    StepLosses, TrainOptions, TrainTrace,
};

use ndarray::Array2;
use thiserror::Error;

use crate::sysmodel::ChannelRealization;

#[derive(Debug, Error)]
pub enum CsError {
    #[error("need at least {need} {what}, got {got}")]
    TooSmall { what: &'static str, need: usize, got: usize },
    #[error("image dimensions {h}x{w} are not multiples of the block size {block}")]
    NotBlockAligned { h: usize, w: usize, block: usize },
    #[error("block shape {got_h}x{got_w} does not match the sensing kernels ({block}x{block})")]
    BlockShape { got_h: usize, got_w: usize, block: usize },
    #[error("measurements cover {got} blocks, image needs {need}")]
    IncompleteCoverage { got: usize, need: usize },
    #[error("estimator bundle is untrained")]
    Untrained,
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("dataset is empty")]
    EmptyDataset,
}

/// Which component of the complex grid an image carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Real,
    Imag,
}

impl std::fmt::Display for Part {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Part::Real => write!(f, "real"),
            Part::Imag => write!(f, "imag"),
        }
    }
}

/// Min-max normalization record; inverted when mapping reconstructions back
/// to channel values. A degenerate (constant) source is stored as an all-0.5
/// image and restored from `min` alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormMeta {
    pub min: f32,
    pub max: f32,
    pub degenerate: bool,
}

/// One grayscale channel image in `[0, 1]` with its normalization record.
#[derive(Debug, Clone)]
pub struct ChannelImage {
    pub pixels: Array2<f32>,
    pub norm: NormMeta,
    pub part: Part,
}

impl ChannelImage {
    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }
}

/// Min-max normalize a raw matrix to `[0, 1]`.
pub fn normalize(raw: &Array2<f32>, part: Part) -> ChannelImage {
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in raw.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    if !(max > min) {
        return ChannelImage {
            pixels: Array2::from_elem(raw.raw_dim(), 0.5),
            norm: NormMeta { min, max, degenerate: true },
            part,
        };
    }
    let range = max - min;
    ChannelImage {
        pixels: raw.mapv(|v| (v - min) / range),
        norm: NormMeta { min, max, degenerate: false },
        part,
    }
}

/// Invert [`normalize`].
pub fn denormalize(image: &Array2<f32>, norm: &NormMeta) -> Array2<f32> {
    if norm.degenerate {
        return Array2::from_elem(image.raw_dim(), norm.min);
    }
    let range = norm.max - norm.min;
    image.mapv(|v| v * range + norm.min)
}

/// Stack a snapshot sequence into per-user, per-part grayscale images.
///
/// Column `t` of user `n`'s matrix is the full candidate-port gain vector of
/// snapshot `t`; real and imaginary parts become separate images. Dimensions
/// are cropped down to multiples of the block size.
pub fn channels_to_images(
    snapshots: &[ChannelRealization],
    block: usize,
) -> Result<Vec<ChannelImage>, CsError> {
    let t = snapshots.len();
    if t < block {
        return Err(CsError::TooSmall { what: "snapshots", need: block, got: t });
    }
    let m = snapshots[0].n_ports();
    if m < block {
        return Err(CsError::TooSmall { what: "candidate ports", need: block, got: m });
    }
    let n_users = snapshots[0].n_users();
    let h = (m / block) * block;
    let w = (t / block) * block;

    let mut images = Vec::with_capacity(2 * n_users);
    for user in 0..n_users {
        let mut real = Array2::zeros((h, w));
        let mut imag = Array2::zeros((h, w));
        for (col, snap) in snapshots.iter().take(w).enumerate() {
            for row in 0..h {
                let z = snap.small_scale_grid[(user, row)];
                real[(row, col)] = z.re as f32;
                imag[(row, col)] = z.im as f32;
            }
        }
        images.push(normalize(&real, Part::Real));
        images.push(normalize(&imag, Part::Imag));
    }
    Ok(images)
}

/// Partition an image into `(block^2, n_blocks)` columns, blocks ordered
/// row-major across the image, pixels row-major within each block.
pub fn image_to_blocks(image: &Array2<f32>, block: usize) -> Result<Array2<f32>, CsError> {
    let (h, w) = image.dim();
    if h % block != 0 || w % block != 0 {
        return Err(CsError::NotBlockAligned { h, w, block });
    }
    let bh = h / block;
    let bw = w / block;
    let mut out = Array2::zeros((block * block, bh * bw));
    for bi in 0..bh {
        for bj in 0..bw {
            let col = bi * bw + bj;
            for i in 0..block {
                for j in 0..block {
                    out[(i * block + j, col)] = image[(bi * block + i, bj * block + j)];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`image_to_blocks`].
pub fn blocks_to_image(
    blocks: &Array2<f32>,
    block: usize,
    h: usize,
    w: usize,
) -> Result<Array2<f32>, CsError> {
    if h % block != 0 || w % block != 0 {
        return Err(CsError::NotBlockAligned { h, w, block });
    }
    let bh = h / block;
    let bw = w / block;
    if blocks.ncols() != bh * bw {
        return Err(CsError::IncompleteCoverage { got: blocks.ncols(), need: bh * bw });
    }
    let mut out = Array2::zeros((h, w));
    for bi in 0..bh {
        for bj in 0..bw {
            let col = bi * bw + bj;
            for i in 0..block {
                for j in 0..block {
                    out[(bi * block + i, bj * block + j)] = blocks[(i * block + j, col)];
                }
            }
        }
    }
    Ok(out)
}
