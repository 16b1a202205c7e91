//! Channel estimation through the trained compressed-sensing pipeline.

use ndarray::Array2;
use num_complex::Complex64;

use crate::config::{CsiMode, ScenarioConfig};
use crate::sysmodel::ChannelRealization;

use super::{denormalize, normalize, CsError, EstimatorBundle, Part};

/// Per-part reconstruction record, exposed so callers can relate the complex
/// estimation error back to image-domain quality metrics.
#[derive(Debug, Clone)]
pub struct EstimationDetail {
    pub user: usize,
    pub part: Part,
    pub truth_image: Array2<f32>,
    pub reconstructed_image: Array2<f32>,
}

/// Estimate the full small-scale grid of one realization.
///
/// In [`CsiMode::Perfect`] the truth passes through untouched. Otherwise
/// each user's per-part port vector is tiled into block-aligned images,
/// normalized, sensed, decoded through the gated measurements, denormalized,
/// and recombined into an `N x M` complex estimate.
pub fn estimate_channel(
    realization: &ChannelRealization,
    bundle: Option<&EstimatorBundle>,
    _cfg: &ScenarioConfig,
    mode: CsiMode,
) -> Result<(Array2<Complex64>, Vec<EstimationDetail>), CsError> {
    if mode == CsiMode::Perfect {
        return Ok((realization.small_scale_grid.clone(), Vec::new()));
    }
    let bundle = bundle.ok_or(CsError::Untrained)?;
    if !bundle.trained {
        return Err(CsError::Untrained);
    }
    let block = bundle.sensing.block;
    let n = realization.n_users();
    let m = realization.n_ports();
    // Tile the M-port vector cyclically into `tiles` B x B blocks laid out
    // side by side: H = B rows, W = tiles * B columns, row-major fill.
    let tiles = m.div_ceil(block * block);
    let h = block;
    let w = tiles * block;

    let mut estimate = Array2::from_elem((n, m), Complex64::new(0.0, 0.0));
    let mut details = Vec::with_capacity(2 * n);
    for user in 0..n {
        for part in [Part::Real, Part::Imag] {
            let raw = Array2::from_shape_fn((h, w), |(i, j)| {
                let flat = (i * w + j) % m;
                let z = realization.small_scale_grid[(user, flat)];
                match part {
                    Part::Real => z.re as f32,
                    Part::Imag => z.im as f32,
                }
            });
            let image = normalize(&raw, part);
            let (y, _blocks) = bundle.sensing.measure_image(&image.pixels)?;
            let reconstructed = bundle.reconstruct(&y, h, w)?;
            let values = denormalize(&reconstructed, &image.norm);
            for flat in 0..m {
                let v = values[(flat / w, flat % w)] as f64;
                let slot = &mut estimate[(user, flat)];
                match part {
                    Part::Real => slot.re = v,
                    Part::Imag => slot.im = v,
                }
            }
            details.push(EstimationDetail {
                user,
                part,
                truth_image: image.pixels,
                reconstructed_image: reconstructed,
            });
        }
    }
    Ok((estimate, details))
}
