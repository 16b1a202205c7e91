//! Alternating training of the estimator.
//!
//! Each batch runs up to two phases. First the importance generator is
//! updated alone: the decoder consumes the noisy blend
//! `Z = kappa .* y + (1 - kappa) .* eps` with `eps ~ N(mu_y, sigma_y^2)`
//! drawn from the batch statistics of the measurements, and the loss is the
//! reconstruction error plus `eta` times a closed-form KL upper bound on the
//! information `Z` keeps about `y`. Then the sensing and decoder parameters
//! are updated with the generator frozen (its gradient still flows through),
//! the decoder consuming the noise-free gated measurements `kappa .* y` and
//! the loss carrying a `gamma * ||1 - kappa||^2` pull that keeps gates open
//! unless the bottleneck pays for closing them.

use ndarray::{Array2, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::EstimatorConfig;
use crate::nn::{standard_normal, Adam};

use super::{ChannelImage, CsError, EstimatorBundle};

/// Variance floor keeping the KL bound finite.
const VAR_FLOOR: f32 = 1e-12;
/// Gates are clamped below one inside the KL so its log term stays finite.
const KAPPA_CEIL: f32 = 1.0 - 1e-6;

/// Linear blend between measurements and noise under the gates.
pub fn bottleneck_interpolate(
    y: &Array2<f32>,
    kappa: &Array2<f32>,
    eps: &Array2<f32>,
) -> Array2<f32> {
    let mut z = Array2::zeros(y.raw_dim());
    ndarray::Zip::from(&mut z)
        .and(y)
        .and(kappa)
        .and(eps)
        .for_each(|z, &y, &k, &e| *z = k * y + (1.0 - k) * e);
    z
}

/// Closed-form KL divergence of `N(k y + (1-k) mu, (1-k)^2 var)` from
/// `N(mu, var)`, averaged over all elements:
///
/// ```text
/// KL_i = ln(1/(1-k_i)) + ((1-k_i)^2 - 1)/2 + k_i^2 (y_i - mu)^2 / (2 var)
/// ```
///
/// Nonnegative, zero exactly when every gate is zero (at floored precision).
pub fn kl_upper_bound(kappa: &Array2<f32>, y: &Array2<f32>, mu: f32, var: f32) -> f32 {
    let var = var.max(VAR_FLOOR);
    let mut total = 0.0f64;
    ndarray::Zip::from(kappa).and(y).for_each(|&k, &yv| {
        let k = k.min(KAPPA_CEIL) as f64;
        let resid = (yv - mu) as f64;
        let one_minus = 1.0 - k;
        total += -one_minus.ln() + (one_minus * one_minus - 1.0) / 2.0
            + k * k * resid * resid / (2.0 * var as f64);
    });
    (total / kappa.len() as f64) as f32
}

/// Gradient of [`kl_upper_bound`] in the gates (mean scaling included).
pub fn kl_upper_bound_gradient(
    kappa: &Array2<f32>,
    y: &Array2<f32>,
    mu: f32,
    var: f32,
) -> Array2<f32> {
    let var = var.max(VAR_FLOOR);
    let scale = 1.0 / kappa.len() as f32;
    let mut grad = Array2::zeros(kappa.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(kappa)
        .and(y)
        .for_each(|g, &k, &yv| {
            let k = k.min(KAPPA_CEIL);
            let resid = yv - mu;
            *g = scale * (1.0 / (1.0 - k) - (1.0 - k) + k * resid * resid / var);
        });
    grad
}

/// Per-step losses: reconstruction, bottleneck penalty, and the two
/// composite objectives.
#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub l_r: f32,
    pub l_i: f32,
    pub l_ig: f32,
    pub l_n: f32,
}

#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub steps: Vec<StepLosses>,
}

impl TrainTrace {
    pub fn first_reconstruction_loss(&self) -> Option<f32> {
        self.steps.first().map(|s| s.l_r)
    }

    pub fn final_reconstruction_loss(&self) -> Option<f32> {
        self.steps.last().map(|s| s.l_r)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Train the importance generator; when false this is the plain-CCS
    /// ablation with the identical remaining architecture.
    pub use_importance: bool,
    pub steps: usize,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(cfg: &EstimatorConfig, use_importance: bool, seed: u64) -> Self {
        Self { use_importance, steps: cfg.train_steps, seed }
    }
}

struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    fn new(len: usize) -> Self {
        Self { order: (0..len).collect(), cursor: len }
    }

    fn next_batch<R: Rng>(&mut self, size: usize, rng: &mut R) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor >= self.order.len() {
                // Fisher-Yates reshuffle per epoch.
                for i in (1..self.order.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    self.order.swap(i, j);
                }
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

fn add_grads(acc: &mut Option<Vec<ArrayD<f32>>>, grads: Vec<ArrayD<f32>>) {
    match acc {
        None => *acc = Some(grads),
        Some(acc) => {
            for (a, g) in acc.iter_mut().zip(grads) {
                *a += &g;
            }
        }
    }
}

/// Train a fresh estimator on the image set. Deterministic for a fixed seed.
pub fn train_estimator(
    dataset: &[ChannelImage],
    cfg: &EstimatorConfig,
    options: &TrainOptions,
) -> Result<(EstimatorBundle, TrainTrace), CsError> {
    if dataset.is_empty() {
        return Err(CsError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut bundle = EstimatorBundle::new(cfg, options.use_importance, &mut rng);
    let mut ig_opt = Adam::new(cfg.learning_rate as f32);
    let mut net_opt = Adam::new(cfg.learning_rate as f32);
    let mut sampler = BatchSampler::new(dataset.len());
    let mut trace = TrainTrace::default();

    let batch_size = cfg.batch_size.min(dataset.len());
    for step in 0..options.steps {
        let batch = sampler.next_batch(batch_size, &mut rng);

        // Sense every image in the batch; measurements as one row-per-block
        // matrix for the generator, per-image matrices for the decoder.
        let mut per_image: Vec<(usize, Array2<f32>, Array2<f32>)> = Vec::with_capacity(batch_size);
        let mut total_blocks = 0;
        for &idx in &batch {
            let img = &dataset[idx];
            let (y, blocks) = bundle.sensing.measure_image(&img.pixels)?;
            total_blocks += y.ncols();
            per_image.push((idx, y, blocks));
        }
        let n_b = bundle.sensing.n_measurements();
        let mut y_rows = Array2::zeros((total_blocks, n_b));
        let mut row = 0;
        for (_, y, _) in &per_image {
            for col in y.columns() {
                for (j, &v) in col.iter().enumerate() {
                    y_rows[(row, j)] = v;
                }
                row += 1;
            }
        }
        let count = y_rows.len() as f32;
        let mu = y_rows.sum() / count;
        let var = y_rows.mapv(|v| (v - mu) * (v - mu)).sum() / count;
        let std = var.max(VAR_FLOOR).sqrt();

        let inv_batch = 1.0 / batch_size as f32;
        let mut losses = StepLosses { l_r: 0.0, l_i: 0.0, l_ig: 0.0, l_n: 0.0 };

        if options.use_importance {
            // ---- Importance-generator step (sensing/decoder frozen).
            let (kappa, ig_trace) = bundle.importance.forward(&y_rows);
            let eps = Array2::from_shape_fn(y_rows.raw_dim(), |_| {
                mu + std * standard_normal(&mut rng)
            });
            let z_rows = bottleneck_interpolate(&y_rows, &kappa, &eps);

            let mut l_r = 0.0f32;
            let mut dz_rows = Array2::zeros(y_rows.raw_dim());
            let mut row0 = 0;
            for (idx, y, _) in &per_image {
                let img = &dataset[*idx];
                let n_blocks = y.ncols();
                let mut z = Array2::zeros((n_b, n_blocks));
                for c in 0..n_blocks {
                    for j in 0..n_b {
                        z[(j, c)] = z_rows[(row0 + c, j)];
                    }
                }
                let dtrace = bundle.decoder.decode(&z, img.height(), img.width())?;
                let diff = &dtrace.output - &img.pixels;
                l_r += diff.mapv(|v| v * v).sum() * inv_batch;
                let dout = diff.mapv(|v| 2.0 * v * inv_batch);
                let (dz, _frozen_decoder_grads) = bundle.decoder.backward(&dtrace, &dout);
                for c in 0..n_blocks {
                    for j in 0..n_b {
                        dz_rows[(row0 + c, j)] = dz[(j, c)];
                    }
                }
                row0 += n_blocks;
            }
            let l_i = kl_upper_bound(&kappa, &y_rows, mu, var);
            let mut dkappa = kl_upper_bound_gradient(&kappa, &y_rows, mu, var);
            dkappa.mapv_inplace(|g| g * cfg.eta as f32);
            ndarray::Zip::from(&mut dkappa)
                .and(&dz_rows)
                .and(&y_rows)
                .and(&eps)
                .for_each(|dk, &dz, &yv, &ev| *dk += dz * (yv - ev));
            let (_dy, ig_grads) = bundle.importance.backward(&ig_trace, &dkappa);
            ig_opt.step(&mut bundle.importance.params_mut(), &ig_grads);

            losses.l_i = l_i;
            losses.l_ig = l_r + cfg.eta as f32 * l_i;
        }

        // ---- Sensing + decoder step (generator frozen, gradient flows
        // through it into the sensing kernels).
        let gate_ctx = options.use_importance.then(|| bundle.importance.forward(&y_rows));
        let gated_rows = match &gate_ctx {
            Some((kappa, _)) => kappa * &y_rows,
            None => y_rows.clone(),
        };

        let mut l_r = 0.0f32;
        let mut dgated_rows = Array2::zeros(y_rows.raw_dim());
        let mut decoder_grads: Option<Vec<ArrayD<f32>>> = None;
        let mut row0 = 0;
        for (idx, y, _) in &per_image {
            let img = &dataset[*idx];
            let n_blocks = y.ncols();
            let mut gated = Array2::zeros((n_b, n_blocks));
            for c in 0..n_blocks {
                for j in 0..n_b {
                    gated[(j, c)] = gated_rows[(row0 + c, j)];
                }
            }
            let dtrace = bundle.decoder.decode(&gated, img.height(), img.width())?;
            let diff = &dtrace.output - &img.pixels;
            l_r += diff.mapv(|v| v * v).sum() * inv_batch;
            let dout = diff.mapv(|v| 2.0 * v * inv_batch);
            let (dgated, dgrads) = bundle.decoder.backward(&dtrace, &dout);
            add_grads(&mut decoder_grads, dgrads);
            for c in 0..n_blocks {
                for j in 0..n_b {
                    dgated_rows[(row0 + c, j)] = dgated[(j, c)];
                }
            }
            row0 += n_blocks;
        }

        let mut gate_penalty = 0.0f32;
        let dy_rows = match &gate_ctx {
            Some((kappa, ig_trace)) => {
                gate_penalty = kappa.mapv(|k| (1.0 - k) * (1.0 - k)).sum() * inv_batch;
                let mut dkappa = &dgated_rows * &y_rows;
                let reg_scale = 2.0 * cfg.gamma as f32 * inv_batch;
                dkappa.zip_mut_with(kappa, |d, &k| *d += reg_scale * (k - 1.0));
                let (dy_ig, _frozen_ig_grads) = bundle.importance.backward(ig_trace, &dkappa);
                let mut dy = &dgated_rows * kappa;
                dy += &dy_ig;
                dy
            }
            None => dgated_rows,
        };

        // Sensing gradient from the per-image block caches.
        let mut sensing_grad: Option<ArrayD<f32>> = None;
        let mut row0 = 0;
        for (_, y, blocks) in &per_image {
            let n_blocks = y.ncols();
            let mut dy = Array2::zeros((n_b, n_blocks));
            for c in 0..n_blocks {
                for j in 0..n_b {
                    dy[(j, c)] = dy_rows[(row0 + c, j)];
                }
            }
            let dk = bundle.sensing.backward(blocks, &dy);
            match &mut sensing_grad {
                None => sensing_grad = Some(dk.into_dyn()),
                Some(acc) => *acc += &dk.into_dyn(),
            }
            row0 += n_blocks;
        }

        let mut net_grads = vec![sensing_grad.expect("non-empty batch")];
        net_grads.extend(decoder_grads.expect("non-empty batch"));
        let mut net_params = bundle.sensing.params_mut();
        // Borrow both sub-modules' parameters in one list: sensing first,
        // decoder after, matching the gradient order above.
        net_params.extend(bundle.decoder.params_mut());
        net_opt.step(&mut net_params, &net_grads);
        drop(net_params);

        losses.l_r = l_r;
        losses.l_n = l_r + cfg.gamma as f32 * gate_penalty;
        if !losses.l_n.is_finite() || !losses.l_ig.is_finite() {
            return Err(CsError::Diverged(format!("non-finite loss at step {step}")));
        }
        trace.steps.push(losses);
        bundle.measurement_stats = (mu, std);
    }

    bundle.trained = true;
    Ok((bundle, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csnet::{normalize, Part};
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn toy_dataset(count: usize, size: usize, seed: u64) -> Vec<ChannelImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                // Smooth low-rank structure plus noise, loosely like the
                // channel images.
                let a: Vec<f32> = (0..size).map(|_| standard_normal(&mut rng)).collect();
                let b: Vec<f32> = (0..size).map(|_| standard_normal(&mut rng)).collect();
                let raw = Array2::from_shape_fn((size, size), |(i, j)| {
                    a[i] * b[j] + 0.1 * standard_normal(&mut rng)
                });
                normalize(&raw, Part::Real)
            })
            .collect()
    }

    fn tiny_cfg() -> EstimatorConfig {
        EstimatorConfig {
            block_size: 8,
            sampling_ratio: 0.25,
            feature_maps: 4,
            res_blocks: 1,
            kernel_size: 3,
            batch_size: 8,
            learning_rate: 1e-3,
            ..EstimatorConfig::default()
        }
    }

    #[test]
    fn interpolation_limits() {
        let y = Array2::from_elem((1, 3), 2.0f32);
        let eps = Array2::zeros((1, 3));
        let ones = Array2::ones((1, 3));
        assert_eq!(bottleneck_interpolate(&y, &ones, &eps), y);
        assert_eq!(bottleneck_interpolate(&y, &Array2::zeros((1, 3)), &eps), eps);
        let half = Array2::from_elem((1, 3), 0.5f32);
        assert_eq!(bottleneck_interpolate(&y, &half, &eps), Array2::from_elem((1, 3), 1.0));
    }

    #[test]
    fn kl_zero_iff_gates_closed() {
        let y = Array2::from_shape_fn((2, 5), |(i, j)| (i + j) as f32 * 0.3);
        let zeros = Array2::zeros((2, 5));
        assert_eq!(kl_upper_bound(&zeros, &y, 0.5, 1.0), 0.0);
        let small = Array2::from_elem((2, 5), 0.2f32);
        assert!(kl_upper_bound(&small, &y, 0.5, 1.0) > 0.0);
    }

    #[test]
    fn kl_increases_with_gates() {
        let y = Array2::from_elem((1, 4), 2.0f32);
        let mut prev = 0.0;
        for k in [0.1f32, 0.3, 0.5, 0.7, 0.9] {
            let kl = kl_upper_bound(&Array2::from_elem((1, 4), k), &y, 0.0, 1.0);
            assert!(kl > prev, "KL must increase with kappa (y != mu)");
            prev = kl;
        }
    }

    #[test]
    fn kl_survives_fully_open_gates() {
        let y = Array2::from_elem((1, 4), 2.0f32);
        let kl = kl_upper_bound(&Array2::ones((1, 4)), &y, 0.0, 1.0);
        assert!(kl.is_finite());
        let g = kl_upper_bound_gradient(&Array2::ones((1, 4)), &y, 0.0, 1.0);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    /// Monte-Carlo oracle: estimate the KL by sampling the gated
    /// distribution and averaging log-density ratios.
    #[test]
    fn kl_closed_form_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n_elems = 64;
        let mu = 0.3f64;
        let var = 0.8f64;
        let y: Vec<f64> = (0..n_elems)
            .map(|_| mu + var.sqrt() * standard_normal(&mut rng) as f64 * 1.5)
            .collect();

        for &k in &[0.1f64, 0.5, 0.9] {
            let kappa = Array2::from_elem((1, n_elems), k as f32);
            let y_arr = Array2::from_shape_fn((1, n_elems), |(_, j)| y[j] as f32);
            let closed = kl_upper_bound(&kappa, &y_arr, mu as f32, var as f32) as f64;

            let samples = 100_000;
            let mut mc = 0.0f64;
            for j in 0..n_elems {
                let m1 = k * y[j] + (1.0 - k) * mu;
                let s1 = (1.0 - k) * var.sqrt();
                let s2 = var.sqrt();
                let mut acc = 0.0f64;
                for _ in 0..samples / n_elems {
                    let z = m1 + s1 * standard_normal(&mut rng) as f64;
                    let log_p1 = -((z - m1) / s1).powi(2) / 2.0 - s1.ln();
                    let log_p2 = -((z - mu) / s2).powi(2) / 2.0 - s2.ln();
                    acc += log_p1 - log_p2;
                }
                mc += acc / (samples / n_elems) as f64;
            }
            mc /= n_elems as f64;
            let rel = (closed - mc).abs() / closed.abs().max(1e-12);
            assert!(
                rel < 0.02,
                "kappa {k}: closed {closed} vs MC {mc} (rel {rel})"
            );
        }
    }

    #[test]
    fn training_reduces_reconstruction_loss() {
        let dataset = toy_dataset(50, 16, 11);
        let cfg = tiny_cfg();
        let options = TrainOptions { use_importance: true, steps: 200, seed: 5 };
        let (bundle, trace) = train_estimator(&dataset, &cfg, &options).unwrap();
        assert!(bundle.trained);
        let first = trace.first_reconstruction_loss().unwrap();
        let last = trace.final_reconstruction_loss().unwrap();
        assert!(
            last < 0.8 * first,
            "200 steps should cut the loss by >= 20%: {first} -> {last}"
        );
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let dataset = toy_dataset(20, 16, 3);
        let cfg = tiny_cfg();
        let options = TrainOptions { use_importance: true, steps: 30, seed: 9 };
        let (_, t1) = train_estimator(&dataset, &cfg, &options).unwrap();
        let (_, t2) = train_estimator(&dataset, &cfg, &options).unwrap();
        for (a, b) in t1.steps.iter().zip(&t2.steps) {
            assert_eq!(a.l_r, b.l_r);
            assert_eq!(a.l_ig, b.l_ig);
            assert_eq!(a.l_n, b.l_n);
        }
    }

    #[test]
    fn stronger_gate_regularizer_opens_gates() {
        let dataset = toy_dataset(30, 16, 21);
        let mut weak = tiny_cfg();
        weak.gamma = 1e-4;
        let mut strong = tiny_cfg();
        strong.gamma = 1e-2;
        let options = TrainOptions { use_importance: true, steps: 150, seed: 13 };

        let mean_kappa = |cfg: &EstimatorConfig| -> f32 {
            let (bundle, _) = train_estimator(&dataset, cfg, &options).unwrap();
            let mut sum = 0.0f32;
            let mut count = 0usize;
            for img in &dataset {
                let (y, _) = bundle.sensing.measure_image(&img.pixels).unwrap();
                let (kappa, _) = bundle.importance.forward(&y.t().to_owned());
                sum += kappa.sum();
                count += kappa.len();
            }
            sum / count as f32
        };

        let kappa_weak = mean_kappa(&weak);
        let kappa_strong = mean_kappa(&strong);
        assert!(
            kappa_strong > kappa_weak,
            "100x gamma should raise mean kappa: {kappa_weak} vs {kappa_strong}"
        );
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let cfg = tiny_cfg();
        let options = TrainOptions { use_importance: true, steps: 1, seed: 0 };
        assert!(matches!(
            train_estimator(&[], &cfg, &options),
            Err(CsError::EmptyDataset)
        ));
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let y = Array2::from_shape_fn((1, 6), |(_, j)| j as f32 * 0.4 - 1.0);
        let kappa = Array2::from_elem((1, 6), 0.4f32);
        let grad = kl_upper_bound_gradient(&kappa, &y, 0.1, 0.7);
        let eps = 1e-3f32;
        for j in 0..6 {
            let mut kp = kappa.clone();
            kp[(0, j)] += eps;
            let mut km = kappa.clone();
            km[(0, j)] -= eps;
            let numeric = (kl_upper_bound(&kp, &y, 0.1, 0.7) - kl_upper_bound(&km, &y, 0.1, 0.7))
                / (2.0 * eps);
            assert_relative_eq!(grad[(0, j)], numeric, max_relative = 1e-2);
        }
    }
}
