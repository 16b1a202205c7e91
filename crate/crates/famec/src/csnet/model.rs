//! Network components of the compressed-sensing estimator.

use ndarray::{Array2, Array3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use crate::config::EstimatorConfig;
use crate::nn::{standard_normal, Activation, Conv2d, Conv2dTrace, Dense};

use super::{blocks_to_image, image_to_blocks, CsError};

/// Learned block-sampling operator: `n_B` kernels of size `B_k x B_k`
/// applied with stride `B_k`, no bias, no activation — i.e. one linear map
/// per block, shared across blocks.
#[derive(Debug, Clone)]
pub struct SensingNet {
    /// `(n_measurements, block^2)` flattened kernels.
    pub kernels: Array2<f32>,
    pub block: usize,
}

impl SensingNet {
    pub fn new<R: Rng>(block: usize, n_measurements: usize, rng: &mut R) -> Self {
        // Gaussian kernels scaled so measurements stay O(1) for unit pixels.
        let scale = 1.0 / block as f32;
        let kernels =
            Array2::from_shape_fn((n_measurements, block * block), |_| standard_normal(rng) * scale);
        Self { kernels, block }
    }

    pub fn n_measurements(&self) -> usize {
        self.kernels.nrows()
    }

    /// Measure one block; exactly linear, zero bias.
    pub fn sense_block(&self, block: &Array2<f32>) -> Result<Vec<f32>, CsError> {
        let (h, w) = block.dim();
        if h != self.block || w != self.block {
            return Err(CsError::BlockShape { got_h: h, got_w: w, block: self.block });
        }
        let flat: Vec<f32> = block.iter().cloned().collect();
        Ok(self
            .kernels
            .rows()
            .into_iter()
            .map(|k| k.iter().zip(&flat).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Measure every block of an image: returns `(n_B, n_blocks)` and the
    /// vectorized blocks for backprop.
    pub fn measure_image(
        &self,
        image: &Array2<f32>,
    ) -> Result<(Array2<f32>, Array2<f32>), CsError> {
        let blocks = image_to_blocks(image, self.block)?;
        let y = self.kernels.dot(&blocks);
        Ok((y, blocks))
    }

    /// Gradient of the kernels given measurement gradients and the cached
    /// blocks from `measure_image`.
    pub fn backward(&self, blocks: &Array2<f32>, dy: &Array2<f32>) -> Array2<f32> {
        dy.dot(&blocks.t())
    }

    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f32>> {
        vec![self.kernels.view_mut().into_dyn()]
    }

    pub fn named_params(&self) -> Vec<(String, ArrayViewD<'_, f32>)> {
        vec![("sensing.kernels".to_string(), self.kernels.view().into_dyn())]
    }
}

/// Importance generator: two fully connected layers, a sigmoid, and a
/// length-3 blur with edge replication. Input and output live per
/// measurement vector; gates are in `(0, 1)` by construction.
#[derive(Debug, Clone)]
pub struct ImportanceGenerator {
    pub fc1: Dense,
    pub fc2: Dense,
}

/// Cached forward pass of the importance generator.
#[derive(Debug, Clone)]
pub struct IgTrace {
    input: Array2<f32>,
    hidden: Array2<f32>,
    sigmoid_out: Array2<f32>,
}

impl ImportanceGenerator {
    pub fn new<R: Rng>(n_measurements: usize, rng: &mut R) -> Self {
        let fc1 = Dense::new(n_measurements, n_measurements, Activation::Sigmoid, rng);
        let mut fc2 = Dense::new(n_measurements, n_measurements, Activation::Sigmoid, rng);
        // Open the gates at initialization: sigmoid(2) ~ 0.88, so early
        // training resembles plain compressed sensing and the bottleneck
        // prunes from there.
        fc2.bias.fill(2.0);
        Self { fc1, fc2 }
    }

    /// `y` is `(rows, n_B)`, one measurement vector per row; returns gates of
    /// the same shape plus the trace for backprop.
    pub fn forward(&self, y: &Array2<f32>) -> (Array2<f32>, IgTrace) {
        let hidden = self.fc1.forward(y);
        let mut sig = self.fc2.forward(&hidden);
        sig.mapv_inplace(crate::nn::sigmoid);
        let kappa = blur3(&sig);
        (kappa, IgTrace { input: y.clone(), hidden, sigmoid_out: sig })
    }

    /// Backprop gate gradients to the input; parameter gradients come back
    /// in `params_mut` order (fc1.weight, fc1.bias, fc2.weight, fc2.bias).
    pub fn backward(
        &self,
        trace: &IgTrace,
        dkappa: &Array2<f32>,
    ) -> (Array2<f32>, Vec<ndarray::ArrayD<f32>>) {
        // The edge-replicated moving average is symmetric, so the adjoint is
        // the same operator.
        let mut dsig = blur3(dkappa);
        dsig.zip_mut_with(&trace.sigmoid_out, |d, &s| *d *= s * (1.0 - s));
        let (dhidden, g2) = self.fc2.backward(&trace.hidden, &dsig);
        let (dinput, g1) = self.fc1.backward(&trace.input, &dhidden);
        (
            dinput,
            vec![
                g1.weight.into_dyn(),
                g1.bias.into_dyn(),
                g2.weight.into_dyn(),
                g2.bias.into_dyn(),
            ],
        )
    }

    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f32>> {
        vec![
            self.fc1.weight.view_mut().into_dyn(),
            self.fc1.bias.view_mut().into_dyn(),
            self.fc2.weight.view_mut().into_dyn(),
            self.fc2.bias.view_mut().into_dyn(),
        ]
    }

    pub fn named_params(&self) -> Vec<(String, ArrayViewD<'_, f32>)> {
        vec![
            ("ig.fc1.weight".to_string(), self.fc1.weight.view().into_dyn()),
            ("ig.fc1.bias".to_string(), self.fc1.bias.view().into_dyn()),
            ("ig.fc2.weight".to_string(), self.fc2.weight.view().into_dyn()),
            ("ig.fc2.bias".to_string(), self.fc2.bias.view().into_dyn()),
        ]
    }
}

/// Length-3 moving average along each row with edge replication. Constant
/// rows are fixed points; the operator is symmetric.
pub fn blur3(x: &Array2<f32>) -> Array2<f32> {
    let (rows, n) = x.dim();
    if n == 1 {
        return x.clone();
    }
    let mut out = Array2::zeros((rows, n));
    for r in 0..rows {
        for j in 0..n {
            let left = if j == 0 { x[(r, 0)] } else { x[(r, j - 1)] };
            let right = if j + 1 == n { x[(r, n - 1)] } else { x[(r, j + 1)] };
            out[(r, j)] = (left + x[(r, j)] + right) / 3.0;
        }
    }
    out
}

/// One residual unit of the deep reconstruction path. The first convolution
/// carries a short skip inside its activation:
/// `t = ReLU(m + conv1(m))`, `out = ReLU(conv2(t))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

#[derive(Debug, Clone)]
struct ResidualTrace {
    conv1_trace: Conv2dTrace,
    t: Array3<f32>,
    conv2_trace: Conv2dTrace,
    output: Array3<f32>,
}

impl ResidualBlock {
    fn forward(&self, m: &Array3<f32>) -> (Array3<f32>, ResidualTrace) {
        let (c1, conv1_trace) = self.conv1.forward(m);
        let mut t = c1 + m;
        t.mapv_inplace(|v| v.max(0.0));
        let (c2, conv2_trace) = self.conv2.forward(&t);
        let mut out = c2;
        out.mapv_inplace(|v| v.max(0.0));
        (out.clone(), ResidualTrace { conv1_trace, t, conv2_trace, output: out })
    }

    /// Returns (d_input, [dw1, db1, dw2, db2]).
    fn backward(
        &self,
        trace: &ResidualTrace,
        dout: &Array3<f32>,
    ) -> (Array3<f32>, Vec<ndarray::ArrayD<f32>>) {
        let mut dc2 = dout.clone();
        dc2.zip_mut_with(&trace.output, |d, &y| {
            if y <= 0.0 {
                *d = 0.0
            }
        });
        let (dt_conv, dw2, db2) = self.conv2.backward(&trace.conv2_trace, &dc2);
        let mut du = dt_conv;
        du.zip_mut_with(&trace.t, |d, &y| {
            if y <= 0.0 {
                *d = 0.0
            }
        });
        let (dm_conv, dw1, db1) = self.conv1.backward(&trace.conv1_trace, &du);
        let dinput = dm_conv + &du; // short skip
        (
            dinput,
            vec![dw1.into_dyn(), db1.into_dyn(), dw2.into_dyn(), db2.into_dyn()],
        )
    }
}

/// Two-stage decoder: per-block linear initial reconstruction, then a deep
/// residual path added back through a long skip connection.
#[derive(Debug, Clone)]
pub struct Decoder {
    /// `(block^2, n_B)` initial reconstruction kernels, no bias.
    pub init_kernels: Array2<f32>,
    pub extract: Conv2d,
    pub blocks: Vec<ResidualBlock>,
    pub aggregate: Conv2d,
    pub block: usize,
}

/// Everything needed to backpropagate through one decoded image.
pub struct DecoderTrace {
    measurements: Array2<f32>,
    extract_trace: Conv2dTrace,
    extract_out: Array3<f32>,
    residual_traces: Vec<ResidualTrace>,
    aggregate_trace: Conv2dTrace,
    pub output: Array2<f32>,
}

impl Decoder {
    pub fn new<R: Rng>(cfg: &EstimatorConfig, rng: &mut R) -> Self {
        let n_b = cfg.n_measurements();
        let block = cfg.block_size;
        let init_scale = 1.0 / (n_b as f32).sqrt();
        let init_kernels = Array2::from_shape_fn((block * block, n_b), |_| {
            standard_normal(rng) * init_scale
        });
        let extract = Conv2d::new(1, cfg.feature_maps, cfg.kernel_size, rng);
        let blocks = (0..cfg.res_blocks)
            .map(|_| ResidualBlock {
                conv1: Conv2d::new(cfg.feature_maps, cfg.feature_maps, cfg.kernel_size, rng),
                conv2: Conv2d::new(cfg.feature_maps, cfg.feature_maps, cfg.kernel_size, rng),
            })
            .collect();
        let mut aggregate = Conv2d::new(cfg.feature_maps, 1, cfg.kernel_size, rng);
        // Zero-initialized aggregation makes the decoder start as the pure
        // initial reconstruction (the long skip is exact then).
        aggregate.weight.fill(0.0);
        Self { init_kernels, extract, blocks, aggregate, block }
    }

    /// Initial reconstruction only: assemble per-block linear estimates.
    pub fn initial_reconstruction(
        &self,
        measurements: &Array2<f32>,
        h: usize,
        w: usize,
    ) -> Result<Array2<f32>, CsError> {
        let block_pixels = self.init_kernels.dot(measurements);
        blocks_to_image(&block_pixels, self.block, h, w)
    }

    /// Full decode of one image's measurements `(n_B, n_blocks)`.
    pub fn decode(
        &self,
        measurements: &Array2<f32>,
        h: usize,
        w: usize,
    ) -> Result<DecoderTrace, CsError> {
        let initial_image = self.initial_reconstruction(measurements, h, w)?;
        let x0 = initial_image
            .clone()
            .into_shape_with_order((1, h, w))
            .expect("image is contiguous");
        let (mut e, extract_trace) = self.extract.forward(&x0);
        e.mapv_inplace(|v| v.max(0.0));
        let extract_out = e.clone();
        let mut m = e;
        let mut residual_traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, trace) = block.forward(&m);
            residual_traces.push(trace);
            m = next;
        }
        let (agg, aggregate_trace) = self.aggregate.forward(&m);
        let deep = agg.index_axis(Axis(0), 0).to_owned();
        let output = &initial_image + &deep;
        Ok(DecoderTrace {
            measurements: measurements.clone(),
            extract_trace,
            extract_out,
            residual_traces,
            aggregate_trace,
            output,
        })
    }

    /// Backprop an output-image gradient. Returns the gradient at the
    /// measurement input and parameter gradients in `params_mut` order.
    pub fn backward(
        &self,
        trace: &DecoderTrace,
        doutput: &Array2<f32>,
    ) -> (Array2<f32>, Vec<ndarray::ArrayD<f32>>) {
        let (h, w) = doutput.dim();
        // Long skip: gradient reaches both the deep path and the initial
        // reconstruction directly.
        let ddeep = doutput
            .clone()
            .into_shape_with_order((1, h, w))
            .expect("contiguous");
        let (dm_agg, dwa, dba) = self.aggregate.backward(&trace.aggregate_trace, &ddeep);

        let mut dm = dm_agg;
        let mut block_grads: Vec<Vec<ndarray::ArrayD<f32>>> = Vec::with_capacity(self.blocks.len());
        for (block, btrace) in self.blocks.iter().zip(&trace.residual_traces).rev() {
            let (dprev, grads) = block.backward(btrace, &dm);
            block_grads.push(grads);
            dm = dprev;
        }
        block_grads.reverse();

        let mut de = dm;
        de.zip_mut_with(&trace.extract_out, |d, &y| {
            if y <= 0.0 {
                *d = 0.0
            }
        });
        let (dx0, dwe, dbe) = self.extract.backward(&trace.extract_trace, &de);
        let dinitial_deep = dx0.index_axis(Axis(0), 0).to_owned();
        let dinitial = &dinitial_deep + doutput;

        // Initial reconstruction backward: image -> block pixels -> kernels
        // and measurements.
        let dblock_pixels = super::image_to_blocks(&dinitial, self.block)
            .expect("gradient shape equals image shape");
        let dinit_kernels = dblock_pixels.dot(&trace.measurements.t());
        let dmeasurements = self.init_kernels.t().dot(&dblock_pixels);

        let mut grads: Vec<ndarray::ArrayD<f32>> = vec![dinit_kernels.into_dyn()];
        grads.push(dwe.into_dyn());
        grads.push(dbe.into_dyn());
        for g in block_grads {
            grads.extend(g);
        }
        grads.push(dwa.into_dyn());
        grads.push(dba.into_dyn());
        (dmeasurements, grads)
    }

    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f32>> {
        let mut params: Vec<ArrayViewMutD<'_, f32>> =
            vec![self.init_kernels.view_mut().into_dyn()];
        params.extend(self.extract.params_mut());
        for block in &mut self.blocks {
            params.extend(block.conv1.params_mut());
            params.extend(block.conv2.params_mut());
        }
        params.extend(self.aggregate.params_mut());
        params
    }

    pub fn named_params(&self) -> Vec<(String, ArrayViewD<'_, f32>)> {
        let mut named = vec![(
            "decoder.init.kernels".to_string(),
            self.init_kernels.view().into_dyn(),
        )];
        named.extend(self.extract.named_params("decoder.extract"));
        for (i, block) in self.blocks.iter().enumerate() {
            named.extend(block.conv1.named_params(&format!("decoder.block{i}.conv1")));
            named.extend(block.conv2.named_params(&format!("decoder.block{i}.conv2")));
        }
        named.extend(self.aggregate.named_params("decoder.aggregate"));
        named
    }
}

/// A complete trained (or training) estimator.
#[derive(Debug, Clone)]
pub struct EstimatorBundle {
    pub sensing: SensingNet,
    pub importance: ImportanceGenerator,
    pub decoder: Decoder,
    pub hyper: EstimatorConfig,
    /// When false the gates are bypassed entirely (the plain-CCS ablation).
    pub use_importance: bool,
    /// Mean/std of measurements over the last training batch; recorded for
    /// diagnostics.
    pub measurement_stats: (f32, f32),
    pub trained: bool,
}

impl EstimatorBundle {
    pub fn new<R: Rng>(cfg: &EstimatorConfig, use_importance: bool, rng: &mut R) -> Self {
        let n_b = cfg.n_measurements();
        Self {
            sensing: SensingNet::new(cfg.block_size, n_b, rng),
            importance: ImportanceGenerator::new(n_b, rng),
            decoder: Decoder::new(cfg, rng),
            hyper: cfg.clone(),
            use_importance,
            measurement_stats: (0.0, 1.0),
            trained: false,
        }
    }

    /// Inference: decode one image's measurements, gating them when the
    /// importance generator is enabled.
    pub fn reconstruct(
        &self,
        measurements: &Array2<f32>,
        h: usize,
        w: usize,
    ) -> Result<Array2<f32>, CsError> {
        let gated = if self.use_importance {
            let y_rows = measurements.t().to_owned();
            let (kappa, _) = self.importance.forward(&y_rows);
            (&y_rows * &kappa).t().to_owned()
        } else {
            measurements.clone()
        };
        Ok(self.decoder.decode(&gated, h, w)?.output)
    }

    pub fn named_params(&self) -> Vec<(String, ArrayViewD<'_, f32>)> {
        let mut named = self.sensing.named_params();
        named.extend(self.importance.named_params());
        named.extend(self.decoder.named_params());
        named
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f32>)> {
        let mut named: Vec<(String, ArrayViewMutD<'_, f32>)> = vec![(
            "sensing.kernels".to_string(),
            self.sensing.kernels.view_mut().into_dyn(),
        )];
        named.push(("ig.fc1.weight".to_string(), self.importance.fc1.weight.view_mut().into_dyn()));
        named.push(("ig.fc1.bias".to_string(), self.importance.fc1.bias.view_mut().into_dyn()));
        named.push(("ig.fc2.weight".to_string(), self.importance.fc2.weight.view_mut().into_dyn()));
        named.push(("ig.fc2.bias".to_string(), self.importance.fc2.bias.view_mut().into_dyn()));
        named.push((
            "decoder.init.kernels".to_string(),
            self.decoder.init_kernels.view_mut().into_dyn(),
        ));
        named.push((
            "decoder.extract.weight".to_string(),
            self.decoder.extract.weight.view_mut().into_dyn(),
        ));
        named.push((
            "decoder.extract.bias".to_string(),
            self.decoder.extract.bias.view_mut().into_dyn(),
        ));
        for (i, block) in self.decoder.blocks.iter_mut().enumerate() {
            named.push((
                format!("decoder.block{i}.conv1.weight"),
                block.conv1.weight.view_mut().into_dyn(),
            ));
            named.push((
                format!("decoder.block{i}.conv1.bias"),
                block.conv1.bias.view_mut().into_dyn(),
            ));
            named.push((
                format!("decoder.block{i}.conv2.weight"),
                block.conv2.weight.view_mut().into_dyn(),
            ));
            named.push((
                format!("decoder.block{i}.conv2.bias"),
                block.conv2.bias.view_mut().into_dyn(),
            ));
        }
        named.push((
            "decoder.aggregate.weight".to_string(),
            self.decoder.aggregate.weight.view_mut().into_dyn(),
        ));
        named.push((
            "decoder.aggregate.bias".to_string(),
            self.decoder.aggregate.bias.view_mut().into_dyn(),
        ));
        named
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EstimatorConfig;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> EstimatorConfig {
        EstimatorConfig {
            block_size: 8,
            sampling_ratio: 0.25,
            feature_maps: 4,
            res_blocks: 2,
            kernel_size: 3,
            ..EstimatorConfig::default()
        }
    }

    #[test]
    fn reference_measurement_count() {
        let cfg = EstimatorConfig::default();
        assert_eq!(cfg.n_measurements(), 102); // round(0.1 * 1024)
    }

    #[test]
    fn sensing_is_linear_and_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = SensingNet::new(8, 16, &mut rng);
        let g1 = Array2::from_shape_fn((8, 8), |_| standard_normal(&mut rng));
        let g2 = Array2::from_shape_fn((8, 8), |_| standard_normal(&mut rng));
        let a = 1.7f32;
        let b = -0.4f32;
        let lhs = net.sense_block(&(&g1 * a + &g2 * b)).unwrap();
        let y1 = net.sense_block(&g1).unwrap();
        let y2 = net.sense_block(&g2).unwrap();
        for i in 0..16 {
            assert_relative_eq!(lhs[i], a * y1[i] + b * y2[i], epsilon = 1e-5);
        }
        let zero = net.sense_block(&Array2::zeros((8, 8))).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(net.sense_block(&Array2::zeros((4, 8))).is_err());
    }

    #[test]
    fn importance_output_is_gated_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ig = ImportanceGenerator::new(10, &mut rng);
        let y = Array2::from_shape_fn((7, 10), |_| standard_normal(&mut rng) * 3.0);
        let (kappa, _) = ig.forward(&y);
        assert_eq!(kappa.dim(), (7, 10));
        assert!(kappa.iter().all(|&k| (0.0..=1.0).contains(&k)));
    }

    #[test]
    fn blur_preserves_constants_and_is_symmetric() {
        let c = Array2::from_elem((2, 6), 0.37f32);
        assert_eq!(blur3(&c), c);

        // Symmetry: <Ax, y> == <x, Ay> for random vectors.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((1, 9), |_| standard_normal(&mut rng));
        let y = Array2::from_shape_fn((1, 9), |_| standard_normal(&mut rng));
        let lhs: f32 = (&blur3(&x) * &y).sum();
        let rhs: f32 = (&x * &blur3(&y)).sum();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-5);
    }

    #[test]
    fn zero_deep_path_is_identity_on_initial_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = small_cfg();
        let mut decoder = Decoder::new(&cfg, &mut rng);
        // Zero every deep-path parameter; aggregation already starts at 0.
        decoder.extract.weight.fill(0.0);
        decoder.extract.bias.fill(0.0);
        for b in &mut decoder.blocks {
            b.conv1.weight.fill(0.0);
            b.conv1.bias.fill(0.0);
            b.conv2.weight.fill(0.0);
            b.conv2.bias.fill(0.0);
        }
        decoder.aggregate.weight.fill(0.0);
        decoder.aggregate.bias.fill(0.0);
        let y = Array2::from_shape_fn((cfg.n_measurements(), 4), |_| standard_normal(&mut rng));
        let trace = decoder.decode(&y, 16, 16).unwrap();
        let initial = decoder.initial_reconstruction(&y, 16, 16).unwrap();
        assert_eq!(trace.output, initial);
    }

    #[test]
    fn long_skip_residual_identity() {
        // decode output minus deep path equals the initial reconstruction.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = small_cfg();
        let mut decoder = Decoder::new(&cfg, &mut rng);
        decoder.aggregate.weight.mapv_inplace(|_| standard_normal(&mut rng) * 0.1);
        let y = Array2::from_shape_fn((cfg.n_measurements(), 4), |_| standard_normal(&mut rng));
        let trace = decoder.decode(&y, 16, 16).unwrap();
        let initial = decoder.initial_reconstruction(&y, 16, 16).unwrap();
        let deep = &trace.output - &initial;
        // Re-decode with zeroed aggregation: output collapses to initial.
        decoder.aggregate.weight.fill(0.0);
        decoder.aggregate.bias.fill(0.0);
        let trace2 = decoder.decode(&y, 16, 16).unwrap();
        assert_relative_eq!(
            (&trace2.output - &initial).mapv(f32::abs).sum(),
            0.0,
            epsilon = 1e-6
        );
        assert!(deep.mapv(f32::abs).sum() > 0.0);
    }

    #[test]
    fn decode_output_shape_matches_input_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = small_cfg();
        let decoder = Decoder::new(&cfg, &mut rng);
        let n_blocks = (96 / 8) * (96 / 8);
        let y = Array2::zeros((cfg.n_measurements(), n_blocks));
        let trace = decoder.decode(&y, 96, 96).unwrap();
        assert_eq!(trace.output.dim(), (96, 96));
        assert!(decoder.decode(&y, 96, 88).is_err());
    }

    /// End-to-end gradient check through sensing -> gating -> decoder.
    #[test]
    fn decoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = EstimatorConfig {
            block_size: 4,
            sampling_ratio: 0.5,
            feature_maps: 3,
            res_blocks: 1,
            kernel_size: 3,
            ..EstimatorConfig::default()
        };
        let mut decoder = Decoder::new(&cfg, &mut rng);
        decoder.aggregate.weight.mapv_inplace(|_| standard_normal(&mut rng) * 0.05);
        let y = Array2::from_shape_fn((cfg.n_measurements(), 4), |_| standard_normal(&mut rng));
        let target = Array2::from_shape_fn((8, 8), |_| standard_normal(&mut rng));

        let loss = |d: &Decoder, y: &Array2<f32>| -> f32 {
            let out = d.decode(y, 8, 8).unwrap().output;
            (&out - &target).mapv(|v| v * v).sum()
        };

        let trace = decoder.decode(&y, 8, 8).unwrap();
        let dout = (&trace.output - &target).mapv(|v| 2.0 * v);
        let (dy, grads) = decoder.backward(&trace, &dout);

        // Small step: the ReLU kinks make central differences one-sided for
        // larger perturbations.
        let eps = 2e-3f32;
        // Measurement-input gradient.
        let mut yp = y.clone();
        yp[(1, 2)] += eps;
        let mut ym = y.clone();
        ym[(1, 2)] -= eps;
        let numeric = (loss(&decoder, &yp) - loss(&decoder, &ym)) / (2.0 * eps);
        assert!(
            (dy[(1, 2)] - numeric).abs() <= 1e-1 * numeric.abs().max(0.5),
            "dy analytic {} vs numeric {numeric}",
            dy[(1, 2)]
        );
        // Initial-reconstruction kernel gradient (grads[0]).
        let orig = decoder.init_kernels[(3, 1)];
        decoder.init_kernels[(3, 1)] = orig + eps;
        let plus = loss(&decoder, &y);
        decoder.init_kernels[(3, 1)] = orig - eps;
        let minus = loss(&decoder, &y);
        decoder.init_kernels[(3, 1)] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads[0][[3, 1]];
        assert!(
            (analytic - numeric).abs() <= 1e-1 * numeric.abs().max(0.5),
            "dK analytic {analytic} vs numeric {numeric}"
        );
        // A residual-block convolution weight (grads[3] = block0.conv1.weight).
        let orig = decoder.blocks[0].conv1.weight[(1, 5)];
        decoder.blocks[0].conv1.weight[(1, 5)] = orig + eps;
        let plus = loss(&decoder, &y);
        decoder.blocks[0].conv1.weight[(1, 5)] = orig - eps;
        let minus = loss(&decoder, &y);
        decoder.blocks[0].conv1.weight[(1, 5)] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads[3][[1, 5]];
        assert!(
            (analytic - numeric).abs() <= 1e-1 * numeric.abs().max(0.5),
            "dW analytic {analytic} vs numeric {numeric}"
        );
    }

    #[test]
    fn ig_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut ig = ImportanceGenerator::new(6, &mut rng);
        let y = Array2::from_shape_fn((3, 6), |_| standard_normal(&mut rng));
        let loss = |ig: &ImportanceGenerator, y: &Array2<f32>| -> f32 {
            let (kappa, _) = ig.forward(y);
            kappa.mapv(|k| k * k).sum()
        };
        let (kappa, trace) = ig.forward(&y);
        let dkappa = kappa.mapv(|k| 2.0 * k);
        let (dy, grads) = ig.backward(&trace, &dkappa);

        let eps = 1e-2f32;
        let orig = ig.fc1.weight[(2, 3)];
        ig.fc1.weight[(2, 3)] = orig + eps;
        let plus = loss(&ig, &y);
        ig.fc1.weight[(2, 3)] = orig - eps;
        let minus = loss(&ig, &y);
        ig.fc1.weight[(2, 3)] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        assert!(
            (grads[0][[2, 3]] - numeric).abs() <= 5e-2 * numeric.abs().max(0.1),
            "analytic {} vs numeric {numeric}",
            grads[0][[2, 3]]
        );

        let mut yp = y.clone();
        yp[(1, 1)] += eps;
        let mut ym = y.clone();
        ym[(1, 1)] -= eps;
        let numeric = (loss(&ig, &yp) - loss(&ig, &ym)) / (2.0 * eps);
        assert!(
            (dy[(1, 1)] - numeric).abs() <= 5e-2 * numeric.abs().max(0.1),
            "dy analytic {} vs numeric {numeric}",
            dy[(1, 1)]
        );
    }
}
