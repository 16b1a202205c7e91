// Temporary calibration probe; removed before final delivery.
use famec::config::EstimatorConfig;
use famec::csnet::{train_estimator, TrainOptions};
use famec::exp::generate_image_dataset;

#[test]
#[ignore]
fn probe_gate_statistics() {
    let mut cfg = famec::config::parse_config_str("").unwrap().scenario;
    cfg.n_users = 3;
    cfg.n_ports = 32;
    cfg.fa_length = 16.0;
    cfg.estimator = EstimatorConfig {
        block_size: 16,
        sampling_ratio: 0.1,
        feature_maps: 16,
        res_blocks: 3,
        batch_size: 16,
        train_steps: 400,
        snapshots: 32,
        learning_rate: 1e-3,
        ..EstimatorConfig::default()
    };
    let images = generate_image_dataset(&cfg, 250, 7).unwrap();
    let (train_split, test_split) = images.split_at(200);
    let options = TrainOptions { use_importance: true, steps: 400, seed: 7 };
    let (bundle, trace) = train_estimator(train_split, &cfg.estimator, &options).unwrap();

    // Gate statistics over the test split.
    let mut all: Vec<f32> = Vec::new();
    let mut per_dim = vec![0.0f32; cfg.estimator.n_measurements()];
    let mut rows = 0usize;
    for img in test_split {
        let (y, _) = bundle.sensing.measure_image(&img.pixels).unwrap();
        let (kappa, _) = bundle.importance.forward(&y.t().to_owned());
        for r in 0..kappa.nrows() {
            for j in 0..kappa.ncols() {
                per_dim[j] += kappa[(r, j)];
                all.push(kappa[(r, j)]);
            }
            rows += 1;
        }
    }
    per_dim.iter_mut().for_each(|v| *v /= rows as f32);
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("kappa min {:.4} p25 {:.4} median {:.4} p75 {:.4} max {:.4}",
        all[0], all[all.len()/4], all[all.len()/2], all[3*all.len()/4], all[all.len()-1]);
    let mut sorted_dims = per_dim.clone();
    sorted_dims.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("per-dim mean gates: {:?}", sorted_dims.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());
    println!("losses first {:?} last {:?}", trace.steps.first().map(|s| s.l_r), trace.steps.last().map(|s| s.l_r));
}
