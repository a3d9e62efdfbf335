//! A pure-noise feature must not move validation RMSLE by 1% or more on the
//! synthetic corpus; otherwise extra capacity alone could explain the gains
//! of the trend feature.

use occutrend::experiment::{build_split, fit, ingest, predict_rows, prediction_records, screen, write_synthetic_project};
use occutrend::{Overrides, PipelineConfig};
use occutrend_core::features::{Column, FeatureKind, FeatureMatrix, FeatureSource, FeatureSpec};
use occutrend_core::synth::SynthConfig;
use occutrend_core::{rmsle, Mode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn with_noise(x: &FeatureMatrix, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..x.n_rows()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut out = x.clone();
    out.push_column(
        FeatureSpec::new("noise", FeatureKind::Numeric, FeatureSource::Other),
        Column::Numeric(noise),
    )
    .unwrap();
    out
}

#[test]
fn noise_feature_changes_validation_rmsle_by_under_one_percent() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_synthetic_project(dir.path(), &SynthConfig::default()).unwrap();
    let cfg = PipelineConfig::load(&config, &Overrides::default()).unwrap();
    let data = ingest(&cfg).unwrap();
    let s = screen(&data, &cfg);
    let e = &cfg.experiment;
    let (x_train, y_train) = build_split(&data, &s, Mode::Proposed, e.training_year).unwrap();
    let (x_val, _) = build_split(&data, &s, Mode::Proposed, e.validation_year).unwrap();

    let score = |train: &FeatureMatrix, val: &FeatureMatrix| {
        let models = fit(train, &y_train, &s, &cfg.gbdt, e.group_by).unwrap();
        let predicted = predict_rows(&models, val, &s, e.group_by).unwrap();
        let records = prediction_records(&data, &s, val, &predicted).unwrap();
        let (p, a): (Vec<f64>, Vec<f64>) = records.iter().map(|r| (r.predicted, r.actual)).unzip();
        rmsle(&p, &a).unwrap()
    };
    let clean = score(&x_train, &x_val);
    let noisy = score(&with_noise(&x_train, 1), &with_noise(&x_val, 2));
    let change = 100.0 * (noisy - clean) / clean;
    println!("validation RMSLE {clean:.5} -> {noisy:.5} with a noise feature ({change:+.2}%)");
    assert!(change.abs() < 1.0, "{change:+.3}%");
}
