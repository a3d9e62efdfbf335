use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::binning::BinnedData;
use super::bundle::{FoldEnsemble, ModelBundle, TrainingMetadata, BUNDLE_FORMAT, BUNDLE_VERSION};
use super::tree::grow_tree;
use super::{GbdtError, GbdtParams};
use crate::features::{CategoryDictionary, FeatureMatrix, TargetVector};

/// Fold of every row: each meter's rows (already in time order) are cut into
/// `n_folds` contiguous blocks of near-equal size.
pub fn assign_folds(matrix: &FeatureMatrix, n_folds: usize) -> Vec<usize> {
    let mut per_meter = vec![0usize; matrix.meter_ids.len()];
    for &m in &matrix.row_meter {
        per_meter[m as usize] += 1;
    }
    let mut seen = vec![0usize; matrix.meter_ids.len()];
    matrix
        .row_meter
        .iter()
        .map(|&m| {
            let m = m as usize;
            let fold = seen[m] * n_folds / per_meter[m];
            seen[m] += 1;
            fold
        })
        .collect()
}

fn tree_rng(seed: u64, fold: usize, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((fold as u64) << 32) | tree as u64);
    rng
}

fn rmse(y: &[f64], f: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    (y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt()
}

fn train_fold(
    x: &FeatureMatrix,
    y: &TargetVector,
    rows: &[usize],
    params: &GbdtParams,
    fold: usize,
    base_score: f64,
    constant_target: bool,
) -> FoldEnsemble {
    let targets: Vec<f64> = rows.iter().map(|&r| y.0[r]).collect();
    let n = targets.len();
    let mut f = vec![base_score; n];
    let mut train_rmse = vec![rmse(&targets, &f)];
    let mut trees = Vec::new();
    if constant_target {
        return FoldEnsemble {
            base_score,
            trees,
            n_train_rows: n,
            train_rmse,
        };
    }

    let data = BinnedData::from_matrix(x, rows, params.n_bins);
    let p = data.n_features();
    let n_features = ((params.feature_fraction * p as f64).round() as usize).clamp(1, p);
    let n_sample = ((params.row_fraction * n as f64).round() as usize).clamp(1, n);
    let mut gradients = vec![0.0; n];
    for t in 0..params.n_trees {
        for i in 0..n {
            gradients[i] = targets[i] - f[i];
        }
        let mut rng = tree_rng(params.seed, fold, t);
        let mut features = if n_features == p {
            (0..p).collect()
        } else {
            index::sample(&mut rng, p, n_features).into_vec()
        };
        features.sort_unstable();
        let sampled: Vec<u32> = if n_sample == n {
            (0..n as u32).collect()
        } else {
            let mut s: Vec<u32> = index::sample(&mut rng, n, n_sample).into_iter().map(|i| i as u32).collect();
            s.sort_unstable();
            s
        };
        let grown = grow_tree(&data, sampled, &gradients, &features, params.max_leaves, params.min_samples_leaf);
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += params.learning_rate * grown.predict_binned(&data, i);
        }
        train_rmse.push(rmse(&targets, &f));
        trees.push(grown.tree);
    }
    FoldEnsemble {
        base_score,
        trees,
        n_train_rows: n,
        train_rmse,
    }
}

/// Boosts one ensemble per fold on the rows outside that fold. The learner
/// fits `y` directly, so callers pass log1p targets.
pub fn train(x: &FeatureMatrix, y: &TargetVector, params: &GbdtParams) -> Result<ModelBundle, GbdtError> {
    params.validate()?;
    if x.n_rows() == 0 {
        return Err(GbdtError::EmptyInput);
    }
    if x.n_rows() != y.len() {
        return Err(GbdtError::LengthMismatch {
            rows: x.n_rows(),
            targets: y.len(),
        });
    }
    if !x.is_encoded() {
        return Err(GbdtError::NotEncoded);
    }
    if let Some(i) = y.0.iter().position(|v| !v.is_finite()) {
        return Err(GbdtError::NonFiniteTarget(i));
    }
    let folds = assign_folds(x, params.n_folds);
    for k in 0..params.n_folds {
        if !folds.iter().any(|&f| f != k) {
            return Err(GbdtError::EmptyInput);
        }
    }
    let constant_target = y.0.iter().all(|v| *v == y.0[0]);
    // every fold starts from the mean of all training targets, so an
    // ensemble without trees predicts exactly that mean
    let base_score = y.0.iter().sum::<f64>() / y.len() as f64;
    if constant_target {
        log::warn!("constant target: every fold keeps only its base score");
    }

    let ensembles: Vec<FoldEnsemble> = (0..params.n_folds)
        .into_par_iter()
        .map(|k| {
            let rows: Vec<usize> = (0..x.n_rows()).filter(|&r| folds[r] != k).collect();
            train_fold(x, y, &rows, params, k, base_score, constant_target)
        })
        .collect();

    Ok(ModelBundle {
        format: BUNDLE_FORMAT.to_string(),
        version: BUNDLE_VERSION,
        params: params.clone(),
        schema: x.schema.clone(),
        dictionary: CategoryDictionary::default(),
        folds: ensembles,
        metadata: TrainingMetadata::describe(x, y, params.seed, constant_target),
    })
}

fn check_schema(bundle: &ModelBundle, x: &FeatureMatrix) -> Result<(), GbdtError> {
    if bundle.schema != x.schema {
        let names = |s: &crate::features::FeatureSchema| s.names().collect::<Vec<_>>().join(",");
        return Err(GbdtError::SchemaMismatch(format!(
            "bundle expects [{}], matrix has [{}]",
            names(&bundle.schema),
            names(&x.schema)
        )));
    }
    if !x.is_encoded() {
        return Err(GbdtError::NotEncoded);
    }
    Ok(())
}

/// Fold-averaged prediction in log space.
pub fn predict_log(bundle: &ModelBundle, x: &FeatureMatrix) -> Result<Vec<f64>, GbdtError> {
    check_schema(bundle, x)?;
    let lr = bundle.params.learning_rate;
    let n_folds = bundle.folds.len() as f64;
    Ok((0..x.n_rows())
        .into_par_iter()
        .map(|row| {
            let value = |f: usize| x.value(row, f);
            bundle
                .folds
                .iter()
                .map(|fold| fold.base_score + fold.trees.iter().map(|t| lr * t.predict(value)).sum::<f64>())
                .sum::<f64>()
                / n_folds
        })
        .collect())
}

/// Predictions in the original units: `expm1` of the log-space average,
/// clipped at zero.
pub fn predict(bundle: &ModelBundle, x: &FeatureMatrix) -> Result<Vec<f64>, GbdtError> {
    Ok(predict_log(bundle, x)?
        .into_iter()
        .map(|v| v.exp_m1().max(0.0))
        .collect())
}

/// Training RMSE (log space) of each fold after 0, 1, ... trees.
pub fn training_loss_curve(bundle: &ModelBundle) -> Vec<&[f64]> {
    bundle.folds.iter().map(|f| f.train_rmse.as_slice()).collect()
}
