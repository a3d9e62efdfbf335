use serde::{Deserialize, Serialize};

use crate::features::{FeatureKind, FeatureMatrix};

/// Categorical codes at or above this limit are binned as missing.
pub const MAX_CATEGORICAL_BINS: usize = 65_534;

/// Quantiles are estimated from at most this many values per feature.
const QUANTILE_SAMPLE: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureBinning {
    /// Bin `b` holds values in `(thresholds[b-1], thresholds[b]]`.
    Numeric { thresholds: Vec<f64> },
    /// Bin `c` holds category code `c`.
    Categorical { n_categories: usize },
}

impl FeatureBinning {
    /// Equal-frequency bins over the finite values. When there are no more
    /// distinct values than `n_bins`, every distinct value gets its own bin.
    pub fn fit_numeric(values: &[f64], n_bins: usize) -> Self {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
        if sorted.len() > QUANTILE_SAMPLE {
            let stride = sorted.len() as f64 / QUANTILE_SAMPLE as f64;
            sorted = (0..QUANTILE_SAMPLE).map(|i| sorted[(i as f64 * stride) as usize]).collect();
        }
        sorted.sort_by(f64::total_cmp);
        let mut distinct: Vec<(f64, usize)> = Vec::new();
        for v in sorted.iter().copied() {
            match distinct.last_mut() {
                Some((last, count)) if *last == v => *count += 1,
                _ => distinct.push((v, 1)),
            }
        }
        let cut_after: Vec<usize> = if distinct.len() <= n_bins {
            (0..distinct.len().saturating_sub(1)).collect()
        } else {
            // Greedy: each cut aims at an equal share of what is left, so a
            // heavy tie does not swallow the remaining bins.
            let total = sorted.len();
            let mut cuts = Vec::new();
            let mut cumulative = 0usize;
            let mut last = 0usize;
            for (i, (_, count)) in distinct.iter().enumerate().take(distinct.len() - 1) {
                cumulative += count;
                let bins_left = n_bins - cuts.len();
                if (cumulative - last) * bins_left >= total - last {
                    cuts.push(i);
                    last = cumulative;
                    if cuts.len() == n_bins - 1 {
                        break;
                    }
                }
            }
            cuts
        };
        let thresholds = cut_after
            .into_iter()
            .map(|i| {
                let (a, b) = (distinct[i].0, distinct[i + 1].0);
                let mid = a + (b - a) / 2.0;
                if mid < b && mid >= a {
                    mid
                } else {
                    a
                }
            })
            .collect();
        FeatureBinning::Numeric { thresholds }
    }

    pub fn fit_categorical(codes: &[f64]) -> Self {
        let max = codes
            .iter()
            .filter(|v| v.is_finite() && **v >= 0.0 && (**v as usize) < MAX_CATEGORICAL_BINS)
            .fold(None, |m: Option<usize>, v| Some(m.map_or(*v as usize, |m| m.max(*v as usize))));
        FeatureBinning::Categorical {
            n_categories: max.map_or(0, |m| m + 1),
        }
    }

    pub fn n_value_bins(&self) -> usize {
        match self {
            FeatureBinning::Numeric { thresholds } => thresholds.len() + 1,
            FeatureBinning::Categorical { n_categories } => *n_categories,
        }
    }

    /// Index of the missing bin, which follows the value bins.
    pub fn missing_bin(&self) -> u16 {
        self.n_value_bins() as u16
    }

    pub fn bin(&self, value: f64) -> u16 {
        if value.is_nan() {
            return self.missing_bin();
        }
        match self {
            FeatureBinning::Numeric { thresholds } => thresholds.partition_point(|t| *t < value) as u16,
            FeatureBinning::Categorical { n_categories } => {
                if value >= 0.0 && (value as usize) < *n_categories {
                    value as u16
                } else {
                    self.missing_bin()
                }
            }
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureBinning::Categorical { .. })
    }
}

/// Column-major bin indices for a set of training rows.
#[derive(Debug, Clone)]
pub struct BinnedData {
    pub binnings: Vec<FeatureBinning>,
    pub bins: Vec<Vec<u16>>,
    /// Start of each feature's block in a flat histogram.
    pub offsets: Vec<usize>,
    pub n_rows: usize,
}

impl BinnedData {
    /// Fits binnings on the given columns and bins them.
    pub fn fit(columns: &[Vec<f64>], kinds: &[FeatureKind], n_bins: usize) -> Self {
        let binnings: Vec<FeatureBinning> = columns
            .iter()
            .zip(kinds)
            .map(|(col, kind)| match kind {
                FeatureKind::Numeric => FeatureBinning::fit_numeric(col, n_bins),
                FeatureKind::Categorical => FeatureBinning::fit_categorical(col),
            })
            .collect();
        let bins = columns
            .iter()
            .zip(&binnings)
            .map(|(col, b)| col.iter().map(|v| b.bin(*v)).collect())
            .collect();
        let mut offsets = Vec::with_capacity(binnings.len() + 1);
        let mut total = 0;
        for b in &binnings {
            offsets.push(total);
            total += b.n_value_bins() + 1;
        }
        offsets.push(total);
        BinnedData {
            n_rows: columns.first().map_or(0, Vec::len),
            binnings,
            bins,
            offsets,
        }
    }

    /// Bins the selected matrix rows, fitting on those rows only.
    pub fn from_matrix(matrix: &FeatureMatrix, rows: &[usize], n_bins: usize) -> Self {
        let columns: Vec<Vec<f64>> = (0..matrix.width())
            .map(|c| rows.iter().map(|&r| matrix.value(r, c)).collect())
            .collect();
        let kinds: Vec<FeatureKind> = matrix.schema.features.iter().map(|f| f.kind).collect();
        Self::fit(&columns, &kinds, n_bins)
    }

    pub fn n_features(&self) -> usize {
        self.binnings.len()
    }

    pub fn histogram_len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }
}
