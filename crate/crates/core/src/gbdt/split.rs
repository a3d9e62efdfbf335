use super::binning::BinnedData;

/// Splits must gain more than this fraction of the node's sum of squared
/// gradients; anything smaller is rounding noise.
const GAIN_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct HistBin {
    pub sum: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct NodeStats {
    pub sum: f64,
    pub count: u64,
    pub sum_sq: f64,
}

impl NodeStats {
    pub fn of(rows: &[u32], gradients: &[f64]) -> Self {
        let mut s = NodeStats::default();
        for &r in rows {
            let g = gradients[r as usize];
            s.sum += g;
            s.sum_sq += g * g;
        }
        s.count = rows.len() as u64;
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitRule {
    /// Value bins `0..=bin` go left.
    Threshold { bin: u16 },
    /// Listed category bins (sorted) go left.
    Categories { left: Vec<u16> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub rule: SplitRule,
    pub missing_left: bool,
    pub gain: f64,
    pub left_count: u64,
    pub right_count: u64,
}

impl SplitCandidate {
    pub(crate) fn goes_left(&self, bin: u16, missing_bin: u16) -> bool {
        if bin == missing_bin {
            return self.missing_left;
        }
        match &self.rule {
            SplitRule::Threshold { bin: t } => bin <= *t,
            SplitRule::Categories { left } => left.binary_search(&bin).is_ok(),
        }
    }
}

pub(crate) fn build_histogram(
    data: &BinnedData,
    rows: &[u32],
    gradients: &[f64],
    features: &[usize],
    hist: &mut [HistBin],
) {
    for &f in features {
        let col = &data.bins[f];
        let h = &mut hist[data.offsets[f]..data.offsets[f + 1]];
        for &r in rows {
            let b = &mut h[col[r as usize] as usize];
            b.sum += gradients[r as usize];
            b.count += 1;
        }
    }
}

/// `parent - child` over the sampled features' blocks.
pub(crate) fn subtract_histogram(
    data: &BinnedData,
    parent: &[HistBin],
    child: &[HistBin],
    features: &[usize],
) -> Vec<HistBin> {
    let mut out = vec![HistBin::default(); parent.len()];
    for &f in features {
        for i in data.offsets[f]..data.offsets[f + 1] {
            out[i] = HistBin {
                sum: parent[i].sum - child[i].sum,
                count: parent[i].count - child[i].count,
            };
        }
    }
    out
}

fn score(sum: f64, count: u64) -> f64 {
    sum * sum / count as f64
}

struct Search {
    parent_score: f64,
    min_samples_leaf: u64,
    best: Option<SplitCandidate>,
}

impl Search {
    fn consider(
        &mut self,
        feature: usize,
        rule: impl FnOnce() -> SplitRule,
        missing_left: bool,
        left: (f64, u64),
        right: (f64, u64),
    ) {
        if left.1 < self.min_samples_leaf || right.1 < self.min_samples_leaf {
            return;
        }
        let gain = score(left.0, left.1) + score(right.0, right.1) - self.parent_score;
        if self.best.as_ref().is_none_or(|b| gain > b.gain) {
            self.best = Some(SplitCandidate {
                feature,
                rule: rule(),
                missing_left,
                gain,
                left_count: left.1,
                right_count: right.1,
            });
        }
    }
}

/// Best split of a node from its histogram. Candidates are visited by
/// feature, then threshold, then missing-right before missing-left, and only
/// a strictly larger gain replaces the incumbent.
pub(crate) fn best_split_from_histogram(
    data: &BinnedData,
    hist: &[HistBin],
    features: &[usize],
    node: NodeStats,
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    if node.count < 2 * min_samples_leaf as u64 {
        return None;
    }
    let mut search = Search {
        parent_score: score(node.sum, node.count),
        min_samples_leaf: min_samples_leaf as u64,
        best: None,
    };
    for &f in features {
        let binning = &data.binnings[f];
        let nv = binning.n_value_bins();
        let h = &hist[data.offsets[f]..data.offsets[f + 1]];
        let miss = h[nv];
        let (values_sum, values_count) = (node.sum - miss.sum, node.count - miss.count);
        if binning.is_categorical() {
            let mut cats: Vec<(u16, HistBin)> = (0..nv)
                .filter(|&c| h[c].count > 0)
                .map(|c| (c as u16, h[c]))
                .collect();
            cats.sort_by(|a, b| {
                (a.1.sum / a.1.count as f64)
                    .total_cmp(&(b.1.sum / b.1.count as f64))
                    .then(a.0.cmp(&b.0))
            });
            let (mut ls, mut ln) = (0.0, 0u64);
            for k in 1..=cats.len() {
                ls += cats[k - 1].1.sum;
                ln += cats[k - 1].1.count;
                let (rs, rn) = (values_sum - ls, values_count - ln);
                let rule = || {
                    let mut left: Vec<u16> = cats[..k].iter().map(|c| c.0).collect();
                    left.sort_unstable();
                    SplitRule::Categories { left }
                };
                search.consider(f, rule, false, (ls, ln), (rs + miss.sum, rn + miss.count));
                if miss.count > 0 {
                    search.consider(f, rule, true, (ls + miss.sum, ln + miss.count), (rs, rn));
                }
            }
        } else {
            let (mut ls, mut ln) = (0.0, 0u64);
            for b in 0..nv {
                if h[b].count == 0 {
                    continue;
                }
                ls += h[b].sum;
                ln += h[b].count;
                let (rs, rn) = (values_sum - ls, values_count - ln);
                let rule = || SplitRule::Threshold { bin: b as u16 };
                search.consider(f, rule, false, (ls, ln), (rs + miss.sum, rn + miss.count));
                if miss.count > 0 {
                    search.consider(f, rule, true, (ls + miss.sum, ln + miss.count), (rs, rn));
                }
            }
        }
    }
    search
        .best
        .filter(|b| b.gain > 0.0 && b.gain > GAIN_EPS * node.sum_sq)
}

/// Best variance-reduction split of the node holding `rows`, searching the
/// given features. `None` when no admissible split exists.
pub fn find_best_split(
    data: &BinnedData,
    rows: &[u32],
    gradients: &[f64],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    let mut hist = vec![HistBin::default(); data.histogram_len()];
    build_histogram(data, rows, gradients, &features, &mut hist);
    best_split_from_histogram(data, &hist, &features, NodeStats::of(rows, gradients), min_samples_leaf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn numeric(columns: Vec<Vec<f64>>) -> BinnedData {
        let kinds = vec![FeatureKind::Numeric; columns.len()];
        BinnedData::fit(&columns, &kinds, 1024)
    }

    fn all_rows(n: usize) -> Vec<u32> {
        (0..n as u32).collect()
    }

    /// Exhaustive search on raw values with an independent gain formula:
    /// SSE(parent) - SSE(left) - SSE(right).
    fn brute_force(columns: &[Vec<f64>], g: &[f64], min_leaf: usize) -> Option<(usize, f64, f64)> {
        fn sse(v: &[f64]) -> f64 {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum()
        }
        let parent = sse(g);
        let mut best: Option<(usize, f64, f64)> = None;
        for (f, col) in columns.iter().enumerate() {
            let mut distinct: Vec<f64> = col.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            for t in distinct {
                let (l, r): (Vec<(f64, f64)>, Vec<(f64, f64)>) =
                    col.iter().copied().zip(g.iter().copied()).partition(|(x, _)| *x <= t);
                if l.len() < min_leaf || r.len() < min_leaf {
                    continue;
                }
                let lg: Vec<f64> = l.iter().map(|p| p.1).collect();
                let rg: Vec<f64> = r.iter().map(|p| p.1).collect();
                let gain = parent - sse(&lg) - sse(&rg);
                if best.is_none_or(|b| gain > b.2 + 1e-9 * parent.max(1.0)) {
                    best = Some((f, t, gain));
                }
            }
        }
        best
    }

    #[test]
    fn step_target_splits_in_the_middle() {
        let data = numeric(vec![vec![1.0, 2.0, 3.0, 4.0]]);
        let g = [0.0, 0.0, 10.0, 10.0];
        let split = find_best_split(&data, &all_rows(4), &g, &[0], 1).unwrap();
        assert_eq!(split.rule, SplitRule::Threshold { bin: 1 });
        assert!((split.gain - 100.0).abs() < 1e-12);
        assert_eq!((split.left_count, split.right_count), (2, 2));
        // the other two thresholds, by the same enumeration
        let gains: Vec<f64> = (0..3)
            .map(|b| {
                let (l, r) = g.split_at(b + 1);
                let s = |v: &[f64]| v.iter().sum::<f64>().powi(2) / v.len() as f64;
                s(l) + s(r) - s(&g)
            })
            .collect();
        assert!((gains[0] - 100.0 / 3.0).abs() < 1e-12);
        assert!((gains[2] - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_has_no_split() {
        let data = numeric(vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]]);
        assert!(find_best_split(&data, &all_rows(5), &[0.3; 5], &[0], 1).is_none());
        assert!(find_best_split(&data, &all_rows(5), &[0.0; 5], &[0], 1).is_none());
    }

    #[test]
    fn too_few_samples_has_no_split() {
        let data = numeric(vec![vec![1.0, 2.0, 3.0]]);
        assert!(find_best_split(&data, &all_rows(3), &[0.0, 1.0, 5.0], &[0], 2).is_none());
    }

    #[test]
    fn ties_prefer_lowest_feature_then_threshold() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let data = numeric(vec![x.clone(), x]);
        let split = find_best_split(&data, &all_rows(4), &[0.0, 0.0, 1.0, 1.0], &[1, 0], 1).unwrap();
        assert_eq!(split.feature, 0);
        // symmetric gains at both ends: lowest threshold wins
        let data = numeric(vec![vec![1.0, 2.0, 3.0]]);
        let split = find_best_split(&data, &all_rows(3), &[0.0, 1.0, 0.0], &[0], 1).unwrap();
        assert_eq!(split.rule, SplitRule::Threshold { bin: 0 });
    }

    #[test]
    fn missing_values_pick_a_direction() {
        let data = numeric(vec![vec![1.0, 2.0, f64::NAN, f64::NAN, 3.0, 4.0]]);
        let g = [0.0, 0.0, 10.0, 10.0, 10.0, 10.0];
        let split = find_best_split(&data, &all_rows(6), &g, &[0], 1).unwrap();
        assert_eq!(split.rule, SplitRule::Threshold { bin: 1 });
        assert!(!split.missing_left);
        let g = [0.0, 0.0, 0.0, 0.0, 10.0, 10.0];
        let split = find_best_split(&data, &all_rows(6), &g, &[0], 1).unwrap();
        assert!(split.missing_left);
        assert_eq!((split.left_count, split.right_count), (4, 2));
    }

    #[test]
    fn missing_versus_present_split() {
        let data = numeric(vec![vec![5.0, 5.0, f64::NAN, f64::NAN]]);
        let split = find_best_split(&data, &all_rows(4), &[1.0, 1.0, 3.0, 3.0], &[0], 1).unwrap();
        assert_eq!(split.rule, SplitRule::Threshold { bin: 0 });
        assert!(!split.missing_left);
        assert!((split.gain - 4.0).abs() < 1e-12);
    }

    #[test]
    fn categorical_groups_by_mean_gradient() {
        let data = BinnedData::fit(
            &[vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0]],
            &[FeatureKind::Categorical],
            255,
        );
        // categories 0 and 2 are high, 1 is low: no threshold on codes separates them
        let g = [5.0, -5.0, 5.0, 5.0, -5.0, 5.0];
        let split = find_best_split(&data, &all_rows(6), &g, &[0], 1).unwrap();
        assert_eq!(split.rule, SplitRule::Categories { left: vec![1] });
        let parent = 10.0f64.powi(2) / 6.0;
        let expected = 100.0 / 2.0 + 400.0 / 4.0 - parent;
        assert!((split.gain - expected).abs() < 1e-9);
    }

    #[test]
    fn matches_exhaustive_search_on_random_instances() {
        for seed in 0..300u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(4..=64);
            let p = rng.random_range(1..=4);
            let levels = rng.random_range(2..=20);
            let columns: Vec<Vec<f64>> = (0..p)
                .map(|_| (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect())
                .collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let min_leaf = rng.random_range(1..=3);
            let data = numeric(columns.clone());
            let features: Vec<usize> = (0..p).collect();
            let ours = find_best_split(&data, &all_rows(n), &g, &features, min_leaf);
            let oracle = brute_force(&columns, &g, min_leaf);
            match (ours, oracle) {
                (Some(s), Some((f, t, gain))) => {
                    assert!((s.gain - gain).abs() < 1e-9 * gain.max(1.0), "seed {seed}");
                    let SplitRule::Threshold { bin } = s.rule else { panic!() };
                    let thresholds = match &data.binnings[s.feature] {
                        super::super::binning::FeatureBinning::Numeric { thresholds } => thresholds,
                        _ => unreachable!(),
                    };
                    // same partition when the optimum is unique
                    if s.feature == f {
                        let lo = if bin == 0 { f64::NEG_INFINITY } else { thresholds[bin as usize - 1] };
                        assert!(t > lo && t <= thresholds.get(bin as usize).copied().unwrap_or(f64::MAX), "seed {seed}");
                    }
                }
                (None, Some((_, _, gain))) => assert!(gain < 1e-9, "seed {seed}: missed gain {gain}"),
                (Some(s), None) => panic!("seed {seed}: split {s:?} not in oracle"),
                (None, None) => {}
            }
        }
    }

    proptest! {
        #[test]
        fn histogram_subtraction_matches_direct(
            values in proptest::collection::vec(0u8..8, 10..80),
            grads in proptest::collection::vec(-5.0f64..5.0, 80),
            cut in 1usize..9,
        ) {
            let n = values.len();
            let data = numeric(vec![values.iter().map(|v| *v as f64).collect()]);
            let rows = all_rows(n);
            let g = &grads[..n];
            let (small, _): (Vec<u32>, Vec<u32>) = rows.iter().partition(|r| (**r as usize) < cut.min(n));
            let large: Vec<u32> = rows.iter().copied().filter(|r| (*r as usize) >= cut.min(n)).collect();
            let len = data.histogram_len();
            let (mut parent, mut s, mut l) = (vec![HistBin::default(); len], vec![HistBin::default(); len], vec![HistBin::default(); len]);
            build_histogram(&data, &rows, g, &[0], &mut parent);
            build_histogram(&data, &small, g, &[0], &mut s);
            build_histogram(&data, &large, g, &[0], &mut l);
            let derived = subtract_histogram(&data, &parent, &s, &[0]);
            for (a, b) in derived.iter().zip(&l) {
                prop_assert_eq!(a.count, b.count);
                prop_assert!((a.sum - b.sum).abs() < 1e-9);
            }
        }
    }
}
