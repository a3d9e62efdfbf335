use serde::{Deserialize, Serialize};

use super::binning::{BinnedData, FeatureBinning};
use super::split::{
    best_split_from_histogram, build_histogram, subtract_histogram, HistBin, NodeStats, SplitCandidate, SplitRule,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCondition {
    /// `value <= threshold` goes left.
    Threshold { threshold: f64 },
    /// Listed category codes (sorted) go left; any other code goes right.
    Categories { left: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        condition: SplitCondition,
        /// Where NaN and unknown categories go.
        missing_left: bool,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Follows the splits for one row; `value(f)` is feature `f` with NaN
    /// as missing and categorical codes as whole numbers.
    pub fn predict(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    condition,
                    missing_left,
                    left,
                    right,
                } => {
                    let v = value(*feature);
                    let go_left = if v.is_nan() {
                        *missing_left
                    } else {
                        match condition {
                            SplitCondition::Threshold { threshold } => v <= *threshold,
                            SplitCondition::Categories { left } => {
                                v >= 0.0 && v.fract() == 0.0 && left.binary_search(&(v as u32)).is_ok()
                            }
                        }
                    };
                    i = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// Largest feature index referenced by a split.
    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

/// Tree plus the bin-level rules needed to route training rows.
pub(crate) struct GrownTree {
    pub tree: RegressionTree,
    rules: Vec<Option<SplitCandidate>>,
}

impl GrownTree {
    pub fn predict_binned(&self, data: &BinnedData, row: usize) -> f64 {
        let mut i = 0;
        loop {
            match (&self.tree.nodes[i], &self.rules[i]) {
                (Node::Leaf { value }, _) => return *value,
                (Node::Split { left, right, .. }, Some(rule)) => {
                    let f = rule.feature;
                    let go_left = rule.goes_left(data.bins[f][row], data.binnings[f].missing_bin());
                    i = if go_left { *left } else { *right };
                }
                (Node::Split { .. }, None) => unreachable!("split without rule"),
            }
        }
    }
}

struct OpenLeaf {
    node: usize,
    rows: Vec<u32>,
    hist: Vec<HistBin>,
    stats: NodeStats,
    best: Option<SplitCandidate>,
}

fn condition_for(rule: &SplitRule, binning: &FeatureBinning) -> SplitCondition {
    match (rule, binning) {
        (SplitRule::Threshold { bin }, FeatureBinning::Numeric { thresholds }) => SplitCondition::Threshold {
            // the last value bin only separates values from missing
            threshold: thresholds.get(*bin as usize).copied().unwrap_or(f64::MAX),
        },
        (SplitRule::Categories { left }, _) => SplitCondition::Categories {
            left: left.iter().map(|&c| u32::from(c)).collect(),
        },
        (SplitRule::Threshold { .. }, FeatureBinning::Categorical { .. }) => {
            unreachable!("threshold rule on categorical feature")
        }
    }
}

/// Leaf-wise growth: the open leaf with the largest admissible gain is split
/// next (earliest-created leaf on ties) until `max_leaves` is reached.
/// Leaves hold the mean gradient of their rows.
pub(crate) fn grow_tree(
    data: &BinnedData,
    rows: Vec<u32>,
    gradients: &[f64],
    features: &[usize],
    max_leaves: usize,
    min_samples_leaf: usize,
) -> GrownTree {
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut rules: Vec<Option<SplitCandidate>> = vec![None];
    let mut hist = vec![HistBin::default(); data.histogram_len()];
    build_histogram(data, &rows, gradients, features, &mut hist);
    let stats = NodeStats::of(&rows, gradients);
    let best = best_split_from_histogram(data, &hist, features, stats, min_samples_leaf);
    let mut open = vec![OpenLeaf {
        node: 0,
        rows,
        hist,
        stats,
        best,
    }];
    let mut closed: Vec<OpenLeaf> = Vec::new();

    while open.len() + closed.len() < max_leaves {
        let mut pick: Option<usize> = None;
        for (i, leaf) in open.iter().enumerate() {
            if let Some(b) = &leaf.best {
                if pick.is_none_or(|p| b.gain > open[p].best.as_ref().map_or(f64::NEG_INFINITY, |x| x.gain)) {
                    pick = Some(i);
                }
            }
        }
        let Some(pick) = pick else { break };
        let parent = open.remove(pick);
        let split = parent.best.clone().expect("picked leaf has a split");
        let f = split.feature;
        let missing_bin = data.binnings[f].missing_bin();
        let col = &data.bins[f];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = parent
            .rows
            .iter()
            .partition(|&&r| split.goes_left(col[r as usize], missing_bin));

        let left_stats = NodeStats::of(&left_rows, gradients);
        let right_stats = NodeStats::of(&right_rows, gradients);
        let left_smaller = left_rows.len() <= right_rows.len();
        let mut small_hist = vec![HistBin::default(); data.histogram_len()];
        build_histogram(
            data,
            if left_smaller { &left_rows } else { &right_rows },
            gradients,
            features,
            &mut small_hist,
        );
        let large_hist = subtract_histogram(data, &parent.hist, &small_hist, features);
        let (left_hist, right_hist) = if left_smaller {
            (small_hist, large_hist)
        } else {
            (large_hist, small_hist)
        };

        let left_node = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        rules.push(None);
        rules.push(None);
        nodes[parent.node] = Node::Split {
            feature: f,
            condition: condition_for(&split.rule, &data.binnings[f]),
            missing_left: split.missing_left,
            left: left_node,
            right: left_node + 1,
        };
        rules[parent.node] = Some(split);

        for (node, rows, hist, stats) in [
            (left_node, left_rows, left_hist, left_stats),
            (left_node + 1, right_rows, right_hist, right_stats),
        ] {
            let best = best_split_from_histogram(data, &hist, features, stats, min_samples_leaf);
            let leaf = OpenLeaf {
                node,
                rows,
                hist,
                stats,
                best,
            };
            if leaf.best.is_some() {
                open.push(leaf);
            } else {
                closed.push(OpenLeaf {
                    hist: Vec::new(),
                    ..leaf
                });
            }
        }
    }

    for leaf in open.iter().chain(&closed) {
        let value = if leaf.stats.count == 0 {
            0.0
        } else {
            leaf.stats.sum / leaf.stats.count as f64
        };
        nodes[leaf.node] = Node::Leaf { value };
    }
    GrownTree {
        tree: RegressionTree { nodes },
        rules,
    }
}
