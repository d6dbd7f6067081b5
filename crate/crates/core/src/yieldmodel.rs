//! Binned yield-distribution prediction with a random forest classifier.
//!
//! Yields are discretized into `r` equal-width bins spanning the historical
//! minimum and maximum. A single forest is trained over six numeric
//! conditions (three weather, three soil) plus the variety as a categorical
//! feature. The distribution for a (conditions, variety) query is the share
//! of trees voting for each bin.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ExperimentRecord, VarietyId};

#[derive(Debug, Error, PartialEq)]
pub enum YieldError {
    #[error("degenerate yield range: need at least two distinct finite values")]
    DegenerateRange,
    #[error("bin count must be >= 2, got {0}")]
    TooFewBins(usize),
    #[error("unknown variety {0}")]
    UnknownVariety(VarietyId),
    #[error("no training records")]
    Empty,
    #[error("non-finite feature value")]
    NonFinite,
    #[error("invalid forest config: {0}")]
    Config(String),
    #[error("invalid forest document: {0}")]
    Document(String),
}

/// Equal-width yield bins over the historical range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinScheme {
    pub lo: f64,
    pub hi: f64,
    /// `r + 1` ascending boundaries.
    pub edges: Vec<f64>,
}

impl BinScheme {
    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    /// Left-closed bins; values at or above `hi` land in the last bin.
    pub fn bin_of(&self, value: f64) -> usize {
        let raw = ((value - self.lo) / self.width()).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.bins() - 1)
        }
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn expected_value(&self, dist: &YieldDistribution) -> f64 {
        self.midpoints().iter().zip(&dist.probs).map(|(m, p)| m * p).sum()
    }

    pub fn variance(&self, dist: &YieldDistribution) -> f64 {
        let mean = self.expected_value(dist);
        self.midpoints()
            .iter()
            .zip(&dist.probs)
            .map(|(m, p)| p * (m - mean).powi(2))
            .sum()
    }
}

pub fn fit_bins(yields: &[f64], r: usize) -> Result<BinScheme, YieldError> {
    if r < 2 {
        return Err(YieldError::TooFewBins(r));
    }
    if yields.iter().any(|y| !y.is_finite()) {
        return Err(YieldError::NonFinite);
    }
    let lo = yields.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = yields.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(YieldError::DegenerateRange);
    }
    let width = (hi - lo) / r as f64;
    let mut edges: Vec<f64> = (0..=r).map(|b| lo + width * b as f64).collect();
    edges[r] = hi;
    Ok(BinScheme { lo, hi, edges })
}

/// Probability over the bins of a [`BinScheme`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct YieldDistribution {
    pub probs: Vec<f64>,
}

impl YieldDistribution {
    /// Normalizes raw vote counts by their total.
    pub fn from_counts(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Self { probs }
    }

    pub fn is_valid(&self) -> bool {
        let sum: f64 = self.probs.iter().sum();
        (sum - 1.0).abs() <= 1e-9 && self.probs.iter().all(|p| (0.0..=1.0).contains(p))
    }
}

pub const NUMERIC_FEATURES: usize = 6;
/// Index of the categorical variety feature, after the numeric ones.
pub const VARIETY_FEATURE: usize = NUMERIC_FEATURES;
const N_FEATURES: usize = NUMERIC_FEATURES + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        label: usize,
    },
    /// `x[feature] <= threshold` goes left.
    Numeric {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Varieties in `categories` (sorted) go left.
    Category {
        categories: Vec<usize>,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, numeric: &[f64; NUMERIC_FEATURES], category: usize) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { label } => return *label,
                Node::Numeric {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if numeric[*feature] <= *threshold { *left } else { *right },
                Node::Category {
                    categories,
                    left,
                    right,
                } => at = if categories.binary_search(&category).is_ok() { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub seed: u64,
    pub bootstrap: bool,
    /// Candidate features per split; defaults to floor(sqrt(7)).
    pub max_features: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            seed: 23,
            bootstrap: true,
            max_features: None,
            min_leaf: 2,
            max_depth: None,
        }
    }
}

impl ForestConfig {
    fn candidates(&self) -> usize {
        self.max_features
            .unwrap_or_else(|| (N_FEATURES as f64).sqrt().floor() as usize)
            .clamp(1, N_FEATURES)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_classes: usize,
    /// Known varieties; the category index of a variety is its position here.
    pub varieties: Vec<VarietyId>,
    pub trees: Vec<Tree>,
    pub oob_accuracy: Option<f64>,
}

struct Sample {
    numeric: [f64; NUMERIC_FEATURES],
    category: usize,
    label: usize,
}

impl Forest {
    pub fn from_trees(n_classes: usize, varieties: Vec<VarietyId>, trees: Vec<Tree>) -> Self {
        Self {
            n_classes,
            varieties,
            trees,
            oob_accuracy: None,
        }
    }

    pub fn category_of(&self, variety: &VarietyId) -> Result<usize, YieldError> {
        self.varieties
            .binary_search(variety)
            .map_err(|_| YieldError::UnknownVariety(variety.clone()))
    }

    pub fn votes(&self, numeric: &[f64; NUMERIC_FEATURES], category: usize) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for tree in &self.trees {
            counts[tree.predict(numeric, category)] += 1;
        }
        counts
    }

    /// Share of trees voting for each bin.
    pub fn predict_distribution(
        &self,
        weather: [f64; 3],
        soil: [f64; 3],
        variety: &VarietyId,
    ) -> Result<YieldDistribution, YieldError> {
        let numeric = [weather[0], weather[1], weather[2], soil[0], soil[1], soil[2]];
        if numeric.iter().any(|v| !v.is_finite()) {
            return Err(YieldError::NonFinite);
        }
        let category = self.category_of(variety)?;
        Ok(YieldDistribution::from_counts(&self.votes(&numeric, category)))
    }
}

fn majority(counts: &[usize]) -> usize {
    // first maximum wins, so ties go to the smaller label
    counts
        .iter()
        .enumerate()
        .fold((0, 0), |(best, best_count), (label, &c)| {
            if c > best_count {
                (label, c)
            } else {
                (best, best_count)
            }
        })
        .0
}

/// Σ c² / n for one side of a split; larger means purer.
fn purity(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n as f64
}

enum SplitRule {
    Numeric { feature: usize, threshold: f64 },
    Category(Vec<usize>),
}

struct Split {
    rule: SplitRule,
    score: f64,
}

struct TreeBuilder<'a> {
    samples: &'a [Sample],
    n_classes: usize,
    n_categories: usize,
    config: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn class_counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &i in idx {
            counts[self.samples[i].label] += 1;
        }
        counts
    }

    fn best_numeric(&self, idx: &mut [usize], feature: usize, total: &[usize]) -> Option<Split> {
        let s = self.samples;
        idx.sort_by(|&a, &b| s[a].numeric[feature].total_cmp(&s[b].numeric[feature]));
        let n = idx.len();
        let min_leaf = self.config.min_leaf.max(1);
        let mut left = vec![0usize; self.n_classes];
        let mut left_sq = 0.0;
        let mut right_sq: f64 = total.iter().map(|&c| (c * c) as f64).sum();
        let mut right = total.to_vec();
        let mut best: Option<Split> = None;
        for pos in 0..n - 1 {
            let label = s[idx[pos]].label;
            left_sq += (2 * left[label] + 1) as f64;
            left[label] += 1;
            right_sq -= (2 * right[label] - 1) as f64;
            right[label] -= 1;
            let n_left = pos + 1;
            let here = s[idx[pos]].numeric[feature];
            let next = s[idx[pos + 1]].numeric[feature];
            if here == next || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let score = left_sq / n_left as f64 + right_sq / (n - n_left) as f64;
            if best.as_ref().is_none_or(|b| score > b.score) {
                let mid = 0.5 * (here + next);
                let threshold = if mid < next { mid } else { here };
                best = Some(Split {
                    rule: SplitRule::Numeric { feature, threshold },
                    score,
                });
            }
        }
        best
    }

    /// Categories ordered by mean bin label, then the best prefix of that
    /// order becomes the left set. Bins are ordinal, so the ordering is
    /// meaningful.
    fn best_category(&self, idx: &[usize], total: &[usize]) -> Option<Split> {
        let n = idx.len();
        let min_leaf = self.config.min_leaf.max(1);
        let mut per_cat = vec![vec![0usize; self.n_classes]; self.n_categories];
        let mut sizes = vec![0usize; self.n_categories];
        let mut label_sums = vec![0usize; self.n_categories];
        for &i in idx {
            let s = &self.samples[i];
            per_cat[s.category][s.label] += 1;
            sizes[s.category] += 1;
            label_sums[s.category] += s.label;
        }
        let mut present: Vec<usize> = (0..self.n_categories).filter(|&c| sizes[c] > 0).collect();
        if present.len() < 2 {
            return None;
        }
        present.sort_by(|&a, &b| {
            let ma = label_sums[a] as f64 / sizes[a] as f64;
            let mb = label_sums[b] as f64 / sizes[b] as f64;
            ma.total_cmp(&mb).then(a.cmp(&b))
        });
        let mut left = vec![0usize; self.n_classes];
        let mut n_left = 0;
        let mut best: Option<Split> = None;
        for (pos, &cat) in present[..present.len() - 1].iter().enumerate() {
            for (l, c) in left.iter_mut().zip(&per_cat[cat]) {
                *l += c;
            }
            n_left += sizes[cat];
            if n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let right: Vec<usize> = total.iter().zip(&left).map(|(t, c)| t - c).collect();
            let score = purity(&left, n_left) + purity(&right, n - n_left);
            if best.as_ref().is_none_or(|b| score > b.score) {
                let mut set = present[..=pos].to_vec();
                set.sort_unstable();
                best = Some(Split {
                    rule: SplitRule::Category(set),
                    score,
                });
            }
        }
        best
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let counts = self.class_counts(idx);
        let node_id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            label: majority(&counts),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let too_small = idx.len() < 2 * self.config.min_leaf.max(1);
        let too_deep = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || too_small || too_deep {
            return node_id;
        }

        let mut features: Vec<usize> = (0..N_FEATURES).collect();
        features.shuffle(&mut self.rng);
        let wanted = self.config.candidates();
        let mut evaluated = 0;
        let mut best: Option<Split> = None;
        for feature in features {
            if evaluated >= wanted {
                break;
            }
            let candidate = if feature == VARIETY_FEATURE {
                self.best_category(idx, &counts)
            } else {
                self.best_numeric(idx, feature, &counts)
            };
            // constant features do not count towards the candidate budget
            if let Some(split) = candidate {
                evaluated += 1;
                if best.as_ref().is_none_or(|b| split.score > b.score) {
                    best = Some(split);
                }
            }
        }
        let Some(best) = best else {
            return node_id;
        };

        let s = self.samples;
        let goes_left = |i: usize| match best.rule {
            SplitRule::Numeric { feature, threshold } => s[i].numeric[feature] <= threshold,
            SplitRule::Category(ref set) => set.binary_search(&s[i].category).is_ok(),
        };
        let mut left_idx: Vec<usize> = idx.iter().copied().filter(|&i| goes_left(i)).collect();
        let mut right_idx: Vec<usize> = idx.iter().copied().filter(|&i| !goes_left(i)).collect();
        let left = self.build(&mut left_idx, depth + 1);
        let right = self.build(&mut right_idx, depth + 1);
        self.nodes[node_id] = match best.rule {
            SplitRule::Numeric { feature, threshold } => Node::Numeric {
                feature,
                threshold,
                left,
                right,
            },
            SplitRule::Category(categories) => Node::Category { categories, left, right },
        };
        node_id
    }
}

fn tree_seed(master: u64, tree: usize) -> u64 {
    // splitmix64 step keeps per-tree streams independent of scheduling
    let mut z = master.wrapping_add((tree as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains a forest on experiment records with targets `scheme.bin_of(yield)`.
pub fn train_forest(
    records: &[ExperimentRecord],
    scheme: &BinScheme,
    config: &ForestConfig,
) -> Result<Forest, YieldError> {
    if records.is_empty() {
        return Err(YieldError::Empty);
    }
    if config.n_trees == 0 {
        return Err(YieldError::Config("n_trees must be >= 1".into()));
    }
    let mut varieties: Vec<VarietyId> = records.iter().map(|r| r.variety.clone()).collect();
    varieties.sort();
    varieties.dedup();
    let samples: Vec<Sample> = records
        .iter()
        .map(|r| {
            let numeric = r.conditions();
            if numeric.iter().any(|v| !v.is_finite()) || !r.observed_yield.is_finite() {
                return Err(YieldError::NonFinite);
            }
            Ok(Sample {
                numeric,
                category: varieties.binary_search(&r.variety).expect("variety collected above"),
                label: scheme.bin_of(r.observed_yield),
            })
        })
        .collect::<Result<_, _>>()?;
    let n = samples.len();
    let n_classes = scheme.bins();

    let grown: Vec<(Tree, Vec<bool>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(config.seed, t));
            let mut in_bag = vec![!config.bootstrap; n];
            let mut idx: Vec<usize> = if config.bootstrap {
                (0..n)
                    .map(|_| {
                        let i = rng.random_range(0..n);
                        in_bag[i] = true;
                        i
                    })
                    .collect()
            } else {
                (0..n).collect()
            };
            let mut builder = TreeBuilder {
                samples: &samples,
                n_classes,
                n_categories: varieties.len(),
                config,
                rng,
                nodes: Vec::new(),
            };
            builder.build(&mut idx, 0);
            (Tree { nodes: builder.nodes }, in_bag)
        })
        .collect();

    let mut oob_votes = vec![vec![0usize; n_classes]; n];
    for (tree, in_bag) in &grown {
        for (i, s) in samples.iter().enumerate() {
            if !in_bag[i] {
                oob_votes[i][tree.predict(&s.numeric, s.category)] += 1;
            }
        }
    }
    let (mut correct, mut scored) = (0usize, 0usize);
    for (votes, s) in oob_votes.iter().zip(&samples) {
        if votes.iter().any(|&v| v > 0) {
            scored += 1;
            if majority(votes) == s.label {
                correct += 1;
            }
        }
    }

    Ok(Forest {
        n_classes,
        varieties,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        oob_accuracy: (scored > 0).then(|| correct as f64 / scored as f64),
    })
}

pub const FOREST_FORMAT: &str = "seedplan.yield_forest";
pub const FOREST_VERSION: u32 = 1;

/// Bin scheme plus forest, the persisted yield model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldModel {
    pub format: String,
    pub version: u32,
    pub scheme: BinScheme,
    pub forest: Forest,
}

impl YieldModel {
    pub fn new(scheme: BinScheme, forest: Forest) -> Self {
        Self {
            format: FOREST_FORMAT.into(),
            version: FOREST_VERSION,
            scheme,
            forest,
        }
    }

    pub fn check(&self) -> Result<(), YieldError> {
        if self.format != FOREST_FORMAT || self.version != FOREST_VERSION {
            return Err(YieldError::Document(format!(
                "expected {FOREST_FORMAT} v{FOREST_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        if self.forest.trees.is_empty() {
            return Err(YieldError::Document("forest has no trees".into()));
        }
        if self.forest.n_classes != self.scheme.bins() {
            return Err(YieldError::Document("class count does not match bins".into()));
        }
        for tree in &self.forest.trees {
            for node in &tree.nodes {
                let n = tree.nodes.len();
                let ok = match node {
                    Node::Leaf { label } => *label < self.forest.n_classes,
                    Node::Numeric {
                        feature, left, right, ..
                    } => *feature < NUMERIC_FEATURES && *left < n && *right < n,
                    Node::Category {
                        categories,
                        left,
                        right,
                    } => {
                        categories.windows(2).all(|w| w[0] < w[1])
                            && categories.iter().all(|&c| c < self.forest.varieties.len())
                            && *left < n
                            && *right < n
                    }
                };
                if !ok {
                    return Err(YieldError::Document("malformed node".into()));
                }
            }
        }
        Ok(())
    }

    /// Distribution-mean yield for a record's conditions and variety.
    pub fn predict_yield(&self, record: &ExperimentRecord) -> Result<f64, YieldError> {
        let dist = self
            .forest
            .predict_distribution(record.weather, record.soil, &record.variety)?;
        Ok(self.scheme.expected_value(&dist))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bin_edges() {
        let yields: Vec<f64> = (0..=10).map(f64::from).collect();
        assert_eq!(fit_bins(&yields, 2).unwrap().edges, vec![0.0, 5.0, 10.0]);
        assert_eq!(
            fit_bins(&[10.0, 20.0, 30.0], 4).unwrap().edges,
            vec![10.0, 15.0, 20.0, 25.0, 30.0]
        );
        assert_eq!(fit_bins(&[7.0, 7.0, 7.0], 3).unwrap_err(), YieldError::DegenerateRange);
        assert_eq!(fit_bins(&[1.0, 2.0], 1).unwrap_err(), YieldError::TooFewBins(1));
    }

    #[test]
    fn bin_assignment() {
        let scheme = fit_bins(&[0.0, 10.0], 2).unwrap();
        assert_eq!(scheme.bin_of(5.0), 1);
        assert_eq!(scheme.bin_of(0.0), 0);
        assert_eq!(scheme.bin_of(10.0), 1);
        assert_eq!(scheme.bin_of(-3.0), 0);
        assert_eq!(scheme.bin_of(42.0), 1);
        assert_eq!(scheme.bin_of(4.999), 0);
    }

    #[test]
    fn moments_over_midpoints() {
        let scheme = fit_bins(&[0.0, 10.0], 2).unwrap();
        let d = YieldDistribution { probs: vec![0.5, 0.5] };
        assert_eq!(scheme.midpoints(), vec![2.5, 7.5]);
        assert_eq!(scheme.expected_value(&d), 5.0);
        assert_eq!(scheme.variance(&d), 6.25);

        let scheme = fit_bins(&[0.0, 20.0], 4).unwrap();
        let one_hot = YieldDistribution {
            probs: vec![0.0, 0.0, 1.0, 0.0],
        };
        assert_eq!(scheme.expected_value(&one_hot), 12.5);
        assert_eq!(scheme.variance(&one_hot), 0.0);
        let uniform = YieldDistribution { probs: vec![0.25; 4] };
        assert_eq!(scheme.expected_value(&uniform), 10.0);
    }

    #[test]
    fn counts_to_probabilities() {
        let d = YieldDistribution::from_counts(&[30, 70]);
        assert_eq!(d.probs, vec![0.3, 0.7]);
        assert!(d.is_valid());
    }

    fn record(x: f64, variety: &str, y: f64) -> ExperimentRecord {
        ExperimentRecord {
            sub_region: "R".into(),
            year: 2010,
            variety: VarietyId::new(variety).unwrap(),
            weather: [x, 0.5 * x, 1.0],
            soil: [6.0, 2.0, 10.0],
            observed_yield: y,
        }
    }

    fn stump(label_left: usize, label_right: usize) -> Tree {
        Tree {
            nodes: vec![
                Node::Numeric {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { label: label_left },
                Node::Leaf { label: label_right },
            ],
        }
    }

    #[test]
    fn identical_stumps_give_one_hot() {
        let v = VarietyId::new("V1").unwrap();
        let forest = Forest::from_trees(3, vec![v.clone()], vec![stump(0, 2); 7]);
        let d = forest.predict_distribution([0.9, 0.0, 0.0], [0.0; 3], &v).unwrap();
        assert_eq!(d.probs, vec![0.0, 0.0, 1.0]);
        let d = forest.predict_distribution([0.1, 0.0, 0.0], [0.0; 3], &v).unwrap();
        assert_eq!(d.probs, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn mixed_votes() {
        let v = VarietyId::new("V1").unwrap();
        let mut trees = vec![stump(0, 0); 30];
        trees.extend(vec![stump(1, 1); 70]);
        let forest = Forest::from_trees(2, vec![v.clone()], trees);
        let d = forest.predict_distribution([0.0; 3], [0.0; 3], &v).unwrap();
        assert_eq!(d.probs, vec![0.3, 0.7]);
    }

    #[test]
    fn unknown_variety_errors() {
        let forest = Forest::from_trees(2, vec![VarietyId::new("V1").unwrap()], vec![stump(0, 1)]);
        let other = VarietyId::new("V2").unwrap();
        assert_eq!(
            forest.predict_distribution([0.0; 3], [0.0; 3], &other).unwrap_err(),
            YieldError::UnknownVariety(other)
        );
    }

    fn separable() -> Vec<ExperimentRecord> {
        (0..200)
            .map(|i| {
                let x = i as f64 / 200.0;
                record(x, if i % 2 == 0 { "V1" } else { "V2" }, if x < 0.5 { 10.0 } else { 90.0 })
            })
            .collect()
    }

    #[test]
    fn separable_data_is_learned() {
        let recs = separable();
        let scheme = fit_bins(&[0.0, 100.0], 2).unwrap();
        let forest = train_forest(&recs, &scheme, &ForestConfig::default()).unwrap();
        assert!(forest.oob_accuracy.unwrap() > 0.9, "{:?}", forest.oob_accuracy);
    }

    #[test]
    fn single_tree_without_bootstrap_is_a_decision_tree() {
        let recs = separable();
        let scheme = fit_bins(&[0.0, 100.0], 2).unwrap();
        let config = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: Some(7),
            ..ForestConfig::default()
        };
        let forest = train_forest(&recs, &scheme, &config).unwrap();
        assert_eq!(forest.oob_accuracy, None);
        // a full-feature CART tree fits this data exactly with one split
        let tree = &forest.trees[0];
        assert!(matches!(tree.nodes[0], Node::Numeric { feature: 0 | 1, .. }));
        for r in &recs {
            let d = forest.predict_distribution(r.weather, r.soil, &r.variety).unwrap();
            let mut expect = vec![0.0; 2];
            expect[scheme.bin_of(r.observed_yield)] = 1.0;
            assert_eq!(d.probs, expect);
        }
    }

    #[test]
    fn same_seed_same_forest() {
        let recs = separable();
        let scheme = fit_bins(&[0.0, 100.0], 4).unwrap();
        let a = train_forest(&recs, &scheme, &ForestConfig::default()).unwrap();
        let b = train_forest(&recs, &scheme, &ForestConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn category_split_is_used() {
        // yield depends only on variety
        let recs: Vec<ExperimentRecord> = (0..60)
            .map(|i| record(0.3, ["A", "B", "C"][i % 3], [5.0, 50.0, 95.0][i % 3]))
            .collect();
        let scheme = fit_bins(&[0.0, 100.0], 3).unwrap();
        let config = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let forest = train_forest(&recs, &scheme, &config).unwrap();
        for (v, bin) in [("A", 0), ("B", 1), ("C", 2)] {
            let d = forest
                .predict_distribution([0.3, 0.15, 1.0], [6.0, 2.0, 10.0], &VarietyId::new(v).unwrap())
                .unwrap();
            assert_eq!(d.probs[bin], 1.0, "{v}");
        }
    }

    #[test]
    fn document_check() {
        let recs = separable();
        let scheme = fit_bins(&[0.0, 100.0], 2).unwrap();
        let forest = train_forest(&recs, &scheme, &ForestConfig { n_trees: 3, ..Default::default() }).unwrap();
        let model = YieldModel::new(scheme, forest);
        model.check().unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: YieldModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
        let mut bad = model.clone();
        bad.forest.trees[0].nodes[0] = Node::Leaf { label: 9 };
        assert!(bad.check().is_err());
    }

    proptest! {
        #[test]
        fn variance_non_negative_and_zero_iff_one_hot(
            raw in prop::collection::vec(0u32..20, 5),
        ) {
            prop_assume!(raw.iter().any(|&c| c > 0));
            let counts: Vec<usize> = raw.iter().map(|&c| c as usize).collect();
            let scheme = fit_bins(&[0.0, 50.0], 5).unwrap();
            let d = YieldDistribution::from_counts(&counts);
            prop_assert!(d.is_valid());
            let var = scheme.variance(&d);
            prop_assert!(var >= 0.0);
            let one_hot = counts.iter().filter(|&&c| c > 0).count() == 1;
            prop_assert_eq!(var == 0.0, one_hot);
        }

        #[test]
        fn forest_distributions_sum_to_one(x in -1.0f64..2.0, v in 0usize..2) {
            let recs = separable();
            let scheme = fit_bins(&[0.0, 100.0], 3).unwrap();
            let forest = train_forest(&recs, &scheme, &ForestConfig { n_trees: 9, ..Default::default() }).unwrap();
            let variety = VarietyId::new(["V1", "V2"][v]).unwrap();
            let d = forest.predict_distribution([x, 0.5 * x, 1.0], [6.0, 2.0, 10.0], &variety).unwrap();
            prop_assert!(d.is_valid());
            prop_assert_eq!(&d, &forest.predict_distribution([x, 0.5 * x, 1.0], [6.0, 2.0, 10.0], &variety).unwrap());
        }
    }
}
