//! Synthetic hierarchical Gaussian-mixture data.
//!
//! Leaf centers are built top-down: each coarse node draws a center around
//! the origin with scale σ1, each mid node adds an offset with scale σ2 and
//! each leaf adds one with scale σ3. Sibling offsets are mutually orthogonal
//! by default, so every pair of siblings is the same distance apart. Samples are the leaf center plus
//! isotropic noise. Holding out a coarse node removes a whole cluster of
//! classes, while holding out a leaf removes a class that sits about σ3 from
//! its trained sibling, so deeper holdouts are harder to detect.
//!
//! By default the coarse centers lie on a line and the held-out coarse node
//! is an interior one. With Gaussian coarse centers in 8 dimensions a
//! held-out coarse cluster almost always lies outside the trained data,
//! where a rectifier network extrapolates with high confidence; the line
//! layout keeps it between trained clusters instead. The default mid and
//! leaf holdouts sit in the two end groups of the line, away from the
//! held-out coarse node.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{
    compile_split, emit_manifest, HierarchyError, Holdout, HoldoutLevel, LabelHierarchy, NodeSpec, SplitError,
    SplitManifest,
};
use crate::metrics::Membership;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Split(#[from] SplitError),
}

fn default_branching() -> Vec<usize> {
    vec![4, 3, 2]
}
fn default_dims() -> usize {
    8
}
fn default_level_scales() -> Vec<f64> {
    vec![2.0, 0.7, 0.3]
}
fn default_noise() -> f64 {
    0.25
}
fn default_train_per_leaf() -> usize {
    200
}
fn default_test_per_leaf() -> usize {
    60
}
fn default_holdouts() -> Vec<Holdout> {
    vec![
        Holdout::new("c2", HoldoutLevel::L1),
        Holdout::new("c0/m1", HoldoutLevel::L2),
        Holdout::new("c3/m1/f1", HoldoutLevel::L3),
    ]
}
fn default_true_ood_offset() -> f64 {
    15.0
}
fn default_true_ood_count() -> usize {
    240
}
fn default_outlier_count() -> usize {
    3000
}
fn default_outlier_radius() -> [f64; 2] {
    [10.0, 20.0]
}

/// Placement of the coarse (depth-1) centers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseLayout {
    /// Evenly spaced along the first axis, `σ1·√d` apart, centered on the
    /// origin. An interior coarse node then sits between trained neighbours.
    #[default]
    Line,
    /// Gaussian like every other level.
    Gaussian,
}

/// Placement of mid and fine centers relative to their parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiblingLayout {
    /// Independent isotropic Gaussian offsets with the level's scale.
    Gaussian,
    /// Mutually orthogonal offsets of length `σ·√d` in a random frame, so all
    /// siblings are equidistant and only the orientation varies with the seed.
    #[default]
    Orthogonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Children per node at each depth, coarse first.
    #[serde(default = "default_branching")]
    pub branching: Vec<usize>,
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default)]
    pub coarse_layout: CoarseLayout,
    #[serde(default)]
    pub sibling_layout: SiblingLayout,
    /// Center dispersion per depth; must be strictly decreasing.
    #[serde(default = "default_level_scales")]
    pub level_scales: Vec<f64>,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_train_per_leaf")]
    pub train_per_leaf: usize,
    #[serde(default = "default_test_per_leaf")]
    pub test_per_leaf: usize,
    /// Held-out nodes, by generated id (`c0`, `c0/m1`, `c0/m1/f0`, ...).
    #[serde(default = "default_holdouts")]
    pub holdouts: Vec<Holdout>,
    /// Distance of the true-OOD cluster from the mean of all leaf centers.
    #[serde(default = "default_true_ood_offset")]
    pub true_ood_offset: f64,
    #[serde(default = "default_true_ood_count")]
    pub true_ood_count: usize,
    /// Size of the auxiliary outlier pool used by outlier-exposure training.
    #[serde(default = "default_outlier_count")]
    pub outlier_count: usize,
    /// Outliers have a uniform direction around the leaf-center mean and a
    /// radius uniform in `[inner, outer]`.
    #[serde(default = "default_outlier_radius")]
    pub outlier_radius: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            branching: default_branching(),
            dims: default_dims(),
            coarse_layout: CoarseLayout::default(),
            sibling_layout: SiblingLayout::default(),
            level_scales: default_level_scales(),
            noise_sigma: default_noise(),
            train_per_leaf: default_train_per_leaf(),
            test_per_leaf: default_test_per_leaf(),
            holdouts: default_holdouts(),
            true_ood_offset: default_true_ood_offset(),
            true_ood_count: default_true_ood_count(),
            outlier_count: default_outlier_count(),
            outlier_radius: default_outlier_radius(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.branching.is_empty() || self.branching.iter().any(|&b| b < 2) {
            return bad(format!("branching must be >= 2 at every level, got {:?}", self.branching));
        }
        if self.level_scales.len() != self.branching.len() {
            return bad(format!(
                "{} level scales for {} levels",
                self.level_scales.len(),
                self.branching.len()
            ));
        }
        // σ3 = 0 is allowed: it collapses fine siblings onto one center
        let last = self.level_scales.len() - 1;
        for (i, w) in self.level_scales.windows(2).enumerate() {
            if !(w[0] > w[1]) {
                return bad(format!("level scales must decrease, got {:?} at level {}", w, i + 2));
            }
        }
        if !(self.level_scales[0] > 0.0) || !(self.level_scales[last] >= 0.0) {
            return bad("level scales must be positive".into());
        }
        if self.dims == 0 || self.train_per_leaf == 0 || self.test_per_leaf == 0 {
            return bad("dims and per-leaf sample counts must be positive".into());
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("true_ood_offset", self.true_ood_offset),
            ("outlier_radius", self.outlier_radius[0]),
            ("outlier_radius", self.outlier_radius[1]),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.sibling_layout == SiblingLayout::Orthogonal && self.branching[1..].iter().any(|&b| b > self.dims) {
            return bad(format!(
                "orthogonal siblings need dims >= branching, got {} dims for {:?}",
                self.dims, self.branching
            ));
        }
        if self.outlier_radius[0] > self.outlier_radius[1] {
            return bad(format!("outlier radius range {:?} is reversed", self.outlier_radius));
        }
        Ok(())
    }
}

/// One feature vector with its evaluation tags. Training samples are ID with
/// a class; outlier-pool samples carry neither.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub membership: Option<Membership>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_class: Option<usize>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub hierarchy: LabelHierarchy,
    pub manifest: SplitManifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub outliers: Vec<Sample>,
    /// Center of every leaf, keyed by leaf id.
    pub leaf_centers: BTreeMap<String, Vec<f64>>,
}

impl SynthData {
    pub fn test_by_membership(&self) -> BTreeMap<Membership, Vec<&Sample>> {
        let mut out: BTreeMap<Membership, Vec<&Sample>> = BTreeMap::new();
        for s in &self.test {
            if let Some(m) = s.membership {
                out.entry(m).or_default().push(s);
            }
        }
        out
    }
}

fn node_id(path: &[usize]) -> String {
    const PREFIX: [char; 3] = ['c', 'm', 'f'];
    path.iter()
        .enumerate()
        .map(|(depth, i)| {
            let p = PREFIX.get(depth).copied().unwrap_or('n');
            format!("{p}{i}")
        })
        .collect::<Vec<_>>()
        .join("/")
}

/// The synthetic taxonomy alone: root `synth`, nodes named by their path.
pub fn synthetic_hierarchy(branching: &[usize]) -> Result<LabelHierarchy, HierarchyError> {
    let mut specs = vec![NodeSpec {
        id: "synth".into(),
        parent: None,
        name: "synthetic".into(),
    }];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for &b in branching {
        let mut next = Vec::with_capacity(frontier.len() * b);
        for path in &frontier {
            for i in 0..b {
                let mut child = path.clone();
                child.push(i);
                let id = node_id(&child);
                specs.push(NodeSpec {
                    id: id.clone(),
                    parent: Some(if path.is_empty() { "synth".into() } else { node_id(path) }),
                    name: id,
                });
                next.push(child);
            }
        }
        frontier = next;
    }
    LabelHierarchy::from_nodes("synthetic", specs)
}

fn gaussian(rng: &mut ChaCha8Rng, dims: usize, scale: f64) -> Vec<f64> {
    (0..dims)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn unit_vector(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dims, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `count` orthonormal vectors (Gram-Schmidt on Gaussian draws), each
/// scaled to `length`.
fn orthogonal_offsets(rng: &mut ChaCha8Rng, dims: usize, count: usize, length: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dims, 1.0);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * length).collect())
        .collect()
}

/// Draw centers, samples, the true-OOD cluster and the outlier pool. All
/// randomness comes from one stream seeded by `cfg.seed`, consumed in a
/// fixed order, so a seed always yields the same data.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthData, SynthError> {
    cfg.validate()?;
    let hierarchy = synthetic_hierarchy(&cfg.branching)?;
    let plan = compile_split(&hierarchy, &cfg.holdouts)?;
    let manifest = emit_manifest(&plan);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // centers, top-down in node order
    let mut centers: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    centers.insert("synth".into(), vec![0.0; cfg.dims]);
    // orthogonal frames, drawn when a parent's first child is reached
    let mut frames: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for node in hierarchy.nodes().iter().filter(|n| n.depth > 0) {
        let parent_idx = node.parent.expect("non-root");
        let parent_node = &hierarchy.nodes()[parent_idx];
        let parent = &parent_node.id;
        let scale = cfg.level_scales[node.depth - 1];
        let sibling = parent_node
            .children
            .iter()
            .position(|&c| hierarchy.nodes()[c].id == node.id)
            .expect("listed child");
        let length = scale * (cfg.dims as f64).sqrt();
        let offset = match (node.depth, cfg.coarse_layout, cfg.sibling_layout) {
            (1, CoarseLayout::Line, _) => {
                let mut v = vec![0.0; cfg.dims];
                v[0] = length * (sibling as f64 - (cfg.branching[0] as f64 - 1.0) / 2.0);
                v
            }
            (1, CoarseLayout::Gaussian, _) | (_, _, SiblingLayout::Gaussian) => gaussian(&mut rng, cfg.dims, scale),
            (_, _, SiblingLayout::Orthogonal) => {
                let count = parent_node.children.len();
                frames
                    .entry(parent_idx)
                    .or_insert_with(|| orthogonal_offsets(&mut rng, cfg.dims, count, length))[sibling]
                    .clone()
            }
        };
        let c = add(&centers[parent], &offset);
        centers.insert(node.id.clone(), c);
    }
    let leaf_centers: BTreeMap<String, Vec<f64>> = hierarchy
        .leaves()
        .map(|l| (l.id.clone(), centers[&l.id].clone()))
        .collect();

    let noise = |rng: &mut ChaCha8Rng, c: &[f64]| add(c, &gaussian(rng, cfg.dims, cfg.noise_sigma));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (leaf, center) in &leaf_centers {
        let class = manifest.class_index(leaf);
        let membership = match plan.level_of(leaf) {
            Some(level) => Membership::from_level(level),
            None => Membership::Id,
        };
        if let Some(c) = class {
            for i in 0..cfg.train_per_leaf {
                train.push(Sample {
                    record_id: format!("train/{leaf}/{i}"),
                    membership: Some(Membership::Id),
                    true_class: Some(c),
                    features: noise(&mut rng, center),
                });
            }
        }
        for i in 0..cfg.test_per_leaf {
            test.push(Sample {
                record_id: format!("test/{leaf}/{i}"),
                membership: Some(membership),
                true_class: class,
                features: noise(&mut rng, center),
            });
        }
    }

    let mean: Vec<f64> = {
        let n = leaf_centers.len() as f64;
        let mut m = vec![0.0; cfg.dims];
        for c in leaf_centers.values() {
            for (a, b) in m.iter_mut().zip(c) {
                *a += b / n;
            }
        }
        m
    };
    let dir = unit_vector(&mut rng, cfg.dims);
    let far: Vec<f64> = mean.iter().zip(&dir).map(|(m, d)| m + cfg.true_ood_offset * d).collect();
    // the far cluster is at least as wide as a single leaf class
    let spread = Normal::new(0.0, cfg.level_scales.last().copied().unwrap_or(1.0).max(cfg.noise_sigma))
        .expect("finite spread");
    for i in 0..cfg.true_ood_count {
        let x: Vec<f64> = far.iter().map(|c| c + spread.sample(&mut rng)).collect();
        test.push(Sample {
            record_id: format!("test/true-ood/{i}"),
            membership: Some(Membership::TrueOod),
            true_class: None,
            features: x,
        });
    }

    let mut outliers = Vec::with_capacity(cfg.outlier_count);
    for i in 0..cfg.outlier_count {
        let d = unit_vector(&mut rng, cfg.dims);
        let r = rng.random_range(cfg.outlier_radius[0]..=cfg.outlier_radius[1]);
        outliers.push(Sample {
            record_id: format!("outlier/{i}"),
            membership: None,
            true_class: None,
            features: mean.iter().zip(&d).map(|(m, u)| m + r * u).collect(),
        });
    }

    Ok(SynthData {
        hierarchy,
        manifest,
        train,
        test,
        outliers,
        leaf_centers,
    })
}

/// Stack feature vectors into a row-per-sample matrix.
pub fn feature_matrix<'a>(samples: impl IntoIterator<Item = &'a Sample>, dims: usize) -> Array2<f64> {
    let flat: Vec<f64> = samples.into_iter().flat_map(|s| s.features.iter().copied()).collect();
    let rows = flat.len() / dims.max(1);
    Array2::from_shape_vec((rows, dims), flat).expect("uniform feature length")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_shape() {
        let data = generate_synthetic(&SynthConfig::default()).unwrap();
        assert_eq!(data.hierarchy.level_counts(), vec![4, 12, 24]);
        // c2 holds 6 leaves, c0/m1 two, plus one single leaf
        assert_eq!(data.manifest.num_classes(), 24 - 6 - 2 - 1);
        assert_eq!(data.train.len(), 15 * 200);
        let by = data.test_by_membership();
        assert_eq!(by[&Membership::Id].len(), 15 * 60);
        assert_eq!(by[&Membership::OodL1].len(), 6 * 60);
        assert_eq!(by[&Membership::OodL2].len(), 2 * 60);
        assert_eq!(by[&Membership::OodL3].len(), 60);
        assert_eq!(by[&Membership::TrueOod].len(), 240);
        assert_eq!(data.outliers.len(), 3000);
        assert!(data.train.iter().all(|s| s.true_class.unwrap() < 15));
    }

    #[test]
    fn seeded_generation_is_repeatable() {
        let cfg = SynthConfig {
            seed: 11,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.outliers, b.outliers);
        let c = generate_synthetic(&SynthConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn holdout_cannot_empty_id() {
        let cfg = SynthConfig {
            branching: vec![2],
            level_scales: vec![1.0],
            holdouts: vec![Holdout::new("c0", HoldoutLevel::L1), Holdout::new("c1", HoldoutLevel::L1)],
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(SynthError::Split(_))));
    }

    #[test]
    fn config_checks() {
        let mut cfg = SynthConfig {
            level_scales: vec![1.0, 2.0, 0.5],
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.level_scales = vec![3.0, 2.0, 0.0];
        assert!(cfg.validate().is_ok());
        cfg.branching = vec![4, 1, 2];
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<SynthConfig>(r#"{"dimz": 3}"#).is_err());
        let parsed: SynthConfig = serde_json::from_str(r#"{"seed": 4}"#).unwrap();
        assert_eq!(parsed, SynthConfig { seed: 4, ..SynthConfig::default() });
    }

    #[test]
    fn zero_fine_scale_collapses_siblings() {
        let cfg = SynthConfig {
            level_scales: vec![6.0, 2.5, 0.0],
            ..SynthConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        assert_eq!(data.leaf_centers["c1/m1/f0"], data.leaf_centers["c1/m1/f1"]);
    }

    #[test]
    fn orthogonal_siblings_are_equidistant() {
        let cfg = SynthConfig {
            level_scales: vec![2.0, 0.7, 0.0],
            seed: 3,
            ..SynthConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let dist = |a: &str, b: &str| {
            let (x, y) = (&data.leaf_centers[a], &data.leaf_centers[b]);
            x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
        };
        // fine scale 0 puts each leaf on its mid center
        let want = 0.7 * (2.0 * 8.0f64).sqrt();
        for c in 0..4 {
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                let d = dist(&format!("c{c}/m{i}/f0"), &format!("c{c}/m{j}/f0"));
                assert!((d - want).abs() < 1e-9, "c{c} m{i} m{j}: {d}");
            }
        }
    }
}
