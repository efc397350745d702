//! Mixed-sample construction for virtual-out and virtual-in training batches.
//!
//! A virtual-out sample blends an ID input with an outlier and pulls its
//! target toward the uniform distribution:
//! `y = λ·onehot(y_in) + (1 − λ)·U`. A virtual-in sample blends two ID inputs
//! and their targets: `y = λ·y + (1 − λ)·y'`. One λ ~ Beta(α, α) is drawn per
//! batch and shared by every sample in it.
//!
//! Inputs are blended either linearly or by pasting a rectangular patch
//! (cut mixing). For cut mixing the box is sampled with a uniform centre and
//! sides `⌊H·√(1−λ)⌋ × ⌊W·√(1−λ)⌋`, clipped to the grid, and λ is corrected to
//! the fraction of pixels actually kept from the first input.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for a soft label to count as normalized.
pub const TARGET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MixError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("cut mixing needs grid-shaped inputs")]
    NotAGrid,
    #[error("grid of {height}x{width}x{channels} cannot hold {len} values")]
    BadGrid {
        height: usize,
        width: usize,
        channels: usize,
        len: usize,
    },
    #[error("mixing coefficient {0} outside [0, 1]")]
    BadLambda(f64),
    #[error("Beta parameter must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("soft label of length {got} given for {classes} classes")]
    SoftLength { got: usize, classes: usize },
    #[error("soft label is not a distribution (sum {sum}, min {min})")]
    NotNormalized { sum: f64, min: f64 },
    #[error("cannot mix an empty batch")]
    EmptyBatch,
    #[error("outlier pool is empty")]
    EmptyPool,
    #[error("{inputs} inputs but {labels} labels")]
    LabelCount { inputs: usize, labels: usize },
}

/// A training label: a hard class index or a soft distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Soft(Vec<f64>),
}

impl Label {
    pub fn to_soft(&self, classes: usize) -> Result<Vec<f64>, MixError> {
        if classes < 2 {
            return Err(MixError::TooFewClasses(classes));
        }
        match self {
            Label::Class(c) => {
                if *c >= classes {
                    return Err(MixError::ClassOutOfRange { index: *c, classes });
                }
                let mut v = vec![0.0; classes];
                v[*c] = 1.0;
                Ok(v)
            }
            Label::Soft(v) => {
                if v.len() != classes {
                    return Err(MixError::SoftLength { got: v.len(), classes });
                }
                check_distribution(v)?;
                Ok(v.clone())
            }
        }
    }
}

impl From<usize> for Label {
    fn from(c: usize) -> Self {
        Label::Class(c)
    }
}

pub fn check_distribution(v: &[f64]) -> Result<(), MixError> {
    let sum: f64 = v.iter().sum();
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min >= 0.0) || !((sum - 1.0).abs() <= TARGET_TOLERANCE) {
        return Err(MixError::NotNormalized { sum, min });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixOp {
    Linear,
    Cut,
}

impl FromStr for MixOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(MixOp::Linear),
            "cut" => Ok(MixOp::Cut),
            other => Err(format!("unknown mix op '{other}' (linear, cut)")),
        }
    }
}

impl fmt::Display for MixOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixOp::Linear => "linear",
            MixOp::Cut => "cut",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixConfig {
    pub op: MixOp,
    pub alpha: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// `[height, width, channels]` view of feature vectors, needed for cut mixing.
    #[serde(default)]
    pub grid: Option<[usize; 3]>,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            op: MixOp::Linear,
            alpha: 1.0,
            rng_seed: 0,
            grid: None,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<(), MixError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(MixError::BadAlpha(self.alpha));
        }
        Ok(())
    }
}

/// One draw of λ ~ Beta(α, α).
pub fn sample_lambda<R: Rng + ?Sized>(cfg: &MixConfig, rng: &mut R) -> Result<f64, MixError> {
    cfg.validate()?;
    let beta = Beta::new(cfg.alpha, cfg.alpha).map_err(|_| MixError::BadAlpha(cfg.alpha))?;
    Ok(beta.sample(rng))
}

fn check_lambda(lambda: f64) -> Result<(), MixError> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(MixError::BadLambda(lambda))
    }
}

/// `λ·a + (1 − λ)·b`, elementwise.
pub fn mix_linear(a: &[f64], b: &[f64], lambda: f64) -> Result<Vec<f64>, MixError> {
    if a.len() != b.len() {
        return Err(MixError::ShapeMismatch(vec![a.len()], vec![b.len()]));
    }
    check_lambda(lambda)?;
    Ok(a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect())
}

/// Row-major `H × W × C` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, MixError> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(MixError::BadGrid {
                height,
                width,
                channels,
                len: data.len(),
            });
        }
        Ok(Grid {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Grid {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }
}

/// Half-open pixel rectangle `[y0, y1) × [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl CutBox {
    pub fn sample<R: Rng + ?Sized>(height: usize, width: usize, lambda: f64, rng: &mut R) -> Self {
        let ratio = (1.0 - lambda).sqrt();
        let cut_h = (height as f64 * ratio) as usize;
        let cut_w = (width as f64 * ratio) as usize;
        let cy = rng.random_range(0..height);
        let cx = rng.random_range(0..width);
        CutBox {
            y0: cy.saturating_sub(cut_h / 2),
            y1: (cy + cut_h / 2).min(height),
            x0: cx.saturating_sub(cut_w / 2),
            x1: (cx + cut_w / 2).min(width),
        }
    }

    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

/// Paste `b` into `a` inside `cut`; returns the kept-area fraction of `a`.
pub fn apply_cut(a: &Grid, b: &Grid, cut: &CutBox) -> Result<(Grid, f64), MixError> {
    if a.shape() != b.shape() {
        return Err(MixError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    let mut out = a.clone();
    let c = a.channels;
    for y in cut.y0..cut.y1 {
        let row = (y * a.width + cut.x0) * c;
        let end = (y * a.width + cut.x1) * c;
        out.data[row..end].copy_from_slice(&b.data[row..end]);
    }
    let total = (a.height * a.width) as f64;
    Ok((out, 1.0 - cut.area() as f64 / total))
}

/// Cut mixing with a freshly sampled box; returns the corrected λ.
pub fn mix_cut<R: Rng + ?Sized>(a: &Grid, b: &Grid, lambda: f64, rng: &mut R) -> Result<(Grid, f64), MixError> {
    if a.shape() != b.shape() {
        return Err(MixError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    check_lambda(lambda)?;
    let cut = CutBox::sample(a.height, a.width, lambda, rng);
    apply_cut(a, b, &cut)
}

/// `λ·y_in + (1 − λ)·U` over `classes` classes.
pub fn virtual_out_targets(y_in: &Label, lambda: f64, classes: usize) -> Result<Vec<f64>, MixError> {
    check_lambda(lambda)?;
    let y = y_in.to_soft(classes)?;
    let uniform = 1.0 / classes as f64;
    Ok(y.iter().map(|v| lambda * v + (1.0 - lambda) * uniform).collect())
}

/// `λ·y_a + (1 − λ)·y_b`.
pub fn virtual_in_targets(ya: &Label, yb: &Label, lambda: f64, classes: usize) -> Result<Vec<f64>, MixError> {
    check_lambda(lambda)?;
    let a = ya.to_soft(classes)?;
    let b = yb.to_soft(classes)?;
    Ok(a.iter().zip(&b).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MixKind {
    VirtualOut,
    VirtualIn,
}

/// Blended inputs with their soft targets; every sample shares `lambda_used`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
    pub lambda_used: f64,
    pub kind: MixKind,
}

/// Mixes pairs of equal-length feature vectors under one λ and, for cut
/// mixing, one box shared by the whole batch.
struct PairMixer {
    op: MixOp,
    grid: Option<[usize; 3]>,
    lambda: f64,
    cut: Option<CutBox>,
}

impl PairMixer {
    fn new<R: Rng + ?Sized>(cfg: &MixConfig, dim: usize, rng: &mut R) -> Result<Self, MixError> {
        let lambda = sample_lambda(cfg, rng)?;
        match cfg.op {
            MixOp::Linear => Ok(PairMixer {
                op: MixOp::Linear,
                grid: None,
                lambda,
                cut: None,
            }),
            MixOp::Cut => {
                let [h, w, c] = cfg.grid.ok_or(MixError::NotAGrid)?;
                if h * w * c != dim {
                    return Err(MixError::BadGrid {
                        height: h,
                        width: w,
                        channels: c,
                        len: dim,
                    });
                }
                let cut = CutBox::sample(h, w, lambda, rng);
                let corrected = 1.0 - cut.area() as f64 / (h * w) as f64;
                Ok(PairMixer {
                    op: MixOp::Cut,
                    grid: cfg.grid,
                    lambda: corrected,
                    cut: Some(cut),
                })
            }
        }
    }

    fn mix(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>, MixError> {
        match (self.op, self.grid, &self.cut) {
            (MixOp::Cut, Some([h, w, c]), Some(cut)) => {
                let ga = Grid::new(h, w, c, a.to_vec())?;
                let gb = Grid::new(h, w, c, b.to_vec())?;
                Ok(apply_cut(&ga, &gb, cut)?.0.data)
            }
            _ => mix_linear(a, b, self.lambda),
        }
    }
}

fn check_batch(xs: &[Vec<f64>], labels: &[Label]) -> Result<usize, MixError> {
    if xs.is_empty() {
        return Err(MixError::EmptyBatch);
    }
    if xs.len() != labels.len() {
        return Err(MixError::LabelCount {
            inputs: xs.len(),
            labels: labels.len(),
        });
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(MixError::ShapeMismatch(vec![dim], vec![bad.len()]));
    }
    Ok(dim)
}

/// Pair every ID sample with an outlier drawn uniformly (with replacement).
pub fn build_virtual_out<R: Rng + ?Sized>(
    xs: &[Vec<f64>],
    labels: &[Label],
    outliers: &[Vec<f64>],
    cfg: &MixConfig,
    classes: usize,
    rng: &mut R,
) -> Result<MixedBatch, MixError> {
    let dim = check_batch(xs, labels)?;
    if outliers.is_empty() {
        return Err(MixError::EmptyPool);
    }
    let mixer = PairMixer::new(cfg, dim, rng)?;
    let mut out = MixedBatch {
        xs: Vec::with_capacity(xs.len()),
        ys: Vec::with_capacity(xs.len()),
        lambda_used: mixer.lambda,
        kind: MixKind::VirtualOut,
    };
    for (x, y) in xs.iter().zip(labels) {
        let partner = outliers.choose(rng).expect("pool is non-empty");
        out.xs.push(mixer.mix(x, partner)?);
        out.ys.push(virtual_out_targets(y, mixer.lambda, classes)?);
    }
    Ok(out)
}

/// Pair every ID sample with another sample of the same batch through a
/// random permutation.
pub fn build_virtual_in<R: Rng + ?Sized>(
    xs: &[Vec<f64>],
    labels: &[Label],
    cfg: &MixConfig,
    classes: usize,
    rng: &mut R,
) -> Result<MixedBatch, MixError> {
    let dim = check_batch(xs, labels)?;
    let mixer = PairMixer::new(cfg, dim, rng)?;
    let mut perm: Vec<usize> = (0..xs.len()).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), rng);
    let mut out = MixedBatch {
        xs: Vec::with_capacity(xs.len()),
        ys: Vec::with_capacity(xs.len()),
        lambda_used: mixer.lambda,
        kind: MixKind::VirtualIn,
    };
    for (i, &j) in perm.iter().enumerate() {
        out.xs.push(mixer.mix(&xs[i], &xs[j])?);
        out.ys.push(virtual_in_targets(&labels[i], &labels[j], mixer.lambda, classes)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn lambda_uniform_mean() {
        let cfg = MixConfig::default();
        let mut r = rng(7);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_lambda(&cfg, &mut r).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn lambda_concentrates_for_large_alpha() {
        // Beta(a, a) variance a^2 / ((2a)^2 (2a + 1)): 1/12 at a = 1, 1/804 at a = 100
        let var = |alpha: f64| {
            let cfg = MixConfig { alpha, ..MixConfig::default() };
            let mut r = rng(11);
            let draws: Vec<f64> = (0..20_000).map(|_| sample_lambda(&cfg, &mut r).unwrap()).collect();
            let m = draws.iter().sum::<f64>() / draws.len() as f64;
            draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64
        };
        let (v1, v100) = (var(1.0), var(100.0));
        assert!((v1 - 1.0 / 12.0).abs() < 0.005);
        assert!((v100 - 1.0 / 804.0).abs() < 2e-4);
        assert!(v100 < v1);
    }

    #[test]
    fn lambda_deterministic() {
        let cfg = MixConfig::default();
        let a: Vec<f64> = (0..5).map({
            let mut r = rng(3);
            move |_| sample_lambda(&cfg, &mut r).unwrap()
        }).collect();
        let b: Vec<f64> = (0..5).map({
            let mut r = rng(3);
            move |_| sample_lambda(&cfg, &mut r).unwrap()
        }).collect();
        assert_eq!(a, b);
        let bad = MixConfig { alpha: 0.0, ..cfg };
        assert_eq!(sample_lambda(&bad, &mut rng(0)), Err(MixError::BadAlpha(0.0)));
    }

    #[test]
    fn linear_examples() {
        let a = [1.5, -2.0];
        let b = [7.0, 3.25];
        assert_eq!(mix_linear(&a, &b, 1.0).unwrap(), a);
        assert_eq!(mix_linear(&a, &b, 0.0).unwrap(), b);
        assert_eq!(mix_linear(&[2.0, 0.0], &[0.0, 4.0], 0.25).unwrap(), [0.5, 3.0]);
        assert!(matches!(mix_linear(&[1.0], &[1.0, 2.0], 0.5), Err(MixError::ShapeMismatch(..))));
        assert_eq!(mix_linear(&a, &b, 1.5), Err(MixError::BadLambda(1.5)));
    }

    #[test]
    fn cut_extremes() {
        let a = Grid::filled(8, 8, 1, 1.0);
        let b = Grid::filled(8, 8, 1, 0.0);
        let (out, lam) = mix_cut(&a, &b, 1.0, &mut rng(0)).unwrap();
        assert_eq!(out, a);
        assert_eq!(lam, 1.0);
        let full = CutBox { y0: 0, y1: 8, x0: 0, x1: 8 };
        let (out, lam) = apply_cut(&a, &b, &full).unwrap();
        assert_eq!(out, b);
        assert_eq!(lam, 0.0);
        let c = Grid::filled(4, 8, 1, 0.0);
        assert!(matches!(mix_cut(&a, &c, 0.5, &mut rng(0)), Err(MixError::ShapeMismatch(..))));
        assert!(Grid::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    /// Count pixels that still carry `a`'s marker value.
    fn kept_pixels(out: &Grid, marker: f64) -> usize {
        (0..out.height)
            .flat_map(|y| (0..out.width).map(move |x| (y, x)))
            .filter(|&(y, x)| out.pixel(y, x).iter().all(|&v| v == marker))
            .count()
    }

    #[test]
    fn cut_lambda_matches_mask_count() {
        let a = Grid::filled(8, 8, 1, 1.0);
        let b = Grid::filled(8, 8, 1, -1.0);
        let (out, lam) = mix_cut(&a, &b, 0.75, &mut rng(42)).unwrap();
        let kept = kept_pixels(&out, 1.0);
        assert_eq!(lam, kept as f64 / 64.0);
        assert!(kept < 64);
    }

    #[test]
    fn virtual_out_examples() {
        let mut onehot = vec![0.0; 10];
        onehot[3] = 1.0;
        assert_eq!(virtual_out_targets(&Label::Class(3), 1.0, 10).unwrap(), onehot);
        assert!(virtual_out_targets(&Label::Class(3), 0.0, 10).unwrap().iter().all(|&v| v == 0.1));
        let t = virtual_out_targets(&Label::Class(0), 0.6, 4).unwrap();
        let expected = [0.7, 0.1, 0.1, 0.1];
        for (a, b) in t.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(
            virtual_out_targets(&Label::Class(4), 0.5, 4),
            Err(MixError::ClassOutOfRange { index: 4, classes: 4 })
        );
    }

    #[test]
    fn virtual_in_examples() {
        for lam in [0.0, 0.3, 1.0] {
            assert_eq!(
                virtual_in_targets(&Label::Class(1), &Label::Class(1), lam, 3).unwrap(),
                [0.0, 1.0, 0.0]
            );
        }
        assert_eq!(
            virtual_in_targets(&Label::Class(0), &Label::Class(1), 0.5, 3).unwrap(),
            [0.5, 0.5, 0.0]
        );
        let t = virtual_in_targets(&Label::Class(2), &Label::Class(0), 0.9, 3).unwrap();
        assert!((t[0] - 0.1).abs() < 1e-15 && t[1] == 0.0 && t[2] == 0.9);
        assert!(virtual_in_targets(&Label::Class(0), &Label::Class(3), 0.5, 3).is_err());
        let soft = Label::Soft(vec![0.5, 0.6, 0.0]);
        assert!(matches!(soft.to_soft(3), Err(MixError::NotNormalized { .. })));
    }

    #[test]
    fn batches_share_lambda() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64; 4]).collect();
        let labels: Vec<Label> = (0..6).map(|i| Label::Class(i % 3)).collect();
        let pool = vec![vec![100.0; 4], vec![-100.0; 4]];
        let cfg = MixConfig::default();
        let out = build_virtual_out(&xs, &labels, &pool, &cfg, 3, &mut rng(1)).unwrap();
        assert_eq!(out.kind, MixKind::VirtualOut);
        let lam = out.lambda_used;
        for (i, x) in out.xs.iter().enumerate() {
            let ok = [100.0, -100.0].iter().any(|p| (x[0] - (lam * i as f64 + (1.0 - lam) * p)).abs() < 1e-9);
            assert!(ok);
        }
        let vin = build_virtual_in(&xs, &labels, &cfg, 3, &mut rng(1)).unwrap();
        assert_eq!(vin.kind, MixKind::VirtualIn);
        assert_eq!(vin.xs.len(), 6);
        assert!(build_virtual_out(&xs, &labels, &[], &cfg, 3, &mut rng(1)).is_err());
        assert!(build_virtual_in(&[], &[], &cfg, 3, &mut rng(1)).is_err());
    }

    #[test]
    fn cut_batches_need_grid() {
        let xs = vec![vec![1.0; 8]; 3];
        let labels = vec![Label::Class(0); 3];
        let mut cfg = MixConfig { op: MixOp::Cut, ..MixConfig::default() };
        assert_eq!(build_virtual_in(&xs, &labels, &cfg, 2, &mut rng(0)), Err(MixError::NotAGrid));
        cfg.grid = Some([2, 4, 1]);
        let pool = vec![vec![-1.0; 8]];
        let out = build_virtual_out(&xs, &labels, &pool, &cfg, 2, &mut rng(5)).unwrap();
        let kept = out.xs[0].iter().filter(|&&v| v == 1.0).count();
        assert_eq!(out.lambda_used, kept as f64 / 8.0);
        assert!(out.xs.iter().all(|x| x == &out.xs[0]));
    }

    proptest! {
        #[test]
        fn targets_are_distributions(k in 2usize..30, a in 0usize..30, b in 0usize..30, lam in 0.0f64..=1.0) {
            let (a, b) = (a % k, b % k);
            for t in [
                virtual_out_targets(&Label::Class(a), lam, k).unwrap(),
                virtual_in_targets(&Label::Class(a), &Label::Class(b), lam, k).unwrap(),
            ] {
                prop_assert!(t.iter().all(|&v| v >= 0.0));
                prop_assert!((t.iter().sum::<f64>() - 1.0).abs() <= TARGET_TOLERANCE);
            }
        }

        #[test]
        fn linear_symmetry(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..16), lam in 0.0f64..=1.0) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let x = mix_linear(&a, &b, lam).unwrap();
            let y = mix_linear(&b, &a, 1.0 - lam).unwrap();
            for (p, q) in x.iter().zip(&y) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn cut_lambda_is_exact(h in 1usize..12, w in 1usize..12, lam in 0.0f64..=1.0, seed in 0u64..1000) {
            let a = Grid::filled(h, w, 2, 1.0);
            let b = Grid::filled(h, w, 2, 0.0);
            let (out, corrected) = mix_cut(&a, &b, lam, &mut rng(seed)).unwrap();
            prop_assert!((corrected - kept_pixels(&out, 1.0) as f64 / (h * w) as f64).abs() < 1e-15);
        }
    }
}
