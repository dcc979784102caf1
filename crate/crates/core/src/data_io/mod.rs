//! Point sets, datasets, the Set-Circles generator, and on-disk formats.

mod checkpoint;
mod embeddings;
mod pointsets;

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffgraph::Tensor;
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use embeddings::{read_embeddings, write_embeddings, EmbeddingHeader};
pub use pointsets::{load_pointsets, save_pointsets};

/// A non-empty multiset of `dim`-dimensional finite vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
    label: Option<usize>,
}

impl PointSet {
    pub fn new(dim: usize, data: Vec<f64>, label: Option<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("point dimension must be >= 1".into()));
        }
        if data.is_empty() {
            return Err(Error::Data(
                "point set must contain at least one point".into(),
            ));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Data(format!(
                "{} values do not form points of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("point set contains a non-finite value".into()));
        }
        Ok(Self { dim, data, label })
    }

    pub fn from_rows(rows: &[Vec<f64>], label: Option<usize>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Data(format!(
                "point {i} has dimension {}, expected {dim}",
                r.len()
            )));
        }
        Self::new(dim, rows.concat(), label)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// `[M, d]` tensor of the points.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), self.dim, self.data.clone()).expect("validated point set")
    }

    /// The set with its elements reordered so that row `i` is `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.len());
        let data = perm.iter().flat_map(|&i| self.point(i).to_vec()).collect();
        Self {
            dim: self.dim,
            data,
            label: self.label,
        }
    }

    /// Applies `f` to every point.
    pub fn map_points(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = self.points().map(&mut f).collect();
        Self::from_rows(&rows, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A collection of point sets sharing one element dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SetDataset {
    dim: usize,
    n_classes: usize,
    sets: Vec<PointSet>,
    splits: Vec<Split>,
}

impl SetDataset {
    pub fn new(
        dim: usize,
        n_classes: usize,
        sets: Vec<PointSet>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        if sets.len() != splits.len() {
            return Err(Error::Data(format!(
                "{} sets but {} split tags",
                sets.len(),
                splits.len()
            )));
        }
        for (i, s) in sets.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::Data(format!(
                    "set {i} has dimension {}, expected {dim}",
                    s.dim()
                )));
            }
            if let Some(l) = s.label() {
                if l >= n_classes {
                    return Err(Error::Data(format!(
                        "set {i} has label {l} but the dataset declares {n_classes} classes"
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            n_classes,
            sets,
            splits,
        })
    }

    /// All sets tagged as training data.
    pub fn from_sets(dim: usize, n_classes: usize, sets: Vec<PointSet>) -> Result<Self> {
        let splits = vec![Split::Train; sets.len()];
        Self::new(dim, n_classes, sets, splits)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn sets(&self) -> &[PointSet] {
        &self.sets
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Subset with the given split tag.
    pub fn split(&self, which: Split) -> Self {
        let (sets, splits) = self
            .sets
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == which)
            .map(|(set, &s)| (set.clone(), s))
            .unzip();
        Self {
            dim: self.dim,
            n_classes: self.n_classes,
            sets,
            splits,
        }
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.sets.iter().map(PointSet::label).collect()
    }

    pub fn mean_size(&self) -> f64 {
        if self.sets.is_empty() {
            return 0.0;
        }
        self.sets.iter().map(PointSet::len).sum::<usize>() as f64 / self.sets.len() as f64
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for l in self.sets.iter().filter_map(PointSet::label) {
            counts[l] += 1;
        }
        counts
    }
}

/// Parameters of the Set-Circles generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetCirclesConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Circle radius of class 0 and class 1.
    pub radii: (f64, f64),
    pub noise: f64,
    /// Inclusive range of set cardinalities.
    pub size_range: (usize, usize),
    pub seed: u64,
}

impl Default for SetCirclesConfig {
    fn default() -> Self {
        Self {
            n_train: 400,
            n_test: 200,
            radii: (1.0, 1.3),
            noise: 0.05,
            size_range: (8, 21),
            seed: 0,
        }
    }
}

/// Two-class dataset of noisy points on random circular arcs; the class is
/// the circle radius. The first `n_train` sets are tagged train, the rest
/// test.
pub fn gen_set_circles(cfg: &SetCirclesConfig) -> Result<SetDataset> {
    let (r0, r1) = cfg.radii;
    if !(r0 > 0.0 && r1 > 0.0 && r0.is_finite() && r1.is_finite()) || r0 == r1 {
        return Err(Error::config(
            "data_io",
            format!("radii must be distinct and positive, got {r0} and {r1}"),
        ));
    }
    let (lo, hi) = cfg.size_range;
    if lo < 1 || hi < lo {
        return Err(Error::config(
            "data_io",
            format!("invalid size range {lo}..={hi}"),
        ));
    }
    if cfg.noise < 0.0 || !cfg.noise.is_finite() {
        return Err(Error::config(
            "data_io",
            format!("invalid noise {}", cfg.noise),
        ));
    }
    let mut rng = seeded_rng(cfg.seed);
    let n = cfg.n_train + cfg.n_test;
    let mut sets = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..2usize);
        let radius = if class == 0 { r0 } else { r1 };
        let size = rng.random_range(lo..=hi);
        let start = rng.random_range(0.0..TAU);
        let span = rng.random_range(FRAC_PI_4..=PI);
        let mut data = Vec::with_capacity(2 * size);
        for _ in 0..size {
            let angle = rng.random_range(start..=start + span);
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            data.push(radius * angle.cos() + cfg.noise * nx);
            data.push(radius * angle.sin() + cfg.noise * ny);
        }
        sets.push(PointSet::new(2, data, Some(class))?);
    }
    let mut splits = vec![Split::Train; cfg.n_train];
    splits.resize(n, Split::Test);
    SetDataset::new(2, 2, sets, splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_points_lie_on_circles() {
        let cfg = SetCirclesConfig {
            noise: 0.0,
            n_train: 50,
            n_test: 0,
            ..Default::default()
        };
        let ds = gen_set_circles(&cfg).unwrap();
        for s in ds.sets() {
            let r = if s.label() == Some(0) { 1.0 } else { 1.3 };
            for p in s.points() {
                assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn labels_are_balanced() {
        let cfg = SetCirclesConfig {
            n_train: 400,
            n_test: 0,
            seed: 5,
            ..Default::default()
        };
        let counts = gen_set_circles(&cfg).unwrap().class_counts();
        // ±10% of 200 per class
        assert!(counts[0].abs_diff(200) <= 20, "{counts:?}");
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = SetCirclesConfig::default();
        assert_eq!(
            gen_set_circles(&cfg).unwrap(),
            gen_set_circles(&cfg).unwrap()
        );
        let other = SetCirclesConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(
            gen_set_circles(&cfg).unwrap(),
            gen_set_circles(&other).unwrap()
        );
    }

    #[test]
    fn default_mean_size_near_reported() {
        let ds = gen_set_circles(&SetCirclesConfig::default()).unwrap();
        let train = ds.split(Split::Train);
        assert_eq!(train.len(), 400);
        assert_eq!(ds.split(Split::Test).len(), 200);
        assert!(
            (train.mean_size() - 14.6).abs() < 0.5,
            "{}",
            train.mean_size()
        );
    }

    #[test]
    fn invalid_generator_configs() {
        let equal = SetCirclesConfig {
            radii: (1.0, 1.0),
            ..Default::default()
        };
        assert!(gen_set_circles(&equal).is_err());
        let negative = SetCirclesConfig {
            radii: (-1.0, 1.0),
            ..Default::default()
        };
        assert!(gen_set_circles(&negative).is_err());
        let sizes = SetCirclesConfig {
            size_range: (0, 4),
            ..Default::default()
        };
        assert!(gen_set_circles(&sizes).is_err());
    }

    #[test]
    fn point_set_validation() {
        assert!(PointSet::new(2, vec![], None).is_err());
        assert!(PointSet::new(2, vec![1.0, 2.0, 3.0], None).is_err());
        assert!(PointSet::new(1, vec![f64::INFINITY], None).is_err());
        assert!(PointSet::from_rows(&[vec![1.0, 2.0], vec![3.0]], None).is_err());
        let s = PointSet::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], Some(1)).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.permuted(&[1, 0]).point(0), &[3.0, 4.0]);
    }

    #[test]
    fn dataset_rejects_out_of_range_labels() {
        let s = PointSet::new(1, vec![1.0], Some(3)).unwrap();
        assert!(SetDataset::from_sets(1, 2, vec![s]).is_err());
    }
}
