//! Synthetic datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `exp(sin(πx) + y²)`.
pub fn alignment_fn(x: f64, y: f64) -> f64 {
    ((std::f64::consts::PI * x).sin() + y * y).exp()
}

/// `n` points drawn uniformly from `[-1, 1]²` with targets
/// [`alignment_fn`].
pub fn gen_alignment_target(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("gen_alignment_target", "n must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.random_range(-1.0..=1.0);
        let b: f64 = rng.random_range(-1.0..=1.0);
        x.extend([a, b]);
        y.push(alignment_fn(a, b));
    }
    let mut ds = Dataset::new(Tensor::new(n, 2, x)?, Targets::Values(Tensor::column(&y)))?;
    ds.feature_names = vec!["x".into(), "y".into()];
    ds.target_names = vec!["target".into()];
    Ok(ds)
}

fn d_n() -> usize {
    5000
}
fn d_dim() -> usize {
    32
}
fn d_classes() -> usize {
    10
}
fn d_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobConfig {
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_classes")]
    pub classes: usize,
    /// Standard deviation of the class centres around the origin.
    #[serde(default = "d_one")]
    pub center_std: f64,
    /// Within-class standard deviation.
    #[serde(default = "d_one")]
    pub cluster_std: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig { n: d_n(), dim: d_dim(), classes: d_classes(), center_std: 1.0, cluster_std: 1.0 }
    }
}

/// Isotropic Gaussian clusters with centres drawn from
/// `N(0, center_std² I)`. Labels cycle through the classes so every class
/// gets `n / classes` samples (±1).
pub fn gen_blobs(cfg: &BlobConfig, seed: u64) -> Result<Dataset> {
    if cfg.n == 0 || cfg.dim == 0 || cfg.classes == 0 {
        return Err(Error::invalid("gen_blobs", "n, dim and classes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = Normal::new(0.0, cfg.center_std).map_err(|e| Error::invalid("gen_blobs", e.to_string()))?;
    let noise = Normal::new(0.0, cfg.cluster_std).map_err(|e| Error::invalid("gen_blobs", e.to_string()))?;
    let c: Vec<f64> = (0..cfg.classes * cfg.dim).map(|_| centers.sample(&mut rng)).collect();
    let mut x = Vec::with_capacity(cfg.n * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let l = i % cfg.classes;
        labels.push(l);
        x.extend((0..cfg.dim).map(|j| c[l * cfg.dim + j] + noise.sample(&mut rng)));
    }
    let names = (0..cfg.classes).map(|c| format!("c{c}")).collect();
    Dataset::new(Tensor::new(cfg.n, cfg.dim, x)?, Targets::Classes { labels, names })
}
