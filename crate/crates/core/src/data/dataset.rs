use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Full,
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    /// Real-valued targets, one row per sample.
    Values(Tensor),
    /// Class indices into `names`.
    Classes { labels: Vec<usize>, names: Vec<String> },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(t) => t.rows(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Target width: value columns, or the number of classes.
    pub fn width(&self) -> usize {
        match self {
            Targets::Values(t) => t.cols(),
            Targets::Classes { names, .. } => names.len(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Values(t) => Targets::Values(t.select_rows(idx)),
            Targets::Classes { labels, names } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                names: names.clone(),
            },
        }
    }
}

/// Per-feature standardization followed by a symmetric affine squash into
/// `range`: `x' = mid + half * ((x - mean) / std) / scale`, where `scale`
/// is the largest absolute standardized value seen in the fitting data
/// (times a small margin).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub scale: Vec<f64>,
    pub range: Option<(f64, f64)>,
}

const SQUASH_MARGIN: f64 = 1.01;

impl NormStats {
    /// Statistics of `x`. With `range = None` the transform is plain
    /// standardization.
    pub fn fit(x: &Tensor, range: Option<(f64, f64)>) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 {
            return Err(Error::invalid("normalize", "cannot fit statistics on zero rows"));
        }
        if let Some((lo, hi)) = range {
            if !(lo < hi) {
                return Err(Error::invalid("normalize", format!("empty range ({lo}, {hi})")));
            }
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row_slice(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row_slice(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // constant columns map to zero rather than NaN
        let std: Vec<f64> = var
            .iter()
            .map(|s| (s / n as f64).sqrt())
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        let mut scale = vec![1.0; d];
        if range.is_some() {
            let mut peak = vec![0.0f64; d];
            for r in 0..n {
                for (c, v) in x.row_slice(r).iter().enumerate() {
                    peak[c] = peak[c].max(((v - mean[c]) / std[c]).abs());
                }
            }
            for (s, p) in scale.iter_mut().zip(peak) {
                *s = if p > 0.0 { p * SQUASH_MARGIN } else { 1.0 };
            }
        }
        Ok(NormStats { mean, std, scale, range })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape { op: "normalize", lhs: x.shape(), rhs: (x.rows(), self.mean.len()) });
        }
        let (mid, half) = match self.range {
            Some((lo, hi)) => ((lo + hi) / 2.0, (hi - lo) / 2.0),
            None => (0.0, 1.0),
        };
        let d = self.mean.len();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let c = k % d;
                mid + half * ((v - self.mean[c]) / self.std[c]) / self.scale[c]
            })
            .collect();
        Tensor::new(x.rows(), d, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Tensor,
    pub targets: Targets,
    #[serde(default)]
    pub split: Split,
    /// Statistics already applied to `features`, if any.
    #[serde(default)]
    pub stats: Option<NormStats>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Tensor, targets: Targets) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::invalid(
                "dataset",
                format!("{} feature rows but {} targets", features.rows(), targets.len()),
            ));
        }
        if let Targets::Classes { labels, names } = &targets {
            if let Some(&l) = labels.iter().find(|&&l| l >= names.len()) {
                return Err(Error::invalid("dataset", format!("label {l} outside {} classes", names.len())));
            }
        }
        let feature_names = (0..features.cols()).map(|i| format!("x{i}")).collect();
        let target_names = match &targets {
            Targets::Values(t) => (0..t.cols()).map(|i| format!("y{i}")).collect(),
            Targets::Classes { .. } => vec!["label".to_string()],
        };
        Ok(Dataset { features, targets, split: Split::Full, stats: None, feature_names, target_names })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { names, .. } => Some(names.len()),
            Targets::Values(_) => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            targets: self.targets.select(idx),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            features: Tensor::zeros(0, 0),
            targets: Targets::Values(Tensor::zeros(0, 0)),
            split: self.split,
            stats: self.stats.clone(),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
        }
    }

    /// Shuffled train/test split with `train_fraction` of the rows in the
    /// first part.
    pub fn split(&self, train_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::invalid("split", format!("fraction {train_fraction} outside [0, 1]")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let cut = (self.len() as f64 * train_fraction).round() as usize;
        let mut train = self.subset(&idx[..cut]);
        let mut test = self.subset(&idx[cut..]);
        train.split = Split::Train;
        test.split = Split::Test;
        Ok((train, test))
    }

    /// [`Dataset::split`] with a ChaCha8 stream seeded by `seed`.
    pub fn split_seeded(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        self.split(train_fraction, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Fits statistics on `self` and applies them to `self` and every
    /// dataset in `others`.
    pub fn normalize_with(&mut self, range: Option<(f64, f64)>, others: &mut [&mut Dataset]) -> Result<NormStats> {
        if self.stats.is_some() {
            return Err(Error::invalid("normalize", "dataset is already normalized"));
        }
        let stats = NormStats::fit(&self.features, range)?;
        self.features = stats.apply(&self.features)?;
        self.stats = Some(stats.clone());
        for o in others.iter_mut() {
            o.apply_stats(&stats)?;
        }
        Ok(stats)
    }

    pub fn apply_stats(&mut self, stats: &NormStats) -> Result<()> {
        if self.stats.is_some() {
            return Err(Error::invalid("normalize", "dataset is already normalized"));
        }
        self.features = stats.apply(&self.features)?;
        self.stats = Some(stats.clone());
        Ok(())
    }
}

/// One epoch of mini-batch indices: a fresh permutation cut into chunks of
/// `batch_size` (`0` means full batch). A full batch keeps row order. A
/// trailing batch of one row is merged into its predecessor so batch
/// statistics stay defined.
pub fn epoch_batches(n: usize, batch_size: usize, shuffle: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let bs = if batch_size == 0 { n.max(1) } else { batch_size };
    if shuffle && bs < n {
        idx.shuffle(rng);
    }
    let mut batches: Vec<Vec<usize>> = idx.chunks(bs).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}
