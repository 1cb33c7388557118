//! Knot sets and the order-preserving knot reparameterization.
//!
//! A learnable knot row of `G` knots is driven by `G - 1` raw parameters
//! `r`. With `p = softplus(r) / Σ softplus(r)` and `w = hi - lo`, the
//! spacings are `u_i = w (ε + (1 - (G-1) ε) p_i)`, so the first knot sits
//! at `lo`, the last at `hi`, and consecutive knots are at least `ε w`
//! apart (`ε = 1e-4`). Equal raw values give the equally spaced grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Relative spacing floor between consecutive learnable knots.
pub const KNOT_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotMode {
    Fixed,
    Learnable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotSharing {
    Shared,
    /// One knot row per output.
    Individual(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotSet {
    pub mode: KnotMode,
    pub sharing: KnotSharing,
    pub range: (f64, f64),
    pub count: usize,
}

impl KnotSet {
    pub fn new(mode: KnotMode, sharing: KnotSharing, range: (f64, f64), count: usize) -> Result<Self> {
        let ks = KnotSet {
            mode,
            sharing,
            range,
            count,
        };
        ks.validate()?;
        Ok(ks)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range;
        if self.count < 1 {
            return Err(Error::invalid("knots", "knot count G must be at least 1"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid("knots", format!("invalid range ({lo}, {hi})")));
        }
        if (self.count - 1) as f64 * KNOT_FLOOR >= 1.0 {
            return Err(Error::invalid("knots", format!("too many knots ({})", self.count)));
        }
        if self.sharing == KnotSharing::Individual(0) {
            return Err(Error::invalid("knots", "individual knots need out_dim >= 1"));
        }
        Ok(())
    }

    /// Number of knot rows: 1 when shared, `out_dim` when individual.
    pub fn rows(&self) -> usize {
        match self.sharing {
            KnotSharing::Shared => 1,
            KnotSharing::Individual(n) => n,
        }
    }

    /// Shape of the raw parameter tensor (learnable mode).
    pub fn raw_shape(&self) -> (usize, usize) {
        (self.rows(), self.count - 1)
    }

    /// Number of trainable scalars the knot set contributes.
    pub fn param_count(&self) -> usize {
        match self.mode {
            KnotMode::Fixed => 0,
            KnotMode::Learnable => self.rows() * (self.count - 1),
        }
    }

    /// Raw initialization reproducing the equally spaced grid.
    pub fn init_raw(&self) -> Tensor {
        let (r, c) = self.raw_shape();
        Tensor::zeros(r, c)
    }

    /// `lo + j (hi - lo) / (G - 1)`; a single knot sits at `lo`.
    pub fn fixed_grid(&self) -> Vec<f64> {
        let (lo, hi) = self.range;
        let g = self.count;
        if g == 1 {
            return vec![lo];
        }
        (0..g)
            .map(|j| if j == g - 1 { hi } else { lo + j as f64 * (hi - lo) / (g - 1) as f64 })
            .collect()
    }

    /// Materialized knots, `rows() × G`. Learnable mode requires `raw` and is
    /// differentiable with respect to it.
    pub fn materialize(&self, tape: &mut Tape, raw: Option<&Tensor>) -> Result<Tensor> {
        self.validate()?;
        let rows = self.rows();
        let g = self.count;
        match self.mode {
            KnotMode::Fixed => {
                let grid = self.fixed_grid();
                let data = (0..rows).flat_map(|_| grid.iter().copied()).collect();
                Tensor::new(rows, g, data)
            }
            KnotMode::Learnable => {
                let raw = raw.ok_or_else(|| Error::invalid("knots", "learnable knots need raw parameters"))?;
                if raw.shape() != self.raw_shape() {
                    return Err(Error::Shape {
                        op: "materialize_knots",
                        lhs: raw.shape(),
                        rhs: self.raw_shape(),
                    });
                }
                let (lo, hi) = self.range;
                let n = g - 1;
                let w = hi - lo;
                let amp = w * (1.0 - n as f64 * KNOT_FLOOR);
                let rd = raw.shared_data();
                let mut out = Vec::with_capacity(rows * g);
                let mut probs = Vec::with_capacity(rows * n);
                for r in 0..rows {
                    let p = softplus_normalize(&rd[r * n..(r + 1) * n]);
                    let mut t = lo;
                    out.push(lo);
                    for (i, &pi) in p.iter().enumerate() {
                        t += w * KNOT_FLOOR + amp * pi;
                        out.push(if i + 1 == n { hi } else { t.min(hi) });
                    }
                    probs.extend(p);
                }
                tape.custom(
                    "materialize_knots",
                    &[raw],
                    (rows, g),
                    out,
                    Box::new(move |gt, _| {
                        let mut gr = vec![0.0; rows * n];
                        for r in 0..rows {
                            let p = &probs[r * n..(r + 1) * n];
                            let raw = &rd[r * n..(r + 1) * n];
                            let gk = &gt[r * g..(r + 1) * g];
                            // gradient wrt spacing i: Σ_{j > i} g_j, scaled
                            let mut gp = vec![0.0; n];
                            let mut suffix = 0.0;
                            for i in (0..n).rev() {
                                suffix += gk[i + 1];
                                gp[i] = amp * suffix;
                            }
                            let mean: f64 = gp.iter().zip(p).map(|(a, b)| a * b).sum();
                            for l in 0..n {
                                gr[r * n + l] = p[l] * (gp[l] - mean) * log_softplus_slope(raw[l]);
                            }
                        }
                        vec![Some(gr)]
                    }),
                )
            }
        }
    }

    /// Knot values without recording on a tape.
    pub fn values(&self, raw: Option<&Tensor>) -> Result<Tensor> {
        self.materialize(&mut Tape::no_grad(), raw)
    }
}

/// `ln softplus(r)`, finite for every finite `r`.
fn log_softplus(r: f64) -> f64 {
    if r < -30.0 {
        // softplus(r) = e^r (1 - e^r / 2 + ...)
        r + (-0.5 * r.exp()).ln_1p()
    } else {
        (r.max(0.0) + (-r.abs()).exp().ln_1p()).ln()
    }
}

/// `d/dr ln softplus(r) = σ(r) / softplus(r)`.
fn log_softplus_slope(r: f64) -> f64 {
    if r < -30.0 {
        1.0
    } else {
        let sp = r.max(0.0) + (-r.abs()).exp().ln_1p();
        super::activation::sigmoid(r) / sp
    }
}

/// `softplus(r_i) / Σ softplus(r)`, computed in the log domain.
fn softplus_normalize(raw: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = raw.iter().map(|&r| log_softplus(r)).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{check_gradients, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn learnable(g: usize, sharing: KnotSharing) -> KnotSet {
        KnotSet::new(KnotMode::Learnable, sharing, (-1.0, 1.0), g).unwrap()
    }

    #[test]
    fn fixed_grid() {
        let ks = KnotSet::new(KnotMode::Fixed, KnotSharing::Shared, (-1.0, 1.0), 3).unwrap();
        assert_eq!(ks.values(None).unwrap().data(), &[-1.0, 0.0, 1.0]);
        let one = KnotSet::new(KnotMode::Fixed, KnotSharing::Shared, (-1.0, 1.0), 1).unwrap();
        assert_eq!(one.values(None).unwrap().data(), &[-1.0]);
        let ind = KnotSet::new(KnotMode::Fixed, KnotSharing::Individual(2), (0.0, 1.0), 2).unwrap();
        assert_eq!(ind.values(None).unwrap().data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(KnotSet::new(KnotMode::Fixed, KnotSharing::Shared, (-1.0, 1.0), 0).is_err());
        assert!(KnotSet::new(KnotMode::Fixed, KnotSharing::Shared, (1.0, -1.0), 3).is_err());
    }

    #[test]
    fn equal_raw_gives_equal_spacing() {
        let ks = learnable(9, KnotSharing::Shared);
        let fixed = KnotSet { mode: KnotMode::Fixed, ..ks.clone() }.fixed_grid();
        for c in [-3.0, 0.0, 2.5] {
            let raw = Tensor::full(1, 8, c);
            let t = ks.values(Some(&raw)).unwrap();
            for (a, b) in t.data().iter().zip(&fixed) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn strictly_increasing_for_random_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ks = learnable(8, KnotSharing::Individual(3));
        for _ in 0..10_000 {
            let scale = 10f64.powf(rng.random_range(-2.0..3.0));
            let raw: Vec<f64> = (0..21).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let t = ks.values(Some(&Tensor::new(3, 7, raw).unwrap())).unwrap();
            for r in 0..3 {
                let row = t.row_slice(r);
                assert_eq!(row[0], -1.0);
                assert_eq!(row[7], 1.0);
                assert!(row.windows(2).all(|w| w[0] < w[1]), "{row:?}");
            }
        }
    }

    #[test]
    fn extreme_raw_stays_finite_and_ordered() {
        let ks = learnable(4, KnotSharing::Shared);
        let raw = Tensor::row(&[-1e6, 1e6, -800.0]);
        let t = ks.values(Some(&raw)).unwrap();
        assert!(t.is_finite());
        assert!(t.data().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let ks = learnable(6, KnotSharing::Individual(2));
            let raw: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = Tensor::new(2, 6, w).unwrap();
            let r = check_gradients(
                &[Tensor::new(2, 5, raw).unwrap()],
                |t, xs| {
                    let k = ks.materialize(t, Some(&xs[0]))?;
                    let k3 = t.pow_int(&k, 3)?;
                    let z = t.mul(&k3, &w)?;
                    t.sum(&z)
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.max_rel_err < 1e-5, "{r:?}");
        }
    }

    #[test]
    fn raw_shape_checked() {
        let ks = learnable(4, KnotSharing::Shared);
        assert!(ks.values(Some(&Tensor::zeros(1, 4))).is_err());
        assert!(ks.values(None).is_err());
        assert_eq!(ks.param_count(), 3);
    }
}
