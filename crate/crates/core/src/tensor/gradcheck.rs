//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward function on a
//! non-recording tape, so it shares no code path with the backward rules
//! it checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator; gradients smaller than
    /// this are compared absolutely.
    pub denom_floor: f64,
    /// Check at most this many randomly chosen elements per input.
    pub max_elements: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            denom_floor: 1e-4,
            max_elements: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub per_input: Vec<f64>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// finite differences, for every input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let root = f(&mut tape, &leaves)?;
    if root.shape() != (1, 1) {
        return Err(Error::NotScalar(root.shape()));
    }
    if root.requires_grad() {
        tape.backward(&root)?;
    }

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::no_grad();
        f(&mut t, xs)?.item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    let mut work: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    for (idx, leaf) in leaves.iter().enumerate() {
        let n = inputs[idx].len();
        let analytic = tape
            .grad(leaf)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let elems: Vec<usize> = match opts.max_elements {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for e in elems {
            let orig = inputs[idx].data()[e];
            work[idx].data_mut()[e] = orig + opts.step;
            let fp = eval(&work)?;
            work[idx].data_mut()[e] = orig - opts.step;
            let fm = eval(&work)?;
            work[idx].data_mut()[e] = orig;
            let numeric = (fp - fm) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic[e], numeric, opts.denom_floor));
            checked += 1;
        }
        per_input.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_err: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(5, 7, &mut rng);
        let b = random(7, 3, &mut rng);
        let w = random(5, 3, &mut rng);
        let report = check_gradients(
            &[a, b],
            |t, xs| {
                let y = t.matmul(&xs[0], &xs[1])?;
                let yw = t.mul(&y, &w)?;
                t.sum(&yw)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
        assert_eq!(report.checked, 35 + 21);
    }

    #[test]
    fn elementwise_ops_over_seeds() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // keep clamp inputs away from the kink
            let mut a = random(3, 4, &mut rng);
            a.data_mut().iter_mut().for_each(|v| {
                if v.abs() < 1e-3 {
                    *v += 0.01
                }
            });
            let b = random(3, 4, &mut rng);
            let s = random(1, 1, &mut rng);
            let report = check_gradients(
                &[a, b, s],
                |t, xs| {
                    let c = t.clamp_min_zero(&xs[0])?;
                    let p = t.pow_int(&xs[1], 3)?;
                    let m = t.mul(&c, &p)?;
                    let d = t.sub(&m, &xs[1])?;
                    let e = t.mul(&xs[2], &d)?;
                    let f = t.add_scalar(&e, 0.5)?;
                    let g = t.add(&f, &xs[0])?;
                    t.mean(&g)
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.max_rel_err < 1e-4, "seed {seed}: {report:?}");
        }
    }
}
