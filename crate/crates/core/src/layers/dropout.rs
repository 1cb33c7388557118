use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::Ctx;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inverted dropout: active only in training mode, survivors scaled by
/// `1 / (1 - p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("probability {p} outside [0, 1)")));
        }
        Ok(Dropout { p })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        if !ctx.is_training() || self.p == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.p;
        let scale = 1.0 / keep;
        let rng = ctx.rng();
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let mask = Tensor::new(x.rows(), x.cols(), mask)?;
        ctx.tape.mul(x, &mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::params::ParamStore;

    #[test]
    fn zero_probability_and_eval_are_identity() {
        let store = ParamStore::new();
        let x = Tensor::row(&[1.0, -2.0, 3.0]);
        assert_eq!(Dropout::new(0.0).unwrap().forward(&mut Ctx::train(&store, 0), &x).unwrap(), x);
        assert_eq!(Dropout::new(0.5).unwrap().forward(&mut Ctx::eval(&store), &x).unwrap(), x);
        assert!(Dropout::new(1.0).is_err());
    }

    #[test]
    fn train_expectation_matches_eval() {
        let store = ParamStore::new();
        let x = Tensor::row(&[1.0, -2.0, 0.5, 3.0]);
        let d = Dropout::new(0.1).unwrap();
        let mut ctx = Ctx::train(&store, 42);
        let mut acc = [0.0; 4];
        let n = 100_000;
        for _ in 0..n {
            let y = d.forward(&mut ctx, &x).unwrap();
            acc.iter_mut().zip(y.data()).for_each(|(a, v)| *a += v);
        }
        for (a, want) in acc.iter().zip(x.data()) {
            let mean = a / n as f64;
            assert!((mean - want).abs() <= 0.01 * want.abs(), "{mean} vs {want}");
        }
    }
}
