use serde::{Deserialize, Serialize};

use super::groups::ParamGroup;
use crate::error::{Error, Result};
use crate::layers::{Grads, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with decoupled weight decay and bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    /// Indexed by parameter id.
    pub moments: Vec<Option<Moments>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, step: 0, moments: Vec::new() }
    }

    /// One update of every parameter in `groups`; `lrs[g]` is the current
    /// rate of group `g`.
    pub fn step(&mut self, store: &mut ParamStore, groups: &[ParamGroup], lrs: &[f64], grads: &Grads) -> Result<()> {
        for g in groups {
            for &id in &g.params {
                if grads.get(id).is_none() {
                    return Err(Error::MissingGradient(store.get(id).name.clone()));
                }
            }
        }
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (g, &lr) in groups.iter().zip(lrs) {
            let decay = 1.0 - lr * g.weight_decay;
            for &id in &g.params {
                let grad = grads.get(id).expect("checked above");
                let theta = store.value_mut(id).data_mut();
                if self.moments.len() <= id.0 {
                    self.moments.resize(id.0 + 1, None);
                }
                let mo = self.moments[id.0].get_or_insert_with(|| Moments {
                    m: vec![0.0; theta.len()],
                    v: vec![0.0; theta.len()],
                });
                for (((t, &gr), m), v) in theta.iter_mut().zip(grad).zip(mo.m.iter_mut()).zip(mo.v.iter_mut()) {
                    *t *= decay;
                    *m = beta1 * *m + (1.0 - beta1) * gr;
                    *v = beta2 * *v + (1.0 - beta2) * gr * gr;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *t -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{ParamId, ParamRole};
    use crate::tensor::Tensor;

    fn setup(theta: &[f64], wd: f64, lr: f64) -> (ParamStore, Vec<ParamGroup>) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row(theta), ParamRole::Weights, true);
        let g = ParamGroup { name: "g".into(), params: vec![id], lr, weight_decay: wd, decay_exempt: false };
        (store, vec![g])
    }

    fn grads(v: &[f64]) -> Grads {
        let mut g = Grads::new(1);
        g.set(ParamId(0), v.to_vec());
        g
    }

    #[test]
    fn zero_gradient_zero_decay_is_noop() {
        let (mut store, groups) = setup(&[1.0, -2.0], 0.0, 0.1);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut store, &groups, &[0.1], &grads(&[0.0, 0.0])).unwrap();
        assert_eq!(store.value(ParamId(0)).data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut store, groups) = setup(&[0.5, 0.25], 0.0, 0.01);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut store, &groups, &[0.01], &grads(&[1.0, 1.0])).unwrap();
        for (v, start) in store.value(ParamId(0)).data().iter().zip([0.5, 0.25]) {
            assert!((start - v - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn decoupled_decay_exact() {
        let (mut store, groups) = setup(&[3.0], 0.5, 0.1);
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut want = 3.0;
        for _ in 0..5 {
            opt.step(&mut store, &groups, &[0.1], &grads(&[0.0])).unwrap();
            want *= 1.0 - 0.1 * 0.5;
            assert_eq!(store.value(ParamId(0)).data()[0], want);
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let (mut store, groups) = setup(&[1.0], 0.0, 0.1);
        let mut opt = AdamW::new(AdamWConfig::default());
        for _ in 0..100 {
            let t = store.value(ParamId(0)).data()[0];
            opt.step(&mut store, &groups, &[0.1], &grads(&[2.0 * t])).unwrap();
        }
        assert!(store.value(ParamId(0)).data()[0].abs() < 0.05);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let (mut store, groups) = setup(&[1.0], 0.0, 0.1);
        let mut opt = AdamW::new(AdamWConfig::default());
        let err = opt.step(&mut store, &groups, &[0.1], &Grads::new(1)).unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }
}
