use serde::{Deserialize, Serialize};

use super::groups::ParamGroup;
use crate::layers::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookAheadConfig {
    /// Sync interval `K`.
    pub k: u64,
    pub alpha: f64,
}

impl Default for LookAheadConfig {
    fn default() -> Self {
        LookAheadConfig { k: 5, alpha: 0.5 }
    }
}

/// Slow weights `φ`, pulled toward the fast weights every `K` inner steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookAhead {
    pub config: LookAheadConfig,
    pub counter: u64,
    /// Indexed by parameter id.
    pub slow: Vec<Option<Vec<f64>>>,
}

impl LookAhead {
    pub fn new(config: LookAheadConfig) -> Self {
        LookAhead { config, counter: 0, slow: Vec::new() }
    }

    /// Captures the starting point as the slow weights (idempotent).
    pub fn init(&mut self, store: &ParamStore, groups: &[ParamGroup]) {
        for g in groups {
            for &id in &g.params {
                if self.slow.len() <= id.0 {
                    self.slow.resize(id.0 + 1, None);
                }
                if self.slow[id.0].is_none() {
                    self.slow[id.0] = Some(store.value(id).data().to_vec());
                }
            }
        }
    }

    /// Call after every inner step; syncs when the counter hits a multiple
    /// of `K`. Returns whether a sync happened.
    pub fn after_step(&mut self, store: &mut ParamStore, groups: &[ParamGroup]) -> bool {
        self.init(store, groups);
        self.counter += 1;
        if self.config.k == 0 || self.counter % self.config.k != 0 {
            return false;
        }
        self.sync(store, groups);
        true
    }

    /// `φ ← (1 - α) φ + α θ`, then `θ ← φ`.
    pub fn sync(&mut self, store: &mut ParamStore, groups: &[ParamGroup]) {
        let a = self.config.alpha;
        for g in groups {
            for &id in &g.params {
                let Some(phi) = self.slow[id.0].as_mut() else { continue };
                let theta = store.value_mut(id).data_mut();
                for (p, t) in phi.iter_mut().zip(theta.iter_mut()) {
                    *p = (1.0 - a) * *p + a * *t;
                    *t = *p;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{ParamId, ParamRole};
    use crate::tensor::Tensor;

    #[test]
    fn half_interpolation() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0), ParamRole::Weights, true);
        let groups = vec![ParamGroup { name: "g".into(), params: vec![id], lr: 0.0, weight_decay: 0.0, decay_exempt: false }];
        let mut la = LookAhead::new(LookAheadConfig { k: 1, alpha: 0.5 });
        la.init(&store, &groups);
        store.value_mut(ParamId(0)).data_mut()[0] = 2.0;
        assert!(la.after_step(&mut store, &groups));
        assert_eq!(la.slow[0].as_ref().unwrap()[0], 1.0);
        assert_eq!(store.value(id).data()[0], 1.0);
    }
}
