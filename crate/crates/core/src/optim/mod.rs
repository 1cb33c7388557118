//! AdamW, LookAhead, parameter groups and the learning-rate schedule.

pub mod adamw;
pub mod groups;
pub mod lookahead;
pub mod schedule;

pub use adamw::{AdamW, AdamWConfig};
pub use groups::{build_groups, LrPreset, ParamGroup, DEFAULT_WEIGHT_DECAY};
pub use lookahead::{LookAhead, LookAheadConfig};
pub use schedule::Schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Grads, ParamStore};

pub const STATE_VERSION: u32 = 1;

/// Full optimizer state: groups, AdamW moments, optional LookAhead slow
/// weights and the schedule. Serializes alongside checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub state_version: u32,
    pub groups: Vec<ParamGroup>,
    pub adamw: AdamW,
    pub lookahead: Option<LookAhead>,
    pub schedule: Schedule,
}

impl Optimizer {
    pub fn new(
        store: &ParamStore,
        groups: Vec<ParamGroup>,
        adamw: AdamWConfig,
        lookahead: Option<LookAheadConfig>,
        schedule: Schedule,
    ) -> Result<Self> {
        schedule.validate()?;
        let mut seen = vec![false; store.len()];
        for g in &groups {
            for &id in &g.params {
                if id.0 >= store.len() || std::mem::replace(&mut seen[id.0], true) {
                    return Err(Error::invalid("optimizer", format!("parameter {} grouped twice or unknown", id.0)));
                }
            }
        }
        let mut la = lookahead.map(LookAhead::new);
        if let Some(la) = la.as_mut() {
            la.init(store, &groups);
        }
        Ok(Optimizer { state_version: STATE_VERSION, groups, adamw: AdamW::new(adamw), lookahead: la, schedule })
    }

    /// Current per-group learning rates at fractional epoch `epoch`.
    pub fn lrs(&self, epoch: f64) -> Vec<f64> {
        self.groups.iter().map(|g| self.schedule.lr_at(g.lr, epoch)).collect()
    }

    /// One optimizer step; returns the rates used.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, epoch: f64) -> Result<Vec<f64>> {
        let lrs = self.lrs(epoch);
        self.adamw.step(store, &self.groups, &lrs, grads)?;
        if let Some(la) = self.lookahead.as_mut() {
            la.after_step(store, &self.groups);
        }
        Ok(lrs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{ParamId, ParamRole};
    use crate::tensor::Tensor;

    fn quad_setup() -> (ParamStore, Vec<ParamGroup>) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row(&[1.0, -0.5]), ParamRole::Weights, true);
        let g = ParamGroup { name: "g".into(), params: vec![id], lr: 0.05, weight_decay: 1e-2, decay_exempt: false };
        (store, vec![g])
    }

    fn quad_grads(store: &ParamStore) -> Grads {
        let mut g = Grads::new(1);
        g.set(ParamId(0), store.value(ParamId(0)).data().iter().map(|t| 2.0 * t).collect());
        g
    }

    #[test]
    fn lookahead_k1_alpha1_is_bare_adamw() {
        let (mut s1, groups) = quad_setup();
        let mut s2 = s1.clone();
        let mut bare = Optimizer::new(&s1, groups.clone(), AdamWConfig::default(), None, Schedule::Constant).unwrap();
        let la = Some(LookAheadConfig { k: 1, alpha: 1.0 });
        let mut wrapped = Optimizer::new(&s2, groups, AdamWConfig::default(), la, Schedule::Constant).unwrap();
        for _ in 0..50 {
            let g1 = quad_grads(&s1);
            bare.step(&mut s1, &g1, 0.0).unwrap();
            let g2 = quad_grads(&s2);
            wrapped.step(&mut s2, &g2, 0.0).unwrap();
            assert_eq!(s1.value(ParamId(0)).data(), s2.value(ParamId(0)).data());
        }
    }

    /// Independent re-derivation of AdamW + LookAhead on f(θ) = θ².
    #[test]
    fn lookahead_matches_scripted_simulation() {
        let (mut store, groups) = quad_setup();
        let la = Some(LookAheadConfig::default());
        let mut opt = Optimizer::new(&store, groups, AdamWConfig::default(), la, Schedule::Constant).unwrap();
        let (lr, wd, b1, b2, eps) = (0.05f64, 1e-2f64, 0.9f64, 0.999f64, 1e-8f64);
        let mut theta = [1.0f64, -0.5];
        let mut slow = theta;
        let mut m = [0.0f64; 2];
        let mut v = [0.0f64; 2];
        for t in 1..=23 {
            let g1 = quad_grads(&store);
            opt.step(&mut store, &g1, 0.0).unwrap();
            for i in 0..2 {
                let g = 2.0 * theta[i];
                theta[i] -= lr * wd * theta[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                theta[i] -= lr * mh / (vh.sqrt() + eps);
            }
            if t % 5 == 0 {
                for i in 0..2 {
                    slow[i] += 0.5 * (theta[i] - slow[i]);
                    theta[i] = slow[i];
                }
            }
            for i in 0..2 {
                assert!((store.value(ParamId(0)).data()[i] - theta[i]).abs() < 1e-14, "step {t}");
            }
        }
    }

    #[test]
    fn state_round_trips_through_json() {
        let (mut store, groups) = quad_setup();
        let mut opt =
            Optimizer::new(&store, groups, AdamWConfig::default(), Some(LookAheadConfig::default()), Schedule::warmup_cosine(20)).unwrap();
        let g = quad_grads(&store);
        opt.step(&mut store, &g, 0.5).unwrap();
        let back: Optimizer = serde_json::from_str(&serde_json::to_string(&opt).unwrap()).unwrap();
        assert_eq!(back, opt);
    }

    #[test]
    fn duplicate_membership_rejected() {
        let (store, mut groups) = quad_setup();
        groups.push(groups[0].clone());
        assert!(Optimizer::new(&store, groups, AdamWConfig::default(), None, Schedule::Constant).is_err());
    }
}
