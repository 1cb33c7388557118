//! Parameter groups with role-aware hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ParamId, ParamStore};

pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub params: Vec<ParamId>,
    /// Peak learning rate; the schedule scales from here.
    pub lr: f64,
    pub weight_decay: f64,
    pub decay_exempt: bool,
}

/// Learning-rate layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrPreset {
    /// One rate for everything (5e-4 by default).
    Single { lr: f64 },
    /// Separate rates for the body and the final layer, for fine-tuning a
    /// pre-trained body (1e-4 and 1e-3 by default).
    FineTune { backbone_lr: f64, head_lr: f64 },
}

impl Default for LrPreset {
    fn default() -> Self {
        LrPreset::Single { lr: 5e-4 }
    }
}

impl LrPreset {
    pub fn fine_tune() -> Self {
        LrPreset::FineTune { backbone_lr: 1e-4, head_lr: 1e-3 }
    }
}

/// Splits the trainable parameters of `store` into groups. Knots,
/// normalization affine parameters and buffers land in zero-decay groups;
/// `head` lists the parameters that get the head rate under
/// [`LrPreset::FineTune`].
pub fn build_groups(store: &ParamStore, preset: LrPreset, weight_decay: f64, head: &[ParamId]) -> Result<Vec<ParamGroup>> {
    let tiers: Vec<(&str, f64, Box<dyn Fn(ParamId) -> bool>)> = match preset {
        LrPreset::Single { lr } => vec![("all", lr, Box::new(|_| true))],
        LrPreset::FineTune { backbone_lr, head_lr } => {
            let h: Vec<ParamId> = head.to_vec();
            let h2 = h.clone();
            vec![
                ("backbone", backbone_lr, Box::new(move |id| !h.contains(&id))),
                ("head", head_lr, Box::new(move |id| h2.contains(&id))),
            ]
        }
    };
    let mut groups = Vec::new();
    for (tier, lr, member) in &tiers {
        if !(lr.is_finite() && *lr >= 0.0) {
            return Err(Error::invalid("param_groups", format!("invalid learning rate {lr}")));
        }
        for exempt in [false, true] {
            let params: Vec<ParamId> = store
                .iter()
                .filter(|(id, p)| p.trainable && p.role.decay_exempt() == exempt && member(*id))
                .map(|(id, _)| id)
                .collect();
            if params.is_empty() {
                continue;
            }
            groups.push(ParamGroup {
                name: format!("{tier}/{}", if exempt { "no_decay" } else { "decay" }),
                params,
                lr: *lr,
                weight_decay: if exempt { 0.0 } else { weight_decay },
                decay_exempt: exempt,
            });
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::knots::KnotMode;
    use crate::layers::classifier::{build_classifier, HeadKind, HeadParams};
    use crate::layers::ParamRole;

    #[test]
    fn every_trainable_param_in_exactly_one_group() {
        let hp = HeadParams { knot_mode: KnotMode::Learnable, ..HeadParams::default() };
        for kind in HeadKind::ALL {
            let net = build_classifier(kind, 6, 5, 3, &hp, 0).unwrap();
            let head: Vec<ParamId> = net.layers.last().unwrap().param_entries().iter().map(|e| e.0).collect();
            for preset in [LrPreset::default(), LrPreset::fine_tune()] {
                let groups = build_groups(&net.store, preset, 1e-4, &head).unwrap();
                for id in net.store.trainable_ids() {
                    let n = groups.iter().filter(|g| g.params.contains(&id)).count();
                    assert_eq!(n, 1);
                }
                for g in &groups {
                    for &id in &g.params {
                        let role = net.store.get(id).role;
                        if matches!(role, ParamRole::Knots | ParamRole::NormAffine) {
                            assert_eq!(g.weight_decay, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fine_tune_rates() {
        let net = build_classifier(HeadKind::Mlp, 4, 3, 2, &HeadParams::default(), 0).unwrap();
        let head: Vec<ParamId> = net.layers.last().unwrap().param_entries().iter().map(|e| e.0).collect();
        let groups = build_groups(&net.store, LrPreset::fine_tune(), 1e-4, &head).unwrap();
        for g in groups {
            let want = if g.name.starts_with("head") { 1e-3 } else { 1e-4 };
            assert_eq!(g.lr, want);
        }
    }
}
