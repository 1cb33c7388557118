//! Layers, networks and checkpoints.

pub mod checkpoint;
pub mod classifier;
pub mod convert;
pub mod dense;
pub mod dropout;
pub mod edge;
pub mod kan;
pub mod network;
pub mod norm;
pub mod params;
pub mod sinekan;
pub mod spec;
pub mod trukan;

pub use checkpoint::Checkpoint;
pub use classifier::{build_classifier, HeadKind, HeadParams};
pub use edge::EdgeLayer;
pub use network::{Layer, Network, ParamCount};
pub use params::{Ctx, Grads, Mode, ParamId, ParamRole, ParamStore};
pub use spec::ModelSpec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::tensor::{check_gradients, GradCheckOptions, GradCheckReport, Tape, Tensor};

/// Finite-difference check of `forward` with respect to every trainable
/// parameter in `store` and the input `x`, through the scalar
/// `Σ forward(x) ⊙ W` for a fixed random `W`. Runs in training mode with a
/// fixed dropout seed.
pub fn check_layer<F>(
    store: &ParamStore,
    x: &Tensor,
    seed: u64,
    opts: &GradCheckOptions,
    forward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx, &Tensor) -> Result<Tensor>,
{
    let ids = store.trainable_ids();
    let probe = forward(&mut Ctx::new(store, Tape::no_grad(), Mode::Train, seed), x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = Tensor::new(
        probe.rows(),
        probe.cols(),
        (0..probe.len()).map(|_| StandardNormal.sample(&mut rng)).collect(),
    )?;
    let mut inputs: Vec<Tensor> = ids.iter().map(|&id| store.value(id).clone()).collect();
    inputs.push(x.clone());
    check_gradients(
        &inputs,
        |t, xs| {
            let tape = std::mem::replace(t, Tape::no_grad());
            let mut ctx = Ctx::new(store, tape, Mode::Train, seed);
            for (n, &id) in ids.iter().enumerate() {
                ctx.set_override(id, xs[n].clone());
            }
            let y = forward(&mut ctx, &xs[ids.len()])?;
            let yw = ctx.tape.mul(&y, &w)?;
            let out = ctx.tape.sum(&yw)?;
            *t = ctx.into_parts().0;
            Ok(out)
        },
        opts,
    )
}
