//! Forward-pass operation counts.
//!
//! Counting sheet (one multiply or add is one operation; `exp`, `sin` and a
//! division count as one; biases and the final sums over edges are not
//! counted, matching the dense convention `2·in·out`). Let `b` be the
//! batch, `E` the number of active edges, `d` the input width.
//!
//! | layer | per input element (`b·d`) | per edge and sample (`b·E`) | per forward |
//! |---|---|---|---|
//! | dense | | 2 | |
//! | TruKAN, shared knots | `G·k` truncated powers | `2G + 2(k+1)` | |
//! | TruKAN, individual knots | | `G(k+2) + 2(k+1)` | |
//! | TruKAN SiLU base | 4 | 2 | |
//! | B-spline KAN | `4` SiLU + `6·Σ_{p=1..k}(p+1)` de Boor | `2(G+k) + 2` | `E·(G+k+1)` scale products |
//! | SineKAN (`g` terms) | `3g` | `2g` | |
//! | layer/batch norm | 8 | | |
//! | ReLU | 1 | | |
//!
//! Dropout is free at inference. The per-forward term makes KAN counts
//! affine rather than linear in the batch.

use crate::layers::{EdgeLayer, Layer, Network};

/// Forward operations for one layer with input width `d`.
pub fn layer_flops(layer: &Layer, d: usize, batch: usize) -> u64 {
    let (b, d) = (batch as u64, d as u64);
    match layer {
        Layer::Dense(l) => 2 * b * l.in_dim as u64 * l.out_dim as u64,
        Layer::Trukan(l) => {
            let (g, k) = (l.config.grid as u64, l.config.order as u64);
            let e = l.active_edges() as u64;
            let (mut per_in, mut per_edge) = if l.config.individual {
                (0, g * (k + 2) + 2 * (k + 1))
            } else {
                (g * k, 2 * g + 2 * (k + 1))
            };
            if l.base.is_some() {
                per_in += 4;
                per_edge += 2;
            }
            b * (d * per_in + e * per_edge)
        }
        Layer::Kan(l) => {
            let (g, k) = (l.config.grid as u64, l.config.order as u64);
            let e = l.active_edges() as u64;
            let de_boor: u64 = (1..=k).map(|p| 6 * (p + 1)).sum();
            b * (d * (4 + de_boor) + e * (2 * (g + k) + 2)) + e * (g + k + 1)
        }
        Layer::Sinekan(l) => {
            let g = l.config.grid as u64;
            b * (d * 3 * g + l.active_edges() as u64 * 2 * g)
        }
        Layer::LayerNorm(_) | Layer::BatchNorm(_) => 8 * b * d,
        Layer::Relu => b * d,
        Layer::Dropout(_) => 0,
    }
}

/// Forward operations of `net` on `batch` samples.
pub fn estimate_flops(net: &Network, batch: usize) -> u64 {
    let mut d = net.in_dim;
    let mut total = 0;
    for l in &net.layers {
        total += layer_flops(l, d, batch);
        d = l.out_dim(d);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::kan::{KanConfig, ScaleMode};
    use crate::layers::sinekan::{SineKanConfig, SineKanLayer};
    use crate::layers::trukan::TruKanConfig;
    use crate::layers::{build_classifier, HeadKind, HeadParams, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(i: usize, o: usize) -> Network {
        let mut store = ParamStore::new();
        let l = crate::layers::dense::Dense::new(&mut store, "d", i, o, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        Network::new(i, vec![Layer::Dense(l)], store).unwrap()
    }

    #[test]
    fn dense_count() {
        assert_eq!(estimate_flops(&dense(10, 5), 1), 100);
    }

    #[test]
    fn linear_in_batch_and_pure() {
        let mut cfg = TruKanConfig::new(1, 1, 8, 3);
        for individual in [false, true] {
            cfg.individual = individual;
            let net = Network::trukan_stack(&[4, 5, 2], &cfg, 0).unwrap();
            assert_eq!(estimate_flops(&net, 64), 2 * estimate_flops(&net, 32));
            assert_eq!(estimate_flops(&net, 7), estimate_flops(&net.clone(), 7));
        }
        for kind in HeadKind::ALL {
            let net = build_classifier(kind, 16, 8, 4, &HeadParams::default(), 0).unwrap();
            let f: Vec<u64> = (1..6).map(|b| estimate_flops(&net, b)).collect();
            assert!(f.windows(2).all(|w| w[1] > w[0]), "{kind}");
            // affine: constant increments
            assert!(f.windows(3).all(|w| w[2] - w[1] == w[1] - w[0]), "{kind}");
            assert_eq!(f, (1..6).map(|b| estimate_flops(&net, b)).collect::<Vec<_>>());
        }
    }

    #[test]
    fn truncated_edge_formula() {
        let mut cfg = TruKanConfig::new(1, 1, 8, 3);
        cfg.individual = true;
        let net = Network::trukan_stack(&[10, 5], &cfg, 0).unwrap();
        assert_eq!(estimate_flops(&net, 3), 3 * 10 * 5 * (8 * 5 + 4 * 2));
    }

    #[test]
    fn pruned_edges_are_free() {
        let mut net = Network::trukan_stack(&[3, 2], &TruKanConfig::new(1, 1, 4, 3), 0).unwrap();
        let before = estimate_flops(&net, 10);
        let (layers, store) = net.parts_mut();
        layers[0].as_edge_mut().unwrap().remove_edge(store, 0, 0);
        assert_eq!(before - estimate_flops(&net, 10), 10 * (2 * 4 + 2 * 4));
    }

    #[test]
    fn matched_budget_ordering() {
        // 512 → 256 at G=8, k=3, widths matched to the shared TruKAN budget
        let (i, b) = (512, 512);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fs = Network::trukan_stack(&[i, 256], &TruKanConfig::new(1, 1, 8, 3), 0).unwrap();
        let mut fi_cfg = TruKanConfig::new(1, 1, 8, 3);
        fi_cfg.individual = true;
        let fi = Network::trukan_stack(&[i, 256], &fi_cfg, 0).unwrap();
        let pbf = Network::kan_stack(&[i, 256], &KanConfig::new(1, 1, 8, 3, ScaleMode::Pbf), 0).unwrap();
        let pbt = Network::kan_stack(&[i, 219], &KanConfig::new(1, 1, 8, 3, ScaleMode::Pbt), 0).unwrap();
        let s = SineKanLayer::new(&mut store, "s", SineKanConfig { in_dim: i, out_dim: 256, grid: 12 }, &mut rng).unwrap();
        let sine = Network::new(i, vec![Layer::Sinekan(s)], store).unwrap();
        let [fs, fi, pbf, pbt, sine] = [&fs, &fi, &pbf, &pbt, &sine].map(|n| estimate_flops(n, b) as f64);
        assert!(pbt < sine && sine < pbf);
        assert!((fs / pbf - 1.0).abs() < 0.1);
        assert!(fs <= fi);
    }
}
