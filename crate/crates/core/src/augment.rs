//! Edge dropping and feature-dimension masking on sampled views.

use rand::Rng;

use crate::error::{Result, RosaError};
use crate::graph::Subgraph;
use crate::rng::{self, Purpose};
use crate::sampling::ViewPair;

/// Augmentation strengths for the two views, indexed by view.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub p_edge: [f64; 2],
    pub p_feat: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_edge: [0.2, 0.2],
            p_feat: [0.3, 0.3],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for p in self.p_edge.iter().chain(&self.p_feat) {
            if !(0.0..1.0).contains(p) {
                return Err(RosaError::Config(format!("augmentation probability {p} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Removes each edge independently with probability `p`. Nodes are untouched.
pub fn drop_edges(sg: &Subgraph, p: f64, stream: u64) -> Subgraph {
    let mut rng = rng::stream(stream, Purpose::EdgeDrop, &[]);
    let edges = sg
        .edges
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() >= p)
        .collect();
    Subgraph {
        edges,
        ..sg.clone()
    }
}

/// Zeroes whole feature columns, each chosen independently with probability `p`.
pub fn mask_features(sg: &Subgraph, p: f64, stream: u64) -> Subgraph {
    let mut rng = rng::stream(stream, Purpose::FeatureMask, &[]);
    let mut out = sg.clone();
    for j in 0..out.features.ncols() {
        if rng.random::<f64>() < p {
            out.features.column_mut(j).fill(0.0);
        }
    }
    out
}

/// Applies both augmentations to both views of every pair.
/// `stream_base` should already encode the epoch; pair `k` view `v` uses
/// sub-streams derived from `(stream_base, k, v)`.
pub fn augment_batch(pairs: &[ViewPair], cfg: &AugmentConfig, stream_base: u64) -> Vec<ViewPair> {
    pairs
        .iter()
        .enumerate()
        .map(|(k, pair)| {
            let aug = |sg: &Subgraph, v: usize| {
                let s = rng::stream_seed(stream_base, Purpose::EdgeDrop, &[k as u64, v as u64]);
                let dropped = drop_edges(sg, cfg.p_edge[v], s);
                let s = rng::stream_seed(stream_base, Purpose::FeatureMask, &[k as u64, v as u64]);
                mask_features(&dropped, cfg.p_feat[v], s)
            };
            ViewPair {
                first: aug(&pair.first, 0),
                second: aug(&pair.second, 1),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy() -> Subgraph {
        Subgraph {
            central: 0,
            nodes: vec![0, 1, 2, 3],
            edges: vec![(0, 1), (0, 2), (1, 2), (2, 3), (1, 3)],
            features: Array2::from_shape_fn((4, 6), |(i, j)| 1.0 + (i * 6 + j) as f64),
        }
    }

    #[test]
    fn zero_probability_is_identity() {
        let sg = toy();
        assert_eq!(drop_edges(&sg, 0.0, 9), sg);
        assert_eq!(mask_features(&sg, 0.0, 9), sg);
    }

    #[test]
    fn near_certain_drop_keeps_nodes() {
        let sg = toy();
        let out = drop_edges(&sg, 0.999_999, 1);
        assert!(out.edges.is_empty());
        assert_eq!(out.nodes, sg.nodes);
        assert_eq!(out.central, sg.central);
        assert_eq!(out.features, sg.features);
    }

    #[test]
    fn masking_zeroes_whole_columns() {
        let sg = toy();
        let out = mask_features(&sg, 0.5, 3);
        for j in 0..6 {
            let col = out.features.column(j);
            if col.iter().any(|&v| v == 0.0) {
                assert!(col.iter().all(|&v| v == 0.0));
            } else {
                assert_eq!(col, sg.features.column(j));
            }
        }
    }

    #[test]
    fn config_bounds() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            p_edge: [1.0, 0.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
