//! Random walk with restart sub-sampling of positive view pairs.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Result, RosaError};
use crate::graph::{induced_subgraph, Graph, Subgraph};
use crate::rng::{self, mix64, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Number of walk transitions; a jump back to the central node counts as one.
    pub walk_length: usize,
    pub restart_prob: f64,
    pub seed: u64,
    /// Reuse the first view's node set for the second view.
    pub aligned: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            walk_length: 10,
            restart_prob: 0.5,
            seed: 0,
            aligned: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walk_length == 0 {
            return Err(RosaError::Config("walk_length must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.restart_prob) {
            return Err(RosaError::Config(format!(
                "restart_prob must be in [0, 1], got {}",
                self.restart_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub first: Subgraph,
    pub second: Subgraph,
}

impl ViewPair {
    pub fn central(&self) -> usize {
        self.first.central
    }
}

/// Stream id for one view: `mix64(mix64(mix64(epoch) ^ central) ^ view)`.
pub fn view_stream(epoch: u64, central: usize, view: u64) -> u64 {
    mix64(mix64(mix64(epoch) ^ central as u64) ^ view)
}

/// Node set visited by a restart walk, in order of first visit.
fn walk_nodes(g: &Graph, central: usize, cfg: &SamplerConfig, stream: u64) -> Vec<usize> {
    let mut rng = rng::stream(cfg.seed, Purpose::Walk, &[stream]);
    let mut visited = vec![central];
    let mut seen = HashSet::from([central]);
    let mut current = central;
    for _ in 0..cfg.walk_length {
        let restart = rng.random::<f64>() < cfg.restart_prob;
        let nbrs = g.neighbors(current);
        current = if restart || nbrs.is_empty() {
            central
        } else {
            nbrs[rng.random_range(0..nbrs.len())]
        };
        if seen.insert(current) {
            visited.push(current);
        }
    }
    visited
}

/// One restart-walk view around `central`.
pub fn rwr_sample(g: &Graph, central: usize, cfg: &SamplerConfig, stream: u64) -> Result<Subgraph> {
    if central >= g.num_nodes() {
        return Err(RosaError::IndexOutOfRange {
            index: central,
            len: g.num_nodes(),
        });
    }
    induced_subgraph(g, &walk_nodes(g, central, cfg, stream))
}

/// Two independently walked views of the same central node.
pub fn sample_view_pair(g: &Graph, central: usize, cfg: &SamplerConfig, epoch: u64) -> Result<ViewPair> {
    let first = rwr_sample(g, central, cfg, view_stream(epoch, central, 0))?;
    let second = if cfg.aligned {
        first.clone()
    } else {
        rwr_sample(g, central, cfg, view_stream(epoch, central, 1))?
    };
    Ok(ViewPair { first, second })
}

/// One view pair per central node, in the given order.
pub fn sample_batch(g: &Graph, centrals: &[usize], cfg: &SamplerConfig, epoch: u64) -> Result<Vec<ViewPair>> {
    cfg.validate()?;
    let mut seen = HashSet::with_capacity(centrals.len());
    for &c in centrals {
        if !seen.insert(c) {
            return Err(RosaError::DuplicateNode(c));
        }
    }
    centrals
        .iter()
        .map(|&c| sample_view_pair(g, c, cfg, epoch))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_sbm;
    use ndarray::Array2;

    fn cycle(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::new(&edges, Array2::zeros((n, 2)), None, None).unwrap()
    }

    #[test]
    fn isolated_central_is_singleton() {
        let g = Graph::new(&[(1, 2)], Array2::zeros((3, 1)), None, None).unwrap();
        let sg = rwr_sample(&g, 0, &SamplerConfig::default(), 3).unwrap();
        assert_eq!(sg.nodes, vec![0]);
        assert!(sg.edges.is_empty());
    }

    #[test]
    fn same_stream_same_nodes() {
        let g = cycle(30);
        let cfg = SamplerConfig {
            restart_prob: 0.2,
            ..Default::default()
        };
        assert_eq!(rwr_sample(&g, 4, &cfg, 17).unwrap(), rwr_sample(&g, 4, &cfg, 17).unwrap());
    }

    #[test]
    fn full_restart_stays_home() {
        let g = cycle(10);
        let cfg = SamplerConfig {
            restart_prob: 1.0,
            ..Default::default()
        };
        assert_eq!(rwr_sample(&g, 3, &cfg, 0).unwrap().nodes, vec![3]);
    }

    #[test]
    fn pair_views_share_central() {
        let g = cycle(20);
        let cfg = SamplerConfig {
            restart_prob: 0.1,
            ..Default::default()
        };
        let pair = sample_view_pair(&g, 7, &cfg, 2).unwrap();
        assert_eq!(pair.first.nodes[0], 7);
        assert_eq!(pair.second.nodes[0], 7);
        // Non-aligned views are allowed to differ; nothing forces equality.
        let differing = (0..20)
            .filter(|&e| {
                let p = sample_view_pair(&g, 7, &cfg, e).unwrap();
                p.first.nodes != p.second.nodes
            })
            .count();
        assert!(differing > 0);
    }

    #[test]
    fn aligned_mode_copies_node_set() {
        let g = generate_sbm(2, 10, 0.5, 0.1, 2, 0.0, 1).unwrap();
        let cfg = SamplerConfig {
            aligned: true,
            ..Default::default()
        };
        for c in 0..20 {
            let p = sample_view_pair(&g, c, &cfg, 4).unwrap();
            assert_eq!(p.first.nodes, p.second.nodes);
        }
    }

    #[test]
    fn batch_order_and_duplicates() {
        let g = cycle(12);
        let cfg = SamplerConfig::default();
        assert_eq!(sample_batch(&g, &[5], &cfg, 0).unwrap().len(), 1);
        let batch = sample_batch(&g, &[3, 1, 8], &cfg, 0).unwrap();
        let centrals: Vec<_> = batch.iter().map(ViewPair::central).collect();
        assert_eq!(centrals, vec![3, 1, 8]);
        assert!(matches!(sample_batch(&g, &[1, 1], &cfg, 0), Err(RosaError::DuplicateNode(1))));
        assert_eq!(batch, sample_batch(&g, &[3, 1, 8], &cfg, 0).unwrap());
    }

    #[test]
    fn invalid_config_rejected() {
        let g = cycle(4);
        let cfg = SamplerConfig {
            walk_length: 0,
            ..Default::default()
        };
        assert!(sample_batch(&g, &[0], &cfg, 0).is_err());
    }
}
