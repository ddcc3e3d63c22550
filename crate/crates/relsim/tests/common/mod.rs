//! Shared fixtures for the integration and acceptance suites.
//!
//! The workhorse is a clustered knowledge base: entities live in 5 clusters,
//! and each relation connects one cluster pair through a deterministic
//! offset pairing (head i maps to tail i + offset). Relations sharing a
//! cluster pair but differing in offset are geometrically confusable (same
//! translation between cluster centroids) yet distributionally distinct,
//! which is exactly the regime where fact distributions and embedding
//! heuristics disagree.

#![allow(dead_code)]

use relsim::factdist::{self, FactDistParams, TrainConfig};
use relsim::kb::{self, TripleStore};
use relsim::redundancy::{merge_relations, toy_prf};
use relsim::kb::SplitGroundTruth;
use relsim::similarity::SimilarityMatrix;

pub const NUM_CLUSTERS: usize = 5;
pub const NUM_OFFSETS: usize = 4;

/// Cluster pairs used by the relation groups, one group per pair.
fn cluster_pairs() -> [(usize, usize); NUM_CLUSTERS] {
    [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]
}

/// Build the clustered KB: 20 relations named `g{group}_r{offset}`, each
/// with exactly `cluster_size` triples; entities `c{cluster}_e{i}`.
pub fn structured_kb(cluster_size: usize) -> TripleStore {
    let mut rows = Vec::new();
    for (g, &(a, b)) in cluster_pairs().iter().enumerate() {
        for off in 0..NUM_OFFSETS {
            let rel = format!("g{g}_r{off}");
            for i in 0..cluster_size {
                rows.push((
                    format!("c{a}_e{i}"),
                    rel.clone(),
                    format!("c{b}_e{}", (i + off * 7 + 1) % cluster_size),
                ));
            }
        }
    }
    TripleStore::from_named_triples(&rows).unwrap()
}

/// A KB whose confusable relations are separable: each group owns a disjoint
/// head/tail cluster pair, and sibling relations within a group map head `i`
/// to tail `i + shift` for small distinct shifts (no wraparound). Sibling
/// fact distributions overlap heavily (same heads, near-identical tails), yet
/// distinct optimal translation vectors exist, so hard negatives that
/// concentrate on siblings carry useful signal.
pub fn shifted_kb(num_groups: usize, shifts: usize, rows_per_relation: usize) -> TripleStore {
    let mut rows = Vec::new();
    for g in 0..num_groups {
        for s in 0..shifts {
            let rel = format!("h{g}_s{s}");
            for i in 0..rows_per_relation {
                rows.push((
                    format!("h{g}_e{i}"),
                    rel.clone(),
                    format!("t{g}_e{}", i + s),
                ));
            }
        }
    }
    TripleStore::from_named_triples(&rows).unwrap()
}

/// Group id (cluster pair) of a relation by name.
pub fn relation_group(name: &str) -> usize {
    name.strip_prefix('g')
        .and_then(|s| s.split('_').next())
        .and_then(|s| s.parse().ok())
        .expect("structured relation name")
}

/// Quick fact-distribution training configuration for desk-scale fixtures.
pub fn quick_factdist_config(seed: u64) -> TrainConfig {
    TrainConfig {
        embedding_dim: 16,
        hidden_dim: 32,
        learning_rate: 5e-3,
        batch_size: 256,
        max_epochs: 40,
        patience: 5,
        seed,
        ..TrainConfig::default()
    }
}

/// Split, train, and return the fitted parameters for a store.
pub fn train_factdist(store: &TripleStore, config: &TrainConfig) -> FactDistParams {
    let split = kb::split_validation(store, 0.1, config.seed).unwrap();
    factdist::train(&split.train, &split.valid, config).unwrap()
}

/// Best F1 over a threshold sweep across every observed off-diagonal score.
pub fn best_f1(sim: &SimilarityMatrix, truth: &SplitGroundTruth) -> f64 {
    let n = sim.num_relations();
    let mut thresholds: Vec<f64> = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            thresholds.push(sim.values[[a, b]]);
        }
    }
    thresholds.sort_by(|x, y| x.partial_cmp(y).unwrap());
    thresholds.dedup();
    let mut best = 0.0f64;
    for &lambda in &thresholds {
        let m = merge_relations(sim, lambda.min(1.0)).unwrap();
        let (_, _, f1) = toy_prf(&m, truth).unwrap();
        best = best.max(f1);
    }
    best
}
