#![allow(dead_code)]

use drawlab::model::{Instance, InstanceDocument, TeamEntry};
use drawlab::oracle::enumerate_uniform;
use drawlab::DrawError;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONFEDERATIONS: [&str; 5] = ["Europe", "Africa", "Asia", "North America", "South America"];

/// A random feasible instance with 2..=3 pots of 3..=5 teams, random
/// confederations, hosts and forbidden pairs, plus a random scenario id.
pub fn random_case(seed: u64) -> (Instance, u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let pots = rng.random_range(2..=3);
        let n = rng.random_range(3..=5);
        let pot_docs: Vec<Vec<TeamEntry>> = (0..pots)
            .map(|p| {
                (0..n)
                    .map(|i| TeamEntry {
                        name: format!("p{}t{}", p + 1, i + 1),
                        confederation: CONFEDERATIONS
                            [if rng.random_bool(0.5) { 0 } else { rng.random_range(1..5) }]
                        .to_string(),
                    })
                    .collect()
            })
            .collect();
        let mut names: Vec<String> = pot_docs.iter().flatten().map(|t| t.name.clone()).collect();
        names.shuffle(&mut rng);
        let hosts = rng.random_range(0..=n);
        let host_exclusion = names[..hosts].to_vec();
        let mut forbidden_pairs = Vec::new();
        for _ in 0..rng.random_range(0..=2) {
            let (a, b) = (rng.random_range(0..pots), rng.random_range(0..pots));
            if a != b {
                forbidden_pairs.push([
                    format!("p{}t{}", a + 1, rng.random_range(1..=n)),
                    format!("p{}t{}", b + 1, rng.random_range(1..=n)),
                ]);
            }
        }
        forbidden_pairs.sort();
        forbidden_pairs.dedup();
        let doc = InstanceDocument {
            name: format!("random-{seed}"),
            confederations: CONFEDERATIONS.iter().map(|s| s.to_string()).collect(),
            europe: Some("Europe".into()),
            host_exclusion,
            forbidden_pairs,
            pots: pot_docs,
        };
        let Ok(inst) = Instance::from_document(doc) else { continue };
        let scenario = rng.random_range(0..32);
        let cs = drawlab::model::scenario_constraints(scenario).unwrap();
        match enumerate_uniform(&inst, cs) {
            Ok(_) => return (inst, scenario),
            Err(DrawError::Infeasible) => continue,
            Err(e) => panic!("{e}"),
        }
    }
}

/// Largest standardized deviation between empirical and exact matrices,
/// and whether every exact zero (or one) was reproduced exactly.
pub fn compare_matrices(
    empirical: &drawlab::metrics::PairMatrixSet,
    exact: &drawlab::metrics::ExactPairMatrixSet,
    trials: u64,
) -> (f64, bool) {
    let mut worst = 0.0f64;
    let mut degenerate_ok = true;
    for (eb, xb) in empirical.blocks.iter().zip(&exact.blocks) {
        for (&p_hat, x) in eb.iter().zip(xb) {
            let p = drawlab::metrics::rational_to_f64(x);
            let sd = (p * (1.0 - p) / trials as f64).sqrt();
            if sd == 0.0 {
                degenerate_ok &= p_hat == p;
            } else {
                worst = worst.max((p_hat - p).abs() / sd);
            }
        }
    }
    (worst, degenerate_ok)
}

