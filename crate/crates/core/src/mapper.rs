//! Genetic-algorithm search over tile sizes and loop orders for one layer.
//!
//! Chromosome: seven tile sizes (drawn from the divisors of each dimension)
//! plus a loop-order permutation. Fitness is latency from the analytical
//! model with the crypto throughput as effective bandwidth. Elitism keeps
//! the best two individuals, so best-of-generation latency never regresses.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costmodel::{estimate_layer, CostError, CostReport, HardwareConfig, Mapping};
use crate::workload::{Dim, LayerSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population: usize,
    pub max_generations: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub seed: u64,
    /// Relative improvement below which a generation counts as stagnant.
    pub convergence_pct: f64,
    /// Consecutive stagnant generations that stop the search.
    pub stagnant_generations: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 32,
            max_generations: 60,
            mutation_rate: 0.4,
            crossover_rate: 0.8,
            seed: 0,
            convergence_pct: 0.05,
            stagnant_generations: 2,
        }
    }
}

impl GaParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Retained mappings for one layer after the 10%-overhead cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub layer_index: usize,
    /// Ascending by latency.
    pub mappings: Vec<(Mapping, CostReport)>,
    pub k: usize,
}

fn divisors(v: u64) -> Vec<u64> {
    let mut out = Vec::new();
    for d in 1..=v {
        if v % d == 0 {
            out.push(d);
        }
    }
    out
}

struct Evaluator<'a> {
    layer: &'a LayerSpec,
    hw: &'a HardwareConfig,
    cache: BTreeMap<Mapping, Option<CostReport>>,
}

impl<'a> Evaluator<'a> {
    fn eval(&mut self, m: &Mapping) -> Option<CostReport> {
        if let Some(r) = self.cache.get(m) {
            return r.clone();
        }
        let r = estimate_layer(self.layer, m, self.hw, self.hw.crypto_bw).ok();
        self.cache.insert(*m, r.clone());
        r
    }
}

/// Explore the mapping space of one layer. Returns the final population,
/// deduplicated and sorted ascending by latency. Deterministic in
/// `params.seed`.
pub fn explore_layer(
    layer: &LayerSpec,
    hw: &HardwareConfig,
    params: &GaParams,
) -> Result<Vec<(Mapping, CostReport)>, CostError> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let bounds = layer.loop_bounds();
    let choices: Vec<Vec<u64>> = bounds.iter().map(|&b| divisors(b)).collect();

    let mut ev = Evaluator {
        layer,
        hw,
        cache: BTreeMap::new(),
    };
    if ev.eval(&Mapping::unit()).is_none() {
        return Err(CostError::InfeasibleLayer {
            layer: layer.name.clone(),
        });
    }

    let random_mapping = |rng: &mut ChaCha8Rng| -> Mapping {
        let mut tile = [1u64; 7];
        for (i, c) in choices.iter().enumerate() {
            tile[i] = c[rng.gen_range(0..c.len())];
        }
        let mut loop_order = Dim::ALL;
        loop_order.shuffle(rng);
        Mapping { tile, loop_order }
    };

    let pop_size = params.population.max(2);
    let mut population = Vec::with_capacity(pop_size);
    population.push(Mapping::unit());
    while population.len() < pop_size {
        population.push(random_mapping(&mut rng));
    }

    let mut best_history: Vec<u64> = Vec::new();
    let mut stagnant = 0usize;
    for _gen in 0..params.max_generations.max(1) {
        // Rank feasible individuals; ties broken by the mapping itself so
        // the ordering is total and deterministic.
        let mut ranked: Vec<(u64, Mapping)> = population
            .iter()
            .filter_map(|m| ev.eval(m).map(|r| (r.latency, *m)))
            .collect();
        ranked.sort_unstable();
        ranked.dedup();

        let best = ranked[0].0;
        if let Some(&prev) = best_history.last() {
            let improved = (prev - best) as f64 >= params.convergence_pct * prev as f64;
            if improved {
                stagnant = 0;
            } else {
                stagnant += 1;
            }
        }
        best_history.push(best);
        if stagnant >= params.stagnant_generations {
            break;
        }

        let mut next = Vec::with_capacity(pop_size);
        for (_, m) in ranked.iter().take(2) {
            next.push(*m);
        }
        // A couple of random immigrants keep small populations diverse.
        for _ in 0..2 {
            if next.len() < pop_size {
                next.push(random_mapping(&mut rng));
            }
        }
        let tournament = |rng: &mut ChaCha8Rng| -> Mapping {
            let a = rng.gen_range(0..ranked.len());
            let b = rng.gen_range(0..ranked.len());
            let c = rng.gen_range(0..ranked.len());
            ranked[a.min(b).min(c)].1
        };
        while next.len() < pop_size {
            let pa = tournament(&mut rng);
            let pb = tournament(&mut rng);
            let mut child = pa;
            if rng.gen::<f64>() < params.crossover_rate {
                let point = rng.gen_range(1..7);
                child.tile[point..7].copy_from_slice(&pb.tile[point..7]);
            }
            if rng.gen::<f64>() < params.mutation_rate {
                if rng.gen::<bool>() {
                    let d = rng.gen_range(0..7);
                    child.tile[d] = choices[d][rng.gen_range(0..choices[d].len())];
                } else {
                    let a = rng.gen_range(0..7);
                    let b = rng.gen_range(0..7);
                    child.loop_order.swap(a, b);
                }
            }
            next.push(child);
        }
        population = next;
    }

    let mut final_set: BTreeMap<Mapping, CostReport> = BTreeMap::new();
    for m in &population {
        if let Some(r) = ev.eval(m) {
            final_set.insert(*m, r);
        }
    }
    let mut out: Vec<(Mapping, CostReport)> = final_set.into_iter().collect();
    out.sort_by(|a, b| (a.1.latency, &a.0).cmp(&(b.1.latency, &b.0)));
    Ok(out)
}

/// Keep candidates within 10% of the best latency and size `k` from the
/// layer's share of model runtime: `k = clamp(2 + round(14 * share), 2, 16)`,
/// further capped by the number of survivors.
pub fn select_k(
    candidates: &[(Mapping, CostReport)],
    layer_index: usize,
    layer_runtime_share: f64,
) -> TopK {
    assert!(!candidates.is_empty(), "select_k needs a non-empty candidate list");
    let best = candidates[0].1.latency;
    let survivors: Vec<(Mapping, CostReport)> = candidates
        .iter()
        .filter(|(_, r)| r.latency * 10 <= best * 11)
        .cloned()
        .collect();
    let heuristic = (2.0 + libm::round(14.0 * layer_runtime_share)) as usize;
    let k = heuristic.clamp(2, 16).min(survivors.len());
    TopK {
        layer_index,
        mappings: survivors.into_iter().take(k).collect(),
        k,
    }
}
