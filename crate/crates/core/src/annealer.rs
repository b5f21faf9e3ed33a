//! Simulated annealing from per-layer top-k candidates to top-m model
//! mappings, with an energy-delay-product objective.
//!
//! The shaper must run one constant bandwidth across the whole model, so the
//! objective of a model mapping is the best EDP over a 16-step bandwidth
//! sweep between the highest and lowest per-layer plan bandwidths.

use alloc::vec::Vec;
use core::fmt;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costmodel::{zeroize_cost, BoundClass, CostReport, HardwareConfig, Mapping};
use crate::shapersizing::{ratio_to_f64, BandwidthPlan, Bw};

/// One fully resolved mapping choice for a layer: the mapping, its cost
/// report with trace counts at `h_opt`, and the sized bandwidth plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCandidate {
    pub mapping: Mapping,
    pub report: CostReport,
    pub h_opt: u64,
    pub per_h: Vec<(u64, u64)>,
    pub plan: BandwidthPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaParams {
    pub iterations: usize,
    /// Default: `0.1 * |EDP(initial)|`.
    pub t_init: Option<f64>,
    /// Default: `1e-4 * t_init`.
    pub t_final: Option<f64>,
    pub seed: u64,
    /// Parallel annealing instances.
    pub m: usize,
}

impl Default for SaParams {
    fn default() -> Self {
        Self {
            iterations: 1000,
            t_init: None,
            t_final: None,
            seed: 0,
            m: 40,
        }
    }
}

impl SaParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// One point of the model-mapping space: a candidate index per layer, the
/// equalized shaper bandwidth and the resulting EDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMapping {
    pub choice: Vec<usize>,
    pub model_bw: Bw,
    pub edp: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnnealError {
    EmptyLayer(usize),
    NoLayers,
    ZeroBandwidth,
}

impl fmt::Display for AnnealError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnealError::EmptyLayer(i) => write!(f, "layer {i} has no candidates"),
            AnnealError::NoLayers => write!(f, "no layers to anneal over"),
            AnnealError::ZeroBandwidth => write!(f, "shaper bandwidth must be positive"),
        }
    }
}

fn candidate<'a>(
    layers: &'a [Vec<LayerCandidate>],
    choice: &[usize],
    l: usize,
) -> &'a LayerCandidate {
    &layers[l][choice[l]]
}

/// Model EDP of one choice vector at a fixed shaper bandwidth.
///
/// Compute-bound layers keep their tiling-phase latency and pay fake-burst
/// energy for every unused dispatch slot; memory-bound layers take
/// `traffic / bw` cycles. In multi-tenant mode the per-layer zeroization
/// latency is added before the product.
pub fn energy_delay_cost(
    layers: &[Vec<LayerCandidate>],
    choice: &[usize],
    hw: &HardwareConfig,
    bw: Bw,
    multi_tenant: bool,
) -> Result<f64, AnnealError> {
    if *bw.numer() == 0 {
        return Err(AnnealError::ZeroBandwidth);
    }
    let mut total = 0.0;
    for l in 0..choice.len() {
        let c = candidate(layers, choice, l);
        let real =
            (c.plan.n_demand + c.plan.n_redundant + c.plan.n_integrity) as u128;
        let mut latency = match c.plan.class {
            BoundClass::Cb => c.report.latency as u128,
            BoundClass::Mb => (real * *bw.denom()).div_ceil(*bw.numer()),
        };
        if multi_tenant {
            latency += zeroize_cost(&c.report.peak_util_bits, hw) as u128;
        }
        let slots = bw * Ratio::from_integer(latency);
        let fake = if slots > Ratio::from_integer(real) {
            ratio_to_f64(slots - Ratio::from_integer(real))
        } else {
            0.0
        };
        let energy = c.report.energy + fake * hw.energy.fake_burst;
        total += energy * latency as f64;
    }
    Ok(total)
}

/// Sweep the shaper bandwidth from the highest per-layer plan value down to
/// the lowest in 16 equal steps and return the EDP-minimal point.
pub fn equalize_bandwidth(
    layers: &[Vec<LayerCandidate>],
    choice: &[usize],
    hw: &HardwareConfig,
    multi_tenant: bool,
) -> Result<(Bw, f64), AnnealError> {
    if choice.is_empty() {
        return Err(AnnealError::NoLayers);
    }
    let mut hi: Option<Bw> = None;
    let mut lo: Option<Bw> = None;
    for l in 0..choice.len() {
        let bw = candidate(layers, choice, l).plan.bw;
        hi = Some(hi.map_or(bw, |h: Bw| h.max(bw)));
        lo = Some(lo.map_or(bw, |h: Bw| h.min(bw)));
    }
    let (hi, lo) = (hi.unwrap(), lo.unwrap());
    let mut best: Option<(Bw, f64)> = None;
    let steps = if hi == lo { 0 } else { 16 };
    for t in 0..=steps {
        let bw = hi - (hi - lo) * Ratio::new(t as u128, 16);
        let edp = energy_delay_cost(layers, choice, hw, bw, multi_tenant)?;
        if best.as_ref().is_none_or(|&(_, b)| edp < b) {
            best = Some((bw, edp));
        }
    }
    Ok(best.unwrap())
}

/// Replace one uniformly random layer's choice (among layers that have more
/// than one candidate) with a different uniformly random index. Identity
/// when every layer has a single candidate.
pub fn get_neighbor(choice: &[usize], ks: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    let mut out = choice.to_vec();
    let movable: Vec<usize> = (0..ks.len()).filter(|&l| ks[l] >= 2).collect();
    if movable.is_empty() {
        return out;
    }
    let l = movable[rng.gen_range(0..movable.len())];
    let mut idx = rng.gen_range(0..ks[l] - 1);
    if idx >= out[l] {
        idx += 1;
    }
    out[l] = idx;
    out
}

/// Metropolis acceptance: always take improvements, otherwise accept with
/// probability `e^((cost - new_cost) / t)`.
pub fn sa_accept(cost: f64, new_cost: f64, t: f64, rng: &mut impl Rng) -> bool {
    if new_cost < cost {
        return true;
    }
    if t <= 0.0 {
        return false;
    }
    libm::exp((cost - new_cost) / t) > rng.gen::<f64>()
}

/// One annealing run; tracks and returns the best mapping ever visited.
pub fn anneal(
    layers: &[Vec<LayerCandidate>],
    hw: &HardwareConfig,
    params: &SaParams,
    multi_tenant: bool,
) -> Result<ModelMapping, AnnealError> {
    if layers.is_empty() {
        return Err(AnnealError::NoLayers);
    }
    for (i, l) in layers.iter().enumerate() {
        if l.is_empty() {
            return Err(AnnealError::EmptyLayer(i));
        }
    }
    let ks: Vec<usize> = layers.iter().map(|l| l.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut current: Vec<usize> = ks.iter().map(|&k| rng.gen_range(0..k)).collect();
    let (bw0, cost0) = equalize_bandwidth(layers, &current, hw, multi_tenant)?;
    let mut cur_cost = cost0;
    let mut best = ModelMapping {
        choice: current.clone(),
        model_bw: bw0,
        edp: cost0,
    };

    let t_init = params
        .t_init
        .unwrap_or(0.1 * libm::fabs(cost0))
        .max(f64::MIN_POSITIVE);
    let t_final = params.t_final.unwrap_or(1e-4 * t_init).max(f64::MIN_POSITIVE);
    let n_iter = params.iterations;
    for n in 0..n_iter {
        let t = t_init * libm::pow(t_final / t_init, n as f64 / n_iter as f64);
        let neighbor = get_neighbor(&current, &ks, &mut rng);
        let (nbw, ncost) = equalize_bandwidth(layers, &neighbor, hw, multi_tenant)?;
        if ncost < best.edp {
            best = ModelMapping {
                choice: neighbor.clone(),
                model_bw: nbw,
                edp: ncost,
            };
        }
        if sa_accept(cur_cost, ncost, t, &mut rng) {
            current = neighbor;
            cur_cost = ncost;
        }
    }
    Ok(best)
}

/// `m` independent annealing runs seeded `seed + j`, deduplicated and sorted
/// ascending by EDP.
pub fn top_m(
    layers: &[Vec<LayerCandidate>],
    hw: &HardwareConfig,
    params: &SaParams,
    multi_tenant: bool,
) -> Result<Vec<ModelMapping>, AnnealError> {
    let mut out: Vec<ModelMapping> = Vec::new();
    for j in 0..params.m.max(1) {
        let p = params.clone().with_seed(params.seed.wrapping_add(j as u64));
        let mm = anneal(layers, hw, &p, multi_tenant)?;
        if !out.iter().any(|o| o.choice == mm.choice) {
            out.push(mm);
        }
    }
    out.sort_by(|a, b| {
        a.edp
            .partial_cmp(&b.edp)
            .expect("EDP is finite")
            .then_with(|| a.choice.cmp(&b.choice))
    });
    Ok(out)
}
