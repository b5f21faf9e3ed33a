//! Redundant-load reuse promotion and the optimal-AuthBlock search.
//!
//! A REDUNDANT line that is demanded again soon enough (same-role traffic
//! volume until the next demand below the role's scratchpad capacity) is
//! promoted to DEMAND and the later demand is removed: the line is simply
//! kept resident instead of being fetched twice.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::costmodel::{HardwareConfig, Mapping};
use crate::tracegen::{
    self, LayerAddressing, MemTraceEntry, TraceCounts, TraceError, TraceLabel, TraceOptions,
    AUTH_BLOCK_CHOICES, LINE_BYTES,
};
use crate::workload::{LayerSpec, PerRole, TensorRole};

/// Outcome of the reuse pass over one trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReuseResult {
    /// Surviving entries, original `seq` values preserved.
    pub trace: Vec<MemTraceEntry>,
    pub counts: TraceCounts,
    /// Number of REDUNDANT -> DEMAND relabelings.
    pub promotions: u64,
    /// `(kept_seq, removed_seq)` per promotion: the promoted entry and the
    /// later demand it replaces.
    pub moves: Vec<(u64, u64)>,
}

/// Per-mapping AuthBlock choice with the full sweep table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthChoice {
    pub h_opt: u64,
    /// Total bursts (demand + redundant + integrity) at `h_opt`.
    pub mem_traffic: u64,
    /// `(h, traffic)` for every granularity, ascending in `h`.
    pub per_h: Vec<(u64, u64)>,
    /// Counts at the chosen granularity, after reuse promotion.
    pub counts: TraceCounts,
}

struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, mut i: usize, delta: i64) {
        i += 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum of [0, i].
    fn prefix(&self, mut i: usize) -> i64 {
        i += 1;
        let mut acc = 0;
        while i > 0 {
            acc += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        acc
    }

    /// Sum over the open interval (lo, hi).
    fn between(&self, lo: usize, hi: usize) -> i64 {
        if hi <= lo + 1 {
            return 0;
        }
        self.prefix(hi - 1) - self.prefix(lo)
    }
}

/// Single forward pass of the reuse rule: each REDUNDANT entry looks
/// downstream for the next still-present DEMAND of the same address and
/// role; if the same-role byte volume strictly between them is below that
/// role's scratchpad capacity, the redundant entry is relabeled DEMAND and
/// the later demand removed.
pub fn data_reuse(trace: &[MemTraceEntry], spad_bytes: &PerRole<u64>) -> ReuseResult {
    let n = trace.len();
    let mut present = vec![true; n];
    let mut label: Vec<TraceLabel> = trace.iter().map(|e| e.label).collect();

    // Same-role presence counters for reuse distances.
    let mut by_role = [Fenwick::new(n), Fenwick::new(n), Fenwick::new(n)];
    let role_idx = |r: TensorRole| match r {
        TensorRole::Ifmap => 0usize,
        TensorRole::Weight => 1,
        TensorRole::Ofmap => 2,
    };
    for (i, e) in trace.iter().enumerate() {
        by_role[role_idx(e.role)].add(i, 1);
    }

    // Ascending demand positions per (addr, role).
    let mut demands: BTreeMap<(u64, TensorRole), Vec<usize>> = BTreeMap::new();
    for (i, e) in trace.iter().enumerate() {
        if e.label == TraceLabel::Demand {
            demands.entry((e.addr, e.role)).or_default().push(i);
        }
    }

    let mut promotions = 0;
    let mut moves = Vec::new();
    for i in 0..n {
        if label[i] != TraceLabel::Redundant {
            continue;
        }
        let e = &trace[i];
        let Some(list) = demands.get(&(e.addr, e.role)) else {
            continue;
        };
        let pos = list.partition_point(|&j| j <= i);
        let Some(&j) = list[pos..].iter().find(|&&j| present[j]) else {
            continue;
        };
        let dist = by_role[role_idx(e.role)].between(i, j) as u64 * LINE_BYTES;
        if dist < *spad_bytes.get(e.role) {
            label[i] = TraceLabel::Demand;
            present[j] = false;
            by_role[role_idx(e.role)].add(j, -1);
            promotions += 1;
            moves.push((trace[i].seq, trace[j].seq));
        }
    }

    let mut out = Vec::with_capacity(n - promotions as usize);
    for (i, e) in trace.iter().enumerate() {
        if present[i] {
            let mut kept = *e;
            kept.label = label[i];
            out.push(kept);
        }
    }
    let counts = tracegen::counts(&out);
    ReuseResult {
        trace: out,
        counts,
        promotions,
        moves,
    }
}

/// Sweep all AuthBlock granularities for one mapping and pick the one with
/// minimal post-reuse traffic; ties go to the smaller block.
pub fn optimal_authblock(
    layer: &LayerSpec,
    mapping: &Mapping,
    hw: &HardwareConfig,
    addrs: &LayerAddressing,
    opts: &TraceOptions,
) -> Result<AuthChoice, TraceError> {
    let mut per_h = Vec::with_capacity(AUTH_BLOCK_CHOICES.len());
    let mut best: Option<(u64, u64, TraceCounts)> = None;
    for h in AUTH_BLOCK_CHOICES {
        let trace = tracegen::generate_trace(layer, mapping, h, addrs, opts)?;
        let reused = data_reuse(&trace, &hw.spad_bytes);
        let traffic = reused.counts.total();
        per_h.push((h, traffic));
        let better = match &best {
            Some((_, t, _)) => traffic < *t,
            None => true,
        };
        if better {
            best = Some((h, traffic, reused.counts));
        }
    }
    let (h_opt, mem_traffic, counts) = best.expect("AUTH_BLOCK_CHOICES is non-empty");
    Ok(AuthChoice {
        h_opt,
        mem_traffic,
        per_h,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::EnergyTable;
    use alloc::string::ToString;

    fn entry(seq: u64, addr: u64, role: TensorRole, label: TraceLabel) -> MemTraceEntry {
        MemTraceEntry {
            addr,
            role,
            label,
            seq,
        }
    }

    fn layer(k: u64, c: u64, r: u64, s: u64, x: u64, y: u64, stride: u64) -> LayerSpec {
        LayerSpec {
            name: "t".to_string(),
            k,
            c,
            r,
            s,
            x,
            y,
            n: 1,
            stride,
            element_size: 4,
            depends_on: None,
        }
    }

    fn hw_with_spads(ifmap: u64, weight: u64, ofmap: u64) -> HardwareConfig {
        HardwareConfig {
            pe_rows: 4,
            pe_cols: 4,
            spad_bytes: PerRole::new(ifmap, weight, ofmap),
            crypto_bw: 8,
            crypto_pipeline_depth: 2,
            burst_bytes: 64,
            dram_latency: 10,
            freq_mhz: 100,
            zeroize_row_bits: 2048,
            zeroize_row_cycles: 1,
            demand_queue_depth: 16,
            energy: EnergyTable::default(),
        }
    }

    /// Brute-force reference for `data_reuse`: linear downstream scans over
    /// a mutable copy, no index structures.
    fn data_reuse_reference(trace: &[MemTraceEntry], spads: &PerRole<u64>) -> Vec<MemTraceEntry> {
        let mut work: Vec<Option<MemTraceEntry>> = trace.iter().copied().map(Some).collect();
        for i in 0..work.len() {
            let Some(e) = work[i] else { continue };
            if e.label != TraceLabel::Redundant {
                continue;
            }
            let mut dist = 0u64;
            let mut target = None;
            for (j, slot) in work.iter().enumerate().skip(i + 1) {
                let Some(later) = slot else { continue };
                if later.addr == e.addr
                    && later.role == e.role
                    && later.label == TraceLabel::Demand
                {
                    target = Some(j);
                    break;
                }
                if later.role == e.role {
                    dist += LINE_BYTES;
                }
            }
            if let Some(j) = target {
                if dist < *spads.get(e.role) {
                    work[i].as_mut().unwrap().label = TraceLabel::Demand;
                    work[j] = None;
                }
            }
        }
        work.into_iter().flatten().collect()
    }

    #[test]
    fn trace_without_redundant_is_untouched() {
        let t: Vec<MemTraceEntry> = (0..5)
            .map(|i| entry(i, i * 64, TensorRole::Ifmap, TraceLabel::Demand))
            .collect();
        let r = data_reuse(&t, &PerRole::new(1024, 1024, 1024));
        assert_eq!(r.trace, t);
        assert_eq!(r.promotions, 0);
    }

    #[test]
    fn promotion_within_capacity() {
        // Redundant at seq 5, demand of the same line at seq 7, one same-role
        // entry (64 B) between, 1 KB scratchpad: promoted.
        let mut t = Vec::new();
        for i in 0..5 {
            t.push(entry(i, i * 64, TensorRole::Ifmap, TraceLabel::Demand));
        }
        t.push(entry(5, 0x9000, TensorRole::Ifmap, TraceLabel::Redundant));
        t.push(entry(6, 0x400, TensorRole::Ifmap, TraceLabel::Demand));
        t.push(entry(7, 0x9000, TensorRole::Ifmap, TraceLabel::Demand));
        let before = tracegen::counts(&t);
        let r = data_reuse(&t, &PerRole::new(1024, 1024, 1024));
        assert_eq!(r.promotions, 1);
        assert_eq!(r.moves, alloc::vec![(5, 7)]);
        assert_eq!(r.counts.n_demand, before.n_demand);
        assert_eq!(r.counts.n_redundant, 0);
        assert!(r.trace.iter().all(|e| e.seq != 7));
        assert_eq!(r.trace[5].label, TraceLabel::Demand);
    }

    #[test]
    fn no_promotion_past_capacity() {
        let mut t = Vec::new();
        t.push(entry(0, 0x9000, TensorRole::Ifmap, TraceLabel::Redundant));
        t.push(entry(1, 0x400, TensorRole::Ifmap, TraceLabel::Demand));
        t.push(entry(2, 0x9000, TensorRole::Ifmap, TraceLabel::Demand));
        // Distance is 64 B, capacity 32 B: stays redundant.
        let r = data_reuse(&t, &PerRole::new(32, 32, 32));
        assert_eq!(r.promotions, 0);
        assert_eq!(r.counts.n_redundant, 1);
    }

    #[test]
    fn reuse_never_increases_traffic_and_preserves_demand_set() {
        let l = layer(3, 2, 2, 2, 6, 6, 1);
        let addrs = LayerAddressing::standalone(&l);
        let m = Mapping {
            tile: [1, 2, 2, 2, 1, 3, 3],
            loop_order: crate::workload::Dim::ALL,
        };
        let hw = hw_with_spads(4096, 4096, 4096);
        for h in AUTH_BLOCK_CHOICES {
            let t = tracegen::generate_trace(&l, &m, h, &addrs, &TraceOptions::default()).unwrap();
            let before = tracegen::counts(&t);
            let r = data_reuse(&t, &hw.spad_bytes);
            assert!(r.counts.total() <= before.total());
            if r.promotions > 0 {
                assert!(r.counts.total() < before.total());
            }
            let set = |es: &[MemTraceEntry]| -> alloc::collections::BTreeSet<(TensorRole, u64)> {
                es.iter()
                    .filter(|e| e.label == TraceLabel::Demand)
                    .map(|e| (e.role, e.addr))
                    .collect()
            };
            assert_eq!(set(&t), set(&r.trace), "h={h}");
        }
    }

    #[test]
    fn fenwick_pass_matches_bruteforce_reference() {
        let l = layer(4, 3, 3, 3, 8, 8, 1);
        let addrs = LayerAddressing::standalone(&l);
        let hw = hw_with_spads(2048, 2048, 2048);
        for tile in [[2u64, 3, 3, 3, 1, 3, 3], [4, 1, 1, 3, 1, 6, 2], [1, 3, 2, 1, 1, 2, 6]] {
            let m = Mapping {
                tile,
                loop_order: crate::workload::Dim::ALL,
            };
            for h in AUTH_BLOCK_CHOICES {
                let t =
                    tracegen::generate_trace(&l, &m, h, &addrs, &TraceOptions::default()).unwrap();
                let fast = data_reuse(&t, &hw.spad_bytes);
                let slow = data_reuse_reference(&t, &hw.spad_bytes);
                assert_eq!(fast.trace, slow, "tile={tile:?} h={h}");
            }
        }
    }

    #[test]
    fn dense_layer_prefers_largest_block() {
        // Every region is a whole number of 4 KB blocks and fully read in
        // one tile: larger blocks only shed integrity lines.
        let l = layer(64, 16, 1, 1, 16, 16, 1);
        let addrs = LayerAddressing::standalone(&l);
        let m = Mapping::single_tile(&l);
        let hw = hw_with_spads(64 * 1024, 64 * 1024, 192 * 1024);
        let choice = optimal_authblock(&l, &m, &hw, &addrs, &TraceOptions::default()).unwrap();
        assert_eq!(choice.h_opt, 4096);
        assert!(choice.mem_traffic < choice.per_h[0].1, "strict win over 64 B");
    }

    #[test]
    fn sparse_strided_layer_prefers_smallest_block() {
        // One 4 KB channel plane per input channel, stride covering the whole
        // plane: each plane contributes a single demanded line, so any block
        // above 64 B drags in untouched lines as redundant loads.
        let l = layer(1, 8, 1, 1, 32, 32, 32);
        let addrs = LayerAddressing::standalone(&l);
        let m = Mapping::single_tile(&l);
        let hw = hw_with_spads(8192, 8192, 8192);
        let choice = optimal_authblock(&l, &m, &hw, &addrs, &TraceOptions::default()).unwrap();
        assert_eq!(choice.h_opt, 64);
        // Traffic strictly grows with h here.
        for w in choice.per_h.windows(2) {
            assert!(w[0].1 < w[1].1);
        }
    }

    #[test]
    fn optimum_no_worse_than_fixed_64() {
        let l = layer(3, 4, 3, 3, 9, 9, 1);
        let addrs = LayerAddressing::standalone(&l);
        let m = Mapping {
            tile: [3, 2, 3, 3, 1, 4, 4],
            loop_order: crate::workload::Dim::ALL,
        };
        let hw = hw_with_spads(16 * 1024, 16 * 1024, 16 * 1024);
        let choice = optimal_authblock(&l, &m, &hw, &addrs, &TraceOptions::default()).unwrap();
        let at_64 = choice.per_h.iter().find(|&&(h, _)| h == 64).unwrap().1;
        assert!(choice.mem_traffic <= at_64);
        assert!(choice.per_h.iter().all(|&(_, t)| t >= choice.mem_traffic));
    }
}
