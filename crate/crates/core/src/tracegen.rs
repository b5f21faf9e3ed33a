//! Memory trace generation for a (layer, mapping) pair at a chosen
//! AuthBlock granularity.
//!
//! The trace walks tiles in loop order and emits one 64 B DEMAND line per
//! distinct line a tile fetch reads (ifmap first, then weights; ofmap write
//! traffic is excluded here and modeled by the simulator's write shaper).
//! Every AuthBlock touched by a fetch forms one *episode*: its untouched
//! lines are inserted as REDUNDANT right after the block's first demand
//! line, followed by exactly one INTEGRITY line for the MAC (plus an
//! optional replay-counter line when modeling a baseline without
//! accelerator-generated counters).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::costmodel::{Mapping, TileStep, TileWalk};
use crate::workload::{Dim, LayerSpec, ModelSpec, TensorRole};

/// Transfer unit on the memory bus.
pub const LINE_BYTES: u64 = 64;

/// Valid AuthBlock granularities: 64 B to 4 KB in powers of two.
pub const AUTH_BLOCK_CHOICES: [u64; 7] = [64, 128, 256, 512, 1024, 2048, 4096];

/// Regions are aligned to the largest AuthBlock so no block straddles two
/// tensors.
pub const REGION_ALIGN: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLabel {
    Demand,
    Redundant,
    Integrity,
}

/// One 64 B bus transfer of the analytical trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemTraceEntry {
    pub addr: u64,
    pub role: TensorRole,
    pub label: TraceLabel,
    pub seq: u64,
}

/// Label tallies of a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCounts {
    pub n_demand: u64,
    pub n_redundant: u64,
    pub n_integrity: u64,
}

impl TraceCounts {
    pub fn total(&self) -> u64 {
        self.n_demand + self.n_redundant + self.n_integrity
    }
}

/// Exact label tallies of a trace.
pub fn counts(trace: &[MemTraceEntry]) -> TraceCounts {
    let mut c = TraceCounts::default();
    for e in trace {
        match e.label {
            TraceLabel::Demand => c.n_demand += 1,
            TraceLabel::Redundant => c.n_redundant += 1,
            TraceLabel::Integrity => c.n_integrity += 1,
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceError {
    InvalidAuthBlock(u64),
    Cost(crate::costmodel::CostError),
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceError::InvalidAuthBlock(h) => {
                write!(f, "AuthBlock size {h} is not a power of two in 64..4096")
            }
            TraceError::Cost(e) => write!(f, "{e}"),
        }
    }
}

impl From<crate::costmodel::CostError> for TraceError {
    fn from(e: crate::costmodel::CostError) -> Self {
        TraceError::Cost(e)
    }
}

/// Disjoint region layout for every tensor of a model plus the integrity
/// metadata. Row-major element layout inside each region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressMap {
    pub input_base: u64,
    pub weight_base: Vec<u64>,
    pub ofmap_base: Vec<u64>,
    pub mac_base: u64,
    pub counter_base: u64,
    /// One past the last counter-region byte.
    pub end: u64,
}

fn align_up(v: u64, align: u64) -> u64 {
    v.div_ceil(align) * align
}

impl AddressMap {
    pub fn build(model: &ModelSpec) -> Self {
        let mut cursor = 0u64;
        let input_base = cursor;
        cursor = align_up(cursor + model.layers[0].ifmap_bytes(), REGION_ALIGN);
        let mut weight_base = Vec::with_capacity(model.layers.len());
        for layer in &model.layers {
            weight_base.push(cursor);
            cursor = align_up(cursor + layer.weight_bytes(), REGION_ALIGN);
        }
        let mut ofmap_base = Vec::with_capacity(model.layers.len());
        for layer in &model.layers {
            ofmap_base.push(cursor);
            cursor = align_up(cursor + layer.ofmap_bytes(), REGION_ALIGN);
        }
        let data_end = cursor;
        let mac_base = cursor;
        // One 64 B MAC line per 64 B of data is the worst case (h = 64).
        cursor = align_up(mac_base + data_end, REGION_ALIGN);
        let counter_base = cursor;
        cursor = align_up(counter_base + data_end, REGION_ALIGN);
        Self {
            input_base,
            weight_base,
            ofmap_base,
            mac_base,
            counter_base,
            end: cursor,
        }
    }

    /// Base of layer `index`'s ifmap: the producer's ofmap region, or the
    /// external input region.
    pub fn ifmap_base(&self, model: &ModelSpec, index: usize) -> u64 {
        match model.producer(index) {
            Some(p) => self.ofmap_base[p],
            None => self.input_base,
        }
    }

    pub fn for_layer(&self, model: &ModelSpec, index: usize) -> LayerAddressing {
        LayerAddressing {
            ifmap_base: self.ifmap_base(model, index),
            weight_base: self.weight_base[index],
            ofmap_base: self.ofmap_base[index],
            mac_base: self.mac_base,
            counter_base: self.counter_base,
        }
    }
}

/// Resolved region bases for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerAddressing {
    pub ifmap_base: u64,
    pub weight_base: u64,
    pub ofmap_base: u64,
    pub mac_base: u64,
    pub counter_base: u64,
}

impl LayerAddressing {
    /// Standalone addressing for a single layer (tests, single-layer runs).
    pub fn standalone(layer: &LayerSpec) -> Self {
        let ifmap_base = 0;
        let weight_base = align_up(layer.ifmap_bytes(), REGION_ALIGN);
        let ofmap_base = align_up(weight_base + layer.weight_bytes(), REGION_ALIGN);
        let data_end = align_up(ofmap_base + layer.ofmap_bytes(), REGION_ALIGN);
        Self {
            ifmap_base,
            weight_base,
            ofmap_base,
            mac_base: data_end,
            counter_base: align_up(data_end + data_end, REGION_ALIGN),
        }
    }

    /// Address of ifmap element `[n][c][xi][yi]`.
    pub fn ifmap_addr(&self, layer: &LayerSpec, n: u64, c: u64, xi: u64, yi: u64) -> u64 {
        self.ifmap_base + (((n * layer.c + c) * layer.x + xi) * layer.y + yi) * layer.element_size
    }

    /// Address of weight element `[k][c][r][s]`.
    pub fn weight_addr(&self, layer: &LayerSpec, k: u64, c: u64, r: u64, s: u64) -> u64 {
        self.weight_base + (((k * layer.c + c) * layer.r + r) * layer.s + s) * layer.element_size
    }

    /// Address of ofmap element `[n][k][xo][yo]`.
    pub fn ofmap_addr(&self, layer: &LayerSpec, n: u64, k: u64, xo: u64, yo: u64) -> u64 {
        let (xo_dim, yo_dim) = layer.output_dims();
        debug_assert!(xo < xo_dim && yo < yo_dim);
        self.ofmap_base + (((n * layer.k + k) * xo_dim + xo) * yo_dim + yo) * layer.element_size
    }

    /// MAC metadata line for the AuthBlock containing `block_base`.
    pub fn mac_line(&self, block_base: u64, h: u64) -> u64 {
        self.mac_base + (block_base / h) * LINE_BYTES
    }

    /// Replay-counter line for the AuthBlock containing `block_base`.
    pub fn counter_line(&self, block_base: u64, h: u64) -> u64 {
        self.counter_base + (block_base / h) * LINE_BYTES
    }
}

/// Knobs of trace generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// Weights are read-only: their integrity never needs replay-counter
    /// traffic.
    pub ro_weights: bool,
    /// Emit a counter line per block fetch for roles that are not read-only
    /// weights. Off by default: counters are generated inside the
    /// accelerator.
    pub counter_lines: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            ro_weights: true,
            counter_lines: false,
        }
    }
}

/// The 64 B lines covering the bytes of `step`'s tile for `role`.
pub fn tile_lines(
    layer: &LayerSpec,
    addrs: &LayerAddressing,
    step: &TileStep,
    role: TensorRole,
) -> BTreeSet<u64> {
    let mut lines = BTreeSet::new();
    let esz = layer.element_size;
    let o = |d: Dim| step.origin[d.index()];
    let e = |d: Dim| step.extent[d.index()];
    let mut add_run = |lo: u64, bytes: u64| {
        let hi = lo + bytes;
        let mut line = lo / LINE_BYTES * LINE_BYTES;
        while line < hi {
            lines.insert(line);
            line += LINE_BYTES;
        }
    };
    match role {
        TensorRole::Ifmap => {
            // Input rows/cols read by this tile's output positions; gaps can
            // appear when stride exceeds the filter tile extent.
            let mut rows = BTreeSet::new();
            for xo in o(Dim::X)..o(Dim::X) + e(Dim::X) {
                for r in o(Dim::R)..o(Dim::R) + e(Dim::R) {
                    rows.insert(xo * layer.stride + r);
                }
            }
            let mut cols = BTreeSet::new();
            for yo in o(Dim::Y)..o(Dim::Y) + e(Dim::Y) {
                for s in o(Dim::S)..o(Dim::S) + e(Dim::S) {
                    cols.insert(yo * layer.stride + s);
                }
            }
            // Split the column set into maximal contiguous runs.
            let mut runs: Vec<(u64, u64)> = Vec::new();
            for &col in &cols {
                match runs.last_mut() {
                    Some((start, len)) if *start + *len == col => *len += 1,
                    _ => runs.push((col, 1)),
                }
            }
            for n in o(Dim::N)..o(Dim::N) + e(Dim::N) {
                for c in o(Dim::C)..o(Dim::C) + e(Dim::C) {
                    for &xi in &rows {
                        for &(col0, len) in &runs {
                            add_run(addrs.ifmap_addr(layer, n, c, xi, col0), len * esz);
                        }
                    }
                }
            }
        }
        TensorRole::Weight => {
            for k in o(Dim::K)..o(Dim::K) + e(Dim::K) {
                for c in o(Dim::C)..o(Dim::C) + e(Dim::C) {
                    for r in o(Dim::R)..o(Dim::R) + e(Dim::R) {
                        add_run(
                            addrs.weight_addr(layer, k, c, r, o(Dim::S)),
                            e(Dim::S) * esz,
                        );
                    }
                }
            }
        }
        TensorRole::Ofmap => {
            for n in o(Dim::N)..o(Dim::N) + e(Dim::N) {
                for k in o(Dim::K)..o(Dim::K) + e(Dim::K) {
                    for xo in o(Dim::X)..o(Dim::X) + e(Dim::X) {
                        add_run(
                            addrs.ofmap_addr(layer, n, k, xo, o(Dim::Y)),
                            e(Dim::Y) * esz,
                        );
                    }
                }
            }
        }
    }
    lines
}

/// A trace plus the structure the instruction lowering needs: which walk
/// step each entry belongs to and the AuthBlock episode grouping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TracePlan {
    pub entries: Vec<MemTraceEntry>,
    /// `entries` index where each walk step's fetches begin.
    pub step_starts: Vec<usize>,
    /// Episode id per entry, aligned with `entries` (and with entry `seq`).
    pub episodes: Vec<u32>,
    pub episode_count: u32,
}

/// Generate the ordered memory trace for one layer.
pub fn generate_trace(
    layer: &LayerSpec,
    mapping: &Mapping,
    h: u64,
    addrs: &LayerAddressing,
    opts: &TraceOptions,
) -> Result<Vec<MemTraceEntry>, TraceError> {
    Ok(trace_plan(layer, mapping, h, addrs, opts)?.entries)
}

/// Generate the trace together with step/episode structure.
pub fn trace_plan(
    layer: &LayerSpec,
    mapping: &Mapping,
    h: u64,
    addrs: &LayerAddressing,
    opts: &TraceOptions,
) -> Result<TracePlan, TraceError> {
    if !AUTH_BLOCK_CHOICES.contains(&h) {
        return Err(TraceError::InvalidAuthBlock(h));
    }
    mapping.validate(layer)?;

    let mut entries: Vec<MemTraceEntry> = Vec::new();
    let mut step_starts = Vec::new();
    let mut episodes = Vec::new();
    let mut episode = 0u32;

    for step in TileWalk::new(layer, mapping) {
        step_starts.push(entries.len());
        for role in [TensorRole::Ifmap, TensorRole::Weight] {
            if !step.changed_role(role) {
                continue;
            }
            let lines = tile_lines(layer, addrs, &step, role);
            // Group this fetch's lines by AuthBlock; each (fetch, block)
            // pair is one verification episode.
            let mut by_block: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
            for line in lines {
                by_block.entry(line / h * h).or_default().push(line);
            }
            for (block, demand_lines) in by_block {
                let demanded: BTreeSet<u64> = demand_lines.iter().copied().collect();
                let mut push = |entries: &mut Vec<MemTraceEntry>, addr: u64, label: TraceLabel| {
                    entries.push(MemTraceEntry {
                        addr,
                        role,
                        label,
                        seq: entries.len() as u64,
                    });
                    episodes.push(episode);
                };
                push(&mut entries, demand_lines[0], TraceLabel::Demand);
                let mut fill = block;
                while fill < block + h {
                    if !demanded.contains(&fill) {
                        push(&mut entries, fill, TraceLabel::Redundant);
                    }
                    fill += LINE_BYTES;
                }
                for &line in &demand_lines[1..] {
                    push(&mut entries, line, TraceLabel::Demand);
                }
                push(&mut entries, addrs.mac_line(block, h), TraceLabel::Integrity);
                let counter =
                    opts.counter_lines && !(opts.ro_weights && role == TensorRole::Weight);
                if counter {
                    push(&mut entries, addrs.counter_line(block, h), TraceLabel::Integrity);
                }
                episode += 1;
            }
        }
    }

    Ok(TracePlan {
        entries,
        step_starts,
        episodes,
        episode_count: episode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

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

    fn demand_set(trace: &[MemTraceEntry]) -> BTreeSet<(TensorRole, u64)> {
        trace
            .iter()
            .filter(|e| e.label == TraceLabel::Demand)
            .map(|e| (e.role, e.addr))
            .collect()
    }

    /// Independent loop-nest oracle: every line covering any ifmap or weight
    /// byte the convolution reads.
    fn oracle_lines(layer: &LayerSpec, addrs: &LayerAddressing) -> BTreeSet<(TensorRole, u64)> {
        let mut set = BTreeSet::new();
        let (xo_max, yo_max) = layer.output_dims();
        for n in 0..layer.n {
            for c in 0..layer.c {
                for xo in 0..xo_max {
                    for yo in 0..yo_max {
                        for r in 0..layer.r {
                            for s in 0..layer.s {
                                let xi = xo * layer.stride + r;
                                let yi = yo * layer.stride + s;
                                let a = addrs.ifmap_addr(layer, n, c, xi, yi);
                                for b in 0..layer.element_size {
                                    set.insert((
                                        TensorRole::Ifmap,
                                        (a + b) / LINE_BYTES * LINE_BYTES,
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
        for k in 0..layer.k {
            for c in 0..layer.c {
                for r in 0..layer.r {
                    for s in 0..layer.s {
                        let a = addrs.weight_addr(layer, k, c, r, s);
                        for b in 0..layer.element_size {
                            set.insert((TensorRole::Weight, (a + b) / LINE_BYTES * LINE_BYTES));
                        }
                    }
                }
            }
        }
        set
    }

    #[test]
    fn h64_has_no_redundant_and_one_integrity_per_demand() {
        let l = layer(2, 2, 3, 3, 6, 6, 1);
        let addrs = LayerAddressing::standalone(&l);
        let m = Mapping::single_tile(&l);
        let t = generate_trace(&l, &m, 64, &addrs, &TraceOptions::default()).unwrap();
        let c = counts(&t);
        assert_eq!(c.n_redundant, 0);
        assert_eq!(c.n_integrity, c.n_demand);
    }

    #[test]
    fn one_line_in_h256_block_inserts_three_redundant() {
        // Ifmap is exactly one 64 B line (4*4 elements at 4 B).
        let l = layer(1, 1, 1, 1, 4, 4, 1);
        let addrs = LayerAddressing::standalone(&l);
        let m = Mapping::single_tile(&l);
        let t = generate_trace(&l, &m, 256, &addrs, &TraceOptions::default()).unwrap();
        let ifmap: Vec<_> = t.iter().filter(|e| e.role == TensorRole::Ifmap).collect();
        let c = counts(&t);
        assert_eq!(ifmap.iter().filter(|e| e.label == TraceLabel::Demand).count(), 1);
        assert_eq!(
            ifmap.iter().filter(|e| e.label == TraceLabel::Redundant).count(),
            3
        );
        assert_eq!(
            ifmap.iter().filter(|e| e.label == TraceLabel::Integrity).count(),
            1
        );
        // Redundant lines sit right after the block's first demand line.
        assert_eq!(ifmap[0].label, TraceLabel::Demand);
        assert_eq!(ifmap[1].label, TraceLabel::Redundant);
        // Whole-trace tally: same pattern again for the single weight line.
        assert_eq!((c.n_demand, c.n_redundant, c.n_integrity), (2, 6, 2));
    }

    #[test]
    fn demand_set_is_independent_of_h() {
        let l = layer(3, 2, 3, 3, 7, 7, 2);
        let addrs = LayerAddressing::standalone(&l);
        let mut m = Mapping::unit();
        m.tile = [2, 2, 3, 3, 1, 2, 3];
        let base =
            demand_set(&generate_trace(&l, &m, 64, &addrs, &TraceOptions::default()).unwrap());
        for h in AUTH_BLOCK_CHOICES {
            let t = generate_trace(&l, &m, h, &addrs, &TraceOptions::default()).unwrap();
            assert_eq!(demand_set(&t), base, "h={h}");
        }
    }

    #[test]
    fn integrity_count_monotone_in_h() {
        let l = layer(2, 2, 2, 2, 5, 5, 1);
        let addrs = LayerAddressing::standalone(&l);
        let mut m = Mapping::unit();
        m.tile = [1, 2, 2, 2, 1, 2, 2];
        let mut prev = u64::MAX;
        for h in AUTH_BLOCK_CHOICES {
            let c = counts(&generate_trace(&l, &m, h, &addrs, &TraceOptions::default()).unwrap());
            assert!(c.n_integrity <= prev, "h={h}");
            prev = c.n_integrity;
        }
    }

    #[test]
    fn demand_lines_match_loop_nest_oracle() {
        for (l, tile) in [
            (layer(2, 3, 3, 3, 6, 6, 1), [2u64, 3, 1, 3, 1, 2, 4]),
            (layer(4, 1, 2, 2, 7, 7, 2), [1, 1, 2, 1, 1, 3, 3]),
            (layer(3, 2, 1, 1, 4, 4, 1), [3, 1, 1, 1, 1, 4, 2]),
        ] {
            let addrs = LayerAddressing::standalone(&l);
            let m = Mapping {
                tile,
                loop_order: Dim::ALL,
            };
            let t = generate_trace(&l, &m, 64, &addrs, &TraceOptions::default()).unwrap();
            assert_eq!(demand_set(&t), oracle_lines(&l, &addrs));
        }
    }

    #[test]
    fn counter_lines_only_when_enabled_and_not_ro_weights() {
        let l = layer(1, 1, 1, 1, 4, 4, 1);
        let addrs = LayerAddressing::standalone(&l);
        let m = Mapping::single_tile(&l);
        let base = counts(&generate_trace(&l, &m, 64, &addrs, &TraceOptions::default()).unwrap());
        let with_counters = TraceOptions {
            ro_weights: true,
            counter_lines: true,
        };
        let c = counts(&generate_trace(&l, &m, 64, &addrs, &with_counters).unwrap());
        // Ifmap block gets a counter line; the read-only weight block does not.
        assert_eq!(c.n_integrity, base.n_integrity + 1);
        let all_counters = TraceOptions {
            ro_weights: false,
            counter_lines: true,
        };
        let c2 = counts(&generate_trace(&l, &m, 64, &addrs, &all_counters).unwrap());
        assert_eq!(c2.n_integrity, base.n_integrity + 2);
    }

    #[test]
    fn invalid_h_rejected() {
        let l = layer(1, 1, 1, 1, 4, 4, 1);
        let addrs = LayerAddressing::standalone(&l);
        let m = Mapping::single_tile(&l);
        for h in [0, 32, 96, 8192] {
            assert!(matches!(
                generate_trace(&l, &m, h, &addrs, &TraceOptions::default()),
                Err(TraceError::InvalidAuthBlock(_))
            ));
        }
    }

    #[test]
    fn seq_strictly_increasing_and_aligned() {
        let l = layer(2, 2, 3, 3, 6, 6, 1);
        let addrs = LayerAddressing::standalone(&l);
        let mut m = Mapping::unit();
        m.tile = [2, 1, 3, 3, 1, 2, 2];
        let t = generate_trace(&l, &m, 256, &addrs, &TraceOptions::default()).unwrap();
        for (i, e) in t.iter().enumerate() {
            assert_eq!(e.seq, i as u64);
            assert_eq!(e.addr % LINE_BYTES, 0);
        }
    }

    #[test]
    fn regions_are_disjoint() {
        let a = layer(4, 3, 3, 3, 8, 8, 1);
        let b = layer(2, 4, 1, 1, 6, 6, 1);
        let model = ModelSpec::new(vec![a, b]).unwrap();
        let amap = AddressMap::build(&model);
        let l0 = model.layers[0].clone();
        let l1 = model.layers[1].clone();
        let regions = vec![
            (amap.input_base, l0.ifmap_bytes()),
            (amap.weight_base[0], l0.weight_bytes()),
            (amap.weight_base[1], l1.weight_bytes()),
            (amap.ofmap_base[0], l0.ofmap_bytes()),
            (amap.ofmap_base[1], l1.ofmap_bytes()),
        ];
        for (i, &(b1, s1)) in regions.iter().enumerate() {
            for &(b2, s2) in regions.iter().skip(i + 1) {
                assert!(b1 + s1 <= b2 || b2 + s2 <= b1);
            }
        }
        // Consumer ifmap aliases the producer ofmap.
        assert_eq!(amap.ifmap_base(&model, 1), amap.ofmap_base[0]);
        assert!(amap.mac_base >= amap.ofmap_base[1] + l1.ofmap_bytes());
        assert!(amap.counter_base > amap.mac_base);
    }
}
