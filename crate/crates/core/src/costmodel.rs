//! Analytical latency/energy estimation of a (layer, mapping) pair on the
//! secure accelerator.
//!
//! The memory path of the modeled accelerator runs through the crypto block,
//! so the effective scratchpad fill bandwidth during mapping search is the
//! crypto throughput. Latency uses a double-buffered overlap model: the load
//! of tile `i+1` and the drain of the previous output tile overlap the
//! compute of tile `i`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::workload::{Dim, GemmShape, LayerSpec, PerRole, TensorRole};

/// Abstract energy unit costs per activity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    pub mac: f64,
    pub spad_read: f64,
    pub spad_write: f64,
    pub dram_read_burst: f64,
    pub dram_write_burst: f64,
    pub crypto_block: f64,
    pub fake_burst: f64,
}

impl Default for EnergyTable {
    fn default() -> Self {
        Self {
            mac: 1.0,
            spad_read: 2.0,
            spad_write: 2.0,
            dram_read_burst: 100.0,
            dram_write_burst: 100.0,
            crypto_block: 50.0,
            fake_burst: 100.0,
        }
    }
}

/// Secure accelerator design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig {
    pub pe_rows: u64,
    pub pe_cols: u64,
    /// Per-role scratchpad capacities in bytes.
    pub spad_bytes: PerRole<u64>,
    /// Sustained crypto throughput in bytes per cycle.
    pub crypto_bw: u64,
    /// Cycles between the last line of an AuthBlock arriving and its data
    /// being released to the scratchpad (encrypt + verify).
    pub crypto_pipeline_depth: u64,
    /// Shaper burst size in bytes.
    pub burst_bytes: u64,
    /// DRAM cycles per burst under the closed-row policy.
    pub dram_latency: u64,
    pub freq_mhz: u64,
    /// Bits cleared per zeroizer write (`a` in the zeroization latency
    /// formula).
    pub zeroize_row_bits: u64,
    /// Cycles per zeroizer write (`C` in the same formula).
    pub zeroize_row_cycles: u64,
    /// Shaper demand queue depth, per direction.
    pub demand_queue_depth: usize,
    #[serde(default)]
    pub energy: EnergyTable,
}

impl HardwareConfig {
    /// Cloud MLaaS configuration: 256x256 PEs at 800 MHz, 6.4 GB/s crypto,
    /// 6144/6144/2048 KB scratchpads.
    pub fn cloud() -> Self {
        Self {
            pe_rows: 256,
            pe_cols: 256,
            spad_bytes: PerRole::new(6144 * 1024, 6144 * 1024, 2048 * 1024),
            crypto_bw: 8,
            crypto_pipeline_depth: 2,
            burst_bytes: 64,
            dram_latency: 40,
            freq_mhz: 800,
            zeroize_row_bits: 2048,
            zeroize_row_cycles: 1,
            demand_queue_depth: 16,
            energy: EnergyTable::default(),
        }
    }

    /// Edge device configuration: 32x32 PEs at 100 MHz, 800 MB/s crypto,
    /// 512/512/192 KB scratchpads.
    pub fn edge() -> Self {
        Self {
            pe_rows: 32,
            pe_cols: 32,
            spad_bytes: PerRole::new(512 * 1024, 512 * 1024, 192 * 1024),
            crypto_bw: 8,
            crypto_pipeline_depth: 2,
            burst_bytes: 64,
            dram_latency: 8,
            freq_mhz: 100,
            zeroize_row_bits: 2048,
            zeroize_row_cycles: 1,
            demand_queue_depth: 16,
            energy: EnergyTable::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let positives = [
            ("pe_rows", self.pe_rows),
            ("pe_cols", self.pe_cols),
            ("crypto_bw", self.crypto_bw),
            ("burst_bytes", self.burst_bytes),
            ("dram_latency", self.dram_latency),
            ("freq_mhz", self.freq_mhz),
            ("zeroize_row_bits", self.zeroize_row_bits),
            ("zeroize_row_cycles", self.zeroize_row_cycles),
            ("ifmap spad", self.spad_bytes.ifmap),
            ("weight spad", self.spad_bytes.weight),
            ("ofmap spad", self.spad_bytes.ofmap),
        ];
        for (field, v) in positives {
            if v == 0 {
                return Err(CostError::BadConfig(field));
            }
        }
        if self.demand_queue_depth == 0 {
            return Err(CostError::BadConfig("demand_queue_depth"));
        }
        for role in TensorRole::ALL {
            if self.spad_bytes.get(role) % self.burst_bytes != 0 {
                return Err(CostError::BadConfig("spad_bytes must be a multiple of burst_bytes"));
            }
        }
        Ok(())
    }
}

/// Tile sizes plus loop order: one point of the per-layer search space.
///
/// Tile sizes are indexed by [`Dim`]; the `X`/`Y` entries tile the output
/// positions of the layer (its `loop_bounds`). `loop_order` runs outer to
/// inner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Mapping {
    pub tile: [u64; 7],
    pub loop_order: [Dim; 7],
}

impl Mapping {
    /// All-ones tile with the canonical loop order.
    pub fn unit() -> Self {
        Self {
            tile: [1; 7],
            loop_order: Dim::ALL,
        }
    }

    /// Whole-layer single tile.
    pub fn single_tile(layer: &LayerSpec) -> Self {
        Self {
            tile: layer.loop_bounds(),
            loop_order: Dim::ALL,
        }
    }

    pub fn tile_of(&self, d: Dim) -> u64 {
        self.tile[d.index()]
    }

    pub fn validate(&self, layer: &LayerSpec) -> Result<(), CostError> {
        let bounds = layer.loop_bounds();
        for d in Dim::ALL {
            let t = self.tile[d.index()];
            if t == 0 || t > bounds[d.index()] {
                return Err(CostError::BadMapping("tile size out of range"));
            }
        }
        let mut seen = [false; 7];
        for d in self.loop_order {
            if seen[d.index()] {
                return Err(CostError::BadMapping("loop order is not a permutation"));
            }
            seen[d.index()] = true;
        }
        Ok(())
    }

    /// Tile count per dimension (ceiling division; edge tiles are clipped).
    pub fn tile_counts(&self, layer: &LayerSpec) -> [u64; 7] {
        let bounds = layer.loop_bounds();
        let mut counts = [0; 7];
        for i in 0..7 {
            counts[i] = bounds[i].div_ceil(self.tile[i]);
        }
        counts
    }
}

/// Compute-bound / memory-bound classification of a mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundClass {
    #[serde(rename = "CB")]
    Cb,
    #[serde(rename = "MB")]
    Mb,
}

impl fmt::Display for BoundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundClass::Cb => "CB",
            BoundClass::Mb => "MB",
        })
    }
}

/// Analytical cost of one (layer, mapping) pair.
///
/// `n_demand`/`n_redundant`/`n_integrity` are burst counts. Straight out of
/// [`estimate_layer`] they hold the demand estimate only; the AuthBlock
/// optimization replaces them with exact trace counts at the chosen
/// granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub latency: u64,
    pub energy: f64,
    pub n_demand: u64,
    pub n_redundant: u64,
    pub n_integrity: u64,
    /// Peak scratchpad utilization per role, in bits.
    pub peak_util_bits: PerRole<u64>,
    pub class: BoundClass,
    pub tile_count: u64,
}

impl CostReport {
    pub fn total_bursts(&self) -> u64 {
        self.n_demand + self.n_redundant + self.n_integrity
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CostError {
    /// A tile footprint exceeds half of its scratchpad (double buffering).
    InfeasibleMapping {
        role: TensorRole,
        needed: u64,
        half_capacity: u64,
    },
    BadMapping(&'static str),
    BadConfig(&'static str),
    ZeroBandwidth,
    InfeasibleLayer { layer: String },
}

impl fmt::Display for CostError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostError::InfeasibleMapping {
                role,
                needed,
                half_capacity,
            } => write!(
                f,
                "infeasible mapping: {role} tile needs {needed} B but half the scratchpad is {half_capacity} B"
            ),
            CostError::BadMapping(msg) => write!(f, "invalid mapping: {msg}"),
            CostError::BadConfig(msg) => write!(f, "invalid hardware config: {msg}"),
            CostError::ZeroBandwidth => write!(f, "effective bandwidth must be positive"),
            CostError::InfeasibleLayer { layer } => {
                write!(f, "layer '{layer}': no feasible mapping fits the scratchpads")
            }
        }
    }
}

/// Dimensions each tensor's tile depends on. A tensor must be (re)loaded
/// whenever any of these tile indices changes.
pub fn role_dims(role: TensorRole) -> &'static [Dim] {
    match role {
        TensorRole::Ifmap => &[Dim::C, Dim::R, Dim::S, Dim::N, Dim::X, Dim::Y],
        TensorRole::Weight => &[Dim::K, Dim::C, Dim::R, Dim::S],
        TensorRole::Ofmap => &[Dim::K, Dim::N, Dim::X, Dim::Y],
    }
}

/// One step of the tile walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileStep {
    /// Flat step number in walk order.
    pub flat: u64,
    /// Per-dimension tile index.
    pub index: [u64; 7],
    /// Per-dimension element offset of this tile.
    pub origin: [u64; 7],
    /// Per-dimension tile extent, clipped at the edge.
    pub extent: [u64; 7],
    /// Which tile indices changed relative to the previous step (all true on
    /// the first step).
    pub changed: [bool; 7],
}

impl TileStep {
    pub fn changed_role(&self, role: TensorRole) -> bool {
        role_dims(role).iter().any(|d| self.changed[d.index()])
    }

    /// Footprint in bytes of this step's tile for `role`.
    pub fn footprint(&self, layer: &LayerSpec, role: TensorRole) -> u64 {
        let esz = layer.element_size;
        let e = |d: Dim| self.extent[d.index()];
        match role {
            TensorRole::Ifmap => {
                let rows = (e(Dim::X) - 1) * layer.stride + e(Dim::R);
                let cols = (e(Dim::Y) - 1) * layer.stride + e(Dim::S);
                e(Dim::N) * e(Dim::C) * rows * cols * esz
            }
            TensorRole::Weight => e(Dim::K) * e(Dim::C) * e(Dim::R) * e(Dim::S) * esz,
            TensorRole::Ofmap => e(Dim::N) * e(Dim::K) * e(Dim::X) * e(Dim::Y) * esz,
        }
    }

    /// GEMM shape of this step's tile under im2col.
    pub fn gemm(&self) -> GemmShape {
        let e = |d: Dim| self.extent[d.index()];
        GemmShape {
            m: e(Dim::X) * e(Dim::Y) * e(Dim::N),
            kdim: e(Dim::C) * e(Dim::R) * e(Dim::S),
            ncols: e(Dim::K),
        }
    }
}

/// Iterator over tiles in loop order (outer dimension slowest).
pub struct TileWalk {
    bounds: [u64; 7],
    tile: [u64; 7],
    order: [Dim; 7],
    counts: [u64; 7],
    cursor: [u64; 7],
    /// Changed flags for the step the next `next()` call will yield.
    pending_changed: [bool; 7],
    flat: u64,
    total: u64,
}

impl TileWalk {
    pub fn new(layer: &LayerSpec, mapping: &Mapping) -> Self {
        let bounds = layer.loop_bounds();
        let counts = mapping.tile_counts(layer);
        let total = counts.iter().product();
        Self {
            bounds,
            tile: mapping.tile,
            order: mapping.loop_order,
            counts,
            cursor: [0; 7],
            pending_changed: [true; 7],
            flat: 0,
            total,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

impl Iterator for TileWalk {
    type Item = TileStep;

    fn next(&mut self) -> Option<TileStep> {
        if self.flat >= self.total {
            return None;
        }
        let index = self.cursor;
        let mut origin = [0; 7];
        let mut extent = [0; 7];
        for i in 0..7 {
            origin[i] = index[i] * self.tile[i];
            extent[i] = self.tile[i].min(self.bounds[i] - origin[i]);
        }
        let changed = self.pending_changed;
        // Advance the odometer (innermost dimension fastest) and record which
        // digits roll; those are the changed flags of the following step.
        self.pending_changed = [false; 7];
        if self.flat + 1 < self.total {
            for &d in self.order.iter().rev() {
                let i = d.index();
                // A digit with a single tile wraps in place without changing.
                self.pending_changed[i] = self.counts[i] > 1;
                self.cursor[i] += 1;
                if self.cursor[i] < self.counts[i] {
                    break;
                }
                self.cursor[i] = 0;
            }
        }
        self.flat += 1;
        Some(TileStep {
            flat: self.flat - 1,
            index,
            origin,
            extent,
            changed,
        })
    }
}

/// Footprint of the full (unclipped) tile per role, with the double-buffer
/// feasibility check: each role's tile must fit in half its scratchpad.
pub fn tile_footprint(
    layer: &LayerSpec,
    mapping: &Mapping,
    hw: &HardwareConfig,
) -> Result<PerRole<u64>, CostError> {
    mapping.validate(layer)?;
    let esz = layer.element_size;
    let t = |d: Dim| mapping.tile_of(d);
    let ifmap = t(Dim::N)
        * t(Dim::C)
        * ((t(Dim::X) - 1) * layer.stride + t(Dim::R))
        * ((t(Dim::Y) - 1) * layer.stride + t(Dim::S))
        * esz;
    let weight = t(Dim::K) * t(Dim::C) * t(Dim::R) * t(Dim::S) * esz;
    let ofmap = t(Dim::N) * t(Dim::K) * t(Dim::X) * t(Dim::Y) * esz;
    let fp = PerRole::new(ifmap, weight, ofmap);
    for role in TensorRole::ALL {
        let needed = *fp.get(role);
        let half = hw.spad_bytes.get(role) / 2;
        if needed > half {
            return Err(CostError::InfeasibleMapping {
                role,
                needed,
                half_capacity: half,
            });
        }
    }
    Ok(fp)
}

/// Systolic fill + stream + drain estimate for one GEMM tile on the
/// output-stationary array.
pub fn compute_cycles(gemm_tile: &GemmShape, hw: &HardwareConfig) -> u64 {
    let folds = gemm_tile.m.div_ceil(hw.pe_rows) * gemm_tile.ncols.div_ceil(hw.pe_cols);
    folds * (hw.pe_rows + hw.pe_cols + gemm_tile.kdim - 2)
}

/// Zeroization latency from peak per-role utilization:
/// `sum over roles of ceil(util_bits / a) * C`.
pub fn zeroize_cost(peak_util_bits: &PerRole<u64>, hw: &HardwareConfig) -> u64 {
    TensorRole::ALL
        .iter()
        .map(|&role| {
            peak_util_bits.get(role).div_ceil(hw.zeroize_row_bits) * hw.zeroize_row_cycles
        })
        .sum()
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Activity counts backing the energy number; kept separate so later stages
/// can re-price them (e.g. add fake-burst energy).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityCounts {
    pub macs: u64,
    pub spad_reads: u64,
    pub spad_writes: u64,
    pub dram_read_bursts: u64,
    pub dram_write_bursts: u64,
    pub crypto_blocks: u64,
    pub fake_bursts: u64,
}

impl ActivityCounts {
    pub fn energy(&self, table: &EnergyTable) -> f64 {
        self.macs as f64 * table.mac
            + self.spad_reads as f64 * table.spad_read
            + self.spad_writes as f64 * table.spad_write
            + self.dram_read_bursts as f64 * table.dram_read_burst
            + self.dram_write_bursts as f64 * table.dram_write_burst
            + self.crypto_blocks as f64 * table.crypto_block
            + self.fake_bursts as f64 * table.fake_burst
    }
}

/// Analytical cost of running `layer` under `mapping` with scratchpad fills
/// limited to `effective_bw` bytes/cycle.
///
/// Latency model: `load(tile_1) + sum_i max(compute(i), load(i+1) +
/// store(prev)) + store(last)`, i.e. loads of the next tile and the drain of
/// the previously completed output tile overlap compute.
pub fn estimate_layer(
    layer: &LayerSpec,
    mapping: &Mapping,
    hw: &HardwareConfig,
    effective_bw: u64,
) -> Result<CostReport, CostError> {
    if effective_bw == 0 {
        return Err(CostError::ZeroBandwidth);
    }
    tile_footprint(layer, mapping, hw)?;

    let esz = layer.element_size;
    let steps: Vec<TileStep> = TileWalk::new(layer, mapping).collect();
    let tile_count = steps.len() as u64;

    let mut load_bytes = Vec::with_capacity(steps.len());
    let mut compute = Vec::with_capacity(steps.len());
    let mut store_bytes = Vec::with_capacity(steps.len());
    let mut act = ActivityCounts::default();

    for (i, step) in steps.iter().enumerate() {
        let mut lb = 0;
        for role in [TensorRole::Ifmap, TensorRole::Weight] {
            if step.changed_role(role) {
                let bytes = step.footprint(layer, role);
                lb += bytes;
                act.dram_read_bursts += ceil_div(bytes, hw.burst_bytes);
            }
        }
        load_bytes.push(lb);

        let g = step.gemm();
        compute.push(compute_cycles(&g, hw));
        act.macs += g.macs();

        // The accumulating output tile retires when the next step moves to a
        // different output tile, or at the end of the walk.
        let completes = match steps.get(i + 1) {
            Some(next) => next.changed_role(TensorRole::Ofmap),
            None => true,
        };
        let sb = if completes {
            step.footprint(layer, TensorRole::Ofmap)
        } else {
            0
        };
        if sb > 0 {
            act.dram_write_bursts += ceil_div(sb, hw.burst_bytes);
        }
        store_bytes.push(sb);
    }

    act.spad_reads = 2 * act.macs;
    let total_load: u64 = load_bytes.iter().sum();
    let total_store: u64 = store_bytes.iter().sum();
    act.spad_writes = (total_load + total_store) / esz;
    act.crypto_blocks = act.dram_read_bursts + act.dram_write_bursts;

    // Pipelined latency.
    let lc = |bytes: u64| ceil_div(bytes, effective_bw);
    let mut latency = lc(load_bytes[0]);
    let mut pending_store = 0u64;
    let mut total_load_cycles = 0u64;
    for i in 0..steps.len() {
        total_load_cycles += lc(load_bytes[i]);
        let next_load = if i + 1 < steps.len() { load_bytes[i + 1] } else { 0 };
        let mem = lc(next_load + pending_store);
        latency += compute[i].max(mem);
        pending_store = store_bytes[i];
    }
    latency += lc(pending_store);

    // Peak per-role residency: current tile plus whatever overlaps it
    // (incoming next tile, or the draining previous output tile).
    let mut peak = PerRole::new(0u64, 0, 0);
    let mut draining = 0u64;
    for (i, step) in steps.iter().enumerate() {
        for role in [TensorRole::Ifmap, TensorRole::Weight] {
            let cur = step.footprint(layer, role);
            let incoming = match steps.get(i + 1) {
                Some(next) if next.changed_role(role) => next.footprint(layer, role),
                _ => 0,
            };
            let util = cur + incoming;
            if util > *peak.get(role) {
                *peak.get_mut(role) = util;
            }
        }
        let cur_out = step.footprint(layer, TensorRole::Ofmap);
        let util = cur_out + draining;
        if util > peak.ofmap {
            peak.ofmap = util;
        }
        draining = store_bytes[i];
    }
    let peak_util_bits = peak.map(|b| b * 8);

    let total_compute: u64 = compute.iter().sum();
    let class = if total_load_cycles > total_compute {
        BoundClass::Mb
    } else {
        BoundClass::Cb
    };

    Ok(CostReport {
        latency,
        energy: act.energy(&hw.energy),
        n_demand: act.dram_read_bursts,
        n_redundant: 0,
        n_integrity: 0,
        peak_util_bits,
        class,
        tile_count,
    })
}
