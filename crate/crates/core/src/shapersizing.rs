//! Shaper bandwidth sizing from a mapping's cost report.
//!
//! Bandwidth is kept as an exact rational in bursts per cycle; the simulator
//! realizes it as an integer inter-dispatch interval.

use core::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::costmodel::{BoundClass, CostReport, HardwareConfig};

/// Bursts per cycle, exact.
pub type Bw = Ratio<u128>;

/// Sized shaper bandwidth for one (layer, mapping) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    pub bw: Bw,
    pub class: BoundClass,
    pub n_demand: u64,
    pub n_redundant: u64,
    pub n_integrity: u64,
    /// Mapping runtime `R_i` from the tiling phase, in cycles.
    pub runtime: u64,
}

impl BandwidthPlan {
    /// Integer dispatch interval realizing `bw`: `max(1, round(1/bw))`
    /// cycles per burst.
    pub fn dispatch_interval(&self) -> u64 {
        interval_for(self.bw)
    }

    /// Relative quantization error of the realized interval versus the exact
    /// bandwidth.
    pub fn quantization_error(&self) -> f64 {
        let realized = 1.0 / self.dispatch_interval() as f64;
        let exact = ratio_to_f64(self.bw);
        libm::fabs(realized - exact) / exact
    }

    /// Bandwidth in bytes per second under `hw`'s clock and burst size.
    pub fn bytes_per_sec(&self, hw: &HardwareConfig) -> f64 {
        ratio_to_f64(self.bw) * hw.burst_bytes as f64 * hw.freq_mhz as f64 * 1e6
    }
}

/// `max(1, round(1/bw))`, rounding half up.
pub fn interval_for(bw: Bw) -> u64 {
    let num = *bw.numer();
    let den = *bw.denom();
    if num == 0 {
        return 1;
    }
    let rounded = (2 * den + num) / (2 * num);
    rounded.max(1) as u64
}

pub fn ratio_to_f64(r: Bw) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SizingError {
    /// Runtime of zero cycles: degenerate layer.
    ZeroRuntime,
}

impl fmt::Display for SizingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizingError::ZeroRuntime => write!(f, "layer runtime is zero"),
        }
    }
}

/// Size the shaper bandwidth for one mapping.
///
/// Memory-bound mappings keep the crypto block fed and ride the metadata on
/// top: `bw = bw_crypto + (N_R + N_I) / R_i`. Compute-bound mappings only
/// need all traffic done within the runtime: `bw = (N_D + N_R + N_I) / R_i`.
/// `report` must carry trace counts at the chosen AuthBlock granularity.
pub fn size_bandwidth(
    report: &CostReport,
    hw: &HardwareConfig,
) -> Result<BandwidthPlan, SizingError> {
    if report.latency == 0 {
        return Err(SizingError::ZeroRuntime);
    }
    let runtime = report.latency as u128;
    let meta = (report.n_redundant + report.n_integrity) as u128;
    let all = report.total_bursts() as u128;
    let bw = match report.class {
        BoundClass::Mb => {
            Ratio::new(hw.crypto_bw as u128, hw.burst_bytes as u128) + Ratio::new(meta, runtime)
        }
        BoundClass::Cb => Ratio::new(all, runtime),
    };
    Ok(BandwidthPlan {
        bw,
        class: report.class,
        n_demand: report.n_demand,
        n_redundant: report.n_redundant,
        n_integrity: report.n_integrity,
        runtime: report.latency,
    })
}
