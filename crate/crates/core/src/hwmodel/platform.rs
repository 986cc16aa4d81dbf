use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target device budgets plus the off-chip channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformSpec {
    pub name: String,
    pub dsp_total: u64,
    pub bram18_total: u64,
    /// May be `inf` in code; JSON files must give a finite value.
    pub bandwidth_bits_per_cycle: f64,
    pub clock_mhz: f64,
    /// Weight word length → multiplications packed per DSP.
    #[serde(default)]
    pub packing: BTreeMap<u8, u64>,
}

impl PlatformSpec {
    /// Xilinx ZCU111. The bandwidth is DDR4-2400 on a 64-bit bus seen from a
    /// 200 MHz fabric clock: 2400e6 · 64 / 200e6 = 768 bits/cycle.
    pub fn zcu111() -> Self {
        Self {
            name: "zcu111".into(),
            dsp_total: 4272,
            bram18_total: 1080,
            bandwidth_bits_per_cycle: 768.0,
            clock_mhz: 200.0,
            packing: BTreeMap::from([(8, 1), (6, 2), (5, 2), (4, 2)]),
        }
    }

    pub fn f_packing(&self, weight_wl: u8) -> u64 {
        self.packing.get(&weight_wl).copied().unwrap_or(1)
    }

    pub fn with_bandwidth(&self, bits_per_cycle: f64) -> Self {
        Self {
            bandwidth_bits_per_cycle: bits_per_cycle,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("platform {}: {what}", self.name)));
        if self.dsp_total == 0 || self.bram18_total == 0 {
            return bad("dsp_total and bram18_total must be positive");
        }
        if !(self.bandwidth_bits_per_cycle > 0.0) {
            return bad("bandwidth_bits_per_cycle must be positive");
        }
        if !(self.clock_mhz > 0.0 && self.clock_mhz.is_finite()) {
            return bad("clock_mhz must be positive");
        }
        if self.packing.values().any(|f| *f == 0) {
            return bad("packing factors must be >= 1");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn cycles_to_ms(&self, cycles: u64) -> f64 {
        cycles as f64 / (self.clock_mhz * 1e3)
    }
}
