//! Financial cost of a virtualized host under a response-time SLA, in euros
//! per hour, with the three VM sizings used in the concrete experiments.

use serde::{Deserialize, Serialize};

use crate::core::{CostModel, SystemParams, ThresholdPolicy};
use crate::ctmc::state_cost;
use crate::error::{Error, Result};

/// SLA bound used by the presets when none is given, in requests.
pub const DEFAULT_N_SLA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaCostModel {
    /// Penalty per customer-hour above the SLA level and per rejection.
    pub c_p: f64,
    pub c_s: f64,
    pub c_a: f64,
    pub c_d: f64,
    /// Idle cost of the physical host.
    pub c_static: f64,
    /// Response-time bound, hours.
    pub t_sla: f64,
    /// Arrival rate the bound is converted with.
    pub lambda: f64,
}

impl SlaCostModel {
    pub fn new(c_p: f64, c_s: f64, c_a: f64, c_d: f64, c_static: f64, t_sla: f64, lambda: f64) -> Result<Self> {
        let m = SlaCostModel { c_p, c_s, c_a, c_d, c_static, t_sla, lambda };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.c_p, self.c_s, self.c_a, self.c_d, self.c_static, self.t_sla, self.lambda];
        if all.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidParams("SLA cost fields must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Request count allowed by the SLA through Little's law.
    pub fn n_sla(&self) -> f64 {
        self.t_sla * self.lambda
    }

    /// Same model with the bound set so that `n_sla()` equals `n` at `lambda`.
    pub fn with_n_sla(&self, n: f64, lambda: f64) -> Self {
        let t_sla = if lambda > 0.0 { n / lambda } else { 0.0 };
        SlaCostModel { t_sla, lambda, ..*self }
    }

    /// Energy part of a state's cost rate: running VMs and the idle host.
    pub fn energy(&self, k: usize) -> f64 {
        self.c_s * k as f64 + self.c_static
    }

    /// Performance part: SLA excess.
    pub fn performance(&self, m: usize) -> f64 {
        self.holding(m)
    }
}

impl CostModel for SlaCostModel {
    #[inline]
    fn holding(&self, m: usize) -> f64 {
        self.c_p * (m as f64 - self.n_sla()).max(0.0)
    }
    #[inline]
    fn server(&self, k: usize) -> f64 {
        self.c_s * k as f64
    }
    fn activation(&self) -> f64 {
        self.c_a
    }
    fn deactivation(&self) -> f64 {
        self.c_d
    }
    fn rejection(&self) -> f64 {
        self.c_p
    }
    fn fixed(&self) -> f64 {
        self.c_static
    }
}

/// Per-state cost rate of the hysteresis chain under the SLA model.
pub fn sla_state_cost(m: usize, k: usize, model: &SlaCostModel, tp: &ThresholdPolicy, sp: &SystemParams) -> f64 {
    state_cost(m, k, tp, sp, model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PresetId {
    A,
    B,
    C,
}

impl PresetId {
    pub const ALL: [PresetId; 3] = [PresetId::A, PresetId::B, PresetId::C];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(PresetId::A),
            "B" => Ok(PresetId::B),
            "C" => Ok(PresetId::C),
            _ => Err(Error::Unknown(format!("preset {s}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PresetId::A => "A",
            PresetId::B => "B",
            PresetId::C => "C",
        }
    }
}

/// VM sizings: A is 3 VMs of 4 vCPU, B 6 of 2, C 12 of 1, all on one host.
pub fn preset(id: PresetId) -> (SystemParams, SlaCostModel) {
    let lambda = 50.0;
    let (k, mu, c_p, c_s, c_ad) = match id {
        PresetId::A => (3, 20.0, 0.0914, 0.00632, 0.00158),
        PresetId::B => (6, 10.0, 0.0211, 0.00316, 0.00079),
        PresetId::C => (12, 5.0, 0.0118, 0.00158, 0.00032),
    };
    let sp = SystemParams { lambda, mu, big_k: k, big_b: 100 };
    let model = SlaCostModel {
        c_p,
        c_s,
        c_a: c_ad,
        c_d: c_ad,
        c_static: 0.0158,
        t_sla: DEFAULT_N_SLA / lambda,
        lambda,
    };
    (sp, model)
}
