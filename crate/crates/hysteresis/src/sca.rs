//! Stochastic complement analysis of the hysteresis chain: one folded
//! birth-death chain per level, a birth-death chain over levels, and cheap
//! re-evaluation after a single threshold move.

use std::sync::Arc;

use crate::core::{ensure_valid, CostModel, State, SystemParams, ThresholdPolicy};
use crate::ctmc::{state_cost, StationaryDistribution};
use crate::error::{Error, Result};
use crate::linalg::{gth_sparse, normalize, power_stationary, RateRows};

/// How a level's folded chain is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MicroMethod {
    /// Cut-equation recurrence in the two boundary probabilities. Loses
    /// accuracy when the per-server load is well above one.
    ClosedForm,
    /// Subtraction-free elimination, linear in the level width.
    #[default]
    Elimination,
    PowerMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroChain {
    pub level: usize,
    /// Support is `low..=high`.
    pub low: usize,
    pub high: usize,
    pub dist: Vec<f64>,
    pub level_cost: f64,
}

impl MicroChain {
    pub fn prob(&self, m: usize) -> f64 {
        if m < self.low || m > self.high {
            0.0
        } else {
            self.dist[m - self.low]
        }
    }
}

impl AsRef<MicroChain> for MicroChain {
    fn as_ref(&self) -> &MicroChain {
        self
    }
}

/// Rates of the folded chain of level `k` on local indices `m - low`.
pub fn micro_rates(tp: &ThresholdPolicy, sp: &SystemParams, k: usize) -> RateRows {
    let low = tp.level_low(k);
    let high = tp.level_high(k, sp);
    let n = high - low + 1;
    let mut rows: RateRows = vec![Vec::with_capacity(2); n];
    for (i, row) in rows.iter_mut().enumerate() {
        let m = low + i;
        if m < high {
            row.push((i + 1, sp.lambda));
        } else if k < sp.big_k {
            let back = tp.big_r(k) - low;
            if back != i {
                row.push((back, sp.lambda));
            }
        }
        if m > low {
            row.push((i - 1, sp.service_rate(m, k)));
        } else if k >= 2 {
            let entry = tp.big_f(k - 1) + 1 - low;
            if entry != i {
                row.push((entry, sp.service_rate(m, k)));
            }
        }
    }
    rows
}

fn closed_form(tp: &ThresholdPolicy, sp: &SystemParams, k: usize) -> Vec<f64> {
    let low = tp.level_low(k);
    let high = tp.level_high(k, sp);
    let n = high - low + 1;
    if n == 1 {
        return vec![1.0];
    }
    // pi(low + i) = alpha[i] * pi(low) + beta[i] * pi(high), from the balance of
    // flows across each cut between m and m + 1.
    let bottom = if k >= 2 { sp.service_rate(low, k) } else { 0.0 };
    let bottom_entry = if k >= 2 { tp.big_f(k - 1) + 1 } else { low };
    let top_back = if k < sp.big_k { Some(tp.big_r(k)) } else { None };
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    alpha[0] = 1.0;
    for i in 0..n - 1 {
        let m = low + i;
        let mut a = sp.lambda * alpha[i];
        let mut b = sp.lambda * beta[i];
        if m < bottom_entry {
            a += bottom;
        }
        if top_back.is_some_and(|r| r <= m) {
            b -= sp.lambda;
        }
        let d = sp.service_rate(m + 1, k);
        alpha[i + 1] = a / d;
        beta[i + 1] = b / d;
    }
    let top = alpha[n - 1] / (1.0 - beta[n - 1]);
    let mut pi: Vec<f64> = (0..n).map(|i| alpha[i] + beta[i] * top).collect();
    pi[n - 1] = top;
    normalize(&mut pi);
    pi
}

pub fn solve_micro<C: CostModel + ?Sized>(
    tp: &ThresholdPolicy,
    sp: &SystemParams,
    k: usize,
    cost: &C,
    method: MicroMethod,
) -> Result<MicroChain> {
    assert!(k >= 1 && k <= sp.big_k, "level {k} out of range");
    let low = tp.level_low(k);
    let high = tp.level_high(k, sp);
    assert!(low <= high, "empty level {k}");
    let dist = match method {
        MicroMethod::ClosedForm => closed_form(tp, sp, k),
        MicroMethod::Elimination => gth_sparse(&micro_rates(tp, sp, k))
            .ok_or_else(|| Error::Reducible(format!("micro-chain {k}")))?,
        MicroMethod::PowerMethod => {
            let rows = micro_rates(tp, sp, k);
            power_stationary(&rows, sp.unif_rate(), 1e-13, 10_000_000, None)?.0
        }
    };
    let level_cost = dist
        .iter()
        .enumerate()
        .map(|(i, p)| p * state_cost(low + i, k, tp, sp, cost))
        .sum();
    Ok(MicroChain { level: k, low, high, dist, level_cost })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroChain {
    /// λ_k for k = 1..K-1.
    pub up_rates: Vec<f64>,
    /// μ_k for k = 2..K.
    pub down_rates: Vec<f64>,
    /// Π over levels 1..K.
    pub dist: Vec<f64>,
}

pub fn solve_macro<M: AsRef<MicroChain>>(micros: &[M], sp: &SystemParams) -> Result<MacroChain> {
    let kk = sp.big_k;
    let mut up_rates = Vec::with_capacity(kk - 1);
    let mut down_rates = Vec::with_capacity(kk - 1);
    for k in 1..kk {
        let lower = micros[k - 1].as_ref();
        let upper = micros[k].as_ref();
        up_rates.push(sp.lambda * lower.prob(lower.high));
        down_rates.push(sp.service_rate(upper.low, k + 1) * upper.prob(upper.low));
    }
    if let Some(k) = down_rates.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Reducible(format!("level {} has no way down", k + 2)));
    }
    let mut logw = vec![0.0; kk];
    for k in 1..kk {
        logw[k] = logw[k - 1] + up_rates[k - 1].ln() - down_rates[k - 1].ln();
    }
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut dist: Vec<f64> = logw.iter().map(|w| (w - top).exp()).collect();
    normalize(&mut dist);
    Ok(MacroChain { up_rates, down_rates, dist })
}

pub fn aggregated_cost<M: AsRef<MicroChain>>(micros: &[M], mac: &MacroChain) -> f64 {
    micros
        .iter()
        .zip(&mac.dist)
        .map(|(mc, p)| p * mc.as_ref().level_cost)
        .sum()
}

/// π(m,k) = Π(k)·π_k(m), level-major like the full chain.
pub fn sca_distribution(tp: &ThresholdPolicy, sp: &SystemParams) -> Result<StationaryDistribution> {
    ensure_valid(tp, sp)?;
    let zero = crate::core::CostRates { c_h: 0.0, c_s: 0.0, c_a: 0.0, c_d: 0.0, c_r: 0.0 };
    let micros = (1..=sp.big_k)
        .map(|k| solve_micro(tp, sp, k, &zero, MicroMethod::default()))
        .collect::<Result<Vec<_>>>()?;
    let mac = solve_macro(&micros, sp)?;
    let mut states = Vec::new();
    let mut probs = Vec::new();
    for (mc, pk) in micros.iter().zip(&mac.dist) {
        for (i, p) in mc.dist.iter().enumerate() {
            states.push(State { m: mc.low + i, k: mc.level });
            probs.push(pk * p);
        }
    }
    Ok(StationaryDistribution { states, probs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThresholdKind {
    F,
    R,
}

/// Set F_index or R_index (1-based) to `value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ThresholdChange {
    pub kind: ThresholdKind,
    pub index: usize,
    pub value: usize,
}

impl ThresholdChange {
    pub fn apply(&self, tp: &ThresholdPolicy) -> ThresholdPolicy {
        let mut out = tp.clone();
        match self.kind {
            ThresholdKind::F => out.f[self.index - 1] = self.value,
            ThresholdKind::R => out.r[self.index - 1] = self.value,
        }
        out
    }
}

/// Micro- and macro-chains of the current policy.
#[derive(Debug, Clone)]
pub struct ScaCache {
    pub policy: ThresholdPolicy,
    pub sp: SystemParams,
    pub method: MicroMethod,
    pub micros: Vec<Arc<MicroChain>>,
    pub macro_chain: MacroChain,
    pub cost: f64,
}

impl ScaCache {
    pub fn new<C: CostModel + ?Sized>(
        tp: &ThresholdPolicy,
        sp: &SystemParams,
        cost: &C,
        method: MicroMethod,
    ) -> Result<Self> {
        ensure_valid(tp, sp)?;
        let micros = (1..=sp.big_k)
            .map(|k| solve_micro(tp, sp, k, cost, method).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let macro_chain = solve_macro(&micros, sp)?;
        let c = aggregated_cost(&micros, &macro_chain);
        Ok(ScaCache { policy: tp.clone(), sp: *sp, method, micros, macro_chain, cost: c })
    }

    /// Cache for the policy after `change`; only levels `index` and
    /// `index + 1` are re-solved.
    pub fn apply<C: CostModel + ?Sized>(&self, change: ThresholdChange, cost: &C) -> Result<Self> {
        let k = change.index;
        if k == 0 || k >= self.sp.big_k {
            return Err(Error::InvalidPolicy);
        }
        let tp = change.apply(&self.policy);
        ensure_valid(&tp, &self.sp)?;
        let mut micros = self.micros.clone();
        micros[k - 1] = Arc::new(solve_micro(&tp, &self.sp, k, cost, self.method)?);
        micros[k] = Arc::new(solve_micro(&tp, &self.sp, k + 1, cost, self.method)?);
        let macro_chain = solve_macro(&micros, &self.sp)?;
        let c = aggregated_cost(&micros, &macro_chain);
        Ok(ScaCache { policy: tp, sp: self.sp, method: self.method, micros, macro_chain, cost: c })
    }
}

pub fn incremental_cost<C: CostModel + ?Sized>(
    cache: &ScaCache,
    change: ThresholdChange,
    cost: &C,
) -> Result<(f64, ScaCache)> {
    let next = cache.apply(change, cost)?;
    Ok((next.cost, next))
}
