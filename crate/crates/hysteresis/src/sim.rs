//! Event-driven simulation of the controlled queue under a fixed threshold
//! or decision policy.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core::{ensure_valid, CostModel, MdpPolicy, State, SystemParams, ThresholdPolicy};
use crate::ctmc::StationaryDistribution;
use crate::error::{Error, Result};
use crate::mdp::next_level;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub warmup: f64,
    /// Replication r draws from stream r of the generator seeded with `seed`.
    pub seed: u64,
    pub replications: usize,
    /// Number of events of replication 0 written to the trace.
    pub trace_events: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { horizon: 1e5, warmup: 0.0, seed: 1, replications: 5, trace_events: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.warmup >= 0.0 && self.horizon > self.warmup) {
            return Err(Error::InvalidParams("need horizon > warmup >= 0".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParams("need at least one replication".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum SimPolicy {
    Threshold(ThresholdPolicy),
    Decision(MdpPolicy),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimResult {
    pub mean_cost: f64,
    /// Normal-approximation 95% half-width across replications.
    pub half_width: f64,
    pub replication_costs: Vec<f64>,
    /// Time fraction per state, level-major with B+1 slots per level,
    /// averaged over replications.
    pub occupancy: Vec<f64>,
    pub big_b: usize,
    pub events: u64,
    pub trace: Option<String>,
}

impl SimResult {
    pub fn occupancy_of(&self, s: State) -> f64 {
        self.occupancy[(s.k - 1) * (self.big_b + 1) + s.m]
    }

    pub fn tv_distance(&self, dist: &StationaryDistribution) -> f64 {
        let mut d = 0.0;
        let mut covered = 0.0;
        for (s, p) in dist.states.iter().zip(&dist.probs) {
            let q = self.occupancy_of(*s);
            d += (q - p).abs();
            covered += q;
        }
        // mass the simulation put outside the analytic support
        d += (1.0 - covered).max(0.0);
        0.5 * d
    }

    /// Whether `value` lies within `n` half-widths of the mean.
    pub fn covers(&self, value: f64, n: f64) -> bool {
        (self.mean_cost - value).abs() <= n * self.half_width
    }
}

#[derive(Clone, Copy, Default)]
struct Slot {
    rate: f64,
    p_arrival: f64,
    cost_rate: f64,
    arr_next: usize,
    arr_cost: f64,
    dep_next: usize,
    dep_cost: f64,
}

struct Table {
    slots: Vec<Slot>,
    b: usize,
}

impl Table {
    fn idx(&self, m: usize, k: usize) -> usize {
        (k - 1) * (self.b + 1) + m
    }

    fn threshold<C: CostModel + ?Sized>(tp: &ThresholdPolicy, sp: &SystemParams, cost: &C) -> Table {
        let b = sp.big_b;
        let kk = sp.big_k;
        let mut t = Table { slots: vec![Slot::default(); kk * (b + 1)], b };
        for k in 1..=kk {
            let lo = tp.level_low(k);
            let hi = tp.level_high(k, sp);
            for m in lo..=hi {
                let i = t.idx(m, k);
                let dep = sp.service_rate(m, k);
                let mut s = Slot { rate: sp.lambda + dep, cost_rate: cost.occupancy(m, k), ..Slot::default() };
                s.p_arrival = if s.rate > 0.0 { sp.lambda / s.rate } else { 1.0 };
                if m < hi {
                    s.arr_next = t.idx(m + 1, k);
                } else if k < kk {
                    s.arr_next = t.idx(m + 1, k + 1);
                    s.arr_cost = cost.activation();
                } else {
                    s.arr_next = i;
                    s.arr_cost = cost.rejection();
                }
                if m > lo {
                    s.dep_next = t.idx(m - 1, k);
                } else if m > 0 {
                    s.dep_next = t.idx(m - 1, k - 1);
                    s.dep_cost = cost.deactivation();
                } else {
                    s.dep_next = i;
                }
                t.slots[i] = s;
            }
        }
        t
    }

    fn decision<C: CostModel + ?Sized>(p: &MdpPolicy, sp: &SystemParams, cost: &C) -> Table {
        let b = sp.big_b;
        let kk = sp.big_k;
        let mut t = Table { slots: vec![Slot::default(); kk * (b + 1)], b };
        for k in 1..=kk {
            for m in 0..=b {
                let i = t.idx(m, k);
                let a = p.get(m, k);
                let n = next_level(k, a, kk);
                let switch = match a {
                    1 => cost.activation(),
                    -1 => cost.deactivation(),
                    _ => 0.0,
                };
                let dep = sp.service_rate(m, n);
                let mut s = Slot { rate: sp.lambda + dep, cost_rate: cost.occupancy(m, n), ..Slot::default() };
                s.p_arrival = if s.rate > 0.0 { sp.lambda / s.rate } else { 1.0 };
                if m < b {
                    s.arr_next = t.idx(m + 1, n);
                    s.arr_cost = switch;
                } else {
                    s.arr_next = t.idx(b, n);
                    s.arr_cost = switch + cost.rejection();
                }
                s.dep_next = if m > 0 { t.idx(m - 1, n) } else { i };
                s.dep_cost = switch;
                t.slots[i] = s;
            }
        }
        t
    }
}

struct Replication {
    cost: f64,
    occupancy: Vec<f64>,
    events: u64,
    trace: Option<String>,
}

fn run_one(t: &Table, start: usize, cfg: &SimConfig, stream: u64) -> Replication {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut occ = vec![0.0; t.slots.len()];
    let mut acc = 0.0;
    let mut now = 0.0;
    let mut s = start;
    let mut events = 0u64;
    let mut trace = (cfg.trace_events > 0 && stream == 0).then(String::new);
    loop {
        let slot = &t.slots[s];
        let dt = if slot.rate > 0.0 {
            let e: f64 = rng.sample(Exp1);
            e / slot.rate
        } else {
            f64::INFINITY
        };
        let next = now + dt;
        let a = now.max(cfg.warmup);
        let b = next.min(cfg.horizon);
        if b > a {
            occ[s] += b - a;
            acc += slot.cost_rate * (b - a);
        }
        if next >= cfg.horizon {
            break;
        }
        now = next;
        let arrival = rng.random::<f64>() < slot.p_arrival;
        let (to, c) = if arrival { (slot.arr_next, slot.arr_cost) } else { (slot.dep_next, slot.dep_cost) };
        if now >= cfg.warmup {
            acc += c;
        }
        events += 1;
        if let Some(tr) = trace.as_mut() {
            if events as usize <= cfg.trace_events {
                let (m, k) = (to % (t.b + 1), to / (t.b + 1) + 1);
                let _ = writeln!(tr, "{now:.6} {} {m} {k}", if arrival { "arrival" } else { "departure" });
            }
        }
        s = to;
    }
    let span = cfg.horizon - cfg.warmup;
    occ.iter_mut().for_each(|x| *x /= span);
    Replication { cost: acc / span, occupancy: occ, events, trace }
}

fn check_params(sp: &SystemParams) -> Result<()> {
    // an arrival rate of zero is allowed here; the analytic code needs it positive
    if !(sp.lambda >= 0.0 && sp.lambda.is_finite() && sp.mu > 0.0 && sp.mu.is_finite()) {
        return Err(Error::InvalidParams("need lambda >= 0 and mu > 0".into()));
    }
    if sp.big_k < 1 || sp.big_k > sp.big_b {
        return Err(Error::InvalidParams("need 1 <= K <= B".into()));
    }
    Ok(())
}

/// Replications run in parallel; results are gathered in replication order
/// so the output does not depend on scheduling.
pub fn simulate<C: CostModel + ?Sized>(
    policy: &SimPolicy,
    sp: &SystemParams,
    cost: &C,
    cfg: &SimConfig,
) -> Result<SimResult> {
    check_params(sp)?;
    cfg.validate()?;
    let (table, start) = match policy {
        SimPolicy::Threshold(tp) => {
            ensure_valid(tp, sp)?;
            let t = Table::threshold(tp, sp, cost);
            let s = t.idx(0, 1);
            (t, s)
        }
        SimPolicy::Decision(p) => {
            if p.big_k != sp.big_k || p.big_b != sp.big_b {
                return Err(Error::InvalidParams("policy shape does not match K, B".into()));
            }
            let t = Table::decision(p, sp, cost);
            let s = t.idx(0, 1);
            (t, s)
        }
    };
    let reps: Vec<Replication> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| run_one(&table, start, cfg, r))
        .collect();
    let n = reps.len() as f64;
    let costs: Vec<f64> = reps.iter().map(|r| r.cost).collect();
    let mean = costs.iter().sum::<f64>() / n;
    let half_width = if reps.len() > 1 {
        let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        f64::INFINITY
    };
    let mut occupancy = vec![0.0; table.slots.len()];
    for r in &reps {
        for (o, x) in occupancy.iter_mut().zip(&r.occupancy) {
            *o += x / n;
        }
    }
    let events = reps.iter().map(|r| r.events).sum();
    let trace = reps.into_iter().next().and_then(|r| r.trace);
    Ok(SimResult {
        mean_cost: mean,
        half_width,
        replication_costs: costs,
        occupancy,
        big_b: sp.big_b,
        events,
        trace,
    })
}
