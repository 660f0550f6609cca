//! Uniformized average-cost decision process over states (m, k) with actions
//! {-1, 0, +1} on the number of active servers.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::core::{
    thresholds_of, CostModel, HysteresisThresholds, MdpPolicy, State, SystemParams, ThresholdPolicy,
};
use crate::error::{Error, Result};
use crate::linalg::{gth_banded, normalize, power_stationary, Band, RateRows};

/// Span tolerance, relative to 1 + |gain|.
pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000_000;

pub const ACTIONS: [i8; 3] = [-1, 0, 1];
/// Tie-breaking preference used by every greedy step.
const PREFERENCE: [i8; 3] = [0, -1, 1];

#[inline]
fn slot(a: i8) -> usize {
    (a + 1) as usize
}

/// Next level N(k + a), clamped to [1, K].
#[inline]
pub fn next_level(k: usize, a: i8, big_k: usize) -> usize {
    (k as i64 + a as i64).clamp(1, big_k as i64) as usize
}

/// Sparse row of the uniformized kernel: an arrival target, a departure
/// target and a self-loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelRow {
    pub up: usize,
    pub p_up: f64,
    pub down: usize,
    pub p_down: f64,
    pub p_stay: f64,
}

#[derive(Debug, Clone)]
pub struct UniformizedMdp {
    pub sp: SystemParams,
    pub unif_rate: f64,
    /// Indexed like [`MdpPolicy::action`], then by action slot a + 1.
    pub kernel: Vec<[KernelRow; 3]>,
    pub stage_cost: Vec<[f64; 3]>,
}

impl UniformizedMdp {
    pub fn n_states(&self) -> usize {
        self.kernel.len()
    }

    #[inline]
    pub fn index(&self, m: usize, k: usize) -> usize {
        (k - 1) * (self.sp.big_b + 1) + m
    }

    #[inline]
    pub fn state(&self, s: usize) -> State {
        let w = self.sp.big_b + 1;
        State { m: s % w, k: s / w + 1 }
    }

    #[inline]
    fn q_value(&self, v: &[f64], s: usize, a: i8) -> f64 {
        let r = &self.kernel[s][slot(a)];
        self.stage_cost[s][slot(a)] + r.p_up * v[r.up] + r.p_down * v[r.down] + r.p_stay * v[s]
    }

    /// Actions that respect the level bounds.
    #[inline]
    fn admissible(&self, s: usize, a: i8) -> bool {
        let k = s / (self.sp.big_b + 1) + 1;
        !(a == 1 && k == self.sp.big_k) && !(a == -1 && k == 1)
    }
}

pub fn build_mdp<C: CostModel + ?Sized>(sp: &SystemParams, cost: &C) -> Result<UniformizedMdp> {
    sp.validate()?;
    let kk = sp.big_k;
    let bb = sp.big_b;
    let unif = sp.unif_rate();
    let idx = |m: usize, k: usize| (k - 1) * (bb + 1) + m;
    let n = kk * (bb + 1);
    let mut kernel = Vec::with_capacity(n);
    let mut stage_cost = Vec::with_capacity(n);
    for k in 1..=kk {
        for m in 0..=bb {
            let s = idx(m, k);
            let mut rows = [KernelRow { up: s, p_up: 0.0, down: s, p_down: 0.0, p_stay: 1.0 }; 3];
            let mut costs = [0.0; 3];
            for a in ACTIONS {
                let nk = next_level(k, a, kk);
                let dep = sp.service_rate(m, nk);
                let p_up = sp.lambda / unif;
                let p_down = dep / unif;
                // A rejected arrival still carries out the switch.
                let up = if m < bb { idx(m + 1, nk) } else { idx(bb, nk) };
                let down = if m > 0 { idx(m - 1, nk) } else { s };
                rows[slot(a)] = KernelRow { up, p_up, down, p_down, p_stay: 1.0 - p_up - p_down };
                let switch = match a {
                    1 => cost.activation(),
                    -1 => cost.deactivation(),
                    _ => 0.0,
                };
                let reject = if m == bb { sp.lambda * cost.rejection() } else { 0.0 };
                costs[slot(a)] = (switch * (sp.lambda + dep) + reject + cost.occupancy(m, nk)) / unif;
            }
            kernel.push(rows);
            stage_cost.push(costs);
        }
    }
    Ok(UniformizedMdp { sp: *sp, unif_rate: unif, kernel, stage_cost })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    /// Average cost per uniformized step.
    pub gain: f64,
}

impl ValueFunction {
    /// Gain converted to cost per unit of time.
    pub fn cost_rate(&self, mdp: &UniformizedMdp) -> f64 {
        self.gain * mdp.unif_rate
    }
}

fn span(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Greedy action among `cands` (already in preference order) with a
/// relative tie tolerance.
#[inline]
fn pick(mdp: &UniformizedMdp, v: &[f64], s: usize, cands: &[i8]) -> (i8, f64) {
    let mut best_a = cands[0];
    let mut best_q = mdp.q_value(v, s, best_a);
    for &a in &cands[1..] {
        let q = mdp.q_value(v, s, a);
        if q < best_q - 1e-12 * (1.0 + best_q.abs()) {
            best_a = a;
            best_q = q;
        }
    }
    (best_a, best_q)
}

fn candidates(mdp: &UniformizedMdp, s: usize, lo: i8, hi: i8, buf: &mut Vec<i8>) {
    buf.clear();
    for a in PREFERENCE {
        if a >= lo && a <= hi && mdp.admissible(s, a) {
            buf.push(a);
        }
    }
}

fn greedy(mdp: &UniformizedMdp, v: &[f64]) -> (MdpPolicy, Vec<f64>) {
    let mut p = MdpPolicy::zeros(&mdp.sp);
    let mut tv = vec![0.0; v.len()];
    let mut buf = Vec::with_capacity(3);
    for s in 0..v.len() {
        candidates(mdp, s, -1, 1, &mut buf);
        let (a, q) = pick(mdp, v, s, &buf);
        p.action[s] = a;
        tv[s] = q;
    }
    (p, tv)
}

fn bellman(mdp: &UniformizedMdp, v: &[f64], out: &mut [f64]) {
    let mut buf = Vec::with_capacity(3);
    for s in 0..v.len() {
        candidates(mdp, s, -1, 1, &mut buf);
        let mut best = f64::INFINITY;
        for &a in &buf {
            best = best.min(mdp.q_value(v, s, a));
        }
        out[s] = best;
    }
}

pub fn value_iteration(mdp: &UniformizedMdp, eps: f64, max_iter: usize) -> Result<(ValueFunction, MdpPolicy)> {
    let n = mdp.n_states();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut last = f64::INFINITY;
    for _ in 0..max_iter {
        bellman(mdp, &v, &mut next);
        let (lo, hi) = span(&next.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        std::mem::swap(&mut v, &mut next);
        last = hi - lo;
        if last < eps * (1.0 + (0.5 * (lo + hi)).abs()) {
            let (p, _) = greedy(mdp, &v);
            return Ok((ValueFunction { values: v, gain: 0.5 * (lo + hi) }, p));
        }
    }
    Err(Error::IterationLimit { iterations: max_iter, residual: last })
}

/// Value iteration renormalized by the value of `reference` after each sweep.
pub fn relative_value_iteration_at(
    mdp: &UniformizedMdp,
    reference: usize,
    eps: f64,
    max_iter: usize,
) -> Result<(ValueFunction, MdpPolicy)> {
    let n = mdp.n_states();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut last = f64::INFINITY;
    for _ in 0..max_iter {
        bellman(mdp, &v, &mut next);
        let (lo, hi) = span(&next.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        let offset = next[reference];
        next.iter_mut().for_each(|x| *x -= offset);
        std::mem::swap(&mut v, &mut next);
        last = hi - lo;
        if last < eps * (1.0 + (0.5 * (lo + hi)).abs()) {
            let (p, _) = greedy(mdp, &v);
            return Ok((ValueFunction { values: v, gain: 0.5 * (lo + hi) }, p));
        }
    }
    Err(Error::IterationLimit { iterations: max_iter, residual: last })
}

pub fn relative_value_iteration(mdp: &UniformizedMdp, eps: f64, max_iter: usize) -> Result<(ValueFunction, MdpPolicy)> {
    relative_value_iteration_at(mdp, 0, eps, max_iter)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PiVariant {
    Plain,
    Adapted,
    DoubleLevel,
    Hysteresis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PiStats {
    pub iterations: usize,
    /// Q-value evaluations performed in improvement steps.
    pub improvement_evals: usize,
    pub eval_sweeps: usize,
}

pub fn policy_iteration(
    mdp: &UniformizedMdp,
    variant: PiVariant,
    eps: f64,
    max_iter: usize,
) -> Result<(ValueFunction, MdpPolicy)> {
    policy_iteration_stats(mdp, variant, eps, max_iter).map(|(v, p, _)| (v, p))
}

/// One improvement scan. States are visited level by level with m increasing
/// so the structured variants can bound each action by decisions already
/// taken in the same scan.
fn improve(
    mdp: &UniformizedMdp,
    v: &[f64],
    policy: &MdpPolicy,
    variant: PiVariant,
    stats: &mut PiStats,
    buf: &mut Vec<i8>,
) -> (MdpPolicy, Vec<f64>) {
    let mut next = policy.clone();
    let mut tv = vec![0.0; v.len()];
    for k in 1..=mdp.sp.big_k {
        for m in 0..=mdp.sp.big_b {
            let s = mdp.index(m, k);
            let (lo, hi) = match variant {
                PiVariant::Plain | PiVariant::Adapted => (-1, 1),
                PiVariant::DoubleLevel => (if m > 0 { next.get(m - 1, k) } else { -1 }, 1),
                PiVariant::Hysteresis => (
                    if m > 0 { next.get(m - 1, k) } else { -1 },
                    if k > 1 { next.get(m, k - 1) } else { 1 },
                ),
            };
            candidates(mdp, s, lo, hi, buf);
            stats.improvement_evals += buf.len();
            let (a, q) = pick(mdp, v, s, buf);
            next.action[s] = a;
            tv[s] = q;
        }
    }
    (next, tv)
}

/// Modified policy iteration.
pub fn policy_iteration_stats(
    mdp: &UniformizedMdp,
    variant: PiVariant,
    eps: f64,
    max_iter: usize,
) -> Result<(ValueFunction, MdpPolicy, PiStats)> {
    let n = mdp.n_states();
    let mut policy = MdpPolicy::irreducible_start(&mdp.sp);
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut stats = PiStats::default();
    let mut sweeps = if variant == PiVariant::Adapted { 10 } else { 100 };
    let mut prev_gain = f64::NAN;
    let mut buf = Vec::with_capacity(3);
    let mut residual = f64::INFINITY;
    let mut seen = HashSet::new();
    while stats.iterations < max_iter {
        stats.iterations += 1;
        let mut eval_res = f64::INFINITY;
        for _ in 0..sweeps {
            for s in 0..n {
                w[s] = mdp.q_value(&v, s, policy.action[s]);
            }
            let (lo, hi) = span(&w.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
            eval_res = hi - lo;
            let offset = w[0];
            for s in 0..n {
                v[s] = w[s] - offset;
            }
            stats.eval_sweeps += 1;
        }

        let structured = matches!(variant, PiVariant::DoubleLevel | PiVariant::Hysteresis);
        let (mut next, mut tv) = improve(mdp, &v, &policy, variant, &mut stats, &mut buf);
        let (mut lo, mut hi) = span(&tv.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        // The restricted scan is not a true improvement step when the optimal
        // rule is not monotone in m, and can cycle. A full scan replaces it
        // whenever it returns to an earlier policy.
        if structured && next != policy && seen.contains(&next.action) {
            (next, tv) = improve(mdp, &v, &policy, PiVariant::Plain, &mut stats, &mut buf);
            (lo, hi) = span(&tv.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        }
        if structured {
            seen.insert(next.action.clone());
        }
        residual = hi - lo;
        let gain = 0.5 * (lo + hi);
        let stable = next == policy;
        if stable && residual < eps * (1.0 + gain.abs()) {
            return Ok((ValueFunction { values: v, gain }, policy, stats));
        }
        if variant == PiVariant::Adapted && sweeps < 100_000 && eval_res > (gain - prev_gain).abs() {
            sweeps *= 2;
        }
        prev_gain = gain;
        policy = next;
    }
    Err(Error::IterationLimit { iterations: max_iter, residual })
}

/// Continuous-time rates of the chain induced by `p`, indexed like the policy.
pub fn induced_rates(mdp: &UniformizedMdp, p: &MdpPolicy) -> RateRows {
    (0..mdp.n_states())
        .map(|s| {
            let r = &mdp.kernel[s][slot(p.action[s])];
            let mut row = Vec::with_capacity(2);
            if r.up != s && r.p_up > 0.0 {
                row.push((r.up, r.p_up * mdp.unif_rate));
            }
            if r.down != s && r.p_down > 0.0 {
                row.push((r.down, r.p_down * mdp.unif_rate));
            }
            row
        })
        .collect()
}

/// Closed communicating classes of the chain induced by `p`.
pub fn recurrent_classes(mdp: &UniformizedMdp, p: &MdpPolicy) -> Vec<Vec<State>> {
    let rows = induced_rates(mdp, p);
    let mut g = DiGraph::<(), ()>::with_capacity(rows.len(), 2 * rows.len());
    let nodes: Vec<_> = (0..rows.len()).map(|_| g.add_node(())).collect();
    for (i, row) in rows.iter().enumerate() {
        for &(j, _) in row {
            g.add_edge(nodes[i], nodes[j], ());
        }
    }
    let mut comp = vec![usize::MAX; rows.len()];
    let sccs = tarjan_scc(&g);
    for (c, members) in sccs.iter().enumerate() {
        for n in members {
            comp[n.index()] = c;
        }
    }
    let mut out: Vec<Vec<State>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members
                .iter()
                .all(|n| rows[n.index()].iter().all(|&(j, _)| comp[j] == *c))
        })
        .map(|(_, members)| {
            let mut v: Vec<State> = members.iter().map(|n| mdp.state(n.index())).collect();
            v.sort();
            v
        })
        .collect();
    out.sort();
    out
}

/// Stationary distribution of the chain induced by `p`, indexed like
/// [`MdpPolicy::action`]. Solved exactly on the closed class when there is a
/// single one; otherwise the long-run average from a uniform start.
pub fn policy_stationary(mdp: &UniformizedMdp, p: &MdpPolicy) -> Result<Vec<f64>> {
    let classes = recurrent_classes(mdp, p);
    let rows = induced_rates(mdp, p);
    if classes.len() != 1 {
        let (pi, _) = power_stationary(&rows, mdp.unif_rate, 1e-13, DEFAULT_MAX_ITER, None)?;
        return Ok(pi);
    }
    // Order the class request-major so the rate matrix is banded.
    let kk = mdp.sp.big_k;
    let mut members: Vec<usize> = classes[0].iter().map(|st| mdp.index(st.m, st.k)).collect();
    members.sort_by_key(|&s| {
        let st = mdp.state(s);
        st.m * kk + st.k
    });
    let mut local = vec![usize::MAX; mdp.n_states()];
    for (i, &s) in members.iter().enumerate() {
        local[s] = i;
    }
    let mut width = 1;
    for &s in &members {
        for &(j, _) in &rows[s] {
            width = width.max(local[s].abs_diff(local[j]));
        }
    }
    let mut band = Band::new(members.len(), width);
    for &s in &members {
        for &(j, r) in &rows[s] {
            band.add(local[s], local[j], r);
        }
    }
    let mut pi = gth_banded(band).ok_or_else(|| Error::Reducible("closed class".into()))?;
    normalize(&mut pi);
    let mut full = vec![0.0; mdp.n_states()];
    for (&s, x) in members.iter().zip(pi) {
        full[s] = x;
    }
    Ok(full)
}

/// Long-run cost per unit time of `p`.
pub fn policy_gain(mdp: &UniformizedMdp, p: &MdpPolicy) -> Result<f64> {
    let pi = policy_stationary(mdp, p)?;
    Ok(pi
        .iter()
        .enumerate()
        .map(|(s, x)| x * mdp.stage_cost[s][slot(p.action[s])] * mdp.unif_rate)
        .sum())
}

/// Threshold vectors of `p`, or `None` when some level is not monotone in m.
pub fn extract_hysteresis(p: &MdpPolicy, _sp: &SystemParams) -> Option<HysteresisThresholds> {
    if !(1..=p.big_k).all(|k| p.level_monotone(k)) {
        return None;
    }
    Some(thresholds_of(p))
}

/// F_k = L_{k+1} - 1 and R_k = l_{k+1} + 1; `None` when infeasible.
pub fn shift_to_mc(ht: &HysteresisThresholds, sp: &SystemParams) -> Option<ThresholdPolicy> {
    ht.to_mc(sp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArrivalRegime {
    Low,
    Medium,
    High,
}

/// Regime from threshold vectors: Low if some level is never activated, High
/// if some level has deactivation threshold 0, Medium otherwise.
pub fn classify_arrival_regime(_sp: &SystemParams, ht: &HysteresisThresholds) -> ArrivalRegime {
    if ht.big_l.iter().any(|&v| ht.is_inf(v)) {
        ArrivalRegime::Low
    } else if ht.l.iter().any(|&v| v == 0) {
        ArrivalRegime::High
    } else {
        ArrivalRegime::Medium
    }
}

/// Regime read off the switch points of a policy, which tells a level that
/// never deactivates apart from one whose threshold is 0.
pub fn policy_regime(p: &MdpPolicy) -> ArrivalRegime {
    if (1..p.big_k).any(|k| p.switches(k).first_up.is_none()) {
        ArrivalRegime::Low
    } else if (2..=p.big_k).any(|k| p.switches(k).last_down.is_none()) {
        ArrivalRegime::High
    } else {
        ArrivalRegime::Medium
    }
}

#[derive(Debug, Clone)]
pub struct MultichainWitness {
    pub pivot: usize,
    pub policy: MdpPolicy,
    pub classes: Vec<Vec<State>>,
}

/// Policy that activates below the levels around `pivot`, keeps the levels
/// pivot-1..=pivot+1 frozen and deactivates above them. Each frozen level is
/// its own closed class.
pub fn multichain_policy(sp: &SystemParams, pivot: usize) -> MdpPolicy {
    let mut p = MdpPolicy::zeros(sp);
    for k in 1..=sp.big_k {
        let a = if k + 1 < pivot {
            1
        } else if k > pivot + 1 {
            -1
        } else {
            0
        };
        for m in 0..=sp.big_b {
            p.set(m, k, a);
        }
    }
    p
}

pub fn check_multichain_witness<C: CostModel + ?Sized>(sp: &SystemParams, cost: &C) -> Result<MultichainWitness> {
    if sp.big_k < 2 {
        return Err(Error::InvalidParams("a multichain witness needs K >= 2".into()));
    }
    let pivot = sp.big_k.div_ceil(2).max(2);
    let mdp = build_mdp(sp, cost)?;
    let policy = multichain_policy(sp, pivot);
    let classes = recurrent_classes(&mdp, &policy);
    if classes.len() < 2 {
        return Err(Error::Reducible(format!("expected several closed classes, found {}", classes.len())));
    }
    Ok(MultichainWitness { pivot, policy, classes })
}

/// One "m k action" line per state.
pub fn dump_policy(p: &MdpPolicy) -> String {
    let mut s = String::new();
    for k in 1..=p.big_k {
        for m in 0..=p.big_b {
            let _ = writeln!(s, "{m} {k} {}", p.get(m, k));
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MdpSolver {
    Vi,
    Rvi,
    Pi,
    PiAdapted,
    DlPi,
    HyPi,
}

impl MdpSolver {
    pub const ALL: [MdpSolver; 6] =
        [MdpSolver::Vi, MdpSolver::Rvi, MdpSolver::Pi, MdpSolver::PiAdapted, MdpSolver::DlPi, MdpSolver::HyPi];

    pub fn name(&self) -> &'static str {
        match self {
            MdpSolver::Vi => "VI",
            MdpSolver::Rvi => "RVI",
            MdpSolver::Pi => "PI",
            MdpSolver::PiAdapted => "PI-adapted",
            MdpSolver::DlPi => "DL-PI",
            MdpSolver::HyPi => "Hy-PI",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['_', ' '], "-");
        Self::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Unknown(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct MdpSolution {
    pub solver: MdpSolver,
    pub policy: MdpPolicy,
    pub values: ValueFunction,
    /// Authoritative cost per unit time of `policy`.
    pub cost: f64,
    pub stats: PiStats,
    pub wall_time: f64,
}

impl MdpSolution {
    pub fn thresholds(&self, sp: &SystemParams) -> Option<HysteresisThresholds> {
        extract_hysteresis(&self.policy, sp)
    }

    pub fn report(&self, sp: &SystemParams) -> crate::core::SolveReport {
        let ht = self.thresholds(sp);
        crate::core::SolveReport {
            algorithm: self.solver.name().to_string(),
            params: *sp,
            cost: self.cost,
            thresholds: ht.as_ref().and_then(|h| h.to_mc(sp)),
            hysteresis: ht,
            iterations: self.stats.iterations,
            evaluations: self.stats.improvement_evals,
            wall_time: self.wall_time,
            converged: true,
        }
    }
}

pub fn solve(mdp: &UniformizedMdp, solver: MdpSolver, eps: f64, max_iter: usize) -> Result<MdpSolution> {
    let t0 = Instant::now();
    let (values, policy, stats) = match solver {
        MdpSolver::Vi => {
            let (v, p) = value_iteration(mdp, eps, max_iter)?;
            (v, p, PiStats::default())
        }
        MdpSolver::Rvi => {
            let (v, p) = relative_value_iteration(mdp, eps, max_iter)?;
            (v, p, PiStats::default())
        }
        MdpSolver::Pi => policy_iteration_stats(mdp, PiVariant::Plain, eps, max_iter)?,
        MdpSolver::PiAdapted => policy_iteration_stats(mdp, PiVariant::Adapted, eps, max_iter)?,
        MdpSolver::DlPi => policy_iteration_stats(mdp, PiVariant::DoubleLevel, eps, max_iter)?,
        MdpSolver::HyPi => policy_iteration_stats(mdp, PiVariant::Hysteresis, eps, max_iter)?,
    };
    let wall_time = t0.elapsed().as_secs_f64();
    let cost = policy_gain(mdp, &policy)?;
    Ok(MdpSolution { solver, policy, values, cost, stats, wall_time })
}
