//! Searches over threshold policies of the hysteresis chain: exhaustive
//! enumeration, best-per-level coordinate descent (BPL), neighbourhood local
//! search (NLS) and the M/M/k/B approximation used to initialize them.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{validate_threshold_policy, CostModel, SolveReport, SystemParams, ThresholdPolicy};
use crate::ctmc::evaluate_exact;
use crate::error::{Error, Result};
use crate::sca::{MicroMethod, ScaCache, ThresholdChange, ThresholdKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Evaluator {
    /// Solve the whole chain for every candidate.
    Direct,
    /// Re-solve only the two levels touched by a move.
    AggregatedIncremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Initializer {
    LowestFeasible,
    Random(u64),
    Mmk,
}

pub const DEFAULT_IMPROVEMENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub evaluator: Evaluator,
    pub initializer: Initializer,
    pub max_sweeps: usize,
    /// Relative improvement required to accept a move. Nonzero by default so
    /// that rounding differences between evaluators cannot steer the search.
    pub improvement_tol: f64,
    /// Keep the cost of every candidate evaluated.
    pub record_evaluations: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            evaluator: Evaluator::Direct,
            initializer: Initializer::LowestFeasible,
            max_sweeps: 10_000,
            improvement_tol: DEFAULT_IMPROVEMENT_TOL,
            record_evaluations: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub report: SolveReport,
    pub policy: ThresholdPolicy,
    /// Incumbent cost after initialization and after each accepted move.
    pub history: Vec<f64>,
    /// Costs of all evaluated candidates, when recorded.
    pub evaluated: Vec<f64>,
}

enum Candidate {
    Policy(ThresholdPolicy, f64),
    Cache(ScaCache),
}

impl Candidate {
    fn cost(&self) -> f64 {
        match self {
            Candidate::Policy(_, c) => *c,
            Candidate::Cache(c) => c.cost,
        }
    }
}

struct Engine<'a, C: CostModel + ?Sized> {
    sp: SystemParams,
    cost: &'a C,
    current: Candidate,
    evaluations: usize,
    record: bool,
    evaluated: Vec<f64>,
}

impl<'a, C: CostModel + ?Sized> Engine<'a, C> {
    fn new(tp: &ThresholdPolicy, sp: &SystemParams, cost: &'a C, ev: Evaluator, record: bool) -> Result<Self> {
        let current = match ev {
            Evaluator::Direct => Candidate::Policy(tp.clone(), evaluate_exact(tp, sp, cost)?),
            Evaluator::AggregatedIncremental => {
                Candidate::Cache(ScaCache::new(tp, sp, cost, MicroMethod::Elimination)?)
            }
        };
        let mut e = Engine { sp: *sp, cost, current, evaluations: 1, record, evaluated: Vec::new() };
        if record {
            e.evaluated.push(e.current.cost());
        }
        Ok(e)
    }

    fn policy(&self) -> &ThresholdPolicy {
        match &self.current {
            Candidate::Policy(p, _) => p,
            Candidate::Cache(c) => &c.policy,
        }
    }

    fn cost(&self) -> f64 {
        self.current.cost()
    }

    fn try_move(&mut self, ch: ThresholdChange) -> Result<Candidate> {
        let cand = match &self.current {
            Candidate::Policy(p, _) => {
                let tp = ch.apply(p);
                let c = evaluate_exact(&tp, &self.sp, self.cost)?;
                Candidate::Policy(tp, c)
            }
            Candidate::Cache(cache) => Candidate::Cache(cache.apply(ch, self.cost)?),
        };
        self.evaluations += 1;
        if self.record {
            self.evaluated.push(cand.cost());
        }
        Ok(cand)
    }
}

#[inline]
fn improves(new: f64, old: f64, tol: f64) -> bool {
    new < old - tol * old.abs()
}

/// Feasible values of one threshold with all others fixed.
pub fn coordinate_range(tp: &ThresholdPolicy, sp: &SystemParams, kind: ThresholdKind, k: usize) -> (usize, usize) {
    let n = sp.big_k - 1;
    match kind {
        ThresholdKind::F => {
            let mut lo = k.max(tp.big_r(k));
            if k > 1 {
                lo = lo.max(tp.big_f(k - 1) + 1);
            }
            let hi = if k < n { tp.big_f(k + 1) - 1 } else { sp.big_b - 1 };
            (lo, hi)
        }
        ThresholdKind::R => {
            let lo = if k > 1 { tp.big_r(k - 1) + 1 } else { 0 };
            let mut hi = tp.big_f(k);
            if k < n {
                hi = hi.min(tp.big_r(k + 1) - 1);
            }
            (lo, hi)
        }
    }
}

fn coordinates(sp: &SystemParams) -> Vec<(ThresholdKind, usize)> {
    let n = sp.big_k - 1;
    (1..=n)
        .map(|k| (ThresholdKind::F, k))
        .chain((1..=n).map(|k| (ThresholdKind::R, k)))
        .collect()
}

fn value_of(tp: &ThresholdPolicy, kind: ThresholdKind, k: usize) -> usize {
    match kind {
        ThresholdKind::F => tp.big_f(k),
        ThresholdKind::R => tp.big_r(k),
    }
}

pub fn initial_policy<C: CostModel + ?Sized>(sp: &SystemParams, cost: &C, init: Initializer) -> ThresholdPolicy {
    match init {
        Initializer::LowestFeasible => ThresholdPolicy::lowest(sp),
        Initializer::Random(seed) => random_policy(sp, seed),
        Initializer::Mmk => mmk_thresholds(sp, cost),
    }
}

/// Uniform sequential sampling: F ascending, then R ascending, each within
/// the range left by the previous draws.
pub fn random_policy(sp: &SystemParams, seed: u64) -> ThresholdPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sp.big_k - 1;
    let mut f: Vec<usize> = Vec::with_capacity(n);
    for k in 1..=n {
        let lo = if k > 1 { (f[k - 2] + 1).max(k) } else { 1 };
        let hi = sp.big_b - sp.big_k + k;
        f.push(rng.random_range(lo..=hi));
    }
    let mut r: Vec<usize> = Vec::with_capacity(n);
    for k in 1..=n {
        let lo = if k > 1 { r[k - 2] + 1 } else { 0 };
        r.push(rng.random_range(lo..=f[k - 1]));
    }
    ThresholdPolicy { f, r }
}

fn finish(
    name: &str,
    sp: &SystemParams,
    engine: Engine<'_, impl CostModel + ?Sized>,
    history: Vec<f64>,
    sweeps: usize,
    converged: bool,
    t0: Instant,
) -> SearchOutcome {
    let policy = engine.policy().clone();
    let report = SolveReport {
        algorithm: name.to_string(),
        params: *sp,
        cost: engine.cost(),
        thresholds: Some(policy.clone()),
        hysteresis: Some(crate::core::HysteresisThresholds::from_mc(&policy, sp)),
        iterations: sweeps,
        evaluations: engine.evaluations,
        wall_time: t0.elapsed().as_secs_f64(),
        converged,
    };
    SearchOutcome { report, policy, history, evaluated: engine.evaluated }
}

/// Coordinate descent over F_1..F_{K-1} then R_1..R_{K-1}, each scanned over
/// its whole feasible range, until a sweep brings no improvement.
pub fn bpl<C: CostModel + ?Sized>(sp: &SystemParams, cost: &C, cfg: &SearchConfig) -> Result<SearchOutcome> {
    bpl_from(sp, cost, cfg, initial_policy(sp, cost, cfg.initializer))
}

pub fn bpl_from<C: CostModel + ?Sized>(
    sp: &SystemParams,
    cost: &C,
    cfg: &SearchConfig,
    start: ThresholdPolicy,
) -> Result<SearchOutcome> {
    let t0 = Instant::now();
    let mut eng = Engine::new(&start, sp, cost, cfg.evaluator, cfg.record_evaluations)?;
    let mut history = vec![eng.cost()];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut improved = false;
        for (kind, k) in coordinates(sp) {
            let (lo, hi) = coordinate_range(eng.policy(), sp, kind, k);
            let cur = value_of(eng.policy(), kind, k);
            let mut best: Option<Candidate> = None;
            let mut best_cost = eng.cost();
            for v in lo..=hi {
                if v == cur {
                    continue;
                }
                let cand = eng.try_move(ThresholdChange { kind, index: k, value: v })?;
                if improves(cand.cost(), best_cost, cfg.improvement_tol) {
                    best_cost = cand.cost();
                    best = Some(cand);
                }
            }
            if let Some(b) = best {
                eng.current = b;
                history.push(eng.cost());
                improved = true;
            }
        }
        if !improved {
            converged = true;
            break;
        }
    }
    Ok(finish("BPL", sp, eng, history, sweeps, converged, t0))
}

/// Best-improvement search over the ±1 moves of every threshold.
pub fn nls<C: CostModel + ?Sized>(sp: &SystemParams, cost: &C, cfg: &SearchConfig) -> Result<SearchOutcome> {
    nls_from(sp, cost, cfg, initial_policy(sp, cost, cfg.initializer))
}

pub fn nls_from<C: CostModel + ?Sized>(
    sp: &SystemParams,
    cost: &C,
    cfg: &SearchConfig,
    start: ThresholdPolicy,
) -> Result<SearchOutcome> {
    let t0 = Instant::now();
    let mut eng = Engine::new(&start, sp, cost, cfg.evaluator, cfg.record_evaluations)?;
    let mut history = vec![eng.cost()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_sweeps {
        iterations += 1;
        let mut best: Option<Candidate> = None;
        let mut best_cost = eng.cost();
        for (kind, k) in coordinates(sp) {
            let (lo, hi) = coordinate_range(eng.policy(), sp, kind, k);
            let cur = value_of(eng.policy(), kind, k);
            for v in [cur.wrapping_sub(1), cur + 1] {
                if cur == 0 && v == usize::MAX || v < lo || v > hi {
                    continue;
                }
                let cand = eng.try_move(ThresholdChange { kind, index: k, value: v })?;
                if improves(cand.cost(), best_cost, cfg.improvement_tol) {
                    best_cost = cand.cost();
                    best = Some(cand);
                }
            }
        }
        match best {
            Some(b) => {
                eng.current = b;
                history.push(eng.cost());
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    Ok(finish("NLS", sp, eng, history, iterations, converged, t0))
}

/// Number of feasible threshold policies.
pub fn policy_count(sp: &SystemParams) -> u128 {
    let n = sp.big_k - 1;
    if n == 0 {
        return 1;
    }
    let b = sp.big_b;
    // cnt[f][r]: number of prefixes ending with F_k = f, R_k = r.
    let mut cnt = vec![vec![0u128; b]; b];
    for f in 1..b {
        for r in 0..=f {
            cnt[f][r] = 1;
        }
    }
    for k in 2..=n {
        let mut pre = vec![vec![0u128; b + 1]; b + 1];
        for f in 0..b {
            for r in 0..b {
                pre[f + 1][r + 1] = cnt[f][r]
                    .saturating_add(pre[f][r + 1])
                    .saturating_add(pre[f + 1][r])
                    .saturating_sub(pre[f][r]);
            }
        }
        let mut next = vec![vec![0u128; b]; b];
        for f in k..b {
            for r in (k - 1)..=f {
                next[f][r] = pre[f][r];
            }
        }
        cnt = next;
    }
    cnt.iter().flatten().fold(0u128, |a, &x| a.saturating_add(x))
}

pub const DEFAULT_BUDGET: u128 = 5_000_000;

/// Global optimum by enumeration, refused when the number of policies
/// exceeds `budget`.
pub fn exhaustive_search<C: CostModel + ?Sized>(sp: &SystemParams, cost: &C, budget: u128) -> Result<SearchOutcome> {
    let size = policy_count(sp);
    if size > budget {
        return Err(Error::BudgetExceeded { size, budget });
    }
    let t0 = Instant::now();
    let n = sp.big_k - 1;
    let mut best: Option<(f64, ThresholdPolicy)> = None;
    let mut count = 0usize;
    let mut f = vec![0; n];
    let mut r = vec![0; n];
    enumerate_f(sp, 0, &mut f, &mut r, &mut |tp| {
        count += 1;
        let c = ScaCache::new(tp, sp, cost, MicroMethod::Elimination)?.cost;
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, tp.clone()));
        }
        Ok(())
    })?;
    let (c, policy) = best.expect("at least one feasible policy");
    let report = SolveReport {
        algorithm: "exhaustive".into(),
        params: *sp,
        cost: c,
        thresholds: Some(policy.clone()),
        hysteresis: Some(crate::core::HysteresisThresholds::from_mc(&policy, sp)),
        iterations: 1,
        evaluations: count,
        wall_time: t0.elapsed().as_secs_f64(),
        converged: true,
    };
    Ok(SearchOutcome { report, policy, history: vec![c], evaluated: vec![] })
}

fn enumerate_f(
    sp: &SystemParams,
    i: usize,
    f: &mut Vec<usize>,
    r: &mut Vec<usize>,
    visit: &mut dyn FnMut(&ThresholdPolicy) -> Result<()>,
) -> Result<()> {
    let n = f.len();
    if i == n {
        return enumerate_r(sp, 0, f, r, visit);
    }
    let lo = if i > 0 { f[i - 1] + 1 } else { 1 }.max(i + 1);
    let hi = sp.big_b - sp.big_k + i + 1;
    for v in lo..=hi {
        f[i] = v;
        enumerate_f(sp, i + 1, f, r, visit)?;
    }
    Ok(())
}

fn enumerate_r(
    sp: &SystemParams,
    i: usize,
    f: &mut Vec<usize>,
    r: &mut Vec<usize>,
    visit: &mut dyn FnMut(&ThresholdPolicy) -> Result<()>,
) -> Result<()> {
    let n = f.len();
    if i == n {
        let tp = ThresholdPolicy { f: f.clone(), r: r.clone() };
        debug_assert!(validate_threshold_policy(&tp, sp).unwrap_or(false));
        return visit(&tp);
    }
    let lo = if i > 0 { r[i - 1] + 1 } else { 0 };
    for v in lo..=f[i] {
        r[i] = v;
        enumerate_r(sp, i + 1, f, r, visit)?;
    }
    Ok(())
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n + 1];
    for i in 1..=n {
        v[i] = v[i - 1] + (i as f64).ln();
    }
    v
}

/// Stationary distribution of the M/M/k/B queue over m = 0..=B.
pub fn mmk_stationary(k: usize, sp: &SystemParams) -> Vec<f64> {
    let b = sp.big_b;
    let lf = ln_factorials(b.max(k));
    let lr = sp.rho().ln();
    let la = (sp.rho() / k as f64).ln();
    let logs: Vec<f64> = (0..=b)
        .map(|m| {
            if m <= k {
                m as f64 * lr - lf[m]
            } else {
                m as f64 * la + k as f64 * (k as f64).ln() - lf[k]
            }
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    crate::linalg::normalize(&mut p);
    p
}

/// Activation and deactivation indicators of the M/M/k/B approximation.
pub struct MmkModel<'a, C: CostModel + ?Sized> {
    sp: SystemParams,
    cost: &'a C,
    /// pi[k-1] is the M/M/k/B distribution.
    pi: Vec<Vec<f64>>,
}

impl<'a, C: CostModel + ?Sized> MmkModel<'a, C> {
    pub fn new(sp: &SystemParams, cost: &'a C) -> Self {
        let pi = (1..=sp.big_k).map(|k| mmk_stationary(k, sp)).collect();
        MmkModel { sp: *sp, cost, pi }
    }

    fn p(&self, k: usize, m: i64) -> f64 {
        if m < 0 || m as usize > self.sp.big_b || k == 0 || k > self.sp.big_k {
            0.0
        } else {
            self.pi[k - 1][m as usize]
        }
    }

    fn base(&self, k: usize, m: usize) -> f64 {
        let b = self.sp.big_b as i64;
        self.p(k, m as i64) * self.cost.occupancy(m, k) + self.p(k, b) * self.sp.lambda * self.cost.rejection()
    }

    pub fn phi_a(&self, k: usize, m: usize) -> f64 {
        let with_a = self.base(k + 1, m) + self.p(k, m as i64 - 1) * self.sp.lambda * self.cost.activation();
        self.base(k, m) - with_a
    }

    pub fn phi_d(&self, k: usize, m: usize) -> f64 {
        let with_d = self.base(k, m)
            + self.p(k + 1, m as i64 + 1) * (k + 1) as f64 * self.sp.mu * self.cost.deactivation();
        self.base(k + 1, m) - with_d
    }
}

/// First-crossing thresholds of the M/M/k/B indicators, scanning levels in
/// increasing order. A scan that finds no crossing takes the largest value
/// of its range.
pub fn mmk_thresholds<C: CostModel + ?Sized>(sp: &SystemParams, cost: &C) -> ThresholdPolicy {
    let n = sp.big_k - 1;
    let model = MmkModel::new(sp, cost);
    let mut f: Vec<usize> = Vec::with_capacity(n);
    let mut r: Vec<usize> = Vec::with_capacity(n);
    for k in 1..=n {
        let lo = if k > 1 { f[k - 2] + 1 } else { 1 }.max(k);
        let hi = sp.big_b - sp.big_k + k;
        let fk = (lo..=hi).find(|&m| model.phi_a(k, m) >= 0.0).unwrap_or(hi);
        f.push(fk);
        let rlo = if k > 1 { r[k - 2] + 1 } else { 0 };
        let rhi = fk.saturating_sub(1).max(rlo);
        let rk = (rlo..=rhi).find(|&m| model.phi_d(k, m) >= 0.0).unwrap_or(rhi);
        r.push(rk);
    }
    ThresholdPolicy { f, r }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heuristic {
    Bpl,
    BplAgg,
    BplMmkAgg,
    Nls,
    NlsAgg,
    NlsMmkAgg,
}

impl Heuristic {
    pub const ALL: [Heuristic; 6] = [
        Heuristic::Bpl,
        Heuristic::BplAgg,
        Heuristic::BplMmkAgg,
        Heuristic::Nls,
        Heuristic::NlsAgg,
        Heuristic::NlsMmkAgg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Heuristic::Bpl => "BPL",
            Heuristic::BplAgg => "BPL-Agg",
            Heuristic::BplMmkAgg => "BPL-MMK-Agg",
            Heuristic::Nls => "NLS",
            Heuristic::NlsAgg => "NLS-Agg",
            Heuristic::NlsMmkAgg => "NLS-MMK-Agg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['_', ' '], "-");
        Self::ALL
            .into_iter()
            .find(|h| h.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Unknown(s.to_string()))
    }

    pub fn config(&self) -> SearchConfig {
        let (evaluator, initializer) = match self {
            Heuristic::Bpl | Heuristic::Nls => (Evaluator::Direct, Initializer::LowestFeasible),
            Heuristic::BplAgg | Heuristic::NlsAgg => (Evaluator::AggregatedIncremental, Initializer::LowestFeasible),
            Heuristic::BplMmkAgg | Heuristic::NlsMmkAgg => (Evaluator::AggregatedIncremental, Initializer::Mmk),
        };
        SearchConfig { evaluator, initializer, ..SearchConfig::default() }
    }

    pub fn run<C: CostModel + ?Sized>(&self, sp: &SystemParams, cost: &C) -> Result<SearchOutcome> {
        self.run_with(sp, cost, &self.config())
    }

    pub fn run_with<C: CostModel + ?Sized>(&self, sp: &SystemParams, cost: &C, cfg: &SearchConfig) -> Result<SearchOutcome> {
        let mut out = match self {
            Heuristic::Bpl | Heuristic::BplAgg | Heuristic::BplMmkAgg => bpl(sp, cost, cfg)?,
            _ => nls(sp, cost, cfg)?,
        };
        out.report.algorithm = self.name().to_string();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::CostRates;

    fn costs() -> CostRates {
        CostRates::new(2.0, 5.0, 1.0, 1.0, 100.0).unwrap()
    }

    #[test]
    fn count_matches_enumeration() {
        for (k, b) in [(2, 4), (3, 8), (4, 9)] {
            let sp = SystemParams::new(1.0, 1.0, k, b).unwrap();
            let mut n = 0u128;
            let mut f = vec![0; k - 1];
            let mut r = vec![0; k - 1];
            enumerate_f(&sp, 0, &mut f, &mut r, &mut |_| {
                n += 1;
                Ok(())
            })
            .unwrap();
            assert_eq!(policy_count(&sp), n);
        }
    }

    #[test]
    fn two_servers_small_buffer() {
        // F_1 in 1..=3 and R_1 in 0..=F_1: nine policies.
        let sp = SystemParams::new(2.0, 1.0, 2, 4).unwrap();
        assert_eq!(policy_count(&sp), 9);
        let ex = exhaustive_search(&sp, &costs(), DEFAULT_BUDGET).unwrap();
        let mut best = f64::INFINITY;
        for f in 1..=3 {
            for r in 0..=f {
                best = best.min(evaluate_exact(&ThresholdPolicy::new(vec![f], vec![r]), &sp, &costs()).unwrap());
            }
        }
        assert!((ex.report.cost - best).abs() < 1e-12);
    }

    #[test]
    fn single_server_trivial() {
        let sp = SystemParams::new(2.0, 1.0, 1, 5).unwrap();
        let ex = exhaustive_search(&sp, &costs(), DEFAULT_BUDGET).unwrap();
        let direct = evaluate_exact(&ThresholdPolicy::single_level(), &sp, &costs()).unwrap();
        assert!((ex.report.cost - direct).abs() < 1e-12);
        let b = bpl(&sp, &costs(), &SearchConfig::default()).unwrap();
        assert!((b.report.cost - direct).abs() < 1e-12);
    }

    #[test]
    fn budget_refusal() {
        let sp = SystemParams::new(2.0, 1.0, 8, 60).unwrap();
        assert!(matches!(
            exhaustive_search(&sp, &costs(), 1000),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn searches_do_not_beat_optimum_and_descend() {
        let sp = SystemParams::new(5.0, 2.0, 3, 12).unwrap();
        let opt = exhaustive_search(&sp, &costs(), DEFAULT_BUDGET).unwrap().report.cost;
        for h in Heuristic::ALL {
            let out = h.run(&sp, &costs()).unwrap();
            assert!(out.report.cost >= opt - 1e-12, "{h:?}");
            assert!(out.history.windows(2).all(|w| w[1] < w[0]));
            let again = evaluate_exact(&out.policy, &sp, &costs()).unwrap();
            assert!((again - out.report.cost).abs() < 1e-10);
        }
    }

    #[test]
    fn fixed_point_start_stops_after_one_sweep() {
        let sp = SystemParams::new(5.0, 2.0, 3, 12).unwrap();
        let first = bpl(&sp, &costs(), &SearchConfig::default()).unwrap();
        let again = bpl_from(&sp, &costs(), &SearchConfig::default(), first.policy.clone()).unwrap();
        assert_eq!(again.report.iterations, 1);
        assert_eq!(again.policy, first.policy);
        let n1 = nls_from(&sp, &costs(), &SearchConfig::default(), nls(&sp, &costs(), &SearchConfig::default()).unwrap().policy).unwrap();
        assert_eq!(n1.report.iterations, 1);
    }

    #[test]
    fn random_init_is_valid_and_deterministic() {
        let sp = SystemParams::new(5.0, 2.0, 6, 30).unwrap();
        for seed in 0..200 {
            let p = random_policy(&sp, seed);
            assert!(validate_threshold_policy(&p, &sp).unwrap());
            assert_eq!(p, random_policy(&sp, seed));
        }
        let cfg = SearchConfig { initializer: Initializer::Random(7), ..SearchConfig::default() };
        let a = nls(&sp, &costs(), &cfg).unwrap();
        let b = nls(&sp, &costs(), &cfg).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn mmk_small_cases() {
        let sp = SystemParams::new(1.0, 1.0, 1, 1).unwrap();
        let p = mmk_stationary(1, &sp);
        assert!((p[0] - 0.5).abs() < 1e-15);
        let sp = SystemParams::new(0.7, 1.0, 1, 6).unwrap();
        let p = mmk_stationary(1, &sp);
        let r: f64 = 0.7;
        let z = (1.0 - r.powi(7)) / (1.0 - r);
        for (m, x) in p.iter().enumerate() {
            assert!((x - r.powi(m as i32) / z).abs() < 1e-14);
        }
    }

    #[test]
    fn expensive_activation_defers_thresholds() {
        // Light load: the scan never crosses and every F_k takes its fallback.
        let sp = SystemParams::new(0.5, 1.0, 4, 30).unwrap();
        let cheap = mmk_thresholds(&sp, &CostRates::new(1.0, 1.0, 0.5, 0.5, 10.0).unwrap());
        let dear = mmk_thresholds(&sp, &CostRates::new(1.0, 1.0, 1e6, 0.5, 10.0).unwrap());
        assert!(validate_threshold_policy(&cheap, &sp).unwrap());
        assert!(validate_threshold_policy(&dear, &sp).unwrap());
        assert_eq!(dear.f, vec![27, 28, 29]);
        for k in 0..3 {
            assert!(dear.f[k] >= cheap.f[k]);
        }
    }

    #[test]
    fn heuristic_names_parse() {
        for h in Heuristic::ALL {
            assert_eq!(Heuristic::parse(h.name()).unwrap(), h);
        }
    }
}
