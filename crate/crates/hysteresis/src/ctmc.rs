//! The hysteresis Markov chain induced by a threshold policy.

use std::fmt::Write as _;

use crate::core::{ensure_valid, CostModel, State, SystemParams, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::linalg::{gth_sparse, power_stationary, RateRows};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct HysteresisChain {
    /// Level-major ordering.
    pub states: Vec<State>,
    /// Off-diagonal generator entries per row; the diagonal is minus the row sum.
    pub rate_matrix: RateRows,
    pub policy: ThresholdPolicy,
    pub sp: SystemParams,
    offsets: Vec<usize>,
}

impl HysteresisChain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Position of (m, k) in `states`, if the state belongs to the chain.
    pub fn index_of(&self, s: State) -> Option<usize> {
        if s.k == 0 || s.k > self.sp.big_k {
            return None;
        }
        let lo = self.policy.level_low(s.k);
        let hi = self.policy.level_high(s.k, &self.sp);
        (lo..=hi).contains(&s.m).then(|| self.offsets[s.k - 1] + s.m - lo)
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        -self.rate_matrix[i].iter().map(|e| e.1).sum::<f64>()
    }

    /// Generator as "row col rate" lines, diagonal included.
    pub fn triplets(&self) -> String {
        let mut s = String::new();
        for (i, row) in self.rate_matrix.iter().enumerate() {
            let _ = writeln!(s, "{i} {i} {}", self.diagonal(i));
            for &(j, r) in row {
                let _ = writeln!(s, "{i} {j} {r}");
            }
        }
        s
    }
}

/// Number of states of the chain for a valid policy.
pub fn state_count(tp: &ThresholdPolicy, sp: &SystemParams) -> usize {
    (1..=sp.big_k)
        .map(|k| tp.level_high(k, sp) - tp.level_low(k) + 1)
        .sum()
}

pub fn build_chain(tp: &ThresholdPolicy, sp: &SystemParams) -> Result<HysteresisChain> {
    sp.validate()?;
    ensure_valid(tp, sp)?;
    let kk = sp.big_k;
    let mut states = Vec::with_capacity(state_count(tp, sp));
    let mut offsets = Vec::with_capacity(kk);
    for k in 1..=kk {
        offsets.push(states.len());
        for m in tp.level_low(k)..=tp.level_high(k, sp) {
            states.push(State { m, k });
        }
    }
    let mut chain = HysteresisChain {
        rate_matrix: vec![Vec::new(); states.len()],
        states,
        policy: tp.clone(),
        sp: *sp,
        offsets,
    };
    for i in 0..chain.states.len() {
        let State { m, k } = chain.states[i];
        let hi = tp.level_high(k, sp);
        let lo = tp.level_low(k);
        let mut row = Vec::with_capacity(2);
        if m < hi {
            row.push((i + 1, sp.lambda));
        } else if k < kk {
            let j = chain.index_of(State { m: m + 1, k: k + 1 }).expect("level-up target");
            row.push((j, sp.lambda));
        }
        if m > 0 {
            let d = sp.service_rate(m, k);
            if m > lo {
                row.push((i - 1, d));
            } else {
                let j = chain.index_of(State { m: m - 1, k: k - 1 }).expect("level-down target");
                row.push((j, d));
            }
        }
        chain.rate_matrix[i] = row;
    }
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub states: Vec<State>,
    pub probs: Vec<f64>,
}

impl StationaryDistribution {
    pub fn get(&self, s: State) -> f64 {
        self.states.iter().position(|&x| x == s).map_or(0.0, |i| self.probs[i])
    }

    /// Probability mass per level, index k-1.
    pub fn level_marginals(&self, big_k: usize) -> Vec<f64> {
        let mut v = vec![0.0; big_k];
        for (s, p) in self.states.iter().zip(&self.probs) {
            v[s.k - 1] += p;
        }
        v
    }

    /// Max-norm distance over the union of both supports.
    pub fn max_distance(&self, other: &StationaryDistribution) -> f64 {
        let mut d: f64 = 0.0;
        for (s, p) in self.states.iter().zip(&self.probs) {
            d = d.max((p - other.get(*s)).abs());
        }
        for (s, p) in other.states.iter().zip(&other.probs) {
            if !self.states.contains(s) {
                d = d.max(p.abs());
            }
        }
        d
    }
}

pub fn solve_stationary_direct(
    chain: &HysteresisChain,
    tol: f64,
    max_iter: usize,
) -> Result<StationaryDistribution> {
    let (probs, _) = power_stationary(&chain.rate_matrix, chain.sp.unif_rate(), tol, max_iter, None)?;
    Ok(StationaryDistribution { states: chain.states.clone(), probs })
}

/// Exact stationary distribution by elimination; used as an oracle and by
/// the direct evaluator of the search heuristics.
pub fn solve_stationary_exact(chain: &HysteresisChain) -> Result<StationaryDistribution> {
    let probs = gth_sparse(&chain.rate_matrix)
        .ok_or_else(|| Error::Reducible("hysteresis chain".into()))?;
    Ok(StationaryDistribution { states: chain.states.clone(), probs })
}

/// Expected cost rate of state (m, k): time costs plus event costs weighted by
/// the rate of the event they are attached to.
pub fn state_cost<C: CostModel + ?Sized>(
    m: usize,
    k: usize,
    tp: &ThresholdPolicy,
    sp: &SystemParams,
    cost: &C,
) -> f64 {
    let kk = sp.big_k;
    let mut c = cost.occupancy(m, k);
    if k < kk && m == tp.big_f(k) {
        c += cost.activation() * sp.lambda;
    }
    if k >= 2 && m == tp.big_r(k - 1) + 1 {
        c += cost.deactivation() * sp.service_rate(m, k);
    }
    if k == kk && m == sp.big_b {
        c += cost.rejection() * sp.lambda;
    }
    c
}

pub fn expected_cost<C: CostModel + ?Sized>(
    chain: &HysteresisChain,
    dist: &StationaryDistribution,
    cost: &C,
) -> f64 {
    dist.states
        .iter()
        .zip(&dist.probs)
        .map(|(s, p)| p * state_cost(s.m, s.k, &chain.policy, &chain.sp, cost))
        .sum()
}

/// Build, solve exactly and price a policy in one call.
pub fn evaluate_exact<C: CostModel + ?Sized>(
    tp: &ThresholdPolicy,
    sp: &SystemParams,
    cost: &C,
) -> Result<f64> {
    let chain = build_chain(tp, sp)?;
    let dist = solve_stationary_exact(&chain)?;
    Ok(expected_cost(&chain, &dist, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::CostRates;

    fn sp(l: f64, m: f64, k: usize, b: usize) -> SystemParams {
        SystemParams::new(l, m, k, b).unwrap()
    }

    #[test]
    fn single_server_is_mm1b() {
        let s = sp(2.0, 3.0, 1, 2);
        let c = build_chain(&ThresholdPolicy::single_level(), &s).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.rate_matrix[0], vec![(1, 2.0)]);
        assert_eq!(c.rate_matrix[1], vec![(2, 2.0), (0, 3.0)]);
        assert_eq!(c.rate_matrix[2], vec![(1, 3.0)]);
    }

    #[test]
    fn two_state_symmetric() {
        let s = sp(1.0, 1.0, 1, 1);
        let c = build_chain(&ThresholdPolicy::single_level(), &s).unwrap();
        let d = solve_stationary_direct(&c, 1e-14, DEFAULT_MAX_ITER).unwrap();
        assert!((d.probs[0] - 0.5).abs() < 1e-12 && (d.probs[1] - 0.5).abs() < 1e-12);
        let cr = CostRates::new(3.0, 5.0, 0.0, 0.0, 7.0).unwrap();
        let cost = expected_cost(&c, &d, &cr);
        assert!((cost - (5.0 + 1.5 + 3.5)).abs() < 1e-10);
    }

    #[test]
    fn three_state_uniform() {
        let s = sp(1.0, 1.0, 1, 2);
        let c = build_chain(&ThresholdPolicy::single_level(), &s).unwrap();
        let d = solve_stationary_direct(&c, 1e-14, DEFAULT_MAX_ITER).unwrap();
        for p in d.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn level_up_transition_present() {
        let s = sp(1.0, 1.0, 3, 10);
        let tp = ThresholdPolicy::new(vec![3, 6], vec![1, 4]);
        let c = build_chain(&tp, &s).unwrap();
        let from = c.index_of(State { m: 6, k: 2 }).unwrap();
        let to = c.index_of(State { m: 7, k: 3 }).unwrap();
        assert!(c.rate_matrix[from].contains(&(to, 1.0)));
        assert!(c.index_of(State { m: 7, k: 2 }).is_none());
        let down_from = c.index_of(State { m: 5, k: 3 }).unwrap();
        let down_to = c.index_of(State { m: 4, k: 2 }).unwrap();
        assert!(c.rate_matrix[down_from].contains(&(down_to, 3.0)));
    }

    #[test]
    fn invalid_policy_rejected() {
        let s = sp(1.0, 1.0, 3, 10);
        assert!(build_chain(&ThresholdPolicy::new(vec![3, 3], vec![1, 2]), &s).is_err());
    }

    #[test]
    fn iteration_limit_carries_residual() {
        let s = sp(1.3, 1.0, 1, 30);
        let c = build_chain(&ThresholdPolicy::single_level(), &s).unwrap();
        match solve_stationary_direct(&c, 1e-15, 5) {
            Err(Error::IterationLimit { iterations, residual }) => {
                assert_eq!(iterations, 5);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn triplet_dump_has_zero_row_sums() {
        let s = sp(1.5, 1.0, 2, 6);
        let c = build_chain(&ThresholdPolicy::new(vec![3], vec![1]), &s).unwrap();
        let mut sums = vec![0.0; c.len()];
        for line in c.triplets().lines() {
            let v: Vec<&str> = line.split(' ').collect();
            let i: usize = v[0].parse().unwrap();
            sums[i] += v[2].parse::<f64>().unwrap();
        }
        assert!(sums.iter().all(|x| x.abs() < 1e-12));
    }
}
