//! Domain types shared by every solver: system parameters, cost rates,
//! threshold policies for the Markov chain model and state-action policies
//! for the decision model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub lambda: f64,
    pub mu: f64,
    pub big_k: usize,
    pub big_b: usize,
}

impl SystemParams {
    pub fn new(lambda: f64, mu: f64, big_k: usize, big_b: usize) -> Result<Self> {
        let sp = SystemParams { lambda, mu, big_k, big_b };
        sp.validate()?;
        Ok(sp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParams(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParams(format!("mu must be > 0, got {}", self.mu)));
        }
        if self.big_k < 1 || self.big_k > self.big_b {
            return Err(Error::InvalidParams(format!(
                "need 1 <= K <= B, got K={} B={}",
                self.big_k, self.big_b
            )));
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }

    /// Departure rate with `m` requests and `k` active servers.
    #[inline]
    pub fn service_rate(&self, m: usize, k: usize) -> f64 {
        self.mu * m.min(k) as f64
    }

    /// Uniformization constant λ + Kμ.
    pub fn unif_rate(&self) -> f64 {
        self.lambda + self.big_k as f64 * self.mu
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        SystemParams { lambda, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRates {
    pub c_h: f64,
    pub c_s: f64,
    pub c_a: f64,
    pub c_d: f64,
    pub c_r: f64,
}

impl CostRates {
    pub fn new(c_h: f64, c_s: f64, c_a: f64, c_d: f64, c_r: f64) -> Result<Self> {
        let cr = CostRates { c_h, c_s, c_a, c_d, c_r };
        cr.validate()?;
        Ok(cr)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.c_h, self.c_s, self.c_a, self.c_d, self.c_r];
        if all.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidParams("cost rates must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Per-state cost structure consumed by the chain, aggregation, decision and
/// simulation code. Time-based terms are rates, event terms are lump sums.
pub trait CostModel: Sync {
    /// Holding cost rate with `m` requests in the system.
    fn holding(&self, m: usize) -> f64;
    /// Running cost rate with `k` active servers.
    fn server(&self, k: usize) -> f64;
    fn activation(&self) -> f64;
    fn deactivation(&self) -> f64;
    /// Cost per rejected request.
    fn rejection(&self) -> f64;
    /// State-independent cost rate.
    fn fixed(&self) -> f64 {
        0.0
    }

    /// Time-based cost rate in state (m, k).
    #[inline]
    fn occupancy(&self, m: usize, k: usize) -> f64 {
        self.holding(m) + self.server(k) + self.fixed()
    }
}

impl CostModel for CostRates {
    #[inline]
    fn holding(&self, m: usize) -> f64 {
        self.c_h * m as f64
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
        self.c_r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State {
    pub m: usize,
    pub k: usize,
}

/// Activation thresholds `f[k-1] = F_k` and deactivation thresholds
/// `r[k-1] = R_k` for k = 1..K-1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub f: Vec<usize>,
    pub r: Vec<usize>,
}

impl ThresholdPolicy {
    pub fn new(f: Vec<usize>, r: Vec<usize>) -> Self {
        ThresholdPolicy { f, r }
    }

    /// Empty policy for a single server.
    pub fn single_level() -> Self {
        ThresholdPolicy { f: vec![], r: vec![] }
    }

    /// Lowest feasible thresholds: F_k = k, R_k = k - 1.
    pub fn lowest(sp: &SystemParams) -> Self {
        let n = sp.big_k - 1;
        ThresholdPolicy {
            f: (1..=n).collect(),
            r: (0..n).collect(),
        }
    }

    /// F_k (1-based level).
    #[inline]
    pub fn big_f(&self, k: usize) -> usize {
        self.f[k - 1]
    }

    /// R_k (1-based level).
    #[inline]
    pub fn big_r(&self, k: usize) -> usize {
        self.r[k - 1]
    }

    /// Lowest request count of level k in the chain.
    #[inline]
    pub fn level_low(&self, k: usize) -> usize {
        if k == 1 {
            0
        } else {
            self.r[k - 2] + 1
        }
    }

    /// Highest request count of level k in the chain.
    #[inline]
    pub fn level_high(&self, k: usize, sp: &SystemParams) -> usize {
        if k == sp.big_k {
            sp.big_b
        } else {
            self.f[k - 1]
        }
    }
}

/// Feasibility check for a threshold policy.
///
/// Constraints: F strictly increasing with F_k >= k and F_{K-1} < B, R strictly
/// increasing from R_1 >= 0, and R_k <= F_k.
pub fn validate_threshold_policy(tp: &ThresholdPolicy, sp: &SystemParams) -> Result<bool> {
    let n = sp.big_k.saturating_sub(1);
    if tp.f.len() != n || tp.r.len() != n {
        return Err(Error::LengthMismatch { expected: n, f: tp.f.len(), r: tp.r.len() });
    }
    for i in 0..n {
        let k = i + 1;
        if tp.f[i] < k || tp.f[i] >= sp.big_b || tp.r[i] > tp.f[i] {
            return Ok(false);
        }
        if i > 0 && (tp.f[i] <= tp.f[i - 1] || tp.r[i] <= tp.r[i - 1]) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Validation that turns a `false` into an error.
pub fn ensure_valid(tp: &ThresholdPolicy, sp: &SystemParams) -> Result<()> {
    if validate_threshold_policy(tp, sp)? {
        Ok(())
    } else {
        Err(Error::InvalidPolicy)
    }
}

/// Deterministic stationary decision rule q(m, k) ∈ {-1, 0, +1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MdpPolicy {
    pub big_k: usize,
    pub big_b: usize,
    /// Level-major: index (k-1)*(B+1) + m.
    pub action: Vec<i8>,
}

impl MdpPolicy {
    pub fn zeros(sp: &SystemParams) -> Self {
        MdpPolicy {
            big_k: sp.big_k,
            big_b: sp.big_b,
            action: vec![0; sp.big_k * (sp.big_b + 1)],
        }
    }

    /// q(0,k) = -1 for k > 1, q(B,k) = +1 for k < K, zero elsewhere.
    /// Every level can reach every other one, so the induced chain is irreducible.
    pub fn irreducible_start(sp: &SystemParams) -> Self {
        let mut p = Self::zeros(sp);
        for k in 1..=sp.big_k {
            if k > 1 {
                p.set(0, k, -1);
            }
            if k < sp.big_k {
                p.set(sp.big_b, k, 1);
            }
        }
        p
    }

    /// Decision rule that reproduces a threshold policy of the chain model:
    /// +1 above F_k, -1 at or below R_{k-1}.
    pub fn from_thresholds(tp: &ThresholdPolicy, sp: &SystemParams) -> Self {
        let mut p = Self::zeros(sp);
        for k in 1..=sp.big_k {
            for m in 0..=sp.big_b {
                let a = if k < sp.big_k && m > tp.big_f(k) {
                    1
                } else if k > 1 && m <= tp.big_r(k - 1) {
                    -1
                } else {
                    0
                };
                p.set(m, k, a);
            }
        }
        p
    }

    #[inline]
    pub fn index(&self, m: usize, k: usize) -> usize {
        (k - 1) * (self.big_b + 1) + m
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize) -> i8 {
        self.action[self.index(m, k)]
    }

    #[inline]
    pub fn set(&mut self, m: usize, k: usize, a: i8) {
        debug_assert!(a >= -1 && a <= 1);
        let i = self.index(m, k);
        self.action[i] = a;
    }

    /// Actions respect the level bounds: no +1 at K, no -1 at level 1.
    pub fn is_admissible(&self) -> bool {
        (0..=self.big_b).all(|m| {
            self.get(m, self.big_k) != 1 && self.get(m, 1) != -1
        })
    }

    pub fn level_monotone(&self, k: usize) -> bool {
        (1..=self.big_b).all(|m| self.get(m - 1, k) <= self.get(m, k))
    }

    /// Raw switch points of level k.
    pub fn switches(&self, k: usize) -> LevelSwitch {
        let mut first_up = None;
        let mut last_down = None;
        for m in 0..=self.big_b {
            match self.get(m, k) {
                1 if first_up.is_none() => first_up = Some(m),
                -1 => last_down = Some(m),
                _ => {}
            }
        }
        LevelSwitch { first_up, last_down }
    }
}

/// First activation point and last deactivation point of one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelSwitch {
    pub first_up: Option<usize>,
    pub last_down: Option<usize>,
}

/// Threshold vectors of a hysteresis decision rule.
///
/// `big_l[j]` is L_{j+2}, the smallest m at which level j+1 activates, or
/// `inf()` when it never does. `l[j]` is l_{j+2}: one below the last m at which
/// level j+2 deactivates, or 0 when it never does. With this indexing
/// F_k = L_{k+1} - 1 and R_k = l_{k+1} + 1 for a chain-model policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "ThresholdsRepr", try_from = "ThresholdsRepr")]
pub struct HysteresisThresholds {
    pub l: Vec<i64>,
    pub big_l: Vec<usize>,
    pub big_b: usize,
}

impl HysteresisThresholds {
    #[inline]
    pub fn inf(&self) -> usize {
        self.big_b + 1
    }

    pub fn is_inf(&self, v: usize) -> bool {
        v > self.big_b
    }

    /// Shift to chain-model thresholds. `None` when a sentinel is present or
    /// the result is infeasible.
    pub fn to_mc(&self, sp: &SystemParams) -> Option<ThresholdPolicy> {
        if self.big_l.iter().any(|&v| self.is_inf(v) || v == 0) || self.l.iter().any(|&v| v < -1) {
            return None;
        }
        let f = self.big_l.iter().map(|&v| v - 1).collect();
        let r = self.l.iter().map(|&v| (v + 1) as usize).collect();
        let tp = ThresholdPolicy { f, r };
        match validate_threshold_policy(&tp, sp) {
            Ok(true) => Some(tp),
            _ => None,
        }
    }

    /// Inverse of [`to_mc`](Self::to_mc).
    pub fn from_mc(tp: &ThresholdPolicy, sp: &SystemParams) -> Self {
        HysteresisThresholds {
            l: tp.r.iter().map(|&r| r as i64 - 1).collect(),
            big_l: tp.f.iter().map(|&f| f + 1).collect(),
            big_b: sp.big_b,
        }
    }

    pub fn render_l(&self) -> String {
        let v: Vec<String> = self.big_l.iter().map(|&x| self.fmt(x)).collect();
        format!("[{}]", v.join(","))
    }

    pub fn render_small_l(&self) -> String {
        let v: Vec<String> = self.l.iter().map(|x| x.to_string()).collect();
        format!("[{}]", v.join(","))
    }

    fn fmt(&self, x: usize) -> String {
        if self.is_inf(x) {
            "inf".to_string()
        } else {
            x.to_string()
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Bound {
    Num(usize),
    Word(String),
}

#[derive(Serialize, Deserialize)]
struct ThresholdsRepr {
    l: Vec<i64>,
    big_l: Vec<Bound>,
    big_b: usize,
}

impl From<HysteresisThresholds> for ThresholdsRepr {
    fn from(h: HysteresisThresholds) -> Self {
        let big_l = h
            .big_l
            .iter()
            .map(|&v| if h.is_inf(v) { Bound::Word("inf".into()) } else { Bound::Num(v) })
            .collect();
        ThresholdsRepr { l: h.l, big_l, big_b: h.big_b }
    }
}

impl TryFrom<ThresholdsRepr> for HysteresisThresholds {
    type Error = String;

    fn try_from(r: ThresholdsRepr) -> std::result::Result<Self, String> {
        let inf = r.big_b + 1;
        let big_l = r
            .big_l
            .into_iter()
            .map(|b| match b {
                Bound::Num(v) => Ok(v.min(inf)),
                Bound::Word(w) if w.eq_ignore_ascii_case("inf") => Ok(inf),
                Bound::Word(w) => Err(format!("bad threshold `{w}`")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(HysteresisThresholds { l: r.l, big_l, big_b: r.big_b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyClass {
    NonMonotone,
    DoubleThreshold,
    MonotoneHysteresis,
    Isotone,
    StrictlyIsotone,
}

/// Thresholds under the `l`/`L` convention of [`HysteresisThresholds`],
/// without checking the shape of each level.
pub(crate) fn thresholds_of(p: &MdpPolicy) -> HysteresisThresholds {
    let inf = p.big_b + 1;
    let mut big_l = Vec::with_capacity(p.big_k.saturating_sub(1));
    let mut l = Vec::with_capacity(p.big_k.saturating_sub(1));
    for k in 1..p.big_k {
        big_l.push(p.switches(k).first_up.unwrap_or(inf));
        l.push(p.switches(k + 1).last_down.map_or(0, |m| m as i64 - 1));
    }
    HysteresisThresholds { l, big_l, big_b: p.big_b }
}

/// Most specific policy class satisfied by `p`.
pub fn classify_policy(p: &MdpPolicy, sp: &SystemParams) -> PolicyClass {
    let kk = sp.big_k;
    if !(1..=kk).all(|k| p.level_monotone(k)) {
        return PolicyClass::NonMonotone;
    }
    let k_monotone = (1..kk).all(|k| (0..=sp.big_b).all(|m| p.get(m, k) >= p.get(m, k + 1)));
    if !k_monotone {
        return PolicyClass::DoubleThreshold;
    }
    let ht = thresholds_of(p);
    let sorted = ht.big_l.windows(2).all(|w| w[0] <= w[1]) && ht.l.windows(2).all(|w| w[0] <= w[1]);
    // Levels reachable from level 1 by successive activations.
    let top = 1 + ht.big_l.iter().take_while(|&&v| !ht.is_inf(v)).count();
    // Highest level that is never left downwards.
    let floor = (2..=kk).rev().find(|&k| p.switches(k).last_down.is_none()).unwrap_or(1);
    if !(sorted && floor <= top) {
        return PolicyClass::MonotoneHysteresis;
    }
    let all_switch = (1..kk).all(|k| p.switches(k).first_up.is_some())
        && (2..=kk).all(|k| p.switches(k).last_down.is_some());
    if all_switch && ht.to_mc(sp).is_some() {
        PolicyClass::StrictlyIsotone
    } else {
        PolicyClass::Isotone
    }
}

/// Uniform record of a solver run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub algorithm: String,
    pub params: SystemParams,
    pub cost: f64,
    pub thresholds: Option<ThresholdPolicy>,
    pub hysteresis: Option<HysteresisThresholds>,
    pub iterations: usize,
    pub evaluations: usize,
    pub wall_time: f64,
    pub converged: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(k: usize, b: usize) -> SystemParams {
        SystemParams::new(1.0, 1.0, k, b).unwrap()
    }

    #[test]
    fn validation_examples() {
        let s = sp(3, 20);
        assert!(validate_threshold_policy(&ThresholdPolicy::new(vec![1, 3], vec![0, 1]), &s).unwrap());
        assert!(!validate_threshold_policy(&ThresholdPolicy::new(vec![3, 3], vec![0, 1]), &s).unwrap());
        let s16 = sp(16, 100);
        let tp = ThresholdPolicy::new(
            vec![1, 3, 4, 6, 7, 9, 10, 12, 14, 15, 17, 18, 20, 22, 23],
            vec![1, 2, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16],
        );
        assert!(validate_threshold_policy(&tp, &s16).unwrap());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let s = sp(3, 20);
        let e = validate_threshold_policy(&ThresholdPolicy::new(vec![1], vec![0, 1]), &s);
        assert!(matches!(e, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn upper_bounds() {
        let s = sp(3, 5);
        assert!(!validate_threshold_policy(&ThresholdPolicy::new(vec![2, 5], vec![0, 1]), &s).unwrap());
        assert!(validate_threshold_policy(&ThresholdPolicy::new(vec![2, 4], vec![0, 1]), &s).unwrap());
        assert!(!validate_threshold_policy(&ThresholdPolicy::new(vec![2, 4], vec![3, 4]), &s).unwrap());
    }

    #[test]
    fn bad_params_rejected() {
        assert!(SystemParams::new(0.0, 1.0, 1, 1).is_err());
        assert!(SystemParams::new(1.0, 1.0, 3, 2).is_err());
        assert!(CostRates::new(1.0, -1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_policy_is_monotone_hysteresis() {
        let s = sp(4, 10);
        let p = MdpPolicy::zeros(&s);
        assert_eq!(classify_policy(&p, &s), PolicyClass::MonotoneHysteresis);
        let ht = thresholds_of(&p);
        assert!(ht.big_l.iter().all(|&v| ht.is_inf(v)));
        assert!(ht.l.iter().all(|&v| v == 0));
    }

    #[test]
    fn non_monotone_detected() {
        let s = sp(3, 10);
        let mut p = MdpPolicy::zeros(&s);
        p.set(5, 2, 1);
        p.set(6, 2, 0);
        p.set(7, 2, 1);
        assert_eq!(classify_policy(&p, &s), PolicyClass::NonMonotone);
    }

    #[test]
    fn mc_policy_is_strictly_isotone() {
        let s = sp(3, 20);
        let tp = ThresholdPolicy::new(vec![1, 3], vec![0, 1]);
        let p = MdpPolicy::from_thresholds(&tp, &s);
        assert_eq!(classify_policy(&p, &s), PolicyClass::StrictlyIsotone);
        assert_eq!(thresholds_of(&p).to_mc(&s), Some(tp));
    }

    #[test]
    fn thresholds_serde_uses_inf() {
        let h = HysteresisThresholds { l: vec![0, 1], big_l: vec![3, 21], big_b: 20 };
        let txt = serde_json::to_string(&h).unwrap();
        assert!(txt.contains("\"inf\""));
        let back: HysteresisThresholds = serde_json::from_str(&txt).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn params_roundtrip() {
        let s = sp(3, 20);
        let txt = serde_json::to_string(&s).unwrap();
        assert!(txt.contains("big_k") && txt.contains("lambda"));
        let back: SystemParams = serde_json::from_str(&txt).unwrap();
        assert_eq!(back, s);
    }
}
