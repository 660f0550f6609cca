//! Experiment harness: instance grids, solver benchmarks, high-scale timing
//! and the concrete cloud-cost sweeps.

use std::time::Instant;

use hysteresis::cloudcost::{preset, PresetId, SlaCostModel};
use hysteresis::heuristics::{exhaustive_search, policy_count, Heuristic, DEFAULT_BUDGET};
use hysteresis::mdp::{build_mdp, next_level, policy_stationary, solve, MdpSolver, DEFAULT_MAX_ITER};
use hysteresis::{CostModel, CostRates, Error, MdpPolicy, Result, SystemParams, ThresholdPolicy};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Relative tolerance under which a cost counts as optimal.
pub const OPT_TOL: f64 = 1e-6;

/// Grids above this size need an explicit sample or the full-grid flag.
pub const FULL_GRID_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
    C,
    D,
    Custom { k: usize, b: usize },
}

impl Scenario {
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            Scenario::A => (3, 20),
            Scenario::B => (5, 40),
            Scenario::C => (8, 60),
            Scenario::D => (16, 100),
            Scenario::Custom { k, b } => (k, b),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Scenario::A => "A".into(),
            Scenario::B => "B".into(),
            Scenario::C => "C".into(),
            Scenario::D => "D".into(),
            Scenario::Custom { k, b } => format!("K{k}B{b}"),
        }
    }

    /// "A".."D" or "K,B".
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Scenario::A),
            "B" => Ok(Scenario::B),
            "C" => Ok(Scenario::C),
            "D" => Ok(Scenario::D),
            other => {
                let v: Vec<usize> = other
                    .split(|c| c == ',' || c == 'X')
                    .map(|x| x.trim().parse().map_err(|_| Error::Unknown(format!("scenario {s}"))))
                    .collect::<Result<_>>()?;
                match v[..] {
                    [k, b] => Ok(Scenario::Custom { k, b }),
                    _ => Err(Error::Unknown(format!("scenario {s}"))),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceGrid {
    /// Values of C_h and C_s, and of the tied pair C_a = C_d.
    pub cost_values: Vec<f64>,
    pub c_r_values: Vec<f64>,
    /// Values of lambda and of mu.
    pub rate_values: Vec<f64>,
    pub scenario: Scenario,
}

impl InstanceGrid {
    pub fn new(scenario: Scenario) -> Self {
        InstanceGrid {
            cost_values: vec![0.5, 1.0, 2.0, 5.0, 10.0, 20.0],
            c_r_values: vec![1.0, 10.0, 100.0, 1000.0, 5000.0, 10000.0],
            rate_values: vec![0.5, 1.0, 2.0, 5.0, 10.0, 20.0],
            scenario,
        }
    }

    fn radices(&self) -> [usize; 6] {
        let c = self.cost_values.len();
        let r = self.rate_values.len();
        [c, c, c, self.c_r_values.len(), r, r]
    }

    pub fn size(&self) -> usize {
        self.radices().iter().product()
    }

    /// Instance `i` in mixed radix over (C_a=C_d, C_h, C_s, C_r, lambda, mu),
    /// mu varying fastest.
    pub fn instance(&self, i: usize) -> (SystemParams, CostRates) {
        let rad = self.radices();
        let mut digits = [0usize; 6];
        let mut x = i;
        for j in (0..6).rev() {
            digits[j] = x % rad[j];
            x /= rad[j];
        }
        let ad = self.cost_values[digits[0]];
        let costs = CostRates {
            c_h: self.cost_values[digits[1]],
            c_s: self.cost_values[digits[2]],
            c_a: ad,
            c_d: ad,
            c_r: self.c_r_values[digits[3]],
        };
        let (k, b) = self.scenario.dims();
        let sp = SystemParams { lambda: self.rate_values[digits[4]], mu: self.rate_values[digits[5]], big_k: k, big_b: b };
        (sp, costs)
    }

    /// Sorted distinct indices drawn without replacement.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<usize> {
        let n = self.size();
        if count >= n {
            return (0..n).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, n, count).into_vec();
        v.sort_unstable();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    Mdp(MdpSolver),
    Mc(Heuristic),
    Exhaustive,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("exhaustive") {
            return Ok(Algorithm::Exhaustive);
        }
        MdpSolver::parse(s)
            .map(Algorithm::Mdp)
            .or_else(|_| Heuristic::parse(s).map(Algorithm::Mc))
            .map_err(|_| Error::Unknown(format!("algorithm {s}")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Mdp(s) => s.name(),
            Algorithm::Mc(h) => h.name(),
            Algorithm::Exhaustive => "exhaustive",
        }
    }

    pub fn is_mdp(&self) -> bool {
        matches!(self, Algorithm::Mdp(_))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub cost: f64,
    pub wall_time: f64,
    /// Candidate evaluations for searches, improvement-step action
    /// evaluations for policy iteration.
    pub evaluations: usize,
    pub iterations: usize,
    pub thresholds: Option<ThresholdPolicy>,
    #[serde(skip)]
    pub mdp_policy: Option<MdpPolicy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceResult {
    pub index: usize,
    pub params: SystemParams,
    pub costs: CostRates,
    pub results: Vec<RunResult>,
    /// Reference cost of the chain-model rows.
    pub mc_reference: Option<f64>,
    /// Reference cost of the decision-model rows (value iteration).
    pub mdp_reference: Option<f64>,
}

impl InstanceResult {
    pub fn get(&self, alg: Algorithm) -> Option<&RunResult> {
        self.results.iter().find(|r| r.algorithm == alg)
    }

    pub fn is_optimal(&self, alg: Algorithm) -> Option<bool> {
        let r = self.get(alg)?;
        let reference = if alg.is_mdp() { self.mdp_reference } else { self.mc_reference }?;
        Some(is_close(r.cost, reference, OPT_TOL))
    }
}

pub fn is_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(a.abs()).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub algorithm: String,
    pub scenario: String,
    pub instances: usize,
    pub mean_time: f64,
    pub pct_optimal: f64,
    pub mean_evaluations: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Benchmark {
    pub rows: Vec<BenchmarkRow>,
    pub instances: Vec<InstanceResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    /// (count, seed); `None` runs the whole grid.
    pub sample: Option<(usize, u64)>,
    pub full_grid: bool,
    pub workers: usize,
    pub tol: f64,
    pub budget: u128,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions { sample: None, full_grid: false, workers: 0, tol: 1e-8, budget: DEFAULT_BUDGET }
    }
}

fn run_algorithm(alg: Algorithm, sp: &SystemParams, costs: &CostRates, opts: &BenchmarkOptions) -> Result<RunResult> {
    match alg {
        Algorithm::Mdp(s) => {
            let mdp = build_mdp(sp, costs)?;
            let sol = solve(&mdp, s, opts.tol, DEFAULT_MAX_ITER)?;
            Ok(RunResult {
                algorithm: alg,
                cost: sol.cost,
                wall_time: sol.wall_time,
                evaluations: sol.stats.improvement_evals,
                iterations: sol.stats.iterations,
                thresholds: sol.thresholds(sp).and_then(|h| h.to_mc(sp)),
                mdp_policy: Some(sol.policy),
            })
        }
        Algorithm::Mc(h) => {
            let out = h.run(sp, costs)?;
            Ok(RunResult {
                algorithm: alg,
                cost: out.report.cost,
                wall_time: out.report.wall_time,
                evaluations: out.report.evaluations,
                iterations: out.report.iterations,
                thresholds: Some(out.policy),
                mdp_policy: None,
            })
        }
        Algorithm::Exhaustive => {
            let out = exhaustive_search(sp, costs, opts.budget)?;
            Ok(RunResult {
                algorithm: alg,
                cost: out.report.cost,
                wall_time: out.report.wall_time,
                evaluations: out.report.evaluations,
                iterations: 1,
                thresholds: Some(out.policy),
                mdp_policy: None,
            })
        }
    }
}

fn run_instance(
    grid: &InstanceGrid,
    index: usize,
    algorithms: &[Algorithm],
    opts: &BenchmarkOptions,
) -> Result<InstanceResult> {
    let (sp, costs) = grid.instance(index);
    let mut results = algorithms
        .iter()
        .map(|&a| run_algorithm(a, &sp, &costs, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut mdp_reference = None;
    if algorithms.iter().any(|a| a.is_mdp()) {
        let vi = Algorithm::Mdp(MdpSolver::Vi);
        mdp_reference = Some(match results.iter().find(|r| r.algorithm == vi) {
            Some(r) => r.cost,
            None => run_algorithm(vi, &sp, &costs, opts)?.cost,
        });
    }
    let mut mc_reference = None;
    if algorithms.iter().any(|a| !a.is_mdp()) {
        if let Some(r) = results.iter().find(|r| r.algorithm == Algorithm::Exhaustive) {
            mc_reference = Some(r.cost);
        } else if policy_count(&sp) <= opts.budget && grid.scenario == Scenario::A {
            let ex = run_algorithm(Algorithm::Exhaustive, &sp, &costs, opts)?;
            mc_reference = Some(ex.cost);
        } else {
            mc_reference = results
                .iter()
                .filter(|r| !r.algorithm.is_mdp())
                .map(|r| r.cost)
                .reduce(f64::min);
        }
    }
    results.shrink_to_fit();
    Ok(InstanceResult { index, params: sp, costs, results, mc_reference, mdp_reference })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParams(e.to_string()))
}

/// Runs every algorithm on the selected instances. Instances run in parallel
/// and are reported in index order.
pub fn run_benchmark(grid: &InstanceGrid, algorithms: &[Algorithm], opts: &BenchmarkOptions) -> Result<Benchmark> {
    if algorithms.is_empty() {
        return Ok(Benchmark { rows: vec![], instances: vec![] });
    }
    let indices = match opts.sample {
        Some((count, seed)) => grid.sample(count, seed),
        None if grid.size() > FULL_GRID_LIMIT && !opts.full_grid => {
            return Err(Error::InvalidParams(format!(
                "grid has {} instances; pass a sample or the full-grid flag",
                grid.size()
            )))
        }
        None => (0..grid.size()).collect(),
    };
    let instances = pool(opts.workers)?.install(|| {
        indices
            .par_iter()
            .map(|&i| run_instance(grid, i, algorithms, opts))
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = algorithms.iter().map(|&a| summarize(a, &grid.scenario.name(), &instances)).collect();
    Ok(Benchmark { rows, instances })
}

pub fn summarize(alg: Algorithm, scenario: &str, instances: &[InstanceResult]) -> BenchmarkRow {
    let n = instances.len().max(1) as f64;
    let runs: Vec<&RunResult> = instances.iter().filter_map(|i| i.get(alg)).collect();
    let optimal = instances.iter().filter(|i| i.is_optimal(alg) == Some(true)).count();
    BenchmarkRow {
        algorithm: alg.name().to_string(),
        scenario: scenario.to_string(),
        instances: instances.len(),
        mean_time: runs.iter().map(|r| r.wall_time).sum::<f64>() / n,
        pct_optimal: 100.0 * optimal as f64 / n,
        mean_evaluations: runs.iter().map(|r| r.evaluations as f64).sum::<f64>() / n,
    }
}

pub const HIGHSCALE_LADDER: [(usize, usize); 10] =
    [(3, 20), (5, 40), (8, 60), (16, 100), (32, 200), (64, 400), (128, 800), (256, 1600), (512, 3200), (1024, 6400)];

/// Instance used for the high-scale timings: mu = 1, half load, and the
/// cost rates of the sixteen-server reference case.
pub fn highscale_instance(k: usize, b: usize) -> (SystemParams, CostRates) {
    let sp = SystemParams { lambda: 0.5 * k as f64, mu: 1.0, big_k: k, big_b: b };
    (sp, CostRates { c_h: 5.0, c_s: 5.0, c_a: 2.0, c_d: 2.0, c_r: 10.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighscaleRow {
    pub k: usize,
    pub b: usize,
    pub states: usize,
    pub wall_time: f64,
    pub iterations: usize,
    pub cost: f64,
    pub converged: bool,
    pub note: String,
}

/// Hy-PI on each size in turn. Sizes not started before the budget (seconds)
/// runs out, or that fail, are kept with a failure note.
pub fn run_highscale(sizes: &[(usize, usize)], budget: f64, tol: f64) -> Vec<HighscaleRow> {
    let t0 = Instant::now();
    sizes
        .iter()
        .map(|&(k, b)| {
            let mut row = HighscaleRow {
                k,
                b,
                states: k * (b + 1),
                wall_time: f64::NAN,
                iterations: 0,
                cost: f64::NAN,
                converged: false,
                note: String::new(),
            };
            if t0.elapsed().as_secs_f64() >= budget {
                row.note = "budget exceeded".into();
                return row;
            }
            let (sp, costs) = highscale_instance(k, b);
            let res = build_mdp(&sp, &costs).and_then(|mdp| solve(&mdp, MdpSolver::HyPi, tol, DEFAULT_MAX_ITER));
            match res {
                Ok(sol) => {
                    row.wall_time = sol.wall_time;
                    row.iterations = sol.stats.iterations;
                    row.cost = sol.cost;
                    row.converged = t0.elapsed().as_secs_f64() <= budget;
                    if !row.converged {
                        row.note = "finished after budget".into();
                    }
                }
                Err(e) => row.note = e.to_string(),
            }
            row
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Sweep {
    /// SLA levels at the preset arrival rate.
    NSla(Vec<f64>),
    /// Arrival rates at a fixed SLA level.
    Lambda { values: Vec<f64>, n_sla: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcreteRow {
    pub model: String,
    pub lambda: f64,
    pub n_sla: f64,
    /// Optimal cost, euros per hour.
    pub cost: f64,
    /// Smallest queue length at which a second VM is started; `None` when
    /// it never is.
    pub first_activation: Option<usize>,
    pub energy_cost: f64,
    pub performance_cost: f64,
}

/// Energy (VMs, host, switching) and performance (SLA excess, rejections)
/// parts of the long-run cost of `p`.
pub fn cost_split(sp: &SystemParams, model: &SlaCostModel, p: &MdpPolicy, pi: &[f64]) -> (f64, f64) {
    let mut energy = 0.0;
    let mut perf = 0.0;
    for k in 1..=sp.big_k {
        for m in 0..=sp.big_b {
            let x = pi[p.index(m, k)];
            if x == 0.0 {
                continue;
            }
            let a = p.get(m, k);
            let n = next_level(k, a, sp.big_k);
            let switch = match a {
                1 => model.activation(),
                -1 => model.deactivation(),
                _ => 0.0,
            };
            let events = sp.lambda + sp.service_rate(m, n);
            energy += x * (model.server(n) + model.fixed() + switch * events);
            let reject = if m == sp.big_b { sp.lambda * model.rejection() } else { 0.0 };
            perf += x * (model.holding(m) + reject);
        }
    }
    (energy, perf)
}

pub fn concrete_point(id: PresetId, lambda: f64, n_sla: f64, tol: f64) -> Result<ConcreteRow> {
    let (sp0, m0) = preset(id);
    let sp = SystemParams { lambda, ..sp0 };
    let model = m0.with_n_sla(n_sla, lambda);
    let mdp = build_mdp(&sp, &model)?;
    let sol = solve(&mdp, MdpSolver::HyPi, tol, DEFAULT_MAX_ITER)?;
    let pi = policy_stationary(&mdp, &sol.policy)?;
    let (energy_cost, performance_cost) = cost_split(&sp, &model, &sol.policy, &pi);
    let first_activation = if sp.big_k > 1 { sol.policy.switches(1).first_up } else { None };
    Ok(ConcreteRow {
        model: id.name().to_string(),
        lambda,
        n_sla,
        cost: sol.cost,
        first_activation,
        energy_cost,
        performance_cost,
    })
}

pub fn run_concrete(id: PresetId, sweep: &Sweep, tol: f64) -> Result<Vec<ConcreteRow>> {
    let lambda0 = preset(id).0.lambda;
    let points: Vec<(f64, f64)> = match sweep {
        Sweep::NSla(v) => v.iter().map(|&n| (lambda0, n)).collect(),
        Sweep::Lambda { values, n_sla } => values.iter().map(|&l| (l, *n_sla)).collect(),
    };
    points.into_iter().map(|(l, n)| concrete_point(id, l, n, tol)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_a_grid_size() {
        assert_eq!(InstanceGrid::new(Scenario::A).size(), 46656);
    }

    #[test]
    fn instance_decoding_covers_axes() {
        let g = InstanceGrid::new(Scenario::C);
        let (sp, c) = g.instance(0);
        assert_eq!((sp.lambda, sp.mu, sp.big_k, sp.big_b), (0.5, 0.5, 8, 60));
        assert_eq!((c.c_a, c.c_d, c.c_h, c.c_s, c.c_r), (0.5, 0.5, 0.5, 0.5, 1.0));
        let (sp, c) = g.instance(g.size() - 1);
        assert_eq!((sp.lambda, sp.mu), (20.0, 20.0));
        assert_eq!((c.c_a, c.c_h, c.c_s, c.c_r), (20.0, 20.0, 20.0, 10000.0));
        assert_eq!(g.instance(1).0.mu, 1.0);
    }

    #[test]
    fn sampling_is_seeded() {
        let g = InstanceGrid::new(Scenario::A);
        let a = g.sample(50, 3);
        assert_eq!(a, g.sample(50, 3));
        assert_ne!(a, g.sample(50, 4));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_algorithm_list() {
        let b = run_benchmark(&InstanceGrid::new(Scenario::A), &[], &BenchmarkOptions::default()).unwrap();
        assert!(b.rows.is_empty());
    }

    #[test]
    fn large_grid_needs_flag() {
        let algs = [Algorithm::Mdp(MdpSolver::Vi)];
        assert!(run_benchmark(&InstanceGrid::new(Scenario::A), &algs, &BenchmarkOptions::default()).is_err());
    }

    #[test]
    fn algorithm_names() {
        for n in ["VI", "RVI", "PI", "PI-adapted", "DL-PI", "Hy-PI", "BPL", "NLS-MMK-Agg", "exhaustive"] {
            assert_eq!(Algorithm::parse(n).unwrap().name(), n);
        }
        assert!(Algorithm::parse("SA").is_err());
        assert_eq!(Scenario::parse("4,30").unwrap().dims(), (4, 30));
    }

    #[test]
    fn small_benchmark_is_deterministic() {
        let g = InstanceGrid::new(Scenario::A);
        let algs = [Algorithm::Mdp(MdpSolver::HyPi), Algorithm::Mc(Heuristic::Bpl)];
        let opts = BenchmarkOptions { sample: Some((4, 11)), ..BenchmarkOptions::default() };
        let a = run_benchmark(&g, &algs, &opts).unwrap();
        let b = run_benchmark(&g, &algs, &BenchmarkOptions { workers: 1, ..opts }).unwrap();
        assert_eq!(a.rows.len(), 2);
        for (x, y) in a.instances.iter().zip(&b.instances) {
            assert_eq!(x.index, y.index);
            for (r, s) in x.results.iter().zip(&y.results) {
                assert_eq!(r.cost, s.cost);
                assert_eq!(r.thresholds, s.thresholds);
            }
        }
    }

    #[test]
    fn trivial_highscale_entry() {
        let rows = run_highscale(&[(1, 10)], 60.0, 1e-8);
        assert!(rows[0].converged);
        let (sp, c) = highscale_instance(1, 10);
        let sol = solve(&build_mdp(&sp, &c).unwrap(), MdpSolver::HyPi, 1e-8, DEFAULT_MAX_ITER).unwrap();
        assert!(sol.policy.action.iter().all(|&a| a == 0));
    }

    #[test]
    fn concrete_split_adds_up() {
        let rows = run_concrete(PresetId::A, &Sweep::NSla(vec![10.0]), 1e-10).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert!((r.energy_cost + r.performance_cost - r.cost).abs() < 1e-9 * r.cost);
    }
}
