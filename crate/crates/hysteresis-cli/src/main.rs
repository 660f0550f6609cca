use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hysteresis::cloudcost::PresetId;
use hysteresis::ctmc::{build_chain, evaluate_exact, solve_stationary_exact};
use hysteresis::heuristics::{exhaustive_search, Heuristic, DEFAULT_BUDGET};
use hysteresis::mdp::{build_mdp, solve, MdpSolver, DEFAULT_MAX_ITER};
use hysteresis::sca::{MicroMethod, ScaCache};
use hysteresis::sim::{simulate, SimConfig, SimPolicy};
use hysteresis::{CostRates, SystemParams, ThresholdPolicy};
use hysteresis_cli::{
    run_benchmark, run_concrete, run_highscale, Algorithm, BenchmarkOptions, InstanceGrid, Scenario, Sweep,
    HIGHSCALE_LADDER,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hysteresis", about = "Optimal hysteresis policies for a multi-server queue")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// lambda=..,mu=..,K=..,B=..
    #[arg(long, default_value = "lambda=500,mu=100,K=16,B=100")]
    params: String,
    /// ca=..,cd=..,ch=..,cs=..,cr=..
    #[arg(long, default_value = "ca=2,cd=2,ch=5,cs=5,cr=10")]
    costs: String,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate a threshold policy, or search the optimal one exhaustively.
    SolveMc {
        #[command(flatten)]
        common: Common,
        /// Activation thresholds F_1..F_{K-1}, comma separated.
        #[arg(long)]
        f: Option<String>,
        /// Deactivation thresholds R_1..R_{K-1}.
        #[arg(long)]
        r: Option<String>,
        #[arg(long)]
        distribution: bool,
    },
    /// Solve the decision process.
    SolveMdp {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "Hy-PI")]
        solver: String,
        /// Print the action table.
        #[arg(long)]
        policy: bool,
    },
    /// Run one threshold search heuristic.
    Heuristic {
        name: String,
        #[command(flatten)]
        common: Common,
    },
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// A, B, C, D or K,B.
        #[arg(long, default_value = "A")]
        scenario: String,
        #[arg(long, value_delimiter = ',', default_value = "VI,Hy-PI")]
        algorithms: Vec<String>,
        /// Number of sampled instances.
        #[arg(long)]
        sample: Option<usize>,
        /// Run the whole grid.
        #[arg(long)]
        full: bool,
        /// Write one line per instance and algorithm instead of the summary.
        #[arg(long)]
        per_instance: bool,
    },
    Highscale {
        #[command(flatten)]
        common: Common,
        /// KxB entries, comma separated; the standard ladder up to 64x400 by default.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<String>,
        /// Seconds.
        #[arg(long, default_value_t = 600.0)]
        budget: f64,
    },
    Concrete {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "A")]
        model: String,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
        n_sla: Vec<f64>,
        /// Sweep over arrival rates at the first --n-sla value instead.
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
    },
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        f: Option<String>,
        #[arg(long)]
        r: Option<String>,
        /// Simulate the policy of this decision solver instead of F, R.
        #[arg(long)]
        solver: Option<String>,
        #[arg(long, default_value_t = 1e5)]
        horizon: f64,
        #[arg(long, default_value_t = 0.0)]
        warmup: f64,
        #[arg(long, default_value_t = 5)]
        replications: usize,
        /// Events of the first replication to print.
        #[arg(long, default_value_t = 0)]
        trace: usize,
    },
}

type AnyResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn kv(s: &str) -> AnyResult<Vec<(String, f64)>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| {
            let (k, v) = x.split_once('=').ok_or_else(|| format!("expected key=value, got {x}"))?;
            Ok((k.trim().to_ascii_lowercase(), v.trim().parse::<f64>()?))
        })
        .collect()
}

fn get(pairs: &[(String, f64)], key: &str) -> AnyResult<f64> {
    pairs.iter().find(|p| p.0 == key).map(|p| p.1).ok_or_else(|| format!("missing {key}").into())
}

fn params(c: &Common) -> AnyResult<SystemParams> {
    let p = kv(&c.params)?;
    Ok(SystemParams::new(get(&p, "lambda")?, get(&p, "mu")?, get(&p, "k")? as usize, get(&p, "b")? as usize)?)
}

fn costs(c: &Common) -> AnyResult<CostRates> {
    let p = kv(&c.costs)?;
    Ok(CostRates::new(get(&p, "ch")?, get(&p, "cs")?, get(&p, "ca")?, get(&p, "cd")?, get(&p, "cr")?)?)
}

fn list(s: &str) -> AnyResult<Vec<usize>> {
    Ok(s.split(',').filter(|x| !x.trim().is_empty()).map(|x| x.trim().parse()).collect::<Result<_, _>>()?)
}

fn policy(f: &Option<String>, r: &Option<String>, sp: &SystemParams) -> AnyResult<ThresholdPolicy> {
    match (f, r) {
        (Some(f), Some(r)) => Ok(ThresholdPolicy::new(list(f)?, list(r)?)),
        (None, None) if sp.big_k == 1 => Ok(ThresholdPolicy::single_level()),
        _ => Err("give both --f and --r".into()),
    }
}

fn sink(c: &Common) -> AnyResult<Box<dyn Write>> {
    Ok(match &c.out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit<T: Serialize>(c: &Common, rows: &[T]) -> AnyResult<()> {
    let mut w = sink(c)?;
    match c.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, rows)?;
            writeln!(w)?;
        }
        Format::Csv => {
            let mut wr = csv::Writer::from_writer(w);
            for r in rows {
                wr.serialize(r)?;
            }
            wr.flush()?;
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(c: &Common, v: &T) -> AnyResult<()> {
    let mut w = sink(c)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    Ok(())
}

#[derive(Serialize)]
struct McEval {
    policy: ThresholdPolicy,
    cost_direct: f64,
    cost_aggregated: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    distribution: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Serialize)]
struct PerInstance {
    index: usize,
    algorithm: String,
    lambda: f64,
    mu: f64,
    c_a: f64,
    c_d: f64,
    c_h: f64,
    c_s: f64,
    c_r: f64,
    cost: f64,
    reference: f64,
    optimal: bool,
    evaluations: usize,
    wall_time: f64,
}

#[derive(Serialize)]
struct SimRow {
    mean_cost: f64,
    half_width: f64,
    events: u64,
    analytic_cost: f64,
}

fn run(cli: Cli) -> AnyResult<()> {
    match cli.cmd {
        Cmd::SolveMc { common, f, r, distribution } => {
            let sp = params(&common)?;
            let c = costs(&common)?;
            if f.is_none() && r.is_none() && sp.big_k > 1 {
                let out = exhaustive_search(&sp, &c, DEFAULT_BUDGET)?;
                return emit_json(&common, &out.report);
            }
            let tp = policy(&f, &r, &sp)?;
            let chain = build_chain(&tp, &sp)?;
            let dist = solve_stationary_exact(&chain)?;
            let eval = McEval {
                cost_direct: evaluate_exact(&tp, &sp, &c)?,
                cost_aggregated: ScaCache::new(&tp, &sp, &c, MicroMethod::default())?.cost,
                distribution: distribution
                    .then(|| dist.states.iter().zip(&dist.probs).map(|(s, p)| (s.m, s.k, *p)).collect()),
                policy: tp,
            };
            emit_json(&common, &eval)
        }
        Cmd::SolveMdp { common, solver, policy } => {
            let sp = params(&common)?;
            let mdp = build_mdp(&sp, &costs(&common)?)?;
            let sol = solve(&mdp, MdpSolver::parse(&solver)?, common.tol, DEFAULT_MAX_ITER)?;
            if policy {
                print!("{}", hysteresis::mdp::dump_policy(&sol.policy));
            }
            emit_json(&common, &sol.report(&sp))
        }
        Cmd::Heuristic { name, common } => {
            let sp = params(&common)?;
            let out = Heuristic::parse(&name)?.run(&sp, &costs(&common)?)?;
            emit_json(&common, &out.report)
        }
        Cmd::Benchmark { common, scenario, algorithms, sample, full, per_instance } => {
            let grid = InstanceGrid::new(Scenario::parse(&scenario)?);
            let algs = algorithms
                .iter()
                .filter(|a| !a.trim().is_empty())
                .map(|a| Algorithm::parse(a.trim()))
                .collect::<Result<Vec<_>, _>>()?;
            eprintln!("grid size {}", grid.size());
            let opts = BenchmarkOptions {
                sample: sample.map(|n| (n, common.seed)),
                full_grid: full,
                workers: common.workers,
                tol: common.tol,
                budget: DEFAULT_BUDGET,
            };
            let b = run_benchmark(&grid, &algs, &opts)?;
            if per_instance {
                let mut rows = Vec::new();
                for inst in &b.instances {
                    for res in &inst.results {
                        let reference =
                            if res.algorithm.is_mdp() { inst.mdp_reference } else { inst.mc_reference }.unwrap_or(f64::NAN);
                        rows.push(PerInstance {
                            index: inst.index,
                            algorithm: res.algorithm.name().into(),
                            lambda: inst.params.lambda,
                            mu: inst.params.mu,
                            c_a: inst.costs.c_a,
                            c_d: inst.costs.c_d,
                            c_h: inst.costs.c_h,
                            c_s: inst.costs.c_s,
                            c_r: inst.costs.c_r,
                            cost: res.cost,
                            reference,
                            optimal: inst.is_optimal(res.algorithm) == Some(true),
                            evaluations: res.evaluations,
                            wall_time: res.wall_time,
                        });
                    }
                }
                emit(&common, &rows)
            } else {
                emit(&common, &b.rows)
            }
        }
        Cmd::Highscale { common, sizes, budget } => {
            let sizes: Vec<(usize, usize)> = if sizes.is_empty() {
                HIGHSCALE_LADDER.iter().copied().filter(|&(k, _)| k <= 64).collect()
            } else {
                sizes
                    .iter()
                    .map(|s| {
                        let (k, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected KxB, got {s}"))?;
                        Ok((k.trim().parse()?, b.trim().parse()?))
                    })
                    .collect::<AnyResult<_>>()?
            };
            emit(&common, &run_highscale(&sizes, budget, common.tol))
        }
        Cmd::Concrete { common, model, n_sla, lambda } => {
            let id = PresetId::parse(&model)?;
            let sweep = if lambda.is_empty() {
                Sweep::NSla(n_sla)
            } else {
                Sweep::Lambda { values: lambda, n_sla: *n_sla.first().ok_or("need an --n-sla value")? }
            };
            let rows = run_concrete(id, &sweep, common.tol)?;
            // monetary columns in euros with five decimals
            let rows: Vec<_> = rows
                .into_iter()
                .map(|r| {
                    (
                        r.model,
                        r.lambda,
                        r.n_sla,
                        format!("{:.5}", r.cost),
                        r.first_activation.map_or("inf".to_string(), |v| v.to_string()),
                        format!("{:.5}", r.energy_cost),
                        format!("{:.5}", r.performance_cost),
                    )
                })
                .collect();
            if let Format::Csv = common.format {
                let mut wr = csv::Writer::from_writer(sink(&common)?);
                wr.write_record(["model", "lambda", "n_sla", "cost", "first_activation", "energy_cost", "performance_cost"])?;
                for r in &rows {
                    wr.serialize(r)?;
                }
                wr.flush()?;
                Ok(())
            } else {
                emit(&common, &rows)
            }
        }
        Cmd::Simulate { common, f, r, solver, horizon, warmup, replications, trace } => {
            let sp = params(&common)?;
            let c = costs(&common)?;
            let cfg = SimConfig { horizon, warmup, seed: common.seed, replications, trace_events: trace };
            let (pol, analytic) = match solver {
                Some(s) => {
                    let mdp = build_mdp(&sp, &c)?;
                    let sol = solve(&mdp, MdpSolver::parse(&s)?, common.tol, DEFAULT_MAX_ITER)?;
                    (SimPolicy::Decision(sol.policy), sol.cost)
                }
                None => {
                    let tp = policy(&f, &r, &sp)?;
                    let a = evaluate_exact(&tp, &sp, &c)?;
                    (SimPolicy::Threshold(tp), a)
                }
            };
            let res = simulate(&pol, &sp, &c, &cfg)?;
            if let Some(t) = &res.trace {
                eprint!("{t}");
            }
            let row = SimRow { mean_cost: res.mean_cost, half_width: res.half_width, events: res.events, analytic_cost: analytic };
            emit(&common, &[row])
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
