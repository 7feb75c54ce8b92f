//! Command-line front end: network/trace generation, trace-driven
//! simulation, scheduler benchmarking, MIP model export, and the
//! oracle-equivalence sweep.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use ridesharing::bnb;
use ridesharing::brute_force;
use ridesharing::cost::Cost;
use ridesharing::instance::ReschedulingInstance;
use ridesharing::ktree::{Invalidation, KineticTree, TreeConfig, TreeMode};
use ridesharing::mip;
use ridesharing::roadnet::{DistanceOracle, RoadNetwork};
use ridesharing::sim::{self, SchedulerKind, SimConfig};
use ridesharing::trips::{TripId, TripRequest};

#[derive(Parser)]
#[command(name = "rideshare", version, about = "Ridesharing dispatch simulator and schedulers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a grid road network file.
    GenNetwork {
        /// Grid dimensions, e.g. 20x20.
        #[arg(long)]
        grid: String,
        /// Uniform edge weight in deciseconds of travel time.
        #[arg(long, default_value_t = 300)]
        weight: Cost,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic trip trace for a network.
    GenTrace {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        requests: usize,
        /// Fraction of sources collapsed onto one hotspot vertex.
        #[arg(long, default_value_t = 0.0)]
        clustering: f64,
        /// Mean gap between requests, deciseconds.
        #[arg(long, default_value_t = 100)]
        mean_gap: Cost,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a trace against a fleet and write metrics and a request log.
    Simulate(SimulateArgs),
    /// Run the same trace under several schedulers and tabulate response times.
    Bench {
        #[command(flatten)]
        sim: SimulateArgs,
        /// Comma-separated scheduler list.
        #[arg(long, default_value = "bf,bnb,tree,tree_slack")]
        schedulers: String,
    },
    /// Build the mixed-integer model for a random rescheduling instance and
    /// write it as LP text.
    EmitMip {
        #[arg(long)]
        network: PathBuf,
        /// Pending trips in the generated instance.
        #[arg(long, default_value_t = 2)]
        pending: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 6_000)]
        wait: Cost,
        #[arg(long, default_value_t = 20)]
        detour_pct: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep random scenarios and check that branch-and-bound and both tree
    /// modes reproduce the exhaustive optimum exactly.
    Verify {
        #[arg(long, default_value_t = 1_000)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Grid dimensions for the test network.
        #[arg(long, default_value = "20x20")]
        grid: String,
        #[arg(long, default_value_t = 300)]
        weight: Cost,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// bf | bnb | tree | tree_slack | tree_hotspot
    #[arg(long, default_value = "tree_slack")]
    scheduler: String,
    /// Seats per vehicle; "unlimited" lifts the cap.
    #[arg(long, default_value = "4")]
    capacity: String,
    /// Waiting-time limit, minutes.
    #[arg(long, default_value_t = 10.0)]
    wait_min: f64,
    /// Detour allowance, percent.
    #[arg(long, default_value_t = 20)]
    detour_pct: u32,
    #[arg(long, default_value_t = 10_000)]
    fleet: usize,
    /// Hotspot merge radius, seconds (tree_hotspot only).
    #[arg(long, default_value_t = 30)]
    theta: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// eager | lazy branch invalidation for tree schedulers.
    #[arg(long, default_value = "lazy")]
    invalidation: String,
    /// Record wall-clock scheduling times (timing rows become
    /// run-dependent; all other outputs stay seed-deterministic).
    #[arg(long)]
    timings: bool,
    /// Metrics CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-request log CSV path.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit 0
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenNetwork { grid, weight, out } => {
            let (rows, cols) = parse_grid(&grid)?;
            let net = RoadNetwork::grid(rows, cols, weight);
            std::fs::write(&out, net.to_file_text())?;
            println!("wrote {}x{} grid ({} vertices, {} edges) to {}", rows, cols, net.vertex_count(), net.edge_count(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::GenTrace { network, requests, clustering, mean_gap, seed, out } => {
            let net = load_network(&network)?;
            let trace = sim::generate_trace(seed, &net, requests, clustering, mean_gap);
            std::fs::write(&out, sim::trace_to_text(&trace))?;
            println!("wrote {} requests to {}", trace.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(args) => {
            let (config, net, trace) = build_sim(&args)?;
            let report = sim::run(&config, net, &trace)?;
            if !report.violations.is_empty() {
                for v in &report.violations {
                    eprintln!("constraint violation: {v}");
                }
                return Ok(ExitCode::from(3));
            }
            let metrics_text = sim::metrics_csv(&report.metrics);
            match &args.out {
                Some(path) => std::fs::write(path, &metrics_text)?,
                None => print!("{metrics_text}"),
            }
            if let Some(path) = &args.log {
                std::fs::write(path, sim::requests_csv(&report.records))?;
            }
            println!(
                "served {}/{} requests; mean wait {:.1}s, mean ride {:.1}s",
                report.metrics.served,
                report.metrics.submitted,
                report.metrics.mean_wait_ds / 10.0,
                report.metrics.mean_ride_ds / 10.0,
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { sim: args, schedulers } => {
            let mut table = String::from("scheduler,acrt_ms,active_trips,mean_art_ms,samples\n");
            for name in schedulers.split(',') {
                let name = name.trim();
                let mut args_for = SimulateArgs { scheduler: name.to_string(), timings: true, ..clone_args(&args) };
                args_for.out = None;
                args_for.log = None;
                let (config, net, trace) = build_sim(&args_for)?;
                let report = sim::run(&config, net, &trace)?;
                anyhow::ensure!(
                    report.violations.is_empty(),
                    "{name}: constraint violations in benchmark run"
                );
                let acrt = report.metrics.acrt_ms.unwrap_or(0.0);
                if report.metrics.art_by_active_ms.is_empty() {
                    table.push_str(&format!("{name},{acrt:.4},,,\n"));
                }
                for (active, mean, n) in &report.metrics.art_by_active_ms {
                    table.push_str(&format!("{name},{acrt:.4},{active},{mean:.4},{n}\n"));
                }
                println!("{name}: acrt {acrt:.3} ms over {} requests", report.metrics.submitted);
            }
            match &args.out {
                Some(path) => std::fs::write(path, table)?,
                None => print!("{table}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::EmitMip { network, pending, seed, wait, detour_pct, out } => {
            let net = load_network(&network)?;
            let oracle = DistanceOracle::new(Arc::new(net));
            let inst = random_instance(&oracle, seed, pending, wait, detour_pct * 100);
            let model = mip::build_model(&oracle, &inst);
            let text = mip::emit_lp(&model)?;
            std::fs::write(&out, &text)?;
            println!(
                "wrote model with {} nodes, {} variables, {} rows to {}",
                model.node_count,
                model.variable_count(),
                model.rows.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { instances, seed, grid, weight } => {
            let (rows, cols) = parse_grid(&grid)?;
            let oracle = DistanceOracle::new(Arc::new(RoadNetwork::grid(rows, cols, weight)));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut matched = 0;
            for i in 0..instances {
                if verify_one(&oracle, &mut rng) {
                    matched += 1;
                } else {
                    eprintln!("instance {i}: schedulers disagree");
                }
            }
            println!("{matched}/{instances} match");
            if matched == instances {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(3))
            }
        }
    }
}

fn clone_args(a: &SimulateArgs) -> SimulateArgs {
    SimulateArgs {
        network: a.network.clone(),
        trace: a.trace.clone(),
        scheduler: a.scheduler.clone(),
        capacity: a.capacity.clone(),
        wait_min: a.wait_min,
        detour_pct: a.detour_pct,
        fleet: a.fleet,
        theta: a.theta,
        seed: a.seed,
        invalidation: a.invalidation.clone(),
        timings: a.timings,
        out: a.out.clone(),
        log: a.log.clone(),
    }
}

fn parse_grid(s: &str) -> anyhow::Result<(u32, u32)> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow::anyhow!("grid must look like 20x20, got {s:?}"))?;
    Ok((r.trim().parse()?, c.trim().parse()?))
}

fn load_network(path: &PathBuf) -> anyhow::Result<RoadNetwork> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    Ok(RoadNetwork::parse(&text)?)
}

fn build_sim(args: &SimulateArgs) -> anyhow::Result<(SimConfig, Arc<RoadNetwork>, Vec<sim::TraceRequest>)> {
    let net = Arc::new(load_network(&args.network)?);
    let trace_text = std::fs::read_to_string(&args.trace)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", args.trace.display()))?;
    let trace = sim::parse_trace(&trace_text)?;
    let scheduler = SchedulerKind::parse(&args.scheduler)
        .ok_or_else(|| anyhow::anyhow!("unknown scheduler {:?}", args.scheduler))?;
    let capacity = match args.capacity.as_str() {
        "unlimited" => None,
        n => Some(n.parse::<usize>().map_err(|_| anyhow::anyhow!("bad capacity {n:?}"))?),
    };
    let invalidation = match args.invalidation.as_str() {
        "eager" => Invalidation::Eager,
        "lazy" => Invalidation::Lazy,
        other => anyhow::bail!("invalidation must be eager or lazy, got {other:?}"),
    };
    let config = SimConfig {
        capacity,
        max_wait: (args.wait_min * 600.0).round() as Cost,
        detour_bp: args.detour_pct * 100,
        fleet_size: args.fleet,
        scheduler,
        invalidation,
        theta: args.theta * 10,
        seed: args.seed,
        collect_timings: args.timings,
        ..SimConfig::default()
    };
    Ok((config, net, trace))
}

fn random_instance(
    oracle: &DistanceOracle,
    seed: u64,
    pending: usize,
    wait: Cost,
    detour_bp: u32,
) -> ReschedulingInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = oracle.network().vertex_count();
    let mut inst = ReschedulingInstance::at(rng.gen_range(0..n));
    for id in 0..pending as u32 {
        let s = rng.gen_range(0..n);
        let mut e = rng.gen_range(0..n);
        while e == s {
            e = rng.gen_range(0..n);
        }
        let req = TripRequest {
            id: TripId(id),
            source: s,
            destination: e,
            request_time: 0,
            max_wait: wait,
            detour_bp,
        };
        if id + 1 == pending as u32 {
            inst.new_trip = Some(req);
        } else if rng.gen_bool(0.5) {
            // picked up somewhere behind; leave room to reach the dropoff
            let reach = oracle.distance(inst.start, e);
            inst.onboard.push(ridesharing::instance::OnboardTrip {
                trip: req.id,
                dropoff: e,
                ride_budget: ridesharing::cost::service_budget(reach, detour_bp),
            });
        } else {
            inst.waiting.push(ridesharing::instance::WaitingTrip {
                trip: req.id,
                pickup: s,
                dropoff: e,
                wait_budget: wait,
                ride_budget: req.service_budget(oracle),
            });
        }
    }
    inst
}

/// One verification round: random request sequence inserted into basic and
/// slack trees, compared against both exact searches on the same state.
fn verify_one(oracle: &DistanceOracle, rng: &mut ChaCha8Rng) -> bool {
    let n = oracle.network().vertex_count();
    let origin = rng.gen_range(0..n);
    let mk = |mode| KineticTree::new(
        origin,
        TreeConfig { mode, invalidation: Invalidation::Eager, max_onboard: Some(4), ..TreeConfig::default() },
    );
    let mut basic = mk(TreeMode::Basic);
    let mut slack = mk(TreeMode::Slack);
    let trips = rng.gen_range(1..=4usize);
    let mut inserted = 0;
    let mut id = 0;
    while inserted < trips {
        id += 1;
        if id > 50 {
            break;
        }
        let s = rng.gen_range(0..n);
        let mut e = rng.gen_range(0..n);
        while e == s {
            e = rng.gen_range(0..n);
        }
        let req = TripRequest {
            id: TripId(id),
            source: s,
            destination: e,
            request_time: 0,
            max_wait: 6_000,
            detour_bp: 2_000,
        };
        let cb = basic.try_insert(oracle, &req).unwrap_or(None);
        let cs = slack.try_insert(oracle, &req).unwrap_or(None);
        match (cb, cs) {
            (Some(cb), Some(cs)) => {
                if cb.best_cost != cs.best_cost {
                    return false;
                }
                basic.commit(cb).unwrap();
                slack.commit(cs).unwrap();
                inserted += 1;
            }
            (None, None) => {}
            _ => return false,
        }
        if inserted > 0 && rng.gen_bool(0.3) {
            if let Some(&next) = basic.selected_route().first() {
                basic.advance(next).unwrap();
                slack.advance(next).unwrap();
            }
        }
    }
    if basic.is_empty() {
        return true;
    }
    let (ov, oe) = basic.origin();
    let snapshot = basic.instance_snapshot(ov, oe, 0);
    let bf = match brute_force::best_schedule(oracle, &snapshot) {
        Ok((b, _)) => b,
        Err(_) => return false,
    };
    let bb = match bnb::best_schedule(oracle, &snapshot) {
        Ok((b, _)) => b,
        Err(_) => return false,
    };
    let bf = match bf {
        Some(b) => b,
        None => return false,
    };
    bb.as_ref() == Some(&bf)
        && basic.best_cost() == Some(bf.cost)
        && slack.best_cost() == Some(bf.cost)
        && basic.selected_route() == &bf.sequence[..]
        && slack.selected_route() == &bf.sequence[..]
}
