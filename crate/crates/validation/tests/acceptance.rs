//! Acceptance suite. Runs without the libtest harness so every check prints
//! its PASS/FAIL line even under a plain `cargo test`; the binary exits
//! non-zero when any check fails.
//!
//! The desk-scale checks run the shipped `configs/desk.toml` cluster
//! (240 GPUs, 10:1 oversubscription); the expensive run sets are shared
//! between tests through `OnceLock`s.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use defragsim::config::ExperimentConfig;
use defragsim::controller::Algorithm;
use defragsim::experiment::{experiment_specs, run_specs, sweep_specs, RunOutput, SweepAxis};
use defragsim::flowsim::maxmin_rates;
use defragsim::fragmentation::sequential_placement;
use defragsim::jobmodel::DEFAULT_REINIT_SECONDS;
use defragsim::metrics::percentile;
use defragsim::routing::{edge_coloring, DemandGraph};
use defragsim::solver::{brute_force_min_moves, solve, SolverInstance, SolverJob, SolverOptions};
use defragsim::topology::{ClusterTopology, GBPS};
use defragsim::workload::{JobId, JobSpec, ModelTemplate};
use defragsim::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DESK: &str = include_str!("../../../configs/desk.toml");

fn verdict(index: usize, name: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{index:02}/12] {tag} {name}: {detail}");
    pass
}

fn desk() -> ExperimentConfig {
    ExperimentConfig::from_toml(DESK).expect("shipped desk config is valid")
}

fn run(cfg: &ExperimentConfig, algorithms: &[Algorithm], seeds: usize) -> Vec<RunOutput> {
    let specs = experiment_specs(cfg, Some(algorithms), Some(seeds));
    run_specs(cfg, &specs, None, false).expect("desk runs complete")
}

const HIGH_LOADS: [f64; 2] = [0.9, 1.0];
const ORDER_SEEDS: usize = 3;
const MOVE_SEEDS: usize = 10;

/// All algorithms at high load over the first seeds, plus extra MonkeyTree
/// seeds for the defrag statistics.
fn high_load_runs() -> &'static [RunOutput] {
    static RUNS: OnceLock<Vec<RunOutput>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut cfg = desk();
        cfg.trace.loads = HIGH_LOADS.to_vec();
        let mut out = run(&cfg, &[Algorithm::Monkeytree], MOVE_SEEDS);
        let others = [Algorithm::PerfectOnly, Algorithm::Sglb, Algorithm::Crux, Algorithm::Ecmp];
        out.extend(run(&cfg, &others, ORDER_SEEDS));
        out
    })
}

fn lambda_runs() -> &'static [RunOutput] {
    static RUNS: OnceLock<Vec<RunOutput>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut cfg = desk();
        cfg.topology.uplinks_per_tor = 4;
        cfg.trace.loads = vec![0.9];
        cfg.algorithms = vec![Algorithm::Monkeytree];
        cfg.sweep.thresholds = vec![2, 3, 4];
        let specs = sweep_specs(&cfg, SweepAxis::Lambda).expect("lambda cells");
        run_specs(&cfg, &specs, None, false).expect("sweep runs complete")
    })
}

// ---------------------------------------------------------------------------

/// Degree of every rack computed straight from stage host lists.
fn rack_degrees(p: &defragsim::scheduler::Placement, jobs: &[JobSpec], topo: &ClusterTopology) -> Vec<usize> {
    let mut deg = vec![0; topo.num_racks];
    for j in jobs {
        let layout = p.layout(j.job_id).expect("placed");
        for stage in &layout.stage_hosts {
            let racks: BTreeSet<usize> = stage.iter().map(|&h| topo.rack_of_host(h)).collect();
            if racks.len() >= 2 {
                for r in racks {
                    deg[r] += j.tp_degree;
                }
            }
        }
    }
    deg
}

fn sequential_fill_bounds_fragmentation() -> bool {
    let template = ModelTemplate::default_menu().remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = (0usize, 0usize);
    let mut failures = 0;
    for case in 0..1000 {
        let with_tp = case % 2 == 1;
        let gph = [1, 2, 4, 8][rng.gen_range(0..4)];
        let topo = ClusterTopology::make_two_tier(
            rng.gen_range(2..=10),
            rng.gen_range(1..=8),
            gph,
            2,
            400.0 * GBPS,
            400.0 * GBPS,
            2,
        )
        .unwrap();
        let mut free = topo.total_hosts();
        let mut jobs = Vec::new();
        while free > 0 && jobs.len() < 40 {
            let tp = if with_tp {
                let divs: Vec<usize> = (1..=gph).filter(|d| gph % d == 0).collect();
                divs[rng.gen_range(0..divs.len())]
            } else {
                1
            };
            let pp = if with_tp { rng.gen_range(1..=3) } else { 1 };
            let stage_hosts = rng.gen_range(1..=(2 * topo.hosts_per_rack).max(1));
            if stage_hosts * pp > free {
                break;
            }
            free -= stage_hosts * pp;
            let dp = stage_hosts * gph / tp;
            jobs.push(JobSpec::from_template(JobId(jobs.len() as u64), &template, dp, tp, pp, false, 1, 0.0));
        }
        let p = sequential_placement(&jobs, &topo).unwrap();
        let max_tp = jobs.iter().map(|j| j.tp_degree).max().unwrap_or(1);
        let bound = if with_tp { 2 * max_tp } else { 2 };
        let max = rack_degrees(&p, &jobs, &topo).into_iter().max().unwrap_or(0);
        if max > bound {
            failures += 1;
        }
        if max * worst.1 >= worst.0 * bound.max(1) {
            worst = (max, bound);
        }
    }
    verdict(
        1,
        "sequential fill keeps every rack within 2 (pure DP) / 2*max_tp (TP)",
        failures == 0,
        format!("1000 instances, {failures} over the bound, tightest {}/{}", worst.0, worst.1),
    )
}

// ---------------------------------------------------------------------------

fn random_solver_instance(rng: &mut ChaCha8Rng, racks: usize, capacity: usize, jobs: usize, threshold: usize) -> SolverInstance {
    let mut room = vec![capacity; racks];
    let mut out = Vec::new();
    for id in 0..jobs {
        let free: usize = room.iter().sum();
        if free == 0 {
            break;
        }
        let size = rng.gen_range(1..=free.min(2 * capacity));
        let mut row = vec![0; racks];
        for _ in 0..size {
            let open: Vec<usize> = (0..racks).filter(|&t| room[t] > 0).collect();
            let t = open[rng.gen_range(0..open.len())];
            room[t] -= 1;
            row[t] += 1;
        }
        out.push(SolverJob {
            id: id as u64,
            size,
            weight: 1,
            initial: row,
        });
    }
    SolverInstance {
        racks,
        capacity,
        threshold,
        jobs: out,
    }
}

fn moves_or_infeasible(r: Result<usize, Error>) -> Result<usize, String> {
    r.map_err(|e| match e {
        Error::Infeasible(_) => "infeasible".to_string(),
        other => panic!("unexpected error: {other}"),
    })
}

fn solver_matches_exhaustive_search() -> bool {
    let opts = SolverOptions::default();
    let mut checked = 0;
    let mut violating = 0;
    let mut mismatches = Vec::new();
    let mut check = |inst: &SolverInstance, label: String| {
        let got = moves_or_infeasible(solve(inst, &opts).map(|p| {
            assert!(p.stats.optimal, "{label}: solver hit a limit");
            p.move_count
        }));
        let want = moves_or_infeasible(brute_force_min_moves(inst));
        checked += 1;
        if !inst.violations(&inst.initial_rows()).is_empty() {
            violating += 1;
        }
        if got != want {
            mismatches.push(format!("{label}: solver {got:?} vs exhaustive {want:?}"));
        }
    };
    // every cell of the family, several instances each
    for racks in 1..=4 {
        for capacity in 1..=4 {
            for jobs in 1..=5 {
                for threshold in [2, 3] {
                    for k in 0..40u64 {
                        let seed = ((racks * 1000 + capacity * 100 + jobs * 10 + threshold) as u64) << 8 | k;
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        // odd k: redraw a few times looking for an instance that needs moves
                        let mut inst = random_solver_instance(&mut rng, racks, capacity, jobs, threshold);
                        for _ in 0..if k % 2 == 1 { 50 } else { 0 } {
                            if !inst.violations(&inst.initial_rows()).is_empty() {
                                break;
                            }
                            inst = random_solver_instance(&mut rng, racks, capacity, jobs, threshold);
                        }
                        check(&inst, format!("T={racks} C={capacity} S={jobs} lambda={threshold} k={k}"));
                    }
                }
            }
        }
    }
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + seed);
        let (racks, capacity, jobs) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=5));
        let threshold = rng.gen_range(2..=3);
        let inst = random_solver_instance(&mut rng, racks, capacity, jobs, threshold);
        check(&inst, format!("seed {seed}"));
    }
    verdict(
        2,
        "solver move count equals exhaustive minimum (T<=4, C<=4, |S|<=5, lambda in {2,3})",
        mismatches.is_empty(),
        format!(
            "{checked} instances ({violating} starting over threshold), {} mismatches {:?}",
            mismatches.len(),
            mismatches.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------------------

fn edge_coloring_is_proper_and_minimal() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut bad = Vec::new();
    for case in 0..1000 {
        let racks = rng.gen_range(1..=12);
        let cap = rng.gen_range(1..=16);
        let mut g = DemandGraph::new(racks);
        let (mut out, mut inn) = (vec![0; racks], vec![0; racks]);
        for _ in 0..rng.gen_range(0..=racks * cap) {
            let (s, t) = (rng.gen_range(0..racks), rng.gen_range(0..racks));
            if out[s] < cap && inn[t] < cap {
                out[s] += 1;
                inn[t] += 1;
                g.edges.push((s, t));
            }
        }
        let delta = out.iter().chain(&inn).copied().max().unwrap_or(0);
        let colors = edge_coloring(&g);
        let mut seen_out = BTreeSet::new();
        let mut seen_in = BTreeSet::new();
        let proper = colors.len() == g.edges.len()
            && g.edges.iter().zip(&colors).all(|(&(s, t), &c)| {
                c < delta && seen_out.insert((s, c)) && seen_in.insert((t, c))
            });
        let used: BTreeSet<usize> = colors.iter().copied().collect();
        if !proper || used.len() != delta {
            bad.push(format!("case {case}: delta {delta}, {} colors, proper {proper}", used.len()));
        }
    }
    verdict(
        3,
        "edge coloring proper with exactly max-degree colors",
        bad.is_empty(),
        format!("1000 multigraphs with degree <= 16, {} bad {:?}", bad.len(), bad.first()),
    )
}

// ---------------------------------------------------------------------------

fn quiescent_points_are_path_isolated() -> bool {
    let runs: Vec<&RunOutput> = high_load_runs()
        .iter()
        .filter(|r| r.spec.algorithm == Algorithm::Monkeytree)
        .chain(lambda_runs())
        .collect();
    let checks: u64 = runs.iter().map(|r| r.result.stats.isolation_checks).sum();
    let violations: u64 = runs.iter().map(|r| r.result.stats.isolation_violations).sum();
    let unchecked = runs.iter().filter(|r| r.result.stats.isolation_checks == 0).count();
    verdict(
        4,
        "no uplink carries two DP flows at any quiescent point",
        violations == 0 && unchecked == 0 && checks > 0,
        format!("{} runs, {checks} quiescent points, {violations} shared uplinks", runs.len()),
    )
}

// ---------------------------------------------------------------------------

/// Water level rises for every unfrozen flow; a link saturates when its
/// frozen load plus level times its unfrozen count reaches capacity.
fn water_fill(paths: &[Vec<usize>], cap: &[f64]) -> Vec<f64> {
    let mut rate = vec![f64::NAN; paths.len()];
    let mut level = 0.0;
    loop {
        let open: Vec<usize> = (0..paths.len()).filter(|&f| rate[f].is_nan()).collect();
        if open.is_empty() {
            return rate;
        }
        let mut next = f64::INFINITY;
        for (l, &c) in cap.iter().enumerate() {
            let frozen: f64 = (0..paths.len())
                .filter(|&f| !rate[f].is_nan() && paths[f].contains(&l))
                .map(|f| rate[f])
                .sum();
            let n = open.iter().filter(|&&f| paths[f].contains(&l)).count();
            if n > 0 {
                next = next.min((c - frozen) / n as f64);
            }
        }
        level = f64::max(level, next);
        let tight: Vec<usize> = (0..cap.len())
            .filter(|&l| {
                let load: f64 = (0..paths.len())
                    .filter(|&f| paths[f].contains(&l))
                    .map(|f| if rate[f].is_nan() { level } else { rate[f] })
                    .sum();
                open.iter().any(|&f| paths[f].contains(&l)) && load >= cap[l] * (1.0 - 1e-12)
            })
            .collect();
        for &f in &open {
            if paths[f].iter().any(|l| tight.contains(l)) {
                rate[f] = level;
            }
        }
    }
}

fn maxmin_matches_oracle_and_conserves() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let links = rng.gen_range(1..=30);
        let cap: Vec<f64> = (0..links).map(|_| rng.gen_range(1.0..100.0)).collect();
        let flows = rng.gen_range(1..=60);
        let paths: Vec<Vec<usize>> = (0..flows)
            .map(|_| {
                let mut p: Vec<usize> = (0..rng.gen_range(1..=5.min(links))).map(|_| rng.gen_range(0..links)).collect();
                p.sort();
                p.dedup();
                p
            })
            .collect();
        let got = maxmin_rates(&paths, &cap).unwrap();
        let want = water_fill(&paths, &cap);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs() / w.abs().max(1e-300));
        }
    }
    let mut cfg = desk();
    cfg.trace.loads = vec![0.9];
    cfg.sim.check_conservation = true;
    let r = &run(&cfg, &[Algorithm::Monkeytree], 1)[0];
    let s = &r.result.stats;
    let pass = worst <= 1e-9 && s.conservation_failures == 0 && s.conservation_checks == s.processed;
    verdict(
        5,
        "max-min rates equal water-filling oracle; conservation holds on every event at 90% load",
        pass,
        format!(
            "1000 graphs, max relative error {worst:.2e}; {} of {} events checked, {} failures",
            s.conservation_checks, s.processed, s.conservation_failures
        ),
    )
}

// ---------------------------------------------------------------------------

fn identical_runs_hash_identically() -> bool {
    let mut cfg = desk();
    cfg.trace.loads = vec![0.9];
    let algs = [Algorithm::Monkeytree, Algorithm::Sglb];
    let a = run(&cfg, &algs, 1);
    let b = run(&cfg, &algs, 1);
    let same = a
        .iter()
        .zip(&b)
        .all(|(x, y)| x.result.stats.event_hash == y.result.stats.event_hash && x.result.jobs == y.result.jobs);
    verdict(
        6,
        "identical (config, seed) gives identical event-log hash",
        same,
        a.iter()
            .map(|r| format!("{} {}", r.spec.algorithm, &r.result.stats.event_hash[..16]))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

// ---------------------------------------------------------------------------

fn pooled(runs: &[RunOutput], alg: Algorithm, load: f64, max_seed: u64) -> Vec<f64> {
    runs.iter()
        .filter(|r| r.spec.algorithm == alg && r.spec.load == load && r.spec.seed <= max_seed)
        .flat_map(|r| r.result.jobs.iter().map(|j| j.slowdown))
        .collect()
}

fn slowdown_ordering_at_high_load() -> bool {
    let runs = high_load_runs();
    let last_seed = desk().seed + ORDER_SEEDS as u64 - 1;
    let chain = [
        Algorithm::Monkeytree,
        Algorithm::PerfectOnly,
        Algorithm::Sglb,
        Algorithm::Crux,
        Algorithm::Ecmp,
    ];
    let mut broken = Vec::new();
    let mut table = Vec::new();
    let mut mt_p99 = 0.0f64;
    for load in HIGH_LOADS {
        let stats: Vec<(f64, f64)> = chain
            .iter()
            .map(|&a| {
                let s = pooled(runs, a, load, last_seed);
                (s.iter().sum::<f64>() / s.len() as f64, percentile(&s, 99.0).unwrap())
            })
            .collect();
        mt_p99 = mt_p99.max(stats[0].1);
        table.push(format!(
            "load {load}: {}",
            chain
                .iter()
                .zip(&stats)
                .map(|(a, (m, p))| format!("{a} {m:.4}/{p:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        ));
        for w in 0..chain.len() - 1 {
            for (what, x, y) in [("mean", stats[w].0, stats[w + 1].0), ("p99", stats[w].1, stats[w + 1].1)] {
                if x > y {
                    broken.push(format!("load {load} {what}: {} {x:.4} > {} {y:.4}", chain[w], chain[w + 1]));
                }
            }
        }
    }
    if mt_p99 > 1.10 {
        broken.push(format!("monkeytree p99 {mt_p99:.4} > 1.10"));
    }
    verdict(
        7,
        "mean and p99 ordering monkeytree <= perfect-only <= sglb <= crux <= ecmp, monkeytree p99 <= 1.10",
        broken.is_empty(),
        format!("[{}] broken: {:?}", table.join("; "), broken),
    )
}

// ---------------------------------------------------------------------------

fn defrags_need_few_moves() -> bool {
    let moves: Vec<usize> = high_load_runs()
        .iter()
        .filter(|r| r.spec.algorithm == Algorithm::Monkeytree)
        .flat_map(|r| r.result.defrag.iter().map(|d| d.move_count))
        .collect();
    let n = moves.len();
    let small = moves.iter().filter(|&&m| m <= 2).count() as f64 / n.max(1) as f64;
    let mean = moves.iter().sum::<usize>() as f64 / n.max(1) as f64;
    let mut hist = BTreeMap::new();
    for &m in &moves {
        *hist.entry(m).or_insert(0) += 1;
    }
    verdict(
        8,
        ">= 70% of defrags need <= 2 moves and mean moves in [1.4, 2.2]",
        n > 0 && small >= 0.70 && (1.4..=2.2).contains(&mean),
        format!("{n} defrags over {MOVE_SEEDS} seeds x loads {HIGH_LOADS:?}, {:.0}% <= 2, mean {mean:.3}, histogram {hist:?}", small * 100.0),
    )
}

// ---------------------------------------------------------------------------

fn solve_time_grows_with_moves() -> bool {
    let mut by_moves: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in high_load_runs().iter().filter(|r| r.spec.algorithm == Algorithm::Monkeytree) {
        for s in &r.result.solver {
            if let Some(m) = s.move_count {
                by_moves.entry(m).or_default().push(s.solve_seconds);
            }
        }
    }
    let medians: Vec<(usize, usize, f64)> = by_moves
        .iter()
        .map(|(&m, t)| (m, t.len(), percentile(t, 50.0).unwrap()))
        .collect();
    let monotone = medians.windows(2).all(|w| w[0].2 <= w[1].2);
    verdict(
        9,
        "median solve time non-decreasing in move count",
        !medians.is_empty() && monotone,
        medians
            .iter()
            .map(|(m, n, t)| format!("{m} moves: n={n} median {:.1}us", t * 1e6))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

// ---------------------------------------------------------------------------

fn threshold_sweep_is_monotone() -> bool {
    let runs = lambda_runs();
    let mut cells: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    for r in runs {
        let c = cells.entry(r.spec.threshold.expect("sweep sets threshold")).or_default();
        c.0 += r.result.defrag.iter().map(|d| d.move_count).sum::<usize>();
        c.1.extend(r.result.jobs.iter().map(|j| j.slowdown));
    }
    let moves: Vec<usize> = cells.values().map(|c| c.0).collect();
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let uplinks = runs[0].spec.topology.uplinks_per_tor;
    let at_two = mean(&cells[&2].1);
    let at_uplinks = mean(&cells[&uplinks].1);
    let rel = (at_uplinks - at_two).abs() / at_two;
    verdict(
        10,
        "total moves non-increasing in threshold; slowdown at threshold=uplinks within 1% of threshold=2",
        moves.windows(2).all(|w| w[0] >= w[1]) && rel <= 0.01,
        format!(
            "{}; mean slowdown {at_two:.4} vs {at_uplinks:.4} ({:.3}%)",
            cells.iter().map(|(l, c)| format!("threshold {l}: {} moves", c.0)).collect::<Vec<_>>().join(", "),
            rel * 100.0
        ),
    )
}

// ---------------------------------------------------------------------------

fn spray_at_full_bisection_is_ideal() -> bool {
    let mut cfg = desk();
    cfg.topology = cfg.topology.with_oversubscription(1.0).unwrap();
    cfg.trace.loads = vec![1.0];
    let r = &run(&cfg, &[Algorithm::Spray], 1)[0];
    let worst = r
        .result
        .jobs
        .iter()
        .map(|j| (j.slowdown - 1.0).abs())
        .fold(0.0, f64::max);
    verdict(
        11,
        "spray at full bisection: every job slowdown 1.0 within 0.1%",
        !r.result.jobs.is_empty() && worst <= 1e-3,
        format!(
            "{} jobs, {} uplinks per ToR, max deviation {worst:.2e}",
            r.result.jobs.len(),
            cfg.topology.uplinks_per_tor
        ),
    )
}

// ---------------------------------------------------------------------------

fn migration_overhead_is_small() -> bool {
    let mut cfg = desk();
    cfg.trace.loads = vec![0.7, 0.9, 1.0];
    cfg.trace.min_iterations = 1000;
    cfg.trace.max_iterations = 4000;
    let runs = run(&cfg, &[Algorithm::Monkeytree], 1);
    let migrations: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.result.migrations.iter().map(|m| m.duration_seconds))
        .collect();
    let shortest = migrations.iter().copied().fold(f64::INFINITY, f64::min);
    let worst = runs
        .iter()
        .flat_map(|r| r.result.jobs.iter().map(|j| j.downtime_seconds / j.ideal_seconds))
        .fold(0.0, f64::max);
    verdict(
        12,
        "every migration lasts >= 10 s; per-job downtime < 1% of ideal runtime",
        !migrations.is_empty() && shortest >= DEFAULT_REINIT_SECONDS && worst < 0.01,
        format!(
            "{} job migrations, shortest {shortest:.2} s, worst downtime {:.3}% of ideal",
            migrations.len(),
            worst * 100.0
        ),
    )
}

fn main() {
    let checks: [(&str, fn() -> bool); 12] = [
        ("sequential_fill_bounds_fragmentation", sequential_fill_bounds_fragmentation),
        ("solver_matches_exhaustive_search", solver_matches_exhaustive_search),
        ("edge_coloring_is_proper_and_minimal", edge_coloring_is_proper_and_minimal),
        ("quiescent_points_are_path_isolated", quiescent_points_are_path_isolated),
        ("maxmin_matches_oracle_and_conserves", maxmin_matches_oracle_and_conserves),
        ("identical_runs_hash_identically", identical_runs_hash_identically),
        ("slowdown_ordering_at_high_load", slowdown_ordering_at_high_load),
        ("defrags_need_few_moves", defrags_need_few_moves),
        ("solve_time_grows_with_moves", solve_time_grows_with_moves),
        ("threshold_sweep_is_monotone", threshold_sweep_is_monotone),
        ("spray_at_full_bisection_is_ideal", spray_at_full_bisection_is_ideal),
        ("migration_overhead_is_small", migration_overhead_is_small),
    ];
    // optional substring filters, as with the default test harness
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = checks
        .iter()
        .filter(|(name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())));
    let (mut ran, mut failed) = (0, 0);
    for (_, check) in selected {
        ran += 1;
        if !check() {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
