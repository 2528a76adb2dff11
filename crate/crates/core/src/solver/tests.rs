use super::*;

fn inst(racks: usize, capacity: usize, threshold: usize, rows: &[(usize, &[usize])]) -> SolverInstance {
    SolverInstance {
        racks,
        capacity,
        threshold,
        jobs: rows
            .iter()
            .enumerate()
            .map(|(i, (w, r))| SolverJob {
                id: i as u64,
                size: r.iter().sum(),
                weight: *w,
                initial: r.to_vec(),
            })
            .collect(),
    }
}

#[test]
fn compliant_instance_needs_no_moves() {
    let i = inst(3, 4, 2, &[(1, &[2, 1, 0]), (1, &[0, 3, 1])]);
    let p = solve(&i, &SolverOptions::default()).unwrap();
    assert_eq!(p.move_count, 0);
    assert_eq!(p.target, i.initial_rows());
    assert_eq!(brute_force_min_moves(&i).unwrap(), 0);
}

#[test]
fn split_pair_reunified_with_one_move() {
    // threshold 0 forbids any fragmentation; an empty rack is available
    let i = inst(3, 2, 0, &[(1, &[1, 1, 0])]);
    assert_eq!(brute_force_min_moves(&i).unwrap(), 1);
    assert_eq!(solve(&i, &SolverOptions::default()).unwrap().move_count, 1);
}

/// Eight racks of four hosts, five jobs of sizes 6, 4, 6, 4, 6 interleaved
/// so that several racks carry three fragmented jobs.
fn motivating_instance() -> SolverInstance {
    inst(
        8,
        4,
        2,
        &[
            (1, &[2, 1, 0, 1, 0, 2, 0, 0]),
            (1, &[1, 0, 1, 0, 1, 0, 1, 0]),
            (1, &[0, 2, 1, 1, 1, 0, 0, 1]),
            (1, &[1, 0, 0, 1, 0, 0, 2, 0]),
            (1, &[0, 1, 1, 0, 1, 1, 0, 2]),
        ],
    )
}

#[test]
fn motivating_instance_small_optimum() {
    let i = motivating_instance();
    i.validate().unwrap();
    assert!(!i.violations(&i.initial_rows()).is_empty());
    let p = solve(&i, &SolverOptions::default()).unwrap();
    assert!(p.stats.optimal);
    assert!(p.move_count < 10, "{}", p.move_count);
    assert_eq!(p.move_count, brute_force_min_moves(&i).unwrap());
    check_plan(&i, &p);
}

fn check_plan(i: &SolverInstance, p: &MigrationPlan) {
    assert!(i.violations(&p.target).is_empty());
    for (j, row) in i.jobs.iter().zip(&p.target) {
        assert_eq!(row.iter().sum::<usize>(), j.size);
    }
    let moved: usize = p.moves.iter().map(|m| m.count).sum();
    assert_eq!(moved, p.move_count);
    let l1: usize = i
        .jobs
        .iter()
        .zip(&p.target)
        .flat_map(|(j, r)| j.initial.iter().zip(r).map(|(&a, &b)| a.abs_diff(b)))
        .sum();
    assert_eq!(2 * p.move_count, l1);
    assert_eq!(MigrationPlan::apply_moves(i, &p.moves), p.target);
}

fn random_instance(seed: u64, racks: usize, capacity: usize, max_jobs: usize, max_weight: usize) -> SolverInstance {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut free: Vec<usize> = vec![capacity; racks];
    let n_jobs = rng.gen_range(1..=max_jobs);
    let mut jobs = Vec::new();
    for id in 0..n_jobs {
        let mut row = vec![0; racks];
        for t in 0..racks {
            if free[t] > 0 && rng.gen_bool(0.5) {
                let k = rng.gen_range(1..=free[t]);
                row[t] = k;
                free[t] -= k;
            }
        }
        let size: usize = row.iter().sum();
        if size == 0 {
            continue;
        }
        jobs.push(SolverJob {
            id: id as u64,
            size,
            weight: rng.gen_range(1..=max_weight),
            initial: row,
        });
    }
    let threshold = 2 * jobs.iter().map(|j| j.weight).max().unwrap_or(1);
    SolverInstance {
        racks,
        capacity,
        threshold: threshold + rng.gen_range(0..2),
        jobs,
    }
}

#[test]
fn random_three_rack_instances_match_oracle() {
    for seed in 0..500 {
        let i = random_instance(seed, 3, 4, 5, 2);
        let p = solve(&i, &SolverOptions::default()).unwrap();
        let b = brute_force_min_moves(&i).unwrap();
        assert_eq!(p.move_count, b, "seed {seed}: {i:?}");
        assert!(p.stats.optimal);
        check_plan(&i, &p);
    }
}

#[test]
fn relaxing_threshold_never_costs_more() {
    for seed in 0..200 {
        let mut i = random_instance(1000 + seed, 4, 3, 5, 1);
        i.threshold = 2;
        let mut last = usize::MAX;
        for lam in 2..6 {
            i.threshold = lam;
            let m = solve(&i, &SolverOptions::default()).unwrap().move_count;
            assert!(m <= last);
            last = m;
        }
    }
}

#[test]
fn infeasible_is_reported() {
    // three pairs over two racks of three: one pair must stay split
    let i = inst(2, 3, 0, &[(1, &[1, 1]), (1, &[1, 1]), (1, &[1, 1])]);
    assert!(matches!(solve(&i, &SolverOptions::default()), Err(Error::Infeasible(_))));
    assert!(matches!(brute_force_min_moves(&i), Err(Error::Infeasible(_))));
}

#[test]
fn oracle_size_guard() {
    let i = inst(16, 8, 2, &[(1, &[1; 16]), (1, &[1; 16]), (1, &[1; 16])]);
    assert!(matches!(brute_force_min_moves(&i), Err(Error::TooLarge(_))));
}

#[test]
fn node_limit_returns_incumbent() {
    let i = motivating_instance();
    let opts = SolverOptions {
        node_limit: 1,
        ..SolverOptions::default()
    };
    let p = solve(&i, &opts).unwrap();
    assert!(i.violations(&p.target).is_empty());
    assert!(p.move_count >= brute_force_min_moves(&i).unwrap());
}

#[test]
fn instance_json_round_trip() {
    let i = motivating_instance();
    let back = SolverInstance::from_json(&i.to_json().unwrap()).unwrap();
    assert_eq!(back, i);
    assert!(SolverInstance::from_json("{\"racks\":1}").is_err());
}
