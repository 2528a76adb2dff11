//! Greedy re-unification used as the starting incumbent.

use super::{row_cost, SolverInstance};
use crate::fragmentation::{is_fragmented, sequential_counts};

/// Sum of threshold excess over all racks.
fn excess(inst: &SolverInstance, rows: &[Vec<usize>]) -> usize {
    let (_, frag) = inst.load_and_frag(rows);
    frag.iter().map(|&f| f.saturating_sub(inst.threshold)).sum()
}

/// Candidate rows for stage `e` that stop it counting on rack `t`.
fn options(inst: &SolverInstance, rows: &[Vec<usize>], load: &[usize], e: usize, t: usize) -> Vec<Vec<usize>> {
    let row = &rows[e];
    let n = inst.jobs[e].size;
    let free = |u: usize| inst.capacity - load[u] + row[u];
    let mut out = Vec::new();
    // gather the whole stage on one rack
    for u in 0..inst.racks {
        if free(u) >= n {
            let mut r = vec![0; inst.racks];
            r[u] = n;
            out.push(r);
        }
    }
    // push the units on `t` to racks the stage already uses, then elsewhere
    let mut r = row.clone();
    let mut left = r[t];
    r[t] = 0;
    let mut order: Vec<usize> = (0..inst.racks).filter(|&u| u != t).collect();
    order.sort_by_key(|&u| (row[u] == 0, std::cmp::Reverse(free(u)), u));
    for u in order {
        let room = inst.capacity - load[u];
        let k = left.min(room);
        r[u] += k;
        left -= k;
    }
    if left == 0 {
        out.push(r);
    }
    out
}

fn greedy(inst: &SolverInstance) -> Option<Vec<Vec<usize>>> {
    let mut rows = inst.initial_rows();
    let limit = 4 * inst.jobs.len() * inst.racks + 4;
    for _ in 0..limit {
        let (load, frag) = inst.load_and_frag(&rows);
        let Some(t) = (0..inst.racks)
            .filter(|&t| frag[t] > inst.threshold)
            .max_by_key(|&t| (frag[t], std::cmp::Reverse(t)))
        else {
            return Some(rows);
        };
        let current = excess(inst, &rows);
        let mut best: Option<((usize, isize, usize), Vec<usize>)> = None;
        for e in 0..rows.len() {
            if rows[e][t] == 0 || !is_fragmented(&rows[e]) {
                continue;
            }
            for cand in options(inst, &rows, &load, e, t) {
                let old = std::mem::replace(&mut rows[e], cand);
                let x = excess(inst, &rows);
                let delta = row_cost(&inst.jobs[e].initial, &rows[e]) as isize
                    - row_cost(&inst.jobs[e].initial, &old) as isize;
                let cand = std::mem::replace(&mut rows[e], old);
                let key = (x, delta, e);
                if x < current && best.as_ref().is_none_or(|b| key < b.0) {
                    best = Some((key, cand));
                }
            }
        }
        let ((_, _, e), row) = best?;
        rows[e] = row;
    }
    None
}

/// Left-to-right refill of every stage, ordered by its leftmost rack.
fn sequential(inst: &SolverInstance) -> Option<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..inst.jobs.len()).collect();
    order.sort_by_key(|&e| (inst.jobs[e].initial.iter().position(|&c| c > 0), e));
    let sizes: Vec<usize> = order.iter().map(|&e| inst.jobs[e].size).collect();
    let filled = sequential_counts(&sizes, inst.racks, inst.capacity).ok()?;
    let mut rows = vec![Vec::new(); inst.jobs.len()];
    for (k, &e) in order.iter().enumerate() {
        rows[e] = filled[k].clone();
    }
    inst.violations(&rows).is_empty().then_some(rows)
}

/// A feasible placement, cheaper of greedy repair and sequential refill.
pub fn greedy_incumbent(inst: &SolverInstance) -> Option<Vec<Vec<usize>>> {
    let a = greedy(inst).filter(|r| inst.violations(r).is_empty());
    let b = sequential(inst);
    match (a, b) {
        (Some(a), Some(b)) => Some(if inst.move_cost(&b) < inst.move_cost(&a) { b } else { a }),
        (a, b) => a.or(b),
    }
}
