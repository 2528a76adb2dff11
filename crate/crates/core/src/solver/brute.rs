//! Exhaustive reference for small instances.
//!
//! Every stage takes every row (composition of its size over the racks,
//! bounded by capacity); the only pruning is on accumulated cost, capacity,
//! and threshold excess of stages already placed, all of which can only
//! grow as more stages are placed.

use super::SolverInstance;
use crate::error::{Error, Result};
use crate::fragmentation::is_fragmented;

/// Largest `racks * capacity * stages` accepted.
pub const BRUTE_FORCE_LIMIT: usize = 256;

fn compositions(n: usize, racks: usize, cap: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, u: usize, cap: usize, row: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if u + 1 == row.len() {
            if n <= cap {
                row[u] = n;
                out.push(row.clone());
            }
            return;
        }
        for x in 0..=n.min(cap) {
            row[u] = x;
            go(n - x, u + 1, cap, row, out);
        }
    }
    let mut out = Vec::new();
    go(n, 0, cap, &mut vec![0; racks], &mut out);
    out
}

struct Brute<'a> {
    inst: &'a SolverInstance,
    choices: Vec<Vec<(usize, Vec<usize>)>>,
    load: Vec<usize>,
    frag: Vec<usize>,
    best: usize,
}

impl Brute<'_> {
    fn go(&mut self, j: usize, cost: usize) {
        if j == self.choices.len() {
            self.best = self.best.min(cost);
            return;
        }
        let weight = self.inst.jobs[j].weight;
        for k in 0..self.choices[j].len() {
            let c = self.choices[j][k].0;
            if cost + c >= self.best {
                break;
            }
            let row = std::mem::take(&mut self.choices[j][k].1);
            let frag = is_fragmented(&row);
            let mut ok = true;
            for t in 0..row.len() {
                self.load[t] += row[t];
                if frag && row[t] > 0 {
                    self.frag[t] += weight;
                }
                ok &= self.load[t] <= self.inst.capacity && self.frag[t] <= self.inst.threshold;
            }
            if ok {
                self.go(j + 1, cost + c);
            }
            for t in 0..row.len() {
                self.load[t] -= row[t];
                if frag && row[t] > 0 {
                    self.frag[t] -= weight;
                }
            }
            self.choices[j][k].1 = row;
        }
    }
}

/// Minimum of `1/2 * sum |w - w0|` over every feasible placement.
pub fn brute_force_min_moves(inst: &SolverInstance) -> Result<usize> {
    inst.validate()?;
    let size = inst.racks * inst.capacity * inst.jobs.len();
    if size > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "racks*capacity*stages = {size} exceeds {BRUTE_FORCE_LIMIT}"
        )));
    }
    let choices = inst
        .jobs
        .iter()
        .map(|j| {
            let mut rows: Vec<(usize, Vec<usize>)> = compositions(j.size, inst.racks, inst.capacity)
                .into_iter()
                .map(|r| {
                    let moved = j.initial.iter().zip(&r).map(|(&a, &b)| a.abs_diff(b)).sum::<usize>();
                    (moved / 2, r)
                })
                .collect();
            rows.sort();
            rows
        })
        .collect();
    let mut b = Brute {
        inst,
        choices,
        load: vec![0; inst.racks],
        frag: vec![0; inst.racks],
        best: usize::MAX,
    };
    b.go(0, 0);
    if b.best == usize::MAX {
        return Err(Error::Infeasible("no feasible placement exists".into()));
    }
    Ok(b.best)
}
