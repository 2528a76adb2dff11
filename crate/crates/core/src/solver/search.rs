//! Iterative-deepening branch-and-bound over stage rows.
//!
//! A node holds a partial assignment: decided stages carry their final row,
//! undecided ones sit at their initial row. If some rack is violated, at
//! least one undecided stage touching it must change in a specific way
//! (leave the rack or become whole for the threshold; shrink there for
//! capacity), so the node branches on which stage is the first, in a fixed
//! order, to make that change and on its new row. Earlier candidates are
//! forbidden from making it, so branches are disjoint. Budgets grow from a
//! lower bound, which makes the first solution found optimal.

use std::time::Instant;

use super::{SolverInstance, SolverOptions};
use crate::fragmentation::is_fragmented;

const INF: usize = usize::MAX / 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cond {
    /// The stage holds fewer units on the rack than initially.
    Shrink,
    /// The stage no longer counts towards the rack's degree.
    Clear,
}

pub(super) struct Outcome {
    /// A solution cheaper than the supplied upper bound.
    pub best: Option<Vec<Vec<usize>>>,
    pub nodes: u64,
    /// The search finished without hitting a limit.
    pub complete: bool,
    pub lower_bound: usize,
}

pub(super) struct Search<'a> {
    inst: &'a SolverInstance,
    opts: &'a SolverOptions,
    start: Instant,
    rows: Vec<Vec<usize>>,
    decided: Vec<bool>,
    load: Vec<usize>,
    frag: Vec<usize>,
    decided_load: Vec<usize>,
    forbids: Vec<(usize, usize, Cond)>,
    nodes: u64,
    aborted: bool,
    found: Option<Vec<Vec<usize>>>,
}

fn satisfies(initial: &[usize], row: &[usize], rack: usize, cond: Cond) -> bool {
    match cond {
        Cond::Shrink => row[rack] < initial[rack],
        Cond::Clear => row[rack] == 0 || !is_fragmented(row),
    }
}

impl<'a> Search<'a> {
    pub fn new(inst: &'a SolverInstance, opts: &'a SolverOptions, start: Instant) -> Self {
        let rows = inst.initial_rows();
        let (load, frag) = inst.load_and_frag(&rows);
        Search {
            inst,
            opts,
            start,
            decided: vec![false; rows.len()],
            rows,
            load,
            frag,
            decided_load: vec![0; inst.racks],
            forbids: Vec::new(),
            nodes: 0,
            aborted: false,
            found: None,
        }
    }

    pub fn run(mut self, upper: Option<usize>) -> Outcome {
        let lb = self.lower_bound();
        let upper = upper.unwrap_or_else(|| self.inst.jobs.iter().map(|j| j.size).sum::<usize>() + 1);
        let mut budget = lb;
        while budget < upper {
            if self.dfs(budget) {
                return Outcome {
                    best: self.found,
                    nodes: self.nodes,
                    complete: true,
                    lower_bound: lb,
                };
            }
            if self.aborted {
                break;
            }
            budget += 1;
        }
        Outcome {
            best: None,
            nodes: self.nodes,
            complete: !self.aborted,
            lower_bound: lb.min(upper),
        }
    }

    fn set_row(&mut self, e: usize, row: Vec<usize>) -> Vec<usize> {
        let w = self.inst.jobs[e].weight;
        let old = std::mem::replace(&mut self.rows[e], row);
        let (of, nf) = (is_fragmented(&old), is_fragmented(&self.rows[e]));
        for t in 0..self.inst.racks {
            self.load[t] = self.load[t] + self.rows[e][t] - old[t];
            if of && old[t] > 0 {
                self.frag[t] -= w;
            }
            if nf && self.rows[e][t] > 0 {
                self.frag[t] += w;
            }
        }
        old
    }

    fn decide(&mut self, e: usize, row: Vec<usize>) -> Vec<usize> {
        for (t, &c) in row.iter().enumerate() {
            self.decided_load[t] += c;
        }
        self.decided[e] = true;
        self.set_row(e, row)
    }

    fn undecide(&mut self, e: usize, old: Vec<usize>) {
        let row = self.set_row(e, old);
        for (t, &c) in row.iter().enumerate() {
            self.decided_load[t] -= c;
        }
        self.decided[e] = false;
    }

    fn forbidden(&self, e: usize, t: usize, cond: Cond) -> bool {
        self.forbids.iter().any(|&(x, r, c)| x == e && r == t && c == cond)
    }

    /// Most overloaded rack first, then the largest threshold excess.
    fn pick_violation(&self) -> Option<(usize, Cond)> {
        let cap = self.inst.capacity;
        let over = (0..self.inst.racks)
            .filter(|&t| self.load[t] > cap)
            .max_by_key(|&t| (self.load[t] - cap, std::cmp::Reverse(t)));
        if let Some(t) = over {
            return Some((t, Cond::Shrink));
        }
        let lam = self.inst.threshold;
        (0..self.inst.racks)
            .filter(|&t| self.frag[t] > lam)
            .max_by_key(|&t| (self.frag[t] - lam, std::cmp::Reverse(t)))
            .map(|t| (t, Cond::Clear))
    }

    fn contributes(&self, e: usize, t: usize) -> bool {
        self.rows[e][t] > 0 && is_fragmented(&self.rows[e])
    }

    /// Cheapest way for an undecided stage to stop counting on rack `t`:
    /// empty the rack or gather everywhere else into its largest rack.
    fn clear_cost(&self, e: usize, t: usize) -> usize {
        let row = &self.rows[e];
        let n = self.inst.jobs[e].size;
        row[t].min(n - row.iter().copied().max().unwrap_or(0))
    }

    pub(super) fn lower_bound(&self) -> usize {
        let inst = self.inst;
        let mut cap_sum = 0;
        for t in 0..inst.racks {
            if self.load[t] > inst.capacity {
                let over = self.load[t] - inst.capacity;
                let movable: usize = (0..self.rows.len())
                    .filter(|&e| !self.decided[e] && !self.forbidden(e, t, Cond::Shrink))
                    .map(|e| self.rows[e][t])
                    .sum();
                if movable < over {
                    return INF;
                }
                cap_sum += over;
            }
        }
        let mut frag_best = 0;
        for t in 0..inst.racks {
            if self.frag[t] <= inst.threshold {
                continue;
            }
            let need = self.frag[t] - inst.threshold;
            let mut items: Vec<(usize, usize)> = (0..self.rows.len())
                .filter(|&e| !self.decided[e] && self.contributes(e, t) && !self.forbidden(e, t, Cond::Clear))
                .map(|e| (self.clear_cost(e, t), inst.jobs[e].weight))
                .collect();
            // fractional cover, best cost per ring first
            items.sort_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)));
            let (mut got, mut cost_num, mut bound) = (0usize, 0usize, None);
            for (c, d) in items {
                if got + d >= need {
                    // cost_num + c * (need - got) / d, rounded up
                    let rest = (c * (need - got)).div_ceil(d);
                    bound = Some(cost_num + rest);
                    break;
                }
                got += d;
                cost_num += c;
            }
            match bound {
                Some(b) => frag_best = frag_best.max(b),
                None => return INF,
            }
        }
        cap_sum.max(frag_best)
    }

    fn out_of_limits(&mut self) -> bool {
        if self.nodes > self.opts.node_limit
            || (self.nodes.is_multiple_of(1024) && self.start.elapsed() > self.opts.time_limit)
        {
            self.aborted = true;
        }
        self.aborted
    }

    fn dfs(&mut self, budget: usize) -> bool {
        self.nodes += 1;
        if self.out_of_limits() {
            return false;
        }
        let Some((t, cond)) = self.pick_violation() else {
            self.found = Some(self.rows.clone());
            return true;
        };
        if self.lower_bound() > budget {
            return false;
        }
        let mut cands: Vec<usize> = (0..self.rows.len())
            .filter(|&e| !self.decided[e] && !self.forbidden(e, t, cond))
            .filter(|&e| match cond {
                Cond::Shrink => self.rows[e][t] > 0,
                Cond::Clear => self.contributes(e, t),
            })
            .collect();
        cands.sort_by_key(|&e| (self.clear_cost(e, t), e));
        let pushed = self.forbids.len();
        let mut hit = false;
        for e in cands {
            for (cost, row) in self.alternatives(e, t, cond, budget) {
                let old = self.decide(e, row);
                let ok = self.dfs(budget - cost);
                if ok {
                    hit = true;
                    self.undecide(e, old);
                    break;
                }
                self.undecide(e, old);
                if self.aborted {
                    break;
                }
            }
            if hit || self.aborted {
                break;
            }
            self.forbids.push((e, t, cond));
        }
        self.forbids.truncate(pushed);
        hit
    }

    /// Racks interchangeable with each other at this node: same column for
    /// every stage, same decided load and not named by any constraint.
    fn symmetry_prev(&self, t_violated: usize) -> Vec<Option<usize>> {
        let racks = self.inst.racks;
        let named: Vec<bool> = (0..racks)
            .map(|u| u == t_violated || self.forbids.iter().any(|&(_, r, _)| r == u))
            .collect();
        let mut prev = vec![None; racks];
        for u in 0..racks {
            if named[u] {
                continue;
            }
            prev[u] = (0..u).rev().find(|&v| {
                !named[v]
                    && self.decided_load[v] == self.decided_load[u]
                    && self.rows.iter().all(|r| r[v] == r[u])
            });
        }
        prev
    }

    /// New rows for stage `e` meeting `cond` on rack `t`, cost within budget,
    /// cheapest first.
    fn alternatives(&self, e: usize, t: usize, cond: Cond, budget: usize) -> Vec<(usize, Vec<usize>)> {
        let inst = self.inst;
        let initial = &inst.jobs[e].initial;
        let size = inst.jobs[e].size;
        let cur = &self.rows[e];
        let cap: Vec<usize> = (0..inst.racks)
            .map(|u| inst.capacity.saturating_sub(self.decided_load[u]).min(size))
            .collect();
        let prev = self.symmetry_prev(t);
        // initial units available on racks u.. at no extra cost
        let mut tail_initial = vec![0; inst.racks + 1];
        for u in (0..inst.racks).rev() {
            tail_initial[u] = tail_initial[u + 1] + initial[u];
        }
        let mut out = Vec::new();
        let mut row = vec![0; inst.racks];
        enumerate(&mut EnumCtx {
            initial,
            cap: &cap,
            prev: &prev,
            tail_initial: &tail_initial,
            budget,
            out: &mut out,
        }, &mut row, 0, size, 0);
        out.retain(|(_, r)| {
            r != cur
                && satisfies(initial, r, t, cond)
                && !self
                    .forbids
                    .iter()
                    .any(|&(x, rack, c)| x == e && satisfies(initial, r, rack, c))
        });
        out.sort();
        out
    }
}

struct EnumCtx<'c> {
    initial: &'c [usize],
    cap: &'c [usize],
    prev: &'c [Option<usize>],
    tail_initial: &'c [usize],
    budget: usize,
    out: &'c mut Vec<(usize, Vec<usize>)>,
}

fn enumerate(ctx: &mut EnumCtx<'_>, row: &mut Vec<usize>, u: usize, left: usize, cost: usize) {
    let racks = row.len();
    if u == racks {
        if left == 0 {
            ctx.out.push((cost, row.clone()));
        }
        return;
    }
    // units beyond what the remaining racks held initially must be moved in
    let forced = left.saturating_sub(ctx.tail_initial[u]);
    if cost + forced > ctx.budget {
        return;
    }
    let mut hi = left.min(ctx.cap[u]);
    if let Some(p) = ctx.prev[u] {
        hi = hi.min(row[p]);
    }
    let rest_cap: usize = ctx.cap[u + 1..].iter().sum();
    let lo = left.saturating_sub(rest_cap);
    for x in (lo..=hi).rev() {
        let c = cost + x.saturating_sub(ctx.initial[u]);
        if c > ctx.budget {
            continue;
        }
        row[u] = x;
        enumerate(ctx, row, u + 1, left - x, c);
    }
    row[u] = 0;
}
