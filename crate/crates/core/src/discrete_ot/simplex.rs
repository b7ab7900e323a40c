//! Primal network simplex for the uncapacitated transportation problem.
//!
//! Nodes are the `n` sources, the `m` sinks and a root; real arc `e = i·m + j` joins
//! source `i` to sink `n + j`, and every node `u` owns one artificial arc to or from
//! the root (index `n·m + u`). The spanning-tree bookkeeping (thread order, subtree
//! sizes, last successors, strongly feasible leaving-arc rule, block-search pricing)
//! follows the LEMON network simplex.
//!
//! The objective is handled in two stages without a big-M constant. The first stage
//! minimizes the pair (artificial flow, transport cost) lexicographically, with a
//! separate potential vector for each component, so the artificial part stays in exact
//! small-integer arithmetic. The second stage freezes the artificial arcs at their
//! (zero) flow and prices real arcs on transport cost alone, which turns the final
//! tree into a dual-feasible basis for the original problem.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
const UP: i8 = 1;
const DOWN: i8 = -1;
const RC_RTOL: f64 = 64.0 * f64::EPSILON;
const MIN_BLOCK: usize = 10;
const BLOCK_FACTOR: f64 = 0.3;

/// Transport cost between source `i` and sink `j`.
pub trait CostFn: Sync {
    fn cost(&self, i: usize, j: usize) -> f64;
}

impl<F: Fn(usize, usize) -> f64 + Sync> CostFn for F {
    fn cost(&self, i: usize, j: usize) -> f64 {
        self(i, j)
    }
}

/// Row-major dense cost matrix.
pub struct DenseCost {
    pub m: usize,
    pub data: Vec<f64>,
}

impl CostFn for DenseCost {
    #[inline]
    fn cost(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// `(source, sink, mass)` for every arc with positive flow.
    pub flows: Vec<(usize, usize, f64)>,
    pub cost: f64,
    /// Kantorovich potentials with `f_i + g_j ≤ c_ij`.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub pivots: usize,
    /// Most negative reduced cost `c_ij − f_i − g_j` over all arcs.
    pub min_reduced_cost: f64,
    /// Mass left on artificial arcs (zero for balanced inputs, up to rounding).
    pub artificial_mass: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    Lexicographic,
    Final,
}

struct Simplex<'c, C: CostFn> {
    n: usize,
    m: usize,
    nodes: usize,
    root: usize,
    real: usize,
    supply: Vec<f64>,
    cost: &'c C,
    parent: Vec<usize>,
    pred: Vec<usize>,
    dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    flow: Vec<f64>,
    art_flow: Vec<f64>,
    art_cap: Vec<f64>,
    pi1: Vec<f64>,
    pi2: Vec<f64>,
    internal: Vec<usize>,
    ipos: Vec<usize>,
    touched: Vec<usize>,
    sink_pot1: Vec<f64>,
    sink_pot2: Vec<f64>,
    stage: Stage,
    next_arc: usize,
    dirty: Vec<usize>,
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

pub fn solve<C: CostFn>(a: &[f64], b: &[f64], cost: &C) -> Result<FlowSolution> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("both measures need at least one atom".into()));
    }
    if a.iter().chain(b).any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 * sa.max(sb).max(1.0) {
        return Err(Error::Imbalance { source_mass: sa, target_mass: sb });
    }
    let mut s = Simplex::new(a, b, cost);
    let limit = 20 * (n * m + n + m) + 10_000;
    let mut pivots = s.run(Stage::Lexicographic, limit)?;
    let residual = s.artificial_total();
    if residual > 1e-9 * sa.max(1.0) + (sa - sb).abs() {
        return Err(Error::Solver(format!("no feasible flow: {residual:.3e} mass left on artificial arcs")));
    }
    s.freeze_artificial();
    pivots += s.run(Stage::Final, limit)?;
    Ok(s.solution(pivots))
}

impl<'c, C: CostFn> Simplex<'c, C> {
    fn new(a: &[f64], b: &[f64], cost: &'c C) -> Self {
        let (n, m) = (a.len(), b.len());
        let nodes = n + m;
        let root = nodes;
        let mut supply: Vec<f64> = a.to_vec();
        supply.extend(b.iter().map(|v| -v));
        let mut s = Self {
            n,
            m,
            nodes,
            root,
            real: n * m,
            supply,
            cost,
            parent: vec![root; nodes + 1],
            pred: vec![NONE; nodes + 1],
            dir: vec![UP; nodes + 1],
            thread: vec![0; nodes + 1],
            rev_thread: vec![0; nodes + 1],
            succ_num: vec![1; nodes + 1],
            last_succ: vec![0; nodes + 1],
            flow: vec![0.0; nodes + 1],
            art_flow: vec![0.0; nodes],
            art_cap: vec![f64::INFINITY; nodes],
            pi1: vec![0.0; nodes + 1],
            pi2: vec![0.0; nodes + 1],
            internal: vec![root],
            ipos: vec![NONE; nodes + 1],
            touched: Vec::new(),
            sink_pot1: vec![0.0; m],
            sink_pot2: vec![0.0; m],
            stage: Stage::Lexicographic,
            next_arc: 0,
            dirty: Vec::new(),
            in_arc: NONE,
            join: NONE,
            u_in: NONE,
            v_in: NONE,
            u_out: NONE,
            delta: 0.0,
        };
        for u in 0..nodes {
            s.pred[u] = s.real + u;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.last_succ[u] = u;
            if s.supply[u] >= 0.0 {
                s.dir[u] = UP;
                s.flow[u] = s.supply[u];
                s.pi1[u] = -1.0;
            } else {
                s.dir[u] = DOWN;
                s.flow[u] = -s.supply[u];
                s.pi1[u] = 1.0;
            }
        }
        s.ipos[root] = 0;
        s.parent[root] = NONE;
        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = nodes + 1;
        s.last_succ[root] = root - 1;
        s
    }

    #[inline]
    fn ends(&self, e: usize) -> (usize, usize) {
        if e < self.real {
            (e / self.m, self.n + e % self.m)
        } else {
            let u = e - self.real;
            if self.supply[u] >= 0.0 {
                (u, self.root)
            } else {
                (self.root, u)
            }
        }
    }

    #[inline]
    fn cost1(&self, e: usize) -> f64 {
        if e < self.real {
            0.0
        } else {
            1.0
        }
    }

    #[inline]
    fn cost2(&self, e: usize) -> f64 {
        if e < self.real {
            self.cost.cost(e / self.m, e % self.m)
        } else {
            0.0
        }
    }

    #[inline]
    fn cap(&self, e: usize) -> f64 {
        if e < self.real {
            f64::INFINITY
        } else {
            self.art_cap[e - self.real]
        }
    }

    /// Potentials of `u`. Only nodes with children store them; a leaf's value follows
    /// from its parent through the tree arc.
    #[inline]
    fn pot(&self, u: usize) -> (f64, f64) {
        if self.ipos[u] != NONE {
            (self.pi1[u], self.pi2[u])
        } else {
            let p = self.parent[u];
            let e = self.pred[u];
            let d = self.dir[u] as f64;
            (self.pi1[p] - d * self.cost1(e), self.pi2[p] - d * self.cost2(e))
        }
    }

    #[inline]
    fn in_tree(&self, e: usize, s: usize, t: usize) -> bool {
        self.pred[s] == e || self.pred[t] == e
    }

    fn artificial_total(&self) -> f64 {
        (0..self.nodes).map(|u| if self.pred[u] == self.real + u { self.flow[u].abs() } else { self.art_flow[u].abs() }).sum()
    }

    fn freeze_artificial(&mut self) {
        for u in 0..self.nodes {
            let f = if self.pred[u] == self.real + u { self.flow[u] } else { self.art_flow[u] };
            self.art_cap[u] = f.max(0.0);
        }
        self.stage = Stage::Final;
    }

    fn run(&mut self, stage: Stage, limit: usize) -> Result<usize> {
        self.stage = stage;
        self.next_arc = 0;
        self.recompute_potentials();
        let recompute_every = (self.nodes + 1).max(1000);
        let mut pivots = 0usize;
        loop {
            if !self.find_entering() {
                self.recompute_potentials();
                if !self.find_entering() {
                    return Ok(pivots);
                }
            }
            self.find_join();
            if !self.find_leaving() {
                return Err(Error::Solver("unbounded pivot cycle".into()));
            }
            self.materialize_pivot_nodes();
            self.change_flow();
            self.update_tree();
            self.refresh_internal();
            self.update_potentials();
            pivots += 1;
            if pivots % recompute_every == 0 {
                self.recompute_potentials();
            }
            if pivots > limit {
                return Err(Error::Solver(format!("pivot limit {limit} exceeded")));
            }
        }
    }

    fn recompute_potentials(&mut self) {
        self.pi1[self.root] = 0.0;
        self.pi2[self.root] = 0.0;
        let mut u = self.thread[self.root];
        while u != self.root {
            let p = self.parent[u];
            let e = self.pred[u];
            let d = self.dir[u] as f64;
            self.pi1[u] = self.pi1[p] - d * self.cost1(e);
            self.pi2[u] = self.pi2[p] - d * self.cost2(e);
            u = self.thread[u];
        }
    }

    /// Block-search pricing; returns whether an improving arc was found.
    fn find_entering(&mut self) -> bool {
        let total = match self.stage {
            Stage::Lexicographic => self.real + self.nodes,
            Stage::Final => self.real,
        };
        let block = (((total as f64).sqrt() * BLOCK_FACTOR) as usize).max(MIN_BLOCK).min(total);
        for j in 0..self.m {
            let (a, b) = self.pot(self.n + j);
            self.sink_pot1[j] = a;
            self.sink_pot2[j] = b;
        }
        let mut best = NONE;
        let (mut best1, mut best2) = (0.0f64, 0.0f64);
        let mut cnt = block;
        let mut e = self.next_arc.min(total - 1);
        let (mut i, mut j) = if e < self.real { (e / self.m, e % self.m) } else { (0, 0) };
        let mut cached = NONE;
        let (mut ps1, mut ps2) = (0.0, 0.0);
        for _ in 0..total {
            let (s, t, c2, pt1, pt2) = if e < self.real {
                if cached != i {
                    (ps1, ps2) = self.pot(i);
                    cached = i;
                }
                (i, self.n + j, self.cost.cost(i, j), self.sink_pot1[j], self.sink_pot2[j])
            } else {
                let (s, t) = self.ends(e);
                let (a, b) = self.pot(s);
                let (c, d) = self.pot(t);
                (ps1, ps2) = (a, b);
                cached = NONE;
                (s, t, 0.0, c, d)
            };
            let rc2 = c2 + ps2 - pt2;
            let tol = RC_RTOL * (c2.abs() + ps2.abs() + pt2.abs());
            match self.stage {
                Stage::Final => {
                    if rc2 < -tol && rc2 < best2 && !self.in_tree(e, s, t) {
                        best = e;
                        best2 = rc2;
                    }
                }
                Stage::Lexicographic => {
                    let rc1 = self.cost1(e) + ps1 - pt1;
                    let negative = rc1 < -0.5 || (rc1.abs() < 0.5 && rc2 < -tol);
                    let improves = best == NONE || rc1 < best1 - 0.5 || ((rc1 - best1).abs() < 0.5 && rc2 < best2);
                    if negative && improves && !self.in_tree(e, s, t) {
                        best = e;
                        best1 = rc1;
                        best2 = rc2;
                    }
                }
            }
            e += 1;
            if e < self.real {
                j += 1;
                if j == self.m {
                    j = 0;
                    i += 1;
                }
            } else if e == total {
                e = 0;
                i = 0;
                j = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if best != NONE {
                    break;
                }
                cnt = block;
            }
        }
        if best == NONE {
            return false;
        }
        self.in_arc = best;
        self.next_arc = e;
        true
    }

    fn find_join(&mut self) {
        let (mut u, mut v) = self.ends(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving(&mut self) -> bool {
        let (first, second) = self.ends(self.in_arc);
        let mut delta = self.cap(self.in_arc);
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.dir[u] == DOWN { self.cap(e) - self.flow[u] } else { self.flow[u] };
            if d < delta {
                delta = d;
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        u = second;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.dir[u] == UP { self.cap(e) - self.flow[u] } else { self.flow[u] };
            if d <= delta {
                delta = d;
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }
        if result == 0 || !delta.is_finite() {
            return false;
        }
        self.delta = delta.max(0.0);
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        true
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        let (s, t) = self.ends(self.in_arc);
        if val > 0.0 {
            let mut u = s;
            while u != self.join {
                self.flow[u] -= self.dir[u] as f64 * val;
                u = self.parent[u];
            }
            u = t;
            while u != self.join {
                self.flow[u] += self.dir[u] as f64 * val;
                u = self.parent[u];
            }
        }
        let out_arc = self.pred[self.u_out];
        if out_arc >= self.real {
            let k = out_arc - self.real;
            let f = self.flow[self.u_out];
            let cap = self.art_cap[k];
            self.art_flow[k] = if f > 0.5 * cap && cap.is_finite() { cap } else { 0.0 };
        }
        self.flow[self.u_out] = 0.0;
    }

    fn update_tree(&mut self) {
        let in_arc = self.in_arc;
        let (u_in, v_in, u_out, join) = (self.u_in, self.v_in, self.u_out, self.join);
        let in_flow = self.delta;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];
        let in_source = self.ends(in_arc).0;

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.dir[u_in] = if u_in == in_source { UP } else { DOWN };
            self.flow[u_in] = in_flow;
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in { self.thread[old_last_succ] } else { self.thread[v_in] };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty.clear();
            self.dirty.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty.push(last);
                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;
                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;
                last = if self.last_succ[stem] == self.last_succ[par_stem] { self.rev_thread[par_stem] } else { self.last_succ[stem] };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;
            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for k in 0..self.dirty.len() {
                let u = self.dirty[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }
            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            let mut p = self.parent[u];
            while u != u_in {
                self.pred[u] = self.pred[p];
                self.dir[u] = -self.dir[p];
                self.flow[u] = self.flow[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
                p = self.parent[u];
            }
            self.pred[u_in] = in_arc;
            self.dir[u_in] = if u_in == in_source { UP } else { DOWN };
            self.flow[u_in] = in_flow;
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }
        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }
        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    /// Store explicit potentials for every node whose leaf status may change in this pivot.
    fn materialize_pivot_nodes(&mut self) {
        self.touched.clear();
        let mut u = self.u_in;
        loop {
            self.touched.push(u);
            if u == self.u_out {
                break;
            }
            u = self.parent[u];
        }
        self.touched.push(self.v_in);
        self.touched.push(self.parent[self.u_out]);
        for k in 0..self.touched.len() {
            let c = self.touched[k];
            let (a, b) = self.pot(c);
            self.pi1[c] = a;
            self.pi2[c] = b;
        }
    }

    fn refresh_internal(&mut self) {
        for k in 0..self.touched.len() {
            let c = self.touched[k];
            let has_children = self.succ_num[c] > 1;
            if has_children && self.ipos[c] == NONE {
                self.ipos[c] = self.internal.len();
                self.internal.push(c);
            } else if !has_children && self.ipos[c] != NONE {
                let pos = self.ipos[c];
                let last = *self.internal.last().expect("root is internal");
                self.internal.swap_remove(pos);
                if last != c {
                    self.ipos[last] = pos;
                }
                self.ipos[c] = NONE;
            }
        }
    }

    fn update_potentials(&mut self) {
        let (u_in, v_in, e) = (self.u_in, self.v_in, self.in_arc);
        let d = self.dir[u_in] as f64;
        let sigma1 = self.pi1[v_in] - self.pi1[u_in] - d * self.cost1(e);
        let sigma2 = self.pi2[v_in] - self.pi2[u_in] - d * self.cost2(e);
        if self.succ_num[u_in] <= 8 * self.internal.len() {
            let end = self.thread[self.last_succ[u_in]];
            let mut u = u_in;
            while u != end {
                self.pi1[u] += sigma1;
                self.pi2[u] += sigma2;
                u = self.thread[u];
            }
        } else {
            for k in 0..self.internal.len() {
                let v = self.internal[k];
                let mut a = v;
                while a != NONE && a != u_in {
                    a = self.parent[a];
                }
                if a == u_in {
                    self.pi1[v] += sigma1;
                    self.pi2[v] += sigma2;
                }
            }
        }
    }

    /// Rebuild tree-arc flows from subtree supply sums in double-double arithmetic,
    /// clearing the rounding residue that pivoting leaves on degenerate arcs.
    fn exact_tree_flows(&mut self) {
        let mut acc: Vec<(f64, f64)> = (0..=self.nodes)
            .map(|u| {
                if u == self.root {
                    return (0.0, 0.0);
                }
                let s = self.supply[u];
                let a = if self.pred[u] == self.real + u { 0.0 } else { self.art_flow[u] };
                if s >= 0.0 {
                    two_sum(s, -a)
                } else {
                    two_sum(s, a)
                }
            })
            .collect();
        let mut u = self.rev_thread[self.root];
        while u != self.root {
            let p = self.parent[u];
            let (hi, lo) = acc[u];
            let f = hi + lo;
            let f = if self.dir[u] == UP { f } else { -f };
            self.flow[u] = if f > 0.0 { f } else { 0.0 };
            acc[p] = dd_add(acc[p], (hi, lo));
            u = self.rev_thread[u];
        }
    }

    fn solution(&mut self, pivots: usize) -> FlowSolution {
        self.recompute_potentials();
        self.exact_tree_flows();
        let mut flows = Vec::new();
        let mut cost = (0.0, 0.0);
        for u in 0..self.nodes {
            let e = self.pred[u];
            if e < self.real && self.flow[u] > 0.0 {
                let (i, j) = (e / self.m, e % self.m);
                cost = dd_add(cost, two_prod(self.flow[u], self.cost.cost(i, j)));
                flows.push((i, j, self.flow[u]));
            }
        }
        let cost = cost.0 + cost.1;
        flows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let f: Vec<f64> = (0..self.n).map(|i| -self.pi2[i]).collect();
        let g: Vec<f64> = (0..self.m).map(|j| self.pi2[self.n + j]).collect();
        let mut min_rc = f64::INFINITY;
        for i in 0..self.n {
            for j in 0..self.m {
                min_rc = min_rc.min(self.cost.cost(i, j) - f[i] - g[j]);
            }
        }
        FlowSolution { flows, cost, f, g, pivots, min_reduced_cost: min_rc, artificial_mass: self.artificial_total() }
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn dd_add(x: (f64, f64), y: (f64, f64)) -> (f64, f64) {
    let (s, e) = two_sum(x.0, y.0);
    let e = e + x.1 + y.1;
    let hi = s + e;
    (hi, e - (hi - s))
}
