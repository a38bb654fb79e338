//! Primal network simplex for uncapacitated min-cost flow with integer supplies.
//!
//! Spanning tree stored with parent, thread and successor-count arrays; block
//! search pricing; leaving arc chosen by the strongly feasible tie-breaking rule
//! so degenerate pivots cannot cycle. Arcs may be added between solves.

const NONE: usize = usize::MAX;
const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    /// Positive flow remained on an artificial arc.
    Infeasible,
    IterationLimit,
}

pub struct NetworkSimplex {
    n: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<i64>,
    state: Vec<i8>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// +1 when the tree arc above `u` leaves `u`, −1 when it enters.
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pi: Vec<f64>,
    dirty_revs: Vec<usize>,
    next_arc: usize,
    eps: f64,
    pub pivots: usize,
}

struct Pivot {
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: i64,
}

impl NetworkSimplex {
    /// `supply` must sum to zero. Arcs are added with [`add_arc`](Self::add_arc).
    pub fn new(supply: &[i64], cost_scale: f64) -> Self {
        let n = supply.len();
        debug_assert_eq!(supply.iter().sum::<i64>(), 0);
        let root = n;
        let scale = cost_scale.max(1e-300);
        let art = (n as f64 + 1.0) * scale * 4.0;
        let mut ns = NetworkSimplex {
            n,
            src: Vec::with_capacity(4 * n),
            dst: Vec::with_capacity(4 * n),
            cost: Vec::with_capacity(4 * n),
            flow: Vec::with_capacity(4 * n),
            state: Vec::with_capacity(4 * n),
            parent: vec![NONE; n + 1],
            pred: vec![NONE; n + 1],
            pred_dir: vec![1; n + 1],
            thread: vec![0; n + 1],
            rev_thread: vec![0; n + 1],
            succ_num: vec![1; n + 1],
            last_succ: vec![0; n + 1],
            pi: vec![0.0; n + 1],
            dirty_revs: Vec::new(),
            next_arc: 0,
            eps: 1e-11 * scale,
            pivots: 0,
        };
        ns.thread[root] = if n > 0 { 0 } else { root };
        ns.rev_thread[0] = root;
        ns.succ_num[root] = n + 1;
        ns.last_succ[root] = if n > 0 { n - 1 } else { root };
        // Artificial arcs occupy ids 0..n.
        for (u, &s) in supply.iter().enumerate() {
            ns.parent[u] = root;
            ns.pred[u] = u;
            ns.thread[u] = u + 1;
            ns.rev_thread[u + 1] = u;
            ns.last_succ[u] = u;
            ns.state.push(STATE_TREE);
            if s >= 0 {
                ns.pred_dir[u] = 1;
                ns.src.push(u);
                ns.dst.push(root);
                ns.cost.push(0.0);
                ns.flow.push(s);
            } else {
                ns.pred_dir[u] = -1;
                ns.pi[u] = art;
                ns.src.push(root);
                ns.dst.push(u);
                ns.cost.push(art);
                ns.flow.push(-s);
            }
        }
        ns
    }

    pub fn add_arc(&mut self, u: usize, v: usize, c: f64) {
        self.src.push(u);
        self.dst.push(v);
        self.cost.push(c);
        self.flow.push(0);
        self.state.push(STATE_LOWER);
    }

    pub fn arc_count(&self) -> usize {
        self.src.len() - self.n
    }

    fn find_entering(&mut self) -> Option<usize> {
        let m = self.src.len() - self.n;
        if m == 0 {
            return None;
        }
        let block = ((m as f64).sqrt() as usize).max(10).min(m);
        let mut best = None;
        let mut min = -self.eps;
        let mut cnt = block;
        let mut e = self.n + self.next_arc;
        let end = self.src.len();
        for _ in 0..m {
            let rc = self.state[e] as f64 * (self.cost[e] + self.pi[self.src[e]] - self.pi[self.dst[e]]);
            if rc < min {
                min = rc;
                best = Some(e);
            }
            e += 1;
            if e == end {
                e = self.n;
            }
            cnt -= 1;
            if cnt == 0 {
                if best.is_some() {
                    self.next_arc = e - self.n;
                    return best;
                }
                cnt = block;
            }
        }
        best
    }

    fn find_join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        u
    }

    fn find_leaving(&self, in_arc: usize, join: usize) -> Option<Pivot> {
        let first = self.src[in_arc];
        let second = self.dst[in_arc];
        let mut delta = i64::MAX;
        let mut u_out = NONE;
        let mut result = 0;
        let mut u = first;
        while u != join {
            if self.pred_dir[u] == 1 {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        u = second;
        while u != join {
            if self.pred_dir[u] == -1 {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 0 {
            return None;
        }
        let (u_in, v_in) = if result == 1 { (first, second) } else { (second, first) };
        Some(Pivot { in_arc, join, u_in, v_in, u_out, delta })
    }

    fn change_flow(&mut self, p: &Pivot) {
        if p.delta > 0 {
            let val = p.delta;
            self.flow[p.in_arc] += val;
            let mut u = self.src[p.in_arc];
            while u != p.join {
                self.flow[self.pred[u]] -= self.pred_dir[u] as i64 * val;
                u = self.parent[u];
            }
            u = self.dst[p.in_arc];
            while u != p.join {
                self.flow[self.pred[u]] += self.pred_dir[u] as i64 * val;
                u = self.parent[u];
            }
        }
        self.state[p.in_arc] = STATE_TREE;
        self.state[self.pred[p.u_out]] = STATE_LOWER;
    }

    fn update_tree(&mut self, p: &Pivot) {
        let (u_in, v_in, u_out, join, in_arc) = (p.u_in, p.v_in, p.u_out, p.join, p.in_arc);
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.src[in_arc] { 1 } else { -1 };
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
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);
                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;
                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;
                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
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
            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }
            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let par = self.parent[u];
                self.pred[u] = self.pred[par];
                self.pred_dir[u] = -self.pred_dir[par];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[par];
                self.succ_num[u] = tmp_sc;
                self.last_succ[par] = tmp_ls;
                u = par;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.src[in_arc] { 1 } else { -1 };
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
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
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

    fn update_potential(&mut self, p: &Pivot) {
        let sigma = self.pi[p.v_in] - self.pi[p.u_in] - self.pred_dir[p.u_in] as f64 * self.cost[p.in_arc];
        let end = self.thread[self.last_succ[p.u_in]];
        let mut u = p.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    /// Pivots until no arc has negative reduced cost.
    pub fn solve(&mut self, max_pivots: usize) -> Status {
        while let Some(e) = self.find_entering() {
            if self.pivots >= max_pivots {
                return Status::IterationLimit;
            }
            let join = self.find_join(self.src[e], self.dst[e]);
            let Some(p) = self.find_leaving(e, join) else {
                return Status::IterationLimit;
            };
            self.change_flow(&p);
            self.update_tree(&p);
            self.update_potential(&p);
            self.pivots += 1;
        }
        if self.flow[..self.n].iter().zip(&self.state).any(|(&f, &s)| f > 0 && s == STATE_TREE) {
            Status::Infeasible
        } else {
            Status::Optimal
        }
    }

    /// Total cost `Σ flow·cost` over real arcs.
    pub fn total_cost(&self) -> f64 {
        (self.n..self.src.len()).filter(|&e| self.flow[e] != 0).map(|e| self.flow[e] as f64 * self.cost[e]).sum()
    }

    /// Node potentials; `rc(u→v) = c + π_u − π_v ≥ 0` at optimality.
    pub fn potentials(&self) -> &[f64] {
        &self.pi[..self.n]
    }

    pub fn tolerance(&self) -> f64 {
        self.eps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive min-cost for a tiny transportation instance via Bellman-Ford cycle canceling.
    fn brute(supply: &[i64], arcs: &[(usize, usize, f64)]) -> f64 {
        // Successive shortest paths on a graph with super source/sink.
        let n = supply.len();
        let mut sup = supply.to_vec();
        let mut flow = vec![0i64; arcs.len()];
        let mut total = 0.0;
        loop {
            let Some(s) = (0..n).find(|&u| sup[u] > 0) else { break };
            let mut dist = vec![f64::INFINITY; n];
            let mut prev: Vec<Option<(usize, bool)>> = vec![None; n];
            dist[s] = 0.0;
            for _ in 0..n {
                for (i, &(u, v, c)) in arcs.iter().enumerate() {
                    if dist[u] + c < dist[v] - 1e-12 {
                        dist[v] = dist[u] + c;
                        prev[v] = Some((i, true));
                    }
                    if flow[i] > 0 && dist[v] - c < dist[u] - 1e-12 {
                        dist[u] = dist[v] - c;
                        prev[u] = Some((i, false));
                    }
                }
            }
            let t = (0..n).filter(|&u| sup[u] < 0 && dist[u].is_finite()).min_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap();
            let mut amt = sup[s].min(-sup[t]);
            let mut v = t;
            while v != s {
                let (i, fwd) = prev[v].unwrap();
                if !fwd {
                    amt = amt.min(flow[i]);
                }
                v = if fwd { arcs[i].0 } else { arcs[i].1 };
            }
            let mut v = t;
            while v != s {
                let (i, fwd) = prev[v].unwrap();
                if fwd {
                    flow[i] += amt;
                } else {
                    flow[i] -= amt;
                }
                v = if fwd { arcs[i].0 } else { arcs[i].1 };
            }
            sup[s] -= amt;
            sup[t] += amt;
            total += amt as f64 * dist[t];
        }
        total
    }

    #[test]
    fn matches_successive_shortest_paths() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(2..9);
            let mut supply: Vec<i64> = (0..n - 1).map(|_| rng.gen_range(-20..=20)).collect();
            supply.push(-supply.iter().sum::<i64>());
            let mut arcs = Vec::new();
            for u in 0..n {
                for v in 0..n {
                    if u != v {
                        arcs.push((u, v, rng.gen_range(0.0..5.0f64).floor()));
                    }
                }
            }
            let mut ns = NetworkSimplex::new(&supply, 5.0);
            for &(u, v, c) in &arcs {
                ns.add_arc(u, v, c);
            }
            assert_eq!(ns.solve(100_000), Status::Optimal);
            let b = brute(&supply, &arcs);
            assert!((ns.total_cost() - b).abs() < 1e-9, "{} vs {b}", ns.total_cost());
            let pi = ns.potentials();
            for &(u, v, c) in &arcs {
                assert!(c + pi[u] - pi[v] >= -1e-9);
            }
        }
    }
}
