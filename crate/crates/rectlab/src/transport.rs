//! Transportation coefficients against lines and k-spike measures, and the modified density.
//!
//! For a ball `B(z,r)` the coefficient is `(1/r²)·W`, where `W` is the optimal
//! value of an uncapacitated transshipment between the signed masses
//! `φ(|x−z|/r)(μ − cν)` with Euclidean costs and a ground node reachable from
//! each atom at cost `4r − |x−z|`. This is the dual of the Lipschitz test
//! function problem over the atom set; the feasible set of test functions is
//! symmetric, so the absolute value needs no second solve.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{GridIndex, ValueTree};
use crate::measure::{self, density, discretize_model, Atom, Ball, DiscreteMeasure, Line, Point, SpikeMeasure};
use crate::netsimplex::{NetworkSimplex, Status};

/// Cutoff `φ`: 1 on `[0,3)`, `4 − t` on `[3,4)`, 0 beyond.
pub fn phi(t: f64) -> f64 {
    if t < 3.0 {
        1.0
    } else if t < 4.0 {
        4.0 - t
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Witness {
    Line(Line),
    Spike(SpikeMeasure),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Optimal,
    /// No atoms carried signed mass or the model had no mass in the window.
    Degenerate,
    InfeasibleGuard,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::Degenerate => "degenerate",
            SolverStatus::InfeasibleGuard => "infeasible-guard",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaResult {
    pub value: f64,
    pub witness: Option<Witness>,
    /// `c_{μ,ν}`.
    pub normalization: f64,
    pub status: SolverStatus,
    /// Bound on `|value − α|` coming from the quadrature of the model and from any binning of `μ`.
    pub tolerance: f64,
    /// Transport nodes in the final solve.
    pub nodes: usize,
}

impl AlphaResult {
    /// Whether the true coefficient can be `≤ threshold` given the tolerance.
    pub fn admits(&self, threshold: f64) -> bool {
        self.value - self.tolerance <= threshold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    /// Guard on merged transport nodes for an exact solve.
    pub n_max: usize,
    /// Node budget for evaluations inside a parameter search.
    pub search_nodes: usize,
    /// Model quadrature spacing; by default derived from `μ` and `r`.
    pub model_spacing: Option<f64>,
    pub angle_seeds: usize,
    pub angle_tol: f64,
    /// Geometric levels of the spike vertex offset grid in `(0, 8r]`.
    pub spike_levels: usize,
    /// Nearest-neighbour arcs per node in the initial sparse network.
    pub knn: usize,
    /// Cap on `α` tests inside the modified density search.
    pub md_max_tests: usize,
    /// Cap on candidate centers inside the modified density search.
    pub md_centers: usize,
    pub md_radii_per_octave: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            n_max: 3000,
            search_nodes: 500,
            model_spacing: None,
            angle_seeds: 64,
            angle_tol: 1e-4,
            spike_levels: 9,
            knn: 10,
            md_max_tests: 60,
            md_centers: 400,
            md_radii_per_octave: 16,
        }
    }
}

/// `c_{μ,ν}` on `B`, or 0 if `ν` has no `φ`-mass there.
pub fn normalization_c(mu: &DiscreteMeasure, nu: &DiscreteMeasure, b: &Ball) -> f64 {
    let num = phi_mass(mu.atoms(), b);
    let den = phi_mass(nu.atoms(), b);
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn phi_mass(atoms: &[Atom], b: &Ball) -> f64 {
    atoms.iter().map(|a| phi(a.pos.dist(b.center) / b.radius) * a.w).sum()
}

/// Optimal transshipment cost `W` for signed masses at `pts`; returns `(W, nodes)`.
fn transport_cost(z: Point, r: f64, pts: &[Point], g: &[f64], cfg: &TransportConfig) -> Result<(f64, usize)> {
    // Merge coincident positions.
    let q = 1e-12 * r;
    let mut slot: HashMap<(i64, i64), usize> = HashMap::with_capacity(pts.len());
    let mut pos: Vec<Point> = Vec::new();
    let mut mass: Vec<f64> = Vec::new();
    for (p, &m) in pts.iter().zip(g) {
        if m == 0.0 {
            continue;
        }
        let key = (((p.x - z.x) / q).round() as i64, ((p.y - z.y) / q).round() as i64);
        match slot.get(&key) {
            Some(&i) => mass[i] += m,
            None => {
                slot.insert(key, pos.len());
                pos.push(*p);
                mass.push(m);
            }
        }
    }
    let total: f64 = mass.iter().map(|m| m.abs()).sum();
    if total == 0.0 {
        return Ok((0.0, 0));
    }
    let scale = 2f64.powi(40) / total;
    let mut keep_pos = Vec::with_capacity(pos.len());
    let mut supply = Vec::with_capacity(pos.len() + 1);
    for (p, m) in pos.iter().zip(&mass) {
        let s = (m * scale).round() as i64;
        if s != 0 {
            keep_pos.push(*p);
            supply.push(s);
        }
    }
    let n = keep_pos.len();
    if n == 0 {
        return Ok((0.0, 0));
    }
    if n > cfg.n_max {
        return Err(Error::TooManyAtoms { nodes: n, limit: cfg.n_max });
    }
    let ground = n;
    supply.push(-supply.iter().sum::<i64>());
    let bound: Vec<f64> = keep_pos.iter().map(|p| (4.0 * r - p.dist(z)).max(0.0)).collect();

    let mut ns = NetworkSimplex::new(&supply, 8.0 * r);
    for (u, &b) in bound.iter().enumerate() {
        ns.add_arc(u, ground, b);
        ns.add_arc(ground, u, b);
    }
    if n > 1 {
        let idx = GridIndex::new(&keep_pos);
        let k = cfg.knn.min(n - 1);
        for u in 0..n {
            for (d, v) in idx.knn(u, k) {
                ns.add_arc(u, v, d);
            }
        }
        // Nearest nodes of the opposite sign carry most of the optimal flow.
        let (plus, minus): (Vec<usize>, Vec<usize>) = (0..n).partition(|&u| supply[u] > 0);
        if !plus.is_empty() && !minus.is_empty() {
            let pp: Vec<Point> = plus.iter().map(|&u| keep_pos[u]).collect();
            let mp: Vec<Point> = minus.iter().map(|&u| keep_pos[u]).collect();
            let k2 = cfg.knn.div_ceil(2);
            for (from, to, fp, tp) in [(&plus, &minus, &pp, &mp), (&minus, &plus, &mp, &pp)] {
                let idx = GridIndex::new(tp);
                for (i, &u) in from.iter().enumerate() {
                    for (d, j) in idx.query(fp[i], k2.min(to.len())) {
                        let v = to[j];
                        if supply[u] > 0 {
                            ns.add_arc(u, v, d);
                        } else {
                            ns.add_arc(v, u, d);
                        }
                    }
                }
            }
        }
    }
    let max_pivots = 200 * (n + 10) * (n + 10);
    loop {
        match ns.solve(max_pivots) {
            Status::Optimal => {}
            s => return Err(Error::Solver(format!("network simplex ended with {s:?}"))),
        }
        if add_violated_pairs(&mut ns, &keep_pos, r) == 0 {
            break;
        }
    }
    Ok((ns.total_cost() / scale, n))
}

/// Adds, per node, the most negative reduced-cost arcs among all atom pairs; returns how many.
fn add_violated_pairs(ns: &mut NetworkSimplex, pos: &[Point], r: f64) -> usize {
    const PER_NODE: usize = 4;
    let pi = ns.potentials()[..pos.len()].to_vec();
    let tol = ns.tolerance() + 1e-12 * r;
    // rc(u→v) = |x_u − x_v| + π_u − π_v
    let tree = ValueTree::new(pos, &pi);
    let mut new_arcs = Vec::new();
    for (u, p) in pos.iter().enumerate() {
        for (_, v) in tree.top_above(*p, pi[u] + tol, PER_NODE) {
            new_arcs.push((u, v, p.dist(pos[v])));
        }
    }
    for &(u, v, d) in &new_arcs {
        ns.add_arc(u, v, d);
    }
    new_arcs.len()
}

fn signed_masses(z: Point, r: f64, mu: &[Atom], nu: &[Atom]) -> (Vec<Point>, Vec<f64>, f64) {
    let ball = Ball { center: z, radius: r };
    let num = phi_mass(mu, &ball);
    let den = phi_mass(nu, &ball);
    let c = if den > 0.0 { num / den } else { 0.0 };
    let mut pts = Vec::new();
    let mut g = Vec::new();
    for (atoms, sign) in [(mu, 1.0), (nu, -c)] {
        for a in atoms {
            let f = phi(a.pos.dist(z) / r);
            if f > 0.0 && sign != 0.0 {
                pts.push(a.pos);
                g.push(sign * f * a.w);
            }
        }
    }
    (pts, g, c)
}

/// `α_{μ,ν}(B)` for two discrete measures, solved exactly.
pub fn alpha_pair(mu: &DiscreteMeasure, nu: &DiscreteMeasure, b: &Ball, cfg: &TransportConfig) -> Result<AlphaResult> {
    let (z, r) = (b.center, b.radius);
    let (pts, g, c) = signed_masses(z, r, mu.atoms(), nu.atoms());
    let (w, nodes) = transport_cost(z, r, &pts, &g, cfg)?;
    let status = if c == 0.0 || nodes == 0 { SolverStatus::Degenerate } else { SolverStatus::Optimal };
    Ok(AlphaResult { value: w / (r * r), witness: None, normalization: c, status, tolerance: 0.0, nodes })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LineMode {
    Search,
    Fixed(Line),
    /// Lines within angle `alpha` of `base`.
    Cone { alpha: f64, base: Line },
}

/// `μ` near one ball, with an optional binned copy for cheap search evaluations.
struct Window {
    z: Point,
    r: f64,
    exact: Vec<Atom>,
    binned: Option<(Vec<Atom>, f64)>,
    h_nu: f64,
    h_nu_search: f64,
}

impl Window {
    fn new(mu: &DiscreteMeasure, b: &Ball, m_max: u32, cfg: &TransportConfig) -> Window {
        let (z, r) = (b.center, b.radius);
        let exact: Vec<Atom> = mu.in_ball(&b.dilate(4.0)).copied().collect();
        let lines = m_max as f64;
        let floor_exact = 8.0 * r * lines / (cfg.n_max as f64 / 2.0);
        let h_nu = match cfg.model_spacing {
            Some(h) => h,
            None => {
                let local = DiscreteMeasure::new(exact.clone()).map(|m| m.spacing_estimate()).unwrap_or(0.0);
                let h = if local > 0.0 { local } else { r / 64.0 };
                h.min(r / 16.0).max(floor_exact)
            }
        };
        let budget = cfg.search_nodes.min(cfg.n_max);
        let h_nu_search = h_nu.max(8.0 * r * lines / (budget as f64 / 2.0));
        let binned = if exact.len() + (8.0 * r * lines / h_nu) as usize > budget {
            let near: Vec<Atom> = mu.in_ball(&b.dilate(4.0 + 4.0 * h_nu_search / r)).copied().collect();
            let mut cell = h_nu_search;
            loop {
                let (atoms, e) = bin_atoms(&near, z, cell);
                if atoms.len() <= budget / 2 || cell > r {
                    break Some((atoms, e));
                }
                cell *= 1.5;
            }
        } else {
            None
        };
        Window { z, r, exact, binned, h_nu, h_nu_search }
    }

    fn ball(&self) -> Ball {
        Ball { center: self.z, radius: self.r }
    }

    /// Evaluates `α_{μ,ν_h}` for a model; `coarse` uses the binned measure and search spacing.
    fn eval(&self, model: &SpikeMeasure, coarse: bool, cfg: &TransportConfig) -> Result<AlphaResult> {
        let (atoms, e_mu, h) = match (&self.binned, coarse) {
            (Some((a, e)), true) => (a.as_slice(), *e, self.h_nu_search),
            _ => (self.exact.as_slice(), 0.0, self.h_nu),
        };
        let window = self.ball().dilate(4.0);
        let nu = discretize_model(model, &window, h)?;
        let (pts, g, c) = signed_masses(self.z, self.r, atoms, nu.atoms());
        let limit = TransportConfig { n_max: if coarse { cfg.n_max.max(cfg.search_nodes) } else { cfg.n_max }, ..cfg.clone() };
        let (w, nodes) = transport_cost(self.z, self.r, &pts, &g, &limit)?;
        let r2 = self.r * self.r;
        let m_nu = nu.total_mass();
        let tol = c * h * (1.6 * m_nu + 2.0 * model.m as f64 * model.density * h) / r2 + 6.0 * e_mu / r2;
        let status = if c == 0.0 || nodes == 0 { SolverStatus::Degenerate } else { SolverStatus::Optimal };
        let witness = if model.m == 1 { Witness::Line(Line::new(model.vertex, model.base_angle)) } else { Witness::Spike(*model) };
        Ok(AlphaResult { value: w / r2, witness: Some(witness), normalization: c, status, tolerance: tol, nodes })
    }

    /// Exact evaluation when it fits the guard, otherwise the binned one.
    fn eval_final(&self, model: &SpikeMeasure, cfg: &TransportConfig) -> Result<AlphaResult> {
        match self.eval(model, false, cfg) {
            Err(Error::TooManyAtoms { .. }) if self.binned.is_some() => self.eval(model, true, cfg),
            other => other,
        }
    }

    /// Principal axis of the `φ`-weighted second moment about the center.
    fn principal_angle(&self) -> Option<f64> {
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for a in &self.exact {
            let v = a.pos - self.z;
            let w = a.w * phi(v.norm() / self.r);
            sxx += w * v.x * v.x;
            syy += w * v.y * v.y;
            sxy += w * v.x * v.y;
        }
        if sxx + syy == 0.0 {
            return None;
        }
        Some(measure::normalize_angle(0.5 * (2.0 * sxy).atan2(sxx - syy)))
    }
}

/// Bins atoms into square cells of side `cell`, returning centroids and `Σ w·|x − centroid|`.
fn bin_atoms(atoms: &[Atom], z: Point, cell: f64) -> (Vec<Atom>, f64) {
    let mut cells: HashMap<(i64, i64), (f64, f64, f64, Vec<usize>)> = HashMap::new();
    for (i, a) in atoms.iter().enumerate() {
        let key = (((a.pos.x - z.x) / cell).floor() as i64, ((a.pos.y - z.y) / cell).floor() as i64);
        let e = cells.entry(key).or_insert((0.0, 0.0, 0.0, Vec::new()));
        e.0 += a.w;
        e.1 += a.w * a.pos.x;
        e.2 += a.w * a.pos.y;
        e.3.push(i);
    }
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();
    let mut out = Vec::with_capacity(keys.len());
    let mut disp = 0.0;
    for k in keys {
        let (w, sx, sy, members) = &cells[&k];
        let c = Point::new(sx / w, sy / w);
        for &i in members {
            disp += atoms[i].w * atoms[i].pos.dist(c);
        }
        out.push(Atom { pos: c, w: *w });
    }
    (out, disp)
}

/// Golden-section minimization of `f` on `[a, b]` to width `tol`.
fn golden(mut a: f64, mut b: f64, tol: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

/// Search state shared by the line and spike searches.
struct Tracker<'a> {
    win: &'a Window,
    cfg: &'a TransportConfig,
    threshold: Option<f64>,
    best: Option<(SpikeMeasure, AlphaResult)>,
    coarse: bool,
    done: Option<AlphaResult>,
}

impl<'a> Tracker<'a> {
    fn new(win: &'a Window, cfg: &'a TransportConfig, threshold: Option<f64>) -> Self {
        Tracker { win, cfg, threshold, best: None, coarse: win.binned.is_some(), done: None }
    }

    /// Value used for minimization; records the best model and any early exit.
    fn eval(&mut self, model: SpikeMeasure) -> Result<f64> {
        if self.done.is_some() {
            return Ok(f64::NEG_INFINITY);
        }
        let res = self.win.eval(&model, self.coarse, self.cfg)?;
        if self.best.as_ref().map_or(true, |b| res.value < b.1.value) {
            self.best = Some((model, res));
        }
        if let Some(t) = self.threshold {
            if res.admits(t) {
                let fin = if self.coarse { self.win.eval_final(&model, self.cfg)? } else { res };
                if fin.admits(t) {
                    self.done = Some(fin);
                }
            }
        }
        Ok(res.value)
    }

    fn finish(self) -> Result<AlphaResult> {
        let (win, cfg, threshold) = (self.win, self.cfg, self.threshold);
        self.found().finalize(win, cfg, threshold)
    }

    fn found(self) -> Found {
        if let Some(d) = self.done {
            return Found::Final(d);
        }
        let (model, res) = self.best.expect("at least one evaluation");
        if self.coarse {
            Found::Coarse(model, res)
        } else {
            Found::Final(res)
        }
    }
}

/// Outcome of a search before the final exact evaluation.
enum Found {
    Final(AlphaResult),
    Coarse(SpikeMeasure, AlphaResult),
}

impl Found {
    fn value(&self) -> f64 {
        match self {
            Found::Final(r) | Found::Coarse(_, r) => r.value,
        }
    }

    /// A coarse result that already rules out `threshold` is returned as is; the exact
    /// solve could not change that decision.
    fn finalize(self, win: &Window, cfg: &TransportConfig, threshold: Option<f64>) -> Result<AlphaResult> {
        match self {
            Found::Final(r) => Ok(r),
            Found::Coarse(_, r) if threshold.is_some_and(|t| !r.admits(t)) => Ok(r),
            Found::Coarse(model, _) => win.eval_final(&model, cfg),
        }
    }
}

fn line_model(z: Point, angle: f64) -> SpikeMeasure {
    SpikeMeasure { vertex: z, base_angle: measure::normalize_angle(angle), m: 1, k: 1, density: 1.0 }
}

fn search_line(t: &mut Tracker, lo: f64, hi: f64, periodic: bool, extra: &[f64]) -> Result<()> {
    let z = t.win.z;
    for &a in extra {
        t.eval(line_model(z, a))?;
        if t.done.is_some() {
            return Ok(());
        }
    }
    let seeds = if periodic {
        t.cfg.angle_seeds.max(4)
    } else {
        ((t.cfg.angle_seeds as f64) * (hi - lo) / PI).ceil().max(3.0) as usize
    };
    let step = if periodic { (hi - lo) / seeds as f64 } else { (hi - lo) / (seeds - 1) as f64 };
    let mut best = (f64::INFINITY, lo);
    for i in 0..seeds {
        let a = lo + step * i as f64;
        let v = t.eval(line_model(z, a))?;
        if t.done.is_some() {
            return Ok(());
        }
        if v < best.0 {
            best = (v, a);
        }
    }
    for &a in extra {
        let v = t.eval(line_model(z, a))?;
        if v < best.0 {
            best = (v, a);
        }
    }
    let (mut a, mut b) = (best.1 - step, best.1 + step);
    if !periodic {
        a = a.max(lo);
        b = b.min(hi);
    }
    let tol = t.cfg.angle_tol;
    golden(a, b, tol, |x| t.eval(line_model(z, x)))?;
    Ok(())
}

/// `α_{μ,ν}(B)` for one fixed spike `ν`, discretized by the solver; `tolerance` covers the discretization.
pub fn alpha_model(mu: &DiscreteMeasure, b: &Ball, model: &SpikeMeasure, cfg: &TransportConfig) -> Result<AlphaResult> {
    Window::new(mu, b, model.m, cfg).eval_final(model, cfg)
}

/// `α_{μ,D}(B)` over lines `D` through the center, per `mode`.
pub fn alpha_line(mu: &DiscreteMeasure, b: &Ball, mode: LineMode, cfg: &TransportConfig) -> Result<AlphaResult> {
    alpha_line_below(mu, b, mode, cfg, None)
}

/// As [`alpha_line`], stopping at the first line whose value admits `threshold`.
pub fn alpha_line_below(
    mu: &DiscreteMeasure,
    b: &Ball,
    mode: LineMode,
    cfg: &TransportConfig,
    threshold: Option<f64>,
) -> Result<AlphaResult> {
    let win = Window::new(mu, b, 1, cfg);
    match mode {
        LineMode::Fixed(line) => {
            let model = line_model(b.center, line.angle);
            win.eval_final(&model, cfg)
        }
        LineMode::Search => {
            let mut t = Tracker::new(&win, cfg, threshold);
            let pca: Vec<f64> = win.principal_angle().into_iter().collect();
            search_line(&mut t, 0.0, PI, true, &pca)?;
            t.finish()
        }
        LineMode::Cone { alpha, base } => {
            if !(alpha > 0.0) {
                return Err(Error::InvalidInput("empty cone: angle window must be positive".into()));
            }
            let alpha = alpha.min(PI / 2.0);
            let (lo, hi) = (base.angle - alpha, base.angle + alpha);
            let mut t = Tracker::new(&win, cfg, threshold);
            let mut extra = Vec::new();
            if let Some(p) = win.principal_angle() {
                // nearest representative of the principal angle inside the cone
                let mut q = p;
                while q < lo {
                    q += PI;
                }
                while q > hi {
                    q -= PI;
                }
                extra.push(q.clamp(lo, hi));
            }
            extra.push(base.angle);
            search_line(&mut t, lo, hi, false, &extra)?;
            t.finish()
        }
    }
}

/// `α^{(k)}_μ(B)`: infimum over k-spike measures whose support meets the center.
pub fn alpha_spike(mu: &DiscreteMeasure, b: &Ball, k: u32, cfg: &TransportConfig) -> Result<AlphaResult> {
    alpha_spike_below(mu, b, k, cfg, None)
}

pub fn alpha_spike_below(
    mu: &DiscreteMeasure,
    b: &Ball,
    k: u32,
    cfg: &TransportConfig,
    threshold: Option<f64>,
) -> Result<AlphaResult> {
    if k % 2 == 0 {
        return Err(Error::InvalidInput(format!("k={k} must be odd")));
    }
    // Searches run on the coarse copies; only the overall winner gets the exact evaluation.
    let mut best: Option<(Window, Found)> = None;
    for m in (1..=k).filter(|m| k % m == 0) {
        let win = Window::new(mu, b, m, cfg);
        let mut t = Tracker::new(&win, cfg, threshold);
        if m == 1 {
            let pca: Vec<f64> = win.principal_angle().into_iter().collect();
            search_line(&mut t, 0.0, PI, true, &pca)?;
        } else {
            search_spike(&mut t, m, k)?;
        }
        let found = t.found();
        if let Found::Final(r) = &found {
            if threshold.is_some_and(|th| r.admits(th)) {
                return Ok(*r);
            }
        }
        if best.as_ref().map_or(true, |(_, f)| found.value() < f.value()) {
            best = Some((win, found));
        }
    }
    let (win, found) = best.expect("k ≥ 1");
    found.finalize(&win, cfg, threshold)
}

fn search_spike(t: &mut Tracker, m: u32, k: u32) -> Result<()> {
    let (z, r) = (t.win.z, t.win.r);
    let period = PI / m as f64;
    let model = |theta: f64, n: u32, off: f64| {
        let dir = Point::polar(1.0, theta + period * n as f64);
        SpikeMeasure { vertex: z - dir.scale(off), base_angle: theta.rem_euclid(period), m, k, density: 1.0 }
    };
    let mut offsets = vec![0.0];
    for j in 0..t.cfg.spike_levels {
        let o = 8.0 * r * 0.5f64.powi(j as i32);
        offsets.push(o);
        offsets.push(-o);
    }
    let seeds = (t.cfg.angle_seeds / m as usize).max(4);
    let step = period / seeds as f64;
    let mut ranked = Vec::new();
    for i in 0..seeds {
        let theta = step * i as f64;
        let v = t.eval(model(theta, 0, 0.0))?;
        if t.done.is_some() {
            return Ok(());
        }
        ranked.push((v, theta));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (ranked[0].0, ranked[0].1, 0u32, 0.0f64);
    for &(_, theta) in ranked.iter().take(3) {
        for n in 0..m {
            for &o in offsets.iter().skip(1) {
                let v = t.eval(model(theta, n, o))?;
                if t.done.is_some() {
                    return Ok(());
                }
                if v < best.0 {
                    best = (v, theta, n, o);
                }
            }
        }
    }
    let tol = t.cfg.angle_tol;
    for _ in 0..2 {
        let (_, theta, n, o) = best;
        let (th, v) = golden(theta - step, theta + step, tol, |x| t.eval(model(x, n, o)))?;
        if t.done.is_some() {
            return Ok(());
        }
        if v < best.0 {
            best = (v, th, n, o);
        }
        if o != 0.0 {
            let (_, theta, n, o) = best;
            let (lo, hi) = (o.abs() * 0.5, (o.abs() * 2.0).min(8.0 * r));
            let sign = o.signum();
            let (oo, v) = golden(lo, hi, tol * r, |x| t.eval(model(theta, n, sign * x)))?;
            if t.done.is_some() {
                return Ok(());
            }
            if v < best.0 {
                best = (v, theta, n, sign * oo);
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModifiedDensity {
    pub value: f64,
    pub witness: Option<Ball>,
    pub witness_alpha: Option<AlphaResult>,
    /// `α` tests performed.
    pub tests: usize,
}

/// `δ̃_{μ,ε}(B(x,r))`: least density over flat, dense, not-too-small sub-balls.
pub fn modified_density(mu: &DiscreteMeasure, b: &Ball, eps: f64, k: u32, cfg: &TransportConfig) -> Result<ModifiedDensity> {
    let (x, r) = (b.center, b.radius);
    let lam = measure::lambda_k(k);
    let dk = measure::density_ratio_k(k);
    let big = density(mu, b).1;
    let floor_density = big / (2.0 * dk);
    let r_min = lam * r / 2.0;
    let inside: Vec<Atom> = mu.in_ball(b).copied().collect();
    if inside.is_empty() {
        return Ok(ModifiedDensity { value: 0.0, witness: None, witness_alpha: None, tests: 0 });
    }
    let stride = (inside.len() + cfg.md_centers - 1) / cfg.md_centers.max(1);
    let centers: Vec<Point> = inside.iter().step_by(stride.max(1)).map(|a| a.pos).collect();
    let radii = measure::geometric_scales(r, r_min, cfg.md_radii_per_octave);
    let mut cands: Vec<(f64, f64, Ball)> = Vec::new();
    for &c in &centers {
        let mut d: Vec<(f64, f64)> = inside.iter().map(|a| (a.pos.dist(c), a.w)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = Vec::with_capacity(d.len());
        let mut s = 0.0;
        for &(_, w) in &d {
            s += w;
            cum.push(s);
        }
        for &rho in &radii {
            if rho < r_min * (1.0 - 1e-12) || c.dist(x) + rho > r {
                continue;
            }
            let cnt = d.partition_point(|p| p.0 < rho);
            let mass = if cnt == 0 { 0.0 } else { cum[cnt - 1] };
            let dens = mass / (2.0 * rho);
            if dens >= floor_density && dens > 0.0 {
                cands.push((dens, -c.dist(x), Ball { center: c, radius: rho }));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut tests = 0;
    for (dens, _, ball) in cands {
        if tests >= cfg.md_max_tests {
            break;
        }
        tests += 1;
        let thr = eps * dens;
        let res = alpha_line_below(mu, &ball.dilate(30.0), LineMode::Search, cfg, Some(thr))?;
        if res.admits(thr) {
            return Ok(ModifiedDensity { value: dens, witness: Some(ball), witness_alpha: Some(res), tests });
        }
    }
    Ok(ModifiedDensity { value: 0.0, witness: None, witness_alpha: None, tests })
}
