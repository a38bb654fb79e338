//! Stopping-time region over `F ∩ B̄₀`, the `Z/F₁/F₂` partition, and the Lipschitz graph
//! assembled from Whitney intervals, approximating lines and a partition of unity.
//!
//! Everything here works in the normalized frame: `B₀ = B(0,1)`, `D₀ = ℝ×{0}`,
//! `δ_μ(B₀) = 1`. [`normalize`] maps an arbitrary measure and ball into it.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::huovinen::SampledFunction;
use crate::measure::{density, Atom, Ball, DiscreteMeasure, Line, Point};
use crate::transport::{alpha_line, alpha_line_below, AlphaResult, LineMode, TransportConfig, Witness};

/// Upper end of the height range.
pub const T_MAX: f64 = 12.0;
/// Scales of `S_total` lie in `(0, 20)`; heights equal to [`T_MAX`] probe this level above it.
pub const T_ABOVE: f64 = 16.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopParams {
    pub delta: f64,
    pub eps: f64,
    pub alpha: f64,
    pub theta: f64,
    pub k: u32,
    /// Bound `1 + θ²` on the modified density when true, `1 + θ` otherwise.
    pub theta_squared: bool,
    pub t_per_octave: usize,
    /// `t_min` is this multiple of the nearest-neighbour spacing of `μ` near `B₀`.
    pub t_min_factor: f64,
}

impl Default for StopParams {
    fn default() -> Self {
        StopParams {
            delta: 0.4,
            eps: 1e-8,
            alpha: 0.1,
            theta: 0.01,
            k: 3,
            theta_squared: true,
            t_per_octave: 2,
            t_min_factor: 4.0,
        }
    }
}

impl StopParams {
    /// Checks ranges, oddness of `k` and `ε ≤ θ⁴ ≤ α⁸ ≤ δ¹⁶`.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta", self.delta), ("eps", self.eps), ("alpha", self.alpha), ("theta", self.theta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidInput(format!("{name}={v} must lie in (0,1)")));
            }
        }
        if self.k % 2 == 0 {
            return Err(Error::InvalidInput(format!("k={} must be odd", self.k)));
        }
        let chain = [
            ("eps", self.eps),
            ("theta^4", self.theta.powi(4)),
            ("alpha^8", self.alpha.powi(8)),
            ("delta^16", self.delta.powi(16)),
        ];
        for w in chain.windows(2) {
            if w[0].1 > w[1].1 * (1.0 + 1e-9) {
                return Err(Error::InvalidInput(format!(
                    "hierarchy violated: {}={:e} exceeds {}={:e}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        if self.t_per_octave == 0 || !(self.t_min_factor > 0.0) {
            return Err(Error::InvalidInput("t_per_octave and t_min_factor must be positive".into()));
        }
        Ok(())
    }

    /// `λ = √ε/δ`.
    pub fn lambda(&self) -> f64 {
        self.eps.sqrt() / self.delta
    }

    pub fn modified_density_bound(&self) -> f64 {
        if self.theta_squared {
            1.0 + self.theta * self.theta
        } else {
            1.0 + self.theta
        }
    }

    /// Descending scale grid `12·2^{-i/n}` above `t_min`, closed by `t_min` itself.
    pub fn t_grid(&self, t_min: f64) -> Vec<f64> {
        let mut g = Vec::new();
        let mut i = 0;
        loop {
            let t = T_MAX * 2f64.powf(-(i as f64) / self.t_per_octave as f64);
            if t <= t_min * (1.0 + 1e-12) {
                break;
            }
            g.push(t);
            i += 1;
        }
        g.push(t_min.min(T_MAX));
        g
    }
}

/// Outcome of one `S_total` test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    pub density: f64,
    /// Best cone line found; absent when the density test already failed.
    pub line: Option<AlphaResult>,
}

impl Membership {
    /// Witness line when the pair is a member.
    pub fn witness(&self) -> Option<Line> {
        if !self.member {
            return None;
        }
        match self.line?.witness? {
            Witness::Line(l) => Some(l),
            Witness::Spike(_) => None,
        }
    }
}

fn cone() -> impl Fn(f64) -> LineMode {
    |alpha| LineMode::Cone { alpha, base: Line::horizontal() }
}

/// `(x,t) ∈ S_total`: `δ_μ(B(x,t)) ≥ δ` and some line through `x` within `α` of `D₀` has `α_{μ,D} ≤ ε`.
pub fn in_s_total(mu: &DiscreteMeasure, x: Point, t: f64, p: &StopParams, cfg: &TransportConfig) -> Result<Membership> {
    if !(t > 0.0 && t < 20.0) {
        return Err(Error::InvalidInput(format!("scale t={t} must lie in (0,20)")));
    }
    if x.norm() > 1.0 + 1e-9 {
        return Err(Error::InvalidInput(format!("center ({}, {}) lies outside the closed unit ball", x.x, x.y)));
    }
    let b = Ball::new(x, t)?;
    let dens = density(mu, &b).1;
    if dens < p.delta {
        return Ok(Membership { member: false, density: dens, line: None });
    }
    let r = alpha_line_below(mu, &b, cone()(p.alpha), cfg, Some(p.eps))?;
    Ok(Membership { member: r.admits(p.eps), density: dens, line: Some(r) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Height {
    /// Largest non-member grid scale, or 0 when every grid scale is a member.
    pub h: f64,
    /// Evaluated grid scales with their membership, descending.
    pub levels: Vec<(f64, bool)>,
    /// Members strictly below `h` found by the verification pass.
    pub non_monotone: usize,
    /// Membership at [`T_ABOVE`], probed only when `h = 12`.
    pub above: Option<bool>,
    /// Density at the stopping scale (`h > 0`).
    pub density_at_h: Option<f64>,
    /// Cone witness at the smallest member scale.
    pub witness: Option<AlphaResult>,
}

impl Height {
    /// Infimum of the scales `t` with `(x,t) ∈ S`, if any.
    pub fn s_floor(&self) -> Option<f64> {
        if self.h < T_MAX || self.above == Some(true) {
            Some(self.h)
        } else {
            None
        }
    }
}

/// `h(x)` on a descending grid: the first non-member from the top is the grid supremum.
/// With `verify`, the scales below `h` are evaluated too and members there are counted.
pub fn stopping_height(
    mu: &DiscreteMeasure,
    x: Point,
    grid: &[f64],
    p: &StopParams,
    cfg: &TransportConfig,
    verify: bool,
) -> Result<Height> {
    if grid.is_empty() || grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("height grid must be nonempty and strictly descending".into()));
    }
    let mut levels = Vec::with_capacity(grid.len());
    let mut h = 0.0;
    let mut witness = None;
    let mut stop = grid.len();
    for (i, &t) in grid.iter().enumerate() {
        let m = in_s_total(mu, x, t, p, cfg)?;
        levels.push((t, m.member));
        if !m.member {
            h = t;
            stop = i;
            break;
        }
        witness = m.line;
    }
    let mut non_monotone = 0;
    if verify && stop < grid.len() {
        for &t in &grid[stop + 1..] {
            let m = in_s_total(mu, x, t, p, cfg)?;
            levels.push((t, m.member));
            non_monotone += m.member as usize;
        }
    }
    let above = if stop == 0 { Some(in_s_total(mu, x, T_ABOVE, p, cfg)?.member) } else { None };
    let density_at_h = (h > 0.0).then(|| density(mu, &Ball { center: x, radius: h }).1);
    Ok(Height { h, levels, non_monotone, above, density_at_h, witness })
}

/// A sampled element of `S`: `(x, t) ∈ S` for every `t > t_inf` (and `t = t_inf` when it is 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SPair {
    pub atom: usize,
    pub pos: Point,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingRegion {
    pub params: StopParams,
    pub t_min: f64,
    pub grid: Vec<f64>,
    /// Atom indices of `F ∩ B̄₀`.
    pub base: Vec<usize>,
    pub heights: Vec<Height>,
    pub pairs: Vec<SPair>,
}

impl StoppingRegion {
    /// Heights for every atom of `F ∩ B̄₀`; every `verify_stride`-th atom also gets the full grid.
    pub fn build(
        mu: &DiscreteMeasure,
        f: &[usize],
        p: &StopParams,
        cfg: &TransportConfig,
        verify_stride: usize,
    ) -> Result<StoppingRegion> {
        p.validate()?;
        let atoms = mu.atoms();
        let base: Vec<usize> = f.iter().copied().filter(|&i| atoms[i].pos.norm() <= 1.0).collect();
        let t_min = resolution_floor(mu, p);
        let grid = p.t_grid(t_min);
        let mut heights = Vec::with_capacity(base.len());
        let mut pairs = Vec::new();
        for (n, &i) in base.iter().enumerate() {
            let verify = verify_stride > 0 && n % verify_stride == 0;
            let ht = stopping_height(mu, atoms[i].pos, &grid, p, cfg, verify)?;
            if let Some(t) = ht.s_floor() {
                pairs.push(SPair { atom: i, pos: atoms[i].pos, t });
            }
            heights.push(ht);
        }
        Ok(StoppingRegion { params: p.clone(), t_min, grid, base, heights, pairs })
    }

    pub fn height_of(&self, atom: usize) -> Option<f64> {
        self.base.iter().position(|&i| i == atom).map(|n| self.heights[n].h)
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().map(|h| h.h).fold(0.0, f64::max)
    }

    pub fn non_monotone(&self) -> usize {
        self.heights.iter().map(|h| h.non_monotone).sum()
    }

    /// `d(y) = inf_{(X,t)∈S} |X − y| + t`.
    pub fn d(&self, y: Point) -> f64 {
        self.pairs.iter().map(|s| s.pos.dist(y) + s.t).fold(f64::INFINITY, f64::min)
    }

    pub fn big_d(&self) -> ConeProfile {
        ConeProfile::new(self.pairs.iter().map(|s| (s.pos.x, s.t)).collect())
    }
}

/// `t_min`: the configured multiple of the median nearest-neighbour spacing near `B₀`.
pub fn resolution_floor(mu: &DiscreteMeasure, p: &StopParams) -> f64 {
    let near: Vec<Atom> = mu.in_ball(&Ball { center: Point::default(), radius: 2.0 }).copied().collect();
    let s = DiscreteMeasure::new(near).map(|m| m.spacing_estimate()).unwrap_or(0.0);
    let s = if s > 0.0 { s } else { mu.spacing_estimate() };
    (p.t_min_factor * s).clamp(1e-9, T_MAX)
}

/// A 1-Lipschitz function on the line with a computable infimum over intervals.
pub trait Profile1d {
    fn value(&self, p: f64) -> f64;
    /// A lower bound for `inf_{u∈[a,b]}`, exact for [`ConeProfile`].
    fn inf_on(&self, a: f64, b: f64) -> f64;
}

/// `D(p) = min_j |p − q_j| + t_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeProfile {
    /// `(q_j, t_j)` sorted by `q_j`.
    pub cones: Vec<(f64, f64)>,
}

impl ConeProfile {
    pub fn new(mut cones: Vec<(f64, f64)>) -> Self {
        cones.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        // drop cones dominated by a neighbour
        let mut kept: Vec<(f64, f64)> = Vec::with_capacity(cones.len());
        for c in cones {
            while let Some(&last) = kept.last() {
                if last.1 >= c.1 + (c.0 - last.0) {
                    kept.pop();
                } else {
                    break;
                }
            }
            if kept.last().map_or(true, |&l| c.1 < l.1 + (c.0 - l.0)) {
                kept.push(c);
            }
        }
        ConeProfile { cones: kept }
    }

    pub fn is_empty(&self) -> bool {
        self.cones.is_empty()
    }
}

impl Profile1d for ConeProfile {
    fn value(&self, p: f64) -> f64 {
        self.inf_on(p, p)
    }

    fn inf_on(&self, a: f64, b: f64) -> f64 {
        if self.cones.is_empty() {
            return f64::INFINITY;
        }
        // after domination pruning the minimizer sits next to the interval
        let i = self.cones.partition_point(|c| c.0 < a);
        let j = self.cones.partition_point(|c| c.0 <= b);
        let dist = |q: f64| if q < a { a - q } else if q > b { q - b } else { 0.0 };
        let mut best = f64::INFINITY;
        for &(q, t) in &self.cones[i.saturating_sub(1)..(j + 1).min(self.cones.len())] {
            best = best.min(dist(q) + t);
        }
        best
    }
}

/// Samples of a 1-Lipschitz function on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledProfile {
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl Profile1d for SampledProfile {
    fn value(&self, p: f64) -> f64 {
        let u = ((p - self.start) / self.step).clamp(0.0, (self.values.len() - 1) as f64);
        let j = (u.floor() as usize).min(self.values.len().saturating_sub(2));
        let f = u - j as f64;
        if self.values.len() == 1 {
            return self.values[0];
        }
        self.values[j] * (1.0 - f) + self.values[j + 1] * f
    }

    fn inf_on(&self, a: f64, b: f64) -> f64 {
        let n = self.values.len() as i64;
        let lo = (((a - self.start) / self.step).floor() as i64).clamp(0, n - 1);
        let hi = (((b - self.start) / self.step).ceil() as i64).clamp(0, n - 1);
        let m = self.values[lo as usize..=hi as usize].iter().copied().fold(f64::INFINITY, f64::min);
        m - 0.5 * self.step
    }
}

/// Dyadic interval `[j·2^n, (j+1)·2^n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub level: i32,
    pub index: i64,
}

impl Interval {
    pub fn containing(p: f64, level: i32) -> Interval {
        Interval { level, index: (p / 2f64.powi(level)).floor() as i64 }
    }

    pub fn diam(&self) -> f64 {
        2f64.powi(self.level)
    }

    pub fn lo(&self) -> f64 {
        self.index as f64 * self.diam()
    }

    pub fn hi(&self) -> f64 {
        (self.index + 1) as f64 * self.diam()
    }

    pub fn center(&self) -> f64 {
        (self.index as f64 + 0.5) * self.diam()
    }

    /// `L·I` as a closed range.
    pub fn dilate(&self, l: f64) -> (f64, f64) {
        let (c, r) = (self.center(), 0.5 * l * self.diam());
        (c - r, c + r)
    }
}

/// Largest dyadic interval containing `p` with `diam I ≤ (1/20)·inf_I D`.
pub fn whitney_interval(profile: &dyn Profile1d, p: f64) -> Result<Interval> {
    let dp = profile.value(p);
    if !(dp > 0.0 && dp.is_finite()) {
        return Err(Error::InvalidInput(format!("D({p}) = {dp} is not a positive finite value")));
    }
    let mut level = (dp / 20.0).log2().floor() as i32;
    loop {
        let iv = Interval::containing(p, level);
        if iv.diam() <= profile.inf_on(iv.lo(), iv.hi()) / 20.0 {
            return Ok(iv);
        }
        level -= 1;
        if level < -1000 {
            return Err(Error::Guard(format!("no admissible dyadic interval at p={p}")));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCover {
    /// Disjoint intervals, sorted.
    pub intervals: Vec<Interval>,
    /// Knots with `D ≤ floor` left to the `π(Z)` interpolation.
    pub floor: f64,
    /// Knot/interval pairs breaking `10·diam ≤ D ≤ 60·diam` on `10I`.
    pub scale_violations: usize,
    /// Largest number of `j` with `10I_i ∩ 10I_j ≠ ∅`.
    pub overlap_10: usize,
    /// Largest number of doubled intervals containing one knot.
    pub multiplicity_2: usize,
}

/// Whitney intervals for the knots with `D(p) > floor`; `floor` must be at least `40·step`.
pub fn whitney_cover(profile: &dyn Profile1d, knots: &[f64], floor: f64) -> Result<WhitneyCover> {
    let step = knots.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if floor < 40.0 * step * (1.0 - 1e-9) {
        return Err(Error::Guard(format!("resolution guard: floor {floor} is below 40 knot steps ({step})")));
    }
    let mut set = std::collections::BTreeSet::new();
    for &p in knots {
        if profile.value(p) > floor {
            set.insert(whitney_interval(profile, p)?);
        }
    }
    let mut intervals: Vec<Interval> = set.into_iter().collect();
    intervals.sort_by(|a, b| a.lo().total_cmp(&b.lo()));
    let mut bad_scale = 0;
    for iv in &intervals {
        let (a, b) = iv.dilate(10.0);
        for &p in knots.iter().filter(|&&p| p >= a && p <= b) {
            let dp = profile.value(p);
            if dp < 10.0 * iv.diam() * (1.0 - 1e-12) || dp > 60.0 * iv.diam() * (1.0 + 1e-12) {
                bad_scale += 1;
            }
        }
    }
    let overlap_10 = intervals
        .iter()
        .map(|i| {
            let (a, b) = i.dilate(10.0);
            intervals.iter().filter(|j| {
                let (c, d) = j.dilate(10.0);
                c < b && a < d
            })
            .count()
        })
        .max()
        .unwrap_or(0);
    let multiplicity_2 = knots
        .iter()
        .map(|&p| intervals.iter().filter(|i| {
            let (a, b) = i.dilate(2.0);
            p > a && p < b
        }).count())
        .max()
        .unwrap_or(0);
    Ok(WhitneyCover { intervals, floor, scale_violations: bad_scale, overlap_10, multiplicity_2 })
}

/// Quintic smoothstep on `[0,1]` with its first two derivatives.
fn smoother(u: f64) -> (f64, f64, f64) {
    if u <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if u >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let u2 = u * u;
        (
            u2 * u * (10.0 - 15.0 * u + 6.0 * u2),
            30.0 * u2 * (1.0 - u) * (1.0 - u),
            60.0 * u * (1.0 - u) * (1.0 - 2.0 * u),
        )
    }
}

/// Bump `β`: 1 on `[a, b]`, quintic ramps of width `w` on each side, with derivatives.
fn plateau(p: f64, a: f64, b: f64, w: f64) -> (f64, f64, f64) {
    if p < a {
        let (s, s1, s2) = smoother((p - (a - w)) / w);
        (s, s1 / w, s2 / (w * w))
    } else if p > b {
        let (s, s1, s2) = smoother(((b + w) - p) / w);
        (s, -s1 / w, s2 / (w * w))
    } else {
        (1.0, 0.0, 0.0)
    }
}

fn raw_bump(iv: &Interval, p: f64) -> (f64, f64, f64) {
    let d = iv.diam();
    plateau(p, iv.lo(), iv.hi(), 0.5 * d)
}

/// `ψ_i` at one point: `(interval index, value, first, second derivative)`.
pub type PouTerm = (usize, f64, f64, f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionOfUnity {
    pub intervals: Vec<Interval>,
    pub max_diam: f64,
    /// `max_i ‖ψ_i′‖∞·diam I_i` over the sampled points.
    pub d1_constant: f64,
    /// `max_i ‖ψ_i″‖∞·(diam I_i)²`.
    pub d2_constant: f64,
    /// Largest `|Σψ_i − 1|` on covered sample points.
    pub sum_error: f64,
}

impl PartitionOfUnity {
    /// `ψ_i(p)` for all `i` with `p ∈ 2I_i`; empty off the cover.
    pub fn terms(&self, p: f64) -> Vec<PouTerm> {
        let reach = 0.5 * self.max_diam;
        let lo = self.intervals.partition_point(|iv| iv.hi() + reach <= p);
        let hi = self.intervals.partition_point(|iv| iv.lo() - reach < p);
        let mut raw = Vec::new();
        for i in lo..hi {
            let b = raw_bump(&self.intervals[i], p);
            if b.0 > 0.0 {
                raw.push((i, b));
            }
        }
        let s: f64 = raw.iter().map(|r| r.1 .0).sum();
        if s == 0.0 {
            return Vec::new();
        }
        let s1: f64 = raw.iter().map(|r| r.1 .1).sum();
        let s2: f64 = raw.iter().map(|r| r.1 .2).sum();
        raw.into_iter()
            .map(|(i, (b, b1, b2))| {
                let v = b / s;
                let d1 = (b1 * s - b * s1) / (s * s);
                let d2 = b2 / s - 2.0 * b1 * s1 / (s * s) - b * s2 / (s * s) + 2.0 * b * s1 * s1 / (s * s * s);
                (i, v, d1, d2)
            })
            .collect()
    }
}

/// Normalized smooth bumps on the doubled intervals; derivative constants sampled at `samples`.
pub fn partition_of_unity(intervals: &[Interval], samples: &[f64]) -> Result<PartitionOfUnity> {
    if intervals.windows(2).any(|w| w[1].lo() < w[0].hi() - 1e-15 * w[0].diam().max(1.0)) {
        return Err(Error::InvalidInput("intervals must be sorted and disjoint".into()));
    }
    let max_diam = intervals.iter().map(|i| i.diam()).fold(0.0, f64::max);
    let mut pou = PartitionOfUnity { intervals: intervals.to_vec(), max_diam, d1_constant: 0.0, d2_constant: 0.0, sum_error: 0.0 };
    let (mut c1, mut c2, mut err) = (0.0f64, 0.0f64, 0.0f64);
    for &p in samples {
        let terms = pou.terms(p);
        if terms.is_empty() {
            continue;
        }
        let s: f64 = terms.iter().map(|t| t.1).sum();
        err = err.max((s - 1.0).abs());
        for &(i, _, d1, d2) in &terms {
            let d = intervals[i].diam();
            c1 = c1.max(d1.abs() * d);
            c2 = c2.max(d2.abs() * d * d);
        }
    }
    pou.d1_constant = c1;
    pou.d2_constant = c2;
    pou.sum_error = err;
    Ok(pou)
}

/// Ball, approximating line and affine map attached to one Whitney interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalFit {
    pub interval: Interval,
    pub ball: Ball,
    pub line: AlphaResult,
    /// `A_i(q) = value + slope·(q − anchor)`.
    pub anchor: f64,
    pub value: f64,
    pub slope: f64,
    /// Whether a sampled pair realizes `|π(X) − p| + t ≤ 120·diam I` for some `p ∈ I`.
    pub within_budget: bool,
}

impl IntervalFit {
    pub fn eval(&self, q: f64) -> f64 {
        self.value + self.slope * (q - self.anchor)
    }
}

/// Signed angle in `(−π/2, π/2]` of a line direction.
fn signed_angle(l: &Line) -> f64 {
    let a = l.angle.rem_euclid(PI);
    if a > PI / 2.0 {
        a - PI
    } else {
        a
    }
}

/// Picks `(X,t)` nearest to the interval in the `|π(X) − p| + t` sense, inflates the radius to
/// `max(t, diam I, t_min)`, and fits the cone line there.
pub fn interval_ball_line(
    iv: &Interval,
    region: &StoppingRegion,
    mu: &DiscreteMeasure,
    cfg: &TransportConfig,
) -> Result<IntervalFit> {
    let (lo, hi) = (iv.lo(), iv.hi());
    let gap = |q: f64| if q < lo { lo - q } else if q > hi { q - hi } else { 0.0 };
    let best = region
        .pairs
        .iter()
        .min_by(|a, b| (gap(a.pos.x) + a.t).total_cmp(&(gap(b.pos.x) + b.t)))
        .ok_or_else(|| Error::Guard("stopping region has no sampled pairs".into()))?;
    let within_budget = gap(best.pos.x) + best.t <= 120.0 * iv.diam();
    let radius = best.t.max(iv.diam()).max(region.t_min).min(19.0);
    let ball = Ball::new(best.pos, radius)?;
    let line = alpha_line(mu, &ball, cone()(region.params.alpha), cfg)?;
    let angle = match line.witness {
        Some(Witness::Line(l)) => signed_angle(&l),
        _ => 0.0,
    };
    Ok(IntervalFit { interval: *iv, ball, line, anchor: best.pos.x, value: best.pos.y, slope: angle.tan(), within_budget })
}

/// Where a knot value came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KnotSource {
    /// Outside `3I₀`.
    Outside,
    /// Weighted mean of this many `Z` atoms in the knot cell.
    Z(u32),
    /// Interpolated between `Z` cells (`0 < D ≤ floor`).
    Fringe,
    /// `Σ ψ_i A_i` over these fits.
    Whitney(Vec<u32>),
    /// Neither `Z` data nor a Whitney interval reached the knot.
    Uncovered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzGraph {
    pub start: f64,
    pub step: f64,
    /// `𝒜` at the knots.
    pub values: Vec<f64>,
    /// `A` before the cutoff, for diagnostics.
    pub raw: Vec<f64>,
    pub sources: Vec<KnotSource>,
    /// Largest first-difference quotient of `𝒜`.
    pub lipschitz: f64,
    /// `max |𝒜″(p)|·D(p)/λ` over Whitney knots, with `𝒜″` from the analytic partition of unity.
    pub curvature_constant: f64,
    /// `max |𝒜|`, the distance of `Γ` from `D₀`.
    pub max_abs: f64,
    /// `Z` cells whose atoms disagree by more than `2α·step`.
    pub excluded_cells: usize,
    /// Fits whose nearest pair lies farther than `120·diam I` from the interval.
    pub flagged_fits: usize,
    /// `max |A_i(q) − A_j(q)|/(λ·diam I_j)` over touching intervals and `q ∈ 2I_j`.
    pub neighbor_constant: f64,
    /// Largest `|A_i′|`.
    pub max_fit_slope: f64,
}

impl LipschitzGraph {
    pub fn value_at(&self, p: f64) -> f64 {
        self.as_sampled().value(p)
    }

    pub fn as_sampled(&self) -> SampledFunction {
        SampledFunction { start: self.start, step: self.step, values: self.values.clone() }
    }

    pub fn knot(&self, j: usize) -> f64 {
        self.start + j as f64 * self.step
    }

    /// `‖𝒜′‖²_{L²}` from forward differences (exact for the piecewise linear interpolant).
    pub fn derivative_l2_sq(&self) -> f64 {
        let mut s = 0.0;
        let v = &self.values;
        let at = |j: i64| if j < 0 || j as usize >= v.len() { 0.0 } else { v[j as usize] };
        for j in -1..v.len() as i64 {
            let d = (at(j + 1) - at(j)) / self.step;
            s += d * d;
        }
        s * self.step
    }

    /// Two-column `p value` text.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "p value")?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(w, "{:?} {:?}", self.knot(j), v)?;
        }
        Ok(())
    }
}

/// Localization cutoff: 1 on `[−3/2, 3/2]`, 0 outside `(−2, 2)`.
fn cutoff(p: f64) -> (f64, f64, f64) {
    plateau(p, -1.5, 1.5, 0.5)
}

/// Knot grid for the graph: `[−3, 3]` with the given step, anchored at 0.
pub fn knot_grid(step: f64) -> Vec<f64> {
    let n = (3.0 / step).round() as i64;
    (-n..=n).map(|j| j as f64 * step).collect()
}

/// `A = π⊥` on `π(Z)` cells, interpolation on the fringe, `Σψ_iA_i` on the Whitney part; `𝒜 = ψ·A`.
pub fn assemble_graph(
    knots: &[f64],
    profile: &dyn Profile1d,
    cover: &WhitneyCover,
    pou: &PartitionOfUnity,
    fits: &[Option<IntervalFit>],
    z_points: &[(Point, f64)],
    p: &StopParams,
) -> Result<LipschitzGraph> {
    if knots.len() < 3 {
        return Err(Error::InvalidInput("need at least three knots".into()));
    }
    let step = knots[1] - knots[0];
    let n = knots.len();
    // Z cells
    let mut cells: BTreeMap<usize, (f64, f64, f64, f64, u32)> = BTreeMap::new();
    for &(x, w) in z_points {
        let j = ((x.x - knots[0]) / step).round();
        if j < 0.0 || j as usize >= n {
            continue;
        }
        let e = cells.entry(j as usize).or_insert((0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY, 0));
        e.0 += w;
        e.1 += w * x.y;
        e.2 = e.2.min(x.y);
        e.3 = e.3.max(x.y);
        e.4 += 1;
    }
    let mut raw = vec![f64::NAN; n];
    let mut sources = vec![KnotSource::Uncovered; n];
    let mut excluded = 0;
    for (&j, &(w, wy, lo, hi, c)) in &cells {
        if hi - lo > 2.0 * p.alpha * step {
            excluded += 1;
            continue;
        }
        raw[j] = wy / w;
        sources[j] = KnotSource::Z(c);
    }
    let lam = p.lambda();
    let mut curvature: f64 = 0.0;
    for j in 0..n {
        if matches!(sources[j], KnotSource::Z(_)) {
            continue;
        }
        let q = knots[j];
        let dq = profile.value(q);
        if dq > cover.floor {
            let terms = pou.terms(q);
            let usable: Vec<&PouTerm> = terms.iter().filter(|t| fits[t.0].is_some()).collect();
            if usable.is_empty() {
                continue;
            }
            let s: f64 = usable.iter().map(|t| t.1).sum();
            let (mut a, mut a1, mut a2) = (0.0, 0.0, 0.0);
            for &&(i, v, d1, d2) in &usable {
                let f = fits[i].as_ref().expect("filtered");
                let (fv, fs) = (f.eval(q), f.slope);
                a += v * fv;
                a1 += d1 * fv + v * fs;
                a2 += d2 * fv + 2.0 * d1 * fs;
            }
            a /= s;
            a1 /= s;
            a2 /= s;
            raw[j] = a;
            let (c, c1, c2) = cutoff(q);
            let second = c2 * a + 2.0 * c1 * a1 + c * a2;
            if q.abs() < 3.0 && dq.is_finite() {
                curvature = curvature.max(second.abs() * dq / lam);
            }
            sources[j] = KnotSource::Whitney(usable.iter().map(|t| t.0 as u32).collect());
        }
    }
    // fringe: interpolate between the nearest defined knots, or extend the nearest one
    let defined: Vec<usize> = (0..n).filter(|&j| !raw[j].is_nan()).collect();
    for j in 0..n {
        if !raw[j].is_nan() || matches!(sources[j], KnotSource::Whitney(_)) {
            continue;
        }
        if defined.is_empty() {
            raw[j] = 0.0;
            continue;
        }
        let k = defined.partition_point(|&d| d < j);
        let v = match (k.checked_sub(1).map(|i| defined[i]), defined.get(k).copied()) {
            (Some(a), Some(b)) => raw[a] + (raw[b] - raw[a]) * (j - a) as f64 / (b - a) as f64,
            (Some(a), None) => raw[a],
            (None, Some(b)) => raw[b],
            (None, None) => 0.0,
        };
        raw[j] = v;
        if profile.value(knots[j]) <= cover.floor {
            sources[j] = KnotSource::Fringe;
        }
    }
    let values: Vec<f64> = (0..n)
        .map(|j| {
            let q = knots[j];
            if q.abs() >= 3.0 {
                0.0
            } else {
                cutoff(q).0 * raw[j]
            }
        })
        .collect();
    for j in 0..n {
        if knots[j].abs() >= 3.0 {
            sources[j] = KnotSource::Outside;
        }
    }
    let lipschitz = values.windows(2).map(|w| (w[1] - w[0]).abs() / step).fold(0.0, f64::max);
    let max_abs = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    // neighbour consistency
    let mut neighbor: f64 = 0.0;
    let live: Vec<&IntervalFit> = fits.iter().flatten().collect();
    for (a, fa) in live.iter().enumerate() {
        let (a0, a1) = fa.interval.dilate(10.0);
        for fb in live.iter().skip(a + 1) {
            let (b0, b1) = fb.interval.dilate(10.0);
            if !(b0 < a1 && a0 < b1) {
                continue;
            }
            for (f, g) in [(fa, fb), (fb, fa)] {
                let (c, d) = g.interval.dilate(2.0);
                let diff = (f.eval(c) - g.eval(c)).abs().max((f.eval(d) - g.eval(d)).abs());
                neighbor = neighbor.max(diff / (lam * g.interval.diam()));
            }
        }
    }
    let flagged = live.iter().filter(|f| !f.within_budget).count();
    let max_fit_slope = live.iter().map(|f| f.slope.abs()).fold(0.0, f64::max);
    let raw = raw.into_iter().map(|v| if v.is_nan() { 0.0 } else { v }).collect();
    Ok(LipschitzGraph {
        start: knots[0],
        step,
        values,
        raw,
        sources,
        lipschitz,
        curvature_constant: curvature,
        max_abs,
        excluded_cells: excluded,
        flagged_fits: flagged,
        neighbor_constant: neighbor,
        max_fit_slope,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub z: Vec<usize>,
    pub f1: Vec<usize>,
    pub f2: Vec<usize>,
    /// Members of `F₂` for which no off-cone line with `α ≤ ε` was found.
    pub leaked: Vec<usize>,
    pub mass_z: f64,
    pub mass_f1: f64,
    pub mass_f2: f64,
    pub mass_leaked: f64,
}

/// `Z = {h = 0}`, `F₁ = {δ(B(x,h)) ≤ δ}`, `F₂` the rest, checked for an off-cone flat line.
pub fn partition_f(mu: &DiscreteMeasure, region: &StoppingRegion, cfg: &TransportConfig) -> Result<Partition> {
    let p = &region.params;
    let atoms = mu.atoms();
    let mut out = Partition::default();
    for (n, &i) in region.base.iter().enumerate() {
        let ht = &region.heights[n];
        let w = atoms[i].w;
        if ht.h == 0.0 {
            out.z.push(i);
            out.mass_z += w;
            continue;
        }
        let dens = ht.density_at_h.unwrap_or(0.0);
        if dens <= p.delta {
            out.f1.push(i);
            out.mass_f1 += w;
            continue;
        }
        out.f2.push(i);
        out.mass_f2 += w;
        let b = Ball::new(atoms[i].pos, ht.h)?;
        let half = PI / 2.0 - p.alpha;
        let found = half > 0.0 && {
            let mode = LineMode::Cone { alpha: half, base: Line::new(Point::default(), PI / 2.0) };
            alpha_line_below(mu, &b, mode, cfg, Some(p.eps))?.admits(p.eps)
        };
        if !found {
            out.leaked.push(i);
            out.mass_leaked += w;
        }
    }
    Ok(out)
}

/// Input measure mapped to the normalized frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub mu: DiscreteMeasure,
    pub b0: Ball,
    /// Angle of `D₀` in the original frame.
    pub d0_angle: f64,
    /// `α_{μ,D₀}(30B₀)` in the normalized frame.
    pub alpha_30: AlphaResult,
    /// Factor applied to the weights so that `δ_μ(B₀) = 1`.
    pub weight_scale: f64,
}

impl Normalized {
    pub fn to_original(&self, p: Point) -> Point {
        p.rotate(self.d0_angle).scale(self.b0.radius) + self.b0.center
    }
}

/// Centers and scales `B₀` to `B(0,1)`, rescales to `δ_μ(B₀) = 1`, and rotates the best line
/// through the center of `30B₀` onto the horizontal axis.
pub fn normalize(mu: &DiscreteMeasure, b0: &Ball, cfg: &TransportConfig) -> Result<Normalized> {
    let moved = mu.map_positions(|x| (x - b0.center).scale(1.0 / b0.radius));
    let unit = Ball::new(Point::default(), 1.0)?;
    let dens = density(&moved, &unit).1;
    if !(dens > 0.0) {
        return Err(Error::InvalidInput("B₀ carries no mass".into()));
    }
    let scaled = moved.scaled_weights(1.0 / dens);
    let big = Ball::new(Point::default(), 30.0)?;
    let d0 = alpha_line(&scaled, &big, LineMode::Search, cfg)?;
    let angle = match d0.witness {
        Some(Witness::Line(l)) => signed_angle(&l),
        _ => 0.0,
    };
    let rotated = scaled.map_positions(|x| x.rotate(-angle));
    let alpha_30 = alpha_line(&rotated, &big, LineMode::Fixed(Line::horizontal()), cfg)?;
    Ok(Normalized { mu: rotated, b0: *b0, d0_angle: angle, alpha_30, weight_scale: 1.0 / dens })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructConfig {
    /// `B₀` in the input frame.
    pub b0: Ball,
    /// Knot step of the graph; by default an eighth of the atom spacing near `B₀`.
    pub knot_step: Option<f64>,
    /// Every this many atoms of `F ∩ B̄₀` get the full monotonicity check (0 = none).
    pub verify_stride: usize,
    /// `C` in the closeness test `|𝒜(π(x)) − π⊥(x)| ≤ C·λ·D(π(x)) + α·step`.
    pub closeness_c: f64,
    /// Knots with `D ≤ fringe_factor·step` are interpolated from `Z`.
    pub fringe_factor: f64,
}

impl Default for ConstructConfig {
    fn default() -> Self {
        ConstructConfig {
            b0: Ball { center: Point::default(), radius: 1.0 },
            knot_step: None,
            verify_stride: 8,
            closeness_c: 10.0,
            fringe_factor: 40.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub mass_f: f64,
    pub mass_base: f64,
    pub mass_z: f64,
    pub mass_f1: f64,
    pub mass_f2: f64,
    pub mass_leaked: f64,
    pub atoms_base: usize,
    pub atoms_z: usize,
    pub atoms_f1: usize,
    pub atoms_f2: usize,
    pub atoms_leaked: usize,
    pub closeness_fraction: f64,
    pub closeness_c: f64,
    pub a_prime_l2_sq: f64,
    pub lipschitz: f64,
    pub curvature_constant: f64,
    pub max_abs: f64,
    pub lambda: f64,
    pub max_height: f64,
    /// `√ε/α`, the scale of the `h ≲ √ε/α` bound.
    pub height_band: f64,
    pub t_min: f64,
    pub non_monotone: usize,
    pub z_slope_violations: usize,
    pub cone_slope_constant: f64,
    pub whitney_intervals: usize,
    pub whitney_scale_violations: usize,
    pub whitney_overlap_10: usize,
    pub whitney_multiplicity_2: usize,
    pub pou_d1_constant: f64,
    pub pou_d2_constant: f64,
    pub neighbor_constant: f64,
    pub excluded_cells: usize,
    pub flagged_fits: usize,
    pub alpha_30: f64,
    pub alpha_30_tolerance: f64,
}

impl GraphReport {
    /// Flat `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("mass_f = {}\n", self.mass_f));
        out.push_str(&format!("mass_base = {}\n", self.mass_base));
        out.push_str(&format!("mass_z = {}\n", self.mass_z));
        out.push_str(&format!("mass_f1 = {}\n", self.mass_f1));
        out.push_str(&format!("mass_f2 = {}\n", self.mass_f2));
        out.push_str(&format!("mass_leaked = {}\n", self.mass_leaked));
        out.push_str(&format!("atoms_base = {}\n", self.atoms_base));
        out.push_str(&format!("atoms_z = {}\n", self.atoms_z));
        out.push_str(&format!("atoms_f1 = {}\n", self.atoms_f1));
        out.push_str(&format!("atoms_f2 = {}\n", self.atoms_f2));
        out.push_str(&format!("atoms_leaked = {}\n", self.atoms_leaked));
        out.push_str(&format!("closeness_fraction = {}\n", self.closeness_fraction));
        out.push_str(&format!("closeness_c = {}\n", self.closeness_c));
        out.push_str(&format!("a_prime_l2_sq = {}\n", self.a_prime_l2_sq));
        out.push_str(&format!("lipschitz = {}\n", self.lipschitz));
        out.push_str(&format!("curvature_constant = {}\n", self.curvature_constant));
        out.push_str(&format!("max_abs = {}\n", self.max_abs));
        out.push_str(&format!("lambda = {}\n", self.lambda));
        out.push_str(&format!("max_height = {}\n", self.max_height));
        out.push_str(&format!("height_band = {}\n", self.height_band));
        out.push_str(&format!("t_min = {}\n", self.t_min));
        out.push_str(&format!("non_monotone = {}\n", self.non_monotone));
        out.push_str(&format!("z_slope_violations = {}\n", self.z_slope_violations));
        out.push_str(&format!("cone_slope_constant = {}\n", self.cone_slope_constant));
        out.push_str(&format!("whitney_intervals = {}\n", self.whitney_intervals));
        out.push_str(&format!("whitney_scale_violations = {}\n", self.whitney_scale_violations));
        out.push_str(&format!("whitney_overlap_10 = {}\n", self.whitney_overlap_10));
        out.push_str(&format!("whitney_multiplicity_2 = {}\n", self.whitney_multiplicity_2));
        out.push_str(&format!("pou_d1_constant = {}\n", self.pou_d1_constant));
        out.push_str(&format!("pou_d2_constant = {}\n", self.pou_d2_constant));
        out.push_str(&format!("neighbor_constant = {}\n", self.neighbor_constant));
        out.push_str(&format!("excluded_cells = {}\n", self.excluded_cells));
        out.push_str(&format!("flagged_fits = {}\n", self.flagged_fits));
        out.push_str(&format!("alpha_30 = {}\n", self.alpha_30));
        out.push_str(&format!("alpha_30_tolerance = {}\n", self.alpha_30_tolerance));
        out
    }
}

/// `|π⊥(x)−π⊥(y)| ≤ 2α|π(x)−π(y)|` over pairs of `Z` atoms; returns the violation count.
pub fn z_slope_violations(points: &[Point], alpha: f64) -> usize {
    let mut sorted: Vec<Point> = points.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let mut bad = 0;
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            let (a, b) = (sorted[i], sorted[j]);
            if (a.y - b.y).abs() > 2.0 * alpha * (a.x - b.x).abs() + 1e-12 {
                bad += 1;
            }
        }
    }
    bad
}

/// Smallest `C` with `|π⊥(x)−π⊥(y)| ≤ (α + C√λ)|π(x)−π(y)|` over sampled pairs of `S`
/// separated by `√λ·max(t₁,t₂)`.
pub fn cone_slope_constant(pairs: &[SPair], alpha: f64, lambda: f64) -> f64 {
    let sl = lambda.sqrt();
    let mut c: f64 = 0.0;
    for (i, a) in pairs.iter().enumerate() {
        for b in &pairs[i + 1..] {
            if a.pos.dist(b.pos) < sl * a.t.max(b.t) {
                continue;
            }
            let dx = (a.pos.x - b.pos.x).abs();
            let dy = (a.pos.y - b.pos.y).abs();
            if dx == 0.0 {
                if dy > 0.0 {
                    return f64::INFINITY;
                }
                continue;
            }
            c = c.max((dy / dx - alpha) / sl);
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Construction {
    pub normalized: Normalized,
    /// Atom indices of `F` (the atoms inside `10B₀`) in the normalized measure.
    pub f: Vec<usize>,
    pub region: StoppingRegion,
    pub partition: Partition,
    pub profile: ConeProfile,
    pub cover: WhitneyCover,
    pub pou: PartitionOfUnity,
    pub fits: Vec<Option<IntervalFit>>,
    pub graph: LipschitzGraph,
    pub report: GraphReport,
}

/// The full pipeline: normalization, heights, partition, Whitney cover, fits, graph and report.
pub fn construct(mu: &DiscreteMeasure, cc: &ConstructConfig, p: &StopParams, cfg: &TransportConfig) -> Result<Construction> {
    p.validate()?;
    let normalized = normalize(mu, &cc.b0, cfg)?;
    let nm = &normalized.mu;
    let f: Vec<usize> = (0..nm.len()).filter(|&i| nm.atoms()[i].pos.norm() < 10.0).collect();
    let region = StoppingRegion::build(nm, &f, p, cfg, cc.verify_stride)?;
    let partition = partition_f(nm, &region, cfg)?;
    let profile = region.big_d();
    let spacing = region.t_min / p.t_min_factor;
    let step = cc.knot_step.unwrap_or(spacing / 8.0);
    let knots = knot_grid(step);
    let floor = cc.fringe_factor * step;
    let cover = if profile.is_empty() {
        WhitneyCover { intervals: Vec::new(), floor, scale_violations: 0, overlap_10: 0, multiplicity_2: 0 }
    } else {
        whitney_cover(&profile, &knots, floor)?
    };
    let pou = partition_of_unity(&cover.intervals, &knots)?;
    let mut fits = Vec::with_capacity(cover.intervals.len());
    for iv in &cover.intervals {
        let (a, b) = iv.dilate(2.0);
        // only intervals reaching the support of the cutoff matter
        if b <= -2.0 || a >= 2.0 {
            fits.push(None);
        } else {
            fits.push(Some(interval_ball_line(iv, &region, nm, cfg)?));
        }
    }
    let z_points: Vec<(Point, f64)> = partition.z.iter().map(|&i| (nm.atoms()[i].pos, nm.atoms()[i].w)).collect();
    let graph = assemble_graph(&knots, &profile, &cover, &pou, &fits, &z_points, p)?;
    let report = graph_report(nm, &f, &region, &partition, &profile, &cover, &pou, &graph, &normalized, cc)?;
    Ok(Construction { normalized, f, region, partition, profile, cover, pou, fits, graph, report })
}

/// Masses, closeness of `F` to the graph, and the certificates gathered along the way.
#[allow(clippy::too_many_arguments)]
pub fn graph_report(
    mu: &DiscreteMeasure,
    f: &[usize],
    region: &StoppingRegion,
    part: &Partition,
    profile: &ConeProfile,
    cover: &WhitneyCover,
    pou: &PartitionOfUnity,
    graph: &LipschitzGraph,
    normalized: &Normalized,
    cc: &ConstructConfig,
) -> Result<GraphReport> {
    let p = &region.params;
    let atoms = mu.atoms();
    let lam = p.lambda();
    let mass_f: f64 = f.iter().map(|&i| atoms[i].w).sum();
    let mass_base: f64 = region.base.iter().map(|&i| atoms[i].w).sum();
    let slack = p.alpha * graph.step;
    let mut close_mass = 0.0;
    for &i in f {
        let x = atoms[i].pos;
        let dp = profile.value(x.x);
        let gap = (graph.value_at(x.x) - x.y).abs();
        if gap <= cc.closeness_c * lam * dp + slack {
            close_mass += atoms[i].w;
        }
    }
    let z_pts: Vec<Point> = part.z.iter().map(|&i| atoms[i].pos).collect();
    Ok(GraphReport {
        mass_f,
        mass_base,
        mass_z: part.mass_z,
        mass_f1: part.mass_f1,
        mass_f2: part.mass_f2,
        mass_leaked: part.mass_leaked,
        atoms_base: region.base.len(),
        atoms_z: part.z.len(),
        atoms_f1: part.f1.len(),
        atoms_f2: part.f2.len(),
        atoms_leaked: part.leaked.len(),
        closeness_fraction: if mass_f > 0.0 { close_mass / mass_f } else { 1.0 },
        closeness_c: cc.closeness_c,
        a_prime_l2_sq: graph.derivative_l2_sq(),
        lipschitz: graph.lipschitz,
        curvature_constant: graph.curvature_constant,
        max_abs: graph.max_abs,
        lambda: lam,
        max_height: region.max_height(),
        height_band: p.eps.sqrt() / p.alpha,
        t_min: region.t_min,
        non_monotone: region.non_monotone(),
        z_slope_violations: z_slope_violations(&z_pts, p.alpha),
        cone_slope_constant: cone_slope_constant(&region.pairs, p.alpha, lam),
        whitney_intervals: cover.intervals.len(),
        whitney_scale_violations: cover.scale_violations,
        whitney_overlap_10: cover.overlap_10,
        whitney_multiplicity_2: cover.multiplicity_2,
        pou_d1_constant: pou.d1_constant,
        pou_d2_constant: pou.d2_constant,
        neighbor_constant: graph.neighbor_constant,
        excluded_cells: graph.excluded_cells,
        flagged_fits: graph.flagged_fits,
        alpha_30: normalized.alpha_30.value,
        alpha_30_tolerance: normalized.alpha_30.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{generate, GenSpec};
    use proptest::prelude::*;

    struct Const(f64);
    impl Profile1d for Const {
        fn value(&self, _: f64) -> f64 {
            self.0
        }
        fn inf_on(&self, _: f64, _: f64) -> f64 {
            self.0
        }
    }

    struct Abs;
    impl Profile1d for Abs {
        fn value(&self, p: f64) -> f64 {
            p.abs()
        }
        fn inf_on(&self, a: f64, b: f64) -> f64 {
            if a <= 0.0 && b >= 0.0 {
                0.0
            } else {
                a.abs().min(b.abs())
            }
        }
    }

    fn tight() -> StopParams {
        StopParams { delta: 0.4, eps: 1e-8, alpha: 1e-1, theta: 1e-2, ..StopParams::default() }
    }

    #[test]
    fn hierarchy_at_equality_is_accepted() {
        tight().validate().unwrap();
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let mut p = tight();
        p.k = 4;
        assert!(p.validate().is_err());
        let mut p = tight();
        p.eps = 1e-6;
        assert!(p.validate().is_err());
        let mut p = tight();
        p.delta = 1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn lambda_value() {
        assert!((tight().lambda() - 1e-4 / 0.4).abs() < 1e-18);
    }

    #[test]
    fn grid_descends_to_floor() {
        let g = tight().t_grid(0.1);
        assert_eq!(g[0], T_MAX);
        assert_eq!(*g.last().unwrap(), 0.1);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        assert!((g[2] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_profile_gives_one_thirty_second() {
        let iv = whitney_interval(&Const(1.0), 0.3).unwrap();
        assert_eq!(iv.diam(), 1.0 / 32.0);
        assert!(iv.lo() <= 0.3 && 0.3 < iv.hi());
    }

    #[test]
    fn abs_profile_at_one() {
        let iv = whitney_interval(&Abs, 1.0).unwrap();
        assert_eq!((iv.lo(), iv.hi()), (1.0, 33.0 / 32.0));
    }

    #[test]
    fn cover_of_abs_satisfies_whitney_bounds() {
        let knots: Vec<f64> = (-400..=400).map(|j| j as f64 / 100.0).collect();
        let c = whitney_cover(&Abs, &knots, 0.4).unwrap();
        assert!(!c.intervals.is_empty());
        assert_eq!(c.scale_violations, 0);
        assert!(c.intervals.windows(2).all(|w| w[0].hi() <= w[1].lo()));
        assert!(c.multiplicity_2 <= 3, "{}", c.multiplicity_2);
        assert!(c.overlap_10 <= 40, "{}", c.overlap_10);
    }

    #[test]
    fn cover_refuses_a_floor_below_resolution() {
        let knots: Vec<f64> = (0..100).map(|j| j as f64 * 0.01).collect();
        assert!(matches!(whitney_cover(&Abs, &knots, 0.1), Err(Error::Guard(_))));
    }

    #[test]
    fn smoother_derivatives_match_differences() {
        let h = 1e-5;
        for u in [0.1, 0.3, 0.5, 0.77, 0.95] {
            let (_, d1, d2) = smoother(u);
            let fd1 = (smoother(u + h).0 - smoother(u - h).0) / (2.0 * h);
            let fd2 = (smoother(u + h).1 - smoother(u - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-6);
            assert!((d2 - fd2).abs() < 1e-5);
        }
        assert_eq!(smoother(0.0), (0.0, 0.0, 0.0));
        assert_eq!(smoother(1.0), (1.0, 0.0, 0.0));
    }

    #[test]
    fn partition_sums_to_one_with_scale_invariant_derivatives() {
        let knots: Vec<f64> = (-400..=400).map(|j| j as f64 / 100.0).collect();
        let c = whitney_cover(&Abs, &knots, 0.4).unwrap();
        let pou = partition_of_unity(&c.intervals, &knots).unwrap();
        assert!(pou.sum_error < 1e-12);
        assert!(pou.d1_constant < 10.0, "{}", pou.d1_constant);
        assert!(pou.d2_constant < 200.0, "{}", pou.d2_constant);
        for &p in &knots {
            if p.abs() > 0.6 {
                assert!(!pou.terms(p).is_empty(), "uncovered {p}");
            }
        }
    }

    #[test]
    fn partition_derivative_matches_differences() {
        let ivs: Vec<Interval> = (0..8).map(|j| Interval { level: -3, index: j }).collect();
        let pou = partition_of_unity(&ivs, &[]).unwrap();
        let h = 1e-6;
        let at = |p: f64, i: usize| pou.terms(p).iter().find(|t| t.0 == i).map_or(0.0, |t| t.1);
        for p in [0.1, 0.26, 0.4, 0.55] {
            for t in pou.terms(p) {
                let fd = (at(p + h, t.0) - at(p - h, t.0)) / (2.0 * h);
                assert!((fd - t.2).abs() < 1e-4, "p={p} i={} {fd} {}", t.0, t.2);
            }
        }
    }

    #[test]
    fn z_slope_counts() {
        let pts = [Point::new(0.0, 0.0), Point::new(1.0, 0.1), Point::new(2.0, 1.0)];
        assert_eq!(z_slope_violations(&pts[..2], 0.1), 0);
        assert_eq!(z_slope_violations(&pts, 0.1), 2);
    }

    #[test]
    fn cone_slope_constant_of_flat_pairs_is_zero() {
        let pairs: Vec<SPair> = (0..5).map(|i| SPair { atom: i, pos: Point::new(i as f64 * 0.2, 0.0), t: 0.0 }).collect();
        assert_eq!(cone_slope_constant(&pairs, 0.1, 1e-4), 0.0);
    }

    #[test]
    fn segment_is_in_s_total_and_empty_space_is_not() {
        let mu = generate(&GenSpec::Segment { a: -60.0, b: 60.0, spacing: 0.05 }).unwrap();
        let p = tight();
        let cfg = TransportConfig::default();
        let m = in_s_total(&mu, Point::new(0.0, 0.0), 1.0, &p, &cfg).unwrap();
        assert!(m.member);
        assert!((m.density - 1.0).abs() < 0.06);
        let off = in_s_total(&mu, Point::new(0.0, 0.9), 0.5, &p, &cfg).unwrap();
        assert!(!off.member && off.line.is_none());
        assert!(in_s_total(&mu, Point::new(2.0, 0.0), 1.0, &p, &cfg).is_err());
        assert!(in_s_total(&mu, Point::default(), 20.0, &p, &cfg).is_err());
    }

    #[test]
    fn segment_construction_is_all_z_with_flat_graph() {
        let mu = generate(&GenSpec::Segment { a: -60.0, b: 60.0, spacing: 0.1 }).unwrap();
        let cc = ConstructConfig { verify_stride: 0, ..ConstructConfig::default() };
        let c = construct(&mu, &cc, &tight(), &TransportConfig::default()).unwrap();
        let r = &c.report;
        assert_eq!(r.atoms_z, r.atoms_base);
        assert!(r.atoms_base >= 20);
        assert!(r.max_abs < 10.0 * TransportConfig::default().angle_tol, "{}", r.max_abs);
        assert!((r.closeness_fraction - 1.0).abs() < 1e-12);
        assert_eq!(r.z_slope_violations, 0);
        for &i in &c.partition.z {
            assert_eq!(c.region.d(c.normalized.mu.atoms()[i].pos), 0.0);
        }
    }

    proptest! {
        #[test]
        fn cone_profile_matches_brute_force(
            cones in prop::collection::vec((-5.0f64..5.0, 0.0f64..3.0), 1..30),
            a in -6.0f64..6.0,
            w in 0.0f64..2.0,
        ) {
            let prof = ConeProfile::new(cones.clone());
            let b = a + w;
            let brute = cones.iter().map(|&(q, t)| {
                let g = if q < a { a - q } else if q > b { q - b } else { 0.0 };
                g + t
            }).fold(f64::INFINITY, f64::min);
            prop_assert!((prof.inf_on(a, b) - brute).abs() < 1e-12);
        }

        #[test]
        fn cone_profile_is_one_lipschitz(
            cones in prop::collection::vec((-5.0f64..5.0, 0.0f64..3.0), 1..30),
            p in -6.0f64..6.0,
            q in -6.0f64..6.0,
        ) {
            let prof = ConeProfile::new(cones);
            prop_assert!((prof.value(p) - prof.value(q)).abs() <= (p - q).abs() + 1e-12);
        }

        #[test]
        fn whitney_intervals_satisfy_the_stopping_rule(
            cones in prop::collection::vec((-3.0f64..3.0, 0.05f64..2.0), 1..10),
            p in -3.0f64..3.0,
        ) {
            let prof = ConeProfile::new(cones);
            let iv = whitney_interval(&prof, p).unwrap();
            prop_assert!(iv.lo() <= p && p < iv.hi());
            prop_assert!(iv.diam() <= prof.inf_on(iv.lo(), iv.hi()) / 20.0);
            let parent = Interval::containing(p, iv.level + 1);
            prop_assert!(parent.diam() > prof.inf_on(parent.lo(), parent.hi()) / 20.0);
        }
    }
}
