//! Planar discrete measures, balls, lines, spike models and generators.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn polar(r: f64, theta: f64) -> Self {
        Point::new(r * theta.cos(), r * theta.sin())
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// Rotation about the origin.
    pub fn rotate(self, theta: f64) -> Point {
        let (s, c) = theta.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub pos: Point,
    pub w: f64,
}

/// Finite weighted atom set. Duplicate positions are allowed and add up.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        for (i, a) in atoms.iter().enumerate() {
            if !(a.w > 0.0 && a.w.is_finite()) {
                return Err(Error::InvalidInput(format!("atom {i}: weight {} must be positive and finite", a.w)));
            }
            if !(a.pos.x.is_finite() && a.pos.y.is_finite()) {
                return Err(Error::InvalidInput(format!("atom {i}: non-finite position")));
            }
        }
        Ok(DiscreteMeasure { atoms })
    }

    pub fn empty() -> Self {
        DiscreteMeasure { atoms: Vec::new() }
    }

    pub fn from_points(pts: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(pts.iter().map(|&(x, y, w)| Atom { pos: Point::new(x, y), w }).collect())
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    /// Multiplies every weight by `s > 0`.
    pub fn scaled_weights(&self, s: f64) -> Self {
        DiscreteMeasure { atoms: self.atoms.iter().map(|a| Atom { pos: a.pos, w: a.w * s }).collect() }
    }

    /// Applies `p ↦ f(p)` to every position.
    pub fn map_positions(&self, f: impl Fn(Point) -> Point) -> Self {
        DiscreteMeasure { atoms: self.atoms.iter().map(|a| Atom { pos: f(a.pos), w: a.w }).collect() }
    }

    /// Dilation about the origin by `s`, with weights scaled by `s` as well.
    pub fn dilate(&self, s: f64) -> Self {
        DiscreteMeasure { atoms: self.atoms.iter().map(|a| Atom { pos: a.pos.scale(s), w: a.w * s }).collect() }
    }

    pub fn union(&self, other: &DiscreteMeasure) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        DiscreteMeasure { atoms }
    }

    pub fn restrict(&self, idx: &[usize]) -> Self {
        DiscreteMeasure { atoms: idx.iter().map(|&i| self.atoms[i]).collect() }
    }

    /// Atoms inside the open ball.
    pub fn in_ball(&self, b: &Ball) -> impl Iterator<Item = &Atom> + '_ {
        let (c, r) = (b.center, b.radius);
        self.atoms.iter().filter(move |a| a.pos.dist(c) < r)
    }

    /// Median nearest-neighbour distance, a proxy for the sampling spacing.
    pub fn spacing_estimate(&self) -> f64 {
        let n = self.atoms.len();
        if n < 2 {
            return 0.0;
        }
        let pts: Vec<Point> = self.atoms.iter().map(|a| a.pos).collect();
        let mut nn = crate::geom::nearest_neighbor_distances(&pts);
        nn.retain(|d| *d > 0.0);
        if nn.is_empty() {
            return 0.0;
        }
        nn.sort_by(f64::total_cmp);
        nn[nn.len() / 2]
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut s = String::with_capacity(self.atoms.len() * 72 + 8);
        s.push_str("x y w\n");
        for a in &self.atoms {
            let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", a.pos.x, a.pos.y, a.w);
        }
        w.write_all(s.as_bytes())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut atoms = Vec::new();
        // a blank file is the empty measure
        let mut header_seen = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Io(e.to_string()))?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = body.split_whitespace().collect();
                if cols != ["x", "y", "w"] {
                    return Err(Error::Parse { line: lineno + 1, msg: format!("expected header `x y w`, found `{body}`") });
                }
                header_seen = true;
                continue;
            }
            let mut vals = [0.0f64; 3];
            let mut it = body.split_whitespace();
            for (k, name) in ["x", "y", "w"].iter().enumerate() {
                let tok = it
                    .next()
                    .ok_or_else(|| Error::Parse { line: lineno + 1, msg: format!("missing field {name}") })?;
                vals[k] = tok
                    .parse()
                    .map_err(|_| Error::Parse { line: lineno + 1, msg: format!("field {name}: cannot parse `{tok}`") })?;
            }
            if it.next().is_some() {
                return Err(Error::Parse { line: lineno + 1, msg: "more than three fields".into() });
            }
            atoms.push(Atom { pos: Point::new(vals[0], vals[1]), w: vals[2] });
        }
        DiscreteMeasure::new(atoms)
    }
}

/// Open ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!("ball radius {radius} must be positive")));
        }
        Ok(Ball { center, radius })
    }

    /// `ΛB`: same center, radius multiplied by `lambda`.
    pub fn dilate(&self, lambda: f64) -> Ball {
        Ball { center: self.center, radius: self.radius * lambda }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.dist(self.center) < self.radius
    }

    /// Whether `self ⊂ other` as open balls.
    pub fn inside(&self, other: &Ball) -> bool {
        self.center.dist(other.center) + self.radius <= other.radius
    }
}

/// Affine line through `base` with direction angle in `[0, π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub base: Point,
    pub angle: f64,
}

pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

impl Line {
    pub fn new(base: Point, angle: f64) -> Self {
        Line { base, angle: normalize_angle(angle) }
    }

    pub fn horizontal() -> Self {
        Line::new(Point::default(), 0.0)
    }

    pub fn direction(&self) -> Point {
        Point::polar(1.0, self.angle)
    }

    /// Acute angle between the two lines, in `[0, π/2]`.
    pub fn angle_to(&self, other: &Line) -> f64 {
        let d = (self.angle - other.angle).abs() % PI;
        d.min(PI - d)
    }

    pub fn distance(&self, p: Point) -> f64 {
        let e = self.direction();
        let v = p - self.base;
        (v.x * e.y - v.y * e.x).abs()
    }
}

/// k-spike model: `m` lines through `vertex` at angles `base_angle + πn/m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeMeasure {
    pub vertex: Point,
    pub base_angle: f64,
    pub m: u32,
    pub k: u32,
    pub density: f64,
}

impl SpikeMeasure {
    pub fn new(vertex: Point, base_angle: f64, m: u32, k: u32, density: f64) -> Result<Self> {
        if m == 0 || k == 0 || k % m != 0 {
            return Err(Error::InvalidInput(format!("ray count m={m} must divide k={k}")));
        }
        if !(density > 0.0 && density.is_finite()) {
            return Err(Error::InvalidInput(format!("linear density {density} must be positive")));
        }
        let period = PI / m as f64;
        Ok(SpikeMeasure { vertex, base_angle: base_angle.rem_euclid(period), m, k, density })
    }

    pub fn line(line: &Line, density: f64) -> Self {
        SpikeMeasure { vertex: line.base, base_angle: line.angle, m: 1, k: 1, density }
    }

    pub fn lines(&self) -> Vec<Line> {
        (0..self.m).map(|n| Line::new(self.vertex, self.base_angle + PI * n as f64 / self.m as f64)).collect()
    }

    /// Exact mass `ν(B)` of an open ball: density times total chord length.
    pub fn mass_in(&self, b: &Ball) -> f64 {
        self.lines().iter().map(|l| chord(l, b).map_or(0.0, |(t0, t1)| t1 - t0)).sum::<f64>() * self.density
    }

    pub fn density_in(&self, b: &Ball) -> f64 {
        self.mass_in(b) / (2.0 * b.radius)
    }

    pub fn dist_to_support(&self, p: Point) -> f64 {
        self.lines().iter().map(|l| l.distance(p)).fold(f64::INFINITY, f64::min)
    }
}

/// Parameter interval `(t0, t1)` of `base + t·e` inside the open ball, if nonempty.
pub fn chord(l: &Line, b: &Ball) -> Option<(f64, f64)> {
    let e = l.direction();
    let v = l.base - b.center;
    let p = v.dot(e);
    let q = v.dot(v) - b.radius * b.radius;
    let disc = p * p - q;
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some((-p - s, -p + s))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub loc: Point,
    pub scale: f64,
}

impl ScalePoint {
    pub fn new(loc: Point, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidInput(format!("scale {scale} must be positive")));
        }
        Ok(ScalePoint { loc, scale })
    }
}

/// Mass of the open ball and its density `μ(B)/2r`.
pub fn density(mu: &DiscreteMeasure, b: &Ball) -> (f64, f64) {
    let mass: f64 = mu.in_ball(b).map(|a| a.w).sum();
    (mass, mass / (2.0 * b.radius))
}

/// Midpoint quadrature of the spike restricted to `window`, weight `c·spacing` per atom.
pub fn discretize_model(nu: &SpikeMeasure, window: &Ball, spacing: f64) -> Result<DiscreteMeasure> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidInput(format!("spacing {spacing} must be positive")));
    }
    let mut atoms = Vec::new();
    for l in nu.lines() {
        let Some((t0, t1)) = chord(&l, window) else { continue };
        let n = ((t1 - t0) / spacing).round() as usize;
        if n == 0 {
            continue;
        }
        let mid = 0.5 * (t0 + t1);
        let e = l.direction();
        let off = 0.5 * (n as f64 - 1.0);
        for j in 0..n {
            let t = mid + (j as f64 - off) * spacing;
            atoms.push(Atom { pos: l.base + e.scale(t), w: nu.density * spacing });
        }
    }
    Ok(DiscreteMeasure { atoms })
}

/// `D_ν = sup δ_ν(B(x,r))/δ_ν(B(z,s))` over support-centered balls, which is `m`.
pub fn density_ratio_spike(nu: &SpikeMeasure) -> f64 {
    nu.m as f64
}

/// Grid-search estimate of `sup δ_ν(B)/δ_ν(B′)` over support-centered balls.
pub fn density_ratio_grid(nu: &SpikeMeasure, n_centers: usize, n_radii: usize) -> f64 {
    let lines = nu.lines();
    let mut centers = vec![nu.vertex];
    for l in &lines {
        for i in 1..=n_centers {
            let t = 4.0 * i as f64 / n_centers as f64;
            centers.push(l.base + l.direction().scale(t));
            centers.push(l.base + l.direction().scale(-t));
        }
    }
    let radii: Vec<f64> = (0..n_radii).map(|i| 0.01 * (1000f64).powf(i as f64 / (n_radii - 1).max(1) as f64)).collect();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for c in &centers {
        for &r in &radii {
            let d = nu.density_in(&Ball { center: *c, radius: r });
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    hi / lo
}

/// Result of the numeric `λ_ν` search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaEstimate {
    pub value: f64,
    /// Change of the value between the last two grid refinements.
    pub refinement_change: f64,
    pub converged: bool,
}

/// Largest `t/r` over `z` on the support for a fixed `x`, with `r = 1`.
fn lambda_inner(nu_m: u32, d: f64, n_z: usize) -> f64 {
    if nu_m == 1 {
        return 1.0;
    }
    let sep = (PI / nu_m as f64).sin();
    // x sits on ray 0 at distance d; z runs over every ray of every line.
    let x = Point::new(d, 0.0);
    let mut best: f64 = 0.0;
    for ray in 0..2 * nu_m {
        let dir = Point::polar(1.0, PI * ray as f64 / nu_m as f64);
        for i in 0..=n_z {
            let rho = (d + 1.0) * i as f64 / n_z as f64;
            let z = dir.scale(rho);
            let t = (1.0 - z.dist(x)).min(rho * sep / 120.0);
            best = best.max(t);
        }
    }
    best
}

/// Numeric `λ_ν` from its definition, via an `(x, z)` grid at `r = 1`.
pub fn lambda_constant(nu: &SpikeMeasure, n_grid: usize, tol: f64) -> LambdaEstimate {
    let eval = |n: usize| {
        let mut v = f64::INFINITY;
        for i in 0..=n {
            let d = 2.0 * i as f64 / n as f64;
            v = v.min(lambda_inner(nu.m, d, 4 * n));
        }
        v
    };
    let coarse = eval(n_grid);
    let fine = eval(2 * n_grid);
    let change = (fine - coarse).abs();
    LambdaEstimate { value: fine, refinement_change: change, converged: change <= tol }
}

/// `λ_k = min over m | k of λ_ν`, cached per `k`.
pub fn lambda_k(k: u32) -> f64 {
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<u32, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&k) {
        return *v;
    }
    let mut v: f64 = 1.0;
    for m in (1..=k).filter(|m| k % m == 0) {
        let nu = SpikeMeasure::new(Point::default(), 0.0, m, k, 1.0).expect("m divides k");
        v = v.min(lambda_constant(&nu, 400, 1e-6).value);
    }
    cache.lock().unwrap().insert(k, v);
    v
}

/// `D_k = sup over ν ∈ S_k of D_ν = k`.
pub fn density_ratio_k(k: u32) -> f64 {
    k as f64
}

/// One-dimensional measure on the real axis.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LineMeasure {
    /// `(position, weight)`, sorted by position.
    pub atoms: Vec<(f64, f64)>,
}

impl LineMeasure {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Self {
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        LineMeasure { atoms }
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// Mass of the open interval `(p − r, p + r)`.
    pub fn mass_open(&self, p: f64, r: f64) -> f64 {
        let lo = self.atoms.partition_point(|a| a.0 <= p - r);
        let hi = self.atoms.partition_point(|a| a.0 < p + r);
        self.atoms[lo..hi.max(lo)].iter().map(|a| a.1).sum()
    }

    pub fn max_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).fold(0.0, f64::max)
    }
}

/// `π_#(μ|subset)` with `π` the projection onto the real axis.
pub fn pushforward_projection(mu: &DiscreteMeasure, subset: &[usize]) -> Result<LineMeasure> {
    let n = mu.len();
    let mut atoms = Vec::with_capacity(subset.len());
    for &i in subset {
        if i >= n {
            return Err(Error::InvalidInput(format!("atom index {i} out of range ({n} atoms)")));
        }
        let a = mu.atoms[i];
        atoms.push((a.pos.x, a.w));
    }
    Ok(LineMeasure::new(atoms))
}

/// Densities `δ_μ(B(x,r))` over the given scales.
pub fn density_profile(mu: &DiscreteMeasure, x: Point, scales: &[f64]) -> Result<Vec<(f64, f64)>> {
    if scales.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidInput("scales must be positive".into()));
    }
    if scales.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidInput("scales must be descending".into()));
    }
    Ok(scales.iter().map(|&r| (r, density(mu, &Ball { center: x, radius: r }).1)).collect())
}

/// Geometric scale grid from `hi` down to `lo` with `per_octave` points per halving.
pub fn geometric_scales(hi: f64, lo: f64, per_octave: usize) -> Vec<f64> {
    let n = ((hi / lo).log2() * per_octave as f64).ceil() as usize;
    (0..=n).map(|i| hi * 2f64.powf(-(i as f64) / per_octave as f64)).collect()
}

/// Sampled graph `t ↦ A(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphProfile {
    Flat,
    /// `a·t`.
    Affine { slope: f64 },
    /// `a·w·exp(−(t/w)²)·e^{1/2}/√2`, peak slope `a`.
    Bump { slope: f64, width: f64 },
    /// `a·w·sin(t/w)`, peak slope `a`.
    Wave { slope: f64, width: f64 },
    /// Triangle wave of slope `±a` and period `2w`, vanishing outside `|t| < 2w·teeth`.
    Saw { slope: f64, width: f64, teeth: u32 },
}

impl GraphProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            GraphProfile::Flat => 0.0,
            GraphProfile::Affine { slope } => slope * t,
            GraphProfile::Bump { slope, width } => {
                let u = t / width;
                slope * width * (-u * u).exp() * (0.5f64).exp().sqrt() / std::f64::consts::SQRT_2
            }
            GraphProfile::Wave { slope, width } => slope * width * (t / width).sin(),
            GraphProfile::Saw { slope, width, teeth } => {
                if t.abs() >= 2.0 * width * teeth as f64 {
                    0.0
                } else {
                    slope * (width - (t.rem_euclid(2.0 * width) - width).abs())
                }
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            GraphProfile::Flat => 0.0,
            GraphProfile::Affine { slope } => slope,
            GraphProfile::Bump { slope, width } => {
                let u = t / width;
                -2.0 * u * slope * (-u * u).exp() * (0.5f64).exp().sqrt() / std::f64::consts::SQRT_2
            }
            GraphProfile::Wave { slope, width } => slope * (t / width).cos(),
            GraphProfile::Saw { slope, width, teeth } => {
                if t.abs() >= 2.0 * width * teeth as f64 {
                    0.0
                } else if t.rem_euclid(2.0 * width) < width {
                    slope
                } else {
                    -slope
                }
            }
        }
    }
}

/// Generator specifications.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenSpec {
    /// Endpoint-inclusive nodes `a + jh` on `[a, b] × {0}`, weight `h`.
    Segment { a: f64, b: f64, spacing: f64 },
    Spike { spike: SpikeMeasure, window: Ball, spacing: f64 },
    /// Four-corner Cantor set of generation `n` in `[0,1]²`; total mass equals the diameter `√2`.
    Cantor { level: u32 },
    /// Arclength quadrature of `t ↦ (t, A(t))` at nodes `a + jh`.
    LipschitzGraph { a: f64, b: f64, spacing: f64, profile: GraphProfile },
    /// Segment plus vertical displacements uniform in `[−η, η]`.
    PerturbedLine { a: f64, b: f64, spacing: f64, eta: f64, seed: u64 },
}

pub fn generate(spec: &GenSpec) -> Result<DiscreteMeasure> {
    let nodes = |a: f64, b: f64, h: f64| -> Result<Vec<f64>> {
        if !(h > 0.0) || !(b > a) {
            return Err(Error::InvalidInput(format!("need a < b and spacing > 0 (a={a}, b={b}, h={h})")));
        }
        let n = ((b - a) / h + 1e-9).floor() as usize;
        if n > 50_000_000 {
            return Err(Error::InvalidInput(format!("{n} atoms exceeds the generator limit")));
        }
        Ok((0..=n).map(|j| a + j as f64 * h).collect())
    };
    match *spec {
        GenSpec::Segment { a, b, spacing } => {
            let atoms = nodes(a, b, spacing)?.into_iter().map(|t| Atom { pos: Point::new(t, 0.0), w: spacing }).collect();
            DiscreteMeasure::new(atoms)
        }
        GenSpec::Spike { spike, window, spacing } => discretize_model(&spike, &window, spacing),
        GenSpec::Cantor { level } => {
            if level > 12 {
                return Err(Error::InvalidInput(format!("cantor generation {level} exceeds 12")));
            }
            let mut centers = vec![Point::new(0.5, 0.5)];
            let mut side = 1.0;
            for _ in 0..level {
                side /= 4.0;
                let off = 1.5 * side;
                let mut next = Vec::with_capacity(centers.len() * 4);
                for c in &centers {
                    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                        next.push(Point::new(c.x + sx * off, c.y + sy * off));
                    }
                }
                centers = next;
            }
            let w = std::f64::consts::SQRT_2 / centers.len() as f64;
            DiscreteMeasure::new(centers.into_iter().map(|pos| Atom { pos, w }).collect())
        }
        GenSpec::LipschitzGraph { a, b, spacing, profile } => {
            let atoms = nodes(a, b, spacing)?
                .into_iter()
                .map(|t| {
                    let d = profile.derivative(t);
                    Atom { pos: Point::new(t, profile.value(t)), w: spacing * (1.0 + d * d).sqrt() }
                })
                .collect();
            DiscreteMeasure::new(atoms)
        }
        GenSpec::PerturbedLine { a, b, spacing, eta, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let atoms = nodes(a, b, spacing)?
                .into_iter()
                .map(|t| {
                    let dy = if eta > 0.0 { rng.gen_range(-eta..=eta) } else { 0.0 };
                    Atom { pos: Point::new(t, dy), w: spacing }
                })
                .collect();
            DiscreteMeasure::new(atoms)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(h: f64) -> DiscreteMeasure {
        generate(&GenSpec::Segment { a: -1.0, b: 1.0, spacing: h }).unwrap()
    }

    #[test]
    fn density_two_atoms() {
        let mu = DiscreteMeasure::from_points(&[(-0.5, 0.0, 0.5), (0.5, 0.0, 0.5)]).unwrap();
        let (m, d) = density(&mu, &Ball::new(Point::default(), 1.0).unwrap());
        assert_eq!((m, d), (1.0, 0.5));
    }

    #[test]
    fn density_excludes_boundary() {
        let mu = DiscreteMeasure::from_points(&[(1.0, 0.0, 1.0)]).unwrap();
        assert_eq!(density(&mu, &Ball::new(Point::default(), 1.0).unwrap()).0, 0.0);
    }

    #[test]
    fn segment_quadrature_density() {
        for h in [1e-2, 1e-3] {
            let mu = generate(&GenSpec::Segment { a: -2.0, b: 2.0, spacing: h }).unwrap();
            let (_, d) = density(&mu, &Ball::new(Point::default(), 1.0).unwrap());
            assert!((d - 1.0).abs() <= h, "{d}");
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(DiscreteMeasure::from_points(&[(0.0, 0.0, 0.0)]).is_err());
        assert!(DiscreteMeasure::from_points(&[(0.0, 0.0, f64::NAN)]).is_err());
    }

    #[test]
    fn discretize_line() {
        let nu = SpikeMeasure::line(&Line::horizontal(), 1.0);
        let q = discretize_model(&nu, &Ball::new(Point::default(), 1.0).unwrap(), 0.01).unwrap();
        assert_eq!(q.len(), 200);
        assert!((q.total_mass() - 2.0).abs() < 1e-12);
        assert!(discretize_model(&nu, &Ball::new(Point::default(), 1.0).unwrap(), 0.0).is_err());
    }

    #[test]
    fn discretize_three_spike() {
        let c = 0.7;
        let h = 0.013;
        let nu = SpikeMeasure::new(Point::default(), 0.2, 3, 3, c).unwrap();
        let q = discretize_model(&nu, &Ball::new(Point::default(), 1.0).unwrap(), h).unwrap();
        assert!((q.total_mass() - 6.0 * c).abs() <= 3.0 * c * h);
    }

    #[test]
    fn discretize_far_vertex() {
        // Only the horizontal line meets the window.
        let nu = SpikeMeasure::new(Point::new(-5.0, 0.0), 0.0, 3, 3, 1.0).unwrap();
        let w = Ball::new(Point::default(), 1.0).unwrap();
        let q = discretize_model(&nu, &w, 0.01).unwrap();
        assert!(q.atoms().iter().all(|a| a.pos.y.abs() < 1e-12));
        assert_eq!(q.len(), 200);
    }

    #[test]
    fn density_ratio_matches_grid() {
        for m in [1, 3, 5] {
            let nu = SpikeMeasure::new(Point::default(), 0.3, m, 15, 1.0).unwrap();
            let g = density_ratio_grid(&nu, 40, 30);
            assert!((g - density_ratio_spike(&nu)).abs() < 1e-9, "m={m}: {g}");
        }
    }

    #[test]
    fn lambda_oracle_values() {
        let one = SpikeMeasure::new(Point::default(), 0.0, 1, 3, 1.0).unwrap();
        assert_eq!(lambda_constant(&one, 50, 1e-6).value, 1.0);
        for m in [3u32, 5] {
            let s = (PI / m as f64).sin();
            let exact = s / (120.0 + s);
            let nu = SpikeMeasure::new(Point::default(), 0.0, m, m, 1.0).unwrap();
            let est = lambda_constant(&nu, 200, 1e-5);
            assert!(est.converged);
            assert!((est.value - exact).abs() < 1e-5, "m={m}: {} vs {exact}", est.value);
        }
        assert!(lambda_k(3) <= 1.0 && lambda_k(15) <= lambda_k(3) + 1e-12);
    }

    #[test]
    fn pushforward_vertical_line() {
        let mu = DiscreteMeasure::from_points(&[(0.0, -1.0, 0.25), (0.0, 0.5, 0.5), (0.0, 2.0, 0.25)]).unwrap();
        let s = pushforward_projection(&mu, &[0, 1, 2]).unwrap();
        assert!(s.atoms.iter().all(|a| a.0 == 0.0));
        assert_eq!(s.total_mass(), 1.0);
        assert!(pushforward_projection(&mu, &[3]).is_err());
        let seg = seg(0.1);
        let all: Vec<usize> = (0..seg.len()).collect();
        let s = pushforward_projection(&seg, &all).unwrap();
        assert!((s.total_mass() - seg.total_mass()).abs() <= 1e-12 * seg.total_mass());
    }

    #[test]
    fn generators() {
        let c1 = generate(&GenSpec::Cantor { level: 1 }).unwrap();
        assert_eq!(c1.len(), 4);
        let pts: Vec<(f64, f64)> = c1.atoms().iter().map(|a| (a.pos.x, a.pos.y)).collect();
        for p in [(0.125, 0.125), (0.875, 0.125), (0.125, 0.875), (0.875, 0.875)] {
            assert!(pts.iter().any(|q| (q.0 - p.0).abs() < 1e-15 && (q.1 - p.1).abs() < 1e-15));
        }
        assert_eq!(generate(&GenSpec::Cantor { level: 4 }).unwrap().len(), 256);
        assert!(generate(&GenSpec::Cantor { level: 13 }).is_err());
        assert_eq!(generate(&GenSpec::Segment { a: -1.0, b: 1.0, spacing: 1e-3 }).unwrap().len(), 2001);
        let flat = generate(&GenSpec::LipschitzGraph { a: -1.0, b: 1.0, spacing: 0.1, profile: GraphProfile::Flat }).unwrap();
        assert_eq!(flat, seg(0.1));
        let pl = generate(&GenSpec::PerturbedLine { a: -1.0, b: 1.0, spacing: 0.1, eta: 0.0, seed: 9 }).unwrap();
        assert_eq!(pl, seg(0.1));
        let p1 = generate(&GenSpec::PerturbedLine { a: -1.0, b: 1.0, spacing: 0.1, eta: 0.1, seed: 9 }).unwrap();
        let p2 = generate(&GenSpec::PerturbedLine { a: -1.0, b: 1.0, spacing: 0.1, eta: 0.1, seed: 9 }).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn profiles() {
        let mu = generate(&GenSpec::Segment { a: -3.0, b: 3.0, spacing: 1e-3 }).unwrap();
        let prof = density_profile(&mu, Point::new(0.1, 0.0), &[1.0, 0.5, 0.1]).unwrap();
        assert!(prof.iter().all(|(_, d)| (d - 1.0).abs() < 1e-2));
        let nu = SpikeMeasure::new(Point::default(), 0.0, 3, 3, 0.5).unwrap();
        let q = discretize_model(&nu, &Ball::new(Point::default(), 2.0).unwrap(), 1e-3).unwrap();
        let prof = density_profile(&q, Point::default(), &[1.0, 0.5, 0.25]).unwrap();
        assert!(prof.iter().all(|(_, d)| (d - 1.5).abs() < 1e-2));
        assert!(density_profile(&mu, Point::default(), &[0.1, 1.0]).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let mu = generate(&GenSpec::Cantor { level: 3 }).unwrap();
        let mut buf = Vec::new();
        mu.write_to(&mut buf).unwrap();
        let back = DiscreteMeasure::read_from(&buf[..]).unwrap();
        assert_eq!(back, mu);
        let bad = "x y w\n1 2\n";
        match DiscreteMeasure::read_from(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn angles() {
        let a = Line::new(Point::default(), 0.1);
        let b = Line::new(Point::default(), PI - 0.1);
        assert!((a.angle_to(&b) - 0.2).abs() < 1e-12);
        assert!((Line::new(Point::default(), -0.5).angle - (PI - 0.5)).abs() < 1e-12);
    }
}
