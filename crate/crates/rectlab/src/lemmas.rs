//! Randomized checks of the explicit-constant density lemmas.
//!
//! `ν` is an exact spike and `μ` is its quadrature on the solver's own lattice, perturbed
//! in ways that keep the `φ`-mass of `μ` fixed (moved atoms and mass transferred to a
//! cluster, all inside `B(x,3r)`). The hypothesis `α_{μ,ν}(B(x,r)) ≤ γ·δ_μ(B(x,r))` is
//! certified by taking `γ = (α + tolerance)/δ_μ(B(x,r))`, where `tolerance` bounds the
//! solver's discretization error.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::measure::{density, density_ratio_spike, discretize_model, Atom, Ball, DiscreteMeasure, Point, SpikeMeasure};
use crate::transport::{alpha_model, TransportConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaTally {
    pub name: String,
    /// Instances whose hypotheses were verified and whose conclusion was tested.
    pub checked: usize,
    /// Sampled instances discarded because a hypothesis failed.
    pub rejected: usize,
    pub violations: usize,
    /// Largest `lhs/rhs` seen, or `rhs/lhs` for lower bounds.
    pub worst_ratio: f64,
    pub first_violation: Option<String>,
}

impl LemmaTally {
    fn new(name: &str) -> Self {
        LemmaTally { name: name.into(), checked: 0, rejected: 0, violations: 0, worst_ratio: 0.0, first_violation: None }
    }

    /// Records `lhs ≤ rhs`.
    fn upper(&mut self, lhs: f64, rhs: f64, ctx: impl FnOnce() -> String) {
        self.checked += 1;
        if rhs > 0.0 {
            self.worst_ratio = self.worst_ratio.max(lhs / rhs);
        }
        if lhs > rhs {
            self.violations += 1;
            if self.first_violation.is_none() {
                self.first_violation = Some(format!("{} (lhs {lhs:e} > rhs {rhs:e})", ctx()));
            }
        }
    }

    pub fn passed(&self, wanted: usize) -> bool {
        self.checked >= wanted && self.violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuite {
    pub wanted: usize,
    pub tallies: Vec<LemmaTally>,
}

impl LemmaSuite {
    pub fn passed(&self) -> bool {
        self.tallies.iter().all(|t| t.passed(self.wanted))
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn random_spike(rng: &mut ChaCha8Rng) -> SpikeMeasure {
    let m = if rng.gen_bool(0.5) { 1 } else { 3 };
    let vertex = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    SpikeMeasure::new(vertex, rng.gen_range(0.0..PI), m, 3, rng.gen_range(0.5..2.0)).expect("m divides 3")
}

/// A point of `supp ν` at distance `≤ reach` from the vertex.
fn support_point(rng: &mut ChaCha8Rng, nu: &SpikeMeasure, reach: f64) -> Point {
    let lines = nu.lines();
    let l = lines[rng.gen_range(0..lines.len())];
    if rng.gen_bool(0.15) {
        return nu.vertex;
    }
    l.base + l.direction().scale(rng.gen_range(-reach..reach))
}

fn in_disc(rng: &mut ChaCha8Rng, c: Point, r: f64) -> Point {
    let rho = r * rng.gen::<f64>().sqrt();
    c + Point::polar(rho, rng.gen_range(0.0..2.0 * PI))
}

/// Quadrature of `ν` on the lattice the solver uses for `B(x,r)`, then perturbed.
fn perturbed_quadrature(rng: &mut ChaCha8Rng, nu: &SpikeMeasure, x: Point, r: f64, h: f64, cluster: Point, spread: f64) -> DiscreteMeasure {
    let window = Ball { center: x, radius: r * 4.0 };
    let base = discretize_model(nu, &window, h).expect("positive spacing");
    let mut atoms: Vec<Atom> = base.atoms().to_vec();
    let inner = Ball { center: x, radius: 3.0 * r };
    let candidates: Vec<usize> = (0..atoms.len()).filter(|&i| inner.contains(atoms[i].pos)).collect();
    if candidates.is_empty() {
        return DiscreteMeasure::new(atoms).expect("quadrature weights are positive");
    }
    let n_move = rng.gen_range(0..=120usize);
    let jitter = log_uniform(rng, 1e-4 * r, 0.05 * r);
    for _ in 0..n_move {
        let i = candidates[rng.gen_range(0..candidates.len())];
        let p = in_disc(rng, atoms[i].pos, jitter);
        if inner.contains(p) {
            atoms[i].pos = p;
        }
    }
    // mass taken from lattice atoms and placed on a small cluster
    let transfer = log_uniform(rng, 1e-6 * r, 0.05 * r);
    let n_src = rng.gen_range(1..=40usize);
    let mut moved = 0.0;
    for _ in 0..n_src {
        let i = candidates[rng.gen_range(0..candidates.len())];
        let take = (transfer / n_src as f64).min(0.5 * atoms[i].w);
        atoms[i].w -= take;
        moved += take;
    }
    let n_c = rng.gen_range(1..=8usize);
    for _ in 0..n_c {
        let mut p = in_disc(rng, cluster, spread);
        if !inner.contains(p) {
            p = cluster;
        }
        atoms.push(Atom { pos: p, w: moved / n_c as f64 });
    }
    atoms.retain(|a| a.w > 0.0);
    DiscreteMeasure::new(atoms).expect("weights stay positive")
}

/// Certified `γ` for `α_{μ,ν}(B(x,r)) ≤ γ·δ_μ(B(x,r))`, or `None` when `δ_μ(B(x,r)) = 0`.
fn certified_gamma(mu: &DiscreteMeasure, nu: &SpikeMeasure, b: &Ball, cfg: &TransportConfig) -> Result<Option<f64>> {
    let d = density(mu, b).1;
    if d <= 0.0 {
        return Ok(None);
    }
    let a = alpha_model(mu, b, nu, cfg)?;
    Ok(Some((a.value + a.tolerance) / d))
}

/// Relative model spacing: fine enough for the comparison hypotheses to be reachable.
pub const MODEL_SPACING: f64 = 5e-4;

/// Runs `n` verified instances of each lemma, drawing at most `50·n` candidates per lemma.
pub fn run_lemma_suite(seed: u64, n: usize) -> Result<LemmaSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = 50 * n.max(1);
    let mut off_support = LemmaTally::new("alpha-small-off-support");
    let mut move_spike = LemmaTally::new("move-off-support");
    let mut move_line = LemmaTally::new("move-off-support-line");
    let mut compare_upper = LemmaTally::new("density-comparison-upper");
    let mut compare_lower = LemmaTally::new("density-comparison-lower");

    // Exact spike densities only.
    let mut tries = 0;
    while (move_spike.checked < n || move_line.checked < n) && tries < 4 * cap {
        tries += 1;
        let nu = random_spike(&mut rng);
        let x = Point::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let r = log_uniform(&mut rng, 1e-2, 1e1);
        let z = support_point(&mut rng, &nu, 4.0);
        let s = log_uniform(&mut rng, 1e-3, 1e1);
        let lhs = nu.density_in(&Ball { center: x, radius: r });
        if lhs == 0.0 {
            let t = if nu.m == 1 { &mut move_line } else { &mut move_spike };
            t.rejected += 1;
            continue;
        }
        let rhs_ball = Ball { center: z, radius: s };
        let dz = nu.density_in(&rhs_ball);
        let ctx = || format!("x=({:.4},{:.4}) r={r:.4} z=({:.4},{:.4}) s={s:.4} m={}", x.x, x.y, z.x, z.y, nu.m);
        if nu.m == 1 {
            if move_line.checked < n {
                move_line.upper(lhs, dz, ctx);
            }
        } else if move_spike.checked < n {
            move_spike.upper(lhs, 3.0 * density_ratio_spike(&nu) * dz, ctx);
        }
    }

    let cfg = |r: f64| TransportConfig { model_spacing: Some(MODEL_SPACING * r), ..TransportConfig::default() };

    // Lemma for balls far from the support.
    tries = 0;
    while off_support.checked < n && tries < cap {
        tries += 1;
        let nu = random_spike(&mut rng);
        let r = log_uniform(&mut rng, 0.2, 2.0);
        let x = if rng.gen_bool(0.7) { support_point(&mut rng, &nu, 2.0 * r) } else { in_disc(&mut rng, nu.vertex, 2.0 * r) };
        let s = r * log_uniform(&mut rng, 0.01, 0.99);
        // z off the support by at least 2s, with B(z,s) ⊂ B(x,3r)
        let z = in_disc(&mut rng, x, 3.0 * r - s);
        if nu.dist_to_support(z) < 2.0 * s || !(Ball { center: z, radius: s }).inside(&Ball { center: x, radius: 3.0 * r }) {
            off_support.rejected += 1;
            continue;
        }
        let mu = perturbed_quadrature(&mut rng, &nu, x, r, MODEL_SPACING * r, z, 0.8 * s);
        let b = Ball { center: x, radius: r };
        let Some(gamma) = certified_gamma(&mu, &nu, &b, &cfg(r))? else {
            off_support.rejected += 1;
            continue;
        };
        let dx = density(&mu, &b).1;
        let dz = density(&mu, &Ball { center: z, radius: s }).1;
        off_support.upper(dz, gamma * (r / s).powi(2) * dx, || {
            format!("x=({:.4},{:.4}) r={r:.4} z=({:.4},{:.4}) s={s:.4} gamma={gamma:e}", x.x, x.y, z.x, z.y)
        });
    }

    // Density comparison around a support point.
    tries = 0;
    while (compare_upper.checked < n || compare_lower.checked < n) && tries < 2 * cap {
        tries += 1;
        let nu = random_spike(&mut rng);
        let dnu = density_ratio_spike(&nu);
        let r = log_uniform(&mut rng, 0.2, 2.0);
        let x = support_point(&mut rng, &nu, 2.0 * r);
        let s = r * rng.gen_range(0.3..=1.0);
        let on_support = rng.gen_bool(0.6);
        let z = if on_support {
            support_point(&mut rng, &nu, 3.0 * r)
        } else {
            in_disc(&mut rng, x, 3.0 * r - s)
        };
        let zb = Ball { center: z, radius: s };
        if !zb.inside(&Ball { center: x, radius: 3.0 * r }) {
            compare_upper.rejected += 1;
            continue;
        }
        let cluster = if rng.gen_bool(0.5) { z } else { in_disc(&mut rng, x, 3.0 * r) };
        let mu = perturbed_quadrature(&mut rng, &nu, x, r, MODEL_SPACING * r, cluster, 0.5 * s);
        let b = Ball { center: x, radius: r };
        let Some(gamma) = certified_gamma(&mu, &nu, &b, &cfg(r))? else {
            compare_upper.rejected += 1;
            continue;
        };
        let q = (s / r).powi(2);
        let dx = density(&mu, &b).1;
        let dz = density(&mu, &zb).1;
        let ctx = || {
            format!("x=({:.4},{:.4}) r={r:.4} z=({:.4},{:.4}) s={s:.4} m={} gamma={gamma:e}", x.x, x.y, z.x, z.y, nu.m)
        };
        if gamma < q / 9.0 && compare_upper.checked < n {
            let lead = if nu.m == 1 { 1.0 } else { 3.0 * dnu };
            compare_upper.upper(dz, lead * (1.0 + 8.0 * gamma.sqrt() * r / s) * dx, ctx);
        } else if compare_upper.checked < n {
            compare_upper.rejected += 1;
        }
        if on_support && gamma < q / (9.0 * dnu) && compare_lower.checked < n {
            let lower = (1.0 - 8.0 * (dnu * gamma).sqrt() * r / s) * dx / dnu;
            // lower ≤ dz, recorded as an upper bound on the reversed pair
            compare_lower.upper(lower, dz, ctx);
        } else if on_support && compare_lower.checked < n {
            compare_lower.rejected += 1;
        }
    }

    Ok(LemmaSuite { wanted: n, tallies: vec![off_support, move_spike, move_line, compare_upper, compare_lower] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tally_records_first_violation() {
        let mut t = LemmaTally::new("x");
        t.upper(1.0, 2.0, || "a".into());
        t.upper(3.0, 2.0, || "b".into());
        assert_eq!((t.checked, t.violations), (2, 1));
        assert!(t.first_violation.unwrap().starts_with('b'));
        assert_eq!(t.worst_ratio, 1.5);
    }

    #[test]
    fn perturbation_keeps_phi_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nu = SpikeMeasure::new(Point::new(0.1, -0.2), 0.4, 3, 3, 1.0).unwrap();
        let x = nu.vertex;
        let base = discretize_model(&nu, &Ball { center: x, radius: 4.0 }, 1e-2).unwrap();
        let mu = perturbed_quadrature(&mut rng, &nu, x, 1.0, 1e-2, Point::new(0.5, 0.5), 0.1);
        let phi_mass = |m: &DiscreteMeasure| -> f64 {
            m.atoms().iter().map(|a| crate::transport::phi(a.pos.dist(x)) * a.w).sum()
        };
        assert!((phi_mass(&mu) - phi_mass(&base)).abs() < 1e-12);
    }

    #[test]
    fn unperturbed_quadrature_has_zero_alpha() {
        let nu = SpikeMeasure::new(Point::new(0.0, 0.0), 0.3, 3, 3, 1.0).unwrap();
        let b = Ball { center: nu.vertex, radius: 1.0 };
        let mu = discretize_model(&nu, &Ball { center: b.center, radius: 4.0 }, 1e-3).unwrap();
        let cfg = TransportConfig { model_spacing: Some(1e-3), ..TransportConfig::default() };
        let a = alpha_model(&mu, &b, &nu, &cfg).unwrap();
        assert!(a.value < 1e-12, "{}", a.value);
        assert!(a.tolerance < 0.05, "{}", a.tolerance);
    }

    #[test]
    fn small_suite_has_no_violations() {
        let s = run_lemma_suite(11, 8).unwrap();
        for t in &s.tallies {
            assert_eq!(t.violations, 0, "{t:?}");
        }
        assert!(s.passed(), "{s:?}");
    }
}
