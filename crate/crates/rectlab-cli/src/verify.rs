//! Named invariant suites on fixed corpora.

use std::fmt;

use clap::ValueEnum;

use rectlab::analysis::{
    lower_bound_ledger, ledger_constants, sample_profile, test_profiles, SmoothingKernel, LEDGER_SLOPE_MAX,
};
use rectlab::huovinen::{kernel_series, KernelSeries};
use rectlab::lemmas::run_lemma_suite;
use rectlab::measure::{density, discretize_model, generate, Ball, DiscreteMeasure, GenSpec, Point, SpikeMeasure};
use rectlab::stopping::{construct, ConstructConfig, StopParams};
use rectlab::transport::{modified_density, TransportConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    #[value(name = "lemmas-3-4")]
    Lemmas,
    ModifiedDensity,
    KernelSeries,
    GraphPipeline,
    Analysis,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub case: String,
    pub pass: bool,
    pub detail: String,
}

fn row(case: impl Into<String>, pass: bool, detail: impl Into<String>) -> Row {
    Row { case: case.into(), pass, detail: detail.into() }
}

pub struct Table {
    pub suite: Suite,
    pub rows: Vec<Row>,
    pub warnings: Vec<String>,
}

impl Table {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        let width = self.rows.iter().map(|r| r.case.len()).max().unwrap_or(4).max(4);
        writeln!(f, "{:<width$}  {:<6}  detail", "case", "status")?;
        for r in &self.rows {
            writeln!(f, "{:<width$}  {:<6}  {}", r.case, if r.pass { "pass" } else { "FAIL" }, r.detail)?;
        }
        write!(f, "{}: {}", self.suite.to_possible_value().expect("named").get_name(), if self.passed() { "pass" } else { "FAIL" })
    }
}

pub struct Options {
    pub seed: u64,
    pub instances: usize,
    pub measure: Option<DiscreteMeasure>,
}

pub fn run(suite: Suite, opts: &Options) -> Result<Table, CliError> {
    let mut t = Table { suite, rows: Vec::new(), warnings: Vec::new() };
    if let Some(mu) = &opts.measure {
        if mu.is_empty() {
            t.warnings.push("empty measure: nothing to check".into());
            return Ok(t);
        }
    }
    let lib = |e: rectlab::Error| CliError::Stage { stage: format!("verify {suite:?}"), msg: e.to_string() };
    match suite {
        Suite::KernelSeries => kernel_rows(&mut t).map_err(lib)?,
        Suite::Lemmas => {
            let s = run_lemma_suite(opts.seed, opts.instances).map_err(lib)?;
            for tally in &s.tallies {
                let detail = format!(
                    "checked {}/{} rejected {} violations {} worst ratio {:.6}{}",
                    tally.checked,
                    s.wanted,
                    tally.rejected,
                    tally.violations,
                    tally.worst_ratio,
                    tally.first_violation.as_deref().map(|v| format!(" first: {v}")).unwrap_or_default()
                );
                t.rows.push(row(&tally.name, tally.passed(s.wanted), detail));
            }
        }
        Suite::ModifiedDensity => modified_density_rows(&mut t).map_err(lib)?,
        Suite::GraphPipeline => pipeline_rows(&mut t, opts.measure.as_ref()).map_err(lib)?,
        Suite::Analysis => analysis_rows(&mut t).map_err(lib)?,
    }
    Ok(t)
}

/// Whether coefficient `l` is exactly the integer `v`.
fn exact_integer(s: &KernelSeries, l: u32, v: i64) -> bool {
    s.coefficient(l).is_some_and(|c| c.is_integer() && c.to_integer() == v.into())
}

fn kernel_rows(t: &mut Table) -> rectlab::Result<()> {
    for k in [1u32, 3, 5, 7] {
        let s = kernel_series(k, 41)?;
        t.rows.push(row(format!("c_{{{k},1}} = {k}"), exact_integer(&s, 1, k as i64), "exact rational"));
    }
    let s = kernel_series(3, 41)?;
    t.rows.push(row("c_{3,3} = -7", exact_integer(&s, 3, -7), "exact rational"));
    t.rows.push(row("c_{3,5} = 11", exact_integer(&s, 5, 11), "exact rational"));
    let sums = s.weighted_partial_sums();
    let inc = sums.windows(2).find(|w| w[1].0 == 41).map_or(f64::INFINITY, |w| w[1].1 - w[0].1);
    t.rows.push(row("partial sums settle by 41", inc < 1e-6, format!("increment {inc:.3e}")));
    Ok(())
}

fn modified_density_rows(t: &mut Table) -> rectlab::Result<()> {
    let cfg = TransportConfig::default();
    let b = Ball::new(Point::new(0.0, 0.0), 1.0)?;
    let sp = SpikeMeasure::new(Point::new(0.0, 0.0), 0.3, 3, 3, 1.0)?;
    let mu = discretize_model(&sp, &b.dilate(2.0), 1.5e-4)?;
    let md = modified_density(&mu, &b, 0.01, 3, &cfg)?;
    let ratio = density(&mu, &b).1 / md.value;
    t.rows.push(row("3-spike vertex ratio 3 ± 0.1", (ratio - 3.0).abs() <= 0.1, format!("ratio {ratio:.4}, {} tests", md.tests)));
    let seg = generate(&GenSpec::Segment { a: -40.0, b: 40.0, spacing: 0.01 })?;
    let md = modified_density(&seg, &b, 0.1, 3, &cfg)?;
    let tol = md.witness.map_or(f64::INFINITY, |w| 2.0 * 0.01 / w.radius);
    t.rows.push(row("segment equals its density", (md.value - 1.0).abs() <= tol, format!("value {:.5}", md.value)));
    let empty = DiscreteMeasure::from_points(&[(5.0, 5.0, 1.0)])?;
    let md = modified_density(&empty, &b, 0.1, 3, &cfg)?;
    t.rows.push(row("empty ball gives 0", md.value == 0.0 && md.witness.is_none(), format!("value {}", md.value)));
    Ok(())
}

fn pipeline_rows(t: &mut Table, custom: Option<&DiscreteMeasure>) -> rectlab::Result<()> {
    let seg;
    let mu = match custom {
        Some(m) => m,
        None => {
            seg = generate(&GenSpec::Segment { a: -60.0, b: 60.0, spacing: 0.1 })?;
            &seg
        }
    };
    let cc = ConstructConfig { verify_stride: 4, ..ConstructConfig::default() };
    let c = construct(mu, &cc, &StopParams::default(), &TransportConfig::default())?;
    let r = &c.report;
    if custom.is_none() {
        t.rows.push(row("segment is all Z", r.atoms_z == r.atoms_base, format!("{}/{}", r.atoms_z, r.atoms_base)));
        t.rows.push(row("segment graph is flat", r.max_abs < 1e-3, format!("max |A| {:.2e}", r.max_abs)));
    }
    t.rows.push(row("monotone heights", r.non_monotone == 0, format!("{} non-monotone", r.non_monotone)));
    t.rows.push(row("Z slope bound", r.z_slope_violations == 0, format!("{} violations", r.z_slope_violations)));
    t.rows.push(row("Whitney scale rule", r.whitney_scale_violations == 0, format!("{} violations", r.whitney_scale_violations)));
    t.rows.push(row("Whitney overlap ≤ 16", r.whitney_multiplicity_2 <= 16, format!("N = {}", r.whitney_multiplicity_2)));
    t.rows.push(row(
        "graph Lipschitz ≤ 10α",
        r.lipschitz <= 10.0 * c.region.params.alpha,
        format!("{:.3e}", r.lipschitz),
    ));
    t.rows.push(row("closeness ≥ 0.99", r.closeness_fraction >= 0.99, format!("{:.4}", r.closeness_fraction)));
    Ok(())
}

fn analysis_rows(t: &mut Table) -> rectlab::Result<()> {
    let e = SmoothingKernel::default();
    let n = 4000;
    let h = 1.0 / n as f64;
    // midpoint error is O(h²) for a C¹ profile
    let mass: f64 = 2.0 * (0..n).map(|i| e.profile((i as f64 + 0.5) * h) * h).sum::<f64>();
    t.rows.push(row("‖η_p‖₁ = 1", (mass - 1.0).abs() < 1e-6 && e.half_integral() == 0.5, format!("{mass:.10}")));
    for k in [1u32, 3, 5] {
        let (c, big_c) = ledger_constants(k).expect("tabulated");
        let mut bad = 0;
        let mut margin = f64::INFINITY;
        for p in test_profiles() {
            let l = lower_bound_ledger(&sample_profile(&p)?, k, LEDGER_SLOPE_MAX)?;
            margin = margin.min(l.lhs / l.rhs(c, big_c));
            if l.lhs < l.rhs(c, big_c) {
                bad += 1;
            }
        }
        t.rows.push(row(format!("lower-bound ledger k={k}"), bad == 0, format!("{bad} violations, min LHS/RHS {margin:.4}")));
    }
    Ok(())
}
