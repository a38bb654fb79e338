mod config;
mod output;
mod verify;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use rectlab::analysis::{analyze, AnalysisReport};
use rectlab::huovinen::{truncated_transform, Part};
use rectlab::measure::{generate, Ball, DiscreteMeasure, GenSpec, GraphProfile, Point, SpikeMeasure};
use rectlab::stopping::{construct, Construction};
use rectlab::transport::{alpha_line, alpha_pair, alpha_spike, LineMode, TransportConfig, Witness};

use config::{read_measure, ExperimentConfig};
use output::{to_csv, AlphaRow, Run, Svg};

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Io { path: PathBuf, msg: String },
    Stage { stage: String, msg: String },
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), msg: e.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Io { path, msg } => write!(f, "{}: {msg}", path.display()),
            CliError::Stage { stage, msg } => write!(f, "stage `{stage}` failed: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Numerical laboratory for planar measures: coefficients, transforms and graph construction.
#[derive(Parser)]
#[command(name = "rectlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated measure as `x y w` text, plus a manifest.
    Gen {
        #[command(subcommand)]
        spec: GenCmd,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Transportation coefficients over a geometric sweep of radii.
    Alpha(AlphaArgs),
    /// Smoothly truncated transform `T_{r1,r2}` at every atom.
    Transform(TransformArgs),
    /// Stopping region, partition, Whitney cover and Lipschitz graph.
    Construct(ConfigArgs),
    /// `construct` followed by the projection and operator checks.
    Analyze(ConfigArgs),
    /// Run a named invariant suite; exits 1 if any case fails.
    Verify {
        #[arg(value_enum)]
        suite: verify::Suite,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Randomized instances per lemma.
        #[arg(long, default_value_t = 200)]
        instances: usize,
        /// Run the pipeline suites on this measure instead of the built-in corpus.
        #[arg(long)]
        measure: Option<PathBuf>,
    },
    /// Summarize an output directory.
    Report {
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenCmd {
    /// Endpoint-inclusive nodes on `[a, b] × {0}`.
    Segment {
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        b: f64,
        #[arg(long)]
        spacing: f64,
    },
    /// Four-corner Cantor set of the given generation.
    Cantor {
        #[arg(long)]
        level: u32,
    },
    /// Arclength quadrature of a graph `t ↦ (t, A(t))`.
    Graph {
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        b: f64,
        #[arg(long)]
        spacing: f64,
        #[arg(long, value_enum)]
        profile: ProfileKind,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        slope: f64,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
        #[arg(long, default_value_t = 1)]
        teeth: u32,
    },
    /// Segment with vertical jitter uniform in `[−η, η]`.
    Perturbed {
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        b: f64,
        #[arg(long)]
        spacing: f64,
        #[arg(long)]
        eta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Quadrature of an `m`-line spike through the origin, restricted to `B(0, reach)`.
    Spike {
        #[arg(long, default_value_t = 3)]
        m: u32,
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        angle: f64,
        #[arg(long, default_value_t = 5.0)]
        reach: f64,
        #[arg(long)]
        spacing: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileKind {
    Flat,
    Affine,
    Bump,
    Wave,
    Saw,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum AlphaKind {
    Line,
    Spike,
    Pair,
}

#[derive(Args)]
struct AlphaArgs {
    #[arg(long)]
    measure: PathBuf,
    #[arg(long, value_enum, default_value = "line")]
    kind: AlphaKind,
    /// Second measure for `--kind pair`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_parser = parse_point, default_value = "0,0", allow_hyphen_values = true)]
    center: Point,
    /// Largest radius of the sweep.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Number of radii, each half the previous.
    #[arg(long, default_value_t = 1)]
    scales: usize,
    #[arg(long, default_value_t = 3)]
    k: u32,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartKind {
    Full,
    Normal,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    measure: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: u32,
    /// Inner truncation radius.
    #[arg(long)]
    r1: f64,
    /// Outer truncation radius; none means untruncated at infinity.
    #[arg(long)]
    r2: Option<f64>,
    #[arg(long, value_enum, default_value = "normal")]
    part: PartKind,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    config: PathBuf,
    /// Overrides `output` in the config.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<Point, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `x,y`, found `{s}`"));
    }
    let x = parts[0].trim().parse::<f64>().map_err(|e| format!("x: {e}"))?;
    let y = parts[1].trim().parse::<f64>().map_err(|e| format!("y: {e}"))?;
    Ok(Point::new(x, y))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` means a check failed.
fn dispatch(cmd: Command) -> Result<bool, CliError> {
    match cmd {
        Command::Gen { spec, out } => cmd_gen(&spec, &out).map(|_| true),
        Command::Alpha(a) => cmd_alpha(&a).map(|_| true),
        Command::Transform(t) => cmd_transform(&t).map(|_| true),
        Command::Construct(c) => {
            let (cfg, dir) = load_config(&c)?;
            cmd_construct(&cfg, &c.config, &dir).map(|_| true)
        }
        Command::Analyze(c) => {
            let (cfg, dir) = load_config(&c)?;
            cmd_analyze(&cfg, &c.config, &dir)
        }
        Command::Verify { suite, seed, instances, measure } => {
            let measure = measure.as_deref().map(read_measure).transpose()?;
            let table = verify::run(suite, &verify::Options { seed, instances, measure })?;
            println!("{table}");
            Ok(table.passed())
        }
        Command::Report { dir } => cmd_report(&dir).map(|_| true),
    }
}

fn load_config(c: &ConfigArgs) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let cfg = ExperimentConfig::load(&c.config)?;
    let dir = c.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("rectlab-out"));
    Ok((cfg, dir))
}

fn gen_spec(cmd: &GenCmd) -> Result<GenSpec, CliError> {
    Ok(match *cmd {
        GenCmd::Segment { a, b, spacing } => GenSpec::Segment { a, b, spacing },
        GenCmd::Cantor { level } => GenSpec::Cantor { level },
        GenCmd::Graph { a, b, spacing, profile, slope, width, teeth } => {
            let profile = match profile {
                ProfileKind::Flat => GraphProfile::Flat,
                ProfileKind::Affine => GraphProfile::Affine { slope },
                ProfileKind::Bump => GraphProfile::Bump { slope, width },
                ProfileKind::Wave => GraphProfile::Wave { slope, width },
                ProfileKind::Saw => GraphProfile::Saw { slope, width, teeth },
            };
            GenSpec::LipschitzGraph { a, b, spacing, profile }
        }
        GenCmd::Perturbed { a, b, spacing, eta, seed } => GenSpec::PerturbedLine { a, b, spacing, eta, seed },
        GenCmd::Spike { m, k, angle, reach, spacing } => {
            let spike = SpikeMeasure::new(Point::default(), angle, m, k, 1.0).map_err(|e| CliError::input(format!("spike: {e}")))?;
            let window = Ball::new(Point::default(), reach).map_err(|e| CliError::input(format!("--reach: {e}")))?;
            GenSpec::Spike { spike, window, spacing }
        }
    })
}

fn measure_bytes(mu: &DiscreteMeasure) -> Vec<u8> {
    let mut buf = Vec::new();
    mu.write_to(&mut buf).expect("writing to memory");
    buf
}

fn hash_of<T: Serialize>(v: &T) -> String {
    use sha2::{Digest, Sha256};
    #[derive(Serialize)]
    struct Wrap<'a, T> {
        v: &'a T,
    }
    config::hex(&Sha256::digest(toml::to_string(&Wrap { v }).expect("serializable").as_bytes()))
}

fn cmd_gen(cmd: &GenCmd, out: &Path) -> Result<(), CliError> {
    let spec = gen_spec(cmd)?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = out.file_name().ok_or_else(|| CliError::input("--out must name a file"))?.to_string_lossy().into_owned();
    let mut run = Run::new(dir, "gen", hash_of(&spec))?;
    let mu = run.stage("generate", || generate(&spec))?;
    run.write(&name, &measure_bytes(&mu))?;
    let manifest = run.finish()?;
    println!("{}: {} atoms ({})", out.display(), mu.len(), &manifest.config_hash[..12]);
    Ok(())
}

#[derive(Serialize)]
struct AlphaRequest<'a> {
    measure: &'a str,
    model: Option<&'a str>,
    kind: &'a str,
    center: (f64, f64),
    radius: f64,
    scales: usize,
    k: u32,
}

fn cmd_alpha(a: &AlphaArgs) -> Result<(), CliError> {
    if a.scales == 0 || !(a.radius > 0.0) {
        return Err(CliError::input("need --scales ≥ 1 and --radius > 0"));
    }
    let mu = read_measure(&a.measure)?;
    let model = match (a.kind, &a.model) {
        (AlphaKind::Pair, Some(p)) => Some(read_measure(p)?),
        (AlphaKind::Pair, None) => return Err(CliError::input("--kind pair needs --model")),
        _ => None,
    };
    let kind = match a.kind {
        AlphaKind::Line => "line",
        AlphaKind::Spike => "spike",
        AlphaKind::Pair => "pair",
    };
    let req = AlphaRequest {
        measure: &a.measure.to_string_lossy(),
        model: a.model.as_ref().map(|p| p.to_str().unwrap_or("")),
        kind,
        center: (a.center.x, a.center.y),
        radius: a.radius,
        scales: a.scales,
        k: a.k,
    };
    let mut run = Run::new(&a.out, "alpha", hash_of(&req))?;
    let cfg = TransportConfig::default();
    let mut rows = Vec::new();
    let mut first = None;
    for j in 0..a.scales {
        let b = Ball::new(a.center, a.radius * 0.5f64.powi(j as i32)).map_err(|e| CliError::input(e.to_string()))?;
        let res = run.stage(&format!("alpha r={}", b.radius), || match a.kind {
            AlphaKind::Line => alpha_line(&mu, &b, LineMode::Search, &cfg),
            AlphaKind::Spike => alpha_spike(&mu, &b, a.k, &cfg),
            AlphaKind::Pair => alpha_pair(&mu, model.as_ref().expect("checked"), &b, &cfg),
        })?;
        if first.is_none() {
            first = Some((b, res));
        }
        rows.push(AlphaRow::new(&b, kind, a.k, &res));
    }
    run.write("alpha.csv", &to_csv(&rows)?)?;
    if a.svg {
        let (b, res) = first.expect("at least one scale");
        let reach = 4.0 * b.radius;
        let mut svg = Svg::new((b.center.x - reach, b.center.x + reach, b.center.y - reach, b.center.y + reach), 600.0);
        svg.atoms(&mu, "#444");
        svg.circle(&b, "#1f77b4");
        svg.circle(&b.dilate(4.0), "#aec7e8");
        let lines = match res.witness {
            Some(Witness::Line(l)) => vec![l],
            Some(Witness::Spike(s)) => s.lines(),
            None => Vec::new(),
        };
        for l in lines {
            let d = l.direction().scale(reach * 2.0);
            svg.polyline(&[Point::new(l.base.x - d.x, l.base.y - d.y), l.base + d], "#d62728");
        }
        run.write("alpha.svg", svg.finish().as_bytes())?;
    }
    run.finish()?;
    for r in &rows {
        println!("r={:<12} {}={:.6e} ± {:.1e} [{}]", r.radius, kind, r.value, r.tolerance, r.status);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TransformRow {
    x: f64,
    y: f64,
    re: f64,
    im: f64,
}

fn cmd_transform(t: &TransformArgs) -> Result<(), CliError> {
    let mu = read_measure(&t.measure)?;
    #[derive(Serialize)]
    struct Req<'a> {
        measure: &'a str,
        k: u32,
        r1: f64,
        r2: Option<f64>,
        normal: bool,
    }
    let part = match t.part {
        PartKind::Full => Part::Full,
        PartKind::Normal => Part::Normal,
    };
    let req = Req { measure: &t.measure.to_string_lossy(), k: t.k, r1: t.r1, r2: t.r2, normal: matches!(t.part, PartKind::Normal) };
    let mut run = Run::new(&t.out, "transform", hash_of(&req))?;
    let rows = run.stage("transform", || {
        mu.atoms()
            .iter()
            .map(|a| {
                let v = truncated_transform(&mu, a.pos, t.r1, t.k, part, t.r2)?;
                Ok(TransformRow { x: a.pos.x, y: a.pos.y, re: v.re, im: v.im })
            })
            .collect::<rectlab::Result<Vec<_>>>()
    })?;
    run.write("transform.csv", &to_csv(&rows)?)?;
    run.finish()?;
    let max = rows.iter().map(|r| r.re.hypot(r.im)).fold(0.0, f64::max);
    println!("{} atoms, max |T| = {max:.6e}", rows.len());
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PartitionRow {
    index: usize,
    x: f64,
    y: f64,
    w: f64,
    class: String,
    height: f64,
}

fn build(cfg: &ExperimentConfig, config_path: &Path, run: &mut Run) -> Result<Construction, CliError> {
    let base = config_path.parent().unwrap_or(Path::new("."));
    let mu = cfg.measure.load(base)?;
    if mu.is_empty() {
        return Err(CliError::input("measure is empty"));
    }
    let c = run.stage("construct", || construct(&mu, &cfg.construct, &cfg.stop, &cfg.transport))?;
    let nm = &c.normalized.mu;
    let mut class = vec!["outside"; nm.len()];
    for &i in &c.f {
        class[i] = "F";
    }
    for (list, name) in [(&c.partition.z, "Z"), (&c.partition.f1, "F1"), (&c.partition.f2, "F2"), (&c.partition.leaked, "F2-leaked")] {
        for &i in list.iter() {
            class[i] = name;
        }
    }
    let mut height = vec![f64::NAN; nm.len()];
    for (n, &i) in c.region.base.iter().enumerate() {
        height[i] = c.region.heights[n].h;
    }
    let rows: Vec<PartitionRow> = nm
        .atoms()
        .iter()
        .enumerate()
        .filter(|(i, _)| class[*i] != "outside")
        .map(|(i, a)| PartitionRow { index: i, x: a.pos.x, y: a.pos.y, w: a.w, class: class[i].into(), height: height[i] })
        .collect();
    run.write("partition.csv", &to_csv(&rows)?)?;
    let mut graph = Vec::new();
    c.graph.write_to(&mut graph).expect("writing to memory");
    run.write("graph.txt", &graph)?;
    run.write("report.txt", c.report.to_kv().as_bytes())?;
    let mut svg = Svg::new((-3.0, 3.0, -1.5, 1.5), 900.0);
    svg.atoms(nm, "#555");
    svg.circle(&Ball { center: Point::default(), radius: 1.0 }, "#2ca02c");
    for fit in c.fits.iter().flatten() {
        svg.circle(&fit.ball, "#aec7e8");
    }
    let pts: Vec<Point> = (0..c.graph.values.len()).map(|j| Point::new(c.graph.knot(j), c.graph.values[j])).collect();
    svg.polyline(&pts, "#d62728");
    run.write("overlay.svg", svg.finish().as_bytes())?;
    Ok(c)
}

fn summary(c: &Construction) -> String {
    let r = &c.report;
    format!(
        "mu(Z)/mu(F∩B0) = {:.4}, F1 {:.4}, F2 {:.4}, Lip {:.3e}, closeness {:.4}, Whitney intervals {} (N = {}, 10I overlap {})",
        r.mass_z / r.mass_base,
        r.mass_f1 / r.mass_base,
        r.mass_f2 / r.mass_base,
        r.lipschitz,
        r.closeness_fraction,
        r.whitney_intervals,
        r.whitney_multiplicity_2,
        r.whitney_overlap_10
    )
}

fn cmd_construct(cfg: &ExperimentConfig, path: &Path, dir: &Path) -> Result<(), CliError> {
    let mut run = Run::new(dir, "construct", cfg.hash())?;
    let c = build(cfg, path, &mut run)?;
    run.finish()?;
    println!("{}", summary(&c));
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GRow {
    t: f64,
    g: Option<f64>,
}

fn cmd_analyze(cfg: &ExperimentConfig, path: &Path, dir: &Path) -> Result<bool, CliError> {
    let mut run = Run::new(dir, "analyze", cfg.hash())?;
    let c = build(cfg, path, &mut run)?;
    let report: AnalysisReport = run.stage("analysis", || analyze(&c, &cfg.analysis))?;
    run.write("analysis.txt", report.to_kv().as_bytes())?;
    let g: Vec<GRow> = report.g_samples.iter().map(|&(t, g)| GRow { t, g }).collect();
    run.write("g.csv", &to_csv(&g)?)?;
    run.write("growth_violations.csv", &to_csv(&report.growth.violations)?)?;
    run.finish()?;
    println!("{}", summary(&c));
    let ok = report.growth_ok && report.g_ok && report.projection_ok && report.localization_ok;
    println!(
        "growth {} ({} violations), g {} (max {:.4}), projection {}, localization {} (gap {:.3e})",
        pass(report.growth_ok),
        report.growth.violations.len(),
        pass(report.g_ok),
        report.g_bounds.max_g,
        pass(report.projection_ok),
        pass(report.localization_ok),
        report.localization_gap
    );
    Ok(ok)
}

fn pass(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

fn cmd_report(dir: &Path) -> Result<(), CliError> {
    use sha2::Digest;
    let m = output::read_manifest(dir)?;
    println!("command = {}", m.command);
    println!("config_hash = {}", m.config_hash);
    for (k, v) in &m.versions {
        println!("version.{k} = {v}");
    }
    for (stage, secs) in &m.stages {
        println!("time.{stage} = {secs:.3}");
    }
    for name in ["report.txt", "analysis.txt"] {
        let p = dir.join(name);
        if m.outputs.contains_key(name) {
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            let prefix = name.trim_end_matches(".txt");
            for line in text.lines().filter(|l| !l.is_empty()) {
                println!("{prefix}.{line}");
            }
        }
    }
    if m.outputs.contains_key("partition.csv") {
        let p = dir.join("partition.csv");
        let bytes = std::fs::read(&p).map_err(|e| CliError::io(&p, e))?;
        let mut counts = std::collections::BTreeMap::<String, usize>::new();
        for row in output::from_csv::<PartitionRow>(&bytes)? {
            *counts.entry(row.class).or_default() += 1;
        }
        for (class, n) in counts {
            println!("atoms.{class} = {n}");
        }
    }
    for (name, hash) in &m.outputs {
        let p = dir.join(name);
        let state = match std::fs::read(&p) {
            Ok(bytes) if config::hex(&sha2::Sha256::digest(&bytes)) == *hash => "ok",
            Ok(_) => "modified",
            Err(_) => "missing",
        };
        println!("output.{name} = {state}");
    }
    Ok(())
}
