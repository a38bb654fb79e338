//! Output directory, run manifest, CSV rows and SVG overlays.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rectlab::measure::{Ball, DiscreteMeasure, Point};
use rectlab::transport::{AlphaResult, Witness};

use crate::config::hex;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    /// Wall time per stage in seconds, in execution order.
    pub stages: Vec<(String, f64)>,
    /// Output file name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

/// Collects outputs of one command; the manifest is written last.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Run {
    pub fn new(dir: &Path, command: &str, config_hash: String) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut versions = BTreeMap::new();
        versions.insert("rectlab".into(), rectlab_version().into());
        versions.insert("rectlab-cli".into(), env!("CARGO_PKG_VERSION").into());
        Ok(Run {
            dir: dir.to_path_buf(),
            manifest: RunManifest { command: command.into(), config_hash, versions, stages: Vec::new(), outputs: BTreeMap::new() },
            clock: Instant::now(),
        })
    }

    /// Runs one stage and records its wall time; errors carry the stage name.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> rectlab::Result<T>) -> Result<T, CliError> {
        let t = Instant::now();
        let out = f().map_err(|e| CliError::Stage { stage: name.into(), msg: e.to_string() })?;
        self.manifest.stages.push((name.into(), t.elapsed().as_secs_f64()));
        Ok(out)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.manifest.outputs.insert(name.into(), hex(&Sha256::digest(bytes)));
        Ok(path)
    }

    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.stages.push(("total".into(), self.clock.elapsed().as_secs_f64()));
        let text = toml::to_string(&self.manifest).expect("manifest serializes");
        let path = self.dir.join("manifest.toml");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(self.manifest)
    }
}

fn rectlab_version() -> &'static str {
    // both crates share the workspace version
    env!("CARGO_PKG_VERSION")
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join("manifest.toml");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::input(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| CliError::input(format!("csv: {e}")))
}

pub fn from_csv<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<Vec<T>, CliError> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::input(format!("csv row {}: {e}", i + 1))))
        .collect()
}

/// One coefficient evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
    pub kind: String,
    pub k: u32,
    pub value: f64,
    pub tolerance: f64,
    pub normalization: f64,
    pub status: String,
    pub nodes: usize,
    /// Line or spike witness: vertex and base angle; empty for pair evaluations.
    pub witness_x: Option<f64>,
    pub witness_y: Option<f64>,
    pub witness_angle: Option<f64>,
    pub witness_m: Option<u32>,
}

impl AlphaRow {
    pub fn new(b: &Ball, kind: &str, k: u32, r: &AlphaResult) -> Self {
        let (wx, wy, wa, wm) = match r.witness {
            Some(Witness::Line(l)) => (Some(l.base.x), Some(l.base.y), Some(l.angle), Some(1)),
            Some(Witness::Spike(s)) => (Some(s.vertex.x), Some(s.vertex.y), Some(s.base_angle), Some(s.m)),
            None => (None, None, None, None),
        };
        AlphaRow {
            center_x: b.center.x,
            center_y: b.center.y,
            radius: b.radius,
            kind: kind.into(),
            k,
            value: r.value,
            tolerance: r.tolerance,
            normalization: r.normalization,
            status: r.status.as_str().into(),
            nodes: r.nodes,
            witness_x: wx,
            witness_y: wy,
            witness_angle: wa,
            witness_m: wm,
        }
    }
}

/// Plain SVG with a y-up frame.
pub struct Svg {
    view: (f64, f64, f64, f64),
    px: f64,
    body: String,
}

impl Svg {
    /// `view = (x0, x1, y0, y1)`, rendered `width` pixels wide.
    pub fn new(view: (f64, f64, f64, f64), width: f64) -> Self {
        Svg { view, px: width / (view.1 - view.0), body: String::new() }
    }

    fn map(&self, p: Point) -> (f64, f64) {
        ((p.x - self.view.0) * self.px, (self.view.3 - p.y) * self.px)
    }

    fn inside(&self, p: Point, pad: f64) -> bool {
        p.x >= self.view.0 - pad && p.x <= self.view.1 + pad && p.y >= self.view.2 - pad && p.y <= self.view.3 + pad
    }

    pub fn atoms(&mut self, mu: &DiscreteMeasure, color: &str) {
        let max_w = mu.atoms().iter().map(|a| a.w).fold(0.0, f64::max);
        for a in mu.atoms() {
            if !self.inside(a.pos, 0.0) {
                continue;
            }
            let (x, y) = self.map(a.pos);
            let r = 0.6 + 1.4 * (a.w / max_w).sqrt();
            let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{color}"/>"#);
        }
    }

    pub fn circle(&mut self, b: &Ball, color: &str) {
        let (x, y) = self.map(b.center);
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="none" stroke="{color}" stroke-width="1"/>"#,
            b.radius * self.px
        );
    }

    pub fn polyline(&mut self, pts: &[Point], color: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = self.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(self.body, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, coords.join(" "));
    }

    pub fn finish(self) -> String {
        let w = (self.view.1 - self.view.0) * self.px;
        let h = (self.view.3 - self.view.2) * self.px;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}
