//! Experiment orchestration: a TOML config per run, CSV reports with a fixed
//! column order, and two-column plot data extracted from those reports.

use crate::boxes::{from_unit, len_to_unit, BoxSet, Cuboid, Interval, Point};
use crate::cocycles::{parse_cocycle, Cocycle};
use crate::diagnostics::{birkhoff_from, standard_family, Dynamics};
use crate::error::{LabError, Result};
use crate::genericizer::{perturb_relative, perturb_simple, relative_seed_sweep, PerturbationParams, PerturbationResult, RelativeInstance};
use crate::groups::{Element, Group, HomogeneousSpace};
use crate::lemmalab::{lemma_grid, LemmaGrid};
use crate::rng::{derive_seed, seeded};
use crate::systems::{make_skew_product, parse_system, FiberSpace};
use crate::towers::{build_tower_at, purify, DEFAULT_COLUMN_CAP};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Ergodicity,
    Perturb,
    Lemmas,
    Tower,
}

impl FromStr for ExperimentKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ergodicity" => Ok(Self::Ergodicity),
            "perturb" => Ok(Self::Perturb),
            "lemmas" => Ok(Self::Lemmas),
            "tower" => Ok(Self::Tower),
            _ => Err(config_err("kind", format!("unknown experiment kind `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    Simple,
    Relative,
}

/// One experiment. Keys that do not apply to `kind` are rejected by
/// [`ExperimentConfig::validate`]; keys nobody knows are rejected by the
/// parser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cocycle: Option<String>,

    /// Orbit lengths.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<usize>,
    /// Asserted bound on every score at the largest orbit length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<PerturbMode>,
    /// Extending torus `K` (relative mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extension: Option<String>,
    /// Cocycle `Z -> K` (relative mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub target: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, rename = "N", skip_serializing_if = "Option::is_none")]
    pub half_height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0_grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub del_constant: Option<f64>,
    /// Reference set as unit intervals on a one-dimensional base; the whole
    /// space when absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub c: Vec<[f64; 2]>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemmas: Option<LemmaGrid>,
}

fn config_err(key: &str, reason: impl Into<String>) -> LabError {
    LabError::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            seed: 0,
            out: None,
            system: None,
            group: None,
            cocycle: None,
            n: Vec::new(),
            starts: None,
            threshold: None,
            mode: None,
            extension: None,
            gamma: None,
            target: Vec::new(),
            a: None,
            b: None,
            delta: None,
            half_height: None,
            seeds: None,
            k0_grid: None,
            del_constant: None,
            c: Vec::new(),
            height: None,
            eps: None,
            offset: None,
            lemmas: None,
        }
    }

    /// Parses and validates. Syntax errors carry the line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err("<toml>", e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err("<file>", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err("<toml>", e.to_string()))
    }

    fn allowed_keys(&self) -> &'static [&'static str] {
        match self.kind {
            ExperimentKind::Ergodicity => &["system", "group", "cocycle", "n", "starts", "threshold"],
            ExperimentKind::Perturb => &[
                "system", "group", "cocycle", "mode", "extension", "gamma", "target", "a", "b", "delta", "N", "seeds", "k0-grid", "del-constant", "c",
            ],
            ExperimentKind::Lemmas => &["lemmas"],
            ExperimentKind::Tower => &["system", "group", "cocycle", "height", "eps", "offset", "c"],
        }
    }

    /// Rejects keys foreign to the kind and out-of-range numbers.
    pub fn validate(&self) -> Result<()> {
        let table = toml::Table::try_from(self).map_err(|e| config_err("<toml>", e.to_string()))?;
        for key in table.keys() {
            if !matches!(key.as_str(), "kind" | "seed" | "out") && !self.allowed_keys().contains(&key.as_str()) {
                return Err(config_err(key, format!("not used by `{}` experiments", table["kind"].as_str().unwrap_or("?"))));
            }
        }
        let in_open_unit = |key: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x < 1.0) => Err(config_err(key, format!("{x} must lie in (0,1)"))),
            _ => Ok(()),
        };
        let at_least_one = |key: &str, v: Option<usize>| match v {
            Some(0) => Err(config_err(key, "must be at least 1")),
            _ => Ok(()),
        };
        in_open_unit("b", self.b)?;
        in_open_unit("delta", self.delta)?;
        in_open_unit("eps", self.eps)?;
        at_least_one("starts", self.starts)?;
        at_least_one("seeds", self.seeds)?;
        at_least_one("k0-grid", self.k0_grid)?;
        at_least_one("height", self.height)?;
        if let Some(a) = self.a {
            if !(a > 0.0 && a.is_finite()) {
                return Err(config_err("a", format!("{a} must be positive")));
            }
        }
        if let Some(t) = self.threshold {
            if !(t >= 0.0) {
                return Err(config_err("threshold", format!("{t} must be nonnegative")));
            }
        }
        if let Some(k) = self.del_constant {
            if !(k > 0.0 && k.is_finite()) {
                return Err(config_err("del-constant", format!("{k} must be positive")));
            }
        }
        if let Some(o) = self.offset {
            if !(0.0..1.0).contains(&o) {
                return Err(config_err("offset", format!("{o} must lie in [0,1)")));
            }
        }
        if self.n.contains(&0) {
            return Err(config_err("n", "orbit lengths must be positive"));
        }
        for iv in &self.c {
            if !(0.0 <= iv[0] && iv[0] < iv[1] && iv[1] <= 1.0) {
                return Err(config_err("c", format!("[{}, {}] is not a subinterval of [0,1]", iv[0], iv[1])));
            }
        }
        match self.kind {
            ExperimentKind::Ergodicity if self.system.is_none() => Err(config_err("system", "required")),
            ExperimentKind::Tower if self.system.is_none() => Err(config_err("system", "required")),
            ExperimentKind::Tower if self.height.is_none() => Err(config_err("height", "required")),
            ExperimentKind::Perturb => {
                for key in ["system", "group"] {
                    let v = if key == "system" { &self.system } else { &self.group };
                    if v.is_none() {
                        return Err(config_err(key, "required"));
                    }
                }
                if self.target.is_empty() {
                    return Err(config_err("target", "required"));
                }
                let relative = self.mode == Some(PerturbMode::Relative);
                if relative && (self.extension.is_none() || self.gamma.is_none()) {
                    return Err(config_err("mode", "relative mode needs `extension` and `gamma`"));
                }
                if !relative && (self.extension.is_some() || self.gamma.is_some()) {
                    return Err(config_err("mode", "`extension` and `gamma` need mode = \"relative\""));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// A finished run: CSV rows plus whether every asserted check held.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub passed: bool,
    /// Human-readable lines for the terminal.
    pub summary: Vec<String>,
}

impl ExperimentReport {
    pub fn csv(&self) -> String {
        write_csv(&self.header, &self.rows)
    }
}

fn write_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    // Writing to a Vec cannot fail.
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of utf-8 fields")
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn flag(b: bool) -> String {
    (if b { "true" } else { "false" }).to_string()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Ergodicity => run_ergodicity(cfg),
        ExperimentKind::Perturb => match cfg.mode.unwrap_or(PerturbMode::Simple) {
            PerturbMode::Simple => run_perturb_simple(cfg),
            PerturbMode::Relative => run_perturb_relative(cfg),
        },
        ExperimentKind::Lemmas => run_lemmas(cfg),
        ExperimentKind::Tower => run_tower(cfg),
    }
}

fn group_of(cfg: &ExperimentConfig) -> Result<Option<Group>> {
    cfg.group.as_deref().map(Group::from_str).transpose()
}

fn cocycle_of(cfg: &ExperimentConfig, dim: usize, g: &Group) -> Result<Cocycle> {
    match cfg.cocycle.as_deref() {
        Some(s) => parse_cocycle(s, dim, g),
        None => Ok(Cocycle::identity(dim, g.clone())),
    }
}

fn c_of(cfg: &ExperimentConfig, dim: usize) -> Result<BoxSet> {
    if cfg.c.is_empty() {
        return Ok(BoxSet::full(dim));
    }
    if dim != 1 {
        return Err(config_err("c", "intervals describe a one-dimensional base"));
    }
    let boxes = cfg
        .c
        .iter()
        .map(|iv| Interval::from_unit(iv[0], iv[1]).map(Cuboid::interval).ok_or_else(|| config_err("c", "empty interval")))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoxSet::union_of(1, boxes))
}

fn run_ergodicity(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let base = parse_system(cfg.system.as_deref().unwrap_or_default())?;
    let group = group_of(cfg)?;
    let skew;
    let (system, family): (&dyn Dynamics, _) = match &group {
        Some(g) => {
            let phi = cocycle_of(cfg, base.dim(), g)?;
            skew = make_skew_product(base.clone(), g.clone(), phi)?;
            (&skew, standard_family(base.dim(), Some(g)))
        }
        None => (&base, standard_family(base.dim(), None)),
    };
    let ns = if cfg.n.is_empty() { vec![10_000] } else { cfg.n.clone() };
    let mut rng = seeded(cfg.seed);
    let starts: Vec<Point> = (0..cfg.starts.unwrap_or(8)).map(|_| system.sample(&mut rng)).collect();
    let mut rows: Vec<(u64, String, usize, f64)> = Vec::new();
    for &n in &ns {
        let rep = birkhoff_from(system, &family, n, &starts);
        rows.extend(rep.rows.into_iter().map(|r| (n, r.function, r.start, r.score)));
    }
    rows.sort_by(|x, y| (x.0, &x.1, x.2).cmp(&(y.0, &y.1, y.2)));
    let n_max = *ns.iter().max().expect("nonempty");
    let worst = rows
        .iter()
        .filter(|r| r.0 == n_max)
        .max_by(|x, y| x.3.total_cmp(&y.3))
        .expect("nonempty family");
    let passed = cfg.threshold.is_none_or(|t| rows.iter().filter(|r| r.0 == n_max).all(|r| r.3 <= t));
    let mut summary = vec![format!("max score {} ({}, start {}) at n = {n_max}", worst.3, worst.1, worst.2)];
    if let Some(t) = cfg.threshold {
        summary.push(format!("threshold {t}: {}", if passed { "every score within" } else { "exceeded" }));
    }
    Ok(ExperimentReport {
        header: ["function-id", "start-id", "n", "score"].map(String::from).to_vec(),
        rows: rows.into_iter().map(|(n, f, s, x)| vec![f, s.to_string(), n.to_string(), num(x)]).collect(),
        passed,
        summary,
    })
}

fn perturb_params(cfg: &ExperimentConfig, c: BoxSet, target: Vec<Element>) -> PerturbationParams {
    let mut p = PerturbationParams::new(c, cfg.a.unwrap_or(0.1), cfg.delta.unwrap_or(0.01), target);
    if let Some(b) = cfg.b {
        p.b = b;
    }
    p.n = cfg.half_height.unwrap_or(0);
    p.seed = cfg.seed;
    p.k0_seed = cfg.seed;
    if let Some(k) = cfg.k0_grid {
        p.k0_grid = k;
    }
    if let Some(k) = cfg.del_constant {
        p.del_constant = k;
    }
    p
}

const PERTURB_HEADER: [&str; 5] = ["seed", "k0", "fraction", "c_a", "pass"];

fn run_perturb_simple(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let base = parse_system(cfg.system.as_deref().unwrap_or_default())?;
    let group = group_of(cfg)?.expect("validated");
    let phi0 = cocycle_of(cfg, base.dim(), &group)?;
    let [g] = cfg.target.as_slice() else {
        return Err(config_err("target", "the simple case takes one target"));
    };
    let params = perturb_params(cfg, c_of(cfg, base.dim())?, vec![group.parse_element(g)?]);
    let seeds = cfg.seeds.unwrap_or(1);
    let results: Vec<(u64, Result<PerturbationResult>)> = (0..seeds as u64)
        .into_par_iter()
        .map(|i| {
            let mut p = params.clone();
            p.seed = derive_seed(cfg.seed, i);
            (p.seed, perturb_simple(&phi0, &base, &group, &p))
        })
        .collect();
    let mut rows = Vec::new();
    let mut passed = true;
    let mut summary = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(r) => {
                passed &= r.passed;
                summary.push(format!("seed {seed}: fraction {} vs c_a {}, d = {}, N = {}", r.fraction, r.c_a, r.distance, r.half_height));
                rows.push(vec![seed.to_string(), "-".into(), num(r.fraction), num(r.c_a), flag(r.passed)]);
            }
            Err(e @ LabError::HalfHeightCap { .. }) => {
                passed = false;
                summary.push(format!("seed {seed}: {e}"));
                rows.push(vec![seed.to_string(), "-".into(), num(0.0), num(f64::NAN), flag(false)]);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ExperimentReport {
        header: PERTURB_HEADER.map(String::from).to_vec(),
        rows,
        passed,
        summary,
    })
}

/// The relative instance a config describes: `H = {e}` and a one-point
/// fiber.
pub fn relative_instance(cfg: &ExperimentConfig) -> Result<(RelativeInstance, PerturbationParams)> {
    let z = parse_system(cfg.system.as_deref().ok_or_else(|| config_err("system", "required"))?)?;
    let k: Group = cfg.extension.as_deref().ok_or_else(|| config_err("extension", "required"))?.parse()?;
    let g = group_of(cfg)?.ok_or_else(|| config_err("group", "required"))?;
    let gamma = parse_cocycle(cfg.gamma.as_deref().ok_or_else(|| config_err("gamma", "required"))?, 1, &k)?;
    let d = k.arity();
    let phi0 = cocycle_of(cfg, 1 + d, &g)?;
    let target = match cfg.target.as_slice() {
        [t] => vec![g.parse_element(t)?; 2],
        [t1, t2] => vec![g.parse_element(t1)?, g.parse_element(t2)?],
        _ => return Err(config_err("target", "the relative case takes one or two targets")),
    };
    if !cfg.c.is_empty() {
        return Err(config_err("c", "the relative case uses the whole space"));
    }
    let inst = RelativeInstance {
        z,
        space: HomogeneousSpace::trivial(k),
        gamma,
        fiber: FiberSpace::Point,
        phi0,
    };
    let params = perturb_params(cfg, BoxSet::full(1 + 2 * d), target);
    Ok((inst, params))
}

fn run_perturb_relative(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (inst, params) = relative_instance(cfg)?;
    let k = inst.space.group.clone();
    let results = match cfg.seeds {
        Some(s) => relative_seed_sweep(&inst, &params, s)?,
        None => vec![perturb_relative(&inst, &params)?],
    };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for r in &results {
        summary.push(format!(
            "seed {}: {:.4} of the k0 grid passed (need {}), d = {}, N = {}",
            r.seed,
            r.k0_pass_fraction,
            1.0 - params.b,
            r.distance,
            r.half_height
        ));
        rows.push(vec![r.seed.to_string(), "-".into(), num(r.k0_pass_fraction), num(r.c_a), flag(r.passed)]);
        for row in &r.k0_table {
            let frac = row.lhs / (row.c_measure * row.c_measure);
            rows.push(vec![r.seed.to_string(), k.format_element(&row.k0), num(frac), num(r.c_a), flag(row.pass)]);
        }
    }
    Ok(ExperimentReport {
        header: PERTURB_HEADER.map(String::from).to_vec(),
        rows,
        passed: results.iter().any(|r| r.passed),
        summary,
    })
}

fn run_lemmas(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let grid = cfg.lemmas.clone().unwrap_or_default();
    let rows = lemma_grid(&grid, cfg.seed)?;
    let failed: Vec<String> = rows.iter().filter(|r| !r.pass).map(|r| format!("{} {}", r.lemma, r.params)).collect();
    let mut summary = vec![format!("{} of {} grid points pass", rows.len() - failed.len(), rows.len())];
    summary.extend(failed.iter().map(|f| format!("failed: {f}")));
    Ok(ExperimentReport {
        header: ["lemma", "params", "bound", "empirical", "margin", "pass"].map(String::from).to_vec(),
        rows: rows
            .iter()
            .map(|r| vec![r.lemma.to_string(), r.params.clone(), num(r.bound), num(r.empirical), num(r.margin), flag(r.pass)])
            .collect(),
        passed: failed.is_empty(),
        summary,
    })
}

fn run_tower(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let base = parse_system(cfg.system.as_deref().unwrap_or_default())?;
    let eps = cfg.eps.unwrap_or(0.1);
    let offset = from_unit(cfg.offset.unwrap_or(0.0));
    let mut tower = build_tower_at(&base, cfg.height.expect("validated"), eps, offset)?;
    let group = group_of(cfg)?;
    if let Some(g) = &group {
        let phi0 = cocycle_of(cfg, base.dim(), g)?;
        tower = purify(&tower, &base, &phi0, &c_of(cfg, base.dim())?, DEFAULT_COLUMN_CAP)?;
    }
    let mut header = vec!["column".to_string(), "level".to_string()];
    for axis in 0..tower.dim {
        header.push(format!("lo{axis}"));
        header.push(format!("hi{axis}"));
    }
    header.push("value".into());
    header.push("in_c".into());
    let mut rows = Vec::new();
    for (ci, col) in tower.columns.iter().enumerate() {
        for i in 0..col.height() {
            let mut r = vec![ci.to_string(), i.to_string()];
            for side in &col.level(i).sides {
                r.push(num(len_to_unit(side.lo)));
                r.push(num(len_to_unit(side.hi)));
            }
            r.push(match (&group, col.values.get(i)) {
                (Some(g), Some(v)) => g.format_element(v),
                _ => "-".into(),
            });
            r.push(col.in_c.get(i).map_or("-".into(), |&b| flag(b)));
            rows.push(r);
        }
    }
    let disjoint = tower.levels_disjoint();
    let coverage = tower.coverage();
    let passed = disjoint && coverage >= 1.0 - eps;
    Ok(ExperimentReport {
        header,
        rows,
        passed,
        summary: vec![format!(
            "{} columns, coverage {coverage}, kac heights {:?}, levels disjoint: {disjoint}",
            tower.columns.len(),
            tower.kac_heights
        )],
    })
}

/// Which curve [`emit_plotdata`] extracts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// `(n, score)` from an ergodicity report.
    ScoreVsN,
    /// `(k0 coordinate, fraction)` from a relative perturbation report.
    FractionVsK0,
}

impl FromStr for PlotKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score-vs-n" | "ergodicity" => Ok(PlotKind::ScoreVsN),
            "fraction-vs-k0" | "perturb" => Ok(PlotKind::FractionVsK0),
            _ => Err(LabError::Parse {
                what: "plot kind",
                input: s.into(),
                reason: "expected score-vs-n or fraction-vs-k0".into(),
            }),
        }
    }
}

impl PlotKind {
    fn columns(self) -> (&'static str, &'static str) {
        match self {
            PlotKind::ScoreVsN => ("n", "score"),
            PlotKind::FractionVsK0 => ("k0", "fraction"),
        }
    }

    /// Guesses the kind from a report's header line.
    pub fn detect(report: &str) -> Option<PlotKind> {
        let header = report.lines().next()?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.contains(&"score") && cols.contains(&"n") {
            Some(PlotKind::ScoreVsN)
        } else if cols.contains(&"k0") && cols.contains(&"fraction") {
            Some(PlotKind::FractionVsK0)
        } else {
            None
        }
    }
}

/// Two whitespace-separated columns under a header line, sorted by x.
/// Summary rows of a perturbation report (`k0 = -`) are skipped.
pub fn emit_plotdata(report: &str, kind: PlotKind) -> Result<String> {
    let (xc, yc) = kind.columns();
    let mut out = format!("{xc} {yc}\n");
    if report.trim().is_empty() {
        return Ok(out);
    }
    let bad = |reason: String| LabError::Parse {
        what: "report",
        input: report.lines().next().unwrap_or_default().to_string(),
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().from_reader(report.as_bytes());
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column `{name}`")));
    let (xi, yi) = (find(xc)?, find(yc)?);
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let (x, y) = (rec.get(xi).unwrap_or_default(), rec.get(yi).unwrap_or_default());
        if kind == PlotKind::FractionVsK0 && x == "-" {
            continue;
        }
        let first = x.split(';').next().unwrap_or_default();
        let xv: f64 = first.trim().parse().map_err(|_| bad(format!("row {}: bad {xc} `{x}`", line + 2)))?;
        let yv: f64 = y.trim().parse().map_err(|_| bad(format!("row {}: bad {yc} `{y}`", line + 2)))?;
        pts.push((xv, yv));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (x, y) in pts {
        out.push_str(&format!("{x} {y}\n"));
    }
    Ok(out)
}
