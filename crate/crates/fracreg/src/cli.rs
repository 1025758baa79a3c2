//! Batch front-end: a TOML config plus flag overrides select one task, whose
//! CSV/JSON artifacts and a hashed manifest are written to the output directory.

use crate::covering::cover;
use crate::extension::{ExtensionField, ExtensionParams};
use crate::fracsolve::{interval_solution, solve, Mesh};
use crate::polytope::{fixtures, partition_census, Kind, NeighborhoodSpec, Polytope};
use crate::quadrature::{weighted_norm, FacePower, MultiIndex, Poly3, PolyField, Product, Region, WeightSpec};
use crate::verify::{growth_profile, run_all, RatioReport, Verdict};
use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Partition,
    Cover,
    Norms,
    Extend,
    Solve,
    Verify,
    Growth,
}

#[derive(Debug, Parser)]
#[command(name = "fracreg", version, about = "Weighted regularity experiments on 3D polytopes")]
pub struct Cli {
    /// Task to run; may instead be given as `task` in the config.
    pub task: Option<Task>,
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Polytope JSON file or one of `cube`, `tetrahedron`, `l_prism`.
    #[arg(long)]
    pub polytope: Option<String>,
    /// Mesh file, or `intervalN` / `cubeN`.
    #[arg(long)]
    pub mesh: Option<String>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub chat: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub pmax: Option<u32>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Monte-Carlo sample budget.
    #[arg(long, alias = "samples")]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Neighborhood kind for `cover` (default: all seven).
    #[arg(long)]
    pub kind: Option<String>,
    /// Right-hand side for `solve`; only `one` is supported.
    #[arg(long)]
    pub f: Option<String>,
}

/// Resolved run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub polytope: Option<String>,
    pub mesh: Option<String>,
    pub xi: Option<f64>,
    pub c: Option<f64>,
    pub chat: Option<f64>,
    pub s: Option<f64>,
    pub t: Option<f64>,
    pub pmax: Option<u32>,
    pub depth: Option<usize>,
    #[serde(alias = "samples")]
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub kind: Option<String>,
    pub f: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(m) => write!(f, "error: {m}"),
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

fn usage<T>(m: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(m.into()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Flags win over config values.
    pub fn merge(mut self, cli: &Cli) -> Self {
        macro_rules! over {
            ($($k:ident),*) => { $( if cli.$k.is_some() { self.$k = cli.$k.clone(); } )* };
        }
        over!(task, polytope, mesh, xi, c, chat, s, t, pmax, depth, budget, seed, out, kind, f);
        self
    }

    fn xi(&self) -> f64 {
        self.xi.unwrap_or(0.1)
    }
    fn s(&self) -> f64 {
        self.s.unwrap_or(0.5)
    }
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
    fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Range checks with the offending key in the message.
    pub fn validate(&self) -> Result<Task, CliError> {
        let Some(task) = self.task else {
            return usage("no task given (pass one of partition, cover, norms, extend, solve, verify, growth)");
        };
        let open = |k: &str, v: Option<f64>, lo: f64, hi: f64| match v {
            Some(x) if !(lo < x && x < hi) => usage(format!("`{k}` = {x} outside ({lo}, {hi})")),
            _ => Ok(()),
        };
        open("xi", self.xi, 0.0, 1.0)?;
        open("c", self.c, 0.0, 1.0)?;
        open("chat", self.chat, 0.0, 1.0)?;
        open("s", self.s, 0.0, 1.0)?;
        if let Some(t) = self.t {
            if !(0.0..1.0).contains(&t) {
                return usage(format!("`t` = {t} outside [0, 1)"));
            }
        }
        if let (Some(c), Some(ch)) = (self.c, self.chat) {
            if c >= ch {
                return usage(format!("`c` = {c} must be below `chat` = {ch}"));
            }
        }
        if let Some(p) = self.pmax {
            if !(1..=8).contains(&p) {
                return usage(format!("`pmax` = {p} outside 1..=8"));
            }
        }
        if let Some(d) = self.depth {
            if !(1..=24).contains(&d) {
                return usage(format!("`depth` = {d} outside 1..=24"));
            }
        }
        if self.budget == Some(0) {
            return usage("`budget` must be positive");
        }
        if let Some(f) = &self.f {
            if f != "one" {
                return usage(format!("`f` = {f:?}: only `one` is supported"));
            }
        }
        Ok(task)
    }

    pub fn load_polytope(&self) -> Result<Polytope, CliError> {
        match self.polytope.as_deref().unwrap_or("cube") {
            "cube" => Ok(fixtures::cube()),
            "tetrahedron" => Ok(fixtures::tetrahedron()),
            "l_prism" => Ok(fixtures::l_prism()),
            path => Polytope::load(path).map_err(|e| CliError::Usage(format!("`polytope` {path}: {e}"))),
        }
    }

    pub fn load_mesh(&self) -> Result<Mesh, CliError> {
        let m = self.mesh.as_deref().unwrap_or("interval32");
        let num = |p: &str| m.strip_prefix(p).and_then(|n| n.parse::<usize>().ok()).filter(|n| *n > 0);
        if let Some(n) = num("interval") {
            return Ok(Mesh::interval(n, -1.0, 1.0));
        }
        if let Some(n) = num("cube") {
            return Ok(Mesh::cube(n));
        }
        Mesh::load(m).map_err(|e| CliError::Usage(format!("`mesh` {m}: {e}")))
    }
}

/// Files written by a task, in write order.
struct Artifacts {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Artifacts {
    fn write(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), body).map_err(run_err)?;
        let hash = hex::encode(Sha256::digest(body.as_bytes()));
        self.files.push((name.to_string(), hash));
        Ok(())
    }
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    file: &'a str,
    sha256: &'a str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    task: Task,
    config: &'a RunConfig,
    seed: u64,
    wall_time_s: f64,
    status: &'a str,
    artifacts: Vec<ManifestEntry<'a>>,
}

/// Task outcome: success or an inconclusive verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Inconclusive,
}

fn json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(run_err)
}

fn task_partition(cfg: &RunConfig, a: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = cfg.load_polytope()?;
    let census = partition_census(&p, cfg.xi(), cfg.budget.unwrap_or(100_000), cfg.seed()).map_err(run_err)?;
    a.write("partition.csv", &census.to_csv())?;
    a.write("partition.json", &json(&census)?)?;
    if census.uncovered > 0 || census.abut_violations > 0 {
        return Err(CliError::Run(format!(
            "partition incomplete: {} uncovered, {} abut violations",
            census.uncovered, census.abut_violations
        )));
    }
    Ok(Outcome::Ok)
}

fn task_cover(cfg: &RunConfig, a: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = cfg.load_polytope()?;
    let kinds: Vec<Kind> = match &cfg.kind {
        Some(k) => vec![Kind::parse(k).filter(|k| *k != Kind::Int).ok_or_else(|| CliError::Usage(format!("`kind` = {k:?}")))?],
        None => Kind::ALL.iter().copied().filter(|k| *k != Kind::Int).collect(),
    };
    let (c, chat, depth) = (cfg.c.unwrap_or(0.25), cfg.chat.unwrap_or(0.5), cfg.depth.unwrap_or(4));
    let n = cfg.budget.unwrap_or(20_000);
    let mut csv = String::from("kind,depth,elements,n_emp,coverage,unresolved\n");
    let mut outcome = Outcome::Ok;
    for k in kinds {
        let spec = NeighborhoodSpec::first_of(&p, k, cfg.xi()).map_err(run_err)?;
        let cov = cover(&p, spec, c, chat, depth).map_err(run_err)?.with_certificate(n, cfg.seed());
        let rep = cov.coverage(n, cfg.seed().wrapping_add(1));
        let n_emp = cov.certificate.as_ref().map_or(0, |c| c.n_emp);
        csv.push_str(&format!("{},{depth},{},{n_emp},{},{}\n", k.name(), cov.elements.len(), rep.fraction, cov.unresolved));
        a.write(&format!("cover_{}.jsonl", k.name()), &cov.to_jsonl())?;
        if rep.fraction < 1.0 || cov.unresolved > 0 {
            outcome = Outcome::Inconclusive;
        }
    }
    a.write("cover.csv", &csv)?;
    Ok(outcome)
}

/// Model field `r_f^s·(1 + x₁²/10)` for the face named by the neighborhood.
fn face_model(p: &Polytope, spec: &NeighborhoodSpec, s: f64) -> Product<FacePower, PolyField> {
    let f = spec.f.unwrap_or(p.f_of_e[p.e_of_v[0][0]][0]);
    let bump = Poly3::constant(1.0).add(&Poly3::monomial(0.1, [2, 0, 0]));
    Product(FacePower::for_face(p, f, s), PolyField::new(bump))
}

fn task_norms(cfg: &RunConfig, a: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = cfg.load_polytope()?;
    let (s, t) = (cfg.s(), cfg.t.unwrap_or(0.25));
    let mut csv = String::from("neighborhood,b_perp,b_parperp,b_par,value,error,divergent\n");
    for k in Kind::ALL.iter().copied().filter(|k| *k != Kind::Int) {
        let spec = NeighborhoodSpec::first_of(&p, k, cfg.xi()).map_err(run_err)?;
        let u = face_model(&p, &spec, s);
        let fr = p.frame_for(&spec);
        for beta in [MultiIndex::default(), MultiIndex::new(1, 0, 0)] {
            let w = WeightSpec::regularity_unchecked(&spec, s, t, beta);
            let r = weighted_norm(&u, &Region::Nbhd { poly: &p, spec }, &w, beta, &fr).map_err(run_err)?;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                crate::verify::csv_field(&spec.label()),
                beta.b_perp,
                beta.b_parperp,
                beta.b_par,
                r.value,
                r.error,
                r.divergent
            ));
        }
    }
    a.write("norms.csv", &csv)?;
    Ok(Outcome::Ok)
}

fn task_extend(cfg: &RunConfig, a: &mut Artifacts) -> Result<Outcome, CliError> {
    let params = ExtensionParams::new(3, cfg.s()).map_err(run_err)?;
    let x0 = [0.5; 3];
    let v = ExtensionField::new(params, Arc::new(PolyField::bump(x0, 0.25, 2))).map_err(run_err)?;
    let mut csv = String::from("x,y,z,height,value,weighted_dy\n");
    for i in 0..=4 {
        let x = [0.5 + 0.05 * i as f64, 0.5, 0.5];
        for y in [0.2, 0.1, 0.05, 0.025] {
            let u = v.extend(&x, y).map_err(run_err)?;
            let g = v.weighted_dy(&x, y).map_err(run_err)?;
            csv.push_str(&format!("{},{},{},{y},{u},{g}\n", x[0], x[1], x[2]));
        }
    }
    a.write("extend.csv", &csv)?;
    let mut dtn = String::from("x,y,z,dtn,direct\n");
    for i in 0..=2 {
        let x = [0.5 + 0.05 * i as f64, 0.5, 0.5];
        let d = v.dtn(&x).map_err(run_err)?;
        let f = v.frac_laplacian_direct(&x).map_err(run_err)?;
        dtn.push_str(&format!("{},{},{},{d},{f}\n", x[0], x[1], x[2]));
    }
    a.write("dtn.csv", &dtn)?;
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct SolveSummary {
    dim: usize,
    s: f64,
    nodes: usize,
    unknowns: usize,
    residual: f64,
    energy: f64,
    min_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_error_vs_closed_form: Option<f64>,
}

fn task_solve(cfg: &RunConfig, a: &mut Artifacts) -> Result<Outcome, CliError> {
    let mesh = cfg.load_mesh()?;
    let s = cfg.s();
    let sol = solve(&mesh, &crate::quadrature::Const(1.0), s).map_err(run_err)?;
    let on_interval = mesh.dim == 1
        && mesh.nodes.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) == -1.0
        && mesh.nodes.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) == 1.0;
    let err = on_interval.then(|| {
        mesh.nodes.iter().zip(&sol.values).map(|(x, v)| (v - interval_solution(s, x[0])).abs()).fold(0.0, f64::max)
    });
    let summary = SolveSummary {
        dim: mesh.dim,
        s,
        nodes: mesh.nodes.len(),
        unknowns: mesh.n_unknowns(),
        residual: sol.residual,
        energy: sol.energy,
        min_value: sol.values.iter().copied().fold(f64::INFINITY, f64::min),
        max_error_vs_closed_form: err,
    };
    a.write("solution.csv", &sol.to_csv(&mesh))?;
    a.write("solve.json", &json(&summary)?)?;
    Ok(Outcome::Ok)
}

fn task_verify(cfg: &RunConfig, a: &mut Artifacts) -> Result<Outcome, CliError> {
    let reports = run_all(cfg.s(), cfg.pmax.unwrap_or(4) as usize, cfg.budget.unwrap_or(100_000), cfg.seed()).map_err(run_err)?;
    let mut csv = format!("{}\n", RatioReport::CSV_HEADER);
    for r in &reports {
        csv.push_str(&r.csv_rows());
    }
    a.write("verify.csv", &csv)?;
    a.write("verify.json", &json(&reports)?)?;
    let ok = reports.iter().all(|r| r.verdict == Verdict::Bounded);
    Ok(if ok { Outcome::Ok } else { Outcome::Inconclusive })
}

fn task_growth(cfg: &RunConfig, a: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = cfg.load_polytope()?;
    let spec = NeighborhoodSpec::first_of(&p, Kind::F, cfg.xi()).map_err(run_err)?;
    let s = cfg.s();
    let u = face_model(&p, &spec, s);
    let pmax = cfg.pmax.unwrap_or(4);
    let betas: Vec<MultiIndex> = (1..=pmax).map(|k| MultiIndex::new(k, 0, 0)).collect();
    let g = growth_profile(&u, &p, &spec, &p.frame_for(&spec), pmax, cfg.t.unwrap_or(0.45), s, Some(&betas)).map_err(run_err)?;
    a.write("growth.csv", &g.to_csv())?;
    a.write("growth.json", &json(&g)?)?;
    Ok(if g.verdict == Verdict::Bounded { Outcome::Ok } else { Outcome::Inconclusive })
}

/// Run a resolved config; returns the outcome and the artifact directory.
pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let task = cfg.validate()?;
    let start = Instant::now();
    let dir = cfg.out();
    std::fs::create_dir_all(&dir).map_err(run_err)?;
    let mut a = Artifacts { dir: dir.clone(), files: Vec::new() };
    let outcome = match task {
        Task::Partition => task_partition(cfg, &mut a),
        Task::Cover => task_cover(cfg, &mut a),
        Task::Norms => task_norms(cfg, &mut a),
        Task::Extend => task_extend(cfg, &mut a),
        Task::Solve => task_solve(cfg, &mut a),
        Task::Verify => task_verify(cfg, &mut a),
        Task::Growth => task_growth(cfg, &mut a),
    }?;
    let m = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        task,
        config: cfg,
        seed: cfg.seed(),
        wall_time_s: start.elapsed().as_secs_f64(),
        status: if outcome == Outcome::Ok { "ok" } else { "inconclusive" },
        artifacts: a.files.iter().map(|(f, h)| ManifestEntry { file: f, sha256: h }).collect(),
    };
    std::fs::write(dir.join("manifest.json"), json(&m)?).map_err(run_err)?;
    Ok(outcome)
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let base = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("`config` {}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::from_toml("")?,
    };
    Ok(base.merge(cli))
}

/// Parse, run and map to the exit status: 0 ok, 2 inconclusive, 1 error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match resolve(&cli).and_then(|cfg| run(&cfg)) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::Inconclusive) => 2,
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> i32 {
        main_with_args(std::iter::once("fracreg").chain(args.iter().copied()))
    }

    #[test]
    fn empty_config_is_a_usage_error() {
        let d = tempfile::tempdir().unwrap();
        let cfg = d.path().join("empty.toml");
        std::fs::write(&cfg, "").unwrap();
        assert_eq!(run_args(&["--config", cfg.to_str().unwrap()]), 1);
        assert_eq!(run_args(&[]), 1);
    }

    #[test]
    fn unknown_key_names_the_key() {
        let e = RunConfig::from_toml("task = \"solve\"\nbogus = 3\n").unwrap_err();
        assert!(e.to_string().contains("bogus"));
        let cfg = RunConfig::from_toml("task = \"solve\"\nxi = 1.5\n").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("`xi`"));
    }

    #[test]
    fn flags_override_config() {
        let cfg = RunConfig::from_toml("task = \"partition\"\nxi = 0.05\nseed = 3\n").unwrap();
        let cli = Cli::try_parse_from(["fracreg", "solve", "--xi", "0.1"]).unwrap();
        let m = cfg.merge(&cli);
        assert_eq!(m.task, Some(Task::Solve));
        assert_eq!(m.xi, Some(0.1));
        assert_eq!(m.seed, Some(3));
    }

    #[test]
    fn partition_run_is_deterministic_and_listed() {
        let d = tempfile::tempdir().unwrap();
        let (a, b) = (d.path().join("a"), d.path().join("b"));
        for o in [&a, &b] {
            let code = run_args(&["partition", "--polytope", "l_prism", "--xi", "0.1", "--samples", "5000", "--seed", "9", "--out", o.to_str().unwrap()]);
            assert_eq!(code, 0);
        }
        let ca = std::fs::read(a.join("partition.csv")).unwrap();
        assert_eq!(ca, std::fs::read(b.join("partition.csv")).unwrap());
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
        let files: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|e| e["file"].as_str().unwrap()).collect();
        assert_eq!(files, ["partition.csv", "partition.json"]);
        let want = hex::encode(Sha256::digest(&ca));
        assert_eq!(m["artifacts"][0]["sha256"].as_str().unwrap(), want);
    }

    #[test]
    fn solve_interval_reports_closed_form_error() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join("s");
        assert_eq!(run_args(&["solve", "--mesh", "interval16", "--s", "0.5", "--f", "one", "--out", out.to_str().unwrap()]), 0);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("solve.json")).unwrap()).unwrap();
        let e = v["max_error_vs_closed_form"].as_f64().unwrap();
        assert!(e < 0.2, "{e}");
        assert!(std::fs::read_to_string(out.join("solution.csv")).unwrap().starts_with("node,x,y,z,value\n"));
    }

    #[test]
    fn bad_values_exit_one() {
        let d = tempfile::tempdir().unwrap();
        let o = d.path().to_str().unwrap();
        assert_eq!(run_args(&["solve", "--f", "sin", "--out", o]), 1);
        assert_eq!(run_args(&["cover", "--c", "0.6", "--chat", "0.5", "--out", o]), 1);
        assert_eq!(run_args(&["partition", "--polytope", "/nonexistent.json", "--out", o]), 1);
        assert_eq!(run_args(&["partition", "--xi", "0.4", "--out", o]), 1);
    }

    #[test]
    fn cover_single_kind() {
        let d = tempfile::tempdir().unwrap();
        let o = d.path().join("c");
        let code = run_args(&["cover", "--kind", "vef", "--xi", "0.2", "--depth", "3", "--budget", "4000", "--out", o.to_str().unwrap()]);
        assert_eq!(code, 0);
        let csv = std::fs::read_to_string(o.join("cover.csv")).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("vef,3,"));
        assert!(o.join("cover_vef.jsonl").exists());
    }
}
