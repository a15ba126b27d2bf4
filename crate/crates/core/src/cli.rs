//! Scenario runner behind the `tcbe` binary.
//!
//! A scenario is a TOML file with a closed schema; unknown keys are rejected.
//! Every tolerance that decides a verdict must be written in the file. The
//! runner executes the listed experiments, writes per-experiment CSV/JSON
//! artifacts, and a `report.json` whose bytes depend only on the scenario and
//! the build. Wall-clock data goes to `metadata.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::convexify::{
    build_weight, convexity_certificate, laplacian_bound_check, minkowski_content, ConvexifyParams, Cutoff, DomainMask,
    CUTOFF_AUDIT_POINTS,
};
use crate::dirichlet::{assemble_generator, be_defect, be_defect_scale, time_change, Generator};
use crate::error::{Error, Result};
use crate::heatflow::{feynman_kac_check, gradient_estimate_check};
use crate::mesh::{sample_scalar, ScalarField};
use crate::metricgeom::{comparison_bounds_check, distance_reports, write_path_csv, PathGraph};
use crate::models::{first_harmonic, ModelData, ModelSpace, WeightSpec};
use crate::smooth_oracle::{gradient_norm_sq, predicted_kprime, verify_theorem_b_multi, weighted_laplacian, CurvatureReport};
use crate::timechange::{quartic_sweep_grid, sweep_matrix_inequality, sweep_quartic_form, DimensionBound};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Experiment {
    #[serde(rename = "verify-be")]
    VerifyBe,
    #[serde(rename = "verify-thmB")]
    VerifyThmB,
    #[serde(rename = "gradient-estimate")]
    GradientEstimate,
    #[serde(rename = "distance")]
    Distance,
    #[serde(rename = "bm-check")]
    BmCheck,
    #[serde(rename = "convexify")]
    Convexify,
    #[serde(rename = "sweeps")]
    Sweeps,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::VerifyBe => "verify-be",
            Self::VerifyThmB => "verify-thmB",
            Self::GradientEstimate => "gradient-estimate",
            Self::Distance => "distance",
            Self::BmCheck => "bm-check",
            Self::Convexify => "convexify",
            Self::Sweeps => "sweeps",
        }
    }

    fn section(self) -> &'static str {
        match self {
            Self::VerifyBe => "verify_be",
            Self::VerifyThmB => "verify_thmb",
            Self::GradientEstimate => "gradient_estimate",
            Self::Distance => "distance",
            Self::BmCheck => "bm_check",
            Self::Convexify => "convexify",
            Self::Sweeps => "sweeps",
        }
    }

    fn stochastic(self) -> bool {
        matches!(self, Self::Distance | Self::BmCheck | Self::Convexify | Self::Sweeps)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Either an explicit `K'` or the minimum of the predicted field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum KPrime {
    Predicted,
    Value(f64),
}

impl<'de> Deserialize<'de> for KPrime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v.is_finite() => Ok(Self::Value(v)),
            Raw::Num(v) => Err(serde::de::Error::custom(format!("K' must be finite, got {v}"))),
            Raw::Str(s) if s == "predicted" => Ok(Self::Predicted),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("K' must be a number or \"predicted\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub space: ModelSpace,
    /// Nodes per `2π` of chart length.
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    Zero,
    Constant,
    Harmonic,
}

/// `kind = "zero"`, `kind = "constant"` with `value`, or `kind = "harmonic"`
/// with `amplitude`; keys belonging to another kind are errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSection {
    pub kind: WeightKind,
    pub value: Option<f64>,
    pub amplitude: Option<f64>,
}

impl WeightSection {
    pub fn spec(&self) -> std::result::Result<WeightSpec, String> {
        match (self.kind, self.value, self.amplitude) {
            (WeightKind::Zero, None, None) => Ok(WeightSpec::Zero),
            (WeightKind::Constant, Some(value), None) if value.is_finite() => Ok(WeightSpec::Constant { value }),
            (WeightKind::Harmonic, None, Some(amplitude)) if amplitude.is_finite() => Ok(WeightSpec::Harmonic { amplitude }),
            (WeightKind::Zero, ..) => Err("kind \"zero\" takes no other keys".into()),
            (WeightKind::Constant, ..) => Err("kind \"constant\" takes exactly one finite `value`".into()),
            (WeightKind::Harmonic, ..) => Err("kind \"harmonic\" takes exactly one finite `amplitude`".into()),
        }
    }
}

impl From<WeightSpec> for WeightSection {
    fn from(w: WeightSpec) -> Self {
        match w {
            WeightSpec::Zero => Self { kind: WeightKind::Zero, value: None, amplitude: None },
            WeightSpec::Constant { value } => Self { kind: WeightKind::Constant, value: Some(value), amplitude: None },
            WeightSpec::Harmonic { amplitude } => Self { kind: WeightKind::Harmonic, value: None, amplitude: Some(amplitude) },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub n: DimensionBound,
    pub nprime: DimensionBound,
    #[serde(default = "predicted")]
    pub kprime: KPrime,
}

fn predicted() -> KPrime {
    KPrime::Predicted
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBeSection {
    /// Relative to `Σ m Γ(f) φ`.
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyThmBSection {
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientSection {
    pub tolerance: f64,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_times() -> Vec<f64> {
    vec![0.1, 0.5, 1.0]
}

fn default_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSection {
    /// Bound on the relative primal/dual gap.
    pub tolerance: f64,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "yes")]
    pub diagonals: bool,
}

fn default_pairs() -> usize {
    100
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmSection {
    /// Largest accepted `|z|`.
    pub z_max: f64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_time")]
    pub time: f64,
    #[serde(default)]
    pub start_node: usize,
}

fn default_paths() -> usize {
    100_000
}

fn default_time() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    /// Complement of a disc centred in the chart.
    DiscComplement,
    /// A disc centred in the chart.
    Disc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexifySection {
    /// Accepted negative part of the interior Laplacian defect.
    pub laplacian_tolerance: f64,
    pub domain: DomainKind,
    pub radius: f64,
    pub lprime: f64,
    pub r0: f64,
    #[serde(default = "default_certificate_pairs")]
    pub pairs: usize,
}

fn default_certificate_pairs() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Lower bound on the scaled defects and eigenvalues.
    pub tolerance: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub experiments: Vec<Experiment>,
    #[serde(default)]
    pub parallel: bool,
    pub model: ModelSection,
    pub weight: WeightSection,
    pub bounds: Bounds,
    pub verify_be: Option<VerifyBeSection>,
    pub verify_thmb: Option<VerifyThmBSection>,
    pub gradient_estimate: Option<GradientSection>,
    pub distance: Option<DistanceSection>,
    pub bm_check: Option<BmSection>,
    pub convexify: Option<ConvexifySection>,
    pub sweeps: Option<SweepSection>,
}

fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn schema_error(text: Option<&str>, path: &str, msg: impl fmt::Display) -> Error {
    let key = path.rsplit('.').next().unwrap_or(path);
    match text.and_then(|t| line_of(t, key)) {
        Some(line) => Error::Config(format!("{path} (line {line}): {msg}")),
        None => Error::Config(format!("{path}: {msg}")),
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate(Some(text))?;
        Ok(s)
    }

    /// Semantic checks that the schema alone cannot express.
    pub fn validate(&self, text: Option<&str>) -> Result<()> {
        let err = |path: &str, msg: String| schema_error(text, path, msg);
        if self.experiments.is_empty() {
            return Err(err("experiments", "at least one experiment is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.experiments {
            if !seen.insert(*e) {
                return Err(err("experiments", format!("'{e}' is listed twice")));
            }
        }
        let n = self.bounds.n;
        if !n.is_finite() || n.value() < 2.0 || n.value() < self.model.space.dimension() as f64 {
            return Err(err(
                "bounds.n",
                format!("N = {n} must be finite, at least 2 and at least the dimension {}", self.model.space.dimension()),
            ));
        }
        if self.bounds.nprime <= n {
            return Err(err(
                "bounds.nprime",
                format!("N' = {} must lie in the open interval (N, ∞] with N = {n}", self.bounds.nprime),
            ));
        }
        self.model.space.mesh(self.model.resolution).map_err(|e| err("model.resolution", e.to_string()))?;
        self.weight.spec().map_err(|m| err("weight.kind", m))?;
        for &e in &self.experiments {
            if e.stochastic() && self.seed.is_none() {
                return Err(err("seed", format!("experiment '{e}' is randomized and needs a seed")));
            }
            let present = match e {
                Experiment::VerifyBe => self.verify_be.is_some(),
                Experiment::VerifyThmB => self.verify_thmb.is_some(),
                Experiment::GradientEstimate => self.gradient_estimate.is_some(),
                Experiment::Distance => self.distance.is_some(),
                Experiment::BmCheck => self.bm_check.is_some(),
                Experiment::Convexify => self.convexify.is_some(),
                Experiment::Sweeps => self.sweeps.is_some(),
            };
            if !present {
                return Err(err(e.section(), format!("experiment '{e}' needs a [{}] section with its tolerance", e.section())));
            }
        }
        let positive = |path: &str, v: f64| -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(err(path, format!("must be a finite nonnegative number, got {v}")))
            }
        };
        if let Some(s) = &self.verify_be {
            positive("verify_be.tolerance", s.tolerance)?;
        }
        if let Some(s) = &self.verify_thmb {
            positive("verify_thmb.tolerance", s.tolerance)?;
        }
        if let Some(s) = &self.gradient_estimate {
            positive("gradient_estimate.tolerance", s.tolerance)?;
            if s.times.is_empty() || s.times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
                return Err(err("gradient_estimate.times", "must be a nonempty list of positive times".into()));
            }
            if !(s.dt > 0.0) || !s.dt.is_finite() {
                return Err(err("gradient_estimate.dt", format!("must be positive, got {}", s.dt)));
            }
        }
        if let Some(s) = &self.distance {
            positive("distance.tolerance", s.tolerance)?;
            if s.pairs == 0 {
                return Err(err("distance.pairs", "must be positive".into()));
            }
        }
        if let Some(s) = &self.bm_check {
            positive("bm_check.z_max", s.z_max)?;
            if s.paths < 2 {
                return Err(err("bm_check.paths", "needs at least 2 paths".into()));
            }
            if !(s.time > 0.0) || !s.time.is_finite() {
                return Err(err("bm_check.time", format!("must be positive, got {}", s.time)));
            }
            let len = self.model.space.mesh(self.model.resolution)?.len();
            if s.start_node >= len {
                return Err(err("bm_check.start_node", format!("{} is out of range for {len} nodes", s.start_node)));
            }
        }
        if let Some(s) = &self.convexify {
            positive("convexify.laplacian_tolerance", s.laplacian_tolerance)?;
            if self.experiments.contains(&Experiment::Convexify) && self.model.space != ModelSpace::FlatTorus {
                return Err(err("model.space", "the convexify experiment runs on the flat-torus model".into()));
            }
            if !(s.radius > 0.0) || s.radius >= std::f64::consts::PI / 2.0 {
                return Err(err("convexify.radius", format!("must lie in (0, π/2), got {}", s.radius)));
            }
            ConvexifyParams::new(s.lprime, s.r0, 0.0, n).map_err(|e| err("convexify.lprime", e.to_string()))?;
            if s.pairs == 0 {
                return Err(err("convexify.pairs", "must be positive".into()));
            }
        }
        if let Some(s) = &self.sweeps {
            positive("sweeps.tolerance", s.tolerance)?;
            if s.samples == 0 {
                return Err(err("sweeps.samples", "must be positive".into()));
            }
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Scenario::from_toml(&text)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: Experiment,
    pub pass: bool,
    pub summary: Value,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub weight: WeightSpec,
    pub bounds: Bounds,
    pub pass: bool,
    pub experiments: Vec<ExperimentReport>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

struct Outcome {
    pass: bool,
    summary: Value,
    artifacts: Vec<(String, Vec<u8>)>,
}

struct Context {
    model: ModelData,
    w: ScalarField,
    base: Generator,
    seed: u64,
}

/// Per-experiment seed derived from the scenario seed.
fn sub_seed(seed: u64, e: Experiment) -> u64 {
    seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(e as u64 + 1))
}

pub fn run(scenario: &Scenario) -> Result<RunReport> {
    scenario.validate(None)?;
    let started = SystemTime::now();
    let model = scenario.model.space.build(scenario.model.resolution)?;
    let weight = scenario.weight.spec().map_err(Error::Config)?;
    let w = weight.sample(&model.mesh)?;
    let base = assemble_generator(&model.metric, &model.v0)?;
    let ctx = Context { model, w, base, seed: scenario.seed.unwrap_or(0) };
    let exec = |e: Experiment| -> Result<(Outcome, f64)> {
        let t0 = Instant::now();
        let out = run_experiment(scenario, &ctx, e).map_err(|source| Error::Experiment {
            experiment: e.name().to_string(),
            source: Box::new(source),
        })?;
        Ok((out, t0.elapsed().as_secs_f64()))
    };
    let results: Vec<(Outcome, f64)> = if scenario.parallel {
        scenario.experiments.par_iter().map(|&e| exec(e)).collect::<Result<_>>()?
    } else {
        scenario.experiments.iter().map(|&e| exec(e)).collect::<Result<_>>()?
    };

    std::fs::create_dir_all(&scenario.output_dir)?;
    let mut experiments = Vec::new();
    let mut runtimes = BTreeMap::new();
    for (&e, (out, secs)) in scenario.experiments.iter().zip(results) {
        let mut names = Vec::new();
        for (name, bytes) in out.artifacts {
            std::fs::write(scenario.output_dir.join(&name), bytes)?;
            names.push(name);
        }
        runtimes.insert(e.name().to_string(), secs);
        experiments.push(ExperimentReport { experiment: e, pass: out.pass, summary: out.summary, artifacts: names });
    }
    let report = RunReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        model: scenario.model.clone(),
        weight,
        bounds: scenario.bounds.clone(),
        pass: experiments.iter().all(|e| e.pass),
        experiments,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(scenario.output_dir.join("report.json"), text)?;
    let stamp = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let meta = json!({
        "started_unix": stamp(started),
        "finished_unix": stamp(SystemTime::now()),
        "runtime_seconds": runtimes,
        "version": env!("CARGO_PKG_VERSION"),
    });
    std::fs::write(scenario.output_dir.join("metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(report)
}

fn run_experiment(s: &Scenario, ctx: &Context, e: Experiment) -> Result<Outcome> {
    let missing = || Error::Config(format!("missing [{}] section", e.section()));
    match e {
        Experiment::VerifyBe => verify_be(s, ctx, s.verify_be.as_ref().ok_or_else(missing)?),
        Experiment::VerifyThmB => verify_thmb(s, ctx, s.verify_thmb.as_ref().ok_or_else(missing)?),
        Experiment::GradientEstimate => gradient(s, ctx, s.gradient_estimate.as_ref().ok_or_else(missing)?),
        Experiment::Distance => distance(ctx, s.distance.as_ref().ok_or_else(missing)?, sub_seed(ctx.seed, e)),
        Experiment::BmCheck => bm_check(ctx, s.bm_check.as_ref().ok_or_else(missing)?, sub_seed(ctx.seed, e)),
        Experiment::Convexify => convexify(s, ctx, s.convexify.as_ref().ok_or_else(missing)?, sub_seed(ctx.seed, e)),
        Experiment::Sweeps => sweeps(s.sweeps.as_ref().ok_or_else(missing)?, sub_seed(ctx.seed, e)),
    }
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn certificate(s: &Scenario, ctx: &Context, tol: f64) -> Result<CurvatureReport> {
    let m = &ctx.model;
    Ok(verify_theorem_b_multi(&m.metric, &m.v0, s.bounds.n, &ctx.w, &[s.bounds.nprime], tol)?.remove(0))
}

fn resolve_kprime(s: &Scenario, cert: &CurvatureReport) -> f64 {
    match s.bounds.kprime {
        KPrime::Predicted => cert.min_predicted(),
        KPrime::Value(v) => v,
    }
}

fn min_over(values: &[f64], mask: &[bool]) -> f64 {
    values.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v).fold(f64::INFINITY, f64::min)
}

fn verify_thmb(s: &Scenario, ctx: &Context, sec: &VerifyThmBSection) -> Result<Outcome> {
    let rep = certificate(s, ctx, sec.tolerance)?;
    let min_oracle = min_over(&rep.oracle, &rep.interior);
    let (override_value, override_ok) = match s.bounds.kprime {
        KPrime::Predicted => (None, true),
        KPrime::Value(k) => (Some(k), min_oracle >= k - sec.tolerance),
    };
    let csv = csv_bytes(|b| rep.write_csv(b))?;
    Ok(Outcome {
        pass: rep.pass() && override_ok,
        summary: json!({
            "curvature": rep.summary,
            "min_predicted": rep.min_predicted(),
            "min_oracle": min_oracle,
            "kprime_override": override_value,
            "override_holds": override_ok,
        }),
        artifacts: vec![("verify-thmB.csv".into(), csv), ("verify-thmB.json".into(), rep.summary_json()?.into_bytes())],
    })
}

/// Test functions for the integrated curvature-dimension checks.
fn test_functions(m: &ModelData) -> Result<Vec<ScalarField>> {
    let two = m.mesh.dimension() == 2;
    Ok(vec![
        first_harmonic(&m.mesh)?,
        sample_scalar(&m.mesh, |x| (x[0] + if two { 2.0 * x[1] } else { 0.0 }).sin())?,
        sample_scalar(&m.mesh, |x| (0.5 * x[0].cos() + if two { 0.3 * x[1].sin() } else { 0.0 }).exp())?,
    ])
}

fn verify_be(s: &Scenario, ctx: &Context, sec: &VerifyBeSection) -> Result<Outcome> {
    let m = &ctx.model;
    let cert = certificate(s, ctx, f64::INFINITY)?;
    let kprime = resolve_kprime(s, &cert);
    let k_base = crate::smooth_oracle::optimal_k(&m.metric, &m.v0, s.bounds.n)?;
    let pair = time_change(&ctx.base, &ctx.w)?;
    let kp = ScalarField::constant(m.mesh.clone(), kprime)?;
    let one = ScalarField::constant(m.mesh.clone(), 1.0)?;
    let bump = first_harmonic(&m.mesh)?.map(|v| 1.0 + 0.5 * v)?;
    let mut rows = Vec::new();
    let mut worst = f64::INFINITY;
    for (fi, f) in test_functions(m)?.iter().enumerate() {
        for (pi, phi) in [&one, &bump].into_iter().enumerate() {
            for (label, gen, k, n) in [
                ("base", &ctx.base, &k_base, s.bounds.n),
                ("transformed", &pair.transformed, &kp, s.bounds.nprime),
            ] {
                let d = be_defect(gen, k, n, f, phi)?;
                let scale = be_defect_scale(gen, f, phi).max(f64::MIN_POSITIVE);
                worst = worst.min(d / scale);
                rows.push(json!({"generator": label, "f": fi, "phi": pi, "defect": d, "scale": scale}));
            }
        }
    }
    Ok(Outcome {
        pass: worst >= -sec.tolerance,
        summary: json!({"kprime": kprime, "min_relative_defect": worst, "tolerance": sec.tolerance, "checks": rows}),
        artifacts: vec![],
    })
}

fn gradient(s: &Scenario, ctx: &Context, sec: &GradientSection) -> Result<Outcome> {
    let m = &ctx.model;
    let cert = certificate(s, ctx, f64::INFINITY)?;
    let kprime = resolve_kprime(s, &cert);
    let pair = time_change(&ctx.base, &ctx.w)?;
    let f = sample_scalar(&m.mesh, |x| x[0].sin())?;
    let rep = gradient_estimate_check(&pair, kprime, s.bounds.nprime, &f, &sec.times, sec.dt, Some(&cert))?;
    let min = rep.min_defect();
    let csv = csv_bytes(|b| rep.write_csv(b))?;
    Ok(Outcome {
        pass: min >= -sec.tolerance,
        summary: json!({
            "kprime": rep.kprime,
            "nprime": rep.nprime,
            "dt": rep.dt,
            "certified": rep.certified,
            "rows": rep.rows,
            "min_defect": min,
            "tolerance": sec.tolerance,
        }),
        artifacts: vec![("gradient-estimate.csv".into(), csv)],
    })
}

fn distance(ctx: &Context, sec: &DistanceSection, seed: u64) -> Result<Outcome> {
    let m = &ctx.model;
    let graph = PathGraph::build(&m.metric, &ctx.w, sec.diagonals)?;
    let n = m.mesh.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // A few shared targets keep the number of dual solves small.
    let n_targets = sec.pairs.min(10);
    let targets: Vec<usize> = (0..n_targets).map(|_| rng.random_range(0..n)).collect();
    let pairs: Vec<(usize, usize)> = (0..sec.pairs).map(|k| (rng.random_range(0..n), targets[k % n_targets])).collect();
    let reports = distance_reports(&graph, &pairs)?;
    let worst = reports.iter().map(|r| r.relative_gap).fold(0.0, f64::max);
    let bounds = comparison_bounds_check(&m.metric, &ctx.w, &pairs, sec.diagonals)?;
    let longest = reports.iter().max_by(|a, b| a.primal.total_cmp(&b.primal).then(b.source.cmp(&a.source))).expect("pairs > 0");
    let path_csv = csv_bytes(|b| write_path_csv(&graph, &longest.path, b))?;
    let rows: Vec<Value> = reports
        .iter()
        .map(|r| json!({"source": r.source, "target": r.target, "primal": r.primal, "dual": r.dual, "relative_gap": r.relative_gap}))
        .collect();
    Ok(Outcome {
        pass: worst <= sec.tolerance && bounds.pass,
        summary: json!({
            "seed": seed,
            "pairs": pairs.len(),
            "max_relative_gap": worst,
            "tolerance": sec.tolerance,
            "comparison": bounds,
        }),
        artifacts: vec![
            ("distance.json".into(), serde_json::to_vec_pretty(&rows)?),
            ("distance-path.csv".into(), path_csv),
        ],
    })
}

fn bm_check(ctx: &Context, sec: &BmSection, seed: u64) -> Result<Outcome> {
    let f = first_harmonic(&ctx.model.mesh)?;
    let rep = feynman_kac_check(&ctx.base, &ctx.w, &f, sec.start_node, sec.time, sec.paths, seed)?;
    let pass = rep.z_score.is_finite() && rep.z_score <= sec.z_max;
    Ok(Outcome {
        pass,
        summary: json!({
            "seed": seed,
            "start_node": sec.start_node,
            "time": sec.time,
            "paths": rep.n_paths,
            "mc_mean": rep.mc_mean,
            "mc_stderr": rep.mc_stderr,
            "semigroup_value": rep.pde_value,
            "z_score": rep.z_score,
            "z_max": sec.z_max,
        }),
        artifacts: vec![],
    })
}

fn convexify(s: &Scenario, ctx: &Context, sec: &ConvexifySection, seed: u64) -> Result<Outcome> {
    let m = &ctx.model;
    let mesh = m.mesh.clone();
    let center = [
        mesh.origin()[0] + 0.5 * mesh.extent(0),
        mesh.origin()[1] + 0.5 * mesh.extent(1),
    ];
    let (lx, ly) = (mesh.extent(0), mesh.extent(1));
    let r = sec.radius;
    let sign = match sec.domain {
        DomainKind::DiscComplement => 1.0,
        DomainKind::Disc => -1.0,
    };
    let mask = DomainMask::from_signed_distance(mesh.clone(), DomainMask::default_band(&mesh), |x| {
        let mut d = f64::INFINITY;
        for i in -1..=1 {
            for j in -1..=1 {
                d = d.min((x[0] - center[0] - i as f64 * lx).hypot(x[1] - center[1] - j as f64 * ly));
            }
        }
        sign * (r - d)
    })?;
    let v = mask.exact_distance().expect("built from a signed distance").clone();
    let k = crate::smooth_oracle::optimal_k(&m.metric, &m.v0, s.bounds.n)?.min();
    let params = ConvexifyParams::new(sec.lprime, sec.r0, k, s.bounds.n)?;
    let audit = Cutoff::new(params.lprime, params.r0)?.audit(CUTOFF_AUDIT_POINTS);
    let w = build_weight(&v, &params)?;
    let zero = ScalarField::constant(mesh.clone(), 0.0)?;
    let flat_graph = PathGraph::build(&m.metric, &zero, true)?;
    let graph_w = PathGraph::build(&m.metric, &w, true)?;
    let control = convexity_certificate(&flat_graph, &mask, &v, sec.pairs, seed)?;
    let treated = convexity_certificate(&graph_w, &mask, &v, sec.pairs, seed)?;
    let lap = laplacian_bound_check(&ctx.base, &w, &v, &params, &mask)?;

    // Diagnostics: the curvature bound predicted for the built weight away
    // from the boundary band, and the Minkowski content of the boundary.
    let kfield = crate::smooth_oracle::optimal_k(&m.metric, &m.v0, s.bounds.n)?;
    let gws = gradient_norm_sq(&m.metric, &w)?;
    let lapw = weighted_laplacian(&m.metric, &m.v0, &w)?;
    let pred = predicted_kprime(&kfield, s.bounds.n, s.bounds.nprime, &w, &gws, &lapw)?;
    let far: Vec<bool> = v.values().iter().map(|x| x.abs() > mask.band()).collect();
    let min_pred = min_over(pred.values(), &far);
    let h = mesh.spacing()[0];
    let eps: Vec<f64> = (2..=32).map(|j| j as f64 * h).collect();
    let minkowski = minkowski_content(&flat_graph, mask.inside(), &vec![mesh.cell_volume(); mesh.len()], &eps)?;

    let mut artifacts = vec![("convexify-weight.csv".into(), csv_bytes(|b| w.write_csv(b, "w"))?)];
    if let Some(ex) = control.examples.first() {
        artifacts.push(("convexify-control-path.csv".into(), csv_bytes(|b| write_path_csv(&flat_graph, &ex.path, b))?));
    }
    let lap_ok = lap.min_defect >= -sec.laplacian_tolerance;
    let pass = treated.pass() && lap_ok && audit.pass;
    Ok(Outcome {
        pass,
        summary: json!({
            "seed": seed,
            "params": params,
            "domain": sec.domain,
            "radius": r,
            "cutoff_audit": audit,
            "laplacian": lap,
            "laplacian_tolerance": sec.laplacian_tolerance,
            "control": {"violations": control.violations, "max_excess": control.max_excess, "pairs": control.pairs},
            "treated": {"violations": treated.violations, "max_excess": treated.max_excess, "pairs": treated.pairs},
            "predicted_kprime_min_outside_band": min_pred,
            "minkowski_content": minkowski.content,
        }),
        artifacts,
    })
}

fn sweeps(sec: &SweepSection, seed: u64) -> Result<Outcome> {
    let mut rows = Vec::new();
    let mut worst = f64::INFINITY;
    for (a, n) in [1usize, 2, 3, 5].into_iter().enumerate() {
        for (b, np) in [DimensionBound::Finite(n as f64 + 0.5), DimensionBound::Finite(n as f64 + 2.0), DimensionBound::Infinite]
            .into_iter()
            .enumerate()
        {
            let sub = seed.wrapping_add((10 * a + b) as u64);
            let sw = sweep_matrix_inequality(n, np, sec.samples, sub)?;
            worst = worst.min(sw.min_value);
            rows.push(sw);
        }
    }
    let quartic = sweep_quartic_form(&quartic_sweep_grid())?;
    worst = worst.min(quartic.min_value);
    rows.push(quartic);
    Ok(Outcome {
        pass: worst >= -sec.tolerance,
        summary: json!({"seed": seed, "min_value": worst, "tolerance": sec.tolerance, "sweeps": rows.len()}),
        artifacts: vec![("sweeps.json".into(), serde_json::to_vec_pretty(&rows)?)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
output_dir = "out"
experiments = ["verify-thmB"]

[model]
space = "flat-circle"
resolution = 64

[weight]
kind = "zero"

[bounds]
n = 2
nprime = "inf"

[verify_thmb]
tolerance = 1e-4
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.bounds.kprime, KPrime::Predicted);
        assert!(!s.parallel);
        assert_eq!(s.seed, None);
    }

    #[test]
    fn equal_dimension_bounds_are_rejected() {
        let text = MINIMAL.replace("nprime = \"inf\"", "nprime = 2");
        let msg = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(msg.contains("open interval") && msg.contains("line 15"), "{msg}");
    }

    #[test]
    fn unknown_experiment_lists_names() {
        let text = MINIMAL.replace("[\"verify-thmB\"]", "[\"verify-everything\"]");
        let msg = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(msg.contains("verify-be") && msg.contains("convexify"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("tolerance = 1e-4", "tolerance = 1e-4\ntypo = 1");
        assert!(Scenario::from_toml(&text).is_err());
        let text = MINIMAL.replace("[weight]\nkind = \"zero\"", "[weight]\nkind = \"zero\"\namplitude = 1");
        assert!(Scenario::from_toml(&text).is_err());
    }

    #[test]
    fn tolerance_is_mandatory() {
        let text = MINIMAL.replace("[verify_thmb]\ntolerance = 1e-4\n", "");
        let msg = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(msg.contains("verify_thmb"), "{msg}");
        let text = MINIMAL.replace("tolerance = 1e-4", "");
        assert!(Scenario::from_toml(&text).is_err());
    }

    #[test]
    fn stochastic_experiments_need_a_seed() {
        let text = MINIMAL.replace("[\"verify-thmB\"]", "[\"verify-thmB\", \"sweeps\"]") + "\n[sweeps]\ntolerance = 1e-12\n";
        let msg = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(msg.contains("seed"), "{msg}");
    }

    #[test]
    fn kprime_keyword_is_strict() {
        let text = MINIMAL.replace("nprime = \"inf\"", "nprime = \"inf\"\nkprime = \"largest\"");
        assert!(Scenario::from_toml(&text).is_err());
        let text = MINIMAL.replace("nprime = \"inf\"", "nprime = \"inf\"\nkprime = -0.5");
        assert_eq!(Scenario::from_toml(&text).unwrap().bounds.kprime, KPrime::Value(-0.5));
    }

    #[test]
    fn flat_circle_without_weight_passes() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.output_dir = dir.path().to_path_buf();
        let report = run(&s).unwrap();
        assert!(report.pass);
        assert_eq!(report.exit_code(), 0);
        let min = report.experiments[0].summary["curvature"]["min_defect"].as_f64().unwrap();
        assert!(min >= 0.0, "{min}");
        assert!(dir.path().join("verify-thmB.csv").exists());
        assert!(dir.path().join("metadata.json").exists());
    }

    #[test]
    fn false_kprime_override_fails() {
        let dir = tempfile::tempdir().unwrap();
        let text = MINIMAL
            .replace("kind = \"zero\"", "kind = \"harmonic\"\namplitude = 0.1")
            .replace("nprime = \"inf\"", "nprime = \"inf\"\nkprime = 0.5");
        let mut s = Scenario::from_toml(&text).unwrap();
        s.output_dir = dir.path().to_path_buf();
        let report = run(&s).unwrap();
        assert!(!report.pass);
        assert_eq!(report.exit_code(), 1);
    }
}
