//! Scenario-driven front end: a TOML scenario document describes the
//! operator, the observation functional, the data and the solver controls;
//! `run` executes the forward/inverse/stability/verify pipelines and writes
//! plot-ready CSV artifacts plus a manifest and a structured diagnostics
//! report into the output directory.

use crate::error::{Error, Result};
use crate::forward::{self, ForwardProblem, Method, PicardControls, Splitting};
use crate::grid::{CoefficientPath, TimeGrid};
use crate::inverse::{
    self, admissibility_check, domain_bounds, InverseControls, InverseProblem, Perturbation,
};
use crate::spectra::{self, FunctionalKind, ModeSet, ProblemData};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub mod verify;

/// Raw scenario document as parsed from TOML.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub mode: RunMode,
    pub alpha: Option<f64>,
    pub horizon: Option<f64>,
    pub grid_steps: Option<usize>,
    pub n_modes: Option<usize>,
    pub operator: OperatorSpec,
    pub functional: FunctionalSpec,
    pub initial: Option<DataSpec>,
    pub source: Option<SourceSpec>,
    pub sigma: Option<PathSpec>,
    pub sigma_true: Option<PathSpec>,
    pub observation: Option<PathSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    pub stability: Option<StabilitySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Forward,
    Inverse,
    Stability,
    Verify,
}

impl RunMode {
    /// Modes that assemble an inverse problem.
    pub fn is_inverse_like(&self) -> bool {
        matches!(self, RunMode::Inverse | RunMode::Stability)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub epsilon: Option<f64>,
    pub path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Dirichlet,
    Involution,
    Oscillator,
    Table,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalSpec {
    pub kind: FunctionalKindSpec,
    pub position: Option<f64>,
    pub path: Option<String>,
    #[serde(default)]
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKindSpec {
    MeanValue,
    Point,
    BoundaryFlux,
    Table,
}

/// Initial-data specification: per-mode coefficients, spatial samples on
/// [0,1] projected onto the sine basis, or a one-column file.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct DataSpec {
    pub kind: DataKind,
    pub values: Option<Vec<f64>>,
    pub samples: Option<Vec<f64>>,
    pub path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Coefficients,
    Spatial,
    File,
}

/// Source specification: f_ξ(t) = c_ξ · profile(t) with per-mode scales
/// from coefficients, spatial samples, or the compatibility rule
/// c_ξ = σ(0)·μ_ξ·h_ξ (which keeps the observation smooth at t = 0).
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub coefficients: Option<Vec<f64>>,
    pub samples: Option<Vec<f64>>,
    pub profile: Option<ProfileSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Zero,
    Separable,
    Compatible,
}

/// A scalar time profile.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ProfileSpec {
    Constant {
        value: f64,
    },
    /// offset + amplitude·shape(2π·frequency·t + phase)
    Harmonic {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        shape: HarmonicShape,
    },
    Values {
        values: Vec<f64>,
    },
    File {
        path: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HarmonicShape {
    Sin,
    Cos,
}

pub type PathSpec = ProfileSpec;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_method")]
    pub method: MethodSpec,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub splitting_margin: Option<f64>,
    pub inverse_tolerance: Option<f64>,
    pub inverse_max_iterations: Option<usize>,
    pub anderson_window: Option<usize>,
}

fn default_method() -> MethodSpec {
    MethodSpec::Picard
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            method: MethodSpec::Picard,
            tolerance: None,
            max_iterations: None,
            splitting_margin: None,
            inverse_tolerance: None,
            inverse_max_iterations: None,
            anderson_window: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    Picard,
    L1,
}

impl From<MethodSpec> for Method {
    fn from(m: MethodSpec) -> Self {
        match m {
            MethodSpec::Picard => Method::Picard,
            MethodSpec::L1 => Method::L1Stepping,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySpec {
    #[serde(default)]
    pub observation_scales: Vec<f64>,
    #[serde(default)]
    pub initial_scales: Vec<f64>,
    #[serde(default)]
    pub source_scales: Vec<f64>,
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub n_modes: Option<usize>,
    pub grid_steps: Option<usize>,
    pub method: Option<MethodSpec>,
    pub seed: Option<u64>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scenario(format!("scenario parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// A scenario after validation: every field resolved to concrete numbers.
#[derive(Debug)]
pub struct Resolved {
    pub scenario: Scenario,
    pub mode: RunMode,
    pub alpha: f64,
    pub grid: TimeGrid,
    pub modes: ModeSet,
    pub initial: Vec<f64>,
    pub source: Vec<CoefficientPath>,
    pub sigma: Option<CoefficientPath>,
    pub sigma_true: Option<CoefficientPath>,
    pub observation: Option<CoefficientPath>,
    pub method: Method,
    pub forward_controls: PicardControls,
    pub inverse_controls: InverseControls,
    pub stability: Option<StabilitySpec>,
    pub seed: u64,
}

fn require<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::Scenario(format!("missing required field '{field}'")))
}

fn sample_profile(spec: &ProfileSpec, grid: TimeGrid, base: &Path, field: &str) -> Result<CoefficientPath> {
    match spec {
        ProfileSpec::Constant { value } => CoefficientPath::constant(grid, *value),
        ProfileSpec::Harmonic {
            offset,
            amplitude,
            frequency,
            phase,
            shape,
        } => CoefficientPath::from_fn(grid, |t| {
            let arg = 2.0 * std::f64::consts::PI * frequency * t + phase;
            offset
                + amplitude
                    * match shape {
                        HarmonicShape::Sin => arg.sin(),
                        HarmonicShape::Cos => arg.cos(),
                    }
        }),
        ProfileSpec::Values { values } => {
            if values.len() != grid.len() {
                return Err(Error::Scenario(format!(
                    "field '{field}': {} inline values but the grid has {} nodes",
                    values.len(),
                    grid.len()
                )));
            }
            CoefficientPath::new(grid, values.clone())
        }
        ProfileSpec::File { path } => {
            let full = base.join(path);
            let text = fs::read_to_string(&full)
                .map_err(|e| Error::Scenario(format!("field '{field}': cannot read {}: {e}", full.display())))?;
            let values = parse_column(&text, field)?;
            if values.len() != grid.len() {
                return Err(Error::Scenario(format!(
                    "field '{field}': file {} has {} values but the grid has {} nodes",
                    full.display(),
                    values.len(),
                    grid.len()
                )));
            }
            CoefficientPath::new(grid, values)
        }
    }
}

/// Parse a one- or two-column numeric file; with two columns the second is
/// taken (the first being a time/index column).
fn parse_column(text: &str, field: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let candidate = match fields.len() {
            1 => fields[0],
            2 => fields[1],
            n => {
                return Err(Error::Scenario(format!(
                    "field '{field}', line {}: expected 1-2 columns, found {n}",
                    lineno + 1
                )))
            }
        };
        match candidate.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if lineno == 0 => continue, // header
            Err(_) => {
                return Err(Error::Scenario(format!(
                    "field '{field}', line {}: cannot parse '{line}'",
                    lineno + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Validate a scenario and resolve every piece of data onto the grid.
pub fn resolve(scenario: Scenario, base: &Path, overrides: Overrides) -> Result<Resolved> {
    let alpha = require(scenario.alpha, "alpha")?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Scenario(format!(
            "field 'alpha': must lie in (0, 1), got {alpha}"
        )));
    }
    let horizon = require(scenario.horizon, "horizon")?;
    let steps = overrides
        .grid_steps
        .or(scenario.grid_steps)
        .ok_or_else(|| Error::Scenario("missing required field 'grid_steps'".to_string()))?;
    let grid = TimeGrid::new(horizon, steps).map_err(|e| Error::Scenario(e.to_string()))?;
    let n_modes = overrides
        .n_modes
        .or(scenario.n_modes)
        .ok_or_else(|| Error::Scenario("missing required field 'n_modes'".to_string()))?;
    if n_modes == 0 {
        return Err(Error::Scenario("field 'n_modes': must be positive".to_string()));
    }

    // operator and functional
    let (eigenvalues, table_weights) = match scenario.operator.kind {
        OperatorKind::Dirichlet => (spectra::dirichlet_laplacian_modes(n_modes)?, None),
        OperatorKind::Involution => {
            let eps = require(scenario.operator.epsilon, "operator.epsilon")?;
            (spectra::involution_modes(n_modes, eps)?, None)
        }
        OperatorKind::Oscillator => (spectra::harmonic_oscillator_modes(n_modes)?, None),
        OperatorKind::Table => {
            let rel = require(scenario.operator.path.clone(), "operator.path")?;
            let full = base.join(rel);
            let text = fs::read_to_string(&full)
                .map_err(|e| Error::Scenario(format!("operator table {}: {e}", full.display())))?;
            let set = ModeSet::parse_table(&text, scenario.functional.gamma)?;
            if set.len() < n_modes {
                return Err(Error::Scenario(format!(
                    "operator table provides {} modes, scenario needs {}",
                    set.len(),
                    n_modes
                )));
            }
            (
                set.eigenvalues()[..n_modes].to_vec(),
                Some(set.weights()[..n_modes].to_vec()),
            )
        }
    };
    let weights = match scenario.functional.kind {
        FunctionalKindSpec::MeanValue => {
            spectra::functional_weights(FunctionalKind::MeanValue, n_modes)?
        }
        FunctionalKindSpec::Point => {
            let x = require(scenario.functional.position, "functional.position")?;
            spectra::functional_weights(FunctionalKind::Point(x), n_modes)?
        }
        FunctionalKindSpec::BoundaryFlux => {
            spectra::functional_weights(FunctionalKind::BoundaryFlux, n_modes)?
        }
        FunctionalKindSpec::Table => table_weights.ok_or_else(|| {
            Error::Scenario(
                "functional.kind = 'table' needs operator.kind = 'table' with a (mu, phi) file"
                    .to_string(),
            )
        })?,
    };
    if matches!(scenario.functional.kind, FunctionalKindSpec::Table) && scenario.functional.path.is_some()
    {
        return Err(Error::Scenario(
            "functional.path is reserved; table weights come from operator.path".to_string(),
        ));
    }
    let modes = ModeSet::new(eigenvalues, weights, scenario.functional.gamma)?;

    // initial data
    let initial = match &scenario.initial {
        None => vec![0.0; n_modes],
        Some(spec) => match spec.kind {
            DataKind::Coefficients => {
                let v = require(spec.values.clone(), "initial.values")?;
                if v.len() != n_modes {
                    return Err(Error::Scenario(format!(
                        "initial.values has {} entries, scenario needs {n_modes}",
                        v.len()
                    )));
                }
                v
            }
            DataKind::Spatial => {
                if scenario.operator.kind != OperatorKind::Dirichlet {
                    return Err(Error::Scenario(
                        "initial.kind = 'spatial' needs the Dirichlet sine basis".to_string(),
                    ));
                }
                let samples = require(spec.samples.clone(), "initial.samples")?;
                spectra::sine_projection(&samples, n_modes)?
            }
            DataKind::File => {
                let rel = require(spec.path.clone(), "initial.path")?;
                let full = base.join(rel);
                let text = fs::read_to_string(&full)
                    .map_err(|e| Error::Scenario(format!("initial file {}: {e}", full.display())))?;
                let v = parse_column(&text, "initial")?;
                if v.len() != n_modes {
                    return Err(Error::Scenario(format!(
                        "initial file has {} entries, scenario needs {n_modes}",
                        v.len()
                    )));
                }
                v
            }
        },
    };

    // sigma paths (resolved before the source so 'compatible' can use σ(0))
    let sigma = scenario
        .sigma
        .as_ref()
        .map(|s| sample_profile(s, grid, base, "sigma"))
        .transpose()?;
    let sigma_true = scenario
        .sigma_true
        .as_ref()
        .map(|s| sample_profile(s, grid, base, "sigma_true"))
        .transpose()?;

    // source paths
    let source = match &scenario.source {
        None => vec![CoefficientPath::zero(grid); n_modes],
        Some(spec) => {
            let profile = match &spec.profile {
                None => CoefficientPath::constant(grid, 1.0)?,
                Some(p) => sample_profile(p, grid, base, "source.profile")?,
            };
            let scales: Vec<f64> = match spec.kind {
                SourceKind::Zero => vec![0.0; n_modes],
                SourceKind::Separable => {
                    if let Some(c) = &spec.coefficients {
                        if c.len() != n_modes {
                            return Err(Error::Scenario(format!(
                                "source.coefficients has {} entries, scenario needs {n_modes}",
                                c.len()
                            )));
                        }
                        c.clone()
                    } else if let Some(samples) = &spec.samples {
                        if scenario.operator.kind != OperatorKind::Dirichlet {
                            return Err(Error::Scenario(
                                "source.samples needs the Dirichlet sine basis".to_string(),
                            ));
                        }
                        spectra::sine_projection(samples, n_modes)?
                    } else {
                        return Err(Error::Scenario(
                            "source.kind = 'separable' needs coefficients or samples".to_string(),
                        ));
                    }
                }
                SourceKind::Compatible => {
                    let anchor = sigma_true
                        .as_ref()
                        .or(sigma.as_ref())
                        .map(|s| s.values()[0])
                        .ok_or_else(|| {
                            Error::Scenario(
                                "source.kind = 'compatible' needs sigma or sigma_true".to_string(),
                            )
                        })?;
                    if (profile.values()[0] - 1.0).abs() > 1e-12 {
                        return Err(Error::Scenario(
                            "source.kind = 'compatible' needs profile(0) = 1".to_string(),
                        ));
                    }
                    modes
                        .eigenvalues()
                        .iter()
                        .zip(&initial)
                        .map(|(mu, h)| anchor * mu * h)
                        .collect()
                }
            };
            scales.iter().map(|&c| Ok(profile.scaled(c))).collect::<Result<Vec<_>>>()?
        }
    };

    let observation = scenario
        .observation
        .as_ref()
        .map(|s| sample_profile(s, grid, base, "observation"))
        .transpose()?;

    // mode-specific completeness
    match scenario.mode {
        RunMode::Forward => {
            if sigma.is_none() {
                return Err(Error::Scenario("forward mode requires [sigma]".to_string()));
            }
            if observation.is_some() || sigma_true.is_some() {
                return Err(Error::Scenario(
                    "forward mode rejects [observation] and [sigma_true]".to_string(),
                ));
            }
        }
        RunMode::Inverse | RunMode::Stability => {
            if sigma.is_some() {
                return Err(Error::Scenario(format!(
                    "{:?} mode rejects [sigma]; use [sigma_true] for roundtrips",
                    scenario.mode
                )));
            }
            if observation.is_none() && sigma_true.is_none() {
                return Err(Error::Scenario(
                    "inverse mode requires [observation] or an embedded [sigma_true]".to_string(),
                ));
            }
            if scenario.mode == RunMode::Stability && scenario.stability.is_none() {
                return Err(Error::Scenario(
                    "stability mode requires a [stability] section".to_string(),
                ));
            }
        }
        RunMode::Verify => {}
    }

    let forward_controls = PicardControls {
        tolerance: scenario.solver.tolerance.unwrap_or(1e-10),
        max_iterations: scenario.solver.max_iterations.unwrap_or(200),
        splitting: Splitting::Margin(scenario.solver.splitting_margin.unwrap_or(1.05)),
    };
    let inverse_controls = InverseControls {
        tolerance: scenario.solver.inverse_tolerance.unwrap_or(1e-9),
        max_iterations: scenario.solver.inverse_max_iterations.unwrap_or(250),
        anderson_window: scenario.solver.anderson_window.unwrap_or(5),
        forward: forward_controls,
        ..Default::default()
    };

    Ok(Resolved {
        mode: scenario.mode,
        alpha,
        grid,
        modes,
        initial,
        source,
        sigma,
        sigma_true,
        observation,
        method: overrides.method.unwrap_or(scenario.solver.method).into(),
        forward_controls,
        inverse_controls,
        stability: scenario.stability.clone(),
        seed: overrides.seed.unwrap_or(0x5eed),
        scenario,
    })
}

impl Resolved {
    pub fn problem_data(&self) -> Result<ProblemData> {
        ProblemData::new(
            self.modes.clone(),
            self.initial.clone(),
            self.source.clone(),
            self.alpha,
            self.grid,
        )
    }

    /// Assemble the inverse problem, generating the observation from the
    /// embedded σ* with the configured (cross-)method when necessary.
    pub fn inverse_problem(&self) -> Result<InverseProblem> {
        let data = self.problem_data()?;
        let observation = match (&self.observation, &self.sigma_true) {
            (Some(e), _) => e.clone(),
            (None, Some(st)) => {
                let fp = ForwardProblem::new(data.clone(), st.clone(), self.method, self.forward_controls)?;
                let field = forward::solve_forward(&fp)?;
                forward::observe(&field, &self.modes)?
            }
            (None, None) => {
                return Err(Error::Scenario(
                    "inverse problem needs an observation or sigma_true".to_string(),
                ))
            }
        };
        InverseProblem::new(data, observation, self.inverse_controls.clone())
    }
}

/// Human-readable summary: resolved configuration, admissibility verdict,
/// and the operator bracket when it is computable.
pub fn describe(resolved: &Resolved) -> Result<String> {
    let mut out = String::new();
    use std::fmt::Write as _;
    let s = &resolved.scenario;
    let _ = writeln!(out, "scenario '{}' [{:?}]", s.name, resolved.mode);
    let _ = writeln!(
        out,
        "  grid: T = {}, N = {} (h = {:.3e}); alpha = {}",
        resolved.grid.horizon(),
        resolved.grid.steps(),
        resolved.grid.spacing(),
        resolved.alpha
    );
    let mus = resolved.modes.eigenvalues();
    let _ = writeln!(
        out,
        "  operator: {:?}, {} modes, eigenvalues in [{:.6}, {:.6}]",
        s.operator.kind,
        mus.len(),
        mus.iter().cloned().fold(f64::INFINITY, f64::min),
        mus.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let w = resolved.modes.weights();
    let nonzero = w.iter().filter(|x| **x > 0.0).count();
    let _ = writeln!(
        out,
        "  functional: {:?}, {} of {} weights nonzero, max weight {:.6}",
        s.functional.kind,
        nonzero,
        w.len(),
        w.iter().cloned().fold(0.0, f64::max),
    );
    if resolved.modes.len() >= 8 {
        let rep = spectra::gamma_admissibility(w, mus, resolved.modes.gamma())?;
        let _ = writeln!(
            out,
            "  gamma admissibility at gamma = {}: {} (tail exponent {:.3})",
            resolved.modes.gamma(),
            if rep.admissible { "admissible" } else { "NOT admissible" },
            rep.tail_exponent
        );
    } else {
        let _ = writeln!(
            out,
            "  gamma admissibility: skipped ({} modes < 8)",
            resolved.modes.len()
        );
    }
    if matches!(resolved.mode, RunMode::Inverse | RunMode::Stability) {
        match resolved.inverse_problem() {
            Ok(problem) => {
                let check = admissibility_check(&problem)?;
                let _ = writeln!(
                    out,
                    "  data admissibility: {}",
                    if check.passed() {
                        "all clauses pass".to_string()
                    } else {
                        format!("FAILS ({})", check.first_failure().unwrap().name)
                    }
                );
                match domain_bounds(&problem) {
                    Ok(b) => {
                        let _ = writeln!(
                            out,
                            "  bracket: C0 = {:.6}, C1 = {:.6}, C2 = {:.6}, C3 = {:.6} -> [{:.4}, {:.4}]",
                            b.c0,
                            b.c1,
                            b.c2,
                            b.c3,
                            b.lower(),
                            b.upper()
                        );
                    }
                    Err(e) => {
                        let _ = writeln!(out, "  bracket: not computable ({e})");
                    }
                }
            }
            Err(e) => {
                let _ = writeln!(out, "  inverse assembly failed: {e}");
            }
        }
    }
    let cost = resolved.grid.len() * resolved.grid.len() * resolved.modes.len();
    let _ = writeln!(
        out,
        "  estimated kernel work: ~{} convolution terms per sweep",
        cost
    );
    Ok(out)
}

/// Artifacts written by a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
}

fn write_file(dir: &Path, name: &str, content: &str, files: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, content)?;
    files.push(name.to_string());
    Ok(())
}

fn paths_csv(columns: &[(&str, &[f64])], grid: TimeGrid) -> String {
    let mut out = String::from("t");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, t) in grid.nodes().iter().enumerate() {
        out.push_str(&format!("{t:.12e}"));
        for (_, vals) in columns {
            out.push_str(&format!(",{:.12e}", vals[i]));
        }
        out.push('\n');
    }
    out
}

/// Execute a resolved scenario, writing artifacts into `out_dir`.
pub fn run(resolved: &Resolved, out_dir: &Path) -> Result<RunArtifacts> {
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let manifest = toml::to_string_pretty(&resolved.scenario)
        .map_err(|e| Error::Scenario(format!("manifest serialization: {e}")))?;
    let manifest = format!(
        "# resolved: alpha = {}, T = {}, N = {}, n_modes = {}, seed = {}\n{}",
        resolved.alpha,
        resolved.grid.horizon(),
        resolved.grid.steps(),
        resolved.modes.len(),
        resolved.seed,
        manifest
    );
    write_file(out_dir, "manifest.toml", &manifest, &mut files)?;

    match resolved.mode {
        RunMode::Forward => {
            let data = resolved.problem_data()?;
            let sigma = resolved.sigma.clone().expect("validated");
            let problem = ForwardProblem::new(data, sigma, resolved.method, resolved.forward_controls)?;
            let field = forward::solve_forward(&problem)?;
            let observation = forward::observe(&field, &resolved.modes)?;
            let mut csv = Vec::new();
            field.write_csv(&mut csv)?;
            write_file(
                out_dir,
                "data.csv",
                std::str::from_utf8(&csv).expect("csv is utf8"),
                &mut files,
            )?;
            write_file(
                out_dir,
                "observation.csv",
                &paths_csv(&[("E", observation.values())], resolved.grid),
                &mut files,
            )?;
            let meta = serde_json::to_string_pretty(&field.metadata(resolved.method))
                .expect("metadata serializes");
            write_file(out_dir, "metadata.json", &meta, &mut files)?;
        }
        RunMode::Inverse => {
            let problem = resolved.inverse_problem()?;
            let solution = inverse::solve_inverse(&problem)?;
            let mut columns: Vec<(&str, &[f64])> = vec![("sigma", solution.sigma.values())];
            let truth_error = resolved.sigma_true.as_ref().map(|st| {
                columns.push(("sigma_true", st.values()));
                solution.sigma.sup_distance(st).unwrap_or(f64::NAN)
            });
            write_file(
                out_dir,
                "sigma.csv",
                &paths_csv(&columns, resolved.grid),
                &mut files,
            )?;
            let refit = forward::observe(&solution.field, &resolved.modes)?;
            write_file(
                out_dir,
                "observation.csv",
                &paths_csv(
                    &[("E", problem.observation.values()), ("E_fit", refit.values())],
                    resolved.grid,
                ),
                &mut files,
            )?;
            let mut csv = Vec::new();
            solution.field.write_csv(&mut csv)?;
            write_file(
                out_dir,
                "data.csv",
                std::str::from_utf8(&csv).expect("csv is utf8"),
                &mut files,
            )?;
            #[derive(Serialize)]
            struct InverseReport<'a> {
                diagnostics: &'a inverse::InverseDiagnostics,
                observation_misfit: f64,
                truth_error: Option<f64>,
            }
            let report = InverseReport {
                diagnostics: &solution.diagnostics,
                observation_misfit: refit.sup_distance(&problem.observation)?,
                truth_error,
            };
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_file(out_dir, "diagnostics.json", &json, &mut files)?;
        }
        RunMode::Stability => {
            let problem = resolved.inverse_problem()?;
            let spec = resolved.stability.clone().expect("validated");
            let mut perturbations = vec![];
            for &s in &spec.observation_scales {
                perturbations.push(Perturbation::observation(s));
            }
            for &s in &spec.initial_scales {
                perturbations.push(Perturbation { dh: s, df: 0.0, de: 0.0 });
            }
            for &s in &spec.source_scales {
                perturbations.push(Perturbation { dh: 0.0, df: s, de: 0.0 });
            }
            let table = inverse::stability_experiment(&problem, &perturbations)?;
            let mut csv = String::from("dh,df,de,input_size,sigma_deviation,field_deviation,solved\n");
            for row in &table.rows {
                csv.push_str(&format!(
                    "{:e},{:e},{:e},{:.12e},{:.12e},{:.12e},{}\n",
                    row.perturbation.dh,
                    row.perturbation.df,
                    row.perturbation.de,
                    row.input_size,
                    row.sigma_deviation,
                    row.field_deviation,
                    row.solved
                ));
            }
            write_file(out_dir, "stability.csv", &csv, &mut files)?;
            let json = serde_json::to_string_pretty(&table).expect("table serializes");
            write_file(out_dir, "diagnostics.json", &json, &mut files)?;
        }
        RunMode::Verify => {
            let report = verify::run_suite(resolved)?;
            let mut text = String::new();
            for check in &report.checks {
                text.push_str(&format!(
                    "{} {}: {}\n",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                ));
            }
            text.push_str(&format!(
                "{} of {} checks passed (seed {})\n",
                report.checks.iter().filter(|c| c.passed).count(),
                report.checks.len(),
                resolved.seed
            ));
            write_file(out_dir, "verify_report.txt", &text, &mut files)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_file(out_dir, "verify_report.json", &json, &mut files)?;
            print!("{text}");
            std::io::stdout().flush().ok();
            if !report.passed() {
                return Err(Error::Scenario("verification checks failed".to_string()));
            }
        }
    }
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        files,
    })
}
