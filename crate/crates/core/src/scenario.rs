//! Versioned JSON scenario files and the checks run before a simulation.
//!
//! Matrices are nested row-major arrays. A scenario without a `gains`
//! section is synthesized from the `regime.k2` design; matrices given under
//! `gains` replace the synthesized ones, so the output of `formctl synth`
//! can be pasted back in.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::{make_piecewise_spec, uniform_grid, validate_spec, FormationError, FormationSpec, HarmonicFamily, Piece};
use crate::graph::{Directedness, GraphError, Topology};
use crate::linalg::{matrix_from_rows, matrix_to_rows, DenseMatrix, LinalgError};
use crate::protocols::{assumption_report, LeaderInput, Protocol, Regime, RegimeOptions};
use crate::sim::{check_settings, Scenario, SimConfig, Summary};
use crate::synthesis::{refresh_certificates, synthesize, verify_gainset, GainSet, K2Design, LtiModel, SynthesisError};
use crate::vehicle::VehicleParams;

pub const SCENARIO_VERSION: u32 = 1;
/// Max-norm bound on `ḣ_i − (A+BK₁)h_i` over the validation grid.
pub const GENERATOR_TOL: f64 = 1e-8;
/// Same bound with `ḣ` taken by central differences.
pub const FINITE_DIFFERENCE_TOL: f64 = 1e-5;
const VALIDATION_GRID: usize = 2001;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("unsupported scenario version {found}, this build reads version {SCENARIO_VERSION}")]
    Version { found: u32 },
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Formation(#[from] FormationError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("inconsistent scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    /// `adjacency[i][j] > 0` when follower `i+1` hears follower `j+1`.
    pub adjacency: Vec<Vec<f64>>,
    pub pinning: Vec<f64>,
    pub directedness: Directedness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationSection {
    pub k1: Vec<Vec<f64>>,
    pub family: HarmonicFamily,
    pub pieces: Vec<Piece>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case", deny_unknown_fields)]
pub enum K2Section {
    /// Closed-loop poles as `[re, im]` pairs; complex poles come in conjugate pairs.
    Poles { poles: Vec<[f64; 2]> },
    Lqr { q: Vec<Vec<f64>>, r: Vec<Vec<f64>> },
    Explicit { k2: Vec<Vec<f64>> },
}

impl K2Section {
    fn design(&self) -> Result<K2Design, ScenarioError> {
        Ok(match self {
            K2Section::Poles { poles } => K2Design::Poles(poles.iter().map(|p| Complex64::new(p[0], p[1])).collect()),
            K2Section::Lqr { q, r } => K2Design::Lqr { q: matrix_from_rows(q)?, r: matrix_from_rows(r)? },
            K2Section::Explicit { k2 } => K2Design::Explicit(matrix_from_rows(k2)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    pub kind: Regime,
    #[serde(default)]
    pub options: RegimeOptions,
    /// Required unless `gains.k2` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<K2Section>,
    /// Defaults to the certified leader-input bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

/// Matrices that replace synthesized values; field names follow the
/// gains file written by `formctl synth`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_mat: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_mat: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_tilde: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_tilde: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_tilde: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Ignored on input; recomputed from the matrices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificates: Option<BTreeMap<String, f64>>,
}

/// Thresholds checked against the run summary; each is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceSpec {
    /// Max follower error over the final tail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_error: Option<f64>,
    /// Per-window tail maximum over the window's initial error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_ratio: Option<f64>,
    /// Weight growth over the final 10% of samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_decrease_violations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader_observer_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Relative to the working directory; `--out` and `FORMCTL_OUT_DIR` take precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    pub csv: bool,
    pub json: bool,
    pub plots: bool,
    pub snapshots: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<AcceptanceSpec>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, csv: true, json: true, plots: true, snapshots: Vec::new(), acceptance: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    pub name: String,
    pub model: ModelSection,
    pub topology: TopologySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainOverrides>,
    pub formation: FormationSection,
    pub regime: RegimeSection,
    #[serde(default)]
    pub leader_input: LeaderInput,
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<VehicleParams>,
    #[serde(default)]
    pub output: OutputSection,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        if file.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version { found: file.version });
        }
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn model(&self) -> Result<LtiModel, ScenarioError> {
        Ok(LtiModel::from_rows(&self.model.a, &self.model.b, &self.model.c)?)
    }

    pub fn topology(&self) -> Result<Topology, ScenarioError> {
        let t = &self.topology;
        Ok(Topology::new(&t.adjacency, &t.pinning, t.directedness)?)
    }

    pub fn formation_spec(&self) -> Result<FormationSpec, ScenarioError> {
        Ok(make_piecewise_spec(self.formation.family.clone(), self.formation.pieces.clone())?)
    }

    pub fn k1(&self) -> Result<DenseMatrix, ScenarioError> {
        Ok(matrix_from_rows(&self.formation.k1)?)
    }

    /// Synthesized gains with the file's overrides applied.
    pub fn gains(&self, model: &LtiModel) -> Result<GainSet, ScenarioError> {
        let over = self.gains.clone().unwrap_or_default();
        let k1 = self.k1()?;
        if let Some(k) = &over.k1 {
            if matrix_from_rows(k)? != k1 {
                return Err(ScenarioError::Invalid("gains.k1 differs from formation.k1".into()));
            }
        }
        let design = match (&over.k2, &self.regime.k2) {
            (Some(k2), _) => K2Design::Explicit(matrix_from_rows(k2)?),
            (None, Some(section)) => section.design()?,
            (None, None) => return Err(ScenarioError::Invalid("give regime.k2 or gains.k2".into())),
        };
        let bound = self.leader_input.certified_bound();
        let beta = self.regime.beta.or(over.beta);
        let mut g = synthesize(model, self.regime.kind, k1, &design, Some(bound), beta)?;
        let slots: [(&Option<Vec<Vec<f64>>>, &mut Option<DenseMatrix>); 7] = [
            (&over.f, &mut g.f),
            (&over.gamma, &mut g.gamma),
            (&over.q_mat, &mut g.q_mat),
            (&over.s_mat, &mut g.s_mat),
            (&over.q_tilde, &mut g.q_tilde),
            (&over.f_tilde, &mut g.f_tilde),
            (&over.gamma_tilde, &mut g.gamma_tilde),
        ];
        let mut replaced = false;
        for (given, slot) in slots {
            if let Some(rows) = given {
                *slot = Some(matrix_from_rows(rows)?);
                replaced = true;
            }
        }
        if replaced {
            refresh_certificates(model, &mut g, Some(bound));
        }
        Ok(g)
    }

    /// Everything [`crate::sim::integrate`] needs. Graph hypotheses and
    /// certificates are checked by [`ScenarioFile::validate`], not here.
    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        let model = self.model()?;
        let topology = self.topology()?;
        let spec = self.formation_spec()?;
        if spec.n() != model.n() {
            return Err(ScenarioError::Invalid(format!(
                "formation family has {} components for an n = {} model",
                spec.n(),
                model.n()
            )));
        }
        if spec.n_followers() != topology.n_followers() {
            return Err(ScenarioError::Invalid(format!(
                "formation has {} followers, topology has {}",
                spec.n_followers(),
                topology.n_followers()
            )));
        }
        if let Some(p) = self.leader_input.dim() {
            if p != model.p() {
                return Err(ScenarioError::Invalid(format!("leader input has {p} channels, model has p = {}", model.p())));
            }
        }
        let gains = self.gains(&model)?;
        Ok(Scenario {
            name: self.name.clone(),
            model,
            topology,
            gains,
            spec,
            regime: self.regime.kind,
            options: self.regime.options.clone(),
            leader_input: self.leader_input.clone(),
            sim: self.sim.clone(),
            vehicle: self.vehicle,
        })
    }

    /// Runs every pre-simulation check; failures are items, not errors.
    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport { name: self.name.clone(), items: Vec::new() };
        let s = match self.build() {
            Ok(s) => s,
            Err(e) => {
                rep.push("scenario", "build", None, false, e.to_string());
                return rep;
            }
        };
        rep.push("scenario", "build", None, true, "dimensions consistent");
        for (name, ok) in assumption_report(s.regime, &s.topology) {
            rep.push("topology", &name, None, ok, s.regime.name());
        }
        let k1 = &s.gains.k1;
        let grid = uniform_grid(0.0, s.sim.t_final, VALIDATION_GRID);
        match validate_spec(&s.spec, &s.model.a, &s.model.b, k1, &grid) {
            Ok(r) => {
                rep.push(
                    "formation",
                    "generator_residual",
                    Some(r.generator),
                    r.generator < GENERATOR_TOL,
                    "max ‖ḣ − (A+BK₁)h‖",
                );
                rep.push(
                    "formation",
                    "finite_difference_residual",
                    Some(r.finite_difference),
                    r.finite_difference < FINITE_DIFFERENCE_TOL,
                    "same with central differences",
                );
            }
            Err(e) => rep.push("formation", "residual", None, false, e.to_string()),
        }
        let bound = s.leader_input.certified_bound();
        for item in verify_gainset(&s.model, &s.gains, s.regime, Some(bound)).items {
            rep.push("certificate", &item.name, Some(item.value), item.passed, item.detail);
        }
        match Protocol::new(&s.model, &s.gains, &s.topology, &s.spec, s.regime, &s.options, &s.leader_input) {
            Ok(_) => rep.push("protocol", "construction", None, true, "regime, gains and options agree"),
            Err(e) => rep.push("protocol", "construction", None, false, e.to_string()),
        }
        match check_settings(&s) {
            Ok(()) => rep.push("sim", "settings", None, true, format!("dt = {}, t_final = {}", s.sim.dt, s.sim.t_final)),
            Err(e) => rep.push("sim", "settings", None, false, e.to_string()),
        }
        rep
    }
}

/// Writes `gains` in the layout [`GainOverrides`] reads back.
pub fn gains_to_overrides(g: &GainSet) -> GainOverrides {
    let rows = |m: &Option<DenseMatrix>| m.as_ref().map(matrix_to_rows);
    GainOverrides {
        k1: Some(matrix_to_rows(&g.k1)),
        k2: Some(matrix_to_rows(&g.k2)),
        f: rows(&g.f),
        gamma: rows(&g.gamma),
        q_mat: rows(&g.q_mat),
        s_mat: rows(&g.s_mat),
        q_tilde: rows(&g.q_tilde),
        f_tilde: rows(&g.f_tilde),
        gamma_tilde: rows(&g.gamma_tilde),
        beta: Some(g.beta),
        certificates: Some(g.certificates.clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub group: String,
    pub name: String,
    pub value: Option<f64>,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub name: String,
    pub items: Vec<CheckItem>,
}

impl ValidationReport {
    fn push(&mut self, group: &str, name: &str, value: Option<f64>, passed: bool, detail: impl Into<String>) {
        self.items.push(CheckItem { group: group.into(), name: name.into(), value, passed, detail: detail.into() });
    }

    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckItem> {
        self.items.iter().filter(|i| !i.passed)
    }

    pub fn get(&self, group: &str, name: &str) -> Option<&CheckItem> {
        self.items.iter().find(|i| i.group == group && i.name == name)
    }

    pub fn to_table(&self) -> String {
        format_items(&self.items)
    }
}

pub fn format_items(items: &[CheckItem]) -> String {
    let mut out = String::new();
    for i in items {
        let value = i.value.map(|v| format!("{v:>13.6e}")).unwrap_or_else(|| format!("{:>13}", "-"));
        let verdict = if i.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{verdict}  {:<12} {:<32} {value}  {}\n", i.group, i.name, i.detail));
    }
    out
}

/// One item per threshold present in `spec`.
pub fn evaluate_acceptance(spec: &AcceptanceSpec, summary: &Summary) -> Vec<CheckItem> {
    let mut out = Vec::new();
    let mut check = |name: &str, value: f64, limit: f64| {
        out.push(CheckItem {
            group: "acceptance".into(),
            name: name.into(),
            value: Some(value),
            passed: value < limit,
            detail: format!("< {limit:e}"),
        });
    };
    if let Some(l) = spec.tail_error {
        check("tail_error", summary.tail_max_error, l);
    }
    if let Some(l) = spec.final_error {
        check("final_error", summary.final_max_error, l);
    }
    if let Some(l) = spec.window_ratio {
        let worst = summary
            .windows
            .iter()
            .filter(|w| !w.empty)
            .map(|w| w.ratio.unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        check("window_ratio", worst, l);
    }
    if let Some(l) = spec.delta_c {
        check("delta_c", summary.delta_c_final, l);
    }
    if let Some(l) = spec.leader_observer_error {
        check("leader_observer_error", summary.final_leader_observer_error.unwrap_or(f64::INFINITY), l);
    }
    if let Some(l) = spec.c_decrease_violations {
        out.push(CheckItem {
            group: "acceptance".into(),
            name: "c_decrease_violations".into(),
            value: Some(summary.c_decrease_violations as f64),
            passed: summary.c_decrease_violations <= l,
            detail: format!("≤ {l}"),
        });
    }
    if let Some(t) = summary.aborted_at {
        out.push(CheckItem {
            group: "acceptance".into(),
            name: "finished".into(),
            value: Some(t),
            passed: false,
            detail: "run aborted".into(),
        });
    }
    out
}
