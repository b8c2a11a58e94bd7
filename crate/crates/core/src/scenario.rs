//! Scenario layer: configuration files, builtin presets, initial profiles
//! and the run drivers behind the command-line interface.
//!
//! Configuration files are plain `key = value` lines grouped under
//! `[scenario]` and `[model]` headers, with `#` comments. Matrices are given
//! row-major as `n*n` whitespace-separated numbers on one line. Unknown keys
//! are rejected with their line number.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::diagnostics::{
    self, dissipation_report, DiagnosticsRecord, RecordedRun, write_snapshot_csv,
    write_timeseries_csv,
};
use crate::field::Field;
use crate::mesh::{discretize_initial, MovingMesh};
use crate::model::{free_energy_density, ModelParams, Phase, ADMISSIBLE_TOL};
use crate::ode::{integrate, reduced_free_energy_of, MassState};
use crate::solver::{cfl_constant, SimState, Stepper, StepperConfig};
use crate::stationary::{initial_mass, solve_stationary, StationaryClassification};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Pde,
    Ode,
    Converge,
    Stationary,
}

/// Initial concentration profile.
#[derive(Debug, Clone)]
pub enum InitialProfile {
    /// `c1 = c2 = (1 + cos(pi x))/4`, `c3 = (1 - cos(pi x))/2`.
    PaperCosine,
    /// Discrete projection of the two-phase stationary state for masses
    /// `(1/4, 1/4, 1/2)`; overrides the configured interface position.
    Stationary,
    /// Piecewise-linear table `x,c_1..c_n` loaded from a CSV file.
    Tabulated(PathBuf),
}

/// A fully described experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub n_cells: usize,
    pub dt_init: f64,
    pub t_end: f64,
    pub x0: f64,
    pub profile: InitialProfile,
    pub kappa_s: DMatrix<f64>,
    pub kappa_g: DMatrix<f64>,
    pub mu_star_s: Vec<f64>,
    pub mu_star_g: Vec<f64>,
    pub snapshot_times: Vec<f64>,
    pub output_dir: PathBuf,
    /// Grid ladder of the refinement study, as powers of two.
    pub level_min: u32,
    pub level_max: u32,
    pub level_ref: u32,
}

impl Scenario {
    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(
            self.kappa_s.clone(),
            self.kappa_g.clone(),
            self.mu_star_s.clone(),
            self.mu_star_g.clone(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells < 4 {
            return Err(Error::Config(format!("n_cells must be at least 4, got {}", self.n_cells)));
        }
        if self.t_end <= 0.0 {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.dt_init <= 0.0 {
            return Err(Error::Config(format!("dt_init must be positive, got {}", self.dt_init)));
        }
        if !(0.0 < self.x0 && self.x0 < 1.0) {
            return Err(Error::Config(format!("x0 must lie in (0,1), got {}", self.x0)));
        }
        if !(self.level_min <= self.level_max && self.level_max < self.level_ref) {
            return Err(Error::Config(format!(
                "refinement levels must satisfy min <= max < ref, got {} {} {}",
                self.level_min, self.level_max, self.level_ref
            )));
        }
        self.params().map(|_| ())
    }
}

fn paper_kappa() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, 0.2, 1.0, 0.2, 0.0, 0.1, 1.0, 0.1, 0.0])
}

fn preset_base(name: &str, dt: f64, beta: &[f64]) -> Scenario {
    Scenario {
        name: name.to_string(),
        mode: Mode::Pde,
        n_cells: 100,
        dt_init: dt,
        t_end: 5.0,
        x0: 0.51,
        profile: InitialProfile::PaperCosine,
        kappa_s: paper_kappa(),
        kappa_g: paper_kappa(),
        mu_star_s: vec![0.0; 3],
        mu_star_g: beta.iter().map(|b| b.ln()).collect(),
        snapshot_times: vec![0.0, 0.25, 1.0, 5.0],
        output_dir: PathBuf::from("out").join(name),
        level_min: 3,
        level_max: 7,
        level_ref: 9,
    }
}

/// Builtin presets reproducing the reference experiments.
pub fn preset(name: &str) -> Option<Scenario> {
    match name {
        // indistinguishable phases: the interface never moves
        "trivial" => Some(preset_base("trivial", 8e-4, &[1.0, 1.0, 1.0])),
        // two-phase equilibrium exists and attracts, monotone interface
        "equilibrium" => Some(preset_base("equilibrium", 6e-4, &[1.0 / 6.0, 4.0, 4.0])),
        // derived: ratios violating the two-phase condition, one phase
        // vanishes in finite time
        "non_equilibrium" => Some(preset_base("non_equilibrium", 6e-4, &[2.0, 2.0, 2.0])),
        // derived: ratios found by a search so the interface velocity changes
        // sign along the run while a two-phase equilibrium still exists
        "equilibrium_nonmonotone" => {
            Some(preset_base("equilibrium_nonmonotone", 6e-4, &[1.0 / 40.0, 3.0, 3.0]))
        }
        // refinement-study settings on the equilibrium parameters
        "converge" => {
            let mut s = preset_base("converge", 1e-4, &[1.0 / 6.0, 4.0, 4.0]);
            s.mode = Mode::Converge;
            s.t_end = 0.25;
            s.snapshot_times = vec![];
            s
        }
        .into(),
        _ => None,
    }
}

/// Resolve a CLI argument: builtin preset name first, then a config path.
pub fn resolve_scenario(arg: &str) -> Result<Scenario> {
    if let Some(s) = preset(arg) {
        return Ok(s);
    }
    let path = Path::new(arg);
    if path.exists() {
        parse_config(path)
    } else {
        Err(Error::Config(format!(
            "'{arg}' is neither a builtin preset (trivial, equilibrium, non_equilibrium, \
             equilibrium_nonmonotone, converge) nor an existing config file"
        )))
    }
}

pub fn parse_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, &path.display().to_string())
}

struct RawEntry {
    line: usize,
    value: String,
}

/// Parse the `key = value` format; every diagnostic carries its line number.
pub fn parse_config_str(text: &str, origin: &str) -> Result<Scenario> {
    let mut sections: BTreeMap<String, BTreeMap<String, RawEntry>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(Error::Config(format!("{origin}:{line_no}: malformed section header '{line}'")));
            }
            let section = line[1..line.len() - 1].trim().to_string();
            if section != "scenario" && section != "model" {
                return Err(Error::Config(format!("{origin}:{line_no}: unknown section [{section}]")));
            }
            current = Some(section);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("{origin}:{line_no}: expected 'key = value', got '{line}'")));
        };
        let Some(section) = current.clone() else {
            return Err(Error::Config(format!("{origin}:{line_no}: entry before any [section] header")));
        };
        let key = key.trim().to_string();
        let entry = RawEntry { line: line_no, value: value.trim().to_string() };
        if sections.entry(section).or_default().insert(key.clone(), entry).is_some() {
            return Err(Error::Config(format!("{origin}:{line_no}: duplicate key '{key}'")));
        }
    }

    let known_scenario = [
        "name",
        "mode",
        "n_cells",
        "dt_init",
        "t_end",
        "x0",
        "profile",
        "snapshot_times",
        "output_dir",
        "level_min",
        "level_max",
        "level_ref",
    ];
    let known_model = ["species", "kappa_s", "kappa_g", "mu_star_s", "mu_star_g", "beta_star"];
    for (section, keys) in [("scenario", &known_scenario[..]), ("model", &known_model[..])] {
        if let Some(entries) = sections.get(section) {
            for (key, entry) in entries {
                if !keys.contains(&key.as_str()) {
                    return Err(Error::Config(format!(
                        "{origin}:{}: unknown key '{key}' in [{section}]",
                        entry.line
                    )));
                }
            }
        }
    }

    let scenario_entries = sections.get("scenario").ok_or_else(|| {
        Error::Config(format!("{origin}: missing [scenario] section"))
    })?;
    let model_entries = sections
        .get("model")
        .ok_or_else(|| Error::Config(format!("{origin}: missing [model] section")))?;

    let get = |entries: &BTreeMap<String, RawEntry>, key: &str| -> Option<(usize, String)> {
        entries.get(key).map(|e| (e.line, e.value.clone()))
    };
    let require = |entries: &BTreeMap<String, RawEntry>, section: &str, key: &str| -> Result<(usize, String)> {
        get(entries, key)
            .ok_or_else(|| Error::Config(format!("{origin}: missing required key '{key}' in [{section}]")))
    };
    let parse_f64 = |line: usize, key: &str, value: &str| -> Result<f64> {
        value
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("{origin}:{line}: '{key}' must be a number, got '{value}'")))
    };
    let parse_usize = |line: usize, key: &str, value: &str| -> Result<usize> {
        value
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{origin}:{line}: '{key}' must be an integer, got '{value}'")))
    };
    let parse_vec = |line: usize, key: &str, value: &str, expect: usize| -> Result<Vec<f64>> {
        let v: std::result::Result<Vec<f64>, _> =
            value.split_whitespace().map(|t| t.parse::<f64>()).collect();
        let v = v.map_err(|_| {
            Error::Config(format!("{origin}:{line}: '{key}' must be {expect} numbers"))
        })?;
        if v.len() != expect {
            return Err(Error::Config(format!(
                "{origin}:{line}: '{key}' must have {expect} entries, got {}",
                v.len()
            )));
        }
        Ok(v)
    };

    let (line, species) = require(model_entries, "model", "species")?;
    let n = parse_usize(line, "species", &species)?;
    if n < 2 {
        return Err(Error::Config(format!("{origin}:{line}: at least two species required")));
    }

    let (line, ks) = require(model_entries, "model", "kappa_s")?;
    let kappa_s = DMatrix::from_row_slice(n, n, &parse_vec(line, "kappa_s", &ks, n * n)?);
    let (line, kg) = require(model_entries, "model", "kappa_g")?;
    let kappa_g = DMatrix::from_row_slice(n, n, &parse_vec(line, "kappa_g", &kg, n * n)?);

    let mu_star_s = match get(model_entries, "mu_star_s") {
        Some((line, v)) => parse_vec(line, "mu_star_s", &v, n)?,
        None => vec![0.0; n],
    };
    let mu_star_g = match (get(model_entries, "mu_star_g"), get(model_entries, "beta_star")) {
        (Some(_), Some((line, _))) => {
            return Err(Error::Config(format!(
                "{origin}:{line}: give either 'mu_star_g' or 'beta_star', not both"
            )));
        }
        (Some((line, v)), None) => parse_vec(line, "mu_star_g", &v, n)?,
        (None, Some((line, v))) => {
            let beta = parse_vec(line, "beta_star", &v, n)?;
            if beta.iter().any(|b| *b <= 0.0) {
                return Err(Error::Config(format!("{origin}:{line}: 'beta_star' entries must be positive")));
            }
            beta.iter().zip(&mu_star_s).map(|(b, ms)| b.ln() + ms).collect()
        }
        (None, None) => {
            return Err(Error::Config(format!(
                "{origin}: missing 'mu_star_g' (or 'beta_star') in [model]"
            )));
        }
    };

    let name = match get(scenario_entries, "name") {
        Some((_, v)) => v,
        None => "scenario".to_string(),
    };
    let mode = match get(scenario_entries, "mode") {
        Some((line, v)) => match v.as_str() {
            "pde" => Mode::Pde,
            "ode" => Mode::Ode,
            "converge" => Mode::Converge,
            "stationary" => Mode::Stationary,
            other => {
                return Err(Error::Config(format!(
                    "{origin}:{line}: unknown mode '{other}' (pde, ode, converge, stationary)"
                )));
            }
        },
        None => Mode::Pde,
    };
    let (line, v) = require(scenario_entries, "scenario", "n_cells")?;
    let n_cells = parse_usize(line, "n_cells", &v)?;
    let (line, v) = require(scenario_entries, "scenario", "dt_init")?;
    let dt_init = parse_f64(line, "dt_init", &v)?;
    let (line, v) = require(scenario_entries, "scenario", "t_end")?;
    let t_end = parse_f64(line, "t_end", &v)?;
    let (line, v) = require(scenario_entries, "scenario", "x0")?;
    let x0 = parse_f64(line, "x0", &v)?;
    let profile = match get(scenario_entries, "profile") {
        Some((line, v)) => match v.as_str() {
            "paper_cosine" => InitialProfile::PaperCosine,
            "stationary" => InitialProfile::Stationary,
            other => match other.strip_prefix("tabulated:") {
                Some(path) => InitialProfile::Tabulated(PathBuf::from(path.trim())),
                None => {
                    return Err(Error::Config(format!(
                        "{origin}:{line}: unknown profile '{other}' \
                         (paper_cosine, stationary, tabulated:<path>)"
                    )));
                }
            },
        },
        None => InitialProfile::PaperCosine,
    };
    let snapshot_times = match get(scenario_entries, "snapshot_times") {
        Some((line, v)) => parse_vec(line, "snapshot_times", &v, v.split_whitespace().count())?,
        None => vec![],
    };
    let output_dir = match get(scenario_entries, "output_dir") {
        Some((_, v)) => PathBuf::from(v),
        None => PathBuf::from("out").join(&name),
    };
    let parse_level = |key: &str, default: u32| -> Result<u32> {
        match get(scenario_entries, key) {
            Some((line, v)) => v
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("{origin}:{line}: '{key}' must be an integer"))),
            None => Ok(default),
        }
    };
    let level_min = parse_level("level_min", 3)?;
    let level_max = parse_level("level_max", 7)?;
    let level_ref = parse_level("level_ref", 9)?;

    let scenario = Scenario {
        name,
        mode,
        n_cells,
        dt_init,
        t_end,
        x0,
        profile,
        kappa_s,
        kappa_g,
        mu_star_s,
        mu_star_g,
        snapshot_times,
        output_dir,
        level_min,
        level_max,
        level_ref,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// A pointwise initial profile.
pub type ProfileFn = Box<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Pointwise builtin profile by name.
pub fn builtin_initial_profile(name: &str) -> Result<ProfileFn> {
    match name {
        "paper_cosine" => Ok(Box::new(|x: f64| {
            let c1 = 0.25 * (1.0 + (std::f64::consts::PI * x).cos());
            vec![c1, c1, 1.0 - 2.0 * c1]
        })),
        other => Err(Error::Usage(format!("unknown builtin profile '{other}'"))),
    }
}

fn load_tabulated(path: &Path) -> Result<ProfileFn> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read profile table {}: {e}", path.display())))?;
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (idx == 0 && line.starts_with('x')) {
            continue;
        }
        let nums: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let nums = nums.map_err(|_| {
            Error::Config(format!("{}:{}: malformed table row", path.display(), idx + 1))
        })?;
        if nums.len() < 3 {
            return Err(Error::Config(format!(
                "{}:{}: table rows need x plus at least two concentrations",
                path.display(),
                idx + 1
            )));
        }
        rows.push((nums[0], nums[1..].to_vec()));
    }
    if rows.len() < 2 {
        return Err(Error::Config(format!("{}: table needs at least two rows", path.display())));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if rows.first().unwrap().0 > 0.0 || rows.last().unwrap().0 < 1.0 {
        return Err(Error::Config(format!("{}: table must cover [0, 1]", path.display())));
    }
    for (x, c) in &rows {
        let s: f64 = c.iter().sum();
        if c.iter().any(|v| *v < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "{}: table value at x = {x} is not admissible",
                path.display()
            )));
        }
    }
    Ok(Box::new(move |x: f64| {
        let pos = rows.partition_point(|(xi, _)| *xi <= x).min(rows.len() - 1).max(1);
        let (x0, c0) = &rows[pos - 1];
        let (x1, c1) = &rows[pos];
        let w = if x1 == x0 { 0.0 } else { ((x - x0) / (x1 - x0)).clamp(0.0, 1.0) };
        c0.iter().zip(c1).map(|(a, b)| a + w * (b - a)).collect()
    }))
}

/// Masses of the reference cosine data, used by the stationary profile.
const STATIONARY_PROFILE_M0: [f64; 3] = [0.25, 0.25, 0.5];

/// Runtime options of the PDE runner.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Abort with an invariant error on any structural breach.
    pub strict_invariants: bool,
    /// Keep the per-step fields (needed for refinement-error norms).
    pub record_history: bool,
    /// Skip all file output (used by library-level studies and tests).
    pub no_files: bool,
}

/// Extremes of the per-step structural checks over a run.
#[derive(Debug, Clone)]
pub struct InvariantSummary {
    pub max_volume_filling: f64,
    pub min_concentration: f64,
    pub max_mass_drift_rel: f64,
    /// `|X^p - X^{p-1}| / (dx/2)`, must stay at or below one.
    pub max_interface_step_ratio: f64,
    /// most positive per-step energy increment
    pub max_energy_increase: f64,
    /// most positive slack of the termwise dissipation budget
    pub max_budget_slack: f64,
    pub min_interface_linear: f64,
    /// largest duality gap among steps with meaningful interface activity
    pub max_fenchel_rel_gap: f64,
    /// largest deviation between truncated and plain interface fluxes at roots
    pub max_flux_truncation_gap: f64,
}

impl Default for InvariantSummary {
    fn default() -> Self {
        Self {
            max_volume_filling: 0.0,
            min_concentration: f64::INFINITY,
            max_mass_drift_rel: 0.0,
            max_interface_step_ratio: 0.0,
            max_energy_increase: f64::NEG_INFINITY,
            max_budget_slack: f64::NEG_INFINITY,
            min_interface_linear: f64::INFINITY,
            max_fenchel_rel_gap: 0.0,
            max_flux_truncation_gap: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct NewtonStats {
    pub steps: usize,
    pub halved_steps: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
}

/// Stationary references resolved for the run's masses.
#[derive(Debug, Clone)]
pub struct StationaryInfo {
    pub classification: Option<StationaryClassification>,
    /// Energy of the expected long-time state.
    pub h_ref: Option<f64>,
    /// Expected long-time interface position.
    pub x_ref: Option<f64>,
}

pub struct RunReport {
    pub scenario: String,
    pub records: Vec<DiagnosticsRecord>,
    pub summary: InvariantSummary,
    pub newton: NewtonStats,
    pub stationary: StationaryInfo,
    pub final_state: SimState,
    pub history: Option<RecordedRun>,
    pub breaches: Vec<String>,
    pub wall_seconds: f64,
    pub written: Vec<PathBuf>,
}

fn profile_fn(scenario: &Scenario) -> Result<Option<ProfileFn>> {
    match &scenario.profile {
        InitialProfile::PaperCosine => {
            if scenario.mu_star_s.len() != 3 {
                return Err(Error::Config("the cosine profile defines three species".into()));
            }
            Ok(Some(builtin_initial_profile("paper_cosine")?))
        }
        InitialProfile::Tabulated(path) => {
            let f = load_tabulated(path)?;
            let n = scenario.mu_star_s.len();
            let probe = f(0.0);
            if probe.len() != n {
                return Err(Error::Config(format!(
                    "profile table has {} species, model has {n}",
                    probe.len()
                )));
            }
            Ok(Some(f))
        }
        InitialProfile::Stationary => Ok(None),
    }
}

/// Build the initial solver state for a scenario.
pub fn initial_state(scenario: &Scenario, params: &ModelParams) -> Result<SimState> {
    match &scenario.profile {
        InitialProfile::Stationary => {
            if params.n_species() != 3 {
                return Err(Error::Config("the stationary profile is defined for three species".into()));
            }
            let st = match solve_stationary(&STATIONARY_PROFILE_M0, params.beta_star())? {
                StationaryClassification::TwoPhase(s) => s,
                _ => {
                    return Err(Error::Config(
                        "the stationary profile needs parameters with a two-phase stationary state".into(),
                    ));
                }
            };
            let mesh = MovingMesh::two_phase(scenario.n_cells, st.x)?;
            if !(2..scenario.n_cells).contains(&mesh.interface_index()) {
                return Err(Error::Config(format!(
                    "stationary interface at {} sits too close to the boundary for N = {}",
                    st.x, scenario.n_cells
                )));
            }
            let cells: Vec<Vec<f64>> = (0..scenario.n_cells)
                .map(|k| match mesh.phase_of(k) {
                    Phase::Solid => st.c_s.clone(),
                    Phase::Gas => st.c_g.clone(),
                })
                .collect();
            Ok(SimState::two_phase(Field::from_cells(&cells), mesh))
        }
        _ => {
            let f = profile_fn(scenario)?.expect("non-stationary profiles yield a function");
            let mesh = MovingMesh::two_phase(scenario.n_cells, scenario.x0).map_err(|e| {
                Error::Config(format!("invalid initial interface position: {e}"))
            })?;
            let v = mesh.interface_index();
            if !(2..scenario.n_cells).contains(&v) {
                return Err(Error::Config(format!(
                    "x0 = {} puts the interface vertex at {v}, too close to the boundary for N = {}",
                    scenario.x0, scenario.n_cells
                )));
            }
            let field = discretize_initial(&f, &mesh);
            if field.max_volume_filling_residual() > 100.0 * ADMISSIBLE_TOL {
                return Err(Error::Config("initial profile is not admissible".into()));
            }
            Ok(SimState::two_phase(field, mesh))
        }
    }
}

fn stationary_info(m0: &[f64], params: &ModelParams, x0: f64) -> StationaryInfo {
    let classification = match solve_stationary(m0, params.beta_star()) {
        Ok(c) => c,
        Err(_) => return StationaryInfo { classification: None, h_ref: None, x_ref: None },
    };
    let (h_ref, x_ref) = match &classification {
        StationaryClassification::IndistinguishableFamily { composition } => {
            let h = free_energy_density(composition, Phase::Solid, params).ok();
            (h, Some(x0))
        }
        StationaryClassification::TwoPhase(st) => {
            let h = free_energy_density(&st.c_s, Phase::Solid, params)
                .and_then(|hs| {
                    free_energy_density(&st.c_g, Phase::Gas, params)
                        .map(|hg| st.x * hs + (1.0 - st.x) * hg)
                })
                .ok();
            (h, Some(st.x))
        }
        StationaryClassification::PureOnly { .. } => {
            let hs = free_energy_density(m0, Phase::Solid, params).ok();
            let hg = free_energy_density(m0, Phase::Gas, params).ok();
            match (hs, hg) {
                (Some(hs), Some(hg)) => {
                    if hs <= hg {
                        (Some(hs), Some(1.0))
                    } else {
                        (Some(hg), Some(0.0))
                    }
                }
                _ => (None, None),
            }
        }
    };
    StationaryInfo { classification: Some(classification), h_ref, x_ref }
}

/// Run a PDE scenario to its horizon, collecting diagnostics, invariant
/// extremes and output files.
pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<RunReport> {
    let start = Instant::now();
    scenario.validate()?;
    let params = scenario.params()?;
    let mut state = initial_state(scenario, &params)?;
    let m0 = initial_mass(&state.field, &state.mesh);
    let stationary = stationary_info(&m0, &params, state.mesh.interface_position());

    let mut written = Vec::new();
    if !options.no_files {
        std::fs::create_dir_all(&scenario.output_dir)?;
    }

    let mut pending_snapshots = scenario.snapshot_times.clone();
    pending_snapshots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pending_snapshots.dedup();
    let write_due_snapshots = |state: &SimState, pending: &mut Vec<f64>, written: &mut Vec<PathBuf>| -> Result<()> {
        while let Some(&next) = pending.first() {
            if next <= state.t + 1e-9 * (1.0 + state.t) {
                if !options.no_files {
                    let path = scenario.output_dir.join(format!("snapshot_t{next}.csv"));
                    write_snapshot_csv(&state.field, &state.mesh, &path)?;
                    written.push(path);
                }
                pending.remove(0);
            } else {
                break;
            }
        }
        Ok(())
    };
    write_due_snapshots(&state, &mut pending_snapshots, &mut written)?;

    let h0 = diagnostics::discrete_free_energy(&state.field, &state.mesh, &params)?;
    let record_of = |state: &SimState,
                     h: f64,
                     masses: Vec<f64>,
                     diss: (f64, f64, f64),
                     iters: usize,
                     dt: f64| DiagnosticsRecord {
        t: state.t,
        x: state.mesh.interface_position(),
        k_int: state.mesh.interface_index(),
        h,
        h_rel: stationary.h_ref.map(|hr| h - hr).unwrap_or(f64::NAN),
        dx_rel: stationary.x_ref.map(|xr| (state.mesh.interface_position() - xr).abs()).unwrap_or(f64::NAN),
        masses,
        diss_bulk: diss.0,
        diss_interface: diss.1,
        diss_phi_star: diss.2,
        newton_iters: iters,
        dt,
    };

    let mut records = vec![record_of(&state, h0, m0.clone(), (0.0, 0.0, 0.0), 0, 0.0)];
    let mut history = options.record_history.then(RecordedRun::default);
    if let Some(h) = history.as_mut() {
        h.push(0.0, &state);
    }

    let mut summary = InvariantSummary::default();
    summary.max_volume_filling = state.field.max_volume_filling_residual();
    summary.min_concentration = state.field.min_entry();
    let mut newton = NewtonStats::default();
    let mut breaches: Vec<String> = Vec::new();
    let mut h_prev = h0;

    let mut stepper = Stepper::new(params.clone(), StepperConfig::new(scenario.dt_init));
    let t_end = scenario.t_end;
    while state.t < t_end - 1e-12 * t_end {
        let remaining = t_end - state.t;
        let step = stepper.advance(&state, remaining)?;
        let report = dissipation_report(&state, &step, &params)?;

        // structural checks
        let vol = step.state.field.max_volume_filling_residual();
        let min_c = step.state.field.min_entry();
        let masses = initial_mass(&step.state.field, &step.state.mesh);
        let drift = masses
            .iter()
            .zip(&m0)
            .map(|(m, m_ref)| (m - m_ref).abs() / m_ref.abs().max(1e-300))
            .fold(0.0f64, f64::max);
        // displacement of the scheme's interface update; a pinning remap
        // afterwards may snap the stored position to the domain end
        let dx_ratio =
            (step.x_tilde - state.mesh.interface_position()).abs() / (0.5 * state.mesh.dx());
        let h_new = diagnostics::discrete_free_energy(&step.state.field, &step.state.mesh, &params)?;
        let dh = h_new - h_prev;
        let trunc_gap = step
            .f_root
            .iter()
            .zip(&step.f_tilde_root)
            .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
            .fold(0.0f64, f64::max);

        summary.max_volume_filling = summary.max_volume_filling.max(vol);
        summary.min_concentration = summary.min_concentration.min(min_c);
        summary.max_mass_drift_rel = summary.max_mass_drift_rel.max(drift);
        summary.max_interface_step_ratio = summary.max_interface_step_ratio.max(dx_ratio);
        summary.max_energy_increase = summary.max_energy_increase.max(dh);
        summary.max_budget_slack = summary.max_budget_slack.max(report.budget_slack);
        summary.min_interface_linear = summary.min_interface_linear.min(report.interface_linear);
        let activity = report.interface_linear.abs().max(report.strong_phi.abs());
        if activity > 1e-13 {
            summary.max_fenchel_rel_gap = summary.max_fenchel_rel_gap.max(report.fenchel_rel_gap);
        }
        summary.max_flux_truncation_gap = summary.max_flux_truncation_gap.max(trunc_gap);

        let mut breach = |msg: String| breaches.push(format!("t = {:.6}: {msg}", step.state.t));
        if vol > 1e-10 {
            breach(format!("volume filling residual {vol:.3e}"));
        }
        if min_c <= 0.0 {
            breach(format!("nonpositive concentration {min_c:.3e}"));
        }
        if drift > 1e-10 {
            breach(format!("mass drift {drift:.3e}"));
        }
        if dx_ratio > 1.0 + 1e-12 {
            breach(format!("interface step ratio {dx_ratio:.3}"));
        }
        if dh > 1e-12 {
            breach(format!("free energy increased by {dh:.3e}"));
        }
        if report.budget_slack > 1e-10 {
            breach(format!("dissipation budget slack {:.3e}", report.budget_slack));
        }
        if report.interface_linear < -1e-12 {
            breach(format!("negative interface dissipation {:.3e}", report.interface_linear));
        }
        if activity > 1e-13 && report.fenchel_rel_gap > 1e-10 {
            breach(format!("duality gap {:.3e}", report.fenchel_rel_gap));
        }
        if trunc_gap > 1e-12 {
            breach(format!("truncated flux deviates from the plain flux by {trunc_gap:.3e}"));
        }

        newton.steps += 1;
        newton.total_iterations += step.newton_iters;
        newton.max_iterations = newton.max_iterations.max(step.newton_iters);
        if step.halvings > 0 {
            newton.halved_steps += 1;
        }

        records.push(record_of(
            &step.state,
            h_new,
            masses,
            (report.bulk, report.interface_linear, report.strong_phi),
            step.newton_iters,
            step.dt_used,
        ));
        if let Some(hist) = history.as_mut() {
            hist.push(step.state.t, &step.state);
        }
        h_prev = h_new;
        state = step.state;
        write_due_snapshots(&state, &mut pending_snapshots, &mut written)?;

        if options.strict_invariants && !breaches.is_empty() {
            return Err(Error::Invariant(breaches.join("; ")));
        }
    }

    if !options.no_files {
        let ts_path = scenario.output_dir.join("timeseries.csv");
        write_timeseries_csv(&records, params.n_species(), &ts_path)?;
        written.push(ts_path);
    }

    Ok(RunReport {
        scenario: scenario.name.clone(),
        records,
        summary,
        newton,
        stationary,
        final_state: state,
        history,
        breaches,
        wall_seconds: start.elapsed().as_secs_f64(),
        written,
    })
}

/// Result of an ODE-mode run.
pub struct OdeReport {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub energies: Vec<f64>,
    pub extinction: Option<crate::ode::ExtinctionEvent>,
    pub written: Vec<PathBuf>,
}

/// Run the space-homogeneous reduction: the solid masses start from the
/// profile integrated over `(0, x0)`.
pub fn run_ode(scenario: &Scenario, options: &RunOptions) -> Result<OdeReport> {
    scenario.validate()?;
    let params = scenario.params()?;
    let state = initial_state(scenario, &params)?;
    let mesh = &state.mesh;
    let mut m_s = vec![0.0; params.n_species()];
    for k in 0..mesh.n_cells() {
        if mesh.phase_of(k) == Phase::Solid {
            for (mi, ci) in m_s.iter_mut().zip(state.field.cell(k)) {
                *mi += mesh.width(k) * ci;
            }
        }
    }
    let m0 = initial_mass(&state.field, mesh);
    let mass_state = MassState::new(m_s, m0).map_err(|e| {
        Error::Config(format!("initial data does not give a valid two-phase mass state: {e}"))
    })?;
    let trajectory = integrate(&mass_state, scenario.t_end, scenario.dt_init, &params)?;
    let energies: Vec<f64> = trajectory
        .states
        .iter()
        .map(|s| reduced_free_energy_of(s, &params))
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = trajectory.states.iter().map(|s| s.x()).collect();

    let mut written = Vec::new();
    if !options.no_files {
        std::fs::create_dir_all(&scenario.output_dir)?;
        let path = scenario.output_dir.join("ode_timeseries.csv");
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        use std::io::Write;
        write!(out, "t,X,H")?;
        for i in 1..=params.n_species() {
            write!(out, ",m_s_{i}")?;
        }
        writeln!(out)?;
        for (k, t) in trajectory.times.iter().enumerate() {
            write!(out, "{t},{},{}", xs[k], energies[k])?;
            for m in trajectory.states[k].solid_masses() {
                write!(out, ",{m}")?;
            }
            writeln!(out)?;
        }
        written.push(path);
    }
    Ok(OdeReport { times: trajectory.times, xs, energies, extinction: trajectory.extinction, written })
}

/// One level of the refinement study.
#[derive(Debug, Clone)]
pub struct ConvergenceLevel {
    pub n_cells: usize,
    pub dx: f64,
    pub error_c: f64,
    pub error_x: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub levels: Vec<ConvergenceLevel>,
    pub dt_used: f64,
    pub reference_cells: usize,
    /// Least-squares slope of `log error_c` against `log dx`.
    pub order_c: f64,
    pub r2_c: f64,
    pub order_x: f64,
    pub written: Vec<PathBuf>,
}

/// Run the grid ladder against a reference solution and fit the observed
/// spatial order.
///
/// All levels share one fixed time step: the configured one, clamped by the
/// strictest (finest-grid) interface CFL bound so that every run walks the
/// same step sequence and the space-time error needs no interpolation.
pub fn run_convergence(scenario: &Scenario, full: bool, options: &RunOptions) -> Result<ConvergenceStudy> {
    scenario.validate()?;
    let params = scenario.params()?;
    let (lo, hi, reference) = if full {
        (3, 10, 11)
    } else {
        (scenario.level_min, scenario.level_max, scenario.level_ref)
    };
    let finest_dx = 1.0 / (1u32 << reference) as f64;
    let cfl = 0.9 * finest_dx / (2.0 * cfl_constant(&params));
    let dt = scenario.dt_init.min(cfl);

    let run_level = |cells: usize| -> Result<RecordedRun> {
        let mut level_scenario = scenario.clone();
        level_scenario.mode = Mode::Pde;
        level_scenario.n_cells = cells;
        level_scenario.dt_init = dt;
        level_scenario.snapshot_times = vec![];
        level_scenario.name = format!("{}_n{}", scenario.name, cells);
        let opts = RunOptions {
            strict_invariants: options.strict_invariants,
            record_history: true,
            no_files: true,
        };
        let report = run_scenario(&level_scenario, &opts)?;
        Ok(report.history.expect("history was requested"))
    };

    let reference_run = run_level(1usize << reference)?;
    let levels: Vec<u32> = (lo..=hi).collect();
    let results: Vec<Result<(usize, RecordedRun)>> = levels
        .par_iter()
        .map(|level| {
            let cells = 1usize << level;
            run_level(cells).map(|run| (cells, run))
        })
        .collect();

    let mut table = Vec::new();
    for result in results {
        let (cells, run) = result?;
        let (error_c, error_x) = diagnostics::l1_errors(&run, &reference_run)?;
        table.push(ConvergenceLevel { n_cells: cells, dx: 1.0 / cells as f64, error_c, error_x });
    }

    let log_dx: Vec<f64> = table.iter().map(|l| l.dx.ln()).collect();
    let log_ec: Vec<f64> = table.iter().map(|l| l.error_c.max(1e-300).ln()).collect();
    let log_ex: Vec<f64> = table.iter().map(|l| l.error_x.max(1e-300).ln()).collect();
    let (order_c, _, r2_c) = diagnostics::linear_fit(&log_dx, &log_ec);
    let (order_x, _, _) = diagnostics::linear_fit(&log_dx, &log_ex);

    let mut written = Vec::new();
    if !options.no_files {
        std::fs::create_dir_all(&scenario.output_dir)?;
        let path = scenario.output_dir.join("convergence.csv");
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        use std::io::Write;
        writeln!(out, "N,dx,error_c,error_X,order_c,order_X")?;
        for (idx, level) in table.iter().enumerate() {
            let (oc, ox) = if idx == 0 {
                (String::new(), String::new())
            } else {
                let prev = &table[idx - 1];
                let ratio = (prev.dx / level.dx).ln();
                (
                    format!("{}", (prev.error_c / level.error_c).ln() / ratio),
                    format!("{}", (prev.error_x / level.error_x).ln() / ratio),
                )
            };
            writeln!(
                out,
                "{},{},{},{},{},{}",
                level.n_cells, level.dx, level.error_c, level.error_x, oc, ox
            )?;
        }
        writeln!(out, "# fitted_order_c = {order_c} (r2 = {r2_c}), fitted_order_X = {order_x}, dt = {dt}")?;
        written.push(path);
    }

    Ok(ConvergenceStudy {
        levels: table,
        dt_used: dt,
        reference_cells: 1usize << reference,
        order_c,
        r2_c,
        order_x,
        written,
    })
}

/// Classify the stationary states for a scenario's initial masses.
pub fn run_stationary_analysis(scenario: &Scenario) -> Result<(Vec<f64>, StationaryClassification)> {
    scenario.validate()?;
    let params = scenario.params()?;
    let state = initial_state(scenario, &params)?;
    let m0 = initial_mass(&state.field, &state.mesh);
    let classification = solve_stationary(&m0, params.beta_star())?;
    Ok((m0, classification))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn presets_encode_reference_parameters() {
        let t = preset("trivial").unwrap();
        assert_eq!(t.n_cells, 100);
        assert_relative_eq!(t.x0, 0.51);
        assert_relative_eq!(t.dt_init, 8e-4);
        assert_relative_eq!(t.t_end, 5.0);
        let p = t.params().unwrap();
        assert!(p.beta_star().iter().all(|b| *b == 1.0));
        assert_relative_eq!(t.kappa_s[(0, 1)], 0.2);
        assert_relative_eq!(t.kappa_s[(1, 2)], 0.1);
        assert_relative_eq!(t.kappa_s[(0, 2)], 1.0);
        assert_relative_eq!(p.kappa_min(Phase::Solid), 0.1);

        let e = preset("equilibrium").unwrap();
        assert_relative_eq!(e.dt_init, 6e-4);
        let p = e.params().unwrap();
        assert_relative_eq!(p.beta_star()[0], 1.0 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(p.beta_star()[1], 4.0, max_relative = 1e-14);

        let ne = preset("non_equilibrium").unwrap();
        let p = ne.params().unwrap();
        assert!(p.beta_star().iter().all(|b| (b - 2.0).abs() < 1e-14));
        assert!(preset("bogus").is_none());
    }

    #[test]
    fn config_round_trip_and_errors() {
        let good = r#"
[scenario]
name = demo
mode = pde
n_cells = 16
dt_init = 5e-4
t_end = 0.01
x0 = 0.51
snapshot_times = 0.0 0.01

[model]
species = 3
kappa_s = 0 0.2 1  0.2 0 0.1  1 0.1 0
kappa_g = 0 0.2 1  0.2 0 0.1  1 0.1 0
beta_star = 0.166666666666666657 4 4
"#;
        let s = parse_config_str(good, "demo.cfg").unwrap();
        assert_eq!(s.name, "demo");
        assert_eq!(s.n_cells, 16);
        let p = s.params().unwrap();
        assert_relative_eq!(p.beta_star()[1], 4.0, max_relative = 1e-14);

        // x0 out of range
        let bad = good.replace("x0 = 0.51", "x0 = 1.5");
        let err = parse_config_str(&bad, "demo.cfg").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");

        // unknown key with line reference
        let bad = good.replace("dt_init = 5e-4", "dt_weird = 5e-4");
        let err = format!("{}", parse_config_str(&bad, "demo.cfg").unwrap_err());
        assert!(err.contains("dt_weird") && err.contains("demo.cfg:"), "{err}");

        // malformed matrix
        let bad = good.replace("kappa_g = 0 0.2 1  0.2 0 0.1  1 0.1 0", "kappa_g = 0 0.2 1");
        assert!(parse_config_str(&bad, "demo.cfg").is_err());
    }

    #[test]
    fn cosine_profile_values() {
        let f = builtin_initial_profile("paper_cosine").unwrap();
        let c0 = f(0.0);
        assert_relative_eq!(c0[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(c0[1], 0.5, epsilon = 1e-15);
        assert!(c0[2].abs() < 1e-15);
        let c1 = f(1.0);
        assert!(c1[0].abs() < 1e-16 && c1[1].abs() < 1e-16);
        assert_relative_eq!(c1[2], 1.0, epsilon = 1e-15);
        for k in 0..=20 {
            let c = f(k as f64 / 20.0);
            assert_relative_eq!(c.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        }
        assert!(builtin_initial_profile("nope").is_err());
    }

    #[test]
    fn stationary_profile_projects_exactly() {
        let mut s = preset("equilibrium").unwrap();
        s.profile = InitialProfile::Stationary;
        s.n_cells = 32;
        let params = s.params().unwrap();
        let state = initial_state(&s, &params).unwrap();
        // the interface sits exactly at the stationary position and the
        // cells are constant per phase
        let st = match solve_stationary(&STATIONARY_PROFILE_M0, params.beta_star()).unwrap() {
            StationaryClassification::TwoPhase(st) => st,
            other => panic!("{other:?}"),
        };
        assert_relative_eq!(state.mesh.interface_position(), st.x, epsilon = 1e-15);
        let m = initial_mass(&state.field, &state.mesh);
        for i in 0..3 {
            assert_relative_eq!(m[i], STATIONARY_PROFILE_M0[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn short_run_produces_consistent_report() {
        let mut s = preset("equilibrium").unwrap();
        s.n_cells = 24;
        s.t_end = 0.02;
        s.snapshot_times = vec![];
        let report = run_scenario(&s, &RunOptions { no_files: true, ..Default::default() }).unwrap();
        assert!(report.breaches.is_empty(), "{:?}", report.breaches);
        assert!(report.newton.steps > 0);
        assert_eq!(report.records.len(), report.newton.steps + 1);
        assert!(report.summary.max_volume_filling <= 1e-10);
        assert!(report.summary.min_concentration > 0.0);
        assert!(report.summary.max_mass_drift_rel <= 1e-10);
        assert!(report.summary.max_energy_increase <= 1e-12);
        // time marches to the horizon
        assert_relative_eq!(report.final_state.t, 0.02, max_relative = 1e-9);
    }

    #[test]
    fn ode_mode_runs() {
        let mut s = preset("equilibrium").unwrap();
        s.mode = Mode::Ode;
        s.t_end = 0.5;
        s.dt_init = 1e-3;
        let report = run_ode(&s, &RunOptions { no_files: true, ..Default::default() }).unwrap();
        assert!(report.extinction.is_none());
        for w in report.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn stationary_analysis_for_presets() {
        let (m0, classification) = run_stationary_analysis(&preset("equilibrium").unwrap()).unwrap();
        assert_relative_eq!(m0[0], 0.25, epsilon = 1e-10);
        assert!(matches!(classification, StationaryClassification::TwoPhase(_)));
        let (_, classification) = run_stationary_analysis(&preset("trivial").unwrap()).unwrap();
        assert!(matches!(classification, StationaryClassification::IndistinguishableFamily { .. }));
        let (_, classification) = run_stationary_analysis(&preset("non_equilibrium").unwrap()).unwrap();
        assert!(matches!(classification, StationaryClassification::PureOnly { .. }));
    }
}
