//! Command line front end: TOML experiment configs with strict schemas,
//! subcommands mirroring the experiment names, per-run output directories
//! keyed by a config hash, and deterministic CSV/JSON artifact emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anderson::{localization_profile, Model};
use crate::chain::Integrator;
use crate::correlation::{
    audit_current_decomposition, estimate_classical, estimate_quantum, fit_exponent,
    ClassicalCorrelationSpec, CorrelationEstimate, DecompositionAuditSpec, ExponentFit,
    QuantumCorrelationSpec,
};
use crate::disorder::{sample_disorder, DisorderSpec};
use crate::error::{Error, Result};
use crate::fermion::{FreeChain, Interacting};
use crate::griffiths::{
    block_survival_bound, gap_tail, predict_exponent, survival_bound, GapTailSpec,
    GriffithsOptions,
};
use crate::rng::{self, Stream};
use crate::splitting::{boundary_decay_experiment, BoundaryDecaySpec};

/// Name of the environment variable consulted for the worker count when the
/// `--workers` flag is absent.
pub const WORKERS_ENV: &str = "SPARSECHAIN_WORKERS";

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

/// The experiments the tool knows how to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    AndersonProfile,
    SplittingDecay,
    GriffithsGaps,
    #[serde(rename = "c-of-t")]
    COfT,
    ExponentFit,
    DecompositionAudit,
    EdCrosscheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::AndersonProfile,
        ExperimentKind::SplittingDecay,
        ExperimentKind::GriffithsGaps,
        ExperimentKind::COfT,
        ExperimentKind::ExponentFit,
        ExperimentKind::DecompositionAudit,
        ExperimentKind::EdCrosscheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::AndersonProfile => "anderson-profile",
            ExperimentKind::SplittingDecay => "splitting-decay",
            ExperimentKind::GriffithsGaps => "griffiths-gaps",
            ExperimentKind::COfT => "c-of-t",
            ExperimentKind::ExponentFit => "exponent-fit",
            ExperimentKind::DecompositionAudit => "decomposition-audit",
            ExperimentKind::EdCrosscheck => "ed-crosscheck",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// The model an experiment is tied to, when it only makes sense for one.
    pub fn required_model(self) -> Option<Model> {
        match self {
            ExperimentKind::SplittingDecay
            | ExperimentKind::GriffithsGaps
            | ExperimentKind::DecompositionAudit => Some(Model::Classical),
            ExperimentKind::EdCrosscheck => Some(Model::Quantum),
            _ => None,
        }
    }
}

/// Classical chain parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainBlock {
    pub g0: f64,
    pub g: f64,
    pub beta: f64,
}

impl Default for ChainBlock {
    fn default() -> Self {
        ChainBlock {
            g0: 0.4,
            g: 1.0,
            beta: 1.0,
        }
    }
}

/// Fermionic chain parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantumBlock {
    /// Hopping amplitude.
    pub j: f64,
    /// Chemical potential entering the product measure.
    pub mu: f64,
    /// Nearest-neighbour density interaction (exact diagonalization only).
    pub g: f64,
}

impl Default for QuantumBlock {
    fn default() -> Self {
        QuantumBlock {
            j: 1.0,
            mu: 1.0,
            g: 0.0,
        }
    }
}

/// Ensemble sizes, time grids, and output destination.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeBlock {
    pub ensemble: usize,
    pub t_max: f64,
    pub dt: f64,
    /// When nonempty, size-scanning experiments repeat once per entry.
    pub l_list: Vec<usize>,
    /// Window half-widths used by the window-based experiments.
    pub ell_list: Vec<usize>,
    /// Worker threads; 0 means one per core. The `--workers` flag and the
    /// SPARSECHAIN_WORKERS variable take precedence, in that order.
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Points kept on the stored time grid (the grid includes 0 and t_max).
    pub n_checkpoints: usize,
    pub integrator: Integrator,
    /// Explicit time grid; when nonempty it replaces the uniform grid built
    /// from t_max and n_checkpoints (quantum experiments only).
    pub times: Vec<f64>,
    /// Relative energy-drift budget per classical trajectory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_tolerance: Option<f64>,
}

impl Default for RuntimeBlock {
    fn default() -> Self {
        RuntimeBlock {
            ensemble: 200,
            t_max: 100.0,
            dt: 0.01,
            l_list: Vec::new(),
            ell_list: vec![2, 3, 4],
            workers: 0,
            output_dir: PathBuf::from("runs"),
            n_checkpoints: 65,
            integrator: Integrator::Composition4,
            times: Vec::new(),
            drift_tolerance: None,
        }
    }
}

/// Rare-region window selection knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowBlock {
    /// Localization length entering the edge-mass threshold.
    pub xi: f64,
    pub apply_r_filter: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_override: Option<f64>,
}

impl Default for WindowBlock {
    fn default() -> Self {
        WindowBlock {
            xi: 4.0,
            apply_r_filter: true,
            threshold_override: None,
        }
    }
}

impl WindowBlock {
    pub fn to_options(&self) -> GriffithsOptions {
        GriffithsOptions {
            xi: self.xi,
            threshold_override: self.threshold_override,
            apply_r_filter: self.apply_r_filter,
        }
    }
}

/// Localization-profile knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AndersonBlock {
    /// Box size diagonalized per ensemble member.
    pub b_size: usize,
    /// Bond coupling; defaults to chain.g0 (classical) or quantum.j.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
}

impl Default for AndersonBlock {
    fn default() -> Self {
        AndersonBlock {
            b_size: 64,
            coupling: None,
        }
    }
}

/// Current-decomposition audit knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditBlock {
    /// Window half-width; defaults to the first entry of runtime.ell_list.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ell: Option<usize>,
    /// Extra stream index separating the thermal draw from other runs.
    pub gibbs_stream: u64,
    /// Negative control: deliberately flip the right-hand telescoping spans.
    pub negate_right_spans: bool,
}

impl Default for AuditBlock {
    fn default() -> Self {
        AuditBlock {
            ell: None,
            gibbs_stream: 0,
            negate_right_spans: false,
        }
    }
}

/// Exponent prediction and fitting knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExponentBlock {
    /// Defect probabilities to tabulate; defaults to [disorder.p].
    pub p_list: Vec<f64>,
    /// Localization lengths to tabulate; defaults to [windows.xi].
    pub xi_list: Vec<f64>,
    /// Fit a power law to an existing correlation CSV instead of predicting.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_hi: Option<f64>,
}

impl Default for ExponentBlock {
    fn default() -> Self {
        ExponentBlock {
            p_list: Vec::new(),
            xi_list: Vec::new(),
            input: None,
            t_lo: None,
            t_hi: None,
        }
    }
}

/// One experiment, fully described. Every field has a documented default,
/// so an empty config file is valid; unknown keys are rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: Model,
    pub experiment: ExperimentKind,
    pub disorder: DisorderSpec,
    pub chain: ChainBlock,
    pub quantum: QuantumBlock,
    pub runtime: RuntimeBlock,
    pub windows: WindowBlock,
    pub anderson: AndersonBlock,
    pub audit: AuditBlock,
    pub exponent: ExponentBlock,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            model: Model::Classical,
            experiment: ExperimentKind::COfT,
            disorder: DisorderSpec::default(),
            chain: ChainBlock::default(),
            quantum: QuantumBlock::default(),
            runtime: RuntimeBlock::default(),
            windows: WindowBlock::default(),
            anderson: AndersonBlock::default(),
            audit: AuditBlock::default(),
            exponent: ExponentBlock::default(),
        }
    }
}

impl Config {
    /// Semantic checks beyond the serde schema. Runs before any output
    /// directory is created, so a bad config leaves no artifacts behind.
    pub fn validate(&self) -> Result<()> {
        if self.disorder.l < 2 {
            return Err(Error::config("disorder.l must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.disorder.p) {
            return Err(Error::config(format!(
                "disorder.p must lie in [0, 1], got {}",
                self.disorder.p
            )));
        }
        if !(self.chain.beta > 0.0) {
            return Err(Error::config(format!(
                "chain.beta must be positive, got {}",
                self.chain.beta
            )));
        }
        if !(self.runtime.t_max > 0.0 && self.runtime.dt > 0.0) {
            return Err(Error::config(format!(
                "runtime.t_max and runtime.dt must be positive, got {} and {}",
                self.runtime.t_max, self.runtime.dt
            )));
        }
        if self.runtime.ensemble == 0 {
            return Err(Error::config("runtime.ensemble must be at least 1"));
        }
        if !(self.windows.xi > 0.0) {
            return Err(Error::config(format!(
                "windows.xi must be positive, got {}",
                self.windows.xi
            )));
        }
        if !self.runtime.times.is_empty() {
            let ts = &self.runtime.times;
            let ordered = ts.windows(2).all(|w| w[0] < w[1]);
            if !ordered || ts[0] < 0.0 {
                return Err(Error::config(
                    "runtime.times must be nonnegative and strictly increasing",
                ));
            }
        }
        if let Some(required) = self.experiment.required_model() {
            if self.model != required {
                let tag = match required {
                    Model::Classical => "classical",
                    Model::Quantum => "quantum",
                };
                return Err(Error::config(format!(
                    "{} works on the {tag} chain only; set model = \"{tag}\" or drop the key",
                    self.experiment.name()
                )));
            }
        }
        if self.experiment == ExperimentKind::EdCrosscheck {
            for &l in std::iter::once(&self.disorder.l).chain(&self.runtime.l_list) {
                if l > 12 {
                    return Err(Error::config(format!(
                        "ed-crosscheck diagonalizes the many-body space and supports \
                         at most 12 sites, got {l}"
                    )));
                }
            }
        }
        let scans_l = matches!(
            self.experiment,
            ExperimentKind::COfT | ExperimentKind::GriffithsGaps | ExperimentKind::EdCrosscheck
        );
        if !self.runtime.l_list.is_empty() && !scans_l {
            return Err(Error::config(format!(
                "{} does not scan system size; clear runtime.l_list",
                self.experiment.name()
            )));
        }
        Ok(())
    }
}

/// Hash of the physics content of a config: workers and output_dir are
/// zeroed first, so runs that differ only in parallelism or destination
/// share a directory and must reproduce each other byte for byte.
pub fn config_hash(cfg: &Config) -> Result<String> {
    let mut canon = cfg.clone();
    canon.runtime.workers = 0;
    canon.runtime.output_dir = PathBuf::new();
    let bytes = serde_json::to_vec(&canon)
        .map_err(|e| Error::Config(format!("config not serializable: {e}")))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

// ---------------------------------------------------------------------------
// Config loading and key=value overrides
// ---------------------------------------------------------------------------

fn load_table(path: Option<&Path>) -> Result<toml::Table> {
    match path {
        None => Ok(toml::Table::new()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn parse_toml_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v was just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Short override keys accepted on the command line, mapped onto their
/// dotted config paths. Anything else is used verbatim, so dotted paths
/// like `quantum.g=0.5` always work.
fn expand_alias(key: &str, raw: &str) -> (String, String) {
    let as_list = |raw: &str| {
        if raw.trim_start().starts_with('[') {
            raw.to_string()
        } else {
            format!("[{raw}]")
        }
    };
    let (path, value) = match key {
        "p" => ("disorder.p", raw.to_string()),
        "L" | "l" => ("disorder.l", raw.to_string()),
        "seed" => ("disorder.seed", raw.to_string()),
        "g0" => ("chain.g0", raw.to_string()),
        "g" => ("chain.g", raw.to_string()),
        "beta" => ("chain.beta", raw.to_string()),
        "J" | "j" => ("quantum.j", raw.to_string()),
        "mu" => ("quantum.mu", raw.to_string()),
        "N" | "ensemble" => ("runtime.ensemble", raw.to_string()),
        "t_max" => ("runtime.t_max", raw.to_string()),
        "dt" => ("runtime.dt", raw.to_string()),
        "ell" | "ell_list" => ("runtime.ell_list", as_list(raw)),
        "L_list" | "l_list" => ("runtime.l_list", as_list(raw)),
        "workers" => ("runtime.workers", raw.to_string()),
        "output_dir" => ("runtime.output_dir", raw.to_string()),
        "integrator" => ("runtime.integrator", raw.to_string()),
        "xi" => ("windows.xi", raw.to_string()),
        "b_size" => ("anderson.b_size", raw.to_string()),
        "omega_min" => ("disorder.omega_law.min", raw.to_string()),
        "omega_max" => ("disorder.omega_law.max", raw.to_string()),
        other => (other, raw.to_string()),
    };
    (path.to_string(), value)
}

fn set_path(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<()> {
    let mut segments: Vec<&str> = dotted.split('.').collect();
    let last = segments.pop().expect("split yields at least one segment");
    if last.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(Error::config(format!("override path '{dotted}' is malformed")));
    }
    let mut cur = table;
    for seg in segments {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::config(format!("cannot set '{dotted}': '{seg}' is not a table"))
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// The frequency law is internally tagged, so overriding a single field of
/// it must first materialize the full default table.
fn ensure_omega_law(table: &mut toml::Table) {
    let disorder = table
        .entry("disorder".to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if let Some(d) = disorder.as_table_mut() {
        d.entry("omega_law".to_string()).or_insert_with(|| {
            let mut law = toml::Table::new();
            law.insert("kind".into(), toml::Value::String("uniform".into()));
            law.insert("min".into(), toml::Value::Float(0.5));
            law.insert("max".into(), toml::Value::Float(1.5));
            toml::Value::Table(law)
        });
    }
}

/// Apply one `key=value` override onto the raw config table.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        return Err(Error::config(format!(
            "override '{spec}' is not of the form key=value"
        )));
    };
    let (key, raw) = (key.trim(), raw.trim());
    if key.is_empty() || raw.is_empty() {
        return Err(Error::config(format!(
            "override '{spec}' needs both a key and a value"
        )));
    }
    let (path, raw) = expand_alias(key, raw);
    if path.starts_with("disorder.omega_law.") {
        ensure_omega_law(table);
    }
    set_path(table, &path, parse_toml_value(&raw))
}

/// Turn a raw TOML table into a validated config.
pub fn config_from_table(table: toml::Table) -> Result<Config> {
    let cfg: Config = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Artifact construction
// ---------------------------------------------------------------------------

/// A file to be written into the run directory.
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Copy)]
enum Field {
    U(u64),
    I(i64),
    F(f64),
}

/// CSV with a fixed float format so replays are byte-identical.
fn csv_artifact(name: &str, header: &[&str], rows: &[Vec<Field>]) -> Artifact {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len(), "row width must match header");
        let mut first = true;
        for field in row {
            if !first {
                text.push(',');
            }
            first = false;
            match field {
                Field::U(v) => text.push_str(&v.to_string()),
                Field::I(v) => text.push_str(&v.to_string()),
                Field::F(v) => text.push_str(&format!("{v:.12e}")),
            }
        }
        text.push('\n');
    }
    Artifact {
        name: name.to_string(),
        bytes: text.into_bytes(),
    }
}

fn json_artifact(name: &str, value: &serde_json::Value) -> Result<Artifact> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("artifact {name} not serializable: {e}")))?;
    text.push('\n');
    Ok(Artifact {
        name: name.to_string(),
        bytes: text.into_bytes(),
    })
}

fn exponent_json(fit: &Option<ExponentFit>) -> serde_json::Value {
    match fit {
        None => serde_json::Value::Null,
        Some(f) => serde_json::json!({
            "exponent": f.exponent,
            "stderr": f.stderr,
            "amplitude": f.amplitude,
            "window": [f.window.0, f.window.1],
            "r2": f.r2,
            "n_points": f.n_points,
        }),
    }
}

// ---------------------------------------------------------------------------
// Experiment runners
// ---------------------------------------------------------------------------

fn time_grid(rt: &RuntimeBlock) -> Vec<f64> {
    if !rt.times.is_empty() {
        return rt.times.clone();
    }
    let n = rt.n_checkpoints.max(2);
    (0..n)
        .map(|k| rt.t_max * k as f64 / (n - 1) as f64)
        .collect()
}

/// System sizes this run covers, paired with the artifact name suffix.
fn size_scan(cfg: &Config) -> Vec<(usize, String)> {
    if cfg.runtime.l_list.is_empty() {
        vec![(cfg.disorder.l, String::new())]
    } else {
        cfg.runtime
            .l_list
            .iter()
            .map(|&l| (l, format!("-L{l}")))
            .collect()
    }
}

fn run_anderson_profile(cfg: &Config) -> Result<Vec<Artifact>> {
    let coupling = cfg.anderson.coupling.unwrap_or(match cfg.model {
        Model::Classical => cfg.chain.g0,
        Model::Quantum => cfg.quantum.j,
    });
    let profile = localization_profile(
        &cfg.disorder,
        cfg.anderson.b_size,
        cfg.runtime.ensemble,
        cfg.model,
        coupling,
    )?;
    let rows: Vec<Vec<Field>> = profile
        .distance
        .iter()
        .zip(&profile.value)
        .zip(&profile.stderr)
        .map(|((&d, &v), &e)| vec![Field::U(d as u64), Field::F(v), Field::F(e)])
        .collect();
    let fit = serde_json::json!({
        "xi_hat": profile.xi_hat,
        "slope": profile.fit_slope,
        "slope_stderr": profile.fit_slope_stderr,
        "r2": profile.fit_r2,
        "window": [profile.fit_window.0, profile.fit_window.1],
        "ensemble": profile.ensemble,
    });
    Ok(vec![
        csv_artifact("profile.csv", &["d", "mean", "stderr"], &rows),
        json_artifact("fit.json", &fit)?,
    ])
}

fn run_splitting_decay(cfg: &Config) -> Result<Vec<Artifact>> {
    let spec = BoundaryDecaySpec {
        omega_law: cfg.disorder.omega_law,
        g0: cfg.chain.g0,
        ells: cfg.runtime.ell_list.clone(),
        ensemble: cfg.runtime.ensemble,
        seed: cfg.disorder.seed,
    };
    let decay = boundary_decay_experiment(&spec)?;
    let decay_rows: Vec<Vec<Field>> = decay
        .ells
        .iter()
        .zip(&decay.mean_r)
        .zip(&decay.stderr_r)
        .map(|((&ell, &m), &e)| vec![Field::U(ell as u64), Field::F(m), Field::F(e)])
        .collect();
    let gamma_rows: Vec<Vec<Field>> = decay
        .gamma_distance
        .iter()
        .zip(&decay.gamma_profile)
        .map(|(&d, &v)| vec![Field::U(d as u64), Field::F(v)])
        .collect();
    let rates = serde_json::json!({
        "rate_r": decay.rate_r,
        "rate_gamma": decay.rate_gamma,
        "ensemble": decay.ensemble,
    });
    Ok(vec![
        csv_artifact("decay.csv", &["ell", "mean_r", "stderr_r"], &decay_rows),
        csv_artifact("gamma.csv", &["d", "row_mass"], &gamma_rows),
        json_artifact("rates.json", &rates)?,
    ])
}

fn run_griffiths_gaps(cfg: &Config) -> Result<Vec<Artifact>> {
    let mut artifacts = Vec::new();
    for (l, suffix) in size_scan(cfg) {
        let spec = GapTailSpec {
            l,
            p: cfg.disorder.p,
            omega_law: cfg.disorder.omega_law,
            ells: cfg.runtime.ell_list.clone(),
            realizations: cfg.runtime.ensemble,
            seed: cfg.disorder.seed,
            coupling: cfg.chain.g0,
            options: cfg.windows.to_options(),
        };
        let results = gap_tail(&spec)?;
        let mut summary = Vec::new();
        for res in &results {
            let d_max = res
                .sorted_gaps
                .last()
                .copied()
                .unwrap_or(0)
                .max(2 * res.ell + 2);
            let rows: Vec<Vec<Field>> = (1..=d_max)
                .map(|d| {
                    vec![
                        Field::U(d as u64),
                        Field::F(res.survival(d)),
                        Field::F(survival_bound(cfg.disorder.p, res.ell, d)),
                        Field::F(block_survival_bound(cfg.disorder.p, res.ell, d)),
                    ]
                })
                .collect();
            artifacts.push(csv_artifact(
                &format!("tail-ell{}{}.csv", res.ell, suffix),
                &["d", "empirical_survival", "bound", "block_bound"],
                &rows,
            ));
            summary.push(serde_json::json!({
                "ell": res.ell,
                "d0": res.d0,
                "n_sites": res.n_sites,
                "n_gaps": res.n_gaps,
                "density": res.density,
                "density_stderr": res.density_stderr,
                "density_lower_bound": res.density_lower_bound,
                "max_violation": res.max_violation,
                "max_block_violation": res.max_block_violation,
            }));
        }
        artifacts.push(json_artifact(
            &format!("summary{suffix}.json"),
            &serde_json::Value::Array(summary),
        )?);
    }
    Ok(artifacts)
}

fn correlation_artifacts(
    est: &CorrelationEstimate,
    suffix: &str,
    extra: serde_json::Value,
) -> Result<Vec<Artifact>> {
    let rows: Vec<Vec<Field>> = est
        .times
        .iter()
        .zip(&est.mean)
        .zip(&est.stderr)
        .map(|((&t, &c), &e)| vec![Field::F(t), Field::F(c), Field::F(e)])
        .collect();
    let mut summary = serde_json::json!({
        "ensemble": est.ensemble,
        "exponent": exponent_json(&est.exponent),
        "drift_failure_rate": est.drift_failure_rate,
    });
    if let (Some(obj), Some(extra)) = (summary.as_object_mut(), extra.as_object()) {
        for (k, v) in extra {
            obj.insert(k.clone(), v.clone());
        }
    }
    Ok(vec![
        csv_artifact(
            &format!("correlation{suffix}.csv"),
            &["t", "c", "stderr"],
            &rows,
        ),
        json_artifact(&format!("summary{suffix}.json"), &summary)?,
    ])
}

fn run_c_of_t(cfg: &Config) -> Result<Vec<Artifact>> {
    let mut artifacts = Vec::new();
    for (l, suffix) in size_scan(cfg) {
        let mut disorder = cfg.disorder;
        disorder.l = l;
        let (est, extra) = match cfg.model {
            Model::Classical => {
                let spec = ClassicalCorrelationSpec {
                    disorder,
                    g0: cfg.chain.g0,
                    g: cfg.chain.g,
                    beta: cfg.chain.beta,
                    ensemble: cfg.runtime.ensemble,
                    t_max: cfg.runtime.t_max,
                    dt: cfg.runtime.dt,
                    n_checkpoints: cfg.runtime.n_checkpoints,
                    integrator: cfg.runtime.integrator,
                    burn_in: None,
                    drift_tolerance: cfg.runtime.drift_tolerance,
                };
                let est = estimate_classical(&spec)?;
                if let Some(rate) = est.drift_failure_rate {
                    if rate > 0.05 {
                        return Err(Error::Integration(format!(
                            "energy drift budget blown on {:.1}% of the ensemble \
                             (limit 5%); shrink dt or raise the integrator order",
                            rate * 100.0
                        )));
                    }
                }
                let extra = serde_json::json!({
                    "model": "classical", "l": l,
                    "g0": cfg.chain.g0, "g": cfg.chain.g, "beta": cfg.chain.beta,
                    "seed": cfg.disorder.seed,
                });
                (est, extra)
            }
            Model::Quantum => {
                let spec = QuantumCorrelationSpec {
                    disorder,
                    j: cfg.quantum.j,
                    mu: cfg.quantum.mu,
                    ensemble: cfg.runtime.ensemble,
                    times: time_grid(&cfg.runtime),
                };
                let est = estimate_quantum(&spec)?;
                let extra = serde_json::json!({
                    "model": "quantum", "l": l,
                    "j": cfg.quantum.j, "mu": cfg.quantum.mu,
                    "seed": cfg.disorder.seed,
                });
                (est, extra)
            }
        };
        artifacts.extend(correlation_artifacts(&est, &suffix, extra)?);
    }
    Ok(artifacts)
}

fn read_series(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut ts = Vec::new();
    let mut vs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
            return Err(Error::Estimation(format!(
                "{}: line {} has fewer than two columns",
                path.display(),
                i + 1
            )));
        };
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(t), Ok(v)) => {
                ts.push(t);
                vs.push(v);
            }
            _ if i == 0 => continue, // header row
            _ => {
                return Err(Error::Estimation(format!(
                    "{}: line {} is not numeric",
                    path.display(),
                    i + 1
                )));
            }
        }
    }
    Ok((ts, vs))
}

fn run_exponent_fit(cfg: &Config) -> Result<Vec<Artifact>> {
    if let Some(input) = &cfg.exponent.input {
        let (ts, vs) = read_series(input)?;
        let t_max = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(t_max > 0.0) {
            return Err(Error::Estimation(format!(
                "{}: no positive times to fit",
                input.display()
            )));
        }
        let lo = cfg.exponent.t_lo.unwrap_or(t_max / 10.0);
        let hi = cfg.exponent.t_hi.unwrap_or(t_max);
        let fit = fit_exponent(&ts, &vs, lo, hi)?;
        let record = serde_json::json!({
            "input": input.display().to_string(),
            "exponent": fit.slope,
            "stderr": fit.slope_stderr,
            "amplitude": fit.intercept.exp(),
            "r2": fit.r2,
            "n_points": fit.n,
            "window": [lo, hi],
        });
        return Ok(vec![json_artifact("fit.json", &record)?]);
    }
    let ps = if cfg.exponent.p_list.is_empty() {
        vec![cfg.disorder.p]
    } else {
        cfg.exponent.p_list.clone()
    };
    let xis = if cfg.exponent.xi_list.is_empty() {
        vec![cfg.windows.xi]
    } else {
        cfg.exponent.xi_list.clone()
    };
    let mut rows = Vec::new();
    for &p in &ps {
        for &xi in &xis {
            let pred = predict_exponent(p, xi)?;
            rows.push(vec![
                Field::F(p),
                Field::F(xi),
                Field::F(pred.v),
                Field::F(pred.gamma),
                Field::F(pred.b1),
                Field::F(pred.b2),
                Field::F(pred.a_opt),
                Field::F(pred.threshold_p),
            ]);
        }
    }
    Ok(vec![csv_artifact(
        "prediction.csv",
        &["p", "xi", "v", "gamma", "b1", "b2", "a_opt", "threshold_p"],
        &rows,
    )])
}

fn run_decomposition_audit(cfg: &Config) -> Result<Vec<Artifact>> {
    let ell = cfg
        .audit
        .ell
        .or_else(|| cfg.runtime.ell_list.first().copied())
        .ok_or_else(|| Error::config("no window half-width: set audit.ell or runtime.ell_list"))?;
    let spec = DecompositionAuditSpec {
        disorder: cfg.disorder,
        g0: cfg.chain.g0,
        g: cfg.chain.g,
        beta: cfg.chain.beta,
        ell,
        options: cfg.windows.to_options(),
        t_max: cfg.runtime.t_max,
        dt: cfg.runtime.dt,
        n_checkpoints: cfg.runtime.n_checkpoints,
        integrator: cfg.runtime.integrator,
        gibbs_stream: cfg.audit.gibbs_stream,
        negate_right_spans: cfg.audit.negate_right_spans,
    };
    let audit = audit_current_decomposition(&spec)?;
    let series: Vec<Vec<Field>> = audit
        .times
        .iter()
        .zip(&audit.integrated_current)
        .zip(&audit.integrated_fluctuation)
        .zip(&audit.potential_change)
        .zip(&audit.residual)
        .map(|((((&t, &ij), &ifl), &dv), &r)| {
            vec![
                Field::F(t),
                Field::F(ij),
                Field::F(ifl),
                Field::F(dv),
                Field::F(r),
            ]
        })
        .collect();
    let interfaces: Vec<Vec<Field>> = audit
        .sites
        .iter()
        .zip(&audit.multiplicity)
        .map(|(&s, &m)| vec![Field::U(s as u64), Field::U(m as u64)])
        .collect();
    let weights: Vec<Vec<Field>> = audit
        .weights
        .iter()
        .enumerate()
        .map(|(y, &w)| vec![Field::U(y as u64), Field::I(w)])
        .collect();
    let summary = serde_json::json!({
        "ell": ell,
        "n_interfaces": audit.sites.len(),
        "max_residual": audit.max_residual,
        "negate_right_spans": cfg.audit.negate_right_spans,
    });
    Ok(vec![
        csv_artifact(
            "audit.csv",
            &[
                "t",
                "integrated_current",
                "integrated_fluctuation",
                "potential_change",
                "residual",
            ],
            &series,
        ),
        csv_artifact("interfaces.csv", &["site", "multiplicity"], &interfaces),
        csv_artifact("weights.csv", &["site", "weight"], &weights),
        json_artifact("summary.json", &summary)?,
    ])
}

fn run_ed_crosscheck(cfg: &Config) -> Result<Vec<Artifact>> {
    let mut artifacts = Vec::new();
    for (l, suffix) in size_scan(cfg) {
        let mut disorder = cfg.disorder;
        disorder.l = l;
        let real = sample_disorder(&disorder)?;
        let free = FreeChain::new(&real, cfg.quantum.j)?;
        let interacting = Interacting::new(&real, cfg.quantum.j, cfg.quantum.g)?;
        let times = time_grid(&cfg.runtime);
        let wick = free.current_correlation(cfg.quantum.mu, &times);
        let ed = interacting.current_correlation(cfg.quantum.mu, &times);
        let mut max_diff = 0.0f64;
        let rows: Vec<Vec<Field>> = times
            .iter()
            .zip(wick.iter().zip(&ed))
            .map(|(&t, (&w, &e))| {
                let diff = (w - e).abs();
                max_diff = max_diff.max(diff);
                vec![Field::F(t), Field::F(w), Field::F(e), Field::F(diff)]
            })
            .collect();
        artifacts.push(csv_artifact(
            &format!("crosscheck{suffix}.csv"),
            &["t", "wick", "ed", "abs_diff"],
            &rows,
        ));
        let summary = serde_json::json!({
            "l": l,
            "j": cfg.quantum.j,
            "mu": cfg.quantum.mu,
            "g": cfg.quantum.g,
            "max_abs_diff": max_diff,
            "sector_dims": interacting.sector_dims(),
            "note": "the wick column is the free closed form; it matches ed only at g = 0",
        });
        artifacts.push(json_artifact(&format!("summary{suffix}.json"), &summary)?);
    }
    Ok(artifacts)
}

fn run_experiment(cfg: &Config) -> Result<Vec<Artifact>> {
    match cfg.experiment {
        ExperimentKind::AndersonProfile => run_anderson_profile(cfg),
        ExperimentKind::SplittingDecay => run_splitting_decay(cfg),
        ExperimentKind::GriffithsGaps => run_griffiths_gaps(cfg),
        ExperimentKind::COfT => run_c_of_t(cfg),
        ExperimentKind::ExponentFit => run_exponent_fit(cfg),
        ExperimentKind::DecompositionAudit => run_decomposition_audit(cfg),
        ExperimentKind::EdCrosscheck => run_ed_crosscheck(cfg),
    }
}

// ---------------------------------------------------------------------------
// Run orchestration
// ---------------------------------------------------------------------------

/// Where a run landed and what it produced.
pub struct RunReport {
    pub dir: PathBuf,
    pub config_hash: String,
    pub artifacts: Vec<String>,
    pub wall_time_s: f64,
}

/// Execute a validated config: create the per-run directory, write the
/// resolved config snapshot, run the experiment, and emit artifacts plus a
/// manifest. On failure after the directory exists, an error.json record is
/// left behind and the error is returned.
pub fn execute(cfg: &Config, output_root: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let root = output_root.unwrap_or(cfg.runtime.output_dir.as_path());
    let dir = root.join(format!("{}-{}", cfg.experiment.name(), &hash[..8]));
    fs::create_dir_all(&dir)?;
    let snapshot = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("config not serializable: {e}")))?;
    fs::write(dir.join("config.toml"), snapshot)?;
    let started = Instant::now();
    match run_experiment(cfg) {
        Ok(artifacts) => {
            // a successful replay clears any stale failure marker
            let _ = fs::remove_file(dir.join("error.json"));
            for artifact in &artifacts {
                fs::write(dir.join(&artifact.name), &artifact.bytes)?;
            }
            let wall_time_s = started.elapsed().as_secs_f64();
            let names: Vec<String> = artifacts.iter().map(|a| a.name.clone()).collect();
            let member_seeds: Vec<u64> = (0..cfg.runtime.ensemble.min(16))
                .map(|m| rng::derive_seed(cfg.disorder.seed, m as u64, Stream::Member))
                .collect();
            let manifest = serde_json::json!({
                "experiment": cfg.experiment.name(),
                "config_hash": hash,
                "version": env!("CARGO_PKG_VERSION"),
                "wall_time_s": wall_time_s,
                "seeds": {
                    "base": cfg.disorder.seed,
                    "derived_members": member_seeds,
                    "note": "ensemble member m draws disorder from a stream derived \
                             from the base seed and m; the first entries are listed",
                },
                "artifacts": names,
            });
            let artifact = json_artifact("manifest.json", &manifest)?;
            fs::write(dir.join(&artifact.name), &artifact.bytes)?;
            Ok(RunReport {
                dir,
                config_hash: hash,
                artifacts: names,
                wall_time_s,
            })
        }
        Err(e) => {
            let record = serde_json::json!({
                "error": e.to_string(),
                "kind": e.kind(),
                "experiment": cfg.experiment.name(),
                "config_hash": hash,
            });
            if let Ok(artifact) = json_artifact("error.json", &record) {
                let _ = fs::write(dir.join(&artifact.name), &artifact.bytes);
            }
            Err(e)
        }
    }
}

// ---------------------------------------------------------------------------
// Command line surface
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct CommonOpts {
    /// TOML config file; every key has a default, so it may be omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the base RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core); also read from SPARSECHAIN_WORKERS
    #[arg(long)]
    workers: Option<usize>,
    /// Output root directory (overrides runtime.output_dir)
    #[arg(long)]
    output: Option<PathBuf>,
    /// key=value config overrides, e.g. p=0.5 ell=3 N=1000 quantum.g=0.2
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct RunOpts {
    /// Config file path, or an experiment name when overrides do the rest
    target: Option<String>,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a config file or overrides
    Run(RunOpts),
    /// Parse and validate a config, print the resolved form and its hash
    Validate(RunOpts),
    /// Eigenfunction correlator profile and localization length
    #[command(name = "anderson-profile")]
    AndersonProfile(CommonOpts),
    /// Decay of the splitting coefficients with window half-width
    #[command(name = "splitting-decay")]
    SplittingDecay(CommonOpts),
    /// Rare-region spacing statistics against the closed-form tail bounds
    #[command(name = "griffiths-gaps")]
    GriffithsGaps(CommonOpts),
    /// Integrated current correlation C(t), classical or quantum
    #[command(name = "c-of-t")]
    COfT(CommonOpts),
    /// Transport exponent: closed-form prediction or a fit to a series
    #[command(name = "exponent-fit")]
    ExponentFit(CommonOpts),
    /// Interface-current decomposition audit along one trajectory
    #[command(name = "decomposition-audit")]
    DecompositionAudit(CommonOpts),
    /// Free-fermion closed form against exact diagonalization at small L
    #[command(name = "ed-crosscheck")]
    EdCrosscheck(CommonOpts),
}

/// Numerical laboratory for disordered chains with sparse anharmonic spots.
#[derive(Parser, Debug)]
#[command(name = "sparsechain", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Assemble the final config from a file, command line overrides, and an
/// experiment forced by the chosen subcommand.
fn resolve_config(
    forced: Option<ExperimentKind>,
    target: Option<&str>,
    common: &CommonOpts,
) -> Result<Config> {
    let mut config_path = common.config.clone();
    let mut forced = forced;
    let mut leading_overrides: Vec<String> = Vec::new();
    if let Some(t) = target {
        if t.contains('=') {
            leading_overrides.push(t.to_string());
        } else if let Some(kind) = ExperimentKind::from_name(t) {
            forced = Some(kind);
        } else if Path::new(t).exists() || t.ends_with(".toml") {
            if config_path.is_some() {
                return Err(Error::config(
                    "config file given both positionally and via --config",
                ));
            }
            config_path = Some(PathBuf::from(t));
        } else {
            let known: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            return Err(Error::config(format!(
                "'{t}' is neither a config file nor an experiment; known experiments: {}",
                known.join(", ")
            )));
        }
    }
    let mut table = load_table(config_path.as_deref())?;
    for spec in leading_overrides.iter().chain(&common.overrides) {
        apply_override(&mut table, spec)?;
    }
    if let Some(kind) = forced {
        table.insert(
            "experiment".to_string(),
            toml::Value::String(kind.name().to_string()),
        );
    }
    // single-model experiments imply their model unless the user names one
    if !table.contains_key("model") {
        let named = table
            .get("experiment")
            .and_then(|v| v.as_str())
            .and_then(ExperimentKind::from_name);
        if let Some(model) = named.and_then(ExperimentKind::required_model) {
            let tag = match model {
                Model::Classical => "classical",
                Model::Quantum => "quantum",
            };
            table.insert("model".to_string(), toml::Value::String(tag.to_string()));
        }
    }
    if let Some(seed) = common.seed {
        set_path(
            &mut table,
            "disorder.seed",
            toml::Value::Integer(seed as i64),
        )?;
    }
    if let Some(out) = &common.output {
        set_path(
            &mut table,
            "runtime.output_dir",
            toml::Value::String(out.display().to_string()),
        )?;
    }
    config_from_table(table)
}

/// Worker count precedence: flag, then environment, then config (0 = auto).
fn resolve_workers(flag: Option<usize>, cfg: &Config) -> usize {
    flag.or_else(|| {
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(cfg.runtime.workers)
}

fn init_worker_pool(workers: usize) {
    if workers > 0 {
        // a second initialization in the same process keeps the first pool,
        // which never changes results, only parallelism
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

/// Write to stdout without panicking when the pipe closes early (head, less).
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn run_and_report(
    forced: Option<ExperimentKind>,
    target: Option<&str>,
    common: &CommonOpts,
) -> Result<()> {
    let cfg = resolve_config(forced, target, common)?;
    init_worker_pool(resolve_workers(common.workers, &cfg));
    let report = execute(&cfg, common.output.as_deref())?;
    let mut out = format!("{}\n", report.dir.display());
    for name in &report.artifacts {
        out.push_str(&format!("  {name}\n"));
    }
    out.push_str(&format!("done in {:.2} s\n", report.wall_time_s));
    emit(&out);
    Ok(())
}

fn validate_and_print(target: Option<&str>, common: &CommonOpts) -> Result<()> {
    let cfg = resolve_config(None, target, common)?;
    let hash = config_hash(&cfg)?;
    let snapshot = toml::to_string_pretty(&cfg)
        .map_err(|e| Error::Config(format!("config not serializable: {e}")))?;
    let dir = cfg
        .runtime
        .output_dir
        .join(format!("{}-{}", cfg.experiment.name(), &hash[..8]));
    emit(&format!(
        "{snapshot}# config hash: {hash}\n# run directory: {}\n",
        dir.display()
    ));
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Run(opts) => run_and_report(None, opts.target.as_deref(), &opts.common),
        Command::Validate(opts) => validate_and_print(opts.target.as_deref(), &opts.common),
        Command::AndersonProfile(c) => {
            run_and_report(Some(ExperimentKind::AndersonProfile), None, c)
        }
        Command::SplittingDecay(c) => run_and_report(Some(ExperimentKind::SplittingDecay), None, c),
        Command::GriffithsGaps(c) => run_and_report(Some(ExperimentKind::GriffithsGaps), None, c),
        Command::COfT(c) => run_and_report(Some(ExperimentKind::COfT), None, c),
        Command::ExponentFit(c) => run_and_report(Some(ExperimentKind::ExponentFit), None, c),
        Command::DecompositionAudit(c) => {
            run_and_report(Some(ExperimentKind::DecompositionAudit), None, c)
        }
        Command::EdCrosscheck(c) => run_and_report(Some(ExperimentKind::EdCrosscheck), None, c),
    }
}

/// Entry point used by the binary. Errors go to stderr twice: once as a
/// human-readable line and once as a machine-readable JSON record.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!(
                "{}",
                serde_json::json!({"error": e.to_string(), "kind": e.kind()})
            );
            ExitCode::FAILURE
        }
    }
}
