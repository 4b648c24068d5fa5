//! Config-driven experiment runner.
//!
//! An experiment is a single TOML document (schema-versioned, unknown keys
//! rejected) naming a model, a time grid, pruning/tolerance parameters, and
//! output paths. Running it enumerates the history tree, builds the
//! decoherence matrix, classifies every history by the configured
//! interference measure, runs the structural checks, and writes three
//! outputs:
//!
//! - `histories.tsv` — one row per enumerated history;
//! - `decoherence.tsv` — the decoherence functional as (row, col, re, im);
//! - `summary.json` — configuration hash, check results, metadata.
//!
//! Floating-point values are written with 17 significant digits so every
//! f64 round-trips losslessly. Outputs are byte-identical for identical
//! (config, seed) at any thread count; timing is reported on stderr only.

use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::event_algebra::{cell_projectors, pointer_projectors, CellPartition, CoarseningMap, SampleSpace};
use crate::histories::{
    additivity_check, branching_structure_check, consistency_check, decoherence_matrix,
    weight_sum_identity, DecoherenceMatrix, HistorySpace, ResourceCaps, DEFAULT_ZERO_TOL,
};
use crate::hilbert::{LinearOperator, StateVector};
use crate::interference::{classify_causal, inequality_audit, Measure};
use crate::models::{
    nonorthogonal_probe, ChainStages, LatticeModel, MeasurementChainModel, ProbeReport,
    SpinEnvModel,
};

/// Version of the config schema this build understands.
pub const SCHEMA_VERSION: u32 = 1;

fn default_epsilon() -> f64 {
    1e-9
}

fn default_zero_tol() -> f64 {
    DEFAULT_ZERO_TOL
}

/// Top-level experiment description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// t₀ < t₁ < … < t_n. The chain model fixes its own stage times and the
    /// probe model has none; both require this to be omitted.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub prune_below: f64,
    /// Consistency tolerance ε. There is no physically endorsed default;
    /// the fallback 1e−9 is flagged in the report notes.
    #[serde(default = "default_epsilon")]
    pub consistency_epsilon: f64,
    #[serde(default = "default_zero_tol")]
    pub branching_zero_tol: f64,
    pub model: ModelConfig,
    /// Shared sample-space override applied at every time slice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_space: Option<SampleSpaceConfig>,
    /// Per-time sample-space overrides (one entry per slice).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_spaces: Option<Vec<SampleSpaceConfig>>,
    #[serde(default)]
    pub causal: CausalConfig,
    #[serde(default)]
    pub caps: CapsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Model selector plus the union of per-model parameters; fields that do
/// not belong to the selected type are rejected during validation.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "type")]
    pub kind: String,
    // spin_env
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_env: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couplings: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub with_env_coarse: Option<bool>,
    // lattice
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hopping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointer_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet_width: Option<f64>,
    // chain
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer_dim: Option<usize>,
    // probe
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_overlap: Option<[f64; 2]>,
    // explicit
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<[f64; 2]>>,
}

/// A serializable sample-space description: sharp cells over basis indices,
/// or Gaussian pointer projectors on a ring lattice.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpaceConfig {
    #[serde(rename = "type")]
    pub kind: String,
    pub partition: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl SampleSpaceConfig {
    fn build(&self, dim: usize) -> Result<SampleSpace> {
        match self.kind.as_str() {
            "cells" => {
                if self.lattice.is_some() || self.sigma.is_some() {
                    return Err(Error::Config(
                        "sample space of type cells takes only a partition".into(),
                    ));
                }
                cell_projectors(&CellPartition::new(dim, self.partition.clone())?)
            }
            "pointer" => {
                let lattice = self
                    .lattice
                    .ok_or_else(|| Error::Config("pointer sample space needs `lattice`".into()))?;
                let sigma = self
                    .sigma
                    .ok_or_else(|| Error::Config("pointer sample space needs `sigma`".into()))?;
                if lattice != dim {
                    return Err(Error::Config(format!(
                        "pointer lattice {lattice} does not match model dimension {dim}"
                    )));
                }
                pointer_projectors(lattice, sigma, &CellPartition::new(dim, self.partition.clone())?)
            }
            other => Err(Error::Config(format!(
                "unknown sample space type {other}, expected cells or pointer"
            ))),
        }
    }
}

fn default_measure() -> Measure {
    Measure::I3
}

fn default_threshold() -> f64 {
    1e-3
}

/// Classification parameters. Both defaults are arbitrary (the measures are
/// reported raw precisely because no single choice is endorsed); they are
/// echoed into the report notes whenever used.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalConfig {
    #[serde(default = "default_measure")]
    pub measure: Measure,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for CausalConfig {
    fn default() -> Self {
        Self { measure: default_measure(), threshold: default_threshold() }
    }
}

fn default_max_records() -> u64 {
    1 << 20
}

fn default_max_amplitudes() -> u64 {
    1 << 26
}

fn default_max_gram() -> u64 {
    512
}

/// Resource limits.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsConfig {
    #[serde(default = "default_max_records")]
    pub max_records: u64,
    #[serde(default = "default_max_amplitudes")]
    pub max_amplitudes: u64,
    /// Largest history count for which the dense decoherence matrix (and
    /// the pairwise checks built on it) will be materialized.
    #[serde(default = "default_max_gram")]
    pub max_gram_histories: u64,
}

impl Default for CapsConfig {
    fn default() -> Self {
        Self {
            max_records: default_max_records(),
            max_amplitudes: default_max_amplitudes(),
            max_gram_histories: default_max_gram(),
        }
    }
}

fn default_histories_name() -> String {
    "histories.tsv".into()
}

fn default_decoherence_name() -> String {
    "decoherence.tsv".into()
}

fn default_summary_name() -> String {
    "summary.json".into()
}

/// Output file names, resolved relative to the run's output directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_histories_name")]
    pub histories: String,
    #[serde(default = "default_decoherence_name")]
    pub decoherence: String,
    #[serde(default = "default_summary_name")]
    pub summary: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            histories: default_histories_name(),
            decoherence: default_decoherence_name(),
            summary: default_summary_name(),
        }
    }
}

impl ExperimentConfig {
    /// Semantic validation beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} not supported (this build understands {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("times must be strictly increasing".into()));
        }
        if self.prune_below < 0.0 {
            return Err(Error::Config("prune_below must be >= 0".into()));
        }
        if self.consistency_epsilon < 0.0 || self.branching_zero_tol < 0.0 {
            return Err(Error::Config("tolerances must be >= 0".into()));
        }
        if self.causal.threshold < 0.0 {
            return Err(Error::Config("causal.threshold must be >= 0".into()));
        }
        if self.caps.max_records == 0 || self.caps.max_amplitudes == 0 || self.caps.max_gram_histories == 0
        {
            return Err(Error::Config("caps must be positive".into()));
        }
        if self.sample_space.is_some() && self.sample_spaces.is_some() {
            return Err(Error::Config(
                "give either sample_space (shared) or sample_spaces (per time), not both".into(),
            ));
        }
        self.model.validate()?;
        Ok(())
    }

    /// Canonical re-serialization used for hashing.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let text = self.canonical_toml()?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        let allowed: &[&str] = match self.kind.as_str() {
            "spin_env" => &["n_env", "couplings", "coupling_range", "with_env_coarse"],
            "lattice" => &["sites", "hopping", "cells", "pointer_sigma", "packet_width"],
            "chain" => &["amplitudes", "stages", "device_dim", "observer_dim"],
            "probe" => &["epsilon", "device_overlap"],
            "explicit" => &["hamiltonian", "initial_state"],
            other => {
                return Err(Error::Config(format!(
                    "unknown model type {other}; expected spin_env, lattice, chain, probe, or explicit"
                )))
            }
        };
        let present: &[(&str, bool)] = &[
            ("n_env", self.n_env.is_some()),
            ("couplings", self.couplings.is_some()),
            ("coupling_range", self.coupling_range.is_some()),
            ("with_env_coarse", self.with_env_coarse.is_some()),
            ("sites", self.sites.is_some()),
            ("hopping", self.hopping.is_some()),
            ("cells", self.cells.is_some()),
            ("pointer_sigma", self.pointer_sigma.is_some()),
            ("packet_width", self.packet_width.is_some()),
            ("amplitudes", self.amplitudes.is_some()),
            ("stages", self.stages.is_some()),
            ("device_dim", self.device_dim.is_some()),
            ("observer_dim", self.observer_dim.is_some()),
            ("epsilon", self.epsilon.is_some()),
            ("device_overlap", self.device_overlap.is_some()),
            ("hamiltonian", self.hamiltonian.is_some()),
            ("initial_state", self.initial_state.is_some()),
        ];
        for (name, set) in present {
            if *set && !allowed.contains(name) {
                return Err(Error::Config(format!(
                    "field {name} does not apply to model type {}",
                    self.kind
                )));
            }
        }
        Ok(())
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses, and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn complex(pair: [f64; 2]) -> C64 {
    C64::new(pair[0], pair[1])
}

/// Model-specific diagnostics carried into the summary.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ModelDiagnostics {
    /// ∣⟨E₀(t_n)∣E₁(t_n)⟩∣ for the spin-environment model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env_overlap_final: Option<f64>,
}

enum BuiltModel {
    History(Box<HistorySpace>, ModelDiagnostics),
    Probe(ProbeReport),
}

fn require<T: Clone>(field: &Option<T>, name: &str, kind: &str) -> Result<T> {
    field
        .clone()
        .ok_or_else(|| Error::Config(format!("model type {kind} requires field {name}")))
}

fn build_model(cfg: &ExperimentConfig) -> Result<BuiltModel> {
    let m = &cfg.model;
    match m.kind.as_str() {
        "probe" => {
            if !cfg.times.is_empty() {
                return Err(Error::Config("probe model takes no times".into()));
            }
            if cfg.sample_space.is_some() || cfg.sample_spaces.is_some() {
                return Err(Error::Config("probe model takes no sample spaces".into()));
            }
            let report = nonorthogonal_probe(
                require(&m.epsilon, "epsilon", "probe")?,
                complex(require(&m.device_overlap, "device_overlap", "probe")?),
            )?;
            Ok(BuiltModel::Probe(report))
        }
        "spin_env" => {
            require_times(cfg)?;
            let n_env = require(&m.n_env, "n_env", "spin_env")?;
            let model = match (&m.couplings, &m.coupling_range) {
                (Some(gs), None) => SpinEnvModel::new(n_env, gs.clone())?,
                (None, Some([lo, hi])) => SpinEnvModel::from_seed(n_env, *lo, *hi, cfg.seed)?,
                (Some(_), Some(_)) => {
                    return Err(Error::Config(
                        "give either couplings or coupling_range, not both".into(),
                    ))
                }
                (None, None) => {
                    return Err(Error::Config(
                        "spin_env needs couplings or coupling_range".into(),
                    ))
                }
            };
            let with_env_coarse = m.with_env_coarse.unwrap_or(true);
            let space = model.history_space(&cfg.times, with_env_coarse)?;
            let space = apply_space_overrides(cfg, space)?;
            let t_final = *cfg.times.last().expect("times checked nonempty");
            let diag = ModelDiagnostics {
                env_overlap_final: Some(model.env_overlap(t_final)?.norm()),
            };
            Ok(BuiltModel::History(Box::new(space), diag))
        }
        "lattice" => {
            require_times(cfg)?;
            let sites = require(&m.sites, "sites", "lattice")?;
            let hopping = require(&m.hopping, "hopping", "lattice")?;
            let cells = require(&m.cells, "cells", "lattice")?;
            let partition = CellPartition::new(sites, cells)?;
            let mut model = LatticeModel::new(sites, hopping, partition, m.pointer_sigma)?;
            if let Some(w) = m.packet_width {
                model = model.with_packet_width(w)?;
            }
            let space = model.history_space(&cfg.times)?;
            Ok(BuiltModel::History(
                Box::new(apply_space_overrides(cfg, space)?),
                ModelDiagnostics::default(),
            ))
        }
        "chain" => {
            let amplitudes: Vec<C64> = require(&m.amplitudes, "amplitudes", "chain")?
                .into_iter()
                .map(complex)
                .collect();
            let stages = match m.stages.as_deref().unwrap_or("device") {
                "device" => ChainStages::Device,
                "device_observer" => ChainStages::DeviceObserver,
                other => {
                    return Err(Error::Config(format!(
                        "unknown stages {other}; expected device or device_observer"
                    )))
                }
            };
            let d = amplitudes.len();
            let device_dim = m.device_dim.unwrap_or(d + 1);
            let observer_dim = match stages {
                ChainStages::Device => {
                    if m.observer_dim.is_some() {
                        return Err(Error::Config(
                            "observer_dim only applies with stages = \"device_observer\"".into(),
                        ));
                    }
                    None
                }
                ChainStages::DeviceObserver => Some(m.observer_dim.unwrap_or(d + 1)),
            };
            // stage times are intrinsic: the interactions complete at unit time
            let expected_times: &[f64] = match stages {
                ChainStages::Device => &[0.0, 1.0],
                ChainStages::DeviceObserver => &[0.0, 1.0, 2.0],
            };
            if !cfg.times.is_empty() && cfg.times != expected_times {
                return Err(Error::Config(format!(
                    "chain model fixes its stage times to {expected_times:?}; omit times or match them"
                )));
            }
            let model = MeasurementChainModel::new(d, device_dim, observer_dim)?;
            let space = model.history_space(&amplitudes, stages)?;
            Ok(BuiltModel::History(
                Box::new(apply_space_overrides(cfg, space)?),
                ModelDiagnostics::default(),
            ))
        }
        "explicit" => {
            require_times(cfg)?;
            let rows = require(&m.hamiltonian, "hamiltonian", "explicit")?;
            let h = LinearOperator::from_rows(
                &rows
                    .into_iter()
                    .map(|r| r.into_iter().map(complex).collect())
                    .collect::<Vec<Vec<C64>>>(),
            )?;
            let psi0 = StateVector::normalized(
                require(&m.initial_state, "initial_state", "explicit")?
                    .into_iter()
                    .map(complex)
                    .collect(),
            )?;
            let n = cfg.times.len() - 1;
            let spaces = resolve_spaces(cfg, h.dim(), n)?.ok_or_else(|| {
                Error::Config("explicit model needs sample_space or sample_spaces".into())
            })?;
            let space = HistorySpace::new(h, cfg.times.clone(), spaces, psi0)?;
            Ok(BuiltModel::History(Box::new(space), ModelDiagnostics::default()))
        }
        other => Err(Error::Config(format!("unknown model type {other}"))),
    }
}

fn require_times(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.times.len() < 2 {
        return Err(Error::Config(
            "times must list t0 and at least one later time".into(),
        ));
    }
    Ok(())
}

fn resolve_spaces(
    cfg: &ExperimentConfig,
    dim: usize,
    n: usize,
) -> Result<Option<Vec<SampleSpace>>> {
    if let Some(shared) = &cfg.sample_space {
        let space = shared.build(dim)?;
        return Ok(Some(vec![space; n]));
    }
    if let Some(per_time) = &cfg.sample_spaces {
        if per_time.len() != n {
            return Err(Error::Config(format!(
                "sample_spaces lists {} entries for {n} time slices",
                per_time.len()
            )));
        }
        return Ok(Some(
            per_time.iter().map(|s| s.build(dim)).collect::<Result<_>>()?,
        ));
    }
    Ok(None)
}

fn apply_space_overrides(cfg: &ExperimentConfig, space: HistorySpace) -> Result<HistorySpace> {
    match resolve_spaces(cfg, space.dim(), space.steps())? {
        None => Ok(space),
        Some(spaces) => HistorySpace::with_interval_generators(
            space.generators().to_vec(),
            space.times().to_vec(),
            spaces,
            space.initial_state().clone(),
        ),
    }
}

/// One row of the histories table.
#[derive(Clone, Debug)]
pub struct HistoryRow {
    pub history: String,
    pub weight: f64,
    /// `None` for undefined (zero-norm) histories.
    pub i1: Option<f64>,
    pub i2: Option<f64>,
    pub i3: Option<f64>,
    pub i4: Option<f64>,
    pub classification: &'static str,
}

/// Check results destined for the summary document.
#[derive(Clone, Debug, Serialize)]
pub struct ChecksSummary {
    pub consistency_epsilon: f64,
    pub consistent: bool,
    pub max_offdiag: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_pair: Option<(String, String)>,
    pub branching_zero_tol: f64,
    pub branching: bool,
    pub branching_violations: usize,
    /// Present only on full (unpruned) enumerations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_sum_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offdiag_sum_re: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub additivity_max_weight_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub additivity_max_vector_residual: Option<f64>,
    pub inequality_audit_pass: bool,
    pub inequality_worst_slack: f64,
}

/// Pruning audit carried into the summary.
#[derive(Clone, Debug, Serialize)]
pub struct PruningAudit {
    pub prune_below: f64,
    /// K₁⋯K_n · prune_below.
    pub discarded_weight_bound: f64,
    pub pruned_subtrees: usize,
    pub pruned_norm_sum: f64,
}

/// Probe results carried into the summary.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeSummary {
    pub target_overlap: f64,
    pub device_overlap_mag: f64,
    pub required_perturbed_overlap: f64,
    pub feasible: bool,
    pub constraint_residual: f64,
    pub expansion_magnitudes: (f64, f64),
}

impl From<&ProbeReport> for ProbeSummary {
    fn from(r: &ProbeReport) -> Self {
        Self {
            target_overlap: r.target_overlap,
            device_overlap_mag: r.device_overlap_mag,
            required_perturbed_overlap: r.required_perturbed_overlap,
            feasible: r.feasible,
            constraint_residual: r.constraint_residual,
            expansion_magnitudes: r.expansion_magnitudes,
        }
    }
}

/// Everything a run produced, in memory. Timing is kept here but never
/// serialized, so output files stay byte-identical across repeated runs.
#[derive(Debug)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub model_kind: String,
    pub rows: Vec<HistoryRow>,
    pub weight_sum: f64,
    pub causal_count: usize,
    pub noncausal_count: usize,
    pub undefined_count: usize,
    pub decoherence: Option<DecoherenceMatrix>,
    pub decoherence_labels: Vec<String>,
    pub checks: Option<ChecksSummary>,
    pub probe: Option<ProbeSummary>,
    pub pruning: Option<PruningAudit>,
    pub diagnostics: ModelDiagnostics,
    pub notes: Vec<String>,
    pub timing: std::time::Duration,
}

/// Runs one experiment sequentially.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_threaded(cfg, 1)
}

/// Runs one experiment, enumerating over `threads` workers. Thread count
/// is an execution detail, not an experiment parameter: it is excluded
/// from the config hash and all outputs are byte-identical at any value.
pub fn run_threaded(cfg: &ExperimentConfig, threads: usize) -> Result<RunReport> {
    if threads == 0 {
        return Err(Error::Usage("threads must be >= 1".into()));
    }
    cfg.validate()?;
    let started = Instant::now();
    let config_hash = cfg.hash()?;
    let mut notes = Vec::new();
    notes.push(format!(
        "classification measure {} and threshold {:.3e} are configuration choices; no measure or threshold is endorsed",
        cfg.causal.measure, cfg.causal.threshold
    ));
    notes.push(format!(
        "consistency epsilon {:.3e} is a configuration choice with no endorsed default",
        cfg.consistency_epsilon
    ));

    match build_model(cfg)? {
        BuiltModel::Probe(report) => Ok(RunReport {
            config: cfg.clone(),
            config_hash,
            model_kind: cfg.model.kind.clone(),
            rows: Vec::new(),
            weight_sum: 0.0,
            causal_count: 0,
            noncausal_count: 0,
            undefined_count: 0,
            decoherence: None,
            decoherence_labels: Vec::new(),
            checks: None,
            probe: Some(ProbeSummary::from(&report)),
            pruning: None,
            diagnostics: ModelDiagnostics::default(),
            notes,
            timing: started.elapsed(),
        }),
        BuiltModel::History(space, diagnostics) => {
            let caps = ResourceCaps {
                max_records: cfg.caps.max_records,
                max_amplitudes: cfg.caps.max_amplitudes,
            };
            let outcome = space.enumerate_audited(cfg.prune_below, &caps, threads)?;
            let records = &outcome.records;
            if records.is_empty() {
                return Err(Error::Usage(format!(
                    "prune_below {:.3e} discarded every history",
                    cfg.prune_below
                )));
            }
            if records.len() as u64 > cfg.caps.max_gram_histories {
                return Err(Error::ResourceCap {
                    what: format!(
                        "decoherence matrix over {} histories (raise caps.max_gram_histories)",
                        records.len()
                    ),
                    cap: cfg.caps.max_gram_histories,
                });
            }
            let d = decoherence_matrix(records)?;
            let interference =
                classify_causal(records, cfg.causal.measure, cfg.causal.threshold)?;
            let audit = inequality_audit(&interference);
            let consistency = consistency_check(&d, cfg.consistency_epsilon);
            let branching = branching_structure_check(records, cfg.branching_zero_tol);

            let full_enumeration = cfg.prune_below == 0.0;
            let (weight_sum_residual, offdiag_sum_re) = if full_enumeration {
                let id = weight_sum_identity(records, &d)?;
                (Some(id.residual()), Some(id.offdiag_sum.re))
            } else {
                notes.push(
                    "weight-sum and additivity identities need a full enumeration; skipped because prune_below > 0"
                        .to_string(),
                );
                (None, None)
            };
            let (add_weight, add_vector) = if full_enumeration {
                let maps: Vec<CoarseningMap> = space
                    .spaces()
                    .iter()
                    .map(|s| CoarseningMap::merge_all(s.labels(), "all"))
                    .collect();
                let add = additivity_check(&space, &maps, records)?;
                (Some(add.max_weight_residual), Some(add.max_vector_residual))
            } else {
                (None, None)
            };

            let mut weight_sum = 0.0;
            let mut rows = Vec::with_capacity(records.len());
            for (i, record) in records.iter().enumerate() {
                weight_sum += record.weight();
                let entry = &interference.entries[i];
                let classification = if interference.causal_set.binary_search(&i).is_ok() {
                    "causal"
                } else if interference.noncausal_set.binary_search(&i).is_ok() {
                    "noncausal"
                } else {
                    "undefined"
                };
                rows.push(HistoryRow {
                    history: space.label_string(record.indices()),
                    weight: record.weight(),
                    i1: entry.measures.as_ref().map(|m| m.i1),
                    i2: entry.measures.as_ref().map(|m| m.i2),
                    i3: entry.measures.as_ref().map(|m| m.i3),
                    i4: entry.measures.as_ref().map(|m| m.i4),
                    classification,
                });
            }

            let checks = ChecksSummary {
                consistency_epsilon: cfg.consistency_epsilon,
                consistent: consistency.consistent,
                max_offdiag: consistency.max_offdiag,
                worst_pair: consistency
                    .worst_pair
                    .map(|(a, b)| (space.label_string(&a), space.label_string(&b))),
                branching_zero_tol: cfg.branching_zero_tol,
                branching: branching.branching,
                branching_violations: branching.violations.len(),
                weight_sum_residual,
                offdiag_sum_re,
                additivity_max_weight_residual: add_weight,
                additivity_max_vector_residual: add_vector,
                inequality_audit_pass: audit.pass,
                inequality_worst_slack: audit.worst_slack,
            };
            let decoherence_labels =
                records.iter().map(|r| space.label_string(r.indices())).collect();
            Ok(RunReport {
                config: cfg.clone(),
                config_hash,
                model_kind: cfg.model.kind.clone(),
                rows,
                weight_sum,
                causal_count: interference.causal_set.len(),
                noncausal_count: interference.noncausal_set.len(),
                undefined_count: interference.undefined_set.len(),
                decoherence: Some(d),
                decoherence_labels,
                checks: Some(checks),
                probe: None,
                pruning: Some(PruningAudit {
                    prune_below: cfg.prune_below,
                    discarded_weight_bound: outcome.prune_bound,
                    pruned_subtrees: outcome.pruned_subtrees,
                    pruned_norm_sum: outcome.pruned_norm_sum,
                }),
                diagnostics,
                notes,
                timing: started.elapsed(),
            })
        }
    }
}

/// A float formatted with 17 significant digits (lossless f64 round-trip).
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format_float(v),
        None => "NaN".into(),
    }
}

/// Renders the histories table.
pub fn histories_table(report: &RunReport) -> String {
    let mut out = String::from("history\tweight\ti1\ti2\ti3\ti4\tclassification\tmeasure\tthreshold\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.history,
            format_float(row.weight),
            format_opt(row.i1),
            format_opt(row.i2),
            format_opt(row.i3),
            format_opt(row.i4),
            row.classification,
            report.config.causal.measure,
            format_float(report.config.causal.threshold),
        ));
    }
    out
}

/// Renders the decoherence-matrix table as (row, col, re, im).
pub fn decoherence_table(report: &RunReport) -> String {
    let mut out = String::from("row\tcol\tre\tim\n");
    if let Some(d) = &report.decoherence {
        for a in 0..d.len() {
            for b in 0..d.len() {
                let z = d.entry(a, b);
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    report.decoherence_labels[a],
                    report.decoherence_labels[b],
                    format_float(z.re),
                    format_float(z.im),
                ));
            }
        }
    }
    out
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    schema_version: u32,
    tool_version: &'static str,
    config_hash: &'a str,
    model: &'a str,
    seed: u64,
    history_count: usize,
    weight_sum: f64,
    causal_measure: String,
    causal_threshold: f64,
    causal_count: usize,
    noncausal_count: usize,
    undefined_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    checks: Option<&'a ChecksSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probe: Option<&'a ProbeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pruning: Option<&'a PruningAudit>,
    diagnostics: &'a ModelDiagnostics,
    notes: &'a [String],
}

/// Renders the summary document (deterministic: no timing inside).
pub fn summary_json(report: &RunReport) -> Result<String> {
    let doc = SummaryDoc {
        schema_version: report.config.schema_version,
        tool_version: env!("CARGO_PKG_VERSION"),
        config_hash: &report.config_hash,
        model: &report.model_kind,
        seed: report.config.seed,
        history_count: report.rows.len(),
        weight_sum: report.weight_sum,
        causal_measure: report.config.causal.measure.to_string(),
        causal_threshold: report.config.causal.threshold,
        causal_count: report.causal_count,
        noncausal_count: report.noncausal_count,
        undefined_count: report.undefined_count,
        checks: report.checks.as_ref(),
        probe: report.probe.as_ref(),
        pruning: report.pruning.as_ref(),
        diagnostics: &report.diagnostics,
        notes: &report.notes,
    };
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Config(format!("cannot serialize summary: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Writes the three output files into `out_dir` (created if missing).
pub fn write_outputs(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let paths = [
        out_dir.join(&report.config.output.histories),
        out_dir.join(&report.config.output.decoherence),
        out_dir.join(&report.config.output.summary),
    ];
    std::fs::write(&paths[0], histories_table(report))?;
    std::fs::write(&paths[1], decoherence_table(report))?;
    std::fs::write(&paths[2], summary_json(report)?)?;
    Ok(paths.to_vec())
}

/// Parameters addressable by [`sweep`].
pub const SWEEPABLE: &[&str] = &[
    "seed",
    "prune_below",
    "consistency_epsilon",
    "branching_zero_tol",
    "threads",
    "causal.threshold",
    "model.n_env",
    "model.hopping",
    "model.pointer_sigma",
    "model.packet_width",
    "model.epsilon",
];

/// Returns a copy of `cfg` with one addressable parameter replaced.
pub fn set_parameter(cfg: &ExperimentConfig, name: &str, value: f64) -> Result<ExperimentConfig> {
    let mut out = cfg.clone();
    let as_usize = |v: f64, what: &str| -> Result<usize> {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Config(format!("{what} needs a non-negative integer, got {v}")));
        }
        Ok(v as usize)
    };
    match name {
        "seed" => out.seed = as_usize(value, "seed")? as u64,
        "prune_below" => out.prune_below = value,
        "consistency_epsilon" => out.consistency_epsilon = value,
        "branching_zero_tol" => out.branching_zero_tol = value,
        "threads" => out.threads = as_usize(value, "threads")?,
        "causal.threshold" => out.causal.threshold = value,
        "model.n_env" => out.model.n_env = Some(as_usize(value, "model.n_env")?),
        "model.hopping" => out.model.hopping = Some(value),
        "model.pointer_sigma" => out.model.pointer_sigma = Some(value),
        "model.packet_width" => out.model.packet_width = Some(value),
        "model.epsilon" => out.model.epsilon = Some(value),
        other => {
            return Err(Error::Config(format!(
                "parameter {other} is not sweepable; known parameters: {}",
                SWEEPABLE.join(", ")
            )))
        }
    }
    out.validate()?;
    Ok(out)
}

/// One aggregate row of a sweep.
#[derive(Clone, Debug)]
pub struct AggregateRow {
    pub parameter: String,
    pub value: f64,
    pub history_count: usize,
    pub weight_sum: f64,
    pub max_offdiag: Option<f64>,
    pub consistent: Option<bool>,
    pub branching: Option<bool>,
    pub causal_count: usize,
    pub noncausal_count: usize,
    pub undefined_count: usize,
    pub env_overlap_final: Option<f64>,
    pub probe_feasible: Option<bool>,
}

/// Result of a parameter sweep.
#[derive(Debug)]
pub struct SweepOutcome {
    pub runs: Vec<RunReport>,
    pub aggregate: Vec<AggregateRow>,
}

/// Runs the experiment once per value of `parameter`.
pub fn sweep(cfg: &ExperimentConfig, parameter: &str, values: &[f64]) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut runs = Vec::with_capacity(values.len());
    let mut aggregate = Vec::with_capacity(values.len());
    for &value in values {
        let run_cfg = set_parameter(cfg, parameter, value)?;
        let report = run(&run_cfg)?;
        aggregate.push(AggregateRow {
            parameter: parameter.to_string(),
            value,
            history_count: report.rows.len(),
            weight_sum: report.weight_sum,
            max_offdiag: report.checks.as_ref().map(|c| c.max_offdiag),
            consistent: report.checks.as_ref().map(|c| c.consistent),
            branching: report.checks.as_ref().map(|c| c.branching),
            causal_count: report.causal_count,
            noncausal_count: report.noncausal_count,
            undefined_count: report.undefined_count,
            env_overlap_final: report.diagnostics.env_overlap_final,
            probe_feasible: report.probe.as_ref().map(|p| p.feasible),
        });
        runs.push(report);
    }
    Ok(SweepOutcome { runs, aggregate })
}

fn format_opt_bool(b: Option<bool>) -> String {
    match b {
        Some(true) => "true".into(),
        Some(false) => "false".into(),
        None => "NA".into(),
    }
}

/// Renders the aggregate sweep table.
pub fn aggregate_table(outcome: &SweepOutcome) -> String {
    let mut out = String::from(
        "parameter\tvalue\thistories\tweight_sum\tmax_offdiag\tconsistent\tbranching\tcausal\tnoncausal\tundefined\tenv_overlap_final\tprobe_feasible\n",
    );
    for row in &outcome.aggregate {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.parameter,
            format_float(row.value),
            row.history_count,
            format_float(row.weight_sum),
            format_opt(row.max_offdiag),
            format_opt_bool(row.consistent),
            format_opt_bool(row.branching),
            row.causal_count,
            row.noncausal_count,
            row.undefined_count,
            format_opt(row.env_overlap_final),
            format_opt_bool(row.probe_feasible),
        ));
    }
    out
}

/// Writes per-value run outputs (`run_000/…`) plus `aggregate.tsv`.
pub fn write_sweep_outputs(outcome: &SweepOutcome, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for (i, report) in outcome.runs.iter().enumerate() {
        let sub = out_dir.join(format!("run_{i:03}"));
        paths.extend(write_outputs(report, &sub)?);
    }
    let aggregate_path = out_dir.join("aggregate.tsv");
    std::fs::write(&aggregate_path, aggregate_table(outcome))?;
    paths.push(aggregate_path);
    Ok(paths)
}
