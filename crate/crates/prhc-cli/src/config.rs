//! Experiment configuration: a TOML file mapped onto a [`Scenario`] plus study and output
//! settings. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use prhc::certify::IndexVariant;
use prhc::fem::{Bilinear, PdeData, TimeProfile};
use prhc::ocp::{CostWeights, SolverOptions};
use prhc::rom::PodOptions;
use prhc::setup::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub mesh: MeshSection,
    pub time: TimeSection,
    pub physics: PhysicsSection,
    pub cost: CostSection,
    pub actuators: ActuatorSection,
    pub rhc: RhcSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    /// Grid points per side, boundary included.
    pub nodes_per_side: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub final_time: f64,
    /// Grid points on `[0, final_time]`, both ends included.
    pub time_points: usize,
}

/// `[c, x, y, xy]` coefficients of `c + x X + y Y + xy X Y`.
pub type BilinearSpec = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSpec {
    AbsSin,
    Sin,
    One,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub diffusion: f64,
    pub reaction: BilinearSpec,
    pub reaction_varying: BilinearSpec,
    pub profile: ProfileSpec,
    pub velocity: [BilinearSpec; 2],
    /// Amplitude of `sin(pi x1) sin(pi x2)` in the initial state.
    pub initial_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub lambda: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutSpec {
    LShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorSection {
    pub layout: LayoutSpec,
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSpec {
    Mixed,
    FullReduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhcSection {
    pub sampling_time: f64,
    pub horizon: f64,
    pub performance_target: f64,
    pub index_variant: VariantSpec,
    pub max_basis: usize,
    pub energy: f64,
    #[serde(default = "default_max_updates")]
    pub max_updates: usize,
    #[serde(default)]
    pub validation: bool,
}

fn default_max_updates() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self { rel_tol: d.rel_tol, abs_tol: d.abs_tol, max_iter: d.max_iter, memory: d.memory }
    }
}

/// Sweep of the open-loop study: every horizon with every weight, one basis per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub horizons: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub dims: Vec<usize>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            horizons: vec![0.8, 1.0, 1.2],
            lambdas: vec![1.0, 1e-1, 1e-2, 1e-3],
            dims: (1..=60).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write the assembled matrices in MatrixMarket format.
    pub export_matrices: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), export_matrices: false }
    }
}

fn bilinear(c: BilinearSpec) -> Bilinear {
    Bilinear { c: c[0], x: c[1], y: c[2], xy: c[3] }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.scenario()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the canonical serialization without the output section; runs with
    /// equal hashes share every numerical setting.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputSection::default();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let p = &self.physics;
        let s = Scenario {
            nodes_per_side: self.mesh.nodes_per_side,
            pde: PdeData {
                diffusion: p.diffusion,
                reaction: bilinear(p.reaction),
                reaction_varying: bilinear(p.reaction_varying),
                profile: match p.profile {
                    ProfileSpec::AbsSin => TimeProfile::AbsSin,
                    ProfileSpec::Sin => TimeProfile::Sin,
                    ProfileSpec::One => TimeProfile::Constant(1.0),
                },
                velocity: [bilinear(p.velocity[0]), bilinear(p.velocity[1])],
            },
            actuator_area: self.actuators.area,
            initial_amplitude: p.initial_amplitude,
            final_time: self.time.final_time,
            time_points: self.time.time_points,
            horizon: self.rhc.horizon,
            sampling: self.rhc.sampling_time,
            cost: CostWeights { lambda: self.cost.lambda, beta: self.cost.beta },
            solver: SolverOptions {
                rel_tol: self.solver.rel_tol,
                abs_tol: self.solver.abs_tol,
                max_iter: self.solver.max_iter,
                memory: self.solver.memory,
                ..SolverOptions::default()
            },
            pod: PodOptions { max_dim: self.rhc.max_basis, energy: self.rhc.energy, ..Default::default() },
            gate: self.rhc.performance_target,
            max_updates: self.rhc.max_updates,
            variant: match self.rhc.index_variant {
                VariantSpec::Mixed => IndexVariant::Mixed,
                VariantSpec::FullReduced => IndexVariant::FullReduced,
            },
            validation: self.rhc.validation,
        };
        s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.mesh.nodes_per_side < 3 {
            return Err(ConfigError::Invalid("mesh needs at least three nodes per side".into()));
        }
        if !(self.rhc.energy > 0.0 && self.rhc.energy <= 1.0) || self.rhc.max_basis == 0 {
            return Err(ConfigError::Invalid("energy must lie in (0, 1] and the basis size be positive".into()));
        }
        if self.study.horizons.iter().chain(&self.study.lambdas).any(|v| !(*v > 0.0)) {
            return Err(ConfigError::Invalid("study horizons and weights must be positive".into()));
        }
        Ok(s)
    }
}

/// Resolved values written next to every output for audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub config_hash: String,
    pub tau: f64,
    pub sampling_steps: usize,
    pub sampling_time: f64,
    pub horizon_steps: usize,
    pub horizon: f64,
    pub coercivity: f64,
    pub shift: f64,
    pub input_norm: f64,
    pub dofs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig<'a> {
    pub resolved: Resolved,
    #[serde(flatten)]
    pub config: &'a ExperimentConfig,
}
