//! Experiment runner behind the `prhc` binary: open-loop error studies, full-order and
//! certified reduced closed loops, their comparison and the oracle suites.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use prhc::certify::Stability;
use prhc::dynamics::{FullModel, TimeGrid};
use prhc::fem::Discretization;
use prhc::ocp::solve;
use prhc::rhc::{compare, run_fom_rhc, run_rom_rhc, ClosedLoopResult, Comparison};
use prhc::study::{open_loop_errors, StudyRow};
use prhc::validate::{self, Suite, SuiteOptions, SuiteReport};

pub use config::{ConfigError, ExperimentConfig};
use config::{Resolved, ResolvedConfig};
use output::{
    decay_rows, inactive_actuators, read_run, write_controls, write_csv, write_json, write_trajectory, LogRow,
    OutputError, RunSummary,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerical(#[from] prhc::Error),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("{0}")]
    Failed(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(OutputError::Io(e))
    }
}

impl CliError {
    /// 2 for configuration problems, 1 for everything that went wrong numerically.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Fom,
    Rom,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Fom => "fom",
            Mode::Rom => "rom",
        }
    }
}

/// A loaded configuration with its assembled model.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub scenario: prhc::setup::Scenario,
    pub disc: Arc<Discretization>,
    pub out: PathBuf,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, out: Option<&Path>) -> Result<Self, CliError> {
        let scenario = config.scenario()?;
        let disc = Arc::new(scenario.discretization()?);
        let out = out.map_or_else(|| config.output.dir.clone(), Path::to_path_buf);
        Ok(Self { config, scenario, disc, out })
    }

    pub fn resolved(&self) -> Resolved {
        let s = &self.scenario;
        Resolved {
            config_hash: self.config.hash(),
            tau: s.tau(),
            sampling_steps: s.sampling_steps(),
            sampling_time: s.snapped_sampling(),
            horizon_steps: s.horizon_steps(),
            horizon: s.snapped_horizon(),
            coercivity: self.disc.coercivity(),
            shift: self.disc.shift(),
            input_norm: self.disc.input_norm(),
            dofs: self.disc.n_dofs(),
        }
    }

    /// Creates `dir` and writes the resolved configuration into it.
    fn prepare(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("resolved_config.json"), &ResolvedConfig { resolved: self.resolved(), config: &self.config })?;
        if self.config.output.export_matrices {
            self.disc.export_matrix_market(&dir.join("matrices"))?;
        }
        Ok(())
    }

    /// Value of the first open-loop problem from the initial state.
    pub fn initial_value(&self) -> Result<f64, CliError> {
        let s = &self.scenario;
        let grid = TimeGrid::new(s.tau(), 0, s.horizon_steps())?;
        let model = FullModel::new(self.disc.clone(), s.horizon_steps() + 2);
        let sol = solve(&model, &grid, &s.cost, &s.initial_state(&self.disc), None, None, &s.solver)?;
        if !sol.stats.converged {
            return Err(prhc::Error::NotConverged("first open-loop problem".into()).into());
        }
        Ok(sol.value)
    }
}

/// Output of one closed-loop command.
pub struct RhcRun {
    pub result: ClosedLoopResult,
    pub summary: RunSummary,
    pub dir: PathBuf,
}

/// Runs one closed loop and writes its logs to `<out>/<mode>`. An aborted reduced loop
/// still writes everything up to the abort before reporting the failure.
pub fn cmd_rhc(exp: &Experiment, mode: Mode) -> Result<RhcRun, CliError> {
    let dir = exp.out.join(mode.name());
    exp.prepare(&dir)?;
    let s = &exp.scenario;
    let cfg = s.rhc_config();
    let y0 = s.initial_state(&exp.disc);
    let result = match mode {
        Mode::Fom => run_fom_rhc(&cfg, exp.disc.clone(), &y0)?,
        Mode::Rom => run_rom_rhc(&cfg, exp.disc.clone(), &y0)?,
    };
    let initial_value = match (mode, result.records.first()) {
        (Mode::Fom, Some(r)) => r.value,
        _ => exp.initial_value()?,
    };
    let stats = result.index_stats();
    let summary = RunSummary {
        mode: mode.name().into(),
        config_hash: exp.config.hash(),
        seed: exp.config.seed,
        completed: result.is_complete(),
        aborted_at_step: match result.outcome {
            prhc::rhc::Outcome::Completed => None,
            prhc::rhc::Outcome::Aborted { step, .. } => Some(step),
        },
        total_cost: result.total_cost,
        initial_norm: exp.disc.h_norm(result.states.first()),
        final_norm: exp.disc.h_norm(result.states.last()),
        decay_rate: result.decay_rate(&exp.disc),
        initial_value,
        performance_target: s.gate,
        index_min: stats.map(|v| v.0),
        index_mean: stats.map(|v| v.1),
        index_max: stats.map(|v| v.2),
        inactive_actuators: inactive_actuators(&result.control),
        fom_gradient_evals: result.counters.fom_gradient_evals,
        rom_gradient_evals: result.counters.rom_gradient_evals,
        validation_gradient_evals: result.counters.validation_gradient_evals,
        model_updates: result.counters.model_updates,
        final_dim: result.final_dim,
        wall_seconds: result.counters.wall.as_secs_f64(),
    };
    write_csv(&dir.join("rhc_log.csv"), "rhc_log", result.records.iter().map(LogRow::from))?;
    write_csv(&dir.join("decay.csv"), "decay", decay_rows(&exp.disc, &s.cost, &result))?;
    write_controls(&dir.join("controls.csv"), &result.control, result.tau)?;
    write_trajectory(&dir.join("trajectory.bin"), &result)?;
    write_json(&dir.join("summary.json"), &summary)?;
    if let prhc::rhc::Outcome::Aborted { step, updates } = result.outcome {
        return Err(prhc::Error::UpdateBudgetExhausted { step, updates }.into());
    }
    Ok(RhcRun { result, summary, dir })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub relative_cost_error: f64,
    pub relative_control_error: f64,
    pub relative_state_error: f64,
    pub relative_index_error: Option<f64>,
    pub speed_up: f64,
    pub gradient_ratio: f64,
    pub reduced_total_cost: f64,
    pub full_total_cost: f64,
    pub model_updates: usize,
    pub final_dim: usize,
}

/// Compares the reduced run in `<out>/rom` against the full-order run in `<out>/fom`.
pub fn cmd_compare(exp: &Experiment) -> Result<ComparisonReport, CliError> {
    let (fs, full) = read_run(&exp.out.join("fom"))?;
    let (rs, reduced) = read_run(&exp.out.join("rom"))?;
    let hash = exp.config.hash();
    if fs.config_hash != hash || rs.config_hash != hash {
        return Err(ConfigError::Invalid(format!(
            "runs in {} were produced with other settings (hashes {} and {}, expected {hash})",
            exp.out.display(),
            fs.config_hash,
            rs.config_hash
        ))
        .into());
    }
    let c: Comparison = compare(&exp.disc, &reduced, &full);
    let report = ComparisonReport {
        config_hash: hash,
        relative_cost_error: c.cost,
        relative_control_error: c.control,
        relative_state_error: c.state,
        relative_index_error: c.index,
        speed_up: c.speed_up,
        gradient_ratio: c.gradient_ratio,
        reduced_total_cost: reduced.total_cost,
        full_total_cost: full.total_cost,
        model_updates: rs.model_updates,
        final_dim: rs.final_dim,
    };
    write_json(&exp.out.join("comparison.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct StudyCsvRow {
    horizon: f64,
    lambda: f64,
    r: usize,
    e_value: f64,
    delta_value: f64,
    effectivity: f64,
}

impl From<&StudyRow> for StudyCsvRow {
    fn from(r: &StudyRow) -> Self {
        Self {
            horizon: r.horizon,
            lambda: r.lambda,
            r: r.dim,
            e_value: r.error,
            delta_value: r.bound,
            effectivity: r.effectivity,
        }
    }
}

type CellResult = Result<Vec<StudyRow>, CliError>;

/// Open-loop error study over every (horizon, weight) cell. Cells run on `threads`
/// workers, each writing its own subdirectory; the aggregate keeps the sweep order.
pub fn cmd_openloop_study(exp: &Experiment, threads: usize) -> Result<Vec<StudyRow>, CliError> {
    let root = exp.out.join("openloop");
    exp.prepare(&root)?;
    let s = &exp.scenario;
    let study = &exp.config.study;
    let cells: Vec<(f64, f64)> =
        study.horizons.iter().flat_map(|&h| study.lambdas.iter().map(move |&l| (h, l))).collect();
    let results: Mutex<Vec<Option<CellResult>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let y0 = s.initial_state(&exp.disc);
    let run_cell = |(horizon, lambda): (f64, f64)| -> Result<Vec<StudyRow>, CliError> {
        let steps = ((horizon / s.tau()).round() as usize).max(1);
        let weights = prhc::ocp::CostWeights { lambda, ..s.cost };
        let rows = open_loop_errors(exp.disc.clone(), &y0, s.tau(), steps, weights, &s.solver, &study.dims)?;
        let dir = root.join(format!("cell_T{horizon}_lambda{lambda:e}"));
        std::fs::create_dir_all(&dir)?;
        write_csv(&dir.join("errors.csv"), "openloop", rows.iter().map(StudyCsvRow::from))?;
        Ok(rows)
    };
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&cell) = cells.get(i) else { break };
                let r = run_cell(cell);
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let mut all = Vec::new();
    for (cell, r) in cells.iter().zip(results.into_inner().expect("no worker panicked")) {
        match r {
            Some(Ok(rows)) => all.extend(rows),
            Some(Err(e)) => return Err(CliError::Failed(format!("cell (T {}, lambda {}): {e}", cell.0, cell.1))),
            None => return Err(CliError::Failed(format!("cell (T {}, lambda {}) did not run", cell.0, cell.1))),
        }
    }
    write_csv(&root.join("openloop_study.csv"), "openloop", all.iter().map(StudyCsvRow::from))?;
    Ok(all)
}

/// Runs one oracle suite; a failed check is reported as an error after printing.
pub fn cmd_validate(suite: Suite, seed: u64) -> Result<SuiteReport, CliError> {
    let report = validate::run(suite, &SuiteOptions { seed, ..SuiteOptions::default() })?;
    Ok(report)
}

/// Stability constants as echoed to the user.
pub fn stability(exp: &Experiment) -> Result<Stability, CliError> {
    Ok(Stability::of(&exp.disc, exp.scenario.tau())?)
}
