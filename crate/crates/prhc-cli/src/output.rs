//! On-disk formats: versioned CSV logs, JSON summaries and a binary trajectory file that
//! lets `compare` work on finished runs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Duration;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use prhc::dynamics::{ControlSignal, Trajectory};
use prhc::fem::Discretization;
use prhc::ocp::CostWeights;
use prhc::rhc::{ClosedLoopResult, Counters, Outcome, PerformanceRecord};

/// Bumped whenever a column changes meaning.
pub const CSV_SCHEMA: u32 = 1;
const TRAJECTORY_MAGIC: &[u8; 8] = b"PRHCTRJ1";

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

/// Writes `# prhc <name> v<schema>` followed by the records.
pub fn write_csv<T: Serialize>(path: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<(), OutputError> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# prhc {name} v{CSV_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, OutputError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// One row of `rhc_log.csv`; wall times stay out so identical runs give identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub time: f64,
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
    pub alpha_fom: Option<f64>,
    pub accepted: bool,
    pub cost_delta: f64,
    pub value: f64,
    pub delta_value: f64,
    pub updates: usize,
    pub fom_gradient_evals: usize,
}

impl From<&PerformanceRecord> for LogRow {
    fn from(r: &PerformanceRecord) -> Self {
        Self {
            step: r.step,
            time: r.time,
            dim: r.dim,
            lower: r.lower,
            upper: r.upper,
            alpha_fom: r.alpha_fom,
            accepted: r.accepted,
            cost_delta: r.cost_delta,
            value: r.value,
            delta_value: r.delta_value,
            updates: r.updates,
            fom_gradient_evals: r.fom_gradient_evals,
        }
    }
}

impl From<&LogRow> for PerformanceRecord {
    fn from(r: &LogRow) -> Self {
        Self {
            step: r.step,
            time: r.time,
            dim: r.dim,
            lower: r.lower,
            upper: r.upper,
            alpha_fom: r.alpha_fom,
            accepted: r.accepted,
            cost_delta: r.cost_delta,
            value: r.value,
            delta_value: r.delta_value,
            updates: r.updates,
            fom_gradient_evals: r.fom_gradient_evals,
            wall_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub t: f64,
    pub state_norm: f64,
    pub stage_cost: f64,
}

/// `(t_j, |y_j|_H, l(y_j, u_j))` at every committed grid point; the stage cost at `t_j`
/// pairs the state with the control of the step ending there.
pub fn decay_rows(disc: &Discretization, weights: &CostWeights, result: &ClosedLoopResult) -> Vec<DecayRow> {
    result
        .states
        .states
        .iter()
        .enumerate()
        .map(|(j, y)| {
            let h = disc.h_norm(y);
            let stage = if j == 0 {
                0.5 * h * h
            } else {
                let u = &result.control.values[j - 1];
                0.5 * h * h + 0.5 * weights.lambda * u.norm_squared() + 0.5 * weights.beta * u.lp_norm(1).powi(2)
            };
            DecayRow { t: j as f64 * result.tau, state_norm: h, stage_cost: stage }
        })
        .collect()
}

/// Writes `controls.csv` with columns `t, u1, .., um`; row `k` holds the control on
/// `(t_k, t_{k+1}]`.
pub fn write_controls(path: &Path, control: &ControlSignal, tau: f64) -> Result<(), OutputError> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# prhc controls v{CSV_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(file);
    let m = control.inputs();
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for (k, u) in control.values.iter().enumerate() {
        let mut rec = vec![format!("{}", k as f64 * tau)];
        rec.extend(u.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Run-level summary; everything a comparison needs besides the trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub config_hash: String,
    pub seed: u64,
    pub completed: bool,
    pub aborted_at_step: Option<usize>,
    pub total_cost: f64,
    pub initial_norm: f64,
    pub final_norm: f64,
    pub decay_rate: f64,
    /// Value of the first open-loop problem, from a full-order solve.
    pub initial_value: f64,
    pub performance_target: f64,
    pub index_min: Option<f64>,
    pub index_mean: Option<f64>,
    pub index_max: Option<f64>,
    pub inactive_actuators: Vec<usize>,
    pub fom_gradient_evals: usize,
    pub rom_gradient_evals: usize,
    pub validation_gradient_evals: usize,
    pub model_updates: usize,
    pub final_dim: usize,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn counters(&self) -> Counters {
        Counters {
            fom_gradient_evals: self.fom_gradient_evals,
            rom_gradient_evals: self.rom_gradient_evals,
            validation_gradient_evals: self.validation_gradient_evals,
            model_updates: self.model_updates,
            wall: Duration::from_secs_f64(self.wall_seconds),
        }
    }
}

/// 1-based indices of actuators that stay exactly zero over the whole run.
pub fn inactive_actuators(control: &ControlSignal) -> Vec<usize> {
    (0..control.inputs()).filter(|&i| control.values.iter().all(|u| u[i] == 0.0)).map(|i| i + 1).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, OutputError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Magic, then `tau`, sampling steps, control steps, inputs, state steps + 1 and dofs,
/// then controls and states row by row, all little-endian.
pub fn write_trajectory(path: &Path, result: &ClosedLoopResult) -> Result<(), OutputError> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(TRAJECTORY_MAGIC)?;
    f.write_all(&result.tau.to_le_bytes())?;
    let n = result.states.states.first().map_or(0, |s| s.len());
    for v in [result.sampling_steps, result.control.steps(), result.control.inputs(), result.states.len(), n] {
        f.write_all(&(v as u64).to_le_bytes())?;
    }
    for v in result.control.values.iter().chain(&result.states.states) {
        for x in v.iter() {
            f.write_all(&x.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Closed loop read back from disk: trajectories from the binary file, records from the
/// log and totals from the summary.
pub fn read_run(dir: &Path) -> Result<(RunSummary, ClosedLoopResult), OutputError> {
    let summary: RunSummary = read_json(&dir.join("summary.json"))?;
    let rows: Vec<LogRow> = read_csv(&dir.join("rhc_log.csv"))?;
    let path = dir.join("trajectory.bin");
    let bad = |reason: &str| OutputError::Format { path: path.display().to_string(), reason: reason.into() };
    let mut f = BufReader::new(File::open(&path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != TRAJECTORY_MAGIC {
        return Err(bad("not a trajectory file"));
    }
    let mut word = [0u8; 8];
    let mut next = |f: &mut BufReader<File>| -> std::io::Result<[u8; 8]> {
        f.read_exact(&mut word)?;
        Ok(word)
    };
    let tau = f64::from_le_bytes(next(&mut f)?);
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = u64::from_le_bytes(next(&mut f)?) as usize;
    }
    let [sampling_steps, steps, m, len, n] = dims;
    if len != steps + 1 || sampling_steps == 0 {
        return Err(bad("inconsistent header"));
    }
    let mut read_vec = |f: &mut BufReader<File>, k: usize| -> std::io::Result<DVector<f64>> {
        let mut v = DVector::zeros(k);
        for x in v.iter_mut() {
            *x = f64::from_le_bytes(next(f)?);
        }
        Ok(v)
    };
    let control = ControlSignal { values: (0..steps).map(|_| read_vec(&mut f, m)).collect::<Result<_, _>>()? };
    let states = Trajectory { states: (0..len).map(|_| read_vec(&mut f, n)).collect::<Result<_, _>>()? };
    let outcome = match summary.aborted_at_step {
        None => Outcome::Completed,
        Some(step) => Outcome::Aborted { step, updates: rows.last().map_or(0, |r| r.updates) },
    };
    let result = ClosedLoopResult {
        tau,
        sampling_steps,
        control,
        states,
        total_cost: summary.total_cost,
        records: rows.iter().map(PerformanceRecord::from).collect(),
        counters: summary.counters(),
        outcome,
        final_dim: summary.final_dim,
    };
    Ok((summary, result))
}
