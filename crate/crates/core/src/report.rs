//! Training logs and model evaluation on held-out data.

use std::io::Write;
use std::path::Path;

use crate::data::{accuracy, bfr, fmt_f64, Dataset};
use crate::error::{Error, Result};
use crate::init_state::{reconstruct_x0, PswarmConfig};
use crate::models::{simulate_outputs, DynamicModel, ParamVector};
use crate::numerics::{Signal, Vector};
use crate::objectives::{eval_objective, Loss, Regularizer};

/// One row per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// Training objective at the end of the epoch.
    pub objective: f64,
    /// BFR in percent, or accuracy in `[0, 1]` for binary outputs.
    pub fit: f64,
    pub zero_fraction: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "epoch,objective,fit,zero_fraction,wall_time";

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row with the lowest objective; ties keep the earliest epoch.
    pub fn best(&self) -> Option<&LogRow> {
        self.rows
            .iter()
            .fold(None, |best: Option<&LogRow>, r| match best {
                Some(b) if b.objective <= r.objective => Some(b),
                _ => Some(r),
            })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch,
                fmt_f64(r.objective),
                fmt_f64(r.fit),
                fmt_f64(r.zero_fraction),
                fmt_f64(r.wall_time)
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Accuracy for binary outputs, BFR otherwise.
pub fn fit_score(data: &Dataset, y: &Signal, y_hat: &Signal) -> Result<f64> {
    if data.is_binary() {
        accuracy(y, y_hat)
    } else {
        bfr(y, y_hat)
    }
}

/// Open-loop simulation of every experiment from a reconstructed initial state.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub x0: Vec<Vector>,
    pub outputs: Vec<Signal>,
    pub objective: f64,
    /// Fit over all experiments stacked.
    pub fit: f64,
}

/// Settings for initial-state reconstruction during evaluation.
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub n_bar: usize,
    pub pswarm: PswarmConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n_bar: crate::init_state::DEFAULT_N_BAR,
            pswarm: PswarmConfig::default(),
        }
    }
}

pub fn evaluate<M: DynamicModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    data: &Dataset,
    loss: &Loss,
    regs: &[Regularizer],
    settings: &EvalSettings,
) -> Result<Evaluation> {
    let mut x0 = Vec::with_capacity(data.experiments.len());
    for (d, exp) in data.experiments.iter().enumerate() {
        let cfg = settings.pswarm.clone().with_seed(settings.pswarm.seed.wrapping_add(d as u64));
        x0.push(reconstruct_x0(
            model,
            theta,
            &exp.inputs,
            &exp.outputs,
            settings.n_bar,
            loss,
            regs,
            &cfg,
        )?);
    }
    evaluate_from(model, theta, data, loss, regs, x0)
}

/// Like [`evaluate`] with given initial states.
pub fn evaluate_from<M: DynamicModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    data: &Dataset,
    loss: &Loss,
    regs: &[Regularizer],
    x0: Vec<Vector>,
) -> Result<Evaluation> {
    if x0.len() != data.experiments.len() {
        return Err(Error::dims("one initial state per experiment is required"));
    }
    let mut outputs = Vec::with_capacity(x0.len());
    let mut y_all = Signal::new(data.n_y());
    let mut y_hat_all = Signal::new(data.n_y());
    for (exp, x) in data.experiments.iter().zip(&x0) {
        let y_hat = simulate_outputs(model, theta, x.as_slice(), &exp.inputs)?;
        y_all = y_all.concat(&exp.outputs)?;
        y_hat_all = y_hat_all.concat(&y_hat)?;
        outputs.push(y_hat);
    }
    let objective = eval_objective(loss, regs, data, model, theta, &x0)?;
    let fit = fit_score(data, &y_all, &y_hat_all)?;
    Ok(Evaluation {
        x0,
        outputs,
        objective,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, objective: f64) -> LogRow {
        LogRow {
            epoch,
            objective,
            fit: 0.0,
            zero_fraction: 0.0,
            wall_time: 0.0,
        }
    }

    #[test]
    fn best_row_prefers_earliest_tie() {
        let log = TrainingLog {
            rows: vec![row(1, 3.0), row(2, 1.0), row(3, 1.0), row(4, 2.0)],
        };
        assert_eq!(log.best().unwrap().epoch, 2);
        assert!(TrainingLog::default().best().is_none());
    }

    #[test]
    fn csv_has_header_and_one_line_per_epoch() {
        let log = TrainingLog {
            rows: vec![row(1, 0.5), row(2, 0.25)],
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], TrainingLog::HEADER);
        assert!(lines[2].starts_with("2,2.5"));
    }
}
