//! Training logs shared by all trainers.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::Result;

/// One row of `training_log.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub decision_step: u64,
    pub wallclock: f64,
    pub mean_episode_return: f64,
    pub mean_repetition: f64,
    pub entropy_a: f64,
    pub entropy_x: f64,
}

/// Greedy evaluation of a parameter snapshot taken during training.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSnapshot {
    pub decision_step: u64,
    pub mean_return: f64,
    pub mean_discounted_return: f64,
    pub mean_repetition: f64,
    pub success_rate: f64,
}

impl EvalSnapshot {
    pub fn new(decision_step: u64, ev: &crate::oracle::Evaluation) -> Self {
        Self {
            decision_step,
            mean_return: ev.mean_return,
            mean_discounted_return: ev.mean_discounted_return,
            mean_repetition: ev.mean_repetition,
            success_rate: ev.success_rate(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub evaluations: Vec<EvalSnapshot>,
    /// Undiscounted return of every finished training episode, in completion order.
    pub episode_returns: Vec<f64>,
    pub decision_steps: u64,
    pub primitive_steps: u64,
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], header: &[&str], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const LOG_HEADER: [&str; 6] = [
    "decision_step",
    "wallclock",
    "mean_episode_return",
    "mean_repetition",
    "entropy_a",
    "entropy_x",
];

pub const EVAL_HEADER: [&str; 5] = [
    "decision_step",
    "mean_return",
    "mean_discounted_return",
    "mean_repetition",
    "success_rate",
];

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.rows, &LOG_HEADER, out)
    }

    pub fn write_evaluations_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.evaluations, &EVAL_HEADER, out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(dir.join("training_log.csv"))?)?;
        self.write_evaluations_csv(std::fs::File::create(dir.join("training_evaluations.csv"))?)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Collects per-decision and per-episode statistics and emits a [`LogRow`]
/// every `interval` decisions.
#[derive(Debug)]
pub struct LogAccumulator {
    interval: u64,
    next_emit: u64,
    start: Option<Instant>,
    returns: (f64, usize),
    repetitions: (f64, usize),
    entropy: (f64, f64),
    pub log: TrainingLog,
}

impl LogAccumulator {
    /// `log_wallclock = false` writes 0 in the wallclock column so logs are
    /// reproducible byte for byte.
    pub fn new(interval: u64, log_wallclock: bool) -> Self {
        let interval = interval.max(1);
        Self {
            interval,
            next_emit: interval,
            start: log_wallclock.then(Instant::now),
            returns: (0.0, 0),
            repetitions: (0.0, 0),
            entropy: (0.0, 0.0),
            log: TrainingLog::default(),
        }
    }

    pub fn record_decision(&mut self, repetition: usize, entropy_a: f64, entropy_x: f64, elapsed: usize) {
        self.repetitions.0 += repetition as f64;
        self.repetitions.1 += 1;
        self.entropy.0 += entropy_a;
        self.entropy.1 += entropy_x;
        self.log.decision_steps += 1;
        self.log.primitive_steps += elapsed as u64;
    }

    pub fn record_episode(&mut self, ret: f64) {
        self.returns.0 += ret;
        self.returns.1 += 1;
        self.log.episode_returns.push(ret);
    }

    /// Emits rows for every interval boundary at or below `step`.
    pub fn maybe_emit(&mut self, step: u64) {
        while step >= self.next_emit {
            let at = self.next_emit;
            self.emit(at);
            self.next_emit += self.interval;
        }
    }

    /// Emits a final row if anything was recorded since the last one.
    pub fn flush(&mut self, step: u64) {
        if self.repetitions.1 > 0 || self.returns.1 > 0 {
            self.emit(step);
        }
    }

    fn emit(&mut self, step: u64) {
        let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
        let n = self.repetitions.1.max(1) as f64;
        self.log.rows.push(LogRow {
            decision_step: step,
            wallclock: self.start.map_or(0.0, |t| t.elapsed().as_secs_f64()),
            mean_episode_return: mean(self.returns),
            mean_repetition: mean(self.repetitions),
            entropy_a: self.entropy.0 / n,
            entropy_x: self.entropy.1 / n,
        });
        self.returns = (0.0, 0);
        self.repetitions = (0.0, 0);
        self.entropy = (0.0, 0.0);
    }

    pub fn evaluation(&mut self, snapshot: EvalSnapshot) {
        self.log.evaluations.push(snapshot);
    }

    pub fn finish(mut self, step: u64) -> TrainingLog {
        self.flush(step);
        self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_every_interval() {
        let mut acc = LogAccumulator::new(2, false);
        for step in 1..=5u64 {
            acc.record_decision(step as usize, 0.5, 0.25, 1);
            if step == 3 {
                acc.record_episode(-4.0);
            }
            acc.maybe_emit(step);
        }
        let log = acc.finish(5);
        let steps: Vec<u64> = log.rows.iter().map(|r| r.decision_step).collect();
        assert_eq!(steps, vec![2, 4, 5]);
        assert_eq!(log.rows[0].mean_repetition, 1.5);
        assert!(log.rows[0].mean_episode_return.is_nan());
        assert_eq!(log.rows[1].mean_episode_return, -4.0);
        assert_eq!(log.rows[1].wallclock, 0.0);
        assert_eq!(log.decision_steps, 5);
        let csv = log.to_csv_string().unwrap();
        assert!(csv.starts_with("decision_step,wallclock,mean_episode_return,mean_repetition,entropy_a,entropy_x\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
