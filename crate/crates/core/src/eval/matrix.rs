use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// Score of every task after every training checkpoint, for one method and
/// one metric. Checkpoints and tasks are both numbered `1..=num_tasks`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreMatrix {
    num_tasks: u32,
    cells: BTreeMap<(u32, u32), f64>,
}

impl ScoreMatrix {
    pub fn new(num_tasks: u32) -> Self {
        Self {
            num_tasks,
            cells: BTreeMap::new(),
        }
    }

    pub fn num_tasks(&self) -> u32 {
        self.num_tasks
    }

    pub fn set(&mut self, checkpoint: u32, task: u32, score: f64) {
        self.cells.insert((checkpoint, task), score);
    }

    pub fn get(&self, checkpoint: u32, task: u32) -> Option<f64> {
        self.cells.get(&(checkpoint, task)).copied()
    }

    /// `(checkpoint, task, score)` in checkpoint-major order.
    pub fn cells(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.cells.iter().map(|(&(c, t), &s)| (c, t, s))
    }

    fn mean_of(&self, checkpoint: u32, tasks: impl Iterator<Item = u32>) -> Option<f64> {
        let scores: Vec<f64> = tasks.filter_map(|t| self.get(checkpoint, t)).collect();
        (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
    }

    /// Mean over all tasks (seen and zero-shot) at a checkpoint.
    pub fn average(&self, checkpoint: u32) -> Option<f64> {
        self.mean_of(checkpoint, 1..=self.num_tasks)
    }

    /// Mean over tasks learned before `checkpoint`.
    pub fn old_task_average(&self, checkpoint: u32) -> Option<f64> {
        self.mean_of(checkpoint, 1..checkpoint)
    }

    /// Table layout: one row per evaluated task, one column per checkpoint,
    /// a PD column, and an average row. Scores are shown x100.
    pub fn render(&self, title: &str) -> String {
        let pd = performance_drop(self).ok();
        let mut out = String::new();
        let _ = writeln!(out, "{title}");
        let mut header = format!("{:<10}", "Eval on");
        for c in 1..=self.num_tasks {
            let _ = write!(header, "{:>8}", format!("T{c}"));
        }
        let _ = write!(header, "{:>10}", format!("PD(TX-T{})", self.num_tasks));
        let _ = writeln!(out, "{header}");
        for task in 1..=self.num_tasks {
            let mut line = format!("{:<10}", format!("task {task}"));
            for c in 1..=self.num_tasks {
                let cell = self
                    .get(c, task)
                    .map_or("-".to_string(), |s| format!("{:.1}", 100.0 * s));
                let _ = write!(line, "{cell:>8}");
            }
            let drop = pd
                .as_ref()
                .and_then(|p| p.per_task.get(&task))
                .map_or("-".to_string(), |d| format!("{:.1}", 100.0 * d));
            let _ = write!(line, "{drop:>10}");
            let _ = writeln!(out, "{line}");
        }
        let mut avg = format!("{:<10}", "Avg");
        for c in 1..=self.num_tasks {
            let cell = self
                .average(c)
                .map_or("-".to_string(), |s| format!("{:.1}", 100.0 * s));
            let _ = write!(avg, "{cell:>8}");
        }
        let _ = writeln!(out, "{avg}");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdReport {
    /// Own-checkpoint score minus final-checkpoint score; negative values
    /// mean the task improved after it was learned.
    pub per_task: BTreeMap<u32, f64>,
}

/// Performance drop of every task except the last.
pub fn performance_drop(matrix: &ScoreMatrix) -> Result<PdReport> {
    let last = matrix.num_tasks;
    let mut per_task = BTreeMap::new();
    for task in 1..last {
        let own = matrix.get(task, task).ok_or_else(|| {
            Error::IncompleteMatrix(format!("no score for task {task} at its own checkpoint"))
        })?;
        let fin = matrix.get(last, task).ok_or_else(|| {
            Error::IncompleteMatrix(format!("no score for task {task} at checkpoint {last}"))
        })?;
        per_task.insert(task, own - fin);
    }
    Ok(PdReport { per_task })
}
