use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decision::TaskRef;
use crate::error::{Error, Result};

/// Static demands of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Total instructions.
    pub length: f64,
    /// Instructions per second the task can use at most.
    pub demand_ips: f64,
    /// MB.
    pub demand_ram: f64,
    /// MB/s.
    pub demand_bw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Waiting,
    Running,
    Migrating,
    Done,
}

impl TaskStatus {
    /// Placed on a host.
    pub fn is_active(self) -> bool {
        matches!(self, TaskStatus::Running | TaskStatus::Migrating)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub id: usize,
    pub workflow_id: usize,
    /// Whole instructions: `TaskSpec::length` rounded, at least one.
    pub length: f64,
    pub demand_ips: f64,
    pub demand_ram: f64,
    pub demand_bw: f64,
    pub executed: f64,
    pub status: TaskStatus,
    pub host: Option<usize>,
    /// Seconds of migration still to go; execution is paused meanwhile.
    pub migration_remaining: f64,
}

impl TaskState {
    pub fn new(id: usize, workflow_id: usize, spec: &TaskSpec) -> Self {
        Self {
            id,
            workflow_id,
            length: spec.length.round().max(1.0),
            demand_ips: spec.demand_ips,
            demand_ram: spec.demand_ram,
            demand_bw: spec.demand_bw,
            executed: 0.0,
            status: TaskStatus::Pending,
            host: None,
            migration_remaining: 0.0,
        }
    }

    pub fn task_ref(&self) -> TaskRef {
        TaskRef::new(self.workflow_id, self.id)
    }

    pub fn remaining(&self) -> f64 {
        self.length - self.executed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workflow {
    pub id: usize,
    pub app_label: String,
    pub created_at: usize,
    pub finished_at: Option<usize>,
    /// SLA bound on the response time, in intervals.
    pub deadline: f64,
    pub tasks: Vec<TaskState>,
    /// `(parent, child)` task indices.
    pub edges: Vec<(usize, usize)>,
    /// Intervals from arrival to completion, fractional within the last
    /// interval.
    pub response_time: Option<f64>,
    /// Interval in which the first task was placed.
    pub admitted_at: Option<usize>,
    /// Sum of every per-interval execution increment of every task.
    pub executed_total: f64,
}

impl Workflow {
    pub fn new(
        id: usize,
        app_label: impl Into<String>,
        created_at: usize,
        deadline: f64,
        specs: &[TaskSpec],
        edges: Vec<(usize, usize)>,
    ) -> Self {
        Self {
            id,
            app_label: app_label.into(),
            created_at,
            finished_at: None,
            deadline,
            tasks: specs
                .iter()
                .enumerate()
                .map(|(i, s)| TaskState::new(i, id, s))
                .collect(),
            edges,
            response_time: None,
            admitted_at: None,
            executed_total: 0.0,
        }
    }

    pub fn parents(&self, task: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == task).map(|e| e.0)
    }

    pub fn is_finished(&self) -> bool {
        self.finished_at.is_some()
    }

    pub fn total_length(&self) -> f64 {
        self.tasks.iter().map(|t| t.length).sum()
    }

    /// Not yet placed, and every parent is done.
    pub fn is_feasible(&self, task: usize) -> bool {
        matches!(
            self.tasks[task].status,
            TaskStatus::Pending | TaskStatus::Waiting
        ) && self
            .parents(task)
            .all(|p| self.tasks[p].status == TaskStatus::Done)
    }
}

/// Checks that every edge names an existing task and that the edge relation
/// is acyclic. A cycle is reported by the task indices along it.
pub fn validate_dag(n_tasks: usize, edges: &[(usize, usize)]) -> Result<()> {
    for &(a, b) in edges {
        for task in [a, b] {
            if task >= n_tasks {
                return Err(Error::DanglingTaskIndex { task, n_tasks });
            }
        }
    }
    let mut children = vec![Vec::new(); n_tasks];
    for &(a, b) in edges {
        children[a].push(b);
    }
    // 0 = unvisited, 1 = on the current path, 2 = finished
    let mut color = vec![0u8; n_tasks];
    for start in 0..n_tasks {
        if color[start] != 0 {
            continue;
        }
        let mut path = vec![start];
        let mut cursor = vec![0usize];
        color[start] = 1;
        while let Some(&node) = path.last() {
            let i = cursor.last_mut().expect("cursor tracks path");
            if let Some(&next) = children[node].get(*i) {
                *i += 1;
                match color[next] {
                    0 => {
                        color[next] = 1;
                        path.push(next);
                        cursor.push(0);
                    }
                    1 => {
                        let from = path.iter().position(|&p| p == next).expect("on path");
                        return Err(Error::CyclicDependency(path[from..].to_vec()));
                    }
                    _ => {}
                }
            } else {
                color[node] = 2;
                path.pop();
                cursor.pop();
            }
        }
    }
    Ok(())
}

/// Tasks that may be placed now: the wait queue in FIFO order, followed by
/// the remaining feasible tasks ordered by workflow then task index.
pub fn feasible_tasks(workflows: &[Workflow], wait_queue: &[TaskRef]) -> Vec<TaskRef> {
    let lookup = |r: &TaskRef| workflows.iter().find(|w| w.id == r.workflow);
    let mut out: Vec<TaskRef> = wait_queue
        .iter()
        .filter(|r| lookup(r).is_some_and(|w| w.is_feasible(r.task)))
        .copied()
        .collect();
    for w in workflows {
        for t in 0..w.tasks.len() {
            let r = TaskRef::new(w.id, t);
            if w.is_feasible(t) && !wait_queue.contains(&r) {
                out.push(r);
            }
        }
    }
    out
}

/// One workflow of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceWorkflow {
    pub id: usize,
    pub app_label: String,
    pub deadline: f64,
    pub tasks: Vec<TaskSpec>,
    pub edges: Vec<(usize, usize)>,
    /// Interval at which the workflow arrives.
    #[serde(default)]
    pub arrival: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub workflows: Vec<TraceWorkflow>,
}

impl Trace {
    pub fn load(path: &Path) -> Result<Self> {
        let trace: Trace = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for w in &trace.workflows {
            validate_dag(w.tasks.len(), &w.edges)?;
        }
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
