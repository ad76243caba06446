use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global task address: workflow id plus task index within the workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskRef {
    pub workflow: usize,
    pub task: usize,
}

impl TaskRef {
    pub fn new(workflow: usize, task: usize) -> Self {
        Self { workflow, task }
    }
}

impl fmt::Display for TaskRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}.t{}", self.workflow, self.task)
    }
}

/// Host assignment for feasible and active tasks. Active tasks left out keep
/// their host; feasible tasks left out wait.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "Vec<(TaskRef, usize)>", from = "Vec<(TaskRef, usize)>")]
pub struct SchedulingDecision {
    pub assignments: BTreeMap<TaskRef, usize>,
}

impl SchedulingDecision {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn assign(&mut self, task: TaskRef, host: usize) {
        self.assignments.insert(task, host);
    }

    pub fn get(&self, task: &TaskRef) -> Option<usize> {
        self.assignments.get(task).copied()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TaskRef, usize)> + '_ {
        self.assignments.iter().map(|(t, h)| (*t, *h))
    }
}

impl From<SchedulingDecision> for Vec<(TaskRef, usize)> {
    fn from(d: SchedulingDecision) -> Self {
        d.assignments.into_iter().collect()
    }
}

impl From<Vec<(TaskRef, usize)>> for SchedulingDecision {
    fn from(v: Vec<(TaskRef, usize)>) -> Self {
        Self {
            assignments: v.into_iter().collect(),
        }
    }
}

impl FromIterator<(TaskRef, usize)> for SchedulingDecision {
    fn from_iter<I: IntoIterator<Item = (TaskRef, usize)>>(iter: I) -> Self {
        Self {
            assignments: iter.into_iter().collect(),
        }
    }
}

/// Row-major `n_tasks × n_hosts` matrix whose row `i` is one-hot at the host
/// of task `i`, or all zero when task `i` is unassigned.
pub fn decision_matrix(
    assignments: &BTreeMap<usize, usize>,
    n_tasks: usize,
    n_hosts: usize,
) -> Result<Vec<f64>> {
    let mut m = vec![0.0; n_tasks * n_hosts];
    for (&task, &host) in assignments {
        if host >= n_hosts {
            return Err(Error::HostIndexOutOfRange { host, n_hosts });
        }
        if task >= n_tasks {
            return Err(Error::DanglingTaskIndex { task, n_tasks });
        }
        m[task * n_hosts + host] = 1.0;
    }
    Ok(m)
}

/// Row-wise argmax of a decision matrix; all-zero rows are unassigned.
pub fn matrix_assignments(m: &[f64], n_hosts: usize) -> BTreeMap<usize, usize> {
    m.chunks(n_hosts)
        .enumerate()
        .filter(|(_, row)| row.iter().any(|&v| v != 0.0))
        .map(|(i, row)| (i, argmax(row)))
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
