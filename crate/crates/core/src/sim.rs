//! Interval co-simulator.
//!
//! One call to [`Simulator::step`] applies a scheduling decision and
//! advances the environment by one scheduling interval:
//!
//! 1. entries of the decision that do not name a feasible or active task,
//!    or that name a nonexistent host, are rejected;
//! 2. active tasks assigned to another host migrate if the target has room;
//!    execution pauses for `demand_ram / min(bw_src, bw_dst)` seconds;
//! 3. feasible tasks are placed in wait-queue-first order where RAM allows,
//!    everything else joins the FIFO wait queue;
//! 4. each host splits its MIPS equally among its tasks, capped at each
//!    task's demand, and tasks advance;
//! 5. energy, cost, response times and the objective are computed, the
//!    utilization window shifts, and the next interval's arrivals are drawn.
//!
//! The simulator owns its RNG streams, so a clone steps exactly like the
//! original would.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decision::{SchedulingDecision, TaskRef};
use crate::error::{Error, Result};
use crate::host::{desk_hosts, validate_hosts, HostSpec, Tier};
use crate::metrics::{
    compute_objective, host_power, jain_fairness, normalized_energy, normalized_response,
    FinishedWorkflow, IntervalMetrics,
};
use crate::workflow::{feasible_tasks, validate_dag, TaskStatus, TraceWorkflow, Workflow};
use crate::workload::{generate_workflows, TaskDistribution, Template, WorkloadParams};

/// Utilization features per host in the window: CPU, RAM, disk, bandwidth.
pub const HOST_FEATURES: usize = 4;

const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub hosts: Vec<HostSpec>,
    pub interval_seconds: f64,
    pub alpha: f64,
    /// Mean workflow arrivals per interval.
    pub lambda: f64,
    pub templates: Vec<Template>,
    /// Inclusive bounds on tasks per workflow.
    pub task_count_range: (usize, usize),
    pub tasks: TaskDistribution,
    pub seed: u64,
    /// Response time (intervals) that maps to the worst normalized ART.
    pub r_max: f64,
    pub deadline_percentile: f64,
    /// Per-application deadlines in intervals. Applications without an
    /// entry use `r_max`.
    pub deadlines: BTreeMap<String, f64>,
    /// Rows kept in the utilization window.
    pub window: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            hosts: desk_hosts(),
            interval_seconds: 300.0,
            alpha: 0.5,
            lambda: 0.5,
            templates: Template::ALL.to_vec(),
            task_count_range: (3, 10),
            tasks: TaskDistribution::default(),
            seed: 0,
            r_max: 20.0,
            deadline_percentile: 98.0,
            deadlines: BTreeMap::new(),
            window: 3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        validate_hosts(&self.hosts)?;
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.interval_seconds > 0.0) {
            return bad("interval_seconds must be positive".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!(
                "lambda {} must be a finite non-negative rate",
                self.lambda
            ));
        }
        if self.templates.is_empty() {
            return Err(Error::EmptyTemplateSet);
        }
        let (lo, hi) = self.task_count_range;
        if lo == 0 || lo > hi {
            return bad(format!("task_count_range {lo}..={hi}"));
        }
        if !(self.r_max > 0.0) {
            return bad("r_max must be positive".into());
        }
        if !(0.0 < self.deadline_percentile && self.deadline_percentile <= 100.0) {
            return bad(format!("deadline_percentile {}", self.deadline_percentile));
        }
        if self.window == 0 {
            return bad("window must hold at least one row".into());
        }
        Ok(())
    }

    pub fn n_hosts(&self) -> usize {
        self.hosts.len()
    }

    pub fn deadline_for(&self, app: &str) -> f64 {
        self.deadlines.get(app).copied().unwrap_or(self.r_max)
    }

    pub fn app_labels(&self) -> Vec<&'static str> {
        let mut t = self.templates.clone();
        t.sort();
        t.dedup();
        t.into_iter().map(Template::label).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    UnknownTask,
    /// Neither feasible nor active (pending on a parent, or done).
    NotSchedulable,
    HostOutOfRange,
    /// Not enough free RAM on the chosen host.
    CapacityExceeded,
}

/// A decision entry the simulator refused. The task was left where it was
/// or routed to the wait queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidDecision {
    pub task: TaskRef,
    pub host: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub metrics: IntervalMetrics,
    pub rejected: Vec<InvalidDecision>,
}

/// Migration pause in seconds.
pub fn migration_delay(demand_ram: f64, src: &HostSpec, dst: &HostSpec) -> f64 {
    demand_ram / src.bandwidth.min(dst.bandwidth)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Simulator {
    config: Arc<SimConfig>,
    trace: Arc<Vec<TraceWorkflow>>,
    trace_cursor: usize,
    interval: usize,
    /// Workflows in the system, ordered by id.
    workflows: Vec<Workflow>,
    wait_queue: Vec<TaskRef>,
    window: VecDeque<Vec<f64>>,
    /// Current latency per host in ms.
    latency: Vec<f64>,
    workload_rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    next_workflow_id: usize,
    cost_usd: f64,
    last_decision: SchedulingDecision,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        Self::with_trace(config, Vec::new())
    }

    /// A simulator whose arrivals are the trace workflows (at their arrival
    /// interval) plus any Poisson arrivals from `config.lambda`.
    pub fn with_trace(config: SimConfig, mut trace: Vec<TraceWorkflow>) -> Result<Self> {
        config.validate()?;
        for w in &trace {
            validate_dag(w.tasks.len(), &w.edges)?;
        }
        trace.sort_by_key(|w| (w.arrival, w.id));
        let n = config.n_hosts();
        let k = config.window;
        let seed = config.seed;
        let next_workflow_id = trace.iter().map(|w| w.id + 1).max().unwrap_or(0);
        let latency = config.hosts.iter().map(|h| h.base_latency).collect();
        let mut sim = Self {
            config: Arc::new(config),
            trace: Arc::new(trace),
            trace_cursor: 0,
            interval: 0,
            workflows: Vec::new(),
            wait_queue: Vec::new(),
            window: (0..k).map(|_| vec![0.0; n * HOST_FEATURES]).collect(),
            latency,
            workload_rng: ChaCha8Rng::seed_from_u64(seed),
            jitter_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
            next_workflow_id,
            cost_usd: 0.0,
            last_decision: SchedulingDecision::new(),
        };
        sim.admit_arrivals()?;
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn hosts(&self) -> &[HostSpec] {
        &self.config.hosts
    }

    pub fn n_hosts(&self) -> usize {
        self.config.hosts.len()
    }

    /// Index of the interval the next `step` executes.
    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn workflows(&self) -> &[Workflow] {
        &self.workflows
    }

    pub fn wait_queue(&self) -> &[TaskRef] {
        &self.wait_queue
    }

    pub fn latency(&self) -> &[f64] {
        &self.latency
    }

    pub fn cost_usd(&self) -> f64 {
        self.cost_usd
    }

    pub fn last_decision(&self) -> &SchedulingDecision {
        &self.last_decision
    }

    /// The last `k` utilization rows, oldest first, flattened row-major as
    /// `k × (hosts × HOST_FEATURES)`.
    pub fn window(&self) -> Vec<f64> {
        self.window.iter().flatten().copied().collect()
    }

    pub fn workflow(&self, id: usize) -> Option<&Workflow> {
        self.workflows
            .binary_search_by_key(&id, |w| w.id)
            .ok()
            .map(|i| &self.workflows[i])
    }

    fn workflow_index(&self, id: usize) -> Option<usize> {
        self.workflows.binary_search_by_key(&id, |w| w.id).ok()
    }

    pub fn task(&self, r: &TaskRef) -> Option<&crate::workflow::TaskState> {
        self.workflow(r.workflow).and_then(|w| w.tasks.get(r.task))
    }

    pub fn feasible_tasks(&self) -> Vec<TaskRef> {
        feasible_tasks(&self.workflows, &self.wait_queue)
    }

    /// Running or migrating tasks, in workflow/task order.
    pub fn active_tasks(&self) -> Vec<TaskRef> {
        self.workflows
            .iter()
            .flat_map(|w| w.tasks.iter())
            .filter(|t| t.status.is_active())
            .map(|t| t.task_ref())
            .collect()
    }

    pub fn is_idle(&self) -> bool {
        self.workflows.is_empty()
    }

    /// RAM held per host by active tasks.
    pub fn ram_used(&self) -> Vec<f64> {
        let mut used = vec![0.0; self.n_hosts()];
        for t in self.workflows.iter().flat_map(|w| w.tasks.iter()) {
            if let (true, Some(h)) = (t.status.is_active(), t.host) {
                used[h] += t.demand_ram;
            }
        }
        used
    }

    /// Σ demand_ips / mips of the active tasks on each host.
    pub fn cpu_load(&self) -> Vec<f64> {
        let mut load = vec![0.0; self.n_hosts()];
        for t in self.workflows.iter().flat_map(|w| w.tasks.iter()) {
            if let (true, Some(h)) = (t.status.is_active(), t.host) {
                load[h] += t.demand_ips / self.config.hosts[h].mips;
            }
        }
        load
    }

    fn enqueue(&mut self, r: TaskRef) {
        if !self.wait_queue.contains(&r) {
            self.wait_queue.push(r);
        }
    }

    pub fn step(&mut self, decision: &SchedulingDecision) -> Result<StepOutcome> {
        let cfg = Arc::clone(&self.config);
        let hosts = &cfg.hosts;
        let n_hosts = hosts.len();
        let dt = cfg.interval_seconds;
        let t_now = self.interval;
        let mut rejected = Vec::new();
        let mut metrics = IntervalMetrics {
            interval: t_now,
            ..Default::default()
        };

        // 1. validate
        let feasible = self.feasible_tasks();
        let mut moves = Vec::new();
        let mut placements = BTreeMap::new();
        for (r, h) in decision.iter() {
            let reject = |reason| InvalidDecision {
                task: r,
                host: h,
                reason,
            };
            let Some(task) = self.task(&r) else {
                rejected.push(reject(RejectReason::UnknownTask));
                continue;
            };
            if h >= n_hosts {
                rejected.push(reject(RejectReason::HostOutOfRange));
            } else if task.status.is_active() {
                if task.host != Some(h) {
                    moves.push((r, h));
                }
            } else if feasible.contains(&r) {
                placements.insert(r, h);
            } else {
                rejected.push(reject(RejectReason::NotSchedulable));
            }
        }

        // 2. migrations
        let mut ram = self.ram_used();
        for (r, dst) in moves {
            let wi = self.workflow_index(r.workflow).expect("validated");
            let task = &mut self.workflows[wi].tasks[r.task];
            let src = task.host.expect("active task has a host");
            if ram[dst] + task.demand_ram > hosts[dst].ram {
                rejected.push(InvalidDecision {
                    task: r,
                    host: dst,
                    reason: RejectReason::CapacityExceeded,
                });
                continue;
            }
            ram[src] -= task.demand_ram;
            ram[dst] += task.demand_ram;
            let delay = migration_delay(task.demand_ram, &hosts[src], &hosts[dst]);
            task.host = Some(dst);
            task.status = TaskStatus::Migrating;
            task.migration_remaining = delay;
            metrics.migrations += 1;
            metrics.migration_time_s += delay;
        }

        // 3. placements, wait queue first
        for r in feasible {
            let wi = self
                .workflow_index(r.workflow)
                .expect("feasible task exists");
            let placed = match placements.get(&r) {
                Some(&h) => {
                    let demand = self.workflows[wi].tasks[r.task].demand_ram;
                    if ram[h] + demand <= hosts[h].ram {
                        ram[h] += demand;
                        Some(h)
                    } else {
                        rejected.push(InvalidDecision {
                            task: r,
                            host: h,
                            reason: RejectReason::CapacityExceeded,
                        });
                        None
                    }
                }
                None => None,
            };
            let w = &mut self.workflows[wi];
            let task = &mut w.tasks[r.task];
            match placed {
                Some(h) => {
                    task.status = TaskStatus::Running;
                    task.host = Some(h);
                    task.migration_remaining = 0.0;
                    if w.admitted_at.is_none() {
                        w.admitted_at = Some(t_now);
                        metrics.wait_times.push((t_now - w.created_at) as f64);
                    }
                    self.wait_queue.retain(|q| *q != r);
                }
                None => {
                    task.status = TaskStatus::Waiting;
                    self.enqueue(r);
                }
            }
        }

        // 4. latency jitter for this interval
        for (h, spec) in hosts.iter().enumerate() {
            self.latency[h] = match spec.tier {
                Tier::Edge => spec.base_latency * self.jitter_rng.gen_range(0.5..=2.0),
                Tier::Cloud => spec.base_latency,
            };
        }

        // 5. execution
        let mut on_host = vec![0usize; n_hosts];
        let mut bw = vec![0.0; n_hosts];
        let mut applied = SchedulingDecision::new();
        for t in self.workflows.iter().flat_map(|w| w.tasks.iter()) {
            if let (true, Some(h)) = (t.status.is_active(), t.host) {
                on_host[h] += 1;
                bw[h] += t.demand_bw;
                applied.assign(t.task_ref(), h);
            }
        }
        let mut executed = vec![0.0; n_hosts];
        let mut finished_at_fraction: BTreeMap<usize, f64> = BTreeMap::new();
        for w in &mut self.workflows {
            let mut last_finish: Option<f64> = None;
            for task in &mut w.tasks {
                let (true, Some(h)) = (task.status.is_active(), task.host) else {
                    continue;
                };
                let paused = task.migration_remaining.min(dt);
                task.migration_remaining -= paused;
                if task.migration_remaining <= 0.0 {
                    task.migration_remaining = 0.0;
                    task.status = TaskStatus::Running;
                }
                let rate = task.demand_ips.min(hosts[h].mips / on_host[h] as f64);
                metrics.allotments.push(rate);
                // whole instructions only, so per-workflow sums stay exact
                let capacity = (rate * (dt - paused)).floor();
                let remaining = task.remaining();
                let inc = if capacity >= remaining {
                    let offset = paused + remaining / rate;
                    last_finish = Some(last_finish.map_or(offset, |o: f64| o.max(offset)));
                    task.executed = task.length;
                    task.status = TaskStatus::Done;
                    task.host = None;
                    remaining
                } else {
                    task.executed += capacity;
                    capacity
                };
                executed[h] += inc;
                w.executed_total += inc;
            }
            if w.tasks.iter().all(|t| t.status == TaskStatus::Done) {
                let offset = last_finish.unwrap_or(dt);
                finished_at_fraction.insert(w.id, offset / dt);
            }
        }

        // 6. completions
        let mut responses = Vec::new();
        let mut keep = Vec::with_capacity(self.workflows.len());
        for mut w in std::mem::take(&mut self.workflows) {
            match finished_at_fraction.get(&w.id) {
                Some(&frac) => {
                    let sink_host = applied
                        .iter()
                        .filter(|(r, _)| r.workflow == w.id)
                        .map(|(_, h)| h)
                        .last()
                        .unwrap_or(0);
                    // result delivery from the last host adds its latency
                    let delivery = self.latency[sink_host] / 1000.0 / dt;
                    let response = (t_now - w.created_at) as f64 + frac + delivery;
                    w.finished_at = Some(t_now);
                    w.response_time = Some(response);
                    let violated = response > w.deadline;
                    metrics.sla_violations += violated as usize;
                    responses.push(response);
                    metrics.finished.push(FinishedWorkflow {
                        id: w.id,
                        app_label: w.app_label.clone(),
                        response_time: response,
                        deadline: w.deadline,
                        violated,
                        total_length: w.total_length(),
                        executed_total: w.executed_total,
                    });
                }
                None => keep.push(w),
            }
        }
        self.workflows = keep;

        // 7. energy, window, cost
        let mut energy_j = 0.0;
        let mut row = Vec::with_capacity(n_hosts * HOST_FEATURES);
        for (h, spec) in hosts.iter().enumerate() {
            let frac = (executed[h] / (spec.mips * dt)).clamp(0.0, 1.0);
            let e = host_power(spec, frac)? * dt;
            energy_j += e;
            metrics.energy_kwh_per_host.push(e / JOULES_PER_KWH);
            metrics.cpu_fraction.push(frac);
            let ram_used: f64 = ram[h];
            row.extend([
                frac,
                (ram_used / spec.ram).clamp(0.0, 1.0),
                (ram_used / spec.disk).clamp(0.0, 1.0),
                (bw[h] / spec.bandwidth).clamp(0.0, 1.0),
            ]);
        }
        self.window.push_back(row);
        while self.window.len() > cfg.window {
            self.window.pop_front();
        }
        self.cost_usd += hosts.iter().map(|h| h.cost_per_hour).sum::<f64>() * dt / 3600.0;

        metrics.energy_kwh = energy_j / JOULES_PER_KWH;
        metrics.aec = normalized_energy(energy_j, hosts, dt);
        metrics.art = normalized_response(&responses, cfg.r_max);
        metrics.objective = compute_objective(cfg.alpha, metrics.aec, metrics.art);
        metrics.cost_usd = self.cost_usd;
        metrics.fairness = if metrics.allotments.is_empty() {
            1.0
        } else {
            jain_fairness(&metrics.allotments)?
        };

        self.last_decision = applied;
        self.interval += 1;
        self.admit_arrivals()?;
        Ok(StepOutcome { metrics, rejected })
    }

    fn admit_arrivals(&mut self) -> Result<()> {
        let cfg = Arc::clone(&self.config);
        let t = self.interval;
        while let Some(tw) = self.trace.get(self.trace_cursor).filter(|w| w.arrival <= t) {
            let w = Workflow::new(
                tw.id,
                tw.app_label.clone(),
                t,
                tw.deadline,
                &tw.tasks,
                tw.edges.clone(),
            );
            self.workflows.push(w);
            self.trace_cursor += 1;
        }
        let deadline_for = |app: &str| cfg.deadline_for(app);
        let params = WorkloadParams {
            lambda: cfg.lambda,
            templates: &cfg.templates,
            task_count_range: cfg.task_count_range,
            tasks: &cfg.tasks,
            interval_seconds: cfg.interval_seconds,
            deadline_for: &deadline_for,
        };
        let arrivals = generate_workflows(
            &mut self.workload_rng,
            &params,
            t,
            &mut self.next_workflow_id,
        )?;
        self.workflows.extend(arrivals);
        self.workflows.sort_by_key(|w| w.id);
        Ok(())
    }
}
