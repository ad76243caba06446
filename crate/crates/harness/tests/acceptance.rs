//! The acceptance criteria C1–C9. Each test prints one `[PASS]`/`[FAIL]`
//! line and then asserts. C5–C9 share one calibrated, trained campaign that
//! is built on first use.
//!
//! Run alone with `cargo test -p mcds-harness --test acceptance`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use mcds_core::calibrate::Calibration;
use mcds_core::{
    GreedyScheduler, RandomScheduler, Scheduler, SchedulingDecision, SimConfig, Simulator,
    SystemState, TaskStatus,
};
use mcds_harness::calibrate::{calibrate, with_deadlines};
use mcds_harness::eval::seed_dir;
use mcds_harness::stats::{paired_interval, CONFIDENCE};
use mcds_harness::{run_eval, run_training, ExperimentConfig, RunSummary, SchedulerKind};
use mcds_mcts::{Ablations, Tree};
use mcds_surrogate::train::evaluate;
use mcds_surrogate::{
    train_step, DecisionObjective, Surrogate, SurrogateConfig, SurrogateObjective,
};
use mcds_tensor::nn::Module;
use mcds_tensor::optim::AdamW;
use mcds_tensor::{no_grad, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

/// Wall-clock criteria must not share the CPU with each other.
fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: &str, pass: bool, detail: String) {
    let line = format!("[{}] {id} {detail}\n", if pass { "PASS" } else { "FAIL" });
    // straight to the terminal: the harness captures print! output
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "{id} failed: {detail}");
}

/// Live states from a busy simulator, each with at least one slot.
fn sim_states(seed: u64, count: usize, max_slots: usize) -> Vec<(SystemState, f64)> {
    let mut sim = Simulator::new(SimConfig {
        seed,
        lambda: 1.5,
        ..SimConfig::default()
    })
    .unwrap();
    let mut random = RandomScheduler::new(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let d = if sim.interval().is_multiple_of(2) {
            GreedyScheduler.decide(&sim)
        } else {
            random.decide(&sim)
        }
        .unwrap();
        let state = SystemState::capture(&sim, max_slots)
            .with_decision(&d)
            .unwrap();
        let objective = sim.step(&d).unwrap().metrics.objective;
        if state.n_slots() > 0 {
            out.push((state, objective));
        }
    }
    out
}

/// `|a − b| / max(|a|, |b|, 1e-6)`.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn c1_gradients_match_finite_differences() {
    let _guard = serial();
    let start = Instant::now();
    let h = 1e-6;
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for seed in 0..20u64 {
        let sim = SimConfig::default();
        let config = SurrogateConfig {
            hidden: 16,
            max_slots: 8,
            seed,
            ..SurrogateConfig::for_sim(&sim)
        };
        let mut model = Surrogate::new(config).unwrap();
        let data = sim_states(seed, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<&(SystemState, f64)> = sample(&mut rng, data.len(), 3)
            .into_iter()
            .map(|i| &data[i])
            .collect();
        let states: Vec<&SystemState> = batch.iter().map(|(s, _)| s).collect();
        let targets = Tensor::new(batch.iter().map(|(_, t)| *t).collect(), &[3, 1]).unwrap();

        // parameters, train mode
        let loss = |m: &mut Surrogate| {
            no_grad(|| {
                m.forward_train(&states)
                    .unwrap()
                    .mse_loss(&targets)
                    .unwrap()
                    .item()
            })
        };
        model.zero_grad();
        model
            .forward_train(&states)
            .unwrap()
            .mse_loss(&targets)
            .unwrap()
            .backward()
            .unwrap();
        let grads: Vec<Option<Vec<f64>>> = model
            .parameters()
            .iter()
            .map(|p| p.trainable().then(|| p.grad().unwrap()))
            .collect();
        for (k, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let n = grad.len();
            for j in sample(&mut rng, n, n.min(3)) {
                let original = model.parameters()[k].values().to_vec();
                let mut shifted = |delta: f64| {
                    let mut v = original.clone();
                    v[j] += delta;
                    model.parameters_mut()[k].set_values(v).unwrap();
                    loss(&mut model)
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                model.parameters_mut()[k].set_values(original).unwrap();
                let e = rel_err(grad[j], fd);
                assert!(e.is_finite());
                worst = worst.max(e);
                checked += 1;
            }
        }

        // relaxed decision input, eval mode
        let state = &batch[0].0;
        let objective = SurrogateObjective::new(&model, state).unwrap();
        let relaxed: Vec<f64> = (0..state.n_slots() * state.n_hosts)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let (_, grad) = objective.value_and_grad(&relaxed).unwrap();
        for j in 0..relaxed.len() {
            let at = |delta: f64| {
                let mut r = relaxed.clone();
                r[j] += delta;
                objective.value_and_grad(&r).unwrap().0
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            worst = worst.max(rel_err(grad[j], fd));
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "C1",
        worst < 1e-3 && secs < 60.0,
        format!("gradient check: worst relative error {worst:.2e} over {checked} coordinates, 20 seeds, {secs:.1}s"),
    );
}

/// Stored values rebuilt from the leaves with no library help.
fn recompute(tree: &Tree, i: usize) -> f64 {
    let node = tree.node(i);
    if node.children.is_empty() {
        return node.v;
    }
    let (mut weighted, mut total) = (0.0, 0.0);
    for &c in &node.children {
        let n = tree.node(c).n as f64;
        weighted += n * recompute(tree, c);
        total += n;
    }
    (node.q + weighted / total) / 2.0
}

#[test]
fn c2_tree_values_match_the_oracle() {
    let _guard = serial();
    let start = Instant::now();
    let mut sim = Simulator::new(SimConfig {
        seed: 3,
        lambda: 1.5,
        ..SimConfig::default()
    })
    .unwrap();
    for _ in 0..3 {
        let d = GreedyScheduler.decide(&sim).unwrap();
        sim.step(&d).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tree = Tree::new(sim);
    let iterations = 200;
    for _ in 0..iterations {
        let c2 = rng.gen_bool(0.5).then(|| rng.gen_range(0.0..1.0));
        let path = tree.select(rng.gen_range(0.0..1.0), c2);
        let leaf = *path.last().unwrap();
        let base = GreedyScheduler.decide(&tree.node(leaf).sim).unwrap();
        let ids = tree
            .expand(
                leaf,
                base,
                rng.gen_bool(0.5),
                rng.gen_range(1..6),
                32,
                &mut rng,
            )
            .unwrap();
        for i in ids {
            let mut policy = RandomScheduler::new(rng.gen());
            let v = mcds_core::sched::rollout(&tree.node(i).sim, &mut policy, 2).unwrap();
            tree.set_value(i, v);
        }
        tree.backpropagate(&path);
    }
    let (mut internal, mut value_mismatch, mut visit_mismatch) = (0, 0, 0);
    for (i, node) in tree.nodes() {
        if node.children.is_empty() {
            continue;
        }
        internal += 1;
        if node.v.to_bits() != recompute(&tree, i).to_bits() {
            value_mismatch += 1;
        }
        // one visit expanded the node, every later one went to a child
        let below: u64 = node.children.iter().map(|&c| tree.node(c).n - 1).sum();
        if node.n - 1 != 1 + below || node.children.iter().any(|&c| tree.node(c).n > node.n) {
            visit_mismatch += 1;
        }
    }
    let root_visits = tree.node(tree.root()).n - 1;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "C2",
        value_mismatch == 0 && visit_mismatch == 0 && root_visits == iterations && secs < 30.0,
        format!(
            "tree oracle: {internal} internal nodes, {value_mismatch} value and {visit_mismatch} visit mismatches, root visits {root_visits}/{iterations}, {secs:.1}s"
        ),
    );
}

#[test]
fn c3_simulator_invariants_hold() {
    let _guard = serial();
    let start = Instant::now();
    let (mut precedence, mut capacity, mut conservation, mut objective) = (0, 0, 0, 0);
    let (mut finished, mut worst_drift) = (0usize, 0.0f64);
    for seed in 0..5u64 {
        let mut sim = Simulator::new(SimConfig {
            seed,
            ..SimConfig::default()
        })
        .unwrap();
        let mut scheduler = RandomScheduler::new(seed);
        for _ in 0..200 {
            let d = scheduler.decide(&sim).unwrap();
            let out = sim.step(&d).unwrap();
            let m = &out.metrics;
            if !(0.0..=1.0).contains(&m.objective) {
                objective += 1;
            }
            for f in &m.finished {
                finished += 1;
                worst_drift = worst_drift.max((f.executed_total - f.total_length).abs());
                if f.executed_total != f.total_length {
                    conservation += 1;
                }
            }
            let mut ram = vec![0.0; sim.n_hosts()];
            for w in sim.workflows() {
                for (i, t) in w.tasks.iter().enumerate() {
                    let started = t.status.is_active() || t.status == TaskStatus::Done;
                    if started && w.parents(i).any(|p| w.tasks[p].status != TaskStatus::Done) {
                        precedence += 1;
                    }
                    if let (true, Some(h)) = (t.status.is_active(), t.host) {
                        ram[h] += t.demand_ram;
                    }
                }
            }
            capacity += ram
                .iter()
                .zip(sim.hosts())
                .filter(|(u, h)| **u > h.ram)
                .count();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "C3",
        precedence + capacity + conservation + objective == 0 && finished > 0 && secs < 120.0,
        format!(
            "simulator invariants: {precedence} precedence, {capacity} capacity, {conservation} conservation (max drift {worst_drift:e} over {finished} workflows), {objective} objective-range violations, {secs:.1}s"
        ),
    );
}

#[test]
fn c4_surrogate_learns_a_buffer() {
    let _guard = serial();
    let start = Instant::now();
    let sim = SimConfig::default();
    let config = SurrogateConfig {
        seed: 4,
        ..SurrogateConfig::for_sim(&sim)
    };
    let mut data = Vec::new();
    for (s, t) in sim_states(4, 200, config.max_slots) {
        if data.len() < 64 && !data.iter().any(|(d, _)| *d == s) {
            data.push((s, t));
        }
    }
    assert_eq!(data.len(), 64, "not enough distinct states");
    let batch: Vec<(&SystemState, f64)> = data.iter().map(|(s, t)| (s, *t)).collect();
    let mut model = Surrogate::new(config).unwrap();
    let mut optimizer = AdamW::new(1e-4, 0.01);
    let mut reached = None;
    let mut last = f64::NAN;
    for step in 1..=2000 {
        last = train_step(&mut model, &mut optimizer, &batch).unwrap();
        if last < 1e-3 {
            reached = Some(step);
            break;
        }
    }
    let eval_mse = evaluate(&model, &batch).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "C4",
        reached.is_some() && secs < 180.0,
        format!(
            "learnability: training MSE {last:.2e} after {} steps (limit 2000), eval-mode MSE {eval_mse:.2e}, {secs:.1}s",
            reached.map_or("2000".to_string(), |s| s.to_string())
        ),
    );
}

struct Campaign {
    _dir: tempfile::TempDir,
    config: ExperimentConfig,
    calibration: Calibration,
    runs: BTreeMap<String, RunSummary>,
    training_secs: f64,
    eval_secs: BTreeMap<String, f64>,
}

impl Campaign {
    fn run(&self, name: &str) -> &RunSummary {
        &self.runs[name]
    }

    fn objective(&self, name: &str) -> f64 {
        self.run(name).mean("objective")
    }
}

fn variant(
    base: &ExperimentConfig,
    scheduler: SchedulerKind,
    flags: &str,
    psi: usize,
) -> ExperimentConfig {
    let mut c = base.clone();
    c.scheduler = scheduler;
    c.ablations = if flags.is_empty() {
        Ablations::default()
    } else {
        Ablations::parse(flags).unwrap()
    };
    c.search.psi = psi;
    c
}

/// The desk configuration: defaults with 100 evaluation intervals.
fn campaign() -> &'static Campaign {
    static CAMPAIGN: OnceLock<Campaign> = OnceLock::new();
    CAMPAIGN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig {
            n_intervals: 100,
            ..ExperimentConfig::default()
        };
        let calibration = calibrate(&config).unwrap();
        config = with_deadlines(&config, &calibration);

        let started = Instant::now();
        config.output_dir = dir.path().join("train");
        run_training(&config, false).unwrap();
        let training_secs = started.elapsed().as_secs_f64();
        config.checkpoint = Some(config.output_dir.clone());
        config.output_dir = dir.path().join("eval");

        let mut runs = BTreeMap::new();
        let mut eval_secs = BTreeMap::new();
        let plan = [
            ("mcds", SchedulerKind::Mcds, "", 50),
            ("gobi_only", SchedulerKind::GobiOnly, "", 50),
            ("random", SchedulerKind::Random, "", 50),
            ("greedy", SchedulerKind::Greedy, "", 50),
            ("no_mcts", SchedulerKind::Mcds, "no_mcts", 50),
            ("no_dsm", SchedulerKind::Mcds, "no_dsm", 50),
            ("no_exploration", SchedulerKind::Mcds, "no_exploration", 50),
            (
                "no_domain_knowledge",
                SchedulerKind::Mcds,
                "no_domain_knowledge",
                50,
            ),
            ("mcds_psi5", SchedulerKind::Mcds, "", 5),
            ("mcds_psi25", SchedulerKind::Mcds, "", 25),
            ("gobi_only_psi5", SchedulerKind::GobiOnly, "", 5),
            ("gobi_only_psi25", SchedulerKind::GobiOnly, "", 25),
        ];
        for (name, scheduler, flags, psi) in plan {
            let mut c = variant(&config, scheduler, flags, psi);
            if scheduler == SchedulerKind::GobiOnly {
                // gobi_only labels ignore ψ
                c.output_dir = config.output_dir.join(name);
            }
            let started = Instant::now();
            runs.insert(name.to_string(), run_eval(&c).unwrap().summary);
            eval_secs.insert(name.to_string(), started.elapsed().as_secs_f64());
        }
        Campaign {
            _dir: dir,
            config,
            calibration,
            runs,
            training_secs,
            eval_secs,
        }
    })
}

#[test]
fn c5_mcds_beats_gobi_beats_random() {
    let _guard = serial();
    let c = campaign();
    let (m, g, r) = (
        c.objective("mcds"),
        c.objective("gobi_only"),
        c.objective("random"),
    );
    let diff = paired_interval(
        &c.run("mcds").metric("objective").per_seed,
        &c.run("random").metric("objective").per_seed,
        CONFIDENCE,
    )
    .unwrap();
    let secs = c.eval_secs["mcds"] + c.eval_secs["gobi_only"] + c.eval_secs["random"];
    verdict(
        "C5",
        m > g && g > r && diff.low > 0.0 && secs < 1200.0,
        format!(
            "ordering: objective mcds {m:.5} > gobi_only {g:.5} > random {r:.5} (greedy {:.5}); mcds − random 90% CI [{:.5}, {:.5}]; training {:.0}s, evaluation {secs:.0}s",
            c.objective("greedy"),
            diff.low,
            diff.high,
            c.training_secs
        ),
    );
}

#[test]
fn c6_every_ablation_degrades_mcds() {
    let _guard = serial();
    let c = campaign();
    let full = c.objective("mcds");
    let full_sla = c.run("mcds").mean("sla_rate");
    let flags = ["no_mcts", "no_dsm", "no_exploration", "no_domain_knowledge"];
    let mut parts = Vec::new();
    let mut degraded = true;
    let mut increases = Vec::new();
    for f in flags {
        let o = c.objective(f);
        let sla = c.run(f).mean("sla_rate");
        degraded &= o < full;
        increases.push((f, sla - full_sla));
        parts.push(format!("{f} {o:.5} (sla {sla:.4})"));
    }
    let largest = increases
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0;
    let secs: f64 = flags.iter().map(|f| c.eval_secs[*f]).sum();
    verdict(
        "C6",
        degraded && largest == "no_mcts" && secs < 2400.0,
        format!(
            "ablations: full mcds {full:.5} (sla {full_sla:.4}); {}; largest SLA increase {largest}; {secs:.0}s",
            parts.join(", ")
        ),
    );
}

#[test]
fn c7_sensitivity_to_psi() {
    let _guard = serial();
    let c = campaign();
    let (o5, o50) = (c.objective("mcds_psi5"), c.objective("mcds"));
    let t: Vec<f64> = ["mcds_psi5", "mcds_psi25", "mcds"]
        .iter()
        .map(|n| c.run(n).mean("scheduling_time_s"))
        .collect();
    let g: Vec<f64> = ["gobi_only_psi5", "gobi_only_psi25", "gobi_only"]
        .iter()
        .map(|n| c.objective(n))
        .collect();
    let flat = g.iter().all(|&x| x == g[0]);
    let secs: f64 = [
        "mcds_psi5",
        "mcds_psi25",
        "mcds",
        "gobi_only_psi5",
        "gobi_only_psi25",
        "gobi_only",
    ]
    .iter()
    .map(|n| c.eval_secs[*n])
    .sum();
    verdict(
        "C7",
        o50 >= o5 && t[0] < t[1] && t[1] < t[2] && flat && secs < 1800.0,
        format!(
            "sensitivity: objective ψ=5 {o5:.5}, ψ=50 {o50:.5}; scheduling time {:.4}s < {:.4}s < {:.4}s; gobi_only objective {:?}; {secs:.0}s",
            t[0], t[1], t[2], g
        ),
    );
}

#[test]
fn c8_calibrated_deadlines_are_self_consistent() {
    let _guard = serial();
    let start = Instant::now();
    let c = campaign();
    let rate = c.calibration.violation_rate();
    // replaying the calibration run against its own deadlines
    let replay = calibrate(&c.config).unwrap();
    let mut late = 0usize;
    let mut total = 0usize;
    for (app, rs) in &replay.responses {
        let d = c.calibration.deadlines[app];
        late += rs.iter().filter(|&&r| r > d).count();
        total += rs.len();
    }
    let replayed = late as f64 / total as f64;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "C8",
        (rate - 0.02).abs() <= 0.005 && replayed == rate,
        format!("calibration: violation rate {rate:.4} over {total} workflows (target 0.02 ± 0.005), replay {replayed:.4}, {secs:.1}s"),
    );
}

fn interval_csvs(root: &std::path::Path, label: &str, seeds: &[u64]) -> Vec<(PathBuf, Vec<u8>)> {
    seeds
        .iter()
        .map(|&s| {
            let p = seed_dir(&root.join(label), s).join("intervals.csv");
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect()
}

#[test]
fn c9_repeats_are_byte_identical() {
    let _guard = serial();
    let c = campaign();
    let repeat = tempfile::tempdir().unwrap();
    let mut checked = 0;
    let mut differing = Vec::new();
    let cases = [
        (SchedulerKind::Random, c.config.seeds.clone()),
        (SchedulerKind::Mcds, vec![0]),
    ];
    for (scheduler, seeds) in cases {
        let mut v = variant(&c.config, scheduler, "", 50);
        v.seeds = seeds.clone();
        let first = interval_csvs(&c.config.output_dir, &v.label(), &seeds);
        v.output_dir = repeat.path().to_path_buf();
        run_eval(&v).unwrap();
        let second = interval_csvs(repeat.path(), &v.label(), &seeds);
        for ((p, a), (_, b)) in first.iter().zip(&second) {
            checked += 1;
            if a != b {
                differing.push(p.display().to_string());
            }
        }
    }
    // the simulator-level check from C3, repeated
    let trace = |seed: u64| {
        let mut sim = Simulator::new(SimConfig {
            seed,
            ..SimConfig::default()
        })
        .unwrap();
        let mut s = RandomScheduler::new(seed);
        (0..200)
            .map(|_| {
                let d: SchedulingDecision = s.decide(&sim).unwrap();
                serde_json::to_string(&sim.step(&d).unwrap().metrics).unwrap()
            })
            .collect::<Vec<_>>()
    };
    let sim_repeat = (0..5).all(|s| trace(s) == trace(s));
    verdict(
        "C9",
        differing.is_empty() && sim_repeat,
        format!("determinism: {checked} metric CSVs re-run, differing: {differing:?}; simulator metric streams repeat: {sim_repeat}"),
    );
}
