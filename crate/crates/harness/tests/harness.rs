use std::path::Path;
use std::process::Command;

use mcds_harness::eval::{seed_dir, MODEL_FILE};
use mcds_harness::record::METRICS;
use mcds_harness::{
    emit_report, evaluate, run_eval, run_sensitivity, run_training, Error, ExperimentConfig,
    SchedulerKind,
};
use mcds_mcts::{Ablations, SearchConfig};
use mcds_surrogate::{FitConfig, ReplayBuffer, SurrogateConfig};

fn small(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        surrogate: SurrogateConfig {
            hidden: 8,
            max_slots: 16,
            ..SurrogateConfig::default()
        },
        search: SearchConfig {
            psi: 3,
            phi: 2,
            k_exp: 3,
            batch_size: 4,
            ..SearchConfig::default()
        },
        n_intervals: 8,
        seeds: vec![0, 1],
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    c.training.n_intervals = 6;
    c.training.checkpoint_every = 3;
    c.training.fit = Some(FitConfig {
        max_epochs: 2,
        batch_size: 4,
        ..FitConfig::default()
    });
    c.sim.lambda = 1.0;
    for app in c.sim.app_labels() {
        c.sim.deadlines.insert(app.to_string(), 6.0);
    }
    c
}

fn trained(root: &Path) -> ExperimentConfig {
    let mut c = small(&root.join("train"));
    run_training(&c, false).unwrap();
    c.checkpoint = Some(root.join("train"));
    c.output_dir = root.join("eval");
    c
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn one_training_interval_leaves_one_datapoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.seeds = vec![3];
    c.training.n_intervals = 1;
    let runs = run_training(&c, false).unwrap();
    assert_eq!(runs[0].metrics.len(), 1);
    let seed = seed_dir(dir.path(), 3);
    assert_eq!(
        ReplayBuffer::load(&seed.join("online/buffer.jsonl"), 10)
            .unwrap()
            .len(),
        1
    );
    assert_eq!(
        ReplayBuffer::load(&seed.join("buffer.jsonl"), 10)
            .unwrap()
            .len(),
        1
    );
    assert!(seed.join(MODEL_FILE).is_file());
}

#[test]
fn resumed_training_continues_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut whole = small(&dir.path().join("whole"));
    whole.seeds = vec![4];
    whole.training.n_intervals = 9;
    run_training(&whole, false).unwrap();

    let mut part = ExperimentConfig {
        output_dir: dir.path().join("part"),
        ..whole.clone()
    };
    part.training.n_intervals = 6;
    run_training(&part, false).unwrap();
    part.training.n_intervals = 9;
    let resumed = run_training(&part, true).unwrap();
    assert_eq!(resumed[0].metrics.len(), 9);

    let (a, b) = (
        seed_dir(&whole.output_dir, 4),
        seed_dir(&part.output_dir, 4),
    );
    for file in [
        "train.csv",
        "losses.csv",
        "model.ckpt",
        "buffer.jsonl",
        "online/state.json",
    ] {
        assert_eq!(read(a.join(file)), read(b.join(file)), "{file}");
    }
}

#[test]
fn random_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(&dir.path().join("a"));
    c.scheduler = SchedulerKind::Random;
    let first = run_eval(&c).unwrap();
    c.output_dir = dir.path().join("b");
    let second = run_eval(&c).unwrap();
    assert_eq!(
        first.summary.without_timing(),
        second.summary.without_timing()
    );
    for seed in [0, 1] {
        let file = |root: &str| {
            seed_dir(&dir.path().join(root).join("random"), seed).join("intervals.csv")
        };
        assert_eq!(read(file("a")), read(file("b")));
    }
}

#[test]
fn gobi_only_matches_mcds_without_the_tree() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = trained(dir.path());
    c.scheduler = SchedulerKind::GobiOnly;
    run_eval(&c).unwrap();
    let gobi = c.output_dir.join(c.label());
    c.scheduler = SchedulerKind::Mcds;
    c.ablations = Ablations {
        no_mcts: true,
        ..Ablations::default()
    };
    run_eval(&c).unwrap();
    let ablated = c.output_dir.join(c.label());
    assert_ne!(gobi, ablated);
    for seed in [0, 1] {
        let file = |root: &Path| seed_dir(root, seed).join("decisions.jsonl");
        assert_eq!(read(file(&gobi)), read(file(&ablated)));
    }
}

#[test]
fn sla_rate_is_violations_over_completions() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.scheduler = SchedulerKind::Greedy;
    c.n_intervals = 40;
    for d in c.sim.deadlines.values_mut() {
        *d = 3.0;
    }
    let eval = run_eval(&c).unwrap();
    let rates = &eval.summary.metric("sla_rate").per_seed;
    for (k, seed) in [0, 1].into_iter().enumerate() {
        let mut reader = csv::Reader::from_path(
            seed_dir(&dir.path().join("greedy"), seed).join("intervals.csv"),
        )
        .unwrap();
        let headers = reader.headers().unwrap().clone();
        let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
        let (v, n) = (col("sla_violations"), col("completed_workflows"));
        let (mut late, mut done) = (0u64, 0u64);
        for row in reader.records() {
            let row = row.unwrap();
            late += row[v].parse::<u64>().unwrap();
            done += row[n].parse::<u64>().unwrap();
        }
        assert!(done > 0 && late > 0, "the check needs some violations");
        assert_eq!(rates[k], late as f64 / done as f64);
    }
}

#[test]
fn a_single_point_sweep_is_a_plain_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = trained(dir.path());
    c.search.psi = 3;
    let plain = evaluate(&c).unwrap().summary;
    c.output_dir = dir.path().join("sweep");
    let rows = run_sensitivity(&c, &[3]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].summary.without_timing(), plain.without_timing());
    assert!(c.output_dir.join("sensitivity.csv").is_file());
    assert!(matches!(
        run_sensitivity(&c, &[]),
        Err(Error::ConfigInvalid(_))
    ));
}

#[test]
fn reports_are_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.scheduler = SchedulerKind::Random;
    let random = evaluate(&c).unwrap().summary;
    c.scheduler = SchedulerKind::Greedy;
    let greedy = evaluate(&c).unwrap().summary;

    let one = dir.path().join("one");
    emit_report(std::slice::from_ref(&random), &one).unwrap();
    let rows = csv::Reader::from_path(one.join("summary.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(rows, METRICS.len());

    let two = dir.path().join("two");
    let files = emit_report(&[random.clone(), greedy.clone()], &two).unwrap();
    let svg = String::from_utf8(read(two.join("metric-objective.svg"))).unwrap();
    // background plus one bar per scheduler
    assert_eq!(svg.matches("<rect").count(), 3);
    assert!(svg.contains(">random<") && svg.contains(">greedy<"));

    let again = dir.path().join("again");
    emit_report(&[random, greedy], &again).unwrap();
    for f in files {
        let name = f.file_name().unwrap();
        assert_eq!(read(&f), read(again.join(name)), "{name:?}");
    }
    assert!(emit_report(&[], &again).is_err());
}

#[test]
fn unwritable_output_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let mut c = small(&blocker.join("sub"));
    c.scheduler = SchedulerKind::Greedy;
    assert!(matches!(
        run_eval(&c),
        Err(Error::OutputDirUnwritable { .. })
    ));
    let s = evaluate(&ExperimentConfig {
        output_dir: dir.path().into(),
        ..c
    })
    .unwrap()
    .summary;
    assert!(matches!(
        emit_report(&[s], &blocker.join("r")),
        Err(Error::OutputDirUnwritable { .. })
    ));
}

#[test]
fn foreign_checkpoints_are_incompatible() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    let path = dir.path().join("model.ckpt");
    std::fs::write(&path, b"definitely not a model").unwrap();
    c.checkpoint = Some(path.clone());
    assert!(matches!(
        evaluate(&c),
        Err(Error::CheckpointIncompatible { .. })
    ));

    // a model of another width
    let other = trained(&dir.path().join("other"));
    c.checkpoint = other.checkpoint;
    c.surrogate.hidden = 12;
    assert!(matches!(
        evaluate(&c),
        Err(Error::CheckpointIncompatible { .. })
    ));
}

#[test]
fn uncalibrated_evaluation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.scheduler = SchedulerKind::Random;
    c.sim.deadlines.clear();
    assert!(matches!(evaluate(&c), Err(Error::ConfigInvalid(_))));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_mcds");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n_intervals": 0}"#).unwrap();
    let status = Command::new(bin)
        .args(["eval", "--scheduler", "random", "--config"])
        .arg(&bad)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let status = Command::new(bin)
        .args(["eval", "--scheduler", "greedy", "--ablate", "no_dsm"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let mut c = small(&dir.path().join("out"));
    c.scheduler = SchedulerKind::Random;
    let good = dir.path().join("good.json");
    c.save(&good).unwrap();
    let status = Command::new(bin)
        .args(["eval", "--seed", "5", "--config"])
        .arg(&good)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(seed_dir(&dir.path().join("out/random"), 5)
        .join("intervals.csv")
        .is_file());

    let missing = dir.path().join("missing.json");
    let status = Command::new(bin)
        .args(["report", "--out"])
        .arg(dir.path().join("r"))
        .arg(&missing)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}
