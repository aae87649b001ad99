use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dapt::cli::{RunConfig, RESOLVED_CONFIG};
use dapt::encoder::PretrainConfig;
use dapt::scenedata::DatasetSpec;
use dapt::trainer::{MetricsReport, Protocol};

fn tiny_config(out: &Path) -> RunConfig {
    let mut c = RunConfig {
        out_dir: out.to_path_buf(),
        seeds: vec![1, 2],
        protocol: Protocol::FewShot { shots: 2 },
        ..RunConfig::default()
    };
    c.dataset = DatasetSpec {
        num_classes: 4,
        train_per_class: 4,
        test_per_class: 3,
        ..c.dataset
    };
    c.pretrain = PretrainConfig {
        scenes_per_class: 6,
        eval_per_class: 3,
        eval_classes: 4,
        epochs: 1,
        ..c.pretrain
    };
    c.train.epochs = 1;
    c
}

fn write_config(dir: &Path, c: &RunConfig) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, c.to_toml()).unwrap();
    p
}

fn dapt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dapt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = dapt(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn no_partials(dir: &Path) {
    for e in fs::read_dir(dir).unwrap() {
        let name = e.unwrap().file_name().to_string_lossy().into_owned();
        assert!(!name.ends_with(".partial"), "{name}");
    }
}

/// Header fields of a binary netpbm file.
fn netpbm_header(path: &Path) -> (String, usize, usize) {
    let bytes = fs::read(path).unwrap();
    let head = String::from_utf8_lossy(&bytes[..16]).into_owned();
    let mut t = head.split_whitespace();
    let magic = t.next().unwrap().to_string();
    let w = t.next().unwrap().parse().unwrap();
    let h = t.next().unwrap().parse().unwrap();
    (magic, w, h)
}

#[test]
fn missing_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let text = tiny_config(dir.path()).to_toml().replace("momentum = 0.0\n", "");
    let p = dir.path().join("broken.toml");
    fs::write(&p, text).unwrap();
    let o = dapt(&["pretrain", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("momentum"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(dapt(&["train"]).status.code(), Some(2));
    assert_eq!(dapt(&["nonsense"]).status.code(), Some(2));
    assert_eq!(
        dapt(&["pretrain", "--config", "x.toml", "--mask-source", "magic"]).status.code(),
        Some(2)
    );
}

#[test]
fn missing_artifacts_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config(dir.path()));
    let o = dapt(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("backbone.ckpt"), "{}", stderr(&o));
    let o = dapt(&["eval", "--config", "nowhere/run.toml"]);
    assert!(stderr(&o).contains("nowhere/run.toml"), "{}", stderr(&o));
}

#[test]
fn full_command_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg_path = write_config(dir.path(), &tiny_config(&run));
    let cfg = cfg_path.to_str().unwrap();

    ok(&["pretrain", "--config", cfg]);
    let ckpt = run.join("backbone.ckpt");
    let first = fs::read(&ckpt).unwrap();
    let summary = fs::read_to_string(run.join("pretrain_summary.json")).unwrap();
    assert!(run.join("pretrain_metrics.csv").exists());
    assert!(run.join(RESOLVED_CONFIG).exists());

    // Rerunning reproduces the checkpoint and its reported score.
    let again = dir.path().join("again");
    ok(&["pretrain", "--config", cfg, "--out", again.to_str().unwrap()]);
    assert_eq!(fs::read(again.join("backbone.ckpt")).unwrap(), first);
    assert_eq!(fs::read_to_string(again.join("pretrain_summary.json")).unwrap(), summary);

    // An untrained prompt file scores exactly like the bare backbone.
    let zs: MetricsReport = serde_json::from_slice(&ok(&["eval", "--config", cfg]).stdout).unwrap();
    let b2n = dir.path().join("b2n");
    ok(&[
        "train",
        "--config",
        cfg,
        "--weights-preset",
        "base-to-novel",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        b2n.to_str().unwrap(),
    ]);
    let echoed = RunConfig::load(&b2n.join(RESOLVED_CONFIG)).unwrap();
    assert_eq!(echoed.train.weights.visual, 0.4);
    assert_eq!(echoed.train.weights.background, 0.5);
    assert!(b2n.join("epochs.csv").exists());
    no_partials(&b2n);

    let untrained = dir.path().join("untrained.ckpt");
    let bb = dapt::encoder::Backbone::load(&ckpt).unwrap();
    dapt::encoder::PromptSet::init_for(&bb, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))
        .save(&untrained, bb.config())
        .unwrap();
    let with: MetricsReport = serde_json::from_slice(
        &ok(&["eval", "--config", cfg, "--prompts", untrained.to_str().unwrap()]).stdout,
    )
    .unwrap();
    assert_eq!(with, zs);

    let o = ok(&["ablate", "--config", cfg, "--plan", "loss-items", "--shots", "1"]);
    let csv = fs::read_to_string(run.join("ablation-loss-items.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("variant,"));
    assert!(run.join("ablation-loss-items.json").exists());

    ok(&["visualize", "--config", cfg, "--count", "5"]);
    let vis = run.join("visualize");
    let mut pgm = 0;
    let mut ppm = 0;
    for e in fs::read_dir(&vis).unwrap() {
        let p = e.unwrap().path();
        let (magic, w, h) = netpbm_header(&p);
        assert_eq!((w, h), (32, 32));
        match magic.as_str() {
            "P5" => pgm += 1,
            "P6" => ppm += 1,
            m => panic!("{m}"),
        }
    }
    assert_eq!((pgm, ppm), (5, 5));
    no_partials(&run);
}

#[test]
fn base_to_novel_summary_carries_the_harmonic_mean() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut c = tiny_config(&run);
    c.protocol = Protocol::BaseToNovel { shots: 2 };
    let cfg_path = write_config(dir.path(), &c);
    let cfg = cfg_path.to_str().unwrap();
    ok(&["pretrain", "--config", cfg]);
    let o = ok(&["train", "--config", cfg, "--seed", "4"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("hm "));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 4);
    assert!(summary["report"]["harmonic_mean"].is_number());
}

#[test]
fn encoder_mismatch_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let c = tiny_config(&run);
    let cfg_path = write_config(dir.path(), &c);
    ok(&["pretrain", "--config", cfg_path.to_str().unwrap()]);

    let mut other = c.clone();
    other.encoder.layers = 2;
    other.out_dir = dir.path().join("other");
    let p = dir.path().join("other.toml");
    fs::write(&p, other.to_toml()).unwrap();
    let o = dapt(&[
        "train",
        "--config",
        p.to_str().unwrap(),
        "--checkpoint",
        run.join("backbone.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("different encoder"), "{}", stderr(&o));
    assert!(!other.out_dir.join("prompts.ckpt").exists());
}
