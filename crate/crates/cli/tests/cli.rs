use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
# small enough to train in well under a second
env.img_size=8
env.max_steps=30
model.deter=8
model.stoch=4
model.embed=8
model.hidden=8
model.cnn_depth=2
agent.units=8
trainer.seed_episodes=2
trainer.pretrain_steps=2
trainer.max_epochs=2
trainer.train_freq=2
trainer.batch=2
trainer.seq_len=4
trainer.horizon=3
trainer.eval_every=1
trainer.eval_episodes=2
";

fn lvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvm"))
        .args(args)
        .env_remove("LVM_OUT")
        .output()
        .expect("run lvm")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "lvm failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    assert!(!out.status.success(), "expected failure");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    fs::write(&path, TINY).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(cfg: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--config", s(cfg), "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&lvm(&args))
}

#[test]
fn training_is_reproducible_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let report = train(&cfg, &a, &["--seed", "7"]);
    train(&cfg, &b, &["--seed", "7"]);
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert!(csv.contains("# seed=7\n"));
    assert!(csv.contains("# trainer.single_critic=false\n"));
    assert!(report.contains("mean_abs_lateral_error="));
    assert!(report.contains("random.mean_episode_length="));
    assert!(a.join("checkpoint").join("manifest.txt").exists());
    assert_eq!(fs::read_to_string(a.join("report.txt")).unwrap(), report);
}

#[test]
fn single_critic_flag_reaches_the_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    train(&cfg, &out, &["--single-critic"]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.contains("# trainer.single_critic=true\n"));
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    let j_v2 = header.split(',').position(|c| c == "J_V2").unwrap();
    for row in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        assert_eq!(row.split(',').nth(j_v2), Some(""));
    }
}

#[test]
fn config_errors_leave_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let missing = dir.path().join("nope.cfg");
    let err = stderr(&lvm(&["train", "--config", s(&missing), "--out", s(&out)]));
    assert!(err.contains("nope.cfg"), "{err}");

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "env.c3=0.5\n").unwrap();
    let err = stderr(&lvm(&["train", "--config", s(&bad), "--out", s(&out)]));
    assert!(err.contains("env.c3"), "{err}");

    fs::write(&bad, "trainer.batchh=4\n").unwrap();
    let err = stderr(&lvm(&["train", "--config", s(&bad), "--out", s(&out)]));
    assert!(err.contains("trainer.batchh"), "{err}");
    assert!(!out.exists());
}

#[test]
fn output_root_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let root = dir.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_lvm"))
        .args(["train", "--config", s(&cfg)])
        .env("LVM_OUT", &root)
        .output()
        .unwrap();
    ok(&out);
    assert!(root.join("metrics.csv").exists());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (full, split) = (dir.path().join("full"), dir.path().join("split"));
    train(&cfg, &full, &[]);
    train(&cfg, &split, &["--set", "trainer.max_epochs=1"]);
    train(&cfg, &split, &["--resume"]);
    assert_eq!(
        fs::read_to_string(full.join("metrics.csv")).unwrap(),
        fs::read_to_string(split.join("metrics.csv")).unwrap()
    );
}

#[test]
fn eval_reports_per_episode_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    train(&cfg, &run, &[]);
    let ckpt = run.join("checkpoint");
    let e1 = dir.path().join("e1");
    let first = ok(&lvm(&["eval", "--checkpoint", s(&ckpt), "--out", s(&e1)]));
    let second = ok(&lvm(&["eval", "--checkpoint", s(&ckpt), "--out", s(&e1)]));
    assert_eq!(first, second);
    assert!(first.contains("episodes=20\n"));
    let csv = fs::read_to_string(e1.join("eval_episodes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 20);

    let e2 = dir.path().join("e2");
    ok(&lvm(&["eval", "--checkpoint", s(&ckpt), "--episodes", "3", "--out", s(&e2)]));
    let csv = fs::read_to_string(e2.join("eval_episodes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    for row in csv.lines().skip(1) {
        let cells: Vec<&str> = row.split(',').collect();
        let len: usize = cells[3].parse().unwrap();
        assert_eq!(cells[5].split(';').count(), len);
    }

    let tensors = ckpt.join("tensors.bin");
    let mut bytes = fs::read(&tensors).unwrap();
    bytes[10] ^= 0xff;
    fs::write(&tensors, bytes).unwrap();
    let err = stderr(&lvm(&["eval", "--checkpoint", s(&ckpt), "--out", s(&e2)]));
    assert!(err.contains("checksum") || err.contains("corrupt"), "{err}");
}

fn episode_file(run: &Path) -> PathBuf {
    let dir = run.join("checkpoint").join("replay").join("episodes");
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.remove(0)
}

#[test]
fn reconstruction_grid_matches_reported_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    train(&cfg, &run, &[]);
    let png = dir.path().join("grid.png");
    let ckpt = run.join("checkpoint");
    let episode = episode_file(&run);
    let out = ok(&lvm(&[
        "reconstruct",
        "--checkpoint",
        s(&ckpt),
        "--episode",
        s(&episode),
        "--output",
        s(&png),
        "--frames",
        "4",
    ]));
    let img = image::open(&png).unwrap().to_luma8();
    let cell = 8 * 4;
    assert_eq!((img.width(), img.height()), (4 * cell, 2 * cell));

    let reported: Vec<f64> = out
        .lines()
        .filter(|l| l.starts_with("frame "))
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(reported.len(), 4);
    for (col, mse) in reported.iter().enumerate() {
        let mut se = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                let px = |row: u32| img.get_pixel(col as u32 * cell + x * 4, row * cell + y * 4)[0] as f64 / 255.0;
                se += (px(0) - px(1)).powi(2);
            }
        }
        // the PNG holds 8-bit copies of the arrays the error was computed from
        assert!((se / 64.0 - mse).abs() < 5e-3, "frame {col}: {} vs {mse}", se / 64.0);
    }

    let other_cfg = dir.path().join("other.cfg");
    fs::write(&other_cfg, TINY.replace("env.img_size=8", "env.img_size=16")).unwrap();
    let other = dir.path().join("other");
    train(&other_cfg, &other, &[]);
    let err = stderr(&lvm(&[
        "reconstruct",
        "--checkpoint",
        s(&ckpt),
        "--episode",
        s(&episode_file(&other)),
        "--output",
        s(&dir.path().join("bad.png")),
    ]));
    assert!(err.contains("ep_"), "{err}");
}

fn metrics_with_returns(dir: &Path, name: &str, returns: &[Option<f64>]) -> PathBuf {
    let mut csv = String::from("# seed=0\n");
    csv.push_str(&lvm_core::metrics::COLUMNS.join(","));
    csv.push('\n');
    for (i, r) in returns.iter().enumerate() {
        let cells: Vec<String> = lvm_core::metrics::COLUMNS
            .iter()
            .map(|c| match *c {
                "epoch" => (i + 1).to_string(),
                "env_steps" => (100 * (i + 1)).to_string(),
                "eval_return" => r.map(|v| v.to_string()).unwrap_or_default(),
                "J_V2" => String::new(),
                _ => "0".into(),
            })
            .collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, csv).unwrap();
    path
}

#[test]
fn plot_draws_curves_and_bands() {
    let dir = tempfile::tempdir().unwrap();
    let one = metrics_with_returns(dir.path(), "one.csv", &[Some(-50.0), None, Some(-20.0)]);
    let svg_path = dir.path().join("one.svg");
    ok(&lvm(&["plot", s(&one), "--output", s(&svg_path)]));
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches("class=\"curve\"").count(), 1);
    assert_eq!(svg.matches("class=\"band\"").count(), 0);

    let mut args = vec!["plot".to_string()];
    for i in 0..5 {
        let p = metrics_with_returns(dir.path(), &format!("s{i}.csv"), &[Some(-50.0 + i as f64), Some(-10.0)]);
        args.push(format!("double={}", p.display()));
    }
    let five = dir.path().join("five.svg");
    args.extend(["--output".into(), five.display().to_string()]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&lvm(&args));
    let svg = fs::read_to_string(&five).unwrap();
    assert_eq!(svg.matches("class=\"curve\"").count(), 1);
    assert_eq!(svg.matches("class=\"band\"").count(), 1);
    assert!(svg.contains("double (n=5)"));
}

#[test]
fn plot_rejects_empty_and_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = metrics_with_returns(dir.path(), "empty.csv", &[None, None]);
    let out = dir.path().join("x.svg");
    let err = stderr(&lvm(&["plot", s(&empty), "--output", s(&out)]));
    assert!(err.contains("eval_return"), "{err}");

    let bad = metrics_with_returns(dir.path(), "bad.csv", &[Some(1.0), Some(2.0)]);
    let mut text = fs::read_to_string(&bad).unwrap();
    text.push_str("3,oops\n");
    fs::write(&bad, text).unwrap();
    let err = stderr(&lvm(&["plot", s(&bad), "--output", s(&out)]));
    assert!(err.contains("row 5"), "{err}");
    assert!(!out.exists());
}
