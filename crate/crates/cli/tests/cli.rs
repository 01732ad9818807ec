use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[policy]
hidden = [32]
time_dim = 8

[pretrain]
steps = 20
batch = 8

[finetune]
steps = 20
batch = 8

[corpus]
pretrain_demos = 3
"#;

fn capsule(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capsule"))
        .args(args)
        .arg("--runs")
        .arg(root.join("runs"))
        .env("CAPSULE_CONFIG", root.join("tiny.toml"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = capsule(root, args);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(
        out.status.success(),
        "capsule {args:?} failed:\n{text}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    text
}

fn find(dir: &Path, prefix: &str, name: &str) -> PathBuf {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.file_name().unwrap().to_str().unwrap().starts_with(prefix) {
            return p.join(name);
        }
    }
    panic!("no {prefix}* under {}", dir.display());
}

#[test]
fn collect_train_eval_ablate_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("tiny.toml"), TINY).unwrap();
    let runs = root.join("runs");

    let said = ok(root, &["collect", "--task", "navigation", "--count", "2", "--seed", "5"]);
    assert!(said.starts_with("2 demos"), "{said}");
    ok(root, &["collect", "--pretrain"]);
    let fine = find(&runs, "collect-navigation", "manifest.json");
    let pre = find(&runs, "collect-pretrain", "manifest.json");
    assert!(fine.exists() && pre.exists());

    let demo = fs::read_dir(fine.parent().unwrap().join("demos"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .unwrap();
    let said = ok(root, &["replay", "--demo", demo.to_str().unwrap()]);
    assert!(said.contains("success true"), "{said}");

    let ckpt = root.join("ours.ckpt");
    ok(
        root,
        &[
            "train",
            "--manifest",
            fine.to_str().unwrap(),
            "--pretrain-manifest",
            pre.to_str().unwrap(),
            "--out",
            ckpt.to_str().unwrap(),
        ],
    );
    assert!(ckpt.exists());

    ok(root, &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--task", "navigation", "--trials", "2"]);
    let csv = fs::read_to_string(find(&runs, "eval-", "ours.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "task,subtask,successes,trials,rate");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("navigation@one_half,total,"));

    ok(
        root,
        &[
            "ablate",
            "--modes",
            "ours,scratch",
            "--tasks",
            "navigation",
            "--pretrain-manifest",
            pre.to_str().unwrap(),
            "--finetune-manifest",
            fine.to_str().unwrap(),
            "--trials",
            "2",
        ],
    );
    let table = fs::read_to_string(find(&runs, "ablate-", "ablation.csv")).unwrap();
    assert_eq!(table.lines().collect::<Vec<_>>()[0], "mode,navigation@one_half");
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn idle_rollout_fails_navigation() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    let said = ok(tmp.path(), &["sim", "--task", "navigation", "--driver", "idle"]);
    assert!(said.contains("success false"), "{said}");
}

#[test]
fn missing_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    let out = capsule(tmp.path(), &["replay", "--demo", "/nope/demo.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing file"));
    let out = capsule(
        tmp.path(),
        &["ablate", "--pretrain-manifest", "/nope/a.json", "--finetune-manifest", "/nope/b.json"],
    );
    assert!(!out.status.success());
    let out = capsule(tmp.path(), &["sim", "--task", "swim"]);
    assert!(!out.status.success());
}
