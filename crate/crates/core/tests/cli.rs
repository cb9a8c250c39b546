use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sparsecbm"));
    c.env_remove("SPARSECBM_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn pipeline(dir: &Path) {
    run(dir, &["gen-data", "--out", "data", "--seed", "3", "--n-train", "120", "--n-dev", "40", "--n-test", "40", "--shift"]);
    let small = ["--emb-dim", "8", "--hidden", "8", "--latent-dim", "8"];
    let mut train = vec!["train", "--data", "data", "--out", "dense.json", "--epochs", "2", "--seed", "3"];
    train.extend(small);
    run(dir, &train);
    run(dir, &["prune", "--ckpt", "dense.json", "--data", "data", "--out", "sparse.json", "--fisher-samples", "16", "--block-size", "16", "--seed", "3"]);
    run(dir, &["eval", "--ckpt", "sparse.json", "--data", "data", "--json", "eval.json"]);
    run(dir, &["intervene", "--ckpt", "sparse.json", "--data", "data", "--r-grid", "0,0.01,0.05", "--out", "iv"]);
    run(dir, &["intervene", "--ckpt", "sparse.json", "--data", "data", "--mode", "oracle", "--out", "oracle"]);
    run(dir, &["explain", "--ckpt", "sparse.json", "--data", "data", "--example-id", "0", "--out", "explain"]);
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let fa = files(a.path());
    let fb = files(b.path());
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{} differs", name.display());
    }
    for expected in [
        "dense.json.log.jsonl",
        "sparse.json.prune.json",
        "iv/table.json",
        "iv/table.txt",
        "iv/log.jsonl",
        "explain/report.json",
        "explain/saliency.csv",
        "explain/mask_k0_encoder_0_weight.pgm",
        "data/schema.json",
    ] {
        assert!(fa.contains_key(Path::new(expected)), "{expected} missing");
    }
    let table: serde_json::Value =
        serde_json::from_slice(&fa[Path::new("iv/table.json")]).unwrap();
    let r0 = &table["rows"][0];
    assert_eq!(r0["si"], r0["ni"]);
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |seed: &str, out: &str| {
        let status = bin()
            .current_dir(dir.path())
            .env("SPARSECBM_SEED", seed)
            .args(["gen-data", "--out", out, "--n-train", "5", "--n-dev", "2", "--n-test", "2"])
            .output()
            .unwrap();
        assert!(status.status.success());
        std::fs::read(dir.path().join(out).join("train.jsonl")).unwrap()
    };
    assert_eq!(gen("11", "a"), gen("11", "b"));
    assert_ne!(gen("11", "a"), gen("12", "c"));
}

#[test]
fn config_file_supplies_defaults_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gen.cfg"), "n-train = 7\nn_dev = 3\nn-test = 3\nseed = 2\n").unwrap();
    run(dir.path(), &["--config", "gen.cfg", "gen-data", "--out", "d"]);
    let train = std::fs::read_to_string(dir.path().join("d/train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 7);
    run(dir.path(), &["--config", "gen.cfg", "gen-data", "--out", "e", "--n-train", "4"]);
    let train = std::fs::read_to_string(dir.path().join("e/train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 4);

    std::fs::write(dir.path().join("bad.cfg"), "n-train = 7\ncolour = blue\n").unwrap();
    let out = bin().current_dir(dir.path()).args(["--config", "bad.cfg", "gen-data", "--out", "f"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let code = |args: &[&str]| bin().current_dir(p).args(args).output().unwrap().status.code();
    assert_eq!(code(&["gen-data", "--out", "d", "--n-train", "0"]), Some(1));
    assert_eq!(code(&["train"]), Some(1));
    assert_eq!(code(&["gen-data", "--out", "d", "--n-train", "30", "--n-dev", "5", "--n-test", "5"]), Some(0));
    assert_eq!(code(&["train", "--data", "d", "--out", "m.json", "--epochs", "1", "--strategy", "sideways"]), Some(1));
    assert_eq!(code(&["train", "--data", "missing", "--out", "m.json"]), Some(2));
    std::fs::write(p.join("broken.json"), "{\"version\": 1, \"config\": 3}").unwrap();
    assert_eq!(code(&["eval", "--ckpt", "broken.json", "--data", "d"]), Some(2));
    std::fs::write(p.join("future.json"), "{\"version\": 99}").unwrap();
    assert_eq!(code(&["eval", "--ckpt", "future.json", "--data", "d"]), Some(2));
    assert_eq!(
        code(&["train", "--data", "d", "--out", "m.json", "--epochs", "1", "--emb-dim", "4", "--hidden", "4", "--latent-dim", "4"]),
        Some(0)
    );
    assert_eq!(code(&["prune", "--ckpt", "m.json", "--data", "d", "--out", "s.json", "--sparsity", "1.0"]), Some(1));
    assert_eq!(code(&["explain", "--ckpt", "m.json", "--data", "d", "--out", "x"]), Some(1));
    assert_eq!(code(&["explain", "--ckpt", "m.json", "--data", "d", "--example-id", "999", "--out", "x"]), Some(2));
    assert_eq!(code(&["explain", "--ckpt", "m.json", "--data", "d", "--input", "", "--out", "x"]), Some(0));
}

#[test]
fn interactive_intervention_reads_corrections() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    run(p, &["gen-data", "--out", "d", "--n-train", "30", "--n-dev", "5", "--n-test", "5"]);
    run(p, &["train", "--data", "d", "--out", "m.json", "--epochs", "1", "--emb-dim", "4", "--hidden", "4", "--latent-dim", "4"]);
    let mut child = bin()
        .current_dir(p)
        .args(["intervene", "--ckpt", "m.json", "--data", "d", "--interactive", "--example-id", "2", "--r-grid", "0.05", "--save", "edited.json"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"Food=Positive, Noise=unknown\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("example 2:"));
    assert!(text.contains("drop/grow edits"));
    assert!(p.join("edited.json").exists());
}
