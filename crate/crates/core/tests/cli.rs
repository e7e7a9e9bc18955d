use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
n_trackees = 2

[world]
n_identities = 12
images_per_identity = 6
dims = 16
aux_pool_size = 20

[protection]
steps = 10
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trackgame")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_writes_an_importable_world() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&["gen", "--config", &cfg, "--seed", "3", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let world = trackgame::format::import_embeddings(dir.path().join("world.csv")).unwrap();
    assert_eq!(world.images.len(), 72);
    assert_eq!(world.seed, 3);
}

#[test]
fn track_is_reproducible_and_report_prints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("r");
    let read_all = || {
        ["iterations.csv", "summary.csv", "table.csv", "summary.json"]
            .map(|f| std::fs::read(out_dir.join(f)).unwrap())
    };
    assert!(run(&["track", "--config", &cfg, "--out", s(&out_dir)]).status.success());
    let first = read_all();
    assert!(run(&["track", "--config", &cfg, "--out", s(&out_dir)]).status.success());
    assert_eq!(first, read_all());
    assert!(out_dir.join("timing.json").exists());

    let header = String::from_utf8(first[0].clone()).unwrap();
    assert!(header.starts_with("run_id,iteration,tp,fp,gallery_size\n"));
    let summary = String::from_utf8(first[1].clone()).unwrap();
    assert!(summary.starts_with("run_id,strategy,mode,initial_knowledge,tsr,psr,fp_total,T\n"));

    let rep = run(&["report", "--out", s(&out_dir)]);
    assert!(rep.status.success());
    assert!(String::from_utf8_lossy(&rep.stdout).contains("divtrackee"));
}

#[test]
fn sweep_and_ablate_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&["sweep", "--config", &cfg, "--out", s(dir.path()), "--grid", "delta=0.1,0.4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 4);
    assert!(sweep.starts_with("delta,scheme,"));

    let out = run(&["ablate", "--config", &cfg, "--out", s(dir.path()), "--arms", "full,drop_both"]);
    assert!(out.status.success());
    let abl = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(abl.lines().count(), 1 + 2 * 4);
}

#[test]
fn protect_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&["protect", "--config", &cfg, "--out", s(dir.path()), "--scheme", "fixed_aux"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("protected_fixed_aux.csv")).unwrap();
    // two trackees, six images each, all flagged protected
    assert_eq!(text.lines().count(), 12);
    assert!(text.lines().all(|l| l.split(',').nth(2) == Some("1")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[protection]\nalpah1 = 0.3\n").unwrap();
    let out = run(&["track", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpah1"));

    let cfg = small_config(dir.path());
    assert_eq!(run(&["sweep", "--config", &cfg, "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(run(&["track", "--config", "/nonexistent.toml"]).status.code(), Some(2));
    assert_eq!(run(&["protect", "--scheme", "bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["report", "--out", s(&dir.path().join("missing"))]).status.code(), Some(1));
    let world = dir.path().join("w.csv");
    std::fs::write(&world, "1,2,0,0.5,abc\n").unwrap();
    assert_eq!(
        run(&["track", "--config", &cfg, "--world", s(&world), "--out", s(dir.path())]).status.code(),
        Some(1)
    );
}
