use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uncertrack")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const CONFIG: &str = r#"suite = "ood"
tracker = "uncertainty"
seeds = [1, 2]
out = "runs/u"
"#;

#[test]
fn run_is_deterministic_and_comparable() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("u.toml"), CONFIG).unwrap();
    let out = ok(&bin(&["run", "--config", "u.toml"], dir));
    assert!(out.contains("mean: mota"));
    let first = snapshot(&dir.join("runs/u"));
    ok(&bin(&["run", "--config", "u.toml"], dir));
    assert_eq!(first, snapshot(&dir.join("runs/u")));

    ok(&bin(&["run", "--config", "u.toml", "--tracker", "baseline", "--out", "runs/b"], dir));
    let cmp = ok(&bin(&["compare", "runs/u", "runs/b", "--out", "runs/cmp"], dir));
    assert!(cmp.starts_with("metric,ours,reference,improvement"));
    assert!(dir.join("runs/cmp/comparison.json").exists());
    let own = ok(&bin(&["compare", "runs/u", "runs/u"], dir));
    for line in own.lines().skip(1) {
        assert!(line.contains(",0.0%,"), "{line}");
    }
}

#[test]
fn simulate_track_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&bin(&["simulate", "--suite", "clean", "--seed", "4", "--out", "sim"], dir));
    assert!(dir.join("sim/seed_4/detections.jsonl").exists());
    ok(&bin(&["track", "--config", "sim/replay_4.toml", "--out", "trk"], dir));
    let eval = ok(&bin(&["evaluate", "--tracks", "trk/seed_4/tracks.jsonl", "--truth", "sim/seed_4/truth.jsonl", "--seed", "4"], dir));
    let mut lines = eval.lines();
    assert!(lines.next().unwrap().starts_with("seed,mota"));
    assert!(lines.next().unwrap().starts_with("4,"));
}

#[test]
fn grid_run_and_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&bin(&["run", "--suite", "ood", "--tracker", "grid", "--seed", "0", "--out", "g"], dir));
    ok(&bin(&["plot-data", "g"], dir));
    assert!(dir.join("g/plot/likelihood.csv").exists());
    assert!(dir.join("g/seed_0/loglr.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(bin(&["run"], dir).status.code(), Some(1));
    assert_eq!(bin(&["run", "--suite", "nope"], dir).status.code(), Some(1));
    assert_eq!(bin(&["run", "--suite", "ood", "--seeds", "1,x"], dir).status.code(), Some(1));
    assert_eq!(bin(&["frobnicate"], dir).status.code(), Some(1));
    let missing = bin(&["evaluate", "--tracks", "none.jsonl", "--truth", "none.jsonl"], dir);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(dir.join("bad.jsonl"), "{\"frame\": 0, \"tracks\": [\n").unwrap();
    assert_eq!(bin(&["evaluate", "--tracks", "bad.jsonl", "--truth", "bad.jsonl"], dir).status.code(), Some(2));
    assert!(bin(&["--help"], dir).status.success());
}
