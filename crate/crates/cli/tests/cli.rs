use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oneshot-seg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path, n: usize) {
    let out = bin(&["synth", "--out", dir.to_str().unwrap(), "--num-queries", &n.to_string(), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn run_args(data: &Path, out: &Path) -> Vec<String> {
    let p = |s: &str| data.join(s).to_string_lossy().into_owned();
    vec![
        "--support-image".into(),
        p("support.png"),
        "--support-mask".into(),
        p("support_mask.png"),
        "--query-dir".into(),
        p("queries"),
        "--gt-dir".into(),
        p("gt"),
        "--features-dir".into(),
        p("features"),
        "--scene-dir".into(),
        p("scenes"),
        "--backend".into(),
        "oracle".into(),
        "--workers".into(),
        "2".into(),
        "--out-dir".into(),
        out.to_string_lossy().into_owned(),
    ]
}

fn as_refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn synth_then_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 4);
    let out = dir.path().join("out");
    let args = run_args(&data, &out);
    let res = bin(&as_refs(&args));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.starts_with("queries 4 failed 0"), "{stdout}");
    assert!(out.join("summary.json").exists());
    assert!(out.join("masks/q003.png").exists());
}

#[test]
fn config_file_and_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3);
    let cfg = dir.path().join("cfg.toml");
    fs::write(
        &cfg,
        format!(
            "fixed_tau = 0.6\n[pir]\nt_max = 3\n[paths]\nscene_dir = {:?}\n",
            data.join("scenes")
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let mut args = run_args(&data, &out);
    let scene_at = args.iter().position(|a| a == "--scene-dir").unwrap();
    args.drain(scene_at..scene_at + 2);
    args.extend(["--config".into(), cfg.to_string_lossy().into_owned(), "--ablation".into(), "gas,pir".into()]);
    let res = bin(&as_refs(&args));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(out.join("ablation/no_pir/masks/q000.png").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1);
    let out = dir.path().join("out");

    let mut args = run_args(&data, &out);
    args.extend(["--ablation".into(), "slic".into()]);
    assert_eq!(bin(&as_refs(&args)).status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[gas]\ntau_min = 0.9\ntau_max = 0.1\n").unwrap();
    let mut args = run_args(&data, &out);
    args.extend(["--config".into(), cfg.to_string_lossy().into_owned()]);
    assert_eq!(bin(&as_refs(&args)).status.code(), Some(2));

    fs::write(&cfg, "[gas]\nunknown_key = 1\n").unwrap();
    assert_eq!(bin(&as_refs(&args)).status.code(), Some(2));

    let args = run_args(&dir.path().join("nowhere"), &out);
    assert_eq!(bin(&as_refs(&args)).status.code(), Some(2));
}

#[test]
fn total_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 2);
    for id in ["q000", "q001"] {
        fs::remove_file(data.join("features").join(format!("{id}.npy"))).unwrap();
    }
    let out = dir.path().join("out");
    let args = run_args(&data, &out);
    let res = bin(&as_refs(&args));
    assert_eq!(res.status.code(), Some(1));
    assert!(out.join("summary.json").exists());
}
