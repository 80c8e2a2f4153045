use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bcosb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcosb")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("[grid]\npreset = \"desk\"\n[bands]\nintervals = [[0.0, 2.0e6]]\n{extra}\n")).unwrap();
    path.display().to_string()
}

#[test]
fn synth_writes_channel_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let o = bcosb(&["synth", "--config", &config, "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("channel.csv")).unwrap();
    assert!(csv.lines().count() > 128);
}

#[test]
fn solve_and_sweep_exit_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "[weights]\nw1 = [0.0, 1.0]");
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();

    let o = bcosb(&["solve", "--config", &config, "--out", out, "--weights", "0.6,0.4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("w=[0.6, 0.4]"), "{stdout}");
    assert!(stdout.contains("status: Clean"));

    let o = bcosb(&["--jobs", "1", "sweep", "--config", &config, "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let region = fs::read_to_string(Path::new(out).join("rate_region.csv")).unwrap();
    assert!(region.starts_with("w1,w2,R1_mbps,R2_mbps,lambda_1,lambda_2,converged\n"));
    assert_eq!(region.lines().count(), 3);
    assert!(Path::new(out).join("summary.json").exists());
}

#[test]
fn channel_csv_round_trips_through_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let o = bcosb(&["synth", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());

    let csv_config = tmp.path().join("csv.toml");
    fs::write(
        &csv_config,
        "[grid]\npreset = \"desk\"\n[bands]\nintervals = [[0.0, 2.0e6]]\n[channel]\ncsv = \"out/channel.csv\"\n",
    )
    .unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (cfg, dir) in [(&config, &a), (&csv_config.display().to_string(), &b)] {
        let o = bcosb(&["solve", "--config", cfg, "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ra = fs::read_to_string(a.join("rate_region.csv")).unwrap();
    let rb = fs::read_to_string(b.join("rate_region.csv")).unwrap();
    let rate = |s: &str| -> f64 { s.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap() };
    assert!((rate(&ra) - rate(&rb)).abs() <= 1e-9 * rate(&ra).max(1.0));
}

#[test]
fn empty_band_plan_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("none.toml");
    fs::write(&path, "[grid]\npreset = \"desk\"\n[bands]\npreset = \"none\"\n").unwrap();
    let out = tmp.path().join("out");
    let o = bcosb(&["solve", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("rates=[0.000, 0.000]"));
}

#[test]
fn invalid_input_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[budget]\nkind = \"nonsense\"\n").unwrap();
    let o = bcosb(&["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget.kind"));

    let o = bcosb(&["solve", "--weights", "0.5,-1"]);
    assert_eq!(o.status.code(), Some(1));
}
