use std::path::Path;
use std::process::{Command, Output};

use onn_therminv::harness::records::{records_from_csv, records_from_json};
use onn_therminv::harness::InversionReport;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onn-therminv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_matrix(dir: &Path) -> String {
    let p = dir.join("a.txt");
    std::fs::write(&p, "2\n2 -1\n-1 2\n").unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn energy_invert_writes_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_matrix(dir.path());
    let out = dir.path().join("r.json");
    let o = cli(&[
        "energy-invert",
        "--matrix-file",
        &m,
        "--k",
        "1000",
        "--kn",
        "1e4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let report: InversionReport =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report.record.rel_err_pct.unwrap() < 0.01);
    let energy = report.energy.unwrap();
    assert!(energy.boundary_mass < 1e-6);
    let est = report.estimate.unwrap();
    assert!((est[(0, 0)] - 2.0 / 3.0).abs() < 1e-4);
}

#[test]
fn dynamics_invert_csv_is_two_lines() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_matrix(dir.path());
    let o = cli(&[
        "dynamics-invert",
        "--matrix-file",
        &m,
        "--steps",
        "50000",
        "--mode",
        "linear",
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    let recs = records_from_csv(&text).unwrap();
    assert_eq!(recs[0].ns, Some(50000));
    assert_eq!(recs[0].k, 500.0);
}

#[test]
fn onn_config_file_supplies_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("onn.json");
    std::fs::write(
        &cfg,
        r#"{"dim":2,"J":[0,1,1,0],"Ks":[1000,1000],"K":1000,"Kn":10000}"#,
    )
    .unwrap();
    let o = cli(&[
        "single",
        "--config-file",
        cfg.to_str().unwrap(),
        "--method",
        "energy",
        "--format",
        "json",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report: InversionReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(
        (report.record.k, report.record.kn, report.record.scale),
        (1000.0, 1e4, 2.0)
    );
}

#[test]
fn cell_failures_exit_with_two() {
    let o = cli(&["sweep-k", "--k-values", "1000,1e7", "--steps", "20000"]);
    assert_eq!(o.status.code(), Some(2));
    let recs = records_from_csv(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert!(recs[0].failure.is_none());
    assert!(recs[1].failure.is_some());
}

#[test]
fn hard_errors_exit_with_one_and_name_the_path() {
    let o = cli(&["energy-invert", "--matrix-file", "/no/such/matrix.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/matrix.txt"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "2\n1 2\n3 4\n").unwrap();
    let o = cli(&["dynamics-invert", "--matrix-file", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not symmetric"));

    assert_eq!(cli(&[]).status.code(), Some(1));
}

#[test]
fn experiment_file_drives_a_batch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("batch.toml");
    std::fs::write(
        &cfg,
        "routine = \"random_batch\"\ncount = 5\ndim = 2\nkn_values = [20.0, 1e4]\nseed = 3\n[sde]\nsteps = 20000\n",
    )
    .unwrap();
    let out = dir.path().join("batch.csv");
    let o = cli(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let recs = records_from_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(recs.len(), 10);
    assert!(recs.iter().all(|r| r.matrix_seed.is_some() && r.dim == 2));
    let hist = std::fs::read_to_string(dir.path().join("batch.hist.csv")).unwrap();
    let mut lines = hist.lines();
    assert_eq!(lines.next(), Some("Kn,bin_lo,bin_hi,count"));
    let counts: usize = lines
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(counts, 10);
}

#[test]
fn flags_override_the_experiment_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("noise.json");
    std::fs::write(
        &cfg,
        r#"{"routine":"sweep_noise","kn_values":[100.0,10000.0],"seed":1,"sde":{"steps":20000}}"#,
    )
    .unwrap();
    let o = cli(&[
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "8",
        "--format",
        "json",
        "sweep-noise",
        "--kn-values",
        "1e3",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let recs = records_from_json(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(
        (recs[0].kn, recs[0].seed, recs[0].ns),
        (1e3, Some(8), Some(20000))
    );
}

#[test]
fn wall_time_is_opt_in() {
    let base = [
        "sweep-scale",
        "--scales",
        "1",
        "--steps",
        "20000",
        "--format",
        "csv",
    ];
    let recs = records_from_csv(&String::from_utf8(cli(&base).stdout).unwrap()).unwrap();
    assert!(recs[0].wall_s.is_none());
    let mut timed = base.to_vec();
    timed.push("--wall-time");
    let recs = records_from_csv(&String::from_utf8(cli(&timed).stdout).unwrap()).unwrap();
    assert!(recs[0].wall_s.unwrap() > 0.0);
}
