use std::path::PathBuf;
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stencil-traffic"))
        .current_dir(root())
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn records(text: &str) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn analyze_reproduces_reference_rows() {
    let o = run(&["analyze", "--csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let got = records(&stdout(&o));
    let want = records(&std::fs::read_to_string(root().join("reference/bounds.csv")).unwrap());
    assert_eq!(got.len(), 22);
    for (g, w) in got.iter().zip(&want) {
        // kernel, counts, flops and the four bounds line up column for column
        for i in 0..11 {
            assert_eq!(g[i], w[i], "{} column {i}", &w[0]);
        }
    }
}

#[test]
fn empty_suite_gives_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    std::fs::write(&path, "{}").unwrap();
    let o = run(&["analyze", "--suite", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn malformed_suite_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"kernels\": [\n    {\"name\": 3\n").unwrap();
    let o = run(&["analyze", "--suite", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json:3:"), "{}", stderr(&o));
}

#[test]
fn invalid_kernel_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dup.json");
    std::fs::write(
        &path,
        r#"{"grids": [{"name": "g", "inner_extent": 8, "outer_extent": 8}],
            "arrays": [{"name": "a", "grid": "g"}],
            "kernels": [{"name": "k", "accesses": [
                {"array": "a", "dj": 0, "dk": 0, "mode": "read"},
                {"array": "a", "dj": 0, "dk": 0, "mode": "read"}]}]}"#,
    )
    .unwrap();
    let o = run(&["analyze", "--suite", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("k"), "{}", stderr(&o));
}

#[test]
fn missing_measurement_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(
        &path,
        "kernel,ranks,read_gbytes,write_gbytes,call_count,grid_points\nam04,1,1,1,1,1\n",
    )
    .unwrap();
    let o = run(&["compare", "--measurements", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("timesteps"), "{}", stderr(&o));
}

#[test]
fn zero_grid_is_a_usage_error() {
    let o = run(&["simulate", "--grid", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(
        run(&["prime-sweep", "--scenario", "nope"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["analyze", "--bogus"]).status.code(), Some(2));
}

#[test]
fn prime_sweep_csv() {
    let o = run(&["prime-sweep", "--ranks", "1..72"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("kernel,p,bytes_per_it,prime,px,py,inner_width\n"));
    let rows = records(&text);
    assert_eq!(rows.len(), 22 * 72);
    let value = |k: &str, p: &str| -> f64 {
        rows.iter().find(|r| &r[0] == k && &r[1] == p).unwrap()[2]
            .parse()
            .unwrap()
    };
    let flag = |p: &str| rows.iter().find(|r| &r[1] == p).unwrap()[3].to_string();
    assert_eq!(flag("71"), "true");
    assert_eq!(flag("72"), "false");
    for k in ["am04", "am06", "am08", "am10"] {
        assert!(value(k, "71") > value(k, "72"), "{k}");
    }
    // a single rank write-allocates every store with fulfilled layer conditions
    assert_eq!(value("am04", "1"), 24.0);
    assert_eq!(value("pdv01", "1"), 120.0);
}

#[test]
fn commands_are_deterministic() {
    for args in [
        &["prime-sweep", "--ranks", "60..72"][..],
        &[
            "simulate",
            "--grid",
            "48",
            "--policy",
            "auto-claim",
            "--csv",
        ][..],
        &["compare", "--measurements", "reference/meas_72rank.csv"][..],
    ] {
        let a = run(args);
        let b = run(args);
        assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn compare_check_exit_codes() {
    let m = "reference/meas_72rank.csv";
    let o = run(&[
        "compare",
        "--measurements",
        m,
        "--scenario",
        "speci2m",
        "--check",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean abs error 6.7"), "{}", stdout(&o));
    let o = run(&[
        "compare",
        "--measurements",
        m,
        "--scenario",
        "speci2m",
        "--check",
        "--tolerance",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "compare",
        "--measurements",
        "reference/meas_1rank.csv",
        "--scenario",
        "lcf-wa",
        "--check",
        "--tolerance",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn compare_output_is_csv_with_measured_balance() {
    let o = run(&[
        "compare",
        "--measurements",
        "reference/meas_1rank.csv",
        "--scenario",
        "lcf-wa",
        "--csv",
    ]);
    let rows = records(&stdout(&o));
    let am04 = rows.iter().find(|r| &r[0] == "am04").unwrap();
    assert_eq!(&am04[2], "24.05");
    assert_eq!(&am04[3], "24.00");
}

#[test]
fn simulate_matches_analytic_bounds() {
    for (policy, expect) in [("always-allocate", 24.0), ("auto-claim", 16.0)] {
        let o = run(&[
            "simulate", "--kernel", "am04", "--grid", "1024", "--policy", policy, "--csv",
            "--check",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
        let rows = records(&stdout(&o));
        assert_eq!(&rows[0][2], format!("{expect:.2}"));
    }
}

#[test]
fn traces_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = run(&[
        "simulate",
        "--kernel",
        "am04",
        "--grid",
        "16",
        "--dump-traces",
        d,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "am04: 1280 events");
    let file = dir.path().join("am04.trace");
    assert_eq!(std::fs::metadata(&file).unwrap().len(), 1280 * 9);
    let o = run(&["simulate", "--replay", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("read_bytes="), "{}", stdout(&o));
    std::fs::write(&file, [0u8; 10]).unwrap();
    assert_eq!(
        run(&["simulate", "--replay", file.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn store_ratio_extremes() {
    let ratios = |extra: &[&str]| -> Vec<String> {
        let mut args = vec!["store-ratio", "--csv", "--volume", "1048576"];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        records(&stdout(&o))
            .iter()
            .map(|r| r[1].to_string())
            .collect()
    };
    assert_eq!(ratios(&[]), ["2.0000"; 3]);
    assert_eq!(ratios(&["--nt"]), ["1.0000"; 3]);
    assert_eq!(ratios(&["--policy", "auto-claim"]), ["1.0000"; 3]);
}

#[test]
fn halo_copy_dips_at_aligned_halos() {
    let o = run(&[
        "halo-copy",
        "--inner",
        "216",
        "--halo",
        "7..9",
        "--bytes",
        "1000000",
        "--csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: Vec<f64> = records(&stdout(&o))
        .iter()
        .map(|r| r[2].parse().unwrap())
        .collect();
    assert_eq!(r.len(), 3);
    assert!(r[0] > 1.0 && r[1] <= 1.01 && r[2] > 1.0, "{r:?}");
}
