use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rpiq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rpiq"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn rpiq")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "rpiq failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn generate(dir: &Path, seed: &str, model: &str, calib: &str) {
    ok(&rpiq(
        dir,
        &[
            "generate",
            "--seed",
            seed,
            "--layers",
            "24x16,16x24",
            "--k",
            "3",
            "--rows",
            "16",
            "--model",
            model,
            "--calib",
            calib,
        ],
    ));
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(s.lines().count(), 1, "expected one error line, got {s:?}");
    s
}

#[test]
fn generate_is_byte_deterministic() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "11", "a.rpiq", "ac.rpiq");
    generate(d.path(), "11", "b.rpiq", "bc.rpiq");
    generate(d.path(), "12", "c.rpiq", "cc.rpiq");
    let read = |n: &str| fs::read(d.path().join(n)).unwrap();
    assert_eq!(read("a.rpiq"), read("b.rpiq"));
    assert_eq!(read("ac.rpiq"), read("bc.rpiq"));
    assert_ne!(read("a.rpiq"), read("c.rpiq"));
}

#[test]
fn zero_sweeps_match_stage_one_artifact() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "5", "m.rpiq", "c.rpiq");
    let common = [
        "--model",
        "m.rpiq",
        "--calib",
        "c.rpiq",
        "--group-size",
        "8",
    ];
    let mut gptq = vec![
        "quantize", "--method", "gptq", "--out", "g.rpiq", "--report", "g.txt",
    ];
    gptq.extend(common);
    let mut rpiq0 = vec![
        "quantize", "--method", "rpiq", "--iters", "0", "--alpha", "1", "--out", "r.rpiq",
        "--report", "r.txt",
    ];
    rpiq0.extend(common);
    ok(&rpiq(d.path(), &gptq));
    ok(&rpiq(d.path(), &rpiq0));
    assert_eq!(
        fs::read(d.path().join("g.rpiq")).unwrap(),
        fs::read(d.path().join("r.rpiq")).unwrap()
    );
}

fn report_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn compare_report_is_consistent_with_trace() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "9", "m.rpiq", "c.rpiq");
    ok(&rpiq(
        d.path(),
        &[
            "compare",
            "--model",
            "m.rpiq",
            "--calib",
            "c.rpiq",
            "--alpha",
            "1",
            "--group-size",
            "8",
            "--report",
            "rep.txt",
            "--csv",
            "layers.csv",
            "--trace-csv",
            "trace.csv",
        ],
    ));
    let report = report_values(&fs::read_to_string(d.path().join("rep.txt")).unwrap());
    let get = |k: &str| {
        report
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| panic!("missing {k}"))
    };
    assert_eq!(get("config.alpha"), "1");
    assert_eq!(get("config.group_size"), "8");
    assert_eq!(get("config.command"), "compare");

    let trace = fs::read_to_string(d.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("layer,t,gamma"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for name in ["layer_0", "layer_1"] {
        let g0: f64 = rows.iter().find(|r| r[0] == name && r[1] == "0").unwrap()[2]
            .parse()
            .unwrap();
        let gf: f64 = rows
            .iter()
            .find(|r| r[0] == name && r[1] == "final")
            .unwrap()[2]
            .parse()
            .unwrap();
        let stage1: f64 = get(&format!("layer.{name}.gamma_stage1")).parse().unwrap();
        let final_: f64 = get(&format!("layer.{name}.gamma_rpiq")).parse().unwrap();
        let pct: f64 = get(&format!("layer.{name}.reduction_pct")).parse().unwrap();
        assert_eq!(g0, stage1);
        assert_eq!(gf, final_);
        let expect = 100.0 * (g0 - gf) / g0;
        assert!(
            (pct - expect).abs() <= 1e-9 * expect.abs().max(1.0),
            "{pct} vs {expect}"
        );
        assert!(gf <= g0);
    }

    let csv = fs::read_to_string(d.path().join("layers.csv")).unwrap();
    assert!(
        csv.starts_with("layer,gamma_stage1,gamma_rpiq,reduction_pct,iterations,stopped_early\n")
    );
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn convergence_report_writes_trace() {
    let d = tempfile::tempdir().unwrap();
    generate(d.path(), "2", "m.rpiq", "c.rpiq");
    let out = rpiq(
        d.path(),
        &[
            "convergence-report",
            "--model",
            "m.rpiq",
            "--calib",
            "c.rpiq",
            "--alpha",
            "1",
        ],
    );
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("layer,t,gamma\n"));
    let mut last: Option<(String, f64)> = None;
    for row in text.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        if f[1] == "final" {
            continue;
        }
        let g: f64 = f[2].parse().unwrap();
        if let Some((name, prev)) = &last {
            if name == f[0] {
                assert!(g <= *prev, "trace rose: {prev} -> {g}");
            }
        }
        last = Some((f[0].to_string(), g));
    }
}

#[test]
fn invalid_arguments_exit_with_usage() {
    let d = tempfile::tempdir().unwrap();
    for args in [
        vec!["quantize", "--alpha", "0"],
        vec!["quantize", "--alpha", "1.5"],
        vec!["quantize", "--bits", "1"],
        vec!["quantize", "--bits", "9"],
        vec!["quantize", "--group-size", "0"],
        vec!["compare", "--parallel"],
        vec!["generate", "--layers", "8x8,9x9"],
        vec!["generate", "--weights", "cauchy(1)"],
        vec!["frobnicate"],
    ] {
        let out = rpiq(d.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(
            stderr_line(&out).starts_with("error: category=usage message="),
            "{args:?}"
        );
    }
}

#[test]
fn missing_and_corrupt_files_exit_with_io() {
    let d = tempfile::tempdir().unwrap();
    let out = rpiq(d.path(), &["quantize", "--model", "absent.rpiq"]);
    assert_eq!(out.status.code(), Some(3));
    let line = stderr_line(&out);
    assert!(line.starts_with("error: category=io message="));
    assert!(line.contains("absent.rpiq"));

    generate(d.path(), "1", "m.rpiq", "c.rpiq");
    let mut bytes = fs::read(d.path().join("m.rpiq")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    fs::write(d.path().join("flip.rpiq"), &bytes).unwrap();
    fs::write(d.path().join("short.rpiq"), &bytes[..bytes.len() / 2]).unwrap();
    for f in ["flip.rpiq", "short.rpiq"] {
        let out = rpiq(d.path(), &["quantize", "--model", f, "--calib", "c.rpiq"]);
        assert_eq!(out.status.code(), Some(3), "{f}");
        assert!(stderr_line(&out).starts_with("error: category=io message="));
    }
}

#[test]
fn help_lists_defaults() {
    let d = tempfile::tempdir().unwrap();
    let out = rpiq(d.path(), &["quantize", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--bits",
        "--group-size",
        "--block-size",
        "--percdamp",
        "--iters",
        "--alpha",
        "--early-stop-tol",
        "--sequential-prop",
        "--curvature",
        "--refit-grids",
        "--csv",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
    for default in [
        "[default: 4]",
        "[default: 128]",
        "[default: 0.01]",
        "[default: 5]",
        "[default: on]",
    ] {
        assert!(help.contains(default), "missing {default}");
    }
}
