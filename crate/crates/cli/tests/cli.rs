use std::path::Path;
use std::process::Command as Proc;

use bvgrid::scenarios::scenario;
use bvgrid::tv::{default_m_schedule, tv_dual, DualOptions};
use bvgrid_cli::{main_with_args, run, Command, RunConfig};
use serde_json::Value;

fn args(cmd: &str, extra: &[&str], out: &Path) -> Vec<String> {
    let mut v = vec!["bvgrid".to_string(), cmd.to_string()];
    v.extend(extra.iter().map(|s| s.to_string()));
    v.push("--out".into());
    v.push(out.display().to_string());
    v
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const MEASURE: &str = r#"{"shape":[8,8],"spacing":0.125,"weight_expr":{"kind":"density","axis":0,"base":1.0,"slope":2.0}}"#;
const TENT: &str = r#"{"expr":{"kind":"tent","center":[0.5,0.5],"height":0.3}}"#;

#[test]
fn malformed_json_exits_one_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"shape":[8,8],"#);
    let f = write(dir.path(), "f.json", TENT);
    let out = dir.path().join("out");
    assert_eq!(
        main_with_args(args("tv", &["--measure", &bad, "--function", &f], &out)),
        1
    );
    assert!(!out.exists());

    let m = write(dir.path(), "m.json", MEASURE);
    let bad_f = write(
        dir.path(),
        "badf.json",
        r#"{"expr":{"kind":"tent","centre":[0.5]}}"#,
    );
    assert_eq!(
        main_with_args(args("tv", &["--measure", &m, "--function", &bad_f], &out)),
        1
    );
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for extra in [
        vec!["--scenario", "nope"],
        vec!["--scenario", "plaquette", "--tol", "gap=abc"],
        vec!["--scenario", "plaquette", "--tol", "gap=-1"],
        vec!["--scenario", "plaquette", "--tol", "speed=1"],
        vec!["--scenario", "plaquette", "--M-schedule", "4,2"],
        vec!["--scenario", "plaquette", "--eps-schedule", "0.1,0.2"],
        vec!["--scenario", "plaquette", "--function", "x9"],
        vec![],
    ] {
        assert_eq!(main_with_args(args("tv", &extra, &out)), 1, "{extra:?}");
    }
    assert_eq!(main_with_args(["bvgrid", "frobnicate"]), 1);
    assert!(!out.exists());
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_bvgrid");
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "not json");
    let out = dir.path().join("o");
    let status = Proc::new(exe)
        .args(["fibers", "--measure", &bad, "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let status = Proc::new(exe).arg("--help").output().unwrap().status;
    assert_eq!(status.code(), Some(0));
    let status = Proc::new(exe)
        .args(["superpose", "--scenario", "1d-strip", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("curves.json").exists());
}

#[test]
fn superpose_strip_gives_one_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        main_with_args(args("superpose", &["--scenario", "1d-strip"], &out)),
        0
    );
    let r = report(&out);
    assert_eq!(r["results"]["paths"], 1);
    assert_eq!(r["results"]["cycles"], 0);
    assert!(r["results"]["err1"].as_f64().unwrap() <= 1e-8);
    assert!(r["results"]["err2"].as_f64().unwrap() <= 1e-8);
    let curves: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("curves.json")).unwrap()).unwrap();
    let c = &curves[0];
    assert_eq!(c["kind"], "PATH");
    assert_eq!(c["nodes"].as_array().unwrap().len(), 32);
    assert!((c["length"].as_f64().unwrap() - 31.0 / 32.0).abs() < 1e-15);
    assert!(c["weight"].as_f64().unwrap() > 0.0);
}

#[test]
fn plaquette_marginal_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        main_with_args(args("superpose", &["--scenario", "plaquette"], &out)),
        2
    );
    let r = report(&out);
    let failed: Vec<&str> = r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["marginal_err2"]);
    assert_eq!(r["results"]["cycles"], 1);
}

#[test]
fn tv_report_embeds_module_reports() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", MEASURE);
    let f = write(dir.path(), "f.json", TENT);
    let out = dir.path().join("out");
    let code = main_with_args(args("tv", &["--measure", &m, "--function", &f], &out));
    assert!(code == 0 || code == 2);
    let r = report(&out);
    let tv = &r["results"]["tv"];
    let names: Vec<&str> = tv["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["formulation"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["DUAL", "DERIVATION", "RELAX_LIP", "RELAX_SMOOTH"]);
    for (k, rep) in tv["reports"].as_array().unwrap().iter().enumerate() {
        assert_eq!(rep["value"], tv["comparison"]["values"][k]);
    }
    let values: Vec<f64> = tv["comparison"]["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    let max_gap = values
        .iter()
        .flat_map(|a| {
            values
                .iter()
                .map(move |b| (a - b).abs() / a.abs().max(b.abs()))
        })
        .fold(0.0, f64::max);
    assert!((tv["comparison"]["max_relative_gap"].as_f64().unwrap() - max_gap).abs() < 1e-15);
    // 64 support cells: the LP oracle is consulted.
    assert!(tv["lp_oracle"]["value"].is_number());
    let header = std::fs::read_to_string(out.join("tv_fields.csv")).unwrap();
    assert!(header.starts_with("index,x1,x2,w,f,v1,v2,div\n"));
    assert!(out.join("tv_trace.csv").exists());
}

#[test]
fn tv_dual_value_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    main_with_args(args(
        "tv",
        &["--scenario", "uniform-square", "--function", "halfspace"],
        &out,
    ));
    let r = report(&out);
    let sc = scenario("uniform-square").unwrap();
    let m_max = *default_m_schedule(&sc.measure).last().unwrap();
    let direct = tv_dual(
        sc.function("halfspace").unwrap(),
        m_max,
        &DualOptions::default(),
    )
    .unwrap();
    assert_eq!(
        r["results"]["tv"]["reports"][0]["value"].as_f64().unwrap(),
        direct.value
    );
    assert!((direct.value - 1.0).abs() < 1e-5);
}

#[test]
fn fibers_csv_on_strip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        main_with_args(args("fibers", &["--scenario", "thin-strip"], &out)),
        0
    );
    let text = std::fs::read_to_string(out.join("fibers.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "index,x1,x2,w,rank,sigma_1,sigma_2,basis_1_1,basis_1_2,basis_2_1,basis_2_2"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 128);
    // The last strip cell cannot send flux forward into the void.
    let last = 13 * 8 + 4;
    for r in &rows {
        let expected = if r[3] > 0.0 && r[0] as usize != last {
            1.0
        } else {
            0.0
        };
        assert_eq!(r[4], expected, "cell {}", r[0]);
    }
    assert_eq!(
        report(&out)["results"]["rank_histogram"]["counts"],
        serde_json::json!([1, 11, 0])
    );
}

#[test]
fn w11_and_derivation_on_strip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w");
    assert_eq!(
        main_with_args(args(
            "w11",
            &["--scenario", "thin-strip", "--function", "x2"],
            &out
        )),
        0
    );
    let r = report(&out);
    assert!(r["results"]["w11"]["min_rs_minus_trs"].as_f64().unwrap() > 0.0);
    assert!(std::fs::read_to_string(out.join("slopes.csv"))
        .unwrap()
        .starts_with("index,x1,x2,w,x2_rs,x2_trs,"));

    let out = dir.path().join("d");
    assert_eq!(
        main_with_args(args(
            "derivation",
            &["--scenario", "thin-strip", "--seed", "3"],
            &out
        )),
        0
    );
    let r = report(&out);
    assert_eq!(r["results"]["isometry_residual"], 0.0);
    assert_eq!(r["results"]["intertwining_residual"], 0.0);
    assert!(out.join("derivation.csv").exists());
}

#[test]
fn equivalence_report_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let bytes: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|d| {
            let out = dir.path().join(d);
            let mut cfg = RunConfig::new(Command::EquivalenceReport);
            cfg.scenario = Some("1d-strip".into());
            cfg.seed = 7;
            cfg.out = out.clone();
            run(&cfg).unwrap();
            std::fs::read(out.join("report.json")).unwrap()
        })
        .collect();
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn config_validation() {
    let mut cfg = RunConfig::new(Command::Tv);
    assert!(cfg.validate().is_err());
    cfg.scenario = Some("plaquette".into());
    assert!(cfg.validate().is_ok());
    cfg.measure = Some("m.json".into());
    assert!(cfg.validate().is_err());
    cfg.measure = None;
    cfg.tolerances.gap_tol = 0.0;
    assert!(cfg.validate().is_err());
    let parsed = RunConfig::from_args([
        "bvgrid",
        "tv",
        "--scenario",
        "two-box",
        "--M-schedule",
        "1,2,3",
        "--eps-schedule",
        "0.3,0.2",
        "--tol",
        "gap=1e-7,incl=0.5",
        "--seed",
        "9",
    ])
    .unwrap();
    assert_eq!(parsed.m_schedule, [1.0, 2.0, 3.0]);
    assert_eq!(parsed.eps_schedule, [0.3, 0.2]);
    assert_eq!(parsed.tolerances.gap_tol, 1e-7);
    assert_eq!(parsed.tolerances.incl_tol, Some(0.5));
    assert_eq!(parsed.seed, 9);
}
