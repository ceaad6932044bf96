mod common;

use std::path::Path;
use std::process::{Command, Output};

use mgsim::cli::{parse_scenario, trajectory_csv, ScenarioFile};
use mgsim::engine::simulate;

use common::{scenario_path, OMEGA};

fn mgsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgsim"))
        .args(args)
        .env_remove("MGSIM_LOG")
        .output()
        .unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const MINIMAL: &str = r#"{
  "nodes": [
    {"id": "src", "kind": "grid_forming", "params": {"gamma": 1.0, "nu_s": 0.000318, "tau_p_s": 0.0318,
      "k_p_rad_s_per_w": 0.000157, "k_q_v_per_var": 0.001, "v_set_v": 400.0, "p_set_w": 0.0, "q_set_var": 0.0}},
    {"id": "load", "kind": "load", "params": {"a_p_w_per_v2": 0.05}}
  ],
  "lines": [{"from": "src", "to": "load", "R_ohm": 0.1, "L_henry": 0.0005}],
  "settings": {"omega_nominal_rad_s": 314.1592653589793, "horizon_s": 0.1, "dt_s": 0.001,
    "method": "rk4", "model": "reduced"}
}"#;

fn input_error(json: &str) -> String {
    let err = ScenarioFile::from_json(json).and_then(|f| f.to_scenario()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    err.to_string()
}

#[test]
fn minimal_scenario_parses() {
    let s = ScenarioFile::from_json(MINIMAL).unwrap().to_scenario().unwrap();
    assert_eq!(s.topology().node_count(), 2);
    assert_eq!(s.grid_forming_nodes(), vec![0]);
    assert_eq!(s.load(1).unwrap().coefficients.a_p, 0.05);
}

#[test]
fn diagnostics_name_the_offending_field() {
    let bad_line = MINIMAL.replace(r#""to": "load""#, r#""to": "nowhere""#);
    assert!(input_error(&bad_line).contains("lines[0].to"));

    let bad_param = MINIMAL.replace(r#""a_p_w_per_v2": 0.05"#, r#""a_p_w_per_v2": "heavy""#);
    assert!(input_error(&bad_param).contains("nodes[1].params"));

    let unknown = MINIMAL.replace(r#""R_ohm": 0.1"#, r#""R_ohm": 0.1, "C_farad": 1"#);
    assert!(input_error(&unknown).contains("C_farad"));

    let negative = MINIMAL.replace(r#""R_ohm": 0.1"#, r#""R_ohm": -0.1"#);
    let msgs = [
        input_error(&bad_line),
        input_error(&bad_param),
        input_error(&unknown),
        input_error(&negative),
    ];
    for (i, a) in msgs.iter().enumerate() {
        for b in &msgs[i + 1..] {
            assert_ne!(a, b);
        }
    }
}

#[test]
fn scenario_file_roundtrip_is_a_fixpoint() {
    for name in ["ref3bus.json", "noload.json", "minimal.json"] {
        let file = ScenarioFile::read(&scenario_path(name)).unwrap();
        let once = ScenarioFile::from_scenario(&file.to_scenario().unwrap()).to_json();
        let twice =
            ScenarioFile::from_scenario(&ScenarioFile::from_json(&once).unwrap().to_scenario().unwrap()).to_json();
        assert_eq!(once, twice, "{name}");
    }
}

#[test]
fn trajectory_csv_layout() {
    let s = parse_scenario(&scenario_path("ref3bus.json")).unwrap();
    let csv = trajectory_csv(&simulate(&s).unwrap());
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 19);
    assert_eq!(header[..4], ["t", "V_g1", "delta_g1", "omega_g1"]);
    assert!(lines.next().unwrap().starts_with("# s,V,rad,rad/s"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2001);
    assert!(rows.iter().all(|r| r.split(',').count() == 19));
}

#[test]
fn powerflow_without_load_keeps_nominal_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pf.csv");
    let o = mgsim(&[
        "powerflow",
        "--scenario",
        path_str(&scenario_path("noload.json")),
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 3);
    let g1: Vec<&str> = rows[0].split(',').collect();
    let omega: f64 = g1[6].parse().unwrap();
    assert!((omega - OMEGA).abs() < 1e-9);
}

#[test]
fn validate_reports_pass_on_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.csv");
    let o = mgsim(&[
        "validate",
        "--scenario",
        path_str(&scenario_path("ref3bus.json")),
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.with_extension("txt")).unwrap();
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"), "{text}");
    let csv = std::fs::read_to_string(out).unwrap();
    assert!(csv.starts_with("check,item,quantity,value,unit"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(
        mgsim(&["simulate", "--scenario", path_str(&missing)]).status.code(),
        Some(2)
    );

    let ref3 = scenario_path("ref3bus.json");
    assert_eq!(
        mgsim(&["simulate", "--scenario", path_str(&ref3), "--dt", "-1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        mgsim(&["simulate", "--scenario", path_str(&ref3), "--method", "euler"])
            .status
            .code(),
        Some(2)
    );

    let heavy = dir.path().join("heavy.json");
    std::fs::write(&heavy, MINIMAL.replace(r#""a_p_w_per_v2": 0.05"#, r#""c_p_w": 5e7"#)).unwrap();
    let o = mgsim(&["powerflow", "--scenario", path_str(&heavy)]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("load"));

    let o = mgsim(&["simulate", "--scenario", path_str(&scenario_path("minimal.json"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!o.stdout.is_empty());
}
