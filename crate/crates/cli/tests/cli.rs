use sha2::{Digest, Sha256};
use std::path::Path;
use std::process::{Command, Output};

fn loopon(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopon"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn hash(path: &Path) -> String {
    format!("{:x}", Sha256::digest(std::fs::read(path).unwrap()))
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn meta_line(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().next().unwrap().strip_prefix('#').unwrap()).unwrap()
}

const VOLUME: &[&str] =
    &["volume", "--n", "1.41421356", "--regime", "dilute", "--p", "64", "--replicas", "200", "--seed", "7", "--k-max", "4000"];

#[test]
fn volume_rerun_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let first = loopon(d, &[VOLUME, &["--out", "a"]].concat());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let data = d.join("a/volume.jsonl");
    let lines: Vec<String> = std::fs::read_to_string(&data).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 201);
    let rec: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    for key in ["p", "V", "weight", "cap_hits", "seed"] {
        assert!(rec.get(key).is_some(), "record lacks {key}");
    }

    let again = loopon(d, &["run", "a/volume.manifest.json", "--out", "b"]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(hash(&data), hash(&d.join("b/volume.jsonl")));

    let threads = loopon(d, &[VOLUME, &["--out", "c", "--threads", "1"]].concat());
    assert!(threads.status.success());
    assert_eq!(hash(&data), hash(&d.join("c/volume.jsonl")));
}

#[test]
fn metadata_line_is_the_manifest_core() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = loopon(d, &["identities", "--n", "2", "--h", "4/(3pi^2)", "--k-max", "4000", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut m = manifest(&d.join("o/identities.manifest.json"));
    assert_eq!(m["args"]["h"], "4/(3pi^2)");
    assert_eq!(m["cache_files"].as_array().unwrap().len(), 1);
    m["wall_time_s"] = serde_json::json!(0.0);
    m["outputs"] = serde_json::json!([]);
    assert_eq!(meta_line(&d.join("o/identities.csv")), m);
    let csv = std::fs::read_to_string(d.join("o/identities.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("check,value,tolerance,pass"));
    assert!(!csv.contains(",false"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| loopon(d, args).status.code().unwrap();
    assert_eq!(code(&["params", "--n", "2"]), 2);
    assert_eq!(code(&["params", "--n", "2", "--h", "4/(3pi"]), 2);
    assert_eq!(code(&["params", "--n", "2", "--h", "0.5"]), 2);
    assert_eq!(code(&["params", "--n", "1.5", "--h", "0.01", "--regime", "dilute"]), 2);
    assert_eq!(code(&["volume", "--n", "2"]), 2);
    assert_eq!(code(&["params", "--n", "sqrt(2)"]), 0);
    let guard = loopon(
        d,
        &["volume", "--n", "sqrt(2)", "--p", "64", "--replicas", "5", "--k-max", "4000", "--vertex-cap", "1", "--out", "g"],
    );
    assert_eq!(guard.status.code(), Some(4));
    let failed = manifest(&d.join("g/volume.manifest.json"));
    assert!(failed["error"].as_str().unwrap().contains("guard"));
    std::fs::write(d.join("bad.toml"), "command = \"volume\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&["run", "bad.toml"]), 2);
}

#[test]
fn toml_and_json_configs_drive_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "command = \"walk-check\"\n[args]\nn = \"2\"\nh = \"2/pi^2\"\np = 10\nreplicas = 2000\nseed = 3\nk_max = 4000\n",
    )
    .unwrap();
    let out = loopon(d, &["run", "run.toml", "--out", "t"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.join("t/walk_check.csv")).unwrap();
    assert_eq!(text.lines().nth(1), Some("test,lhs,rhs,stderr,N"));
    assert_eq!(text.lines().count(), 5);

    std::fs::write(
        d.join("run.json"),
        r#"{"command": "walk-check", "args": {"n": "2", "h": "2/pi^2", "p": 10, "replicas": 2000, "seed": 3, "k_max": 4000}}"#,
    )
    .unwrap();
    let out = loopon(d, &["run", "run.json", "--out", "j"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(hash(&d.join("t/walk_check.csv")), hash(&d.join("j/walk_check.csv")));
}

#[test]
fn spine_commands_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o2 = ["--n", "2", "--h", "4/(3pi^2)", "--k-max", "4000", "--out", "r"];
    let runs: [&[&str]; 5] = [
        &["identities"],
        &["spine", "--p", "100", "--replicas", "20", "--seed", "1"],
        &["green", "--p", "1000", "--above", "100000", "--bands", "12", "--replicas", "200"],
        &["hitting", "--p", "1000", "--replicas", "500"],
        &["coupling", "--p", "1000", "--m", "10", "--replicas", "200"],
    ];
    for r in runs {
        let out = loopon(d, &[r, &o2[..]].concat());
        assert!(out.status.success(), "{r:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let spine = std::fs::read_to_string(d.join("r/spine.jsonl")).unwrap();
    let path: serde_json::Value = serde_json::from_str(spine.lines().nth(1).unwrap()).unwrap();
    assert_eq!(path["states"][0], 100);
    assert_eq!(path["stop"], "absorbed");

    let lim = loopon(d, &["limits", "--alpha", "1.25,1.5,7/4", "--theta", "2", "--out", "r"]);
    assert!(lim.status.success());
    let stdout = String::from_utf8(lim.stdout).unwrap();
    assert!(stdout.starts_with("quantity,alpha,arg,value,reference,stderr"));

    let rep = loopon(d, &["report", "--dir", "r", "--out", "r"]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stdout));
    let table = String::from_utf8(rep.stdout).unwrap();
    assert!(table.contains("ln_p_times_prob"));
    assert!(table.contains("theta_root_1.25"));
    assert!(table.contains("occupied_bands"));
}

#[test]
fn cont_cascade_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = loopon(
        d,
        &["cont-cascade", "--n", "sqrt(2)", "--generations", "3", "--replicas", "60", "--child-floor", "1e-2", "--k-max", "4000", "--out", "c"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.join("c/cont_cascade.csv")).unwrap();
    assert_eq!(text.lines().nth(1), Some("ell,W,D,truncated_mass,seed"));
    assert_eq!(text.lines().count(), 2 + 60 * 4);
    let cmp = loopon(d, &["limits", "--compare", "c/cont_cascade.csv", "--q", "1", "--out", "c"]);
    assert!(cmp.status.success(), "{}", String::from_utf8_lossy(&cmp.stderr));
    assert!(String::from_utf8(cmp.stdout).unwrap().contains("w_laplace_empirical_ell3"));
    let guard = loopon(
        d,
        &["cont-cascade", "--n", "sqrt(2)", "--generations", "6", "--replicas", "2", "--node-cap", "3", "--k-max", "4000", "--out", "g"],
    );
    assert_eq!(guard.status.code(), Some(4));
}
