use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jsonschema::JSONSchema;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_isoscatter"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn isoscatter")
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

fn check_schema(name: &str, doc: &Value) {
    let text = std::fs::read_to_string(schema_dir().join(format!("{name}.schema.json"))).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let compiled = JSONSchema::compile(&schema).expect("schema compiles");
    let msgs: Vec<String> = match compiled.validate(doc) {
        Ok(()) => vec![],
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    assert!(msgs.is_empty(), "{name}: {msgs:#?}");
}

fn json_ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn expect_error(args: &[&str], code: i32) -> Value {
    let out = run(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    check_schema("error", &err);
    err
}

#[test]
fn outputs_match_schemas() {
    let cases: [(&str, &[&str]); 9] = [
        ("equilibria", &["equilibria", "--u0", "0.3,-1", "--v0", "0.5"]),
        ("trace-m0", &["trace-m0", "--which", "lstar-minus", "--sign", "-"]),
        ("bifurcate", &["bifurcate", "--which", "eps1", "--tol", "1e-4"]),
        ("chain", &["chain", "--u0", "0.7", "--sign", "-"]),
        ("homothetic", &["homothetic", "--shape", "euler", "--m3", "2"]),
        ("scatter", &["scatter", "--z", "0.3"]),
        ("scatter", &["scatter", "--z", "-1", "--theta-minus", "euler"]),
        ("scatter-map", &["scatter-map", "--z-grid=-1:1:9", "--max-refine", "4"]),
        ("scatter-map", &["from-collision", "--z-grid=-1:1:9", "--max-refine", "4"]),
    ];
    for (schema, args) in cases {
        let doc = json_ok(args);
        assert_eq!(doc["command"], args[0]);
        assert_eq!(doc["version"], env!("CARGO_PKG_VERSION"));
        check_schema(schema, &doc);
    }
}

#[test]
fn chain_from_the_euler_shape() {
    let doc = json_ok(&["chain", "--m3", "1", "--u0", "0", "--sign", "+"]);
    let c = &doc["chain"];
    assert!((c["u_end"].as_f64().unwrap() - PI).abs() < 1e-12);
    assert!(c["theta_end"].as_f64().unwrap().abs() < 1e-12);
    assert!((c["total_variation_theta"].as_f64().unwrap() - PI).abs() < 1e-12);
}

#[test]
fn bifurcate_eps1() {
    let doc = json_ok(&["bifurcate", "--which", "eps1", "--lo", "0.2", "--hi", "0.5"]);
    let v = doc["value"].as_f64().unwrap();
    assert!((v - 0.3785).abs() < 1e-3, "{v}");
}

#[test]
fn out_prefix_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("nested/run");
    let out = run(&["scatter-map", "--z-grid=-1:1:5", "--max-refine", "0", "--out", prefix.to_str().unwrap()]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(prefix.with_extension("json")).unwrap()).unwrap();
    check_schema("scatter-map", &doc);
    let csv = std::fs::read_to_string(prefix.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "z,kind,escape_type,theta_plus,u_plus,v_limit,n_binary_collisions,tau_end");
    assert_eq!(csv.lines().count(), 6);
    // equilibria has no table
    let p2 = dir.path().join("eq");
    assert!(run(&["equilibria", "--out", p2.to_str().unwrap()]).status.success());
    assert!(p2.with_extension("json").exists() && !p2.with_extension("csv").exists());
}

#[test]
fn byte_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = vec![];
    for (k, threads) in ["1", "4", "4"].into_iter().enumerate() {
        let prefix = dir.path().join(format!("m{k}"));
        let out = run(&[
            "scatter-map",
            "--m3",
            "3",
            "--z-grid=-1:1:21",
            "--threads",
            threads,
            "--out",
            prefix.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        files.push((
            std::fs::read(prefix.with_extension("json")).unwrap(),
            std::fs::read(prefix.with_extension("csv")).unwrap(),
        ));
    }
    assert!(files.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(run(&["trace-m0"]).stdout, run(&["trace-m0"]).stdout);
}

#[test]
fn exit_codes() {
    expect_error(&["scatter"], 2);
    expect_error(&["chain", "--u0", "0", "--bogus", "1"], 2);
    expect_error(&["chain", "--m3", "-1", "--u0", "0"], 2);
    expect_error(&["chain", "--h", "0", "--u0", "0"], 2);
    expect_error(&["scatter", "--z", "2"], 2);
    expect_error(&["scatter", "--z", "0", "--theta-minus", "2.0"], 2);
    expect_error(&["scatter-map", "--tau-max", "-3"], 2);
    expect_error(&["bifurcate", "--which", "eps1", "--lo", "0.5", "--hi", "0.2"], 2);
    let err = expect_error(&["scatter-map", "--z-grid", "nonsense"], 2);
    assert_eq!(err["error"]["kind"], "usage");
    // an output prefix below a regular file cannot be created
    let f = tempfile::NamedTempFile::new().unwrap();
    let bad = f.path().join("x");
    let err = expect_error(&["equilibria", "--out", bad.to_str().unwrap()], 1);
    assert_eq!(err["error"]["kind"], "numerical");
    assert!(run(&["--help"]).status.success());
}

#[test]
fn config_file_and_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# sweep settings\nz_grid = -1:1:5\ntau-max = 50\nmax_refine = 0\nwhich = l-plus\nm3 = 3\n")
        .unwrap();
    let c = cfg.to_str().unwrap();
    let doc = json_ok(&["scatter-map", "--config", c]);
    assert_eq!(doc["config"]["tau_max"], 50.0);
    assert_eq!(doc["m3"], 3.0);
    assert_eq!(doc["entries"].as_array().unwrap().len(), 5);
    // command line wins regardless of position
    let doc = json_ok(&["scatter-map", "--tau-max", "70", "--config", c, "--m3", "2"]);
    assert_eq!(doc["config"]["tau_max"], 70.0);
    assert_eq!(doc["m3"], 2.0);
    // keys of other subcommands are ignored, unknown keys are rejected
    std::fs::write(&cfg, "u0 = 0.4\nshape = euler\n").unwrap();
    let doc = json_ok(&["chain", "--config", c]);
    assert_eq!(doc["chain"]["u_start"], 0.4);
    std::fs::write(&cfg, "z_grid = 3\nno_such_key = 1\n").unwrap();
    let err = expect_error(&["scatter-map", "--config", c], 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("no_such_key"));
    expect_error(&["scatter-map", "--config", dir.path().join("missing").to_str().unwrap()], 2);
}
