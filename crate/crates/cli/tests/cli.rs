use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rnn_ekf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnn-ekf"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstdout:\n{}\nstderr:\n{}", o.status, stdout(o), stderr(o));
}

fn files_in(dir: &Path) -> Vec<String> {
    match fs::read_dir(dir) {
        Ok(rd) => {
            let mut v: Vec<String> = rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
            v.sort();
            v
        }
        Err(_) => Vec::new(),
    }
}

const BINARY: &str = r#"
seed = 7

[data]
generator = { kind = "binary_linear", sigma = 0.1, n_total = 2000 }

[model]
family = "rnn"
n_x = 3
n_u = 1
n_y = 1
output_function = "sigmoid"

[loss]
kind = "cross_entropy"
epsilon = 0.005

[regularization]
rho_theta = 1e-2
rho_x = 1e-2

[trainer]
kind = "ekf"
epochs = 3
init_scale = 0.05
"#;

#[test]
fn gen_is_deterministic_and_writes_sidecar() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", BINARY);
    assert_ok(&rnn_ekf(&["gen", "--config", "c.toml", "--out", "a"], tmp.path()));
    assert_ok(&rnn_ekf(&["gen", "--config", "c.toml", "--out", "b"], tmp.path()));
    let a = fs::read(tmp.path().join("a/data.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/data.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 2000);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("a/data.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["generator"], "binary_linear");
    assert_eq!(meta["binary_outputs"], serde_json::json!([true]));
    assert_eq!(meta["params"]["sigma"], 0.1);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", BINARY);
    assert_ok(&rnn_ekf(&["gen", "--config", "c.toml", "--out", "a", "--seed", "8"], tmp.path()));
    assert_ok(&rnn_ekf(&["gen", "--config", "c.toml", "--out", "b"], tmp.path()));
    let meta = fs::read_to_string(tmp.path().join("a/data.meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 8"), "{meta}");
    assert_ne!(
        fs::read(tmp.path().join("a/data.csv")).unwrap(),
        fs::read(tmp.path().join("b/data.csv")).unwrap()
    );
}

#[test]
fn missing_generator_is_config_error_without_output() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", "seed = 1\n");
    let o = rnn_ekf(&["gen", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(files_in(&tmp.path().join("o")).is_empty());
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", &format!("{BINARY}\n[trainer.extra]\nx = 1\n"));
    let o = rnn_ekf(&["train", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(files_in(&tmp.path().join("o")).is_empty());

    write_config(tmp.path(), "d.toml", &BINARY.replace("seed = 7", "seed = 7\ncolour = 1"));
    let o = rnn_ekf(&["train", "--config", "d.toml", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn invalid_values_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    for (from, to) in [
        ("epochs = 3", "epochs = 0"),
        ("epsilon = 0.005", "epsilon = 0.7"),
        ("rho_x = 1e-2", "rho_x = -1.0"),
        ("n_x = 3", "n_x = -3"),
    ] {
        write_config(tmp.path(), "c.toml", &BINARY.replace(from, to));
        let o = rnn_ekf(&["train", "--config", "c.toml", "--out", "o"], tmp.path());
        assert_eq!(o.status.code(), Some(2), "{to}: {}", stderr(&o));
    }
    assert!(files_in(&tmp.path().join("o")).is_empty());
}

#[test]
fn train_is_reproducible_and_reports_accuracy() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", BINARY);
    let first = rnn_ekf(&["train", "--config", "c.toml", "--out", "a"], tmp.path());
    assert_ok(&first);
    assert_ok(&rnn_ekf(&["train", "--config", "c.toml", "--out", "b"], tmp.path()));
    assert_eq!(files_in(&tmp.path().join("a")), vec!["log.csv", "model.json"]);
    assert_eq!(
        fs::read(tmp.path().join("a/model.json")).unwrap(),
        fs::read(tmp.path().join("b/model.json")).unwrap()
    );
    let out = stdout(&first);
    let test_line = out.lines().find(|l| l.starts_with("test accuracy")).expect(&out);
    let acc: f64 = test_line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(acc > 0.85, "{out}");
    let log = fs::read_to_string(tmp.path().join("a/log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
}

#[test]
fn numerical_failure_exits_with_3_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let mut csv = String::from("u1,y1\n");
    for k in 0..50 {
        csv.push_str(&format!("{}e150,{}e160\n", (k % 7) as f64 - 3.0, (k % 5) as f64 - 2.0));
    }
    fs::write(tmp.path().join("big.csv"), csv).unwrap();
    write_config(
        tmp.path(),
        "c.toml",
        r#"
[data]
csv = "big.csv"
n_u = 1
n_y = 1
standardize = false

[model]
family = "rnn"
n_x = 2
n_u = 1
n_y = 1

[trainer]
kind = "ekf"
epochs = 2
"#,
    );
    let o = rnn_ekf(&["train", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(files_in(&tmp.path().join("o")).is_empty());
}

fn linear_csv() -> String {
    let mut s = String::from("u1,y1\n");
    let (mut x1, mut x2) = (0.0f64, 0.0f64);
    for k in 0..300 {
        let u = ((k * 37 % 101) as f64 / 50.0 - 1.0) * if (k / 13) % 2 == 0 { 1.0 } else { -0.5 };
        s.push_str(&format!("{u},{}\n", x1 - 0.4 * x2));
        (x1, x2) = (0.7 * x1 + 0.2 * x2 + 0.5 * u, -0.2 * x1 + 0.8 * x2 + u);
    }
    s
}

const LINEAR: &str = r#"
[data]
csv = "lin.csv"
n_u = 1
n_y = 1

[model]
family = "rnn"
n_x = 2
n_u = 1
n_y = 1

[regularization]
rho_theta = 1e-4
rho_x = 1e-4

[trainer]
kind = "ekf"
epochs = 10
"#;

#[test]
fn eval_on_training_data_of_linear_system() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("lin.csv"), linear_csv()).unwrap();
    write_config(tmp.path(), "c.toml", LINEAR);
    assert_ok(&rnn_ekf(&["train", "--config", "c.toml", "--out", "o"], tmp.path()));
    let o = rnn_ekf(&["eval", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_ok(&o);
    let table = fs::read_to_string(tmp.path().join("o/eval.csv")).unwrap();
    let all = table.lines().find(|l| l.starts_with("all,")).unwrap();
    let fit: f64 = all.rsplit(',').next().unwrap().parse().unwrap();
    assert!(fit > 99.0, "{table}");
    assert!(stdout(&o).contains("overall BFR %"));
}

#[test]
fn eval_clamps_long_reconstruction_horizon() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("lin.csv"), linear_csv()).unwrap();
    write_config(tmp.path(), "c.toml", LINEAR);
    assert_ok(&rnn_ekf(&["train", "--config", "c.toml", "--out", "o"], tmp.path()));
    write_config(tmp.path(), "long.toml", &format!("{LINEAR}\n[init_state]\nn_bar = 100000\n"));
    let o = rnn_ekf(&["eval", "--config", "long.toml", "--out", "o"], tmp.path());
    assert_ok(&o);
    assert!(stderr(&o).contains("clamped"), "{}", stderr(&o));
}

#[test]
fn eval_reports_accuracy_for_binary_channels() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", BINARY);
    assert_ok(&rnn_ekf(&["gen", "--config", "c.toml", "--out", "g"], tmp.path()));
    assert_ok(&rnn_ekf(&["train", "--config", "c.toml", "--out", "g"], tmp.path()));
    // Reading the generated CSV back picks up the binary flag and the split
    // from the sidecar.
    let from_csv = BINARY.replace(
        r#"generator = { kind = "binary_linear", sigma = 0.1, n_total = 2000 }"#,
        "csv = \"g/data.csv\"\nn_u = 1\nn_y = 1",
    );
    write_config(tmp.path(), "e.toml", &from_csv);
    let o = rnn_ekf(&["eval", "--config", "e.toml", "--out", "g"], tmp.path());
    assert_ok(&o);
    assert!(stdout(&o).contains("overall accuracy"), "{}", stdout(&o));
    let table = fs::read_to_string(tmp.path().join("g/eval.csv")).unwrap();
    assert!(table.contains("all,1000,"), "{table}");
}

#[test]
fn eval_rejects_mismatched_data() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("lin.csv"), linear_csv()).unwrap();
    write_config(tmp.path(), "c.toml", LINEAR);
    assert_ok(&rnn_ekf(&["train", "--config", "c.toml", "--out", "o"], tmp.path()));
    write_config(tmp.path(), "b.toml", BINARY);
    assert_ok(&rnn_ekf(&["gen", "--config", "b.toml", "--out", "g"], tmp.path()));
    let two_inputs = LINEAR.replace("lin.csv", "g/data.csv").replacen("n_u = 1\nn_y = 1", "n_u = 0\nn_y = 2", 1);
    write_config(tmp.path(), "m.toml", &two_inputs);
    let o = rnn_ekf(&["eval", "--config", "m.toml", "--out", "o", "--model", "o/model.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn gd_partial_with_one_batch_matches_condensed() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("lin.csv"), linear_csv()).unwrap();
    let gd = |mode: &str| {
        LINEAR.replace(
            "kind = \"ekf\"\nepochs = 10",
            &format!("kind = \"gd\"\nmode = \"{mode}\"\nm = 1\nlr = 0.01\nepochs = 20"),
        )
    };
    write_config(tmp.path(), "c.toml", &gd("condensed"));
    write_config(tmp.path(), "p.toml", &gd("partial"));
    assert_ok(&rnn_ekf(&["train", "--config", "c.toml", "--out", "c"], tmp.path()));
    assert_ok(&rnn_ekf(&["train", "--config", "p.toml", "--out", "p"], tmp.path()));
    let objectives = |dir: &str| -> Vec<f64> {
        fs::read_to_string(tmp.path().join(dir).join("log.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    let (c, p) = (objectives("c"), objectives("p"));
    assert_eq!(c.len(), 20);
    for (a, b) in c.iter().zip(&p) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{c:?}\n{p:?}");
    }
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("lin.csv"), linear_csv()).unwrap();
    write_config(
        tmp.path(),
        "c.toml",
        &format!("{LINEAR}\n[sweep]\nlambdas = [0.0, 1e-3, 1e-2]\nseeds = [1, 2]\n")
            .replace("epochs = 10", "epochs = 3")
            .replace("1e-4", "1e-2"),
    );
    let o = rnn_ekf(&["sweep-l1", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_ok(&o);
    let table = fs::read_to_string(tmp.path().join("o/sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "lambda,fit,zero_fraction");
    assert_eq!(rows.len(), 1 + 3);
    let zeros: Vec<f64> = rows[1..].iter().map(|r| r.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(zeros[2] >= zeros[0], "{table}");
}

#[test]
fn sweep_requires_section() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", BINARY);
    let o = rnn_ekf(&["sweep-l1", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

const CSTR: &str = r#"
seed = 3

[data]
generator = { kind = "cstr", n_total = 2000 }

[model]
family = "rnn"
n_x = 4
n_u = 2
n_y = 1
strictly_causal = true
state_layers = [
    { width = 6, activation = "sigmoid" },
    { width = 4, activation = "sigmoid" },
]

[trainer]
kind = "ekf"
epochs = 20

[mpc]
steps = 200
reference = [315.0]
u_min = [280.0]
u_max = [298.0]
strict_causal_skip = true
disturbance = "output"

[mpc.plant]
feed_temperature_offset = 3.0
"#;

#[test]
fn mpc_tracks_offset_free_only_with_disturbance_model() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", CSTR);
    assert_ok(&rnn_ekf(&["train", "--config", "c.toml", "--out", "o"], tmp.path()));
    let summary = |dir: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(tmp.path().join(dir).join("mpc_summary.json")).unwrap()).unwrap()
    };

    assert_ok(&rnn_ekf(&["mpc", "--config", "c.toml", "--out", "o"], tmp.path()));
    let with = summary("o");
    assert_eq!(with["steps"], 200);
    assert!(with["steady_state_error"].as_f64().unwrap() < 1e-2, "{with}");
    let log = fs::read_to_string(tmp.path().join("o/loop.csv")).unwrap();
    let header: Vec<&str> = log.lines().next().unwrap().split(',').collect();
    let it = header.iter().position(|h| *h == "iterations").unwrap();
    assert_eq!(log.lines().count(), 1 + 200);
    for row in log.lines().skip(1) {
        let n: usize = row.split(',').nth(it).unwrap().parse().unwrap();
        assert!(n >= 1, "{row}");
    }

    write_config(
        tmp.path(),
        "n.toml",
        &CSTR.replace("disturbance = \"output\"", "disturbance = \"none\"\nmodel = \"o/model.json\""),
    );
    assert_ok(&rnn_ekf(&["mpc", "--config", "n.toml", "--out", "n"], tmp.path()));
    let without = summary("n");
    assert_eq!(without["disturbance_states"], 0);
    assert!(without["steady_state_error"].as_f64().unwrap() > 1e-2, "{without}");
}

#[test]
fn mpc_without_model_file_fails_cleanly() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", CSTR);
    let o = rnn_ekf(&["mpc", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(files_in(&tmp.path().join("o")).is_empty());
}

#[test]
fn mpc_bounds_are_validated() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "c.toml", &CSTR.replace("u_max = [298.0]", "u_max = [270.0]"));
    let o = rnn_ekf(&["mpc", "--config", "c.toml", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            rnn_ekf_cli::config::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
