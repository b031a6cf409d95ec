use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rnn_ekf::data::{fmt_f64, Dataset, DatasetMeta, Scaling};
use rnn_ekf::ekf::train;
use rnn_ekf::gd::train_gd;
use rnn_ekf::models::{DynamicModel, Model, ModelFile, ParamVector};
use rnn_ekf::mpc::{closed_loop_sim, Controller, Cstr, Plant};
use rnn_ekf::numerics::SeededRng;
use rnn_ekf::report::{evaluate, fit_score, Evaluation, TrainingLog};
use serde_json::json;

use crate::config::{RunConfig, TrainerSection};
use crate::CliError;

/// Files produced by a command. Nothing touches the disk until every output
/// has been computed, so a failing command leaves no partial results.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every file into `dir` through a temporary name and a rename.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in self.files {
            let path = dir.join(&name);
            let tmp = dir.join(format!(".{name}.tmp"));
            std::fs::write(&tmp, bytes)?;
            std::fs::rename(&tmp, &path)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Resolved invocation: the config plus command-line overrides.
pub struct Run {
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Run {
    pub fn new(config: RunConfig, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        let seed = seed.unwrap_or(config.seed);
        let out = out.or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Run { config, seed, out }
    }
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> rnn_ekf::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn json_bytes(v: &impl serde::Serialize) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn fit_label(data: &Dataset) -> &'static str {
    if data.is_binary() {
        "accuracy"
    } else {
        "BFR %"
    }
}

fn check_dims(model: &Model, data: &Dataset) -> Result<(), CliError> {
    if model.n_u() != data.n_u() || model.n_y() != data.n_y() {
        return Err(CliError::Config(format!(
            "model has {} inputs and {} outputs, data has {} and {}",
            model.n_u(),
            model.n_y(),
            data.n_u(),
            data.n_y()
        )));
    }
    Ok(())
}

/// `gen`: writes `data.csv` and its `data.meta.json` sidecar.
pub fn gen(run: &Run) -> Result<Outputs, CliError> {
    let section = run.config.data_section()?;
    let g = section.generate(run.seed)?;
    let meta = DatasetMeta {
        generator: g.generator.clone(),
        seed: g.seed,
        n_total: g.data.total_len(),
        n_train: g.n_train,
        n_u: g.data.n_u(),
        n_y: g.data.n_y(),
        binary_outputs: g.data.binary_outputs.clone(),
        params: section.generator_params(),
    };
    let mut out = Outputs::default();
    out.add("data.csv", csv_bytes(|b| g.data.write_csv(b))?);
    out.add("data.meta.json", json_bytes(&meta)?);
    log::info!("generated {} samples with seed {}", meta.n_total, meta.seed);
    Ok(out)
}

/// Result of one training run, in scaled units.
pub struct Trained {
    pub model: Model,
    pub theta: ParamVector,
    pub scaling: Option<Scaling>,
    pub log: TrainingLog,
    pub train_fit: f64,
    pub test_fit: Option<f64>,
    pub label: &'static str,
}

/// Trains with the configured trainer. `lambda` overrides the ℓ1 weight
/// (EKF only).
pub fn train_once(config: &RunConfig, seed: u64, lambda: Option<f64>) -> Result<Trained, CliError> {
    let model = config.model_spec()?.build()?;
    let loaded = config.data_section()?.load(seed)?;
    check_dims(&model, &loaded.train)?;
    let scaling = config.data_section()?.standardize.then(|| Scaling::fit(&loaded.train));
    let scale = |d: &Dataset| scaling.as_ref().map_or_else(|| d.clone(), |s| s.apply(d));
    let train_set = scale(&loaded.train);
    let test_set = loaded.test.as_ref().map(scale);
    let n_y = model.n_y();
    let mut rng = SeededRng::new(seed);
    let (theta, log) = match &config.trainer {
        Some(TrainerSection::Ekf { .. }) => {
            let cfg = config.ekf_config(n_y, lambda.unwrap_or(config.regularization.lambda), seed)?;
            let o = train(&train_set, &model, &cfg, None, &mut rng)?;
            log::info!("best epoch {}", o.best_epoch);
            (o.theta, o.log)
        }
        Some(TrainerSection::Gd { .. }) => {
            if lambda.is_some() {
                return Err(CliError::Config("the l1 sweep needs an ekf trainer".into()));
            }
            let cfg = config.gd_config(n_y)?;
            let o = train_gd(&train_set, &model, &cfg, None, &mut rng)?;
            log::info!("best epoch {}", o.best_epoch);
            (o.theta, o.log)
        }
        None => return Err(CliError::Config("a [trainer] section is required".into())),
    };
    let loss = config.loss(n_y)?;
    let regs = config.regularizers(config.regularization.lambda);
    let settings = config.eval_settings(seed);
    let train_fit = evaluate(&model, &theta, &train_set, &loss, &regs, &settings)?.fit;
    let test_fit = match &test_set {
        Some(t) => Some(evaluate(&model, &theta, t, &loss, &regs, &settings)?.fit),
        None => None,
    };
    Ok(Trained {
        label: fit_label(&train_set),
        model,
        theta,
        scaling,
        log,
        train_fit,
        test_fit,
    })
}

/// `train`: writes `model.json` (best epoch) and `log.csv`.
pub fn train_cmd(run: &Run) -> Result<Outputs, CliError> {
    let t = train_once(&run.config, run.seed, None)?;
    println!("train {}: {:.4}", t.label, t.train_fit);
    if let Some(f) = t.test_fit {
        println!("test {}: {f:.4}", t.label);
    }
    let file = ModelFile::new(&t.model, &t.theta, t.scaling)?;
    let mut out = Outputs::default();
    let mut json = file.to_json()?;
    json.push('\n');
    out.add("model.json", json.into_bytes());
    out.add("log.csv", csv_bytes(|b| t.log.write_csv(b))?);
    Ok(out)
}

/// `eval`: open-loop simulation from reconstructed initial states; writes
/// `eval.csv` with one row per experiment plus an `all` row.
pub fn eval_cmd(run: &Run, model_path: &Path) -> Result<Outputs, CliError> {
    let file = ModelFile::load(model_path).map_err(|e| match e {
        rnn_ekf::Error::Io(io) => CliError::Io(format!("{}: {io}", model_path.display())),
        other => CliError::Config(format!("{}: {other}", model_path.display())),
    })?;
    let (model, theta) = file.instantiate()?;
    let loaded = run.config.data_section()?.load(run.seed)?;
    let data = loaded.test.unwrap_or(loaded.train);
    check_dims(&model, &data)?;
    let data = file.scaling.as_ref().map_or_else(|| data.clone(), |s| s.apply(&data));
    let loss = run.config.loss(model.n_y())?;
    let regs = run.config.regularizers(run.config.regularization.lambda);
    let ev = evaluate(&model, &theta, &data, &loss, &regs, &run.config.eval_settings(run.seed))?;
    let label = fit_label(&data);
    let table = eval_table(&data, &ev)?;
    print!("{}", table.replace(',', "\t"));
    println!("overall {label}: {:.4}", ev.fit);
    let mut out = Outputs::default();
    out.add("eval.csv", table.into_bytes());
    Ok(out)
}

fn eval_table(data: &Dataset, ev: &Evaluation) -> Result<String, CliError> {
    let mut s = String::from("experiment,samples,fit\n");
    for (i, (exp, y_hat)) in data.experiments.iter().zip(&ev.outputs).enumerate() {
        let one = Dataset::new(vec![exp.clone()])?.with_binary_outputs(data.binary_outputs.clone())?;
        let fit = fit_score(&one, &exp.outputs, y_hat)?;
        writeln!(s, "{i},{},{}", exp.len(), fmt_f64(fit)).unwrap();
    }
    writeln!(s, "all,{},{}", data.total_len(), fmt_f64(ev.fit)).unwrap();
    Ok(s)
}

/// `sweep-l1`: one row per λ with the mean test fit and zero fraction over
/// the configured seeds.
pub fn sweep_l1(run: &Run) -> Result<Outputs, CliError> {
    let sweep = run
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("a [sweep] section is required".into()))?;
    let seeds = sweep.seeds.clone().unwrap_or_else(|| vec![run.seed]);
    let threshold = run.config.ekf_config(1, 0.0, run.seed)?.zero_threshold;
    let mut table = String::from("lambda,fit,zero_fraction\n");
    for &lambda in &sweep.lambdas {
        let (mut fit, mut zeros) = (0.0, 0.0);
        for &seed in &seeds {
            let t = train_once(&run.config, seed, Some(lambda))?;
            fit += t.test_fit.unwrap_or(t.train_fit);
            zeros += t.theta.zero_fraction(threshold);
        }
        let n = seeds.len() as f64;
        log::info!("lambda {lambda}: fit {:.3}, zero fraction {:.3}", fit / n, zeros / n);
        writeln!(table, "{},{},{}", fmt_f64(lambda), fmt_f64(fit / n), fmt_f64(zeros / n)).unwrap();
    }
    print!("{}", table.replace(',', "\t"));
    let mut out = Outputs::default();
    out.add("sweep.csv", table.into_bytes());
    Ok(out)
}

/// `mpc`: closed-loop simulation on the CSTR; writes `loop.csv` and
/// `mpc_summary.json`.
pub fn mpc_cmd(run: &Run) -> Result<Outputs, CliError> {
    let section = run
        .config
        .mpc
        .as_ref()
        .ok_or_else(|| CliError::Config("an [mpc] section is required".into()))?;
    let model_path = section.model.clone().unwrap_or_else(|| run.out.join("model.json"));
    let file = ModelFile::load(&model_path).map_err(|e| match e {
        rnn_ekf::Error::Io(io) => CliError::Io(format!("{}: {io}", model_path.display())),
        other => CliError::Config(format!("{}: {other}", model_path.display())),
    })?;
    let (model, theta) = file.instantiate()?;
    let params = section.plant.params()?;
    let nominal_feed = params.nominal_feed;
    let plant = Cstr::new(params)?;
    let measured = if section.measured.is_empty() {
        vec![nominal_feed; plant.n_v()]
    } else {
        section.measured.clone()
    };
    if measured.len() != plant.n_v() || section.reference.len() != plant.n_y() {
        return Err(CliError::Config(format!(
            "mpc: the plant has {} measured disturbances and {} outputs",
            plant.n_v(),
            plant.n_y()
        )));
    }
    let dist = section.disturbance(model.n_x(), model.n_y());
    let ctrl = Controller {
        model: &model,
        theta: &theta,
        dist: &dist,
        mpc: section.mpc_config()?,
        estimator: section.estimator_config(),
        scaling: file.scaling.clone(),
    };
    let reference = section.reference.clone();
    let (log, res) = closed_loop_sim(&plant, &ctrl, |_| reference.clone(), |_| measured.clone(), section.steps);
    res?;
    let times: Vec<f64> = log.rows.iter().map(|r| r.solve_ms).collect();
    let summary = json!({
        "steps": log.rows.len(),
        "disturbance_states": dist.n_d(),
        "steady_state_error": log.final_error(10),
        "mean_solve_ms": times.iter().sum::<f64>() / times.len().max(1) as f64,
        "max_solve_ms": times.iter().copied().fold(0.0, f64::max),
    });
    println!("steady-state |y - r|: {:.3e}", log.final_error(10));
    let mut out = Outputs::default();
    out.add("loop.csv", csv_bytes(|b| log.write_csv(b))?);
    out.add("mpc_summary.json", json_bytes(&summary)?);
    Ok(out)
}
