//! Run configuration file (TOML).

use std::path::{Path, PathBuf};

use rnn_ekf::data::{
    gen_binary_linear, gen_nonlinear_benchmark, load_csv, Dataset, DatasetMeta, GeneratedData,
};
use rnn_ekf::ekf::{EkfConfig, L1Mode, NoiseCov, NoiseModel};
use rnn_ekf::gd::{CondensingMode, GdConfig};
use rnn_ekf::init_state::{PswarmConfig, DEFAULT_N_BAR};
use rnn_ekf::models::ModelSpec;
use rnn_ekf::mpc::{
    excite_plant, Cstr, CstrParams, DisturbanceModel, EstimatorConfig, Excitation, MpcConfig,
};
use rnn_ekf::numerics::{Matrix, SpdMatrix, Vector};
use rnn_ekf::objectives::{Loss, Regularizer};
use rnn_ekf::report::EvalSettings;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    pub out: Option<PathBuf>,
    pub data: Option<DataSection>,
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub regularization: RegSection,
    pub trainer: Option<TrainerSection>,
    #[serde(default)]
    pub init_state: InitStateSection,
    pub sweep: Option<SweepSection>,
    pub mpc: Option<MpcSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub generator: Option<GeneratorSection>,
    pub csv: Option<PathBuf>,
    pub n_u: Option<usize>,
    pub n_y: Option<usize>,
    /// Samples in the training prefix. Defaults to the sidecar value, or the
    /// whole file.
    pub n_train: Option<usize>,
    pub binary_outputs: Option<Vec<bool>>,
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSection {
    BinaryLinear { sigma: f64, n_total: usize },
    NonlinearBenchmark { n_total: usize },
    /// Nominal CSTR under the default excitation; inputs are coolant
    /// temperature and feed concentration.
    Cstr { n_total: usize },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSection {
    Mse {
        /// Diagonal of `W_y`; identity when absent.
        weights: Option<Vec<f64>>,
    },
    CrossEntropy {
        epsilon: f64,
    },
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection::Mse { weights: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegSection {
    #[serde(default = "default_rho")]
    pub rho_theta: f64,
    #[serde(default = "default_rho")]
    pub rho_x: f64,
    #[serde(default)]
    pub lambda: f64,
}

fn default_rho() -> f64 {
    1e-3
}

impl Default for RegSection {
    fn default() -> Self {
        RegSection {
            rho_theta: default_rho(),
            rho_x: default_rho(),
            lambda: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainerSection {
    Ekf {
        epochs: usize,
        #[serde(default = "one")]
        init_scale: f64,
        #[serde(default = "default_q")]
        q_x: f64,
        #[serde(default = "default_q")]
        q_theta: f64,
        #[serde(default)]
        l1_mode: L1ModeName,
    },
    Gd {
        epochs: usize,
        lr: f64,
        #[serde(default)]
        mode: GdModeName,
        #[serde(default = "one")]
        gamma: f64,
        /// Batches per experiment in partial mode.
        #[serde(default = "one_usize")]
        m: usize,
        #[serde(default = "one")]
        init_scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_q() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1ModeName {
    #[default]
    Batch,
    Sequential,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdModeName {
    #[default]
    Condensed,
    Relaxed,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitStateSection {
    #[serde(default = "default_n_bar")]
    pub n_bar: usize,
    pub population: Option<usize>,
    pub max_iterations: Option<usize>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

fn default_n_bar() -> usize {
    DEFAULT_N_BAR
}

impl Default for InitStateSection {
    fn default() -> Self {
        InitStateSection {
            n_bar: DEFAULT_N_BAR,
            population: None,
            max_iterations: None,
            lower: None,
            upper: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub lambdas: Vec<f64>,
    /// Seeds averaged per λ; defaults to the run seed alone.
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    /// Trained model file; defaults to `model.json` in the output directory.
    pub model: Option<PathBuf>,
    pub steps: usize,
    /// Constant reference, plant units.
    pub reference: Vec<f64>,
    /// Constant measured disturbance, plant units.
    #[serde(default)]
    pub measured: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Diagonal of the input-increment weight.
    pub w_du: Option<Vec<f64>>,
    /// Diagonal of the tracking weight.
    pub w_y: Option<Vec<f64>>,
    #[serde(default)]
    pub strict_causal_skip: bool,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub disturbance: DisturbanceName,
    #[serde(default = "one")]
    pub q_d: f64,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub plant: PlantSection,
}

fn default_horizon() -> usize {
    10
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceName {
    #[default]
    Output,
    None,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub q_x: f64,
    pub q_y: f64,
    pub p0: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let e = EstimatorConfig::default();
        EstimatorSection {
            q_x: e.q_x,
            q_y: e.q_y,
            p0: e.p0,
        }
    }
}

/// CSTR plant. Unset fields keep their defaults; `*_offset` fields shift the
/// plant away from the nominal one to create model mismatch.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub dilution: Option<f64>,
    pub feed_temperature: Option<f64>,
    #[serde(default)]
    pub feed_temperature_offset: f64,
    pub k0: Option<f64>,
    pub activation: Option<f64>,
    pub heat_release: Option<f64>,
    pub heat_transfer: Option<f64>,
    pub sample_time: Option<f64>,
    pub substeps: Option<usize>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{name} must be non-negative and finite, got {v}")))
    }
}

impl RunConfig {
    /// Parses and validates a configuration document.
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Input files are relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(csv) = cfg.data.as_mut().and_then(|d| d.csv.as_mut()) {
            *csv = base.join(&*csv);
        }
        if let Some(model) = cfg.mpc.as_mut().and_then(|m| m.model.as_mut()) {
            *model = base.join(&*model);
        }
        Ok(cfg)
    }

    /// Checks every section present, independent of the subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(d) = &self.data {
            match (&d.generator, &d.csv) {
                (Some(_), Some(_)) => return Err(config_err("data: give either generator or csv, not both")),
                (None, None) => return Err(config_err("data: a generator or a csv path is required")),
                (None, Some(_)) if d.n_u.is_none() || d.n_y.is_none() => {
                    return Err(config_err("data: csv input needs n_u and n_y"))
                }
                _ => {}
            }
            match d.generator {
                Some(GeneratorSection::BinaryLinear { sigma, n_total }) => {
                    non_negative("data.generator.sigma", sigma)?;
                    if n_total < 2 {
                        return Err(config_err("data.generator.n_total must be at least 2"));
                    }
                }
                Some(GeneratorSection::NonlinearBenchmark { n_total } | GeneratorSection::Cstr { n_total })
                    if n_total < 2 =>
                {
                    return Err(config_err("data.generator.n_total must be at least 2"));
                }
                _ => {}
            }
        }
        if let Some(m) = &self.model {
            m.build().map_err(|e| config_err(format!("model: {e}")))?;
        }
        match &self.loss {
            LossSection::Mse { weights: Some(w) } => {
                for &v in w {
                    positive("loss.weights", v)?;
                }
            }
            LossSection::CrossEntropy { epsilon } if !(*epsilon > 0.0 && *epsilon < 0.5) => {
                return Err(config_err("loss.epsilon must lie in (0, 0.5)"));
            }
            _ => {}
        }
        non_negative("regularization.rho_theta", self.regularization.rho_theta)?;
        non_negative("regularization.rho_x", self.regularization.rho_x)?;
        non_negative("regularization.lambda", self.regularization.lambda)?;
        match &self.trainer {
            Some(TrainerSection::Ekf {
                epochs,
                init_scale,
                q_x,
                q_theta,
                ..
            }) => {
                if *epochs == 0 {
                    return Err(config_err("trainer.epochs must be at least 1"));
                }
                positive("trainer.init_scale", *init_scale)?;
                non_negative("trainer.q_x", *q_x)?;
                non_negative("trainer.q_theta", *q_theta)?;
            }
            Some(TrainerSection::Gd {
                epochs,
                lr,
                gamma,
                m,
                init_scale,
                ..
            }) => {
                if *epochs == 0 {
                    return Err(config_err("trainer.epochs must be at least 1"));
                }
                positive("trainer.lr", *lr)?;
                positive("trainer.gamma", *gamma)?;
                positive("trainer.init_scale", *init_scale)?;
                if *m == 0 {
                    return Err(config_err("trainer.m must be at least 1"));
                }
            }
            None => {}
        }
        if self.init_state.n_bar == 0 {
            return Err(config_err("init_state.n_bar must be at least 1"));
        }
        if let (Some(lo), Some(hi)) = (self.init_state.lower, self.init_state.upper) {
            if !(lo < hi) {
                return Err(config_err("init_state.lower must be below init_state.upper"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.lambdas.is_empty() {
                return Err(config_err("sweep.lambdas must not be empty"));
            }
            for &l in &s.lambdas {
                non_negative("sweep.lambdas", l)?;
            }
            if s.seeds.as_ref().is_some_and(|v| v.is_empty()) {
                return Err(config_err("sweep.seeds must not be empty"));
            }
        }
        if let Some(m) = &self.mpc {
            m.mpc_config().map_err(|e| config_err(format!("mpc: {e}")))?;
            if m.steps == 0 {
                return Err(config_err("mpc.steps must be at least 1"));
            }
            if m.reference.iter().chain(&m.measured).any(|v| !v.is_finite()) {
                return Err(config_err("mpc.reference and mpc.measured must be finite"));
            }
            m.estimator_config().validate().map_err(|e| config_err(format!("mpc.estimator: {e}")))?;
            positive("mpc.q_d", m.q_d)?;
            m.plant.params().map_err(|e| config_err(format!("mpc.plant: {e}")))?;
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<&ModelSpec, CliError> {
        self.model.as_ref().ok_or_else(|| config_err("a [model] section is required"))
    }

    pub fn data_section(&self) -> Result<&DataSection, CliError> {
        self.data.as_ref().ok_or_else(|| config_err("a [data] section is required"))
    }

    pub fn loss(&self, n_y: usize) -> Result<Loss, CliError> {
        let loss = match &self.loss {
            LossSection::Mse { weights: None } => Loss::mse_identity(n_y),
            LossSection::Mse { weights: Some(w) } => {
                if w.len() != n_y {
                    return Err(config_err(format!("loss.weights has {} entries, model has {n_y} outputs", w.len())));
                }
                Loss::mse(SpdMatrix::from_diagonal(w)).map_err(|e| config_err(format!("loss: {e}")))?
            }
            LossSection::CrossEntropy { epsilon } => {
                Loss::cross_entropy(*epsilon).map_err(|e| config_err(format!("loss: {e}")))?
            }
        };
        Ok(loss)
    }

    /// Regularizer list with the ℓ1 weight replaced by `lambda`.
    pub fn regularizers(&self, lambda: f64) -> Vec<Regularizer> {
        let r = &self.regularization;
        let mut regs = vec![Regularizer::L2 {
            rho_theta: r.rho_theta,
            rho_x: r.rho_x,
        }];
        if lambda > 0.0 {
            regs.push(Regularizer::L1 { lambda });
        }
        regs
    }

    pub fn pswarm(&self, seed: u64) -> PswarmConfig {
        let s = &self.init_state;
        let mut p = PswarmConfig::default().with_seed(seed);
        p.population = s.population;
        p.max_iterations = s.max_iterations;
        if let Some(lo) = s.lower {
            p.lower = lo;
        }
        if let Some(hi) = s.upper {
            p.upper = hi;
        }
        p
    }

    pub fn eval_settings(&self, seed: u64) -> EvalSettings {
        EvalSettings {
            n_bar: self.init_state.n_bar,
            pswarm: self.pswarm(seed),
        }
    }

    pub fn ekf_config(&self, n_y: usize, lambda: f64, seed: u64) -> Result<EkfConfig, CliError> {
        match &self.trainer {
            Some(TrainerSection::Ekf {
                epochs,
                init_scale,
                q_x,
                q_theta,
                l1_mode,
            }) => {
                let mut cfg = EkfConfig::new(self.loss(n_y)?, self.regularizers(lambda)).with_epochs(*epochs);
                cfg.init_scale = *init_scale;
                cfg.noise = NoiseModel {
                    q_x: NoiseCov::Isotropic(*q_x),
                    q_theta: NoiseCov::Isotropic(*q_theta),
                };
                cfg.l1_mode = match l1_mode {
                    L1ModeName::Batch => L1Mode::Batch,
                    L1ModeName::Sequential => L1Mode::Sequential,
                };
                cfg.n_bar = self.init_state.n_bar;
                cfg.pswarm = self.pswarm(seed);
                Ok(cfg)
            }
            _ => Err(config_err("this command needs an ekf [trainer] section")),
        }
    }

    pub fn gd_config(&self, n_y: usize) -> Result<GdConfig, CliError> {
        match &self.trainer {
            Some(TrainerSection::Gd {
                epochs,
                lr,
                mode,
                gamma,
                m,
                init_scale,
            }) => {
                let mode = match mode {
                    GdModeName::Condensed => CondensingMode::Condensed,
                    GdModeName::Relaxed => CondensingMode::Relaxed { gamma: *gamma },
                    GdModeName::Partial => CondensingMode::Partial { m: *m, gamma: *gamma },
                };
                let mut cfg = GdConfig::new(
                    self.loss(n_y)?,
                    self.regularizers(self.regularization.lambda),
                    mode,
                    *lr,
                    *epochs,
                );
                cfg.init_scale = *init_scale;
                Ok(cfg)
            }
            _ => Err(config_err("this command needs a gd [trainer] section")),
        }
    }
}

/// Data loaded for training or evaluation, in plant units.
pub struct LoadedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl DataSection {
    /// Runs the configured generator with `seed`.
    pub fn generate(&self, seed: u64) -> Result<GeneratedData, CliError> {
        let g = match self.generator.as_ref().ok_or_else(|| config_err("data.generator is required"))? {
            GeneratorSection::BinaryLinear { sigma, n_total } => gen_binary_linear(*sigma, *n_total, seed),
            GeneratorSection::NonlinearBenchmark { n_total } => gen_nonlinear_benchmark(seed, *n_total),
            GeneratorSection::Cstr { n_total } => Cstr::new(CstrParams::default())
                .and_then(|plant| excite_plant(&plant, &Excitation::cstr(), *n_total, seed))
                .map(|data| GeneratedData {
                    data,
                    n_train: n_total / 2,
                    seed,
                    generator: "cstr".into(),
                }),
        };
        g.map_err(|e| config_err(format!("data.generator: {e}")))
    }

    pub fn generator_params(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        match &self.generator {
            Some(GeneratorSection::BinaryLinear { sigma, n_total }) => {
                m.insert("sigma".into(), (*sigma).into());
                m.insert("n_total".into(), (*n_total).into());
            }
            Some(GeneratorSection::NonlinearBenchmark { n_total } | GeneratorSection::Cstr { n_total }) => {
                m.insert("n_total".into(), (*n_total).into());
            }
            None => {}
        }
        m
    }

    /// Generated data, or the CSV file split at `n_train`.
    pub fn load(&self, seed: u64) -> Result<LoadedData, CliError> {
        if self.generator.is_some() {
            let g = self.generate(seed)?;
            return Ok(LoadedData {
                train: g.train(),
                test: Some(g.test()),
            });
        }
        let path = self.csv.as_ref().ok_or_else(|| config_err("data.csv is required"))?;
        let (n_u, n_y) = (self.n_u.unwrap_or(0), self.n_y.unwrap_or(0));
        let mut data = load_csv(path, n_u, n_y).map_err(|e| match e {
            rnn_ekf::Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
            other => config_err(format!("{}: {other}", path.display())),
        })?;
        let meta = read_sidecar(path)?;
        let binary = self
            .binary_outputs
            .clone()
            .or_else(|| meta.as_ref().map(|m| m.binary_outputs.clone()).filter(|b| !b.is_empty()));
        if let Some(flags) = binary {
            data = data.with_binary_outputs(flags).map_err(|e| config_err(format!("data.binary_outputs: {e}")))?;
        }
        let n_train = self.n_train.or_else(|| meta.as_ref().map(|m| m.n_train));
        match n_train {
            Some(n) if n < data.total_len() => {
                let (train, test) = data.split_at(n).map_err(|e| config_err(format!("data.n_train: {e}")))?;
                Ok(LoadedData { train, test: Some(test) })
            }
            _ => Ok(LoadedData { train: data, test: None }),
        }
    }
}

/// Metadata written next to `csv`, if any.
pub fn read_sidecar(csv: &Path) -> Result<Option<DatasetMeta>, CliError> {
    let path = DatasetMeta::sidecar_path(csv);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))
}

impl MpcSection {
    pub fn mpc_config(&self) -> rnn_ekf::Result<MpcConfig> {
        let n_y = self.reference.len();
        let mut cfg = MpcConfig::new(n_y, self.u_min.clone(), self.u_max.clone());
        cfg.horizon = self.horizon;
        if let Some(w) = &self.w_du {
            cfg.w_du = diagonal(w);
        }
        if let Some(w) = &self.w_y {
            cfg.w_y = diagonal(w);
        }
        cfg.strict_causal_skip = self.strict_causal_skip;
        if let Some(n) = self.max_iterations {
            cfg.max_iterations = n;
        }
        if let Some(t) = self.tolerance {
            cfg.tolerance = t;
        }
        cfg.validate(self.u_min.len(), n_y)?;
        Ok(cfg)
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            q_x: self.estimator.q_x,
            q_y: self.estimator.q_y,
            p0: self.estimator.p0,
        }
    }

    pub fn disturbance(&self, n_x: usize, n_y: usize) -> DisturbanceModel {
        match self.disturbance {
            DisturbanceName::Output => DisturbanceModel::output(n_x, n_y, self.q_d),
            DisturbanceName::None => DisturbanceModel::none(n_x, n_y),
        }
    }
}

fn diagonal(w: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(w))
}

impl PlantSection {
    pub fn params(&self) -> rnn_ekf::Result<CstrParams> {
        let mut p = CstrParams::default();
        let set = |field: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *field = v;
            }
        };
        set(&mut p.dilution, self.dilution);
        set(&mut p.feed_temperature, self.feed_temperature);
        set(&mut p.k0, self.k0);
        set(&mut p.activation, self.activation);
        set(&mut p.heat_release, self.heat_release);
        set(&mut p.heat_transfer, self.heat_transfer);
        set(&mut p.sample_time, self.sample_time);
        if let Some(n) = self.substeps {
            p.substeps = n;
        }
        p.feed_temperature += self.feed_temperature_offset;
        Cstr::new(p.clone())?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"
[data]
generator = { kind = "nonlinear_benchmark", n_total = 100 }

[model]
family = "rnn"
n_x = 2
n_u = 1
n_y = 1

[trainer]
kind = "ekf"
epochs = 2
"#;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.loss, LossSection::Mse { weights: None });
        assert_eq!(c.regularization, RegSection::default());
        assert_eq!(c.init_state.n_bar, DEFAULT_N_BAR);
        let ekf = c.ekf_config(1, 0.0, 0).unwrap();
        assert_eq!(ekf.epochs, 2);
        assert!(matches!(ekf.l1_mode, L1Mode::Batch));
        assert_eq!(c.regularizers(0.0).len(), 1);
        assert_eq!(c.regularizers(1e-3).len(), 2);
        assert!(c.gd_config(1).is_err());
    }

    #[test]
    fn data_source_must_be_unique() {
        let both = MINIMAL.replace("[data]\n", "[data]\ncsv = \"x.csv\"\nn_u = 1\nn_y = 1\n");
        assert!(RunConfig::from_toml_str(&both).is_err());
        let none = MINIMAL.replace("generator = { kind = \"nonlinear_benchmark\", n_total = 100 }", "");
        assert!(RunConfig::from_toml_str(&none).is_err());
        let csv_without_dims = MINIMAL.replace(
            "generator = { kind = \"nonlinear_benchmark\", n_total = 100 }",
            "csv = \"x.csv\"",
        );
        assert!(RunConfig::from_toml_str(&csv_without_dims).is_err());
    }

    #[test]
    fn loss_weights_must_match_outputs() {
        let c = RunConfig::from_toml_str(&format!("{MINIMAL}\n[loss]\nkind = \"mse\"\nweights = [1.0, 2.0]\n")).unwrap();
        assert!(c.loss(1).is_err());
        assert!(c.loss(2).is_ok());
    }

    #[test]
    fn gd_modes() {
        let gd = MINIMAL.replace(
            "kind = \"ekf\"\nepochs = 2",
            "kind = \"gd\"\nepochs = 2\nlr = 0.1\nmode = \"partial\"\nm = 3\ngamma = 0.5",
        );
        let c = RunConfig::from_toml_str(&gd).unwrap();
        let cfg = c.gd_config(1).unwrap();
        assert_eq!(cfg.mode, CondensingMode::Partial { m: 3, gamma: 0.5 });
    }

    #[test]
    fn plant_offsets_apply() {
        let text = format!(
            "{MINIMAL}\n[mpc]\nsteps = 5\nreference = [315.0]\nu_min = [280.0]\nu_max = [298.0]\n\n[mpc.plant]\nfeed_temperature_offset = 3.0\n"
        );
        let c = RunConfig::from_toml_str(&text).unwrap();
        let p = c.mpc.unwrap().plant.params().unwrap();
        assert_eq!(p.feed_temperature, CstrParams::default().feed_temperature + 3.0);
    }

    proptest! {
        #[test]
        fn parser_never_panics(
            edits in proptest::collection::vec((0usize..400, "[0-9a-z_=\"\\[\\]{},.\\- \\n]{0,3}"), 1..5),
        ) {
            let mut text = MINIMAL.as_bytes().to_vec();
            for (at, s) in edits {
                let at = at % text.len();
                text.splice(at..at + 1, s.bytes());
            }
            let _ = RunConfig::from_toml_str(&String::from_utf8_lossy(&text));
        }
    }
}
