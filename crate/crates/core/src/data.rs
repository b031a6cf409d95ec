//! Datasets, standardization, fit metrics and the synthetic benchmark
//! generators.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Signal};

/// Column name of the optional experiment identifier.
pub const EXPERIMENT_COLUMN: &str = "experiment";

/// One input/output record of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub inputs: Signal,
    pub outputs: Signal,
}

impl Experiment {
    pub fn new(inputs: Signal, outputs: Signal) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::dims(format!(
                "experiment has {} input rows but {} output rows",
                inputs.len(),
                outputs.len()
            )));
        }
        if inputs.is_empty() {
            return Err(Error::dims("experiment must contain at least one sample"));
        }
        Ok(Experiment { inputs, outputs })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// First `n` samples (clamped to the length).
    pub fn prefix(&self, n: usize) -> Experiment {
        let n = n.min(self.len());
        Experiment {
            inputs: self.inputs.slice(0, n),
            outputs: self.outputs.slice(0, n),
        }
    }
}

/// A collection of experiments sharing channel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub experiments: Vec<Experiment>,
    pub sample_time: Option<f64>,
    /// Per output channel: true for {0, 1} labels, which are never scaled.
    pub binary_outputs: Vec<bool>,
}

impl Dataset {
    pub fn single(inputs: Signal, outputs: Signal) -> Result<Self> {
        let binary = vec![false; outputs.width()];
        Ok(Dataset {
            experiments: vec![Experiment::new(inputs, outputs)?],
            sample_time: None,
            binary_outputs: binary,
        })
    }

    pub fn new(experiments: Vec<Experiment>) -> Result<Self> {
        let first = experiments
            .first()
            .ok_or_else(|| Error::dims("dataset needs at least one experiment"))?;
        let (nu, ny) = (first.inputs.width(), first.outputs.width());
        if experiments
            .iter()
            .any(|e| e.inputs.width() != nu || e.outputs.width() != ny)
        {
            return Err(Error::dims("experiments disagree on channel counts"));
        }
        Ok(Dataset {
            experiments,
            sample_time: None,
            binary_outputs: vec![false; ny],
        })
    }

    pub fn with_binary_outputs(mut self, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != self.n_y() {
            return Err(Error::dims("binary flag count must equal n_y"));
        }
        self.binary_outputs = flags;
        Ok(self)
    }

    pub fn n_u(&self) -> usize {
        self.experiments[0].inputs.width()
    }

    pub fn n_y(&self) -> usize {
        self.experiments[0].outputs.width()
    }

    /// Total number of samples over all experiments.
    pub fn total_len(&self) -> usize {
        self.experiments.iter().map(Experiment::len).sum()
    }

    pub fn is_binary(&self) -> bool {
        !self.binary_outputs.is_empty() && self.binary_outputs.iter().all(|&b| b)
    }

    /// Splits a single-experiment dataset at sample `n`.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if self.experiments.len() != 1 {
            return Err(Error::InvalidConfig(
                "split_at requires a single-experiment dataset".into(),
            ));
        }
        let e = &self.experiments[0];
        if n == 0 || n >= e.len() {
            return Err(Error::InvalidConfig(format!(
                "split point {n} outside 1..{}",
                e.len()
            )));
        }
        let part = |a, b| Dataset {
            experiments: vec![Experiment {
                inputs: e.inputs.slice(a, b),
                outputs: e.outputs.slice(a, b),
            }],
            sample_time: self.sample_time,
            binary_outputs: self.binary_outputs.clone(),
        };
        Ok((part(0, n), part(n, e.len())))
    }

    /// Writes the dataset as CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let multi = self.experiments.len() > 1;
        let mut header: Vec<String> = Vec::new();
        if multi {
            header.push(EXPERIMENT_COLUMN.into());
        }
        header.extend((1..=self.n_u()).map(|i| format!("u{i}")));
        header.extend((1..=self.n_y()).map(|i| format!("y{i}")));
        wr.write_record(&header).map_err(csv_io)?;
        for (id, e) in self.experiments.iter().enumerate() {
            for k in 0..e.len() {
                let mut rec: Vec<String> = Vec::with_capacity(header.len());
                if multi {
                    rec.push(id.to_string());
                }
                rec.extend(e.inputs.row(k).iter().map(|v| fmt_f64(*v)));
                rec.extend(e.outputs.row(k).iter().map(|v| fmt_f64(*v)));
                wr.write_record(&rec).map_err(csv_io)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Reads a dataset CSV with header `u1..u_nu, y1..y_ny` and an optional
/// `experiment` column.
pub fn load_csv(path: &Path, n_u: usize, n_y: usize) -> Result<Dataset> {
    parse_csv(&std::fs::read_to_string(path)?, n_u, n_y)
}

/// Parses dataset CSV text. Rows sharing an experiment id are grouped in
/// order of first appearance.
pub fn parse_csv(text: &str, n_u: usize, n_y: usize) -> Result<Dataset> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rd
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            msg: e.to_string(),
        })?
        .clone();

    let mut u_col = vec![None; n_u];
    let mut y_col = vec![None; n_y];
    let mut exp_col = None;
    for (i, name) in header.iter().enumerate() {
        let slot = if name == EXPERIMENT_COLUMN {
            &mut exp_col
        } else if let Some(idx) = channel_index(name, 'u') {
            if idx >= n_u {
                return Err(Error::dims(format!("column {name} exceeds declared n_u={n_u}")));
            }
            &mut u_col[idx]
        } else if let Some(idx) = channel_index(name, 'y') {
            if idx >= n_y {
                return Err(Error::dims(format!("column {name} exceeds declared n_y={n_y}")));
            }
            &mut y_col[idx]
        } else {
            return Err(Error::Parse {
                row: 1,
                msg: format!("unexpected column {name:?}"),
            });
        };
        if slot.replace(i).is_some() {
            return Err(Error::Parse {
                row: 1,
                msg: format!("duplicate column {name:?}"),
            });
        }
    }
    let u_col: Vec<usize> = collect_columns(u_col, 'u')?;
    let y_col: Vec<usize> = collect_columns(y_col, 'y')?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (Signal, Signal)> = HashMap::new();
    let mut urow = vec![0.0; n_u];
    let mut yrow = vec![0.0; n_y];
    for (i, rec) in rd.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        let field = |c: usize| -> Result<f64> {
            let s = rec.get(c).ok_or_else(|| Error::Parse {
                row,
                msg: format!("missing field {}", c + 1),
            })?;
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("cannot parse {s:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: "non-finite value".into(),
                });
            }
            Ok(v)
        };
        for (j, &c) in u_col.iter().enumerate() {
            urow[j] = field(c)?;
        }
        for (j, &c) in y_col.iter().enumerate() {
            yrow[j] = field(c)?;
        }
        let id = match exp_col {
            Some(c) => rec.get(c).unwrap_or_default().to_string(),
            None => String::new(),
        };
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (Signal::new(n_u), Signal::new(n_y))
        });
        entry.0.push(&urow)?;
        entry.1.push(&yrow)?;
    }
    if order.is_empty() {
        return Err(Error::Parse {
            row: 2,
            msg: "no data rows".into(),
        });
    }
    let experiments = order
        .into_iter()
        .map(|id| {
            let (u, y) = groups.remove(&id).unwrap();
            Experiment::new(u, y)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(experiments)
}

fn channel_index(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.starts_with('0') {
        return None;
    }
    rest.parse::<usize>().ok().map(|i| i - 1)
}

fn collect_columns(cols: Vec<Option<usize>>, prefix: char) -> Result<Vec<usize>> {
    cols.into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or_else(|| Error::dims(format!("missing column {prefix}{}", i + 1))))
        .collect()
}

/// Per-channel affine scaling `(v - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaling {
    pub u_mean: Vec<f64>,
    pub u_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Scaling {
    /// Identity scaling for the given widths.
    pub fn identity(n_u: usize, n_y: usize) -> Self {
        Scaling {
            u_mean: vec![0.0; n_u],
            u_std: vec![1.0; n_u],
            y_mean: vec![0.0; n_y],
            y_std: vec![1.0; n_y],
        }
    }

    /// Statistics of `data` (population standard deviation). Binary output
    /// channels and constant channels get the identity map.
    pub fn fit(data: &Dataset) -> Self {
        let stats = |get: &dyn Fn(&Experiment) -> &Signal, j: usize| {
            let col: Vec<f64> = data.experiments.iter().flat_map(|e| get(e).channel(j)).collect();
            mean_std(&col)
        };
        let mut s = Scaling::identity(data.n_u(), data.n_y());
        for j in 0..data.n_u() {
            let (m, sd) = stats(&|e| &e.inputs, j);
            if sd > 0.0 {
                s.u_mean[j] = m;
                s.u_std[j] = sd;
            } else {
                log::warn!("input channel u{} is constant; left unscaled", j + 1);
            }
        }
        for j in 0..data.n_y() {
            if data.binary_outputs.get(j).copied().unwrap_or(false) {
                continue;
            }
            let (m, sd) = stats(&|e| &e.outputs, j);
            if sd > 0.0 {
                s.y_mean[j] = m;
                s.y_std[j] = sd;
            } else {
                log::warn!("output channel y{} is constant; left unscaled", j + 1);
            }
        }
        s
    }

    pub fn check_widths(&self, n_u: usize, n_y: usize) -> Result<()> {
        if self.u_mean.len() != n_u
            || self.u_std.len() != n_u
            || self.y_mean.len() != n_y
            || self.y_std.len() != n_y
        {
            return Err(Error::dims("scaling widths do not match the model"));
        }
        if self
            .u_std
            .iter()
            .chain(&self.y_std)
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::InvalidConfig("scaling std must be positive".into()));
        }
        Ok(())
    }

    fn map(sig: &Signal, mean: &[f64], std: &[f64], forward: bool) -> Signal {
        let mut out = sig.clone();
        for k in 0..out.len() {
            for (j, v) in out.row_mut(k).iter_mut().enumerate() {
                *v = if forward {
                    (*v - mean[j]) / std[j]
                } else {
                    *v * std[j] + mean[j]
                };
            }
        }
        out
    }

    pub fn scale_inputs(&self, u: &Signal) -> Signal {
        Self::map(u, &self.u_mean, &self.u_std, true)
    }

    pub fn scale_outputs(&self, y: &Signal) -> Signal {
        Self::map(y, &self.y_mean, &self.y_std, true)
    }

    pub fn unscale_inputs(&self, u: &Signal) -> Signal {
        Self::map(u, &self.u_mean, &self.u_std, false)
    }

    pub fn unscale_outputs(&self, y: &Signal) -> Signal {
        Self::map(y, &self.y_mean, &self.y_std, false)
    }

    pub fn scale_input(&self, j: usize, v: f64) -> f64 {
        (v - self.u_mean[j]) / self.u_std[j]
    }

    pub fn unscale_input(&self, j: usize, v: f64) -> f64 {
        v * self.u_std[j] + self.u_mean[j]
    }

    pub fn scale_output(&self, j: usize, v: f64) -> f64 {
        (v - self.y_mean[j]) / self.y_std[j]
    }

    pub fn unscale_output(&self, j: usize, v: f64) -> f64 {
        v * self.y_std[j] + self.y_mean[j]
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        Dataset {
            experiments: data
                .experiments
                .iter()
                .map(|e| Experiment {
                    inputs: self.scale_inputs(&e.inputs),
                    outputs: self.scale_outputs(&e.outputs),
                })
                .collect(),
            sample_time: data.sample_time,
            binary_outputs: data.binary_outputs.clone(),
        }
    }

    pub fn invert(&self, data: &Dataset) -> Dataset {
        Dataset {
            experiments: data
                .experiments
                .iter()
                .map(|e| Experiment {
                    inputs: self.unscale_inputs(&e.inputs),
                    outputs: self.unscale_outputs(&e.outputs),
                })
                .collect(),
            sample_time: data.sample_time,
            binary_outputs: data.binary_outputs.clone(),
        }
    }
}

/// Standardizes non-binary channels with statistics computed on `data`.
pub fn standardize(data: &Dataset) -> (Dataset, Scaling) {
    let s = Scaling::fit(data);
    (s.apply(data), s)
}

/// Best fit rate `100 (1 - ‖Y - Ŷ‖ / ‖Y - ȳ‖)` over stacked channels, with a
/// per-channel mean `ȳ`.
pub fn bfr(y: &Signal, y_hat: &Signal) -> Result<f64> {
    if y.len() != y_hat.len() || y.width() != y_hat.width() {
        return Err(Error::dims("bfr: Y and Ŷ differ in shape"));
    }
    if y.len() < 2 {
        return Err(Error::dims("bfr needs at least two samples"));
    }
    let mut err = 0.0;
    let mut dev = 0.0;
    for j in 0..y.width() {
        let col = y.channel(j);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        for (k, v) in col.iter().enumerate() {
            let e = v - y_hat.row(k)[j];
            err += e * e;
            dev += (v - mean) * (v - mean);
        }
    }
    if dev == 0.0 {
        return Err(Error::ConstantReference);
    }
    Ok(100.0 * (1.0 - (err / dev).sqrt()))
}

/// Fraction of samples whose thresholded prediction (`ŷ >= 0.5` means 1)
/// equals the label, over all channels.
pub fn accuracy(y: &Signal, y_hat: &Signal) -> Result<f64> {
    if y.len() != y_hat.len() || y.width() != y_hat.width() {
        return Err(Error::dims("accuracy: Y and Ŷ differ in shape"));
    }
    let total = y.as_slice().len();
    if total == 0 {
        return Ok(1.0);
    }
    let hits = y
        .as_slice()
        .iter()
        .zip(y_hat.as_slice())
        .filter(|(&label, &p)| {
            let class = if p >= 0.5 { 1.0 } else { 0.0 };
            class == label
        })
        .count();
    Ok(hits as f64 / total as f64)
}

/// Output of a generator: one record split into a training prefix and a test
/// suffix.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub data: Dataset,
    pub n_train: usize,
    pub seed: u64,
    pub generator: String,
}

impl GeneratedData {
    pub fn train(&self) -> Dataset {
        self.data.split_at(self.n_train).unwrap().0
    }

    pub fn test(&self) -> Dataset {
        self.data.split_at(self.n_train).unwrap().1
    }
}

pub const BINARY_A: [[f64; 3]; 3] = [[0.8, 0.2, -0.1], [0.0, 0.9, 0.1], [0.1, -0.1, 0.7]];
pub const BINARY_B: [f64; 3] = [-1.0, 0.5, 1.0];
pub const BINARY_C: [f64; 3] = [-2.0, 1.5, 0.5];
pub const BINARY_OFFSET: f64 = -2.0;
/// Probability that the input is redrawn from one step to the next.
pub const BINARY_INPUT_CHANGE: f64 = 0.9;

/// Linear third-order system with a thresholded binary output, driven by a
/// piecewise-constant uniform input. First half train, second half test.
pub fn gen_binary_linear(sigma: f64, n_total: usize, seed: u64) -> Result<GeneratedData> {
    if !(sigma >= 0.0) || n_total < 2 {
        return Err(Error::InvalidConfig(
            "binary generator needs sigma >= 0 and at least two samples".into(),
        ));
    }
    let mut rng = SeededRng::new(seed);
    let mut x = [0.0f64; 3];
    let mut u = rng.uniform(0.0, 1.0);
    let mut us = Vec::with_capacity(n_total);
    let mut ys = Vec::with_capacity(n_total);
    for _ in 0..n_total {
        let zeta = sigma * rng.normal();
        let score: f64 = BINARY_C.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>() + BINARY_OFFSET;
        ys.push(if score + zeta >= 0.0 { 1.0 } else { 0.0 });
        us.push(u);
        let mut next = [0.0; 3];
        for (i, n) in next.iter_mut().enumerate() {
            *n = BINARY_A[i].iter().zip(&x).map(|(a, v)| a * v).sum::<f64>()
                + BINARY_B[i] * u
                + sigma * rng.normal();
        }
        x = next;
        if rng.bernoulli(BINARY_INPUT_CHANGE) {
            u = rng.uniform(0.0, 1.0);
        }
    }
    let data = Dataset::single(Signal::scalar(&us), Signal::scalar(&ys))?
        .with_binary_outputs(vec![true])?;
    Ok(GeneratedData {
        data,
        n_train: n_total / 2,
        seed,
        generator: "binary_linear".into(),
    })
}

/// Measurement noise standard deviation of the nonlinear benchmark.
pub const NONLINEAR_NOISE_STD: f64 = 0.01;

/// Saturated second-order SISO system excited by a random-phase multisine:
///
/// ```text
/// x1(k+1) = 0.7 x1(k) - 0.3 x2(k) + tanh(2 u(k))
/// x2(k+1) = 0.5 x1(k) + 0.6 x2(k)
/// y(k)    = tanh(x2(k)) + 0.2 x1(k) + e(k),   e ~ N(0, 0.01²)
/// ```
///
/// The multisine has unit RMS and excites the harmonics `i / n_total`,
/// `i = 1..n_total/10`, with uniform random phases. First half train,
/// second half test.
pub fn gen_nonlinear_benchmark(seed: u64, n_total: usize) -> Result<GeneratedData> {
    if n_total < 20 {
        return Err(Error::InvalidConfig(
            "nonlinear benchmark needs at least 20 samples".into(),
        ));
    }
    let mut rng = SeededRng::new(seed);
    let n_freq = (n_total / 10).max(1);
    let phases: Vec<f64> = (0..n_freq)
        .map(|_| rng.uniform(0.0, 2.0 * std::f64::consts::PI))
        .collect();
    let amp = (2.0 / n_freq as f64).sqrt();
    let us: Vec<f64> = (0..n_total)
        .map(|k| {
            phases
                .iter()
                .enumerate()
                .map(|(i, ph)| {
                    let w = 2.0 * std::f64::consts::PI * (i + 1) as f64 / n_total as f64;
                    amp * (w * k as f64 + ph).sin()
                })
                .sum()
        })
        .collect();
    let (mut x1, mut x2) = (0.0f64, 0.0f64);
    let mut ys = Vec::with_capacity(n_total);
    for &u in &us {
        ys.push(x2.tanh() + 0.2 * x1 + NONLINEAR_NOISE_STD * rng.normal());
        let n1 = 0.7 * x1 - 0.3 * x2 + (2.0 * u).tanh();
        let n2 = 0.5 * x1 + 0.6 * x2;
        x1 = n1;
        x2 = n2;
    }
    Ok(GeneratedData {
        data: Dataset::single(Signal::scalar(&us), Signal::scalar(&ys))?,
        n_train: n_total / 2,
        seed,
        generator: "nonlinear_benchmark".into(),
    })
}

/// Sidecar metadata written next to every generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub n_total: usize,
    pub n_train: usize,
    pub n_u: usize,
    pub n_y: usize,
    #[serde(default)]
    pub binary_outputs: Vec<bool>,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

impl DatasetMeta {
    pub fn sidecar_path(csv: &Path) -> std::path::PathBuf {
        csv.with_extension("meta.json")
    }
}
