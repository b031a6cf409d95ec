use serde::{Deserialize, Serialize};

use super::{DynamicModel, Model, ModelSpec, ParamVector};
use crate::data::Scaling;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const LAYOUT: &str = "theta_x-then-theta_y;per-layer-weights-row-major-then-bias";

/// On-disk model document (JSON). Parameters are written at full double
/// precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub layout: String,
    pub model: ModelSpec,
    pub n_theta_x: usize,
    pub theta: Vec<f64>,
    /// Input/output standardization the parameters were trained under.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
}

impl ModelFile {
    pub fn new(model: &Model, theta: &ParamVector, scaling: Option<Scaling>) -> Result<Self> {
        theta.check(model)?;
        Ok(ModelFile {
            version: MODEL_FORMAT_VERSION,
            layout: LAYOUT.to_string(),
            model: model.spec(),
            n_theta_x: theta.n_theta_x(),
            theta: theta.as_slice().to_vec(),
            scaling,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a model document.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        if f.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported model file version {}",
                f.version
            )));
        }
        if f.layout != LAYOUT {
            return Err(Error::InvalidConfig(format!("unknown parameter layout {:?}", f.layout)));
        }
        if f.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("model parameters must be finite".into()));
        }
        f.instantiate()?;
        Ok(f)
    }

    /// Builds the model and its parameter vector.
    pub fn instantiate(&self) -> Result<(Model, ParamVector)> {
        let model = self.model.build()?;
        // Guard against absurd sizes before allocating anything dimension-driven.
        if model.n_theta() != self.theta.len() {
            return Err(Error::dims(format!(
                "model expects {} parameters, file has {}",
                model.n_theta(),
                self.theta.len()
            )));
        }
        let theta = ParamVector::new(self.theta.clone(), self.n_theta_x)?;
        theta.check(&model)?;
        if let Some(s) = &self.scaling {
            s.check_widths(model.n_u(), model.n_y())?;
        }
        Ok((model, theta))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
