//! Checkpoints: flat parameter tensors in `FPXT1` files plus a JSON manifest.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fpxt;
use crate::haar::ImageShape;
use crate::predictor::{Activation, FactorizedModel, ModelConfig};
use crate::schedules::HeteroSchedule;

pub const MANIFEST: &str = "checkpoint.json";
pub const PARAMS: &str = "params.fpxt";
pub const EMA_PARAMS: &str = "ema.fpxt";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FactorizedModel,
    pub ema_params: Option<Vec<f64>>,
    pub schedule: HeteroSchedule,
    pub omega: f64,
    pub t_max: f64,
    pub steps: usize,
    pub config_hash: String,
}

fn flat_tensor(v: &[f64]) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).expect("1-D shape matches length")
}

fn field<'a>(m: &'a Value, key: &str) -> Result<&'a Value> {
    m.get(key)
        .ok_or_else(|| Error::Format(format!("checkpoint manifest lacks `{key}`")))
}

fn num(m: &Value, key: &str) -> Result<f64> {
    field(m, key)?
        .as_f64()
        .ok_or_else(|| Error::Format(format!("`{key}` is not a number")))
}

fn count(m: &Value, key: &str) -> Result<usize> {
    field(m, key)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::Format(format!("`{key}` is not a count")))
}

fn counts(m: &Value, key: &str) -> Result<Vec<usize>> {
    field(m, key)?
        .as_array()
        .ok_or_else(|| Error::Format(format!("`{key}` is not a list")))?
        .iter()
        .map(|v| {
            v.as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| Error::Format(format!("bad entry in `{key}`")))
        })
        .collect()
}

impl Checkpoint {
    pub fn manifest(&self) -> Value {
        let c = self.model.config();
        let (ch, h, w) = c.shape.dims();
        json!({
            "format": "fdfm-checkpoint",
            "version": 1,
            "shape": [ch, h, w],
            "hidden": c.hidden,
            "num_classes": c.num_classes,
            "activation": c.activation.name(),
            "stop_gradient": c.stop_gradient,
            "gamma_low": self.schedule.low.gamma(),
            "gamma_high": self.schedule.high.gamma(),
            "eps_smooth": self.schedule.low.eps_smooth(),
            "omega": self.omega,
            "t_max": self.t_max,
            "steps": self.steps,
            "config_hash": self.config_hash,
            "num_params": self.model.num_params(),
            "params": PARAMS,
            "ema_params": self.ema_params.as_ref().map(|_| EMA_PARAMS),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fpxt::save(&dir.join(PARAMS), &flat_tensor(&self.model.params_flat()))?;
        if let Some(e) = &self.ema_params {
            fpxt::save(&dir.join(EMA_PARAMS), &flat_tensor(e))?;
        }
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest()).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if field(&m, "format")?.as_str() != Some("fdfm-checkpoint") {
            return Err(Error::Format(format!(
                "{} is not a checkpoint manifest",
                path.display()
            )));
        }
        let dims = counts(&m, "shape")?;
        if dims.len() != 3 {
            return Err(Error::Format("checkpoint shape must have three entries".into()));
        }
        let mut config = ModelConfig::new(ImageShape::new(dims[0], dims[1], dims[2])?);
        config.hidden = counts(&m, "hidden")?;
        config.num_classes = count(&m, "num_classes")?;
        let act = field(&m, "activation")?.as_str().unwrap_or_default();
        config.activation =
            Activation::parse(act).ok_or_else(|| Error::Format(format!("unknown activation `{act}`")))?;
        config.stop_gradient = field(&m, "stop_gradient")?
            .as_bool()
            .ok_or_else(|| Error::Format("`stop_gradient` is not a boolean".into()))?;

        let mut model = FactorizedModel::init(
            config,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        let params = fpxt::load(&dir.join(PARAMS))?;
        if params.ndim() != 1 || params.len() != model.num_params() {
            return Err(Error::Dimension(format!(
                "checkpoint holds {:?} parameters, manifest implies {}",
                params.shape(),
                model.num_params()
            )));
        }
        model.set_params_flat(params.as_slice().expect("contiguous"))?;
        let ema_params = match field(&m, "ema_params")?.as_str() {
            Some(name) => {
                let e = fpxt::load(&dir.join(name))?;
                if e.len() != model.num_params() {
                    return Err(Error::Dimension("EMA tensor length does not match the model".into()));
                }
                Some(e.iter().copied().collect())
            }
            None => None,
        };
        Ok(Self {
            model,
            ema_params,
            schedule: HeteroSchedule::new(num(&m, "gamma_low")?, num(&m, "gamma_high")?, num(&m, "eps_smooth")?)?,
            omega: num(&m, "omega")?,
            t_max: num(&m, "t_max")?,
            steps: count(&m, "steps")?,
            config_hash: field(&m, "config_hash")?.as_str().unwrap_or_default().to_string(),
        })
    }

    /// Model used for sampling: the EMA parameters when present.
    pub fn sampling_model(&self) -> Result<FactorizedModel> {
        let mut m = self.model.clone();
        if let Some(e) = &self.ema_params {
            m.set_params_flat(e)?;
        }
        Ok(m)
    }
}
