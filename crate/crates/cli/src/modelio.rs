//! Model persistence. Bundles are stored as JSON with every tensor spelled
//! out and the bundle digest embedded; loading recomputes the digest and
//! refuses files whose parameters do not hash to the stored value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cropseries_core::adapt::{AdaptedBundle, DaMeta, DiscriminatorParams, MapperParams};
use cropseries_core::classifier::{
    AttentionParams, DenseLayer, LstmParams, ModelBundle, TrainMeta,
};
use cropseries_core::tensor::Tensor;

use crate::error::CliError;
use crate::fsio::{read_to_string, write_atomic};

pub const MODEL_VERSION: &str = "model-v1";
pub const ADAPTED_VERSION: &str = "adapted-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDto {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorDto {
    fn from(t: &Tensor) -> TensorDto {
        TensorDto {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    fn build(self) -> Result<Tensor, CliError> {
        let mut t = Tensor::zeros(self.shape)?;
        if t.data().len() != self.data.len() {
            return Err(CliError::validation(format!(
                "tensor data length {} does not match its shape",
                self.data.len()
            )));
        }
        t.data_mut().copy_from_slice(&self.data);
        Ok(t)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LstmDto {
    w_i: TensorDto,
    w_f: TensorDto,
    w_o: TensorDto,
    w_g: TensorDto,
    b_i: TensorDto,
    b_f: TensorDto,
    b_o: TensorDto,
    b_g: TensorDto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttentionDto {
    score_w: TensorDto,
    score_b: TensorDto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseDto {
    weight: TensorDto,
    bias: TensorDto,
}

impl DenseDto {
    fn from(layer: &DenseLayer) -> DenseDto {
        DenseDto {
            weight: TensorDto::from(&layer.weight),
            bias: TensorDto::from(&layer.bias),
        }
    }

    fn build(self) -> Result<DenseLayer, CliError> {
        Ok(DenseLayer {
            weight: self.weight.build()?,
            bias: self.bias.build()?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainMetaDto {
    seed: u64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    train_digest: String,
    loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: String,
    input_dim: usize,
    hidden_dim: usize,
    class_names: Vec<String>,
    lstm: LstmDto,
    attention: Option<AttentionDto>,
    head: DenseDto,
    meta: TrainMetaDto,
    digest: String,
}

pub fn save_model(path: &Path, model: &ModelBundle) -> Result<(), CliError> {
    model.validate()?;
    let file = ModelFile {
        version: String::from(MODEL_VERSION),
        input_dim: model.input_dim(),
        hidden_dim: model.hidden_dim(),
        class_names: model.class_names.clone(),
        lstm: LstmDto {
            w_i: TensorDto::from(&model.lstm.w_i),
            w_f: TensorDto::from(&model.lstm.w_f),
            w_o: TensorDto::from(&model.lstm.w_o),
            w_g: TensorDto::from(&model.lstm.w_g),
            b_i: TensorDto::from(&model.lstm.b_i),
            b_f: TensorDto::from(&model.lstm.b_f),
            b_o: TensorDto::from(&model.lstm.b_o),
            b_g: TensorDto::from(&model.lstm.b_g),
        },
        attention: model.attention.as_ref().map(|a| AttentionDto {
            score_w: TensorDto::from(&a.score_w),
            score_b: TensorDto::from(&a.score_b),
        }),
        head: DenseDto::from(&model.head),
        meta: TrainMetaDto {
            seed: model.meta.seed,
            epochs: model.meta.epochs,
            batch_size: model.meta.batch_size,
            learning_rate: model.meta.learning_rate,
            train_digest: model.meta.train_digest.clone(),
            loss_curve: model.meta.loss_curve.clone(),
        },
        digest: model.digest(),
    };
    write_json(path, &file)
}

pub fn load_model(path: &Path) -> Result<ModelBundle, CliError> {
    let file: ModelFile = read_json(path)?;
    if file.version != MODEL_VERSION {
        return Err(CliError::validation(format!(
            "{}: unsupported version '{}', expected '{MODEL_VERSION}'",
            path.display(),
            file.version
        )));
    }
    let model = ModelBundle {
        lstm: LstmParams {
            input_dim: file.input_dim,
            hidden_dim: file.hidden_dim,
            w_i: file.lstm.w_i.build()?,
            w_f: file.lstm.w_f.build()?,
            w_o: file.lstm.w_o.build()?,
            w_g: file.lstm.w_g.build()?,
            b_i: file.lstm.b_i.build()?,
            b_f: file.lstm.b_f.build()?,
            b_o: file.lstm.b_o.build()?,
            b_g: file.lstm.b_g.build()?,
        },
        attention: match file.attention {
            Some(a) => Some(AttentionParams {
                score_w: a.score_w.build()?,
                score_b: a.score_b.build()?,
            }),
            None => None,
        },
        head: file.head.build()?,
        class_names: file.class_names,
        meta: TrainMeta {
            seed: file.meta.seed,
            epochs: file.meta.epochs,
            batch_size: file.meta.batch_size,
            learning_rate: file.meta.learning_rate,
            train_digest: file.meta.train_digest,
            loss_curve: file.meta.loss_curve,
        },
    };
    model.validate()?;
    let actual = model.digest();
    if actual != file.digest {
        return Err(CliError::validation(format!(
            "{}: digest mismatch, file says {} but the parameters hash to {actual}",
            path.display(),
            file.digest
        )));
    }
    Ok(model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapperDto {
    dim: usize,
    res_hidden: usize,
    affine_w: TensorDto,
    affine_b: TensorDto,
    res_v: TensorDto,
    res_c: TensorDto,
    res_u: TensorDto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiscriminatorDto {
    hidden: DenseDto,
    out: DenseDto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DaMetaDto {
    seed: u64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    disc_steps_per_mapper: usize,
    lambda_att: f64,
    source_model_digest: String,
    source_digest: String,
    target_digest: String,
    disc_loss_curve: Vec<f64>,
    adapt_loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdaptedFile {
    version: String,
    mapper: MapperDto,
    discriminator: DiscriminatorDto,
    meta: DaMetaDto,
    digest: String,
}

pub fn save_adapted(path: &Path, bundle: &AdaptedBundle) -> Result<(), CliError> {
    bundle.mapper.validate()?;
    let file = AdaptedFile {
        version: String::from(ADAPTED_VERSION),
        mapper: MapperDto {
            dim: bundle.mapper.dim,
            res_hidden: bundle.mapper.res_hidden,
            affine_w: TensorDto::from(&bundle.mapper.affine_w),
            affine_b: TensorDto::from(&bundle.mapper.affine_b),
            res_v: TensorDto::from(&bundle.mapper.res_v),
            res_c: TensorDto::from(&bundle.mapper.res_c),
            res_u: TensorDto::from(&bundle.mapper.res_u),
        },
        discriminator: DiscriminatorDto {
            hidden: DenseDto::from(&bundle.discriminator.hidden),
            out: DenseDto::from(&bundle.discriminator.out),
        },
        meta: DaMetaDto {
            seed: bundle.meta.seed,
            epochs: bundle.meta.epochs,
            batch_size: bundle.meta.batch_size,
            learning_rate: bundle.meta.learning_rate,
            disc_steps_per_mapper: bundle.meta.disc_steps_per_mapper,
            lambda_att: bundle.meta.lambda_att,
            source_model_digest: bundle.meta.source_model_digest.clone(),
            source_digest: bundle.meta.source_digest.clone(),
            target_digest: bundle.meta.target_digest.clone(),
            disc_loss_curve: bundle.meta.disc_loss_curve.clone(),
            adapt_loss_curve: bundle.meta.adapt_loss_curve.clone(),
        },
        digest: bundle.digest(),
    };
    write_json(path, &file)
}

pub fn load_adapted(path: &Path) -> Result<AdaptedBundle, CliError> {
    let file: AdaptedFile = read_json(path)?;
    if file.version != ADAPTED_VERSION {
        return Err(CliError::validation(format!(
            "{}: unsupported version '{}', expected '{ADAPTED_VERSION}'",
            path.display(),
            file.version
        )));
    }
    let bundle = AdaptedBundle {
        mapper: MapperParams {
            dim: file.mapper.dim,
            res_hidden: file.mapper.res_hidden,
            affine_w: file.mapper.affine_w.build()?,
            affine_b: file.mapper.affine_b.build()?,
            res_v: file.mapper.res_v.build()?,
            res_c: file.mapper.res_c.build()?,
            res_u: file.mapper.res_u.build()?,
        },
        discriminator: DiscriminatorParams {
            hidden: file.discriminator.hidden.build()?,
            out: file.discriminator.out.build()?,
        },
        meta: DaMeta {
            seed: file.meta.seed,
            epochs: file.meta.epochs,
            batch_size: file.meta.batch_size,
            learning_rate: file.meta.learning_rate,
            disc_steps_per_mapper: file.meta.disc_steps_per_mapper,
            lambda_att: file.meta.lambda_att,
            source_model_digest: file.meta.source_model_digest,
            source_digest: file.meta.source_digest,
            target_digest: file.meta.target_digest,
            disc_loss_curve: file.meta.disc_loss_curve,
            adapt_loss_curve: file.meta.adapt_loss_curve,
        },
    };
    bundle.mapper.validate()?;
    let actual = bundle.digest();
    if actual != file.digest {
        return Err(CliError::validation(format!(
            "{}: digest mismatch, file says {} but the parameters hash to {actual}",
            path.display(),
            file.digest
        )));
    }
    Ok(bundle)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::validation(format!("serialization: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}
