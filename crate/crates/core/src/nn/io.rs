//! Safetensors persistence for base models and adapters.
//!
//! Base checkpoints use GPT-2 tensor names (`wte.weight`, `h.0.attn.c_attn.weight`,
//! ...), with or without a `transformer.` prefix, in f32, f16 or bf16. Adapter
//! files use PEFT-style names and carry their adapter and base configs as
//! metadata so a loader can reject incompatible pairs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use half::{bf16, f16};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use super::gpt2::{Block, Gpt2Config, Gpt2Model, LayerNorm, Linear, Weight};
use super::lora::{AdapterConfig, AdapterSet};
use super::matrix::Matrix;
use super::NnError;

pub const MODEL_FILE: &str = "model.safetensors";
pub const CONFIG_FILE: &str = "config.json";
pub const ADAPTER_FILE: &str = "adapter_model.safetensors";

const META_ADAPTER: &str = "adapter_config";
const META_BASE: &str = "base_config";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_err(e: impl std::fmt::Display) -> NnError {
    NnError::Format(e.to_string())
}

/// Writes `f32` tensors. Vectors are stored 1-D, matrices 2-D.
pub fn write_tensors(
    path: &Path,
    tensors: &BTreeMap<String, (Vec<usize>, &[f32])>,
    metadata: Option<HashMap<String, String>>,
) -> Result<(), NnError> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(name, (shape, data))| (name.clone(), shape.clone(), data.iter().flat_map(|x| x.to_le_bytes()).collect()))
        .collect();
    let views = bytes
        .iter()
        .map(|(name, shape, raw)| Ok((name.as_str(), TensorView::new(Dtype::F32, shape.clone(), raw).map_err(fmt_err)?)))
        .collect::<Result<Vec<_>, NnError>>()?;
    let buf = safetensors::serialize(views, metadata).map_err(fmt_err)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// A decoded tensor: shape and `f32` values.
pub type Tensor = (Vec<usize>, Vec<f32>);

pub fn read_tensors(path: &Path) -> Result<(BTreeMap<String, Tensor>, HashMap<String, String>), NnError> {
    let buf = fs::read(path).map_err(io_err(path))?;
    let st = SafeTensors::deserialize(&buf).map_err(fmt_err)?;
    let (_, meta) = SafeTensors::read_metadata(&buf).map_err(fmt_err)?;
    let mut out = BTreeMap::new();
    for (name, view) in st.tensors() {
        let raw = view.data();
        let values: Vec<f32> = match view.dtype() {
            Dtype::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
            Dtype::F16 => raw.chunks_exact(2).map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32()).collect(),
            Dtype::BF16 => raw.chunks_exact(2).map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32()).collect(),
            other => return Err(NnError::Format(format!("{name}: unsupported dtype {other:?}"))),
        };
        out.insert(name, (view.shape().to_vec(), values));
    }
    Ok((out, meta.metadata().clone().unwrap_or_default()))
}

fn as_matrix(name: &str, (shape, data): Tensor) -> Result<Matrix, NnError> {
    match shape.as_slice() {
        [r, c] => Ok(Matrix::from_vec(*r, *c, data)),
        [n] => Ok(Matrix::from_vec(1, *n, data)),
        other => Err(NnError::Format(format!("{name}: expected 1-D or 2-D tensor, got shape {other:?}"))),
    }
}

fn model_tensors(model: &Gpt2Model) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
    let mut out = BTreeMap::new();
    let mat = |m: &Matrix| (vec![m.rows, m.cols], m.data.clone());
    let vecd = |v: &[f32]| (vec![v.len()], v.to_vec());
    out.insert("wte.weight".into(), mat(&model.wte));
    out.insert("wpe.weight".into(), mat(&model.wpe));
    for (i, b) in model.blocks.iter().enumerate() {
        let p = format!("h.{i}");
        for (name, ln) in [("ln_1", &b.ln_1), ("ln_2", &b.ln_2)] {
            out.insert(format!("{p}.{name}.weight"), vecd(&ln.weight));
            out.insert(format!("{p}.{name}.bias"), vecd(&ln.bias));
        }
        for (name, lin) in [
            ("attn.c_attn", &b.c_attn),
            ("attn.c_proj", &b.attn_proj),
            ("mlp.c_fc", &b.c_fc),
            ("mlp.c_proj", &b.mlp_proj),
        ] {
            out.insert(format!("{p}.{name}.weight"), mat(&lin.weight.dense()));
            out.insert(format!("{p}.{name}.bias"), vecd(&lin.bias));
        }
    }
    out.insert("ln_f.weight".into(), vecd(&model.ln_f.weight));
    out.insert("ln_f.bias".into(), vecd(&model.ln_f.bias));
    out
}

/// Writes `config.json` and `model.safetensors` into `dir`. Quantized
/// projections are written dequantized.
pub fn save_model(model: &Gpt2Model, dir: &Path) -> Result<(), NnError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let owned = model_tensors(model);
    let borrowed = owned.iter().map(|(k, (s, d))| (k.clone(), (s.clone(), d.as_slice()))).collect();
    write_tensors(&dir.join(MODEL_FILE), &borrowed, None)?;
    let cfg_path = dir.join(CONFIG_FILE);
    let json = serde_json::to_string_pretty(&model.config).map_err(fmt_err)?;
    fs::write(&cfg_path, json).map_err(io_err(&cfg_path))
}

/// Loads a GPT-2 checkpoint directory (`config.json` + `model.safetensors`).
pub fn load_model(dir: &Path) -> Result<Gpt2Model, NnError> {
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg_text = fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
    let config: Gpt2Config = serde_json::from_str(&cfg_text).map_err(fmt_err)?;
    config.validate()?;
    let (tensors, _) = read_tensors(&dir.join(MODEL_FILE))?;
    let mut tensors: BTreeMap<String, Tensor> = tensors
        .into_iter()
        .map(|(k, v)| (k.strip_prefix("transformer.").map(str::to_string).unwrap_or(k), v))
        .collect();
    let d = config.n_embd;
    let mut take = |name: &str, rows: usize, cols: usize| -> Result<Matrix, NnError> {
        let t = tensors.remove(name).ok_or_else(|| NnError::Mismatch(format!("checkpoint lacks {name}")))?;
        let m = as_matrix(name, t)?;
        if m.len() != rows * cols {
            return Err(NnError::Mismatch(format!("{name} has {} values, expected {rows}x{cols}", m.len())));
        }
        Ok(Matrix::from_vec(rows, cols, m.data))
    };
    let wte = take("wte.weight", config.vocab_size, d)?;
    let wpe = take("wpe.weight", config.n_positions, d)?;
    let mut blocks = Vec::with_capacity(config.n_layer);
    for i in 0..config.n_layer {
        let p = format!("h.{i}");
        let mut ln = |name: &str| -> Result<LayerNorm, NnError> {
            Ok(LayerNorm {
                weight: take(&format!("{p}.{name}.weight"), 1, d)?.data,
                bias: take(&format!("{p}.{name}.bias"), 1, d)?.data,
            })
        };
        let ln_1 = ln("ln_1")?;
        let ln_2 = ln("ln_2")?;
        let mut lin = |name: &str, d_in: usize, d_out: usize| -> Result<Linear, NnError> {
            Ok(Linear {
                weight: Weight::Dense(take(&format!("{p}.{name}.weight"), d_in, d_out)?),
                bias: take(&format!("{p}.{name}.bias"), 1, d_out)?.data,
            })
        };
        blocks.push(Block {
            ln_1,
            c_attn: lin("attn.c_attn", d, 3 * d)?,
            attn_proj: lin("attn.c_proj", d, d)?,
            ln_2,
            c_fc: lin("mlp.c_fc", d, 4 * d)?,
            mlp_proj: lin("mlp.c_proj", 4 * d, d)?,
        });
    }
    let ln_f = LayerNorm {
        weight: take("ln_f.weight", 1, d)?.data,
        bias: take("ln_f.bias", 1, d)?.data,
    };
    Ok(Gpt2Model {
        config,
        wte,
        wpe,
        blocks,
        ln_f,
    })
}

pub fn save_adapters(set: &AdapterSet, base: &Gpt2Config, path: &Path) -> Result<(), NnError> {
    let tensors = set
        .named_tensors()
        .into_iter()
        .map(|(k, m)| (k, (vec![m.rows, m.cols], m.data.as_slice())))
        .collect();
    let meta = HashMap::from([
        (META_ADAPTER.to_string(), serde_json::to_string(&set.config).map_err(fmt_err)?),
        (META_BASE.to_string(), serde_json::to_string(base).map_err(fmt_err)?),
    ]);
    write_tensors(path, &tensors, Some(meta))
}

/// Loads adapters, rejecting files written for a different base architecture.
pub fn load_adapters(path: &Path, base: &Gpt2Config) -> Result<AdapterSet, NnError> {
    let (tensors, meta) = read_tensors(path)?;
    let config: AdapterConfig = match meta.get(META_ADAPTER) {
        Some(json) => serde_json::from_str(json).map_err(fmt_err)?,
        None => AdapterConfig::default(),
    };
    if let Some(json) = meta.get(META_BASE) {
        let trained_on: Gpt2Config = serde_json::from_str(json).map_err(fmt_err)?;
        if trained_on.n_embd != base.n_embd || trained_on.n_layer != base.n_layer {
            return Err(NnError::Mismatch(format!(
                "adapter was trained on {} layers of width {}, base has {} layers of width {}",
                trained_on.n_layer, trained_on.n_embd, base.n_layer, base.n_embd
            )));
        }
    }
    let matrices = tensors
        .into_iter()
        .map(|(k, t)| as_matrix(&k, t).map(|m| (k, m)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    AdapterSet::from_named_tensors(base, &config, matrices)
}
