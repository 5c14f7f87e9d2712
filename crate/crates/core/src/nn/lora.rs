//! Low-rank adapters on the model's projection matrices.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gpt2::Gpt2Config;
use super::matrix::Matrix;
use super::NnError;

/// Projection matrices an adapter can attach to, named as in GPT-2 checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TargetModule {
    /// `attn.c_attn`: fused query/key/value projection.
    AttnQkv,
    /// `attn.c_proj`
    AttnProj,
    /// `mlp.c_fc`: first MLP projection.
    MlpFc,
    /// `mlp.c_proj`
    MlpProj,
}

impl TargetModule {
    pub const ALL: [TargetModule; 4] = [Self::AttnQkv, Self::AttnProj, Self::MlpFc, Self::MlpProj];

    pub fn module_name(self) -> &'static str {
        match self {
            Self::AttnQkv => "attn.c_attn",
            Self::AttnProj => "attn.c_proj",
            Self::MlpFc => "mlp.c_fc",
            Self::MlpProj => "mlp.c_proj",
        }
    }

    pub fn from_module_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.module_name() == name || t.module_name().rsplit('.').next() == Some(name) && name != "c_proj")
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }

    /// `(d_in, d_out)` of this projection for a given architecture.
    pub fn shape(self, config: &Gpt2Config) -> (usize, usize) {
        let d = config.n_embd;
        match self {
            Self::AttnQkv => (d, 3 * d),
            Self::AttnProj => (d, d),
            Self::MlpFc => (d, 4 * d),
            Self::MlpProj => (4 * d, d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f32,
    pub dropout: f32,
    pub bias_mode: BiasMode,
    pub target_modules: Vec<String>,
    pub task: String,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            rank: 3,
            alpha: 16.0,
            dropout: 0.1,
            bias_mode: BiasMode::None,
            target_modules: vec!["attn.c_attn".into(), "mlp.c_fc".into()],
            task: "CAUSAL_LM".into(),
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.rank == 0 {
            return Err(NnError::Config("adapter rank must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config("adapter dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn scaling(&self) -> f32 {
        self.alpha / self.rank as f32
    }

    pub fn targets(&self) -> Result<Vec<TargetModule>, NnError> {
        let mut out = Vec::new();
        for name in &self.target_modules {
            let t = TargetModule::from_module_name(name).ok_or_else(|| NnError::ModuleNotFound(name.clone()))?;
            if !out.contains(&t) {
                out.push(t);
            }
        }
        Ok(out)
    }
}

/// One adapter: `down` is `rank × d_in`, `up` is `d_out × rank`, and the
/// projection output gains `scaling · up · down · x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraPair {
    pub down: Matrix,
    pub up: Matrix,
}

impl LoraPair {
    pub fn num_params(&self) -> usize {
        self.down.len() + self.up.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerAdapters {
    pub pairs: [Option<LoraPair>; 4],
}

impl LayerAdapters {
    pub fn get(&self, t: TargetModule) -> Option<&LoraPair> {
        self.pairs[t.index()].as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet {
    pub config: AdapterConfig,
    pub layers: Vec<LayerAdapters>,
}

impl AdapterSet {
    /// Creates adapters for every targeted projection in every layer. The
    /// down projection is drawn uniformly from `±1/sqrt(d_in)` and the up
    /// projection starts at zero, so the adapted model initially computes
    /// exactly what the base does.
    pub fn attach(model: &Gpt2Config, config: &AdapterConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let targets = config.targets()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(model.n_layer);
        for _ in 0..model.n_layer {
            let mut layer = LayerAdapters::default();
            for &t in &targets {
                let (d_in, d_out) = t.shape(model);
                let bound = 1.0 / (d_in as f32).sqrt();
                let down = (0..config.rank * d_in).map(|_| rng.random_range(-bound..bound)).collect();
                layer.pairs[t.index()] = Some(LoraPair {
                    down: Matrix::from_vec(config.rank, d_in, down),
                    up: Matrix::zeros(d_out, config.rank),
                });
            }
            layers.push(layer);
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn num_trainable(&self) -> usize {
        self.iter().map(|(_, _, p)| p.num_params()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, TargetModule, &LoraPair)> {
        self.layers.iter().enumerate().flat_map(|(i, l)| {
            TargetModule::ALL
                .into_iter()
                .filter_map(move |t| l.get(t).map(|p| (i, t, p)))
        })
    }

    /// Parameter buffers in a fixed order: per layer, per target, down then up.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for pair in layer.pairs.iter_mut().flatten() {
                out.push(&mut pair.down.data);
                out.push(&mut pair.up.data);
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Vec<f32>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for pair in layer.pairs.iter().flatten() {
                out.push(&pair.down.data);
                out.push(&pair.up.data);
            }
        }
        out
    }

    /// Tensors under PEFT-style names (`lora_A` is the down projection).
    pub fn named_tensors(&self) -> BTreeMap<String, &Matrix> {
        let mut out = BTreeMap::new();
        for (i, t, p) in self.iter() {
            let prefix = format!("base_model.model.transformer.h.{i}.{}", t.module_name());
            out.insert(format!("{prefix}.lora_A.weight"), &p.down);
            out.insert(format!("{prefix}.lora_B.weight"), &p.up);
        }
        out
    }

    /// Rebuilds an adapter set from named tensors, checking every shape
    /// against the architecture.
    pub fn from_named_tensors(
        model: &Gpt2Config,
        config: &AdapterConfig,
        mut tensors: BTreeMap<String, Matrix>,
    ) -> Result<Self, NnError> {
        config.validate()?;
        let targets = config.targets()?;
        let mut layers = Vec::with_capacity(model.n_layer);
        for i in 0..model.n_layer {
            let mut layer = LayerAdapters::default();
            for &t in &targets {
                let (d_in, d_out) = t.shape(model);
                let prefix = format!("base_model.model.transformer.h.{i}.{}", t.module_name());
                let mut take = |suffix: &str, rows: usize, cols: usize| {
                    let name = format!("{prefix}.{suffix}");
                    let m = tensors.remove(&name).ok_or_else(|| NnError::Mismatch(format!("missing {name}")))?;
                    if (m.rows, m.cols) != (rows, cols) {
                        return Err(NnError::Mismatch(format!(
                            "{name} is {}x{}, architecture needs {rows}x{cols}",
                            m.rows, m.cols
                        )));
                    }
                    Ok(m)
                };
                let down = take("lora_A.weight", config.rank, d_in)?;
                let up = take("lora_B.weight", d_out, config.rank)?;
                layer.pairs[t.index()] = Some(LoraPair { down, up });
            }
            layers.push(layer);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(NnError::Mismatch(format!("unexpected adapter tensor {extra}")));
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }
}

/// Closed form of the trainable-parameter count: the sum over targeted
/// matrices of `rank · (d_in + d_out)`.
pub fn expected_trainable(model: &Gpt2Config, config: &AdapterConfig) -> Result<usize, NnError> {
    let per_layer: usize = config
        .targets()?
        .into_iter()
        .map(|t| {
            let (d_in, d_out) = t.shape(model);
            config.rank * (d_in + d_out)
        })
        .sum();
    Ok(per_layer * model.n_layer)
}
