//! GPT-2 style decoder-only transformer with optional low-rank adapters,
//! hand-written backward pass and key/value-cached decoding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::lora::{AdapterSet, LayerAdapters, LoraPair, TargetModule};
use super::matrix::{matmul, matmul_at, matmul_at_acc, matmul_bt, Matrix, Precision};
use super::nf4::Nf4Matrix;
use super::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gpt2Config {
    pub vocab_size: usize,
    pub n_positions: usize,
    pub n_embd: usize,
    pub n_layer: usize,
    pub n_head: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_epsilon: f64,
}

fn default_eps() -> f64 {
    1e-5
}

impl Gpt2Config {
    /// The 345M-parameter GPT-2 Medium architecture.
    pub fn gpt2_medium() -> Self {
        Self {
            vocab_size: 50257,
            n_positions: 1024,
            n_embd: 1024,
            n_layer: 24,
            n_head: 16,
            layer_norm_epsilon: 1e-5,
        }
    }

    /// Small model for desk-scale runs: 2 layers, width 64, 768 positions.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            n_positions: 768,
            n_embd: 64,
            n_layer: 2,
            n_head: 4,
            layer_norm_epsilon: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.n_embd / self.n_head
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.n_embd % self.n_head != 0 || self.n_head == 0 {
            return Err(NnError::Config(format!(
                "n_embd {} is not divisible by n_head {}",
                self.n_embd, self.n_head
            )));
        }
        if self.vocab_size == 0 || self.n_positions == 0 || self.n_layer == 0 {
            return Err(NnError::Config("empty architecture".into()));
        }
        Ok(())
    }
}

/// Base weight storage: dense or NF4-quantized.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Dense(Matrix),
    Nf4(Nf4Matrix),
}

impl Weight {
    pub fn dense(&self) -> Matrix {
        match self {
            Weight::Dense(m) => m.clone(),
            Weight::Nf4(q) => q.dequantize(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Weight::Dense(m) => (m.rows, m.cols),
            Weight::Nf4(q) => (q.rows, q.cols),
        }
    }

    pub fn as_dense(&self) -> Option<&Matrix> {
        match self {
            Weight::Dense(m) => Some(m),
            Weight::Nf4(_) => None,
        }
    }
}

/// Conv1D-layout projection: `y = x · W + b` with `W` stored `d_in × d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Weight,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        Self {
            weight: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln_1: LayerNorm,
    pub c_attn: Linear,
    pub attn_proj: Linear,
    pub ln_2: LayerNorm,
    pub c_fc: Linear,
    pub mlp_proj: Linear,
}

impl Block {
    pub fn linear(&self, t: TargetModule) -> &Linear {
        match t {
            TargetModule::AttnQkv => &self.c_attn,
            TargetModule::AttnProj => &self.attn_proj,
            TargetModule::MlpFc => &self.c_fc,
            TargetModule::MlpProj => &self.mlp_proj,
        }
    }

    pub fn linear_mut(&mut self, t: TargetModule) -> &mut Linear {
        match t {
            TargetModule::AttnQkv => &mut self.c_attn,
            TargetModule::AttnProj => &mut self.attn_proj,
            TargetModule::MlpFc => &mut self.c_fc,
            TargetModule::MlpProj => &mut self.mlp_proj,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gpt2Model {
    pub config: Gpt2Config,
    pub wte: Matrix,
    pub wpe: Matrix,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
}

/// Projection weights decoded and rounded for one compute precision.
/// Built once per forward batch; the model itself stays frozen.
pub struct ComputeWeights {
    pub precision: Precision,
    wte: Matrix,
    blocks: Vec<[Matrix; 4]>,
}

/// Dropout applied to adapter inputs during training.
#[derive(Debug, Clone, Copy)]
pub struct DropoutSpec {
    pub p: f32,
    pub seed: u64,
}

struct LnTape {
    xhat: Matrix,
    rstd: Vec<f32>,
}

struct LoraTape {
    /// Dropout-scaled input the adapter saw.
    input: Matrix,
    /// Keep mask already divided by `1 - p`, when dropout was active.
    mask: Option<Vec<f32>>,
    /// `input · downᵀ`
    hidden: Matrix,
}

struct BlockTape {
    ln1: LnTape,
    a: Matrix,
    qkv: Matrix,
    probs: Vec<Matrix>,
    attn: Matrix,
    ln2: LnTape,
    m: Matrix,
    h: Matrix,
    g: Matrix,
    lora: [Option<LoraTape>; 4],
}

/// Activations recorded by [`Gpt2Model::forward_train`] for the backward pass.
pub struct Tape {
    ids: Vec<u32>,
    blocks: Vec<BlockTape>,
    lnf: LnTape,
    xf: Matrix,
}

/// Gradients for every dense model parameter, in [`Gpt2Model::params`] order.
pub type ParamGrads = Vec<Vec<f32>>;

impl Gpt2Model {
    /// GPT-2 initialization: normal(0, 0.02) weights, residual projections
    /// scaled by `1/sqrt(2·n_layer)`, zero biases, unit layer norms.
    pub fn random(config: Gpt2Config, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.n_embd;
        let normal = |rng: &mut ChaCha8Rng, rows, cols, std: f32| {
            let dist = Normal::new(0.0f32, std).expect("positive std");
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
        };
        let resid_std = 0.02 / (2.0 * config.n_layer as f32).sqrt();
        let wte = normal(&mut rng, config.vocab_size, d, 0.02);
        let wpe = normal(&mut rng, config.n_positions, d, 0.01);
        let mut blocks = Vec::with_capacity(config.n_layer);
        for _ in 0..config.n_layer {
            let mut lin = |rows, cols, std| Linear {
                weight: Weight::Dense(normal(&mut rng, rows, cols, std)),
                bias: vec![0.0; cols],
            };
            blocks.push(Block {
                ln_1: LayerNorm::new(d),
                c_attn: lin(d, 3 * d, 0.02),
                attn_proj: lin(d, d, resid_std),
                ln_2: LayerNorm::new(d),
                c_fc: lin(d, 4 * d, 0.02),
                mlp_proj: lin(4 * d, d, resid_std),
            });
        }
        Ok(Self {
            ln_f: LayerNorm::new(d),
            config,
            wte,
            wpe,
            blocks,
        })
    }

    pub fn num_params(&self) -> usize {
        let lin = |l: &Linear| {
            let (r, c) = l.weight.shape();
            r * c + l.bias.len()
        };
        let ln = |l: &LayerNorm| l.weight.len() + l.bias.len();
        self.wte.len()
            + self.wpe.len()
            + ln(&self.ln_f)
            + self
                .blocks
                .iter()
                .map(|b| ln(&b.ln_1) + ln(&b.ln_2) + lin(&b.c_attn) + lin(&b.attn_proj) + lin(&b.c_fc) + lin(&b.mlp_proj))
                .sum::<usize>()
    }

    pub fn is_quantized(&self) -> bool {
        self.blocks
            .iter()
            .any(|b| TargetModule::ALL.iter().any(|&t| matches!(b.linear(t).weight, Weight::Nf4(_))))
    }

    pub fn compute_weights(&self, precision: Precision) -> ComputeWeights {
        let blocks = self
            .blocks
            .iter()
            .map(|b| TargetModule::ALL.map(|t| precision.round(b.linear(t).weight.dense())))
            .collect();
        ComputeWeights {
            precision,
            wte: precision.round(self.wte.clone()),
            blocks,
        }
    }

    fn embed(&self, ids: &[u32], start: usize) -> Result<Matrix, NnError> {
        let d = self.config.n_embd;
        if start + ids.len() > self.config.n_positions {
            return Err(NnError::SequenceTooLong {
                len: start + ids.len(),
                max: self.config.n_positions,
            });
        }
        let mut x = Matrix::zeros(ids.len(), d);
        for (t, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= self.config.vocab_size {
                return Err(NnError::Config(format!("token id {id} outside vocabulary")));
            }
            let row = x.row_mut(t);
            for ((o, e), p) in row.iter_mut().zip(self.wte.row(id)).zip(self.wpe.row(start + t)) {
                *o = e + p;
            }
        }
        Ok(x)
    }

    /// Forward pass over one sequence, recording activations for backward.
    /// Returns logits (`len × vocab`).
    pub fn forward_train(
        &self,
        w: &ComputeWeights,
        adapters: Option<&AdapterSet>,
        ids: &[u32],
        dropout: Option<DropoutSpec>,
    ) -> Result<(Matrix, Tape), NnError> {
        let prec = w.precision;
        let cfg = &self.config;
        let eps = cfg.layer_norm_epsilon as f32;
        let mut x = self.embed(ids, 0)?;
        let scaling = adapters.map(|a| a.config.scaling()).unwrap_or(0.0);
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for (li, (block, bw)) in self.blocks.iter().zip(&w.blocks).enumerate() {
            let la = adapters.map(|a| &a.layers[li]);
            let mut lora: [Option<LoraTape>; 4] = Default::default();
            let drop_for = |t: TargetModule| {
                dropout.filter(|d| d.p > 0.0).map(|d| DropoutSpec {
                    p: d.p,
                    seed: d
                        .seed
                        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                        .wrapping_add((li * 4 + t.index()) as u64 + 1),
                })
            };

            let (a, ln1) = layer_norm(&x, &block.ln_1, eps, prec);
            let qkv = project(&a, &bw[0], &block.c_attn.bias, la, TargetModule::AttnQkv, scaling, drop_for(TargetModule::AttnQkv), prec, &mut lora);
            let (attn, probs) = causal_attention(&qkv, cfg, prec);
            let y = project(&attn, &bw[1], &block.attn_proj.bias, la, TargetModule::AttnProj, scaling, drop_for(TargetModule::AttnProj), prec, &mut lora);
            x.add_assign(&y);
            let (m, ln2) = layer_norm(&x, &block.ln_2, eps, prec);
            let h = project(&m, &bw[2], &block.c_fc.bias, la, TargetModule::MlpFc, scaling, drop_for(TargetModule::MlpFc), prec, &mut lora);
            let mut g = h.clone();
            for v in &mut g.data {
                *v = gelu(*v);
            }
            prec.round_slice(&mut g.data);
            let z = project(&g, &bw[3], &block.mlp_proj.bias, la, TargetModule::MlpProj, scaling, drop_for(TargetModule::MlpProj), prec, &mut lora);
            x.add_assign(&z);
            tapes.push(BlockTape {
                ln1,
                a,
                qkv,
                probs,
                attn,
                ln2,
                m,
                h,
                g,
                lora,
            });
        }
        let (xf, lnf) = layer_norm(&x, &self.ln_f, eps, prec);
        let logits = prec.round(matmul_bt(&xf, &w.wte));
        Ok((
            logits,
            Tape {
                ids: ids.to_vec(),
                blocks: tapes,
                lnf,
                xf,
            },
        ))
    }

    /// Logits for every position, without recording activations.
    pub fn logits(&self, w: &ComputeWeights, adapters: Option<&AdapterSet>, ids: &[u32]) -> Result<Matrix, NnError> {
        Ok(self.forward_train(w, adapters, ids, None)?.0)
    }

    /// Backpropagates `dlogits`. Adapter gradients are returned when
    /// adapters are given; full model gradients only when `full` is set
    /// (which requires dense weights).
    pub fn backward(
        &self,
        w: &ComputeWeights,
        adapters: Option<&AdapterSet>,
        tape: &Tape,
        dlogits: &Matrix,
        full: bool,
    ) -> Result<(Option<AdapterSet>, Option<ParamGrads>), NnError> {
        let cfg = &self.config;
        let d = cfg.n_embd;
        let scaling = adapters.map(|a| a.config.scaling()).unwrap_or(0.0);
        let mut adapter_grads = adapters.map(|a| {
            let mut g = a.clone();
            for p in g.params_mut() {
                p.iter_mut().for_each(|x| *x = 0.0);
            }
            g
        });
        let mut model_grads = full.then(|| self.zero_grads());
        if full && self.is_quantized() {
            return Err(NnError::Config("full gradients need dense weights".into()));
        }

        // logits = xf · wteᵀ
        let mut dx = matmul(dlogits, &w.wte);
        if let Some(g) = model_grads.as_mut() {
            let mut dwte = Matrix::from_vec(self.wte.rows, self.wte.cols, std::mem::take(&mut g[0]));
            matmul_at_acc(1.0, dlogits, &tape.xf, &mut dwte);
            g[0] = dwte.data;
        }
        let n_blocks = self.blocks.len();
        let final_base = 2 + 12 * n_blocks;
        dx = layer_norm_backward(&dx, &tape.lnf, &self.ln_f, model_grads.as_mut().map(|g| (final_base, g)));

        for li in (0..n_blocks).rev() {
            let block = &self.blocks[li];
            let bt = &tape.blocks[li];
            let bw = &w.blocks[li];
            let la = adapters.map(|a| &a.layers[li]);
            let mut lg = adapter_grads.as_mut().map(|g| &mut g.layers[li]);
            let base = 2 + 12 * li;
            let mut mg = model_grads.as_mut();

            // z = g · W_mproj (+ adapter)
            let dg = project_backward(&dx, &bt.g, &bw[3], la, lg.as_deref_mut(), TargetModule::MlpProj, &bt.lora, scaling, mg.as_deref_mut().map(|g| (base + 10, g)));
            let mut dh = dg;
            for (v, &hv) in dh.data.iter_mut().zip(&bt.h.data) {
                *v *= gelu_grad(hv);
            }
            let dm = project_backward(&dh, &bt.m, &bw[2], la, lg.as_deref_mut(), TargetModule::MlpFc, &bt.lora, scaling, mg.as_deref_mut().map(|g| (base + 8, g)));
            let dres = layer_norm_backward(&dm, &bt.ln2, &block.ln_2, mg.as_deref_mut().map(|g| (base + 6, g)));
            dx.add_assign(&dres);

            let dattn = project_backward(&dx, &bt.attn, &bw[1], la, lg.as_deref_mut(), TargetModule::AttnProj, &bt.lora, scaling, mg.as_deref_mut().map(|g| (base + 4, g)));
            let dqkv = causal_attention_backward(&dattn, &bt.qkv, &bt.probs, cfg);
            let da = project_backward(&dqkv, &bt.a, &bw[0], la, lg.as_deref_mut(), TargetModule::AttnQkv, &bt.lora, scaling, mg.as_deref_mut().map(|g| (base + 2, g)));
            let dres = layer_norm_backward(&da, &bt.ln1, &block.ln_1, mg.as_deref_mut().map(|g| (base, g)));
            dx.add_assign(&dres);
        }

        if let Some(g) = model_grads.as_mut() {
            for (t, &id) in tape.ids.iter().enumerate() {
                let row = dx.row(t);
                let id = id as usize;
                for (acc, v) in g[0][id * d..(id + 1) * d].iter_mut().zip(row) {
                    *acc += v;
                }
                for (acc, v) in g[1][t * d..(t + 1) * d].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        Ok((adapter_grads, model_grads))
    }

    /// Dense parameters in a fixed order: `wte`, `wpe`, then per block
    /// `ln_1.{w,b}`, `c_attn.{w,b}`, `attn_proj.{w,b}`, `ln_2.{w,b}`,
    /// `c_fc.{w,b}`, `mlp_proj.{w,b}`, and finally `ln_f.{w,b}`.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out: Vec<&mut Vec<f32>> = vec![&mut self.wte.data, &mut self.wpe.data];
        for b in &mut self.blocks {
            out.push(&mut b.ln_1.weight);
            out.push(&mut b.ln_1.bias);
            for lin in [&mut b.c_attn, &mut b.attn_proj] {
                match &mut lin.weight {
                    Weight::Dense(m) => out.push(&mut m.data),
                    Weight::Nf4(_) => panic!("quantized weights are not trainable"),
                }
                out.push(&mut lin.bias);
            }
            out.push(&mut b.ln_2.weight);
            out.push(&mut b.ln_2.bias);
            for lin in [&mut b.c_fc, &mut b.mlp_proj] {
                match &mut lin.weight {
                    Weight::Dense(m) => out.push(&mut m.data),
                    Weight::Nf4(_) => panic!("quantized weights are not trainable"),
                }
                out.push(&mut lin.bias);
            }
        }
        out.push(&mut self.ln_f.weight);
        out.push(&mut self.ln_f.bias);
        out
    }

    fn zero_grads(&self) -> ParamGrads {
        let mut sizes = vec![self.wte.len(), self.wpe.len()];
        for b in &self.blocks {
            sizes.push(b.ln_1.weight.len());
            sizes.push(b.ln_1.bias.len());
            for lin in [&b.c_attn, &b.attn_proj] {
                let (r, c) = lin.weight.shape();
                sizes.push(r * c);
                sizes.push(lin.bias.len());
            }
            sizes.push(b.ln_2.weight.len());
            sizes.push(b.ln_2.bias.len());
            for lin in [&b.c_fc, &b.mlp_proj] {
                let (r, c) = lin.weight.shape();
                sizes.push(r * c);
                sizes.push(lin.bias.len());
            }
        }
        sizes.push(self.ln_f.weight.len());
        sizes.push(self.ln_f.bias.len());
        sizes.into_iter().map(|n| vec![0.0; n]).collect()
    }

    /// Replaces the four projections of every block with NF4 storage.
    pub fn quantize_nf4(&mut self) {
        for b in &mut self.blocks {
            for t in TargetModule::ALL {
                let lin = b.linear_mut(t);
                if let Weight::Dense(m) = &lin.weight {
                    lin.weight = Weight::Nf4(Nf4Matrix::quantize(m));
                }
            }
        }
    }

    pub fn start_decoding(&self) -> DecodeState {
        DecodeState {
            len: 0,
            keys: vec![Vec::new(); self.config.n_layer],
            values: vec![Vec::new(); self.config.n_layer],
        }
    }

    /// Feeds `ids` after the cached context and returns the logits of the
    /// last fed position.
    pub fn decode(
        &self,
        w: &ComputeWeights,
        adapters: Option<&AdapterSet>,
        state: &mut DecodeState,
        ids: &[u32],
    ) -> Result<Vec<f32>, NnError> {
        assert!(!ids.is_empty(), "decode needs at least one token");
        let prec = w.precision;
        let cfg = &self.config;
        let d = cfg.n_embd;
        let hd = cfg.head_dim();
        let eps = cfg.layer_norm_epsilon as f32;
        let scaling = adapters.map(|a| a.config.scaling()).unwrap_or(0.0);
        let mut x = self.embed(ids, state.len)?;
        let n_new = ids.len();
        let mut scratch: [Option<LoraTape>; 4] = Default::default();
        for (li, (block, bw)) in self.blocks.iter().zip(&w.blocks).enumerate() {
            let la = adapters.map(|a| &a.layers[li]);
            let (a, _) = layer_norm(&x, &block.ln_1, eps, prec);
            let qkv = project(&a, &bw[0], &block.c_attn.bias, la, TargetModule::AttnQkv, scaling, None, prec, &mut scratch);
            for t in 0..n_new {
                let row = qkv.row(t);
                state.keys[li].extend_from_slice(&row[d..2 * d]);
                state.values[li].extend_from_slice(&row[2 * d..]);
            }
            let total = state.len + n_new;
            let keys = Matrix::from_vec(total, d, state.keys[li].clone());
            let values = Matrix::from_vec(total, d, state.values[li].clone());
            let mut attn = Matrix::zeros(n_new, d);
            let scale = 1.0 / (hd as f32).sqrt();
            for h in 0..cfg.n_head {
                let q = qkv.col_slice(h * hd, hd);
                let k = keys.col_slice(h * hd, hd);
                let v = values.col_slice(h * hd, hd);
                let mut scores = prec.round(matmul_bt(&q, &k));
                for t in 0..n_new {
                    let visible = state.len + t + 1;
                    let row = scores.row_mut(t);
                    for s in row.iter_mut() {
                        *s *= scale;
                    }
                    softmax_prefix(row, visible);
                }
                prec.round_slice(&mut scores.data);
                let out = prec.round(matmul(&scores, &v));
                attn.set_col_slice(h * hd, &out);
            }
            let y = project(&attn, &bw[1], &block.attn_proj.bias, la, TargetModule::AttnProj, scaling, None, prec, &mut scratch);
            x.add_assign(&y);
            let (m, _) = layer_norm(&x, &block.ln_2, eps, prec);
            let mut g = project(&m, &bw[2], &block.c_fc.bias, la, TargetModule::MlpFc, scaling, None, prec, &mut scratch);
            for v in &mut g.data {
                *v = gelu(*v);
            }
            prec.round_slice(&mut g.data);
            let z = project(&g, &bw[3], &block.mlp_proj.bias, la, TargetModule::MlpProj, scaling, None, prec, &mut scratch);
            x.add_assign(&z);
        }
        state.len += n_new;
        let last = Matrix::from_vec(1, d, x.row(n_new - 1).to_vec());
        let (xf, _) = layer_norm(&last, &self.ln_f, eps, prec);
        Ok(prec.round(matmul_bt(&xf, &w.wte)).data)
    }
}

/// Cached keys and values of every layer for incremental decoding.
#[derive(Debug, Clone)]
pub struct DecodeState {
    len: usize,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn layer_norm(x: &Matrix, ln: &LayerNorm, eps: f32, prec: Precision) -> (Matrix, LnTape) {
    let d = x.cols;
    let mut y = Matrix::zeros(x.rows, d);
    let mut xhat = Matrix::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let rs = 1.0 / (var + eps).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for (o, v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
        let out = y.row_mut(r);
        for (((o, h), g), b) in out.iter_mut().zip(xhat.row(r)).zip(&ln.weight).zip(&ln.bias) {
            *o = h * g + b;
        }
    }
    prec.round_slice(&mut y.data);
    (y, LnTape { xhat, rstd })
}

fn layer_norm_backward(dy: &Matrix, tape: &LnTape, ln: &LayerNorm, grads: Option<(usize, &mut ParamGrads)>) -> Matrix {
    let d = dy.cols;
    let mut dx = Matrix::zeros(dy.rows, d);
    if let Some((base, g)) = grads {
        for r in 0..dy.rows {
            for (j, (&dv, &h)) in dy.row(r).iter().zip(tape.xhat.row(r)).enumerate() {
                g[base][j] += dv * h;
                g[base + 1][j] += dv;
            }
        }
    }
    for r in 0..dy.rows {
        let xh = tape.xhat.row(r);
        let dxhat: Vec<f32> = dy.row(r).iter().zip(&ln.weight).map(|(a, b)| a * b).collect();
        let mean_d = dxhat.iter().sum::<f32>() / d as f32;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f32>() / d as f32;
        for ((o, &dh), &h) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
            *o = tape.rstd[r] * (dh - mean_d - h * mean_dx);
        }
    }
    dx
}

#[allow(clippy::too_many_arguments)]
fn project(
    x: &Matrix,
    w: &Matrix,
    bias: &[f32],
    adapters: Option<&LayerAdapters>,
    target: TargetModule,
    scaling: f32,
    dropout: Option<DropoutSpec>,
    prec: Precision,
    tapes: &mut [Option<LoraTape>; 4],
) -> Matrix {
    let mut y = matmul(x, w);
    y.add_row_vector(bias);
    if let Some(pair) = adapters.and_then(|a| a.get(target)) {
        let (input, mask) = match dropout {
            Some(spec) => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                let keep = 1.0 / (1.0 - spec.p);
                let mask: Vec<f32> = (0..x.len())
                    .map(|_| if rng.random::<f32>() < spec.p { 0.0 } else { keep })
                    .collect();
                let data = x.data.iter().zip(&mask).map(|(a, m)| a * m).collect();
                (Matrix::from_vec(x.rows, x.cols, data), Some(mask))
            }
            None => (x.clone(), None),
        };
        let down = prec.round(pair.down.clone());
        let up = prec.round(pair.up.clone());
        let hidden = prec.round(matmul_bt(&input, &down));
        let mut delta = matmul_bt(&hidden, &up);
        delta.scale(scaling);
        prec.round_slice(&mut delta.data);
        y.add_assign(&delta);
        tapes[target.index()] = Some(LoraTape { input, mask, hidden });
    }
    prec.round(y)
}

#[allow(clippy::too_many_arguments)]
fn project_backward(
    dy: &Matrix,
    x: &Matrix,
    w: &Matrix,
    adapters: Option<&LayerAdapters>,
    adapter_grads: Option<&mut LayerAdapters>,
    target: TargetModule,
    tapes: &[Option<LoraTape>; 4],
    scaling: f32,
    grads: Option<(usize, &mut ParamGrads)>,
) -> Matrix {
    let mut dx = matmul_bt(dy, w);
    if let Some((idx, g)) = grads {
        let mut dw = Matrix::from_vec(w.rows, w.cols, std::mem::take(&mut g[idx]));
        matmul_at_acc(1.0, x, dy, &mut dw);
        g[idx] = dw.data;
        for (acc, v) in g[idx + 1].iter_mut().zip(dy.col_sums()) {
            *acc += v;
        }
    }
    if let (Some(pair), Some(tape)) = (adapters.and_then(|a| a.get(target)), tapes[target.index()].as_ref()) {
        let LoraPair { down, up } = pair;
        // delta = scaling · hidden · upᵀ, hidden = input · downᵀ
        let mut dhidden = matmul(dy, up);
        dhidden.scale(scaling);
        if let Some(LoraPair { down: gd, up: gu }) = adapter_grads.and_then(|g| g.pairs[target.index()].as_mut()) {
            matmul_at_acc(scaling, dy, &tape.hidden, gu);
            matmul_at_acc(1.0, &dhidden, &tape.input, gd);
        }
        let mut dinput = matmul(&dhidden, down);
        if let Some(mask) = &tape.mask {
            for (v, m) in dinput.data.iter_mut().zip(mask) {
                *v *= m;
            }
        }
        dx.add_assign(&dinput);
    }
    dx
}

fn softmax_prefix(row: &mut [f32], visible: usize) {
    let max = row[..visible].iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for v in &mut row[..visible] {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut row[..visible] {
        *v /= sum;
    }
    for v in &mut row[visible..] {
        *v = 0.0;
    }
}

fn causal_attention(qkv: &Matrix, cfg: &Gpt2Config, prec: Precision) -> (Matrix, Vec<Matrix>) {
    let d = cfg.n_embd;
    let hd = cfg.head_dim();
    let t = qkv.rows;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut out = Matrix::zeros(t, d);
    let mut probs = Vec::with_capacity(cfg.n_head);
    for h in 0..cfg.n_head {
        let q = qkv.col_slice(h * hd, hd);
        let k = qkv.col_slice(d + h * hd, hd);
        let v = qkv.col_slice(2 * d + h * hd, hd);
        let mut p = prec.round(matmul_bt(&q, &k));
        for i in 0..t {
            let row = p.row_mut(i);
            for s in row.iter_mut() {
                *s *= scale;
            }
            softmax_prefix(row, i + 1);
        }
        prec.round_slice(&mut p.data);
        let o = prec.round(matmul(&p, &v));
        out.set_col_slice(h * hd, &o);
        probs.push(p);
    }
    (out, probs)
}

fn causal_attention_backward(dout: &Matrix, qkv: &Matrix, probs: &[Matrix], cfg: &Gpt2Config) -> Matrix {
    let d = cfg.n_embd;
    let hd = cfg.head_dim();
    let t = qkv.rows;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut dqkv = Matrix::zeros(t, 3 * d);
    for (h, p) in probs.iter().enumerate() {
        let q = qkv.col_slice(h * hd, hd);
        let k = qkv.col_slice(d + h * hd, hd);
        let v = qkv.col_slice(2 * d + h * hd, hd);
        let dout_h = dout.col_slice(h * hd, hd);
        let dv = matmul_at(p, &dout_h);
        let mut ds = matmul_bt(&dout_h, &v);
        for i in 0..t {
            let prow = p.row(i);
            let drow = ds.row_mut(i);
            let dot: f32 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
            for (dv_, &pv) in drow.iter_mut().zip(prow) {
                *dv_ = pv * (*dv_ - dot) * scale;
            }
        }
        let dq = matmul(&ds, &k);
        let dk = matmul_at(&ds, &q);
        dqkv.set_col_slice(h * hd, &dq);
        dqkv.set_col_slice(d + h * hd, &dk);
        dqkv.set_col_slice(2 * d + h * hd, &dv);
    }
    dqkv
}

/// Shifted next-token cross-entropy: position `t` is scored against
/// `labels[t + 1]`, skipping negative labels. Returns the summed loss, the
/// number of scored positions and `d(sum · grad_scale)/dlogits`.
pub fn causal_lm_loss(logits: &Matrix, labels: &[i64], grad_scale: f32) -> (f64, usize, Matrix) {
    let mut dlogits = Matrix::zeros(logits.rows, logits.cols);
    let mut total = 0.0f64;
    let mut count = 0;
    for t in 0..logits.rows.saturating_sub(1) {
        let Some(&target) = labels.get(t + 1) else { break };
        if target < 0 {
            continue;
        }
        let target = target as usize;
        let row = logits.row(t);
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f32 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += (log_z - row[target]) as f64;
        count += 1;
        let drow = dlogits.row_mut(t);
        for (d, &v) in drow.iter_mut().zip(row) {
            *d = (v - log_z).exp() * grad_scale;
        }
        drow[target] -= grad_scale;
    }
    (total, count, dlogits)
}
