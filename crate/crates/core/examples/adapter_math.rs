//! Adapter bookkeeping and 4-bit storage on concrete shapes: trainable
//! counts for the 24-layer base, storage of the quantized weights, the
//! zero-adapter identity and greedy agreement between the quantized and
//! full-precision models.
//!
//!     cargo run --release --example adapter_math

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ukil::nn::{expected_trainable, AdapterConfig, AdapterSet, Gpt2Config, Gpt2Model, Nf4Matrix, Precision, TargetModule};

fn argmax(xs: &[f32]) -> usize {
    xs.iter().enumerate().fold(0, |best, (i, &x)| if x > xs[best] { i } else { best })
}

fn main() -> Result<()> {
    let medium = Gpt2Config::gpt2_medium();
    let cfg = AdapterConfig::default();
    println!("targets {:?}, rank {}, alpha {}, scaling {:.3}", cfg.target_modules, cfg.rank, cfg.alpha, cfg.scaling());
    for t in cfg.targets()? {
        let (d_in, d_out) = t.shape(&medium);
        println!("  {:<12} {d_in:>5} -> {d_out:>5}: {} per layer", t.module_name(), cfg.rank * (d_in + d_out));
    }
    println!("trainable over {} layers: {}", medium.n_layer, expected_trainable(&medium, &cfg)?);
    let every = AdapterConfig {
        target_modules: TargetModule::ALL.iter().map(|t| t.module_name().to_string()).collect(),
        ..AdapterConfig::default()
    };
    println!("with all four projections targeted: {}", expected_trainable(&medium, &every)?);

    // One medium-sized projection in 4 bits.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (d_in, d_out) = TargetModule::MlpFc.shape(&medium);
    let dense = ukil::nn::Matrix::from_vec(d_in, d_out, (0..d_in * d_out).map(|_| rng.random_range(-0.05..0.05)).collect());
    let q = Nf4Matrix::quantize(&dense);
    let back = q.dequantize();
    let rmse = (dense.data.iter().zip(&back.data).map(|(a, b)| (a - b).powi(2)).sum::<f32>() / dense.len() as f32).sqrt();
    println!(
        "mlp.c_fc {d_in}x{d_out}: {:.1} MiB in f32, {:.2} MiB in 4 bits, rmse {:.5}",
        (dense.len() * 4) as f64 / (1 << 20) as f64,
        q.storage_bytes() as f64 / (1 << 20) as f64,
        rmse
    );

    // Zero-initialized up projections: logits unchanged to the bit.
    let tiny = Gpt2Config::tiny(512);
    let model = Gpt2Model::random(tiny.clone(), 42)?;
    let w = model.compute_weights(Precision::F16);
    let adapters = AdapterSet::attach(&tiny, &cfg, 42)?;
    let ids: Vec<u32> = (0..32).map(|i| (i * 7 % 512) as u32).collect();
    let plain = model.logits(&w, None, &ids)?;
    let with = model.logits(&w, Some(&adapters), &ids)?;
    println!("zero adapters bit-identical: {}", plain.data.iter().zip(&with.data).all(|(a, b)| a.to_bits() == b.to_bits()));

    // Greedy next token, full precision vs quantized base, on 100 probes.
    let mut quantized = model.clone();
    quantized.quantize_nf4();
    let wq = quantized.compute_weights(Precision::F16);
    let wf = model.compute_weights(Precision::F32);
    let mut agree = 0;
    for p in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + p);
        let prompt: Vec<u32> = (0..rng.random_range(4..24)).map(|_| rng.random_range(3..512)).collect();
        let a = model.logits(&wf, None, &prompt)?;
        let b = quantized.logits(&wq, None, &prompt)?;
        if argmax(a.row(a.rows - 1)) == argmax(b.row(b.rows - 1)) {
            agree += 1;
        }
    }
    println!("greedy next-token agreement, 4-bit vs f32: {agree}/100");
    Ok(())
}
