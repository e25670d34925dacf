//! One forward pass through the multimodal network, printing each latent.

use crashformer::featurize::N_FEATURES;
use crashformer::ingest::DEMO_DIM;
use crashformer::model::{Ablation, Batch, CrashFormer, ModelConfig, Network};
use crashformer::nn::{Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::tiny();
    let model = CrashFormer::new(cfg.clone(), Ablation::FULL, 0)?;
    let n: usize = model.params.ids().map(|id| model.params.get(id).len()).sum();
    println!("{n} parameters in {} tensors", model.params.len());

    let b = 3;
    let s = cfg.img_size;
    let ramp = |n: usize, scale: f64| (0..n).map(|i| (i % 17) as f64 * scale).collect::<Vec<_>>();
    let batch = Batch {
        history: Tensor::new(&[b, cfg.history_len, N_FEATURES], ramp(b * cfg.history_len * N_FEATURES, 0.05)),
        demo: Tensor::new(&[b, DEMO_DIM], ramp(b * DEMO_DIM, 0.1)),
        tiles: Tensor::new(&[2, 3, s, s], ramp(2 * 3 * s * s, 1.0 / 16.0)),
        tile_index: vec![0, 1, 0],
        labels: vec![0, 1, 0],
    };
    let mut t = Tape::new();
    let l = model.forward(&mut t, &batch, None)?;
    for (name, v) in [("sequence", l.seq), ("image", l.img), ("demographic", l.demo), ("fused", l.fused), ("logits", l.logits)] {
        println!("{name:>11} latent {:?}", t.shape(v));
    }
    for (i, p) in model.predict(&batch).iter().enumerate() {
        println!("sample {i}: P(accident) = {:.4}", p[1]);
    }
    Ok(())
}
