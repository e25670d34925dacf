//! Generates a synthetic city and reports the best F1 any model could reach.

use crashformer::synth::{Signal, WorldConfig, generate_world, world_oracle};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("crashformer-world"));
    let cfg = WorldConfig {
        n_regions: 30,
        n_days: 30,
        signal: Signal { w_hist: 0.5, w_weather: 1.0, w_demo: 1.5, w_img: 2.0 },
        ..WorldConfig::default()
    };
    let world = generate_world(&cfg, &dir)?;
    println!("wrote {} regions x {} windows to {}", world.regions.len(), world.n_windows, dir.display());
    println!("observed positive rate {:.4}", world.positive_rate());
    let o = world_oracle(&dir)?;
    println!(
        "oracle: F1_1 {:.4} at p > 0.5, {:.4} at the best threshold {:.3}",
        o.bayes_f1_1, o.optimal_f1_1, o.optimal_threshold
    );
    Ok(())
}
