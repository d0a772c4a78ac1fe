//! Measures wall time of one training step at the overfit-run configuration.
//! Run: cargo run -p eulernet-core --example step_profile --release

use std::time::Instant;

use eulernet_core::data::{load_manifest, synth_dataset};
use eulernet_core::model::EulerNetConfig;
use eulernet_core::trainer::{train_with_observer, TrainConfig};

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let t0 = Instant::now();
    let manifest = synth_dataset(7, 8, 8, dir.path()).expect("synth");
    println!("synth_dataset: {:.1}s", t0.elapsed().as_secs_f64());
    let records = load_manifest(&manifest).expect("manifest");

    let model_config = EulerNetConfig {
        convs_per_level: 1,
        ..EulerNetConfig::default()
    };
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(6u64);
    let lr = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-2);
    let batch = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4usize);
    let train_config = TrainConfig {
        lr,
        batch_size: batch,
        epochs: 10_000,
        seed: 7,
        max_steps: Some(steps),
        early_stop_loss: Some(1e-3),
        ..TrainConfig::default()
    };

    let t0 = Instant::now();
    let mut last = Instant::now();
    let mut best = f64::INFINITY;
    let mut observer = move |step: u64, loss: f64, _model: &_| {
        best = best.min(loss);
        if step % 10 == 0 || loss < 1e-3 {
            println!(
                "step {step}: loss {loss:.6} best {best:.6} ({:.2}s/step)",
                last.elapsed().as_secs_f64() / 10.0
            );
            last = Instant::now();
        }
    };
    train_with_observer::<f32>(&train_config, &model_config, &records, None, Some(&mut observer))
        .expect("train");
    println!("total: {:.1}s for {steps} steps", t0.elapsed().as_secs_f64());
}
