// Scratch experiment driver (deleted before release).
use advrand_core::model::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(32);

    let spec = SyntheticSpec {
        n_train,
        n_test: 1000,
        ..SyntheticSpec::default()
    };
    let t0 = Instant::now();
    let (train_set, test_set) = synthetic_dataset(&spec).unwrap();
    println!("dataset gen: {:.1}s", t0.elapsed().as_secs_f64());

    let w0 = init_model(&ModelArch::default(), 42).unwrap();
    let cfg = TrainConfig {
        epochs,
        lr,
        batch_size: batch,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let w = train(&w0, &train_set, &cfg).unwrap();
    let dt = t1.elapsed().as_secs_f64();
    let train_acc = accuracy(&w, &train_set).unwrap();
    let test_acc = accuracy(&w, &test_set).unwrap();
    println!(
        "n={n_train} epochs={epochs} lr={lr} batch={batch}: train {:.3} test {:.3} ({dt:.1}s, {:.2}s/epoch)",
        train_acc, test_acc, dt / epochs as f64
    );
}
