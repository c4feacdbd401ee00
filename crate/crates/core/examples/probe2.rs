// Scratch experiment driver (deleted before release).
use advrand_core::attack::*;
use advrand_core::defense::*;
use advrand_core::harness::*;
use advrand_core::model::*;
use std::time::Instant;

fn main() {
    let spec = SyntheticSpec {
        n_train: 8000,
        n_test: 2000,
        ..SyntheticSpec::default()
    };
    let (train_set, test_set) = synthetic_dataset(&spec).unwrap();
    let w0 = init_model(&ModelArch::default(), 42).unwrap();
    let cfg = TrainConfig::default();
    let t = Instant::now();
    let w = train(&w0, &train_set, &cfg).unwrap();
    println!("train: {:.0}s, test acc {:.3}", t.elapsed().as_secs_f64(),
             accuracy(&w, &test_set).unwrap());

    // Correct subset of 200.
    let subset = select_correct_subset(&[&w], &test_set, 200, 7).unwrap();
    println!("subset bare acc: {}", accuracy(&w, &subset).unwrap());

    // Defense clean accuracy (3 runs, n_iter=1).
    let defense = DefenseConfig::default();
    for run in 0..3u64 {
        let mut correct = 0;
        for (i, (img, &label)) in subset.images.iter().zip(&subset.labels).enumerate() {
            let seed = derive_seed(&[99, run, i as u64]);
            let mut rng = <rand_chacha::ChaCha12Rng as rand::SeedableRng>::seed_from_u64(seed);
            let (pred, _) =
                randomized_predict(&w, img, &defense.randomization, 1, &mut rng).unwrap();
            if pred == label {
                correct += 1;
            }
        }
        println!("defense clean run {run}: {:.3}", correct as f64 / subset.len() as f64);
    }

    // FGSM vanilla at the three step sizes.
    for eps_n in [2.0, 5.0, 10.0] {
        let eps = eps_n / 255.0;
        let t = Instant::now();
        let report = run_scenario(
            &w,
            &ScenarioSpec::vanilla(),
            &AttackConfig::fgsm(eps),
            &subset,
            &defense,
            1234,
        )
        .unwrap();
        println!(
            "fgsm-{eps_n}: target {:.3} defense {:.3} ({:.1}s)",
            report.target_accuracy, report.defense_accuracy_mean, t.elapsed().as_secs_f64()
        );
    }

    // DeepFool vanilla.
    let t = Instant::now();
    let report = run_scenario(
        &w,
        &ScenarioSpec::vanilla(),
        &AttackConfig::deepfool(),
        &subset,
        &defense,
        1234,
    )
    .unwrap();
    println!(
        "deepfool: target {:.3} defense {:.3} ({:.1}s)",
        report.target_accuracy, report.defense_accuracy_mean, t.elapsed().as_secs_f64()
    );

    // C&W vanilla.
    let t = Instant::now();
    let report = run_scenario(
        &w,
        &ScenarioSpec::vanilla(),
        &AttackConfig::cw(),
        &subset,
        &defense,
        1234,
    )
    .unwrap();
    println!(
        "cw: target {:.3} defense {:.3} ({:.1}s)",
        report.target_accuracy, report.defense_accuracy_mean, t.elapsed().as_secs_f64()
    );
}
