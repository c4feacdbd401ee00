// Scratch experiment driver (deleted before release).
use advrand_core::attack::*;
use advrand_core::model::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_sub: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);

    let spec = SyntheticSpec {
        n_train: 8000,
        n_test: 2000,
        ..SyntheticSpec::default()
    };
    let (train_set, test_set) = synthetic_dataset(&spec).unwrap();
    let w = train(
        &init_model(&ModelArch { conv1_filters: 10, conv2_filters: 20, ..ModelArch::default() }, 42).unwrap(),
        &train_set,
        &TrainConfig::default(),
    )
    .unwrap();
    println!("test acc {:.3}", accuracy(&w, &test_set).unwrap());
    let subset = select_correct_subset(&[&w], &test_set, n_sub, 7).unwrap();
    let target = PlainTarget::new(&w);

    // DeepFool norm distribution and success.
    let t = Instant::now();
    let out = attack_batch(&AttackConfig::deepfool(), &target, &subset).unwrap();
    let mut norms: Vec<f64> = Vec::new();
    let mut succ = 0;
    let mut iters = 0;
    for r in &out {
        let r = r.as_ref().unwrap();
        norms.push(r.perturbation_l2);
        succ += r.success as usize;
        iters += r.iterations_used;
    }
    norms.sort_by(f64::total_cmp);
    println!(
        "deepfool: success {}/{} median L2 {:.3} p90 {:.3} mean iters {:.1} ({:.1}s)",
        succ,
        out.len(),
        norms[norms.len() / 2],
        norms[norms.len() * 9 / 10],
        iters as f64 / out.len() as f64,
        t.elapsed().as_secs_f64()
    );
    // Actual per-image FGSM-10 perturbation norms.
    let fg_out = attack_batch(&AttackConfig::fgsm(10.0 / 255.0), &target, &subset).unwrap();
    let mut below = 0;
    let mut fnorms: Vec<f64> = Vec::new();
    let mut per_class_bad: std::collections::BTreeMap<usize, usize> = Default::default();
    for ((df, fg), &label) in out.iter().zip(&fg_out).zip(&subset.labels) {
        let (df, fg) = (df.as_ref().unwrap(), fg.as_ref().unwrap());
        fnorms.push(fg.perturbation_l2);
        if df.perturbation_l2 < fg.perturbation_l2 {
            below += 1;
        } else {
            *per_class_bad.entry(label).or_default() += 1;
        }
    }
    fnorms.sort_by(f64::total_cmp);
    println!(
        "fgsm-10 L2 median {:.3}; deepfool < fgsm for {below}/{}; failures by class {:?}",
        fnorms[fnorms.len() / 2],
        out.len(),
        per_class_bad
    );

    // C&W parameter sweep.
    for (c, lr, iters) in [
        (1.0, 0.01, 200),
        (10.0, 0.01, 200),
        (50.0, 0.01, 200),
        (50.0, 0.05, 200),
        (100.0, 0.05, 200),
        (50.0, 0.05, 300),
    ] {
        let mut cfg = AttackConfig::cw();
        cfg.c = c;
        cfg.lr = lr;
        cfg.max_iter = iters;
        let t = Instant::now();
        let out = attack_batch(&cfg, &target, &subset).unwrap();
        let succ = out
            .iter()
            .filter(|r| r.as_ref().map(|x| x.success).unwrap_or(false))
            .count();
        let mut dists: Vec<f64> = out
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .filter(|r| r.success)
            .map(|r| r.perturbation_l2)
            .collect();
        dists.sort_by(f64::total_cmp);
        let med = dists.get(dists.len() / 2).copied().unwrap_or(f64::NAN);
        println!(
            "cw c={c} lr={lr} it={iters}: success {succ}/{} median L2 {med:.3} ({:.1}s)",
            out.len(),
            t.elapsed().as_secs_f64()
        );
    }
}
