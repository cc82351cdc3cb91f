use decision_regions::data::ActionId;
use decision_regions::kernel::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// One informative feature (the sign of x₀ picks the action) and three noise features.
fn sign_data(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<ActionId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = gaussian(&mut rng, n, 4);
    let ys = xs.iter().map(|x| ActionId((x[0] > 0.0) as usize)).collect();
    (xs, ys)
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = KernelModel::new(3, 3, 16, 5);
    for u in &mut model.log_weights {
        *u = rng.random_range(-0.5..0.5);
    }
    for v in &mut model.coef {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let xs = gaussian(&mut rng, 10, 3);
    let ys: Vec<ActionId> = (0..10).map(|i| ActionId(i % 3)).collect();
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let g = loss_and_gradient(&model, &refs, &ys);

    let h = 1e-5;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    for j in 0..model.log_weights.len() {
        let mut p = model.clone();
        p.log_weights[j] += h;
        let mut m = model.clone();
        m.log_weights[j] -= h;
        let num = (loss_and_gradient(&p, &refs, &ys).loss - loss_and_gradient(&m, &refs, &ys).loss) / (2.0 * h);
        assert!(rel(g.grad_log_weights[j], num) < 1e-4, "u[{j}]: {} vs {num}", g.grad_log_weights[j]);
    }
    for j in 0..model.coef.len() {
        let mut p = model.clone();
        p.coef[j] += h;
        let mut m = model.clone();
        m.coef[j] -= h;
        let num = (loss_and_gradient(&p, &refs, &ys).loss - loss_and_gradient(&m, &refs, &ys).loss) / (2.0 * h);
        assert!(rel(g.grad_coef[j], num) < 1e-4, "V[{j}]: {} vs {num}", g.grad_coef[j]);
    }
}

#[test]
fn rff_inner_products_track_the_exact_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 10;
    let mut model = KernelModel::new(d, 2, 2048, 9);
    for u in &mut model.log_weights {
        *u = rng.random_range(-2.5..-1.0);
    }
    let w = model.weights();
    let mut err = 0.0;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let zx = model.rff_project(&x).unwrap();
        let zy = model.rff_project(&y).unwrap();
        let approx: f64 = zx.iter().zip(&zy).map(|(a, b)| a * b).sum();
        err += (approx - kernel_exact(&x, &y, &w).unwrap()).abs();
    }
    assert!(err / 1000.0 <= 0.05, "mean error {}", err / 1000.0);
}

#[test]
fn informative_weight_dominates_noise() {
    let mut wins = 0;
    for seed in 0..5 {
        let (xs, ys) = sign_data(seed, 5000);
        let cfg = TrainConfig {
            learning_rate: 1.0,
            epochs: 20,
            batch_size: 256,
            rff_dim: 512,
            seed,
        };
        let m = train_kernel(&xs, &ys, 2, &cfg).unwrap();
        let w = m.weights();
        let noise = w[1..].iter().cloned().fold(f64::MIN, f64::max);
        if w[0] / noise >= 3.0 {
            wins += 1;
        }
    }
    assert!(wins >= 4, "only {wins} of 5 seeds separate the informative feature");
}

#[test]
fn separable_labels_are_learned() {
    let (xs, ys) = sign_data(21, 3000);
    let cfg = TrainConfig {
        learning_rate: 1.0,
        epochs: 10,
        batch_size: 256,
        rff_dim: 512,
        seed: 21,
    };
    let m = train_kernel(&xs, &ys, 2, &cfg).unwrap();
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(x, y)| {
            let p = m.predict_action_probs(&m.standardize(x)).unwrap();
            (p[1] > p[0]) == (y.0 == 1)
        })
        .count();
    assert!(correct as f64 / xs.len() as f64 >= 0.95, "accuracy {correct}/{}", xs.len());
    assert!(m.loss_history.last().unwrap() < m.loss_history.first().unwrap());
}
