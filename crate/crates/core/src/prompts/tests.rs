use super::*;
use crate::backbone::ParamSet;
use crate::util::Rng;
use ndarray::array;
use rand::{Rng as _, SeedableRng};

fn bank_from(shared: Array2<f64>, u: Array2<f64>, v: Array2<f64>) -> PromptBank {
    PromptBank::Generator(PromptGenerator { shared, u, v })
}

#[test]
fn identity_factors_return_shared_prompt() {
    let shared = array![[1.0, -2.0, 0.5], [3.0, 0.25, 7.0]];
    let bank = bank_from(shared.clone(), Array2::ones((2, 2)), Array2::ones((2, 3)));
    assert_eq!(bank.generate(1).unwrap(), shared);
}

#[test]
fn zero_factor_annihilates() {
    let shared = array![[1.0, -2.0, 0.5], [3.0, 0.25, 7.0]];
    let mut u = Array2::ones((2, 2));
    u.row_mut(0).fill(0.0);
    let bank = bank_from(shared, u, Array2::ones((2, 3)));
    assert!(bank.generate(0).unwrap().iter().all(|&x| x == 0.0));
}

#[test]
fn elementwise_oracle() {
    let shared = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
    let u = array![[1.0, 2.0]];
    let v = array![[1.0, 0.0, 1.0]];
    let bank = bank_from(shared.clone(), u.clone(), v.clone());
    let p = bank.generate(0).unwrap();
    for i in 0..2 {
        for j in 0..3 {
            assert_eq!(p[[i, j]], shared[[i, j]] * u[[0, i]] * v[[0, j]]);
        }
    }
    assert_eq!(p, array![[1.0, 0.0, 3.0], [8.0, 0.0, 12.0]]);
}

#[test]
fn out_of_range_domain() {
    let bank = PromptBank::generator(3, 4, 8, 0);
    assert!(matches!(bank.generate(3), Err(PldgError::Argument(_))));
}

#[test]
fn rank_one_factors_have_vanishing_minors() {
    for seed in 0..20 {
        let g = PromptGenerator::init(3, 4, 6, seed);
        for m in 0..3 {
            let f = g.factor(m);
            for i in 0..4 {
                for k in i + 1..4 {
                    for j in 0..6 {
                        for l in j + 1..6 {
                            let minor = f[[i, j]] * f[[k, l]] - f[[i, l]] * f[[k, j]];
                            assert!(minor.abs() < 1e-10);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn generator_backward_matches_finite_differences() {
    let bank = PromptBank::generator(3, 2, 4, 5);
    let mut rng = Rng::seed_from_u64(1);
    let target = Array2::from_shape_simple_fn((2, 4), || rng.random::<f64>() - 0.5);
    // loss = <target, P^1>
    let loss = |b: &PromptBank| (b.generate(1).unwrap() * &target).sum();
    let mut grads = bank.zeros_like();
    bank.backward(1, &target, &mut grads);
    let h = 1e-6;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    for (ti, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            let mut plus = bank.clone();
            plus.tensors_mut()[ti][k] += h;
            let mut minus = bank.clone();
            minus.tensors_mut()[ti][k] -= h;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((num - g[k]).abs() < 1e-7, "tensor {ti} idx {k}");
        }
    }
    // only domain 1's factors receive gradient
    let PromptBank::Generator(gg) = &grads else { unreachable!() };
    for m in [0, 2] {
        assert!(gg.u.row(m).iter().all(|&x| x == 0.0));
        assert!(gg.v.row(m).iter().all(|&x| x == 0.0));
    }
    assert!(gg.shared.iter().any(|&x| x != 0.0));
}

#[test]
fn independent_bank_routes_gradients_directly() {
    let bank = PromptBank::independent(2, 3, 4, 0);
    let mut grads = bank.zeros_like();
    let d = Array2::ones((3, 4));
    bank.backward(1, &d, &mut grads);
    let PromptBank::Independent(p) = &grads else { unreachable!() };
    assert_eq!(p.prompts[1], d);
    assert!(p.prompts[0].iter().all(|&x| x == 0.0));
}

#[test]
fn zero_final_layer_gives_uniform_weights() {
    let mut a = AdapterParams::init(8, 8, 4, 0);
    a.w2.fill(0.0);
    let f = Array2::from_shape_fn((3, 8), |(i, j)| (i * 8 + j) as f64);
    for w in adapter_weights(&a, &f).unwrap() {
        for &x in w.values() {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }
}

#[test]
fn adapter_output_is_on_the_simplex() {
    let a = AdapterParams::init(8, 8, 3, 4);
    let mut rng = Rng::seed_from_u64(3);
    let f = Array2::from_shape_simple_fn((50, 8), || 10.0 * (rng.random::<f64>() - 0.5));
    for w in adapter_weights(&a, &f).unwrap() {
        assert!((w.values().sum() - 1.0).abs() < 1e-6);
        assert!(PromptWeights::new(w.values().clone()).is_ok());
    }
    assert!(adapter_weights(&a, &Array2::zeros((1, 5))).is_err());
}

#[test]
fn adapter_backward_matches_finite_differences() {
    let a = AdapterParams::init(5, 6, 3, 2);
    let f = array![0.3, -0.2, 0.9, 0.1, -0.5];
    let coef = array![0.7, -1.3, 0.4];
    let loss = |p: &AdapterParams| p.trace(f.view()).unwrap().weights.dot(&coef);
    let t = a.trace(f.view()).unwrap();
    let mut grads = a.zeros_like();
    a.backward(&t, &coef, &mut grads);
    let h = 1e-6;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    for (ti, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            let mut plus = a.clone();
            plus.tensors_mut()[ti][k] += h;
            let mut minus = a.clone();
            minus.tensors_mut()[ti][k] -= h;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((num - g[k]).abs() < 1e-7, "tensor {ti} idx {k}: {num} vs {}", g[k]);
        }
    }
}

#[test]
fn one_hot_selects_bitwise() {
    let bank = PromptBank::generator(3, 4, 8, 9);
    for m in 0..3 {
        let w = PromptWeights::one_hot(3, m);
        assert_eq!(weighted_prompt(&bank, w.values()).unwrap(), bank.generate(m).unwrap());
    }
}

#[test]
fn uniform_weights_average() {
    let bank = PromptBank::generator(4, 2, 3, 1);
    let avg = weighted_prompt(&bank, PromptWeights::uniform(4).values()).unwrap();
    let all = bank.generate_all();
    let mean = all.iter().fold(Array2::<f64>::zeros((2, 3)), |acc, p| acc + p) / 4.0;
    assert!((&avg - &mean).iter().all(|d| d.abs() < 1e-15));
}

#[test]
fn convex_combination_elementwise() {
    let bank = PromptBank::Independent(IndependentPrompts {
        prompts: vec![array![[1.0, -2.0], [0.0, 4.0]], array![[3.0, 2.0], [8.0, -4.0]]],
    });
    let p = weighted_prompt(&bank, &array![0.25, 0.75]).unwrap();
    assert_eq!(p, array![[2.5, 1.0], [6.0, -2.0]]);
}

#[test]
fn off_simplex_weights_are_rejected() {
    let bank = PromptBank::generator(2, 2, 3, 1);
    assert!(weighted_prompt(&bank, &array![0.6, 0.5]).is_err());
    assert!(weighted_prompt(&bank, &array![1.2, -0.2]).is_err());
    assert!(weighted_prompt(&bank, &array![1.0]).is_err());
    assert!(weighted_prompt(&bank, &array![0.5 + 4e-6, 0.5]).is_ok());
}

#[test]
fn weight_stats_csv() {
    let ws = vec![
        PromptWeights::new(array![0.2, 0.8]).unwrap(),
        PromptWeights::new(array![0.4, 0.6]).unwrap(),
    ];
    let stats = weight_stats(&ws);
    assert!((stats[0].weight_mean - 0.3).abs() < 1e-12);
    assert!((stats[1].weight_std - 0.1).abs() < 1e-12);
    let mut buf = Vec::new();
    write_weight_stats_csv(&stats, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("domain,weight_mean,weight_std\n0,"));
    let total: f64 = stats.iter().map(|s| s.weight_mean).sum();
    assert!((total - 1.0).abs() < 1e-12);
}
