use super::*;
use crate::params::{permute_params, Connectivity, LabelPermutation};
use crate::sampler::sample_dataset;
use crate::testutil::*;
use rand::Rng;

fn q1(pi: f64) -> ModelParams {
    ModelParams::stationary(vec![vec![1.0]], vec![vec![pi]]).unwrap()
}

fn all_paths(q: usize, n: usize, t_steps: usize) -> Vec<LatentPaths> {
    let total = q.pow((n * t_steps) as u32);
    (0..total)
        .map(|mut k| {
            let mut labels = vec![vec![0; t_steps]; n];
            for i in 0..n {
                for t in 0..t_steps {
                    labels[i][t] = k % q;
                    k /= q;
                }
            }
            LatentPaths::new(labels).unwrap()
        })
        .collect()
}

/// log Σ_z exp(ℓ_c + log prior) from the two public per-configuration terms.
fn naive_loglik(params: &ModelParams, x: &GraphSequence) -> f64 {
    let terms: Vec<f64> = all_paths(params.q_classes, x.n(), x.t_steps())
        .iter()
        .map(|z| {
            conditional_loglik(params, z, x).unwrap() + latent_prior_loglik(params, z).unwrap()
        })
        .collect();
    crate::numeric::log_sum_exp(&terms)
}

#[test]
fn conditional_single_pair() {
    for e in [vec![], vec![[0, 0, 1]]] {
        let x = GraphSequence::from_edges(2, 1, &e).unwrap();
        let v = conditional_loglik(&q1(0.5), &LatentPaths::constant(2, 1, 0), &x).unwrap();
        assert!((v + std::f64::consts::LN_2).abs() < 1e-12);
    }
}

#[test]
fn conditional_single_class_closed_form() {
    let mut r = rng(1);
    let x = random_graph(&mut r, 7, 3, 0.3);
    let m: usize = (0..3).map(|t| x.edge_count(t)).sum();
    let total = 3 * 21;
    let p = 0.37;
    let v = conditional_loglik(&q1(p), &LatentPaths::constant(7, 3, 0), &x).unwrap();
    let expected = m as f64 * p.ln() + (total - m) as f64 * (1.0 - p).ln();
    assert!((v - expected).abs() < 1e-12);
}

#[test]
fn conditional_matches_naive_loop() {
    let mut r = rng(2);
    for _ in 0..20 {
        let p = random_params(&mut r, 2, 0.05, 0.05);
        let x = random_graph(&mut r, 4, 2, 0.5);
        let z = random_paths(&mut r, 4, 2, 2);
        let v = conditional_loglik(&p, &z, &x).unwrap();
        assert!((v - naive_conditional(&p, &z, &x)).abs() < 1e-12);
    }
}

#[test]
fn prior_examples() {
    let mut r = rng(3);
    let p = random_params(&mut r, 3, 0.05, 0.05);
    let alpha = p.stationary_distribution().unwrap().alpha;
    let z = LatentPaths::new(vec![vec![2]]).unwrap();
    assert!((latent_prior_loglik(&p, &z).unwrap() - alpha[2].ln()).abs() < 1e-15);

    let z = random_paths(&mut r, 6, 5, 3);
    let c = crate::sampler::count_summary(&z, 3).unwrap();
    let mut count_form = 0.0;
    for q in 0..3 {
        count_form += c.n_q[0][q] as f64 * alpha[q].ln();
        for l in 0..3 {
            count_form += c.n_ql[q][l] as f64 * p.gamma[q][l].ln();
        }
    }
    assert!((latent_prior_loglik(&p, &z).unwrap() - count_form).abs() < 1e-12);

    let p = ModelParams::stationary(
        vec![vec![0.7, 0.3], vec![0.3, 0.7]],
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
    )
    .unwrap();
    let z = LatentPaths::new(vec![vec![0, 0], vec![0, 1]]).unwrap();
    let expected = 2.0 * 0.5f64.ln() + 0.7f64.ln() + 0.3f64.ln();
    assert!((latent_prior_loglik(&p, &z).unwrap() - expected).abs() < 1e-14);
}

#[test]
fn brute_force_examples() {
    let mut r = rng(4);
    let x = random_graph(&mut r, 3, 2, 0.4);
    let p = q1(0.3);
    let b = exact_loglik_bruteforce(&p, &x).unwrap();
    let c = conditional_loglik(&p, &LatentPaths::constant(3, 2, 0), &x).unwrap();
    assert!((b.value - c).abs() < 1e-12);
    assert_eq!(b.n_terms, 1);

    let p = random_params(&mut r, 2, 0.05, 0.05);
    let x = random_graph(&mut r, 2, 2, 0.5);
    let b = exact_loglik_bruteforce(&p, &x).unwrap();
    assert_eq!(b.n_terms, 16);
    assert!((b.value - naive_loglik(&p, &x)).abs() < 1e-12);
}

#[test]
fn likelihood_is_permutation_invariant() {
    let mut r = rng(5);
    let p = random_params(&mut r, 3, 0.05, 0.05);
    let x = random_graph(&mut r, 3, 2, 0.5);
    let base = exact_loglik_bruteforce(&p, &x).unwrap().value;
    let nb = normalized_loglik(&p, &x).unwrap();
    let m = exact_posterior_marginals(&p, &x).unwrap();
    for sigma in LabelPermutation::all(3) {
        let ps = permute_params(&p, &sigma).unwrap();
        assert!((exact_loglik_bruteforce(&ps, &x).unwrap().value - base).abs() < 1e-10);
        assert!((normalized_loglik(&ps, &x).unwrap() - nb).abs() < 1e-12);
        // class q of the permuted model is class σ(q) of the original
        let ms = exact_posterior_marginals(&ps, &x).unwrap();
        for t in 0..2 {
            for i in 0..3 {
                for q in 0..3 {
                    assert!((ms.tau[t][i][q] - m.tau[t][i][sigma.apply(q)]).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn transfer_matches_brute_force() {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(2..=4);
        let t = r.random_range(1..=4);
        let p = random_params(&mut r, 2, 0.05, 0.05);
        let (_, x) = sample_dataset(&p, n, t, r.random()).unwrap();
        let b = exact_loglik_bruteforce(&p, &x).unwrap().value;
        let f = exact_loglik_transfer(&p, &x).unwrap().value;
        worst = worst.max(((b - f) / b).abs());
    }
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn transfer_single_layer_and_single_class() {
    let mut r = rng(7);
    let p = random_params(&mut r, 2, 0.05, 0.05);
    let x = random_graph(&mut r, 4, 1, 0.5);
    let alpha = p.stationary_distribution().unwrap().alpha;
    // single-layer mixture: Σ_c Π_i α_{c_i} P(X | c)
    let mut terms = Vec::new();
    for z in all_paths(2, 4, 1) {
        let prior: f64 = (0..4).map(|i| alpha[z.get(i, 0)].ln()).sum();
        terms.push(prior + naive_conditional(&p, &z, &x));
    }
    let f = exact_loglik_transfer(&p, &x).unwrap().value;
    assert!((f - crate::numeric::log_sum_exp(&terms)).abs() < 1e-12);

    let x = random_graph(&mut r, 6, 3, 0.5);
    let f = exact_loglik_transfer(&q1(0.4), &x).unwrap().value;
    let c = conditional_loglik(&q1(0.4), &LatentPaths::constant(6, 3, 0), &x).unwrap();
    assert!((f - c).abs() < 1e-12);
}

#[test]
fn size_caps_are_enforced() {
    let p = ModelParams::stationary(
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        vec![vec![0.5, 0.4], vec![0.4, 0.5]],
    )
    .unwrap();
    let x = GraphSequence::empty(17, 2);
    assert!(matches!(
        exact_loglik_transfer(&p, &x),
        Err(DsbmError::UnsupportedSize { .. })
    ));
    let x = GraphSequence::empty(12, 2);
    assert!(matches!(
        exact_loglik_bruteforce(&p, &x),
        Err(DsbmError::UnsupportedSize { .. })
    ));
}

#[test]
fn uninformative_posterior_is_prior() {
    let mut r = rng(8);
    let mut p = random_params(&mut r, 2, 0.05, 0.05);
    p.pi = Connectivity::Stationary(vec![vec![0.3; 2]; 2]);
    let x = random_graph(&mut r, 4, 3, 0.5);
    let alpha = p.stationary_distribution().unwrap().alpha;
    let m = exact_posterior_marginals(&p, &x).unwrap();
    for t in 0..3 {
        for i in 0..4 {
            for q in 0..2 {
                assert!((m.tau[t][i][q] - alpha[q]).abs() < 1e-12);
                if t < 2 {
                    for l in 0..2 {
                        assert!((m.eta[t][i][q][l] - alpha[q] * p.gamma[q][l]).abs() < 1e-12);
                    }
                }
            }
        }
    }
    let res = mle_gamma_fixed_point_residual(&p, &x).unwrap();
    assert!(crate::report::max_abs(&res) < 1e-12);

    let x = random_graph(&mut r, 3, 2, 0.5);
    let m = exact_posterior_marginals(&q1(0.4), &x).unwrap();
    assert!(m
        .tau
        .iter()
        .flatten()
        .flatten()
        .all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn marginals_match_full_table() {
    let mut r = rng(9);
    for _ in 0..5 {
        let p = random_params(&mut r, 2, 0.05, 0.05);
        let (_, x) = sample_dataset(&p, 3, 2, r.random()).unwrap();
        let table = exact_posterior_table(&p, &x).unwrap();
        let total: f64 = table.log_post.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut tau = vec![vec![vec![0.0; 2]; 3]; 2];
        let mut eta = vec![vec![vec![0.0; 2]; 2]; 3];
        for (k, lp) in table.log_post.iter().enumerate() {
            let z = table.paths(k);
            assert_eq!(table.index_of(&z), k);
            for i in 0..3 {
                for t in 0..2 {
                    tau[t][i][z.get(i, t)] += lp.exp();
                }
                eta[i][z.get(i, 0)][z.get(i, 1)] += lp.exp();
            }
        }
        let m = exact_posterior_marginals(&p, &x).unwrap();
        for i in 0..3 {
            for q in 0..2 {
                for t in 0..2 {
                    assert!((m.tau[t][i][q] - tau[t][i][q]).abs() < 1e-10);
                }
                let row: f64 = m.eta[0][i][q].iter().sum();
                assert!((row - m.tau[0][i][q]).abs() < 1e-10);
                let col: f64 = (0..2).map(|a| m.eta[0][i][a][q]).sum();
                assert!((col - m.tau[1][i][q]).abs() < 1e-10);
                for l in 0..2 {
                    assert!((m.eta[0][i][q][l] - eta[i][q][l]).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn posterior_ratio_identities() {
    let mut r = rng(10);
    let p = random_params(&mut r, 2, 0.05, 0.05);
    let (z, x) = sample_dataset(&p, 3, 2, 17).unwrap();
    let table = exact_posterior_table(&p, &x).unwrap();
    let pz = table.log_post[table.index_of(&z)].exp();
    let ratio = posterior_ratio(&p, &x, &z).unwrap();
    assert!((ratio - (1.0 - pz) / pz).abs() < 1e-9 * (1.0 + ratio));

    let uniform = ModelParams::stationary(
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        vec![vec![0.4, 0.4], vec![0.4, 0.4]],
    )
    .unwrap();
    let ratio = posterior_ratio(&uniform, &x, &z).unwrap();
    let expected = 2f64.powi(6) - 1.0;
    assert!((ratio - expected).abs() < 1e-9);
}

#[test]
fn map_examples() {
    let x = GraphSequence::empty(3, 2);
    let z = map_configuration(&q1(0.4), &x).unwrap();
    assert_eq!(z, LatentPaths::constant(3, 2, 0));

    // two triangles {0,1,2} and {3,4,5}
    let mut edges = Vec::new();
    for (a, b) in [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)] {
        edges.push([0, a, b]);
    }
    let x = GraphSequence::from_edges(6, 1, &edges).unwrap();
    let p = ModelParams::stationary(
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
    )
    .unwrap();
    let z = map_configuration(&p, &x).unwrap();
    assert_eq!(z.column(0), vec![0, 0, 0, 1, 1, 1]);
    // exhaustive check of the argmax
    let best = all_paths(2, 6, 1)
        .iter()
        .map(|c| conditional_loglik(&p, c, &x).unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((conditional_loglik(&p, &z, &x).unwrap() - best).abs() < 1e-12);

    let mut r = rng(11);
    let p = random_params(&mut r, 3, 0.05, 0.05);
    let (_, x) = sample_dataset(&p, 6, 3, 3).unwrap();
    let zhat = map_configuration(&p, &x).unwrap();
    let top = conditional_loglik(&p, &zhat, &x).unwrap();
    for _ in 0..100 {
        let z = random_paths(&mut r, 6, 3, 3);
        assert!(top >= conditional_loglik(&p, &z, &x).unwrap());
    }
}

#[test]
fn likelihood_sandwich() {
    let mut r = rng(12);
    for _ in 0..20 {
        let p = random_params(&mut r, 2, 0.1, 0.05);
        let (_, x) = sample_dataset(&p, 4, 3, r.random()).unwrap();
        let zhat = map_configuration(&p, &x).unwrap();
        let lc = conditional_loglik(&p, &zhat, &x).unwrap();
        let lp = latent_prior_loglik(&p, &zhat).unwrap();
        let ll = exact_loglik_transfer(&p, &x).unwrap().value;
        assert!(lc + lp <= ll + 1e-12);
        assert!(ll <= lc + 1e-12);
        assert!(lc - ll <= -lp + 1e-12);
        assert!(-lp <= 12.0 * (1.0 / 0.1f64).ln() + 1e-12);
    }
}

#[test]
fn normalized_is_scaled() {
    let mut r = rng(13);
    let p = random_params(&mut r, 2, 0.05, 0.05);
    let (_, x) = sample_dataset(&p, 4, 3, 1).unwrap();
    let ll = exact_loglik_transfer(&p, &x).unwrap().value;
    assert!((normalized_loglik(&p, &x).unwrap() - ll / 18.0).abs() < 1e-14);
}

#[test]
fn time_varying_transfer_matches_brute() {
    let mut r = rng(14);
    let mut p = random_params(&mut r, 2, 0.05, 0.05);
    p.pi = Connectivity::TimeVarying((0..3).map(|_| random_pi(&mut r, 2, 0.05)).collect());
    let (_, x) = sample_dataset(&p, 3, 3, 2).unwrap();
    let b = exact_loglik_bruteforce(&p, &x).unwrap().value;
    let f = exact_loglik_transfer(&p, &x).unwrap().value;
    assert!(((b - f) / b).abs() < 1e-12);
    assert!((b - naive_loglik(&p, &x)).abs() < 1e-10);
}

#[test]
fn mle_single_class_is_clamped_frequency() {
    let mut r = rng(15);
    let x = random_graph(&mut r, 6, 3, 0.2);
    let m: usize = (0..3).map(|t| x.edge_count(t)).sum();
    let rep = exact_mle(&x, 1, &MleConfig::default()).unwrap();
    let freq = m as f64 / 45.0;
    assert!((rep.params.pi_at(0)[0][0] - freq.clamp(0.05, 0.95)).abs() < 1e-15);
    let x = GraphSequence::empty(4, 2);
    let rep = exact_mle(&x, 1, &MleConfig::default()).unwrap();
    assert_eq!(rep.params.pi_at(0)[0][0], 0.05);
}

#[test]
fn mle_dominates_truth_and_probes() {
    let cfg = MleConfig {
        restarts: 4,
        ..MleConfig::default()
    };
    let mut r = rng(16);
    for rep in 0..20 {
        let truth = random_params(&mut r, 2, 0.05, 0.05);
        let (_, x) = sample_dataset(&truth, 4, 3, rep).unwrap();
        let fit = exact_mle(
            &x,
            2,
            &MleConfig {
                seed: rep,
                ..cfg.clone()
            },
        )
        .unwrap();
        let best = fit.argmax.as_ref().unwrap().loglik;
        let lt = exact_loglik_transfer(&truth, &x).unwrap().value;
        assert!(best >= lt - 1e-9, "rep {rep}: {best} < {lt}");
        assert!(fit.objective <= best + 1e-9);
        if rep < 2 {
            for _ in 0..100 {
                let probe = random_params(&mut r, 2, 0.05, 0.05);
                assert!(best >= exact_loglik_transfer(&probe, &x).unwrap().value - 1e-9);
            }
        }
    }
}

#[test]
fn residual_needs_transitions() {
    let mut r = rng(17);
    let p = random_params(&mut r, 2, 0.05, 0.05);
    let x = random_graph(&mut r, 3, 1, 0.5);
    assert!(matches!(
        mle_gamma_fixed_point_residual(&p, &x),
        Err(DsbmError::Undefined(_))
    ));
}
