use metarl::metaes::*;
use metarl::numcore::RngStream;
use proptest::prelude::*;

fn cfg(shaping: FitnessShaping, gens: usize) -> EsConfig {
    EsConfig {
        n_generations: gens,
        shaping,
        ..EsConfig::default()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn sphere_converges_with_centered_shaping() {
    let mut rng = RngStream::new(1, 0);
    let target: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
    let t = target.clone();
    let f = move |x: &[f64]| -x.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let out = meta_train_es(&cfg(FitnessShaping::Centered, 200), &f, vec![0.0; 20], &RngStream::new(2, 0)).unwrap();
    assert!(dist(&out.final_state.mean, &target) < 0.1);
    assert_eq!(out.history.len(), 200);
}

#[test]
fn linear_fitness_moves_along_its_gradient() {
    let mut rng = RngStream::new(3, 0);
    let c: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
    let cc = c.clone();
    let f = move |x: &[f64]| x.iter().zip(&cc).map(|(a, b)| a * b).sum::<f64>();
    for shaping in [FitnessShaping::CenteredRank, FitnessShaping::Centered] {
        let out = meta_train_es(&cfg(shaping, 200), &f, vec![0.0; 20], &RngStream::new(4, 0)).unwrap();
        let m = &out.final_state.mean;
        let dot: f64 = m.iter().zip(&c).map(|(a, b)| a * b).sum();
        let cos = dot / (dist(m, &[0.0; 20]) * dist(&c, &[0.0; 20]));
        assert!(cos > 0.9, "{shaping:?}: cosine {cos}");
    }
}

#[test]
fn constant_fitness_leaves_mean_unchanged() {
    let init: Vec<f64> = (0..7).map(|i| i as f64 * 0.3 - 1.0).collect();
    for shaping in [FitnessShaping::CenteredRank, FitnessShaping::Centered] {
        let out = meta_train_es(&cfg(shaping, 5), &|_: &[f64]| 4.2, init.clone(), &RngStream::new(0, 0)).unwrap();
        assert_eq!(out.final_state.mean, init);
    }
}

#[test]
fn even_fitness_gives_zero_step() {
    // F(m + s e) = F(m - s e) around m = 0
    let f = |x: &[f64]| -x.iter().map(|v| v * v).sum::<f64>() + x.iter().map(|v| v.abs()).sum::<f64>();
    let c = cfg(FitnessShaping::CenteredRank, 1);
    let st = EsState::new(vec![0.0; 9], &c);
    let (next, _) = es_step(&st, &c, &f, &RngStream::new(5, 5)).unwrap();
    assert!(next.mean.iter().all(|v| *v == 0.0), "{:?}", next.mean);
}

#[test]
fn schedule_decays_exactly() {
    let c = cfg(FitnessShaping::CenteredRank, 37);
    let out = meta_train_es(&c, &|x: &[f64]| x[0], vec![0.0; 3], &RngStream::new(0, 0)).unwrap();
    let mut lr = c.learning_rate;
    let mut sigma = c.sigma_init;
    for _ in 0..37 {
        lr *= c.lr_decay;
        sigma *= c.sigma_decay;
    }
    assert_eq!(out.final_state.lr, lr);
    assert_eq!(out.final_state.sigma, sigma);
    assert!((lr - 3e-2 * 0.999f64.powi(37)).abs() < 1e-15);
    assert_eq!(out.final_state.generation, 37);
}

#[test]
fn zero_generations_returns_initial_mean() {
    let out = meta_train_es(&cfg(FitnessShaping::CenteredRank, 0), &|x: &[f64]| x[0], vec![1.0, 2.0], &RngStream::new(0, 0)).unwrap();
    assert_eq!(out.best_params, vec![1.0, 2.0]);
    assert!(out.history.is_empty());
}

#[test]
fn history_is_independent_of_worker_count() {
    let f = |x: &[f64]| -x.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>();
    let run = |workers: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .unwrap()
            .install(|| meta_train_es(&cfg(FitnessShaping::CenteredRank, 20), &f, vec![0.0; 6], &RngStream::new(8, 8)).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.history, b.history);
    assert_eq!(a.final_state, b.final_state);
}

#[test]
fn diverged_members_get_the_floor() {
    let s = shape_fitness(&[f64::NEG_INFINITY, 1.0, 2.0, 3.0], FitnessShaping::Centered);
    assert_eq!(s[0], s[1]);
    assert!(shape_fitness(&[f64::NEG_INFINITY; 4], FitnessShaping::CenteredRank).iter().all(|v| *v == 0.0));
}

#[test]
fn odd_population_is_rejected() {
    let c = EsConfig {
        population_size: 7,
        ..EsConfig::default()
    };
    assert!(c.validate().is_err());
}

#[test]
fn perturbations_are_antithetic() {
    let p = perturbations(11, 64, &RngStream::new(4, 2));
    assert_eq!(p.len(), 64);
    for j in 0..32 {
        for d in 0..11 {
            assert_eq!(p[2 * j][d], -p[2 * j + 1][d]);
        }
    }
}

proptest! {
    #[test]
    fn rank_shaping_is_bounded_and_centered(v in prop::collection::vec(-1e3f64..1e3, 2..40)) {
        let s = shape_fitness(&v, FitnessShaping::CenteredRank);
        prop_assert!(s.iter().all(|x| *x >= -0.5 && *x <= 0.5));
        prop_assert!(s.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn rank_shaping_is_monotone(v in prop::collection::vec(-1e3f64..1e3, 2..40), i in any::<prop::sample::Index>(), bump in 0.0f64..100.0) {
        let k = i.index(v.len());
        let before = shape_fitness(&v, FitnessShaping::CenteredRank)[k];
        let mut w = v.clone();
        w[k] += bump;
        prop_assert!(shape_fitness(&w, FitnessShaping::CenteredRank)[k] >= before);
    }
}
