use metarl::learnedalgos::*;
use metarl::numcore::{Activation, Adam, MlpParams, MlpSpec, RngStream};
use metarl::symdsl::{parse, Signature, MOMENTUM_BETAS};
use proptest::prelude::*;

fn ppo(r: f64, a: f64) -> f64 {
    ((r - r.clamp(0.8, 1.2)) * a).max(0.0)
}

#[test]
fn lpo_init_tracks_clip_drift_on_grid() {
    let net = init_lpo_near_ppo(&lpo_spec(), 0.2, &RngStream::new(11, 0)).unwrap();
    let d = DriftFunction::blackbox(net).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..=50 {
        let r = 0.6 + i as f64 * 0.02;
        for j in 0..=60 {
            let a = -3.0 + j as f64 * 0.1;
            worst = worst.max((drift_eval(&d, r, a).unwrap() - ppo(r, a)).abs());
        }
    }
    assert!(worst <= 0.05, "max grid error {worst}");
    for a in [-3.0, -0.1, 0.0, 2.5] {
        assert_eq!(drift_eval(&d, 1.0, a).unwrap(), 0.0);
    }
    let h = 1e-5;
    for a in [-2.0, -0.5, 0.5, 2.0] {
        let g = (drift_eval(&d, 1.0 + h, a).unwrap() - drift_eval(&d, 1.0 - h, a).unwrap()) / (2.0 * h);
        assert!(g.abs() <= 0.05, "dD/dr at identity = {g} for A = {a}");
    }
}

#[test]
fn lpo_features_by_hand() {
    let f = lpo_featurize(2.0, 3.0).unwrap();
    let l = 2f64.ln();
    let want = [-1.0, 1.0, -3.0, 3.0, l, 3.0 * l, 3.0 * l * l];
    for (a, b) in f.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(lpo_featurize(1.0, -7.0).unwrap(), [0.0, 0.0, -0.0, -0.0, 0.0, 0.0, 0.0]);
    assert!(matches!(lpo_featurize(0.0, 1.0), Err(metarl::Error::Domain(_))));
    assert!(lpo_featurize(-1.0, 1.0).is_err());
}

#[test]
fn momenta_unroll_five_steps() {
    let grads = [1.0, -2.0, 0.5, 0.0, 4.0];
    let mut st = OptState::new(1);
    for g in grads {
        update_momenta(&mut st, &[g]).unwrap();
    }
    for (k, b) in MOMENTUM_BETAS.iter().enumerate() {
        let mut m = 0.0;
        for g in grads {
            m = b * g + (1.0 - b) * m;
        }
        assert!((st.momenta[k][0] - m).abs() < 1e-15, "beta {b}");
    }
    assert!(update_momenta(&mut st, &[1.0, 2.0]).is_err());
}

#[test]
fn open_features_full_vector() {
    let m = [0.5, -0.25, 0.0, 2.0, -1.0, 1e-3];
    let f = open_featurize(0.7, -0.1, &m, 0.25, 0.5, 1.5, 1.0);
    let ls = |x: f64| ((x.abs() + 1e-8).ln(), if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 });
    let mut want = vec![0.7];
    let (a, b) = ls(-0.1);
    want.extend([a, b]);
    for x in m {
        let (a, b) = ls(x);
        want.extend([a, b]);
    }
    want.extend([0.25, 0.5, 1.5, 1.0]);
    assert_eq!(want.len(), OPEN_FEATURES);
    for (i, (x, y)) in f.iter().zip(&want).enumerate() {
        assert!((x - y).abs() < 1e-15, "feature {i}: {x} vs {y}");
    }
}

fn ctx_for(n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (vec![0.5; n], vec![1.0; n], vec![0.0; n])
}

#[test]
fn adam_rule_unrolls_like_reference() {
    let mut rule = UpdateRule::new(UpdateRuleKind::adam(0.01), 2).unwrap();
    let mut p = vec![0.3, -0.4];
    let mut reference = p.clone();
    let mut adam = Adam::new(2, 0.01);
    let (l, d, r) = ctx_for(2);
    let ctx = UpdateContext { t_p: 0.0, b_p: 0.0, l_p: &l, dorm: &d, rand: &r };
    for g in [[1.0, -1.0], [0.5, 2.0], [-3.0, 0.1]] {
        apply_update_rule(&mut rule, &mut p, &g, &ctx).unwrap();
        adam.step(&mut reference, &g);
    }
    for (a, b) in p.iter().zip(&reference) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn zero_network_optimizer_is_a_no_op() {
    for fs in [FeatureSet::OpenFf, FeatureSet::NoFeatures] {
        let net = MlpParams::zeros(fs.default_spec(8), true);
        let kind = UpdateRuleKind::LearnedBlackbox { net, feature_set: fs, output_scale: 1e-3, noise_scale: 0.0 };
        let mut rule = UpdateRule::new(kind, 3).unwrap();
        let mut p = vec![1.0, -2.0, 3.0];
        let (l, d, r) = ctx_for(3);
        let ctx = UpdateContext { t_p: 0.3, b_p: 0.1, l_p: &l, dorm: &d, rand: &r };
        apply_update_rule(&mut rule, &mut p, &[0.5, 0.5, -0.5], &ctx).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }
}

#[test]
fn learned_optimizer_ignores_parameter_order() {
    let fs = FeatureSet::OpenFf;
    let net = MlpParams::init(fs.default_spec(8), true, 1.0, &mut RngStream::new(3, 0));
    let kind = UpdateRuleKind::LearnedBlackbox { net, feature_set: fs, output_scale: 1e-2, noise_scale: 0.1 };
    let mut rng = RngStream::new(4, 0);
    let n = 6;
    let p0: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let g: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let l: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let d: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let r: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let perm = [3, 0, 5, 1, 4, 2];
    let pick = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let run = |p: &[f64], g: &[f64], l: &[f64], d: &[f64], r: &[f64]| {
        let mut rule = UpdateRule::new(kind.clone(), n).unwrap();
        let mut p = p.to_vec();
        let ctx = UpdateContext { t_p: 0.2, b_p: 0.4, l_p: l, dorm: d, rand: r };
        apply_update_rule(&mut rule, &mut p, g, &ctx).unwrap();
        p
    };
    let a = run(&p0, &g, &l, &d, &r);
    let b = run(&pick(&p0), &pick(&g), &pick(&l), &pick(&d), &pick(&r));
    assert_eq!(pick(&a), b);
}

#[test]
fn symbolic_sgd_matches_sgd() {
    let expr = parse("lr * g", &Signature::optimizer()).unwrap();
    let mut a = UpdateRule::new(UpdateRuleKind::Symbolic { expr, lr: 0.1 }, 2).unwrap();
    let mut b = UpdateRule::new(UpdateRuleKind::Sgd { lr: 0.1 }, 2).unwrap();
    let (l, d, r) = ctx_for(2);
    let ctx = UpdateContext { t_p: 0.25, b_p: 0.0, l_p: &l, dorm: &d, rand: &r };
    let (mut pa, mut pb) = (vec![1.0, 2.0], vec![1.0, 2.0]);
    apply_update_rule(&mut a, &mut pa, &[0.5, -1.0], &ctx).unwrap();
    apply_update_rule(&mut b, &mut pb, &[0.5, -1.0], &ctx).unwrap();
    assert_eq!(pa, pb);
    assert_eq!(pa, vec![1.0 - 0.075 * 0.5, 2.0 + 0.075]);
}

#[test]
fn layer_proportions_span_zero_to_one() {
    let spec = MlpSpec::new(vec![2, 3, 3, 1], Activation::Tanh, Activation::Identity).unwrap();
    let p = MlpParams::zeros(spec, true);
    let lp = layer_proportions(&p);
    let slots = p.layer_slots();
    assert!(lp[slots[0].weight_range()].iter().all(|v| *v == 0.0));
    assert!(lp[slots[1].weight_range()].iter().all(|v| *v == 0.5));
    assert!(lp[slots[2].weight_range()].iter().all(|v| *v == 1.0));
}

#[test]
fn symbolic_drift_must_use_drift_inputs() {
    let e = parse("g * 2", &Signature::optimizer()).unwrap();
    assert!(DriftFunction::symbolic(e).is_err());
    let ok = parse("square(r - 1) * abs(A)", &Signature::drift()).unwrap();
    let d = DriftFunction::symbolic(ok).unwrap();
    assert_eq!(drift_eval(&d, 1.0, 2.0).unwrap(), 0.0);
    assert!((drift_eval(&d, 1.5, -2.0).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn artifacts_round_trip() {
    let dir = std::env::temp_dir().join(format!("artifact-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let net = init_lpo_near_ppo(&lpo_spec(), 0.2, &RngStream::new(1, 0)).unwrap();
    let opt = MlpParams::init(FeatureSet::NoFeatures.default_spec(4), true, 1.0, &mut RngStream::new(2, 0));
    let items = vec![
        Artifact::Drift(DriftFunction::ppo(0.2)),
        Artifact::Drift(DriftFunction::blackbox(net).unwrap()),
        Artifact::Drift(DriftFunction::symbolic(parse("relu((r - 1) * A)", &Signature::drift()).unwrap()).unwrap()),
        Artifact::Optimizer(UpdateRuleKind::adam(1e-3)),
        Artifact::Optimizer(UpdateRuleKind::learned(opt, FeatureSet::NoFeatures)),
        Artifact::Optimizer(UpdateRuleKind::Symbolic { expr: parse("lr * sgn(m_0_9)", &Signature::optimizer()).unwrap(), lr: 1e-3 }),
    ];
    for (i, a) in items.into_iter().enumerate() {
        let p = dir.join(format!("a{i}.json"));
        a.save(&p).unwrap();
        assert_eq!(Artifact::load(&p).unwrap(), a);
    }
}

fn random_drift_net(seed: u64) -> MlpParams {
    let spec = MlpSpec::new(vec![LPO_FEATURES, 16, 1], Activation::Relu, Activation::Relu).unwrap();
    MlpParams::init(spec, false, 1.0, &mut RngStream::new(seed, 0))
}

proptest! {
    #[test]
    fn blackbox_drift_meets_mirror_conditions(seed in any::<u64>(), r in 0.05f64..5.0, a in -5.0f64..5.0) {
        let d = DriftFunction::blackbox(random_drift_net(seed)).unwrap();
        prop_assert_eq!(drift_eval(&d, 1.0, a).unwrap(), 0.0);
        prop_assert!(drift_eval(&d, r, a).unwrap() >= 0.0);
    }

    #[test]
    fn dormancy_sums_to_width(seed in any::<u64>(), batch in 1usize..6, width in 1usize..10) {
        let mut rng = RngStream::new(seed, 0);
        let h: Vec<f64> = (0..batch * width).map(|_| rng.normal()).collect();
        let s = dormancy_scores(&h, batch, width).unwrap();
        prop_assert!((s.iter().sum::<f64>() - width as f64).abs() < 1e-9);
        prop_assert!(s.iter().all(|v| *v >= 0.0 && *v <= width as f64 + 1e-9));
    }

    #[test]
    fn no_features_is_open_prefix(p in -5.0f64..5.0, g in -5.0f64..5.0, m in prop::array::uniform6(-3.0f64..3.0), t in 0.0f64..1.0) {
        let full = open_featurize(p, g, &m, t, 0.3, 1.2, 0.5);
        prop_assert_eq!(&no_features_featurize(p, g, &m)[..], &full[..NO_FEATURES]);
    }

    #[test]
    fn ppo_drift_slopes(r in 0.3f64..3.0, a in -3.0f64..3.0) {
        let d = DriftFunction::ppo(0.2);
        let v = drift_eval(&d, r, a).unwrap();
        prop_assert!(v >= 0.0);
        if (r - 1.0).abs() < 0.2 - 1e-9 {
            prop_assert_eq!(v, 0.0);
            prop_assert_eq!(drift_dr(&d, r, a).unwrap(), 0.0);
        }
    }
}
