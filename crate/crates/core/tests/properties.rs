use ods_core::models::MlpClassifier;
use ods_core::numcore::{value_and_input_grad, Head};
use ods_core::ods::{ods_vector, DirectionVector};
use ods_core::rng::seeded;
use ods_core::whitebox::{
    in_ball, odi_init, run_cw_with_restarts, run_pgd_with_restarts, CwConfig, CwInit, InitKind,
    Norm, WhiteboxAttackConfig,
};
use ods_core::Tensor;
use proptest::prelude::*;
use rayon::prelude::*;

fn model_strategy() -> impl Strategy<Value = (MlpClassifier, usize, usize)> {
    (2usize..12, 1usize..12, 2usize..6, any::<u64>())
        .prop_map(|(d, h, c, seed)| (MlpClassifier::new(&[d, h, c], seed).unwrap(), d, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_and_gradients_stay_finite((m, d, c) in model_strategy(), seed in any::<u64>(), label in 0usize..6) {
        let x: Tensor = {
            use rand::Rng as _;
            let mut r = seeded(seed);
            Tensor::vector((0..d).map(|_| r.random_range(-1e6..1e6)).collect())
        };
        prop_assert!(m.forward(&x).unwrap().is_finite());
        let y = label % c;
        for head in [Head::cross_entropy(y), Head::margin(y), Head::linear(&vec![0.5; c])] {
            let (v, g) = value_and_input_grad(&m, &x, &head).unwrap();
            prop_assert!(v.is_finite());
            prop_assert!(g.wrt_input.is_finite());
        }
    }

    #[test]
    fn ods_is_unit_and_scale_free((m, d, c) in model_strategy(), seed in any::<u64>(), exp in -20i32..20) {
        use rand::Rng as _;
        let mut r = seeded(seed);
        let x = Tensor::vector((0..d).map(|_| r.random::<f64>()).collect());
        let w = DirectionVector::new((0..c).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        if let Ok(v) = ods_vector(&x, &m, &w) {
            prop_assert!((v.l2_norm() - 1.0).abs() <= 1e-9);
            let scaled = ods_vector(&x, &m, &w.scaled(2f64.powi(exp)).unwrap()).unwrap();
            prop_assert_eq!(scaled, v);
        }
    }

    #[test]
    fn starts_and_adversarials_stay_in_the_ball(
        (m, d, c) in model_strategy(),
        seed in any::<u64>(),
        eps in 0.01f64..0.5,
        l2 in any::<bool>(),
        kind in 0usize..3,
    ) {
        use rand::Rng as _;
        let mut r = seeded(seed);
        let x = Tensor::vector((0..d).map(|_| r.random::<f64>()).collect());
        let y = m.predict(&x).unwrap();
        let norm = if l2 { Norm::L2 } else { Norm::Linf };
        let init = match kind {
            0 => InitKind::Uniform,
            1 => InitKind::odi_default(eps),
            _ => InitKind::MultiTargeted { steps: 2, step_size: eps },
        };
        let cfg = WhiteboxAttackConfig::pgd(norm, eps, eps / 4.0, 5, 3).with_init(init);
        for restart in 0..3 {
            let (s, _) = odi_init(&x, y, &m, &cfg, restart, &mut r).unwrap();
            prop_assert!(in_ball(&s, &x, eps, norm, 1e-9));
            prop_assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let (res, trace) = run_pgd_with_restarts(&m, &x, y, &cfg, &mut r).unwrap();
        prop_assert!(in_ball(&res.adversarial, &x, eps, norm, 1e-9));
        prop_assert_eq!(res.success, trace.iter().any(|t| t.success));
        if res.success {
            prop_assert_ne!(m.predict(&res.adversarial).unwrap(), y);
        }
        let _ = c;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cw_success_is_misclassified_with_measured_norm((m, d, _c) in model_strategy(), seed in any::<u64>()) {
        use rand::Rng as _;
        let mut r = seeded(seed);
        let x = Tensor::vector((0..d).map(|_| r.random::<f64>()).collect());
        let y = m.predict(&x).unwrap();
        let mut cfg = CwConfig::standard(CwInit::Odi { steps: 2, step_size: 0.05 }, 0.05, 2);
        cfg.max_iterations = 40;
        cfg.search_steps = 5;
        let (res, _) = run_cw_with_restarts(&m, &x, y, &cfg, &mut r).unwrap();
        if res.success {
            prop_assert_ne!(m.predict(&res.adversarial).unwrap(), y);
            prop_assert!((res.perturbation_norm - res.adversarial.l2_distance(&x).unwrap()).abs() <= 1e-9);
        }
    }
}

#[test]
fn parallel_restarts_match_sequential() {
    let m = MlpClassifier::new(&[10, 16, 4], 3).unwrap();
    let inputs: Vec<(Tensor, usize)> = (0..16)
        .map(|i| {
            let x = Tensor::vector(
                (0..10)
                    .map(|j| ((i * 7 + j * 3) % 11) as f64 / 10.0)
                    .collect(),
            );
            let y = m.predict(&x).unwrap();
            (x, y)
        })
        .collect();
    let cfg = WhiteboxAttackConfig::pgd(Norm::Linf, 0.2, 0.05, 10, 5)
        .with_init(InitKind::odi_default(0.2));
    let run = |i: usize| {
        let (x, y) = &inputs[i];
        run_pgd_with_restarts(&m, x, *y, &cfg, &mut seeded(i as u64)).unwrap()
    };
    let seq: Vec<_> = (0..inputs.len()).map(run).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let par: Vec<_> = pool.install(|| (0..inputs.len()).into_par_iter().map(run).collect());
    for ((a, ta), (b, tb)) in seq.iter().zip(&par) {
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }
}
