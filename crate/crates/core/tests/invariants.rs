use fraclab::dtn::local_dtn_matrix;
use fraclab::harness::config::{datum_values, DatumSpec, ExperimentConfig, ExperimentKind};
use fraclab::harness::presets;
use fraclab::harness::stability::{spearman, verdict};
use fraclab::metric::Metric;
use fraclab::runge::{cost_curve, generalized_svd, runge_approximate, smooth_step};
use fraclab::smallness::{carleman_weight_derivative, ExponentReport};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn small_layout() -> fraclab::grid::DomainLayout {
    presets::preset(ExperimentKind::Selftest).layout().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smooth_step_is_a_partition(t in -0.5f64..1.5) {
        let a = smooth_step(t);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + smooth_step(1.0 - t) - 1.0).abs() < 1e-14);
        prop_assert!(smooth_step(t + 1e-3) >= a);
    }

    #[test]
    fn carleman_derivative_stays_in_band(t in -1e8f64..1e8) {
        let d = carleman_weight_derivative(t);
        let band = std::f64::consts::PI / 20.0;
        prop_assert!(d < 0.0 && (d + 1.0).abs() < band);
    }

    #[test]
    fn exponent_is_scale_invariant(n1 in 0.01f64..1.0, g1 in 1.01f64..10.0, g2 in 1.01f64..10.0, c in 1e-6f64..1e6) {
        let base = ExponentReport::from_norms([n1, n1 * g1, n1 * g1 * g2]);
        let scaled = ExponentReport::from_norms([c * n1, c * n1 * g1, c * n1 * g1 * g2]);
        let (a, b) = (base.alpha.unwrap(), scaled.alpha.unwrap());
        prop_assert!(a > 0.0 && a < 1.0);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn spearman_is_bounded_and_monotone_maps_give_one(xs in prop::collection::vec(-1e3f64..1e3, 3..30)) {
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        prop_assert_eq!(spearman(&xs, &ys), 1.0);
        let zs: Vec<f64> = xs.iter().map(|x| (x * 0.37).sin()).collect();
        let r = spearman(&xs, &zs);
        prop_assert!(r.is_nan() || (-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let ys: Vec<f64> = sorted.iter().map(|x| (x / 100.0).exp()).collect();
        prop_assert!(sorted.len() < 2 || verdict(&sorted, &ys));
    }

    #[test]
    fn spectral_cutoff_respects_the_cost_bound(
        entries in prop::collection::vec(-1.0f64..1.0, 48),
        mass in prop::collection::vec(0.1f64..2.0, 8),
        v in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let t = DMatrix::from_vec(8, 6, entries);
        let gram = DMatrix::<f64>::identity(6, 6) * 2.0 + &t.transpose() * &t * 0.1;
        let svd = generalized_svd(&t, &mass, &gram).unwrap();
        prop_assume!(!svd.sigma.is_empty());
        let vnorm = v.iter().zip(&mass).map(|(a, m)| a * a * m).sum::<f64>().sqrt();
        for &tau in &svd.sigma {
            let r = runge_approximate(&v, &svd, tau).unwrap();
            prop_assert!(r.cost * tau <= vnorm * (1.0 + 1e-12));
            prop_assert!(r.achieved <= vnorm * (1.0 + 1e-12));
        }
        let mut taus: Vec<f64> = svd.sigma.iter().map(|s| s * 0.999).collect();
        taus.insert(0, svd.sigma[0] * 1.01);
        taus.dedup();
        if taus.windows(2).all(|w| w[1] < w[0]) {
            let c = cost_curve(&v, &svd, &taus).unwrap();
            prop_assert!(c.bound_holds && c.error_monotone && c.cost_monotone);
        }
    }

    #[test]
    fn config_roundtrips_for_any_seed_and_order(seed in any::<u64>(), s in 0.55f64..0.95) {
        let mut c = presets::preset(ExperimentKind::Runge);
        c.experiment.seed = seed;
        c.physics.s = s;
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn random_datum_depends_only_on_the_seed(seed in any::<u64>()) {
        let l = small_layout();
        let a = datum_values(&l, &DatumSpec::Random, seed);
        prop_assert_eq!(&a, &datum_values(&l, &DatumSpec::Random, seed));
        prop_assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn local_dtn_kills_constants(theta in 0.0f64..0.45) {
        let l = small_layout();
        let m = Metric::isotropic_bump(&l, theta, 0.5).unwrap();
        let d = local_dtn_matrix(&l, &m).unwrap();
        let r = d.apply(&vec![1.0; d.dim()]);
        prop_assert!(r.iter().all(|v| v.abs() < 1e-9));
        prop_assert!(d.symmetry_defect() < 1e-12);
    }
}
