use jtame::inflation::{
    build_profile_negative, build_profile_trivial, class_shift, omega_f, positive_case_bound, sufficient_condition, verify_tameness,
    BundleCase, EpsilonPair, ModelGrid, NormalModel,
};
use jtame::jet_extension::{check_section, extend_section, random_normal_jet, TubeGrid};
use jtame::linalg::{Mat4, Vec4};
use jtame::linear_isotopy::{lemma_step_bound, time_partition, STEP_SAFETY};
use jtame::model::AcsFamily;
use jtame::pipeline::{stability_check, upsilon, DiffState};
use jtame::linear_core::AcsMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Log grid from `inner` out to `r_max`, 40 radii per decade.
fn compatible(case: BundleCase, r_max: f64, inner: f64) -> NormalModel {
    let ratio = (inner / r_max).min(1e-6);
    let n_r = ((-ratio.log10()) * 40.0).ceil() as usize;
    let grid = ModelGrid { n_r, n_theta: 4, n_z: 2, r_min_ratio: ratio };
    NormalModel::new(case, r_max, grid, AcsFamily::constant(0.0, 0.0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trivial_profile_invariants(t in 0.1f64..30.0, e1 in 0.05f64..0.9, e2 in 0.1f64..3.0, valid in 0.1f64..1.0) {
        let eps = EpsilonPair::new(e1, e2, valid).unwrap();
        let limit = (1.0 - e1) / e2;
        let (p, support) = match build_profile_trivial(t, &eps) {
            Ok(v) => v,
            Err(e) => {
                // Only targets needing a plateau beyond f64 range may fail.
                prop_assert!(t > std::f64::consts::PI * limit * limit * 100.0, "{}", e);
                return Ok(());
            }
        };
        prop_assert!(support <= valid);
        for s in &p.samples {
            prop_assert!(s.f >= 1.0 - 1e-12);
            prop_assert!(s.f * s.r * s.r < limit * limit);
        }
        prop_assert_eq!(p.eval(support).0, 1.0);
        prop_assert_eq!(p.eval(1.5 * support).0, 1.0);
        let model = compatible(BundleCase::Trivial, support, p.samples[0].r);
        let shift = class_shift(&p, &model);
        prop_assert!((shift - t).abs() <= 0.01 * t, "{} vs {}", shift, t);
        let rep = verify_tameness(&omega_f(&model, &p).unwrap(), &model, &eps);
        prop_assert!(rep.tame());
        prop_assert!(rep.sufficient_holds(), "{}", rep.sufficient_min);
    }

    #[test]
    fn negative_profile_invariants(m in 1u32..5, frac in 0.01f64..0.99, e1 in 0.05f64..0.8, e2 in 0.1f64..2.0) {
        let mp = frac / m as f64;
        let eps = EpsilonPair::new(e1, e2, 1.0).unwrap();
        let p = build_profile_negative(m, mp, &eps).unwrap();
        let c = p.log_slope().unwrap();
        prop_assert_eq!(p.head, mp);
        prop_assert!(p.non_increasing);
        prop_assert!(p.samples.windows(2).all(|w| w[1].f <= w[0].f));
        for s in &p.samples {
            prop_assert!(-s.f_prime * s.r <= c * (1.0 + 1e-12));
            if s.r <= p.support_radius {
                prop_assert!(e2 * (s.r * s.r + c).sqrt() < 1.0 - e1);
            }
        }
        let case = BundleCase::Negative(m);
        let model = compatible(case, p.support_radius * 1.05, p.samples[0].r);
        let field = omega_f(&model, &p).unwrap();
        for c in &field.shells {
            prop_assert!(sufficient_condition(case, c, &eps) > 0.0);
            prop_assert!(c.a > 0.0 && c.a <= 1.0 && c.b >= 1.0);
        }
        prop_assert!(verify_tameness(&field, &model, &eps).tame());
        prop_assert!(build_profile_negative(m, 1.0 / m as f64, &eps).is_err());
    }

    #[test]
    fn positive_bound_is_monotone(m in 1u32..6, a in 0.01f64..0.98, gap in 0.001f64..0.5) {
        let b = (a + gap).min(0.999);
        prop_assert!(positive_case_bound(m, b) < positive_case_bound(m, a));
        prop_assert!(positive_case_bound(m + 1, a) < positive_case_bound(m, a));
    }

    #[test]
    fn partition_respects_the_step_bound(n in 0.01f64..1.99, eps in 0.01f64..1.0) {
        let p = time_partition(n, eps).unwrap();
        let bound = lemma_step_bound(n, eps).unwrap();
        prop_assert_eq!(p.times[0], 0.0);
        prop_assert_eq!(*p.times.last().unwrap(), 0.5);
        for w in p.times.windows(2) {
            prop_assert!(w[1] - w[0] <= STEP_SAFETY * bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn extension_bounds_hold(seed in any::<u64>(), scale in 0.01f64..0.8, radius in 0.1f64..0.5) {
        let grid = TubeGrid::new(12, 11, 0.5);
        let jet = random_normal_jet(&mut ChaCha8Rng::seed_from_u64(seed), grid.n_z, scale);
        let sec = extend_section(&jet, radius, &grid).unwrap();
        let rep = check_section(&sec, &grid);
        prop_assert!(rep.bounds_hold(1e-9), "{:?}", rep);
        prop_assert_eq!(rep.on_z, 0.0);
        prop_assert_eq!(rep.outside_support, 0.0);
        prop_assert!(sec.support_radius() <= radius);
    }

    #[test]
    fn identity_state_samples_identity(z in -10.0f64..10.0, w1 in -1.0f64..1.0, w2 in -1.0f64..1.0) {
        let st = DiffState::identity(TubeGrid::new(8, 7, 0.5));
        let (d, j) = st.sample(&Vec4::new(z, 0.3, w1, w2));
        prop_assert!(d.norm() < 1e-15);
        prop_assert!((j - Mat4::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn unchanged_field_is_stable(a in -1.9f64..1.9, b in -1.9f64..1.9) {
        prop_assume!(a.hypot(b) < 1.95);
        let j = *AcsMatrix::block_skew(a, b).matrix();
        let field = vec![j; 5];
        let s = stability_check(&field, &field, 0.1);
        prop_assert!(s.passed);
        prop_assert_eq!(s.max_change, 0.0);
        prop_assert!((upsilon(&j) - (1.0 - 0.5 * a.hypot(b))).abs() < 1e-9);
    }
}
