use proptest::prelude::*;

use prl_core::classifiers::threshold;
use prl_core::functionals::{cvar, cvar_with_alpha, p_esssup, probper_psi, probrisk_psi, risk_std};
use prl_core::measures::{mass_estimate, prob_mass, sample_perturbations};
use prl_core::{EstimatorConfig, GridMask, GridShape, HardSet, LabeledDataset, PerturbationModel, Psi, RngState, SoftClassifier};

fn distribution() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..1.0, 0.01f64..1.0), 1..10).prop_map(|raw| {
        let total: f64 = raw.iter().map(|r| r.1).sum();
        raw.into_iter().map(|(v, w)| (v, w / total)).collect()
    })
}

fn cloud() -> impl Strategy<Value = PerturbationModel> {
    prop::collection::vec(((-0.3f64..0.3, -0.3f64..0.3), 0.1f64..1.0), 1..8).prop_map(|raw| {
        let total: f64 = raw.iter().map(|r| r.1).sum();
        PerturbationModel::discrete_cloud(raw.into_iter().map(|((a, b), w)| (vec![a, b], w / total)).collect()).unwrap()
    })
}

fn shape() -> GridShape {
    GridShape::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![4, 4]).unwrap()
}

fn mask() -> impl Strategy<Value = HardSet> {
    prop::collection::vec(any::<bool>(), 16).prop_map(|bits| HardSet::GridMask(GridMask::new(shape(), bits).unwrap()))
}

fn dataset() -> impl Strategy<Value = LabeledDataset> {
    prop::collection::vec(((-1.0f64..1.0, -1.0f64..1.0), 0u8..2, 0.1f64..1.0), 1..8).prop_map(|pts| {
        let x = pts.iter().map(|((a, b), _, _)| vec![*a, *b]).collect();
        let y = pts.iter().map(|p| p.1).collect();
        let w = pts.iter().map(|p| p.2).collect();
        LabeledDataset::normalized(2, x, y, w).unwrap()
    })
}

proptest! {
    #[test]
    fn cvar_lies_between_mean_and_max(values in distribution(), p in 0.01f64..1.0) {
        let c = cvar(&values, p).unwrap();
        let mean: f64 = values.iter().map(|(v, w)| v * w).sum();
        let max = values.iter().map(|v| v.0).fold(f64::MIN, f64::max);
        prop_assert!(c >= mean - 1e-12);
        prop_assert!(c <= max + 1e-12);
    }

    #[test]
    fn cvar_dominates_var(values in distribution(), p in 0.01f64..0.99) {
        prop_assert!(cvar(&values, p).unwrap() >= p_esssup(&values, p).unwrap() - 1e-12);
    }

    #[test]
    fn cvar_minimiser_attains_the_value(values in distribution(), p in 0.01f64..1.0) {
        let (c, alpha) = cvar_with_alpha(&values, p).unwrap();
        let at_alpha = alpha + values.iter().map(|(v, w)| w * (v - alpha).max(0.0)).sum::<f64>() / p;
        prop_assert!((c - at_alpha).abs() <= 1e-12);
    }

    #[test]
    fn cvar_is_nonincreasing_in_p(values in distribution(), p in 0.01f64..0.5, q in 0.5f64..1.0) {
        prop_assert!(cvar(&values, p).unwrap() >= cvar(&values, q).unwrap() - 1e-12);
    }

    #[test]
    fn cloud_masses_are_complementary(pm in cloud(), set in mask(), x in (-1.0f64..1.0, -1.0f64..1.0)) {
        let cfg = EstimatorConfig::default();
        let x = [x.0, x.1];
        let e = mass_estimate(&pm, &x, &set, &cfg, 0).unwrap();
        prop_assert!((e.inside + e.outside - 1.0).abs() <= 1e-12);
        let c = prob_mass(&pm, &x, &HardSet::complement(set.clone()), &cfg).unwrap();
        prop_assert!((e.inside - (1.0 - c)).abs() <= 1e-12);
    }

    #[test]
    fn label_masses_split_rho(ds in dataset(), set in mask()) {
        let total = ds.rho(&set, None).unwrap();
        prop_assert!((ds.rho(&set, Some(0)).unwrap() + ds.rho(&set, Some(1)).unwrap() - total).abs() <= 1e-12);
    }

    #[test]
    fn set_algebra_is_pointwise(a in mask(), b in mask(), x in (-1.2f64..1.2, -1.2f64..1.2)) {
        let x = [x.0, x.1];
        let (ia, ib) = (a.contains(&x), b.contains(&x));
        prop_assert_eq!(HardSet::union(a.clone(), b.clone()).contains(&x), ia || ib);
        prop_assert_eq!(HardSet::intersect(a.clone(), b.clone()).contains(&x), ia && ib);
        prop_assert_eq!(HardSet::complement(a).contains(&x), !ia);
    }

    #[test]
    fn probper_is_complement_symmetric_after_relabelling(ds in dataset(), pm in cloud(), set in mask(), p in 0.05f64..1.0) {
        // swapping labels and complementing the set leaves every term unchanged
        let cfg = EstimatorConfig::default();
        let psi = Psi::CvarRamp { p };
        let flipped = LabeledDataset::new(2, ds.x.clone(), ds.y.iter().map(|y| 1 - y).collect(), ds.w.clone()).unwrap();
        let a = probper_psi(&ds, &set, &psi, &pm, &cfg).unwrap().value;
        let b = probper_psi(&flipped, &HardSet::complement(set), &psi, &pm, &cfg).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn probrisk_is_nonincreasing_in_ramp_level(ds in dataset(), pm in cloud(), set in mask(), p in 0.05f64..0.5, q in 0.5f64..1.0) {
        let cfg = EstimatorConfig::default();
        let small = probrisk_psi(&ds, &set, &Psi::CvarRamp { p }, &pm, &cfg).unwrap().value;
        let large = probrisk_psi(&ds, &set, &Psi::CvarRamp { p: q }, &pm, &cfg).unwrap().value;
        let std = risk_std(&ds, &set).unwrap().value;
        prop_assert!(small >= large - 1e-12);
        prop_assert!(large >= std - 1e-12);
    }

    #[test]
    fn linear_threshold_matches_pointwise(w in (-3.0f64..3.0, -3.0f64..3.0), b in -1.0f64..1.0, t in 0.01f64..0.99, x in (-2.0f64..2.0, -2.0f64..2.0)) {
        let u = SoftClassifier::LinearSigmoid { weights: vec![w.0, w.1], bias: b };
        let x = [x.0, x.1];
        let set = threshold(&u, t, None).unwrap();
        let v = u.eval(&x);
        // skip points within rounding distance of the level
        prop_assume!((v - t).abs() > 1e-9);
        prop_assert_eq!(set.contains(&x), v >= t);
    }

    #[test]
    fn ball_draws_stay_in_the_ball(seed in any::<u64>(), eps in 0.05f64..2.0, d in 1usize..5) {
        let pm = PerturbationModel::uniform_ball(d, eps);
        let x = vec![0.5; d];
        let draws = sample_perturbations(&pm, &x, 64, RngState::new(seed, 3)).unwrap();
        for z in &draws {
            let r: f64 = z.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!(r <= eps);
        }
        let again = sample_perturbations(&pm, &x, 64, RngState::new(seed, 3)).unwrap();
        prop_assert_eq!(draws, again);
    }
}
