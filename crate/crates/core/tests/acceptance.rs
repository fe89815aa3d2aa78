//! Acceptance criteria. Run with
//! `cargo test -p prl-core --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

use std::time::{Duration, Instant};

use prl_core::asymptotics::{epsilon_sweep, sigma_psi, DensityField, SmoothSet2D};
use prl_core::classifiers::Classifier;
use prl_core::functionals::{cvar, probrisk_psi, risk_adv, risk_psi, risk_std};
use prl_core::generators::{generate, GeneratorSpec};
use prl_core::invariants::{
    central_differences, check_gradients, check_max_form, check_ordering, check_submodularity,
    check_threshold_domination, check_tv_below_j, rel_err, CheckResult,
};
use prl_core::optimize::oracle::gap_to_adv_nonincreasing;
use prl_core::optimize::{
    clean_accuracy, interpolation_sweep, patho_scan, prob_acc, train, GridProblem, Objective, SearchBudget,
    TrainConfig, Variant,
};
use prl_core::{
    DatasetDocument, EstimatorConfig, GridMask, GridShape, HardSet, LabeledDataset, PerturbationModel, Psi,
    RadialProfile, RngState, SoftClassifier,
};
use rand::Rng;

const SEED: u64 = 20240601;

type Criterion = (&'static str, Duration, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn from_checks(checks: &[CheckResult]) -> Outcome {
    let passed = checks.iter().all(|c| c.passed);
    let detail = checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    outcome(passed, detail)
}

fn doc(spec: GeneratorSpec) -> (DatasetDocument, LabeledDataset, PerturbationModel) {
    let doc = generate(&spec, SEED).unwrap();
    let ds = doc.dataset().unwrap();
    let pm = doc.perturbation.clone().unwrap();
    (doc, ds, pm)
}

fn three_point() -> GeneratorSpec {
    GeneratorSpec::named("three-point").unwrap()
}

/// Every 12-bit mask on the grid, evaluated through the generic functionals.
fn brute_force_min(ds: &LabeledDataset, shape: &GridShape, f: impl Fn(&LabeledDataset, &HardSet) -> f64) -> f64 {
    (0..1u64 << shape.n_cells())
        .map(|code| f(ds, &HardSet::GridMask(GridMask::from_code(shape.clone(), code))))
        .fold(f64::INFINITY, f64::min)
}

fn c1_exact_values() -> Outcome {
    let cfg = EstimatorConfig::default();
    let tol = 1e-12;
    let (d2, ds2, pm2) = doc(GeneratorSpec::named("two-point").unwrap());
    let a = &d2.reference_sets["A"];
    let pr = probrisk_psi(&ds2, a, &Psi::EsssupZero, &pm2, &cfg).unwrap().value;
    let r0 = risk_psi(&ds2, a, &Psi::EsssupZero, &pm2, &cfg).unwrap().value;

    let (d3, ds3, pm3) = doc(three_point());
    let tilde = &d3.reference_sets["tilde_A"];
    let pr_tilde = probrisk_psi(&ds3, tilde, &Psi::EsssupZero, &pm3, &cfg).unwrap().value;
    // the same value on a discrete cloud, where every mass is a finite sum
    let (_, ds3c, pm3c) = doc(match three_point() {
        GeneratorSpec::ThreePoint { x1, x2, x3, epsilon, .. } => {
            GeneratorSpec::ThreePoint { x1, x2, x3, epsilon, cloud_points: Some(40) }
        }
        _ => unreachable!(),
    });
    let pr_tilde_cloud = probrisk_psi(&ds3c, tilde, &Psi::EsssupZero, &pm3c, &cfg).unwrap().value;

    let eps = d3.params["epsilon"];
    let shape = d3.grid.clone().unwrap();
    let problem =
        GridProblem::new(&ds3, &pm3, &shape, Objective::RiskAdv, &Psi::Identity, eps, &cfg).unwrap();
    let oracle = problem.exhaustive().unwrap();
    let brute = brute_force_min(&ds3, &shape, |ds, s| risk_adv(ds, s, eps, &cfg).unwrap().value);

    let checks = [
        (pr - 0.5).abs() <= tol,
        r0.abs() <= tol,
        (pr_tilde - 0.2).abs() <= tol,
        (pr_tilde_cloud - 0.2).abs() <= tol,
        oracle.exhaustive && (oracle.value - 0.2).abs() <= tol,
        (brute - 0.2).abs() <= tol,
    ];
    outcome(
        checks.iter().all(|c| *c),
        format!(
            "two-point ProbRisk={pr} Risk={r0}; ProbRisk(Ã)={pr_tilde} (cloud {pr_tilde_cloud}); \
             min Risk_adv oracle={} brute force={brute}",
            oracle.value
        ),
    )
}

/// `min_α α + E[(f-α)₊]/p` over a grid of spacing `1e-4` covering `[0, 1]`.
fn cvar_grid_oracle(values: &[(f64, f64)], p: f64) -> f64 {
    (0..=10_000)
        .map(|k| {
            let a = k as f64 * 1e-4;
            a + values.iter().map(|(v, w)| w * (v - a).max(0.0)).sum::<f64>() / p
        })
        .fold(f64::INFINITY, f64::min)
}

fn c2_cvar() -> Outcome {
    let mut rng = RngState::new(SEED, 0).derive(2).sequential();
    let mut indicator_mismatch = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let q: f64 = rng.random();
        let p: f64 = rng.random_range(1e-3..=1.0);
        if cvar(&[(1.0, q), (0.0, 1.0 - q)], p).unwrap() != (q / p).min(1.0) {
            indicator_mismatch += 1;
        }
        let n = rng.random_range(1..=12);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let values: Vec<(f64, f64)> = raw.iter().map(|w| (rng.random::<f64>(), w / total)).collect();
        let exact = cvar(&values, p).unwrap();
        worst = worst.max((exact - cvar_grid_oracle(&values, p)).abs());
    }
    outcome(
        indicator_mismatch == 0 && worst <= 1e-4,
        format!("indicator mismatches {indicator_mismatch}/200; empirical vs α-grid max diff {worst:e}"),
    )
}

fn c3_structure() -> Outcome {
    let checks: Vec<CheckResult> = [
        check_submodularity(200, SEED),
        check_tv_below_j(200, SEED),
        check_ordering(200, SEED),
        check_max_form(200, SEED),
    ]
    .into_iter()
    .map(Result::unwrap)
    .collect();
    from_checks(&checks)
}

/// Kernel mass of `{z₁ ≥ t}` under the uniform unit disk.
fn segment(t: f64) -> f64 {
    ((t.acos()) - t * (1.0 - t * t).sqrt()) / std::f64::consts::PI
}

/// `2π · 2 ∫_0^1 Ψ(F(t)) dt` for the unit circle with unit densities,
/// by the midpoint rule.
fn disk_limit(psi: &Psi) -> f64 {
    let n = 200_000;
    let s: f64 = (0..n).map(|k| psi.apply(segment((k as f64 + 0.5) / n as f64))).sum::<f64>() / n as f64;
    4.0 * std::f64::consts::PI * s
}

fn c4_asymptotics() -> Outcome {
    let set = SmoothSet2D::Disk { center: [0.0, 0.0], radius: 1.0 };
    let field = DensityField::constant(1.0, 1.0);
    let mut passed = true;
    let mut detail = Vec::new();
    for psi in [Psi::Identity, Psi::CvarRamp { p: 0.5 }, Psi::IndicatorGtP { p: 0.25 }] {
        let row = epsilon_sweep(&set, &field, &psi, RadialProfile::Uniform, &[0.02]).unwrap()[0];
        let reference = disk_limit(&psi);
        let err = (row.scaled_per - reference).abs() / reference;
        passed &= err <= 0.05 && (row.limit - reference).abs() <= 1e-5 * reference;
        detail.push(format!("{psi:?}: scaled {:.6} limit {reference:.6} rel err {err:.2e}", row.scaled_per));
    }
    let identity = disk_limit(&Psi::Identity);
    let degenerate =
        epsilon_sweep(&set, &field, &Psi::IndicatorGtP { p: 0.5 }, RadialProfile::Uniform, &[0.02]).unwrap()[0];
    passed &= degenerate.scaled_per <= 0.05 * identity;
    detail.push(format!("IndicatorGtP(0.5): scaled {:.3e} vs bound {:.4}", degenerate.scaled_per, 0.05 * identity));
    outcome(passed, detail.join("; "))
}

fn c5_sigma() -> Outcome {
    let v = [1.0, 0.0];
    let one = sigma_psi(&Psi::IndicatorGtP { p: 0.0 }, RadialProfile::Uniform, 0, v).unwrap();
    let zeros: Vec<f64> = [0.5, 0.6, 0.75, 0.9, 0.99]
        .iter()
        .flat_map(|&p| {
            [0u8, 1].map(|side| sigma_psi(&Psi::IndicatorGtP { p }, RadialProfile::Uniform, side, v).unwrap())
        })
        .collect();
    let worst = zeros.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    outcome((one - 1.0).abs() <= 1e-8 && worst <= 1e-8, format!("σ(p=0) = {one}; max |σ(p≥0.5)| = {worst:e}"))
}

fn c6_interpolation() -> Outcome {
    let cfg = EstimatorConfig::default();
    let (d3, ds, pm) = doc(three_point());
    let eps = d3.params["epsilon"];
    let shape = d3.grid.clone().unwrap();
    let budget = SearchBudget::default();
    assert!(shape.n_cells() <= budget.exhaustive_max_cells);
    let p_list = [0.9, 0.5, 0.1, 0.01];
    let rows = interpolation_sweep(&ds, &pm, &p_list, &shape, eps, &budget, &cfg, RngState::new(SEED, 6)).unwrap();
    // independent enumeration through the generic functionals
    let brute: Vec<f64> = p_list
        .iter()
        .map(|&p| brute_force_min(&ds, &shape, |ds, s| probrisk_psi(ds, s, &Psi::CvarRamp { p }, &pm, &cfg).unwrap().value))
        .collect();
    let agree = rows.iter().zip(&brute).all(|(r, b)| (r.min_probrisk - b).abs() <= 1e-9);
    let adv = rows[0].min_risk_adv;
    let at_small = rows[3].min_probrisk;
    let monotone = gap_to_adv_nonincreasing(&rows, 1e-12);
    let large = interpolation_sweep(&ds, &pm, &[10.0], &shape, eps, &budget, &cfg, RngState::new(SEED, 7)).unwrap().remove(0);
    let std_min = brute_force_min(&ds, &shape, |ds, s| risk_std(ds, s).unwrap().value);
    let passed = agree
        && monotone
        && (adv - 0.2).abs() <= 1e-6
        && (at_small - adv).abs() <= 1e-6
        && (large.min_probrisk - std_min).abs() <= 0.1;
    let values: Vec<String> = rows.iter().map(|r| format!("p={}:{:.6}", r.p, r.min_probrisk)).collect();
    outcome(
        passed,
        format!(
            "min ProbRisk {}; brute force agrees {agree}; gap to Risk_adv={adv} nonincreasing {monotone}; \
             p=10: {:.6} vs min Risk_std {std_min}",
            values.join(" "),
            large.min_probrisk
        ),
    )
}

fn c7_training() -> Outcome {
    let (_, ds, _) = doc(GeneratorSpec::separable_mixture(500));
    let cfg = TrainConfig { variant: Variant::Modified, m: 20, t: 5, epochs: 50, ..TrainConfig::default() };
    let pm = PerturbationModel::uniform_ball(ds.d, cfg.epsilon);
    let u0 = SoftClassifier::LinearSigmoid { weights: vec![0.0; ds.d], bias: 0.0 };
    let trace = train(&ds, &u0, &pm, &cfg, SEED).unwrap();
    let c = Classifier::Soft(trace.final_classifier.clone());
    let clean = clean_accuracy(&ds, &c);
    let pacc = prob_acc(&ds, &c, &pm, 0.1, 200, RngState::new(SEED, 7)).unwrap();
    let objs: Vec<f64> = trace.epochs.iter().map(|e| e.objective).collect();
    let windows: Vec<f64> = objs.chunks(5).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    let monotone = windows.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        clean >= 0.95 && pacc >= 0.90 && monotone,
        format!(
            "clean accuracy {clean:.4}; ProbAcc(0.1) {pacc:.4}; window means {}",
            windows.iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn c8_pathology() -> Outcome {
    let cfg = EstimatorConfig::default();
    let (d, ds, pm) = doc(GeneratorSpec::named("spike").unwrap());
    let spike = &d.reference_sets["spike"];
    let p = d.params["p"];
    let psi = Psi::IndicatorGtP { p };
    let r_prob = risk_psi(&ds, spike, &psi, &pm, &cfg).unwrap().value;
    let modified = probrisk_psi(&ds, spike, &psi, &pm, &cfg).unwrap().value;
    let report = patho_scan(&ds, &Classifier::Hard(spike.clone()), &pm, 1000, 0.9, RngState::new(SEED, 8)).unwrap();
    let flagged: Vec<usize> = report.flagged.iter().map(|f| f.0).collect();
    let blue = (0..ds.len()).find(|&i| ds.y[i] == 0).unwrap();
    let passed = r_prob == 0.0 && modified > 0.0 && flagged == [blue];
    outcome(passed, format!("R_prob {r_prob}; modified ProbRisk {modified}; flagged {:?}", report.flagged))
}

fn c9_threshold() -> Outcome {
    from_checks(&[check_threshold_domination(50, 64, SEED).unwrap()])
}

fn c10_gradients() -> Outcome {
    let mut checks = vec![check_gradients(100, SEED).unwrap()];
    // piecewise-constant grid functions: the gradient is the cell indicator
    let shape = GridShape::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![3, 3]).unwrap();
    let mut rng = RngState::new(SEED, 10).sequential();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let values: Vec<f64> = (0..9).map(|_| rng.random_range(0.1..0.9)).collect();
        let u = SoftClassifier::GridFunction { shape: shape.clone(), values };
        let x = [rng.random::<f64>(), rng.random::<f64>()];
        let (_, g) = u.eval_and_grad(&x);
        let fd = central_differences(&u.params(), 1e-6, |t| u.with_params(t).unwrap().eval(&x));
        worst = g.iter().zip(&fd).fold(worst, |m, (a, b)| m.max(rel_err(*a, *b)));
    }
    checks.push(CheckResult { name: "grid_function_gradients".into(), passed: worst <= 1e-3, detail: format!("max rel err {worst:e}") });
    from_checks(&checks)
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("1 exact values", Duration::from_secs(1), c1_exact_values),
        ("2 cvar closed form", Duration::from_secs(5), c2_cvar),
        ("3 structural inequalities", Duration::from_secs(30), c3_structure),
        ("4 asymptotics", Duration::from_secs(120), c4_asymptotics),
        ("5 sigma constants", Duration::from_secs(1), c5_sigma),
        ("6 interpolation", Duration::from_secs(60), c6_interpolation),
        ("7 training", Duration::from_secs(120), c7_training),
        ("8 pathology", Duration::from_secs(5), c8_pathology),
        ("9 threshold domination", Duration::from_secs(30), c9_threshold),
        ("10 gradient checks", Duration::from_secs(10), c10_gradients),
    ];
    let mut failed = Vec::new();
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let ok = out.passed && in_time;
        println!(
            "{} criterion {name} ({:.2}s, limit {}s): {}",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            out.detail
        );
        if !ok {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
