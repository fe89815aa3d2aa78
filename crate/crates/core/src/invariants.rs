//! Randomised property suites over exactly evaluable instances.
//!
//! Instances use discrete perturbation clouds and grid classifiers, so the
//! functionals are finite sums and the inequalities can be checked to
//! rounding precision.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classifiers::{GridMask, GridShape, HardSet, SoftClassifier};
use crate::error::Result;
use crate::functionals::{
    cvar, probj_psi, probper_psi, probrisk_psi, probrisk_psi_max_form, probtv_psi, risk_adv, risk_psi, soft_risk_psi,
    superlevel, SoftRiskKind,
};
use crate::measures::{EstimatorConfig, LabeledDataset, PerturbationModel};
use crate::optimize::training::{per_sample_objective, TrainConfig, Variant};
use crate::psi::Psi;
use crate::rng::RngState;

const EXACT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

/// A random planar instance: points in the unit square, a discrete cloud of
/// radius below `epsilon`, and a 4×4 grid covering every perturbation.
pub struct Instance {
    pub ds: LabeledDataset,
    pub pm: PerturbationModel,
    pub epsilon: f64,
    pub shape: GridShape,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(3..9);
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let w: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
    let ds = LabeledDataset::normalized(2, x, y, w).expect("valid random dataset");
    let epsilon = rng.random_range(0.15..0.4);
    let k = rng.random_range(4..13);
    let raw: Vec<(Vec<f64>, f64)> = (0..k)
        .map(|_| {
            let r = epsilon * 0.99 * rng.random::<f64>().sqrt();
            let a = rng.random::<f64>() * std::f64::consts::TAU;
            (vec![r * a.cos(), r * a.sin()], 0.1 + rng.random::<f64>())
        })
        .collect();
    let total: f64 = raw.iter().map(|o| o.1).sum();
    let offsets = raw.into_iter().map(|(o, w)| (o, w / total)).collect();
    let pm = PerturbationModel::discrete_cloud(offsets).expect("valid random cloud");
    let shape = GridShape::new(vec![-0.5, -0.5], vec![1.5, 1.5], vec![4, 4]).expect("valid grid");
    Instance { ds, pm, epsilon, shape }
}

pub fn random_mask(rng: &mut ChaCha8Rng, shape: &GridShape) -> HardSet {
    let bits = (0..shape.n_cells()).map(|_| rng.random::<bool>()).collect();
    HardSet::GridMask(GridMask::new(shape.clone(), bits).expect("matching bit count"))
}

/// A random concave non-decreasing Ψ.
pub fn random_concave_psi(rng: &mut ChaCha8Rng) -> Psi {
    match rng.random_range(0..3) {
        0 => Psi::Identity,
        1 => Psi::CvarRamp { p: rng.random_range(0.05..1.0) },
        _ => {
            let t = rng.random_range(0.1..0.9);
            let v = rng.random_range(t..1.0);
            Psi::PiecewiseLinear { knots: vec![(0.0, 0.0), (t, v), (1.0, 1.0)] }
        }
    }
}

pub fn random_grid_function(rng: &mut ChaCha8Rng, shape: &GridShape) -> SoftClassifier {
    let values = (0..shape.n_cells()).map(|_| (rng.random_range(0..5) as f64) / 4.0).collect();
    SoftClassifier::GridFunction { shape: shape.clone(), values }
}

/// Random linear or one-hidden-layer classifier on `R^d`.
pub fn random_smooth(rng: &mut ChaCha8Rng, d: usize) -> SoftClassifier {
    let mut normal = |scale: f64| scale * (2.0 * rng.random::<f64>() - 1.0);
    if normal(1.0) > 0.0 {
        SoftClassifier::LinearSigmoid { weights: (0..d).map(|_| normal(4.0)).collect(), bias: normal(2.0) }
    } else {
        let hidden = 3;
        SoftClassifier::Mlp1 {
            input_dim: d,
            hidden,
            w1: (0..hidden * d).map(|_| normal(3.0)).collect(),
            b1: (0..hidden).map(|_| normal(1.0)).collect(),
            w2: (0..hidden).map(|_| normal(3.0)).collect(),
            b2: normal(1.0),
        }
    }
}

fn worst<F: FnMut(&mut ChaCha8Rng) -> Result<f64>>(cases: usize, seed: u64, tag: u64, mut f: F) -> Result<f64> {
    let mut rng = RngState::new(seed, 0).derive(tag).sequential();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..cases {
        worst = worst.max(f(&mut rng)?);
    }
    Ok(worst)
}

/// `CVaR_p` of an indicator of mass `q` equals `min{q/p, 1}` bit for bit.
pub fn check_cvar_indicator(cases: usize, seed: u64) -> Result<CheckResult> {
    let mut mismatches = 0;
    let mut rng = RngState::new(seed, 0).derive(1).sequential();
    for _ in 0..cases {
        let q: f64 = rng.random();
        let p: f64 = rng.random_range(1e-3..1.0);
        if cvar(&[(1.0, q), (0.0, 1.0 - q)], p)? != (q / p).min(1.0) {
            mismatches += 1;
        }
    }
    Ok(CheckResult::new("cvar_indicator_closed_form", mismatches == 0, format!("{mismatches} of {cases} differ")))
}

/// `P(A∪B) + P(A∩B) ≤ P(A) + P(B)` for concave non-decreasing Ψ.
pub fn check_submodularity(cases: usize, seed: u64) -> Result<CheckResult> {
    let cfg = EstimatorConfig::default();
    let w = worst(cases, seed, 2, |rng| {
        let inst = random_instance(rng);
        let psi = random_concave_psi(rng);
        let (a, b) = (random_mask(rng, &inst.shape), random_mask(rng, &inst.shape));
        let per = |s: &HardSet| probper_psi(&inst.ds, s, &psi, &inst.pm, &cfg).map(|r| r.value);
        let lhs = per(&HardSet::union(a.clone(), b.clone()))? + per(&HardSet::intersect(a.clone(), b.clone()))?;
        Ok(lhs - per(&a)? - per(&b)?)
    })?;
    Ok(CheckResult::new("probper_submodular", w <= EXACT_TOL, format!("max excess {w:e}")))
}

/// `Risk_{Ψ0} ≤ ProbRisk_{Ψ0} ≤ Risk_adv` for clouds inside the ε-ball.
pub fn check_ordering(cases: usize, seed: u64) -> Result<CheckResult> {
    let cfg = EstimatorConfig::default();
    let w = worst(cases, seed, 3, |rng| {
        let inst = random_instance(rng);
        let set = random_mask(rng, &inst.shape);
        let r0 = risk_psi(&inst.ds, &set, &Psi::EsssupZero, &inst.pm, &cfg)?.value;
        let pr = probrisk_psi(&inst.ds, &set, &Psi::EsssupZero, &inst.pm, &cfg)?.value;
        let adv = risk_adv(&inst.ds, &set, inst.epsilon, &cfg)?.value;
        Ok((r0 - pr).max(pr - adv))
    })?;
    Ok(CheckResult::new("risk_ordering", w <= EXACT_TOL, format!("max violation {w:e}")))
}

/// The sample-wise maximum form equals `Risk_std + ProbPer_Ψ`.
pub fn check_max_form(cases: usize, seed: u64) -> Result<CheckResult> {
    let cfg = EstimatorConfig::default();
    let w = worst(cases, seed, 4, |rng| {
        let inst = random_instance(rng);
        let set = random_mask(rng, &inst.shape);
        let psi = if rng.random::<bool>() { random_concave_psi(rng) } else { Psi::IndicatorGtP { p: rng.random() } };
        let add = probrisk_psi(&inst.ds, &set, &psi, &inst.pm, &cfg)?.value;
        let max = probrisk_psi_max_form(&inst.ds, &set, &psi, &inst.pm, &cfg)?;
        Ok((add - max).abs())
    })?;
    Ok(CheckResult::new("max_form_equals_additive", w <= EXACT_TOL, format!("max difference {w:e}")))
}

/// `ProbTV_Ψ(u) ≤ ProbJ_Ψ(u)` for concave non-decreasing Ψ.
pub fn check_tv_below_j(cases: usize, seed: u64) -> Result<CheckResult> {
    let cfg = EstimatorConfig::default();
    let w = worst(cases, seed, 5, |rng| {
        let inst = random_instance(rng);
        let psi = random_concave_psi(rng);
        let u = random_grid_function(rng, &inst.shape);
        Ok(probtv_psi(&inst.ds, &u, &psi, &inst.pm, &cfg)? - probj_psi(&inst.ds, &u, &psi, &inst.pm, &cfg)?)
    })?;
    Ok(CheckResult::new("probtv_below_probj", w <= EXACT_TOL, format!("max excess {w:e}")))
}

/// Some threshold set of `u` is nearly as good as `u` itself:
/// `min_k ProbRisk_Ψ({u ≥ t_k}) ≤ ProbSRisk_Ψ(u) + 2/levels` over midpoint
/// levels, for ramp Ψ.
pub fn check_threshold_domination(cases: usize, levels: usize, seed: u64) -> Result<CheckResult> {
    let cfg = EstimatorConfig::default();
    let slack = 2.0 / levels as f64;
    let w = worst(cases, seed, 6, |rng| {
        let inst = random_instance(rng);
        let psi = Psi::CvarRamp { p: rng.random_range(0.05..1.0) };
        let u = random_smooth(rng, 2);
        let soft = soft_risk_psi(&inst.ds, &u, &psi, &inst.pm, &cfg, SoftRiskKind::ProbSRisk)?;
        let mut best = f64::INFINITY;
        for k in 0..levels {
            let t = (k as f64 + 0.5) / levels as f64;
            best = best.min(probrisk_psi(&inst.ds, &superlevel(&u, t, false), &psi, &inst.pm, &cfg)?.value);
        }
        Ok(best - soft - slack)
    })?;
    Ok(CheckResult::new("threshold_domination", w <= 0.0, format!("max excess over slack {w:e}")))
}

/// Relative difference with a floor on the scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of `f` at `theta` with step `h`.
pub fn central_differences(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let mut a = theta.to_vec();
            let mut b = theta.to_vec();
            a[k] += h;
            b[k] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Parameter gradients of smooth classifiers and of the modified per-sample
/// objective (α and perturbations frozen) against central differences.
/// Cases closer than `1e-4` to a kink of the objective are redrawn.
pub fn check_gradients(cases: usize, seed: u64) -> Result<CheckResult> {
    let h = 1e-6;
    let mut rng = RngState::new(seed, 0).derive(7).sequential();
    let mut worst_err: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let d = rng.random_range(1..4);
        let u = random_smooth(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let theta = u.params();
        let (_, g) = u.eval_and_grad(&x);
        let fd = central_differences(&theta, h, |t| u.with_params(t).expect("same length").eval(&x));
        for (a, b) in g.iter().zip(&fd) {
            worst_err = worst_err.max(rel_err(*a, *b));
        }

        let y = rng.random_range(0..2u8);
        let perturbed: Vec<Vec<f64>> =
            (0..8).map(|_| x.iter().map(|v| v + 0.3 * (2.0 * rng.random::<f64>() - 1.0)).collect()).collect();
        let cfg = TrainConfig { p: rng.random_range(0.1..0.9), variant: Variant::Modified, ..TrainConfig::default() };
        let alpha = rng.random_range(0.0..2.0);
        let objective = |t: &[f64]| {
            let v = u.with_params(t).expect("same length");
            per_sample_objective(&v, &x, y, &perturbed, alpha, &cfg).0
        };
        let losses: Vec<f64> = perturbed
            .iter()
            .map(|z| crate::optimize::training::loss_and_grad(&u, z, y, cfg.loss).0)
            .collect();
        let (value, grad, _) = per_sample_objective(&u, &x, y, &perturbed, alpha, &cfg);
        let clean = crate::optimize::training::loss_and_grad(&u, &x, y, cfg.loss).0;
        let s = crate::optimize::training::cvar_estimate(&losses, alpha, cfg.p);
        if losses.iter().any(|l| (l - alpha).abs() < 1e-4) || (s - clean).abs() < 1e-4 {
            continue;
        }
        debug_assert_eq!(value, s.max(clean));
        let fd = central_differences(&theta, h, objective);
        for (a, b) in grad.iter().zip(&fd) {
            worst_err = worst_err.max(rel_err(*a, *b));
        }
        done += 1;
    }
    Ok(CheckResult::new("finite_difference_gradients", worst_err <= 1e-3, format!("max rel err {worst_err:e}")))
}

/// Monte Carlo estimates do not depend on the thread count.
pub fn check_thread_determinism(seed: u64) -> Result<CheckResult> {
    let ds = LabeledDataset::uniform(2, (0..16).map(|k| vec![k as f64 * 0.1, 0.0]).collect(), (0..16).map(|k| (k % 2) as u8).collect())?;
    let pm = PerturbationModel::uniform_ball(2, 0.3);
    let set = HardSet::disk(vec![0.7, 0.1], 0.4)?;
    let cfg = EstimatorConfig { mc_samples: 512, ..EstimatorConfig::with_seed(seed) };
    let run = || probper_psi(&ds, &set, &Psi::Identity, &pm, &cfg).map(|r| r.value);
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| crate::error::invalid(e.to_string()))?
        .install(run)?;
    let many = run()?;
    Ok(CheckResult::new(
        "thread_count_determinism",
        single.to_bits() == many.to_bits(),
        format!("1 thread {single}, pool {many}"),
    ))
}

/// `ρ0(A) + ρ1(A) = ρ(A)`.
pub fn check_label_split(cases: usize, seed: u64) -> Result<CheckResult> {
    let w = worst(cases, seed, 8, |rng| {
        let inst = random_instance(rng);
        let set = random_mask(rng, &inst.shape);
        let split = inst.ds.rho(&set, Some(0))? + inst.ds.rho(&set, Some(1))?;
        Ok((split - inst.ds.rho(&set, None)?).abs())
    })?;
    Ok(CheckResult::new("label_split", w <= EXACT_TOL, format!("max difference {w:e}")))
}

/// Every suite with `cases` random instances each.
pub fn run_all(cases: usize, seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_cvar_indicator(cases, seed)?,
        check_submodularity(cases, seed)?,
        check_ordering(cases, seed)?,
        check_max_form(cases, seed)?,
        check_tv_below_j(cases, seed)?,
        check_threshold_domination(cases.min(50), 64, seed)?,
        check_gradients(cases.min(100), seed)?,
        check_thread_determinism(seed)?,
        check_label_split(cases, seed)?,
    ])
}
