//! Risk and perimeter functionals, VaR and CVaR.
//!
//! Every functional is a weighted sum of per-atom terms. The terms are
//! computed in parallel, collected in atom order and summed pairwise, so
//! results are identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{HardSet, SoftClassifier};
use crate::error::{check_dim, invalid, Result};
use crate::measures::{
    expect_estimate, mass_estimate, Estimate, EstimatorConfig, EstimatorKind, LabeledDataset, PerturbationModel,
};
use crate::psi::Psi;
use crate::quad::pairwise_sum;
use crate::rng::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub value: f64,
    pub std_part: Option<f64>,
    pub per_part: Option<f64>,
    pub estimator: EstimatorKind,
    pub stderr: Option<f64>,
}

impl RiskReport {
    fn plain(value: f64, estimator: EstimatorKind, stderr: Option<f64>) -> Self {
        Self { value, std_part: None, per_part: None, estimator, stderr }
    }
}

/// Smallest `t` with `P[f > t] ≤ p`.
pub fn p_esssup(values: &[(f64, f64)], p: f64) -> Result<f64> {
    let dist = sorted_distribution(values)?;
    if !(0.0..1.0).contains(&p) {
        return Err(invalid(format!("level {p} outside [0, 1)")));
    }
    // tail[k] = weight strictly above dist[k].0, accumulated from the top
    let mut above = 0.0;
    let mut best = dist[dist.len() - 1].0;
    for &(v, w) in dist.iter().rev() {
        if above <= p {
            best = v;
        } else {
            break;
        }
        above += w;
    }
    Ok(best)
}

/// `CVaR_p(f) = inf_α α + E[(f - α)_+] / p`.
pub fn cvar(values: &[(f64, f64)], p: f64) -> Result<f64> {
    Ok(cvar_with_alpha(values, p)?.0)
}

/// CVaR together with its minimising `α`; ties go to the largest `α`.
pub fn cvar_with_alpha(values: &[(f64, f64)], p: f64) -> Result<(f64, f64)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("CVaR level {p} outside (0, 1)")));
    }
    let dist = sorted_distribution(values)?;
    // the objective is convex and piecewise linear with kinks at the data
    // values, so scanning them finds the minimum
    let (mut sw, mut swv) = (0.0, 0.0);
    let mut best = (f64::INFINITY, f64::NAN);
    for &(v, w) in dist.iter().rev() {
        let zeta = v + (swv - v * sw) / p;
        if zeta < best.0 {
            best = (zeta, v);
        }
        sw += w;
        swv += w * v;
    }
    Ok(best)
}

/// Distinct values in increasing order with merged weights.
fn sorted_distribution(values: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(invalid("empty distribution"));
    }
    if values.iter().any(|(v, w)| !v.is_finite() || !(*w >= 0.0)) {
        return Err(invalid("values must be finite with non-negative weights"));
    }
    let total: f64 = values.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("weights sum to {total}, expected 1")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for (v, w) in sorted {
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => out.push((v, w)),
        }
    }
    Ok(out)
}

fn check_set(ds: &LabeledDataset, set: &HardSet) -> Result<()> {
    set.validate()?;
    if let Some(d) = set.dim() {
        check_dim(ds.d, d)?;
    }
    Ok(())
}

fn check_soft(ds: &LabeledDataset, u: &SoftClassifier) -> Result<()> {
    u.validate()?;
    if let Some(d) = u.dim() {
        check_dim(ds.d, d)?;
    }
    Ok(())
}

fn check_model(ds: &LabeledDataset, pm: &PerturbationModel) -> Result<()> {
    pm.validate()?;
    check_dim(ds.d, pm.dim())
}

/// Per-atom masses of `A` and `Aᶜ`; atom `i` draws from stream `i`.
pub fn atom_masses(
    ds: &LabeledDataset,
    pm: &PerturbationModel,
    set: &HardSet,
    cfg: &EstimatorConfig,
) -> Result<Vec<Estimate>> {
    check_set(ds, set)?;
    check_model(ds, pm)?;
    (0..ds.len())
        .into_par_iter()
        .map(|i| mass_estimate(pm, &ds.x[i], set, cfg, i as u64))
        .collect()
}

/// Per-atom `E[u]` and `E[1 - u]`.
pub fn atom_expectations(
    ds: &LabeledDataset,
    pm: &PerturbationModel,
    u: &SoftClassifier,
    cfg: &EstimatorConfig,
) -> Result<Vec<Estimate>> {
    check_soft(ds, u)?;
    check_model(ds, pm)?;
    (0..ds.len())
        .into_par_iter()
        .map(|i| expect_estimate(pm, &ds.x[i], u, cfg, i as u64))
        .collect()
}

/// Mass on the wrong side of the boundary for atom `i`.
fn wrong_mass(y: u8, e: &Estimate) -> f64 {
    if y == 0 {
        e.inside
    } else {
        e.outside
    }
}

fn worst_kind(masses: &[Estimate]) -> EstimatorKind {
    masses.iter().map(|e| e.kind).fold(EstimatorKind::Exact, EstimatorKind::worst)
}

/// Propagated standard error of `Σ w Ψ(q)`; a rough diagnostic that treats
/// atoms as independent and Ψ as locally linear.
fn psi_stderr(terms: impl Iterator<Item = (f64, f64, f64)>, psi: &Psi) -> f64 {
    terms
        .map(|(w, q, se)| {
            let hi = psi.apply((q + se).min(1.0));
            let lo = psi.apply((q - se).max(0.0));
            let s = w * 0.5 * (hi - lo);
            s * s
        })
        .sum::<f64>()
        .sqrt()
}

fn stderr_of(kind: EstimatorKind, value: f64) -> Option<f64> {
    matches!(kind, EstimatorKind::MonteCarlo).then_some(value)
}

/// `Σ w_i |1_A(x_i) - y_i|`.
pub fn risk_std(ds: &LabeledDataset, set: &HardSet) -> Result<RiskReport> {
    check_set(ds, set)?;
    let terms: Vec<f64> = (0..ds.len())
        .map(|i| if set.contains(&ds.x[i]) != (ds.y[i] == 1) { ds.w[i] } else { 0.0 })
        .collect();
    Ok(RiskReport::plain(pairwise_sum(&terms), EstimatorKind::Exact, None))
}

/// `Σ w_i |u(x_i) - y_i|`.
pub fn soft_risk_std(ds: &LabeledDataset, u: &SoftClassifier) -> Result<f64> {
    check_soft(ds, u)?;
    let terms: Vec<f64> = (0..ds.len()).map(|i| ds.w[i] * (u.eval(&ds.x[i]) - ds.y[i] as f64).abs()).collect();
    Ok(pairwise_sum(&terms))
}

/// Adversarial risk with open `eps`-balls. Sets without a closed-form ball
/// test fall back to a sampled supremum over `cfg.mc_samples` draws, which
/// can only under-estimate and is tagged as a lower bound.
pub fn risk_adv(ds: &LabeledDataset, set: &HardSet, eps: f64, cfg: &EstimatorConfig) -> Result<RiskReport> {
    check_set(ds, set)?;
    if !(eps > 0.0) {
        return Err(invalid("adversarial radius must be positive"));
    }
    let ball = PerturbationModel::uniform_ball(ds.d, eps);
    let terms = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let x = &ds.x[i];
            let exact = if ds.y[i] == 0 { set.ball_meets(x, eps) } else { set.ball_meets_complement(x, eps) };
            match exact {
                Some(hit) => (if hit { ds.w[i] } else { 0.0 }, EstimatorKind::Analytic),
                None => {
                    let wrong = |z: &[f64]| set.contains(z) != (ds.y[i] == 1);
                    let mut draws = RngState::new(cfg.seed, i as u64).draws();
                    let hit = wrong(x)
                        || (0..cfg.mc_samples as u64).any(|k| {
                            let z = crate::measures::sample_one(&ball, x, draws.at(k));
                            wrong(&z)
                        });
                    (if hit { ds.w[i] } else { 0.0 }, EstimatorKind::McSupLowerBound)
                }
            }
        })
        .collect::<Vec<_>>();
    let kind = terms.iter().map(|t| t.1).fold(EstimatorKind::Exact, EstimatorKind::worst);
    let values: Vec<f64> = terms.iter().map(|t| t.0).collect();
    Ok(RiskReport::plain(pairwise_sum(&values), kind, None))
}

/// `∫_{Aᶜ} Ψ(m_x(A)) dρ0 + ∫_A Ψ(m_x(Aᶜ)) dρ1`.
pub fn probper_psi(
    ds: &LabeledDataset,
    set: &HardSet,
    psi: &Psi,
    pm: &PerturbationModel,
    cfg: &EstimatorConfig,
) -> Result<RiskReport> {
    psi.validate()?;
    let masses = atom_masses(ds, pm, set, cfg)?;
    Ok(perimeter_from_masses(ds, set, psi, &masses))
}

fn perimeter_from_masses(ds: &LabeledDataset, set: &HardSet, psi: &Psi, masses: &[Estimate]) -> RiskReport {
    let correct: Vec<bool> = (0..ds.len()).map(|i| set.contains(&ds.x[i]) == (ds.y[i] == 1)).collect();
    let terms: Vec<f64> = (0..ds.len())
        .map(|i| if correct[i] { ds.w[i] * psi.apply(wrong_mass(ds.y[i], &masses[i])) } else { 0.0 })
        .collect();
    let kind = worst_kind(masses);
    let se = psi_stderr(
        (0..ds.len()).filter(|&i| correct[i]).map(|i| (ds.w[i], wrong_mass(ds.y[i], &masses[i]), masses[i].stderr)),
        psi,
    );
    RiskReport::plain(pairwise_sum(&terms), kind, stderr_of(kind, se))
}

/// `Risk_std(A) + ProbPer_Ψ(A)`.
pub fn probrisk_psi(
    ds: &LabeledDataset,
    set: &HardSet,
    psi: &Psi,
    pm: &PerturbationModel,
    cfg: &EstimatorConfig,
) -> Result<RiskReport> {
    let std = risk_std(ds, set)?;
    let per = probper_psi(ds, set, psi, pm, cfg)?;
    Ok(RiskReport {
        value: std.value + per.value,
        std_part: Some(std.value),
        per_part: Some(per.value),
        estimator: per.estimator,
        stderr: per.stderr,
    })
}

/// `Σ w_i max{ℓ(1_A(x_i), y_i), Ψ(wrong mass)}`, the sample-wise maximum
/// form of `ProbRisk_Ψ`.
pub fn probrisk_psi_max_form(
    ds: &LabeledDataset,
    set: &HardSet,
    psi: &Psi,
    pm: &PerturbationModel,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    psi.validate()?;
    let masses = atom_masses(ds, pm, set, cfg)?;
    let terms: Vec<f64> = (0..ds.len())
        .map(|i| {
            let loss: f64 = if set.contains(&ds.x[i]) == (ds.y[i] == 1) { 0.0 } else { 1.0 };
            ds.w[i] * loss.max(psi.apply(wrong_mass(ds.y[i], &masses[i])))
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// `Σ w_i max{ℓ(1_A(x_i), y_i), CVaR_p(ℓ(1_A(x'), y_i); x' ∼ m_{x_i})}`.
pub fn probrisk_cvar_form(
    ds: &LabeledDataset,
    set: &HardSet,
    p: f64,
    pm: &PerturbationModel,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let masses = atom_masses(ds, pm, set, cfg)?;
    let terms = (0..ds.len())
        .map(|i| {
            let loss = if set.contains(&ds.x[i]) == (ds.y[i] == 1) { 0.0 } else { 1.0 };
            let q = wrong_mass(ds.y[i], &masses[i]);
            let right = if ds.y[i] == 0 { masses[i].outside } else { masses[i].inside };
            let c = cvar(&[(1.0, q), (0.0, right)], p)?;
            Ok(ds.w[i] * f64::max(loss, c))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

/// `∫ Ψ(m_x(A)) dρ0 + ∫ Ψ(m_x(Aᶜ)) dρ1`; the original probabilistically
/// robust risk for `Ψ = 1_{t > p}`.
pub fn risk_psi(
    ds: &LabeledDataset,
    set: &HardSet,
    psi: &Psi,
    pm: &PerturbationModel,
    cfg: &EstimatorConfig,
) -> Result<RiskReport> {
    psi.validate()?;
    let masses = atom_masses(ds, pm, set, cfg)?;
    let terms: Vec<f64> = (0..ds.len()).map(|i| ds.w[i] * psi.apply(wrong_mass(ds.y[i], &masses[i]))).collect();
    let kind = worst_kind(&masses);
    let se = psi_stderr(
        (0..ds.len()).map(|i| (ds.w[i], wrong_mass(ds.y[i], &masses[i]), masses[i].stderr)),
        psi,
    );
    Ok(RiskReport::plain(pairwise_sum(&terms), kind, stderr_of(kind, se)))
}

/// `Σ_0 w (1 - u(x)) Ψ(E[u]) + Σ_1 w u(x) Ψ(E[1 - u])`.
pub fn probj_psi(
    ds: &LabeledDataset,
    u: &SoftClassifier,
    psi: &Psi,
    pm: &PerturbationModel,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    psi.validate()?;
    let e = atom_expectations(ds, pm, u, cfg)?;
    let terms: Vec<f64> = (0..ds.len())
        .map(|i| {
            let v = u.eval(&ds.x[i]);
            let agree = if ds.y[i] == 0 { 1.0 - v } else { v };
            ds.w[i] * agree * psi.apply(wrong_mass(ds.y[i], &e[i]))
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// `∫_0^1 ProbPer_Ψ({u > t}) dt`.
///
/// Finitely valued classifiers (constants, indicators, grid functions) are
/// integrated exactly over their distinct levels; others use the midpoint
/// rule with `cfg.tv_levels` levels.
pub fn probtv_psi(
    ds: &LabeledDataset,
    u: &SoftClassifier,
    psi: &Psi,
    pm: &PerturbationModel,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    check_soft(ds, u)?;
    let levels = match finite_levels(u) {
        Some(values) => {
            let mut cuts = vec![0.0];
            cuts.extend(values.into_iter().filter(|v| *v > 0.0 && *v < 1.0));
            cuts.push(1.0);
            cuts.windows(2).map(|w| (w[0], w[1] - w[0])).collect::<Vec<_>>()
        }
        None => {
            let t = cfg.tv_levels;
            (0..t).map(|k| ((k as f64 + 0.5) / t as f64, 1.0 / t as f64)).collect()
        }
    };
    let terms = levels
        .iter()
        .map(|&(t, dt)| {
            let set = superlevel(u, t, true);
            Ok(dt * probper_psi(ds, &set, psi, pm, cfg)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

/// `{u > t}` or `{u ≥ t}` as a set.
pub fn superlevel(u: &SoftClassifier, t: f64, strict: bool) -> HardSet {
    let set = HardSet::Superlevel { classifier: Box::new(u.clone()), level: t, strict };
    set.resolve_superlevel().unwrap_or(set)
}

/// Sorted distinct values of a finitely valued classifier, including the
/// value 0 taken outside a grid box.
fn finite_levels(u: &SoftClassifier) -> Option<Vec<f64>> {
    let mut vals = match u {
        SoftClassifier::Constant { value } => vec![*value],
        SoftClassifier::Indicator { .. } => vec![0.0, 1.0],
        SoftClassifier::GridFunction { values, .. } => {
            let mut v = values.clone();
            v.push(0.0);
            v
        }
        _ => return None,
    };
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    Some(vals)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftRiskKind {
    /// `S_Ψ(u) = ∫ Ψ(E[u]) dρ0 + ∫ Ψ(E[1 - u]) dρ1`.
    SPsi,
    /// `E|u - y| + ProbJ_Ψ(u)`.
    ProbSRisk,
}

pub fn soft_risk_psi(
    ds: &LabeledDataset,
    u: &SoftClassifier,
    psi: &Psi,
    pm: &PerturbationModel,
    cfg: &EstimatorConfig,
    kind: SoftRiskKind,
) -> Result<f64> {
    match kind {
        SoftRiskKind::SPsi => {
            psi.validate()?;
            let e = atom_expectations(ds, pm, u, cfg)?;
            let terms: Vec<f64> = (0..ds.len()).map(|i| ds.w[i] * psi.apply(wrong_mass(ds.y[i], &e[i]))).collect();
            Ok(pairwise_sum(&terms))
        }
        SoftRiskKind::ProbSRisk => Ok(soft_risk_std(ds, u)? + probj_psi(ds, u, psi, pm, cfg)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{GridMask, GridShape};

    fn cfg() -> EstimatorConfig {
        EstimatorConfig::default()
    }

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn var_examples() {
        let ind = [(1.0, 0.3), (0.0, 0.7)];
        assert_eq!(p_esssup(&ind, 0.5).unwrap(), 0.0);
        assert_eq!(p_esssup(&ind, 0.2).unwrap(), 1.0);
        // P[f > 2] = 0.8 > 0.15, so the 0.15-quantile from above is 3
        let v = [(1.0, 0.1), (2.0, 0.1), (3.0, 0.8)];
        assert_eq!(p_esssup(&v, 0.15).unwrap(), 3.0);
        assert_eq!(p_esssup(&v, 0.85).unwrap(), 2.0);
        assert!(p_esssup(&[], 0.1).is_err());
    }

    #[test]
    fn cvar_examples() {
        assert!(approx(cvar(&[(1.0, 0.3), (0.0, 0.7)], 0.5).unwrap(), 0.6));
        assert_eq!(cvar(&[(1.0, 0.6), (0.0, 0.4)], 0.5).unwrap(), 1.0);
        // ζ(0) = ζ(1) = 1.5, ζ(2) = 2
        let (c, a) = cvar_with_alpha(&[(0.0, 0.5), (1.0, 0.25), (2.0, 0.25)], 0.5).unwrap();
        assert!(approx(c, 1.5));
        assert_eq!(a, 1.0);
        assert!(cvar(&[(1.0, 1.0)], 1.0).is_err());
    }

    #[test]
    fn cvar_bounds_var() {
        let v = [(0.2, 0.1), (0.5, 0.3), (0.9, 0.4), (1.3, 0.2)];
        for &p in &[0.05, 0.2, 0.5, 0.9] {
            assert!(cvar(&v, p).unwrap() >= p_esssup(&v, p).unwrap());
        }
    }

    fn two_point() -> LabeledDataset {
        LabeledDataset::new(2, vec![vec![0.0, 0.0], vec![3.0, 0.0]], vec![0, 1], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn standard_risk_examples() {
        let ds = two_point();
        let split = HardSet::half_space(vec![1.0, 0.0], 1.5).unwrap();
        assert_eq!(risk_std(&ds, &split).unwrap().value, 0.0);
        assert_eq!(risk_std(&ds, &HardSet::Full).unwrap().value, 0.5);
        assert_eq!(risk_adv(&ds, &split, 1.0, &cfg()).unwrap().value, 0.0);
        assert_eq!(risk_adv(&ds, &HardSet::Full, 1.0, &cfg()).unwrap().value, 0.5);
    }

    #[test]
    fn perimeter_of_trivial_sets_vanishes() {
        let ds = two_point();
        let pm = PerturbationModel::uniform_ball(2, 1.0);
        let psi = Psi::cvar_ramp(0.3).unwrap();
        assert_eq!(probper_psi(&ds, &HardSet::Empty, &psi, &pm, &cfg()).unwrap().value, 0.0);
        assert_eq!(probper_psi(&ds, &HardSet::Full, &psi, &pm, &cfg()).unwrap().value, 0.0);
    }

    #[test]
    fn identity_perimeter_matches_segment_areas() {
        // balls of radius 1 around 0 and 1.5 overlap; split at x = 0.75
        let ds = LabeledDataset::new(2, vec![vec![0.0, 0.0], vec![1.5, 0.0]], vec![0, 1], vec![0.5, 0.5]).unwrap();
        let pm = PerturbationModel::uniform_ball(2, 1.0);
        let a = HardSet::half_space(vec![1.0, 0.0], 0.75).unwrap();
        let got = probper_psi(&ds, &a, &Psi::Identity, &pm, &cfg()).unwrap().value;
        let t: f64 = 0.75;
        let seg = (t.acos() - t * (1.0 - t * t).sqrt()) / std::f64::consts::PI;
        assert!(approx(got, seg), "{got} vs {seg}");
    }

    #[test]
    fn soft_functional_reductions() {
        let ds = two_point();
        let pm = PerturbationModel::uniform_ball(2, 2.0);
        let one = SoftClassifier::Constant { value: 1.0 };
        let psi = Psi::cvar_ramp(0.4).unwrap();
        assert_eq!(probj_psi(&ds, &one, &psi, &pm, &cfg()).unwrap(), 0.0);
        let half = SoftClassifier::Constant { value: 0.5 };
        assert!(approx(probj_psi(&ds, &half, &Psi::Identity, &pm, &cfg()).unwrap(), 0.25));
        let zero = SoftClassifier::Constant { value: 0.0 };
        let s = soft_risk_psi(&ds, &zero, &psi, &pm, &cfg(), SoftRiskKind::SPsi).unwrap();
        assert!(approx(s, 0.5));
    }

    #[test]
    fn probtv_exact_levels() {
        let shape = GridShape::new(vec![-1.0], vec![2.0], vec![3]).unwrap();
        let ds = LabeledDataset::uniform(1, vec![vec![-0.5], vec![0.5], vec![1.5]], vec![0, 1, 1]).unwrap();
        let pm = PerturbationModel::uniform_ball(1, 0.8);
        let u = SoftClassifier::GridFunction { shape: shape.clone(), values: vec![0.0, 0.5, 1.0] };
        let psi = Psi::cvar_ramp(0.5).unwrap();
        let tv = probtv_psi(&ds, &u, &psi, &pm, &cfg()).unwrap();
        let mask = |bits: Vec<bool>| HardSet::GridMask(GridMask::new(shape.clone(), bits).unwrap());
        let upper = probper_psi(&ds, &mask(vec![false, true, true]), &psi, &pm, &cfg()).unwrap().value;
        let top = probper_psi(&ds, &mask(vec![false, false, true]), &psi, &pm, &cfg()).unwrap().value;
        assert!(approx(tv, 0.5 * upper + 0.5 * top));
    }
}
