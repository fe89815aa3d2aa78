//! Accuracy metrics under random perturbations and the pathological-point
//! scanner.
//!
//! ProbAcc counts a point as robustly correct when the empirical proportion
//! of misclassified perturbations is at most `p`. This makes ProbAcc
//! non-decreasing in `p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::Classifier;
use crate::error::{check_dim, invalid, Result};
use crate::measures::{sample_perturbations, LabeledDataset, PerturbationModel};
use crate::quad::pairwise_sum;
use crate::rng::RngState;

fn check(ds: &LabeledDataset, c: &Classifier, pm: &PerturbationModel, m: usize) -> Result<()> {
    c.validate()?;
    if let Some(d) = c.dim() {
        check_dim(ds.d, d)?;
    }
    check_dim(ds.d, pm.dim())?;
    if m == 0 {
        return Err(invalid("need at least one perturbation per point"));
    }
    Ok(())
}

/// Empirical proportion of correctly classified perturbations per atom;
/// atom `i` draws from `rng.derive(i)`.
pub fn correct_proportions(
    ds: &LabeledDataset,
    c: &Classifier,
    pm: &PerturbationModel,
    m: usize,
    rng: RngState,
) -> Result<Vec<f64>> {
    check(ds, c, pm, m)?;
    (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let draws = sample_perturbations(pm, &ds.x[i], m, rng.derive(i as u64))?;
            let ok = draws.iter().filter(|z| c.predict(z) == ds.y[i]).count();
            Ok(ok as f64 / m as f64)
        })
        .collect()
}

fn weighted_fraction(ds: &LabeledDataset, hit: impl Fn(usize) -> bool) -> f64 {
    let terms: Vec<f64> = (0..ds.len()).map(|i| if hit(i) { ds.w[i] } else { 0.0 }).collect();
    pairwise_sum(&terms)
}

pub fn clean_accuracy(ds: &LabeledDataset, c: &Classifier) -> f64 {
    weighted_fraction(ds, |i| c.predict(&ds.x[i]) == ds.y[i])
}

/// Weighted fraction of points whose misclassified-perturbation proportion
/// over `m` draws is at most `p`.
pub fn prob_acc(
    ds: &LabeledDataset,
    c: &Classifier,
    pm: &PerturbationModel,
    p: f64,
    m: usize,
    rng: RngState,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("ProbAcc level {p} outside [0, 1]")));
    }
    let props = correct_proportions(ds, c, pm, m, rng)?;
    Ok(weighted_fraction(ds, |i| 1.0 - props[i] <= p))
}

/// Weighted fraction of points that are correct together with all `m`
/// sampled perturbations; a sampled stand-in for adversarial accuracy.
pub fn adversarial_surrogate_accuracy(
    ds: &LabeledDataset,
    c: &Classifier,
    pm: &PerturbationModel,
    m: usize,
    rng: RngState,
) -> Result<f64> {
    let props = correct_proportions(ds, c, pm, m, rng)?;
    Ok(weighted_fraction(ds, |i| props[i] == 1.0 && c.predict(&ds.x[i]) == ds.y[i]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathoReport {
    /// `(atom index, correct-perturbation proportion)` for flagged atoms.
    pub flagged: Vec<(usize, f64)>,
    /// Histogram of correct-perturbation proportions over misclassified
    /// atoms: `(bin lower edge, bin upper edge, count)`.
    pub histogram: Vec<(f64, f64, usize)>,
}

/// Misclassified atoms with at least a fraction `q` of correctly classified
/// perturbations.
pub fn patho_scan(
    ds: &LabeledDataset,
    c: &Classifier,
    pm: &PerturbationModel,
    m: usize,
    q: f64,
    rng: RngState,
) -> Result<PathoReport> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!("threshold {q} outside (0, 1]")));
    }
    let props = correct_proportions(ds, c, pm, m, rng)?;
    let wrong: Vec<usize> = (0..ds.len()).filter(|&i| c.predict(&ds.x[i]) != ds.y[i]).collect();
    let bins = 10;
    let mut histogram: Vec<(f64, f64, usize)> =
        (0..bins).map(|b| (b as f64 / bins as f64, (b + 1) as f64 / bins as f64, 0)).collect();
    for &i in &wrong {
        let b = ((props[i] * bins as f64) as usize).min(bins - 1);
        histogram[b].2 += 1;
    }
    let flagged = wrong.into_iter().filter(|&i| props[i] >= q).map(|i| (i, props[i])).collect();
    Ok(PathoReport { flagged, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{HardSet, SoftClassifier};

    #[test]
    fn constant_classifiers() {
        let ds = LabeledDataset::uniform(1, vec![vec![0.0], vec![1.0]], vec![1, 1]).unwrap();
        let pm = PerturbationModel::uniform_ball(1, 0.5);
        let right: Classifier = SoftClassifier::Constant { value: 1.0 }.into();
        let wrong: Classifier = HardSet::Empty.into();
        let rng = RngState::new(0, 0);
        assert_eq!(prob_acc(&ds, &right, &pm, 0.1, 100, rng).unwrap(), 1.0);
        assert_eq!(prob_acc(&ds, &wrong, &pm, 0.1, 100, rng).unwrap(), 0.0);
        assert!(patho_scan(&ds, &right, &pm, 100, 0.9, rng).unwrap().flagged.is_empty());
    }

    #[test]
    fn prob_acc_is_monotone_in_p() {
        let ds = LabeledDataset::uniform(1, (0..20).map(|k| vec![k as f64 * 0.1 - 1.0]).collect(), {
            (0..20).map(|k| (k >= 10) as u8).collect()
        })
        .unwrap();
        let pm = PerturbationModel::uniform_ball(1, 0.3);
        let c: Classifier = HardSet::half_space(vec![1.0], 0.0).unwrap().into();
        let rng = RngState::new(5, 0);
        let a: Vec<f64> = [0.01, 0.05, 0.1, 0.5].iter().map(|&p| prob_acc(&ds, &c, &pm, p, 100, rng).unwrap()).collect();
        assert!(a.windows(2).all(|w| w[0] <= w[1]), "{a:?}");
    }
}
