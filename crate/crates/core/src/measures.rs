//! The data measure and the perturbation family `{m_x}`.
//!
//! Mass queries return an [`Estimate`] holding the mass of a set and of its
//! complement side by side. Both halves are computed directly rather than as
//! `1 - q`, so a perturbation ball that lies entirely inside a set reports an
//! outside mass of exactly zero.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifiers::{GridShape, HardSet, SetOp, SoftClassifier};
use crate::error::{check_dim, invalid, PrlError, Result};
use crate::geometry::{
    disk_in_disk_fraction, dist, dot, interval_overlap, segment_fraction, unit_ball_volume,
};
use crate::quad;
use crate::rng::RngState;

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
}

/// Dataset file: points plus optional perturbation model and named
/// reference classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDocument {
    pub d: usize,
    pub points: Vec<DataPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationModel>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference_sets: BTreeMap<String, HardSet>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference_soft: BTreeMap<String, SoftClassifier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridShape>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl DatasetDocument {
    pub fn new(ds: &LabeledDataset) -> Self {
        Self {
            d: ds.d,
            points: ds
                .x
                .iter()
                .zip(&ds.y)
                .zip(&ds.w)
                .map(|((x, &y), &w)| DataPoint { x: x.clone(), y, w: Some(w) })
                .collect(),
            perturbation: None,
            reference_sets: BTreeMap::new(),
            reference_soft: BTreeMap::new(),
            grid: None,
            params: BTreeMap::new(),
        }
    }

    pub fn dataset(&self) -> Result<LabeledDataset> {
        let explicit = self.points.iter().filter(|p| p.w.is_some()).count();
        if explicit != 0 && explicit != self.points.len() {
            return Err(invalid("either every point carries a weight or none does"));
        }
        let x = self.points.iter().map(|p| p.x.clone()).collect();
        let y = self.points.iter().map(|p| p.y).collect();
        let w = self.points.iter().map(|p| p.w.unwrap_or(1.0)).collect();
        let ds = LabeledDataset::normalized(self.d, x, y, w)?;
        Ok(ds)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if let Some(pm) = &doc.perturbation {
            pm.validate()?;
            check_dim(doc.d, pm.dim())?;
        }
        for set in doc.reference_sets.values() {
            set.validate()?;
        }
        for u in doc.reference_soft.values() {
            u.validate()?;
        }
        Ok(doc)
    }
}

/// The empirical measure `μ = Σ w_i δ_(x_i, y_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub d: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    pub w: Vec<f64>,
}

impl LabeledDataset {
    /// Validates and requires weights summing to one.
    pub fn new(d: usize, x: Vec<Vec<f64>>, y: Vec<u8>, w: Vec<f64>) -> Result<Self> {
        let ds = Self { d, x, y, w };
        ds.validate()?;
        let total: f64 = ds.w.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(ds)
    }

    /// Validates and rescales the weights to sum to one.
    pub fn normalized(d: usize, x: Vec<Vec<f64>>, y: Vec<u8>, w: Vec<f64>) -> Result<Self> {
        let mut ds = Self { d, x, y, w };
        ds.validate()?;
        let total: f64 = ds.w.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(invalid("weights must have a positive finite sum"));
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            ds.w.iter_mut().for_each(|w| *w /= total);
        }
        Ok(ds)
    }

    pub fn uniform(d: usize, x: Vec<Vec<f64>>, y: Vec<u8>) -> Result<Self> {
        let n = x.len();
        Self::normalized(d, x, y, vec![1.0; n])
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if self.x.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        check_dim(self.x.len(), self.y.len())?;
        check_dim(self.x.len(), self.w.len())?;
        for xi in &self.x {
            check_dim(self.d, xi.len())?;
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(invalid("non-finite coordinate"));
            }
        }
        if let Some(y) = self.y.iter().find(|y| **y > 1) {
            return Err(invalid(format!("label {y} is not binary")));
        }
        if self.w.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("weights must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Total weight of atoms with label `y`.
    pub fn label_mass(&self, y: u8) -> f64 {
        self.y.iter().zip(&self.w).filter(|(l, _)| **l == y).map(|(_, w)| w).sum()
    }

    /// `ρ_y(A)`, or `ρ(A)` for `label = None`.
    pub fn rho(&self, set: &HardSet, label: Option<u8>) -> Result<f64> {
        if let Some(d) = set.dim() {
            check_dim(self.d, d)?;
        }
        Ok((0..self.len())
            .filter(|&i| label.is_none_or(|l| self.y[i] == l) && set.contains(&self.x[i]))
            .map(|i| self.w[i])
            .sum())
    }
}

/// Radial profile `k(r)` on `[0, 1]` of a kernel supported in the unit
/// ball. Profiles are normalised to unit mass over the ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialProfile {
    Uniform,
    /// `c (1 - r²)`.
    Epanechnikov,
    /// `c (1 - r)`.
    Cone,
}

impl RadialProfile {
    /// Normalising constant `c` in dimension `d`.
    pub fn constant(self, d: usize) -> f64 {
        let vol = unit_ball_volume(d);
        let d = d as f64;
        match self {
            RadialProfile::Uniform => 1.0 / vol,
            RadialProfile::Epanechnikov => (d + 2.0) / (2.0 * vol),
            RadialProfile::Cone => (d + 1.0) / vol,
        }
    }

    /// Unnormalised shape, equal to 1 at the origin.
    pub fn shape(self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        match self {
            RadialProfile::Uniform => 1.0,
            RadialProfile::Epanechnikov => 1.0 - r * r,
            RadialProfile::Cone => 1.0 - r,
        }
    }

    pub fn density(self, d: usize, r: f64) -> f64 {
        self.constant(d) * self.shape(r)
    }

    /// Kernel mass of the half-plane `{z : z·v ≥ t}` in `d = 2`.
    pub fn half_plane_tail(self, t: f64) -> f64 {
        if t <= -1.0 {
            return 1.0;
        }
        if t >= 1.0 {
            return 0.0;
        }
        match self {
            RadialProfile::Uniform => segment_fraction(t),
            RadialProfile::Epanechnikov => {
                let s = (1.0 - t * t).sqrt();
                let tail = 3.0 * std::f64::consts::PI / 16.0
                    - (t * (5.0 - 2.0 * t * t) * s + 3.0 * t.asin()) / 8.0;
                (8.0 / (3.0 * std::f64::consts::PI) * tail).clamp(0.0, 1.0)
            }
            RadialProfile::Cone => {
                let c = self.constant(2);
                let slice = |s: f64| {
                    let h = (1.0 - s * s).max(0.0).sqrt();
                    2.0 * quad::integrate(|y| c * self.shape((s * s + y * y).sqrt()), 0.0, h, 1e-13)
                };
                if t >= 0.0 {
                    quad::integrate(slice, t, 1.0, 1e-12).clamp(0.0, 1.0)
                } else {
                    (1.0 - quad::integrate(slice, -t, 1.0, 1e-12)).clamp(0.0, 1.0)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudAtom {
    pub offset: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub x: Vec<f64>,
    pub w: f64,
}

/// The perturbation family `x ↦ m_x`; every model is translation invariant
/// except for the data-dependent half of `MixtureWithData`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationModel {
    UniformBall { epsilon: f64, d: usize },
    RadialKernel { epsilon: f64, d: usize, profile: RadialProfile },
    DiscreteCloud { offsets: Vec<CloudAtom> },
    /// `½ Unif(B_ε(x)) + ½ ρ⌊B_ε(x)` with the data part normalised; pure
    /// uniform when no anchor lies in the ball.
    MixtureWithData { epsilon: f64, d: usize, anchors: Vec<Anchor> },
}

impl PerturbationModel {
    pub fn uniform_ball(d: usize, epsilon: f64) -> Self {
        PerturbationModel::UniformBall { epsilon, d }
    }

    pub fn discrete_cloud(offsets: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let pm = PerturbationModel::DiscreteCloud {
            offsets: offsets.into_iter().map(|(offset, weight)| CloudAtom { offset, weight }).collect(),
        };
        pm.validate()?;
        Ok(pm)
    }

    /// Equal-weight cloud of `radii.len() × angles` points in `d = 2`, at
    /// angles `(j + ½)·2π/angles` and radii scaled by `epsilon`.
    pub fn polar_cloud(epsilon: f64, radii: &[f64], angles: usize) -> Result<Self> {
        let n = (radii.len() * angles) as f64;
        let mut offsets = Vec::with_capacity(radii.len() * angles);
        for &r in radii {
            for j in 0..angles {
                let a = (j as f64 + 0.5) * std::f64::consts::TAU / angles as f64;
                offsets.push((vec![epsilon * r * a.cos(), epsilon * r * a.sin()], 1.0 / n));
            }
        }
        Self::discrete_cloud(offsets)
    }

    /// Equally spaced equal-weight cloud on `(-epsilon, epsilon)` in `d = 1`
    /// that avoids the zero offset.
    pub fn line_cloud(epsilon: f64, n: usize) -> Result<Self> {
        if n == 0 || n % 2 == 1 {
            return Err(invalid("line cloud needs an even number of points"));
        }
        let step = 2.0 * epsilon / (n as f64 + 1.0);
        let offsets = (0..n)
            .map(|k| {
                let j = k as f64 - (n as f64 - 1.0) / 2.0;
                (vec![j * step], 1.0 / n as f64)
            })
            .collect();
        Self::discrete_cloud(offsets)
    }

    pub fn dim(&self) -> usize {
        match self {
            PerturbationModel::UniformBall { d, .. }
            | PerturbationModel::RadialKernel { d, .. }
            | PerturbationModel::MixtureWithData { d, .. } => *d,
            PerturbationModel::DiscreteCloud { offsets } => offsets.first().map(|a| a.offset.len()).unwrap_or(0),
        }
    }

    /// Support radius; the largest offset norm for a cloud.
    pub fn radius(&self) -> f64 {
        match self {
            PerturbationModel::UniformBall { epsilon, .. }
            | PerturbationModel::RadialKernel { epsilon, .. }
            | PerturbationModel::MixtureWithData { epsilon, .. } => *epsilon,
            PerturbationModel::DiscreteCloud { offsets } => offsets
                .iter()
                .map(|a| crate::geometry::norm(&a.offset))
                .fold(0.0, f64::max),
        }
    }

    pub fn is_atomless(&self) -> bool {
        matches!(self, PerturbationModel::UniformBall { .. } | PerturbationModel::RadialKernel { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let check_eps = |eps: f64, d: usize| {
            if !(eps > 0.0) || !eps.is_finite() {
                return Err(invalid("perturbation radius must be positive"));
            }
            if d == 0 {
                return Err(invalid("perturbation dimension must be at least 1"));
            }
            Ok(())
        };
        match self {
            PerturbationModel::UniformBall { epsilon, d } | PerturbationModel::RadialKernel { epsilon, d, .. } => {
                check_eps(*epsilon, *d)
            }
            PerturbationModel::MixtureWithData { epsilon, d, anchors } => {
                check_eps(*epsilon, *d)?;
                for a in anchors {
                    check_dim(*d, a.x.len())?;
                    if !(a.w >= 0.0) {
                        return Err(invalid("anchor weights must be non-negative"));
                    }
                }
                Ok(())
            }
            PerturbationModel::DiscreteCloud { offsets } => {
                if offsets.is_empty() {
                    return Err(invalid("discrete cloud is empty"));
                }
                let d = offsets[0].offset.len();
                if d == 0 {
                    return Err(invalid("cloud offsets must have dimension at least 1"));
                }
                for a in offsets {
                    check_dim(d, a.offset.len())?;
                    if !(a.weight >= 0.0) {
                        return Err(invalid("cloud weights must be non-negative"));
                    }
                }
                let total: f64 = offsets.iter().map(|a| a.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!("cloud weights sum to {total}, expected 1")));
                }
                Ok(())
            }
        }
    }

    fn sample_one<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        match self {
            PerturbationModel::UniformBall { epsilon, d } => {
                let z = unit_ball_point(*d, rng);
                x.iter().zip(z).map(|(a, b)| a + epsilon * b).collect()
            }
            PerturbationModel::RadialKernel { epsilon, d, profile } => loop {
                let z = unit_ball_point(*d, rng);
                let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                if rng.random::<f64>() < profile.shape(r) {
                    break x.iter().zip(z).map(|(a, b)| a + epsilon * b).collect();
                }
            },
            PerturbationModel::DiscreteCloud { offsets } => {
                let idx = WeightedIndex::new(offsets.iter().map(|a| a.weight))
                    .expect("validated cloud weights")
                    .sample(rng);
                x.iter().zip(&offsets[idx].offset).map(|(a, b)| a + b).collect()
            }
            PerturbationModel::MixtureWithData { epsilon, d, anchors } => {
                let near: Vec<&Anchor> = anchors.iter().filter(|a| a.w > 0.0 && dist(&a.x, x) < *epsilon).collect();
                if near.is_empty() || rng.random::<f64>() < 0.5 {
                    let z = unit_ball_point(*d, rng);
                    x.iter().zip(z).map(|(a, b)| a + epsilon * b).collect()
                } else {
                    let idx = WeightedIndex::new(near.iter().map(|a| a.w)).expect("positive weights").sample(rng);
                    near[idx].x.clone()
                }
            }
        }
    }
}

/// One draw from `m_x`.
pub(crate) fn sample_one<R: Rng + ?Sized>(pm: &PerturbationModel, x: &[f64], rng: &mut R) -> Vec<f64> {
    pm.sample_one(x, rng)
}

fn unit_ball_point<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    match d {
        1 => vec![2.0 * rng.random::<f64>() - 1.0],
        2 => loop {
            let a = 2.0 * rng.random::<f64>() - 1.0;
            let b = 2.0 * rng.random::<f64>() - 1.0;
            if a * a + b * b < 1.0 {
                break vec![a, b];
            }
        },
        _ => {
            let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = rng.random::<f64>().powf(1.0 / d as f64);
            g.into_iter().map(|v| v * r / n).collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    AnalyticPreferred,
    McOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub mc_samples: usize,
    pub tv_levels: usize,
    pub seed: u64,
    pub mode: EstimatorMode,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { mc_samples: 4096, tv_levels: 64, seed: 0, mode: EstimatorMode::AnalyticPreferred }
    }
}

impl EstimatorConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 || self.tv_levels == 0 {
            return Err(invalid("sample and level counts must be positive"));
        }
        Ok(())
    }
}

/// How a value was obtained, ordered from most to least trustworthy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Finite sums over discrete measures.
    Exact,
    /// Closed-form geometry, exact up to rounding.
    Analytic,
    #[serde(rename = "mc")]
    MonteCarlo,
    /// Sampled supremum; never above the true value.
    McSupLowerBound,
}

impl EstimatorKind {
    pub fn worst(self, other: Self) -> Self {
        self.max(other)
    }
}

/// A mass or expectation together with its complement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    /// `m_x(A)` or `E[u]`.
    pub inside: f64,
    /// `m_x(Aᶜ)` or `E[1 - u]`.
    pub outside: f64,
    pub kind: EstimatorKind,
    /// Standard error; zero for exact and analytic paths.
    pub stderr: f64,
}

impl Estimate {
    fn exact(inside: f64, outside: f64, kind: EstimatorKind) -> Self {
        Self { inside, outside, kind, stderr: 0.0 }
    }

    fn mix(a: Estimate, b: Estimate) -> Self {
        Self {
            inside: 0.5 * a.inside + 0.5 * b.inside,
            outside: 0.5 * a.outside + 0.5 * b.outside,
            kind: a.kind.worst(b.kind),
            stderr: 0.5 * (a.stderr * a.stderr + b.stderr * b.stderr).sqrt(),
        }
    }
}

fn check_query(pm: &PerturbationModel, x: &[f64], set_dim: Option<usize>) -> Result<()> {
    check_dim(pm.dim(), x.len())?;
    if let Some(d) = set_dim {
        check_dim(pm.dim(), d)?;
    }
    Ok(())
}

/// `n` independent draws from `m_x`.
pub fn sample_perturbations(pm: &PerturbationModel, x: &[f64], n: usize, rng: RngState) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(invalid("need at least one draw"));
    }
    pm.validate()?;
    check_query(pm, x, None)?;
    let mut draws = rng.draws();
    Ok((0..n as u64).map(|k| pm.sample_one(x, draws.at(k))).collect())
}

/// `m_x(A)`.
pub fn prob_mass(pm: &PerturbationModel, x: &[f64], set: &HardSet, cfg: &EstimatorConfig) -> Result<f64> {
    Ok(mass_estimate(pm, x, set, cfg, 0)?.inside)
}

/// `(m_x(A), standard error)`.
pub fn prob_mass_diagnostic(
    pm: &PerturbationModel,
    x: &[f64],
    set: &HardSet,
    cfg: &EstimatorConfig,
) -> Result<(f64, f64)> {
    let e = mass_estimate(pm, x, set, cfg, 0)?;
    Ok((e.inside, e.stderr))
}

/// `E_{x'∼m_x}[u(x')]`.
pub fn expect_u(pm: &PerturbationModel, x: &[f64], u: &SoftClassifier, cfg: &EstimatorConfig) -> Result<f64> {
    Ok(expect_estimate(pm, x, u, cfg, 0)?.inside)
}

/// Mass of `A` and `Aᶜ` under `m_x`, Monte Carlo draws taken from `stream`.
pub fn mass_estimate(
    pm: &PerturbationModel,
    x: &[f64],
    set: &HardSet,
    cfg: &EstimatorConfig,
    stream: u64,
) -> Result<Estimate> {
    cfg.validate()?;
    check_query(pm, x, set.dim())?;
    if cfg.mode == EstimatorMode::AnalyticPreferred {
        if let Some(e) = analytic_mass(pm, x, set) {
            return Ok(e);
        }
    }
    let state = RngState::new(cfg.seed, stream);
    let mut draws = state.draws();
    let m = cfg.mc_samples;
    let hits = (0..m as u64).filter(|&k| set.contains(&pm.sample_one(x, draws.at(k)))).count();
    let q = hits as f64 / m as f64;
    Ok(Estimate {
        inside: q,
        outside: (m - hits) as f64 / m as f64,
        kind: EstimatorKind::MonteCarlo,
        stderr: (q * (1.0 - q) / m as f64).sqrt(),
    })
}

fn analytic_mass(pm: &PerturbationModel, x: &[f64], set: &HardSet) -> Option<Estimate> {
    match pm {
        PerturbationModel::DiscreteCloud { offsets } => {
            let (mut inside, mut outside) = (0.0, 0.0);
            let mut y = vec![0.0; x.len()];
            for a in offsets {
                for k in 0..x.len() {
                    y[k] = x[k] + a.offset[k];
                }
                if set.contains(&y) {
                    inside += a.weight;
                } else {
                    outside += a.weight;
                }
            }
            Some(Estimate::exact(inside, outside, EstimatorKind::Exact))
        }
        PerturbationModel::UniformBall { epsilon, d } => {
            let reduced = set.without_null_parts();
            match d {
                1 => interval_mass(x[0], *epsilon, &reduced),
                2 => planar_mass(x, *epsilon, &reduced, RadialProfile::Uniform),
                _ => trivial_mass(&reduced),
            }
        }
        PerturbationModel::RadialKernel { epsilon, d: 2, profile } => {
            planar_mass(x, *epsilon, &set.without_null_parts(), *profile)
        }
        PerturbationModel::RadialKernel { .. } => trivial_mass(&set.without_null_parts()),
        PerturbationModel::MixtureWithData { epsilon, d, anchors } => {
            let ball = PerturbationModel::UniformBall { epsilon: *epsilon, d: *d };
            let cont = analytic_mass(&ball, x, set)?;
            match anchor_part(anchors, x, *epsilon, |p| if set.contains(p) { 1.0 } else { 0.0 }) {
                Some(disc) => Some(Estimate::mix(cont, disc)),
                None => Some(cont),
            }
        }
    }
}

fn anchor_part(anchors: &[Anchor], x: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> Option<Estimate> {
    let near: Vec<&Anchor> = anchors.iter().filter(|a| a.w > 0.0 && dist(&a.x, x) < eps).collect();
    let total: f64 = near.iter().map(|a| a.w).sum();
    if near.is_empty() {
        return None;
    }
    let inside = near.iter().map(|a| a.w * f(&a.x)).sum::<f64>() / total;
    let outside = near.iter().map(|a| a.w * (1.0 - f(&a.x))).sum::<f64>() / total;
    Some(Estimate::exact(inside, outside, EstimatorKind::Exact))
}

fn trivial_mass(set: &HardSet) -> Option<Estimate> {
    match set {
        HardSet::Empty => Some(Estimate::exact(0.0, 1.0, EstimatorKind::Analytic)),
        HardSet::Full => Some(Estimate::exact(1.0, 0.0, EstimatorKind::Analytic)),
        _ => None,
    }
}

fn planar_mass(x: &[f64], eps: f64, set: &HardSet, profile: RadialProfile) -> Option<Estimate> {
    let e = |inside, outside| Some(Estimate::exact(inside, outside, EstimatorKind::Analytic));
    match set {
        HardSet::Empty | HardSet::Full => trivial_mass(set),
        HardSet::HalfSpace { normal, offset } => {
            let s = (dot(normal, x) - offset) / eps;
            e(profile.half_plane_tail(-s), profile.half_plane_tail(s))
        }
        HardSet::Disk { center, radius } if profile == RadialProfile::Uniform => {
            let (a, b) = disk_in_disk_fraction(dist(center, x), eps, *radius);
            e(a, b)
        }
        HardSet::SetExpr { op: SetOp::Complement, children } => {
            planar_mass(x, eps, &children[0], profile).map(|m| Estimate { inside: m.outside, outside: m.inside, ..m })
        }
        _ => None,
    }
}

/// Sorted disjoint open intervals describing a subset of the line up to a
/// finite set of points.
fn intervals(set: &HardSet) -> Option<Vec<(f64, f64)>> {
    let inf = f64::INFINITY;
    Some(match set {
        HardSet::Empty | HardSet::Points { .. } => Vec::new(),
        HardSet::Full => vec![(-inf, inf)],
        HardSet::HalfSpace { normal, offset } => {
            if normal[0] > 0.0 {
                vec![(offset / normal[0], inf)]
            } else {
                vec![(-inf, offset / normal[0])]
            }
        }
        HardSet::Disk { center, radius } => {
            if *radius > 0.0 {
                vec![(center[0] - radius, center[0] + radius)]
            } else {
                Vec::new()
            }
        }
        HardSet::GridMask(m) => {
            let mut out: Vec<(f64, f64)> = Vec::new();
            for (i, &b) in m.bits.iter().enumerate() {
                if b {
                    let (lo, hi) = m.shape.cell_bounds(i);
                    match out.last_mut() {
                        Some(last) if last.1 == lo[0] => last.1 = hi[0],
                        _ => out.push((lo[0], hi[0])),
                    }
                }
            }
            out
        }
        HardSet::Superlevel { .. } => return None,
        HardSet::SetExpr { op, children } => {
            let parts = children.iter().map(intervals).collect::<Option<Vec<_>>>()?;
            match op {
                SetOp::Complement => complement_intervals(&parts[0]),
                SetOp::Union => {
                    let mut all: Vec<(f64, f64)> = parts.into_iter().flatten().collect();
                    all.sort_by(|a, b| a.0.total_cmp(&b.0));
                    merge_intervals(all)
                }
                SetOp::Intersect => {
                    let mut acc = parts[0].clone();
                    for p in &parts[1..] {
                        let mut next = Vec::new();
                        for a in &acc {
                            for b in p {
                                let (lo, hi) = (a.0.max(b.0), a.1.min(b.1));
                                if lo < hi {
                                    next.push((lo, hi));
                                }
                            }
                        }
                        next.sort_by(|a, b| a.0.total_cmp(&b.0));
                        acc = merge_intervals(next);
                    }
                    acc
                }
            }
        }
    })
}

fn merge_intervals(sorted: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in sorted {
        if hi <= lo {
            continue;
        }
        match out.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

fn complement_intervals(parts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = f64::NEG_INFINITY;
    for &(lo, hi) in parts {
        if lo > start {
            out.push((start, lo));
        }
        start = hi;
    }
    if start < f64::INFINITY {
        out.push((start, f64::INFINITY));
    }
    out
}

fn interval_mass(x: f64, eps: f64, set: &HardSet) -> Option<Estimate> {
    let inside = intervals(set)?;
    let outside = complement_intervals(&inside);
    let (lo, hi) = (x - eps, x + eps);
    let len = hi - lo;
    let measure = |parts: &[(f64, f64)]| {
        parts.iter().map(|&(a, b)| interval_overlap(a, b, lo, hi)).sum::<f64>() / len
    };
    Some(Estimate::exact(measure(&inside), measure(&outside), EstimatorKind::Analytic))
}

/// `E[u]` and `E[1 - u]` under `m_x`.
pub fn expect_estimate(
    pm: &PerturbationModel,
    x: &[f64],
    u: &SoftClassifier,
    cfg: &EstimatorConfig,
    stream: u64,
) -> Result<Estimate> {
    cfg.validate()?;
    check_query(pm, x, u.dim())?;
    u.validate()?;
    if let SoftClassifier::Indicator { set } = u {
        return mass_estimate(pm, x, set, cfg, stream);
    }
    if cfg.mode == EstimatorMode::AnalyticPreferred {
        if let Some(e) = analytic_expectation(pm, x, u)? {
            return Ok(e);
        }
    }
    let state = RngState::new(cfg.seed, stream);
    let mut draws = state.draws();
    let m = cfg.mc_samples;
    let mut vals = Vec::with_capacity(m);
    for k in 0..m as u64 {
        vals.push(checked_eval(u, &pm.sample_one(x, draws.at(k)))?);
    }
    let mean = quad::pairwise_sum(&vals) / m as f64;
    let comp: Vec<f64> = vals.iter().map(|v| 1.0 - v).collect();
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m.max(2) - 1) as f64;
    Ok(Estimate {
        inside: mean,
        outside: quad::pairwise_sum(&comp) / m as f64,
        kind: EstimatorKind::MonteCarlo,
        stderr: (var / m as f64).sqrt(),
    })
}

fn checked_eval(u: &SoftClassifier, x: &[f64]) -> Result<f64> {
    let v = u.eval(x);
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(PrlError::ContractViolation(format!("classifier returned {v} outside [0, 1]")))
    }
}

fn analytic_expectation(pm: &PerturbationModel, x: &[f64], u: &SoftClassifier) -> Result<Option<Estimate>> {
    if let SoftClassifier::Constant { value } = u {
        return Ok(Some(Estimate::exact(*value, 1.0 - value, EstimatorKind::Analytic)));
    }
    Ok(match pm {
        PerturbationModel::DiscreteCloud { offsets } => {
            let (mut inside, mut outside) = (0.0, 0.0);
            let mut y = vec![0.0; x.len()];
            for a in offsets {
                for k in 0..x.len() {
                    y[k] = x[k] + a.offset[k];
                }
                let v = checked_eval(u, &y)?;
                inside += a.weight * v;
                outside += a.weight * (1.0 - v);
            }
            Some(Estimate::exact(inside, outside, EstimatorKind::Exact))
        }
        PerturbationModel::UniformBall { epsilon, d: 1 } => match u {
            SoftClassifier::GridFunction { shape, values } => {
                let (lo, hi) = (x[0] - epsilon, x[0] + epsilon);
                let len = hi - lo;
                let mut inside = 0.0;
                let mut outside = 0.0;
                let mut covered = 0.0;
                for (i, v) in values.iter().enumerate() {
                    let (a, b) = shape.cell_bounds(i);
                    let o = interval_overlap(a[0], b[0], lo, hi);
                    inside += v * o;
                    outside += (1.0 - v) * o;
                    covered += o;
                }
                // u vanishes outside the grid box
                outside += (len - covered).max(0.0);
                Some(Estimate::exact(inside / len, outside / len, EstimatorKind::Analytic))
            }
            _ => None,
        },
        PerturbationModel::MixtureWithData { epsilon, d, anchors } => {
            let ball = PerturbationModel::UniformBall { epsilon: *epsilon, d: *d };
            let Some(cont) = analytic_expectation(&ball, x, u)? else { return Ok(None) };
            match anchor_part(anchors, x, *epsilon, |p| u.eval(p)) {
                Some(disc) => Some(Estimate::mix(cont, disc)),
                None => Some(cont),
            }
        }
        _ => None,
    })
}

/// `σ(A) = Σ w_i m_{x_i}(A)`.
pub fn mass_under_sigma(ds: &LabeledDataset, pm: &PerturbationModel, set: &HardSet, cfg: &EstimatorConfig) -> Result<f64> {
    let parts = (0..ds.len())
        .map(|i| Ok(ds.w[i] * mass_estimate(pm, &ds.x[i], set, cfg, i as u64)?.inside))
        .collect::<Result<Vec<f64>>>()?;
    Ok(quad::pairwise_sum(&parts))
}

/// `ν(A) = ½ σ(A) + ½ ρ(A)`.
pub fn mass_under_nu(ds: &LabeledDataset, pm: &PerturbationModel, set: &HardSet, cfg: &EstimatorConfig) -> Result<f64> {
    Ok(0.5 * mass_under_sigma(ds, pm, set, cfg)? + 0.5 * ds.rho(set, None)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EstimatorConfig {
        EstimatorConfig::default()
    }

    #[test]
    fn uniform_ball_samples_stay_in_ball() {
        let pm = PerturbationModel::uniform_ball(2, 1.0);
        let pts = sample_perturbations(&pm, &[0.0, 0.0], 100_000, RngState::new(1, 0)).unwrap();
        let mean: Vec<f64> = (0..2).map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / pts.len() as f64).collect();
        assert!(mean.iter().all(|m| m.abs() < 0.02));
        assert!(pts.iter().all(|p| crate::geometry::norm(p) <= 1.0));
    }

    #[test]
    fn cloud_samples_hit_support() {
        let pm = PerturbationModel::discrete_cloud(vec![(vec![0.1, 0.0], 0.5), (vec![-0.1, 0.0], 0.5)]).unwrap();
        let pts = sample_perturbations(&pm, &[0.05, 0.0], 4, RngState::new(3, 0)).unwrap();
        for p in pts {
            assert!((p[0] - 0.15).abs() < 1e-15 || (p[0] + 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn radial_kernel_inner_disk_fraction() {
        let pm = PerturbationModel::RadialKernel { epsilon: 0.5, d: 2, profile: RadialProfile::Uniform };
        let pts = sample_perturbations(&pm, &[1.0, 1.0], 100_000, RngState::new(9, 0)).unwrap();
        let frac = pts.iter().filter(|p| dist(p, &[1.0, 1.0]) <= 0.25).count() as f64 / pts.len() as f64;
        assert!((frac - 0.25).abs() < 0.01, "{frac}");
    }

    #[test]
    fn half_plane_masses() {
        let pm = PerturbationModel::uniform_ball(2, 1.0);
        let h = HardSet::half_space(vec![1.0, 0.0], 0.0).unwrap();
        assert_eq!(prob_mass(&pm, &[0.0, 0.0], &h, &cfg()).unwrap(), 0.5);
        let left = HardSet::complement(h);
        let t: f64 = 0.5;
        let expected = (t.acos() - t * (1.0 - t * t).sqrt()) / std::f64::consts::PI;
        let got = prob_mass(&pm, &[t, 0.0], &left, &cfg()).unwrap();
        assert!((got - expected).abs() < 1e-15);

        let mc = EstimatorConfig { mc_samples: 1_000_000, mode: EstimatorMode::McOnly, ..cfg() };
        let (q, se) = prob_mass_diagnostic(&pm, &[t, 0.0], &left, &mc).unwrap();
        assert!((q - expected).abs() <= 4.0 * se.max((expected * (1.0 - expected) / 1e6).sqrt()));
    }

    #[test]
    fn cloud_mass_is_exact() {
        let pm = PerturbationModel::discrete_cloud(vec![(vec![0.1, 0.0], 0.5), (vec![-0.1, 0.0], 0.5)]).unwrap();
        let h = HardSet::half_space(vec![1.0, 0.0], 0.0).unwrap();
        assert_eq!(prob_mass(&pm, &[0.05, 0.0], &h, &cfg()).unwrap(), 0.5);
    }

    #[test]
    fn expectation_examples() {
        let pm = PerturbationModel::uniform_ball(2, 1.0);
        let c = SoftClassifier::Constant { value: 0.7 };
        assert_eq!(expect_u(&pm, &[0.3, 0.1], &c, &cfg()).unwrap(), 0.7);
        let ind = SoftClassifier::Indicator { set: HardSet::half_space(vec![1.0, 0.0], 0.0).unwrap() };
        assert_eq!(expect_u(&pm, &[0.0, 0.0], &ind, &cfg()).unwrap(), 0.5);
        let s = SoftClassifier::LinearSigmoid { weights: vec![10.0, 0.0], bias: 0.0 };
        let big = EstimatorConfig { mc_samples: 1_000_000, ..cfg() };
        let v = expect_u(&pm, &[0.0, 0.0], &s, &big).unwrap();
        assert!((v - 0.5).abs() < 0.003, "{v}");
    }

    #[test]
    fn out_of_range_classifier_is_a_contract_violation() {
        let pm = PerturbationModel::uniform_ball(1, 1.0);
        let bad = SoftClassifier::Constant { value: 1.5 };
        assert!(expect_u(&pm, &[0.0], &bad, &cfg()).is_err());
    }

    #[test]
    fn nu_and_sigma_examples() {
        let ds = LabeledDataset::new(2, vec![vec![0.0, 0.0]], vec![0], vec![1.0]).unwrap();
        let pm = PerturbationModel::uniform_ball(2, 1.0);
        let single = HardSet::Points { points: vec![vec![0.0, 0.0]] };
        assert_eq!(mass_under_nu(&ds, &pm, &single, &cfg()).unwrap(), 0.5);
        assert_eq!(mass_under_sigma(&ds, &pm, &single, &cfg()).unwrap(), 0.0);
        assert_eq!(mass_under_nu(&ds, &pm, &HardSet::Full, &cfg()).unwrap(), 1.0);
    }

    #[test]
    fn line_masses_use_intervals() {
        let pm = PerturbationModel::uniform_ball(1, 0.7);
        let shape = GridShape::new(vec![-0.95], vec![2.65], vec![12]).unwrap();
        let bits = (0..12).map(|i| (6..=10).contains(&i)).collect();
        let a = HardSet::GridMask(crate::classifiers::GridMask::new(shape, bits).unwrap());
        let e = mass_estimate(&pm, &[1.6], &a, &cfg(), 0).unwrap();
        assert_eq!(e.outside, 0.0);
        let e = mass_estimate(&pm, &[0.5], &a, &cfg(), 0).unwrap();
        assert!((e.inside - 0.35 / 1.4).abs() < 1e-12);
        assert!((e.inside + e.outside - 1.0).abs() < 1e-12);
    }

    #[test]
    fn epanechnikov_tail_matches_quadrature() {
        let p = RadialProfile::Epanechnikov;
        let c = p.constant(2);
        for &t in &[-0.6, 0.0, 0.2, 0.7] {
            let slice = |s: f64| {
                let h = (1.0f64 - s * s).max(0.0).sqrt();
                2.0 * quad::integrate(|y| c * p.shape((s * s + y * y).sqrt()), 0.0, h, 1e-13)
            };
            let q = quad::integrate(slice, t, 1.0, 1e-12);
            assert!((p.half_plane_tail(t) - q).abs() < 1e-9, "t={t}");
        }
        assert!((RadialProfile::Cone.half_plane_tail(0.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn weights_are_renormalised() {
        let doc: DatasetDocument =
            serde_json::from_str(r#"{"d":1,"points":[{"x":[0.0],"y":0},{"x":[1.0],"y":1}]}"#).unwrap();
        let ds = doc.dataset().unwrap();
        assert_eq!(ds.w, vec![0.5, 0.5]);
        assert!(serde_json::from_str::<DatasetDocument>(r#"{"d":1,"points":[],"extra":1}"#).is_err());
    }
}
