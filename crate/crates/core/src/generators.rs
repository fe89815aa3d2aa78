//! Synthetic instances: the worked examples with their named reference
//! classifiers, and Gaussian mixtures for training.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifiers::{GridMask, GridShape, HardSet, SoftClassifier};
use crate::error::{invalid, Result};
use crate::geometry::{dist, lens_area};
use crate::measures::{DatasetDocument, LabeledDataset, PerturbationModel};
use crate::rng::RngState;

/// Radii (in units of ε) and angle count of the polar clouds used for the
/// planar examples.
pub const POLAR_RADII: [f64; 4] = [0.25, 0.5, 0.75, 0.95];
pub const POLAR_ANGLES: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// Blue point at `(a, 0)`, red point at `(b, 0)`.
    TwoPointFig1 {
        #[serde(default)]
        a: f64,
        #[serde(default = "default_b")]
        b: f64,
        #[serde(default = "default_one")]
        epsilon: f64,
    },
    /// Blue `(0, 0)`, red `(3, 0)`, `ε = 1`, and a spiky set rasterised on
    /// a `6·resolution × 3·resolution` grid.
    SpikeFig1 {
        #[serde(default = "default_spike_resolution")]
        resolution: usize,
        #[serde(default = "default_sliver")]
        sliver_width: usize,
    },
    ThreePoint {
        #[serde(default)]
        x1: f64,
        #[serde(default = "default_x2")]
        x2: f64,
        #[serde(default = "default_x3")]
        x3: f64,
        #[serde(default = "default_three_eps")]
        epsilon: f64,
        /// Replace the uniform interval kernel by an even equispaced cloud.
        #[serde(default)]
        cloud_points: Option<usize>,
    },
    GaussMixture {
        means: [Vec<f64>; 2],
        sigmas: [f64; 2],
        n_per_class: usize,
        #[serde(default = "default_mix_eps")]
        epsilon: f64,
    },
    /// Blue `(0, 0)` and red `(distance, 0)` with overlapping ε-balls.
    Homogenizing {
        #[serde(default = "default_one")]
        distance: f64,
        #[serde(default = "default_one")]
        epsilon: f64,
        #[serde(default = "default_homog_resolution")]
        resolution: usize,
    },
}

fn default_b() -> f64 {
    3.0
}
fn default_one() -> f64 {
    1.0
}
fn default_spike_resolution() -> usize {
    10
}
fn default_sliver() -> usize {
    1
}
fn default_x2() -> f64 {
    0.5
}
fn default_x3() -> f64 {
    1.6
}
fn default_three_eps() -> f64 {
    0.7
}
fn default_mix_eps() -> f64 {
    0.5
}
fn default_homog_resolution() -> usize {
    24
}

impl GeneratorSpec {
    /// The variant with all defaults, by its kebab-case name.
    pub fn named(name: &str) -> Result<Self> {
        Ok(match name {
            "two-point-fig1" | "two-point" => {
                GeneratorSpec::TwoPointFig1 { a: 0.0, b: default_b(), epsilon: default_one() }
            }
            "spike-fig1" | "spike" => {
                GeneratorSpec::SpikeFig1 { resolution: default_spike_resolution(), sliver_width: default_sliver() }
            }
            "three-point" => GeneratorSpec::ThreePoint {
                x1: 0.0,
                x2: default_x2(),
                x3: default_x3(),
                epsilon: default_three_eps(),
                cloud_points: None,
            },
            "gauss-mixture" => Self::separable_mixture(500),
            "homogenizing" => GeneratorSpec::Homogenizing {
                distance: default_one(),
                epsilon: default_one(),
                resolution: default_homog_resolution(),
            },
            _ => return Err(invalid(format!("unknown generator {name:?}"))),
        })
    }

    /// Means `±(2, 0)`, `σ = 0.5`.
    pub fn separable_mixture(n_per_class: usize) -> Self {
        GeneratorSpec::GaussMixture {
            means: [vec![-2.0, 0.0], vec![2.0, 0.0]],
            sigmas: [0.5, 0.5],
            n_per_class,
            epsilon: default_mix_eps(),
        }
    }
}

/// Builds the dataset document for `spec`; only the Gaussian mixture uses
/// the seed.
pub fn generate(spec: &GeneratorSpec, seed: u64) -> Result<DatasetDocument> {
    match spec {
        GeneratorSpec::TwoPointFig1 { a, b, epsilon } => two_point(*a, *b, *epsilon),
        GeneratorSpec::SpikeFig1 { resolution, sliver_width } => spike(*resolution, *sliver_width),
        GeneratorSpec::ThreePoint { x1, x2, x3, epsilon, cloud_points } => {
            three_point(*x1, *x2, *x3, *epsilon, *cloud_points)
        }
        GeneratorSpec::GaussMixture { means, sigmas, n_per_class, epsilon } => {
            gauss_mixture(means, *sigmas, *n_per_class, *epsilon, seed)
        }
        GeneratorSpec::Homogenizing { distance, epsilon, resolution } => {
            homogenizing(*distance, *epsilon, *resolution)
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

fn two_point(a: f64, b: f64, eps: f64) -> Result<DatasetDocument> {
    positive("epsilon", eps)?;
    if !(a < b) {
        return Err(invalid("constraint a < b violated"));
    }
    if !(eps < (b - a) / 2.0) {
        return Err(invalid("constraint ε < (b - a)/2 violated"));
    }
    let ds = LabeledDataset::new(2, vec![vec![a, 0.0], vec![b, 0.0]], vec![0, 1], vec![0.5, 0.5])?;
    let mut doc = DatasetDocument::new(&ds);
    doc.perturbation = Some(PerturbationModel::polar_cloud(eps, &POLAR_RADII, POLAR_ANGLES)?);
    let mid = a + (b - a) / 2.0;
    let split = HardSet::half_space(vec![1.0, 0.0], mid)?;
    doc.reference_sets.insert("A".into(), HardSet::union(split.clone(), HardSet::Points { points: vec![vec![a, 0.0]] }));
    doc.reference_sets.insert("split".into(), split);
    doc.reference_sets.insert("both".into(), HardSet::Full);
    doc.params.insert("epsilon".into(), eps);
    Ok(doc)
}

fn spike(res: usize, width: usize) -> Result<DatasetDocument> {
    if res == 0 || res % 2 == 1 {
        return Err(invalid("spike resolution must be even and positive"));
    }
    if width == 0 || width > res {
        return Err(invalid("sliver width must lie in 1..=resolution"));
    }
    let eps = 1.0;
    let (blue, red) = (vec![0.0, 0.0], vec![3.0, 0.0]);
    let ds = LabeledDataset::new(2, vec![blue.clone(), red], vec![0, 1], vec![0.5, 0.5])?;
    let shape = GridShape::new(vec![-1.5, -1.5], vec![4.5, 1.5], vec![6 * res, 3 * res])?;
    let (nx, ny) = (6 * res, 3 * res);
    let cell = shape.cell_index(&blue).expect("blue point lies in the grid");
    let (bx, by) = (cell / ny, cell % ny);
    let mut bits = vec![false; nx * ny];
    for ix in 3 * res..nx {
        for iy in 0..ny {
            bits[ix * ny + iy] = true;
        }
    }
    let plain = GridMask::new(shape.clone(), bits.clone())?;
    for ix in bx..3 * res {
        for iy in by..(by + width).min(ny) {
            bits[ix * ny + iy] = true;
        }
    }
    let spike = GridMask::new(shape.clone(), bits)?;
    let pm = PerturbationModel::polar_cloud(eps, &POLAR_RADII, POLAR_ANGLES)?;
    let sliver = HardSet::intersect(HardSet::GridMask(spike.clone()), HardSet::half_space(vec![-1.0, 0.0], -1.5)?);
    let sliver_mass = crate::measures::prob_mass(&pm, &blue, &sliver, &Default::default())?;
    let mut doc = DatasetDocument::new(&ds);
    doc.perturbation = Some(pm);
    doc.reference_sets.insert("spike".into(), HardSet::GridMask(spike));
    doc.reference_sets.insert("no_spike".into(), HardSet::GridMask(plain));
    doc.grid = Some(shape);
    doc.params.insert("epsilon".into(), eps);
    doc.params.insert("p".into(), 0.1);
    doc.params.insert("sliver_mass".into(), sliver_mass);
    Ok(doc)
}

fn three_point(x1: f64, x2: f64, x3: f64, eps: f64, cloud: Option<usize>) -> Result<DatasetDocument> {
    positive("epsilon", eps)?;
    if !((x1 - x2).abs() < eps) {
        return Err(invalid("constraint |x1 - x2| < ε violated"));
    }
    if !((x2 - x3).abs() < 2.0 * eps) {
        return Err(invalid("constraint B_ε(x2) ∩ B_ε(x3) ≠ ∅ violated"));
    }
    if !((x1 - x3).abs() >= 2.0 * eps) {
        return Err(invalid("constraint B_ε(x1) ∩ B_ε(x3) = ∅ violated"));
    }
    let ds = LabeledDataset::new(1, vec![vec![x1], vec![x2], vec![x3]], vec![0, 0, 1], vec![0.4, 0.2, 0.4])?;
    let mut doc = DatasetDocument::new(&ds);
    doc.perturbation = Some(match cloud {
        Some(n) => PerturbationModel::line_cloud(eps, n)?,
        None => PerturbationModel::uniform_ball(1, eps),
    });
    let lo = x1.min(x2).min(x3) - eps - 0.25;
    let hi = x1.max(x2).max(x3) + eps + 0.35;
    doc.grid = Some(GridShape::new(vec![lo], vec![hi], vec![12])?);
    let tilde = HardSet::union(HardSet::disk(vec![x3], eps)?, HardSet::Points { points: vec![vec![x2]] });
    doc.reference_sets.insert("tilde_A".into(), tilde);
    let sign = if x3 > x1 { 1.0 } else { -1.0 };
    doc.reference_sets.insert("a_prime".into(), HardSet::half_space(vec![sign], sign * (x1 + x3) / 2.0)?);
    doc.params.insert("epsilon".into(), eps);
    Ok(doc)
}

fn gauss_mixture(means: &[Vec<f64>; 2], sigmas: [f64; 2], n: usize, eps: f64, seed: u64) -> Result<DatasetDocument> {
    let d = means[0].len();
    if d == 0 || means[1].len() != d {
        return Err(invalid("class means must share a positive dimension"));
    }
    if n == 0 {
        return Err(invalid("need at least one point per class"));
    }
    positive("epsilon", eps)?;
    let mut rng = RngState::new(seed, 0).derive(0x6175_7373).sequential();
    let (mut x, mut y) = (Vec::with_capacity(2 * n), Vec::with_capacity(2 * n));
    for (label, (mean, &sigma)) in means.iter().zip(&sigmas).enumerate() {
        positive("sigma", sigma)?;
        let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
        for _ in 0..n {
            x.push(mean.iter().map(|m| m + normal.sample(&mut rng)).collect());
            y.push(label as u8);
        }
    }
    let ds = LabeledDataset::uniform(d, x, y)?;
    let mut doc = DatasetDocument::new(&ds);
    doc.perturbation = Some(PerturbationModel::uniform_ball(d, eps));
    doc.params.insert("epsilon".into(), eps);
    Ok(doc)
}

fn homogenizing(distance: f64, eps: f64, res: usize) -> Result<DatasetDocument> {
    positive("epsilon", eps)?;
    positive("distance", distance)?;
    if !(distance < 2.0 * eps) {
        return Err(invalid("constraint distance < 2ε violated: the balls must intersect"));
    }
    if res == 0 {
        return Err(invalid("resolution must be positive"));
    }
    let (blue, red) = (vec![0.0, 0.0], vec![distance, 0.0]);
    let ds = LabeledDataset::new(2, vec![blue.clone(), red.clone()], vec![0, 1], vec![0.5, 0.5])?;
    let ratio = lens_area(distance, eps, eps) / (std::f64::consts::PI * eps * eps);
    let margin = 0.1 * eps;
    let shape = GridShape::new(
        vec![-eps - margin, -eps - margin],
        vec![distance + eps + margin, eps + margin],
        vec![res, res],
    )?;
    let mut values: Vec<f64> = (0..shape.n_cells())
        .map(|c| {
            let z = shape.cell_center(c);
            match (dist(&z, &blue) < eps, dist(&z, &red) < eps) {
                (true, true) => 0.5,
                (false, true) => 1.0,
                _ => 0.0,
            }
        })
        .collect();
    for (x, label) in [(&blue, 0.0), (&red, 1.0)] {
        if let Some(c) = shape.cell_index(x) {
            values[c] = label;
        }
    }
    let mut doc = DatasetDocument::new(&ds);
    doc.perturbation = Some(PerturbationModel::polar_cloud(eps, &POLAR_RADII, POLAR_ANGLES)?);
    doc.reference_soft.insert("u_half".into(), SoftClassifier::GridFunction { shape: shape.clone(), values });
    doc.grid = Some(shape);
    doc.params = BTreeMap::from([("epsilon".into(), eps), ("p".into(), 0.9 * ratio), ("overlap_ratio".into(), ratio)]);
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_defaults() {
        let doc = generate(&GeneratorSpec::named("three-point").unwrap(), 0).unwrap();
        let ds = doc.dataset().unwrap();
        assert_eq!(ds.y, vec![0, 0, 1]);
        assert_eq!(ds.w, vec![0.4, 0.2, 0.4]);
        assert!(doc.reference_sets.contains_key("tilde_A"));
        let g = doc.grid.unwrap();
        assert!((g.lo[0] + 0.95).abs() < 1e-12 && (g.hi[0] - 2.65).abs() < 1e-12);
    }

    #[test]
    fn constraints_are_named() {
        let spec = GeneratorSpec::ThreePoint { x1: 0.0, x2: 0.5, x3: 1.2, epsilon: 0.7, cloud_points: None };
        let err = generate(&spec, 0).unwrap_err().to_string();
        assert!(err.contains("B_ε(x1) ∩ B_ε(x3) = ∅"), "{err}");
        let spec = GeneratorSpec::TwoPointFig1 { a: 0.0, b: 1.0, epsilon: 1.0 };
        assert!(generate(&spec, 0).is_err());
    }

    #[test]
    fn spike_sliver_is_small() {
        let doc = generate(&GeneratorSpec::named("spike").unwrap(), 0).unwrap();
        assert_eq!(doc.params["sliver_mass"], 2.0 / 64.0);
        let spike = &doc.reference_sets["spike"];
        assert!(spike.contains(&[0.0, 0.0]) && spike.contains(&[3.0, 0.0]));
        assert!(!doc.reference_sets["no_spike"].contains(&[0.0, 0.0]));
    }

    #[test]
    fn mixture_is_deterministic() {
        let spec = GeneratorSpec::separable_mixture(50);
        let a = serde_json::to_string(&generate(&spec, 7).unwrap()).unwrap();
        let b = serde_json::to_string(&generate(&spec, 7).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, serde_json::to_string(&generate(&spec, 8).unwrap()).unwrap());
    }

    #[test]
    fn homogenizing_level() {
        let doc = generate(&GeneratorSpec::named("homogenizing").unwrap(), 0).unwrap();
        let p = doc.params["p"];
        assert!(p > 0.0 && p < 1.0);
        let u = &doc.reference_soft["u_half"];
        assert_eq!(u.eval(&[0.0, 0.0]), 0.0);
        assert_eq!(u.eval(&[1.0, 0.0]), 1.0);
        assert_eq!(u.eval(&[0.5, 0.0]), 0.5);
    }
}
