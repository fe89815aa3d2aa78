//! Minimisation of the hard functionals over grid masks.
//!
//! Every atom's perturbation measure is reduced once to a vector of cell
//! masses plus the mass falling outside the grid box, after which each
//! objective is a cheap function of the mask bits. Masks with at most
//! `exhaustive_max_cells` cells are enumerated; larger ones are searched by
//! simulated annealing.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{GridMask, GridShape};
use crate::error::{check_dim, invalid, PrlError, Result};
use crate::geometry::{box_distance, interval_overlap};
use crate::measures::{sample_one, EstimatorConfig, EstimatorKind, EstimatorMode, LabeledDataset, PerturbationModel};
use crate::psi::Psi;
use crate::rng::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    ProbriskPsi,
    RiskPsi,
    RiskAdv,
    RiskStd,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::ProbriskPsi => "probrisk_psi",
            Objective::RiskPsi => "risk_psi",
            Objective::RiskAdv => "risk_adv",
            Objective::RiskStd => "risk_std",
        })
    }
}

impl FromStr for Objective {
    type Err = PrlError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "probrisk_psi" | "probrisk" => Objective::ProbriskPsi,
            "risk_psi" => Objective::RiskPsi,
            "risk_adv" => Objective::RiskAdv,
            "risk_std" => Objective::RiskStd,
            _ => return Err(invalid(format!("unknown objective {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchBudget {
    pub exhaustive_max_cells: usize,
    /// Proposals per annealing chain.
    pub anneal_steps: usize,
    pub restarts: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self { exhaustive_max_cells: 24, anneal_steps: 20_000, restarts: 8, t_start: 0.05, t_end: 1e-4 }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        if self.exhaustive_max_cells > 30 {
            return Err(invalid("exhaustive search is limited to 30 cells"));
        }
        if self.restarts == 0 {
            return Err(invalid("annealing needs at least one chain"));
        }
        if !(self.t_start > 0.0 && self.t_end > 0.0 && self.t_end <= self.t_start) {
            return Err(invalid("annealing temperatures must satisfy 0 < t_end ≤ t_start"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub mask: GridMask,
    pub value: f64,
    pub exhaustive: bool,
    /// Number of objective evaluations, counting every annealing proposal.
    pub evaluations: u64,
    pub estimator: EstimatorKind,
}

/// One atom reduced to the grid.
#[derive(Clone, Debug)]
struct AtomCells {
    w: f64,
    y: u8,
    own: Option<usize>,
    /// `(cell, mass)` for cells of positive mass, in cell order.
    masses: Vec<(usize, f64)>,
    outside: f64,
    /// Cells meeting the open adversarial ball.
    ball: Vec<usize>,
    ball_leaves_box: bool,
}

/// A grid-discretised minimisation problem.
pub struct GridProblem {
    shape: GridShape,
    atoms: Vec<AtomCells>,
    /// Atoms touched by each cell, for incremental updates.
    touching: Vec<Vec<usize>>,
    objective: Objective,
    psi: Psi,
    kind: EstimatorKind,
}

fn masses_1d(x: f64, eps: f64, shape: &GridShape) -> (Vec<(usize, f64)>, f64) {
    let (lo, hi) = (x - eps, x + eps);
    let len = hi - lo;
    let masses = (0..shape.n_cells())
        .filter_map(|c| {
            let (a, b) = shape.cell_bounds(c);
            let o = interval_overlap(a[0], b[0], lo, hi);
            (o > 0.0).then_some((c, o / len))
        })
        .collect();
    let outside = (interval_overlap(f64::NEG_INFINITY, shape.lo[0], lo, hi)
        + interval_overlap(shape.hi[0], f64::INFINITY, lo, hi))
        / len;
    (masses, outside)
}

fn accumulate(shape: &GridShape, points: impl Iterator<Item = (Vec<f64>, f64)>) -> (Vec<(usize, f64)>, f64) {
    let mut dense = vec![0.0; shape.n_cells()];
    let mut outside = 0.0;
    for (z, w) in points {
        match shape.cell_index(&z) {
            Some(c) => dense[c] += w,
            None => outside += w,
        }
    }
    (dense.into_iter().enumerate().filter(|(_, m)| *m > 0.0).collect(), outside)
}

/// Cell masses of `m_x`, exact where the model allows.
fn cell_masses(
    pm: &PerturbationModel,
    x: &[f64],
    shape: &GridShape,
    cfg: &EstimatorConfig,
    stream: u64,
) -> (Vec<(usize, f64)>, f64, EstimatorKind) {
    let analytic = cfg.mode == EstimatorMode::AnalyticPreferred;
    match pm {
        PerturbationModel::DiscreteCloud { offsets } => {
            let pts = offsets.iter().map(|a| (x.iter().zip(&a.offset).map(|(p, o)| p + o).collect(), a.weight));
            let (m, o) = accumulate(shape, pts);
            (m, o, EstimatorKind::Exact)
        }
        PerturbationModel::UniformBall { epsilon, d: 1 } if analytic => {
            let (m, o) = masses_1d(x[0], *epsilon, shape);
            (m, o, EstimatorKind::Analytic)
        }
        PerturbationModel::MixtureWithData { epsilon, d, anchors } if analytic => {
            let ball = PerturbationModel::UniformBall { epsilon: *epsilon, d: *d };
            let (cont, cont_out, kind) = cell_masses(&ball, x, shape, cfg, stream);
            let near: Vec<_> = anchors.iter().filter(|a| a.w > 0.0 && crate::geometry::dist(&a.x, x) < *epsilon).collect();
            if near.is_empty() {
                return (cont, cont_out, kind);
            }
            let total: f64 = near.iter().map(|a| a.w).sum();
            let (disc, disc_out) = accumulate(shape, near.iter().map(|a| (a.x.clone(), a.w / total)));
            let mut dense = vec![0.0; shape.n_cells()];
            for (c, m) in cont {
                dense[c] += 0.5 * m;
            }
            for (c, m) in disc {
                dense[c] += 0.5 * m;
            }
            let masses = dense.into_iter().enumerate().filter(|(_, m)| *m > 0.0).collect();
            (masses, 0.5 * cont_out + 0.5 * disc_out, kind)
        }
        _ => {
            let mut draws = RngState::new(cfg.seed, stream).draws();
            let m = cfg.mc_samples;
            let pts = (0..m as u64).map(|k| (sample_one(pm, x, draws.at(k)), 1.0 / m as f64));
            let (masses, outside) = accumulate(shape, pts);
            (masses, outside, EstimatorKind::MonteCarlo)
        }
    }
}

impl GridProblem {
    /// Reduces `ds` and `pm` to the grid. `epsilon` is the adversarial radius
    /// used by [`Objective::RiskAdv`].
    pub fn new(
        ds: &LabeledDataset,
        pm: &PerturbationModel,
        shape: &GridShape,
        objective: Objective,
        psi: &Psi,
        epsilon: f64,
        cfg: &EstimatorConfig,
    ) -> Result<Self> {
        shape.validate()?;
        pm.validate()?;
        psi.validate()?;
        cfg.validate()?;
        check_dim(ds.d, shape.dim())?;
        check_dim(ds.d, pm.dim())?;
        if objective == Objective::RiskAdv && !(epsilon > 0.0) {
            return Err(invalid("adversarial radius must be positive"));
        }
        let n_cells = shape.n_cells();
        let atoms: Vec<(AtomCells, EstimatorKind)> = (0..ds.len())
            .into_par_iter()
            .map(|i| {
                let x = &ds.x[i];
                let (masses, outside, kind) = match objective {
                    Objective::ProbriskPsi | Objective::RiskPsi => cell_masses(pm, x, shape, cfg, i as u64),
                    _ => (Vec::new(), 0.0, EstimatorKind::Exact),
                };
                let (ball, ball_leaves_box) = if objective == Objective::RiskAdv {
                    let ball = (0..n_cells)
                        .filter(|&c| {
                            let (lo, hi) = shape.cell_bounds(c);
                            box_distance(x, &lo, &hi) < epsilon
                        })
                        .collect();
                    let leaves = (0..ds.d).any(|k| x[k] - epsilon < shape.lo[k] || x[k] + epsilon > shape.hi[k]);
                    (ball, leaves)
                } else {
                    (Vec::new(), false)
                };
                let kind = if objective == Objective::RiskAdv { EstimatorKind::Analytic } else { kind };
                let atom = AtomCells {
                    w: ds.w[i],
                    y: ds.y[i],
                    own: shape.cell_index(x),
                    masses,
                    outside,
                    ball,
                    ball_leaves_box,
                };
                (atom, kind)
            })
            .collect();
        let kind = atoms.iter().map(|a| a.1).fold(EstimatorKind::Exact, EstimatorKind::worst);
        let atoms: Vec<AtomCells> = atoms.into_iter().map(|a| a.0).collect();
        let mut touching = vec![Vec::new(); n_cells];
        for (i, a) in atoms.iter().enumerate() {
            let cells = a.masses.iter().map(|m| m.0).chain(a.ball.iter().copied()).chain(a.own);
            for c in cells {
                if touching[c].last() != Some(&i) {
                    touching[c].push(i);
                }
            }
        }
        Ok(Self { shape: shape.clone(), atoms, touching, objective, psi: psi.clone(), kind })
    }

    pub fn n_cells(&self) -> usize {
        self.shape.n_cells()
    }

    pub fn estimator(&self) -> EstimatorKind {
        self.kind
    }

    /// Weighted contribution of atom `i` under the mask.
    fn term(&self, i: usize, bits: &[bool]) -> f64 {
        let a = &self.atoms[i];
        let inside_own = a.own.is_some_and(|c| bits[c]);
        let wrong_label = inside_own != (a.y == 1);
        let v = match self.objective {
            Objective::RiskStd => wrong_label as u8 as f64,
            Objective::RiskAdv => {
                let hit = if a.y == 0 {
                    a.ball.iter().any(|&c| bits[c])
                } else {
                    a.ball_leaves_box || a.ball.iter().any(|&c| !bits[c])
                };
                hit as u8 as f64
            }
            Objective::RiskPsi | Objective::ProbriskPsi => {
                if self.objective == Objective::ProbriskPsi && wrong_label {
                    1.0
                } else {
                    let (mut inside, mut outside) = (0.0, a.outside);
                    for &(c, m) in &a.masses {
                        if bits[c] {
                            inside += m;
                        } else {
                            outside += m;
                        }
                    }
                    let wrong = if a.y == 0 { inside } else { outside };
                    self.psi.apply(wrong.clamp(0.0, 1.0))
                }
            }
        };
        a.w * v
    }

    /// Objective value of a mask, summed in atom order.
    pub fn evaluate(&self, bits: &[bool]) -> f64 {
        (0..self.atoms.len()).map(|i| self.term(i, bits)).sum()
    }

    fn bits_of(&self, code: u64) -> Vec<bool> {
        (0..self.n_cells()).map(|k| code >> k & 1 == 1).collect()
    }

    /// Enumerates all masks. Values within `1e-12` count as ties and go to
    /// the smallest code.
    pub fn exhaustive(&self) -> Result<OracleResult> {
        let n = self.n_cells();
        if n > 30 {
            return Err(invalid(format!("{n} cells are too many for exhaustive search")));
        }
        let total = 1u64 << n;
        let better = |a: (f64, u64), b: (f64, u64)| {
            if a.0 < b.0 - 1e-12 || ((a.0 - b.0).abs() <= 1e-12 && a.1 < b.1) {
                a
            } else {
                b
            }
        };
        let best = (0..total)
            .into_par_iter()
            .fold(
                || (f64::INFINITY, u64::MAX, vec![false; n]),
                |(bv, bc, mut bits), code| {
                    for (k, b) in bits.iter_mut().enumerate() {
                        *b = code >> k & 1 == 1;
                    }
                    let v = self.evaluate(&bits);
                    let (nv, nc) = better((v, code), (bv, bc));
                    (nv, nc, bits)
                },
            )
            .map(|(v, c, _)| (v, c))
            .reduce(|| (f64::INFINITY, u64::MAX), better);
        let bits = self.bits_of(best.1);
        Ok(OracleResult {
            value: self.evaluate(&bits),
            mask: GridMask::new(self.shape.clone(), bits)?,
            exhaustive: true,
            evaluations: total,
            estimator: self.kind,
        })
    }

    /// Simulated annealing with geometric cooling and single-cell flips;
    /// chains start from independent random masks and run in parallel.
    pub fn anneal(&self, budget: &SearchBudget, rng: RngState) -> Result<OracleResult> {
        budget.validate()?;
        let n = self.n_cells();
        let steps = budget.anneal_steps;
        let ratio = budget.t_end / budget.t_start;
        let chains: Vec<(f64, Vec<bool>)> = (0..budget.restarts)
            .into_par_iter()
            .map(|chain| {
                let mut g = rng.derive(chain as u64).sequential();
                let mut bits: Vec<bool> = (0..n).map(|_| g.random::<bool>()).collect();
                let mut terms: Vec<f64> = (0..self.atoms.len()).map(|i| self.term(i, &bits)).collect();
                let mut value: f64 = terms.iter().sum();
                let mut best = (value, bits.clone());
                for k in 0..steps {
                    let temp = budget.t_start * ratio.powf(k as f64 / steps.max(1) as f64);
                    let c = g.random_range(0..n);
                    bits[c] = !bits[c];
                    let fresh: Vec<(usize, f64)> = self.touching[c].iter().map(|&i| (i, self.term(i, &bits))).collect();
                    let delta: f64 = fresh.iter().map(|&(i, t)| t - terms[i]).sum();
                    if delta <= 0.0 || g.random::<f64>() < (-delta / temp).exp() {
                        for (i, t) in fresh {
                            terms[i] = t;
                        }
                        value += delta;
                        if value < best.0 - 1e-12 {
                            best = (value, bits.clone());
                        }
                    } else {
                        bits[c] = !bits[c];
                    }
                }
                let exact = self.evaluate(&best.1);
                (exact, best.1)
            })
            .collect();
        let (value, bits) = chains
            .into_iter()
            .reduce(|a, b| if b.0 < a.0 - 1e-12 { b } else { a })
            .expect("at least one chain");
        Ok(OracleResult {
            value,
            mask: GridMask::new(self.shape.clone(), bits)?,
            exhaustive: false,
            evaluations: (budget.restarts * (steps + 1)) as u64,
            estimator: self.kind,
        })
    }

    pub fn minimize(&self, budget: &SearchBudget, rng: RngState) -> Result<OracleResult> {
        budget.validate()?;
        if self.n_cells() <= budget.exhaustive_max_cells {
            self.exhaustive()
        } else {
            self.anneal(budget, rng)
        }
    }
}

/// Minimises `objective` over all masks on `shape`.
#[allow(clippy::too_many_arguments)]
pub fn grid_minimize(
    ds: &LabeledDataset,
    pm: &PerturbationModel,
    objective: Objective,
    psi: &Psi,
    shape: &GridShape,
    epsilon: f64,
    budget: &SearchBudget,
    cfg: &EstimatorConfig,
    rng: RngState,
) -> Result<OracleResult> {
    GridProblem::new(ds, pm, shape, objective, psi, epsilon, cfg)?.minimize(budget, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationRow {
    pub p: f64,
    pub min_probrisk: f64,
    pub min_risk_psi: f64,
    pub min_risk_adv: f64,
    pub min_risk_std: f64,
}

/// Minimal energies for `Ψ = CvarRamp(p)` at each `p`, next to the
/// `p`-independent adversarial and standard minima.
#[allow(clippy::too_many_arguments)]
pub fn interpolation_sweep(
    ds: &LabeledDataset,
    pm: &PerturbationModel,
    p_list: &[f64],
    shape: &GridShape,
    epsilon: f64,
    budget: &SearchBudget,
    cfg: &EstimatorConfig,
    rng: RngState,
) -> Result<Vec<InterpolationRow>> {
    let run = |objective, psi: &Psi, tag: u64| grid_minimize(ds, pm, objective, psi, shape, epsilon, budget, cfg, rng.derive(tag));
    let adv = run(Objective::RiskAdv, &Psi::Identity, 0)?.value;
    let std = run(Objective::RiskStd, &Psi::Identity, 1)?.value;
    p_list
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let psi = Psi::cvar_ramp(p)?;
            Ok(InterpolationRow {
                p,
                min_probrisk: run(Objective::ProbriskPsi, &psi, 2 + 2 * k as u64)?.value,
                min_risk_psi: run(Objective::RiskPsi, &psi, 3 + 2 * k as u64)?.value,
                min_risk_adv: adv,
                min_risk_std: std,
            })
        })
        .collect()
}

/// Whether the rows, ordered by decreasing `p`, approach the adversarial
/// minimum monotonically: `|min ProbRisk - min Risk_adv|` never grows.
pub fn gap_to_adv_nonincreasing(rows: &[InterpolationRow], tol: f64) -> bool {
    let mut sorted: Vec<&InterpolationRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.p.total_cmp(&a.p));
    sorted.windows(2).all(|w| {
        (w[1].min_probrisk - w[1].min_risk_adv).abs() <= (w[0].min_probrisk - w[0].min_risk_adv).abs() + tol
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::HardSet;
    use crate::functionals;

    fn three_point() -> (LabeledDataset, PerturbationModel, GridShape) {
        let ds = LabeledDataset::new(1, vec![vec![0.0], vec![0.5], vec![1.6]], vec![0, 0, 1], vec![0.4, 0.2, 0.4])
            .unwrap();
        let pm = PerturbationModel::uniform_ball(1, 0.7);
        let shape = GridShape::new(vec![-0.95], vec![2.65], vec![12]).unwrap();
        (ds, pm, shape)
    }

    #[test]
    fn adversarial_minimum() {
        let (ds, pm, shape) = three_point();
        let cfg = EstimatorConfig::default();
        let r = grid_minimize(&ds, &pm, Objective::RiskAdv, &Psi::Identity, &shape, 0.7, &SearchBudget::default(), &cfg, RngState::new(0, 0))
            .unwrap();
        assert!(r.exhaustive);
        assert!((r.value - 0.2).abs() < 1e-12, "{}", r.value);
        let direct = functionals::risk_adv(&ds, &HardSet::GridMask(r.mask.clone()), 0.7, &cfg).unwrap();
        assert!((direct.value - r.value).abs() < 1e-12);
    }

    #[test]
    fn energies_match_functionals() {
        let (ds, pm, shape) = three_point();
        let cfg = EstimatorConfig::default();
        let psi = Psi::cvar_ramp(0.3).unwrap();
        let pb = GridProblem::new(&ds, &pm, &shape, Objective::ProbriskPsi, &psi, 0.7, &cfg).unwrap();
        let rp = GridProblem::new(&ds, &pm, &shape, Objective::RiskPsi, &psi, 0.7, &cfg).unwrap();
        for code in [0u64, 1, 0b1111_0000_0000, 0b1010_1010_1010, 4095, 0b0111_1100_0000] {
            let mask = GridMask::from_code(shape.clone(), code);
            let set = HardSet::GridMask(mask.clone());
            let a = functionals::probrisk_psi(&ds, &set, &psi, &pm, &cfg).unwrap().value;
            let b = functionals::risk_psi(&ds, &set, &psi, &pm, &cfg).unwrap().value;
            assert!((pb.evaluate(&mask.bits) - a).abs() < 1e-12);
            assert!((rp.evaluate(&mask.bits) - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standard_minimum_is_bayes_risk() {
        let ds = LabeledDataset::uniform(1, vec![vec![0.1], vec![0.2], vec![0.3], vec![0.9]], vec![0, 1, 1, 0]).unwrap();
        let pm = PerturbationModel::uniform_ball(1, 0.1);
        let shape = GridShape::new(vec![0.0], vec![1.0], vec![2]).unwrap();
        let cfg = EstimatorConfig::default();
        let r = grid_minimize(&ds, &pm, Objective::RiskStd, &Psi::Identity, &shape, 0.1, &SearchBudget::default(), &cfg, RngState::new(0, 0))
            .unwrap();
        assert!((r.value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn annealing_never_beats_enumeration() {
        let (ds, pm, shape) = three_point();
        let cfg = EstimatorConfig::default();
        let psi = Psi::cvar_ramp(0.2).unwrap();
        let pb = GridProblem::new(&ds, &pm, &shape, Objective::ProbriskPsi, &psi, 0.7, &cfg).unwrap();
        let ex = pb.exhaustive().unwrap();
        let budget = SearchBudget { anneal_steps: 5000, restarts: 4, ..SearchBudget::default() };
        let an = pb.anneal(&budget, RngState::new(3, 0)).unwrap();
        assert!(an.value >= ex.value - 1e-12);
        assert_eq!(an.evaluations, 4 * 5001);
    }
}
