//! CVaR-SGD training of soft classifiers.
//!
//! Each sample runs `T` subgradient steps on the CVaR auxiliary variable α,
//! redrawing `M` perturbations per step, then estimates
//! `S = α + E[(ℓ - α)_+] / p` from the last draws. The modified variant uses
//! the CVaR gradient only when `S` exceeds the clean loss and the plain loss
//! gradient otherwise; the original variant always uses the CVaR gradient.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{sigmoid, SoftClassifier};
use crate::error::{check_dim, invalid, PrlError, Result};
use crate::functionals::cvar_with_alpha;
use crate::measures::{sample_perturbations, LabeledDataset, PerturbationModel};
use crate::quad::pairwise_sum;
use crate::rng::RngState;

use super::accuracy::{adversarial_surrogate_accuracy, clean_accuracy, prob_acc};

/// Smallest probability fed to a logarithm when a classifier has no logit.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    SgdMomentum { beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Original,
    Modified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Binary cross-entropy.
    Bce,
    /// `|u - y|`.
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub p: f64,
    pub epsilon: f64,
    /// Perturbations per sample.
    pub m: usize,
    /// Inner α steps.
    pub t: usize,
    pub eta_alpha: f64,
    pub eta: f64,
    pub batch: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub variant: Variant,
    pub loss: Loss,
    /// Levels at which ProbAcc is reported every epoch.
    #[serde(default = "default_levels")]
    pub prob_acc_levels: Vec<f64>,
    /// Perturbations per point for the accuracy metrics.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
}

fn default_levels() -> Vec<f64> {
    vec![0.1, 0.05, 0.01]
}

fn default_eval_samples() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p: 0.1,
            epsilon: 0.5,
            m: 20,
            t: 5,
            eta_alpha: 1.0,
            eta: 0.1,
            batch: 50,
            epochs: 50,
            optimizer: Optimizer::Sgd,
            variant: Variant::Modified,
            loss: Loss::Bce,
            prob_acc_levels: default_levels(),
            eval_samples: default_eval_samples(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(invalid(format!("p = {} outside (0, 1)", self.p)));
        }
        let positive = [self.epsilon, self.eta_alpha, self.eta];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("epsilon and step sizes must be positive"));
        }
        if self.m == 0 || self.t == 0 || self.batch == 0 || self.epochs == 0 || self.eval_samples == 0 {
            return Err(invalid("sample counts, steps, batch size and epochs must be positive"));
        }
        if let Optimizer::SgdMomentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(invalid("momentum must lie in [0, 1)"));
            }
        }
        if self.prob_acc_levels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("ProbAcc levels must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Result of the iterative inner problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerAlpha {
    pub alpha: f64,
    /// Steps where the subgradient was clipped to `1/η_α`.
    pub capped_steps: usize,
}

fn alpha_step(losses: &[f64], alpha: f64, p: f64, eta_alpha: f64) -> (f64, bool) {
    let m = losses.len() as f64;
    let above = losses.iter().filter(|l| **l >= alpha).count() as f64;
    let g = 1.0 - above / (p * m);
    let cap = 1.0 / eta_alpha;
    let capped = g.abs() > cap;
    (alpha - eta_alpha * g.clamp(-cap, cap), capped)
}

/// `T` subgradient steps on `α ↦ α + E[(ℓ - α)_+]/p` from `alpha0`, with a
/// fixed loss sample.
pub fn cvar_inner_alpha(losses: &[f64], p: f64, t: usize, eta_alpha: f64, alpha0: f64) -> Result<InnerAlpha> {
    if losses.is_empty() {
        return Err(invalid("no losses"));
    }
    let mut alpha = alpha0;
    let mut capped_steps = 0;
    for _ in 0..t {
        let (next, capped) = alpha_step(losses, alpha, p, eta_alpha);
        alpha = next;
        capped_steps += capped as usize;
    }
    Ok(InnerAlpha { alpha, capped_steps })
}

/// Exact empirical CVaR of equally weighted losses and its minimising α.
pub fn cvar_inner_exact(losses: &[f64], p: f64) -> Result<(f64, f64)> {
    let w = 1.0 / losses.len() as f64;
    let values: Vec<(f64, f64)> = losses.iter().map(|l| (*l, w)).collect();
    cvar_with_alpha(&values, p)
}

/// `α + (1/(pM)) Σ (ℓ_k - α)_+`.
pub fn cvar_estimate(losses: &[f64], alpha: f64, p: f64) -> f64 {
    let excess: Vec<f64> = losses.iter().map(|l| (l - alpha).max(0.0)).collect();
    alpha + pairwise_sum(&excess) / (p * losses.len() as f64)
}

/// Loss of `u` at `x` and its parameter gradient.
pub fn loss_and_grad(u: &SoftClassifier, x: &[f64], y: u8, loss: Loss) -> (f64, Vec<f64>) {
    let yf = y as f64;
    match loss {
        Loss::Bce => {
            if let Some((z, mut g)) = u.logit_and_grad(x) {
                // -log σ(z) = softplus(-z), -log(1 - σ(z)) = softplus(z)
                let value = if y == 1 { softplus(-z) } else { softplus(z) };
                let scale = sigmoid(z) - yf;
                g.iter_mut().for_each(|v| *v *= scale);
                (value, g)
            } else {
                let (v, mut g) = u.eval_and_grad(x);
                let v = v.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                let value = -(yf * v.ln() + (1.0 - yf) * (1.0 - v).ln());
                let scale = (v - yf) / (v * (1.0 - v));
                g.iter_mut().for_each(|d| *d *= scale);
                (value, g)
            }
        }
        Loss::Absolute => {
            let (v, mut g) = u.eval_and_grad(x);
            if y == 0 {
                (v, g)
            } else {
                g.iter_mut().for_each(|d| *d = -*d);
                (1.0 - v, g)
            }
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Per-sample objective with α and the perturbations frozen: `Ŝ` for the
/// original variant, `max{ℓ(x), Ŝ}` for the modified one. Returns the value,
/// the gradient the algorithm applies, and whether the CVaR branch was taken.
pub fn per_sample_objective(
    u: &SoftClassifier,
    x: &[f64],
    y: u8,
    perturbed: &[Vec<f64>],
    alpha: f64,
    cfg: &TrainConfig,
) -> (f64, Vec<f64>, bool) {
    let m = perturbed.len() as f64;
    let evals: Vec<(f64, Vec<f64>)> = perturbed.iter().map(|z| loss_and_grad(u, z, y, cfg.loss)).collect();
    let losses: Vec<f64> = evals.iter().map(|e| e.0).collect();
    let s = cvar_estimate(&losses, alpha, cfg.p);
    let cvar_grad = || {
        let mut g = vec![0.0; u.n_params()];
        for (l, dl) in &evals {
            if *l > alpha {
                g.iter_mut().zip(dl).for_each(|(a, b)| *a += b / (cfg.p * m));
            }
        }
        g
    };
    match cfg.variant {
        Variant::Original => (s, cvar_grad(), true),
        Variant::Modified => {
            let (clean, clean_grad) = loss_and_grad(u, x, y, cfg.loss);
            if s > clean {
                (s, cvar_grad(), true)
            } else {
                (clean, clean_grad, false)
            }
        }
    }
}

/// Velocity carried between steps by momentum SGD.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub classifier: SoftClassifier,
    /// `true` where a sample used the CVaR gradient.
    pub cvar_branch: Vec<bool>,
    /// Per-sample objective values at the pre-step parameters.
    pub objectives: Vec<f64>,
    /// Per-sample `Ŝ` values at the pre-step parameters.
    pub s_values: Vec<f64>,
    /// Inner steps where the α subgradient was clipped.
    pub capped_steps: usize,
}

/// One optimizer update on a weighted minibatch. Sample `j` draws its
/// perturbations from `rng.derive(j)`.
pub fn prl_step(
    batch: &[(&[f64], u8, f64)],
    u: &SoftClassifier,
    pm: &PerturbationModel,
    cfg: &TrainConfig,
    state: &mut OptimizerState,
    rng: RngState,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let per_sample = batch
        .par_iter()
        .enumerate()
        .map(|(j, &(x, y, _))| -> Result<_> {
            let stream = rng.derive(j as u64);
            let mut alpha = f64::NAN;
            let mut capped = 0;
            let mut draws = Vec::new();
            for step in 0..cfg.t {
                draws = sample_perturbations(pm, x, cfg.m, stream.derive(step as u64))?;
                let losses: Vec<f64> = draws.iter().map(|z| loss_and_grad(u, z, y, cfg.loss).0).collect();
                if step == 0 {
                    alpha = pairwise_sum(&losses) / losses.len() as f64;
                }
                let (next, c) = alpha_step(&losses, alpha, cfg.p, cfg.eta_alpha);
                alpha = next;
                capped += c as usize;
            }
            let (value, grad, branch) = per_sample_objective(u, x, y, &draws, alpha, cfg);
            let losses: Vec<f64> = draws.iter().map(|z| loss_and_grad(u, z, y, cfg.loss).0).collect();
            Ok((value, grad, branch, cvar_estimate(&losses, alpha, cfg.p), capped))
        })
        .collect::<Result<Vec<_>>>()?;

    let total_w: f64 = batch.iter().map(|b| b.2).sum();
    let n = u.n_params();
    let mut g = vec![0.0; n];
    for ((_, gj, _, _, _), &(_, _, w)) in per_sample.iter().zip(batch) {
        g.iter_mut().zip(gj).for_each(|(a, b)| *a += w / total_w * b);
    }
    let v = match cfg.optimizer {
        Optimizer::Sgd => g,
        Optimizer::SgdMomentum { beta } => {
            if state.velocity.len() != n {
                state.velocity = vec![0.0; n];
            }
            state.velocity.iter_mut().zip(&g).for_each(|(v, gi)| *v = beta * *v + gi);
            state.velocity.clone()
        }
    };
    let theta: Vec<f64> = u.params().iter().zip(&v).map(|(t, vi)| t - cfg.eta * vi).collect();
    let capped_steps: usize = per_sample.iter().map(|s| s.4).sum();
    if capped_steps > 0 {
        tracing::debug!(capped_steps, "inner α subgradient clipped");
    }
    Ok(StepOutcome {
        classifier: u.with_params(&theta)?,
        cvar_branch: per_sample.iter().map(|s| s.2).collect(),
        objectives: per_sample.iter().map(|s| s.0).collect(),
        s_values: per_sample.iter().map(|s| s.3).collect(),
        capped_steps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub clean_accuracy: f64,
    /// `(level, ProbAcc(level))`.
    pub prob_acc: Vec<(f64, f64)>,
    pub adv_surrogate_accuracy: f64,
    pub cvar_branch_fraction: f64,
    pub capped_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub seed: u64,
    pub initial_objective: f64,
    pub epochs: Vec<EpochRecord>,
    pub final_classifier: SoftClassifier,
}

impl TrainTrace {
    /// One CSV row per epoch.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["epoch", "objective", "clean_accuracy"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        if let Some(first) = self.epochs.first() {
            header.extend(first.prob_acc.iter().map(|(p, _)| format!("prob_acc_{p}")));
        }
        header.extend(["adv_surrogate_accuracy", "cvar_branch_fraction", "capped_steps"].map(String::from));
        let mut out = header.join(",") + "\n";
        for r in &self.epochs {
            let mut row = vec![r.epoch.to_string(), fmt12(r.objective), fmt12(r.clean_accuracy)];
            row.extend(r.prob_acc.iter().map(|(_, a)| fmt12(*a)));
            row.push(fmt12(r.adv_surrogate_accuracy));
            row.push(fmt12(r.cvar_branch_fraction));
            row.push(r.capped_steps.to_string());
            out += &(row.join(",") + "\n");
        }
        out
    }
}

/// A float with 12 significant digits.
pub fn fmt12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 11 - v.abs().log10().floor() as i32;
    if (0..=20).contains(&digits) {
        let s = format!("{:.*}", digits as usize, v);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.11e}")
    }
}

/// Training objective on the whole dataset with fixed evaluation draws and
/// the exact empirical CVaR.
pub fn training_objective(
    ds: &LabeledDataset,
    u: &SoftClassifier,
    pm: &PerturbationModel,
    cfg: &TrainConfig,
    rng: RngState,
) -> Result<f64> {
    let terms = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let draws = sample_perturbations(pm, &ds.x[i], cfg.m, rng.derive(i as u64))?;
            let losses: Vec<f64> = draws.iter().map(|z| loss_and_grad(u, z, ds.y[i], cfg.loss).0).collect();
            let (c, _) = cvar_inner_exact(&losses, cfg.p)?;
            let value = match cfg.variant {
                Variant::Original => c,
                Variant::Modified => c.max(loss_and_grad(u, &ds.x[i], ds.y[i], cfg.loss).0),
            };
            Ok(ds.w[i] * value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

/// Full training run. The divergence guard aborts when the objective stays
/// above ten times its initial value for three consecutive epochs.
pub fn train(
    ds: &LabeledDataset,
    u0: &SoftClassifier,
    pm: &PerturbationModel,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainTrace> {
    cfg.validate()?;
    u0.validate()?;
    if let Some(d) = u0.dim() {
        check_dim(ds.d, d)?;
    }
    check_dim(ds.d, pm.dim())?;
    if u0.n_params() == 0 {
        return Err(invalid("classifier has no trainable parameters"));
    }
    let root = RngState::new(seed, 0);
    let eval_rng = root.derive(u64::MAX);
    let initial = training_objective(ds, u0, pm, cfg, eval_rng)?;
    let mut u = u0.clone();
    let mut state = OptimizerState::default();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut above = 0;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for epoch in 0..cfg.epochs {
        let epoch_rng = root.derive(epoch as u64);
        order.shuffle(&mut epoch_rng.derive(u64::MAX).sequential());
        let (mut branch, mut seen, mut capped) = (0usize, 0usize, 0usize);
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<(&[f64], u8, f64)> = chunk.iter().map(|&i| (ds.x[i].as_slice(), ds.y[i], ds.w[i])).collect();
            let out = prl_step(&batch, &u, pm, cfg, &mut state, epoch_rng.derive(b as u64))?;
            branch += out.cvar_branch.iter().filter(|f| **f).count();
            seen += chunk.len();
            capped += out.capped_steps;
            u = out.classifier;
        }
        let objective = training_objective(ds, &u, pm, cfg, eval_rng)?;
        if !objective.is_finite() {
            return Err(PrlError::Diverged(format!("objective became {objective} in epoch {epoch}")));
        }
        above = if objective > 10.0 * initial { above + 1 } else { 0 };
        if above >= 3 {
            return Err(PrlError::Diverged(format!(
                "objective {objective} above ten times the initial {initial} for three epochs (epoch {epoch})"
            )));
        }
        let metrics_rng = eval_rng.derive(1);
        let prob = cfg
            .prob_acc_levels
            .iter()
            .map(|&p| Ok((p, prob_acc(ds, &u.clone().into(), pm, p, cfg.eval_samples, metrics_rng)?)))
            .collect::<Result<Vec<_>>>()?;
        records.push(EpochRecord {
            epoch,
            objective,
            clean_accuracy: clean_accuracy(ds, &u.clone().into()),
            prob_acc: prob,
            adv_surrogate_accuracy: adversarial_surrogate_accuracy(
                ds,
                &u.clone().into(),
                pm,
                cfg.eval_samples,
                metrics_rng,
            )?,
            cvar_branch_fraction: branch as f64 / seen as f64,
            capped_steps: capped,
        });
        tracing::info!(epoch, objective, "epoch finished");
    }
    Ok(TrainTrace { seed, initial_objective: initial, epochs: records, final_classifier: u })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_alpha_examples() {
        let c = [0.3; 8];
        let (v, a) = cvar_inner_exact(&c, 0.2).unwrap();
        assert!((v - 0.3).abs() < 1e-15 && a == 0.3);
        let it = cvar_inner_alpha(&c, 0.2, 5, 0.1, 0.0).unwrap();
        assert!((it.alpha - 0.3).abs() < 0.3);

        let half: Vec<f64> = (0..10).map(|k| if k < 5 { 0.0 } else { 1.0 }).collect();
        let (v, a) = cvar_inner_exact(&half, 0.5).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(a, 1.0);

        let ten: Vec<f64> = (0..10).map(|k| k as f64 / 10.0).collect();
        let (v, _) = cvar_inner_exact(&ten, 0.2).unwrap();
        assert!((v - 0.85).abs() < 1e-12, "{v}");
    }

    #[test]
    fn inner_step_is_capped() {
        // g = 1 - 20/(0.01·20) = -99 is clipped to -1/η_α twice; at α = 2
        // no loss reaches α and the plain step g = 1 applies
        let losses = [1.0; 20];
        let it = cvar_inner_alpha(&losses, 0.01, 3, 0.1, 0.0).unwrap();
        assert_eq!(it.capped_steps, 2);
        assert!((it.alpha - 1.9).abs() < 1e-12);
    }

    #[test]
    fn robust_batch_takes_standard_branch() {
        // σ(z) rounds to exactly 1 here, so every loss is exactly zero and
        // an even number of capped α steps returns α to 0
        let u = SoftClassifier::LinearSigmoid { weights: vec![100.0, 0.0], bias: 0.0 };
        let cfg = TrainConfig { loss: Loss::Absolute, t: 4, ..TrainConfig::default() };
        let pm = PerturbationModel::uniform_ball(2, 0.1);
        let (x1, x2) = ([2.0, 0.0], [1.5, 0.3]);
        let batch: Vec<(&[f64], u8, f64)> = vec![(&x1, 1, 0.5), (&x2, 1, 0.5)];
        let mut st = OptimizerState::default();
        let out = prl_step(&batch, &u, &pm, &cfg, &mut st, RngState::new(1, 0)).unwrap();
        assert!(out.cvar_branch.iter().all(|b| !b));
    }

    #[test]
    fn fmt12_digits() {
        assert_eq!(fmt12(0.2), "0.2");
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt12(12345.678901234), "12345.6789012");
    }
}
