//! Subcommand arguments and their execution.
//!
//! Every argument struct doubles as the JSON schema of the matching task in
//! a `run --config` document, so defaults are taken from the clap
//! definitions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use prl_core::asymptotics::{epsilon_sweep, DensityField, SmoothSet2D};
use prl_core::classifiers::{Classifier, GridShape, SoftClassifier};
use prl_core::functionals::{self, RiskReport, SoftRiskKind};
use prl_core::generators::{generate, GeneratorSpec};
use prl_core::invariants::run_all;
use prl_core::optimize::oracle::{gap_to_adv_nonincreasing, grid_minimize, interpolation_sweep, Objective, SearchBudget};
use prl_core::optimize::training::{fmt12, train, TrainConfig, Variant};
use prl_core::optimize::patho_scan;
use prl_core::{DatasetDocument, EstimatorConfig, EstimatorMode, PerturbationModel, PrlError, Psi, RadialProfile, RngState};

/// Implements `Default` by parsing an empty argument list, so JSON configs
/// share the command-line defaults.
macro_rules! clap_default {
    ($($t:ty),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                use clap::FromArgMatches;
                let cmd = <$t as Args>::augment_args(clap::Command::new("defaults"));
                <$t>::from_arg_matches(&cmd.get_matches_from(["defaults"])).expect("every argument has a default")
            }
        }
    )*};
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Global settings shared by every task.
#[derive(Clone, Debug)]
pub struct Globals {
    pub seed: u64,
    pub format: Format,
}

/// Result of a task: the main artifact and any failed assertions.
pub struct Outcome {
    pub text: String,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Serialize)]
pub struct Failure {
    pub check: String,
    pub detail: String,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Self { text, failures: Vec::new() }
    }
}

fn schema(msg: impl Into<String>) -> anyhow::Error {
    PrlError::InvalidInput(msg.into()).into()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_document(dataset: &Option<PathBuf>, generator: &Option<String>, fallback: &str, seed: u64) -> Result<DatasetDocument> {
    match (dataset, generator) {
        (Some(_), Some(_)) => Err(schema("give either --dataset or --generator, not both")),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(DatasetDocument::from_json(&text).with_context(|| format!("loading {}", path.display()))?)
        }
        (None, name) => Ok(generate(&GeneratorSpec::named(name.as_deref().unwrap_or(fallback))?, seed)?),
    }
}

fn perturbation(doc: &DatasetDocument) -> Result<PerturbationModel> {
    doc.perturbation.clone().ok_or_else(|| schema("dataset has no perturbation model"))
}

/// Adversarial radius: explicit, from the dataset parameters, or the
/// support radius of the perturbation model.
fn adversarial_radius(explicit: Option<f64>, doc: &DatasetDocument, pm: &PerturbationModel) -> f64 {
    explicit.or_else(|| doc.params.get("epsilon").copied()).unwrap_or_else(|| pm.radius())
}

fn estimator(seed: u64, mc_samples: usize, tv_levels: usize, mode: &str) -> Result<EstimatorConfig> {
    let mode = match mode {
        "analytic-preferred" => EstimatorMode::AnalyticPreferred,
        "mc-only" => EstimatorMode::McOnly,
        other => return Err(schema(format!("unknown estimator mode {other:?}"))),
    };
    let cfg = EstimatorConfig { mc_samples, tv_levels, seed, mode };
    cfg.validate()?;
    Ok(cfg)
}

fn pick_classifier(
    doc: &DatasetDocument,
    set: &Option<String>,
    soft: &Option<String>,
    file: &Option<PathBuf>,
) -> Result<Classifier> {
    match (set, soft, file) {
        (Some(name), None, None) => doc
            .reference_sets
            .get(name)
            .cloned()
            .map(Classifier::Hard)
            .ok_or_else(|| schema(format!("dataset has no reference set {name:?}"))),
        (None, Some(name), None) => doc
            .reference_soft
            .get(name)
            .cloned()
            .map(Classifier::Soft)
            .ok_or_else(|| schema(format!("dataset has no reference classifier {name:?}"))),
        (None, None, Some(path)) => {
            let c: Classifier = read_json(path)?;
            c.validate()?;
            Ok(c)
        }
        _ => Err(schema("give exactly one of --set, --soft or --classifier")),
    }
}

fn grid_for(doc: &DatasetDocument, cells: Option<usize>) -> Result<GridShape> {
    let grid = doc.grid.clone().ok_or_else(|| schema("dataset has no grid; supply one in the dataset file"))?;
    Ok(match cells {
        Some(n) => GridShape::new(grid.lo.clone(), grid.hi.clone(), vec![n; grid.dim()])?,
        None => grid,
    })
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",") + "\n";
    for r in rows {
        out += &(r.join(",") + "\n");
    }
    out
}

fn opt12(v: Option<f64>) -> String {
    v.map(fmt12).unwrap_or_default()
}

fn json(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

// ---------------------------------------------------------------- generate

#[derive(Args, Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    /// Generator name with default parameters: two-point-fig1, spike-fig1,
    /// three-point, gauss-mixture, homogenizing.
    #[arg(long, default_value = "three-point")]
    pub generator: String,
    /// JSON generator specification; overrides --generator.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

pub fn run_generate(args: &GenerateArgs, g: &Globals) -> Result<Outcome> {
    let spec = match &args.spec {
        Some(path) => read_json(path)?,
        None => GeneratorSpec::named(&args.generator)?,
    };
    Ok(Outcome::ok(json(&generate(&spec, g.seed)?)?))
}

// -------------------------------------------------------------------- eval

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Functional {
    Probrisk,
    Probper,
    RiskPsi,
    RiskAdv,
    RiskStd,
    MaxForm,
    CvarForm,
    Probj,
    Probtv,
    SPsi,
    Probsrisk,
    SoftRiskStd,
}

#[derive(Args, Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<String>,
    /// Name of a reference set stored in the dataset.
    #[arg(long)]
    pub set: Option<String>,
    /// Name of a reference soft classifier stored in the dataset.
    #[arg(long)]
    pub soft: Option<String>,
    /// JSON file holding a hard set or a soft classifier.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// esssup0, identity, indicator:<p>, cvar:<p> or pwl:<t>,<v>;...
    #[arg(long, default_value = "esssup0")]
    pub psi: String,
    #[arg(long, value_enum, default_value = "probrisk")]
    pub functional: Functional,
    /// Adversarial radius for risk-adv.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// CVaR level for cvar-form.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = 4096)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 64)]
    pub tv_levels: usize,
    #[arg(long, default_value = "analytic-preferred")]
    pub mode: String,
}

pub fn run_eval(args: &EvalArgs, g: &Globals) -> Result<Outcome> {
    let doc = load_document(&args.dataset, &args.generator, "three-point", g.seed)?;
    let ds = doc.dataset()?;
    let cfg = estimator(g.seed, args.mc_samples, args.tv_levels, &args.mode)?;
    let psi: Psi = args.psi.parse()?;
    let classifier = pick_classifier(&doc, &args.set, &args.soft, &args.classifier)?;
    let pm = || perturbation(&doc);
    use Functional as F;
    let report = match (args.functional, &classifier) {
        (F::Probrisk, Classifier::Hard(a)) => functionals::probrisk_psi(&ds, a, &psi, &pm()?, &cfg)?,
        (F::Probper, Classifier::Hard(a)) => functionals::probper_psi(&ds, a, &psi, &pm()?, &cfg)?,
        (F::RiskPsi, Classifier::Hard(a)) => functionals::risk_psi(&ds, a, &psi, &pm()?, &cfg)?,
        (F::RiskStd, Classifier::Hard(a)) => functionals::risk_std(&ds, a)?,
        (F::RiskAdv, Classifier::Hard(a)) => {
            let pm = pm()?;
            functionals::risk_adv(&ds, a, adversarial_radius(args.epsilon, &doc, &pm), &cfg)?
        }
        (F::MaxForm, Classifier::Hard(a)) => {
            plain(functionals::probrisk_psi_max_form(&ds, a, &psi, &pm()?, &cfg)?, &cfg)
        }
        (F::CvarForm, Classifier::Hard(a)) => {
            let p = args.p.ok_or_else(|| schema("cvar-form needs --p"))?;
            plain(functionals::probrisk_cvar_form(&ds, a, p, &pm()?, &cfg)?, &cfg)
        }
        (F::Probj, Classifier::Soft(u)) => plain(functionals::probj_psi(&ds, u, &psi, &pm()?, &cfg)?, &cfg),
        (F::Probtv, Classifier::Soft(u)) => plain(functionals::probtv_psi(&ds, u, &psi, &pm()?, &cfg)?, &cfg),
        (F::SPsi, Classifier::Soft(u)) => {
            plain(functionals::soft_risk_psi(&ds, u, &psi, &pm()?, &cfg, SoftRiskKind::SPsi)?, &cfg)
        }
        (F::Probsrisk, Classifier::Soft(u)) => {
            plain(functionals::soft_risk_psi(&ds, u, &psi, &pm()?, &cfg, SoftRiskKind::ProbSRisk)?, &cfg)
        }
        (F::SoftRiskStd, Classifier::Soft(u)) => plain(functionals::soft_risk_std(&ds, u)?, &cfg),
        (f, _) => {
            let want = if matches!(f, F::Probj | F::Probtv | F::SPsi | F::Probsrisk | F::SoftRiskStd) {
                "soft"
            } else {
                "hard"
            };
            return Err(schema(format!("functional {f:?} needs a {want} classifier")));
        }
    };
    let name = args.functional.to_possible_value().expect("no skipped variants").get_name().to_string();
    let text = match g.format {
        Format::Json => json(&serde_json::json!({ "functional": name, "report": report }))?,
        Format::Csv => csv_table(
            &["functional", "value", "std_part", "per_part", "estimator", "stderr"],
            &[vec![
                name,
                fmt12(report.value),
                opt12(report.std_part),
                opt12(report.per_part),
                serde_json::to_value(report.estimator)?.as_str().unwrap_or_default().to_string(),
                opt12(report.stderr),
            ]],
        ),
    };
    Ok(Outcome::ok(text))
}

/// Wraps a bare value; soft functionals are tagged with the estimator the
/// configuration would use at worst.
fn plain(value: f64, cfg: &EstimatorConfig) -> RiskReport {
    let estimator = match cfg.mode {
        EstimatorMode::McOnly => prl_core::EstimatorKind::MonteCarlo,
        EstimatorMode::AnalyticPreferred => prl_core::EstimatorKind::Exact,
    };
    RiskReport { value, std_part: None, per_part: None, estimator, stderr: None }
}

// ------------------------------------------------------------ oracle/sweep

#[derive(Args, Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long, value_parser = parse_objective, default_value = "risk_adv")]
    pub objective: Objective,
    #[arg(long, default_value = "esssup0")]
    pub psi: String,
    /// Cells per axis; defaults to the dataset grid.
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 20_000)]
    pub anneal_steps: usize,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long, default_value_t = 4096)]
    pub mc_samples: usize,
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    s.parse().map_err(|e: PrlError| e.to_string())
}

fn budget(anneal_steps: usize, restarts: usize) -> SearchBudget {
    SearchBudget { anneal_steps, restarts, ..SearchBudget::default() }
}

fn mask_string(bits: &[bool]) -> String {
    bits.iter().map(|b| if *b { '1' } else { '0' }).collect()
}

pub fn run_oracle(args: &OracleArgs, g: &Globals) -> Result<Outcome> {
    let doc = load_document(&args.dataset, &args.generator, "three-point", g.seed)?;
    let ds = doc.dataset()?;
    let pm = perturbation(&doc)?;
    let shape = grid_for(&doc, args.cells)?;
    let psi: Psi = args.psi.parse()?;
    let cfg = estimator(g.seed, args.mc_samples, 64, "analytic-preferred")?;
    let eps = adversarial_radius(args.epsilon, &doc, &pm);
    let r = grid_minimize(
        &ds,
        &pm,
        args.objective,
        &psi,
        &shape,
        eps,
        &budget(args.anneal_steps, args.restarts),
        &cfg,
        RngState::new(g.seed, 0),
    )?;
    let text = match g.format {
        Format::Json => json(&r)?,
        Format::Csv => csv_table(
            &["objective", "value", "exhaustive", "evaluations", "estimator", "mask"],
            &[vec![
                args.objective.to_string(),
                fmt12(r.value),
                r.exhaustive.to_string(),
                r.evaluations.to_string(),
                serde_json::to_value(r.estimator)?.as_str().unwrap_or_default().to_string(),
                mask_string(&r.mask.bits),
            ]],
        ),
    };
    Ok(Outcome::ok(text))
}

#[derive(Args, Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.9,0.5,0.1,0.01")]
    pub p_list: Vec<f64>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 20_000)]
    pub anneal_steps: usize,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long, default_value_t = 4096)]
    pub mc_samples: usize,
}

pub fn run_sweep(args: &SweepArgs, g: &Globals) -> Result<Outcome> {
    let doc = load_document(&args.dataset, &args.generator, "three-point", g.seed)?;
    let ds = doc.dataset()?;
    let pm = perturbation(&doc)?;
    let shape = grid_for(&doc, args.cells)?;
    let cfg = estimator(g.seed, args.mc_samples, 64, "analytic-preferred")?;
    let eps = adversarial_radius(args.epsilon, &doc, &pm);
    let b = budget(args.anneal_steps, args.restarts);
    let rows = interpolation_sweep(&ds, &pm, &args.p_list, &shape, eps, &b, &cfg, RngState::new(g.seed, 0))?;
    let mut failures = Vec::new();
    if shape.n_cells() <= b.exhaustive_max_cells && !gap_to_adv_nonincreasing(&rows, 1e-12) {
        failures.push(Failure {
            check: "gap_to_adv_nonincreasing".into(),
            detail: "|min ProbRisk - min Risk_adv| grows as p decreases".into(),
        });
    }
    let text = match g.format {
        Format::Json => json(&rows)?,
        Format::Csv => csv_table(
            &["p", "min_probrisk", "min_risk_psi", "min_risk_adv", "min_risk_std"],
            &rows
                .iter()
                .map(|r| {
                    [r.p, r.min_probrisk, r.min_risk_psi, r.min_risk_adv, r.min_risk_std].into_iter().map(fmt12).collect()
                })
                .collect::<Vec<_>>(),
        ),
    };
    Ok(Outcome { text, failures })
}

// ------------------------------------------------------------- asymptotics

#[derive(Args, Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsymptoticsArgs {
    /// disk or half-plane.
    #[arg(long, default_value = "disk")]
    pub set: String,
    /// Disk radius, or the length of the half-plane boundary segment.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    #[arg(long, default_value = "identity")]
    pub psi: String,
    /// uniform, epanechnikov or cone.
    #[arg(long, default_value = "uniform")]
    pub profile: String,
    /// Strictly decreasing list of radii.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05,0.02")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub rho0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho1: f64,
    #[arg(long, default_value_t = 20)]
    pub cells_per_eps: usize,
    /// Fail unless the last relative error is at most this value.
    #[arg(long)]
    pub max_rel_error: Option<f64>,
}

pub fn run_asymptotics(args: &AsymptoticsArgs, g: &Globals) -> Result<Outcome> {
    let set = match args.set.as_str() {
        "disk" => SmoothSet2D::Disk { center: [0.0, 0.0], radius: args.radius },
        "half-plane" => SmoothSet2D::HalfPlane {
            normal: [1.0, 0.0],
            offset: 0.0,
            s_min: -args.radius / 2.0,
            s_max: args.radius / 2.0,
        },
        other => return Err(schema(format!("unknown set {other:?}; expected disk or half-plane"))),
    };
    let profile = match args.profile.as_str() {
        "uniform" => RadialProfile::Uniform,
        "epanechnikov" => RadialProfile::Epanechnikov,
        "cone" => RadialProfile::Cone,
        other => return Err(schema(format!("unknown profile {other:?}"))),
    };
    let psi: Psi = args.psi.parse()?;
    let field = DensityField { cells_per_eps: args.cells_per_eps, ..DensityField::constant(args.rho0, args.rho1) };
    let rows = epsilon_sweep(&set, &field, &psi, profile, &args.eps)?;
    let mut failures = Vec::new();
    if let (Some(limit), Some(last)) = (args.max_rel_error, rows.last()) {
        if !(last.rel_error <= limit) {
            failures.push(Failure {
                check: "final_rel_error".into(),
                detail: format!("rel_error {} at ε = {} exceeds {limit}", last.rel_error, last.epsilon),
            });
        }
    }
    let text = match g.format {
        Format::Json => json(&rows)?,
        Format::Csv => csv_table(
            &["epsilon", "scaled_per", "limit", "rel_error"],
            &rows
                .iter()
                .map(|r| [r.epsilon, r.scaled_per, r.limit, r.rel_error].into_iter().map(fmt12).collect())
                .collect::<Vec<_>>(),
        ),
    };
    Ok(Outcome { text, failures })
}

// ------------------------------------------------------------------- train

#[derive(Args, Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<String>,
    /// JSON training configuration; unset fields are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// linear or mlp1.
    #[arg(long, default_value = "linear")]
    pub model: String,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    /// original or modified; overrides the configuration.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    /// Also write the final classifier as JSON to this path.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

pub fn run_train(args: &TrainArgs, g: &Globals) -> Result<Outcome> {
    let doc = load_document(&args.dataset, &args.generator, "gauss-mixture", g.seed)?;
    let ds = doc.dataset()?;
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = &args.variant {
        cfg.variant = match v.as_str() {
            "original" => Variant::Original,
            "modified" => Variant::Modified,
            other => return Err(schema(format!("unknown variant {other:?}"))),
        };
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(p) = args.p {
        cfg.p = p;
    }
    cfg.validate()?;
    let u0 = match args.model.as_str() {
        "linear" => SoftClassifier::LinearSigmoid { weights: vec![0.0; ds.d], bias: 0.0 },
        "mlp1" => SoftClassifier::mlp1_random(ds.d, args.hidden, RngState::new(g.seed, 0).derive(1)),
        other => return Err(schema(format!("unknown model {other:?}; expected linear or mlp1"))),
    };
    let pm = PerturbationModel::uniform_ball(ds.d, cfg.epsilon);
    let trace = train(&ds, &u0, &pm, &cfg, g.seed)?;
    if let Some(path) = &args.snapshot {
        crate::write_atomic(path, &json(&trace.final_classifier)?)?;
    }
    let text = match g.format {
        Format::Json => json(&trace)?,
        Format::Csv => trace.to_csv(),
    };
    Ok(Outcome::ok(text))
}

// -------------------------------------------------------------- patho-scan

#[derive(Args, Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathoArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long)]
    pub set: Option<String>,
    #[arg(long)]
    pub soft: Option<String>,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Perturbations per point.
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    /// Minimal correct-perturbation proportion of a flagged point.
    #[arg(long, default_value_t = 0.9)]
    pub q: f64,
}

pub fn run_patho(args: &PathoArgs, g: &Globals) -> Result<Outcome> {
    let doc = load_document(&args.dataset, &args.generator, "spike-fig1", g.seed)?;
    let ds = doc.dataset()?;
    let pm = perturbation(&doc)?;
    let set = if args.set.is_none() && args.soft.is_none() && args.classifier.is_none() {
        Some("spike".to_string())
    } else {
        args.set.clone()
    };
    let c = pick_classifier(&doc, &set, &args.soft, &args.classifier)?;
    let report = patho_scan(&ds, &c, &pm, args.m, args.q, RngState::new(g.seed, 0))?;
    let text = match g.format {
        Format::Json => json(&report)?,
        Format::Csv => {
            let mut out = csv_table(
                &["index", "label", "correct_proportion"],
                &report
                    .flagged
                    .iter()
                    .map(|(i, prop)| vec![i.to_string(), ds.y[*i].to_string(), fmt12(*prop)])
                    .collect::<Vec<_>>(),
            );
            out.push('\n');
            out += &csv_table(
                &["bin_lo", "bin_hi", "count"],
                &report.histogram.iter().map(|(a, b, n)| vec![fmt12(*a), fmt12(*b), n.to_string()]).collect::<Vec<_>>(),
            );
            out
        }
    };
    Ok(Outcome::ok(text))
}

// -------------------------------------------------------------- properties

#[derive(Args, Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropertiesArgs {
    /// Random instances per suite.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
}

pub fn run_properties(args: &PropertiesArgs, g: &Globals) -> Result<Outcome> {
    if args.cases == 0 {
        bail!(schema("--cases must be positive"));
    }
    let checks = run_all(args.cases, g.seed)?;
    let failures = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| Failure { check: c.name.clone(), detail: c.detail.clone() })
        .collect();
    let text = match g.format {
        Format::Json => json(&checks)?,
        Format::Csv => {
            let mut out = String::from("check,passed,detail\n");
            for c in &checks {
                let _ = writeln!(out, "{},{},\"{}\"", c.name, c.passed, c.detail.replace('"', "'"));
            }
            out
        }
    };
    Ok(Outcome { text, failures })
}

clap_default!(GenerateArgs, EvalArgs, OracleArgs, SweepArgs, AsymptoticsArgs, TrainArgs, PathoArgs, PropertiesArgs);
