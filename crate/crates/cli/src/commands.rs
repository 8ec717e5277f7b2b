//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use ripw::date::{date_residual, pick_solution, solve, SolutionFamily, SolverConfig};
use ripw::design::{
    clip_propensities, rip_weights, AssignmentDistribution, DesignSupport, ReshapedDistribution, SupportKind,
    DEFAULT_OVERLAP_FLOOR,
};
use ripw::design_file::{load_design, load_reshaped};
use ripw::error::{Result, RipwError};
use ripw::estimator::{crossfit_estimate, ripw_infer_with_weights, RipwFit};
use ripw::outcome::{OutcomeFitter, OutcomeModel, TwfeCovariates, ZeroOutcome};
use ripw::panel::{load_panel, LongCsvSchema, TimeWeights};
use ripw::propensity::{KnownPropensity, PropensityFitter, PropensitySpec};
use ripw::sim::{
    effect_weights, midpoint_reshaped, run_monte_carlo, ScenarioName, SimEstimator, SimScenario, ThetaRule,
};

use crate::output::to_json;

fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(RipwError::InvalidArgument(format!("lambda = {lambda} must lie in (0, 1)")));
    }
    Ok(())
}

fn parse_xi(spec: &str, periods: usize) -> Result<TimeWeights> {
    if spec == "equal" {
        return Ok(TimeWeights::equal(periods));
    }
    let Some(path) = spec.strip_prefix("csv:") else {
        return Err(RipwError::InvalidArgument(format!(
            "--xi must be `equal` or `csv:<path>`, got '{spec}'"
        )));
    };
    let text = std::fs::read_to_string(path)?;
    let weights = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| RipwError::InvalidTimeWeights(format!("'{s}' is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if weights.len() != periods {
        return Err(RipwError::DimensionMismatch(format!(
            "{} time weights for T = {periods}",
            weights.len()
        )));
    }
    TimeWeights::new(weights)
}

fn kind_name(kind: SupportKind) -> String {
    match kind {
        SupportKind::Staggered => "staggered".into(),
        SupportKind::Transient(k) => format!("transient:{k}"),
        SupportKind::DiD => "did".into(),
        SupportKind::CrossOver => "crossover".into(),
        SupportKind::General => "general".into(),
    }
}

fn path_map(support: &DesignSupport, probs: &[f64]) -> BTreeMap<String, f64> {
    support
        .paths()
        .iter()
        .zip(probs)
        .map(|(p, &v)| (p.to_string(), v))
        .collect()
}

#[derive(Serialize)]
struct SolveOutput {
    #[serde(rename = "T")]
    periods: usize,
    support_kind: String,
    family: &'static str,
    lambda: Option<f64>,
    xi: Vec<f64>,
    solution: BTreeMap<String, f64>,
    residual_inf: f64,
    endpoints: Option<[BTreeMap<String, f64>; 2]>,
}

pub fn solve_date(design: &Path, xi: &str, lambda: f64, seed: u64, output: Option<&Path>) -> Result<()> {
    check_lambda(lambda)?;
    let design = load_design(design)?;
    let support = design.support;
    let xi = parse_xi(xi, support.periods())?;
    let config = SolverConfig {
        seed,
        ..SolverConfig::default()
    };
    let family = solve(&support, &xi, &config)?;
    let chosen = pick_solution(&family, lambda)?;
    let (kind, lambda, endpoints) = match &family {
        SolutionFamily::Segment {
            support: s,
            first,
            second,
        } => ("segment", Some(lambda), Some([path_map(s, first), path_map(s, second)])),
        _ => ("point", None, None),
    };
    let out = SolveOutput {
        periods: support.periods(),
        support_kind: kind_name(support.kind()),
        family: kind,
        lambda,
        xi: xi.as_slice().to_vec(),
        solution: path_map(chosen.support(), chosen.probs()),
        residual_inf: date_residual(&chosen, &xi).norm_inf(),
        endpoints,
    };
    emit(&to_json(&out)?, output)
}

pub struct EstimateArgs<'a> {
    pub panel: &'a Path,
    pub design: &'a Path,
    pub reshape: &'a str,
    pub xi: &'a str,
    pub lambda: f64,
    pub propensity: &'a str,
    pub outcome: &'a str,
    pub crossfit: Option<usize>,
    pub alpha: f64,
    pub seed: u64,
}

fn parse_columns(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| RipwError::InvalidArgument(format!("'{s}' is not a covariate column index")))
        })
        .collect()
}

fn parse_propensity(spec: &str) -> Result<Option<PropensitySpec>> {
    if spec == "design" {
        return Ok(None);
    }
    if spec == "empirical" {
        return Ok(Some(PropensitySpec::Empirical));
    }
    if let Some(col) = spec.strip_prefix("stratified:") {
        let col = col
            .trim()
            .parse()
            .map_err(|_| RipwError::InvalidArgument(format!("'{col}' is not a covariate column index")))?;
        return Ok(Some(PropensitySpec::Stratified(col)));
    }
    if spec == "hazard" {
        return Ok(Some(PropensitySpec::Hazard(Vec::new())));
    }
    if let Some(cols) = spec.strip_prefix("hazard:") {
        return Ok(Some(PropensitySpec::Hazard(parse_columns(cols)?)));
    }
    Err(RipwError::InvalidArgument(format!(
        "--propensity must be design, empirical, stratified:<col> or hazard:<cols>, got '{spec}'"
    )))
}

fn parse_outcome(spec: &str) -> Result<Box<dyn OutcomeFitter>> {
    match spec {
        "zero" => Ok(Box::new(ZeroOutcome)),
        "twfe-covariates" => Ok(Box::new(TwfeCovariates::default())),
        other => Err(RipwError::InvalidArgument(format!(
            "--outcome must be zero or twfe-covariates, got '{other}'"
        ))),
    }
}

#[derive(Serialize)]
struct EstimateOutput {
    tau_hat: f64,
    se: f64,
    ci: [f64; 2],
    #[serde(rename = "D")]
    denominator: f64,
    n_zero_weight: usize,
    folds: Option<Vec<usize>>,
    sigma_hat: f64,
    alpha: f64,
    n_units: usize,
    small_sample: bool,
    clipped_units: usize,
    reshaped: BTreeMap<String, f64>,
}

fn count_clipped(before: &AssignmentDistribution, after: &AssignmentDistribution) -> usize {
    (0..before.n_units()).filter(|&i| before.unit(i) != after.unit(i)).count()
}

pub fn estimate(args: &EstimateArgs<'_>) -> Result<()> {
    check_lambda(args.lambda)?;
    let panel = load_panel(args.panel, &LongCsvSchema::default())?;
    let design = load_design(args.design)?;
    let support = &design.support;
    if support.periods() != panel.n_periods() {
        return Err(RipwError::DimensionMismatch(format!(
            "design has T = {}, panel has T = {}",
            support.periods(),
            panel.n_periods()
        )));
    }
    let reshaped: ReshapedDistribution = if args.reshape == "solved" {
        let xi = parse_xi(args.xi, support.periods())?;
        let config = SolverConfig {
            seed: args.seed,
            ..SolverConfig::default()
        };
        pick_solution(&solve(support, &xi, &config)?, args.lambda)?
    } else {
        load_reshaped(args.reshape)?
    };
    let estimated = parse_propensity(args.propensity)?;
    let outcome = parse_outcome(args.outcome)?;
    let n = panel.n_units();

    let fit: RipwFit = match args.crossfit {
        Some(k) => {
            if k < 2 {
                return Err(RipwError::InvalidArgument(format!("--crossfit K = {k} must be at least 2")));
            }
            let fitter: Box<dyn PropensityFitter> = match estimated {
                Some(spec) => Box::new(spec),
                None => Box::new(KnownPropensity(design.pi_for(n)?.ok_or_else(|| {
                    RipwError::InvalidDesignFile("design has no \"pi\"; pass --propensity".into())
                })?)),
            };
            crossfit_estimate(&panel, fitter.as_ref(), outcome.as_ref(), &reshaped, k, args.seed, args.alpha)?
        }
        None => {
            let all: Vec<usize> = (0..n).collect();
            let (pi, clipped) = match estimated {
                Some(spec) => {
                    let raw = spec.fit_on(&panel, support, &all)?.predict(&panel, &all)?;
                    let floored = clip_propensities(&raw, support, DEFAULT_OVERLAP_FLOOR)?;
                    let clipped = count_clipped(&raw, &floored);
                    (floored, clipped)
                }
                None => (
                    design.pi_for(n)?.ok_or_else(|| {
                        RipwError::InvalidDesignFile("design has no \"pi\"; pass --propensity".into())
                    })?,
                    0,
                ),
            };
            let m_hat = if args.outcome == "zero" {
                None
            } else {
                Some(OutcomeModel::new(&outcome.fit_predict(&panel, &all, &all)?)?)
            };
            let weights = rip_weights(&pi, &reshaped, panel.paths())?;
            let mut fit = ripw_infer_with_weights(&panel, &weights, m_hat.as_ref(), args.alpha)?;
            fit.clipped_units = clipped;
            fit
        }
    };
    let out = EstimateOutput {
        tau_hat: fit.tau_hat,
        se: fit.se,
        ci: [fit.ci.0, fit.ci.1],
        denominator: fit.denominator,
        n_zero_weight: fit.zero_weight_units,
        folds: fit.folds,
        sigma_hat: fit.sigma_hat,
        alpha: fit.alpha,
        n_units: fit.n_units,
        small_sample: fit.small_sample,
        clipped_units: fit.clipped_units,
        reshaped: path_map(reshaped.support(), reshaped.probs()),
    };
    emit(&to_json(&out)?, None)
}

#[derive(Serialize)]
struct EstimatorLine {
    estimator: String,
    mean_bias: f64,
    sd_bias: f64,
    mc_se: f64,
    coverage: f64,
    reps: usize,
}

#[derive(Serialize)]
struct SimulateOutput {
    scenario: String,
    n: usize,
    #[serde(rename = "T")]
    periods: usize,
    reps: usize,
    seed: u64,
    alpha: f64,
    tau_star: f64,
    estimators: Vec<EstimatorLine>,
}

pub fn simulate(scenario: &str, n: usize, reps: usize, seed: u64, alpha: f64, csv: Option<&Path>) -> Result<()> {
    let name: ScenarioName = scenario.parse()?;
    let scn = SimScenario::preset(name, n, seed);
    let report = run_monte_carlo(&scn, reps, &SimEstimator::ALL, alpha)?;
    if let Some(path) = csv {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rep", "estimator", "tau_hat", "tau_star", "bias", "se", "ci_lo", "ci_hi", "covered"])?;
        for r in &report.rows {
            w.write_record([
                r.rep.to_string(),
                r.estimator.to_string(),
                r.tau_hat.to_string(),
                r.tau_star.to_string(),
                (r.tau_hat - r.tau_star).to_string(),
                r.se.to_string(),
                r.ci.0.to_string(),
                r.ci.1.to_string(),
                u8::from(r.covered).to_string(),
            ])?;
        }
        w.flush()?;
    }
    let out = SimulateOutput {
        scenario: name.to_string(),
        n,
        periods: scn.periods,
        reps,
        seed,
        alpha,
        tau_star: report.tau_star,
        estimators: report
            .summaries
            .iter()
            .map(|s| EstimatorLine {
                estimator: s.estimator.to_string(),
                mean_bias: s.mean_bias,
                sd_bias: s.sd_bias,
                mc_se: s.mc_se,
                coverage: s.coverage,
                reps: s.reps,
            })
            .collect(),
    };
    emit(&to_json(&out)?, None)
}

#[derive(Serialize)]
struct WeightsOutput {
    estimator: String,
    n: usize,
    #[serde(rename = "T")]
    periods: usize,
    reps: usize,
    seed: u64,
    negative_realizations: usize,
    conditional_sum: f64,
    max_abs_unconditional_deviation: f64,
}

pub fn weights(estimator: &str, reps: usize, n: usize, scenario: &str, seed: u64, csv: Option<&Path>) -> Result<()> {
    let rule = match estimator.parse::<SimEstimator>()? {
        SimEstimator::Unweighted => ThetaRule::Unweighted,
        SimEstimator::Ripw => ThetaRule::Ripw(midpoint_reshaped(ripw::sim::SIM_PERIODS)?),
        SimEstimator::Ipw => {
            return Err(RipwError::InvalidArgument(
                "--estimator must be unweighted or ripw".into(),
            ))
        }
    };
    let scn = SimScenario::preset(scenario.parse()?, n, seed);
    let w = effect_weights(&scn, &rule, reps)?;
    let scale = (n * scn.periods) as f64;
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record(["unit", "period", "conditional", "unconditional"])?;
    for i in 0..n {
        for t in 0..scn.periods {
            table.write_record([
                (i + 1).to_string(),
                (t + 1).to_string(),
                (w.conditional[(i, t)] * scale).to_string(),
                (w.unconditional[(i, t)] * scale).to_string(),
            ])?;
        }
    }
    let bytes = table
        .into_inner()
        .map_err(|e| RipwError::Io(std::io::Error::other(e.to_string())))?;
    let text = String::from_utf8(bytes).expect("csv emits UTF-8");
    match csv {
        None => emit(&text, None),
        Some(path) => {
            std::fs::write(path, text)?;
            let out = WeightsOutput {
                estimator: estimator.to_string(),
                n,
                periods: scn.periods,
                reps,
                seed,
                negative_realizations: w.negative_realizations,
                conditional_sum: w.conditional.sum(),
                max_abs_unconditional_deviation: w
                    .unconditional
                    .iter()
                    .fold(0.0, |m, v| f64::max(m, (v * scale - 1.0).abs())),
            };
            emit(&to_json(&out)?, None)
        }
    }
}
