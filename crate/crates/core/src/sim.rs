//! Monte Carlo harness for the synthetic staggered-adoption study and the
//! effect-weight diagnostics.
//!
//! Scenario constants (X, U, a, gamma, b) come from stream 0 of a ChaCha8
//! generator keyed by the scenario seed; replicate `r` uses stream `r + 1`,
//! so results do not depend on thread count or scheduling.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::date::{pick_solution, solve, SolverConfig, DEFAULT_LAMBDA};
use crate::design::{
    rip_weights, staggered_support, AssignmentDistribution, DesignSupport, PathDistribution,
    ReshapedDistribution, RipWeights,
};
use crate::error::{Result, RipwError};
use crate::estimator::{ripw_infer_with_weights, GramSummary, D_TOLERANCE};
use crate::panel::{AssignmentPath, PanelDataset, TimeWeights};

pub const SIM_PERIODS: usize = 4;
pub const DEFAULT_N: usize = 2000;
pub const DEFAULT_REPS: usize = 500;
pub const FULL_SCALE_N: usize = 10_000;
pub const FULL_SCALE_REPS: usize = 1000;

/// Replicates per work unit in [`effect_weights`]; fixes the summation order.
const WEIGHT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AMode {
    Constant1,
    Uniform01,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioName {
    /// Parallel trends violated, no treatment effect.
    Pta,
    /// Effects vary over time only.
    CteConst,
    /// Effects vary over units and time.
    CteUniform,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 3] = [ScenarioName::Pta, ScenarioName::CteConst, ScenarioName::CteUniform];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::Pta => "pta",
            ScenarioName::CteConst => "cte-const",
            ScenarioName::CteUniform => "cte-uniform",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = RipwError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pta" => Ok(ScenarioName::Pta),
            "cte-const" => Ok(ScenarioName::CteConst),
            "cte-uniform" => Ok(ScenarioName::CteUniform),
            other => Err(RipwError::InvalidArgument(format!(
                "unknown scenario '{other}' (expected pta, cte-const or cte-uniform)"
            ))),
        }
    }
}

/// One stratum of the covariate: `X_i = x` with probability `prob`, and
/// staggered paths `w_(0), ..., w_(T)` drawn from `paths`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub x: f64,
    pub prob: f64,
    pub paths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub n: usize,
    pub periods: usize,
    pub sigma_m: f64,
    pub sigma_tau: f64,
    pub a_mode: AMode,
    pub strata: Vec<Stratum>,
    pub seed: u64,
}

impl SimScenario {
    pub fn preset(name: ScenarioName, n: usize, seed: u64) -> Self {
        let (sigma_m, sigma_tau, a_mode) = match name {
            ScenarioName::Pta => (1.0, 0.0, AMode::Constant1),
            ScenarioName::CteConst => (0.0, 1.0, AMode::Constant1),
            ScenarioName::CteUniform => (0.0, 1.0, AMode::Uniform01),
        };
        Self {
            n,
            periods: SIM_PERIODS,
            sigma_m,
            sigma_tau,
            a_mode,
            strata: vec![
                Stratum {
                    x: 1.0,
                    prob: 0.7,
                    paths: vec![0.8, 0.05, 0.05, 0.05, 0.05],
                },
                Stratum {
                    x: 2.0,
                    prob: 0.3,
                    paths: vec![0.1, 0.1, 0.2, 0.3, 0.3],
                },
            ],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(RipwError::InvalidArgument(format!(
                "scenario needs at least 2 units, got {}",
                self.n
            )));
        }
        let ok_sigmas = (self.sigma_m == 1.0 && self.sigma_tau == 0.0) || (self.sigma_m == 0.0 && self.sigma_tau == 1.0);
        if !ok_sigmas {
            return Err(RipwError::InvalidArgument(
                "(sigma_m, sigma_tau) must be (1, 0) or (0, 1)".into(),
            ));
        }
        if self.strata.is_empty() {
            return Err(RipwError::InvalidArgument("scenario has no strata".into()));
        }
        let total: f64 = self.strata.iter().map(|s| s.prob).sum();
        if (total - 1.0).abs() > 1e-12 || self.strata.iter().any(|s| s.prob < 0.0) {
            return Err(RipwError::InvalidArgument(
                "stratum probabilities must be nonnegative and sum to 1".into(),
            ));
        }
        for s in &self.strata {
            if s.paths.len() != self.periods + 1 {
                return Err(RipwError::DimensionMismatch(format!(
                    "stratum table has {} entries, expected {}",
                    s.paths.len(),
                    self.periods + 1
                )));
            }
        }
        Ok(())
    }

    pub fn support(&self) -> Result<DesignSupport> {
        staggered_support(self.periods, None)
    }
}

/// Quantities drawn once per scenario seed and shared by all replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConstants {
    pub stratum: Vec<usize>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub a: Vec<f64>,
    pub gamma: Vec<f64>,
    pub b: Vec<f64>,
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return k;
        }
    }
    probs.len() - 1
}

impl ScenarioConstants {
    /// Draws every constant in a fixed order regardless of the scenario, so
    /// the three presets share X, U, gamma and b for a given seed.
    pub fn draw(scn: &SimScenario) -> Self {
        let mut rng = stream(scn.seed, 0);
        let xprobs: Vec<f64> = scn.strata.iter().map(|s| s.prob).collect();
        let stratum: Vec<usize> = (0..scn.n).map(|_| categorical(&mut rng, &xprobs)).collect();
        let x = stratum.iter().map(|&k| scn.strata[k].x).collect();
        let u = (0..scn.n).map(|_| rng.random_range(1..=10u32) as f64).collect();
        let uniform_a: Vec<f64> = (0..scn.n).map(|_| rng.random::<f64>()).collect();
        let gamma = (0..scn.periods).map(|_| rng.sample(StandardNormal)).collect();
        let b = (0..scn.periods).map(|_| rng.sample(StandardNormal)).collect();
        let a = match scn.a_mode {
            AMode::Constant1 => vec![1.0; scn.n],
            AMode::Uniform01 => uniform_a,
        };
        Self {
            stratum,
            x,
            u,
            a,
            gamma,
            b,
        }
    }

    /// Effect `tau_it = sigma_tau * a_i * b_t` (t 0-based).
    pub fn tau(&self, scn: &SimScenario, i: usize, t: usize) -> f64 {
        scn.sigma_tau * self.a[i] * self.b[t]
    }

    /// Mean of `tau_it` over all cells.
    pub fn tau_star(&self, scn: &SimScenario) -> f64 {
        if scn.sigma_tau == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..scn.n {
            for t in 0..scn.periods {
                total += self.tau(scn, i, t);
            }
        }
        total / (scn.n * scn.periods) as f64
    }

    /// The true generalized propensity score.
    pub fn true_pi(&self, scn: &SimScenario) -> Result<AssignmentDistribution> {
        let support = scn.support()?;
        let profiles = scn
            .strata
            .iter()
            .map(|s| PathDistribution::on_support(&support, &s.paths))
            .collect::<Result<Vec<_>>>()?;
        AssignmentDistribution::from_profiles(profiles, self.stratum.clone())
    }
}

fn draw_panel(scn: &SimScenario, consts: &ScenarioConstants, rep: u64) -> Result<PanelDataset> {
    let mut rng = stream(scn.seed, rep + 1);
    let periods = scn.periods;
    let paths = (0..scn.n)
        .map(|i| {
            let j = categorical(&mut rng, &scn.strata[consts.stratum[i]].paths);
            AssignmentPath::staggered(periods, j)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut y = DMatrix::zeros(scn.n, periods);
    for i in 0..scn.n {
        for t in 0..periods {
            let eps: f64 = rng.sample(StandardNormal);
            let m = scn.sigma_m * consts.x[i] * t as f64;
            let y0 = 0.5 * consts.u[i] + consts.gamma[t] + m + eps;
            y[(i, t)] = y0 + consts.tau(scn, i, t) * paths[i].value(t);
        }
    }
    PanelDataset::new(y, paths)
}

/// One replicate: the panel, `tau_star` and the true propensities.
pub fn generate_panel(scn: &SimScenario, rep: u64) -> Result<(PanelDataset, f64, AssignmentDistribution)> {
    scn.validate()?;
    let consts = ScenarioConstants::draw(scn);
    let panel = draw_panel(scn, &consts, rep)?;
    Ok((panel, consts.tau_star(scn), consts.true_pi(scn)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SimEstimator {
    Unweighted,
    Ipw,
    Ripw,
}

impl SimEstimator {
    pub const ALL: [SimEstimator; 3] = [SimEstimator::Unweighted, SimEstimator::Ipw, SimEstimator::Ripw];

    pub fn as_str(&self) -> &'static str {
        match self {
            SimEstimator::Unweighted => "unweighted",
            SimEstimator::Ipw => "ipw",
            SimEstimator::Ripw => "ripw",
        }
    }
}

impl fmt::Display for SimEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimEstimator {
    type Err = RipwError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unweighted" => Ok(SimEstimator::Unweighted),
            "ipw" => Ok(SimEstimator::Ipw),
            "ripw" => Ok(SimEstimator::Ripw),
            other => Err(RipwError::InvalidArgument(format!(
                "unknown estimator '{other}' (expected unweighted, ipw or ripw)"
            ))),
        }
    }
}

/// The midpoint DATE solution for equal time weights on the full staggered support.
pub fn midpoint_reshaped(periods: usize) -> Result<ReshapedDistribution> {
    let support = staggered_support(periods, None)?;
    let family = solve(&support, &TimeWeights::equal(periods), &SolverConfig::default())?;
    pick_solution(&family, DEFAULT_LAMBDA)
}

fn estimator_weights(
    est: SimEstimator,
    pi: &AssignmentDistribution,
    paths: &[AssignmentPath],
    uniform: &ReshapedDistribution,
    midpoint: &ReshapedDistribution,
) -> Result<RipWeights> {
    match est {
        SimEstimator::Unweighted => Ok(RipWeights {
            theta: vec![1.0; paths.len()],
            zero_weight_units: 0,
        }),
        SimEstimator::Ipw => rip_weights(pi, uniform, paths),
        SimEstimator::Ripw => rip_weights(pi, midpoint, paths),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub rep: usize,
    pub estimator: SimEstimator,
    pub tau_hat: f64,
    pub tau_star: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: SimEstimator,
    pub mean_bias: f64,
    pub sd_bias: f64,
    /// Monte Carlo standard error of the mean bias.
    pub mc_se: f64,
    pub coverage: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub scenario: SimScenario,
    pub tau_star: f64,
    pub alpha: f64,
    pub summaries: Vec<EstimatorSummary>,
    /// Rows ordered by replicate, then estimator.
    pub rows: Vec<ReplicateRow>,
}

impl MonteCarloReport {
    pub fn summary(&self, est: SimEstimator) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == est)
    }
}

pub fn run_monte_carlo(
    scn: &SimScenario,
    reps: usize,
    estimators: &[SimEstimator],
    alpha: f64,
) -> Result<MonteCarloReport> {
    scn.validate()?;
    if reps == 0 {
        return Err(RipwError::InvalidArgument("reps must be at least 1".into()));
    }
    let mut estimators = estimators.to_vec();
    estimators.sort();
    estimators.dedup();
    if estimators.is_empty() {
        return Err(RipwError::InvalidArgument("no estimators requested".into()));
    }
    let consts = ScenarioConstants::draw(scn);
    let tau_star = consts.tau_star(scn);
    let pi = consts.true_pi(scn)?;
    let support = scn.support()?;
    let uniform = ReshapedDistribution::uniform(support);
    let midpoint = midpoint_reshaped(scn.periods)?;

    let per_rep = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let panel = draw_panel(scn, &consts, rep as u64)?;
            estimators
                .iter()
                .map(|&est| {
                    let w = estimator_weights(est, &pi, panel.paths(), &uniform, &midpoint)?;
                    let fit = ripw_infer_with_weights(&panel, &w, None, alpha)?;
                    Ok(ReplicateRow {
                        rep,
                        estimator: est,
                        tau_hat: fit.tau_hat,
                        tau_star,
                        se: fit.se,
                        ci: fit.ci,
                        covered: fit.ci.0 <= tau_star && tau_star <= fit.ci.1,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<ReplicateRow> = per_rep.into_iter().flatten().collect();

    let summaries = estimators
        .iter()
        .map(|&est| {
            let mine: Vec<&ReplicateRow> = rows.iter().filter(|r| r.estimator == est).collect();
            let k = mine.len() as f64;
            let mean_bias = mine.iter().map(|r| r.tau_hat - r.tau_star).sum::<f64>() / k;
            let var = if mine.len() > 1 {
                mine.iter()
                    .map(|r| (r.tau_hat - r.tau_star - mean_bias).powi(2))
                    .sum::<f64>()
                    / (k - 1.0)
            } else {
                0.0
            };
            let sd_bias = var.sqrt();
            EstimatorSummary {
                estimator: est,
                mean_bias,
                sd_bias,
                mc_se: sd_bias / k.sqrt(),
                coverage: mine.iter().filter(|r| r.covered).count() as f64 / k,
                reps: mine.len(),
            }
        })
        .collect();

    Ok(MonteCarloReport {
        scenario: scn.clone(),
        tau_star,
        alpha,
        summaries,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThetaRule {
    Unweighted,
    Ripw(ReshapedDistribution),
}

/// Conditional effect weights `xi_it(gamma; W)`: the change in `tau_hat` per
/// unit change of the effect in cell (i, t), by finite differences of N / D.
///
/// Only unit i's Gram contributions move when its outcome changes, so each
/// difference is computed from the baseline summary in O(T).
pub fn conditional_weights(panel: &PanelDataset, theta: &[f64], step: f64) -> Result<DMatrix<f64>> {
    let (n, periods) = panel.outcomes().shape();
    if theta.len() != n {
        return Err(RipwError::DimensionMismatch(format!(
            "{} weights for {n} units",
            theta.len()
        )));
    }
    if !(step.is_finite() && step != 0.0) {
        return Err(RipwError::InvalidArgument("finite-difference step must be nonzero".into()));
    }
    let base = GramSummary::compute(theta, panel.paths(), panel.outcomes());
    let d = base.denominator();
    let threshold = D_TOLERANCE * base.gamma_theta * base.gamma_theta;
    if d <= threshold {
        return Err(RipwError::DegenerateDenominator { value: d, threshold });
    }
    let tau_base = base.numerator() / d;
    let nf = n as f64;
    let mut xi = DMatrix::zeros(n, periods);
    for i in 0..n {
        if theta[i] == 0.0 {
            continue;
        }
        let jw = panel.paths()[i].centered();
        for t in 0..periods {
            let w = panel.paths()[i].value(t);
            if w == 0.0 {
                continue;
            }
            // Y_i += step * w * e_t, so J Y_i += step * w * J e_t.
            let shift = theta[i] * step * w / nf;
            let mut g = base.clone();
            g.gamma_wy += shift * jw[t];
            for s in 0..periods {
                let je = if s == t { 1.0 - 1.0 / periods as f64 } else { -1.0 / periods as f64 };
                g.gamma_y[s] += shift * je;
            }
            xi[(i, t)] = (g.numerator() / d - tau_base) / step;
        }
    }
    Ok(xi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectWeights {
    /// Weights for the first realization.
    pub conditional: DMatrix<f64>,
    /// Weights averaged over all realizations.
    pub unconditional: DMatrix<f64>,
    pub reps: usize,
    /// Realizations with at least one negative conditional weight.
    pub negative_realizations: usize,
}

/// Averages conditional weights over `reps` assignment draws of `scn`.
pub fn effect_weights(scn: &SimScenario, rule: &ThetaRule, reps: usize) -> Result<EffectWeights> {
    scn.validate()?;
    if reps == 0 {
        return Err(RipwError::InvalidArgument("reps must be at least 1".into()));
    }
    let consts = ScenarioConstants::draw(scn);
    let pi = consts.true_pi(scn)?;
    let (n, periods) = (scn.n, scn.periods);
    let one = |rep: usize| -> Result<DMatrix<f64>> {
        let panel = draw_panel(scn, &consts, rep as u64)?;
        let theta = match rule {
            ThetaRule::Unweighted => vec![1.0; n],
            ThetaRule::Ripw(reshaped) => rip_weights(&pi, reshaped, panel.paths())?.theta,
        };
        conditional_weights(&panel, &theta, 1.0)
    };
    let first = one(0)?;
    let chunks: Vec<(DMatrix<f64>, usize)> = (0..reps.div_ceil(WEIGHT_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut sum = DMatrix::zeros(n, periods);
            let mut negative = 0;
            for rep in c * WEIGHT_CHUNK..((c + 1) * WEIGHT_CHUNK).min(reps) {
                let xi = one(rep)?;
                if xi.iter().any(|&v| v < 0.0) {
                    negative += 1;
                }
                sum += xi;
            }
            Ok((sum, negative))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = DMatrix::zeros(n, periods);
    let mut negative_realizations = 0;
    for (sum, neg) in chunks {
        total += sum;
        negative_realizations += neg;
    }
    Ok(EffectWeights {
        conditional: first,
        unconditional: total / reps as f64,
        reps,
        negative_realizations,
    })
}
