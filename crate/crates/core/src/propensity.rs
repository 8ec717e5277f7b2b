//! Generalized propensity score estimators: empirical, stratified and a
//! discrete-time logistic hazard for staggered adoption.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::design::{AssignmentDistribution, DesignSupport, PathDistribution};
use crate::error::{Result, RipwError};
use crate::panel::{AssignmentPath, PanelDataset};

/// Largest number of levels accepted by the stratified fit.
pub const MAX_STRATA: usize = 32;
pub const HAZARD_MAX_ITERATIONS: usize = 100;
pub const HAZARD_GRADIENT_TOLERANCE: f64 = 1e-8;
/// Coefficients beyond this magnitude indicate separation.
pub const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub enum PropensityKind {
    Empirical(PathDistribution),
    Stratified {
        column: usize,
        /// `(level, distribution)` sorted by level.
        strata: Vec<(f64, PathDistribution)>,
        /// Strata fitted from a single unit.
        singletons: usize,
    },
    DiscreteHazard {
        columns: Vec<usize>,
        coefficients: Vec<f64>,
        /// Per-period intercept `theta_t`; infinite for periods where every
        /// or no at-risk unit adopts.
        baseline: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub kind: PropensityKind,
    pub periods: usize,
}

impl PropensityModel {
    /// Per-unit distributions for `units` of `panel`.
    pub fn predict(&self, panel: &PanelDataset, units: &[usize]) -> Result<AssignmentDistribution> {
        match &self.kind {
            PropensityKind::Empirical(d) => Ok(AssignmentDistribution::shared(units.len(), d.clone())),
            PropensityKind::Stratified { column, strata, .. } => {
                let levels = unit_levels(panel, *column, units)?;
                let mut index = Vec::with_capacity(units.len());
                for (r, level) in levels.iter().enumerate() {
                    let k = strata
                        .iter()
                        .position(|(l, _)| l == level)
                        .ok_or_else(|| {
                            RipwError::EmptyStratum(format!(
                                "unit {} has level {level} with no fitted units",
                                units[r]
                            ))
                        })?;
                    index.push(k);
                }
                AssignmentDistribution::from_profiles(strata.iter().map(|(_, d)| d.clone()).collect(), index)
            }
            PropensityKind::DiscreteHazard {
                columns,
                coefficients,
                baseline,
            } => {
                let covs = columns
                    .iter()
                    .map(|&c| panel.covariate(c))
                    .collect::<Result<Vec<_>>>()?;
                let dists = units
                    .iter()
                    .map(|&i| {
                        let hazards: Vec<f64> = (0..self.periods)
                            .map(|t| {
                                let lin: f64 = covs
                                    .iter()
                                    .zip(coefficients)
                                    .map(|(x, b)| x[(i, t)] * b)
                                    .sum();
                                hazard(baseline[t], lin)
                            })
                            .collect();
                        staggered_from_hazards(&hazards)
                    })
                    .collect::<Result<Vec<_>>>()?;
                AssignmentDistribution::per_unit(dists)
            }
        }
    }
}

fn hazard(theta: f64, lin: f64) -> f64 {
    if theta == f64::INFINITY {
        1.0
    } else if theta == f64::NEG_INFINITY {
        0.0
    } else {
        1.0 / (1.0 + (-(theta + lin)).exp())
    }
}

/// Differencing the survival curve: adoption at period `s` (1-based) maps to
/// the path with `T - s + 1` treated periods; survivors are never treated.
fn staggered_from_hazards(hazards: &[f64]) -> Result<PathDistribution> {
    let periods = hazards.len();
    let mut survival = 1.0;
    let mut pairs = Vec::with_capacity(periods + 1);
    for (t, &h) in hazards.iter().enumerate() {
        pairs.push((AssignmentPath::staggered(periods, periods - t)?, survival * h));
        survival *= 1.0 - h;
    }
    pairs.push((AssignmentPath::staggered(periods, 0)?, survival));
    PathDistribution::from_pairs(pairs)
}

fn check_in_support(panel: &PanelDataset, support: &DesignSupport, units: &[usize]) -> Result<()> {
    if support.periods() != panel.n_periods() {
        return Err(RipwError::DimensionMismatch(format!(
            "support has T = {}, panel has T = {}",
            support.periods(),
            panel.n_periods()
        )));
    }
    for &i in units {
        let w = &panel.paths()[i];
        if !support.contains(w) {
            return Err(RipwError::PathOutsideSupport {
                unit: i,
                path: w.to_string(),
            });
        }
    }
    Ok(())
}

fn empirical_on(panel: &PanelDataset, units: &[usize]) -> Result<PathDistribution> {
    if units.is_empty() {
        return Err(RipwError::EmptyStratum("no units to fit".into()));
    }
    let mut counts: BTreeMap<AssignmentPath, usize> = BTreeMap::new();
    for &i in units {
        *counts.entry(panel.paths()[i]).or_insert(0) += 1;
    }
    let n = units.len() as f64;
    PathDistribution::new(counts.into_iter().map(|(p, c)| (p, c as f64 / n)).collect())
}

/// `pi_hat(w) = #{j : W_j = w} / n`, shared by all units.
pub fn fit_empirical(panel: &PanelDataset, support: &DesignSupport) -> Result<PropensityModel> {
    let all: Vec<usize> = (0..panel.n_units()).collect();
    fit_empirical_on(panel, support, &all)
}

pub fn fit_empirical_on(panel: &PanelDataset, support: &DesignSupport, units: &[usize]) -> Result<PropensityModel> {
    check_in_support(panel, support, units)?;
    Ok(PropensityModel {
        kind: PropensityKind::Empirical(empirical_on(panel, units)?),
        periods: panel.n_periods(),
    })
}

fn unit_levels(panel: &PanelDataset, column: usize, units: &[usize]) -> Result<Vec<f64>> {
    let x = panel.covariate(column)?;
    units
        .iter()
        .map(|&i| {
            let v = x[(i, 0)];
            if (1..panel.n_periods()).any(|t| x[(i, t)] != v) {
                return Err(RipwError::CovariateNotTimeInvariant { column, unit: i });
            }
            Ok(v)
        })
        .collect()
}

/// Within-stratum empirical frequencies for a discrete, time-invariant
/// covariate.
pub fn fit_stratified(panel: &PanelDataset, support: &DesignSupport, column: usize) -> Result<PropensityModel> {
    let all: Vec<usize> = (0..panel.n_units()).collect();
    fit_stratified_on(panel, support, column, &all)
}

pub fn fit_stratified_on(
    panel: &PanelDataset,
    support: &DesignSupport,
    column: usize,
    units: &[usize],
) -> Result<PropensityModel> {
    check_in_support(panel, support, units)?;
    let levels = unit_levels(panel, column, units)?;
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for (&i, &level) in units.iter().zip(&levels) {
        match groups.iter_mut().find(|(l, _)| *l == level) {
            Some((_, members)) => members.push(i),
            None => {
                if groups.len() == MAX_STRATA {
                    return Err(RipwError::TooManyStrata {
                        levels: MAX_STRATA + 1,
                        max: MAX_STRATA,
                    });
                }
                groups.push((level, vec![i]));
            }
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    let singletons = groups.iter().filter(|(_, m)| m.len() == 1).count();
    let strata = groups
        .into_iter()
        .map(|(l, members)| Ok((l, empirical_on(panel, &members)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PropensityModel {
        kind: PropensityKind::Stratified {
            column,
            strata,
            singletons,
        },
        periods: panel.n_periods(),
    })
}

/// Logistic hazard `h_i(t) = logistic(theta_t + X_it' beta)` fit by
/// maximum likelihood on at-risk unit-periods.
///
/// Periods in which all or none of the at-risk units adopt get hazard one
/// or zero and are left out of the likelihood, as are periods with nobody
/// at risk.
pub fn fit_discrete_hazard(panel: &PanelDataset, support: &DesignSupport, columns: &[usize]) -> Result<PropensityModel> {
    let all: Vec<usize> = (0..panel.n_units()).collect();
    fit_discrete_hazard_on(panel, support, columns, &all)
}

pub fn fit_discrete_hazard_on(
    panel: &PanelDataset,
    support: &DesignSupport,
    columns: &[usize],
    units: &[usize],
) -> Result<PropensityModel> {
    if let Some(p) = support.paths().iter().find(|p| !p.is_staggered()) {
        return Err(RipwError::NonStaggeredSupport(format!(
            "path {p} is not of the form 0..01..1"
        )));
    }
    check_in_support(panel, support, units)?;
    if units.is_empty() {
        return Err(RipwError::EmptyStratum("no units to fit".into()));
    }
    let periods = panel.n_periods();
    let covs = columns
        .iter()
        .map(|&c| panel.covariate(c))
        .collect::<Result<Vec<_>>>()?;
    // adoption period (0-based), `periods` for never treated
    let adoption: Vec<usize> = units
        .iter()
        .map(|&i| panel.paths()[i].adoption_period().map_or(periods, |s| s - 1))
        .collect();

    let mut baseline = vec![f64::NEG_INFINITY; periods];
    let mut free_periods = Vec::new();
    for t in 0..periods {
        let at_risk = adoption.iter().filter(|&&a| a >= t).count();
        let events = adoption.iter().filter(|&&a| a == t).count();
        if at_risk == 0 || events == 0 {
            baseline[t] = f64::NEG_INFINITY;
        } else if events == at_risk {
            baseline[t] = f64::INFINITY;
        } else {
            free_periods.push(t);
        }
    }

    // rows: (unit position, period)
    let rows: Vec<(usize, usize)> = units
        .iter()
        .enumerate()
        .flat_map(|(r, _)| {
            let a = adoption[r];
            free_periods
                .iter()
                .filter(move |&&t| t <= a)
                .map(move |&t| (r, t))
        })
        .collect();
    let n_free = free_periods.len();
    let n_par = n_free + columns.len();
    let mut coef = vec![0.0; n_par];
    for (k, &t) in free_periods.iter().enumerate() {
        let at_risk = adoption.iter().filter(|&&a| a >= t).count() as f64;
        let events = adoption.iter().filter(|&&a| a == t).count() as f64;
        coef[k] = (events / (at_risk - events)).ln();
    }
    if !rows.is_empty() {
        let x = DMatrix::from_fn(rows.len(), n_par, |k, j| {
            let (r, t) = rows[k];
            if j < n_free {
                if free_periods[j] == t {
                    1.0
                } else {
                    0.0
                }
            } else {
                covs[j - n_free][(units[r], t)]
            }
        });
        let y = DVector::from_fn(rows.len(), |k, _| {
            let (r, t) = rows[k];
            if adoption[r] == t {
                1.0
            } else {
                0.0
            }
        });
        coef = irls(&x, &y, coef)?;
    }
    for (k, &t) in free_periods.iter().enumerate() {
        baseline[t] = coef[k];
    }
    Ok(PropensityModel {
        kind: PropensityKind::DiscreteHazard {
            columns: columns.to_vec(),
            coefficients: coef[n_free..].to_vec(),
            baseline,
        },
        periods,
    })
}

/// Newton-Raphson for logistic regression.
///
/// Stops when the gradient is below tolerance and the last step was small;
/// under separation the steps stay large while coefficients drift past
/// [`SEPARATION_BOUND`].
fn irls(x: &DMatrix<f64>, y: &DVector<f64>, start: Vec<f64>) -> Result<Vec<f64>> {
    let mut beta = DVector::from_vec(start);
    for _ in 0..HAZARD_MAX_ITERATIONS {
        let eta = x * &beta;
        let p = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let grad = x.transpose() * (y - &p);
        let weights = p.map(|v| v * (1.0 - v));
        let mut xw = x.clone();
        for (k, mut row) in xw.row_iter_mut().enumerate() {
            row *= weights[k];
        }
        let hessian = x.transpose() * xw;
        let step = match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => hessian
                .svd(true, true)
                .solve(&grad, 1e-12)
                .map_err(|e| RipwError::InvalidArgument(format!("hazard Newton step failed: {e}")))?,
        };
        beta += &step;
        if let Some((index, value)) = beta
            .iter()
            .enumerate()
            .find(|(_, b)| !b.is_finite() || b.abs() > SEPARATION_BOUND)
        {
            return Err(RipwError::SeparationDetected {
                index,
                value: *value,
            });
        }
        if grad.amax() <= HAZARD_GRADIENT_TOLERANCE && step.amax() <= 1e-6 {
            break;
        }
    }
    Ok(beta.iter().copied().collect())
}

/// Produces propensities for `test` units from a fit on `train` units.
pub trait PropensityFitter: Sync {
    fn fit_predict(
        &self,
        panel: &PanelDataset,
        support: &DesignSupport,
        train: &[usize],
        test: &[usize],
    ) -> Result<AssignmentDistribution>;

    /// Estimated propensities are floored before weighting; known ones are not.
    fn is_estimated(&self) -> bool {
        true
    }
}

/// Which estimator to fit.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensitySpec {
    Empirical,
    Stratified(usize),
    Hazard(Vec<usize>),
}

impl PropensitySpec {
    pub fn fit_on(&self, panel: &PanelDataset, support: &DesignSupport, units: &[usize]) -> Result<PropensityModel> {
        match self {
            PropensitySpec::Empirical => fit_empirical_on(panel, support, units),
            PropensitySpec::Stratified(c) => fit_stratified_on(panel, support, *c, units),
            PropensitySpec::Hazard(cols) => fit_discrete_hazard_on(panel, support, cols, units),
        }
    }
}

impl PropensityFitter for PropensitySpec {
    fn fit_predict(
        &self,
        panel: &PanelDataset,
        support: &DesignSupport,
        train: &[usize],
        test: &[usize],
    ) -> Result<AssignmentDistribution> {
        self.fit_on(panel, support, train)?.predict(panel, test)
    }
}

/// Propensities known by design.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownPropensity(pub AssignmentDistribution);

impl PropensityFitter for KnownPropensity {
    fn fit_predict(
        &self,
        _panel: &PanelDataset,
        _support: &DesignSupport,
        _train: &[usize],
        test: &[usize],
    ) -> Result<AssignmentDistribution> {
        Ok(self.0.subset(test))
    }

    fn is_estimated(&self) -> bool {
        false
    }
}
