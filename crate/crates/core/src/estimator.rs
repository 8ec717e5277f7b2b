//! The RIPW estimator in closed Gram form, its influence values and Wald
//! intervals, and K-fold cross-fitting of the nuisances.

use std::borrow::Cow;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{
    clip_propensities, rip_weights, AssignmentDistribution, ReshapedDistribution, RipWeights,
    DEFAULT_OVERLAP_FLOOR,
};
use crate::error::{Result, RipwError};
use crate::outcome::{OutcomeFitter, OutcomeModel};
use crate::panel::{AssignmentPath, PanelDataset};
use crate::propensity::PropensityFitter;

/// Below this many units a fit carries a small-sample flag.
pub const SMALL_SAMPLE_UNITS: usize = 30;

/// Relative threshold on `D`: fits with `D <= D_TOLERANCE * Gamma_theta^2`
/// are rejected.
pub const D_TOLERANCE: f64 = 1e-12;

/// Weighted, `J`-centered sample moments of `(Theta, W, Y~)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSummary {
    pub gamma_theta: f64,
    pub gamma_ww: f64,
    pub gamma_wy: f64,
    pub gamma_w: Vec<f64>,
    pub gamma_y: Vec<f64>,
}

impl GramSummary {
    pub fn compute(theta: &[f64], paths: &[AssignmentPath], y: &DMatrix<f64>) -> Self {
        let n = theta.len();
        let periods = y.ncols();
        let mut s = Self {
            gamma_theta: 0.0,
            gamma_ww: 0.0,
            gamma_wy: 0.0,
            gamma_w: vec![0.0; periods],
            gamma_y: vec![0.0; periods],
        };
        for i in 0..n {
            let th = theta[i];
            if th == 0.0 {
                continue;
            }
            let jw = paths[i].centered();
            let jy = centered_row(y, i);
            s.gamma_theta += th;
            for t in 0..periods {
                let w = paths[i].value(t);
                s.gamma_ww += th * w * jw[t];
                s.gamma_wy += th * w * jy[t];
                s.gamma_w[t] += th * jw[t];
                s.gamma_y[t] += th * jy[t];
            }
        }
        let nf = n as f64;
        s.gamma_theta /= nf;
        s.gamma_ww /= nf;
        s.gamma_wy /= nf;
        s.gamma_w.iter_mut().for_each(|v| *v /= nf);
        s.gamma_y.iter_mut().for_each(|v| *v /= nf);
        s
    }

    /// `N = Gamma_wy Gamma_theta - Gamma_w' Gamma_y`.
    pub fn numerator(&self) -> f64 {
        self.gamma_wy * self.gamma_theta - dot(&self.gamma_w, &self.gamma_y)
    }

    /// `D = Gamma_ww Gamma_theta - Gamma_w' Gamma_w`.
    pub fn denominator(&self) -> f64 {
        self.gamma_ww * self.gamma_theta - dot(&self.gamma_w, &self.gamma_w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub numerator: f64,
    pub denominator: f64,
    pub tau_hat: f64,
    pub grams: GramSummary,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn centered_row(y: &DMatrix<f64>, i: usize) -> Vec<f64> {
    let periods = y.ncols();
    let mean = (0..periods).map(|t| y[(i, t)]).sum::<f64>() / periods as f64;
    (0..periods).map(|t| y[(i, t)] - mean).collect()
}

/// `Y - m_hat`, or `Y` itself without a model.
fn adjusted_outcomes<'a>(panel: &'a PanelDataset, m_hat: Option<&OutcomeModel>) -> Result<Cow<'a, DMatrix<f64>>> {
    match m_hat {
        None => Ok(Cow::Borrowed(panel.outcomes())),
        Some(m) => {
            if m.m_hat().shape() != panel.outcomes().shape() {
                return Err(RipwError::DimensionMismatch(format!(
                    "outcome model is {:?}, panel is {:?}",
                    m.m_hat().shape(),
                    panel.outcomes().shape()
                )));
            }
            Ok(Cow::Owned(panel.outcomes() - m.m_hat()))
        }
    }
}

fn validate_theta(panel: &PanelDataset, theta: &[f64]) -> Result<()> {
    if theta.len() != panel.n_units() {
        return Err(RipwError::DimensionMismatch(format!(
            "{} weights for {} units",
            theta.len(),
            panel.n_units()
        )));
    }
    if let Some(v) = theta.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(RipwError::InvalidWeights(format!(
            "weight {v} is negative or non-finite"
        )));
    }
    if theta.iter().all(|&v| v == 0.0) {
        return Err(RipwError::AllWeightsZero);
    }
    Ok(())
}

/// `tau_hat = N / D` from the weighted two-way fixed effects regression of
/// `Y - m_hat` on `W`.
pub fn ripw_point(panel: &PanelDataset, theta: &[f64], m_hat: Option<&OutcomeModel>) -> Result<PointEstimate> {
    validate_theta(panel, theta)?;
    let y = adjusted_outcomes(panel, m_hat)?;
    let grams = GramSummary::compute(theta, panel.paths(), &y);
    let numerator = grams.numerator();
    let denominator = grams.denominator();
    let threshold = D_TOLERANCE * grams.gamma_theta * grams.gamma_theta;
    if !(denominator > threshold) {
        return Err(RipwError::DegenerateDenominator {
            value: denominator,
            threshold,
        });
    }
    Ok(PointEstimate {
        numerator,
        denominator,
        tau_hat: numerator / denominator,
        grams,
    })
}

/// Plug-in influence values
/// `V_i = Theta_i {(G_wy - tau G_ww) - (G_y - tau G_w)' J W_i
///        + G_theta W_i' J (Y_i - tau W_i) - G_w' J (Y_i - tau W_i)}`.
pub fn influence_values(
    panel: &PanelDataset,
    theta: &[f64],
    m_hat: Option<&OutcomeModel>,
    tau_hat: f64,
    grams: &GramSummary,
) -> Result<Vec<f64>> {
    validate_theta(panel, theta)?;
    let y = adjusted_outcomes(panel, m_hat)?;
    let periods = panel.n_periods();
    let lead = grams.gamma_wy - tau_hat * grams.gamma_ww;
    let shift: Vec<f64> = (0..periods)
        .map(|t| grams.gamma_y[t] - tau_hat * grams.gamma_w[t])
        .collect();
    Ok((0..panel.n_units())
        .map(|i| {
            let th = theta[i];
            if th == 0.0 {
                return 0.0;
            }
            let w = &panel.paths()[i];
            let jw = w.centered();
            let jy = centered_row(&y, i);
            let jr: Vec<f64> = (0..periods).map(|t| jy[t] - tau_hat * jw[t]).collect();
            let w_jr: f64 = (0..periods).map(|t| w.value(t) * jr[t]).sum();
            th * (lead - dot(&shift, &jw) + grams.gamma_theta * w_jr - dot(&grams.gamma_w, &jr))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RipwFit {
    pub tau_hat: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub influence: Vec<f64>,
    pub sigma_hat: f64,
    /// `sigma_hat / (sqrt(n) D)`.
    pub se: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub n_units: usize,
    pub zero_weight_units: usize,
    /// Set when fewer than [`SMALL_SAMPLE_UNITS`] units were used.
    pub small_sample: bool,
    /// Fold index per unit when cross-fitted.
    pub folds: Option<Vec<usize>>,
    /// Units whose estimated propensities were floored.
    pub clipped_units: usize,
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(RipwError::InvalidArgument(format!(
            "alpha = {alpha} must lie in (0, 0.5]"
        )));
    }
    Ok(())
}

/// Point estimate, influence values, variance and Wald interval for given
/// weights.
pub fn ripw_infer_with_weights(
    panel: &PanelDataset,
    weights: &RipWeights,
    m_hat: Option<&OutcomeModel>,
    alpha: f64,
) -> Result<RipwFit> {
    validate_alpha(alpha)?;
    let theta = &weights.theta;
    let point = ripw_point(panel, theta, m_hat)?;
    let influence = influence_values(panel, theta, m_hat, point.tau_hat, &point.grams)?;
    let n = panel.n_units();
    let mean = influence.iter().sum::<f64>() / n as f64;
    let sigma_hat = if n > 1 {
        (influence.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let se = sigma_hat / ((n as f64).sqrt() * point.denominator);
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    Ok(RipwFit {
        tau_hat: point.tau_hat,
        numerator: point.numerator,
        denominator: point.denominator,
        influence,
        sigma_hat,
        se,
        ci: (point.tau_hat - z * se, point.tau_hat + z * se),
        alpha,
        n_units: n,
        zero_weight_units: weights.zero_weight_units,
        small_sample: n < SMALL_SAMPLE_UNITS,
        folds: None,
        clipped_units: 0,
    })
}

/// Design-based inference with propensities `pi` and reshaped
/// distribution `reshaped`.
pub fn ripw_infer(
    panel: &PanelDataset,
    pi: &AssignmentDistribution,
    reshaped: &ReshapedDistribution,
    m_hat: Option<&OutcomeModel>,
    alpha: f64,
) -> Result<RipwFit> {
    validate_alpha(alpha)?;
    let weights = rip_weights(pi, reshaped, panel.paths())?;
    ripw_infer_with_weights(panel, &weights, m_hat, alpha)
}

/// Deterministic fold labels: a seeded shuffle of the units dealt
/// round-robin into `k` folds.
pub fn fold_assignment(n_units: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > n_units {
        return Err(RipwError::TooFewUnits {
            units: n_units,
            folds: k,
        });
    }
    let mut order: Vec<usize> = (0..n_units).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n_units];
    for (pos, &unit) in order.iter().enumerate() {
        folds[unit] = pos % k;
    }
    Ok(folds)
}

/// K-fold cross-fitting: nuisances for each fold are fit on the other
/// folds, assembled, and passed to a single final estimation.
///
/// Estimated propensities are floored at [`DEFAULT_OVERLAP_FLOOR`] on the
/// support of `reshaped`; known propensities are used as given.
pub fn crossfit_estimate(
    panel: &PanelDataset,
    propensity: &dyn PropensityFitter,
    outcome: &dyn OutcomeFitter,
    reshaped: &ReshapedDistribution,
    k: usize,
    seed: u64,
    alpha: f64,
) -> Result<RipwFit> {
    validate_alpha(alpha)?;
    let n = panel.n_units();
    let folds = fold_assignment(n, k, seed)?;
    let support = reshaped.support();
    let parts = (0..k)
        .into_par_iter()
        .map(|f| {
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let pi = propensity.fit_predict(panel, support, &train, &test)?;
            let mu = outcome.fit_predict(panel, &train, &test)?;
            Ok((test, pi, mu))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mu_all = DMatrix::zeros(n, panel.n_periods());
    let mut pi_parts = Vec::with_capacity(k);
    for (test, pi, mu) in parts {
        for (r, &i) in test.iter().enumerate() {
            mu_all.set_row(i, &mu.row(r));
        }
        pi_parts.push((test, pi));
    }
    let mut pi = AssignmentDistribution::assemble(n, pi_parts)?;
    let mut clipped_units = 0;
    if propensity.is_estimated() {
        let clipped = clip_propensities(&pi, support, DEFAULT_OVERLAP_FLOOR)?;
        clipped_units = (0..n).filter(|&i| clipped.unit(i) != pi.unit(i)).count();
        pi = clipped;
    }
    let m_hat = OutcomeModel::new(&mu_all)?;
    let mut fit = ripw_infer(panel, &pi, reshaped, Some(&m_hat), alpha)?;
    fit.folds = Some(folds);
    fit.clipped_units = clipped_units;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> AssignmentPath {
        s.parse().unwrap()
    }

    fn exact_panel(tau: f64) -> PanelDataset {
        let paths = vec![p("00"), p("01"), p("11"), p("01")];
        let alpha = [1.0, -2.0, 0.5, 3.0];
        let gamma = [0.3, -0.7];
        let y = DMatrix::from_fn(4, 2, |i, t| alpha[i] + gamma[t] + tau * paths[i].value(t));
        PanelDataset::new(y, paths).unwrap()
    }

    #[test]
    fn exact_recovery() {
        let panel = exact_panel(2.0);
        for theta in [vec![1.0; 4], vec![0.3, 2.0, 1.1, 0.7]] {
            let est = ripw_point(&panel, &theta, None).unwrap();
            assert!((est.tau_hat - 2.0).abs() < 1e-12);
            let v = influence_values(&panel, &theta, None, est.tau_hat, &est.grams).unwrap();
            assert!(v.iter().all(|x| x.abs() < 1e-10));
        }
    }

    #[test]
    fn shared_path_is_degenerate() {
        let y = DMatrix::from_fn(3, 3, |i, t| (i + t) as f64);
        let panel = PanelDataset::new(y, vec![p("011"); 3]).unwrap();
        assert!(matches!(
            ripw_point(&panel, &[1.0; 3], None),
            Err(RipwError::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn zero_weights_rejected() {
        let panel = exact_panel(1.0);
        assert!(matches!(
            ripw_point(&panel, &[0.0; 4], None),
            Err(RipwError::AllWeightsZero)
        ));
    }

    #[test]
    fn mirrored_units_have_opposite_influence() {
        let paths = vec![p("01"), p("10")];
        let y = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let panel = PanelDataset::new(y, paths).unwrap();
        let est = ripw_point(&panel, &[1.0, 1.0], None).unwrap();
        let v = influence_values(&panel, &[1.0, 1.0], None, est.tau_hat, &est.grams).unwrap();
        assert!((v[0] + v[1]).abs() < 1e-12);
    }

    #[test]
    fn interval_uses_normal_quantile() {
        let y = DMatrix::from_fn(6, 3, |i, t| ((i * 7 + t * 3) % 5) as f64);
        let paths = vec![p("000"), p("001"), p("011"), p("111"), p("001"), p("011")];
        let panel = PanelDataset::new(y, paths).unwrap();
        let w = RipWeights {
            theta: vec![1.0; 6],
            zero_weight_units: 0,
        };
        let fit = ripw_infer_with_weights(&panel, &w, None, 0.5).unwrap();
        let half = (fit.ci.1 - fit.ci.0) / 2.0;
        let expect = 0.674_489_750_196_081_7 * fit.sigma_hat / (6f64.sqrt() * fit.denominator);
        assert!((half - expect).abs() < 1e-12);
        assert!(fit.small_sample);
        assert!(ripw_infer_with_weights(&panel, &w, None, 0.7).is_err());
    }

    #[test]
    fn two_units_use_divisor_one() {
        let paths = vec![p("01"), p("00")];
        let y = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 1.0, 0.5]);
        let panel = PanelDataset::new(y, paths).unwrap();
        let w = RipWeights {
            theta: vec![1.0, 1.0],
            zero_weight_units: 0,
        };
        let fit = ripw_infer_with_weights(&panel, &w, None, 0.05).unwrap();
        let mean = (fit.influence[0] + fit.influence[1]) / 2.0;
        let var = (fit.influence[0] - mean).powi(2) + (fit.influence[1] - mean).powi(2);
        assert!((fit.sigma_hat - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn folds_are_balanced_and_deterministic() {
        let a = fold_assignment(11, 3, 5).unwrap();
        assert_eq!(a, fold_assignment(11, 3, 5).unwrap());
        let counts: Vec<usize> = (0..3).map(|f| a.iter().filter(|&&x| x == f).count()).collect();
        assert!(counts.iter().all(|&c| c == 3 || c == 4));
        assert!(matches!(fold_assignment(3, 4, 0), Err(RipwError::TooFewUnits { .. })));
        assert!(matches!(fold_assignment(3, 1, 0), Err(RipwError::TooFewUnits { .. })));
    }
}
