//! Baseline outcome models `m_hat` for the two-stage estimator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RipwError};
use crate::panel::{center_doubly, PanelDataset};

/// Doubly-centered baseline predictions `m_hat` (n x T).
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    m_hat: DMatrix<f64>,
}

impl OutcomeModel {
    /// Re-centers `predictions` so that row and column means vanish.
    pub fn new(predictions: &DMatrix<f64>) -> Result<Self> {
        if predictions.iter().any(|v| !v.is_finite()) {
            return Err(RipwError::InvalidArgument(
                "outcome predictions contain non-finite values".into(),
            ));
        }
        Ok(Self {
            m_hat: center_doubly(predictions),
        })
    }

    pub fn zero(n_units: usize, n_periods: usize) -> Self {
        Self {
            m_hat: DMatrix::zeros(n_units, n_periods),
        }
    }

    pub fn m_hat(&self) -> &DMatrix<f64> {
        &self.m_hat
    }
}

/// Fits a baseline on `train` units and predicts it for `test` units.
pub trait OutcomeFitter: Sync {
    fn fit_predict(&self, panel: &PanelDataset, train: &[usize], test: &[usize]) -> Result<DMatrix<f64>>;
}

/// The zero baseline (one-stage estimator).
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroOutcome;

impl OutcomeFitter for ZeroOutcome {
    fn fit_predict(&self, panel: &PanelDataset, _train: &[usize], test: &[usize]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(test.len(), panel.n_periods()))
    }
}

/// Two-way fixed effects regression with covariates.
///
/// On the training units, the within-transformed outcome is regressed on
/// the within-transformed treatment and, for every covariate, its level and
/// its interactions with period dummies 2..T (so time-invariant covariates
/// can still shift trends). Predictions drop the treatment term and the
/// fixed effects, which double centering removes anyway.
#[derive(Debug, Clone, Default)]
pub struct TwfeCovariates {
    /// Covariate columns to use; `None` uses all of them.
    pub columns: Option<Vec<usize>>,
}

impl TwfeCovariates {
    fn features(&self, panel: &PanelDataset, units: &[usize]) -> Result<Vec<DMatrix<f64>>> {
        let periods = panel.n_periods();
        let columns: Vec<usize> = match &self.columns {
            Some(c) => c.clone(),
            None => (0..panel.covariates().len()).collect(),
        };
        let mut feats = Vec::new();
        for c in columns {
            let x = panel.covariate(c)?;
            let sub = DMatrix::from_fn(units.len(), periods, |r, t| x[(units[r], t)]);
            for s in 1..periods {
                feats.push(DMatrix::from_fn(units.len(), periods, |r, t| {
                    if t == s {
                        sub[(r, t)]
                    } else {
                        0.0
                    }
                }));
            }
            feats.push(sub);
        }
        Ok(feats)
    }
}

impl OutcomeFitter for TwfeCovariates {
    fn fit_predict(&self, panel: &PanelDataset, train: &[usize], test: &[usize]) -> Result<DMatrix<f64>> {
        let periods = panel.n_periods();
        let train_feats = self.features(panel, train)?;
        if train_feats.is_empty() {
            return Ok(DMatrix::zeros(test.len(), periods));
        }
        let y = DMatrix::from_fn(train.len(), periods, |r, t| panel.outcomes()[(train[r], t)]);
        let w = DMatrix::from_fn(train.len(), periods, |r, t| {
            panel.paths()[train[r]].value(t)
        });
        let mut columns = vec![center_doubly(&w)];
        columns.extend(train_feats.iter().map(center_doubly));
        let rows = train.len() * periods;
        let design = DMatrix::from_fn(rows, columns.len(), |k, j| columns[j][(k / periods, k % periods)]);
        let target = center_doubly(&y);
        let response = DVector::from_fn(rows, |k, _| target[(k / periods, k % periods)]);
        let coef = design
            .clone()
            .svd(true, true)
            .solve(&response, 1e-12)
            .map_err(|e| RipwError::InvalidArgument(format!("outcome regression failed: {e}")))?;
        let test_feats = self.features(panel, test)?;
        let mut pred = DMatrix::zeros(test.len(), periods);
        for (j, f) in test_feats.iter().enumerate() {
            pred += f * coef[j + 1];
        }
        Ok(pred)
    }
}
