use crate::design::ReshapedDistribution;
use crate::error::{Result, RipwError};
use crate::panel::{AssignmentPath, TimeWeights};

/// The DATE residual `h(Pi) = E_Pi[(diag(W) - xi W') J (W - E_Pi W)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DateResidual {
    pub h: Vec<f64>,
}

impl DateResidual {
    pub fn norm_inf(&self) -> f64 {
        self.h.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.h.iter().map(|v| v * v).sum()
    }

    /// `1'h`, zero for every `Pi` up to rounding.
    pub fn total(&self) -> f64 {
        self.h.iter().sum()
    }
}

pub fn date_residual(reshaped: &ReshapedDistribution, xi: &TimeWeights) -> DateResidual {
    DateResidual {
        h: residual_of(reshaped.support().paths(), reshaped.probs(), xi.as_slice()),
    }
}

pub(crate) fn mean_path(paths: &[AssignmentPath], probs: &[f64], periods: usize) -> Vec<f64> {
    let mut mu = vec![0.0; periods];
    for (w, &p) in paths.iter().zip(probs) {
        for (t, m) in mu.iter_mut().enumerate() {
            *m += p * w.value(t);
        }
    }
    mu
}

/// `J (w - mu)`.
pub(crate) fn centered_deviation(w: &AssignmentPath, mu: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = mu.iter().enumerate().map(|(t, m)| w.value(t) - m).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    v
}

/// Residual for probabilities aligned with `paths`.
pub fn residual_of(paths: &[AssignmentPath], probs: &[f64], xi: &[f64]) -> Vec<f64> {
    let periods = xi.len();
    let mu = mean_path(paths, probs, periods);
    let mut h = vec![0.0; periods];
    for (w, &p) in paths.iter().zip(probs) {
        if p == 0.0 {
            continue;
        }
        let v = centered_deviation(w, &mu);
        let inner: f64 = (0..periods).map(|t| w.value(t) * v[t]).sum();
        for t in 0..periods {
            h[t] += p * (w.value(t) * v[t] - xi[t] * inner);
        }
    }
    h
}

/// Time weights implicitly targeted by unweighted TWFE under `W ~ Pi`:
/// `E[diag(W) J (W - mu)] / E ||J (W - mu)||^2`.
///
/// Entries always sum to one but may be negative when `Pi` is not a DATE
/// solution, so the result is a plain vector.
pub fn effective_xi(reshaped: &ReshapedDistribution) -> Result<Vec<f64>> {
    effective_xi_of(reshaped.support().paths(), reshaped.probs())
}

pub fn effective_xi_of(paths: &[AssignmentPath], probs: &[f64]) -> Result<Vec<f64>> {
    let Some(first) = paths.first() else {
        return Err(RipwError::DegenerateSupport);
    };
    let periods = first.len();
    let mu = mean_path(paths, probs, periods);
    let mut num = vec![0.0; periods];
    let mut den = 0.0;
    for (w, &p) in paths.iter().zip(probs) {
        let v = centered_deviation(w, &mu);
        for t in 0..periods {
            num[t] += p * w.value(t) * v[t];
        }
        den += p * v.iter().map(|x| x * x).sum::<f64>();
    }
    if den <= 1e-14 {
        return Err(RipwError::DegenerateSupport);
    }
    Ok(num.into_iter().map(|x| x / den).collect())
}
