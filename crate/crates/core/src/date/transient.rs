use super::{SolutionFamily, EQUAL_WEIGHTS_TOLERANCE};
use crate::design::{DesignSupport, ReshapedDistribution};
use crate::error::{Result, RipwError};
use crate::panel::TimeWeights;

const GRID: usize = 1000;
const BISECTION_STEPS: usize = 200;

/// Masses of the layers `{w : sum_t w_t = k'}` in the layered-uniform
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerMasses {
    /// Layer `k'` receives mass proportional to its size, so `Pi` is
    /// uniform on the support.
    UniformOnSupport,
    /// One positive mass per layer `0..=k`, summing to one.
    Explicit(Vec<f64>),
}

/// Transient designs `W_{T,k}` (paths with at most `k` treated periods).
///
/// For equal weights any layered-uniform distribution solves the DATE
/// equation. For `k = 1` and general weights, solutions satisfy
/// `eta_t (1 - eta_t - eta_0 / T) = xi_t b` for some `b > 0`, with
/// `eta_0 = Pi(0)` and `eta_t` the mass of the path treated only at `t`;
/// `eta_0` is scanned on a grid and the most balanced solution returned.
pub fn solve_transient(
    periods: usize,
    k: usize,
    xi: &TimeWeights,
    layers: &LayerMasses,
) -> Result<SolutionFamily> {
    let support = DesignSupport::transient(periods, k)?;
    if xi.len() != periods {
        return Err(RipwError::DimensionMismatch(format!(
            "{} time weights for T = {periods}",
            xi.len()
        )));
    }
    if xi.is_equal(EQUAL_WEIGHTS_TOLERANCE) {
        return layered_uniform(support, k, layers);
    }
    if k != 1 {
        return Err(RipwError::NonUniformWeightsUnsupported);
    }
    single_period(support, xi.as_slice())
}

fn layered_uniform(support: DesignSupport, k: usize, layers: &LayerMasses) -> Result<SolutionFamily> {
    let periods = support.periods();
    let sizes: Vec<f64> = (0..=k).map(|j| binomial(periods, j)).collect();
    let masses = match layers {
        LayerMasses::UniformOnSupport => {
            let total: f64 = sizes.iter().sum();
            sizes.iter().map(|s| s / total).collect::<Vec<_>>()
        }
        LayerMasses::Explicit(m) => {
            if m.len() != k + 1 {
                return Err(RipwError::DimensionMismatch(format!(
                    "{} layer masses for layers 0..={k}",
                    m.len()
                )));
            }
            if m.iter().any(|v| !(v.is_finite() && *v > 0.0))
                || (m.iter().sum::<f64>() - 1.0).abs() > 1e-12
            {
                return Err(RipwError::InvalidDistribution(
                    "layer masses must be positive and sum to one".into(),
                ));
            }
            m.clone()
        }
    };
    let probs = support
        .paths()
        .iter()
        .map(|p| {
            let j = p.treated_count();
            masses[j] / sizes[j]
        })
        .collect();
    Ok(SolutionFamily::Point(ReshapedDistribution::new(support, probs)?))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn single_period(support: DesignSupport, xi: &[f64]) -> Result<SolutionFamily> {
    let periods = xi.len();
    if let Some(t) = xi.iter().position(|&x| x <= 0.0) {
        return Err(RipwError::NoPositiveSolution(format!(
            "period {} has zero weight, forcing its single-period path to zero mass",
            t + 1
        )));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for g in 1..GRID {
        let eta0 = g as f64 / GRID as f64;
        if let Some(etas) = solve_given_zero_mass(eta0, xi) {
            let min = etas.iter().copied().fold(eta0, f64::min);
            if best.as_ref().is_none_or(|(_, m)| min > *m) {
                let mut full = vec![eta0];
                full.extend(etas);
                best = Some((full, min));
            }
        }
    }
    let Some((by_period, _)) = best else {
        return Err(RipwError::NoPositiveSolution(
            "no grid value of the never-treated mass admits a positive solution".into(),
        ));
    };
    // Support order is lexicographic: 0..0, then single-period paths from
    // the last period to the first.
    let probs = support
        .paths()
        .iter()
        .map(|p| match (0..periods).find(|&t| p.get(t)) {
            None => by_period[0],
            Some(t) => by_period[t + 1],
        })
        .collect();
    Ok(SolutionFamily::Point(ReshapedDistribution::new(support, probs)?))
}

/// Solves for `eta_1..eta_T` given `eta_0`, or `None` when no positive
/// solution exists.
fn solve_given_zero_mass(eta0: f64, xi: &[f64]) -> Option<Vec<f64>> {
    let periods = xi.len();
    let q = 1.0 - eta0 / periods as f64;
    let target = 1.0 - eta0;
    let b_max = xi
        .iter()
        .map(|x| q * q / (4.0 * x))
        .fold(f64::INFINITY, f64::min);
    let small = |b: f64, x: f64| -> f64 {
        let disc = (q * q - 4.0 * x * b).max(0.0);
        // Smaller root of eta^2 - q eta + x b = 0, written to avoid cancellation.
        2.0 * x * b / (q + disc.sqrt())
    };
    let large = |b: f64, x: f64| -> f64 { (q + (q * q - 4.0 * x * b).max(0.0).sqrt()) / 2.0 };
    let sum_small = |b: f64| xi.iter().map(|&x| small(b, x)).sum::<f64>();

    let etas: Vec<f64> = if sum_small(b_max) >= target {
        let b = bisect(|b| sum_small(b) - target, 0.0, b_max)?;
        xi.iter().map(|&x| small(b, x)).collect()
    } else {
        let star = (0..periods).max_by(|&i, &j| xi[i].total_cmp(&xi[j]))?;
        let mixed = |b: f64| -> Vec<f64> {
            xi.iter()
                .enumerate()
                .map(|(t, &x)| if t == star { large(b, x) } else { small(b, x) })
                .collect()
        };
        let f = |b: f64| mixed(b).iter().sum::<f64>() - target;
        let b = bisect(f, 0.0, b_max)?;
        mixed(b)
    };
    if etas.iter().all(|&e| e > 0.0) {
        Some(etas)
    } else {
        None
    }
}

/// Root of `f` on `[lo, hi]` given a sign change.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo == 0.0 {
        return Some(lo);
    }
    if f_hi == 0.0 {
        return Some(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return None;
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Some(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
