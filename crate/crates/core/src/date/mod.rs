//! Solving the DATE equation for a reshaped distribution `Pi`.
//!
//! Closed forms cover two-period, staggered (equal weights) and transient
//! designs; everything else goes through a multi-start quasi-Newton search.

mod generic;
mod residual;
mod staggered;
mod transient;
mod two_period;

pub use generic::{solve_generic, SolverConfig};
pub use residual::{date_residual, effective_xi, effective_xi_of, residual_of, DateResidual};
pub use staggered::solve_staggered;
pub use transient::{solve_transient, LayerMasses};
pub use two_period::solve_two_period;

use crate::design::{DesignSupport, ReshapedDistribution, SupportKind};
use crate::error::{Result, RipwError};
use crate::panel::TimeWeights;

/// Default position on a solution segment (the midpoint).
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Tolerance used to decide that time weights are `1/T`.
pub const EQUAL_WEIGHTS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum SolutionFamily {
    Point(ReshapedDistribution),
    /// `{lambda * first + (1 - lambda) * second : lambda in (0, 1)}`.
    ///
    /// Endpoints are aligned with `support.paths()` and may hold zeros.
    Segment {
        support: DesignSupport,
        first: Vec<f64>,
        second: Vec<f64>,
    },
    /// No solution found; the generic solver reports its best objective.
    Empty { best_objective: Option<f64> },
}

impl SolutionFamily {
    pub fn is_empty(&self) -> bool {
        matches!(self, SolutionFamily::Empty { .. })
    }
}

/// Selects one member of a family: the point itself, or
/// `lambda * first + (1 - lambda) * second` for a segment.
pub fn pick_solution(family: &SolutionFamily, lambda: f64) -> Result<ReshapedDistribution> {
    match family {
        SolutionFamily::Point(p) => Ok(p.clone()),
        SolutionFamily::Segment {
            support,
            first,
            second,
        } => {
            if !(lambda > 0.0 && lambda < 1.0) {
                return Err(RipwError::EmptyFamily(format!(
                    "lambda = {lambda} is outside the open interval (0, 1)"
                )));
            }
            let probs = first
                .iter()
                .zip(second)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            ReshapedDistribution::new(support.clone(), probs)
        }
        SolutionFamily::Empty { best_objective } => Err(match best_objective {
            Some(obj) => RipwError::NoSolution {
                best_objective: *obj,
            },
            None => RipwError::EmptyFamily("the DATE equation has no solution on this support".into()),
        }),
    }
}

/// Routes a support to the matching closed form, falling back to the
/// generic solver.
pub fn solve(support: &DesignSupport, xi: &TimeWeights, config: &SolverConfig) -> Result<SolutionFamily> {
    if xi.len() != support.periods() {
        return Err(RipwError::DimensionMismatch(format!(
            "{} time weights for T = {}",
            xi.len(),
            support.periods()
        )));
    }
    let equal = xi.is_equal(EQUAL_WEIGHTS_TOLERANCE);
    if support.periods() == 2 {
        return solve_two_period(support, xi);
    }
    match support.kind() {
        SupportKind::Staggered if equal => solve_staggered(support, xi),
        SupportKind::Transient(k) if k == 1 || equal => {
            match solve_transient(support.periods(), k, xi, &LayerMasses::UniformOnSupport) {
                Err(RipwError::NoPositiveSolution(_)) => Ok(SolutionFamily::Empty {
                    best_objective: None,
                }),
                other => other,
            }
        }
        _ => solve_generic(support, xi, config),
    }
}
