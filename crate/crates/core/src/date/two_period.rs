use super::SolutionFamily;
use crate::design::{DesignSupport, ReshapedDistribution};
use crate::error::{Result, RipwError};
use crate::panel::{AssignmentPath, TimeWeights};

const TOL: f64 = 1e-12;
const GRID: usize = 1000;

/// Two periods, any support and any weights.
///
/// Writing `a, b, c, d` for `Pi(00), Pi(01), Pi(10), Pi(11)`, the DATE
/// equation is the single quadratic
/// `(d - a)(c - b) = delta ((c - b)^2 - (b + c))` with `delta = xi_1 - xi_2`.
/// In the coordinates `s = b + c`, `u = c - b`, `e = d - a` it reads
/// `e u = delta (u^2 - s)`. Supports on which the solutions are affine in
/// `s` return a segment; on the remaining ones the solution set is a curve
/// or a surface and the most balanced member of a grid scan is returned.
pub fn solve_two_period(support: &DesignSupport, xi: &TimeWeights) -> Result<SolutionFamily> {
    if support.periods() != 2 || xi.len() != 2 {
        return Err(RipwError::DimensionMismatch(
            "the two-period solver needs T = 2".into(),
        ));
    }
    let delta = xi.as_slice()[0] - xi.as_slice()[1];
    let has = |s: &str| -> bool { support.contains(&s.parse::<AssignmentPath>().expect("valid path")) };
    let (a_on, b_on, c_on, d_on) = (has("00"), has("01"), has("10"), has("11"));
    let empty = Ok(SolutionFamily::Empty {
        best_objective: None,
    });

    let segment = |first: [f64; 4], second: [f64; 4]| -> SolutionFamily {
        SolutionFamily::Segment {
            support: support.clone(),
            first: restrict(support, first),
            second: restrict(support, second),
        }
    };

    if !a_on && !d_on {
        // cross-over: s = 1, e = 0, so delta (u^2 - 1) = 0 with |u| < 1.
        return if delta.abs() <= TOL {
            Ok(segment([0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]))
        } else {
            empty
        };
    }

    if b_on != c_on {
        // u = sign_u * s.
        let sign_u = if c_on { 1.0 } else { -1.0 };
        let at = |s: f64, e: f64| from_coords(s, sign_u * s, e);
        if a_on && d_on {
            // e = sign_u delta (s - 1), positive iff |delta| < 1.
            if delta.abs() >= 1.0 - TOL {
                return empty;
            }
            return Ok(segment(at(1.0, 0.0), at(0.0, -sign_u * delta)));
        }
        // e = sign_e (1 - s): the equation holds for all s or for none.
        let sign_e = if a_on { -1.0 } else { 1.0 };
        if (sign_e * sign_u + delta).abs() > TOL {
            return empty;
        }
        return Ok(segment(at(1.0, 0.0), at(0.0, sign_e)));
    }

    if a_on && d_on && delta.abs() <= TOL {
        // e u = 0: the slice e = 0 through the uniform distribution.
        return Ok(segment(
            [0.25, 0.5, 0.0, 0.25],
            [0.25, 0.0, 0.5, 0.25],
        ));
    }

    // Both b and c positive: scan and keep the most balanced solution.
    let mut best: Option<([f64; 4], f64)> = None;
    let mut consider = |probs: [f64; 4]| {
        let on = [a_on, b_on, c_on, d_on];
        let mut min = f64::INFINITY;
        for (k, &v) in probs.iter().enumerate() {
            if on[k] {
                if v <= 0.0 {
                    return;
                }
                min = min.min(v);
            } else if v.abs() > TOL {
                return;
            }
        }
        if best.is_none_or(|(_, m)| min > m) {
            best = Some((probs, min));
        }
    };
    for i in 1..GRID {
        let s = i as f64 / GRID as f64;
        let r = 1.0 - s;
        if a_on != d_on {
            let e = if a_on { -r } else { r };
            for u in quadratic_roots(delta, -e, -delta * s) {
                if u.abs() < s {
                    consider(from_coords(s, u, e));
                }
            }
        } else {
            for k in 1..GRID {
                let u = s * (2.0 * k as f64 / GRID as f64 - 1.0);
                if u == 0.0 {
                    continue;
                }
                let e = delta * (u * u - s) / u;
                consider(from_coords(s, u, e));
            }
        }
    }
    match best {
        Some((probs, _)) => {
            let mut probs = restrict(support, probs);
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|v| *v /= total);
            Ok(SolutionFamily::Point(ReshapedDistribution::new(
                support.clone(),
                probs,
            )?))
        }
        None => empty,
    }
}

fn from_coords(s: f64, u: f64, e: f64) -> [f64; 4] {
    let r = 1.0 - s;
    [(r - e) / 2.0, (s - u) / 2.0, (s + u) / 2.0, (r + e) / 2.0]
}

fn restrict(support: &DesignSupport, probs: [f64; 4]) -> Vec<f64> {
    support
        .paths()
        .iter()
        .map(|p| {
            let v = probs[p.mask() as usize];
            if v.abs() < TOL {
                0.0
            } else {
                v
            }
        })
        .collect()
}

/// Real roots of `a x^2 + b x + c = 0`.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a.abs() <= TOL {
        return if b.abs() <= TOL { Vec::new() } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // Stable form avoiding cancellation.
    let q = -0.5 * (b + b.signum() * sq);
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}
