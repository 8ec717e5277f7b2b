use super::{SolutionFamily, EQUAL_WEIGHTS_TOLERANCE};
use crate::design::{DesignSupport, ReshapedDistribution};
use crate::error::{Result, RipwError};
use crate::panel::{AssignmentPath, TimeWeights};

const FEASIBILITY_TOLERANCE: f64 = 1e-14;

/// Probability `alpha + beta * t` as a function of `t = Pi(w_(j_1))`.
#[derive(Debug, Clone, Copy)]
struct Affine {
    alpha: f64,
    beta: f64,
}

impl Affine {
    fn at(self, t: f64) -> f64 {
        self.alpha + self.beta * t
    }
}

/// Equal-weight staggered designs.
///
/// With intermediate adoption counts `j_1 < ... < j_r`, the DATE equation
/// reduces to `Pi(w_(j_{k+1})) = (j_{k+1} - j_k)/T - Pi(w_(j_k))` and
/// `Pi(w_(T)) = (T - j_r)/T - Pi(w_(j_r)) + (1/T) sum_k j_k Pi(w_(j_k))`,
/// so the solutions form a segment parametrized by `Pi(w_(j_1))`.
pub fn solve_staggered(support: &DesignSupport, xi: &TimeWeights) -> Result<SolutionFamily> {
    let periods = support.periods();
    if let Some(p) = support.paths().iter().find(|p| !p.is_staggered()) {
        return Err(RipwError::NonStaggeredSupport(format!(
            "path {p} is not of the form 0..01..1"
        )));
    }
    if xi.len() != periods {
        return Err(RipwError::DimensionMismatch(format!(
            "{} time weights for T = {periods}",
            xi.len()
        )));
    }
    if !xi.is_equal(EQUAL_WEIGHTS_TOLERANCE) {
        return Err(RipwError::NonUniformWeightsUnsupported);
    }
    let t_f = periods as f64;
    let js: Vec<usize> = support
        .paths()
        .iter()
        .map(AssignmentPath::treated_count)
        .filter(|&j| j > 0 && j < periods)
        .collect();
    if js.is_empty() {
        return Err(RipwError::InvalidSupport(
            "staggered support needs an intermediate adoption path".into(),
        ));
    }

    let mut xs = vec![Affine { alpha: 0.0, beta: 1.0 }];
    for k in 1..js.len() {
        let prev = xs[k - 1];
        xs.push(Affine {
            alpha: (js[k] - js[k - 1]) as f64 / t_f - prev.alpha,
            beta: -prev.beta,
        });
    }
    let last = xs[xs.len() - 1];
    let mut all_treated = Affine {
        alpha: (periods - js[js.len() - 1]) as f64 / t_f - last.alpha,
        beta: -last.beta,
    };
    for (j, x) in js.iter().zip(&xs) {
        all_treated.alpha += *j as f64 * x.alpha / t_f;
        all_treated.beta += *j as f64 * x.beta / t_f;
    }
    let mut never = Affine {
        alpha: 1.0 - all_treated.alpha,
        beta: -all_treated.beta,
    };
    for x in &xs {
        never.alpha -= x.alpha;
        never.beta -= x.beta;
    }

    // (path, affine probability, required positive)
    let mut entries: Vec<(AssignmentPath, Affine, bool)> = Vec::new();
    let zero = AssignmentPath::staggered(periods, 0)?;
    let full = AssignmentPath::staggered(periods, periods)?;
    entries.push((zero, never, support.contains(&zero)));
    for (j, x) in js.iter().zip(&xs) {
        entries.push((AssignmentPath::staggered(periods, *j)?, *x, true));
    }
    entries.push((full, all_treated, support.contains(&full)));

    let empty = Ok(SolutionFamily::Empty {
        best_objective: None,
    });
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut pinned: Option<f64> = None;
    for (_, f, positive) in &entries {
        if *positive {
            if f.beta.abs() <= FEASIBILITY_TOLERANCE {
                if f.alpha <= FEASIBILITY_TOLERANCE {
                    return empty;
                }
            } else if f.beta > 0.0 {
                lo = lo.max(-f.alpha / f.beta);
            } else {
                hi = hi.min(-f.alpha / f.beta);
            }
        } else if f.beta.abs() <= FEASIBILITY_TOLERANCE {
            if f.alpha.abs() > FEASIBILITY_TOLERANCE {
                return empty;
            }
        } else {
            let t = -f.alpha / f.beta;
            match pinned {
                Some(s) if (s - t).abs() > FEASIBILITY_TOLERANCE => return empty,
                _ => pinned = Some(t),
            }
        }
    }
    if hi - lo <= FEASIBILITY_TOLERANCE {
        return empty;
    }
    let evaluate = |t: f64| -> Vec<f64> {
        support
            .paths()
            .iter()
            .map(|p| {
                let (_, f, _) = entries.iter().find(|(q, _, _)| q == p).expect("support path");
                let v = f.at(t);
                if v.abs() < FEASIBILITY_TOLERANCE {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    };
    if let Some(t) = pinned {
        if t <= lo + FEASIBILITY_TOLERANCE || t >= hi - FEASIBILITY_TOLERANCE {
            return empty;
        }
        let probs = evaluate(t);
        return Ok(SolutionFamily::Point(ReshapedDistribution::new(
            support.clone(),
            probs,
        )?));
    }
    Ok(SolutionFamily::Segment {
        support: support.clone(),
        first: evaluate(hi),
        second: evaluate(lo),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::{date_residual, pick_solution, DEFAULT_LAMBDA};
    use crate::design::staggered_support;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    fn segment(fam: &SolutionFamily) -> (&[f64], &[f64]) {
        match fam {
            SolutionFamily::Segment { first, second, .. } => (first, second),
            other => panic!("expected segment, got {other:?}"),
        }
    }

    #[test]
    fn t3_full_support_endpoints() {
        let fam = solve_staggered(&staggered_support(3, None).unwrap(), &TimeWeights::equal(3)).unwrap();
        let (a, b) = segment(&fam);
        assert_close(a, &[2.0 / 9.0, 1.0 / 3.0, 0.0, 4.0 / 9.0], 1e-12);
        assert_close(b, &[4.0 / 9.0, 0.0, 1.0 / 3.0, 2.0 / 9.0], 1e-12);
    }

    #[test]
    fn t3_partial_support() {
        let fam =
            solve_staggered(&staggered_support(3, Some(&[1])).unwrap(), &TimeWeights::equal(3)).unwrap();
        let (a, b) = segment(&fam);
        assert_close(a, &[0.0, 1.0, 0.0], 1e-12);
        assert_close(b, &[1.0 / 3.0, 0.0, 2.0 / 3.0], 1e-12);

        let fam =
            solve_staggered(&staggered_support(3, Some(&[2])).unwrap(), &TimeWeights::equal(3)).unwrap();
        let (a, b) = segment(&fam);
        assert_close(a, &[0.0, 1.0, 0.0], 1e-12);
        assert_close(b, &[2.0 / 3.0, 0.0, 1.0 / 3.0], 1e-12);
    }

    #[test]
    fn midpoint_formula() {
        for t in 3..=8 {
            let fam = solve_staggered(&staggered_support(t, None).unwrap(), &TimeWeights::equal(t)).unwrap();
            let mid = pick_solution(&fam, DEFAULT_LAMBDA).unwrap();
            let tf = t as f64;
            let ends = (tf + 1.0) / (4.0 * tf);
            for (k, &v) in mid.probs().iter().enumerate() {
                let expect = if k == 0 || k == t { ends } else { 1.0 / (2.0 * tf) };
                assert!((v - expect).abs() < 1e-12, "T={t} k={k} {v}");
            }
            assert!(date_residual(&mid, &TimeWeights::equal(t)).norm_inf() <= 1e-10);
        }
    }

    #[test]
    fn infeasible_adoption_set() {
        let s = staggered_support(6, Some(&[1, 2, 4, 5])).unwrap();
        assert!(solve_staggered(&s, &TimeWeights::equal(6)).unwrap().is_empty());
    }

    #[test]
    fn rejects_unequal_weights() {
        let xi = TimeWeights::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert!(matches!(
            solve_staggered(&staggered_support(3, None).unwrap(), &xi),
            Err(RipwError::NonUniformWeightsUnsupported)
        ));
    }
}
