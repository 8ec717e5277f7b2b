use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use super::residual::mean_path;
use super::SolutionFamily;
use crate::design::{DesignSupport, ReshapedDistribution};
use crate::error::{Result, RipwError};
use crate::panel::{AssignmentPath, TimeWeights};

/// Largest `T` accepted by the generic solver.
pub const GENERIC_MAX_PERIODS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// A start counts as solved when `||h||^2` falls to this level.
    pub obj_tol: f64,
    /// Starts after the uniform one, each from a random simplex point.
    pub max_restarts: usize,
    pub seed: u64,
    /// Lower bound on every support probability.
    pub min_prob: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            obj_tol: 1e-16,
            max_restarts: 32,
            seed: 0,
            min_prob: 1e-3,
            max_iterations: 3000,
        }
    }
}

/// Minimizes `||h(p)||^2` over the support with every probability at least
/// `min_prob`.
///
/// Probabilities are parametrized as `p = eps + (1 - K eps) softmax(z)` and
/// `z` is optimized by L-BFGS. The first start is the uniform distribution;
/// if it fails, `max_restarts` Dirichlet(1) starts run in parallel and the
/// lowest objective wins, ties going to the lower start index.
pub fn solve_generic(support: &DesignSupport, xi: &TimeWeights, config: &SolverConfig) -> Result<SolutionFamily> {
    let periods = support.periods();
    if periods > GENERIC_MAX_PERIODS {
        return Err(RipwError::DimensionTooLarge {
            periods,
            max: GENERIC_MAX_PERIODS,
        });
    }
    if xi.len() != periods {
        return Err(RipwError::DimensionMismatch(format!(
            "{} time weights for T = {periods}",
            xi.len()
        )));
    }
    let k = support.len();
    if !(config.min_prob >= 0.0) || config.min_prob * k as f64 >= 1.0 {
        return Err(RipwError::InvalidArgument(format!(
            "min_prob {} is too large for {k} paths",
            config.min_prob
        )));
    }
    let problem = Problem::new(support.paths(), xi.as_slice(), config.min_prob);

    let first = problem.minimize(vec![0.0; k], config)?;
    let best = if first.objective <= config.obj_tol {
        first
    } else {
        let runs = (1..=config.max_restarts)
            .into_par_iter()
            .map(|r| {
                let z = random_start(config.seed, r as u64, k);
                problem.minimize(z, config)
            })
            .collect::<Result<Vec<_>>>()?;
        std::iter::once(first)
            .chain(runs)
            .reduce(|a, b| if b.objective < a.objective { b } else { a })
            .expect("at least one start")
    };
    if best.objective > config.obj_tol {
        return Ok(SolutionFamily::Empty {
            best_objective: Some(best.objective),
        });
    }
    let probs = problem.probs(&best.z);
    Ok(SolutionFamily::Point(ReshapedDistribution::new(
        support.clone(),
        probs,
    )?))
}

fn random_start(seed: u64, restart: u64, k: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart);
    (0..k)
        .map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            e.max(1e-300).ln()
        })
        .collect()
}

struct Run {
    z: Vec<f64>,
    objective: f64,
}

struct Problem<'a> {
    paths: &'a [AssignmentPath],
    xi: &'a [f64],
    eps: f64,
    /// `w o Jw - xi (w'Jw)` per path.
    linear: Vec<Vec<f64>>,
}

impl<'a> Problem<'a> {
    fn new(paths: &'a [AssignmentPath], xi: &'a [f64], eps: f64) -> Self {
        let periods = xi.len();
        let linear = paths
            .iter()
            .map(|w| {
                let jw = w.centered();
                let inner: f64 = (0..periods).map(|t| w.value(t) * jw[t]).sum();
                (0..periods).map(|t| w.value(t) * jw[t] - xi[t] * inner).collect()
            })
            .collect();
        Self {
            paths,
            xi,
            eps,
            linear,
        }
    }

    fn softmax(z: &[f64]) -> Vec<f64> {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    }

    fn scale(&self) -> f64 {
        1.0 - self.paths.len() as f64 * self.eps
    }

    fn probs(&self, z: &[f64]) -> Vec<f64> {
        let scale = self.scale();
        Self::softmax(z).into_iter().map(|s| self.eps + scale * s).collect()
    }

    /// Objective and gradient with respect to `z`.
    ///
    /// `h(p) = L'p - (mu o J mu - xi mu'J mu)` with `mu = A'p`, so
    /// `d||h||^2/dp = 2 [L h - A (h o J mu + J (h o mu) - 2 (xi'h) J mu)]`.
    fn evaluate(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let periods = self.xi.len();
        let s = Self::softmax(z);
        let scale = self.scale();
        let p: Vec<f64> = s.iter().map(|v| self.eps + scale * v).collect();
        let mu = mean_path(self.paths, &p, periods);
        let j_mu = center(&mu);
        let mu_j_mu: f64 = mu.iter().zip(&j_mu).map(|(a, b)| a * b).sum();
        let mut h: Vec<f64> = (0..periods)
            .map(|t| -(mu[t] * j_mu[t] - self.xi[t] * mu_j_mu))
            .collect();
        for (row, &pk) in self.linear.iter().zip(&p) {
            for t in 0..periods {
                h[t] += pk * row[t];
            }
        }
        let objective: f64 = h.iter().map(|v| v * v).sum();

        let xi_h: f64 = self.xi.iter().zip(&h).map(|(a, b)| a * b).sum();
        let h_mu: Vec<f64> = h.iter().zip(&mu).map(|(a, b)| a * b).collect();
        let j_h_mu = center(&h_mu);
        let q: Vec<f64> = (0..periods)
            .map(|t| h[t] * j_mu[t] + j_h_mu[t] - 2.0 * xi_h * j_mu[t])
            .collect();
        let grad_p: Vec<f64> = self
            .paths
            .iter()
            .zip(&self.linear)
            .map(|(w, row)| {
                let lin: f64 = row.iter().zip(&h).map(|(a, b)| a * b).sum();
                let quad: f64 = (0..periods).map(|t| w.value(t) * q[t]).sum();
                2.0 * (lin - quad)
            })
            .collect();
        let sg: f64 = s.iter().zip(&grad_p).map(|(a, b)| a * b).sum();
        let grad_z = s
            .iter()
            .zip(&grad_p)
            .map(|(si, gi)| scale * si * (gi - sg))
            .collect();
        (objective, grad_z)
    }

    fn minimize(&self, mut z: Vec<f64>, config: &SolverConfig) -> Result<Run> {
        const MEMORY: usize = 10;
        const STOP: f64 = 1e-30;
        let (mut f, mut g) = self.evaluate(&z);
        if !f.is_finite() {
            return Err(RipwError::SolverDiverged);
        }
        let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
        let mut stalled = 0;
        for _ in 0..config.max_iterations {
            if f <= STOP || norm_inf(&g) == 0.0 {
                break;
            }
            let mut d = two_loop(&g, &history);
            let mut slope = dot(&d, &g);
            if !(slope < 0.0) {
                history.clear();
                d = g.iter().map(|v| -v).collect();
                slope = dot(&d, &g);
            }
            let mut step = if history.is_empty() {
                (1.0 / norm_inf(&g)).min(1.0)
            } else {
                1.0
            };
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + step * b).collect();
                let (ft, gt) = self.evaluate(&trial);
                if !ft.is_finite() {
                    return Err(RipwError::SolverDiverged);
                }
                if ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, ft, gt)) = accepted else {
                break;
            };
            let s: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-300 {
                if history.len() == MEMORY {
                    history.remove(0);
                }
                history.push((s, y, 1.0 / sy));
            }
            if ft >= f * (1.0 - 1e-12) {
                stalled += 1;
                if stalled >= 25 {
                    z = trial;
                    f = ft;
                    break;
                }
            } else {
                stalled = 0;
            }
            z = trial;
            f = ft;
            g = gt;
        }
        Ok(Run { z, objective: f })
    }
}

fn center(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// L-BFGS search direction.
fn two_loop(g: &[f64], history: &[(Vec<f64>, Vec<f64>, f64)]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
