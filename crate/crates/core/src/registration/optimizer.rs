//! Descent with Armijo backtracking. Directions are either the max-norm
//! scaled negative gradient or L-BFGS (two-loop recursion) when a memory is
//! configured.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Settings {
    pub max_iters: usize,
    /// First trial step along `-g / ‖g‖_∞`, in parameter units.
    pub step_init: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub shrink: f64,
    pub grow: f64,
    pub armijo: f64,
    /// Relative to the gradient max-norm at the start.
    pub grad_tol: f64,
    /// L-BFGS history length; 0 is plain gradient descent.
    pub memory: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    LineSearchStalled,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    /// Cost at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub stop: StopReason,
}

/// Minimizes `f`, which returns the cost and, when asked, the gradient.
pub(crate) fn descend<F>(mut x: Vec<f64>, level: usize, s: &Settings, mut f: F) -> Result<Outcome>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Option<Vec<f64>>)>,
{
    let (mut fx, g) = f(&x, true)?;
    if !fx.is_finite() {
        return Err(Error::NonFiniteCost { level });
    }
    let mut g = g.expect("gradient requested");
    let mut trace = vec![fx];
    let mut step = s.step_init;
    let mut stop = StopReason::MaxIterations;
    let mut g0 = None;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    for _ in 0..s.max_iters {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !gmax.is_finite() {
            return Err(Error::NonFiniteCost { level });
        }
        let g0 = *g0.get_or_insert(gmax);
        if gmax <= s.grad_tol * g0 || gmax == 0.0 {
            stop = StopReason::GradientTolerance;
            break;
        }
        // quasi-Newton directions are rescaled to max-norm 1 like the
        // gradient, so step bounds keep their parameter units
        let quasi = (!history.is_empty())
            .then(|| two_loop(&g, &history))
            .filter(|d| dot(&g, d) < 0.0)
            .map(|d| {
                let n = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                (d.into_iter().map(|v| v / n).collect::<Vec<f64>>(), n.min(s.step_max))
            });
        let used_quasi = quasi.is_some();
        let (dir, mut alpha) = quasi.unwrap_or_else(|| (g.iter().map(|v| -v / gmax).collect(), step));
        let slope = dot(&g, &dir);
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            let (ft, _) = f(&trial, false)?;
            if ft.is_finite() && ft <= fx + s.armijo * alpha * slope {
                break Some(trial);
            }
            alpha *= s.shrink;
            if alpha < s.step_min {
                break None;
            }
        };
        let Some(next) = accepted else {
            if used_quasi {
                // a stale curvature model; restart from the gradient
                history.clear();
                continue;
            }
            stop = StopReason::LineSearchStalled;
            break;
        };
        let (fn_, gn) = f(&next, true)?;
        let gn = gn.expect("gradient requested");
        if s.memory > 0 {
            let sk: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
            let yk: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            // curvature condition keeps the implicit Hessian positive definite
            let sy = dot(&sk, &yk);
            if sy > 1e-12 * dot(&sk, &sk).sqrt() * dot(&yk, &yk).sqrt() {
                if history.len() == s.memory {
                    history.pop_front();
                }
                history.push_back((sk, yk, 1.0 / sy));
            }
        }
        if !used_quasi {
            step = (alpha * s.grow).min(s.step_max);
        }
        x = next;
        fx = fn_;
        g = gn;
        trace.push(fx);
    }
    Ok(Outcome { x, trace, stop })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-H g` for the inverse-Hessian estimate held in `history` (oldest first).
fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; history.len()];
    for (i, (sk, yk, rho)) in history.iter().enumerate().rev() {
        let a = rho * dot(sk, &q);
        alphas[i] = a;
        q.iter_mut().zip(yk).for_each(|(qi, y)| *qi -= a * y);
    }
    let (sk, yk, _) = history.back().expect("non-empty history");
    let gamma = dot(sk, yk) / dot(yk, yk);
    q.iter_mut().for_each(|qi| *qi *= gamma);
    for (i, (sk, yk, rho)) in history.iter().enumerate() {
        let b = rho * dot(yk, &q);
        q.iter_mut().zip(sk).for_each(|(qi, s)| *qi += (alphas[i] - b) * s);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> Settings {
        Settings { max_iters: 500, step_init: 1.0, step_min: 1e-10, step_max: 10.0, shrink: 0.5, grow: 2.0, armijo: 1e-4, grad_tol: 1e-8, memory: 0 }
    }

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64], _: bool| -> Result<(f64, Option<Vec<f64>>)> {
            let c = (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2);
            Ok((c, Some(vec![2.0 * (x[0] - 3.0), 20.0 * (x[1] + 1.0)])))
        };
        let out = descend(vec![0.0, 0.0], 0, &settings(), f).unwrap();
        assert!((out.x[0] - 3.0).abs() < 1e-6 && (out.x[1] + 1.0).abs() < 1e-6, "{:?}", out.x);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn lbfgs_beats_descent_on_an_ill_conditioned_bowl() {
        let f = |x: &[f64], _: bool| -> Result<(f64, Option<Vec<f64>>)> {
            let c: f64 = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * 10f64.powi(i as i32) * (v - 1.0).powi(2)).sum();
            let g = x.iter().enumerate().map(|(i, v)| 2.0 * (i + 1) as f64 * 10f64.powi(i as i32) * (v - 1.0)).collect();
            Ok((c, Some(g)))
        };
        let s = Settings { max_iters: 60, ..settings() };
        let gd = descend(vec![0.0; 4], 0, &s, f).unwrap();
        let lb = descend(vec![0.0; 4], 0, &Settings { memory: 5, ..s }, f).unwrap();
        assert!(lb.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(lb.trace.last().unwrap() < &1e-10, "{:?}", lb.trace.last());
        assert!(lb.trace.last().unwrap() < gd.trace.last().unwrap());
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64], _: bool| -> Result<(f64, Option<Vec<f64>>)> { Ok((f64::NAN, Some(vec![0.0]))) };
        assert!(matches!(descend(vec![0.0], 2, &settings(), f), Err(Error::NonFiniteCost { level: 2 })));
    }
}
