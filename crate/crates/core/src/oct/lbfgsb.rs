use std::collections::VecDeque;

use super::{check_start, fd_gradient_at, Counted, ObjectiveHistory, OctConfig, OptimizationResult, Termination};
use crate::error::{Error, Result};
use crate::pulse::Bounds;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const CURVATURE_FLOOR: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut [f64], bounds: Option<&Bounds>) {
    if let Some(b) = bounds {
        x.iter_mut().for_each(|v| *v = b.clip(*v));
    }
}

/// Zeroes components that would push an active bound outward.
fn free_components(v: &mut [f64], x: &[f64], bounds: Option<&Bounds>) {
    if let Some(b) = bounds {
        for (vi, xi) in v.iter_mut().zip(x) {
            if (*xi <= b.min && *vi < 0.0) || (*xi >= b.max && *vi > 0.0) {
                *vi = 0.0;
            }
        }
    }
}

/// H·g by the two-loop recursion over (s, y) pairs of the minimized −f.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q
}

fn check_finite(g: &[f64], evals: u64) -> Result<()> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient after {evals} evaluations")));
    }
    Ok(())
}

/// Limited-memory quasi-Newton maximization with projection onto `bounds`
/// (`None` runs unconstrained). `fg` returns the objective and its gradient;
/// `counter` reports the number of objective evaluations consumed so far.
fn quasi_newton<FG, C>(mut fg: FG, counter: C, x0: &[f64], bounds: Option<&Bounds>, config: &OctConfig) -> Result<OptimizationResult>
where
    FG: FnMut(&[f64], bool) -> Result<(f64, Option<Vec<f64>>)>,
    C: Fn() -> u64,
{
    config.validate()?;
    let mut x = x0.to_vec();
    let (mut value, g) = fg(&x, true)?;
    let mut g = g.unwrap();
    check_finite(&g, counter())?;
    let mut history = ObjectiveHistory::default();
    history.push(0, value, &x, counter());
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut termination = Termination::MaxIterations;
    for iteration in 1..=config.max_iterations {
        let mut pg = g.clone();
        free_components(&mut pg, &x, bounds);
        let gnorm = dot(&pg, &pg).sqrt();

        let mut p = two_loop(&g, &pairs);
        free_components(&mut p, &x, bounds);
        if dot(&p, &pg) <= 0.0 {
            // Not an ascent direction after bound handling; fall back to the
            // projected gradient.
            p = pg.clone();
            pairs.clear();
        }
        let mut eta = if pairs.is_empty() && gnorm > 0.0 {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + eta * pi).collect();
            project(&mut trial, bounds);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let (v, _) = fg(&trial, false)?;
            if v > value && v >= value + ARMIJO_C1 * dot(&g, &step) {
                accepted = Some((trial, v));
                break;
            }
            eta *= 0.5;
        }
        let Some((x_new, v_new)) = accepted else {
            history.push(iteration, value, &x, counter());
            termination = Termination::LineSearchFailed;
            break;
        };
        let (_, g_new) = fg(&x_new, true)?;
        let g_new = g_new.unwrap();
        check_finite(&g_new, counter())?;
        // Pairs of the minimized function −f.
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > CURVATURE_FLOOR {
            if pairs.len() == config.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let change = (v_new - value).abs();
        x = x_new;
        value = v_new;
        g = g_new;
        history.push(iteration, value, &x, counter());
        if gnorm < config.gradient_tol && change < config.objective_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut pg_new = g.clone();
        free_components(&mut pg_new, &x, bounds);
        if dot(&pg_new, &pg_new).sqrt() < config.gradient_tol {
            termination = Termination::GradientTolerance;
            break;
        }
    }
    Ok(OptimizationResult {
        x,
        value,
        history,
        termination,
    })
}

/// L-BFGS-B maximization with forward-difference gradients.
pub fn lbfgsb_optimize<F: FnMut(&[f64]) -> Result<f64>>(
    objective: F,
    x0: &[f64],
    bounds: &Bounds,
    config: &OctConfig,
) -> Result<OptimizationResult> {
    check_start(x0, bounds)?;
    let eps = config.fd_step_for(bounds);
    let f = std::cell::RefCell::new(Counted::new(objective));
    quasi_newton(
        |x, with_grad| {
            let mut f = f.borrow_mut();
            let v = f.eval(x)?;
            let g = if with_grad {
                Some(fd_gradient_at(&mut |y: &[f64]| f.eval(y), x, v, eps, bounds)?)
            } else {
                None
            };
            Ok((v, g))
        },
        || f.borrow().calls,
        x0,
        Some(bounds),
        config,
    )
}

/// Same iteration with a caller-supplied gradient; `bounds = None` gives
/// plain unconstrained L-BFGS.
pub fn lbfgsb_optimize_with_gradient<FG: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>>(
    objective: FG,
    x0: &[f64],
    bounds: Option<&Bounds>,
    config: &OctConfig,
) -> Result<OptimizationResult> {
    if let Some(b) = bounds {
        check_start(x0, b)?;
    }
    let state = std::cell::RefCell::new((objective, 0u64));
    quasi_newton(
        |x, with_grad| {
            let mut st = state.borrow_mut();
            st.1 += 1;
            let (v, g) = (st.0)(x)?;
            if !v.is_finite() {
                return Err(Error::NonFinite("objective value".into()));
            }
            Ok((v, with_grad.then_some(g)))
        },
        || state.borrow().1,
        x0,
        bounds,
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> (Vec<Vec<f64>>, Vec<f64>) {
        let a = vec![
            vec![4.0, 1.0, 0.5, 0.0, 0.2],
            vec![1.0, 3.0, 0.3, 0.1, 0.0],
            vec![0.5, 0.3, 2.5, 0.4, 0.1],
            vec![0.0, 0.1, 0.4, 2.0, 0.3],
            vec![0.2, 0.0, 0.1, 0.3, 1.5],
        ];
        (a, vec![1.0, -0.5, 0.8, 0.3, -1.2])
    }

    fn fg(a: &[Vec<f64>], b: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
        let ax: Vec<f64> = a.iter().map(|r| dot(r, x)).collect();
        (-0.5 * dot(x, &ax) + dot(b, x), b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect())
    }

    #[test]
    fn maximizer_outside_the_box_lands_on_the_face() {
        let b = Bounds::new(-1.0, 1.0).unwrap();
        let r = lbfgsb_optimize_with_gradient(
            |x| Ok((-(x[0] - 3.0).powi(2) - (x[1] - 0.2).powi(2), vec![-2.0 * (x[0] - 3.0), -2.0 * (x[1] - 0.2)])),
            &[0.0, 0.0],
            Some(&b),
            &OctConfig::lbfgsb(),
        )
        .unwrap();
        assert_eq!(r.x[0], 1.0);
        assert!((r.x[1] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn iterates_stay_feasible() {
        let b = Bounds::new(-0.3, 0.3).unwrap();
        let (a, rhs) = quadratic();
        let r = lbfgsb_optimize(|x| Ok(fg(&a, &rhs, x).0), &[0.0; 5], &b, &OctConfig::lbfgsb()).unwrap();
        for e in &r.history.entries {
            assert!(e.amplitudes.iter().all(|v| b.contains(*v)));
        }
        for w in r.history.entries.windows(2) {
            assert!(w[1].evaluations > w[0].evaluations);
        }
    }

    #[test]
    fn rejects_non_finite_objective() {
        let r = lbfgsb_optimize(|_| Ok(f64::NAN), &[0.0], &Bounds::default(), &OctConfig::lbfgsb());
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
