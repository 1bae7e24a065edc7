use super::{check_start, line_search_1d, Counted, ObjectiveHistory, OctConfig, OptimizationResult, Termination};
use crate::error::Result;
use crate::pulse::Bounds;

/// Range of λ keeping x + λ d inside the box.
fn feasible_interval(x: &[f64], d: &[f64], bounds: &Bounds) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (xi, di) in x.iter().zip(d) {
        if *di == 0.0 {
            continue;
        }
        let (a, b) = ((bounds.min - xi) / di, (bounds.max - xi) / di);
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 0.0);
    }
    (lo.min(0.0), hi.max(0.0))
}

fn along(x: &[f64], d: &[f64], lambda: f64, bounds: &Bounds) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| bounds.clip(xi + lambda * di)).collect()
}

/// Powell's conjugate-direction method (maximization).
///
/// Each outer iteration runs a bounded golden-section search along every
/// direction of the set, accepting only improving moves, then replaces the
/// oldest direction with the net displacement of the iteration.
pub fn powell_optimize<F: FnMut(&[f64]) -> Result<f64>>(
    objective: F,
    x0: &[f64],
    bounds: &Bounds,
    config: &OctConfig,
) -> Result<OptimizationResult> {
    config.validate()?;
    check_start(x0, bounds)?;
    let mut f = Counted::new(objective);
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut value = f.eval(&x)?;
    let mut history = ObjectiveHistory::default();
    history.push(0, value, &x, f.calls);
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut termination = Termination::MaxIterations;
    for iteration in 1..=config.max_iterations {
        let (x_start, value_start) = (x.clone(), value);
        for d in &dirs {
            let (lo, hi) = feasible_interval(&x, d, bounds);
            let (lambda, v) = line_search_1d(|l| f.eval(&along(&x, d, l, bounds)), lo, hi, config.line_search_tol)?;
            if v > value {
                x = along(&x, d, lambda, bounds);
                value = v;
            }
        }
        history.push(iteration, value, &x, f.calls);
        let d_new: Vec<f64> = x.iter().zip(&x_start).map(|(a, b)| a - b).collect();
        let norm = d_new.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            dirs.remove(0);
            dirs.push(d_new.iter().map(|v| v / norm).collect());
        }
        if value - value_start < config.objective_tol {
            termination = Termination::ObjectiveTolerance;
            break;
        }
        if norm < config.displacement_tol {
            termination = Termination::DisplacementTolerance;
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_quadratic() {
        let r = powell_optimize(
            |x| Ok(-(x[0] - 1.0).powi(2) - (x[1] - 2.0).powi(2)),
            &[0.0, 0.0],
            &Bounds::default(),
            &OctConfig {
                line_search_tol: 1e-9,
                ..OctConfig::powell()
            },
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 2.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn one_dimensional_bounded_maximizer() {
        let r = powell_optimize(|x| Ok(x[0]), &[0.0], &Bounds::default(), &OctConfig::powell()).unwrap();
        assert_eq!(r.x, vec![5.0]);
    }

    #[test]
    fn history_is_monotone_with_increasing_counts() {
        let r = powell_optimize(
            |x| Ok((3.0 * x[0]).sin() * (2.0 * x[1]).cos() + 0.1 * x[2]),
            &[0.1, 0.2, 0.3],
            &Bounds::default(),
            &OctConfig::powell(),
        )
        .unwrap();
        for w in r.history.entries.windows(2) {
            assert!(w[1].value >= w[0].value);
            assert!(w[1].evaluations > w[0].evaluations);
        }
    }

    #[test]
    fn rejects_infeasible_start() {
        assert!(powell_optimize(|_| Ok(0.0), &[7.0], &Bounds::default(), &OctConfig::powell()).is_err());
    }

    #[test]
    fn interval_keeps_probes_in_box() {
        let b = Bounds::default();
        let (lo, hi) = feasible_interval(&[4.0, -1.0], &[0.6, -0.8], &b);
        for l in [lo, hi] {
            for v in along(&[4.0, -1.0], &[0.6, -0.8], l, &b) {
                assert!(b.contains(v));
            }
        }
        assert!((hi - 1.0 / 0.6).abs() < 1e-12);
    }
}
