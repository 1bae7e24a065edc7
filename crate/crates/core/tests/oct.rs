use backflow::oct::{lbfgsb_optimize, lbfgsb_optimize_with_gradient, powell_optimize, BackflowObjective, OctConfig};
use backflow::{random_pulse, Bounds, PropagationConfig, ReservoirParams};

fn spd() -> (Vec<Vec<f64>>, Vec<f64>) {
    let a = vec![
        vec![4.0, 1.0, 0.5, 0.0, 0.2],
        vec![1.0, 3.0, 0.3, 0.1, 0.0],
        vec![0.5, 0.3, 2.5, 0.4, 0.1],
        vec![0.0, 0.1, 0.4, 2.0, 0.3],
        vec![0.2, 0.0, 0.1, 0.3, 1.5],
    ];
    (a, vec![1.0, -0.5, 0.8, 0.3, -1.2])
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn quadratic(a: &[Vec<f64>], b: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
    let ax: Vec<f64> = a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect();
    let xax: f64 = x.iter().zip(&ax).map(|(p, q)| p * q).sum();
    let bx: f64 = b.iter().zip(x).map(|(p, q)| p * q).sum();
    (-0.5 * xax + bx, b.iter().zip(&ax).map(|(p, q)| p - q).collect())
}

#[test]
fn lbfgs_reaches_linear_solve_optimum() {
    let (a, b) = spd();
    let oracle = solve(a.clone(), b.clone());
    let r = lbfgsb_optimize_with_gradient(|x| Ok(quadratic(&a, &b, x)), &[0.0; 5], None, &OctConfig::lbfgsb()).unwrap();
    let iterations = r.history.entries.last().unwrap().iteration;
    assert!(iterations <= 50, "{iterations} iterations");
    for (x, o) in r.x.iter().zip(&oracle) {
        assert!((x - o).abs() < 1e-6, "{x} vs {o}");
    }
}

#[test]
fn distant_box_matches_unconstrained_run() {
    let (a, b) = spd();
    let free = lbfgsb_optimize_with_gradient(|x| Ok(quadratic(&a, &b, x)), &[0.0; 5], None, &OctConfig::lbfgsb()).unwrap();
    let boxed = Bounds::new(-1e6, 1e6).unwrap();
    let bounded =
        lbfgsb_optimize_with_gradient(|x| Ok(quadratic(&a, &b, x)), &[0.0; 5], Some(&boxed), &OctConfig::lbfgsb()).unwrap();
    assert_eq!(free.x, bounded.x);
    assert_eq!(free.history, bounded.history);
}

#[test]
fn powell_solves_separable_bounded_quadratic() {
    let config = OctConfig {
        line_search_tol: 1e-9,
        ..OctConfig::powell()
    };
    let b = Bounds::default();
    // Second coordinate's maximizer lies outside the box.
    let r = powell_optimize(|x| Ok(-(x[0] - 1.0).powi(2) - (x[1] - 7.0).powi(2)), &[0.0, 0.0], &b, &config).unwrap();
    assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 5.0).abs() < 1e-6, "{:?}", r.x);
}

fn objective() -> BackflowObjective {
    BackflowObjective::new(ReservoirParams::default(), PropagationConfig::default(), Bounds::default()).unwrap()
}

#[test]
fn powell_history_is_monotone_on_the_backflow_objective() {
    let config = OctConfig {
        max_iterations: 2,
        ..OctConfig::powell()
    };
    let handles: Vec<_> = (0..10u64)
        .map(|seed| {
            let config = config.clone();
            std::thread::spawn(move || {
                let obj = objective();
                let x0 = random_pulse(seed, Bounds::default(), 70, 7.0).unwrap().into_amplitudes();
                let start = obj.evaluate(&x0).unwrap();
                let r = powell_optimize(|x| obj.evaluate(x), &x0, obj.bounds(), &config).unwrap();
                (start, r)
            })
        })
        .collect();
    for h in handles {
        let (start, r) = h.join().unwrap();
        assert_eq!(r.history.entries[0].value, start);
        for w in r.history.entries.windows(2) {
            assert!(w[1].value >= w[0].value);
            assert!(w[1].evaluations > w[0].evaluations);
        }
    }
}

#[test]
fn reported_budgets_count_every_propagation() {
    let obj = objective();
    let x0 = random_pulse(3, Bounds::default(), 70, 7.0).unwrap().into_amplitudes();
    let r = powell_optimize(
        |x| obj.evaluate(x),
        &x0,
        obj.bounds(),
        &OctConfig {
            max_iterations: 1,
            ..OctConfig::powell()
        },
    )
    .unwrap();
    assert_eq!(r.evaluations(), obj.evaluations());

    let obj = objective();
    let r = lbfgsb_optimize(
        |x| obj.evaluate(x),
        &x0,
        obj.bounds(),
        &OctConfig {
            max_iterations: 3,
            ..OctConfig::lbfgsb()
        },
    )
    .unwrap();
    assert_eq!(r.evaluations(), obj.evaluations());
    for e in &r.history.entries {
        assert!(e.amplitudes.iter().all(|v| obj.bounds().contains(*v)));
    }
}
