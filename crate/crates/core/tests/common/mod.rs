#![allow(dead_code)]

pub mod gradients;

use backflow::{decay_rate, ReservoirParams};

/// Composite 8-point Gauss–Legendre quadrature on panels of width ≤ `h`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, h: f64) -> f64 {
    const X: [f64; 4] = [0.1834346424956498, 0.5255324099163290, 0.7966664774136267, 0.9602898564975363];
    const W: [f64; 4] = [0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763];
    if b <= a {
        return 0.0;
    }
    let n = ((b - a) / h).ceil().max(1.0) as usize;
    let w = (b - a) / n as f64;
    (0..n)
        .map(|i| {
            let c = a + (i as f64 + 0.5) * w;
            let r = 0.5 * w;
            (0..4).map(|j| W[j] * (f(c - r * X[j]) + f(c + r * X[j]))).sum::<f64>() * r
        })
        .sum()
}

/// Poles of γ on [0, horizon], located as sign changes of 1/γ through zero.
pub fn poles(params: &ReservoirParams, horizon: f64) -> Vec<f64> {
    let inv = |t: f64| 1.0 / decay_rate(params, t).unwrap();
    let n = 20_000;
    let mut out = Vec::new();
    for i in 1..n {
        let (mut a, mut b) = (horizon * (i - 1) as f64 / n as f64, horizon * i as f64 / n as f64);
        if a == 0.0 {
            continue;
        }
        let (fa, fb) = (inv(a), inv(b));
        // A pole of γ is a continuous zero crossing of 1/γ; zeros of γ make
        // 1/γ jump instead.
        if fa.signum() != fb.signum() && fa.abs() < 0.1 && fb.abs() < 0.1 {
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if inv(m).signum() == inv(a).signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            out.push(0.5 * (a + b));
        }
    }
    out
}

/// exp(−∫₀ᵗ γ), with principal values taken across poles.
///
/// Around each pole p the integrand is folded, γ(p + s) + γ(p − s), which
/// cancels the 1/s singularity. The fold radius shrinks when t is close to
/// a pole; `None` only when t sits on one.
pub fn undriven_distance_oracle(params: &ReservoirParams, poles: &[f64], t: f64) -> Option<f64> {
    let gamma = |s: f64| decay_rate(params, s).unwrap();
    let mut start = 0.0;
    let mut total = 0.0;
    for &p in poles {
        let delta = (0.5 * (t - p).abs()).min(0.05);
        if delta < 1e-6 {
            return None;
        }
        if p > t {
            break;
        }
        total += gauss_legendre(&gamma, start, p - delta, 2e-3);
        let folded = |s: f64| gamma(p + s) + gamma(p - s);
        total += gauss_legendre(&folded, 0.0, delta, 1e-3);
        start = p + delta;
    }
    total += gauss_legendre(&gamma, start, t, 2e-3);
    Some((-total).exp())
}
