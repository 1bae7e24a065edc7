//! Driven two-level system in a Lorentzian reservoir.
//!
//! Basis ordering is (|0⟩, |1⟩) with |1⟩ the excited state, so
//! σ₋ = |0⟩⟨1|, σ₊ = |1⟩⟨0| and σz = |1⟩⟨1| − |0⟩⟨0|.
//!
//! The decay rate γ(t) of a Lorentzian reservoir can be written as
//! γ(t) = −2 G'(t)/G(t) with the survival amplitude
//! G(t) = e^{−λt/2} [cosh(dt/2) + (λ/d) sinh(dt/2)], d = sqrt(λ² − 2Γλ).
//! In the strong-coupling regime G has simple zeros, which are poles of γ and
//! open every negativity window. The default integrator therefore applies the
//! dissipative part through exact ratios of G instead of sampling γ, which
//! keeps the propagation finite through the poles.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{self, TrajectoryRecord};
use crate::pulse::Pulse;

const SERIES_THRESHOLD: f64 = 1e-6;
const POLE_THRESHOLD: f64 = 1e-300;
const TRACE_DRIFT: f64 = 1e-12;
const POSITIVITY_FLOOR: f64 = -1e-6;

/// A general 2×2 complex matrix, row major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [[C64; 2]; 2]);

impl Mat2 {
    pub const fn zero() -> Self {
        Mat2([[C64::new(0.0, 0.0); 2]; 2])
    }

    pub const fn identity() -> Self {
        Mat2([
            [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        ])
    }

    pub fn sigma_x() -> Self {
        Mat2::real([[0.0, 1.0], [1.0, 0.0]])
    }

    pub fn sigma_z() -> Self {
        Mat2::real([[-1.0, 0.0], [0.0, 1.0]])
    }

    /// Lowering operator |0⟩⟨1|.
    pub fn sigma_minus() -> Self {
        Mat2::real([[0.0, 1.0], [0.0, 0.0]])
    }

    /// Raising operator |1⟩⟨0|.
    pub fn sigma_plus() -> Self {
        Mat2::real([[0.0, 0.0], [1.0, 0.0]])
    }

    pub fn real(m: [[f64; 2]; 2]) -> Self {
        Mat2([
            [C64::new(m[0][0], 0.0), C64::new(m[0][1], 0.0)],
            [C64::new(m[1][0], 0.0), C64::new(m[1][1], 0.0)],
        ])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[i][j]
    }

    pub fn trace(&self) -> C64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn dagger(&self) -> Self {
        let m = &self.0;
        Mat2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn scale(&self, s: C64) -> Self {
        let m = &self.0;
        Mat2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn commutator(&self, other: &Mat2) -> Mat2 {
        *self * *other - *other * *self
    }

    pub fn anticommutator(&self, other: &Mat2) -> Mat2 {
        *self * *other + *other * *self
    }

    /// Largest deviation from Hermiticity, max |m_ij − conj(m_ji)|.
    pub fn hermiticity_error(&self) -> f64 {
        let m = &self.0;
        (m[0][1] - m[1][0].conj())
            .norm()
            .max(m[0][0].im.abs())
            .max(m[1][1].im.abs())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2([
            [a[0][0] - b[0][0], a[0][1] - b[0][1]],
            [a[1][0] - b[1][0], a[1][1] - b[1][1]],
        ])
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

/// Qubit density matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(Mat2);

impl DensityMatrix {
    /// |0⟩⟨0|
    pub fn ground() -> Self {
        DensityMatrix(Mat2::real([[1.0, 0.0], [0.0, 0.0]]))
    }

    /// |1⟩⟨1|
    pub fn excited() -> Self {
        DensityMatrix(Mat2::real([[0.0, 0.0], [0.0, 1.0]]))
    }

    /// Builds a state from a Bloch vector (x, y, z), |r| ≤ 1, where z is the
    /// excited-minus-ground population difference.
    pub fn from_bloch(x: f64, y: f64, z: f64) -> Result<Self> {
        let r2 = x * x + y * y + z * z;
        if !(r2.is_finite() && r2 <= 1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "Bloch vector length {} exceeds 1",
                r2.sqrt()
            )));
        }
        let off = C64::new(x, -y) * 0.5;
        Ok(DensityMatrix(Mat2([
            [C64::new((1.0 - z) * 0.5, 0.0), off],
            [off.conj(), C64::new((1.0 + z) * 0.5, 0.0)],
        ])))
    }

    /// Validates Hermiticity, unit trace and positivity.
    pub fn from_matrix(m: Mat2) -> Result<Self> {
        if m.hermiticity_error() > 1e-12 {
            return Err(Error::InvalidParameter("density matrix is not Hermitian".into()));
        }
        if (m.trace().re - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "density matrix trace {} is not 1",
                m.trace().re
            )));
        }
        let rho = DensityMatrix(m);
        if rho.min_eigenvalue() < -1e-9 {
            return Err(Error::InvalidParameter(
                "density matrix is not positive semidefinite".into(),
            ));
        }
        Ok(rho)
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    pub fn element(&self, i: usize, j: usize) -> C64 {
        self.0.get(i, j)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// Eigenvalues (ascending) of the Hermitian part.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = &self.0 .0;
        let (a, d) = (m[0][0].re, m[1][1].re);
        let b = 0.5 * (m[0][1] + m[1][0].conj());
        let mean = 0.5 * (a + d);
        let radius = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        (mean - radius, mean + radius)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().0
    }

    pub fn excited_population(&self) -> f64 {
        self.0 .0[1][1].re
    }

    pub fn is_valid(&self) -> bool {
        self.0.hermiticity_error() <= 1e-12
            && (self.trace() - 1.0).abs() <= 1e-9
            && self.min_eigenvalue() >= -1e-9
    }

    fn renormalize(&mut self) -> bool {
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_DRIFT {
            self.0 = self.0.scale_re(1.0 / tr);
            true
        } else {
            false
        }
    }

    /// Nearest density matrix: shrinks a Bloch vector longer than 1 onto
    /// the unit sphere. Assumes unit trace.
    fn project_positive(&mut self) -> bool {
        let m = &mut self.0 .0;
        let z = m[1][1].re - m[0][0].re;
        let r = (z * z + 4.0 * m[0][1].norm_sqr()).sqrt();
        if r <= 1.0 {
            return false;
        }
        let z = z / r;
        m[0][0] = C64::new(0.5 * (1.0 - z), 0.0);
        m[1][1] = C64::new(0.5 * (1.0 + z), 0.0);
        m[0][1] /= r;
        m[1][0] /= r;
        true
    }

    fn symmetrize(&mut self) {
        let m = &mut self.0 .0;
        let off = 0.5 * (m[0][1] + m[1][0].conj());
        m[0][1] = off;
        m[1][0] = off.conj();
        m[0][0].im = 0.0;
        m[1][1].im = 0.0;
    }
}

/// Dynamical regime of the Lorentzian reservoir.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Γ < λ/2: real d, γ(t) > 0.
    Markovian,
    /// Γ = λ/2: d = 0.
    Critical,
    /// Γ > λ/2: imaginary d, γ(t) oscillates and changes sign.
    NonMarkovian,
}

/// Coupling Γ, spectral width λ and detuning Δ, all in inverse time units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirParams {
    pub gamma_coupling: f64,
    pub lambda_width: f64,
    pub detuning: f64,
}

impl Default for ReservoirParams {
    fn default() -> Self {
        ReservoirParams {
            gamma_coupling: 5.0,
            lambda_width: 1.0,
            detuning: 1.0,
        }
    }
}

impl ReservoirParams {
    pub fn new(gamma_coupling: f64, lambda_width: f64, detuning: f64) -> Result<Self> {
        let p = ReservoirParams {
            gamma_coupling,
            lambda_width,
            detuning,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_coupling > 0.0 && self.gamma_coupling.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "coupling must be positive, got {}",
                self.gamma_coupling
            )));
        }
        if !(self.lambda_width > 0.0 && self.lambda_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "spectral width must be positive, got {}",
                self.lambda_width
            )));
        }
        if !self.detuning.is_finite() {
            return Err(Error::InvalidParameter("detuning must be finite".into()));
        }
        Ok(())
    }

    /// d = sqrt(λ² − 2Γλ), imaginary in the strong-coupling regime.
    pub fn d(&self) -> C64 {
        let l = self.lambda_width;
        C64::new(l * l - 2.0 * self.gamma_coupling * l, 0.0).sqrt()
    }

    pub fn regime(&self) -> Regime {
        let half = 0.5 * self.lambda_width;
        if self.gamma_coupling < half {
            Regime::Markovian
        } else if self.gamma_coupling > half {
            Regime::NonMarkovian
        } else {
            Regime::Critical
        }
    }
}

/// sinh(z)/z with the removable singularity filled in.
fn sinhc(z: C64) -> C64 {
    if z.norm() < 1e-4 {
        let z2 = z * z;
        C64::new(1.0, 0.0) + z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sinh() / z
    }
}

/// Time-dependent decay rate γ(t) of the Lorentzian reservoir.
pub fn decay_rate(params: &ReservoirParams, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let g = params.gamma_coupling;
    let l = params.lambda_width;
    let d = params.d();
    if (d * t).norm() < SERIES_THRESHOLD {
        return Ok(2.0 * g * l * (0.5 * t) / (1.0 + 0.5 * l * t));
    }
    let half = d * (0.5 * t);
    let num = half.sinh() * (2.0 * g * l);
    let den = d * half.cosh() + half.sinh() * l;
    if den.norm() < POLE_THRESHOLD {
        return Err(Error::Singularity(t));
    }
    Ok((num / den).re)
}

/// Survival amplitude G(t) with G(0) = 1 and exp(−∫₀ᵗ γ) = G(t)².
///
/// Real in both regimes; changes sign at every pole of γ.
pub fn survival_amplitude(params: &ReservoirParams, t: f64) -> f64 {
    survival_amplitude_at(params, C64::new(t, 0.0)).re
}

/// Analytic continuation of G to complex time.
fn survival_amplitude_at(params: &ReservoirParams, z: C64) -> C64 {
    let l = params.lambda_width;
    let half = params.d() * (0.5 * z);
    let bracket = half.cosh() + sinhc(half) * (0.5 * l * z);
    (-0.5 * l * z).exp() * bracket
}

/// Real zeros of G (poles of γ) in [0, horizon], located on a grid of
/// `grid` intervals and refined by bisection.
pub fn amplitude_zeros(params: &ReservoirParams, horizon: f64, grid: usize) -> Vec<f64> {
    let g = |t: f64| survival_amplitude(params, t);
    let mut zeros = Vec::new();
    let step = horizon / grid as f64;
    let mut a = 0.0;
    let mut ga = g(a);
    for i in 1..=grid {
        let b = horizon * i as f64 / grid as f64;
        let gb = g(b);
        if ga * gb < 0.0 {
            let (mut lo, mut hi, mut glo) = (a, b, ga);
            while hi - lo > 1e-14 * step.max(1.0) {
                let mid = 0.5 * (lo + hi);
                let gm = g(mid);
                if gm == 0.0 {
                    (lo, hi) = (mid, mid);
                    break;
                }
                if glo * gm < 0.0 {
                    hi = mid;
                } else {
                    (lo, glo) = (mid, gm);
                }
            }
            zeros.push(0.5 * (lo + hi));
        }
        (a, ga) = (b, gb);
    }
    zeros
}

/// Maximal intervals of the uniform grid on [0, horizon] where γ(t) < 0.
///
/// Each interval is reported as (first negative sample, last negative sample).
pub fn negativity_windows(
    params: &ReservoirParams,
    horizon: f64,
    grid: usize,
) -> Result<Vec<(f64, f64)>> {
    if grid < 100 {
        return Err(Error::InvalidParameter(format!(
            "negativity scan needs at least 100 grid points, got {grid}"
        )));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let mut windows = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for i in 0..grid {
        let t = horizon * i as f64 / (grid - 1) as f64;
        let negative = decay_rate(params, t)? < 0.0;
        open = match (open, negative) {
            (None, true) => Some((t, t)),
            (Some((start, _)), true) => Some((start, t)),
            (Some(w), false) => {
                windows.push(w);
                None
            }
            (None, false) => None,
        };
    }
    windows.extend(open);
    Ok(windows)
}

/// H = (Δ/2)σz + (Ω/2)σx
pub fn hamiltonian(params: &ReservoirParams, omega: f64) -> Mat2 {
    Mat2::sigma_z().scale_re(0.5 * params.detuning) + Mat2::sigma_x().scale_re(0.5 * omega)
}

fn lindblad_rhs_with_rate(rho: &Mat2, h: &Mat2, rate: f64) -> Mat2 {
    let sm = Mat2::sigma_minus();
    let sp = Mat2::sigma_plus();
    let unitary = h.commutator(rho).scale(C64::new(0.0, -1.0));
    let jump = sm * *rho * sp;
    let anti = (sp * sm).anticommutator(rho).scale_re(0.5);
    unitary + (jump - anti).scale_re(rate)
}

/// Right-hand side −i[H, ρ] + γ(t)(σ₋ρσ₊ − ½{σ₊σ₋, ρ}).
pub fn lindblad_rhs(
    rho: &DensityMatrix,
    t: f64,
    omega: f64,
    params: &ReservoirParams,
) -> Result<Mat2> {
    let rate = decay_rate(params, t)?;
    Ok(lindblad_rhs_with_rate(rho.matrix(), &hamiltonian(params, omega), rate))
}

/// Time-stepping scheme used by [`Propagator`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Fourth-order symmetric composition (triple jump) of Strang steps built
    /// from the exact unitary and the exact dissipative flow. Finite through
    /// the poles of γ.
    #[default]
    ExactDissipatorSplitting,
    /// Classical RK4 on the master equation. Only reliable when γ is bounded
    /// on the horizon (Markovian regime). Bins containing a pole still use
    /// the splitting on the complex-time arch.
    ClassicalRk4,
}

/// What to do when a propagated state has a negative eigenvalue below −1e-6.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityCheck {
    /// Record the minimum eigenvalue in the trajectory and continue. States
    /// handed back at bin ends are always projected onto the density
    /// matrices, so distances stay in [0, 1].
    #[default]
    Report,
    /// Abort with [`Error::Positivity`].
    Strict,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub horizon: f64,
    pub control_bins: usize,
    pub substeps_per_bin: usize,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub positivity: PositivityCheck,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            horizon: 7.0,
            control_bins: 70,
            substeps_per_bin: 20,
            integrator: Integrator::default(),
            positivity: PositivityCheck::default(),
        }
    }
}

impl PropagationConfig {
    pub fn new(horizon: f64, control_bins: usize, substeps_per_bin: usize) -> Result<Self> {
        let c = PropagationConfig {
            horizon,
            control_bins,
            substeps_per_bin,
            ..Default::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_positivity(mut self, positivity: PositivityCheck) -> Self {
        self.positivity = positivity;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_bins == 0 {
            return Err(Error::InvalidParameter("control_bins must be at least 1".into()));
        }
        if self.substeps_per_bin == 0 {
            return Err(Error::InvalidParameter(
                "substeps_per_bin must be at least 1".into(),
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Control bin width Δt = T / N_c.
    pub fn bin_width(&self) -> f64 {
        self.horizon / self.control_bins as f64
    }

    /// Integrator step h = T / (N_c · substeps).
    pub fn step(&self) -> f64 {
        self.bin_width() / self.substeps_per_bin as f64
    }

    /// Time of bin boundary k.
    pub fn boundary(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.control_bins as f64
    }
}

// Triple-jump weights: w1 + w0 + w1 = 1.
const W1: f64 = 1.351_207_191_959_657_8;
const W0: f64 = -1.702_414_383_919_315_3;

/// Per-bin diagnostics from [`Propagator::advance_bin`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BinStats {
    /// Smallest eigenvalue before the end-of-bin projection.
    pub min_eigenvalue: f64,
    pub trace_corrections: usize,
    /// Whether the end-of-bin state had to be projected back onto the
    /// density matrices.
    pub projected: bool,
}

/// Fixed-step propagator for one (reservoir, grid) pair.
///
/// Everything that depends only on time (survival-amplitude ratios, rate
/// samples) is tabulated once, so repeated propagations with different pulses
/// only pay for the state updates.
#[derive(Clone, Debug)]
pub struct Propagator {
    params: ReservoirParams,
    config: PropagationConfig,
    // Splitting: 3·substeps + 1 amplitude ratios per bin.
    // RK4: 2·substeps + 1 rate samples per bin (start, midpoint, ...).
    table: Vec<f64>,
    stride: usize,
    // Bins containing a zero of G are crossed on a complex-time arch.
    arches: Vec<Option<Arch>>,
}

impl Propagator {
    pub fn new(params: ReservoirParams, config: PropagationConfig) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        let s = config.substeps_per_bin;
        let h = config.step();
        let mut table = Vec::new();
        let stride = match config.integrator {
            Integrator::ExactDissipatorSplitting => {
                // Nodes inside one substep where dissipative flows meet the
                // unitary kicks of the triple jump.
                let offsets = [0.5 * W1, W1 + 0.5 * W0, W1 + W0 + 0.5 * W1];
                for k in 0..config.control_bins {
                    let t0 = config.boundary(k);
                    let mut prev_t = t0;
                    let mut prev_g = survival_amplitude(&params, prev_t);
                    for j in 0..s {
                        let base = t0 + j as f64 * h;
                        for off in offsets {
                            let t = base + off * h;
                            let g = survival_amplitude(&params, t);
                            table.push(amplitude_ratio(g, prev_g, prev_t).unwrap_or(f64::NAN));
                            prev_t = t;
                            prev_g = g;
                        }
                    }
                    let t1 = config.boundary(k + 1);
                    let g1 = survival_amplitude(&params, t1);
                    table.push(amplitude_ratio(g1, prev_g, prev_t).unwrap_or(f64::NAN));
                }
                3 * s + 1
            }
            Integrator::ClassicalRk4 => {
                for k in 0..config.control_bins {
                    let t0 = config.boundary(k);
                    for j in 0..(2 * s) {
                        table.push(decay_rate(&params, t0 + 0.5 * j as f64 * h).unwrap_or(f64::NAN));
                    }
                    table.push(decay_rate(&params, config.boundary(k + 1)).unwrap_or(f64::NAN));
                }
                2 * s + 1
            }
        };
        let mut arches = vec![None; config.control_bins];
        for zero in amplitude_zeros(&params, config.horizon, 64 * config.control_bins) {
            let k = ((zero / config.bin_width()) as usize).min(config.control_bins - 1);
            if arches[k].is_none() {
                arches[k] = Some(Arch::new(&params, &config, k)?);
            }
        }
        Ok(Propagator {
            params,
            config,
            table,
            stride,
            arches,
        })
    }

    pub fn params(&self) -> &ReservoirParams {
        &self.params
    }

    pub fn config(&self) -> &PropagationConfig {
        &self.config
    }

    /// Advances `rho` across control bin `bin` at constant amplitude `omega`.
    pub fn advance_bin(&self, rho: &mut DensityMatrix, bin: usize, omega: f64) -> Result<BinStats> {
        if bin >= self.config.control_bins {
            return Err(Error::InvalidParameter(format!(
                "bin {bin} out of range for {} bins",
                self.config.control_bins
            )));
        }
        if !omega.is_finite() {
            return Err(Error::NonFinite("control amplitude".into()));
        }
        let row = &self.table[bin * self.stride..(bin + 1) * self.stride];
        let h = self.config.step();
        let t0 = self.config.boundary(bin);
        let mut stats = BinStats {
            min_eigenvalue: f64::INFINITY,
            trace_corrections: 0,
            projected: false,
        };
        if let Some(arch) = &self.arches[bin] {
            let mut m = *rho.matrix();
            let mut q = arch.ratios.iter();
            for (j, &dz) in arch.steps.iter().enumerate() {
                let (uo, vo) = (unitary_at(&self.params, omega, dz * W1), unitary_at(&self.params, omega, -dz * W1));
                let (ui, vi) = (unitary_at(&self.params, omega, dz * W0), unitary_at(&self.params, omega, -dz * W0));
                dissipate_at(&mut m, *q.next().unwrap());
                m = uo * m * vo;
                dissipate_at(&mut m, *q.next().unwrap());
                m = ui * m * vi;
                dissipate_at(&mut m, *q.next().unwrap());
                m = uo * m * vo;
                if j + 1 == arch.steps.len() {
                    dissipate_at(&mut m, *q.next().unwrap());
                }
            }
            m = (m + m.dagger()).scale_re(0.5);
            self.check_state(&mut m, self.config.boundary(bin + 1), &mut stats)?;
            *rho = DensityMatrix(m);
            stats.projected = rho.project_positive();
            return Ok(stats);
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::Singularity(t0));
        }
        match self.config.integrator {
            Integrator::ExactDissipatorSplitting => {
                let u_outer = unitary(&self.params, omega, W1 * h);
                let u_inner = unitary(&self.params, omega, W0 * h);
                let (ud_outer, ud_inner) = (u_outer.dagger(), u_inner.dagger());
                let mut m = *rho.matrix();
                let mut q = row.iter();
                for j in 0..self.config.substeps_per_bin {
                    dissipate(&mut m, *q.next().unwrap());
                    m = u_outer * m * ud_outer;
                    dissipate(&mut m, *q.next().unwrap());
                    m = u_inner * m * ud_inner;
                    dissipate(&mut m, *q.next().unwrap());
                    m = u_outer * m * ud_outer;
                    if j + 1 == self.config.substeps_per_bin {
                        dissipate(&mut m, *q.next().unwrap());
                    }
                    // Mid-bin diagnostics are taken between splitting nodes.
                    self.check_state(&mut m, t0 + (j as f64 + 1.0) * h, &mut stats)?;
                }
                *rho = DensityMatrix(m);
            }
            Integrator::ClassicalRk4 => {
                let ham = hamiltonian(&self.params, omega);
                let mut m = *rho.matrix();
                for j in 0..self.config.substeps_per_bin {
                    let (g0, gm, g1) = (row[2 * j], row[2 * j + 1], row[2 * j + 2]);
                    let k1 = lindblad_rhs_with_rate(&m, &ham, g0);
                    let k2 = lindblad_rhs_with_rate(&(m + k1.scale_re(0.5 * h)), &ham, gm);
                    let k3 = lindblad_rhs_with_rate(&(m + k2.scale_re(0.5 * h)), &ham, gm);
                    let k4 = lindblad_rhs_with_rate(&(m + k3.scale_re(h)), &ham, g1);
                    m = m + (k1 + (k2 + k3).scale_re(2.0) + k4).scale_re(h / 6.0);
                    self.check_state(&mut m, t0 + (j as f64 + 1.0) * h, &mut stats)?;
                }
                *rho = DensityMatrix(m);
            }
        }
        stats.projected = rho.project_positive();
        Ok(stats)
    }

    fn check_state(&self, m: &mut Mat2, t: f64, stats: &mut BinStats) -> Result<()> {
        let mut rho = DensityMatrix(*m);
        rho.symmetrize();
        if rho.renormalize() {
            stats.trace_corrections += 1;
            log::debug!("renormalized trace drift at t = {t}");
        }
        let min_eig = rho.min_eigenvalue();
        if !min_eig.is_finite() {
            return Err(Error::NonFinite(format!("propagated state at t = {t}")));
        }
        if min_eig < POSITIVITY_FLOOR && self.config.positivity == PositivityCheck::Strict {
            return Err(Error::Positivity {
                time: t,
                eigenvalue: min_eig,
            });
        }
        stats.min_eigenvalue = stats.min_eigenvalue.min(min_eig);
        *m = *rho.matrix();
        Ok(())
    }

    /// Propagates a pair of states under `pulse`, sampling at bin boundaries.
    pub fn propagate_pair(
        &self,
        rho1: &DensityMatrix,
        rho2: &DensityMatrix,
        pulse: &Pulse,
    ) -> Result<TrajectoryRecord> {
        let n = self.config.control_bins;
        if pulse.len() != n {
            return Err(Error::ShapeMismatch {
                context: "pulse bins",
                expected: n,
                got: pulse.len(),
            });
        }
        if ((pulse.horizon() - self.config.horizon) / self.config.horizon).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "pulse horizon {} does not match propagation horizon {}",
                pulse.horizon(),
                self.config.horizon
            )));
        }
        let (mut a, mut b) = (*rho1, *rho2);
        let mut distances = Vec::with_capacity(n + 1);
        distances.push(measure::trace_distance(&a, &b));
        let mut min_eig = a.min_eigenvalue().min(b.min_eigenvalue());
        let mut corrections = 0;
        let mut projections = 0;
        for (k, &omega) in pulse.amplitudes().iter().enumerate() {
            for s in [self.advance_bin(&mut a, k, omega)?, self.advance_bin(&mut b, k, omega)?] {
                min_eig = min_eig.min(s.min_eigenvalue);
                corrections += s.trace_corrections;
                projections += usize::from(s.projected);
            }
            distances.push(measure::trace_distance(&a, &b));
        }
        let times: Vec<f64> = (0..=n).map(|k| self.config.boundary(k)).collect();
        let gamma = times
            .iter()
            .map(|&t| decay_rate(&self.params, t))
            .collect::<Result<Vec<_>>>()?;
        let mut omega: Vec<f64> = pulse.amplitudes().to_vec();
        omega.push(*omega.last().unwrap());
        TrajectoryRecord::from_samples(times, distances, gamma, omega, self.config.bin_width())
            .map(|r| r.with_diagnostics(min_eig, corrections, projections))
    }
}

fn amplitude_ratio(g: f64, prev_g: f64, prev_t: f64) -> Result<f64> {
    if prev_g.abs() < POLE_THRESHOLD {
        return Err(Error::Singularity(prev_t));
    }
    Ok(g / prev_g)
}

/// Exact flow of ρ' = γ(t)(σ₋ρσ₊ − ½{σ₊σ₋, ρ}) between two times whose
/// survival amplitudes differ by the factor `q`.
#[inline]
fn dissipate(m: &mut Mat2, q: f64) {
    let p = m.0[1][1];
    let kept = p * (q * q);
    m.0[0][0] += p - kept;
    m.0[1][1] = kept;
    m.0[0][1] *= q;
    m.0[1][0] *= q;
}

#[inline]
fn dissipate_at(m: &mut Mat2, q: C64) {
    let p = m.0[1][1];
    let kept = p * (q * q);
    m.0[0][0] += p - kept;
    m.0[1][1] = kept;
    m.0[0][1] *= q;
    m.0[1][0] *= q;
}

/// exp(−iHτ) for constant Ω.
fn unitary(params: &ReservoirParams, omega: f64, tau: f64) -> Mat2 {
    unitary_at(params, omega, C64::new(tau, 0.0))
}

/// exp(−iHτ) for complex τ.
fn unitary_at(params: &ReservoirParams, omega: f64, tau: C64) -> Mat2 {
    let delta = params.detuning;
    let w = (delta * delta + omega * omega).sqrt();
    let half = 0.5 * tau;
    let c = (half * w).cos();
    let sw = if w > 0.0 { (half * w).sin() / w } else { half };
    let mi = sw * C64::new(0.0, -1.0);
    Mat2([
        [c + mi * (-delta), mi * omega],
        [mi * omega, c + mi * delta],
    ])
}

/// Complex-time detour around the zeros of G inside one control bin.
///
/// The path z(s) = s + i(Δt/2)·sin(π(s − t₀)/Δt) leaves the real axis at
/// the bin start and returns at the bin end; it is traversed as a polygon.
/// Taking the Hermitian part of the result averages the detours above and
/// below the axis.
#[derive(Clone, Debug)]
struct Arch {
    steps: Vec<C64>,
    ratios: Vec<C64>,
}

// Arch substeps per regular substep.
const ARCH_REFINEMENT: usize = 2;

impl Arch {
    fn new(params: &ReservoirParams, config: &PropagationConfig, bin: usize) -> Result<Self> {
        let t0 = config.boundary(bin);
        let t1 = config.boundary(bin + 1);
        let width = t1 - t0;
        let n = ARCH_REFINEMENT * config.substeps_per_bin;
        let nodes: Vec<C64> = (0..=n)
            .map(|j| {
                if j == n {
                    return C64::new(t1, 0.0);
                }
                let s = t0 + width * j as f64 / n as f64;
                let lift = 0.5 * width * (std::f64::consts::PI * (s - t0) / width).sin();
                C64::new(s, lift)
            })
            .collect();
        let steps: Vec<C64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        let offsets = [0.5 * W1, W1 + 0.5 * W0, W1 + W0 + 0.5 * W1];
        let mut ratios = Vec::with_capacity(3 * n + 1);
        let mut prev = survival_amplitude_at(params, nodes[0]);
        let mut push = |z: C64, ratios: &mut Vec<C64>| -> Result<()> {
            let g = survival_amplitude_at(params, z);
            if prev.norm() < POLE_THRESHOLD {
                return Err(Error::Singularity(z.re));
            }
            ratios.push(g / prev);
            prev = g;
            Ok(())
        };
        for (z, dz) in nodes.iter().zip(&steps) {
            for off in offsets {
                push(z + dz * off, &mut ratios)?;
            }
        }
        push(nodes[n], &mut ratios)?;
        Ok(Arch { steps, ratios })
    }
}

/// Convenience wrapper building a [`Propagator`] for a single propagation.
pub fn propagate_pair(
    rho1: &DensityMatrix,
    rho2: &DensityMatrix,
    pulse: &Pulse,
    params: &ReservoirParams,
    config: &PropagationConfig,
) -> Result<TrajectoryRecord> {
    Propagator::new(*params, *config)?.propagate_pair(rho1, rho2, pulse)
}
