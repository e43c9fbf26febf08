//! Transmitted packets: the stationary superposition and its closed-form approximants.

use std::cell::RefCell;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::actions::{cumulative_from, phases, ActionDerivatives, ActionProfile};
use crate::density::{DensityParams, Saddle};
use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::potential::{PotentialModel, Side};
use crate::quadrature::GaussLegendre;
use crate::roots::brent;
use crate::scalar::Real;
use crate::scattering::{solve_stationary, SolveOptions};

type C<T> = Complex<T>;

/// Which formula produced a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Superposition,
    GaussInfinity,
    Moderate,
    Gauss,
    Reference,
    Other,
}

/// Complex samples on a uniform grid at one time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveField<T> {
    pub grid: UniformGrid<T>,
    pub values: Vec<C<T>>,
    pub t: T,
    pub hbar: T,
    pub kind: FieldKind,
}

impl<T: Real> WaveField<T> {
    pub fn new(grid: UniformGrid<T>, values: Vec<C<T>>, t: T, hbar: T, kind: FieldKind) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::GridMismatch(format!("{} values for {} grid points", values.len(), grid.n)));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidParameter("field has non-finite samples".into()));
        }
        Ok(Self { grid, values, t, hbar, kind })
    }

    pub fn norm_sqr(&self) -> T {
        self.values.iter().map(|v| v.norm_sqr()).sum::<T>() * self.grid.dx
    }

    /// Discrete L2 norm (rectangle rule).
    pub fn norm(&self) -> T {
        self.norm_sqr().sqrt()
    }

    /// `<self, other>`, antilinear in `self`.
    pub fn inner(&self, other: &Self) -> Result<C<T>> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch("inner product on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum::<C<T>>() * self.grid.dx)
    }

    /// Index and position of the largest `|value|`.
    pub fn peak(&self) -> (usize, T) {
        let i = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().partial_cmp(&b.1.norm_sqr()).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0);
        (i, self.grid.x(i))
    }

    /// The samples with `lo <= x <= hi`.
    pub fn restrict(&self, lo: T, hi: T) -> Result<Self> {
        let first = self.grid.points().position(|x| x >= lo);
        let last = self.grid.points().rposition(|x| x <= hi);
        match (first, last) {
            (Some(a), Some(b)) if b > a => Self::new(
                UniformGrid::new(self.grid.x(a), self.grid.dx, b - a + 1)?,
                self.values[a..=b].to_vec(),
                self.t,
                self.hbar,
                self.kind,
            ),
            _ => Err(Error::GridMismatch(format!("[{}, {}] holds fewer than two grid points", lo.as_f64(), hi.as_f64()))),
        }
    }

    pub fn scale(mut self, c: C<T>) -> Self {
        self.values.iter_mut().for_each(|v| *v = *v * c);
        self
    }
}

/// Classical motion at `E*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint<T> {
    pub t: T,
    pub q: T,
    pub qdot: T,
}

/// Region `1 < x < c hbar^(-beta)` where the moderate-x formula applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModerateRegion<T> {
    pub c: T,
    pub beta: T,
}

impl<T: Real> Default for ModerateRegion<T> {
    fn default() -> Self {
        Self { c: T::lit(10.0), beta: T::lit(0.25) }
    }
}

impl<T: Real> ModerateRegion<T> {
    pub fn upper(&self, hbar: T) -> T {
        self.c * hbar.powf(-self.beta)
    }

    fn check(&self, grid: &UniformGrid<T>, hbar: T) -> Result<()> {
        let hi = self.upper(hbar);
        if grid.x_min <= T::one() || grid.x_max() >= hi {
            return Err(Error::Domain(format!("grid [{}, {}] leaves 1 < x < {}", grid.x_min.as_f64(), grid.x_max().as_f64(), hi.as_f64())));
        }
        Ok(())
    }
}

/// `S`, `dS/dE` and `d2S/dE2` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eikonal<T> {
    pub s: T,
    pub s_e: T,
    pub s_ee: T,
}

/// `int_{x1}^x dy/p` at the points `xs`.
fn inverse_momentum_integrals<T: Real>(model: &PotentialModel<T>, e: T, xs: &[T]) -> Result<Vec<T>> {
    let tp = model.turning_points(e)?;
    Ok(cumulative_from(model, e, tp.x1, xs)?.1)
}

/// Eikonal and its energy derivatives on ascending points `xs > x1(E)`.
/// The second derivative comes from one Richardson extrapolation of central differences.
pub fn eikonal_table<T: Real>(model: &PotentialModel<T>, density: &DensityParams<T>, xs: &[T], t: T, e: T) -> Result<Vec<Eikonal<T>>> {
    let tp = model.turning_points(e)?;
    if xs.first().is_some_and(|&x| x <= tp.x1) {
        return Err(Error::Domain("eikonal needs x beyond the turning point".into()));
    }
    let (plain, inv) = cumulative_from(model, e, tp.x1, xs)?;
    let ph = phases(model, e, None)?;
    let prime = |e: T| -> Result<Vec<T>> {
        let ph = phases(model, e, None)?;
        let c = ph.rho_prime + density.j_prime(e);
        Ok(inverse_momentum_integrals(model, e, xs)?.into_iter().map(|b| c - b).collect())
    };
    let h = T::lit(1e-4).max(T::epsilon().cbrt() * T::lit(4.0));
    let diff = |h: T| -> Result<Vec<T>> {
        let (up, down) = (prime(e + h)?, prime(e - h)?);
        Ok(up.iter().zip(&down).map(|(a, b)| (*a - *b) / (T::lit(2.0) * h)).collect())
    };
    let (d1, d2) = (diff(h)?, diff(h * T::lit(0.5))?);
    let base = ph.rho + density.j(e) + e * t;
    let base_prime = t + ph.rho_prime + density.j_prime(e);
    Ok((0..xs.len())
        .map(|i| Eikonal { s: base - plain[i], s_e: base_prime - inv[i], s_ee: (T::lit(4.0) * d2[i] - d1[i]) / T::lit(3.0) })
        .collect())
}

/// Time `-rho'(E*) - J'(E*)` at which the trajectory leaves the turning point `x1(E*)`.
pub fn tau_min<T: Real>(model: &PotentialModel<T>, saddle: &Saddle<T>, density: &DensityParams<T>) -> Result<T> {
    let e = saddle.e_star;
    Ok(-phases(model, e, None)?.rho_prime - density.j_prime(e))
}

/// Solves `int_{x1}^q dy/p = t + rho'(E*) + J'(E*)` for the classical position `q_t`.
pub fn classical_trajectory<T: Real>(
    model: &PotentialModel<T>,
    saddle: &Saddle<T>,
    density: &DensityParams<T>,
    t: T,
) -> Result<TrajectoryPoint<T>> {
    let e = saddle.e_star;
    let tp = model.turning_points(e)?;
    let target = t + phases(model, e, None)?.rho_prime + density.j_prime(e);
    if !(target > T::zero()) {
        return Err(Error::NoRoot(format!("t = {} is below tau_min = {}", t.as_f64(), (t - target).as_f64())));
    }
    let failure = RefCell::new(None);
    let slope = model.derivative(tp.x1).abs();
    let f = |q: T| -> T {
        let delta = q - tp.x1;
        if delta < T::lit(1e-9) {
            // linearised potential next to the turning point
            return (T::lit(2.0) * delta.max(T::zero()) / slope).sqrt() - target;
        }
        match cumulative_from(model, e, tp.x1, &[q]) {
            Ok((_, b)) => b[0] - target,
            Err(err) => {
                failure.borrow_mut().get_or_insert(err);
                T::zero()
            }
        }
    };
    let lo = tp.x1;
    let mut hi = tp.x1 + (target * saddle.k_star).max(T::one());
    while f(hi) < T::zero() {
        hi = tp.x1 + (hi - tp.x1) * T::lit(2.0);
        if hi > T::lit(1e12) {
            return Err(Error::NoRoot("trajectory escapes to infinity".into()));
        }
    }
    let q = brent(&f, lo, hi, T::tol(1e-13))?;
    if let Some(err) = failure.into_inner() {
        return Err(err);
    }
    Ok(TrajectoryPoint { t, q, qdot: model.momentum(q, e) })
}

/// Time at which the classical trajectory reaches `q`.
pub fn arrival_time<T: Real>(model: &PotentialModel<T>, saddle: &Saddle<T>, density: &DensityParams<T>, q: T) -> Result<T> {
    let e = saddle.e_star;
    let b = inverse_momentum_integrals(model, e, &[q])?[0];
    Ok(b - phases(model, e, None)?.rho_prime - density.j_prime(e))
}

fn saddle_data<T: Real>(profile: &ActionProfile<T>, density: &DensityParams<T>, saddle: &Saddle<T>) -> Result<ActionDerivatives<T>> {
    profile.derivatives(density, saddle.e_star)
}

/// Large-time Gaussian in `x`, travelling at `k*` with complex width
/// `d2alpha/dk2 + i (t + d2kappa/dk2)`.
pub fn chi_gauss_infinity<T: Real>(
    saddle: &Saddle<T>,
    profile: &ActionProfile<T>,
    density: &DensityParams<T>,
    grid: UniformGrid<T>,
    t: T,
    hbar: T,
) -> Result<WaveField<T>> {
    let d = saddle_data(profile, density, saddle)?;
    let e = saddle.e_star;
    let ks = d.k_plus;
    let width = C::new(d.alpha_kk, t + d.kappa_kk);
    let amp =
        density.amplitude(e, hbar) * ((T::TAU() * hbar).sqrt() * ks * (d.k_minus / ks).sqrt() * (-d.alpha / hbar).exp()) / width.sqrt();
    let center = ks * (t + d.kappa_prime);
    let values = grid
        .points()
        .map(|x| {
            let phase = C::new(T::zero(), -(t * e + d.kappa - ks * x) / hbar);
            let u = x - center;
            amp * (phase - C::new(u * u, T::zero()) / (width * (T::lit(2.0) * hbar))).exp()
        })
        .collect();
    WaveField::new(grid, values, t, hbar, FieldKind::GaussInfinity)
}

/// Closed-form L2 norm of [`chi_gauss_infinity`].
pub fn gauss_infinity_norm<T: Real>(saddle: &Saddle<T>, profile: &ActionProfile<T>, density: &DensityParams<T>, hbar: T) -> Result<T> {
    let d = saddle_data(profile, density, saddle)?;
    let ks = d.k_plus;
    Ok((hbar * T::PI()).powf(T::lit(0.75))
        * (T::lit(2.0)).sqrt()
        * ks
        * (-d.alpha / hbar).exp()
        * density.amplitude(saddle.e_star, hbar).norm()
        * (d.k_minus / ks).sqrt()
        * d.alpha_kk.powf(T::lit(-0.25)))
}

/// `hbar^(3/4) e^{-alpha(E*)/hbar}`, the predicted size of the transmitted packet.
pub fn packet_scale<T: Real>(saddle: &Saddle<T>, hbar: T) -> T {
    hbar.powf(T::lit(0.75)) * (-saddle.alpha_star / hbar).exp()
}

fn transmitted_amplitude<T: Real>(model: &PotentialModel<T>, density: &DensityParams<T>, x: T, e: T, hbar: T) -> C<T> {
    let km = model.asymptotic_momentum(Side::Left, e);
    density.amplitude(e, hbar) * (km / model.momentum(x, e)).sqrt()
}

/// Moderate-x approximant: Laplace's method in `E` at every `x`.
pub fn chi_mod<T: Real>(
    model: &PotentialModel<T>,
    saddle: &Saddle<T>,
    density: &DensityParams<T>,
    grid: UniformGrid<T>,
    t: T,
    hbar: T,
    region: ModerateRegion<T>,
) -> Result<WaveField<T>> {
    region.check(&grid, hbar)?;
    let e = saddle.e_star;
    let xs: Vec<T> = grid.points().collect();
    let table = eikonal_table(model, density, &xs, t, e)?;
    let root = (T::TAU() * hbar).sqrt();
    let values = xs
        .iter()
        .zip(&table)
        .map(|(&x, s)| {
            let w = C::new(saddle.alpha_second, s.s_ee);
            let exponent = -C::new(saddle.alpha_star, s.s) / hbar - C::new(s.s_e * s.s_e, T::zero()) / (w * (T::lit(2.0) * hbar));
            transmitted_amplitude(model, density, x, e, hbar) * root / w.sqrt() * exponent.exp()
        })
        .collect();
    WaveField::new(grid, values, t, hbar, FieldKind::Moderate)
}

/// Gaussian centred on the classical trajectory, keeping the phase `S(x, t, E*)`.
pub fn chi_gauss<T: Real>(
    model: &PotentialModel<T>,
    saddle: &Saddle<T>,
    density: &DensityParams<T>,
    grid: UniformGrid<T>,
    t: T,
    hbar: T,
    region: ModerateRegion<T>,
) -> Result<WaveField<T>> {
    let e = saddle.e_star;
    let traj = classical_trajectory(model, saddle, density, t)?;
    if traj.q <= T::one() || traj.q >= region.upper(hbar) {
        return Err(Error::Domain(format!("q_t = {} is outside the moderate region", traj.q.as_f64())));
    }
    let s_q = eikonal_table(model, density, &[traj.q], t, e)?[0];
    let xs: Vec<T> = grid.points().collect();
    let (plain, _) = cumulative_from(model, e, model.turning_points(e)?.x1, &xs)?;
    let base = phases(model, e, None)?.rho + density.j(e) + e * t;
    let w = C::new(saddle.alpha_second, s_q.s_ee);
    let spread = w * (T::lit(2.0) * hbar * traj.qdot * traj.qdot);
    let amp = transmitted_amplitude(model, density, traj.q, e, hbar) * (T::TAU() * hbar).sqrt() / w.sqrt();
    let values = xs
        .iter()
        .zip(plain)
        .map(|(&x, a)| {
            let s = base - a;
            let u = x - traj.q;
            amp * (-C::new(saddle.alpha_star, s) / hbar - C::new(u * u, T::zero()) / spread).exp()
        })
        .collect();
    WaveField::new(grid, values, t, hbar, FieldKind::Gauss)
}

/// Complex width `-1 / (2 hbar c2)` from the local quadratic part `c2` of `ln chi`
/// at the peak, read off a second difference of the logarithm.
pub fn local_complex_width<T: Real>(field: &WaveField<T>) -> Result<C<T>> {
    let (i, _) = field.peak();
    if i == 0 || i + 1 >= field.values.len() {
        return Err(Error::InsufficientData("peak at the grid edge".into()));
    }
    let v = &field.values;
    let dx = field.grid.dx;
    let second = |m: usize| (v[i + m] * v[i - m] / (v[i] * v[i])).ln() / (T::lit(2.0 * (m * m) as f64) * dx * dx);
    // widen the stencil until the quadratic part dominates rounding in the phase
    let rough = second(1).norm();
    let reach = i.min(v.len() - 1 - i);
    let m = (T::lit(0.1) / (rough * dx * dx)).sqrt().to_usize().unwrap_or(1).clamp(1, reach);
    Ok(-(second(m) * T::lit(2.0) * field.hbar).inv())
}

/// Controls for [`chi_superposition`].
#[derive(Debug, Clone)]
pub struct SuperpositionOptions<T> {
    /// Gauss-Legendre order per panel.
    pub order: usize,
    /// Panel count; chosen from the phase and resolution rules when `None`.
    pub panels: Option<usize>,
    /// Multiplies the automatic panel count (self-convergence checks).
    pub refine: usize,
    pub solve: SolveOptions<T>,
}

impl<T: Real> Default for SuperpositionOptions<T> {
    fn default() -> Self {
        Self { order: 16, panels: None, refine: 1, solve: SolveOptions::default() }
    }
}

/// Largest node spacing of an `n`-point Gauss-Legendre rule on a unit-length panel.
fn max_node_gap(rule: &GaussLegendre) -> f64 {
    let nodes: Vec<f64> = rule.mapped(0.0, 1.0).map(|(x, _)| x).collect();
    let inner = nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    inner.max(2.0 * nodes[0])
}

/// `int_window Q(E) e^{-iEt/hbar} psi(x, E) dE` by composite Gauss-Legendre quadrature,
/// with `psi` from the stationary solver.
pub fn chi_superposition<T: Real>(
    model: &PotentialModel<T>,
    density: &DensityParams<T>,
    saddle: &Saddle<T>,
    grid: UniformGrid<T>,
    t: T,
    hbar: T,
    options: &SuperpositionOptions<T>,
) -> Result<WaveField<T>> {
    let window = density.window;
    let x1_max = model.turning_points(window.lo)?.x1;
    if grid.x_min <= x1_max {
        return Err(Error::Domain(format!("grid starts at {} inside the barrier (x1 = {})", grid.x_min.as_f64(), x1_max.as_f64())));
    }
    let xs: Vec<T> = grid.points().collect();
    let table = eikonal_table(model, density, &xs, t, saddle.e_star)?;
    // phase rate over the part of the grid that carries the packet
    let envelope = |s: &Eikonal<T>| {
        let w = C::new(saddle.alpha_second, s.s_ee);
        (-(C::new(s.s_e * s.s_e, T::zero()) / (w * (T::lit(2.0) * hbar))).re).exp()
    };
    let live = table.iter().filter(|s| envelope(s) > T::lit(1e-16)).map(|s| s.s_e.abs());
    let rate = live.fold(T::zero(), T::max).max(T::lit(1e-3));
    let max_gap = T::FRAC_PI_4() * hbar / rate;
    let rule = GaussLegendre::new(options.order.max(2));
    let gap = T::lit(max_node_gap(&rule));
    let band = T::lit(12.0) * (hbar / saddle.alpha_second).sqrt();
    let panels = match options.panels {
        Some(p) => {
            if window.width() / T::lit(p as f64) * gap > max_gap {
                return Err(Error::Resolution(format!("{p} panels leave a phase increment above pi/4 between energy nodes")));
            }
            p
        }
        None => {
            let by_phase = window.width() * gap / max_gap;
            let by_band = window.width() * T::lit(200.0) / (band * T::lit(options.order as f64));
            by_phase.max(by_band).ceil().to_usize().unwrap_or(1).max(1) * options.refine.max(1)
        }
    };
    let width = window.width() / T::lit(panels as f64);
    let nodes: Vec<(T, T)> = (0..panels)
        .flat_map(|p| {
            let a = window.lo + width * T::lit(p as f64);
            rule.mapped(a, a + width).collect::<Vec<_>>()
        })
        .collect();
    superpose(model, density, &nodes, grid, t, hbar, &options.solve)
}

/// `sum_j w_j Q(E_j) e^{-i E_j t / hbar} psi(x, E_j)` over explicit energy nodes.
/// The sum runs in node order, so results are reproducible across thread counts.
pub fn superpose<T: Real>(
    model: &PotentialModel<T>,
    density: &DensityParams<T>,
    nodes: &[(T, T)],
    grid: UniformGrid<T>,
    t: T,
    hbar: T,
    solve: &SolveOptions<T>,
) -> Result<WaveField<T>> {
    let opts = solve.clone().with_samples(grid);
    let parts: Vec<Vec<C<T>>> = nodes
        .par_iter()
        .map(|&(e, w)| -> Result<Vec<C<T>>> {
            let sol = solve_stationary(model, e, hbar, &opts)?;
            let c = density.q(e, hbar)? * C::from_polar(w, -e * t / hbar);
            let (_, psi) = sol.samples.expect("samples requested");
            Ok(psi.into_iter().map(|v| v * c).collect())
        })
        .collect::<Result<_>>()?;
    let mut values = vec![C::new(T::zero(), T::zero()); grid.n];
    for part in parts {
        for (v, p) in values.iter_mut().zip(part) {
            *v = *v + p;
        }
    }
    WaveField::new(grid, values, t, hbar, FieldKind::Superposition)
}

/// Moments of the momentum distribution of a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumStats<T> {
    pub mean_k: T,
    pub var_k: T,
    /// RMS residual of a quadratic fit to `ln |psi^(k)|` over the main lobe, relative to the fitted range.
    pub gauss_fit_residual: T,
}

/// Smooth window: flat over the core where `|f| > 1e-6 peak` widened by half its width,
/// then a cosine roll-off of the same length.
fn taper<T: Real>(values: &[C<T>]) -> Vec<T> {
    let n = values.len();
    let peak = values.iter().map(|v| v.norm()).fold(T::zero(), T::max);
    let cut = peak * T::lit(1e-6);
    let lo = values.iter().position(|v| v.norm() > cut).unwrap_or(0) as f64;
    let hi = values.iter().rposition(|v| v.norm() > cut).unwrap_or(n - 1) as f64;
    let margin = ((hi - lo) * 0.5).max(4.0);
    let (flat_lo, flat_hi) = (lo - margin, hi + margin);
    (0..n)
        .map(|i| {
            let i = i as f64;
            let d = if i < flat_lo {
                flat_lo - i
            } else if i > flat_hi {
                i - flat_hi
            } else {
                0.0
            };
            let w = if d >= margin { 0.0 } else { 0.5 * (1.0 + (std::f64::consts::PI * d / margin).cos()) };
            T::lit(w)
        })
        .collect()
}

fn least_squares_quadratic(points: &[(f64, f64)]) -> ([f64; 3], f64) {
    // normal equations in a centred, scaled variable
    let m = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let s = points.iter().map(|p| (p.0 - m).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for &(x, y) in points {
        let u = (x - m) / s;
        let basis = [1.0, u, u * u];
        for r in 0..3 {
            b[r] += basis[r] * y;
            for c in 0..3 {
                a[r][c] += basis[r] * basis[c];
            }
        }
    }
    // Gaussian elimination with partial pivoting
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            let pivot_row = a[col];
            for (x, p) in a[r].iter_mut().zip(pivot_row).skip(col) {
                *x -= f * p;
            }
            b[r] -= f * b[col];
        }
    }
    let mut coef = [0.0; 3];
    for r in (0..3).rev() {
        coef[r] = (b[r] - (r + 1..3).map(|c| a[r][c] * coef[c]).sum::<f64>()) / a[r][r];
    }
    let rss = points
        .iter()
        .map(|&(x, y)| {
            let u = (x - m) / s;
            let f = coef[0] + coef[1] * u + coef[2] * u * u;
            (y - f).powi(2)
        })
        .sum::<f64>();
    (coef, (rss / points.len() as f64).sqrt())
}

/// Mean and variance of `|psi^(k)|^2` (k = hbar times the wavenumber) and a Gaussianity residual.
pub fn momentum_stats<T: Real>(field: &WaveField<T>) -> Result<MomentumStats<T>> {
    let v = &field.values;
    let n = v.len();
    let peak = v.iter().map(|c| c.norm()).fold(T::zero(), T::max);
    if !(peak > T::zero()) {
        return Err(Error::InsufficientData("field vanishes".into()));
    }
    let edge = v[0].norm().max(v[n - 1].norm());
    if edge > peak * T::lit(1e-3) {
        return Err(Error::Leakage(format!("edge amplitude {} of peak", (edge / peak).as_f64())));
    }
    let w = taper(v);
    let mut buf: Vec<C<T>> = v.iter().zip(&w).map(|(c, w)| *c * *w).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let dk = field.hbar * T::TAU() / (T::lit(n as f64) * field.grid.dx);
    let k_of = |j: usize| {
        let m = if j < n.div_ceil(2) { j as f64 } else { j as f64 - n as f64 };
        dk * T::lit(m)
    };
    let weights: Vec<T> = buf.iter().map(|c| c.norm_sqr()).collect();
    let total: T = weights.iter().copied().sum();
    let mean = (0..n).map(|j| k_of(j) * weights[j]).sum::<T>() / total;
    let var = (0..n).map(|j| (k_of(j) - mean).powi(2) * weights[j]).sum::<T>() / total;
    // fit the connected lobe around the peak down to 1e-4 of its amplitude
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| k_of(a).partial_cmp(&k_of(b)).expect("finite wavenumbers"));
    let top = (0..n)
        .max_by(|&a, &b| weights[order[a]].partial_cmp(&weights[order[b]]).unwrap_or(std::cmp::Ordering::Equal))
        .expect("non-empty field");
    let floor = weights[order[top]] * T::lit(1e-8);
    let lo = order[..top].iter().rposition(|&j| !(weights[j] > floor)).map_or(0, |i| i + 1);
    let hi = order[top..].iter().position(|&j| !(weights[j] > floor)).map_or(n, |i| top + i);
    let pts: Vec<(f64, f64)> = order[lo..hi].iter().map(|&j| (k_of(j).as_f64(), weights[j].sqrt().ln().as_f64())).collect();
    let residual = if pts.len() >= 4 {
        let (_, rms) = least_squares_quadratic(&pts);
        let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        rms / (hi - lo).max(f64::MIN_POSITIVE)
    } else {
        f64::NAN
    };
    Ok(MomentumStats { mean_k: mean, var_k: var, gauss_fit_residual: T::lit(residual) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{find_e_star, EnergyWindow};

    fn canonical() -> (PotentialModel<f64>, ActionProfile<f64>, DensityParams<f64>, Saddle<f64>) {
        let v = PotentialModel::canonical();
        let w = EnergyWindow::new(0.7, 0.9).unwrap();
        let prof = ActionProfile::new(&v, w).unwrap();
        let d = DensityParams::gaussian(30.0, 0.78, w).unwrap();
        let s = find_e_star(&prof, &d).unwrap();
        (v, prof, d, s)
    }

    #[test]
    fn gauss_infinity_peak_and_norm() {
        let (_, prof, d, s) = canonical();
        let hbar = 1.0 / 32.0;
        let t = 60.0;
        let dv = prof.derivatives(&d, s.e_star).unwrap();
        let center = dv.k_plus * (t + dv.kappa_prime);
        let w = C::new(dv.alpha_kk, t + dv.kappa_kk);
        let sd = (hbar * w.norm_sqr() / dv.alpha_kk).sqrt();
        let grid = UniformGrid::closed(center - 14.0 * sd, center + 14.0 * sd, 8001).unwrap();
        let f = chi_gauss_infinity(&s, &prof, &d, grid, t, hbar).unwrap();
        assert!((f.peak().1 - center).abs() <= grid.dx);
        let exact = gauss_infinity_norm(&s, &prof, &d, hbar).unwrap();
        assert!((f.norm() / exact - 1.0).abs() < 1e-6, "{} {exact}", f.norm());
        let width = local_complex_width(&f).unwrap();
        assert!((width - w).norm() < 1e-8 * w.norm(), "{width} {w}");
    }

    #[test]
    fn trajectory_solves_defining_identity() {
        let (v, _, d, s) = canonical();
        let p = classical_trajectory(&v, &s, &d, 20.0).unwrap();
        assert!((p.qdot - v.momentum(p.q, s.e_star)).abs() < 1e-12);
        let h = 1e-4;
        let a = classical_trajectory(&v, &s, &d, 20.0 + h).unwrap().q;
        let b = classical_trajectory(&v, &s, &d, 20.0 - h).unwrap().q;
        assert!(((a - b) / (2.0 * h) - p.qdot).abs() < 1e-6);
        assert!((arrival_time(&v, &s, &d, p.q).unwrap() - 20.0).abs() < 1e-9);
        assert!(matches!(classical_trajectory(&v, &s, &d, -5.0), Err(Error::NoRoot(_))));
    }

    #[test]
    fn trajectory_slope_at_large_time() {
        let (v, _, d, s) = canonical();
        let q50 = classical_trajectory(&v, &s, &d, 50.0).unwrap().q;
        let q100 = classical_trajectory(&v, &s, &d, 100.0).unwrap().q;
        assert!(((q100 - q50) / 50.0 - s.k_star).abs() < 1e-6);
    }

    #[test]
    fn phase_shift_translates_time() {
        let (v, _, d, s) = canonical();
        let shifted = d.clone().with_phase(vec![0.0, 0.7]);
        let a = classical_trajectory(&v, &s, &shifted, 20.0).unwrap().q;
        let b = classical_trajectory(&v, &s, &d, 20.7).unwrap().q;
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn moderate_formula_peaks_on_trajectory() {
        let (v, _, d, s) = canonical();
        let hbar = 1.0 / 32.0;
        let t = arrival_time(&v, &s, &d, 16.0).unwrap();
        let grid = UniformGrid::closed(12.0, 20.0, 801).unwrap();
        let m = chi_mod(&v, &s, &d, grid, t, hbar, ModerateRegion::default()).unwrap();
        assert!((m.peak().1 - 16.0).abs() <= 2.0 * grid.dx, "{}", m.peak().1);
        // at q_t the value is the prefactor alone
        let tab = eikonal_table(&v, &d, &[16.0], t, s.e_star).unwrap()[0];
        assert!(tab.s_e.abs() < 1e-9);
        let i = 400;
        let expect = (v.asymptotic_momentum(Side::Left, s.e_star) / v.momentum(16.0, s.e_star)).sqrt()
            * (std::f64::consts::TAU * hbar).sqrt()
            * (-s.alpha_star / hbar).exp()
            / C::new(s.alpha_second, tab.s_ee).norm().sqrt();
        assert!((m.values[i].norm() / expect - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gauss_and_moderate_agree_at_trajectory() {
        let (v, _, d, s) = canonical();
        let hbar = 1.0 / 32.0;
        let t = arrival_time(&v, &s, &d, 16.0).unwrap();
        let dx = 1e-3;
        let grid = UniformGrid::new(16.0 - dx, dx, 3).unwrap();
        let r = ModerateRegion::default();
        let m = chi_mod(&v, &s, &d, grid, t, hbar, r).unwrap();
        let g = chi_gauss(&v, &s, &d, grid, t, hbar, r).unwrap();
        let rel = |a: C<f64>, b: C<f64>| (a - b).norm() / b.norm();
        assert!(rel(m.values[1], g.values[1]) < 1e-8);
        // slopes share the O(1/hbar) phase and envelope terms; chi_mod adds the
        // derivative of its x-dependent prefactor P0 / sqrt(alpha'' + i S'')
        let dm = (m.values[2] - m.values[0]) / (2.0 * dx);
        let dg = (g.values[2] - g.values[0]) / (2.0 * dx);
        let p = v.momentum(16.0, s.e_star);
        let tab = eikonal_table(&v, &d, &[16.0], t, s.e_star).unwrap()[0];
        let w = C::new(s.alpha_second, tab.s_ee);
        let prefactor = m.values[1] * (v.derivative(16.0) / (2.0 * p * p) - C::new(0.0, 1.0) / (2.0 * w * p.powi(3)));
        assert!(rel(dm, dg + prefactor) < 1e-6, "{dm} {dg} {prefactor}");
        assert!(rel(dm, dg) < hbar);
    }

    #[test]
    fn moderate_formula_rejects_far_grid() {
        let (v, _, d, s) = canonical();
        let grid = UniformGrid::closed(10.0, 60.0, 11).unwrap();
        assert!(matches!(chi_mod(&v, &s, &d, grid, 30.0, 1.0 / 32.0, ModerateRegion::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn single_node_superposition() {
        let (v, _, d, _) = canonical();
        let grid = UniformGrid::closed(3.0, 6.0, 31).unwrap();
        let hbar = 1.0 / 16.0;
        let f = superpose(&v, &d, &[(0.8, 0.25)], grid, 5.0, hbar, &SolveOptions::default()).unwrap();
        let sol = solve_stationary(&v, 0.8, hbar, &SolveOptions::default().with_samples(grid)).unwrap();
        let c = d.q(0.8, hbar).unwrap() * C::from_polar(0.25, -0.8 * 5.0 / hbar);
        let psi = sol.samples.unwrap().1;
        for (a, b) in f.values.iter().zip(&psi) {
            assert!((*a - *b * c).norm() <= 1e-14 * (b * c).norm());
        }
    }

    #[test]
    fn superposition_converges_and_has_predicted_scale() {
        let (v, _, d, s) = canonical();
        let hbar = 1.0 / 16.0;
        let t = arrival_time(&v, &s, &d, 16.0).unwrap();
        let grid = UniformGrid::new(3.0, 0.02, 1351).unwrap();
        let base = SuperpositionOptions::default();
        let a = chi_superposition(&v, &d, &s, grid, t, hbar, &base).unwrap();
        let b = chi_superposition(&v, &d, &s, grid, t, hbar, &SuperpositionOptions { refine: 2, ..base }).unwrap();
        let diff: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let size: f64 = a.values.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        assert!(diff / size < 1e-8, "{}", diff / size);
        let ratio = a.norm() / packet_scale(&s, hbar);
        assert!(ratio > 0.1 && ratio < 10.0, "{ratio}");
    }

    #[test]
    fn coarse_panels_are_rejected() {
        let (v, _, d, s) = canonical();
        let grid = UniformGrid::new(3.0, 0.05, 100).unwrap();
        let o = SuperpositionOptions { panels: Some(1), order: 4, ..SuperpositionOptions::default() };
        assert!(matches!(chi_superposition(&v, &d, &s, grid, 15.0, 1.0 / 32.0, &o), Err(Error::Resolution(_))));
    }

    #[test]
    fn momentum_stats_of_gaussian() {
        let hbar = 0.05;
        let k0 = 1.3;
        let grid = UniformGrid::periodic(-40.0, 40.0, 4096).unwrap();
        let values = grid.points().map(|x: f64| C::from_polar((-x * x / 8.0).exp(), k0 * x / hbar)).collect();
        let f = WaveField::new(grid, values, 0.0, hbar, FieldKind::Other).unwrap();
        let m = momentum_stats(&f).unwrap();
        let dk = hbar * std::f64::consts::TAU / 80.0;
        assert!((m.mean_k - k0).abs() < dk, "{}", m.mean_k);
        // |psi^|^2 has variance hbar^2 / (2 * 4) for this width
        assert!((m.var_k / (hbar * hbar / 8.0) - 1.0).abs() < 1e-6);
        assert!(m.gauss_fit_residual < 1e-10, "{}", m.gauss_fit_residual);
    }

    #[test]
    fn gaussian_fit_ignores_separate_components() {
        let hbar = 0.05;
        let grid = UniformGrid::periodic(-40.0, 40.0, 4096).unwrap();
        let values = grid
            .points()
            .map(|x: f64| C::from_polar((-x * x / 8.0).exp(), 1.3 * x / hbar) + C::from_polar(1e-3 * (-x * x / 8.0).exp(), -1.3 * x / hbar))
            .collect();
        let f = WaveField::new(grid, values, 0.0, hbar, FieldKind::Other).unwrap();
        assert!(momentum_stats(&f).unwrap().gauss_fit_residual < 1e-10);
    }

    #[test]
    fn momentum_stats_detects_leakage() {
        let grid = UniformGrid::periodic(-5.0, 5.0, 256).unwrap();
        let values = grid.points().map(|x: f64| C::new((-x * x / 20.0).exp(), 0.0)).collect();
        let f = WaveField::new(grid, values, 0.0, 0.1, FieldKind::Other).unwrap();
        assert!(matches!(momentum_stats(&f), Err(Error::Leakage(_))));
    }
}
