//! Energy densities Q(E, hbar) = P(E, hbar) exp(-(G(E) + i J(E)) / hbar) and the saddle E*.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::actions::{richardson, ActionProfile};
use crate::error::{Error, Result};
use crate::roots::brent;
use crate::scalar::Real;

/// Closed energy interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWindow<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> EnergyWindow<T> {
    pub fn new(lo: T, hi: T) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("empty window [{}, {}]", lo.as_f64(), hi.as_f64())));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, e: T) -> bool {
        e >= self.lo && e <= self.hi
    }

    pub fn check(&self, e: T) -> Result<()> {
        if self.contains(e) {
            Ok(())
        } else {
            Err(Error::OutOfWindow { energy: e.as_f64(), lo: self.lo.as_f64(), hi: self.hi.as_f64() })
        }
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    pub fn mid(&self) -> T {
        (self.lo + self.hi) * T::lit(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default + num_traits::One + num_traits::Zero"))]
pub enum DensityShape<T> {
    /// `G = g (E-E0)^2 / 2 + cubic (E-E0)^3 / 6`, constant amplitude `P`.
    Gaussian {
        g: T,
        e0: T,
        #[serde(default)]
        cubic: T,
        #[serde(default = "unit_amplitude")]
        amplitude: Complex<T>,
    },
    /// Hermite function of index `j` in the incoming momentum `k`, centred at `eta` with width
    /// `width * sqrt(hbar)`.
    Hermite {
        j: u32,
        eta: T,
        #[serde(default = "one_value")]
        width: T,
        /// Left asymptote `V(-inf)` defining `k = sqrt(2 (E - V(-inf)))`.
        #[serde(default)]
        v_left: T,
    },
}

fn unit_amplitude<T: num_traits::One + num_traits::Zero>() -> Complex<T> {
    Complex::new(T::one(), T::zero())
}

fn one_value<T: num_traits::One>() -> T {
    T::one()
}

/// Parameters of the energy density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default + num_traits::One + num_traits::Zero"))]
pub struct DensityParams<T> {
    pub shape: DensityShape<T>,
    /// Coefficients of `J` as a polynomial in `E - E0`.
    #[serde(default)]
    pub phase: Vec<T>,
    pub window: EnergyWindow<T>,
}

impl<T: Real> DensityParams<T> {
    pub fn gaussian(g: T, e0: T, window: EnergyWindow<T>) -> Result<Self> {
        let d = Self { shape: DensityShape::Gaussian { g, e0, cubic: T::zero(), amplitude: unit_amplitude() }, phase: Vec::new(), window };
        d.validate()?;
        Ok(d)
    }

    pub fn with_phase(mut self, phase: Vec<T>) -> Self {
        self.phase = phase;
        self
    }

    /// Hermite density of index `j` centred at incoming momentum `eta`.
    pub fn hermite(j: u32, eta: T, width: T, v_left: T, window: EnergyWindow<T>) -> Result<Self> {
        let d = Self { shape: DensityShape::Hermite { j, eta, width, v_left }, phase: Vec::new(), window };
        d.validate()?;
        Ok(d)
    }

    /// Energy where `G` vanishes.
    pub fn e0(&self) -> T {
        match self.shape {
            DensityShape::Gaussian { e0, .. } => e0,
            DensityShape::Hermite { eta, v_left, .. } => eta * eta * T::lit(0.5) + v_left,
        }
    }

    /// Incoming momentum at the density peak.
    pub fn k0(&self, v_left: T) -> T {
        match self.shape {
            DensityShape::Gaussian { e0, .. } => (T::lit(2.0) * (e0 - v_left)).sqrt(),
            DensityShape::Hermite { eta, .. } => eta,
        }
    }

    fn hermite_k(&self, e: T) -> T {
        match self.shape {
            DensityShape::Hermite { v_left, .. } => (T::lit(2.0) * (e - v_left)).max(T::zero()).sqrt(),
            _ => unreachable!(),
        }
    }

    pub fn g(&self, e: T) -> T {
        match self.shape {
            DensityShape::Gaussian { g, e0, cubic, .. } => {
                let d = e - e0;
                g * d * d * T::lit(0.5) + cubic * d * d * d / T::lit(6.0)
            }
            DensityShape::Hermite { eta, width, .. } => {
                let u = self.hermite_k(e) - eta;
                u * u / (T::lit(2.0) * width * width)
            }
        }
    }

    pub fn g_prime(&self, e: T) -> T {
        match self.shape {
            DensityShape::Gaussian { g, e0, cubic, .. } => {
                let d = e - e0;
                g * d + cubic * d * d * T::lit(0.5)
            }
            DensityShape::Hermite { eta, width, .. } => (T::one() - eta / self.hermite_k(e)) / (width * width),
        }
    }

    pub fn g_second(&self, e: T) -> T {
        match self.shape {
            DensityShape::Gaussian { g, e0, cubic, .. } => g + cubic * (e - e0),
            DensityShape::Hermite { eta, width, .. } => eta / (width * width * self.hermite_k(e).powi(3)),
        }
    }

    fn poly(&self, e: T, order: usize) -> T {
        let d = e - self.e0();
        let mut acc = T::zero();
        for (n, &c) in self.phase.iter().enumerate().skip(order).rev() {
            let falling = (n + 1 - order..=n).fold(1.0, |a, m| a * m as f64);
            acc = acc * d + c * T::lit(falling);
        }
        acc
    }

    pub fn j(&self, e: T) -> T {
        self.poly(e, 0)
    }

    pub fn j_prime(&self, e: T) -> T {
        self.poly(e, 1)
    }

    pub fn j_second(&self, e: T) -> T {
        self.poly(e, 2)
    }

    /// Amplitude `P(E, hbar)`.
    pub fn amplitude(&self, e: T, hbar: T) -> Complex<T> {
        match self.shape {
            DensityShape::Gaussian { amplitude, .. } => amplitude,
            DensityShape::Hermite { j, eta, width, .. } => {
                let k = self.hermite_k(e);
                let z = (k - eta) / (width * hbar.sqrt());
                let norm = (width * hbar.sqrt() * T::PI().sqrt() * T::lit(2f64.powi(j as i32)) * factorial::<T>(j)).sqrt().recip();
                Complex::new(norm * hermite_poly(j, z) / k, T::zero())
            }
        }
    }

    /// `Q(E, hbar)` inside the window.
    pub fn q(&self, e: T, hbar: T) -> Result<Complex<T>> {
        self.window.check(e)?;
        Ok(self.q_extended(e, hbar))
    }

    /// The same analytic formula evaluated without the window restriction
    /// (used to synthesise packets over the whole momentum axis).
    pub fn q_extended(&self, e: T, hbar: T) -> Complex<T> {
        let mut g = self.g(e);
        if let DensityShape::Gaussian { g: g2, e0, .. } = self.shape {
            if !self.window.contains(e) {
                g = g.max(g2 * (e - e0).powi(2) * T::lit(0.5));
            }
        }
        let phase = Complex::new(-g, -self.j(e)) / hbar;
        self.amplitude(e, hbar) * phase.exp()
    }

    /// `max(exp(-G(E1)/hbar), exp(-G(E2)/hbar))`, the size of the density at the window edges.
    pub fn edge_suppression(&self, hbar: T) -> T {
        (-self.g(self.window.lo).min(self.g(self.window.hi)) / hbar).exp()
    }

    /// Checks positivity of G away from E0, G''(E0) > 0 and finiteness of P.
    pub fn validate(&self) -> Result<()> {
        let e0 = self.e0();
        if !self.window.contains(e0) || e0 == self.window.lo || e0 == self.window.hi {
            return Err(Error::InvalidDensity(format!("E0 = {} not interior to the window", e0.as_f64())));
        }
        match self.shape {
            DensityShape::Gaussian { g, .. } if !(g > T::zero()) => {
                return Err(Error::InvalidDensity("g must be positive".into()));
            }
            DensityShape::Hermite { eta, width, .. } if !(eta > T::zero() && width > T::zero()) => {
                return Err(Error::InvalidDensity("eta and width must be positive".into()));
            }
            _ => {}
        }
        if !(self.g_second(e0) > T::zero()) {
            return Err(Error::InvalidDensity("G''(E0) must be positive".into()));
        }
        let n = 1000;
        for i in 0..=n {
            let e = self.window.lo + self.window.width() * T::lit(i as f64 / n as f64);
            let g = self.g(e);
            if (e - e0).abs() > self.window.width() * T::lit(1e-6) && !(g > T::zero()) {
                return Err(Error::InvalidDensity(format!("G({}) = {} is not positive", e.as_f64(), g.as_f64())));
            }
            if !self.amplitude(e, T::one()).norm().is_finite() {
                return Err(Error::InvalidDensity("P is not finite on the window".into()));
            }
        }
        Ok(())
    }
}

fn factorial<T: Real>(n: u32) -> T {
    (1..=n).fold(T::one(), |a, m| a * T::lit(m as f64))
}

/// Physicists' Hermite polynomial `H_n(z)`.
pub fn hermite_poly<T: Real>(n: u32, z: T) -> T {
    let two = T::lit(2.0);
    let (mut h0, mut h1) = (T::one(), two * z);
    if n == 0 {
        return h0;
    }
    for m in 1..n {
        let h2 = two * z * h1 - two * T::lit(m as f64) * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Source of the Agmon action for the saddle search.
pub trait AgmonSource<T: Real> {
    fn window(&self) -> EnergyWindow<T>;
    fn agmon(&self, e: T) -> Result<T>;
    fn agmon_prime(&self, e: T) -> Result<T>;
    /// Cheap estimate of `K'` used to bracket the saddle.
    fn agmon_prime_estimate(&self, e: T) -> Result<T> {
        self.agmon_prime(e)
    }
    /// Outgoing momentum `k+(E)`.
    fn k_plus(&self, e: T) -> T;
}

impl<T: Real> AgmonSource<T> for ActionProfile<T> {
    fn window(&self) -> EnergyWindow<T> {
        ActionProfile::window(self)
    }
    fn agmon(&self, e: T) -> Result<T> {
        ActionProfile::agmon(self, e)
    }
    fn agmon_prime(&self, e: T) -> Result<T> {
        ActionProfile::agmon_prime(self, e)
    }
    fn agmon_prime_estimate(&self, e: T) -> Result<T> {
        Ok(self.interpolated(e)?[1])
    }
    fn k_plus(&self, e: T) -> T {
        ActionProfile::k_plus(self, e)
    }
}

/// Minimiser of `alpha(E) = G(E) + K(E)/2` over the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Saddle<T> {
    pub e_star: T,
    pub alpha_star: T,
    pub alpha_second: T,
    pub k_star: T,
}

/// Locates the unique interior minimum of `alpha`.
pub fn find_e_star<T: Real, A: AgmonSource<T>>(source: &A, density: &DensityParams<T>) -> Result<Saddle<T>> {
    let w = source.window();
    let half = T::lit(0.5);
    let coarse = |e: T| -> Result<T> { Ok(density.g_prime(e) + half * source.agmon_prime_estimate(e)?) };
    let exact = |e: T| -> Result<T> { Ok(density.g_prime(e) + half * source.agmon_prime(e)?) };
    let n = 512;
    let grid: Vec<T> = (0..=n).map(|i| w.lo + w.width() * T::lit(i as f64 / n as f64)).collect();
    let vals = grid.iter().map(|&e| coarse(e)).collect::<Result<Vec<_>>>()?;
    let brackets: Vec<(T, T)> =
        (0..n).filter(|&i| vals[i] < T::zero() && vals[i + 1] >= T::zero()).map(|i| (grid[i], grid[i + 1])).collect();
    let (a, b) = match brackets[..] {
        [] => return Err(Error::NoInteriorMinimum),
        [one] => one,
        _ => return Err(Error::MultipleMinima(brackets.len())),
    };
    let lo = (a - w.width() / T::lit(n as f64)).max(w.lo);
    let hi = (b + w.width() / T::lit(n as f64)).min(w.hi);
    let failure = std::cell::RefCell::new(None);
    let f = |e: T| {
        exact(e).unwrap_or_else(|err| {
            failure.borrow_mut().get_or_insert(err);
            T::nan()
        })
    };
    let root = brent(f, lo, hi, T::tol(1e-15));
    if let Some(err) = failure.take() {
        return Err(err);
    }
    let e_star = root?;
    let residual = exact(e_star)?;
    if residual.abs() > T::tol(1e-10) {
        return Err(Error::ConvergenceFailure(format!("alpha'(E*) = {:e}", residual.as_f64())));
    }
    let alpha_second = richardson(exact, e_star)?;
    if !(alpha_second > T::zero()) {
        return Err(Error::ConvergenceFailure("alpha''(E*) is not positive".into()));
    }
    Ok(Saddle { e_star, alpha_star: density.g(e_star) + half * source.agmon(e_star)?, alpha_second, k_star: source.k_plus(e_star) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical_window() -> EnergyWindow<f64> {
        EnergyWindow::new(0.7, 0.9).unwrap()
    }

    #[test]
    fn gaussian_density_value() {
        let d = DensityParams::gaussian(30.0, 0.78, canonical_window()).unwrap();
        let q = d.q(0.8, 1.0 / 32.0).unwrap();
        assert!((q.re - (-30.0f64 * 0.0004 / 2.0 * 32.0).exp()).abs() < 1e-14 && q.im == 0.0);
        assert!(matches!(d.q(0.95, 0.1), Err(Error::OutOfWindow { .. })));
    }

    #[test]
    fn hermite_ratio() {
        let hbar: f64 = 1.0 / 32.0;
        let eta = 1.2;
        let d = DensityParams::hermite(2, eta, 1.0, 0.0, EnergyWindow::new(0.5, 0.9).unwrap()).unwrap();
        // Q times the Jacobian dE/dk = k is the momentum profile
        let prof = |k: f64| d.q_extended(k * k / 2.0, hbar) * k;
        let r = prof(eta + hbar.sqrt()) / prof(eta);
        assert!((r.re + (-0.5f64).exp()).abs() < 1e-12, "{r}");
        let r2 = prof(eta - hbar.sqrt()) / prof(eta);
        assert!((r2.re + (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn hermite_profile_is_normalised() {
        let hbar: f64 = 1.0 / 16.0;
        for j in 0..4 {
            let d = DensityParams::hermite(j, 1.2, 0.5, 0.0, EnergyWindow::new(0.5, 0.9).unwrap()).unwrap();
            let n = crate::quadrature::composite(0.2, 2.2, 200, 16, |k: f64| (d.q_extended(k * k / 2.0, hbar) * k).norm_sqr());
            assert!((n - 1.0).abs() < 1e-10, "{j}: {n}");
        }
    }

    #[test]
    fn hermite_g_matches_momentum_curvature() {
        let k0 = (2.0f64 * 0.78).sqrt();
        let w = 1.0 / (k0 * 30f64.sqrt());
        let d = DensityParams::hermite(1, k0, w, 0.0, canonical_window()).unwrap();
        assert!((d.e0() - 0.78).abs() < 1e-14);
        assert!((d.g_second(0.78) - 30.0).abs() < 1e-10);
        let h = 1e-5;
        let fd = (d.g(0.8 + h) - d.g(0.8 - h)) / (2.0 * h);
        assert!((fd - d.g_prime(0.8)).abs() < 1e-8);
    }

    #[test]
    fn phase_polynomial_derivatives() {
        let d = DensityParams::gaussian(30.0, 0.78, canonical_window()).unwrap().with_phase(vec![0.1, -2.0, 3.0, 4.0]);
        let e = 0.83;
        let h = 1e-5;
        assert!(((d.j(e + h) - d.j(e - h)) / (2.0 * h) - d.j_prime(e)).abs() < 1e-8);
        assert!(((d.j_prime(e + h) - d.j_prime(e - h)) / (2.0 * h) - d.j_second(e)).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_densities() {
        assert!(DensityParams::gaussian(-1.0, 0.78, canonical_window()).is_err());
        assert!(DensityParams::gaussian(30.0, 0.95, canonical_window()).is_err());
        let mut d = DensityParams::gaussian(30.0, 0.78, canonical_window()).unwrap();
        d.shape = DensityShape::Gaussian { g: 1.0, e0: 0.78, cubic: -100.0, amplitude: Complex::new(1.0, 0.0) };
        assert!(d.validate().is_err());
    }

    #[test]
    fn edge_suppression_is_reported() {
        let d = DensityParams::gaussian(30.0, 0.78, canonical_window()).unwrap();
        let s = d.edge_suppression(1.0 / 16.0);
        assert!((s - (-30.0f64 * 0.08f64.powi(2) / 2.0 * 16.0).exp()).abs() < 1e-14);
    }

    struct ConstantAction(EnergyWindow<f64>);

    impl AgmonSource<f64> for ConstantAction {
        fn window(&self) -> EnergyWindow<f64> {
            self.0
        }
        fn agmon(&self, _: f64) -> Result<f64> {
            Ok(1.0)
        }
        fn agmon_prime(&self, _: f64) -> Result<f64> {
            Ok(0.0)
        }
        fn k_plus(&self, e: f64) -> f64 {
            (2.0 * e).sqrt()
        }
    }

    #[test]
    fn constant_action_puts_saddle_at_e0() {
        let d = DensityParams::gaussian(30.0, 0.78, canonical_window()).unwrap();
        let s = find_e_star(&ConstantAction(canonical_window()), &d).unwrap();
        assert!((s.e_star - 0.78).abs() < 1e-13);
        assert!((s.alpha_second - 30.0).abs() < 1e-8);
    }

    struct Linear(EnergyWindow<f64>, f64);

    impl AgmonSource<f64> for Linear {
        fn window(&self) -> EnergyWindow<f64> {
            self.0
        }
        fn agmon(&self, e: f64) -> Result<f64> {
            Ok(-self.1 * e)
        }
        fn agmon_prime(&self, _: f64) -> Result<f64> {
            Ok(-self.1)
        }
        fn k_plus(&self, e: f64) -> f64 {
            (2.0 * e).sqrt()
        }
    }

    #[test]
    fn saddle_at_window_edge_is_rejected() {
        let d = DensityParams::gaussian(30.0, 0.78, canonical_window()).unwrap();
        assert!(matches!(find_e_star(&Linear(canonical_window(), 100.0), &d), Err(Error::NoInteriorMinimum)));
        let s = find_e_star(&Linear(canonical_window(), 3.0), &d).unwrap();
        assert!((s.e_star - 0.83).abs() < 1e-13);
    }

    #[test]
    fn canonical_saddle() {
        let v = crate::PotentialModel::<f64>::canonical();
        let p = ActionProfile::new(&v, canonical_window()).unwrap();
        let d = DensityParams::gaussian(30.0, 0.78, canonical_window()).unwrap();
        let s = find_e_star(&p, &d).unwrap();
        assert!((s.e_star - 0.859_854_806_075).abs() < 1e-9, "{s:?}");
        assert!((s.alpha_star - 0.418_722_468_393).abs() < 1e-9);
        assert!((s.alpha_second - 31.393_052).abs() < 1e-4);
        assert!((s.k_star - (2.0 * s.e_star).sqrt()).abs() < 1e-15);
        let a = |e: f64| d.g_prime(e) + 0.5 * p.agmon_prime(e).unwrap();
        assert!(a(s.e_star).abs() < 1e-12);
    }
}
