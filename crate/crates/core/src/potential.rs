//! Barrier potentials V(x) with mass 1 and hbar as the only scale.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::{bisect, minimize};
use crate::scalar::Real;

/// One analytic term of a tabulated potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Term<T> {
    /// `amplitude * sech^2(a (x - center))`
    Sech2 { amplitude: T, a: T, center: T },
    /// `amplitude * exp(-a (x - center)^2)`
    Gaussian { amplitude: T, a: T, center: T },
    /// `amplitude * (1 + tanh(a (x - center))) / 2`, a smooth step to `amplitude` on the right.
    Step { amplitude: T, a: T, center: T },
}

impl<T: Real> Term<T> {
    fn value(&self, x: T) -> T {
        match *self {
            Term::Sech2 { amplitude, a, center } => amplitude * sech2(a * (x - center)),
            Term::Gaussian { amplitude, a, center } => amplitude * (-a * (x - center).powi(2)).exp(),
            Term::Step { amplitude, a, center } => amplitude * (T::one() + (a * (x - center)).tanh()) * T::lit(0.5),
        }
    }

    fn derivative(&self, x: T) -> T {
        match *self {
            Term::Sech2 { amplitude, a, center } => {
                let u = a * (x - center);
                -T::lit(2.0) * a * amplitude * sech2(u) * u.tanh()
            }
            Term::Gaussian { amplitude, a, center } => {
                let d = x - center;
                -T::lit(2.0) * a * amplitude * d * (-a * d * d).exp()
            }
            Term::Step { amplitude, a, center } => amplitude * a * sech2(a * (x - center)) * T::lit(0.5),
        }
    }

    fn right_limit(&self) -> T {
        match *self {
            Term::Step { amplitude, a, .. } if a > T::zero() => amplitude,
            _ => T::zero(),
        }
    }

    fn left_limit(&self) -> T {
        match *self {
            Term::Step { amplitude, a, .. } if a < T::zero() => amplitude,
            _ => T::zero(),
        }
    }
}

#[inline]
fn sech2<T: Real>(u: T) -> T {
    let c = u.abs().cosh();
    (c * c).recip()
}

type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// User-supplied potential with closed-form derivative.
#[derive(Clone)]
pub struct ClosurePotential<T> {
    pub value: ScalarFn<T>,
    pub derivative: ScalarFn<T>,
    pub left_limit: T,
    pub right_limit: T,
}

impl<T: fmt::Debug> fmt::Debug for ClosurePotential<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosurePotential")
            .field("left_limit", &self.left_limit)
            .field("right_limit", &self.right_limit)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum PotentialKind<T> {
    /// `height * sech^2(a x)`
    Eckart { height: T, a: T },
    /// `height * exp(-a x^2)`
    GaussianBump { height: T, a: T },
    /// `height / (1 + x^2)^m`
    Rational { height: T, m: u32 },
    /// Sum of analytic terms.
    Custom { terms: Vec<Term<T>> },
    #[serde(skip)]
    Closure(ClosurePotential<T>),
}

/// How fast `V(x) - V(+-inf)` decays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay<T> {
    /// Faster than any power.
    Exponential,
    /// `O(|x|^-(2 + nu))`
    Power(T),
}

/// Which asymptotic end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// A single smooth barrier with constant asymptotes.
#[derive(Debug, Clone)]
pub struct PotentialModel<T> {
    kind: PotentialKind<T>,
    nu: Option<T>,
    left: T,
    right: T,
    top: T,
    top_x: T,
}

impl<T: Real> PotentialModel<T> {
    pub fn new(kind: PotentialKind<T>, nu: Option<T>) -> Result<Self> {
        let (left, right) = match &kind {
            PotentialKind::Eckart { height, a } | PotentialKind::GaussianBump { height, a } => {
                if *height <= T::zero() || *a <= T::zero() {
                    return Err(Error::InvalidParameter("height and a must be positive".into()));
                }
                (T::zero(), T::zero())
            }
            PotentialKind::Rational { height, m } => {
                if *height <= T::zero() || *m == 0 {
                    return Err(Error::InvalidParameter("height and m must be positive".into()));
                }
                (T::zero(), T::zero())
            }
            PotentialKind::Custom { terms } => {
                if terms.is_empty() {
                    return Err(Error::InvalidParameter("custom potential needs terms".into()));
                }
                (terms.iter().map(Term::left_limit).sum(), terms.iter().map(Term::right_limit).sum())
            }
            PotentialKind::Closure(c) => (c.left_limit, c.right_limit),
        };
        if let Some(n) = nu {
            if !(n > T::zero()) {
                return Err(Error::InvalidParameter("nu must be positive".into()));
            }
        }
        let mut model = Self { kind, nu, left, right, top: T::zero(), top_x: T::zero() };
        let (top_x, top) = model.locate_top();
        model.top = top;
        model.top_x = top_x;
        if !(top > left.max(right)) {
            return Err(Error::HypothesisViolation("potential has no barrier above its asymptotes".into()));
        }
        Ok(model)
    }

    /// `sech^2(x)`: barrier top 1 at the origin, zero asymptotes.
    pub fn eckart(height: T, a: T) -> Result<Self> {
        Self::new(PotentialKind::Eckart { height, a }, None)
    }

    pub fn gaussian_bump(height: T, a: T) -> Result<Self> {
        Self::new(PotentialKind::GaussianBump { height, a }, None)
    }

    pub fn rational(height: T, m: u32) -> Result<Self> {
        let nu = T::lit(2.0 * m as f64 - 2.0);
        Self::new(PotentialKind::Rational { height, m }, (nu > T::zero()).then_some(nu))
    }

    pub fn custom(terms: Vec<Term<T>>, nu: Option<T>) -> Result<Self> {
        Self::new(PotentialKind::Custom { terms }, nu)
    }

    pub fn from_closure(potential: ClosurePotential<T>, nu: Option<T>) -> Result<Self> {
        Self::new(PotentialKind::Closure(potential), nu)
    }

    /// The canonical `sech^2(x)` barrier.
    pub fn canonical() -> Self {
        Self::eckart(T::one(), T::one()).expect("canonical barrier is valid")
    }

    pub fn kind(&self) -> &PotentialKind<T> {
        &self.kind
    }

    pub fn declared_nu(&self) -> Option<T> {
        self.nu
    }

    pub fn value(&self, x: T) -> T {
        match &self.kind {
            PotentialKind::Eckart { height, a } => *height * sech2(*a * x),
            PotentialKind::GaussianBump { height, a } => *height * (-*a * x * x).exp(),
            PotentialKind::Rational { height, m } => *height * (T::one() + x * x).powi(-(*m as i32)),
            PotentialKind::Custom { terms } => terms.iter().map(|t| t.value(x)).sum(),
            PotentialKind::Closure(c) => (c.value)(x),
        }
    }

    pub fn derivative(&self, x: T) -> T {
        let two = T::lit(2.0);
        match &self.kind {
            PotentialKind::Eckart { height, a } => -two * *a * *height * sech2(*a * x) * (*a * x).tanh(),
            PotentialKind::GaussianBump { height, a } => -two * *a * *height * x * (-*a * x * x).exp(),
            PotentialKind::Rational { height, m } => -two * T::lit(*m as f64) * *height * x * (T::one() + x * x).powi(-(*m as i32) - 1),
            PotentialKind::Custom { terms } => terms.iter().map(|t| t.derivative(x)).sum(),
            PotentialKind::Closure(c) => (c.derivative)(x),
        }
    }

    pub fn asymptote(&self, side: Side) -> T {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    pub fn barrier_top(&self) -> T {
        self.top
    }

    pub fn barrier_location(&self) -> T {
        self.top_x
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self.kind, PotentialKind::Eckart { .. } | PotentialKind::GaussianBump { .. } | PotentialKind::Rational { .. })
    }

    pub fn decay(&self) -> Decay<T> {
        match &self.kind {
            PotentialKind::Eckart { .. } | PotentialKind::GaussianBump { .. } | PotentialKind::Custom { .. } => Decay::Exponential,
            PotentialKind::Rational { m, .. } => Decay::Power(T::lit(2.0 * *m as f64 - 2.0)),
            PotentialKind::Closure(_) => self.nu.map_or(Decay::Exponential, Decay::Power),
        }
    }

    /// Local classical momentum `sqrt(2 |E - V(x)|)`.
    #[inline]
    pub fn momentum(&self, x: T, energy: T) -> T {
        (T::lit(2.0) * (energy - self.value(x)).abs()).sqrt()
    }

    /// Asymptotic momentum `sqrt(2 (E - V(+-inf)))`.
    pub fn asymptotic_momentum(&self, side: Side, energy: T) -> T {
        (T::lit(2.0) * (energy - self.asymptote(side))).max(T::zero()).sqrt()
    }

    /// Distance from the barrier top beyond which `|V - V(+-inf)| < tol` for good.
    pub fn asymptotic_extent(&self, side: Side, tol: T) -> T {
        let s = match side {
            Side::Left => -T::one(),
            Side::Right => T::one(),
        };
        let v_inf = self.asymptote(side);
        let step = T::lit(0.25);
        let mut d = step;
        let mut quiet = 0;
        let mut first_quiet = d;
        while d < T::lit(1e6) {
            if (self.value(self.top_x + s * d) - v_inf).abs() < tol {
                if quiet == 0 {
                    first_quiet = d;
                }
                quiet += 1;
                if quiet >= 8 {
                    return first_quiet;
                }
            } else {
                quiet = 0;
            }
            d = if d < T::lit(64.0) { d + step } else { d * T::lit(1.1) };
        }
        d
    }

    fn locate_top(&self) -> (T, T) {
        if self.is_symmetric() {
            return (T::zero(), self.value(T::zero()));
        }
        let n = 4001;
        let span = T::lit(40.0);
        let mut best = (T::zero(), T::neg_infinity());
        for i in 0..n {
            let x = -span * T::lit(0.5) + span * T::lit(i as f64 / (n - 1) as f64);
            let v = self.value(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        let h = span / T::lit((n - 1) as f64);
        let (x, neg) = minimize(|x| -self.value(x), best.0 - h, best.0 + h, T::epsilon());
        (x, -neg)
    }

    fn check_energy(&self, energy: T) -> Result<()> {
        if !(energy < self.top) || !(energy > self.left.max(self.right)) {
            return Err(Error::NoTurningPoints(energy.as_f64()));
        }
        Ok(())
    }

    /// Classical turning points `x0 < x1` with `V(x0) = V(x1) = E`.
    pub fn turning_points(&self, energy: T) -> Result<TurningPoints<T>> {
        self.check_energy(energy)?;
        let x0 = self.turning_point(Side::Left, energy)?;
        let x1 = self.turning_point(Side::Right, energy)?;
        Ok(TurningPoints { x0, x1 })
    }

    fn turning_point(&self, side: Side, energy: T) -> Result<T> {
        let s = match side {
            Side::Left => -T::one(),
            Side::Right => T::one(),
        };
        let f = |x: T| self.value(x) - energy;
        let mut reach = T::lit(10.0);
        while f(self.top_x + s * reach) >= T::zero() {
            reach = reach * T::lit(2.0);
            if reach > T::lit(1e8) {
                return Err(Error::NoTurningPoints(energy.as_f64()));
            }
        }
        let n = 1024;
        let mut crossings = Vec::new();
        let mut prev = (self.top_x, f(self.top_x));
        for i in 1..=n {
            let x = self.top_x + s * reach * T::lit(i as f64 / n as f64);
            let fx = f(x);
            if fx.signum() != prev.1.signum() {
                crossings.push((prev.0, x));
            }
            prev = (x, fx);
        }
        let [(a, b)] = crossings[..] else {
            return Err(Error::HypothesisViolation(format!(
                "{} sign changes of V - E on the {:?} flank at E = {}",
                crossings.len(),
                side,
                energy.as_f64()
            )));
        };
        let mut x = bisect(f, a, b, T::zero(), 80)?;
        for _ in 0..5 {
            let d = self.derivative(x);
            if d == T::zero() {
                break;
            }
            let next = x - f(x) / d;
            if f(next).abs() < f(x).abs() {
                x = next;
            } else {
                break;
            }
        }
        let residual = f(x).abs();
        if residual > T::tol(1e-12) * energy.abs().max(T::one()) {
            return Err(Error::ConvergenceFailure(format!("turning point residual {:e} at E = {}", residual.as_f64(), energy.as_f64())));
        }
        Ok(x)
    }

    /// Checks the standing hypotheses on an energy window.
    pub fn verify_hypotheses(&self, window: crate::EnergyWindow<T>, strip_alpha: T) -> ValidityReport {
        let (e1, e2) = (window.lo, window.hi);
        let mid = (e1 + e2) * T::lit(0.5);
        let fitted = [Side::Left, Side::Right].map(|s| self.fitted_decay_exponent(s).map(T::as_f64));
        let effective_nu = self.nu.map(T::as_f64).or(match self.decay() {
            Decay::Exponential => None,
            Decay::Power(n) => Some(n.as_f64()),
        });
        let decay_ok = fitted.iter().all(|f| match (f, effective_nu) {
            (None, _) => true,
            (Some(fit), Some(nu)) => *fit >= nu * 0.98 - 0.05,
            (Some(fit), None) => *fit > 0.5,
        });
        let nu_value = effective_nu.unwrap_or(f64::INFINITY);
        let mut simple_crossings = true;
        let mut inner_turning_point = true;
        let mut turning_points_ok = true;
        for e in [e1, mid, e2] {
            match self.count_crossings(e) {
                Some((2, simple)) => simple_crossings &= simple,
                _ => turning_points_ok = false,
            }
            match self.turning_points(e) {
                Ok(tp) => inner_turning_point &= tp.x1 - self.top_x < T::one(),
                Err(_) => turning_points_ok = false,
            }
        }
        ValidityReport {
            decay_ok,
            fitted_nu_left: fitted[0],
            fitted_nu_right: fitted[1],
            nu: effective_nu,
            turning_points_ok,
            simple_crossings,
            inner_turning_point,
            asymptotes_below_window: self.left.max(self.right) < e1,
            barrier_above_window: self.top > e2,
            strip_alpha_ok: strip_alpha > T::zero(),
            large_time_ok: nu_value > 0.5,
            moderate_ok: nu_value > 10.5,
        }
    }

    fn count_crossings(&self, energy: T) -> Option<(usize, bool)> {
        let mut reach = T::lit(10.0);
        while self.value(self.top_x + reach) >= energy || self.value(self.top_x - reach) >= energy {
            reach = reach * T::lit(2.0);
            if reach > T::lit(1e8) {
                return None;
            }
        }
        let n = 10_000;
        let mut count = 0;
        let mut simple = true;
        let x_at = |i: usize| self.top_x - reach + T::lit(2.0) * reach * T::lit(i as f64 / (n - 1) as f64);
        let mut prev = self.value(x_at(0)) - energy;
        for i in 1..n {
            let x = x_at(i);
            let f = self.value(x) - energy;
            if f.signum() != prev.signum() {
                count += 1;
                let xl = x_at(i - 1);
                let root = bisect(|y| self.value(y) - energy, xl, x, T::zero(), 80).unwrap_or(x);
                simple &= self.derivative(root).abs() > T::tol(1e-10);
            }
            prev = f;
        }
        Some((count, simple))
    }

    /// Least-squares `nu` from `|V - V(+-inf)| ~ |x|^-(2+nu)` on `|x|` in [10, 1e4];
    /// `None` when the difference underflows (faster than any power).
    pub fn fitted_decay_exponent(&self, side: Side) -> Option<T> {
        let s = match side {
            Side::Left => -1.0,
            Side::Right => 1.0,
        };
        let v_inf = self.asymptote(side);
        let floor = T::min_positive_value() * T::lit(1e20);
        let pts: Vec<(f64, f64)> = (0..64)
            .map(|i| 10f64.powf(1.0 + 3.0 * i as f64 / 63.0))
            .filter_map(|x| {
                let d = (self.value(self.top_x + T::lit(s * x)) - v_inf).abs();
                (d > floor).then(|| (x.ln(), d.as_f64().ln()))
            })
            .collect();
        if pts.len() < 8 {
            return None;
        }
        let n = pts.len() as f64;
        let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
        let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
        Some(T::lit(-sxy / sxx - 2.0))
    }
}

/// Ordered pair of classical turning points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurningPoints<T> {
    pub x0: T,
    pub x1: T,
}

/// Outcome of [`PotentialModel::verify_hypotheses`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub decay_ok: bool,
    pub fitted_nu_left: Option<f64>,
    pub fitted_nu_right: Option<f64>,
    /// Decay exponent in force (declared, or exact for the kind); `None` means super-polynomial.
    pub nu: Option<f64>,
    pub turning_points_ok: bool,
    pub simple_crossings: bool,
    /// `x1(E) < 1` (measured from the barrier top) across the window.
    pub inner_turning_point: bool,
    pub asymptotes_below_window: bool,
    pub barrier_above_window: bool,
    pub strip_alpha_ok: bool,
    /// `nu > 1/2`, needed for the large-time approximant.
    pub large_time_ok: bool,
    /// `nu > 21/2`, needed for the moderate-x approximants.
    pub moderate_ok: bool,
}

impl ValidityReport {
    pub fn all_pass(&self) -> bool {
        self.decay_ok
            && self.turning_points_ok
            && self.simple_crossings
            && self.inner_turning_point
            && self.asymptotes_below_window
            && self.barrier_above_window
            && self.strip_alpha_ok
            && self.large_time_ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::EnergyWindow;

    #[test]
    fn eckart_turning_points_closed_form() {
        let v = PotentialModel::<f64>::canonical();
        let tp = v.turning_points(0.5).unwrap();
        let x = (1.0 / 0.5f64.sqrt()).acosh();
        assert!((tp.x1 - x).abs() < 1e-12 && (tp.x0 + x).abs() < 1e-12);
        assert!((tp.x1 - 0.881_373_587_019_543).abs() < 1e-12);
    }

    #[test]
    fn turning_points_close_to_top() {
        let v = PotentialModel::<f64>::canonical();
        let tp = v.turning_points(0.999_999).unwrap();
        assert!(tp.x1 - tp.x0 <= 3e-3 && tp.x1 > 0.0);
    }

    #[test]
    fn no_turning_points_above_top_or_below_asymptote() {
        let v = PotentialModel::<f64>::canonical();
        assert!(matches!(v.turning_points(1.2), Err(Error::NoTurningPoints(_))));
        assert!(matches!(v.turning_points(-0.1), Err(Error::NoTurningPoints(_))));
    }

    #[test]
    fn rational_value_and_decay() {
        let v = PotentialModel::<f64>::rational(1.0, 7).unwrap();
        assert!((v.value(1.0) - 2f64.powi(-7)).abs() < 1e-16);
        let nu = v.fitted_decay_exponent(Side::Right).unwrap();
        assert!((nu - 12.0).abs() < 0.01, "{nu}");
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let models = [
            PotentialModel::<f64>::canonical(),
            PotentialModel::gaussian_bump(1.0, 0.7).unwrap(),
            PotentialModel::rational(1.0, 3).unwrap(),
            PotentialModel::custom(
                vec![Term::Sech2 { amplitude: 1.0, a: 1.0, center: 0.0 }, Term::Step { amplitude: 0.2, a: 1.5, center: 0.3 }],
                None,
            )
            .unwrap(),
        ];
        for v in &models {
            for x in [-1.7, -0.2, 0.4, 2.5] {
                let h = 1e-5;
                let fd = (v.value(x + h) - v.value(x - h)) / (2.0 * h);
                assert!((fd - v.derivative(x)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn asymmetric_custom_barrier() {
        let v = PotentialModel::<f64>::custom(
            vec![Term::Sech2 { amplitude: 1.0, a: 1.0, center: 0.0 }, Term::Step { amplitude: 0.2, a: 1.5, center: 0.0 }],
            None,
        )
        .unwrap();
        assert_eq!(v.asymptote(Side::Left), 0.0);
        assert_eq!(v.asymptote(Side::Right), 0.2);
        assert!(v.barrier_top() > 1.0);
        let tp = v.turning_points(0.8).unwrap();
        assert!((v.value(tp.x0) - 0.8).abs() < 1e-12 && (v.value(tp.x1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn hypotheses_hold_for_canonical_barrier() {
        let v = PotentialModel::<f64>::canonical();
        let r = v.verify_hypotheses(EnergyWindow::new(0.7, 0.9).unwrap(), 0.1);
        assert!(r.all_pass(), "{r:?}");
        assert!(r.moderate_ok);
    }

    #[test]
    fn slow_decay_is_flagged() {
        let v = PotentialModel::<f64>::new(PotentialKind::Rational { height: 1.0, m: 1 }, Some(21.0)).unwrap();
        let r = v.verify_hypotheses(EnergyWindow::new(0.7, 0.9).unwrap(), 0.1);
        assert!(!r.decay_ok);
        assert!(r.fitted_nu_right.unwrap().abs() < 0.01);
    }

    #[test]
    fn window_above_barrier_is_flagged() {
        let v = PotentialModel::<f64>::canonical();
        let r = v.verify_hypotheses(EnergyWindow::new(0.7, 1.1).unwrap(), 0.1);
        assert!(!r.barrier_above_window && !r.turning_points_ok);
    }

    #[test]
    fn single_precision_turning_points() {
        let v = PotentialModel::<f32>::canonical();
        let tp = v.turning_points(0.5).unwrap();
        assert!((tp.x1 - 0.881_373_6).abs() < 1e-5);
    }
}
