//! Classical actions: the Agmon action K, the phases omega and rho, and the eikonal S.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{DensityParams, EnergyWindow};
use crate::error::{Error, Result};
use crate::potential::{Decay, PotentialModel, Side, TurningPoints};
use crate::quadrature::{chebyshev_nodes, sqrt_endpoint, sqrt_endpoints, Chebyshev, GaussLegendre, Tolerance};
use crate::scalar::Real;

const TWO_SIDED_TOL: f64 = 1e-12;
const TAIL_CUTOFF: f64 = 1e-14;

/// `K(E) = 2 int_{x0}^{x1} sqrt(2 (V - E)) dy`.
pub fn agmon_action<T: Real>(model: &PotentialModel<T>, energy: T) -> Result<T> {
    let tp = model.turning_points(energy)?;
    let v = sqrt_endpoints(tp.x0, tp.x1, TWO_SIDED_TOL, |y, dy| model.momentum(y, energy) * dy)?;
    Ok(T::lit(2.0) * v)
}

/// `K'(E) = -2 int_{x0}^{x1} dy / sqrt(2 (V - E))`.
pub fn agmon_action_derivative<T: Real>(model: &PotentialModel<T>, energy: T) -> Result<T> {
    let tp = model.turning_points(energy)?;
    let v = sqrt_endpoints(tp.x0, tp.x1, TWO_SIDED_TOL, |y, dy| dy / model.momentum(y, energy))?;
    Ok(-T::lit(2.0) * v)
}

/// Second derivative by one Richardson extrapolation of central differences of `f`.
pub fn richardson<T: Real, F: Fn(T) -> Result<T>>(f: F, x: T) -> Result<T> {
    let h = T::lit(1e-4).max(T::epsilon().cbrt() * T::lit(4.0));
    let d = |h: T| -> Result<T> { Ok((f(x + h)? - f(x - h)?) / (T::lit(2.0) * h)) };
    let (d1, d2) = (d(h)?, d(h * T::lit(0.5))?);
    Ok((T::lit(4.0) * d2 - d1) / T::lit(3.0))
}

/// Tail integrals beyond the turning points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tails<T> {
    /// `int_{x1}^{inf} (p - k+)`
    pub right: T,
    /// `int_{-inf}^{x0} (p - k-)`
    pub left: T,
    /// `int_{x1}^{inf} (1/p - 1/k+)`
    pub right_inv: T,
    /// `int_{-inf}^{x0} (1/p - 1/k-)`
    pub left_inv: T,
}

fn tail<T: Real>(model: &PotentialModel<T>, energy: T, side: Side, start: T, cutoff: Option<T>) -> Result<(T, T)> {
    let k = model.asymptotic_momentum(side, energy);
    let s = match side {
        Side::Left => -T::one(),
        Side::Right => T::one(),
    };
    let reach = match cutoff {
        Some(r) => r,
        None => model.asymptotic_extent(side, T::tol(TAIL_CUTOFF) * k),
    };
    let end = model.barrier_location() + s * reach;
    if (end - start) * s <= T::zero() {
        return Err(Error::InvalidParameter("tail cutoff inside the turning point".into()));
    }
    let tol = Tolerance::new(1e-16, 1e-13);
    let plain = sqrt_endpoint(start, end, tol, |y, dy| (model.momentum(y, energy) - k) * dy)?;
    let inv = sqrt_endpoint(start, end, tol, |y, dy| dy / model.momentum(y, energy) - dy / k)?;
    let (mut plain, mut inv) = (plain * s, inv * s);
    if let Decay::Power(nu) = model.decay() {
        let scale = (end - model.barrier_location()).abs() / (T::one() + nu);
        plain = plain + (model.momentum(end, energy) - k) * scale;
        inv = inv + (model.momentum(end, energy).recip() - k.recip()) * scale;
    }
    Ok((plain, inv))
}

/// Tail integrals with automatic truncation, or at `|x - x_top| = cutoff` when given.
pub fn tail_integrals<T: Real>(model: &PotentialModel<T>, energy: T, cutoff: Option<T>) -> Result<Tails<T>> {
    let tp = model.turning_points(energy)?;
    let (right, right_inv) = tail(model, energy, Side::Right, tp.x1, cutoff)?;
    let (left, left_inv) = tail(model, energy, Side::Left, tp.x0, cutoff)?;
    Ok(Tails { right, left, right_inv, left_inv })
}

/// The two scattering phases and their first energy derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phases<T> {
    pub omega: T,
    pub rho: T,
    pub omega_prime: T,
    pub rho_prime: T,
}

/// `omega` and `rho` at one energy.
///
/// `omega = -int_{x1}^inf (p-k+) - int_{-inf}^{x0} (p-k-) + k+ x1 - k- x0`,
/// `rho = -int_{-inf}^{x0} (p-k-) - k- x0`.
pub fn phases<T: Real>(model: &PotentialModel<T>, energy: T, cutoff: Option<T>) -> Result<Phases<T>> {
    let tp = model.turning_points(energy)?;
    let t = tail_integrals(model, energy, cutoff)?;
    let kp = model.asymptotic_momentum(Side::Right, energy);
    let km = model.asymptotic_momentum(Side::Left, energy);
    Ok(Phases {
        omega: -t.right - t.left + kp * tp.x1 - km * tp.x0,
        rho: -t.left - km * tp.x0,
        omega_prime: -t.right_inv - t.left_inv + tp.x1 / kp - tp.x0 / km,
        rho_prime: -t.left_inv - tp.x0 / km,
    })
}

/// `int_{x1}^{x} p dy` and `int_{x1}^{x} dy/p` for each sorted `x > x1`.
pub fn cumulative_from_turning_point<T: Real>(model: &PotentialModel<T>, energy: T, x1: T, xs: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    cumulative_from(model, energy, x1, xs)
}

/// Oriented integrals `int_{start}^{x} p dy` and `int_{start}^{x} dy/p` for points `xs`
/// moving monotonically away from the turning point `start` (in either direction).
pub fn cumulative_from<T: Real>(model: &PotentialModel<T>, energy: T, start: T, xs: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let tol = Tolerance::new(1e-16, 1e-13);
    let direct = |x: T| -> Result<(T, T)> {
        Ok((
            sqrt_endpoint(start, x, tol, |y, dy| model.momentum(y, energy) * dy)?,
            sqrt_endpoint(start, x, tol, |y, dy| dy / model.momentum(y, energy))?,
        ))
    };
    let s = match xs.first() {
        Some(&x) if x < start => -T::one(),
        _ => T::one(),
    };
    let rule = GaussLegendre::new(16);
    let mut plain = Vec::with_capacity(xs.len());
    let mut inv = Vec::with_capacity(xs.len());
    let mut prev: Option<(T, T, T)> = None;
    for &x in xs {
        if (x - start) * s <= T::zero() {
            return Err(Error::Domain(format!("x = {} is not beyond the turning point", x.as_f64())));
        }
        let (a, b) = match prev {
            Some((xp, ap, bp)) if (x - xp) * s >= T::zero() && (xp - start) * s >= T::lit(4.0) * (x - xp) * s => {
                let (mut da, mut db) = (T::zero(), T::zero());
                for (y, w) in rule.mapped(xp, x) {
                    let p = model.momentum(y, energy);
                    da = da + w * p;
                    db = db + w / p;
                }
                (ap + da, bp + db)
            }
            _ => direct(x)?,
        };
        plain.push(a);
        inv.push(b);
        prev = Some((x, a, b));
    }
    Ok((plain, inv))
}

/// Action and phase data tabulated on Chebyshev nodes of the energy window.
#[derive(Debug, Clone)]
pub struct ActionProfile<T> {
    model: PotentialModel<T>,
    window: EnergyWindow<T>,
    agmon: Chebyshev<T>,
    agmon_prime: Chebyshev<T>,
    omega: Chebyshev<T>,
    rho: Chebyshev<T>,
}

/// Energy derivatives at one point of the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDerivatives<T> {
    pub energy: T,
    pub agmon: T,
    pub agmon_prime: T,
    pub agmon_second: T,
    pub omega: T,
    pub omega_prime: T,
    pub omega_second: T,
    pub rho: T,
    pub rho_prime: T,
    pub rho_second: T,
    pub alpha: T,
    pub alpha_prime: T,
    pub alpha_second: T,
    pub kappa: T,
    pub kappa_prime: T,
    pub kappa_second: T,
    /// `d^2 alpha / dk^2` with `k = k+(E)`.
    pub alpha_kk: T,
    /// `d^2 kappa / dk^2` with `k = k+(E)`.
    pub kappa_kk: T,
    pub k_plus: T,
    pub k_minus: T,
}

impl<T: Real> ActionProfile<T> {
    pub const NODES: usize = 64;

    pub fn new(model: &PotentialModel<T>, window: EnergyWindow<T>) -> Result<Self> {
        if !(window.hi < model.barrier_top()) {
            return Err(Error::HypothesisViolation("window reaches the barrier top".into()));
        }
        let nodes = chebyshev_nodes(Self::NODES, window.lo, window.hi);
        let rows: Vec<[T; 4]> = nodes
            .par_iter()
            .map(|&e| -> Result<[T; 4]> {
                let ph = phases(model, e, None)?;
                Ok([agmon_action(model, e)?, agmon_action_derivative(model, e)?, ph.omega, ph.rho])
            })
            .collect::<Result<_>>()?;
        let column = |i: usize| Chebyshev::new(nodes.clone(), rows.iter().map(|r| r[i]).collect());
        Ok(Self { model: model.clone(), window, agmon: column(0), agmon_prime: column(1), omega: column(2), rho: column(3) })
    }

    pub fn model(&self) -> &PotentialModel<T> {
        &self.model
    }

    pub fn window(&self) -> EnergyWindow<T> {
        self.window
    }

    pub fn nodes(&self) -> &[T] {
        self.agmon.nodes()
    }

    fn check(&self, e: T) -> Result<()> {
        self.window.check(e)
    }

    pub fn k_plus(&self, e: T) -> T {
        self.model.asymptotic_momentum(Side::Right, e)
    }

    pub fn k_minus(&self, e: T) -> T {
        self.model.asymptotic_momentum(Side::Left, e)
    }

    pub fn turning_points(&self, e: T) -> Result<TurningPoints<T>> {
        self.model.turning_points(e)
    }

    /// Interpolated `K`, `K'`, `omega`, `rho`.
    pub fn interpolated(&self, e: T) -> Result<[T; 4]> {
        self.check(e)?;
        Ok([self.agmon.eval(e), self.agmon_prime.eval(e), self.omega.eval(e), self.rho.eval(e)])
    }

    pub fn agmon(&self, e: T) -> Result<T> {
        agmon_action(&self.model, e)
    }

    pub fn agmon_prime(&self, e: T) -> Result<T> {
        agmon_action_derivative(&self.model, e)
    }

    pub fn phases(&self, e: T) -> Result<Phases<T>> {
        phases(&self.model, e, None)
    }

    /// All first and second derivatives entering the saddle-point formulas.
    pub fn derivatives(&self, density: &DensityParams<T>, e: T) -> Result<ActionDerivatives<T>> {
        self.check(e)?;
        let m = &self.model;
        let k = agmon_action(m, e)?;
        let kp = agmon_action_derivative(m, e)?;
        let kpp = richardson(|x| agmon_action_derivative(m, x), e)?;
        let ph = phases(m, e, None)?;
        let opp = richardson(|x| Ok(phases(m, x, None)?.omega_prime), e)?;
        let rpp = richardson(|x| Ok(phases(m, x, None)?.rho_prime), e)?;
        let half = T::lit(0.5);
        let alpha = density.g(e) + half * k;
        let alpha_prime = density.g_prime(e) + half * kp;
        let alpha_second = density.g_second(e) + half * kpp;
        let kappa = ph.omega + density.j(e);
        let kappa_prime = ph.omega_prime + density.j_prime(e);
        let kappa_second = opp + density.j_second(e);
        let kplus = self.k_plus(e);
        Ok(ActionDerivatives {
            energy: e,
            agmon: k,
            agmon_prime: kp,
            agmon_second: kpp,
            omega: ph.omega,
            omega_prime: ph.omega_prime,
            omega_second: opp,
            rho: ph.rho,
            rho_prime: ph.rho_prime,
            rho_second: rpp,
            alpha,
            alpha_prime,
            alpha_second,
            kappa,
            kappa_prime,
            kappa_second,
            alpha_kk: alpha_second * kplus * kplus + alpha_prime,
            kappa_kk: kappa_second * kplus * kplus + kappa_prime,
            k_plus: kplus,
            k_minus: self.k_minus(e),
        })
    }
}

/// Eikonal `S(x, t, E) = -int_{x1}^{x} p + rho(E) + J(E) + E t` for `x > x1`.
pub fn eikonal<T: Real>(model: &PotentialModel<T>, density: &DensityParams<T>, x: T, t: T, e: T) -> Result<T> {
    let tp = model.turning_points(e)?;
    let (a, _) = cumulative_from_turning_point(model, e, tp.x1, &[x])?;
    Ok(-a[0] + phases(model, e, None)?.rho + density.j(e) + e * t)
}

/// `dS/dE = t + rho' + J' - int_{x1}^{x} dy/p`.
pub fn eikonal_prime<T: Real>(model: &PotentialModel<T>, density: &DensityParams<T>, x: T, t: T, e: T) -> Result<T> {
    let tp = model.turning_points(e)?;
    let (_, b) = cumulative_from_turning_point(model, e, tp.x1, &[x])?;
    Ok(t + phases(model, e, None)?.rho_prime + density.j_prime(e) - b[0])
}
