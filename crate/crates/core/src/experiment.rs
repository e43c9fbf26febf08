//! One TDSE reference run per hbar and its comparison against the closed-form packets.

use serde::{Deserialize, Serialize};

use crate::actions::ActionProfile;
use crate::compare::{l2_compare, GaugeFit};
use crate::density::{find_e_star, DensityParams, EnergyWindow, Saddle};
use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::packets::{arrival_time, chi_gauss, chi_gauss_infinity, chi_mod, momentum_stats, ModerateRegion, MomentumStats, WaveField};
use crate::potential::{PotentialModel, Side};
use crate::quadrature::GaussLegendre;
use crate::scalar::Real;
use crate::scattering::{solve_stationary, SolveOptions};
use crate::tdse::{evolve, extract_transmitted_above, roundoff_floor, significant_momentum, synthesize_initial, SimulationConfig, Sizing};

/// `V = sech^2 x`, Gaussian density with `g = 30`, `E0 = 0.78` on `[0.7, 0.9]`.
pub fn canonical<T: Real>() -> Result<(PotentialModel<T>, DensityParams<T>)> {
    let window = EnergyWindow::new(T::lit(0.7), T::lit(0.9))?;
    Ok((PotentialModel::eckart(T::one(), T::one())?, DensityParams::gaussian(T::lit(30.0), T::lit(0.78), window)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions<T> {
    pub sizing: Sizing<T>,
    /// Compare when the classical trajectory reaches this point.
    pub probe: T,
    /// Keep evolving until the trajectory reaches this point, then split off the transmitted part.
    pub extract_at: T,
    /// While the transmitted part is not separated, evolve on in steps of `extend_by` up to here.
    pub extract_limit: T,
    pub extend_by: T,
    /// `x` range of the comparison.
    pub window: (T, T),
    pub region: ModerateRegion<T>,
    /// Bound on the fitted free-flight time offset.
    pub max_shift: T,
    /// Skip the closed-form comparison (only TDSE observables).
    pub compare: bool,
}

impl<T: Real> Default for StudyOptions<T> {
    fn default() -> Self {
        Self {
            sizing: Sizing::default(),
            probe: T::lit(16.0),
            extract_at: T::lit(40.0),
            extract_limit: T::lit(100.0),
            extend_by: T::lit(20.0),
            window: (T::lit(3.0), T::lit(30.0)),
            region: ModerateRegion::default(),
            max_shift: T::lit(3.0),
            compare: true,
        }
    }
}

/// Observables of one TDSE run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TdseStudy<T> {
    pub hbar: T,
    pub saddle: Saddle<T>,
    pub t_probe: T,
    /// Time and trajectory point where the transmitted part was split off.
    pub t_extract: T,
    pub q_extract: T,
    pub config: SimulationConfig<T>,
    /// Steps over all segments.
    pub steps: usize,
    pub drift_per_10k_steps: T,
    /// `||transmitted||^2 / ||incoming||^2`.
    pub transmission: T,
    /// `|t(E0)|^2 k+/k-` of the stationary problem.
    pub stationary_transmission: T,
    pub incoming: MomentumStats<T>,
    pub transmitted: MomentumStats<T>,
    /// TDSE field on the comparison window at `t_probe`.
    pub reference: WaveField<T>,
    pub gauss: Option<GaugeFit<T>>,
    pub gauss_norm_ratio: Option<T>,
}

pub fn tdse_study<T: Real>(model: &PotentialModel<T>, density: &DensityParams<T>, hbar: T, opts: &StudyOptions<T>) -> Result<TdseStudy<T>> {
    let profile = ActionProfile::new(model, density.window)?;
    let saddle = find_e_star(&profile, density)?;
    let t_probe = arrival_time(model, &saddle, density, opts.probe)?;
    let mut q = opts.extract_at.max(opts.probe);
    let config = SimulationConfig::auto(model, density, hbar, arrival_time(model, &saddle, density, q)?, opts.sizing)?;
    let initial = synthesize_initial(model, density, &config)?;
    let trace = evolve(model, density, &initial, &config, &[t_probe])?;
    let n0 = trace.norm_history[0];
    let deviation = |norms: &[T]| norms.iter().map(|n| (*n - n0).abs() / n0).fold(T::zero(), T::max);
    let mut worst = deviation(&trace.norm_history);
    let mut steps = trace.steps;
    let snapshot = trace.snapshots.into_iter().next().ok_or_else(|| Error::InsufficientData("no probe snapshot".into()))?;
    let mut field = trace.final_field;
    let tail = loop {
        match extract_transmitted_above(&field, model, density, roundoff_floor(&field, steps)) {
            Ok(tail) => break tail,
            Err(Error::NotSeparated(_)) if q + opts.extend_by <= opts.extract_limit => {
                q = q + opts.extend_by;
                let more = ((arrival_time(model, &saddle, density, q)? - field.t) / config.dt).ceil();
                let segment = SimulationConfig { t_launch: field.t, t_final: field.t + config.dt * more, ..config };
                let next = evolve(model, density, &field, &segment, &[])?;
                worst = worst.max(deviation(&next.norm_history));
                steps += next.steps;
                field = next.final_field;
            }
            Err(e) => return Err(e),
        }
    };
    let transmission = tail.norm_sqr() / initial.norm_sqr();
    let stationary = solve_stationary(model, density.e0(), hbar, &SolveOptions::default())?.transmission();
    let incoming = momentum_stats(&initial)?;
    let transmitted = momentum_stats(&tail)?;
    let reference = snapshot.restrict(opts.window.0, opts.window.1)?;
    let (gauss, gauss_norm_ratio) = if opts.compare {
        let approx = chi_gauss(model, &saddle, density, reference.grid, t_probe, hbar, opts.region)?;
        let fit = l2_compare(&reference, &approx, true, opts.max_shift)?;
        (Some(fit), Some(approx.norm() / reference.norm()))
    } else {
        (None, None)
    };
    Ok(TdseStudy {
        hbar,
        saddle,
        t_probe,
        t_extract: field.t,
        q_extract: q,
        config,
        steps,
        drift_per_10k_steps: worst * T::lit(1e4) / T::lit(steps.max(1) as f64),
        transmission,
        stationary_transmission: stationary,
        incoming,
        transmitted,
        reference,
        gauss,
        gauss_norm_ratio,
    })
}

/// Gauged distances between the closed-form packets at one hbar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coherence<T> {
    pub hbar: T,
    /// `chi_mod` vs `chi_Gauss` on `1 < x < x_s`, `x_s = c hbar^-beta`, when `q_t = x_s / 2`.
    pub t_moderate: T,
    pub mod_vs_gauss: GaugeFit<T>,
    /// `chi_mod` vs `chi_Gauss^inf` on `[x_s / 2, x_s)`, when `q_t = 3 x_s / 4`.
    pub t_overlap: T,
    pub mod_vs_infinity: GaugeFit<T>,
}

pub fn coherence<T: Real>(
    model: &PotentialModel<T>,
    density: &DensityParams<T>,
    hbar: T,
    region: ModerateRegion<T>,
    dx: T,
    max_shift: T,
) -> Result<Coherence<T>> {
    let profile = ActionProfile::new(model, density.window)?;
    let saddle = find_e_star(&profile, density)?;
    let xs = region.upper(hbar);
    let grid_between = |lo: T, hi: T| {
        let n = ((hi - lo) / dx).floor().to_usize().unwrap_or(0);
        UniformGrid::new(lo + dx, dx, n.saturating_sub(1))
    };
    let t_moderate = arrival_time(model, &saddle, density, xs * T::lit(0.5))?;
    let g = grid_between(T::one(), xs)?;
    let m = chi_mod(model, &saddle, density, g, t_moderate, hbar, region)?;
    let c = chi_gauss(model, &saddle, density, g, t_moderate, hbar, region)?;
    let mod_vs_gauss = l2_compare(&m, &c, true, max_shift)?;
    let t_overlap = arrival_time(model, &saddle, density, xs * T::lit(0.75))?;
    let g = grid_between(xs * T::lit(0.5), xs)?;
    let m = chi_mod(model, &saddle, density, g, t_overlap, hbar, region)?;
    let c = chi_gauss_infinity(&saddle, &profile, density, g, t_overlap, hbar)?;
    let mod_vs_infinity = l2_compare(&m, &c, true, max_shift)?;
    Ok(Coherence { hbar, t_moderate, mod_vs_gauss, t_overlap, mod_vs_infinity })
}

/// Transmitted fraction of the incoming packet predicted by the stationary states:
/// `int |Q|^2 T(E) k- dE / int |Q|^2 k- dE`, with `T = |t|^2 k+/k-` supplied by the caller.
/// Integrates over incoming momenta up to [`significant_momentum`].
pub fn stationary_probability<T: Real, F: FnMut(T) -> Result<T>>(
    model: &PotentialModel<T>,
    density: &DensityParams<T>,
    hbar: T,
    nodes: usize,
    mut coefficient: F,
) -> Result<T> {
    let v = model.asymptote(Side::Left).max(model.asymptote(Side::Right));
    let e_hi = {
        let k = significant_momentum(model, density, hbar);
        k * k * T::lit(0.5) + model.asymptote(Side::Left)
    };
    let e_lo = v + (e_hi - v) * T::lit(1e-6);
    let rule = GaussLegendre::new(nodes);
    let (mut num, mut den) = (T::zero(), T::zero());
    for (e, w) in rule.mapped(e_lo, e_hi) {
        let weight = density.q_extended(e, hbar).norm_sqr() * model.asymptotic_momentum(Side::Left, e) * w;
        den = den + weight;
        num = num + weight * coefficient(e)?;
    }
    Ok(num / den)
}
