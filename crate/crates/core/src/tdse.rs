//! Split-step Fourier reference solution of the time-dependent equation.

use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex;
use rustfft::algorithm::butterflies::{Butterfly2, Butterfly4};
use rustfft::algorithm::Radix4;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::density::DensityParams;
use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::packets::{FieldKind, WaveField};
use crate::potential::{PotentialModel, Side};
use crate::scalar::Real;

type C<T> = Complex<T>;

/// Cosine mask applied at both ends after every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Absorber<T> {
    pub strength: T,
    pub width: T,
}

/// Grid, step and launch data for one evolution. Times are on the clock of the
/// stationary superposition, so `t_launch` is usually negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig<T> {
    pub half_width: T,
    pub n: usize,
    pub dt: T,
    pub hbar: T,
    /// Centre of the incoming packet at `t_launch`.
    pub launch: T,
    pub t_launch: T,
    pub t_final: T,
    pub absorber: Option<Absorber<T>>,
}

/// Inputs for [`SimulationConfig::auto`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sizing<T> {
    pub half_width: T,
    pub launch: T,
    pub points_per_wavelength: T,
    /// `dt <= dx / (courant * k_max)`.
    pub courant: T,
}

impl<T: Real> Default for Sizing<T> {
    fn default() -> Self {
        Self { half_width: T::lit(150.0), launch: T::lit(-120.0), points_per_wavelength: T::lit(20.0), courant: T::lit(4.0) }
    }
}

/// Largest incoming momentum with `|Q(E(k)) k|` above `1e-10` of its peak.
pub fn significant_momentum<T: Real>(model: &PotentialModel<T>, density: &DensityParams<T>, hbar: T) -> T {
    let v = model.asymptote(Side::Left);
    let weight = |k: T| density.q_extended(k * k * T::lit(0.5) + v, hbar).norm() * k;
    let k0 = density.k0(v);
    let mut peak = (T::zero(), k0);
    let dk = k0 * T::lit(1e-3);
    let mut k = dk;
    let mut hi = k0;
    while k < k0 * T::lit(20.0) {
        let w = weight(k);
        if w > peak.0 {
            peak = (w, k);
        }
        if w > T::zero() && w >= peak.0 * T::lit(1e-10) {
            hi = k;
        } else if k > peak.1 && peak.0 > T::zero() {
            break;
        }
        k = k + dk;
    }
    hi
}

impl<T: Real> SimulationConfig<T> {
    /// Chooses `n` (a power of two) and `dt` from the density's momentum content
    /// so that the run ends exactly at `t_final`.
    pub fn auto(model: &PotentialModel<T>, density: &DensityParams<T>, hbar: T, t_final: T, sizing: Sizing<T>) -> Result<Self> {
        let k_max = significant_momentum(model, density, hbar);
        let span = T::lit(2.0) * sizing.half_width;
        let needed = span * sizing.points_per_wavelength * k_max / (T::TAU() * hbar);
        let n = needed.ceil().to_usize().unwrap_or(usize::MAX).next_power_of_two().max(64);
        let dx = span / T::lit(n as f64);
        let v = model.asymptote(Side::Left);
        let k0 = density.k0(v);
        let t_launch = sizing.launch / k0 - density.j_prime(density.e0());
        let elapsed = t_final - t_launch;
        if !(elapsed > T::zero()) {
            return Err(Error::InvalidParameter("t_final precedes the launch".into()));
        }
        let dt_max = dx / (sizing.courant * k_max);
        let steps = (elapsed / dt_max).ceil().to_usize().unwrap_or(1).max(1);
        let cfg = Self {
            half_width: sizing.half_width,
            n,
            dt: elapsed / T::lit(steps as f64),
            hbar,
            launch: sizing.launch,
            t_launch,
            t_final,
            absorber: None,
        };
        cfg.validate(k_max)?;
        Ok(cfg)
    }

    pub fn grid(&self) -> UniformGrid<T> {
        UniformGrid::periodic(-self.half_width, self.half_width, self.n).expect("validated grid")
    }

    pub fn steps(&self) -> usize {
        ((self.t_final - self.t_launch) / self.dt).round().to_usize().unwrap_or(0)
    }

    /// Checks sampling of the shortest wavelength and the step bound for momenta up to `k_max`.
    pub fn validate(&self, k_max: T) -> Result<()> {
        if !self.n.is_power_of_two() || self.n < 4 {
            return Err(Error::InvalidParameter(format!("n = {} is not a power of two", self.n)));
        }
        if !(self.hbar > T::zero() && self.dt > T::zero() && self.half_width > T::zero()) {
            return Err(Error::InvalidParameter("hbar, dt and L must be positive".into()));
        }
        let dx = T::lit(2.0) * self.half_width / T::lit(self.n as f64);
        if dx > T::TAU() * self.hbar / (k_max * T::lit(20.0)) * T::lit(1.0 + 1e-12) {
            return Err(Error::Resolution(format!("dx = {} under-resolves k = {}", dx.as_f64(), k_max.as_f64())));
        }
        if self.dt > dx / (T::lit(4.0) * k_max) * T::lit(1.0 + 1e-12) {
            return Err(Error::Resolution(format!("dt = {} exceeds dx / 4 k_max", self.dt.as_f64())));
        }
        if self.launch <= -self.half_width {
            return Err(Error::Placement("launch point outside the domain".into()));
        }
        Ok(())
    }
}

/// Angular wavenumbers in FFT order.
fn wavenumbers<T: Real>(grid: &UniformGrid<T>) -> Vec<T> {
    let n = grid.n;
    let base = T::TAU() / (T::lit(n as f64) * grid.dx);
    (0..n).map(|j| base * T::lit(if j < n.div_ceil(2) { j as f64 } else { j as f64 - n as f64 })).collect()
}

/// Incoming packet `int Q(E) e^{i k- x / hbar} e^{-i E t / hbar} dE` at `t_launch`, built in
/// momentum space over all `k- > 0`.
pub fn synthesize_initial<T: Real>(
    model: &PotentialModel<T>,
    density: &DensityParams<T>,
    config: &SimulationConfig<T>,
) -> Result<WaveField<T>> {
    let grid = config.grid();
    let hbar = config.hbar;
    let v = model.asymptote(Side::Left);
    let kappa = wavenumbers(&grid);
    let dk = hbar * T::TAU() / (T::lit(grid.n as f64) * grid.dx);
    let mut buf: Vec<C<T>> = kappa
        .iter()
        .map(|&w| {
            let k = hbar * w;
            if k <= T::zero() {
                return C::new(T::zero(), T::zero());
            }
            let e = k * k * T::lit(0.5) + v;
            // dE = k dk; the grid origin enters through e^{i w x_min}
            density.q_extended(e, hbar) * k * dk * C::from_polar(T::one(), w * grid.x_min - e * config.t_launch / hbar)
        })
        .collect();
    FftPlanner::new().plan_fft_inverse(grid.n).process(&mut buf);
    let field = WaveField::new(grid, buf, config.t_launch, hbar, FieldKind::Reference)?;
    let total = field.norm_sqr();
    let edge = model.turning_points(density.window.hi).map(|tp| tp.x0).unwrap_or(model.barrier_location()) - T::one();
    let inside: T = field.values.iter().zip(grid.points()).filter(|(_, x)| *x > edge).map(|(v, _)| v.norm_sqr()).sum::<T>() * grid.dx;
    if inside > T::lit(1e-12) * total {
        return Err(Error::Placement(format!("{} of the launched norm already sits in the barrier region", (inside / total).as_f64())));
    }
    Ok(field)
}

/// Norm bookkeeping and snapshots of one evolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionTrace<T> {
    pub dt: T,
    pub steps: usize,
    /// Time after each step, starting with the launch time.
    pub times: Vec<T>,
    pub norm_history: Vec<T>,
    /// Norm over `x > cut`.
    pub transmitted_history: Vec<T>,
    pub cut: T,
    pub snapshots: Vec<WaveField<T>>,
    pub final_field: WaveField<T>,
}

impl<T: Real> EvolutionTrace<T> {
    /// Largest relative norm change per `10^4` steps.
    pub fn drift_per_10k_steps(&self) -> T {
        let n0 = self.norm_history[0];
        let worst = self.norm_history.iter().map(|n| (*n - n0).abs()).fold(T::zero(), T::max) / n0;
        worst * T::lit(1e4) / T::lit(self.steps.max(1) as f64)
    }
}

/// Radix-4 FFT whose base butterflies only rotate by multiples of `pi/2`.
/// The default planner's 8/16/32-point kernels multiply by a rounded `1/sqrt(2)`, which
/// grows the norm by about `1e-16` per transform; over `10^5` steps that dominates the drift.
fn norm_exact_fft<T: Real>(n: usize, direction: FftDirection) -> Arc<dyn Fft<T>> {
    let e = n.trailing_zeros();
    let base: Arc<dyn Fft<T>> =
        if e.is_multiple_of(2) { Arc::new(Butterfly4::new(direction)) } else { Arc::new(Butterfly2::new(direction)) };
    let k = if e.is_multiple_of(2) { (e - 2) / 2 } else { (e - 1) / 2 };
    Arc::new(Radix4::new_with_base(k, base))
}

/// Strang-split propagator on a periodic grid.
pub struct Propagator<T: Real> {
    grid: UniformGrid<T>,
    half_potential: Vec<C<T>>,
    kinetic: Vec<C<T>>,
    mask: Option<Vec<T>>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    scratch: Vec<C<T>>,
}

impl<T: Real> Propagator<T> {
    pub fn new(grid: UniformGrid<T>, potential: &[T], dt: T, hbar: T, absorber: Option<Absorber<T>>) -> Result<Self> {
        if potential.len() != grid.n {
            return Err(Error::GridMismatch("potential samples do not match the grid".into()));
        }
        let half = dt / (T::lit(2.0) * hbar);
        let half_potential = potential.iter().map(|&v| C::from_polar(T::one(), -v * half)).collect();
        // the inverse FFT is unnormalised, fold 1/n into the kinetic factor
        let scale = T::one() / T::lit(grid.n as f64);
        let kinetic = wavenumbers(&grid).into_iter().map(|w| C::from_polar(scale, -hbar * w * w * dt * T::lit(0.5))).collect();
        let mask = absorber.map(|a| {
            let (lo, hi) = (grid.x_min, grid.x_max());
            grid.points()
                .map(|x| {
                    let d = (a.width - (x - lo)).max(a.width - (hi - x)).max(T::zero()) / a.width;
                    (T::FRAC_PI_2() * d.min(T::one())).cos().powf(a.strength * dt)
                })
                .collect()
        });
        if !grid.n.is_power_of_two() || grid.n < 4 {
            return Err(Error::InvalidParameter("propagator needs a power-of-two grid".into()));
        }
        let forward = norm_exact_fft(grid.n, FftDirection::Forward);
        let inverse = norm_exact_fft(grid.n, FftDirection::Inverse);
        let scratch = vec![C::new(T::zero(), T::zero()); forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len())];
        Ok(Self { grid, half_potential, kinetic, mask, forward, inverse, scratch })
    }

    pub fn step(&mut self, psi: &mut [C<T>]) {
        psi.iter_mut().zip(&self.half_potential).for_each(|(p, v)| *p = *p * v);
        self.forward.process_with_scratch(psi, &mut self.scratch);
        psi.iter_mut().zip(&self.kinetic).for_each(|(p, k)| *p = *p * k);
        self.inverse.process_with_scratch(psi, &mut self.scratch);
        psi.iter_mut().zip(&self.half_potential).for_each(|(p, v)| *p = *p * v);
        if let Some(mask) = &self.mask {
            psi.iter_mut().zip(mask).for_each(|(p, m)| *p = *p * *m);
        }
    }

    pub fn grid(&self) -> UniformGrid<T> {
        self.grid
    }
}

/// Evolves `field` from `t_launch` to `t_final`, keeping snapshots at the steps closest
/// to `snapshot_times`. Norms are measured on the full grid and on `x > cut`.
pub fn evolve_with_potential<T: Real>(
    potential: &[T],
    field: &WaveField<T>,
    config: &SimulationConfig<T>,
    snapshot_times: &[T],
    cut: T,
) -> Result<EvolutionTrace<T>> {
    let grid = config.grid();
    if !grid.same_as(&field.grid) {
        return Err(Error::GridMismatch("initial field is not on the simulation grid".into()));
    }
    let mut prop = Propagator::new(grid, potential, config.dt, config.hbar, config.absorber)?;
    let steps = config.steps();
    let mut wanted: Vec<(usize, usize)> = snapshot_times
        .iter()
        .enumerate()
        .map(|(i, &t)| (((t - config.t_launch) / config.dt).round().to_usize().unwrap_or(0).min(steps), i))
        .collect();
    wanted.sort_unstable();
    let cut_index = grid.points().position(|x| x > cut).unwrap_or(grid.n);
    let norms = |psi: &[C<T>]| {
        let tail: T = psi[cut_index..].iter().map(|v| v.norm_sqr()).sum();
        let head: T = psi[..cut_index].iter().map(|v| v.norm_sqr()).sum();
        (((head + tail) * grid.dx).sqrt(), (tail * grid.dx).sqrt())
    };
    let mut psi = field.values.clone();
    let (n0, t0) = norms(&psi);
    let mut times = vec![config.t_launch];
    let mut norm_history = vec![n0];
    let mut transmitted_history = vec![t0];
    let mut snapshots: Vec<Option<WaveField<T>>> = vec![None; snapshot_times.len()];
    let mut next = wanted.iter().peekable();
    let snap = |psi: &[C<T>], t: T| WaveField::new(grid, psi.to_vec(), t, config.hbar, FieldKind::Reference);
    for s in 0..=steps {
        let t = config.t_launch + config.dt * T::lit(s as f64);
        while let Some(&&(at, i)) = next.peek() {
            if at != s {
                break;
            }
            snapshots[i] = Some(snap(&psi, t)?);
            next.next();
        }
        if s == steps {
            break;
        }
        prop.step(&mut psi);
        let (n, tr) = norms(&psi);
        if config.absorber.is_none() && ((n - n0) / n0).abs() > T::lit(1e-9) {
            return Err(Error::Stability(format!("norm drifted by {} after {} steps", ((n - n0) / n0).as_f64(), s + 1)));
        }
        if !n.is_finite() {
            return Err(Error::Stability("non-finite field".into()));
        }
        times.push(t + config.dt);
        norm_history.push(n);
        transmitted_history.push(tr);
    }
    let final_field = snap(&psi, config.t_final)?;
    Ok(EvolutionTrace {
        dt: config.dt,
        steps,
        times,
        norm_history,
        transmitted_history,
        cut,
        snapshots: snapshots.into_iter().flatten().collect(),
        final_field,
    })
}

/// [`evolve_with_potential`] with the model sampled on the simulation grid and the
/// transmitted norm measured beyond `x1(E2) + 2`.
pub fn evolve<T: Real>(
    model: &PotentialModel<T>,
    density: &DensityParams<T>,
    field: &WaveField<T>,
    config: &SimulationConfig<T>,
    snapshot_times: &[T],
) -> Result<EvolutionTrace<T>> {
    let potential: Vec<T> = config.grid().points().map(|x| model.value(x)).collect();
    let cut = transmitted_cut(model, density)?;
    evolve_with_potential(&potential, field, config, snapshot_times, cut)
}

/// `x1(E2) + 2`, where the transmitted region starts.
pub fn transmitted_cut<T: Real>(model: &PotentialModel<T>, density: &DensityParams<T>) -> Result<T> {
    Ok(model.turning_points(density.window.hi)?.x1 + T::lit(2.0))
}

/// The part of `field` right of the buffer `[x1(E2) + 1, x1(E2) + 2]`, tapered smoothly across it.
/// Fails unless `|psi|` in the buffer is below `1e-8` of the transmitted peak.
pub fn extract_transmitted<T: Real>(field: &WaveField<T>, model: &PotentialModel<T>, density: &DensityParams<T>) -> Result<WaveField<T>> {
    extract_transmitted_above(field, model, density, T::zero())
}

/// Split-step roundoff level after `steps` steps: `64 eps max|psi| sqrt(steps)`.
///
/// The measured buffer background sits near 7 times `eps max|psi| sqrt(steps)`.
pub fn roundoff_floor<T: Real>(field: &WaveField<T>, steps: usize) -> T {
    let top = field.values.iter().map(|v| v.norm()).fold(T::zero(), T::max);
    T::lit(64.0) * T::epsilon() * top * T::lit(steps.max(1) as f64).sqrt()
}

/// [`extract_transmitted`] that also accepts a buffer at or below `floor` in absolute terms.
pub fn extract_transmitted_above<T: Real>(
    field: &WaveField<T>,
    model: &PotentialModel<T>,
    density: &DensityParams<T>,
    floor: T,
) -> Result<WaveField<T>> {
    let cut = transmitted_cut(model, density)?;
    let start = cut - T::one();
    let sub = field.restrict(start, field.grid.x_max())?;
    let peak = sub.values.iter().zip(sub.grid.points()).filter(|(_, x)| *x >= cut).map(|(v, _)| v.norm()).fold(T::zero(), T::max);
    let leak = sub.values.iter().zip(sub.grid.points()).filter(|(_, x)| *x < cut).map(|(v, _)| v.norm()).fold(T::zero(), T::max);
    if !(leak < (T::lit(1e-8) * peak).max(floor)) || !(peak > floor) {
        return Err(Error::NotSeparated(format!("buffer amplitude is {} of the transmitted peak", (leak / peak).as_f64())));
    }
    let values = sub
        .values
        .iter()
        .zip(sub.grid.points())
        .map(|(v, x)| {
            let s = ((x - start).max(T::zero())).min(T::one());
            *v * (T::lit(0.5) * (T::one() - (T::PI() * s).cos()))
        })
        .collect();
    WaveField::new(sub.grid, values, field.t, field.hbar, FieldKind::Reference)
}

/// Header line of the binary snapshot format.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotHeader<T> {
    grid: UniformGrid<T>,
    t: T,
    hbar: T,
    kind: FieldKind,
}

/// One JSON header line, then `(re, im)` as little-endian `f64` pairs.
pub fn write_binary_snapshot<T: Real + Serialize, W: Write>(field: &WaveField<T>, mut out: W) -> Result<()> {
    let header = SnapshotHeader { grid: field.grid, t: field.t, hbar: field.hbar, kind: field.kind };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for v in &field.values {
        out.write_all(&v.re.as_f64().to_le_bytes())?;
        out.write_all(&v.im.as_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary_snapshot<R: BufRead>(mut input: R) -> Result<WaveField<f64>> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: SnapshotHeader<f64> = serde_json::from_str(line.trim_end())?;
    let mut bytes = Vec::with_capacity(header.grid.n * 16);
    input.read_to_end(&mut bytes)?;
    if bytes.len() != header.grid.n * 16 {
        return Err(Error::Io(format!("expected {} bytes of samples, found {}", header.grid.n * 16, bytes.len())));
    }
    let word = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
    let values = bytes.chunks_exact(16).map(|c| C::new(word(&c[..8]), word(&c[8..]))).collect();
    WaveField::new(header.grid, values, header.t, header.hbar, header.kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::EnergyWindow;
    use crate::packets::momentum_stats;

    fn free_config(n: usize, dt: f64, t_final: f64) -> SimulationConfig<f64> {
        SimulationConfig { half_width: 40.0, n, dt, hbar: 0.1, launch: -10.0, t_launch: 0.0, t_final, absorber: None }
    }

    #[test]
    fn free_gaussian_spreads_exactly() {
        let cfg = free_config(2048, 0.01, 10.0);
        let grid = cfg.grid();
        let (hbar, k0, s0) = (0.1f64, 1.0, 1.0);
        // width s0 at t=0, centred at -10
        let exact = |x: f64, t: f64| {
            let st = C::new(s0 * s0, hbar * t);
            let u = x + 10.0 - k0 * t;
            let phase = C::new(0.0, k0 * (x + 10.0) / hbar - k0 * k0 * t / (2.0 * hbar));
            (C::new(s0 * s0, 0.0) / st).sqrt() * (-(u * u) / (2.0 * st) + phase).exp()
        };
        let init = WaveField::new(grid, grid.points().map(|x| exact(x, 0.0)).collect(), 0.0, hbar, FieldKind::Other).unwrap();
        let tr = evolve_with_potential(&vec![0.0; grid.n], &init, &cfg, &[], 100.0).unwrap();
        let err: f64 = tr.final_field.values.iter().zip(grid.points()).map(|(v, x)| (v - exact(x, 10.0)).norm_sqr()).sum();
        let size: f64 = tr.final_field.values.iter().map(|v| v.norm_sqr()).sum();
        assert!((err / size).sqrt() < 1e-8, "{}", (err / size).sqrt());
    }

    #[test]
    fn canonical_sizing() {
        let v = PotentialModel::canonical();
        let d = DensityParams::gaussian(30.0, 0.78, EnergyWindow::new(0.7, 0.9).unwrap()).unwrap();
        for (hbar, n) in [(1.0 / 16.0, 1 << 15), (1.0 / 24.0, 1 << 16), (1.0 / 32.0, 1 << 16), (1.0 / 48.0, 1 << 16)] {
            let c = SimulationConfig::auto(&v, &d, hbar, 14.0, Sizing::default()).unwrap();
            assert_eq!(c.n, n, "{hbar}");
            assert!((c.t_launch + c.dt * c.steps() as f64 - 14.0).abs() < 1e-9);
        }
    }

    #[test]
    fn synthesized_packet_has_parseval_norm_and_mean_momentum() {
        let v = PotentialModel::canonical();
        let d = DensityParams::gaussian(30.0, 0.78, EnergyWindow::new(0.7, 0.9).unwrap()).unwrap();
        let hbar = 1.0 / 16.0;
        let c = SimulationConfig::auto(&v, &d, hbar, 0.0, Sizing::default()).unwrap();
        let f = synthesize_initial(&v, &d, &c).unwrap();
        let grid = c.grid();
        let dk = hbar * std::f64::consts::TAU / (grid.n as f64 * grid.dx);
        let parseval: f64 = wavenumbers(&grid)
            .iter()
            .map(|w| hbar * w)
            .filter(|&k| k > 0.0)
            .map(|k| (d.q_extended(k * k / 2.0, hbar).norm() * k).powi(2) * dk)
            .sum::<f64>()
            * std::f64::consts::TAU
            * hbar;
        assert!((f.norm_sqr() / parseval - 1.0).abs() < 1e-10);
        let m = momentum_stats(&f).unwrap();
        assert!((m.mean_k - 1.56f64.sqrt()).abs() < 0.5 * hbar.sqrt());
        let (_, peak) = f.peak();
        assert!((peak + 120.0).abs() < 1.0, "{peak}");
    }

    #[test]
    fn hermite_one_has_a_node() {
        let v = PotentialModel::canonical();
        let k0 = 1.56f64.sqrt();
        let d = DensityParams::hermite(1, k0, 1.0 / (k0 * 30f64.sqrt()), 0.0, EnergyWindow::new(0.7, 0.9).unwrap()).unwrap();
        let c = SimulationConfig::auto(&v, &d, 1.0 / 16.0, 0.0, Sizing::default()).unwrap();
        let f = synthesize_initial(&v, &d, &c).unwrap();
        let (ip, _) = f.peak();
        let peak = f.values[ip].norm();
        let core: Vec<f64> = f.values.iter().map(|v| v.norm()).collect();
        let lo = core.iter().position(|&a| a > 0.1 * peak).unwrap();
        let hi = core.iter().rposition(|&a| a > 0.1 * peak).unwrap();
        let min = core[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min < 1e-3 * peak, "{}", min / peak);
    }

    #[test]
    fn launch_inside_barrier_is_rejected() {
        let v = PotentialModel::canonical();
        let d = DensityParams::gaussian(30.0, 0.78, EnergyWindow::new(0.7, 0.9).unwrap()).unwrap();
        let sizing = Sizing { launch: -2.0, ..Sizing::default() };
        let c = SimulationConfig::auto(&v, &d, 1.0 / 16.0, 0.0, sizing).unwrap();
        assert!(matches!(synthesize_initial(&v, &d, &c), Err(Error::Placement(_))));
    }

    #[test]
    fn second_order_in_dt_and_unitary() {
        let v = PotentialModel::canonical();
        let d = DensityParams::gaussian(30.0, 0.78, EnergyWindow::new(0.7, 0.9).unwrap()).unwrap();
        let hbar = 1.0 / 16.0;
        let sizing = Sizing { half_width: 40.0, launch: -14.0, ..Sizing::default() };
        let base = SimulationConfig::auto(&v, &d, hbar, 0.0, sizing).unwrap();
        let init = synthesize_initial(&v, &d, &base).unwrap();
        let run = |div: usize| {
            let c = SimulationConfig { dt: base.dt / div as f64, ..base.clone() };
            evolve(&v, &d, &init, &c, &[]).unwrap()
        };
        let (a, b, c) = (run(1), run(2), run(4));
        assert!(a.drift_per_10k_steps() < 1e-12, "{} over {} steps", a.drift_per_10k_steps(), a.steps);
        let diff = |x: &EvolutionTrace<f64>, y: &EvolutionTrace<f64>| {
            x.final_field.values.iter().zip(&y.final_field.values).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt()
        };
        let ratio = diff(&a, &b) / diff(&b, &c);
        assert!((3.6..=4.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn extraction_checks_the_buffer() {
        let v = PotentialModel::canonical();
        let d = DensityParams::gaussian(30.0, 0.78, EnergyWindow::new(0.7, 0.9).unwrap()).unwrap();
        let cut = transmitted_cut(&v, &d).unwrap();
        let grid = UniformGrid::new(-20.0, 0.01, 8192).unwrap();
        let field = |background: f64| {
            let gauss = |x: f64| (-(x - 40.0) * (x - 40.0) / 4.0).exp();
            let values = grid.points().map(|x| C::new(1e-7 * gauss(x) + background, 0.0)).collect();
            WaveField::new(grid, values, 0.0, 0.05, FieldKind::Reference).unwrap()
        };
        let tail = extract_transmitted(&field(0.0), &v, &d).unwrap();
        assert!(tail.grid.x_min >= cut - 1.0 - grid.dx);
        assert!(tail.values[0].norm() < 1e-150);
        assert!((tail.norm_sqr() / field(0.0).norm_sqr() - 1.0).abs() < 1e-12);
        let noisy = field(1e-13);
        assert!(matches!(extract_transmitted(&noisy, &v, &d), Err(Error::NotSeparated(_))));
        assert!(extract_transmitted_above(&noisy, &v, &d, 2e-13).is_ok());
        assert!(extract_transmitted_above(&noisy, &v, &d, 1e-6).is_err());
        let floor = roundoff_floor(&noisy, 10_000);
        assert!((floor / (6400.0 * f64::EPSILON * 1e-7) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn binary_snapshot_round_trip() {
        let grid = UniformGrid::new(-1.0, 0.5, 5).unwrap();
        let f = WaveField::new(grid, (0..5).map(|i| C::new(i as f64, -0.5 * i as f64)).collect(), 1.5, 0.1, FieldKind::Reference).unwrap();
        let mut buf = Vec::new();
        write_binary_snapshot(&f, &mut buf).unwrap();
        let g = read_binary_snapshot(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(g.values, f.values);
        assert_eq!(g.grid, f.grid);
    }
}
