//! L2 comparisons between fields, with a fitted global phase and free-flight time shift.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::packets::{FieldKind, WaveField};
use crate::roots::minimize;
use crate::scalar::Real;

type C<T> = Complex<T>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeFit<T> {
    /// `||ref - approx|| / ||ref||`.
    pub raw_err: T,
    /// Same, after the best phase and time shift.
    pub gauged_err: T,
    pub phase_offset: T,
    pub time_offset: T,
}

/// Trigonometric interpolation of `field` (periodic over its own span) onto `target`.
pub fn resample<T: Real>(field: &WaveField<T>, target: UniformGrid<T>) -> Result<WaveField<T>> {
    if field.grid.same_as(&target) {
        return Ok(field.clone());
    }
    let g = field.grid;
    let span_end = g.x_min + g.dx * T::lit(g.n as f64);
    let slack = g.dx * T::lit(1e-9);
    if target.x_min < g.x_min - slack || target.x_max() > span_end + slack {
        return Err(Error::GridMismatch(format!(
            "target [{}, {}] leaves the source span [{}, {})",
            target.x_min.as_f64(),
            target.x_max().as_f64(),
            g.x_min.as_f64(),
            span_end.as_f64()
        )));
    }
    let n = g.n;
    let mut coef = field.values.clone();
    FftPlanner::new().plan_fft_forward(n).process(&mut coef);
    let inv_n = T::one() / T::lit(n as f64);
    let base = T::TAU() / (T::lit(n as f64) * g.dx);
    let half = n / 2;
    let values = target
        .points()
        .map(|y| {
            let u = y - g.x_min;
            let step = C::from_polar(T::one(), base * u);
            // positive frequencies 0..half, negative ones by conjugate rotation
            let mut acc = C::new(T::zero(), T::zero());
            let mut rot = C::new(T::one(), T::zero());
            for (j, c) in coef.iter().enumerate().take(n.div_ceil(2)) {
                if j > 0 && j % 64 == 0 {
                    rot = C::from_polar(T::one(), base * u * T::lit(j as f64));
                }
                acc = acc + *c * rot;
                rot = rot * step;
            }
            let mut rot = step.conj();
            for (m, c) in coef.iter().rev().enumerate().take(n - n.div_ceil(2)) {
                let j = m + 1;
                if j % 64 == 0 {
                    rot = C::from_polar(T::one(), -base * u * T::lit(j as f64));
                }
                if n.is_multiple_of(2) && j == half {
                    // Nyquist term split evenly between +/- frequencies
                    acc = acc + *c * C::new((base * u * T::lit(half as f64)).cos(), T::zero());
                } else {
                    acc = acc + *c * rot;
                }
                rot = rot * step.conj();
            }
            acc * inv_n
        })
        .collect();
    WaveField::new(target, values, field.t, field.hbar, field.kind)
}

/// Zero-padded spectra of two fields on one grid, for overlaps under free flight.
struct Spectra<T> {
    a: Vec<C<T>>,
    b: Vec<C<T>>,
    kinetic: Vec<T>,
    scale: T,
}

impl<T: Real> Spectra<T> {
    fn new(a: &WaveField<T>, b: &WaveField<T>) -> Self {
        let n = (2 * a.grid.n).next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(n);
        let pad = |v: &[C<T>]| {
            let mut out = v.to_vec();
            out.resize(n, C::new(T::zero(), T::zero()));
            fft.process(&mut out);
            out
        };
        let base = T::TAU() / (T::lit(n as f64) * a.grid.dx);
        let kinetic = (0..n)
            .map(|j| {
                let w = base * T::lit(if j < n.div_ceil(2) { j as f64 } else { j as f64 - n as f64 });
                a.hbar * w * w * T::lit(0.5)
            })
            .collect();
        Self { a: pad(&a.values), b: pad(&b.values), kinetic, scale: a.grid.dx / T::lit(n as f64) }
    }

    /// `<U(tau) a, b>` with `U(tau)` the free propagator.
    fn overlap(&self, tau: T) -> C<T> {
        self.a.iter().zip(&self.b).zip(&self.kinetic).map(|((a, b), k)| a.conj() * *b * C::from_polar(T::one(), *k * tau)).sum::<C<T>>()
            * self.scale
    }
}

/// Relative L2 error of `approx` against `reference`; with `fit_gauge` also the minimum over
/// a global phase and a free-flight time shift `|tau| <= max_shift`.
pub fn l2_compare<T: Real>(reference: &WaveField<T>, approx: &WaveField<T>, fit_gauge: bool, max_shift: T) -> Result<GaugeFit<T>> {
    let approx = resample(approx, reference.grid)?;
    let rn2 = reference.norm_sqr();
    if !(rn2 > T::zero()) {
        return Err(Error::InsufficientData("reference field vanishes".into()));
    }
    let diff: T = reference.values.iter().zip(&approx.values).map(|(r, a)| (r - a).norm_sqr()).sum::<T>() * reference.grid.dx;
    let raw_err = (diff / rn2).sqrt();
    if !fit_gauge {
        return Ok(GaugeFit { raw_err, gauged_err: raw_err, phase_offset: T::zero(), time_offset: T::zero() });
    }
    let an2 = approx.norm_sqr();
    let spectra = Spectra::new(&approx, reference);
    let cost = |tau: T| -spectra.overlap(tau).norm();
    // coarse scan, then a bounded refinement around the best sample
    let samples = 80;
    let step = T::lit(2.0) * max_shift / T::lit(samples as f64);
    let best = (0..=samples)
        .map(|i| -max_shift + step * T::lit(i as f64))
        .map(|t| (t, cost(t)))
        .fold((T::zero(), T::infinity()), |acc, p| if p.1 < acc.1 { p } else { acc });
    let (tau, _) = if max_shift > T::zero() {
        minimize(cost, (best.0 - step).max(-max_shift), (best.0 + step).min(max_shift), T::tol(1e-10))
    } else {
        (T::zero(), cost(T::zero()))
    };
    let o = spectra.overlap(tau);
    let gauged = ((rn2 + an2 - T::lit(2.0) * o.norm()).max(T::zero()) / rn2).sqrt();
    Ok(GaugeFit { raw_err, gauged_err: gauged, phase_offset: o.arg(), time_offset: tau })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit<T> {
    pub slope: T,
    pub intercept: T,
    pub r2: T,
}

/// Least-squares fit of `ln err` against `ln hbar`.
pub fn scaling_study<T: Real>(errors: &[(T, T)]) -> Result<ScalingFit<T>> {
    if errors.len() < 4 {
        return Err(Error::InsufficientData(format!("{} sweep points, need at least 4", errors.len())));
    }
    if errors.iter().any(|(h, e)| !(*h > T::zero() && *e > T::zero())) {
        return Err(Error::InsufficientData("errors and hbar must be positive".into()));
    }
    let pts: Vec<(T, T)> = errors.iter().map(|(h, e)| (h.ln(), e.ln())).collect();
    let n = T::lit(pts.len() as f64);
    let mx = pts.iter().map(|p| p.0).sum::<T>() / n;
    let my = pts.iter().map(|p| p.1).sum::<T>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<T>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<T>();
    let syy = pts.iter().map(|p| (p.1 - my).powi(2)).sum::<T>();
    if !(sxx > T::zero()) {
        return Err(Error::InsufficientData("all sweep points share one hbar".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy > T::zero() { sxy * sxy / (sxx * syy) } else { T::one() };
    Ok(ScalingFit { slope, intercept: my - slope * mx, r2 })
}

/// One approximant against one reference field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub hbar: f64,
    pub t: f64,
    pub reference: FieldKind,
    pub approximant: FieldKind,
    pub raw_err: f64,
    pub gauged_err: f64,
    pub phase_offset: f64,
    pub time_offset: f64,
    /// `||approx|| / ||ref||`.
    pub norm_ratio: Option<f64>,
    pub mean_k: Option<f64>,
    pub var_k: Option<f64>,
}

impl ComparisonRow {
    pub fn new<T: Real>(hbar: T, t: T, reference: FieldKind, approximant: FieldKind, fit: &GaugeFit<T>) -> Self {
        Self {
            hbar: hbar.as_f64(),
            t: t.as_f64(),
            reference,
            approximant,
            raw_err: fit.raw_err.as_f64(),
            gauged_err: fit.gauged_err.as_f64(),
            phase_offset: fit.phase_offset.as_f64(),
            time_offset: fit.time_offset.as_f64(),
            norm_ratio: None,
            mean_k: None,
            var_k: None,
        }
    }
}

/// A named pass/fail test on one number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, passed: value <= threshold }
    }

    pub fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, passed: value > threshold }
    }

    pub fn holds(name: impl Into<String>, passed: bool) -> Self {
        Self { name: name.into(), value: if passed { 1.0 } else { 0.0 }, threshold: 1.0, passed }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub checks: Vec<Check>,
    /// Sweep points that could not be computed, with the reason.
    pub gaps: Vec<String>,
}

/// Round-trip safe CSV number (17 significant digits).
pub fn csv_number(x: f64) -> String {
    format!("{x:.16e}")
}

fn kind_name(kind: FieldKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

impl ComparisonReport {
    pub fn all_passed(&self) -> bool {
        self.gaps.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// Flat CSV of the rows, numbers with 17 significant digits.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("hbar,t,reference,approximant,raw_err,gauged_err,phase_offset,time_offset,norm_ratio,mean_k,var_k\n");
        let num = csv_number;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                num(r.hbar),
                num(r.t),
                kind_name(r.reference),
                kind_name(r.approximant),
                num(r.raw_err),
                num(r.gauged_err),
                num(r.phase_offset),
                num(r.time_offset),
                opt(r.norm_ratio),
                opt(r.mean_k),
                opt(r.var_k)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet(grid: UniformGrid<f64>, x0: f64, k0: f64, hbar: f64) -> WaveField<f64> {
        let v = grid.points().map(|x| C::from_polar((-(x - x0).powi(2) / 2.0).exp(), k0 * x / hbar)).collect();
        WaveField::new(grid, v, 0.0, hbar, FieldKind::Other).unwrap()
    }

    #[test]
    fn identical_fields() {
        let g = UniformGrid::new(-20.0, 0.01, 4000).unwrap();
        let a = packet(g, 0.0, 1.0, 0.1);
        let f = l2_compare(&a, &a, true, 2.0).unwrap();
        assert_eq!(f.raw_err, 0.0);
        assert!(f.gauged_err < 1e-7 && f.time_offset.abs() < 1e-6);
    }

    #[test]
    fn recovers_global_phase() {
        let g = UniformGrid::new(-20.0, 0.01, 4000).unwrap();
        let a = packet(g, 0.0, 1.0, 0.1);
        let b = a.clone().scale(C::from_polar(1.0, 0.7));
        let f = l2_compare(&b, &a, true, 2.0).unwrap();
        assert!(f.gauged_err < 1e-7, "{}", f.gauged_err);
        assert!((f.phase_offset - 0.7).abs() < 1e-6, "{f:?}");
        assert!(f.raw_err > 0.5);
    }

    #[test]
    fn recovers_time_shift() {
        let g = UniformGrid::new(-20.0, 0.01, 4000).unwrap();
        let hbar = 0.1;
        let a = packet(g, 0.0, 1.0, hbar);
        let spectra = Spectra::new(&a, &a);
        // build U(0.8) a explicitly through the same padded transform
        let n = spectra.a.len();
        let mut moved: Vec<C<f64>> = spectra.a.iter().zip(&spectra.kinetic).map(|(c, k)| c * C::from_polar(1.0, -k * 0.8)).collect();
        FftPlanner::new().plan_fft_inverse(n).process(&mut moved);
        let b = WaveField::new(g, moved[..g.n].iter().map(|c| c / n as f64).collect(), 0.8, hbar, FieldKind::Other).unwrap();
        let f = l2_compare(&b, &a, true, 2.0).unwrap();
        assert!((f.time_offset - 0.8).abs() < 1e-5, "{}", f.time_offset);
        assert!(f.gauged_err < 1e-6);
    }

    #[test]
    fn gauge_symmetry_identity() {
        let g = UniformGrid::new(-20.0, 0.01, 4000).unwrap();
        let a = packet(g, 0.0, 1.0, 0.1);
        let b = packet(g, 0.3, 1.05, 0.1).scale(C::new(0.7, 0.2));
        let ab = l2_compare(&a, &b, true, 2.0).unwrap();
        let ba = l2_compare(&b, &a, true, 2.0).unwrap();
        assert!((ab.gauged_err * a.norm() - ba.gauged_err * b.norm()).abs() < 1e-12);
        assert!((ab.time_offset + ba.time_offset).abs() < 1e-6);
    }

    #[test]
    fn resampling_preserves_norm() {
        let g = UniformGrid::new(-20.0, 0.05, 800).unwrap();
        let a = packet(g, 0.5, 1.0, 0.5);
        let fine = UniformGrid::new(-20.0, 0.025, 1600).unwrap();
        let r = resample(&a, fine).unwrap();
        assert!((r.norm() / a.norm() - 1.0).abs() < 1e-10);
        // agrees with the analytic packet at the new points
        let exact = packet(fine, 0.5, 1.0, 0.5);
        let err: f64 = r.values.iter().zip(&exact.values).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        let outside = UniformGrid::new(-30.0, 0.05, 10).unwrap();
        assert!(matches!(resample(&a, outside), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn scaling_of_exact_power_laws() {
        let hs = [1.0 / 16.0, 1.0 / 24.0, 1.0 / 32.0, 1.0 / 48.0];
        let lin: Vec<(f64, f64)> = hs.iter().map(|&h| (h, h)).collect();
        let f = scaling_study(&lin).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = hs.iter().map(|&h| (h, 0.3)).collect();
        assert!(scaling_study(&flat).unwrap().slope.abs() < 1e-12);
        assert!(matches!(scaling_study(&lin[..3]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn csv_has_seventeen_digits() {
        let report = ComparisonReport {
            rows: vec![ComparisonRow::new(
                1.0 / 3.0,
                1.0,
                FieldKind::Reference,
                FieldKind::Gauss,
                &GaugeFit { raw_err: 0.1, gauged_err: 0.05, phase_offset: 0.0, time_offset: 0.0 },
            )],
            ..Default::default()
        };
        let csv = report.rows_csv();
        let cell = csv.lines().nth(1).unwrap().split(',').next().unwrap();
        assert_eq!(cell.parse::<f64>().unwrap(), 1.0 / 3.0);
        assert!(csv.contains(",reference,gauss,"));
    }
}
