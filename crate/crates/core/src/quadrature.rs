//! Gauss-Legendre and Gauss-Kronrod rules, plus substitutions for square-root endpoints.

use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    fn compute(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    let (_, d) = legendre(n, x);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Cached rule with `n` points.
    pub fn new(n: usize) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard.entry(n.max(1)).or_insert_with(|| Arc::new(Self::compute(n.max(1)))).clone()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped<T: Real>(&self, a: T, b: T) -> impl Iterator<Item = (T, T)> + '_ {
        let half = (b - a) * T::lit(0.5);
        let mid = (a + b) * T::lit(0.5);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (mid + half * T::lit(x), half * T::lit(w)))
    }

    pub fn integrate<T: Real, F: FnMut(T) -> T>(&self, a: T, b: T, mut f: F) -> T {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss-Legendre over `panels` equal panels of an `n`-point rule.
pub fn composite<T: Real, F: FnMut(T) -> T>(a: T, b: T, panels: usize, n: usize, mut f: F) -> T {
    let rule = GaussLegendre::new(n);
    let panels = panels.max(1);
    let h = (b - a) / T::lit(panels as f64);
    (0..panels)
        .map(|i| {
            let lo = a + h * T::lit(i as f64);
            rule.integrate(lo, lo + h, &mut f)
        })
        .sum()
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn kronrod15<T: Real, F: FnMut(T) -> T>(a: T, b: T, f: &mut F) -> (T, T) {
    let half = (b - a) * T::lit(0.5);
    let mid = (a + b) * T::lit(0.5);
    let fc = f(mid);
    let mut fv = [(T::zero(), T::zero()); 7];
    let mut k = fc * T::lit(WGK[7]);
    let mut g = fc * T::lit(WG[3]);
    let mut abs = fc.abs() * T::lit(WGK[7]);
    for j in 0..7 {
        let dx = half * T::lit(XGK[j]);
        let (f1, f2) = (f(mid - dx), f(mid + dx));
        fv[j] = (f1, f2);
        k = k + (f1 + f2) * T::lit(WGK[j]);
        abs = abs + (f1.abs() + f2.abs()) * T::lit(WGK[j]);
        if j % 2 == 1 {
            g = g + (f1 + f2) * T::lit(WG[j / 2]);
        }
    }
    // error estimate as in QUADPACK's qk15
    let mean = k * T::lit(0.5);
    let mut asc = T::lit(WGK[7]) * (fc - mean).abs();
    for j in 0..7 {
        asc = asc + T::lit(WGK[j]) * ((fv[j].0 - mean).abs() + (fv[j].1 - mean).abs());
    }
    let h = half.abs();
    let (asc, abs) = (asc * h, abs * h);
    let mut err = ((k - g) * half).abs();
    if asc != T::zero() && err != T::zero() {
        err = asc * T::one().min((T::lit(200.0) * err / asc).powf(T::lit(1.5)));
    }
    err = err.max(T::lit(50.0) * T::epsilon() * abs);
    (k * half, err)
}

struct Segment<T> {
    a: T,
    b: T,
    value: T,
    err: T,
}

impl<T: Real> PartialEq for Segment<T> {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl<T: Real> Eq for Segment<T> {}
impl<T: Real> PartialOrd for Segment<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for Segment<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.partial_cmp(&other.err).unwrap_or(std::cmp::Ordering::Equal)
    }
}

/// Absolute and relative error targets for adaptive rules.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance<T> {
    pub abs: T,
    pub rel: T,
    pub max_segments: usize,
}

impl<T: Real> Tolerance<T> {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs: T::tol(abs), rel: T::lit(rel).max(T::epsilon() * T::lit(200.0)), max_segments: 4000 }
    }
}

impl<T: Real> Default for Tolerance<T> {
    fn default() -> Self {
        Self::new(1e-15, 1e-13)
    }
}

/// Globally adaptive Gauss-Kronrod (7, 15) quadrature.
pub fn adaptive<T: Real, F: FnMut(T) -> T>(a: T, b: T, tol: Tolerance<T>, mut f: F) -> Result<T> {
    if a == b {
        return Ok(T::zero());
    }
    let (v, e) = kronrod15(a, b, &mut f);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value: v, err: e });
    let (mut total, mut total_err) = (v, e);
    loop {
        if !total.is_finite() {
            return Err(Error::QuadratureFailure("non-finite integrand".into()));
        }
        if total_err <= tol.abs.max(tol.rel * total.abs()) {
            return Ok(total);
        }
        if heap.len() >= tol.max_segments {
            return Err(Error::QuadratureFailure(format!("error estimate {:e} after {} segments", total_err.as_f64(), heap.len())));
        }
        let Some(worst) = heap.pop() else {
            return Ok(total);
        };
        let m = (worst.a + worst.b) * T::lit(0.5);
        if m <= worst.a || m >= worst.b {
            // interval cannot be split further; accept what we have
            return Ok(total);
        }
        let (v1, e1) = kronrod15(worst.a, m, &mut f);
        let (v2, e2) = kronrod15(m, worst.b, &mut f);
        total = total - worst.value + v1 + v2;
        total_err = total_err - worst.err + e1 + e2;
        heap.push(Segment { a: worst.a, b: m, value: v1, err: e1 });
        heap.push(Segment { a: m, b: worst.b, value: v2, err: e2 });
    }
}

/// Integral over [a, b] of an integrand with square-root behaviour at both ends.
///
/// Uses `y = m + h sin(theta)`; `f(y, dy)` must return the integrand already
/// multiplied by `dy = h cos(theta)`, so that `p * dy` and `dy / p` stay smooth.
/// The rule is refined until two successive estimates agree to `rel_tol`.
pub fn sqrt_endpoints<T: Real, F: FnMut(T, T) -> T>(a: T, b: T, rel_tol: f64, mut f: F) -> Result<T> {
    let m = (a + b) * T::lit(0.5);
    let h = (b - a) * T::lit(0.5);
    let half_pi = T::FRAC_PI_2();
    let mut eval = |n: usize| -> T { GaussLegendre::new(n).integrate(-half_pi, half_pi, |th| f(m + h * th.sin(), h * th.cos())) };
    let tol = T::tol(rel_tol);
    // Rounding in E - V near the endpoints grows with the number of nodes, so step n gently
    // and fall back to the coarser estimate once refinement stops helping.
    let mut n = 16;
    let mut prev = eval(n);
    let mut last_diff = T::infinity();
    while n < 2048 {
        n += n / 2;
        let next = eval(n);
        let diff = (next - prev).abs();
        let scale = next.abs().max(T::epsilon());
        if diff <= tol * scale {
            return Ok(next);
        }
        if diff >= last_diff && diff <= T::tol(1e-10) * scale {
            return Ok(prev);
        }
        last_diff = diff;
        prev = next;
    }
    Err(Error::QuadratureFailure(format!("two-sided rule did not settle on [{}, {}]", a.as_f64(), b.as_f64())))
}

/// Integral over [a, b] with a square-root endpoint at `a` (which may be the upper limit).
///
/// Uses `y = a + s u^2` (s the sign of b - a); `f(y, dy)` receives `dy = 2 u` and
/// returns the integrand times `dy`. The result is oriented, like `int_a^b`.
pub fn sqrt_endpoint<T: Real, F: FnMut(T, T) -> T>(a: T, b: T, tol: Tolerance<T>, mut f: F) -> Result<T> {
    let s = if b >= a { T::one() } else { -T::one() };
    let umax = (b - a).abs().sqrt();
    let mut g = |u: T| f(a + s * u * u, T::lit(2.0) * u);
    // Near the endpoint the computed E - V(y) is dominated by rounding, so nodes must not
    // crowd u = 0: use fixed composite rules there instead of adaptive bisection.
    let uc = umax.min(T::one());
    let mut panels = 1;
    let mut prev = composite(T::zero(), uc, panels, 16, &mut g);
    let mut last_diff = T::infinity();
    let near = loop {
        panels *= 2;
        let next = composite(T::zero(), uc, panels, 16, &mut g);
        let diff = (next - prev).abs();
        let scale = next.abs();
        if diff <= tol.abs.max(tol.rel * scale) || (diff >= last_diff && diff <= T::tol(1e-10) * scale) {
            break next;
        }
        if panels >= 256 {
            return Err(Error::QuadratureFailure(format!("endpoint rule did not settle near {}", a.as_f64())));
        }
        last_diff = diff;
        prev = next;
    };
    let far = if umax > uc { adaptive(uc, umax, tol, g)? } else { T::zero() };
    Ok((near + far) * s)
}

/// Chebyshev-Lobatto nodes on [a, b], ascending.
pub fn chebyshev_nodes<T: Real>(n: usize, a: T, b: T) -> Vec<T> {
    let n = n.max(2);
    (0..n)
        .map(|j| {
            let c = (T::PI() * T::lit((n - 1 - j) as f64) / T::lit((n - 1) as f64)).cos();
            (a + b) * T::lit(0.5) + (b - a) * T::lit(0.5) * c
        })
        .collect()
}

/// Barycentric interpolant through values sampled at [`chebyshev_nodes`].
#[derive(Debug, Clone)]
pub struct Chebyshev<T> {
    nodes: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> Chebyshev<T> {
    pub fn new(nodes: Vec<T>, values: Vec<T>) -> Self {
        assert_eq!(nodes.len(), values.len());
        Self { nodes, values }
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn eval(&self, x: T) -> T {
        let n = self.nodes.len();
        let (mut num, mut den) = (T::zero(), T::zero());
        for (j, (&xj, &fj)) in self.nodes.iter().zip(&self.values).enumerate() {
            let d = x - xj;
            if d == T::zero() {
                return fj;
            }
            let mut w = if j % 2 == 0 { T::one() } else { -T::one() };
            if j == 0 || j == n - 1 {
                w = w * T::lit(0.5);
            }
            let w = w / d;
            num = num + w * fj;
            den = den + w;
        }
        num / den
    }
}
