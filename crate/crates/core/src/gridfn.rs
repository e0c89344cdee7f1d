//! Functions on `[0, 1]` sampled on a uniform power-of-two grid.
//!
//! A [`GridFn`] stores values at `t_j = j / N` and, optionally, derivative
//! samples. Derivatives supplied by the expression layer are exact; otherwise
//! central differences are used and the result is flagged as such.

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, C64, ZERO};

pub const DEFAULT_INTERVALS: usize = 1024;
pub const MIN_INTERVALS: usize = 16;

/// Values a grid function can take: scalars, vectors or square matrices.
pub trait Sample: Clone + Send + Sync {
    /// Pointwise norm: modulus, Euclidean norm, or spectral norm.
    fn norm(&self) -> f64;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn scale_c(&self, c: C64) -> Self;
    fn zero_like(&self) -> Self;
    fn is_finite(&self) -> bool;
}

impl Sample for C64 {
    fn norm(&self) -> f64 {
        C64::norm(*self)
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn scale_c(&self, c: C64) -> Self {
        self * c
    }
    fn zero_like(&self) -> Self {
        ZERO
    }
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl Sample for CVector {
    fn norm(&self) -> f64 {
        CVector::norm(self)
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn scale(&self, c: f64) -> Self {
        CVector::scale(self, C64::new(c, 0.0))
    }
    fn scale_c(&self, c: C64) -> Self {
        CVector::scale(self, c)
    }
    fn zero_like(&self) -> Self {
        CVector::zeros(self.dim())
    }
    fn is_finite(&self) -> bool {
        CVector::is_finite(self)
    }
}

impl Sample for CMatrix {
    fn norm(&self) -> f64 {
        crate::linalg::op_norm_unchecked(self)
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn scale(&self, c: f64) -> Self {
        self.scale_re(c)
    }
    fn scale_c(&self, c: C64) -> Self {
        CMatrix::scale(self, c)
    }
    fn zero_like(&self) -> Self {
        CMatrix::zeros(self.dim())
    }
    fn is_finite(&self) -> bool {
        CMatrix::is_finite(self)
    }
}

/// Where derivative samples came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivSource {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormReport {
    pub c_norm: f64,
    pub l1_norm: f64,
    pub w11_norm: f64,
    pub deriv_source: DerivSource,
}

#[derive(Clone, Debug)]
pub struct GridFn<T> {
    values: Vec<T>,
    deriv: Option<Vec<T>>,
}

pub type ScalarFn = GridFn<C64>;
pub type VectorFn = GridFn<CVector>;
pub type OperatorFn = GridFn<CMatrix>;

fn check_intervals(n: usize) -> Result<()> {
    if n < MIN_INTERVALS || !n.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "grid needs a power-of-two interval count >= {MIN_INTERVALS}, got {n}"
        )));
    }
    Ok(())
}

#[inline]
pub fn node(n: usize, j: usize) -> f64 {
    j as f64 / n as f64
}

impl<T: Sample> GridFn<T> {
    pub fn from_samples(values: Vec<T>, deriv: Option<Vec<T>>) -> Result<Self> {
        check_intervals(values.len().saturating_sub(1))?;
        if !values.iter().all(Sample::is_finite) {
            return Err(Error::InvalidInput("grid samples must be finite".into()));
        }
        if let Some(d) = &deriv {
            if d.len() != values.len() {
                return Err(Error::DimensionMismatch { expected: values.len(), got: d.len() });
            }
            if !d.iter().all(Sample::is_finite) {
                return Err(Error::InvalidInput("derivative samples must be finite".into()));
            }
        }
        Ok(Self { values, deriv })
    }

    /// Samples `f` at the nodes of an `n`-interval grid (no derivative).
    pub fn from_fn(n: usize, f: impl Fn(f64) -> T) -> Result<Self> {
        check_intervals(n)?;
        Self::from_samples((0..=n).map(|j| f(node(n, j))).collect(), None)
    }

    /// Samples a value/derivative pair at every node.
    pub fn from_fn_with_deriv(n: usize, f: impl Fn(f64) -> (T, T)) -> Result<Self> {
        check_intervals(n)?;
        let (values, deriv): (Vec<T>, Vec<T>) = (0..=n).map(|j| f(node(n, j))).unzip();
        Self::from_samples(values, Some(deriv))
    }

    pub fn constant(n: usize, value: T) -> Result<Self> {
        let zero = value.zero_like();
        Self::from_fn_with_deriv(n, |_| (value.clone(), zero.clone()))
    }

    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn step(&self) -> f64 {
        1.0 / self.intervals() as f64
    }

    pub fn t(&self, j: usize) -> f64 {
        node(self.intervals(), j)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn value(&self, j: usize) -> &T {
        &self.values[j]
    }

    pub fn first(&self) -> &T {
        &self.values[0]
    }

    pub fn last(&self) -> &T {
        self.values.last().expect("grid is never empty")
    }

    /// Stored (analytic) derivative samples, if any.
    pub fn deriv(&self) -> Option<&[T]> {
        self.deriv.as_deref()
    }

    pub fn has_analytic_deriv(&self) -> bool {
        self.deriv.is_some()
    }

    pub fn without_deriv(mut self) -> Self {
        self.deriv = None;
        self
    }

    /// Applies `f` nodewise; derivative information is dropped.
    pub fn map<U: Sample>(&self, f: impl Fn(usize, &T) -> U) -> GridFn<U> {
        GridFn { values: self.values.iter().enumerate().map(|(j, v)| f(j, v)).collect(), deriv: None }
    }

    /// Applies `f` to (value, derivative) pairs; requires stored derivatives.
    pub fn map_with_deriv<U: Sample>(&self, f: impl Fn(usize, &T, &T) -> (U, U)) -> Option<GridFn<U>> {
        let d = self.deriv.as_ref()?;
        let (values, deriv) = self.values.iter().zip(d).enumerate().map(|(j, (v, dv))| f(j, v, dv)).unzip();
        Some(GridFn { values, deriv: Some(deriv) })
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "grid size mismatch");
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a.sub(b)).collect();
        let deriv = match (&self.deriv, &other.deriv) {
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| x.sub(y)).collect()),
            _ => None,
        };
        GridFn { values, deriv }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "grid size mismatch");
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a.add(b)).collect();
        let deriv = match (&self.deriv, &other.deriv) {
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| x.add(y)).collect()),
            _ => None,
        };
        GridFn { values, deriv }
    }

    pub fn pointwise_norms(&self) -> Vec<f64> {
        self.values.iter().map(Sample::norm).collect()
    }

    pub fn norm_c(&self) -> f64 {
        self.values.iter().map(Sample::norm).fold(0.0, f64::max)
    }

    pub fn norm_l1(&self) -> f64 {
        trapezoid(&self.pointwise_norms(), self.step())
    }

    /// Composite trapezoid value of the integral over `[0, 1]`.
    pub fn integrate(&self) -> T {
        let h = self.step();
        let n = self.intervals();
        let mut acc = self.values[0].add(&self.values[n]).scale(0.5);
        for v in &self.values[1..n] {
            acc = acc.add(v);
        }
        acc.scale(h)
    }

    /// Derivative samples: the stored ones when present, central differences otherwise.
    pub fn derivative_samples(&self) -> (Vec<T>, DerivSource) {
        match &self.deriv {
            Some(d) => (d.clone(), DerivSource::Analytic),
            None => (finite_difference(&self.values, self.step()), DerivSource::FiniteDifference),
        }
    }

    /// Central-difference derivative (second-order one-sided at the ends).
    pub fn derivative(&self) -> Self {
        GridFn { values: finite_difference(&self.values, self.step()), deriv: None }
    }

    pub fn norm_w11(&self) -> (f64, DerivSource) {
        let (d, src) = self.derivative_samples();
        let dn: Vec<f64> = d.iter().map(Sample::norm).collect();
        (self.norm_l1() + trapezoid(&dn, self.step()), src)
    }

    pub fn norm_report(&self) -> NormReport {
        let (w11, src) = self.norm_w11();
        NormReport { c_norm: self.norm_c(), l1_norm: self.norm_l1(), w11_norm: w11, deriv_source: src }
    }

    /// Running integral `int_0^{t_j}` with a fourth-order cubic rule.
    pub fn cumulative_integral(&self) -> Vec<T> {
        cumulative_quad4(&self.values, self.step())
    }

    /// Value at an arbitrary `t` in `[0, 1]`: cubic Hermite when analytic
    /// derivatives are stored, four-point Lagrange otherwise.
    pub fn sample_at(&self, t: f64) -> T {
        let n = self.intervals();
        let h = self.step();
        let x = (t.clamp(0.0, 1.0)) * n as f64;
        let j = (x.floor() as usize).min(n - 1);
        let s = x - j as f64;
        if s == 0.0 {
            return self.values[j].clone();
        }
        if let Some(d) = &self.deriv {
            let s2 = s * s;
            let s3 = s2 * s;
            let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
            let h10 = s3 - 2.0 * s2 + s;
            let h01 = -2.0 * s3 + 3.0 * s2;
            let h11 = s3 - s2;
            return self.values[j]
                .scale(h00)
                .add(&d[j].scale(h10 * h))
                .add(&self.values[j + 1].scale(h01))
                .add(&d[j + 1].scale(h11 * h));
        }
        let base = j.saturating_sub(1).min(n - 3);
        let u = x - base as f64;
        let w = [
            -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0,
            u * (u - 2.0) * (u - 3.0) / 2.0,
            -u * (u - 1.0) * (u - 3.0) / 2.0,
            u * (u - 1.0) * (u - 2.0) / 6.0,
        ];
        let mut acc = self.values[base].scale(w[0]);
        for (k, wk) in w.iter().enumerate().skip(1) {
            acc = acc.add(&self.values[base + k].scale(*wk));
        }
        acc
    }

    /// Convolution with the unit-mass hat kernel of half-width `width`,
    /// applied to the piecewise-linear interpolant reflected across both ends.
    /// With `vanish_at_ends`, the result is multiplied by a C^1 cutoff that is
    /// zero at `t = 0, 1` and one on `[width, 1 - width]`. The output carries
    /// exact derivative samples.
    pub fn mollify(&self, width: f64, vanish_at_ends: bool) -> Result<Self> {
        if !(width > 0.0 && width < 0.25) {
            return Err(Error::InvalidParameter(format!("mollifier width {width} outside (0, 1/4)")));
        }
        let n = self.intervals();
        let h = self.step();
        let pad = (width / h).ceil() as usize + 2;
        // Extended samples on nodes -pad ..= n + pad, reflected evenly.
        let ext: Vec<T> = (0..=n + 2 * pad)
            .map(|k| {
                let i = k as isize - pad as isize;
                let r = if i < 0 {
                    (-i) as usize
                } else if i as usize > n {
                    2 * n - i as usize
                } else {
                    i as usize
                };
                self.values[r].clone()
            })
            .collect();
        // First and second antiderivatives of the interpolant at extended nodes.
        let zero = self.values[0].zero_like();
        let mut big_f = Vec::with_capacity(ext.len());
        let mut big_g = Vec::with_capacity(ext.len());
        big_f.push(zero.clone());
        big_g.push(zero.clone());
        for k in 0..ext.len() - 1 {
            let f_next = big_f[k].add(&ext[k].add(&ext[k + 1]).scale(0.5 * h));
            let g_next = big_g[k]
                .add(&big_f[k].scale(h))
                .add(&ext[k].scale(2.0).add(&ext[k + 1]).scale(h * h / 6.0));
            big_f.push(f_next);
            big_g.push(g_next);
        }
        let origin = -(pad as f64) * h;
        let eval = |x: f64| -> (T, T) {
            let pos = (x - origin) / h;
            let k = (pos.floor() as usize).min(ext.len() - 2);
            let s = x - (origin + k as f64 * h);
            let slope = ext[k + 1].sub(&ext[k]).scale(1.0 / h);
            let f_at = big_f[k].add(&ext[k].scale(s)).add(&slope.scale(s * s / 2.0));
            let g_at = big_g[k]
                .add(&big_f[k].scale(s))
                .add(&ext[k].scale(s * s / 2.0))
                .add(&slope.scale(s * s * s / 6.0));
            (f_at, g_at)
        };
        let inv_w2 = 1.0 / (width * width);
        let mut values = Vec::with_capacity(n + 1);
        let mut deriv = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let t = node(n, j);
            let (fp, gp) = eval(t + width);
            let (f0, g0) = eval(t);
            let (fm, gm) = eval(t - width);
            let v = gp.sub(&g0.scale(2.0)).add(&gm).scale(inv_w2);
            let dv = fp.sub(&f0.scale(2.0)).add(&fm).scale(inv_w2);
            if vanish_at_ends {
                let (chi, dchi) = cutoff(t, width);
                deriv.push(dv.scale(chi).add(&v.scale(dchi)));
                values.push(v.scale(chi));
            } else {
                values.push(v);
                deriv.push(dv);
            }
        }
        Self::from_samples(values, Some(deriv))
    }
}

impl GridFn<C64> {
    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }
}

/// C^1 cutoff and its derivative: smoothstep ramps on `[0, w]` and `[1 - w, 1]`.
pub fn cutoff(t: f64, w: f64) -> (f64, f64) {
    let ramp = |x: f64| -> (f64, f64) {
        if x >= 1.0 {
            (1.0, 0.0)
        } else if x <= 0.0 {
            (0.0, 0.0)
        } else {
            (x * x * (3.0 - 2.0 * x), 6.0 * x * (1.0 - x))
        }
    };
    let (a, da) = ramp(t / w);
    let (b, db) = ramp((1.0 - t) / w);
    (a * b, da / w * b - a * db / w)
}

/// Composite trapezoid rule over uniformly spaced real samples.
pub fn trapezoid(samples: &[f64], h: f64) -> f64 {
    let n = samples.len() - 1;
    let inner: f64 = samples[1..n].iter().sum();
    h * (inner + 0.5 * (samples[0] + samples[n]))
}

/// Running trapezoid integral of real samples, `out[j] = int_0^{t_j}`.
pub fn cumulative_trapezoid(samples: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in samples.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Running integral with the four-point cubic rule on each cell.
pub fn cumulative_quad4<T: Sample>(v: &[T], h: f64) -> Vec<T> {
    let n = v.len() - 1;
    assert!(n >= 3, "need at least three cells");
    let c = h / 24.0;
    let mut out = Vec::with_capacity(n + 1);
    out.push(v[0].zero_like());
    for j in 0..n {
        let cell = if j == 0 {
            v[0].scale(9.0).add(&v[1].scale(19.0)).sub(&v[2].scale(5.0)).add(&v[3])
        } else if j == n - 1 {
            v[n - 3].sub(&v[n - 2].scale(5.0)).add(&v[n - 1].scale(19.0)).add(&v[n].scale(9.0))
        } else {
            v[j].add(&v[j + 1]).scale(13.0).sub(&v[j - 1]).sub(&v[j + 2])
        };
        let next = out[j].add(&cell.scale(c));
        out.push(next);
    }
    out
}

fn finite_difference<T: Sample>(v: &[T], h: f64) -> Vec<T> {
    let n = v.len() - 1;
    let inv = 1.0 / (2.0 * h);
    let mut out = Vec::with_capacity(n + 1);
    out.push(v[1].scale(4.0).sub(&v[0].scale(3.0)).sub(&v[2]).scale(inv));
    for j in 1..n {
        out.push(v[j + 1].sub(&v[j - 1]).scale(inv));
    }
    out.push(v[n].scale(3.0).sub(&v[n - 1].scale(4.0)).add(&v[n - 2]).scale(inv));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::op_norm;
    use std::f64::consts::PI;

    fn re(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn smooth(t: f64) -> (C64, C64) {
        // f = exp(sin 3t) + i t^2 cos t
        let a = (3.0 * t).sin().exp();
        let da = 3.0 * (3.0 * t).cos() * a;
        let b = t * t * t.cos();
        let db = 2.0 * t * t.cos() - t * t * t.sin();
        (C64::new(a, b), C64::new(da, db))
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(ScalarFn::from_fn(8, |_| ZERO).is_err());
        assert!(ScalarFn::from_fn(100, |_| ZERO).is_err());
        assert!(ScalarFn::from_fn(16, |t| re(1.0 / (t - 0.5))).is_err());
    }

    #[test]
    fn norm_c_examples() {
        let m = CMatrix::from_real_rows(&[&[1.0, 2.0], &[0.0, -1.0]]);
        let f = OperatorFn::constant(64, m.clone()).unwrap();
        assert!((f.norm_c() - op_norm(&m).unwrap()).abs() < 1e-14);
        let g = ScalarFn::from_fn(64, re).unwrap();
        assert_eq!(g.norm_c(), 1.0);
    }

    #[test]
    fn norm_c_refinement_within_lipschitz_allowance() {
        let f = |t: f64| re((7.0 * t).sin() + 0.3 * (2.0 * t).cos());
        let lip = 7.0 + 0.6;
        let coarse = ScalarFn::from_fn(1024, f).unwrap().norm_c();
        let fine = ScalarFn::from_fn(4096, f).unwrap().norm_c();
        assert!((coarse - fine).abs() <= 2.0 * lip / 1024.0);
    }

    #[test]
    fn integrate_examples() {
        let c = ScalarFn::from_fn(64, |_| C64::new(3.0, -4.0)).unwrap();
        assert!((c.norm_l1() - 5.0).abs() < 1e-14);
        let lin = ScalarFn::from_fn(64, |t| re(2.0 * t)).unwrap();
        assert!((lin.integrate() - re(1.0)).norm() < 1e-14);
        let s = ScalarFn::from_fn(1024, |t| re((2.0 * PI * t).sin())).unwrap();
        assert!(s.integrate().norm() < 1e-10);
        assert!((s.norm_l1() - 2.0 / PI).abs() < 1e-4);
    }

    #[test]
    fn w11_examples() {
        let c = ScalarFn::constant(64, re(-2.0)).unwrap();
        assert!((c.norm_w11().0 - 2.0).abs() < 1e-14);
        let lin = ScalarFn::from_fn_with_deriv(64, |t| (re(t), re(1.0))).unwrap();
        let (w, src) = lin.norm_w11();
        assert!((w - 1.5).abs() < 1e-14);
        assert_eq!(src, DerivSource::Analytic);
        let analytic = ScalarFn::from_fn_with_deriv(1024, smooth).unwrap();
        let fd = analytic.clone().without_deriv();
        let (wa, _) = analytic.norm_w11();
        let (wf, src) = fd.norm_w11();
        assert_eq!(src, DerivSource::FiniteDifference);
        assert!((wa - wf).abs() < 1e-4);
    }

    #[test]
    fn derivative_examples() {
        let c = ScalarFn::from_fn(32, |_| re(4.0)).unwrap();
        assert!(c.derivative().norm_c() < 1e-12);
        let q = ScalarFn::from_fn(32, |t| re(t * t)).unwrap();
        let d = q.derivative();
        for j in 0..=32 {
            assert!((d.value(j) - re(2.0 * q.t(j))).norm() < 1e-12);
        }
        let g = ScalarFn::from_fn_with_deriv(1024, smooth).unwrap();
        let fd = g.derivative();
        for j in 0..=1024 {
            assert!((fd.value(j) - g.deriv().unwrap()[j]).norm() < 1e-3);
        }
        // interior nodes are second-order accurate
        for j in 1..1024 {
            assert!((fd.value(j) - g.deriv().unwrap()[j]).norm() < 1e-4);
        }
    }

    #[test]
    fn mollify_preserves_constants() {
        let one = ScalarFn::from_fn(256, |_| re(1.0)).unwrap();
        let m = one.mollify(1.0 / 16.0, false).unwrap();
        for j in 0..=256 {
            assert!((m.value(j) - re(1.0)).norm() < 1e-12);
            assert!(m.deriv().unwrap()[j].norm() < 1e-9);
        }
    }

    #[test]
    fn mollify_cutoff_vanishes_at_ends() {
        let w = 1.0 / 16.0;
        let one = ScalarFn::from_fn(256, |_| re(1.0)).unwrap();
        let m = one.mollify(w, true).unwrap();
        assert_eq!(m.first().norm(), 0.0);
        assert_eq!(m.last().norm(), 0.0);
        for j in 0..=256 {
            let t = m.t(j);
            if t >= w && t <= 1.0 - w {
                assert!((m.value(j) - re(1.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn mollify_step_error_matches_exact_convolution() {
        // For a unit step, the hat convolution differs from the step by
        // int_0^w (1 - s/w)^2 ds = w/3 in L1.
        let step = ScalarFn::from_fn(1024, |t| re(if t > 0.5 { 1.0 } else { 0.0 })).unwrap();
        for w in [1.0 / 16.0, 1.0 / 32.0, 0.1] {
            let m = step.mollify(w, false).unwrap();
            let err = m.sub(&step).norm_l1();
            let exact = w / 3.0;
            assert!((err - exact).abs() <= 0.1 * exact, "w={w}: {err} vs {exact}");
            assert!(err <= w);
        }
    }

    #[test]
    fn mollify_derivative_is_consistent() {
        // Cellwise trapezoid of the stored derivative matches the increments.
        let g = ScalarFn::from_fn(1024, |t| smooth(t).0).unwrap();
        let h = g.step();
        // the cutoff's second derivative jumps by 6/w^2, costing O(h^2/w^2) in one cell
        for (vanish, tol) in [(false, 1e-6), (true, 1e-4)] {
            let m = g.mollify(1.0 / 32.0, vanish).unwrap();
            let d = m.deriv().unwrap();
            let worst = (0..1024)
                .map(|j| (m.value(j + 1) - m.value(j) - 0.5 * h * (d[j] + d[j + 1])).norm())
                .fold(0.0, f64::max);
            assert!(worst < tol, "vanish={vanish}: {worst}");
        }
    }

    #[test]
    fn mollify_rejects_bad_width() {
        let g = ScalarFn::from_fn(64, |_| ZERO).unwrap();
        assert!(matches!(g.mollify(0.0, false), Err(Error::InvalidParameter(_))));
        assert!(matches!(g.mollify(0.3, false), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn mollify_is_c_contraction_for_matrices() {
        let f = OperatorFn::from_fn(256, |t| {
            CMatrix::from_rows(
                2,
                vec![re((9.0 * t).sin()), C64::new(0.0, t), re(if t > 0.3 { 1.0 } else { -1.0 }), re(t * t)],
            )
        })
        .unwrap();
        let m = f.mollify(0.05, false).unwrap();
        assert!(m.norm_c() <= f.norm_c() * (1.0 + 1e-12));
    }

    #[test]
    fn sample_at_is_fourth_order() {
        let g = ScalarFn::from_fn_with_deriv(256, smooth).unwrap();
        let lagrange = g.clone().without_deriv();
        for k in 0..50 {
            let t = (k as f64 + 0.37) / 50.0;
            let exact = smooth(t).0;
            assert!((g.sample_at(t) - exact).norm() < 1e-9);
            assert!((lagrange.sample_at(t) - exact).norm() < 1e-8);
        }
    }

    #[test]
    fn cumulative_quad4_is_accurate() {
        let g = ScalarFn::from_fn(256, |t| smooth(t).0).unwrap();
        let cum = g.cumulative_integral();
        // exact antiderivative of t^2 cos t is (t^2 - 2) sin t + 2 t cos t
        let im = |t: f64| (t * t - 2.0) * t.sin() + 2.0 * t * t.cos();
        for j in [16, 100, 256] {
            let t = g.t(j);
            assert!((cum[j].im - im(t)).abs() < 1e-10);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn l1_below_c_and_integral_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, w in 0.5f64..9.0) {
                let f = ScalarFn::from_fn(128, |t| C64::new(a * (w * t).sin(), b * t)).unwrap();
                let g = ScalarFn::from_fn(128, |t| re((w * t).cos().abs())).unwrap();
                prop_assert!(f.norm_l1() <= f.norm_c() + 1e-15);
                let sum = f.add(&g);
                prop_assert!((sum.integrate() - (f.integrate() + g.integrate())).norm() < 1e-12);
                // nonnegative scalar: integral equals L1 norm
                prop_assert!((g.integrate().re - g.norm_l1()).abs() < 1e-12);
            }

            #[test]
            fn refinement_changes_norms_little(a in 0.5f64..2.0, w in 1.0f64..4.0) {
                let f = |t: f64| (C64::new(a * (w * t).sin() + 2.0, t * t), C64::new(a * w * (w * t).cos(), 2.0 * t));
                let coarse = ScalarFn::from_fn_with_deriv(1024, f).unwrap().norm_report();
                let fine = ScalarFn::from_fn_with_deriv(4096, f).unwrap().norm_report();
                for (x, y) in [(coarse.c_norm, fine.c_norm), (coarse.l1_norm, fine.l1_norm), (coarse.w11_norm, fine.w11_norm)] {
                    prop_assert!((x - y).abs() <= 1e-5 * y);
                }
                prop_assert!(coarse.l1_norm <= coarse.c_norm);
                prop_assert!(coarse.w11_norm >= coarse.l1_norm);
            }
        }
    }
}
