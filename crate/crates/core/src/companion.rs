//! Companion-type systems for n-th order scalar operators with spectral
//! parameter `lambda`, their Vandermonde diagonalization and the leading
//! terms of Birkhoff-type solutions in the sectors `Omega_m`.
//!
//! Index conventions: rows, columns and the root index `k` are 1-based in
//! the public API (`omega_k = e^{2 pi i k / n}`, `k = 1..n`); matrix storage
//! is 0-based.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::asympt::{compare_systems, ParamFamily, Side};
use crate::error::{Error, Result};
use crate::exprparse::parse;
use crate::frame::{conjugate, Block, Partition};
use crate::gridfn::{cumulative_quad4, OperatorFn, ScalarFn, VectorFn};
use crate::linalg::{CMatrix, CVector, C64};

#[derive(Debug, Clone)]
pub struct CompanionSpec {
    zeta: C64,
    p: Vec<ScalarFn>,
    /// `q_kl` for `l <= k`, keyed by 1-based `(k, l)`.
    q: Vec<((usize, usize), ScalarFn)>,
}

impl CompanionSpec {
    /// `p` must be real and positive at every node and carry derivatives;
    /// `q` entries must lie on or below the diagonal.
    pub fn new(zeta: C64, p: Vec<ScalarFn>, q: Vec<((usize, usize), ScalarFn)>) -> Result<Self> {
        let n = p.len();
        if n < 2 {
            return Err(Error::InvalidInput("order must be at least 2".into()));
        }
        let grid = p[0].intervals();
        for (i, pk) in p.iter().enumerate() {
            if pk.intervals() != grid {
                return Err(Error::DimensionMismatch { expected: grid, got: pk.intervals() });
            }
            if !pk.has_analytic_deriv() {
                return Err(Error::InvalidInput(format!("p_{} needs derivative samples", i + 1)));
            }
            if pk.values().iter().any(|z| z.im != 0.0 || z.re <= 0.0) {
                return Err(Error::InvalidInput(format!("p_{} must be real and positive", i + 1)));
            }
        }
        let mut seen = Vec::new();
        for ((k, l), qkl) in &q {
            if !(1..=n).contains(k) || *l < 1 || l > k {
                return Err(Error::InvalidInput(format!("q_{k}{l} lies outside the lower triangle")));
            }
            if seen.contains(&(*k, *l)) {
                return Err(Error::InvalidInput(format!("q_{k}{l} given twice")));
            }
            seen.push((*k, *l));
            if qkl.intervals() != grid {
                return Err(Error::DimensionMismatch { expected: grid, got: qkl.intervals() });
            }
        }
        Ok(Self { zeta, p, q })
    }

    /// Parses coefficient expressions and samples them on an `intervals` grid.
    pub fn from_exprs(intervals: usize, zeta: C64, p: &[&str], q: &[((usize, usize), &str)]) -> Result<Self> {
        let p = p.iter().map(|s| parse(s)?.sample(intervals)).collect::<Result<Vec<_>>>()?;
        let q = q
            .iter()
            .map(|(kl, s)| Ok((*kl, parse(s)?.sample(intervals)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(zeta, p, q)
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn intervals(&self) -> usize {
        self.p[0].intervals()
    }

    pub fn zeta(&self) -> C64 {
        self.zeta
    }

    pub fn p(&self) -> &[ScalarFn] {
        &self.p
    }

    pub fn q(&self, k: usize, l: usize) -> Option<&ScalarFn> {
        self.q.iter().find(|(kl, _)| *kl == (k, l)).map(|(_, f)| f)
    }

    fn q_at(&self, k: usize, l: usize, j: usize) -> C64 {
        self.q(k, l).map_or(C64::new(0.0, 0.0), |f| *f.value(j))
    }

    fn p_at(&self, k: usize, j: usize) -> f64 {
        self.p[k - 1].value(j).re
    }

    /// `sum_m q_mm` at node `j`.
    fn q_trace(&self, j: usize) -> C64 {
        (1..=self.n()).map(|m| self.q_at(m, m, j)).sum()
    }
}

/// `e^{2 pi i k / n}`.
pub fn root_of_unity(n: usize, k: usize) -> C64 {
    C64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64)
}

fn check_lambda(lambda: C64) -> Result<()> {
    if lambda == C64::new(0.0, 0.0) || !lambda.is_finite() {
        return Err(Error::LambdaZero);
    }
    Ok(())
}

/// `D_lambda`: superdiagonal `p_k`, corner `(lambda + zeta)^n p_n - q_n1`,
/// `-q_kl` on the lower band, zero elsewhere.
pub fn build_d(spec: &CompanionSpec, lambda: C64) -> Result<OperatorFn> {
    check_lambda(lambda)?;
    let n = spec.n();
    let corner = (lambda + spec.zeta).powu(n as u32);
    Ok(companion_fn(spec, corner, true))
}

/// `D_lambda,0`: superdiagonal `p_k` and corner `lambda^n p_n`.
pub fn build_d0(spec: &CompanionSpec, lambda: C64) -> Result<OperatorFn> {
    check_lambda(lambda)?;
    Ok(companion_fn(spec, lambda.powu(spec.n() as u32), false))
}

fn companion_fn(spec: &CompanionSpec, corner: C64, with_q: bool) -> OperatorFn {
    let n = spec.n();
    let fill = |j: usize, deriv: bool| {
        let p = |k: usize| if deriv { spec.p[k - 1].deriv().expect("checked")[j] } else { *spec.p[k - 1].value(j) };
        let q = |k: usize, l: usize| match spec.q(k, l) {
            None => C64::new(0.0, 0.0),
            Some(f) if deriv => f.deriv().map_or(C64::new(0.0, 0.0), |d| d[j]),
            Some(f) => *f.value(j),
        };
        let mut m = CMatrix::zeros(n);
        for k in 1..=n {
            for l in 1..=n {
                let v = if l == k + 1 {
                    p(k)
                } else if k == n && l == 1 {
                    corner * p(n) - if with_q { q(n, 1) } else { C64::new(0.0, 0.0) }
                } else if with_q && l + n > k + 1 && l <= k {
                    -q(k, l)
                } else {
                    continue;
                };
                m[(k - 1, l - 1)] = v;
            }
        }
        m
    };
    let grid = spec.intervals();
    let has_deriv = !with_q || spec.q.iter().all(|(_, f)| f.has_analytic_deriv());
    let values = (0..=grid).map(|j| fill(j, false)).collect();
    let deriv = has_deriv.then(|| (0..=grid).map(|j| fill(j, true)).collect());
    OperatorFn::from_samples(values, deriv).expect("finite samples")
}

/// `rho = (prod_m p_m)^{1/n}`, positive real root, with derivative
/// `rho' = rho / n * sum_m p_m' / p_m`.
pub fn amplitude_profile(spec: &CompanionSpec) -> ScalarFn {
    let n = spec.n();
    let grid = spec.intervals();
    let rho: Vec<f64> = (0..=grid)
        .map(|j| (1..=n).map(|k| spec.p_at(k, j).ln()).sum::<f64>() / n as f64)
        .map(f64::exp)
        .collect();
    let pairs = (0..=grid).map(|j| {
        let log_d: f64 = spec.p.iter().map(|pk| pk.deriv().expect("checked")[j].re / pk.value(j).re).sum();
        (C64::new(rho[j], 0.0), C64::new(rho[j] * log_d / n as f64, 0.0))
    });
    let (values, deriv) = pairs.unzip();
    ScalarFn::from_samples(values, Some(deriv)).expect("finite samples")
}

/// `A_lambda = diag(lambda rho omega_k)`.
pub fn build_a_lambda(spec: &CompanionSpec, lambda: C64) -> Result<OperatorFn> {
    check_lambda(lambda)?;
    let n = spec.n();
    let rho = amplitude_profile(spec);
    Ok(rho.map(|_, r| {
        let diag: Vec<C64> = (1..=n).map(|k| lambda * r * root_of_unity(n, k)).collect();
        CMatrix::from_diag(&diag)
    }))
}

/// Closed-form Vandermonde pair `(S, S^-1)` with `S^-1 D_0 S = A_lambda`:
/// `S_lk = a_k^{l-1} / prod_{m<l} p_m`, `(S^-1)_kl = a_k^{1-l} prod_{m<l} p_m / n`.
/// `S` carries its exact derivative `S' = diag(c_l) S` with
/// `c_l = (l-1) rho'/rho - sum_{m<l} p_m'/p_m`.
pub fn build_s_lambda(spec: &CompanionSpec, lambda: C64) -> Result<(OperatorFn, OperatorFn)> {
    check_lambda(lambda)?;
    let n = spec.n();
    let grid = spec.intervals();
    let rho = amplitude_profile(spec);
    let nodes: Vec<(CMatrix, CMatrix, CMatrix)> = (0..=grid)
        .into_par_iter()
        .map(|j| {
            let a: Vec<C64> = (1..=n).map(|k| lambda * rho.value(j) * root_of_unity(n, k)).collect();
            // prefix products prod_{m<l} p_m and logarithmic derivative sums
            let mut prod = vec![1.0; n];
            let mut logd = vec![0.0; n];
            for l in 1..n {
                prod[l] = prod[l - 1] * spec.p_at(l, j);
                logd[l] = logd[l - 1] + spec.p[l - 1].deriv().expect("checked")[j].re / spec.p_at(l, j);
            }
            let rho_log_d = rho.deriv().expect("analytic")[j].re / rho.value(j).re;
            let mut s = CMatrix::zeros(n);
            let mut s_dot = CMatrix::zeros(n);
            let mut s_inv = CMatrix::zeros(n);
            for (k, ak) in a.iter().enumerate() {
                let ak_inv = ak.inv();
                for l in 0..n {
                    let v = ak.powu(l as u32) / prod[l];
                    s[(l, k)] = v;
                    s_dot[(l, k)] = v * (l as f64 * rho_log_d - logd[l]);
                    s_inv[(k, l)] = ak_inv.powu(l as u32) * prod[l] / n as f64;
                }
            }
            (s, s_dot, s_inv)
        })
        .collect();
    let mut s = Vec::with_capacity(grid + 1);
    let mut s_dot = Vec::with_capacity(grid + 1);
    let mut s_inv = Vec::with_capacity(grid + 1);
    for (a, b, c) in nodes {
        s.push(a);
        s_dot.push(b);
        s_inv.push(c);
    }
    Ok((OperatorFn::from_samples(s, Some(s_dot))?, OperatorFn::from_samples(s_inv, None)?))
}

/// The common diagonal entry of `S^-1 S'`: `sum_m (2m - n - 1)/(2n) (ln p_m)'`.
pub fn diag_correction(spec: &CompanionSpec) -> ScalarFn {
    let n = spec.n() as f64;
    let grid = spec.intervals();
    let values = (0..=grid)
        .map(|j| {
            let s: f64 = spec
                .p
                .iter()
                .enumerate()
                .map(|(i, pk)| {
                    let m = (i + 1) as f64;
                    (2.0 * m - n - 1.0) / (2.0 * n) * pk.deriv().expect("checked")[j].re / pk.value(j).re
                })
                .sum();
            C64::new(s, 0.0)
        })
        .collect();
    ScalarFn::from_samples(values, None).expect("finite samples")
}

/// `S^-1 S'` in full; it does not depend on `lambda`.
pub fn s_inv_s_dot(spec: &CompanionSpec) -> OperatorFn {
    let (s, s_inv) = build_s_lambda(spec, C64::new(1.0, 0.0)).expect("lambda = 1 is admissible");
    let s_dot = s.deriv().expect("analytic");
    OperatorFn::from_samples((0..=spec.intervals()).map(|j| s_inv.value(j) * &s_dot[j]).collect(), None)
        .expect("finite samples")
}

/// `G_kl = omega_k` and `(F_m)_kl = e^{2 pi i (l-k)(m-1)/n} / n`.
pub fn gf_matrices(n: usize) -> (CMatrix, Vec<CMatrix>) {
    let mut g = CMatrix::zeros(n);
    for k in 0..n {
        for l in 0..n {
            g[(k, l)] = root_of_unity(n, k + 1);
        }
    }
    let f = (1..=n)
        .map(|m| {
            let mut fm = CMatrix::zeros(n);
            for k in 0..n {
                for l in 0..n {
                    let phase = 2.0 * PI * ((l as f64 - k as f64) * (m as f64 - 1.0)) / n as f64;
                    fm[(k, l)] = C64::from_polar(1.0 / n as f64, phase);
                }
            }
            fm
        })
        .collect();
    (g, f)
}

/// `|S^-1 (D - D_0) S - zeta rho G + sum_m q_mm F_m|_L1`, which is `O(1/|lambda|)`.
pub fn residual_check(spec: &CompanionSpec, lambda: C64) -> Result<f64> {
    let d = build_d(spec, lambda)?;
    let d0 = build_d0(spec, lambda)?;
    let (s, s_inv) = build_s_lambda(spec, lambda)?;
    let rho = amplitude_profile(spec);
    let n = spec.n();
    let (g, f) = gf_matrices(n);
    let res: Vec<CMatrix> = (0..=spec.intervals())
        .into_par_iter()
        .map(|j| {
            let mut r = &(s_inv.value(j) * &(d.value(j) - d0.value(j))) * s.value(j);
            r -= &g.scale(spec.zeta * rho.value(j));
            for (m, fm) in f.iter().enumerate() {
                r += &fm.scale(spec.q_at(m + 1, m + 1, j));
            }
            r
        })
        .collect();
    Ok(OperatorFn::from_samples(res, None)?.norm_l1())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorContext {
    /// Sector index `m` in `1..=2n`.
    pub m: usize,
    pub n: usize,
    /// Root indices `k` (1-based) in ascending order of `Re(e^{i mid} omega_k)`.
    pub tau: Vec<usize>,
    pub midpoint_arg: f64,
}

impl SectorContext {
    /// Open sector `Arg lambda in ((m-1) pi/n, m pi/n)`.
    pub fn contains(&self, lambda: C64) -> bool {
        if lambda == C64::new(0.0, 0.0) {
            return false;
        }
        let arg = lambda.arg().rem_euclid(2.0 * PI);
        let lo = PI * (self.m as f64 - 1.0) / self.n as f64;
        let hi = PI * self.m as f64 / self.n as f64;
        arg > lo && arg < hi
    }

    pub fn direction(&self) -> C64 {
        C64::from_polar(1.0, self.midpoint_arg)
    }

    /// Position of root `k` in the ordering.
    pub fn position(&self, k: usize) -> usize {
        self.tau.iter().position(|&x| x == k).expect("k in 1..=n")
    }

    /// `P0` on coordinate `k`, `P-` on roots ordered before it, `P+` on those after.
    pub fn partition_for_root(&self, k: usize) -> Partition {
        let pos = self.position(k);
        let mut blocks = vec![Block::Zero; self.n];
        for (i, &r) in self.tau.iter().enumerate() {
            blocks[r - 1] = match i.cmp(&pos) {
                std::cmp::Ordering::Less => Block::Minus,
                std::cmp::Ordering::Equal => Block::Zero,
                std::cmp::Ordering::Greater => Block::Plus,
            };
        }
        Partition::from_blocks(blocks)
    }
}

pub fn sector_permutation(n: usize, m: usize) -> Result<SectorContext> {
    if n < 2 || !(1..=2 * n).contains(&m) {
        return Err(Error::InvalidParameter(format!("sector {m} invalid for order {n}")));
    }
    let mid = (2.0 * m as f64 - 1.0) * PI / (2.0 * n as f64);
    let dir = C64::from_polar(1.0, mid);
    let key = |k: usize| (dir * root_of_unity(n, k)).re;
    let mut tau: Vec<usize> = (1..=n).collect();
    tau.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    debug_assert!(tau.windows(2).all(|w| key(w[1]) - key(w[0]) > 1e-12));
    Ok(SectorContext { m, n, tau, midpoint_arg: mid })
}

fn check_sector(spec: &CompanionSpec, sector: &SectorContext, lambda: C64) -> Result<()> {
    check_lambda(lambda)?;
    if sector.n != spec.n() {
        return Err(Error::DimensionMismatch { expected: spec.n(), got: sector.n });
    }
    if !sector.contains(lambda) {
        return Err(Error::LambdaOutsideSector { arg: lambda.arg(), sector: sector.m });
    }
    Ok(())
}

/// Family `lambda rho sum_k omega_k E_kk + V` along the sector's midpoint ray,
/// with `V = zeta rho G - sum_m q_mm F_m - S^-1 S'` the part of the transformed
/// system that stays bounded. Profiles are rescaled to unit separation; the
/// magnitudes are rescaled to match.
pub fn sector_family(spec: &CompanionSpec, sector: &SectorContext, magnitudes: &[f64]) -> Result<ParamFamily> {
    let n = spec.n();
    let rho = amplitude_profile(spec);
    let rho_min = rho.values().iter().map(|r| r.re).fold(f64::INFINITY, f64::min);
    let scale = rho_min * 2.0 * (PI / n as f64).sin();
    let blocks = sector.tau.iter().map(|&k| vec![k - 1]).collect();
    let profiles = sector
        .tau
        .iter()
        .map(|&k| {
            let w = root_of_unity(n, k) / scale;
            rho.map_with_deriv(|_, r, dr| (r * w, dr * w)).expect("analytic")
        })
        .collect();
    let (g, f) = gf_matrices(n);
    let ssd = s_inv_s_dot(spec);
    let v: Vec<CMatrix> = (0..=spec.intervals())
        .map(|j| {
            let mut m = g.scale(spec.zeta * rho.value(j));
            for (i, fm) in f.iter().enumerate() {
                m -= &fm.scale(spec.q_at(i + 1, i + 1, j));
            }
            &m - ssd.value(j)
        })
        .collect();
    let mags = magnitudes.iter().map(|m| m * scale).collect();
    ParamFamily::new(blocks, profiles, OperatorFn::from_samples(v, None)?, sector.direction(), mags)
}

#[derive(Debug, Clone)]
pub struct BirkhoffSolution {
    /// Leading term in the `y` coordinates of the transformed system.
    pub y: VectorFn,
    /// `S_lambda y`.
    pub x: VectorFn,
}

/// `prod_l p_l^{(n - 2l + 1)/(2n)}`.
fn birkhoff_amplitude(spec: &CompanionSpec, j: usize) -> f64 {
    let n = spec.n() as f64;
    spec.p
        .iter()
        .enumerate()
        .map(|(i, pk)| ((n - 2.0 * (i + 1) as f64 + 1.0) / (2.0 * n)) * pk.value(j).re.ln())
        .sum::<f64>()
        .exp()
}

/// `(lambda + zeta) rho omega_k - (1/n) sum_l q_ll` at every node.
fn birkhoff_rate(spec: &CompanionSpec, lambda: C64, k: usize) -> Vec<C64> {
    let n = spec.n();
    let rho = amplitude_profile(spec);
    let w = root_of_unity(n, k);
    (0..=spec.intervals())
        .map(|j| (lambda + spec.zeta) * rho.value(j) * w - spec.q_trace(j) / n as f64)
        .collect()
}

/// Leading term of the Birkhoff solution `y_{m,k,lambda}` (the `o(1)` part dropped).
pub fn birkhoff_solution(spec: &CompanionSpec, lambda: C64, k: usize, sector: &SectorContext) -> Result<BirkhoffSolution> {
    check_sector(spec, sector, lambda)?;
    let n = spec.n();
    if !(1..=n).contains(&k) {
        return Err(Error::InvalidParameter(format!("root index {k} outside 1..={n}")));
    }
    let grid = spec.intervals();
    let phase = cumulative_quad4(&birkhoff_rate(spec, lambda, k), 1.0 / grid as f64);
    let e = CVector::unit(n, k - 1);
    let y: Vec<CVector> = (0..=grid).map(|j| e.scale(birkhoff_amplitude(spec, j) * phase[j].exp())).collect();
    let (s, _) = build_s_lambda(spec, lambda)?;
    let x = (0..=grid).map(|j| s.value(j) * &y[j]).collect();
    Ok(BirkhoffSolution { y: VectorFn::from_samples(y, None)?, x: VectorFn::from_samples(x, None)? })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRow {
    pub magnitude: f64,
    pub rel_sup_error: f64,
    /// `|lambda| * residual_check`.
    pub scaled_residual: f64,
}

/// For each magnitude along the sector's midpoint ray, solves the transformed
/// system `S^-1 D S - S^-1 S'` with the boundary condition of `side` around
/// root `k`, rescales the solution to agree with the Birkhoff leading term in
/// the `k`-th component at `t = 0` (left) or `t = 1` (right), and records the
/// relative sup error.
///
/// Both solutions are computed after removing the scalar exponential rate,
/// which leaves the relative error unchanged.
pub fn verify_asymptotics(
    spec: &CompanionSpec,
    sector: &SectorContext,
    magnitudes: &[f64],
    k: usize,
    side: Side,
) -> Result<Vec<DecayRow>> {
    let n = spec.n();
    if !(1..=n).contains(&k) {
        return Err(Error::InvalidParameter(format!("root index {k} outside 1..={n}")));
    }
    if magnitudes.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidParameter("magnitudes must be positive".into()));
    }
    let partition = sector.partition_for_root(k);
    let grid = spec.intervals();
    let amp: Vec<f64> = (0..=grid).map(|j| birkhoff_amplitude(spec, j)).collect();
    magnitudes
        .par_iter()
        .map(|&mag| {
            let lambda = mag * sector.direction();
            check_sector(spec, sector, lambda)?;
            let (s, s_inv) = build_s_lambda(spec, lambda)?;
            let d = build_d(spec, lambda)?;
            let (transformed, _) = conjugate(&s, &s_inv, &d, None)?;
            let rate = birkhoff_rate(spec, lambda, k);
            let id = CMatrix::identity(n);
            let shifted = transformed.map(|j, m| m - &id.scale(rate[j]));
            let model = partition.delta_fn(&shifted)?;
            let xi = CVector::unit(n, k - 1);
            let x = compare_systems(&shifted, &model, &partition, &xi, side)?.x;
            let anchor = if side == Side::Left { 0 } else { grid };
            let c = amp[anchor] / x.value(anchor)[k - 1];
            let rel_sup_error = (0..=grid)
                .map(|j| {
                    let mut diff = x.value(j).scale(c);
                    diff[k - 1] -= amp[j];
                    diff.norm() / amp[j]
                })
                .fold(0.0, f64::max);
            Ok(DecayRow { magnitude: mag, rel_sup_error, scaled_residual: mag * residual_check(spec, lambda)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asympt::check_conditions;
    use crate::linalg::{inverse, op_norm};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn trivial(n_grid: usize) -> CompanionSpec {
        CompanionSpec::from_exprs(n_grid, c(0.0, 0.0), &["1", "1"], &[]).unwrap()
    }

    fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).max_abs()
    }

    #[test]
    fn spec_validation() {
        assert!(CompanionSpec::from_exprs(64, c(0.0, 0.0), &["1"], &[]).is_err());
        assert!(CompanionSpec::from_exprs(64, c(0.0, 0.0), &["1", "t - 0.5"], &[]).is_err());
        assert!(CompanionSpec::from_exprs(64, c(0.0, 0.0), &["1", "(1, 1)"], &[]).is_err());
        assert!(CompanionSpec::from_exprs(64, c(0.0, 0.0), &["1", "1"], &[((1, 2), "1")]).is_err());
        assert!(CompanionSpec::from_exprs(64, c(0.0, 0.0), &["1", "1"], &[((2, 1), "t")]).is_ok());
    }

    #[test]
    fn companion_entries() {
        let spec = trivial(64);
        let lam = c(1.5, -0.5);
        let d = build_d(&spec, lam).unwrap();
        let want = CMatrix::from_rows(2, vec![c(0.0, 0.0), c(1.0, 0.0), lam * lam, c(0.0, 0.0)]);
        assert!(max_diff(d.value(7), &want) < 1e-15);
        assert!(max_diff(build_d0(&spec, lam).unwrap().value(7), &want) < 1e-15);
        assert!(matches!(build_d(&spec, c(0.0, 0.0)), Err(Error::LambdaZero)));

        let spec = CompanionSpec::from_exprs(64, c(1.0, 0.0), &["1", "1"], &[((2, 1), "0.25")]).unwrap();
        let diff = build_d(&spec, lam).unwrap().sub(&build_d0(&spec, lam).unwrap());
        let corner = 2.0 * lam + 1.0 - 0.25;
        assert!((diff.value(3)[(1, 0)] - corner).norm() < 1e-13);
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            assert_eq!(diff.value(3)[(i, j)], c(0.0, 0.0));
        }
    }

    #[test]
    fn band_structure_order_three() {
        let q = [((1, 1), "t"), ((2, 1), "sin(t)"), ((2, 2), "2"), ((3, 2), "cos(t)"), ((3, 3), "t^2"), ((3, 1), "0.5")];
        let spec = CompanionSpec::from_exprs(64, c(0.2, 0.1), &["1+t", "2", "exp(t)"], &q).unwrap();
        let lam = c(3.0, 4.0);
        let diff = build_d(&spec, lam).unwrap().sub(&build_d0(&spec, lam).unwrap());
        for j in [0, 17, 64] {
            let m = diff.value(j);
            for k in 1..=3usize {
                for l in 1..=3usize {
                    let in_band = l <= k;
                    if !in_band {
                        assert_eq!(m[(k - 1, l - 1)], c(0.0, 0.0));
                    }
                }
            }
            let t = j as f64 / 64.0;
            assert!((m[(1, 0)] + t.sin()).norm() < 1e-14);
            let corner = ((lam + c(0.2, 0.1)).powu(3) - lam.powu(3)) * t.exp() - 0.5;
            assert!((m[(2, 0)] - corner).norm() < 1e-10 * corner.norm());
        }
    }

    #[test]
    fn amplitude_values() {
        let rho = amplitude_profile(&trivial(64));
        assert!(rho.values().iter().all(|r| (r - 1.0).norm() < 1e-15));
        let spec = CompanionSpec::from_exprs(64, c(0.0, 0.0), &["4", "1"], &[]).unwrap();
        assert!(amplitude_profile(&spec).values().iter().all(|r| (r - 2.0).norm() < 1e-14));
        let spec = CompanionSpec::from_exprs(64, c(0.0, 0.0), &["1+t^2", "exp(sin(3*t))", "2+cos(t)"], &[]).unwrap();
        let rho = amplitude_profile(&spec);
        for j in 0..=64 {
            let prod: f64 = spec.p.iter().map(|p| p.value(j).re).product();
            assert!((rho.value(j).re.powi(3) - prod).abs() < 1e-12 * prod);
        }
    }

    #[test]
    fn vandermonde_diagonalization() {
        let spec = trivial(64);
        let lam = c(2.0, 0.0);
        let a = build_a_lambda(&spec, lam).unwrap();
        assert!(max_diff(a.value(0), &CMatrix::from_diag(&[c(-2.0, 0.0), c(2.0, 0.0)])) < 1e-14);
        let (s, _) = build_s_lambda(&spec, lam).unwrap();
        let want = CMatrix::from_rows(2, vec![c(1.0, 0.0), c(1.0, 0.0), c(-2.0, 0.0), c(2.0, 0.0)]);
        assert!(max_diff(s.value(5), &want) < 1e-14);

        let spec = CompanionSpec::from_exprs(64, c(0.3, 0.0), &["1+t^2", "exp(sin(3*t))", "2+cos(t)"], &[]).unwrap();
        for lam in [c(0.7, 0.2), c(-5.0, 12.0), c(30.0, -1.0)] {
            let (s, s_inv) = build_s_lambda(&spec, lam).unwrap();
            let d0 = build_d0(&spec, lam).unwrap();
            let a = build_a_lambda(&spec, lam).unwrap();
            for j in [0, 9, 31, 50, 64] {
                let conj = &(s_inv.value(j) * d0.value(j)) * s.value(j);
                let r = op_norm(&(&conj - a.value(j))).unwrap() / op_norm(d0.value(j)).unwrap();
                assert!(r <= 1e-10, "{r}");
                let id = s_inv.value(j) * s.value(j);
                assert!(max_diff(&id, &CMatrix::identity(3)) <= 1e-12);
                let oracle = inverse(s.value(j)).unwrap();
                assert!(max_diff(&oracle, s_inv.value(j)) <= 1e-10 * oracle.max_abs());
            }
        }
    }

    #[test]
    fn correction_matches_numerical_derivative() {
        let spec = CompanionSpec::from_exprs(256, c(0.0, 0.0), &["1+t^2/2", "exp(t)", "2+sin(2*t)"], &[]).unwrap();
        let corr = diag_correction(&spec);
        for lam in [c(3.0, 1.0), c(-20.0, 7.0)] {
            let (s, s_inv) = build_s_lambda(&spec, lam).unwrap();
            let h = 1.0 / 256.0;
            let sv = s.values();
            for j in 2..=254 {
                // five-point stencil
                let fd = (&(&sv[j - 2] - &sv[j + 2]) + &(&sv[j + 1] - &sv[j - 1]).scale_re(8.0)).scale_re(1.0 / (12.0 * h));
                let m = s_inv.value(j) * &fd;
                for k in 0..3 {
                    let v = m[(k, k)];
                    assert!((v - corr.value(j)).norm() <= 1e-6, "{j} {v} {}", corr.value(j));
                }
            }
        }
        // the exact derivative gives lambda-independent diagonals
        let ssd = s_inv_s_dot(&spec);
        for lam in [c(3.0, 1.0), c(-20.0, 7.0)] {
            let (s, s_inv) = build_s_lambda(&spec, lam).unwrap();
            for j in [0, 100, 256] {
                let m = s_inv.value(j) * &s.deriv().unwrap()[j];
                assert!(max_diff(&m, ssd.value(j)) <= 1e-8);
                for k in 0..3 {
                    assert!((m[(k, k)] - corr.value(j)).norm() <= 1e-12);
                }
            }
        }

        let spec = CompanionSpec::from_exprs(64, c(0.0, 0.0), &["exp(t)", "1"], &[]).unwrap();
        assert!(diag_correction(&spec).values().iter().all(|v| (v + 0.25).norm() < 1e-14));
        assert!(diag_correction(&trivial(64)).values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn gf_structure() {
        let (g, f) = gf_matrices(2);
        let want_g = CMatrix::from_real_rows(&[&[-1.0, -1.0], &[1.0, 1.0]]);
        assert!(max_diff(&g, &want_g) < 1e-15);
        assert!(max_diff(&f[0], &CMatrix::from_real_rows(&[&[0.5, 0.5], &[0.5, 0.5]])) < 1e-15);
        assert!(max_diff(&f[1], &CMatrix::from_real_rows(&[&[0.5, -0.5], &[-0.5, 0.5]])) < 1e-15);
        for n in 2..=6 {
            let (_, f) = gf_matrices(n);
            let mut sum = CMatrix::zeros(n);
            for (a, fa) in f.iter().enumerate() {
                sum += fa;
                assert!(max_diff(&(fa * fa), fa) < 1e-12);
                assert!(max_diff(&fa.adjoint(), fa) < 1e-12);
                assert!((crate::linalg::trace(fa) - 1.0).norm() < 1e-12);
                for fb in &f[a + 1..] {
                    assert!((fa * fb).max_abs() < 1e-12);
                }
            }
            assert!(max_diff(&sum, &CMatrix::identity(n)) < 1e-12);
        }
    }

    #[test]
    fn residual_decays_like_inverse_lambda() {
        assert!(residual_check(&trivial(64), c(0.0, 10.0)).unwrap() <= 1e-10);
        let spec = CompanionSpec::from_exprs(128, c(1.0, 0.0), &["1", "1"], &[]).unwrap();
        let r20 = residual_check(&spec, c(0.0, 20.0)).unwrap();
        let r40 = residual_check(&spec, c(0.0, 40.0)).unwrap();
        assert!(r40 <= 0.6 * r20, "{r20} {r40}");

        let q = [((1, 1), "cos(t)"), ((2, 1), "t"), ((2, 2), "1+t"), ((3, 2), "sin(3*t)"), ((3, 3), "2"), ((3, 1), "t^2")];
        let spec = CompanionSpec::from_exprs(128, c(0.4, -0.2), &["1+t", "2-t", "exp(t/2)"], &q).unwrap();
        let dir = C64::from_polar(1.0, 0.4);
        let scaled: Vec<f64> =
            [10.0, 20.0, 40.0, 80.0, 160.0].iter().map(|m| m * residual_check(&spec, dir * *m).unwrap()).collect();
        for w in scaled.windows(2) {
            let r = w[1] / w[0];
            assert!((1.0 / 3.0..=3.0).contains(&r), "{scaled:?}");
        }
    }

    #[test]
    fn sector_orderings() {
        assert_eq!(sector_permutation(2, 1).unwrap().tau, vec![1, 2]);
        assert_eq!(sector_permutation(2, 3).unwrap().tau, vec![2, 1]);
        assert!(sector_permutation(2, 5).is_err());
        let s = sector_permutation(3, 2).unwrap();
        assert!(s.contains(C64::from_polar(5.0, s.midpoint_arg)));
        assert!(!s.contains(C64::from_polar(5.0, s.midpoint_arg + PI / 2.0)));

        let spec_for = |n: usize| {
            let p: Vec<String> = (0..n).map(|i| format!("1+{}*t^2", 0.1 * i as f64)).collect();
            let p: Vec<&str> = p.iter().map(String::as_str).collect();
            CompanionSpec::from_exprs(64, c(0.0, 0.0), &p, &[]).unwrap()
        };
        for n in 2..=4 {
            let spec = spec_for(n);
            for m in 1..=2 * n {
                let sector = sector_permutation(n, m).unwrap();
                let fam = sector_family(&spec, &sector, &[5.0, 10.0]).unwrap();
                let report = check_conditions(&fam, (-1.0f64).exp()).unwrap();
                assert!(report.all_hold(), "n={n} m={m}");
                assert_eq!(report.worst(), 0.0);
            }
        }
    }

    #[test]
    fn birkhoff_closed_forms() {
        let spec = trivial(256);
        let sector = sector_permutation(2, 1).unwrap();
        let lam = C64::from_polar(3.0, PI / 4.0);
        for (k, sign) in [(2usize, 1.0), (1, -1.0)] {
            let b = birkhoff_solution(&spec, lam, k, &sector).unwrap();
            for j in [0, 100, 256] {
                let t = j as f64 / 256.0;
                let want = (sign * lam * t).exp();
                assert!((b.y.value(j)[k - 1] - want).norm() <= 1e-12 * want.norm());
                assert_eq!(b.y.value(j)[2 - k], c(0.0, 0.0));
            }
        }
        assert!(matches!(
            birkhoff_solution(&spec, C64::from_polar(3.0, 3.0), 1, &sector),
            Err(Error::LambdaOutsideSector { .. })
        ));

        let spec = CompanionSpec::from_exprs(1024, c(0.0, 0.0), &["exp(t)", "exp(t)"], &[]).unwrap();
        let lam = C64::from_polar(10.0, PI / 4.0);
        for (k, sign) in [(2usize, 1.0), (1, -1.0)] {
            let b = birkhoff_solution(&spec, lam, k, &sector).unwrap();
            for j in (0..=1024).step_by(64) {
                let t = j as f64 / 1024.0;
                let want = (sign * lam * (t.exp() - 1.0)).exp();
                assert!((b.y.value(j)[k - 1] - want).norm() <= 1e-8 * want.norm());
            }
        }
    }

    #[test]
    fn trivial_spec_is_exact() {
        let spec = trivial(128);
        for m in [1, 2, 3] {
            let sector = sector_permutation(2, m).unwrap();
            for k in 1..=2 {
                for side in [Side::Left, Side::Right] {
                    let rows = verify_asymptotics(&spec, &sector, &[10.0, 20.0], k, side).unwrap();
                    assert!(rows.iter().all(|r| r.rel_sup_error <= 1e-6), "{rows:?}");
                }
            }
        }
    }

    #[test]
    fn decay_for_smooth_spec() {
        let spec = CompanionSpec::from_exprs(512, c(0.3, 0.0), &["1+t^2/2", "1"], &[((1, 1), "cos(2*3.141592653589793*t)")])
            .unwrap();
        let sector = sector_permutation(2, 1).unwrap();
        for (k, side) in [(1, Side::Left), (2, Side::Left), (1, Side::Right), (2, Side::Right)] {
            let rows = verify_asymptotics(&spec, &sector, &[10.0, 20.0, 40.0, 80.0], k, side).unwrap();
            for w in rows.windows(2) {
                assert!(w[1].rel_sup_error < w[0].rel_sup_error, "{rows:?}");
                assert!(w[1].rel_sup_error <= 0.7 * w[0].rel_sup_error, "{rows:?}");
            }
        }
    }
}
