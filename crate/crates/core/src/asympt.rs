//! Families `A = sum_k d h_k P_k + V` with a growing scalar `d`, comparison of
//! their boundary-value solutions against the block-diagonal model, and the
//! frames that certify the comparison.
//!
//! Every comparison is carried out on the shifted system `A - d h_k`. The
//! shift multiplies both solutions by the same scalar function, so relative
//! errors are unaffected, and it keeps the integration well scaled.

use rayon::prelude::*;

use crate::bvp::{max_subinterval_integral, solve_direct, BvpProblem};
use crate::error::{Error, Result};
use crate::frame::{
    build_transformer, kappa, Atom, Block, Partition, PiFrame, SpectralAtoms, TransformerBundle, TransformerOptions,
};
use crate::gridfn::{trapezoid, OperatorFn, ScalarFn, VectorFn};
use crate::linalg::{omega_unchecked, op_norm_unchecked, CMatrix, CVector, C64};

pub const DEFAULT_WIDTH: f64 = 1.0 / 64.0;
pub const MIN_WIDTH: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone)]
pub struct ParamFamily {
    /// Zero-based coordinate sets of `P_1 .. P_m`.
    blocks: Vec<Vec<usize>>,
    profiles: Vec<ScalarFn>,
    v: OperatorFn,
    direction: C64,
    magnitudes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `(P0 + P-) x(0) + P+ x(1) = xi`.
    Left,
    /// `P- x(0) + (P0 + P+) x(1) = xi`.
    Right,
}

impl ParamFamily {
    pub fn new(
        blocks: Vec<Vec<usize>>,
        profiles: Vec<ScalarFn>,
        v: OperatorFn,
        direction: C64,
        magnitudes: Vec<f64>,
    ) -> Result<Self> {
        let dim = v.first().dim();
        if blocks.len() != profiles.len() || blocks.is_empty() {
            return Err(Error::InvalidInput("need one profile per block".into()));
        }
        let mut seen = vec![false; dim];
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::InvalidInput("blocks must be nonempty".into()));
            }
            for &i in b {
                if i >= dim || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidInput(format!("block index {i} out of range or repeated")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput("blocks must cover every coordinate".into()));
        }
        for h in &profiles {
            if h.intervals() != v.intervals() {
                return Err(Error::DimensionMismatch { expected: v.intervals(), got: h.intervals() });
            }
        }
        if (direction.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("direction must have unit modulus".into()));
        }
        if magnitudes.is_empty()
            || magnitudes[0] <= 0.0
            || magnitudes.windows(2).any(|w| w[1] <= w[0])
            || magnitudes.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidParameter("magnitudes must be positive and strictly increasing".into()));
        }
        let fam = Self { blocks, profiles, v, direction, magnitudes };
        let sep = fam.min_separation();
        if sep < 1.0 - 1e-12 {
            return Err(Error::ContractViolation(format!("profiles are only {sep:.6} apart; need at least 1")));
        }
        Ok(fam)
    }

    pub fn dim(&self) -> usize {
        self.v.first().dim()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn intervals(&self) -> usize {
        self.v.intervals()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn profiles(&self) -> &[ScalarFn] {
        &self.profiles
    }

    pub fn v(&self) -> &OperatorFn {
        &self.v
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn direction(&self) -> C64 {
        self.direction
    }

    pub fn d(&self, nu: usize) -> C64 {
        self.magnitudes[nu] * self.direction
    }

    fn check_nu(&self, nu: usize) -> Result<()> {
        if nu >= self.magnitudes.len() {
            return Err(Error::InvalidParameter(format!("magnitude index {nu} out of range")));
        }
        Ok(())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k >= self.blocks.len() {
            return Err(Error::InvalidParameter(format!("block index {k} out of range")));
        }
        Ok(())
    }

    /// Smallest `|h_k(t) - h_l(t)|` over nodes and pairs.
    pub fn min_separation(&self) -> f64 {
        min_pair_gap(&self.profiles)
    }

    /// The family with blocks reordered by ascending mean of `Re(d h_k)`.
    pub fn sorted_by_real_part(&self) -> Self {
        let mut order: Vec<usize> = (0..self.blocks.len()).collect();
        let key = |k: usize| self.profiles[k].values().iter().map(|h| (self.direction * h).re).sum::<f64>();
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
        Self {
            blocks: order.iter().map(|&k| self.blocks[k].clone()).collect(),
            profiles: order.iter().map(|&k| self.profiles[k].clone()).collect(),
            v: self.v.clone(),
            direction: self.direction,
            magnitudes: self.magnitudes.clone(),
        }
    }

    /// `P0 = P_k`, `P- = sum_{l<k} P_l`, `P+ = sum_{l>k} P_l`.
    pub fn partition_for_index(&self, k: usize) -> Result<Partition> {
        self.check_k(k)?;
        let mut block_of = vec![Block::Zero; self.dim()];
        for (l, b) in self.blocks.iter().enumerate() {
            let tag = match l.cmp(&k) {
                std::cmp::Ordering::Less => Block::Minus,
                std::cmp::Ordering::Equal => Block::Zero,
                std::cmp::Ordering::Greater => Block::Plus,
            };
            for &i in b {
                block_of[i] = tag;
            }
        }
        Ok(Partition::from_blocks(block_of))
    }

    /// Nodewise `sum_k d h_k P_k + shift`, with derivative samples when every profile has them.
    fn block_scalar(&self, d: C64, shift: Option<&ScalarFn>) -> OperatorFn {
        let dim = self.dim();
        let n = self.intervals();
        let all_deriv = self.profiles.iter().all(ScalarFn::has_analytic_deriv) && shift.is_none_or(|s| s.has_analytic_deriv());
        let build = |pick: &dyn Fn(&ScalarFn) -> C64| {
            let mut diag = vec![C64::new(0.0, 0.0); dim];
            let s = shift.map_or(C64::new(0.0, 0.0), pick);
            for (b, h) in self.blocks.iter().zip(&self.profiles) {
                let v = d * (pick(h) - s);
                for &i in b {
                    diag[i] = v;
                }
            }
            CMatrix::from_diag(&diag)
        };
        let values: Vec<CMatrix> = (0..=n).map(|j| build(&|f: &ScalarFn| *f.value(j))).collect();
        let deriv = all_deriv.then(|| (0..=n).map(|j| build(&|f: &ScalarFn| f.deriv().expect("checked")[j])).collect());
        OperatorFn::from_samples(values, deriv).expect("finite samples")
    }
}

fn min_pair_gap(profiles: &[ScalarFn]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..profiles.len() {
        for b in a + 1..profiles.len() {
            for (x, y) in profiles[a].values().iter().zip(profiles[b].values()) {
                best = best.min((x - y).norm());
            }
        }
    }
    best
}

/// `A_nu = sum_k d_nu h_k P_k + V`.
pub fn assemble(fam: &ParamFamily, nu: usize) -> Result<OperatorFn> {
    fam.check_nu(nu)?;
    Ok(fam.block_scalar(fam.d(nu), None).add(&fam.v))
}

/// `A_nu - d_nu h_k`.
pub fn assemble_shifted(fam: &ParamFamily, nu: usize, k: usize) -> Result<OperatorFn> {
    fam.check_nu(nu)?;
    fam.check_k(k)?;
    Ok(fam.block_scalar(fam.d(nu), Some(&fam.profiles[k])).add(&fam.v))
}

/// Full block model: `V` reduced to its `P_k V P_k` blocks.
pub fn diagonal_model(fam: &ParamFamily, nu: usize) -> Result<OperatorFn> {
    let mut tags = vec![0usize; fam.dim()];
    for (l, b) in fam.blocks.iter().enumerate() {
        for &i in b {
            tags[i] = l;
        }
    }
    let strip = |m: &CMatrix| {
        let mut out = m.clone();
        for i in 0..m.dim() {
            for j in 0..m.dim() {
                if tags[i] != tags[j] {
                    out[(i, j)] = C64::new(0.0, 0.0);
                }
            }
        }
        out
    };
    let a = assemble(fam, nu)?;
    Ok(a.map_with_deriv(|_, v, d| (strip(v), strip(d))).unwrap_or_else(|| a.map(|_, v| strip(v))))
}

/// Three-block model `Delta(A_nu)` for the splitting around index `k`.
pub fn diagonal_model_for_index(fam: &ParamFamily, nu: usize, k: usize) -> Result<OperatorFn> {
    fam.partition_for_index(k)?.delta_fn(&assemble(fam, nu)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairCondition {
    pub nu: usize,
    pub k: usize,
    pub l: usize,
    /// Largest `int_a^b Re[d (h_k - h_l)]` over subintervals.
    pub worst: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionsReport {
    pub min_separation: f64,
    pub separation_holds: bool,
    pub pairs: Vec<PairCondition>,
}

impl ConditionsReport {
    pub fn all_hold(&self) -> bool {
        self.separation_holds && self.pairs.iter().all(|p| p.holds)
    }

    pub fn worst(&self) -> f64 {
        self.pairs.iter().map(|p| p.worst).fold(0.0, f64::max)
    }
}

/// Separation `|h_k - h_l| >= 1` and, for `k < l` and every magnitude,
/// `int_a^b Re[d (h_k - h_l)] <= -ln gamma` on all subintervals.
pub fn check_conditions(fam: &ParamFamily, gamma: f64) -> Result<ConditionsReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} outside (0, 1)")));
    }
    let limit = -gamma.ln();
    let h = fam.v.step();
    let m = fam.block_count();
    let mut pairs = Vec::new();
    for nu in 0..fam.magnitudes.len() {
        let d = fam.d(nu);
        for k in 0..m {
            for l in k + 1..m {
                let prof: Vec<f64> = fam.profiles[k]
                    .values()
                    .iter()
                    .zip(fam.profiles[l].values())
                    .map(|(a, b)| (d * (a - b)).re)
                    .collect();
                let worst = max_subinterval_integral(&prof, h);
                pairs.push(PairCondition { nu, k, l, worst, holds: worst <= limit });
            }
        }
    }
    let sep = fam.min_separation();
    Ok(ConditionsReport { min_separation: sep, separation_holds: sep >= 1.0 - 1e-12, pairs })
}

/// Smoothing widths and transformer settings for the frame construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameBudget {
    pub width_v: f64,
    pub width_h: f64,
    pub min_width: f64,
    pub transformer: TransformerOptions,
}

impl Default for FrameBudget {
    fn default() -> Self {
        Self { width_v: DEFAULT_WIDTH, width_h: DEFAULT_WIDTH, min_width: MIN_WIDTH, transformer: TransformerOptions::default() }
    }
}

/// Measured quantities of a constructed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMeasures {
    /// Width actually used for the profiles after halving.
    pub width_h: f64,
    /// `min |g_l - g_s|` of the smoothed profiles.
    pub separation: f64,
    /// `|C'|_L1`.
    pub alpha: f64,
    /// `max_l |g_l'|_L1`.
    pub beta: f64,
    /// `|V - C|_L1`.
    pub v_error: f64,
    /// Largest of the four normalized frame quantities.
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct FrameBuild {
    pub frame: PiFrame,
    /// `A_nu - d_nu h_k`.
    pub shifted: OperatorFn,
    /// `Delta(shifted)`.
    pub shifted_model: OperatorFn,
    pub measures: FrameMeasures,
}

/// Frame `{B, C}` for the shifted system around block `k`: `g_l` are the
/// smoothed profiles, `B = sum_l d (g_l - g_k) P_l`, and `C` is `V` smoothed
/// to vanish at the ends.
pub fn build_frame_for_index(fam: &ParamFamily, nu: usize, k: usize, budget: &FrameBudget) -> Result<FrameBuild> {
    fam.check_nu(nu)?;
    let partition = fam.partition_for_index(k)?;
    if !(budget.min_width > 0.0 && budget.min_width <= budget.width_h) {
        return Err(Error::InvalidParameter("min_width must lie in (0, width_h]".into()));
    }
    let mut w = budget.width_h;
    let g = loop {
        let g: Vec<ScalarFn> = fam.profiles.iter().map(|h| h.mollify(w, false)).collect::<Result<_>>()?;
        let sep = min_pair_gap(&g);
        if sep >= 0.5 || fam.block_count() == 1 {
            break g;
        }
        if w / 2.0 < budget.min_width {
            return Err(Error::SeparationDestroyed { gap: sep, width: w });
        }
        w /= 2.0;
    };
    let separation = min_pair_gap(&g);
    let d = fam.d(nu);
    let atoms: Vec<Atom> = fam
        .blocks
        .iter()
        .enumerate()
        .map(|(l, idx)| {
            let beta = g[l]
                .map_with_deriv(|j, v, dv| (d * (v - g[k].value(j)), d * (dv - g[k].deriv().expect("mollified")[j])))
                .expect("mollified profiles carry derivatives");
            Atom { beta, indices: idx.clone() }
        })
        .collect();
    let atoms = SpectralAtoms::new(&partition, atoms)?;
    let c = fam.v.mollify(budget.width_v, true)?;
    let frame = PiFrame::new_unchecked(partition, atoms, c)?;
    let limit = frame.smallness_limit();
    let c_norm = frame.c.norm_c();
    if c_norm >= limit {
        let mag = fam.magnitudes[nu];
        return Err(Error::MagnitudeTooSmall { magnitude: mag, required: mag * c_norm / limit });
    }
    let shifted = assemble_shifted(fam, nu, k)?;
    let shifted_model = frame.partition.delta_fn(&shifted)?;

    let n = fam.intervals();
    let dd = frame.d();
    let b = frame.atoms.b_fn();
    let c_norms = frame.c.pointwise_norms();
    let sq: Vec<f64> = c_norms.iter().map(|c| c * c).collect();
    let cross: Vec<f64> =
        (0..=n).map(|j| c_norms[j] * op_norm_unchecked(&(shifted_model.value(j) - b.value(j)))).collect();
    let rest = shifted.sub(&frame.c);
    let off = rest.sub(&frame.partition.delta_fn(&rest)?);
    let h = 1.0 / n as f64;
    let epsilon = [kappa(&frame) / (dd * dd), trapezoid(&sq, h) / dd, trapezoid(&cross, h) / dd, off.norm_l1()]
        .into_iter()
        .fold(0.0, f64::max);
    let (c_dot, _) = frame.c.derivative_samples();
    let alpha = trapezoid(&c_dot.iter().map(op_norm_unchecked).collect::<Vec<_>>(), h);
    let beta = g
        .iter()
        .map(|gl| trapezoid(&gl.deriv().expect("mollified").iter().map(|z| z.norm()).collect::<Vec<_>>(), h))
        .fold(0.0, f64::max);
    let v_error = fam.v.sub(&frame.c).norm_l1();
    Ok(FrameBuild {
        frame,
        shifted,
        shifted_model,
        measures: FrameMeasures { width_h: w, separation, alpha, beta, v_error, epsilon },
    })
}

/// Transformed perturbation `S^-1 A S - A_0 - S^-1 S'` and its L1 norm.
#[derive(Debug, Clone)]
pub struct TransformedPerturbation {
    pub bundle: TransformerBundle,
    pub l1_norm: f64,
    /// `(48 n + 3) epsilon`.
    pub bound: f64,
    pub passed: bool,
}

pub fn transformed_perturbation(build: &FrameBuild) -> Result<TransformedPerturbation> {
    let opts = TransformerOptions::default();
    let bundle = build_transformer(&build.frame, opts)?;
    let (conj, _) = bundle.conjugate(&build.shifted, None)?;
    let e = conj.sub(&build.shifted_model);
    let l1 = e.norm_l1();
    let bound = (48.0 * build.frame.dim() as f64 + 3.0) * build.measures.epsilon;
    Ok(TransformedPerturbation { bundle, l1_norm: l1, bound, passed: l1 <= bound * (1.0 + opts.slack) })
}

fn boundary_projector(partition: &Partition, side: Side) -> CMatrix {
    match side {
        Side::Left => partition.projector(Block::Zero) + partition.projector(Block::Minus),
        Side::Right => partition.projector(Block::Minus).clone(),
    }
}

fn check_xi(partition: &Partition, xi: &CVector) -> Result<()> {
    if xi.dim() != partition.dim() {
        return Err(Error::DimensionMismatch { expected: partition.dim(), got: xi.dim() });
    }
    let p0 = partition.projector(Block::Zero);
    let outside = (&(p0 * xi) - xi).norm();
    if xi.norm() == 0.0 || outside > 1e-12 * xi.norm() {
        return Err(Error::XiOutsideRange);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Comparison {
    /// Solution of the shifted full system.
    pub x: VectorFn,
    /// Solution of the shifted block-diagonal model.
    pub x0: VectorFn,
    pub rel_sup_error: f64,
}

/// Solves the full and model problems for block `k` with `xi` in `im P_k`.
pub fn asymptotic_compare(fam: &ParamFamily, nu: usize, k: usize, xi: &CVector, side: Side) -> Result<Comparison> {
    let partition = fam.partition_for_index(k)?;
    check_xi(&partition, xi)?;
    let shifted = assemble_shifted(fam, nu, k)?;
    let model = partition.delta_fn(&shifted)?;
    compare_systems(&shifted, &model, &partition, xi, side)
}

/// Solves `x' = a x` and `x0' = model x0` under the boundary condition of `side`.
pub fn compare_systems(
    a: &OperatorFn,
    model: &OperatorFn,
    partition: &Partition,
    xi: &CVector,
    side: Side,
) -> Result<Comparison> {
    let p = boundary_projector(partition, side);
    let (x, x0) = rayon::join(
        || solve_direct(&BvpProblem::new(a.clone(), None, p.clone(), xi.clone())?),
        || solve_direct(&BvpProblem::new(model.clone(), None, p.clone(), xi.clone())?),
    );
    let (x, x0) = (x?, x0?);
    let rel_sup_error = relative_sup_error(&x, &x0);
    Ok(Comparison { x, x0, rel_sup_error })
}

/// `max_t |x(t) - x0(t)| / |x0(t)|`.
pub fn relative_sup_error(x: &VectorFn, x0: &VectorFn) -> f64 {
    x.values()
        .iter()
        .zip(x0.values())
        .map(|(a, b)| (a - b).norm() / b.norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub y: VectorFn,
    pub y_norm: f64,
    /// `|x - x0|_C`.
    pub actual_gap: f64,
    pub refined_bound: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

/// Correction `y' = A0 y + (A - A0) x0` with homogeneous boundary data, and the
/// bound `[1 + (1/gamma + eps) |A - A0|_L1] |y|_C` on `|x - x0|_C`.
/// `gamma` comes from the dichotomy scan of the model and `eps` is the L1 norm
/// of the transformed perturbation of the frame at this magnitude.
pub fn refine(fam: &ParamFamily, nu: usize, k: usize, xi: &CVector, side: Side, budget: &FrameBudget) -> Result<Refinement> {
    let build = build_frame_for_index(fam, nu, k, budget)?;
    let epsilon = transformed_perturbation(&build)?.l1_norm;
    let partition = &build.frame.partition;
    check_xi(partition, xi)?;
    let cmp = compare_systems(&build.shifted, &build.shifted_model, partition, xi, side)?;
    let p_bc = boundary_projector(partition, side);
    let diff = build.shifted.sub(&build.shifted_model);
    let n = fam.intervals();
    let forcing = VectorFn::from_samples((0..=n).map(|j| diff.value(j) * cmp.x0.value(j)).collect(), None)?;
    let y = solve_direct(&BvpProblem::new(
        build.shifted_model.clone(),
        Some(forcing),
        p_bc.clone(),
        CVector::zeros(fam.dim()),
    )?)?;
    // dichotomy scan of the model with sign operator 2 P_bc - 1
    let sign = &p_bc.scale_re(2.0) - &CMatrix::identity(fam.dim());
    let prof: Vec<f64> = build.shifted_model.values().par_iter().map(|m| omega_unchecked(&(&sign * m))).collect();
    let worst = max_subinterval_integral(&prof, 1.0 / n as f64);
    let gamma = (-worst).exp();
    let y_norm = y.norm_c();
    let refined_bound = (1.0 + (1.0 / gamma + epsilon) * diff.norm_l1()) * y_norm;
    Ok(Refinement { y, y_norm, actual_gap: cmp.x.sub(&cmp.x0).norm_c(), refined_bound, gamma, epsilon })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub magnitude: f64,
    pub rel_sup_error: f64,
    pub actual_gap: f64,
    pub y_norm: f64,
    pub refined_bound: f64,
    pub d_atom: f64,
    pub c_norm: f64,
    pub c_limit: f64,
    pub epsilon: f64,
    pub perturbation_l1: f64,
    pub perturbation_bound: f64,
    /// `(48 n + 3) eps / gamma`.
    pub theta: f64,
    /// Frame smallness and `theta < 1` both hold.
    pub admissible: bool,
}

/// Runs comparison, frame and refinement at every magnitude (in parallel,
/// rows in magnitude order). Magnitudes where the frame cannot be built yet
/// are reported with NaN frame columns and `admissible = false`.
pub fn sweep(fam: &ParamFamily, k: usize, xi: &CVector, side: Side, budget: &FrameBudget) -> Result<Vec<SweepRow>> {
    (0..fam.magnitudes.len())
        .into_par_iter()
        .map(|nu| {
            let cmp = asymptotic_compare(fam, nu, k, xi, side)?;
            let mut row = SweepRow {
                magnitude: fam.magnitudes[nu],
                rel_sup_error: cmp.rel_sup_error,
                actual_gap: cmp.x.sub(&cmp.x0).norm_c(),
                y_norm: f64::NAN,
                refined_bound: f64::NAN,
                d_atom: f64::NAN,
                c_norm: f64::NAN,
                c_limit: f64::NAN,
                epsilon: f64::NAN,
                perturbation_l1: f64::NAN,
                perturbation_bound: f64::NAN,
                theta: f64::NAN,
                admissible: false,
            };
            match build_frame_for_index(fam, nu, k, budget) {
                Ok(build) => {
                    let tp = transformed_perturbation(&build)?;
                    let r = refine(fam, nu, k, xi, side, budget)?;
                    row.y_norm = r.y_norm;
                    row.refined_bound = r.refined_bound;
                    row.d_atom = build.frame.gaps.d_atom;
                    row.c_norm = build.frame.c.norm_c();
                    row.c_limit = build.frame.smallness_limit();
                    row.epsilon = build.measures.epsilon;
                    row.perturbation_l1 = tp.l1_norm;
                    row.perturbation_bound = tp.bound;
                    row.theta = tp.bound / r.gamma;
                    row.admissible = row.theta < 1.0;
                }
                Err(Error::MagnitudeTooSmall { .. }) => {}
                Err(e) => return Err(e),
            }
            Ok(row)
        })
        .collect()
}

/// First magnitude from which every later row is admissible.
pub fn first_admissible_magnitude(rows: &[SweepRow]) -> Option<f64> {
    let start = rows.iter().rposition(|r| !r.admissible).map_or(0, |i| i + 1);
    rows.get(start).map(|r| r.magnitude)
}
