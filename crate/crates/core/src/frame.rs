//! Three-way block splittings, spectral-atom frames and the Riesz-projector
//! transformer `S` that nearly block-diagonalizes `B + C`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gridfn::{OperatorFn, ScalarFn, VectorFn};
use crate::linalg::{op_norm_unchecked, CMatrix, Lu, C64, ZERO};

pub const DEFAULT_CONTOUR_POINTS: usize = 64;
pub const DEFAULT_SLACK: f64 = 0.05;
/// Absolute allowance added to every bound check, for right sides that vanish
/// identically (e.g. `C = 0`) while the left side carries rounding noise.
pub const ABS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Zero,
    Minus,
    Plus,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Zero, Block::Minus, Block::Plus];
}

/// Orthogonal splitting of coordinates into the blocks `P0`, `P-`, `P+`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    dim: usize,
    block_of: Vec<Block>,
    projectors: [CMatrix; 3],
}

impl Partition {
    /// Index sets are zero-based and must cover `0..dim` disjointly.
    pub fn new(dim: usize, zero: &[usize], minus: &[usize], plus: &[usize]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("partition dimension must be positive".into()));
        }
        let mut block_of = vec![None; dim];
        for (block, set) in [(Block::Zero, zero), (Block::Minus, minus), (Block::Plus, plus)] {
            for &i in set {
                if i >= dim {
                    return Err(Error::InvalidInput(format!("index {i} out of range for dimension {dim}")));
                }
                if block_of[i].replace(block).is_some() {
                    return Err(Error::InvalidInput(format!("index {i} assigned to two blocks")));
                }
            }
        }
        let block_of: Vec<Block> = block_of
            .into_iter()
            .enumerate()
            .map(|(i, b)| b.ok_or_else(|| Error::InvalidInput(format!("index {i} not assigned to any block"))))
            .collect::<Result<_>>()?;
        Ok(Self::from_blocks(block_of))
    }

    pub fn from_blocks(block_of: Vec<Block>) -> Self {
        let dim = block_of.len();
        let proj = |b: Block| {
            let idx: Vec<usize> = (0..dim).filter(|&i| block_of[i] == b).collect();
            CMatrix::coordinate_projector(dim, &idx)
        };
        let projectors = [proj(Block::Zero), proj(Block::Minus), proj(Block::Plus)];
        Self { dim, block_of, projectors }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_of(&self, i: usize) -> Block {
        self.block_of[i]
    }

    pub fn indices(&self, b: Block) -> Vec<usize> {
        (0..self.dim).filter(|&i| self.block_of[i] == b).collect()
    }

    pub fn projector(&self, b: Block) -> &CMatrix {
        &self.projectors[b as usize]
    }

    /// `P0 A P0 + P- A P- + P+ A P+`.
    pub fn delta(&self, a: &CMatrix) -> Result<CMatrix> {
        if a.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: a.dim() });
        }
        Ok(self.delta_unchecked(a))
    }

    fn delta_unchecked(&self, a: &CMatrix) -> CMatrix {
        let mut out = a.clone();
        for i in 0..self.dim {
            for j in 0..self.dim {
                if self.block_of[i] != self.block_of[j] {
                    out[(i, j)] = ZERO;
                }
            }
        }
        out
    }

    /// Nodewise block-diagonal compression; derivative samples are carried along.
    pub fn delta_fn(&self, a: &OperatorFn) -> Result<OperatorFn> {
        if a.first().dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: a.first().dim() });
        }
        Ok(a
            .map_with_deriv(|_, v, d| (self.delta_unchecked(v), self.delta_unchecked(d)))
            .unwrap_or_else(|| a.map(|_, v| self.delta_unchecked(v))))
    }
}

/// Convenience wrapper for [`Partition::delta`].
pub fn delta_pi(partition: &Partition, a: &CMatrix) -> Result<CMatrix> {
    partition.delta(a)
}

/// A scalar profile times the coordinate projector onto `indices`.
#[derive(Debug, Clone)]
pub struct Atom {
    pub beta: ScalarFn,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SpectralAtoms {
    dim: usize,
    atoms: Vec<Atom>,
    blocks: Vec<Block>,
}

impl SpectralAtoms {
    pub fn new(partition: &Partition, atoms: Vec<Atom>) -> Result<Self> {
        let dim = partition.dim();
        if atoms.is_empty() {
            return Err(Error::InvalidInput("at least one atom is required".into()));
        }
        let n = atoms[0].beta.intervals();
        let mut seen = vec![false; dim];
        let mut blocks = Vec::with_capacity(atoms.len());
        for (a, atom) in atoms.iter().enumerate() {
            if atom.beta.intervals() != n {
                return Err(Error::DimensionMismatch { expected: n, got: atom.beta.intervals() });
            }
            if !atom.beta.has_analytic_deriv() {
                return Err(Error::InvalidInput(format!("atom {a} needs derivative samples")));
            }
            let Some(&first) = atom.indices.first() else {
                return Err(Error::InvalidInput(format!("atom {a} has no indices")));
            };
            if first >= dim {
                return Err(Error::InvalidInput(format!("atom index {first} out of range")));
            }
            let block = partition.block_of(first);
            for &i in &atom.indices {
                if i >= dim {
                    return Err(Error::InvalidInput(format!("atom index {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidInput(format!("index {i} belongs to two atoms")));
                }
                if partition.block_of(i) != block {
                    return Err(Error::InvalidInput(format!("atom {a} straddles two blocks")));
                }
            }
            blocks.push(block);
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!("index {i} not covered by any atom")));
        }
        Ok(Self { dim, atoms, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn block(&self, a: usize) -> Block {
        self.blocks[a]
    }

    pub fn intervals(&self) -> usize {
        self.atoms[0].beta.intervals()
    }

    fn diag_at(&self, pick: impl Fn(&Atom) -> C64) -> CMatrix {
        let mut d = vec![ZERO; self.dim];
        for atom in &self.atoms {
            let v = pick(atom);
            for &i in &atom.indices {
                d[i] = v;
            }
        }
        CMatrix::from_diag(&d)
    }

    /// `B(t_j)`.
    pub fn b_at(&self, j: usize) -> CMatrix {
        self.diag_at(|a| *a.beta.value(j))
    }

    /// `dB/dt (t_j)`.
    pub fn b_dot_at(&self, j: usize) -> CMatrix {
        self.diag_at(|a| a.beta.deriv().expect("checked at construction")[j])
    }

    pub fn b_fn(&self) -> OperatorFn {
        let n = self.intervals();
        OperatorFn::from_samples((0..=n).map(|j| self.b_at(j)).collect(), Some((0..=n).map(|j| self.b_dot_at(j)).collect()))
            .expect("atoms are finite")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaps {
    /// Separation between atoms in different blocks; infinite if there is no such pair.
    pub d_pi: f64,
    /// Separation between distinct atoms; infinite for a single atom.
    pub d_atom: f64,
}

pub fn gap(atoms: &SpectralAtoms) -> Gaps {
    let mut d_pi = f64::INFINITY;
    let mut d_atom = f64::INFINITY;
    let list = atoms.atoms();
    for a in 0..list.len() {
        for b in a + 1..list.len() {
            let m = list[a]
                .beta
                .values()
                .iter()
                .zip(list[b].beta.values())
                .map(|(x, y)| (x - y).norm())
                .fold(f64::INFINITY, f64::min);
            d_atom = d_atom.min(m);
            if atoms.block(a) != atoms.block(b) {
                d_pi = d_pi.min(m);
            }
        }
    }
    Gaps { d_pi, d_atom }
}

/// The pair `{B, C}` with the block splitting it refers to.
#[derive(Debug, Clone)]
pub struct PiFrame {
    pub partition: Partition,
    pub atoms: SpectralAtoms,
    pub c: OperatorFn,
    pub gaps: Gaps,
}

impl PiFrame {
    /// Validates endpoint vanishing of `C` and the smallness condition
    /// `|C|_C < d_atom / (8 dim)`.
    pub fn new(partition: Partition, atoms: SpectralAtoms, c: OperatorFn) -> Result<Self> {
        let frame = Self::new_unchecked(partition, atoms, c)?;
        let limit = frame.smallness_limit();
        let cn = frame.c.norm_c();
        if cn >= limit {
            return Err(Error::ContractViolation(format!("|C|_C = {cn:.6e} is not below d_atom/(8 dim) = {limit:.6e}")));
        }
        Ok(frame)
    }

    /// Structural checks only; the smallness condition is left to the caller.
    pub fn new_unchecked(partition: Partition, atoms: SpectralAtoms, c: OperatorFn) -> Result<Self> {
        if atoms.dim() != partition.dim() || c.first().dim() != partition.dim() {
            return Err(Error::DimensionMismatch { expected: partition.dim(), got: c.first().dim() });
        }
        if c.intervals() != atoms.intervals() {
            return Err(Error::DimensionMismatch { expected: atoms.intervals(), got: c.intervals() });
        }
        if !c.has_analytic_deriv() {
            return Err(Error::InvalidInput("C needs derivative samples".into()));
        }
        if c.first().max_abs() > 1e-12 || c.last().max_abs() > 1e-12 {
            return Err(Error::ContractViolation("C must vanish at both endpoints".into()));
        }
        let gaps = gap(&atoms);
        if atoms.atoms().len() > 1 && gaps.d_atom <= 0.0 {
            return Err(Error::ContractViolation("atoms collide".into()));
        }
        Ok(Self { partition, atoms, c, gaps })
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    pub fn intervals(&self) -> usize {
        self.c.intervals()
    }

    /// The gap used in every bound: `d_atom`, or `1` for a single atom.
    pub fn d(&self) -> f64 {
        if self.gaps.d_atom.is_finite() {
            self.gaps.d_atom
        } else {
            1.0
        }
    }

    pub fn smallness_limit(&self) -> f64 {
        self.d() / (8.0 * self.dim() as f64)
    }

    fn c_dot(&self) -> &[CMatrix] {
        self.c.deriv().expect("checked at construction")
    }
}

/// `int [6 |C| |B'| + (4 |C| + d) |C'|] dt` by the trapezoid rule.
pub fn kappa(frame: &PiFrame) -> f64 {
    let d = frame.d();
    let n = frame.intervals();
    let cd = frame.c_dot();
    let integrand: Vec<f64> = (0..=n)
        .map(|j| {
            let c = op_norm_unchecked(frame.c.value(j));
            let bd = op_norm_unchecked(&frame.atoms.b_dot_at(j));
            6.0 * c * bd + (4.0 * c + d) * op_norm_unchecked(&cd[j])
        })
        .collect();
    crate::gridfn::trapezoid(&integrand, 1.0 / n as f64)
}

struct NodeProjectors {
    q: [CMatrix; 3],
    q_dot: [CMatrix; 3],
}

fn node_projectors(frame: &PiFrame, j: usize, contour_points: usize) -> Result<NodeProjectors> {
    let dim = frame.dim();
    let b = frame.atoms.b_at(j);
    let bc = &b + frame.c.value(j);
    let deriv = &frame.atoms.b_dot_at(j) + &frame.c_dot()[j];
    let r = frame.d() / 2.0;
    let mut q = [CMatrix::zeros(dim), CMatrix::zeros(dim), CMatrix::zeros(dim)];
    let mut q_dot = q.clone();
    let exact = frame.c.value(j).max_abs() == 0.0;
    for (a, atom) in frame.atoms.atoms().iter().enumerate() {
        let blk = frame.atoms.block(a) as usize;
        let beta = *atom.beta.value(j);
        let beta_dot = atom.beta.deriv().expect("checked")[j];
        let mut moving = deriv.clone();
        for i in 0..dim {
            moving[(i, i)] -= beta_dot;
        }
        let w = r / contour_points as f64;
        for k in 0..contour_points {
            let e = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / contour_points as f64);
            let z = beta + r * e;
            let mut shifted = bc.clone();
            for i in 0..dim {
                shifted[(i, i)] -= z;
            }
            let res = Lu::new(&shifted).map_err(|_| Error::ContourHitsSpectrum { node: j })?.inverse();
            q_dot[blk] += &(&(&res * &moving) * &res).scale(w * e);
            if !exact {
                q[blk] -= &res.scale(w * e);
            }
        }
    }
    if exact {
        for b in Block::ALL {
            q[b as usize] = frame.partition.projector(b).clone();
        }
    }
    Ok(NodeProjectors { q, q_dot })
}

/// Riesz projectors `(Q0, Q-, Q+)` of `B + C` at node `j`.
pub fn riesz_projectors(frame: &PiFrame, j: usize, contour_points: usize) -> Result<[CMatrix; 3]> {
    Ok(node_projectors(frame, j, contour_points)?.q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

impl BoundCheck {
    pub fn new(lhs: f64, rhs: f64, slack: f64) -> Self {
        Self { lhs, rhs, passed: lhs <= rhs * (1.0 + slack) + ABS_FLOOR }
    }

    /// Sides at the node with the largest `lhs / max(rhs, ABS_FLOOR)`; passes
    /// only if every node does.
    fn worst(lhs: &[f64], rhs: &[f64], slack: f64) -> Self {
        let ratio = |j: usize| lhs[j] / rhs[j].max(ABS_FLOOR);
        let j = (0..lhs.len()).max_by(|&a, &b| ratio(a).total_cmp(&ratio(b))).expect("grid is never empty");
        let passed = lhs.iter().zip(rhs).all(|(l, r)| Self::new(*l, *r, slack).passed);
        Self { lhs: lhs[j], rhs: rhs[j], passed }
    }
}

/// Nodewise sides of the pointwise bounds and the integral bound on `S'`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub slack: f64,
    pub kappa: f64,
    /// `|S - 1|` against `4 n |C| / d`.
    pub s_dev_nodes: (Vec<f64>, Vec<f64>),
    /// `|S^-1 - 1|` against `8 n |C| / d`.
    pub s_inv_dev_nodes: (Vec<f64>, Vec<f64>),
    /// `|S^-1 (B+C) S - Delta(B+C)|` against `8 n |C|^2 / d`.
    pub conj_nodes: (Vec<f64>, Vec<f64>),
    pub s_dev: BoundCheck,
    pub s_inv_dev: BoundCheck,
    /// `|S'|_L1` against `4 n kappa / d^2`.
    pub s_dot: BoundCheck,
    pub conj: BoundCheck,
}

impl BoundReport {
    pub fn all_passed(&self) -> bool {
        self.s_dev.passed && self.s_inv_dev.passed && self.s_dot.passed && self.conj.passed
    }
}

#[derive(Debug, Clone)]
pub struct TransformerBundle {
    /// `S` with derivative samples.
    pub s: OperatorFn,
    pub s_inv: OperatorFn,
    /// Riesz projectors `(Q0, Q-, Q+)` per node.
    pub projectors: Vec<[CMatrix; 3]>,
    pub report: BoundReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerOptions {
    pub contour_points: usize,
    pub slack: f64,
}

impl Default for TransformerOptions {
    fn default() -> Self {
        Self { contour_points: DEFAULT_CONTOUR_POINTS, slack: DEFAULT_SLACK }
    }
}

/// Builds `S = Q0 P0 + Q- P- + Q+ P+` at every node. `S'` comes from
/// differentiating the resolvent under the contour integral.
pub fn build_transformer(frame: &PiFrame, opts: TransformerOptions) -> Result<TransformerBundle> {
    if opts.contour_points < 8 {
        return Err(Error::InvalidParameter("need at least 8 contour points".into()));
    }
    let n = frame.intervals();
    let dim = frame.dim();
    let nodes: Vec<NodeProjectors> =
        (0..=n).into_par_iter().map(|j| node_projectors(frame, j, opts.contour_points)).collect::<Result<_>>()?;
    let p = &frame.partition;
    let combine = |q: &[CMatrix; 3]| {
        let mut s = CMatrix::zeros(dim);
        for b in Block::ALL {
            s += &(&q[b as usize] * p.projector(b));
        }
        s
    };
    let s: Vec<CMatrix> = nodes.iter().map(|np| combine(&np.q)).collect();
    let s_dot: Vec<CMatrix> = nodes.iter().map(|np| combine(&np.q_dot)).collect();
    let s_inv: Vec<CMatrix> = s
        .iter()
        .enumerate()
        .map(|(j, m)| Lu::new(m).map(|lu| lu.inverse()).map_err(|_| Error::StepFailure { node: j }))
        .collect::<Result<_>>()?;

    let d = frame.d();
    let nf = dim as f64;
    let id = CMatrix::identity(dim);
    let mut s_dev = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let mut s_inv_dev = s_dev.clone();
    let mut conj = s_dev.clone();
    for j in 0..=n {
        let c = frame.c.value(j);
        let cn = op_norm_unchecked(c);
        s_dev.0[j] = op_norm_unchecked(&(&s[j] - &id));
        s_dev.1[j] = 4.0 * nf / d * cn;
        s_inv_dev.0[j] = op_norm_unchecked(&(&s_inv[j] - &id));
        s_inv_dev.1[j] = 8.0 * nf / d * cn;
        let bc = &frame.atoms.b_at(j) + c;
        let rotated = &(&s_inv[j] * &bc) * &s[j];
        conj.0[j] = op_norm_unchecked(&(&rotated - &p.delta_unchecked(&bc)));
        conj.1[j] = 8.0 * nf / d * cn * cn;
    }
    let kap = kappa(frame);
    let s_fn = OperatorFn::from_samples(s, Some(s_dot))?;
    let s_dot_l1 = crate::gridfn::trapezoid(
        &s_fn.deriv().expect("just stored").iter().map(op_norm_unchecked).collect::<Vec<_>>(),
        1.0 / n as f64,
    );
    let report = BoundReport {
        slack: opts.slack,
        kappa: kap,
        s_dev: BoundCheck::worst(&s_dev.0, &s_dev.1, opts.slack),
        s_inv_dev: BoundCheck::worst(&s_inv_dev.0, &s_inv_dev.1, opts.slack),
        s_dot: BoundCheck::new(s_dot_l1, 4.0 * nf / (d * d) * kap, opts.slack),
        conj: BoundCheck::worst(&conj.0, &conj.1, opts.slack),
        s_dev_nodes: s_dev,
        s_inv_dev_nodes: s_inv_dev,
        conj_nodes: conj,
    };
    Ok(TransformerBundle {
        s: s_fn,
        s_inv: OperatorFn::from_samples(s_inv, None)?,
        projectors: nodes.into_iter().map(|np| np.q).collect(),
        report,
    })
}

/// Substitution `x = S y`: returns `S^-1 A S - S^-1 S'` and `S^-1 f`.
/// Uses the stored derivative of `S` when present, central differences otherwise.
pub fn conjugate(
    s: &OperatorFn,
    s_inv: &OperatorFn,
    a: &OperatorFn,
    f: Option<&VectorFn>,
) -> Result<(OperatorFn, Option<VectorFn>)> {
    let n = s.intervals();
    for g in [s_inv.intervals(), a.intervals()] {
        if g != n {
            return Err(Error::DimensionMismatch { expected: n, got: g });
        }
    }
    let (s_dot, _) = s.derivative_samples();
    let a_new: Vec<CMatrix> = (0..=n)
        .into_par_iter()
        .map(|j| {
            let si = s_inv.value(j);
            &(&(si * a.value(j)) * s.value(j)) - &(si * &s_dot[j])
        })
        .collect();
    let f_new = match f {
        Some(f) => {
            if f.intervals() != n {
                return Err(Error::DimensionMismatch { expected: n, got: f.intervals() });
            }
            Some(VectorFn::from_samples((0..=n).map(|j| s_inv.value(j) * f.value(j)).collect(), None)?)
        }
        None => None,
    };
    Ok((OperatorFn::from_samples(a_new, None)?, f_new))
}

impl TransformerBundle {
    pub fn conjugate(&self, a: &OperatorFn, f: Option<&VectorFn>) -> Result<(OperatorFn, Option<VectorFn>)> {
        conjugate(&self.s, &self.s_inv, a, f)
    }
}

/// `|S^-1 A S - Delta(A)|_L1` against `3 |A - Delta(A)|_L1 + (16 n / d) int |C| |Delta(A)|`.
pub fn conjugation_estimate(frame: &PiFrame, bundle: &TransformerBundle, a: &OperatorFn, slack: f64) -> Result<BoundCheck> {
    let n = frame.intervals();
    if a.intervals() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.intervals() });
    }
    if a.first().dim() != frame.dim() {
        return Err(Error::DimensionMismatch { expected: frame.dim(), got: a.first().dim() });
    }
    let p = &frame.partition;
    let rows: Vec<(f64, f64, f64)> = (0..=n)
        .into_par_iter()
        .map(|j| {
            let av = a.value(j);
            let da = p.delta_unchecked(av);
            let conj = &(&(bundle.s_inv.value(j) * av) * bundle.s.value(j)) - &da;
            (
                op_norm_unchecked(&conj),
                op_norm_unchecked(&(av - &da)),
                op_norm_unchecked(frame.c.value(j)) * op_norm_unchecked(&da),
            )
        })
        .collect();
    let h = 1.0 / n as f64;
    let col = |k: usize| -> Vec<f64> { rows.iter().map(|r| [r.0, r.1, r.2][k]).collect() };
    let lhs = crate::gridfn::trapezoid(&col(0), h);
    let rhs = 3.0 * crate::gridfn::trapezoid(&col(1), h)
        + 16.0 * frame.dim() as f64 / frame.d() * crate::gridfn::trapezoid(&col(2), h);
    Ok(BoundCheck::new(lhs, rhs, slack))
}
