//! Seeded random instances shared by the self-test suite and the tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::bvp::{check_dichotomy, BvpProblem, ContractionParams};
use crate::frame::{Atom, Block, Partition, PiFrame, SpectralAtoms};
use crate::gridfn::{OperatorFn, ScalarFn, VectorFn};
use crate::linalg::{herm_eigen, op_norm_unchecked, CMatrix, CVector, C64};

/// The generator every seeded entry point uses.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_complex<R: Rng>(rng: &mut R) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Random matrix with spectral norm `scale`.
pub fn random_matrix<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> CMatrix {
    let m = CMatrix::from_rows(dim, (0..dim * dim).map(|_| random_complex(rng)).collect());
    let n = op_norm_unchecked(&m);
    m.scale_re(scale / n)
}

pub fn random_partition<R: Rng>(rng: &mut R, dim: usize) -> Partition {
    Partition::from_blocks((0..dim).map(|_| Block::ALL[rng.gen_range(0..3)]).collect())
}

/// `A0 + A1 sin(2 pi w t) + A2 cos(2 pi w t)` with analytic derivative and
/// `|A|_C <= scale`.
pub fn random_operator_fn<R: Rng>(rng: &mut R, n: usize, dim: usize, scale: f64) -> OperatorFn {
    let a0 = random_matrix(rng, dim, scale / 3.0);
    let a1 = random_matrix(rng, dim, scale / 3.0);
    let a2 = random_matrix(rng, dim, scale / 3.0);
    let w: f64 = rng.gen_range(0.5..2.0);
    OperatorFn::from_fn_with_deriv(n, |t| {
        let (s, c) = (2.0 * PI * w * t).sin_cos();
        let v = &(&a0 + &a1.scale_re(s)) + &a2.scale_re(c);
        let d = (&a1.scale_re(c) - &a2.scale_re(s)).scale_re(2.0 * PI * w);
        (v, d)
    })
    .expect("finite samples")
}

/// A frame of dimension 2..=4 with at least two atoms, `d_atom >= 1` and
/// `|C|_C` a random fraction (at most `fill`) of the smallness limit.
/// Returns the frame and the fraction used.
pub fn random_frame<R: Rng>(rng: &mut R, n: usize, fill: f64) -> (PiFrame, f64) {
    let dim = rng.gen_range(2..=4);
    let count = rng.gen_range(2..=dim);
    let mut idx: Vec<usize> = (0..dim).collect();
    idx.shuffle(rng);
    // cut points split the shuffled indices into `count` nonempty groups
    let mut cuts: Vec<usize> = (1..dim).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts[..count - 1].to_vec();
    cuts.sort_unstable();
    cuts.push(dim);
    let psi = rng.gen_range(0.0..2.0 * PI);
    let mut block_of = vec![Block::Zero; dim];
    let mut atoms = Vec::with_capacity(count);
    let mut start = 0;
    for (a, &end) in cuts.iter().enumerate() {
        let indices = idx[start..end].to_vec();
        start = end;
        let block = Block::ALL[rng.gen_range(0..3)];
        for &i in &indices {
            block_of[i] = block;
        }
        let center = C64::from_polar(3.0 * a as f64, psi) + 0.3 * random_complex(rng);
        let amp = rng.gen_range(0.0..0.5);
        let w = rng.gen_range(0.5..6.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let beta = ScalarFn::from_fn_with_deriv(n, |t| {
            let e = C64::from_polar(amp, w * t + phase);
            (center + e, C64::i() * w * e)
        })
        .expect("finite samples");
        atoms.push(Atom { beta, indices });
    }
    let partition = Partition::from_blocks(block_of);
    let atoms = SpectralAtoms::new(&partition, atoms).expect("valid atoms");

    let m0 = random_matrix(rng, dim, 1.0);
    let m1 = random_matrix(rng, dim, 1.0);
    let w = rng.gen_range(0.5..3.0);
    let raw = OperatorFn::from_fn_with_deriv(n, |t| {
        let (s, c) = (PI * t).sin_cos();
        let (sw, cw) = (2.0 * PI * w * t).sin_cos();
        let inner = &m0 + &m1.scale_re(cw);
        let inner_d = m1.scale_re(-2.0 * PI * w * sw);
        let v = inner.scale_re(s);
        (v, &inner.scale_re(PI * c) + &inner_d.scale_re(s))
    })
    .expect("finite samples");
    let probe = PiFrame::new_unchecked(partition.clone(), atoms.clone(), raw.clone()).expect("structurally valid");
    let fraction = fill * rng.gen_range(0.1..=1.0);
    let k = fraction * probe.smallness_limit() / raw.norm_c();
    let c = raw.map_with_deriv(|_, v, d| (v.scale_re(k), d.scale_re(k))).expect("has derivative");
    let frame = PiFrame::new_unchecked(partition, atoms, c).expect("structurally valid");
    (frame, fraction)
}

/// Random unitary matrix (eigenvectors of a random Hermitian matrix).
pub fn random_unitary<R: Rng>(rng: &mut R, dim: usize) -> CMatrix {
    let h = random_matrix(rng, dim, 1.0).hermitian_part();
    herm_eigen(&h).expect("Hermitian by construction").1
}

pub fn random_vector<R: Rng>(rng: &mut R, dim: usize) -> CVector {
    CVector::from_vec((0..dim).map(|_| random_complex(rng)).collect())
}

/// Smooth random vector function `v0 + v1 t + v2 sin(2 pi w t)`.
pub fn random_vector_fn<R: Rng>(rng: &mut R, n: usize, dim: usize) -> VectorFn {
    let v0 = random_vector(rng, dim);
    let v1 = random_vector(rng, dim);
    let v2 = random_vector(rng, dim);
    let w: f64 = rng.gen_range(0.5..2.0);
    VectorFn::from_fn_with_deriv(n, |t| {
        let (s, c) = (2.0 * PI * w * t).sin_cos();
        let v = &(&v0 + &v1.scale(C64::new(t, 0.0))) + &v2.scale(C64::new(s, 0.0));
        let d = &v1 + &v2.scale(C64::new(2.0 * PI * w * c, 0.0));
        (v, d)
    })
    .expect("finite samples")
}

/// A perturbed problem meeting every precondition of the contraction solver.
#[derive(Debug, Clone)]
pub struct ContractionInstance {
    pub problem: BvpProblem,
    pub v: OperatorFn,
    pub params: ContractionParams,
}

/// `A = U diag(A_P, A_Q) U*` with a decaying block on `im P` and a growing
/// block on its complement, small time-dependent coupling inside each block,
/// and `|V|_L1` a random fraction of `theta gamma`.
pub fn random_contraction_instance<R: Rng>(rng: &mut R, n: usize) -> ContractionInstance {
    let dim = rng.gen_range(2..=4);
    let rank = rng.gen_range(1..dim);
    let u = random_unitary(rng, dim);
    let mu_p = rng.gen_range(1.0..4.0);
    let mu_q = rng.gen_range(1.0..4.0);
    let inner = random_operator_fn(rng, n, dim, 1.5);
    let block = |m: &CMatrix| {
        let mut out = CMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                if (i < rank) == (j < rank) {
                    out[(i, j)] = m[(i, j)];
                }
            }
        }
        out
    };
    let shift: Vec<f64> = (0..dim).map(|i| if i < rank { -mu_p } else { mu_q }).collect();
    let shift = CMatrix::from_real_diag(&shift);
    let ua = u.adjoint();
    let a = inner
        .map_with_deriv(|_, v, d| {
            let bv = &block(v) + &shift;
            (&(&u * &bv) * &ua, &(&u * &block(d)) * &ua)
        })
        .expect("has derivative");
    let diag_p: Vec<f64> = (0..dim).map(|i| if i < rank { 1.0 } else { 0.0 }).collect();
    let p = &(&u * &CMatrix::from_real_diag(&diag_p)) * &ua;
    let p = (&p + &p.adjoint()).scale_re(0.5);
    let worst = check_dichotomy(&a, &p, 0.5).expect("valid inputs").worst;
    let gamma = (0.95 * (-worst).exp()).min(0.95);
    let theta = rng.gen_range(0.2..0.7);
    let raw_v = random_operator_fn(rng, n, dim, 1.0);
    let target = theta * gamma * rng.gen_range(0.5..0.95);
    let k = target / raw_v.norm_l1();
    let v = raw_v.map_with_deriv(|_, m, d| (m.scale_re(k), d.scale_re(k))).expect("has derivative");
    let f = random_vector_fn(rng, n, dim);
    let xi = random_vector(rng, dim);
    let problem = BvpProblem::new(a, Some(f), p, xi).expect("consistent dimensions");
    ContractionInstance { problem, v, params: ContractionParams::new(gamma, theta) }
}
