//! Decomposition of the 25-dimensional two-atom space and extraction of the
//! effective two-level Hamiltonian on `span{|11⟩, |+⟩}`.
//!
//! The reduction operator is `R = π₂ Q P₂ π₁ P₁`:
//! `P₁` moves the nine states built from `{|0⟩, |1⟩, |r⟩}` to the front,
//! `π₁` keeps them, `P₂` reorders them as `11, 1r, r1, rr, 00, 01, 0r, 10, r0`,
//! `Q` rotates `|1r⟩, |r1⟩` into `|+⟩, |−⟩` (placing `|−⟩` after `|rr⟩`), and
//! `π₂` keeps the first two positions.

use crate::atom::{pair_index, Level, DIM};
use crate::linalg::{ComplexMatrix, C64, ONE, ZERO};
use crate::{Error, Result};
use std::f64::consts::FRAC_1_SQRT_2;

/// The nine states spanned by `{|0⟩, |1⟩, |r⟩}` in the order used by `P₁`.
pub const NINE_STATES: [(Level, Level); 9] = [
    (Level::Zero, Level::Zero),
    (Level::Zero, Level::One),
    (Level::Zero, Level::R),
    (Level::One, Level::Zero),
    (Level::One, Level::One),
    (Level::One, Level::R),
    (Level::R, Level::Zero),
    (Level::R, Level::One),
    (Level::R, Level::R),
];

/// Positions within [`NINE_STATES`] in the order applied by `P₂`.
const P2_ORDER: [usize; 9] = [4, 5, 7, 8, 0, 1, 2, 3, 6];

/// Labels of the first nine basis vectors after `Q P₂ π₁ P₁`.
pub const REDUCED_LABELS: [&str; 9] = ["11", "+", "rr", "-", "00", "01", "0r", "10", "r0"];

#[derive(Clone, Debug)]
pub struct ReductionOperator {
    pub p1: ComplexMatrix,
    pub pi1: ComplexMatrix,
    pub p2: ComplexMatrix,
    pub q: ComplexMatrix,
    pub pi2: ComplexMatrix,
    /// `Q P₂ π₁ P₁`: change of basis keeping all nine retained states.
    pub nine: ComplexMatrix,
    pub r: ComplexMatrix,
}

fn permutation(order: &[usize]) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(DIM, DIM);
    for (new, &old) in order.iter().enumerate() {
        m[(new, old)] = ONE;
    }
    m
}

fn diagonal_projector(keep: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(DIM, DIM, |i, j| if i == j && i < keep { ONE } else { ZERO })
}

pub fn build_reduction() -> ReductionOperator {
    let nine: Vec<usize> = NINE_STATES.iter().map(|&(a, b)| pair_index(a, b)).collect();
    let mut order1 = nine.clone();
    order1.extend((0..DIM).filter(|i| !nine.contains(i)));
    let p1 = permutation(&order1);

    let mut order2: Vec<usize> = P2_ORDER.to_vec();
    order2.extend(9..DIM);
    let p2 = permutation(&order2);

    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let mut q = ComplexMatrix::identity(DIM);
    // Positions after P₂: 0 = 11, 1 = 1r, 2 = r1, 3 = rr.
    q[(1, 1)] = s;
    q[(1, 2)] = s;
    q[(1, 3)] = ZERO;
    q[(2, 1)] = ZERO;
    q[(2, 2)] = ZERO;
    q[(2, 3)] = ONE;
    q[(3, 1)] = s;
    q[(3, 2)] = -s;
    q[(3, 3)] = ZERO;

    let pi1 = diagonal_projector(9);
    let pi2 = diagonal_projector(2);
    let chain = |ms: &[&ComplexMatrix]| {
        ms.iter().skip(1).fold(ms[0].clone(), |acc, m| acc.matmul(m).expect("25x25 products"))
    };
    let nine_m = chain(&[&q, &p2, &pi1, &p1]);
    let r = chain(&[&pi2, &q, &p2, &pi1, &p1]);
    ReductionOperator { p1, pi1, p2, q, pi2, nine: nine_m, r }
}

fn check_25(h: &ComplexMatrix) -> Result<()> {
    if h.rows() != DIM || !h.is_square() {
        return Err(Error::Dimension(format!("expected a {DIM}x{DIM} operator, got {}x{}", h.rows(), h.cols())));
    }
    Ok(())
}

impl ReductionOperator {
    /// `M h Mᵀ` for a real change-of-basis matrix `M`.
    fn conjugate(m: &ComplexMatrix, h: &ComplexMatrix) -> Result<ComplexMatrix> {
        m.matmul(h)?.matmul(&m.transpose())
    }

    /// `C_R(h) = R h Rᵀ`.
    pub fn conjugating_channel(&self, h: &ComplexMatrix) -> Result<ComplexMatrix> {
        check_25(h)?;
        Self::conjugate(&self.r, h)
    }

    /// The 9×9 block of `h` in the basis [`REDUCED_LABELS`].
    pub fn nine_block(&self, h: &ComplexMatrix) -> Result<ComplexMatrix> {
        check_25(h)?;
        Ok(Self::conjugate(&self.nine, h)?.principal_block(0, 9))
    }

    /// Effective 2×2 Hamiltonian on `(|11⟩, |+⟩)`.
    pub fn project_effective(&self, h: &ComplexMatrix) -> Result<ComplexMatrix> {
        Ok(self.conjugating_channel(h)?.principal_block(0, 2))
    }

    /// `Rᵀ (h₂ ⊕ 0) R`.
    pub fn lift_effective(&self, h2: &ComplexMatrix) -> Result<ComplexMatrix> {
        if h2.rows() != 2 || !h2.is_square() {
            return Err(Error::Dimension("lift expects a 2x2 operator".into()));
        }
        let padded = h2.embed_top_left(DIM);
        self.r.transpose().matmul(&padded)?.matmul(&self.r)
    }
}

/// Schur-complement elimination of every two-atom state containing `|p⟩`:
/// `H_SS − H_SP H_PP⁻¹ H_PS`, returned in the full 25-dim frame with the
/// eliminated rows and columns zeroed. Valid when `|p⟩` is far detuned.
pub fn eliminate_intermediate(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_25(h)?;
    let p = Level::P.index();
    let (elim, keep): (Vec<usize>, Vec<usize>) = (0..DIM).partition(|&i| i / 5 == p || i % 5 == p);
    let sub = |rows: &[usize], cols: &[usize]| {
        nalgebra::DMatrix::from_fn(rows.len(), cols.len(), |i, j| h[(rows[i], cols[j])])
    };
    let hpp = sub(&elim, &elim);
    let inv = hpp.try_inverse().ok_or_else(|| Error::InvalidParameter("intermediate block is singular".into()))?;
    let corr = sub(&keep, &elim) * inv * sub(&elim, &keep);
    let mut out = ComplexMatrix::zeros(DIM, DIM);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            out[(i, j)] = h[(i, j)] - corr[(a, b)];
        }
    }
    Ok(out)
}
