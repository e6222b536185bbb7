//! Structured lift operators: the vectorized Hankel lift H, the antidiagonal
//! weighting D, the weighted lift G = H∘D^{-1} with G*G = I, and the
//! projection onto the orthogonal complement of range(G).

use crate::error::{Error, Result};
use crate::linalg::{c64, CMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiftShape {
    pub s: usize,
    pub n: usize,
    /// Pencil rows: the lifted matrix is sn1×n2.
    pub n1: usize,
    pub n2: usize,
}

impl LiftShape {
    /// Balanced pencil split n1 = floor(n/2)+1, n2 = n+1−n1, which maximizes
    /// min(n1, n2).
    pub fn balanced(s: usize, n: usize) -> Self {
        let n1 = n / 2 + 1;
        Self {
            s,
            n,
            n1,
            n2: n + 1 - n1,
        }
    }

    pub fn check_data(&self, x: &CMatrix) -> Result<()> {
        if x.nrows() != self.s || x.ncols() != self.n {
            return Err(Error::Dimension(format!(
                "expected {}x{} data matrix, got {}x{}",
                self.s,
                self.n,
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn check_lifted(&self, z: &CMatrix) -> Result<()> {
        if z.nrows() != self.s * self.n1 || z.ncols() != self.n2 {
            return Err(Error::Dimension(format!(
                "expected {}x{} lifted matrix, got {}x{}",
                self.s * self.n1,
                self.n2,
                z.nrows(),
                z.ncols()
            )));
        }
        Ok(())
    }
}

/// w_i = number of entries on the i-th antidiagonal of an n1×n2 matrix,
/// i.e. min(i, n1, n2, n−i+1) for 1-based i. Σ w_i = n1·n2.
pub fn weight_vector(shape: &LiftShape) -> Vec<f64> {
    (1..=shape.n)
        .map(|i| {
            i.min(shape.n1)
                .min(shape.n2)
                .min(shape.n - i + 1) as f64
        })
        .collect()
}

/// Block Hankel lift: block (b, j) of the output (size s×1) is column b+j of X.
pub fn hankel_lift(x: &CMatrix, shape: &LiftShape) -> Result<CMatrix> {
    shape.check_data(x)?;
    let LiftShape { s, n1, n2, .. } = *shape;
    let mut z = CMatrix::zeros(s * n1, n2);
    for b in 0..n1 {
        for j in 0..n2 {
            for u in 0..s {
                z[(b * s + u, j)] = x[(u, b + j)];
            }
        }
    }
    Ok(z)
}

/// Adjoint of the lift: column i of the output sums the w_i blocks of Z on
/// antidiagonal i.
pub fn hankel_adjoint(z: &CMatrix, shape: &LiftShape) -> Result<CMatrix> {
    shape.check_lifted(z)?;
    let LiftShape { s, n, n1, n2 } = *shape;
    let mut x = CMatrix::zeros(s, n);
    for b in 0..n1 {
        for j in 0..n2 {
            let i = b + j;
            for u in 0..s {
                x[(u, i)] += z[(b * s + u, j)];
            }
        }
    }
    Ok(x)
}

/// G(X) = H(D^{-1}X): column i scaled by 1/√w_i before lifting.
pub fn g_forward(x: &CMatrix, shape: &LiftShape) -> Result<CMatrix> {
    shape.check_data(x)?;
    let w = weight_vector(shape);
    let mut scaled = x.clone();
    for (i, &wi) in w.iter().enumerate() {
        let col = scaled.column(i) / c64(wi.sqrt(), 0.0);
        scaled.set_column(i, &col);
    }
    hankel_lift(&scaled, shape)
}

/// G*(Z) = D^{-1}(H*(Z)). Satisfies G*∘G = identity on s×n matrices.
pub fn g_adjoint(z: &CMatrix, shape: &LiftShape) -> Result<CMatrix> {
    let mut x = hankel_adjoint(z, shape)?;
    let w = weight_vector(shape);
    for (i, &wi) in w.iter().enumerate() {
        let col = x.column(i) / c64(wi.sqrt(), 0.0);
        x.set_column(i, &col);
    }
    Ok(x)
}

/// (I − GG*)(Z): the component of Z orthogonal to range(G).
pub fn project_offspace(z: &CMatrix, shape: &LiftShape) -> Result<CMatrix> {
    let back = g_adjoint(z, shape)?;
    Ok(z - g_forward(&back, shape)?)
}
