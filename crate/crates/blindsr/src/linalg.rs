//! Dense complex matrix kernels shared by the whole pipeline: truncated SVD,
//! Hermitian positive-definite (Gram) solves, least squares, and the "cmx v1"
//! fixture format.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Residual bound for Gram solves, relative to ‖B‖_F.
pub const GRAM_RESIDUAL_TOL: f64 = 1e-10;
/// A Gram matrix counts as singular when λ_min < this ratio times λ_max.
pub const GRAM_SINGULAR_RATIO: f64 = 1e-12;
/// Relative tolerance for numerical rank detection in least squares.
pub const RANK_TOL: f64 = 1e-10;

pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Rank-r truncated SVD with nonincreasing singular values and orthonormal
/// U (rows×r) and V (cols×r) factors.
pub fn svd_truncated(m: &CMatrix, r: usize) -> Result<(CMatrix, DVector<f64>, CMatrix)> {
    let (rows, cols) = m.shape();
    if r == 0 || r > rows.min(cols) {
        return Err(Error::Dimension(format!(
            "truncation rank {r} out of range for {rows}x{cols} matrix"
        )));
    }
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Convergence("SVD iteration did not converge".into()))?;
    let u_full = svd.u.expect("requested U");
    let vt_full = svd.v_t.expect("requested V^T");
    let sv = svd.singular_values;

    // nalgebra does not guarantee ordering; sort descending ourselves.
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap());

    let mut u = CMatrix::zeros(rows, r);
    let mut v = CMatrix::zeros(cols, r);
    let mut sigma = DVector::zeros(r);
    for (j, &idx) in order.iter().take(r).enumerate() {
        u.set_column(j, &u_full.column(idx));
        for i in 0..cols {
            v[(i, j)] = vt_full[(idx, i)].conj();
        }
        sigma[j] = sv[idx];
    }
    Ok((u, sigma, v))
}

/// Full SVD, convenience wrapper used for spectra and condition numbers.
pub fn singular_values(m: &CMatrix) -> Result<DVector<f64>> {
    let r = m.nrows().min(m.ncols());
    let (_, sigma, _) = svd_truncated(m, r)?;
    Ok(sigma)
}

/// Solves G·X = B for Hermitian positive definite G without forming G^{-1}.
pub fn solve_gram(g: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let r = g.nrows();
    if g.ncols() != r || b.nrows() != r {
        return Err(Error::Dimension(format!(
            "gram solve: G is {}x{}, B has {} rows",
            g.nrows(),
            g.ncols(),
            b.nrows()
        )));
    }
    let eig = nalgebra::SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if lmax.is_nan() || lmax <= 0.0 || lmin < GRAM_SINGULAR_RATIO * lmax {
        return Err(Error::SingularGram {
            ratio: if lmax > 0.0 { lmin / lmax } else { 0.0 },
        });
    }
    // X = Q Λ^{-1} Q^H B
    let qhb = eig.eigenvectors.adjoint() * b;
    let mut scaled = qhb;
    for i in 0..r {
        let row = scaled.row(i) / Complex64::new(eig.eigenvalues[i], 0.0);
        scaled.set_row(i, &row);
    }
    Ok(&eig.eigenvectors * scaled)
}

/// Right-multiplication by G^{-1} for Hermitian PD G: returns M·G^{-1}.
pub fn apply_inv_gram_right(m: &CMatrix, g: &CMatrix) -> Result<CMatrix> {
    // M G^{-1} = (G^{-1} M^H)^H since G is Hermitian.
    Ok(solve_gram(g, &m.adjoint())?.adjoint())
}

/// Minimum-residual solution of the over-determined system A·x ≈ b via QR.
pub fn lstsq(a: &CMatrix, b: &CVector) -> Result<CVector> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::Dimension(format!(
            "lstsq: system is {m}x{n}, expected rows >= cols"
        )));
    }
    if b.len() != m {
        return Err(Error::Dimension(format!(
            "lstsq: rhs length {} does not match {} rows",
            b.len(),
            m
        )));
    }
    let qr = a.clone().qr();
    let rmat = qr.r();
    let dmax = (0..n).map(|i| rmat[(i, i)].norm()).fold(0.0, f64::max);
    for i in 0..n {
        if rmat[(i, i)].norm() < RANK_TOL * dmax {
            return Err(Error::RankDeficient { col: i });
        }
    }
    let rhs = qr.q().adjoint() * b;
    rmat.solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficient { col: 0 })
}

/// Writes a matrix in "cmx v1": header `cmx <rows> <cols>`, one row per line,
/// entries as `<re> <im>` pairs separated by single spaces.
pub fn write_cmx(path: &Path, m: &CMatrix) -> Result<()> {
    let io_err = |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    let mut res: std::io::Result<()> = writeln!(w, "cmx {} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        if res.is_err() {
            break;
        }
        let mut line = String::new();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(' ');
            }
            let z = m[(i, j)];
            line.push_str(&format!("{} {}", z.re, z.im));
        }
        res = writeln!(w, "{line}");
    }
    res.and_then(|_| w.flush()).map_err(io_err)
}

pub fn read_cmx(path: &Path) -> Result<CMatrix> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: name.clone(),
        source: e,
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        file: name.clone(),
        line: line + 1,
        message,
    };

    let (lineno, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty file".into()))?;
    let header = header.map_err(|e| parse_err(lineno, e.to_string()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "cmx" {
        return Err(parse_err(lineno, format!("expected 'cmx <rows> <cols>', got '{header}'")));
    }
    let rows: usize = parts[1]
        .parse()
        .map_err(|_| parse_err(lineno, format!("bad row count '{}'", parts[1])))?;
    let cols: usize = parts[2]
        .parse()
        .map_err(|_| parse_err(lineno, format!("bad column count '{}'", parts[2])))?;

    let mut m = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| parse_err(i + 1, format!("missing row {i}")))?;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 * cols {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, found {}", 2 * cols, fields.len()),
            ));
        }
        for j in 0..cols {
            let re: f64 = fields[2 * j]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad real part '{}'", fields[2 * j])))?;
            let im: f64 = fields[2 * j + 1].parse().map_err(|_| {
                parse_err(lineno, format!("bad imaginary part '{}'", fields[2 * j + 1]))
            })?;
            if !re.is_finite() || !im.is_finite() {
                return Err(parse_err(lineno, "non-finite entry".into()));
            }
            m[(i, j)] = c64(re, im);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    #[test]
    fn svd_identity() {
        let m = CMatrix::identity(3, 3);
        let (u, sigma, v) = svd_truncated(&m, 2).unwrap();
        assert!((sigma[0] - 1.0).abs() < 1e-12 && (sigma[1] - 1.0).abs() < 1e-12);
        // U, V span the same 2-dim subspace of the standard basis columns.
        let approx = &u * CMatrix::from_diagonal(&sigma.map(|s| c64(s, 0.0))) * v.adjoint();
        assert!((&m - &approx).norm() - 1.0 < 1e-12);
    }

    #[test]
    fn svd_rank_one_scaling() {
        let u0 = CVector::from_vec(vec![c64(2.0, 0.0), c64(0.0, 0.0)]);
        let v0 = CVector::from_vec(vec![c64(0.0, 3.0), c64(0.0, 0.0), c64(0.0, 0.0)]);
        let m = &u0 * v0.adjoint();
        let (_, sigma, _) = svd_truncated(&m, 1).unwrap();
        assert!((sigma[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn svd_tail_energy_matches_gram_eigenvalues() {
        // Independent oracle: Frobenius tail of the best rank-3 approximation
        // equals the energy in the two smallest eigenvalues of M^H M.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_matrix(&mut rng, 8, 5);
        let eig = nalgebra::SymmetricEigen::new(m.adjoint() * &m);
        let mut lambdas: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let tail = (lambdas[3] + lambdas[4]).max(0.0).sqrt();

        let (u, sigma, v) = svd_truncated(&m, 3).unwrap();
        let approx = &u * CMatrix::from_diagonal(&sigma.map(|s| c64(s, 0.0))) * v.adjoint();
        assert!(((&m - approx).norm() - tail).abs() < 1e-10);
    }

    #[test]
    fn svd_factors_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 9, 6);
            let (u, sigma, v) = svd_truncated(&m, 4).unwrap();
            assert!((u.adjoint() * &u - CMatrix::identity(4, 4)).norm() < 1e-10);
            assert!((v.adjoint() * &v - CMatrix::identity(4, 4)).norm() < 1e-10);
            for i in 1..4 {
                assert!(sigma[i] <= sigma[i - 1] + 1e-14);
                assert!(sigma[i] >= 0.0);
            }
        }
    }

    #[test]
    fn svd_best_approximation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_matrix(&mut rng, 7, 6);
        let r = 3;
        let (u, sigma, v) = svd_truncated(&m, r).unwrap();
        let best = (&m - &u * CMatrix::from_diagonal(&sigma.map(|s| c64(s, 0.0))) * v.adjoint()).norm();
        for _ in 0..50 {
            let p = random_matrix(&mut rng, 7, r) * random_matrix(&mut rng, r, 6);
            assert!(best <= (&m - p).norm() + 1e-9);
        }
    }

    #[test]
    fn svd_rank_out_of_range() {
        let m = CMatrix::identity(3, 3);
        assert!(matches!(svd_truncated(&m, 4), Err(Error::Dimension(_))));
        assert!(matches!(svd_truncated(&m, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn gram_identity_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = random_matrix(&mut rng, 2, 3);
        let x = solve_gram(&CMatrix::identity(2, 2), &b).unwrap();
        assert!((&x - &b).norm() < 1e-14);

        let g = CMatrix::identity(2, 2) * c64(2.0, 0.0);
        let b2 = CMatrix::from_diagonal_element(2, 2, c64(4.0, 0.0));
        let x2 = solve_gram(&g, &b2).unwrap();
        assert!((&x2 - CMatrix::from_diagonal_element(2, 2, c64(2.0, 0.0))).norm() < 1e-14);
    }

    #[test]
    fn gram_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 3, 3);
            let g = a.adjoint() * &a + CMatrix::identity(3, 3);
            let b = random_matrix(&mut rng, 3, 4);
            let x = solve_gram(&g, &b).unwrap();
            let oracle = g.clone().try_inverse().unwrap() * &b;
            assert!((&x - oracle).norm() < 1e-10 * b.norm());
            assert!((&g * &x - &b).norm() <= GRAM_RESIDUAL_TOL * b.norm());
        }
    }

    #[test]
    fn gram_singular_guard() {
        let mut g = CMatrix::identity(2, 2);
        g[(1, 1)] = c64(1e-14, 0.0);
        let b = CMatrix::identity(2, 2);
        assert!(matches!(solve_gram(&g, &b), Err(Error::SingularGram { .. })));
    }

    #[test]
    fn lstsq_identity_and_orthonormal() {
        let b = CVector::from_vec(vec![c64(1.0, 2.0), c64(-0.5, 0.0)]);
        let x = lstsq(&CMatrix::identity(2, 2), &b).unwrap();
        assert!((&x - &b).norm() < 1e-14);

        // Tall matrix with orthonormal columns, rhs in its range.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_matrix(&mut rng, 8, 3);
        let q = m.qr().q();
        let coeffs = CVector::from_vec(vec![c64(1.0, -1.0), c64(0.0, 2.0), c64(3.0, 0.0)]);
        let rhs = &q * &coeffs;
        let x = lstsq(&q, &rhs).unwrap();
        assert!((&x - q.adjoint() * &rhs).norm() < 1e-12);
        assert!((&q * &x - &rhs).norm() < 1e-12);
    }

    #[test]
    fn lstsq_planted_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_matrix(&mut rng, 20, 6);
        let xstar = CVector::from_fn(6, |i, _| c64(i as f64 + 0.25, -(i as f64)));
        let b = &a * &xstar;
        let x = lstsq(&a, &b).unwrap();
        assert!((&x - &xstar).norm() < 1e-10 * xstar.norm());
    }

    #[test]
    fn lstsq_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let col = random_matrix(&mut rng, 10, 1);
        let mut a = CMatrix::zeros(10, 2);
        a.set_column(0, &col.column(0));
        a.set_column(1, &col.column(0));
        let b = CVector::zeros(10);
        assert!(matches!(lstsq(&a, &b), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn cmx_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_matrix(&mut rng, 4, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cmx");
        write_cmx(&path, &m).unwrap();
        let back = read_cmx(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn cmx_bad_header_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cmx");
        std::fs::write(&path, "bogus 2 2\n").unwrap();
        match read_cmx(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn cmx_roundtrip_exact(seed in 0u64..1000, rows in 1usize..6, cols in 1usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_matrix(&mut rng, rows, cols);
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("p.cmx");
                write_cmx(&path, &m).unwrap();
                prop_assert_eq!(read_cmx(&path).unwrap(), m);
            }

            #[test]
            fn gram_solve_residual(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_matrix(&mut rng, 4, 4);
                let g = a.adjoint() * &a + CMatrix::identity(4, 4) * c64(0.1, 0.0);
                let b = random_matrix(&mut rng, 4, 2);
                let x = solve_gram(&g, &b).unwrap();
                prop_assert!((g * x - &b).norm() <= GRAM_RESIDUAL_TOL * b.norm());
            }
        }
    }
}
