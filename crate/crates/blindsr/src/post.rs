//! Location extraction from recovered data matrices via a subspace
//! pseudospectrum on the vectorized Hankel lift, coefficient-product recovery
//! by least squares, and assignment-based scoring against ground truth.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lift::{hankel_lift, LiftShape};
use crate::linalg::{c64, lstsq, svd_truncated, CMatrix, CVector};
use crate::model::{steering_vector, wrap_distance};

/// Numerical-rank threshold for the signal subspace.
const SUBSPACE_RANK_TOL: f64 = 1e-10;
/// Golden-section refinement stops below this interval width.
const REFINE_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct LocationEstimate {
    /// K×r estimated locations in [0,1), ascending per signal.
    pub taus_hat: Vec<Vec<f64>>,
    /// Optional per-signal (τ, pseudospectrum) grid samples.
    pub pseudospectrum: Option<Vec<Vec<(f64, f64)>>>,
}

#[derive(Debug, Clone)]
pub struct CoefficientEstimate {
    /// K×r recovered products d_{k,p}·h_{k,p}, each of length s.
    pub products: Vec<Vec<CVector>>,
    /// ‖A·x − y‖₂ of the solved system.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    /// For estimate p, the index of the matched ground-truth spike.
    pub permutation: Vec<usize>,
    /// Wrap-around error of each matched pair, ordered by estimate index.
    pub errors: Vec<f64>,
    pub total: f64,
}

/// Projection distance of the s-channel steering manifold at τ from the
/// signal subspace spanned by the columns of `u` (sn1×r). Zero exactly at
/// spike locations of an exact rank-r lift.
fn subspace_distance(u: &CMatrix, s: usize, n1: usize, tau: f64) -> f64 {
    let r = u.ncols();
    let steering: Vec<Complex64> = (0..n1)
        .map(|b| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * b as f64 * tau))
        .collect();
    // W = U^H (a_τ ⊗ I_s), an r×s block of projections onto the subspace.
    let mut w = CMatrix::zeros(r, s);
    for q in 0..r {
        for ch in 0..s {
            let mut acc = Complex64::default();
            for (b, a) in steering.iter().enumerate() {
                acc += u[(b * s + ch, q)].conj() * a;
            }
            w[(q, ch)] = acc;
        }
    }
    // Squared distance of the best channel combination: λ_min(I − W^H W / n1).
    let gram = CMatrix::identity(s, s) - (w.adjoint() * &w) / c64(n1 as f64, 0.0);
    let eig = nalgebra::SymmetricEigen::new(gram);
    eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min).max(0.0)
}

struct MusicOutput {
    taus: Vec<f64>,
    spectrum: Vec<(f64, f64)>,
}

fn music_impl(xhat: &CMatrix, r: usize, grid_size: usize) -> Result<MusicOutput> {
    let (s, n) = xhat.shape();
    let shape = LiftShape::balanced(s, n);
    if shape.n1 <= r || shape.n2 <= r {
        return Err(Error::Config(format!(
            "pencil {}x{} too small to resolve {r} spikes",
            shape.n1, shape.n2
        )));
    }
    let grid_size = grid_size.max(8 * n);
    let z = hankel_lift(xhat, &shape)?;
    let probe = r + 1;
    let (u_ext, sigma, _) = svd_truncated(&z, probe.min((s * shape.n1).min(shape.n2)))?;
    if sigma[0] == 0.0 || sigma[r - 1] / sigma[0] < SUBSPACE_RANK_TOL {
        return Err(Error::SubspaceDeficient { expected: r });
    }
    let u = u_ext.columns(0, r).into_owned();

    let dist = |tau: f64| subspace_distance(&u, s, shape.n1, tau);
    let grid: Vec<f64> = (0..grid_size)
        .map(|g| dist(g as f64 / grid_size as f64))
        .collect();

    // Wrap-around local minima of the projection distance.
    let mut minima: Vec<usize> = (0..grid_size)
        .filter(|&g| {
            let prev = grid[(g + grid_size - 1) % grid_size];
            let next = grid[(g + 1) % grid_size];
            grid[g] <= prev && grid[g] <= next
        })
        .collect();
    minima.sort_by(|&a, &b| grid[a].partial_cmp(&grid[b]).unwrap());

    let cell = 1.0 / grid_size as f64;
    let guard = 0.5 * cell;
    let mut picked: Vec<usize> = Vec::new();
    for &g in &minima {
        if picked.len() == r {
            break;
        }
        let tau = g as f64 * cell;
        if picked
            .iter()
            .all(|&p| wrap_distance(tau, p as f64 * cell) >= guard)
        {
            picked.push(g);
        }
    }
    if picked.len() < r {
        // Degenerate spectrum; fall back to the best remaining minima.
        for &g in &minima {
            if picked.len() == r {
                break;
            }
            if !picked.contains(&g) {
                picked.push(g);
            }
        }
    }
    if picked.len() < r {
        return Err(Error::SubspaceDeficient { expected: r });
    }

    let mut taus: Vec<f64> = picked
        .into_iter()
        .map(|g| {
            let center = g as f64 * cell;
            let tau = golden_section(&dist, center - cell, center + cell);
            tau.rem_euclid(1.0)
        })
        .collect();
    taus.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let spectrum = (0..grid_size)
        .map(|g| (g as f64 * cell, 1.0 / grid[g].max(f64::MIN_POSITIVE)))
        .collect();
    Ok(MusicOutput { taus, spectrum })
}

fn golden_section(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1.rem_euclid(1.0));
    let mut f2 = f(x2.rem_euclid(1.0));
    while hi - lo > REFINE_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1.rem_euclid(1.0));
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2.rem_euclid(1.0));
        }
    }
    0.5 * (lo + hi)
}

/// Estimates the r spike locations of one recovered data matrix from the
/// peaks of the subspace pseudospectrum of its Hankel lift.
pub fn smoothed_music(xhat: &CMatrix, r: usize, grid_size: usize) -> Result<Vec<f64>> {
    Ok(music_impl(xhat, r, grid_size)?.taus)
}

/// As [`smoothed_music`] for all K signals, keeping the sampled pseudospectra.
pub fn locate_all(xhats: &[CMatrix], r: usize, grid_size: usize) -> Result<LocationEstimate> {
    let mut taus_hat = Vec::with_capacity(xhats.len());
    let mut spectra = Vec::with_capacity(xhats.len());
    for x in xhats {
        let out = music_impl(x, r, grid_size)?;
        taus_hat.push(out.taus);
        spectra.push(out.spectrum);
    }
    Ok(LocationEstimate {
        taus_hat,
        pseudospectrum: Some(spectra),
    })
}

/// Recovers the products d_{k,p}·h_{k,p} by solving the over-determined
/// system y[j] = Σ_{k,p} a_{τ_{k,p}}[j] · b_{k,j}^H (d_{k,p} h_{k,p}).
pub fn recover_coefficients(
    taus_hat: &[Vec<f64>],
    bases: &[CMatrix],
    y: &CVector,
) -> Result<CoefficientEstimate> {
    let k_count = taus_hat.len();
    if bases.len() != k_count || k_count == 0 {
        return Err(Error::Dimension(format!(
            "{} location sets vs {} bases",
            k_count,
            bases.len()
        )));
    }
    let n = y.len();
    let s = bases[0].ncols();
    let r = taus_hat[0].len();
    let cols = k_count * r * s;
    if n < cols {
        return Err(Error::Config(format!(
            "need n >= K·r·s = {cols} measurements, have {n}"
        )));
    }
    let mut design = CMatrix::zeros(n, cols);
    for (k, (taus, basis)) in taus_hat.iter().zip(bases).enumerate() {
        if basis.nrows() != n || basis.ncols() != s || taus.len() != r {
            return Err(Error::Dimension("inconsistent basis or location shapes".into()));
        }
        for (p, &tau) in taus.iter().enumerate() {
            let a = steering_vector(tau, n)?;
            for u in 0..s {
                let col = (k * r + p) * s + u;
                for j in 0..n {
                    design[(j, col)] = a[j] * basis[(j, u)];
                }
            }
        }
    }
    let x = lstsq(&design, y)?;
    let residual = (&design * &x - y).norm();
    let products = (0..k_count)
        .map(|k| {
            (0..r)
                .map(|p| {
                    let offset = (k * r + p) * s;
                    CVector::from_fn(s, |u, _| x[offset + u])
                })
                .collect()
        })
        .collect();
    Ok(CoefficientEstimate { products, residual })
}

/// Exact minimum-cost assignment (Hungarian algorithm with potentials).
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut assigned = vec![n; n + 1]; // assigned[j] = row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 0..n {
        assigned[n] = i;
        let mut j0 = n;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned[j0];
            let mut delta = inf;
            let mut j1 = n;
            for j in 0..n {
                if !used[j] {
                    let cur = cost[i0][j] - u[i0 + 1] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    if assigned[j] < n {
                        u[assigned[j] + 1] += delta;
                    } else {
                        u[n] += delta;
                    }
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned[j0] == n {
                break;
            }
        }
        while j0 != n {
            let j1 = way[j0];
            assigned[j0] = assigned[j1];
            j0 = j1;
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 0..n {
        if assigned[j] < n {
            row_to_col[assigned[j]] = j;
        }
    }
    row_to_col
}

/// Matches estimated locations to ground truth per signal, minimizing the
/// total wrap-around distance.
pub fn match_and_score(taus_hat: &[Vec<f64>], taus_true: &[Vec<f64>]) -> Result<Vec<MatchResult>> {
    if taus_hat.len() != taus_true.len() {
        return Err(Error::Dimension(format!(
            "{} estimated signals vs {} true",
            taus_hat.len(),
            taus_true.len()
        )));
    }
    taus_hat
        .iter()
        .zip(taus_true)
        .map(|(est, truth)| {
            if est.len() != truth.len() {
                return Err(Error::Dimension(format!(
                    "{} estimates vs {} true spikes",
                    est.len(),
                    truth.len()
                )));
            }
            let cost: Vec<Vec<f64>> = est
                .iter()
                .map(|&a| truth.iter().map(|&b| wrap_distance(a, b)).collect())
                .collect();
            let permutation = hungarian(&cost);
            let errors: Vec<f64> = permutation
                .iter()
                .enumerate()
                .map(|(i, &j)| cost[i][j])
                .collect();
            let total = errors.iter().sum();
            Ok(MatchResult {
                permutation,
                errors,
                total,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_data_matrix, data_matrices, generate_instance, sense_forward, Dims, InstanceRecipe};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_spike_location() {
        let dims = Dims { k: 1, r: 1, s: 2, n: 32 };
        let mut gt = generate_instance(&InstanceRecipe::random(), dims, 1).unwrap();
        gt.taus[0][0] = 0.3;
        let x = build_data_matrix(&gt, 0);
        let taus = smoothed_music(&x, 1, 16 * 32).unwrap();
        assert!((taus[0] - 0.3).abs() < 1e-6, "got {}", taus[0]);
    }

    #[test]
    fn two_spike_locations() {
        let dims = Dims { k: 1, r: 2, s: 2, n: 32 };
        let mut gt = generate_instance(&InstanceRecipe::random(), dims, 2).unwrap();
        gt.taus[0] = vec![0.2, 0.7];
        let x = build_data_matrix(&gt, 0);
        let taus = smoothed_music(&x, 2, 16 * 32).unwrap();
        assert!((taus[0] - 0.2).abs() < 1e-6 && (taus[1] - 0.7).abs() < 1e-6, "got {taus:?}");
    }

    #[test]
    fn pseudospectrum_deep_at_spikes() {
        let dims = Dims { k: 1, r: 3, s: 2, n: 48 };
        let gt = generate_instance(&InstanceRecipe::separated(), dims, 3).unwrap();
        let x = build_data_matrix(&gt, 0);
        let shape = LiftShape::balanced(dims.s, dims.n);
        let z = hankel_lift(&x, &shape).unwrap();
        let (u, _, _) = svd_truncated(&z, 3).unwrap();
        let grid_max = (0..(8 * 48))
            .map(|g| subspace_distance(&u, dims.s, shape.n1, g as f64 / (8.0 * 48.0)))
            .fold(0.0, f64::max);
        for &tau in &gt.taus[0] {
            let d = subspace_distance(&u, dims.s, shape.n1, tau);
            assert!(d <= 1e-8 * grid_max, "distance {d} at spike {tau}");
        }
    }

    #[test]
    fn rank_deficient_lift_rejected() {
        let dims = Dims { k: 1, r: 2, s: 2, n: 24 };
        let mut gt = generate_instance(&InstanceRecipe::random(), dims, 4).unwrap();
        gt.taus[0][1] = gt.taus[0][0]; // coincident spikes: lift has rank 1
        let x = build_data_matrix(&gt, 0);
        assert!(matches!(
            smoothed_music(&x, 2, 16 * 24),
            Err(Error::SubspaceDeficient { .. })
        ));
    }

    #[test]
    fn coefficients_from_exact_locations() {
        let dims = Dims { k: 2, r: 2, s: 3, n: 48 };
        let gt = generate_instance(&InstanceRecipe::separated(), dims, 5).unwrap();
        let y = sense_forward(&gt.bases, &data_matrices(&gt)).unwrap();
        let est = recover_coefficients(&gt.taus, &gt.bases, &y).unwrap();
        assert!(est.residual <= 1e-10 * y.norm());
        for k in 0..2 {
            for p in 0..2 {
                let truth = &gt.coeffs[k][p] * gt.amps[k][p];
                let got = &est.products[k][p];
                assert!(
                    (got - &truth).norm() <= 1e-8 * truth.norm(),
                    "product mismatch at ({k},{p})"
                );
            }
        }
    }

    #[test]
    fn scalar_coefficient_system() {
        // K=1, r=1, s=1, B = ones: y[j] = a_τ[j]·x, so x is the LS mean of
        // y[j]/a_τ[j] (unit-modulus a).
        let n = 16;
        let tau = 0.37;
        let a = steering_vector(tau, n).unwrap();
        let truth = c64(1.5, -0.25);
        let y = CVector::from_fn(n, |j, _| a[j] * truth);
        let basis = CMatrix::from_element(n, 1, c64(1.0, 0.0));
        let est = recover_coefficients(&[vec![tau]], &[basis], &y).unwrap();
        let mean = y
            .iter()
            .zip(a.iter())
            .map(|(yj, aj)| yj / aj)
            .sum::<Complex64>()
            / c64(n as f64, 0.0);
        assert!((est.products[0][0][0] - mean).norm() < 1e-12);
        assert!((est.products[0][0][0] - truth).norm() < 1e-12);
    }

    #[test]
    fn zero_measurement_zero_products() {
        let dims = Dims { k: 1, r: 2, s: 2, n: 24 };
        let gt = generate_instance(&InstanceRecipe::separated(), dims, 6).unwrap();
        let est = recover_coefficients(&gt.taus, &gt.bases, &CVector::zeros(24)).unwrap();
        assert!(est.residual <= 1e-14);
        for row in &est.products {
            for v in row {
                assert!(v.norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_locations_rank_deficient() {
        let n = 24;
        let dims = Dims { k: 2, r: 1, s: 2, n };
        let mut gt = generate_instance(&InstanceRecipe::random(), dims, 7).unwrap();
        gt.bases[1] = gt.bases[0].clone();
        gt.taus[1][0] = gt.taus[0][0];
        let y = sense_forward(&gt.bases, &data_matrices(&gt)).unwrap();
        assert!(matches!(
            recover_coefficients(&gt.taus, &gt.bases, &y),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn match_trivial_and_wrap() {
        let res = match_and_score(&[vec![0.1, 0.4]], &[vec![0.1, 0.4]]).unwrap();
        assert!(res[0].total == 0.0);

        let res = match_and_score(&[vec![0.99]], &[vec![0.01]]).unwrap();
        assert!((res[0].errors[0] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn match_agrees_with_brute_force() {
        fn brute_force(est: &[f64], truth: &[f64]) -> f64 {
            fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
                if items.len() <= 1 {
                    return vec![items];
                }
                let mut out = Vec::new();
                for i in 0..items.len() {
                    let mut rest = items.clone();
                    let head = rest.remove(i);
                    for mut tail in permutations(rest) {
                        tail.insert(0, head);
                        out.push(tail);
                    }
                }
                out
            }
            permutations((0..truth.len()).collect())
                .into_iter()
                .map(|perm| {
                    perm.iter()
                        .enumerate()
                        .map(|(i, &j)| wrap_distance(est[i], truth[j]))
                        .sum::<f64>()
                })
                .fold(f64::MAX, f64::min)
        }

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for r in 2..=6usize {
            for _ in 0..10 {
                let est: Vec<f64> = (0..r).map(|_| rng.gen_range(0.0..1.0)).collect();
                let truth: Vec<f64> = (0..r).map(|_| rng.gen_range(0.0..1.0)).collect();
                let res = match_and_score(std::slice::from_ref(&est), std::slice::from_ref(&truth)).unwrap();
                let oracle = brute_force(&est, &truth);
                assert!(
                    (res[0].total - oracle).abs() < 1e-12,
                    "r={r}: hungarian {} vs brute {oracle}",
                    res[0].total
                );
            }
        }
    }
}
