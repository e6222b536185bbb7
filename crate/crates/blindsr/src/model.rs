//! Ground-truth synthesis and the sensing operators: point-source instances,
//! the per-signal forward/adjoint maps, and the additive noise model.

use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, read_cmx, write_cmx, CMatrix, CVector};

/// Bounded rejection sampling budget for the separated recipe.
const SEPARATION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Number of superimposed signals.
    pub k: usize,
    /// Spikes per signal.
    pub r: usize,
    /// Subspace dimension of the point spread functions.
    pub s: usize,
    /// Number of samples in the measurement vector.
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecipeMode {
    Random,
    Separated,
    Conditioned,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InstanceRecipe {
    pub mode: RecipeMode,
    /// Condition number, required for `Conditioned`.
    pub kappa: Option<f64>,
    /// Place locations on the grid {1/n, ..., 1} (conditioned mode).
    pub grid_locked: bool,
}

impl InstanceRecipe {
    pub fn random() -> Self {
        Self {
            mode: RecipeMode::Random,
            kappa: None,
            grid_locked: false,
        }
    }

    pub fn separated() -> Self {
        Self {
            mode: RecipeMode::Separated,
            kappa: None,
            grid_locked: false,
        }
    }

    pub fn conditioned(kappa: f64) -> Self {
        Self {
            mode: RecipeMode::Conditioned,
            kappa: Some(kappa),
            grid_locked: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub dims: Dims,
    /// Locations in [0,1), K×r.
    pub taus: Vec<Vec<f64>>,
    /// Amplitudes d_{k,p}, K×r.
    pub amps: Vec<Vec<Complex64>>,
    /// Unit-norm coefficient vectors h_{k,p}, K×r, each of length s.
    pub coeffs: Vec<Vec<CVector>>,
    /// Subspace bases B_k, K matrices of shape n×s.
    pub bases: Vec<CMatrix>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Measurement {
    pub y: CVector,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

/// Steering vector a_τ with entry j equal to exp(−i·2π·j·τ).
pub fn steering_vector(tau: f64, n: usize) -> Result<CVector> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Domain(format!("location {tau} outside [0,1)")));
    }
    Ok(CVector::from_fn(n, |j, _| {
        Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * j as f64 * tau)
    }))
}

/// Wrap-around distance on the unit circle of locations.
pub fn wrap_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 1.0;
    d.min(1.0 - d)
}

fn min_wrap_gap(taus: &[f64]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..taus.len() {
        for j in (i + 1)..taus.len() {
            gap = gap.min(wrap_distance(taus[i], taus[j]));
        }
    }
    gap
}

fn unit_complex_gaussian(rng: &mut ChaCha8Rng, len: usize) -> CVector {
    let mut v = CVector::from_fn(len, |_, _| {
        c64(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let norm = v.norm();
    if norm > 0.0 {
        v /= c64(norm, 0.0);
    }
    v
}

/// Draws a ground-truth instance. Deterministic given (recipe, dims, seed);
/// for the conditioned recipe the draw order is independent of κ so matched
/// seeds yield matched instances across condition numbers.
pub fn generate_instance(recipe: &InstanceRecipe, dims: Dims, seed: u64) -> Result<GroundTruth> {
    let Dims { k, r, s, n } = dims;
    if k < 1 || r < 1 || s < 1 {
        return Err(Error::Config("K, r, s must all be >= 1".into()));
    }
    if n < 2 * r {
        return Err(Error::Config(format!("n = {n} too small for r = {r} spikes")));
    }
    if matches!(recipe.mode, RecipeMode::Conditioned) && recipe.kappa.is_none() {
        return Err(Error::Config("conditioned recipe requires kappa".into()));
    }
    if let Some(kappa) = recipe.kappa {
        if kappa.is_nan() || kappa < 1.0 {
            return Err(Error::Config(format!("kappa must be >= 1, got {kappa}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let total = k * r;
    let flat_taus: Vec<f64> = match recipe.mode {
        RecipeMode::Random => (0..total).map(|_| rng.gen_range(0.0..1.0)).collect(),
        RecipeMode::Separated => {
            let gap = 1.0 / n as f64;
            if total as f64 * gap > 1.0 {
                return Err(Error::InfeasibleSeparation {
                    spikes: total,
                    gap,
                    attempts: 0,
                });
            }
            let mut found = None;
            for _ in 0..SEPARATION_ATTEMPTS {
                let cand: Vec<f64> = (0..total).map(|_| rng.gen_range(0.0..1.0)).collect();
                if min_wrap_gap(&cand) >= gap {
                    found = Some(cand);
                    break;
                }
            }
            found.ok_or(Error::InfeasibleSeparation {
                spikes: total,
                gap,
                attempts: SEPARATION_ATTEMPTS,
            })?
        }
        RecipeMode::Conditioned => {
            // Distinct indices into the grid {1/n, ..., 1}, with the endpoint
            // 1 identified with 0.
            if total > n {
                return Err(Error::Config(format!(
                    "cannot place {total} distinct grid locations with n = {n}"
                )));
            }
            let mut indices: Vec<usize> = (1..=n).collect();
            for i in 0..total {
                let j = rng.gen_range(i..n);
                indices.swap(i, j);
            }
            indices[..total]
                .iter()
                .map(|&i| if i == n { 0.0 } else { i as f64 / n as f64 })
                .collect()
        }
    };
    let taus: Vec<Vec<f64>> = flat_taus.chunks(r).map(|c| c.to_vec()).collect();

    let mut amps = vec![vec![Complex64::default(); r]; k];
    for row in amps.iter_mut() {
        for (p, d) in row.iter_mut().enumerate() {
            let phase: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let magnitude = match recipe.mode {
                RecipeMode::Conditioned => {
                    let kappa = recipe.kappa.unwrap();
                    // σ_{k,p} linearly spaced from 1 down to 1/κ.
                    if r == 1 {
                        1.0
                    } else {
                        1.0 + (1.0 / kappa - 1.0) * p as f64 / (r - 1) as f64
                    }
                }
                _ => {
                    let c: f64 = rng.gen_range(0.0..=1.0);
                    1.0 + 10f64.powf(c)
                }
            };
            *d = Complex64::from_polar(magnitude, -phase);
        }
    }

    let coeffs: Vec<Vec<CVector>> = (0..k)
        .map(|_| (0..r).map(|_| unit_complex_gaussian(&mut rng, s)).collect())
        .collect();

    let bound = 3f64.sqrt();
    let bases: Vec<CMatrix> = (0..k)
        .map(|_| CMatrix::from_fn(n, s, |_, _| c64(rng.gen_range(-bound..bound), 0.0)))
        .collect();

    Ok(GroundTruth {
        dims,
        taus,
        amps,
        coeffs,
        bases,
        seed,
    })
}

/// X_k = Σ_p d_{k,p} · h_{k,p} · a_{τ_{k,p}}^T  (s×n, rank ≤ r).
pub fn build_data_matrix(gt: &GroundTruth, k: usize) -> CMatrix {
    let Dims { s, n, r, .. } = gt.dims;
    let mut x = CMatrix::zeros(s, n);
    for p in 0..r {
        let a = steering_vector(gt.taus[k][p], n).expect("stored location in range");
        let h = &gt.coeffs[k][p];
        let d = gt.amps[k][p];
        for col in 0..n {
            let scale = d * a[col];
            for row in 0..s {
                x[(row, col)] += scale * h[row];
            }
        }
    }
    x
}

pub fn data_matrices(gt: &GroundTruth) -> Vec<CMatrix> {
    (0..gt.dims.k).map(|k| build_data_matrix(gt, k)).collect()
}

/// y[j] = Σ_k b_{k,j}^H X_k e_j, where b_{k,j} is the j-th column of B_k^H.
pub fn sense_forward(bases: &[CMatrix], xs: &[CMatrix]) -> Result<CVector> {
    if bases.len() != xs.len() || bases.is_empty() {
        return Err(Error::Dimension(format!(
            "sense_forward: {} bases vs {} data matrices",
            bases.len(),
            xs.len()
        )));
    }
    let n = bases[0].nrows();
    let mut y = CVector::zeros(n);
    for (b, x) in bases.iter().zip(xs) {
        let s = b.ncols();
        if x.nrows() != s || x.ncols() != n || b.nrows() != n {
            return Err(Error::Dimension(format!(
                "sense_forward: basis {}x{} incompatible with data matrix {}x{}",
                b.nrows(),
                b.ncols(),
                x.nrows(),
                x.ncols()
            )));
        }
        for j in 0..n {
            // b_{k,j}^H X e_j  =  (row j of B_k) · (column j of X)
            let mut acc = Complex64::default();
            for u in 0..s {
                acc += b[(j, u)] * x[(u, j)];
            }
            y[j] += acc;
        }
    }
    Ok(y)
}

/// A_k*(v): column j equals v[j]·b_{k,j} with b_{k,j} the j-th column of B_k^H.
pub fn sense_adjoint(basis: &CMatrix, v: &CVector) -> Result<CMatrix> {
    let (n, s) = basis.shape();
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "sense_adjoint: vector length {} vs {} samples",
            v.len(),
            n
        )));
    }
    Ok(CMatrix::from_fn(s, n, |u, j| v[j] * basis[(j, u)].conj()))
}

/// y' = y + σ·z/‖z‖ with σ = ‖y‖ / 10^(snr_db/20) and z complex Gaussian.
/// An infinite SNR leaves the measurement untouched.
pub fn add_noise(y: &CVector, snr_db: f64, seed: u64) -> Measurement {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Measurement {
            y: y.clone(),
            snr_db: None,
            seed,
        };
    }
    let sigma = y.norm() / 10f64.powf(snr_db / 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = unit_complex_gaussian(&mut rng, y.len());
    Measurement {
        y: y + z * c64(sigma, 0.0),
        snr_db: Some(snr_db),
        seed,
    }
}

// ---------------------------------------------------------------------------
// "gt v1" serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GtDoc {
    schema: String,
    dims: Dims,
    seed: u64,
    taus: Vec<Vec<f64>>,
    amps: Vec<Vec<[f64; 2]>>,
    coeffs: Vec<Vec<Vec<[f64; 2]>>>,
    bases: Vec<String>,
}

/// Writes `gt.json` plus one `basis_<k>.cmx` per signal into `dir`.
pub fn save_ground_truth(dir: &Path, gt: &GroundTruth) -> Result<Vec<String>> {
    let mut basis_files = Vec::new();
    for (k, b) in gt.bases.iter().enumerate() {
        let name = format!("basis_{k}.cmx");
        write_cmx(&dir.join(&name), b)?;
        basis_files.push(name);
    }
    let doc = GtDoc {
        schema: "gt v1".into(),
        dims: gt.dims,
        seed: gt.seed,
        taus: gt.taus.clone(),
        amps: gt
            .amps
            .iter()
            .map(|row| row.iter().map(|d| [d.re, d.im]).collect())
            .collect(),
        coeffs: gt
            .coeffs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|h| h.iter().map(|z| [z.re, z.im]).collect())
                    .collect()
            })
            .collect(),
        bases: basis_files.clone(),
    };
    let path = dir.join("gt.json");
    let io_err = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    let text = serde_json::to_string_pretty(&doc).expect("gt doc serializes");
    std::fs::write(&path, text).map_err(io_err)?;
    let mut files = vec!["gt.json".to_string()];
    files.extend(basis_files);
    Ok(files)
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: name.clone(),
        source: e,
    })?;
    let doc: GtDoc = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: name.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if doc.schema != "gt v1" {
        return Err(Error::Parse {
            file: name,
            line: 1,
            message: format!("unsupported schema '{}'", doc.schema),
        });
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let bases = doc
        .bases
        .iter()
        .map(|f| read_cmx(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruth {
        dims: doc.dims,
        seed: doc.seed,
        taus: doc.taus,
        amps: doc
            .amps
            .iter()
            .map(|row| row.iter().map(|p| c64(p[0], p[1])).collect())
            .collect(),
        coeffs: doc
            .coeffs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|h| CVector::from_iterator(h.len(), h.iter().map(|p| c64(p[0], p[1]))))
                    .collect()
            })
            .collect(),
        bases,
    })
}
