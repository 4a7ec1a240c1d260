//! Transfer unitary `U = exp(−iHL)` and classical propagation.
//!
//! `H` is diagonalised once as `H = Q Λ Qᵀ` with an implicit-shift QL
//! sweep; every propagation length is then `Q exp(−iΛz) Qᵀ`. A zero
//! coupling splits the sweep, so eigenvectors never straddle a decoupled
//! boundary and the resulting unitary is exactly block diagonal.

use ndarray::Array2;
use num_complex::Complex64;

use crate::device_model::TridiagonalHamiltonian;
use crate::error::{Error, Result};

/// Profiles are sampled at this many points when the caller has no preference.
pub const DEFAULT_PROFILE_STEPS: usize = 200;

const MAX_QL_ITERATIONS: usize = 64;

/// Eigendecomposition of a real symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct Propagator {
    eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector for `eigenvalues[k]`.
    eigenvectors: Array2<f64>,
}

impl Propagator {
    pub fn new(h: &TridiagonalHamiltonian) -> Result<Self> {
        let (eigenvalues, eigenvectors) = tridiagonal_eigen(h.diag(), h.offdiag())?;
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Array2<f64> {
        &self.eigenvectors
    }

    fn phases(&self, z: f64) -> Vec<Complex64> {
        self.eigenvalues
            .iter()
            .map(|&lambda| Complex64::from_polar(1.0, -lambda * z))
            .collect()
    }

    /// Full unitary at propagation distance `z` (mm). `z = 0` gives the identity.
    pub fn matrix_at(&self, z: f64) -> Array2<Complex64> {
        let n = self.dim();
        let q = &self.eigenvectors;
        let phases = self.phases(z);
        let mut u = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, ph) in phases.iter().enumerate() {
                    acc += ph * (q[[i, k]] * q[[j, k]]);
                }
                u[[i, j]] = acc;
                u[[j, i]] = acc;
            }
        }
        u
    }

    /// Column `input` (0-based) of the unitary at `z`: the output amplitudes
    /// for light launched into one guide.
    pub fn column_at(&self, z: f64, input: usize) -> Vec<Complex64> {
        let n = self.dim();
        let q = &self.eigenvectors;
        let weighted: Vec<Complex64> = self
            .phases(z)
            .into_iter()
            .enumerate()
            .map(|(k, ph)| ph * q[[input, k]])
            .collect();
        (0..n)
            .map(|i| {
                weighted
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * q[[i, k]])
                    .sum()
            })
            .collect()
    }
}

/// Implicit QL with Wilkinson-style shifts on a symmetric tridiagonal
/// matrix. Returns eigenvalues and the orthogonal matrix whose columns are
/// the eigenvectors.
pub fn tridiagonal_eigen(diag: &[f64], offdiag: &[f64]) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = diag.len();
    if n == 0 || offdiag.len() + 1 != n {
        return Err(Error::DimensionMismatch {
            what: "tridiagonal off-diagonal".into(),
            expected: n.saturating_sub(1),
            found: offdiag.len(),
        });
    }
    let mut d = diag.to_vec();
    let mut e = offdiag.to_vec();
    e.push(0.0);
    let mut z = Array2::<f64>::eye(n);

    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m] == 0.0 || e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > MAX_QL_ITERATIONS {
                return Err(Error::Numerical(format!(
                    "tridiagonal eigensolver did not converge for eigenvalue {}",
                    l + 1
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let zf = z[[k, i + 1]];
                    let zi = z[[k, i]];
                    z[[k, i + 1]] = s * zi + c * zf;
                    z[[k, i]] = c * zi - s * zf;
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok((d, z))
}

/// Unitary of the whole array at a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferUnitary {
    matrix: Array2<Complex64>,
    length: f64,
}

impl TransferUnitary {
    /// Wrap an arbitrary square matrix, e.g. a measured or synthetic unitary.
    pub fn from_matrix(matrix: Array2<Complex64>, length: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "transfer matrix must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix, length })
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.matrix
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `max |(U†U − I)_ij|`.
    pub fn unitarity_error(&self) -> f64 {
        let u = &self.matrix;
        let prod = u.t().mapv(|x| x.conj()).dot(u);
        prod.indexed_iter()
            .map(|((i, j), x)| {
                let target = if i == j { 1.0 } else { 0.0 };
                (x - target).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Row-major CSV with real and imaginary parts interleaved per entry.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut out = String::new();
        let header: Vec<String> = (1..=n).flat_map(|j| [format!("re{j}"), format!("im{j}")]).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in self.matrix.rows() {
            let cells: Vec<String> = row
                .iter()
                .flat_map(|x| [x.re.to_string(), x.im.to_string()])
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn unitary(h: &TridiagonalHamiltonian, length: f64) -> Result<TransferUnitary> {
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "propagation length must be positive, got {length}"
        )));
    }
    let prop = Propagator::new(h)?;
    Ok(TransferUnitary {
        matrix: prop.matrix_at(length),
        length,
    })
}

pub(crate) fn check_guide(index: usize, n: usize) -> Result<usize> {
    if index == 0 || index > n {
        return Err(Error::IndexOutOfRange {
            what: "guide",
            index,
            max: n,
        });
    }
    Ok(index - 1)
}

/// Output power distribution for light launched into `input_guide` (1-based).
pub fn output_power(u: &TransferUnitary, input_guide: usize) -> Result<Vec<f64>> {
    let col = check_guide(input_guide, u.dim())?;
    Ok(u.matrix.column(col).iter().map(|a| a.norm_sqr()).collect())
}

/// Intensity along the array, one row per sampled distance.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityProfile {
    pub z_points: Vec<f64>,
    /// `z_points.len() × N`.
    pub intensities: Array2<f64>,
}

impl IntensityProfile {
    pub fn to_csv(&self) -> String {
        let n = self.intensities.ncols();
        let mut out = String::from("z_mm");
        for j in 1..=n {
            out.push_str(&format!(",P{j}"));
        }
        out.push('\n');
        for (z, row) in self.z_points.iter().zip(self.intensities.rows()) {
            out.push_str(&z.to_string());
            for p in row {
                out.push(',');
                out.push_str(&p.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Sample the intensity at `n_steps` evenly spaced distances from 0 to `length`.
pub fn propagation_profile(
    h: &TridiagonalHamiltonian,
    length: f64,
    n_steps: usize,
    input_guide: usize,
) -> Result<IntensityProfile> {
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "propagation length must be positive, got {length}"
        )));
    }
    if n_steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "a profile needs at least 2 steps, got {n_steps}"
        )));
    }
    let input = check_guide(input_guide, h.dim())?;
    let prop = Propagator::new(h)?;
    let z_points: Vec<f64> = (0..n_steps)
        .map(|k| k as f64 * length / (n_steps - 1) as f64)
        .collect();
    let mut intensities = Array2::zeros((n_steps, h.dim()));
    for (k, &z) in z_points.iter().enumerate() {
        for (m, a) in prop.column_at(z, input).iter().enumerate() {
            intensities[[k, m]] = a.norm_sqr();
        }
    }
    Ok(IntensityProfile {
        z_points,
        intensities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn ham(diag: Vec<f64>, off: Vec<f64>) -> TridiagonalHamiltonian {
        TridiagonalHamiltonian::new(diag, off).unwrap()
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let u = unitary(&ham(vec![0.0; 5], vec![0.0; 4]), 24.0).unwrap();
        for ((i, j), x) in u.matrix().indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            assert_eq!(*x, Complex64::new(target, 0.0));
        }
    }

    #[test]
    fn balanced_two_mode_coupler() {
        let c = 0.1;
        let u = unitary(&ham(vec![0.0, 0.0], vec![c]), FRAC_PI_4 / c).unwrap();
        let m = u.matrix();
        let (cs, sn) = (FRAC_PI_4.cos(), FRAC_PI_4.sin());
        let expect = [[Complex64::new(cs, 0.0), Complex64::new(0.0, -sn)], [Complex64::new(0.0, -sn), Complex64::new(cs, 0.0)]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m[[i, j]] - expect[i][j]).norm() < 1e-14);
            }
        }
        let p = output_power(&u, 1).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-14 && (p[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_output_power_is_delta() {
        let u = TransferUnitary::from_matrix(Array2::eye(5), 1.0).unwrap();
        assert_eq!(output_power(&u, 3).unwrap(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(output_power(&u, 0).is_err());
        assert!(output_power(&u, 6).is_err());
    }

    #[test]
    fn rejects_bad_lengths() {
        let h = ham(vec![0.0; 3], vec![0.1; 2]);
        assert!(unitary(&h, 0.0).is_err());
        assert!(unitary(&h, -1.0).is_err());
        assert!(propagation_profile(&h, 10.0, 1, 1).is_err());
        assert!(propagation_profile(&h, 10.0, 5, 4).is_err());
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let h = ham(vec![3.1, 3.0, 3.15, 3.05], vec![0.1, 0.07, 0.12]);
        let (vals, q) = tridiagonal_eigen(h.diag(), h.offdiag()).unwrap();
        let lambda = Array2::from_diag(&ndarray::Array1::from(vals));
        let back = q.dot(&lambda).dot(&q.t());
        let dense = h.to_dense();
        for (a, b) in back.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        let qtq = q.t().dot(&q);
        for ((i, j), x) in qtq.indexed_iter() {
            assert!((x - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
        }
    }

    #[test]
    fn profile_starts_at_input_and_stays_in_block() {
        let h = ham(vec![0.0, 0.05, 0.0, 0.0, -0.1], vec![0.1, 0.0, 0.13, 0.09]);
        let prof = propagation_profile(&h, 24.0, 50, 2).unwrap();
        for (m, p) in prof.intensities.row(0).iter().enumerate() {
            assert!((p - if m == 1 { 1.0 } else { 0.0 }).abs() < 1e-14);
        }
        for row in prof.intensities.rows() {
            assert_eq!(row[2], 0.0);
            assert_eq!(row[3], 0.0);
            assert_eq!(row[4], 0.0);
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let csv = prof.to_csv();
        assert!(csv.starts_with("z_mm,P1,P2,P3,P4,P5\n"));
        assert_eq!(csv.lines().count(), 51);
    }
}
