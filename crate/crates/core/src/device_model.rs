//! Programmable array description and the voltage → Hamiltonian map.
//!
//! The array Hamiltonian is real symmetric tridiagonal: propagation
//! constants `β_n` on the diagonal and nearest-neighbour couplings
//! `C_{n,n+1}` off the diagonal, both in rad/mm. Each is an affine function
//! of the electrode voltages,
//!
//! ```text
//! β = base_beta     + beta_sensitivity     · v
//! C = base_coupling + coupling_sensitivity · v
//! ```
//!
//! Cross-talk between electrodes is encoded directly in the sensitivity
//! matrices.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GUIDES: usize = 11;
pub const DEFAULT_ELECTRODES: usize = 22;
/// Length of the continuously coupled region, mm.
pub const DEFAULT_COUPLING_LENGTH: f64 = 24.0;
/// Closed voltage bound, volts.
pub const DEFAULT_VOLTAGE_LIMIT: f64 = 10.0;
/// Zero-voltage coupling between every adjacent pair, rad/mm.
pub const DEFAULT_BASE_COUPLING: f64 = 0.115;
/// β response of the electrode sitting over a guide, rad/(mm·V).
pub const DEFAULT_BETA_GAIN: f64 = 0.02;
/// Coupling response of the electrode between two guides, rad/(mm·V).
pub const DEFAULT_COUPLING_GAIN: f64 = -0.01;

/// Physical description of a programmable waveguide array.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    n_guides: usize,
    n_electrodes: usize,
    coupling_length: f64,
    base_beta: Vec<f64>,
    base_coupling: Vec<f64>,
    beta_sensitivity: Array2<f64>,
    coupling_sensitivity: Array2<f64>,
    voltage_limit: f64,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self::with_defaults(DEFAULT_GUIDES, DEFAULT_ELECTRODES, DEFAULT_COUPLING_LENGTH)
            .expect("default device is valid")
    }
}

impl DeviceSpec {
    /// Array of `n_guides` guides with zero base detuning, uniform base
    /// coupling and the default electrode layout.
    pub fn with_defaults(n_guides: usize, n_electrodes: usize, coupling_length: f64) -> Result<Self> {
        if n_guides < 2 {
            return Err(Error::InvalidArgument(format!(
                "an array needs at least 2 guides, got {n_guides}"
            )));
        }
        let (beta_sensitivity, coupling_sensitivity) = default_sensitivities(n_guides, n_electrodes);
        let spec = Self {
            n_guides,
            n_electrodes,
            coupling_length,
            base_beta: vec![0.0; n_guides],
            base_coupling: vec![DEFAULT_BASE_COUPLING; n_guides - 1],
            beta_sensitivity,
            coupling_sensitivity,
            voltage_limit: DEFAULT_VOLTAGE_LIMIT,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A static device with a fixed random Hamiltonian: `β_n ~ U[3.0, 3.2]`
    /// and `C ~ U[0.05, 0.15]` rad/mm, drawn once from `seed`.
    pub fn random_static(
        n_guides: usize,
        n_electrodes: usize,
        coupling_length: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta = (0..n_guides).map(|_| rng.random_range(3.0..3.2)).collect();
        let coupling = (0..n_guides.saturating_sub(1))
            .map(|_| rng.random_range(0.05..0.15))
            .collect();
        Self::with_defaults(n_guides, n_electrodes, coupling_length)?
            .with_base_beta(beta)?
            .with_base_coupling(coupling)
    }

    pub fn with_base_beta(mut self, beta: Vec<f64>) -> Result<Self> {
        self.base_beta = beta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_base_coupling(mut self, coupling: Vec<f64>) -> Result<Self> {
        self.base_coupling = coupling;
        self.validate()?;
        Ok(self)
    }

    pub fn with_beta_sensitivity(mut self, m: Array2<f64>) -> Result<Self> {
        self.beta_sensitivity = m;
        self.validate()?;
        Ok(self)
    }

    pub fn with_coupling_sensitivity(mut self, m: Array2<f64>) -> Result<Self> {
        self.coupling_sensitivity = m;
        self.validate()?;
        Ok(self)
    }

    pub fn with_coupling_length(mut self, length: f64) -> Result<Self> {
        self.coupling_length = length;
        self.validate()?;
        Ok(self)
    }

    pub fn with_voltage_limit(mut self, limit: f64) -> Result<Self> {
        self.voltage_limit = limit;
        self.validate()?;
        Ok(self)
    }

    pub fn n_guides(&self) -> usize {
        self.n_guides
    }

    pub fn n_electrodes(&self) -> usize {
        self.n_electrodes
    }

    /// Coupled-region length in mm.
    pub fn coupling_length(&self) -> f64 {
        self.coupling_length
    }

    pub fn base_beta(&self) -> &[f64] {
        &self.base_beta
    }

    pub fn base_coupling(&self) -> &[f64] {
        &self.base_coupling
    }

    /// `N × E` matrix, rad/(mm·V).
    pub fn beta_sensitivity(&self) -> &Array2<f64> {
        &self.beta_sensitivity
    }

    /// `(N−1) × E` matrix, rad/(mm·V).
    pub fn coupling_sensitivity(&self) -> &Array2<f64> {
        &self.coupling_sensitivity
    }

    pub fn voltage_limit(&self) -> f64 {
        self.voltage_limit
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_guides;
        let e = self.n_electrodes;
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "an array needs at least 2 guides, got {n}"
            )));
        }
        if !(self.coupling_length.is_finite() && self.coupling_length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "coupling_length must be positive, got {}",
                self.coupling_length
            )));
        }
        if !(self.voltage_limit.is_finite() && self.voltage_limit > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "voltage_limit must be positive, got {}",
                self.voltage_limit
            )));
        }
        check_len("base_beta", n, self.base_beta.len())?;
        check_len("base_coupling", n - 1, self.base_coupling.len())?;
        check_len("beta_sensitivity rows", n, self.beta_sensitivity.nrows())?;
        check_len("beta_sensitivity columns", e, self.beta_sensitivity.ncols())?;
        check_len("coupling_sensitivity rows", n - 1, self.coupling_sensitivity.nrows())?;
        check_len("coupling_sensitivity columns", e, self.coupling_sensitivity.ncols())?;
        if let Some((k, c)) = self
            .base_coupling
            .iter()
            .enumerate()
            .find(|(_, c)| !(c.is_finite() && **c >= 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "base coupling C_{},{} must be non-negative, got {c}",
                k + 1,
                k + 2
            )));
        }
        let all_finite = self.base_beta.iter().all(|x| x.is_finite())
            && self.beta_sensitivity.iter().all(|x| x.is_finite())
            && self.coupling_sensitivity.iter().all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::InvalidArgument(
                "device parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Parse a TOML device document. Omitted fields other than
    /// `n_guides`, `n_electrodes` and `coupling_length` take their defaults.
    pub fn from_toml_str(source: &str) -> Result<Self> {
        let doc: DeviceDoc = toml::from_str(source).map_err(|e| Error::Parse(e.to_string()))?;
        doc.into_spec()
    }

    pub fn to_toml_string(&self) -> String {
        let doc = DeviceDoc::from_spec(self);
        toml::to_string(&doc).expect("device document serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Electrode `2n−1` sits over guide `n` and shifts `β_n`; electrode `2n`
/// sits between guides `n` and `n+1` and shifts `C_{n,n+1}`. Electrodes
/// beyond the array act on nothing.
pub fn default_sensitivities(n_guides: usize, n_electrodes: usize) -> (Array2<f64>, Array2<f64>) {
    let mut beta = Array2::zeros((n_guides, n_electrodes));
    let mut coupling = Array2::zeros((n_guides.saturating_sub(1), n_electrodes));
    for col in 0..n_electrodes {
        let guide = col / 2;
        if col % 2 == 0 {
            if guide < n_guides {
                beta[[guide, col]] = DEFAULT_BETA_GAIN;
            }
        } else if guide + 1 < n_guides {
            coupling[[guide, col]] = DEFAULT_COUPLING_GAIN;
        }
    }
    (beta, coupling)
}

/// Electrode voltages in volts, one per electrode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoltageConfig(Vec<f64>);

impl VoltageConfig {
    pub fn zeros(n_electrodes: usize) -> Self {
        Self(vec![0.0; n_electrodes])
    }

    pub fn from_vec(volts: Vec<f64>) -> Self {
        Self(volts)
    }

    /// Set electrode `electrode` (1-based).
    pub fn set(&mut self, electrode: usize, volts: f64) -> Result<()> {
        let max = self.0.len();
        match electrode.checked_sub(1).and_then(|i| self.0.get_mut(i)) {
            Some(slot) => {
                *slot = volts;
                Ok(())
            }
            None => Err(Error::IndexOutOfRange {
                what: "electrode",
                index: electrode,
                max,
            }),
        }
    }

    pub fn with(mut self, electrode: usize, volts: f64) -> Result<Self> {
        self.set(electrode, volts)?;
        Ok(self)
    }

    /// Voltage on electrode `electrode` (1-based).
    pub fn get(&self, electrode: usize) -> Option<f64> {
        electrode.checked_sub(1).and_then(|i| self.0.get(i)).copied()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Real symmetric tridiagonal Hamiltonian, rad/mm.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalHamiltonian {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
}

impl TridiagonalHamiltonian {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidArgument("empty Hamiltonian".into()));
        }
        check_len("off-diagonal", diag.len() - 1, offdiag.len())?;
        if !diag.iter().chain(offdiag.iter()).all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument(
                "Hamiltonian entries must be finite".into(),
            ));
        }
        Ok(Self { diag, offdiag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Propagation constants `β_n`.
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Couplings `C_{n,n+1}`; entry `k` (0-based) couples guides `k+1` and `k+2`.
    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    pub(crate) fn offdiag_mut(&mut self) -> &mut [f64] {
        &mut self.offdiag
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.dim();
        let mut h = Array2::zeros((n, n));
        for (i, b) in self.diag.iter().enumerate() {
            h[[i, i]] = *b;
        }
        for (i, c) in self.offdiag.iter().enumerate() {
            h[[i, i + 1]] = *c;
            h[[i + 1, i]] = *c;
        }
        h
    }
}

/// Per-electrode bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageReport {
    pub limit: f64,
    /// `(expected, found)` when the vector has the wrong length.
    pub length_mismatch: Option<(usize, usize)>,
    /// `(electrode, volts)` for every electrode outside `[−limit, limit]`.
    pub violations: Vec<(usize, f64)>,
}

impl VoltageReport {
    pub fn passed(&self) -> bool {
        self.length_mismatch.is_none() && self.violations.is_empty()
    }
}

pub fn validate_voltages(spec: &DeviceSpec, v: &VoltageConfig) -> VoltageReport {
    let limit = spec.voltage_limit();
    let length_mismatch =
        (v.len() != spec.n_electrodes()).then_some((spec.n_electrodes(), v.len()));
    let violations = v
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, x)| !(x.abs() <= limit))
        .map(|(i, x)| (i + 1, *x))
        .collect();
    VoltageReport {
        limit,
        length_mismatch,
        violations,
    }
}

pub fn build_hamiltonian(spec: &DeviceSpec, v: &VoltageConfig) -> Result<TridiagonalHamiltonian> {
    let report = validate_voltages(spec, v);
    if let Some((expected, found)) = report.length_mismatch {
        return Err(Error::DimensionMismatch {
            what: "voltage vector".into(),
            expected,
            found,
        });
    }
    if let Some(&(electrode, value)) = report.violations.first() {
        return Err(Error::VoltageOutOfRange {
            electrode,
            value,
            limit: report.limit,
        });
    }
    let volts = ndarray::ArrayView1::from(v.as_slice());
    let diag = &ndarray::ArrayView1::from(spec.base_beta()) + &spec.beta_sensitivity().dot(&volts);
    let offdiag =
        &ndarray::ArrayView1::from(spec.base_coupling()) + &spec.coupling_sensitivity().dot(&volts);
    TridiagonalHamiltonian::new(diag.to_vec(), offdiag.to_vec())
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Serialize, Deserialize)]
struct DeviceDoc {
    n_guides: Option<usize>,
    n_electrodes: Option<usize>,
    coupling_length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    voltage_limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_coupling: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_sensitivity: Option<SensitivityDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coupling_sensitivity: Option<SensitivityDoc>,
}

/// Either a dense row-major matrix or sparse `[row, electrode, value]`
/// triplets (1-based; unlisted entries are zero).
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensitivityDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    dense: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    triplets: Option<Vec<(usize, usize, f64)>>,
}

impl SensitivityDoc {
    fn to_matrix(&self, what: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        match (&self.dense, &self.triplets) {
            (Some(_), Some(_)) => Err(Error::Parse(format!(
                "{what}: give either `dense` or `triplets`, not both"
            ))),
            (None, None) => Err(Error::Parse(format!(
                "{what}: expected a `dense` or `triplets` entry"
            ))),
            (Some(dense), None) => {
                check_len(&format!("{what} rows"), rows, dense.len())?;
                let mut m = Array2::zeros((rows, cols));
                for (i, row) in dense.iter().enumerate() {
                    check_len(&format!("{what} row {}", i + 1), cols, row.len())?;
                    for (j, x) in row.iter().enumerate() {
                        m[[i, j]] = *x;
                    }
                }
                Ok(m)
            }
            (None, Some(triplets)) => {
                let mut m = Array2::zeros((rows, cols));
                for &(row, electrode, value) in triplets {
                    if row == 0 || row > rows {
                        return Err(Error::IndexOutOfRange {
                            what: "sensitivity row",
                            index: row,
                            max: rows,
                        });
                    }
                    if electrode == 0 || electrode > cols {
                        return Err(Error::IndexOutOfRange {
                            what: "electrode",
                            index: electrode,
                            max: cols,
                        });
                    }
                    m[[row - 1, electrode - 1]] = value;
                }
                Ok(m)
            }
        }
    }

    fn sparse(m: &Array2<f64>) -> Self {
        let triplets = m
            .indexed_iter()
            .filter(|(_, x)| **x != 0.0)
            .map(|((i, j), x)| (i + 1, j + 1, *x))
            .collect();
        Self {
            dense: None,
            triplets: Some(triplets),
        }
    }
}

impl DeviceDoc {
    fn into_spec(self) -> Result<DeviceSpec> {
        let n = self.n_guides.ok_or(Error::MissingField("n_guides"))?;
        let e = self.n_electrodes.ok_or(Error::MissingField("n_electrodes"))?;
        let length = self
            .coupling_length
            .ok_or(Error::MissingField("coupling_length"))?;
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "an array needs at least 2 guides, got {n}"
            )));
        }
        let (default_beta_s, default_coupling_s) = default_sensitivities(n, e);
        let beta_sensitivity = match &self.beta_sensitivity {
            Some(doc) => doc.to_matrix("beta_sensitivity", n, e)?,
            None => default_beta_s,
        };
        let coupling_sensitivity = match &self.coupling_sensitivity {
            Some(doc) => doc.to_matrix("coupling_sensitivity", n - 1, e)?,
            None => default_coupling_s,
        };
        let spec = DeviceSpec {
            n_guides: n,
            n_electrodes: e,
            coupling_length: length,
            base_beta: self.base_beta.unwrap_or_else(|| vec![0.0; n]),
            base_coupling: self
                .base_coupling
                .unwrap_or_else(|| vec![DEFAULT_BASE_COUPLING; n - 1]),
            beta_sensitivity,
            coupling_sensitivity,
            voltage_limit: self.voltage_limit.unwrap_or(DEFAULT_VOLTAGE_LIMIT),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn from_spec(spec: &DeviceSpec) -> Self {
        Self {
            n_guides: Some(spec.n_guides),
            n_electrodes: Some(spec.n_electrodes),
            coupling_length: Some(spec.coupling_length),
            voltage_limit: Some(spec.voltage_limit),
            base_beta: Some(spec.base_beta.clone()),
            base_coupling: Some(spec.base_coupling.clone()),
            beta_sensitivity: Some(SensitivityDoc::sparse(&spec.beta_sensitivity)),
            coupling_sensitivity: Some(SensitivityDoc::sparse(&spec.coupling_sensitivity)),
        }
    }
}
