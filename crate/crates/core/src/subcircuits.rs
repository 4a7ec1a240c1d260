//! Two-guide subcircuits embedded in the array: decoupling, leakage and
//! crosstalk, post-selected gates and truth-table fidelity.

use std::fmt;

use ndarray::{array, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::device_model::TridiagonalHamiltonian;
use crate::error::{Error, Result};
use crate::evolution::TransferUnitary;
use crate::photon_stats::reflectivity_from_powers;

/// Tolerance on the total of a distribution that should sum to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Adjacent guides `(k, k+1)`, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubcircuitPair {
    first: usize,
}

impl SubcircuitPair {
    pub fn new(first: usize, n_guides: usize) -> Result<Self> {
        if first == 0 || first >= n_guides {
            return Err(Error::IndexOutOfRange {
                what: "subcircuit first guide",
                index: first,
                max: n_guides.saturating_sub(1),
            });
        }
        Ok(Self { first })
    }

    pub fn first(&self) -> usize {
        self.first
    }

    pub fn second(&self) -> usize {
        self.first + 1
    }

    pub fn guides(&self) -> [usize; 2] {
        [self.first, self.first + 1]
    }

    pub fn contains(&self, guide: usize) -> bool {
        guide == self.first || guide == self.first + 1
    }

    pub fn overlaps(&self, other: &SubcircuitPair) -> bool {
        self.first.abs_diff(other.first) <= 1
    }

    fn check_fits(&self, n: usize) -> Result<()> {
        if self.second() > n {
            return Err(Error::IndexOutOfRange {
                what: "subcircuit guide",
                index: self.second(),
                max: n,
            });
        }
        Ok(())
    }
}

impl fmt::Display for SubcircuitPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DC{},{}", self.first, self.first + 1)
    }
}

/// Phase-shifted tunable coupler `R_z(φ)·U_DC(η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeUnitary {
    matrix: Array2<Complex64>,
    eta: f64,
    phi: f64,
}

impl TwoModeUnitary {
    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.matrix
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// `transitions()[a][c]`: probability that light entering port `a`
    /// leaves through port `c`.
    pub fn transitions(&self) -> [[f64; 2]; 2] {
        column_transitions(&self.matrix).expect("unitary columns are non-zero")
    }
}

pub fn two_mode_unitary(eta: f64, phi: f64) -> Result<TwoModeUnitary> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!(
            "reflectivity must lie in [0, 1], got {eta}"
        )));
    }
    let r = Complex64::new(eta.sqrt(), 0.0);
    let t = Complex64::new(0.0, (1.0 - eta).sqrt());
    let phase = Complex64::from_polar(1.0, phi);
    Ok(TwoModeUnitary {
        matrix: array![[r, t], [phase * t, phase * r]],
        eta,
        phi,
    })
}

/// Single-qubit gates realised by a coupler's reflectivity alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    I,
    H,
    X,
}

impl Gate {
    pub fn eta(self) -> f64 {
        match self {
            Gate::I => 1.0,
            Gate::H => 0.5,
            Gate::X => 0.0,
        }
    }

    pub fn unitary(self) -> TwoModeUnitary {
        two_mode_unitary(self.eta(), 0.0).expect("gate reflectivity is in range")
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'I' => Some(Gate::I),
            'H' => Some(Gate::H),
            'X' => Some(Gate::X),
            _ => None,
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Gate::I => "I",
            Gate::H => "H",
            Gate::X => "X",
        };
        f.write_str(s)
    }
}

fn check_normalized(powers: &[f64]) -> Result<()> {
    if powers.iter().any(|p| !(p.is_finite() && *p >= -NORMALIZATION_TOLERANCE)) {
        return Err(Error::InvalidArgument(
            "powers must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = powers.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Unnormalized { sum });
    }
    Ok(())
}

/// Percentage of the output power found outside the pair's own guides.
pub fn leakage(powers: &[f64], pair: SubcircuitPair) -> Result<f64> {
    pair.check_fits(powers.len())?;
    check_normalized(powers)?;
    let own: f64 = pair.guides().iter().map(|g| powers[g - 1]).sum();
    let outside: f64 = powers
        .iter()
        .enumerate()
        .filter(|(i, _)| !pair.contains(i + 1))
        .map(|(_, p)| p)
        .sum();
    // Percentages are of the detected total, as for a measured distribution.
    let total = own + outside;
    Ok(100.0 * if total > 0.0 { outside / total } else { 0.0 })
}

/// Percentage of the output power landing on another subcircuit's guides.
pub fn crosstalk(powers: &[f64], own: SubcircuitPair, other: SubcircuitPair) -> Result<f64> {
    if own.overlaps(&other) {
        return Err(Error::InvalidArgument(format!(
            "subcircuits {own} and {other} overlap"
        )));
    }
    own.check_fits(powers.len())?;
    other.check_fits(powers.len())?;
    let total: f64 = powers.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Unnormalized { sum: total });
    }
    Ok(100.0 * other.guides().iter().map(|g| powers[g - 1]).sum::<f64>() / total)
}

/// Zero the listed couplings; boundary `k` is `C_{k,k+1}`.
pub fn decouple_blocks(h: &TridiagonalHamiltonian, boundaries: &[usize]) -> Result<TridiagonalHamiltonian> {
    let mut out = h.clone();
    let max = h.dim() - 1;
    for &k in boundaries {
        if k == 0 || k > max {
            return Err(Error::IndexOutOfRange {
                what: "coupling",
                index: k,
                max,
            });
        }
        out.offdiag_mut()[k - 1] = 0.0;
    }
    Ok(out)
}

/// A pair's 2×2 block of the full transfer matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PostSelected {
    /// Unnormalised submatrix; column `a` holds the pair's output amplitudes
    /// for input port `a`.
    pub matrix: Array2<Complex64>,
    /// Probability that light entering each port stays in the pair.
    pub success_probability: [f64; 2],
}

impl PostSelected {
    /// Renormalised in-pair transition probabilities, `[input][output]`.
    pub fn transitions(&self) -> Result<[[f64; 2]; 2]> {
        column_transitions(&self.matrix)
    }
}

pub fn post_selected_two_mode_unitary(u: &TransferUnitary, pair: SubcircuitPair) -> Result<PostSelected> {
    pair.check_fits(u.dim())?;
    let k = pair.first() - 1;
    let m = u.matrix();
    let matrix = array![[m[[k, k]], m[[k, k + 1]]], [m[[k + 1, k]], m[[k + 1, k + 1]]]];
    let success_probability = [
        matrix[[0, 0]].norm_sqr() + matrix[[1, 0]].norm_sqr(),
        matrix[[0, 1]].norm_sqr() + matrix[[1, 1]].norm_sqr(),
    ];
    Ok(PostSelected {
        matrix,
        success_probability,
    })
}

fn column_transitions(m: &Array2<Complex64>) -> Result<[[f64; 2]; 2]> {
    let mut out = [[0.0; 2]; 2];
    for (a, row) in out.iter_mut().enumerate() {
        let p = [m[[0, a]].norm_sqr(), m[[1, a]].norm_sqr()];
        let norm = p[0] + p[1];
        if !(norm > 0.0) {
            return Err(Error::Numerical(format!(
                "no light stays in the pair for input port {}",
                a + 1
            )));
        }
        *row = [p[0] / norm, p[1] / norm];
    }
    Ok(out)
}

/// Reflectivity of a pair under post-selection. Per-input normalisation
/// cancels in the power ratio, so leakage does not bias the estimate.
pub fn effective_reflectivity(u: &TransferUnitary, pair: SubcircuitPair) -> Result<f64> {
    let sub = post_selected_two_mode_unitary(u, pair)?.matrix;
    // p_mn: detected at n, injected at m.
    let p11 = sub[[0, 0]].norm_sqr();
    let p12 = sub[[1, 0]].norm_sqr();
    let p21 = sub[[0, 1]].norm_sqr();
    let p22 = sub[[1, 1]].norm_sqr();
    reflectivity_from_powers(p11, p12, p21, p22)
}

/// Two-qubit output distributions over `{|00⟩, |01⟩, |10⟩, |11⟩}`, one row
/// per input state. The first qubit lives on subcircuit A, the second on B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub table: [[f64; 4]; 4],
}

pub const STATE_LABELS: [&str; 4] = ["00", "01", "10", "11"];

impl TruthTable {
    /// Product of two independent post-selected single-qubit maps.
    pub fn from_transitions(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> Self {
        let mut table = [[0.0; 4]; 4];
        for (input, row) in table.iter_mut().enumerate() {
            let (qa, qb) = (input >> 1, input & 1);
            for (output, cell) in row.iter_mut().enumerate() {
                let (ra, rb) = (output >> 1, output & 1);
                *cell = a[qa][ra] * b[qb][rb];
            }
        }
        Self { table }
    }

    pub fn row(&self, input: usize) -> &[f64; 4] {
        &self.table[input]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("in,out00,out01,out10,out11\n");
        for (label, row) in STATE_LABELS.iter().zip(&self.table) {
            out.push_str(label);
            for p in row {
                out.push(',');
                out.push_str(&p.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Ideal table for two lossless couplers with reflectivities `eta_a`, `eta_b`.
pub fn gate_truth_table(eta_a: f64, eta_b: f64) -> Result<TruthTable> {
    let a = two_mode_unitary(eta_a, 0.0)?.transitions();
    let b = two_mode_unitary(eta_b, 0.0)?.transitions();
    Ok(TruthTable::from_transitions(a, b))
}

/// Table realised by a full array transfer matrix, post-selected on each
/// pair's own guides.
pub fn truth_table_from_unitary(
    u: &TransferUnitary,
    pair_a: SubcircuitPair,
    pair_b: SubcircuitPair,
) -> Result<TruthTable> {
    if pair_a.overlaps(&pair_b) {
        return Err(Error::InvalidArgument(format!(
            "subcircuits {pair_a} and {pair_b} overlap"
        )));
    }
    let a = post_selected_two_mode_unitary(u, pair_a)?.transitions()?;
    let b = post_selected_two_mode_unitary(u, pair_b)?.transitions()?;
    Ok(TruthTable::from_transitions(a, b))
}

/// Bhattacharyya overlap `Σ √(p_target · p_measured)` of two distributions.
pub fn distribution_fidelity(target: &[f64], measured: &[f64]) -> Result<f64> {
    if target.len() != measured.len() {
        return Err(Error::DimensionMismatch {
            what: "measured distribution".into(),
            expected: target.len(),
            found: measured.len(),
        });
    }
    check_normalized(target)?;
    check_normalized(measured)?;
    Ok(target
        .iter()
        .zip(measured)
        .map(|(t, m)| (t.max(0.0) * m.max(0.0)).sqrt())
        .sum())
}

/// Mean row fidelity over the four input states.
pub fn average_fidelity(targets: &TruthTable, measured: &TruthTable) -> Result<f64> {
    let mut total = 0.0;
    for (t, m) in targets.table.iter().zip(&measured.table) {
        total += distribution_fidelity(t, m)?;
    }
    Ok(total / 4.0)
}
