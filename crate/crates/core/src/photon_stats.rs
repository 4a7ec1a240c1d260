//! Two-photon interference, Hong-Ou-Mandel delay scans and visibility
//! estimators.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio between full width at half maximum and standard deviation of a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;
pub const DEFAULT_INTEGRATION_SECONDS: f64 = 60.0;
/// Photon-pair centre wavelength, nm.
pub const PAIR_WAVELENGTH_NM: f64 = 807.5;
/// Bandpass filter FWHM, nm.
pub const FILTER_BANDWIDTH_NM: f64 = 3.1;

/// Gaussian dip width implied by the filter bandwidth: coherence length
/// `λ²/Δλ` converted from FWHM to a standard deviation, in mm.
pub fn default_coherence_width_mm() -> f64 {
    let coherence_length_nm = PAIR_WAVELENGTH_NM * PAIR_WAVELENGTH_NM / FILTER_BANDWIDTH_NM;
    coherence_length_nm * 1e-6 / FWHM_PER_SIGMA
}

fn check_index(index: usize, n: usize, what: &'static str) -> Result<usize> {
    if index == 0 || index > n {
        return Err(Error::IndexOutOfRange {
            what,
            index,
            max: n,
        });
    }
    Ok(index - 1)
}

fn check_square(u: &Array2<Complex64>) -> Result<usize> {
    if u.nrows() != u.ncols() {
        return Err(Error::InvalidArgument(format!(
            "transfer matrix must be square, got {}x{}",
            u.nrows(),
            u.ncols()
        )));
    }
    Ok(u.nrows())
}

/// Probability of one photon in each of two distinct outputs `(m, n)` given
/// one photon in each of the distinct inputs `(j, k)`.
///
/// Indistinguishable photons interfere through the 2×2 permanent
/// `U_mj U_nk + U_mk U_nj`; distinguishable photons add probabilities.
pub fn two_photon_coincidence(
    u: &Array2<Complex64>,
    inputs: (usize, usize),
    outputs: (usize, usize),
    indistinguishable: bool,
) -> Result<f64> {
    let n = check_square(u)?;
    let j = check_index(inputs.0, n, "input guide")?;
    let k = check_index(inputs.1, n, "input guide")?;
    let m = check_index(outputs.0, n, "output guide")?;
    let o = check_index(outputs.1, n, "output guide")?;
    if j == k {
        return Err(Error::InvalidArgument(format!(
            "inputs must be distinct, got ({}, {})",
            inputs.0, inputs.1
        )));
    }
    if m == o {
        return Err(Error::InvalidArgument(format!(
            "outputs must be distinct, got ({}, {})",
            outputs.0, outputs.1
        )));
    }
    let direct = u[[m, j]] * u[[o, k]];
    let exchange = u[[m, k]] * u[[o, j]];
    Ok(if indistinguishable {
        (direct + exchange).norm_sqr()
    } else {
        direct.norm_sqr() + exchange.norm_sqr()
    })
}

/// Probability that both indistinguishable photons leave through `output`:
/// `|√2 U_mj U_mk|²`.
pub fn bunched_probability(u: &Array2<Complex64>, inputs: (usize, usize), output: usize) -> Result<f64> {
    let n = check_square(u)?;
    let j = check_index(inputs.0, n, "input guide")?;
    let k = check_index(inputs.1, n, "input guide")?;
    let m = check_index(output, n, "output guide")?;
    if j == k {
        return Err(Error::InvalidArgument("inputs must be distinct".into()));
    }
    Ok(2.0 * (u[[m, j]] * u[[m, k]]).norm_sqr())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!(
            "reflectivity must lie in [0, 1], got {eta}"
        )));
    }
    Ok(())
}

/// HOM visibility of a lossless coupler with reflectivity `eta`.
pub fn ideal_visibility(eta: f64) -> Result<f64> {
    check_eta(eta)?;
    Ok(2.0 * eta * (1.0 - eta) / (1.0 - 2.0 * eta + 2.0 * eta * eta))
}

/// Reflectivity from the four classical transfer powers, where `p_mn` is
/// the power detected in guide `n` with light injected in guide `m`.
/// Insensitive to per-port coupling efficiencies.
pub fn reflectivity_from_powers(p11: f64, p12: f64, p21: f64, p22: f64) -> Result<f64> {
    for (name, p) in [("P11", p11), ("P12", p12), ("P21", p21), ("P22", p22)] {
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be a non-negative power, got {p}"
            )));
        }
    }
    let cross = p12 * p21;
    if cross <= 0.0 {
        return Err(Error::DegenerateSplitting);
    }
    let r = (p11 * p22 / cross).sqrt();
    Ok(r / (1.0 + r))
}

/// Coincidence counts recorded while scanning the relative delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomScan {
    delays: Vec<f64>,
    counts: Vec<f64>,
    integration_seconds: f64,
}

impl HomScan {
    pub fn new(delays: Vec<f64>, counts: Vec<f64>, integration_seconds: f64) -> Result<Self> {
        if delays.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                what: "scan counts".into(),
                expected: delays.len(),
                found: counts.len(),
            });
        }
        if delays.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "scan delays must be strictly increasing".into(),
            ));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidArgument(
                "scan counts must be non-negative".into(),
            ));
        }
        if !(integration_seconds > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "integration time must be positive, got {integration_seconds}"
            )));
        }
        Ok(Self {
            delays,
            counts,
            integration_seconds,
        })
    }

    /// Relative delays, mm of physical path.
    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn integration_seconds(&self) -> f64 {
        self.integration_seconds
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("delay_mm,counts\n");
        for (x, c) in self.delays.iter().zip(&self.counts) {
            out.push_str(&format!("{x},{c}\n"));
        }
        out
    }

    pub fn from_csv(text: &str, integration_seconds: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty scan file".into()))?;
        let columns: Vec<_> = header.split(',').map(str::trim).collect();
        if columns != ["delay_mm", "counts"] {
            return Err(Error::Parse(format!(
                "expected header `delay_mm,counts`, found `{header}`"
            )));
        }
        let (mut delays, mut counts) = (Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate() {
            let mut fields = line.split(',').map(str::trim);
            let mut next = || -> Result<f64> {
                fields
                    .next()
                    .ok_or_else(|| Error::Parse(format!("row {}: missing column", lineno + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 1)))
            };
            delays.push(next()?);
            counts.push(next()?);
        }
        Self::new(delays, counts, integration_seconds)
    }
}

/// Generating parameters for a synthetic delay scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomScanSettings {
    pub eta: f64,
    /// Coincidences per window far from the dip at zero delay.
    pub baseline_rate: f64,
    /// Drift of the baseline per mm of delay.
    pub slope: f64,
    pub dip_center: f64,
    /// Gaussian standard deviation of the dip, mm.
    pub coherence_width: f64,
    /// Mode-overlap factor multiplying the ideal visibility; 1 for perfectly
    /// indistinguishable photons.
    pub visibility_factor: f64,
    pub integration_seconds: f64,
}

impl HomScanSettings {
    pub fn new(eta: f64, baseline_rate: f64) -> Self {
        Self {
            eta,
            baseline_rate,
            slope: 0.0,
            dip_center: 0.0,
            coherence_width: default_coherence_width_mm(),
            visibility_factor: 1.0,
            integration_seconds: DEFAULT_INTEGRATION_SECONDS,
        }
    }

    pub fn visibility(&self) -> Result<f64> {
        Ok(ideal_visibility(self.eta)? * self.visibility_factor)
    }

    /// Noiseless expected coincidences at delay `x`.
    pub fn mean_rate(&self, x: f64) -> Result<f64> {
        let params = [
            self.slope,
            self.baseline_rate,
            self.visibility()?,
            self.dip_center,
            self.coherence_width,
        ];
        Ok(dip_model(&params, x))
    }

    fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        if !(self.coherence_width.is_finite() && self.coherence_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "coherence width must be positive, got {}",
                self.coherence_width
            )));
        }
        if !(self.baseline_rate.is_finite() && self.baseline_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "baseline rate must be positive, got {}",
                self.baseline_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.visibility_factor) {
            return Err(Error::InvalidArgument(format!(
                "visibility factor must lie in [0, 1], got {}",
                self.visibility_factor
            )));
        }
        Ok(())
    }
}

/// Gaussian dip on a linear baseline,
/// `(a0·x + a1)·(1 − a2·exp(−(x − a3)²/(2·a4²)))`.
pub fn dip_model(a: &[f64; 5], x: f64) -> f64 {
    let g = (-(x - a[3]).powi(2) / (2.0 * a[4] * a[4])).exp();
    (a[0] * x + a[1]) * (1.0 - a[2] * g)
}

/// Synthesise a scan at the given delays. With a seed, counts are Poisson
/// draws around the mean; without one they are the mean itself.
pub fn simulate_hom_scan(
    settings: &HomScanSettings,
    delays: &[f64],
    noise_seed: Option<u64>,
) -> Result<HomScan> {
    settings.validate()?;
    let means = delays
        .iter()
        .map(|&x| settings.mean_rate(x).map(|m| m.max(0.0)))
        .collect::<Result<Vec<_>>>()?;
    let counts = match noise_seed {
        None => means,
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            means
                .iter()
                .map(|&mean| {
                    if mean > 0.0 {
                        Poisson::new(mean)
                            .map(|d| d.sample(&mut rng))
                            .map_err(|e| Error::InvalidArgument(e.to_string()))
                    } else {
                        Ok(0.0)
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    HomScan::new(delays.to_vec(), counts, settings.integration_seconds)
}

/// Fitted dip parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipFit {
    /// Baseline slope per mm.
    pub a0: f64,
    /// Baseline intercept.
    pub a1: f64,
    /// Dip depth.
    pub a2: f64,
    /// Dip centre, mm.
    pub a3: f64,
    /// Gaussian width, mm.
    pub a4: f64,
    pub visibility: f64,
    pub visibility_error: f64,
    pub residual_sum_squares: f64,
    pub iterations: usize,
}

impl DipFit {
    pub fn params(&self) -> [f64; 5] {
        [self.a0, self.a1, self.a2, self.a3, self.a4]
    }

    pub fn eval(&self, x: f64) -> f64 {
        dip_model(&self.params(), x)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit record serializes")
    }
}

const FIT_MAX_ITERATIONS: usize = 500;
const FIT_MIN_POINTS: usize = 8;

/// Levenberg-Marquardt fit of [`dip_model`]. The depth is projected onto
/// `[0, 1]` and the width is fitted in log space so it stays positive.
pub fn fit_hom_dip(scan: &HomScan) -> Result<DipFit> {
    if scan.len() < FIT_MIN_POINTS {
        return Err(Error::InvalidArgument(format!(
            "a dip fit needs at least {FIT_MIN_POINTS} scan points, got {}",
            scan.len()
        )));
    }
    let x = scan.delays();
    let y = scan.counts();
    let mut p = to_internal(&initial_guess(x, y));
    let mut cost = sum_squares(&p, x, y);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < FIT_MAX_ITERATIONS {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let (jtj, jtr) = normal_equations(&p, x, y);
        let mut accepted = false;
        while lambda <= 1e16 {
            let mut a = jtj;
            let max_diag = (0..5).map(|i| jtj[i][i]).fold(0.0, f64::max);
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12 * max_diag).max(f64::MIN_POSITIVE);
            }
            let rhs = jtr.map(|g| -g);
            let Some(step) = solve5(a, rhs) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p;
            for i in 0..5 {
                trial[i] += step[i];
            }
            trial[2] = trial[2].clamp(0.0, 1.0);
            let trial_cost = sum_squares(&trial, x, y);
            if trial_cost.is_finite() && trial_cost < cost {
                let moved: f64 = (0..5).map(|i| (trial[i] - p[i]).powi(2)).sum::<f64>().sqrt();
                let scale: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let small_gain = cost - trial_cost <= 1e-15 * cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small_gain || moved <= 1e-13 * (scale + 1e-13) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No damping reduces the cost: stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailure {
            iterations,
            residual: cost,
        });
    }
    let params = from_internal(&p);
    let mut fit = DipFit {
        a0: params[0],
        a1: params[1],
        a2: params[2],
        a3: params[3],
        a4: params[4],
        visibility: params[2],
        visibility_error: 0.0,
        residual_sum_squares: cost,
        iterations,
    };
    let (n_max, n_min) = dip_extrema(&fit, scan);
    fit.visibility_error = visibility_error(n_max, n_min)?;
    Ok(fit)
}

fn to_internal(a: &[f64; 5]) -> [f64; 5] {
    [a[0], a[1], a[2], a[3], a[4].ln()]
}

fn from_internal(p: &[f64; 5]) -> [f64; 5] {
    [p[0], p[1], p[2], p[3], p[4].exp()]
}

fn sum_squares(p: &[f64; 5], x: &[f64], y: &[f64]) -> f64 {
    let a = from_internal(p);
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| (dip_model(&a, xi) - yi).powi(2))
        .sum()
}

/// `JᵀJ` and `Jᵀr` for the residuals `model − y` in internal coordinates.
fn normal_equations(p: &[f64; 5], x: &[f64], y: &[f64]) -> ([[f64; 5]; 5], [f64; 5]) {
    let a = from_internal(p);
    let mut jtj = [[0.0; 5]; 5];
    let mut jtr = [0.0; 5];
    for (&xi, &yi) in x.iter().zip(y) {
        let d = xi - a[3];
        let g = (-d * d / (2.0 * a[4] * a[4])).exp();
        let line = a[0] * xi + a[1];
        let shape = 1.0 - a[2] * g;
        let r = line * shape - yi;
        let grad = [
            xi * shape,
            shape,
            -line * g,
            -line * a[2] * g * d / (a[4] * a[4]),
            -line * a[2] * g * d * d / (a[4] * a[4]),
        ];
        for i in 0..5 {
            jtr[i] += grad[i] * r;
            for j in 0..5 {
                jtj[i][j] += grad[i] * grad[j];
            }
        }
    }
    (jtj, jtr)
}

/// Gaussian elimination with partial pivoting.
fn solve5(mut a: [[f64; 5]; 5], mut b: [f64; 5]) -> Option<[f64; 5]> {
    for col in 0..5 {
        let pivot = (col..5).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 || !a[pivot][col].is_finite() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..5 {
            let f = a[row][col] / a[col][col];
            for k in col..5 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut out = [0.0; 5];
    for row in (0..5).rev() {
        let tail: f64 = (row + 1..5).map(|k| a[row][k] * out[k]).sum();
        out[row] = (b[row] - tail) / a[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Starting point from the scan shape: baseline from the outer 10% of
/// points on each side, centre at the lowest count, depth relative to the
/// baseline there, width from the half-depth crossings.
fn initial_guess(x: &[f64], y: &[f64]) -> [f64; 5] {
    let n = x.len();
    let k = ((n as f64 * 0.1).round() as usize).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (x_lo, y_lo) = (mean(&x[..k]), mean(&y[..k]));
    let (x_hi, y_hi) = (mean(&x[n - k..]), mean(&y[n - k..]));
    let slope = if x_hi > x_lo {
        (y_hi - y_lo) / (x_hi - x_lo)
    } else {
        0.0
    };
    let intercept = 0.5 * (y_lo + y_hi) - slope * 0.5 * (x_lo + x_hi);

    let i_min = (0..n).min_by(|&i, &j| y[i].total_cmp(&y[j])).unwrap_or(0);
    let center = x[i_min];
    let baseline = slope * center + intercept;
    let depth = if baseline > 0.0 {
        (1.0 - y[i_min] / baseline).clamp(0.0, 1.0)
    } else {
        0.5
    };

    let half = 0.5 * (y[i_min] + baseline);
    let crossing = |range: &mut dyn Iterator<Item = usize>, edge: f64| -> f64 {
        let mut prev = i_min;
        for i in range {
            if y[i] >= half {
                let (x0, y0, x1, y1) = (x[prev], y[prev], x[i], y[i]);
                return if y1 != y0 {
                    x0 + (half - y0) * (x1 - x0) / (y1 - y0)
                } else {
                    x1
                };
            }
            prev = i;
        }
        edge
    };
    let left = crossing(&mut (0..i_min).rev(), x[0]);
    let right = crossing(&mut (i_min + 1..n), x[n - 1]);
    let span = x[n - 1] - x[0];
    let mut width = 0.5 * (right - left);
    if !(width > 0.0) {
        width = span / 10.0;
    }
    [slope, intercept, depth, center, width.max(span * 1e-6)]
}

/// `(N_max, N_min)`: the fitted curve averaged at the two half-maximum
/// offsets of the Gaussian, and the lowest measured count.
pub fn dip_extrema(fit: &DipFit, scan: &HomScan) -> (f64, f64) {
    let alpha = FWHM_PER_SIGMA * fit.a4;
    let n_max = 0.5 * (fit.eval(fit.a3 - alpha / 2.0) + fit.eval(fit.a3 + alpha / 2.0));
    let n_min = scan.counts().iter().copied().fold(f64::INFINITY, f64::min);
    (n_max, n_min)
}

/// Poissonian uncertainty of the fitted visibility.
pub fn visibility_error(n_max: f64, n_min: f64) -> Result<f64> {
    if !(n_max.is_finite() && n_max > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "N_max must be positive, got {n_max}"
        )));
    }
    if !(n_min.is_finite() && n_min >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "N_min must be non-negative, got {n_min}"
        )));
    }
    if n_min == 0.0 {
        return Ok(0.0);
    }
    Ok(n_min / n_max * (1.0 / n_max + 1.0 / n_min).sqrt())
}
