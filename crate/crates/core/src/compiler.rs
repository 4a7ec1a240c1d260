//! Multi-start voltage optimisation for two gates acting in parallel.
//!
//! The objective is
//! `(1−F₁)² + (1−F₂)² + ct₁² + ct₂² + leak₁² + leak₂²` with crosstalk and
//! leakage as power fractions summed over a subcircuit's two inputs. Each
//! restart runs a projected BFGS descent with central finite-difference
//! gradients inside the voltage box.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device_model::{build_hamiltonian, DeviceSpec, VoltageConfig};
use crate::error::{Error, Result};
use crate::evolution::Propagator;
use crate::subcircuits::{SubcircuitPair, TwoModeUnitary};

pub const DEFAULT_RESTARTS: usize = 100;
/// Central-difference step, volts.
pub const FD_STEP: f64 = 1e-4;
pub const STEP_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 500;

const ARMIJO: f64 = 1e-4;
const MIN_LINE_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfigName {
    Config1,
    Config2,
    Config3,
}

impl fmt::Display for ConfigName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConfigName::Config1 => "config1",
            ConfigName::Config2 => "config2",
            ConfigName::Config3 => "config3",
        };
        f.write_str(s)
    }
}

impl FromStr for ConfigName {
    type Err = Error;

    /// Accepts `1`, `2`, `3` or `config1` … `config3`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().trim_start_matches("config") {
            "1" => Ok(ConfigName::Config1),
            "2" => Ok(ConfigName::Config2),
            "3" => Ok(ConfigName::Config3),
            _ => Err(Error::InvalidArgument(format!(
                "unknown electrode configuration `{s}` (expected 1, 2 or 3)"
            ))),
        }
    }
}

/// Which electrodes the optimiser may drive and which two couplers it targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeConfig {
    name: ConfigName,
    active: Vec<usize>,
    pairs: [SubcircuitPair; 2],
}

impl ElectrodeConfig {
    /// The three standard layouts:
    /// config1 drives electrodes 1–8 for DC1,2 and DC3,4;
    /// config2 drives 1–4 and 15–18 for DC1,2 and DC8,9;
    /// config3 drives every electrode for DC1,2 and DC8,9.
    pub fn preset(name: ConfigName, spec: &DeviceSpec) -> Result<Self> {
        let n = spec.n_guides();
        let (active, firsts): (Vec<usize>, [usize; 2]) = match name {
            ConfigName::Config1 => ((1..=8).collect(), [1, 3]),
            ConfigName::Config2 => ((1..=4).chain(15..=18).collect(), [1, 8]),
            ConfigName::Config3 => ((1..=spec.n_electrodes()).collect(), [1, 8]),
        };
        let pairs = [
            SubcircuitPair::new(firsts[0], n)?,
            SubcircuitPair::new(firsts[1], n)?,
        ];
        Self::new(name, active, pairs, spec)
    }

    pub fn new(
        name: ConfigName,
        mut active: Vec<usize>,
        pairs: [SubcircuitPair; 2],
        spec: &DeviceSpec,
    ) -> Result<Self> {
        active.sort_unstable();
        active.dedup();
        if active.is_empty() {
            return Err(Error::InvalidArgument("no active electrodes".into()));
        }
        let e = spec.n_electrodes();
        if let Some(&bad) = active.iter().find(|&&a| a == 0 || a > e) {
            return Err(Error::IndexOutOfRange {
                what: "electrode",
                index: bad,
                max: e,
            });
        }
        for p in &pairs {
            if p.second() > spec.n_guides() {
                return Err(Error::IndexOutOfRange {
                    what: "guide",
                    index: p.second(),
                    max: spec.n_guides(),
                });
            }
        }
        if pairs[0].guides().iter().any(|g| pairs[1].contains(*g)) {
            return Err(Error::InvalidArgument(format!(
                "subcircuits {} and {} share a guide",
                pairs[0], pairs[1]
            )));
        }
        Ok(Self {
            name,
            active,
            pairs,
        })
    }

    pub fn name(&self) -> ConfigName {
        self.name
    }

    /// Active electrodes, 1-based and ascending.
    pub fn active_electrodes(&self) -> &[usize] {
        &self.active
    }

    pub fn pairs(&self) -> [SubcircuitPair; 2] {
        self.pairs
    }

    /// Full voltage vector with `x` on the active electrodes and 0 elsewhere.
    fn expand(&self, x: &[f64], n_electrodes: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_electrodes];
        for (&e, &xi) in self.active.iter().zip(x) {
            v[e - 1] = xi;
        }
        v
    }
}

/// The six quantities the objective is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub f1: f64,
    pub f2: f64,
    pub crosstalk1: f64,
    pub crosstalk2: f64,
    pub leakage1: f64,
    pub leakage2: f64,
}

impl ObjectiveTerms {
    pub fn value(&self) -> f64 {
        (1.0 - self.f1).powi(2)
            + (1.0 - self.f2).powi(2)
            + self.crosstalk1.powi(2)
            + self.crosstalk2.powi(2)
            + self.leakage1.powi(2)
            + self.leakage2.powi(2)
    }
}

/// Evaluates all six terms at `v`. Voltages on inactive electrodes are
/// ignored and treated as 0.
pub fn objective_terms(
    spec: &DeviceSpec,
    v: &VoltageConfig,
    config: &ElectrodeConfig,
    targets: &[TwoModeUnitary; 2],
) -> Result<ObjectiveTerms> {
    if v.len() != spec.n_electrodes() {
        return Err(Error::DimensionMismatch {
            what: "voltage vector".into(),
            expected: spec.n_electrodes(),
            found: v.len(),
        });
    }
    let x: Vec<f64> = config
        .active
        .iter()
        .map(|&e| v.as_slice()[e - 1])
        .collect();
    evaluate(spec, &config.expand(&x, spec.n_electrodes()), config, targets)
}

pub fn objective(
    spec: &DeviceSpec,
    v: &VoltageConfig,
    config: &ElectrodeConfig,
    targets: &[TwoModeUnitary; 2],
) -> Result<f64> {
    Ok(objective_terms(spec, v, config, targets)?.value())
}

fn evaluate(
    spec: &DeviceSpec,
    full: &[f64],
    config: &ElectrodeConfig,
    targets: &[TwoModeUnitary; 2],
) -> Result<ObjectiveTerms> {
    let h = build_hamiltonian(spec, &VoltageConfig::from_vec(full.to_vec()))?;
    let prop = Propagator::new(&h)?;
    let length = spec.coupling_length();
    let mut f = [0.0; 2];
    let mut ct = [0.0; 2];
    let mut leak = [0.0; 2];
    for s in 0..2 {
        let own = config.pairs[s];
        let other = config.pairs[1 - s];
        let want = targets[s].transitions();
        for (a, &guide) in own.guides().iter().enumerate() {
            let powers: Vec<f64> = prop
                .column_at(length, guide - 1)
                .iter()
                .map(|c| c.norm_sqr())
                .collect();
            let total: f64 = powers.iter().sum();
            let inside = [powers[own.first() - 1], powers[own.second() - 1]];
            let inside_sum = inside[0] + inside[1];
            let cross = powers[other.first() - 1] + powers[other.second() - 1];
            leak[s] += (total - inside_sum).max(0.0) / total;
            ct[s] += cross / total;
            if inside_sum > 0.0 {
                f[s] += 0.5
                    * (0..2)
                        .map(|c| (want[a][c] * inside[c] / inside_sum).sqrt())
                        .sum::<f64>();
            }
        }
    }
    Ok(ObjectiveTerms {
        f1: f[0],
        f2: f[1],
        crosstalk1: ct[0],
        crosstalk2: ct[1],
        leakage1: leak[0],
        leakage2: leak[1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileResult {
    pub config: ConfigName,
    pub coupling_length: f64,
    pub best_voltages: VoltageConfig,
    pub best_restart: usize,
    pub objective: f64,
    pub f1: f64,
    pub f2: f64,
    pub crosstalk1: f64,
    pub crosstalk2: f64,
    pub leakage1: f64,
    pub leakage2: f64,
    /// Final objective of each restart, in restart order.
    pub restart_trace: Vec<f64>,
}

impl CompileResult {
    pub fn terms(&self) -> ObjectiveTerms {
        ObjectiveTerms {
            f1: self.f1,
            f2: self.f2,
            crosstalk1: self.crosstalk1,
            crosstalk2: self.crosstalk2,
            leakage1: self.leakage1,
            leakage2: self.leakage2,
        }
    }

    /// Running minimum of the restart trace.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.restart_trace
            .iter()
            .map(|&o| {
                if o < best {
                    best = o;
                }
                best
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("compile result serialises")
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("restart,objective,best_so_far\n");
        for (i, (o, b)) in self.restart_trace.iter().zip(self.best_so_far()).enumerate() {
            out.push_str(&format!("{},{:.17e},{:.17e}\n", i + 1, o, b));
        }
        out
    }
}

/// Runs `restarts` local descents from uniform random starts in the voltage
/// box and keeps the best. Restart `r` draws its start from stream `r` of a
/// generator seeded with `seed`, so results do not depend on scheduling.
pub fn optimize_parallel_gates(
    spec: &DeviceSpec,
    config: &ElectrodeConfig,
    targets: &[TwoModeUnitary; 2],
    restarts: usize,
    seed: u64,
) -> Result<CompileResult> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let limit = spec.voltage_limit();
    let n_e = spec.n_electrodes();
    let dim = config.active.len();
    let f = |x: &[f64]| -> Result<f64> {
        Ok(evaluate(spec, &config.expand(x, n_e), config, targets)?.value())
    };

    let runs: Vec<(Vec<f64>, f64)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(-limit..=limit)).collect();
            minimize_in_box(&f, x0, limit)
        })
        .collect::<Result<_>>()?;

    let (best_restart, (best_x, _)) = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.1.total_cmp(&b.1).then(i.cmp(j)))
        .expect("at least one restart");
    let best_voltages = VoltageConfig::from_vec(config.expand(best_x, n_e));
    let terms = objective_terms(spec, &best_voltages, config, targets)?;
    Ok(CompileResult {
        config: config.name,
        coupling_length: spec.coupling_length(),
        best_voltages,
        best_restart: best_restart + 1,
        objective: terms.value(),
        f1: terms.f1,
        f2: terms.f2,
        crosstalk1: terms.crosstalk1,
        crosstalk2: terms.crosstalk2,
        leakage1: terms.leakage1,
        leakage2: terms.leakage2,
        restart_trace: runs.into_iter().map(|(_, o)| o).collect(),
    })
}

/// One optimisation per length, each on a copy of `spec` with that
/// coupling length.
pub fn sweep_chip_length(
    spec: &DeviceSpec,
    config: &ElectrodeConfig,
    targets: &[TwoModeUnitary; 2],
    lengths: &[f64],
    restarts: usize,
    seed: u64,
) -> Result<Vec<CompileResult>> {
    if let Some(bad) = lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "chip lengths must be positive, got {bad}"
        )));
    }
    lengths
        .iter()
        .map(|&l| {
            let s = spec.clone().with_coupling_length(l)?;
            optimize_parallel_gates(&s, config, targets, restarts, seed)
        })
        .collect()
}

fn clamp_box(x: &mut [f64], limit: f64) {
    for xi in x {
        *xi = xi.clamp(-limit, limit);
    }
}

fn gradient<F>(f: &F, x: &[f64], limit: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let hi = (x[i] + FD_STEP).min(limit);
        let lo = (x[i] - FD_STEP).max(-limit);
        probe[i] = hi;
        let fh = f(&probe)?;
        probe[i] = lo;
        let fl = f(&probe)?;
        probe[i] = x[i];
        g[i] = (fh - fl) / (hi - lo);
    }
    Ok(g)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected BFGS with an Armijo backtracking search along the projected
/// path. Returns the final point and its objective.
fn minimize_in_box<F>(f: &F, mut x: Vec<f64>, limit: f64) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let n = x.len();
    clamp_box(&mut x, limit);
    let mut fx = f(&x)?;
    let mut g = gradient(f, &x, limit)?;
    let identity = |n: usize| {
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        m
    };
    let mut hinv = identity(n);
    let mut fresh = true;

    for _ in 0..MAX_ITERATIONS {
        // Coordinates pinned at a bound with the gradient pushing outward stay put.
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= -limit && g[i] > 0.0) || (x[i] >= limit && g[i] < 0.0)))
            .collect();
        let mut d: Vec<f64> = (0..n)
            .map(|i| {
                if !free[i] {
                    return 0.0;
                }
                -(0..n).filter(|&j| free[j]).map(|j| hinv[i][j] * g[j]).sum::<f64>()
            })
            .collect();
        if dot(&d, &g) >= 0.0 {
            hinv = identity(n);
            fresh = true;
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }
        if d.iter().all(|&di| di == 0.0) {
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= MIN_LINE_STEP {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            clamp_box(&mut trial, limit);
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if s.iter().all(|&si| si == 0.0) {
                break;
            }
            let ft = f(&trial)?;
            if ft <= fx + ARMIJO * dot(&g, &s) {
                accepted = Some((trial, s, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, s, f_new)) = accepted else {
            if fresh {
                break;
            }
            hinv = identity(n);
            fresh = true;
            continue;
        };

        let g_new = gradient(f, &x_new, limit)?;
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let step_norm = dot(&s, &s).sqrt();
        if sy > 1e-12 * step_norm * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                for (i, row) in hinv.iter_mut().enumerate() {
                    row.iter_mut().for_each(|h| *h = 0.0);
                    row[i] = scale;
                }
                fresh = false;
            }
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        if step_norm < STEP_TOLERANCE {
            break;
        }
    }
    Ok((x, fx))
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ` with `ρ = 1/(sᵀy)`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}
