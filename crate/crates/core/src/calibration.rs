//! Model-free control: reflectivity/leakage lookup maps over two electrode
//! voltages, and their inversion to operating points.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device_model::{build_hamiltonian, validate_voltages, DeviceSpec, VoltageConfig};
use crate::error::{Error, Result};
use crate::evolution::{output_power, unitary};
use crate::subcircuits::{effective_reflectivity, leakage, SubcircuitPair};

/// Default sweep: −10 V to +10 V in 0.5 V steps.
pub const DEFAULT_GRID_STEP: f64 = 0.5;

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn voltage_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bad grid {start}:{stop}:{step}"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

/// Reflectivity and leakage of one subcircuit sampled over two electrodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupMap {
    electrode_a: usize,
    electrode_b: usize,
    grid_a: Vec<f64>,
    grid_b: Vec<f64>,
    eta: Array2<f64>,
    leakage_in1: Array2<f64>,
    leakage_in2: Array2<f64>,
    pair: SubcircuitPair,
    voltage_limit: f64,
    fixed_voltages: VoltageConfig,
}

fn check_grid(name: &str, grid: &[f64], limit: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} is empty")));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be strictly increasing"
        )));
    }
    if let Some(v) = grid.iter().find(|v| !(v.abs() <= limit)) {
        return Err(Error::InvalidArgument(format!(
            "{name} value {v} V lies outside ±{limit} V"
        )));
    }
    Ok(())
}

impl LookupMap {
    /// Assemble a map from precomputed or measured tables, indexed
    /// `[a, b]`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_tables(
        pair: SubcircuitPair,
        electrode_a: usize,
        electrode_b: usize,
        grid_a: Vec<f64>,
        grid_b: Vec<f64>,
        eta: Array2<f64>,
        leakage_in1: Array2<f64>,
        leakage_in2: Array2<f64>,
        voltage_limit: f64,
        fixed_voltages: VoltageConfig,
    ) -> Result<Self> {
        if electrode_a == electrode_b {
            return Err(Error::InvalidArgument(format!(
                "map electrodes must differ, got {electrode_a} twice"
            )));
        }
        check_grid("grid_a", &grid_a, voltage_limit)?;
        check_grid("grid_b", &grid_b, voltage_limit)?;
        let shape = [grid_a.len(), grid_b.len()];
        for (name, t) in [("eta", &eta), ("leakage_in1", &leakage_in1), ("leakage_in2", &leakage_in2)] {
            if t.shape() != shape {
                return Err(Error::InvalidArgument(format!(
                    "{name} table has shape {:?}, grids imply {:?}",
                    t.shape(),
                    shape
                )));
            }
        }
        if eta.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidArgument("eta entries must lie in [0, 1]".into()));
        }
        if leakage_in1
            .iter()
            .chain(leakage_in2.iter())
            .any(|x| !(0.0..=100.0).contains(x))
        {
            return Err(Error::InvalidArgument(
                "leakage entries must lie in [0, 100] %".into(),
            ));
        }
        Ok(Self {
            electrode_a,
            electrode_b,
            grid_a,
            grid_b,
            eta,
            leakage_in1,
            leakage_in2,
            pair,
            voltage_limit,
            fixed_voltages,
        })
    }

    pub fn electrodes(&self) -> (usize, usize) {
        (self.electrode_a, self.electrode_b)
    }

    pub fn grid_a(&self) -> &[f64] {
        &self.grid_a
    }

    pub fn grid_b(&self) -> &[f64] {
        &self.grid_b
    }

    pub fn eta(&self) -> &Array2<f64> {
        &self.eta
    }

    /// Leakage (%) with light in the pair's first guide.
    pub fn leakage_in1(&self) -> &Array2<f64> {
        &self.leakage_in1
    }

    /// Leakage (%) with light in the pair's second guide.
    pub fn leakage_in2(&self) -> &Array2<f64> {
        &self.leakage_in2
    }

    pub fn pair(&self) -> SubcircuitPair {
        self.pair
    }

    pub fn voltage_limit(&self) -> f64 {
        self.voltage_limit
    }

    pub fn fixed_voltages(&self) -> &VoltageConfig {
        &self.fixed_voltages
    }

    /// Full voltage vector for cell `(i, j)`.
    pub fn voltages_at(&self, i: usize, j: usize) -> VoltageConfig {
        let mut v = self.fixed_voltages.clone();
        // Electrode indices were validated at construction.
        let _ = v.set(self.electrode_a, self.grid_a[i]);
        let _ = v.set(self.electrode_b, self.grid_b[j]);
        v
    }

    fn cell(&self, i: usize, j: usize) -> VoltageSolution {
        VoltageSolution {
            v_a: self.grid_a[i],
            v_b: self.grid_b[j],
            index_a: i,
            index_b: j,
            eta: self.eta[[i, j]],
            leakage_in1: self.leakage_in1[[i, j]],
            leakage_in2: self.leakage_in2[[i, j]],
        }
    }

    /// `v_a,v_b,eta,leak_in1,leak_in2`, row-major over `grid_a` then `grid_b`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("v_a,v_b,eta,leak_in1,leak_in2\n");
        for (i, va) in self.grid_a.iter().enumerate() {
            for (j, vb) in self.grid_b.iter().enumerate() {
                out.push_str(&format!(
                    "{va},{vb},{},{},{}\n",
                    self.eta[[i, j]],
                    self.leakage_in1[[i, j]],
                    self.leakage_in2[[i, j]]
                ));
            }
        }
        out
    }

    pub fn metadata(&self) -> MapMetadata {
        MapMetadata {
            electrode_a: self.electrode_a,
            electrode_b: self.electrode_b,
            pair: self.pair.guides(),
            grid_a: self.grid_a.clone(),
            grid_b: self.grid_b.clone(),
            voltage_limit: self.voltage_limit,
            fixed_voltages: self.fixed_voltages.clone(),
        }
    }
}

/// Companion record written next to a map CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub electrode_a: usize,
    pub electrode_b: usize,
    pub pair: [usize; 2],
    pub grid_a: Vec<f64>,
    pub grid_b: Vec<f64>,
    pub voltage_limit: f64,
    pub fixed_voltages: VoltageConfig,
}

/// Simulate every grid cell of a two-electrode sweep. Cells are evaluated
/// in parallel and assembled in grid order, so the result is independent of
/// scheduling.
pub fn build_lookup_map(
    spec: &DeviceSpec,
    pair: SubcircuitPair,
    electrode_a: usize,
    electrode_b: usize,
    grid_a: &[f64],
    grid_b: &[f64],
    fixed_voltages: &VoltageConfig,
) -> Result<LookupMap> {
    let e = spec.n_electrodes();
    for electrode in [electrode_a, electrode_b] {
        if electrode == 0 || electrode > e {
            return Err(Error::IndexOutOfRange {
                what: "electrode",
                index: electrode,
                max: e,
            });
        }
    }
    if electrode_a == electrode_b {
        return Err(Error::InvalidArgument(format!(
            "map electrodes must differ, got {electrode_a} twice"
        )));
    }
    SubcircuitPair::new(pair.first(), spec.n_guides())?;
    let limit = spec.voltage_limit();
    check_grid("grid_a", grid_a, limit)?;
    check_grid("grid_b", grid_b, limit)?;
    let report = validate_voltages(spec, fixed_voltages);
    if let Some((expected, found)) = report.length_mismatch {
        return Err(Error::DimensionMismatch {
            what: "fixed voltage vector".into(),
            expected,
            found,
        });
    }
    if let Some(&(electrode, value)) = report
        .violations
        .iter()
        .find(|(el, _)| *el != electrode_a && *el != electrode_b)
    {
        return Err(Error::VoltageOutOfRange {
            electrode,
            value,
            limit,
        });
    }

    let nb = grid_b.len();
    let cells = (0..grid_a.len() * nb)
        .into_par_iter()
        .map(|idx| {
            let mut v = fixed_voltages.clone();
            v.set(electrode_a, grid_a[idx / nb])?;
            v.set(electrode_b, grid_b[idx % nb])?;
            let h = build_hamiltonian(spec, &v)?;
            let u = unitary(&h, spec.coupling_length())?;
            let eta = effective_reflectivity(&u, pair)?;
            let leak1 = leakage(&output_power(&u, pair.first())?, pair)?;
            let leak2 = leakage(&output_power(&u, pair.second())?, pair)?;
            Ok((eta, leak1, leak2))
        })
        .collect::<Result<Vec<_>>>()?;

    let shape = (grid_a.len(), nb);
    let pick = |f: fn(&(f64, f64, f64)) -> f64| {
        Array2::from_shape_vec(shape, cells.iter().map(f).collect()).expect("cell count matches grid")
    };
    LookupMap::from_tables(
        pair,
        electrode_a,
        electrode_b,
        grid_a.to_vec(),
        grid_b.to_vec(),
        pick(|c| c.0),
        pick(|c| c.1.clamp(0.0, 100.0)),
        pick(|c| c.2.clamp(0.0, 100.0)),
        limit,
        fixed_voltages.clone(),
    )
}

/// One map cell chosen as an operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageSolution {
    pub v_a: f64,
    pub v_b: f64,
    pub index_a: usize,
    pub index_b: usize,
    pub eta: f64,
    pub leakage_in1: f64,
    pub leakage_in2: f64,
}

impl VoltageSolution {
    pub fn max_leakage(&self) -> f64 {
        self.leakage_in1.max(self.leakage_in2)
    }

    pub fn mean_leakage(&self) -> f64 {
        0.5 * (self.leakage_in1 + self.leakage_in2)
    }

    fn norm(&self) -> f64 {
        self.v_a.hypot(self.v_b)
    }
}

const TIE_TOLERANCE: f64 = 1e-12;

/// `a` strictly better than `b`, comparing keys left to right with a small
/// tolerance for ties.
fn lexicographically_better(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < &(y - TIE_TOLERANCE) {
            return true;
        }
        if x > &(y + TIE_TOLERANCE) {
            return false;
        }
    }
    false
}

/// Cell whose reflectivity is closest to `target_eta` among cells where
/// both inputs leak at most `max_leakage` percent. Ties go to lower mean
/// leakage, then smaller `‖(v_a, v_b)‖`, then the earlier cell in grid order.
pub fn solve_voltage(map: &LookupMap, target_eta: f64, max_leakage: f64) -> Result<VoltageSolution> {
    let mut best: Option<(Vec<f64>, VoltageSolution)> = None;
    let mut best_infeasible: Option<(Vec<f64>, VoltageSolution)> = None;
    for i in 0..map.grid_a.len() {
        for j in 0..map.grid_b.len() {
            let cell = map.cell(i, j);
            let distance = (cell.eta - target_eta).abs();
            if cell.max_leakage() <= max_leakage {
                let key = vec![distance, cell.mean_leakage(), cell.norm()];
                if best.as_ref().is_none_or(|(k, _)| lexicographically_better(&key, k)) {
                    best = Some((key, cell));
                }
            } else {
                let key = vec![cell.max_leakage() - max_leakage, distance, cell.norm()];
                if best_infeasible
                    .as_ref()
                    .is_none_or(|(k, _)| lexicographically_better(&key, k))
                {
                    best_infeasible = Some((key, cell));
                }
            }
        }
    }
    match best {
        Some((_, cell)) => Ok(cell),
        None => Err(Error::NoFeasibleCell {
            best: best_infeasible.map(|(_, c)| Box::new(c)),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVoltage {
    pub target_eta: f64,
    pub voltage: f64,
    /// The unclamped solution fell outside the voltage limit.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Inclusive index range along `grid_a` used for the fit.
    pub segment: (usize, usize),
    pub gates: Vec<GateVoltage>,
}

/// Fit `η ≈ m·v + c` along electrode A at fixed `v_b`, over the longest
/// strictly monotone run through the point nearest `η = 0.5`, and invert it
/// for each target reflectivity.
pub fn gate_voltages_by_linear_fit(map: &LookupMap, fixed_v_b: f64, targets: &[f64]) -> Result<LinearGateFit> {
    let j = map
        .grid_b
        .iter()
        .position(|v| (v - fixed_v_b).abs() <= 1e-9)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("{fixed_v_b} V is not a grid_b value of the map"))
        })?;
    let n = map.grid_a.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "a linear gate fit needs at least 3 slice points, got {n}"
        )));
    }
    let eta: Vec<f64> = (0..n).map(|i| map.eta[[i, j]]).collect();
    let pivot = (0..n)
        .min_by(|&a, &b| (eta[a] - 0.5).abs().total_cmp(&(eta[b] - 0.5).abs()))
        .expect("slice is non-empty");

    let run = |rising: bool| {
        let step_ok = |lo: usize, hi: usize| if rising { eta[hi] > eta[lo] } else { eta[hi] < eta[lo] };
        let mut start = pivot;
        while start > 0 && step_ok(start - 1, start) {
            start -= 1;
        }
        let mut end = pivot;
        while end + 1 < n && step_ok(end, end + 1) {
            end += 1;
        }
        (start, end)
    };
    let up = run(true);
    let down = run(false);
    let (start, end) = if down.1 - down.0 > up.1 - up.0 { down } else { up };
    if end == start {
        return Err(Error::FlatCurve { slope: 0.0 });
    }

    let xs = &map.grid_a[start..=end];
    let ys = &eta[start..=end];
    let len = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / len;
    let my = ys.iter().sum::<f64>() / len;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !(slope.abs() >= 1e-6) {
        return Err(Error::FlatCurve { slope });
    }
    let limit = map.voltage_limit;
    let gates = targets
        .iter()
        .map(|&target_eta| {
            let v = (target_eta - intercept) / slope;
            GateVoltage {
                target_eta,
                voltage: v.clamp(-limit, limit),
                clamped: v.abs() > limit,
            }
        })
        .collect();
    Ok(LinearGateFit {
        slope,
        intercept,
        segment: (start, end),
        gates,
    })
}
