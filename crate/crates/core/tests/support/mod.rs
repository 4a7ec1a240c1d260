//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwa_core::device_model::{DeviceSpec, VoltageConfig};

pub type C64 = Complex64;

/// Dense `H(v)` assembled entry by entry from the spec's matrices.
pub fn dense_hamiltonian(spec: &DeviceSpec, v: &VoltageConfig) -> Array2<f64> {
    let n = spec.n_guides();
    let volts = v.as_slice();
    let mut h = Array2::zeros((n, n));
    for i in 0..n {
        let mut beta = spec.base_beta()[i];
        for (e, &ve) in volts.iter().enumerate() {
            beta += spec.beta_sensitivity()[[i, e]] * ve;
        }
        h[[i, i]] = beta;
    }
    for i in 0..n - 1 {
        let mut c = spec.base_coupling()[i];
        for (e, &ve) in volts.iter().enumerate() {
            c += spec.coupling_sensitivity()[[i, e]] * ve;
        }
        h[[i, i + 1]] = c;
        h[[i + 1, i]] = c;
    }
    h
}

fn matmul(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    let mut c = Array2::zeros((n, n));
    for i in 0..n {
        for k in 0..n {
            let aik = a[[i, k]];
            for j in 0..n {
                c[[i, j]] += aik * b[[k, j]];
            }
        }
    }
    c
}

/// `exp(−iHL)` by scaling and squaring a truncated Taylor series.
pub fn expm_oracle(h: &Array2<f64>, length: f64) -> Array2<C64> {
    let n = h.nrows();
    let a = h.mapv(|x| C64::new(0.0, -x * length));
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| a[[i, j]].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.25 {
        (norm1 / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let b = a.mapv(|x| x / 2f64.powi(squarings));
    let mut result = Array2::<C64>::eye(n);
    let mut term = Array2::<C64>::eye(n);
    for k in 1..=24 {
        term = matmul(&term, &b).mapv(|x| x / k as f64);
        result = result + &term;
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// `max |U†U − I|` computed directly.
pub fn unitarity_defect(u: &Array2<C64>) -> f64 {
    let n = u.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += u[[k, i]].conj() * u[[k, j]];
            }
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((acc - target).norm());
        }
    }
    worst
}

/// Random device with the default electrode layout and a random in-range
/// voltage vector.
pub fn random_case(rng: &mut ChaCha8Rng) -> (DeviceSpec, VoltageConfig) {
    let n = rng.random_range(2..=11);
    let e = 2 * n;
    let spec = DeviceSpec::random_static(n, e, 24.0, rng.random()).unwrap();
    let v = (0..e).map(|_| rng.random_range(-10.0..=10.0)).collect();
    (spec, VoltageConfig::from_vec(v))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// HOM visibility of the phase-free coupler `[[√η, i√(1−η)], [i√(1−η), √η]]`
/// from its permanent, written out by hand.
pub fn permanent_visibility(eta: f64) -> f64 {
    let r = C64::new(eta.sqrt(), 0.0);
    let t = C64::new(0.0, (1.0 - eta).sqrt());
    let indist = (r * r + t * t).norm_sqr();
    let dist = (r * r).norm_sqr() + (t * t).norm_sqr();
    (dist - indist) / dist
}
