//! Named-stream deterministic random numbers.
//!
//! Every random draw in the repo flows from a root seed through a named
//! stream, so results do not depend on call interleaving across subsystems or
//! on thread scheduling. The generator is splitmix64; normals come from
//! Box-Muller computed in f64 regardless of the tensor scalar kind.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
    spare_normal: Option<f64>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed, spare_normal: None }
    }

    /// Derive an independent stream from a root seed, a purpose name, and a
    /// counter (step index, view index, scene index, ...).
    pub fn stream(seed: u64, name: &str, counter: u64) -> Self {
        let mut state = seed ^ fnv1a(name.as_bytes()).rotate_left(17) ^ counter.wrapping_mul(0xD1B54A32D192ED03);
        // burn one step so nearby counters decorrelate
        let _ = splitmix64(&mut state);
        Rng { state, spare_normal: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.uniform() * n as f64) as usize % n
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let mut u1 = self.uniform();
        if u1 < 1e-300 {
            u1 = 1e-300;
        }
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_tensor<S: Scalar>(&mut self, shape: &[usize]) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::from_f64(self.normal()))
    }

    pub fn uniform_tensor<S: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::from_f64(self.uniform_in(lo, hi)))
    }
}
