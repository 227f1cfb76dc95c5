//! Shared solver knobs and small numeric helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::grid::{Domain1D, GridFunction};
use std::sync::Arc;

/// Tolerances, iteration budget and seeding shared by the iterative solvers.
///
/// Every random choice in the crate flows from `seed`, so repeated runs with
/// the same options are bit-identical.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverOptions {
    /// Target residual in the dual norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial trial step of the Armijo backtracking line searches.
    pub step0: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 2000,
            step0: 1.0,
            seed: 42,
        }
    }
}

impl SolverOptions {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// `phi_p(t) = |t|^{p-2} t`, with the removable singularity at `t = 0`
/// resolved to `0` (required for `p < 2`).
#[inline]
pub fn phi_p(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.abs().powf(p - 2.0) * t
    }
}

/// Deterministic random grid function with values uniform in `(-1, 1)`.
pub fn seeded_function(domain: &Arc<Domain1D>, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..domain.len())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    GridFunction {
        domain: Arc::clone(domain),
        values,
    }
}

/// Deterministic random grid function with values on the lattice
/// `{-1, -15/16, ..., 15/16, 1}`. Lattice values keep pairwise differences
/// either exactly zero or bounded away from zero, which keeps the curvature
/// of `t -> |t|^p` under control in finite-difference cross-checks at p < 2.
pub fn seeded_lattice_function(domain: &Arc<Domain1D>, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..domain.len())
        .map(|_| rng.gen_range(-16i32..=16) as f64 / 16.0)
        .collect();
    GridFunction {
        domain: Arc::clone(domain),
        values,
    }
}

/// Runs `jobs` closures over at most `threads` workers and collects the
/// results in job order; the outcome is independent of scheduling.
pub fn run_indexed<T, F>(jobs: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(jobs.max(1));
    if threads <= 1 || jobs <= 1 {
        return (0..jobs).map(&f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..jobs).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots_ref = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let value = f(i);
                let mut guard = slots_ref.lock().unwrap();
                guard[i] = Some(value);
            });
        }
    });
    slots.into_iter().map(|s| s.unwrap()).collect()
}
