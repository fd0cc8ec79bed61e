//! Phase-space sets around the energy sphere `|xi| = rho`.
//!
//! `A` is the shell `||xi|^2 - rho^2| <= 40 v`. `B` keeps the points of `A`
//! whose projection onto every short dual direction `eta` (with
//! `0 < |eta| <= theta_radius`) is longer than `rho^{1/2}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::lattice::{dot, DualLattice};

/// Radial probes per direction across the shell.
pub const RADIAL_PROBES: usize = 16;
/// Directions per independently seeded stream.
const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StructuralConstants {
    /// `R = rho^{1 / (36 d^2 (d + 2))}`.
    pub r: f64,
    /// `M = 5 d^2 + 7 d`.
    pub m: u64,
}

pub fn structural_constants(rho: f64, d: usize) -> Result<StructuralConstants> {
    if !(rho > 1.0) {
        return Err(Error::param(format!("rho must exceed 1, got {rho}")));
    }
    let df = d as f64;
    let d = d as u64;
    Ok(StructuralConstants {
        r: rho.powf(1.0 / (36.0 * df * df * (df + 2.0))),
        m: 5 * d * d + 7 * d,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub rho: f64,
    pub v: f64,
    pub d: usize,
    pub theta_radius: f64,
}

impl GeometryParams {
    pub fn new(rho: f64, v: f64, d: usize, theta_radius: f64) -> Result<Self> {
        if !(rho > 0.0) || !(theta_radius > 0.0) || !(v >= 0.0) || d < 2 {
            return Err(Error::param(format!(
                "invalid geometry parameters: rho = {rho}, v = {v}, d = {d}, theta_radius = {theta_radius}"
            )));
        }
        Ok(GeometryParams {
            rho,
            v,
            d,
            theta_radius,
        })
    }

    /// `theta_radius = 6 M R`, the radius that defines `B` asymptotically.
    pub fn with_asymptotic_radius(rho: f64, v: f64, d: usize) -> Result<Self> {
        let c = structural_constants(rho, d)?;
        Self::new(rho, v, d, 6.0 * c.m as f64 * c.r)
    }

    pub fn lambda(&self) -> f64 {
        self.rho * self.rho
    }

    /// `J = [lambda - 20 v, lambda + 20 v]`.
    pub fn spectral_window(&self) -> (f64, f64) {
        (self.lambda() - 20.0 * self.v, self.lambda() + 20.0 * self.v)
    }

    /// Radii `r` with `|r^2 - rho^2| <= 40 v`.
    pub fn shell_radii(&self) -> (f64, f64) {
        let lam = self.lambda();
        ((lam - 40.0 * self.v).max(0.0).sqrt(), (lam + 40.0 * self.v).sqrt())
    }
}

pub fn in_a(xi: &[f64], params: &GeometryParams) -> bool {
    (dot(xi, xi) - params.lambda()).abs() <= 40.0 * params.v
}

/// Membership test for `B` with the unit directions of the short dual
/// vectors precomputed.
#[derive(Clone, Debug)]
pub struct RegularSet {
    params: GeometryParams,
    directions: Vec<Vec<f64>>,
}

impl RegularSet {
    pub fn new(params: GeometryParams, dual: &DualLattice) -> Result<Self> {
        if dual.dim() != params.d {
            return Err(Error::param("lattice dimension does not match geometry parameters"));
        }
        let directions = dual
            .points_in_ball(params.theta_radius, true)
            .into_iter()
            .map(|p| {
                let n = p.norm();
                p.cart.iter().map(|x| x / n).collect()
            })
            .collect();
        Ok(RegularSet { params, directions })
    }

    pub fn params(&self) -> &GeometryParams {
        &self.params
    }

    /// Number of dual vectors in `B(theta_radius) \ {0}`.
    pub fn constraint_count(&self) -> usize {
        self.directions.len()
    }

    pub fn contains(&self, xi: &[f64]) -> bool {
        in_a(xi, &self.params) && self.projections_clear(xi)
    }

    fn projections_clear(&self, xi: &[f64]) -> bool {
        let bound = self.params.rho.sqrt();
        self.directions.iter().all(|e| dot(xi, e).abs() > bound)
    }

    /// Whether every radial probe along `direction` through the shell is in `B`.
    /// Probes sit at the midpoints of equal radial cells, so none lands on
    /// the shell boundary where rounding decides membership.
    pub fn direction_is_regular(&self, direction: &[f64]) -> bool {
        let (lo, hi) = self.params.shell_radii();
        let mut xi = vec![0.0; direction.len()];
        (0..RADIAL_PROBES).all(|i| {
            let r = lo + (hi - lo) * (i as f64 + 0.5) / RADIAL_PROBES as f64;
            for (x, u) in xi.iter_mut().zip(direction) {
                *x = r * u;
            }
            self.contains(&xi)
        })
    }
}

pub fn in_b(xi: &[f64], params: &GeometryParams, dual: &DualLattice) -> Result<bool> {
    Ok(RegularSet::new(*params, dual)?.contains(xi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FractionEstimate {
    pub fraction: f64,
    /// Binomial 95% half-width, `1.96 sqrt(p (1 - p) / n)`.
    pub ci_halfwidth: f64,
    pub samples: usize,
}

/// Monte Carlo fraction of unit directions whose ray crosses the `A`-shell
/// inside `B`. Directions come from normalized Gaussian vectors; the stream
/// for chunk `c` is `ChaCha8(seed)` at stream `c`, so the estimate does not
/// depend on the worker count.
pub fn regular_direction_fraction(
    params: &GeometryParams,
    dual: &DualLattice,
    samples: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<FractionEstimate> {
    if samples < 1000 {
        return Err(Error::param(format!("need at least 1000 samples, got {samples}")));
    }
    let set = RegularSet::new(*params, dual)?;
    let chunks = samples.div_ceil(CHUNK);
    let hits: Vec<usize> = exec::map_range(chunks, mode, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let count = CHUNK.min(samples - c * CHUNK);
        let mut dir = vec![0.0; params.d];
        let mut hits = 0;
        for _ in 0..count {
            loop {
                for x in dir.iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                }
                let n = dot(&dir, &dir).sqrt();
                if n > 0.0 {
                    dir.iter_mut().for_each(|x| *x /= n);
                    break;
                }
            }
            if set.direction_is_regular(&dir) {
                hits += 1;
            }
        }
        hits
    });
    let total: usize = hits.iter().sum();
    let p = total as f64 / samples as f64;
    Ok(FractionEstimate {
        fraction: p,
        ci_halfwidth: 1.96 * (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
    })
}
