//! Integrated density of states by Brillouin-zone quadrature.
//!
//! `N(lambda) = (2 pi)^{-d} integral_{Omega^dagger} #{j : lambda_j(k) < lambda} dk`
//! is approximated by a midpoint rule on a `G^d` grid over the fundamental
//! parallelepiped of the dual lattice. Fibre spectra are periodic in `k`
//! modulo the dual lattice, so this integrates the same function as the
//! Brillouin zone does.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::fibre::{assemble_on, AssemblyOptions, Convention, InertiaCounter, PlaneWaveBasis, StoragePolicy};
use crate::lattice::DualLattice;
use crate::potential::Potential;

/// Buffer used in the cutoff suggested by a refusal.
pub const DEFAULT_BUFFER: f64 = 2.0;

/// `Gamma(d / 2)` for integer `d >= 1`.
fn half_integer_gamma(d: usize) -> f64 {
    let mut g = if d % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if d % 2 == 0 { 1.0 } else { 0.5 };
    while x < d as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Surface area of the unit sphere in `R^d`, `2 pi^{d/2} / Gamma(d/2)`.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / half_integer_gamma(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FreeReference {
    pub omega: f64,
    /// `N_0(lambda) = (2 pi)^{-d} omega_d lambda^{d/2} / d`.
    pub ids: f64,
    /// `g_0(lambda) = (2 pi)^{-d} omega_d lambda^{(d-2)/2} / 2`.
    pub dos: f64,
}

pub fn free_reference(lambda: f64, d: usize) -> Result<FreeReference> {
    if d < 2 {
        return Err(Error::param(format!("dimension must be at least 2, got {d}")));
    }
    let omega = sphere_area(d);
    let norm = (2.0 * PI).powi(d as i32);
    let lam = lambda.max(0.0);
    let df = d as f64;
    let dos = if lambda < 0.0 {
        0.0
    } else {
        omega * lam.powf((df - 2.0) / 2.0) / (2.0 * norm)
    };
    Ok(FreeReference {
        omega,
        ids: omega * lam.powf(df / 2.0) / (df * norm),
        dos,
    })
}

/// Midpoint grid of `G^d` quasimomenta over the fundamental parallelepiped,
/// each reduced into the Brillouin zone.
#[derive(Clone, Debug, Serialize)]
pub struct QuadratureGrid {
    pub per_dim: usize,
    pub points: Vec<Vec<f64>>,
    /// `|Omega|^{-1} G^{-d}`, so `weight * sum of counts` is the IDS.
    pub weight: f64,
}

impl QuadratureGrid {
    pub fn new(dual: &DualLattice, per_dim: usize) -> Result<Self> {
        if per_dim == 0 {
            return Err(Error::param("quadrature grid needs at least one point per dimension"));
        }
        let d = dual.dim();
        let total = per_dim.checked_pow(d as u32).ok_or_else(|| Error::param("grid too large"))?;
        let mut points = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let frac: Vec<f64> = idx.iter().map(|&j| (j as f64 + 0.5) / per_dim as f64).collect();
            let mut xi = vec![0.0; d];
            for (i, t) in frac.iter().enumerate() {
                for (x, b) in xi.iter_mut().zip(dual.basis().row(i).iter()) {
                    *x += t * b;
                }
            }
            points.push(dual.decompose(&xi).fractional_part);
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < per_dim {
                    break;
                }
                idx[i] = 0;
            }
        }
        let weight = 1.0 / (dual.primal().cell_volume() * total as f64);
        Ok(QuadratureGrid {
            per_dim,
            points,
            weight,
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.weight * self.points.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdsReport {
    pub lambda: f64,
    pub value: f64,
    pub grid: usize,
    pub cutoff: f64,
    pub free_reference: f64,
    pub counts_min: usize,
    pub counts_max: usize,
    /// Count evaluations whose shift had to be perturbed off an eigenvalue.
    pub perturbed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowReport {
    pub lambda: f64,
    pub epsilon: f64,
    pub window: f64,
    /// `omega_d epsilon lambda^{(d-2)/2} / (2 (2 pi)^d)`.
    pub floor: f64,
    /// `window / floor`; NaN when `epsilon = 0`.
    pub ratio: f64,
    pub grid: usize,
    pub cutoff: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Subwindow {
    pub start: f64,
    pub end: f64,
    pub midpoint: f64,
}

/// Quadrature of fibre eigenvalue counts for one potential, grid and cutoff.
#[derive(Clone, Debug)]
pub struct Quadrature<'a> {
    potential: &'a Potential,
    grid: &'a QuadratureGrid,
    cutoff: f64,
    convention: Convention,
    mode: Parallelism,
}

/// Per-threshold totals over the grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountTotals {
    pub lambdas: Vec<f64>,
    /// Sum over k of the count below each threshold.
    pub totals: Vec<u64>,
    pub min: Vec<usize>,
    pub max: Vec<usize>,
    pub perturbed: usize,
}

impl<'a> Quadrature<'a> {
    pub fn new(potential: &'a Potential, grid: &'a QuadratureGrid, cutoff: f64) -> Self {
        Quadrature {
            potential,
            grid,
            cutoff,
            convention: Convention::default(),
            mode: Parallelism::default(),
        }
    }

    pub fn parallelism(mut self, mode: Parallelism) -> Self {
        self.mode = mode;
        self
    }

    pub fn convention(mut self, convention: Convention) -> Self {
        self.convention = convention;
        self
    }

    /// Refuses cutoffs below `sqrt(lambda + 40 v)`.
    pub fn check_cutoff(&self, lambda: f64) -> Result<()> {
        if lambda <= 0.0 {
            return Ok(());
        }
        let v = self.potential.sup_norm_upper();
        let minimum = (lambda + 40.0 * v).sqrt();
        if self.cutoff < minimum {
            return Err(Error::CutoffTooSmall {
                cutoff: self.cutoff,
                lambda,
                suggested: minimum + DEFAULT_BUFFER,
            });
        }
        Ok(())
    }

    /// Eigenvalue counts below each threshold at every grid point, summed
    /// in grid order.
    pub fn counts(&self, lambdas: &[f64]) -> Result<CountTotals> {
        let opts = AssemblyOptions {
            storage: StoragePolicy::Sparse,
            convention: self.convention,
        };
        let dual = self.potential.dual();
        let per_k: Vec<Result<(Vec<usize>, usize)>> = exec::map(&self.grid.points, self.mode, |k| {
            let basis = PlaneWaveBasis::new(dual, k, self.cutoff)?;
            let matrix = assemble_on(self.potential, basis, &opts);
            let counter = InertiaCounter::new(&matrix);
            let mut perturbed = 0;
            let mut counts = Vec::with_capacity(lambdas.len());
            for &lam in lambdas {
                let out = counter.count(lam)?;
                if out.retries > 0 {
                    perturbed += 1;
                }
                counts.push(out.count);
            }
            Ok((counts, perturbed))
        });
        let mut totals = CountTotals {
            lambdas: lambdas.to_vec(),
            totals: vec![0; lambdas.len()],
            min: vec![usize::MAX; lambdas.len()],
            max: vec![0; lambdas.len()],
            perturbed: 0,
        };
        for r in per_k {
            let (counts, perturbed) = r?;
            totals.perturbed += perturbed;
            for (j, c) in counts.into_iter().enumerate() {
                totals.totals[j] += c as u64;
                totals.min[j] = totals.min[j].min(c);
                totals.max[j] = totals.max[j].max(c);
            }
        }
        Ok(totals)
    }

    pub fn ids(&self, lambda: f64) -> Result<IdsReport> {
        Ok(self.ids_many(&[lambda])?.remove(0))
    }

    /// IDS at several thresholds from one pass over the grid.
    pub fn ids_many(&self, lambdas: &[f64]) -> Result<Vec<IdsReport>> {
        for &l in lambdas {
            self.check_cutoff(l)?;
        }
        let t = self.counts(lambdas)?;
        let d = self.potential.dim();
        lambdas
            .iter()
            .enumerate()
            .map(|(j, &lambda)| {
                Ok(IdsReport {
                    lambda,
                    value: self.grid.weight * t.totals[j] as f64,
                    grid: self.grid.per_dim,
                    cutoff: self.cutoff,
                    free_reference: free_reference(lambda, d)?.ids,
                    counts_min: t.min[j],
                    counts_max: t.max[j],
                    perturbed: t.perturbed,
                })
            })
            .collect()
    }

    pub fn window(&self, lambda: f64, epsilon: f64) -> Result<WindowReport> {
        Ok(self.windows(&[(lambda, epsilon)])?.remove(0))
    }

    /// Windows `N(lambda + epsilon) - N(lambda)`; both endpoints share the
    /// grid and cutoff, and counts are differenced per k before summing.
    pub fn windows(&self, requests: &[(f64, f64)]) -> Result<Vec<WindowReport>> {
        let mut lambdas = Vec::with_capacity(2 * requests.len());
        for &(lambda, epsilon) in requests {
            if !(epsilon >= 0.0) {
                return Err(Error::param(format!("window width must be >= 0, got {epsilon}")));
            }
            self.check_cutoff(lambda + epsilon)?;
            lambdas.push(lambda);
            lambdas.push(lambda + epsilon);
        }
        let t = self.counts(&lambdas)?;
        let d = self.potential.dim();
        requests
            .iter()
            .enumerate()
            .map(|(j, &(lambda, epsilon))| {
                let diff = t.totals[2 * j + 1] as i64 - t.totals[2 * j] as i64;
                let window = self.grid.weight * diff as f64;
                let floor = window_floor(lambda, epsilon, d)?;
                Ok(WindowReport {
                    lambda,
                    epsilon,
                    window,
                    floor,
                    ratio: if epsilon > 0.0 { window / floor } else { f64::NAN },
                    grid: self.grid.per_dim,
                    cutoff: self.cutoff,
                })
            })
            .collect()
    }
}

/// `omega_d epsilon lambda^{(d-2)/2} / (2 (2 pi)^d)`.
pub fn window_floor(lambda: f64, epsilon: f64, d: usize) -> Result<f64> {
    Ok(free_reference(lambda, d)?.dos * epsilon)
}

pub fn ids(potential: &Potential, lambda: f64, grid: &QuadratureGrid, cutoff: f64) -> Result<IdsReport> {
    Quadrature::new(potential, grid, cutoff).ids(lambda)
}

pub fn window(potential: &Potential, lambda: f64, epsilon: f64, grid: &QuadratureGrid, cutoff: f64) -> Result<WindowReport> {
    Quadrature::new(potential, grid, cutoff).window(lambda, epsilon)
}

/// Splits `[lambda, lambda + epsilon]` into equal contiguous pieces of
/// length at most `2 lambda^{(-d-3)/2}`.
pub fn partition_window(lambda: f64, epsilon: f64, d: usize) -> Result<Vec<Subwindow>> {
    if !(epsilon > 0.0) || !(lambda > 0.0) {
        return Err(Error::param("partition needs lambda > 0 and epsilon > 0"));
    }
    let max_len = 2.0 * lambda.powf(-(d as f64 + 3.0) / 2.0);
    let q = epsilon / max_len;
    // absorb rounding in q so exact multiples do not gain a sliver piece
    let pieces = ((q * (1.0 - 1e-12)).ceil() as usize).max(1);
    let end = lambda + epsilon;
    let step = epsilon / pieces as f64;
    Ok((0..pieces)
        .map(|i| {
            let start = lambda + step * i as f64;
            let stop = if i + 1 == pieces { end } else { lambda + step * (i + 1) as f64 };
            Subwindow {
                start,
                end: stop,
                midpoint: 0.5 * (start + stop),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;

    fn square() -> Lattice {
        Lattice::cubic(2, 2.0 * PI).unwrap()
    }

    #[test]
    fn free_reference_values() {
        let r = free_reference(1.0, 2).unwrap();
        assert!((r.omega - 2.0 * PI).abs() < 1e-14);
        assert!((r.ids - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!((r.dos - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!((free_reference(100.0, 2).unwrap().ids - 7.957747154594767).abs() < 1e-12);
        let r3 = free_reference(1.0, 3).unwrap();
        assert!((r3.omega - 4.0 * PI).abs() < 1e-13);
        assert!((r3.ids - 1.0 / (6.0 * PI * PI)).abs() < 1e-15);
        // g0 = dN0/dlambda by central difference
        for d in 2..6 {
            let h = 1e-5;
            let fd = (free_reference(7.0 + h, d).unwrap().ids - free_reference(7.0 - h, d).unwrap().ids) / (2.0 * h);
            assert!((fd - free_reference(7.0, d).unwrap().dos).abs() < 1e-8);
        }
        assert!(free_reference(1.0, 1).is_err());
    }

    #[test]
    fn grid_weights() {
        let dual = square().dual();
        let g = QuadratureGrid::new(&dual, 7).unwrap();
        assert_eq!(g.points.len(), 49);
        assert!((g.total_weight() - 1.0 / (4.0 * PI * PI)).abs() < 1e-16);
        for k in &g.points {
            assert!(dual.in_brillouin_zone(k, 1e-12));
        }
    }

    #[test]
    fn free_ids_small_grid() {
        let lat = square();
        let v = Potential::zero(&lat);
        let grid = QuadratureGrid::new(v.dual(), 40).unwrap();
        let r = ids(&v, 1.0, &grid, 3.0).unwrap();
        let exact = 1.0 / (4.0 * PI);
        assert!((r.value - exact).abs() / exact < 0.02, "{}", r.value);
        assert_eq!(ids(&v, -1.0, &grid, 3.0).unwrap().value, 0.0);
    }

    #[test]
    fn refuses_small_cutoff() {
        let v = Potential::cosine_sum(&square(), 1.0, &[0, 1]).unwrap();
        let grid = QuadratureGrid::new(v.dual(), 2).unwrap();
        let err = ids(&v, 100.0, &grid, 10.0).unwrap_err();
        match err {
            Error::CutoffTooSmall { suggested, .. } => assert!((suggested - (260f64.sqrt() + 2.0)).abs() < 1e-12),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn empty_window() {
        let v = Potential::zero(&square());
        let grid = QuadratureGrid::new(v.dual(), 4).unwrap();
        let w = window(&v, 5.0, 0.0, &grid, 4.0).unwrap();
        assert_eq!(w.window, 0.0);
        assert!(w.ratio.is_nan());
        assert!(window(&v, 5.0, -1.0, &grid, 4.0).is_err());
    }

    #[test]
    fn partition_examples() {
        let parts = partition_window(100.0, 0.5, 2).unwrap();
        assert_eq!(parts.len(), 25000);
        let max_len = 2.0 * 100f64.powf(-2.5);
        assert!(parts.iter().all(|p| p.end - p.start <= max_len * (1.0 + 1e-9)));
        assert_eq!(parts[0].start, 100.0);
        assert_eq!(parts.last().unwrap().end, 100.5);
        for w in parts.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        let single = partition_window(100.0, 1e-6, 2).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!((single[0].start, single[0].end), (100.0, 100.0 + 1e-6));
    }
}
