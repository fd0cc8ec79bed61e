//! Truncated plane-wave matrices of the fibre operators `H(k) = (D + k)^2 + V`.
//!
//! In the basis `exp(i <n, x>)`, `n` in the dual lattice, the matrix has
//! diagonal `|n + k|^2 + c_0` and off-diagonal entries
//! `A[n][l] = |Omega|^{-1/2} V_{n-l}`, where `c_0 = |Omega|^{-1/2} V_0`.
//! The basis is truncated to the ball `|n + k| <= cutoff`.

mod eigen;
mod ldl;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::DualLattice;
use crate::potential::Potential;

pub use eigen::{eigenpair_near, eigenpair_near_with, solve_dense, spectrum, BandSolution, ShiftInvertOptions};
pub use ldl::{CountOutcome, EnvelopeLdl, Inertia, InertiaCounter, SmallPivot};

/// Matrices larger than this are kept sparse only.
pub const DEFAULT_DENSE_THRESHOLD: usize = 2000;

/// Bands whose distance to the nearest other eigenvalue is below
/// `DEGENERACY_REL * (1 + |zeta|)` are treated as degenerate.
pub const DEGENERACY_REL: f64 = 1e-6;

/// Shell width, in units of the potential's sup-norm, added to `lambda`
/// when sizing the basis.
const SHELL_FACTOR: f64 = 40.0;

/// Plane-wave indices `n` with `|n + k| <= cutoff`, ordered by `|n + k|` and
/// then lexicographically by dual-basis coordinates.
#[derive(Clone, Debug)]
pub struct PlaneWaveBasis {
    dim: usize,
    k: Vec<f64>,
    cutoff: f64,
    coords: Vec<i64>,
    carts: Vec<f64>,
    grid: IndexGrid,
}

impl PlaneWaveBasis {
    pub fn new(dual: &DualLattice, k: &[f64], cutoff: f64) -> Result<Self> {
        if k.len() != dual.dim() {
            return Err(Error::param(format!(
                "k has dimension {}, lattice has {}",
                k.len(),
                dual.dim()
            )));
        }
        if !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(Error::param(format!("cutoff must be positive, got {cutoff}")));
        }
        let center: Vec<f64> = k.iter().map(|x| -x).collect();
        let points = dual.points_near(&center, cutoff);
        if points.is_empty() {
            return Err(Error::param(format!(
                "plane-wave basis is empty: no dual point within {cutoff} of -k"
            )));
        }
        let dim = dual.dim();
        let mut coords = Vec::with_capacity(points.len() * dim);
        let mut carts = Vec::with_capacity(points.len() * dim);
        for p in &points {
            coords.extend_from_slice(&p.coords);
            carts.extend_from_slice(&p.cart);
        }
        let grid = IndexGrid::new(dim, &coords);
        Ok(PlaneWaveBasis {
            dim,
            k: k.to_vec(),
            cutoff,
            coords,
            carts,
            grid,
        })
    }

    /// Same index set, different quasimomentum.
    pub fn with_k(&self, k: &[f64]) -> Self {
        let mut out = self.clone();
        out.k = k.to_vec();
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Dual-basis coordinates of index `i`.
    pub fn index(&self, i: usize) -> &[i64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Cartesian position of the dual point `n` at index `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.carts[i * self.dim..(i + 1) * self.dim]
    }

    /// `n + k` for index `i`.
    pub fn shifted(&self, i: usize) -> Vec<f64> {
        self.point(i).iter().zip(&self.k).map(|(n, k)| n + k).collect()
    }

    pub fn kinetic(&self, i: usize) -> f64 {
        self.point(i).iter().zip(&self.k).map(|(n, k)| (n + k) * (n + k)).sum()
    }

    pub fn position(&self, coords: &[i64]) -> Option<usize> {
        self.grid.get(coords)
    }

    /// Indices sorted lexicographically by coordinates; this keeps coupled
    /// plane waves close together for envelope factorization.
    pub fn band_ordering(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.size()).collect();
        order.sort_by(|&a, &b| self.index(a).cmp(self.index(b)));
        order
    }
}

/// Dense lookup table from integer coordinates to basis positions.
#[derive(Clone, Debug)]
struct IndexGrid {
    lo: Vec<i64>,
    extent: Vec<usize>,
    slots: Vec<u32>,
}

impl IndexGrid {
    fn new(dim: usize, coords: &[i64]) -> Self {
        let mut lo = vec![i64::MAX; dim];
        let mut hi = vec![i64::MIN; dim];
        for n in coords.chunks(dim) {
            for i in 0..dim {
                lo[i] = lo[i].min(n[i]);
                hi[i] = hi[i].max(n[i]);
            }
        }
        let extent: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| (h - l + 1) as usize).collect();
        let mut grid = IndexGrid {
            slots: vec![u32::MAX; extent.iter().product()],
            lo,
            extent,
        };
        for (pos, n) in coords.chunks(dim).enumerate() {
            let slot = grid.slot(n).expect("index inside its own bounding box");
            grid.slots[slot] = pos as u32;
        }
        grid
    }

    fn slot(&self, n: &[i64]) -> Option<usize> {
        let mut s = 0usize;
        for ((&c, &l), &e) in n.iter().zip(&self.lo).zip(&self.extent) {
            let off = c - l;
            if off < 0 || off as usize >= e {
                return None;
            }
            s = s * e + off as usize;
        }
        Some(s)
    }

    fn get(&self, n: &[i64]) -> Option<usize> {
        self.slot(n)
            .map(|s| self.slots[s])
            .filter(|&v| v != u32::MAX)
            .map(|v| v as usize)
    }
}

/// How the off-diagonal couplings are scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `|Omega|^{-1/2} V_{n-l}`: the matrix of the operator under the
    /// coefficient normalization used by [`Potential`].
    #[default]
    OperatorFaithful,
    /// `V_{n-l}` without the volume factor (the coefficient relation written
    /// with the factor dropped). Agrees with the faithful form when `|Omega| = 1`.
    StrictTranscription,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoragePolicy {
    Auto { dense_threshold: usize },
    Dense,
    Sparse,
}

impl Default for StoragePolicy {
    fn default() -> Self {
        StoragePolicy::Auto {
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub storage: StoragePolicy,
    pub convention: Convention,
}

impl AssemblyOptions {
    pub fn sparse() -> Self {
        AssemblyOptions {
            storage: StoragePolicy::Sparse,
            ..Default::default()
        }
    }

    pub fn dense() -> Self {
        AssemblyOptions {
            storage: StoragePolicy::Dense,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageKind {
    Dense,
    Sparse,
}

/// Hermitian matrix as its real diagonal plus strictly upper entries.
#[derive(Clone, Debug, Default)]
pub struct SparseHermitian {
    pub diag: Vec<f64>,
    /// `(i, j, A[i][j])` with `i < j`.
    pub upper: Vec<(u32, u32, Complex64)>,
}

impl SparseHermitian {
    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        for ((yi, d), xi) in y.iter_mut().zip(&self.diag).zip(x) {
            *yi = xi * d;
        }
        for &(i, j, a) in &self.upper {
            let (i, j) = (i as usize, j as usize);
            y[i] += a * x[j];
            y[j] += a.conj() * x[i];
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.size();
        let mut m = DMatrix::zeros(n, n);
        for (i, d) in self.diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(*d, 0.0);
        }
        for &(i, j, a) in &self.upper {
            m[(i as usize, j as usize)] = a;
            m[(j as usize, i as usize)] = a.conj();
        }
        m
    }

    pub fn is_real(&self) -> bool {
        self.upper.iter().all(|(_, _, a)| a.im == 0.0)
    }

    /// Cheap upper bound on the spectral norm (max absolute row sum).
    pub fn norm_bound(&self) -> f64 {
        let mut rows: Vec<f64> = self.diag.iter().map(|d| d.abs()).collect();
        for &(i, j, a) in &self.upper {
            rows[i as usize] += a.norm();
            rows[j as usize] += a.norm();
        }
        rows.into_iter().fold(0.0, f64::max)
    }
}

/// Truncated matrix of `H(k)`.
#[derive(Clone, Debug)]
pub struct FibreMatrix {
    basis: PlaneWaveBasis,
    entries: SparseHermitian,
    dense: Option<DMatrix<Complex64>>,
}

impl FibreMatrix {
    pub fn basis(&self) -> &PlaneWaveBasis {
        &self.basis
    }

    pub fn size(&self) -> usize {
        self.entries.size()
    }

    pub fn storage(&self) -> StorageKind {
        if self.dense.is_some() {
            StorageKind::Dense
        } else {
            StorageKind::Sparse
        }
    }

    pub fn entries(&self) -> &SparseHermitian {
        &self.entries
    }

    /// The full matrix; built on demand for sparse storage.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        match &self.dense {
            Some(m) => m.clone(),
            None => self.entries.to_dense(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.entries.diag.iter().sum()
    }

    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.entries.matvec(x, y)
    }

    /// `max |A[i][j] - conj(A[j][i])|` over the full matrix.
    pub fn hermiticity_defect(&self) -> f64 {
        let m = self.to_dense();
        let n = m.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

pub fn assemble(potential: &Potential, k: &[f64], cutoff: f64) -> Result<FibreMatrix> {
    assemble_with(potential, k, cutoff, &AssemblyOptions::default())
}

pub fn assemble_with(potential: &Potential, k: &[f64], cutoff: f64, opts: &AssemblyOptions) -> Result<FibreMatrix> {
    let basis = PlaneWaveBasis::new(potential.dual(), k, cutoff)?;
    Ok(assemble_on(potential, basis, opts))
}

/// Assembles on a prebuilt basis; `basis.k()` is the quasimomentum used.
pub fn assemble_on(potential: &Potential, basis: PlaneWaveBasis, opts: &AssemblyOptions) -> FibreMatrix {
    let scale = match opts.convention {
        Convention::OperatorFaithful => potential.cell_volume().sqrt().recip(),
        Convention::StrictTranscription => 1.0,
    };
    let c0 = scale * potential.constant_mode().re;
    let n = basis.size();
    let diag: Vec<f64> = (0..n).map(|i| basis.kinetic(i) + c0).collect();

    let support: Vec<(&Vec<i64>, Complex64)> = potential
        .nonconstant_support()
        .map(|(m, v)| (m, v * scale))
        .collect();
    let mut upper = Vec::new();
    let mut l = vec![0i64; basis.dim()];
    for i in 0..n {
        let ni = basis.index(i);
        for (m, v) in &support {
            for ((lc, a), b) in l.iter_mut().zip(ni).zip(m.iter()) {
                *lc = a - b;
            }
            if let Some(j) = basis.position(&l) {
                if j > i {
                    upper.push((i as u32, j as u32, *v));
                }
            }
        }
    }
    upper.sort_by_key(|&(i, j, _)| (i, j));

    let entries = SparseHermitian { diag, upper };
    let dense = match opts.storage {
        StoragePolicy::Dense => true,
        StoragePolicy::Sparse => false,
        StoragePolicy::Auto { dense_threshold } => n <= dense_threshold,
    }
    .then(|| entries.to_dense());
    FibreMatrix { basis, entries, dense }
}

/// Number of eigenvalues strictly below `lambda`, from the inertia of an
/// envelope `LDL^H` factorization of `A - lambda`.
pub fn count_below(matrix: &FibreMatrix, lambda: f64) -> Result<usize> {
    Ok(InertiaCounter::new(matrix).count(lambda)?.count)
}

/// Same count from a full eigendecomposition.
pub fn count_below_dense(matrix: &FibreMatrix, lambda: f64) -> Result<usize> {
    Ok(spectrum(matrix)?.iter().filter(|&&z| z < lambda).count())
}

/// `grad_k zeta = 2 sum_n (n + k) |psi_n|^2` for a simple band.
pub fn group_velocity(solution: &BandSolution, basis: &PlaneWaveBasis) -> Result<Vec<f64>> {
    if solution.degenerate {
        return Err(Error::Degenerate(format!(
            "eigenvalue {} has gap {:.3e}; the group velocity is not defined",
            solution.zeta, solution.gap
        )));
    }
    if solution.coeffs.len() != basis.size() {
        return Err(Error::param("eigenvector does not match the basis size"));
    }
    let mut v = vec![0.0; basis.dim()];
    for (i, c) in solution.coeffs.iter().enumerate() {
        let w = 2.0 * c.norm_sqr();
        for (vj, (n, k)) in v.iter_mut().zip(basis.point(i).iter().zip(basis.k())) {
            *vj += w * (n + k);
        }
    }
    Ok(v)
}

/// `sqrt(lambda_max + 40 v) + buffer`.
pub fn suggest_cutoff(lambda_max: f64, v_upper: f64, buffer: f64) -> Result<f64> {
    if !(lambda_max > 0.0) {
        return Err(Error::param(format!("lambda_max must be positive, got {lambda_max}")));
    }
    if v_upper < 0.0 || buffer < 0.0 {
        return Err(Error::param("sup-norm and buffer must be non-negative"));
    }
    Ok((lambda_max + SHELL_FACTOR * v_upper).sqrt() + buffer)
}

/// Accepts `suggest_cutoff(lambda, v, buffer)` when doubling the buffer
/// leaves every count below `lambda` unchanged at the test points.
pub fn cutoff_is_stable(potential: &Potential, lambda: f64, buffer: f64, k_points: &[Vec<f64>]) -> Result<bool> {
    let v = potential.sup_norm_upper();
    let c1 = suggest_cutoff(lambda, v, buffer)?;
    let c2 = suggest_cutoff(lambda, v, 2.0 * buffer)?;
    for k in k_points {
        let a = count_below(&assemble_with(potential, k, c1, &AssemblyOptions::sparse())?, lambda)?;
        let b = count_below(&assemble_with(potential, k, c2, &AssemblyOptions::sparse())?, lambda)?;
        if a != b {
            log::info!("cutoff {c1} unstable at k = {k:?}: {a} vs {b} eigenvalues below {lambda}");
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::lattice::Lattice;

    fn square() -> Lattice {
        Lattice::cubic(2, 2.0 * PI).unwrap()
    }

    fn mathieu_x1() -> Potential {
        Potential::cosine_sum(&square(), 1.0, &[0]).unwrap()
    }

    #[test]
    fn free_basis_and_matrix() {
        let v = Potential::zero(&square());
        let a = assemble(&v, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(a.size(), 5);
        let idx: Vec<&[i64]> = (0..5).map(|i| a.basis().index(i)).collect();
        assert_eq!(idx, vec![&[0, 0][..], &[-1, 0], &[0, -1], &[0, 1], &[1, 0]]);
        assert_eq!(a.entries().diag, vec![0.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(a.entries().upper.is_empty());
        assert_eq!(a.storage(), StorageKind::Dense);
    }

    #[test]
    fn mathieu_couplings() {
        let a = assemble(&mathieu_x1(), &[0.0, 0.0], 1.0).unwrap();
        let m = a.to_dense();
        let b = a.basis();
        let origin = b.position(&[0, 0]).unwrap();
        for (n, want) in [([1, 0], 1.0), ([-1, 0], 1.0), ([0, 1], 0.0), ([0, -1], 0.0)] {
            let j = b.position(&n).unwrap();
            assert!((m[(origin, j)].re - want).abs() < 1e-14, "{n:?}");
            assert_eq!(m[(origin, j)].im, 0.0);
        }
        assert_eq!(a.hermiticity_defect(), 0.0);

        let shifted = assemble(&mathieu_x1(), &[0.3, 0.0], 1.0).unwrap();
        let j = shifted.basis().position(&[-1, 0]).unwrap();
        assert!((shifted.entries().diag[j] - 0.49).abs() < 1e-14);
        assert!(shifted.basis().position(&[1, 0]).is_none());
    }

    #[test]
    fn strict_transcription_drops_volume_factor() {
        let opts = AssemblyOptions {
            convention: Convention::StrictTranscription,
            ..Default::default()
        };
        let a = assemble_with(&mathieu_x1(), &[0.0, 0.0], 1.0, &opts).unwrap();
        let max = a.entries().upper.iter().map(|e| e.2.re).fold(0.0, f64::max);
        assert!((max - 2.0 * PI).abs() < 1e-12);
        // unit-volume lattice: both conventions agree
        let unit = Lattice::cubic(2, 1.0).unwrap();
        let v = Potential::cosine_sum(&unit, 0.7, &[0, 1]).unwrap();
        let f = assemble(&v, &[0.1, 0.2], 20.0).unwrap();
        let s = assemble_with(&v, &[0.1, 0.2], 20.0, &opts).unwrap();
        assert_eq!(f.entries().upper, s.entries().upper);
    }

    #[test]
    fn storage_selection() {
        let v = mathieu_x1();
        let small = assemble_with(&v, &[0.0, 0.0], 3.0, &AssemblyOptions::sparse()).unwrap();
        assert_eq!(small.storage(), StorageKind::Sparse);
        let opts = AssemblyOptions {
            storage: StoragePolicy::Auto { dense_threshold: 10 },
            ..Default::default()
        };
        assert_eq!(assemble_with(&v, &[0.0, 0.0], 3.0, &opts).unwrap().storage(), StorageKind::Sparse);
        assert_eq!(assemble_with(&v, &[0.0, 0.0], 1.0, &opts).unwrap().storage(), StorageKind::Dense);
    }

    #[test]
    fn cutoff_below_k_still_builds() {
        let v = Potential::zero(&square());
        // k on the zone boundary: cutoff = |k| still reaches n = 0 and n = -e1
        let a = assemble(&v, &[0.5, 0.0], 0.5).unwrap();
        assert_eq!(a.size(), 2);
        assert!(assemble(&v, &[0.5, 0.0], 0.4).is_err());
        assert!(assemble(&v, &[0.0, 0.0], 0.0).is_err());
        // a ball that misses every shifted lattice point
        assert!(matches!(
            assemble(&v, &[0.5, 0.5], 0.3),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn counts() {
        let free = assemble(&Potential::zero(&square()), &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(count_below(&free, 0.5).unwrap(), 1);
        assert_eq!(count_below(&free, -1e300).unwrap(), 0);
        let a = assemble(&mathieu_x1(), &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(count_below(&a, 0.0).unwrap(), 1);
        assert_eq!(count_below(&a, 1.5).unwrap(), 4);
        assert_eq!(count_below_dense(&a, 0.0).unwrap(), 1);
        assert_eq!(count_below_dense(&a, 1.5).unwrap(), 4);
    }

    #[test]
    fn count_at_exact_eigenvalue_is_perturbed() {
        let a = assemble(&mathieu_x1(), &[0.0, 0.0], 1.0).unwrap();
        let out = InertiaCounter::new(&a).count(2.0).unwrap();
        assert!(out.retries > 0);
        // perturbed upward, so the eigenvalue at 2 is counted
        assert_eq!(out.count, 5);
    }

    #[test]
    fn cutoff_suggestions() {
        assert_eq!(suggest_cutoff(100.0, 0.0, 2.0).unwrap(), 12.0);
        assert!((suggest_cutoff(100.0, 4.0, 2.0).unwrap() - (260f64.sqrt() + 2.0)).abs() < 1e-14);
        assert!(suggest_cutoff(0.0, 1.0, 1.0).is_err());
        let v = Potential::cosine_sum(&square(), 1.0, &[0, 1]).unwrap();
        let ks = vec![vec![0.1, 0.2], vec![-0.4, 0.3], vec![0.5, 0.5]];
        assert!(cutoff_is_stable(&v, 30.0, 2.0, &ks).unwrap());
    }
}
