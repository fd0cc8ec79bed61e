//! Envelope (skyline) `LDL^H` factorization of shifted Hermitian matrices.
//!
//! Row `p` of the lower triangle is stored from its first structurally
//! nonzero column to the diagonal; fill-in never leaves that envelope. No
//! pivoting is done: a pivot below tolerance is reported as [`SmallPivot`]
//! and callers move the shift. By Sylvester's law of inertia the signs of
//! `D` count the eigenvalues on each side of the shift.

use num_complex::Complex64;
use serde::Serialize;

use super::{FibreMatrix, SparseHermitian};
use crate::error::{Error, Result};

/// Pivots with `|d| <= PIVOT_REL * scale` are treated as zero.
const PIVOT_REL: f64 = 1e-12;
const MAX_RETRIES: usize = 8;
/// Relative shift applied per retry.
const RETRY_REL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Inertia {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmallPivot {
    pub row: usize,
    pub value: f64,
}

/// Sparsity envelope of a Hermitian matrix under a symmetric permutation.
#[derive(Clone, Debug)]
struct Envelope {
    /// `order[p]` is the original index placed at position `p`.
    order: Vec<usize>,
    diag: Vec<f64>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    /// Lower-triangle entries in permuted positions, `(p, q, A[p][q])`, `q < p`.
    lower: Vec<(usize, usize, Complex64)>,
    scale: f64,
}

impl Envelope {
    fn new(a: &SparseHermitian, order: Vec<usize>) -> Self {
        let n = a.size();
        let mut pos = vec![0usize; n];
        for (p, &i) in order.iter().enumerate() {
            pos[i] = p;
        }
        let mut first: Vec<usize> = (0..n).collect();
        let mut lower = Vec::with_capacity(a.upper.len());
        for &(i, j, v) in &a.upper {
            let (pi, pj) = (pos[i as usize], pos[j as usize]);
            // A[i][j] = v, A[j][i] = conj(v)
            let (p, q, val) = if pi > pj { (pi, pj, v) } else { (pj, pi, v.conj()) };
            first[p] = first[p].min(q);
            lower.push((p, q, val));
        }
        lower.sort_by_key(|&(p, q, _)| (p, q));
        let mut row_start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for p in 0..n {
            row_start.push(acc);
            acc += p - first[p];
        }
        row_start.push(acc);
        let diag = order.iter().map(|&i| a.diag[i]).collect();
        Envelope {
            order,
            diag,
            first,
            row_start,
            lower,
            scale: a.norm_bound(),
        }
    }

    fn factor(&self, shift: f64) -> std::result::Result<EnvelopeLdl, SmallPivot> {
        let n = self.diag.len();
        let tol = PIVOT_REL * (self.scale + shift.abs()).max(1.0);
        let mut l = vec![Complex64::new(0.0, 0.0); self.row_start[n]];
        let mut d = vec![0.0; n];
        let mut w: Vec<Complex64> = Vec::new();
        let mut cursor = 0;
        for p in 0..n {
            let f = self.first[p];
            let width = p - f;
            w.clear();
            w.resize(width, Complex64::new(0.0, 0.0));
            while cursor < self.lower.len() && self.lower[cursor].0 == p {
                let (_, q, v) = self.lower[cursor];
                w[q - f] = v;
                cursor += 1;
            }
            // w[q] <- A[p][q] - sum_t (L[p][t] d_t) conj(L[q][t])
            for q in f..p {
                let fq = self.first[q];
                let start = f.max(fq);
                if start < q {
                    let lq = &l[self.row_start[q] + (start - fq)..self.row_start[q] + (q - fq)];
                    let wp = &w[start - f..q - f];
                    let mut s = Complex64::new(0.0, 0.0);
                    for (a, b) in wp.iter().zip(lq) {
                        s += a * b.conj();
                    }
                    w[q - f] -= s;
                }
            }
            let mut dp = self.diag[p] - shift;
            let row = &mut l[self.row_start[p]..self.row_start[p + 1]];
            for (idx, (lv, wv)) in row.iter_mut().zip(&w).enumerate() {
                let dq = d[f + idx];
                *lv = wv / dq;
                dp -= (wv * lv.conj()).re;
            }
            if dp.abs() <= tol || !dp.is_finite() {
                return Err(SmallPivot { row: p, value: dp });
            }
            d[p] = dp;
        }
        Ok(EnvelopeLdl {
            order: self.order.clone(),
            first: self.first.clone(),
            row_start: self.row_start.clone(),
            l,
            d,
            shift,
        })
    }
}

/// `P (A - shift) P^T = L D L^H` with `L` unit lower triangular inside the envelope.
#[derive(Clone, Debug)]
pub struct EnvelopeLdl {
    order: Vec<usize>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    l: Vec<Complex64>,
    d: Vec<f64>,
    shift: f64,
}

impl EnvelopeLdl {
    /// Factors `A - shift` in the matrix's band ordering.
    pub fn factor(matrix: &FibreMatrix, shift: f64) -> std::result::Result<Self, SmallPivot> {
        Envelope::new(matrix.entries(), matrix.basis().band_ordering()).factor(shift)
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn inertia(&self) -> Inertia {
        let negative = self.d.iter().filter(|&&x| x < 0.0).count();
        let zero = self.d.iter().filter(|&&x| x == 0.0).count();
        Inertia {
            negative,
            zero,
            positive: self.d.len() - negative - zero,
        }
    }

    /// Number of stored off-diagonal factor entries.
    pub fn envelope_size(&self) -> usize {
        self.l.len()
    }

    /// Solves `(A - shift) x = b` in place.
    pub fn solve(&self, b: &mut [Complex64]) {
        let n = self.d.len();
        let mut y: Vec<Complex64> = self.order.iter().map(|&i| b[i]).collect();
        for p in 0..n {
            let f = self.first[p];
            let row = &self.l[self.row_start[p]..self.row_start[p + 1]];
            let mut s = Complex64::new(0.0, 0.0);
            for (lv, yv) in row.iter().zip(&y[f..p]) {
                s += lv * yv;
            }
            y[p] -= s;
        }
        for (yv, dv) in y.iter_mut().zip(&self.d) {
            *yv /= dv;
        }
        for p in (0..n).rev() {
            let f = self.first[p];
            let xp = y[p];
            let row = &self.l[self.row_start[p]..self.row_start[p + 1]];
            for (lv, yq) in row.iter().zip(&mut y[f..p]) {
                *yq -= lv.conj() * xp;
            }
        }
        for (p, &i) in self.order.iter().enumerate() {
            b[i] = y[p];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CountOutcome {
    pub count: usize,
    /// The shift actually factored (differs from the request after retries).
    pub shift: f64,
    pub retries: usize,
}

/// Reusable eigenvalue counter for one matrix.
#[derive(Clone, Debug)]
pub struct InertiaCounter {
    envelope: Envelope,
}

impl InertiaCounter {
    pub fn new(matrix: &FibreMatrix) -> Self {
        InertiaCounter {
            envelope: Envelope::new(matrix.entries(), matrix.basis().band_ordering()),
        }
    }

    /// Counts eigenvalues strictly below `lambda`. A vanishing pivot means
    /// `lambda` sits on an eigenvalue within tolerance; the shift is then
    /// moved up by `1e-9 (1 + |lambda|)` and the factorization retried.
    pub fn count(&self, lambda: f64) -> Result<CountOutcome> {
        let mut shift = lambda;
        for retries in 0..=MAX_RETRIES {
            match self.envelope.factor(shift) {
                Ok(f) => {
                    return Ok(CountOutcome {
                        count: f.inertia().negative,
                        shift,
                        retries,
                    })
                }
                Err(pivot) => {
                    log::debug!(
                        "small pivot {:.3e} at row {} for shift {shift}; perturbing",
                        pivot.value,
                        pivot.row
                    );
                    shift += RETRY_REL * (1.0 + lambda.abs()) * (retries + 1) as f64;
                }
            }
        }
        Err(Error::Solver(format!(
            "inertia count at {lambda} hit small pivots after {MAX_RETRIES} perturbations"
        )))
    }

    pub fn factor(&self, shift: f64) -> std::result::Result<EnvelopeLdl, SmallPivot> {
        self.envelope.factor(shift)
    }
}
