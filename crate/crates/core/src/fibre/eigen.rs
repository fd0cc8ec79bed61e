//! Eigenpairs of fibre matrices: full dense decomposition for small bases and
//! block shift-invert subspace iteration for single pairs in large ones.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ldl::InertiaCounter;
use super::{FibreMatrix, DEGENERACY_REL};
use crate::error::{Error, Result};

/// Residual accepted from the dense path before declaring failure.
const DENSE_FAILURE_REL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct BandSolution {
    pub zeta: f64,
    /// Unit-norm eigenvector, aligned with the basis indices.
    pub coeffs: Vec<Complex64>,
    /// Distance to the nearest other computed eigenvalue.
    pub gap: f64,
    /// `||(A - zeta) psi||`.
    pub residual: f64,
    /// Gap below `1e-6 (1 + |zeta|)`.
    pub degenerate: bool,
}

fn is_degenerate(zeta: f64, gap: f64) -> bool {
    gap < DEGENERACY_REL * (1.0 + zeta.abs())
}

fn residual(matrix: &FibreMatrix, x: &[Complex64], zeta: f64) -> f64 {
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    matrix.matvec(x, &mut y);
    y.iter()
        .zip(x)
        .map(|(a, b)| (a - b * zeta).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Ascending eigenvalues only.
pub fn spectrum(matrix: &FibreMatrix) -> Result<Vec<f64>> {
    let mut values: Vec<f64> = if matrix.entries().is_real() {
        let m = matrix.to_dense().map(|z| z.re);
        m.symmetric_eigenvalues().iter().copied().collect()
    } else {
        matrix.to_dense().symmetric_eigenvalues().iter().copied().collect()
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("dense eigensolver produced non-finite eigenvalues".into()));
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// All eigenpairs, ascending.
pub fn solve_dense(matrix: &FibreMatrix) -> Result<Vec<BandSolution>> {
    let n = matrix.size();
    let (values, vectors): (Vec<f64>, DMatrix<Complex64>) = if matrix.entries().is_real() {
        let eig = SymmetricEigen::new(matrix.to_dense().map(|z| z.re));
        (
            eig.eigenvalues.iter().copied().collect(),
            eig.eigenvectors.map(|x| Complex64::new(x, 0.0)),
        )
    } else {
        let eig = SymmetricEigen::new(matrix.to_dense());
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let scale = matrix.entries().norm_bound();

    let mut out = Vec::with_capacity(n);
    for (pos, &i) in order.iter().enumerate() {
        let zeta = values[i];
        let mut coeffs: Vec<Complex64> = vectors.column(i).iter().copied().collect();
        let nrm = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        coeffs.iter_mut().for_each(|c| *c /= nrm);
        let res = residual(matrix, &coeffs, zeta);
        if !res.is_finite() || res > DENSE_FAILURE_REL * (1.0 + scale) {
            return Err(Error::Solver(format!(
                "dense eigenpair {pos} has residual {res:.3e} (zeta = {zeta})"
            )));
        }
        let below = pos.checked_sub(1).map(|p| zeta - sorted[p]);
        let above = sorted.get(pos + 1).map(|z| z - zeta);
        let gap = match (below, above) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => f64::INFINITY,
        };
        out.push(BandSolution {
            zeta,
            coeffs,
            gap,
            residual: res,
            degenerate: is_degenerate(zeta, gap),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShiftInvertOptions {
    /// Subspace dimension; also the largest multiplicity that is resolved.
    pub block: usize,
    pub max_iterations: usize,
    /// Target residual relative to `1 + |zeta|`.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ShiftInvertOptions {
    fn default() -> Self {
        ShiftInvertOptions {
            block: 8,
            max_iterations: 400,
            tolerance: 1e-10,
            seed: 0x5eed,
        }
    }
}

/// Eigenpair whose eigenvalue is nearest `target`.
pub fn eigenpair_near(matrix: &FibreMatrix, target: f64) -> Result<BandSolution> {
    eigenpair_near_with(matrix, target, &ShiftInvertOptions::default())
}

pub fn eigenpair_near_with(matrix: &FibreMatrix, target: f64, opts: &ShiftInvertOptions) -> Result<BandSolution> {
    let n = matrix.size();
    if n <= 2 * opts.block {
        return nearest_dense(matrix, target);
    }
    let counter = InertiaCounter::new(matrix);
    let mut shift = target;
    let factor = loop {
        match counter.factor(shift) {
            Ok(f) => break f,
            Err(_) if (shift - target).abs() < 1e-6 * (1.0 + target.abs()) => {
                shift += 1e-9 * (1.0 + target.abs());
            }
            Err(p) => {
                return Err(Error::Solver(format!(
                    "cannot factor A - {target}: pivot {:.3e} at row {}",
                    p.value, p.row
                )))
            }
        }
    };

    let p = opts.block;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut block: Vec<Vec<Complex64>> = (0..p)
        .map(|_| (0..n).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect())
        .collect();
    orthonormalize(&mut block, &mut rng);

    let mut image = vec![vec![Complex64::new(0.0, 0.0); n]; p];
    let mut last = None;
    for _ in 0..opts.max_iterations {
        for col in block.iter_mut() {
            factor.solve(col);
        }
        orthonormalize(&mut block, &mut rng);
        for (x, y) in block.iter().zip(image.iter_mut()) {
            matrix.matvec(x, y);
        }
        // Rayleigh-Ritz on span(block)
        let g = DMatrix::from_fn(p, p, |i, j| {
            block[i].iter().zip(&image[j]).map(|(a, b)| a.conj() * b).sum::<Complex64>()
        });
        let g = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(g);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| {
            (eig.eigenvalues[a] - target)
                .abs()
                .total_cmp(&(eig.eigenvalues[b] - target).abs())
                .then(eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        });
        let rotate = |vecs: &[Vec<Complex64>], col: usize| -> Vec<Complex64> {
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            for (v, u) in vecs.iter().zip(eig.eigenvectors.column(col).iter()) {
                for (o, x) in out.iter_mut().zip(v) {
                    *o += x * u;
                }
            }
            out
        };
        let new_block: Vec<Vec<Complex64>> = order.iter().map(|&c| rotate(&block, c)).collect();
        let new_image: Vec<Vec<Complex64>> = order.iter().map(|&c| rotate(&image, c)).collect();
        block = new_block;
        image = new_image;
        let thetas: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c]).collect();
        let res: Vec<f64> = (0..2)
            .map(|j| {
                block[j]
                    .iter()
                    .zip(&image[j])
                    .map(|(x, y)| (y - x * thetas[j]).norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let done = (0..2).all(|j| res[j] <= opts.tolerance * (1.0 + thetas[j].abs()));
        last = Some((thetas, res));
        if done {
            break;
        }
    }
    let (thetas, res) = last.expect("at least one iteration");
    if res[0] > 10.0 * opts.tolerance * (1.0 + thetas[0].abs()) {
        return Err(Error::Solver(format!(
            "shift-invert iteration did not converge near {target}: residual {:.3e} after {} iterations",
            res[0], opts.max_iterations
        )));
    }
    let zeta = thetas[0];
    // the second pair's residual bounds the error of the gap
    let gap = (thetas[1] - zeta).abs();
    let coeffs = block.swap_remove(0);
    let residual = residual(matrix, &coeffs, zeta);
    Ok(BandSolution {
        zeta,
        coeffs,
        gap,
        residual,
        degenerate: is_degenerate(zeta, gap),
    })
}

fn nearest_dense(matrix: &FibreMatrix, target: f64) -> Result<BandSolution> {
    let all = solve_dense(matrix)?;
    let best = all
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.zeta - target).abs().total_cmp(&(b.1.zeta - target).abs()))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Solver("empty matrix".into()))?;
    Ok(all.into_iter().nth(best).expect("index in range"))
}

/// Modified Gram-Schmidt, applied twice; collapsed columns are redrawn.
fn orthonormalize(block: &mut [Vec<Complex64>], rng: &mut ChaCha8Rng) {
    for j in 0..block.len() {
        for _attempt in 0..3 {
            let before = block[j].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for _ in 0..2 {
                for i in 0..j {
                    let (head, tail) = block.split_at_mut(j);
                    let proj: Complex64 = head[i].iter().zip(&tail[0]).map(|(a, b)| a.conj() * b).sum();
                    for (x, q) in tail[0].iter_mut().zip(&head[i]) {
                        *x -= q * proj;
                    }
                }
            }
            let nrm = block[j].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if nrm > 1e-10 * before && nrm > 0.0 {
                block[j].iter_mut().for_each(|c| *c /= nrm);
                break;
            }
            for c in block[j].iter_mut() {
                *c = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
        }
    }
}
