//! Periodic potentials given by finitely many Fourier coefficients.
//!
//! Coefficients follow the normalization
//! `V_n = |Omega|^{-1/2} * integral_Omega V(x) exp(-i <n, x>) dx`, so that
//! `V(x) = |Omega|^{-1/2} * sum_n V_n exp(i <n, x>)`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{dot, norm, DualLattice, Lattice};

/// Tolerance on `|V_{-n} - conj(V_n)|` relative to the largest coefficient.
const HERMITIAN_TOL: f64 = 1e-12;
const IMAG_RESIDUE_TOL: f64 = 1e-10;

/// One Fourier coefficient as it appears in configuration files: `n` holds
/// coordinates in the dual basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientRecord {
    pub n: Vec<i64>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SupNormBracket {
    /// Largest `|V|` seen on the evaluation grid.
    pub lower: f64,
    /// `|Omega|^{-1/2} * sum |V_n|`.
    pub upper: f64,
}

#[derive(Clone, Debug)]
pub struct Potential {
    dual: DualLattice,
    coeffs: BTreeMap<Vec<i64>, Complex64>,
}

impl Potential {
    /// The zero potential on `lattice`.
    pub fn zero(lattice: &Lattice) -> Self {
        let dual = lattice.dual();
        let mut coeffs = BTreeMap::new();
        coeffs.insert(vec![0; lattice.dim()], Complex64::new(0.0, 0.0));
        Potential { dual, coeffs }
    }

    /// Builds a potential on `lattice` from coefficients keyed by dual-basis
    /// coordinates. Both members of each `+-n` pair must be present and
    /// satisfy `V_{-n} = conj(V_n)`.
    pub fn new(lattice: &Lattice, coeffs: impl IntoIterator<Item = (Vec<i64>, Complex64)>) -> Result<Self> {
        let d = lattice.dim();
        let mut map: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
        for (n, v) in coeffs {
            if n.len() != d {
                return Err(Error::Potential(format!(
                    "coefficient index {n:?} has length {}, expected {d}",
                    n.len()
                )));
            }
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::Potential(format!("coefficient at {n:?} is not finite")));
            }
            if map.insert(n.clone(), v).is_some() {
                return Err(Error::Potential(format!("duplicate coefficient at {n:?}")));
            }
        }
        map.entry(vec![0; d]).or_insert(Complex64::new(0.0, 0.0));

        let scale = map.values().map(|v| v.norm()).fold(0.0, f64::max);
        let tol = HERMITIAN_TOL * scale.max(1.0);
        let mut canonical = BTreeMap::new();
        for (n, v) in &map {
            let neg: Vec<i64> = n.iter().map(|c| -c).collect();
            let partner = map.get(&neg).ok_or_else(|| {
                Error::Potential(format!(
                    "Hermitian symmetry violated: V at {n:?} has no partner at {neg:?}"
                ))
            })?;
            if (partner - v.conj()).norm() > tol {
                return Err(Error::Potential(format!(
                    "Hermitian symmetry violated: V{n:?} = {v}, V{neg:?} = {partner}"
                )));
            }
            // keep the lexicographically larger index as the source so the
            // pair is exactly conjugate
            let value = if *n >= neg { *v } else { partner.conj() };
            let value = if *n == neg { Complex64::new(value.re, 0.0) } else { value };
            canonical.insert(n.clone(), value);
        }
        Ok(Potential {
            dual: lattice.dual(),
            coeffs: canonical,
        })
    }

    pub fn from_records(lattice: &Lattice, records: &[CoefficientRecord]) -> Result<Self> {
        Self::new(
            lattice,
            records.iter().map(|r| (r.n.clone(), Complex64::new(r.re, r.im))),
        )
    }

    /// `amplitude * sum_i 2 cos(x_i)`-type potential for `(2 pi Z)^d`: each
    /// `axis` gets `amplitude * 2 cos(<e_axis^dagger, x>)`.
    pub fn cosine_sum(lattice: &Lattice, amplitude: f64, axes: &[usize]) -> Result<Self> {
        let d = lattice.dim();
        let coef = amplitude * lattice.cell_volume().sqrt();
        let mut coeffs = Vec::new();
        for &a in axes {
            if a >= d {
                return Err(Error::param(format!("axis {a} out of range for d = {d}")));
            }
            for s in [1, -1] {
                let mut n = vec![0; d];
                n[a] = s;
                coeffs.push((n, Complex64::new(coef, 0.0)));
            }
        }
        Self::new(lattice, coeffs)
    }

    pub fn dual(&self) -> &DualLattice {
        &self.dual
    }

    pub fn lattice(&self) -> &Lattice {
        self.dual.primal()
    }

    pub fn dim(&self) -> usize {
        self.dual.dim()
    }

    /// `|Omega|`, the volume of a period cell.
    pub fn cell_volume(&self) -> f64 {
        self.dual.primal().cell_volume()
    }

    /// Coefficients in dual-basis coordinates, including the constant mode.
    pub fn coefficients(&self) -> &BTreeMap<Vec<i64>, Complex64> {
        &self.coeffs
    }

    pub fn coefficient(&self, n: &[i64]) -> Complex64 {
        self.coeffs.get(n).copied().unwrap_or_default()
    }

    /// Nonzero coefficients away from the constant mode.
    pub fn nonconstant_support(&self) -> impl Iterator<Item = (&Vec<i64>, &Complex64)> {
        self.coeffs
            .iter()
            .filter(|(n, v)| n.iter().any(|&c| c != 0) && v.norm() > 0.0)
    }

    pub fn constant_mode(&self) -> Complex64 {
        self.coefficient(&vec![0; self.dim()])
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|v| v.norm() == 0.0)
    }

    /// A copy with the constant mode shifted so that `V` gains `+ c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        let zero = vec![0; self.dim()];
        let e = out.coeffs.entry(zero).or_default();
        *e += Complex64::new(c * self.cell_volume().sqrt(), 0.0);
        out
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut scale = 0.0;
        for (n, v) in &self.coeffs {
            let cart = self.dual.point(n);
            let phase = dot(&cart, x);
            acc += v * Complex64::from_polar(1.0, phase);
            scale += v.norm();
        }
        let acc = acc / self.cell_volume().sqrt();
        let scale = scale / self.cell_volume().sqrt();
        if acc.im.abs() > IMAG_RESIDUE_TOL * scale.max(1.0) {
            return Err(Error::Potential(format!(
                "evaluation has imaginary residue {}; coefficients are not Hermitian",
                acc.im
            )));
        }
        Ok(acc.re)
    }

    /// `lower` from a `grid_per_dim^d` grid over a period cell; `upper` from
    /// the coefficient sum.
    pub fn sup_norm(&self, grid_per_dim: usize) -> Result<SupNormBracket> {
        if grid_per_dim < 8 {
            return Err(Error::param(format!(
                "sup_norm grid must have at least 8 points per dimension, got {grid_per_dim}"
            )));
        }
        let upper = self.sup_norm_upper();
        let d = self.dim();
        let lattice = self.lattice();
        let mut lower: f64 = 0.0;
        let mut idx = vec![0usize; d];
        loop {
            let mut x = vec![0.0; d];
            for (i, &j) in idx.iter().enumerate() {
                let t = j as f64 / grid_per_dim as f64;
                for (xc, a) in x.iter_mut().zip(lattice.basis().row(i).iter()) {
                    *xc += t * a;
                }
            }
            lower = lower.max(self.evaluate(&x)?.abs());
            let mut i = d;
            loop {
                if i == 0 {
                    return Ok(SupNormBracket {
                        lower: lower.min(upper),
                        upper,
                    });
                }
                i -= 1;
                idx[i] += 1;
                if idx[i] < grid_per_dim {
                    break;
                }
                idx[i] = 0;
            }
        }
    }

    pub fn sup_norm_upper(&self) -> f64 {
        self.coeffs.values().map(|v| v.norm()).sum::<f64>() / self.cell_volume().sqrt()
    }

    /// `V^{(m)} = (sum_n |n|^{2m} |V_n|^2)^{1/2}`.
    pub fn sobolev_seminorm(&self, m: f64) -> Result<f64> {
        if !(m >= 0.0) {
            return Err(Error::param(format!("seminorm order must be >= 0, got {m}")));
        }
        let sum: f64 = self
            .coeffs
            .iter()
            .map(|(n, v)| norm(&self.dual.point(n)).powf(2.0 * m) * v.norm_sqr())
            .sum();
        Ok(sum.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn square() -> Lattice {
        Lattice::cubic(2, 2.0 * PI).unwrap()
    }

    fn cos_x1() -> Potential {
        Potential::new(
            &square(),
            [
                (vec![1, 0], Complex64::new(2.0 * PI, 0.0)),
                (vec![-1, 0], Complex64::new(2.0 * PI, 0.0)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_potential() {
        let v = Potential::zero(&square());
        assert_eq!(v.evaluate(&[0.3, -1.2]).unwrap(), 0.0);
        let b = v.sup_norm(8).unwrap();
        assert_eq!((b.lower, b.upper), (0.0, 0.0));
        assert_eq!(v.sobolev_seminorm(0.0).unwrap(), 0.0);
        assert_eq!(v.sobolev_seminorm(2.5).unwrap(), 0.0);
    }

    #[test]
    fn two_cos_x1() {
        let v = cos_x1();
        assert!((v.evaluate(&[0.0, 0.0]).unwrap() - 2.0).abs() < 1e-14);
        assert!((v.evaluate(&[PI, 0.0]).unwrap() + 2.0).abs() < 1e-14);
        assert!(v.evaluate(&[PI / 2.0, 7.0]).unwrap().abs() < 1e-14);
        // analytic Fourier integral: int_0^{2pi} 2cos(x) e^{-ix} dx = 2pi,
        // times 2pi from x_2, over |Omega|^{1/2} = 2pi
        let analytic = (2.0 * PI) * (2.0 * PI) / (2.0 * PI);
        assert!((v.coefficient(&[1, 0]).re - analytic).abs() < 1e-12);
        assert!((Potential::cosine_sum(&square(), 1.0, &[0]).unwrap().coefficient(&[1, 0]).re - analytic).abs() < 1e-12);
    }

    #[test]
    fn sup_norm_brackets() {
        let v = cos_x1();
        let b = v.sup_norm(16).unwrap();
        assert!((b.upper - 2.0).abs() < 1e-14);
        assert!((b.lower - 2.0).abs() < 1e-12);
        let v2 = Potential::cosine_sum(&square(), 1.0, &[0, 1]).unwrap();
        assert!((v2.sup_norm_upper() - 4.0).abs() < 1e-14);
        assert!(v.sup_norm(4).is_err());
    }

    #[test]
    fn seminorms() {
        let v = cos_x1();
        let s0 = v.sobolev_seminorm(0.0).unwrap();
        assert!((s0 - 2.0 * PI * 2f64.sqrt()).abs() < 1e-12);
        assert!((v.sobolev_seminorm(3.0).unwrap() - s0).abs() < 1e-12);
        assert!(v.sobolev_seminorm(-1.0).is_err());
    }

    #[test]
    fn hermitian_symmetry_enforced() {
        let lat = square();
        let missing = Potential::new(&lat, [(vec![1, 0], Complex64::new(1.0, 0.0))]);
        assert!(matches!(missing, Err(Error::Potential(_))));
        let wrong = Potential::new(
            &lat,
            [
                (vec![1, 0], Complex64::new(1.0, 1.0)),
                (vec![-1, 0], Complex64::new(1.0, 1.0)),
            ],
        );
        assert!(wrong.is_err());
        let ok = Potential::new(
            &lat,
            [
                (vec![1, 0], Complex64::new(1.0, 1.0)),
                (vec![-1, 0], Complex64::new(1.0, -1.0)),
                (vec![0, 0], Complex64::new(0.5, 0.0)),
            ],
        )
        .unwrap();
        // V = (1/2pi)(0.5 + 2 cos x - 2 sin x)
        let x: f64 = 0.4;
        let expect = (0.5 + 2.0 * x.cos() - 2.0 * x.sin()) / (2.0 * PI);
        assert!((ok.evaluate(&[x, 1.0]).unwrap() - expect).abs() < 1e-14);
        let complex_const = Potential::new(&lat, [(vec![0, 0], Complex64::new(1.0, 0.5))]);
        assert!(complex_const.is_err());
    }

    #[test]
    fn shifted_adds_constant() {
        let v = cos_x1().shifted(1.5);
        assert!((v.evaluate(&[0.0, 0.0]).unwrap() - 3.5).abs() < 1e-13);
    }
}
