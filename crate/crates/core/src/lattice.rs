//! Period lattices, their duals, and the geometry of the first Brillouin zone.
//!
//! A lattice is stored by a `d x d` basis whose rows are the generators.
//! Points are addressed by integer coordinates in that basis; Cartesian
//! positions are `coords * basis`.
//!
//! The first Brillouin zone is the Voronoi cell of the dual lattice about the
//! origin. Its facets come from the Voronoi-relevant vectors, which are the
//! unique (up to sign) shortest members of the nonzero cosets of `2L`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ids::sphere_area;

/// Relative slack used when comparing lengths that coincide in exact arithmetic.
const LENGTH_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticePoint {
    pub coords: Vec<i64>,
    pub cart: Vec<f64>,
}

impl LatticePoint {
    pub fn norm(&self) -> f64 {
        norm(&self.cart)
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug)]
pub struct Lattice {
    basis: DMatrix<f64>,
    inverse: DMatrix<f64>,
    cell_volume: f64,
}

impl Lattice {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let d = basis.nrows();
        if d != basis.ncols() {
            return Err(Error::Lattice(format!(
                "basis must be square, got {}x{}",
                d,
                basis.ncols()
            )));
        }
        if d < 2 {
            return Err(Error::Lattice(format!("dimension must be at least 2, got {d}")));
        }
        if basis.iter().any(|x| !x.is_finite()) {
            return Err(Error::Lattice("basis has non-finite entries".into()));
        }
        let det = basis.determinant();
        let scale: f64 = basis.row_iter().map(|r| r.norm()).product();
        if det.abs() <= 1e-12 * scale || scale == 0.0 {
            return Err(Error::Lattice("basis is singular".into()));
        }
        let inverse = basis
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Lattice("basis is singular".into()))?;
        Ok(Lattice {
            basis,
            inverse,
            cell_volume: det.abs(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Lattice("basis rows must all have length d".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    /// Builds a lattice from a row-major flattened `d x d` basis.
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        let d = (values.len() as f64).sqrt().round() as usize;
        if d * d != values.len() {
            return Err(Error::Lattice(format!(
                "row-major basis must have d*d entries, got {}",
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(d, d, values))
    }

    /// `scale * Z^d`.
    pub fn cubic(dim: usize, scale: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * scale)
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn generator(&self, i: usize) -> Vec<f64> {
        self.basis.row(i).iter().copied().collect()
    }

    pub fn point(&self, coords: &[i64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (i, &c) in coords.iter().enumerate() {
            if c != 0 {
                let c = c as f64;
                for (j, o) in out.iter_mut().enumerate() {
                    *o += c * self.basis[(i, j)];
                }
            }
        }
        out
    }

    pub fn lattice_point(&self, coords: Vec<i64>) -> LatticePoint {
        let cart = self.point(&coords);
        LatticePoint { coords, cart }
    }

    /// Real coordinates of `x` in the basis, `x = c * basis`.
    pub fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|j| (0..d).map(|i| x[i] * self.inverse[(i, j)]).sum())
            .collect()
    }

    /// Lattice points `p` with `|p - center| <= r`, ordered by distance to
    /// `center`, then lexicographically by coordinates.
    pub fn points_near(&self, center: &[f64], r: f64) -> Vec<LatticePoint> {
        let d = self.dim();
        if r < 0.0 {
            return Vec::new();
        }
        let c0 = self.coordinates(center);
        let slack = LENGTH_TOL * (1.0 + r);
        let r2 = (r + slack) * (r + slack);
        let lo: Vec<i64> = (0..d)
            .map(|i| {
                let w = r * self.inverse.column(i).norm();
                (c0[i] - w).floor() as i64 - 1
            })
            .collect();
        let hi: Vec<i64> = (0..d)
            .map(|i| {
                let w = r * self.inverse.column(i).norm();
                (c0[i] + w).ceil() as i64 + 1
            })
            .collect();

        let mut found: Vec<(f64, LatticePoint)> = Vec::new();
        let mut cur = lo.clone();
        loop {
            let cart = self.point(&cur);
            let dist2: f64 = cart.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist2 <= r2 {
                found.push((
                    dist2,
                    LatticePoint {
                        coords: cur.clone(),
                        cart,
                    },
                ));
            }
            // odometer increment, last coordinate fastest
            let mut i = d;
            loop {
                if i == 0 {
                    found.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.coords.cmp(&b.1.coords)));
                    return found.into_iter().map(|(_, p)| p).collect();
                }
                i -= 1;
                if cur[i] < hi[i] {
                    cur[i] += 1;
                    break;
                }
                cur[i] = lo[i];
            }
        }
    }

    /// Lattice points with `|p| <= r`, ordered by length then coordinates.
    pub fn points_in_ball(&self, r: f64, exclude_origin: bool) -> Vec<LatticePoint> {
        let origin = vec![0.0; self.dim()];
        let mut pts = self.points_near(&origin, r);
        if exclude_origin {
            pts.retain(|p| !p.is_origin());
        }
        pts
    }

    /// Dual lattice with generators `m_i` satisfying `<m_i, a_j> = 2 pi delta_ij`.
    pub fn dual(&self) -> DualLattice {
        let dual_basis = self.inverse.transpose() * (2.0 * PI);
        let lattice = Lattice::new(dual_basis).expect("dual of a nonsingular basis is nonsingular");
        DualLattice::from_parts(lattice, self.clone())
    }

    /// Bound on `|x - round(x)|` when rounding real coordinates: half the
    /// sum of generator lengths.
    fn rounding_radius(&self) -> f64 {
        0.5 * self.basis.row_iter().map(|r| r.norm()).sum::<f64>()
    }

    /// Covering-radius upper bound from Babai's nearest-plane argument,
    /// `0.5 * sqrt(sum |b*_i|^2)` over the Gram-Schmidt vectors.
    pub fn covering_radius_bound(&self) -> f64 {
        let d = self.dim();
        let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(d);
        for i in 0..d {
            let mut v = self.generator(i);
            for u in &ortho {
                let coef = dot(&v, u) / dot(u, u);
                for (a, b) in v.iter_mut().zip(u) {
                    *a -= coef * b;
                }
            }
            ortho.push(v);
        }
        0.5 * ortho.iter().map(|v| dot(v, v)).sum::<f64>().sqrt()
    }
}

/// Circumradius of the first Brillouin zone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BrillouinRadius {
    pub value: f64,
    /// `false` when `value` is only a certified upper bound.
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decomposition {
    pub integer_part: LatticePoint,
    pub fractional_part: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DualLattice {
    lattice: Lattice,
    primal: Lattice,
    relevant: Vec<LatticePoint>,
    shell: Vec<LatticePoint>,
    brillouin: BrillouinRadius,
    packing: OnceLock<f64>,
}

impl DualLattice {
    fn from_parts(lattice: Lattice, primal: Lattice) -> Self {
        let relevant = voronoi_relevant(&lattice);
        let shell = lattice.points_in_ball(2.0 * lattice.rounding_radius(), false);
        let brillouin = if lattice.dim() <= 3 {
            BrillouinRadius {
                value: voronoi_circumradius(&lattice, &relevant),
                exact: true,
            }
        } else {
            BrillouinRadius {
                value: lattice.covering_radius_bound(),
                exact: false,
            }
        };
        DualLattice {
            lattice,
            primal,
            relevant,
            shell,
            brillouin,
            packing: OnceLock::new(),
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn primal(&self) -> &Lattice {
        &self.primal
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        self.lattice.basis()
    }

    /// Volume of a dual cell, `(2 pi)^d / vol(primal cell)`.
    pub fn cell_volume(&self) -> f64 {
        self.lattice.cell_volume()
    }

    pub fn point(&self, coords: &[i64]) -> Vec<f64> {
        self.lattice.point(coords)
    }

    pub fn points_in_ball(&self, r: f64, exclude_origin: bool) -> Vec<LatticePoint> {
        self.lattice.points_in_ball(r, exclude_origin)
    }

    pub fn points_near(&self, center: &[f64], r: f64) -> Vec<LatticePoint> {
        self.lattice.points_near(center, r)
    }

    /// Facet normals of the Brillouin zone (both signs).
    pub fn voronoi_relevant(&self) -> &[LatticePoint] {
        &self.relevant
    }

    /// Splits `xi = n + k` with `n` a nearest dual point and `k` in the
    /// Brillouin zone. Ties go to the lexicographically smallest `n`.
    pub fn decompose(&self, xi: &[f64]) -> Decomposition {
        let c = self.lattice.coordinates(xi);
        let base: Vec<i64> = c.iter().map(|x| x.round() as i64).collect();
        let mut best: Option<(f64, Vec<i64>)> = None;
        for m in &self.shell {
            let coords: Vec<i64> = base.iter().zip(&m.coords).map(|(a, b)| a + b).collect();
            let p = self.lattice.point(&coords);
            let dist2: f64 = p.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum();
            best = match best {
                None => Some((dist2, coords)),
                Some((bd, bc)) => {
                    let tol = LENGTH_TOL * (1.0 + bd);
                    if dist2 < bd - tol || ((dist2 - bd).abs() <= tol && coords < bc) {
                        Some((dist2.min(bd), coords))
                    } else {
                        Some((bd, bc))
                    }
                }
            };
        }
        let (_, coords) = best.expect("shell always contains the origin");
        let integer_part = self.lattice.lattice_point(coords);
        let fractional_part = xi.iter().zip(&integer_part.cart).map(|(x, n)| x - n).collect();
        Decomposition {
            integer_part,
            fractional_part,
        }
    }

    /// Whether `k` lies in the closed Brillouin zone (within `tol`).
    pub fn in_brillouin_zone(&self, k: &[f64], tol: f64) -> bool {
        self.relevant
            .iter()
            .all(|m| dot(k, &m.cart) <= 0.5 * dot(&m.cart, &m.cart) + tol)
    }

    pub fn brillouin_radius(&self) -> BrillouinRadius {
        self.brillouin
    }

    /// `W = sup_{r > 1} r^{-d} #{l : |l| <= r}`.
    pub fn packing_constant(&self) -> f64 {
        *self.packing.get_or_init(|| packing_constant(&self.lattice, self.brillouin.value))
    }
}

fn voronoi_relevant(lattice: &Lattice) -> Vec<LatticePoint> {
    let d = lattice.dim();
    // Every coset of 2L contains a point with 0/1 coordinates, so its
    // shortest members lie within twice the rounding radius.
    let candidates = lattice.points_in_ball(2.0 * lattice.rounding_radius(), true);
    let mut groups: std::collections::BTreeMap<Vec<i64>, Vec<&LatticePoint>> = Default::default();
    for p in &candidates {
        let class: Vec<i64> = p.coords.iter().map(|c| c.rem_euclid(2)).collect();
        groups.entry(class).or_default().push(p);
    }
    let mut relevant = Vec::new();
    for (class, members) in groups {
        if class.iter().all(|&c| c == 0) {
            continue;
        }
        let min = members.iter().map(|p| p.norm()).fold(f64::INFINITY, f64::min);
        let shortest: Vec<&&LatticePoint> = members
            .iter()
            .filter(|p| p.norm() <= min * (1.0 + 1e-10))
            .collect();
        if shortest.len() == 2 {
            relevant.extend(shortest.into_iter().map(|p| (*p).clone()));
        }
    }
    debug_assert!(relevant.len() >= 2 * d);
    relevant.sort_by(|a, b| a.coords.cmp(&b.coords));
    relevant
}

/// Largest distance from the origin to a vertex of the Voronoi cell,
/// by intersecting every `d`-subset of facet hyperplanes.
fn voronoi_circumradius(lattice: &Lattice, relevant: &[LatticePoint]) -> f64 {
    let d = lattice.dim();
    let scale = lattice.rounding_radius();
    let feasible = |x: &[f64]| {
        relevant
            .iter()
            .all(|m| dot(x, &m.cart) <= 0.5 * dot(&m.cart, &m.cart) + 1e-9 * scale * scale)
    };
    let mut best: f64 = 0.0;
    let mut idx: Vec<usize> = (0..d).collect();
    let n = relevant.len();
    loop {
        let a = DMatrix::from_fn(d, d, |i, j| relevant[idx[i]].cart[j]);
        let b = nalgebra::DVector::from_fn(d, |i, _| 0.5 * dot(&relevant[idx[i]].cart, &relevant[idx[i]].cart));
        if let Some(x) = a.lu().solve(&b) {
            let x: Vec<f64> = x.iter().copied().collect();
            if x.iter().all(|v| v.is_finite()) && feasible(&x) {
                best = best.max(norm(&x));
            }
        }
        // next combination
        let mut i = d;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < n - d + i {
                idx[i] += 1;
                for j in i + 1..d {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn packing_constant(lattice: &Lattice, covering: f64) -> f64 {
    let d = lattice.dim() as i32;
    let density = sphere_area(lattice.dim()) / f64::from(d) / lattice.cell_volume();
    let tail = |r: f64| density * ((r + covering) / r).powi(d);
    let mut radius = 4.0_f64.max(4.0 * covering);
    let mut scanned = 0.0;
    for _ in 0..12 {
        let pts = lattice.points_in_ball(radius, false);
        let norms: Vec<f64> = pts.iter().map(|p| p.norm()).collect();
        let one = 1.0 + LENGTH_TOL;
        // right limit at r = 1
        let at_one = norms.iter().filter(|&&r| r <= one).count();
        scanned = at_one as f64;
        let mut i = 0;
        while i < norms.len() {
            let r = norms[i];
            let mut j = i;
            while j < norms.len() && norms[j] <= r * (1.0 + LENGTH_TOL) {
                j += 1;
            }
            if r > one {
                scanned = f64::max(scanned, j as f64 / r.powi(d));
            }
            i = j;
        }
        if tail(radius) <= scanned {
            return scanned;
        }
        radius *= 2.0;
    }
    log::warn!("packing constant scan did not certify; returning tail bound");
    scanned.max(tail(radius))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(scale: f64) -> Lattice {
        Lattice::cubic(2, scale).unwrap()
    }

    fn hexagonal() -> Lattice {
        Lattice::from_rows(&[vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]]).unwrap()
    }

    #[test]
    fn dual_of_two_pi_square_is_unit_square() {
        let dual = square(2.0 * PI).dual();
        let b = dual.basis();
        assert!((b[(0, 0)] - 1.0).abs() < 1e-15 && b[(0, 1)].abs() < 1e-15);
        assert!((b[(1, 1)] - 1.0).abs() < 1e-15 && b[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn dual_of_unit_square() {
        let dual = square(1.0).dual();
        assert!((dual.basis()[(0, 0)] - 2.0 * PI).abs() < 1e-14);
        assert!((dual.basis()[(1, 1)] - 2.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn hexagonal_dual_pairing() {
        let lat = hexagonal();
        let dual = lat.dual();
        for i in 0..2 {
            for j in 0..2 {
                let p = dot(&dual.lattice().generator(i), &lat.generator(j));
                let want = if i == j { 2.0 * PI } else { 0.0 };
                assert!((p - want).abs() < 1e-13, "{i}{j}: {p}");
            }
        }
        let expect = (2.0 * PI).powi(2) / lat.cell_volume();
        assert!((dual.cell_volume() - expect).abs() < 1e-12);
    }

    #[test]
    fn singular_basis_rejected() {
        assert!(Lattice::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).is_err());
        assert!(Lattice::from_rows(&[vec![1.0]]).is_err());
        assert!(Lattice::from_row_major(&[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn decompose_examples() {
        let dual = square(2.0 * PI).dual();
        let d = dual.decompose(&[0.6, 0.0]);
        assert_eq!(d.integer_part.coords, vec![1, 0]);
        assert!((d.fractional_part[0] + 0.4).abs() < 1e-15);

        let d = dual.decompose(&[3.0, -2.0]);
        assert_eq!(d.integer_part.coords, vec![3, -2]);
        assert_eq!(d.fractional_part, vec![0.0, 0.0]);

        let d = dual.decompose(&[0.5, 0.0]);
        assert_eq!(d.integer_part.coords, vec![0, 0]);
        assert_eq!(d.fractional_part, vec![0.5, 0.0]);
    }

    #[test]
    fn brillouin_radius_cubic() {
        let q = square(2.0 * PI).dual().brillouin_radius();
        assert!(q.exact);
        assert!((q.value - 0.5f64.sqrt()).abs() < 1e-12);
        let q3 = Lattice::cubic(3, 2.0 * PI).unwrap().dual().brillouin_radius();
        assert!((q3.value - 3f64.sqrt() / 2.0).abs() < 1e-12);
        let q4 = Lattice::cubic(4, 2.0 * PI).unwrap().dual().brillouin_radius();
        assert!(!q4.exact);
        assert!(q4.value >= 1.0 - 1e-12);
    }

    #[test]
    fn brillouin_radius_hexagonal_matches_sampling() {
        let dual = hexagonal().dual();
        let q = dual.brillouin_radius().value;
        // dense sample of the cell: maximize |k| over decomposed points
        let mut best: f64 = 0.0;
        let bound = 2.0 * q;
        let steps = 801;
        for i in 0..steps {
            for j in 0..steps {
                let x = -bound + 2.0 * bound * i as f64 / (steps - 1) as f64;
                let y = -bound + 2.0 * bound * j as f64 / (steps - 1) as f64;
                if dual.in_brillouin_zone(&[x, y], 0.0) {
                    best = best.max((x * x + y * y).sqrt());
                }
            }
        }
        // the hexagon has side length = circumradius; refine around the best vertex direction
        let vertices = dual
            .voronoi_relevant()
            .len();
        assert_eq!(vertices, 6);
        assert!(q >= best - 1e-12);
        assert!(q - best < 2.0 * bound / (steps - 1) as f64 * 2.0);
        // analytic circumradius of a regular hexagon with inradius |m|/2
        let inradius = 0.5 * dual.voronoi_relevant()[0].norm();
        assert!((q - inradius * 2.0 / 3f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn points_in_ball_counts() {
        let dual = square(2.0 * PI).dual();
        let p = dual.points_in_ball(1.0, true);
        assert_eq!(p.len(), 4);
        assert_eq!(dual.points_in_ball(1.5, false).len(), 9);
        // brute force over [-2, 2]^2
        let mut brute = 0;
        for a in -2i64..=2 {
            for b in -2i64..=2 {
                if a * a + b * b <= 4 {
                    brute += 1;
                }
            }
        }
        assert_eq!(brute, 13);
        assert_eq!(dual.points_in_ball(2.0, false).len(), brute);
        let first = &dual.points_in_ball(2.0, false)[0];
        assert!(first.is_origin());
    }

    /// Exhaustive scan of r^{-d} N(r) at jump radii up to `r_max`.
    fn packing_oracle(lat: &Lattice, r_max: f64) -> f64 {
        let d = lat.dim() as i32;
        let c = (r_max / lat.basis().row(0).norm()).ceil() as i64 + 1;
        let mut norms = Vec::new();
        let mut stack = vec![vec![]];
        while let Some(p) = stack.pop() {
            if p.len() == lat.dim() {
                let x = lat.point(&p);
                let r = norm(&x);
                if r <= r_max {
                    norms.push(r);
                }
                continue;
            }
            for v in -c..=c {
                let mut q = p.clone();
                q.push(v);
                stack.push(q);
            }
        }
        norms.sort_by(f64::total_cmp);
        let mut best = norms.iter().filter(|&&r| r <= 1.0 + 1e-12).count() as f64;
        for &r in &norms {
            if r > 1.0 + 1e-12 {
                let count = norms.iter().filter(|&&s| s <= r * (1.0 + 1e-12)).count();
                best = best.max(count as f64 / r.powi(d));
            }
        }
        best
    }

    #[test]
    fn packing_constant_matches_oracle() {
        let z2 = square(2.0 * PI).dual();
        assert_eq!(packing_oracle(z2.lattice(), 12.0), 5.0);
        assert_eq!(z2.packing_constant(), 5.0);

        let z3 = Lattice::cubic(3, 2.0 * PI).unwrap().dual();
        assert_eq!(packing_oracle(z3.lattice(), 6.0), 7.0);
        assert_eq!(z3.packing_constant(), 7.0);

        // 2Z^2: five points at r = 2 give 5/4
        let two_z2 = square(PI).dual();
        let oracle = packing_oracle(two_z2.lattice(), 20.0);
        assert_eq!(oracle, 1.25);
        assert_eq!(two_z2.packing_constant(), oracle);
    }

    #[test]
    fn packing_constant_exceeds_asymptotic_density() {
        for lat in [square(2.0 * PI), hexagonal(), square(0.7)] {
            let dual = lat.dual();
            let density = sphere_area(2) / 2.0 / dual.cell_volume();
            assert!(dual.packing_constant() >= density);
        }
    }

    #[test]
    fn double_dual_is_identity() {
        let lat = hexagonal();
        let back = lat.dual().lattice().dual();
        let diff = (back.lattice().basis() - lat.basis()).abs().max();
        assert!(diff < 1e-12);
    }
}
