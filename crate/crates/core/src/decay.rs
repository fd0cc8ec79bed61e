//! High-energy eigenfunction checks: Fourier-coefficient decay beyond the
//! energy sphere and the bound `|grad_k zeta| <= 2 (1 + eta) sqrt(zeta)` on
//! band velocities.
//!
//! For `eta` in `(0, 1)` the constants are
//! `m = floor((d + 1) / 3) + 1`, `kappa = eta / (2m + 1)`,
//! `zeta_0 = max(36 Q^2 / kappa^2, (1 + m kappa)^{2/(d-1)} kappa^{-2d/(d-1)})`,
//! and `M_1 = 6 V^(0)`,
//! `M_j = 6 (2^{3j/2 - 1} W^{1/2} V^(0) M_{j-1} + V^(3(j-1)d/2))`.
//! For `zeta >= zeta_0` every normalized eigenvector is expected to satisfy
//! `|psi_n| < M_m kappa^{-m} |n|^{-(3m+1)/2}` once `|n| >= (1 + m kappa) sqrt(zeta)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fibre::{assemble_on, eigenpair_near, group_velocity, AssemblyOptions, PlaneWaveBasis};
use crate::lattice::norm;
use crate::potential::Potential;

/// Fraction of the cutoff radius kept for the decay test; the outer shell is
/// distorted by truncation.
pub const TESTED_FRACTION: f64 = 0.9;
/// Minimum `cutoff / threshold_radius`.
pub const CUTOFF_MARGIN: f64 = 1.15;
/// Normalized coefficients below this are eigensolver noise and never
/// count as violations.
pub const NOISE_FLOOR: f64 = 1e-12;
pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayConstants {
    pub d: usize,
    pub eta: f64,
    pub m: usize,
    pub kappa: f64,
    pub zeta0: f64,
    /// `M_1, ..., M_m`.
    pub mm_chain: Vec<f64>,
    pub w: f64,
    pub q: f64,
}

impl DecayConstants {
    pub fn new(potential: &Potential, d: usize, eta: f64, q: f64, w: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::param(format!("eta must lie in (0, 1), got {eta}")));
        }
        if d < 2 {
            return Err(Error::param(format!("dimension must be at least 2, got {d}")));
        }
        let m = (d + 1) / 3 + 1;
        let kappa = eta / (2 * m + 1) as f64;
        let df = d as f64;
        let zeta0 = f64::max(
            36.0 * q * q / (kappa * kappa),
            (1.0 + m as f64 * kappa).powf(2.0 / (df - 1.0)) * kappa.powf(-2.0 * df / (df - 1.0)),
        );
        let v0 = potential.sobolev_seminorm(0.0)?;
        let mut mm_chain = vec![6.0 * v0];
        for j in 2..=m {
            let jf = j as f64;
            let prev = mm_chain[j - 2];
            let tail = potential.sobolev_seminorm(3.0 * (jf - 1.0) * df / 2.0)?;
            mm_chain.push(6.0 * (2f64.powf(1.5 * jf - 1.0) * w.sqrt() * v0 * prev + tail));
        }
        Ok(DecayConstants {
            d,
            eta,
            m,
            kappa,
            zeta0,
            mm_chain,
            w,
            q,
        })
    }

    /// Constants with `Q` and `W` taken from the potential's dual lattice.
    pub fn for_potential(potential: &Potential, eta: f64) -> Result<Self> {
        let dual = potential.dual();
        Self::new(
            potential,
            potential.dim(),
            eta,
            dual.brillouin_radius().value,
            dual.packing_constant(),
        )
    }

    pub fn mm(&self) -> f64 {
        *self.mm_chain.last().expect("chain has m >= 1 entries")
    }

    /// `(1 + m kappa) sqrt(zeta)`.
    pub fn threshold_radius(&self, zeta: f64) -> f64 {
        (1.0 + self.m as f64 * self.kappa) * zeta.sqrt()
    }

    /// `M_m kappa^{-m} |n|^{-(3m+1)/2}`.
    pub fn coefficient_bound(&self, n_norm: f64) -> f64 {
        let m = self.m as f64;
        self.mm() * self.kappa.powf(-m) * n_norm.powf(-(3.0 * m + 1.0) / 2.0)
    }

    /// `2 (1 + eta) sqrt(zeta)`.
    pub fn velocity_bound(&self, zeta: f64) -> f64 {
        2.0 * (1.0 + self.eta) * zeta.sqrt()
    }

    fn require_energy(&self, zeta: f64) -> Result<()> {
        if zeta < self.zeta0 {
            return Err(Error::Precondition(format!(
                "eigenvalue {zeta:.6} is below zeta_0 = {:.6} (short by {:.6}); the decay and \
                 velocity bounds are only claimed for eigenvalues zeta >= zeta_0",
                self.zeta0,
                self.zeta0 - zeta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub n: Vec<i64>,
    pub magnitude: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub constants: DecayConstants,
    pub k: Vec<f64>,
    pub cutoff: f64,
    pub zeta: f64,
    pub gap: f64,
    pub residual: f64,
    pub degenerate: bool,
    pub threshold_radius: f64,
    /// Largest tested `|n|`, `0.9 * cutoff`.
    pub outer_radius: f64,
    pub checked: usize,
    pub violations: Vec<Violation>,
    /// Smallest `bound / |psi_n|` over the tested shell; coefficients that
    /// are exactly zero are floored at the smallest positive double.
    pub margin_min: f64,
}

fn solve_at(potential: &Potential, k: &[f64], cutoff: f64, target: f64) -> Result<(PlaneWaveBasis, crate::fibre::BandSolution)> {
    let basis = PlaneWaveBasis::new(potential.dual(), k, cutoff)?;
    let matrix = assemble_on(potential, basis, &AssemblyOptions::default());
    let sol = eigenpair_near(&matrix, target)?;
    Ok((matrix.basis().clone(), sol))
}

pub fn verify_decay(potential: &Potential, k: &[f64], band_target: f64, eta: f64, cutoff: f64) -> Result<DecayReport> {
    let constants = DecayConstants::for_potential(potential, eta)?;
    let (basis, sol) = solve_at(potential, k, cutoff, band_target)?;
    constants.require_energy(sol.zeta)?;
    let threshold = constants.threshold_radius(sol.zeta);
    if cutoff < CUTOFF_MARGIN * threshold {
        return Err(Error::Precondition(format!(
            "cutoff {cutoff:.4} is below {CUTOFF_MARGIN} x (1 + m kappa) sqrt(zeta) = {:.4}; \
             no coefficient beyond the decay threshold survives truncation",
            CUTOFF_MARGIN * threshold
        )));
    }
    let outer = TESTED_FRACTION * cutoff;
    let mut checked = 0;
    let mut violations = Vec::new();
    let mut margin_min = f64::INFINITY;
    for (i, c) in sol.coeffs.iter().enumerate() {
        let r = norm(basis.point(i));
        if r < threshold || r > outer {
            continue;
        }
        checked += 1;
        let bound = constants.coefficient_bound(r);
        let magnitude = c.norm();
        margin_min = margin_min.min(bound / magnitude.max(f64::MIN_POSITIVE));
        if magnitude > bound.max(NOISE_FLOOR) {
            violations.push(Violation {
                n: basis.index(i).to_vec(),
                magnitude,
                bound,
            });
        }
    }
    Ok(DecayReport {
        constants,
        k: k.to_vec(),
        cutoff,
        zeta: sol.zeta,
        gap: sol.gap,
        residual: sol.residual,
        degenerate: sol.degenerate,
        threshold_radius: threshold,
        outer_radius: outer,
        checked,
        violations,
        margin_min,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientCheck {
    pub k: Vec<f64>,
    pub zeta: f64,
    pub gap: f64,
    pub hf_velocity: Vec<f64>,
    pub fd_velocity: Vec<f64>,
    pub step: f64,
    /// `2 (1 + eta) sqrt(zeta)`.
    pub bound: f64,
    pub bound_ok: bool,
}

impl GradientCheck {
    /// `|hf - fd|` in the Euclidean norm.
    pub fn discrepancy(&self) -> f64 {
        self.hf_velocity
            .iter()
            .zip(&self.fd_velocity)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn speed(&self) -> f64 {
        norm(&self.hf_velocity)
    }
}

pub fn verify_gradient(potential: &Potential, k: &[f64], band_target: f64, eta: f64, cutoff: f64) -> Result<GradientCheck> {
    verify_gradient_with_step(potential, k, band_target, eta, cutoff, DEFAULT_STEP)
}

/// Compares the Hellmann-Feynman velocity with central differences of the
/// tracked band. The index set is frozen at `k` so every difference uses
/// the same truncated space.
pub fn verify_gradient_with_step(
    potential: &Potential,
    k: &[f64],
    band_target: f64,
    eta: f64,
    cutoff: f64,
    step: f64,
) -> Result<GradientCheck> {
    if !(step > 0.0) {
        return Err(Error::param(format!("finite-difference step must be positive, got {step}")));
    }
    let constants = DecayConstants::for_potential(potential, eta)?;
    let (basis, sol) = solve_at(potential, k, cutoff, band_target)?;
    constants.require_energy(sol.zeta)?;
    let hf = group_velocity(&sol, &basis)?;

    let opts = AssemblyOptions::default();
    let mut fd = Vec::with_capacity(k.len());
    for axis in 0..k.len() {
        let mut side = [0.0; 2];
        for (slot, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut kk = k.to_vec();
            kk[axis] += sign * step;
            let matrix = assemble_on(potential, basis.with_k(&kk), &opts);
            let moved = eigenpair_near(&matrix, sol.zeta)?;
            if (moved.zeta - sol.zeta).abs() >= 0.5 * sol.gap || moved.degenerate {
                return Err(Error::Tracking(format!(
                    "band at {:.6} moved to {:.6} with gap {:.3e} along axis {axis}; use a smaller step",
                    sol.zeta, moved.zeta, sol.gap
                )));
            }
            side[slot] = moved.zeta;
        }
        fd.push((side[0] - side[1]) / (2.0 * step));
    }
    let bound = constants.velocity_bound(sol.zeta);
    let bound_ok = norm(&hf) <= bound;
    Ok(GradientCheck {
        k: k.to_vec(),
        zeta: sol.zeta,
        gap: sol.gap,
        hf_velocity: hf,
        fd_velocity: fd,
        step,
        bound,
        bound_ok,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::lattice::Lattice;

    fn square() -> Lattice {
        Lattice::cubic(2, 2.0 * PI).unwrap()
    }

    #[test]
    fn constant_chain_examples() {
        let v = Potential::cosine_sum(&square(), 1.0, &[0]).unwrap();
        let q = 0.5f64.sqrt();
        let c = DecayConstants::new(&v, 2, 0.5, q, 5.0).unwrap();
        assert_eq!(c.m, 2);
        assert!((c.kappa - 0.1).abs() < 1e-15);
        assert!((c.zeta0 - 14400.0).abs() < 1e-8);

        let c = DecayConstants::new(&v, 2, 0.9, q, 5.0).unwrap();
        assert!((c.kappa - 0.18).abs() < 1e-15);
        let second = 1.36f64.powi(2) / 0.18f64.powi(4);
        assert!((c.zeta0 - second).abs() < 1e-9);
        assert!((c.zeta0 - 1762.0).abs() < 0.1);
        assert!((c.mm_chain[0] - 12.0 * PI * 2f64.sqrt()).abs() < 1e-12);
        assert!((c.mm_chain[0] - 53.31).abs() < 0.01);
        // M_2 = 6 (2^2 sqrt(W) V0 M_1 + V^(3))
        let v0 = 2.0 * PI * 2f64.sqrt();
        let m2 = 6.0 * (4.0 * 5f64.sqrt() * v0 * c.mm_chain[0] + v0);
        assert!((c.mm_chain[1] - m2).abs() < 1e-9 * m2);

        assert!(DecayConstants::new(&v, 2, 0.0, q, 5.0).is_err());
        assert!(DecayConstants::new(&v, 2, 1.0, q, 5.0).is_err());
        assert_eq!(DecayConstants::new(&v, 3, 0.5, q, 7.0).unwrap().m, 2);
        assert_eq!(DecayConstants::new(&v, 5, 0.5, q, 7.0).unwrap().m, 3);
    }

    #[test]
    fn free_decay_has_no_violations() {
        let v = Potential::zero(&square());
        let c = DecayConstants::for_potential(&v, 0.9).unwrap();
        // a plane wave just above zeta_0
        let zeta = 42.5f64 * 42.5;
        assert!(zeta > c.zeta0);
        let cutoff = 1.2 * c.threshold_radius(zeta);
        let k = [0.5, 0.0];
        let r = verify_decay(&v, &k, zeta + 0.01, 0.9, cutoff).unwrap();
        assert!(r.violations.is_empty());
        assert!(r.checked > 0);
        // the bound vanishes with V; only solver noise is left out there
        assert_eq!(r.margin_min, 0.0);
    }

    #[test]
    fn low_energy_is_a_precondition_failure() {
        let v = Potential::cosine_sum(&square(), 1.0, &[0, 1]).unwrap();
        let err = verify_decay(&v, &[0.0, 0.0], 100.0, 0.9, 30.0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
        assert!(err.to_string().contains("zeta_0"));
        let err = verify_gradient(&v, &[0.0, 0.0], 100.0, 0.9, 30.0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn gradient_eta_range() {
        let v = Potential::zero(&square());
        assert!(matches!(
            verify_gradient(&v, &[0.0, 0.0], 2000.0, 0.0, 50.0),
            Err(Error::Parameter(_))
        ));
    }
}
