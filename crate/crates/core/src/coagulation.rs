//! The coagulation bilinear form on a uniform mass grid and its shifted
//! variant `C_q u = a_q (1 + m^q) u + C̄(u, u)` used by the mild-solution solver.
//!
//! A merger of cells `i` and `j` produces mass `m_i + m_j = (i + j + 1) Δ`,
//! which is the edge between cells `i + j` and `i + j + 1`; the product is
//! split in halves between these two cells, which conserves both number and
//! mass. Products beyond the last cell are tallied as overflow per node.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{Certificate, CertificateKind};
use crate::error::{invalid, Error, Result};
use crate::grid::{weighted_norm, MassGrid, Spacing, SpatialGrid, StateField};
use crate::kernels::CoagulationKernel;

/// Result of one evaluation of `C̄(u, v)`.
#[derive(Debug, Clone)]
pub struct CoagOutput {
    pub value: StateField,
    /// Per spatial node: number and mass per unit volume and time leaving the grid.
    pub overflow_number: Vec<f64>,
    pub overflow_mass: Vec<f64>,
}

impl CoagOutput {
    /// Trapezoid-weighted spatial integrals `(number, mass)` of the overflow rates.
    pub fn overflow_totals(&self) -> (f64, f64) {
        let w = self.value.space_grid().weights();
        let n = w.iter().zip(&self.overflow_number).map(|(a, b)| a * b).sum();
        let m = w.iter().zip(&self.overflow_mass).map(|(a, b)| a * b).sum();
        (n, m)
    }
}

/// Precomputed kernel tables for `C̄` on a fixed pair of grids.
#[derive(Debug, Clone)]
pub struct CoagulationOperator {
    mass: Arc<MassGrid>,
    space: Arc<SpatialGrid>,
    kernel: CoagulationKernel,
    /// Row-major `n × n` table of the mass law at cell centres.
    table: Vec<f64>,
    node_factor: Vec<f64>,
}

impl CoagulationOperator {
    pub fn new(mass: Arc<MassGrid>, space: Arc<SpatialGrid>, kernel: CoagulationKernel) -> Result<Self> {
        if mass.spacing() != Spacing::Uniform {
            return Err(invalid(
                "coagulation needs a uniform mass grid (bin-aligned convolution); geometric grids are not supported",
            ));
        }
        let c = mass.centers();
        let n = c.len();
        let mut table = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                table[i * n + j] = kernel.law.eval(c[i], c[j]);
            }
        }
        let node_factor = (0..space.len()).map(|j| kernel.spatial_factor(space.point(j))).collect();
        Ok(Self {
            mass,
            space,
            kernel,
            table,
            node_factor,
        })
    }

    pub fn kernel(&self) -> &CoagulationKernel {
        &self.kernel
    }

    pub fn mass_grid(&self) -> &Arc<MassGrid> {
        &self.mass
    }

    fn check(&self, u: &StateField) -> Result<()> {
        if **u.mass_grid() != *self.mass || **u.space_grid() != *self.space {
            return Err(Error::GridMismatch("field and coagulation operator grids differ"));
        }
        Ok(())
    }

    /// `C̄(u, v)(x, m) = ½∫₀^m k(m-s, s) u(m-s) v(s) ds - u(m) ∫ k(m, s) v(s) ds`.
    pub fn apply(&self, u: &StateField, v: &StateField) -> Result<CoagOutput> {
        self.check(u)?;
        self.check(v)?;
        let n = self.mass.len();
        let dm = self.mass.widths()[0];
        let nx = self.space.len();
        let (us, vs) = (u.values(), v.values());
        let mut out = vec![0.0; n * nx];
        let tallies: Vec<(f64, f64)> = out
            .par_chunks_mut(n)
            .enumerate()
            .map(|(j, row)| {
                let kf = self.node_factor[j];
                let up = &us[j * n..(j + 1) * n];
                let vp = &vs[j * n..(j + 1) * n];
                let mut over_n = 0.0;
                let mut over_m = 0.0;
                for i in 0..n {
                    let ui = up[i];
                    let krow = &self.table[i * n..(i + 1) * n];
                    let mut loss = 0.0;
                    for l in 0..n {
                        loss += krow[l] * vp[l];
                    }
                    row[i] -= kf * ui * loss * dm;
                    if ui == 0.0 {
                        continue;
                    }
                    for l in 0..n {
                        // Half the merger rate per unit volume, split over two cells.
                        let half = 0.25 * kf * krow[l] * ui * vp[l] * dm * dm;
                        if half == 0.0 {
                            continue;
                        }
                        for t in [i + l, i + l + 1] {
                            if t < n {
                                row[t] += half / dm;
                            } else {
                                over_n += half;
                                over_m += half * (t as f64 + 0.5) * dm;
                            }
                        }
                    }
                }
                (over_n, over_m)
            })
            .collect();
        let (overflow_number, overflow_mass) = tallies.into_iter().unzip();
        Ok(CoagOutput {
            value: u.with_values(out),
            overflow_number,
            overflow_mass,
        })
    }
}

/// Reference constants of the growth and Lipschitz bounds on the ball `𝒰_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoagConstants {
    /// `‖a_q(1+m^q) f‖_p ≤ c₁ ‖f‖_r`, `c₁ = 4 a_q`.
    pub c1: f64,
    /// `‖C̄(f, g)‖_p ≤ c₂ ‖f‖_r ‖g‖_r`, `c₂ = 8 k₀ (1 + C_p)`, `C_p = max(1, 2^{p-1})`.
    pub c2: f64,
    /// `L(𝒰_b) = c₁ + 2 c₂ b`.
    pub lipschitz: f64,
}

/// `C_q` with ball radius `b`, shift `a_q = 2 k₀ b` and exponents `r = p + q`.
#[derive(Debug, Clone)]
pub struct TruncatedCoagulation {
    pub op: CoagulationOperator,
    pub b: f64,
    pub a_q: f64,
    pub r: f64,
    pub p: f64,
    pub q: f64,
    pub k0: f64,
}

impl TruncatedCoagulation {
    pub fn new(op: CoagulationOperator, b: f64, r: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(invalid(format!("ball radius must be positive, got {b}")));
        }
        let (k0, q) = op.kernel().growth();
        let p = r - q;
        if p < 0.0 {
            return Err(invalid(format!("r = {r} is below the kernel growth exponent q = {q}")));
        }
        Ok(Self {
            op,
            b,
            a_q: 2.0 * k0 * b,
            r,
            p,
            q,
            k0,
        })
    }

    /// Same operator without the shift (`a_q = 0`): plain `C̄(u, u)`.
    pub fn unshifted(&self) -> Self {
        Self {
            a_q: 0.0,
            ..self.clone()
        }
    }

    /// The shift rate `a_q (1 + m^q)` at mass `m`.
    pub fn shift_rate(&self, m: f64) -> f64 {
        self.a_q * (1.0 + m.powf(self.q))
    }

    pub fn constants(&self) -> CoagConstants {
        let c1 = 4.0 * self.a_q;
        let cp = 1.0f64.max(2.0f64.powf(self.p - 1.0));
        let c2 = 8.0 * self.k0 * (1.0 + cp);
        CoagConstants {
            c1,
            c2,
            lipschitz: c1 + 2.0 * c2 * self.b,
        }
    }

    /// `C_q u`, rejecting states outside `𝒰_b`.
    pub fn apply(&self, u: &StateField) -> Result<CoagOutput> {
        let norm = weighted_norm(u, self.r)?;
        if norm > self.b * (1.0 + 1e-12) {
            return Err(Error::OutsideBall {
                norm,
                radius: self.b,
            });
        }
        self.apply_unchecked(u)
    }

    /// `C_q u` without the ball check.
    pub fn apply_unchecked(&self, u: &StateField) -> Result<CoagOutput> {
        let mut out = self.op.apply(u, u)?;
        if self.a_q != 0.0 {
            let shift: Vec<f64> = self.op.mass.centers().iter().map(|&m| self.shift_rate(m)).collect();
            let n = shift.len();
            for (row, src) in out.value.values_mut().chunks_mut(n).zip(u.values().chunks(n)) {
                for i in 0..n {
                    row[i] += shift[i] * src[i];
                }
            }
        }
        Ok(out)
    }
}

/// Measures `‖C_q f - C_q g‖_p / ‖f - g‖_r` over the pairs; passes when the
/// largest ratio is at most `L(𝒰_b)`. Coincident pairs are skipped.
pub fn lipschitz_probe(
    tc: &TruncatedCoagulation,
    pairs: &[(StateField, StateField)],
) -> Result<Certificate> {
    let consts = tc.constants();
    let mut worst: f64 = 0.0;
    let mut at = 0usize;
    let mut used = 0;
    let mut skipped = 0;
    for (k, (f, g)) in pairs.iter().enumerate() {
        let d = weighted_norm(&f.sub(g)?, tc.r)?;
        if d == 0.0 {
            skipped += 1;
            continue;
        }
        let cf = tc.apply(f)?.value;
        let cg = tc.apply(g)?.value;
        let ratio = weighted_norm(&cf.sub(&cg)?, tc.p)? / d;
        used += 1;
        if ratio > worst {
            worst = ratio;
            at = k;
        }
    }
    let mut cert = Certificate::from_margin(
        CertificateKind::Lipschitz,
        consts.lipschitz - worst,
        worst,
        vec![at as f64],
        used,
        false,
    )
    .with_note(format!(
        "c1 = {:.6e}, c2 = {:.6e}, L = {:.6e}",
        consts.c1, consts.c2, consts.lipschitz
    ));
    if skipped > 0 {
        cert = cert.with_note(format!("{skipped} coincident pairs skipped"));
    }
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{classical_moment, NormMode};
    use crate::kernels::CoagLaw;

    fn setup(n: usize, m_max: f64) -> (Arc<MassGrid>, Arc<SpatialGrid>) {
        (
            Arc::new(MassGrid::uniform(m_max, n).unwrap()),
            Arc::new(SpatialGrid::unit_interval()),
        )
    }

    #[test]
    fn mass_is_conserved_with_overflow() {
        let (mg, sg) = setup(40, 4.0);
        let op = CoagulationOperator::new(mg.clone(), sg.clone(), CoagulationKernel::new(CoagLaw::Sum, None).unwrap()).unwrap();
        let u = StateField::from_fn(mg, sg, NormMode::Integral, |_, m| (-m).exp());
        let out = op.apply(&u, &u).unwrap();
        let (_, lost) = out.overflow_totals();
        assert!(lost > 0.0);
        let interior = classical_moment(&out.value, 1.0).unwrap();
        assert!((interior + lost).abs() < 1e-12, "{interior} {lost}");
    }

    #[test]
    fn constant_kernel_number_rate() {
        // dN/dt = -½ k N² for a constant kernel when nothing overflows.
        let (mg, sg) = setup(64, 8.0);
        let op = CoagulationOperator::new(mg.clone(), sg.clone(), CoagulationKernel::constant(1.0)).unwrap();
        let u = StateField::from_fn(mg, sg, NormMode::Integral, |_, m| if m < 2.0 { 1.0 } else { 0.0 });
        let out = op.apply(&u, &u).unwrap();
        let n0 = classical_moment(&u, 0.0).unwrap();
        let rate = classical_moment(&out.value, 0.0).unwrap();
        assert_eq!(out.overflow_totals().0, 0.0);
        assert!((rate + 0.5 * n0 * n0).abs() < 1e-12);
    }

    #[test]
    fn rejects_geometric_grid_and_outside_ball() {
        let mg = Arc::new(MassGrid::geometric(0.01, 10.0, 20).unwrap());
        let sg = Arc::new(SpatialGrid::unit_interval());
        assert!(CoagulationOperator::new(mg, sg, CoagulationKernel::constant(1.0)).is_err());

        let (mg, sg) = setup(20, 4.0);
        let op = CoagulationOperator::new(mg.clone(), sg.clone(), CoagulationKernel::constant(1.0)).unwrap();
        let tc = TruncatedCoagulation::new(op, 0.5, 0.0).unwrap();
        let u = StateField::from_fn(mg, sg, NormMode::Sup, |_, _| 1.0);
        assert!(matches!(tc.apply(&u), Err(Error::OutsideBall { .. })));
        assert_eq!(tc.unshifted().a_q, 0.0);
    }
}
