//! Fragmentation loss and gain operators on the grid, the fragmentation
//! evolution, and the diagnostics built on them: Miyadera ratio, moment
//! regularization fit, moment inequality, commutation with transport and
//! pointwise domination of trajectories.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{Certificate, CertificateKind};
use crate::error::{invalid, Error, Result};
use crate::grid::{moment, weighted_norm, MassGrid, SpatialGrid, StateField};
use crate::kernels::{AbsorptionRate, DaughterKernel, DaughterLaw, DominatingKernel, SpatialModulation};
use crate::quadrature::{gauss_legendre_pieces, linear_fit};
use crate::transport::{resolvent, Evolution, ResolventOptions, SemigroupAction};

/// Largest `h · ‖gain‖` allowed in one explicit gain substep.
pub const GAIN_STEP_LIMIT: f64 = 0.5;

/// Discretised `-a u + ∫ b a u ds` on a fixed pair of grids.
///
/// The gain uses one base matrix `B[i][j]`, `i ≤ j`: entry `B_ij Δm_i` is the
/// number of daughters a parent at centre `s_j` drops into cell `i` (the
/// parent's own cell is cut at `s_j`). The mass defect `s_j - Σ_i m_i B_ij Δm_i`
/// is then put on the diagonal entry, or spread over the column by rescaling
/// if that would make the diagonal negative. The loss and gain rates are
/// stored separately so that the dominating problem (loss `α₁`, gain `α₂`)
/// uses the same code.
#[derive(Debug, Clone)]
pub struct FragmentationOperator {
    mass: Arc<MassGrid>,
    space: Arc<SpatialGrid>,
    /// Row-major `n × n`, zero below the diagonal.
    matrix: Vec<f64>,
    loss_law: Vec<f64>,
    gain_law: Vec<f64>,
    /// Per spatial node: loss modulation and combined gain modulation (rate × kernel).
    loss_mod: Vec<f64>,
    gain_mod: Vec<f64>,
    /// Extra x-independent loss rate per mass cell (for instance the coagulation shift).
    extra_loss: Vec<f64>,
    x_independent: bool,
    rescaled: bool,
}

fn node_factors(space: &SpatialGrid, m: &Option<SpatialModulation>) -> Vec<f64> {
    (0..space.len())
        .map(|j| m.as_ref().map_or(1.0, |md| md.factor(space.point(j))))
        .collect()
}

fn build_matrix(mass: &MassGrid, law: &DaughterLaw) -> (Vec<f64>, bool) {
    let n = mass.len();
    let centers = mass.centers();
    let widths = mass.widths();
    let edges = mass.edges();
    let cols: Vec<(Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let s = centers[j];
            let breaks = law.breakpoints(s);
            let mut col = vec![0.0; j + 1];
            for (i, c) in col.iter_mut().enumerate() {
                let lo = edges[i];
                let hi = if i == j { s } else { edges[i + 1] };
                *c = gauss_legendre_pieces(|m| law.eval(m, s), lo, hi, &breaks, 2) / widths[i];
            }
            let first: f64 = col
                .iter()
                .enumerate()
                .map(|(i, b)| centers[i] * b * widths[i])
                .sum();
            let target = law.moment(s, 1.0);
            let matched = first > 0.0 && target.is_finite() && target > 0.0;
            if matched {
                // Put the mass defect on the diagonal: it is O(h^2) there, while a
                // column rescale costs O(h/s) in every small cell.
                let diag = col[j] + (target - first) / (centers[j] * widths[j]);
                if diag >= 0.0 {
                    col[j] = diag;
                } else {
                    let f = target / first;
                    col.iter_mut().for_each(|b| *b *= f);
                }
            }
            (col, matched)
        })
        .collect();
    let mut matrix = vec![0.0; n * n];
    let all_matched = cols.iter().all(|(_, m)| *m);
    for (j, (col, _)) in cols.into_iter().enumerate() {
        for (i, b) in col.into_iter().enumerate() {
            matrix[i * n + j] = b;
        }
    }
    (matrix, all_matched)
}

impl FragmentationOperator {
    /// Operator with loss `a` and gain `∫ b a u`.
    pub fn new(
        mass: Arc<MassGrid>,
        space: Arc<SpatialGrid>,
        rate: &AbsorptionRate,
        daughters: &DaughterKernel,
    ) -> Result<Self> {
        daughters.law.validate()?;
        let (matrix, rescaled) = build_matrix(&mass, &daughters.law);
        let law: Vec<f64> = mass.centers().iter().map(|&m| rate.law.eval(m)).collect();
        let loss_mod = node_factors(&space, &rate.modulation);
        let kmod = node_factors(&space, &daughters.modulation);
        let gain_mod = loss_mod.iter().zip(&kmod).map(|(a, b)| a * b).collect();
        let n = mass.len();
        Ok(Self {
            matrix,
            loss_law: law.clone(),
            gain_law: law,
            loss_mod,
            gain_mod,
            extra_loss: vec![0.0; n],
            x_independent: rate.is_x_independent() && daughters.is_x_independent(),
            rescaled,
            mass,
            space,
        })
    }

    /// The dominating problem: loss `α₁`, gain `∫ β α₂ u`, all x-independent.
    pub fn dominating(
        mass: Arc<MassGrid>,
        space: Arc<SpatialGrid>,
        rate: &AbsorptionRate,
        beta: &DominatingKernel,
    ) -> Result<Self> {
        beta.law.validate()?;
        let (matrix, rescaled) = build_matrix(&mass, &beta.law);
        let loss_law = mass.centers().iter().map(|&m| rate.alpha1(m)).collect();
        let gain_law = mass.centers().iter().map(|&m| rate.alpha2(m)).collect();
        let n = mass.len();
        let nx = space.len();
        Ok(Self {
            matrix,
            loss_law,
            gain_law,
            loss_mod: vec![1.0; nx],
            gain_mod: vec![1.0; nx],
            extra_loss: vec![0.0; n],
            x_independent: true,
            rescaled,
            mass,
            space,
        })
    }

    /// Adds `rate(m)` to the loss without a matching gain.
    pub fn with_extra_loss(mut self, rate: impl Fn(f64) -> f64) -> Self {
        self.extra_loss = self.mass.centers().iter().map(|&m| rate(m)).collect();
        self
    }

    pub fn mass_grid(&self) -> &Arc<MassGrid> {
        &self.mass
    }

    pub fn space_grid(&self) -> &Arc<SpatialGrid> {
        &self.space
    }

    pub fn is_x_independent(&self) -> bool {
        self.x_independent
    }

    /// True when every column was rescaled to the law's exact first moment.
    pub fn is_rescaled(&self) -> bool {
        self.rescaled
    }

    /// Base gain matrix entry `B[i][j]`.
    pub fn matrix_entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.mass.len() + j]
    }

    /// `|Σ_i m_i B_ij Δm_i - s_j| / s_j` for every column.
    pub fn column_mass_defects(&self) -> Vec<f64> {
        let n = self.mass.len();
        let c = self.mass.centers();
        let w = self.mass.widths();
        (0..n)
            .map(|j| {
                let s: f64 = (0..=j).map(|i| c[i] * self.matrix[i * n + j] * w[i]).sum();
                (s - c[j]).abs() / c[j]
            })
            .collect()
    }

    /// Discrete `Σ_i φ(m_i) B_ij Δm_i` for every parent cell `j`.
    pub fn discrete_daughter_moment(&self, phi: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.mass.len();
        let c = self.mass.centers();
        let w = self.mass.widths();
        let pv: Vec<f64> = c.iter().map(|&m| phi(m)).collect();
        (0..n)
            .map(|j| (0..=j).map(|i| pv[i] * self.matrix[i * n + j] * w[i]).sum())
            .collect()
    }

    fn check_grids(&self, u: &StateField) -> Result<()> {
        if **u.mass_grid() != *self.mass || **u.space_grid() != *self.space {
            return Err(Error::GridMismatch("field and fragmentation operator grids differ"));
        }
        Ok(())
    }

    /// Loss rate at node `j`, cell `i` (including any extra loss).
    pub fn loss_rate(&self, j: usize, i: usize) -> f64 {
        self.loss_law[i] * self.loss_mod[j] + self.extra_loss[i]
    }

    /// Fragmentation-only loss rate (without the extra loss).
    pub fn fragmentation_rate(&self, j: usize, i: usize) -> f64 {
        self.loss_law[i] * self.loss_mod[j]
    }

    /// Gain rate `a(x_j, s_i)` multiplied by the kernel's spatial factor.
    pub fn gain_rate(&self, j: usize, i: usize) -> f64 {
        self.gain_law[i] * self.gain_mod[j]
    }

    fn gain_profile(&self, j: usize, u: &[f64], out: &mut [f64]) {
        let n = self.mass.len();
        let w = self.mass.widths();
        let g = self.gain_mod[j];
        let v: Vec<f64> = (0..n).map(|k| self.gain_law[k] * u[k] * w[k]).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * n + i..(i + 1) * n];
            *o = g * row.iter().zip(&v[i..]).map(|(b, x)| b * x).sum::<f64>();
        }
    }

    /// `-a u`.
    pub fn apply_loss(&self, u: &StateField) -> Result<StateField> {
        self.check_grids(u)?;
        let n = self.mass.len();
        let mut out = u.clone();
        for (j, row) in out.values_mut().chunks_mut(n).enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                *v *= -self.fragmentation_rate(j, i);
            }
        }
        Ok(out)
    }

    /// `∫_m^∞ b a u ds`.
    pub fn apply_gain(&self, u: &StateField) -> Result<StateField> {
        self.check_grids(u)?;
        let n = self.mass.len();
        let src = u.values();
        let mut out = vec![0.0; src.len()];
        out.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
            self.gain_profile(j, &src[j * n..(j + 1) * n], row);
        });
        Ok(u.with_values(out))
    }

    /// Upper bound of the gain operator's `L₁(dm)` norm over all nodes.
    pub fn gain_norm(&self) -> f64 {
        let n = self.mass.len();
        let w = self.mass.widths();
        let counts: Vec<f64> = (0..n)
            .map(|j| (0..=j).map(|i| self.matrix[i * n + j] * w[i]).sum::<f64>())
            .collect();
        let gmax = self.gain_mod.iter().copied().fold(0.0, f64::max);
        gmax * (0..n)
            .map(|j| self.gain_law[j] * counts[j])
            .fold(0.0, f64::max)
    }

    /// Substeps needed so that each gain substep satisfies `h ‖gain‖ ≤ 0.5`.
    pub fn substeps_for(&self, dt: f64) -> usize {
        ((dt * self.gain_norm() / GAIN_STEP_LIMIT).ceil() as usize).max(1)
    }

    /// Advances `du/dt = -Λu + gain(u)` by `dt`; `Λ` is integrated exactly.
    pub fn fragment_step(&self, u: &StateField, dt: f64) -> Result<StateField> {
        if !(dt > 0.0) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        self.fragment_step_substeps(u, dt, self.substeps_for(dt))
    }

    /// As `fragment_step` with a prescribed number of substeps.
    ///
    /// Each substep is the fourth-order Lawson (integrating factor)
    /// Runge–Kutta scheme. All of its stages are nonnegative combinations of
    /// `e^{-Λh}` and the gain, so nonnegative data stay nonnegative and the
    /// scheme is monotone in the kernel and rates.
    pub fn fragment_step_substeps(&self, u: &StateField, dt: f64, substeps: usize) -> Result<StateField> {
        self.check_grids(u)?;
        if dt == 0.0 {
            return Ok(u.clone());
        }
        let n = self.mass.len();
        let h = dt / substeps.max(1) as f64;
        let mut out = u.values().to_vec();
        out.par_chunks_mut(n).enumerate().for_each(|(j, prof)| {
            let lam: Vec<f64> = (0..n).map(|i| self.loss_rate(j, i)).collect();
            let e1: Vec<f64> = lam.iter().map(|l| (-l * h).exp()).collect();
            let e2: Vec<f64> = lam.iter().map(|l| (-l * 0.5 * h).exp()).collect();
            let mut k1 = vec![0.0; n];
            let mut k2 = vec![0.0; n];
            let mut k3 = vec![0.0; n];
            let mut k4 = vec![0.0; n];
            let mut stage = vec![0.0; n];
            for _ in 0..substeps.max(1) {
                self.gain_profile(j, prof, &mut k1);
                for i in 0..n {
                    stage[i] = e2[i] * (prof[i] + 0.5 * h * k1[i]);
                }
                self.gain_profile(j, &stage, &mut k2);
                for i in 0..n {
                    stage[i] = e2[i] * prof[i] + 0.5 * h * k2[i];
                }
                self.gain_profile(j, &stage, &mut k3);
                for i in 0..n {
                    stage[i] = e1[i] * prof[i] + h * e2[i] * k3[i];
                }
                self.gain_profile(j, &stage, &mut k4);
                for i in 0..n {
                    prof[i] = e1[i] * prof[i]
                        + h / 6.0 * (e1[i] * k1[i] + 2.0 * e2[i] * (k2[i] + k3[i]) + k4[i]);
                }
            }
        });
        Ok(u.with_values(out))
    }
}

impl Evolution for FragmentationOperator {
    fn evolve(&self, t: f64, u: &StateField) -> Result<StateField> {
        if t == 0.0 {
            return Ok(u.clone());
        }
        self.fragment_step(u, t)
    }
}

/// Options of the Miyadera diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiyaderaOptions {
    pub r: f64,
    pub resolvent: ResolventOptions,
}

impl Default for MiyaderaOptions {
    fn default() -> Self {
        Self {
            r: 0.0,
            resolvent: ResolventOptions::default(),
        }
    }
}

/// Largest ratio `‖B R(λ, T) f‖_r / ‖f‖_r` over the samples, with the sample index.
pub fn miyadera_ratio(
    lambda: f64,
    samples: &[StateField],
    transport: &dyn Evolution,
    frag: &FragmentationOperator,
    opts: &MiyaderaOptions,
) -> Result<(f64, usize, f64)> {
    let mut worst = (0.0f64, 0usize, 0.0f64);
    let ropts = ResolventOptions {
        r: opts.r,
        ..opts.resolvent
    };
    for (k, f) in samples.iter().enumerate() {
        let nf = weighted_norm(f, opts.r)?;
        if nf == 0.0 {
            continue;
        }
        let res = resolvent(lambda, f, transport, &ropts)?;
        let g = frag.apply_gain(&res.value)?;
        let ratio = weighted_norm(&g, opts.r)? / nf;
        if ratio > worst.0 || k == 0 {
            worst = (ratio, k, res.error_estimate / nf);
        }
    }
    Ok(worst)
}

/// Miyadera certificate: passes when every sampled ratio is below one.
/// `margin = 1 - max ratio`.
pub fn miyadera_margin(
    lambda: f64,
    samples: &[StateField],
    transport: &dyn Evolution,
    frag: &FragmentationOperator,
    opts: &MiyaderaOptions,
) -> Result<Certificate> {
    if samples.iter().any(|f| !f.is_nonnegative()) {
        return Err(invalid("Miyadera probes must be nonnegative"));
    }
    let (ratio, k, err) = miyadera_ratio(lambda, samples, transport, frag, opts)?;
    Ok(Certificate::from_margin(
        CertificateKind::Miyadera,
        1.0 - ratio,
        ratio,
        vec![lambda, k as f64],
        samples.len(),
        true,
    )
    .with_note(format!("relative resolvent error estimate {err:.3e}")))
}

/// Smallest `λ` (to relative precision `rel_tol`) at which the sampled
/// Miyadera ratio drops below one, found by bracketing and bisection.
/// Returns `None` when the ratio is still ≥ 1 at `lambda_max`.
pub fn find_lambda_star(
    samples: &[StateField],
    transport: &dyn Evolution,
    frag: &FragmentationOperator,
    opts: &MiyaderaOptions,
    lambda_max: f64,
    rel_tol: f64,
) -> Result<Option<f64>> {
    let ratio = |l: f64| -> Result<f64> { Ok(miyadera_ratio(l, samples, transport, frag, opts)?.0) };
    let mut hi = 1.0f64.min(lambda_max);
    while ratio(hi)? >= 1.0 {
        hi *= 2.0;
        if hi > lambda_max {
            return Ok(None);
        }
    }
    let mut lo = hi / 2.0;
    while ratio(lo)? < 1.0 {
        hi = lo;
        lo /= 2.0;
        if lo < 1e-8 {
            return Ok(Some(hi));
        }
    }
    while (hi - lo) > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if ratio(mid)? < 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Least-squares fit of `log ‖u(t)‖_r` against `log t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
}

/// Evolves `u0` through the increasing times `t_grid` and fits the log-log
/// slope of `‖u(t)‖_r`.
pub fn regularization_fit(
    u0: &StateField,
    evolution: &dyn Evolution,
    r: f64,
    t_grid: &[f64],
) -> Result<RegularizationFit> {
    if t_grid.len() < 4 {
        return Err(Error::DegenerateFit(format!(
            "need at least 4 time points, got {}",
            t_grid.len()
        )));
    }
    if t_grid[0] <= 0.0 || !t_grid.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::DegenerateFit("times must be positive and increasing".into()));
    }
    let mut norms = Vec::with_capacity(t_grid.len());
    let mut u = u0.clone();
    let mut t_prev = 0.0;
    for &t in t_grid {
        u = evolution.evolve(t - t_prev, &u)?;
        t_prev = t;
        norms.push(weighted_norm(&u, r)?);
    }
    if norms.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateFit("norm vanished along the trajectory".into()));
    }
    let lx: Vec<f64> = t_grid.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let (slope, intercept, residual) =
        linear_fit(&lx, &ly).ok_or_else(|| Error::DegenerateFit("singular design".into()))?;
    Ok(RegularizationFit {
        slope,
        intercept,
        residual,
        times: t_grid.to_vec(),
        norms,
    })
}

/// Right side `-∫∫ (N₀ + N_r) a u dm dx` with the operator's discrete daughter moments.
pub fn moment_inequality_rhs(frag: &FragmentationOperator, u: &StateField, r: f64) -> Result<f64> {
    frag.check_grids(u)?;
    let mass = frag.mass_grid();
    let c = mass.centers();
    let w = mass.widths();
    let n = mass.len();
    let daughters = frag.discrete_daughter_moment(|m| 1.0 + m.powf(r));
    let sw = frag.space_grid().weights();
    let mut total = 0.0;
    for (j, wj) in sw.iter().enumerate() {
        let prof = u.profile(j);
        for i in 0..n {
            // With equal loss and gain rates this is (N₀ + N_r)(x_j, s_i) a(x_j, s_i).
            let flux = frag.fragmentation_rate(j, i) * (1.0 + c[i].powf(r))
                - frag.gain_rate(j, i) * daughters[i];
            total -= wj * w[i] * flux * prof[i];
        }
    }
    Ok(total)
}

/// Checks the finite-difference `d/dt M_r` against the trapezoid-in-time
/// average of the right side on every step of the trajectory.
/// `margin = min(RHS + tol - LHS)`.
pub fn moment_inequality_check(
    trajectory: &[(f64, StateField)],
    frag: &FragmentationOperator,
    r: f64,
    tol: f64,
) -> Result<Certificate> {
    if trajectory.len() < 2 {
        return Err(invalid("trajectory needs at least two snapshots"));
    }
    let mut margin = f64::INFINITY;
    let mut stat = f64::NEG_INFINITY;
    let mut worst = Vec::new();
    let mut prev_m = moment(&trajectory[0].1, r)?;
    let mut prev_rhs = moment_inequality_rhs(frag, &trajectory[0].1, r)?;
    for w in trajectory.windows(2) {
        let (t0, t1) = (w[0].0, w[1].0);
        let m1 = moment(&w[1].1, r)?;
        let rhs1 = moment_inequality_rhs(frag, &w[1].1, r)?;
        let lhs = (m1 - prev_m) / (t1 - t0);
        let rhs = 0.5 * (prev_rhs + rhs1);
        let slack = rhs + tol - lhs;
        if slack < margin {
            margin = slack;
            worst = vec![t0, t1, lhs, rhs];
        }
        stat = stat.max(lhs - rhs);
        prev_m = m1;
        prev_rhs = rhs1;
    }
    Ok(Certificate::from_margin(
        CertificateKind::MomentInequality,
        margin,
        stat,
        worst,
        trajectory.len() - 1,
        false,
    ))
}

/// Compares `T(t)F(t)u` with `F(t)T(t)u`; requires m-independent transport and
/// x-independent fragmentation. `statistic` is the relative `𝒳_r` difference.
pub fn commutation_check(
    t: f64,
    u: &StateField,
    transport: &SemigroupAction,
    frag: &FragmentationOperator,
    r: f64,
    tol: f64,
) -> Result<Certificate> {
    if !transport.m_independent() {
        return Ok(Certificate::refused(
            CertificateKind::Commutation,
            "precondition violated: transport coefficients depend on mass",
        ));
    }
    if !frag.is_x_independent() {
        return Ok(Certificate::refused(
            CertificateKind::Commutation,
            "precondition violated: fragmentation kernels depend on position",
        ));
    }
    let tf = transport.apply(t, &frag.evolve(t, u)?)?;
    let ft = frag.evolve(t, &transport.apply(t, u)?)?;
    let scale = weighted_norm(&tf, r)?.max(f64::MIN_POSITIVE);
    let rel = weighted_norm(&tf.sub(&ft)?, r)? / scale;
    Ok(Certificate::from_margin(
        CertificateKind::Commutation,
        tol - rel,
        rel,
        vec![t],
        1,
        false,
    ))
}

/// Pointwise comparison of two trajectories sampled at the same times:
/// counts entries where `lower - upper > tol`. `statistic` is the largest
/// excess `lower - upper` seen.
pub fn domination_violations(
    lower: &[StateField],
    upper: &[StateField],
    tol: f64,
) -> Result<(Certificate, usize)> {
    if lower.len() != upper.len() {
        return Err(invalid("trajectories have different lengths"));
    }
    let mut count = 0;
    let mut excess = f64::NEG_INFINITY;
    let mut worst = Vec::new();
    let mut used = 0;
    for (k, (a, b)) in lower.iter().zip(upper).enumerate() {
        a.ensure_same_grids(b)?;
        for (idx, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
            used += 1;
            let e = x - y;
            if e > tol {
                count += 1;
            }
            if e > excess {
                excess = e;
                worst = vec![k as f64, idx as f64];
            }
        }
    }
    let cert = Certificate::from_margin(
        CertificateKind::Domination,
        if count > 0 { -(excess - tol) } else { tol - excess.max(0.0) },
        excess,
        worst,
        used,
        false,
    );
    Ok((cert, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{classical_moment, NormMode};

    fn setup(n: usize, m_max: f64) -> (Arc<MassGrid>, Arc<SpatialGrid>) {
        (
            Arc::new(MassGrid::uniform(m_max, n).unwrap()),
            Arc::new(SpatialGrid::unit_interval()),
        )
    }

    #[test]
    fn columns_conserve_mass_after_rescaling() {
        let (m, s) = setup(64, 8.0);
        for law in [DaughterLaw::UniformBinary, DaughterLaw::Example { b2: 0.3 }, DaughterLaw::PowerLaw { nu: 1.0 }] {
            let op = FragmentationOperator::new(m.clone(), s.clone(), &AbsorptionRate::power(1.0, 1.0), &DaughterKernel::from_law(law).unwrap()).unwrap();
            assert!(op.column_mass_defects().iter().all(|&d| d <= 1e-12));
        }
    }

    #[test]
    fn pure_loss_is_exact() {
        let (m, s) = setup(32, 4.0);
        let zero = DaughterKernel::from_law(DaughterLaw::scaled(0.0, DaughterLaw::UniformBinary)).unwrap();
        let op = FragmentationOperator::new(m.clone(), s.clone(), &AbsorptionRate::power(1.0, 1.0), &zero).unwrap();
        let u = StateField::from_fn(m.clone(), s, NormMode::Integral, |_, m| (-m).exp());
        let v = op.fragment_step(&u, 0.7).unwrap();
        for (i, &mm) in m.centers().iter().enumerate() {
            let ratio = v.get(0, i) / u.get(0, i);
            assert!((ratio - (-mm * 0.7f64).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_balances_loss_in_mass() {
        let (m, s) = setup(128, 10.0);
        let op = FragmentationOperator::new(m.clone(), s.clone(), &AbsorptionRate::power(1.0, 1.0), &DaughterKernel::uniform_binary()).unwrap();
        let u = StateField::from_fn(m, s, NormMode::Integral, |_, m| m * (-m).exp());
        let g = classical_moment(&op.apply_gain(&u).unwrap(), 1.0).unwrap();
        let l = classical_moment(&op.apply_loss(&u).unwrap(), 1.0).unwrap();
        assert!((g + l).abs() < 1e-12 * g.abs());
    }
}
