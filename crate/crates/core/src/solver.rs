//! Time evolution of the full model: the Duhamel/Picard mild-solution
//! iteration, a Strang-splitting cross-check and window chaining over a
//! maximal interval.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coagulation::{CoagulationOperator, TruncatedCoagulation};
use crate::error::{invalid, Error, Result};
use crate::fragmentation::FragmentationOperator;
use crate::grid::{weighted_norm, StateField};
use crate::quadrature::linear_fit;
use crate::transport::{Evolution, SemigroupAction};

/// `∫∫ m^k u dm dx` irrespective of the field's norm mode.
fn raw_moment(u: &StateField, k: f64) -> f64 {
    let g = u.mass_grid();
    g.centers()
        .iter()
        .zip(g.widths())
        .zip(u.slice_integrals())
        .map(|((m, w), s)| m.powf(k) * w * s)
        .sum()
}

/// Total mass `∫∫ m u dm dx`.
pub fn total_mass(u: &StateField) -> f64 {
    raw_moment(u, 1.0)
}

/// The linear part: transport and fragmentation, plus an optional
/// x-independent extra loss (the coagulation shift `a_q (1 + m^q)`).
///
/// Transport and fragmentation are combined by Strang splitting with steps of
/// at most `max_dt`; the extra loss acts per mass slice and therefore commutes
/// with transport, so without fragmentation it is applied exactly.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub transport: SemigroupAction,
    pub fragmentation: Option<FragmentationOperator>,
    pub max_dt: f64,
    shift: Option<Vec<f64>>,
}

impl LinearModel {
    pub fn new(transport: SemigroupAction, fragmentation: Option<FragmentationOperator>, max_dt: f64) -> Result<Self> {
        if !(max_dt > 0.0) {
            return Err(invalid(format!("max_dt must be positive, got {max_dt}")));
        }
        Ok(Self {
            transport,
            fragmentation,
            max_dt,
            shift: None,
        })
    }

    pub fn transport_only(transport: SemigroupAction) -> Self {
        Self {
            transport,
            fragmentation: None,
            max_dt: f64::INFINITY,
            shift: None,
        }
    }

    /// Copy with the extra loss `rate(m)` evaluated at the cell centres of `centers`.
    pub fn with_shift(&self, centers: &[f64], rate: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        let values: Vec<f64> = centers.iter().map(|&m| rate(m)).collect();
        if values.iter().all(|&v| v == 0.0) {
            return out;
        }
        match out.fragmentation.take() {
            Some(f) => out.fragmentation = Some(f.with_extra_loss(rate)),
            None => out.shift = Some(values),
        }
        out
    }

    fn apply_shift(&self, t: f64, u: &StateField) -> StateField {
        match &self.shift {
            None => u.clone(),
            Some(s) => {
                let n = s.len();
                let mut out = u.clone();
                let e: Vec<f64> = s.iter().map(|r| (-r * t).exp()).collect();
                for row in out.values_mut().chunks_mut(n) {
                    row.iter_mut().zip(&e).for_each(|(v, f)| *v *= f);
                }
                out
            }
        }
    }
}

impl Evolution for LinearModel {
    fn evolve(&self, t: f64, u: &StateField) -> Result<StateField> {
        if t == 0.0 {
            return Ok(u.clone());
        }
        let u = self.apply_shift(t, u);
        let frag = match &self.fragmentation {
            None => return self.transport.apply(t, &u),
            Some(f) => f,
        };
        if self.transport.is_identity() {
            return frag.fragment_step(&u, t);
        }
        let steps = (t / self.max_dt).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut cur = u;
        for _ in 0..steps {
            cur = self.transport.apply(0.5 * h, &cur)?;
            cur = frag.fragment_step(&cur, h)?;
            cur = self.transport.apply(0.5 * h, &cur)?;
        }
        Ok(cur)
    }
}

/// Fitted bound `‖G(t)‖_{p→r} ≤ M_p e^{ω_p t} t^{-q'}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemigroupBounds {
    pub m_p: f64,
    pub omega_p: f64,
    pub q_prime: f64,
}

impl SemigroupBounds {
    /// `M_p e^{ω_p T} T^{1-q'} L / (1 - q')`.
    pub fn predicted_factor(&self, window: f64, lipschitz: f64) -> f64 {
        self.m_p * (self.omega_p * window).exp() * window.powf(1.0 - self.q_prime) * lipschitz
            / (1.0 - self.q_prime)
    }

    /// Largest window whose predicted factor does not exceed `target`.
    pub fn window_for(&self, target: f64, lipschitz: f64, upper: f64) -> f64 {
        if self.predicted_factor(upper, lipschitz) <= target {
            return upper;
        }
        let (mut lo, mut hi) = (0.0, upper);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.predicted_factor(mid, lipschitz) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Measures `M_p` and `ω_p` on probe fields.
///
/// `ω_p` is the growth rate of `G` in `𝒳_p` over `[0, t_max]` (zero when it
/// decays) and `M_p` the smallest constant for which the bound holds at every
/// sampled time and probe.
pub fn fit_semigroup_bounds(
    linear: &dyn Evolution,
    probes: &[StateField],
    r: f64,
    p: f64,
    q_prime: f64,
    t_max: f64,
) -> Result<SemigroupBounds> {
    if probes.is_empty() {
        return Err(Error::DegenerateFit("no probe fields".into()));
    }
    if !(t_max > 0.0) || !(0.0..1.0).contains(&q_prime) {
        return Err(invalid("need t_max > 0 and 0 <= q' < 1"));
    }
    let times: Vec<f64> = (0..8).map(|k| t_max * 2f64.powi(k - 7)).collect();
    let mut samples = Vec::new();
    let mut growth: f64 = 0.0;
    for f in probes {
        let base = weighted_norm(f, p)?;
        if base == 0.0 {
            continue;
        }
        let mut u = f.clone();
        let mut t_prev = 0.0;
        for &t in &times {
            u = linear.evolve(t - t_prev, &u)?;
            t_prev = t;
            samples.push((t, weighted_norm(&u, r)? / base));
        }
        growth = growth.max((weighted_norm(&u, p)? / base).ln() / t_max);
    }
    if samples.is_empty() {
        return Err(Error::DegenerateFit("all probes vanish".into()));
    }
    let omega_p = growth.max(0.0);
    let m_p = samples
        .iter()
        .map(|&(t, ratio)| ratio * t.powf(q_prime) * (-omega_p * t).exp())
        .fold(0.0, f64::max);
    Ok(SemigroupBounds {
        m_p,
        omega_p,
        q_prime,
    })
}

/// Settings of the Picard iteration on one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MildSolveConfig {
    /// Window length `T`; `dt` must divide it.
    pub window: f64,
    pub dt: f64,
    /// Stop when `sup_t ‖u^{k+1}(t) - u^k(t)‖_r` is at most this.
    pub picard_tol: f64,
    pub max_iters: usize,
    /// Window halvings allowed when an iterate leaves the ball.
    pub max_retries: usize,
    /// Fitted semigroup bounds for the predicted contraction factor.
    #[serde(default)]
    pub bounds: Option<SemigroupBounds>,
    /// Shrink windows so that the predicted factor stays below `target_factor`.
    #[serde(default)]
    pub auto_window: bool,
    pub target_factor: f64,
    /// Smallest window accepted by `continue_maximal` before it suspects blow-up.
    pub window_floor: f64,
    /// Norm growth across consecutive windows that, with a window at the floor, flags blow-up.
    pub blowup_growth: f64,
    /// Keep every n-th time step as a snapshot.
    pub snapshot_stride: usize,
    /// Gauss nodes per step in the graded Duhamel quadrature.
    pub sigma_nodes: usize,
}

impl Default for MildSolveConfig {
    fn default() -> Self {
        Self {
            window: 0.1,
            dt: 0.005,
            picard_tol: 1e-10,
            max_iters: 200,
            max_retries: 6,
            bounds: None,
            auto_window: false,
            target_factor: 0.5,
            window_floor: 1e-6,
            blowup_growth: 10.0,
            snapshot_stride: 1,
            sigma_nodes: 3,
        }
    }
}

impl MildSolveConfig {
    fn steps(&self, window: f64) -> Result<(usize, f64)> {
        if !(window > 0.0 && self.dt > 0.0) {
            return Err(invalid("window and dt must be positive"));
        }
        let n = (window / self.dt).round().max(1.0);
        if (n * self.dt - window).abs() > 1e-9 * window {
            return Err(invalid(format!("dt = {} does not divide the window {window}", self.dt)));
        }
        Ok((n as usize, window / n))
    }
}

/// Why a trajectory stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Termination {
    Horizon,
    /// Heuristic: window at the floor while the norm grew past the threshold.
    SuspectedBlowup { note: String },
    Error { message: String },
}

/// Mass bookkeeping at one time.
///
/// `initial = interior + overflow + leakage + absorbed - clipped` up to
/// discretisation error. In `split_solve` every term is measured; in
/// `mild_solve` the linear part is not split into its own factors and
/// `leakage` is the remainder after overflow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub initial: f64,
    pub interior: f64,
    pub overflow: f64,
    pub leakage: f64,
    pub absorbed: f64,
    pub clipped: f64,
}

impl Ledger {
    pub fn residual(&self) -> f64 {
        self.initial - self.interior - self.overflow - self.leakage - self.absorbed + self.clipped
    }

    pub fn reconciles(&self, rel_tol: f64) -> bool {
        self.residual().abs() <= rel_tol * self.initial.abs().max(f64::MIN_POSITIVE)
    }
}

/// One row of the moment time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    pub m0: f64,
    pub m1: f64,
    pub mr: f64,
    pub norm_r: f64,
    pub overflow: f64,
    pub leakage: f64,
}

/// Time series of moments `M₀`, `M₁`, `M_r = ∫∫ m^r u` and the `𝒳_r` norm.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub r: f64,
    pub rows: Vec<MomentRow>,
}

impl MomentReport {
    pub fn new(r: f64) -> Self {
        Self { r, rows: Vec::new() }
    }

    pub fn record(&mut self, t: f64, u: &StateField, ledger: &Ledger) -> Result<()> {
        self.rows.push(MomentRow {
            t,
            m0: raw_moment(u, 0.0),
            m1: raw_moment(u, 1.0),
            mr: raw_moment(u, self.r),
            norm_r: weighted_norm(u, self.r)?,
            overflow: ledger.overflow,
            leakage: ledger.leakage,
        });
        Ok(())
    }

    /// Log-log slope of `‖u(t)‖_r` over the rows with `t` in `[t_lo, t_hi]`.
    pub fn norm_slope(&self, t_lo: f64, t_hi: f64) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter(|r| r.t >= t_lo && r.t <= t_hi && r.t > 0.0 && r.norm_r > 0.0)
            .map(|r| (r.t.ln(), r.norm_r.ln()))
            .unzip();
        linear_fit(&xs, &ys).map(|f| f.0)
    }
}

/// Statistics of one Picard window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub t_start: f64,
    pub length: f64,
    pub dt: f64,
    pub radius: f64,
    pub iterations: usize,
    /// Largest ratio of successive Picard differences.
    pub measured_factor: f64,
    pub predicted_factor: Option<f64>,
    pub retries: usize,
    /// Largest decrease of an iterate between successive Picard sweeps,
    /// relative to the state's maximum; zero when the iterates are monotone.
    pub monotonicity_defect: f64,
    pub final_difference: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub r: f64,
    /// Accepted snapshots, strictly increasing in time.
    pub snapshots: Vec<(f64, StateField)>,
    pub report: MomentReport,
    /// One ledger per report row.
    pub ledgers: Vec<Ledger>,
    pub windows: Vec<WindowRecord>,
    pub termination: Termination,
}

impl Trajectory {
    fn start(u0: &StateField, r: f64) -> Result<Self> {
        let ledger = Ledger {
            initial: total_mass(u0),
            interior: total_mass(u0),
            ..Ledger::default()
        };
        let mut report = MomentReport::new(r);
        report.record(0.0, u0, &ledger)?;
        Ok(Self {
            r,
            snapshots: vec![(0.0, u0.clone())],
            report,
            ledgers: vec![ledger],
            windows: Vec::new(),
            termination: Termination::Horizon,
        })
    }

    pub fn final_state(&self) -> &StateField {
        &self.snapshots.last().expect("trajectory has a start").1
    }

    pub fn final_time(&self) -> f64 {
        self.report.rows.last().map_or(0.0, |r| r.t)
    }

    pub fn times(&self) -> Vec<f64> {
        self.report.rows.iter().map(|r| r.t).collect()
    }

    /// Largest measured Picard factor over all windows.
    pub fn measured_factor(&self) -> f64 {
        self.windows.iter().map(|w| w.measured_factor).fold(0.0, f64::max)
    }
}

/// Output of a single converged window.
struct WindowSolution {
    states: Vec<StateField>,
    /// Cumulative overflow mass at each step, starting at zero.
    overflow: Vec<f64>,
    record: WindowRecord,
}

fn gauss_nodes(n: usize) -> Result<(&'static [f64], &'static [f64])> {
    const X2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];
    const W2: [f64; 2] = [0.5, 0.5];
    const X3: [f64; 3] = [0.112_701_665_379_258_3, 0.5, 0.887_298_334_620_741_7];
    const W3: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
    const X4: [f64; 4] = [
        0.069_431_844_202_973_7,
        0.330_009_478_207_571_9,
        0.669_990_521_792_428_1,
        0.930_568_155_797_026_3,
    ];
    const W4: [f64; 4] = [
        0.173_927_422_568_726_9,
        0.326_072_577_431_273_1,
        0.326_072_577_431_273_1,
        0.173_927_422_568_726_9,
    ];
    match n {
        2 => Ok((&X2, &W2)),
        3 => Ok((&X3, &W3)),
        4 => Ok((&X4, &W4)),
        _ => Err(invalid(format!("sigma_nodes must be 2, 3 or 4, got {n}"))),
    }
}

/// `∫₀^h G(σ) F(t_k - σ) dσ` with `F` linear between `f_prev` and `f_now`.
///
/// The substitution `σ = h s²` clusters nodes at `σ = 0`, where `G(σ)` may
/// carry the integrable `σ^{-q'}` singularity, and Gauss quadrature in `s`
/// is exact for integrands quadratic in `σ`.
fn duhamel_step(
    linear: &LinearModel,
    h: f64,
    f_prev: &StateField,
    f_now: &StateField,
    nodes: (&[f64], &[f64]),
) -> Result<StateField> {
    let mut acc = f_now.zeros_like();
    for (&s, &w) in nodes.0.iter().zip(nodes.1) {
        let sigma = h * s * s;
        let theta = sigma / h;
        let f = f_now.scaled(1.0 - theta).axpy(theta, f_prev)?;
        let g = linear.evolve(sigma, &f)?;
        acc.add_assign_scaled(w * 2.0 * s * h, &g)?;
    }
    Ok(acc)
}

fn picard_window(
    u0: &StateField,
    cfg: &MildSolveConfig,
    window: f64,
    linear: &LinearModel,
    tc: &TruncatedCoagulation,
) -> Result<WindowSolution> {
    let (n, h) = cfg.steps(window)?;
    let nodes = gauss_nodes(cfg.sigma_nodes)?;
    let r = tc.r;

    // Zeroth iterate: u⁰(t_k) = G(t_k) u0.
    let mut iterate = Vec::with_capacity(n + 1);
    iterate.push(u0.clone());
    for k in 1..=n {
        let next = linear.evolve(h, &iterate[k - 1])?;
        iterate.push(next);
    }

    let mut diffs: Vec<f64> = Vec::new();
    let mut mono: f64 = 0.0;
    let mut overflow = vec![0.0; n + 1];
    for it in 1..=cfg.max_iters {
        let outs = iterate
            .par_iter()
            .map(|u| tc.apply(u))
            .collect::<Result<Vec<_>>>()?;
        let rates: Vec<f64> = outs.iter().map(|o| o.overflow_totals().1).collect();
        let forcing: Vec<StateField> = outs.into_iter().map(|o| o.value).collect();
        let jumps = (1..=n)
            .into_par_iter()
            .map(|k| duhamel_step(linear, h, &forcing[k - 1], &forcing[k], nodes))
            .collect::<Result<Vec<_>>>()?;

        let mut next = Vec::with_capacity(n + 1);
        next.push(u0.clone());
        for k in 1..=n {
            let mut v = linear.evolve(h, &next[k - 1])?;
            v.add_assign_scaled(1.0, &jumps[k - 1])?;
            next.push(v);
        }

        let mut d: f64 = 0.0;
        for (a, b) in next.iter().zip(&iterate) {
            let delta = a.sub(b)?;
            d = d.max(weighted_norm(&delta, r)?);
            let scale = b.max_abs().max(f64::MIN_POSITIVE);
            mono = mono.max((-delta.min_value()).max(0.0) / scale);
        }
        for k in 1..=n {
            overflow[k] = overflow[k - 1] + 0.5 * h * (rates[k - 1] + rates[k]);
        }
        for u in &next {
            let norm = weighted_norm(u, r)?;
            if norm > tc.b * (1.0 + 1e-12) {
                return Err(Error::OutsideBall {
                    norm,
                    radius: tc.b,
                });
            }
        }
        diffs.push(d);
        iterate = next;
        if d <= cfg.picard_tol {
            let measured = diffs
                .windows(2)
                .filter(|w| w[0] > 0.0)
                .map(|w| w[1] / w[0])
                .fold(0.0, f64::max);
            let predicted = cfg
                .bounds
                .map(|b| b.predicted_factor(window, tc.constants().lipschitz));
            return Ok(WindowSolution {
                states: iterate,
                overflow,
                record: WindowRecord {
                    t_start: 0.0,
                    length: window,
                    dt: h,
                    radius: tc.b,
                    iterations: it,
                    measured_factor: measured,
                    predicted_factor: predicted,
                    retries: 0,
                    monotonicity_defect: mono,
                    final_difference: d,
                },
            });
        }
    }
    let measured = diffs
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    Err(Error::NonConvergence {
        iterations: cfg.max_iters,
        factor: measured,
    })
}

fn check_initial(u0: &StateField, tc: &TruncatedCoagulation) -> Result<()> {
    if !u0.is_nonnegative() {
        return Err(Error::Precondition("initial datum must be nonnegative".into()));
    }
    let norm = weighted_norm(u0, tc.r)?;
    if norm > 0.5 * tc.b * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "‖u0‖_r = {norm:.6e} exceeds b/2 = {:.6e}",
            0.5 * tc.b
        )));
    }
    Ok(())
}

/// Solves one window with retries, appending the result to `traj`.
fn advance_window(
    traj: &mut Trajectory,
    cfg: &MildSolveConfig,
    window: f64,
    linear: &LinearModel,
    tc: &TruncatedCoagulation,
) -> Result<f64> {
    let u0 = traj.final_state().clone();
    let t0 = traj.final_time();
    let base = *traj.ledgers.last().expect("ledger");
    let mut w = window;
    let mut retries = 0;
    let mut cfg_w = cfg.clone();
    let sol = loop {
        match picard_window(&u0, &cfg_w, w, linear, tc) {
            Ok(s) => break s,
            Err(Error::OutsideBall { .. }) if retries < cfg.max_retries => {
                retries += 1;
                w *= 0.5;
                cfg_w.dt = w / (w / cfg.dt).ceil().max(1.0);
            }
            Err(e) => return Err(e),
        }
    };
    let mut record = sol.record;
    record.t_start = t0;
    record.retries = retries;
    let h = record.dt;
    for (k, u) in sol.states.iter().enumerate().skip(1) {
        let t = t0 + k as f64 * h;
        let interior = total_mass(u);
        let overflow = base.overflow + sol.overflow[k];
        let ledger = Ledger {
            interior,
            overflow,
            leakage: base.initial - interior - overflow - base.absorbed + base.clipped,
            ..base
        };
        traj.report.record(t, u, &ledger)?;
        traj.ledgers.push(ledger);
        if k % cfg.snapshot_stride.max(1) == 0 || k == sol.states.len() - 1 {
            traj.snapshots.push((t, u.clone()));
        }
    }
    traj.windows.push(record);
    Ok(w)
}

/// Mild solution on `[0, cfg.window]` by Picard iteration of
/// `u(t) = G_q(t) u0 + ∫₀ᵗ G_q(t - τ) C_q u(τ) dτ`.
///
/// `linear` is the unshifted linear model; the shift `a_q (1 + m^q)` of `tc`
/// is added to it here so that the pair is always consistent. When an
/// iterate leaves the ball the window is halved (up to `max_retries` times);
/// the returned trajectory then ends before `cfg.window`.
pub fn mild_solve(
    u0: &StateField,
    cfg: &MildSolveConfig,
    linear: &LinearModel,
    tc: &TruncatedCoagulation,
) -> Result<Trajectory> {
    check_initial(u0, tc)?;
    let shifted = linear.with_shift(u0.mass_grid().centers(), |m| tc.shift_rate(m));
    let mut traj = Trajectory::start(u0, tc.r)?;
    advance_window(&mut traj, cfg, cfg.window, &shifted, tc)?;
    Ok(traj)
}

/// Chains `mild_solve` windows up to `horizon`.
///
/// Each window re-derives the ball radius `b = 2 ‖u‖_r` from the current
/// state and, with `auto_window`, the window length from the predicted
/// contraction factor. A window forced below `window_floor` while the norm
/// has grown by more than `blowup_growth` since the previous window ends the
/// run as a suspected blow-up; this is a heuristic, not a proof.
pub fn continue_maximal(
    u0: &StateField,
    cfg: &MildSolveConfig,
    linear: &LinearModel,
    coag: &CoagulationOperator,
    r: f64,
    horizon: f64,
) -> Result<Trajectory> {
    if !(horizon > 0.0) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    let mut traj = Trajectory::start(u0, r)?;
    if !u0.is_nonnegative() {
        return Err(Error::Precondition("initial datum must be nonnegative".into()));
    }
    let mut prev_norm = weighted_norm(u0, r)?;
    let eps = 1e-12 * horizon;
    while traj.final_time() < horizon - eps {
        let t = traj.final_time();
        let u = traj.final_state().clone();
        let norm = weighted_norm(&u, r)?;
        if norm == 0.0 {
            // The zero state is a fixed point of every part of the model.
            let ledger = *traj.ledgers.last().expect("ledger");
            traj.report.record(horizon, &u, &ledger)?;
            traj.ledgers.push(ledger);
            traj.snapshots.push((horizon, u));
            break;
        }
        let tc = TruncatedCoagulation::new(coag.clone(), 2.0 * norm, r)?;
        let remaining = horizon - t;
        let mut window = cfg.window.min(remaining);
        if cfg.auto_window {
            if let Some(b) = cfg.bounds {
                let auto = b.window_for(cfg.target_factor, tc.constants().lipschitz, window);
                if auto < cfg.window_floor {
                    if norm > cfg.blowup_growth * prev_norm {
                        traj.termination = Termination::SuspectedBlowup {
                            note: format!(
                                "window {auto:.3e} below floor {:.3e} at t = {t:.6e}; norm grew {:.1}x",
                                cfg.window_floor,
                                norm / prev_norm
                            ),
                        };
                        return Ok(traj);
                    }
                    window = cfg.window_floor.min(remaining);
                } else {
                    window = auto;
                }
            }
        }
        let steps = (window / cfg.dt).ceil().max(1.0);
        let mut wcfg = cfg.clone();
        wcfg.dt = window / steps;
        let shifted = linear.with_shift(u.mass_grid().centers(), |m| tc.shift_rate(m));
        if let Err(e) = advance_window(&mut traj, &wcfg, window, &shifted, &tc) {
            traj.termination = Termination::Error { message: e.to_string() };
            return Ok(traj);
        }
        prev_norm = norm;
    }
    traj.termination = Termination::Horizon;
    Ok(traj)
}

/// The factors combined by `split_solve`; `None` switches a factor off.
#[derive(Debug, Clone, Default)]
pub struct SplitParts {
    pub transport: Option<SemigroupAction>,
    pub fragmentation: Option<FragmentationOperator>,
    pub coagulation: Option<CoagulationOperator>,
}

/// Settings of `split_solve`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub r: f64,
    /// Negative values below `-clip_tol · max|u|` reject the step; smaller
    /// ones are set to zero and tallied.
    pub clip_tol: f64,
    pub snapshot_stride: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            r: 1.0,
            clip_tol: 1e-8,
            snapshot_stride: 1,
        }
    }
}

/// Heun step for `du/dt = C̄(u, u)`; returns the new state and the overflow mass.
fn coag_heun(op: &CoagulationOperator, u: &StateField, h: f64) -> Result<(StateField, f64)> {
    let a = op.apply(u, u)?;
    let u1 = u.axpy(h, &a.value)?;
    let b = op.apply(&u1, &u1)?;
    let mut out = u.axpy(0.5 * h, &a.value)?;
    out.add_assign_scaled(0.5 * h, &b.value)?;
    let over = 0.5 * h * (a.overflow_totals().1 + b.overflow_totals().1);
    Ok((out, over))
}

/// Sets small negative values to zero; returns the clipped mass.
fn clip(u: &mut StateField, tol: f64) -> Result<f64> {
    let scale = u.max_abs();
    let min = u.min_value();
    if min >= 0.0 {
        return Ok(0.0);
    }
    if min < -tol * scale {
        return Err(Error::StepRejected(format!(
            "negative value {min:.3e} exceeds the clipping tolerance ({:.3e})",
            tol * scale
        )));
    }
    let mut neg = u.zeros_like();
    for (n, v) in neg.values_mut().iter_mut().zip(u.values_mut()) {
        if *v < 0.0 {
            *n = -*v;
            *v = 0.0;
        }
    }
    Ok(total_mass(&neg))
}

/// Strang splitting: half transport, half fragmentation, full coagulation
/// (Heun on `C̄`), half fragmentation, half transport. With a single active
/// factor each step is that factor's own integrator over the full step.
///
/// Mass removed during transport half steps is booked as leakage, mass lost
/// in fragmentation as absorbed, and coagulation products beyond `m_max` as
/// overflow.
pub fn split_solve(
    u0: &StateField,
    t_end: f64,
    dt: f64,
    parts: &SplitParts,
    opts: &SplitOptions,
) -> Result<Trajectory> {
    if !u0.is_nonnegative() {
        return Err(Error::Precondition("initial datum must be nonnegative".into()));
    }
    if !(t_end > 0.0 && dt > 0.0) {
        return Err(invalid("t_end and dt must be positive"));
    }
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let transport = parts.transport.as_ref().filter(|t| !t.is_identity());
    let frag = parts.fragmentation.as_ref();
    let coag = parts.coagulation.as_ref();
    let active = transport.is_some() as usize + frag.is_some() as usize + coag.is_some() as usize;

    let mut traj = Trajectory::start(u0, opts.r)?;
    let mut ledger = traj.ledgers[0];
    let mut u = u0.clone();

    let run_transport = |u: &StateField, tau: f64, ledger: &mut Ledger| -> Result<StateField> {
        let before = total_mass(u);
        let out = transport.expect("transport active").apply(tau, u)?;
        ledger.leakage += before - total_mass(&out);
        Ok(out)
    };
    let run_frag = |u: &StateField, tau: f64, ledger: &mut Ledger| -> Result<StateField> {
        let before = total_mass(u);
        let out = frag.expect("fragmentation active").fragment_step(u, tau)?;
        ledger.absorbed += before - total_mass(&out);
        Ok(out)
    };

    for k in 1..=steps {
        if active <= 1 {
            if transport.is_some() {
                u = run_transport(&u, h, &mut ledger)?;
            } else if frag.is_some() {
                u = run_frag(&u, h, &mut ledger)?;
            } else if let Some(op) = coag {
                let (next, over) = coag_heun(op, &u, h)?;
                u = next;
                ledger.overflow += over;
            }
        } else {
            if transport.is_some() {
                u = run_transport(&u, 0.5 * h, &mut ledger)?;
            }
            if frag.is_some() {
                u = run_frag(&u, 0.5 * h, &mut ledger)?;
            }
            if let Some(op) = coag {
                let (next, over) = coag_heun(op, &u, h)?;
                u = next;
                ledger.overflow += over;
            }
            if frag.is_some() {
                u = run_frag(&u, 0.5 * h, &mut ledger)?;
            }
            if transport.is_some() {
                u = run_transport(&u, 0.5 * h, &mut ledger)?;
            }
        }
        ledger.clipped += clip(&mut u, opts.clip_tol)?;
        ledger.interior = total_mass(&u);
        let t = k as f64 * h;
        traj.report.record(t, &u, &ledger)?;
        traj.ledgers.push(ledger);
        if k % opts.snapshot_stride.max(1) == 0 || k == steps {
            traj.snapshots.push((t, u.clone()));
        }
    }
    Ok(traj)
}
