//! Spatial transport semigroups acting slice by slice in mass: advection along
//! characteristics with absorption, diffusion with zero-flux closure, pure
//! absorption, and their compositions. Also the resolvent by Laplace-transform
//! quadrature and the Grönwall estimate for the flow.
//!
//! The flow follows the convention `φ(x, t, m) = y(0)` where `y' = ω(y, m)`,
//! `y(t) = x`: the point that reaches `x` after time `t`. For a constant field
//! `ω ≡ c` this is `x - c t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{Certificate, CertificateKind};
use crate::error::{invalid, Error, Result};
use crate::grid::{Boundary, SpatialGrid, StateField};
use crate::kernels::{AbsorptionRate, SpatialModulation};

/// Velocity built-ins. Points are `[x₁, x₂]`; one-dimensional grids ignore `x₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VelocityField {
    Zero,
    Constant { c: [f64; 2] },
    /// `omega · (-x₂, x₁)`.
    Rotation { omega: f64 },
    /// `(rate · x₂, 0)`.
    Shear { rate: f64 },
    /// `rate · x`; not divergence free.
    Linear { rate: f64 },
    /// `c · (1 + slope · m)`.
    MassDependent { c: [f64; 2], slope: f64 },
}

impl VelocityField {
    pub fn eval(&self, x: [f64; 2], m: f64) -> [f64; 2] {
        match self {
            VelocityField::Zero => [0.0, 0.0],
            VelocityField::Constant { c } => *c,
            VelocityField::Rotation { omega } => [-omega * x[1], omega * x[0]],
            VelocityField::Shear { rate } => [rate * x[1], 0.0],
            VelocityField::Linear { rate } => [rate * x[0], rate * x[1]],
            VelocityField::MassDependent { c, slope } => {
                let f = 1.0 + slope * m;
                [c[0] * f, c[1] * f]
            }
        }
    }

    /// Lipschitz constant in `x`.
    pub fn kappa(&self) -> f64 {
        match self {
            VelocityField::Zero | VelocityField::Constant { .. } | VelocityField::MassDependent { .. } => 0.0,
            VelocityField::Rotation { omega } => omega.abs(),
            VelocityField::Shear { rate } | VelocityField::Linear { rate } => rate.abs(),
        }
    }

    pub fn divergence_free(&self) -> bool {
        !matches!(self, VelocityField::Linear { rate } if *rate != 0.0)
    }

    pub fn m_independent(&self) -> bool {
        !matches!(self, VelocityField::MassDependent { slope, .. } if *slope != 0.0)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            VelocityField::Zero => true,
            VelocityField::Constant { c } => c[0] == 0.0 && c[1] == 0.0,
            VelocityField::Rotation { omega } => *omega == 0.0,
            VelocityField::Shear { rate } | VelocityField::Linear { rate } => *rate == 0.0,
            VelocityField::MassDependent { c, .. } => c[0] == 0.0 && c[1] == 0.0,
        }
    }

    /// Modulus of continuity in mass: `sup_x ‖ω(x, m₁) - ω(x, m₂)‖` for `|m₁ - m₂| = dm`.
    pub fn mass_modulus(&self, dm: f64) -> f64 {
        match self {
            VelocityField::MassDependent { c, slope } => {
                (c[0].hypot(c[1])) * slope.abs() * dm.abs()
            }
            _ => 0.0,
        }
    }

    /// Largest central-difference divergence over the sampled points.
    pub fn sampled_divergence(&self, points: &[[f64; 2]], m: f64) -> f64 {
        let h = 1e-5;
        points
            .iter()
            .map(|&x| {
                let dx = (self.eval([x[0] + h, x[1]], m)[0] - self.eval([x[0] - h, x[1]], m)[0]) / (2.0 * h);
                let dy = (self.eval([x[0], x[1] + h], m)[1] - self.eval([x[0], x[1] - h], m)[1]) / (2.0 * h);
                (dx + dy).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn rk4_path(x: [f64; 2], t: f64, m: f64, field: &VelocityField, n: usize) -> Vec<[f64; 2]> {
    // Integrates backwards from s = t (y = x) to s = 0 in n steps; entry k is
    // the position at s = t - k t / n, i.e. φ(x, k t / n, m).
    let h = -t / n as f64;
    let f = |y: [f64; 2]| field.eval(y, m);
    let mut y = x;
    let mut path = Vec::with_capacity(n + 1);
    path.push(y);
    for _ in 0..n {
        let k1 = f(y);
        let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
        let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
        let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
        for a in 0..2 {
            y[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        path.push(y);
    }
    path
}

const MAX_FLOW_STEPS: usize = 1 << 20;

/// Characteristic path `φ(x, s, m)` at `n + 1` uniformly spaced `s ∈ [0, t]`,
/// with `n` chosen by step doubling until the foot moves by at most
/// `1e-10 (1 + ‖x‖)`.
pub fn flow_path(x: [f64; 2], t: f64, m: f64, field: &VelocityField) -> Result<Vec<[f64; 2]>> {
    if !t.is_finite() {
        return Err(Error::Integration(format!("non-finite time {t}")));
    }
    if t == 0.0 || field.is_zero() {
        return Ok(vec![x, x]);
    }
    if let VelocityField::Constant { .. } | VelocityField::MassDependent { .. } = field {
        // RK4 is exact for constant right-hand sides.
        return Ok(rk4_path(x, t, m, field, 1));
    }
    let tol = 1e-10 * (1.0 + norm2(x));
    let mut n = 8;
    let mut coarse = rk4_path(x, t, m, field, n);
    loop {
        let fine = rk4_path(x, t, m, field, 2 * n);
        let (a, b) = (coarse[n], fine[2 * n]);
        if !(b[0].is_finite() && b[1].is_finite()) {
            return Err(Error::Integration("non-finite velocity along characteristic".into()));
        }
        if norm2([a[0] - b[0], a[1] - b[1]]) <= tol {
            return Ok(fine);
        }
        n *= 2;
        if n > MAX_FLOW_STEPS {
            return Err(Error::Integration(format!(
                "flow step controller exceeded {MAX_FLOW_STEPS} steps"
            )));
        }
        coarse = fine;
    }
}

/// `φ(x, t, m)`.
pub fn flow(x: [f64; 2], t: f64, m: f64, field: &VelocityField) -> Result<[f64; 2]> {
    Ok(*flow_path(x, t, m, field)?.last().expect("path is non-empty"))
}

/// Mass dependence of a diffusivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiffusionLaw {
    Constant { d: f64 },
    /// `d₀ (1 + m)^{-p}`.
    PowerLaw { d0: f64, p: f64 },
    /// Piecewise linear in `m`, held constant outside.
    Table { m: Vec<f64>, values: Vec<f64> },
}

impl DiffusionLaw {
    pub fn eval(&self, m: f64) -> f64 {
        match self {
            DiffusionLaw::Constant { d } => *d,
            DiffusionLaw::PowerLaw { d0, p } => d0 * (1.0 + m).powf(-p),
            DiffusionLaw::Table { m: ms, values } => {
                if m <= ms[0] {
                    return values[0];
                }
                let n = ms.len();
                if m >= ms[n - 1] {
                    return values[n - 1];
                }
                let k = ms.partition_point(|&v| v <= m) - 1;
                let t = (m - ms[k]) / (ms[k + 1] - ms[k]);
                values[k] + t * (values[k + 1] - values[k])
            }
        }
    }
}

/// Diffusivity `d(x, m) = law(m) · modulation(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionCoefficient {
    pub law: DiffusionLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<SpatialModulation>,
}

impl DiffusionCoefficient {
    pub fn new(law: DiffusionLaw, modulation: Option<SpatialModulation>) -> Result<Self> {
        let ok = match &law {
            DiffusionLaw::Constant { d } => *d > 0.0,
            DiffusionLaw::PowerLaw { d0, p } => *d0 > 0.0 && p.is_finite(),
            DiffusionLaw::Table { m, values } => {
                m.len() >= 2
                    && m.len() == values.len()
                    && m.windows(2).all(|w| w[1] > w[0])
                    && values.iter().all(|&v| v > 0.0)
            }
        };
        if !ok {
            return Err(invalid("diffusivity must be positive"));
        }
        if let Some(md) = &modulation {
            if !(md.amplitude.abs() < 1.0) {
                return Err(invalid("modulation amplitude must satisfy |ε| < 1"));
            }
        }
        Ok(Self { law, modulation })
    }

    pub fn constant(d: f64) -> Result<Self> {
        Self::new(DiffusionLaw::Constant { d }, None)
    }

    pub fn eval(&self, x: [f64; 2], m: f64) -> f64 {
        self.law.eval(m) * self.modulation.as_ref().map_or(1.0, |md| md.factor(x))
    }

    pub fn d_min(&self, m: f64) -> f64 {
        self.law.eval(m) * self.modulation.as_ref().map_or(1.0, |md| 1.0 - md.amplitude.abs())
    }

    pub fn d_max(&self, m: f64) -> f64 {
        self.law.eval(m) * self.modulation.as_ref().map_or(1.0, |md| 1.0 + md.amplitude.abs())
    }

    pub fn x_independent(&self) -> bool {
        self.modulation.map_or(true, |md| md.amplitude == 0.0)
    }

    pub fn m_independent(&self) -> bool {
        matches!(self.law, DiffusionLaw::Constant { .. })
    }
}

/// Options of the semi-Lagrangian advection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvectionOptions {
    /// Reject states with mass within `margin_cells` of the boundary of a
    /// whole-space box, instead of letting it flow out silently.
    pub strict_support: bool,
    pub margin_cells: usize,
}

impl Default for AdvectionOptions {
    fn default() -> Self {
        Self {
            strict_support: false,
            margin_cells: 5,
        }
    }
}

/// Diagnostics of one semi-Lagrangian evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdvectionStats {
    /// Characteristic feet that fell outside the box (counted per node and mass group).
    pub outflow_feet: usize,
    /// Total amount removed or added by clipping the interpolant to the stencil range,
    /// in the trapezoid-weighted `∫∫ |Δu| dm dx` sense.
    pub clipped: f64,
}

#[derive(Clone, Copy)]
struct AxisStencil {
    idx: [usize; 4],
    w: [f64; 4],
    len: usize,
}

fn axis_stencil(grid: &SpatialGrid, axis: usize, coord: f64) -> Option<AxisStencil> {
    let n = grid.nodes(axis);
    if axis >= grid.dim() || n == 1 {
        return Some(AxisStencil {
            idx: [0; 4],
            w: [1.0, 0.0, 0.0, 0.0],
            len: 1,
        });
    }
    let h = grid.spacing(axis);
    let p = (coord - grid.lower(axis)) / h;
    let last = (n - 1) as f64;
    let eps = 1e-9;
    if p < -eps || p > last + eps {
        return None;
    }
    let p = p.clamp(0.0, last);
    if n < 4 {
        let i = (p.floor() as usize).min(n - 2);
        let s = p - i as f64;
        return Some(AxisStencil {
            idx: [i, i + 1, 0, 0],
            w: [1.0 - s, s, 0.0, 0.0],
            len: 2,
        });
    }
    let i = (p.floor() as usize).clamp(1, n - 3);
    let s = p - i as f64;
    let w = [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ];
    Some(AxisStencil {
        idx: [i - 1, i, i + 1, i + 2],
        w,
        len: 4,
    })
}

struct NodeStencil {
    x: AxisStencil,
    y: AxisStencil,
    /// `∫₀ᵗ modulation(φ(x, s)) ds` of the absorption rate.
    exposure: f64,
}

fn trapezoid_uniform(vals: &[f64], t: f64) -> f64 {
    let n = vals.len() - 1;
    if n == 0 {
        return 0.0;
    }
    let h = t / n as f64;
    h * (0.5 * (vals[0] + vals[n]) + vals[1..n].iter().sum::<f64>())
}

fn build_stencils(
    grid: &SpatialGrid,
    t: f64,
    m: f64,
    field: &VelocityField,
    rate: Option<&AbsorptionRate>,
) -> Result<Vec<Option<NodeStencil>>> {
    (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let x = grid.point(j);
            let path = flow_path(x, t, m, field)?;
            let foot = *path.last().expect("non-empty");
            let exposure = match rate.and_then(|r| r.modulation) {
                Some(md) if md.amplitude != 0.0 => {
                    let g: Vec<f64> = path.iter().map(|&y| md.factor(y)).collect();
                    trapezoid_uniform(&g, t)
                }
                _ => t,
            };
            let sx = axis_stencil(grid, 0, foot[0]);
            let sy = axis_stencil(grid, 1, foot[1]);
            Ok(match (sx, sy) {
                (Some(x), Some(y)) => Some(NodeStencil { x, y, exposure }),
                _ => None,
            })
        })
        .collect()
}

fn check_support(u: &StateField, margin: usize) -> Result<()> {
    let grid = u.space_grid();
    if grid.boundary() != Boundary::WholeSpaceTruncated {
        return Ok(());
    }
    let peak = u.max_abs();
    if peak == 0.0 {
        return Ok(());
    }
    let n_m = u.n_mass();
    for j in 0..grid.len() {
        let (ix, iy) = grid.unravel(j);
        let near = |i: usize, axis: usize| {
            axis < grid.dim() && (i < margin || i + margin >= grid.nodes(axis))
        };
        if near(ix, 0) || near(iy, 1) {
            let v = u.values()[j * n_m..(j + 1) * n_m].iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if v > 1e-10 * peak {
                let x = grid.point(j);
                return Err(Error::DomainTooSmall(format!(
                    "density {v:.3e} at ({:.4}, {:.4}) lies within {margin} cells of the boundary",
                    x[0], x[1]
                )));
            }
        }
    }
    Ok(())
}

/// `e^{-∫₀ᵗ a(φ(x,s,m),m) ds} u(φ(x,t,m), m)` by semi-Lagrangian evaluation:
/// exact characteristics, tensor cubic Lagrange interpolation at the foot
/// clipped to the stencil's value range, and a trapezoid rule for the
/// absorption exponent along the characteristic.
pub fn advect(
    t: f64,
    u: &StateField,
    field: &VelocityField,
    rate: Option<&AbsorptionRate>,
    opts: &AdvectionOptions,
) -> Result<(StateField, AdvectionStats)> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be nonnegative, got {t}")));
    }
    if !u.is_finite() {
        return Err(invalid("state contains non-finite values"));
    }
    if opts.strict_support {
        check_support(u, opts.margin_cells)?;
    }
    let grid = u.space_grid().clone();
    let mass = u.mass_grid().clone();
    let n_m = mass.len();
    let n_x = grid.len();
    let laws: Vec<f64> = mass
        .centers()
        .iter()
        .map(|&m| rate.map_or(0.0, |r| r.law.eval(m)))
        .collect();

    // Groups of mass cells sharing one set of characteristics.
    let groups: Vec<(f64, Vec<usize>)> = if field.m_independent() {
        vec![(mass.centers()[0], (0..n_m).collect())]
    } else {
        mass.centers().iter().enumerate().map(|(i, &m)| (m, vec![i])).collect()
    };

    let src = u.values();
    let mut out = vec![0.0; n_m * n_x];
    let mut stats = AdvectionStats::default();
    let weights = grid.weights();
    let widths = mass.widths();
    for (m, cells) in &groups {
        let stencils = build_stencils(&grid, t, *m, field, rate)?;
        stats.outflow_feet += stencils.iter().filter(|s| s.is_none()).count();
        let ny = grid.nodes(1);
        let clipped: f64 = out
            .par_chunks_mut(n_m)
            .zip(stencils.par_iter())
            .enumerate()
            .map(|(j, (row, st))| {
                let Some(st) = st else {
                    return 0.0;
                };
                let mut clip = 0.0;
                for &i in cells {
                    let mut acc = 0.0;
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for a in 0..st.x.len {
                        for b in 0..st.y.len {
                            let node = st.x.idx[a] * ny + st.y.idx[b];
                            let v = src[node * n_m + i];
                            acc += st.x.w[a] * st.y.w[b] * v;
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                    let c = acc.clamp(lo, hi);
                    clip += (c - acc).abs() * widths[i] * weights[j];
                    row[i] = c * (-laws[i] * st.exposure).exp();
                }
                clip
            })
            .sum();
        stats.clipped += clipped;
    }
    let result = u.with_values(out);
    if opts.strict_support {
        check_support(&result, opts.margin_cells)?;
    }
    Ok((result, stats))
}

/// Thomas algorithm for a tridiagonal system; `lower[0]` and `upper[n-1]` unused.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i - 1];
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// One Crank–Nicolson step of `V du/dt = Σ face fluxes` on a line of nodes
/// with half control volumes at the ends and zero flux through them.
fn cn_line(v: &mut [f64], face_d: &[f64], h: f64, dt: f64) {
    let n = v.len();
    let vol = |i: usize| if i == 0 || i == n - 1 { 0.5 * h } else { h };
    let g: Vec<f64> = face_d.iter().map(|d| 0.5 * dt * d / h).collect();
    let mut rhs = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        let gl = if i > 0 { g[i - 1] } else { 0.0 };
        let gr = if i + 1 < n { g[i] } else { 0.0 };
        let mut r = (vol(i) - gl - gr) * v[i];
        if i > 0 {
            r += gl * v[i - 1];
            lower[i] = -gl;
        }
        if i + 1 < n {
            r += gr * v[i + 1];
            upper[i] = -gr;
        }
        rhs[i] = r;
        diag[i] = vol(i) + gl + gr;
    }
    solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
    v.copy_from_slice(&rhs);
}

fn cn_sweep(slice: &mut [f64], dnode: &[f64], grid: &SpatialGrid, axis: usize, dt: f64) {
    let (nx, ny) = (grid.nodes(0), grid.nodes(1));
    let h = grid.spacing(axis);
    if axis == 0 {
        for iy in 0..ny {
            let mut line: Vec<f64> = (0..nx).map(|ix| slice[ix * ny + iy]).collect();
            let faces: Vec<f64> = (0..nx - 1)
                .map(|ix| 0.5 * (dnode[ix * ny + iy] + dnode[(ix + 1) * ny + iy]))
                .collect();
            cn_line(&mut line, &faces, h, dt);
            for (ix, v) in line.into_iter().enumerate() {
                slice[ix * ny + iy] = v;
            }
        }
    } else {
        for ix in 0..nx {
            let row = &mut slice[ix * ny..(ix + 1) * ny];
            let drow = &dnode[ix * ny..(ix + 1) * ny];
            let faces: Vec<f64> = drow.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            cn_line(row, &faces, h, dt);
        }
    }
}

/// Number of Crank–Nicolson substeps keeping `dt d_max / h² ≤ 1`, under which
/// the scheme is positive.
pub fn cn_substeps(t: f64, d_max: f64, grid: &SpatialGrid) -> usize {
    let h_min = (0..grid.dim()).map(|a| grid.spacing(a)).fold(f64::INFINITY, f64::min);
    ((t * d_max / (h_min * h_min)).ceil() as usize).max(1)
}

fn diffuse_slice_cn(slice: &mut [f64], dnode: &[f64], grid: &SpatialGrid, t: f64) {
    let d_max = dnode.iter().copied().fold(0.0, f64::max);
    let n = cn_substeps(t, d_max, grid);
    let dt = t / n as f64;
    for _ in 0..n {
        if grid.dim() == 1 {
            cn_sweep(slice, dnode, grid, 0, dt);
        } else {
            cn_sweep(slice, dnode, grid, 0, 0.5 * dt);
            cn_sweep(slice, dnode, grid, 1, dt);
            cn_sweep(slice, dnode, grid, 0, 0.5 * dt);
        }
    }
}

fn diffuse_slice_heat_kernel(slice: &mut [f64], d: f64, grid: &SpatialGrid, t: f64) {
    let (nx, ny) = (grid.nodes(0), grid.nodes(1));
    let var = 2.0 * d * t;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    for axis in 0..grid.dim() {
        let n = grid.nodes(axis);
        let h = grid.spacing(axis);
        let w = grid.axis_weights(axis);
        let kernel: Vec<f64> = (0..n)
            .map(|k| {
                let r = k as f64 * h;
                norm * (-(r * r) / (2.0 * var)).exp()
            })
            .collect();
        let convolve = |line: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|k| kernel[i.abs_diff(k)] * w[k] * line[k])
                        .sum()
                })
                .collect()
        };
        if axis == 0 {
            for iy in 0..ny {
                let line: Vec<f64> = (0..nx).map(|ix| slice[ix * ny + iy]).collect();
                for (ix, v) in convolve(&line).into_iter().enumerate() {
                    slice[ix * ny + iy] = v;
                }
            }
        } else {
            for ix in 0..nx {
                let row = &mut slice[ix * ny..(ix + 1) * ny];
                let new = convolve(row);
                row.copy_from_slice(&new);
            }
        }
    }
}

/// Diffusion semigroup applied slice by slice. For an x-independent
/// coefficient on a whole-space box whose kernel width `√(2dt)` resolves the
/// grid, the heat kernel is applied by quadrature; otherwise Crank–Nicolson
/// substeps in divergence form with zero-flux closure (alternating-direction
/// sweeps in 2D).
pub fn diffuse(t: f64, u: &StateField, d: &DiffusionCoefficient) -> Result<StateField> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(u.clone());
    }
    let grid = u.space_grid().clone();
    let mass = u.mass_grid().clone();
    let points = grid.points();
    let h_max = (0..grid.dim()).map(|a| grid.spacing(a)).fold(0.0, f64::max);
    let slices: Vec<Vec<f64>> = (0..mass.len())
        .into_par_iter()
        .map(|i| {
            let m = mass.centers()[i];
            let mut slice = u.slice(i);
            let dm = d.law.eval(m);
            if d.x_independent()
                && grid.boundary() == Boundary::WholeSpaceTruncated
                && (2.0 * dm * t).sqrt() >= h_max
            {
                diffuse_slice_heat_kernel(&mut slice, dm, &grid, t);
            } else {
                let dnode: Vec<f64> = points.iter().map(|&x| d.eval(x, m)).collect();
                diffuse_slice_cn(&mut slice, &dnode, &grid, t);
            }
            slice
        })
        .collect();
    let mut out = u.zeros_like();
    for (i, s) in slices.iter().enumerate() {
        out.set_slice(i, s);
    }
    Ok(out)
}

/// Applies `e^{-a(x,m) t}` pointwise.
pub fn absorb(t: f64, u: &StateField, rate: &AbsorptionRate) -> StateField {
    let mass = u.mass_grid().clone();
    let grid = u.space_grid().clone();
    let n = mass.len();
    let mut out = u.clone();
    for (j, row) in out.values_mut().chunks_mut(n).enumerate() {
        let x = grid.point(j);
        for (v, &m) in row.iter_mut().zip(mass.centers()) {
            *v *= (-rate.eval(x, m) * t).exp();
        }
    }
    out
}

/// A linear evolution family `t ↦ G(t)`.
pub trait Evolution: Sync {
    fn evolve(&self, t: f64, u: &StateField) -> Result<StateField>;
}

/// Time-indexed linear transport operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SemigroupAction {
    Identity,
    Absorption {
        rate: AbsorptionRate,
    },
    Advection {
        field: VelocityField,
        #[serde(default)]
        rate: Option<AbsorptionRate>,
        #[serde(default)]
        options: AdvectionOptions,
    },
    Diffusion {
        coeff: DiffusionCoefficient,
    },
    /// Applied left to right. Exact only when the factors commute.
    Composed {
        parts: Vec<SemigroupAction>,
    },
}

impl SemigroupAction {
    pub fn apply(&self, t: f64, u: &StateField) -> Result<StateField> {
        Ok(self.apply_with_stats(t, u)?.0)
    }

    pub fn apply_with_stats(&self, t: f64, u: &StateField) -> Result<(StateField, AdvectionStats)> {
        if !(t >= 0.0) {
            return Err(invalid(format!("time must be nonnegative, got {t}")));
        }
        if self.is_identity() {
            return Ok((u.clone(), AdvectionStats::default()));
        }
        match self {
            SemigroupAction::Identity => Ok((u.clone(), AdvectionStats::default())),
            SemigroupAction::Absorption { rate } => Ok((absorb(t, u, rate), AdvectionStats::default())),
            SemigroupAction::Advection {
                field,
                rate,
                options,
            } => advect(t, u, field, rate.as_ref(), options),
            SemigroupAction::Diffusion { coeff } => Ok((diffuse(t, u, coeff)?, AdvectionStats::default())),
            SemigroupAction::Composed { parts } => {
                let mut cur = u.clone();
                let mut stats = AdvectionStats::default();
                for p in parts {
                    let (next, s) = p.apply_with_stats(t, &cur)?;
                    stats.outflow_feet += s.outflow_feet;
                    stats.clipped += s.clipped;
                    cur = next;
                }
                Ok((cur, stats))
            }
        }
    }

    /// True when every coefficient is independent of the mass variable.
    pub fn m_independent(&self) -> bool {
        match self {
            SemigroupAction::Identity => true,
            SemigroupAction::Absorption { rate } => matches!(rate.law, crate::kernels::MassLaw::Constant { .. }),
            SemigroupAction::Advection { field, rate, .. } => {
                field.m_independent()
                    && rate
                        .as_ref()
                        .map_or(true, |r| matches!(r.law, crate::kernels::MassLaw::Constant { .. }))
            }
            SemigroupAction::Diffusion { coeff } => coeff.m_independent(),
            SemigroupAction::Composed { parts } => parts.iter().all(|p| p.m_independent()),
        }
    }

    /// True when the action is the identity for all `t`.
    pub fn is_identity(&self) -> bool {
        match self {
            SemigroupAction::Identity => true,
            SemigroupAction::Absorption { rate } => rate.is_zero(),
            SemigroupAction::Advection { field, rate, .. } => {
                field.is_zero() && rate.as_ref().map_or(true, |r| r.is_zero())
            }
            SemigroupAction::Diffusion { .. } => false,
            SemigroupAction::Composed { parts } => parts.iter().all(|p| p.is_identity()),
        }
    }
}

impl Evolution for SemigroupAction {
    fn evolve(&self, t: f64, u: &StateField) -> Result<StateField> {
        self.apply(t, u)
    }
}

/// Output of `resolvent`.
#[derive(Debug, Clone)]
pub struct ResolventResult {
    pub value: StateField,
    /// Richardson error estimate plus the truncated tail bound, in the
    /// `𝒳_r` norm requested.
    pub error_estimate: f64,
}

/// Options of `resolvent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventOptions {
    /// Horizon factor: the integral is cut at `horizon / λ`.
    pub horizon: f64,
    /// Panels of the coarse trapezoid rule; the fine rule uses twice as many.
    pub panels: usize,
    /// Decades of `t` covered below the horizon by the logarithmic nodes.
    pub decades: f64,
    /// Weight exponent of the norm used in the error estimate.
    pub r: f64,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        Self {
            horizon: 40.0,
            panels: 128,
            decades: 16.0,
            r: 0.0,
        }
    }
}

/// `R(λ) f = ∫₀^∞ e^{-λt} G(t) f dt`, truncated at `T = horizon/λ`.
///
/// With `t = e^τ` the integrand `t e^{-λt} G(t) f` decays at both ends of
/// `τ ∈ [ln T - decades·ln 10, ln T]`, so the trapezoid rule in `τ` resolves
/// absorption rates anywhere in that range (a grading in `t` does not once
/// `a ≫ λ`). The piece below the first node is taken as `t₀ (f + G(t₀)f)/2`.
/// The error estimate is the gap between `n` and `2n` panels plus both cuts.
pub fn resolvent(
    lambda: f64,
    f: &StateField,
    action: &dyn Evolution,
    opts: &ResolventOptions,
) -> Result<ResolventResult> {
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !(opts.decades > 0.0) {
        return Err(invalid("resolvent needs a positive number of decades"));
    }
    let big_t = opts.horizon / lambda;
    let n2 = 2 * opts.panels.max(1);
    let tau_hi = big_t.ln();
    let tau_lo = tau_hi - opts.decades * std::f64::consts::LN_10;
    let t_lo = tau_lo.exp();
    let h = (tau_hi - tau_lo) / n2 as f64;
    let evals: Vec<(f64, StateField)> = (0..=n2)
        .into_par_iter()
        .map(|k| {
            let t = (tau_lo + k as f64 * h).exp();
            Ok((t, action.evolve(t, f)?))
        })
        .collect::<Result<_>>()?;
    let head = f.axpy(1.0, &evals[0].1)?.scaled(0.5 * t_lo);
    let combine = |stride: usize| -> StateField {
        let n = n2 / stride;
        let step = h * stride as f64;
        let mut acc = head.clone();
        for k in 0..=n {
            let (t, g) = &evals[k * stride];
            let c = if k == 0 || k == n { 0.5 * step } else { step };
            acc.add_assign_scaled(c * t * (-lambda * t).exp(), g).expect("same grids");
        }
        acc
    };
    let value = combine(1);
    let coarse = combine(2);
    let norm_f = crate::grid::weighted_norm(f, opts.r)?;
    let tail = (-lambda * big_t).exp() * norm_f / lambda;
    let error_estimate = crate::grid::weighted_norm(&value.sub(&coarse)?, opts.r)? + tail + t_lo * t_lo * lambda * norm_f;
    Ok(ResolventResult {
        value,
        error_estimate,
    })
}

/// One sample of the Grönwall check: positions and masses of two particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowPair {
    pub x: [f64; 2],
    pub m1: f64,
    pub y: [f64; 2],
    pub m2: f64,
}

/// Checks `‖φ(x,t,m₁) - φ(y,t,m₂)‖ ≤ (‖x - y‖ + t ε) e^{κt}` on every pair.
/// `eps` defaults to the field's mass modulus at `|m₁ - m₂|`. The comparison
/// allows a relative slack of 1e-8 for the numerical flow.
pub fn gronwall_flow_check(
    field: &VelocityField,
    pairs: &[FlowPair],
    t: f64,
    eps: Option<f64>,
) -> Result<Certificate> {
    let kappa = field.kappa();
    let mut margin = f64::INFINITY;
    let mut stat: f64 = 0.0;
    let mut worst = Vec::new();
    for p in pairs {
        let a = flow(p.x, t, p.m1, field)?;
        let b = flow(p.y, t, p.m2, field)?;
        let lhs = norm2([a[0] - b[0], a[1] - b[1]]);
        let e = eps.unwrap_or_else(|| field.mass_modulus(p.m1 - p.m2));
        let bound = (norm2([p.x[0] - p.y[0], p.x[1] - p.y[1]]) + t * e) * (kappa * t).exp();
        let slack = bound * (1.0 + 1e-8) + 1e-12 - lhs;
        if slack < margin {
            margin = slack;
            worst = vec![p.x[0], p.x[1], p.m1, p.y[0], p.y[1], p.m2];
        }
        if bound > 0.0 {
            stat = stat.max(lhs / bound);
        }
    }
    if pairs.is_empty() {
        margin = 0.0;
    }
    Ok(Certificate::from_margin(
        CertificateKind::Gronwall,
        margin,
        stat,
        worst,
        pairs.len(),
        false,
    ))
}

/// `C₂ = 2 e^{-q/γ} (q/(γ a₀))^{q/γ}` of the regularization estimate
/// `‖G(t)‖_{𝒳_p → 𝒳_{p+q}} ≤ C₁ + C₂ t^{-q/γ}`.
pub fn regularization_c2(q: f64, gamma: f64, a0: f64) -> f64 {
    let e = q / gamma;
    2.0 * (-e).exp() * (q / (gamma * a0)).powf(e)
}
