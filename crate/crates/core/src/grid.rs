//! Mass and space discretisations, state fields and the weighted norms.
//!
//! The mass half-line is truncated at `m_max` and split into cells; densities
//! are sampled at cell centres, so the origin is never evaluated. Mass
//! integrals use the cell-centred rule `Σ u(m_i) Δm_i`. Spatial integrals use
//! the composite trapezoid rule over grid nodes (half weights on the ends).
//!
//! Two families of moments are exposed:
//!
//! * `moment` / `weighted_norm` use the measure `dm_r = (1 + m^r) dm`, the
//!   measure of the state spaces `X_r`;
//! * `classical_moment` / `classical_norm` use `m^r dm`, so that
//!   `classical_moment(u, 0)` is the particle number and
//!   `classical_moment(u, 1)` the total mass.
//!
//! The two are related by `moment(u, r) = classical_moment(u, 0) + classical_moment(u, r)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Spacing of the mass cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    Uniform,
    Geometric,
}

/// Cell-centred discretisation of `(0, m_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassGrid {
    spacing: Spacing,
    edges: Vec<f64>,
    centers: Vec<f64>,
    widths: Vec<f64>,
}

/// JSON descriptor of a mass grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassGridDescriptor {
    pub spacing: Spacing,
    pub m_max: f64,
    pub cells: usize,
    /// Right edge of the first cell; only used by geometric grids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_edge: Option<f64>,
}

impl MassGrid {
    pub fn uniform(m_max: f64, cells: usize) -> Result<Self> {
        if !(m_max.is_finite() && m_max > 0.0) {
            return Err(invalid(format!("m_max must be positive and finite, got {m_max}")));
        }
        if cells == 0 {
            return Err(invalid("mass grid needs at least one cell"));
        }
        let dm = m_max / cells as f64;
        let edges: Vec<f64> = (0..=cells).map(|i| i as f64 * dm).collect();
        let centers = (0..cells).map(|i| (i as f64 + 0.5) * dm).collect();
        Ok(Self {
            spacing: Spacing::Uniform,
            edges,
            centers,
            widths: vec![dm; cells],
        })
    }

    /// Geometric grid: the first cell is `(0, first_edge]`, the remaining
    /// `cells - 1` edges grow by a constant ratio up to `m_max`.
    pub fn geometric(first_edge: f64, m_max: f64, cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(invalid("geometric mass grid needs at least two cells"));
        }
        if !(first_edge > 0.0 && first_edge < m_max && m_max.is_finite()) {
            return Err(invalid("geometric grid requires 0 < first_edge < m_max"));
        }
        let ratio = (m_max / first_edge).powf(1.0 / (cells - 1) as f64);
        let mut edges = Vec::with_capacity(cells + 1);
        edges.push(0.0);
        for k in 0..cells {
            edges.push(first_edge * ratio.powi(k as i32));
        }
        edges[cells] = m_max;
        let centers = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            spacing: Spacing::Geometric,
            edges,
            centers,
            widths,
        })
    }

    pub fn from_descriptor(d: &MassGridDescriptor) -> Result<Self> {
        match d.spacing {
            Spacing::Uniform => Self::uniform(d.m_max, d.cells),
            Spacing::Geometric => {
                let first = d
                    .first_edge
                    .ok_or_else(|| invalid("geometric grid descriptor needs first_edge"))?;
                Self::geometric(first, d.m_max, d.cells)
            }
        }
    }

    pub fn descriptor(&self) -> MassGridDescriptor {
        MassGridDescriptor {
            spacing: self.spacing,
            m_max: self.m_max(),
            cells: self.len(),
            first_edge: match self.spacing {
                Spacing::Uniform => None,
                Spacing::Geometric => Some(self.edges[1]),
            },
        }
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn m_max(&self) -> f64 {
        *self.edges.last().expect("grid has edges")
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Constant cell width of a uniform grid.
    pub fn uniform_width(&self) -> Option<f64> {
        match self.spacing {
            Spacing::Uniform => Some(self.widths[0]),
            Spacing::Geometric => None,
        }
    }

    /// Weights `(1 + m_i^r) Δm_i` of the `dm_r` quadrature.
    pub fn weights(&self, r: f64) -> Vec<f64> {
        self.centers
            .iter()
            .zip(&self.widths)
            .map(|(&m, &w)| (1.0 + m.powf(r)) * w)
            .collect()
    }
}

/// Spatial boundary treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Whole space truncated to a box; characteristics leaving the box are outflow.
    WholeSpaceTruncated,
    /// Bounded domain with zero-flux closure.
    BoundedNeumann,
}

/// Tensor-product grid of nodes (endpoints included) in one or two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    nodes: [usize; 2],
    boundary: Boundary,
}

impl SpatialGrid {
    pub fn new_1d(lower: f64, upper: f64, nodes: usize, boundary: Boundary) -> Result<Self> {
        Self::validate_axis(lower, upper, nodes)?;
        Ok(Self {
            dim: 1,
            lower: [lower, 0.0],
            upper: [upper, 0.0],
            nodes: [nodes, 1],
            boundary,
        })
    }

    pub fn new_2d(
        lower: [f64; 2],
        upper: [f64; 2],
        nodes: [usize; 2],
        boundary: Boundary,
    ) -> Result<Self> {
        for a in 0..2 {
            Self::validate_axis(lower[a], upper[a], nodes[a])?;
        }
        Ok(Self {
            dim: 2,
            lower,
            upper,
            nodes,
            boundary,
        })
    }

    /// `[0, 1]` with two nodes: the spatial carrier for space-homogeneous runs.
    /// Its trapezoid weights sum to one, so integral and sup norms coincide on
    /// x-independent fields.
    pub fn unit_interval() -> Self {
        Self::new_1d(0.0, 1.0, 2, Boundary::BoundedNeumann).expect("valid unit interval")
    }

    fn validate_axis(lower: f64, upper: f64, nodes: usize) -> Result<()> {
        if nodes < 2 {
            return Err(invalid("each spatial axis needs at least two nodes"));
        }
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(invalid(format!("invalid axis bounds [{lower}, {upper}]")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn nodes(&self, axis: usize) -> usize {
        self.nodes[axis]
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.nodes[0] * self.nodes[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        if axis >= self.dim {
            return 1.0;
        }
        (self.upper[axis] - self.lower[axis]) / (self.nodes[axis] - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if axis >= self.dim {
            return 0.0;
        }
        self.lower[axis] + i as f64 * self.spacing(axis)
    }

    /// Flat node index; the second axis varies fastest.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.nodes[1] + iy
    }

    pub fn unravel(&self, j: usize) -> (usize, usize) {
        (j / self.nodes[1], j % self.nodes[1])
    }

    pub fn point(&self, j: usize) -> [f64; 2] {
        let (ix, iy) = self.unravel(j);
        [self.coord(0, ix), self.coord(1, iy)]
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|j| self.point(j)).collect()
    }

    /// One-dimensional trapezoid weights along an axis.
    pub fn axis_weights(&self, axis: usize) -> Vec<f64> {
        if axis >= self.dim {
            return vec![1.0];
        }
        let n = self.nodes[axis];
        let h = self.spacing(axis);
        (0..n)
            .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
            .collect()
    }

    /// Tensor-product trapezoid weights for every node.
    pub fn weights(&self) -> Vec<f64> {
        let wx = self.axis_weights(0);
        let wy = self.axis_weights(1);
        let mut w = Vec::with_capacity(self.len());
        for a in &wx {
            for b in &wy {
                w.push(a * b);
            }
        }
        w
    }

    /// Lebesgue measure of the box.
    pub fn measure(&self) -> f64 {
        (0..self.dim)
            .map(|a| self.upper[a] - self.lower[a])
            .product()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..self.dim).all(|a| p[a] >= self.lower[a] && p[a] <= self.upper[a])
    }
}

/// Which spatial norm is taken inside the mass integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// `L_1` in x (the integrable setting).
    Integral,
    /// Supremum in x (the continuous-function setting).
    Sup,
}

/// Density `u(x_j, m_i)` on a space × mass grid.
///
/// Values are stored node-major: `values[j * n_m + i]`, so the mass profile at
/// a spatial node is contiguous.
#[derive(Debug, Clone)]
pub struct StateField {
    mass: Arc<MassGrid>,
    space: Arc<SpatialGrid>,
    values: Vec<f64>,
    mode: NormMode,
}

impl StateField {
    pub fn zeros(mass: Arc<MassGrid>, space: Arc<SpatialGrid>, mode: NormMode) -> Self {
        let len = mass.len() * space.len();
        Self {
            mass,
            space,
            values: vec![0.0; len],
            mode,
        }
    }

    pub fn from_fn(
        mass: Arc<MassGrid>,
        space: Arc<SpatialGrid>,
        mode: NormMode,
        f: impl Fn([f64; 2], f64) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(mass.len() * space.len());
        for j in 0..space.len() {
            let x = space.point(j);
            for &m in mass.centers() {
                values.push(f(x, m));
            }
        }
        Self {
            mass,
            space,
            values,
            mode,
        }
    }

    pub fn from_values(
        mass: Arc<MassGrid>,
        space: Arc<SpatialGrid>,
        mode: NormMode,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != mass.len() * space.len() {
            return Err(invalid(format!(
                "expected {} values, got {}",
                mass.len() * space.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite field value {v}")));
        }
        Ok(Self {
            mass,
            space,
            values,
            mode,
        })
    }

    /// A field of the same shape with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            mass: Arc::clone(&self.mass),
            space: Arc::clone(&self.space),
            values,
            mode: self.mode,
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.with_values(vec![0.0; self.values.len()])
    }

    pub fn mass_grid(&self) -> &Arc<MassGrid> {
        &self.mass
    }

    pub fn space_grid(&self) -> &Arc<SpatialGrid> {
        &self.space
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn with_mode(mut self, mode: NormMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn n_mass(&self) -> usize {
        self.mass.len()
    }

    pub fn n_space(&self) -> usize {
        self.space.len()
    }

    pub fn get(&self, node: usize, cell: usize) -> f64 {
        self.values[node * self.mass.len() + cell]
    }

    pub fn set(&mut self, node: usize, cell: usize, v: f64) {
        let n = self.mass.len();
        self.values[node * n + cell] = v;
    }

    /// Mass profile at one spatial node.
    pub fn profile(&self, node: usize) -> &[f64] {
        let n = self.mass.len();
        &self.values[node * n..(node + 1) * n]
    }

    pub fn profile_mut(&mut self, node: usize) -> &mut [f64] {
        let n = self.mass.len();
        &mut self.values[node * n..(node + 1) * n]
    }

    /// Spatial slice at one mass cell, in node order.
    pub fn slice(&self, cell: usize) -> Vec<f64> {
        let n = self.mass.len();
        (0..self.space.len()).map(|j| self.values[j * n + cell]).collect()
    }

    pub fn set_slice(&mut self, cell: usize, slice: &[f64]) {
        let n = self.mass.len();
        for (j, v) in slice.iter().enumerate() {
            self.values[j * n + cell] = *v;
        }
    }

    pub fn same_grids(&self, other: &StateField) -> bool {
        (Arc::ptr_eq(&self.mass, &other.mass) || self.mass == other.mass)
            && (Arc::ptr_eq(&self.space, &other.space) || self.space == other.space)
    }

    pub fn ensure_same_grids(&self, other: &StateField) -> Result<()> {
        if self.same_grids(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch("fields live on different grids"))
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.with_values(self.values.iter().map(|v| c * v).collect())
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &StateField) -> Result<Self> {
        self.ensure_same_grids(other)?;
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        ))
    }

    pub fn add(&self, other: &StateField) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &StateField) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn add_assign_scaled(&mut self, c: f64, other: &StateField) -> Result<()> {
        self.ensure_same_grids(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Spatial norm of every mass slice, in the field's norm mode.
    pub fn slice_norms(&self) -> Vec<f64> {
        let n = self.mass.len();
        let mut out = vec![0.0; n];
        match self.mode {
            NormMode::Integral => {
                let w = self.space.weights();
                for (j, wj) in w.iter().enumerate() {
                    for (o, v) in out.iter_mut().zip(&self.values[j * n..(j + 1) * n]) {
                        *o += wj * v.abs();
                    }
                }
            }
            NormMode::Sup => {
                for j in 0..self.space.len() {
                    for (o, v) in out.iter_mut().zip(&self.values[j * n..(j + 1) * n]) {
                        *o = o.max(v.abs());
                    }
                }
            }
        }
        out
    }

    /// Signed spatial integral of every mass slice.
    pub fn slice_integrals(&self) -> Vec<f64> {
        let n = self.mass.len();
        let mut out = vec![0.0; n];
        let w = self.space.weights();
        for (j, wj) in w.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&self.values[j * n..(j + 1) * n]) {
                *o += wj * v;
            }
        }
        out
    }
}

fn check_exponent(r: f64) -> Result<()> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(invalid(format!("weight exponent must be nonnegative, got {r}")));
    }
    Ok(())
}

/// `‖u‖_r = ∫ ‖u(·,m)‖ (1 + m^r) dm`.
pub fn weighted_norm(u: &StateField, r: f64) -> Result<f64> {
    check_exponent(r)?;
    let norms = u.slice_norms();
    Ok(u.mass
        .weights(r)
        .iter()
        .zip(&norms)
        .map(|(w, s)| w * s)
        .sum())
}

/// Interpolation-space norm `∫ ‖u(·,m)‖ (ω + α₁(m))^μ (1 + m^r) dm`.
pub fn weighted_norm_mu(
    u: &StateField,
    r: f64,
    mu: f64,
    omega: f64,
    alpha1: impl Fn(f64) -> f64,
) -> Result<f64> {
    check_exponent(r)?;
    if !(0.0..=1.0).contains(&mu) {
        return Err(invalid(format!("mu must lie in [0, 1], got {mu}")));
    }
    if !(omega > 0.0) {
        return Err(invalid(format!("omega must be positive, got {omega}")));
    }
    let norms = u.slice_norms();
    Ok(u.mass
        .weights(r)
        .iter()
        .zip(&norms)
        .zip(u.mass.centers())
        .map(|((w, s), &m)| {
            let shift = if mu == 0.0 { 1.0 } else { (omega + alpha1(m)).powf(mu) };
            w * s * shift
        })
        .sum())
}

/// `M_r = ∫∫ u (1 + m^r) dm dx`; signed, integral mode only.
pub fn moment(u: &StateField, r: f64) -> Result<f64> {
    check_exponent(r)?;
    if u.mode != NormMode::Integral {
        return Err(Error::NormMode { expected: "integral" });
    }
    let ints = u.slice_integrals();
    Ok(u.mass
        .weights(r)
        .iter()
        .zip(&ints)
        .map(|(w, s)| w * s)
        .sum())
}

/// `∫∫ m^k u dm dx`: `k = 0` is the particle number, `k = 1` the mass.
pub fn classical_moment(u: &StateField, k: f64) -> Result<f64> {
    check_exponent(k)?;
    if u.mode != NormMode::Integral {
        return Err(Error::NormMode { expected: "integral" });
    }
    let ints = u.slice_integrals();
    Ok(u.mass
        .centers()
        .iter()
        .zip(u.mass.widths())
        .zip(&ints)
        .map(|((m, w), s)| m.powf(k) * w * s)
        .sum())
}

/// `∫ ‖u(·,m)‖ m^k dm` in the field's norm mode.
pub fn classical_norm(u: &StateField, k: f64) -> Result<f64> {
    check_exponent(k)?;
    let norms = u.slice_norms();
    Ok(u.mass
        .centers()
        .iter()
        .zip(u.mass.widths())
        .zip(&norms)
        .map(|((m, w), s)| m.powf(k) * w * s)
        .sum())
}

/// `‖u - v‖_r`.
pub fn distance(u: &StateField, v: &StateField, r: f64) -> Result<f64> {
    weighted_norm(&u.sub(v)?, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_fields(cells: usize, m_max: f64) -> (Arc<MassGrid>, Arc<SpatialGrid>) {
        (
            Arc::new(MassGrid::uniform(m_max, cells).unwrap()),
            Arc::new(SpatialGrid::new_1d(0.0, 1.0, 11, Boundary::BoundedNeumann).unwrap()),
        )
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let (m, s) = unit_fields(16, 1.0);
        let u = StateField::zeros(m, s, NormMode::Integral);
        assert_eq!(weighted_norm(&u, 2.0).unwrap(), 0.0);
        assert_eq!(moment(&u, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn unit_density_weight_integral() {
        // ∫_0^1 (1 + m) dm = 1.5; the midpoint rule is exact on linear weights.
        let (m, s) = unit_fields(64, 1.0);
        let u = StateField::from_fn(m, s, NormMode::Integral, |_, _| 1.0);
        assert!((weighted_norm(&u, 1.0).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn exponential_profile_matches_closed_form() {
        let (m, s) = unit_fields(400, 20.0);
        let u = StateField::from_fn(m, s, NormMode::Integral, |_, m| (-m).exp());
        // r = 0 weight is (1 + 1) = 2: 2 (1 - e^{-20}).
        let expect = 2.0 * (1.0 - (-20.0f64).exp());
        assert!((weighted_norm(&u, 0.0).unwrap() - expect).abs() < 2e-3 * expect);
        // Raw number matches ∫ e^{-m} dm.
        let number = classical_moment(&u, 0.0).unwrap();
        assert!((number - (1.0 - (-20.0f64).exp())).abs() < 1e-3);
        // moment(r=1) = ∫(1+m)e^{-m} = 2 minus the tail.
        let expect1 = 2.0 - 22.0 * (-20.0f64).exp();
        assert!((moment(&u, 1.0).unwrap() - expect1).abs() < 1e-3);
    }

    #[test]
    fn mu_norm_closed_form_and_collapse() {
        let (m, s) = unit_fields(800, 30.0);
        let u = StateField::from_fn(m, s, NormMode::Integral, |_, m| (-m).exp());
        // α₁(m) = m, ω = 1, μ = 1, r = 0: weight (1+m)·2 so ∫ 2(1+m)e^{-m} = 4.
        let v = weighted_norm_mu(&u, 0.0, 1.0, 1.0, |m| m).unwrap();
        assert!((v - 4.0).abs() < 1e-3, "{v}");
        let a = weighted_norm_mu(&u, 2.0, 0.0, 7.0, |m| m).unwrap();
        assert_eq!(a, weighted_norm(&u, 2.0).unwrap());
        assert!(weighted_norm_mu(&u, 0.0, 1.5, 1.0, |m| m).is_err());
        assert!(weighted_norm_mu(&u, 0.0, 0.5, 0.0, |m| m).is_err());
    }

    #[test]
    fn errors_on_bad_input() {
        let (m, s) = unit_fields(4, 1.0);
        let u = StateField::zeros(m.clone(), s.clone(), NormMode::Sup);
        assert!(weighted_norm(&u, -1.0).is_err());
        assert!(matches!(moment(&u, 1.0), Err(Error::NormMode { .. })));
        let other = StateField::zeros(
            Arc::new(MassGrid::uniform(2.0, 4).unwrap()),
            s,
            NormMode::Sup,
        );
        assert!(distance(&u, &other, 0.0).is_err());
        assert!(MassGrid::uniform(0.0, 3).is_err());
        assert!(SpatialGrid::new_1d(0.0, 1.0, 1, Boundary::BoundedNeumann).is_err());
    }

    #[test]
    fn geometric_grid_invariants() {
        let g = MassGrid::geometric(0.01, 100.0, 40).unwrap();
        assert_eq!(g.len(), 40);
        assert!(g.centers().windows(2).all(|w| w[1] > w[0]));
        assert!(g.widths().iter().all(|&w| w > 0.0));
        assert!((g.m_max() - 100.0).abs() < 1e-12);
        let back = MassGrid::from_descriptor(&g.descriptor()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn sup_mode_dominates_on_bounded_domain() {
        let m = Arc::new(MassGrid::uniform(5.0, 20).unwrap());
        let s = Arc::new(SpatialGrid::new_1d(-1.0, 2.0, 31, Boundary::BoundedNeumann).unwrap());
        let u = StateField::from_fn(m, s.clone(), NormMode::Integral, |x, m| {
            (1.0 + x[0].sin()) * (-m).exp()
        });
        let integral = weighted_norm(&u, 1.0).unwrap();
        let sup = weighted_norm(&u.clone().with_mode(NormMode::Sup), 1.0).unwrap();
        assert!(integral <= s.measure() * sup);
    }

    #[test]
    fn trapezoid_order_under_refinement() {
        let err = |n: usize| {
            let m = Arc::new(MassGrid::uniform(10.0, n).unwrap());
            let s = Arc::new(SpatialGrid::unit_interval());
            let u = StateField::from_fn(m, s, NormMode::Integral, |_, m| (-m).exp());
            let exact = 2.0 * (1.0 - (-10.0f64).exp());
            (weighted_norm(&u, 0.0).unwrap() - exact).abs()
        };
        let ratio = err(50) / err(100);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }
}
