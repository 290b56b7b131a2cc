//! Model coefficients: absorption (fragmentation) rate `a`, daughter kernel `b`,
//! dominating kernel `β` and coagulation kernel `k`, with their moments and the
//! kernel certificates.
//!
//! Every coefficient factors as a mass law times an optional spatial
//! modulation `1 + ε sin(k x₁)`. The modulation gives the x-uniformity
//! envelopes directly: `α₁ = (1-|ε|) law`, `α₂ = (1+|ε|) law`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{Certificate, CertificateKind};
use crate::error::{invalid, Result};
use crate::quadrature::{gauss_legendre, gauss_legendre_pieces};

/// Multiplicative spatial factor `1 + amplitude · sin(wavenumber · x₁)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialModulation {
    pub amplitude: f64,
    pub wavenumber: f64,
}

impl SpatialModulation {
    pub fn factor(&self, x: [f64; 2]) -> f64 {
        1.0 + self.amplitude * (self.wavenumber * x[0]).sin()
    }

    fn validate(&self) -> Result<()> {
        if !(self.amplitude.abs() < 1.0) {
            return Err(invalid("modulation amplitude must satisfy |ε| < 1"));
        }
        Ok(())
    }
}

fn mod_factor(m: &Option<SpatialModulation>, x: [f64; 2]) -> f64 {
    m.as_ref().map_or(1.0, |m| m.factor(x))
}

fn mod_bounds(m: &Option<SpatialModulation>) -> (f64, f64) {
    m.as_ref()
        .map_or((1.0, 1.0), |m| (1.0 - m.amplitude.abs(), 1.0 + m.amplitude.abs()))
}

fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x).max(1) - 1;
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + t * (ys[k + 1] - ys[k])
}

fn validate_table(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return Err(invalid("table needs at least two (abscissa, value) pairs"));
    }
    if !xs.windows(2).all(|w| w[1] > w[0]) {
        return Err(invalid("table abscissae must be strictly increasing"));
    }
    if ys.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(invalid("table values must be finite and nonnegative"));
    }
    Ok(())
}

/// Mass dependence of a rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MassLaw {
    /// `value`
    Constant { value: f64 },
    /// `coef · m^exponent`
    Power { coef: f64, exponent: f64 },
    /// Piecewise linear, held constant outside the table.
    Table { m: Vec<f64>, values: Vec<f64> },
}

impl MassLaw {
    pub fn eval(&self, m: f64) -> f64 {
        match self {
            MassLaw::Constant { value } => *value,
            MassLaw::Power { coef, exponent } => coef * m.powf(*exponent),
            MassLaw::Table { m: ms, values } => interp_clamped(ms, values, m),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            MassLaw::Constant { value } if !(*value >= 0.0) => {
                Err(invalid("constant rate must be nonnegative"))
            }
            MassLaw::Power { coef, exponent } if !(*coef >= 0.0 && *exponent >= 0.0) => {
                Err(invalid("power-law rate needs coef ≥ 0 and exponent ≥ 0"))
            }
            MassLaw::Table { m, values } => validate_table(m, values),
            _ => Ok(()),
        }
    }
}

/// Growth parameters `α₁(m) ≥ a₀ m^γ` for `m ≥ m₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub a0: f64,
    pub gamma: f64,
    pub m0: f64,
}

/// Fragmentation (absorption) rate `a(x, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsorptionRate {
    pub law: MassLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<SpatialModulation>,
}

impl AbsorptionRate {
    pub fn new(law: MassLaw, modulation: Option<SpatialModulation>) -> Result<Self> {
        law.validate()?;
        if let Some(m) = &modulation {
            m.validate()?;
        }
        Ok(Self { law, modulation })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            law: MassLaw::Constant { value },
            modulation: None,
        }
    }

    pub fn power(coef: f64, exponent: f64) -> Self {
        Self {
            law: MassLaw::Power { coef, exponent },
            modulation: None,
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn eval(&self, x: [f64; 2], m: f64) -> f64 {
        self.law.eval(m) * mod_factor(&self.modulation, x)
    }

    pub fn alpha1(&self, m: f64) -> f64 {
        mod_bounds(&self.modulation).0 * self.law.eval(m)
    }

    pub fn alpha2(&self, m: f64) -> f64 {
        mod_bounds(&self.modulation).1 * self.law.eval(m)
    }

    /// Envelope ratio `M` with `α₂ ≤ M α₁`.
    pub fn envelope_ratio(&self) -> f64 {
        let (lo, hi) = mod_bounds(&self.modulation);
        hi / lo
    }

    pub fn is_x_independent(&self) -> bool {
        self.modulation.map_or(true, |m| m.amplitude == 0.0)
    }

    pub fn is_zero(&self) -> bool {
        match &self.law {
            MassLaw::Constant { value } => *value == 0.0,
            MassLaw::Power { coef, .. } => *coef == 0.0,
            MassLaw::Table { values, .. } => values.iter().all(|&v| v == 0.0),
        }
    }

    pub fn growth(&self) -> Option<GrowthParams> {
        let lo = mod_bounds(&self.modulation).0;
        match &self.law {
            MassLaw::Power { coef, exponent } if *coef > 0.0 && *exponent > 0.0 => {
                Some(GrowthParams {
                    a0: lo * coef,
                    gamma: *exponent,
                    m0: 1.0,
                })
            }
            _ => None,
        }
    }

    /// The x-independent rate `α₂`, used as the gain rate of the dominating problem.
    pub fn upper_envelope(&self) -> AbsorptionRate {
        let hi = mod_bounds(&self.modulation).1;
        AbsorptionRate {
            law: scale_law(&self.law, hi),
            modulation: None,
        }
    }

    /// The x-independent rate `α₁`, used as the loss rate of the dominating problem.
    pub fn lower_envelope(&self) -> AbsorptionRate {
        let lo = mod_bounds(&self.modulation).0;
        AbsorptionRate {
            law: scale_law(&self.law, lo),
            modulation: None,
        }
    }

    /// Checks `0 ≤ α₁ ≤ a ≤ α₂ ≤ M α₁` on the given samples.
    pub fn check_envelopes(&self, xs: &[[f64; 2]], ms: &[f64]) -> bool {
        let big_m = self.envelope_ratio();
        ms.iter().all(|&m| {
            let (a1, a2) = (self.alpha1(m), self.alpha2(m));
            let tol = 1e-12 * a2.abs().max(1e-300);
            a1 >= 0.0
                && a2 <= big_m * a1 + tol
                && xs.iter().all(|&x| {
                    let a = self.eval(x, m);
                    a1 <= a + tol && a <= a2 + tol
                })
        })
    }
}

fn scale_law(law: &MassLaw, c: f64) -> MassLaw {
    match law {
        MassLaw::Constant { value } => MassLaw::Constant { value: c * value },
        MassLaw::Power { coef, exponent } => MassLaw::Power {
            coef: c * coef,
            exponent: *exponent,
        },
        MassLaw::Table { m, values } => MassLaw::Table {
            m: m.clone(),
            values: values.iter().map(|v| c * v).collect(),
        },
    }
}

/// Profile `h(z)` of a homogeneous kernel `h(m/s)/s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `coef · z^exponent`, `exponent > -1`.
    Power { coef: f64, exponent: f64 },
    /// Piecewise linear on `[0, 1]`.
    Table { z: Vec<f64>, h: Vec<f64> },
}

impl Profile {
    pub fn eval(&self, z: f64) -> f64 {
        if !(0.0..=1.0).contains(&z) {
            return 0.0;
        }
        match self {
            Profile::Constant { value } => *value,
            Profile::Power { coef, exponent } => coef * z.powf(*exponent),
            Profile::Table { z: zs, h } => interp_clamped(zs, h, z),
        }
    }

    /// `∫₀¹ h(z) z^r dz`.
    pub fn moment(&self, r: f64) -> f64 {
        match self {
            Profile::Constant { value } => value / (r + 1.0),
            Profile::Power { coef, exponent } => coef / (r + exponent + 1.0),
            Profile::Table { z, .. } => {
                gauss_legendre_pieces(|t| self.eval(t) * t.powf(r), 0.0, 1.0, z, 4)
            }
        }
    }

    /// `(∫_{1-η}^1 h^p dz)^{1/p}`.
    pub fn lp_slab(&self, eta: f64, p: f64) -> f64 {
        let lo = 1.0 - eta;
        let v = match self {
            Profile::Constant { value } => value.abs().powf(p) * eta,
            Profile::Power { coef, exponent } => {
                let e = exponent * p + 1.0;
                if e <= 0.0 && lo == 0.0 {
                    f64::INFINITY
                } else {
                    coef.abs().powf(p) * (1.0 - lo.powf(e)) / e
                }
            }
            Profile::Table { z, .. } => {
                gauss_legendre_pieces(|t| self.eval(t).powf(p), lo, 1.0, z, 4)
            }
        };
        v.powf(1.0 / p)
    }

    fn validate(&self) -> Result<()> {
        match self {
            Profile::Constant { value } if !(*value >= 0.0) => {
                Err(invalid("profile value must be nonnegative"))
            }
            Profile::Power { coef, exponent } if !(*coef >= 0.0 && *exponent > -1.0) => {
                Err(invalid("power profile needs coef ≥ 0 and exponent > -1"))
            }
            Profile::Table { z, h } => {
                validate_table(z, h)?;
                if z[0] != 0.0 || z[z.len() - 1] != 1.0 {
                    return Err(invalid("profile table must span [0, 1]"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Mass dependence `b(m, s)` of a daughter distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DaughterLaw {
    /// `2/s`: binary splitting with uniformly distributed daughters.
    UniformBinary,
    /// `h(m/s)/s`.
    Homogeneous { profile: Profile },
    /// `(ν+2) m^ν / s^{ν+1}`, mass conserving for `ν > -1`.
    PowerLaw { nu: f64 },
    /// Daughters near 0 or near the parent mass: for `s ≥ 2`,
    /// `b₁(s) = 2s(1-b₂)+b₂` on `m ≤ 1` and `b₂` on `s-1 ≤ m ≤ s`;
    /// for `s < 2` the two pieces overlap and `2/s` is used instead.
    #[serde(rename = "example-3.1", alias = "example")]
    Example { b2: f64 },
    /// `factor · inner`.
    Scaled { factor: f64, inner: Box<DaughterLaw> },
}

impl DaughterLaw {
    pub fn homogeneous(profile: Profile) -> Self {
        DaughterLaw::Homogeneous { profile }
    }

    pub fn scaled(factor: f64, inner: DaughterLaw) -> Self {
        DaughterLaw::Scaled {
            factor,
            inner: Box::new(inner),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DaughterLaw::UniformBinary => Ok(()),
            DaughterLaw::Homogeneous { profile } => profile.validate(),
            DaughterLaw::PowerLaw { nu } if !(*nu > -1.0) => {
                Err(invalid("power-law daughters need nu > -1"))
            }
            DaughterLaw::PowerLaw { .. } => Ok(()),
            DaughterLaw::Example { b2 } if !(0.0..1.0).contains(b2) => {
                Err(invalid("example kernel needs 0 ≤ b2 < 1"))
            }
            DaughterLaw::Example { .. } => Ok(()),
            DaughterLaw::Scaled { factor, inner } => {
                if !(*factor >= 0.0) {
                    return Err(invalid("scale factor must be nonnegative"));
                }
                inner.validate()
            }
        }
    }

    pub fn eval(&self, m: f64, s: f64) -> f64 {
        if !(m >= 0.0 && m <= s && s > 0.0) {
            return 0.0;
        }
        match self {
            DaughterLaw::UniformBinary => 2.0 / s,
            DaughterLaw::Homogeneous { profile } => profile.eval(m / s) / s,
            DaughterLaw::PowerLaw { nu } => (nu + 2.0) * (m / s).powf(*nu) / s,
            DaughterLaw::Example { b2 } => {
                if s < 2.0 {
                    2.0 / s
                } else if m <= 1.0 {
                    2.0 * s * (1.0 - b2) + b2
                } else if m >= s - 1.0 {
                    *b2
                } else {
                    0.0
                }
            }
            DaughterLaw::Scaled { factor, inner } => factor * inner.eval(m, s),
        }
    }

    /// Points in `(0, s)` where `b(·, s)` is not smooth.
    pub fn breakpoints(&self, s: f64) -> Vec<f64> {
        match self {
            DaughterLaw::Example { .. } if s >= 2.0 => vec![1.0, s - 1.0],
            DaughterLaw::Homogeneous {
                profile: Profile::Table { z, .. },
            } => z.iter().map(|t| t * s).collect(),
            DaughterLaw::Scaled { inner, .. } => inner.breakpoints(s),
            _ => Vec::new(),
        }
    }

    /// `n_r(s) = ∫₀^s m^r b(m, s) dm`.
    pub fn moment(&self, s: f64, r: f64) -> f64 {
        match self {
            DaughterLaw::UniformBinary => 2.0 * s.powf(r) / (r + 1.0),
            DaughterLaw::Homogeneous { profile } => s.powf(r) * profile.moment(r),
            DaughterLaw::PowerLaw { nu } => (nu + 2.0) * s.powf(r) / (r + nu + 1.0),
            DaughterLaw::Example { b2 } => {
                if s < 2.0 {
                    2.0 * s.powf(r) / (r + 1.0)
                } else {
                    let b1 = 2.0 * s * (1.0 - b2) + b2;
                    (b1 + b2 * (s.powf(r + 1.0) - (s - 1.0).powf(r + 1.0))) / (r + 1.0)
                }
            }
            DaughterLaw::Scaled { factor, inner } => factor * inner.moment(s, r),
        }
    }

    /// `n_r(s)` by Gauss–Legendre quadrature on the kernel's smooth pieces;
    /// independent of the closed forms in `moment`.
    pub fn moment_quadrature(&self, s: f64, r: f64, panels: usize) -> f64 {
        gauss_legendre_pieces(|m| m.powf(r) * self.eval(m, s), 0.0, s, &self.breakpoints(s), panels)
    }

    /// `𝔠_r(s) = n_r(s) / s^r`.
    pub fn normalized_moment(&self, s: f64, r: f64) -> f64 {
        match self {
            DaughterLaw::Homogeneous { profile } => profile.moment(r),
            _ => self.moment(s, r) / s.powf(r),
        }
    }

    /// `lim_{s→∞} 𝔠_r(s)` when the built-in form provides it.
    pub fn normalized_moment_limit(&self, r: f64) -> Option<f64> {
        match self {
            DaughterLaw::UniformBinary => Some(2.0 / (r + 1.0)),
            DaughterLaw::Homogeneous { profile } => Some(profile.moment(r)),
            DaughterLaw::PowerLaw { nu } => Some((nu + 2.0) / (r + nu + 1.0)),
            DaughterLaw::Example { b2 } => Some(if r > 1.0 {
                *b2
            } else if r == 1.0 {
                1.0
            } else {
                f64::INFINITY
            }),
            DaughterLaw::Scaled { factor, inner } => {
                inner.normalized_moment_limit(r).map(|v| factor * v)
            }
        }
    }

    /// `s · (∫_{1-η}^1 β^p(zs, s) dz)^{1/p}`, the scale-free form of the
    /// equi-integrability slab condition.
    pub fn scaled_slab(&self, s: f64, eta: f64, p: f64) -> f64 {
        match self {
            DaughterLaw::Homogeneous { profile } => profile.lp_slab(eta, p),
            DaughterLaw::UniformBinary => 2.0 * eta.powf(1.0 / p),
            DaughterLaw::PowerLaw { nu } => Profile::Power {
                coef: nu + 2.0,
                exponent: *nu,
            }
            .lp_slab(eta, p),
            DaughterLaw::Scaled { factor, inner } => factor * inner.scaled_slab(s, eta, p),
            DaughterLaw::Example { .. } => {
                let zb: Vec<f64> = self.breakpoints(s).iter().map(|m| m / s).collect();
                let v = gauss_legendre_pieces(
                    |z| self.eval(z * s, s).powf(p),
                    1.0 - eta,
                    1.0,
                    &zb,
                    4,
                );
                s * v.powf(1.0 / p)
            }
        }
    }

    /// `lim_{s→∞}` of `scaled_slab`, when known.
    pub fn scaled_slab_limit(&self, eta: f64, p: f64) -> Option<f64> {
        match self {
            DaughterLaw::Example { b2 } => Some(if *b2 > 0.0 { f64::INFINITY } else { 0.0 }),
            DaughterLaw::Scaled { factor, inner } => {
                inner.scaled_slab_limit(eta, p).map(|v| factor * v)
            }
            _ => Some(self.scaled_slab(1.0, eta, p)),
        }
    }

    /// Default `(β₀, l)` with `n₀(s) ≤ β₀(1 + s^l)`.
    pub fn default_count_bound(&self) -> (f64, f64) {
        match self {
            DaughterLaw::UniformBinary => (2.0, 0.0),
            DaughterLaw::Homogeneous { profile } => (profile.moment(0.0), 0.0),
            DaughterLaw::PowerLaw { nu } => ((nu + 2.0) / (nu + 1.0), 0.0),
            DaughterLaw::Example { b2 } => ((2.0f64).max(2.0 * (1.0 - b2)).max(2.0 * b2), 1.0),
            DaughterLaw::Scaled { factor, inner } => {
                let (b0, l) = inner.default_count_bound();
                (factor * b0, l)
            }
        }
    }
}

/// Daughter kernel `b(x, m, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaughterKernel {
    pub law: DaughterLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<SpatialModulation>,
}

impl DaughterKernel {
    pub fn new(law: DaughterLaw, modulation: Option<SpatialModulation>) -> Result<Self> {
        law.validate()?;
        if let Some(m) = &modulation {
            m.validate()?;
        }
        Ok(Self { law, modulation })
    }

    pub fn uniform_binary() -> Self {
        Self {
            law: DaughterLaw::UniformBinary,
            modulation: None,
        }
    }

    pub fn from_law(law: DaughterLaw) -> Result<Self> {
        Self::new(law, None)
    }

    pub fn eval(&self, x: [f64; 2], m: f64, s: f64) -> f64 {
        self.law.eval(m, s) * mod_factor(&self.modulation, x)
    }

    pub fn is_x_independent(&self) -> bool {
        self.modulation.map_or(true, |m| m.amplitude == 0.0)
    }

    pub fn spatial_factor(&self, x: [f64; 2]) -> f64 {
        mod_factor(&self.modulation, x)
    }

    /// `(b₀, l)` for the count bound `n₀(x, s) ≤ b₀(1 + s^l)`.
    pub fn count_bound(&self) -> (f64, f64) {
        let (b0, l) = self.law.default_count_bound();
        (b0 * mod_bounds(&self.modulation).1, l)
    }
}

/// `(n_r(x, s), N_r(x, s))` with `N_r = s^r - n_r`.
pub fn moment_n_r(b: &DaughterKernel, x: [f64; 2], s: f64, r: f64) -> Result<(f64, f64)> {
    if !(s > 0.0) {
        return Err(invalid(format!("parent mass must be positive, got {s}")));
    }
    if !(r >= 0.0) {
        return Err(invalid(format!("moment order must be nonnegative, got {r}")));
    }
    let n = b.law.moment(s, r) * b.spatial_factor(x);
    Ok((n, s.powf(r) - n))
}

/// x-independent kernel `β(m, s)` with its growth and equi-integrability parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominatingKernel {
    pub law: DaughterLaw,
    pub beta0: f64,
    pub l: f64,
    pub r0: f64,
    pub s0: f64,
}

impl DominatingKernel {
    pub fn new(law: DaughterLaw, beta0: f64, l: f64, r0: f64, s0: f64) -> Result<Self> {
        law.validate()?;
        if !(beta0 >= 0.0 && l >= 0.0 && r0 >= 0.0 && s0 >= 0.0) {
            return Err(invalid("β₀, l, r₀, s₀ must be nonnegative"));
        }
        Ok(Self {
            law,
            beta0,
            l,
            r0,
            s0,
        })
    }

    /// Uses the law's default count bound, `r₀ = 0` and the given `s₀`.
    pub fn with_defaults(law: DaughterLaw, s0: f64) -> Result<Self> {
        let (beta0, l) = law.default_count_bound();
        Self::new(law, beta0, l, 0.0, s0)
    }

    pub fn eval(&self, m: f64, s: f64) -> f64 {
        self.law.eval(m, s)
    }

    pub fn as_daughter(&self) -> DaughterKernel {
        DaughterKernel {
            law: self.law.clone(),
            modulation: None,
        }
    }
}

/// `𝔠_r(s)`.
pub fn normalized_moment(beta: &DominatingKernel, s: f64, r: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(invalid(format!("parent mass must be positive, got {s}")));
    }
    Ok(beta.law.normalized_moment(s, r))
}

/// `𝔀_r(s) = (1 + s^l) / (1 + s^r)`.
pub fn weight_ratio(s: f64, l: f64, r: f64) -> f64 {
    (1.0 + s.powf(l)) / (1.0 + s.powf(r))
}

fn weight_ratio_limit(l: f64, r: f64) -> f64 {
    if r > l {
        0.0
    } else if r == l {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Relative deviation `|n₁(x,s) - s| / s` at every sample; passes when the
/// worst deviation is within `tol`. `margin = tol - worst`, `statistic = worst`.
pub fn check_mass_conservation(
    b: &DaughterKernel,
    xs: &[[f64; 2]],
    ss: &[f64],
    tol: f64,
) -> Result<Certificate> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    if ss.iter().any(|&s| !(s > 0.0)) {
        return Err(invalid("parent masses must be positive"));
    }
    let xs: Vec<[f64; 2]> = if xs.is_empty() { vec![[0.0, 0.0]] } else { xs.to_vec() };
    let (worst, point) = xs
        .par_iter()
        .flat_map_iter(|&x| {
            ss.iter().map(move |&s| {
                let n1 = b.law.moment(s, 1.0) * b.spatial_factor(x);
                ((n1 - s).abs() / s, vec![x[0], x[1], s])
            })
        })
        .reduce(|| (0.0, Vec::new()), |a, c| if c.0 > a.0 { c } else { a });
    Ok(Certificate::from_margin(
        CertificateKind::MassConservation,
        tol - worst,
        worst,
        point,
        xs.len() * ss.len(),
        false,
    ))
}

/// Parameters of the de la Vallée-Poussin type equi-integrability criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquiIntegrability {
    pub r0: f64,
    pub s0: f64,
    pub eta: f64,
    pub p: f64,
    pub b1_bound: f64,
    pub b2_bound: f64,
}

/// Checks `𝔠_{r₀}(s) ≤ b1_bound` and `(∫_{1-η}^1 β^p(zs,s)dz)^{1/p} ≤ b2_bound/s`
/// for sampled `s ≥ s₀` and, where known, in the limit `s → ∞`.
/// The slab slack is reported in the scale-free form `b2_bound - s·(...)`.
pub fn check_equi_integrability(
    beta: &DominatingKernel,
    params: &EquiIntegrability,
    ss: &[f64],
) -> Result<Certificate> {
    let EquiIntegrability {
        r0,
        s0,
        eta,
        p,
        b1_bound,
        b2_bound,
    } = *params;
    if !(p > 1.0) {
        return Err(invalid(format!("p must exceed 1, got {p}")));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid(format!("eta must lie in (0, 1], got {eta}")));
    }
    let mut margin = f64::INFINITY;
    let mut stat = 0.0;
    let mut worst = Vec::new();
    let mut used = 0;
    let mut consider = |slack_a: f64, slack_b: f64, s: f64, lhs: f64| {
        let slack = slack_a.min(slack_b);
        if slack < margin {
            margin = slack;
            stat = lhs;
            worst = vec![s];
        }
    };
    for &s in ss.iter().filter(|&&s| s >= s0 && s > 0.0) {
        used += 1;
        let c = beta.law.normalized_moment(s, r0);
        let slab = beta.law.scaled_slab(s, eta, p);
        consider(b1_bound - c, b2_bound - slab, s, slab);
    }
    let mut cert_notes = Vec::new();
    if let (Some(c), Some(slab)) = (
        beta.law.normalized_moment_limit(r0),
        beta.law.scaled_slab_limit(eta, p),
    ) {
        used += 1;
        consider(b1_bound - c, b2_bound - slab, f64::INFINITY, slab);
        cert_notes.push("includes the analytic s → ∞ limit".to_string());
    }
    if used == 0 {
        return Err(invalid("no sample satisfies s ≥ s0"));
    }
    let mut cert = Certificate::from_margin(
        CertificateKind::EquiIntegrability,
        margin,
        stat,
        worst,
        used,
        false,
    );
    cert.notes = cert_notes;
    Ok(cert)
}

/// One row of the r₁ search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R1Sample {
    pub r: f64,
    pub sup: f64,
    pub margin: f64,
    pub worst_s: f64,
}

/// Outcome of `find_r1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R1Search {
    pub certificate: Certificate,
    pub r1: Option<f64>,
    pub sweep: Vec<R1Sample>,
}

/// Smallest half-integer `r > max{l, r₀}` with
/// `sup_s β₀𝔀_r(s) + 𝔠_r(s) < 1/(2M)` over `s_grid ∩ [s₀, ∞)` and the analytic limit.
pub fn find_r1(
    beta: &DominatingKernel,
    envelope_ratio: f64,
    s_grid: &[f64],
    r_max: f64,
) -> Result<R1Search> {
    if s_grid.is_empty() {
        return Err(invalid("s_grid must not be empty"));
    }
    if !(envelope_ratio >= 1.0) {
        return Err(invalid("envelope ratio M must be at least 1"));
    }
    let ss: Vec<f64> = s_grid
        .iter()
        .copied()
        .filter(|&s| s >= beta.s0 && s > 0.0)
        .collect();
    if ss.is_empty() {
        return Err(invalid("no s sample lies in [s0, ∞)"));
    }
    let threshold = 1.0 / (2.0 * envelope_ratio);
    let floor = beta.l.max(beta.r0);
    let mut r = (2.0 * floor).floor() / 2.0 + 0.5;
    let limit_known = beta.law.normalized_moment_limit(r).is_some();
    let mut sweep = Vec::new();
    while r <= r_max + 1e-12 {
        let mut sup = f64::NEG_INFINITY;
        let mut worst_s = f64::NAN;
        for &s in &ss {
            let v = beta.beta0 * weight_ratio(s, beta.l, r) + beta.law.normalized_moment(s, r);
            if v > sup {
                sup = v;
                worst_s = s;
            }
        }
        if let Some(c) = beta.law.normalized_moment_limit(r) {
            let v = beta.beta0 * weight_ratio_limit(beta.l, r) + c;
            if v >= sup {
                sup = v;
                worst_s = f64::INFINITY;
            }
        }
        let margin = threshold - sup;
        sweep.push(R1Sample {
            r,
            sup,
            margin,
            worst_s,
        });
        if margin > 0.0 {
            let cert = Certificate::from_margin(
                CertificateKind::R1Threshold,
                margin,
                sup,
                vec![r, worst_s],
                ss.len(),
                true,
            );
            return Ok(R1Search {
                certificate: with_limit_note(cert, limit_known),
                r1: Some(r),
                sweep,
            });
        }
        r += 0.5;
    }
    let best = sweep
        .iter()
        .copied()
        .max_by(|a, b| a.margin.total_cmp(&b.margin))
        .ok_or_else(|| invalid("r_max is below the first admissible r"))?;
    let cert = Certificate::from_margin(
        CertificateKind::R1Threshold,
        best.margin,
        best.sup,
        vec![best.r, best.worst_s],
        ss.len(),
        true,
    )
    .with_note(format!("no r ≤ {r_max} reaches the threshold {threshold}"));
    Ok(R1Search {
        certificate: with_limit_note(cert, limit_known),
        r1: None,
        sweep,
    })
}

fn with_limit_note(cert: Certificate, limit_known: bool) -> Certificate {
    if limit_known {
        cert.with_note("includes the analytic s → ∞ limit")
    } else {
        cert
    }
}

/// Pointwise `b(x, m, s) ≤ β(m, s)` over all samples with `m ≤ s`.
/// Comparisons allow a relative rounding slack of 1e-12.
/// `statistic = max(b - β)`.
pub fn check_domination(
    b: &DaughterKernel,
    beta: &DominatingKernel,
    xs: &[[f64; 2]],
    ms: &[f64],
    ss: &[f64],
) -> Certificate {
    let xs: Vec<[f64; 2]> = if xs.is_empty() { vec![[0.0, 0.0]] } else { xs.to_vec() };
    let mut excess = f64::NEG_INFINITY;
    let mut raw = f64::NEG_INFINITY;
    let mut worst = Vec::new();
    let mut used = 0;
    for &x in &xs {
        for &s in ss {
            for &m in ms.iter().filter(|&&m| m <= s) {
                used += 1;
                let bv = b.eval(x, m, s);
                let bt = beta.eval(m, s);
                let e = bv - bt - 1e-12 * bv.abs().max(bt.abs());
                if e > excess {
                    excess = e;
                    worst = vec![x[0], x[1], m, s];
                }
                raw = raw.max(bv - bt);
            }
        }
    }
    if used == 0 {
        return Certificate::from_margin(CertificateKind::Domination, 0.0, 0.0, vec![], 0, false);
    }
    Certificate::from_margin(
        CertificateKind::Domination,
        if excess > 0.0 { -excess } else { (-raw).max(0.0) },
        raw,
        worst,
        used,
        false,
    )
}

/// Mass dependence of a coagulation rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoagLaw {
    #[serde(rename = "constant-k", alias = "constant")]
    Constant { k0: f64 },
    /// `m + s`; bounded by `(1+m)(1+s)`, i.e. only the `q = 1` growth class.
    Sum,
    /// `k₀(1 + m^q)(1 + s^q)`.
    ProductBounded { k0: f64, q: f64 },
    /// Bilinear interpolation of a symmetric table; held constant outside.
    Table { m: Vec<f64>, values: Vec<f64> },
}

impl CoagLaw {
    pub fn eval(&self, m: f64, s: f64) -> f64 {
        match self {
            CoagLaw::Constant { k0 } => *k0,
            CoagLaw::Sum => m + s,
            CoagLaw::ProductBounded { k0, q } => k0 * (1.0 + m.powf(*q)) * (1.0 + s.powf(*q)),
            CoagLaw::Table { m: ms, values } => {
                let n = ms.len();
                let row = |i: usize| -> Vec<f64> { values[i * n..(i + 1) * n].to_vec() };
                let col: Vec<f64> = (0..n).map(|i| interp_clamped(ms, &row(i), s)).collect();
                interp_clamped(ms, &col, m)
            }
        }
    }

    /// `(k₀, q)` with `k ≤ k₀(1+m^q)(1+s^q)`.
    pub fn growth(&self) -> (f64, f64) {
        match self {
            CoagLaw::Constant { k0 } => (*k0, 0.0),
            CoagLaw::Sum => (1.0, 1.0),
            CoagLaw::ProductBounded { k0, q } => (*k0, *q),
            CoagLaw::Table { values, .. } => {
                (values.iter().copied().fold(0.0, f64::max) / 4.0, 0.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            CoagLaw::Constant { k0 } if !(*k0 >= 0.0) => Err(invalid("k0 must be nonnegative")),
            CoagLaw::ProductBounded { k0, q } if !(*k0 >= 0.0 && *q >= 0.0) => {
                Err(invalid("k0 and q must be nonnegative"))
            }
            CoagLaw::Table { m, values } => {
                let n = m.len();
                if n < 2 || values.len() != n * n {
                    return Err(invalid("coagulation table must be n × n with n ≥ 2"));
                }
                if !m.windows(2).all(|w| w[1] > w[0]) {
                    return Err(invalid("table masses must be strictly increasing"));
                }
                for i in 0..n {
                    for j in 0..n {
                        let v = values[i * n + j];
                        if !(v >= 0.0) || v != values[j * n + i] {
                            return Err(invalid("coagulation table must be symmetric and nonnegative"));
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Coagulation kernel `k(x, m, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoagulationKernel {
    pub law: CoagLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<SpatialModulation>,
}

impl CoagulationKernel {
    pub fn new(law: CoagLaw, modulation: Option<SpatialModulation>) -> Result<Self> {
        law.validate()?;
        if let Some(m) = &modulation {
            m.validate()?;
        }
        Ok(Self { law, modulation })
    }

    pub fn constant(k0: f64) -> Self {
        Self {
            law: CoagLaw::Constant { k0 },
            modulation: None,
        }
    }

    pub fn eval(&self, x: [f64; 2], m: f64, s: f64) -> f64 {
        self.law.eval(m, s) * mod_factor(&self.modulation, x)
    }

    pub fn spatial_factor(&self, x: [f64; 2]) -> f64 {
        mod_factor(&self.modulation, x)
    }

    /// `(k₀, q)` including the spatial modulation's upper envelope.
    pub fn growth(&self) -> (f64, f64) {
        let (k0, q) = self.law.growth();
        (k0 * mod_bounds(&self.modulation).1, q)
    }

    /// True when the kernel only satisfies the growth bound with `q = 1`.
    pub fn outside_sublinear_growth(&self) -> bool {
        matches!(self.law, CoagLaw::Sum)
    }
}

/// All model coefficients of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSuite {
    pub rate: AbsorptionRate,
    pub daughters: DaughterKernel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominating: Option<DominatingKernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coagulation: Option<CoagulationKernel>,
}

/// Integrates `f` over `(0, s)` against a daughter law, used by tests and
/// diagnostics that need moments of tabulated kernels.
pub fn integrate_against(law: &DaughterLaw, s: f64, f: impl Fn(f64) -> f64) -> f64 {
    let pts = law.breakpoints(s);
    if pts.is_empty() {
        gauss_legendre(|m| f(m) * law.eval(m, s), 0.0, s, 16)
    } else {
        gauss_legendre_pieces(|m| f(m) * law.eval(m, s), 0.0, s, &pts, 8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_moments() {
        let b = DaughterKernel::uniform_binary();
        let (n1, big1) = moment_n_r(&b, [0.0; 2], 3.0, 1.0).unwrap();
        assert!((n1 - 3.0).abs() < 1e-14 && big1.abs() < 1e-14);
        let (n0, _) = moment_n_r(&b, [0.0; 2], 7.0, 0.0).unwrap();
        assert_eq!(n0, 2.0);
        let (n2, big2) = moment_n_r(&b, [0.0; 2], 3.0, 2.0).unwrap();
        assert!((n2 - 6.0).abs() < 1e-12 && (big2 - 3.0).abs() < 1e-12);
        assert!(moment_n_r(&b, [0.0; 2], 0.0, 1.0).is_err());
    }

    #[test]
    fn closed_forms_agree_with_quadrature() {
        let laws = [
            DaughterLaw::UniformBinary,
            DaughterLaw::PowerLaw { nu: 2.0 },
            DaughterLaw::Example { b2: 0.3 },
            DaughterLaw::homogeneous(Profile::Table {
                z: vec![0.0, 0.5, 1.0],
                h: vec![3.0, 1.0, 3.0],
            }),
        ];
        for law in &laws {
            for &s in &[0.7, 2.0, 5.5, 40.0] {
                for &r in &[0.0, 1.0, 2.5] {
                    let a = law.moment(s, r);
                    let q = law.moment_quadrature(s, r, 16);
                    assert!((a - q).abs() <= 1e-9 * a.abs().max(1.0), "{law:?} s={s} r={r}: {a} vs {q}");
                }
            }
        }
    }

    #[test]
    fn example_normalized_moment_closed_form() {
        // 𝔠_r(s) = (b₁(s)/s^r + b₂ s (1 - (1 - 1/s)^{r+1})) / (r + 1)
        let b2: f64 = 0.5;
        let law = DaughterLaw::Example { b2 };
        for &s in &[2.0, 3.0, 10.0, 1e3] {
            for &r in &[1.5f64, 2.0, 4.0] {
                let b1 = 2.0 * s * (1.0 - b2) + b2;
                let expect = (b1 / s.powf(r) + b2 * s * (1.0 - (1.0 - 1.0 / s).powf(r + 1.0))) / (r + 1.0);
                assert!((law.normalized_moment(s, r) - expect).abs() < 1e-12 * expect.max(1.0));
            }
        }
        assert!((law.normalized_moment(1e7, 3.0) - 0.5).abs() < 1e-5);
        assert_eq!(law.normalized_moment_limit(3.0), Some(0.5));
    }

    #[test]
    fn normalized_moments_non_increasing_in_r() {
        let laws = [
            DaughterLaw::Example { b2: 0.5 },
            DaughterLaw::UniformBinary,
            DaughterLaw::PowerLaw { nu: -0.5 },
        ];
        for law in &laws {
            for &s in &[0.5, 2.0, 9.0, 200.0] {
                let vals: Vec<f64> = (0..20).map(|k| law.normalized_moment(s, 0.5 * k as f64)).collect();
                assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-14), "{law:?} at s={s}");
            }
        }
    }

    #[test]
    fn homogeneous_normalized_moment_is_s_independent() {
        let law = DaughterLaw::homogeneous(Profile::Constant { value: 2.0 });
        let vals: Vec<f64> = [0.1, 1.0, 10.0, 1e4].iter().map(|&s| law.normalized_moment(s, 3.0)).collect();
        assert!(vals.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn mass_conservation_certificates() {
        let ss = [0.1, 1.0, 5.0, 50.0];
        let c = check_mass_conservation(&DaughterKernel::uniform_binary(), &[], &ss, 1e-10).unwrap();
        assert!(c.passed() && c.is_consistent());
        let half = DaughterKernel::from_law(DaughterLaw::scaled(0.5, DaughterLaw::UniformBinary)).unwrap();
        let c = check_mass_conservation(&half, &[], &ss, 1e-6).unwrap();
        assert!(!c.passed() && c.is_consistent());
        assert!((c.statistic - 0.5).abs() < 1e-14);
        let ex = DaughterKernel::from_law(DaughterLaw::Example { b2: 0.4 }).unwrap();
        assert!(check_mass_conservation(&ex, &[], &ss, 1e-12).unwrap().passed());
    }

    #[test]
    fn domination_examples() {
        let beta3 = DominatingKernel::with_defaults(DaughterLaw::scaled(1.5, DaughterLaw::UniformBinary), 1.0).unwrap();
        let b = DaughterKernel::new(
            DaughterLaw::UniformBinary,
            Some(SpatialModulation { amplitude: 0.5, wavenumber: 1.0 }),
        )
        .unwrap();
        let xs: Vec<[f64; 2]> = (0..64).map(|i| [i as f64 * 0.1, 0.0]).chain([[std::f64::consts::FRAC_PI_2, 0.0]]).collect();
        let ms: Vec<f64> = (1..40).map(|i| i as f64 * 0.25).collect();
        let c = check_domination(&b, &beta3, &xs, &ms, &ms);
        assert!(c.passed() && c.is_consistent(), "{c:?}");
        let beta1 = DominatingKernel::with_defaults(DaughterLaw::scaled(0.5, DaughterLaw::UniformBinary), 1.0).unwrap();
        let c = check_domination(&DaughterKernel::uniform_binary(), &beta1, &[], &ms, &ms);
        assert!(!c.passed() && c.is_consistent());
        let same = DominatingKernel::with_defaults(DaughterLaw::UniformBinary, 1.0).unwrap();
        let c = check_domination(&DaughterKernel::uniform_binary(), &same, &[], &ms, &ms);
        assert!(c.passed() && c.margin == 0.0);
    }

    #[test]
    fn envelopes_hold() {
        let a = AbsorptionRate::new(
            MassLaw::Power { coef: 1.0, exponent: 1.0 },
            Some(SpatialModulation { amplitude: 0.5, wavenumber: 1.0 }),
        )
        .unwrap();
        let xs: Vec<[f64; 2]> = (0..50).map(|i| [i as f64 * 0.13, 0.0]).collect();
        let ms: Vec<f64> = (1..30).map(|i| i as f64 * 0.3).collect();
        assert!(a.check_envelopes(&xs, &ms));
        assert!((a.envelope_ratio() - 3.0).abs() < 1e-15);
        let g = a.growth().unwrap();
        assert!((g.a0 - 0.5).abs() < 1e-15 && g.gamma == 1.0);
    }

    #[test]
    fn coagulation_kernel_growth_and_symmetry() {
        let k = CoagulationKernel::new(CoagLaw::ProductBounded { k0: 0.5, q: 0.5 }, None).unwrap();
        for &(m, s) in &[(0.1, 3.0), (2.0, 7.0)] {
            assert_eq!(k.eval([0.0; 2], m, s), k.eval([0.0; 2], s, m));
        }
        assert_eq!(k.growth(), (0.5, 0.5));
        assert!(CoagulationKernel::new(CoagLaw::Table { m: vec![0.0, 1.0], values: vec![1.0, 2.0, 3.0, 1.0] }, None).is_err());
        let t = CoagulationKernel::new(CoagLaw::Table { m: vec![0.0, 1.0], values: vec![1.0, 2.0, 2.0, 3.0] }, None).unwrap();
        assert!((t.eval([0.0; 2], 0.5, 0.5) - 2.0).abs() < 1e-15);
    }
}
