//! Scenario files. One TOML document per run; every table except the
//! grids, kernels and initial datum has defaults, and the resolved form
//! (defaults filled in, command-line overrides applied) is what goes into
//! the run report.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fragcoag_core::grid::{Boundary, MassGrid, MassGridDescriptor, NormMode, Spacing, SpatialGrid, StateField};
use fragcoag_core::kernels::{
    AbsorptionRate, CoagulationKernel, DaughterKernel, DaughterLaw, DominatingKernel, EquiIntegrability,
};
use fragcoag_core::transport::SemigroupAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Simulate,
    Certify,
    VerifySuite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Strang splitting of transport, fragmentation and coagulation.
    Split,
    /// Picard iteration of the Duhamel formula, window by window.
    Mild,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub mass_grid: MassGridDescriptor,
    /// Omitted for space-homogeneous runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceSpec>,
    #[serde(default)]
    pub kernels: Kernels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<SemigroupAction>,
    pub initial: InitialDatum,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub certify: CertifySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kernels {
    /// Fragmentation rate `a`; no fragmentation when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<AbsorptionRate>,
    /// Daughter distribution `b`; uniform binary when a rate is given without one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub daughters: Option<DaughterKernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominating: Option<DominatingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coagulation: Option<CoagulationKernel>,
}

/// `β` with optional count bound (defaults from the law) and `s₀`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominatingSpec {
    pub law: DaughterLaw,
    #[serde(default)]
    pub beta0: Option<f64>,
    #[serde(default)]
    pub l: Option<f64>,
    #[serde(default)]
    pub r0: f64,
    #[serde(default = "one")]
    pub s0: f64,
}

impl DominatingSpec {
    pub fn build(&self) -> Result<DominatingKernel> {
        let (b0, l) = self.law.default_count_bound();
        Ok(DominatingKernel::new(
            self.law.clone(),
            self.beta0.unwrap_or(b0),
            self.l.unwrap_or(l),
            self.r0,
            self.s0,
        )?)
    }

    fn resolve(&mut self) {
        let (b0, l) = self.law.default_count_bound();
        self.beta0.get_or_insert(b0);
        self.l.get_or_insert(l);
    }
}

fn one() -> f64 {
    1.0
}

/// Spatial factor of an initial datum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpatialProfile {
    #[default]
    Uniform,
    Gaussian { center: Vec<f64>, width: f64 },
}

impl SpatialProfile {
    fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            SpatialProfile::Uniform => 1.0,
            SpatialProfile::Gaussian { center, width } => gaussian(center, *width, x),
        }
    }
}

fn gaussian(center: &[f64], width: f64, x: [f64; 2]) -> f64 {
    let d2: f64 = center.iter().zip(x).map(|(c, v)| (v - c).powi(2)).sum();
    (-d2 / (2.0 * width * width)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialDatum {
    Zero,
    /// `amplitude · e^{-rate·m} · profile(x)`.
    Exponential {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        rate: f64,
        #[serde(default)]
        profile: SpatialProfile,
    },
    /// `amplitude · exp(-|x - center|²/(2 width²)) · e^{-mass_rate·m}`.
    Gaussian {
        #[serde(default = "one")]
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        mass_rate: f64,
    },
    /// `amplitude · (1 + m)^{-exponent} · profile(x)`.
    PowerTail {
        #[serde(default = "one")]
        amplitude: f64,
        exponent: f64,
        #[serde(default)]
        profile: SpatialProfile,
    },
    /// Linear interpolation in `m`, zero outside the table.
    Tabulated {
        m: Vec<f64>,
        values: Vec<f64>,
        #[serde(default)]
        profile: SpatialProfile,
    },
}

impl InitialDatum {
    pub fn eval(&self, x: [f64; 2], m: f64) -> f64 {
        match self {
            InitialDatum::Zero => 0.0,
            InitialDatum::Exponential { amplitude, rate, profile } => amplitude * (-rate * m).exp() * profile.eval(x),
            InitialDatum::Gaussian {
                amplitude,
                center,
                width,
                mass_rate,
            } => amplitude * gaussian(center, *width, x) * (-mass_rate * m).exp(),
            InitialDatum::PowerTail {
                amplitude,
                exponent,
                profile,
            } => amplitude * (1.0 + m).powf(-exponent) * profile.eval(x),
            InitialDatum::Tabulated { m: ms, values, profile } => {
                if m < ms[0] || m > ms[ms.len() - 1] {
                    return 0.0;
                }
                let k = (ms.partition_point(|&v| v <= m).max(1) - 1).min(ms.len() - 2);
                let t = (m - ms[k]) / (ms[k + 1] - ms[k]);
                (values[k] + t * (values[k + 1] - values[k])) * profile.eval(x)
            }
        }
    }

    fn problems(&self, out: &mut Vec<String>) {
        match self {
            InitialDatum::Tabulated { m, values, .. } => {
                if m.len() < 2 || m.len() != values.len() {
                    out.push("tabulated initial datum needs matching m and values with at least two rows".into());
                } else if !m.windows(2).all(|w| w[1] > w[0]) {
                    out.push("tabulated initial datum: m must be strictly increasing".into());
                }
                if values.iter().any(|v| !(*v >= 0.0)) {
                    out.push("initial datum must be nonnegative".into());
                }
            }
            InitialDatum::Gaussian { width, .. } if !(*width > 0.0) => {
                out.push("gaussian initial datum needs width > 0".into());
            }
            InitialDatum::Exponential { amplitude, .. }
            | InitialDatum::Gaussian { amplitude, .. }
            | InitialDatum::PowerTail { amplitude, .. }
                if !(*amplitude >= 0.0) =>
            {
                out.push("initial datum must be nonnegative (amplitude < 0)".into());
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    /// Split by default; mild when a coagulation kernel is given.
    pub method: Option<Method>,
    pub t_end: f64,
    /// Time step of the splitting, quadrature step of the Duhamel integral.
    pub dt: f64,
    pub window: f64,
    pub picard_tol: f64,
    pub max_iters: usize,
    pub max_retries: usize,
    pub auto_window: bool,
    pub target_factor: f64,
    pub window_floor: f64,
    pub blowup_growth: f64,
    /// Weight exponent of the state space `𝒳_r`.
    pub r: f64,
    /// Exponent of the larger space `𝒳_p` (auto-windowing); `r - q` when absent.
    pub p: Option<f64>,
    /// Integral-in-x or sup-in-x norm; sup for the mild solver by default.
    pub norm: Option<NormMode>,
    /// Largest fragmentation substep inside the linear model.
    pub max_dt: f64,
    pub snapshot_stride: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            method: None,
            t_end: 1.0,
            dt: 0.01,
            window: 0.1,
            picard_tol: 1e-10,
            max_iters: 200,
            max_retries: 6,
            auto_window: false,
            target_factor: 0.5,
            window_floor: 1e-6,
            blowup_growth: 10.0,
            r: 1.0,
            p: None,
            norm: None,
            max_dt: 0.05,
            snapshot_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySpec {
    /// Tolerance of the daughter mass-conservation check, relative to `s`.
    pub mass_tol: f64,
    /// Parent masses for the kernel checks: `s_count` log-spaced points in `[s_min, s_max]`.
    pub s_min: f64,
    pub s_max: f64,
    pub s_count: usize,
    /// Largest `r` tried by the r₁ search.
    pub r_max: f64,
    /// Envelope ratio `M = sup α₂/α₁`; taken from the rate when absent.
    pub envelope_ratio: Option<f64>,
    pub equi_integrability: Option<EquiIntegrability>,
    pub miyadera: Option<MiyaderaSpec>,
    /// Seeded probe fields (Miyadera, Lipschitz, semigroup bounds).
    pub probes: usize,
    pub moment_r: f64,
    pub moment_tol: f64,
    pub commutation_tol: f64,
    pub ledger_tol: f64,
    pub domination_tol: f64,
}

impl Default for CertifySpec {
    fn default() -> Self {
        Self {
            mass_tol: 1e-8,
            s_min: 1e-2,
            s_max: 1e6,
            s_count: 200,
            r_max: 20.0,
            envelope_ratio: None,
            equi_integrability: None,
            miyadera: None,
            probes: 20,
            moment_r: 2.0,
            moment_tol: 1e-4,
            commutation_tol: 1e-6,
            ledger_tol: 1e-4,
            domination_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiyaderaSpec {
    /// Fixed `λ`; when absent the smallest passing `λ*` is searched and checked.
    pub lambda: Option<f64>,
    pub lambda_max: f64,
    /// Weight exponent of the norm; the solver's `r` when absent.
    pub r: Option<f64>,
}

impl Default for MiyaderaSpec {
    fn default() -> Self {
        Self {
            lambda: None,
            lambda_max: 1e4,
            r: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Field dumps at the snapshots closest to these times; the final state is always written.
    pub snapshot_times: Vec<f64>,
    /// Also write each dump as CSV.
    pub csv_fields: bool,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub resolution_scale: Option<f64>,
    pub tmax: Option<f64>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Applies the overrides and fills every default, so the result
    /// serialises to the complete configuration actually run.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.tmax {
            if !(t > 0.0) {
                bail!("--tmax must be positive");
            }
            self.solver.t_end = t;
        }
        if let Some(f) = o.resolution_scale {
            if !(f > 0.0 && f.is_finite()) {
                bail!("--resolution-scale must be positive");
            }
            let scale = |n: usize| ((n as f64 * f).round() as usize).max(2);
            self.mass_grid.cells = scale(self.mass_grid.cells);
            if let Some(sp) = self.space.as_mut() {
                sp.nodes = sp.nodes.iter().map(|&n| scale(n)).collect();
            }
        }
        if self.kernels.rate.is_some() && self.kernels.daughters.is_none() {
            self.kernels.daughters = Some(DaughterKernel::uniform_binary());
        }
        if let Some(d) = self.kernels.dominating.as_mut() {
            d.resolve();
        }
        let coag = self.kernels.coagulation.is_some();
        self.solver
            .method
            .get_or_insert(if coag { Method::Mild } else { Method::Split });
        let mild = self.solver.method == Some(Method::Mild);
        self.solver
            .norm
            .get_or_insert(if mild { NormMode::Sup } else { NormMode::Integral });
        if let Some(m) = self.certify.miyadera.as_mut() {
            m.r.get_or_insert(self.solver.r);
        }
        if self.certify.envelope_ratio.is_none() {
            self.certify.envelope_ratio = Some(self.kernels.rate.as_ref().map_or(1.0, |r| r.envelope_ratio()));
        }
        Ok(self)
    }

    /// Every violated condition, each named after the condition it breaks.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let g = &self.mass_grid;
        if g.cells < 2 {
            out.push("mass grid needs at least two cells".into());
        }
        if !(g.m_max > 0.0 && g.m_max.is_finite()) {
            out.push("mass grid needs 0 < m_max < ∞".into());
        }
        if g.spacing == Spacing::Geometric && g.first_edge.is_none() {
            out.push("geometric mass grid needs first_edge".into());
        }
        if let Some(sp) = &self.space {
            let d = sp.nodes.len();
            if !(d == 1 || d == 2) || sp.lower.len() != d || sp.upper.len() != d {
                out.push("space needs lower, upper and nodes of the same length 1 or 2".into());
            }
        }
        let s = &self.solver;
        if !(s.t_end > 0.0) {
            out.push("solver.t_end must be positive".into());
        }
        if !(s.dt > 0.0) {
            out.push("solver.dt must be positive".into());
        }
        if !(s.window > 0.0) {
            out.push("solver.window must be positive".into());
        }
        if !(s.r >= 0.0) {
            out.push("solver.r must be nonnegative".into());
        }
        if !(s.max_dt > 0.0) {
            out.push("solver.max_dt must be positive".into());
        }
        self.initial.problems(&mut out);

        let k = &self.kernels;
        if let Some(d) = &k.daughters {
            if let Err(e) = d.law.validate() {
                out.push(format!("daughter kernel: {e}"));
            }
        }
        if let Some(dom) = &k.dominating {
            match dom.build() {
                Err(e) => out.push(format!("dominating kernel: {e}")),
                Ok(beta) => {
                    if !(s.r > 1.0f64.max(beta.l)) {
                        out.push(format!("r > max{{1, l}} violated (r = {}, l = {})", s.r, beta.l));
                    }
                }
            }
        }
        if let Some(c) = &k.coagulation {
            if g.spacing != Spacing::Uniform {
                out.push("coagulation needs a uniform mass grid (bin alignment of the convolution)".into());
            }
            let (_, q) = c.growth();
            if let Some(gamma) = k.rate.as_ref().and_then(|r| r.growth()).map(|gp| gp.gamma) {
                if !(q < gamma) {
                    out.push(format!("q < γ violated (q = {q}, γ = {gamma})"));
                }
                if s.r < q {
                    out.push(format!("p = r - q ≥ 0 violated (r = {}, q = {q})", s.r));
                }
            }
        }
        if self.solver.method == Some(Method::Mild) && k.coagulation.is_none() {
            out.push("solver.method = \"mild\" needs a coagulation kernel".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            return Ok(());
        }
        bail!(
            "invalid scenario {:?}:\n{}",
            self.name,
            problems.iter().map(|p| format!("  - {p}")).collect::<Vec<_>>().join("\n")
        )
    }

    pub fn grids(&self) -> Result<(Arc<MassGrid>, Arc<SpatialGrid>)> {
        let mg = MassGrid::from_descriptor(&self.mass_grid)?;
        let sg = match &self.space {
            None => SpatialGrid::unit_interval(),
            Some(sp) if sp.nodes.len() == 1 => SpatialGrid::new_1d(sp.lower[0], sp.upper[0], sp.nodes[0], sp.boundary)?,
            Some(sp) => SpatialGrid::new_2d(
                [sp.lower[0], sp.lower[1]],
                [sp.upper[0], sp.upper[1]],
                [sp.nodes[0], sp.nodes[1]],
                sp.boundary,
            )?,
        };
        Ok((Arc::new(mg), Arc::new(sg)))
    }

    pub fn norm_mode(&self) -> NormMode {
        self.solver.norm.unwrap_or(NormMode::Integral)
    }

    pub fn initial_field(&self, mg: &Arc<MassGrid>, sg: &Arc<SpatialGrid>) -> StateField {
        let datum = self.initial.clone();
        StateField::from_fn(mg.clone(), sg.clone(), self.norm_mode(), move |x, m| datum.eval(x, m))
    }

    pub fn transport_action(&self) -> SemigroupAction {
        self.transport.clone().unwrap_or(SemigroupAction::Identity)
    }
}
