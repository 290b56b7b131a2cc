//! Executes a resolved scenario in one of the three modes and writes the
//! artifacts: `moments.csv`, `fields/*.bin`, `report.json`, `certificates.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use fragcoag_core::coagulation::{lipschitz_probe, CoagulationOperator, TruncatedCoagulation};
use fragcoag_core::fragmentation::{
    commutation_check, domination_violations, find_lambda_star, miyadera_margin, moment_inequality_check,
    FragmentationOperator, MiyaderaOptions,
};
use fragcoag_core::grid::{weighted_norm, MassGrid, SpatialGrid, StateField};
use fragcoag_core::io::{field_csv, moments_csv, write_field, GridDescriptor};
use fragcoag_core::kernels::{check_domination, check_equi_integrability, check_mass_conservation, find_r1};
use fragcoag_core::solver::{
    continue_maximal, fit_semigroup_bounds, split_solve, Ledger, LinearModel, MildSolveConfig, SemigroupBounds,
    SplitOptions, SplitParts, Termination, Trajectory, WindowRecord,
};
use fragcoag_core::transport::{gronwall_flow_check, FlowPair, SemigroupAction};
use fragcoag_core::{Certificate, CertificateKind};

use crate::probes::random_probes;
use crate::scenario::{Method, Mode, Scenario};

/// How a run ended, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CertificateFailure,
    SuspectedBlowup,
    Failed,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Failed => 1,
            Outcome::CertificateFailure => 2,
            Outcome::SuspectedBlowup => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedCertificate {
    pub name: String,
    #[serde(flatten)]
    pub certificate: Certificate,
}

fn named(name: &str, certificate: Certificate) -> NamedCertificate {
    NamedCertificate {
        name: name.to_string(),
        certificate,
    }
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    mode: Mode,
    /// The complete configuration that was run, defaults included.
    config: &'a Scenario,
    #[serde(skip_serializing_if = "Option::is_none")]
    termination: Option<&'a Termination>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_ledger: Option<Ledger>,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    windows: &'a [WindowRecord],
    #[serde(skip_serializing_if = "Option::is_none")]
    measured_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    semigroup_bounds: Option<SemigroupBounds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_star: Option<f64>,
    certificates: &'a [NamedCertificate],
    all_certificates_pass: bool,
    files: Vec<String>,
}

/// Extra numbers found along the way that belong in the report.
#[derive(Debug, Default)]
struct Findings {
    bounds: Option<SemigroupBounds>,
    r1: Option<f64>,
    lambda_star: Option<f64>,
}

struct Model {
    mg: Arc<MassGrid>,
    sg: Arc<SpatialGrid>,
    u0: StateField,
    transport: SemigroupAction,
    frag: Option<FragmentationOperator>,
    coag: Option<CoagulationOperator>,
}

impl Model {
    fn build(s: &Scenario) -> Result<Self> {
        let (mg, sg) = s.grids()?;
        let u0 = s.initial_field(&mg, &sg);
        let frag = match (&s.kernels.rate, &s.kernels.daughters) {
            (Some(rate), Some(b)) if !rate.is_zero() => {
                Some(FragmentationOperator::new(mg.clone(), sg.clone(), rate, b)?)
            }
            _ => None,
        };
        let coag = match &s.kernels.coagulation {
            Some(k) => Some(CoagulationOperator::new(mg.clone(), sg.clone(), k.clone())?),
            None => None,
        };
        Ok(Self {
            mg,
            sg,
            u0,
            transport: s.transport_action(),
            frag,
            coag,
        })
    }

    fn linear(&self, s: &Scenario) -> Result<LinearModel> {
        Ok(LinearModel::new(self.transport.clone(), self.frag.clone(), s.solver.max_dt)?)
    }

    fn probes(&self, s: &Scenario) -> Vec<StateField> {
        random_probes(&self.mg, &self.sg, s.norm_mode(), s.certify.probes.max(1), s.seed)
    }

    /// `q' = q/γ` and `p = r - q` of the smoothing estimate; without
    /// fragmentation there is no smoothing and `p = r`.
    fn exponents(&self, s: &Scenario) -> (f64, f64) {
        let q = s.kernels.coagulation.as_ref().map_or(0.0, |k| k.growth().1);
        let gamma = s.kernels.rate.as_ref().and_then(|r| r.growth()).map(|g| g.gamma);
        match gamma {
            Some(g) if self.frag.is_some() => (s.solver.p.unwrap_or(s.solver.r - q), q / g),
            _ => (s.solver.p.unwrap_or(s.solver.r), 0.0),
        }
    }
}

fn mild_config(s: &Scenario, bounds: Option<SemigroupBounds>) -> MildSolveConfig {
    let v = &s.solver;
    MildSolveConfig {
        window: v.window,
        dt: v.dt,
        picard_tol: v.picard_tol,
        max_iters: v.max_iters,
        max_retries: v.max_retries,
        bounds,
        auto_window: v.auto_window,
        target_factor: v.target_factor,
        window_floor: v.window_floor,
        blowup_growth: v.blowup_growth,
        snapshot_stride: v.snapshot_stride,
        ..MildSolveConfig::default()
    }
}

fn simulate(s: &Scenario, model: &Model, want_bounds: bool, found: &mut Findings) -> Result<Trajectory> {
    let v = &s.solver;
    match v.method.unwrap_or(Method::Split) {
        Method::Split => {
            let parts = SplitParts {
                transport: Some(model.transport.clone()),
                fragmentation: model.frag.clone(),
                coagulation: model.coag.clone(),
            };
            let opts = SplitOptions {
                r: v.r,
                snapshot_stride: v.snapshot_stride,
                ..SplitOptions::default()
            };
            Ok(split_solve(&model.u0, v.t_end, v.dt, &parts, &opts)?)
        }
        Method::Mild => {
            let coag = model.coag.as_ref().context("the mild solver needs a coagulation kernel")?;
            let linear = model.linear(s)?;
            let bounds = if v.auto_window || want_bounds {
                let (p, q_prime) = model.exponents(s);
                Some(fit_semigroup_bounds(&linear, &model.probes(s), v.r, p, q_prime, v.window)?)
            } else {
                None
            };
            found.bounds = bounds;
            Ok(continue_maximal(&model.u0, &mild_config(s, bounds), &linear, coag, v.r, v.t_end)?)
        }
    }
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// At most `limit` spatial sample points, evenly strided.
fn sample_points(sg: &SpatialGrid, limit: usize) -> Vec<[f64; 2]> {
    let pts = sg.points();
    let stride = pts.len().div_ceil(limit).max(1);
    pts.into_iter().step_by(stride).collect()
}

fn kernel_certificates(s: &Scenario, model: &Model, found: &mut Findings) -> Result<Vec<NamedCertificate>> {
    let c = &s.certify;
    let mut out = Vec::new();
    let xs = sample_points(&model.sg, 8);
    let ss = logspace(c.s_min, c.s_max, c.s_count);
    let centers = model.mg.centers().to_vec();
    if let Some(b) = &s.kernels.daughters {
        out.push(named(
            "daughter mass conservation",
            check_mass_conservation(b, &xs, &ss, c.mass_tol)?,
        ));
    }
    if let Some(dspec) = &s.kernels.dominating {
        let beta = dspec.build()?;
        if let Some(b) = &s.kernels.daughters {
            out.push(named("domination b <= beta", check_domination(b, &beta, &xs, &centers, &centers)));
        }
        let m = c.envelope_ratio.unwrap_or(1.0);
        let search = find_r1(&beta, m, &ss, c.r_max)?;
        found.r1 = search.r1;
        out.push(named("r1 threshold", search.certificate));
        if let Some(params) = &c.equi_integrability {
            out.push(named("equi-integrability", check_equi_integrability(&beta, params, &ss)?));
        }
    }
    if let (Some(mspec), Some(frag), Some(rate)) = (&c.miyadera, &model.frag, &s.kernels.rate) {
        let absorption = SemigroupAction::Absorption { rate: rate.clone() };
        let t_abs = if model.transport.is_identity() {
            absorption
        } else {
            SemigroupAction::Composed {
                parts: vec![model.transport.clone(), absorption],
            }
        };
        let opts = MiyaderaOptions {
            r: mspec.r.unwrap_or(s.solver.r),
            ..MiyaderaOptions::default()
        };
        let probes = model.probes(s);
        let lambda = match mspec.lambda {
            Some(l) => Some(l),
            None => {
                let star = find_lambda_star(&probes, &t_abs, frag, &opts, mspec.lambda_max, 1e-3)?;
                found.lambda_star = star;
                star
            }
        };
        let cert = match lambda {
            Some(l) => miyadera_margin(l, &probes, &t_abs, frag, &opts)?,
            None => Certificate::refused(
                CertificateKind::Miyadera,
                format!("ratio stays >= 1 up to lambda = {}", mspec.lambda_max),
            ),
        };
        out.push(named("Miyadera margin", cert));
    }
    if let Some(op) = &model.coag {
        let r = s.solver.r;
        let norm = weighted_norm(&model.u0, r)?;
        let b = if norm > 0.0 { 2.0 * norm } else { 1.0 };
        let tc = TruncatedCoagulation::new(op.clone(), b, r)?;
        let probes: Vec<StateField> = model
            .probes(s)
            .into_iter()
            .map(|f| {
                let n = weighted_norm(&f, r).unwrap_or(0.0);
                if n > 0.0 {
                    f.scaled(0.5 * b / n)
                } else {
                    f
                }
            })
            .collect();
        let pairs: Vec<(StateField, StateField)> = probes
            .windows(2)
            .map(|w| (w[0].clone(), w[1].clone()))
            .collect();
        out.push(named("coagulation Lipschitz bound", lipschitz_probe(&tc, &pairs)?));
    }
    if let SemigroupAction::Advection { field, .. } = &model.transport {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x9e37_79b9);
        let (lo, hi) = ([model.sg.lower(0), model.sg.lower(1)], [model.sg.upper(0), model.sg.upper(1)]);
        let point = |rng: &mut ChaCha8Rng| {
            let mut p = [0.0; 2];
            for a in 0..model.sg.dim() {
                p[a] = rng.gen_range(lo[a]..hi[a]);
            }
            p
        };
        let m_max = model.mg.m_max();
        let pairs: Vec<FlowPair> = (0..c.probes.max(1))
            .map(|_| FlowPair {
                x: point(&mut rng),
                m1: rng.gen_range(0.0..m_max),
                y: point(&mut rng),
                m2: rng.gen_range(0.0..m_max),
            })
            .collect();
        out.push(named(
            "flow Gronwall estimate",
            gronwall_flow_check(field, &pairs, s.solver.t_end, None)?,
        ));
    }
    Ok(out)
}

fn ledger_certificate(traj: &Trajectory, tol: f64) -> NamedCertificate {
    let mut margin = f64::INFINITY;
    let mut worst = 0.0f64;
    let mut at = 0.0;
    for (row, ledger) in traj.report.rows.iter().zip(&traj.ledgers) {
        let rel = ledger.residual().abs() / ledger.initial.abs().max(f64::MIN_POSITIVE);
        let rel = if ledger.residual() == 0.0 { 0.0 } else { rel };
        if tol - rel < margin {
            margin = tol - rel;
            worst = rel;
            at = row.t;
        }
    }
    named(
        "mass ledger reconciliation",
        Certificate::from_margin(CertificateKind::MassLedger, margin, worst, vec![at], traj.ledgers.len(), false),
    )
}

/// Largest step of the trajectory sampled for the moment inequality.
const MOMENT_STEP: f64 = 2e-3;

fn suite_certificates(s: &Scenario, model: &Model, traj: &Trajectory) -> Result<Vec<NamedCertificate>> {
    let c = &s.certify;
    let mut out = Vec::new();
    let pure_fragmentation = model.transport.is_identity() && model.coag.is_none();
    if let Some(frag) = &model.frag {
        if pure_fragmentation {
            // Own sampling: the check compares a finite difference with a
            // trapezoid average, whose O(h²) gap must stay below moment_tol.
            let steps = (s.solver.t_end / s.solver.dt.min(MOMENT_STEP)).ceil() as usize;
            let h = s.solver.t_end / steps as f64;
            let mut run = vec![(0.0, model.u0.clone())];
            for k in 1..=steps {
                let next = frag.fragment_step(&run[k - 1].1, h)?;
                run.push((k as f64 * h, next));
            }
            out.push(named(
                "moment inequality",
                moment_inequality_check(&run, frag, c.moment_r, c.moment_tol)?,
            ));
        }
        if !model.transport.is_identity() {
            out.push(named(
                "commutation",
                commutation_check(s.solver.t_end, &model.u0, &model.transport, frag, s.solver.r, c.commutation_tol)?,
            ));
        }
        if let (Some(dspec), Some(rate)) = (&s.kernels.dominating, &s.kernels.rate) {
            let dom = FragmentationOperator::dominating(model.mg.clone(), model.sg.clone(), rate, &dspec.build()?)?;
            let steps = 20;
            let h = s.solver.t_end / steps as f64;
            let sub = frag.substeps_for(h).max(dom.substeps_for(h));
            let (mut lo, mut hi) = (model.u0.clone(), model.u0.clone());
            let (mut lows, mut highs) = (vec![lo.clone()], vec![hi.clone()]);
            for _ in 0..steps {
                lo = frag.fragment_step_substeps(&lo, h, sub)?;
                hi = dom.fragment_step_substeps(&hi, h, sub)?;
                lows.push(lo.clone());
                highs.push(hi.clone());
            }
            let (cert, _) = domination_violations(&lows, &highs, c.domination_tol)?;
            out.push(named("trajectory domination", cert));
        }
    }
    let predicted: Vec<(f64, f64)> = traj
        .windows
        .iter()
        .filter_map(|w| w.predicted_factor.map(|p| (w.measured_factor, p)))
        .collect();
    if !predicted.is_empty() {
        let (margin, stat) = predicted
            .iter()
            .map(|(m, p)| (p - m, *m))
            .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });
        out.push(named(
            "Picard contraction",
            Certificate::from_margin(CertificateKind::PicardContraction, margin, stat, vec![], predicted.len(), false),
        ));
    }
    Ok(out)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_fields(s: &Scenario, traj: &Trajectory, dir: &Path) -> Result<Vec<String>> {
    let fields = dir.join("fields");
    fs::create_dir_all(&fields)?;
    let mut files = Vec::new();
    let mut picks: Vec<usize> = s
        .output
        .snapshot_times
        .iter()
        .filter_map(|&t| {
            traj.snapshots
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 .0 - t).abs().total_cmp(&(b.1 .0 - t).abs()))
                .map(|(k, _)| k)
        })
        .collect();
    picks.push(traj.snapshots.len() - 1);
    picks.sort_unstable();
    picks.dedup();
    for k in picks {
        let (t, u) = &traj.snapshots[k];
        let stem = format!("u_t{t:.6}");
        write_field(&fields.join(format!("{stem}.bin")), u)?;
        files.push(format!("fields/{stem}.bin"));
        if s.output.csv_fields {
            fs::write(fields.join(format!("{stem}.csv")), field_csv(u))?;
            files.push(format!("fields/{stem}.csv"));
        }
    }
    fs::write(fields.join("grid.json"), GridDescriptor::of(traj.final_state()).to_json()?)?;
    files.push("fields/grid.json".into());
    Ok(files)
}

/// Runs a resolved, validated scenario and writes its artifacts to `dir`.
pub fn run(s: &Scenario, dir: &Path) -> Result<Outcome> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let model = Model::build(s)?;
    let mut found = Findings::default();
    let mut certs = Vec::new();
    let mut traj = None;
    match s.mode {
        Mode::Certify => certs.extend(kernel_certificates(s, &model, &mut found)?),
        Mode::Simulate | Mode::VerifySuite => {
            let suite = s.mode == Mode::VerifySuite;
            let t = simulate(s, &model, suite, &mut found)?;
            certs.push(ledger_certificate(&t, s.certify.ledger_tol));
            if suite {
                certs.extend(suite_certificates(s, &model, &t)?);
            }
            traj = Some(t);
        }
    }

    let mut files = Vec::new();
    if let Some(t) = &traj {
        fs::write(dir.join("moments.csv"), moments_csv(&t.report))?;
        files.push("moments.csv".to_string());
        files.extend(write_fields(s, t, dir)?);
    }
    write_json(&dir.join("certificates.json"), &certs)?;
    files.push("certificates.json".into());
    files.push("report.json".into());

    let all_pass = certs.iter().all(|c| c.certificate.passed());
    let report = Report {
        tool: "fragcoag",
        version: env!("CARGO_PKG_VERSION"),
        seed: s.seed,
        mode: s.mode,
        config: s,
        termination: traj.as_ref().map(|t| &t.termination),
        final_time: traj.as_ref().map(|t| t.final_time()),
        final_ledger: traj.as_ref().and_then(|t| t.ledgers.last().copied()),
        windows: traj.as_ref().map_or(&[], |t| &t.windows),
        measured_factor: traj.as_ref().filter(|t| !t.windows.is_empty()).map(|t| t.measured_factor()),
        semigroup_bounds: found.bounds,
        r1: found.r1,
        lambda_star: found.lambda_star,
        certificates: &certs,
        all_certificates_pass: all_pass,
        files,
    };
    write_json(&dir.join("report.json"), &report)?;

    if let Some(t) = &traj {
        match &t.termination {
            Termination::SuspectedBlowup { .. } => return Ok(Outcome::SuspectedBlowup),
            Termination::Error { message } => {
                eprintln!("run stopped at t = {}: {message}", t.final_time());
                return Ok(Outcome::Failed);
            }
            Termination::Horizon => {}
        }
    }
    if s.mode != Mode::Simulate && !all_pass {
        return Ok(Outcome::CertificateFailure);
    }
    Ok(Outcome::Success)
}

/// Default output directory: `out/<scenario file stem>`.
pub fn default_output(config: &Path) -> PathBuf {
    let stem = config.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    PathBuf::from("out").join(stem)
}
