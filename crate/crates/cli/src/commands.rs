//! The four scenario commands. Each returns whether its checks passed, or a
//! failure classified for the exit code.

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use wavegauge::bundle::{verify_bundle_identities, Defect, Defected, StiefelBundle};
use wavegauge::connection::{fake_curvature, gluing_residuals, FnConnection, LocalConnection, StiefelConnection};
use wavegauge::crossed_module::{verify_crossed_module, CrossedModule};
use wavegauge::grassmann::Chart;
use wavegauge::holonomy::{abelian_surface_holonomy, boundary_residuals, lift_curve, lift_pseudosurface, ArrowJson, PairCurve};
use wavegauge::linalg::{zeros, CMat};
use wavegauge::quantum::{self, HamiltonianModel};
use wavegauge::simplicial::{discrete_cartan_residual, fitted_order, seeded_form, RefinementReport};
use wavegauge::two_space::verify_wave_operators;
use wavegauge::{Error, Exec};

use crate::config::{CrossedModuleKind, DefectSpec, FieldSpec, ModelSpec, ScenarioConfig};
use crate::io::{to_matrix, PseudoSurfaceFile};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

fn numerical(e: Error) -> Failure {
    Failure::Numerical(e.to_string())
}

pub struct Context {
    pub out: PathBuf,
    pub timestamp: bool,
    pub exec: Exec,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<(), Failure> {
        std::fs::create_dir_all(&self.out).map_err(|e| Failure::Config(format!("cannot create {}: {e}", self.out.display())))?;
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| Failure::Config(format!("cannot write {}: {e}", p.display())))
    }

    fn report<T: Serialize>(&self, cfg: &ScenarioConfig, command: &str, pass: bool, body: T) -> Result<(), Failure> {
        let generated_at = self.timestamp.then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
        let r = Report { command, seed: cfg.seed, n: cfg.n, m: cfg.m, pass, generated_at, body };
        let text = serde_json::to_string_pretty(&r).expect("reports serialize") + "\n";
        self.write(&cfg.outputs.report, &text)
    }
}

#[derive(Serialize)]
struct Report<'a, T> {
    command: &'a str,
    seed: u64,
    n: usize,
    m: usize,
    pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<u64>,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct Check {
    name: String,
    max_residual: f64,
    tolerance: f64,
    pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, max_residual: f64, tolerance: f64) -> Self {
        Self { name: name.into(), max_residual, tolerance, pass: max_residual <= tolerance }
    }
}

fn matrix(rows: &crate::io::MatrixJson, n: usize, what: &str) -> Result<CMat, Failure> {
    let a = to_matrix(rows).map_err(|e| Failure::Config(format!("{what}: {e}")))?;
    if a.nrows() != n || a.ncols() != n {
        return Err(Failure::Config(format!("{what} is {}×{}, expected {n}×{n}", a.nrows(), a.ncols())));
    }
    Ok(a)
}

pub fn build_model(cfg: &ScenarioConfig) -> Result<HamiltonianModel, Failure> {
    let n = cfg.n;
    let spec = cfg.model.as_ref().ok_or_else(|| Failure::Config("simulate needs a model".into()))?;
    let model = match spec {
        ModelSpec::SeededSmooth { strength } => HamiltonianModel::seeded_smooth(n, cfg.m, cfg.seed, *strength),
        ModelSpec::Commuting { levels, drift } => {
            if levels.len() != n || drift.len() != n {
                return Err(Failure::Config(format!("commuting model needs {n} levels and {n} drifts")));
            }
            let (l, d) = (levels.clone(), drift.clone());
            HamiltonianModel::from_fn(n, move |t| CMat::from_fn(n, n, |r, k| if r == k { wavegauge::C64::new(l[r] + d[r] * t.sin(), 0.0) } else { wavegauge::C64::new(0.0, 0.0) }))
        }
        ModelSpec::Rotating { h0, k, rate, accel } => {
            let (rate, accel) = (*rate, *accel);
            HamiltonianModel::rotating(matrix(h0, n, "h0")?, matrix(k, n, "k")?, move |t| rate * t + accel * t * t)
        }
        ModelSpec::AvoidedCrossing { h0, h1, t0, tau } => HamiltonianModel::avoided_crossing(matrix(h0, n, "h0")?, matrix(h1, n, "h1")?, *t0, *tau),
        ModelSpec::Table { times, matrices } => {
            let mats = matrices.iter().enumerate().map(|(i, m)| matrix(m, n, &format!("matrices[{i}]"))).collect::<Result<Vec<_>, _>>()?;
            HamiltonianModel::table(times.clone(), mats).map_err(|e| Failure::Config(e.to_string()))?
        }
    };
    let probe = [0.0, 0.5 * cfg.grid.duration, cfg.grid.duration];
    model.check_hermitian(&probe).map_err(|e| Failure::Config(e.to_string()))?;
    Ok(model)
}

#[derive(Serialize)]
struct SimulateBody {
    duration: f64,
    steps: usize,
    reconstruction_error: f64,
    reconstruction_error_per_label: Vec<f64>,
    max_unitarity_defect: f64,
    max_fs_distance: f64,
    max_idempotency_defect: f64,
    ode_residual_generalized: f64,
    ode_residual_fixed_p0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    refinement: Option<quantum::ReconstructionRefinement>,
    checks: Vec<Check>,
}

pub fn simulate(cfg: &ScenarioConfig, ctx: &Context) -> Result<bool, Failure> {
    let model = build_model(cfg)?;
    let band = cfg.band();
    let g = &cfg.grid;
    let trace = quantum::simulate(&model, &band, g.duration, g.steps, quantum::DEFAULT_GAP_MIN).map_err(numerical)?;
    let gens = quantum::phase_generators(&trace, ctx.exec).map_err(numerical)?;
    let mut per_label = Vec::with_capacity(cfg.m);
    let mut first = Vec::new();
    for a in 0..cfg.m {
        let e = quantum::reconstruction_errors(&trace, &gens, a).map_err(numerical)?;
        per_label.push(e.iter().cloned().fold(0.0, f64::max));
        if a == 0 {
            first = e;
        }
    }
    let err = per_label.iter().cloned().fold(0.0, f64::max);
    let refinement = if g.refinements.is_empty() {
        None
    } else {
        Some(quantum::reconstruction_refinement(&model, &band, g.duration, &g.refinements, 0, ctx.exec).map_err(numerical)?)
    };
    let t = &cfg.tolerances;
    let unit = trace.max_unitarity_defect();
    let idem = trace.idempotency_defects().into_iter().fold(0.0, f64::max);
    let checks = vec![
        Check::new("reconstruction_error", err, t.reconstruction),
        Check::new("unitarity", unit, t.unitarity),
        Check::new("idempotency", idem, t.idempotency),
    ];
    let pass = checks.iter().all(|c| c.pass);
    ctx.write(&cfg.outputs.trace, &quantum::trace_csv(&trace, Some(&first)))?;
    let body = SimulateBody {
        duration: g.duration,
        steps: g.steps,
        reconstruction_error: err,
        reconstruction_error_per_label: per_label,
        max_unitarity_defect: unit,
        max_fs_distance: trace.fs_distances().into_iter().fold(0.0, f64::max),
        max_idempotency_defect: idem,
        ode_residual_generalized: quantum::wave_operator_ode_residual(&trace),
        ode_residual_fixed_p0: quantum::fixed_p0_ode_residual(&trace).map_err(numerical)?,
        refinement,
        checks,
    };
    ctx.report(cfg, "simulate", pass, body)?;
    Ok(pass)
}

fn crossed_module(cfg: &ScenarioConfig) -> CrossedModule {
    match cfg.crossed_module {
        CrossedModuleKind::GlAdj => CrossedModule::gl_adj(cfg.m),
        CrossedModuleKind::Central => CrossedModule::central(cfg.m),
    }
}

fn chart(indices: &[usize], cfg: &ScenarioConfig) -> Result<Chart, Failure> {
    let ch = Chart::new(indices.to_vec());
    if ch.indices.len() != cfg.m || ch.indices.iter().any(|&k| k >= cfg.n) || ch.indices.windows(2).any(|w| w[0] == w[1]) {
        return Err(Failure::Config(format!("chart {indices:?} is not an {}-subset of 0..{}", cfg.m, cfg.n)));
    }
    Ok(ch)
}

#[derive(Serialize)]
struct VerifyBody {
    samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    defect: Option<DefectSpec>,
    identities: Vec<Check>,
    failed: Vec<String>,
    diagnostics: Diagnostics,
}

#[derive(Serialize)]
struct Diagnostics {
    strictness_defect: f64,
    eta_gluing: f64,
    eta_bar_gluing: f64,
    eta_ij_norm: f64,
    bns_gluing: f64,
}

pub fn verify(cfg: &ScenarioConfig, ctx: &Context) -> Result<bool, Failure> {
    if cfg.n <= cfg.m {
        return Err(Failure::Config("verify needs n > m for the Stiefel instance".into()));
    }
    let (n, m, s, seed) = (cfg.n, cfg.m, cfg.grid.samples, cfg.seed);
    let t = &cfg.tolerances;
    let base = StiefelBundle::new(n, m);
    let mut conn = StiefelConnection::new(n, m);
    let defect = match &cfg.defect {
        None => None,
        Some(DefectSpec::G { i, k, value }) => Some(Defect::G { i: chart(i, cfg)?, k: chart(k, cfg)?, d: matrix(value, m, "defect value")? }),
        Some(DefectSpec::H { value }) => Some(Defect::H { d: matrix(value, m, "defect value")? }),
        Some(DefectSpec::Eta { chart: c, scale }) => {
            conn.eta_defect = Some((chart(c, cfg)?, *scale));
            None
        }
    };
    let bundle = match defect {
        Some(d) => verify_bundle_identities(&Defected { inner: base, defect: d }, s, seed, ctx.exec),
        None => verify_bundle_identities(&base, s, seed, ctx.exec),
    };
    let cmr = verify_crossed_module(&crossed_module(cfg), s, seed, ctx.exec);
    let wave = verify_wave_operators(n, m, s, seed, ctx.exec);
    let glue = gluing_residuals(&conn, None, s, seed, ctx.exec);

    let mut ids = vec![
        Check::new("crossed_module.equivariance", cmr.equivariance, t.crossed_module),
        Check::new("crossed_module.peiffer", cmr.peiffer, t.crossed_module),
        Check::new("crossed_module.exchange", cmr.exchange, t.crossed_module),
        Check::new("crossed_module.lie_equivariance", cmr.lie_equivariance, t.crossed_module),
    ];
    for (name, r) in bundle.identities() {
        ids.push(Check::new(format!("bundle.{name}"), r, t.identity));
    }
    ids.push(Check::new("bundle.two_transition_trivial", bundle.two_transition, t.two_transition));
    ids.push(Check::new("wave_operator.idempotency", wave.idempotency, t.wave_operator));
    ids.push(Check::new("wave_operator.weak_inverse", wave.weak_inverse, t.wave_operator));
    ids.push(Check::new("wave_operator.functoriality", wave.functoriality, t.wave_operator));
    ids.push(Check::new("connection.a_gluing", glue.a_gluing, t.gluing));
    ids.push(Check::new("connection.eta_ij_triple", glue.eta_ij_triple, t.gluing));
    // the curving glues only over an abelian fibre
    if m == 1 {
        ids.push(Check::new("connection.bns_gluing", glue.bns_gluing, t.curving_gluing));
    }
    let failed: Vec<String> = ids.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    let pass = failed.is_empty();
    let body = VerifyBody {
        samples: s,
        defect: cfg.defect.clone(),
        identities: ids,
        failed,
        diagnostics: Diagnostics {
            strictness_defect: glue.strictness_defect,
            eta_gluing: glue.eta_gluing,
            eta_bar_gluing: glue.eta_bar_gluing,
            eta_ij_norm: glue.eta_ij_norm,
            bns_gluing: glue.bns_gluing,
        },
    };
    ctx.report(cfg, "verify", pass, body)?;
    Ok(pass)
}

#[derive(Serialize)]
struct SurfaceLevel {
    k: usize,
    second_kind_distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_kind_distance: Option<f64>,
}

#[derive(Serialize)]
struct AbelianCheck {
    levels: Vec<SurfaceLevel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_kind_order: Option<f64>,
}

#[derive(Serialize)]
struct HolonomyBody {
    elementary: bool,
    chart_trace: Vec<Vec<usize>>,
    arrow: ArrowJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_boundary_residual: Option<f64>,
    /// Holds only for strict connections; reported, not checked.
    #[serde(skip_serializing_if = "Option::is_none")]
    target_boundary_residual: Option<f64>,
    seam_mismatch: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    abelian: Option<AbelianCheck>,
    checks: Vec<Check>,
}

fn load_pseudosurface(cfg: &ScenarioConfig) -> Result<PseudoSurfaceFile, Failure> {
    let p = cfg.pseudosurface.as_ref().ok_or_else(|| Failure::Config("holonomy needs a pseudosurface file".into()))?;
    let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
    let f: PseudoSurfaceFile = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
    if f.n != cfg.n || f.m != cfg.m {
        return Err(Failure::Config(format!("pseudosurface is ({}, {}), config says ({}, {})", f.n, f.m, cfg.n, cfg.m)));
    }
    Ok(f)
}

/// Stiefel potentials of one chart re-expressed over the central crossed module.
fn central_view(conn: &StiefelConnection, ch: &Chart) -> FnConnection {
    let (la, le, lb) = (conn.local(ch), conn.local(ch), conn.local(ch));
    FnConnection::new(CrossedModule::central(1), move |x, dx| la.a(x, dx), move |p, v| le.eta(p, v))
        .with_b_sph(move |x, v1, v2| fake_curvature(&lb, x, v1, v2, 1e-5))
}

pub fn holonomy(cfg: &ScenarioConfig, ctx: &Context) -> Result<bool, Failure> {
    let file = load_pseudosurface(cfg)?;
    let skeletons = file.skeletons().map_err(Failure::Config)?;
    let ps = file.pseudosurface().map_err(Failure::Config)?;
    let conn = StiefelConnection::new(cfg.n, cfg.m);
    let t = &cfg.tolerances;
    let steps = cfg.grid.holonomy_steps;
    let elementary = skeletons.iter().all(|s| s.len() <= 2);
    let all: Vec<_> = skeletons.iter().flat_map(|s| s.projectors().iter().cloned()).collect();
    let common = Chart::all(cfg.n, cfg.m).into_iter().find(|c| all.iter().all(|p| c.contains(p)));
    let mut checks = Vec::new();
    let body = match (elementary, common) {
        (true, Some(ch)) => {
            let curve = PairCurve::from_pseudosurface(&ps, &ch).map_err(numerical)?;
            let local = conn.local(&ch);
            let lift = lift_curve(&local, &curve, steps, false).map_err(numerical)?;
            let (src, tgt) = boundary_residuals(&local, &curve, &lift.arrow, steps).map_err(numerical)?;
            checks.push(Check::new("source_boundary", src, t.boundary));
            let abelian = if cfg.crossed_module == CrossedModuleKind::Central && cfg.m == 1 {
                let view = central_view(&conn, &ch);
                let mut levels = Vec::new();
                for &k in &cfg.grid.surface_levels {
                    let s = abelian_surface_holonomy(&view, &curve, k, steps, 1e-4).map_err(numerical)?;
                    levels.push(SurfaceLevel {
                        k,
                        second_kind_distance: s.second_kind.distance(&lift.arrow),
                        first_kind_distance: s.first_kind.map(|f| f.distance(&lift.arrow)),
                    });
                }
                if let Some(last) = levels.last() {
                    checks.push(Check::new("surface_vs_path", last.second_kind_distance, t.surface));
                }
                let pts: Vec<(f64, f64)> = levels.iter().filter_map(|l| l.first_kind_distance.map(|d| (1.0 / l.k as f64, d))).collect();
                Some(AbelianCheck { first_kind_order: fitted_order(&pts), levels })
            } else {
                None
            };
            HolonomyBody {
                elementary: true,
                chart_trace: vec![ch.indices.clone()],
                arrow: ArrowJson::from(&lift.arrow),
                source_boundary_residual: Some(src),
                target_boundary_residual: Some(tgt),
                seam_mismatch: 0.0,
                abelian,
                checks,
            }
        }
        _ => {
            let r = lift_pseudosurface(&conn, &ps, cfg.grid.resolution, steps, ctx.exec).map_err(numerical)?;
            HolonomyBody {
                elementary,
                chart_trace: r.chart_trace.iter().map(|c| c.indices.clone()).collect(),
                arrow: ArrowJson::from(&r.arrow),
                source_boundary_residual: None,
                target_boundary_residual: None,
                seam_mismatch: r.seam_mismatch,
                abelian: None,
                checks,
            }
        }
    };
    let pass = body.checks.iter().all(|c| c.pass);
    ctx.report(cfg, "holonomy", pass, body)?;
    Ok(pass)
}

#[derive(Serialize)]
struct CartanBody {
    field: FieldSpec,
    refinement: RefinementReport,
    order_target: f64,
    order_band: f64,
    trivial: bool,
}

pub fn cartan(cfg: &ScenarioConfig, ctx: &Context) -> Result<bool, Failure> {
    let levels = &cfg.grid.cartan_levels;
    if levels.len() < 3 {
        eprintln!("warning: a slope fit needs at least 3 mesh levels, got {}", levels.len());
        return Err(Failure::Config(format!("cartan schedule has {} levels", levels.len())));
    }
    if levels.contains(&0) {
        return Err(Failure::Config("mesh levels must be positive".into()));
    }
    let m = cfg.m;
    let rep = match cfg.field {
        FieldSpec::Zero => {
            let zero = move |_: [f64; 2], _: [f64; 2]| Ok(zeros(m, m));
            discrete_cartan_residual(&zero, [0.0, 0.0], [1.0, 1.0], levels, ctx.exec)
        }
        FieldSpec::Seeded => {
            let alpha = seeded_form(m, cfg.seed);
            discrete_cartan_residual(&alpha, [0.0, 0.0], [1.0, 1.0], levels, ctx.exec)
        }
    }
    .map_err(numerical)?;
    ctx.write(&cfg.outputs.convergence, &rep.to_csv())?;
    let t = &cfg.tolerances;
    let trivial = rep.levels.iter().all(|l| l.max_residual <= 1e-14);
    let pass = trivial || rep.order.is_some_and(|o| (o - t.order_target).abs() <= t.order_band);
    let body = CartanBody { field: cfg.field, refinement: rep, order_target: t.order_target, order_band: t.order_band, trivial };
    ctx.report(cfg, "cartan", pass, body)?;
    Ok(pass)
}
