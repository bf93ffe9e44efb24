//! Path-ordered exponentials and horizontal lifts of pseudosurfaces.
//!
//! All path-ordered exponentials solve `dY/du = −X(u)·Y` on `[0, 1]`, so a
//! concatenated path has holonomy `Y₂·Y₁` with the later piece on the left.
//! Composites below follow that order.

use std::sync::Arc;

use serde::Serialize;

use crate::bundle::TransitionFunctions;
use crate::connection::{curving_bns, LocalConnection, PairPoint, PairVec, StiefelConnection};
use crate::crossed_module::{horizontal_compose, vertical_compose, Arrow2, CrossedModule, Kind};
use crate::error::{Error, Result};
use crate::grassmann::{best_chart, Chart, Projector};
use crate::linalg::{c, eye, frob, inverse, mat_exp, rel_dist, zeros, CMat};
use crate::par::{self, Exec};
use crate::simplicial::{de_rham_triangle, Param, Triangulation};
use crate::two_space::PseudoSurface;

pub const DEFAULT_STEPS: usize = 1024;
/// `|det|` below which a propagated group element is declared collapsed.
pub const DET_FLOOR: f64 = 1e-12;
const VEL_STEP: f64 = 1e-6;
const ELEMENTARY_PROBES: usize = 64;

fn check_det(y: &CMat) -> Result<()> {
    let d = y.determinant().norm();
    if !(d >= DET_FLOOR && d.is_finite()) {
        return Err(Error::DeterminantCollapse(d));
    }
    Ok(())
}

/// Fixed-step RK4 for `dY/du = −X(u)Y`, `Y(0) = I`, on `[0, 1]`.
pub fn path_ordered_exp<F>(gen: F, dim: usize, steps: usize) -> Result<CMat>
where
    F: Fn(f64) -> Result<CMat>,
{
    let steps = steps.max(1);
    let h = 1.0 / steps as f64;
    let mut y = eye(dim);
    let mut x0 = gen(0.0)?;
    for k in 0..steps {
        let u = k as f64 * h;
        let xm = gen(u + 0.5 * h)?;
        let x1 = gen(u + h)?;
        let k1 = -(&x0 * &y);
        let k2 = -(&xm * (&y + &k1 * c(0.5 * h)));
        let k3 = -(&xm * (&y + &k2 * c(0.5 * h)));
        let k4 = -(&x1 * (&y + &k3 * c(h)));
        y += (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(h / 6.0);
        check_det(&y)?;
        x0 = x1;
    }
    Ok(y)
}

type PosFn = dyn Fn(f64) -> Result<CMat> + Send + Sync;

/// A curve `[0,1] → ` chart coordinates, with exact or differenced velocity.
#[derive(Clone)]
pub struct ChartCurve {
    pos: Arc<PosFn>,
    vel: Option<Arc<PosFn>>,
}

impl std::fmt::Debug for ChartCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChartCurve").field("exact_velocity", &self.vel.is_some()).finish()
    }
}

impl ChartCurve {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(f64) -> Result<CMat> + Send + Sync + 'static,
    {
        Self { pos: Arc::new(f), vel: None }
    }

    pub fn with_velocity<F, V>(f: F, v: V) -> Self
    where
        F: Fn(f64) -> Result<CMat> + Send + Sync + 'static,
        V: Fn(f64) -> Result<CMat> + Send + Sync + 'static,
    {
        Self { pos: Arc::new(f), vel: Some(Arc::new(v)) }
    }

    /// `u ↦ a + u(b − a)`.
    pub fn segment(a: CMat, b: CMat) -> Self {
        let d = &b - &a;
        let d2 = d.clone();
        Self::with_velocity(move |u| Ok(&a + &d * c(u)), move |_| Ok(d2.clone()))
    }

    pub fn constant(a: CMat) -> Self {
        let z = a.clone() * c(0.0);
        Self::with_velocity(move |_| Ok(a.clone()), move |_| Ok(z.clone()))
    }

    /// Four-point Lagrange interpolation of values and velocities sampled on
    /// the uniform grid `k / (len − 1)`.
    pub fn sampled(values: Vec<CMat>, velocities: Vec<CMat>) -> Result<Self> {
        if values.len() < 4 || values.len() != velocities.len() {
            return Err(Error::InvalidInput(format!("need ≥ 4 matching samples, got {} and {}", values.len(), velocities.len())));
        }
        let (v, d) = (Arc::new(values), Arc::new(velocities));
        Ok(Self::with_velocity(move |u| Ok(interp4(&v, u)), move |u| Ok(interp4(&d, u))))
    }

    pub fn at(&self, u: f64) -> Result<CMat> {
        (self.pos)(u)
    }

    /// Central difference inside `[0,1]`, second-order one-sided at the ends.
    pub fn velocity(&self, u: f64) -> Result<CMat> {
        if let Some(v) = &self.vel {
            return v(u);
        }
        let h = VEL_STEP;
        if u - h < 0.0 {
            Ok((self.at(u)? * c(-3.0) + self.at(u + h)? * c(4.0) - self.at(u + 2.0 * h)?) * c(0.5 / h))
        } else if u + h > 1.0 {
            Ok((self.at(u)? * c(3.0) - self.at(u - h)? * c(4.0) + self.at(u - 2.0 * h)?) * c(0.5 / h))
        } else {
            Ok((self.at(u + h)? - self.at(u - h)?) * c(0.5 / h))
        }
    }

    /// The piece on `[a, b]`, reparametrized to `[0, 1]`.
    pub fn restrict(&self, a: f64, b: f64) -> Self {
        let (p, q) = (self.clone(), self.clone());
        let d = b - a;
        Self::with_velocity(move |s| p.at(a + s * d), move |s| Ok(q.velocity(a + s * d)? * c(d)))
    }

    pub fn reversed(&self) -> Self {
        self.restrict(1.0, 0.0)
    }
}

/// Cubic Lagrange interpolation on the uniform grid `k / (len − 1)`, `len ≥ 4`.
pub fn interp4(samples: &[CMat], u: f64) -> CMat {
    let n = samples.len() - 1;
    let s = u.clamp(0.0, 1.0) * n as f64;
    let k = s.round();
    if (s - k).abs() < 1e-9 {
        return samples[k as usize].clone();
    }
    let j = (s.floor() as usize).clamp(1, n - 2) - 1;
    let mut acc = samples[j].clone() * c(0.0);
    for a in 0..4 {
        let mut w = 1.0;
        for b in 0..4 {
            if a != b {
                w *= (s - (j + b) as f64) / (a as f64 - b as f64);
            }
        }
        acc += &samples[j + a] * c(w);
    }
    acc
}

/// `u ↦ (y(u), x(u))` in one chart.
#[derive(Clone, Debug)]
pub struct PairCurve {
    pub y: ChartCurve,
    pub x: ChartCurve,
}

impl PairCurve {
    pub fn new(y: ChartCurve, x: ChartCurve) -> Self {
        Self { y, x }
    }

    pub fn point(&self, u: f64) -> Result<PairPoint> {
        Ok(PairPoint::new(self.y.at(u)?, self.x.at(u)?))
    }

    pub fn velocity(&self, u: f64) -> Result<PairVec> {
        Ok(PairVec::new(self.y.velocity(u)?, self.x.velocity(u)?))
    }

    pub fn restrict(&self, a: f64, b: f64) -> Self {
        Self { y: self.y.restrict(a, b), x: self.x.restrict(a, b) }
    }

    /// Chart coordinates of an elementary pseudosurface.
    pub fn from_pseudosurface(g: &PseudoSurface, chart: &Chart) -> Result<Self> {
        for k in 0..=ELEMENTARY_PROBES {
            let s = g.at(k as f64 / ELEMENTARY_PROBES as f64)?;
            if s.len() > 2 {
                return Err(Error::NotElementary);
            }
            for p in s.projectors() {
                chart.coordinates(p)?;
            }
        }
        let (gy, gx) = (g.clone(), g.clone());
        let (cy, cx) = (chart.clone(), chart.clone());
        Ok(Self {
            y: ChartCurve::from_fn(move |u| cy.coordinates(gy.at(u.clamp(0.0, 1.0))?.target())),
            x: ChartCurve::from_fn(move |u| cx.coordinates(gx.at(u.clamp(0.0, 1.0))?.source())),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolonomyResult {
    pub arrow: Arrow2,
    pub path_samples: Option<Vec<Arrow2>>,
    pub chart_trace: Vec<Chart>,
    /// Largest source/target mismatch met in vertical composites.
    pub seam_mismatch: f64,
}

impl HolonomyResult {
    pub fn new(arrow: Arrow2, chart: Option<Chart>) -> Self {
        Self { arrow, path_samples: None, chart_trace: chart.into_iter().collect(), seam_mismatch: 0.0 }
    }
}

/// Serializable form of an arrow: `[re, im]` pairs row by row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrowJson {
    pub h: Vec<Vec<[f64; 2]>>,
    pub g: Vec<Vec<[f64; 2]>>,
}

pub fn matrix_json(a: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..a.nrows()).map(|r| (0..a.ncols()).map(|k| [a[(r, k)].re, a[(r, k)].im]).collect()).collect()
}

impl From<&Arrow2> for ArrowJson {
    fn from(a: &Arrow2) -> Self {
        Self { h: matrix_json(&a.h), g: matrix_json(&a.g) }
    }
}

/// `(η, A)` along the curve at `u`, already contracted with the velocity.
fn generators<C: LocalConnection + ?Sized>(conn: &C, curve: &PairCurve, u: f64) -> Result<(CMat, CMat)> {
    let (p, v) = (curve.point(u)?, curve.velocity(u)?);
    Ok((conn.cm().t_lie(&conn.eta(&p, &v)?), conn.a(&p.x, &v.dx)?))
}

/// Joint semidirect ODE `h' = −(ηh + α^Lie_A(h))`, `g' = −Ag`.
pub fn lift_curve<C: LocalConnection + ?Sized>(conn: &C, curve: &PairCurve, steps: usize, keep_samples: bool) -> Result<HolonomyResult> {
    let cm = conn.cm();
    let m = cm.m;
    let steps = steps.max(1);
    let h = 1.0 / steps as f64;
    let rhs = |eta: &CMat, a: &CMat, hh: &CMat, gg: &CMat| -> (CMat, CMat) {
        (-(eta * hh + cm.alpha_lie(a, hh)), -(a * gg))
    };
    let (mut hh, mut gg) = (eye(m), eye(m));
    let mut samples = keep_samples.then(|| vec![Arrow2::identity(m)]);
    let mut e0 = generators(conn, curve, 0.0)?;
    for k in 0..steps {
        let u = k as f64 * h;
        let em = generators(conn, curve, u + 0.5 * h)?;
        let e1 = generators(conn, curve, u + h)?;
        let (k1h, k1g) = rhs(&e0.0, &e0.1, &hh, &gg);
        let (k2h, k2g) = rhs(&em.0, &em.1, &(&hh + &k1h * c(0.5 * h)), &(&gg + &k1g * c(0.5 * h)));
        let (k3h, k3g) = rhs(&em.0, &em.1, &(&hh + &k2h * c(0.5 * h)), &(&gg + &k2g * c(0.5 * h)));
        let (k4h, k4g) = rhs(&e1.0, &e1.1, &(&hh + &k3h * c(h)), &(&gg + &k3g * c(h)));
        hh += (k1h + k2h * c(2.0) + k3h * c(2.0) + k4h) * c(h / 6.0);
        gg += (k1g + k2g * c(2.0) + k3g * c(2.0) + k4g) * c(h / 6.0);
        check_det(&hh)?;
        check_det(&gg)?;
        if let Some(s) = samples.as_mut() {
            s.push(Arrow2::new(hh.clone(), gg.clone()));
        }
        e0 = e1;
    }
    Ok(HolonomyResult { arrow: Arrow2::new(hh, gg), path_samples: samples, chart_trace: vec![], seam_mismatch: 0.0 })
}

/// The intermediate-representation split of a lift.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitLift {
    /// `P-exp(−∫A)` along the source boundary.
    pub g: CMat,
    /// `P-exp(−∫G⁻¹ηG)` with `G` the running source holonomy.
    pub k: CMat,
    /// `(α_g(k), g)`.
    pub recombined: Arrow2,
}

/// Split lift: `G' = −AG` and `k' = −(G⁻¹ηG)k`, recombined as `(α_G(k), G)`.
pub fn lift_split<C: LocalConnection + ?Sized>(conn: &C, curve: &PairCurve, steps: usize) -> Result<SplitLift> {
    let cm = conn.cm();
    let m = cm.m;
    let steps = steps.max(1);
    let h = 1.0 / steps as f64;
    let rhs = |eta: &CMat, a: &CMat, gg: &CMat, kk: &CMat| -> Result<(CMat, CMat)> {
        let gi = inverse(gg)?;
        let tilde = cm.alpha(&gi, eta)?;
        Ok((-(a * gg), -(tilde * kk)))
    };
    let (mut gg, mut kk) = (eye(m), eye(m));
    let mut e0 = generators(conn, curve, 0.0)?;
    for s in 0..steps {
        let u = s as f64 * h;
        let em = generators(conn, curve, u + 0.5 * h)?;
        let e1 = generators(conn, curve, u + h)?;
        let (k1g, k1k) = rhs(&e0.0, &e0.1, &gg, &kk)?;
        let (k2g, k2k) = rhs(&em.0, &em.1, &(&gg + &k1g * c(0.5 * h)), &(&kk + &k1k * c(0.5 * h)))?;
        let (k3g, k3k) = rhs(&em.0, &em.1, &(&gg + &k2g * c(0.5 * h)), &(&kk + &k2k * c(0.5 * h)))?;
        let (k4g, k4k) = rhs(&e1.0, &e1.1, &(&gg + &k3g * c(h)), &(&kk + &k3k * c(h)))?;
        gg += (k1g + k2g * c(2.0) + k3g * c(2.0) + k4g) * c(h / 6.0);
        kk += (k1k + k2k * c(2.0) + k3k * c(2.0) + k4k) * c(h / 6.0);
        check_det(&gg)?;
        check_det(&kk)?;
        e0 = e1;
    }
    let recombined = Arrow2::new(cm.alpha(&gg, &kk)?, gg.clone());
    Ok(SplitLift { g: gg, k: kk, recombined })
}

/// `‖g − P-exp_source(A)‖` and `‖t(h)g − P-exp_target(A)‖`, relative.
pub fn boundary_residuals<C: LocalConnection + ?Sized>(conn: &C, curve: &PairCurve, arrow: &Arrow2, steps: usize) -> Result<(f64, f64)> {
    let cm = conn.cm();
    let src = path_ordered_exp(|u| conn.a(&curve.x.at(u)?, &curve.x.velocity(u)?), cm.m, steps)?;
    let tgt = path_ordered_exp(|u| conn.a(&curve.y.at(u)?, &curve.y.velocity(u)?), cm.m, steps)?;
    Ok((rel_dist(&arrow.g, &src), rel_dist(&arrow.target(&cm), &tgt)))
}

/// Lift of an elementary pseudosurface lying in chart `i`.
pub fn lift_elementary(conn: &StiefelConnection, g: &PseudoSurface, chart: &Chart, steps: usize) -> Result<HolonomyResult> {
    let curve = PairCurve::from_pseudosurface(g, chart)?;
    let mut r = lift_curve(&conn.local(chart), &curve, steps, false)?;
    r.chart_trace = vec![chart.clone()];
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbelianSurface {
    /// `∬_{S²} B_ns`.
    pub bns_integral: CMat,
    /// `∫η_t(y, x(1)) + ∫η_s(y(0), x)`.
    pub boundary_lines: CMat,
    /// `∬_{S¹} B_sph`, present for impervious curves.
    pub bsph_integral: Option<CMat>,
    pub g: CMat,
    /// `(e^{−∬B_ns − ∫η_s − ∫η_t}, g)`.
    pub second_kind: Arrow2,
    /// `(e^{−∬B_ns − ∬B_sph}, g)` for impervious curves.
    pub first_kind: Option<Arrow2>,
}

fn gl3_line<F>(f: F, pieces: usize) -> Result<CMat>
where
    F: Fn(f64) -> Result<CMat>,
{
    const N: [f64; 3] = [0.112_701_665_379_258_3, 0.5, 0.887_298_334_620_741_7];
    const W: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
    let pieces = pieces.max(1);
    let h = 1.0 / pieces as f64;
    let mut acc: Option<CMat> = None;
    for p in 0..pieces {
        for (s, w) in N.iter().zip(W) {
            let v = f((p as f64 + s) * h)? * c(w * h);
            acc = Some(match acc {
                Some(a) => a + v,
                None => v,
            });
        }
    }
    Ok(acc.expect("at least one node"))
}

const IMPERVIOUS_TOL: f64 = 1e-10;

/// Surface form of the h-part of an elementary lift for a central `H`.
///
/// `S²` is `(a, b) ↦ (y(a), x(b))` over `a ≤ b`; `S¹` is the ruled surface
/// `x(a) + s(y(a) − x(a))`. Both are triangulated with `k` cells per side.
pub fn abelian_surface_holonomy<C: LocalConnection + ?Sized>(conn: &C, curve: &PairCurve, k: usize, steps: usize, fd: f64) -> Result<AbelianSurface> {
    let cm = conn.cm();
    if cm.kind != Kind::Central {
        return Err(Error::NotAbelian);
    }
    let hyp = |e: Error| match e {
        Error::NotLinkable(d) => Error::LinkabilityHypothesisFailed(format!("pair at Fubini–Study distance {d:.3e}")),
        other => other,
    };
    let m = cm.m;
    let phi = |u: Param| -> Result<PairPoint> { Ok(PairPoint::new(curve.y.at(u[0])?, curve.x.at(u[1])?)) };
    let push = |u: Param, v: Param| -> Result<PairVec> {
        Ok(PairVec::new(curve.y.velocity(u[0])? * c(v[0]), curve.x.velocity(u[1])? * c(v[1])))
    };
    let bns = |u: Param, v1: Param, v2: Param| -> Result<CMat> { curving_bns(conn, &phi(u)?, &push(u, v1)?, &push(u, v2)?, fd) };
    let tri = Triangulation::grid([0.0, 0.0], [1.0, 1.0], k);
    let kk = tri.k;
    let mut cells = Vec::new();
    for i in 0..kk {
        for j in 0..kk {
            // (i, j) indexes (a, b); keep the region a ≤ b
            if i < j {
                cells.push(2 * (i * kk + j));
            }
            if i <= j {
                cells.push(2 * (i * kk + j) + 1);
            }
        }
    }
    let mut bns_int = zeros(m, m);
    for t in cells {
        let [a, b, cc] = tri.triangles[t];
        bns_int += de_rham_triangle(&bns, tri.vertices[a], tri.vertices[b], tri.vertices[cc]).map_err(hyp)?;
    }

    let y0 = curve.y.at(0.0)?;
    let x1 = curve.x.at(1.0)?;
    let t_line = gl3_line(
        |u| {
            let p = PairPoint::new(curve.y.at(u)?, x1.clone());
            conn.eta(&p, &PairVec::new(curve.y.velocity(u)?, zeros(x1.nrows(), x1.ncols())))
        },
        steps,
    )
    .map_err(hyp)?;
    let s_line = gl3_line(
        |u| {
            let p = PairPoint::new(y0.clone(), curve.x.at(u)?);
            conn.eta(&p, &PairVec::new(zeros(y0.nrows(), y0.ncols()), curve.x.velocity(u)?))
        },
        steps,
    )
    .map_err(hyp)?;
    let lines = t_line + s_line;

    let g = path_ordered_exp(|u| conn.a(&curve.x.at(u)?, &curve.x.velocity(u)?), m, steps)?;
    let second_kind = Arrow2::new(mat_exp(&(-(&bns_int + &lines))), g.clone());

    let impervious = frob(&(curve.y.at(0.0)? - curve.x.at(0.0)?)) < IMPERVIOUS_TOL
        && frob(&(curve.y.at(1.0)? - curve.x.at(1.0)?)) < IMPERVIOUS_TOL;
    let (bsph_integral, first_kind) = if impervious {
        let psi = |u: Param| -> Result<CMat> {
            let x = curve.x.at(u[0])?;
            Ok(&x + (curve.y.at(u[0])? - &x) * c(u[1]))
        };
        let dpsi = |u: Param, v: Param| -> Result<CMat> {
            let (x, y) = (curve.x.at(u[0])?, curve.y.at(u[0])?);
            let (dx, dy) = (curve.x.velocity(u[0])?, curve.y.velocity(u[0])?);
            Ok((&dx + (dy - &dx) * c(u[1])) * c(v[0]) + (y - x) * c(v[1]))
        };
        let bs = |u: Param, v1: Param, v2: Param| -> Result<CMat> { conn.b_sph(&psi(u)?, &dpsi(u, v1)?, &dpsi(u, v2)?) };
        let mut acc = zeros(m, m);
        for [a, b, cc] in &tri.triangles {
            acc += de_rham_triangle(&bs, tri.vertices[*a], tri.vertices[*b], tri.vertices[*cc])?;
        }
        // C¹ runs along y then back along x: opposite to the (a, s) orientation
        let acc = -acc;
        let first = Arrow2::new(mat_exp(&(-(&bns_int + &acc))), g.clone());
        (Some(acc), Some(first))
    } else {
        (None, None)
    };
    Ok(AbelianSurface { bns_integral: bns_int, boundary_lines: lines, bsph_integral, g, second_kind, first_kind })
}

/// Holonomy of `first` followed by `second` along the parameter.
pub fn hol_compose_horizontal(cm: &CrossedModule, first: &HolonomyResult, second: &HolonomyResult) -> Result<HolonomyResult> {
    let arrow = horizontal_compose(cm, &second.arrow, &first.arrow)?;
    Ok(merge(arrow, first, second))
}

fn merge(arrow: Arrow2, first: &HolonomyResult, second: &HolonomyResult) -> HolonomyResult {
    let mut trace = first.chart_trace.clone();
    for ch in &second.chart_trace {
        if trace.last() != Some(ch) {
            trace.push(ch.clone());
        }
    }
    HolonomyResult { arrow, path_samples: None, chart_trace: trace, seam_mismatch: first.seam_mismatch.max(second.seam_mismatch) }
}

/// `upper ∘ lower`; the endpoint mismatch is recorded and checked against `tol`.
pub fn hol_compose_vertical(cm: &CrossedModule, upper: &HolonomyResult, lower: &HolonomyResult, tol: f64) -> Result<HolonomyResult> {
    let arrow = vertical_compose(cm, &upper.arrow, &lower.arrow, tol)?;
    let mismatch = rel_dist(&upper.arrow.g, &lower.arrow.target(cm));
    let mut r = merge(arrow, lower, upper);
    r.seam_mismatch = r.seam_mismatch.max(mismatch);
    Ok(r)
}

/// Group inverse in `H⋊G`: `(α_{g⁻¹}(h⁻¹), g⁻¹)`.
pub fn arrow_inverse(cm: &CrossedModule, a: &Arrow2) -> Result<Arrow2> {
    let gi = inverse(&a.g)?;
    Ok(Arrow2::new(cm.alpha(&gi, &inverse(&a.h)?)?, gi))
}

/// `q^ij(y⋆, x⋆) = (h^ij(y⋆, x⋆), g^ij(x⋆))`.
pub fn transition_arrow<T: TransitionFunctions + ?Sized>(tf: &T, i: &Chart, j: &Chart, y: &Projector, x: &Projector) -> Result<Arrow2> {
    Ok(Arrow2::new(tf.h(i, j, y, x)?, tf.g(i, j, x)?))
}

/// `b · q^ij(y⋆,x⋆)⁻¹ · a` for `a` in chart `i` ending at the seam arrow and
/// `b` in chart `j` starting there.
pub fn cross_chart_horizontal<T: TransitionFunctions + ?Sized>(
    tf: &T,
    i: &Chart,
    j: &Chart,
    a: &HolonomyResult,
    b: &HolonomyResult,
    y_star: &Projector,
    x_star: &Projector,
) -> Result<HolonomyResult> {
    let cm = tf.cm();
    let q = arrow_inverse(&cm, &transition_arrow(tf, i, j, y_star, x_star)?)?;
    let arrow = horizontal_compose(&cm, &b.arrow, &horizontal_compose(&cm, &q, &a.arrow)?)?;
    Ok(merge(arrow, a, b))
}

/// `b ∘ ((e, g^ij(x⋆(1)))⁻¹ · ((P-exp −∫α_{g^ij}(η^ij), P-exp −∫A^i) ∘ a) · (e, g^ij(x⋆(0))))`
/// with the shared boundary `C⋆` given as a chart-`i` curve.
#[allow(clippy::too_many_arguments)]
pub fn cross_chart_vertical(
    conn: &StiefelConnection,
    i: &Chart,
    j: &Chart,
    a: &HolonomyResult,
    b: &HolonomyResult,
    boundary: &ChartCurve,
    steps: usize,
    tol: f64,
) -> Result<HolonomyResult> {
    let cm = conn.cm();
    let m = cm.m;
    let li = conn.local(i);
    let proj = |u: f64| -> Result<Projector> { i.projector_at(&boundary.at(u)?) };
    let g_at = |u: f64| -> Result<CMat> { crate::bundle::g_transition(i, j, &proj(u)?) };
    let corr_h = path_ordered_exp(
        |u| {
            let p = proj(u)?;
            let e = conn.potential_transformation(i, j, &p, &boundary.velocity(u)?)?;
            cm.alpha(&crate::bundle::g_transition(i, j, &p)?, &e)
        },
        m,
        steps,
    )?;
    let corr_g = path_ordered_exp(|u| li.a(&boundary.at(u)?, &boundary.velocity(u)?), m, steps)?;
    let corr = HolonomyResult::new(Arrow2::new(corr_h, corr_g), Some(i.clone()));
    let mid = hol_compose_vertical(&cm, &corr, a, tol)?;
    let left = arrow_inverse(&cm, &Arrow2::unit_on(g_at(1.0)?))?;
    let right = Arrow2::unit_on(g_at(0.0)?);
    let conj = horizontal_compose(&cm, &horizontal_compose(&cm, &left, &mid.arrow)?, &right)?;
    let conj = HolonomyResult { arrow: conj, ..mid };
    hol_compose_vertical(&cm, b, &conj, tol)
}

/// `bc · F⁻¹ · a` with `F = (h^ik(y⋆,x⋆)·h^ijk(x⋆), g^ij(x⋆)·g^jk(x⋆))`.
#[allow(clippy::too_many_arguments)]
pub fn cross_chart_triple<T: TransitionFunctions + ?Sized>(
    tf: &T,
    i: &Chart,
    j: &Chart,
    k: &Chart,
    a: &HolonomyResult,
    bc: &HolonomyResult,
    y_star: &Projector,
    x_star: &Projector,
) -> Result<HolonomyResult> {
    let cm = tf.cm();
    let f = triple_factor(tf, i, j, k, y_star, x_star)?;
    let fi = arrow_inverse(&cm, &f)?;
    let arrow = horizontal_compose(&cm, &bc.arrow, &horizontal_compose(&cm, &fi, &a.arrow)?)?;
    Ok(merge(arrow, a, bc))
}

pub fn triple_factor<T: TransitionFunctions + ?Sized>(tf: &T, i: &Chart, j: &Chart, k: &Chart, y: &Projector, x: &Projector) -> Result<Arrow2> {
    Ok(Arrow2::new(tf.h(i, k, y, x)? * tf.h3(i, j, k, x)?, tf.g(i, j, x)? * tf.g(j, k, x)?))
}

/// Chart holding every projector in `ps`, preferring the best chart of the first.
fn common_chart(ps: &[Projector]) -> Option<Chart> {
    let first = ps.first()?;
    let best = best_chart(first);
    if ps.iter().all(|p| best.contains(p)) {
        return Some(best);
    }
    Chart::all(first.n(), first.rank()).into_iter().find(|ch| ps.iter().all(|p| ch.contains(p)))
}

/// Lift of a pseudosurface cut into `resolution` parameter slabs. Each slab is
/// a vertical stack of elementary pieces lifted in one chart; slabs are joined
/// in path order, with a transition factor at every chart change.
pub fn lift_pseudosurface(conn: &StiefelConnection, g: &PseudoSurface, resolution: usize, steps: usize, exec: Exec) -> Result<HolonomyResult> {
    let res = resolution.max(1);
    let tf = crate::bundle::StiefelBundle::new(conn.n, conn.m);
    let cm = conn.cm();
    let len = g.at(0.0)?.len();
    if len < 2 {
        let x = ChartCurve::from_fn({
            let g = g.clone();
            move |u| best_chart(g.at(0.0)?.source()).coordinates(g.at(u)?.source())
        });
        let ch = best_chart(g.at(0.0)?.source());
        let curve = PairCurve::new(x.clone(), x);
        let mut r = lift_curve(&conn.local(&ch), &curve, steps, false)?;
        r.chart_trace = vec![ch];
        return Ok(r);
    }
    let slabs = par::try_map_indexed(exec, res, |r| -> Result<(Chart, HolonomyResult)> {
        let (u0, u1) = (r as f64 / res as f64, (r + 1) as f64 / res as f64);
        let mut ps = Vec::new();
        for u in [u0, 0.5 * (u0 + u1), u1] {
            let s = g.at(u)?;
            if s.len() != len {
                return Err(Error::InvalidInput(format!("skeleton length changes from {len} to {} at u = {u}", s.len())));
            }
            ps.extend(s.projectors().iter().cloned());
        }
        let ch = common_chart(&ps).ok_or(Error::NoChartCover(r))?;
        let steps_piece = (steps / res).max(8);
        let mut acc: Option<HolonomyResult> = None;
        // bottom level first, composing upwards
        for level in (0..len - 1).rev() {
            let (gy, gx) = (g.clone(), g.clone());
            let (cy, cx) = (ch.clone(), ch.clone());
            let y = ChartCurve::from_fn(move |s| cy.coordinates(&gy.at(u0 + s * (u1 - u0))?.projectors()[level]));
            let x = ChartCurve::from_fn(move |s| cx.coordinates(&gx.at(u0 + s * (u1 - u0))?.projectors()[level + 1]));
            let mut piece = lift_curve(&conn.local(&ch), &PairCurve::new(y, x), steps_piece, false)?;
            piece.chart_trace = vec![ch.clone()];
            acc = Some(match acc {
                None => piece,
                Some(lower) => hol_compose_vertical(&cm, &piece, &lower, f64::INFINITY)?,
            });
        }
        Ok((ch, acc.expect("at least one level")))
    })?;
    let mut iter = slabs.into_iter();
    let (mut ch, mut acc) = iter.next().expect("at least one slab");
    for (r, (next_ch, slab)) in iter.enumerate() {
        let u = (r + 1) as f64 / res as f64;
        if next_ch == ch {
            acc = hol_compose_horizontal(&cm, &acc, &slab)?;
        } else {
            let s = g.at(u)?;
            acc = cross_chart_horizontal(&tf, &ch, &next_ch, &acc, &slab, s.target(), s.source())?;
            ch = next_ch;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{Defect, Defected, StiefelBundle};
    use crate::connection::FnConnection;
    use crate::grassmann::{random_projector, random_projector_near, Projector};
    use crate::linalg::{gaussian, C64};
    use crate::two_space::{ps_horizontal_compose, Skeleton};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(s: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(s)
    }

    #[test]
    fn pexp_basics() {
        let z = path_ordered_exp(|_| Ok(zeros(2, 2)), 2, 16).unwrap();
        assert_eq!(z, eye(2));
        let x = gaussian(3, 3, &mut rng(1)) * c(0.5);
        let y = path_ordered_exp(|_| Ok(x.clone()), 3, 256).unwrap();
        assert!(rel_dist(&y, &mat_exp(&-&x)) < 1e-10);
        // scalar f(u) = cos(3u) + u²: ∫₀¹ f = sin(3)/3 + 1/3
        let y = path_ordered_exp(|u| Ok(CMat::from_element(1, 1, c((3.0 * u).cos() + u * u))), 1, 512).unwrap();
        let exact = (-((3.0f64).sin() / 3.0 + 1.0 / 3.0)).exp();
        assert!((y[(0, 0)].re - exact).abs() < 1e-10);
    }

    #[test]
    fn pexp_fourth_order() {
        let mut r = rng(2);
        let (a, b) = (gaussian(2, 2, &mut r), gaussian(2, 2, &mut r));
        let gen = |u: f64| Ok(&a * c(u.sin()) + &b * c(u * u));
        let reference = path_ordered_exp(gen, 2, 4096).unwrap();
        let e1 = rel_dist(&path_ordered_exp(gen, 2, 16).unwrap(), &reference);
        let e2 = rel_dist(&path_ordered_exp(gen, 2, 32).unwrap(), &reference);
        assert!((e1 / e2).log2() > 3.5, "{e1} {e2}");
    }

    #[test]
    fn sampled_curve_is_cubic_exact() {
        let f = |u: f64| CMat::from_element(1, 1, c(1.0 + 2.0 * u - u * u * u));
        let df = |u: f64| CMat::from_element(1, 1, c(2.0 - 3.0 * u * u));
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let cur = ChartCurve::sampled(grid.iter().map(|&u| f(u)).collect(), grid.iter().map(|&u| df(u)).collect()).unwrap();
        for u in [0.0, 0.03, 0.37, 0.5, 0.96, 1.0] {
            assert!(rel_dist(&cur.at(u).unwrap(), &f(u)) < 1e-13);
        }
        assert!(ChartCurve::sampled(vec![eye(1); 3], vec![eye(1); 3]).is_err());
    }

    #[test]
    fn determinant_collapse_detected() {
        // a root of the RK4 amplification polynomial: one step lands on zero
        let z = C64::new(1.729_444_231_067_705_5, 0.888_974_376_121_865_8);
        let r = path_ordered_exp(|_| Ok(CMat::from_element(1, 1, z)), 1, 1);
        assert!(matches!(r, Err(Error::DeterminantCollapse(_))));
    }

    fn stiefel_curve(seed: u64) -> (StiefelConnection, Chart, PairCurve) {
        let mut r = rng(seed);
        let conn = StiefelConnection::new(2, 1);
        let ch = Chart::new(vec![0]);
        let (y0, y1) = (gaussian(1, 1, &mut r) * c(0.3), gaussian(1, 1, &mut r) * c(0.3));
        let (x0, x1) = (gaussian(1, 1, &mut r) * c(0.3), gaussian(1, 1, &mut r) * c(0.3));
        let y = ChartCurve::from_fn(move |u| Ok(&y0 + &y1 * c((2.0 * u).sin())));
        let x = ChartCurve::from_fn(move |u| Ok(&x0 + &x1 * c(u * u)));
        (conn, ch, PairCurve::new(y, x))
    }

    #[test]
    fn split_matches_joint() {
        let (conn, ch, curve) = stiefel_curve(3);
        let loc = conn.local(&ch);
        let joint = lift_curve(&loc, &curve, 2048, false).unwrap();
        let split = lift_split(&loc, &curve, 2048).unwrap();
        assert!(joint.arrow.distance(&split.recombined) < 1e-8);
        let (src, _) = boundary_residuals(&loc, &curve, &joint.arrow, 2048).unwrap();
        assert!(src < 1e-8);
    }

    #[test]
    fn nonstrict_target_and_conjugated_split() {
        let (conn, ch, curve) = stiefel_curve(3);
        let loc = conn.local(&ch);
        let j = lift_curve(&loc, &curve, 1024, false).unwrap();
        let (src, tgt) = boundary_residuals(&loc, &curve, &j.arrow, 1024).unwrap();
        assert!(src < 1e-8 && tgt > 1e-2, "{src} {tgt}");
        let mut r = rng(4);
        let conn = StiefelConnection::new(4, 2);
        let ch = Chart::new(vec![0, 1]);
        let (y0, y1, x0, x1) = (gaussian(2, 2, &mut r) * c(0.3), gaussian(2, 2, &mut r) * c(0.3), gaussian(2, 2, &mut r) * c(0.3), gaussian(2, 2, &mut r) * c(0.3));
        let curve = PairCurve::new(ChartCurve::segment(y0, y1), ChartCurve::segment(x0, x1));
        let loc = conn.local(&ch);
        let j = lift_curve(&loc, &curve, 1024, false).unwrap();
        let (src, tgt) = boundary_residuals(&loc, &curve, &j.arrow, 1024).unwrap();
        assert!(src < 1e-8 && tgt > 1e-2, "{src} {tgt}");
        // the conjugation G η G⁻¹ in place of G⁻¹ η G misses the joint lift
        let cm = loc.cm();
        let (mut gg, mut kk) = (eye(2), eye(2));
        let n = 4096;
        let h = 1.0 / n as f64;
        for s in 0..n {
            let (e, a) = generators(&loc, &curve, (s as f64 + 0.5) * h).unwrap();
            kk = mat_exp(&(-cm.alpha(&gg, &e).unwrap() * c(h))) * &kk;
            gg = mat_exp(&(-a * c(h))) * &gg;
        }
        let wrong = Arrow2::new(cm.alpha(&gg, &kk).unwrap(), gg.clone());
        assert!(wrong.distance(&j.arrow) > 1e-2);
    }

    #[test]
    fn split_matches_joint_nonabelian() {
        let mut r = rng(4);
        let conn = StiefelConnection::new(4, 2);
        let ch = Chart::new(vec![0, 1]);
        let (y0, y1, x0, x1) = (
            gaussian(2, 2, &mut r) * c(0.3),
            gaussian(2, 2, &mut r) * c(0.3),
            gaussian(2, 2, &mut r) * c(0.3),
            gaussian(2, 2, &mut r) * c(0.3),
        );
        let curve = PairCurve::new(ChartCurve::segment(y0, y1), ChartCurve::segment(x0, x1));
        let loc = conn.local(&ch);
        let joint = lift_curve(&loc, &curve, 1024, false).unwrap();
        let split = lift_split(&loc, &curve, 1024).unwrap();
        assert!(joint.arrow.distance(&split.recombined) < 1e-8);
    }

    #[test]
    fn degenerate_and_constant_lifts() {
        let conn = StiefelConnection::new(3, 1);
        let ch = Chart::new(vec![1]);
        let p = random_projector(3, 1, 5);
        let cst = PseudoSurface::constant(Skeleton::pair(random_projector_near(&p, 0.2, 6), p.clone()));
        let r = lift_elementary(&conn, &cst, &ch, 64).unwrap();
        assert!(r.arrow.distance(&Arrow2::identity(1)) < 1e-12);

        let mut rr = rng(7);
        let (a, b) = (gaussian(2, 1, &mut rr) * c(0.3), gaussian(2, 1, &mut rr) * c(0.3));
        let x = ChartCurve::segment(a, b);
        let curve = PairCurve::new(x.clone(), x.clone());
        let loc = conn.local(&ch);
        let r = lift_curve(&loc, &curve, 512, false).unwrap();
        assert!(rel_dist(&r.arrow.h, &eye(1)) < 1e-9);
        let g = path_ordered_exp(|u| loc.a(&x.at(u)?, &x.velocity(u)?), 1, 512).unwrap();
        assert!(rel_dist(&r.arrow.g, &g) < 1e-12);
    }

    #[test]
    fn horizontal_functoriality() {
        let (conn, ch, curve) = stiefel_curve(8);
        let loc = conn.local(&ch);
        let whole = lift_curve(&loc, &curve, 2048, false).unwrap();
        let a = lift_curve(&loc, &curve.restrict(0.0, 0.4), 2048, false).unwrap();
        let b = lift_curve(&loc, &curve.restrict(0.4, 1.0), 2048, false).unwrap();
        let comp = hol_compose_horizontal(&loc.cm(), &a, &b).unwrap();
        assert!(comp.arrow.distance(&whole.arrow) < 1e-8);
        let id = HolonomyResult::new(Arrow2::identity(1), None);
        assert!(hol_compose_horizontal(&loc.cm(), &a, &id).unwrap().arrow.distance(&a.arrow) < 1e-15);
    }

    #[test]
    fn pseudosurface_concatenation_lift() {
        let conn = StiefelConnection::new(3, 1);
        let ch = Chart::new(vec![0]);
        let p = random_projector(3, 1, 9);
        let ch_p = ch.coordinates(&p).unwrap();
        let mut r = rng(10);
        let (dy, dx) = (gaussian(2, 1, &mut r) * c(0.2), gaussian(2, 1, &mut r) * c(0.2));
        let make = |s0: f64, s1: f64| {
            let (ch1, ch2, base, dy, dx) = (ch.clone(), ch.clone(), ch_p.clone(), dy.clone(), dx.clone());
            let base2 = base.clone();
            PseudoSurface::elementary(
                move |u| ch1.projector_at(&(&base + &dy * c(0.5 + s0 + (s1 - s0) * u))),
                move |u| ch2.projector_at(&(&base2 + &dx * c((s0 + (s1 - s0) * u).powi(2)))),
            )
        };
        let (g1, g2) = (make(0.0, 0.5), make(0.5, 1.0));
        let g12 = ps_horizontal_compose(&g1, &g2).unwrap();
        let l1 = lift_elementary(&conn, &g1, &ch, 1024).unwrap();
        let l2 = lift_elementary(&conn, &g2, &ch, 1024).unwrap();
        let l12 = lift_elementary(&conn, &g12, &ch, 2048).unwrap();
        let comp = hol_compose_horizontal(&conn.cm(), &l1, &l2).unwrap();
        // the composite is only piecewise smooth at u = ½; RK4 straddles it
        assert!(comp.arrow.distance(&l12.arrow) < 1e-8, "{}", comp.arrow.distance(&l12.arrow));
    }

    #[test]
    fn exchange_law_on_lift_grid() {
        // four strict pieces on a 2 × 2 grid: (γ11∘γ12)*(γ21∘γ22) = (γ11*γ21)∘(γ12*γ22)
        let mut r = rng(11);
        let (a0, a1) = (gaussian(2, 2, &mut r), gaussian(2, 2, &mut r));
        let a_of = move |x: &CMat| &a0 + &a1 * x[(0, 0)];
        let a2 = a_of.clone();
        let conn = FnConnection::new(CrossedModule::gl_adj(2), move |x, dx| Ok(a_of(x) * dx[(0, 0)]), move |p, v| {
            Ok(a2(&p.y) * v.dy[(0, 0)] - a2(&p.x) * v.dx[(0, 0)])
        });
        let s = |f: fn(f64) -> f64| ChartCurve::from_fn(move |u| Ok(CMat::from_element(1, 1, c(f(u)))));
        // three object paths z (top), w (middle), x (bottom) over [0,1], cut at u = ½
        let z = s(|u| 0.3 + 0.2 * u);
        let w = s(|u| 0.1 * (3.0 * u).sin());
        let x = s(|u| -0.2 + 0.1 * u * u);
        let cm = conn.cm();
        let lift = |y: &ChartCurve, x: &ChartCurve, a: f64, b: f64| {
            lift_curve(&conn, &PairCurve::new(y.restrict(a, b), x.restrict(a, b)), 1024, false).unwrap()
        };
        let (g11, g12) = (lift(&z, &w, 0.0, 0.5), lift(&w, &x, 0.0, 0.5));
        let (g21, g22) = (lift(&z, &w, 0.5, 1.0), lift(&w, &x, 0.5, 1.0));
        let tol = 1e-8;
        let lhs = hol_compose_horizontal(
            &cm,
            &hol_compose_vertical(&cm, &g11, &g12, tol).unwrap(),
            &hol_compose_vertical(&cm, &g21, &g22, tol).unwrap(),
        )
        .unwrap();
        let rhs = hol_compose_vertical(
            &cm,
            &hol_compose_horizontal(&cm, &g11, &g21).unwrap(),
            &hol_compose_horizontal(&cm, &g12, &g22).unwrap(),
            tol,
        )
        .unwrap();
        assert!(lhs.arrow.distance(&rhs.arrow) < 1e-8);
    }

    #[test]
    fn cross_chart_identities() {
        let tf = StiefelBundle::new(3, 1);
        let (i, j, k) = (Chart::new(vec![0]), Chart::new(vec![1]), Chart::new(vec![2]));
        let x = Projector::from_frame(&CMat::from_column_slice(3, 1, &[c(1.0), c(0.8), c(0.6)])).unwrap();
        let y = random_projector_near(&x, 0.1, 12);
        let mut r = rng(13);
        let a = HolonomyResult::new(Arrow2::new(gaussian(1, 1, &mut r) + eye(1), gaussian(1, 1, &mut r) + eye(1)), Some(i.clone()));
        let b = HolonomyResult::new(Arrow2::new(gaussian(1, 1, &mut r) + eye(1), gaussian(1, 1, &mut r) + eye(1)), Some(j.clone()));
        let cm = tf.cm();
        let same = cross_chart_horizontal(&tf, &i, &i, &a, &b, &y, &x).unwrap();
        let plain = hol_compose_horizontal(&cm, &a, &b).unwrap();
        assert!(same.arrow.distance(&plain.arrow) < 1e-13);
        let q = transition_arrow(&tf, &i, &j, &x, &x).unwrap();
        assert!(rel_dist(&q.h, &eye(1)) < 1e-13);
        // Stiefel: h^ijk = 1, so the triple rule is the horizontal rule with chart k
        let t = cross_chart_triple(&tf, &i, &j, &k, &a, &b, &y, &x).unwrap();
        let hk = cross_chart_horizontal(&tf, &i, &k, &a, &b, &y, &x).unwrap();
        assert!(t.arrow.distance(&hk.arrow) < 1e-12);
        let d = CMat::from_element(1, 1, C64::new(1.3, 0.2));
        let bad = Defected { inner: tf, defect: Defect::G { i: i.clone(), k: k.clone(), d: d.clone() } };
        let f = triple_factor(&bad, &i, &j, &k, &y, &x).unwrap();
        let f0 = triple_factor(&tf, &i, &j, &k, &y, &x).unwrap();
        assert!(rel_dist(&(&f.h * inverse(&f0.h).unwrap()), &d) < 1e-12);
    }

    #[test]
    fn seam_shift_defect_is_small_for_nearby_seams() {
        let conn = StiefelConnection::new(3, 1);
        let tf = StiefelBundle::new(3, 1);
        let (i, j) = (Chart::new(vec![0]), Chart::new(vec![1]));
        let base = Projector::from_frame(&CMat::from_column_slice(3, 1, &[c(1.0), c(0.9), c(0.3)])).unwrap();
        let xi = i.coordinates(&base).unwrap();
        let mut r = rng(14);
        let (dy, dx) = (gaussian(2, 1, &mut r) * c(0.05), gaussian(2, 1, &mut r) * c(0.05));
        let path = |u: f64, d: &CMat, off: f64| i.projector_at(&(&xi + d * c(u + off)));
        let lift_piece = |a: f64, b: f64, ch: &Chart| {
            let (dy, dx, xi, i2, ch) = (dy.clone(), dx.clone(), xi.clone(), i.clone(), ch.clone());
            let g = PseudoSurface::elementary(
                {
                    let (dy, xi, i2) = (dy.clone(), xi.clone(), i2.clone());
                    move |u| i2.projector_at(&(&xi + &dy * c(0.5 + a + (b - a) * u)))
                },
                move |u| i2.projector_at(&(&xi + &dx * c(a + (b - a) * u))),
            );
            lift_elementary(&conn, &g, &ch, 512).unwrap()
        };
        let seam = |s: f64| {
            let a = lift_piece(0.0, s, &i);
            let b = lift_piece(s, 1.0, &j);
            let y = path(s, &dy, 0.5).unwrap();
            let x = path(s, &dx, 0.0).unwrap();
            cross_chart_horizontal(&tf, &i, &j, &a, &b, &y, &x).unwrap().arrow
        };
        let (s1, s2, s3) = (seam(0.5), seam(0.5 + 1e-2), seam(0.5 + 2e-2));
        let (d1, d2) = (s1.distance(&s2), s1.distance(&s3));
        assert!(d1.is_finite() && d2.is_finite());
        assert!(d2 > d1 * 1.5 || d2 < 1e-12, "{d1} {d2}");
    }

    fn central_strict(seed: u64) -> FnConnection {
        // A = a(x)·I scalar, η = a(y)dy − a(x)dx, B_sph = da: a strict central field
        let mut r = rng(seed);
        let k: Vec<C64> = (0..3).map(|_| gaussian(1, 1, &mut r)[(0, 0)]).collect();
        let (k1, k2) = (k.clone(), k.clone());
        let a = move |x: C64| k[0] + k[1] * x + k[2] * x * x.conj();
        let a2 = a.clone();
        let da = move |x: C64, v1: C64, v2: C64| {
            // a is real-differentiable: ∂a/∂re = k1 + 2 k2 re, ∂a/∂im = i k1 + 2 k2 im
            let grad = |v: C64| k1[1] * v + k1[2] * (v * x.conj() + x * v.conj());
            let _ = k2[0];
            (grad(v1), grad(v2))
        };
        let m = 2;
        FnConnection::new(CrossedModule::central(m), move |x, dx| Ok(eye(m) * (a(x[(0, 0)]) * dx[(0, 0)])), move |p, v| {
            Ok(eye(m) * (a2(p.y[(0, 0)]) * v.dy[(0, 0)] - a2(p.x[(0, 0)]) * v.dx[(0, 0)]))
        })
        .with_b_sph(move |x, v1, v2| {
            // d(a dz)(v1, v2) = D_{v1}a · v2 − D_{v2}a · v1
            let (x, v1, v2) = (x[(0, 0)], v1[(0, 0)], v2[(0, 0)]);
            let (d1, d2) = da(x, v1, v2);
            Ok(eye(m) * (d1 * v2 - d2 * v1))
        })
    }

    fn impervious_curve() -> PairCurve {
        // y(0) = x(0), y(1) = x(1)
        let y = ChartCurve::from_fn(|u| Ok(CMat::from_element(1, 1, C64::new(0.2 * u, 0.3 * (std::f64::consts::PI * u).sin()))));
        let x = ChartCurve::from_fn(|u| Ok(CMat::from_element(1, 1, C64::new(0.2 * u, -0.1 * (std::f64::consts::PI * u).sin()))));
        PairCurve::new(y, x)
    }

    #[test]
    fn abelian_surface_agrees_with_lift() {
        let conn = central_strict(15);
        let curve = impervious_curve();
        let lift = lift_curve(&conn, &curve, 2048, false).unwrap();
        let mut diffs = Vec::new();
        for k in [4, 8, 16] {
            let s = abelian_surface_holonomy(&conn, &curve, k, 256, 1e-4).unwrap();
            assert!(s.second_kind.distance(&lift.arrow) < 1e-6, "{}", s.second_kind.distance(&lift.arrow));
            diffs.push((1.0 / k as f64, s.first_kind.unwrap().distance(&lift.arrow)));
        }
        let order = crate::simplicial::fitted_order(&diffs).unwrap();
        assert!(order >= 1.7, "{diffs:?}");
    }

    #[test]
    fn abelian_requires_central() {
        let (conn, ch, curve) = stiefel_curve(16);
        let r = abelian_surface_holonomy(&conn.local(&ch), &curve, 4, 64, 1e-4);
        assert!(matches!(r, Err(Error::NotAbelian)));
        let conn = central_strict(17);
        let cst = PairCurve::new(ChartCurve::constant(CMat::from_element(1, 1, c(0.1))), ChartCurve::constant(CMat::from_element(1, 1, c(0.1))));
        let s = abelian_surface_holonomy(&conn, &cst, 4, 16, 1e-4).unwrap();
        assert!(s.first_kind.unwrap().distance(&Arrow2::identity(2)) < 1e-14);
    }

    #[test]
    fn pseudosurface_lift_single_piece_and_stack() {
        let conn = StiefelConnection::new(3, 1);
        let p = random_projector(3, 1, 18);
        let base = best_chart(&p).coordinates(&p).unwrap();
        let bc = best_chart(&p);
        let mut r = rng(19);
        let (d1, d2, d3) = (gaussian(2, 1, &mut r) * c(0.05), gaussian(2, 1, &mut r) * c(0.05), gaussian(2, 1, &mut r) * c(0.05));
        let at = |d: CMat, off: f64| {
            let (b, ch) = (base.clone(), bc.clone());
            move |u: f64| ch.projector_at(&(&b + &d * c(u + off)))
        };
        let g = PseudoSurface::elementary(at(d1.clone(), 0.3), at(d2.clone(), 0.0));
        let whole = lift_pseudosurface(&conn, &g, 1, 1024, Exec::Sequential).unwrap();
        let single = lift_elementary(&conn, &g, &bc, 1024).unwrap();
        assert!(whole.arrow.distance(&single.arrow) < 1e-8);

        let (top, mid, bot) = (at(d1, 0.3), at(d2, 0.0), at(d3, -0.3));
        let stack = PseudoSurface::from_fn(move |u| Skeleton::new(vec![top(u)?, mid(u)?, bot(u)?]));
        let lifted = lift_pseudosurface(&conn, &stack, 1, 1024, Exec::Sequential).unwrap();
        assert_eq!(lifted.chart_trace.len(), 1);
        assert!(lifted.seam_mismatch.is_finite());
    }

    #[test]
    fn two_chart_pseudosurface_refines() {
        let conn = StiefelConnection::new(2, 1);
        // objects sweep from near e₀ to near e₁, forcing a chart change
        let path = |off: f64| {
            move |u: f64| {
                let th = 0.2 + 1.1 * u + off;
                Projector::from_frame(&CMat::from_column_slice(2, 1, &[c(th.cos()), C64::new(th.sin(), 0.1)]))
            }
        };
        let g = PseudoSurface::elementary(path(0.15), path(0.0));
        let res = [8usize, 16, 32, 64, 128, 256];
        let lifts: Vec<HolonomyResult> = res.iter().map(|&r| lift_pseudosurface(&conn, &g, r, 2048, Exec::Parallel).unwrap()).collect();
        assert!(lifts.iter().all(|l| l.chart_trace.len() >= 2));
        // the seam moves with the grid, so successive lifts differ by O(1/resolution)
        for (w, r) in lifts.windows(2).zip(res) {
            let d = w[0].arrow.distance(&w[1].arrow);
            assert!(d * (r as f64) < 0.1, "resolution {r}: {d:e}");
        }
    }
}
