//! 2-connections: the gauge potentials `A` and `η`, curvatures, curvings,
//! and their gluing relations.
//!
//! Forms are evaluators on chart coordinates. Points of the base are
//! coordinate matrices `ξ`; points of the pair space are `(y, x)`. Exterior
//! derivatives are central differences along constant coordinate fields, and
//! wedge products of algebra-valued forms use the bracket convention
//! `[ω∧θ](v₁,v₂) = [ω(v₁),θ(v₂)] − [ω(v₂),θ(v₁)]`, so that
//! `A∧A(v₁,v₂) = [A(v₁),A(v₂)]` in matrix notation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bundle::{g_transition, h_transition, two_transition, StiefelBundle};
use crate::crossed_module::{adjoint, semidirect_bracket, AlgebraElement, CrossedModule};
use crate::error::{Error, Result};
use crate::grassmann::{charts_for, linkable, random_projector_near_rng, random_projector_rng, Chart, Projector, DEFAULT_MARGIN};
use crate::linalg::{c, frob, gaussian, inverse, left_inverse, rel_dist, zeros, CMat};
use crate::par::{self, Exec};

pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Step for exterior derivatives of forms that are themselves difference
/// quotients.
pub const DEFAULT_OUTER_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdScheme {
    pub step: f64,
    pub richardson: bool,
}

impl Default for FdScheme {
    fn default() -> Self {
        Self { step: DEFAULT_FD_STEP, richardson: false }
    }
}

impl FdScheme {
    /// Directional derivative of `f(s)` at `s = 0` for a unit-speed direction
    /// scaled by `speed`.
    pub fn derivative<F>(&self, f: F, speed: f64) -> Result<CMat>
    where
        F: Fn(f64) -> Result<CMat>,
    {
        if speed == 0.0 {
            let z = f(0.0)?;
            return Ok(zeros(z.nrows(), z.ncols()));
        }
        let cd = |h: f64| -> Result<CMat> { Ok((f(h)? - f(-h)?) * c(0.5 / h)) };
        let d = if self.richardson {
            let d1 = cd(self.step)?;
            let d2 = cd(self.step / 2.0)?;
            (d2 * c(4.0) - d1) * c(1.0 / 3.0)
        } else {
            cd(self.step)?
        };
        Ok(d * c(speed))
    }
}

/// A point `(y, x)` of the pair space in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPoint {
    pub y: CMat,
    pub x: CMat,
}

/// A tangent vector `(δy, δx)` of the pair space.
#[derive(Debug, Clone, PartialEq)]
pub struct PairVec {
    pub dy: CMat,
    pub dx: CMat,
}

impl PairPoint {
    pub fn new(y: CMat, x: CMat) -> Self {
        Self { y, x }
    }

    pub fn diagonal(x: CMat) -> Self {
        Self { y: x.clone(), x }
    }

    pub fn shifted(&self, v: &PairVec, s: f64) -> PairPoint {
        PairPoint { y: &self.y + &v.dy * c(s), x: &self.x + &v.dx * c(s) }
    }
}

impl PairVec {
    pub fn new(dy: CMat, dx: CMat) -> Self {
        Self { dy, dx }
    }

    pub fn diagonal(d: CMat) -> Self {
        Self { dy: d.clone(), dx: d }
    }

    pub fn norm(&self) -> f64 {
        (frob(&self.dy).powi(2) + frob(&self.dx).powi(2)).sqrt()
    }

    pub fn scaled(&self, s: f64) -> PairVec {
        PairVec { dy: &self.dy * c(s), dx: &self.dx * c(s) }
    }

    pub fn zero_like(&self) -> PairVec {
        self.scaled(0.0)
    }
}

/// Gauge potentials of one chart, as evaluators on coordinates.
pub trait LocalConnection: Send + Sync {
    fn cm(&self) -> CrossedModule;
    /// `A(x)(δx)` in 𝔤.
    fn a(&self, x: &CMat, dx: &CMat) -> Result<CMat>;
    /// `η(y, x)(δy, δx)` in 𝔥.
    fn eta(&self, p: &PairPoint, v: &PairVec) -> Result<CMat>;
    /// Spherical curving `B_sph(x)(v₁, v₂)`; zero unless supplied.
    fn b_sph(&self, x: &CMat, _v1: &CMat, _v2: &CMat) -> Result<CMat> {
        let m = self.cm().m;
        let _ = x;
        Ok(zeros(m, m))
    }
}

type AFn = dyn Fn(&CMat, &CMat) -> Result<CMat> + Send + Sync;
type EtaFn = dyn Fn(&PairPoint, &PairVec) -> Result<CMat> + Send + Sync;
type BFn = dyn Fn(&CMat, &CMat, &CMat) -> Result<CMat> + Send + Sync;

/// A connection assembled from closures.
#[derive(Clone)]
pub struct FnConnection {
    pub cm: CrossedModule,
    a: Arc<AFn>,
    eta: Arc<EtaFn>,
    b_sph: Option<Arc<BFn>>,
}

impl FnConnection {
    pub fn new<A, E>(cm: CrossedModule, a: A, eta: E) -> Self
    where
        A: Fn(&CMat, &CMat) -> Result<CMat> + Send + Sync + 'static,
        E: Fn(&PairPoint, &PairVec) -> Result<CMat> + Send + Sync + 'static,
    {
        Self { cm, a: Arc::new(a), eta: Arc::new(eta), b_sph: None }
    }

    pub fn with_b_sph<B>(mut self, b: B) -> Self
    where
        B: Fn(&CMat, &CMat, &CMat) -> Result<CMat> + Send + Sync + 'static,
    {
        self.b_sph = Some(Arc::new(b));
        self
    }
}

impl LocalConnection for FnConnection {
    fn cm(&self) -> CrossedModule {
        self.cm
    }

    fn a(&self, x: &CMat, dx: &CMat) -> Result<CMat> {
        (self.a)(x, dx)
    }

    fn eta(&self, p: &PairPoint, v: &PairVec) -> Result<CMat> {
        (self.eta)(p, v)
    }

    fn b_sph(&self, x: &CMat, v1: &CMat, v2: &CMat) -> Result<CMat> {
        match &self.b_sph {
            Some(b) => b(x, v1, v2),
            None => Ok(zeros(self.cm.m, self.cm.m)),
        }
    }
}

/// `η̲ = (η, A(x))` as an element of `𝔥 ⋊ 𝔤`.
pub fn eta_bar<C: LocalConnection + ?Sized>(conn: &C, p: &PairPoint, v: &PairVec) -> Result<AlgebraElement> {
    Ok(AlgebraElement::new(conn.eta(p, v)?, conn.a(&p.x, &v.dx)?))
}

fn speed_dir(v: &PairVec) -> (f64, PairVec) {
    let n = v.norm();
    if n == 0.0 {
        (0.0, v.clone())
    } else {
        (n, v.scaled(1.0 / n))
    }
}

/// Directional derivative along `v` of a matrix function of the pair point.
pub fn d_along<F>(f: F, p: &PairPoint, v: &PairVec, h: f64) -> Result<CMat>
where
    F: Fn(&PairPoint) -> Result<CMat>,
{
    let (speed, dir) = speed_dir(v);
    FdScheme { step: h, richardson: false }.derivative(|s| f(&p.shifted(&dir, s)), speed)
}

fn base_d_along<F>(f: F, x: &CMat, v: &CMat, h: f64) -> Result<CMat>
where
    F: Fn(&CMat) -> Result<CMat>,
{
    let speed = frob(v);
    if speed == 0.0 {
        let z = f(x)?;
        return Ok(zeros(z.nrows(), z.ncols()));
    }
    let dir = v * c(1.0 / speed);
    FdScheme { step: h, richardson: false }.derivative(|s| f(&(x + &dir * c(s))), speed)
}

/// `dω(v₁, v₂)` for a 1-form on the pair space.
pub fn d1<F>(omega: F, p: &PairPoint, v1: &PairVec, v2: &PairVec, h: f64) -> Result<CMat>
where
    F: Fn(&PairPoint, &PairVec) -> Result<CMat>,
{
    Ok(d_along(|q| omega(q, v2), p, v1, h)? - d_along(|q| omega(q, v1), p, v2, h)?)
}

/// `dβ(v₁, v₂, v₃)` for a 2-form on the pair space.
pub fn d2<F>(beta: F, p: &PairPoint, v: [&PairVec; 3], h: f64) -> Result<CMat>
where
    F: Fn(&PairPoint, &PairVec, &PairVec) -> Result<CMat>,
{
    let [a, b, cc] = v;
    Ok(d_along(|q| beta(q, b, cc), p, a, h)? - d_along(|q| beta(q, a, cc), p, b, h)?
        + d_along(|q| beta(q, a, b), p, cc, h)?)
}

/// `dH(v₁, …, v₄)` for a 3-form on the pair space.
pub fn d3<F>(hf: F, p: &PairPoint, v: [&PairVec; 4], h: f64) -> Result<CMat>
where
    F: Fn(&PairPoint, [&PairVec; 3]) -> Result<CMat>,
{
    let [a, b, cc, d] = v;
    Ok(d_along(|q| hf(q, [b, cc, d]), p, a, h)? - d_along(|q| hf(q, [a, cc, d]), p, b, h)?
        + d_along(|q| hf(q, [a, b, d]), p, cc, h)?
        - d_along(|q| hf(q, [a, b, cc]), p, d, h)?)
}

/// `F = dA + A∧A − t(B_sph)` on the base.
pub fn fake_curvature<C: LocalConnection + ?Sized>(conn: &C, x: &CMat, v1: &CMat, v2: &CMat, h: f64) -> Result<CMat> {
    let cm = conn.cm();
    let da = base_d_along(|q| conn.a(q, v2), x, v1, h)? - base_d_along(|q| conn.a(q, v1), x, v2, h)?;
    let (a1, a2) = (conn.a(x, v1)?, conn.a(x, v2)?);
    Ok(da + &a1 * &a2 - &a2 * &a1 - cm.t_lie(&conn.b_sph(x, v1, v2)?))
}

/// `B_ns = d₂η + η∧η + α_A(η)`.
pub fn curving_bns<C: LocalConnection + ?Sized>(conn: &C, p: &PairPoint, v1: &PairVec, v2: &PairVec, h: f64) -> Result<CMat> {
    let cm = conn.cm();
    let deta = d1(|q, v| conn.eta(q, v), p, v1, v2, h)?;
    let (e1, e2) = (conn.eta(p, v1)?, conn.eta(p, v2)?);
    let (a1, a2) = (conn.a(&p.x, &v1.dx)?, conn.a(&p.x, &v2.dx)?);
    Ok(deta + cm.h_bracket(&e1, &e2) + cm.alpha_lie(&a1, &e2) - cm.alpha_lie(&a2, &e1))
}

/// `F̲ = d₂η̲ + η̲∧η̲` computed directly in `𝔥 ⋊ 𝔤`.
pub fn pair_curvature<C: LocalConnection + ?Sized>(conn: &C, p: &PairPoint, v1: &PairVec, v2: &PairVec, h: f64) -> Result<AlgebraElement> {
    let cm = conn.cm();
    let dy = d1(|q, v| conn.eta(q, v), p, v1, v2, h)?;
    let dx = d1(|q, v| conn.a(&q.x, &v.dx), p, v1, v2, h)?;
    let br = semidirect_bracket(&cm, &eta_bar(conn, p, v1)?, &eta_bar(conn, p, v2)?)?;
    Ok(AlgebraElement::new(dy + br.y, dx + br.x))
}

fn bracket_h(cm: &CrossedModule, y: &CMat, el: &AlgebraElement) -> Result<CMat> {
    let m = cm.m;
    Ok(semidirect_bracket(cm, &AlgebraElement::new(y.clone(), zeros(m, m)), el)?.y)
}

/// `H = −[η ∧ F̲]`.
pub fn three_curvature<C: LocalConnection + ?Sized>(conn: &C, p: &PairPoint, v: [&PairVec; 3], h: f64) -> Result<CMat> {
    let cm = conn.cm();
    let [a, b, cc] = v;
    let t1 = bracket_h(&cm, &conn.eta(p, a)?, &pair_curvature(conn, p, b, cc, h)?)?;
    let t2 = bracket_h(&cm, &conn.eta(p, b)?, &pair_curvature(conn, p, a, cc, h)?)?;
    let t3 = bracket_h(&cm, &conn.eta(p, cc)?, &pair_curvature(conn, p, a, b, h)?)?;
    Ok(-(t1 - t2 + t3))
}

/// `H = d₂B + α_A(B)` with `B = B_ns`, the defining form of the 3-curvature.
pub fn three_curvature_from_curving<C: LocalConnection + ?Sized>(conn: &C, p: &PairPoint, v: [&PairVec; 3], h: f64) -> Result<CMat> {
    let cm = conn.cm();
    let [a, b, cc] = v;
    let bf = |q: &PairPoint, u1: &PairVec, u2: &PairVec| curving_bns(conn, q, u1, u2, h);
    let db = d2(bf, p, v, h)?;
    let alpha = cm.alpha_lie(&conn.a(&p.x, &a.dx)?, &bf(p, b, cc)?) - cm.alpha_lie(&conn.a(&p.x, &b.dx)?, &bf(p, a, cc)?)
        + cm.alpha_lie(&conn.a(&p.x, &cc.dx)?, &bf(p, a, b)?);
    Ok(db + alpha)
}

/// `‖d₂H + α_A(H) + [B ∧ F̲]‖` at one point for four tangent vectors.
/// `h` is the step of the outermost difference; inner forms use `h_inner`.
pub fn bianchi_residual<C: LocalConnection + ?Sized>(conn: &C, p: &PairPoint, v: [&PairVec; 4], h: f64, h_inner: f64) -> Result<f64> {
    let cm = conn.cm();
    let hf = |q: &PairPoint, w: [&PairVec; 3]| three_curvature(conn, q, w, h_inner);
    let dh = d3(hf, p, v, h)?;
    let [a, b, cc, d] = v;
    let ah = |u: &PairVec| conn.a(&p.x, &u.dx);
    let alpha = cm.alpha_lie(&ah(a)?, &hf(p, [b, cc, d])?) - cm.alpha_lie(&ah(b)?, &hf(p, [a, cc, d])?)
        + cm.alpha_lie(&ah(cc)?, &hf(p, [a, b, d])?)
        - cm.alpha_lie(&ah(d)?, &hf(p, [a, b, cc])?);
    let bns = |u1: &PairVec, u2: &PairVec| -> Result<CMat> {
        Ok(curving_bns(conn, p, u1, u2, h_inner)? + conn.b_sph(&p.x, &u1.dx, &u2.dx)?)
    };
    let fb = |u1: &PairVec, u2: &PairVec| pair_curvature(conn, p, u1, u2, h_inner);
    // (2,2)-shuffles of four slots
    let shuffles: [(usize, usize, usize, usize, f64); 6] =
        [(0, 1, 2, 3, 1.0), (0, 2, 1, 3, -1.0), (0, 3, 1, 2, 1.0), (1, 2, 0, 3, 1.0), (1, 3, 0, 2, -1.0), (2, 3, 0, 1, 1.0)];
    let mut wedge = zeros(cm.m, cm.m);
    for (i, j, k, l, s) in shuffles {
        wedge += bracket_h(&cm, &bns(v[i], v[j])?, &fb(v[k], v[l])?)? * c(s);
    }
    Ok(frob(&(dh + alpha + wedge)))
}

/// Frame with zero chart block and `δξ` elsewhere.
pub fn tangent_frame(chart: &Chart, dxi: &CMat) -> CMat {
    let m = chart.m();
    chart.coordinate_frame(dxi) - chart.coordinate_frame(&zeros(dxi.nrows(), m))
}

/// `Ω(y, x) = W(Z†W)⁻¹Z†` for coordinate frames `W` of `y` and `Z` of `x`,
/// equal to `P_y(P_x P_y P_x)⁻¹`.
pub fn wave_operator_coords(chart: &Chart, y: &CMat, x: &CMat, margin: f64) -> Result<CMat> {
    let w = chart.coordinate_frame(y);
    let z = chart.coordinate_frame(x);
    let zw = z.adjoint() * &w;
    let cos = zw.determinant().norm_sqr()
        / ((z.adjoint() * &z).determinant().norm() * (w.adjoint() * &w).determinant().norm());
    if cos <= margin.sin() {
        return Err(Error::NotLinkable(cos.clamp(0.0, 1.0).acos()));
    }
    Ok(&w * inverse(&zw)? * z.adjoint())
}

/// The universal Stiefel connection restricted to one chart.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelLocal {
    pub chart: Chart,
    pub n: usize,
    pub fd: FdScheme,
    /// Adds `ε·A(x)(δx)` to `η` (negative controls only).
    pub eta_defect: f64,
}

impl StiefelLocal {
    pub fn new(chart: Chart, n: usize) -> Self {
        Self { chart, n, fd: FdScheme::default(), eta_defect: 0.0 }
    }

    pub fn m(&self) -> usize {
        self.chart.m()
    }

    /// Chart coordinates of a projector.
    pub fn coords(&self, p: &Projector) -> Result<CMat> {
        self.chart.coordinates(p)
    }
}

impl LocalConnection for StiefelLocal {
    fn cm(&self) -> CrossedModule {
        CrossedModule::gl_adj(self.m())
    }

    fn a(&self, x: &CMat, dx: &CMat) -> Result<CMat> {
        let z = self.chart.coordinate_frame(x);
        Ok(left_inverse(&z)? * tangent_frame(&self.chart, dx))
    }

    fn eta(&self, p: &PairPoint, v: &PairVec) -> Result<CMat> {
        let (speed, dir) = speed_dir(v);
        let domega = self
            .fd
            .derivative(|s| {
                let q = p.shifted(&dir, s);
                wave_operator_coords(&self.chart, &q.y, &q.x, DEFAULT_MARGIN)
            }, speed)?;
        let z = self.chart.coordinate_frame(&p.x);
        let w = self.chart.coordinate_frame(&p.y);
        let py = &w * left_inverse(&w)?;
        let mut eta = left_inverse(&z)? * py * domega * z;
        if self.eta_defect != 0.0 {
            eta += self.a(&p.x, &v.dx)? * c(self.eta_defect);
        }
        Ok(eta)
    }
}

/// The universal connection on the Stiefel 2-bundle, over every chart.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelConnection {
    pub n: usize,
    pub m: usize,
    pub fd: FdScheme,
    /// Chart whose `η` is corrupted, with the corruption strength.
    pub eta_defect: Option<(Chart, f64)>,
}

impl StiefelConnection {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m, fd: FdScheme::default(), eta_defect: None }
    }

    pub fn local(&self, chart: &Chart) -> StiefelLocal {
        let defect = match &self.eta_defect {
            Some((ch, e)) if ch == chart => *e,
            _ => 0.0,
        };
        StiefelLocal { chart: chart.clone(), n: self.n, fd: self.fd, eta_defect: defect }
    }

    pub fn cm(&self) -> CrossedModule {
        CrossedModule::gl_adj(self.m)
    }

    /// `A^i(P)(δξ)`.
    pub fn eval_a(&self, i: &Chart, p: &Projector, dxi: &CMat) -> Result<CMat> {
        let loc = self.local(i);
        loc.a(&loc.coords(p)?, dxi)
    }

    /// `η^i(Q, P)(δQ, δP)` with tangents in chart coordinates.
    pub fn eval_eta(&self, i: &Chart, q: &Projector, p: &Projector, dq: &CMat, dp: &CMat) -> Result<CMat> {
        if !linkable(q, p) {
            return Err(Error::NotLinkable(crate::grassmann::fs_distance(q, p)));
        }
        let loc = self.local(i);
        let pt = PairPoint::new(loc.coords(q)?, loc.coords(p)?);
        loc.eta(&pt, &PairVec::new(dq.clone(), dp.clone()))
    }

    /// Chart-`j` coordinates of a chart-`i` tangent at `P`, together with
    /// `g^ij(P)` and its derivative along the tangent.
    pub fn transport_tangent(&self, i: &Chart, j: &Chart, p: &Projector, dxi: &CMat) -> Result<(CMat, CMat, CMat)> {
        let zi = i.coordinate_matrix(p)?;
        j.coordinate_matrix(p)?;
        let dzi = tangent_frame(i, dxi);
        let rows = |a: &CMat| CMat::from_fn(self.m, self.m, |r, k| a[(j.indices[r], k)]);
        let (b, db) = (rows(&zi), rows(&dzi));
        let bi = inverse(&b)?;
        let dg = -(&bi * &db * &bi);
        let dzj = &dzi * &bi + &zi * &dg;
        Ok((j.coordinates_of_frame(&dzj), bi, dg))
    }

    /// `η^ij` with `t(η^ij) = A^j − g⁻¹A^i g − g⁻¹dg`.
    pub fn potential_transformation(&self, i: &Chart, j: &Chart, p: &Projector, dxi: &CMat) -> Result<CMat> {
        let (dxj, g, dg) = self.transport_tangent(i, j, p, dxi)?;
        let ai = self.eval_a(i, p, dxi)?;
        let aj = self.eval_a(j, p, &dxj)?;
        potential_transformation_from_parts(&self.cm(), &ai, &aj, &g, &dg)
    }
}

/// `t⁻¹(A^j − g⁻¹A^i g − g⁻¹dg)`; fails when the defect leaves `t(𝔥)`.
pub fn potential_transformation_from_parts(cm: &CrossedModule, ai: &CMat, aj: &CMat, g: &CMat, dg: &CMat) -> Result<CMat> {
    let gi = inverse(g)?;
    let defect = aj - &gi * ai * g - &gi * dg;
    cm.t_lie_inv(&defect)
}

/// Residual of `A(Q) = g⁻¹η(Q,P)g + g⁻¹A(P)g + g⁻¹ġ` along a chart curve
/// `s ↦ (ξ_Q(s), ξ_P(s))`, where `g` is fixed by `W₀ g⁻¹ = ΩZ₀`.
pub fn intermediate_relation_residual<F>(loc: &StiefelLocal, curve: F, s: f64, h: f64) -> Result<f64>
where
    F: Fn(f64) -> PairPoint,
{
    let g_at = |t: f64| -> Result<CMat> {
        let pt = curve(t);
        let w = loc.chart.coordinate_frame(&pt.y);
        let z = loc.chart.coordinate_frame(&pt.x);
        let omega = wave_operator_coords(&loc.chart, &pt.y, &pt.x, DEFAULT_MARGIN)?;
        inverse(&(left_inverse(&w)? * omega * z))
    };
    let p = curve(s);
    let vel = PairVec::new((curve(s + h).y - curve(s - h).y) * c(0.5 / h), (curve(s + h).x - curve(s - h).x) * c(0.5 / h));
    let g = g_at(s)?;
    let dg = (g_at(s + h)? - g_at(s - h)?) * c(0.5 / h);
    let gi = inverse(&g)?;
    let lhs = loc.a(&p.y, &vel.dy)?;
    let rhs = &gi * loc.eta(&p, &vel)? * &g + &gi * loc.a(&p.x, &vel.dx)? * &g + &gi * dg;
    Ok(frob(&(lhs - rhs)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct GluingReport {
    pub samples: usize,
    /// `A^j = g⁻¹A^i g + g⁻¹dg + t(η^ij)` with `A^j` read off `η̲^j(x,x)`.
    pub a_gluing: f64,
    /// Triple-overlap relation of the potential transformation.
    pub eta_ij_triple: f64,
    /// `η̲` gluing with the `t(η^ij(x)) + η^ij(y) − η^ij(x)` correction.
    pub eta_bar_gluing: f64,
    /// `η` gluing in the `α_{g^ij}` form.
    pub eta_gluing: f64,
    /// Gluing of the nonspherical curving.
    pub bns_gluing: f64,
    /// `‖t(η(y,x)) − (A(y) − A(x))‖`; zero only for strict connections.
    pub strictness_defect: f64,
    /// Size of `η^ij` itself.
    pub eta_ij_norm: f64,
}

struct GluingSample {
    y: Projector,
    x: Projector,
    charts: Vec<Chart>,
}

fn draw_sample<R: Rng>(n: usize, m: usize, rng: &mut R, want: usize) -> GluingSample {
    let all = Chart::all(n, m);
    loop {
        let x = random_projector_rng(n, m, rng);
        let y = random_projector_near_rng(&x, 0.3, rng);
        let common: Vec<Chart> = charts_for(&x, &all)
            .into_iter()
            .filter(|ch| ch.contains(&y) && ch.coordinates(&x).map(|c| frob(&c) < 4.0).unwrap_or(false))
            .collect();
        if common.len() >= want.min(all.len()) && linkable(&y, &x) {
            return GluingSample { y, x, charts: common };
        }
    }
}

/// `d(h^ij(y,x))` along a chart-`i` pair tangent, by differences in coordinates.
fn pair_fd<F>(loc: &StiefelLocal, p: &PairPoint, v: &PairVec, f: F) -> Result<CMat>
where
    F: Fn(&Projector, &Projector) -> Result<CMat>,
{
    d_along(
        |q| {
            let y = loc.chart.projector_at(&q.y)?;
            let x = loc.chart.projector_at(&q.x)?;
            f(&y, &x)
        },
        p,
        v,
        DEFAULT_OUTER_STEP,
    )
}

fn gluing_sample(conn: &StiefelConnection, pair: Option<&(Chart, Chart)>, rng: &mut ChaCha8Rng) -> Result<[f64; 7]> {
    let (n, m) = (conn.n, conn.m);
    let cm = conn.cm();
    let s = loop {
        let s = draw_sample(n, m, rng, 3);
        match pair {
            Some((i, j)) if !(s.charts.contains(i) && s.charts.contains(j)) => continue,
            _ => break s,
        }
    };
    let pick = |rng: &mut ChaCha8Rng| s.charts[rng.random_range(0..s.charts.len())].clone();
    let (i, j) = match pair {
        Some((i, j)) => (i.clone(), j.clone()),
        None => (pick(rng), pick(rng)),
    };
    let k = pick(rng);
    let (li, lj) = (conn.local(&i), conn.local(&j));
    let pi = PairPoint::new(li.coords(&s.y)?, li.coords(&s.x)?);
    let pj = PairPoint::new(lj.coords(&s.y)?, lj.coords(&s.x)?);
    let rand_pair = |rng: &mut ChaCha8Rng| PairVec::new(gaussian(n - m, m, rng), gaussian(n - m, m, rng));
    let (v1, v2) = (rand_pair(rng), rand_pair(rng));
    let to_j = |v: &PairVec| -> Result<PairVec> {
        Ok(PairVec::new(
            conn.transport_tangent(&i, &j, &s.y, &v.dy)?.0,
            conn.transport_tangent(&i, &j, &s.x, &v.dx)?.0,
        ))
    };
    let (w1, w2) = (to_j(&v1)?, to_j(&v2)?);
    let gx = g_transition(&i, &j, &s.x)?;
    let (_, _, dgx) = conn.transport_tangent(&i, &j, &s.x, &v1.dx)?;
    let gxi = inverse(&gx)?;
    let eij = |p: &Projector, d: &CMat| conn.potential_transformation(&i, &j, p, d);
    let (eij_x, eij_y) = (eij(&s.x, &v1.dx)?, eij(&s.y, &v1.dy)?);

    // A-gluing through η̲ on the diagonal
    let diag_j = PairPoint::diagonal(pj.x.clone());
    let aj_bar = eta_bar(&lj, &diag_j, &PairVec::diagonal(w1.dx.clone()))?;
    let ai = li.a(&pi.x, &v1.dx)?;
    let a_glue = frob(&(&aj_bar.x + &aj_bar.y - (&gxi * &ai * &gx + &gxi * &dgx + cm.t_lie(&eij_x))));

    // triple overlap relation for η^ij
    let gjk = g_transition(&j, &k, &s.x)?;
    let gik = g_transition(&i, &k, &s.x)?;
    let hijk = two_transition(&StiefelBundle::new(n, m), &i, &j, &k, &s.x)?;
    let hijk_i = inverse(&hijk)?;
    let ejk = conn.potential_transformation(&j, &k, &s.x, &w1.dx)?;
    let eik = conn.potential_transformation(&i, &k, &s.x, &v1.dx)?;
    let dh3 = base_fd_on_projector(&li, &pi.x, &v1.dx, |p| two_transition(&StiefelBundle::new(n, m), &i, &j, &k, p))?;
    let lhs = cm.alpha(&gx, &eij_x)? + cm.alpha(&(&gx * &gjk), &ejk)? - &hijk_i * cm.alpha(&gik, &eik)? * &hijk;
    let rhs = &hijk_i * dh3 + &hijk_i * cm.alpha_lie(&ai, &hijk);
    let triple = frob(&(lhs - rhs));

    // η̲ gluing
    let h = h_transition(&i, &j, &s.y, &s.x)?;
    let dh = pair_fd(&li, &pi, &v1, |y, x| h_transition(&i, &j, y, x))?;
    let q_inv = (cm.alpha(&gxi, &inverse(&h)?)?, gxi.clone());
    let eb_i = eta_bar(&li, &pi, &v1)?;
    let eb_j = eta_bar(&lj, &pj, &w1)?;
    let conj = adjoint(&cm, &q_inv.0, &q_inv.1, &eb_i)?;
    let mc = AlgebraElement::new(cm.alpha(&gxi, &(inverse(&h)? * &dh))?, &gxi * &dgx);
    let corr_y = &eij_y - &eij_x;
    let corr_x = cm.t_lie(&eij_x);
    let eb_res = AlgebraElement::new(&eb_j.y - (conj.y + mc.y + corr_y), &eb_j.x - (conj.x + mc.x + corr_x));
    let eta_bar_glue = frob(&eb_res.y).max(frob(&eb_res.x));

    // η gluing in the α form
    let hi = inverse(&h)?;
    let lhs = cm.alpha(&gx, &lj.eta(&pj, &w1)?)?;
    let rhs = &hi * li.eta(&pi, &v1)? * &h + &hi * &dh + &hi * cm.alpha_lie(&ai, &h) + cm.alpha(&gx, &(&eij_y - &eij_x))?;
    let eta_glue = frob(&(lhs - rhs));

    // B_ns gluing
    let hs = DEFAULT_OUTER_STEP;
    let bj = curving_bns(&lj, &pj, &w1, &w2, hs)?;
    let bi = curving_bns(&li, &pi, &v1, &v2, hs)?;
    let fi = fake_curvature(&li, &pi.x, &v1.dx, &v2.dx, hs)?;
    let mut rhs = cm.alpha(&gxi, &(&hi * &bi * &h + &hi * cm.alpha_lie(&fi, &h)))?;
    let eta_ij_terms = |p: &Projector, xi_i: &CMat, d1: &CMat, d2: &CMat, aj_x: &CMat, aj_x2: &CMat| -> Result<CMat> {
        let e1 = conn.potential_transformation(&i, &j, p, d1)?;
        let e2 = conn.potential_transformation(&i, &j, p, d2)?;
        let de = base_fd_on_projector(&li, xi_i, d1, |q| conn.potential_transformation(&i, &j, q, d2))?
            - base_fd_on_projector(&li, xi_i, d2, |q| conn.potential_transformation(&i, &j, q, d1))?;
        Ok(de + cm.alpha_lie(aj_x, &e2) - cm.alpha_lie(aj_x2, &e1) - (&e1 * &e2 - &e2 * &e1))
    };
    let aj1 = lj.a(&pj.x, &w1.dx)?;
    let aj2 = lj.a(&pj.x, &w2.dx)?;
    rhs += eta_ij_terms(&s.y, &pi.y, &v1.dy, &v2.dy, &aj1, &aj2)?;
    rhs -= eta_ij_terms(&s.x, &pi.x, &v1.dx, &v2.dx, &aj1, &aj2)?;
    let eta_i1 = li.eta(&pi, &v1)?;
    let eta_i2 = li.eta(&pi, &v2)?;
    let eij_y2 = eij(&s.y, &v2.dy)?;
    rhs += commutator_h(&cm, &eta_i1, &eij_y2) - commutator_h(&cm, &eta_i2, &eij_y);
    let bns_glue = frob(&(bj - rhs));

    let strict = frob(&(cm.t_lie(&li.eta(&pi, &v1)?) - (li.a(&pi.y, &v1.dy)? - li.a(&pi.x, &v1.dx)?)));
    Ok([a_glue, triple, eta_bar_glue, eta_glue, bns_glue, strict, frob(&eij_x)])
}

fn commutator_h(cm: &CrossedModule, a: &CMat, b: &CMat) -> CMat {
    cm.h_bracket(a, b)
}

fn base_fd_on_projector<F>(loc: &StiefelLocal, xi: &CMat, v: &CMat, f: F) -> Result<CMat>
where
    F: Fn(&Projector) -> Result<CMat>,
{
    base_d_along(|q| f(&loc.chart.projector_at(q)?), xi, v, DEFAULT_OUTER_STEP)
}

/// Max gluing residuals of the Stiefel connection over seeded samples, on a
/// fixed chart pair or on random pairs of common charts.
pub fn gluing_residuals(conn: &StiefelConnection, pair: Option<(Chart, Chart)>, samples: usize, seed: u64, exec: Exec) -> GluingReport {
    let rows = par::map_indexed(exec, samples, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x5851_F42D).wrapping_add(s as u64));
        gluing_sample(conn, pair.as_ref(), &mut rng).unwrap_or([f64::INFINITY; 7])
    });
    let col = |j: usize| rows.iter().map(|r| r[j]).fold(0.0, f64::max);
    GluingReport {
        samples,
        a_gluing: col(0),
        eta_ij_triple: col(1),
        eta_bar_gluing: col(2),
        eta_gluing: col(3),
        bns_gluing: col(4),
        strictness_defect: col(5),
        eta_ij_norm: col(6),
    }
}

/// Relative size of a residual against a reference value.
pub fn relative(res: &CMat, reference: &CMat) -> f64 {
    rel_dist(res, reference)
}
