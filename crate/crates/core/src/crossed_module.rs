//! Matrix Lie crossed modules `(G, H, t, α)` and their groupoid `H⋊G`.
//!
//! Elements of `H` are always stored as `m×m` matrices. For the central
//! module they are scalar multiples of the identity, so `t` is the identity
//! embedding in both built-in instances.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, commutator, eye, gaussian, inverse, mat_exp, random_invertible, rel_dist, zeros, CMat, C64};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    #[serde(rename = "GL_ADJ")]
    GlAdj,
    #[serde(rename = "CENTRAL")]
    Central,
}

/// How `G` acts on `H`. `Trivial` on a `GlAdj` module breaks the axioms and
/// exists so validators can be exercised on a broken structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Conjugation,
    Trivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossedModule {
    pub m: usize,
    pub kind: Kind,
    pub action: Action,
}

impl CrossedModule {
    pub fn gl_adj(m: usize) -> Self {
        Self { m, kind: Kind::GlAdj, action: Action::Conjugation }
    }

    pub fn central(m: usize) -> Self {
        Self { m, kind: Kind::Central, action: Action::Conjugation }
    }

    pub fn new(kind: Kind, m: usize) -> Self {
        match kind {
            Kind::GlAdj => Self::gl_adj(m),
            Kind::Central => Self::central(m),
        }
    }

    /// Same module with `α_g(h) = h`.
    pub fn with_trivial_action(self) -> Self {
        Self { action: Action::Trivial, ..self }
    }

    pub fn is_h_abelian(&self) -> bool {
        self.kind == Kind::Central || self.m == 1
    }

    fn check(&self, a: &CMat) -> Result<()> {
        if a.shape() != (self.m, self.m) {
            return Err(Error::DimensionMismatch(format!(
                "expected {}x{}, got {}x{}",
                self.m,
                self.m,
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(())
    }

    pub fn id(&self) -> CMat {
        eye(self.m)
    }

    pub fn t(&self, h: &CMat) -> CMat {
        h.clone()
    }

    pub fn t_lie(&self, y: &CMat) -> CMat {
        y.clone()
    }

    /// Preimage under `t`; for the central module only scalar matrices have one.
    pub fn t_inv(&self, g: &CMat) -> Result<CMat> {
        self.check(g)?;
        match self.kind {
            Kind::GlAdj => Ok(g.clone()),
            Kind::Central => scalar_part(g, "group element"),
        }
    }

    pub fn t_lie_inv(&self, x: &CMat) -> Result<CMat> {
        self.check(x)?;
        match self.kind {
            Kind::GlAdj => Ok(x.clone()),
            Kind::Central => scalar_part(x, "algebra element"),
        }
    }

    pub fn alpha(&self, g: &CMat, h: &CMat) -> Result<CMat> {
        self.check(g)?;
        self.check(h)?;
        match self.action {
            Action::Conjugation => Ok(g * h * inverse(g)?),
            Action::Trivial => Ok(h.clone()),
        }
    }

    pub fn alpha_lie(&self, x: &CMat, y: &CMat) -> CMat {
        match (self.kind, self.action) {
            (Kind::GlAdj, Action::Conjugation) => commutator(x, y),
            _ => zeros(self.m, self.m),
        }
    }

    /// Bracket on 𝔥 (zero for the central module).
    pub fn h_bracket(&self, a: &CMat, b: &CMat) -> CMat {
        match self.kind {
            Kind::GlAdj => commutator(a, b),
            Kind::Central => zeros(self.m, self.m),
        }
    }

    /// Project an arbitrary matrix into 𝔥 (scalar part for the central module).
    pub fn project_h(&self, y: &CMat) -> CMat {
        match self.kind {
            Kind::GlAdj => y.clone(),
            Kind::Central => {
                let tr = y.trace() / c(self.m as f64);
                eye(self.m) * tr
            }
        }
    }

    pub fn random_g<R: Rng + ?Sized>(&self, rng: &mut R) -> CMat {
        random_invertible(self.m, 0.6, rng)
    }

    pub fn random_h<R: Rng + ?Sized>(&self, rng: &mut R) -> CMat {
        match self.kind {
            Kind::GlAdj => random_invertible(self.m, 0.6, rng),
            Kind::Central => {
                let z = gaussian(1, 1, rng)[(0, 0)] * c(0.6) + c(1.0);
                eye(self.m) * z
            }
        }
    }

    pub fn random_x<R: Rng + ?Sized>(&self, rng: &mut R) -> CMat {
        gaussian(self.m, self.m, rng)
    }

    pub fn random_y<R: Rng + ?Sized>(&self, rng: &mut R) -> CMat {
        match self.kind {
            Kind::GlAdj => gaussian(self.m, self.m, rng),
            Kind::Central => eye(self.m) * gaussian(1, 1, rng)[(0, 0)],
        }
    }
}

fn scalar_part(a: &CMat, what: &str) -> Result<CMat> {
    let m = a.nrows();
    let s = a.trace() / c(m as f64);
    let off = rel_dist(a, &(eye(m) * s));
    if off > 1e-9 {
        return Err(Error::NotInImage(format!("{what} is not scalar (defect {off:.3e})")));
    }
    Ok(eye(m) * s)
}

/// An arrow `(h, g)` of `H⋊G` from `g` to `t(h)g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrow2 {
    pub h: CMat,
    pub g: CMat,
}

impl Arrow2 {
    pub fn new(h: CMat, g: CMat) -> Self {
        Self { h, g }
    }

    pub fn identity(m: usize) -> Self {
        Self { h: eye(m), g: eye(m) }
    }

    /// Vertical identity on the object `g`.
    pub fn unit_on(g: CMat) -> Self {
        let m = g.nrows();
        Self { h: eye(m), g }
    }

    pub fn source(&self) -> &CMat {
        &self.g
    }

    pub fn target(&self, cm: &CrossedModule) -> CMat {
        cm.t(&self.h) * &self.g
    }

    /// Relative distance between two arrows (max over both components).
    pub fn distance(&self, other: &Arrow2) -> f64 {
        rel_dist(&self.h, &other.h).max(rel_dist(&self.g, &other.g))
    }
}

/// `(h, g)·(h′, g′) = (h·α_g(h′), g·g′)`.
pub fn horizontal_compose(cm: &CrossedModule, a: &Arrow2, b: &Arrow2) -> Result<Arrow2> {
    Ok(Arrow2 { h: &a.h * cm.alpha(&a.g, &b.h)?, g: &a.g * &b.g })
}

pub const DEFAULT_ENDPOINT_TOL: f64 = 1e-8;

/// `a2 ∘ a1 = (h₂h₁, g₁)`, requiring `source(a2) = target(a1)`.
pub fn vertical_compose(cm: &CrossedModule, a2: &Arrow2, a1: &Arrow2, tol: f64) -> Result<Arrow2> {
    let mismatch = rel_dist(&a2.g, &a1.target(cm));
    if mismatch > tol {
        return Err(Error::CompositionMismatch(format!(
            "source of the upper arrow misses the target of the lower one by {mismatch:.3e}"
        )));
    }
    Ok(Arrow2 { h: &a2.h * &a1.h, g: a1.g.clone() })
}

/// Vertical inverse `(h⁻¹, t(h)g)`.
pub fn vertical_inverse(cm: &CrossedModule, a: &Arrow2) -> Result<Arrow2> {
    Ok(Arrow2 { h: inverse(&a.h)?, g: a.target(cm) })
}

/// Element `(Y, X)` of the semidirect sum `𝔥 ⋊ 𝔤`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    pub y: CMat,
    pub x: CMat,
}

impl AlgebraElement {
    pub fn new(y: CMat, x: CMat) -> Self {
        Self { y, x }
    }

    pub fn zero(m: usize) -> Self {
        Self { y: zeros(m, m), x: zeros(m, m) }
    }

    pub fn distance(&self, other: &AlgebraElement) -> f64 {
        rel_dist(&self.y, &other.y).max(rel_dist(&self.x, &other.x))
    }
}

pub fn semidirect_bracket(cm: &CrossedModule, a: &AlgebraElement, b: &AlgebraElement) -> Result<AlgebraElement> {
    cm.check(&a.y)?;
    cm.check(&b.y)?;
    cm.check(&a.x)?;
    cm.check(&b.x)?;
    let y = cm.h_bracket(&a.y, &b.y) + cm.alpha_lie(&a.x, &b.y) - cm.alpha_lie(&b.x, &a.y);
    Ok(AlgebraElement { y, x: commutator(&a.x, &b.x) })
}

/// Adjoint action of `(h, g)` on `𝔥 ⋊ 𝔤`.
pub fn adjoint(cm: &CrossedModule, h: &CMat, g: &CMat, el: &AlgebraElement) -> Result<AlgebraElement> {
    let gi = inverse(g)?;
    let hi = inverse(h)?;
    let x = g * &el.x * &gi;
    let y = h * cm.alpha(g, &el.y)? * &hi + h * cm.alpha_lie(&x, &hi);
    Ok(AlgebraElement { y, x })
}

/// Group exponential of `(Y, X)` in `H⋊G`.
pub fn exp_semidirect(cm: &CrossedModule, el: &AlgebraElement) -> Arrow2 {
    let g = mat_exp(&el.x);
    let h = match (cm.kind, cm.action) {
        (Kind::GlAdj, Action::Conjugation) => mat_exp(&(&el.y + &el.x)) * mat_exp(&-&el.x),
        _ => mat_exp(&el.y),
    };
    Arrow2 { h, g }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossedModuleReport {
    pub samples: usize,
    pub equivariance: f64,
    pub peiffer: f64,
    pub exchange: f64,
    pub lie_equivariance: f64,
}

impl CrossedModuleReport {
    pub fn max(&self) -> f64 {
        self.equivariance.max(self.peiffer).max(self.exchange).max(self.lie_equivariance)
    }
}

fn sample_residuals(cm: &CrossedModule, rng: &mut ChaCha8Rng) -> Result<[f64; 4]> {
    let g = cm.random_g(rng);
    let h = cm.random_h(rng);
    let h2 = cm.random_h(rng);
    let equiv = rel_dist(&cm.t(&cm.alpha(&g, &h)?), &(&g * cm.t(&h) * inverse(&g)?));
    let peif = rel_dist(&cm.alpha(&cm.t(&h), &h2)?, &(&h * &h2 * inverse(&h)?));

    // two vertically composable columns, then the exchange law
    let (h12, g12, h11) = (cm.random_h(rng), cm.random_g(rng), cm.random_h(rng));
    let (h22, g22, h21) = (cm.random_h(rng), cm.random_g(rng), cm.random_h(rng));
    let lo1 = Arrow2::new(h12.clone(), g12.clone());
    let up1 = Arrow2::new(h11, cm.t(&h12) * &g12);
    let lo2 = Arrow2::new(h22.clone(), g22.clone());
    let up2 = Arrow2::new(h21, cm.t(&h22) * &g22);
    let left = horizontal_compose(
        cm,
        &vertical_compose(cm, &up1, &lo1, f64::INFINITY)?,
        &vertical_compose(cm, &up2, &lo2, f64::INFINITY)?,
    )?;
    let right = vertical_compose(
        cm,
        &horizontal_compose(cm, &up1, &up2)?,
        &horizontal_compose(cm, &lo1, &lo2)?,
        f64::INFINITY,
    )?;
    let exch = left.distance(&right);

    let x = cm.random_x(rng);
    let y = cm.random_y(rng);
    let lie = rel_dist(&cm.t_lie(&cm.alpha_lie(&x, &y)), &commutator(&x, &cm.t_lie(&y)));
    Ok([equiv, peif, exch, lie])
}

/// Max residuals of the crossed-module axioms over seeded random draws.
pub fn verify_crossed_module(cm: &CrossedModule, samples: usize, seed: u64, exec: Exec) -> CrossedModuleReport {
    let rows = par::map_indexed(exec, samples, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        sample_residuals(cm, &mut rng).unwrap_or([f64::INFINITY; 4])
    });
    let col = |j: usize| rows.iter().map(|r| r[j]).fold(0.0, f64::max);
    CrossedModuleReport {
        samples,
        equivariance: col(0),
        peiffer: col(1),
        exchange: col(2),
        lie_equivariance: col(3),
    }
}

/// Scalar `z·1` as an `m×m` matrix.
pub fn scalar(m: usize, z: C64) -> CMat {
    eye(m) * z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: [f64; 4]) -> CMat {
        CMat::from_row_slice(2, 2, &a.map(c))
    }

    #[test]
    fn horizontal_hand_case() {
        let cm = CrossedModule::gl_adj(2);
        let h = m2([1.0, 1.0, 0.0, 1.0]);
        let g = m2([2.0, 0.0, 0.0, 1.0]);
        let hp = m2([1.0, 0.0, 1.0, 1.0]);
        let r = horizontal_compose(&cm, &Arrow2::new(h.clone(), g.clone()), &Arrow2::new(hp, eye(2))).unwrap();
        // g·h′·g⁻¹ = [[1,0],[1/2,1]], times h on the left
        let expect_h = m2([1.5, 1.0, 0.5, 1.0]);
        assert!(rel_dist(&r.h, &expect_h) < 1e-15);
        assert!(rel_dist(&r.g, &g) < 1e-15);
    }

    #[test]
    fn identity_arrows() {
        let cm = CrossedModule::gl_adj(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (g, gp) = (cm.random_g(&mut rng), cm.random_g(&mut rng));
        let r = horizontal_compose(&cm, &Arrow2::unit_on(g.clone()), &Arrow2::unit_on(gp.clone())).unwrap();
        assert!(rel_dist(&r.h, &eye(2)) < 1e-15 && rel_dist(&r.g, &(&g * &gp)) < 1e-15);

        let (h, hp) = (cm.random_h(&mut rng), cm.random_h(&mut rng));
        let r = horizontal_compose(&cm, &Arrow2::new(h.clone(), eye(2)), &Arrow2::new(hp.clone(), eye(2))).unwrap();
        assert!(rel_dist(&r.h, &(&h * &hp)) < 1e-14);
    }

    #[test]
    fn vertical_units_and_inverse() {
        let cm = CrossedModule::gl_adj(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Arrow2::new(cm.random_h(&mut rng), cm.random_g(&mut rng));
        let up = Arrow2::unit_on(a.target(&cm));
        let r = vertical_compose(&cm, &up, &a, 1e-8).unwrap();
        assert!(r.distance(&a) < 1e-12);
        let inv = vertical_inverse(&cm, &a).unwrap();
        let r = vertical_compose(&cm, &inv, &a, 1e-8).unwrap();
        assert!(r.distance(&Arrow2::unit_on(a.g.clone())) < 1e-12);
    }

    #[test]
    fn vertical_mismatch_rejected() {
        let cm = CrossedModule::gl_adj(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Arrow2::new(cm.random_h(&mut rng), cm.random_g(&mut rng));
        let b = Arrow2::new(cm.random_h(&mut rng), cm.random_g(&mut rng));
        assert!(matches!(vertical_compose(&cm, &b, &a, 1e-8), Err(Error::CompositionMismatch(_))));
    }

    #[test]
    fn brackets() {
        let cm = CrossedModule::gl_adj(2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, xp, y, yp) = (cm.random_x(&mut rng), cm.random_x(&mut rng), cm.random_y(&mut rng), cm.random_y(&mut rng));
        let z = zeros(2, 2);
        let r = semidirect_bracket(&cm, &AlgebraElement::new(z.clone(), x.clone()), &AlgebraElement::new(z.clone(), xp.clone())).unwrap();
        assert!(rel_dist(&r.x, &commutator(&x, &xp)) < 1e-15 && r.y.norm() == 0.0);
        let r = semidirect_bracket(&cm, &AlgebraElement::new(y.clone(), z.clone()), &AlgebraElement::new(yp.clone(), z.clone())).unwrap();
        assert!(rel_dist(&r.y, &commutator(&y, &yp)) < 1e-15 && r.x.norm() == 0.0);
        let r = semidirect_bracket(&cm, &AlgebraElement::new(z.clone(), x.clone()), &AlgebraElement::new(y.clone(), z.clone())).unwrap();
        assert!(rel_dist(&r.y, &cm.alpha_lie(&x, &y)) < 1e-15);
    }

    #[test]
    fn adjoint_basics() {
        let cm = CrossedModule::central(2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = cm.random_y(&mut rng);
        let el = AlgebraElement::new(y.clone(), zeros(2, 2));
        let r = adjoint(&cm, &cm.random_h(&mut rng), &cm.random_g(&mut rng), &el).unwrap();
        assert!(r.distance(&el) < 1e-13);
        let gl = CrossedModule::gl_adj(2);
        let el = AlgebraElement::new(gl.random_y(&mut rng), gl.random_x(&mut rng));
        assert!(adjoint(&gl, &eye(2), &eye(2), &el).unwrap().distance(&el) < 1e-15);
    }

    #[test]
    fn central_t_inverse_rejects_nonscalar() {
        let cm = CrossedModule::central(2);
        assert!(matches!(cm.t_inv(&m2([1.0, 0.0, 0.0, 2.0])), Err(Error::NotInImage(_))));
        assert!(cm.t_inv(&m2([3.0, 0.0, 0.0, 3.0])).is_ok());
    }

    #[test]
    fn builtin_axioms_hold() {
        for cm in [CrossedModule::gl_adj(2), CrossedModule::central(2)] {
            let r = verify_crossed_module(&cm, 100, 0, Exec::Sequential);
            assert!(r.max() <= 1e-10, "{cm:?}: {r:?}");
        }
    }

    #[test]
    fn corrupted_action_detected() {
        let cm = CrossedModule::gl_adj(2).with_trivial_action();
        let r = verify_crossed_module(&cm, 20, 0, Exec::Sequential);
        assert!(r.equivariance > 1e-3 && r.peiffer > 1e-3);
    }

    #[test]
    fn exp_semidirect_matches_one_parameter_flow() {
        // (h(s), g(s)) = exp(s·(Y,X)) is a one-parameter subgroup
        let cm = CrossedModule::gl_adj(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let el = AlgebraElement::new(cm.random_y(&mut rng) * c(0.4), cm.random_x(&mut rng) * c(0.4));
        let half = AlgebraElement::new(&el.y * c(0.5), &el.x * c(0.5));
        let a = exp_semidirect(&cm, &half);
        let sq = horizontal_compose(&cm, &a, &a).unwrap();
        assert!(sq.distance(&exp_semidirect(&cm, &el)) < 1e-13);
    }
}
