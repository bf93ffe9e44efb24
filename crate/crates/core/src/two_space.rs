//! The hyperbolic affine 2-space of wave operators.
//!
//! A [`Skeleton`] lists projectors target-first: `(P_q, …, P_1)`, so index 0
//! is the target and the last entry is the source. Its wave operator is the
//! product of elementary factors `Ω(P_{k+1}, P_k) = P_{k+1}(P_k P_{k+1} P_k)⁻¹`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grassmann::{fs_distance, linkable_with_margin, Projector, DEFAULT_MARGIN};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::grassmann::{random_projector_near_rng, random_projector_rng};
use crate::linalg::{c, condition_number, dist, inverse, polar_unitary, rel_dist, CMat};
use crate::par::{self, Exec};

pub const DEDUP_TOL: f64 = 1e-9;
pub const CONDITION_BOUND: f64 = 1e12;
pub const DEFAULT_GRID: usize = 256;
/// Fraction of the parameter range held constant at each end.
pub const FLAT_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    projectors: Vec<Projector>,
}

impl Skeleton {
    /// Projectors in target-first order.
    pub fn new(projectors: Vec<Projector>) -> Result<Self> {
        let first = projectors
            .first()
            .ok_or_else(|| Error::InvalidInput("empty skeleton".into()))?;
        let (n, m) = (first.n(), first.rank());
        if projectors.iter().any(|p| p.n() != n || p.rank() != m) {
            return Err(Error::DimensionMismatch("skeleton projectors differ in shape".into()));
        }
        Ok(Self { projectors })
    }

    pub fn single(p: Projector) -> Self {
        Self { projectors: vec![p] }
    }

    /// The elementary skeleton `(target, source)`.
    pub fn pair(target: Projector, source: Projector) -> Self {
        Self { projectors: vec![target, source] }
    }

    pub fn projectors(&self) -> &[Projector] {
        &self.projectors
    }

    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    pub fn target(&self) -> &Projector {
        &self.projectors[0]
    }

    pub fn source(&self) -> &Projector {
        self.projectors.last().unwrap()
    }

    pub fn n(&self) -> usize {
        self.projectors[0].n()
    }

    pub fn m(&self) -> usize {
        self.projectors[0].rank()
    }

    /// `self` after `lower`: the concatenation `(self…, lower…)`.
    pub fn concat(&self, lower: &Skeleton) -> Skeleton {
        let mut projectors = self.projectors.clone();
        projectors.extend(lower.projectors.iter().cloned());
        Skeleton { projectors }
    }

    /// Entrywise equality up to `tol` in Fubini–Study distance.
    pub fn approx_eq(&self, other: &Skeleton, tol: f64) -> bool {
        self.len() == other.len()
            && self
                .projectors
                .iter()
                .zip(&other.projectors)
                .all(|(a, b)| fs_distance(a, b) < tol)
    }
}

/// Remove consecutive repetitions.
pub fn reduce(s: &Skeleton) -> Skeleton {
    let mut out: Vec<Projector> = Vec::with_capacity(s.len());
    for p in &s.projectors {
        if out.last().is_none_or(|q| fs_distance(q, p) >= DEDUP_TOL) {
            out.push(p.clone());
        }
    }
    Skeleton { projectors: out }
}

/// `Q·V(V†QV)⁻¹V†` with `V` an orthonormal frame of `Ran P`.
pub fn elementary_wave_operator(target: &Projector, source: &Projector, margin: f64) -> Result<CMat> {
    if !linkable_with_margin(target, source, margin) {
        return Err(Error::NotLinkable(fs_distance(target, source)));
    }
    let v = source.frame();
    let q = target.matrix();
    let block = v.adjoint() * q * v;
    let cond = condition_number(&block);
    if cond > CONDITION_BOUND {
        return Err(Error::IllConditioned(cond));
    }
    Ok(q * v * inverse(&block)? * v.adjoint())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphismM {
    pub skeleton: Skeleton,
    pub value: CMat,
}

impl MorphismM {
    pub fn identity(p: Projector) -> Self {
        let value = p.matrix().clone();
        Self { skeleton: Skeleton::single(p), value }
    }

    pub fn source(&self) -> &Projector {
        self.skeleton.source()
    }

    pub fn target(&self) -> &Projector {
        self.skeleton.target()
    }

    pub fn is_elementary(&self) -> bool {
        self.skeleton.len() <= 2
    }
}

pub fn wave_operator_with_margin(s: &Skeleton, margin: f64) -> Result<MorphismM> {
    let ps = s.projectors();
    let mut value = ps[0].matrix().clone();
    for w in ps.windows(2) {
        value *= elementary_wave_operator(&w[0], &w[1], margin)?;
    }
    Ok(MorphismM { skeleton: s.clone(), value })
}

pub fn wave_operator(s: &Skeleton) -> Result<MorphismM> {
    wave_operator_with_margin(s, DEFAULT_MARGIN)
}

/// `m2 ∘ m1`: operator product with the reduced concatenated skeleton.
pub fn compose(m2: &MorphismM, m1: &MorphismM) -> Result<MorphismM> {
    let gap = rel_dist(m2.source().matrix(), m1.target().matrix());
    if gap > 1e-8 {
        return Err(Error::CompositionMismatch(format!("target/source projectors differ by {gap:.3e}")));
    }
    Ok(MorphismM {
        skeleton: reduce(&m2.skeleton.concat(&m1.skeleton)),
        value: &m2.value * &m1.value,
    })
}

/// `P₀·P` for an elementary morphism from `P₀` to `P`.
pub fn weak_inverse(m: &MorphismM) -> Result<CMat> {
    match m.skeleton.len() {
        1 => Ok(m.source().matrix().clone()),
        2 => Ok(m.source().matrix() * m.target().matrix()),
        _ => Err(Error::NotElementary),
    }
}

type SkelFn = dyn Fn(f64) -> Result<Skeleton> + Send + Sync;
pub type ProjectorPath = Arc<dyn Fn(f64) -> Result<Projector> + Send + Sync>;

/// A one-parameter family `u ↦ skeleton` on `[0, 1]`.
#[derive(Clone)]
pub struct PseudoSurface {
    f: Arc<SkelFn>,
    pub flat_ends: bool,
}

impl std::fmt::Debug for PseudoSurface {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PseudoSurface").field("flat_ends", &self.flat_ends).finish()
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
}

/// Reparametrization that is constant on the first and last flat fraction.
pub fn flat_reparam(u: f64) -> f64 {
    smoothstep((u - FLAT_FRACTION) / (1.0 - 2.0 * FLAT_FRACTION))
}

impl PseudoSurface {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(f64) -> Result<Skeleton> + Send + Sync + 'static,
    {
        Self { f: Arc::new(f), flat_ends: false }
    }

    /// Elementary surface `u ↦ (y(u), x(u))`.
    pub fn elementary<Y, X>(y: Y, x: X) -> Self
    where
        Y: Fn(f64) -> Result<Projector> + Send + Sync + 'static,
        X: Fn(f64) -> Result<Projector> + Send + Sync + 'static,
    {
        Self::from_fn(move |u| Ok(reduce(&Skeleton::pair(y(u)?, x(u)?))))
    }

    pub fn constant(s: Skeleton) -> Self {
        Self { f: Arc::new(move |_| Ok(s.clone())), flat_ends: true }
    }

    /// Identity pseudosurface `u ↦ (x(u))`.
    pub fn identity_along<X>(x: X) -> Self
    where
        X: Fn(f64) -> Result<Projector> + Send + Sync + 'static,
    {
        Self::from_fn(move |u| Ok(Skeleton::single(x(u)?)))
    }

    /// Piecewise-linear interpolation of sampled skeletons on a uniform grid.
    /// Frames are polar-aligned between neighbouring samples before mixing.
    pub fn sampled(samples: Vec<Skeleton>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput("a sampled pseudosurface needs at least two samples".into()));
        }
        let samples = Arc::new(samples);
        let n = samples.len() - 1;
        Ok(Self::from_fn(move |u| {
            let x = u.clamp(0.0, 1.0) * n as f64;
            let k = (x.floor() as usize).min(n - 1);
            let s = x - k as f64;
            let (a, b) = (&samples[k], &samples[k + 1]);
            if s < 1e-14 || a.len() != b.len() {
                return Ok(if s < 0.5 { a.clone() } else { b.clone() });
            }
            let ps = a
                .projectors()
                .iter()
                .zip(b.projectors())
                .map(|(pa, pb)| {
                    let za = pa.frame();
                    let zb = pb.frame() * polar_unitary(&(pb.frame().adjoint() * za));
                    Projector::from_frame(&(za * c(1.0 - s) + zb * c(s)))
                })
                .collect::<Result<Vec<_>>>()?;
            Skeleton::new(ps)
        }))
    }

    /// Hold the surface constant near both ends.
    pub fn with_flat_ends(self) -> Self {
        let f = self.f.clone();
        Self { f: Arc::new(move |u| f(flat_reparam(u))), flat_ends: true }
    }

    pub fn at(&self, u: f64) -> Result<Skeleton> {
        (self.f)(u)
    }

    pub fn grid(&self, n: usize) -> Result<Vec<Skeleton>> {
        (0..=n).map(|k| self.at(k as f64 / n as f64)).collect()
    }
}

/// `(u ↦ source, u ↦ target)`.
pub fn ps_boundaries(g: &PseudoSurface) -> (ProjectorPath, ProjectorPath) {
    let (a, b) = (g.clone(), g.clone());
    (
        Arc::new(move |u| Ok(a.at(u)?.source().clone())),
        Arc::new(move |u| Ok(b.at(u)?.target().clone())),
    )
}

/// `γ1 * γ2`: `γ1` on `[0, ½]` followed by `γ2` on `[½, 1]`.
pub fn ps_horizontal_compose(g1: &PseudoSurface, g2: &PseudoSurface) -> Result<PseudoSurface> {
    let end = reduce(&g1.at(1.0)?);
    let start = reduce(&g2.at(0.0)?);
    if !end.approx_eq(&start, 1e-8) {
        return Err(Error::CompositionMismatch("skeletons differ at the junction u = 1".into()));
    }
    let (a, b) = (g1.clone(), g2.clone());
    Ok(PseudoSurface {
        f: Arc::new(move |u| if u <= 0.5 { a.at(2.0 * u) } else { b.at(2.0 * u - 1.0) }),
        flat_ends: g1.flat_ends && g2.flat_ends,
    })
}

/// `γ1 ∘ γ2`: per-`u` concatenation with `γ1` on top, checked on a grid.
pub fn ps_vertical_compose(g1: &PseudoSurface, g2: &PseudoSurface) -> Result<PseudoSurface> {
    for k in 0..=DEFAULT_GRID {
        let u = k as f64 / DEFAULT_GRID as f64;
        let (s1, s2) = (g1.at(u)?, g2.at(u)?);
        if fs_distance(s1.source(), s2.target()) > 1e-8 {
            return Err(Error::CompositionMismatch(format!("source and target boundaries differ at u = {u}")));
        }
    }
    let (a, b) = (g1.clone(), g2.clone());
    Ok(PseudoSurface {
        f: Arc::new(move |u| Ok(reduce(&a.at(u)?.concat(&b.at(u)?)))),
        flat_ends: g1.flat_ends && g2.flat_ends,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct Classification {
    pub elementary: bool,
    pub impervious: bool,
    pub cyclic: bool,
    pub pinched: bool,
}

/// Classify on a uniform grid of `n` intervals.
pub fn ps_classify_on(g: &PseudoSurface, n: usize) -> Result<Classification> {
    let grid: Vec<Skeleton> = g.grid(n)?.iter().map(reduce).collect();
    let elementary = grid.iter().all(|s| s.len() <= 2);
    let impervious = grid[0].len() == 1 && grid[n].len() == 1;
    let cyclic = impervious && grid[0].approx_eq(&grid[n], 1e-8);
    let (s0, t0) = (grid[0].source(), grid[0].target());
    let pinched = grid
        .iter()
        .all(|s| fs_distance(s.source(), s0) < 1e-8 || fs_distance(s.target(), t0) < 1e-8);
    Ok(Classification { elementary, impervious, cyclic, pinched })
}

pub fn ps_classify(g: &PseudoSurface) -> Result<Classification> {
    ps_classify_on(g, DEFAULT_GRID)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaveOperatorReport {
    pub samples: usize,
    /// `‖Ω² − Ω‖`.
    pub idempotency: f64,
    /// `‖Ω⁻¹Ω − P₀‖`.
    pub weak_inverse: f64,
    /// `Ω(z, y)·Ω(y, x)` against the wave operator of `(z, y, x)`.
    pub functoriality: f64,
}

fn wave_sample(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<[f64; 3]> {
    let x = random_projector_rng(n, m, rng);
    let y = random_projector_near_rng(&x, 0.4, rng);
    let z = random_projector_near_rng(&y, 0.4, rng);
    let m1 = wave_operator(&Skeleton::pair(y.clone(), x.clone()))?;
    let m2 = wave_operator(&Skeleton::pair(z.clone(), y.clone()))?;
    let o = &m1.value;
    let idem = dist(&(o * o), o);
    let winv = dist(&(weak_inverse(&m1)? * o), x.matrix());
    let whole = wave_operator(&Skeleton::new(vec![z, y, x])?)?;
    let func = rel_dist(&compose(&m2, &m1)?.value, &whole.value);
    Ok([idem, winv, func])
}

/// Max residuals of the wave-operator algebra over seeded elementary morphisms.
pub fn verify_wave_operators(n: usize, m: usize, samples: usize, seed: u64, exec: Exec) -> WaveOperatorReport {
    let rows = par::map_indexed(exec, samples, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_F491).wrapping_add(k as u64));
        wave_sample(n, m, &mut rng).unwrap_or([f64::INFINITY; 3])
    });
    let col = |j: usize| rows.iter().map(|r| r[j]).fold(0.0, f64::max);
    WaveOperatorReport { samples, idempotency: col(0), weak_inverse: col(1), functoriality: col(2) }
}
