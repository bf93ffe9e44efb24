//! Discrete Čech calculus on triangulated 2-parameter patches: de Rham map,
//! cobord, cup product, second-order BCH, and refinement checks of the
//! discrete Cartan structure equation and of the curving product.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::connection::{curving_bns, LocalConnection, PairPoint, PairVec};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{c, commutator, frob, gaussian, mat_exp, mat_log, zeros, CMat};
use crate::par::{self, Exec};

pub type Param = [f64; 2];

/// A 1-form on the parameter plane: `(point, tangent) ↦ value`.
pub type Form1<'a> = dyn Fn(Param, Param) -> Result<CMat> + Sync + 'a;
/// A 2-form on the parameter plane.
pub type Form2<'a> = dyn Fn(Param, Param, Param) -> Result<CMat> + Sync + 'a;

const GL3_NODES: [f64; 3] = [0.112_701_665_379_258_3, 0.5, 0.887_298_334_620_741_7];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
/// Interior three-point rule on the reference triangle, exact to degree 2.
const TRI3: [[f64; 2]; 3] = [[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]];

fn lerp(a: Param, b: Param, s: f64) -> Param {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

fn sub(a: Param, b: Param) -> Param {
    [a[0] - b[0], a[1] - b[1]]
}

/// Regular right-triangle subdivision of a parameter rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub k: usize,
    pub origin: Param,
    pub sides: Param,
    pub vertices: Vec<Param>,
    pub triangles: Vec<[usize; 3]>,
}

impl Triangulation {
    /// `k × k` squares, each cut along its `(a₀,b₀)–(a₁,b₁)` diagonal into
    /// `(a₀b₀, a₁b₀, a₁b₁)` and `(a₀b₀, a₁b₁, a₀b₁)`.
    pub fn grid(origin: Param, sides: Param, k: usize) -> Self {
        let k = k.max(1);
        let idx = |i: usize, j: usize| i * (k + 1) + j;
        let mut vertices = Vec::with_capacity((k + 1) * (k + 1));
        for i in 0..=k {
            for j in 0..=k {
                vertices.push([origin[0] + sides[0] * i as f64 / k as f64, origin[1] + sides[1] * j as f64 / k as f64]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * k * k);
        for i in 0..k {
            for j in 0..k {
                triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        Self { k, origin, sides, vertices, triangles }
    }

    /// Longest edge in parameter length (the square diagonals).
    pub fn epsilon(&self) -> f64 {
        let (a, b) = (self.sides[0] / self.k as f64, self.sides[1] / self.k as f64);
        a.hypot(b)
    }

    /// Sorted vertex tuples of every simplex of dimension `dim ≤ 2`.
    pub fn simplices(&self, dim: usize) -> Vec<Vec<usize>> {
        let mut set = BTreeSet::new();
        for t in &self.triangles {
            let mut s = t.to_vec();
            s.sort_unstable();
            match dim {
                0 => s.iter().for_each(|&v| {
                    set.insert(vec![v]);
                }),
                1 => {
                    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                        set.insert(vec![s[a], s[b]]);
                    }
                }
                2 => {
                    set.insert(s);
                }
                _ => {}
            }
        }
        set.into_iter().collect()
    }

    /// The triangles `(a₀b₀, a₁b₁, a₀b₁)` whose third vertex shares its first
    /// parameter with the first vertex and its second with the second.
    pub fn pair_triangles(&self) -> Vec<[usize; 3]> {
        self.triangles.iter().skip(1).step_by(2).copied().collect()
    }
}

/// Sign of the permutation sorting `t`, with the sorted tuple; `None` for
/// repeated vertices.
fn sort_sign(t: &[usize]) -> Option<(Vec<usize>, f64)> {
    let mut v = t.to_vec();
    let mut sign = 1.0;
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
                sign = -sign;
            } else if v[j] == v[j + 1] {
                return None;
            }
        }
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some((v, sign))
}

/// Antisymmetric algebra-valued function on ordered vertex tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct Cochain {
    pub degree: usize,
    dim: (usize, usize),
    values: HashMap<Vec<usize>, CMat>,
}

impl Cochain {
    /// Values on sorted simplices; other orderings follow by antisymmetry.
    pub fn from_fn<F>(degree: usize, simplices: &[Vec<usize>], f: F) -> Result<Self>
    where
        F: Fn(&[usize]) -> Result<CMat>,
    {
        let mut values = HashMap::with_capacity(simplices.len());
        let mut dim = (0, 0);
        for s in simplices {
            if s.len() != degree + 1 {
                return Err(Error::DimensionMismatch(format!("{}-simplex in a degree-{degree} cochain", s.len() - 1)));
            }
            let (sorted, sign) = sort_sign(s).ok_or_else(|| Error::InvalidInput("repeated vertex".into()))?;
            let v = f(&sorted)? * c(1.0);
            dim = v.shape();
            values.insert(sorted, if sign < 0.0 { -v } else { v });
        }
        Ok(Self { degree, dim, values })
    }

    /// Value on an ordered tuple; zero on degenerate tuples.
    pub fn get(&self, t: &[usize]) -> Result<CMat> {
        match sort_sign(t) {
            None => Ok(zeros(self.dim.0, self.dim.1)),
            Some((s, sign)) => {
                let v = self.values.get(&s).ok_or_else(|| Error::InvalidInput(format!("cochain undefined on {s:?}")))?;
                Ok(v * c(sign))
            }
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.dim
    }
}

/// `R(ω)` on an ordered 0-, 1- or 2-simplex of parameter points.
pub fn de_rham_point(f: &dyn Fn(Param) -> Result<CMat>, u0: Param) -> Result<CMat> {
    f(u0)
}

/// Gauss–Legendre three-point integral of a 1-form along a segment.
pub fn de_rham_edge(omega: &Form1, u0: Param, u1: Param) -> Result<CMat> {
    let d = sub(u1, u0);
    let mut acc: Option<CMat> = None;
    for (s, w) in GL3_NODES.iter().zip(GL3_WEIGHTS) {
        let v = omega(lerp(u0, u1, *s), d)? * c(w);
        acc = Some(match acc {
            Some(a) => a + v,
            None => v,
        });
    }
    Ok(acc.expect("three nodes"))
}

/// Three-point interior rule for a 2-form over an oriented triangle.
pub fn de_rham_triangle(beta: &Form2, u0: Param, u1: Param, u2: Param) -> Result<CMat> {
    let (e1, e2) = (sub(u1, u0), sub(u2, u0));
    let mut acc: Option<CMat> = None;
    for [s, t] in TRI3 {
        let p = [u0[0] + s * e1[0] + t * e2[0], u0[1] + s * e1[1] + t * e2[1]];
        let v = beta(p, e1, e2)? * c(1.0 / 6.0);
        acc = Some(match acc {
            Some(a) => a + v,
            None => v,
        });
    }
    Ok(acc.expect("three nodes"))
}

/// De Rham cochain of a 1-form on the edges of a triangulation.
pub fn de_rham_1(omega: &Form1, tri: &Triangulation) -> Result<Cochain> {
    Cochain::from_fn(1, &tri.simplices(1), |s| de_rham_edge(omega, tri.vertices[s[0]], tri.vertices[s[1]]))
}

/// De Rham cochain of a 2-form on the triangles of a triangulation.
pub fn de_rham_2(beta: &Form2, tri: &Triangulation) -> Result<Cochain> {
    Cochain::from_fn(2, &tri.simplices(2), |s| {
        de_rham_triangle(beta, tri.vertices[s[0]], tri.vertices[s[1]], tri.vertices[s[2]])
    })
}

/// `(δω)_{u₀…u_{p+1}} = Σ (−1)^j ω_{…û_j…}` on the given `(p+1)`-simplices.
pub fn cobord(omega: &Cochain, simplices: &[Vec<usize>]) -> Result<Cochain> {
    Cochain::from_fn(omega.degree + 1, simplices, |s| {
        let mut acc = zeros(omega.dim.0, omega.dim.1);
        for j in 0..s.len() {
            let face: Vec<usize> = s.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, &v)| v).collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += omega.get(&face)? * c(sign);
        }
        Ok(acc)
    })
}

fn permutations(n: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(cur: &mut Vec<usize>, used: &mut Vec<bool>, n: usize, out: &mut Vec<(Vec<usize>, f64)>) {
        if cur.len() == n {
            let sign = sort_sign(cur).map(|(_, s)| s).unwrap_or(0.0);
            out.push((cur.clone(), sign));
            return;
        }
        for k in 0..n {
            if !used[k] {
                used[k] = true;
                cur.push(k);
                rec(cur, used, n, out);
                cur.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], n, &mut out);
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Cup product with shared middle vertex,
/// `(ω∪η)_{u₀…u_{p+q}} = 1/(2(p+q+1)!) Σ_σ (−1)^σ [ω_{σ(0)…σ(p)}, η_{σ(p)…σ(p+q)}]`,
/// normalised so that the cup of de Rham images tends to the matrix wedge
/// (`α∧α(v₁,v₂) = [α(v₁), α(v₂)]`).
pub fn cup_with<B>(omega: &Cochain, eta: &Cochain, simplices: &[Vec<usize>], bracket: B) -> Result<Cochain>
where
    B: Fn(&CMat, &CMat) -> CMat,
{
    let (p, q) = (omega.degree, eta.degree);
    let perms = permutations(p + q + 1);
    let norm = 1.0 / (2.0 * factorial(p + q + 1));
    Cochain::from_fn(p + q, simplices, |s| {
        let mut acc = zeros(omega.dim.0, omega.dim.1);
        for (perm, sign) in &perms {
            let u: Vec<usize> = perm.iter().map(|&k| s[k]).collect();
            acc += bracket(&omega.get(&u[..=p])?, &eta.get(&u[p..])?) * c(*sign);
        }
        Ok(acc * c(norm))
    })
}

/// Cup product with the matrix commutator.
pub fn cup(omega: &Cochain, eta: &Cochain, simplices: &[Vec<usize>]) -> Result<Cochain> {
    cup_with(omega, eta, simplices, commutator)
}

/// Second-order Baker–Campbell–Hausdorff: `a + b + ½[a,b]`.
pub fn bch2(a: &CMat, b: &CMat) -> CMat {
    a + b + commutator(a, b) * c(0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementLevel {
    pub level: usize,
    pub k: usize,
    pub epsilon: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementReport {
    pub levels: Vec<RefinementLevel>,
    /// Least-squares slope of `log residual` against `log ε`.
    pub order: Option<f64>,
}

impl RefinementReport {
    pub fn from_levels(levels: Vec<RefinementLevel>) -> Self {
        let order = fitted_order(&levels.iter().map(|l| (l.epsilon, l.max_residual)).collect::<Vec<_>>());
        Self { levels, order }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,epsilon,max_residual,fitted_order\n");
        let ord = self.order.map(|o| format!("{o:.6}")).unwrap_or_default();
        for l in &self.levels {
            let _ = writeln!(s, "{},{:.6e},{:.6e},{}", l.level, l.epsilon, l.max_residual, ord);
        }
        s
    }
}

/// Least-squares slope through `(log x, log y)`; points with `y ≤ 0` or
/// non-finite are dropped, and fewer than two leave the order undefined.
pub fn fitted_order(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

const FD_STEP: f64 = 1e-4;

fn d_param(f: &dyn Fn(Param) -> Result<CMat>, p: Param, v: Param) -> Result<CMat> {
    let n = v[0].hypot(v[1]);
    if n == 0.0 {
        let z = f(p)?;
        return Ok(zeros(z.nrows(), z.ncols()));
    }
    let h = FD_STEP / n;
    let plus = [p[0] + h * v[0], p[1] + h * v[1]];
    let minus = [p[0] - h * v[0], p[1] - h * v[1]];
    Ok((f(plus)? - f(minus)?) * c(0.5 / h))
}

/// `dα + α∧α` by central differences.
/// A seeded non-commuting `m×m` 1-form on the parameter plane:
/// `(G₀ + G₁ sin u + G₂ uv) du + (G₃ + G₄ cos v + G₅ u²) dv`.
pub fn seeded_form(m: usize, seed: u64) -> impl Fn(Param, Param) -> Result<CMat> + Send + Sync + Clone {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<CMat> = (0..6).map(|_| gaussian(m, m, &mut r)).collect();
    move |p: Param, v: Param| {
        let a = &g[0] + &g[1] * c(p[0].sin()) + &g[2] * c(p[1] * p[0]);
        let b = &g[3] + &g[4] * c(p[1].cos()) + &g[5] * c(p[0] * p[0]);
        Ok(a * c(v[0]) + b * c(v[1]))
    }
}

pub fn structure_form(alpha: &Form1, p: Param, v1: Param, v2: Param) -> Result<CMat> {
    let da = d_param(&|q| alpha(q, v2), p, v1)? - d_param(&|q| alpha(q, v1), p, v2)?;
    let (a1, a2) = (alpha(p, v1)?, alpha(p, v2)?);
    Ok(da + commutator(&a1, &a2))
}

const MAX_SPLIT: usize = 3;

/// Residual over one triangle; a log that lands on the branch cut splits the
/// triangle into four and takes the worst child.
fn split_residual<F>(f: &F, u: [Param; 3], depth: usize) -> Result<f64>
where
    F: Fn([Param; 3]) -> Result<f64>,
{
    match f(u) {
        Err(Error::BranchFailure(_)) if depth < MAX_SPLIT => {
            let m01 = lerp(u[0], u[1], 0.5);
            let m12 = lerp(u[1], u[2], 0.5);
            let m02 = lerp(u[0], u[2], 0.5);
            let kids = [[u[0], m01, m02], [m01, u[1], m12], [m02, m12, u[2]], [m01, m12, m02]];
            let mut worst = 0.0f64;
            for k in kids {
                worst = worst.max(split_residual(f, k, depth + 1)?);
            }
            Ok(worst)
        }
        r => r,
    }
}

fn sweep<F>(tris: &[[usize; 3]], tri: &Triangulation, exec: Exec, f: F) -> Result<f64>
where
    F: Fn([Param; 3]) -> Result<f64> + Sync + Send,
{
    let res = par::try_map_indexed(exec, tris.len(), |t| {
        let [a, b, cc] = tris[t];
        split_residual(&f, [tri.vertices[a], tri.vertices[b], tri.vertices[cc]], 0)
    })?;
    Ok(res.into_iter().fold(0.0, f64::max))
}

/// Per-triangle `‖log(e^{Rα₁₂}e^{−Rα₀₂}e^{Rα₀₁}) − Rβ₀₁₂‖` with
/// `β = dα + α∧α`, maximised per level.
pub fn discrete_cartan_residual(alpha: &Form1, origin: Param, sides: Param, ks: &[usize], exec: Exec) -> Result<RefinementReport> {
    let beta = |p: Param, v1: Param, v2: Param| structure_form(alpha, p, v1, v2);
    let mut levels = Vec::with_capacity(ks.len());
    for (level, &k) in ks.iter().enumerate() {
        let tri = Triangulation::grid(origin, sides, k);
        let res = sweep(&tri.triangles, &tri, exec, |[u0, u1, u2]| {
            let r01 = de_rham_edge(alpha, u0, u1)?;
            let r02 = de_rham_edge(alpha, u0, u2)?;
            let r12 = de_rham_edge(alpha, u1, u2)?;
            let prod = mat_exp(&r12) * mat_exp(&(-r02)) * mat_exp(&r01);
            let rb = de_rham_triangle(&beta, u0, u1, u2)?;
            Ok(frob(&(mat_log(&prod)? - rb)))
        })?;
        levels.push(RefinementLevel { level, k, epsilon: tri.epsilon(), max_residual: res });
    }
    Ok(RefinementReport::from_levels(levels))
}

/// Affine map from the parameter plane into pair-space coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePatch {
    pub origin: PairPoint,
    pub e1: PairVec,
    pub e2: PairVec,
}

impl AffinePatch {
    pub fn point(&self, u: Param) -> PairPoint {
        self.origin.shifted(&self.e1, u[0]).shifted(&self.e2, u[1])
    }

    pub fn push(&self, v: Param) -> PairVec {
        PairVec::new(&self.e1.dy * c(v[0]) + &self.e2.dy * c(v[1]), &self.e1.dx * c(v[0]) + &self.e2.dx * c(v[1]))
    }
}

/// Per-triangle residual of
/// `e^{Rη₁₂}e^{−Rη₀₂}e^{−RA₀₂}e^{Rη̲₀₁}` against `e^{R(B_ns)₀₁₂}` on the
/// triangles `u₀=(y₀,x₀), u₁=(y₁,x₁), u₂=(y₀,x₁)` of the patch. `𝔥` values
/// enter the matrix products through `t`.
pub fn curving_product_check<C>(conn: &C, patch: &AffinePatch, ks: &[usize], fd_outer: f64, exec: Exec) -> Result<RefinementReport>
where
    C: LocalConnection + ?Sized,
{
    let cm = conn.cm();
    let eta = |p: Param, v: Param| -> Result<CMat> { Ok(cm.t_lie(&conn.eta(&patch.point(p), &patch.push(v))?)) };
    let a = |p: Param, v: Param| -> Result<CMat> { conn.a(&patch.point(p).x, &patch.push(v).dx) };
    let eta_bar = |p: Param, v: Param| -> Result<CMat> { Ok(eta(p, v)? + a(p, v)?) };
    let bns = |p: Param, v1: Param, v2: Param| -> Result<CMat> {
        Ok(cm.t_lie(&curving_bns(conn, &patch.point(p), &patch.push(v1), &patch.push(v2), fd_outer)?))
    };
    let mut levels = Vec::with_capacity(ks.len());
    for (level, &k) in ks.iter().enumerate() {
        let tri = Triangulation::grid([0.0, 0.0], [1.0, 1.0], k);
        let res = sweep(&tri.pair_triangles(), &tri, exec, |[u0, u1, u2]| {
            let prod = mat_exp(&de_rham_edge(&eta, u1, u2)?)
                * mat_exp(&(-de_rham_edge(&eta, u0, u2)?))
                * mat_exp(&(-de_rham_edge(&a, u0, u2)?))
                * mat_exp(&de_rham_edge(&eta_bar, u0, u1)?);
            let rb = de_rham_triangle(&bns, u0, u1, u2)?;
            Ok(frob(&(mat_log(&prod)? - rb)))
        })?;
        levels.push(RefinementLevel { level, k, epsilon: tri.epsilon(), max_residual: res });
    }
    Ok(RefinementReport::from_levels(levels))
}
