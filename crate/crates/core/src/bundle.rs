//! Local trivializations and transition functions of the Stiefel 2-bundle
//! `{Z ∈ ℂ^{n×m} : det Z†Z ≠ 0}` over the wave-operator 2-space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::crossed_module::{horizontal_compose, Arrow2, CrossedModule};
use crate::error::{Error, Result};
use crate::grassmann::{charts_for, fs_distance, linkable, random_projector_near_rng, random_projector_rng, Chart, Projector};
use crate::linalg::{eye, inverse, left_inverse, rel_dist, CMat};
use crate::par::{self, Exec};

/// Transition data of a 2-bundle with structure crossed module `cm()`.
pub trait TransitionFunctions: Send + Sync {
    fn cm(&self) -> CrossedModule;
    fn charts(&self) -> Vec<Chart>;
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    /// `g^ij(x)`.
    fn g(&self, i: &Chart, j: &Chart, x: &Projector) -> Result<CMat>;
    /// `h^ij(y, x)`.
    fn h(&self, i: &Chart, j: &Chart, y: &Projector, x: &Projector) -> Result<CMat>;
    /// `k^i(x)`.
    fn k(&self, i: &Chart, x: &Projector) -> Result<CMat>;
    /// `h^ijk(x) = t⁻¹(g^ik (g^ij g^jk)⁻¹)`.
    fn h3(&self, i: &Chart, j: &Chart, k: &Chart, x: &Projector) -> Result<CMat> {
        let prod = self.g(i, j, x)? * self.g(j, k, x)?;
        self.cm().t_inv(&(self.g(i, k, x)? * inverse(&prod)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StiefelBundle {
    pub n: usize,
    pub m: usize,
}

impl StiefelBundle {
    pub fn new(n: usize, m: usize) -> Self {
        assert!(m >= 1 && m <= n, "need 1 ≤ m ≤ n");
        Self { n, m }
    }

    /// `φ^i(P, g) = Z₀^i g`.
    pub fn phi(&self, i: &Chart, p: &Projector, g: &CMat) -> Result<CMat> {
        Ok(i.coordinate_matrix(p)? * g)
    }

    /// `φ̄^i(Z) = (π(Z), (Z₀†Z₀)⁻¹Z₀†Z)`.
    pub fn phi_bar(&self, i: &Chart, z: &CMat) -> Result<(Projector, CMat)> {
        let p = Projector::from_frame(z)?;
        let z0 = i.coordinate_matrix(&p)?;
        let g = left_inverse(&z0)? * z;
        Ok((p, g))
    }
}

/// `(Z₀^i†Z₀^i)⁻¹Z₀^i†Z₀^j`.
pub fn g_transition(i: &Chart, j: &Chart, p: &Projector) -> Result<CMat> {
    let zi = i.coordinate_matrix(p)?;
    let zj = j.coordinate_matrix(p)?;
    Ok(left_inverse(&zi)? * zj)
}

/// `(W₀^i†W₀^i)⁻¹W₀^i†W₀^j (Z₀^j†Z₀^j)⁻¹Z₀^j†Z₀^i` for frames `W` of `Q`, `Z` of `P`.
pub fn h_transition(i: &Chart, j: &Chart, q: &Projector, p: &Projector) -> Result<CMat> {
    if !linkable(q, p) {
        return Err(Error::NotLinkable(fs_distance(q, p)));
    }
    let (wi, wj) = (i.coordinate_matrix(q)?, j.coordinate_matrix(q)?);
    let (zi, zj) = (i.coordinate_matrix(p)?, j.coordinate_matrix(p)?);
    Ok(left_inverse(&wi)? * wj * left_inverse(&zj)? * zi)
}

impl TransitionFunctions for StiefelBundle {
    fn cm(&self) -> CrossedModule {
        CrossedModule::gl_adj(self.m)
    }

    fn charts(&self) -> Vec<Chart> {
        Chart::all(self.n, self.m)
    }

    fn n(&self) -> usize {
        self.n
    }

    fn m(&self) -> usize {
        self.m
    }

    fn g(&self, i: &Chart, j: &Chart, x: &Projector) -> Result<CMat> {
        g_transition(i, j, x)
    }

    fn h(&self, i: &Chart, j: &Chart, y: &Projector, x: &Projector) -> Result<CMat> {
        h_transition(i, j, y, x)
    }

    fn k(&self, i: &Chart, x: &Projector) -> Result<CMat> {
        i.coordinate_matrix(x)?;
        Ok(eye(self.m))
    }
}

pub fn two_transition<T: TransitionFunctions + ?Sized>(tf: &T, i: &Chart, j: &Chart, k: &Chart, x: &Projector) -> Result<CMat> {
    tf.h3(i, j, k, x)
}

/// A deliberately broken copy of some transition data.
#[derive(Debug, Clone, PartialEq)]
pub enum Defect {
    /// `g̃^ik = d·g^ik` for the ordered pair `(i, k)`.
    G { i: Chart, k: Chart, d: CMat },
    /// `h̃^ij = d·h^ij` whenever `i ≠ j`.
    H { d: CMat },
}

pub struct Defected<T> {
    pub inner: T,
    pub defect: Defect,
}

impl<T: TransitionFunctions> TransitionFunctions for Defected<T> {
    fn cm(&self) -> CrossedModule {
        self.inner.cm()
    }

    fn charts(&self) -> Vec<Chart> {
        self.inner.charts()
    }

    fn n(&self) -> usize {
        self.inner.n()
    }

    fn m(&self) -> usize {
        self.inner.m()
    }

    fn g(&self, i: &Chart, j: &Chart, x: &Projector) -> Result<CMat> {
        let g = self.inner.g(i, j, x)?;
        match &self.defect {
            Defect::G { i: di, k: dk, d } if di == i && dk == j => Ok(d * g),
            _ => Ok(g),
        }
    }

    fn h(&self, i: &Chart, j: &Chart, y: &Projector, x: &Projector) -> Result<CMat> {
        let h = self.inner.h(i, j, y, x)?;
        match &self.defect {
            Defect::H { d } if i != j => Ok(d * h),
            _ => Ok(h),
        }
    }

    fn k(&self, i: &Chart, x: &Projector) -> Result<CMat> {
        self.inner.k(i, x)
    }
}

/// Right action of `(h, g)` on a frame.
pub fn right_action_frame(z: &CMat, g: &CMat) -> CMat {
    z * g
}

/// Right action of `(h, g)` on a trivialized arrow `(h_f, g_f)`.
pub fn right_action_arrow(cm: &CrossedModule, f: &Arrow2, by: &Arrow2) -> Result<Arrow2> {
    horizontal_compose(cm, f, by)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct BundleReport {
    pub samples: usize,
    pub g_ii: f64,
    pub g_ji: f64,
    pub h_relation: f64,
    pub h_ii: f64,
    pub h_cocycle: f64,
    pub h_quadruple: f64,
    /// Max distance of `h^ijk` from the identity.
    pub two_transition: f64,
}

impl BundleReport {
    pub fn identities(&self) -> [(&'static str, f64); 6] {
        [
            ("g_ii_equals_t_k", self.g_ii),
            ("g_ji_inverse_relation", self.g_ji),
            ("h_intertwines_g", self.h_relation),
            ("h_ii_equals_k_ratio", self.h_ii),
            ("h_cocycle_triple", self.h_cocycle),
            ("h3_cocycle_quadruple", self.h_quadruple),
        ]
    }

    pub fn max_identity(&self) -> f64 {
        self.identities().iter().map(|x| x.1).fold(0.0, f64::max)
    }
}

fn sample_pair<T: TransitionFunctions + ?Sized, R: Rng>(tf: &T, rng: &mut R) -> (Projector, Projector, Vec<Chart>) {
    let all = tf.charts();
    loop {
        let x = random_projector_rng(tf.n(), tf.m(), rng);
        let y = random_projector_near_rng(&x, 0.3, rng);
        let common: Vec<Chart> = charts_for(&x, &all).into_iter().filter(|c| c.contains(&y)).collect();
        if !common.is_empty() && linkable(&y, &x) {
            return (y, x, common);
        }
    }
}

fn sample_residuals<T: TransitionFunctions + ?Sized>(tf: &T, rng: &mut ChaCha8Rng) -> Result<[f64; 7]> {
    let cm = tf.cm();
    let (y, x, common) = sample_pair(tf, rng);
    let mut pick = || common[rng.random_range(0..common.len())].clone();
    let (i, j, k, l) = (pick(), pick(), pick(), pick());

    let gij = tf.g(&i, &j, &x)?;
    let r1 = rel_dist(&tf.g(&i, &i, &x)?, &cm.t(&tf.k(&i, &x)?));
    let r2 = rel_dist(
        &tf.g(&j, &i, &x)?,
        &(cm.t(&tf.k(&j, &x)?) * inverse(&gij)? * cm.t(&tf.k(&i, &x)?)),
    );
    let hij = tf.h(&i, &j, &y, &x)?;
    let r3 = rel_dist(&(cm.t(&hij) * &gij), &tf.g(&i, &j, &y)?);
    let r4 = rel_dist(&tf.h(&i, &i, &y, &x)?, &(tf.k(&i, &y)? * inverse(&tf.k(&i, &x)?)?));

    let lhs = &hij * cm.alpha(&gij, &tf.h(&j, &k, &y, &x)?)?;
    let rhs = inverse(&tf.h3(&i, &j, &k, &y)?)? * tf.h(&i, &k, &y, &x)? * tf.h3(&i, &j, &k, &x)?;
    let r5 = rel_dist(&lhs, &rhs);

    let lhs = tf.h3(&i, &j, &l, &x)? * cm.alpha(&gij, &tf.h3(&j, &k, &l, &x)?)?;
    let rhs = tf.h3(&i, &k, &l, &x)? * tf.h3(&i, &j, &k, &x)?;
    let r6 = rel_dist(&lhs, &rhs);

    let r7 = rel_dist(&tf.h3(&i, &j, &k, &x)?, &eye(tf.m()));
    Ok([r1, r2, r3, r4, r5, r6, r7])
}

/// Max residuals of the transition-function identities over seeded samples.
pub fn verify_bundle_identities<T: TransitionFunctions + ?Sized>(tf: &T, samples: usize, seed: u64, exec: Exec) -> BundleReport {
    let rows = par::map_indexed(exec, samples, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(s as u64));
        sample_residuals(tf, &mut rng).unwrap_or([f64::INFINITY; 7])
    });
    let col = |j: usize| rows.iter().map(|r| r[j]).fold(0.0, f64::max);
    BundleReport {
        samples,
        g_ii: col(0),
        g_ji: col(1),
        h_relation: col(2),
        h_ii: col(3),
        h_cocycle: col(4),
        h_quadruple: col(5),
        two_transition: col(6),
    }
}
