//! Rank-`m` orthogonal projectors on `ℂⁿ`: Fubini–Study distance,
//! linkability, and the affine coordinate charts of the Grassmannian.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::linalg::{c, dist, eigh, gaussian, inverse, orthonormalize, singular_values, zeros, CMat};

/// Default gap kept below `π/2` when deciding linkability.
pub const DEFAULT_MARGIN: f64 = 1e-6;

/// Frames whose singular-value ratio falls below this are rejected.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FsConvention {
    /// `arccos |det Z₁†Z₂|²`
    #[default]
    Squared,
    /// `arccos |det Z₁†Z₂|`
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    mat: CMat,
    frame: CMat,
}

impl Projector {
    /// `Z(Z†Z)⁻¹Z†` for a full-rank frame.
    pub fn from_frame(z: &CMat) -> Result<Self> {
        if z.ncols() == 0 || z.ncols() > z.nrows() {
            return Err(Error::DimensionMismatch(format!("frame of shape {}x{}", z.nrows(), z.ncols())));
        }
        let s = singular_values(z);
        let ratio = s.last().copied().unwrap_or(0.0) / s[0].max(f64::MIN_POSITIVE);
        if ratio < RANK_TOL {
            return Err(Error::RankDeficient(1.0 / ratio));
        }
        let frame = orthonormalize(z);
        let mat = &frame * frame.adjoint();
        Ok(Self { mat, frame })
    }

    /// Validate a Hermitian idempotent of the given rank.
    pub fn from_matrix(p: &CMat, rank: usize) -> Result<Self> {
        let n = p.nrows();
        if !p.is_square() || rank == 0 || rank > n {
            return Err(Error::DimensionMismatch(format!("projector {}x{} of rank {rank}", n, p.ncols())));
        }
        let tol = 1e-10;
        let herm = dist(p, &p.adjoint());
        let idem = dist(&(p * p), p);
        let tr = (p.trace().re - rank as f64).abs();
        if herm > tol || idem > tol || tr > tol {
            return Err(Error::InvalidInput(format!(
                "not a rank-{rank} orthogonal projector (hermiticity {herm:.1e}, idempotency {idem:.1e}, trace {tr:.1e})"
            )));
        }
        let (_, vecs) = eigh(p);
        let frame = vecs.columns(n - rank, rank).into_owned();
        Ok(Self { mat: &frame * frame.adjoint(), frame })
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    /// Orthonormal frame of the range.
    pub fn frame(&self) -> &CMat {
        &self.frame
    }

    pub fn n(&self) -> usize {
        self.mat.nrows()
    }

    pub fn rank(&self) -> usize {
        self.frame.ncols()
    }
}

pub fn projector_from_frame(z: &CMat) -> Result<Projector> {
    Projector::from_frame(z)
}

/// `|det Z₁†Z₂|` on orthonormal frames.
pub fn overlap_modulus(p1: &Projector, p2: &Projector) -> f64 {
    let o = p1.frame.adjoint() * &p2.frame;
    o.determinant().norm().min(1.0)
}

pub fn fs_distance_with(p1: &Projector, p2: &Projector, conv: FsConvention) -> f64 {
    if p1.rank() != p2.rank() || p1.n() != p2.n() {
        return FRAC_PI_2;
    }
    let d = overlap_modulus(p1, p2);
    if d < 0.7 {
        let v = match conv {
            FsConvention::Squared => d * d,
            FsConvention::Plain => d,
        };
        return v.clamp(0.0, 1.0).acos();
    }
    // near coincidence: 1 − Π cos²θ from the sines of the principal angles,
    // then acos(1 − x) = 2 asin(√(x/2)) avoids cancellation
    let resid = (CMat::identity(p1.n(), p1.n()) - p1.matrix()) * p2.frame();
    let log_cos2: f64 = singular_values(&resid).iter().map(|s| (-s * s).ln_1p()).sum();
    let x2 = -log_cos2.exp_m1();
    let x = match conv {
        FsConvention::Squared => x2,
        FsConvention::Plain => x2 / (1.0 + (1.0 - x2).sqrt()),
    };
    2.0 * (x / 2.0).sqrt().clamp(0.0, 1.0).asin()
}

pub fn fs_distance(p1: &Projector, p2: &Projector) -> f64 {
    fs_distance_with(p1, p2, FsConvention::Squared)
}

pub fn linkable_with_margin(p1: &Projector, p2: &Projector, margin: f64) -> bool {
    fs_distance(p1, p2) < FRAC_PI_2 - margin
}

pub fn linkable(p1: &Projector, p2: &Projector) -> bool {
    linkable_with_margin(p1, p2, DEFAULT_MARGIN)
}

/// Coordinate chart labelled by an `m`-subset of row indices (0-based, sorted).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chart {
    pub indices: Vec<usize>,
}

impl Chart {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    /// Every chart of `Gr(m, n)` in lexicographic order.
    pub fn all(n: usize, m: usize) -> Vec<Chart> {
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(m);
        fn rec(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Chart>) {
            if cur.len() == m {
                out.push(Chart { indices: cur.clone() });
                return;
            }
            for k in start..n {
                cur.push(k);
                rec(k + 1, n, m, cur, out);
                cur.pop();
            }
        }
        rec(0, n, m, &mut cur, &mut out);
        out
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    /// Rows outside the chart's index set.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|k| !self.indices.contains(k)).collect()
    }

    /// Projector onto `span(e_a; a ∈ I)`.
    pub fn reference_projector(&self, n: usize) -> Projector {
        let z = self.coordinate_frame(&zeros(n - self.m(), self.m()));
        Projector::from_frame(&z).expect("coordinate frames are full rank")
    }

    /// Frame `Z₀` with identity on the chart rows and `ξ` on the others.
    pub fn coordinate_frame(&self, xi: &CMat) -> CMat {
        let m = self.m();
        let n = m + xi.nrows();
        let mut z = zeros(n, m);
        for (a, &row) in self.indices.iter().enumerate() {
            z[(row, a)] = c(1.0);
        }
        for (r, &row) in self.complement(n).iter().enumerate() {
            for a in 0..m {
                z[(row, a)] = xi[(r, a)];
            }
        }
        z
    }

    /// Chart coordinates `ξ` of a coordinate frame (its non-chart rows).
    pub fn coordinates_of_frame(&self, z0: &CMat) -> CMat {
        let n = z0.nrows();
        let comp = self.complement(n);
        CMat::from_fn(comp.len(), self.m(), |r, a| z0[(comp[r], a)])
    }

    pub fn projector_at(&self, xi: &CMat) -> Result<Projector> {
        Projector::from_frame(&self.coordinate_frame(xi))
    }

    /// Whether `P` lies in the chart domain with the default margin.
    pub fn contains(&self, p: &Projector) -> bool {
        self.block(p).is_ok()
    }

    fn block(&self, p: &Projector) -> Result<CMat> {
        if self.indices.iter().any(|&k| k >= p.n()) || self.m() != p.rank() {
            return Err(Error::OutOfChart(self.indices.clone()));
        }
        let m = self.m();
        let b = CMat::from_fn(m, m, |a, k| p.frame[(self.indices[a], k)]);
        let d2 = b.determinant().norm_sqr();
        // fs_distance(P, P^i) < π/2 − margin  ⟺  |det B|² > sin(margin)
        if d2 <= DEFAULT_MARGIN.sin() {
            return Err(Error::OutOfChart(self.indices.clone()));
        }
        Ok(b)
    }

    /// The unique frame of `Ran P` equal to the identity on the chart rows.
    pub fn coordinate_matrix(&self, p: &Projector) -> Result<CMat> {
        let b = self.block(p)?;
        let bi = inverse(&b).map_err(|_| Error::OutOfChart(self.indices.clone()))?;
        Ok(&p.frame * bi)
    }

    pub fn coordinates(&self, p: &Projector) -> Result<CMat> {
        Ok(self.coordinates_of_frame(&self.coordinate_matrix(p)?))
    }
}

pub fn coordinate_matrix(chart: &Chart, p: &Projector) -> Result<CMat> {
    chart.coordinate_matrix(p)
}

pub fn charts_for(p: &Projector, all: &[Chart]) -> Vec<Chart> {
    all.iter().filter(|ch| ch.contains(p)).cloned().collect()
}

/// The chart in which `P` is farthest from the boundary.
pub fn best_chart(p: &Projector) -> Chart {
    Chart::all(p.n(), p.rank())
        .into_iter()
        .max_by(|a, b| {
            let da = chart_overlap(a, p);
            let db = chart_overlap(b, p);
            da.partial_cmp(&db).unwrap()
        })
        .expect("at least one chart")
}

fn chart_overlap(ch: &Chart, p: &Projector) -> f64 {
    let m = ch.m();
    CMat::from_fn(m, m, |a, k| p.frame[(ch.indices[a], k)]).determinant().norm()
}

pub fn random_projector_rng<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Projector {
    loop {
        if let Ok(p) = Projector::from_frame(&gaussian(n, m, rng)) {
            return p;
        }
    }
}

pub fn random_projector(n: usize, m: usize, seed: u64) -> Projector {
    random_projector_rng(n, m, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_projector_near_rng<R: Rng + ?Sized>(p: &Projector, radius: f64, rng: &mut R) -> Projector {
    let dir = gaussian(p.n(), p.rank(), rng);
    let mut scale = radius;
    loop {
        let z = p.frame() + &dir * c(scale);
        if let Ok(q) = Projector::from_frame(&z) {
            if fs_distance(p, &q) < radius {
                return q;
            }
        }
        scale *= 0.5;
    }
}

pub fn random_projector_near(p: &Projector, radius: f64, seed: u64) -> Projector {
    random_projector_near_rng(p, radius, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_dist;
    use std::f64::consts::PI;

    fn col(v: &[f64]) -> CMat {
        CMat::from_iterator(v.len(), 1, v.iter().map(|&x| c(x)))
    }

    #[test]
    fn first_columns_give_diagonal_projector() {
        let z = CMat::identity(4, 2);
        let p = projector_from_frame(&z).unwrap();
        let d = CMat::from_diagonal(&crate::linalg::CVec::from_vec(vec![c(1.0), c(1.0), c(0.0), c(0.0)]));
        assert!(dist(p.matrix(), &d) < 1e-15);
    }

    #[test]
    fn hand_projector() {
        let p = projector_from_frame(&col(&[1.0, 1.0])).unwrap();
        let expect = CMat::from_element(2, 2, c(0.5));
        assert!(dist(p.matrix(), &expect) < 1e-15);
    }

    #[test]
    fn rank_deficient_frame() {
        let z = CMat::from_row_slice(3, 2, &[c(1.0), c(2.0), c(1.0), c(2.0), c(0.0), c(0.0)]);
        assert!(matches!(projector_from_frame(&z), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn distances() {
        let e1 = projector_from_frame(&col(&[1.0, 0.0])).unwrap();
        let e2 = projector_from_frame(&col(&[0.0, 1.0])).unwrap();
        let d = projector_from_frame(&col(&[1.0, 1.0])).unwrap();
        assert_eq!(fs_distance(&e1, &e1), 0.0);
        assert!((fs_distance(&e1, &e2) - FRAC_PI_2).abs() < 1e-15);
        assert!((fs_distance(&e1, &d) - PI / 3.0).abs() < 1e-12);
        assert!((fs_distance_with(&e1, &d, FsConvention::Plain) - PI / 4.0).abs() < 1e-12);
        assert!(linkable(&e1, &e1) && !linkable(&e1, &e2) && linkable(&e1, &d));
    }

    #[test]
    fn coordinate_matrices() {
        let p = projector_from_frame(&col(&[1.0, 2.0])).unwrap();
        let z1 = Chart::new(vec![0]).coordinate_matrix(&p).unwrap();
        let z2 = Chart::new(vec![1]).coordinate_matrix(&p).unwrap();
        assert!(dist(&z1, &col(&[1.0, 2.0])) < 1e-14);
        assert!(dist(&z2, &col(&[0.5, 1.0])) < 1e-14);
        let ch = Chart::new(vec![1, 3]);
        let z = ch.coordinate_matrix(&ch.reference_projector(4)).unwrap();
        assert!(dist(&z, &ch.coordinate_frame(&zeros(2, 2))) < 1e-14);
    }

    #[test]
    fn chart_membership() {
        let all = Chart::all(2, 1);
        let e1 = projector_from_frame(&col(&[1.0, 0.0])).unwrap();
        assert_eq!(charts_for(&e1, &all), vec![Chart::new(vec![0])]);
        let d = projector_from_frame(&col(&[1.0, 1.0])).unwrap();
        assert_eq!(charts_for(&d, &all).len(), 2);
        let e3 = projector_from_frame(&col(&[0.0, 0.0, 1.0])).unwrap();
        assert_eq!(charts_for(&e3, &Chart::all(3, 1)), vec![Chart::new(vec![2])]);
        assert!(matches!(Chart::new(vec![0]).coordinate_matrix(&projector_from_frame(&col(&[0.0, 1.0])).unwrap()), Err(Error::OutOfChart(_))));
    }

    #[test]
    fn sampling() {
        let a = random_projector(5, 2, 17);
        let b = random_projector(5, 2, 17);
        assert_eq!(a, b);
        assert!((a.matrix().trace().re - 2.0).abs() < 1e-12);
        for s in 0..20 {
            let q = random_projector_near(&a, 0.3, s);
            assert!(fs_distance(&a, &q) < 0.3);
        }
    }

    #[test]
    fn from_matrix_roundtrip() {
        let p = random_projector(4, 2, 3);
        let q = Projector::from_matrix(p.matrix(), 2).unwrap();
        assert!(rel_dist(q.matrix(), p.matrix()) < 1e-12);
        assert!(Projector::from_matrix(&(p.matrix() * c(2.0)), 2).is_err());
    }
}
