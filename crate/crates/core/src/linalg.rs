//! Dense complex linear algebra shared by every other module.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`. Everything here is pure.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> CMat {
    CMat::zeros(r, c)
}

pub fn frob(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Frobenius distance between two matrices of equal shape.
pub fn dist(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// `‖a − b‖ / max(1, ‖b‖)`.
pub fn rel_dist(a: &CMat, b: &CMat) -> f64 {
    dist(a, b) / frob(b).max(1.0)
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "inverse of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    a.clone().try_inverse().ok_or(Error::Singular)
}

pub fn singular_values(a: &CMat) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

/// Ratio of largest to smallest singular value (infinite when singular).
pub fn condition_number(a: &CMat) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Orthonormal basis of the column span of a full-rank `n×m` matrix.
pub fn orthonormalize(z: &CMat) -> CMat {
    let m = z.ncols();
    let qr = z.clone().qr();
    let q = qr.q();
    q.columns(0, m).into_owned()
}

/// `(Z†Z)⁻¹Z†`, the orthogonal left inverse of a full-column-rank frame.
pub fn left_inverse(z: &CMat) -> Result<CMat> {
    let zh = z.adjoint();
    Ok(inverse(&(&zh * z))? * zh)
}

/// Unitary factor of the polar decomposition `a = U·|a|`.
pub fn polar_unitary(a: &CMat) -> CMat {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    u * vt
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
pub fn eigh(h: &CMat) -> (Vec<f64>, CMat) {
    let sym = (h + h.adjoint()) * c(0.5);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..h.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = CMat::zeros(h.nrows(), h.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// `exp(−i·h·dt)` for Hermitian `h`, unitary to rounding.
pub fn unitary_step(h: &CMat, dt: f64) -> CMat {
    let (vals, vecs) = eigh(h);
    let phases = DVector::from_iterator(vals.len(), vals.iter().map(|&l| (-I * l * dt).exp()));
    let scaled = CMat::from_fn(vecs.nrows(), vecs.ncols(), |r, k| vecs[(r, k)] * phases[k]);
    scaled * vecs.adjoint()
}

/// Matrix exponential (Padé scaling and squaring).
pub fn mat_exp(x: &CMat) -> CMat {
    assert!(x.is_square(), "mat_exp of a non-square matrix");
    if x.nrows() == 1 {
        return CMat::from_element(1, 1, x[(0, 0)].exp());
    }
    x.clone().exp()
}

/// Complex Schur form `a = Q·T·Q†` with `T` upper triangular.
pub fn schur(a: &CMat) -> (CMat, CMat) {
    let (q, t) = a.clone().schur().unpack();
    // the complex Schur form is triangular; clear rounding below the diagonal
    let t = CMat::from_fn(t.nrows(), t.ncols(), |r, k| if r > k { C64::new(0.0, 0.0) } else { t[(r, k)] });
    (q, t)
}

/// Eigenvalues of a general complex matrix.
pub fn eigenvalues(a: &CMat) -> Vec<C64> {
    let (_, t) = schur(a);
    (0..t.nrows()).map(|k| t[(k, k)]).collect()
}

/// Eigenvalues and unit right eigenvectors (as columns) of a general complex
/// matrix. Requires distinct eigenvalues; `min_gap` bounds their separation.
pub fn eig_general(a: &CMat, min_gap: f64) -> Result<(Vec<C64>, CMat)> {
    let n = a.nrows();
    let (q, t) = schur(a);
    let vals: Vec<C64> = (0..n).map(|k| t[(k, k)]).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if (vals[i] - vals[j]).norm() < min_gap {
                return Err(Error::EffectiveDegeneracy {
                    t: f64::NAN,
                    gap: (vals[i] - vals[j]).norm(),
                });
            }
        }
    }
    let mut vecs = CMat::zeros(n, n);
    for k in 0..n {
        let mut v = CVec::zeros(n);
        v[k] = c(1.0);
        for i in (0..k).rev() {
            let mut s = C64::new(0.0, 0.0);
            for j in (i + 1)..=k {
                s += t[(i, j)] * v[j];
            }
            v[i] = -s / (t[(i, i)] - t[(k, k)]);
        }
        let x = &q * v;
        let nrm = x.norm();
        vecs.set_column(k, &(x / c(nrm)));
    }
    Ok((vals, vecs))
}

fn triangular_sqrt(t: &CMat) -> CMat {
    let n = t.nrows();
    let mut r = CMat::zeros(n, n);
    for j in 0..n {
        r[(j, j)] = t[(j, j)].sqrt();
        for i in (0..j).rev() {
            let mut s = t[(i, j)];
            for k in (i + 1)..j {
                s -= r[(i, k)] * r[(k, j)];
            }
            r[(i, j)] = s / (r[(i, i)] + r[(j, j)]);
        }
    }
    r
}

/// Principal matrix logarithm by inverse scaling and squaring on the Schur
/// form. Fails when an eigenvalue sits on or next to the closed negative
/// real axis.
pub fn mat_log(g: &CMat) -> Result<CMat> {
    assert!(g.is_square(), "mat_log of a non-square matrix");
    let n = g.nrows();
    let (q, mut t) = schur(g);
    let scale = frob(g).max(1.0);
    for k in 0..n {
        let z = t[(k, k)];
        if z.norm() < 1e-14 * scale || (z.im.abs() < 1e-10 * z.norm() && z.re < 0.0) {
            return Err(Error::BranchFailure(format!("eigenvalue {z} on the branch cut")));
        }
    }
    let id = eye(n);
    let mut squarings = 0u32;
    while frob(&(&t - &id)) > 0.25 {
        t = triangular_sqrt(&t);
        squarings += 1;
        if squarings > 60 {
            return Err(Error::BranchFailure("square-root iteration did not converge".into()));
        }
    }
    // log T = 2 atanh(Y), Y = (T − 1)(T + 1)⁻¹
    let y = (&t - &id) * inverse(&(&t + &id))?;
    let y2 = &y * &y;
    let mut term = y.clone();
    let mut acc = y.clone();
    for j in 1..40 {
        term = &term * &y2;
        let contrib = &term * c(1.0 / (2 * j + 1) as f64);
        acc += &contrib;
        if frob(&contrib) < 1e-18 * frob(&acc).max(1e-300) {
            break;
        }
    }
    let log_t = acc * c(2.0 * 2f64.powi(squarings as i32));
    Ok(&q * log_t * q.adjoint())
}

/// Matrix with i.i.d. standard complex Gaussian entries.
pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    })
}

/// Random Hermitian matrix with Gaussian entries.
pub fn random_hermitian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let g = gaussian(n, n, rng);
    (&g + g.adjoint()) * c(0.5)
}

/// Random invertible matrix `1 + scale·G/√m`, well conditioned for small scale.
pub fn random_invertible<R: Rng + ?Sized>(m: usize, scale: f64, rng: &mut R) -> CMat {
    eye(m) + gaussian(m, m, rng) * c(scale / (m as f64).sqrt())
}

pub fn is_hermitian(a: &CMat, tol: f64) -> bool {
    dist(a, &a.adjoint()) <= tol * frob(a).max(1.0)
}

/// Central difference of a matrix-valued function of one real variable.
pub fn central_diff<F>(f: F, x: f64, h: f64) -> Result<CMat>
where
    F: Fn(f64) -> Result<CMat>,
{
    let fp = f(x + h)?;
    let fm = f(x - h)?;
    Ok((fp - fm) * c(0.5 / h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exp_of_zero_is_identity() {
        assert!(dist(&mat_exp(&zeros(3, 3)), &eye(3)) < 1e-15);
    }

    #[test]
    fn exp_of_diagonal() {
        let d = CMat::from_diagonal(&CVec::from_vec(vec![c(0.3), C64::new(-1.0, 2.0)]));
        let e = mat_exp(&d);
        assert!((e[(0, 0)] - c(0.3).exp()).norm() < 1e-14);
        assert!((e[(1, 1)] - C64::new(-1.0, 2.0).exp()).norm() < 1e-14);
        assert!(e[(0, 1)].norm() < 1e-15 && e[(1, 0)].norm() < 1e-15);
    }

    #[test]
    fn exp_of_nilpotent() {
        let n = CMat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        assert!(dist(&mat_exp(&n), &(eye(2) + &n)) < 1e-15);
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in 1..5 {
            let x = gaussian(m, m, &mut rng) * c(0.7);
            let g = mat_exp(&x);
            let l = mat_log(&g).unwrap();
            assert!(rel_dist(&mat_exp(&l), &g) < 1e-10, "m={m}");
        }
    }

    #[test]
    fn log_rejects_negative_eigenvalue() {
        let g = CMat::from_diagonal(&CVec::from_vec(vec![c(-1.0), c(2.0)]));
        assert!(matches!(mat_log(&g), Err(Error::BranchFailure(_))));
    }

    #[test]
    fn general_eigenvectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = gaussian(4, 4, &mut rng);
        let (vals, vecs) = eig_general(&a, 1e-10).unwrap();
        for (k, &val) in vals.iter().enumerate() {
            let v = vecs.column(k).into_owned();
            let r = &a * &v - &v * val;
            assert!(r.norm() < 1e-10);
        }
    }

    #[test]
    fn unitary_step_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_hermitian(5, &mut rng);
        let u = unitary_step(&h, 0.37);
        assert!(dist(&(u.adjoint() * &u), &eye(5)) < 1e-12);
        assert!(rel_dist(&u, &mat_exp(&(&h * (-I * 0.37)))) < 1e-12);
    }
}
