//! Library results against closed forms computed independently here.

use approx::assert_relative_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavegauge::grassmann::{fs_distance, Projector};
use wavegauge::holonomy::path_ordered_exp;
use wavegauge::linalg::{dist, eye, gaussian, mat_exp, mat_log, random_hermitian};
use wavegauge::quantum::{propagate_u, simulate, HamiltonianModel};
use wavegauge::two_space::{wave_operator, Skeleton};
use wavegauge::{CMat, C64};

fn z(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `exp(aI + B)` with `B` traceless: `B² = r²I`, so `e^a (cosh r·I + sinh r/r·B)`.
fn exp2(a: &CMat) -> CMat {
    let half = (a[(0, 0)] + a[(1, 1)]) * 0.5;
    let b = a - eye(2) * half;
    let r = (-b.determinant()).sqrt();
    let shr = if r.norm() < 1e-12 { z(1.0, 0.0) } else { r.sinh() / r };
    (eye(2) * r.cosh() + b * shr) * half.exp()
}

#[test]
fn exponential_matches_two_by_two_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for scale in [0.1, 1.0, 3.0] {
        for _ in 0..20 {
            let a = gaussian(2, 2, &mut rng) * z(scale, 0.0);
            let e = exp2(&a);
            assert!(dist(&mat_exp(&a), &e) <= 1e-12 * e.norm().max(1.0), "{a}");
        }
    }
}

#[test]
fn logarithm_of_diagonalizable_matrix() {
    // V diag(e^{λ}) V⁻¹ has principal log V diag(λ) V⁻¹ when |Im λ| < π
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = eye(3) + gaussian(3, 3, &mut rng) * z(0.2, 0.0);
    let vi = v.clone().try_inverse().unwrap();
    let lam = [z(0.3, 2.5), z(-1.0, -0.4), z(0.7, 0.0)];
    let d = |f: &dyn Fn(C64) -> C64| CMat::from_fn(3, 3, |i, j| if i == j { f(lam[i]) } else { z(0.0, 0.0) });
    let g = &v * d(&|x| x.exp()) * &vi;
    let l = &v * d(&|x| x) * &vi;
    assert!(dist(&mat_log(&g).unwrap(), &l) < 1e-10);
}

#[test]
fn ordered_exponential_of_commuting_generator() {
    // X(u) = cos(3u)·K commutes with itself, so Y(1) = exp(−sin(3)/3·K)
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = gaussian(3, 3, &mut rng);
    let k2 = k.clone();
    let y = path_ordered_exp(move |u| Ok(&k2 * z((3.0 * u).cos(), 0.0)), 3, 400).unwrap();
    let exact = mat_exp(&(&k * z(-(3.0f64).sin() / 3.0, 0.0)));
    assert!(dist(&y, &exact) < 1e-9);
}

#[test]
fn line_distance_and_wave_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (u, v) = (gaussian(4, 1, &mut rng), gaussian(4, 1, &mut rng));
        let (p, p0) = (Projector::from_frame(&u).unwrap(), Projector::from_frame(&v).unwrap());
        let ov = (u.adjoint() * &v)[(0, 0)].norm_sqr() / (u.norm_squared() * v.norm_squared());
        assert_relative_eq!(fs_distance(&p, &p0), ov.acos(), epsilon = 1e-10);
        // Ω = |u⟩⟨v| / ⟨v|u⟩
        let inner = (v.adjoint() * &u)[(0, 0)];
        let omega = &u * v.adjoint() / inner;
        let m = wave_operator(&Skeleton::pair(p, p0)).unwrap();
        assert!(dist(&m.value, &omega) < 1e-10);
    }
}

#[test]
fn constant_hamiltonian_propagator() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = random_hermitian(4, &mut rng);
    let h2 = h.clone();
    let model = HamiltonianModel::from_fn(4, move |_| h2.clone());
    let u = propagate_u(&model, 1.5, 300);
    // exp(−iHt) from the spectral decomposition
    let eig = h.clone().symmetric_eigen();
    let phase = CMat::from_fn(4, 4, |i, j| if i == j { z(0.0, -1.5 * eig.eigenvalues[i]).exp() } else { z(0.0, 0.0) });
    let exact = &eig.eigenvectors * phase * eig.eigenvectors.adjoint();
    assert!(dist(&u[300], &exact) < 1e-10);
}

#[test]
fn stationary_band_has_identity_wave_operator() {
    let model = HamiltonianModel::from_fn(3, |_| CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![z(0.0, 0.0), z(1.0, 0.0), z(2.5, 0.0)])));
    let trace = simulate(&model, &[0], 2.0, 200, 1e-6).unwrap();
    for (om, p0) in trace.omega.iter().zip(&trace.p0) {
        assert!(dist(om, p0.matrix()) < 1e-12);
    }
}
