//! Almost-adiabatic quantum dynamics through generalized time-dependent wave
//! operators, with `ħ = 1`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::connection::{LocalConnection, StiefelConnection};
use crate::error::{Error, Result};
use crate::grassmann::{best_chart, fs_distance, Chart, Projector};
use crate::holonomy::{lift_curve, ChartCurve, PairCurve};
use crate::linalg::{c, commutator, dist, eig_general, eigh, eye, frob, inverse, is_hermitian, left_inverse, polar_unitary, random_hermitian, rel_dist, unitary_step, zeros, CMat, CVec, C64, I};
use crate::par::{self, Exec};
use crate::simplicial::fitted_order;
use crate::two_space::elementary_wave_operator;

pub const HERMITICITY_TOL: f64 = 1e-12;
pub const DEFAULT_GAP_MIN: f64 = 1e-6;
pub const DEGENERACY_TOL: f64 = 1e-8;

type HamFn = dyn Fn(f64) -> CMat + Send + Sync;

#[derive(Clone)]
pub struct HamiltonianModel {
    pub n: usize,
    eval: Arc<HamFn>,
    /// Suggested number of time steps per unit time.
    pub grid_hint: usize,
}

impl std::fmt::Debug for HamiltonianModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HamiltonianModel").field("n", &self.n).field("grid_hint", &self.grid_hint).finish()
    }
}

impl HamiltonianModel {
    pub fn from_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn(f64) -> CMat + Send + Sync + 'static,
    {
        Self { n, eval: Arc::new(f), grid_hint: 1000 }
    }

    pub fn with_grid_hint(mut self, hint: usize) -> Self {
        self.grid_hint = hint;
        self
    }

    pub fn at(&self, t: f64) -> CMat {
        (self.eval)(t)
    }

    pub fn check_hermitian(&self, times: &[f64]) -> Result<()> {
        for &t in times {
            let h = self.at(t);
            if h.nrows() != self.n || h.ncols() != self.n {
                return Err(Error::DimensionMismatch(format!("H({t}) is {}×{}, expected {}×{}", h.nrows(), h.ncols(), self.n, self.n)));
            }
            if !is_hermitian(&h, HERMITICITY_TOL) {
                return Err(Error::InvalidInput(format!("H({t}) is not Hermitian")));
            }
        }
        Ok(())
    }

    /// `R(t)H₀R(t)†` with `R(t) = exp(−iθ(t)K)`.
    pub fn rotating<T>(h0: CMat, k: CMat, theta: T) -> Self
    where
        T: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let n = h0.nrows();
        Self::from_fn(n, move |t| {
            let r = unitary_step(&k, theta(t));
            &r * &h0 * r.adjoint()
        })
    }

    /// `H₀ + tanh((t − t₀)/τ)·H₁`.
    pub fn avoided_crossing(h0: CMat, h1: CMat, t0: f64, tau: f64) -> Self {
        let n = h0.nrows();
        Self::from_fn(n, move |t| &h0 + &h1 * c(((t - t0) / tau).tanh()))
    }

    /// Natural cubic spline through `(t_k, H_k)`, clamped outside the table.
    pub fn table(times: Vec<f64>, mats: Vec<CMat>) -> Result<Self> {
        if times.len() < 2 || times.len() != mats.len() {
            return Err(Error::InvalidInput("a Hamiltonian table needs ≥ 2 rows with one matrix per time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("table times must increase strictly".into()));
        }
        let n = mats[0].nrows();
        if mats.iter().any(|m| m.nrows() != n || m.ncols() != n) {
            return Err(Error::DimensionMismatch("table matrices differ in shape".into()));
        }
        let second = spline_second_derivatives(&times, &mats);
        Ok(Self::from_fn(n, move |t| spline_eval(&times, &mats, &second, t)))
    }

    /// A smooth seeded model: the lowest `m` levels spaced by ½, a gap of
    /// 2.5, and two slow random Hermitian drives of size `strength`.
    pub fn seeded_smooth(n: usize, m: usize, seed: u64, strength: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v1 = random_hermitian(n, &mut rng);
        let v2 = random_hermitian(n, &mut rng);
        let (v1, v2) = (&v1 * c(1.0 / frob(&v1)), &v2 * c(1.0 / frob(&v2)));
        let levels: Vec<f64> = (0..n).map(|k| if k < m { 0.5 * k as f64 } else { 0.5 * (m - 1) as f64 + 2.5 + 0.7 * (k - m) as f64 }).collect();
        let d = CMat::from_fn(n, n, |r, k| if r == k { c(levels[r]) } else { c(0.0) });
        Self::from_fn(n, move |t| &d + (&v1 * c((0.8 * t).sin()) + &v2 * c((0.5 * t + 0.3).sin() - 0.3f64.sin())) * c(strength))
    }
}

fn spline_second_derivatives(t: &[f64], y: &[CMat]) -> Vec<CMat> {
    let n = t.len();
    let z = y[0].clone() * c(0.0);
    let mut m = vec![z.clone(); n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm with natural ends
    let mut cp = vec![0.0; n];
    let mut dp = vec![z; n];
    for i in 1..n - 1 {
        let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        let rhs = ((&y[i + 1] - &y[i]) * c(1.0 / h1) - (&y[i] - &y[i - 1]) * c(1.0 / h0)) * c(6.0);
        let diag = 2.0 * (h0 + h1) - h0 * cp[i - 1];
        cp[i] = h1 / diag;
        dp[i] = (rhs - &dp[i - 1] * c(h0)) * c(1.0 / diag);
    }
    for i in (1..n - 1).rev() {
        m[i] = &dp[i] - &m[i + 1] * c(cp[i]);
    }
    m
}

fn spline_eval(t: &[f64], y: &[CMat], m: &[CMat], x: f64) -> CMat {
    let n = t.len();
    let x = x.clamp(t[0], t[n - 1]);
    let k = t.partition_point(|&s| s <= x).clamp(1, n - 1) - 1;
    let h = t[k + 1] - t[k];
    let (a, b) = ((t[k + 1] - x) / h, (x - t[k]) / h);
    &y[k] * c(a) + &y[k + 1] * c(b) + (&m[k] * c(a * a * a - a) + &m[k + 1] * c(b * b * b - b)) * c(h * h / 6.0)
}

pub fn time_grid(duration: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| duration * k as f64 / steps as f64).collect()
}

/// `U_{k+1} = exp(−iH(t_{k+½})Δt)·U_k` on `steps` uniform steps.
pub fn propagate_u(model: &HamiltonianModel, duration: f64, steps: usize) -> Vec<CMat> {
    let dt = duration / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut u = eye(model.n);
    out.push(u.clone());
    for k in 0..steps {
        u = unitary_step(&model.at((k as f64 + 0.5) * dt), dt) * u;
        out.push(u.clone());
    }
    out
}

fn band_gap(vals: &[f64], selected: &[usize]) -> f64 {
    let mut gap = f64::INFINITY;
    for (k, v) in vals.iter().enumerate() {
        if selected.contains(&k) {
            continue;
        }
        for &s in selected {
            gap = gap.min((v - vals[s]).abs());
        }
    }
    gap
}

/// Eigenprojector of a band followed by subspace overlap, with frames aligned
/// to the previous step by the polar factor of their overlap.
pub fn track_eigenprojector(model: &HamiltonianModel, band: &[usize], times: &[f64], gap_min: f64) -> Result<(Vec<Projector>, Vec<CMat>)> {
    let n = model.n;
    let m = band.len();
    if m == 0 || band.iter().any(|&b| b >= n) {
        return Err(Error::InvalidInput(format!("band {band:?} does not fit dimension {n}")));
    }
    let mut projectors = Vec::with_capacity(times.len());
    let mut frames: Vec<CMat> = Vec::with_capacity(times.len());
    for &t in times {
        let (vals, vecs) = eigh(&model.at(t));
        let selected: Vec<usize> = match frames.last() {
            None => band.to_vec(),
            Some(prev) => {
                let mut w: Vec<(usize, f64)> = (0..n).map(|k| (k, (prev.adjoint() * vecs.column(k)).norm_squared())).collect();
                w.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
                let mut s: Vec<usize> = w[..m].iter().map(|p| p.0).collect();
                s.sort_unstable();
                s
            }
        };
        let gap = band_gap(&vals, &selected);
        if gap < gap_min {
            return Err(Error::GapClosure { t, gap });
        }
        let v = CMat::from_fn(n, m, |r, a| vecs[(r, selected[a])]);
        let frame = match frames.last() {
            None => v,
            Some(prev) => &v * polar_unitary(&(v.adjoint() * prev)),
        };
        projectors.push(Projector::from_frame(&frame)?);
        frames.push(frame);
    }
    Ok((projectors, frames))
}

/// Everything sampled along one trajectory; immutable once built.
#[derive(Debug, Clone)]
pub struct DynamicsTrace {
    pub times: Vec<f64>,
    pub h: Vec<CMat>,
    pub u: Vec<CMat>,
    pub p: Vec<Projector>,
    pub p0: Vec<Projector>,
    /// Orthonormal, step-aligned frames of `Ran P₀(t)`.
    pub frame0: Vec<CMat>,
    pub omega: Vec<CMat>,
}

impl DynamicsTrace {
    pub fn n(&self) -> usize {
        self.h[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.frame0[0].ncols()
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn max_unitarity_defect(&self) -> f64 {
        let n = self.n();
        self.u.iter().map(|u| frob(&(u.adjoint() * u - eye(n)))).fold(0.0, f64::max)
    }

    pub fn fs_distances(&self) -> Vec<f64> {
        self.p.iter().zip(&self.p0).map(|(p, q)| fs_distance(p, q)).collect()
    }

    pub fn idempotency_defects(&self) -> Vec<f64> {
        self.omega.iter().map(|o| dist(&(o * o), o)).collect()
    }
}

/// `Ω(t) = P(t)(P₀(t)P(t)P₀(t))⁻¹` along a sampled pair of projector paths.
pub fn generalized_wave_operator(times: &[f64], p: &[Projector], p0: &[Projector]) -> Result<Vec<CMat>> {
    times
        .iter()
        .zip(p.iter().zip(p0))
        .map(|(&t, (p, q))| {
            elementary_wave_operator(p, q, 0.0).map_err(|e| match e {
                Error::NotLinkable(d) => Error::NotLinkableAt { t, distance: d },
                other => other,
            })
        })
        .collect()
}

/// Propagation, band tracking and wave operators on `steps` uniform steps.
pub fn simulate(model: &HamiltonianModel, band: &[usize], duration: f64, steps: usize, gap_min: f64) -> Result<DynamicsTrace> {
    if steps < 4 || duration.is_nan() || duration <= 0.0 {
        return Err(Error::InvalidInput(format!("need duration > 0 and ≥ 4 steps, got {duration} and {steps}")));
    }
    let times = time_grid(duration, steps);
    model.check_hermitian(&[0.0, 0.5 * duration, duration])?;
    let (p0, frame0) = track_eigenprojector(model, band, &times, gap_min)?;
    let u = propagate_u(model, duration, steps);
    let p = u
        .iter()
        .map(|u| Projector::from_frame(&(u * &frame0[0])))
        .collect::<Result<Vec<_>>>()?;
    let omega = generalized_wave_operator(&times, &p, &p0)?;
    let h = times.iter().map(|&t| model.at(t)).collect();
    Ok(DynamicsTrace { times, h, u, p, p0, frame0, omega })
}

/// Central differences inside, second-order one-sided at both ends.
pub fn grid_derivative(samples: &[CMat], dt: f64) -> Vec<CMat> {
    let n = samples.len();
    assert!(n >= 3, "grid derivative needs three samples");
    (0..n)
        .map(|k| {
            if k == 0 {
                (&samples[0] * c(-3.0) + &samples[1] * c(4.0) - &samples[2]) * c(0.5 / dt)
            } else if k == n - 1 {
                (&samples[n - 1] * c(3.0) - &samples[n - 2] * c(4.0) + &samples[n - 3]) * c(0.5 / dt)
            } else {
                (&samples[k + 1] - &samples[k - 1]) * c(0.5 / dt)
            }
        })
        .collect()
}

/// `max ‖iΩ̇ − [H,Ω]Ω − iΩΩ̇‖` over interior samples.
pub fn wave_operator_ode_residual(trace: &DynamicsTrace) -> f64 {
    let d = grid_derivative(&trace.omega, trace.dt());
    (1..trace.steps())
        .map(|k| {
            let o = &trace.omega[k];
            frob(&(&d[k] * I - commutator(&trace.h[k], o) * o - o * &d[k] * I))
        })
        .fold(0.0, f64::max)
}

/// `U(t)(P₀U(t)P₀)⁻¹` with the initial eigenprojector held fixed.
pub fn fixed_p0_wave_operators(trace: &DynamicsTrace) -> Result<Vec<CMat>> {
    let b = &trace.frame0[0];
    trace
        .u
        .iter()
        .zip(&trace.times)
        .map(|(u, &t)| {
            let block = b.adjoint() * u * b;
            let inv = inverse(&block).map_err(|_| Error::NotLinkableAt { t, distance: std::f64::consts::FRAC_PI_2 })?;
            Ok(u * b * inv * b.adjoint())
        })
        .collect()
}

/// `max ‖iΩ̇ − [H,Ω]Ω‖` for the fixed-`P₀` wave operator.
pub fn fixed_p0_ode_residual(trace: &DynamicsTrace) -> Result<f64> {
    let om = fixed_p0_wave_operators(trace)?;
    let d = grid_derivative(&om, trace.dt());
    Ok((1..trace.steps()).map(|k| frob(&(&d[k] * I - commutator(&trace.h[k], &om[k]) * &om[k]))).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlochSolution {
    pub omega: CMat,
    pub projector: Projector,
    /// Eigenvalues of `H` spanning `Ran P`, ascending.
    pub eigenvalues: Vec<f64>,
    /// `‖[H,Ω]Ω‖`.
    pub residual: f64,
    /// `P₀HΩ`.
    pub h_eff: CMat,
}

fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for k in start..n {
            cur.push(k);
            go(k + 1, n, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, m, &mut Vec::new(), &mut out);
    out
}

/// Bloch wave operator of a constant `H` for the spectral subspace closest to
/// `P₀`; among equidistant subspaces the highest-energy one is taken.
pub fn bloch_stationary(h: &CMat, p0: &Projector) -> Result<BlochSolution> {
    let n = h.nrows();
    let m = p0.rank();
    let (vals, vecs) = eigh(h);
    let mut best: Option<(f64, Vec<usize>, Projector)> = None;
    for sel in combinations(n, m) {
        let z = CMat::from_fn(n, m, |r, a| vecs[(r, sel[a])]);
        let p = Projector::from_frame(&z)?;
        let d = fs_distance(&p, p0);
        // ties go to the later (higher-energy) selection
        if d < std::f64::consts::FRAC_PI_2 && best.as_ref().is_none_or(|b| d <= b.0 + 1e-12) {
            best = Some((d, sel, p));
        }
    }
    let (_, sel, p) = best.ok_or(Error::NoCompatibleSubspace)?;
    let omega = elementary_wave_operator(&p, p0, 0.0).map_err(|_| Error::NoCompatibleSubspace)?;
    let residual = frob(&(commutator(h, &omega) * &omega));
    let h_eff = p0.matrix() * h * &omega;
    Ok(BlochSolution { omega, projector: p, eigenvalues: sel.iter().map(|&k| vals[k]).collect(), residual, h_eff })
}

impl BlochSolution {
    /// Pairs `(λ, Ωψ₀)` from the eigenvectors `ψ₀` of `H^eff` inside `Ran P₀`.
    pub fn true_eigenvectors(&self, p0: &Projector) -> Result<Vec<(C64, CVec)>> {
        let b = p0.frame();
        let (vals, v) = eig_general(&(b.adjoint() * &self.h_eff * b), DEGENERACY_TOL)?;
        Ok(vals.into_iter().enumerate().map(|(k, l)| (l, &self.omega * (b * v.column(k)))).collect())
    }
}

#[derive(Debug, Clone)]
pub struct PhaseGenerators {
    pub e_eff: Vec<CMat>,
    pub a: Vec<CMat>,
    pub eta: Vec<CMat>,
    /// Right eigenvectors of `H^eff` as columns, unit norm, smoothly tracked.
    pub z0: Vec<CMat>,
}

/// `E^eff`, `A = (Z₀†Z₀)⁻¹Z₀†∂ₜZ₀` and `η = (Z₀†Z₀)⁻¹Z₀†Ω⁻¹Ω̇Z₀` on the grid.
pub fn phase_generators(trace: &DynamicsTrace, exec: Exec) -> Result<PhaseGenerators> {
    let n_t = trace.times.len();
    let m = trace.m();
    let eig = par::try_map_indexed(exec, n_t, |k| -> Result<(Vec<C64>, CMat)> {
        let b = &trace.frame0[k];
        let weak_inv = trace.p0[k].matrix() * trace.p[k].matrix();
        let heff = b.adjoint() * weak_inv * &trace.h[k] * &trace.omega[k] * b;
        eig_general(&heff, DEGENERACY_TOL).map_err(|e| match e {
            Error::EffectiveDegeneracy { gap, .. } => Error::EffectiveDegeneracy { t: trace.times[k], gap },
            other => other,
        })
    })?;
    let mut vals: Vec<Vec<C64>> = Vec::with_capacity(n_t);
    let mut coeffs: Vec<CMat> = Vec::with_capacity(n_t);
    for (k, (lam, v)) in eig.into_iter().enumerate() {
        let (lam, v) = if k == 0 {
            // order by real part, phase the largest entry real positive
            let mut idx: Vec<usize> = (0..m).collect();
            idx.sort_by(|&a, &b| lam[a].re.partial_cmp(&lam[b].re).unwrap());
            let mut w = CMat::from_fn(m, m, |r, a| v[(r, idx[a])]);
            for a in 0..m {
                let (r, _) = (0..m).map(|r| (r, w[(r, a)].norm())).fold((0, 0.0), |b, x| if x.1 > b.1 { x } else { b });
                let ph = w[(r, a)] / w[(r, a)].norm();
                let col = w.column(a) * ph.conj();
                w.set_column(a, &col);
            }
            (idx.iter().map(|&i| lam[i]).collect::<Vec<_>>(), w)
        } else {
            let prev = &coeffs[k - 1];
            let ov = prev.adjoint() * &v;
            let mut used = vec![false; m];
            let mut w = zeros(m, m);
            let mut l = vec![C64::new(0.0, 0.0); m];
            for a in 0..m {
                let j = (0..m).filter(|&j| !used[j]).max_by(|&x, &y| ov[(a, x)].norm().partial_cmp(&ov[(a, y)].norm()).unwrap()).expect("free column");
                used[j] = true;
                let ph = ov[(a, j)] / ov[(a, j)].norm();
                w.set_column(a, &(v.column(j) * ph.conj()));
                l[a] = lam[j];
            }
            (l, w)
        };
        vals.push(lam);
        coeffs.push(v);
    }
    let z0: Vec<CMat> = coeffs.iter().zip(&trace.frame0).map(|(v, b)| b * v).collect();
    let dt = trace.dt();
    let dz = grid_derivative(&z0, dt);
    let domega = grid_derivative(&trace.omega, dt);
    let mut a = Vec::with_capacity(n_t);
    let mut eta = Vec::with_capacity(n_t);
    for k in 0..n_t {
        let li = left_inverse(&z0[k])?;
        a.push(&li * &dz[k]);
        eta.push(&li * trace.p0[k].matrix() * trace.p[k].matrix() * &domega[k] * &z0[k]);
    }
    let e_eff = vals.iter().map(|l| CMat::from_fn(m, m, |r, k| if r == k { l[r] } else { C64::new(0.0, 0.0) })).collect();
    Ok(PhaseGenerators { e_eff, a, eta, z0 })
}

/// `Y' = −X(t)Y`, `Y(0) = I`, RK4 on the sample grid with cubic midpoints.
pub fn time_ordered_exp(gens: &[CMat], dt: f64) -> Vec<CMat> {
    let n = gens.len();
    let m = gens[0].nrows();
    let mid = |k: usize| -> CMat {
        if n < 4 {
            (&gens[k] + &gens[k + 1]) * c(0.5)
        } else if k == 0 {
            (&gens[0] * c(5.0) + &gens[1] * c(15.0) - &gens[2] * c(5.0) + &gens[3]) * c(1.0 / 16.0)
        } else if k + 2 >= n {
            (&gens[n - 1] * c(5.0) + &gens[n - 2] * c(15.0) - &gens[n - 3] * c(5.0) + &gens[n - 4]) * c(1.0 / 16.0)
        } else {
            (-&gens[k - 1] + &gens[k] * c(9.0) + &gens[k + 1] * c(9.0) - &gens[k + 2]) * c(1.0 / 16.0)
        }
    };
    let mut y = eye(m);
    let mut out = Vec::with_capacity(n);
    out.push(y.clone());
    for k in 0..n - 1 {
        let xm = mid(k);
        let k1 = -(&gens[k] * &y);
        let k2 = -(&xm * (&y + &k1 * c(0.5 * dt)));
        let k3 = -(&xm * (&y + &k2 * c(0.5 * dt)));
        let k4 = -(&gens[k + 1] * (&y + &k3 * c(dt)));
        y += (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(dt / 6.0);
        out.push(y.clone());
    }
    out
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// `T exp(−i∫E^eff − ∫A − ∫η)` per sample.
    pub propagator: Vec<CMat>,
    pub psi: Vec<CVec>,
}

/// `ψ(t) = Σ_b [T exp(−i∫E^eff − ∫A − ∫η)]_{ba} Ω(t)φ_{0b}(t)` for `ψ(0) = φ_{0a}(0)`.
pub fn reconstruct(trace: &DynamicsTrace, gens: &PhaseGenerators, a: usize) -> Result<Reconstruction> {
    if a >= trace.m() {
        return Err(Error::InvalidInput(format!("label {a} outside band of size {}", trace.m())));
    }
    let x: Vec<CMat> = (0..trace.times.len()).map(|k| &gens.e_eff[k] * I + &gens.a[k] + &gens.eta[k]).collect();
    let propagator = time_ordered_exp(&x, trace.dt());
    let psi = propagator
        .iter()
        .enumerate()
        .map(|(k, y)| &trace.omega[k] * &gens.z0[k] * y.column(a))
        .collect();
    Ok(Reconstruction { propagator, psi })
}

/// `U(t)φ_{0a}(0)`.
pub fn direct_psi(trace: &DynamicsTrace, gens: &PhaseGenerators, a: usize) -> Vec<CVec> {
    let phi = gens.z0[0].column(a).into_owned();
    trace.u.iter().map(|u| u * &phi).collect()
}

pub fn reconstruction_errors(trace: &DynamicsTrace, gens: &PhaseGenerators, a: usize) -> Result<Vec<f64>> {
    let rec = reconstruct(trace, gens, a)?;
    Ok(rec.psi.iter().zip(direct_psi(trace, gens, a)).map(|(r, d)| (r - d).norm()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementPoint {
    pub steps: usize,
    pub dt: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionRefinement {
    pub points: Vec<RefinementPoint>,
    pub order: Option<f64>,
}

/// Final-time reconstruction error for each step count; runs run in parallel.
pub fn reconstruction_refinement(model: &HamiltonianModel, band: &[usize], duration: f64, steps: &[usize], a: usize, exec: Exec) -> Result<ReconstructionRefinement> {
    let points = par::try_map_indexed(exec, steps.len(), |i| -> Result<RefinementPoint> {
        let trace = simulate(model, band, duration, steps[i], DEFAULT_GAP_MIN)?;
        let gens = phase_generators(&trace, Exec::Sequential)?;
        let err = *reconstruction_errors(&trace, &gens, a)?.last().expect("non-empty grid");
        Ok(RefinementPoint { steps: steps[i], dt: trace.dt(), error: err })
    })?;
    let order = fitted_order(&points.iter().map(|p| (p.dt, p.error)).collect::<Vec<_>>());
    Ok(ReconstructionRefinement { points, order })
}

/// ODE residuals of both wave-operator variants at each step count.
pub fn ode_residual_refinement(model: &HamiltonianModel, band: &[usize], duration: f64, steps: &[usize], exec: Exec) -> Result<Vec<(usize, f64, f64)>> {
    par::try_map_indexed(exec, steps.len(), |i| {
        let trace = simulate(model, band, duration, steps[i], DEFAULT_GAP_MIN)?;
        Ok((steps[i], wave_operator_ode_residual(&trace), fixed_p0_ode_residual(&trace)?))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentificationReport {
    pub chart: Vec<usize>,
    /// `‖T e^{−∫A−∫η} − g(t)⁻¹·Hℓ·g(0)‖`, relative.
    pub residual: f64,
    /// The same with the conjugation written the other way, `g(t)·Hℓ·g(0)⁻¹`.
    pub reversed_conjugation_residual: f64,
    /// `‖T e^{−∫Ã−∫η̃} − Hℓ‖` in the chart frame.
    pub chart_frame_residual: f64,
}

/// Compares the dynamics-side phase with the horizontal lift of the
/// pseudosurface `t ↦ Ω(P(t), P₀(t))` in the chart of `P₀(0)`.
pub fn holonomy_identification(trace: &DynamicsTrace, gens: &PhaseGenerators) -> Result<IdentificationReport> {
    let (n, m) = (trace.n(), trace.m());
    let chart: Chart = best_chart(&trace.p0[0]);
    for (p, q) in trace.p.iter().zip(&trace.p0) {
        if !chart.contains(p) || !chart.contains(q) {
            return Err(Error::OutOfChart(chart.indices.clone()));
        }
    }
    let dt = trace.dt();
    let duration = trace.times[trace.steps()] - trace.times[0];
    let y: Vec<CMat> = trace.p.iter().map(|p| chart.coordinates(p)).collect::<Result<_>>()?;
    let x: Vec<CMat> = trace.p0.iter().map(|p| chart.coordinates(p)).collect::<Result<_>>()?;
    let to_u = |d: Vec<CMat>| d.into_iter().map(|v| v * c(duration)).collect::<Vec<_>>();
    let (vy, vx) = (to_u(grid_derivative(&y, dt)), to_u(grid_derivative(&x, dt)));
    let curve = PairCurve::new(ChartCurve::sampled(y, vy)?, ChartCurve::sampled(x, vx)?);
    let conn = StiefelConnection::new(n, m);
    let local = conn.local(&chart);
    let lift = lift_curve(&local, &curve, trace.steps(), false)?;
    let hl = local.cm().t(&lift.arrow.h) * &lift.arrow.g;

    let zi: Vec<CMat> = trace.p0.iter().map(|p| chart.coordinate_matrix(p)).collect::<Result<_>>()?;
    let dzi = grid_derivative(&zi, dt);
    let domega = grid_derivative(&trace.omega, dt);
    let mut tilde = Vec::with_capacity(zi.len());
    let mut g = Vec::with_capacity(zi.len());
    for k in 0..zi.len() {
        let li = left_inverse(&zi[k])?;
        let weak_inv = trace.p0[k].matrix() * trace.p[k].matrix();
        tilde.push(&li * &dzi[k] + &li * weak_inv * &domega[k] * &zi[k]);
        g.push(&li * &gens.z0[k]);
    }
    let y_tilde = time_ordered_exp(&tilde, dt).pop().expect("non-empty grid");
    let x: Vec<CMat> = gens.a.iter().zip(&gens.eta).map(|(a, e)| a + e).collect();
    let y = time_ordered_exp(&x, dt).pop().expect("non-empty grid");
    let (g0, g1) = (&g[0], &g[g.len() - 1]);
    let predicted = inverse(g1)? * &hl * g0;
    let reversed = g1 * &hl * inverse(g0)?;
    Ok(IdentificationReport {
        chart: chart.indices.clone(),
        residual: rel_dist(&y, &predicted),
        reversed_conjugation_residual: rel_dist(&y, &reversed),
        chart_frame_residual: rel_dist(&y_tilde, &hl),
    })
}

/// Per-sample diagnostics: `t, ‖U†U−1‖, fs(P,P₀), ‖Ω²−Ω‖, reconstruction error`.
pub fn trace_csv(trace: &DynamicsTrace, errors: Option<&[f64]>) -> String {
    let n = trace.n();
    let fs = trace.fs_distances();
    let idem = trace.idempotency_defects();
    let mut out = String::from("t,unitarity_defect,fs_distance,idempotency_defect,reconstruction_error\n");
    for k in 0..trace.times.len() {
        let unit = frob(&(trace.u[k].adjoint() * &trace.u[k] - eye(n)));
        let err = errors.map(|e| format!("{:.12e}", e[k])).unwrap_or_default();
        out.push_str(&format!("{:.12e},{:.6e},{:.12e},{:.6e},{}\n", trace.times[k], unit, fs[k], idem[k], err));
    }
    out
}
