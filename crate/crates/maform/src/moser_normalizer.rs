//! Normalization of a circular domain in ℂ² to the ball.
//!
//! The fiber metric `μ̃²` on the tautological bundle has curvature
//! `ω = ddᶜ log m²` in a chart; it is cohomologous to Fubini–Study `ω_o`, and
//! a Moser flow `ψ_t` with `ψ₁*ω = ω_o` exists. Lifting the flow horizontally
//! for the ball connection and correcting the fiber phase gives a map that
//! carries `μ̃_o` to `μ̃` and ball-horizontal planes to `μ`-horizontal ones.
//!
//! With `ω − ω_o = ddᶜf`, `f = log(m²/(1+|v|²))`, the Moser field is
//! `X_t = −∇f / w_t` where `w_t` is the chart density of
//! `ω_t = (1−t)ω_o + tω`.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain_model::{levi_hessian_fd, DomainError, GridMinkowski, MinkowskiField, MuKind};
use crate::field_kernel::{
    bicubic, dc, embed, exterior_d, gauss_legendre, j_standard, ChartAtlas, FormField, GridRecord, Lattice,
    OVERLAP_OUTER,
};

#[derive(Debug, Error, PartialEq)]
pub enum MoserError {
    #[error("normalization is implemented for n = 2, got n = {0}")]
    Dimension(usize),
    #[error("curvature integral {got} differs from {expected} by more than {tol:e}")]
    Cohomology { got: f64, expected: f64, tol: f64 },
    #[error("curvature density {value:e} is not positive at chart {chart}, v = {v}")]
    NonPositive { chart: usize, v: C64, value: f64 },
    #[error("interpolated form degenerates at t = {t}, chart {chart}, v = {v}")]
    Degenerate { t: f64, chart: usize, v: C64 },
    #[error("Moser endpoint residual {residual:e} above {tol:e}")]
    Endpoint { residual: f64, tol: f64 },
    #[error("inverse map did not converge at w = {w:?}")]
    InverseDiverged { w: Vec<C64> },
    #[error("this Minkowski kind has no potential: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Fubini–Study density `4/(1+|v|²)²` in a chart.
pub fn fs_density(v: C64) -> f64 {
    4.0 / (1.0 + v.norm_sqr()).powi(2)
}

fn fs_density_grad(v: C64) -> Vector2<f64> {
    let s = 1.0 + v.norm_sqr();
    Vector2::new(v.re, v.im) * (-16.0 / (s * s * s))
}

/// Derivatives of the Moser potential `f` and of the curvature density `w`
/// at a chart point.
#[derive(Clone, Copy, Debug)]
pub struct LocalField {
    pub grad_f: Vector2<f64>,
    pub hess_f: Matrix2<f64>,
    pub w: f64,
    pub grad_w: Vector2<f64>,
}

/// Moser potential from a gridded `m²`: Poisson solve on both chart squares
/// coupled by alternating Schwarz sweeps.
#[derive(Clone, Debug)]
pub struct GriddedPotential {
    pub n_v: usize,
    pub half_width: f64,
    pub u: [Vec<f64>; 2],
    grad: [[Vec<f64>; 2]; 2],
    pub w: [Vec<f64>; 2],
    pub sweeps: usize,
}

fn grid_point(n: usize, hw: f64, i: usize, j: usize) -> C64 {
    let h = 2.0 * hw / (n - 1) as f64;
    C64::new(-hw + i as f64 * h, -hw + j as f64 * h)
}

fn laplacian(u: &[f64], n: usize, h: f64, i: usize, j: usize) -> f64 {
    let k = i * n + j;
    (u[k - n] + u[k + n] + u[k - 1] + u[k + 1] - 4.0 * u[k]) / (h * h)
}

/// Solves `Δ_h u = f` on the interior of an `n × n` grid, boundary values of
/// `u` held fixed. Returns the number of CG iterations.
pub fn cg_dirichlet(n: usize, h: f64, f: &[f64], u: &mut [f64], tol: f64) -> usize {
    let interior = |k: usize| {
        let (i, j) = (k / n, k % n);
        i > 0 && j > 0 && i < n - 1 && j < n - 1
    };
    let apply = |p: &[f64], out: &mut [f64]| {
        for k in 0..n * n {
            out[k] = if interior(k) {
                let (i, j) = (k / n, k % n);
                let nb = |ii: usize, jj: usize| if interior(ii * n + jj) { p[ii * n + jj] } else { 0.0 };
                (4.0 * p[k] - nb(i - 1, j) - nb(i + 1, j) - nb(i, j - 1) - nb(i, j + 1)) / (h * h)
            } else {
                0.0
            };
        }
    };
    let mut r = vec![0.0; n * n];
    for k in 0..n * n {
        if interior(k) {
            r[k] = -f[k] + laplacian(u, n, h, k / n, k % n);
        }
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n * n];
    let mut rr: f64 = r.iter().map(|x| x * x).sum();
    let scale = f.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let mut it = 0;
    while rr.sqrt() > tol * scale && it < 10 * n * n {
        apply(&p, &mut ap);
        let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for k in 0..n * n {
            u[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new: f64 = r.iter().map(|x| x * x).sum();
        let beta = rr_new / rr;
        for k in 0..n * n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
        it += 1;
    }
    it
}

fn central_gradient(u: &[f64], n: usize, h: f64) -> [Vec<f64>; 2] {
    let mut gx = vec![0.0; n * n];
    let mut gy = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            gx[k] = if i == 0 {
                (u[k + n] - u[k]) / h
            } else if i == n - 1 {
                (u[k] - u[k - n]) / h
            } else {
                (u[k + n] - u[k - n]) / (2.0 * h)
            };
            gy[k] = if j == 0 {
                (u[k + 1] - u[k]) / h
            } else if j == n - 1 {
                (u[k] - u[k - 1]) / h
            } else {
                (u[k + 1] - u[k - 1]) / (2.0 * h)
            };
        }
    }
    [gx, gy]
}

impl GriddedPotential {
    pub fn from_grid(g: &GridMinkowski, tol: f64) -> Self {
        let (n, hw) = (g.n_v, g.half_width);
        let h = g.spacing();
        let lm: Vec<Vec<f64>> = g.m2.iter().map(|c| c.iter().map(|x| x.ln()).collect()).collect();
        let mut rhs = [vec![0.0; n * n], vec![0.0; n * n]];
        for c in 0..2 {
            for i in 1..n - 1 {
                for j in 1..n - 1 {
                    rhs[c][i * n + j] = laplacian(&lm[c], n, h, i, j) - fs_density(grid_point(n, hw, i, j));
                }
            }
        }
        let mut u = [vec![0.0; n * n], vec![0.0; n * n]];
        let mut sweeps = 0;
        for sweep in 0..200 {
            let mut change: f64 = 0.0;
            for c in 0..2 {
                let old = u[c].clone();
                let other = u[1 - c].clone();
                for i in 0..n {
                    for j in 0..n {
                        if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                            let v = grid_point(n, hw, i, j);
                            u[c][i * n + j] = bicubic(&other, n, hw, v.inv());
                        }
                    }
                }
                cg_dirichlet(n, h, &rhs[c], &mut u[c], 1e-13);
                // The discrete problems fix the constant only up to O(h²), so
                // the sweeps may drift by a constant; measure the rest.
                let d: Vec<f64> = u[c].iter().zip(&old).map(|(a, b)| a - b).collect();
                let spread = d.iter().cloned().fold(f64::MIN, f64::max) - d.iter().cloned().fold(f64::MAX, f64::min);
                change = change.max(spread);
            }
            sweeps = sweep + 1;
            if change < tol {
                break;
            }
        }
        // Zero mean against ω_o, using each chart on its unit disc.
        let (mut num, mut den) = (0.0, 0.0);
        for uc in &u {
            for i in 0..n {
                for j in 0..n {
                    let v = grid_point(n, hw, i, j);
                    if v.norm() <= 1.0 {
                        let wt = fs_density(v) * if (v.norm() - 1.0).abs() < 1e-12 { 0.5 } else { 1.0 };
                        num += wt * uc[i * n + j];
                        den += wt;
                    }
                }
            }
        }
        let mean = num / den;
        for x in u.iter_mut().flatten() {
            *x -= mean;
        }
        let mut w = [vec![0.0; n * n], vec![0.0; n * n]];
        for c in 0..2 {
            for i in 0..n {
                for j in 0..n {
                    let (ii, jj) = (i.clamp(1, n - 2), j.clamp(1, n - 2));
                    w[c][i * n + j] = fs_density(grid_point(n, hw, i, j)) + laplacian(&u[c], n, h, ii, jj);
                }
            }
        }
        let grad = [central_gradient(&u[0], n, h), central_gradient(&u[1], n, h)];
        GriddedPotential { n_v: n, half_width: hw, u, grad, w, sweeps }
    }

    pub fn potential(&self, chart: usize, v: C64) -> f64 {
        bicubic(&self.u[chart], self.n_v, self.half_width, v)
    }

    fn local(&self, chart: usize, v: C64) -> LocalField {
        let (n, hw) = (self.n_v, self.half_width);
        let g = |v: C64| {
            Vector2::new(bicubic(&self.grad[chart][0], n, hw, v), bicubic(&self.grad[chart][1], n, hw, v))
        };
        let w = |v: C64| bicubic(&self.w[chart], n, hw, v);
        let d = 1e-5;
        let (ex, ey) = (C64::new(d, 0.0), C64::new(0.0, d));
        let hx = (g(v + ex) - g(v - ex)) / (2.0 * d);
        let hy = (g(v + ey) - g(v - ey)) / (2.0 * d);
        let hess = Matrix2::from_columns(&[hx, hy]);
        LocalField {
            grad_f: g(v),
            hess_f: (hess + hess.transpose()) * 0.5,
            w: w(v),
            grad_w: Vector2::new((w(v + ex) - w(v - ex)) / (2.0 * d), (w(v + ey) - w(v - ey)) / (2.0 * d)),
        }
    }
}

/// Source of the Moser potential.
#[derive(Clone, Debug)]
pub enum Potential {
    Analytic(MinkowskiField),
    Gridded(GriddedPotential),
}

impl Potential {
    /// Closed-form fields use jets; gridded `m²` goes through the Poisson
    /// solve.
    pub fn new(mu: &MinkowskiField) -> Result<Self, MoserError> {
        if mu.n != 2 {
            return Err(MoserError::Dimension(mu.n));
        }
        if mu.is_analytic() {
            return Ok(Potential::Analytic(mu.clone()));
        }
        match &mu.kind {
            MuKind::Grid(g) => Ok(Potential::Gridded(GriddedPotential::from_grid(g, 1e-11))),
            _ => Err(MoserError::Unsupported(mu.tag())),
        }
    }

    pub fn local(&self, chart: usize, v: C64) -> LocalField {
        match self {
            Potential::Analytic(mu) => {
                let lm = mu.m2_jet::<2>(chart, &[v.re, v.im]).expect("analytic field").ln();
                let s = 1.0 + v.norm_sqr();
                let x = [v.re, v.im];
                let grad_f = Vector2::new(lm.g[0] - 2.0 * x[0] / s, lm.g[1] - 2.0 * x[1] / s);
                let hess_f = Matrix2::from_fn(|i, j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    lm.h[i][j] - (2.0 * delta / s - 4.0 * x[i] * x[j] / (s * s))
                });
                LocalField {
                    grad_f,
                    hess_f,
                    w: lm.h[0][0] + lm.h[1][1],
                    grad_w: Vector2::new(lm.t[0][0][0] + lm.t[0][1][1], lm.t[1][0][0] + lm.t[1][1][1]),
                }
            }
            Potential::Gridded(g) => g.local(chart, v),
        }
    }

    /// Chart density of the curvature form `ω^(μ)`.
    pub fn density(&self, chart: usize, v: C64) -> f64 {
        self.local(chart, v).w
    }
}

/// Curvature of the fiber metric together with its consistency checks.
#[derive(Clone, Debug)]
pub struct ConnectionData {
    pub potential: Potential,
    /// `∫ ω^(μ)` over ℂP¹.
    pub integral: f64,
    /// `∫ ω_o = 4π`.
    pub reference: f64,
    pub min_density: f64,
    /// `max |w − w_o|` over the sample nodes.
    pub max_reference_deviation: f64,
    /// Finite-difference `d(ddᶜ log μ²)` on ℂ².
    pub closedness: f64,
    /// Agreement of the chart density with `ddᶜ log μ²` on lifted vectors.
    pub lift_consistency: f64,
}

/// Computes `ω^(μ)` on the atlas and checks positivity and the cohomology
/// class.
pub fn curvature(mu: &MinkowskiField, atlas: &ChartAtlas, tol: f64) -> Result<ConnectionData, MoserError> {
    let potential = Potential::new(mu)?;
    let integral = atlas.integrate_top(&|c, v| potential.density(c, v[0]));
    let reference = 4.0 * std::f64::consts::PI;
    let mut min_density = f64::INFINITY;
    let mut max_dev: f64 = 0.0;
    for c in 0..2 {
        for k in 0..atlas.base_nodes() {
            let v = atlas.base_point(k)[0];
            if v.norm() > OVERLAP_OUTER {
                continue;
            }
            let w = potential.density(c, v);
            if !(w > 0.0) {
                return Err(MoserError::NonPositive { chart: c, v, value: w });
            }
            min_density = min_density.min(w);
            max_dev = max_dev.max((w - fs_density(v)).abs());
        }
    }
    if (integral - reference).abs() > tol {
        return Err(MoserError::Cohomology { got: integral, expected: reference, tol });
    }
    let probes = [C64::new(0.3, -0.2), C64::new(-0.7, 0.5), C64::new(0.0, 0.9)];
    let mut closedness: f64 = 0.0;
    let mut lift: f64 = 0.0;
    for &v in &probes {
        let z = embed(0, &[v]);
        let center = [z[0].re, z[0].im, z[1].re, z[1].im];
        let lat = Lattice::centered(&center, 0.02, 2);
        let f = FormField::scalar(&lat, |p| mu.mu2(&[C64::new(p[0], p[1]), C64::new(p[2], p[3])]).ln());
        let ddc = exterior_d(&dc(&f, &|_| j_standard(4)).unwrap()).unwrap();
        closedness = closedness.max(exterior_d(&ddc).unwrap().interior_max_abs(2));
        let hess = levi_hessian_fd(|p| mu.mu2(p).ln(), &z);
        let j = j_standard(4);
        let omega = -&hess * &j + (&hess * &j).transpose();
        lift = lift.max((omega[(2, 3)] - potential.density(0, v)).abs());
    }
    Ok(ConnectionData {
        potential,
        integral,
        reference,
        min_density,
        max_reference_deviation: max_dev,
        closedness,
        lift_consistency: lift,
    })
}

/// A point of ℂP¹ in chart coordinates with the Jacobian of the flow that
/// brought it there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowPoint {
    pub chart: usize,
    pub v: C64,
    pub jac: Matrix2<f64>,
}

fn complex_matrix(a: C64) -> Matrix2<f64> {
    Matrix2::new(a.re, -a.im, a.im, a.re)
}

/// The Moser isotopy from `ω_o` to `ω^(μ)`.
#[derive(Clone, Debug)]
pub struct MoserFlow {
    pub potential: Potential,
    pub steps: usize,
}

impl MoserFlow {
    pub fn new(potential: Potential, steps: usize) -> Self {
        MoserFlow { potential, steps }
    }

    /// `X_t` and its Jacobian at a chart point.
    pub fn velocity(&self, chart: usize, v: C64, t: f64) -> Result<(Vector2<f64>, Matrix2<f64>), MoserError> {
        let lf = self.potential.local(chart, v);
        let wt = (1.0 - t) * fs_density(v) + t * lf.w;
        if !(wt > 0.0) {
            return Err(MoserError::Degenerate { t, chart, v });
        }
        let gwt = fs_density_grad(v) * (1.0 - t) + lf.grad_w * t;
        let x = -lf.grad_f / wt;
        let dx = -lf.hess_f / wt + lf.grad_f * gwt.transpose() / (wt * wt);
        Ok((x, dx))
    }

    /// `X_t` as a complex number.
    pub fn vector(&self, chart: usize, v: C64, t: f64) -> Result<C64, MoserError> {
        let (x, _) = self.velocity(chart, v, t)?;
        Ok(C64::new(x[0], x[1]))
    }

    /// Integrates from time `t0` to `t1` with the variational equation,
    /// switching charts when the trajectory leaves `|v| ≤ 1.25`.
    pub fn flow(&self, chart: usize, v: C64, t0: f64, t1: f64) -> Result<FlowPoint, MoserError> {
        let h = (t1 - t0) / self.steps as f64;
        let mut p = FlowPoint { chart, v, jac: Matrix2::identity() };
        let rhs = |c: usize, v: C64, y: &Matrix2<f64>, t: f64| -> Result<(C64, Matrix2<f64>), MoserError> {
            let (x, dx) = self.velocity(c, v, t)?;
            Ok((C64::new(x[0], x[1]), dx * y))
        };
        for s in 0..self.steps {
            let t = t0 + s as f64 * h;
            let (k1, l1) = rhs(p.chart, p.v, &p.jac, t)?;
            let (k2, l2) = rhs(p.chart, p.v + k1 * (h / 2.0), &(p.jac + l1 * (h / 2.0)), t + h / 2.0)?;
            let (k3, l3) = rhs(p.chart, p.v + k2 * (h / 2.0), &(p.jac + l2 * (h / 2.0)), t + h / 2.0)?;
            let (k4, l4) = rhs(p.chart, p.v + k3 * h, &(p.jac + l3 * h), t + h)?;
            p.v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            p.jac += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
            if p.v.norm() > OVERLAP_OUTER {
                p.jac = complex_matrix(-(p.v * p.v).inv()) * p.jac;
                p.v = p.v.inv();
                p.chart = 1 - p.chart;
            }
        }
        Ok(p)
    }

    /// `max |w(ψ₁(p))·det Dψ₁(p) − w_o(p)|` over the given nodes.
    pub fn endpoint_residual(
        &self,
        nodes: &[(usize, C64)],
        density: &dyn Fn(usize, C64) -> f64,
    ) -> Result<f64, MoserError> {
        let mut worst: f64 = 0.0;
        for &(c, v) in nodes {
            let p = self.flow(c, v, 0.0, 1.0)?;
            worst = worst.max((density(p.chart, p.v) * p.jac.determinant() - fs_density(v)).abs());
        }
        Ok(worst)
    }

    /// Velocity of the ball-horizontal lift of `X_t` at `z ∈ ℂ²∖{0}`.
    pub fn lift_velocity(&self, z: &[C64], t: f64) -> Result<[C64; 2], MoserError> {
        let r2 = z[0].norm_sqr() + z[1].norm_sqr();
        let c = if z[0].norm() >= z[1].norm() {
            self.vector(0, z[1] / z[0], t)? * z[0] * z[0] / r2
        } else {
            -self.vector(1, z[0] / z[1], t)? * z[1] * z[1] / r2
        };
        Ok([-c * z[1].conj(), c * z[0].conj()])
    }

    /// Endpoint `ψ̂(z)` of the lifted flow. The flow runs on the unit sphere
    /// and is extended by `ℂ*`-equivariance; returns the point and the
    /// largest radial drift removed by projection.
    pub fn lift(&self, z: &[C64]) -> Result<(Vec<C64>, f64), MoserError> {
        let r = (z[0].norm_sqr() + z[1].norm_sqr()).sqrt();
        let mut u = [z[0] / r, z[1] / r];
        let h = 1.0 / self.steps as f64;
        let mut drift: f64 = 0.0;
        let add = |a: &[C64; 2], b: &[C64; 2], s: f64| [a[0] + b[0] * s, a[1] + b[1] * s];
        for s in 0..self.steps {
            let t = s as f64 * h;
            let k1 = self.lift_velocity(&u, t)?;
            let k2 = self.lift_velocity(&add(&u, &k1, h / 2.0), t + h / 2.0)?;
            let k3 = self.lift_velocity(&add(&u, &k2, h / 2.0), t + h / 2.0)?;
            let k4 = self.lift_velocity(&add(&u, &k3, h), t + h)?;
            for i in 0..2 {
                u[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0);
            }
            let norm = (u[0].norm_sqr() + u[1].norm_sqr()).sqrt();
            drift = drift.max((norm - 1.0).abs());
            u = [u[0] / norm, u[1] / norm];
        }
        Ok((vec![u[0] * r, u[1] * r], drift))
    }
}

/// Chart of the largest coordinate and the affine coordinate there.
pub fn chart_of(z: &[C64]) -> (usize, C64) {
    if z[0].norm() >= z[1].norm() {
        (0, z[1] / z[0])
    } else {
        (1, z[0] / z[1])
    }
}

/// Unit representative of a chart point.
pub fn unit_rep(chart: usize, v: C64) -> Vec<C64> {
    let e = embed(chart, &[v]);
    let r = (e[0].norm_sqr() + e[1].norm_sqr()).sqrt();
    vec![e[0] / r, e[1] / r]
}

/// Ball-horizontal lift of the chart vector `dir` at the unit
/// representative of `v`.
pub fn horizontal_vector(chart: usize, v: C64, dir: C64) -> (Vec<C64>, Vec<C64>) {
    let z = unit_rep(chart, v);
    let c = if chart == 0 { dir * z[0] * z[0] } else { -dir * z[1] * z[1] };
    let zd = vec![-c * z[1].conj(), c * z[0].conj()];
    (z, zd)
}

const MAP_FD_STEP: f64 = 1e-4;

/// The assembled map `φ(z) = e^{iλ([z])}·|z|·ψ̂(z)/μ(ψ̂(z))` from the ball
/// blow-up to the domain blow-up, with its inverse `Φ`.
#[derive(Clone, Debug)]
pub struct NormalizingMap {
    pub mu: MinkowskiField,
    pub flow: MoserFlow,
    /// Gauss–Legendre nodes per path segment for `λ`.
    pub quad: usize,
    /// Whether the phase `λ` is applied.
    pub corrected: bool,
}

/// Residuals of the normalization contract.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractResiduals {
    pub samples: usize,
    /// `|φ(ζz) − ζφ(z)|`.
    pub fiber_holomorphic: f64,
    /// `|μ(φ(z)) − |z||`.
    pub level: f64,
    /// Phase part of the connection mismatch after correction.
    pub mismatch: f64,
    /// `dμ̃` of pushed-forward ball-horizontal vectors.
    pub tangential: f64,
    /// `| |ψ̂(z)| − |z| |`.
    pub lift_sphere: f64,
    /// Distance between `[ψ̂(z)]` and `ψ₁([z])`.
    pub lift_projection: f64,
    /// `|Φ(φ(z)) − z|`.
    pub round_trip: f64,
}

fn dlog_mu(mu: &MinkowskiField, p: &[C64], u: &[C64]) -> f64 {
    let nu = (u.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt();
    let np = (p.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt();
    if nu == 0.0 {
        return 0.0;
    }
    let s = 1e-5 * np / nu;
    let shift = |sign: f64| -> Vec<C64> { p.iter().zip(u).map(|(a, b)| a + b * (sign * s)).collect() };
    (mu.mu(&shift(1.0)).ln() - mu.mu(&shift(-1.0)).ln()) / (2.0 * s)
}

impl NormalizingMap {
    pub fn new(mu: &MinkowskiField, steps: usize) -> Result<Self, MoserError> {
        Ok(NormalizingMap { mu: mu.clone(), flow: MoserFlow::new(Potential::new(mu)?, steps), quad: 8, corrected: true })
    }

    pub fn psi(&self, chart: usize, v: C64) -> Result<FlowPoint, MoserError> {
        self.flow.flow(chart, v, 0.0, 1.0)
    }

    pub fn psi_hat(&self, z: &[C64]) -> Result<Vec<C64>, MoserError> {
        Ok(self.flow.lift(z)?.0)
    }

    /// The map with `λ = 0`.
    pub fn raw(&self, z: &[C64]) -> Result<Vec<C64>, MoserError> {
        let r = (z[0].norm_sqr() + z[1].norm_sqr()).sqrt();
        let s = self.psi_hat(z)?;
        let m = self.mu.mu(&s);
        Ok(s.iter().map(|c| c * (r / m)).collect())
    }

    /// Connection mismatch `ν(X) = dlog μ̃(J·map_*X̂)` for the ball-horizontal
    /// lift `X̂` of the chart vector `dir`, and the tangential part
    /// `dlog μ̃(map_*X̂)`.
    pub fn mismatch_of(
        &self,
        map: &dyn Fn(&[C64]) -> Result<Vec<C64>, MoserError>,
        chart: usize,
        v: C64,
        dir: C64,
    ) -> Result<(f64, f64), MoserError> {
        let (z, zd) = horizontal_vector(chart, v, dir);
        let h = MAP_FD_STEP;
        let zp: Vec<C64> = z.iter().zip(&zd).map(|(a, b)| a + b * h).collect();
        let zm: Vec<C64> = z.iter().zip(&zd).map(|(a, b)| a - b * h).collect();
        let p = map(&z)?;
        let (fp, fm) = (map(&zp)?, map(&zm)?);
        let u: Vec<C64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let iu: Vec<C64> = u.iter().map(|c| c * C64::i()).collect();
        Ok((dlog_mu(&self.mu, &p, &iu), dlog_mu(&self.mu, &p, &u)))
    }

    /// `ν` of the uncorrected map.
    pub fn nu(&self, chart: usize, v: C64, dir: C64) -> Result<f64, MoserError> {
        Ok(self.mismatch_of(&|z| self.raw(z), chart, v, dir)?.0)
    }

    /// `∫ ν` along straight chart segments `(chart, from, to)`.
    pub fn integrate_nu(&self, segments: &[(usize, C64, C64)]) -> Result<f64, MoserError> {
        let (x, w) = gauss_legendre(self.quad);
        let mut total = 0.0;
        for &(c, a, b) in segments {
            for (xi, wi) in x.iter().zip(&w) {
                let p = a + (b - a) * (0.5 * (xi + 1.0));
                total += 0.5 * wi * self.nu(c, p, b - a)?;
            }
        }
        Ok(total)
    }

    /// Default path from the chart-0 origin, where `λ = 0`.
    pub fn base_path(chart: usize, v: C64) -> Vec<(usize, C64, C64)> {
        let zero = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        if chart == 0 && v.norm() <= OVERLAP_OUTER {
            vec![(0, zero, v)]
        } else {
            let w = if chart == 1 { v } else { v.inv() };
            vec![(0, zero, one), (1, one, w)]
        }
    }

    /// Phase `λ([v])`.
    pub fn lambda(&self, chart: usize, v: C64) -> Result<f64, MoserError> {
        self.integrate_nu(&Self::base_path(chart, v))
    }

    /// `φ`.
    pub fn forward(&self, z: &[C64]) -> Result<Vec<C64>, MoserError> {
        let p = self.raw(z)?;
        if !self.corrected {
            return Ok(p);
        }
        let (c, v) = chart_of(z);
        let rot = C64::from_polar(1.0, self.lambda(c, v)?);
        Ok(p.iter().map(|x| x * rot).collect())
    }

    /// `Φ = φ⁻¹`: backward Moser flow for the base point, Newton polish on
    /// the forward flow, then division on the fiber.
    pub fn inverse(&self, w: &[C64]) -> Result<Vec<C64>, MoserError> {
        let (c1, v1) = chart_of(w);
        let back = self.flow.flow(c1, v1, 1.0, 0.0)?;
        let (mut c, mut v) = (back.chart, back.v);
        let mut converged = false;
        for _ in 0..30 {
            let f = self.psi(c, v)?;
            let target = if f.chart == c1 { v1 } else { v1.inv() };
            let r = target - f.v;
            if r.norm() < 1e-14 * (1.0 + target.norm()) {
                converged = true;
                break;
            }
            let d = f.jac.try_inverse().ok_or_else(|| MoserError::InverseDiverged { w: w.to_vec() })?
                * Vector2::new(r.re, r.im);
            v += C64::new(d[0], d[1]);
            if v.norm() > OVERLAP_OUTER {
                v = v.inv();
                c = 1 - c;
            }
        }
        if !converged {
            return Err(MoserError::InverseDiverged { w: w.to_vec() });
        }
        let z0 = unit_rep(c, v);
        let q = self.forward(&z0)?;
        let k = if q[0].norm() >= q[1].norm() { 0 } else { 1 };
        let zeta = w[k] / q[k];
        Ok(z0.iter().map(|x| x * zeta).collect())
    }

    /// `dν` by circulation around a chart square of side `side`, divided by
    /// its area.
    pub fn d_nu(&self, chart: usize, v: C64, side: f64) -> Result<f64, MoserError> {
        let h = side / 2.0;
        let corners = [v + C64::new(-h, -h), v + C64::new(h, -h), v + C64::new(h, h), v + C64::new(-h, h)];
        let segs: Vec<(usize, C64, C64)> = (0..4).map(|k| (chart, corners[k], corners[(k + 1) % 4])).collect();
        Ok(self.integrate_nu(&segs)? / (side * side))
    }

    /// Samples the normalization contract at random points of the unit ball.
    pub fn check_contract(&self, samples: usize, mismatch_samples: usize, seed: u64) -> Result<ContractResiduals, MoserError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut res = ContractResiduals {
            samples,
            fiber_holomorphic: 0.0,
            level: 0.0,
            mismatch: 0.0,
            tangential: 0.0,
            lift_sphere: 0.0,
            lift_projection: 0.0,
            round_trip: 0.0,
        };
        for s in 0..samples {
            let z = random_point(&mut rng);
            let r = (z[0].norm_sqr() + z[1].norm_sqr()).sqrt();
            let fz = self.forward(&z)?;
            res.level = res.level.max((self.mu.mu(&fz) - r).abs());
            let (lifted, _) = self.flow.lift(&z)?;
            let lr = (lifted[0].norm_sqr() + lifted[1].norm_sqr()).sqrt();
            res.lift_sphere = res.lift_sphere.max((lr - r).abs());
            let (c, v) = chart_of(&z);
            let p = self.psi(c, v)?;
            let (lc, lv) = chart_of(&lifted);
            let proj = if lc == p.chart { lv } else { lv.inv() };
            res.lift_projection = res.lift_projection.max((proj - p.v).norm());
            let back = self.inverse(&fz)?;
            let err = back.iter().zip(&z).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            res.round_trip = res.round_trip.max(err);
            if s < mismatch_samples {
                let zeta = C64::from_polar(rng.gen_range(0.3..1.0), rng.gen_range(0.0..std::f64::consts::TAU));
                let scaled: Vec<C64> = z.iter().map(|x| x * zeta).collect();
                let fs = self.forward(&scaled)?;
                let err = fs.iter().zip(&fz).map(|(a, b)| (a - b * zeta).norm()).fold(0.0, f64::max);
                res.fiber_holomorphic = res.fiber_holomorphic.max(err);
                let dir = C64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
                let (m, t) = self.mismatch_of(&|z| self.forward(z), c, v, dir)?;
                res.mismatch = res.mismatch.max(m.abs());
                res.tangential = res.tangential.max(t.abs());
            }
        }
        Ok(res)
    }

    /// Dump records: `ψ` on each chart grid (pairs `(chart', ψ(v))`), then
    /// `λ` on each chart grid for `|v| ≤ 1` (NaN elsewhere).
    pub fn records(&self, atlas: &ChartAtlas) -> Result<Vec<GridRecord>, MoserError> {
        let n = atlas.n_v;
        let mut out = Vec::new();
        for c in 0..2 {
            let mut data = Vec::with_capacity(2 * n * n);
            for k in 0..atlas.base_nodes() {
                let p = self.psi(c, atlas.base_point(k)[0])?;
                data.push(C64::new(p.chart as f64, 0.0));
                data.push(p.v);
            }
            out.push(GridRecord { chart: c, shape: vec![n, n, 2], data });
        }
        for c in 0..2 {
            let mut data = Vec::with_capacity(n * n);
            for k in 0..atlas.base_nodes() {
                let v = atlas.base_point(k)[0];
                let l = if v.norm() <= 1.0 { self.lambda(c, v)? } else { f64::NAN };
                data.push(C64::new(l, 0.0));
            }
            out.push(GridRecord { chart: c, shape: vec![n, n], data });
        }
        Ok(out)
    }
}

/// A random point of the ball shell `0.2 ≤ |z| ≤ 0.9`.
pub fn random_point(rng: &mut ChaCha8Rng) -> Vec<C64> {
    loop {
        let z: Vec<C64> = (0..2).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let r = (z[0].norm_sqr() + z[1].norm_sqr()).sqrt();
        if r > 1e-3 && r <= 1.0 {
            let target = rng.gen_range(0.2..0.9);
            return z.iter().map(|c| c * (target / r)).collect();
        }
    }
}
