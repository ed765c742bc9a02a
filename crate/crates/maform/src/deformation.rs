//! Deformation tensors of Lempert-type structures on the blown-up ball.
//!
//! A structure `J` that is standard along the radial discs and preserves the
//! horizontal distribution `ℋ` is encoded by `φ ∈ H^{0,1*} ⊗ H^{1,0}`, whose
//! graph `{w + φ(w)}` is the `J`-antiholomorphic part of `ℋ`. Components are
//! taken in the frame `e_a = ∂/∂vᵃ − v̄ᵃζ/(1+|v|²)·∂/∂ζ` of blow-up
//! coordinates `(v, ζ)`. The frame commutes with `ζ∂/∂ζ`, so the fiber
//! Fourier modes of `φ` are the coefficients of a power series in `ζ`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::field_kernel::{embed, j_standard, GridRecord};
use crate::moser_normalizer::{chart_of, NormalizingMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeformationError {
    #[error("graph degenerates at chart {chart}, v = {v:?}, zeta = {zeta}: operator norm {norm:.6}")]
    Degenerate { chart: usize, v: Vec<C64>, zeta: C64, norm: f64 },
    #[error("phi is not a strict contraction at chart {chart}, v = {v:?}, zeta = {zeta}: operator norm {norm:.6}")]
    NotContracting { chart: usize, v: Vec<C64>, zeta: C64, norm: f64 },
    #[error("N_theta = {n_theta} cannot resolve k_max = {k_max}")]
    Resolution { n_theta: usize, k_max: usize },
    #[error("negative-frequency energy {energy:.3e} above {tol:.1e}")]
    NegativeFrequency { energy: f64, tol: f64 },
    #[error("map evaluation failed: {0}")]
    Map(String),
    #[error("malformed tensor dump: {0}")]
    Dump(String),
}

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn c0() -> C64 {
    C64::new(0.0, 0.0)
}

/// Largest component modulus.
pub fn cmax(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// The point `x = ζ·embed(chart, v)` and the frame `(e_a)` as vectors of `ℂⁿ`.
pub fn frame(chart: usize, v: &[C64], zeta: C64) -> (Vec<C64>, Vec<Vec<C64>>) {
    let x: Vec<C64> = embed(chart, v).into_iter().map(|c| c * zeta).collect();
    let s = 1.0 + v.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let e = (0..v.len())
        .map(|a| {
            let k = if a < chart { a } else { a + 1 };
            let mut u: Vec<C64> = x.iter().map(|xi| -xi * v[a].conj() / s).collect();
            u[k] += zeta;
            u
        })
        .collect();
    (x, e)
}

/// Hermitian Gram matrix `⟨e_a, e_b⟩ / τ_o`.
pub fn gram(chart: usize, v: &[C64], zeta: C64) -> DMatrix<C64> {
    let (x, e) = frame(chart, v, zeta);
    let tau: f64 = x.iter().map(|c| c.norm_sqr()).sum();
    let d = e.len();
    DMatrix::from_fn(d, d, |a, b| e[a].iter().zip(&e[b]).map(|(p, q)| p * q.conj()).sum::<C64>() / tau)
}

/// Real coordinates `(Re z₁, Im z₁, …)`.
pub fn realify(u: &[C64]) -> DVector<f64> {
    DVector::from_iterator(2 * u.len(), u.iter().flat_map(|c| [c.re, c.im]))
}

/// Columns `e_1, i·e_1, …, x, i·x`.
fn basis_matrix(chart: usize, v: &[C64], zeta: C64) -> DMatrix<f64> {
    let (x, e) = frame(chart, v, zeta);
    let n = x.len();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    let mut put = |col: usize, u: &[C64]| {
        m.set_column(col, &realify(u));
        let iu: Vec<C64> = u.iter().map(|c| c * I).collect();
        m.set_column(col + 1, &realify(&iu));
    };
    for (a, ea) in e.iter().enumerate() {
        put(2 * a, ea);
    }
    put(2 * n - 2, &x);
    m
}

/// Operator norm of `φ: H^{0,1} → H^{1,0}` for the metric `Ĝ`.
pub fn operator_norm(phi: &DMatrix<C64>, g: &DMatrix<C64>) -> f64 {
    if phi.is_empty() {
        return 0.0;
    }
    let l = match g.clone().cholesky() {
        Some(c) => c.l(),
        None => return f64::INFINITY,
    };
    let Some(lhinv) = l.adjoint().try_inverse() else {
        return f64::INFINITY;
    };
    let m = l.transpose() * phi * lhinv;
    m.singular_values().max()
}

/// Splits the horizontal block of a real endomorphism written in the frame
/// basis into `w ↦ P w + Q w̄`.
fn pq_from_real(a: &DMatrix<f64>, d: usize) -> (DMatrix<C64>, DMatrix<C64>) {
    let mut p = DMatrix::from_element(d, d, c0());
    let mut q = DMatrix::from_element(d, d, c0());
    for r in 0..d {
        for c in 0..d {
            let (r00, r01, r10, r11) =
                (a[(2 * r, 2 * c)], a[(2 * r, 2 * c + 1)], a[(2 * r + 1, 2 * c)], a[(2 * r + 1, 2 * c + 1)]);
            p[(r, c)] = C64::new(r00 + r11, r10 - r01) * 0.5;
            q[(r, c)] = C64::new(r00 - r11, r10 + r01) * 0.5;
        }
    }
    (p, q)
}

fn real_from_pq(p: &DMatrix<C64>, q: &DMatrix<C64>, n: usize) -> DMatrix<f64> {
    let d = n - 1;
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for r in 0..d {
        for c in 0..d {
            let (pp, qq) = (p[(r, c)], q[(r, c)]);
            a[(2 * r, 2 * c)] = pp.re + qq.re;
            a[(2 * r, 2 * c + 1)] = -pp.im + qq.im;
            a[(2 * r + 1, 2 * c)] = pp.im + qq.im;
            a[(2 * r + 1, 2 * c + 1)] = pp.re - qq.re;
        }
    }
    a[(2 * d + 1, 2 * d)] = 1.0;
    a[(2 * d, 2 * d + 1)] = -1.0;
    a
}

/// Result of reading `φ` off a structure at one point.
#[derive(Clone, Debug)]
pub struct Extraction {
    pub phi: DMatrix<C64>,
    /// Largest entry of the blocks mixing `ℋ` and the radial line, and of the
    /// deviation from the standard structure on the radial line.
    pub leakage: f64,
    pub norm: f64,
}

/// `φ` of a real structure matrix `j` (ambient coordinates) at `ζ·embed(chart, v)`.
pub fn extract_from_structure(
    j: &DMatrix<f64>,
    chart: usize,
    v: &[C64],
    zeta: C64,
) -> Result<Extraction, DeformationError> {
    let n = v.len() + 1;
    let d = n - 1;
    let degenerate = |norm: f64| DeformationError::Degenerate { chart, v: v.to_vec(), zeta, norm };
    let m = basis_matrix(chart, v, zeta);
    let a = m.clone().lu().solve(&(j * &m)).ok_or_else(|| degenerate(f64::INFINITY))?;
    let mut leakage: f64 = 0.0;
    for r in 0..2 * n {
        for c in 0..2 * n {
            if (r < 2 * d) != (c < 2 * d) {
                leakage = leakage.max(a[(r, c)].abs());
            }
        }
    }
    let jz = [[0.0, -1.0], [1.0, 0.0]];
    for r in 0..2 {
        for c in 0..2 {
            leakage = leakage.max((a[(2 * d + r, 2 * d + c)] - jz[r][c]).abs());
        }
    }
    let (p, q) = pq_from_real(&a, d);
    let shifted = p + DMatrix::from_diagonal_element(d, d, I);
    let phi = shifted.lu().solve(&(-q)).ok_or_else(|| degenerate(f64::INFINITY))?;
    let norm = operator_norm(&phi, &gram(chart, v, zeta));
    if !(norm < 1.0) {
        return Err(degenerate(norm));
    }
    Ok(Extraction { phi, leakage, norm })
}

/// The structure whose antiholomorphic horizontal space is the graph of `φ`
/// and which is standard on the radial line, in ambient real coordinates.
pub fn reconstruct_structure(
    phi: &DMatrix<C64>,
    chart: usize,
    v: &[C64],
    zeta: C64,
) -> Result<DMatrix<f64>, DeformationError> {
    let n = v.len() + 1;
    let d = n - 1;
    let norm = operator_norm(phi, &gram(chart, v, zeta));
    let fail = || DeformationError::NotContracting { chart, v: v.to_vec(), zeta, norm };
    if !(norm < 1.0) {
        return Err(fail());
    }
    let id = DMatrix::<C64>::identity(d, d);
    let pp = phi * phi.map(|c| c.conj());
    let inv = (&id - &pp).try_inverse().ok_or_else(fail)?;
    let p = (&id + &pp) * inv * I;
    let q = -(phi * I) - &p * phi;
    let m = basis_matrix(chart, v, zeta);
    let minv = m.clone().try_inverse().ok_or_else(fail)?;
    Ok(m * real_from_pq(&p, &q, n) * minv)
}

/// `DF⁻¹ J_o DF`.
pub fn pullback_structure(df: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = df.clone().try_inverse()?;
    Some(inv * j_standard(df.nrows()) * df)
}

/// Real Jacobian of a map of `ℂⁿ` by fourth-order central differences.
pub fn jacobian_fd(f: &dyn Fn(&[C64]) -> Vec<C64>, x: &[C64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut df = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..2 * n {
        let at = |s: f64| {
            let mut p = x.to_vec();
            if k % 2 == 0 {
                p[k / 2].re += s;
            } else {
                p[k / 2].im += s;
            }
            realify(&f(&p))
        };
        let col = (at(-2.0 * h) - at(2.0 * h) + (at(h) - at(-h)) * 8.0) / (12.0 * h);
        df.set_column(k, &col);
    }
    df
}

/// A field of deformation tensors in blow-up coordinates.
pub trait TensorField: Sync {
    fn n(&self) -> usize;
    fn phi(&self, chart: usize, v: &[C64], zeta: C64) -> Result<DMatrix<C64>, DeformationError>;
}

/// Tensor given by a closure `(chart, v, ζ) ↦ φ`.
pub struct FnTensor<F> {
    pub n: usize,
    pub f: F,
}

impl<F> TensorField for FnTensor<F>
where
    F: Fn(usize, &[C64], C64) -> DMatrix<C64> + Sync,
{
    fn n(&self) -> usize {
        self.n
    }
    fn phi(&self, chart: usize, v: &[C64], zeta: C64) -> Result<DMatrix<C64>, DeformationError> {
        Ok((self.f)(chart, v, zeta))
    }
}

/// Tensor of the structure pulled back by a fiber-preserving map `F`.
pub struct MapTensor<F> {
    pub n: usize,
    pub map: F,
    /// Finite-difference step relative to `|x|`.
    pub step: f64,
}

impl<F> TensorField for MapTensor<F>
where
    F: Fn(&[C64]) -> Vec<C64> + Sync,
{
    fn n(&self) -> usize {
        self.n
    }
    fn phi(&self, chart: usize, v: &[C64], zeta: C64) -> Result<DMatrix<C64>, DeformationError> {
        let (x, _) = frame(chart, v, zeta);
        let r = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let df = jacobian_fd(&self.map, &x, self.step * r);
        let j = pullback_structure(&df).ok_or_else(|| DeformationError::Map("singular Jacobian".into()))?;
        Ok(extract_from_structure(&j, chart, v, zeta)?.phi)
    }
}

/// Toric twist `z_k ↦ e^{iθ_k(h)} z_k` with `h_k = |z_k|²/|z|²` and
/// `θ_k = ∂G/∂h_k` for the degree-one potential
/// `G = β·h_{n−2}h_{n−1}/Σh`. It preserves `|z|` and the contact form of the
/// spheres, so the pulled-back structure is an integrable Lempert-type
/// structure with a nonzero, fiber-constant tensor.
#[derive(Clone, Copy, Debug)]
pub struct ToricTwist {
    pub n: usize,
    pub beta: f64,
}

impl ToricTwist {
    pub fn apply(&self, z: &[C64]) -> Vec<C64> {
        let n = self.n;
        let s: f64 = z.iter().map(|c| c.norm_sqr()).sum();
        let h: Vec<f64> = z.iter().map(|c| c.norm_sqr() / s).collect();
        let (p, q) = (n - 2, n - 1);
        z.iter()
            .enumerate()
            .map(|(k, c)| {
                let mut theta = -h[p] * h[q];
                if k == p {
                    theta += h[q];
                }
                if k == q {
                    theta += h[p];
                }
                c * C64::from_polar(1.0, self.beta * theta)
            })
            .collect()
    }

    pub fn tensor(&self) -> MapTensor<impl Fn(&[C64]) -> Vec<C64> + Sync> {
        let t = *self;
        MapTensor { n: self.n, map: move |z: &[C64]| t.apply(z), step: 1e-3 }
    }
}

/// Mode-zero tensor whose form `B = φᵀĜ` is the constant matrix `b`.
#[derive(Clone, Debug)]
pub struct BilinearTensor {
    pub b: DMatrix<C64>,
}

impl TensorField for BilinearTensor {
    fn n(&self) -> usize {
        self.b.nrows() + 1
    }
    fn phi(&self, chart: usize, v: &[C64], zeta: C64) -> Result<DMatrix<C64>, DeformationError> {
        let g = gram(chart, v, zeta);
        let ginv = g.try_inverse().ok_or_else(|| DeformationError::Degenerate {
            chart,
            v: v.to_vec(),
            zeta,
            norm: f64::INFINITY,
        })?;
        Ok((&self.b * ginv).transpose())
    }
}

/// `φ(v, c·ζ)`: fiber rotation for `|c| = 1`, contraction for real `c < 1`.
pub struct FiberScaled<'a> {
    pub inner: &'a dyn TensorField,
    pub factor: C64,
}

impl TensorField for FiberScaled<'_> {
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn phi(&self, chart: usize, v: &[C64], zeta: C64) -> Result<DMatrix<C64>, DeformationError> {
        self.inner.phi(chart, v, zeta * self.factor)
    }
}

pub fn rotate(field: &dyn TensorField, theta: f64) -> FiberScaled<'_> {
    FiberScaled { inner: field, factor: C64::from_polar(1.0, theta) }
}

pub fn contract(field: &dyn TensorField, k: f64) -> FiberScaled<'_> {
    FiberScaled { inner: field, factor: C64::new(k, 0.0) }
}

/// The tensor of `Φ^*J_o` for a normalizing map, `Φ` being the inverse of
/// the map `φ` from the ball. The phase `e^{iλ}` is a complex scalar at each
/// point and drops out of the pulled-back structure; only `dλ = ν` enters.
pub struct NormalFormTensor<'a> {
    pub map: &'a NormalizingMap,
    pub step: f64,
}

impl TensorField for NormalFormTensor<'_> {
    fn n(&self) -> usize {
        2
    }
    fn phi(&self, chart: usize, v: &[C64], zeta: C64) -> Result<DMatrix<C64>, DeformationError> {
        let err = |e: crate::moser_normalizer::MoserError| DeformationError::Map(e.to_string());
        let (x, _) = frame(chart, v, zeta);
        let r = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let h = self.step * r;
        let p = self.map.raw(&x).map_err(err)?;
        let (c1, v1) = chart_of(&x);
        let (nu_re, nu_im) = if self.map.corrected {
            (self.map.nu(c1, v1, C64::new(1.0, 0.0)).map_err(err)?, self.map.nu(c1, v1, I).map_err(err)?)
        } else {
            (0.0, 0.0)
        };
        let mut df = DMatrix::zeros(4, 4);
        for k in 0..4 {
            let mut u = [c0(), c0()];
            u[k / 2] = if k % 2 == 0 { C64::new(1.0, 0.0) } else { I };
            let shifted = |s: f64| -> Vec<C64> { x.iter().zip(&u).map(|(a, b)| a + b * s).collect() };
            let fp = self.map.raw(&shifted(h)).map_err(err)?;
            let fm = self.map.raw(&shifted(-h)).map_err(err)?;
            let dv = (u[1 - c1] - v1 * u[c1]) / x[c1];
            let dlambda = dv.re * nu_re + dv.im * nu_im;
            let col: Vec<C64> = fp.iter().zip(&fm).zip(&p).map(|((a, b), pk)| (a - b) / (2.0 * h) + I * pk * dlambda).collect();
            df.set_column(k, &realify(&col));
        }
        let j = pullback_structure(&df).ok_or_else(|| DeformationError::Map("singular Jacobian".into()))?;
        Ok(extract_from_structure(&j, chart, v, zeta)?.phi)
    }
}

/// A base point of the sampling grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BasePoint {
    pub chart: usize,
    pub v: Vec<C64>,
}

/// Nodes `(base, r, θ)` with `ζ = r e^{iθ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorGrid {
    pub n: usize,
    pub bases: Vec<BasePoint>,
    pub radii: Vec<f64>,
    pub n_theta: usize,
}

impl TensorGrid {
    /// `per_axis` points per real axis of `[-1, 1]`, keeping `|v| ≤ 1`, in
    /// each listed chart.
    pub fn lattice(n: usize, charts: &[usize], per_axis: usize, radii: Vec<f64>, n_theta: usize) -> Self {
        let d = 2 * (n - 1);
        let coord = |i: usize| if per_axis == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (per_axis - 1) as f64 };
        let mut bases = Vec::new();
        for &chart in charts {
            for lin in 0..per_axis.pow(d as u32) {
                let mut rest = lin;
                let mut re = Vec::with_capacity(d);
                for _ in 0..d {
                    re.push(coord(rest % per_axis));
                    rest /= per_axis;
                }
                let v: Vec<C64> = re.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
                if v.iter().map(|c| c.norm_sqr()).sum::<f64>() <= 1.0 + 1e-12 {
                    bases.push(BasePoint { chart, v });
                }
            }
        }
        TensorGrid { n, bases, radii, n_theta }
    }

    pub fn zeta(&self, r: usize, t: usize) -> C64 {
        C64::from_polar(self.radii[r], 2.0 * PI * t as f64 / self.n_theta as f64)
    }

    pub fn nodes(&self) -> usize {
        self.bases.len() * self.radii.len() * self.n_theta
    }

    fn node(&self, idx: usize) -> (usize, usize, usize) {
        let t = idx % self.n_theta;
        let r = (idx / self.n_theta) % self.radii.len();
        (idx / (self.n_theta * self.radii.len()), r, t)
    }
}

/// Sampled `φ` on a grid, indexed `[base][radius][angle]`.
#[derive(Clone, Debug)]
pub struct DeformationTensor {
    pub grid: TensorGrid,
    pub values: Vec<DMatrix<C64>>,
}

impl DeformationTensor {
    pub fn sample(field: &dyn TensorField, grid: &TensorGrid) -> Result<Self, DeformationError> {
        let values = (0..grid.nodes())
            .into_par_iter()
            .map(|idx| {
                let (b, r, t) = grid.node(idx);
                let base = &grid.bases[b];
                field.phi(base.chart, &base.v, grid.zeta(r, t))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DeformationTensor { grid: grid.clone(), values })
    }

    pub fn at(&self, b: usize, r: usize, t: usize) -> &DMatrix<C64> {
        &self.values[(b * self.grid.radii.len() + r) * self.grid.n_theta + t]
    }

    fn each_node(&self) -> impl Iterator<Item = (&BasePoint, C64, &DMatrix<C64>)> {
        self.values.iter().enumerate().map(|(idx, phi)| {
            let (b, r, t) = self.grid.node(idx);
            (&self.grid.bases[b], self.grid.zeta(r, t), phi)
        })
    }

    /// Largest operator norm over the nodes.
    pub fn max_norm(&self) -> f64 {
        self.each_node().map(|(base, zeta, phi)| operator_norm(phi, &gram(base.chart, &base.v, zeta))).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flat_map(|m| m.iter()).map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest `|B − Bᵀ|/2` for `B = φᵀĜ`.
    pub fn symmetry_residual(&self) -> f64 {
        self.each_node()
            .map(|(base, zeta, phi)| {
                let b = phi.transpose() * gram(base.chart, &base.v, zeta);
                (&b - b.transpose()).iter().map(|c| c.norm() / 2.0).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// `extract ∘ reconstruct` on `φ`, and `reconstruct ∘ extract` on the
    /// reconstructed structure.
    pub fn round_trip(&self) -> Result<(f64, f64), DeformationError> {
        let mut worst = (0.0f64, 0.0f64);
        for (base, zeta, phi) in self.each_node() {
            let j = reconstruct_structure(phi, base.chart, &base.v, zeta)?;
            let back = extract_from_structure(&j, base.chart, &base.v, zeta)?.phi;
            let j2 = reconstruct_structure(&back, base.chart, &base.v, zeta)?;
            worst.0 = worst.0.max((&back - phi).iter().map(|c| c.norm()).fold(0.0, f64::max));
            worst.1 = worst.1.max((&j2 - &j).amax());
        }
        Ok(worst)
    }
}

/// Fiber Fourier modes `φ⁽ᵏ⁾(v)`, indexed `[k][base]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSet {
    pub n: usize,
    pub bases: Vec<BasePoint>,
    pub modes: Vec<Vec<DMatrix<C64>>>,
    /// `‖φ − Σ_{k≤k_max} φ⁽ᵏ⁾ζᵏ‖_∞` over the sampled nodes.
    pub tail: f64,
    /// Largest coefficient at negative frequencies.
    pub negative: f64,
    /// Largest spread of `DFT_k(r)/rᵏ` between radii.
    pub radial_deviation: f64,
}

fn dft_rows(values: &[DMatrix<C64>], d: usize, planner: &mut FftPlanner<f64>) -> Vec<Vec<C64>> {
    let n = values.len();
    let fft = planner.plan_fft_forward(n);
    let mut out = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            let mut buf: Vec<C64> = values.iter().map(|m| m[(a, b)]).collect();
            fft.process(&mut buf);
            out.push(buf.into_iter().map(|c| c / n as f64).collect());
        }
    }
    out
}

/// Mode coefficients `DFT_k/rᵏ` of a field on one fiber circle.
pub fn fiber_modes(
    field: &dyn TensorField,
    chart: usize,
    v: &[C64],
    r: f64,
    n_theta: usize,
    k_max: usize,
) -> Result<Vec<DMatrix<C64>>, DeformationError> {
    let d = field.n() - 1;
    let values = (0..n_theta)
        .map(|t| field.phi(chart, v, C64::from_polar(r, 2.0 * PI * t as f64 / n_theta as f64)))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = dft_rows(&values, d, &mut FftPlanner::new());
    Ok((0..=k_max).map(|k| DMatrix::from_fn(d, d, |a, b| spec[a * d + b][k] / r.powi(k as i32))).collect())
}

pub fn fourier_modes(tensor: &DeformationTensor, k_max: usize, negative_tol: f64) -> Result<ModeSet, DeformationError> {
    let grid = &tensor.grid;
    let nt = grid.n_theta;
    if nt < 2 * (k_max + 1) {
        return Err(DeformationError::Resolution { n_theta: nt, k_max });
    }
    let d = grid.n - 1;
    let nr = grid.radii.len();
    let mut planner = FftPlanner::new();
    let mut modes = vec![Vec::with_capacity(grid.bases.len()); k_max + 1];
    let (mut negative, mut spread, mut tail) = (0.0f64, 0.0f64, 0.0f64);
    for b in 0..grid.bases.len() {
        let mut per_radius = Vec::with_capacity(nr);
        for r in 0..nr {
            let vals: Vec<DMatrix<C64>> = (0..nt).map(|t| tensor.at(b, r, t).clone()).collect();
            let spec = dft_rows(&vals, d, &mut planner);
            for row in &spec {
                for c in &row[nt / 2..] {
                    negative = negative.max(c.norm());
                }
            }
            let rad = grid.radii[r];
            per_radius.push(
                (0..=k_max)
                    .map(|k| DMatrix::from_fn(d, d, |a, c| spec[a * d + c][k] / rad.powi(k as i32)))
                    .collect::<Vec<_>>(),
            );
        }
        for (k, slot) in modes.iter_mut().enumerate() {
            let mut avg = DMatrix::from_element(d, d, c0());
            for pr in &per_radius {
                avg += &pr[k];
            }
            avg /= C64::new(nr as f64, 0.0);
            for r1 in 0..nr {
                for r2 in r1 + 1..nr {
                    spread = spread.max((&per_radius[r1][k] - &per_radius[r2][k]).iter().map(|c| c.norm()).fold(0.0, f64::max));
                }
            }
            slot.push(avg);
        }
        for r in 0..nr {
            for t in 0..nt {
                let zeta = grid.zeta(r, t);
                let mut sum = DMatrix::from_element(d, d, c0());
                for (k, m) in modes.iter().enumerate() {
                    sum += &m[b] * zeta.powi(k as i32);
                }
                tail = tail.max((tensor.at(b, r, t) - sum).iter().map(|c| c.norm()).fold(0.0, f64::max));
            }
        }
    }
    if negative > negative_tol {
        return Err(DeformationError::NegativeFrequency { energy: negative, tol: negative_tol });
    }
    Ok(ModeSet { n: grid.n, bases: grid.bases.clone(), modes, tail, negative, radial_deviation: spread })
}

impl ModeSet {
    /// Mode set given directly by its coefficients.
    pub fn from_modes(n: usize, bases: Vec<BasePoint>, modes: Vec<Vec<DMatrix<C64>>>) -> Self {
        ModeSet { n, bases, modes, tail: 0.0, negative: 0.0, radial_deviation: 0.0 }
    }

    pub fn k_max(&self) -> usize {
        self.modes.len() - 1
    }

    /// `‖φ⁽ᵏ⁾‖_∞`: largest component modulus over the base points.
    pub fn norm(&self, k: usize) -> f64 {
        self.modes[k].iter().flat_map(|m| m.iter()).map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn norms(&self) -> Vec<f64> {
        (0..self.modes.len()).map(|k| self.norm(k)).collect()
    }

    fn scaled(&self, f: impl Fn(usize) -> C64) -> Self {
        let modes = self.modes.iter().enumerate().map(|(k, ms)| ms.iter().map(|m| m * f(k)).collect()).collect();
        ModeSet { modes, ..self.clone() }
    }

    /// Pullback by the fiber rotation `ζ ↦ e^{iθ}ζ`.
    pub fn rotate(&self, theta: f64) -> Self {
        self.scaled(|k| C64::from_polar(1.0, k as f64 * theta))
    }

    /// Evaluation at `([v], k·ζ)`.
    pub fn contract(&self, k: f64) -> Self {
        self.scaled(|j| C64::new(k.powi(j as i32), 0.0))
    }

    pub fn evaluate(&self, base: usize, zeta: C64) -> DMatrix<C64> {
        let d = self.n - 1;
        let mut sum = DMatrix::from_element(d, d, c0());
        for (k, m) in self.modes.iter().enumerate() {
            sum += &m[base] * zeta.powi(k as i32);
        }
        sum
    }

    /// Per chart: one record of base points `[m, n−1]`, then one record
    /// `[m, n−1, n−1]` per mode.
    pub fn to_records(&self) -> Vec<GridRecord> {
        let d = self.n - 1;
        let mut charts: Vec<usize> = self.bases.iter().map(|b| b.chart).collect();
        charts.dedup();
        let mut out = Vec::new();
        for chart in charts {
            let idx: Vec<usize> = (0..self.bases.len()).filter(|&i| self.bases[i].chart == chart).collect();
            out.push(GridRecord {
                chart,
                shape: vec![idx.len(), d],
                data: idx.iter().flat_map(|&i| self.bases[i].v.clone()).collect(),
            });
            for m in &self.modes {
                let data = idx.iter().flat_map(|&i| (0..d).flat_map(move |a| (0..d).map(move |b| (a, b))).map(move |(a, b)| m[i][(a, b)])).collect();
                out.push(GridRecord { chart, shape: vec![idx.len(), d, d], data });
            }
        }
        out
    }

    pub fn from_records(records: &[GridRecord]) -> Result<Self, DeformationError> {
        let bad = |m: &str| DeformationError::Dump(m.to_string());
        let mut bases = Vec::new();
        let mut modes: Vec<Vec<DMatrix<C64>>> = Vec::new();
        let mut n = None;
        let mut i = 0;
        while i < records.len() {
            let head = &records[i];
            if head.shape.len() != 2 {
                return Err(bad("expected a base-point record"));
            }
            let (m, d) = (head.shape[0], head.shape[1]);
            if *n.get_or_insert(d + 1) != d + 1 {
                return Err(bad("inconsistent dimension"));
            }
            let first = bases.len();
            bases.extend(head.data.chunks(d).map(|v| BasePoint { chart: head.chart, v: v.to_vec() }));
            i += 1;
            let mut k = 0;
            while i < records.len() && records[i].shape.len() == 3 {
                let r = &records[i];
                if r.shape != [m, d, d] || r.chart != head.chart {
                    return Err(bad("mode record does not match its base points"));
                }
                if first == 0 {
                    modes.push(Vec::new());
                } else if k >= modes.len() {
                    return Err(bad("charts carry different mode counts"));
                }
                modes[k].extend(r.data.chunks(d * d).map(|c| DMatrix::from_row_slice(d, d, c)));
                k += 1;
                i += 1;
            }
            if k != modes.len() || k == 0 {
                return Err(bad("charts carry different mode counts"));
            }
        }
        let n = n.ok_or_else(|| bad("empty dump"))?;
        Ok(ModeSet::from_modes(n, bases, modes))
    }
}

/// Wirtinger derivatives `(∂/∂wₘ, ∂/∂w̄ₘ)` of matrix-valued `f` along the
/// complex coordinates `w` by fourth-order differences.
fn wirtinger<E>(
    f: &dyn Fn(&[C64]) -> Result<Vec<C64>, E>,
    w: &[C64],
    h: f64,
) -> Result<(Vec<Vec<C64>>, Vec<Vec<C64>>), E> {
    let mut dw = Vec::with_capacity(w.len());
    let mut dwb = Vec::with_capacity(w.len());
    for m in 0..w.len() {
        let partial = |dir: C64| -> Result<Vec<C64>, E> {
            let at = |s: f64| {
                let mut p = w.to_vec();
                p[m] += dir * s;
                f(&p)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            Ok((0..p1.len()).map(|i| (m2[i] - p2[i] + (p1[i] - m1[i]) * 8.0) / (12.0 * h)).collect())
        };
        let dx = partial(C64::new(1.0, 0.0))?;
        let dy = partial(I)?;
        dw.push(dx.iter().zip(&dy).map(|(a, b)| (a - I * b) * 0.5).collect());
        dwb.push(dx.iter().zip(&dy).map(|(a, b)| (a + I * b) * 0.5).collect());
    }
    Ok((dw, dwb))
}

/// The fields `W_b = ē_b + φ(ē_b)` as components on
/// `(∂_{v¹}, …, ∂_ζ, ∂_{v̄¹}, …, ∂_ζ̄)`, concatenated over `b`.
fn graph_fields(field: &dyn TensorField, chart: usize, w: &[C64]) -> Result<Vec<C64>, DeformationError> {
    let n = w.len();
    let d = n - 1;
    let (v, zeta) = (&w[..d], w[d]);
    let phi = field.phi(chart, v, zeta)?;
    let s = 1.0 + v.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let mut out = vec![c0(); 2 * n * d];
    for b in 0..d {
        let o = &mut out[2 * n * b..2 * n * (b + 1)];
        for a in 0..d {
            o[a] = phi[(a, b)];
            o[d] -= phi[(a, b)] * v[a].conj() * zeta / s;
        }
        o[n + b] = C64::new(1.0, 0.0);
        o[n + d] = -v[b] * zeta.conj() / s;
    }
    Ok(out)
}

/// Integrability obstruction `π^{1,0}[W_b, W_c] − φ(π^{0,1}[W_b, W_c])` for
/// `b < c`, flattened as `[pair][a]`. In the fiber-invariant frame this is
/// `∂̄φ + ½[φ, φ]`.
pub fn integrability_obstruction(
    field: &dyn TensorField,
    chart: usize,
    v: &[C64],
    zeta: C64,
    h: f64,
) -> Result<Vec<C64>, DeformationError> {
    let n = field.n();
    let d = n - 1;
    let mut w = v.to_vec();
    w.push(zeta);
    let f = |p: &[C64]| graph_fields(field, chart, p);
    let val = f(&w)?;
    let (dw, dwb) = wirtinger(&f, &w, h)?;
    let phi = field.phi(chart, v, zeta)?;
    // X(Y^μ) for fields stored at offsets ox, oy.
    let apply = |ox: usize, oy: usize, mu: usize| -> C64 {
        (0..n).map(|m| val[ox + m] * dw[m][oy + mu] + val[ox + n + m] * dwb[m][oy + mu]).sum()
    };
    let mut out = Vec::new();
    for b in 0..d {
        for c in b + 1..d {
            let (ob, oc) = (2 * n * b, 2 * n * c);
            let br = |mu: usize| apply(ob, oc, mu) - apply(oc, ob, mu);
            for a in 0..d {
                let mut r = br(a);
                for e in 0..d {
                    r -= phi[(a, e)] * br(n + e);
                }
                out.push(r);
            }
        }
    }
    Ok(out)
}

/// Largest integrability obstruction over the grid nodes.
pub fn integrability_residual(field: &dyn TensorField, grid: &TensorGrid, h: f64) -> Result<f64, DeformationError> {
    let per_node = (0..grid.nodes())
        .into_par_iter()
        .map(|idx| {
            let (b, r, t) = grid.node(idx);
            let base = &grid.bases[b];
            let o = integrability_obstruction(field, base.chart, &base.v, grid.zeta(r, t), h)?;
            Ok(o.iter().map(|c| c.norm()).fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>, DeformationError>>()?;
    Ok(per_node.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionTolerances {
    pub symmetry: f64,
    pub integrability: f64,
    pub modes: f64,
}

impl Default for ConditionTolerances {
    fn default() -> Self {
        ConditionTolerances { symmetry: 1e-8, integrability: 1e-6, modes: 1e-6 }
    }
}

/// Residuals of the four conditions characterizing tensors of Lempert-type
/// structures: symmetry of `B = φᵀĜ`, integrability, fiber holomorphy
/// (radial consistency of modes) and strict contraction.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub symmetry: f64,
    pub integrability: f64,
    pub mode_consistency: f64,
    pub max_norm: f64,
    pub negative_frequency: f64,
    pub tail: f64,
    pub tol: ConditionTolerances,
}

impl ConditionReport {
    pub fn contraction_margin(&self) -> f64 {
        1.0 - self.max_norm
    }

    /// Pass flags for the symmetry, integrability, mode and contraction conditions.
    pub fn passes(&self) -> [bool; 4] {
        [
            self.symmetry < self.tol.symmetry,
            self.integrability < self.tol.integrability,
            self.mode_consistency < self.tol.modes,
            self.contraction_margin() > 0.0,
        ]
    }
}

pub fn verify_conditions(
    field: &dyn TensorField,
    grid: &TensorGrid,
    k_max: usize,
    bracket_step: f64,
    tol: ConditionTolerances,
) -> Result<(ConditionReport, DeformationTensor, ModeSet), DeformationError> {
    let tensor = DeformationTensor::sample(field, grid)?;
    let modes = fourier_modes(&tensor, k_max, f64::INFINITY)?;
    let integrability = if grid.n > 2 { integrability_residual(field, grid, bracket_step)? } else { 0.0 };
    let report = ConditionReport {
        symmetry: tensor.symmetry_residual(),
        integrability,
        mode_consistency: modes.radial_deviation,
        max_norm: tensor.max_norm(),
        negative_frequency: modes.negative,
        tail: modes.tail,
        tol,
    };
    Ok((report, tensor, modes))
}

/// Residual of the mode-`k` integrability equation, split into its `∂̄`
/// and bracket parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeEquationRow {
    pub k: usize,
    pub residual: f64,
    pub dbar: f64,
    pub bracket: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeEquationReport {
    pub rows: Vec<ModeEquationRow>,
    /// Largest full obstruction over the grid.
    pub full: f64,
    /// `max |obstruction − Σ ζᵏ·(mode-k residual)|` over the grid.
    pub reconstruction: f64,
}

/// Mode-`k` obstructions `∂̄φ⁽ᵏ⁾ + Σ_{i+j=k}[φ⁽ⁱ⁾, φ⁽ʲ⁾]` at one base point,
/// flattened like [`integrability_obstruction`], with their `∂̄` and bracket
/// parts. Modes are read on the fiber circle of radius `r`; `e_d` acts on
/// `ζʲf(v)` as `ζʲ(∂_{v^d} − j v̄^d/(1+|v|²))f`.
#[allow(clippy::type_complexity)]
pub fn mode_obstructions(
    field: &dyn TensorField,
    chart: usize,
    v: &[C64],
    r: f64,
    n_theta: usize,
    k_max: usize,
    h: f64,
) -> Result<Vec<(Vec<C64>, Vec<C64>)>, DeformationError> {
    let d = field.n() - 1;
    let flat = |p: &[C64]| -> Result<Vec<C64>, DeformationError> {
        Ok(fiber_modes(field, chart, p, r, n_theta, k_max)?.into_iter().flat_map(|m| m.transpose().iter().copied().collect::<Vec<_>>()).collect())
    };
    let at = |buf: &[C64], k: usize, a: usize, b: usize| buf[k * d * d + a * d + b];
    let val = flat(v)?;
    let (dw, dwb) = wirtinger(&flat, v, h)?;
    let s = 1.0 + v.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let e_op = |j: usize, dd: usize, a: usize, b: usize| dw[dd][j * d * d + a * d + b] - v[dd].conj() * at(&val, j, a, b) * (j as f64) / s;
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let (mut dbar, mut brk) = (Vec::new(), Vec::new());
        for b in 0..d {
            for c in b + 1..d {
                for a in 0..d {
                    dbar.push(dwb[b][k * d * d + a * d + c] - dwb[c][k * d * d + a * d + b]);
                    let mut acc = c0();
                    for i in 0..=k {
                        let j = k - i;
                        for e in 0..d {
                            acc += at(&val, i, e, b) * e_op(j, e, a, c) - at(&val, i, e, c) * e_op(j, e, a, b);
                        }
                    }
                    brk.push(acc);
                }
            }
        }
        out.push((dbar, brk));
    }
    Ok(out)
}

pub fn verify_mode_equations(
    field: &dyn TensorField,
    grid: &TensorGrid,
    k_max: usize,
    h: f64,
) -> Result<ModeEquationReport, DeformationError> {
    let r_modes = grid.radii[grid.radii.len() / 2];
    let per_base = grid
        .bases
        .par_iter()
        .map(|base| -> Result<(Vec<[f64; 3]>, f64, f64), DeformationError> {
            let parts = mode_obstructions(field, base.chart, &base.v, r_modes, grid.n_theta, k_max, h)?;
            let rows: Vec<[f64; 3]> = parts
                .iter()
                .map(|(db, br)| {
                    let mx = |xs: &[C64]| xs.iter().map(|c| c.norm()).fold(0.0, f64::max);
                    let sum: Vec<C64> = db.iter().zip(br).map(|(a, b)| a + b).collect();
                    [mx(&sum), mx(db), mx(br)]
                })
                .collect();
            let (mut full, mut recon) = (0.0f64, 0.0f64);
            for r in 0..grid.radii.len() {
                for t in 0..grid.n_theta {
                    let zeta = grid.zeta(r, t);
                    let direct = integrability_obstruction(field, base.chart, &base.v, zeta, h)?;
                    for (idx, dval) in direct.iter().enumerate() {
                        let series: C64 = parts.iter().enumerate().map(|(k, (db, br))| (db[idx] + br[idx]) * zeta.powi(k as i32)).sum();
                        full = full.max(dval.norm());
                        recon = recon.max((dval - series).norm());
                    }
                }
            }
            Ok((rows, full, recon))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows: Vec<ModeEquationRow> =
        (0..=k_max).map(|k| ModeEquationRow { k, residual: 0.0, dbar: 0.0, bracket: 0.0 }).collect();
    let (mut full, mut reconstruction) = (0.0f64, 0.0f64);
    for (rs, f, rc) in per_base {
        for (row, x) in rows.iter_mut().zip(rs) {
            row.residual = row.residual.max(x[0]);
            row.dbar = row.dbar.max(x[1]);
            row.bracket = row.bracket.max(x[2]);
        }
        full = full.max(f);
        reconstruction = reconstruction.max(rc);
    }
    Ok(ModeEquationReport { rows, full, reconstruction })
}

/// Structure of a tensor field at an ambient point, read in a fixed chart.
pub fn ambient_structure(field: &dyn TensorField, chart: usize, x: &[C64]) -> Result<DMatrix<f64>, DeformationError> {
    let zeta = x[chart];
    let v: Vec<C64> = x.iter().enumerate().filter(|(i, _)| *i != chart).map(|(_, c)| c / zeta).collect();
    reconstruct_structure(&field.phi(chart, &v, zeta)?, chart, &v, zeta)
}

/// Largest Nijenhuis tensor component of the reconstructed structure at the
/// given ambient points, by fourth-order differences.
pub fn nijenhuis_residual(
    field: &dyn TensorField,
    chart: usize,
    points: &[Vec<C64>],
    h: f64,
) -> Result<f64, DeformationError> {
    let mut worst: f64 = 0.0;
    for x in points {
        let j = ambient_structure(field, chart, x)?;
        let dim = j.nrows();
        let mut dj = Vec::with_capacity(dim);
        for l in 0..dim {
            let at = |s: f64| {
                let mut p = x.clone();
                if l % 2 == 0 {
                    p[l / 2].re += s;
                } else {
                    p[l / 2].im += s;
                }
                ambient_structure(field, chart, &p)
            };
            dj.push((at(-2.0 * h)? - at(2.0 * h)? + (at(h)? - at(-h)?) * 8.0) / (12.0 * h));
        }
        for i in 0..dim {
            for jj in 0..dim {
                for k in 0..dim {
                    let mut nk = 0.0;
                    for l in 0..dim {
                        nk += j[(l, i)] * dj[l][(k, jj)] - j[(l, jj)] * dj[l][(k, i)];
                        nk -= j[(k, l)] * (dj[i][(l, jj)] - dj[jj][(l, i)]);
                    }
                    worst = worst.max(nk.abs());
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng, s: f64) -> C64 {
        C64::new(rng.gen_range(-s..s), rng.gen_range(-s..s))
    }

    #[test]
    fn frame_is_horizontal_and_fiber_invariant() {
        let v = [C64::new(0.3, -0.2), C64::new(-0.5, 0.4)];
        for chart in 0..3 {
            let (x, e) = frame(chart, &v, C64::new(0.7, 0.1));
            for ea in &e {
                let ip: C64 = ea.iter().zip(&x).map(|(a, b)| a * b.conj()).sum();
                assert!(ip.norm() < 1e-15);
            }
            let g1 = gram(chart, &v, C64::new(0.7, 0.1));
            let g2 = gram(chart, &v, C64::new(-0.2, 0.3));
            assert!(cmax(&(g1 - g2)) < 1e-14);
        }
    }

    #[test]
    fn zero_tensor_gives_standard_structure() {
        let v = [C64::new(0.4, 0.1)];
        let j = reconstruct_structure(&DMatrix::from_element(1, 1, c0()), 1, &v, C64::new(0.5, 0.2)).unwrap();
        assert!((j - j_standard(4)).amax() < 1e-14);
    }

    #[test]
    fn extract_inverts_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2usize, 3] {
            for _ in 0..20 {
                let d = n - 1;
                let v: Vec<C64> = (0..d).map(|_| rand_c(&mut rng, 0.6)).collect();
                let zeta = rand_c(&mut rng, 1.0);
                let chart = rng.gen_range(0..n);
                let phi = DMatrix::from_fn(d, d, |_, _| rand_c(&mut rng, 0.25));
                let j = reconstruct_structure(&phi, chart, &v, zeta).unwrap();
                assert!((&j * &j + DMatrix::identity(2 * n, 2 * n)).amax() < 1e-12);
                let back = extract_from_structure(&j, chart, &v, zeta).unwrap();
                assert!(cmax(&(back.phi - &phi)) < 1e-12);
                assert!(back.leakage < 1e-12);
            }
        }
    }

    #[test]
    fn non_contracting_tensor_is_rejected() {
        let phi = DMatrix::from_element(1, 1, C64::new(1.5, 0.0));
        let e = reconstruct_structure(&phi, 0, &[C64::new(0.1, 0.0)], C64::new(0.5, 0.0));
        assert!(matches!(e, Err(DeformationError::NotContracting { .. })));
    }

    #[test]
    fn single_mode_is_recovered() {
        let c = C64::new(0.2, -0.1);
        let field = FnTensor { n: 2, f: move |_: usize, _: &[C64], z: C64| DMatrix::from_element(1, 1, c * z * z) };
        let grid = TensorGrid::lattice(2, &[0, 1], 3, vec![0.3, 0.6, 0.9], 16);
        let t = DeformationTensor::sample(&field, &grid).unwrap();
        let m = fourier_modes(&t, 5, 1e-12).unwrap();
        for k in 0..=5 {
            let expect = if k == 2 { c.norm() } else { 0.0 };
            assert!((m.norm(k) - expect).abs() < 1e-12, "k={k}");
        }
        assert!(m.radial_deviation < 1e-12 && m.tail < 1e-12);
        let low = fourier_modes(&t, 8, 1e-12);
        assert!(matches!(low, Err(DeformationError::Resolution { .. })));
    }

    #[test]
    fn laurent_input_is_flagged() {
        let field = FnTensor { n: 2, f: |_: usize, _: &[C64], z: C64| DMatrix::from_element(1, 1, 0.01 * z.conj()) };
        let grid = TensorGrid::lattice(2, &[0], 3, vec![0.5], 8);
        let t = DeformationTensor::sample(&field, &grid).unwrap();
        assert!(matches!(fourier_modes(&t, 2, 1e-9), Err(DeformationError::NegativeFrequency { .. })));
    }

    #[test]
    fn rotation_multiplies_modes_by_phase() {
        let field = FnTensor {
            n: 2,
            f: |_: usize, v: &[C64], z: C64| DMatrix::from_element(1, 1, 0.1 * v[0].conj() + 0.2 * z * z + 0.05 * z),
        };
        let grid = TensorGrid::lattice(2, &[0], 3, vec![0.5], 8);
        let base = fourier_modes(&DeformationTensor::sample(&field, &grid).unwrap(), 3, 1e-12).unwrap();
        let theta = 0.7;
        let rot = rotate(&field, theta);
        let turned = fourier_modes(&DeformationTensor::sample(&rot, &grid).unwrap(), 3, 1e-12).unwrap();
        assert!((turned.modes.clone().into_iter().flatten().zip(base.rotate(theta).modes.into_iter().flatten()))
            .all(|(a, b)| cmax(&(a - b)) < 1e-13));
    }

    #[test]
    fn bilinear_symmetry_condition() {
        let sym = DMatrix::from_row_slice(2, 2, &[C64::new(0.1, 0.0), C64::new(0.05, 0.02), C64::new(0.05, 0.02), C64::new(-0.08, 0.0)]);
        let grid = TensorGrid::lattice(3, &[0], 3, vec![0.5], 4);
        let t = DeformationTensor::sample(&BilinearTensor { b: sym.clone() }, &grid).unwrap();
        assert!(t.symmetry_residual() < 1e-14);
        let mut skew = sym;
        skew[(0, 1)] += C64::new(0.03, 0.0);
        skew[(1, 0)] -= C64::new(0.03, 0.0);
        let t = DeformationTensor::sample(&BilinearTensor { b: skew }, &grid).unwrap();
        assert!((t.symmetry_residual() - 0.03).abs() < 1e-12);
    }

    #[test]
    fn toric_twist_is_integrable_with_nonzero_bracket() {
        let twist = ToricTwist { n: 3, beta: 0.6 }.tensor();
        let v = [C64::new(0.3, 0.2), C64::new(-0.4, 0.1)];
        let phi = twist.phi(0, &v, C64::new(0.6, 0.0)).unwrap();
        assert!(cmax(&phi) > 1e-2);
        let o = integrability_obstruction(&twist, 0, &v, C64::new(0.6, 0.3), 1e-3).unwrap();
        assert!(o.iter().all(|c| c.norm() < 1e-7), "{o:?}");
        let parts = mode_obstructions(&twist, 0, &v, 0.6, 8, 2, 1e-3).unwrap();
        let bracket = parts[0].1.iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(bracket > 1e-3);
    }

    #[test]
    fn linear_mode_structure_is_integrable_in_dimension_two() {
        let field = FnTensor { n: 2, f: |_: usize, _: &[C64], z: C64| DMatrix::from_element(1, 1, 0.3 * z) };
        let pts = vec![vec![C64::new(0.5, 0.1), C64::new(0.2, -0.1)], vec![C64::new(-0.3, 0.4), C64::new(0.1, 0.2)]];
        assert!(nijenhuis_residual(&field, 0, &pts, 1e-3).unwrap() < 1e-6);
        let bad = FnTensor { n: 2, f: |_: usize, _: &[C64], z: C64| DMatrix::from_element(1, 1, 0.3 * z.conj()) };
        assert!(nijenhuis_residual(&bad, 0, &pts, 1e-3).unwrap() > 1e-2);
    }

    #[test]
    fn mode_records_round_trip() {
        let field = FnTensor { n: 3, f: |_: usize, v: &[C64], z: C64| DMatrix::from_fn(2, 2, |a, b| v[a] * 0.1 + z * (b as f64) * 0.05) };
        let grid = TensorGrid::lattice(3, &[0, 2], 3, vec![0.5], 8);
        let m = fourier_modes(&DeformationTensor::sample(&field, &grid).unwrap(), 2, 1e-12).unwrap();
        let back = ModeSet::from_records(&m.to_records()).unwrap();
        assert_eq!(back.modes, m.modes);
        assert_eq!(back.bases, m.bases);
    }
}
