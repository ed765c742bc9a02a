//! Discrete calculus of complex-valued differential forms.
//!
//! Two paths share the pointwise [`Form`] algebra. The analytic path builds
//! `df`, `dᶜf` and `ddᶜf` from a [`Jet`] and is exact to rounding. The gridded
//! path stores samples on a regular [`Lattice`] and differentiates with
//! second-order stencils.
//!
//! Convention: `dᶜ = i(∂̄ − ∂)`, so `ddᶜ = 2i∂∂̄`, `dᶜ|z|² = 2(x dy − y dx)` and
//! `ddᶜ|z|² = 4 dx∧dy`. Real coordinates are ordered `(x₁, y₁, x₂, y₂, …)`.

use std::io::{self, BufRead, Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::jet::Jet;

pub const CONVENTION: &str = "dc = i(dbar - d), ddc = 2i d dbar, ddc|z|^2 = 4 dx^dy";

#[derive(Debug, Error, PartialEq)]
pub enum FormError {
    #[error("degree overflow: degree {degree} in dimension {dim}")]
    DegreeOverflow { degree: usize, dim: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("lattices differ")]
    MismatchedLattice,
    #[error("complex structure fails J^2 = -Id by {0:e} at node {1}")]
    NotAlmostComplex(f64, usize),
}

/// Sign of `dx_I ∧ dx_K` relative to the sorted basis element of `I ∪ K`.
fn merge_sign(a: usize, b: usize) -> f64 {
    let mut swaps = 0u32;
    let mut bb = b;
    while bb != 0 {
        let j = bb.trailing_zeros();
        swaps += (a >> (j + 1)).count_ones();
        bb &= bb - 1;
    }
    if swaps.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// A p-form at a single point of ℝ^dim, stored by basis bitmask.
#[derive(Clone, Debug, PartialEq)]
pub struct Form {
    pub dim: usize,
    pub degree: usize,
    pub c: Vec<C64>,
}

impl Form {
    pub fn zero(dim: usize, degree: usize) -> Self {
        assert!(dim <= 8);
        Form { dim, degree, c: vec![C64::new(0.0, 0.0); 1 << dim] }
    }

    pub fn scalar(dim: usize, v: C64) -> Self {
        let mut f = Self::zero(dim, 0);
        f.c[0] = v;
        f
    }

    /// The form `dx_i1 ∧ … ∧ dx_ip` for increasing indices.
    pub fn basis(dim: usize, idx: &[usize]) -> Self {
        let mut f = Self::zero(dim, idx.len());
        let mask = idx.iter().fold(0usize, |m, &i| m | (1 << i));
        f.c[mask] = C64::new(1.0, 0.0);
        f
    }

    pub fn from_one_form(coef: &[f64]) -> Self {
        let mut f = Self::zero(coef.len(), 1);
        for (i, &a) in coef.iter().enumerate() {
            f.c[1 << i] = C64::new(a, 0.0);
        }
        f
    }

    /// Builds a 2-form from an antisymmetric matrix `Ω_ij = Ω(∂_i, ∂_j)`.
    pub fn from_two_form(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let mut f = Self::zero(dim, 2);
        for i in 0..dim {
            for j in i + 1..dim {
                f.c[(1 << i) | (1 << j)] = C64::new(m[(i, j)], 0.0);
            }
        }
        f
    }

    pub fn two_form_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.degree, 2);
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                let v = self.c[(1 << i) | (1 << j)].re;
                m[(i, j)] = v;
                m[(j, i)] = -v;
            }
        }
        m
    }

    pub fn wedge(&self, o: &Form) -> Result<Form, FormError> {
        if self.dim != o.dim {
            return Err(FormError::DimensionMismatch(self.dim, o.dim));
        }
        if self.degree + o.degree > self.dim {
            return Err(FormError::DegreeOverflow { degree: self.degree + o.degree, dim: self.dim });
        }
        let mut r = Form::zero(self.dim, self.degree + o.degree);
        for (a, ca) in self.c.iter().enumerate() {
            if ca.norm_sqr() == 0.0 {
                continue;
            }
            for (b, cb) in o.c.iter().enumerate() {
                if a & b != 0 || cb.norm_sqr() == 0.0 {
                    continue;
                }
                r.c[a | b] += ca * cb * merge_sign(a, b);
            }
        }
        Ok(r)
    }

    /// Interior product `ι_X self`.
    pub fn interior(&self, x: &[f64]) -> Result<Form, FormError> {
        if x.len() != self.dim {
            return Err(FormError::DimensionMismatch(x.len(), self.dim));
        }
        if self.degree == 0 {
            return Ok(Form::zero(self.dim, 0));
        }
        let mut r = Form::zero(self.dim, self.degree - 1);
        for (a, ca) in self.c.iter().enumerate() {
            if ca.norm_sqr() == 0.0 {
                continue;
            }
            for (k, xk) in x.iter().enumerate() {
                if a & (1 << k) != 0 {
                    let before = (a & ((1 << k) - 1)).count_ones();
                    let s = if before % 2 == 0 { 1.0 } else { -1.0 };
                    r.c[a & !(1 << k)] += ca * (s * xk);
                }
            }
        }
        Ok(r)
    }

    pub fn add(&self, o: &Form) -> Form {
        assert_eq!((self.dim, self.degree), (o.dim, o.degree));
        let mut r = self.clone();
        for (a, b) in r.c.iter_mut().zip(&o.c) {
            *a += b;
        }
        r
    }

    pub fn sub(&self, o: &Form) -> Form {
        self.add(&o.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, s: C64) -> Form {
        let mut r = self.clone();
        r.c.iter_mut().for_each(|a| *a *= s);
        r
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    /// Evaluates a 2-form on a pair of vectors.
    pub fn eval2(&self, x: &[f64], y: &[f64]) -> f64 {
        let m = self.two_form_matrix();
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += x[i] * m[(i, j)] * y[j];
            }
        }
        s
    }

    /// k-th wedge power; the zeroth power is the constant 1.
    pub fn power(&self, k: usize) -> Result<Form, FormError> {
        let mut r = Form::scalar(self.dim, C64::new(1.0, 0.0));
        for _ in 0..k {
            r = r.wedge(self)?;
        }
        Ok(r)
    }
}

/// Standard complex structure `J_o` on ℝ^{2n}: `J ∂x_k = ∂y_k`.
pub fn j_standard(dim: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(dim, dim);
    for k in 0..dim / 2 {
        j[(2 * k + 1, 2 * k)] = 1.0;
        j[(2 * k, 2 * k + 1)] = -1.0;
    }
    j
}

/// Exact `df`, `dᶜf`, `ddᶜf` of a jet for the standard structure.
#[derive(Clone, Debug)]
pub struct AnalyticDerivs {
    pub value: f64,
    pub d: Form,
    pub dc: Form,
    pub ddc: Form,
}

pub fn analytic_derivs<const D: usize>(f: &Jet<D>) -> AnalyticDerivs {
    let j = j_standard(D);
    let mut dc = vec![0.0; D];
    for (jj, slot) in dc.iter_mut().enumerate() {
        *slot = -(0..D).map(|k| f.g[k] * j[(k, jj)]).sum::<f64>();
    }
    let h = DMatrix::from_fn(D, D, |a, b| f.h[a][b]);
    let hj = &h * &j;
    let omega = -&hj + hj.transpose();
    AnalyticDerivs {
        value: f.v,
        d: Form::from_one_form(&f.g),
        dc: Form::from_one_form(&dc),
        ddc: Form::from_two_form(&omega),
    }
}

/// A regular grid in ℝ^dim: `origin + h·idx` with the given shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    pub origin: Vec<f64>,
    pub h: f64,
    pub shape: Vec<usize>,
}

impl Lattice {
    /// A cube of `2·half + 1` nodes per axis centred on `center`.
    pub fn centered(center: &[f64], h: f64, half: usize) -> Self {
        Lattice {
            origin: center.iter().map(|c| c - h * half as f64).collect(),
            h,
            shape: vec![2 * half + 1; center.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn multi_index(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = lin % self.shape[a];
            lin /= self.shape[a];
        }
        idx
    }

    pub fn point(&self, lin: usize) -> Vec<f64> {
        self.multi_index(lin)
            .iter()
            .zip(&self.origin)
            .map(|(&i, o)| o + self.h * i as f64)
            .collect()
    }

    /// Second-order derivative along `axis` of nodal samples.
    fn partial(&self, vals: &[C64], lin: usize, axis: usize) -> C64 {
        let idx = self.multi_index(lin);
        let n = self.shape[axis];
        let step = self.shape[axis + 1..].iter().product::<usize>();
        let h = self.h;
        let i = idx[axis];
        if n < 3 {
            return C64::new(0.0, 0.0);
        }
        if i == 0 {
            (-3.0 * vals[lin] + 4.0 * vals[lin + step] - vals[lin + 2 * step]) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * vals[lin] - 4.0 * vals[lin - step] + vals[lin - 2 * step]) / (2.0 * h)
        } else {
            (vals[lin + step] - vals[lin - step]) / (2.0 * h)
        }
    }
}

/// A p-form sampled at every node of a lattice.
#[derive(Clone, Debug)]
pub struct FormField {
    pub lattice: Lattice,
    pub degree: usize,
    /// `comps[mask][node]`.
    pub comps: Vec<Vec<C64>>,
}

impl FormField {
    pub fn from_fn(lattice: &Lattice, degree: usize, f: impl Fn(&[f64]) -> Form) -> Self {
        let dim = lattice.dim();
        let mut comps = vec![vec![C64::new(0.0, 0.0); lattice.len()]; 1 << dim];
        for node in 0..lattice.len() {
            let form = f(&lattice.point(node));
            assert_eq!(form.degree, degree);
            for (mask, c) in form.c.iter().enumerate() {
                comps[mask][node] = *c;
            }
        }
        FormField { lattice: lattice.clone(), degree, comps }
    }

    pub fn scalar(lattice: &Lattice, f: impl Fn(&[f64]) -> f64) -> Self {
        let dim = lattice.dim();
        Self::from_fn(lattice, 0, |x| Form::scalar(dim, C64::new(f(x), 0.0)))
    }

    pub fn at(&self, node: usize) -> Form {
        let dim = self.lattice.dim();
        let mut f = Form::zero(dim, self.degree);
        for (mask, c) in f.c.iter_mut().enumerate() {
            *c = self.comps[mask][node];
        }
        f
    }

    pub fn center(&self) -> Form {
        let mid: Vec<usize> = self.lattice.shape.iter().map(|n| n / 2).collect();
        self.at(self.lattice.index(&mid))
    }

    pub fn wedge(&self, o: &FormField) -> Result<FormField, FormError> {
        if self.lattice != o.lattice {
            return Err(FormError::MismatchedLattice);
        }
        let forms: Result<Vec<Form>, _> =
            (0..self.lattice.len()).map(|n| self.at(n).wedge(&o.at(n))).collect();
        let forms = forms?;
        let degree = self.degree + o.degree;
        Ok(FormField { lattice: self.lattice.clone(), degree, comps: Vec::new() }.with_nodes(forms))
    }

    fn with_nodes(mut self, forms: Vec<Form>) -> FormField {
        let dim = self.lattice.dim();
        self.degree = forms.first().map(|f| f.degree).unwrap_or(self.degree);
        self.comps = vec![vec![C64::new(0.0, 0.0); self.lattice.len()]; 1 << dim];
        for (node, f) in forms.iter().enumerate() {
            for (mask, c) in f.c.iter().enumerate() {
                self.comps[mask][node] = *c;
            }
        }
        self
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.lattice.len()).map(|n| self.at(n).max_abs()).fold(0.0, f64::max)
    }

    /// Maximum over nodes at least `margin` away from the lattice boundary.
    pub fn interior_max_abs(&self, margin: usize) -> f64 {
        (0..self.lattice.len())
            .filter(|&n| {
                let idx = self.lattice.multi_index(n);
                idx.iter().zip(&self.lattice.shape).all(|(&i, &s)| i >= margin && i + margin < s)
            })
            .map(|n| self.at(n).max_abs())
            .fold(0.0, f64::max)
    }
}

/// Exterior derivative by second-order finite differences.
pub fn exterior_d(f: &FormField) -> Result<FormField, FormError> {
    let lat = &f.lattice;
    let dim = lat.dim();
    if f.degree >= dim {
        return Err(FormError::DegreeOverflow { degree: f.degree + 1, dim });
    }
    let mut comps = vec![vec![C64::new(0.0, 0.0); lat.len()]; 1 << dim];
    for (mask, vals) in f.comps.iter().enumerate() {
        if mask.count_ones() as usize != f.degree || vals.iter().all(|c| c.norm_sqr() == 0.0) {
            continue;
        }
        for k in 0..dim {
            if mask & (1 << k) != 0 {
                continue;
            }
            let s = merge_sign(1 << k, mask);
            let out = mask | (1 << k);
            for (node, slot) in comps[out].iter_mut().enumerate() {
                *slot += s * lat.partial(vals, node, k);
            }
        }
    }
    Ok(FormField { lattice: lat.clone(), degree: f.degree + 1, comps })
}

/// `dᶜf = −df∘J` for a 0-form and a nodewise complex structure.
pub fn dc(f: &FormField, j: &dyn Fn(&[f64]) -> DMatrix<f64>) -> Result<FormField, FormError> {
    let lat = &f.lattice;
    let dim = lat.dim();
    let df = exterior_d(f)?;
    let mut forms = Vec::with_capacity(lat.len());
    for node in 0..lat.len() {
        let jm = j(&lat.point(node));
        let defect = (&jm * &jm + DMatrix::<f64>::identity(dim, dim)).amax();
        if defect > 1e-10 {
            return Err(FormError::NotAlmostComplex(defect, node));
        }
        let d1 = df.at(node);
        let mut out = Form::zero(dim, 1);
        for b in 0..dim {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..dim {
                s += d1.c[1 << k] * jm[(k, b)];
            }
            out.c[1 << b] = -s;
        }
        forms.push(out);
    }
    Ok(FormField { lattice: lat.clone(), degree: 1, comps: Vec::new() }.with_nodes(forms))
}

/// Interior product of a constant vector with a field.
pub fn interior(x: &[f64], a: &FormField) -> Result<FormField, FormError> {
    let forms: Result<Vec<Form>, _> = (0..a.lattice.len()).map(|n| a.at(n).interior(x)).collect();
    let forms = forms?;
    let degree = a.degree.saturating_sub(1);
    let mut out = FormField { lattice: a.lattice.clone(), degree, comps: Vec::new() }.with_nodes(forms);
    out.degree = degree;
    Ok(out)
}

/// Integrates a top-degree field over its lattice box (trapezoid rule).
pub fn integrate(a: &FormField) -> Result<C64, FormError> {
    let dim = a.lattice.dim();
    if a.degree != dim {
        return Err(FormError::DegreeOverflow { degree: a.degree, dim });
    }
    let top = (1 << dim) - 1;
    let mut s = C64::new(0.0, 0.0);
    for node in 0..a.lattice.len() {
        let idx = a.lattice.multi_index(node);
        let w: f64 = idx
            .iter()
            .zip(&a.lattice.shape)
            .map(|(&i, &n)| if i == 0 || i + 1 == n { 0.5 } else { 1.0 })
            .product();
        s += a.comps[top][node] * w;
    }
    Ok(s * a.lattice.h.powi(dim as i32))
}

/// Smooth step: 0 for `x ≤ 0`, 1 for `x ≥ 1`, C^∞ in between.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

/// Affine charts of ℂP^{n−1} with a regular base grid and a polar fiber grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartAtlas {
    pub n: usize,
    /// Nodes per real axis of each chart's base box `[−half_width, half_width]`.
    pub n_v: usize,
    pub half_width: f64,
    pub n_r: usize,
    pub n_theta: usize,
    /// Outer fiber radius; radii are `r_max·(i+1)/n_r`.
    pub r_max: f64,
}

pub const OVERLAP_INNER: f64 = 0.8;
pub const OVERLAP_OUTER: f64 = 1.25;

#[derive(Debug, Error, PartialEq)]
pub enum AtlasError {
    #[error("n must be 2 or 3, got {0}")]
    Dimension(usize),
    #[error("N_theta must be a power of two, got {0}")]
    ThetaNotPowerOfTwo(usize),
    #[error("base grid needs at least 3 nodes per axis, got {0}")]
    BaseGrid(usize),
    #[error("fiber grid needs at least one radius")]
    FiberGrid,
}

impl ChartAtlas {
    pub fn new(n: usize, n_v: usize, n_r: usize, n_theta: usize) -> Result<Self, AtlasError> {
        if !(2..=3).contains(&n) {
            return Err(AtlasError::Dimension(n));
        }
        if !n_theta.is_power_of_two() {
            return Err(AtlasError::ThetaNotPowerOfTwo(n_theta));
        }
        if n_v < 3 {
            return Err(AtlasError::BaseGrid(n_v));
        }
        if n_r == 0 {
            return Err(AtlasError::FiberGrid);
        }
        Ok(ChartAtlas { n, n_v, half_width: 1.3, n_r, n_theta, r_max: 0.9 })
    }

    pub fn charts(&self) -> usize {
        self.n
    }

    pub fn base_dim(&self) -> usize {
        2 * (self.n - 1)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n_v - 1) as f64
    }

    pub fn base_lattice(&self) -> Lattice {
        Lattice {
            origin: vec![-self.half_width; self.base_dim()],
            h: self.spacing(),
            shape: vec![self.n_v; self.base_dim()],
        }
    }

    pub fn base_nodes(&self) -> usize {
        self.base_lattice().len()
    }

    /// Base coordinates of a node as complex numbers `v¹ … v^{n−1}`.
    pub fn base_point(&self, node: usize) -> Vec<C64> {
        let p = self.base_lattice().point(node);
        p.chunks(2).map(|c| C64::new(c[0], c[1])).collect()
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..self.n_r).map(|i| self.r_max * (i + 1) as f64 / self.n_r as f64).collect()
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.n_theta)
            .map(|k| 2.0 * std::f64::consts::PI * k as f64 / self.n_theta as f64)
            .collect()
    }

    /// Partition-of-unity weight of `chart` at the point `[z]`.
    pub fn overlap_weight(chart: usize, z: &[C64]) -> f64 {
        let zmax = z.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let raw = |c: usize| {
            let ratio = z[c].norm() / zmax;
            smooth_step((ratio - OVERLAP_INNER) / (1.0 - OVERLAP_INNER))
        };
        let total: f64 = (0..z.len()).map(raw).sum();
        raw(chart) / total
    }

    /// Integrates a top-degree density on ℂP^{n−1}. `density(chart, v)` is
    /// the coefficient of `dx¹∧dy¹∧…` in that chart.
    ///
    /// On ℂP¹ each chart is integrated in polar coordinates with Gauss panels
    /// split at the overlap radii, which resolves the partition of unity far
    /// better than the base lattice could. On ℂP² the base lattice is used.
    pub fn integrate_top(&self, density: &(dyn Fn(usize, &[C64]) -> f64 + Sync)) -> f64 {
        use rayon::prelude::*;
        if self.n == 2 {
            let (gx, gw) = gauss_legendre(32);
            let n_ang = 128;
            let panels = [(0.0, OVERLAP_INNER), (OVERLAP_INNER, 1.0), (1.0, OVERLAP_OUTER)];
            let mut nodes = Vec::new();
            for &(a, b) in &panels {
                for (x, w) in gx.iter().zip(&gw) {
                    nodes.push((0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w));
                }
            }
            return (0..2)
                .map(|chart| {
                    nodes
                        .par_iter()
                        .map(|&(r, wr)| {
                            let mut s = 0.0;
                            for k in 0..n_ang {
                                let th = 2.0 * std::f64::consts::PI * k as f64 / n_ang as f64;
                                let v = [C64::from_polar(r, th)];
                                let w = Self::overlap_weight(chart, &embed(chart, &v));
                                if w > 0.0 {
                                    s += w * density(chart, &v);
                                }
                            }
                            s * r * wr * 2.0 * std::f64::consts::PI / n_ang as f64
                        })
                        .collect::<Vec<f64>>()
                        .into_iter()
                        .sum::<f64>()
                })
                .sum();
        }
        let lat = self.base_lattice();
        let vol = lat.h.powi(lat.dim() as i32);
        (0..self.charts())
            .map(|chart| {
                (0..lat.len())
                    .into_par_iter()
                    .map(|node| {
                        let v = self.base_point(node);
                        let w = Self::overlap_weight(chart, &embed(chart, &v));
                        if w == 0.0 {
                            0.0
                        } else {
                            w * density(chart, &v)
                        }
                    })
                    .collect::<Vec<f64>>()
                    .into_iter()
                    .sum::<f64>()
                    * vol
            })
            .sum()
    }
}

/// Catmull–Rom bicubic interpolation of row-major samples on the square
/// `[-half_width, half_width]²` with `n` nodes per side; the first index
/// runs along `Re v`.
pub fn bicubic(data: &[f64], n: usize, half_width: f64, v: C64) -> f64 {
    let h = 2.0 * half_width / (n - 1) as f64;
    let fx = (v.re + half_width) / h;
    let fy = (v.im + half_width) / h;
    let ni = n as isize;
    let ix = (fx.floor() as isize).clamp(1, ni - 3);
    let iy = (fy.floor() as isize).clamp(1, ni - 3);
    let (tx, ty) = (fx - ix as f64, fy - iy as f64);
    let w = |t: f64| {
        [
            0.5 * (-t * t * t + 2.0 * t * t - t),
            0.5 * (3.0 * t * t * t - 5.0 * t * t + 2.0),
            0.5 * (-3.0 * t * t * t + 4.0 * t * t + t),
            0.5 * (t * t * t - t * t),
        ]
    };
    let (wx, wy) = (w(tx), w(ty));
    let mut s = 0.0;
    for (a, wa) in wx.iter().enumerate() {
        for (b, wb) in wy.iter().enumerate() {
            let i = (ix - 1 + a as isize) as usize;
            let j = (iy - 1 + b as isize) as usize;
            s += wa * wb * data[i * n + j];
        }
    }
    s
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[i] = t;
        w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

/// Homogeneous representative of chart coordinates: `1` in slot `chart`.
pub fn embed(chart: usize, v: &[C64]) -> Vec<C64> {
    let mut z = Vec::with_capacity(v.len() + 1);
    let mut it = v.iter();
    for i in 0..=v.len() {
        if i == chart {
            z.push(C64::new(1.0, 0.0));
        } else {
            z.push(*it.next().unwrap());
        }
    }
    z
}

/// One record of the grid dump format.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRecord {
    pub chart: usize,
    pub shape: Vec<usize>,
    pub data: Vec<C64>,
}

const BINARY_MAGIC: &[u8; 4] = b"MAFD";

pub fn write_records_text(w: &mut dyn Write, records: &[GridRecord]) -> io::Result<()> {
    for r in records {
        writeln!(w, "chart {}", r.chart)?;
        let shape: Vec<String> = r.shape.iter().map(|s| s.to_string()).collect();
        writeln!(w, "shape {}", shape.join(" "))?;
        for c in &r.data {
            writeln!(w, "{:.17e} {:.17e}", c.re, c.im)?;
        }
    }
    Ok(())
}

pub fn write_records_binary(w: &mut dyn Write, records: &[GridRecord]) -> io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        w.write_all(&(r.chart as u32).to_le_bytes())?;
        w.write_all(&(r.shape.len() as u32).to_le_bytes())?;
        for s in &r.shape {
            w.write_all(&(*s as u64).to_le_bytes())?;
        }
        for c in &r.data {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn bad(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn read_records_text(r: &mut dyn BufRead) -> io::Result<Vec<GridRecord>> {
    let mut out = Vec::new();
    let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(s) if s.trim().is_empty() || s.trim_start().starts_with('#') => None,
        other => Some((i + 1, other)),
    });
    while let Some((ln, line)) = lines.next() {
        let line = line?;
        let chart = line
            .strip_prefix("chart ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(format!("line {ln}: expected `chart <id>`")))?;
        let (ln, line) = lines.next().ok_or_else(|| bad("missing shape line".into()))?;
        let line = line?;
        let shape: Vec<usize> = line
            .strip_prefix("shape ")
            .map(|s| s.split_whitespace().map(|t| t.parse()).collect::<Result<_, _>>())
            .transpose()
            .map_err(|e| bad(format!("line {ln}: {e}")))?
            .ok_or_else(|| bad(format!("line {ln}: expected `shape …`")))?;
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, line) = lines.next().ok_or_else(|| bad("truncated data".into()))?;
            let line = line?;
            let mut it = line.split_whitespace().map(|t| t.parse::<f64>());
            match (it.next(), it.next()) {
                (Some(Ok(re)), Some(Ok(im))) => data.push(C64::new(re, im)),
                _ => return Err(bad(format!("line {ln}: expected two numbers"))),
            }
        }
        out.push(GridRecord { chart, shape, data });
    }
    Ok(out)
}

pub fn read_records_binary(r: &mut dyn Read) -> io::Result<Vec<GridRecord>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u32b)?;
    let n = u32::from_le_bytes(u32b) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut u32b)?;
        let chart = u32::from_le_bytes(u32b) as usize;
        r.read_exact(&mut u32b)?;
        let nd = u32::from_le_bytes(u32b) as usize;
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            r.read_exact(&mut u64b)?;
            shape.push(u64::from_le_bytes(u64b) as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut u64b)?;
            let re = f64::from_le_bytes(u64b);
            r.read_exact(&mut u64b)?;
            data.push(C64::new(re, f64::from_le_bytes(u64b)));
        }
        out.push(GridRecord { chart, shape, data });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn calibration_on_the_plane() {
        let (x, y) = (0.3, -0.8);
        let v = Jet::<2>::vars(&[x, y]);
        let f = v[0] * v[0] + v[1] * v[1];
        let a = analytic_derivs(&f);
        assert_eq!(a.d.c[1], c(2.0 * x));
        assert_eq!(a.d.c[2], c(2.0 * y));
        assert_eq!(a.dc.c[1], c(-2.0 * y));
        assert_eq!(a.dc.c[2], c(2.0 * x));
        assert_eq!(a.ddc.c[3], c(4.0));
    }

    #[test]
    fn log_modulus_is_harmonic() {
        let v = Jet::<2>::vars(&[0.7, 0.2]);
        let f = (v[0] * v[0] + v[1] * v[1]).ln();
        assert!(analytic_derivs(&f).ddc.max_abs() < 1e-14);
    }

    #[test]
    fn gridded_d_of_rotation_form() {
        let lat = Lattice::centered(&[0.1, 0.2], 0.05, 3);
        let f = FormField::from_fn(&lat, 1, |p| {
            let mut f = Form::zero(2, 1);
            f.c[1] = c(-p[1]);
            f.c[2] = c(p[0]);
            f
        });
        let d = exterior_d(&f).unwrap();
        assert!((d.center().c[3] - c(2.0)).norm() < 1e-12);
    }

    #[test]
    fn gridded_ddc_of_modulus_squared() {
        let lat = Lattice::centered(&[0.4, -0.1], 0.01, 2);
        let f = FormField::scalar(&lat, |p| p[0] * p[0] + p[1] * p[1]);
        let ddc = exterior_d(&dc(&f, &|_| j_standard(2)).unwrap()).unwrap();
        assert!((ddc.center().c[3] - c(4.0)).norm() < 1e-9);
    }

    #[test]
    fn dd_is_second_order_small() {
        let field = |h: f64| {
            let lat = Lattice::centered(&[0.2, 0.3, -0.1], h, 3);
            let f = FormField::from_fn(&lat, 1, |p| {
                let mut f = Form::zero(3, 1);
                f.c[1] = c((p[0] * p[1]).sin());
                f.c[2] = c((p[2] + p[0] * p[0]).exp());
                f.c[4] = c(p[1].cos() * p[2]);
                f
            });
            exterior_d(&exterior_d(&f).unwrap()).unwrap().interior_max_abs(2)
        };
        let (e1, e2) = (field(0.02), field(0.01));
        assert!(e1 < 1e-10 && e2 < 1e-10, "{e1} {e2}");
    }

    #[test]
    fn leibniz_rule_holds_to_second_order() {
        let err = |h: f64| {
            let lat = Lattice::centered(&[0.1, 0.4], h, 3);
            let a = FormField::from_fn(&lat, 1, |p| {
                let mut f = Form::zero(2, 1);
                f.c[1] = c(p[0] * p[1].exp());
                f.c[2] = c(p[0].sin());
                f
            });
            let b = FormField::scalar(&lat, |p| (p[0] - p[1] * p[1]).cos());
            let lhs = exterior_d(&a.wedge(&b).unwrap()).unwrap();
            let rhs1 = exterior_d(&a).unwrap().wedge(&b).unwrap();
            let rhs2 = a.wedge(&exterior_d(&b).unwrap()).unwrap();
            (lhs.center().sub(&rhs1.center()).add(&rhs2.center())).max_abs()
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 / e2 > 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn wedge_and_interior_basics() {
        let dxdy = Form::basis(2, &[0, 1]);
        let one = Form::scalar(2, c(1.0));
        assert_eq!(dxdy.wedge(&one).unwrap(), dxdy);
        assert_eq!(dxdy.interior(&[1.0, 0.0]).unwrap(), Form::basis(2, &[1]));
        let dy_dx = Form::basis(2, &[1]).wedge(&Form::basis(2, &[0])).unwrap();
        assert_eq!(dy_dx, dxdy.scale(c(-1.0)));
        assert!(matches!(dxdy.wedge(&dxdy), Err(FormError::DegreeOverflow { .. })));
    }

    #[test]
    fn fubini_study_area() {
        let atlas = ChartAtlas::new(2, 65, 4, 16).unwrap();
        let area = atlas.integrate_top(&|_, v| 4.0 / (1.0 + v[0].norm_sqr()).powi(2));
        assert!((area - 4.0 * PI).abs() < 1e-9, "{area}");
        let (x, w) = gauss_legendre(5);
        let quartic: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((quartic - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn overlap_weights_sum_to_one() {
        for &(a, b) in &[(1.0, 0.1), (1.0, 0.9), (0.9, 1.0), (0.3, 1.0), (1.0, 1.0)] {
            let z = [C64::new(a, 0.0), C64::new(0.0, b)];
            let s: f64 = (0..2).map(|ch| ChartAtlas::overlap_weight(ch, &z)).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        let z = [c(1.0), c(0.5)];
        assert_eq!(ChartAtlas::overlap_weight(0, &z), 1.0);
    }

    #[test]
    fn dump_round_trips() {
        let recs = vec![GridRecord {
            chart: 1,
            shape: vec![2, 2],
            data: vec![C64::new(0.1, -2.0), c(1.0 / 3.0), C64::new(1e-300, 5.0), c(-0.0)],
        }];
        let mut t = Vec::new();
        write_records_text(&mut t, &recs).unwrap();
        assert_eq!(read_records_text(&mut t.as_slice()).unwrap(), recs);
        let mut b = Vec::new();
        write_records_binary(&mut b, &recs).unwrap();
        assert_eq!(read_records_binary(&mut b.as_slice()).unwrap(), recs);
    }

    #[test]
    fn rejects_bad_theta() {
        assert_eq!(ChartAtlas::new(2, 9, 4, 12), Err(AtlasError::ThetaNotPowerOfTwo(12)));
    }
}
