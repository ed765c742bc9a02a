//! Complete circular domains described by Minkowski data, their exhaustions,
//! the indicatrix and blow-up coordinate bookkeeping.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::field_kernel::{bicubic, embed, j_standard, ChartAtlas, GridRecord};
use crate::jet::{CJet, Jet};

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("Minkowski function not positive ({value:e}) at chart {chart}, v = {v:?}")]
    NonPositive { chart: usize, v: Vec<C64>, value: f64 },
    #[error("pseudoconvexity witness fails at z = {z:?}: smallest Levi eigenvalue {eigenvalue:e}")]
    NotPseudoconvex { z: Vec<C64>, eigenvalue: f64 },
    #[error("unsupported parameters: {0}")]
    Unsupported(String),
    #[error("radial fit residual {residual:e} above tolerance at chart {chart}, v = {v:?}")]
    NonConvergentLimit { chart: usize, v: Vec<C64>, residual: f64 },
    #[error("the origin has no blow-up coordinates")]
    Origin,
}

/// Chart-wise samples of `m²` on the atlas base lattice (ℂP¹ only).
#[derive(Clone, Debug, PartialEq)]
pub struct GridMinkowski {
    pub n_v: usize,
    pub half_width: f64,
    /// `m2[chart][row-major node]`.
    pub m2: Vec<Vec<f64>>,
}

impl GridMinkowski {
    /// Samples a closed-form field on the atlas base grids.
    pub fn sample(field: &MinkowskiField, atlas: &ChartAtlas) -> Self {
        let m2 = (0..2)
            .map(|c| (0..atlas.base_nodes()).map(|k| field.m2(c, &atlas.base_point(k))).collect())
            .collect();
        GridMinkowski { n_v: atlas.n_v, half_width: atlas.half_width, m2 }
    }

    pub fn from_records(records: &[GridRecord]) -> Result<Self, DomainError> {
        if records.len() != 2 {
            return Err(DomainError::Unsupported("grid Minkowski data needs two chart records".into()));
        }
        let n_v = records[0].shape[0];
        let mut m2 = vec![Vec::new(); 2];
        for r in records {
            if r.chart > 1 || r.shape != vec![n_v, n_v] {
                return Err(DomainError::Unsupported("grid records must be square chart 0/1 arrays".into()));
            }
            m2[r.chart] = r.data.iter().map(|c| c.re * c.re).collect();
        }
        Ok(GridMinkowski { n_v, half_width: 1.3, m2 })
    }

    pub fn to_records(&self) -> Vec<GridRecord> {
        (0..2)
            .map(|c| GridRecord {
                chart: c,
                shape: vec![self.n_v, self.n_v],
                data: self.m2[c].iter().map(|v| C64::new(v.sqrt(), 0.0)).collect(),
            })
            .collect()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n_v - 1) as f64
    }

    /// Catmull–Rom bicubic interpolation of `m²`.
    pub fn m2(&self, chart: usize, v: C64) -> f64 {
        bicubic(&self.m2[chart], self.n_v, self.half_width, v)
    }
}

/// The registered Minkowski functions.
#[derive(Clone, Debug, PartialEq)]
pub enum MuKind {
    Ball,
    /// `μ² = Σ aᵢ|zⁱ|²`.
    Ellipsoid(Vec<f64>),
    /// `μ = |z|(1 + ε q(z/|z|))` with `q = q₀(|u¹|²−|u²|²) + 2q₁Re(u¹ū²) + 2q₂Im(u¹ū²)`.
    PerturbedBall { eps: f64, q: [f64; 3] },
    Grid(GridMinkowski),
    /// `μ_t = (1 − t)μ + t|z|`, the straight path towards the ball.
    Blend { base: Box<MinkowskiField>, t: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinkowskiField {
    pub n: usize,
    pub kind: MuKind,
}

impl MinkowskiField {
    pub fn ball(n: usize) -> Self {
        MinkowskiField { n, kind: MuKind::Ball }
    }

    pub fn ellipsoid(coef: Vec<f64>) -> Self {
        MinkowskiField { n: coef.len(), kind: MuKind::Ellipsoid(coef) }
    }

    pub fn perturbed_ball(n: usize, eps: f64, q: [f64; 3]) -> Self {
        MinkowskiField { n, kind: MuKind::PerturbedBall { eps, q } }
    }

    pub fn is_analytic(&self) -> bool {
        match &self.kind {
            MuKind::Grid(_) => false,
            MuKind::Blend { base, .. } => base.is_analytic(),
            _ => true,
        }
    }

    pub fn blend_to_ball(&self, t: f64) -> Self {
        MinkowskiField { n: self.n, kind: MuKind::Blend { base: Box::new(self.clone()), t } }
    }

    /// Short tag used in report headers.
    pub fn tag(&self) -> String {
        match &self.kind {
            MuKind::Ball => "ball".into(),
            MuKind::Ellipsoid(a) => format!("ellipsoid{a:?}"),
            MuKind::PerturbedBall { eps, q } => format!("perturbed_ball(eps={eps}, q={q:?})"),
            MuKind::Grid(g) => format!("grid(N_v={})", g.n_v),
            MuKind::Blend { base, t } => format!("blend({}, t={t})", base.tag()),
        }
    }

    /// `μ²` of a point given by jets of its complex coordinates.
    pub fn mu2_jet<const D: usize>(&self, z: &[CJet<D>]) -> Option<Jet<D>> {
        let s = z.iter().fold(Jet::constant(0.0), |acc, c| acc + c.norm_sqr());
        match &self.kind {
            MuKind::Ball => Some(s),
            MuKind::Ellipsoid(a) => {
                Some(z.iter().zip(a).fold(Jet::constant(0.0), |acc, (c, &ai)| acc + c.norm_sqr() * ai))
            }
            MuKind::PerturbedBall { eps, q } => {
                let p = z[0] * z[1].conj();
                let quad = (z[0].norm_sqr() - z[1].norm_sqr()) * q[0] + p.re * (2.0 * q[1]) + p.im * (2.0 * q[2]);
                let t = s + quad * *eps;
                Some(t * t / s)
            }
            MuKind::Grid(_) => None,
            MuKind::Blend { base, t } => {
                let b = base.mu2_jet(z)?.sqrt() * (1.0 - t) + s.sqrt() * *t;
                Some(b * b)
            }
        }
    }

    /// `μ²(z)` for a plain point.
    pub fn mu2(&self, z: &[C64]) -> f64 {
        if let MuKind::Grid(g) = &self.kind {
            let (chart, v, zeta) = match blowup_coords(z) {
                Ok(b) => b,
                Err(_) => return 0.0,
            };
            return zeta.norm_sqr() * g.m2(chart, v[0]);
        }
        if let MuKind::Blend { base, t } = &self.kind {
            let r = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            return ((1.0 - t) * base.mu(z) + t * r).powi(2);
        }
        let zj: Vec<CJet<1>> = z.iter().map(|c| CJet::constant(c.re, c.im)).collect();
        self.mu2_jet(&zj).unwrap().v
    }

    pub fn mu(&self, z: &[C64]) -> f64 {
        self.mu2(z).sqrt()
    }

    /// `m(v)² = μ(embed(chart, v))²`.
    pub fn m2(&self, chart: usize, v: &[C64]) -> f64 {
        if let MuKind::Grid(g) = &self.kind {
            return g.m2(chart, v[0]);
        }
        self.mu2(&embed(chart, v))
    }

    pub fn m(&self, chart: usize, v: &[C64]) -> f64 {
        self.m2(chart, v).sqrt()
    }

    /// Jet of `m²` in the real base coordinates of a chart.
    pub fn m2_jet<const D: usize>(&self, chart: usize, v: &[f64; D]) -> Option<Jet<D>> {
        let x = Jet::<D>::vars(v);
        let mut z = Vec::with_capacity(D / 2 + 1);
        let mut k = 0;
        for i in 0..=D / 2 {
            if i == chart {
                z.push(CJet::constant(1.0, 0.0));
            } else {
                z.push(CJet::new(x[2 * k], x[2 * k + 1]));
                k += 1;
            }
        }
        self.mu2_jet(&z)
    }

    /// Smallest eigenvalue of the complex Hessian `∂²μ²/∂zⁱ∂z̄ʲ` at `z`.
    pub fn levi_min_eigenvalue(&self, z: &[C64]) -> f64 {
        let n = self.n;
        let dim = 2 * n;
        let hess = if self.is_analytic() {
            levi_hessian_jet(self, z)
        } else {
            levi_hessian_fd(|p| self.mu2(p), z)
        };
        let j = j_standard(dim);
        let omega = -&hess * &j + (&hess * &j).transpose();
        let s = omega * &j;
        let sym = (&s + s.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.min() / 4.0
    }

    /// Positivity and strict pseudoconvexity checks at the atlas sample points.
    pub fn validate(&self, atlas: &ChartAtlas) -> Result<(), DomainError> {
        for chart in 0..self.n {
            for node in 0..atlas.base_nodes() {
                let v = atlas.base_point(node);
                if v.iter().any(|c| c.norm() > 1.0) {
                    continue;
                }
                let m2 = self.m2(chart, &v);
                if !(m2 > 0.0) {
                    return Err(DomainError::NonPositive { chart, v, value: m2 });
                }
                let z = embed(chart, &v);
                let ev = self.levi_min_eigenvalue(&z);
                if !(ev > 0.0) {
                    return Err(DomainError::NotPseudoconvex { z, eigenvalue: ev });
                }
            }
        }
        Ok(())
    }
}

fn levi_hessian_jet(mu: &MinkowskiField, z: &[C64]) -> DMatrix<f64> {
    match z.len() {
        2 => {
            let x = Jet::<4>::vars(&[z[0].re, z[0].im, z[1].re, z[1].im]);
            let zz = [CJet::new(x[0], x[1]), CJet::new(x[2], x[3])];
            let f = mu.mu2_jet(&zz).unwrap();
            DMatrix::from_fn(4, 4, |a, b| f.h[a][b])
        }
        3 => {
            let x = Jet::<6>::vars(&[z[0].re, z[0].im, z[1].re, z[1].im, z[2].re, z[2].im]);
            let zz = [CJet::new(x[0], x[1]), CJet::new(x[2], x[3]), CJet::new(x[4], x[5])];
            let f = mu.mu2_jet(&zz).unwrap();
            DMatrix::from_fn(6, 6, |a, b| f.h[a][b])
        }
        n => panic!("unsupported dimension {n}"),
    }
}

pub fn levi_hessian_fd(f: impl Fn(&[C64]) -> f64, z: &[C64]) -> DMatrix<f64> {
    let dim = 2 * z.len();
    let h = 1e-4;
    let shift = |p: &[C64], k: usize, d: f64| {
        let mut q = p.to_vec();
        if k.is_multiple_of(2) {
            q[k / 2].re += d;
        } else {
            q[k / 2].im += d;
        }
        q
    };
    DMatrix::from_fn(dim, dim, |a, b| {
        let pp = shift(&shift(z, a, h), b, h);
        let pm = shift(&shift(z, a, h), b, -h);
        let mp = shift(&shift(z, a, -h), b, h);
        let mm = shift(&shift(z, a, -h), b, -h);
        (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h * h)
    })
}

/// Validates a Minkowski specification and returns it with its exhaustion.
pub fn make_circular_domain(
    mu: MinkowskiField,
    atlas: &ChartAtlas,
) -> Result<(MinkowskiField, ExhaustionField), DomainError> {
    if let MuKind::Ellipsoid(a) = &mu.kind {
        if a.len() != mu.n || a.iter().any(|&x| !(x > 0.0)) {
            return Err(DomainError::Unsupported(format!("ellipsoid coefficients {a:?}")));
        }
    }
    if matches!(mu.kind, MuKind::PerturbedBall { .. } | MuKind::Grid(_)) && mu.n != 2 {
        return Err(DomainError::Unsupported("this Minkowski kind is defined for n = 2".into()));
    }
    mu.validate(atlas)?;
    let tau = ExhaustionField::circular(mu.clone());
    Ok((mu, tau))
}

/// Parabolic exhaustions known to the toolkit.
#[derive(Clone, Debug, PartialEq)]
pub enum ExhaustionKind {
    /// `τ = μ²`.
    Circular(MinkowskiField),
    /// `τ = |z¹|² + |z²|² + |z²|⁴`, whose Monge–Ampère residual is of order `|z²|⁴`.
    NonMongeAmpere,
    /// `τ̃ = |ζ|²m(v)² + |ζ|³·c` in blow-up coordinates of every chart.
    CubicPerturbation { mu: MinkowskiField, c: f64 },
    /// `τ̃ = |ζ|²κ(v)²` for a previously extracted indicatrix.
    KappaSquared(Box<IndicatrixField>),
}

/// The exhaustion `τ̃` on blow-up coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ExhaustionField {
    pub n: usize,
    pub kind: ExhaustionKind,
}

impl ExhaustionField {
    pub fn circular(mu: MinkowskiField) -> Self {
        ExhaustionField { n: mu.n, kind: ExhaustionKind::Circular(mu) }
    }

    pub fn non_monge_ampere() -> Self {
        ExhaustionField { n: 2, kind: ExhaustionKind::NonMongeAmpere }
    }

    pub fn is_analytic(&self) -> bool {
        match &self.kind {
            ExhaustionKind::Circular(mu) | ExhaustionKind::CubicPerturbation { mu, .. } => mu.is_analytic(),
            ExhaustionKind::NonMongeAmpere => true,
            ExhaustionKind::KappaSquared(_) => false,
        }
    }

    /// `τ̃` as a jet in blow-up coordinates `(Re v¹, Im v¹, …, Re ζ, Im ζ)`.
    pub fn tau_jet<const D: usize>(&self, chart: usize, x: &[f64; D]) -> Option<Jet<D>> {
        let xs = Jet::<D>::vars(x);
        let zeta = CJet::new(xs[D - 2], xs[D - 1]);
        let mut z = Vec::with_capacity(D / 2);
        let mut k = 0;
        for i in 0..D / 2 {
            if i == chart {
                z.push(zeta);
            } else {
                z.push(zeta * CJet::new(xs[2 * k], xs[2 * k + 1]));
                k += 1;
            }
        }
        match &self.kind {
            ExhaustionKind::Circular(mu) => mu.mu2_jet(&z),
            ExhaustionKind::NonMongeAmpere => {
                let b = z[1].norm_sqr();
                Some(z[0].norm_sqr() + b + b * b)
            }
            ExhaustionKind::CubicPerturbation { mu, c } => {
                let r2 = zeta.norm_sqr();
                Some(mu.mu2_jet(&z)? + r2 * r2.sqrt() * *c)
            }
            ExhaustionKind::KappaSquared(_) => None,
        }
    }

    /// `τ̃(chart, v, ζ)` for plain values.
    pub fn tau(&self, chart: usize, v: &[C64], zeta: C64) -> f64 {
        match &self.kind {
            ExhaustionKind::Circular(mu) => zeta.norm_sqr() * mu.m2(chart, v),
            ExhaustionKind::CubicPerturbation { mu, c } => {
                zeta.norm_sqr() * mu.m2(chart, v) + c * zeta.norm().powi(3)
            }
            ExhaustionKind::NonMongeAmpere => {
                let z = blowup_inverse(chart, v, zeta);
                let b = z[1].norm_sqr();
                z[0].norm_sqr() + b + b * b
            }
            ExhaustionKind::KappaSquared(ind) => zeta.norm_sqr() * ind.fit(chart, v).kappa.powi(2),
        }
    }
}

/// Forward blow-up coordinates: chart of the largest-modulus coordinate.
pub fn blowup_coords(z: &[C64]) -> Result<(usize, Vec<C64>, C64), DomainError> {
    let mut chart = 0;
    for (i, c) in z.iter().enumerate() {
        if c.norm() > z[chart].norm() {
            chart = i;
        }
    }
    let zeta = z[chart];
    if zeta.norm() == 0.0 {
        return Err(DomainError::Origin);
    }
    let v = z.iter().enumerate().filter(|(i, _)| *i != chart).map(|(_, c)| c / zeta).collect();
    Ok((chart, v, zeta))
}

pub fn blowup_inverse(chart: usize, v: &[C64], zeta: C64) -> Vec<C64> {
    embed(chart, v).into_iter().map(|c| c * zeta).collect()
}

/// The indicatrix `κ` extracted from an exhaustion by radial fits.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatrixField {
    pub tau: ExhaustionField,
    pub radii: Vec<f64>,
    pub fit_tol: f64,
}

/// Result of the radial fit at one direction.
#[derive(Clone, Copy, Debug)]
pub struct RadialFit {
    pub kappa: f64,
    pub residual: f64,
}

impl IndicatrixField {
    /// `κ` of a point of `ℂⁿ` by homogeneity from the fitted angular factor.
    pub fn kappa(&self, w: &[C64]) -> Result<f64, DomainError> {
        let (chart, v, zeta) = blowup_coords(w)?;
        Ok(zeta.norm() * self.fit(chart, &v).kappa)
    }

    /// Least-squares fit of `√τ̃` against `r = |ζ|` through the origin with
    /// quadratic and cubic correction terms.
    pub fn fit(&self, chart: usize, v: &[C64]) -> RadialFit {
        let rs = &self.radii;
        let ys: Vec<f64> = rs.iter().map(|&r| self.tau.tau(chart, v, C64::new(r, 0.0)).sqrt()).collect();
        let a = DMatrix::from_fn(rs.len(), 3, |i, j| rs[i].powi(j as i32 + 1));
        let y = nalgebra::DVector::from_vec(ys.clone());
        let coef = a.clone().svd(true, true).solve(&y, 1e-14).expect("radial fit");
        let residual = (a * &coef - y).amax();
        RadialFit { kappa: coef[0], residual }
    }
}

/// Builds the indicatrix from the four smallest fiber radii of the atlas.
pub fn indicatrix_from_exhaustion(
    tau: &ExhaustionField,
    atlas: &ChartAtlas,
    fit_tol: f64,
) -> Result<IndicatrixField, DomainError> {
    let mut radii = atlas.radii();
    radii.truncate(4);
    let ind = IndicatrixField { tau: tau.clone(), radii, fit_tol };
    for chart in 0..tau.n {
        for node in (0..atlas.base_nodes()).step_by(7) {
            let v = atlas.base_point(node);
            if v.iter().any(|c| c.norm() > 1.0) {
                continue;
            }
            let fit = ind.fit(chart, &v);
            if fit.residual > fit_tol || !(fit.kappa > 0.0) {
                return Err(DomainError::NonConvergentLimit { chart, v, residual: fit.residual });
            }
        }
    }
    Ok(ind)
}

impl fmt::Display for MinkowskiField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} mu={}", self.n, self.tag())
    }
}
