//! The Monge–Ampère vector field `Z`, the splitting `𝒵 ⊕ ℋ`, the identity
//! checks of a parabolic exhaustion, and radial leaf tracing.
//!
//! All nodewise work happens in blow-up coordinates `(v, ζ)`, where the
//! standard complex structure is again the constant `J_o`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::domain_model::{blowup_inverse, ExhaustionField};
use crate::field_kernel::{
    analytic_derivs, dc, exterior_d, j_standard, write_records_text, ChartAtlas, Form, FormField, GridRecord, Lattice,
};
use crate::jet::Jet;

#[derive(Debug, Error, PartialEq)]
pub enum FoliationError {
    #[error("ddc tau is singular at chart {chart}, x = {x:?}")]
    Singular { chart: usize, x: Vec<f64> },
    #[error("defining residual {residual:e} of Z above tolerance at chart {chart}, x = {x:?}")]
    Residual { chart: usize, x: Vec<f64>, residual: f64 },
    #[error("exhaustion has no closed form; use the gridded path")]
    NotAnalytic,
    #[error("leaf escapes the domain at radius {radius}")]
    Escape { radius: f64 },
    #[error("leaf violates tau = |zeta|^2 by {residual:e}")]
    LeafResidual { residual: f64 },
    #[error("unsupported dimension n = {0}")]
    Dimension(usize),
}

/// A sample point in blow-up coordinates `(Re v, Im v, …, Re ζ, Im ζ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub chart: usize,
    pub x: Vec<f64>,
}

/// Frame data of the foliation at one node.
#[derive(Clone, Debug)]
pub struct NodeFrame {
    pub node: Node,
    pub tau: f64,
    pub grad: DVector<f64>,
    /// Matrix of `ddᶜτ`, `Ω_ij = ddᶜτ(∂_i, ∂_j)`.
    pub omega: DMatrix<f64>,
    /// Matrix of `ddᶜ log τ`.
    pub omega_log: DMatrix<f64>,
    pub dtau: Form,
    pub dctau: Form,
    pub ddctau: Form,
    pub ddclog: Form,
    pub z: DVector<f64>,
    pub jz: DVector<f64>,
    /// Columns span `ℋ`.
    pub h_basis: DMatrix<f64>,
    /// Jacobian of `Z` in the node coordinates.
    pub dz: DMatrix<f64>,
}

/// Frames at a set of nodes.
#[derive(Clone, Debug)]
pub struct FoliationFrame {
    pub n: usize,
    pub frames: Vec<NodeFrame>,
}

fn frame_from_jet<const D: usize>(node: &Node, t: &Jet<D>) -> Result<NodeFrame, FoliationError> {
    let a = analytic_derivs(t);
    let l = analytic_derivs(&t.ln());
    let j = j_standard(D);
    let omega = a.ddc.two_form_matrix();
    let grad = DVector::from_row_slice(&t.g);
    let jo = &j * &omega;
    let lu = jo.clone().lu();
    let z = lu.solve(&grad).ok_or_else(|| FoliationError::Singular { chart: node.chart, x: node.x.clone() })?;
    if z.iter().any(|c| !c.is_finite()) {
        return Err(FoliationError::Singular { chart: node.chart, x: node.x.clone() });
    }
    let mut dz = DMatrix::zeros(D, D);
    for k in 0..D {
        let hk = DMatrix::from_fn(D, D, |p, q| t.t[k][p][q]);
        let hkj = &hk * &j;
        let domega = -&hkj + hkj.transpose();
        let rhs = DVector::from_fn(D, |p, _| t.h[k][p]) - &j * domega * &z;
        let col = lu.solve(&rhs).ok_or_else(|| FoliationError::Singular { chart: node.chart, x: node.x.clone() })?;
        dz.set_column(k, &col);
    }
    let jz = &j * &z;
    let constraints = DMatrix::from_rows(&[(z.transpose() * &omega), (jz.transpose() * &omega)]);
    let svd = constraints.svd(false, true);
    let vt = svd.v_t.expect("svd");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&p, &q| svd.singular_values[q].partial_cmp(&svd.singular_values[p]).unwrap());
    // Rows of V^T beyond the rank span the null space; compute it as the
    // orthogonal complement of the two constraint directions.
    let mut range = DMatrix::zeros(D, 2);
    for (c, &r) in order.iter().take(2).enumerate() {
        range.set_column(c, &vt.row(r).transpose());
    }
    let proj = DMatrix::identity(D, D) - &range * range.transpose();
    let h_basis = orthonormal_columns(&proj, D - 2);
    Ok(NodeFrame {
        node: node.clone(),
        tau: t.v,
        grad,
        omega,
        omega_log: l.ddc.two_form_matrix(),
        dtau: a.d,
        dctau: a.dc,
        ddctau: a.ddc,
        ddclog: l.ddc,
        z,
        jz,
        h_basis,
        dz,
    })
}

/// Picks `k` orthonormal columns spanning the range of a projector.
fn orthonormal_columns(proj: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let d = proj.nrows();
    let mut out: Vec<DVector<f64>> = Vec::new();
    for i in 0..d {
        let mut v = proj.column(i).into_owned();
        for u in &out {
            v -= u * u.dot(&v);
        }
        let nv = v.norm();
        if nv > 1e-8 {
            out.push(v / nv);
        }
        if out.len() == k {
            break;
        }
    }
    DMatrix::from_columns(&out)
}

/// Analytic frame at one node.
pub fn frame_at(tau: &ExhaustionField, node: &Node) -> Result<NodeFrame, FoliationError> {
    match node.x.len() {
        4 => {
            let x: [f64; 4] = node.x.clone().try_into().unwrap();
            let t = tau.tau_jet::<4>(node.chart, &x).ok_or(FoliationError::NotAnalytic)?;
            frame_from_jet(node, &t)
        }
        6 => {
            let x: [f64; 6] = node.x.clone().try_into().unwrap();
            let t = tau.tau_jet::<6>(node.chart, &x).ok_or(FoliationError::NotAnalytic)?;
            frame_from_jet(node, &t)
        }
        d => Err(FoliationError::Dimension(d / 2)),
    }
}

/// Sample nodes: base nodes with `|v| ≤ 1` in every chart, times the given
/// radii and angles of the fiber grid.
pub fn sample_nodes(atlas: &ChartAtlas, radii: &[f64], angles: &[f64], base_stride: usize) -> Vec<Node> {
    let mut nodes = Vec::new();
    for chart in 0..atlas.charts() {
        for b in (0..atlas.base_nodes()).step_by(base_stride.max(1)) {
            let v = atlas.base_point(b);
            if v.iter().any(|c| c.norm() > 1.0) {
                continue;
            }
            for &r in radii {
                for &th in angles {
                    let mut x: Vec<f64> = v.iter().flat_map(|c| [c.re, c.im]).collect();
                    x.push(r * th.cos());
                    x.push(r * th.sin());
                    nodes.push(Node { chart, x });
                }
            }
        }
    }
    nodes
}

/// Solves the defining equation of `Z` at every node.
pub fn compute_z(tau: &ExhaustionField, nodes: &[Node], tol: f64) -> Result<FoliationFrame, FoliationError> {
    let frames: Result<Vec<NodeFrame>, FoliationError> = nodes
        .par_iter()
        .map(|node| {
            let f = frame_at(tau, node)?;
            let r = z_defining_residual(&f);
            if r > tol {
                return Err(FoliationError::Residual { chart: node.chart, x: node.x.clone(), residual: r });
            }
            Ok(f)
        })
        .collect();
    Ok(FoliationFrame { n: tau.n, frames: frames? })
}

/// `max_k |ddᶜτ(Z, J e_k) − e_k(τ)|`.
pub fn z_defining_residual(f: &NodeFrame) -> f64 {
    let d = f.z.len();
    let j = j_standard(d);
    let row = f.z.transpose() * &f.omega * &j;
    (0..d).map(|k| (row[k] - f.grad[k]).abs()).fold(0.0, f64::max)
}

/// One identity with its residual and tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityRow {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
}

impl IdentityRow {
    pub fn pass(&self) -> bool {
        self.residual < self.tol
    }
}

/// Report of the identity checks.
#[derive(Clone, Debug, PartialEq)]
pub struct MaReport {
    pub nodes: usize,
    pub rows: Vec<IdentityRow>,
}

impl MaReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass())
    }

    pub fn get(&self, name: &str) -> Option<&IdentityRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Pointwise residuals of the Monge–Ampère identities at one frame.
fn identity_residuals(f: &NodeFrame, n: usize) -> Vec<(String, f64)> {
    let t = C64::new(f.tau, 0.0);
    let w = &f.ddctau;
    let dd = f.dtau.wedge(&f.dctau).unwrap();
    let mut out = Vec::new();
    let log_id = f.ddclog.scale(t * t).sub(&w.scale(t).sub(&dd));
    out.push(("log_ddc".to_string(), log_id.max_abs()));
    for k in 1..n {
        let kk = C64::new(k as f64, 0.0);
        let lhs = f.ddclog.power(k).unwrap().scale(t.powi(k as i32 + 1));
        let rhs = w.power(k).unwrap().scale(t).sub(&dd.wedge(&w.power(k - 1).unwrap()).unwrap().scale(kk));
        out.push((format!("log_power_k{k}"), lhs.sub(&rhs).max_abs()));
    }
    let nn = C64::new(n as f64, 0.0);
    let ma = w.power(n).unwrap().scale(t).sub(&dd.wedge(&w.power(n - 1).unwrap()).unwrap().scale(nn));
    out.push(("monge_ampere".to_string(), ma.max_abs()));
    let zz: Vec<f64> = f.z.iter().copied().collect();
    let jz: Vec<f64> = f.jz.iter().copied().collect();
    let norm1 = (w.eval2(&zz, &jz) - f.tau).abs();
    let norm2 = (f.grad.dot(&f.z) - f.tau).abs();
    out.push(("z_normalization".to_string(), norm1.max(norm2)));
    out.push(("z_defining".to_string(), z_defining_residual(f)));
    let lz = (&f.omega_log * &f.z).norm().max((&f.omega_log * &f.jz).norm());
    out.push(("z_kernel_of_ddc_log".to_string(), lz));
    let hb = &f.h_basis;
    let tang = (f.grad.transpose() * hb).amax();
    out.push(("h_tangent_to_levels".to_string(), tang));
    let d = f.z.len();
    let j = j_standard(d);
    let jh = &j * hb;
    let leak = (&jh - hb * (hb.transpose() * &jh)).amax();
    out.push(("h_complex".to_string(), leak));
    let ortho = (f.z.transpose() * &f.omega * hb).amax().max((f.jz.transpose() * &f.omega * hb).amax());
    out.push(("h_orthogonal".to_string(), ortho));
    let sym = hb.transpose() * &f.omega_log * &j * hb;
    let sym = (&sym + sym.transpose()) * 0.5;
    let min_ev = nalgebra::SymmetricEigen::new(sym).eigenvalues.min();
    out.push(("ddc_log_psd_on_h".to_string(), (-min_ev).max(0.0)));
    out.push(("splitting_condition".to_string(), splitting_condition(f)));
    out
}

/// Condition number of the combined basis `(Z, JZ, ℋ)`.
pub fn splitting_condition(f: &NodeFrame) -> f64 {
    let mut cols = vec![f.z.clone(), f.jz.clone()];
    cols.extend(f.h_basis.column_iter().map(|c| c.into_owned()));
    let sv = DMatrix::from_columns(&cols).singular_values();
    sv.max() / sv.min()
}

/// Largest admissible condition number of the splitting.
pub const SPLITTING_CONDITION_MAX: f64 = 1e6;

/// Integrates `ẋ = Z(x)` together with its variational equation.
fn flow_with_jacobian(
    tau: &ExhaustionField,
    node: &Node,
    s: f64,
    substeps: usize,
) -> Result<(Node, DMatrix<f64>), FoliationError> {
    let d = node.x.len();
    let h = s / substeps as f64;
    let mut x = DVector::from_vec(node.x.clone());
    let mut y = DMatrix::<f64>::identity(d, d);
    let rhs = |x: &DVector<f64>, y: &DMatrix<f64>| -> Result<(DVector<f64>, DMatrix<f64>), FoliationError> {
        let f = frame_at(tau, &Node { chart: node.chart, x: x.iter().copied().collect() })?;
        Ok((f.z.clone(), &f.dz * y))
    };
    for _ in 0..substeps {
        let (k1, l1) = rhs(&x, &y)?;
        let (k2, l2) = rhs(&(&x + &k1 * (h / 2.0)), &(&y + &l1 * (h / 2.0)))?;
        let (k3, l3) = rhs(&(&x + &k2 * (h / 2.0)), &(&y + &l2 * (h / 2.0)))?;
        let (k4, l4) = rhs(&(&x + &k3 * h), &(&y + &l3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        y += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
    }
    Ok((Node { chart: node.chart, x: x.iter().copied().collect() }, y))
}

/// `ℒ_Z ddᶜτ − ddᶜτ` by a symmetric difference of flow pullbacks with one
/// Richardson step. The flow step 4e-3 balances roundoff against truncation
/// (measured: both 1e-3 and 1e-2 are worse).
pub fn lie_derivative_residual(tau: &ExhaustionField, f: &NodeFrame) -> Result<f64, FoliationError> {
    let s = 4e-3;
    let pull = |s: f64| -> Result<DMatrix<f64>, FoliationError> {
        let (xs, y) = flow_with_jacobian(tau, &f.node, s, 2)?;
        let fs = frame_at(tau, &xs)?;
        Ok(y.transpose() * fs.omega * y)
    };
    let diff = |s: f64| -> Result<DMatrix<f64>, FoliationError> { Ok((pull(s)? - pull(-s)?) / (2.0 * s)) };
    let l = (diff(s / 2.0)? * 4.0 - diff(s)?) / 3.0;
    Ok((l - &f.omega).amax())
}

/// Moves `ℋ` by a short `Z`-flow and re-measures its defining property.
pub fn flow_invariance_residual(tau: &ExhaustionField, f: &NodeFrame, step: f64) -> Result<f64, FoliationError> {
    let (xs, y) = flow_with_jacobian(tau, &f.node, step, 2)?;
    let fs = frame_at(tau, &xs)?;
    let pushed = y * &f.h_basis;
    let r = (fs.z.transpose() * &fs.omega * &pushed).amax().max((fs.jz.transpose() * &fs.omega * &pushed).amax());
    Ok(r)
}

/// Tolerances for the identity report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityTolerances {
    pub identity: f64,
    pub lie_samples: usize,
}

/// Evaluates every identity at the nodes and collects the maxima.
pub fn verify_ma_identities(
    tau: &ExhaustionField,
    nodes: &[Node],
    tol: IdentityTolerances,
) -> Result<MaReport, FoliationError> {
    let n = tau.n;
    let frames: Vec<NodeFrame> =
        nodes.par_iter().map(|node| frame_at(tau, node)).collect::<Result<Vec<_>, _>>()?;
    let per_node: Vec<Vec<(String, f64)>> = frames.par_iter().map(|f| identity_residuals(f, n)).collect();
    let mut rows: Vec<IdentityRow> = per_node[0]
        .iter()
        .map(|(name, _)| IdentityRow {
            name: name.clone(),
            residual: 0.0,
            tol: if name == "splitting_condition" { SPLITTING_CONDITION_MAX } else { tol.identity },
        })
        .collect();
    for res in &per_node {
        for (row, (_, r)) in rows.iter_mut().zip(res) {
            row.residual = row.residual.max(if r.is_nan() { f64::INFINITY } else { *r });
        }
    }
    let stride = (frames.len() / tol.lie_samples.max(1)).max(1);
    let lie: Vec<f64> = frames
        .par_iter()
        .step_by(stride)
        .map(|f| lie_derivative_residual(tau, f))
        .collect::<Result<Vec<_>, _>>()?;
    rows.push(IdentityRow {
        name: "lie_derivative".into(),
        residual: lie.into_iter().fold(0.0, f64::max),
        tol: tol.identity,
    });
    Ok(MaReport { nodes: frames.len(), rows })
}

/// Gridded Monge–Ampère residual at a node: `τ` is sampled on a small lattice
/// of spacing `h` and differentiated with second-order stencils.
///
/// In blow-up coordinates a circular `τ` is the separable product `|ζ|²g(v)`,
/// on which the stencils factor exactly, so this residual stays at roundoff
/// whatever `h` is. [`gridded_ma_residual`] in ambient coordinates shows the
/// truncation order.
pub fn gridded_monge_ampere_residual(tau: &ExhaustionField, node: &Node, h: f64) -> f64 {
    let d = node.x.len();
    gridded_ma_residual(
        &|p| {
            let v: Vec<C64> = p[..d - 2].chunks(2).map(|c| C64::new(c[0], c[1])).collect();
            tau.tau(node.chart, &v, C64::new(p[d - 2], p[d - 1]))
        },
        &node.x,
        h,
    )
}

/// `max |τ(ddᶜτ)ⁿ − n dτ∧dᶜτ∧(ddᶜτ)ⁿ⁻¹|` at `x` for a function of real
/// coordinates `(x¹, y¹, …)`, all derivatives taken on a lattice of spacing
/// `h`.
pub fn gridded_ma_residual(tau: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> f64 {
    let d = x.len();
    let n = d / 2;
    let lat = Lattice::centered(x, h, 2);
    let f = FormField::scalar(&lat, tau);
    let df = exterior_d(&f).unwrap();
    let dcf = dc(&f, &|_| j_standard(d)).unwrap();
    let ddcf = exterior_d(&dcf).unwrap();
    let t = C64::new(f.center().c[0].re, 0.0);
    let w = ddcf.center();
    let dd = df.center().wedge(&dcf.center()).unwrap();
    let nn = C64::new(n as f64, 0.0);
    w.power(n).unwrap().scale(t).sub(&dd.wedge(&w.power(n - 1).unwrap()).unwrap().scale(nn)).max_abs()
}

/// A traced Monge–Ampère leaf.
#[derive(Clone, Debug)]
pub struct LeafDisc {
    pub chart: usize,
    pub base: Vec<C64>,
    pub radii: Vec<f64>,
    pub angles: Vec<f64>,
    /// `points[angle][radius]` in ℂⁿ.
    pub points: Vec<Vec<Vec<C64>>>,
    pub tau: Vec<Vec<f64>>,
    /// `max |τ − ρ²|` over the samples.
    pub level_residual: f64,
}

fn leaf_rhs(tau: &ExhaustionField, chart: usize, x: &DVector<f64>, rho: f64) -> Result<DVector<f64>, FoliationError> {
    let f = frame_at(tau, &Node { chart, x: x.iter().copied().collect() })?;
    Ok(&f.z * (2.0 * rho / f.tau))
}

/// Integrates the radial leaf ODE `dF/dρ = (2ρ/τ)·Z` from `rho0` to `rho1`.
pub fn integrate_leaf(
    tau: &ExhaustionField,
    chart: usize,
    start: &[f64],
    rho0: f64,
    rho1: f64,
    steps: usize,
) -> Result<Vec<f64>, FoliationError> {
    let mut x = DVector::from_row_slice(start);
    let h = (rho1 - rho0) / steps as f64;
    let mut rho = rho0;
    for _ in 0..steps {
        let k1 = leaf_rhs(tau, chart, &x, rho)?;
        let k2 = leaf_rhs(tau, chart, &(&x + &k1 * (h / 2.0)), rho + h / 2.0)?;
        let k3 = leaf_rhs(tau, chart, &(&x + &k2 * (h / 2.0)), rho + h / 2.0)?;
        let k4 = leaf_rhs(tau, chart, &(&x + &k3 * h), rho + h)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        rho += h;
        let zeta = C64::new(x[x.len() - 2], x[x.len() - 1]);
        if !x.iter().all(|c| c.is_finite()) || zeta.norm() > 10.0 {
            return Err(FoliationError::Escape { radius: rho });
        }
    }
    Ok(x.iter().copied().collect())
}

/// Traces the leaf through `[v]` along one ray and fills the disc by
/// rotation equivariance.
pub fn trace_leaf(
    tau: &ExhaustionField,
    chart: usize,
    base: &[C64],
    kappa: f64,
    radii: &[f64],
    angles: &[f64],
    tol: f64,
) -> Result<LeafDisc, FoliationError> {
    let rho0 = radii[0] * 1e-3;
    let mut x: Vec<f64> = base.iter().flat_map(|c| [c.re, c.im]).collect();
    x.push(rho0 / kappa);
    x.push(0.0);
    let mut ray = Vec::with_capacity(radii.len());
    let mut rho = rho0;
    for &r in radii {
        x = integrate_leaf(tau, chart, &x, rho, r, 64)?;
        rho = r;
        ray.push(x.clone());
    }
    let mut points = Vec::new();
    let mut taus = Vec::new();
    let mut worst: f64 = 0.0;
    for &th in angles {
        let rot = C64::from_polar(1.0, th);
        let mut prow = Vec::new();
        let mut trow = Vec::new();
        for (x, &r) in ray.iter().zip(radii) {
            let d = x.len();
            let v: Vec<C64> = x[..d - 2].chunks(2).map(|c| C64::new(c[0], c[1])).collect();
            let zeta = C64::new(x[d - 2], x[d - 1]) * rot;
            let t = tau.tau(chart, &v, zeta);
            worst = worst.max((t - r * r).abs());
            prow.push(blowup_inverse(chart, &v, zeta));
            trow.push(t);
        }
        points.push(prow);
        taus.push(trow);
    }
    if worst > tol {
        return Err(FoliationError::LeafResidual { residual: worst });
    }
    Ok(LeafDisc {
        chart,
        base: base.to_vec(),
        radii: radii.to_vec(),
        angles: angles.to_vec(),
        points,
        tau: taus,
        level_residual: worst,
    })
}

impl LeafDisc {
    /// Leaf table in the grid dump format: one record whose rows are
    /// `(angle, radius, z¹, …, zⁿ, τ)` stored as complex pairs.
    pub fn to_record(&self) -> GridRecord {
        let n = self.base.len() + 1;
        let mut data = Vec::new();
        for (a, &th) in self.angles.iter().enumerate() {
            for (r, &rad) in self.radii.iter().enumerate() {
                data.push(C64::new(th, 0.0));
                data.push(C64::new(rad, 0.0));
                data.extend(self.points[a][r].iter().copied());
                data.push(C64::new(self.tau[a][r], 0.0));
            }
        }
        GridRecord { chart: self.chart, shape: vec![self.angles.len() * self.radii.len(), n + 3], data }
    }

    pub fn write(&self, w: &mut dyn Write) -> io::Result<()> {
        write_records_text(w, &[self.to_record()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain_model::MinkowskiField;

    fn node(chart: usize, v: C64, zeta: C64) -> Node {
        Node { chart, x: vec![v.re, v.im, zeta.re, zeta.im] }
    }

    #[test]
    fn ball_field_is_half_the_radial_field() {
        let tau = ExhaustionField::circular(MinkowskiField::ball(2));
        let f = frame_at(&tau, &node(0, C64::new(0.3, -0.2), C64::new(0.5, 0.1))).unwrap();
        // In blow-up coordinates the radial field z∂z is ζ∂ζ.
        assert!(f.z[0].abs() < 1e-14 && f.z[1].abs() < 1e-14);
        assert!((f.z[2] - 0.25).abs() < 1e-14 && (f.z[3] - 0.05).abs() < 1e-14);
    }

    #[test]
    fn ellipsoid_field_stays_radial() {
        // Oracle: plug ½ζ∂ζ into the defining equation by hand.
        let tau = ExhaustionField::circular(MinkowskiField::ellipsoid(vec![1.0, 4.0]));
        let n = node(1, C64::new(0.7, 0.4), C64::new(-0.2, 0.6));
        let mut f = frame_at(&tau, &n).unwrap();
        let radial = DVector::from_vec(vec![0.0, 0.0, -0.1, 0.3]);
        assert!((&f.z - &radial).amax() < 1e-13);
        f.z = radial;
        assert!(z_defining_residual(&f) < 1e-13);
    }

    #[test]
    fn normalization_at_quarter_level() {
        let tau = ExhaustionField::circular(MinkowskiField::ball(2));
        let f = frame_at(&tau, &node(0, C64::new(0.0, 0.0), C64::new(0.5, 0.0))).unwrap();
        let zz: Vec<f64> = f.z.iter().copied().collect();
        let jz: Vec<f64> = f.jz.iter().copied().collect();
        assert!((f.ddctau.eval2(&zz, &jz) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn non_monge_ampere_input_fails() {
        let tau = ExhaustionField::non_monge_ampere();
        let nodes = vec![node(1, C64::new(0.5, 0.0), C64::new(0.95, 0.0))];
        let rep = verify_ma_identities(&tau, &nodes, IdentityTolerances { identity: 1e-8, lie_samples: 1 }).unwrap();
        let ma = rep.get("monge_ampere").unwrap();
        assert!(ma.residual > 0.1, "{}", ma.residual);
        assert!(!rep.all_pass());
    }

    #[test]
    fn flow_invariance_is_second_order() {
        let tau = ExhaustionField::circular(MinkowskiField::perturbed_ball(2, 0.05, [1.0, 0.5, 0.0]));
        let f = frame_at(&tau, &node(0, C64::new(0.2, 0.5), C64::new(0.4, 0.3))).unwrap();
        let r1 = flow_invariance_residual(&tau, &f, 0.02).unwrap();
        assert!(r1 < 1e-9, "{r1}");
    }

    #[test]
    fn ball_leaf_is_coordinate_disc() {
        let tau = ExhaustionField::circular(MinkowskiField::ball(2));
        let leaf = trace_leaf(&tau, 0, &[C64::new(0.0, 0.0)], 1.0, &[0.3, 0.6, 0.9], &[0.0, 1.0], 1e-9).unwrap();
        let p = &leaf.points[1][2];
        assert!((p[0] - C64::from_polar(0.9, 1.0)).norm() < 1e-9 && p[1].norm() < 1e-12);
    }

    #[test]
    fn ellipsoid_leaf_level_and_reversal() {
        let mu = MinkowskiField::ellipsoid(vec![1.0, 4.0]);
        let tau = ExhaustionField::circular(mu.clone());
        let v0 = C64::new(0.4, -0.3);
        let m = mu.m(0, &[v0]);
        let leaf = trace_leaf(&tau, 0, &[v0], m, &[0.45, 0.9], &[0.0, 2.0], 1e-9).unwrap();
        let expect: Vec<C64> = [C64::new(1.0, 0.0), v0].iter().map(|c| c * C64::from_polar(0.9 / m, 2.0)).collect();
        let p = &leaf.points[1][1];
        assert!((p[0] - expect[0]).norm() < 1e-9 && (p[1] - expect[1]).norm() < 1e-9);
        let start = vec![v0.re, v0.im, 0.9 / m, 0.0];
        let back = integrate_leaf(&tau, 0, &start, 0.9, 1e-3, 200).unwrap();
        let fwd = integrate_leaf(&tau, 0, &back, 1e-3, 0.9, 200).unwrap();
        let err = fwd.iter().zip(&start).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }
}
