//! Verdicts on mode data: circularity, ball, rotational invariance and the
//! scaling iteration, plus special frames of an indicatrix.

use std::io::{self, Write};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::deformation::{cmax, ModeSet};
use crate::domain_model::levi_hessian_fd;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CharacterizationError {
    #[error("angle {theta} is resonant at k = {k}")]
    Resonant { theta: f64, k: usize },
    #[error("contraction ratio {0} outside (0, 1)")]
    Ratio(f64),
    #[error("degenerate Levi form at e0 = {e0:?}")]
    Degenerate { e0: Vec<C64> },
    #[error("kappa vanishes in direction {0:?}")]
    ZeroDirection(Vec<C64>),
}

/// `|e^{ikθ} − 1|` below this counts as resonant.
pub const RESONANCE_GAP: f64 = 1e-8;

/// A measured value against its threshold; passes iff `value < tol`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub value: f64,
    pub tol: f64,
}

impl Verdict {
    pub fn pass(&self) -> bool {
        self.value < self.tol
    }
}

/// `Σ_{k≥1} ‖φ⁽ᵏ⁾‖_∞ < tol`.
pub fn is_circular(modes: &ModeSet, tol: f64) -> Verdict {
    Verdict { value: (1..modes.modes.len()).map(|k| modes.norm(k)).sum(), tol }
}

/// `‖φ‖_∞ < tol` including mode 0.
pub fn is_ball(modes: &ModeSet, tol: f64) -> Verdict {
    Verdict { value: (0..modes.modes.len()).map(|k| modes.norm(k)).sum(), tol }
}

/// Outcome of comparing `φ` with its pullback by a fiber rotation.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationalVerdict {
    pub theta: f64,
    /// `max_k ‖rotate(φ)⁽ᵏ⁾ − φ⁽ᵏ⁾‖_∞`.
    pub residual: f64,
    /// `‖rotate(φ)⁽ᵏ⁾ − φ⁽ᵏ⁾‖_∞ / |e^{ikθ} − 1|` per `k ≥ 1`: the bound on
    /// `‖φ⁽ᵏ⁾‖` that invariance forces.
    pub implied: Vec<f64>,
    pub invariant: Verdict,
}

/// Rotation `ζ ↦ e^{iθ}ζ` invariance test. Invariance forces
/// `(1 − e^{ikθ})φ⁽ᵏ⁾ = 0`, so for non-resonant `θ` it is decided through the
/// implied mode bounds and must agree with [`is_circular`].
pub fn rotational_test(modes: &ModeSet, theta: f64, tol: f64) -> Result<RotationalVerdict, CharacterizationError> {
    let kmax = modes.k_max();
    for k in 1..=kmax {
        if (C64::from_polar(1.0, k as f64 * theta) - 1.0).norm() < RESONANCE_GAP {
            return Err(CharacterizationError::Resonant { theta, k });
        }
    }
    let turned = modes.rotate(theta);
    let mut residual: f64 = 0.0;
    let mut implied = Vec::with_capacity(kmax);
    for k in 0..=kmax {
        let r = turned.modes[k].iter().zip(&modes.modes[k]).map(|(a, b)| cmax(&(a - b))).fold(0.0, f64::max);
        residual = residual.max(r);
        if k >= 1 {
            implied.push(r / (C64::from_polar(1.0, k as f64 * theta) - 1.0).norm());
        }
    }
    let invariant = Verdict { value: implied.iter().sum(), tol };
    Ok(RotationalVerdict { theta, residual, implied, invariant })
}

/// Trace of the iteration `φ ↦ contract(φ, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingTrace {
    pub k: f64,
    /// Mode norms per iteration, row 0 being the input.
    pub norms: Vec<Vec<f64>>,
    /// Fitted slope of `log ‖φ⁽ʲ⁾‖` per iteration, `None` for vanishing modes.
    pub slopes: Vec<Option<f64>>,
    /// `max_j |slope_j − j·log k|`.
    pub slope_error: f64,
    /// `‖φ⁽⁰⁾_last − φ⁽⁰⁾‖_∞`: the limit is the mode-0 part of the iterates.
    pub mode0_drift: f64,
    /// `Σ_{j≥1} ‖φ⁽ʲ⁾_last‖_∞`, the distance of the last iterate to the limit.
    pub final_distance: f64,
    pub verdict: Verdict,
}

pub fn scaling_test(modes: &ModeSet, k: f64, iters: usize, tol: f64) -> Result<ScalingTrace, CharacterizationError> {
    if !(k > 0.0 && k < 1.0) {
        return Err(CharacterizationError::Ratio(k));
    }
    let mut cur = modes.clone();
    let mut norms = vec![cur.norms()];
    for _ in 0..iters {
        cur = cur.contract(k);
        norms.push(cur.norms());
    }
    let kmax = modes.k_max();
    let mut slopes = Vec::with_capacity(kmax + 1);
    let mut slope_error: f64 = 0.0;
    for j in 0..=kmax {
        let pts: Vec<(f64, f64)> =
            norms.iter().enumerate().filter(|(_, row)| row[j] > 0.0).map(|(i, row)| (i as f64, row[j].ln())).collect();
        if pts.len() < 2 || pts.len() != norms.len() {
            slopes.push(None);
            continue;
        }
        let m = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / m, sy / m);
        let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
        let slope = sxy / sxx;
        slope_error = slope_error.max((slope - j as f64 * k.ln()).abs());
        slopes.push(Some(slope));
    }
    let mode0_drift = cur.modes[0].iter().zip(&modes.modes[0]).map(|(a, b)| cmax(&(a - b))).fold(0.0, f64::max);
    let final_distance = (1..=kmax).map(|j| cur.norm(j)).sum();
    let verdict = Verdict { value: slope_error.max(mode0_drift), tol };
    Ok(ScalingTrace { k, norms, slopes, slope_error, mode0_drift, final_distance, verdict })
}

/// Frame at the boundary of the indicatrix: `κ(e₀) = 1`, and `(e_a)` a basis
/// of the complex tangent space of `{κ = 1}` at `e₀`, normalized by
/// `ddᶜκ²(e_a, J e_b) = δ_ab`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecialFrame {
    pub e0: Vec<C64>,
    pub e: Vec<Vec<C64>>,
    pub kappa_e0: f64,
    /// Largest `|∂κ²(e_a)|`.
    pub tangency: f64,
}

fn complex_levi(kappa2: &dyn Fn(&[C64]) -> f64, z: &[C64]) -> DMatrix<C64> {
    let h = levi_hessian_fd(kappa2, z);
    let n = z.len();
    DMatrix::from_fn(n, n, |i, j| {
        let (xi, yi, xj, yj) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        C64::new(h[(xi, xj)] + h[(yi, yj)], h[(xi, yj)] - h[(yi, xj)]) * 0.25
    })
}

/// `∂κ²/∂zᵢ` by central differences.
fn holomorphic_gradient(kappa2: &dyn Fn(&[C64]) -> f64, z: &[C64]) -> Vec<C64> {
    let h = 1e-5;
    (0..z.len())
        .map(|i| {
            let d = |dir: C64| {
                let mut p = z.to_vec();
                let mut m = z.to_vec();
                p[i] += dir * h;
                m[i] -= dir * h;
                (kappa2(&p) - kappa2(&m)) / (2.0 * h)
            };
            C64::new(d(C64::new(1.0, 0.0)), -d(C64::new(0.0, 1.0))) * 0.5
        })
        .collect()
}

/// Hermitian product `4 Σ uᵢ L_{ij̄} w̄ⱼ` for `L = ∂²κ²/∂z∂z̄`; on `(u, u)` it
/// equals `ddᶜκ²(u, Ju)`.
pub fn levi_product(l: &DMatrix<C64>, u: &[C64], w: &[C64]) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..u.len() {
        for j in 0..w.len() {
            s += u[i] * l[(i, j)] * w[j].conj();
        }
    }
    s * 4.0
}

pub fn special_frame(kappa2: &dyn Fn(&[C64]) -> f64, direction: &[C64]) -> Result<SpecialFrame, CharacterizationError> {
    let k = kappa2(direction).sqrt();
    if !(k > 0.0) {
        return Err(CharacterizationError::ZeroDirection(direction.to_vec()));
    }
    let e0: Vec<C64> = direction.iter().map(|c| c / k).collect();
    let g = holomorphic_gradient(kappa2, &e0);
    let l = complex_levi(kappa2, &e0);
    let g_e0: C64 = g.iter().zip(&e0).map(|(a, b)| a * b).sum();
    let mut e: Vec<Vec<C64>> = Vec::new();
    for seed in 0..e0.len() {
        let gs = g[seed];
        let mut u: Vec<C64> = e0.iter().map(|c| -c * gs / g_e0).collect();
        u[seed] += 1.0;
        for prev in &e {
            let c = levi_product(&l, &u, prev);
            for (x, p) in u.iter_mut().zip(prev) {
                *x -= c * p;
            }
        }
        let nrm = levi_product(&l, &u, &u).re;
        if nrm < 1e-10 {
            continue;
        }
        if e.len() == e0.len() - 1 {
            return Err(CharacterizationError::Degenerate { e0 });
        }
        e.push(u.iter().map(|x| x / nrm.sqrt()).collect());
    }
    if e.len() != e0.len() - 1 {
        return Err(CharacterizationError::Degenerate { e0 });
    }
    let tangency = e.iter().map(|u| g.iter().zip(u).map(|(a, b)| a * b).sum::<C64>().norm()).fold(0.0, f64::max);
    Ok(SpecialFrame { kappa_e0: kappa2(&e0).sqrt(), e0, e, tangency })
}

/// Everything the classifier decided, with the inputs it decided on.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationReport {
    pub mode_norms: Vec<f64>,
    pub circular: Verdict,
    pub ball: Verdict,
    pub rotational: Vec<RotationalVerdict>,
    /// Angles rejected as resonant, with the resonant mode.
    pub rejected: Vec<(f64, usize)>,
    pub scaling: Option<ScalingTrace>,
}

/// Angles used by `classify` when none are given: irrational multiples of π.
pub const DEFAULT_ANGLES: [f64; 5] = [1.0, 2.0, 0.5, 2.5, 3.0];

pub fn classify(modes: &ModeSet, tol: f64, angles: &[f64], scaling: Option<(f64, usize)>) -> Result<ClassificationReport, CharacterizationError> {
    let mut rotational = Vec::new();
    let mut rejected = Vec::new();
    for &theta in angles {
        match rotational_test(modes, theta, tol) {
            Ok(v) => rotational.push(v),
            Err(CharacterizationError::Resonant { k, .. }) => rejected.push((theta, k)),
            Err(e) => return Err(e),
        }
    }
    let scaling = scaling.map(|(k, iters)| scaling_test(modes, k, iters, tol)).transpose()?;
    Ok(ClassificationReport {
        mode_norms: modes.norms(),
        circular: is_circular(modes, tol),
        ball: is_ball(modes, tol),
        rotational,
        rejected,
        scaling,
    })
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

impl ClassificationReport {
    /// Every rotational verdict equals the circularity verdict.
    pub fn consistent(&self) -> bool {
        self.rotational.iter().all(|r| r.invariant.pass() == self.circular.pass())
    }

    /// Flat `key = value` block followed by whitespace-separated tables.
    pub fn write_text(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "circular = {}", yes_no(self.circular.pass()))?;
        writeln!(w, "circular.value = {:.6e}", self.circular.value)?;
        writeln!(w, "ball = {}", yes_no(self.ball.pass()))?;
        writeln!(w, "ball.value = {:.6e}", self.ball.value)?;
        writeln!(w, "tolerance = {:.3e}", self.circular.tol)?;
        writeln!(w, "rotational.consistent = {}", yes_no(self.consistent()))?;
        for (theta, k) in &self.rejected {
            writeln!(w, "rotational.rejected = {theta} resonant at k={k}")?;
        }
        writeln!(w, "\n# mode norm")?;
        for (k, n) in self.mode_norms.iter().enumerate() {
            writeln!(w, "{k} {n:.6e}")?;
        }
        if !self.rotational.is_empty() {
            writeln!(w, "\n# theta invariant residual implied_sum")?;
            for r in &self.rotational {
                writeln!(w, "{} {} {:.6e} {:.6e}", r.theta, yes_no(r.invariant.pass()), r.residual, r.invariant.value)?;
            }
        }
        if let Some(s) = &self.scaling {
            s.write_text(w)?;
        }
        Ok(())
    }
}

impl ScalingTrace {
    pub fn write_text(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "scaling.k = {}", self.k)?;
        writeln!(w, "scaling.iterations = {}", self.norms.len() - 1)?;
        writeln!(w, "scaling.circular = {}", yes_no(self.verdict.pass()))?;
        writeln!(w, "scaling.slope_error = {:.6e}", self.slope_error)?;
        writeln!(w, "scaling.mode0_drift = {:.6e}", self.mode0_drift)?;
        writeln!(w, "scaling.final_distance = {:.6e}", self.final_distance)?;
        writeln!(w, "\n# mode fitted_slope expected_slope")?;
        for (j, s) in self.slopes.iter().enumerate() {
            let expect = j as f64 * self.k.ln();
            match s {
                Some(s) => writeln!(w, "{j} {s:.12e} {expect:.12e}")?,
                None => writeln!(w, "{j} nan {expect:.12e}")?,
            }
        }
        write!(w, "\n# iter")?;
        for j in 0..self.slopes.len() {
            write!(w, " norm{j}")?;
        }
        writeln!(w)?;
        for (i, row) in self.norms.iter().enumerate() {
            write!(w, "{i}")?;
            for x in row {
                write!(w, " {x:.6e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deformation::BasePoint;

    fn modes(norms: &[f64]) -> ModeSet {
        let bases = vec![BasePoint { chart: 0, v: vec![C64::new(0.2, 0.1)] }, BasePoint { chart: 1, v: vec![C64::new(-0.3, 0.0)] }];
        let m = norms
            .iter()
            .map(|&x| vec![DMatrix::from_element(1, 1, C64::new(x, 0.0)), DMatrix::from_element(1, 1, C64::new(0.0, x / 2.0))])
            .collect();
        ModeSet::from_modes(2, bases, m)
    }

    #[test]
    fn circular_and_ball_verdicts() {
        assert!(is_circular(&modes(&[0.1, 0.0, 0.0]), 1e-8).pass());
        assert!(!is_ball(&modes(&[0.1, 0.0, 0.0]), 1e-8).pass());
        assert!(!is_circular(&modes(&[0.0, 0.1]), 1e-8).pass());
        assert!(is_ball(&modes(&[0.0, 0.0]), 1e-8).pass());
    }

    #[test]
    fn rotation_agrees_with_circularity() {
        let c = modes(&[0.3, 0.0, 0.0]);
        let r = rotational_test(&c, 1.0, 1e-10).unwrap();
        assert!(r.invariant.pass() && r.residual == 0.0);
        let nc = modes(&[0.3, 0.0, 0.2]);
        let r = rotational_test(&nc, 1.0, 1e-10).unwrap();
        assert!(!r.invariant.pass());
        assert!((r.implied[1] - 0.2).abs() < 1e-14);
        assert!(matches!(rotational_test(&nc, std::f64::consts::PI, 1e-10), Err(CharacterizationError::Resonant { k: 2, .. })));
    }

    #[test]
    fn scaling_decays_each_mode_geometrically() {
        let t = scaling_test(&modes(&[0.2, 0.1, 0.3, 0.05]), 0.5, 20, 1e-6).unwrap();
        assert!(t.slope_error < 1e-12);
        assert_eq!(t.mode0_drift, 0.0);
        assert!(t.verdict.pass());
        assert!((t.norms[20][3] - 0.05 * 0.5f64.powi(60)).abs() < 1e-30);
        let flat = scaling_test(&modes(&[0.2, 0.0]), 0.5, 5, 1e-6).unwrap();
        assert!(flat.norms.iter().all(|r| r[0] == 0.2));
        assert!(matches!(scaling_test(&modes(&[0.2, 0.0]), 1.5, 3, 1e-6), Err(CharacterizationError::Ratio(_))));
    }

    #[test]
    fn special_frames_of_ball_and_ellipsoid() {
        let ball = |z: &[C64]| z.iter().map(|c| c.norm_sqr()).sum::<f64>();
        let f = special_frame(&ball, &[C64::new(2.0, 0.0), C64::new(0.0, 0.0)]).unwrap();
        assert!((f.e0[0] - 1.0).norm() < 1e-12 && f.e0[1].norm() < 1e-12);
        assert!((f.e[0][1] - 0.5).norm() < 1e-8 && f.e[0][0].norm() < 1e-8);
        let ell = |z: &[C64]| z[0].norm_sqr() + 4.0 * z[1].norm_sqr();
        let f = special_frame(&ell, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]).unwrap();
        assert!((f.e[0][1] - 0.25).norm() < 1e-8);
        assert!((f.kappa_e0 - 1.0).abs() < 1e-14);
    }
}
