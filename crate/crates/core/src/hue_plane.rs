//! N-channel analogue of colour hue.
//!
//! In RGB, hue is the angle of a colour measured in the plane perpendicular
//! to the grey axis. For N channels the grey axis becomes the uniform
//! direction u = (1,…,1)/√N, and the plane is an orthonormal pair (b₁, b₂)
//! inside u's orthogonal complement. [`fit_hue_plane`] picks that pair as
//! the two dominant directions of a set of activation vectors once their
//! uniform component is removed. The result is a diagnostic, not a model.

use serde::{Deserialize, Serialize};

use crate::activation::{l2_norm, PixelVector};
use crate::error::{Error, Result};

const BASIS_TOL: f64 = 1e-9;
const PLANE_NORM_FLOOR: f64 = 1e-12;
const SPECTRUM_RATIO: f64 = 1e-12;
const MAX_ITERS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuePlaneBasis {
    b1: Vec<f64>,
    b2: Vec<f64>,
}

impl HuePlaneBasis {
    /// Validates that (b₁, b₂) is orthonormal and orthogonal to the uniform axis.
    pub fn new(b1: Vec<f64>, b2: Vec<f64>) -> Result<Self> {
        let n = b1.len();
        if n < 3 || b2.len() != n {
            return Err(Error::DegeneratePlane(format!(
                "basis vectors must share a dimension of at least 3 (got {} and {})",
                b1.len(),
                b2.len()
            )));
        }
        let inv_sqrt_n = 1.0 / (n as f64).sqrt();
        let checks = [
            ("|b1|^2 - 1", dot(&b1, &b1) - 1.0),
            ("|b2|^2 - 1", dot(&b2, &b2) - 1.0),
            ("b1.b2", dot(&b1, &b2)),
            ("b1.u", b1.iter().sum::<f64>() * inv_sqrt_n),
            ("b2.u", b2.iter().sum::<f64>() * inv_sqrt_n),
        ];
        for (name, value) in checks {
            if value.abs() > BASIS_TOL {
                return Err(Error::DegeneratePlane(format!("{name} = {value:e} exceeds 1e-9")));
            }
        }
        Ok(Self { b1, b2 })
    }

    /// Classical RGB hue plane: b₁ = (2,−1,−1)/√6, b₂ = (0,1,−1)/√2.
    pub fn rgb() -> Self {
        let s6 = 6f64.sqrt();
        let s2 = 2f64.sqrt();
        Self {
            b1: vec![2.0 / s6, -1.0 / s6, -1.0 / s6],
            b2: vec![0.0, 1.0 / s2, -1.0 / s2],
        }
    }

    pub fn dim(&self) -> usize {
        self.b1.len()
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn b2(&self) -> &[f64] {
        &self.b2
    }

    /// N×N orthogonal projector onto the plane, row-major.
    pub fn projector(&self) -> Vec<f64> {
        let n = self.dim();
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                p[i * n + j] = self.b1[i] * self.b1[j] + self.b2[i] * self.b2[j];
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HueDiagnostic {
    pub uniform_component: f64,
    pub residual_norm: f64,
    /// In (−π, π]; `None` for (near-)uniform vectors.
    pub hue_angle: Option<f64>,
    pub saturation: f64,
}

pub fn hue_diagnostic(v: &PixelVector, plane: &HuePlaneBasis) -> Result<HueDiagnostic> {
    let n = plane.dim();
    if v.values.len() != n {
        return Err(Error::DegeneratePlane(format!(
            "plane lives in {n} dimensions, vector has {}",
            v.values.len()
        )));
    }
    let uniform_component = v.values.iter().sum::<f64>() / (n as f64).sqrt();
    let residual = remove_uniform(&v.values);
    let residual_norm = l2_norm(&residual);
    let p1 = dot(&residual, &plane.b1);
    let p2 = dot(&residual, &plane.b2);
    let hue_angle = if p1.hypot(p2) < PLANE_NORM_FLOOR {
        None
    } else {
        Some(p2.atan2(p1))
    };
    let norm = v.norm();
    let saturation = if norm > 0.0 {
        (residual_norm / norm).min(1.0)
    } else {
        0.0
    };
    Ok(HueDiagnostic {
        uniform_component,
        residual_norm,
        hue_angle,
        saturation,
    })
}

/// Fit a hue plane to a set of activation vectors.
///
/// The basis spans the two leading eigenvectors of the second-moment matrix
/// of the uniform-axis residuals (taken about the origin, so the plane is
/// anchored on the uniform axis the way RGB hue is anchored on grey). Each
/// basis vector is sign-fixed so its first component with |value| > 1e-9 is
/// positive.
pub fn fit_hue_plane(vectors: &[PixelVector]) -> Result<HuePlaneBasis> {
    if vectors.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 vectors to fit a hue plane, got {}",
            vectors.len()
        )));
    }
    let n = vectors[0].values.len();
    if n < 3 {
        return Err(Error::DegeneratePlane(format!("dimension {n} is below 3")));
    }
    if let Some(v) = vectors.iter().find(|v| v.values.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "vector of dimension {} among dimension {n}",
            v.values.len()
        )));
    }
    let residuals: Vec<Vec<f64>> = vectors.iter().map(|v| remove_uniform(&v.values)).collect();

    // Deterministic start inside the residual span: the largest residual,
    // then the residual with the largest component orthogonal to it.
    let largest = residuals
        .iter()
        .enumerate()
        .max_by(|a, b| l2_norm(a.1).total_cmp(&l2_norm(b.1)).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let first_norm = l2_norm(&residuals[largest]);
    if first_norm < PLANE_NORM_FLOOR {
        return Err(Error::DegenerateSpectrum {
            first: 0.0,
            second: 0.0,
        });
    }
    let x1: Vec<f64> = residuals[largest].iter().map(|v| v / first_norm).collect();
    let x2 = residuals
        .iter()
        .map(|r| {
            let c = dot(r, &x1);
            r.iter().zip(&x1).map(|(a, b)| a - c * b).collect::<Vec<f64>>()
        })
        .max_by(|a, b| l2_norm(a).total_cmp(&l2_norm(b)))
        .unwrap_or_else(|| vec![0.0; n]);
    let mut basis = [x1, x2];
    if l2_norm(&basis[1]) < PLANE_NORM_FLOOR * first_norm {
        // Collinear residuals: the spectrum has a single non-zero eigenvalue.
        let first = second_moment_apply(&residuals, &basis[0]);
        return Err(Error::DegenerateSpectrum {
            first: dot(&first, &basis[0]),
            second: 0.0,
        });
    }
    orthonormalize(&mut basis);

    for _ in 0..MAX_ITERS {
        let mut next = [
            second_moment_apply(&residuals, &basis[0]),
            second_moment_apply(&residuals, &basis[1]),
        ];
        orthonormalize(&mut next);
        // Sum of squared sines of the principal angles between iterates.
        let overlap: f64 = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| dot(&basis[i], &next[j]).powi(2))
            .sum();
        basis = next;
        if 2.0 - overlap < 1e-22 {
            break;
        }
    }

    // Rayleigh-Ritz on the converged subspace orders the two directions.
    let c0 = second_moment_apply(&residuals, &basis[0]);
    let c1 = second_moment_apply(&residuals, &basis[1]);
    let (a, b, d) = (dot(&basis[0], &c0), dot(&basis[0], &c1), dot(&basis[1], &c1));
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (lambda1, lambda2) = (mean + radius, mean - radius);
    if !(lambda1 > 0.0) || lambda2 < SPECTRUM_RATIO * lambda1 {
        return Err(Error::DegenerateSpectrum {
            first: lambda1,
            second: lambda2,
        });
    }
    // Eigenvector of [[a, b], [b, d]] for lambda1.
    let angle = 0.5 * (2.0 * b).atan2(a - d);
    let (c, s) = (angle.cos(), angle.sin());
    let mut b1: Vec<f64> = basis[0].iter().zip(&basis[1]).map(|(p, q)| c * p + s * q).collect();
    let mut b2: Vec<f64> = basis[0].iter().zip(&basis[1]).map(|(p, q)| -s * p + c * q).collect();
    b1 = remove_uniform(&b1);
    b2 = remove_uniform(&b2);
    let mut pair = [b1, b2];
    orthonormalize(&mut pair);
    for v in pair.iter_mut() {
        if let Some(&lead) = v.iter().find(|x| x.abs() > 1e-9) {
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
    let [b1, b2] = pair;
    HuePlaneBasis::new(b1, b2)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_uniform(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

/// (Σ r rᵀ / n) x without materializing the N×N matrix.
fn second_moment_apply(residuals: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in residuals {
        let c = dot(r, x);
        for (o, v) in out.iter_mut().zip(r) {
            *o += c * v;
        }
    }
    let n = residuals.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

fn orthonormalize(basis: &mut [Vec<f64>; 2]) {
    // Two passes of Gram-Schmidt keep the pair orthogonal to machine precision.
    for _ in 0..2 {
        let n0 = l2_norm(&basis[0]);
        basis[0].iter_mut().for_each(|v| *v /= n0);
        let c = dot(&basis[0], &basis[1]);
        let (first, second) = basis.split_at_mut(1);
        for (v, p) in second[0].iter_mut().zip(&first[0]) {
            *v -= c * p;
        }
        let n1 = l2_norm(&basis[1]);
        basis[1].iter_mut().for_each(|v| *v /= n1);
    }
}
