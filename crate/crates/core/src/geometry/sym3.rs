//! Closed-form eigen-analysis of symmetric 3x3 matrices.

use std::f64::consts::PI;

use super::Vec3;

/// Symmetric 3x3 matrix stored as its six unique entries.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Sym3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl Sym3 {
    /// Adds the outer product `d dᵀ`.
    pub fn add_outer(&mut self, d: Vec3) {
        self.xx += d.x * d.x;
        self.xy += d.x * d.y;
        self.xz += d.x * d.z;
        self.yy += d.y * d.y;
        self.yz += d.y * d.z;
        self.zz += d.z * d.z;
    }

    pub fn max_abs(&self) -> f64 {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            xx: self.xx * s,
            xy: self.xy * s,
            xz: self.xz * s,
            yy: self.yy * s,
            yz: self.yz * s,
            zz: self.zz * s,
        }
    }

    pub fn quadratic_form(&self, v: Vec3) -> f64 {
        v.x * (self.xx * v.x + self.xy * v.y + self.xz * v.z)
            + v.y * (self.xy * v.x + self.yy * v.y + self.yz * v.z)
            + v.z * (self.xz * v.x + self.yz * v.y + self.zz * v.z)
    }

    /// Eigenvalues in ascending order (trigonometric method).
    pub fn eigenvalues(&self) -> [f64; 3] {
        let p1 = self.xy * self.xy + self.xz * self.xz + self.yz * self.yz;
        let q = (self.xx + self.yy + self.zz) / 3.0;
        let (a, b, c) = (self.xx - q, self.yy - q, self.zz - q);
        let p2 = a * a + b * b + c * c + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        if p == 0.0 {
            return [q, q, q];
        }
        // det((A - qI) / p) / 2
        let det = a * (b * c - self.yz * self.yz) - self.xy * (self.xy * c - self.yz * self.xz)
            + self.xz * (self.xy * self.yz - b * self.xz);
        let r = (det / (p * p * p) / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let largest = q + 2.0 * p * phi.cos();
        let smallest = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
        let middle = 3.0 * q - largest - smallest;
        [smallest, middle, largest]
    }

    /// Eigenvector for `lambda`, taken as the largest cross product of two
    /// rows of `A - lambda I`. `None` when the eigenspace is not 1-dimensional.
    fn eigenvector(&self, lambda: f64) -> Option<Vec3> {
        let r0 = Vec3::new(self.xx - lambda, self.xy, self.xz);
        let r1 = Vec3::new(self.xy, self.yy - lambda, self.yz);
        let r2 = Vec3::new(self.xz, self.yz, self.zz - lambda);
        let candidates = [r0.cross(r1), r0.cross(r2), r1.cross(r2)];
        let best = candidates
            .iter()
            .copied()
            .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))?;
        let n2 = best.norm_squared();
        (n2 > 0.0 && n2.is_finite()).then(|| best.scale(1.0 / n2.sqrt()))
    }

    /// Sum of the principal 2x2 minors, `λ0λ1 + λ0λ2 + λ1λ2`.
    fn minor_sum(&self) -> f64 {
        (self.xx * self.yy - self.xy * self.xy)
            + (self.xx * self.zz - self.xz * self.xz)
            + (self.yy * self.zz - self.yz * self.yz)
    }
}

/// Result of analysing a point-scatter matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallestEigen {
    pub values: [f64; 3],
    pub vector: Vec3,
}

/// Smallest eigenpair of a positive semi-definite `m`, or `None` when its
/// rank is below 2 (the scatter came from coincident or collinear points).
///
/// Rank is judged from the principal minors rather than the eigenvalues:
/// the trigonometric eigenvalues lose half their digits when two of them
/// coincide.
pub fn smallest_eigen(m: &Sym3, rank_tol: f64) -> Option<SmallestEigen> {
    let scale = m.max_abs();
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let a = m.scaled(1.0 / scale);
    let trace = a.xx + a.yy + a.zz;
    if a.minor_sum() <= rank_tol * trace * trace {
        return None;
    }
    let values = a.eigenvalues();
    let vector = a.eigenvector(values[0])?;
    Some(SmallestEigen {
        values: values.map(|v| v * scale),
        vector,
    })
}
