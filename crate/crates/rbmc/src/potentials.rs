//! External (one-body) potentials, pair interaction kernels, and domain geometry.
//!
//! Pair kernels expose a smooth/singular decomposition `total = smooth + singular`:
//! the smooth part is differentiable and drives Langevin proposals, while the
//! singular part is only ever *evaluated* (never differentiated) inside a
//! Metropolis accept/reject step and must vanish identically beyond a finite
//! range so that neighbor lists stay exact.
//!
//! All radial kernels store one-dimensional profiles `W(r)`; vector gradients
//! are assembled as `W'(r) * z / r` for a displacement `z` with `r = |z|`.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Euclidean norm of a displacement.
#[inline]
pub(crate) fn norm(z: &[f64]) -> f64 {
    z.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Accumulate `scale * dwdr * z / r` into `out` (the gradient of a radial profile).
#[inline]
fn add_radial_grad(z: &[f64], r: f64, dwdr: f64, scale: f64, out: &mut [f64]) {
    if r > 0.0 {
        let f = scale * dwdr / r;
        for (o, zi) in out.iter_mut().zip(z) {
            *o += f * zi;
        }
    }
    // At r = 0 every radial profile used here has either a vanishing or
    // direction-free derivative; the symmetric choice is a zero gradient.
}

fn require_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::parameter(name, format!("must be positive and finite, got {v}")))
    }
}

// ---------------------------------------------------------------------------
// Pair kernels
// ---------------------------------------------------------------------------

/// Symmetric two-body interaction evaluated on a displacement `z = x_i - x_j`.
///
/// Implementations must guarantee `total(z) = smooth_part(z) + singular_part(z)`
/// (exactly, both branches sharing the same floating-point expressions wherever
/// they overlap) and `singular_part(z) = 0` exactly for `|z| >= singular_range()`.
pub trait PairKernel: Send + Sync {
    /// Full interaction energy at displacement `z`.
    fn total(&self, z: &[f64]) -> f64;

    /// Smooth (differentiable, long-range) part.
    fn smooth_part(&self, z: &[f64]) -> f64;

    /// Singular/short-range part; identically zero beyond `singular_range()`.
    fn singular_part(&self, z: &[f64]) -> f64;

    /// Accumulate `scale * ∇ smooth_part(z)` into `out`.
    fn grad_smooth_into(&self, z: &[f64], scale: f64, out: &mut [f64]);

    /// Upper bound for `sup |total|`, when finite.
    fn sup_norm_bound(&self) -> Option<f64>;

    /// Radius beyond which the singular part vanishes identically (0 = none).
    fn singular_range(&self) -> f64;
}

/// One-dimensional Coulomb interaction `W(x) = |x| / (2 eps)`.
///
/// Smooth everywhere except the kink at the origin; treated as entirely smooth
/// (no singular part) with the symmetric convention `W'(0) = 0`.
#[derive(Clone, Debug)]
pub struct Coulomb1d {
    epsilon: f64,
}

impl Coulomb1d {
    pub fn new(epsilon: f64) -> Result<Self> {
        require_positive("epsilon", epsilon)?;
        Ok(Self { epsilon })
    }
}

impl PairKernel for Coulomb1d {
    fn total(&self, z: &[f64]) -> f64 {
        norm(z) / (2.0 * self.epsilon)
    }

    fn smooth_part(&self, z: &[f64]) -> f64 {
        self.total(z)
    }

    fn singular_part(&self, _z: &[f64]) -> f64 {
        0.0
    }

    fn grad_smooth_into(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        let r = norm(z);
        add_radial_grad(z, r, 1.0 / (2.0 * self.epsilon), scale, out);
    }

    fn sup_norm_bound(&self) -> Option<f64> {
        None
    }

    fn singular_range(&self) -> f64 {
        0.0
    }
}

/// Three-dimensional Coulomb kernel `W(r) = 1 / (4 pi eps r)` split at `r_c`:
///
/// * smooth part `W1(r) = (1/4 pi eps) * (-(r - r_c)/r_c^2 + 1/r_c)` for `r <= r_c`,
///   continuing as the full `1/(4 pi eps r)` beyond `r_c` (C^1 at the seam);
/// * singular part `W2 = W - W1`, supported on `r < r_c`.
#[derive(Clone, Debug)]
pub struct Coulomb3dSplit {
    epsilon: f64,
    r_c: f64,
    /// 1 / (4 pi eps)
    k: f64,
}

impl Coulomb3dSplit {
    pub fn new(epsilon: f64, r_c: f64) -> Result<Self> {
        require_positive("epsilon", epsilon)?;
        require_positive("r_c", r_c)?;
        Ok(Self { epsilon, r_c, k: 1.0 / (4.0 * std::f64::consts::PI * epsilon) })
    }

    pub fn splitting_radius(&self) -> f64 {
        self.r_c
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    fn smooth_radial(&self, r: f64) -> f64 {
        if r <= self.r_c {
            self.k * (-(r - self.r_c) / (self.r_c * self.r_c) + 1.0 / self.r_c)
        } else {
            self.k / r
        }
    }

    /// One-sided derivatives of the smooth profile agree at `r_c`:
    /// both equal `-1 / (4 pi eps r_c^2)`.
    #[inline]
    fn smooth_radial_deriv(&self, r: f64) -> f64 {
        if r <= self.r_c {
            -self.k / (self.r_c * self.r_c)
        } else {
            -self.k / (r * r)
        }
    }
}

impl PairKernel for Coulomb3dSplit {
    fn total(&self, z: &[f64]) -> f64 {
        self.k / norm(z)
    }

    fn smooth_part(&self, z: &[f64]) -> f64 {
        self.smooth_radial(norm(z))
    }

    fn singular_part(&self, z: &[f64]) -> f64 {
        let r = norm(z);
        if r >= self.r_c {
            0.0
        } else {
            self.k / r - self.smooth_radial(r)
        }
    }

    fn grad_smooth_into(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        let r = norm(z);
        add_radial_grad(z, r, self.smooth_radial_deriv(r), scale, out);
    }

    fn sup_norm_bound(&self) -> Option<f64> {
        None
    }

    fn singular_range(&self) -> f64 {
        self.r_c
    }
}

/// Bounded Coulomb kernel with a quadratic cap inside `r_n`:
/// `Wbar(r) = (3 - r^2/r_n^2) / (8 pi eps r_n)` for `r < r_n`,
/// `1 / (4 pi eps r)` otherwise. C^1 across `r_n`, bounded by
/// `3 / (8 pi eps r_n)`.
#[derive(Clone, Debug)]
pub struct Coulomb3dCutoff {
    epsilon: f64,
    r_n: f64,
    k: f64,
}

impl Coulomb3dCutoff {
    pub fn new(epsilon: f64, r_n: f64) -> Result<Self> {
        require_positive("epsilon", epsilon)?;
        require_positive("r_n", r_n)?;
        Ok(Self { epsilon, r_n, k: 1.0 / (4.0 * std::f64::consts::PI * epsilon) })
    }

    pub fn cutoff_radius(&self) -> f64 {
        self.r_n
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn value_radial(&self, r: f64) -> f64 {
        if r < self.r_n {
            self.k / (2.0 * self.r_n) * (3.0 - r * r / (self.r_n * self.r_n))
        } else {
            self.k / r
        }
    }

    #[inline]
    pub fn deriv_radial(&self, r: f64) -> f64 {
        if r < self.r_n {
            -self.k * r / (self.r_n * self.r_n * self.r_n)
        } else {
            -self.k / (r * r)
        }
    }
}

impl PairKernel for Coulomb3dCutoff {
    fn total(&self, z: &[f64]) -> f64 {
        self.value_radial(norm(z))
    }

    fn smooth_part(&self, z: &[f64]) -> f64 {
        self.total(z)
    }

    fn singular_part(&self, _z: &[f64]) -> f64 {
        0.0
    }

    fn grad_smooth_into(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        let r = norm(z);
        add_radial_grad(z, r, self.deriv_radial(r), scale, out);
    }

    fn sup_norm_bound(&self) -> Option<f64> {
        Some(3.0 * self.k / (2.0 * self.r_n))
    }

    fn singular_range(&self) -> f64 {
        0.0
    }
}

/// Full Lennard-Jones potential `4 eps ((sigma/r)^12 - (sigma/r)^6)`,
/// exposed as an unsplit (all-smooth) kernel.
#[derive(Clone, Debug)]
pub struct LennardJones {
    eps: f64,
    sigma: f64,
}

impl LennardJones {
    pub fn new(eps: f64, sigma: f64) -> Result<Self> {
        require_positive("eps", eps)?;
        require_positive("sigma", sigma)?;
        Ok(Self { eps, sigma })
    }

    #[inline]
    pub fn value_radial(&self, r: f64) -> f64 {
        let s6 = (self.sigma / r).powi(6);
        4.0 * self.eps * (s6 * s6 - s6)
    }

    #[inline]
    pub fn deriv_radial(&self, r: f64) -> f64 {
        let s6 = (self.sigma / r).powi(6);
        24.0 * self.eps * (s6 - 2.0 * s6 * s6) / r
    }
}

impl PairKernel for LennardJones {
    fn total(&self, z: &[f64]) -> f64 {
        self.value_radial(norm(z))
    }

    fn smooth_part(&self, z: &[f64]) -> f64 {
        self.total(z)
    }

    fn singular_part(&self, _z: &[f64]) -> f64 {
        0.0
    }

    fn grad_smooth_into(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        let r = norm(z);
        add_radial_grad(z, r, self.deriv_radial(r), scale, out);
    }

    fn sup_norm_bound(&self) -> Option<f64> {
        None
    }

    fn singular_range(&self) -> f64 {
        0.0
    }
}

/// Repulsive Lennard-Jones core: the LJ profile truncated at its zero
/// crossing `r = sigma` and carried entirely on the singular (Metropolis)
/// side. Continuous at the truncation radius (`LJ(sigma) = 0`), compactly
/// supported, and never differentiated.
#[derive(Clone, Debug)]
pub struct LennardJonesCore {
    lj: LennardJones,
}

impl LennardJonesCore {
    pub fn new(eps: f64, sigma: f64) -> Result<Self> {
        Ok(Self { lj: LennardJones::new(eps, sigma)? })
    }
}

impl PairKernel for LennardJonesCore {
    fn total(&self, z: &[f64]) -> f64 {
        self.singular_part(z)
    }

    fn smooth_part(&self, _z: &[f64]) -> f64 {
        0.0
    }

    fn singular_part(&self, z: &[f64]) -> f64 {
        let r = norm(z);
        if r >= self.lj.sigma {
            0.0
        } else {
            self.lj.value_radial(r)
        }
    }

    fn grad_smooth_into(&self, _z: &[f64], _scale: f64, _out: &mut [f64]) {}

    fn sup_norm_bound(&self) -> Option<f64> {
        None
    }

    fn singular_range(&self) -> f64 {
        self.lj.sigma
    }
}

/// Smooth bounded bump kernel `W(z) = amplitude * exp(-|z|^2 / length^2)`.
#[derive(Clone, Debug)]
pub struct GaussianKernel {
    amplitude: f64,
    length: f64,
}

impl GaussianKernel {
    pub fn new(amplitude: f64, length: f64) -> Result<Self> {
        if !amplitude.is_finite() {
            return Err(Error::parameter("amplitude", "must be finite"));
        }
        require_positive("length", length)?;
        Ok(Self { amplitude, length })
    }
}

impl PairKernel for GaussianKernel {
    fn total(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().map(|c| c * c).sum();
        self.amplitude * (-r2 / (self.length * self.length)).exp()
    }

    fn smooth_part(&self, z: &[f64]) -> f64 {
        self.total(z)
    }

    fn singular_part(&self, _z: &[f64]) -> f64 {
        0.0
    }

    fn grad_smooth_into(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        let l2 = self.length * self.length;
        let v = self.total(z);
        let f = scale * (-2.0 / l2) * v;
        for (o, zi) in out.iter_mut().zip(z) {
            *o += f * zi;
        }
    }

    fn sup_norm_bound(&self) -> Option<f64> {
        Some(self.amplitude.abs())
    }

    fn singular_range(&self) -> f64 {
        0.0
    }
}

/// The identically-zero kernel (degenerate, product-measure targets).
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroKernel;

impl PairKernel for ZeroKernel {
    fn total(&self, _z: &[f64]) -> f64 {
        0.0
    }

    fn smooth_part(&self, _z: &[f64]) -> f64 {
        0.0
    }

    fn singular_part(&self, _z: &[f64]) -> f64 {
        0.0
    }

    fn grad_smooth_into(&self, _z: &[f64], _scale: f64, _out: &mut [f64]) {}

    fn sup_norm_bound(&self) -> Option<f64> {
        Some(0.0)
    }

    fn singular_range(&self) -> f64 {
        0.0
    }
}

// ---------------------------------------------------------------------------
// External potentials
// ---------------------------------------------------------------------------

/// One-body confining/external potential.
pub trait ExternalPotential: Send + Sync {
    /// Potential energy at `x`.
    fn value(&self, x: &[f64]) -> f64;

    /// Accumulate `scale * ∇U(x)` into `out`.
    fn grad_into(&self, x: &[f64], scale: f64, out: &mut [f64]);
}

/// Quadratic confinement `U(x) = lambda |x|^2 / 2`.
#[derive(Clone, Debug)]
pub struct QuadraticConfinement {
    lambda: f64,
}

impl QuadraticConfinement {
    pub fn new(lambda: f64) -> Result<Self> {
        require_positive("lambda", lambda)?;
        Ok(Self { lambda })
    }
}

impl ExternalPotential for QuadraticConfinement {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.lambda * x.iter().map(|c| c * c).sum::<f64>()
    }

    fn grad_into(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o += scale * self.lambda * xi;
        }
    }
}

/// External potential generated by a fixed source charge through a pair
/// kernel: `U(x) = strength * W_smooth(x - center)`. Only the smooth part of
/// the kernel is used, so the kernel must be smooth wherever the domain puts
/// particles.
#[derive(Clone)]
pub struct KernelExternal {
    strength: f64,
    center: Vec<f64>,
    kernel: Arc<dyn PairKernel>,
}

impl KernelExternal {
    pub fn new(strength: f64, center: Vec<f64>, kernel: Arc<dyn PairKernel>) -> Result<Self> {
        if !strength.is_finite() {
            return Err(Error::parameter("strength", "must be finite"));
        }
        Ok(Self { strength, center, kernel })
    }
}

impl ExternalPotential for KernelExternal {
    fn value(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        self.strength * self.kernel.smooth_part(&z)
    }

    fn grad_into(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        let z: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        self.kernel.grad_smooth_into(&z, scale * self.strength, out);
    }
}

/// `factor * U(x)` for an inner potential (used to attach species valences).
#[derive(Clone)]
pub struct ScaledExternal {
    factor: f64,
    inner: Arc<dyn ExternalPotential>,
}

impl ScaledExternal {
    pub fn new(factor: f64, inner: Arc<dyn ExternalPotential>) -> Self {
        Self { factor, inner }
    }
}

impl ExternalPotential for ScaledExternal {
    fn value(&self, x: &[f64]) -> f64 {
        self.factor * self.inner.value(x)
    }

    fn grad_into(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        self.inner.grad_into(x, scale * self.factor, out);
    }
}

/// The identically-zero external potential.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroExternal;

impl ExternalPotential for ZeroExternal {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn grad_into(&self, _x: &[f64], _scale: f64, _out: &mut [f64]) {}
}

// ---------------------------------------------------------------------------
// Domains
// ---------------------------------------------------------------------------

/// Reflect `x` into `[lo, hi]` by folding (mirror reflection, iterated).
#[inline]
pub fn fold_interval(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let t = (x - lo).rem_euclid(2.0 * w);
    lo + t.min(2.0 * w - t)
}

/// Spatial domain for particle positions. Bounded domains reflect.
#[derive(Clone, Debug, PartialEq)]
pub enum DomainSpec {
    /// Unbounded R^d, no boundary handling.
    AllSpace { dim: usize },
    /// Axis-aligned box with reflecting walls.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Spherical shell `inner <= |x| <= outer` with reflecting walls.
    Annulus { inner: f64, outer: f64, dim: usize },
}

impl DomainSpec {
    pub fn all_space(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::parameter("dim", "must be at least 1"));
        }
        Ok(DomainSpec::AllSpace { dim })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::rect(vec![lo], vec![hi])
    }

    pub fn rect(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::parameter("lo/hi", "must be non-empty and equal length"));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::parameter("lo/hi", format!("need finite lo < hi, got [{a}, {b}]")));
            }
        }
        Ok(DomainSpec::Box { lo, hi })
    }

    pub fn annulus(inner: f64, outer: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::parameter("dim", "must be at least 1"));
        }
        require_positive("inner", inner)?;
        if !(outer.is_finite() && outer > inner) {
            return Err(Error::parameter("outer", format!("need inner < outer, got {outer}")));
        }
        Ok(DomainSpec::Annulus { inner, outer, dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::AllSpace { dim } => *dim,
            DomainSpec::Box { lo, .. } => lo.len(),
            DomainSpec::Annulus { dim, .. } => *dim,
        }
    }

    /// Whether the domain has reflecting boundaries.
    pub fn is_bounded(&self) -> bool {
        !matches!(self, DomainSpec::AllSpace { .. })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() || x.iter().any(|c| !c.is_finite()) {
            return false;
        }
        match self {
            DomainSpec::AllSpace { .. } => true,
            DomainSpec::Box { lo, hi } => {
                x.iter().zip(lo.iter().zip(hi)).all(|(c, (a, b))| *a <= *c && *c <= *b)
            }
            DomainSpec::Annulus { inner, outer, .. } => {
                let r = norm(x);
                *inner <= r && r <= *outer
            }
        }
    }

    /// Reflect `x` into the domain in place (mirror reflection across the
    /// violated boundary, iterated until inside). Identity for interior points
    /// and for unbounded domains.
    pub fn reflect_into(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite position passed to reflect".into()));
        }
        match self {
            DomainSpec::AllSpace { .. } => {}
            DomainSpec::Box { lo, hi } => {
                for (c, (a, b)) in x.iter_mut().zip(lo.iter().zip(hi)) {
                    if *c < *a || *c > *b {
                        *c = fold_interval(*c, *a, *b);
                    }
                }
            }
            DomainSpec::Annulus { inner, outer, .. } => {
                let r = norm(x);
                if r < *inner || r > *outer {
                    let r_new = fold_interval(r, *inner, *outer);
                    if r > 0.0 {
                        let f = r_new / r;
                        for c in x.iter_mut() {
                            *c *= f;
                        }
                    } else {
                        // Degenerate proposal at the exact origin: place on the
                        // inner shell along the first axis.
                        x.fill(0.0);
                        x[0] = *inner;
                    }
                }
            }
        }
        Ok(())
    }

    /// Draw a uniform point from a bounded domain.
    pub fn sample_uniform<R: rand::Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            DomainSpec::AllSpace { .. } => Err(Error::Unsupported(
                "cannot sample uniformly from an unbounded domain; supply an init box".into(),
            )),
            DomainSpec::Box { lo, hi } => Ok(lo
                .iter()
                .zip(hi)
                .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                .collect()),
            DomainSpec::Annulus { inner, outer, dim } => {
                // Exact radial inverse-CDF in d dimensions, isotropic direction.
                let d = *dim as i32;
                let u: f64 = rng.random();
                let r = (inner.powi(d) + u * (outer.powi(d) - inner.powi(d))).powf(1.0 / d as f64);
                let mut dir = vec![0.0; *dim];
                loop {
                    let mut n2 = 0.0;
                    for c in dir.iter_mut() {
                        *c = rng.sample::<f64, _>(rand_distr::StandardNormal);
                        n2 += *c * *c;
                    }
                    if n2 > 1e-300 {
                        let inv = 1.0 / n2.sqrt();
                        for c in dir.iter_mut() {
                            *c *= inv * r;
                        }
                        return Ok(dir);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

    #[test]
    fn coulomb_1d_values() {
        let w = Coulomb1d::new(1.0).unwrap();
        assert_relative_eq!(w.total(&[2.0]), 1.0);
        assert_relative_eq!(w.total(&[-2.0]), 1.0);
        let w2 = Coulomb1d::new(0.5).unwrap();
        assert_relative_eq!(w2.total(&[1.0]), 1.0);
        assert_eq!(w.singular_part(&[0.3]), 0.0);
        let mut g = [0.0];
        w.grad_smooth_into(&[3.0], 1.0, &mut g);
        assert_relative_eq!(g[0], 0.5);
        g = [0.0];
        w.grad_smooth_into(&[-3.0], 1.0, &mut g);
        assert_relative_eq!(g[0], -0.5);
        g = [0.0];
        w.grad_smooth_into(&[0.0], 1.0, &mut g);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn coulomb_split_matches_total() {
        let w = Coulomb3dSplit::new(0.01, 0.1).unwrap();
        let z = [0.05, 0.0, 0.0];
        let expect = 1.0 / (FOUR_PI * 0.01 * 0.05);
        assert_relative_eq!(w.smooth_part(&z) + w.singular_part(&z), expect, max_relative = 1e-13);
        assert_relative_eq!(w.total(&z), expect, max_relative = 1e-13);
        // Beyond the splitting radius the singular part is exactly zero.
        let far = [0.2, 0.0, 0.0];
        assert_eq!(w.singular_part(&far), 0.0);
        assert_relative_eq!(w.smooth_part(&far), w.total(&far));
    }

    #[test]
    fn coulomb_split_smooth_is_c1_at_seam() {
        let w = Coulomb3dSplit::new(0.01, 0.1).unwrap();
        let expect = -1.0 / (FOUR_PI * 0.01 * 0.1 * 0.1);
        assert_relative_eq!(w.smooth_radial_deriv(0.1), expect, max_relative = 1e-13);
        assert_relative_eq!(w.smooth_radial_deriv(0.1 + 1e-15), expect, max_relative = 1e-9);
        // Value is continuous as well.
        assert_relative_eq!(w.smooth_radial(0.1), 1.0 / (FOUR_PI * 0.01 * 0.1), max_relative = 1e-13);
    }

    #[test]
    fn cutoff_kernel_values() {
        let w = Coulomb3dCutoff::new(1.0, 0.5).unwrap();
        // r = 0.25: (1/(8 pi * 0.5)) * (3 - 0.25)
        let expect = (3.0 - 0.25) / (8.0 * std::f64::consts::PI * 0.5);
        assert_relative_eq!(w.value_radial(0.25), expect, max_relative = 1e-13);
        // Continuity at r_n and exact bound at the origin.
        assert_relative_eq!(w.value_radial(0.5), 1.0 / (FOUR_PI * 0.5), max_relative = 1e-13);
        assert_relative_eq!(
            w.value_radial(0.5 - 1e-13),
            1.0 / (FOUR_PI * 0.5),
            max_relative = 1e-9
        );
        assert_relative_eq!(w.value_radial(0.0), w.sup_norm_bound().unwrap());
        assert_relative_eq!(w.value_radial(1.0), 1.0 / FOUR_PI, max_relative = 1e-13);
    }

    #[test]
    fn lennard_jones_values() {
        let w = LennardJones::new(0.01, 0.1).unwrap();
        // At r = sigma the potential crosses zero; at the minimum it equals -eps.
        assert_abs_diff_eq!(w.value_radial(0.1), 0.0, epsilon = 1e-15);
        let r_min = 0.1 * 2f64.powf(1.0 / 6.0);
        assert_relative_eq!(w.value_radial(r_min), -0.01, max_relative = 1e-12);
        assert_abs_diff_eq!(w.deriv_radial(r_min), 0.0, epsilon = 1e-12);
        // The repulsive core agrees below sigma and vanishes above.
        let core = LennardJonesCore::new(0.01, 0.1).unwrap();
        let z = [0.05, 0.0, 0.0];
        assert_relative_eq!(core.singular_part(&z), w.total(&z));
        assert_eq!(core.singular_part(&[0.11, 0.0, 0.0]), 0.0);
        assert_eq!(core.smooth_part(&z), 0.0);
        assert_eq!(core.singular_range(), 0.1);
    }

    #[test]
    fn quadratic_confinement_values() {
        let u = QuadraticConfinement::new(2.0).unwrap();
        assert_relative_eq!(u.value(&[1.0, 2.0]), 5.0);
        let mut g = [0.0, 0.0];
        u.grad_into(&[1.0, 2.0], 1.0, &mut g);
        assert_relative_eq!(g[0], 2.0);
        assert_relative_eq!(g[1], 4.0);
    }

    #[test]
    fn kernel_external_from_source_charge() {
        // A source of strength q at the origin through the 1d Coulomb kernel.
        let kernel = Arc::new(Coulomb1d::new(1.0).unwrap());
        let u = KernelExternal::new(0.5, vec![0.0], kernel).unwrap();
        assert_relative_eq!(u.value(&[4.0]), 0.5 * 2.0);
        let mut g = [0.0];
        u.grad_into(&[4.0], 2.0, &mut g);
        assert_relative_eq!(g[0], 2.0 * 0.5 * 0.5);
    }

    #[test]
    fn gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let split = Coulomb3dSplit::new(0.01, 0.1).unwrap();
        let cutoff = Coulomb3dCutoff::new(0.01, 0.1).unwrap();
        let lj = LennardJones::new(0.01, 0.1).unwrap();
        let gauss = GaussianKernel::new(1.0, 1.0).unwrap();
        let kernels: [&dyn PairKernel; 4] = [&split, &cutoff, &lj, &gauss];
        for kernel in kernels {
            for _ in 0..25 {
                let r = 0.03 + 0.3 * rng.random::<f64>();
                let mut z = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
                let n = norm(&z);
                for c in z.iter_mut() {
                    *c *= r / n;
                }
                let mut grad = [0.0; 3];
                kernel.grad_smooth_into(&z, 1.0, &mut grad);
                let mut fd = [0.0; 3];
                let h = 1e-6 * r.max(0.05);
                for d in 0..3 {
                    let mut zp = z;
                    let mut zm = z;
                    zp[d] += h;
                    zm[d] -= h;
                    fd[d] = (kernel.smooth_part(&zp) - kernel.smooth_part(&zm)) / (2.0 * h);
                }
                let diff = (0..3).map(|d| (grad[d] - fd[d]).powi(2)).sum::<f64>().sqrt();
                let scale = (0..3).map(|d| fd[d].powi(2)).sum::<f64>().sqrt();
                assert!(
                    diff <= 2e-6 * scale.max(1e-12),
                    "fd mismatch: diff={diff:.3e} scale={scale:.3e}"
                );
            }
        }
    }

    #[test]
    fn fold_interval_examples() {
        assert_relative_eq!(fold_interval(2.3, 0.0, 1.0), 0.3, max_relative = 1e-12);
        assert_relative_eq!(fold_interval(-0.1, 0.0, 15.0), 0.1, max_relative = 1e-12);
        assert_relative_eq!(fold_interval(0.4, 0.0, 1.0), 0.4);
    }

    #[test]
    fn annulus_reflection_preserves_direction() {
        let dom = DomainSpec::annulus(1.0, 10.0, 3).unwrap();
        let mut x = [0.0, 0.0, 10.6];
        dom.reflect_into(&mut x).unwrap();
        assert_relative_eq!(x[2], 9.4, max_relative = 1e-12);
        let mut y = [0.5, 0.0, 0.0];
        dom.reflect_into(&mut y).unwrap();
        assert_relative_eq!(y[0], 1.5, max_relative = 1e-12);
        assert!(dom.contains(&y));
    }

    #[test]
    fn reflect_rejects_non_finite() {
        let dom = DomainSpec::interval(0.0, 1.0).unwrap();
        let mut x = [f64::NAN];
        assert!(dom.reflect_into(&mut x).is_err());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(Coulomb1d::new(0.0).is_err());
        assert!(Coulomb3dSplit::new(1.0, -0.1).is_err());
        assert!(Coulomb3dCutoff::new(f64::NAN, 0.1).is_err());
        assert!(LennardJones::new(1.0, 0.0).is_err());
        assert!(QuadraticConfinement::new(-1.0).is_err());
        assert!(DomainSpec::interval(1.0, 1.0).is_err());
        assert!(DomainSpec::annulus(0.0, 1.0, 3).is_err());
    }

    proptest! {
        #[test]
        fn kernels_are_even(zx in -2.0f64..2.0, zy in -2.0f64..2.0, zz in -2.0f64..2.0) {
            prop_assume!(zx.abs() + zy.abs() + zz.abs() > 1e-6);
            let z = [zx, zy, zz];
            let neg = [-zx, -zy, -zz];
            let w = Coulomb3dSplit::new(0.01, 0.1).unwrap();
            prop_assert_eq!(w.total(&z), w.total(&neg));
            prop_assert_eq!(w.smooth_part(&z), w.smooth_part(&neg));
            prop_assert_eq!(w.singular_part(&z), w.singular_part(&neg));
            let g = GaussianKernel::new(0.7, 1.3).unwrap();
            prop_assert_eq!(g.total(&z), g.total(&neg));
        }

        #[test]
        fn split_identity_holds(r in 1e-4f64..0.2) {
            let w = Coulomb3dSplit::new(0.01, 0.1).unwrap();
            let z = [r, 0.0, 0.0];
            let total = w.total(&z);
            let sum = w.smooth_part(&z) + w.singular_part(&z);
            prop_assert!((total - sum).abs() <= 1e-12 * total.abs().max(1.0));
        }

        #[test]
        fn box_reflection_lands_inside(x in -30.0f64..30.0) {
            let dom = DomainSpec::interval(1.0, 15.0).unwrap();
            let mut p = [x];
            dom.reflect_into(&mut p).unwrap();
            prop_assert!(dom.contains(&p));
            // Idempotent on interior points.
            let q = p;
            dom.reflect_into(&mut p).unwrap();
            prop_assert_eq!(p[0], q[0]);
        }
    }
}
