//! Particle configurations, species systems, and exact N-body Gibbs energies.
//!
//! A [`SpeciesSystem`] bundles per-species external potentials and pair
//! kernels together with a pair-weight mode:
//!
//! * [`PairWeight::MeanField`] — every unordered intra-species pair carries
//!   `1/(N_k - 1)` and every cross pair `1/N_k` (equal species counts), the
//!   scaling whose large-`N` limit is the mean-field free-energy functional;
//! * [`PairWeight::ChargeUnit`] — every unordered pair carries `q z_i z_j`
//!   with a shared base kernel, the natural bookkeeping for ionic systems
//!   where each particle represents one unit of discretized charge.
//!
//! Energies are accumulated with compensated (Kahan-Neumaier) summation in a
//! fixed `i < j` order so that results are reproducible and permutation
//! differences stay at rounding level.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::potentials::{DomainSpec, ExternalPotential, PairKernel, ScaledExternal};

/// Maximum spatial dimension supported by stack-allocated scratch buffers.
pub const MAX_DIM: usize = 8;

/// Compensated (Neumaier) accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

// ---------------------------------------------------------------------------
// Particle configurations
// ---------------------------------------------------------------------------

/// Positions of `n >= 2` particles with per-particle species tags, all inside
/// a common domain. Positions are stored flat (`n * dim`).
#[derive(Clone, Debug)]
pub struct ParticleConfiguration {
    dim: usize,
    positions: Vec<f64>,
    species: Vec<u32>,
    domain: DomainSpec,
}

impl ParticleConfiguration {
    /// Build and validate a configuration. `positions.len()` must be a
    /// multiple of the domain dimension, with one species tag per particle.
    pub fn new(domain: DomainSpec, positions: Vec<f64>, species: Vec<u32>) -> Result<Self> {
        let dim = domain.dim();
        if dim > MAX_DIM {
            return Err(Error::parameter("dim", format!("at most {MAX_DIM} supported")));
        }
        if positions.is_empty() || positions.len() % dim != 0 {
            return Err(Error::parameter(
                "positions",
                format!("length {} is not a positive multiple of dim {dim}", positions.len()),
            ));
        }
        let n = positions.len() / dim;
        if n < 2 {
            return Err(Error::parameter("positions", "need at least 2 particles"));
        }
        if species.len() != n {
            return Err(Error::parameter(
                "species",
                format!("expected {n} tags, got {}", species.len()),
            ));
        }
        for i in 0..n {
            let p = &positions[i * dim..(i + 1) * dim];
            if !domain.contains(p) {
                return Err(Error::parameter(
                    "positions",
                    format!("particle {i} at {p:?} lies outside the domain"),
                ));
            }
        }
        Ok(Self { dim, positions, species, domain })
    }

    /// Uniform single-species shorthand.
    pub fn single_species(domain: DomainSpec, positions: Vec<f64>) -> Result<Self> {
        let dim = domain.dim();
        if dim == 0 || positions.len() % dim != 0 {
            return Err(Error::parameter("positions", "length must be a multiple of dim"));
        }
        let n = positions.len() / dim;
        Self::new(domain, positions, vec![0; n])
    }

    pub fn n(&self) -> usize {
        self.species.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn set_point(&mut self, i: usize, x: &[f64]) {
        self.positions[i * self.dim..(i + 1) * self.dim].copy_from_slice(x);
    }

    #[inline]
    pub fn species_of(&self, i: usize) -> u32 {
        self.species[i]
    }

    pub fn species(&self) -> &[u32] {
        &self.species
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Number of particles per species tag (indexed by tag).
    pub fn species_counts(&self) -> Vec<usize> {
        let max = self.species.iter().copied().max().unwrap_or(0) as usize;
        let mut counts = vec![0usize; max + 1];
        for &s in &self.species {
            counts[s as usize] += 1;
        }
        counts
    }
}

// ---------------------------------------------------------------------------
// Species systems
// ---------------------------------------------------------------------------

/// Pair-weight convention for the interaction sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairWeight {
    /// `1/(N_k - 1)` per unordered intra pair, `1/N_k` per unordered cross
    /// pair. Requires equal species counts.
    MeanField,
    /// `q * z_i * z_j` per unordered pair on a shared base kernel.
    ChargeUnit { q: f64 },
}

/// One species: its external potential, signed valence, and particle count.
#[derive(Clone)]
pub struct SpeciesSpec {
    pub external: Arc<dyn ExternalPotential>,
    pub valence: f64,
    pub count: usize,
}

/// Everything the sampler and the exact energy need to know about the target
/// Gibbs measure of an interacting particle system.
#[derive(Clone)]
pub struct SpeciesSystem {
    dim: usize,
    domain: DomainSpec,
    species: Vec<SpeciesSpec>,
    weight: PairWeight,
    /// Symmetric kernel matrix indexed by species pair.
    kernels: Vec<Vec<Option<Arc<dyn PairKernel>>>>,
    /// Optional unweighted short-range repulsion applied to every pair.
    hard_core: Option<Arc<dyn PairKernel>>,
    beta: f64,
    singular_range: f64,
}

impl SpeciesSystem {
    /// Single-species system with mean-field pair weights (`1/(N-1)`).
    pub fn single_species(
        domain: DomainSpec,
        external: Arc<dyn ExternalPotential>,
        kernel: Arc<dyn PairKernel>,
        count: usize,
        beta: f64,
    ) -> Result<Self> {
        let species = vec![SpeciesSpec { external, valence: 1.0, count }];
        let kernels = vec![vec![Some(kernel)]];
        Self::build(domain, species, PairWeight::MeanField, kernels, None, beta)
    }

    /// Two-species mean-field system with intra kernels `w` and cross kernel
    /// `w_cross`; both species must have the same count.
    pub fn mean_field_two(
        domain: DomainSpec,
        externals: [Arc<dyn ExternalPotential>; 2],
        intra: [Arc<dyn PairKernel>; 2],
        cross: Arc<dyn PairKernel>,
        count: usize,
        beta: f64,
    ) -> Result<Self> {
        let [u1, u2] = externals;
        let [w1, w2] = intra;
        let species = vec![
            SpeciesSpec { external: u1, valence: 1.0, count },
            SpeciesSpec { external: u2, valence: 1.0, count },
        ];
        let kernels = vec![
            vec![Some(w1), Some(cross.clone())],
            vec![Some(cross), Some(w2)],
        ];
        Self::build(domain, species, PairWeight::MeanField, kernels, None, beta)
    }

    /// Charge-unit system: every particle carries charge `q * z_k`, all pairs
    /// interact through the shared `kernel` with weight `q z_i z_j`, externals
    /// are `z_k * external`, and an optional hard core acts on every pair with
    /// weight one.
    pub fn charge_unit(
        domain: DomainSpec,
        external: Arc<dyn ExternalPotential>,
        kernel: Arc<dyn PairKernel>,
        q: f64,
        species: &[(f64, usize)],
        hard_core: Option<Arc<dyn PairKernel>>,
        beta: f64,
    ) -> Result<Self> {
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::parameter("q", format!("must be positive, got {q}")));
        }
        let specs: Vec<SpeciesSpec> = species
            .iter()
            .map(|&(z, count)| SpeciesSpec {
                external: Arc::new(ScaledExternal::new(z, external.clone())) as Arc<dyn ExternalPotential>,
                valence: z,
                count,
            })
            .collect();
        let s = specs.len();
        let kernels = vec![vec![Some(kernel.clone()); s]; s];
        Self::build(domain, specs, PairWeight::ChargeUnit { q }, kernels, hard_core, beta)
    }

    fn build(
        domain: DomainSpec,
        species: Vec<SpeciesSpec>,
        weight: PairWeight,
        kernels: Vec<Vec<Option<Arc<dyn PairKernel>>>>,
        hard_core: Option<Arc<dyn PairKernel>>,
        beta: f64,
    ) -> Result<Self> {
        if species.is_empty() {
            return Err(Error::parameter("species", "need at least one species"));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::parameter("beta", format!("must be positive, got {beta}")));
        }
        for (k, s) in species.iter().enumerate() {
            if s.count < 2 {
                return Err(Error::parameter(
                    "count",
                    format!("species {k} needs at least 2 particles, got {}", s.count),
                ));
            }
        }
        if weight == PairWeight::MeanField && species.len() > 1 {
            let c0 = species[0].count;
            if species.iter().any(|s| s.count != c0) {
                return Err(Error::parameter(
                    "count",
                    "mean-field pair weights require equal species counts",
                ));
            }
        }
        let mut singular_range: f64 = 0.0;
        for row in &kernels {
            for k in row.iter().flatten() {
                singular_range = singular_range.max(k.singular_range());
            }
        }
        if let Some(hc) = &hard_core {
            singular_range = singular_range.max(hc.singular_range());
        }
        Ok(Self { dim: domain.dim(), domain, species, weight, kernels, hard_core, beta, singular_range })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn species_spec(&self, s: usize) -> &SpeciesSpec {
        &self.species[s]
    }

    pub fn total_count(&self) -> usize {
        self.species.iter().map(|s| s.count).sum()
    }

    /// Coefficient applied to the kernel value of one unordered pair.
    #[inline]
    pub fn pair_coefficient(&self, a: u32, b: u32) -> f64 {
        match self.weight {
            PairWeight::MeanField => {
                if a == b {
                    1.0 / (self.species[a as usize].count as f64 - 1.0)
                } else {
                    1.0 / self.species[a as usize].count as f64
                }
            }
            PairWeight::ChargeUnit { q } => {
                q * self.species[a as usize].valence * self.species[b as usize].valence
            }
        }
    }

    #[inline]
    fn kernel(&self, a: u32, b: u32) -> Option<&Arc<dyn PairKernel>> {
        self.kernels[a as usize][b as usize].as_ref()
    }

    /// Validate that a configuration matches the declared species layout.
    pub fn check_configuration(&self, config: &ParticleConfiguration) -> Result<()> {
        if config.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: config.dim() });
        }
        let counts = config.species_counts();
        if counts.len() != self.species.len() {
            return Err(Error::parameter(
                "species",
                format!("configuration has {} species, system declares {}", counts.len(), self.species.len()),
            ));
        }
        for (k, (&have, spec)) in counts.iter().zip(&self.species).enumerate() {
            if have != spec.count {
                return Err(Error::parameter(
                    "species",
                    format!("species {k}: configuration has {have} particles, system declares {}", spec.count),
                ));
            }
        }
        Ok(())
    }

    /// Exact total energy of a configuration: external terms plus weighted
    /// pair terms (and the hard core, if present), in fixed `i < j` order with
    /// compensated summation.
    pub fn total_energy(&self, config: &ParticleConfiguration) -> Result<f64> {
        self.check_configuration(config)?;
        let n = config.n();
        let mut acc = Kahan::default();
        for i in 0..n {
            acc.add(self.external_value(config.species_of(i), config.point(i)));
        }
        let mut z = [0.0f64; MAX_DIM];
        let z = &mut z[..self.dim];
        for i in 0..n {
            let si = config.species_of(i);
            let xi = config.point(i);
            for j in (i + 1)..n {
                let sj = config.species_of(j);
                let xj = config.point(j);
                for d in 0..self.dim {
                    z[d] = xi[d] - xj[d];
                }
                if let Some(kernel) = self.kernel(si, sj) {
                    let v = self.pair_coefficient(si, sj) * kernel.total(z);
                    if !v.is_finite() {
                        return Err(Error::Singularity);
                    }
                    acc.add(v);
                }
                if let Some(hc) = &self.hard_core {
                    let v = hc.total(z);
                    if !v.is_finite() {
                        return Err(Error::Singularity);
                    }
                    acc.add(v);
                }
            }
        }
        Ok(acc.value())
    }

    /// `log` of the unnormalized Gibbs density, `-beta * E`.
    pub fn log_gibbs_unnormalized(&self, config: &ParticleConfiguration) -> Result<f64> {
        Ok(-self.beta * self.total_energy(config)?)
    }

    // --- sampler-facing pieces -------------------------------------------

    pub fn external_value(&self, s: u32, x: &[f64]) -> f64 {
        self.species[s as usize].external.value(x)
    }

    /// Accumulate the external-potential gradient for species `s` into `out`.
    pub fn external_grad_into(&self, s: u32, x: &[f64], out: &mut [f64]) {
        self.species[s as usize].external.grad_into(x, 1.0, out);
    }

    /// Accumulate the coefficient-weighted smooth pair force `c_ij ∇W1(x-y)`.
    #[inline]
    pub fn pair_smooth_grad_into(&self, si: u32, x: &[f64], sj: u32, y: &[f64], out: &mut [f64]) {
        let mut z = [0.0f64; MAX_DIM];
        let z = &mut z[..self.dim];
        for d in 0..self.dim {
            z[d] = x[d] - y[d];
        }
        if let Some(kernel) = self.kernel(si, sj) {
            kernel.grad_smooth_into(z, self.pair_coefficient(si, sj), out);
        }
        // The hard core lives entirely on the singular side; no gradient.
    }

    /// Coefficient-weighted singular pair energy `c_ij W2(x-y)` plus the hard
    /// core contribution.
    #[inline]
    pub fn pair_singular(&self, si: u32, x: &[f64], sj: u32, y: &[f64]) -> f64 {
        let mut z = [0.0f64; MAX_DIM];
        let z = &mut z[..self.dim];
        for d in 0..self.dim {
            z[d] = x[d] - y[d];
        }
        let mut v = 0.0;
        if let Some(kernel) = self.kernel(si, sj) {
            let range = kernel.singular_range();
            if range > 0.0 {
                v += self.pair_coefficient(si, sj) * kernel.singular_part(z);
            }
        }
        if let Some(hc) = &self.hard_core {
            v += hc.singular_part(z);
        }
        v
    }

    /// Largest singular support radius over all kernels (0 = pure Langevin,
    /// the Metropolis step always accepts).
    pub fn singular_range(&self) -> f64 {
        self.singular_range
    }
}

// ---------------------------------------------------------------------------
// Free-standing energy operations
// ---------------------------------------------------------------------------

/// Single-species N-body energy
/// `E = sum_i U(x_i) + (1/(2(N-1))) sum_{i != j} W(x_i - x_j)`.
pub fn energy_nbody(
    config: &ParticleConfiguration,
    u: &dyn ExternalPotential,
    w: &dyn PairKernel,
) -> Result<f64> {
    let n = config.n();
    let dim = config.dim();
    let mut acc = Kahan::default();
    for i in 0..n {
        acc.add(u.value(config.point(i)));
    }
    let coeff = 1.0 / (n as f64 - 1.0);
    let mut z = [0.0f64; MAX_DIM];
    let z = &mut z[..dim];
    for i in 0..n {
        let xi = config.point(i);
        for j in (i + 1)..n {
            let xj = config.point(j);
            for d in 0..dim {
                z[d] = xi[d] - xj[d];
            }
            let v = coeff * w.total(z);
            if !v.is_finite() {
                return Err(Error::Singularity);
            }
            acc.add(v);
        }
    }
    Ok(acc.value())
}

/// `log` of the unnormalized single-species Gibbs density, `-beta * E_N`.
pub fn log_gibbs_unnormalized(
    config: &ParticleConfiguration,
    u: &dyn ExternalPotential,
    w: &dyn PairKernel,
    beta: f64,
) -> Result<f64> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::parameter("beta", format!("must be positive, got {beta}")));
    }
    Ok(-beta * energy_nbody(config, u, w)?)
}

/// Two-species mean-field energy with equal counts `N`:
/// externals, `1/(2(N-1))` weighted intra sums for each species, and a
/// `1/N` weighted full cross sum.
pub fn energy_two_species(
    x: &ParticleConfiguration,
    y: &ParticleConfiguration,
    u: [&dyn ExternalPotential; 2],
    w: [&dyn PairKernel; 2],
    w_cross: &dyn PairKernel,
) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), got: y.dim() });
    }
    if x.n() != y.n() {
        return Err(Error::parameter(
            "count",
            format!("mean-field two-species energy requires equal counts, got {} and {}", x.n(), y.n()),
        ));
    }
    let n = x.n();
    let dim = x.dim();
    let mut acc = Kahan::default();
    for i in 0..n {
        acc.add(u[0].value(x.point(i)));
    }
    for j in 0..n {
        acc.add(u[1].value(y.point(j)));
    }
    let mut z = [0.0f64; MAX_DIM];
    let z = &mut z[..dim];
    let intra = 1.0 / (n as f64 - 1.0);
    for (config, kernel) in [(x, w[0]), (y, w[1])] {
        for i in 0..n {
            let xi = config.point(i);
            for j in (i + 1)..n {
                let xj = config.point(j);
                for d in 0..dim {
                    z[d] = xi[d] - xj[d];
                }
                let v = intra * kernel.total(z);
                if !v.is_finite() {
                    return Err(Error::Singularity);
                }
                acc.add(v);
            }
        }
    }
    let cross = 1.0 / n as f64;
    for i in 0..n {
        let xi = x.point(i);
        for j in 0..n {
            let yj = y.point(j);
            for d in 0..dim {
                z[d] = xi[d] - yj[d];
            }
            let v = cross * w_cross.total(z);
            if !v.is_finite() {
                return Err(Error::Singularity);
            }
            acc.add(v);
        }
    }
    Ok(acc.value())
}

/// Ion counts that realize total species charges `Q_+` and
/// `Q_- = Q_+ + integral(rho_f)` with per-particle charge unit `q` and
/// valences `z_+ > 0 > z_-`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PbCounts {
    pub n_plus: usize,
    pub n_minus: usize,
    /// Total negative-species charge magnitude implied by neutrality.
    pub q_minus_total: f64,
}

/// Compute ion counts `N_± = ceil(Q_± / (|z_±| q))` enforcing overall charge
/// neutrality against the fixed background charge `integral(rho_f)`.
pub fn pb_particle_counts(
    q_plus_total: f64,
    rho_f_integral: f64,
    q: f64,
    z_plus: f64,
    z_minus: f64,
) -> Result<PbCounts> {
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::parameter("q", format!("must be positive, got {q}")));
    }
    if !(z_plus.is_finite() && z_plus > 0.0) {
        return Err(Error::parameter("z_plus", format!("must be positive, got {z_plus}")));
    }
    if !(z_minus.is_finite() && z_minus < 0.0) {
        return Err(Error::parameter("z_minus", format!("must be negative, got {z_minus}")));
    }
    if !(q_plus_total.is_finite() && q_plus_total > 0.0) {
        return Err(Error::InfeasibleCharge(format!("Q_+ must be positive, got {q_plus_total}")));
    }
    let q_minus_total = q_plus_total + rho_f_integral;
    if !(q_minus_total.is_finite() && q_minus_total > 0.0) {
        return Err(Error::InfeasibleCharge(format!(
            "neutrality requires Q_- = Q_+ + integral(rho_f) > 0, got {q_minus_total}"
        )));
    }
    // Ceiling with a one-ulp-scale slack so exact integer ratios are not
    // bumped up by rounding in the division.
    let ceil_slack = |v: f64| ((v * (1.0 - 1e-12)).ceil() as usize).max(1);
    Ok(PbCounts {
        n_plus: ceil_slack(q_plus_total / (z_plus * q)),
        n_minus: ceil_slack(q_minus_total / (-z_minus * q)),
        q_minus_total,
    })
}
