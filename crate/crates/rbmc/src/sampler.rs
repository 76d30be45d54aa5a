//! Random-batch Metropolis sampler for N-body Gibbs measures.
//!
//! One *iteration* performs `movers_per_iteration` single-particle moves.
//! Each move picks a particle uniformly at random, runs `inner_steps`
//! Langevin proposals driven by the external force plus an unbiased
//! random-batch estimate of the smooth pair force (reflecting into the
//! domain after every step), and then accepts or rejects the composite
//! proposal through a Metropolis test on the singular pair energy alone.
//! Targets without a singular part always accept, so the sampler degenerates
//! to reflected Langevin dynamics with stochastic pair forces.
//!
//! The singular energy difference touches only particles within the
//! singular support radius; a [`CellList`] makes that lookup O(1) per move
//! while producing bit-identical sums to the brute-force scan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gibbs::{ParticleConfiguration, SpeciesSystem, MAX_DIM};
use crate::potentials::DomainSpec;

/// Everything the sampler needs from a target Gibbs measure
/// `exp(-beta E)` with `E = sum_i U_i + sum_{i<j} c_ij K(x_i, x_j)`.
///
/// `pair_smooth_grad_into` and `pair_singular` must already include the pair
/// coefficient `c_ij`; the sampler only adds the `(N-1)/(p-1)` batch factor.
pub trait RbmcTarget: Sync {
    fn dim(&self) -> usize;
    fn domain(&self) -> &DomainSpec;
    fn beta(&self) -> f64;
    /// Validate a configuration against the target's layout.
    fn check_configuration(&self, config: &ParticleConfiguration) -> Result<()>;
    /// Accumulate the external-force gradient for a particle of species `s`.
    fn external_grad_into(&self, s: u32, x: &[f64], out: &mut [f64]);
    /// Accumulate `c_ij * grad_x K_smooth(x, y)` into `out`.
    fn pair_smooth_grad_into(&self, si: u32, x: &[f64], sj: u32, y: &[f64], out: &mut [f64]);
    /// `c_ij * K_singular(x, y)`; must be exactly zero beyond
    /// [`RbmcTarget::singular_range`].
    fn pair_singular(&self, si: u32, x: &[f64], sj: u32, y: &[f64]) -> f64;
    /// Support radius of the singular part (0 disables the Metropolis test).
    fn singular_range(&self) -> f64;
}

impl RbmcTarget for SpeciesSystem {
    fn dim(&self) -> usize {
        self.dim()
    }
    fn domain(&self) -> &DomainSpec {
        self.domain()
    }
    fn beta(&self) -> f64 {
        self.beta()
    }
    fn check_configuration(&self, config: &ParticleConfiguration) -> Result<()> {
        self.check_configuration(config)
    }
    fn external_grad_into(&self, s: u32, x: &[f64], out: &mut [f64]) {
        self.external_grad_into(s, x, out);
    }
    fn pair_smooth_grad_into(&self, si: u32, x: &[f64], sj: u32, y: &[f64], out: &mut [f64]) {
        self.pair_smooth_grad_into(si, x, sj, y, out);
    }
    fn pair_singular(&self, si: u32, x: &[f64], sj: u32, y: &[f64]) -> f64 {
        self.pair_singular(si, x, sj, y)
    }
    fn singular_range(&self) -> f64 {
        self.singular_range()
    }
}

// ---------------------------------------------------------------------------
// Cell list
// ---------------------------------------------------------------------------

/// Uniform spatial binning for short-range neighbor queries.
///
/// Cell widths never drop below the cutoff, so scanning the 3^d window of
/// cells around a query point covers every particle within the cutoff.
/// Candidates are returned sorted so downstream reductions are order-stable.
#[derive(Clone, Debug)]
pub struct CellList {
    dim: usize,
    cutoff: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    inv_width: Vec<f64>,
    n_cells: Vec<usize>,
    strides: Vec<usize>,
    cells: Vec<Vec<usize>>,
    /// `(cell, slot)` per particle for O(1) removal.
    where_is: Vec<(usize, usize)>,
}

impl CellList {
    /// Build a cell list over the configuration. The binning box is the
    /// domain's bounding box when it is bounded, otherwise the current
    /// positions' bounding box (queries outside it fall back to a full scan
    /// and moves outside it trigger a rebuild).
    pub fn new(config: &ParticleConfiguration, cutoff: f64) -> Result<Self> {
        if !(cutoff.is_finite() && cutoff > 0.0) {
            return Err(Error::parameter("cutoff", format!("must be positive, got {cutoff}")));
        }
        let dim = config.dim();
        let n = config.n();
        let (lo, hi) = bounding_box(config);
        let mut n_cells = Vec::with_capacity(dim);
        let mut inv_width = Vec::with_capacity(dim);
        // Cap the number of cells so memory stays linear in particle count.
        let cap = ((8.0 * n as f64).powf(1.0 / dim as f64).ceil() as usize).max(1);
        for d in 0..dim {
            let extent = (hi[d] - lo[d]).max(0.0);
            let k = ((extent / cutoff).floor() as usize).clamp(1, cap);
            n_cells.push(k);
            inv_width.push(if extent > 0.0 { k as f64 / extent } else { 0.0 });
        }
        let mut strides = vec![1usize; dim];
        for d in 1..dim {
            strides[d] = strides[d - 1] * n_cells[d - 1];
        }
        let total: usize = n_cells.iter().product();
        let mut list = Self {
            dim,
            cutoff,
            lo,
            hi,
            inv_width,
            n_cells,
            strides,
            cells: vec![Vec::new(); total],
            where_is: vec![(0, 0); n],
        };
        for i in 0..n {
            let cell = list
                .cell_index(config.point(i))
                .expect("bounding box construction covers all particles");
            let slot = list.cells[cell].len();
            list.cells[cell].push(i);
            list.where_is[i] = (cell, slot);
        }
        Ok(list)
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Flat cell index of a point, or `None` if it lies outside the box.
    fn cell_index(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for d in 0..self.dim {
            if x[d] < self.lo[d] || x[d] > self.hi[d] {
                return None;
            }
            let c = ((x[d] - self.lo[d]) * self.inv_width[d]) as usize;
            idx += c.min(self.n_cells[d] - 1) * self.strides[d];
        }
        Some(idx)
    }

    /// Rebin particle `i` at its new position. Returns `false` when the
    /// position falls outside the binning box and a rebuild is required.
    pub fn try_move(&mut self, i: usize, x: &[f64]) -> bool {
        let Some(new_cell) = self.cell_index(x) else {
            return false;
        };
        let (old_cell, slot) = self.where_is[i];
        if new_cell == old_cell {
            return true;
        }
        let moved = self.cells[old_cell].swap_remove(slot);
        debug_assert_eq!(moved, i);
        if let Some(&other) = self.cells[old_cell].get(slot) {
            self.where_is[other] = (old_cell, slot);
        }
        let new_slot = self.cells[new_cell].len();
        self.cells[new_cell].push(i);
        self.where_is[i] = (new_cell, new_slot);
        true
    }

    /// Append every candidate within the cutoff of `x` (a superset, filtered
    /// only by cell geometry), excluding particle `exclude`. Candidates are
    /// appended unsorted; callers sort/dedup after merging queries.
    pub fn candidates_near(&self, x: &[f64], exclude: usize, out: &mut Vec<usize>) {
        if self.cell_index(x).is_none() {
            // Outside the binning box: fall back to a full scan.
            out.extend((0..self.where_is.len()).filter(|&j| j != exclude));
            return;
        }
        // Per-dimension window of cells that can contain points within the
        // cutoff of x.
        let mut win_lo = [0usize; MAX_DIM];
        let mut win_hi = [0usize; MAX_DIM];
        for d in 0..self.dim {
            let c = (((x[d] - self.lo[d]) * self.inv_width[d]) as usize).min(self.n_cells[d] - 1);
            win_lo[d] = c.saturating_sub(1);
            win_hi[d] = (c + 1).min(self.n_cells[d] - 1);
        }
        // Odometer over the window.
        let mut coord = [0usize; MAX_DIM];
        coord[..self.dim].copy_from_slice(&win_lo[..self.dim]);
        loop {
            let mut idx = 0;
            for d in 0..self.dim {
                idx += coord[d] * self.strides[d];
            }
            for &j in &self.cells[idx] {
                if j != exclude {
                    out.push(j);
                }
            }
            let mut d = 0;
            loop {
                if d == self.dim {
                    return;
                }
                if coord[d] < win_hi[d] {
                    coord[d] += 1;
                    break;
                }
                coord[d] = win_lo[d];
                d += 1;
            }
        }
    }
}

fn bounding_box(config: &ParticleConfiguration) -> (Vec<f64>, Vec<f64>) {
    let dim = config.dim();
    match config.domain() {
        DomainSpec::Box { lo, hi } => (lo.clone(), hi.clone()),
        DomainSpec::Annulus { outer, dim, .. } => (vec![-outer; *dim], vec![*outer; *dim]),
        DomainSpec::AllSpace { .. } => {
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for i in 0..config.n() {
                let p = config.point(i);
                for d in 0..dim {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
            (lo, hi)
        }
    }
}

/// Change in coefficient-weighted singular energy when particle `i` moves
/// from its current position to `x_new`, summed in ascending-index order.
/// With a cell list the sum runs over the sorted union of candidates near the
/// old and new positions; terms outside the singular range are exactly zero,
/// so the result is bit-identical to the brute-force scan.
pub fn singular_delta<T: RbmcTarget + ?Sized>(
    target: &T,
    config: &ParticleConfiguration,
    cell_list: Option<&CellList>,
    i: usize,
    x_new: &[f64],
    scratch: &mut Vec<usize>,
) -> f64 {
    let si = config.species_of(i);
    let x_old = config.point(i);
    let mut delta = 0.0;
    match cell_list {
        Some(cl) => {
            scratch.clear();
            cl.candidates_near(x_new, i, scratch);
            cl.candidates_near(x_old, i, scratch);
            scratch.sort_unstable();
            scratch.dedup();
            for &j in scratch.iter() {
                let sj = config.species_of(j);
                let y = config.point(j);
                delta += target.pair_singular(si, x_new, sj, y) - target.pair_singular(si, x_old, sj, y);
            }
        }
        None => {
            for j in 0..config.n() {
                if j == i {
                    continue;
                }
                let sj = config.species_of(j);
                let y = config.point(j);
                delta += target.pair_singular(si, x_new, sj, y) - target.pair_singular(si, x_old, sj, y);
            }
        }
    }
    delta
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

/// Tunable parameters of one sampling run.
#[derive(Clone, Debug)]
pub struct RbmcOptions {
    /// Langevin step size.
    pub tau: f64,
    /// Inner Langevin steps per move (`m`).
    pub inner_steps: usize,
    /// Random-batch size (`p - 1`), drawn without replacement from the other
    /// particles.
    pub batch_size: usize,
    /// Single-particle moves per iteration.
    pub movers_per_iteration: usize,
    /// Iterations before recording starts.
    pub burn_in: usize,
    /// Total iterations (including burn-in).
    pub iterations: usize,
    /// Record every `thin`-th iteration after burn-in.
    pub thin: usize,
    /// Keep the batch fixed across the inner steps of one move instead of
    /// resampling it every step.
    pub freeze_batch: bool,
    pub seed: u64,
    /// RNG stream, typically the chain index.
    pub stream: u64,
}

impl Default for RbmcOptions {
    fn default() -> Self {
        Self {
            tau: 0.01,
            inner_steps: 1,
            batch_size: 1,
            movers_per_iteration: 1,
            burn_in: 0,
            iterations: 0,
            thin: 1,
            freeze_batch: false,
            seed: 0,
            stream: 0,
        }
    }
}

impl RbmcOptions {
    fn validate(&self, n: usize) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::parameter("tau", format!("must be positive, got {}", self.tau)));
        }
        if self.inner_steps == 0 {
            return Err(Error::parameter("inner_steps", "must be at least 1"));
        }
        if self.batch_size == 0 || self.batch_size > n - 1 {
            return Err(Error::parameter(
                "batch_size",
                format!("must be in 1..={} for {n} particles, got {}", n - 1, self.batch_size),
            ));
        }
        if self.movers_per_iteration == 0 {
            return Err(Error::parameter("movers_per_iteration", "must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::parameter("thin", "must be at least 1"));
        }
        Ok(())
    }
}

/// Counters reported by a run.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunStats {
    pub iterations: usize,
    pub recorded: usize,
    pub proposed: u64,
    pub accepted: u64,
}

impl RunStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Single-chain sampler state.
pub struct RbmcDriver<'a, T: RbmcTarget + ?Sized> {
    target: &'a T,
    options: RbmcOptions,
    config: ParticleConfiguration,
    rng: ChaCha8Rng,
    cell_list: Option<CellList>,
    stats: RunStats,
    batch: Vec<usize>,
    neighbor_scratch: Vec<usize>,
    work: Vec<usize>,
}

impl<'a, T: RbmcTarget + ?Sized> RbmcDriver<'a, T> {
    pub fn new(target: &'a T, initial: ParticleConfiguration, options: RbmcOptions) -> Result<Self> {
        target.check_configuration(&initial)?;
        options.validate(initial.n())?;
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(options.stream);
        let cell_list = if target.singular_range() > 0.0 {
            Some(CellList::new(&initial, target.singular_range())?)
        } else {
            None
        };
        Ok(Self {
            target,
            options,
            config: initial,
            rng,
            cell_list,
            stats: RunStats::default(),
            batch: Vec::new(),
            neighbor_scratch: Vec::new(),
            work: Vec::new(),
        })
    }

    pub fn state(&self) -> &ParticleConfiguration {
        &self.config
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn into_state(self) -> ParticleConfiguration {
        self.config
    }

    /// Draw `batch_size` indices uniformly without replacement from
    /// `0..n` excluding `skip`, into `self.batch`.
    fn draw_batch(&mut self, skip: usize) {
        let n = self.config.n();
        let b = self.options.batch_size;
        self.batch.clear();
        if 2 * b >= n - 1 {
            // Dense case: partial Fisher-Yates over all other indices.
            self.work.clear();
            self.work.extend((0..n).filter(|&j| j != skip));
            let m = self.work.len();
            for k in 0..b {
                let j = self.rng.random_range(k..m);
                self.work.swap(k, j);
                self.batch.push(self.work[k]);
            }
        } else {
            // Sparse case: rejection sampling with a linear duplicate check.
            while self.batch.len() < b {
                let mut j = self.rng.random_range(0..n - 1);
                if j >= skip {
                    j += 1;
                }
                if !self.batch.contains(&j) {
                    self.batch.push(j);
                }
            }
        }
    }

    /// One single-particle move: `inner_steps` random-batch Langevin steps,
    /// then a Metropolis test on the singular pair energy (skipped entirely
    /// when the target has no singular part).
    fn move_one(&mut self) -> Result<()> {
        let n = self.config.n();
        let dim = self.target.dim();
        let beta = self.target.beta();
        let tau = self.options.tau;
        let noise = (2.0 * tau / beta).sqrt();
        let batch_factor = (n as f64 - 1.0) / self.options.batch_size as f64;

        let i = self.rng.random_range(0..n);
        let si = self.config.species_of(i);

        let mut x = [0.0f64; MAX_DIM];
        x[..dim].copy_from_slice(self.config.point(i));
        let mut grad = [0.0f64; MAX_DIM];
        let mut pair = [0.0f64; MAX_DIM];

        for step in 0..self.options.inner_steps {
            if step == 0 || !self.options.freeze_batch {
                self.draw_batch(i);
            }
            grad[..dim].fill(0.0);
            self.target.external_grad_into(si, &x[..dim], &mut grad[..dim]);
            pair[..dim].fill(0.0);
            for idx in 0..self.batch.len() {
                let j = self.batch[idx];
                let sj = self.config.species_of(j);
                self.target
                    .pair_smooth_grad_into(si, &x[..dim], sj, self.config.point(j), &mut pair[..dim]);
            }
            for d in 0..dim {
                let z: f64 = self.rng.sample(StandardNormal);
                x[d] += -(grad[d] + batch_factor * pair[d]) * tau + noise * z;
            }
            self.target.domain().reflect_into(&mut x[..dim])?;
        }

        let accept = if self.target.singular_range() > 0.0 {
            self.stats.proposed += 1;
            let delta = singular_delta(
                self.target,
                &self.config,
                self.cell_list.as_ref(),
                i,
                &x[..dim],
                &mut self.neighbor_scratch,
            );
            // The uniform draw is always consumed so the RNG stream does not
            // depend on the sign of delta. A NaN delta (old and new positions
            // both singular) fails the comparison and rejects.
            let u: f64 = self.rng.random();
            let ok = u < (-beta * delta).exp();
            if ok {
                self.stats.accepted += 1;
            }
            ok
        } else {
            true
        };

        if accept {
            self.config.set_point(i, &x[..dim]);
            if let Some(cl) = &mut self.cell_list {
                if !cl.try_move(i, &x[..dim]) {
                    *cl = CellList::new(&self.config, self.target.singular_range())?;
                }
            }
        }
        Ok(())
    }

    /// Run one iteration (`movers_per_iteration` moves).
    pub fn step_iteration(&mut self) -> Result<()> {
        for _ in 0..self.options.movers_per_iteration {
            self.move_one()?;
        }
        self.stats.iterations += 1;
        Ok(())
    }

    /// Run the configured number of iterations, invoking `on_sample` on the
    /// current state at every recorded iteration.
    pub fn run(&mut self, mut on_sample: impl FnMut(&ParticleConfiguration)) -> Result<RunStats> {
        let burn_in = self.options.burn_in;
        let thin = self.options.thin;
        for n in 0..self.options.iterations {
            self.step_iteration()?;
            if n >= burn_in && (n - burn_in) % thin == 0 {
                on_sample(&self.config);
                self.stats.recorded += 1;
            }
        }
        Ok(self.stats)
    }
}

/// Run `n_chains` independent chains in parallel. Chain `c` uses RNG stream
/// `options.stream + c` for both its initial configuration and its driver,
/// and accumulates into its own `A` via `record`.
pub fn run_chains<T, A, I, F>(
    target: &T,
    options: &RbmcOptions,
    n_chains: usize,
    init: I,
    record: F,
) -> Result<Vec<(A, RunStats)>>
where
    T: RbmcTarget + ?Sized,
    A: Default + Send,
    I: Fn(u64, &mut ChaCha8Rng) -> Result<ParticleConfiguration> + Sync,
    F: Fn(&ParticleConfiguration, &mut A) + Sync,
{
    use rayon::prelude::*;
    if n_chains == 0 {
        return Err(Error::parameter("n_chains", "must be at least 1"));
    }
    (0..n_chains as u64)
        .into_par_iter()
        .map(|c| {
            let stream = options.stream + c;
            let mut init_rng = ChaCha8Rng::seed_from_u64(options.seed);
            init_rng.set_stream(stream);
            let initial = init(stream, &mut init_rng)?;
            let mut opts = options.clone();
            opts.stream = stream;
            let mut driver = RbmcDriver::new(target, initial, opts)?;
            let mut acc = A::default();
            let stats = driver.run(|config| record(config, &mut acc))?;
            Ok((acc, stats))
        })
        .collect()
}
