//! Deterministic mean-field fixed-point solver on 1D grids.
//!
//! The self-consistent stationary density of a McKean-Vlasov diffusion with
//! external potential `U`, pair interaction `W`, and inverse temperature
//! `beta` solves `mu = exp(-beta (U + W * mu)) / Z`. This module computes
//! that fixed point by damped Picard iteration over one or more coupled
//! species on a shared uniform grid, entirely independently of the particle
//! sampler, so the two can cross-validate each other.
//!
//! Couplings may be difference kernels `w(x - y)` (compiled to a Toeplitz
//! table) or general kernels `w(x, y)` (compiled to a dense matrix), which
//! covers both straight-line geometries and radially reduced problems.

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Grid densities
// ---------------------------------------------------------------------------

/// A function sampled on a uniform grid over `[lo, hi]`, integrated with the
/// trapezoid rule. Normalized instances represent probability densities.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::parameter("grid", format!("invalid interval [{lo}, {hi}]")));
        }
        if values.len() < 2 {
            return Err(Error::parameter("grid", "need at least 2 nodes"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("grid density contains non-finite values".into()));
        }
        Ok(Self { lo, hi, values })
    }

    pub fn from_fn(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::parameter("grid", "need at least 2 nodes"));
        }
        let dx = (hi - lo) / (n - 1) as f64;
        let values = (0..n).map(|i| f(lo + i as f64 * dx)).collect();
        Self::new(lo, hi, values)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.dx()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Trapezoid-rule integral over the grid.
    pub fn integral(&self) -> f64 {
        let n = self.values.len();
        let mut s = 0.5 * (self.values[0] + self.values[n - 1]);
        for v in &self.values[1..n - 1] {
            s += v;
        }
        s * self.dx()
    }

    /// Trapezoid-rule integral of `x^k * f(x)`.
    pub fn moment(&self, k: u32) -> f64 {
        let n = self.values.len();
        let dx = self.dx();
        let mut s = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            s += w * self.x(i).powi(k as i32) * v;
        }
        s * dx
    }

    /// Rescale so the integral is one.
    pub fn normalize(&mut self) -> Result<()> {
        let z = self.integral();
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::Numeric(format!("cannot normalize density with integral {z}")));
        }
        for v in &mut self.values {
            *v /= z;
        }
        Ok(())
    }

    /// Linear interpolation; zero outside the grid.
    pub fn eval_linear(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        let dx = self.dx();
        let t = (x - self.lo) / dx;
        let k = (t as usize).min(self.values.len() - 2);
        let s = t - k as f64;
        self.values[k] * (1.0 - s) + self.values[k + 1] * s
    }

    /// Cumulative integral of the linear interpolant, for exact bin masses.
    pub fn cdf(&self) -> Cdf {
        let n = self.values.len();
        let dx = self.dx();
        let mut cum = Vec::with_capacity(n);
        cum.push(0.0);
        for i in 1..n {
            let prev = cum[i - 1];
            cum.push(prev + 0.5 * dx * (self.values[i - 1] + self.values[i]));
        }
        let nonneg = self.values.iter().all(|&v| v >= 0.0);
        Cdf { lo: self.lo, hi: self.hi, dx, values: self.values.clone(), cum, nonneg }
    }
}

/// Cumulative integral of a [`GridDensity`]'s linear interpolant.
#[derive(Clone, Debug)]
pub struct Cdf {
    lo: f64,
    hi: f64,
    dx: f64,
    values: Vec<f64>,
    cum: Vec<f64>,
    nonneg: bool,
}

impl Cdf {
    /// Integral of the interpolant from the grid's left edge to `x`
    /// (clamped to the grid).
    pub fn at(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return *self.cum.last().unwrap();
        }
        let t = (x - self.lo) / self.dx;
        let k = (t as usize).min(self.values.len() - 2);
        let s = (t - k as f64) * self.dx;
        let slope = (self.values[k + 1] - self.values[k]) / self.dx;
        self.cum[k] + self.values[k] * s + 0.5 * slope * s * s
    }

    /// Integral of the interpolant over `[a, b]`.
    pub fn integral_between(&self, a: f64, b: f64) -> f64 {
        self.at(b) - self.at(a)
    }

    pub fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Inverse of [`Cdf::at`] for nonnegative densities: the `x` whose
    /// cumulative mass equals `mass` (clamped to `[0, total]`). Drawing
    /// `mass = U * total` with `U ~ Uniform(0,1)` samples the density.
    pub fn quantile(&self, mass: f64) -> Result<f64> {
        if !self.nonneg {
            return Err(Error::Numeric("quantile requires a nonnegative density".into()));
        }
        if !mass.is_finite() {
            return Err(Error::Numeric(format!("invalid mass {mass}")));
        }
        let total = self.total();
        if mass <= 0.0 {
            return Ok(self.lo);
        }
        if mass >= total {
            return Ok(self.hi);
        }
        // Cell containing the target mass.
        let k = self.cum.partition_point(|&c| c <= mass).saturating_sub(1);
        let k = k.min(self.values.len() - 2);
        let rem = mass - self.cum[k];
        let slope = (self.values[k + 1] - self.values[k]) / self.dx;
        // Solve v s + slope s^2 / 2 = rem for s in [0, dx], in the
        // cancellation-free form s = 2 rem / (v + sqrt(v^2 + 2 slope rem)).
        let v = self.values[k];
        let disc = (v * v + 2.0 * slope * rem).max(0.0);
        let den = v + disc.sqrt();
        let s = if den > 0.0 { (2.0 * rem / den).clamp(0.0, self.dx) } else { 0.0 };
        Ok(self.lo + k as f64 * self.dx + s)
    }
}

// ---------------------------------------------------------------------------
// Mean-field problems
// ---------------------------------------------------------------------------

/// Interaction kernel between two species in a mean-field problem.
pub enum CouplingKernel<'a> {
    /// `w(x - y)`; compiled to a Toeplitz table.
    Difference(&'a dyn Fn(f64) -> f64),
    /// `w(x, y)`; compiled to a dense matrix.
    General(&'a dyn Fn(f64, f64) -> f64),
    Zero,
}

/// A coupled system of mean-field fixed-point equations on one grid:
/// `mu_a = Z_a^{-1} exp(-beta (U_a + sum_b K_ab * mu_b))`.
pub struct MeanFieldProblem<'a> {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub beta: f64,
    pub externals: Vec<&'a dyn Fn(f64) -> f64>,
    /// Row `a`, column `b`: kernel applied to species `b`'s density when
    /// assembling species `a`'s field.
    pub couplings: Vec<Vec<CouplingKernel<'a>>>,
}

/// Damped Picard iteration controls.
#[derive(Clone, Copy, Debug)]
pub struct PicardOptions {
    /// Mixing weight of the new iterate, in `(0, 1]`.
    pub damping: f64,
    /// Stop when the undamped update moves every species by less than this
    /// in L1.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { damping: 0.5, tol: 1e-12, max_iters: 20_000 }
    }
}

/// Convergence report of a Picard solve.
#[derive(Clone, Copy, Debug)]
pub struct PicardReport {
    pub iterations: usize,
    /// Final maximal L1 residual of the undamped update.
    pub residual: f64,
}

/// Converged solution: per-species densities and their total fields
/// `Phi_a = U_a + sum_b K_ab * mu_b` at the grid nodes.
pub struct MeanFieldSolution {
    pub densities: Vec<GridDensity>,
    pub fields: Vec<Vec<f64>>,
    pub beta: f64,
    pub report: PicardReport,
}

enum CompiledKernel {
    /// `table[i - j + (n-1)] = w(x_i - y_j)`.
    Toeplitz(Vec<f64>),
    /// Row-major `matrix[i * n + j] = w(x_i, y_j)`.
    Dense(Vec<f64>),
    Zero,
}

impl CompiledKernel {
    fn compile(kernel: &CouplingKernel, lo: f64, dx: f64, n: usize) -> Result<Self> {
        let out = match kernel {
            CouplingKernel::Difference(w) => {
                let mut table = Vec::with_capacity(2 * n - 1);
                for k in -(n as i64 - 1)..=(n as i64 - 1) {
                    table.push(w(k as f64 * dx));
                }
                CompiledKernel::Toeplitz(table)
            }
            CouplingKernel::General(w) => {
                let mut m = Vec::with_capacity(n * n);
                for i in 0..n {
                    let xi = lo + i as f64 * dx;
                    for j in 0..n {
                        m.push(w(xi, lo + j as f64 * dx));
                    }
                }
                CompiledKernel::Dense(m)
            }
            CouplingKernel::Zero => CompiledKernel::Zero,
        };
        if let CompiledKernel::Toeplitz(t) = &out {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("coupling kernel is not finite on the grid".into()));
            }
        }
        if let CompiledKernel::Dense(m) = &out {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("coupling kernel is not finite on the grid".into()));
            }
        }
        Ok(out)
    }

    /// Accumulate `(K mu)(x_i)` into `out` by trapezoid quadrature.
    fn apply_into(&self, mu: &[f64], dx: f64, out: &mut [f64]) {
        let n = mu.len();
        match self {
            CompiledKernel::Toeplitz(table) => {
                for i in 0..n {
                    let base = n - 1 + i;
                    let mut s = 0.5 * (table[base] * mu[0] + table[i] * mu[n - 1]);
                    for j in 1..n - 1 {
                        s += table[base - j] * mu[j];
                    }
                    out[i] += s * dx;
                }
            }
            CompiledKernel::Dense(m) => {
                for i in 0..n {
                    let row = &m[i * n..(i + 1) * n];
                    let mut s = 0.5 * (row[0] * mu[0] + row[n - 1] * mu[n - 1]);
                    for j in 1..n - 1 {
                        s += row[j] * mu[j];
                    }
                    out[i] += s * dx;
                }
            }
            CompiledKernel::Zero => {}
        }
    }
}

/// Solve the coupled fixed point by damped Picard iteration starting from
/// the interaction-free densities `exp(-beta U_a)`.
pub fn solve_mean_field(problem: &MeanFieldProblem, opts: &PicardOptions) -> Result<MeanFieldSolution> {
    let s = problem.externals.len();
    if s == 0 {
        return Err(Error::parameter("externals", "need at least one species"));
    }
    if problem.couplings.len() != s || problem.couplings.iter().any(|row| row.len() != s) {
        return Err(Error::parameter("couplings", "coupling matrix must be square over the species"));
    }
    if !(problem.beta.is_finite() && problem.beta > 0.0) {
        return Err(Error::parameter("beta", format!("must be positive, got {}", problem.beta)));
    }
    if !(0.0 < opts.damping && opts.damping <= 1.0) {
        return Err(Error::parameter("damping", format!("must be in (0, 1], got {}", opts.damping)));
    }
    let n = problem.n;
    if n < 2 {
        return Err(Error::parameter("n", "need at least 2 grid nodes"));
    }
    let dx = (problem.hi - problem.lo) / (n - 1) as f64;
    if !(dx.is_finite() && dx > 0.0) {
        return Err(Error::parameter("grid", format!("invalid interval [{}, {}]", problem.lo, problem.hi)));
    }

    // Externals at the nodes.
    let mut u = Vec::with_capacity(s);
    for f in &problem.externals {
        let vals: Vec<f64> = (0..n).map(|i| f(problem.lo + i as f64 * dx)).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("external potential is not finite on the grid".into()));
        }
        u.push(vals);
    }
    let mut kernels = Vec::with_capacity(s);
    for row in &problem.couplings {
        let mut compiled = Vec::with_capacity(s);
        for k in row {
            compiled.push(CompiledKernel::compile(k, problem.lo, dx, n)?);
        }
        kernels.push(compiled);
    }

    // Interaction-free start.
    let mut mu: Vec<GridDensity> = Vec::with_capacity(s);
    for ua in &u {
        let mut g = GridDensity::new(problem.lo, problem.hi, boltzmann(ua, problem.beta))?;
        g.normalize()?;
        mu.push(g);
    }

    let mut fields = vec![vec![0.0; n]; s];
    let mut report = PicardReport { iterations: 0, residual: f64::INFINITY };
    for iter in 0..opts.max_iters {
        // Assemble fields from the current densities.
        for a in 0..s {
            fields[a].copy_from_slice(&u[a]);
            for b in 0..s {
                kernels[a][b].apply_into(mu[b].values(), dx, &mut fields[a]);
            }
        }
        // Undamped update and residual.
        let mut residual: f64 = 0.0;
        let mut next = Vec::with_capacity(s);
        for a in 0..s {
            let mut g = GridDensity::new(problem.lo, problem.hi, boltzmann(&fields[a], problem.beta))?;
            g.normalize()?;
            let l1: f64 = g
                .values()
                .iter()
                .zip(mu[a].values())
                .map(|(p, q)| (p - q).abs())
                .sum::<f64>()
                * dx;
            residual = residual.max(l1);
            next.push(g);
        }
        report = PicardReport { iterations: iter + 1, residual };
        if residual <= opts.tol {
            mu = next;
            // Reassemble the fields from the accepted densities so the
            // returned pair is self-consistent.
            for a in 0..s {
                fields[a].copy_from_slice(&u[a]);
                for b in 0..s {
                    kernels[a][b].apply_into(mu[b].values(), dx, &mut fields[a]);
                }
            }
            return Ok(MeanFieldSolution { densities: mu, fields, beta: problem.beta, report });
        }
        // Damped mix (stays normalized as a convex combination).
        for a in 0..s {
            let theta = opts.damping;
            let old = mu[a].values_mut();
            for (o, new) in old.iter_mut().zip(next[a].values()) {
                *o = (1.0 - theta) * *o + theta * *new;
            }
        }
    }
    Err(Error::NonConvergence { residual: report.residual, iterations: report.iterations })
}

fn boltzmann(field: &[f64], beta: f64) -> Vec<f64> {
    // Subtract the minimum before exponentiating for overflow safety; the
    // constant drops out in normalization.
    let m = field.iter().cloned().fold(f64::INFINITY, f64::min);
    field.iter().map(|v| (-beta * (v - m)).exp()).collect()
}

/// Maximal absolute stationarity residual
/// `d/dx (mu Phi') + beta^{-1} mu''` over all species, evaluated by central
/// differences at interior nodes whose `x` lies in `[window.0, window.1]`.
///
/// For the exact fixed point the flux `mu Phi' + beta^{-1} mu'` vanishes
/// identically, so this measures pure discretization error and must shrink
/// like `dx^2` under grid refinement.
pub fn stationarity_residual_max(solution: &MeanFieldSolution, window: (f64, f64)) -> f64 {
    let beta = solution.beta;
    let mut worst: f64 = 0.0;
    for (mu, phi) in solution.densities.iter().zip(&solution.fields) {
        let n = mu.n();
        let dx = mu.dx();
        let v = mu.values();
        // Flux at interior nodes (index offset 1).
        let flux: Vec<f64> = (1..n - 1)
            .map(|i| {
                let dphi = (phi[i + 1] - phi[i - 1]) / (2.0 * dx);
                let dmu = (v[i + 1] - v[i - 1]) / (2.0 * dx);
                v[i] * dphi + dmu / beta
            })
            .collect();
        for i in 2..n - 2 {
            let x = mu.x(i);
            if x < window.0 || x > window.1 {
                continue;
            }
            let r = (flux[i] - flux[i - 2]) / (2.0 * dx);
            worst = worst.max(r.abs());
        }
    }
    worst
}
