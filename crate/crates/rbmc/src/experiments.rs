//! Experiment drivers behind the command-line runner.
//!
//! Each driver builds the particle system and its mean-field reference from
//! a resolved config, runs the sampler, and writes plot-ready CSV files plus
//! a manifest (the canonical config with a `[result]` section appended).
//! The drivers are exposed as library functions so tests can run the same
//! code paths without touching the filesystem.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{
    ConvergenceConfig, ExactnessConfig, ExperimentBody, FixedPointConfig, NnConfig,
    OracleSection, Pb1dConfig, Pb3dConfig, PbPotentials, ResolvedConfig, SamplerSection,
    StudyKernel, StudyPotentials, version_string,
};
use crate::diagnostics::{least_squares_slope, Histogram};
use crate::error::{Error, Result};
use crate::gibbs::{pb_particle_counts, ParticleConfiguration, PbCounts, SpeciesSystem};
use crate::nn::{
    empirical_loss, generate_data, init_ensemble, noisy_sgd_step, predict, sigma_star,
    Dataset, NnGibbsTarget, THETA_DIM,
};
use crate::oracle::{
    solve_mean_field, Cdf, CouplingKernel, MeanFieldProblem, MeanFieldSolution, PicardOptions,
};
use crate::potentials::{
    Coulomb1d, Coulomb3dSplit, DomainSpec, ExternalPotential, GaussianKernel, KernelExternal,
    LennardJonesCore, PairKernel, QuadraticConfinement, ZeroKernel,
};
use crate::sampler::{run_chains, RbmcDriver, RbmcOptions, RunStats};

/// Configs shipped with the binary, selectable via `--preset NAME`.
pub const PRESETS: &[(&str, &str)] = &[
    ("pb1d_paper", include_str!("../presets/pb1d_paper.ini")),
    ("pb1d_smoke", include_str!("../presets/pb1d_smoke.ini")),
    ("pb3d_paper", include_str!("../presets/pb3d_paper.ini")),
    ("pb3d_smoke", include_str!("../presets/pb3d_smoke.ini")),
    ("nn_paper", include_str!("../presets/nn_paper.ini")),
    ("convergence_desk", include_str!("../presets/convergence_desk.ini")),
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

// RNG streams reserved for non-chain randomness (chains use small stream
// indices starting at the per-run base).
const STREAM_INIT: u64 = 900_001;
const STREAM_DATA_TRAIN: u64 = 900_011;
const STREAM_DATA_TEST: u64 = 900_012;
const STREAM_NN_INIT: u64 = 900_013;
const STREAM_SGD: u64 = 900_014;

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn chain_options(s: &SamplerSection, movers: usize, seed: u64, stream: u64) -> RbmcOptions {
    RbmcOptions {
        tau: s.tau,
        inner_steps: s.inner_steps,
        batch_size: s.p.saturating_sub(1),
        movers_per_iteration: movers,
        burn_in: s.burn_in as usize,
        iterations: s.iterations as usize,
        thin: s.thin.max(1) as usize,
        freeze_batch: false,
        seed,
        stream,
    }
}

/// One electrolyte system in the unit-charge convention plus its particle
/// bookkeeping.
pub struct PbSystem {
    pub system: SpeciesSystem,
    pub counts: PbCounts,
    pub q: f64,
}

impl PbSystem {
    pub fn n_total(&self) -> usize {
        self.counts.n_plus + self.counts.n_minus
    }

    /// Signed total charge of particles plus free charge; zero up to the
    /// one-particle rounding of the anion count.
    pub fn charge_audit(&self, p: &PbPotentials) -> f64 {
        self.q * (p.z_plus * self.counts.n_plus as f64 + p.z_minus * self.counts.n_minus as f64)
            + p.q_f
    }
}

fn unit_charge(p: &PbPotentials) -> Result<f64> {
    if !(p.z_plus > 0.0) {
        return Err(Error::parameter("z_plus", "cation valence must be positive"));
    }
    if p.n_plus == 0 {
        return Err(Error::parameter("n_plus", "need at least one cation"));
    }
    Ok(p.q_plus / (p.n_plus as f64 * p.z_plus))
}

fn uniform_species_config(
    domain: &DomainSpec,
    counts: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<ParticleConfiguration> {
    let mut positions = Vec::new();
    let mut species = Vec::new();
    for (s, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            positions.extend(domain.sample_uniform(rng)?);
            species.push(s as u32);
        }
    }
    ParticleConfiguration::new(domain.clone(), positions, species)
}

// ---------------------------------------------------------------------------
// 1D Poisson-Boltzmann
// ---------------------------------------------------------------------------

/// Two-species electrolyte on an interval with the 1D Coulomb kernel and a
/// free charge at the origin.
pub fn build_pb1d_system(p: &PbPotentials) -> Result<PbSystem> {
    let q = unit_charge(p)?;
    let counts = pb_particle_counts(p.q_plus, p.q_f, q, p.z_plus, p.z_minus)?;
    let kernel: Arc<dyn PairKernel> = Arc::new(Coulomb1d::new(p.epsilon)?);
    let external: Arc<dyn ExternalPotential> =
        Arc::new(KernelExternal::new(p.q_f, vec![0.0], kernel.clone())?);
    let system = SpeciesSystem::charge_unit(
        DomainSpec::interval(p.lo, p.l)?,
        external,
        kernel,
        q,
        &[(p.z_plus, counts.n_plus), (p.z_minus, counts.n_minus)],
        None,
        p.beta,
    )?;
    Ok(PbSystem { system, counts, q })
}

/// Mean-field reference for the 1D system: coupled fixed point for the
/// cation/anion densities (probability-normalized) on `[lo, l]`.
pub fn solve_pb1d_oracle(p: &PbPotentials, o: &OracleSection) -> Result<MeanFieldSolution> {
    let q = unit_charge(p)?;
    let counts = pb_particle_counts(p.q_plus, p.q_f, q, p.z_plus, p.z_minus)?;
    let half = 1.0 / (2.0 * p.epsilon);
    let (zp, zm, qf) = (p.z_plus, p.z_minus, p.q_f);
    // Signed total charge carried by each species.
    let cp = q * zp * counts.n_plus as f64;
    let cm = q * zm * counts.n_minus as f64;
    let ext_p = move |x: f64| zp * qf * x.abs() * half;
    let ext_m = move |x: f64| zm * qf * x.abs() * half;
    let k_pp = move |x: f64| zp * cp * x.abs() * half;
    let k_pm = move |x: f64| zp * cm * x.abs() * half;
    let k_mp = move |x: f64| zm * cp * x.abs() * half;
    let k_mm = move |x: f64| zm * cm * x.abs() * half;
    let problem = MeanFieldProblem {
        lo: p.lo,
        hi: p.l,
        n: o.grid_n,
        beta: p.beta,
        externals: vec![&ext_p, &ext_m],
        couplings: vec![
            vec![CouplingKernel::Difference(&k_pp), CouplingKernel::Difference(&k_pm)],
            vec![CouplingKernel::Difference(&k_mp), CouplingKernel::Difference(&k_mm)],
        ],
    };
    solve_mean_field(&problem, &picard(o))
}

fn picard(o: &OracleSection) -> PicardOptions {
    PicardOptions { damping: o.damping, tol: o.tol, max_iters: o.max_iters }
}

fn run_pb1d(
    cfg: &ResolvedConfig,
    c: &Pb1dConfig,
    out_dir: &Path,
    results: &mut Vec<(String, String)>,
) -> Result<()> {
    let p = &c.potentials;
    let sys = build_pb1d_system(p)?;
    let oracle = solve_pb1d_oracle(p, &c.oracle)?;
    let n_total = sys.n_total();

    let options =
        chain_options(&c.sampler, c.sampler.movers.resolve(n_total), cfg.seed, 0);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(STREAM_INIT);
    let initial = uniform_species_config(
        sys.system.domain(),
        &[sys.counts.n_plus, sys.counts.n_minus],
        &mut init_rng,
    )?;

    let mut hist = [Histogram::new(p.lo, p.l, c.bins)?, Histogram::new(p.lo, p.l, c.bins)?];
    let mut sample_rows = String::from("species,x\n");
    let mut kept: u64 = 0;
    let mut driver = RbmcDriver::new(&sys.system, initial, options)?;
    let stats = driver.run(|config| {
        for i in 0..config.n() {
            let s = config.species_of(i) as usize;
            let x = config.point(i)[0];
            hist[s].add(x);
            if kept < c.samples_cap {
                let name = if s == 0 { "plus" } else { "minus" };
                let _ = writeln!(sample_rows, "{name},{x}");
                kept += 1;
            }
        }
    })?;

    let totals = [hist[0].total() as f64, hist[1].total() as f64];
    let charge_totals = [p.q_plus, sys.counts.q_minus_total];
    let mut density = String::from(
        "x,rho_plus_oracle,rho_minus_oracle,rho_plus_sampled,rho_minus_sampled\n",
    );
    for k in 0..c.bins {
        let (a, b) = hist[0].bin_edges(k);
        let x = 0.5 * (a + b);
        let width = b - a;
        let rpo = charge_totals[0] * oracle.densities[0].eval_linear(x);
        let rmo = charge_totals[1] * oracle.densities[1].eval_linear(x);
        let rps = charge_totals[0] * hist[0].counts()[k] as f64 / (totals[0] * width);
        let rms = charge_totals[1] * hist[1].counts()[k] as f64 / (totals[1] * width);
        let _ = writeln!(density, "{x},{rpo},{rmo},{rps},{rms}");
    }
    write_text(&out_dir.join("density.csv"), &density)?;
    write_text(&out_dir.join("samples.csv"), &sample_rows)?;

    push_stats(results, &stats);
    results.push(("picard_iterations".into(), oracle.report.iterations.to_string()));
    results.push(("picard_residual".into(), format!("{:e}", oracle.report.residual)));
    results.push(("charge_audit".into(), format!("{:e}", sys.charge_audit(p))));
    Ok(())
}

fn push_stats(results: &mut Vec<(String, String)>, stats: &RunStats) {
    results.push(("iterations".into(), stats.iterations.to_string()));
    results.push(("recorded".into(), stats.recorded.to_string()));
    results.push(("acceptance_rate".into(), format!("{:.6}", stats.acceptance_rate())));
}

// ---------------------------------------------------------------------------
// Convergence study (weak error vs particle number)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct ConvergencePoint {
    pub n_plus: usize,
    pub n_total: usize,
    pub mswe: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceOutcome {
    pub points: Vec<ConvergencePoint>,
    /// `(slope, intercept)` of `ln MSWE` against `ln N_plus`; `None` for a
    /// single-point sweep.
    pub slope: Option<(f64, f64)>,
}

/// For each particle count, run `reps` independent chains and form the
/// mean-square relative weak error of `f(x) = x^2` per species against the
/// mean-field moments.
///
/// All particle counts record the same number of configurations (sized so
/// the smallest N still collects `n_samples` particle samples): a fixed
/// time window keeps the time-average variance proportional to 1/N, which
/// is the scaling the study measures. Chains start from mean-field quantile
/// draws; a cold start can drop a small-N chain into the mirrored
/// metastable state (species clouds on swapped walls), which the barrier
/// then preserves for the whole run.
pub fn run_convergence_study(c: &ConvergenceConfig, seed: u64) -> Result<ConvergenceOutcome> {
    let oracle = solve_pb1d_oracle(&c.potentials, &c.oracle)?;
    let reference = [oracle.densities[0].moment(2), oracle.densities[1].moment(2)];
    if reference.iter().any(|m| !(m.is_finite() && m.abs() > 0.0)) {
        return Err(Error::Numeric("mean-field reference moment vanishes".into()));
    }
    let quantiles = [oracle.densities[0].cdf(), oracle.densities[1].cdf()];

    #[derive(Clone, Default)]
    struct Sums {
        f: [crate::gibbs::Kahan; 2],
        count: [u64; 2],
    }

    let mut totals = Vec::with_capacity(c.n_list.len());
    for &n_plus in &c.n_list {
        let mut pot = c.potentials.clone();
        pot.n_plus = n_plus;
        totals.push(build_pb1d_system(&pot)?.n_total());
    }
    let min_total = *totals.iter().min().expect("n_list is non-empty") as u64;
    let configs_needed = c.n_samples.div_ceil(min_total).max(2);

    let mut points = Vec::with_capacity(c.n_list.len());
    for (ni, &n_plus) in c.n_list.iter().enumerate() {
        let mut pot = c.potentials.clone();
        pot.n_plus = n_plus;
        let sys = build_pb1d_system(&pot)?;
        let n_total = sys.n_total();
        let mut options = chain_options(
            &c.sampler,
            c.sampler.movers.resolve(n_total),
            seed,
            (ni as u64) * 10_000,
        );
        options.iterations =
            options.burn_in + options.thin * (configs_needed as usize - 1) + 1;

        let counts = [sys.counts.n_plus, sys.counts.n_minus];
        let domain = sys.system.domain().clone();
        let quantiles = &quantiles;
        let chains = run_chains(
            &sys.system,
            &options,
            c.reps,
            |_, rng| {
                let mut positions = Vec::new();
                let mut species = Vec::new();
                for (s, &count) in counts.iter().enumerate() {
                    for _ in 0..count {
                        positions.push(quantiles[s].quantile(rng.random())?);
                        species.push(s as u32);
                    }
                }
                ParticleConfiguration::new(domain.clone(), positions, species)
            },
            |config, acc: &mut Sums| {
                for i in 0..config.n() {
                    let s = config.species_of(i) as usize;
                    let x = config.point(i)[0];
                    acc.f[s].add(x * x);
                    acc.count[s] += 1;
                }
            },
        )?;

        let mut sq = 0.0;
        for (acc, _) in &chains {
            for s in 0..2 {
                if acc.count[s] == 0 {
                    return Err(Error::EmptySampleStream);
                }
                let mean = acc.f[s].value() / acc.count[s] as f64;
                let err = (mean - reference[s]).abs() / reference[s];
                sq += err * err;
            }
        }
        let mswe = (sq / (2.0 * c.reps as f64)).sqrt();
        points.push(ConvergencePoint { n_plus, n_total, mswe });
    }

    let slope = if points.len() >= 2 && points.iter().all(|p| p.mswe > 0.0) {
        let xs: Vec<f64> = points.iter().map(|p| (p.n_plus as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.mswe.ln()).collect();
        Some(least_squares_slope(&xs, &ys)?)
    } else {
        None
    };
    Ok(ConvergenceOutcome { points, slope })
}

fn run_convergence(
    cfg: &ResolvedConfig,
    c: &ConvergenceConfig,
    out_dir: &Path,
    results: &mut Vec<(String, String)>,
) -> Result<()> {
    let outcome = run_convergence_study(c, cfg.seed)?;
    let mut rates = String::from("n_plus,n_total,reps,mswe\n");
    for p in &outcome.points {
        let _ = writeln!(rates, "{},{},{},{}", p.n_plus, p.n_total, c.reps, p.mswe);
    }
    write_text(&out_dir.join("rates.csv"), &rates)?;
    if let Some((slope, intercept)) = outcome.slope {
        results.push(("slope".into(), format!("{slope:.6}")));
        results.push(("intercept".into(), format!("{intercept:.6}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 3D Poisson-Boltzmann
// ---------------------------------------------------------------------------

/// Two-species electrolyte in the annulus `lo < r < l` around a charged
/// cell, with the split Coulomb kernel and optionally a Lennard-Jones core.
pub fn build_pb3d_system(c: &Pb3dConfig) -> Result<PbSystem> {
    let p = &c.potentials;
    let q = unit_charge(p)?;
    let counts = pb_particle_counts(p.q_plus, p.q_f, q, p.z_plus, p.z_minus)?;
    let kernel: Arc<dyn PairKernel> = Arc::new(Coulomb3dSplit::new(p.epsilon, c.r_c)?);
    let external: Arc<dyn ExternalPotential> =
        Arc::new(KernelExternal::new(p.q_f, vec![0.0; 3], kernel.clone())?);
    let hard_core: Option<Arc<dyn PairKernel>> = if c.lj {
        Some(Arc::new(LennardJonesCore::new(c.lj_epsilon, c.lj_sigma)?))
    } else {
        None
    };
    let system = SpeciesSystem::charge_unit(
        DomainSpec::annulus(p.lo, p.l, 3)?,
        external,
        kernel,
        q,
        &[(p.z_plus, counts.n_plus), (p.z_minus, counts.n_minus)],
        hard_core,
        p.beta,
    )?;
    Ok(PbSystem { system, counts, q })
}

/// Radial mean-field reference: densities of the radius `r = |x|` (so the 3D
/// density is `m(r) / (4 pi r^2)`), coupled through the shell-averaged
/// Newton kernel `1 / (4 pi eps max(r, s))`.
pub fn solve_pb3d_oracle(c: &Pb3dConfig) -> Result<MeanFieldSolution> {
    let p = &c.potentials;
    let q = unit_charge(p)?;
    let counts = pb_particle_counts(p.q_plus, p.q_f, q, p.z_plus, p.z_minus)?;
    let k4 = 1.0 / (4.0 * std::f64::consts::PI * p.epsilon);
    let (zp, zm, qf, beta) = (p.z_plus, p.z_minus, p.q_f, p.beta);
    let cp = q * zp * counts.n_plus as f64;
    let cm = q * zm * counts.n_minus as f64;
    // The -(2/beta) ln r term turns the Boltzmann weight into r^2
    // exp(-beta Phi), i.e. the radial density of an isotropic 3D law.
    let ext_p = move |r: f64| zp * qf * k4 / r - 2.0 * r.ln() / beta;
    let ext_m = move |r: f64| zm * qf * k4 / r - 2.0 * r.ln() / beta;
    let k_pp = move |r: f64, s: f64| zp * cp * k4 / r.max(s);
    let k_pm = move |r: f64, s: f64| zp * cm * k4 / r.max(s);
    let k_mp = move |r: f64, s: f64| zm * cp * k4 / r.max(s);
    let k_mm = move |r: f64, s: f64| zm * cm * k4 / r.max(s);
    let problem = MeanFieldProblem {
        lo: p.lo,
        hi: p.l,
        n: c.oracle.grid_n,
        beta,
        externals: vec![&ext_p, &ext_m],
        couplings: vec![
            vec![CouplingKernel::General(&k_pp), CouplingKernel::General(&k_pm)],
            vec![CouplingKernel::General(&k_mp), CouplingKernel::General(&k_mm)],
        ],
    };
    solve_mean_field(&problem, &picard(&c.oracle))
}

fn run_pb3d(
    cfg: &ResolvedConfig,
    c: &Pb3dConfig,
    out_dir: &Path,
    results: &mut Vec<(String, String)>,
) -> Result<()> {
    let p = &c.potentials;
    let sys = build_pb3d_system(c)?;
    let oracle = solve_pb3d_oracle(c)?;
    let n_total = sys.n_total();

    let options =
        chain_options(&c.sampler, c.sampler.movers.resolve(n_total), cfg.seed, 0);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(STREAM_INIT);
    let initial = uniform_species_config(
        sys.system.domain(),
        &[sys.counts.n_plus, sys.counts.n_minus],
        &mut init_rng,
    )?;

    let mut hist = [Histogram::new(p.lo, p.l, c.bins)?, Histogram::new(p.lo, p.l, c.bins)?];
    let mut driver = RbmcDriver::new(&sys.system, initial, options)?;
    let stats = driver.run(|config| {
        for i in 0..config.n() {
            let s = config.species_of(i) as usize;
            let x = config.point(i);
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            hist[s].add(r);
        }
    })?;

    let totals = [hist[0].total() as f64, hist[1].total() as f64];
    let charge_totals = [p.q_plus, sys.counts.q_minus_total];
    let four_pi = 4.0 * std::f64::consts::PI;
    let mut density = String::from(
        "r,rho_plus_oracle,rho_minus_oracle,rho_plus_sampled,rho_minus_sampled\n",
    );
    for k in 0..c.bins {
        let (a, b) = hist[0].bin_edges(k);
        let r = 0.5 * (a + b);
        let shell = four_pi / 3.0 * (b * b * b - a * a * a);
        let rpo = charge_totals[0] * oracle.densities[0].eval_linear(r) / (four_pi * r * r);
        let rmo = charge_totals[1] * oracle.densities[1].eval_linear(r) / (four_pi * r * r);
        let rps = charge_totals[0] * hist[0].counts()[k] as f64 / (totals[0] * shell);
        let rms = charge_totals[1] * hist[1].counts()[k] as f64 / (totals[1] * shell);
        let _ = writeln!(density, "{r},{rpo},{rmo},{rps},{rms}");
    }
    write_text(&out_dir.join("density_radial.csv"), &density)?;

    push_stats(results, &stats);
    results.push((
        "outside_domain".into(),
        (hist[0].outside() + hist[1].outside()).to_string(),
    ));
    results.push(("picard_iterations".into(), oracle.report.iterations.to_string()));
    results.push(("picard_residual".into(), format!("{:e}", oracle.report.residual)));
    results.push(("charge_audit".into(), format!("{:e}", sys.charge_audit(p))));
    Ok(())
}

// ---------------------------------------------------------------------------
// Two-layer network
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct NnOutcome {
    pub grid_xs: Vec<f64>,
    pub y_true: Vec<f64>,
    pub y_sgd: Vec<f64>,
    pub y_sampled: Vec<f64>,
    /// Time-averaged half-MSE of the SGD iterates over the post-burn-in
    /// window.
    pub sgd_train: f64,
    pub sgd_test: f64,
    /// Half-MSE of the pooled sampled predictor.
    pub sampled_train: f64,
    pub sampled_test: f64,
    pub stats: RunStats,
}

/// Train the two-layer network twice from the same initialization: by noisy
/// SGD and by sampling the neuron Gibbs measure, then evaluate both
/// predictors on train/test data.
pub fn run_nn_study(c: &NnConfig, seed: u64) -> Result<NnOutcome> {
    if c.n_neurons < 2 {
        return Err(Error::parameter("n_neurons", "need at least 2 neurons"));
    }
    if c.grid_n < 2 {
        return Err(Error::parameter("grid_n", "need at least 2 grid points"));
    }
    if c.minibatch == 0 {
        return Err(Error::parameter("minibatch", "need at least one sample per step"));
    }
    let train = generate_data(c.p_train, c.noise_std, seed, STREAM_DATA_TRAIN)?;
    let test = generate_data(c.p_test, c.noise_std, seed, STREAM_DATA_TEST)?;
    let theta0 = init_ensemble(c.n_neurons, seed, STREAM_NN_INIT)?;

    // Noisy SGD leg.
    let mut thetas = theta0.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SGD);
    let total = c.sgd_burn_in + c.sgd_iterations;
    let mut batch = Vec::with_capacity(c.minibatch);
    let mut loss_sums = (0.0f64, 0.0f64);
    let mut loss_count = 0u64;
    for k in 0..total {
        batch.clear();
        for _ in 0..c.minibatch {
            let j = rng.random_range(0..train.len());
            batch.push((train.xs[j], train.ys[j]));
        }
        noisy_sgd_step(&mut thetas, &batch, c.s, c.lambda, c.beta, &mut rng)?;
        if k >= c.sgd_burn_in && (k - c.sgd_burn_in) % c.loss_stride.max(1) == 0 {
            loss_sums.0 += empirical_loss(&thetas, &train);
            loss_sums.1 += empirical_loss(&thetas, &test);
            loss_count += 1;
        }
    }
    if loss_count == 0 {
        return Err(Error::parameter("sgd_iterations", "no SGD losses recorded"));
    }
    let sgd_train = loss_sums.0 / loss_count as f64;
    let sgd_test = loss_sums.1 / loss_count as f64;

    let grid_xs: Vec<f64> =
        (0..c.grid_n).map(|i| i as f64 / (c.grid_n - 1) as f64).collect();
    let y_sgd: Vec<f64> = grid_xs.iter().map(|&x| predict(x, &thetas)).collect();

    // Sampling leg: accumulate the predictor sums over every recorded
    // neuron at each evaluation point.
    let target = NnGibbsTarget::new(&train, c.n_neurons, c.lambda, c.beta)?;
    let mut eval_xs = grid_xs.clone();
    eval_xs.extend_from_slice(&train.xs);
    eval_xs.extend_from_slice(&test.xs);

    let options = chain_options(
        &c.sampler,
        c.sampler.movers.resolve(c.n_neurons),
        seed,
        0,
    );
    let domain = DomainSpec::all_space(THETA_DIM)?;
    let initial =
        ParticleConfiguration::new(domain, theta0.clone(), vec![0; c.n_neurons])?;
    let mut sums = vec![0.0f64; eval_xs.len()];
    let mut recorded_neurons = 0u64;
    let mut driver = RbmcDriver::new(&target, initial, options)?;
    let stats = driver.run(|config| {
        for i in 0..config.n() {
            let theta = config.point(i);
            for (j, &x) in eval_xs.iter().enumerate() {
                sums[j] += sigma_star(x, theta);
            }
        }
        recorded_neurons += config.n() as u64;
    })?;
    if recorded_neurons == 0 {
        return Err(Error::EmptySampleStream);
    }
    // The pooled predictor is the grand mean over every recorded neuron,
    // i.e. the average of the per-configuration predictors.
    let scale = 1.0 / recorded_neurons as f64;
    let predictor: Vec<f64> = sums.iter().map(|s| s * scale).collect();
    let y_sampled = predictor[..c.grid_n].to_vec();
    let half_mse = |hat: &[f64], data: &Dataset| -> f64 {
        let mut s = 0.0;
        for (h, y) in hat.iter().zip(&data.ys) {
            s += (h - y) * (h - y);
        }
        0.5 * s / data.len() as f64
    };
    let sampled_train = half_mse(&predictor[c.grid_n..c.grid_n + train.len()], &train);
    let sampled_test = half_mse(&predictor[c.grid_n + train.len()..], &test);

    let y_true: Vec<f64> = grid_xs.iter().map(|&x| (3.0 * x).sin()).collect();
    Ok(NnOutcome {
        grid_xs,
        y_true,
        y_sgd,
        y_sampled,
        sgd_train,
        sgd_test,
        sampled_train,
        sampled_test,
        stats,
    })
}

fn run_nn(
    cfg: &ResolvedConfig,
    c: &NnConfig,
    out_dir: &Path,
    results: &mut Vec<(String, String)>,
) -> Result<()> {
    let outcome = run_nn_study(c, cfg.seed)?;
    let mut predictions = String::from("x,y_true,y_sgd,y_sampled\n");
    for (((x, yt), ys), ysa) in outcome
        .grid_xs
        .iter()
        .zip(&outcome.y_true)
        .zip(&outcome.y_sgd)
        .zip(&outcome.y_sampled)
    {
        let _ = writeln!(predictions, "{x},{yt},{ys},{ysa}");
    }
    write_text(&out_dir.join("predictions.csv"), &predictions)?;

    let mut losses = String::from("method,split,value\n");
    for (method, split, value) in [
        ("sgd", "train", outcome.sgd_train),
        ("sgd", "test", outcome.sgd_test),
        ("sampled", "train", outcome.sampled_train),
        ("sampled", "test", outcome.sampled_test),
    ] {
        let _ = writeln!(losses, "{method},{split},{value}");
    }
    write_text(&out_dir.join("losses.csv"), &losses)?;

    push_stats(results, &outcome.stats);
    Ok(())
}

// ---------------------------------------------------------------------------
// Fixed-point and exactness studies
// ---------------------------------------------------------------------------

/// Single-species mean-field solve for the study potentials.
pub fn solve_study_oracle(
    pot: &StudyPotentials,
    o: &OracleSection,
) -> Result<MeanFieldSolution> {
    let lam = pot.confinement;
    let ext = move |x: f64| 0.5 * lam * x * x;
    let gauss = match pot.kernel {
        StudyKernel::Gaussian { amplitude, length } => Some(move |x: f64| {
            let t = x / length;
            amplitude * (-t * t).exp()
        }),
        StudyKernel::Zero => None,
    };
    let coupling = match &gauss {
        Some(w) => CouplingKernel::Difference(w),
        None => CouplingKernel::Zero,
    };
    let problem = MeanFieldProblem {
        lo: pot.lo,
        hi: pot.hi,
        n: o.grid_n,
        beta: pot.beta,
        externals: vec![&ext],
        couplings: vec![vec![coupling]],
    };
    solve_mean_field(&problem, &picard(o))
}

fn study_system(pot: &StudyPotentials, n: usize) -> Result<SpeciesSystem> {
    let kernel: Arc<dyn PairKernel> = match pot.kernel {
        StudyKernel::Zero => Arc::new(ZeroKernel),
        StudyKernel::Gaussian { amplitude, length } => {
            Arc::new(GaussianKernel::new(amplitude, length)?)
        }
    };
    SpeciesSystem::single_species(
        DomainSpec::all_space(1)?,
        Arc::new(QuadraticConfinement::new(pot.confinement)?),
        kernel,
        n,
        pot.beta,
    )
}

/// Run one chain at step size `tau` and return the TV distance of the
/// 1-marginal histogram against the reference CDF, plus the recorded count.
#[allow(clippy::too_many_arguments)]
pub fn exactness_tv(
    c: &ExactnessConfig,
    reference: &Cdf,
    tau: f64,
    seed: u64,
    stream: u64,
) -> Result<(f64, u64)> {
    let system = study_system(&c.potentials, c.n)?;
    let options = RbmcOptions {
        tau,
        inner_steps: c.inner_steps,
        batch_size: c.p.saturating_sub(1),
        movers_per_iteration: c.movers.resolve(c.n),
        burn_in: c.burn_in as usize,
        iterations: (c.burn_in + c.thin.max(1) * (c.recorded.saturating_sub(1)) + 1) as usize,
        thin: c.thin.max(1) as usize,
        freeze_batch: false,
        seed,
        stream,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_INIT + stream);
    let sd = 1.0 / (c.potentials.beta * c.potentials.confinement).sqrt();
    let positions: Vec<f64> =
        (0..c.n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let initial =
        ParticleConfiguration::single_species(DomainSpec::all_space(1)?, positions)?;
    let mut hist = Histogram::new(c.potentials.lo, c.potentials.hi, c.bins)?;
    let mut driver = RbmcDriver::new(&system, initial, options)?;
    driver.run(|config| {
        for i in 0..config.n() {
            hist.add(config.point(i)[0]);
        }
    })?;
    let tv = hist.tv_against(reference)?;
    Ok((tv, hist.total()))
}

fn run_fixedpoint(
    _cfg: &ResolvedConfig,
    c: &FixedPointConfig,
    out_dir: &Path,
    results: &mut Vec<(String, String)>,
) -> Result<()> {
    let solution = solve_study_oracle(&c.potentials, &c.oracle)?;
    let rho = &solution.densities[0];
    let mut density = String::from("x,rho\n");
    for (i, &v) in rho.values().iter().enumerate() {
        let _ = writeln!(density, "{},{}", rho.x(i), v);
    }
    write_text(&out_dir.join("density.csv"), &density)?;
    let span = c.potentials.hi - c.potentials.lo;
    let window = (c.potentials.lo + 0.1 * span, c.potentials.hi - 0.1 * span);
    let residual = crate::oracle::stationarity_residual_max(&solution, window);
    results.push(("picard_iterations".into(), solution.report.iterations.to_string()));
    results.push(("picard_residual".into(), format!("{:e}", solution.report.residual)));
    results.push(("stationarity_residual".into(), format!("{:e}", residual)));
    Ok(())
}

fn run_exactness(
    cfg: &ResolvedConfig,
    c: &ExactnessConfig,
    out_dir: &Path,
    results: &mut Vec<(String, String)>,
) -> Result<()> {
    let solution = solve_study_oracle(&c.potentials, &c.oracle)?;
    let reference = solution.densities[0].cdf();
    let mut report = String::from("tau,tv,recorded_points\n");
    for (k, &tau) in c.taus.iter().enumerate() {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::parameter("taus", format!("step sizes must be positive, got {tau}")));
        }
        let (tv, points) = exactness_tv(c, &reference, tau, cfg.seed, k as u64)?;
        let _ = writeln!(report, "{tau},{tv},{points}");
    }
    write_text(&out_dir.join("report.csv"), &report)?;
    results.push(("picard_iterations".into(), solution.report.iterations.to_string()));
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Run the experiment described by `cfg`, writing CSV outputs and a manifest
/// into `out_dir` (created if missing).
pub fn run_experiment(cfg: &ResolvedConfig, out_dir: &Path) -> Result<()> {
    let t0 = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let mut results: Vec<(String, String)> =
        vec![("version".into(), version_string())];
    match &cfg.body {
        ExperimentBody::Pb1d(c) => run_pb1d(cfg, c, out_dir, &mut results)?,
        ExperimentBody::Pb3d(c) => run_pb3d(cfg, c, out_dir, &mut results)?,
        ExperimentBody::Nn(c) => run_nn(cfg, c, out_dir, &mut results)?,
        ExperimentBody::Convergence(c) => run_convergence(cfg, c, out_dir, &mut results)?,
        ExperimentBody::FixedPoint(c) => run_fixedpoint(cfg, c, out_dir, &mut results)?,
        ExperimentBody::Exactness(c) => run_exactness(cfg, c, out_dir, &mut results)?,
    }
    results.push(("wall_time_s".into(), format!("{:.3}", t0.elapsed().as_secs_f64())));
    write_text(&out_dir.join("manifest.ini"), &cfg.manifest(&results))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use approx::assert_abs_diff_eq;

    #[test]
    fn presets_all_parse() {
        for (name, text) in PRESETS {
            let cfg = parse_config(text)
                .unwrap_or_else(|e| panic!("preset {name} failed to parse: {e}"));
            assert_eq!(
                cfg.kind.as_str(),
                name.split('_').next().unwrap(),
                "preset {name} has unexpected kind"
            );
        }
        assert!(preset_text("pb1d_smoke").is_some());
        assert!(preset_text("nope").is_none());
    }

    #[test]
    fn pb1d_system_counts_and_audit() {
        let cfg = parse_config("[experiment]\nkind = pb1d\n").unwrap();
        let ExperimentBody::Pb1d(c) = &cfg.body else { panic!() };
        let sys = build_pb1d_system(&c.potentials).unwrap();
        assert_eq!(sys.counts.n_plus, 1024);
        assert_eq!(sys.counts.n_minus, 1280);
        assert_abs_diff_eq!(sys.q, 2.0 / 1024.0, epsilon = 1e-15);
        // Total charge balances to zero exactly for these round numbers.
        assert_abs_diff_eq!(sys.charge_audit(&c.potentials), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pb3d_system_counts_and_audit() {
        let cfg = parse_config("[experiment]\nkind = pb3d\n").unwrap();
        let ExperimentBody::Pb3d(c) = &cfg.body else { panic!() };
        let sys = build_pb3d_system(c).unwrap();
        assert_eq!(sys.counts.n_plus, 100);
        assert_eq!(sys.counts.n_minus, 101);
        // One-particle rounding leaves at most one unit charge un-balanced.
        assert!(sys.charge_audit(&c.potentials).abs() <= sys.q + 1e-12);
    }

    #[test]
    fn study_oracle_zero_kernel_is_plain_boltzmann() {
        // With no interaction the fixed point is exp(-beta U) normalized:
        // a centered Gaussian of variance 1/beta for U = x^2/2.
        let pot = StudyPotentials {
            kernel: StudyKernel::Zero,
            confinement: 1.0,
            beta: 1.0,
            lo: -8.0,
            hi: 8.0,
        };
        let oracle = OracleSection { grid_n: 2049, damping: 1.0, tol: 1e-13, max_iters: 50 };
        let solution = solve_study_oracle(&pot, &oracle).unwrap();
        let rho = &solution.densities[0];
        assert_abs_diff_eq!(rho.moment(2), 1.0, epsilon = 1e-6);
        let z = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert_abs_diff_eq!(rho.eval_linear(0.0), z, epsilon = 1e-5);
    }
}
