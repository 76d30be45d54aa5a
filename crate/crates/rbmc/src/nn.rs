//! Mean-field training of a two-layer network as interacting-particle
//! sampling.
//!
//! Each neuron is a particle `theta = (c, w, b)` with feature map
//! `sigma_star(x, theta) = c * sigma(w x + b)` (logistic `sigma`), and the
//! network predictor is the neuron average. The half-mean-squared loss of
//! the ensemble is, up to a data-only constant, an energy functional of the
//! neuron empirical measure built from the dataset potentials
//! `U(theta) = -E[y sigma_star]` and `W(theta, theta') =
//! E[sigma_star sigma_star']`. Training therefore has two interchangeable
//! faces: noisy SGD on the neurons, and sampling the associated Gibbs
//! measure with the random-batch sampler in no-split mode (the pair kernel
//! is smooth, so every proposal is accepted).
//!
//! The Gibbs energy used here is `sum_i Utilde(theta_i) +
//! (1/N) sum_{i<j} W(theta_i, theta_j)` with
//! `Utilde = U + lambda |theta|^2 / 2 + W(theta, theta) / (2N)`, i.e.
//! `N * (loss - E[y^2]/2)` plus the ridge. This is exactly the potential
//! whose overdamped Langevin discretization is the noisy SGD update, so the
//! two training faces target the same stationary law.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gibbs::ParticleConfiguration;
use crate::potentials::DomainSpec;
use crate::sampler::RbmcTarget;

/// Dimension of one neuron's parameter vector `(c, w, b)`.
pub const THETA_DIM: usize = 3;

/// Logistic sigmoid.
#[inline]
pub fn sigma(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Neuron feature `c * sigma(w x + b)`.
#[inline]
pub fn sigma_star(x: f64, theta: &[f64]) -> f64 {
    theta[0] * sigma(theta[1] * x + theta[2])
}

/// Exact gradient of `sigma_star` in `(c, w, b)`:
/// `(sigma(a), c sigma'(a) x, c sigma'(a))` with `a = w x + b` and
/// `sigma' = sigma (1 - sigma)`.
#[inline]
pub fn sigma_star_grad_into(x: f64, theta: &[f64], scale: f64, out: &mut [f64]) {
    let s = sigma(theta[1] * x + theta[2]);
    let ds = s * (1.0 - s);
    out[0] += scale * s;
    out[1] += scale * theta[0] * ds * x;
    out[2] += scale * theta[0] * ds;
}

/// Ensemble predictor: the neuron average of `sigma_star`.
pub fn predict(x: f64, thetas: &[f64]) -> f64 {
    let n = thetas.len() / THETA_DIM;
    let mut s = 0.0;
    for theta in thetas.chunks_exact(THETA_DIM) {
        s += sigma_star(x, theta);
    }
    s / n as f64
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Synthetic regression data: `x ~ U[0,1]`, `y = sin(3x) + noise`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn mean_y_squared(&self) -> f64 {
        self.ys.iter().map(|y| y * y).sum::<f64>() / self.ys.len() as f64
    }
}

/// Draw a dataset of size `p` with Gaussian noise of standard deviation
/// `noise_std` on the targets, deterministically from `(seed, stream)`.
pub fn generate_data(p: usize, noise_std: f64, seed: u64, stream: u64) -> Result<Dataset> {
    if p == 0 {
        return Err(Error::parameter("p", "need at least one sample"));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::parameter("noise_std", format!("must be nonnegative, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut xs = Vec::with_capacity(p);
    let mut ys = Vec::with_capacity(p);
    for _ in 0..p {
        let x: f64 = rng.random();
        let z: f64 = rng.sample(StandardNormal);
        xs.push(x);
        ys.push((3.0 * x).sin() + noise_std * z);
    }
    Ok(Dataset { xs, ys })
}

/// Standard-normal neuron initialization, flat `(c, w, b)` per neuron.
pub fn init_ensemble(n: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::parameter("n", "need at least one neuron"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Ok((0..n * THETA_DIM).map(|_| rng.sample(StandardNormal)).collect())
}

// ---------------------------------------------------------------------------
// Losses and dataset potentials
// ---------------------------------------------------------------------------

/// Half mean squared error of the ensemble predictor over the dataset.
pub fn empirical_loss(thetas: &[f64], data: &Dataset) -> f64 {
    let p = data.len();
    let mut s = 0.0;
    for (&x, &y) in data.xs.iter().zip(&data.ys) {
        let r = predict(x, thetas) - y;
        s += r * r;
    }
    0.5 * s / p as f64
}

/// Dataset-averaged potentials `U(theta) = -E[y sigma_star(x, theta)]` and
/// `W(theta, theta') = E[sigma_star(x, theta) sigma_star(x, theta')]`.
pub struct DataPotentials<'a> {
    data: &'a Dataset,
}

impl<'a> DataPotentials<'a> {
    pub fn new(data: &'a Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::parameter("data", "need at least one sample"));
        }
        Ok(Self { data })
    }

    pub fn u(&self, theta: &[f64]) -> f64 {
        let mut s = 0.0;
        for (&x, &y) in self.data.xs.iter().zip(&self.data.ys) {
            s += y * sigma_star(x, theta);
        }
        -s / self.data.len() as f64
    }

    /// Accumulate `scale * grad U(theta)` into `out`.
    pub fn u_grad_into(&self, theta: &[f64], scale: f64, out: &mut [f64]) {
        let w = -scale / self.data.len() as f64;
        for (&x, &y) in self.data.xs.iter().zip(&self.data.ys) {
            sigma_star_grad_into(x, theta, w * y, out);
        }
    }

    pub fn w(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for &x in &self.data.xs {
            s += sigma_star(x, a) * sigma_star(x, b);
        }
        s / self.data.len() as f64
    }

    /// Accumulate `scale * grad_a W(a, b)` into `out`.
    pub fn w_grad1_into(&self, a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
        let w = scale / self.data.len() as f64;
        for &x in &self.data.xs {
            sigma_star_grad_into(x, a, w * sigma_star(x, b), out);
        }
    }
}

/// The loss written as an energy of the neuron empirical measure:
/// `(1/(2N^2)) sum_{i,j} W + (1/N) sum_i U + E[y^2]/2` (diagonal included).
/// Must equal [`empirical_loss`] to roundoff.
pub fn loss_via_energy(thetas: &[f64], data: &Dataset) -> Result<f64> {
    let pots = DataPotentials::new(data)?;
    let n = thetas.len() / THETA_DIM;
    let mut wsum = 0.0;
    for a in thetas.chunks_exact(THETA_DIM) {
        for b in thetas.chunks_exact(THETA_DIM) {
            wsum += pots.w(a, b);
        }
    }
    let mut usum = 0.0;
    for a in thetas.chunks_exact(THETA_DIM) {
        usum += pots.u(a);
    }
    let nf = n as f64;
    Ok(0.5 * wsum / (nf * nf) + usum / nf + 0.5 * data.mean_y_squared())
}

// ---------------------------------------------------------------------------
// Noisy SGD
// ---------------------------------------------------------------------------

/// One noisy SGD step on all neurons simultaneously:
/// `theta_i += -lambda s theta_i + s mean_k (y_k - yhat_k) grad sigma_star(x_k, theta_i)
///  + sqrt(2 s / beta) z_i`,
/// with predictions `yhat_k` taken from the pre-update ensemble. `samples`
/// is the mini-batch (typically one pair); `beta = inf` switches the noise
/// off.
pub fn noisy_sgd_step(
    thetas: &mut [f64],
    samples: &[(f64, f64)],
    s: f64,
    lambda: f64,
    beta: f64,
    rng: &mut impl Rng,
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::parameter("samples", "mini-batch must be non-empty"));
    }
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::parameter("s", format!("step size must be positive, got {s}")));
    }
    if !(beta > 0.0) {
        return Err(Error::parameter("beta", format!("must be positive, got {beta}")));
    }
    let residuals: Vec<(f64, f64)> =
        samples.iter().map(|&(x, y)| (x, y - predict(x, thetas))).collect();
    let noise = (2.0 * s / beta).sqrt();
    let batch = samples.len() as f64;
    for theta in thetas.chunks_exact_mut(THETA_DIM) {
        let mut drift = [0.0f64; THETA_DIM];
        for &(x, r) in &residuals {
            sigma_star_grad_into(x, theta, r / batch, &mut drift);
        }
        for d in 0..THETA_DIM {
            let z: f64 = if noise > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            theta[d] += -lambda * s * theta[d] + s * drift[d] + noise * z;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gibbs target for the sampler
// ---------------------------------------------------------------------------

/// The neuron Gibbs measure as a sampler target (no singular part):
/// effective external `U + lambda |theta|^2 / 2 + W(theta, theta) / (2N)`
/// and pair coefficient `1/N` on `W` per unordered pair.
pub struct NnGibbsTarget<'a> {
    pots: DataPotentials<'a>,
    n: usize,
    lambda: f64,
    beta: f64,
    domain: DomainSpec,
}

impl<'a> NnGibbsTarget<'a> {
    pub fn new(data: &'a Dataset, n: usize, lambda: f64, beta: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::parameter("n", "need at least 2 neurons"));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::parameter("lambda", format!("must be nonnegative, got {lambda}")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::parameter("beta", format!("must be positive and finite, got {beta}")));
        }
        Ok(Self {
            pots: DataPotentials::new(data)?,
            n,
            lambda,
            beta,
            domain: DomainSpec::all_space(THETA_DIM)?,
        })
    }

    /// Total Gibbs energy `sum_i Utilde(theta_i) + (1/N) sum_{i<j} W`,
    /// equal to `N (loss - E[y^2]/2) + (lambda/2) sum_i |theta_i|^2`.
    pub fn total_energy(&self, config: &ParticleConfiguration) -> f64 {
        let n = config.n();
        let mut e = 0.0;
        for i in 0..n {
            let t = config.point(i);
            e += self.pots.u(t)
                + 0.5 * self.lambda * t.iter().map(|v| v * v).sum::<f64>()
                + 0.5 * self.pots.w(t, t) / self.n as f64;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                e += self.pots.w(config.point(i), config.point(j)) / self.n as f64;
            }
        }
        e
    }
}

impl RbmcTarget for NnGibbsTarget<'_> {
    fn dim(&self) -> usize {
        THETA_DIM
    }

    fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn check_configuration(&self, config: &ParticleConfiguration) -> Result<()> {
        if config.dim() != THETA_DIM {
            return Err(Error::DimensionMismatch { expected: THETA_DIM, got: config.dim() });
        }
        if config.n() != self.n {
            return Err(Error::parameter(
                "n",
                format!("target declares {} neurons, configuration has {}", self.n, config.n()),
            ));
        }
        Ok(())
    }

    fn external_grad_into(&self, _s: u32, theta: &[f64], out: &mut [f64]) {
        self.pots.u_grad_into(theta, 1.0, out);
        for d in 0..THETA_DIM {
            out[d] += self.lambda * theta[d];
        }
        // d/dtheta [W(theta, theta) / (2N)] = grad_1 W(theta, theta) / N by
        // symmetry of W.
        self.pots.w_grad1_into(theta, theta, 1.0 / self.n as f64, out);
    }

    fn pair_smooth_grad_into(&self, _si: u32, x: &[f64], _sj: u32, y: &[f64], out: &mut [f64]) {
        self.pots.w_grad1_into(x, y, 1.0 / self.n as f64, out);
    }

    fn pair_singular(&self, _si: u32, _x: &[f64], _sj: u32, _y: &[f64]) -> f64 {
        0.0
    }

    fn singular_range(&self) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::RngCore;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_thetas(n: usize, seed: u64) -> Vec<f64> {
        init_ensemble(n, seed, 0).unwrap()
    }

    #[test]
    fn data_generator_matches_target_function() {
        let data = generate_data(500, 0.0, 7, 0).unwrap();
        for (&x, &y) in data.xs.iter().zip(&data.ys) {
            assert!((0.0..=1.0).contains(&x));
            assert_relative_eq!(y, (3.0 * x).sin(), max_relative = 1e-15);
        }
        // Deterministic in the seed.
        let again = generate_data(500, 0.0, 7, 0).unwrap();
        assert_eq!(data.xs, again.xs);
        let other = generate_data(500, 0.0, 8, 0).unwrap();
        assert_ne!(data.xs, other.xs);
    }

    #[test]
    fn data_mean_matches_analytic_integral() {
        // E[y] = integral_0^1 sin(3x) dx = (1 - cos 3)/3.
        let data = generate_data(100_000, 0.2, 11, 0).unwrap();
        let mean = data.ys.iter().sum::<f64>() / data.len() as f64;
        let expect = (1.0 - 3.0f64.cos()) / 3.0;
        assert_abs_diff_eq!(mean, expect, epsilon = 5e-3);
    }

    #[test]
    fn predictor_special_cases() {
        // All neurons identical: the average collapses to one feature.
        let theta = [1.4, -0.7, 0.3];
        let thetas = [theta, theta, theta].concat();
        assert_relative_eq!(predict(0.6, &thetas), sigma_star(0.6, &theta), max_relative = 1e-15);
        // c = 0 everywhere: predictor vanishes.
        let zeros = [0.0, 1.0, 2.0, 0.0, -1.0, 0.5];
        assert_eq!(predict(0.3, &zeros), 0.0);
        // Two neurons at x = 0 by hand.
        let two = [1.0, 2.0, 0.5, -2.0, 1.0, -1.0];
        let hand = 0.5 * (1.0 * sigma(0.5) + (-2.0) * sigma(-1.0));
        assert_relative_eq!(predict(0.0, &two), hand, max_relative = 1e-15);
    }

    #[test]
    fn loss_special_cases() {
        let thetas = random_thetas(4, 3);
        // Dataset manufactured to be fit perfectly.
        let xs = vec![0.1, 0.4, 0.9];
        let ys: Vec<f64> = xs.iter().map(|&x| predict(x, &thetas)).collect();
        let data = Dataset { xs, ys };
        assert_abs_diff_eq!(empirical_loss(&thetas, &data), 0.0, epsilon = 1e-30);
        // Zero predictor against y = 1: half MSE is 1/2.
        let zeros = vec![0.0, 0.3, 0.1, 0.0, -0.2, 0.4];
        let ones = Dataset { xs: vec![0.2, 0.8], ys: vec![1.0, 1.0] };
        assert_relative_eq!(empirical_loss(&zeros, &ones), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn potentials_structure() {
        let data = generate_data(64, 0.2, 5, 0).unwrap();
        let pots = DataPotentials::new(&data).unwrap();
        let a = [0.8, -1.1, 0.4];
        let b = [-0.5, 0.7, 1.2];
        // Symmetry is exact (products commute).
        assert_eq!(pots.w(&a, &b).to_bits(), pots.w(&b, &a).to_bits());
        // Diagonal nonnegativity.
        assert!(pots.w(&a, &a) >= 0.0);
        // U is linear in c.
        let unit = [1.0, a[1], a[2]];
        assert_relative_eq!(pots.u(&a), a[0] * pots.u(&unit), max_relative = 1e-12);
        // y == 0 kills U.
        let silent = Dataset { xs: data.xs.clone(), ys: vec![0.0; data.len()] };
        let quiet = DataPotentials::new(&silent).unwrap();
        assert_eq!(quiet.u(&a), 0.0);
    }

    #[test]
    fn gram_matrix_is_positive_semidefinite() {
        let data = generate_data(40, 0.2, 19, 0).unwrap();
        let pots = DataPotentials::new(&data).unwrap();
        let thetas = random_thetas(12, 23);
        let n = 12;
        let mut gram = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] = pots.w(
                    &thetas[i * THETA_DIM..(i + 1) * THETA_DIM],
                    &thetas[j * THETA_DIM..(j + 1) * THETA_DIM],
                );
            }
        }
        let eigen = nalgebra::SymmetricEigen::new(gram);
        let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10, "smallest Gram eigenvalue {min}");
    }

    #[test]
    fn loss_decomposition_identity() {
        let mut seed_rng = rng(97);
        for _ in 0..100 {
            let n = 2 + (seed_rng.next_u32() % 8) as usize;
            let p = 8 + (seed_rng.next_u32() % 64) as usize;
            let thetas = random_thetas(n, seed_rng.next_u64());
            let data = generate_data(p, 0.3, seed_rng.next_u64(), 1).unwrap();
            let direct = empirical_loss(&thetas, &data);
            let via_energy = loss_via_energy(&thetas, &data).unwrap();
            assert_abs_diff_eq!(direct, via_energy, epsilon = 1e-10);
        }
    }

    #[test]
    fn sigma_star_gradient_matches_finite_differences() {
        let mut r = rng(31);
        for _ in 0..50 {
            let x: f64 = r.random::<f64>();
            let theta: Vec<f64> =
                (0..3).map(|_| 2.0 * r.random::<f64>() - 1.0).collect();
            let err = crate::diagnostics::fd_gradient_error(
                |t| sigma_star(x, t),
                |t, g| sigma_star_grad_into(x, t, 1.0, g),
                &theta,
                1e-6,
            );
            assert!(err <= 1e-6, "gradient error {err}");
        }
    }

    #[test]
    fn sgd_fixed_points_and_contraction() {
        // Perfect prediction, no ridge, no noise: exact fixed point.
        let thetas0 = random_thetas(4, 41);
        let mut thetas = thetas0.clone();
        let x = 0.37;
        let y = predict(x, &thetas);
        noisy_sgd_step(&mut thetas, &[(x, y)], 0.1, 0.0, f64::INFINITY, &mut rng(1)).unwrap();
        assert_eq!(thetas, thetas0);

        // c == 0 and y == 0: every coordinate contracts by (1 - lambda s).
        let mut thetas = vec![0.0, 1.3, -0.4, 0.0, 0.2, 2.2];
        let before = thetas.clone();
        noisy_sgd_step(&mut thetas, &[(0.5, 0.0)], 0.1, 0.3, f64::INFINITY, &mut rng(2)).unwrap();
        for (after, b) in thetas.iter().zip(&before) {
            assert_relative_eq!(*after, b * (1.0 - 0.03), max_relative = 1e-14);
        }
    }

    #[test]
    fn full_batch_descent_decreases_loss() {
        let data = generate_data(32, 0.1, 53, 0).unwrap();
        let batch: Vec<(f64, f64)> =
            data.xs.iter().zip(&data.ys).map(|(&x, &y)| (x, y)).collect();
        let mut thetas = random_thetas(8, 59);
        let mut prev = empirical_loss(&thetas, &data);
        for _ in 0..200 {
            noisy_sgd_step(&mut thetas, &batch, 0.05, 0.0, f64::INFINITY, &mut rng(3)).unwrap();
            let now = empirical_loss(&thetas, &data);
            assert!(now <= prev + 1e-12, "loss rose from {prev} to {now}");
            prev = now;
        }
    }

    #[test]
    fn gibbs_energy_matches_loss_form() {
        let data = generate_data(48, 0.2, 61, 0).unwrap();
        let n = 6;
        let lambda = 0.05;
        let target = NnGibbsTarget::new(&data, n, lambda, 10.0).unwrap();
        let thetas = random_thetas(n, 67);
        let config = ParticleConfiguration::new(
            DomainSpec::all_space(THETA_DIM).unwrap(),
            thetas.clone(),
            vec![0; n],
        )
        .unwrap();
        let e = target.total_energy(&config);
        let ridge: f64 = 0.5 * lambda * thetas.iter().map(|v| v * v).sum::<f64>();
        let expect =
            n as f64 * (empirical_loss(&thetas, &data) - 0.5 * data.mean_y_squared()) + ridge;
        assert_abs_diff_eq!(e, expect, epsilon = 1e-10);
    }

    #[test]
    fn gibbs_target_gradients_match_energy_differences() {
        let data = generate_data(24, 0.2, 71, 0).unwrap();
        let n = 5;
        let target = NnGibbsTarget::new(&data, n, 0.02, 10.0).unwrap();
        let thetas = random_thetas(n, 73);
        let domain = DomainSpec::all_space(THETA_DIM).unwrap();
        let config =
            ParticleConfiguration::new(domain.clone(), thetas.clone(), vec![0; n]).unwrap();
        // Full gradient of the total energy in neuron i: effective external
        // plus all pair terms.
        for i in 0..n {
            let assembled = |t: &[f64], g: &mut [f64]| {
                target.external_grad_into(0, t, g);
                for j in 0..n {
                    if j != i {
                        target.pair_smooth_grad_into(0, t, 0, config.point(j), g);
                    }
                }
            };
            let energy_of = |t: &[f64]| {
                let mut moved = thetas.clone();
                moved[i * THETA_DIM..(i + 1) * THETA_DIM].copy_from_slice(t);
                let c = ParticleConfiguration::new(domain.clone(), moved, vec![0; n]).unwrap();
                target.total_energy(&c)
            };
            let err = crate::diagnostics::fd_gradient_error(
                energy_of,
                assembled,
                config.point(i),
                1e-6,
            );
            assert!(err <= 1e-6, "neuron {i} gradient error {err}");
        }
    }
}
