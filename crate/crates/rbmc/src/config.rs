//! Experiment configuration: a line-oriented `[section] key = value` format,
//! strict validation, and manifest round-tripping.
//!
//! Rules:
//! * UTF-8 text; blank lines and lines starting with `#` or `;` are ignored.
//! * `[section]` headers group `key = value` pairs; values may be wrapped in
//!   double quotes (stripped).
//! * Validation is total: an unknown section or key, a duplicate, or a value
//!   of the wrong type rejects the whole file before any computation starts.
//! * The `[result]` section is ignored on input, so a run manifest (resolved
//!   config plus `[result]` bookkeeping) is itself a valid config and
//!   re-running it reproduces the run.
//!
//! Times given as `burn_in_time` / `stop_time` are converted to iteration
//! counts with the step size `tau` and stored canonically as iterations in
//! the manifest.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Raw parsing
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct RawEntry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug)]
struct RawSection {
    name: String,
    line: usize,
    entries: Vec<RawEntry>,
}

/// Parsed but untyped config text.
#[derive(Debug)]
pub struct RawConfig {
    sections: Vec<RawSection>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<RawSection> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw_line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(Error::config(
                        format!("line {line}"),
                        "section header must look like [name]",
                    ));
                };
                let name = name.trim().to_string();
                if !valid_name(&name) {
                    return Err(Error::config(
                        format!("line {line}"),
                        format!("invalid section name {name:?}"),
                    ));
                }
                if sections.iter().any(|s| s.name == name) {
                    return Err(Error::config(
                        format!("line {line}"),
                        format!("duplicate section [{name}]"),
                    ));
                }
                sections.push(RawSection { name, line, entries: Vec::new() });
                continue;
            }
            let Some(eq) = trimmed.find('=') else {
                return Err(Error::config(
                    format!("line {line}"),
                    "expected `key = value` or a [section] header",
                ));
            };
            let key = trimmed[..eq].trim().to_string();
            let mut value = trimmed[eq + 1..].trim().to_string();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = value[1..value.len() - 1].to_string();
            }
            if !valid_name(&key) {
                return Err(Error::config(format!("line {line}"), format!("invalid key {key:?}")));
            }
            let Some(section) = sections.last_mut() else {
                return Err(Error::config(
                    format!("line {line}"),
                    format!("key {key:?} appears before any [section] header"),
                ));
            };
            if section.entries.iter().any(|e| e.key == key) {
                return Err(Error::config(
                    format!("line {line}"),
                    format!("duplicate key {key:?} in [{}]", section.name),
                ));
            }
            section.entries.push(RawEntry { key, value, line });
        }
        Ok(Self { sections })
    }

    fn entry(&self, section: &str, key: &str) -> Option<&RawEntry> {
        self.sections
            .iter()
            .find(|s| s.name == section)
            .and_then(|s| s.entries.iter().find(|e| e.key == key))
    }
}

// ---------------------------------------------------------------------------
// Typed reading with consumption tracking
// ---------------------------------------------------------------------------

/// How many particles move per iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoversSpec {
    /// Move every particle once per iteration.
    All,
    Count(usize),
}

impl MoversSpec {
    pub fn resolve(&self, n: usize) -> usize {
        match self {
            MoversSpec::All => n,
            MoversSpec::Count(c) => *c,
        }
    }
}

impl std::fmt::Display for MoversSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MoversSpec::All => write!(f, "all"),
            MoversSpec::Count(c) => write!(f, "{c}"),
        }
    }
}

struct Reader<'a> {
    raw: &'a RawConfig,
    consumed: BTreeSet<(String, String)>,
}

impl<'a> Reader<'a> {
    fn new(raw: &'a RawConfig) -> Self {
        Self { raw, consumed: BTreeSet::new() }
    }

    fn lookup(&mut self, section: &str, key: &str) -> Option<&'a RawEntry> {
        let hit = self.raw.entry(section, key);
        if hit.is_some() {
            self.consumed.insert((section.to_string(), key.to_string()));
        }
        hit
    }

    fn parse_with<T>(
        &mut self,
        section: &str,
        key: &str,
        default: Option<T>,
        kind: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T> {
        match self.lookup(section, key) {
            Some(entry) => parse(&entry.value).ok_or_else(|| {
                Error::config(
                    format!("{section}.{key} (line {})", entry.line),
                    format!("expected {kind}, got {:?}", entry.value),
                )
            }),
            None => default.ok_or_else(|| {
                Error::config(format!("{section}.{key}"), "missing required key")
            }),
        }
    }

    fn f64(&mut self, section: &str, key: &str, default: Option<f64>) -> Result<f64> {
        self.parse_with(section, key, default, "a number", |v| v.parse::<f64>().ok())
    }

    fn u64(&mut self, section: &str, key: &str, default: Option<u64>) -> Result<u64> {
        self.parse_with(section, key, default, "a nonnegative integer", |v| {
            v.parse::<u64>().ok()
        })
    }

    fn usize(&mut self, section: &str, key: &str, default: Option<usize>) -> Result<usize> {
        self.parse_with(section, key, default, "a nonnegative integer", |v| {
            v.parse::<usize>().ok()
        })
    }

    fn bool(&mut self, section: &str, key: &str, default: Option<bool>) -> Result<bool> {
        self.parse_with(section, key, default, "true or false", |v| match v {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    fn string(&mut self, section: &str, key: &str, default: Option<&str>) -> Result<String> {
        self.parse_with(section, key, default.map(str::to_string), "a string", |v| {
            Some(v.to_string())
        })
    }

    fn movers(&mut self, section: &str, default: MoversSpec) -> Result<MoversSpec> {
        self.parse_with(section, "movers", Some(default), "`all` or a positive integer", |v| {
            if v == "all" {
                Some(MoversSpec::All)
            } else {
                v.parse::<usize>().ok().filter(|c| *c > 0).map(MoversSpec::Count)
            }
        })
    }

    fn list_usize(
        &mut self,
        section: &str,
        key: &str,
        default: Option<Vec<usize>>,
    ) -> Result<Vec<usize>> {
        self.parse_with(section, key, default, "a comma-separated list of integers", |v| {
            v.split(',').map(|t| t.trim().parse::<usize>().ok()).collect()
        })
    }

    fn list_f64(
        &mut self,
        section: &str,
        key: &str,
        default: Option<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        self.parse_with(section, key, default, "a comma-separated list of numbers", |v| {
            v.split(',').map(|t| t.trim().parse::<f64>().ok()).collect()
        })
    }

    /// Iterations directly, or a physical time converted by `tau`. Returns
    /// the canonical iteration count.
    fn iters_or_time(
        &mut self,
        section: &str,
        iter_key: &str,
        time_key: &str,
        tau: f64,
        default: Option<u64>,
    ) -> Result<u64> {
        let has_iters = self.raw.entry(section, iter_key).is_some();
        let has_time = self.raw.entry(section, time_key).is_some();
        if has_iters && has_time {
            return Err(Error::config(
                format!("{section}.{time_key}"),
                format!("give either {iter_key} or {time_key}, not both"),
            ));
        }
        if has_time {
            let t = self.f64(section, time_key, None)?;
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::config(
                    format!("{section}.{time_key}"),
                    format!("must be a nonnegative time, got {t}"),
                ));
            }
            return Ok((t / tau).round() as u64);
        }
        self.u64(section, iter_key, default)
    }

    /// Reject any key or section that was never consumed (the [result]
    /// section of a manifest is exempt).
    fn finish(self) -> Result<()> {
        for section in &self.raw.sections {
            if section.name == "result" {
                continue;
            }
            for entry in &section.entries {
                if !self.consumed.contains(&(section.name.clone(), entry.key.clone())) {
                    return Err(Error::config(
                        format!("{}.{} (line {})", section.name, entry.key, entry.line),
                        "unknown key for this experiment kind",
                    ));
                }
            }
            if section.entries.is_empty()
                && !self.consumed.iter().any(|(s, _)| s == &section.name)
                && !KNOWN_SECTIONS.contains(&section.name.as_str())
            {
                return Err(Error::config(
                    format!("{} (line {})", section.name, section.line),
                    "unknown section",
                ));
            }
        }
        Ok(())
    }
}

const KNOWN_SECTIONS: &[&str] = &[
    "experiment",
    "potentials",
    "sampler",
    "oracle",
    "diagnostics",
    "nn",
    "convergence",
    "output",
    "result",
];

// ---------------------------------------------------------------------------
// Typed experiment configs
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Pb1d,
    Pb3d,
    Nn,
    Convergence,
    FixedPoint,
    Exactness,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Pb1d => "pb1d",
            ExperimentKind::Pb3d => "pb3d",
            ExperimentKind::Nn => "nn",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::FixedPoint => "fixedpoint",
            ExperimentKind::Exactness => "exactness",
        }
    }
}

/// Shared oracle (fixed-point solver) settings.
#[derive(Clone, Debug)]
pub struct OracleSection {
    pub grid_n: usize,
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl OracleSection {
    fn read(r: &mut Reader, grid_default: usize, damping_default: f64) -> Result<Self> {
        Ok(Self {
            grid_n: r.usize("oracle", "grid_n", Some(grid_default))?,
            damping: r.f64("oracle", "damping", Some(damping_default))?,
            tol: r.f64("oracle", "tol", Some(1e-10))?,
            max_iters: r.usize("oracle", "max_iters", Some(20_000))?,
        })
    }

    fn emit(&self, w: &mut IniWriter) {
        w.section("oracle");
        w.entry("grid_n", self.grid_n);
        w.entry("damping", self.damping);
        w.entry("tol", self.tol);
        w.entry("max_iters", self.max_iters);
    }
}

/// Two-species electrolyte setup shared by pb1d, pb3d and convergence.
#[derive(Clone, Debug)]
pub struct PbPotentials {
    pub epsilon: f64,
    pub q_f: f64,
    pub q_plus: f64,
    pub z_plus: f64,
    pub z_minus: f64,
    pub n_plus: usize,
    pub lo: f64,
    pub l: f64,
    pub beta: f64,
}

impl PbPotentials {
    fn read(r: &mut Reader, defaults: &PbPotentials) -> Result<Self> {
        let out = Self {
            epsilon: r.f64("potentials", "epsilon", Some(defaults.epsilon))?,
            q_f: r.f64("potentials", "q_f", Some(defaults.q_f))?,
            q_plus: r.f64("potentials", "q_plus", Some(defaults.q_plus))?,
            z_plus: r.f64("potentials", "z_plus", Some(defaults.z_plus))?,
            z_minus: r.f64("potentials", "z_minus", Some(defaults.z_minus))?,
            n_plus: r.usize("potentials", "n_plus", Some(defaults.n_plus))?,
            lo: r.f64("potentials", "lo", Some(defaults.lo))?,
            l: r.f64("potentials", "l", Some(defaults.l))?,
            beta: r.f64("potentials", "beta", Some(defaults.beta))?,
        };
        if !(out.lo.is_finite() && out.l.is_finite() && out.lo < out.l) {
            return Err(Error::config("potentials.l", "domain needs lo < l"));
        }
        Ok(out)
    }

    fn emit(&self, w: &mut IniWriter) {
        w.entry("epsilon", self.epsilon);
        w.entry("q_f", self.q_f);
        w.entry("q_plus", self.q_plus);
        w.entry("z_plus", self.z_plus);
        w.entry("z_minus", self.z_minus);
        w.entry("n_plus", self.n_plus);
        w.entry("lo", self.lo);
        w.entry("l", self.l);
        w.entry("beta", self.beta);
    }
}

/// Chain controls shared by the sampling kinds; `burn_in`/`iterations` are
/// canonical (total iterations including burn-in).
#[derive(Clone, Debug)]
pub struct SamplerSection {
    pub tau: f64,
    pub p: usize,
    pub inner_steps: usize,
    pub movers: MoversSpec,
    pub thin: u64,
    pub burn_in: u64,
    pub iterations: u64,
}

impl SamplerSection {
    #[allow(clippy::too_many_arguments)]
    fn read(
        r: &mut Reader,
        tau_default: f64,
        p_default: usize,
        m_default: usize,
        movers_default: MoversSpec,
        thin_default: u64,
        burn_default: u64,
        iter_default: u64,
    ) -> Result<Self> {
        let tau = r.f64("sampler", "tau", Some(tau_default))?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::config("sampler.tau", format!("must be positive, got {tau}")));
        }
        Ok(Self {
            tau,
            p: r.usize("sampler", "p", Some(p_default))?,
            inner_steps: r.usize("sampler", "inner_steps", Some(m_default))?,
            movers: r.movers("sampler", movers_default)?,
            thin: r.u64("sampler", "thin", Some(thin_default))?,
            burn_in: r.iters_or_time("sampler", "burn_in", "burn_in_time", tau, Some(burn_default))?,
            iterations: r.iters_or_time("sampler", "iterations", "stop_time", tau, Some(iter_default))?,
        })
    }

    fn emit(&self, w: &mut IniWriter) {
        w.section("sampler");
        w.entry("tau", self.tau);
        w.entry("p", self.p);
        w.entry("inner_steps", self.inner_steps);
        w.entry("movers", self.movers);
        w.entry("thin", self.thin);
        w.entry("burn_in", self.burn_in);
        w.entry("iterations", self.iterations);
    }
}

#[derive(Clone, Debug)]
pub struct Pb1dConfig {
    pub potentials: PbPotentials,
    pub sampler: SamplerSection,
    pub oracle: OracleSection,
    pub bins: usize,
    pub samples_cap: u64,
}

#[derive(Clone, Debug)]
pub struct Pb3dConfig {
    pub potentials: PbPotentials,
    pub r_c: f64,
    pub lj: bool,
    pub lj_sigma: f64,
    pub lj_epsilon: f64,
    pub sampler: SamplerSection,
    pub oracle: OracleSection,
    pub bins: usize,
}

#[derive(Clone, Debug)]
pub struct NnConfig {
    pub n_neurons: usize,
    pub p_train: usize,
    pub p_test: usize,
    pub noise_std: f64,
    pub lambda: f64,
    pub beta: f64,
    pub s: f64,
    pub minibatch: usize,
    pub sgd_burn_in: u64,
    pub sgd_iterations: u64,
    pub loss_stride: u64,
    pub grid_n: usize,
    pub sampler: SamplerSection,
}

#[derive(Clone, Debug)]
pub struct ConvergenceConfig {
    pub potentials: PbPotentials,
    pub sampler: SamplerSection,
    pub oracle: OracleSection,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub n_samples: u64,
}

/// Single-species model potentials for the fixedpoint / exactness studies:
/// `U(x) = confinement * x^2 / 2` with a bounded pair kernel.
#[derive(Clone, Debug)]
pub struct StudyPotentials {
    pub kernel: StudyKernel,
    pub confinement: f64,
    pub beta: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StudyKernel {
    Zero,
    Gaussian { amplitude: f64, length: f64 },
}

impl StudyPotentials {
    fn read(r: &mut Reader) -> Result<Self> {
        let kernel_name = r.string("potentials", "kernel", Some("gaussian"))?;
        let kernel = match kernel_name.as_str() {
            "zero" => StudyKernel::Zero,
            "gaussian" => StudyKernel::Gaussian {
                amplitude: r.f64("potentials", "amplitude", Some(1.0))?,
                length: r.f64("potentials", "length", Some(1.0))?,
            },
            other => {
                return Err(Error::config(
                    "potentials.kernel",
                    format!("unknown kernel {other:?} (use zero or gaussian)"),
                ))
            }
        };
        let out = Self {
            kernel,
            confinement: r.f64("potentials", "confinement", Some(1.0))?,
            beta: r.f64("potentials", "beta", Some(1.0))?,
            lo: r.f64("potentials", "lo", Some(-8.0))?,
            hi: r.f64("potentials", "hi", Some(8.0))?,
        };
        if !(out.lo < out.hi) {
            return Err(Error::config("potentials.hi", "grid needs lo < hi"));
        }
        if !(out.confinement.is_finite() && out.confinement > 0.0) {
            return Err(Error::config("potentials.confinement", "must be positive"));
        }
        Ok(out)
    }

    fn emit(&self, w: &mut IniWriter) {
        w.section("potentials");
        match &self.kernel {
            StudyKernel::Zero => w.entry("kernel", "zero"),
            StudyKernel::Gaussian { amplitude, length } => {
                w.entry("kernel", "gaussian");
                w.entry("amplitude", *amplitude);
                w.entry("length", *length);
            }
        }
        w.entry("confinement", self.confinement);
        w.entry("beta", self.beta);
        w.entry("lo", self.lo);
        w.entry("hi", self.hi);
    }
}

#[derive(Clone, Debug)]
pub struct FixedPointConfig {
    pub potentials: StudyPotentials,
    pub oracle: OracleSection,
}

#[derive(Clone, Debug)]
pub struct ExactnessConfig {
    pub potentials: StudyPotentials,
    pub n: usize,
    pub taus: Vec<f64>,
    pub p: usize,
    pub inner_steps: usize,
    pub movers: MoversSpec,
    pub thin: u64,
    pub burn_in: u64,
    pub recorded: u64,
    pub bins: usize,
    pub oracle: OracleSection,
}

#[derive(Clone, Debug)]
pub enum ExperimentBody {
    Pb1d(Pb1dConfig),
    Pb3d(Pb3dConfig),
    Nn(NnConfig),
    Convergence(ConvergenceConfig),
    FixedPoint(FixedPointConfig),
    Exactness(ExactnessConfig),
}

/// A fully validated experiment description with every default filled in.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out: String,
    pub body: ExperimentBody,
}

const PB1D_DEFAULTS: PbPotentials = PbPotentials {
    epsilon: 1.0,
    q_f: 0.5,
    q_plus: 2.0,
    z_plus: 1.0,
    z_minus: -1.0,
    n_plus: 1024,
    lo: 1.0,
    l: 15.0,
    beta: 1.0,
};

const PB3D_DEFAULTS: PbPotentials = PbPotentials {
    epsilon: 0.01,
    q_f: 0.1,
    q_plus: 10.0,
    z_plus: 1.0,
    z_minus: -1.0,
    n_plus: 100,
    lo: 1.0,
    l: 10.0,
    beta: 1.0,
};

/// Parse and fully validate a config file.
pub fn parse_config(text: &str) -> Result<ResolvedConfig> {
    let raw = RawConfig::parse(text)?;
    let mut r = Reader::new(&raw);
    let kind_name = r.string("experiment", "kind", None)?;
    let kind = match kind_name.as_str() {
        "pb1d" => ExperimentKind::Pb1d,
        "pb3d" => ExperimentKind::Pb3d,
        "nn" => ExperimentKind::Nn,
        "convergence" => ExperimentKind::Convergence,
        "fixedpoint" => ExperimentKind::FixedPoint,
        "exactness" => ExperimentKind::Exactness,
        other => {
            return Err(Error::config(
                "experiment.kind",
                format!("unknown experiment kind {other:?}"),
            ))
        }
    };
    let seed = r.u64("experiment", "seed", Some(0))?;
    let out = r.string("experiment", "out", Some("rbmc_out"))?;

    let body = match kind {
        ExperimentKind::Pb1d => {
            let potentials = PbPotentials::read(&mut r, &PB1D_DEFAULTS)?;
            let sampler = SamplerSection::read(
                &mut r,
                0.005,
                4,
                1,
                MoversSpec::All,
                15,
                100_000,
                400_000,
            )?;
            let oracle = OracleSection::read(&mut r, 2048, 0.5)?;
            let bins = r.usize("output", "bins", Some(100))?;
            let samples_cap = r.u64("output", "samples_cap", Some(1_000_000))?;
            ExperimentBody::Pb1d(Pb1dConfig { potentials, sampler, oracle, bins, samples_cap })
        }
        ExperimentKind::Pb3d => {
            let potentials = PbPotentials::read(&mut r, &PB3D_DEFAULTS)?;
            let r_c = r.f64("potentials", "r_c", Some(0.1))?;
            let lj = r.bool("potentials", "lj", Some(true))?;
            let lj_sigma = r.f64("potentials", "lj_sigma", Some(0.1))?;
            let lj_epsilon = r.f64("potentials", "lj_epsilon", Some(0.01))?;
            let sampler = SamplerSection::read(
                &mut r,
                0.01,
                2,
                9,
                MoversSpec::Count(1),
                1000,
                500_000,
                50_500_000,
            )?;
            let oracle = OracleSection::read(&mut r, 1024, 0.5)?;
            let bins = r.usize("output", "bins", Some(90))?;
            ExperimentBody::Pb3d(Pb3dConfig {
                potentials,
                r_c,
                lj,
                lj_sigma,
                lj_epsilon,
                sampler,
                oracle,
                bins,
            })
        }
        ExperimentKind::Nn => {
            let n_neurons = r.usize("nn", "n_neurons", Some(64))?;
            let p_train = r.usize("nn", "p_train", Some(256))?;
            let p_test = r.usize("nn", "p_test", Some(256))?;
            let noise_std = r.f64("nn", "noise_std", Some(0.2))?;
            let lambda = r.f64("nn", "lambda", Some(0.0))?;
            let beta = r.f64("nn", "beta", Some(2000.0))?;
            // Single-sample SGD on the logistic Gram is only stable for
            // s * mean(sigma^2) < 2, i.e. s below roughly 6; larger rates
            // oscillate without converging.
            let s = r.f64("nn", "s", Some(4.0))?;
            let minibatch = r.usize("nn", "minibatch", Some(1))?;
            let sgd_burn_in = r.u64("nn", "sgd_burn_in", Some(10_000))?;
            let sgd_iterations = r.u64("nn", "sgd_iterations", Some(20_000))?;
            let loss_stride = r.u64("nn", "loss_stride", Some(10))?;
            let grid_n = r.usize("nn", "grid_n", Some(201))?;
            // One neuron moves per iteration with a block of inner steps.
            // The batch must average several partners: with p = 2 each inner
            // step kicks the mover by a single (N-1)-scaled pair gradient,
            // whose c-component is proportional to the partner's own c, and
            // that feedback loop inflates the ensemble without bound.
            let sampler = SamplerSection::read(
                &mut r,
                0.05,
                8,
                20,
                MoversSpec::Count(1),
                1,
                40_000,
                60_000,
            )?;
            ExperimentBody::Nn(NnConfig {
                n_neurons,
                p_train,
                p_test,
                noise_std,
                lambda,
                beta,
                s,
                minibatch,
                sgd_burn_in,
                sgd_iterations,
                loss_stride,
                grid_n,
                sampler,
            })
        }
        ExperimentKind::Convergence => {
            let potentials = PbPotentials::read(&mut r, &PB1D_DEFAULTS)?;
            let sampler = SamplerSection::read(
                &mut r,
                0.005,
                4,
                1,
                MoversSpec::All,
                4,
                100_000,
                0, // per-N iteration budget is derived from n_samples
            )?;
            let oracle = OracleSection::read(&mut r, 2048, 0.5)?;
            let n_list =
                r.list_usize("convergence", "n_list", Some(vec![16, 32, 64, 128, 256]))?;
            let reps = r.usize("convergence", "reps", Some(8))?;
            let n_samples = r.u64("convergence", "n_samples", Some(1_000_000))?;
            if n_list.is_empty() {
                return Err(Error::config("convergence.n_list", "need at least one N"));
            }
            ExperimentBody::Convergence(ConvergenceConfig {
                potentials,
                sampler,
                oracle,
                n_list,
                reps,
                n_samples,
            })
        }
        ExperimentKind::FixedPoint => {
            let potentials = StudyPotentials::read(&mut r)?;
            let oracle = OracleSection::read(&mut r, 2048, 0.5)?;
            ExperimentBody::FixedPoint(FixedPointConfig { potentials, oracle })
        }
        ExperimentKind::Exactness => {
            let potentials = StudyPotentials::read(&mut r)?;
            let n = r.usize("sampler", "n", Some(256))?;
            let taus = r.list_f64("sampler", "taus", Some(vec![1e-3]))?;
            let p = r.usize("sampler", "p", Some(2))?;
            let inner_steps = r.usize("sampler", "inner_steps", Some(1))?;
            let movers = r.movers("sampler", MoversSpec::All)?;
            let thin = r.u64("sampler", "thin", Some(1))?;
            let burn_in = r.u64("sampler", "burn_in", Some(2_000))?;
            let recorded = r.u64("sampler", "recorded", Some(4_000))?;
            let bins = r.usize("diagnostics", "bins", Some(50))?;
            let oracle = OracleSection::read(&mut r, 2048, 0.5)?;
            if taus.is_empty() {
                return Err(Error::config("sampler.taus", "need at least one step size"));
            }
            ExperimentBody::Exactness(ExactnessConfig {
                potentials,
                n,
                taus,
                p,
                inner_steps,
                movers,
                thin,
                burn_in,
                recorded,
                bins,
                oracle,
            })
        }
    };
    r.finish()?;
    Ok(ResolvedConfig { kind, seed, out, body })
}

// ---------------------------------------------------------------------------
// Manifest writing
// ---------------------------------------------------------------------------

/// Serializer for the config dialect; floats use the shortest
/// round-trippable representation so a manifest re-parses to identical
/// values.
pub struct IniWriter {
    buf: String,
}

impl IniWriter {
    pub fn new() -> Self {
        Self { buf: String::new() }
    }

    pub fn section(&mut self, name: &str) {
        if !self.buf.is_empty() {
            self.buf.push('\n');
        }
        let _ = writeln!(self.buf, "[{name}]");
    }

    pub fn entry(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.buf, "{key} = {value}");
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

impl Default for IniWriter {
    fn default() -> Self {
        Self::new()
    }
}

impl ResolvedConfig {
    /// The resolved config in canonical form; parsing it back yields the
    /// same experiment.
    pub fn canonical_ini(&self) -> String {
        let mut w = IniWriter::new();
        w.section("experiment");
        w.entry("kind", self.kind.as_str());
        w.entry("seed", self.seed);
        w.entry("out", &self.out);
        match &self.body {
            ExperimentBody::Pb1d(c) => {
                w.section("potentials");
                c.potentials.emit(&mut w);
                c.sampler.emit(&mut w);
                c.oracle.emit(&mut w);
                w.section("output");
                w.entry("bins", c.bins);
                w.entry("samples_cap", c.samples_cap);
            }
            ExperimentBody::Pb3d(c) => {
                w.section("potentials");
                c.potentials.emit(&mut w);
                w.entry("r_c", c.r_c);
                w.entry("lj", c.lj);
                w.entry("lj_sigma", c.lj_sigma);
                w.entry("lj_epsilon", c.lj_epsilon);
                c.sampler.emit(&mut w);
                c.oracle.emit(&mut w);
                w.section("output");
                w.entry("bins", c.bins);
            }
            ExperimentBody::Nn(c) => {
                w.section("nn");
                w.entry("n_neurons", c.n_neurons);
                w.entry("p_train", c.p_train);
                w.entry("p_test", c.p_test);
                w.entry("noise_std", c.noise_std);
                w.entry("lambda", c.lambda);
                w.entry("beta", c.beta);
                w.entry("s", c.s);
                w.entry("minibatch", c.minibatch);
                w.entry("sgd_burn_in", c.sgd_burn_in);
                w.entry("sgd_iterations", c.sgd_iterations);
                w.entry("loss_stride", c.loss_stride);
                w.entry("grid_n", c.grid_n);
                c.sampler.emit(&mut w);
            }
            ExperimentBody::Convergence(c) => {
                w.section("potentials");
                c.potentials.emit(&mut w);
                c.sampler.emit(&mut w);
                c.oracle.emit(&mut w);
                w.section("convergence");
                let list =
                    c.n_list.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
                w.entry("n_list", list);
                w.entry("reps", c.reps);
                w.entry("n_samples", c.n_samples);
            }
            ExperimentBody::FixedPoint(c) => {
                c.potentials.emit(&mut w);
                c.oracle.emit(&mut w);
            }
            ExperimentBody::Exactness(c) => {
                c.potentials.emit(&mut w);
                w.section("sampler");
                w.entry("n", c.n);
                let taus =
                    c.taus.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",");
                w.entry("taus", taus);
                w.entry("p", c.p);
                w.entry("inner_steps", c.inner_steps);
                w.entry("movers", c.movers);
                w.entry("thin", c.thin);
                w.entry("burn_in", c.burn_in);
                w.entry("recorded", c.recorded);
                w.section("diagnostics");
                w.entry("bins", c.bins);
                c.oracle.emit(&mut w);
            }
        }
        w.into_string()
    }

    /// Canonical config plus a `[result]` section (ignored on re-parse).
    pub fn manifest(&self, results: &[(String, String)]) -> String {
        let mut text = self.canonical_ini();
        text.push_str("\n[result]\n");
        for (k, v) in results {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text
    }
}

/// Artifact version string recorded in manifests.
pub fn version_string() -> String {
    format!("rbmc {} ({})", env!("CARGO_PKG_VERSION"), option_env!("RBMC_BUILD_REF").unwrap_or("dev"))
}
