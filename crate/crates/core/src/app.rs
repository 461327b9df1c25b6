//! Batch orchestration: run configuration, validation, the four commands and
//! report emission.
//!
//! Every report embeds the SHA-256 of the effective configuration and the
//! seed, so a run can be replayed bit for bit at a fixed thread count.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certify::{self, BoundCertificate, CertifyError, MomentEstimates, RateFit};
use crate::gaussian::{self, GaussianDensity, GaussianLaw};
use crate::interpolation::{self, InterpolationPair};
use crate::kernel::{self, KernelError, KernelOptions, KernelStack, NondegeneracyReport};
use crate::matrix::{self, SymMatrix};
use crate::network::{self, Activation, NetworkConfig, NetworkError, ProbeSet};
use crate::posterior::{self, LikelihoodKind, LikelihoodSpec, PosteriorError, PosteriorReport};
use crate::quadrature;
use crate::rng::{domain, RngStream};

pub const SCHEMA_VERSION: u32 = 1;
/// Smallest admissible eigenvalue of every layer kernel.
pub const NONDEGENERACY_TOLERANCE: f64 = 1e-9;
/// Sample size of the empirical 2-Wasserstein comparison (cubic assignment cost).
pub const MEASURED_W2_POINTS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Certify,
    Rate,
    Posterior,
    Selftest,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Command::Certify => "certify",
            Command::Rate => "rate",
            Command::Posterior => "posterior",
            Command::Selftest => "selftest",
        };
        f.write_str(name)
    }
}

/// Probe description as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub inputs: Vec<Vec<f64>>,
    #[serde(default)]
    pub directions: Vec<Vec<f64>>,
    /// One multi-index per input; value probes when omitted.
    #[serde(default)]
    pub multi_indices: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub q: usize,
}

impl ProbeConfig {
    pub fn build(&self) -> Result<ProbeSet, NetworkError> {
        let indices =
            self.multi_indices.clone().unwrap_or_else(|| vec![vec![0; self.directions.len()]; self.inputs.len()]);
        ProbeSet::new(self.inputs.clone(), self.directions.clone(), indices, self.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Conditional covariance draws for the moment estimates.
    pub n_mc: usize,
    /// Draws for measured distances and likelihood means; zero disables them.
    #[serde(default)]
    pub n_tv_samples: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_n: usize,
}

fn default_bootstrap() -> usize {
    certify::DEFAULT_BOOTSTRAP_RESAMPLES
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub order: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { order: kernel::DEFAULT_QUADRATURE_ORDER }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    /// Report directory, relative to the working directory.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Table format of the rate command; other reports are always JSON.
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub command: Option<Command>,
    pub network: NetworkConfig,
    pub probes: ProbeConfig,
    pub mc: McConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    /// Hidden widths swept by the rate command.
    #[serde(default)]
    pub widths: Vec<usize>,
    #[serde(default)]
    pub likelihood: Option<LikelihoodKind>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, AppError> {
        serde_json::from_str(text).map_err(|e| AppError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run configurations serialize");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn kernel_options(&self) -> KernelOptions {
        KernelOptions { quadrature_order: self.quadrature.order }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    fn error(code: &str, message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, code: code.into(), message: message.into() }
    }

    fn warning(code: &str, message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, code: code.into(), message: message.into() }
    }
}

/// Static checks of a configuration. Never fails; an empty list means well formed.
pub fn validate(config: &RunConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if config.schema_version != SCHEMA_VERSION {
        out.push(Diagnostic::error(
            "schema_version",
            format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", config.schema_version),
        ));
    }
    let command = match config.command {
        Some(c) => c,
        None => {
            out.push(Diagnostic::error("missing_command", "no command given"));
            Command::Certify
        }
    };
    let net = &config.network;
    if let Err(e) = net.validate() {
        out.push(Diagnostic::error("invalid_network", e.to_string()));
    }

    let probes = &config.probes;
    if probes.q >= 1 {
        for (j, x) in probes.inputs.iter().enumerate() {
            if x.iter().all(|&v| v == 0.0) {
                out.push(Diagnostic::error(
                    "zero_input",
                    format!("probe {j} is the zero vector; derivative probes (q >= 1) require x != 0"),
                ));
            }
        }
    }
    if probes.q > net.activation.max_derivative_order() {
        out.push(Diagnostic::error(
            "smoothness_violation",
            format!(
                "activation {:?} supports derivative order at most {}, but q = {}",
                net.activation,
                net.activation.max_derivative_order(),
                probes.q
            ),
        ));
    }
    let built = if out.iter().any(|d| d.code == "zero_input") {
        None
    } else {
        match probes.build() {
            Ok(p) => Some(p),
            Err(e) => {
                out.push(Diagnostic::error("invalid_probes", e.to_string()));
                None
            }
        }
    };
    if let Some(p) = &built {
        if net.validate().is_ok() && p.input_dim() != net.input_width() {
            out.push(Diagnostic::error(
                "input_width",
                format!("probe inputs have length {} but n_0 = {}", p.input_dim(), net.input_width()),
            ));
        }
        for (i, j) in kernel::near_coincident_probes(p) {
            out.push(Diagnostic::error(
                "near_coincident_probes",
                format!("probes {i} and {j} are collinear with equal multi-indices; the kernel would be singular"),
            ));
        }
    }

    if config.quadrature.order == 0 || config.quadrature.order > quadrature::MAX_ORDER {
        out.push(Diagnostic::error(
            "quadrature_order",
            format!("quadrature order {} must lie in 1..={}", config.quadrature.order, quadrature::MAX_ORDER),
        ));
    }
    if command != Command::Selftest && config.mc.n_mc < certify::MIN_MC_SAMPLES {
        out.push(Diagnostic::error(
            "n_mc",
            format!("n_mc = {} is below the minimum {}", config.mc.n_mc, certify::MIN_MC_SAMPLES),
        ));
    }

    if command == Command::Rate {
        if config.widths.is_empty() {
            out.push(Diagnostic::error("widths", "the rate command needs a list of widths"));
        }
        if config.widths.contains(&0) {
            out.push(Diagnostic::error("widths", "widths must be positive"));
        }
        if config.widths.windows(2).any(|w| w[0] >= w[1]) {
            out.push(Diagnostic::error("widths", "widths must be strictly increasing"));
        }
        if !config.widths.is_empty() && config.widths.len() < 4 {
            out.push(Diagnostic::warning("widths", "fewer than four widths: no rate fit will be reported"));
        }
        if net.depth == 0 {
            out.push(Diagnostic::warning("widths", "depth 0 has no hidden layer; the width sweep has no effect"));
        }
    }

    if command == Command::Posterior {
        match &config.likelihood {
            None => out.push(Diagnostic::error("likelihood", "the posterior command needs a likelihood")),
            Some(kind) => check_likelihood(kind, probes.inputs.len(), &mut out),
        }
        if config.mc.n_tv_samples == 0 {
            out.push(Diagnostic::error("n_tv_samples", "the posterior command needs n_tv_samples > 0"));
        }
    }
    out
}

fn check_likelihood(kind: &LikelihoodKind, d: usize, out: &mut Vec<Diagnostic>) {
    let positive = |v: f64| v > 0.0 && v.is_finite();
    match kind {
        LikelihoodKind::GaussianBump { center, width, height } => {
            if center.len() != d {
                out.push(Diagnostic::error(
                    "likelihood",
                    format!("bump center has length {} but there are {d} probes", center.len()),
                ));
            }
            if !positive(*width) || !positive(*height) || center.iter().any(|c| !c.is_finite()) {
                out.push(Diagnostic::error("likelihood", "bump width and height must be positive and finite"));
            }
        }
        LikelihoodKind::SmoothedThreshold { coordinate, threshold, smoothing, height } => {
            if *coordinate >= d {
                out.push(Diagnostic::error("likelihood", format!("coordinate {coordinate} out of range for {d} probes")));
            }
            if !positive(*height) || !threshold.is_finite() {
                out.push(Diagnostic::error("likelihood", "threshold height must be positive and finite"));
            }
            if smoothing.is_some_and(|s| !positive(s)) {
                out.push(Diagnostic::error("likelihood", "smoothing width must be positive"));
            }
        }
        LikelihoodKind::Constant { value } => {
            if !positive(*value) {
                out.push(Diagnostic::error("likelihood", "constant likelihood must be positive and finite"));
            }
        }
    }
}

/// Process exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    ConfigError,
    HypothesesUnmet,
    NumericalFailure,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::ConfigError => 2,
            RunStatus::HypothesesUnmet => 3,
            RunStatus::NumericalFailure => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AppError {
    #[error("configuration does not parse: {0}")]
    Parse(String),
    #[error("configuration is invalid ({} diagnostics)", .0.len())]
    Invalid(Vec<Diagnostic>),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Gaussian(#[from] gaussian::GaussianError),
    #[error(transparent)]
    Matrix(#[from] matrix::MatrixError),
}

impl AppError {
    /// Exit code: 2 for configuration problems, 4 for numerical failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Parse(_) | AppError::Invalid(_) => RunStatus::ConfigError.exit_code(),
            AppError::Kernel(KernelError::SmoothnessViolation { .. })
            | AppError::Network(NetworkError::InvalidConfig(_) | NetworkError::InvalidProbes(_))
            | AppError::Posterior(
                PosteriorError::InvalidLikelihood(_)
                | PosteriorError::SupNormViolated { .. }
                | PosteriorError::DimensionMismatch { .. },
            ) => RunStatus::ConfigError.exit_code(),
            AppError::Io(_) | AppError::ThreadPool(_) => 1,
            _ => RunStatus::NumericalFailure.exit_code(),
        }
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> AppError {
    AppError::Io(format!("{}: {e}", path.display()))
}

/// Command-line overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

/// Files written by a run and its exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Replay information common to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayInfo {
    pub schema_version: u32,
    pub command: Command,
    pub config_hash: String,
    pub seed: u64,
    pub threads: Option<usize>,
}

/// Distances measured between the network law and its Gaussian limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredDistances {
    pub n_tv_samples: usize,
    /// Grid total variation between the covariance-mixture density and `N(0, K)`.
    pub tv_measured: Option<f64>,
    pub tv_refinement_error: Option<f64>,
    /// Plug-in optimal-assignment W2 between network outputs and `N(0, K)` draws.
    pub w2_empirical: f64,
    /// The same estimator between two independent `N(0, K)` clouds: the plug-in bias level.
    pub w2_null_baseline: f64,
    pub w2_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub replay: ReplayInfo,
    pub status: RunStatus,
    pub kernel: SymMatrix,
    pub nondegeneracy: NondegeneracyReport,
    pub certificate: Option<BoundCertificate>,
    pub measured: Option<MeasuredDistances>,
    pub notes: Vec<String>,
}

/// One row of the rate table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub width: usize,
    pub mean_gap: f64,
    pub eighth_root: f64,
    pub tv_bound: f64,
    pub w2_bound: f64,
    pub tv_measured: Option<f64>,
    pub ci_mean_gap: f64,
    pub ci_eighth: f64,
    pub ci_tv_bound: f64,
}

/// Log-log fits of each rate column against the width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFits {
    pub mean_gap: Option<RateFit>,
    pub eighth_root: Option<RateFit>,
    pub tv_bound: Option<RateFit>,
    pub tv_measured: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub replay: ReplayInfo,
    pub status: RunStatus,
    pub kernel: SymMatrix,
    pub nondegeneracy: NondegeneracyReport,
    pub rows: Vec<RateRow>,
    pub rate_fit: Option<RateFits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRunReport {
    pub replay: ReplayInfo,
    pub status: RunStatus,
    pub kernel: SymMatrix,
    pub nondegeneracy: NondegeneracyReport,
    pub prior_certificate: Option<BoundCertificate>,
    pub posterior: Option<PosteriorReport>,
    /// `|posterior TV − prior TV|` under the constant likelihood; zero up to grid error.
    pub constant_likelihood_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub replay: ReplayInfo,
    pub status: RunStatus,
    pub passed: usize,
    pub failed: usize,
    pub checks: Vec<SelfCheck>,
}

/// Validates and runs `config` inside a thread pool of the requested size.
pub fn run(config: &RunConfig, options: &RunOptions) -> Result<RunOutcome, AppError> {
    let mut config = config.clone();
    if let Some(seed) = options.seed {
        config.network.seed = seed;
    }
    if let Some(dir) = &options.out_dir {
        config.output.dir = Some(dir.clone());
    }
    let diagnostics = validate(&config);
    if diagnostics.iter().any(|d| d.severity == Severity::Error) {
        return Err(AppError::Invalid(diagnostics));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = options.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| AppError::ThreadPool(e.to_string()))?;
    pool.install(|| dispatch(&config, options.threads))
}

fn dispatch(config: &RunConfig, threads: Option<usize>) -> Result<RunOutcome, AppError> {
    let command = config.command.expect("validated configurations name a command");
    // The output directory is plumbing, not part of the experiment.
    let mut hashed = config.clone();
    hashed.output.dir = None;
    let replay = ReplayInfo {
        schema_version: SCHEMA_VERSION,
        command,
        config_hash: hashed.hash(),
        seed: config.network.seed,
        threads,
    };
    let dir = config.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    match command {
        Command::Certify => {
            let report = certify_report(config, replay)?;
            let path = write_json(&dir, "certificate.json", &report)?;
            let summary = match &report.certificate {
                Some(c) => format!("tv_bound {:.6e}, w2_bound {:.6e}", c.tv_bound, c.w2_bound),
                None => "non-degeneracy failed; no bound emitted".into(),
            };
            Ok(RunOutcome { status: report.status, files: vec![path], summary })
        }
        Command::Rate => {
            let report = rate_report(config, replay)?;
            let mut files = Vec::new();
            if config.output.format == OutputFormat::Csv {
                files.push(write_rate_csv(&dir, &report.rows)?);
            }
            files.push(write_json(&dir, "rate_summary.json", &report)?);
            let summary = match report.rate_fit.as_ref().and_then(|f| f.tv_bound) {
                Some(fit) => format!("{} widths, tv_bound slope {:.4}", report.rows.len(), fit.slope),
                None => format!("{} widths", report.rows.len()),
            };
            Ok(RunOutcome { status: report.status, files, summary })
        }
        Command::Posterior => {
            let report = posterior_report(config, replay)?;
            let path = write_json(&dir, "posterior.json", &report)?;
            let summary = match &report.posterior {
                Some(p) => format!("posterior tv bound {:.6e}", p.tv_bound_posterior),
                None => "non-degeneracy failed; no bound emitted".into(),
            };
            Ok(RunOutcome { status: report.status, files: vec![path], summary })
        }
        Command::Selftest => {
            let report = selftest_report(config, replay);
            let path = write_json(&dir, "selftest.json", &report)?;
            let summary = format!("{} passed, {} failed", report.passed, report.failed);
            Ok(RunOutcome { status: report.status, files: vec![path], summary })
        }
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, AppError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Writes the rate table with the fixed header.
pub fn write_rate_csv(dir: &Path, rows: &[RateRow]) -> Result<PathBuf, AppError> {
    let path = dir.join("rate.csv");
    let mut writer = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| io_err(&path, e))?;
    }
    writer.flush().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Output kernel and its non-degeneracy report.
struct Limit {
    stack: KernelStack,
    report: NondegeneracyReport,
}

fn limit(config: &RunConfig, probes: &ProbeSet) -> Result<Limit, AppError> {
    let stack = kernel::extended_kernel_with(&config.network, probes, &config.kernel_options())?;
    let report = kernel::nondegeneracy_check(&stack, NONDEGENERACY_TOLERANCE);
    Ok(Limit { stack, report })
}

/// Moments, certificate and measured distances for one network configuration.
struct Certified {
    moments: MomentEstimates,
    certificate: BoundCertificate,
    measured: Option<MeasuredDistances>,
    tv_samples: Vec<SymMatrix>,
}

fn certify_network(
    net: &NetworkConfig,
    probes: &ProbeSet,
    k: &SymMatrix,
    mc: &McConfig,
    stream: &RngStream,
    with_w2: bool,
) -> Result<Certified, AppError> {
    let (moments, _) = certify::estimate_moments(net, probes, k, mc.n_mc, mc.bootstrap_n, stream)?;
    let certificate = certify::tv_w2_bound(k, &moments)?;
    let mut measured = None;
    let mut tv_samples = Vec::new();
    if mc.n_tv_samples > 0 {
        let tv_stream = stream.child(domain::TV_SAMPLES);
        tv_samples = network::sample_covariances(net, probes, mc.n_tv_samples, &tv_stream)?
            .into_iter()
            .map(|s| s.matrix)
            .collect();
        let tv = if k.dim() <= 2 {
            let mixture = certify::MixtureDensity::new(&tv_samples)?;
            Some(certify::measured_tv(&mixture, k, None)?)
        } else {
            None
        };
        let (w2_empirical, w2_null_baseline, w2_points) = if with_w2 {
            let m = mc.n_tv_samples.min(MEASURED_W2_POINTS);
            let outputs = network::sample_outputs(net, probes, m, &tv_stream)?;
            let limit_stream = stream.child(domain::LIMIT_SAMPLES);
            let g1 = certify::gaussian_cloud(k, m, &limit_stream, 0)?;
            let g2 = certify::gaussian_cloud(k, m, &limit_stream, 1)?;
            (certify::empirical_w2(&outputs, &g1)?, certify::empirical_w2(&g2, &g1)?, m)
        } else {
            (f64::NAN, f64::NAN, 0)
        };
        measured = Some(MeasuredDistances {
            n_tv_samples: mc.n_tv_samples,
            tv_measured: tv.map(|t| t.value),
            tv_refinement_error: tv.map(|t| t.refinement_error),
            w2_empirical,
            w2_null_baseline,
            w2_points,
        });
    }
    Ok(Certified { moments, certificate, measured, tv_samples })
}

fn certificate_status(certificate: &BoundCertificate) -> RunStatus {
    if certificate.validity_flags.invertibility {
        RunStatus::Ok
    } else {
        RunStatus::HypothesesUnmet
    }
}

/// Runs the certify command without writing files.
pub fn certify_report(config: &RunConfig, replay: ReplayInfo) -> Result<CertifyReport, AppError> {
    let probes = config.probes.build()?;
    let lim = limit(config, &probes)?;
    let k = lim.stack.output().clone();
    if !lim.report.passed {
        return Ok(CertifyReport {
            replay,
            status: RunStatus::HypothesesUnmet,
            kernel: k,
            nondegeneracy: lim.report,
            certificate: None,
            measured: None,
            notes: vec!["a layer kernel is singular at the tolerance; the certificate hypotheses are unmet".into()],
        });
    }
    let stream = RngStream::new(config.network.seed);
    let run = certify_network(&config.network, &probes, &k, &config.mc, &stream, true)?;
    let mut notes = Vec::new();
    if run.certificate.entropy_bound.is_none() {
        notes.push(format!(
            "{:.3}% of covariance draws were singular; the relative entropy bound is withheld",
            100.0 * run.moments.singular_fraction
        ));
    }
    if run.moments.kink_perturbations > 0 {
        notes.push(format!("{} probe perturbations avoided activation kinks", run.moments.kink_perturbations));
    }
    if let Some(m) = &run.measured {
        if m.w2_points > 0 {
            notes.push("w2_empirical is a biased plug-in estimate; compare with w2_null_baseline".into());
        }
    }
    Ok(CertifyReport {
        replay,
        status: certificate_status(&run.certificate),
        kernel: k,
        nondegeneracy: lim.report,
        certificate: Some(run.certificate),
        measured: run.measured,
        notes,
    })
}

/// Runs the rate command without writing files.
pub fn rate_report(config: &RunConfig, replay: ReplayInfo) -> Result<RateReport, AppError> {
    let probes = config.probes.build()?;
    // The limit kernel does not depend on the hidden widths.
    let lim = limit(config, &probes)?;
    let k = lim.stack.output().clone();
    if !lim.report.passed {
        return Ok(RateReport {
            replay,
            status: RunStatus::HypothesesUnmet,
            kernel: k,
            nondegeneracy: lim.report,
            rows: Vec::new(),
            rate_fit: None,
        });
    }
    let root = RngStream::new(config.network.seed);
    let mut rows = Vec::with_capacity(config.widths.len());
    let mut status = RunStatus::Ok;
    for &width in &config.widths {
        let net = config.network.with_hidden_width(width);
        let run = certify_network(&net, &probes, &k, &config.mc, &root.child(width as u64), false)?;
        if certificate_status(&run.certificate) != RunStatus::Ok {
            status = RunStatus::HypothesesUnmet;
        }
        let c = &run.certificate;
        rows.push(RateRow {
            width,
            mean_gap: run.moments.mean_gap,
            eighth_root: run.moments.eighth_root,
            tv_bound: c.tv_bound,
            w2_bound: c.w2_bound,
            tv_measured: run.measured.and_then(|m| m.tv_measured),
            ci_mean_gap: run.moments.ci_mean_gap,
            ci_eighth: run.moments.ci_eighth,
            ci_tv_bound: c.tv_bound_ci,
        });
    }
    let rate_fit = (rows.len() >= 4).then(|| {
        let widths: Vec<usize> = rows.iter().map(|r| r.width).collect();
        let fit = |values: Vec<Option<f64>>| -> Option<RateFit> {
            let values: Option<Vec<f64>> = values.into_iter().collect();
            certify::rate_fit(&widths, &values?).ok()
        };
        RateFits {
            mean_gap: fit(rows.iter().map(|r| Some(r.mean_gap)).collect()),
            eighth_root: fit(rows.iter().map(|r| Some(r.eighth_root)).collect()),
            tv_bound: fit(rows.iter().map(|r| Some(r.tv_bound)).collect()),
            tv_measured: fit(rows.iter().map(|r| r.tv_measured).collect()),
        }
    });
    Ok(RateReport { replay, status, kernel: k, nondegeneracy: lim.report, rows, rate_fit })
}

/// Runs the posterior command without writing files.
pub fn posterior_report(config: &RunConfig, replay: ReplayInfo) -> Result<PosteriorRunReport, AppError> {
    let probes = config.probes.build()?;
    let lim = limit(config, &probes)?;
    let k = lim.stack.output().clone();
    if !lim.report.passed {
        return Ok(PosteriorRunReport {
            replay,
            status: RunStatus::HypothesesUnmet,
            kernel: k,
            nondegeneracy: lim.report,
            prior_certificate: None,
            posterior: None,
            constant_likelihood_gap: None,
        });
    }
    let kind = config.likelihood.clone().expect("validated posterior configurations carry a likelihood");
    let likelihood = LikelihoodSpec::new(kind, &k)?;
    let root = RngStream::new(config.network.seed);
    let run = certify_network(&config.network, &probes, &k, &config.mc, &root, false)?;
    let n = config.mc.n_tv_samples;
    let tv_stream = root.child(domain::TV_SAMPLES);
    let outputs = network::sample_outputs(&config.network, &probes, n, &tv_stream)?;
    let means =
        posterior::estimate_likelihood_means(&outputs, &k, &likelihood, n, &root.child(domain::LIMIT_SAMPLES))?;
    let prior = run.certificate.tv_bound;
    let tv_bound_posterior = posterior::posterior_tv_bound(prior, &likelihood, means.e_lz.mean, means.e_lg.mean)?;
    let prediction = posterior::prediction_tv_bound(prior, &likelihood, means.e_lz.mean, means.e_lg.mean)?;

    let (mut tv_post, mut tv_prior, mut gap) = (None, None, None);
    if k.dim() <= 2 {
        let mixture = certify::MixtureDensity::new(&run.tv_samples)?;
        let grid = certify::covering_grid(&mixture, &k)?;
        let post = posterior::posterior_tv_numeric(|x| mixture.eval(x), &k, &likelihood, &grid)?;
        let constant = LikelihoodSpec::new(LikelihoodKind::Constant { value: 1.0 }, &k)?;
        let collapsed = posterior::posterior_tv_numeric(|x| mixture.eval(x), &k, &constant, &grid)?;
        let prior_tv = certify::measured_tv(&mixture, &k, Some(grid))?;
        tv_post = Some(post.value);
        tv_prior = Some(prior_tv.value);
        gap = Some((collapsed.value - prior_tv.value).abs());
    }
    Ok(PosteriorRunReport {
        replay,
        status: certificate_status(&run.certificate),
        kernel: k,
        nondegeneracy: lim.report,
        prior_certificate: Some(run.certificate),
        posterior: Some(PosteriorReport {
            likelihood,
            e_lz: means.e_lz,
            e_lg: means.e_lg,
            prior_tv_bound: prior,
            tv_bound_posterior,
            prediction_tv_bound: prediction,
            tv_measured_posterior: tv_post,
            tv_measured_prior: tv_prior,
        }),
        constant_likelihood_gap: gap,
    })
}

type CheckResult = Result<(bool, String), String>;

fn check(name: &str, f: impl FnOnce() -> CheckResult) -> SelfCheck {
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    SelfCheck { name: name.into(), passed, detail }
}

fn e(err: impl fmt::Display) -> String {
    err.to_string()
}

/// Runs the built-in property suite.
pub fn selftest_report(config: &RunConfig, replay: ReplayInfo) -> SelftestReport {
    let order = config.quadrature.order;
    let seed = config.network.seed;
    let checks = vec![
        check("hermite_orthogonality", || {
            let unit = SymMatrix::identity(1);
            let mut worst: f64 = 0.0;
            for k in 0..=8usize {
                for j in 0..=8usize {
                    let v = gaussian::gauss_expectation(
                        |x| gaussian::hermite_values(x[0], 8)[k] * gaussian::hermite_values(x[0], 8)[j],
                        &unit,
                        64,
                    )
                    .map_err(e)?;
                    let expected = if k == j { (1..=k).map(|i| i as f64).product() } else { 0.0 };
                    worst = worst.max((v - expected).abs());
                }
            }
            Ok((worst <= 1e-8, format!("max deviation {worst:.3e}")))
        }),
        check("isserlis_fourth_moment", || {
            let cov = SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).map_err(e)?;
            let v = gaussian::isserlis_moment(&cov, &[0, 0, 1, 1]).map_err(e)?;
            let expected = 2.0 * 1.0 + 2.0 * 0.25;
            Ok(((v - expected).abs() <= 1e-14, format!("{v} vs {expected}")))
        }),
        check("trace_identities", || {
            let a = SymMatrix::from_rows(&[vec![1.1, 0.05], vec![0.05, 0.9]]).map_err(e)?;
            let k = SymMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 1.0]]).map_err(e)?;
            let pair = InterpolationPair::new(a, k).map_err(e)?;
            let mut worst: f64 = 0.0;
            for order in 1..=interpolation::MAX_K {
                for t in [0.0, 0.5, 1.0] {
                    let x = interpolation::hk_second_moment(&pair, t, order).map_err(e)?;
                    let y = interpolation::hk_second_moment_by_pairings(&pair, t, order).map_err(e)?;
                    worst = worst.max((x - y).abs() / y.abs().max(1e-300));
                }
            }
            Ok((worst <= 1e-10, format!("max relative deviation {worst:.3e}")))
        }),
        check("kernel_closed_forms", || {
            let probes =
                ProbeSet::values(vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![-0.5, 1.5]]).map_err(e)?;
            let mut worst: f64 = 0.0;
            for activation in [Activation::Identity, Activation::Relu] {
                let net = NetworkConfig {
                    depth: 3,
                    widths: vec![2, 8, 8, 8, 1],
                    c_b: 0.1,
                    c_w: 1.5,
                    activation,
                    seed,
                };
                let numeric = kernel::kernel_recursion_with(&net, &probes, &KernelOptions { quadrature_order: order })
                    .map_err(e)?;
                let exact = kernel::closed_form_oracle(&net, &probes).map_err(e)?;
                for (x, y) in numeric.layers.iter().zip(&exact.layers) {
                    worst = worst.max(x.max_abs_diff(y));
                }
            }
            Ok((worst <= 1e-8, format!("max absolute deviation {worst:.3e}")))
        }),
        check("identity_depth_zero_is_gaussian", || {
            let net = NetworkConfig { depth: 0, widths: vec![2, 1], c_b: 0.3, c_w: 1.0, activation: Activation::Identity, seed };
            let probes = ProbeSet::values(vec![vec![1.0, 0.5], vec![-0.3, 2.0]]).map_err(e)?;
            let k = kernel::kernel_recursion(&net, &probes).map_err(e)?.output().clone();
            let stream = RngStream::new(seed);
            let (moments, _) = certify::estimate_moments(&net, &probes, &k, certify::MIN_MC_SAMPLES, 0, &stream)
                .map_err(e)?;
            let cert = certify::tv_w2_bound(&k, &moments).map_err(e)?;
            // A equals K up to the rounding of the two affine evaluations.
            Ok((cert.tv_bound <= 1e-12 && cert.w2_bound <= 1e-12, format!("tv_bound {:.3e}", cert.tv_bound)))
        }),
        check("bound_assembly_audit", || {
            let k = SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.8]]).map_err(e)?;
            let samples: Vec<SymMatrix> = (0..200)
                .map(|i| {
                    let s = 0.02 * ((i % 7) as f64 - 3.0);
                    k.add(&SymMatrix::from_rows(&[vec![s, 0.5 * s], vec![0.5 * s, -s]]).expect("2x2")).expect("same size")
                })
                .collect();
            let moments = certify::moments_from_samples(&samples, &k, 0, &RngStream::new(seed)).map_err(e)?;
            let cert = certify::tv_w2_bound(&k, &moments).map_err(e)?;
            let tv: f64 = cert.term_breakdown.tv_terms.iter().map(|t| t.contribution).sum();
            let w2: f64 = cert.term_breakdown.w2_terms.iter().map(|t| t.contribution).sum();
            let dev = ((tv - cert.tv_bound) / cert.tv_bound).abs().max(((w2 - cert.w2_bound) / cert.w2_bound).abs());
            Ok((dev <= 1e-12, format!("relative deviation {dev:.3e}")))
        }),
        check("entropy_route_dominance", || {
            let a = SymMatrix::scalar(1.1).map_err(e)?;
            let k = SymMatrix::scalar(1.0).map_err(e)?;
            let moments = certify::moments_from_samples(&vec![a.clone(); certify::MIN_MC_SAMPLES], &k, 0, &RngStream::new(seed))
                .map_err(e)?;
            let bound = certify::entropy_bound(&k, &moments).map_err(e)?;
            let kl = gaussian::kl_gaussian(&GaussianLaw::new(a.clone()).map_err(e)?, &GaussianLaw::new(k.clone()).map_err(e)?)
                .map_err(e)?;
            let (pa, pk) = (GaussianDensity::new(&a).map_err(e)?, GaussianDensity::new(&k).map_err(e)?);
            let grid = gaussian::GridSpec::covering(1, 1.1f64.sqrt()).map_err(e)?;
            let tv = gaussian::tv_numeric(|x| pa.eval(x), |x| pk.eval(x), &grid).map_err(e)?.value;
            let ok = bound >= kl && (bound / 2.0).sqrt() >= tv;
            Ok((ok, format!("entropy bound {bound:.4e}, KL {kl:.4e}, TV {tv:.4e}")))
        }),
        check("replay_determinism", || {
            let net = NetworkConfig {
                depth: 1,
                widths: vec![1, 16, 1],
                c_b: 0.1,
                c_w: 1.5,
                activation: Activation::Tanh,
                seed,
            };
            let probes = ProbeSet::values(vec![vec![1.0], vec![-0.5]]).map_err(e)?;
            let stream = RngStream::new(seed);
            let first = network::sample_covariances(&net, &probes, 64, &stream).map_err(e)?;
            let second = network::sample_covariances(&net, &probes, 64, &stream).map_err(e)?;
            let same = first.iter().zip(&second).all(|(x, y)| x.matrix == y.matrix);
            Ok((same, "64 draws replayed".into()))
        }),
        check("configured_kernel_nondegenerate", || {
            let probes = config.probes.build().map_err(e)?;
            let stack =
                kernel::extended_kernel_with(&config.network, &probes, &config.kernel_options()).map_err(e)?;
            let report = kernel::nondegeneracy_check(&stack, NONDEGENERACY_TOLERANCE);
            Ok((report.passed, format!("smallest layer eigenvalue {:.4e}", report.smallest)))
        }),
    ];
    let passed = checks.iter().filter(|c| c.passed).count();
    let failed = checks.len() - passed;
    let status = if failed == 0 { RunStatus::Ok } else { RunStatus::NumericalFailure };
    SelftestReport { replay, status, passed, failed, checks }
}
