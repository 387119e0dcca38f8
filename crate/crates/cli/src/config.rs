//! Run configuration: one JSON file per run, subcommand-specific sections,
//! flag and environment overrides, strict unknown-key rejection at every
//! nesting level, and the hash-named run-directory layout.
//!
//! Sections hold *inputs only*: derived quantities (basis evaluation tables,
//! tail envelopes, Hölder and Lipschitz constants) are rebuilt through the
//! library constructors, never trusted from the file.

use std::path::PathBuf;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use funlat::concentration::{BoundSpec, TailRecipe, TailStatistic};
use funlat::experiments::{
    config_hash, BandwidthSchedule, LadderSpec, LaplaceLadderConfig, MixingMode, PowerLawModel,
    RadiusSchedule, RateLadderConfig, TailLadderConfig, TOOL_VERSION,
};
use funlat::fields::{
    CoeffDecay, GeneratorKind, GeneratorSpec, InnovationKind, PsiKind, PsiSpec,
};
use funlat::hilbert::{BasisFamily, BasisSpec, FunctionalElement, MeasureKind, PseudoMetric};
use funlat::lattice::LatticeCube;
use funlat::regression::{KernelKind, KernelSpec, SmallBallPlan};

use crate::{CliError, RunArgs};

pub const ENV_OUTPUT_DIR: &str = "FUNLAT_OUTPUT_DIR";
pub const ENV_THREADS: &str = "FUNLAT_THREADS";

const SECTIONS: [&str; 6] = ["simulate", "estimate", "smallball", "tail", "laplace", "rate"];

#[derive(Debug, Default, Serialize, Deserialize)]
struct GlobalSection {
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    threads: Option<usize>,
    budget_seconds: Option<f64>,
}

/// A fully resolved run: file, environment and flags reconciled.
pub struct Resolved<T> {
    pub command: &'static str,
    pub seed: u64,
    /// Whether the seed came from the flag or the file (as opposed to the
    /// 0 default). `simulate` only overrides the generator's own seed when
    /// one was actually given.
    pub seed_explicit: bool,
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
    pub budget_seconds: Option<f64>,
    pub section: T,
    /// SHA-256 over (command, seed, section) — exactly the inputs the output
    /// numbers depend on; thread count and paths are excluded.
    pub hash: String,
}

#[derive(Serialize)]
struct Hashed<'a, T> {
    command: &'a str,
    seed: u64,
    section: &'a T,
}

/// Loads the config file and resolves one subcommand's section against the
/// `--seed`/`--output-dir`/`--threads` flags and the environment (the latter
/// overrides the file for `output_dir` and `threads` only).
pub fn load<T>(command: &'static str, args: &RunArgs) -> Result<Resolved<T>, CliError>
where
    T: Serialize + DeserializeOwned,
{
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        CliError::config(
            "io",
            format!("cannot read config file {}: {e}", args.config.display()),
        )
    })?;
    let root: Value = serde_json::from_str(&text).map_err(|e| {
        CliError::config(
            "parse",
            format!("config file {} is not valid JSON: {e}", args.config.display()),
        )
    })?;
    let Value::Object(map) = &root else {
        return Err(CliError::config("parse", "config root must be a JSON object"));
    };
    for key in map.keys() {
        if key != "global" && !SECTIONS.contains(&key.as_str()) {
            return Err(CliError::config(
                "unknown_key",
                format!(
                    "unknown top-level key `{key}` (expected `global` or a section named after a subcommand)"
                ),
            ));
        }
    }
    let global: GlobalSection = match map.get("global") {
        Some(raw) => from_section("global", raw)?,
        None => GlobalSection::default(),
    };
    let raw = map.get(command).ok_or_else(|| {
        CliError::config(
            "missing_section",
            format!("config file {} has no `{command}` section", args.config.display()),
        )
    })?;
    let section: T = from_section(command, raw)?;

    let explicit_seed = args.seed.or(global.seed);
    let seed = explicit_seed.unwrap_or(0);
    let threads = resolve_threads(args.threads, global.threads)?;
    let output_dir = args
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(ENV_OUTPUT_DIR).map(PathBuf::from))
        .or(global.output_dir)
        .unwrap_or_else(|| PathBuf::from("runs"));
    let hash =
        config_hash(&Hashed { command, seed, section: &section }).map_err(CliError::from_build)?;
    Ok(Resolved {
        command,
        seed,
        seed_explicit: explicit_seed.is_some(),
        threads,
        output_dir,
        budget_seconds: global.budget_seconds,
        section,
        hash,
    })
}

/// Flag > `FUNLAT_THREADS` > config; `None` leaves the default worker pool.
pub fn resolve_threads(
    flag: Option<usize>,
    cfg: Option<usize>,
) -> Result<Option<usize>, CliError> {
    let env = match std::env::var(ENV_THREADS) {
        Ok(s) => Some(s.parse::<usize>().map_err(|_| {
            CliError::config(
                "parse",
                format!("{ENV_THREADS} must be a positive integer, got `{s}`"),
            )
        })?),
        Err(_) => None,
    };
    let resolved = flag.or(env).or(cfg);
    if resolved == Some(0) {
        return Err(CliError::config("invalid_parameter", "threads must be at least 1"));
    }
    Ok(resolved)
}

fn from_section<T>(name: &str, raw: &Value) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned,
{
    let typed: T = serde_json::from_value(raw.clone())
        .map_err(|e| CliError::config("parse", format!("section `{name}`: {e}")))?;
    let canonical = serde_json::to_value(&typed)
        .map_err(|e| CliError::config("serde", format!("section `{name}`: {e}")))?;
    let mut unknown = Vec::new();
    collect_unknown_keys(raw, &canonical, name, &mut unknown);
    if !unknown.is_empty() {
        return Err(CliError::config(
            "unknown_key",
            format!(
                "unknown key{} in config: {}",
                if unknown.len() > 1 { "s" } else { "" },
                unknown.join(", ")
            ),
        ));
    }
    Ok(typed)
}

/// Keys present in the input but absent from the canonical re-serialization
/// of the parsed value were silently ignored by the deserializer; reject
/// them. Works at every nesting level, including inside tagged enums.
fn collect_unknown_keys(input: &Value, canonical: &Value, path: &str, out: &mut Vec<String>) {
    match (input, canonical) {
        (Value::Object(input), Value::Object(canonical)) => {
            for (key, val) in input {
                let sub = format!("{path}.{key}");
                match canonical.get(key) {
                    Some(canon) => collect_unknown_keys(val, canon, &sub, out),
                    None => out.push(sub),
                }
            }
        }
        (Value::Array(input), Value::Array(canonical)) => {
            for (idx, val) in input.iter().enumerate() {
                if let Some(canon) = canonical.get(idx) {
                    collect_unknown_keys(val, canon, &format!("{path}[{idx}]"), out);
                }
            }
        }
        _ => {}
    }
}

/// Creates `<output_dir>/<command>-<hash prefix>/` and writes the resolved
/// config snapshot inside.
pub fn prepare_run_dir<T: Serialize>(resolved: &Resolved<T>) -> Result<PathBuf, CliError> {
    let dir = resolved
        .output_dir
        .join(format!("{}-{}", resolved.command, &resolved.hash[..12]));
    std::fs::create_dir_all(&dir).map_err(|e| {
        CliError::runtime("io", format!("cannot create run directory {}: {e}", dir.display()))
    })?;
    let snapshot = serde_json::json!({
        "command": resolved.command,
        "version": TOOL_VERSION,
        "config_hash": resolved.hash,
        "seed": resolved.seed,
        "threads": resolved.threads,
        "output_dir": resolved.output_dir,
        "budget_seconds": resolved.budget_seconds,
        "section": serde_json::to_value(&resolved.section)
            .map_err(|e| CliError::runtime("serde", e.to_string()))?,
    });
    let path = dir.join("resolved-config.json");
    let mut text = serde_json::to_string_pretty(&snapshot)
        .map_err(|e| CliError::runtime("serde", e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text)
        .map_err(|e| CliError::runtime("io", format!("cannot write {}: {e}", path.display())))?;
    Ok(dir)
}

/// Runs `f` on a dedicated pool when a thread count was requested.
pub fn with_pool<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().map_err(|e| {
                CliError::runtime("threads", format!("cannot build a {t}-thread worker pool: {e}"))
            })?;
            Ok(pool.install(f))
        }
    }
}

/// Fails the run (after artifacts are written) when it overran the cap.
pub fn enforce_budget(budget: Option<f64>, started: Instant) -> Result<(), CliError> {
    if let Some(cap) = budget {
        let elapsed = started.elapsed().as_secs_f64();
        if elapsed > cap {
            return Err(CliError::runtime(
                "budget",
                format!(
                    "run exceeded the configured time budget: {elapsed:.1}s > {cap:.1}s \
                     (artifacts were still written)"
                ),
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Builder-style pieces shared by several sections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisConfig {
    pub family: BasisFamily,
    /// Box domain, per-axis `[lo, hi]`.
    pub domain: Vec<[f64; 2]>,
    pub measure: MeasureKind,
    pub j_max: usize,
}

impl BasisConfig {
    pub fn build(&self) -> funlat::Result<BasisSpec> {
        BasisSpec::new(self.family, self.domain.clone(), self.measure, self.j_max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub basis: BasisConfig,
    pub coeff_decay: CoeffDecay,
    pub innovation: InnovationKind,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn build(&self) -> funlat::Result<GeneratorSpec> {
        GeneratorSpec::new(self.kind, self.basis.build()?, self.coeff_decay, self.innovation, self.seed)
    }
}

pub fn build_psi(kind: &PsiKind) -> PsiSpec {
    match kind {
        PsiKind::Zero => PsiSpec::zero(),
        PsiKind::LinearDiag { lambda } => PsiSpec::linear_diag(lambda.clone()),
        PsiKind::NonlinearLipschitz => PsiSpec::nonlinear(),
    }
}

pub fn build_kernel(kind: KernelKind) -> KernelSpec {
    match kind {
        KernelKind::Quadratic => KernelSpec::quadratic(),
        KernelKind::TriangleZero => KernelSpec::triangle_zero(),
        KernelKind::Indicator => KernelSpec::indicator(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "statistic", rename_all = "snake_case")]
pub enum StatisticConfig {
    RealSum,
    HilbertNormSum,
    KernelWeightedRealSum { x: Vec<f64>, kernel: KernelKind, bandwidth: f64, metric: PseudoMetric },
    KernelWeightedNormSum { x: Vec<f64>, kernel: KernelKind, bandwidth: f64, metric: PseudoMetric },
}

impl StatisticConfig {
    pub fn build(&self) -> TailStatistic {
        match self {
            StatisticConfig::RealSum => TailStatistic::RealSum,
            StatisticConfig::HilbertNormSum => TailStatistic::HilbertNormSum,
            StatisticConfig::KernelWeightedRealSum { x, kernel, bandwidth, metric } => {
                TailStatistic::KernelWeightedRealSum {
                    x: FunctionalElement::new(x.clone()),
                    kernel: build_kernel(*kernel),
                    bandwidth: *bandwidth,
                    metric: *metric,
                }
            }
            StatisticConfig::KernelWeightedNormSum { x, kernel, bandwidth, metric } => {
                TailStatistic::KernelWeightedNormSum {
                    x: FunctionalElement::new(x.clone()),
                    kernel: build_kernel(*kernel),
                    bandwidth: *bandwidth,
                    metric: *metric,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case")]
pub enum RecipeConfig {
    Field {
        generator: GeneratorConfig,
        psi: PsiKind,
        noise_scale: f64,
        statistic: StatisticConfig,
    },
    IidSigns,
}

impl RecipeConfig {
    pub fn build(&self) -> funlat::Result<TailRecipe> {
        match self {
            RecipeConfig::Field { generator, psi, noise_scale, statistic } => {
                Ok(TailRecipe::Field {
                    generator: generator.build()?,
                    psi: build_psi(psi),
                    noise_scale: *noise_scale,
                    statistic: statistic.build(),
                })
            }
            RecipeConfig::IidSigns => Ok(TailRecipe::IidSigns),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderConfig {
    /// Cube edge lists, one per rung, e.g. `[[8,8],[16,16]]`.
    pub cubes: Vec<Vec<u32>>,
    pub c_prime: f64,
    pub replicates: usize,
    pub seeds: Vec<u64>,
}

impl LadderConfig {
    pub fn build(&self) -> funlat::Result<LadderSpec> {
        let cubes = self
            .cubes
            .iter()
            .map(|edges| LatticeCube::new(edges.clone()))
            .collect::<funlat::Result<Vec<_>>>()?;
        Ok(LadderSpec {
            cubes,
            c_prime: self.c_prime,
            replicates: self.replicates,
            seeds: self.seeds.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Subcommand sections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSection {
    pub generator: GeneratorConfig,
    pub psi: PsiKind,
    /// Lattice edges, e.g. `[16, 16]`.
    pub cube: Vec<u32>,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoveringConfig {
    pub radius: f64,
    pub delta: f64,
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateSection {
    /// Path to a sample CSV written by `simulate`.
    pub sample: PathBuf,
    pub kernel: KernelKind,
    pub bandwidth: f64,
    pub metric: PseudoMetric,
    pub small_ball: SmallBallPlan,
    pub min_denominator: Option<f64>,
    pub covering: CoveringConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TauConfig {
    pub h_ref: f64,
    pub u_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallballSection {
    /// Center coefficients.
    pub x: Vec<f64>,
    pub h_grid: Vec<f64>,
    pub generator: GeneratorConfig,
    pub lattice_dim: usize,
    pub metric: PseudoMetric,
    pub replicates: usize,
    /// Optional ratio table `τ̂(u) = F̂(h_ref·u)/F̂(h_ref)`.
    pub tau: Option<TauConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailSection {
    pub ladder: LadderConfig,
    pub recipe: RecipeConfig,
    pub eps_grid: Vec<f64>,
    pub bound: BoundSpec,
}

impl TailSection {
    pub fn build(&self) -> funlat::Result<TailLadderConfig> {
        Ok(TailLadderConfig {
            ladder: self.ladder.build()?,
            recipe: self.recipe.build()?,
            eps_grid: self.eps_grid.clone(),
            bound: self.bound,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceSection {
    pub ladder: LadderConfig,
    pub recipe: RecipeConfig,
    pub beta_fractions: Vec<f64>,
    /// Summand bound `B`.
    pub b: f64,
    /// Mixing decay rate entering the admissible region.
    pub c1: f64,
}

impl LaplaceSection {
    pub fn build(&self) -> funlat::Result<LaplaceLadderConfig> {
        Ok(LaplaceLadderConfig {
            ladder: self.ladder.build()?,
            recipe: self.recipe.build()?,
            beta_fractions: self.beta_fractions.clone(),
            b: self.b,
            c1: self.c1,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateSection {
    pub mode: MixingMode,
    pub ladder: LadderConfig,
    pub generator: GeneratorConfig,
    pub psi: PsiKind,
    pub noise_scale: f64,
    pub kernel: KernelKind,
    pub metric: PseudoMetric,
    pub radius: RadiusSchedule,
    pub bandwidth: BandwidthSchedule,
    pub small_ball_model: PowerLawModel,
    pub covering_cap: Option<usize>,
}

impl RateSection {
    pub fn build(&self) -> funlat::Result<(RateLadderConfig, MixingMode)> {
        Ok((
            RateLadderConfig {
                ladder: self.ladder.build()?,
                generator: self.generator.build()?,
                psi: build_psi(&self.psi),
                noise_scale: self.noise_scale,
                kernel: build_kernel(self.kernel),
                metric: self.metric,
                radius: self.radius,
                bandwidth: self.bandwidth,
                small_ball_model: self.small_ball_model,
                covering_cap: self.covering_cap.unwrap_or(funlat::hilbert::DEFAULT_CENTER_CAP),
            },
            self.mode,
        ))
    }
}
