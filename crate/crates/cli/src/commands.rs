//! One driver per subcommand. Shared shape: resolve the config, build the
//! library specs (failures here are configuration errors, exit 1), create the
//! run directory with its resolved-config snapshot, execute on the requested
//! worker pool (failures are runtime errors, exit 2), write artifacts, then
//! enforce the optional time budget.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use funlat::acceptance::{run_all, Suite};
use funlat::experiments::{
    emit_laplace_report, emit_rate_report, emit_tail_report, run_laplace_ladder, run_rate_ladder,
    run_tail_ladder, Emitted, ReportMeta,
};
use funlat::fields;
use funlat::hilbert::{build_covering, FunctionalElement, LipschitzBall, DEFAULT_CENTER_CAP};
use funlat::lattice::{block_cover, cantor_partition};
use funlat::regression::{estimate_small_ball, sup_error, EstimatorConfig, SupErrorReport};

use crate::config::{
    self, build_kernel, build_psi, EstimateSection, LaplaceSection, RateSection, Resolved,
    SimulateSection, SmallballSection, TailSection,
};
use crate::sample_io;
use crate::{say, CheckArgs, CliError, PartitionArgs, RunArgs, SuiteArg, EXIT_CHECK_FAILED, EXIT_OK};

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::runtime("io", format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::runtime("serde", e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

fn announce(dir: &Path, written: &[PathBuf]) {
    say(format!("run directory: {}", dir.display()));
    for path in written {
        say(format!("wrote {}", path.display()));
    }
}

fn verdict_line(verdict: &funlat::experiments::DominanceVerdict) -> String {
    let state = if verdict.pass { "holds" } else { "VIOLATED" };
    let mut line = format!(
        "dominance {state}: {} held-out cells judged, {} violations, max excess ratio {:.4}",
        verdict.checked, verdict.violations, verdict.max_excess_ratio
    );
    if !verdict.note.is_empty() {
        let _ = write!(line, " ({})", verdict.note);
    }
    line
}

pub fn simulate(args: &RunArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let r: Resolved<SimulateSection> = config::load("simulate", args)?;
    let mut generator_config = r.section.generator.clone();
    if r.seed_explicit {
        generator_config.seed = r.seed;
    }
    let generator = generator_config.build().map_err(CliError::from_build)?;
    let psi = build_psi(&r.section.psi);
    let cube =
        funlat::lattice::LatticeCube::new(r.section.cube.clone()).map_err(CliError::from_build)?;
    let noise_scale = r.section.noise_scale;

    let dir = config::prepare_run_dir(&r)?;
    let sample = config::with_pool(r.threads, || {
        fields::generate(&generator, &psi, &cube, noise_scale)
    })?
    .map_err(CliError::from_run)?;
    let meta = ReportMeta::new(r.hash.clone(), generator.seed);
    let csv = sample_io::sample_csv(&sample, &meta).map_err(CliError::from_run)?;
    let path = dir.join("sample.csv");
    write_file(&path, &csv)?;
    announce(&dir, std::slice::from_ref(&path));
    say(format!(
        "{} sites, {} coefficients per function",
        sample.cube.num_sites(),
        sample.spec.basis.j_max
    ));
    config::enforce_budget(r.budget_seconds, started)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EstimateSummary<'a> {
    covering_centers: usize,
    covering_radius: f64,
    covering_delta: f64,
    sup_error: &'a SupErrorReport,
}

pub fn estimate(args: &RunArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let r: Resolved<EstimateSection> = config::load("estimate", args)?;
    let s = &r.section;
    let mut estimator =
        EstimatorConfig::new(build_kernel(s.kernel), s.bandwidth, s.metric, s.small_ball.clone())
            .map_err(CliError::from_build)?;
    if let Some(min_denominator) = s.min_denominator {
        estimator =
            estimator.with_min_denominator(min_denominator).map_err(CliError::from_build)?;
    }
    let ball = LipschitzBall::new(s.covering.radius).map_err(CliError::from_build)?;
    let cap = s.covering.cap.unwrap_or(DEFAULT_CENTER_CAP);

    let dir = config::prepare_run_dir(&r)?;
    let sample = sample_io::read_sample_csv(&s.sample).map_err(CliError::from_run)?;
    let delta = s.covering.delta;
    let (covering, report) = config::with_pool(r.threads, || -> funlat::Result<_> {
        let covering = build_covering(&ball, delta, &sample.spec.basis, cap)?;
        let report = sup_error(&estimator, &sample, &covering, &sample.psi)?;
        Ok((covering, report))
    })?
    .map_err(CliError::from_run)?;

    let meta = ReportMeta::new(r.hash.clone(), r.seed);
    let mut csv = format!(
        "# schema: funlat.estimate.v1\n# version: {}\n# config_hash: {}\n# seed: {}\n\
         center,f_hat,psi_error,underflow\n",
        meta.version, meta.config_hash, meta.seed
    );
    for c in &report.per_center {
        let error = c.error.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{}", c.index, c.f_hat, error, c.underflow as u8);
    }
    let csv_path = dir.join("errors.csv");
    write_file(&csv_path, &csv)?;
    let summary = Emitted {
        meta,
        report: EstimateSummary {
            covering_centers: covering.centers.len(),
            covering_radius: covering.radius,
            covering_delta: covering.delta,
            sup_error: &report,
        },
    };
    let json_path = dir.join("summary.json");
    write_json(&json_path, &summary)?;
    announce(&dir, &[csv_path, json_path]);
    say(format!(
        "sup error {:.6} over {} centers ({} underflowed)",
        report.max_error, report.evaluated, report.underflow_count
    ));
    config::enforce_budget(r.budget_seconds, started)?;
    Ok(EXIT_OK)
}

pub fn smallball(args: &RunArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let r: Resolved<SmallballSection> = config::load("smallball", args)?;
    let spec = r.section.generator.build().map_err(CliError::from_build)?;
    let x = FunctionalElement::new(r.section.x.clone());
    let s = &r.section;

    let dir = config::prepare_run_dir(&r)?;
    let table = config::with_pool(r.threads, || {
        estimate_small_ball(&x, &s.h_grid, &spec, s.lattice_dim, &s.metric, s.replicates, r.seed)
    })?
    .map_err(CliError::from_run)?;

    let meta = ReportMeta::new(r.hash.clone(), r.seed);
    let mut csv = format!(
        "# schema: funlat.smallball.v1\n# version: {}\n# config_hash: {}\n# seed: {}\n\
         h,f_hat,zero_mass\n",
        meta.version, meta.config_hash, meta.seed
    );
    for ((h, f), zero) in table.h_grid.iter().zip(&table.f_hat).zip(&table.zero_mass) {
        let _ = writeln!(csv, "{h},{f},{}", *zero as u8);
    }
    let csv_path = dir.join("smallball.csv");
    write_file(&csv_path, &csv)?;
    let mut written = vec![csv_path];

    if let Some(tau) = &s.tau {
        let ratios = table.tau_hat(tau.h_ref, &tau.u_grid).map_err(CliError::from_run)?;
        let mut tau_csv = format!(
            "# schema: funlat.tau.v1\n# version: {}\n# config_hash: {}\n# seed: {}\nu,tau_hat\n",
            meta.version, meta.config_hash, meta.seed
        );
        for (u, t) in tau.u_grid.iter().zip(&ratios) {
            let _ = writeln!(tau_csv, "{u},{t}");
        }
        let tau_path = dir.join("tau.csv");
        write_file(&tau_path, &tau_csv)?;
        written.push(tau_path);
    }

    let json_path = dir.join("smallball.json");
    write_json(&json_path, &Emitted { meta, report: &table })?;
    written.push(json_path);
    announce(&dir, &written);
    config::enforce_budget(r.budget_seconds, started)?;
    Ok(EXIT_OK)
}

pub fn tail(args: &RunArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let r: Resolved<TailSection> = config::load("tail", args)?;
    let cfg = r.section.build().map_err(CliError::from_build)?;

    let dir = config::prepare_run_dir(&r)?;
    let outcome =
        config::with_pool(r.threads, || run_tail_ladder(&cfg))?.map_err(CliError::from_run)?;
    let seed = cfg.ladder.seeds.first().copied().unwrap_or(r.seed);
    let meta = ReportMeta::new(r.hash.clone(), seed);
    let mut written =
        emit_tail_report(&dir, "tail", &outcome.report, &meta, true).map_err(CliError::from_run)?;
    let outcome_path = dir.join("outcome.json");
    write_json(&outcome_path, &Emitted { meta, report: &outcome })?;
    written.push(outcome_path);
    announce(&dir, &written);
    say(verdict_line(&outcome.verdict));
    config::enforce_budget(r.budget_seconds, started)?;
    Ok(EXIT_OK)
}

pub fn laplace(args: &RunArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let r: Resolved<LaplaceSection> = config::load("laplace", args)?;
    let cfg = r.section.build().map_err(CliError::from_build)?;

    let dir = config::prepare_run_dir(&r)?;
    let outcome =
        config::with_pool(r.threads, || run_laplace_ladder(&cfg))?.map_err(CliError::from_run)?;
    let seed = cfg.ladder.seeds.first().copied().unwrap_or(r.seed);
    let meta = ReportMeta::new(r.hash.clone(), seed);
    let mut written = Vec::new();
    for (i, report) in outcome.reports.iter().enumerate() {
        let base = format!("laplace-rung{i}");
        written
            .extend(emit_laplace_report(&dir, &base, report, &meta, true).map_err(CliError::from_run)?);
    }
    let outcome_path = dir.join("outcome.json");
    write_json(&outcome_path, &Emitted { meta, report: &outcome })?;
    written.push(outcome_path);
    announce(&dir, &written);
    say(verdict_line(&outcome.verdict));
    config::enforce_budget(r.budget_seconds, started)?;
    Ok(EXIT_OK)
}

pub fn rate(args: &RunArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let r: Resolved<RateSection> = config::load("rate", args)?;
    let (cfg, mode) = r.section.build().map_err(CliError::from_build)?;

    let dir = config::prepare_run_dir(&r)?;
    let report =
        config::with_pool(r.threads, || run_rate_ladder(&cfg, mode))?.map_err(CliError::from_run)?;
    let seed = cfg.ladder.seeds.first().copied().unwrap_or(r.seed);
    let meta = ReportMeta::new(r.hash.clone(), seed);
    let written = emit_rate_report(&dir, "rate", &report, &meta, true).map_err(CliError::from_run)?;
    announce(&dir, &written);
    match &report.slope {
        Some(fit) => say(format!(
            "log-log slope {:.4} (r-squared {:.4}) over {} rungs",
            fit.slope, fit.r_squared, fit.n_points
        )),
        None => say("no slope fit: fewer than two rungs with clean medians"),
    }
    config::enforce_budget(r.budget_seconds, started)?;
    Ok(EXIT_OK)
}

fn parse_axis_list(name: &str, raw: &str, n: usize) -> Result<Vec<f64>, CliError> {
    let values: Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let values = values.map_err(|_| {
        CliError::config(
            "parse",
            format!("--{name} must be a comma-separated list of numbers, got `{raw}`"),
        )
    })?;
    if values.len() == 1 {
        return Ok(vec![values[0]; n]);
    }
    if values.len() != n {
        return Err(CliError::config(
            "invalid_parameter",
            format!("--{name} has {} entries but --N is {n}", values.len()),
        ));
    }
    Ok(values)
}

/// Console-only: prints the partition (and optional parity cover) as JSON on
/// stdout; no run directory is created.
pub fn partition(args: &PartitionArgs) -> Result<i32, CliError> {
    if args.n == 0 {
        return Err(CliError::config("invalid_parameter", "--N must be at least 1"));
    }
    let a = parse_axis_list("A", &args.a, args.n)?;
    let partition = cantor_partition(&a, args.delta, args.levels).map_err(CliError::from_build)?;
    let mut out = serde_json::json!({
        "edges": partition.edges,
        "delta": partition.delta,
        "levels": partition.levels,
        "outer": partition.outer,
        "outer_volume": partition.outer_volume(),
        "expected_outer_volume": partition.expected_outer_volume(),
        "residual_volume_by_level": partition.residual_volume_by_level,
    });
    if let Some(p_raw) = &args.p {
        let p = parse_axis_list("P", p_raw, args.n)?;
        let cover = block_cover(&a, &p).map_err(CliError::from_build)?;
        // An infinite separation (single block per class) serializes as null.
        out["cover"] = serde_json::json!({
            "block_edges": cover.block_edges,
            "classes": cover.classes.len(),
            "blocks": cover.num_blocks(),
            "total_volume": cover.total_volume(),
            "min_within_class_separation": cover.min_within_class_separation(),
        });
    }
    let text = serde_json::to_string_pretty(&out)
        .map_err(|e| CliError::runtime("serde", e.to_string()))?;
    say(text);
    Ok(EXIT_OK)
}

/// Console-only: runs the acceptance suite and reports one line per
/// criterion; any failure exits with code 3.
pub fn check(args: &CheckArgs) -> Result<i32, CliError> {
    let threads = config::resolve_threads(args.threads, None)?;
    let suite = match args.suite {
        SuiteArg::Quick => Suite::Quick,
        SuiteArg::Smoke => Suite::Smoke,
    };
    let report = config::with_pool(threads, || run_all(suite))?;
    for line in report.lines() {
        say(line);
    }
    if report.all_passed() {
        say(format!("all {} criteria passed", report.results.len()));
        Ok(EXIT_OK)
    } else {
        let failed: Vec<&str> =
            report.results.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        Err(CliError {
            code: EXIT_CHECK_FAILED,
            kind: "acceptance".into(),
            message: format!(
                "{} of {} acceptance criteria failed: {}",
                failed.len(),
                report.results.len(),
                failed.join(", ")
            ),
        })
    }
}
