//! Command-line workbench for dephasing-noise spectroscopy.
//!
//! Exit codes are a stable contract: 0 success, 2 validation error,
//! 3 partial scan, 4 fit or statistical-validation failure, 1 I/O trouble.

mod config;
mod output;

use clap::{Parser, Subcommand};
use config::{FitConfig, Resolved, RunConfig};
use noisespec_core::*;
use output::{json_with_meta, write_csv, write_text, Meta};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("scan incomplete: {rejected} of {total} spacings rejected (see diagnostics)")]
    PartialScan { rejected: usize, total: usize },
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("validation verdict FAIL: {0}")]
    VerdictFail(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::PartialScan { .. } => 3,
            CliError::FitFailure(_) | CliError::VerdictFail(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Parser)]
#[command(
    name = "noisespec",
    version,
    about = "Dephasing-noise spectroscopy workbench: filter functions, coherence decay, decay-time scans, and spectrum reconstruction"
)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the harmonic cutoff L.
    #[arg(long, global = true)]
    harmonics: Option<usize>,
    /// Proceed even when the spacing grid leaves the usable frequency window.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the filter function |f̃_t(ω)|² of the configured sequence.
    Filter,
    /// Simulate a coherence decay curve for the configured family and noise.
    Coherence,
    /// Compare Monte Carlo coherence estimates against the spectral integral.
    McValidate,
    /// Measure decay times over the configured spacing grid.
    T2scan,
    /// Reconstruct the noise spectrum from a scan CSV.
    Reconstruct {
        /// Scan CSV (`tau,n,t2l,t2l_stderr`).
        scan: PathBuf,
        /// Model family shortcut (`white` or `lorentzian`); band-limited
        /// families need the config file.
        #[arg(long)]
        model: Option<String>,
    },
    /// Usable frequency window (π/T2SE, π/τ_p) and per-spacing flags.
    Bounds {
        #[arg(long)]
        t2se: Option<f64>,
        #[arg(long)]
        tau_p: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| invalid(format!("cannot read config {}: {e}", p.display())))?;
            let cfg: RunConfig = serde_json::from_str(&text)
                .map_err(|e| invalid(format!("config {}: {e}", p.display())))?;
            if let Some(s) = &cfg.spectrum {
                s.validate().map_err(|e| invalid(format!("spectrum: {e}")))?;
            }
            Ok(cfg)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli.config)?;
    let resolved = Resolved {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        harmonics: cli
            .harmonics
            .or(cfg.fit.as_ref().and_then(|f| f.harmonics))
            .unwrap_or(DEFAULT_HARMONICS),
        out_dir: cli
            .out
            .as_ref()
            .map(|p| p.display().to_string())
            .or(cfg.out_dir.clone())
            .unwrap_or_else(|| ".".into()),
        config: cfg,
    };
    let meta = Meta {
        version: env!("CARGO_PKG_VERSION"),
        config_hash: resolved.hash_hex(),
        seed: resolved.seed,
    };
    let out_dir = PathBuf::from(&resolved.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    match &cli.cmd {
        Command::Filter => cmd_filter(&resolved, &meta, &out_dir),
        Command::Coherence => cmd_coherence(&resolved, &meta, &out_dir),
        Command::McValidate => cmd_mc_validate(&resolved, &meta, &out_dir),
        Command::T2scan => cmd_t2scan(&resolved, &meta, &out_dir, cli.force),
        Command::Reconstruct { scan, model } => {
            cmd_reconstruct(&resolved, &meta, &out_dir, scan, model.as_deref())
        }
        Command::Bounds { t2se, tau_p } => cmd_bounds(&resolved, &meta, &out_dir, *t2se, *tau_p),
    }
}

fn require_sequence(r: &Resolved) -> Result<PulseSequence, CliError> {
    let fam = r
        .config
        .sequence
        .as_ref()
        .ok_or_else(|| invalid("config field `sequence` is required"))?;
    fam.build().map_err(|e| invalid(format!("sequence: {e}")))
}

/// Noise description: exactly one of `spectrum` or `spin_bath`.
fn require_source(r: &Resolved) -> Result<NoiseSource, CliError> {
    match (&r.config.spectrum, &r.config.spin_bath) {
        (Some(s), None) => {
            s.validate().map_err(|e| invalid(format!("spectrum: {e}")))?;
            Ok(NoiseSource::Spectrum(s.clone()))
        }
        (None, Some(modes)) => Ok(NoiseSource::SpinBath(
            SpinBath::new(modes.clone()).map_err(|e| invalid(format!("spin_bath: {e}")))?,
        )),
        (Some(_), Some(_)) => Err(invalid("give either `spectrum` or `spin_bath`, not both")),
        (None, None) => Err(invalid("config needs a `spectrum` or a `spin_bath`")),
    }
}

fn coherence_options(r: &Resolved) -> CoherenceOptions {
    CoherenceOptions {
        abs_tol: r.config.quad_abs_tol.unwrap_or(1e-8),
        ..CoherenceOptions::default()
    }
}

fn cmd_filter(r: &Resolved, meta: &Meta, out_dir: &Path) -> Result<(), CliError> {
    let seq = require_sequence(r)?;
    let grid = r
        .config
        .omega_grid
        .as_ref()
        .ok_or_else(|| invalid("config field `omega_grid` is required"))?;
    if grid.points == 0
        || !grid.max.is_finite()
        || grid.max <= grid.min
        || grid.min.is_nan()
        || grid.min < 0.0
    {
        return Err(invalid("omega_grid needs points >= 1 and 0 <= min < max"));
    }
    let mut rows = Vec::with_capacity(grid.points);
    for i in 0..grid.points {
        let f = if grid.points == 1 {
            0.0
        } else {
            i as f64 / (grid.points - 1) as f64
        };
        let omega = grid.min + (grid.max - grid.min) * f;
        let sample = FilterSample::evaluate(&seq, omega);
        rows.push(vec![sample.omega, sample.ff]);
    }
    write_csv(&out_dir.join("filter.csv"), meta, "omega,ff", &rows)?;
    println!("filter.csv: {} rows", rows.len());
    Ok(())
}

fn cmd_coherence(r: &Resolved, meta: &Meta, out_dir: &Path) -> Result<(), CliError> {
    let fam = r
        .config
        .sequence
        .as_ref()
        .ok_or_else(|| invalid("config field `sequence` is required"))?;
    let source = require_source(r)?;
    let n_list = r
        .config
        .n_list
        .as_ref()
        .ok_or_else(|| invalid("config field `n_list` is required"))?;
    let curve = coherence_curve(fam, &source, n_list, &coherence_options(r))
        .map_err(|e| invalid(format!("coherence: {e}")))?;
    let rows: Vec<Vec<f64>> = curve.points.iter().map(|p| vec![p.t, p.w, p.chi]).collect();
    write_csv(&out_dir.join("coherence.csv"), meta, "t,W,chi", &rows)?;
    println!("coherence.csv: {} points ({})", rows.len(), curve.protocol);
    Ok(())
}

#[derive(Serialize)]
struct McCase {
    family: String,
    tau: f64,
    n: usize,
    w_analytic: f64,
    w_hat: f64,
    stderr: f64,
    z: f64,
}

#[derive(Serialize)]
struct McReport {
    cases: Vec<McCase>,
    pass_fraction: f64,
    verdict: String,
    params: OuProcessParams,
}

fn cmd_mc_validate(r: &Resolved, meta: &Meta, out_dir: &Path) -> Result<(), CliError> {
    let mc = r
        .config
        .mc
        .as_ref()
        .ok_or_else(|| invalid("config field `mc` is required"))?;
    let params = OuProcessParams {
        sigma2: mc.sigma2,
        tau_c: mc.tau_c,
        dt: mc.dt,
        n_traj: mc.n_traj,
        seed: r.seed,
    };
    params
        .validate()
        .map_err(|e| invalid(format!("mc: {e}")))?;
    let default_suite = vec![
        SequenceFamily::SpinEcho { tau: mc.tau_c },
        SequenceFamily::Cpmg { tau: 0.5 * mc.tau_c, n: 8 },
        SequenceFamily::Cpmg { tau: 0.25 * mc.tau_c, n: 32 },
    ];
    let suite = r.config.mc_suite.clone().unwrap_or(default_suite);
    if suite.is_empty() {
        return Err(invalid("mc_suite must not be empty"));
    }
    let spectrum = params.spectrum();
    let opts = coherence_options(r);
    let mut cases = Vec::with_capacity(suite.len());
    let mut passed = 0usize;
    for fam in &suite {
        let seq = fam.build().map_err(|e| invalid(format!("mc_suite: {e}")))?;
        let analytic = coherence_integral(&seq, &spectrum, &opts)
            .map_err(|e| invalid(format!("analytic route: {e}")))?;
        let est = mc_coherence(&seq, &params).map_err(|e| invalid(format!("mc: {e}")))?;
        let z = (est.w_hat - analytic) / est.stderr;
        if z.abs() <= 3.0 {
            passed += 1;
        }
        cases.push(McCase {
            family: fam.kind_name().into(),
            tau: fam.equidistant().map(|(t, _)| t).unwrap_or(f64::NAN),
            n: seq.pulse_count(),
            w_analytic: analytic,
            w_hat: est.w_hat,
            stderr: est.stderr,
            z,
        });
    }
    let pass_fraction = passed as f64 / cases.len() as f64;
    let verdict = if pass_fraction >= 0.95 { "PASS" } else { "FAIL" };
    let report = McReport {
        cases,
        pass_fraction,
        verdict: verdict.into(),
        params,
    };
    write_text(
        &out_dir.join("mc_validate.json"),
        &json_with_meta(meta, &report),
    )?;
    println!("mc_validate.json: verdict {verdict} ({pass_fraction:.2} pass fraction)");
    if verdict == "FAIL" {
        return Err(CliError::VerdictFail(format!(
            "{:.0}% of cases within 3 standard errors",
            pass_fraction * 100.0
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ScanRowDiag {
    tau: f64,
    status: String,
    out_of_range: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t2l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t2l_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual_rms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reject_reason: Option<String>,
}

#[derive(Serialize)]
struct ScanDiagnostics {
    bounds: Option<(f64, f64)>,
    forced: bool,
    rows: Vec<ScanRowDiag>,
}

fn cmd_t2scan(r: &Resolved, meta: &Meta, out_dir: &Path, force: bool) -> Result<(), CliError> {
    let source = require_source(r)?;
    let grid = r
        .config
        .tau_grid
        .as_ref()
        .ok_or_else(|| invalid("config field `tau_grid` is required"))?;
    let taus = grid.values().map_err(invalid)?;
    let base_family = r
        .config
        .sequence
        .clone()
        .unwrap_or(SequenceFamily::Cpmg { tau: 1.0, n: 2 });

    // usable window from the echo decay time and the pulse width
    let t2_se = r.config.t2_se.or_else(|| match &source {
        NoiseSource::Spectrum(s) => {
            let s0 = s.eval(0.0);
            (s0 > 0.0).then(|| 2.0 / s0)
        }
        NoiseSource::SpinBath(_) => None,
    });
    let bounds = match t2_se {
        Some(t2) => {
            let tau_p = r.config.pulse_duration.unwrap_or(1e-6 * t2);
            Some(frequency_bounds(t2, tau_p).map_err(|e| invalid(format!("bounds: {e}")))?)
        }
        None => None,
    };
    let flags: Vec<bool> = taus
        .iter()
        .map(|&tau| {
            bounds
                .map(|(lo, hi)| {
                    let omega = std::f64::consts::PI / (2.0 * tau);
                    omega < lo || omega > hi
                })
                .unwrap_or(false)
        })
        .collect();
    if flags.iter().any(|&f| f) && !force {
        return Err(invalid(
            "tau grid leaves the usable frequency window; rerun with --force to proceed",
        ));
    }

    let policy = MeasurePolicy {
        window: r.config.window.unwrap_or_default(),
        stability_rel_tol: r.config.stability_rel_tol.unwrap_or(0.01),
        ..MeasurePolicy::default()
    };
    let opts = coherence_options(r);
    let mut entries = Vec::new();
    let mut diags = Vec::new();
    for (&tau, &flagged) in taus.iter().zip(&flags) {
        let fam = match &base_family {
            SequenceFamily::Apcp { .. } => SequenceFamily::Apcp { tau, n: 2 },
            _ => SequenceFamily::Cpmg { tau, n: 2 },
        };
        match measure_t2l(&fam, &source, &policy, &opts) {
            Ok((est, n_used)) => {
                diags.push(ScanRowDiag {
                    tau,
                    status: "accepted".into(),
                    out_of_range: flagged,
                    n_used: Some(n_used),
                    t2l: Some(est.t2),
                    t2l_stderr: Some(est.stderr_t2),
                    residual_rms: Some(est.residual_rms),
                    reject_reason: None,
                });
                entries.push(ScanEntry {
                    tau,
                    t2l: est,
                    n_used,
                });
            }
            Err(e) => diags.push(ScanRowDiag {
                tau,
                status: "rejected".into(),
                out_of_range: flagged,
                n_used: None,
                t2l: None,
                t2l_stderr: None,
                residual_rms: None,
                reject_reason: Some(e.to_string()),
            }),
        }
    }
    let rejected = diags.iter().filter(|d| d.status == "rejected").count();
    let scan = T2Scan::new(entries).map_err(|e| invalid(format!("scan assembly: {e}")))?;
    let mut csv = String::new();
    for line in scan.to_csv_string().lines() {
        csv.push_str(line);
        csv.push('\n');
    }
    write_text(
        &out_dir.join("t2scan.csv"),
        &format!("{}{}", meta.csv_header(), csv),
    )?;
    let diagnostics = ScanDiagnostics {
        bounds,
        forced: force,
        rows: diags,
    };
    write_text(
        &out_dir.join("t2scan_diagnostics.json"),
        &json_with_meta(meta, &diagnostics),
    )?;
    println!(
        "t2scan.csv: {} accepted, {} rejected of {} spacings",
        taus.len() - rejected,
        rejected,
        taus.len()
    );
    if rejected > 0 {
        return Err(CliError::PartialScan {
            rejected,
            total: taus.len(),
        });
    }
    Ok(())
}

fn cmd_reconstruct(
    r: &Resolved,
    meta: &Meta,
    out_dir: &Path,
    scan_path: &Path,
    model_flag: Option<&str>,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(scan_path)
        .map_err(|e| invalid(format!("cannot read scan {}: {e}", scan_path.display())))?;
    let scan = T2Scan::from_csv_str(&text).map_err(|e| invalid(format!("scan: {e}")))?;
    let model = match model_flag {
        Some("white") => ModelFamily::White,
        Some("lorentzian") => ModelFamily::Lorentzian,
        Some(other) => {
            return Err(invalid(format!(
                "unknown --model `{other}` (band-limited families go in the config file)"
            )))
        }
        None => {
            r.config
                .fit
                .as_ref()
                .map(|f: &FitConfig| f.model)
                .ok_or_else(|| invalid("give --model or a `fit.model` config entry"))?
        }
    };
    let defaults = FitOptions::default();
    let fit_cfg = r.config.fit.as_ref();
    let opts = FitOptions {
        harmonics: r.harmonics,
        n_starts: fit_cfg.and_then(|f| f.n_starts).unwrap_or(defaults.n_starts),
        seed: r.seed,
        max_iters: fit_cfg.and_then(|f| f.max_iters).unwrap_or(defaults.max_iters),
        bounds: None,
        max_rel_residual: fit_cfg
            .and_then(|f| f.max_rel_residual)
            .unwrap_or(defaults.max_rel_residual),
    };
    let result = match fit_spectrum(&scan, model, &opts) {
        Ok(res) => res,
        Err(FitError::FitFailure { starts, residual }) => {
            return Err(CliError::FitFailure(format!(
                "all {starts} starts above the residual gate; best relative residual {residual:.3e}"
            )));
        }
        Err(e) => return Err(invalid(format!("fit: {e}"))),
    };
    write_text(
        &out_dir.join("reconstruction.json"),
        &json_with_meta(meta, &result),
    )?;
    println!(
        "reconstruction.json: {:?} params {:?} (rel residual {:.3e})",
        result.model, result.params, result.rel_residual
    );
    Ok(())
}

#[derive(Serialize)]
struct BoundsReport {
    t2_se: f64,
    tau_p: f64,
    omega_lo: f64,
    omega_hi: f64,
    /// Per-spacing out-of-range flags for the configured tau grid, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    flagged: Option<Vec<(f64, bool)>>,
}

fn cmd_bounds(
    r: &Resolved,
    meta: &Meta,
    out_dir: &Path,
    t2se_flag: Option<f64>,
    tau_p_flag: Option<f64>,
) -> Result<(), CliError> {
    let t2_se = t2se_flag
        .or(r.config.t2_se)
        .or_else(|| {
            r.config
                .spectrum
                .as_ref()
                .map(|s| s.eval(0.0))
                .filter(|&s0| s0 > 0.0)
                .map(|s0| 2.0 / s0)
        })
        .ok_or_else(|| invalid("give --t2se, a `t2_se` config entry, or a spectrum"))?;
    let tau_p = tau_p_flag
        .or(r.config.pulse_duration)
        .ok_or_else(|| invalid("give --tau-p or a `pulse_duration` config entry"))?;
    let (omega_lo, omega_hi) =
        frequency_bounds(t2_se, tau_p).map_err(|e| invalid(format!("{e}")))?;
    let flagged = r.config.tau_grid.as_ref().map(|grid| {
        grid.values().map(|taus| {
            taus.iter()
                .map(|&tau| {
                    let omega = std::f64::consts::PI / (2.0 * tau);
                    (tau, omega < omega_lo || omega > omega_hi)
                })
                .collect::<Vec<_>>()
        })
    });
    let flagged = match flagged {
        Some(Ok(v)) => Some(v),
        Some(Err(e)) => return Err(invalid(e)),
        None => None,
    };
    let report = BoundsReport {
        t2_se,
        tau_p,
        omega_lo,
        omega_hi,
        flagged,
    };
    write_text(&out_dir.join("bounds.json"), &json_with_meta(meta, &report))?;
    println!("bounds.json: omega in [{omega_lo:.6}, {omega_hi:.6}] rad/s");
    Ok(())
}
