//! The `fou2` command line.
//!
//! Every subcommand validates the whole configuration before computing,
//! prints a JSON summary on stdout and, with `--out-dir`, writes plot-ready
//! CSV/JSON files (atomically, one set per Hurst index).
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure (with a
//! JSON diagnostic on stderr).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytic::{b_t_analytic, sigma_const, ConstantsReport, ModelParams, QuadratureSpec};
use crate::chaos::{diagnostics_csv, lemma_tables, validate_horizons, ChaosSetup, Psi2Variant, ResolutionPolicy};
use crate::error::{Error, Result};
use crate::gram::cache::write_atomic;
use crate::gram::{factorize, factorize_circulant, GramFactor};
use crate::mc::{kolmogorov_distance, rate_regression, run as run_mc, samples_csv, KsReport, RateFit, Route};

#[derive(Debug, Parser)]
#[command(name = "fou2", version, about = "Drift-estimator laboratory for the second-kind fractional OU process")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// σ, ρ, ∫F and b_T for each T
    Constants,
    /// Normalizing-sequence and contraction diagnostics and log-log slopes
    Lemmas,
    /// ψ₁, ψ₂, ψ₃ per T
    Psi,
    /// Monte Carlo samples and Kolmogorov distances per T
    Simulate,
    /// Kolmogorov distance per T and its fitted rate
    BerryEsseen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorChoice {
    Cholesky,
    Circulant,
}

#[derive(Debug, Clone, Default, Args)]
struct Flags {
    /// key = value file; flags given on the command line win
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// comma-separated Hurst indices
    #[arg(long, global = true)]
    hurst: Option<String>,
    /// comma-separated horizons
    #[arg(long = "t-list", global = true)]
    t_list: Option<String>,
    #[arg(long = "cells-per-unit", global = true)]
    cells_per_unit: Option<f64>,
    /// upper bound on the number of grid cells
    #[arg(long = "max-cells", global = true)]
    max_cells: Option<usize>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long = "out-dir", global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long = "psi2-variant", global = true)]
    psi2_variant: Option<String>,
    #[arg(long = "rel-tol", global = true)]
    rel_tol: Option<f64>,
    #[arg(long = "abs-tol", global = true)]
    abs_tol: Option<f64>,
    #[arg(long, value_enum, global = true)]
    factor: Option<FactorChoice>,
    /// run Monte Carlo on one thread
    #[arg(long, global = true)]
    serial: bool,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub hurst: Vec<f64>,
    pub t_list: Vec<f64>,
    pub policy: ResolutionPolicy,
    pub n_samples: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub psi2_variant: Psi2Variant,
    pub factor: FactorChoice,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            hurst: vec![0.6, 0.75, 0.9],
            t_list: vec![5.0, 10.0, 20.0, 40.0],
            policy: ResolutionPolicy::default(),
            n_samples: 100_000,
            seed: 42,
            out_dir: None,
            rel_tol: QuadratureSpec::DEFAULT_REL_TOL,
            abs_tol: QuadratureSpec::DEFAULT_ABS_TOL,
            psi2_variant: Psi2Variant::Printed,
            factor: FactorChoice::Cholesky,
            parallel: true,
        }
    }
}

fn parse_list(name: &'static str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(name, format!("`{}` is not a number", t.trim())))
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(name: &'static str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(name, format!("cannot parse `{}`", s.trim())))
}

impl RunConfig {
    /// Apply `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid("config", format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Set one setting by name (underscores and dashes are interchangeable).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.replace('-', "_").as_str() {
            "alpha" => self.alpha = parse_num("alpha", value)?,
            "hurst" => self.hurst = parse_list("hurst", value)?,
            "t_list" => self.t_list = parse_list("t_list", value)?,
            "cells_per_unit" => self.policy.cells_per_unit = parse_num("cells_per_unit", value)?,
            "max_cells" => self.policy.cap = parse_num("max_cells", value)?,
            "samples" => self.n_samples = parse_num("samples", value)?,
            "seed" => self.seed = parse_num("seed", value)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "psi2_variant" => self.psi2_variant = value.parse()?,
            "rel_tol" => self.rel_tol = parse_num("rel_tol", value)?,
            "abs_tol" => self.abs_tol = parse_num("abs_tol", value)?,
            "factor" => {
                self.factor = FactorChoice::from_str(value, true)
                    .map_err(|_| Error::invalid("factor", format!("expected cholesky or circulant, got `{value}`")))?
            }
            "parallel" => self.parallel = parse_num("parallel", value)?,
            other => return Err(Error::invalid("config", format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn apply_flags(&mut self, f: &Flags) -> Result<()> {
        if let Some(path) = &f.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::invalid("config", format!("cannot read {}: {e}", path.display())))?;
            self.apply_file(&text)?;
        }
        if let Some(v) = f.alpha {
            self.alpha = v;
        }
        if let Some(v) = &f.hurst {
            self.hurst = parse_list("hurst", v)?;
        }
        if let Some(v) = &f.t_list {
            self.t_list = parse_list("t_list", v)?;
        }
        if let Some(v) = f.cells_per_unit {
            self.policy.cells_per_unit = v;
        }
        if let Some(v) = f.max_cells {
            self.policy.cap = v;
        }
        if let Some(v) = f.samples {
            self.n_samples = v;
        }
        if let Some(v) = f.seed {
            self.seed = v;
        }
        if let Some(v) = &f.out_dir {
            self.out_dir = Some(v.clone());
        }
        if let Some(v) = &f.psi2_variant {
            self.psi2_variant = v.parse()?;
        }
        if let Some(v) = f.rel_tol {
            self.rel_tol = v;
        }
        if let Some(v) = f.abs_tol {
            self.abs_tol = v;
        }
        if let Some(v) = f.factor {
            self.factor = v;
        }
        if f.serial {
            self.parallel = false;
        }
        Ok(())
    }

    /// Model parameters for every requested Hurst index, validated.
    pub fn params(&self) -> Result<Vec<ModelParams>> {
        if self.hurst.is_empty() {
            return Err(Error::invalid("hurst", "need at least one Hurst index"));
        }
        self.hurst.iter().map(|&h| ModelParams::new(self.alpha, h)).collect()
    }

    pub fn quadrature(&self, p: &ModelParams) -> QuadratureSpec {
        QuadratureSpec::with_tolerances(p, self.rel_tol, self.abs_tol)
    }

    pub fn validate(&self) -> Result<()> {
        for p in self.params()? {
            self.quadrature(&p).validate()?;
        }
        validate_horizons(&self.t_list)?;
        self.policy.validate()?;
        Ok(())
    }

    fn validate_sampling(&self) -> Result<()> {
        if self.n_samples < crate::mc::MIN_KS_SAMPLES {
            return Err(Error::TooFewSamples {
                required: crate::mc::MIN_KS_SAMPLES,
                got: self.n_samples,
            });
        }
        Ok(())
    }
}

fn suffix(h: f64) -> String {
    format!("H{h}")
}

fn write_out(cfg: &RunConfig, name: &str, contents: &str) -> Result<()> {
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join(name), contents.as_bytes())?;
    }
    Ok(())
}

fn pretty(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// σ, ρ, ∫F and `b_T` per Hurst index.
pub fn cmd_constants(cfg: &RunConfig) -> Result<Value> {
    cfg.validate()?;
    let mut out = Vec::new();
    for p in cfg.params()? {
        let q = cfg.quadrature(&p);
        let k = sigma_const(&p, &q)?;
        let b_t = cfg
            .t_list
            .iter()
            .map(|&t| Ok(json!({ "T": t, "b_T": b_t_analytic(t, &p, &q)? })))
            .collect::<Result<Vec<_>>>()?;
        let entry = json!({
            "alpha": p.alpha(),
            "hurst": p.hurst(),
            "sigma": k.sigma,
            "rho": k.rho,
            "triple_integral": k.triple_integral,
            "estimated_error": k.estimated_error,
            "b_T": b_t,
        });
        write_out(cfg, &format!("constants_{}.json", suffix(p.hurst())), &pretty(&entry)?)?;
        out.push(entry);
    }
    Ok(Value::Array(out))
}

/// Diagnostics table (CSV) and slope summary (JSON) per Hurst index.
pub fn cmd_lemmas(cfg: &RunConfig) -> Result<Value> {
    cfg.validate()?;
    let mut out = Vec::new();
    for p in cfg.params()? {
        let table = lemma_tables(&cfg.t_list, &p, &cfg.policy, &cfg.quadrature(&p), cfg.psi2_variant)?;
        let tag = suffix(p.hurst());
        write_out(cfg, &format!("lemmas_{tag}.csv"), &diagnostics_csv(&table.rows))?;
        let summary = json!({
            "alpha": p.alpha(),
            "hurst": p.hurst(),
            "constants": table.constants,
            "slopes": table.slopes,
        });
        write_out(cfg, &format!("lemmas_{tag}_slopes.json"), &pretty(&summary)?)?;
        out.push(json!({
            "alpha": p.alpha(),
            "hurst": p.hurst(),
            "constants": table.constants,
            "rows": table.rows,
            "slopes": table.slopes,
        }));
    }
    Ok(Value::Array(out))
}

/// ψ functionals per horizon and Hurst index.
pub fn cmd_psi(cfg: &RunConfig) -> Result<Value> {
    cfg.validate()?;
    let mut out = Vec::new();
    for p in cfg.params()? {
        let table = lemma_tables(&cfg.t_list, &p, &cfg.policy, &cfg.quadrature(&p), cfg.psi2_variant)?;
        let mut csv = String::from("T,n,b_T,psi1,psi2,psi2_variant,psi3\n");
        let mut rows = Vec::new();
        for r in &table.rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.horizon, r.n, r.b_t, r.psi1, r.psi2, r.psi2_variant, r.psi3
            ));
            rows.push(json!({
                "T": r.horizon, "n": r.n, "b_T": r.b_t,
                "psi1": r.psi1, "psi2": r.psi2, "psi2_variant": r.psi2_variant, "psi3": r.psi3,
            }));
        }
        write_out(cfg, &format!("psi_{}.csv", suffix(p.hurst())), &csv)?;
        out.push(json!({
            "alpha": p.alpha(),
            "hurst": p.hurst(),
            "psi2_variant": cfg.psi2_variant,
            "rows": rows,
        }));
    }
    Ok(Value::Array(out))
}

fn make_factor(cfg: &RunConfig, setup: &ChaosSetup) -> Result<GramFactor> {
    match cfg.factor {
        FactorChoice::Cholesky => factorize(&setup.gram),
        FactorChoice::Circulant => factorize_circulant(&setup.gram),
    }
}

fn prepare(cfg: &RunConfig, p: &ModelParams, k: &ConstantsReport, t: f64) -> Result<(ChaosSetup, GramFactor)> {
    let q = cfg.quadrature(p);
    let setup = ChaosSetup::new(cfg.policy.grid(t)?, p, k, &q)?;
    let factor = make_factor(cfg, &setup)?;
    Ok((setup, factor))
}

/// Samples (CSV) and Kolmogorov distance per horizon and Hurst index.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Value> {
    cfg.validate()?;
    cfg.validate_sampling()?;
    let mut out = Vec::new();
    for p in cfg.params()? {
        let k = sigma_const(&p, &cfg.quadrature(&p))?;
        let mut entries = Vec::new();
        for &t in &cfg.t_list {
            let (setup, factor) = prepare(cfg, &p, &k, t)?;
            let mc = run_mc(&setup, &factor, Route::Chaos, cfg.seed, cfg.n_samples, cfg.parallel)?;
            let ks = kolmogorov_distance(&mc.samples)?;
            write_out(cfg, &format!("samples_{}_T{t}.csv", suffix(p.hurst())), &samples_csv(&mc))?;
            entries.push(json!({
                "T": t,
                "n": setup.grid.n(),
                "b_T": setup.b_t,
                "factor": factor.method(),
                "circulant_fallback": factor.fell_back(),
                "ks": ks,
            }));
        }
        let entry = json!({
            "alpha": p.alpha(),
            "hurst": p.hurst(),
            "seed": cfg.seed,
            "n_samples": cfg.n_samples,
            "entries": entries,
        });
        write_out(cfg, &format!("simulate_{}.json", suffix(p.hurst())), &pretty(&entry)?)?;
        out.push(entry);
    }
    Ok(Value::Array(out))
}

/// One horizon of a Berry-Esseen sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerryEsseenEntry {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n: usize,
    #[serde(rename = "b_T")]
    pub b_t: f64,
    pub ks: KsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedAt {
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerryEsseenReport {
    pub alpha: f64,
    pub hurst: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub sigma: Option<f64>,
    pub rho: Option<f64>,
    pub entries: Vec<BerryEsseenEntry>,
    pub rate_fit: Option<RateFit>,
    pub failed_at: Option<FailedAt>,
}

/// The sweep for one Hurst index. On failure the entries computed so far
/// are kept and `failed_at` names the stage; the error is returned too.
pub fn berry_esseen_report(cfg: &RunConfig, p: &ModelParams) -> (BerryEsseenReport, Option<Error>) {
    let mut report = BerryEsseenReport {
        alpha: p.alpha(),
        hurst: p.hurst(),
        seed: cfg.seed,
        n_samples: cfg.n_samples,
        sigma: None,
        rho: None,
        entries: Vec::new(),
        rate_fit: None,
        failed_at: None,
    };
    let fail = |mut r: BerryEsseenReport, horizon: Option<f64>, e: Error| {
        r.failed_at = Some(FailedAt {
            horizon,
            error: e.to_string(),
        });
        (r, Some(e))
    };
    let k = match sigma_const(p, &cfg.quadrature(p)) {
        Ok(k) => k,
        Err(e) => return fail(report, None, e),
    };
    report.sigma = Some(k.sigma);
    report.rho = Some(k.rho);
    for &t in &cfg.t_list {
        let step = prepare(cfg, p, &k, t).and_then(|(setup, factor)| {
            let mc = run_mc(&setup, &factor, Route::Chaos, cfg.seed, cfg.n_samples, cfg.parallel)?;
            Ok(BerryEsseenEntry {
                horizon: t,
                n: setup.grid.n(),
                b_t: setup.b_t,
                ks: kolmogorov_distance(&mc.samples)?,
            })
        });
        match step {
            Ok(entry) => report.entries.push(entry),
            Err(e) => return fail(report, Some(t), e),
        }
    }
    let pairs: Vec<(f64, f64)> = report.entries.iter().map(|e| (e.horizon, e.ks.ks_distance)).collect();
    match rate_regression(&pairs) {
        Ok(fit) => report.rate_fit = Some(fit),
        Err(e) => return fail(report, None, e),
    }
    (report, None)
}

/// Kolmogorov distances per horizon and their fitted rate.
pub fn cmd_berry_esseen(cfg: &RunConfig) -> Result<Value> {
    cfg.validate()?;
    cfg.validate_sampling()?;
    if cfg.t_list.len() < 3 {
        return Err(Error::invalid("t_list", "a rate fit needs at least three horizons"));
    }
    let mut out = Vec::new();
    for p in cfg.params()? {
        let (report, err) = berry_esseen_report(cfg, &p);
        write_out(cfg, &format!("berry_esseen_{}.json", suffix(p.hurst())), &pretty(&report)?)?;
        if let Some(e) = err {
            return Err(e);
        }
        out.push(serde_json::to_value(&report)?);
    }
    Ok(Value::Array(out))
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidParameter { .. } => "invalid_parameter",
        Error::Domain { .. } => "domain",
        Error::Singularity { .. } => "singularity",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::Convergence { .. } => "convergence",
        Error::Truncation { .. } => "truncation",
        Error::Factorization { .. } => "factorization",
        Error::DegenerateSample { .. } => "degenerate_sample",
        Error::TooFewSamples { .. } => "too_few_samples",
        Error::Cache(_) => "cache",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

/// Resolve flags (and the optional config file) into a [`RunConfig`].
pub fn resolve<I, T>(args: I) -> std::result::Result<(String, RunConfig), clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let name = match cli.command {
        Command::Constants => "constants",
        Command::Lemmas => "lemmas",
        Command::Psi => "psi",
        Command::Simulate => "simulate",
        Command::BerryEsseen => "berry-esseen",
    };
    let mut cfg = RunConfig::default();
    if let Err(e) = cfg.apply_flags(&cli.flags) {
        return Err(clap::Error::raw(clap::error::ErrorKind::ValueValidation, format!("{e}\n")));
    }
    Ok((name.to_string(), cfg))
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (name, cfg) = match resolve(args) {
        Ok(v) => v,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match name.as_str() {
        "constants" => cmd_constants(&cfg),
        "lemmas" => cmd_lemmas(&cfg),
        "psi" => cmd_psi(&cfg),
        "simulate" => cmd_simulate(&cfg),
        _ => cmd_berry_esseen(&cfg),
    };
    match result {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            0
        }
        Err(e) if e.is_validation() => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            let diag = json!({ "status": "error", "command": name, "kind": error_kind(&e), "message": e.to_string() });
            eprintln!("{}", serde_json::to_string_pretty(&diag).unwrap_or_default());
            2
        }
    }
}

/// Path of a per-Hurst output file, as written by the subcommands.
pub fn output_path(dir: &Path, stem: &str, hurst: f64, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_{}.{ext}", suffix(hurst)))
}
