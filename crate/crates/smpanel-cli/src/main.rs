//! `smpanel`: command-line front end for multistate models of panel data.
//!
//! Exit status: 0 on success, 2 for invalid input or configuration, 3 for
//! numerical failures, 4 when an algorithm does not converge.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use smpanel::inference::{self, Estimates, Refit};
use smpanel::io::{self, DataInfo, FitResult, ModelSpec, SubjectDiagnostics};
use smpanel::markov::{self, MarkovFit};
use smpanel::mcem::{self, McemConfig, McemFit, RunOptions};
use smpanel::{par, scenario, validate_subject, Error, Result, SemiMarkovModel, Subject};

#[derive(Parser)]
#[command(name = "smpanel", version, about = "Semi-Markov multistate models for panel data")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SMPANEL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to panel data.
    Fit(FitArgs),
    /// Simulate panel data from a built-in scenario.
    Simulate(SimulateArgs),
    /// Fit, then refit under Bayesian bootstrap weights.
    Bootstrap(BootstrapArgs),
    /// Compare fits of the same data by AIC.
    Compare(CompareArgs),
    /// Check a data file against a model without fitting.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct DataModel {
    /// Panel data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Model TOML.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct Tuning {
    #[arg(long)]
    seed: Option<u64>,
    /// Initial target ESS per subject.
    #[arg(long)]
    ess_target: Option<f64>,
    /// Factor applied to the target ESS when an ascent is not confirmed.
    #[arg(long)]
    ess_factor: Option<f64>,
    /// Level of the ascent test.
    #[arg(long)]
    alpha: Option<f64>,
    /// Level of the stopping test.
    #[arg(long)]
    gamma: Option<f64>,
    /// Stopping tolerance on the change in Q (default 1e-3 per subject).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: DataModel,
    #[command(flatten)]
    tuning: Tuning,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: String,
    /// Number of subjects (defaults to the scenario's study size).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    input: DataModel,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, default_value_t = 200)]
    boot_reps: usize,
    /// Covariate whose values define resampling strata.
    #[arg(long)]
    strata: Option<String>,
    /// Confidence level of the percentile intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Fit files written by `smpanel fit`.
    #[arg(required = true, num_args = 2..)]
    fits: Vec<PathBuf>,
    /// Optional JSON copy of the table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    input: DataModel,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        par::set_threads(n);
    }
    let out = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Compare(a) => compare(a),
        Command::Validate(a) => validate(a),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Loaded {
    spec: ModelSpec,
    subjects: Vec<Subject>,
    data: DataInfo,
}

fn load(input: &DataModel) -> Result<Loaded> {
    let spec = ModelSpec::from_file(&input.model)?;
    let space = spec.space()?;
    let bytes = fs::read(&input.data)?;
    let subjects = io::read_panel(bytes.as_slice(), space.n_states())?;
    let findings: Vec<String> = subjects
        .iter()
        .flat_map(|s| validate_subject(s, &space))
        .map(|f| f.to_string())
        .collect();
    if !findings.is_empty() {
        for f in &findings {
            eprintln!("{f}");
        }
        return Err(Error::Validation(format!("{} problem(s) in {}", findings.len(), input.data.display())));
    }
    let data = DataInfo {
        file: input
            .data
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: io::fingerprint(&bytes),
        n_subjects: subjects.len(),
        n_records: subjects.iter().map(|s| s.records.len()).sum(),
    };
    Ok(Loaded { spec, subjects, data })
}

fn config(spec: &ModelSpec, t: &Tuning) -> Result<McemConfig> {
    let mut c = spec.mcem.clone().unwrap_or_default();
    if let Some(v) = t.seed {
        c.seed = v;
    }
    if let Some(v) = t.ess_target {
        c.ess_target = v;
    }
    if let Some(v) = t.ess_factor {
        c.ess_factor = v;
    }
    if let Some(v) = t.alpha {
        c.alpha = v;
    }
    if let Some(v) = t.gamma {
        c.gamma = v;
    }
    if let Some(v) = t.tol {
        c.tol = Some(v);
    }
    if let Some(v) = t.max_iter {
        c.max_iter = v;
    }
    c.validate()?;
    Ok(c)
}

/// A completed fit with what the bootstrap needs to refit it.
enum Fitted {
    Direct {
        model: SemiMarkovModel,
        subjects: Vec<Subject>,
        fit: MarkovFit,
    },
    Mcem {
        model: SemiMarkovModel,
        surrogate: MarkovFit,
        fit: McemFit,
    },
}

struct Outcome {
    result: FitResult,
    fitted: Fitted,
    trace: Vec<String>,
    diagnostics: serde_json::Value,
}

fn run_fit(loaded: &Loaded, cfg: &McemConfig) -> Result<Outcome> {
    let spec = &loaded.spec;
    let subjects = &loaded.subjects;
    let markov_model = spec.markov_model()?;
    let surrogate = markov::fit_markov_mle(&markov_model, subjects, None)?;

    if let Some(exp) = spec.phase_type_expansion()? {
        let latent: Vec<Subject> = subjects.iter().map(|s| exp.latent_subject(s)).collect();
        let init = exp.init_from_markov(&markov_model, surrogate.surrogate.theta());
        let fit = markov::fit_markov_mle(&exp.latent, &latent, Some(&init))?;
        let est = inference::summarize_direct(&fit, &latent)?;
        return Ok(direct_outcome(loaded, cfg, est, exp.latent.clone(), latent, fit));
    }
    if spec.transitions.iter().all(|t| t.family == io::Family::Exponential) {
        let est = inference::summarize_direct(&surrogate, subjects)?;
        return Ok(direct_outcome(loaded, cfg, est, markov_model, subjects.clone(), surrogate));
    }

    let resolved = spec.resolve_knots(&surrogate.surrogate, subjects, cfg.seed)?;
    let model = resolved.build()?;
    let fit = mcem::run_mcem(&model, &surrogate.surrogate, subjects, cfg, RunOptions::default())?;
    let est = inference::summarize_mcem(&model, &fit, &surrogate.surrogate)?;
    let trace = fit
        .trace
        .iter()
        .map(serde_json::to_string)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let per_subject: Vec<SubjectDiagnostics> = fit
        .pool
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| SubjectDiagnostics {
            id: fit.pool.subject_id(i).to_string(),
            paths: s.paths.len(),
            ess: s.ess,
            khat: s.khat.value(),
        })
        .collect();
    let high_khat = per_subject.iter().filter(|d| d.khat.is_some_and(|k| k > 0.7)).count();
    let diagnostics = json!({
        "method": "mcem",
        "surrogate_loglik": surrogate.loglik,
        "non_pd_information": est.non_pd,
        "subjects_khat_above_0.7": high_khat,
        "subjects": per_subject,
    });
    Ok(Outcome {
        result: FitResult {
            model: resolved,
            config: cfg.clone(),
            data: loaded.data.clone(),
            estimates: est,
        },
        fitted: Fitted::Mcem {
            model,
            surrogate,
            fit,
        },
        trace,
        diagnostics,
    })
}

fn direct_outcome(
    loaded: &Loaded,
    cfg: &McemConfig,
    est: Estimates,
    model: SemiMarkovModel,
    subjects: Vec<Subject>,
    fit: MarkovFit,
) -> Outcome {
    let trace = vec![json!({
        "method": "direct",
        "iterations": fit.iterations,
        "loglik": fit.loglik,
        "converged": fit.converged,
        "message": fit.message,
    })
    .to_string()];
    let diagnostics = json!({
        "method": "direct",
        "non_pd_information": est.non_pd,
        "boundary": fit.boundary,
    });
    Outcome {
        result: FitResult {
            model: loaded.spec.clone(),
            config: cfg.clone(),
            data: loaded.data.clone(),
            estimates: est,
        },
        fitted: Fitted::Direct { model, subjects, fit },
        trace,
        diagnostics,
    }
}

fn write_outputs(dir: &Path, o: &Outcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("fit.json"), o.result.to_json()? + "\n")?;
    let mut trace = o.trace.join("\n");
    trace.push('\n');
    fs::write(dir.join("trace.jsonl"), trace)?;
    fs::write(
        dir.join("diagnostics.json"),
        serde_json::to_string_pretty(&o.diagnostics)? + "\n",
    )?;
    Ok(())
}

fn print_estimates(e: &Estimates) {
    let method = match e.method {
        inference::Method::Direct => "direct",
        inference::Method::Mcem => "mcem",
    };
    println!("method: {method}");
    println!("subjects: {}  parameters: {}", e.n_subjects, e.n_params);
    println!("{:<28} {:>12} {:>12} {:>12}", "parameter", "estimate", "std.err", "natural");
    for i in 0..e.n_params {
        let se = e
            .se
            .as_ref()
            .map_or_else(|| "NA".to_string(), |s| format!("{:.5}", s[i]));
        println!("{:<28} {:>12.5} {:>12} {:>12.5}", e.names[i], e.theta[i], se, e.natural[i]);
    }
    println!("log-likelihood: {:.4} (MC s.e. {:.4})", e.loglik, e.loglik_se);
    println!("AIC: {:.4} (MC s.e. {:.4})  BIC: {:.4}", e.aic, e.aic_se, e.bic);
    if e.non_pd {
        println!("warning: observed information is not positive definite; standard errors unavailable");
    }
    if !e.boundary.is_empty() {
        println!("warning: parameters at the boundary: {}", e.boundary.join(", "));
    }
}

fn fit(a: FitArgs) -> Result<()> {
    let loaded = load(&a.input)?;
    let cfg = config(&loaded.spec, &a.tuning)?;
    let outcome = run_fit(&loaded, &cfg)?;
    write_outputs(&a.out, &outcome)?;
    print_estimates(&outcome.result.estimates);
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let s = scenario::lookup(&a.scenario)?;
    let n = a.n.unwrap_or(s.default_n);
    if n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let sims = s.simulate(n, a.seed)?;
    let subjects: Vec<Subject> = sims.into_iter().map(|x| x.subject).collect();
    let file = fs::File::create(&a.out)?;
    io::write_panel(std::io::BufWriter::new(file), &subjects)?;
    let records: usize = subjects.iter().map(|s| s.records.len()).sum();
    println!("scenario: {} ({})", s.name, s.description);
    println!("subjects: {n}  records: {records}  seed: {}", a.seed);
    Ok(())
}

fn bootstrap(a: BootstrapArgs) -> Result<()> {
    if a.boot_reps < 1 {
        return Err(Error::Config("B must be ≥ 1".into()));
    }
    let loaded = load(&a.input)?;
    let cfg = config(&loaded.spec, &a.tuning)?;
    let strata = match &a.strata {
        Some(name) => Some(
            loaded
                .subjects
                .iter()
                .map(|s| {
                    s.covariates
                        .get(name)
                        .map(|v| format!("{v:?}"))
                        .ok_or_else(|| Error::Config(format!("stratum column '{name}' is not in the data")))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let outcome = run_fit(&loaded, &cfg)?;
    let (boot, model) = match &outcome.fitted {
        Fitted::Direct { model, subjects, fit } => (
            inference::bayesian_bootstrap(model, subjects, &Refit::Direct { fit }, a.boot_reps, strata.as_deref(), cfg.seed)?,
            model,
        ),
        Fitted::Mcem { model, surrogate, fit } => (
            inference::bayesian_bootstrap(
                model,
                &loaded.subjects,
                &Refit::Mcem {
                    surrogate: &surrogate.surrogate,
                    fit,
                    config: &cfg,
                },
                a.boot_reps,
                strata.as_deref(),
                cfg.seed,
            )?,
            model,
        ),
    };
    write_outputs(&a.out, &outcome)?;
    let names = model.param_names();
    let intervals: Vec<serde_json::Value> = (0..names.len())
        .map(|j| {
            let ci = boot.percentile_interval(j, a.level);
            json!({"parameter": names[j], "lower": ci.map(|c| c.0), "upper": ci.map(|c| c.1)})
        })
        .collect();
    let report = json!({
        "reps": boot.reps,
        "failed": boot.failed,
        "failures": boot.failures,
        "level": a.level,
        "strata": a.strata,
        "intervals": intervals,
        "draws": boot.draws,
    });
    fs::write(a.out.join("bootstrap.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    print_estimates(&outcome.result.estimates);
    println!("bootstrap: {} replicates, {} failed", boot.reps, boot.failed);
    println!("{:<28} {:>12} {:>12}", "parameter", "lower", "upper");
    for (j, n) in names.iter().enumerate() {
        if let Some((lo, hi)) = boot.percentile_interval(j, a.level) {
            println!("{n:<28} {lo:>12.5} {hi:>12.5}");
        }
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let fits = a
        .fits
        .iter()
        .map(|p| FitResult::from_json(&fs::read_to_string(p)?))
        .collect::<Result<Vec<_>>>()?;
    let candidates: Vec<inference::Candidate<'_>> = a
        .fits
        .iter()
        .zip(&fits)
        .map(|(p, f)| inference::Candidate {
            name: p.display().to_string(),
            estimates: &f.estimates,
            data: f.data.sha256.clone(),
        })
        .collect();
    let rows = inference::compare(&candidates)?;
    println!(
        "{:<32} {:>7} {:>4} {:>12} {:>8} {:>10} {:>8}  note",
        "fit", "method", "p", "AIC", "s.e.", "dAIC", "s.e."
    );
    for r in &rows {
        let method = match r.method {
            inference::Method::Direct => "direct",
            inference::Method::Mcem => "mcem",
        };
        println!(
            "{:<32} {:>7} {:>4} {:>12.3} {:>8.3} {:>10.3} {:>8.3}  {}",
            r.name,
            method,
            r.n_params,
            r.aic,
            r.aic_se,
            r.delta_aic,
            r.delta_aic_se,
            if r.indistinguishable { "within 2 s.e." } else { "" }
        );
    }
    if let Some(out) = a.out {
        fs::write(out, serde_json::to_string_pretty(&rows)? + "\n")?;
    }
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let loaded = load(&a.input)?;
    // Covariate lookups do not depend on the hazard family.
    let markov = loaded.spec.markov_model()?;
    for s in &loaded.subjects {
        markov.design(&s.covariates)?;
    }
    let records: usize = loaded.subjects.iter().map(|s| s.records.len()).sum();
    println!(
        "ok: {} subjects, {records} records, {} states",
        loaded.subjects.len(),
        loaded.spec.states.len()
    );
    Ok(())
}
