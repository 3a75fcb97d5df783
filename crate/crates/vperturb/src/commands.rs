//! The five subcommands: `train`, `diagnose`, `bound`, `verify`, `compare`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vperturb_core::bound::{
    comparable_bound, curvature_mismatch_penalty, general_bound, smoothness_penalty, synchronized_bound, BoundInputs,
    BoundReport, BoundVariant, PenaltyControl,
};
use vperturb_core::proxies::{estimate_proxies, CheckpointRecord, ProxyReport, ReportMetadata, TerminalProxies};
use vperturb_core::schedule::{replay, ReferenceMode, ReferenceSpec, ScheduleConfig, ScheduleSpec};
use vperturb_core::train::{run_sgd, Experiment, Model, Subset, Trajectory};
use vperturb_core::verify::{run_suite, SuiteOptions, SuiteScale, VerificationReport};

use crate::config::{sha256_hex, Config, Format};
use crate::error::{CliError, CliResult};
use crate::format::{fmt_f64, to_json_pretty};
use crate::trajectory::{read_trajectory, write_trajectory};

/// Environment variable capping the worker threads of `compare`.
pub const THREADS_ENV: &str = "VPERTURB_THREADS";

/// Global flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub config: Option<PathBuf>,
    pub seed_override: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Files written by a command plus text for standard output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub stdout: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub sgd: u64,
    pub dataset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxies: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ghost: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public: Option<u64>,
}

/// Reproducibility chain embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub trajectory_hash: String,
    pub seeds: Seeds,
}

impl Provenance {
    fn comment_lines(&self) -> String {
        let s = &self.seeds;
        let opt = |x: Option<u64>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
        format!(
            "# tool_version: {}\n# config_hash: {}\n# trajectory_hash: {}\n# seeds: sgd={} dataset={} proxies={} ghost={} public={}\n",
            self.tool_version,
            self.config_hash,
            self.trajectory_hash,
            s.sgd,
            s.dataset,
            opt(s.proxies),
            opt(s.ghost),
            opt(s.public)
        )
    }
}

/// Diagnose output: resolved configuration, terminal proxies and every
/// checkpoint record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub provenance: Provenance,
    pub config: Config,
    #[serde(flatten)]
    pub terminal: TerminalProxies,
    pub metadata: ReportMetadata,
    pub checkpoints: Vec<CheckpointRecord>,
}

impl Summary {
    pub fn report(&self) -> ProxyReport {
        ProxyReport {
            checkpoints: self.checkpoints.clone(),
            terminal: self.terminal.clone(),
            metadata: self.metadata.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOutput {
    pub provenance: Provenance,
    pub inputs: BoundInputs,
    pub report: BoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub tool_version: String,
    pub all_passed: bool,
    pub report: VerificationReport,
}

/// One row of the schedule comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub schedule: String,
    pub reference: String,
    pub certificate: String,
    pub trajectory_hash: String,
    /// `Σ_t 2η_t² (V̂_t + Γ̂_t)`.
    pub info_sum: f64,
    /// `Σ_t Ĉ_t`.
    pub cov_sum: f64,
    #[serde(rename = "R_hat")]
    pub r_hat: Option<f64>,
    #[serde(rename = "B_hat")]
    pub b_hat: f64,
    #[serde(rename = "B_hat_sharp")]
    pub b_hat_sharp: f64,
    pub tr_sigma_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOutput {
    pub provenance: Provenance,
    pub schedules: Vec<ScheduleConfig>,
    pub rows: Vec<CompareRow>,
}

impl Context {
    fn load_config(&self) -> CliResult<Config> {
        let path = self.config.as_ref().ok_or_else(|| CliError::Config("--config is required".to_string()))?;
        Config::load(path)?.resolve(self.seed_override)
    }

    fn format(&self, cfg: &Config) -> Format {
        self.format.or(cfg.output.format).unwrap_or(Format::Csv)
    }

    fn out_dir(&self, cfg: Option<&Config>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.and_then(|c| c.output.dir.clone()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    std::fs::write(path, contents).map_err(CliError::io(path))
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(CliError::io(path))
}

/// Runs SGD and writes the JSONL trajectory.
pub fn train(ctx: &Context) -> CliResult<Outcome> {
    let cfg = ctx.load_config()?;
    let trajectory = run_sgd(&cfg.run_config()?)?;
    let text = write_trajectory(&trajectory, Some(&cfg.hash()?))?;
    let path = cfg.output_path(ctx.out.as_deref(), "trajectory.jsonl");
    write_file(&path, &text)?;
    Ok(Outcome {
        stdout: format!(
            "wrote {} ({} steps, sha256 {})\n",
            path.display(),
            trajectory.steps.len(),
            sha256_hex(text.as_bytes())
        ),
        written: vec![path],
    })
}

fn load_trajectory(ctx: &Context, cfg: &Config, path: Option<&Path>) -> CliResult<(Trajectory, String)> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_path(ctx.out.as_deref(), "trajectory.jsonl"));
    let text = read_file(&path)?;
    let trajectory = read_trajectory(&text)?;
    let d = Model::from_spec(&cfg.model()?)?.dim();
    if trajectory.dim() != d {
        return Err(CliError::Data(format!(
            "trajectory dimension {} does not match the configured model dimension {d}",
            trajectory.dim()
        )));
    }
    Ok((trajectory, sha256_hex(text.as_bytes())))
}

struct Diagnosis {
    report: ProxyReport,
    reference: ReferenceMode,
}

fn diagnose_schedule(
    cfg: &Config,
    exp: &Experiment,
    trajectory: &Trajectory,
    schedule: &ScheduleConfig,
) -> CliResult<Diagnosis> {
    let spec = ScheduleSpec::from_config(schedule, trajectory.dim())?;
    let mode = cfg.reference_mode(&spec)?;
    let reference = ReferenceSpec::certify(mode.clone(), &spec)?;
    let ghost = match mode {
        ReferenceMode::Ghost => Some(run_sgd(&trajectory.meta.run_config().ghost(cfg.ghost_seed()))?),
        _ => None,
    };
    let options = cfg.proxy_options(trajectory.horizon())?;
    let report = estimate_proxies(exp, trajectory, &spec, &reference, ghost.as_ref(), &options)?;
    Ok(Diagnosis { report, reference: mode })
}

fn provenance(cfg: &Config, trajectory: &Trajectory, hash: &str, modes: &[&ReferenceMode]) -> CliResult<Provenance> {
    Ok(Provenance {
        tool_version: crate::TOOL_VERSION.to_string(),
        config_hash: cfg.hash()?,
        trajectory_hash: hash.to_string(),
        seeds: Seeds {
            sgd: trajectory.meta.seed,
            dataset: trajectory.meta.dataset.seed,
            proxies: Some(cfg.proxy_options(trajectory.horizon())?.seed),
            ghost: modes.iter().any(|m| matches!(m, ReferenceMode::Ghost)).then(|| cfg.ghost_seed()),
            public: modes.iter().find_map(|m| match m {
                ReferenceMode::SynchronizedPublic { seed } => Some(*seed),
                _ => None,
            }),
        },
    })
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_text(prov: &Provenance, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::Data(format!("csv: {e}"));
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(&row).map_err(to_err)?;
    }
    let body = w.into_inner().map_err(|e| CliError::Data(format!("csv: {e}")))?;
    let body = String::from_utf8(body).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(prov.comment_lines() + &body)
}

pub const PROXY_COLUMNS: [&str; 8] = ["t", "V_hat", "V_mode", "Gamma_hat", "C_hat", "tr_sigma_t", "tr_sigma_1t", "eta"];

fn proxy_csv(prov: &Provenance, records: &[CheckpointRecord]) -> CliResult<String> {
    let rows = records
        .iter()
        .map(|r| {
            vec![
                r.t.to_string(),
                fmt_f64(r.v_hat),
                r.v_mode.name().to_string(),
                opt_f64(r.gamma_hat),
                fmt_f64(r.c_hat),
                fmt_f64(r.tr_sigma_t),
                fmt_f64(r.tr_sigma_1t),
                fmt_f64(r.eta),
            ]
        })
        .collect();
    csv_text(prov, &PROXY_COLUMNS, rows)
}

/// Runs the proxy estimators on a recorded trajectory; writes the
/// per-checkpoint table and the JSON summary.
pub fn diagnose(ctx: &Context, trajectory_path: Option<&Path>) -> CliResult<Outcome> {
    let cfg = ctx.load_config()?;
    let (trajectory, hash) = load_trajectory(ctx, &cfg, trajectory_path)?;
    let exp = Experiment::from_meta(&trajectory.meta)?;
    let diagnosis = diagnose_schedule(&cfg, &exp, &trajectory, cfg.schedule()?)?;
    let prov = provenance(&cfg, &trajectory, &hash, &[&diagnosis.reference])?;
    let report = diagnosis.report;
    let table_path = match ctx.format(&cfg) {
        Format::Csv => {
            let path = cfg.output_path(ctx.out.as_deref(), "proxies.csv");
            write_file(&path, &proxy_csv(&prov, &report.checkpoints)?)?;
            path
        }
        Format::Json => {
            let path = cfg.output_path(ctx.out.as_deref(), "proxies.json");
            let body = serde_json::json!({ "provenance": &prov, "checkpoints": &report.checkpoints });
            write_file(&path, &to_json_pretty(&body)?)?;
            path
        }
    };
    let summary = Summary {
        provenance: prov,
        config: cfg.clone(),
        terminal: report.terminal.clone(),
        metadata: report.metadata.clone(),
        checkpoints: report.checkpoints.clone(),
    };
    let summary_path = cfg.output_path(ctx.out.as_deref(), "summary.json");
    write_file(&summary_path, &to_json_pretty(&summary)?)?;
    Ok(Outcome {
        stdout: format!(
            "B_hat = {}  ({} checkpoints, reference {}, certificate {})\n",
            fmt_f64(report.terminal.b_hat),
            report.checkpoints.len(),
            report.metadata.reference_mode,
            report.metadata.certificate
        ),
        written: vec![table_path, summary_path],
    })
}

/// Optional flags of the `bound` command; unset values come from the
/// configuration's `[bound]` section.
#[derive(Debug, Clone, Default)]
pub struct BoundFlags {
    pub summary: Option<PathBuf>,
    pub variant: Option<BoundVariant>,
    pub penalty: Option<PenaltyControl>,
    pub r: Option<f64>,
    pub mu: Option<f64>,
    pub rho: Option<f64>,
    /// Trajectory for the curvature penalty.
    pub trajectory: Option<PathBuf>,
}

/// Assembles a bound from a diagnose summary.
pub fn bound(ctx: &Context, flags: &BoundFlags) -> CliResult<Outcome> {
    let given = match &ctx.config {
        Some(_) => Some(ctx.load_config()?),
        None => None,
    };
    let summary_path = match (&flags.summary, &given) {
        (Some(p), _) => p.clone(),
        (None, Some(cfg)) => cfg.output_path(ctx.out.as_deref(), "summary.json"),
        (None, None) => return Err(CliError::Config("bound needs --summary or --config".to_string())),
    };
    let summary: Summary = serde_json::from_str(&read_file(&summary_path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", summary_path.display())))?;
    let cfg = given.unwrap_or_else(|| summary.config.clone());
    let r = flags.r.or(cfg.bound.r).ok_or_else(|| CliError::Config("missing required key bound.R".to_string()))?;
    let variant = flags.variant.or(cfg.bound.variant).unwrap_or(BoundVariant::General);
    let control = flags.penalty.or(cfg.bound.penalty_control).unwrap_or(PenaltyControl::Raw);
    let report = summary.report();
    let mut inputs = BoundInputs::from_proxy_report(&report, r);
    inputs.kappa = Some(report.checkpoints.iter().map(|c| c.kappa).fold(1.0, f64::max));
    match control {
        PenaltyControl::Raw => {}
        PenaltyControl::Smoothness => {
            let mu = flags
                .mu
                .or(cfg.bound.mu)
                .ok_or_else(|| CliError::Config("missing required key bound.mu".to_string()))?;
            inputs = inputs.with_penalty(control, smoothness_penalty(mu, report.terminal.tr_sigma_final)?);
        }
        PenaltyControl::Curvature => {
            let rho = flags
                .rho
                .or(cfg.bound.rho)
                .ok_or_else(|| CliError::Config("missing required key bound.rho".to_string()))?;
            let path = flags
                .trajectory
                .clone()
                .ok_or_else(|| CliError::Config("the curvature penalty needs --trajectory".to_string()))?;
            let trajectory = read_trajectory(&read_file(&path)?)?;
            inputs = inputs.with_penalty(control, curvature_penalty(&cfg, &trajectory, rho)?);
        }
    }
    let result = match variant {
        BoundVariant::General => general_bound(&inputs)?,
        BoundVariant::Synchronized => synchronized_bound(&inputs)?,
        BoundVariant::Comparable => comparable_bound(&inputs)?,
    };
    let output = BoundOutput { provenance: summary.provenance, inputs, report: result };
    let text = to_json_pretty(&output)?;
    let path = cfg.output_path(ctx.out.as_deref(), "bound.json");
    write_file(&path, &text)?;
    Ok(Outcome { written: vec![path], stdout: text })
}

fn curvature_penalty(cfg: &Config, trajectory: &Trajectory, rho: f64) -> CliResult<f64> {
    let exp = Experiment::from_meta(&trajectory.meta)?;
    let spec = ScheduleSpec::from_config(cfg.schedule()?, trajectory.dim())?;
    let state = replay(&spec, trajectory, trajectory.horizon() - 1)?;
    let w = trajectory.final_iterate();
    let (train, eval) = (&exp.data.train, &exp.data.eval);
    Ok(curvature_mismatch_penalty(
        |v| exp.model.hvp(&w, v, train, Subset::All),
        |v| exp.model.hvp(&w, v, eval, Subset::All),
        state.accumulated(),
        rho,
        rho,
    )?)
}

/// Runs the property suite; fails with exit code 4 if any margin is negative.
pub fn verify(ctx: &Context, seed: Option<u64>, quick: bool) -> CliResult<Outcome> {
    let options = SuiteOptions {
        seed: seed.or(ctx.seed_override).unwrap_or(0),
        scale: if quick { SuiteScale::Quick } else { SuiteScale::Full },
    };
    let report = run_suite(&options);
    let output =
        VerifyOutput { tool_version: crate::TOOL_VERSION.to_string(), all_passed: report.all_passed(), report };
    let text = to_json_pretty(&output)?;
    let path = ctx.out_dir(None).join("verify.json");
    write_file(&path, &text)?;
    if !output.all_passed {
        let failed: Vec<_> = output.report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(CliError::Verification(format!("{} (report in {})", failed.join(", "), path.display())));
    }
    Ok(Outcome { written: vec![path], stdout: text })
}

fn thread_cap() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Replays one trajectory under every `[[compare]]` schedule.
pub fn compare(ctx: &Context, trajectory_path: Option<&Path>) -> CliResult<Outcome> {
    let cfg = ctx.load_config()?;
    if cfg.compare.is_empty() {
        return Err(CliError::Config("compare needs at least one [[compare]] schedule table".to_string()));
    }
    let (trajectory, hash) = load_trajectory(ctx, &cfg, trajectory_path)?;
    let exp = Experiment::from_meta(&trajectory.meta)?;
    let threads = thread_cap()?.min(cfg.compare.len());
    let mut results: Vec<Option<CliResult<(CompareRow, ReferenceMode)>>> =
        (0..cfg.compare.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|k| {
                let (cfg, exp, trajectory, hash) = (&cfg, &exp, &trajectory, &hash);
                scope.spawn(move || {
                    (k..cfg.compare.len())
                        .step_by(threads)
                        .map(|i| (i, compare_row(cfg, exp, trajectory, &cfg.compare[i], hash)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, row) in h.join().expect("compare worker panicked") {
                results[i] = Some(row);
            }
        }
    });
    let (rows, modes): (Vec<_>, Vec<_>) = results
        .into_iter()
        .map(|r| r.expect("every schedule is assigned"))
        .collect::<CliResult<Vec<_>>>()?
        .into_iter()
        .unzip();
    let prov = provenance(&cfg, &trajectory, &hash, &modes.iter().collect::<Vec<_>>())?;
    let (path, text) = match ctx.format(&cfg) {
        Format::Csv => {
            let header = [
                "schedule",
                "reference",
                "certificate",
                "trajectory_hash",
                "info_sum",
                "cov_sum",
                "R_hat",
                "B_hat",
                "B_hat_sharp",
                "tr_sigma_final",
            ];
            let table = rows
                .iter()
                .map(|r| {
                    vec![
                        r.schedule.clone(),
                        r.reference.clone(),
                        r.certificate.clone(),
                        r.trajectory_hash.clone(),
                        fmt_f64(r.info_sum),
                        fmt_f64(r.cov_sum),
                        opt_f64(r.r_hat),
                        fmt_f64(r.b_hat),
                        fmt_f64(r.b_hat_sharp),
                        fmt_f64(r.tr_sigma_final),
                    ]
                })
                .collect();
            (cfg.output_path(ctx.out.as_deref(), "compare.csv"), csv_text(&prov, &header, table)?)
        }
        Format::Json => {
            let out = CompareOutput { provenance: prov, schedules: cfg.compare.clone(), rows };
            (cfg.output_path(ctx.out.as_deref(), "compare.json"), to_json_pretty(&out)?)
        }
    };
    write_file(&path, &text)?;
    Ok(Outcome { stdout: format!("wrote {}\n", path.display()), written: vec![path] })
}

fn compare_row(
    cfg: &Config,
    exp: &Experiment,
    trajectory: &Trajectory,
    schedule: &ScheduleConfig,
    hash: &str,
) -> CliResult<(CompareRow, ReferenceMode)> {
    let d = diagnose_schedule(cfg, exp, trajectory, schedule)?;
    let r = &d.report;
    let info_sum = r.checkpoints.iter().map(|c| 2.0 * c.eta * c.eta * (c.v_hat + c.gamma_hat.unwrap_or(0.0))).sum();
    let row = CompareRow {
        schedule: schedule.kind.clone(),
        reference: r.metadata.reference_mode.clone(),
        certificate: r.metadata.certificate.clone(),
        trajectory_hash: hash.to_string(),
        info_sum,
        cov_sum: r.checkpoints.iter().map(|c| c.c_hat).sum(),
        r_hat: r.terminal.r_hat,
        b_hat: r.terminal.b_hat,
        b_hat_sharp: r.terminal.b_hat_sharp,
        tr_sigma_final: r.terminal.tr_sigma_final,
    };
    Ok((row, d.reference))
}
