//! Experiment driver: config in, CSV/JSON artifacts plus a manifest out.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use semitunnel::actions::ActionProfile;
use semitunnel::compare::{csv_number, scaling_study, Check, ComparisonReport, ComparisonRow};
use semitunnel::config::ExperimentConfig;
use semitunnel::density::find_e_star;
use semitunnel::experiment::{coherence, tdse_study, Coherence, TdseStudy};
use semitunnel::packets::{
    arrival_time, chi_gauss, chi_gauss_infinity, chi_mod, chi_superposition, classical_trajectory, packet_scale, tau_min, FieldKind,
    SuperpositionOptions,
};
use semitunnel::scattering::{solve_stationary, SolveOptions};
use semitunnel::tdse::{evolve, synthesize_initial, write_binary_snapshot, SimulationConfig};
use semitunnel::{Density, Field, Potential, Saddle, UniformGrid};

/// Variable holding the worker count for parallel sweeps.
pub const WORKERS_ENV: &str = "SEMITUNNEL_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "semitunnel", version, about = "Semiclassical tunnelling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (JSON).
    pub config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Check the potential and density against the standing hypotheses.
    Validate(Common),
    /// Action integrals and their energy derivatives across the window.
    Actions(Common),
    /// Saddle energy of alpha = G + K/2.
    Estar(Common),
    /// Stationary transmission amplitudes and connection defects.
    Transmission {
        #[command(flatten)]
        common: Common,
        /// Energies per hbar, evenly spaced over the window.
        #[arg(long, default_value_t = 21)]
        energies: usize,
    },
    /// Closed-form packets and the stationary superposition on the comparison window.
    Approx(Common),
    /// Classical trajectory at E*.
    Trajectory(Common),
    /// Reference TDSE runs with snapshots.
    Evolve {
        #[command(flatten)]
        common: Common,
        /// Write snapshots in the binary format instead of CSV.
        #[arg(long)]
        binary: bool,
    },
    /// TDSE against the closed-form packets, with pass/fail checks.
    Compare(Common),
    /// Every stage above except `evolve`, into one directory.
    Sweep(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Validate(c)
            | Command::Actions(c)
            | Command::Estar(c)
            | Command::Approx(c)
            | Command::Trajectory(c)
            | Command::Compare(c)
            | Command::Sweep(c) => c,
            Command::Transmission { common, .. } | Command::Evolve { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Actions(_) => "actions",
            Command::Estar(_) => "estar",
            Command::Transmission { .. } => "transmission",
            Command::Approx(_) => "approx",
            Command::Trajectory(_) => "trajectory",
            Command::Evolve { .. } => "evolve",
            Command::Compare(_) => "compare",
            Command::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Numeric { stage: &'static str, source: semitunnel::Error },
    #[error("acceptance failure: {0}")]
    Acceptance(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Numeric { source, .. } if source.is_config() => 1,
            CliError::Numeric { .. } => 2,
            CliError::Acceptance(_) => 3,
        }
    }
}

fn stage(name: &'static str) -> impl Fn(semitunnel::Error) -> CliError {
    move |source| CliError::Numeric { stage: name, source }
}

type CliResult<T> = Result<T, CliError>;

/// Output directory with atomic writes and a running file list for the manifest.
pub struct Output {
    dir: PathBuf,
    files: Vec<(String, String)>,
    timings: Vec<(String, f64)>,
}

impl Output {
    pub fn create(dir: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, files: Vec::new(), timings: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes to a temporary name, then renames into place.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.part"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)?;
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_owned(), hex(&Sha256::digest(bytes))));
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        self.write(name, text.as_bytes())
    }

    fn time<R>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> CliResult<R>) -> CliResult<R> {
        let start = Instant::now();
        let out = f(self);
        self.timings.push((label.to_owned(), start.elapsed().as_secs_f64()));
        out
    }

    fn finish(&mut self, run: &Run, subcommand: &str, workers: usize) -> CliResult<()> {
        let files: serde_json::Map<String, serde_json::Value> = self.files.iter().map(|(n, h)| (n.clone(), json!(h))).collect();
        let timings: serde_json::Map<String, serde_json::Value> = self.timings.iter().map(|(n, s)| (n.clone(), json!(s))).collect();
        let manifest = json!({
            "tool": "semitunnel",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": subcommand,
            "config_path": run.config_path.display().to_string(),
            "config_sha256": run.config_hash,
            "config": run.config,
            "workers": workers,
            "files": files,
            "timings_s": timings,
        });
        self.write_json("manifest.json", &manifest)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parsed config plus everything derived from it up front.
pub struct Run {
    pub config_path: PathBuf,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub model: Potential,
    pub density: Density,
}

impl Run {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config = ExperimentConfig::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?;
        let model = config.model().map_err(|e| CliError::Config(e.to_string()))?;
        let density = config.density().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self { config_path: path.to_owned(), config_hash: hex(&Sha256::digest(text.as_bytes())), config, model, density })
    }

    fn profile(&self) -> CliResult<ActionProfile<f64>> {
        ActionProfile::new(&self.model, self.density.window).map_err(stage("actions"))
    }

    fn saddle(&self, profile: &ActionProfile<f64>) -> CliResult<Saddle<f64>> {
        find_e_star(profile, &self.density).map_err(stage("density"))
    }
}

/// Worker count from [`WORKERS_ENV`], defaulting to the available cores.
pub fn workers() -> CliResult<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{WORKERS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs one subcommand; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> CliResult<()> {
    let common = command.common();
    let run = Run::load(&common.config)?;
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(&run.config.output_dir));
    let workers = workers()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = Output::create(dir)?;
    let result = pool.install(|| match command {
        Command::Validate(_) => out.time("validate", |o| validate(&run, o)),
        Command::Actions(_) => out.time("actions", |o| actions(&run, o)),
        Command::Estar(_) => out.time("estar", |o| estar(&run, o)),
        Command::Transmission { energies, .. } => out.time("transmission", |o| transmission(&run, o, *energies)),
        Command::Approx(_) => out.time("approx", |o| approx(&run, o)),
        Command::Trajectory(_) => out.time("trajectory", |o| trajectory(&run, o)),
        Command::Evolve { binary, .. } => out.time("evolve", |o| evolve_runs(&run, o, *binary)),
        Command::Compare(_) => out.time("compare", |o| compare(&run, o)),
        Command::Sweep(_) => sweep(&run, &mut out),
    });
    out.finish(&run, command.name(), workers)?;
    result
}

fn sweep(run: &Run, out: &mut Output) -> CliResult<()> {
    out.time("validate", |o| validate(run, o))?;
    out.time("actions", |o| actions(run, o))?;
    out.time("estar", |o| estar(run, o))?;
    out.time("transmission", |o| transmission(run, o, 21))?;
    out.time("trajectory", |o| trajectory(run, o))?;
    out.time("approx", |o| approx(run, o))?;
    out.time("compare", |o| compare(run, o))
}

fn validate(run: &Run, out: &mut Output) -> CliResult<()> {
    let report = run.model.verify_hypotheses(run.density.window, run.config.strip_alpha);
    let suppression: Vec<(f64, f64)> = run.config.hbar_list.iter().map(|&h| (h, run.density.edge_suppression(h))).collect();
    out.write_json("validate.json", &json!({ "hypotheses": report, "edge_suppression": suppression }))?;
    println!("hypotheses: {}", if report.all_pass() { "all pass" } else { "FAILED" });
    println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
    for (h, s) in suppression {
        println!("edge suppression at hbar = {h}: {s:.3e}");
    }
    if report.all_pass() {
        Ok(())
    } else {
        Err(CliError::Config("potential violates the standing hypotheses".into()))
    }
}

fn actions(run: &Run, out: &mut Output) -> CliResult<()> {
    let profile = run.profile()?;
    let w = run.density.window;
    let n = 41;
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let e = w.lo + w.width() * i as f64 / (n - 1) as f64;
            profile.derivatives(&run.density, e)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage("actions"))?;
    let mut csv = String::from("E,K,Kp,Kpp,omega,omegap,omegapp,rho,rhop,rhopp,alpha,alphap,alphapp,kappa,kappap,kappapp,k_plus,k_minus\n");
    for d in rows {
        let cells = [
            d.energy,
            d.agmon,
            d.agmon_prime,
            d.agmon_second,
            d.omega,
            d.omega_prime,
            d.omega_second,
            d.rho,
            d.rho_prime,
            d.rho_second,
            d.alpha,
            d.alpha_prime,
            d.alpha_second,
            d.kappa,
            d.kappa_prime,
            d.kappa_second,
            d.k_plus,
            d.k_minus,
        ];
        csv.push_str(&cells.map(csv_number).join(","));
        csv.push('\n');
    }
    out.write("actions.csv", csv.as_bytes())
}

fn estar(run: &Run, out: &mut Output) -> CliResult<()> {
    let saddle = run.saddle(&run.profile()?)?;
    println!(
        "E* = {:.10}  alpha(E*) = {:.10}  alpha''(E*) = {:.6}  k* = {:.10}",
        saddle.e_star, saddle.alpha_star, saddle.alpha_second, saddle.k_star
    );
    out.write_json("estar.json", &saddle)
}

fn transmission(run: &Run, out: &mut Output, energies: usize) -> CliResult<()> {
    let w = run.density.window;
    let n = energies.max(2);
    let jobs: Vec<(f64, f64)> =
        run.config.hbar_list.iter().flat_map(|&h| (0..n).map(move |i| (h, w.lo + w.width() * i as f64 / (n - 1) as f64))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(h, e)| {
            let sol = solve_stationary(&run.model, e, h, &SolveOptions::default())?;
            let defect = sol.connection_defect(&run.model)?;
            Ok([e, h, sol.t_amp.re, sol.t_amp.im, sol.t_amp.norm_sqr(), defect])
        })
        .collect::<Result<Vec<_>, semitunnel::Error>>()
        .map_err(stage("scattering"))?;
    let mut csv = String::from("E,hbar,re_t,im_t,abs_t2,connection_defect\n");
    for r in rows {
        csv.push_str(&r.map(csv_number).join(","));
        csv.push('\n');
    }
    out.write("transmission.csv", csv.as_bytes())
}

fn field_csv(field: &Field) -> String {
    let mut csv = String::from("x,re,im\n");
    for (x, v) in field.grid.points().zip(&field.values) {
        csv.push_str(&format!("{},{},{}\n", csv_number(x), csv_number(v.re), csv_number(v.im)));
    }
    csv
}

fn comparison_grid(run: &Run) -> CliResult<UniformGrid<f64>> {
    let (lo, hi) = run.config.evolution.compare_window;
    let dx = 0.01;
    UniformGrid::new(lo, dx, ((hi - lo) / dx).round() as usize + 1).map_err(|e| CliError::Config(e.to_string()))
}

fn approx(run: &Run, out: &mut Output) -> CliResult<()> {
    let profile = run.profile()?;
    let saddle = run.saddle(&profile)?;
    let grid = comparison_grid(run)?;
    let region = run.config.moderate;
    let t = arrival_time(&run.model, &saddle, &run.density, run.config.evolution.probe).map_err(stage("packets"))?;
    let per_hbar = run
        .config
        .hbar_list
        .par_iter()
        .map(|&h| {
            let m = &run.model;
            let d = &run.density;
            let upper = region.upper(h);
            let moderate_grid = UniformGrid::new(grid.x_min.max(1.0 + 1e-9), grid.dx, grid.n)?;
            let keep = moderate_grid.points().take_while(|x| *x < upper).count();
            let moderate_grid = UniformGrid::new(moderate_grid.x_min, grid.dx, keep)?;
            Ok(vec![
                chi_gauss(m, &saddle, d, grid, t, h, region)?,
                chi_mod(m, &saddle, d, moderate_grid, t, h, region)?,
                chi_gauss_infinity(&saddle, &profile, d, grid, t, h)?,
                chi_superposition(m, d, &saddle, grid, t, h, &SuperpositionOptions::default())?,
            ])
        })
        .collect::<Result<Vec<_>, semitunnel::Error>>()
        .map_err(stage("packets"))?;
    for (i, (h, fields)) in run.config.hbar_list.iter().zip(per_hbar).enumerate() {
        for f in fields {
            let kind = serde_json::to_value(f.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
            let stem = format!("approx_h{i}_{kind}");
            out.write(&format!("{stem}.csv"), field_csv(&f).as_bytes())?;
            out.write_json(
                &format!("{stem}.json"),
                &json!({
                    "t": f.t,
                    "hbar": h,
                    "kind": f.kind,
                    "meta": { "saddle": saddle, "probe": run.config.evolution.probe, "grid": f.grid },
                    "norms": { "l2": f.norm(), "packet_scale": packet_scale(&saddle, *h) },
                }),
            )?;
        }
    }
    Ok(())
}

fn trajectory(run: &Run, out: &mut Output) -> CliResult<()> {
    let saddle = run.saddle(&run.profile()?)?;
    let t_min = tau_min(&run.model, &saddle, &run.density).map_err(stage("packets"))?;
    let (a, b, n) = (t_min + 1.0, 100.0_f64.max(t_min + 2.0), 200);
    let points = (0..n)
        .map(|i| classical_trajectory(&run.model, &saddle, &run.density, a + (b - a) * i as f64 / (n - 1) as f64))
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage("packets"))?;
    let mut csv = String::from("t,q_t,qdot_t\n");
    for p in points {
        csv.push_str(&format!("{},{},{}\n", csv_number(p.t), csv_number(p.q), csv_number(p.qdot)));
    }
    out.write("trajectory.csv", csv.as_bytes())
}

fn evolve_runs(run: &Run, out: &mut Output, binary: bool) -> CliResult<()> {
    let profile = run.profile()?;
    let saddle = run.saddle(&profile)?;
    let opts = run.config.study_options();
    let t_probe = arrival_time(&run.model, &saddle, &run.density, opts.probe).map_err(stage("packets"))?;
    let t_final = arrival_time(&run.model, &saddle, &run.density, opts.extract_at).map_err(stage("packets"))?;
    let traces = run
        .config
        .hbar_list
        .par_iter()
        .map(|&h| {
            let cfg = SimulationConfig::auto(&run.model, &run.density, h, t_final, opts.sizing)?;
            let initial = synthesize_initial(&run.model, &run.density, &cfg)?;
            let trace = evolve(&run.model, &run.density, &initial, &cfg, &[t_probe])?;
            Ok((cfg, trace))
        })
        .collect::<Result<Vec<_>, semitunnel::Error>>()
        .map_err(stage("tdse"))?;
    for (i, (cfg, trace)) in traces.into_iter().enumerate() {
        let fields = [("probe", &trace.snapshots[0]), ("final", &trace.final_field)];
        for (label, f) in fields {
            if binary {
                let mut bytes = Vec::new();
                write_binary_snapshot(f, &mut bytes).map_err(stage("tdse"))?;
                out.write(&format!("evolve_h{i}_{label}.bin"), &bytes)?;
            } else {
                out.write(&format!("evolve_h{i}_{label}.csv"), field_csv(f).as_bytes())?;
            }
        }
        let every = (trace.steps / 1000).max(1);
        let pick = |v: &[f64]| v.iter().step_by(every).copied().collect::<Vec<_>>();
        out.write_json(
            &format!("evolve_h{i}_trace.json"),
            &json!({
                "config": cfg,
                "steps": trace.steps,
                "cut": trace.cut,
                "drift_per_10k_steps": trace.drift_per_10k_steps(),
                "t_probe": t_probe,
                "history_stride": every,
                "times": pick(&trace.times),
                "norm": pick(&trace.norm_history),
                "transmitted_norm": pick(&trace.transmitted_history),
            }),
        )?;
    }
    Ok(())
}

type SweepPoint = (f64, semitunnel::Result<TdseStudy<f64>>, semitunnel::Result<Coherence<f64>>);

/// Runs the TDSE comparison and the closed-form coherence checks for every configured hbar.
pub fn comparison_report(run: &Run) -> ComparisonReport {
    let opts = run.config.study_options();
    let tol = run.config.tolerances;
    let jobs: Vec<SweepPoint> = run
        .config
        .hbar_list
        .par_iter()
        .map(|&h| {
            let study = tdse_study(&run.model, &run.density, h, &opts);
            let coh = coherence(&run.model, &run.density, h, opts.region, 0.01, opts.max_shift);
            (h, study, coh)
        })
        .collect();
    let mut report = ComparisonReport::default();
    let mut tdse_errors = Vec::new();
    for (h, study, coh) in jobs {
        match coh {
            Ok(c) => {
                report.rows.push(ComparisonRow::new(h, c.t_moderate, FieldKind::Moderate, FieldKind::Gauss, &c.mod_vs_gauss));
                report.rows.push(ComparisonRow::new(h, c.t_overlap, FieldKind::Moderate, FieldKind::GaussInfinity, &c.mod_vs_infinity));
                report.checks.push(Check::below(format!("hbar={h}: chi_mod vs chi_gauss"), c.mod_vs_gauss.gauged_err, tol.coherence));
                report.checks.push(Check::below(
                    format!("hbar={h}: chi_mod vs chi_gauss_infinity"),
                    c.mod_vs_infinity.gauged_err,
                    tol.coherence,
                ));
            }
            Err(e) => report.gaps.push(format!("hbar={h}: coherence: {e}")),
        }
        match study {
            Ok(s) => {
                if let Some(fit) = &s.gauss {
                    let mut row = ComparisonRow::new(h, s.t_probe, FieldKind::Reference, FieldKind::Gauss, fit);
                    row.norm_ratio = s.gauss_norm_ratio;
                    row.mean_k = Some(s.transmitted.mean_k);
                    row.var_k = Some(s.transmitted.var_k);
                    report.rows.push(row);
                    tdse_errors.push((h, fit.gauged_err));
                }
                report.checks.push(Check::above(
                    format!("hbar={h}: transmission over |t(E0)|^2"),
                    s.transmission / s.stationary_transmission,
                    1.0,
                ));
                report.checks.push(Check::above(
                    format!("hbar={h}: transmitted minus incoming mean_k"),
                    s.transmitted.mean_k - s.incoming.mean_k,
                    0.0,
                ));
                report.checks.push(Check::below(
                    format!("hbar={h}: |mean_k - k*| / sqrt(hbar)"),
                    (s.transmitted.mean_k - s.saddle.k_star).abs() / h.sqrt(),
                    tol.mean_k_band,
                ));
                report.checks.push(Check::below(
                    format!("hbar={h}: norm drift per 1e4 steps"),
                    s.drift_per_10k_steps,
                    tol.drift_per_10k_steps,
                ));
            }
            Err(e) => report.gaps.push(format!("hbar={h}: tdse: {e}")),
        }
    }
    tdse_errors.sort_by(|a, b| b.0.total_cmp(&a.0));
    if tdse_errors.len() >= 2 {
        let decreasing = tdse_errors.windows(2).all(|w| w[1].1 < w[0].1);
        report.checks.push(Check::holds("TDSE error strictly decreasing as hbar shrinks", decreasing));
        let ratio = tdse_errors.last().map(|l| l.1).unwrap_or(f64::NAN) / tdse_errors[0].1;
        report.checks.push(Check::below("smallest-hbar error over largest-hbar error", ratio, tol.error_ratio));
    }
    match scaling_study(&tdse_errors) {
        Ok(fit) => {
            report.checks.push(Check::above("error slope in ln hbar", fit.slope, tol.min_slope));
            report.checks.push(Check::above("error fit r^2", fit.r2, tol.min_r2));
        }
        Err(e) => report.gaps.push(format!("scaling study: {e}")),
    }
    report
}

fn compare(run: &Run, out: &mut Output) -> CliResult<()> {
    let report = comparison_report(run);
    out.write_json("report.json", &report)?;
    out.write("report.csv", report.rows_csv().as_bytes())?;
    for c in &report.checks {
        println!("{} {}: {:.6e} (threshold {:.3e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    for g in &report.gaps {
        println!("GAP {g}");
    }
    if !report.gaps.is_empty() {
        Err(CliError::Numeric {
            stage: "compare",
            source: semitunnel::Error::InsufficientData(format!("{} sweep points failed", report.gaps.len())),
        })
    } else if report.all_passed() {
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        Err(CliError::Acceptance(format!("{failed} checks failed")))
    }
}
