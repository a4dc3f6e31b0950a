//! `relayblock`: runs blocking analyses, simulations and interference fits
//! from a scenario file.

mod config;
mod output;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use relay_blocking::erlang::BlockingReport;
use relay_blocking::interference::{ks_distance, sample_isr_batch, LinkKind};
use relay_blocking::pipeline::{fit_link_converged, Analysis, PipelineError};
use relay_blocking::simulator::{compare_modes, ModeComparison, SimError, SimMode};

use config::{ConfigError, ScenarioConfig};
use output::{float, Staged};

#[derive(Parser, Debug)]
#[command(name = "relayblock", version, about = "Call blocking in relay-assisted OFDMA cells")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Class tables, blocking-vs-λ sweep and one JSON report per point.
    Analyze(Common),
    /// Coupled and decoupled simulation against the analysis.
    Simulate(Common),
    /// Lognormal ISR fit per link, with a KS check against exact sampling.
    FitInterference(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "RELAYBLOCK_OUT_DIR", default_value = "relayblock-out")]
    out: PathBuf,
    /// Overrides the scenario's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

/// Problems with the scenario itself, as opposed to runtime failures.
#[derive(Debug, thiserror::Error)]
enum Invalid {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: constraint `{name}` violated: {detail}")]
    Constraint {
        path: String,
        name: &'static str,
        detail: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(invalid) = e.downcast_ref::<Invalid>() {
                eprintln!("error: {invalid}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, job): (&Common, fn(&Loaded) -> anyhow::Result<Staged>) = match &cli.command {
        Command::Analyze(c) => (c, analyze),
        Command::Simulate(c) => (c, simulate),
        Command::FitInterference(c) => (c, fit_interference),
    };
    if let Some(n) = common.threads {
        anyhow::ensure!(n >= 1, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let loaded = Loaded::from_args(common)?;
    let mut staged = job(&loaded)?;
    staged.add("config.toml", loaded.echo.clone());
    for path in staged.commit(&common.out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

struct Loaded {
    path: String,
    config: ScenarioConfig,
    echo: String,
    hash: String,
}

impl Loaded {
    fn from_args(args: &Common) -> anyhow::Result<Self> {
        let mut config = ScenarioConfig::load(&args.config).map_err(Invalid::from)?;
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        let path = args.config.display().to_string();
        let constraint = |name, detail: String| Invalid::Constraint {
            path: path.clone(),
            name,
            detail,
        };
        match config.scenario().validate() {
            Err(PipelineError::Constraint { name, detail }) => return Err(constraint(name, detail).into()),
            Err(PipelineError::Strategy(e)) => return Err(constraint("strategy", e.to_string()).into()),
            Err(e) => return Err(constraint("scenario", e.to_string()).into()),
            Ok(()) => {}
        }
        if let Err(SimError::InvalidConfig(detail)) = config.sim_config(SimMode::Coupled).validate() {
            return Err(constraint("simulation", detail).into());
        }
        if config.fit.ks_samples == 0 {
            return Err(constraint("fit.ks_samples", "must be at least 1".into()).into());
        }
        let echo = config.canonical();
        let hash = config.hash();
        Ok(Self {
            path,
            config,
            echo,
            hash,
        })
    }

    fn analysis(&self) -> anyhow::Result<Analysis> {
        Analysis::prepare(&self.config.scenario()).with_context(|| format!("analysing {}", self.path))
    }
}

fn link_slug(link: LinkKind) -> &'static str {
    match link {
        LinkKind::BsMs => "bs_ms",
        LinkKind::BsRs => "bs_rs",
        LinkKind::RsMs => "rs_ms",
    }
}

#[derive(Serialize)]
struct LinkSummary {
    link: LinkKind,
    m1: f64,
    m2: f64,
    mu_i: f64,
    sigma_i: f64,
    min_demand: u32,
    max_demand: u32,
    head_mass: f64,
    tail_mass: f64,
}

#[derive(Serialize)]
struct PointReport<'a> {
    #[serde(flatten)]
    report: &'a BlockingReport,
    links: &'a [LinkSummary],
    config: &'a str,
}

const SWEEP_HEADER: &str =
    "lambda,p_b_d,p_b_hbr,p_b_hrm,p_b_h,p_b_overall,tail_block_bs_ms,tail_block_bs_rs,tail_block_rs_ms\n";

fn sweep_row(r: &BlockingReport) -> String {
    let cells = [
        r.lambda,
        r.p_b_d,
        r.p_b_hbr,
        r.p_b_hrm,
        r.p_b_h,
        r.p_b_overall,
        r.tail_block_bs_ms,
        r.tail_block_bs_rs,
        r.tail_block_rs_ms,
    ];
    cells.map(float).join(",") + "\n"
}

fn analyze(job: &Loaded) -> anyhow::Result<Staged> {
    let analysis = job.analysis()?;
    let lambdas = job.config.lambdas();
    let reports = analysis.sweep(&lambdas)?;
    let mut staged = Staged::default();

    let mut links = Vec::new();
    for (model, classes) in analysis.links.iter().zip(&analysis.classes) {
        let d = &classes.distribution;
        let mut csv = String::from("class,demand,probability\n");
        for (i, (demand, p)) in d.scheme.demands().zip(&d.probabilities).enumerate() {
            writeln!(csv, "{},{demand},{}", i + 1, float(*p))?;
        }
        staged.add(format!("classes_{}.csv", link_slug(model.link)), csv);
        links.push(LinkSummary {
            link: model.link,
            m1: model.model.source_moments.m1,
            m2: model.model.source_moments.m2,
            mu_i: model.model.mu,
            sigma_i: model.model.sigma,
            min_demand: d.scheme.demands().next().unwrap_or(0),
            max_demand: d.scheme.demands().last().unwrap_or(0),
            head_mass: d.head_mass,
            tail_mass: d.tail_mass,
        });
    }

    let mut sweep = String::from(SWEEP_HEADER);
    let width = reports.len().saturating_sub(1).to_string().len();
    for (i, report) in reports.into_iter().enumerate() {
        sweep.push_str(&sweep_row(&report));
        let report = BlockingReport {
            scenario_hash: Some(job.hash.clone()),
            ..report
        };
        let json = serde_json::to_string_pretty(&PointReport {
            report: &report,
            links: &links,
            config: &job.echo,
        })?;
        staged.add(format!("reports/report_{i:0width$}.json"), json + "\n");
    }
    staged.add("sweep.csv", sweep);
    Ok(staged)
}

const COMPARISON_HEADER: &str = "lambda,stream,analytical,coupled,coupled_half_width,decoupled,decoupled_half_width,\
paired_difference,paired_half_width,analytical_within_decoupled_ci\n";

fn comparison_rows(lambda: f64, cmp: &ModeComparison, csv: &mut String, table: &mut String) -> std::fmt::Result {
    for gap in &cmp.gaps {
        let c = cmp.coupled.stream(gap.stream);
        let d = cmp.decoupled.stream(gap.stream);
        let covered = d.covers(gap.analytical);
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            float(lambda),
            gap.stream.as_str(),
            float(gap.analytical),
            float(c.fraction),
            float(c.half_width),
            float(d.fraction),
            float(d.half_width),
            float(gap.paired_difference),
            float(gap.paired_half_width),
            covered
        )?;
        writeln!(
            table,
            "{lambda:>8} {:<13} {:>11.4e} {:>11.4e} ±{:<9.2e} {:>11.4e} ±{:<9.2e} {}",
            gap.stream.as_str(),
            gap.analytical,
            c.fraction,
            c.half_width,
            d.fraction,
            d.half_width,
            if covered { "yes" } else { "no" }
        )?;
    }
    Ok(())
}

fn simulate(job: &Loaded) -> anyhow::Result<Staged> {
    let analysis = job.analysis()?;
    let lambdas = job.config.lambdas();
    let cfg = job.config.sim_config(SimMode::Coupled);
    let mut staged = Staged::default();
    let mut csv = String::from(COMPARISON_HEADER);
    let mut table = format!(
        "{:>8} {:<13} {:>11} {:>22} {:>22} {}\n",
        "lambda", "stream", "analytical", "coupled ± 95%", "decoupled ± 95%", "in CI"
    );
    let width = lambdas.len().saturating_sub(1).to_string().len();
    for (i, &lambda) in lambdas.iter().enumerate() {
        let report = analysis.evaluate(lambda)?.report;
        let sc = analysis.sim_scenario(lambda)?;
        let cmp = compare_modes(&sc, &cfg, &report).with_context(|| format!("simulating λ = {lambda}"))?;
        comparison_rows(lambda, &cmp, &mut csv, &mut table)?;
        staged.add(format!("simulation/point_{i:0width$}_coupled.csv"), cmp.coupled.to_csv());
        staged.add(format!("simulation/point_{i:0width$}_decoupled.csv"), cmp.decoupled.to_csv());
    }
    print!("{table}");
    staged.add("comparison.csv", csv);
    Ok(staged)
}

fn fit_interference(job: &Loaded) -> anyhow::Result<Staged> {
    let scenario = job.config.scenario();
    let layout = scenario.layout()?;
    let mut csv = String::from("link,m1,m2,mu_I,sigma_I,ks_distance_vs_exact_sampling\n");
    for (i, link) in LinkKind::ALL.into_iter().enumerate() {
        let geom = scenario.link_geometry(&layout, link)?;
        let fit = fit_link_converged(&geom, &scenario.quadrature)?;
        let samples = sample_isr_batch(&geom, job.config.fit.ks_samples, job.config.seed.wrapping_add(i as u64));
        let ks = ks_distance(&fit.model, &samples);
        let m = fit.model.source_moments;
        writeln!(
            csv,
            "{link},{},{},{},{},{}",
            float(m.m1),
            float(m.m2),
            float(fit.model.mu),
            float(fit.model.sigma),
            float(ks)
        )?;
    }
    let mut staged = Staged::default();
    staged.add("fit.csv", csv);
    Ok(staged)
}
