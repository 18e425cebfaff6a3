//! `skewless`: analyze, simulate and tune the skewless synchronization
//! protocol from a TOML description.

mod config;
mod format;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skewless_core::analysis::{check_theorem2, fixed_point_formula, tau_bound_topology_free};
use skewless_core::noise::{drift_rate, h2_value, optimize_params, steady_state_offsets};
use skewless_core::sim::{self, Scenario, SimTrace};
use skewless_core::topology::build_graph_quantities;
use skewless_core::{sweep, Error as CoreError};

use config::{Config, ConfigError};
use format::{g12, Cell, Csv};

#[derive(Parser)]
#[command(name = "skewless", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide convergence and print the predicted fixed point and noise bias.
    Analyze(Common),
    /// Run a scenario and write trace.csv and metrics.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Ring neighbours per side for wheel topologies.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Minimise the H2 norm over the free parameters; writes opt_log.csv and
    /// params.toml.
    Optimize(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH", conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration; see `--help` of each subcommand for names.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unknown preset `{0}` (expected one of {1})")]
    Preset(String, &'static str),
}

const ANALYZE_PRESETS: &[(&str, &str)] = &[
    ("exp1a", include_str!("../../../configs/analyze-exp1a.toml")),
    ("exp1b", include_str!("../../../configs/analyze-exp1b.toml")),
    ("exp1c", include_str!("../../../configs/analyze-exp1c.toml")),
];
const SIMULATE_PRESETS: &[(&str, &str)] = &[
    ("exp1", include_str!("../../../configs/simulate-exp1.toml")),
    ("exp2", include_str!("../../../configs/simulate-exp2.toml")),
    ("exp5", include_str!("../../../configs/simulate-exp5.toml")),
];
const OPTIMIZE_PRESETS: &[(&str, &str)] = &[
    ("jitter", include_str!("../../../configs/optimize-jitter.toml")),
    ("wander", include_str!("../../../configs/optimize-wander.toml")),
    ("both", include_str!("../../../configs/optimize-both.toml")),
];

fn load(common: &Common, presets: &[(&str, &str)], names: &'static str) -> Result<Config, CliError> {
    let text = match (&common.config, &common.preset) {
        (Some(path), _) => fs::read_to_string(path)
            .map_err(|source| CliError::Io { path: path.clone(), source })?,
        (None, Some(name)) => presets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| (*t).to_owned())
            .ok_or_else(|| CliError::Preset(name.clone(), names))?,
        (None, None) => unreachable!("clap requires one of --config and --preset"),
    };
    Ok(Config::parse(&text)?)
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_owned(), source })
}

fn write_csv(csv: &Csv, dir: &Path, name: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    csv.write(&path).map_err(|source| CliError::Io { path, source })
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| g12(*x)).collect::<Vec<_>>().join(", ")
}

fn analyze(common: &Common) -> Result<ExitCode, CliError> {
    let cfg = load(common, ANALYZE_PRESETS, "exp1a, exp1b, exp1c")?;
    let topo = cfg.topology()?;
    let params = cfg.params()?;
    let noise = cfg.noise()?;
    let z0 = cfg.initial(&topo)?;

    let v = check_theorem2(&topo, &params);
    let label = if v.marginal {
        "marginal"
    } else if v.stable {
        "stable"
    } else {
        "unstable"
    };
    match v.tau_max {
        Some(t) if t.is_finite() => println!("{label}, tauMax={t:.4}s"),
        Some(_) => println!("{label}, tauMax=unbounded"),
        None => println!("{label}, tauMax=n/a"),
    }
    println!("rho = {}", g12(v.rho_j2));
    for r in &v.reasons {
        println!("reason: {r}");
    }
    let r_hat = topo.skews().iter().copied().fold(0.0, f64::max);
    match tau_bound_topology_free(&params, topo.alpha_max(), r_hat) {
        Ok(t) if t.is_finite() => {
            println!("tauMax for any graph with alpha <= {}: {}s", g12(topo.alpha_max()), g12(t))
        }
        Ok(_) => println!("tauMax for any graph: unbounded"),
        Err(e) => println!("tauMax for any graph: n/a ({e})"),
    }
    if let Ok(gq) = build_graph_quantities(&topo) {
        if v.stable {
            let (xs, rs) = fixed_point_formula(&z0, &topo, &params, &gq);
            println!("fixed point: x* = {}s, r* = {}", g12(xs), g12(rs));
        }
        let wbar = noise.mean_errors(&topo);
        if let Ok(d) = drift_rate(&topo, &gq, &params, &wbar) {
            println!("skew drift per step = {}", g12(d));
        }
        if let Ok(off) = steady_state_offsets(&topo, &gq, &params, &wbar) {
            let us: Vec<f64> = off.iter().map(|x| x * 1e6).collect();
            println!("steady-state offsets (us) = [{}]", join(&us));
        }
    }
    Ok(ExitCode::from(match label {
        "stable" => 0,
        "unstable" => 2,
        _ => 3,
    }))
}

fn trace_csv(tr: &SimTrace) -> Csv {
    let mut csv = Csv::new(&["step", "node", "offset_us", "skew", "xtilde", "stilde", "ytilde"]);
    for k in 0..tr.len() {
        let [xt, st, yt] = tr.collective[k];
        for i in 0..tr.n {
            csv.row(&[
                Cell::Int(k),
                Cell::Int(i),
                Cell::Num(tr.offset_us(k, i)),
                Cell::Num(tr.s[k * tr.n + i]),
                Cell::Num(xt),
                Cell::Num(st),
                Cell::Num(yt),
            ]);
        }
    }
    csv
}

fn metric_cells(tr: &SimTrace) -> [f64; 3] {
    tr.metrics
        .as_ref()
        .map_or([f64::NAN; 3], |m| [m.sqrt_sn_us, m.ci99_us, m.ci100_us])
}

fn with_seed(mut sc: Scenario, seed: Option<u64>) -> Scenario {
    if let Some(s) = seed {
        sc.noise.seed = s;
    }
    sc
}

fn simulate(common: &Common, k: Option<usize>) -> Result<ExitCode, CliError> {
    let cfg = load(common, SIMULATE_PRESETS, "exp1, exp2, exp5")?;
    let sc = with_seed(cfg.scenario(common.steps, k)?, common.seed);
    out_dir(&common.out)?;
    let tr = sim::run(&sc)?;
    write_csv(&trace_csv(&tr), &common.out, "trace.csv")?;

    let mut metrics = Csv::new(&["sqrtSn_us", "CI99_us", "CI100_us", "drift_fit"]);
    let [sn, c99, c100] = metric_cells(&tr);
    let fit = tr.drift_fit.unwrap_or(f64::NAN);
    metrics.row(&[Cell::Num(sn), Cell::Num(c99), Cell::Num(c100), Cell::Num(fit)]);
    write_csv(&metrics, &common.out, "metrics.csv")?;
    println!("sqrtSn_us = {}, CI99_us = {}, CI100_us = {}, drift_fit = {}", g12(sn), g12(c99), g12(c100), g12(fit));

    if let (true, Some(_)) = (cfg.sweep_k(), cfg.wheel()) {
        let n = sc.topo.n();
        let ks: Vec<usize> = (0..=(n - 2) / 2).collect();
        let base = sc.noise.seed;
        let runs = sweep::map(ks.clone(), |k| -> Result<[f64; 3], CliError> {
            let mut s = cfg.scenario(common.steps, Some(k))?;
            s.noise.seed = base.wrapping_add(k as u64);
            Ok(metric_cells(&sim::run(&s)?))
        });
        let mut csv = Csv::new(&["k", "sqrtSn_us", "CI99_us", "CI100_us"]);
        for (k, r) in ks.into_iter().zip(runs) {
            let [a, b, c] = r?;
            csv.row(&[Cell::Int(k), Cell::Num(a), Cell::Num(b), Cell::Num(c)]);
            println!("K = {k}: sqrtSn_us = {}", g12(a));
        }
        write_csv(&csv, &common.out, "sweep.csv")?;
    }
    Ok(ExitCode::SUCCESS)
}

fn optimize(common: &Common) -> Result<ExitCode, CliError> {
    let cfg = load(common, OPTIMIZE_PRESETS, "jitter, wander, both")?;
    let topo = cfg.topology()?;
    let init = cfg.params()?;
    let opts = cfg.optimize_options()?;
    let out = match optimize_params(&topo, &init, &opts) {
        Ok(out) => out,
        Err(CoreError::NoStableStart) => {
            eprintln!("error: {}", CoreError::NoStableStart);
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };
    out_dir(&common.out)?;
    let mut log = Csv::new(&["iter", "f", "rho", "kappa1", "kappa2", "p"]);
    for r in &out.log {
        log.row(&[
            Cell::Int(r.iter),
            Cell::Num(r.f),
            Cell::Num(r.rho),
            Cell::Num(r.kappa1),
            Cell::Num(r.kappa2),
            Cell::Num(r.p),
        ]);
    }
    write_csv(&log, &common.out, "opt_log.csv")?;

    let p = &out.params;
    let mut text = format!(
        "[params]\nkappa1 = {}\nkappa2 = {}\np = {}\ntau = {}\n",
        g12(p.kappa1),
        g12(p.kappa2),
        g12(p.p),
        g12(p.tau)
    );
    if opts.free.alpha {
        text.push_str("\n[topology]\nedges = [\n");
        for e in out.topo.edges() {
            text.push_str(&format!("    [{}, {}, {}],\n", e.from, e.to, g12(e.alpha)));
        }
        text.push_str("]\n");
    }
    let path = common.out.join("params.toml");
    fs::write(&path, text).map_err(|source| CliError::Io { path, source })?;

    let f0 = h2_value(&topo, &init).unwrap_or(f64::NAN);
    println!("f: {} -> {} (rho = {})", g12(f0), g12(out.f), g12(out.rho));
    println!("kappa1 = {}, kappa2 = {}, p = {}", g12(p.kappa1), g12(p.kappa2), g12(p.p));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // clap's default exit code 2 would read as "unstable"
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let res = match &cli.cmd {
        Command::Analyze(c) => analyze(c),
        Command::Simulate { common, k } => simulate(common, *k),
        Command::Optimize(c) => optimize(c),
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}
