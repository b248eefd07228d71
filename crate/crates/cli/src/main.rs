use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use fbmq::asymptotics::{
    derived_constants, large_fluctuation_limit, thm1_limit, thm1_limit_std_error, LargeFluctuationLimit,
    SojournWindows, Thm3Estimates,
};
use fbmq::berman::{
    estimate_bar_joint, estimate_bar_single, estimate_finite_horizon_joint, estimate_pickands_alpha2,
    estimate_pickands_with, BermanSpec, SupremumMethod,
};
use fbmq::brownian_exact::{
    estimate_c, prop1_approx, prop2_approx, stationary_tail, transient_exceed_given_exceed,
    transient_exceed_given_level, BmTransientQuery, CConstantSpec,
};
use fbmq::gaussian_paths::{sample_fbm, sample_w_path, HurstParam, TimeGrid};
use fbmq::harness::{preset, run_config, ExperimentConfig};
use fbmq::rng::{substream, tags, with_workers};
use fbmq::workload::{simulate_forward, simulate_stationary_window, QueueParams};
use fbmq::{Error, Result};

#[derive(Parser)]
#[command(name = "fbmq", version, about = "Sojourn-time Monte Carlo for fluid queues fed by fractional Brownian motion")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed (default 1; presets keep their own unless given).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo replicates (presets: overrides the preset value).
    #[arg(long, global = true)]
    reps: Option<u64>,
    /// Grid step.
    #[arg(long, global = true)]
    step: Option<f64>,
    /// Output file for paths, output directory for experiments.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

impl Global {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    fn reps(&self) -> u64 {
        self.reps.unwrap_or(10_000)
    }

    fn step(&self) -> f64 {
        self.step.unwrap_or(0.01)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample one fBm (or W_H) path on [0, end].
    FbmGen {
        #[arg(long)]
        hurst: f64,
        #[arg(long, default_value_t = 1.0)]
        end: f64,
        /// Emit sqrt(2) B_H(t) - t^{2H} instead of B_H.
        #[arg(long)]
        w_field: bool,
    },
    /// Sample one workload path on [0, end].
    QueueSim {
        #[arg(long)]
        hurst: f64,
        #[arg(long, default_value_t = 1.0)]
        drain: f64,
        #[arg(long, default_value_t = 1.0)]
        end: f64,
        /// Look-ahead of the stationary construction (default 8 t*).
        #[arg(long)]
        horizon: Option<f64>,
        /// Start from this workload instead of stationarity.
        #[arg(long)]
        q0: Option<f64>,
    },
    /// Pickands and Berman-type constants.
    Constants {
        #[command(subcommand)]
        which: ConstantCmd,
    },
    /// The constant C(T1, T2, x; w) of the Brownian queue.
    CConstant {
        #[arg(long, default_value_t = 0.0)]
        t1: f64,
        #[arg(long)]
        t2: f64,
        #[arg(long)]
        x: f64,
        /// Shift w; "inf" for the large fluctuation constant.
        #[arg(long, value_parser = parse_extended)]
        w: f64,
        #[arg(long, default_value_t = 1.0)]
        drain: f64,
    },
    /// Closed forms of the Brownian queue.
    ClosedForm {
        #[command(subcommand)]
        which: ClosedFormCmd,
    },
    /// Asymptotic approximations.
    Asympt {
        #[command(subcommand)]
        which: AsymptCmd,
    },
    /// Run an experiment from a TOML configuration.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a built-in experiment.
    Preset { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Shift,
    Direct,
}

impl From<Method> for SupremumMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Shift => SupremumMethod::ShiftAveraged,
            Method::Direct => SupremumMethod::Direct,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct JointArgs {
    #[arg(long)]
    hurst: f64,
    #[arg(long)]
    t1: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    t2: f64,
    #[arg(long)]
    t3: f64,
    #[arg(long)]
    x: f64,
    #[arg(long)]
    y: f64,
}

impl JointArgs {
    fn spec(&self) -> Result<BermanSpec> {
        let spec = BermanSpec {
            hurst: HurstParam::new(self.hurst)?,
            t1: self.t1,
            lambda: self.lambda,
            t2: self.t2,
            t3: self.t3,
            x: self.x,
            y: self.y,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn windows(&self) -> Result<SojournWindows> {
        SojournWindows::new(self.t1, self.t2, self.t3, self.x, self.y)
    }
}

#[derive(Subcommand)]
enum ConstantCmd {
    /// Pickands constant over [0, S]; --alpha2 for the smooth validation case.
    Pickands {
        #[arg(long, default_value_t = 0.5)]
        hurst: f64,
        #[arg(long)]
        horizon: f64,
        #[arg(long, value_enum, default_value_t = Method::Shift)]
        method: Method,
        #[arg(long)]
        alpha2: bool,
    },
    BarSingle {
        #[arg(long)]
        hurst: f64,
        #[arg(long)]
        t1: f64,
        #[arg(long)]
        x: f64,
    },
    BarJoint {
        #[command(flatten)]
        joint: JointArgs,
    },
    FiniteHorizon {
        #[command(flatten)]
        joint: JointArgs,
        #[arg(long)]
        horizon: f64,
        #[arg(long, value_enum, default_value_t = Method::Shift)]
        method: Method,
    },
}

#[derive(Args, Clone, Copy)]
struct BmQuery {
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    u: f64,
    #[arg(long)]
    omega: f64,
    #[arg(long)]
    t: f64,
}

#[derive(Subcommand)]
enum ClosedFormCmd {
    /// P(Q(T) > omega | Q(0) = u).
    Q1 {
        #[command(flatten)]
        q: BmQuery,
    },
    /// P(Q(T) > omega | Q(0) > u).
    Q2 {
        #[command(flatten)]
        q: BmQuery,
    },
    /// P(Q(0) > u).
    Tail {
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long)]
        u: f64,
    },
}

#[derive(Subcommand)]
enum AsymptCmd {
    /// A, B, t*, Delta(u), v(u).
    Constants {
        #[arg(long)]
        hurst: f64,
        #[arg(long, default_value_t = 1.0)]
        drain: f64,
        #[arg(long)]
        u: f64,
    },
    /// Small fluctuation limit of the fBm conditional probability.
    Thm1 {
        #[command(flatten)]
        joint: JointArgs,
    },
    /// Large fluctuation limit (1 for a < 0, envelope for a > 0).
    Thm3 {
        #[command(flatten)]
        joint: JointArgs,
        #[arg(long, default_value_t = 1.0)]
        drain: f64,
        #[arg(long)]
        u: f64,
        #[arg(long)]
        a: f64,
    },
    /// Brownian small fluctuation approximation exp(-2cw) C(T1, T2, x; w).
    P1 {
        #[arg(long, default_value_t = 0.0)]
        t1: f64,
        #[arg(long)]
        t2: f64,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        w: f64,
        #[arg(long, default_value_t = 1.0)]
        drain: f64,
    },
    /// Brownian large fluctuation approximation at omega = (1 + a) u.
    P2 {
        #[arg(long, default_value_t = 0.0)]
        t1: f64,
        #[arg(long)]
        t2: f64,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        u: f64,
        #[arg(long, default_value_t = 1.0)]
        drain: f64,
    },
}

fn parse_extended(s: &str) -> std::result::Result<f64, String> {
    match s {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse::<f64>().map_err(|e| e.to_string()),
    }
}

fn emit(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn path_or_stdout(out: Option<&Path>, write: impl FnOnce(&Path) -> Result<()>, csv: impl FnOnce() -> String) -> Result<()> {
    match out {
        Some(p) => write(p),
        None => {
            print!("{}", csv());
            Ok(())
        }
    }
}

fn series_csv(header: &str, grid: &TimeGrid, values: &[f64]) -> String {
    let mut s = format!("t,{header}\n");
    for (t, v) in grid.points().zip(values) {
        s.push_str(&format!("{t},{v}\n"));
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let (seed, reps, step) = (g.seed(), g.reps(), g.step());
    match cli.command {
        Command::FbmGen { hurst, end, w_field } => {
            let grid = TimeGrid::covering(end, step)?;
            let h = HurstParam::new(hurst)?;
            let mut rng = substream(seed, tags::PATH, 0);
            let path = if w_field { sample_w_path(&grid, h, &mut rng)? } else { sample_fbm(&grid, h, &mut rng)? };
            path_or_stdout(g.out.as_deref(), |p| path.write_csv(p), || series_csv("value", &grid, &path.values))
        }
        Command::QueueSim { hurst, drain, end, horizon, q0 } => {
            let params = QueueParams::new(hurst, drain)?;
            let mut rng = substream(seed, tags::PATH, 0);
            let path = match q0 {
                Some(q0) => {
                    let grid = TimeGrid::covering(end, step)?;
                    simulate_forward(params, q0, &sample_fbm(&grid, params.hurst, &mut rng)?)?
                }
                None => {
                    let horizon = horizon.unwrap_or_else(|| params.default_horizon(1.0));
                    simulate_stationary_window(params, end, horizon, step, &mut rng)?
                }
            };
            path_or_stdout(g.out.as_deref(), |p| path.write_csv(p), || series_csv("q", &path.grid, &path.values))
        }
        Command::Constants { which } => {
            let est = with_workers(g.workers, || match which {
                ConstantCmd::Pickands { hurst, horizon, method, alpha2 } => {
                    if alpha2 {
                        estimate_pickands_alpha2(method.into(), horizon, step, reps, seed)
                    } else {
                        estimate_pickands_with(method.into(), HurstParam::new(hurst)?, horizon, step, reps, seed)
                    }
                }
                ConstantCmd::BarSingle { hurst, t1, x } => {
                    estimate_bar_single(HurstParam::new(hurst)?, t1, x, step, reps, seed)
                }
                ConstantCmd::BarJoint { joint } => estimate_bar_joint(&joint.spec()?, step, reps, seed),
                ConstantCmd::FiniteHorizon { joint, horizon, method } => {
                    estimate_finite_horizon_joint(&joint.spec()?, horizon, step, reps, seed, method.into())
                }
            })?;
            emit(&est.to_record())
        }
        Command::CConstant { t1, t2, x, w, drain } => {
            let spec = CConstantSpec::new(t1, t2, x, w, drain)?;
            let est = with_workers(g.workers, || estimate_c(&spec, step, reps, seed))?;
            emit(&json!({ "constant": "C", "spec": est.spec, "estimate": est.estimate }))
        }
        Command::ClosedForm { which } => {
            let (name, value) = match which {
                ClosedFormCmd::Q1 { q } => {
                    ("q1", transient_exceed_given_level(&BmTransientQuery::new(q.c, q.u, q.omega, q.t)?)?)
                }
                ClosedFormCmd::Q2 { q } => {
                    ("q2", transient_exceed_given_exceed(&BmTransientQuery::new(q.c, q.u, q.omega, q.t)?)?)
                }
                ClosedFormCmd::Tail { c, u } => ("tail", stationary_tail(c, u)?),
            };
            emit(&json!({ "formula": name, "value": value }))
        }
        Command::Asympt { which } => with_workers(g.workers, || asympt(which, step, reps, seed)),
        Command::Compare { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply_overrides(&mut cfg, g);
            report(run_config(&cfg, g.out.as_deref())?)
        }
        Command::Preset { name } => {
            let mut cfg = preset(&name)?;
            apply_overrides(&mut cfg, g);
            report(run_config(&cfg, Some(g.out.as_deref().unwrap_or(Path::new("."))))?)
        }
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, g: &Global) {
    if let Some(r) = g.reps {
        cfg.mc.reps = r;
        cfg.mc.constant_reps = cfg.mc.constant_reps.map(|c| c.min(r));
    }
    if let Some(s) = g.step {
        cfg.mc.step = s;
    }
    if let Some(seed) = g.seed {
        cfg.mc.seed = seed;
    }
    if g.workers.is_some() {
        cfg.mc.workers = g.workers;
    }
}

fn report(art: fbmq::harness::Artifacts) -> Result<()> {
    log::info!("{} rows", art.output.records.len());
    emit(&json!({ "csv": art.csv_path, "json": art.json_path, "records": art.output.records }))
}

fn asympt(which: AsymptCmd, step: f64, reps: u64, seed: u64) -> Result<()> {
    match which {
        AsymptCmd::Constants { hurst, drain, u } => emit(&json!(derived_constants(HurstParam::new(hurst)?, drain, u)?)),
        AsymptCmd::Thm1 { joint } => {
            let spec = joint.spec()?;
            let xy = estimate_bar_joint(&spec, step, reps, seed)?;
            let x = estimate_bar_single(spec.hurst, spec.t1, spec.x, step, reps, seed)?;
            emit(&json!({
                "limit": thm1_limit(&xy, &x)?,
                "std_error": thm1_limit_std_error(&xy, &x),
                "joint": xy.to_record(),
                "single": x.to_record(),
            }))
        }
        AsymptCmd::Thm3 { joint, drain, u, a } => {
            let spec = joint.spec()?;
            let windows = joint.windows()?;
            let estimates = if a > 0.0 {
                let at = fbmq::asymptotics::a_tilde(spec.hurst, a);
                let s = windows.scaled(at);
                Some(Thm3Estimates {
                    bar_x: estimate_bar_single(spec.hurst, windows.t1, windows.x, step, reps, seed)?,
                    bar_ay_upper: estimate_bar_single(spec.hurst, s.t3 - s.t2, s.y, step, reps, seed)?,
                    bar_joint_lower: estimate_bar_joint(
                        &BermanSpec { t1: s.t1, t2: s.t2, t3: s.t3, x: s.x, y: s.y, lambda: 0.0, ..spec },
                        step,
                        reps,
                        seed,
                    )?,
                })
            } else {
                None
            };
            match large_fluctuation_limit(spec.hurst, drain, u, a, &windows, estimates.as_ref())? {
                LargeFluctuationLimit::One => emit(&json!({ "limit": 1.0 })),
                LargeFluctuationLimit::Envelope(env) => emit(&json!({ "envelope": env })),
            }
        }
        AsymptCmd::P1 { t1, t2, x, w, drain } => {
            let est = estimate_c(&CConstantSpec::new(t1, t2, x, w, drain)?, step, reps, seed)?;
            emit(&json!({ "approximation": prop1_approx(drain, w, &est)?, "constant": est.estimate }))
        }
        AsymptCmd::P2 { t1, t2, x, a, u, drain } => {
            let omega = (1.0 + a) * u;
            if a > 0.0 {
                let est = estimate_c(&CConstantSpec::new(t1, t2, x, f64::INFINITY, drain)?, step, reps, seed)?;
                emit(&json!({
                    "approximation": prop2_approx(drain, a, u, omega, Some(&est))?,
                    "constant": est.estimate,
                }))
            } else {
                emit(&json!({ "approximation": prop2_approx(drain, a, u, omega, None)? }))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &Error) -> u8 {
    u8::try_from(e.exit_code()).unwrap_or(1)
}
