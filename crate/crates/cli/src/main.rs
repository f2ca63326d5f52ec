use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prethermal_core::harness::{run_trajectories, T_STAR_FRACTION};
use prethermal_core::observables::{trailing_flatness, write_raw_csv};
use prethermal_core::params::threshold_curve;
use prethermal_core::{
    compare_engines, fit_stage_one, growth_rate, scaling_sweep, t_star, DispersionParams, Engine, EnsembleSeries,
    Error, Pooling, ProtocolKind, QuenchProtocol, Result, RunConfig, SeriesMeta, REFERENCE_EPS,
};

/// Exit status for runs that fail on physical grounds (stable parameters,
/// series that never become stationary, diverging trajectories).
const EXIT_PHYSICS: u8 = 3;
/// Exit status for unreadable input, bad configuration and I/O failures.
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "prethermal", version, about = "Quench dynamics of atoms in a lossy cavity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one quench protocol and write the ensemble CSV with its JSON sidecar.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Output prefix; writes PREFIX.csv and PREFIX.json.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-trajectory records to PREFIX.raw.csv.
        #[arg(long)]
        raw: bool,
    },
    /// Run the same protocol under several engines on a common grid.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values = ["full", "hamiltonian", "meanfield"])]
        engines: Vec<EngineArg>,
        /// Aligned CSV output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Relaxation time against atom number, with a power-law fit per engine.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values = ["full", "meanfield"])]
        engines: Vec<EngineArg>,
        /// Table output; the fits go to the same path with a .json extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Critical pump `n̄_c` against detuning, as CSV on stdout.
    Threshold {
        /// Explicit detunings; overrides the range.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        deltas: Vec<f64>,
        #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, default_value_t = -0.2, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 25)]
        points: usize,
    },
    /// Growth rate of the homogeneous-state instability.
    VlasovRate {
        /// Pump ratio `n̄_f / n̄_c`.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        delta: f64,
        #[arg(long, default_value_t = REFERENCE_EPS)]
        eps: f64,
        /// CSV with columns `ratio,delta[,eps]`; one output row per input row.
        #[arg(long, conflicts_with = "ratio")]
        batch: Option<PathBuf>,
    },
    /// Relaxation time and stage-one rate of an existing ensemble CSV.
    Analyze {
        /// Ensemble CSV written by `simulate`.
        csv: PathBuf,
        /// Sidecar; defaults to the CSV path with a .json extension.
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long, default_value_t = T_STAR_FRACTION)]
        fraction: f64,
        /// Reference level for the end of the exponential window; defaults to
        /// the trailing-decade mean.
        #[arg(long)]
        stationary: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    PathA,
    PathB,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Full,
    Hamiltonian,
    Meanfield,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Full => Engine::Full,
            EngineArg::Hamiltonian => Engine::Hamiltonian,
            EngineArg::Meanfield => Engine::Meanfield,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Pooled,
    PerTrajectory,
}

/// Run parameters: a TOML file, individual flags, or a file with flag overrides.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    protocol: Option<ProtocolArg>,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    nbar_i: Option<f64>,
    #[arg(long)]
    nbar_f: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    delta_f: Option<f64>,
    #[arg(long)]
    n_atoms: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    engine: Option<EngineArg>,
    #[arg(long)]
    mf_samples: Option<usize>,
    #[arg(long)]
    pooling: Option<PoolingArg>,
}

fn missing(key: &str) -> Error {
    Error::Config(format!("'{key}' is required without --config"))
}

impl RunArgs {
    fn to_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig {
                protocol: ProtocolKind::PathA,
                delta: self.delta.ok_or_else(|| missing("delta"))?,
                eps: self.eps.unwrap_or(REFERENCE_EPS),
                nbar_i: self.nbar_i.ok_or_else(|| missing("nbar-i"))?,
                nbar_f: None,
                delta_f: None,
                n_atoms: self.n_atoms.ok_or_else(|| missing("n-atoms"))?,
                horizon: self.horizon.ok_or_else(|| missing("horizon"))?,
                dt: None,
                trajectories: self.trajectories.ok_or_else(|| missing("trajectories"))?,
                seed: self.seed.unwrap_or(0),
                engine: Engine::Full,
                mf_samples: None,
                pooling: Pooling::Pooled,
            },
        };
        if let Some(p) = self.protocol {
            c.protocol = match p {
                ProtocolArg::PathA => ProtocolKind::PathA,
                ProtocolArg::PathB => ProtocolKind::PathB,
                ProtocolArg::None => ProtocolKind::None,
            };
        }
        c.delta = self.delta.unwrap_or(c.delta);
        c.eps = self.eps.unwrap_or(c.eps);
        c.nbar_i = self.nbar_i.unwrap_or(c.nbar_i);
        c.nbar_f = self.nbar_f.or(c.nbar_f);
        c.delta_f = self.delta_f.or(c.delta_f);
        c.n_atoms = self.n_atoms.unwrap_or(c.n_atoms);
        c.horizon = self.horizon.unwrap_or(c.horizon);
        c.dt = self.dt.or(c.dt);
        c.trajectories = self.trajectories.unwrap_or(c.trajectories);
        c.seed = self.seed.unwrap_or(c.seed);
        if let Some(e) = self.engine {
            c.engine = e.into();
        }
        c.mf_samples = self.mf_samples.or(c.mf_samples);
        if let Some(p) = self.pooling {
            c.pooling = match p {
                PoolingArg::Pooled => Pooling::Pooled,
                PoolingArg::PerTrajectory => Pooling::PerTrajectory,
            };
        }
        Ok(c)
    }

    fn protocol(&self) -> Result<QuenchProtocol> {
        self.to_config()?.to_protocol()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn simulate(run: &RunArgs, out: &Path, raw: bool) -> Result<()> {
    let protocol = run.protocol()?;
    let (runs, aborted) = run_trajectories(&protocol)?;
    if aborted > 0 {
        eprintln!("warning: {aborted} trajectories aborted and were dropped");
    }
    let series = EnsembleSeries::from_trajectories(protocol.meta(aborted), &runs)?;
    let csv = with_suffix(out, ".csv");
    let mut w = create(&csv)?;
    series.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&with_suffix(out, ".json"))?;
    series.meta.write_json(&mut w)?;
    w.flush()?;
    if raw {
        let mut w = create(&with_suffix(out, ".raw.csv"))?;
        write_raw_csv(&mut w, &runs)?;
        w.flush()?;
    }
    println!("{}", csv.display());
    Ok(())
}

fn compare(run: &RunArgs, engines: &[EngineArg], out: &Path) -> Result<()> {
    let protocol = run.protocol()?;
    let engines: Vec<Engine> = engines.iter().map(|&e| e.into()).collect();
    let cmp = compare_engines(&protocol, &engines)?;
    let mut w = create(out)?;
    cmp.write_csv(&mut w)?;
    w.flush()?;
    match cmp.divergence {
        Some(t) => println!("divergence_tau {t:e}"),
        None => println!("divergence_tau none"),
    }
    Ok(())
}

fn sweep(run: &RunArgs, ns: &[usize], engines: &[EngineArg], out: &Path) -> Result<()> {
    let protocol = run.protocol()?;
    let engines: Vec<Engine> = engines.iter().map(|&e| e.into()).collect();
    let table = scaling_sweep(&protocol, ns, &engines)?;
    let mut w = create(out)?;
    table.write_csv(&mut w)?;
    w.flush()?;
    let w = create(&out.with_extension("json"))?;
    serde_json::to_writer_pretty(w, &table).map_err(|e| Error::Io(io::Error::other(e)))?;
    for (engine, fit) in &table.fits {
        println!("{} slope {:.4} ± {:.4}", engine.name(), fit.slope, fit.slope_se);
    }
    Ok(())
}

fn threshold(deltas: &[f64], from: f64, to: f64, points: usize) -> Result<()> {
    let grid: Vec<f64> = if deltas.is_empty() {
        if points < 2 {
            return Err(Error::Config("a detuning range needs at least two points".into()));
        }
        (0..points)
            .map(|k| from + (to - from) * k as f64 / (points - 1) as f64)
            .collect()
    } else {
        deltas.to_vec()
    };
    let rows = threshold_curve(&grid)?;
    let mut out = io::stdout().lock();
    writeln!(out, "delta,nbar_c")?;
    for (d, n) in rows {
        writeln!(out, "{d},{n:e}")?;
    }
    Ok(())
}

fn rate_row(ratio: f64, delta: f64, eps: f64) -> Result<String> {
    let r = growth_rate(ratio, &DispersionParams::new(delta, eps)?)?;
    Ok(format!("{ratio},{delta},{eps:e},{:.12e},{:.3e},ok", r.gamma_v, r.residual))
}

fn vlasov_rate(ratio: Option<f64>, delta: f64, eps: f64, batch: Option<&Path>) -> Result<()> {
    const HEADER: &str = "ratio,delta,eps,gamma_v,residual,status";
    let mut out = io::stdout().lock();
    let Some(path) = batch else {
        let ratio = ratio.ok_or_else(|| Error::Config("give --ratio or --batch".into()))?;
        let row = rate_row(ratio, delta, eps)?;
        writeln!(out, "{HEADER}\n{row}")?;
        return Ok(());
    };
    let mut lines = open(path)?.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty batch file".into()))??;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let (ci, di) = find("ratio")
        .zip(find("delta"))
        .ok_or_else(|| Error::Format("batch header needs 'ratio' and 'delta'".into()))?;
    let ei = find("eps");
    writeln!(out, "{HEADER}")?;
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            f.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("row {}: bad value in column {}", k + 2, i + 1)))
        };
        let (r, d) = (num(ci)?, num(di)?);
        let e = ei.map(num).transpose()?.unwrap_or(eps);
        match rate_row(r, d, e) {
            Ok(row) => writeln!(out, "{row}")?,
            Err(Error::Stable(_)) => writeln!(out, "{r},{d},{e:e},NaN,NaN,stable")?,
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn analyze(csv: &Path, meta: Option<&Path>, fraction: f64, stationary: Option<f64>) -> Result<()> {
    let meta_path = meta.map(Path::to_path_buf).unwrap_or_else(|| csv.with_extension("json"));
    let meta = SeriesMeta::read_json(open(&meta_path)?)?;
    let series = EnsembleSeries::read_csv(open(csv)?, meta)?;
    let theta_sq = series.theta_sq();
    let flat = trailing_flatness(&theta_sq)?;
    let ts = t_star(&theta_sq, fraction);
    let fit = fit_stage_one(&theta_sq, stationary.or(Some(flat.stationary)));
    let report = serde_json::json!({
        "stationary_theta_sq": flat.stationary,
        "trailing_flat": flat.flat,
        "t_star": ts.as_ref().ok(),
        "t_star_error": ts.as_ref().err().map(|e| e.to_string()),
        "stage_one_rate": fit.as_ref().ok().map(|f| f.rate),
        "stage_one_rate_se": fit.as_ref().ok().map(|f| f.rate_se),
        "stage_one_window": fit.as_ref().ok().map(|f| [f.window.0, f.window.1]),
        "stage_one_error": fit.as_ref().err().map(|e| e.to_string()),
    });
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Io(io::Error::other(e)))?);
    ts.map(|_| ())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { run, out, raw } => simulate(run, out, *raw),
        Command::Compare { run, engines, out } => compare(run, engines, out),
        Command::Sweep { run, ns, engines, out } => sweep(run, ns, engines, out),
        Command::Threshold { deltas, from, to, points } => threshold(deltas, *from, *to, *points),
        Command::VlasovRate { ratio, delta, eps, batch } => vlasov_rate(*ratio, *delta, *eps, batch.as_deref()),
        Command::Analyze {
            csv,
            meta,
            fraction,
            stationary,
        } => analyze(csv, meta.as_deref(), *fraction, *stationary),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_physics() { EXIT_PHYSICS } else { EXIT_INPUT })
        }
    }
}
