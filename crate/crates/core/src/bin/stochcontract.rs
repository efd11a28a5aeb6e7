use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use stochcontract::harness::{self, CertificateSpec, ExperimentConfig, HarnessError, ReportFormat};
use stochcontract::simulate::{self, Ensemble};
use stochcontract::wasserstein::{self, PointCloud, SinkhornOptions};

/// Contraction certificates, SDE ensembles and Wasserstein bound checks.
#[derive(Parser)]
#[command(name = "stochcontract", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Override the config's master seed (and the sampling-box seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the contraction certificate for a config as JSON.
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate one of the config's two ensembles.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Law::Mu)]
        law: Law,
        #[arg(long, value_enum, default_value_t = EnsembleFormat::Csv)]
        format: EnsembleFormat,
        #[command(flatten)]
        common: Common,
    },
    /// W2 distance between two equal-size point clouds stored as CSV rows.
    W2 {
        x: PathBuf,
        y: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Assignment)]
        method: Method,
        /// Entropic regularization (sinkhorn only).
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        /// Marginal tolerance (sinkhorn only).
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form W2 curve and bound for an OU config, as CSV.
    OuExact {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full experiment and write the bound report.
    VerifyBound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Worker threads (defaults to all cores); does not change the report.
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Law {
    Mu,
    Nu,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnsembleFormat {
    Csv,
    Bin,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Assignment,
    Sinkhorn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Returns `Ok(false)` when a bound violation was detected.
fn run(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Command::Certify { config, common } => {
            let cfg = load_config(&config, common.seed)?;
            let cert = cfg.certificate()?;
            write_output(common.out.as_deref(), |w| writeln!(w, "{}", cert.to_json()))?;
            Ok(true)
        }
        Command::Simulate { config, law, format, common } => {
            let cfg = load_config(&config, common.seed)?;
            let ensemble = simulate_law(&cfg, law)?;
            match format {
                EnsembleFormat::Csv => {
                    write_output(common.out.as_deref(), |w| ensemble.write_csv(w).map_err(io::Error::other))?
                }
                EnsembleFormat::Bin => {
                    let out = common.out.ok_or("binary output needs --out")?;
                    ensemble.write_binary(&out)?;
                }
            }
            Ok(true)
        }
        Command::W2 { x, y, method, epsilon, tol, common } => {
            let (x, y) = (read_cloud(&x)?, read_cloud(&y)?);
            let d = match method {
                Method::Assignment => wasserstein::w2_assignment_distance(&x, &y)?,
                Method::Sinkhorn => {
                    let mut opts = SinkhornOptions::new(epsilon);
                    if let Some(tol) = tol {
                        opts.tol = tol;
                    }
                    wasserstein::w2_sinkhorn(&x, &y, opts)?.0
                }
            };
            write_output(common.out.as_deref(), |w| writeln!(w, "{d}"))?;
            Ok(true)
        }
        Command::OuExact { config, common } => {
            let cfg = load_config(&config, common.seed)?;
            ou_exact(&cfg, common.out.as_deref())?;
            Ok(true)
        }
        Command::VerifyBound { config, format, threads, common } => {
            let cfg = load_config(&config, common.seed)?;
            let report = match threads {
                Some(n) => harness::run_experiment_with_threads(&cfg, n)?,
                None => harness::run_experiment(&cfg)?,
            };
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            match &common.out {
                Some(path) => harness::emit_report(&report, format, path)?,
                None => harness::write_report(&report, format, io::stdout().lock())?,
            }
            Ok(!report.has_violation())
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
        if let CertificateSpec::Sampled { sampling_box } = &mut cfg.certificate {
            sampling_box.seed = seed;
        }
    }
    Ok(cfg)
}

fn simulate_law(cfg: &ExperimentConfig, law: Law) -> Result<Ensemble, HarnessError> {
    let cert = cfg.certificate()?;
    let grid = cfg.grid.resolve(cert.beta)?;
    let system = cfg.system.build()?;
    let (tag, sampler) = match law {
        Law::Mu => ("mu", &cfg.mu0),
        Law::Nu => ("nu", &cfg.nu0),
    };
    let init = match cfg.init_coupling {
        harness::InitCoupling::Independent => tag,
        harness::InitCoupling::Common => "init",
    };
    Ok(simulate::simulate_ensemble_with_init(&system, sampler, cfg.n_traj, &grid, cfg.master_seed, tag, init)?)
}

fn ou_exact(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<()> {
    let ou = cfg.system.ou()?.ok_or("ou-exact needs the ou or scalar_linear family")?;
    let (mu0, nu0) = cfg.gaussian_initial_laws()?.ok_or("ou-exact needs Gaussian or point initial laws")?;
    let cert = cfg.certificate()?;
    let grid = cfg.grid.resolve(cert.beta)?;
    let w2_0 = wasserstein::w2_gaussian(&mu0, &nu0)?;
    let mut rows = Vec::new();
    for t in grid.snapshot_times() {
        let exact = ou.exact_w2(t, &mu0, &nu0)?;
        let bound = harness::theoretical_bound_w2(t, w2_0, cert.alpha, cert.beta, cert.c_sigma)?;
        rows.push([t, exact, bound]);
    }
    write_output(out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["t", "w2_exact", "bound_w2"])?;
        for r in &rows {
            csv.write_record(r.iter().map(f64::to_string))?;
        }
        csv.flush()
    })?;
    Ok(())
}

/// Rows of numbers, one point per row; a non-numeric first row is a header.
fn read_cloud(path: &Path) -> CliResult<PointCloud> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if k == 0 => continue,
            Err(e) => return Err(format!("{}: row {}: {e}", path.display(), k + 1).into()),
        }
    }
    Ok(PointCloud::from_rows(&rows).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn write_output<F>(out: Option<&Path>, body: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let mut w = BufWriter::new(file);
            body(&mut w).and_then(|_| w.flush()).map_err(|e| format!("{}: {e}", path.display()))?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
        }
    }
    Ok(())
}
