use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use funcpoly::bandwidth::{
    asymptotic_bandwidth, cross_validate, exact_optimal_bandwidth, plugin_bandwidth, Method, IMSE_MESH,
};
use funcpoly::covariance::CovarianceModel;
use funcpoly::design::quantile_grid;
use funcpoly::kernels::{tableau, Kernel};
use funcpoly::locpoly::{curve_estimate, FitSpec, FunctionalSample, Regression};
use funcpoly::quadrature::linspace;
use funcpoly::simlab::{
    design_density, emit_table, normality_check, preset, run_experiment, CatalogRegression, ExperimentConfig,
    ExperimentReport, NormalityConfig, TableFormat, WeightFn,
};
use funcpoly::{Error, Result};

#[derive(Parser)]
#[command(name = "funcpoly", version, about = "Local polynomial estimation from repeated noisy curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the kernel moment tableau for order p as JSON.
    KernelInfo {
        #[arg(long, default_value = "truncated-gaussian:1")]
        kernel: String,
        #[arg(long)]
        p: usize,
    },
    /// Estimate m^(nu) from a curve CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        nu: usize,
        /// A positive number, `inf`, `cv` or `asym` (plug-in estimate).
        #[arg(long)]
        h: String,
        #[arg(long, default_value = "truncated-gaussian:1")]
        kernel: String,
        /// `design`, `linspace:<k>` or a comma-separated list of points.
        #[arg(long, default_value = "design")]
        eval: String,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Select a bandwidth and print the result as JSON.
    Bandwidth {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Covariance id (asym, exact).
        #[arg(long)]
        model: Option<String>,
        /// Regression id (asym, exact).
        #[arg(long)]
        m: Option<String>,
        /// Number of curves (asym, exact).
        #[arg(long)]
        n: Option<usize>,
        /// Number of design points (exact).
        #[arg(long = "N", default_value_t = 100)]
        design_points: usize,
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        nu: usize,
        #[arg(long, default_value = "truncated-gaussian:1")]
        kernel: String,
        #[arg(long, default_value = "uniform")]
        density: String,
        #[arg(long, default_value = "uniform")]
        weight: String,
        /// Curve CSV (cv, plugin).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run an experiment described by a JSON config and write its table row.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv", value_parser = parse_format)]
        format: TableFormat,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's design density: uniform, linear:<a>, optimal.
        #[arg(long)]
        density: Option<String>,
        /// Also write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a built-in table scenario set.
    Table {
        #[arg(long)]
        reproduce: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv", value_parser = parse_format)]
        format: TableFormat,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo check of the limiting normal law from a JSON config.
    Normality {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> std::result::Result<TableFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_sample(path: &Path) -> Result<FunctionalSample> {
    FunctionalSample::read_csv(BufReader::new(File::open(path)?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn eval_points(spec: &str, sample: &FunctionalSample) -> Result<Vec<f64>> {
    let spec = spec.trim();
    if spec == "design" {
        return Ok(sample.grid().points().to_vec());
    }
    if let Some(k) = spec.strip_prefix("linspace:") {
        let k: usize = k
            .parse()
            .map_err(|_| Error::Parse(format!("bad point count in `{spec}`")))?;
        if k < 2 {
            return Err(Error::InvalidArgument("linspace needs at least 2 points".into()));
        }
        return Ok(linspace(0.0, 1.0, k));
    }
    spec.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad evaluation point `{t}`")))
        })
        .collect()
}

fn required<T>(value: Option<T>, flag: &str, method: Method) -> Result<T> {
    value.ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required for method {method}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::KernelInfo { kernel, p } => {
            let k: Kernel = kernel.parse()?;
            print_json(&tableau(&k, p)?.summary())
        }
        Command::Fit {
            input,
            p,
            nu,
            h,
            kernel,
            eval,
            output: out_path,
        } => {
            let sample = read_sample(&input)?;
            let k: Kernel = kernel.parse()?;
            let bandwidth = match h.trim() {
                "cv" => cross_validate(&sample, p, &k)?.h,
                "asym" => plugin_bandwidth(&sample, nu, p, &k, &|_| 1.0)?.h,
                other => other.parse()?,
            };
            eprintln!("bandwidth: {bandwidth}");
            let spec = FitSpec::new(p, nu, bandwidth, k)?;
            let points = eval_points(&eval, &sample)?;
            let est = curve_estimate(&sample, &spec, &points)?;
            let mut w = csv::Writer::from_writer(output(out_path.as_deref())?);
            w.write_record(["x", "estimate"])?;
            for (x, v) in est {
                w.write_record([x.to_string(), v.to_string()])?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Bandwidth {
            method,
            model,
            m,
            n,
            design_points,
            p,
            nu,
            kernel,
            density,
            weight,
            input,
        } => {
            let k: Kernel = kernel.parse()?;
            let w: WeightFn = weight.parse()?;
            let wf = |x: f64| w.eval(x);
            let result = match method {
                Method::Asymptotic | Method::Exact => {
                    let model: CovarianceModel = required(model, "model", method)?.parse()?;
                    let truth: Arc<dyn Regression> =
                        Arc::new(required(m, "m", method)?.parse::<CatalogRegression>()?);
                    let n = required(n, "n", method)?;
                    let f = design_density(&density, truth.clone(), &k, p, nu)?;
                    if method == Method::Asymptotic {
                        asymptotic_bandwidth(truth.as_ref(), &model, &f, n, nu, p, &k, &wf)?
                    } else {
                        let grid = quantile_grid(&f, design_points)?;
                        exact_optimal_bandwidth(truth.as_ref(), &model, grid.points(), n, nu, p, &k, &wf, IMSE_MESH)?
                    }
                }
                Method::Cv => cross_validate(&read_sample(&required(input, "input", method)?)?, p, &k)?,
                Method::Plugin => plugin_bandwidth(&read_sample(&required(input, "input", method)?)?, nu, p, &k, &wf)?,
            };
            print_json(&result)
        }
        Command::Simulate {
            config,
            out,
            format,
            workers,
            seed,
            density,
            report,
        } => {
            let mut cfg: ExperimentConfig = read_json(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = density {
                cfg.density = d;
            }
            let r = run_experiment(&cfg, workers)?;
            eprintln!("runtime: {:.2}s, failed replications: {}", r.runtime_secs, r.failures);
            for note in &r.notes {
                eprintln!("note: {note}");
            }
            emit_table(std::slice::from_ref(&r), format, BufWriter::new(File::create(&out)?))?;
            if let Some(path) = report {
                let mut f = BufWriter::new(File::create(path)?);
                serde_json::to_writer_pretty(&mut f, &r)?;
                writeln!(f)?;
            }
            Ok(())
        }
        Command::Table {
            reproduce,
            out,
            format,
            workers,
            replications,
            seed,
        } => {
            let mut reports: Vec<ExperimentReport> = Vec::new();
            for mut cfg in preset(&reproduce)? {
                if let Some(r) = replications {
                    cfg.replications = r;
                }
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                let r = run_experiment(&cfg, workers)?;
                eprintln!(
                    "n={} N={}: {:.2}s, failed replications: {}",
                    cfg.n, cfg.design_points, r.runtime_secs, r.failures
                );
                for note in &r.notes {
                    eprintln!("note: {note}");
                }
                reports.push(r);
            }
            emit_table(&reports, format, output(out.as_deref())?)
        }
        Command::Normality { config } => {
            let cfg: NormalityConfig = read_json(&config)?;
            print_json(&normality_check(&cfg)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
