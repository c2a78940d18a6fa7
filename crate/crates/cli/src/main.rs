use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use indefsvm::bench::{
    self, dataset_kernel, fit, load_dataset_auto, load_kernel, load_model, run_experiment, save_kernel, save_model,
    DataFormat, ExperimentConfig, Method, Model, DEFAULT_BINARIZE,
};
use indefsvm::kernelbank::{spectral_transform, KernelSpec, SpectralMode};
use indefsvm::objective::SmoothingConfig;
use indefsvm::solvers::{SolveStatus, SolverConfig};
use indefsvm::symlin::eig;
use indefsvm::{Error, SymmetricMatrix};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "indefsvm", version, about = "SVM training with indefinite kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write it to a file.
    Train {
        /// Kernel file (CSV, n x n over the training points) or kernel spec
        /// such as `sigmoid:a=0.5,b=-0.5`.
        #[arg(long)]
        kernel: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(short = 'C', long = "c")]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 0.1)]
        gap_tol: f64,
        #[arg(long, default_value_t = 2000)]
        max_iter: usize,
        #[arg(long)]
        step_c: Option<f64>,
        /// Smoothing parameter, or `auto`.
        #[arg(long, default_value = "auto")]
        smooth_eps: String,
        /// Feature threshold for the Simpson kernel.
        #[arg(long, default_value_t = DEFAULT_BINARIZE)]
        binarize: f64,
        #[arg(long)]
        format: Option<DataFormat>,
        /// Per-iteration trace (iteration, objective, upper bound, gap, seconds).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate a parameter grid, retrain and report.
    Cv {
        #[arg(long)]
        config: PathBuf,
    },
    /// Label test points with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        test_data: PathBuf,
        /// Kernel over train then test points, required for models trained on
        /// a kernel file.
        #[arg(long)]
        full_kernel: Option<PathBuf>,
        #[arg(long)]
        format: Option<DataFormat>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a spectral transform to a kernel file.
    Transform {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        mode: SpectralMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print size and extreme eigenvalues of a kernel.
    Spectrum {
        /// Kernel file, or a kernel spec together with `--data`.
        #[arg(long)]
        kernel: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BINARIZE)]
        binarize: f64,
        #[arg(long)]
        format: Option<DataFormat>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::Parse { .. } => EXIT_VALIDATION,
        Error::Io(_) => EXIT_IO,
        Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => EXIT_IO,
        Error::Csv(_) => EXIT_VALIDATION,
        Error::EigenNonConvergence { .. } | Error::NonConvergence { .. } | Error::DegenerateLocalization(_) => {
            EXIT_NONCONVERGENCE
        }
    }
}

/// A kernel argument is a file when the path exists, a spec otherwise.
fn kernel_arg(arg: &str) -> Result<Result<PathBuf, KernelSpec>, Error> {
    let path = Path::new(arg);
    if path.is_file() {
        return Ok(Ok(path.to_path_buf()));
    }
    match arg.parse::<KernelSpec>() {
        Ok(spec) => Ok(Err(spec)),
        Err(_) if arg.contains(['/', '\\']) || arg.ends_with(".csv") => Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{arg}: no such kernel file"),
        ))),
        Err(e) => Err(e),
    }
}

fn smoothing(arg: &str) -> Result<Option<SmoothingConfig>, Error> {
    if arg.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    let eps: f64 = arg
        .parse()
        .map_err(|_| Error::Validation(format!("--smooth-eps must be a number or 'auto', got '{arg}'")))?;
    SmoothingConfig::new(eps).map(Some)
}

fn train(args: Command) -> Result<u8, Error> {
    let Command::Train {
        kernel,
        data,
        method,
        c,
        rho,
        gap_tol,
        max_iter,
        step_c,
        smooth_eps,
        binarize,
        format,
        trace,
        out,
    } = args
    else {
        unreachable!()
    };
    let data = load_dataset_auto(&data, format)?;
    let (spec, k) = match kernel_arg(&kernel)? {
        Ok(path) => {
            let k = load_kernel(&path)?;
            if k.dim() != data.len() {
                return Err(Error::Validation(format!(
                    "kernel is {0}x{0} but the data has {1} points",
                    k.dim(),
                    data.len()
                )));
            }
            (KernelSpec::Precomputed, k)
        }
        Err(spec) => (spec, dataset_kernel(&data, &spec, binarize)?),
    };
    let cfg = SolverConfig {
        gap_tol,
        max_iter,
        step_c,
        smoothing: smoothing(&smooth_eps)?,
        ..SolverConfig::default()
    };
    let mut fitted = fit(method, &k, &data.labels, c, rho, &cfg)?;
    fitted.model.kernel = spec;
    fitted.model.binarize = (spec == KernelSpec::Simpson).then_some(binarize);
    save_model(&out, &fitted.model)?;
    if let Some(path) = trace {
        bench::write_trace(&path, &fitted.trace)?;
    }
    let m = &fitted.model;
    println!(
        "method={} status={} iterations={} objective={} upper_bound={} gap={}",
        m.method, m.status, m.iterations, m.objective, m.upper_bound, m.gap
    );
    if m.status == SolveStatus::Converged {
        Ok(0)
    } else {
        eprintln!("warning: solver stopped before the gap tolerance ({}); model written", m.status);
        Ok(EXIT_NONCONVERGENCE)
    }
}

fn cv(config: &Path) -> Result<u8, Error> {
    let cfg = ExperimentConfig::load(config)?;
    let rep = run_experiment(&cfg)?;
    println!(
        "best kernel={} C={} rho={} cv_average={:.2}",
        rep.best.kernel, rep.best.c, rep.best.rho, rep.best.average
    );
    if let Some(m) = &rep.test_metrics {
        println!("test accuracy={:.2} recall={:.2} average={:.2}", m.accuracy, m.recall, m.average);
    }
    println!("wrote {}", cfg.output.display());
    if rep.model.status == SolveStatus::Converged {
        Ok(0)
    } else {
        eprintln!("warning: final model stopped with status {}", rep.model.status);
        Ok(EXIT_NONCONVERGENCE)
    }
}

fn full_kernel(model: &Model, train: &Path, test: &Path, file: Option<&Path>, format: Option<DataFormat>) -> Result<(SymmetricMatrix, Vec<f64>), Error> {
    let train = load_dataset_auto(train, format)?;
    let test = load_dataset_auto(test, format)?;
    if train.len() != model.alpha.len() {
        return Err(Error::Validation(format!(
            "model has {} coefficients but the training data has {} points",
            model.alpha.len(),
            train.len()
        )));
    }
    let n = train.len() + test.len();
    let k = match (file, model.kernel) {
        (Some(path), _) => {
            let k = load_kernel(path)?;
            if k.dim() != n {
                return Err(Error::Validation(format!("full kernel is {0}x{0}, expected {n}x{n}", k.dim())));
            }
            k
        }
        (None, KernelSpec::Precomputed) => {
            return Err(Error::Validation(
                "model was trained on a kernel file; pass --full-kernel".to_string(),
            ))
        }
        (None, spec) => dataset_kernel(&train.concat(&test), &spec, model.binarize.unwrap_or(DEFAULT_BINARIZE))?,
    };
    Ok((k, test.labels))
}

fn predict(model: &Path, train: &Path, test: &Path, file: Option<&Path>, format: Option<DataFormat>, out: &Path) -> Result<u8, Error> {
    let model = load_model(model)?;
    let (k, labels) = full_kernel(&model, train, test, file, format)?;
    let pred = bench::predict(&model, &k)?;
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["label"])?;
    for p in &pred {
        w.write_record([if *p > 0.0 { "1" } else { "-1" }])?;
    }
    w.flush()?;
    let m = bench::compute_metrics(&pred, &labels)?;
    println!("accuracy={:.2} recall={:.2} average={:.2}", m.accuracy, m.recall, m.average);
    Ok(0)
}

fn spectrum(kernel: &str, data: Option<&Path>, binarize: f64, format: Option<DataFormat>) -> Result<u8, Error> {
    let k = match (kernel_arg(kernel)?, data) {
        (Ok(path), _) => load_kernel(&path)?,
        (Err(spec), Some(data)) => dataset_kernel(&load_dataset_auto(data, format)?, &spec, binarize)?,
        (Err(_), None) => return Err(Error::Validation("a kernel spec needs --data".to_string())),
    };
    let es = eig(&k)?;
    println!("n,lambda_min,lambda_max");
    println!("{},{},{}", k.dim(), es.min_value(), es.max_value());
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        cmd @ Command::Train { .. } => train(cmd),
        Command::Cv { config } => cv(&config),
        Command::Predict {
            model,
            train_data,
            test_data,
            full_kernel,
            format,
            out,
        } => predict(&model, &train_data, &test_data, full_kernel.as_deref(), format, &out),
        Command::Transform { kernel, mode, out } => {
            save_kernel(&out, &spectral_transform(&load_kernel(&kernel)?, mode)?)?;
            Ok(0)
        }
        Command::Spectrum {
            kernel,
            data,
            binarize,
            format,
        } => spectrum(&kernel, data.as_deref(), binarize, format),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
