//! Dataset and kernel files, metrics, cross-validation and experiment runs.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernelbank::{gram, spectral_transform, KernelSpec, LabeledDataset, SpectralMode};
use crate::objective::TrainingProblem;
use crate::proxy::{full_kernel_for_testing, RankOneUpdate};
use crate::refqp::{predict_labels, solve_svm_dual, QpConfig};
use crate::solvers::{SolveStatus, Solver, SolverConfig, SolverTrace};
use crate::symlin::{eig, SymmetricMatrix};

/// Kernel files whose asymmetry exceeds this are reported when loaded.
pub const ASYMMETRY_WARNING: f64 = 1e-8;
/// Binarization threshold applied to features before a Simpson kernel.
pub const DEFAULT_BINARIZE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    /// `label idx:val ...` with 1-based indices.
    Svmlight,
    /// Label in the first column.
    Csv,
}

impl DataFormat {
    /// `.csv` files are CSV, anything else svmlight.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Svmlight,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "svmlight" | "libsvm" => Ok(DataFormat::Svmlight),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::validation(format!("unknown data format '{other}'"))),
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_label(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad label '{token}'")))?;
    if v == 1.0 || v == -1.0 || v == 0.0 {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("label {token} is not -1, +1, 0 or 1")))
    }
}

/// Maps `{0, 1}` labels to `{-1, +1}`; a mix of 0 and -1 is an error.
fn normalize_labels(path: &Path, labels: &mut [f64], lines: &[usize]) -> Result<()> {
    let Some(first_zero) = labels.iter().position(|&l| l == 0.0) else {
        return Ok(());
    };
    if let Some(i) = labels.iter().position(|&l| l == -1.0) {
        let line = lines[first_zero.max(i)];
        return Err(parse_err(path, line, "labels mix 0 and -1"));
    }
    warn!("{}: labels are 0/1; mapping 0 to -1", path.display());
    for l in labels.iter_mut() {
        if *l == 0.0 {
            *l = -1.0;
        }
    }
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<LabeledDataset> {
    let text = read_to_string(path)?;
    let (points, mut labels, lines) = match format {
        DataFormat::Svmlight => parse_svmlight(path, &text)?,
        DataFormat::Csv => parse_csv_data(path, &text)?,
    };
    if points.is_empty() {
        return Err(Error::validation(format!("{}: no data points", path.display())));
    }
    normalize_labels(path, &mut labels, &lines)?;
    // dense storage with a common length
    let dim = points.iter().map(Vec::len).max().unwrap_or(0);
    let points = points
        .into_iter()
        .map(|mut p| {
            p.resize(dim, 0.0);
            p
        })
        .collect();
    LabeledDataset::new(points, labels)
}

type Parsed = (Vec<Vec<f64>>, Vec<f64>, Vec<usize>);

fn parse_svmlight(path: &Path, text: &str) -> Result<Parsed> {
    let (mut points, mut labels, mut lines) = (Vec::new(), Vec::new(), Vec::new());
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = parse_label(path, line_no, tokens.next().unwrap())?;
        let mut point = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(path, line_no, format!("expected index:value, got '{tok}'")))?;
            let i: usize = i
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad feature index '{i}'")))?;
            if i == 0 {
                return Err(parse_err(path, line_no, "feature indices are 1-based"));
            }
            if i <= last {
                return Err(parse_err(path, line_no, format!("feature index {i} is not increasing")));
            }
            let v: f64 = v
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad feature value '{v}'")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line_no, format!("non-finite feature value '{v}'")));
            }
            point.resize(i, 0.0);
            point[i - 1] = v;
            last = i;
        }
        points.push(point);
        labels.push(label);
        lines.push(line_no);
    }
    Ok((points, labels, lines))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn parse_csv_data(path: &Path, text: &str) -> Result<Parsed> {
    let (mut points, mut labels, mut lines) = (Vec::new(), Vec::new(), Vec::new());
    let mut width = None;
    for (k, rec) in csv_reader(text).records().enumerate() {
        let rec = rec?;
        let line_no = rec.position().map_or(k + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        // an optional header row
        if k == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            width = Some(rec.len());
            continue;
        }
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(parse_err(path, line_no, format!("expected {} fields, got {}", width.unwrap(), rec.len())));
        }
        let label = parse_label(path, line_no, &rec[0])?;
        let point = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line_no, format!("bad feature value '{f}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        points.push(point);
        labels.push(label);
        lines.push(line_no);
    }
    Ok((points, labels, lines))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn label_text(l: f64) -> &'static str {
    if l > 0.0 {
        "+1"
    } else {
        "-1"
    }
}

/// Writes with shortest round-trip formatting, so loading gives back the
/// same values.
pub fn save_dataset(path: &Path, data: &LabeledDataset, format: DataFormat) -> Result<()> {
    let mut out = String::new();
    match format {
        DataFormat::Svmlight => {
            for (p, &l) in data.points.iter().zip(&data.labels) {
                out.push_str(label_text(l));
                for (i, &v) in p.iter().enumerate() {
                    if v != 0.0 {
                        out.push_str(&format!(" {}:{v}", i + 1));
                    }
                }
                out.push('\n');
            }
        }
        DataFormat::Csv => {
            let dim = data.dim();
            for (p, &l) in data.points.iter().zip(&data.labels) {
                out.push_str(label_text(l));
                for i in 0..dim {
                    out.push_str(&format!(",{}", p.get(i).copied().unwrap_or(0.0)));
                }
                out.push('\n');
            }
        }
    }
    create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Square CSV matrix, symmetrized on load.
pub fn load_kernel(path: &Path) -> Result<SymmetricMatrix> {
    let text = read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in csv_reader(&text).records().enumerate() {
        let rec = rec?;
        let line_no = rec.position().map_or(k + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line_no, format!("bad kernel entry '{f}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(path, line_no, format!("expected {} values, got {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::validation(format!("{}: empty kernel file", path.display())));
    }
    if rows[0].len() != n {
        return Err(Error::validation(format!(
            "{}: kernel is {n}x{}, expected square",
            path.display(),
            rows[0].len()
        )));
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let asym = (&m - m.transpose()).amax();
    if asym > ASYMMETRY_WARNING {
        warn!("{}: kernel asymmetry {asym:.3e}; using (K + K^T)/2", path.display());
    }
    SymmetricMatrix::new(m)
}

pub fn save_kernel(path: &Path, k: &SymmetricMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for i in 0..k.dim() {
        w.write_record((0..k.dim()).map(|j| k[(i, j)].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Confusion counts with label +1 as the positive class; rates in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub accuracy: f64,
    /// 0 when there are no positive examples.
    pub recall: f64,
    pub average: f64,
}

impl Metrics {
    pub fn from_counts(true_pos: usize, true_neg: usize, false_pos: usize, false_neg: usize) -> Self {
        let total = true_pos + true_neg + false_pos + false_neg;
        let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let accuracy = pct(true_pos + true_neg, total);
        let recall = pct(true_pos, true_pos + false_neg);
        Metrics {
            true_pos,
            true_neg,
            false_pos,
            false_neg,
            accuracy,
            recall,
            average: 0.5 * (accuracy + recall),
        }
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }
}

pub fn compute_metrics(predicted: &[f64], actual: &[f64]) -> Result<Metrics> {
    if predicted.len() != actual.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fnn) = (0, 0, 0, 0);
    for (&p, &a) in predicted.iter().zip(actual) {
        if (p != 1.0 && p != -1.0) || (a != 1.0 && a != -1.0) {
            return Err(Error::validation("labels must be -1 or +1"));
        }
        match (p > 0.0, a > 0.0) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, tn, fp, fnn))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    IndefinitePg,
    IndefiniteAccpm,
    IndefiniteExchange,
    /// Mercer-input variant (projected gradient); needs a PSD kernel.
    Perturb,
    Denoise,
    Flip,
    Shift,
    /// SMO on the raw kernel; only a stationary point when it is indefinite.
    DirectSvm,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::IndefinitePg,
        Method::IndefiniteAccpm,
        Method::IndefiniteExchange,
        Method::Perturb,
        Method::Denoise,
        Method::Flip,
        Method::Shift,
        Method::DirectSvm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::IndefinitePg => "indefinite-pg",
            Method::IndefiniteAccpm => "indefinite-accpm",
            Method::IndefiniteExchange => "indefinite-exchange",
            Method::Perturb => "perturb",
            Method::Denoise => "denoise",
            Method::Flip => "flip",
            Method::Shift => "shift",
            Method::DirectSvm => "direct-svm",
        }
    }

    /// Outer solver for the kernel-learning methods.
    pub fn solver(self) -> Option<Solver> {
        match self {
            Method::IndefinitePg | Method::Perturb => Some(Solver::ProjectedGradient),
            Method::IndefiniteAccpm => Some(Solver::Accpm),
            Method::IndefiniteExchange => Some(Solver::Exchange),
            _ => None,
        }
    }

    pub fn uses_rho(self) -> bool {
        self.solver().is_some()
    }

    fn spectral_mode(self) -> Option<SpectralMode> {
        match self {
            Method::Denoise => Some(SpectralMode::Denoise),
            Method::Flip => Some(SpectralMode::Flip),
            Method::Shift => Some(SpectralMode::Shift),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts the method names plus the solver shorthands `pg`, `accpm` and
/// `exchange`.
impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "pg" => return Ok(Method::IndefinitePg),
            "accpm" => return Ok(Method::IndefiniteAccpm),
            "exchange" => return Ok(Method::IndefiniteExchange),
            _ => {}
        }
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown method '{s}'")))
    }
}

/// A trained classifier in a form that can be written to disk and applied to
/// new points.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub method: Method,
    pub kernel: KernelSpec,
    /// Feature threshold applied before evaluating the kernel.
    pub binarize: Option<f64>,
    pub c: f64,
    pub rho: f64,
    pub bias: f64,
    pub alpha: Vec<f64>,
    pub y: Vec<f64>,
    /// Training-block update `coef v v^T` (zero for the spectral baselines).
    pub update: RankOneUpdate,
    pub objective: f64,
    pub upper_bound: f64,
    pub gap: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct Fit {
    pub model: Model,
    pub trace: SolverTrace,
}

/// Trains `method` on the training kernel. The kernel description fields of
/// the returned model are left for the caller to fill in.
pub fn fit(method: Method, k_train: &SymmetricMatrix, y: &[f64], c: f64, rho: f64, cfg: &SolverConfig) -> Result<Fit> {
    let n = k_train.dim();
    if y.len() != n {
        return Err(Error::validation(format!("{} labels for a {n}x{n} kernel", y.len())));
    }
    let base = |alpha: DVector<f64>, bias: f64, objective: f64| Model {
        method,
        kernel: KernelSpec::Precomputed,
        binarize: None,
        c,
        rho,
        bias,
        alpha: alpha.iter().copied().collect(),
        y: y.to_vec(),
        update: RankOneUpdate {
            vector: DVector::zeros(n),
            coef: 0.0,
        },
        objective,
        upper_bound: objective,
        gap: 0.0,
        status: SolveStatus::Converged,
        iterations: 0,
    };
    if let Some(solver) = method.solver() {
        let problem = if method == Method::Perturb {
            TrainingProblem::perturb(k_train.clone(), y.to_vec(), c, rho)?
        } else {
            TrainingProblem::classification(k_train.clone(), y.to_vec(), c, rho)?
        };
        let (tm, trace) = solver.solve(&problem, cfg)?;
        let mut model = base(tm.alpha.clone(), tm.bias, tm.objective);
        model.update = tm.update;
        model.upper_bound = tm.upper_bound;
        model.gap = tm.gap;
        model.status = tm.status;
        model.iterations = tm.iterations;
        return Ok(Fit { model, trace });
    }
    let qp = QpConfig {
        allow_indefinite: method == Method::DirectSvm,
        ..cfg.qp
    };
    let k = match method.spectral_mode() {
        Some(mode) => spectral_transform(k_train, mode)?,
        None => k_train.clone(),
    };
    let sol = solve_svm_dual(&k, y, c, &qp)?;
    let mut model = base(sol.alpha, sol.bias, sol.objective);
    model.iterations = sol.iterations;
    Ok(Fit {
        model,
        trace: SolverTrace::default(),
    })
}

/// Rows `n_train..` against columns `..n_train`.
fn cross_block(full: &SymmetricMatrix, n_train: usize) -> DMatrix<f64> {
    let n = full.dim();
    full.as_matrix().view((n_train, 0), (n - n_train, n_train)).into_owned()
}

/// Labels for the points after the first `n_train` rows of `full`, which
/// holds the kernel over train ∪ test.
///
/// Kernel-learning models use the model's update on the training block and
/// project the whole matrix; spectral baselines transform the whole matrix;
/// the direct SVM uses it as is.
pub fn predict(model: &Model, full: &SymmetricMatrix) -> Result<Vec<f64>> {
    let n_train = model.alpha.len();
    let n = full.dim();
    if n <= n_train {
        return Err(Error::validation(format!(
            "full kernel has {n} rows, expected more than the {n_train} training points"
        )));
    }
    let cross = match (model.method.solver(), model.method.spectral_mode()) {
        (Some(_), _) => {
            let train = submatrix(full, &(0..n_train).collect::<Vec<_>>())?;
            let test_idx: Vec<usize> = (n_train..n).collect();
            let test = submatrix(full, &test_idx)?;
            let raw_cross = cross_block(full, n_train);
            let projected = full_kernel_for_testing(&train, &raw_cross, test.as_matrix(), &model.update)?;
            cross_block(&projected, n_train)
        }
        (None, Some(mode)) => cross_block(&spectral_transform(full, mode)?, n_train),
        (None, None) => cross_block(full, n_train),
    };
    let alpha = DVector::from_column_slice(&model.alpha);
    predict_labels(&alpha, &model.y, model.bias, &cross)
}

pub fn submatrix(k: &SymmetricMatrix, idx: &[usize]) -> Result<SymmetricMatrix> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= k.dim()) {
        return Err(Error::validation(format!("index {bad} out of range for a {0}x{0} kernel", k.dim())));
    }
    SymmetricMatrix::from_fn(idx.len(), |a, b| k[(idx[a], idx[b])])
}

fn parse_status(s: &str) -> Result<SolveStatus> {
    [
        SolveStatus::Converged,
        SolveStatus::MaxIterations,
        SolveStatus::MasterNonConvergence,
        SolveStatus::Stalled,
    ]
        .into_iter()
        .find(|st| st.to_string() == s)
        .ok_or_else(|| Error::validation(format!("unknown status '{s}'")))
}

/// Model file: `# key=value` header lines, then a CSV table with columns
/// `alpha,y,update`.
pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| out.push_str(&format!("# {k}={v}\n"));
    kv("method", model.method.to_string());
    kv("kernel", model.kernel.to_string());
    if let Some(t) = model.binarize {
        kv("binarize", t.to_string());
    }
    kv("c", model.c.to_string());
    kv("rho", model.rho.to_string());
    kv("bias", model.bias.to_string());
    kv("update_coef", model.update.coef.to_string());
    kv("objective", model.objective.to_string());
    kv("upper_bound", model.upper_bound.to_string());
    kv("gap", model.gap.to_string());
    kv("status", model.status.to_string());
    kv("iterations", model.iterations.to_string());
    out.push_str("alpha,y,update\n");
    for i in 0..model.alpha.len() {
        out.push_str(&format!("{},{},{}\n", model.alpha[i], model.y[i], model.update.vector[i]));
    }
    create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = read_to_string(path)?;
    let mut meta = std::collections::HashMap::new();
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| parse_err(path, line_no, "expected '# key=value'"))?;
            meta.insert(k.trim().to_string(), (v.trim().to_string(), line_no));
            continue;
        }
        if !header_seen {
            if line != "alpha,y,update" {
                return Err(parse_err(path, line_no, "expected header 'alpha,y,update'"));
            }
            header_seen = true;
            continue;
        }
        let vals = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        if vals.len() != 3 {
            return Err(parse_err(path, line_no, format!("expected 3 values, got {}", vals.len())));
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::validation(format!("{}: model has no coefficients", path.display())));
    }
    let get = |k: &str| -> Result<&(String, usize)> {
        meta.get(k)
            .ok_or_else(|| Error::validation(format!("{}: model is missing '{k}'", path.display())))
    };
    let num = |k: &str| -> Result<f64> {
        let (v, line) = get(k)?;
        v.parse().map_err(|_| parse_err(path, *line, format!("bad value for {k}: '{v}'")))
    };
    let y: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    if y.iter().any(|&l| l != 1.0 && l != -1.0) {
        return Err(Error::validation(format!("{}: model labels must be -1 or +1", path.display())));
    }
    Ok(Model {
        method: get("method")?.0.parse()?,
        kernel: get("kernel")?.0.parse()?,
        binarize: meta.contains_key("binarize").then(|| num("binarize")).transpose()?,
        c: num("c")?,
        rho: num("rho")?,
        bias: num("bias")?,
        alpha: rows.iter().map(|r| r[0]).collect(),
        y,
        update: RankOneUpdate {
            vector: DVector::from_iterator(rows.len(), rows.iter().map(|r| r[2])),
            coef: num("update_coef")?,
        },
        objective: num("objective")?,
        upper_bound: num("upper_bound")?,
        gap: num("gap")?,
        status: parse_status(&get("status")?.0)?,
        iterations: num("iterations")? as usize,
    })
}

/// Where the kernel of an experiment comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelSource {
    /// One entry per kernel-parameter grid point.
    Specs(Vec<KernelSpec>),
    /// Matrix over the training points followed by the test points.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    /// Independent test set; without it only cross-validation is reported.
    pub test_data: Option<PathBuf>,
    pub format: Option<DataFormat>,
    pub kernel: KernelSource,
    pub binarize: f64,
    pub method: Method,
    pub c_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub gap_tol: f64,
    pub max_iter: usize,
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.rho_grid.is_empty() {
            return Err(Error::validation("parameter grids must be nonempty"));
        }
        if let KernelSource::Specs(s) = &self.kernel {
            if s.is_empty() {
                return Err(Error::validation("kernel grid must be nonempty"));
            }
        }
        if self.folds < 2 {
            return Err(Error::validation(format!("folds must be >= 2, got {}", self.folds)));
        }
        if let Some(bad) = self.c_grid.iter().chain(&self.rho_grid).find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::validation(format!("grid values must be positive, got {bad}")));
        }
        if !(self.gap_tol >= 0.0) || self.max_iter == 0 {
            return Err(Error::validation("gap_tol must be >= 0 and max_iter > 0"));
        }
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment. Keys: `data`, `test_data`,
    /// `format`, `kernel` (specs separated by `;`), `kernel_file`,
    /// `binarize`, `method`, `c`, `rho` (comma-separated grids), `folds`,
    /// `seed`, `gap_tol`, `max_iter`, `output`. Relative paths are taken
    /// from `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut data = None;
        let mut test_data = None;
        let mut format = None;
        let mut specs = None;
        let mut kernel_file = None;
        let mut binarize = DEFAULT_BINARIZE;
        let mut method = None;
        let mut c_grid = None;
        let mut rho_grid = None;
        let mut folds = 5;
        let mut seed = 0;
        let mut gap_tol = 0.1;
        let mut max_iter = 2000;
        let mut output = None;
        let path = |v: &str| base_dir.join(v);
        let cfg_err = |line: usize, msg: String| parse_err(Path::new("config"), line, msg);
        let grid = |line: usize, v: &str| -> Result<Vec<f64>> {
            v.split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| cfg_err(line, format!("bad number '{s}'"))))
                .collect()
        };
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| cfg_err(line, format!("expected key = value, got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| v.parse::<u64>().map_err(|_| cfg_err(line, format!("bad integer '{v}' for {key}")));
            let float = |v: &str| v.parse::<f64>().map_err(|_| cfg_err(line, format!("bad number '{v}' for {key}")));
            match key {
                "data" => data = Some(path(value)),
                "test_data" => test_data = Some(path(value)),
                "format" => format = Some(value.parse()?),
                "kernel" => {
                    specs = Some(value.split(';').map(str::parse).collect::<Result<Vec<KernelSpec>>>()?);
                }
                "kernel_file" => kernel_file = Some(path(value)),
                "binarize" => binarize = float(value)?,
                "method" => method = Some(value.parse()?),
                "c" => c_grid = Some(grid(line, value)?),
                "rho" => rho_grid = Some(grid(line, value)?),
                "folds" => folds = int(value)? as usize,
                "seed" => seed = int(value)?,
                "gap_tol" => gap_tol = float(value)?,
                "max_iter" => max_iter = int(value)? as usize,
                "output" => output = Some(path(value)),
                other => return Err(cfg_err(line, format!("unknown key '{other}'"))),
            }
        }
        let kernel = match (specs, kernel_file) {
            (Some(_), Some(_)) => return Err(Error::validation("give either kernel or kernel_file, not both")),
            (Some(s), None) => KernelSource::Specs(s),
            (None, Some(f)) => KernelSource::File(f),
            (None, None) => return Err(Error::validation("config needs kernel or kernel_file")),
        };
        let need = |name: &str| Error::validation(format!("config is missing '{name}'"));
        let cfg = ExperimentConfig {
            data: data.ok_or_else(|| need("data"))?,
            test_data,
            format,
            kernel,
            binarize,
            method: method.ok_or_else(|| need("method"))?,
            c_grid: c_grid.ok_or_else(|| need("c"))?,
            rho_grid: rho_grid.unwrap_or_else(|| vec![1.0]),
            folds,
            seed,
            gap_tol,
            max_iter,
            output: output.ok_or_else(|| need("output"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        ExperimentConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            gap_tol: self.gap_tol,
            max_iter: self.max_iter,
            ..SolverConfig::default()
        }
    }
}

/// Stratified folds: each class is shuffled with the seed and dealt round
/// robin, continuing where the previous class stopped.
pub fn stratified_folds(labels: &[f64], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > labels.len() {
        return Err(Error::validation(format!("cannot split {} points into {folds} folds", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for class in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            out[next].push(i);
            next = (next + 1) % folds;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvRow {
    pub kernel: KernelSpec,
    pub c: f64,
    pub rho: f64,
    pub folds_used: usize,
    pub accuracy: f64,
    pub recall: f64,
    /// Mean over folds of the per-fold average.
    pub average: f64,
    /// Confusion counts summed over folds.
    pub counts: Metrics,
}

/// Gram matrix of `data`; features are binarized at `threshold` first for
/// the Simpson kernel.
pub fn dataset_kernel(data: &LabeledDataset, spec: &KernelSpec, threshold: f64) -> Result<SymmetricMatrix> {
    if *spec == KernelSpec::Simpson {
        gram(&data.binarize(threshold), spec)
    } else {
        gram(data, spec)
    }
}

/// Format from the extension unless given.
pub fn load_dataset_auto(path: &Path, format: Option<DataFormat>) -> Result<LabeledDataset> {
    load_dataset(path, format.unwrap_or_else(|| DataFormat::from_path(path)))
}

/// Kernel over train (and test when present) for every grid kernel.
struct KernelTable {
    kernels: Vec<(KernelSpec, SymmetricMatrix)>,
    n_train: usize,
}

fn load_data(cfg: &ExperimentConfig) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    let train = load_dataset_auto(&cfg.data, cfg.format)?;
    let test = cfg.test_data.as_ref().map(|p| load_dataset_auto(p, cfg.format)).transpose()?;
    Ok((train, test))
}

fn kernel_table(cfg: &ExperimentConfig, train: &LabeledDataset, test: Option<&LabeledDataset>) -> Result<KernelTable> {
    let all = match test {
        Some(t) => train.concat(t),
        None => train.clone(),
    };
    let kernels = match &cfg.kernel {
        KernelSource::Specs(specs) => specs
            .iter()
            .map(|spec| Ok((*spec, dataset_kernel(&all, spec, cfg.binarize)?)))
            .collect::<Result<Vec<_>>>()?,
        KernelSource::File(path) => {
            let k = load_kernel(path)?;
            if k.dim() != all.len() {
                return Err(Error::validation(format!(
                    "{}: kernel is {0}x{0} but there are {1} training and test points",
                    k.dim(),
                    all.len()
                )));
            }
            vec![(KernelSpec::Precomputed, k)]
        }
    };
    Ok(KernelTable {
        kernels,
        n_train: train.len(),
    })
}

/// Grid in evaluation order: kernels, then `C`, then `rho`.
fn grid_points(table: &KernelTable, cfg: &ExperimentConfig) -> Vec<(usize, f64, f64)> {
    let rhos: &[f64] = if cfg.method.uses_rho() { &cfg.rho_grid } else { &cfg.rho_grid[..1] };
    let mut out = Vec::new();
    for k in 0..table.kernels.len() {
        for &c in &cfg.c_grid {
            for &rho in rhos {
                out.push((k, c, rho));
            }
        }
    }
    out
}

/// Per-fold metrics for one grid point and fold, `None` when skipped.
fn evaluate_fold(
    cfg: &ExperimentConfig,
    k_train_all: &SymmetricMatrix,
    labels: &[f64],
    folds: &[Vec<usize>],
    fold: usize,
    c: f64,
    rho: f64,
) -> Result<Option<Metrics>> {
    let val = &folds[fold];
    let train: Vec<usize> = (0..folds.len())
        .filter(|&f| f != fold)
        .flat_map(|f| folds[f].iter().copied())
        .collect();
    let y: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
    if y.iter().all(|&l| l == y[0]) {
        warn!("fold {fold}: training part has a single class; skipped");
        return Ok(None);
    }
    let order: Vec<usize> = train.iter().chain(val).copied().collect();
    let full = submatrix(k_train_all, &order)?;
    let k_tr = submatrix(&full, &(0..train.len()).collect::<Vec<_>>())?;
    let fit = fit(cfg.method, &k_tr, &y, c, rho, &cfg.solver_config())?;
    if fit.model.status != SolveStatus::Converged {
        warn!("fold {fold}, C={c}, rho={rho}: {} ({})", fit.model.status, cfg.method);
    }
    let pred = predict(&fit.model, &full)?;
    let actual: Vec<f64> = val.iter().map(|&i| labels[i]).collect();
    compute_metrics(&pred, &actual).map(Some)
}

/// Best row: highest average, then smaller `C`, then larger `rho`, then
/// earlier grid position.
pub fn select_best(rows: &[CvRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.folds_used == 0 {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &rows[b];
                let better = r.average > cur.average
                    || (r.average == cur.average && (r.c < cur.c || (r.c == cur.c && r.rho > cur.rho)));
                Some(if better { i } else { b })
            }
        };
    }
    best
}

fn cross_validate_table(cfg: &ExperimentConfig, table: &KernelTable, labels: &[f64]) -> Result<(usize, Vec<CvRow>)> {
    cfg.validate()?;
    let folds = stratified_folds(labels, cfg.folds, cfg.seed)?;
    let grid = grid_points(table, cfg);
    let n_train = table.n_train;
    let train_kernels: Vec<SymmetricMatrix> = table
        .kernels
        .iter()
        .map(|(_, k)| submatrix(k, &(0..n_train).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..folds.len()).map(move |f| (g, f))).collect();
    // collect keeps job order, so the merge below does not depend on scheduling
    let results: Vec<Result<Option<Metrics>>> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (k, c, rho) = grid[g];
            evaluate_fold(cfg, &train_kernels[k], labels, &folds, f, c, rho)
        })
        .collect();
    let mut rows = Vec::with_capacity(grid.len());
    let mut it = results.into_iter();
    for &(k, c, rho) in &grid {
        let mut used = Vec::new();
        for _ in 0..folds.len() {
            if let Some(m) = it.next().unwrap()? {
                used.push(m);
            }
        }
        let cnt = used.len();
        let mean = |f: fn(&Metrics) -> f64| if cnt == 0 { 0.0 } else { used.iter().map(f).sum::<f64>() / cnt as f64 };
        let sum = |f: fn(&Metrics) -> usize| used.iter().map(f).sum::<usize>();
        rows.push(CvRow {
            kernel: table.kernels[k].0,
            c,
            rho,
            folds_used: cnt,
            accuracy: mean(|m| m.accuracy),
            recall: mean(|m| m.recall),
            average: mean(|m| m.average),
            counts: Metrics::from_counts(sum(|m| m.true_pos), sum(|m| m.true_neg), sum(|m| m.false_pos), sum(|m| m.false_neg)),
        });
    }
    let best = select_best(&rows).ok_or_else(|| Error::validation("every cross-validation fold was skipped"))?;
    Ok((best, rows))
}

/// Grid search with stratified k-fold cross-validation on the training data.
/// Returns the index of the selected row and the full table.
pub fn cross_validate(cfg: &ExperimentConfig) -> Result<(usize, Vec<CvRow>)> {
    cfg.validate()?;
    let (train, _) = load_data(cfg)?;
    let table = kernel_table(cfg, &train, None)?;
    cross_validate_table(cfg, &table, &train.labels)
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub best: CvRow,
    pub cv_table: Vec<CvRow>,
    /// Final model trained on all training data with the selected parameters.
    pub model: Model,
    pub trace: SolverTrace,
    /// Metrics on the independent test set.
    pub test_metrics: Option<Metrics>,
    pub test_predictions: Option<Vec<f64>>,
    pub n_train: usize,
    pub n_test: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Cross-validates, retrains with the selected parameters on all training
/// data, evaluates on the test set if one is configured, and writes
/// `cv.csv`, `metrics.csv`, `trace.csv` and `summary.csv` to the output
/// directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let table = kernel_table(cfg, &train, test.as_ref())?;
    let (best_idx, cv_table) = cross_validate_table(cfg, &table, &train.labels)?;
    let best = cv_table[best_idx].clone();
    let (spec, full) = table
        .kernels
        .iter()
        .find(|(s, _)| *s == best.kernel)
        .expect("selected kernel is in the table");
    let n_train = train.len();
    let train_idx: Vec<usize> = (0..n_train).collect();
    let k_train = submatrix(full, &train_idx)?;
    let es = eig(&k_train)?;
    let Fit { mut model, trace } = fit(cfg.method, &k_train, &train.labels, best.c, best.rho, &cfg.solver_config())?;
    model.kernel = *spec;
    model.binarize = (*spec == KernelSpec::Simpson).then_some(cfg.binarize);
    let (test_metrics, test_predictions) = match &test {
        Some(t) => {
            let pred = predict(&model, full)?;
            (Some(compute_metrics(&pred, &t.labels)?), Some(pred))
        }
        None => (None, None),
    };
    let report = ExperimentReport {
        best,
        cv_table,
        model,
        trace,
        test_metrics,
        test_predictions,
        n_train,
        n_test: test.as_ref().map_or(0, |t| t.len()),
        lambda_min: es.min_value(),
        lambda_max: es.max_value(),
    };
    write_report(cfg, &report)?;
    Ok(report)
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn metrics_fields(m: &Metrics) -> Vec<String> {
    vec![
        m.true_pos.to_string(),
        m.true_neg.to_string(),
        m.false_pos.to_string(),
        m.false_neg.to_string(),
        format!("{:.2}", m.accuracy),
        format!("{:.2}", m.recall),
        format!("{:.2}", m.average),
    ]
}

pub fn write_cv_table(path: &Path, rows: &[CvRow]) -> Result<()> {
    write_csv(
        path,
        &["kernel", "c", "rho", "folds_used", "accuracy", "recall", "average"],
        rows.iter()
            .map(|r| {
                vec![
                    r.kernel.to_string(),
                    r.c.to_string(),
                    r.rho.to_string(),
                    r.folds_used.to_string(),
                    format!("{:.4}", r.accuracy),
                    format!("{:.4}", r.recall),
                    format!("{:.4}", r.average),
                ]
            })
            .collect(),
    )
}

pub fn write_trace(path: &Path, trace: &SolverTrace) -> Result<()> {
    write_csv(
        path,
        &["iteration", "objective", "upper_bound", "gap", "seconds"],
        trace
            .records
            .iter()
            .map(|r| {
                vec![
                    r.iteration.to_string(),
                    r.objective.to_string(),
                    r.upper.to_string(),
                    r.gap.to_string(),
                    format!("{:.6}", r.seconds),
                ]
            })
            .collect(),
    )
}

fn write_report(cfg: &ExperimentConfig, rep: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(&cfg.output)?;
    write_cv_table(&cfg.output.join("cv.csv"), &rep.cv_table)?;
    let mut metric_rows = Vec::new();
    let mut cv = vec![cfg.method.to_string(), "cv".to_string()];
    cv.extend(metrics_fields(&rep.best.counts));
    // the cv rates are fold means, not rates of the summed counts
    cv[6] = format!("{:.2}", rep.best.accuracy);
    cv[7] = format!("{:.2}", rep.best.recall);
    cv[8] = format!("{:.2}", rep.best.average);
    metric_rows.push(cv);
    if let Some(m) = &rep.test_metrics {
        let mut row = vec![cfg.method.to_string(), "test".to_string()];
        row.extend(metrics_fields(m));
        metric_rows.push(row);
    }
    write_csv(
        &cfg.output.join("metrics.csv"),
        &["method", "split", "tp", "tn", "fp", "fn", "accuracy", "recall", "average"],
        metric_rows,
    )?;
    write_trace(&cfg.output.join("trace.csv"), &rep.trace)?;
    let m = &rep.model;
    let summary = [
        ("method", cfg.method.to_string()),
        ("kernel", rep.best.kernel.to_string()),
        ("n_train", rep.n_train.to_string()),
        ("n_test", rep.n_test.to_string()),
        ("lambda_min", rep.lambda_min.to_string()),
        ("lambda_max", rep.lambda_max.to_string()),
        ("c", rep.best.c.to_string()),
        ("rho", rep.best.rho.to_string()),
        ("cv_average", format!("{:.4}", rep.best.average)),
        ("objective", m.objective.to_string()),
        ("gap", m.gap.to_string()),
        ("status", m.status.to_string()),
        ("iterations", m.iterations.to_string()),
    ];
    write_csv(
        &cfg.output.join("summary.csv"),
        &["key", "value"],
        summary.into_iter().map(|(k, v)| vec![k.to_string(), v]).collect(),
    )
}
