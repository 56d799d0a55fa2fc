//! Quality metrics, interpolation baselines and aggregate reports.

mod metrics;

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_pipeline::{DataError, Dataset, SlicePair, Split};
use crate::resample::{upscale, upscale_nearest, UpscaleKernel};
use crate::sr_models::Generator;
use crate::trainer::{infer, TrainError};

pub use metrics::{
    gaussian_taps, mae, nrmse, score, ssim, vif, Scores, DATA_RANGE, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
    VIF_MIN_SIDE, VIF_SIGMA_N_SQ,
};

pub const SUMMARY_FILE: &str = "summary.json";
pub const SUMMARY_FORMAT: &str = "mrsr-summary/1";
/// Upscaling factor of every method.
pub const FACTOR: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{metric} needs at least {min}x{min} pixels, got {h}x{w}")]
    TooSmall { metric: &'static str, min: usize, h: usize, w: usize },
    #[error("degenerate reference: {0}")]
    DegenerateReference(String),
    #[error("unsupported method '{0}'")]
    UnknownMethod(String),
    #[error("{0} is not an interpolation baseline")]
    NotABaseline(Method),
    #[error("unknown test image id '{0}'")]
    UnknownImage(String),
    #[error("test split is empty")]
    EmptyTestSplit,
    #[error("image {image_id}: {source}")]
    Image {
        image_id: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] TrainError),
    #[error("i/o error on {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bilinear,
    Bicubic,
    Model,
}

impl Method {
    pub const BASELINES: [Method; 2] = [Method::Bilinear, Method::Bicubic];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bilinear => "bilinear",
            Method::Bicubic => "bicubic",
            Method::Model => "model",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "bilinear" => Ok(Method::Bilinear),
            "bicubic" => Ok(Method::Bicubic),
            "model" => Ok(Method::Model),
            other => Err(EvalError::UnknownMethod(other.into())),
        }
    }
}

/// x4 interpolation of an LR image, clamped to `[0, 1]`.
pub fn baseline_upscale(lr: ArrayView2<f32>, method: Method) -> Result<Array2<f32>, EvalError> {
    let kernel = match method {
        Method::Bilinear => UpscaleKernel::Bilinear,
        Method::Bicubic => UpscaleKernel::Bicubic,
        Method::Model => return Err(EvalError::NotABaseline(method)),
    };
    Ok(upscale(lr, FACTOR, kernel).mapv(|v| v.clamp(0.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub ssim: f64,
    pub nrmse: f64,
    pub mae: f64,
    pub vif: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }

    pub fn text(&self) -> String {
        format!("{:.4}±{:.4}", self.mean, self.std)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub ssim: Stat,
    pub nrmse: Stat,
    pub mae: Stat,
    pub vif: Stat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub method: Method,
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    /// Aggregates are always recomputed from the rows.
    pub fn new(method: Method, per_image: Vec<ImageMetrics>) -> Self {
        let aggregate = aggregate(&per_image);
        MetricsReport { method, per_image, aggregate }
    }
}

pub fn aggregate(rows: &[ImageMetrics]) -> Aggregate {
    Aggregate {
        ssim: Stat::of(rows.iter().map(|r| r.ssim)),
        nrmse: Stat::of(rows.iter().map(|r| r.nrmse)),
        mae: Stat::of(rows.iter().map(|r| r.mae)),
        vif: Stat::of(rows.iter().map(|r| r.vif)),
    }
}

/// Reconstruction of `pair.lr` by `method`.
pub fn reconstruct(
    pair: &SlicePair,
    method: Method,
    generator: Option<&Generator<f32>>,
) -> Result<Array2<f32>, EvalError> {
    match (method, generator) {
        (Method::Model, Some(g)) => Ok(infer(g, pair.lr.view())?),
        (Method::Model, None) => Err(EvalError::UnknownMethod("model (no checkpoint given)".into())),
        (m, _) => baseline_upscale(pair.lr.view(), m),
    }
}

/// Score `count` pairs fetched by index with the baselines and, when a
/// generator is given, the model. Reports come back in
/// bilinear, bicubic, model order with rows in index order.
pub fn evaluate_with<P>(
    count: usize,
    fetch: P,
    generator: Option<&Generator<f32>>,
) -> Result<Vec<MetricsReport>, EvalError>
where
    P: Fn(usize) -> Result<SlicePair, EvalError> + Sync,
{
    if count == 0 {
        return Err(EvalError::EmptyTestSplit);
    }
    let mut methods = Method::BASELINES.to_vec();
    if generator.is_some() {
        methods.push(Method::Model);
    }
    let rows: Vec<Vec<ImageMetrics>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let pair = fetch(i)?;
            let id = pair.slice_ref().image_id();
            let wrap = |e: EvalError| EvalError::Image { image_id: id.clone(), source: Box::new(e) };
            methods
                .iter()
                .map(|&m| {
                    let out = reconstruct(&pair, m, generator).map_err(wrap)?;
                    let sc = score(pair.hr.view(), out.view()).map_err(wrap)?;
                    Ok(ImageMetrics { image_id: id.clone(), ssim: sc.ssim, nrmse: sc.nrmse, mae: sc.mae, vif: sc.vif })
                })
                .collect()
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(methods
        .iter()
        .enumerate()
        .map(|(k, &m)| MetricsReport::new(m, rows.iter().map(|r| r[k].clone()).collect()))
        .collect())
}

pub fn evaluate_pairs(
    pairs: &[SlicePair],
    generator: Option<&Generator<f32>>,
) -> Result<Vec<MetricsReport>, EvalError> {
    evaluate_with(pairs.len(), |i| Ok(pairs[i].clone()), generator)
}

/// Evaluate every test slice of a prepared dataset, or the first `limit`.
pub fn evaluate_split(
    dataset: &Dataset,
    generator: Option<&Generator<f32>>,
    limit: Option<usize>,
) -> Result<Vec<MetricsReport>, EvalError> {
    let mut refs = dataset.refs(Split::Test);
    if let Some(n) = limit {
        refs.truncate(n);
    }
    evaluate_with(refs.len(), |i| Ok(dataset.load_pair(&refs[i])?), generator)
}

pub fn metrics_csv_name(method: Method) -> String {
    format!("metrics_{method}.csv")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub mean: f64,
    pub std: f64,
    pub text: String,
}

impl From<Stat> for SummaryCell {
    fn from(s: Stat) -> Self {
        SummaryCell { mean: s.mean, std: s.std, text: s.text() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub images: usize,
    pub ssim: SummaryCell,
    pub nrmse: SummaryCell,
    pub mae: SummaryCell,
    pub vif: SummaryCell,
}

/// Method-by-metric table of `mean±std` with the raw numbers alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub format: String,
    pub metrics: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn from_reports(reports: &[MetricsReport]) -> Summary {
        Summary {
            format: SUMMARY_FORMAT.into(),
            metrics: ["ssim", "nrmse", "mae", "vif"].map(String::from).to_vec(),
            rows: reports
                .iter()
                .map(|r| SummaryRow {
                    method: r.method,
                    images: r.per_image.len(),
                    ssim: r.aggregate.ssim.into(),
                    nrmse: r.aggregate.nrmse.into(),
                    mae: r.aggregate.mae.into(),
                    vif: r.aggregate.vif.into(),
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Summary, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }

    /// Plain-text table for terminals.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10}{:>18}{:>18}{:>18}{:>18}\n", "method", "SSIM", "NRMSE", "MAE", "VIF");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10}{:>18}{:>18}{:>18}{:>18}",
                r.method.as_str(),
                r.ssim.text,
                r.nrmse.text,
                r.mae.text,
                r.vif.text
            );
        }
        if let Some(r) = self.rows.first() {
            let _ = writeln!(out, "({} images)", r.images);
        }
        out
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> EvalError {
    EvalError::Io { path: path.to_path_buf(), reason: e.to_string() }
}

/// Write `metrics_<method>.csv` per report and `summary.json`.
pub fn write_reports(out_dir: &Path, reports: &[MetricsReport]) -> Result<Summary, EvalError> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    for r in reports {
        let path = out_dir.join(metrics_csv_name(r.method));
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        for row in &r.per_image {
            w.serialize(row).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    let summary = Summary::from_reports(reports);
    let path = out_dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n";
    std::fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(summary)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<ImageMetrics>, EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| io_err(path, e))).collect()
}

/// Width of the white separator between montage panels and rows.
pub const MONTAGE_GUTTER: usize = 4;
/// Panel order within each montage row.
pub const MONTAGE_PANELS: [&str; 5] = ["ground truth", "low resolution", "model", "bilinear", "bicubic"];

/// The five panels of one montage row, all at HR size. The LR panel is
/// nearest-neighbour enlarged so its pixels stay visible.
pub fn montage_panels(pair: &SlicePair, generator: &Generator<f32>) -> Result<[Array2<f32>; 5], EvalError> {
    Ok([
        pair.hr.clone(),
        upscale_nearest(pair.lr.view(), FACTOR),
        reconstruct(pair, Method::Model, Some(generator))?,
        baseline_upscale(pair.lr.view(), Method::Bilinear)?,
        baseline_upscale(pair.lr.view(), Method::Bicubic)?,
    ])
}

/// Top-left corner of panel `col` in row `row` for panels of `(h, w)`.
pub fn montage_origin(row: usize, col: usize, (h, w): (usize, usize)) -> (usize, usize) {
    (row * (h + MONTAGE_GUTTER), col * (w + MONTAGE_GUTTER))
}

/// Tile rows of panels left to right, top to bottom, on a white background.
pub fn assemble_montage(rows: &[[Array2<f32>; 5]]) -> Result<Array2<f32>, EvalError> {
    let first = rows.first().ok_or_else(|| EvalError::Shape("montage needs at least one row".into()))?;
    let dim = first[0].dim();
    if rows.iter().flatten().any(|p| p.dim() != dim) {
        return Err(EvalError::Shape("montage panels differ in size".into()));
    }
    let (h, w) = dim;
    let total_h = rows.len() * h + (rows.len() - 1) * MONTAGE_GUTTER;
    let total_w = 5 * w + 4 * MONTAGE_GUTTER;
    let mut out = Array2::ones((total_h, total_w));
    for (r, row) in rows.iter().enumerate() {
        for (c, panel) in row.iter().enumerate() {
            let (y, x) = montage_origin(r, c, dim);
            out.slice_mut(s![y..y + h, x..x + w]).assign(panel);
        }
    }
    Ok(out)
}

/// Montage for test images chosen by id (`<volume>_<slice:03>`).
pub fn compare(dataset: &Dataset, generator: &Generator<f32>, image_ids: &[String]) -> Result<Array2<f32>, EvalError> {
    let rows = image_ids
        .iter()
        .map(|id| match dataset.find(id) {
            Some((r, Split::Test)) => montage_panels(&dataset.load_pair(&r)?, generator),
            _ => Err(EvalError::UnknownImage(id.clone())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    assemble_montage(&rows)
}
