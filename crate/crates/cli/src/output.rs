//! Report envelope (`cdkn-report/1`), csv flattening and SVG plots.

use std::io::Write;
use std::path::Path;

use plotters::prelude::*;
use serde_json::{json, Map, Value};

use cdkn::Error;

pub const REPORT_SCHEMA: &str = "cdkn-report/1";

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NEGATIVE: u8 = 3;
pub const EXIT_LIMIT: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The requested verification came out negative.
    Negative,
    /// An enumeration was truncated where completeness was required.
    Limit,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Negative => "negative",
            Self::Limit => "limit",
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            Self::Ok => EXIT_OK,
            Self::Negative => EXIT_NEGATIVE,
            Self::Limit => EXIT_LIMIT,
        }
    }
}

/// What a command hands back: the result, its table rows for csv, and the
/// series to plot.
pub struct Outcome {
    pub status: Status,
    pub result: Value,
    pub rows: Vec<Value>,
    pub plot: Option<Plot>,
    /// Emit `result` as is, without the report envelope.
    pub raw: bool,
}

impl Outcome {
    pub fn new(status: Status, result: Value) -> Self {
        Self { status, result, rows: Vec::new(), plot: None, raw: false }
    }

    pub fn rows(mut self, rows: Vec<Value>) -> Self {
        self.rows = rows;
        self
    }

    pub fn plot(mut self, plot: Plot) -> Self {
        self.plot = Some(plot);
        self
    }
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

/// CLI-level failures beyond the library's.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {message}")]
    Input { path: String, message: String },
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(e) => core_kind(e),
            Self::Usage(_) => "usage",
            Self::Input { .. } => "input",
            Self::Output(_) => "output",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Input { .. } | Self::Output(_) => EXIT_INPUT,
            Self::Core(e) => match e {
                Error::SizeLimit { .. } => EXIT_LIMIT,
                Error::NotAnUpperGradient { .. } | Error::InsideBallViolation { .. } => EXIT_NEGATIVE,
                Error::GridTooCoarse { .. } | Error::UnsupportedCurvature(_) => EXIT_USAGE,
                _ => EXIT_INPUT,
            },
        }
    }
}

fn core_kind(e: &Error) -> &'static str {
    match e {
        Error::EmptyChainSet { .. } => "empty_chain_set",
        Error::OffGridTime { .. } => "off_grid_time",
        Error::ResolutionMismatch(..) => "resolution_mismatch",
        Error::SizeMismatch(..) => "size_mismatch",
        Error::InvalidMeasure(_) => "invalid_measure",
        Error::SolverFailure(_) => "solver_failure",
        Error::SizeLimit { .. } => "size_limit",
        Error::ZeroMassRestriction => "zero_mass_restriction",
        Error::UnsupportedCurvature(_) => "unsupported_curvature",
        Error::Domain(_) => "domain",
        Error::PreconditionViolated(_) => "precondition_violated",
        Error::NotAnUpperGradient { .. } => "not_an_upper_gradient",
        Error::InsideBallViolation { .. } => "inside_ball_violation",
        Error::GridTooCoarse { .. } => "grid_too_coarse",
        Error::Parse { .. } => "parse",
        Error::Metric(_) => "metric",
        Error::DisconnectedGraph(_) => "disconnected_graph",
        Error::UnknownExample(_) => "unknown_example",
        Error::Io(_) => "io",
    }
}

pub fn envelope(command: &str, config: &Value, outcome: &Outcome) -> Value {
    json!({
        "schema": REPORT_SCHEMA,
        "command": command,
        "config": config,
        "status": outcome.status.label(),
        "result": outcome.result,
    })
}

pub fn error_envelope(command: &str, config: &Value, err: &CliError) -> Value {
    let mut error = json!({ "kind": err.kind(), "message": err.to_string() });
    if let CliError::Core(Error::GridTooCoarse { min_k, .. }) = err {
        error["min_k"] = json!(min_k);
    }
    json!({
        "schema": REPORT_SCHEMA,
        "command": command,
        "config": config,
        "status": "error",
        "error": error,
    })
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One csv line per row; columns are the keys of the first row, nested
/// values are written as JSON.
pub fn to_csv(rows: &[Value]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let empty = Map::new();
    let header: Vec<String> = rows.first().and_then(Value::as_object).unwrap_or(&empty).keys().cloned().collect();
    let fail = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(&header).map_err(fail)?;
    for row in rows {
        w.write_record(header.iter().map(|h| cell(&row[h]))).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
}

pub fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| CliError::Output(e.to_string()))
        }
    }
}

pub fn render_plot(plot: &Plot, path: &Path) -> Result<(), CliError> {
    let fail = |e: String| CliError::Output(format!("plot {}: {e}", path.display()));
    let points = plot.series.iter().flat_map(|s| s.1.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |a: f64, b: f64| if b - a > 0.0 { 0.05 * (b - a) } else { 0.5 };
    let (px, py) = (pad(x0, x1), pad(y0, y1));
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| fail(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(&plot.title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d((x0 - px)..(x1 + px), (y0 - py)..(y1 + py))
        .map_err(|e| fail(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc(plot.x_label.as_str())
        .y_desc(plot.y_label.as_str())
        .draw()
        .map_err(|e| fail(e.to_string()))?;
    for (i, (name, data)) in plot.series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(data.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()), color))
            .map_err(|e| fail(e.to_string()))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| fail(e.to_string()))?;
    root.present().map_err(|e| fail(e.to_string()))
}
