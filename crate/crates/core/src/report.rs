//! Result artifacts built from metric logs: the results table with delta
//! columns, quick-eval training curves, and the (math, NLI) Pareto frontier.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::TrainConfig;
use crate::mixer::MixRatio;
use crate::taskgen::Task;
use crate::trainer::{read_metrics, Metric, MetricEvent, Split};

pub const TABLE_TXT: &str = "results_table.txt";
pub const TABLE_CSV: &str = "results_table.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const CURVES_SVG: &str = "curves.svg";
pub const PARETO_CSV: &str = "pareto.csv";
pub const PARETO_SVG: &str = "pareto.svg";

/// Experiment names in the order rows appear in the results table.
pub const TABLE_ORDER: [&str; 7] = [
    "baseline",
    "math-only",
    "nli-only",
    "mixed-1-1",
    "mixed-3-1",
    "mixed-7-1",
    "mixed-15-1",
];

/// The stage that produces the shared starting checkpoint; it is not a
/// results-table row.
pub const FOUNDATION: &str = "foundation";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing baseline: no log named \"baseline\" or marked eval_only")]
    MissingBaseline,
    #[error("{experiment}: missing final {task} evaluation")]
    MissingFinalEval { experiment: String, task: Task },
    #[error("{experiment}: no composition (log has no config header)")]
    MissingRatio { experiment: String },
    #[error("no metric logs found in {0}")]
    NoLogs(PathBuf),
    #[error("{file}: {message}")]
    Parse { file: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ReportError>;

/// One experiment's metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub experiment: String,
    pub config: Option<TrainConfig>,
    pub events: Vec<MetricEvent>,
}

impl RunLog {
    /// Parses the JSONL text written by the trainer.
    pub fn parse(experiment: &str, text: &str) -> Result<Self> {
        let parse_err = |message: String| ReportError::Parse {
            file: experiment.to_string(),
            message,
        };
        let mut config = None;
        if let Some(first) = text.lines().next() {
            let value: serde_json::Value = serde_json::from_str(first).map_err(|e| parse_err(e.to_string()))?;
            if let Some(map) = value.get("config").and_then(|c| c.as_object()) {
                let mut cfg = TrainConfig::default();
                for (k, v) in map {
                    let v = v
                        .as_str()
                        .ok_or_else(|| parse_err(format!("config value of {k} is not a string")))?;
                    cfg.set(k, v).map_err(|e| parse_err(e.to_string()))?;
                }
                config = Some(cfg);
            }
        }
        let events = read_metrics(text).map_err(|e| parse_err(e.to_string()))?;
        Ok(Self {
            experiment: experiment.to_string(),
            config,
            events,
        })
    }

    pub fn is_baseline(&self) -> bool {
        self.experiment == "baseline" || self.config.as_ref().is_some_and(|c| c.eval_only)
    }

    /// Accuracy of the last full evaluation of `task`.
    pub fn final_accuracy(&self, task: Task) -> Option<f64> {
        self.events
            .iter()
            .rev()
            .find(|e| e.task == task && e.split == Split::Full && e.metric == Metric::Accuracy)
            .map(|e| e.value)
    }

    /// Quick-eval accuracy series of `task` as `(step, accuracy)`.
    pub fn quick_series(&self, task: Task) -> Vec<(u64, f64)> {
        self.events
            .iter()
            .filter(|e| e.task == task && e.split == Split::Quick && e.metric == Metric::Accuracy)
            .map(|e| (e.step, e.value))
            .collect()
    }
}

/// Reads every `*.metrics.jsonl` in `dir`, sorted by file name.
pub fn load_logs(dir: &Path) -> Result<Vec<RunLog>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".metrics.jsonl")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(ReportError::NoLogs(dir.to_path_buf()));
    }
    paths
        .iter()
        .map(|p| {
            let name = p
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".metrics.jsonl"))
                .unwrap_or_default();
            RunLog::parse(name, &std::fs::read_to_string(p)?)
        })
        .collect()
}

/// Table order: the known experiments first, any others by name; the
/// foundation stage is left out.
fn ordered(logs: &[RunLog]) -> Vec<&RunLog> {
    let rank = |name: &str| TABLE_ORDER.iter().position(|&n| n == name).unwrap_or(TABLE_ORDER.len());
    let mut rows: Vec<&RunLog> = logs.iter().filter(|l| l.experiment != FOUNDATION).collect();
    rows.sort_by(|a, b| {
        rank(&a.experiment)
            .cmp(&rank(&b.experiment))
            .then_with(|| a.experiment.cmp(&b.experiment))
    });
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    /// Batch composition in percent; `None` for the baseline.
    pub math_pct: Option<f64>,
    pub nli_pct: Option<f64>,
    /// Final full-eval accuracies as fractions.
    pub math_acc: f64,
    pub nli_acc: f64,
    /// Percentage-point differences from the baseline; `None` for the
    /// baseline itself.
    pub math_delta: Option<f64>,
    pub nli_delta: Option<f64>,
}

pub fn build_table(logs: &[RunLog]) -> Result<Vec<ResultRow>> {
    let baseline = logs
        .iter()
        .find(|l| l.is_baseline())
        .ok_or(ReportError::MissingBaseline)?;
    let finals = |log: &RunLog| -> Result<(f64, f64)> {
        let get = |task| {
            log.final_accuracy(task).ok_or_else(|| ReportError::MissingFinalEval {
                experiment: log.experiment.clone(),
                task,
            })
        };
        Ok((get(Task::Math)?, get(Task::Nli)?))
    };
    let (base_math, base_nli) = finals(baseline)?;
    ordered(logs)
        .into_iter()
        .map(|log| {
            let (math_acc, nli_acc) = finals(log)?;
            if log.is_baseline() {
                return Ok(ResultRow {
                    experiment: log.experiment.clone(),
                    math_pct: None,
                    nli_pct: None,
                    math_acc,
                    nli_acc,
                    math_delta: None,
                    nli_delta: None,
                });
            }
            let ratio: MixRatio = log
                .config
                .as_ref()
                .map(|c| c.ratio)
                .ok_or_else(|| ReportError::MissingRatio {
                    experiment: log.experiment.clone(),
                })?;
            Ok(ResultRow {
                experiment: log.experiment.clone(),
                math_pct: Some(ratio.math_percent()),
                nli_pct: Some(ratio.nli_percent()),
                math_acc,
                nli_acc,
                math_delta: Some(100.0 * (math_acc - base_math)),
                nli_delta: Some(100.0 * (nli_acc - base_nli)),
            })
        })
        .collect()
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "---".to_string(), |v| format!("{v:.1}%"))
}

fn delta(v: Option<f64>) -> String {
    v.map_or_else(|| "---".to_string(), |v| format!("{v:+.1}"))
}

pub const TABLE_HEADER: [&str; 7] = [
    "Experiment",
    "Math %",
    "NLI %",
    "Math Acc",
    "NLI Acc",
    "Math Δ",
    "NLI Δ",
];

/// Display cells of one row, accuracies in percent with one decimal.
pub fn render_cells(row: &ResultRow) -> [String; 7] {
    [
        row.experiment.clone(),
        pct(row.math_pct),
        pct(row.nli_pct),
        format!("{:.1}%", 100.0 * row.math_acc),
        format!("{:.1}%", 100.0 * row.nli_acc),
        delta(row.math_delta),
        delta(row.nli_delta),
    ]
}

/// Aligned plain-text table: first column left-aligned, the rest right.
pub fn render_table_text(rows: &[ResultRow]) -> String {
    let cells: Vec<[String; 7]> = std::iter::once(TABLE_HEADER.map(String::from))
        .chain(rows.iter().map(render_cells))
        .collect();
    let widths: Vec<usize> = (0..7)
        .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = " ".repeat(widths[c] - s.chars().count());
                if c == 0 {
                    format!("{s}{pad}")
                } else {
                    format!("{pad}{s}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(rule));
            out.push('\n');
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Full-precision CSV; baseline composition and deltas are empty cells.
pub fn render_table_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("experiment,math_pct,nli_pct,math_acc,nli_acc,math_delta,nli_delta\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.experiment,
            opt(r.math_pct),
            opt(r.nli_pct),
            r.math_acc,
            r.nli_acc,
            opt(r.math_delta),
            opt(r.nli_delta)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub experiment: String,
    pub x: f64,
    pub y: f64,
    pub dominated: bool,
}

/// True when `q` is at least as good as `p` on both axes and better on one.
pub fn dominates(q: (f64, f64), p: (f64, f64)) -> bool {
    q.0 >= p.0 && q.1 >= p.1 && (q.0 > p.0 || q.1 > p.1)
}

/// Flags dominated points and returns the frontier sorted by `x` (ties by
/// descending `y`, then name).
///
/// Sorting by `x` descending and sweeping keeps the running maximum `y`;
/// a point is dominated when an earlier point beats it on `y`, or matches
/// it on `y` with a larger `x`.
pub fn pareto_frontier(points: &[(String, f64, f64)]) -> (Vec<ParetoPoint>, Vec<ParetoPoint>) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .1
            .total_cmp(&points[a].1)
            .then(points[b].2.total_cmp(&points[a].2))
    });
    let mut dominated = vec![false; points.len()];
    let mut best_y = f64::NEG_INFINITY;
    let mut best_y_x = f64::NEG_INFINITY;
    for &i in &order {
        let (x, y) = (points[i].1, points[i].2);
        dominated[i] = y < best_y || (y == best_y && best_y_x > x);
        if y > best_y {
            best_y = y;
            best_y_x = x;
        }
    }
    let flagged: Vec<ParetoPoint> = points
        .iter()
        .zip(&dominated)
        .map(|((name, x, y), &d)| ParetoPoint {
            experiment: name.clone(),
            x: *x,
            y: *y,
            dominated: d,
        })
        .collect();
    let mut frontier: Vec<ParetoPoint> = flagged.iter().filter(|p| !p.dominated).cloned().collect();
    frontier.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then(b.y.total_cmp(&a.y))
            .then_with(|| a.experiment.cmp(&b.experiment))
    });
    (flagged, frontier)
}

/// Table rows as `(experiment, math %, NLI %)` points.
pub fn table_points(rows: &[ResultRow]) -> Vec<(String, f64, f64)> {
    rows.iter()
        .map(|r| (r.experiment.clone(), 100.0 * r.math_acc, 100.0 * r.nli_acc))
        .collect()
}

pub fn render_pareto_csv(points: &[ParetoPoint]) -> String {
    let mut out = String::from("experiment,math_acc,nli_acc,dominated\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.experiment, p.x, p.y, p.dominated);
    }
    out
}

/// Earliest step whose NLI quick accuracy is at least `drop_points`
/// percentage points below the step-0 value.
pub fn forgetting_onset(log: &RunLog, drop_points: f64) -> Option<u64> {
    let series = log.quick_series(Task::Nli);
    let start = series.iter().find(|(s, _)| *s == 0)?.1;
    series
        .iter()
        .find(|(_, acc)| 100.0 * (start - acc) >= drop_points)
        .map(|(s, _)| *s)
}

/// One quick-eval curve: `(experiment, task, points)`.
pub type Curve = (String, Task, Vec<(u64, f64)>);

/// Quick-eval curves in table order, NLI series before MATH series.
pub fn curves(logs: &[RunLog]) -> Vec<Curve> {
    let rows = ordered(logs);
    let mut out = Vec::new();
    for task in [Task::Nli, Task::Math] {
        for log in &rows {
            let series = log.quick_series(task);
            if !series.is_empty() {
                out.push((log.experiment.clone(), task, series));
            }
        }
    }
    out
}

pub fn render_curves_csv(curves: &[Curve]) -> String {
    let mut out = String::from("experiment,task,step,accuracy\n");
    for (name, task, series) in curves {
        for (step, acc) in series {
            let _ = writeln!(out, "{name},{task},{step},{acc}");
        }
    }
    out
}

const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
];

fn svg_open(out: &mut String, w: u32, h: u32) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

/// A plot frame with data ranges mapped onto a pixel rectangle.
struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + self.width * x / self.x_max.max(1e-12)
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height * (1.0 - (y - self.y_min) / (self.y_max - self.y_min).max(1e-12))
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (l, t, r, b) = (self.left, self.top, self.left + self.width, self.top + self.height);
        let _ = writeln!(
            out,
            r#"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            self.width, self.height
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-weight="bold">{title}</text>"#,
            (l + r) / 2.0,
            t - 10.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#,
            (l + r) / 2.0,
            b + 34.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{y_label}</text>"#,
            l - 38.0,
            (t + b) / 2.0,
            l - 38.0,
            (t + b) / 2.0
        );
        for i in 0..=5 {
            let v = self.y_min + (self.y_max - self.y_min) * f64::from(i) / 5.0;
            let y = self.py(v);
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{y:.1}" x2="{l:.1}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.0}</text>"#,
                l - 4.0,
                l - 6.0,
                y + 4.0
            );
            let xv = self.x_max * f64::from(i) / 5.0;
            let x = self.px(xv);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.1}" y1="{b:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{xv:.0}</text>"#,
                b + 4.0,
                b + 18.0
            );
        }
    }
}

/// Two panels: (a) NLI and (b) MATH quick accuracy against step.
pub fn render_curves_svg(curves: &[Curve]) -> String {
    let mut names: Vec<&str> = Vec::new();
    for (name, _, _) in curves {
        if !names.contains(&name.as_str()) {
            names.push(name);
        }
    }
    let x_max = curves
        .iter()
        .flat_map(|(_, _, s)| s.iter().map(|(step, _)| *step as f64))
        .fold(1.0, f64::max);
    let mut out = String::new();
    svg_open(&mut out, 960, 420);
    for (panel, (task, title)) in [(Task::Nli, "(a) NLI accuracy"), (Task::Math, "(b) MATH accuracy")]
        .into_iter()
        .enumerate()
    {
        let frame = Frame {
            left: 70.0 + 450.0 * panel as f64,
            top: 40.0,
            width: 360.0,
            height: 280.0,
            x_max,
            y_min: 0.0,
            y_max: 100.0,
        };
        frame.axes(&mut out, title, "step", "quick-eval accuracy (%)");
        for (name, t, series) in curves.iter().filter(|(_, t, _)| *t == task) {
            let color = PALETTE[names.iter().position(|n| n == name).unwrap_or(0) % PALETTE.len()];
            let pts: Vec<String> = series
                .iter()
                .map(|(s, a)| format!("{:.1},{:.1}", frame.px(*s as f64), frame.py(100.0 * a)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{name} {t}</title></polyline>"#,
                pts.join(" ")
            );
        }
    }
    for (i, name) in names.iter().enumerate() {
        let x = 70.0 + 115.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="395" x2="{:.1}" y2="395" stroke="{color}" stroke-width="3"/><text x="{:.1}" y="399">{name}</text>"#,
            x + 18.0,
            x + 22.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter of (math, NLI) accuracy with the frontier drawn as a step line.
pub fn render_pareto_svg(points: &[ParetoPoint], frontier: &[ParetoPoint]) -> String {
    let x_max = points.iter().map(|p| p.x).fold(10.0, f64::max) * 1.1;
    let mut out = String::new();
    svg_open(&mut out, 560, 440);
    let frame = Frame {
        left: 70.0,
        top: 40.0,
        width: 440.0,
        height: 320.0,
        x_max,
        y_min: 0.0,
        y_max: 100.0,
    };
    frame.axes(
        &mut out,
        "Math vs NLI accuracy",
        "MATH accuracy (%)",
        "NLI accuracy (%)",
    );
    let pts: Vec<String> = frontier
        .iter()
        .map(|p| format!("{:.1},{:.1}", frame.px(p.x), frame.py(p.y)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="black" stroke-dasharray="4 3" points="{}"/>"#,
        pts.join(" ")
    );
    for p in points {
        let (x, y) = (frame.px(p.x), frame.py(p.y));
        let fill = if p.dominated { "white" } else { "black" };
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="{fill}" stroke="black"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            x + 6.0,
            y - 6.0,
            p.experiment
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="70" y="420">filled: frontier; hollow: dominated</text>"#
    );
    out.push_str("</svg>\n");
    out
}

/// Writes the six report files into `out_dir` and returns their paths.
pub fn write_report(logs: &[RunLog], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = build_table(logs)?;
    let (flagged, frontier) = pareto_frontier(&table_points(&rows));
    let curve_set = curves(logs);
    std::fs::create_dir_all(out_dir)?;
    let files = [
        (TABLE_TXT, render_table_text(&rows)),
        (TABLE_CSV, render_table_csv(&rows)),
        (CURVES_CSV, render_curves_csv(&curve_set)),
        (CURVES_SVG, render_curves_svg(&curve_set)),
        (PARETO_CSV, render_pareto_csv(&flagged)),
        (PARETO_SVG, render_pareto_svg(&flagged, &frontier)),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
