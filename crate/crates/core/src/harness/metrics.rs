//! Run metrics: one row per evaluation, a documented CSV schema, and static
//! SVG line charts (one per metric, env steps on the x axis).

use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

/// One evaluation point. `steps_to_first_reward` is -1 until the training
/// stream has seen a nonzero extrinsic reward. `wall_time_ms` is recorded as
/// 0 in deterministic mode so equal configs produce identical records.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub env_steps: u64,
    pub mean_return: f64,
    pub median_return: f64,
    pub steps_to_first_reward: i64,
    /// Fraction of greedy evaluation steps that selected the extra action.
    pub extra_action_usage: f64,
    /// Fraction of training steps spent inside flights since the last row.
    pub flight_fraction: f64,
    /// Mean per-episode flight-start probability since the last row.
    pub mean_eps_levy: f64,
    /// Mean number of distinct states visited per evaluation episode.
    pub state_coverage: f64,
    pub wall_time_ms: u64,
}

/// Column order of `metrics.csv`; stable, documented in the README.
pub const CSV_COLUMNS: [&str; 9] = [
    "env_steps",
    "mean_return",
    "median_return",
    "steps_to_first_reward",
    "extra_action_usage",
    "flight_fraction",
    "mean_eps_levy",
    "state_coverage",
    "wall_time_ms",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<EvalRow>,
}

impl RunRecord {
    pub fn push(&mut self, row: EvalRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.env_steps <= last.env_steps {
                return Err(Error::Validation(
                    "evaluation rows must be strictly increasing in env_steps".into(),
                ));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{:?},{},{:?},{:?},{:?},{:?},{}\n",
                r.env_steps,
                r.mean_return,
                r.median_return,
                r.steps_to_first_reward,
                r.extra_action_usage,
                r.flight_fraction,
                r.mean_eps_levy,
                r.state_coverage,
                r.wall_time_ms,
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<RunRecord> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Validation("empty metrics csv".into()))?;
        if header != CSV_COLUMNS.join(",") {
            return Err(Error::Validation("unexpected metrics csv header".into()));
        }
        let mut record = RunRecord::default();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != CSV_COLUMNS.len() {
                return Err(Error::Validation("short metrics csv row".into()));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Validation(format!("bad number `{s}` in metrics csv")))
            };
            record.push(EvalRow {
                env_steps: f[0]
                    .parse()
                    .map_err(|_| Error::Validation("bad env_steps".into()))?,
                mean_return: parse(f[1])?,
                median_return: parse(f[2])?,
                steps_to_first_reward: f[3]
                    .parse()
                    .map_err(|_| Error::Validation("bad steps_to_first_reward".into()))?,
                extra_action_usage: parse(f[4])?,
                flight_fraction: parse(f[5])?,
                mean_eps_levy: parse(f[6])?,
                state_coverage: parse(f[7])?,
                wall_time_ms: f[8]
                    .parse()
                    .map_err(|_| Error::Validation("bad wall_time_ms".into()))?,
            })?;
        }
        Ok(record)
    }
}

/// Deterministic single-series SVG line chart.
fn line_chart(title: &str, xs: &[f64], ys: &[f64]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 52.0;
    let finite = |v: &f64| v.is_finite();
    let x_min = xs.iter().filter(|v| finite(v)).cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().filter(|v| finite(v)).cloned().fold(f64::NEG_INFINITY, f64::max);
    let y_min = ys.iter().filter(|v| finite(v)).cloned().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().filter(|v| finite(v)).cloned().fold(f64::NEG_INFINITY, f64::max);
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let y_span = if y_max > y_min { y_max - y_min } else { 1.0 };
    let px = |x: f64| M + (x - x_min) / x_span * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y_min) / y_span * (H - 2.0 * M);
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"24\" font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        W / 2.0
    ));
    svg.push_str(&format!(
        "  <line x1=\"{M}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M
    ));
    svg.push_str(&format!(
        "  <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        H - M
    ));
    svg.push_str(&format!(
        "  <text x=\"{M}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\">{x_min:?}</text>\n",
        H - M + 16.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{x_max:?}</text>\n",
        W - M,
        H - M + 16.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{y_min:?}</text>\n",
        M - 4.0,
        H - M
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{y_max:?}</text>\n",
        M - 4.0,
        M + 4.0
    ));
    if !points.is_empty() {
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `metrics.csv` plus one SVG chart per metric column into `out_dir`.
/// File contents are deterministic given the record. Returns the paths.
pub fn emit_metrics(record: &RunRecord, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let csv_path = out_dir.join("metrics.csv");
    std::fs::write(&csv_path, record.to_csv())?;
    written.push(csv_path);

    let xs: Vec<f64> = record.rows.iter().map(|r| r.env_steps as f64).collect();
    let series: [(&str, Vec<f64>); 7] = [
        ("mean_return", record.rows.iter().map(|r| r.mean_return).collect()),
        ("median_return", record.rows.iter().map(|r| r.median_return).collect()),
        (
            "steps_to_first_reward",
            record
                .rows
                .iter()
                .map(|r| r.steps_to_first_reward as f64)
                .collect(),
        ),
        (
            "extra_action_usage",
            record.rows.iter().map(|r| r.extra_action_usage).collect(),
        ),
        ("flight_fraction", record.rows.iter().map(|r| r.flight_fraction).collect()),
        ("mean_eps_levy", record.rows.iter().map(|r| r.mean_eps_levy).collect()),
        ("state_coverage", record.rows.iter().map(|r| r.state_coverage).collect()),
    ];
    for (name, ys) in series {
        let path = out_dir.join(format!("{name}.svg"));
        std::fs::write(&path, line_chart(name, &xs, &ys))?;
        written.push(path);
    }
    Ok(written)
}
