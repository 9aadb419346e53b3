//! Trajectory tables read back from run directories: CSV and SVG output and
//! iterations-to-threshold comparisons between runs.
//!
//! CSV columns, in order: `iteration,attempts_cumulative,best_score,best_id`,
//! plus `scaled_score` (= `c / best_score`) when a display scale is set.

use std::path::Path;

use serde::Serialize;

use crate::db::load_run;
use crate::engine::compute_speedup;
use crate::error::{Error, Result};
use crate::model::{CandidateId, Direction, RunReport};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub iteration: u64,
    pub attempts_cumulative: u64,
    pub best_score: f64,
    pub best_id: CandidateId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub direction: Direction,
    pub rows: Vec<TrajectoryRow>,
    /// Reciprocal display scale `c`; adds the `scaled_score` column.
    pub scale_c: Option<f64>,
}

impl TrajectoryTable {
    pub fn from_report(report: &RunReport) -> Result<Self> {
        report.check_invariants()?;
        Ok(TrajectoryTable {
            direction: report.direction,
            rows: report
                .best_score_trajectory
                .iter()
                .map(|p| TrajectoryRow {
                    iteration: p.iteration,
                    attempts_cumulative: p.attempts_cumulative,
                    best_score: p.best_score,
                    best_id: p.best_id,
                })
                .collect(),
            scale_c: None,
        })
    }

    /// Reads a run directory and checks the report against the database.
    pub fn load(dir: &Path) -> Result<Self> {
        let run = load_run(dir)?;
        let corrupt = |message: String| Error::CorruptRun {
            path: dir.to_path_buf(),
            message,
        };
        let report = run.report.ok_or_else(|| corrupt("report.json is missing".into()))?;
        for p in &report.best_score_trajectory {
            let c = run
                .db
                .get(p.best_id)
                .map_err(|_| corrupt(format!("trajectory names unknown candidate {}", p.best_id)))?;
            if c.usable_score() != Some(p.best_score) {
                return Err(corrupt(format!(
                    "candidate {} does not have score {} recorded in the trajectory",
                    p.best_id, p.best_score
                )));
            }
        }
        TrajectoryTable::from_report(&report)
    }

    pub fn with_scale(mut self, c: f64) -> Self {
        self.scale_c = Some(c);
        self
    }

    pub fn scaled(&self, row: &TrajectoryRow) -> Option<f64> {
        self.scale_c.map(|c| c / row.best_score)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["iteration", "attempts_cumulative", "best_score", "best_id"];
        if self.scale_c.is_some() {
            header.push("scaled_score");
        }
        w.write_record(&header).map_err(csv_error)?;
        for row in &self.rows {
            let mut record = vec![
                row.iteration.to_string(),
                row.attempts_cumulative.to_string(),
                row.best_score.to_string(),
                row.best_id.to_string(),
            ];
            if let Some(s) = self.scaled(row) {
                record.push(s.to_string());
            }
            w.write_record(&record).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Protocol(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Protocol(format!("csv: {e}")))
    }

    /// Step chart of best score (or scaled score) against iteration.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const PAD: f64 = 50.0;
        let points: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| (r.iteration as f64, self.scaled(r).unwrap_or(r.best_score)))
            .filter(|(_, y)| y.is_finite())
            .collect();
        let label = if self.scale_c.is_some() { "scaled score" } else { "best score" };
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
             <line x1=\"{PAD}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
             <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{y0}\" stroke=\"black\"/>\n\
             <text x=\"{xm}\" y=\"{yl}\" text-anchor=\"middle\" font-size=\"14\">iteration</text>\n\
             <text x=\"15\" y=\"{ym}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 15 {ym})\">{label}</text>\n",
            y0 = H - PAD,
            x1 = W - PAD,
            xm = W / 2.0,
            yl = H - 10.0,
            ym = H / 2.0,
        );
        if let (Some(first), Some(last)) = (points.first(), points.last()) {
            let (xmin, xmax) = (first.0, last.0.max(first.0 + 1.0));
            let (mut ymin, mut ymax) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
            if ymax - ymin < 1e-12 {
                ymin -= 0.5;
                ymax += 0.5;
            }
            let sx = |x: f64| PAD + (x - xmin) / (xmax - xmin) * (W - 2.0 * PAD);
            let sy = |y: f64| H - PAD - (y - ymin) / (ymax - ymin) * (H - 2.0 * PAD);
            let mut path = String::new();
            for (i, &(x, y)) in points.iter().enumerate() {
                if i > 0 {
                    path.push_str(&format!(" {:.2},{:.2}", sx(x), sy(points[i - 1].1)));
                }
                path.push_str(&format!(" {:.2},{:.2}", sx(x), sy(y)));
            }
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
                path.trim_start()
            ));
            for (v, y) in [(ymin, sy(ymin)), (ymax, sy(ymax))] {
                svg.push_str(&format!(
                    "<text x=\"{:.2}\" y=\"{y:.2}\" text-anchor=\"end\" font-size=\"11\">{v:.6}</text>\n",
                    PAD - 4.0
                ));
            }
            for (v, x) in [(xmin, sx(xmin)), (last.0, sx(last.0))] {
                svg.push_str(&format!(
                    "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\">{v}</text>\n",
                    H - PAD + 16.0
                ));
            }
        }
        svg.push_str("</svg>\n");
        svg
    }

    /// First iteration whose best-so-far meets `threshold`.
    pub fn iterations_to_threshold(&self, threshold: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| self.direction.meets(r.best_score, threshold))
            .map(|r| r.iteration)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Protocol(format!("csv: {e}"))
}

/// Iterations-to-threshold of a baseline run `a` and a subject run `b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub threshold: f64,
    pub baseline_iterations: Option<u64>,
    pub subject_iterations: Option<u64>,
    /// `None` when either run never reached the threshold or the subject
    /// already met it with its initial program.
    pub speedup: Option<f64>,
}

impl Comparison {
    pub fn summary(&self) -> String {
        let show = |v: Option<u64>| v.map_or_else(|| "not reached".to_owned(), |i| i.to_string());
        let speedup = self
            .speedup
            .map_or_else(|| "undefined".to_owned(), |s| format!("{s}x"));
        format!(
            "threshold {}: run_a {}, run_b {}, speedup {}",
            self.threshold,
            show(self.baseline_iterations),
            show(self.subject_iterations),
            speedup
        )
    }
}

pub fn compare(a: &TrajectoryTable, b: &TrajectoryTable, threshold: f64) -> Result<Comparison> {
    if a.direction != b.direction {
        return Err(Error::config(
            "direction",
            "runs optimize in different directions and cannot be compared",
        ));
    }
    let ia = a.iterations_to_threshold(threshold);
    let ib = b.iterations_to_threshold(threshold);
    let speedup = match (ia, ib) {
        (Some(x), Some(y)) if y > 0 => Some(compute_speedup(x as f64, y as f64)),
        _ => None,
    };
    Ok(Comparison {
        threshold,
        baseline_iterations: ia,
        subject_iterations: ib,
        speedup,
    })
}
