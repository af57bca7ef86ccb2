//! Recall/precision scoring of detected cells against expert point
//! annotations, with greedy one-to-one nearest matching.

use std::fmt::Write as _;
use std::path::Path;

use crate::assembly::CellRecord;
use crate::error::{Error, Result};

/// One annotated object center, optionally with a radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub x: f64,
    pub y: f64,
    pub radius: Option<f64>,
}

/// Expert annotations per slice.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub slices: Vec<Vec<Annotation>>,
}

impl GroundTruth {
    /// Reads `slice,x,y[,r]` CSV (with or without a header line).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut slices: Vec<Vec<Annotation>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("slice") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 3 || fields.len() > 4 {
                return Err(Error::MalformedInput(format!(
                    "{}:{}: expected slice,x,y[,r]",
                    path.display(),
                    lineno + 1
                )));
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| {
                    Error::MalformedInput(format!(
                        "{}:{}: invalid {what} `{s}`",
                        path.display(),
                        lineno + 1
                    ))
                })
            };
            let slice = parse(fields[0], "slice index")? as usize;
            let x = parse(fields[1], "x")?;
            let y = parse(fields[2], "y")?;
            let radius = match fields.get(3).map(|s| s.trim()) {
                Some("") | None => None,
                Some(s) => Some(parse(s, "radius")?),
            };
            if slices.len() <= slice {
                slices.resize(slice + 1, Vec::new());
            }
            slices[slice].push(Annotation { x, y, radius });
        }
        Ok(Self { slices })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("slice,x,y,r\n");
        for (i, annotations) in self.slices.iter().enumerate() {
            for a in annotations {
                match a.radius {
                    Some(r) => writeln!(out, "{i},{},{},{r}", a.x, a.y).expect("string write"),
                    None => writeln!(out, "{i},{},{}", a.x, a.y).expect("string write"),
                }
            }
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn total(&self) -> usize {
        self.slices.iter().map(|s| s.len()).sum()
    }
}

/// One-to-one matching between detections and annotations of one slice.
#[derive(Debug, Clone, Default)]
pub struct MatchResult {
    /// (detection index, annotation index, distance) for every true positive.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

/// Greedy one-to-one matching in increasing centroid-to-annotation
/// distance; pairs farther than `tol` never match.
pub fn match_detections(
    detected: &[CellRecord],
    truth: &[Annotation],
    tol: f64,
) -> Result<MatchResult> {
    if tol <= 0.0 {
        return Err(Error::Parameter(format!(
            "matching tolerance must be positive, got {tol}"
        )));
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (di, d) in detected.iter().enumerate() {
        for (ti, t) in truth.iter().enumerate() {
            let dist = (d.centroid.0 - t.x).hypot(d.centroid.1 - t.y);
            if dist <= tol {
                candidates.push((dist, di, ti));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut det_used = vec![false; detected.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for (dist, di, ti) in candidates {
        if !det_used[di] && !truth_used[ti] {
            det_used[di] = true;
            truth_used[ti] = true;
            pairs.push((di, ti, dist));
        }
    }
    Ok(MatchResult {
        pairs,
        unmatched_detections: (0..detected.len()).filter(|&i| !det_used[i]).collect(),
        unmatched_truth: (0..truth.len()).filter(|&i| !truth_used[i]).collect(),
    })
}

/// Per-slice true/false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SliceCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Aggregated evaluation: counts, recall and precision. Ratios with an
/// empty denominator are reported as `None`, never as zero.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub per_slice: Vec<SliceCounts>,
}

impl EvalReport {
    pub fn f_measure(&self) -> Option<f64> {
        match (self.recall, self.precision) {
            (Some(r), Some(p)) if r + p > 0.0 => Some(2.0 * r * p / (r + p)),
            _ => None,
        }
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into());
        let mut out = String::from("slice,tp,fp,fn\n");
        for (i, s) in self.per_slice.iter().enumerate() {
            writeln!(out, "{i},{},{},{}", s.tp, s.fp, s.fn_).expect("string write");
        }
        writeln!(
            out,
            "total,{},{},{}\nrecall,{},,\nprecision,{},,",
            self.tp,
            self.fp,
            self.fn_,
            fmt(self.recall),
            fmt(self.precision)
        )
        .expect("string write");
        out
    }

    pub fn summary(&self) -> String {
        let pct = |v: Option<f64>| {
            v.map(|x| format!("{:.1}%", 100.0 * x))
                .unwrap_or_else(|| "undefined".into())
        };
        format!(
            "TP {} FP {} FN {} | recall {} precision {}",
            self.tp,
            self.fp,
            self.fn_,
            pct(self.recall),
            pct(self.precision)
        )
    }
}

/// Scores a set of per-slice matchings: recall = TP/(TP+FN),
/// precision = TP/(TP+FP).
pub fn score(matches: &[MatchResult]) -> EvalReport {
    let per_slice: Vec<SliceCounts> = matches
        .iter()
        .map(|m| SliceCounts {
            tp: m.pairs.len(),
            fp: m.unmatched_detections.len(),
            fn_: m.unmatched_truth.len(),
        })
        .collect();
    let tp: usize = per_slice.iter().map(|s| s.tp).sum();
    let fp: usize = per_slice.iter().map(|s| s.fp).sum();
    let fn_: usize = per_slice.iter().map(|s| s.fn_).sum();
    let ratio = |num: usize, den: usize| {
        if den > 0 {
            Some(num as f64 / den as f64)
        } else {
            None
        }
    };
    EvalReport {
        tp,
        fp,
        fn_,
        recall: ratio(tp, tp + fn_),
        precision: ratio(tp, tp + fp),
        per_slice,
    }
}

/// Matches every slice of a cell matrix against the ground truth and scores
/// the result.
pub fn evaluate(
    slices: &[Vec<CellRecord>],
    truth: &GroundTruth,
    tol: f64,
) -> Result<EvalReport> {
    let n = slices.len().max(truth.slices.len());
    let empty_cells: Vec<CellRecord> = Vec::new();
    let empty_truth: Vec<Annotation> = Vec::new();
    let mut matches = Vec::with_capacity(n);
    for i in 0..n {
        let cells = slices.get(i).unwrap_or(&empty_cells);
        let annotations = truth.slices.get(i).unwrap_or(&empty_truth);
        matches.push(match_detections(cells, annotations, tol)?);
    }
    Ok(score(&matches))
}
