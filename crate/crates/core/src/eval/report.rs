use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::data::{Dataset, Group, Sample};
use crate::error::{Error, Result};
use crate::model::{compose_global, forward, ModelParams, Prediction};
use crate::real::Real;
use crate::N_TASKS;

/// Fixed 4-decimal rendering used by every text and SVG report.
pub fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

pub fn fmt_opt4(x: Option<f64>) -> String {
    x.map(fmt4).unwrap_or_else(|| "n/a".into())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "n/a".into())
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s == "n/a" {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("bad number {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_subscore: [Metrics; N_TASKS],
    /// Metrics of the composed global score.
    pub global: Metrics,
    /// Global-score metrics per group present in the evaluated set.
    pub per_group: BTreeMap<Group, Metrics>,
    pub n_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub subject_id: String,
    pub group: Group,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub points: Vec<ScatterPoint>,
}

/// Metrics for given predictions of the listed samples.
pub fn evaluate_predictions(samples: &[&Sample], preds: &[Prediction]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    if samples.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} samples vs {} predictions",
            samples.len(),
            preds.len()
        )));
    }
    let per_subscore = (0..N_TASKS)
        .map(|j| {
            let y: Vec<f64> = samples.iter().map(|s| s.targets[j]).collect();
            let yh: Vec<f64> = preds.iter().map(|p| p.y_hat[j]).collect();
            Metrics::compute(&y, &yh)
        })
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<ScatterPoint> = samples
        .iter()
        .zip(preds)
        .map(|(s, p)| ScatterPoint {
            subject_id: s.subject_id.clone(),
            group: s.group,
            actual: s.targets.iter().sum(),
            predicted: compose_global(p),
        })
        .collect();
    let global_of = |pts: &[&ScatterPoint]| {
        let y: Vec<f64> = pts.iter().map(|p| p.actual).collect();
        let yh: Vec<f64> = pts.iter().map(|p| p.predicted).collect();
        Metrics::compute(&y, &yh)
    };
    let all: Vec<&ScatterPoint> = points.iter().collect();
    let global = global_of(&all)?;
    let mut per_group = BTreeMap::new();
    for g in Group::ALL {
        let pts: Vec<&ScatterPoint> = points.iter().filter(|p| p.group == g).collect();
        if !pts.is_empty() {
            per_group.insert(g, global_of(&pts)?);
        }
    }
    Ok(Evaluation {
        report: MetricsReport {
            per_subscore: per_subscore.try_into().unwrap(),
            global,
            per_group,
            n_eval: samples.len(),
        },
        points,
    })
}

/// Runs the model on the listed subjects and scores the predictions.
pub fn evaluate<F: Real>(
    params: &ModelParams<F>,
    data: &Dataset,
    ids: &BTreeSet<String>,
) -> Result<Evaluation> {
    if ids.is_empty() {
        return Err(Error::Data("empty evaluation id set".into()));
    }
    let samples = data.select(ids)?;
    let vols: Vec<_> = samples.iter().map(|s| &s.volume).collect();
    let preds = forward(params, &vols)?;
    evaluate_predictions(&samples, &preds)
}

const METRICS_HEADER: &str = "scope,n,mae,rmse,r";

impl MetricsReport {
    fn rows(&self) -> Vec<(String, &Metrics)> {
        let mut rows: Vec<(String, &Metrics)> = self
            .per_subscore
            .iter()
            .enumerate()
            .map(|(j, m)| (format!("q{}", j + 1), m))
            .collect();
        rows.push(("global".into(), &self.global));
        for (g, m) in &self.per_group {
            rows.push((format!("group:{g}"), m));
        }
        rows
    }

    /// Full-precision CSV; [`MetricsReport::from_csv`] reads it back exactly.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for (scope, m) in self.rows() {
            let _ = writeln!(s, "{scope},{},{},{},{}", m.n, m.mae, m.rmse, fmt_opt(m.r));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(METRICS_HEADER) {
            return Err(Error::Data("metrics CSV: bad header".into()));
        }
        let mut per_subscore = Vec::new();
        let mut global = None;
        let mut per_group = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let bad = |m: String| Error::Data(format!("metrics CSV line {}: {m}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields".into()));
            }
            let m = Metrics {
                n: f[1].parse().map_err(|_| bad("bad n".into()))?,
                mae: f[2].parse().map_err(|_| bad("bad mae".into()))?,
                rmse: f[3].parse().map_err(|_| bad("bad rmse".into()))?,
                r: parse_opt(f[4]).map_err(bad)?,
            };
            match f[0] {
                "global" => global = Some(m),
                s if s.starts_with("group:") => {
                    let g: Group = s["group:".len()..].parse().map_err(bad)?;
                    per_group.insert(g, m);
                }
                s if s.starts_with('q') => per_subscore.push(m),
                other => return Err(bad(format!("unknown scope {other}"))),
            }
        }
        let global = global.ok_or_else(|| Error::Data("metrics CSV: no global row".into()))?;
        let per_subscore: [Metrics; N_TASKS] = per_subscore
            .try_into()
            .map_err(|_| Error::Data("metrics CSV: need 13 item rows".into()))?;
        Ok(MetricsReport {
            per_subscore,
            n_eval: global.n,
            global,
            per_group,
        })
    }

    /// Fixed-width text table, 4 decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>5} {:>9} {:>9} {:>9}",
            "scope", "n", "MAE", "RMSE", "r"
        );
        for (scope, m) in self.rows() {
            let _ = writeln!(
                s,
                "{:<10} {:>5} {:>9} {:>9} {:>9}",
                scope,
                m.n,
                fmt4(m.mae),
                fmt4(m.rmse),
                fmt_opt4(m.r)
            );
        }
        s
    }
}

/// Per-group global-score table (Group, MAE, RMSE, r). Missing groups are
/// noted as absent.
pub fn subgroup_report(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6} {:>9} {:>9} {:>9}", "Group", "MAE", "RMSE", "r");
    let mut absent = Vec::new();
    for g in Group::ALL {
        match report.per_group.get(&g) {
            Some(m) => {
                let _ = writeln!(
                    s,
                    "{:<6} {:>9} {:>9} {:>9}",
                    g.as_str(),
                    fmt4(m.mae),
                    fmt4(m.rmse),
                    fmt_opt4(m.r)
                );
            }
            None => absent.push(g),
        }
    }
    for g in absent {
        let _ = writeln!(s, "{g}: absent");
    }
    s
}

const SCATTER_HEADER: &str = "subject_id,group,actual_global,predicted_global";

impl Evaluation {
    pub fn scatter_csv(&self) -> String {
        let mut s = format!("{SCATTER_HEADER}\n");
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                p.subject_id, p.group, p.actual, p.predicted
            );
        }
        s
    }

    /// Minimal standalone SVG scatter of actual vs predicted global score.
    pub fn scatter_svg(&self) -> String {
        let (w, h, pad) = (420.0, 420.0, 50.0);
        let vals = self.points.iter().flat_map(|p| [p.actual, p.predicted]);
        let (mut lo, mut hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
        if !(lo.is_finite() && hi.is_finite()) || hi - lo < 1e-9 {
            lo -= 1.0;
            hi += 1.0;
        }
        let sx = |v: f64| pad + (v - lo) / (hi - lo) * (w - 2.0 * pad);
        let sy = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#,
            fmt4(sx(lo)),
            fmt4(sy(lo)),
            fmt4(sx(hi)),
            fmt4(sy(hi))
        );
        let _ = writeln!(
            s,
            r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - 2.0 * pad,
            h - 2.0 * pad
        );
        for p in &self.points {
            let color = match p.group {
                Group::CN => "steelblue",
                Group::MCI => "darkorange",
            };
            let _ = writeln!(
                s,
                r#"<circle cx="{}" cy="{}" r="3" fill="{color}"><title>{} ({}): {} / {}</title></circle>"#,
                fmt4(sx(p.actual)),
                fmt4(sy(p.predicted)),
                p.subject_id,
                p.group,
                fmt4(p.actual),
                fmt4(p.predicted)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">actual global ({} to {})</text>"#,
            w / 2.0,
            h - 15.0,
            fmt4(lo),
            fmt4(hi)
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" font-size="12" transform="rotate(-90 15 {})" text-anchor="middle">predicted global</text>"#,
            h / 2.0,
            h / 2.0
        );
        s.push_str("</svg>\n");
        s
    }

    /// Writes `metrics.csv`, `report.txt`, `scatter.csv` and `scatter.svg`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("metrics.csv", self.report.to_csv())?;
        write(
            "report.txt",
            format!(
                "{}\n{}",
                self.report.to_text(),
                subgroup_report(&self.report)
            ),
        )?;
        write("scatter.csv", self.scatter_csv())?;
        write("scatter.svg", self.scatter_svg())
    }
}

pub fn read_scatter_csv(text: &str) -> Result<Vec<ScatterPoint>> {
    let mut lines = text.lines();
    if lines.next() != Some(SCATTER_HEADER) {
        return Err(Error::Data("scatter CSV: bad header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Data(format!("scatter CSV line {}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(ScatterPoint {
                subject_id: f[0].to_string(),
                group: f[1].parse().map_err(|_| bad())?,
                actual: f[2].parse().map_err(|_| bad())?,
                predicted: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Volume;

    fn sample(id: &str, group: Group, targets: [f64; N_TASKS]) -> Sample {
        Sample {
            subject_id: id.into(),
            group,
            volume: Volume::new(id, [1, 1, 1], vec![0.0]).unwrap(),
            targets,
            degenerate: false,
        }
    }

    fn cohort() -> Vec<Sample> {
        (0..6)
            .map(|i| {
                let t: [f64; N_TASKS] = std::array::from_fn(|j| ((i * 7 + j * 3) % 5) as f64 * 0.5);
                sample(
                    &format!("S{i}"),
                    if i % 2 == 0 { Group::CN } else { Group::MCI },
                    t,
                )
            })
            .collect()
    }

    #[test]
    fn perfect_predictor() {
        let s = cohort();
        let refs: Vec<&Sample> = s.iter().collect();
        let preds: Vec<Prediction> = s.iter().map(|x| Prediction { y_hat: x.targets }).collect();
        let e = evaluate_predictions(&refs, &preds).unwrap();
        for m in e.report.per_subscore.iter().chain([&e.report.global]) {
            assert_eq!(m.mae, 0.0);
            assert_eq!(m.rmse, 0.0);
            if let Some(r) = m.r {
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(e.report.per_group.len(), 2);
    }

    #[test]
    fn single_group_and_absent_note() {
        let s = cohort();
        let refs: Vec<&Sample> = s.iter().filter(|x| x.group == Group::CN).collect();
        let preds: Vec<Prediction> = refs
            .iter()
            .map(|_| Prediction {
                y_hat: [0.0; N_TASKS],
            })
            .collect();
        let e = evaluate_predictions(&refs, &preds).unwrap();
        assert_eq!(e.report.per_group.len(), 1);
        let text = subgroup_report(&e.report);
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("MCI: absent"));
    }

    #[test]
    fn constant_predictor_closed_form() {
        let s = cohort();
        let refs: Vec<&Sample> = s.iter().collect();
        let n = s.len() as f64;
        let means: [f64; N_TASKS] =
            std::array::from_fn(|j| s.iter().map(|x| x.targets[j]).sum::<f64>() / n);
        let preds = vec![Prediction { y_hat: means }; s.len()];
        let e = evaluate_predictions(&refs, &preds).unwrap();
        assert_eq!(e.report.global.r, None);
        let globals: Vec<f64> = s.iter().map(|x| x.targets.iter().sum()).collect();
        let gm = globals.iter().sum::<f64>() / n;
        let mad = globals.iter().map(|g| (g - gm).abs()).sum::<f64>() / n;
        assert!((e.report.global.mae - mad).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trips() {
        let s = cohort();
        let refs: Vec<&Sample> = s.iter().collect();
        let preds: Vec<Prediction> = s
            .iter()
            .enumerate()
            .map(|(i, x)| Prediction {
                y_hat: x.targets.map(|v| v * 0.9 + 0.1 * i as f64 + 1.0 / 3.0),
            })
            .collect();
        let e = evaluate_predictions(&refs, &preds).unwrap();
        assert_eq!(
            MetricsReport::from_csv(&e.report.to_csv()).unwrap(),
            e.report
        );
        assert_eq!(read_scatter_csv(&e.scatter_csv()).unwrap(), e.points);
        assert!(e.scatter_svg().starts_with("<svg"));
        assert!(e.report.to_text().contains(&fmt4(e.report.global.mae)));
    }

    #[test]
    fn rendering_fixture() {
        use crate::eval::SUBGROUP_REFERENCE;
        let mut per_group = BTreeMap::new();
        for r in &SUBGROUP_REFERENCE[..1] {
            per_group.insert(
                Group::CN,
                Metrics {
                    n: 10,
                    mae: r.mae,
                    rmse: r.rmse.unwrap(),
                    r: Some(r.r),
                },
            );
        }
        let m = Metrics {
            n: 10,
            mae: 1.0,
            rmse: 1.0,
            r: None,
        };
        let report = MetricsReport {
            per_subscore: [m; N_TASKS],
            global: m,
            per_group,
            n_eval: 10,
        };
        let text = subgroup_report(&report);
        assert!(
            text.contains("CN        3.9400    4.7400    0.1000"),
            "{text}"
        );
    }
}
