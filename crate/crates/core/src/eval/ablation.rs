use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::Metrics;
use super::reference::{ReferenceRow, LITERATURE_LABEL, OVERALL_REFERENCE, SUBGROUP_REFERENCE};
use super::report::{evaluate, fmt4, fmt_opt4};
use crate::data::{Dataset, Group, SplitSpec};
use crate::error::{Error, Result};
use crate::loss::WeightConfig;
use crate::model::ModelConfig;
use crate::train::{train, TrainConfig};
use crate::N_TASKS;

/// Source column value for rows trained in this run.
pub const TRAINED_LABEL: &str = "trained (this run)";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub weights: WeightConfig,
    /// Validation metrics of the composed global score.
    pub global: Metrics,
    pub per_group: BTreeMap<Group, Metrics>,
}

impl AblationRow {
    pub fn architecture(&self) -> String {
        let name = self.weights.label();
        let mut c = name.chars();
        match c.next() {
            Some(f) => format!("{}{} weighted ViT", f.to_uppercase(), c.as_str()),
            None => "ViT".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    /// Whether the literature rows are appended to the outputs.
    pub include_reference: bool,
}

/// Trains one model per weight configuration (same split, same seeds; only
/// the weights differ) and scores each on the validation subjects.
pub fn run_ablation(
    data: &Dataset,
    split: &SplitSpec,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    configs: &[WeightConfig],
) -> Result<AblationResult> {
    if configs.is_empty() {
        return Err(Error::Config(
            "ablation needs at least one weight config".into(),
        ));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for wc in configs {
        let label = wc.label();
        let run = || -> Result<AblationRow> {
            let cfg = TrainConfig {
                weights: wc.clone(),
                ..tcfg.clone()
            };
            let (params, _) = train(data, split, mcfg, &cfg)?;
            let ev = evaluate(&params, data, &split.val_ids)?;
            Ok(AblationRow {
                weights: wc.clone(),
                global: ev.report.global,
                per_group: ev.report.per_group,
            })
        };
        rows.push(run().map_err(|e| e.context(format!("ablation config {label}")))?);
    }
    Ok(AblationResult {
        rows,
        include_reference: true,
    })
}

const OVERALL_HEADER: [&str; 8] = [
    "source",
    "architecture",
    "weights",
    "n",
    "mae",
    "rmse",
    "r",
    "w",
];
const GROUP_HEADER: [&str; 8] = [
    "source",
    "architecture",
    "weights",
    "group",
    "n",
    "mae",
    "rmse",
    "r",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "n/a".into())
}

fn parse_opt(s: &str) -> Option<Option<f64>> {
    if s == "n/a" {
        Some(None)
    } else {
        s.parse().ok().map(Some)
    }
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

fn reference_record(r: &ReferenceRow) -> [String; 4] {
    [
        fmt_ref(r.mae),
        opt(r.rmse),
        fmt_ref(r.r),
        r.group.map(|g| g.to_string()).unwrap_or_default(),
    ]
}

fn fmt_ref(x: f64) -> String {
    format!("{x:.2}")
}

impl AblationResult {
    /// Global-score table: trained rows at full precision, then (optionally)
    /// the literature rows.
    pub fn overall_csv(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    TRAINED_LABEL.into(),
                    r.architecture(),
                    r.weights.label(),
                    r.global.n.to_string(),
                    r.global.mae.to_string(),
                    r.global.rmse.to_string(),
                    opt(r.global.r),
                    r.weights.w.map(|x| x.to_string()).join(" "),
                ]
            })
            .collect();
        if self.include_reference {
            for r in &OVERALL_REFERENCE {
                let [mae, rmse, rr, _] = reference_record(r);
                rows.push(vec![
                    LITERATURE_LABEL.into(),
                    r.architecture.into(),
                    r.weights.into(),
                    "n/a".into(),
                    mae,
                    rmse,
                    rr,
                    String::new(),
                ]);
            }
        }
        csv_string(&OVERALL_HEADER, rows)
    }

    /// Per-group table in the same layout, group column added.
    pub fn groups_csv(&self) -> String {
        let mut rows = Vec::new();
        for r in &self.rows {
            for (g, m) in &r.per_group {
                rows.push(vec![
                    TRAINED_LABEL.into(),
                    r.architecture(),
                    r.weights.label(),
                    g.to_string(),
                    m.n.to_string(),
                    m.mae.to_string(),
                    m.rmse.to_string(),
                    opt(m.r),
                ]);
            }
        }
        if self.include_reference {
            for r in &SUBGROUP_REFERENCE {
                let [mae, rmse, rr, g] = reference_record(r);
                rows.push(vec![
                    LITERATURE_LABEL.into(),
                    r.architecture.into(),
                    r.weights.into(),
                    g,
                    "n/a".into(),
                    mae,
                    rmse,
                    rr,
                ]);
            }
        }
        csv_string(&GROUP_HEADER, rows)
    }

    /// Rebuilds the trained rows from [`Self::overall_csv`] and
    /// [`Self::groups_csv`] output. Literature rows are recognised by their
    /// source label and must match the built-in constants.
    pub fn from_csv(overall: &str, groups: &str) -> Result<Self> {
        let bad = |m: String| Error::Data(format!("ablation CSV: {m}"));
        let read = |text: &str, header: &[&str]| -> Result<Vec<csv::StringRecord>> {
            let mut r = csv::Reader::from_reader(text.as_bytes());
            let h = r.headers().map_err(|e| bad(e.to_string()))?;
            if h.iter().ne(header.iter().copied()) {
                return Err(bad("bad header".into()));
            }
            r.records()
                .map(|x| x.map_err(|e| bad(e.to_string())))
                .collect()
        };
        let metrics = |n: &str, mae: &str, rmse: &str, r: &str| -> Result<Metrics> {
            Ok(Metrics {
                n: n.parse().map_err(|_| bad(format!("bad n {n:?}")))?,
                mae: mae.parse().map_err(|_| bad(format!("bad mae {mae:?}")))?,
                rmse: rmse
                    .parse()
                    .map_err(|_| bad(format!("bad rmse {rmse:?}")))?,
                r: parse_opt(r).ok_or_else(|| bad(format!("bad r {r:?}")))?,
            })
        };

        let mut rows = Vec::new();
        let mut n_ref = 0;
        for rec in read(overall, &OVERALL_HEADER)? {
            if &rec[0] == LITERATURE_LABEL {
                n_ref += 1;
                continue;
            }
            let w: Vec<f64> = rec[7]
                .split(' ')
                .map(|x| x.parse().map_err(|_| bad(format!("bad weight {x:?}"))))
                .collect::<Result<_>>()?;
            let w: [f64; N_TASKS] = w
                .try_into()
                .map_err(|_| bad(format!("need {N_TASKS} weights")))?;
            let name = &rec[2];
            let name = (name != "custom").then(|| name.to_string());
            rows.push(AblationRow {
                weights: WeightConfig::new(name, w)?,
                global: metrics(&rec[3], &rec[4], &rec[5], &rec[6])?,
                per_group: BTreeMap::new(),
            });
        }
        for rec in read(groups, &GROUP_HEADER)? {
            if &rec[0] == LITERATURE_LABEL {
                continue;
            }
            let g: Group = rec[3].parse().map_err(bad)?;
            let m = metrics(&rec[4], &rec[5], &rec[6], &rec[7])?;
            let row = rows
                .iter_mut()
                .find(|r| r.weights.label() == rec[2])
                .ok_or_else(|| bad(format!("group row for unknown config {}", &rec[2])))?;
            row.per_group.insert(g, m);
        }
        Ok(AblationResult {
            rows,
            include_reference: n_ref > 0,
        })
    }

    /// Human-readable tables, 4 decimals for trained rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let line = |s: &mut String, src: &str, arch: &str, mae: String, rmse: String, r: String| {
            let _ = writeln!(
                s,
                "{:<34} {:<24} {:>9} {:>9} {:>9}",
                src, arch, mae, rmse, r
            );
        };
        let _ = writeln!(s, "Global score (validation split)");
        line(
            &mut s,
            "source",
            "architecture",
            "MAE".into(),
            "RMSE".into(),
            "r".into(),
        );
        for r in &self.rows {
            line(
                &mut s,
                TRAINED_LABEL,
                &r.architecture(),
                fmt4(r.global.mae),
                fmt4(r.global.rmse),
                fmt_opt4(r.global.r),
            );
        }
        if self.include_reference {
            for r in &OVERALL_REFERENCE {
                line(
                    &mut s,
                    LITERATURE_LABEL,
                    r.architecture,
                    fmt_ref(r.mae),
                    opt(r.rmse),
                    fmt_ref(r.r),
                );
            }
        }
        let _ = writeln!(s, "\nBy group");
        let gline = |s: &mut String,
                     src: &str,
                     arch: &str,
                     g: &str,
                     mae: String,
                     rmse: String,
                     r: String| {
            let _ = writeln!(
                s,
                "{:<34} {:<24} {:<5} {:>9} {:>9} {:>9}",
                src, arch, g, mae, rmse, r
            );
        };
        gline(
            &mut s,
            "source",
            "architecture",
            "group",
            "MAE".into(),
            "RMSE".into(),
            "r".into(),
        );
        for r in &self.rows {
            for (g, m) in &r.per_group {
                gline(
                    &mut s,
                    TRAINED_LABEL,
                    &r.architecture(),
                    g.as_str(),
                    fmt4(m.mae),
                    fmt4(m.rmse),
                    fmt_opt4(m.r),
                );
            }
        }
        if self.include_reference {
            for r in &SUBGROUP_REFERENCE {
                let g = r.group.map(Group::as_str).unwrap_or("");
                gline(
                    &mut s,
                    LITERATURE_LABEL,
                    r.architecture,
                    g,
                    fmt_ref(r.mae),
                    opt(r.rmse),
                    fmt_ref(r.r),
                );
            }
            let _ = writeln!(
                s,
                "\nRows labelled \"{LITERATURE_LABEL}\" are published values on a different, access-gated cohort; they are not results of this run."
            );
        }
        s
    }

    /// Writes `ablation.csv`, `ablation_groups.csv` and `ablation.txt`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("ablation.csv", self.overall_csv()),
            ("ablation_groups.csv", self.groups_csv()),
            ("ablation.txt", self.to_text()),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(n: usize, mae: f64, rmse: f64, r: Option<f64>) -> Metrics {
        Metrics { n, mae, rmse, r }
    }

    fn result() -> AblationResult {
        let rows = WeightConfig::presets()
            .into_iter()
            .rev()
            .enumerate()
            .map(|(i, wc)| {
                let k = i as f64;
                AblationRow {
                    weights: wc,
                    global: m(52, 1.0 / 3.0 + k, 0.7 + k, Some(0.1 * k - 0.05)),
                    per_group: BTreeMap::from([
                        (Group::CN, m(33, 0.1 + k, 0.2 + k, None)),
                        (Group::MCI, m(19, 0.3, 0.4, Some(-0.2))),
                    ]),
                }
            })
            .collect();
        AblationResult {
            rows,
            include_reference: true,
        }
    }

    #[test]
    fn csv_round_trip() {
        let r = result();
        let back = AblationResult::from_csv(&r.overall_csv(), &r.groups_csv()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn reference_rows_labelled() {
        let r = result();
        let csv = r.overall_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 3);
        assert!(lines[1].starts_with(TRAINED_LABEL) && lines[1].contains("Strong weighted ViT"));
        assert!(lines[2].contains("Moderate weighted ViT"));
        assert!(lines[3].contains("Uniform weighted ViT"));
        assert!(lines[4].starts_with(&format!("\"{LITERATURE_LABEL}\"")));
        assert!(lines[4].contains(",4.49,5.29,0.21,"));
        assert!(lines[5].contains(",4.52,5.16,0.24,"));
        assert!(lines[6].contains(",4.58,5.28,0.13,"));
        let g = r.groups_csv();
        assert_eq!(g.lines().count(), 1 + 6 + 6);
        assert!(g.contains("Dirty Model,n/a,CN,n/a,3.18,n/a,0.08"));
    }

    #[test]
    fn without_reference() {
        let mut r = result();
        r.include_reference = false;
        assert!(!r.overall_csv().contains(LITERATURE_LABEL));
        let back = AblationResult::from_csv(&r.overall_csv(), &r.groups_csv()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn text_uses_four_decimals() {
        let t = result().to_text();
        assert!(t.contains("0.3333"));
        assert!(t.contains(LITERATURE_LABEL));
        assert!(t.contains("4.49"));
    }
}
