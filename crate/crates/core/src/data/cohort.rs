use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::scores::{ScoreVector, DEFAULT_MAXIMA};
use crate::error::{Error, Result};
use crate::N_TASKS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    CN,
    MCI,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::CN, Group::MCI];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::CN => "CN",
            Group::MCI => "MCI",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "CN" => Ok(Group::CN),
            "MCI" => Ok(Group::MCI),
            other => Err(format!("unknown group {other:?} (expected CN or MCI)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "M" => Ok(Sex::M),
            "F" => Ok(Sex::F),
            other => Err(format!("unknown sex {other:?} (expected M or F)")),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::M => "M",
            Sex::F => "F",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub group: Group,
    pub age: f64,
    pub sex: Sex,
    /// As written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub volume_path: String,
    pub scores_m24: ScoreVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub subjects: Vec<SubjectRecord>,
    pub provenance: Provenance,
    pub maxima: [f64; N_TASKS],
    /// Directory relative volume paths are resolved against.
    pub base_dir: PathBuf,
}

impl Cohort {
    pub fn new(
        subjects: Vec<SubjectRecord>,
        provenance: Provenance,
        maxima: [f64; N_TASKS],
        base_dir: PathBuf,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &subjects {
            if !seen.insert(s.subject_id.as_str()) {
                return Err(Error::DuplicateSubject(s.subject_id.clone()));
            }
        }
        Ok(Cohort {
            subjects,
            provenance,
            maxima,
            base_dir,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.subjects.iter().map(|s| s.subject_id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn volume_path(&self, rec: &SubjectRecord) -> PathBuf {
        let p = Path::new(&rec.volume_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn count(&self, group: Group) -> usize {
        self.subjects.iter().filter(|s| s.group == group).count()
    }
}

fn header() -> Vec<String> {
    let mut h: Vec<String> = ["subject_id", "group", "age", "sex", "volume_path"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=N_TASKS).map(|j| format!("q{j}")));
    h
}

/// Parses a score manifest. Relative volume paths must resolve against
/// the manifest's directory.
pub fn load_cohort(manifest_path: &Path) -> Result<Cohort> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let merr = |line: u64, msg: String| Error::Manifest {
        path: manifest_path.to_path_buf(),
        line,
        msg,
    };

    let mut maxima = DEFAULT_MAXIMA;
    let mut provenance = Provenance::External;
    for (i, line) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        let Some(rest) = line.strip_prefix('#') else {
            continue;
        };
        let mut fields = rest.split(',').map(str::trim);
        match fields.next() {
            Some("maxima") => {
                let vals: Vec<&str> = fields.collect();
                if vals.len() != N_TASKS {
                    return Err(merr(
                        line_no,
                        format!("#maxima needs {N_TASKS} values, got {}", vals.len()),
                    ));
                }
                for (j, v) in vals.iter().enumerate() {
                    let m: f64 = v.parse().map_err(|_| {
                        merr(line_no, format!("#maxima value {v:?} is not a number"))
                    })?;
                    if !(m > 0.0 && m.is_finite()) {
                        return Err(merr(
                            line_no,
                            format!("#maxima value for q{} must be positive", j + 1),
                        ));
                    }
                    maxima[j] = m;
                }
            }
            Some("provenance") => {
                provenance = match fields.next() {
                    Some("synthetic") => Provenance::Synthetic,
                    Some("external") => Provenance::External,
                    other => return Err(merr(line_no, format!("unknown provenance {other:?}"))),
                };
            }
            _ => {}
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let hdr = rdr
        .headers()
        .map_err(|e| merr(1, e.to_string()))?
        .iter()
        .map(str::trim)
        .collect::<Vec<_>>();
    let expected = header();
    if hdr.is_empty() || (hdr.len() == 1 && hdr[0].is_empty()) {
        return Err(merr(1, "missing header".into()));
    }
    if hdr != expected {
        return Err(merr(1, format!("header must be `{}`", expected.join(","))));
    }

    let base_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut subjects = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            merr(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != expected.len() {
            return Err(merr(
                line,
                format!("expected {} fields, found {}", expected.len(), rec.len()),
            ));
        }
        let f = |i: usize| rec[i].trim();
        let subject_id = f(0).to_string();
        if subject_id.is_empty() {
            return Err(merr(line, "empty subject_id".into()));
        }
        if !seen.insert(subject_id.clone()) {
            return Err(Error::DuplicateSubject(subject_id));
        }
        let group: Group = f(1).parse().map_err(|e| merr(line, e))?;
        let age: f64 = f(2)
            .parse()
            .map_err(|_| merr(line, format!("age {:?} is not a number", f(2))))?;
        let sex: Sex = f(3).parse().map_err(|e| merr(line, e))?;
        let volume_path = f(4).to_string();
        let mut q = [0.0; N_TASKS];
        for (j, slot) in q.iter_mut().enumerate() {
            let raw = f(5 + j);
            *slot = raw
                .parse()
                .map_err(|_| merr(line, format!("q{} {raw:?} is not a number", j + 1)))?;
        }
        let scores_m24 = ScoreVector::new(q, maxima).map_err(|e| merr(line, e.to_string()))?;
        let resolved = {
            let p = Path::new(&volume_path);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        if !resolved.is_file() {
            return Err(merr(
                line,
                format!("volume_path {volume_path:?} does not resolve"),
            ));
        }
        subjects.push(SubjectRecord {
            subject_id,
            group,
            age,
            sex,
            volume_path,
            scores_m24,
        });
    }
    Cohort::new(subjects, provenance, maxima, base_dir)
}

/// Writes a manifest that [`load_cohort`] reads back to an equal cohort.
pub fn write_manifest(path: &Path, cohort: &Cohort) -> Result<()> {
    let mut out = String::new();
    let prov = match cohort.provenance {
        Provenance::Synthetic => "synthetic",
        Provenance::External => "external",
    };
    out.push_str(&format!("#provenance,{prov}\n"));
    out.push_str("#maxima");
    for m in &cohort.maxima {
        out.push_str(&format!(",{m}"));
    }
    out.push('\n');
    out.push_str(&header().join(","));
    out.push('\n');
    for s in &cohort.subjects {
        out.push_str(&format!(
            "{},{},{},{},{}",
            s.subject_id, s.group, s.age, s.sex, s.volume_path
        ));
        for q in s.scores_m24.items() {
            out.push_str(&format!(",{q}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
