//! Panel container and its CSV interchange format.
//!
//! The on-disk format is a single CSV with header
//! `subject_id,group_id,time_index,ch_1,...,ch_k`, rows sorted by
//! `(subject_id, time_index)`, `time_index` 1-based and contiguous per
//! subject. Every tool in the pipeline consumes and produces this format.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A complete multi-subject, multi-channel time-series panel.
///
/// Values are dense: `N * k * T` finite entries, no missing data. Immutable
/// after construction.
#[derive(Debug, Clone)]
pub struct Panel {
    n_subjects: usize,
    n_channels: usize,
    n_time: usize,
    /// Layout: `(subject * n_channels + channel) * n_time + t`.
    values: Vec<f64>,
    group_of: Vec<usize>,
    n_groups: usize,
    subject_ids: Vec<String>,
}

impl Panel {
    /// Build a panel from per-subject, per-channel series.
    ///
    /// `series[n][j]` is the length-`T` series for subject `n`, channel `j`.
    pub fn from_series(
        series: Vec<Vec<Vec<f64>>>,
        group_of: Vec<usize>,
        subject_ids: Vec<String>,
    ) -> Result<Self> {
        let n_subjects = series.len();
        if n_subjects == 0 {
            return Err(Error::InvalidConfig("panel has no subjects".into()));
        }
        if group_of.len() != n_subjects || subject_ids.len() != n_subjects {
            return Err(Error::InvalidConfig(
                "group labels / subject ids do not match subject count".into(),
            ));
        }
        let n_channels = series[0].len();
        if n_channels == 0 {
            return Err(Error::InvalidConfig("panel has no channels".into()));
        }
        let n_time = series[0][0].len();
        if n_time == 0 {
            return Err(Error::InvalidConfig("panel has no time points".into()));
        }
        let mut values = Vec::with_capacity(n_subjects * n_channels * n_time);
        for (n, subject) in series.iter().enumerate() {
            if subject.len() != n_channels {
                return Err(Error::InvalidConfig(format!(
                    "subject {n} has {} channels, expected {n_channels}",
                    subject.len()
                )));
            }
            for (j, chan) in subject.iter().enumerate() {
                if chan.len() != n_time {
                    return Err(Error::InvalidConfig(format!(
                        "subject {n} channel {j} has {} time points, expected {n_time}",
                        chan.len()
                    )));
                }
                for (t, v) in chan.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::InvalidConfig(format!(
                            "non-finite value at subject {n}, channel {j}, t {t}"
                        )));
                    }
                    values.push(*v);
                }
            }
        }
        let n_groups = validate_groups(&group_of)?;
        Ok(Panel {
            n_subjects,
            n_channels,
            n_time,
            values,
            group_of,
            n_groups,
            subject_ids,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Group label of subject `n`.
    pub fn group_of(&self, n: usize) -> usize {
        self.group_of[n]
    }

    pub fn group_labels(&self) -> &[usize] {
        &self.group_of
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    /// Value `Y_{j,t}` for subject `n` (all indices 0-based).
    #[inline]
    pub fn value(&self, subject: usize, channel: usize, t: usize) -> f64 {
        self.values[(subject * self.n_channels + channel) * self.n_time + t]
    }

    /// Full series for one subject/channel.
    #[inline]
    pub fn channel(&self, subject: usize, channel: usize) -> &[f64] {
        let start = (subject * self.n_channels + channel) * self.n_time;
        &self.values[start..start + self.n_time]
    }

    /// Subjects belonging to group `g`.
    pub fn subjects_in_group(&self, g: usize) -> Vec<usize> {
        (0..self.n_subjects)
            .filter(|&n| self.group_of[n] == g)
            .collect()
    }

    /// Panel truncated to the first `len` time points.
    pub fn truncated(&self, len: usize) -> Result<Panel> {
        self.time_window(0, len)
    }

    /// Panel restricted to time points `[start, start + len)`.
    pub fn time_window(&self, start: usize, len: usize) -> Result<Panel> {
        if len == 0 || start + len > self.n_time {
            return Err(Error::InvalidConfig(format!(
                "time window [{start}, {}) out of range for T = {}",
                start + len,
                self.n_time
            )));
        }
        let mut values = Vec::with_capacity(self.n_subjects * self.n_channels * len);
        for n in 0..self.n_subjects {
            for j in 0..self.n_channels {
                values.extend_from_slice(&self.channel(n, j)[start..start + len]);
            }
        }
        Ok(Panel {
            n_subjects: self.n_subjects,
            n_channels: self.n_channels,
            n_time: len,
            values,
            group_of: self.group_of.clone(),
            n_groups: self.n_groups,
            subject_ids: self.subject_ids.clone(),
        })
    }

    /// Write this panel in the pipeline CSV format.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "subject_id,group_id,time_index")?;
        for j in 1..=self.n_channels {
            write!(out, ",ch_{j}")?;
        }
        writeln!(out)?;
        for n in 0..self.n_subjects {
            for t in 0..self.n_time {
                write!(
                    out,
                    "{},{},{}",
                    self.subject_ids[n],
                    self.group_of[n],
                    t + 1
                )?;
                for j in 0..self.n_channels {
                    write!(out, ",{}", self.value(n, j, t))?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_csv(&mut buf)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Read and validate a panel CSV. All contract violations are collected
    /// into one report rather than stopping at the first.
    pub fn read_csv_path(path: &Path) -> Result<Panel> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::read_csv(BufReader::new(file), &path.display().to_string())
    }

    pub fn read_csv<R: BufRead>(reader: R, source_name: &str) -> Result<Panel> {
        let mut report = ValidationReport::new(source_name);
        let mut lines = reader.lines().enumerate();

        let header = match lines.next() {
            Some((_, Ok(h))) => h,
            Some((_, Err(e))) => return Err(Error::io(source_name, e)),
            None => {
                report.push(0, "file is empty");
                return Err(report.into_error());
            }
        };
        let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if cols.len() < 4
            || cols[0] != "subject_id"
            || cols[1] != "group_id"
            || cols[2] != "time_index"
        {
            report.push(
                1,
                format!(
                    "header must start with subject_id,group_id,time_index,ch_1,... (got `{header}`)"
                ),
            );
            return Err(report.into_error());
        }
        let n_channels = cols.len() - 3;
        for (j, col) in cols[3..].iter().enumerate() {
            if *col != format!("ch_{}", j + 1) {
                report.push(
                    1,
                    format!(
                        "channel column {} is `{col}`, expected `ch_{}`",
                        j + 4,
                        j + 1
                    ),
                );
            }
        }

        struct SubjectBlock {
            id: String,
            group: usize,
            rows: Vec<Vec<f64>>, // per time point, length k
            expected_t: usize,
        }
        let mut blocks: Vec<SubjectBlock> = Vec::new();
        let mut seen_ids: std::collections::HashSet<String> = std::collections::HashSet::new();

        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Err(Error::io(source_name, e)),
            };
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n_channels + 3 {
                report.push(
                    line_no,
                    format!("expected {} fields, got {}", n_channels + 3, fields.len()),
                );
                continue;
            }
            let id = fields[0].to_string();
            let group: Option<usize> = fields[1].parse().ok();
            let time: Option<usize> = fields[2].parse().ok();
            let start_new = blocks.last().map(|b| b.id != id).unwrap_or(true);
            if start_new {
                if seen_ids.contains(&id) {
                    report.push(
                        line_no,
                        format!(
                            "subject `{id}` reappears after other subjects; rows must be grouped"
                        ),
                    );
                    continue;
                }
                if let Some(prev) = blocks.last() {
                    if prev.id.as_str() > id.as_str() {
                        report.push(
                            line_no,
                            format!("subject `{id}` out of order after `{}`", prev.id),
                        );
                    }
                }
                seen_ids.insert(id.clone());
                let group = match group {
                    Some(g) => g,
                    None => {
                        report.push(
                            line_no,
                            format!("group_id `{}` is not a nonnegative integer", fields[1]),
                        );
                        0
                    }
                };
                blocks.push(SubjectBlock {
                    id,
                    group,
                    rows: Vec::new(),
                    expected_t: 1,
                });
            }
            let block = blocks.last_mut().unwrap();
            if let Some(g) = group {
                if g != block.group && !block.rows.is_empty() {
                    report.push(
                        line_no,
                        format!(
                            "subject `{}` changes group_id from {} to {g}",
                            block.id, block.group
                        ),
                    );
                }
            }
            match time {
                Some(t) if t == block.expected_t => block.expected_t += 1,
                Some(t) => {
                    report.push(
                        line_no,
                        format!(
                            "subject `{}` time_index {t} is not contiguous (expected {})",
                            block.id, block.expected_t
                        ),
                    );
                    block.expected_t = t + 1;
                }
                None => {
                    report.push(
                        line_no,
                        format!("time_index `{}` is not a positive integer", fields[2]),
                    );
                }
            }
            let mut row = Vec::with_capacity(n_channels);
            for (j, raw) in fields[3..].iter().enumerate() {
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => row.push(v),
                    Ok(v) => {
                        report.push(
                            line_no,
                            format!(
                                "non-finite value {v} at subject `{}`, column ch_{}",
                                block.id,
                                j + 1
                            ),
                        );
                        row.push(0.0);
                    }
                    Err(_) => {
                        report.push(
                            line_no,
                            format!(
                                "cannot parse `{raw}` at subject `{}`, column ch_{}",
                                block.id,
                                j + 1
                            ),
                        );
                        row.push(0.0);
                    }
                }
            }
            block.rows.push(row);
        }

        if blocks.is_empty() {
            report.push(0, "no data rows");
            return Err(report.into_error());
        }
        let n_time = blocks[0].rows.len();
        for b in &blocks {
            if b.rows.len() != n_time {
                report.push(
                    0,
                    format!(
                        "subject `{}` has {} time points, others have {n_time}",
                        b.id,
                        b.rows.len()
                    ),
                );
            }
        }
        let groups: Vec<usize> = blocks.iter().map(|b| b.group).collect();
        if let Err(e) = validate_groups(&groups) {
            report.push(0, e.to_string());
        }

        if !report.is_empty() {
            return Err(report.into_error());
        }

        let series: Vec<Vec<Vec<f64>>> = blocks
            .iter()
            .map(|b| {
                (0..n_channels)
                    .map(|j| b.rows.iter().map(|r| r[j]).collect())
                    .collect()
            })
            .collect();
        Panel::from_series(series, groups, blocks.into_iter().map(|b| b.id).collect())
    }
}

/// Group labels must form a contiguous set {0, ..., G-1}.
fn validate_groups(group_of: &[usize]) -> Result<usize> {
    let max = *group_of.iter().max().unwrap_or(&0);
    let n_groups = max + 1;
    for g in 0..n_groups {
        if !group_of.contains(&g) {
            return Err(Error::InvalidConfig(format!(
                "group labels must be contiguous 0..{max}, label {g} is missing"
            )));
        }
    }
    Ok(n_groups)
}

/// Collects per-violation diagnostics during CSV ingestion.
#[derive(Debug)]
pub struct ValidationReport {
    source: String,
    violations: Vec<String>,
}

impl ValidationReport {
    fn new(source: &str) -> Self {
        ValidationReport {
            source: source.to_string(),
            violations: Vec::new(),
        }
    }

    fn push(&mut self, line: usize, msg: impl Into<String>) {
        // Cap the report; a truncated file can otherwise flood it.
        if self.violations.len() < 100 {
            if line > 0 {
                self.violations.push(format!("line {line}: {}", msg.into()));
            } else {
                self.violations.push(msg.into());
            }
        }
    }

    fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn into_error(self) -> Error {
        let mut s = String::new();
        let _ = write!(
            s,
            "{} violation(s) in {}",
            self.violations.len(),
            self.source
        );
        for v in &self.violations {
            let _ = write!(s, "\n  - {v}");
        }
        Error::PanelValidation(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_subject_panel() -> Panel {
        Panel::from_series(
            vec![
                vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
                vec![vec![-1.0, -2.0, -3.0], vec![0.5, 0.25, 0.125]],
            ],
            vec![0, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_csv() {
        let panel = two_subject_panel();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let back = Panel::read_csv(std::io::Cursor::new(&buf), "mem").unwrap();
        assert_eq!(back.n_subjects(), 2);
        assert_eq!(back.n_channels(), 2);
        assert_eq!(back.n_time(), 3);
        assert_eq!(back.value(1, 1, 2), 0.125);
        assert_eq!(back.group_of(1), 1);
        let mut buf2 = Vec::new();
        back.write_csv(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn gap_in_time_index_reported() {
        let csv = "subject_id,group_id,time_index,ch_1\n\
                   a,0,1,1.0\n\
                   a,0,3,2.0\n";
        let err = Panel::read_csv(std::io::Cursor::new(csv), "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("not contiguous"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn nan_cell_reported_with_coordinates() {
        let csv = "subject_id,group_id,time_index,ch_1,ch_2\n\
                   a,0,1,1.0,NaN\n";
        let err = Panel::read_csv(std::io::Cursor::new(csv), "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ch_2"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn multiple_violations_collected() {
        let csv = "subject_id,group_id,time_index,ch_1\n\
                   a,0,1,1.0\n\
                   a,0,3,inf\n\
                   b,2,1,1.0\n";
        let err = Panel::read_csv(std::io::Cursor::new(csv), "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("not contiguous"), "{msg}");
        assert!(msg.contains("non-finite"), "{msg}");
        assert!(msg.contains("label 1 is missing"), "{msg}");
    }

    #[test]
    fn group_labels_must_be_contiguous() {
        let res = Panel::from_series(
            vec![vec![vec![1.0]], vec![vec![2.0]]],
            vec![0, 2],
            vec!["a".into(), "b".into()],
        );
        assert!(res.is_err());
    }

    #[test]
    fn time_window_rebases() {
        let panel = two_subject_panel();
        let w = panel.time_window(1, 2).unwrap();
        assert_eq!(w.n_time(), 2);
        assert_eq!(w.value(0, 0, 0), 2.0);
        assert_eq!(w.value(0, 0, 1), 3.0);
    }
}
