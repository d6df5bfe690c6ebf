use std::io::{Read, Write};

use serde::Serialize;

use super::{AblateError, Group, Result};

/// Aggregated accuracy of one (config, model) pair, in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Cell {
    Ok { mean: f64, std: f64, replicates: usize },
    Failed { error: String },
}

impl Cell {
    pub fn mean(&self) -> Option<f64> {
        match self {
            Cell::Ok { mean, .. } => Some(*mean),
            Cell::Failed { .. } => None,
        }
    }

    /// `MM.MM ± S.S`, or `—(error)` for a failed cell.
    pub fn render(&self) -> String {
        match self {
            Cell::Ok { mean, std, .. } => format!("{mean:.2} ± {std:.1}"),
            Cell::Failed { .. } => "—(error)".to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub group: Group,
    pub config: String,
    /// One cell per model, in [`AblationReport::models`] order.
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub models: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Balancing seed of each replicate. Empty when read back from CSV.
    pub seeds: Vec<u64>,
}

const HEADER: [&str; 7] = ["group", "config", "model", "mean_acc", "std_acc", "replicates", "status"];

impl AblationReport {
    /// One line per (config, model) cell, in row order then model order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(HEADER)?;
        for row in &self.rows {
            for (model, cell) in self.models.iter().zip(&row.cells) {
                let (mean, std, reps, status) = match cell {
                    Cell::Ok { mean, std, replicates } => {
                        (format!("{mean:.4}"), format!("{std:.4}"), replicates.to_string(), "ok".to_owned())
                    }
                    Cell::Failed { error } => {
                        (String::new(), String::new(), self.seeds.len().to_string(), format!("failed: {error}"))
                    }
                };
                w.write_record([row.group.name(), &row.config, model, &mean, &std, &reps, &status])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a report written by [`AblationReport::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let header = rd.headers()?.clone();
        if header.iter().ne(HEADER) {
            return Err(AblateError::Malformed { row: 1, message: format!("expected header {}", HEADER.join(",")) });
        }
        let mut report = AblationReport { models: Vec::new(), rows: Vec::new(), seeds: Vec::new() };
        for record in rd.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let bad = |message: String| AblateError::Malformed { row: line, message };
            let group = Group::parse(&record[0]).ok_or_else(|| bad(format!("unknown group {:?}", &record[0])))?;
            let (config, model) = (&record[1], &record[2]);
            let cell = match &record[6] {
                "ok" => {
                    let num = |i: usize| -> Result<f64> {
                        record[i].parse::<f64>().map_err(|_| bad(format!("bad {} {:?}", HEADER[i], &record[i])))
                    };
                    let replicates = record[5].parse().map_err(|_| bad(format!("bad replicates {:?}", &record[5])))?;
                    let (mean, std) = (num(3)?, num(4)?);
                    if !(0.0..=100.0).contains(&mean) || !(std >= 0.0) {
                        return Err(bad(format!("accuracy {mean} ± {std} out of range")));
                    }
                    Cell::Ok { mean, std, replicates }
                }
                s => match s.strip_prefix("failed: ") {
                    Some(e) => Cell::Failed { error: e.to_owned() },
                    None => return Err(bad(format!("unknown status {s:?}"))),
                },
            };
            let m = match report.models.iter().position(|x| x == model) {
                Some(m) => m,
                None => {
                    report.models.push(model.to_owned());
                    report.models.len() - 1
                }
            };
            let existing = report.rows.iter().position(|r| r.group == group && r.config == config);
            let row = match existing {
                Some(i) => &mut report.rows[i],
                None => {
                    report.rows.push(ReportRow { group, config: config.to_owned(), cells: Vec::new() });
                    report.rows.last_mut().expect("just pushed")
                }
            };
            if row.cells.len() != m {
                return Err(bad(format!("model {model:?} out of order for {config:?}")));
            }
            row.cells.push(cell);
        }
        if let Some(r) = report.rows.iter().find(|r| r.cells.len() != report.models.len()) {
            return Err(AblateError::Malformed { row: 0, message: format!("row {:?} is missing models", r.config) });
        }
        Ok(report)
    }
}

/// Means rounded to the displayed precision, so ties look like ties.
fn display_key(mean: f64) -> i64 {
    (mean * 100.0).round() as i64
}

/// Best and runner-up displayed mean of model column `m`.
fn podium(rows: &[&ReportRow], m: usize) -> (Option<i64>, Option<i64>) {
    let mut keys: Vec<i64> = rows.iter().filter_map(|r| r.cells[m].mean()).map(display_key).collect();
    keys.sort_unstable_by(|a, b| b.cmp(a));
    keys.dedup();
    (keys.first().copied(), keys.get(1).copied())
}

/// Markdown table grouped Online / Offline / Hybrid, with the best cell of
/// each model column in bold and the runner-up underlined.
pub fn render_markdown(report: &AblationReport) -> String {
    let mut rows: Vec<&ReportRow> = report.rows.iter().collect();
    rows.sort_by_key(|r| r.group);
    let podiums: Vec<_> = (0..report.models.len()).map(|m| podium(&rows, m)).collect();

    let mut out = String::new();
    out.push_str("| Group | Features |");
    for name in &report.models {
        out.push_str(&format!(" {name} |"));
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---:|".repeat(report.models.len()));
    out.push('\n');
    let mut previous = None;
    for row in rows {
        let group = if previous == Some(row.group) { "" } else { row.group.name() };
        previous = Some(row.group);
        out.push_str(&format!("| {group} | {} |", row.config));
        for (m, cell) in row.cells.iter().enumerate() {
            let text = cell.render();
            let key = cell.mean().map(display_key);
            let styled = match podiums[m] {
                (Some(best), _) if key == Some(best) => format!("**{text}**"),
                (_, Some(second)) if key == Some(second) => format!("<u>{text}</u>"),
                _ => text,
            };
            out.push_str(&format!(" {styled} |"));
        }
        out.push('\n');
    }
    out
}
