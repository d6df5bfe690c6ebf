use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use covexplain::ablate::{render_markdown, AblationReport};
use covexplain::corpus::StanceLabel;
use covexplain::explain::Attribution;

use crate::ReportArgs;

fn paths(list: &str) -> Vec<PathBuf> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
}

/// Token scores of one attribution file, signed so that positive means
/// toward Pro.
fn read_attribution(path: &Path) -> Result<Vec<(String, f64)>> {
    let sidecar = path.with_extension("json");
    let meta: Attribution = serde_json::from_str(
        &fs::read_to_string(&sidecar).with_context(|| format!("{}: missing sidecar {}", path.display(), sidecar.display()))?,
    )
    .with_context(|| format!("{}: malformed sidecar", sidecar.display()))?;
    let sign = match meta.target_class {
        Some(StanceLabel::Anti) => -1.0,
        _ => 1.0,
    };
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut rd = csv::Reader::from_reader(file);
    let header = rd.headers().with_context(|| format!("{}: row 1", path.display()))?.clone();
    if header.iter().ne(["rank", "name", "phi"]) {
        bail!("{}: row 1: expected header rank,name,phi", path.display());
    }
    let mut out = Vec::new();
    for (i, record) in rd.records().enumerate() {
        let row = i + 2;
        let record = record.with_context(|| format!("{}: row {row}", path.display()))?;
        let phi: f64 = record[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .with_context(|| format!("{}: row {row}: bad phi {:?}", path.display(), &record[2]))?;
        out.push((record[1].to_owned(), sign * phi));
    }
    Ok(out)
}

#[derive(Default)]
struct TokenStat {
    total: f64,
    count: usize,
}

/// Top-`k` tokens pushing toward each class, by mean signed contribution.
fn token_tables(files: &[Vec<(String, f64)>], k: usize) -> String {
    let mut stats: BTreeMap<&str, TokenStat> = BTreeMap::new();
    for (name, phi) in files.iter().flatten() {
        let s = stats.entry(name.as_str()).or_default();
        s.total += phi;
        s.count += 1;
    }
    let mut out = String::new();
    for (label, sign) in [(StanceLabel::Pro, 1.0), (StanceLabel::Anti, -1.0)] {
        let mut ranked: Vec<(&str, f64, usize)> = stats
            .iter()
            .map(|(name, s)| (*name, sign * s.total / s.count as f64, s.count))
            .filter(|(_, m, _)| *m > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        out.push_str(&format!("\n### Toward {label}\n\n"));
        if ranked.is_empty() {
            out.push_str("_No tokens push toward this class._\n");
            continue;
        }
        out.push_str("| Rank | Token | Mean φ | Occurrences |\n|---:|---|---:|---:|\n");
        for (i, (name, mean, count)) in ranked.iter().take(k).enumerate() {
            out.push_str(&format!("| {} | {} | {:.4} | {} |\n", i + 1, name.replace('|', "\\|"), mean, count));
        }
    }
    out
}

pub fn run(a: ReportArgs) -> Result<String> {
    let inputs = paths(&a.inputs);
    if inputs.is_empty() {
        return Err(crate::commands::Usage("--inputs names no report CSV".into()).into());
    }
    let mut md = String::from("# Ablation results\n");
    for path in &inputs {
        let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
        let report = AblationReport::read_csv(file).with_context(|| format!("{}", path.display()))?;
        if inputs.len() > 1 {
            md.push_str(&format!("\n## {}\n", path.display()));
        }
        md.push('\n');
        md.push_str(&render_markdown(&report));
    }

    let attribution_paths = paths(&a.attributions);
    md.push_str("\n## Token explanations\n");
    if attribution_paths.is_empty() {
        md.push_str("\n_No attribution files were supplied, so this section is omitted._\n");
    } else {
        let files = attribution_paths.iter().map(|p| read_attribution(p)).collect::<Result<Vec<_>>>()?;
        md.push_str(&format!("\nAggregated over {} explanations; φ is signed toward the named class.\n", files.len()));
        md.push_str(&token_tables(&files, a.top));
    }

    match &a.out {
        Some(p) => {
            fs::write(p, &md).with_context(|| format!("cannot write {}", p.display()))?;
            Ok(format!("report: {} grids, {} attributions to {}", inputs.len(), attribution_paths.len(), p.display()))
        }
        None => {
            print!("{md}");
            Ok(format!("report: {} grids, {} attributions", inputs.len(), attribution_paths.len()))
        }
    }
}
