//! Merge result CSVs into an SC-vs-MC comparison table and plots.

use crate::scenario::RunError;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const VALUE_COLUMNS: [&str; 4] = ["snr_db_mean", "snr_model_db", "a_nli_db", "gmi_bits_per_2d"];
const KEY_COLUMNS: [&str; 2] = ["distance_km", "snr_db"];

#[derive(Debug)]
struct SeriesTable {
    stem: String,
    key_column: String,
    value_column: String,
    /// scheme -> (key -> value); files without a scheme column use "".
    series: BTreeMap<String, BTreeMap<u64, (f64, f64)>>,
}

fn key_bits(v: f64) -> u64 {
    // total-order bits so f64 keys can index a BTreeMap.
    let b = v.to_bits();
    if v.is_sign_negative() {
        !b
    } else {
        b | (1 << 63)
    }
}

fn read_table(path: &Path) -> Result<SeriesTable, RunError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |names: &[&str]| {
        names
            .iter()
            .find_map(|n| headers.iter().position(|h| h == *n).map(|i| (n.to_string(), i)))
    };
    let (key_column, key_idx) = find(&KEY_COLUMNS).ok_or_else(|| {
        RunError::Scenario(format!(
            "schema mismatch in {}: no key column ({})",
            path.display(),
            KEY_COLUMNS.join("/")
        ))
    })?;
    let (value_column, value_idx) = find(&VALUE_COLUMNS).ok_or_else(|| {
        RunError::Scenario(format!(
            "schema mismatch in {}: no value column ({})",
            path.display(),
            VALUE_COLUMNS.join("/")
        ))
    })?;
    let scheme_idx = headers.iter().position(|h| h == "scheme");
    let stem = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    let mut series: BTreeMap<String, BTreeMap<u64, (f64, f64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let key: f64 = rec[key_idx]
            .parse()
            .map_err(|_| RunError::Scenario(format!("bad {key_column} in {}", path.display())))?;
        let value: f64 = rec[value_idx]
            .parse()
            .map_err(|_| RunError::Scenario(format!("bad {value_column} in {}", path.display())))?;
        let scheme = scheme_idx.map(|i| rec[i].to_string()).unwrap_or_default();
        series.entry(scheme).or_default().insert(key_bits(key), (key, value));
    }
    Ok(SeriesTable { stem, key_column, value_column, series })
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub out_dir: PathBuf,
    pub svg_dir: Option<PathBuf>,
}

/// Merge the given CSVs; write `comparison.csv` (and optional SVG) and
/// return the comparison path.
pub fn run_report(csv_paths: &[PathBuf], opts: &ReportOptions) -> Result<PathBuf, RunError> {
    if csv_paths.is_empty() {
        return Err(RunError::Scenario("report needs at least one csv".into()));
    }
    let mut tables = Vec::new();
    for p in csv_paths {
        tables.push(read_table(p)?);
    }
    let key_column = tables[0].key_column.clone();
    for t in &tables {
        if t.key_column != key_column {
            return Err(RunError::Scenario(format!(
                "schema mismatch: {} is keyed by {}, expected {}",
                t.stem, t.key_column, key_column
            )));
        }
    }
    // Disambiguate duplicate stems deterministically.
    let mut names: Vec<String> = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        let mut name = t.stem.clone();
        if names.contains(&name) {
            name = format!("{name}#{i}");
        }
        names.push(name);
    }

    let mut keys: BTreeMap<u64, f64> = BTreeMap::new();
    for t in &tables {
        for by_key in t.series.values() {
            for (kb, (k, _)) in by_key {
                keys.insert(*kb, *k);
            }
        }
    }

    // Column layout: per (file, scheme) a value column; per file an
    // SC-minus-MC delta when both schemes are present; per file >0 a
    // delta against the first file for every shared scheme.
    let mut header: Vec<String> = vec![key_column.clone()];
    type ColFn<'a> = Box<dyn Fn(u64) -> Option<f64> + 'a>;
    let mut columns: Vec<ColFn> = Vec::new();
    for (t, name) in tables.iter().zip(&names) {
        for (scheme, by_key) in &t.series {
            let label = if scheme.is_empty() {
                format!("{}[{}]", t.value_column, name)
            } else {
                format!("{}[{}:{}]", t.value_column, name, scheme)
            };
            header.push(label);
            columns.push(Box::new(move |kb| by_key.get(&kb).map(|(_, v)| *v)));
        }
    }
    for (t, name) in tables.iter().zip(&names) {
        let sc = t.series.get("SC");
        let mc = t.series.iter().find(|(k, _)| k.starts_with("MC")).map(|(_, v)| v);
        if let (Some(sc), Some(mc)) = (sc, mc) {
            header.push(format!("delta_sc_minus_mc_db[{name}]"));
            columns.push(Box::new(move |kb| {
                match (sc.get(&kb), mc.get(&kb)) {
                    (Some((_, a)), Some((_, b))) => Some(a - b),
                    _ => None,
                }
            }));
        }
    }
    let first = &tables[0];
    for (t, name) in tables.iter().zip(&names).skip(1) {
        for (scheme, by_key) in &t.series {
            if let Some(base) = first.series.get(scheme) {
                let label = if scheme.is_empty() {
                    format!("delta_vs_{}[{}]", names[0], name)
                } else {
                    format!("delta_vs_{}[{}:{}]", names[0], name, scheme)
                };
                header.push(label);
                columns.push(Box::new(move |kb| {
                    match (by_key.get(&kb), base.get(&kb)) {
                        (Some((_, a)), Some((_, b))) => Some(a - b),
                        _ => None,
                    }
                }));
            }
        }
    }

    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push_str("\r\n");
    for (kb, k) in &keys {
        let mut row = vec![format!("{k}")];
        for col in &columns {
            row.push(col(*kb).map(|v| format!("{v}")).unwrap_or_default());
        }
        out.push_str(&row.join(","));
        out.push_str("\r\n");
    }
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| RunError::Io {
        path: opts.out_dir.display().to_string(),
        source: e,
    })?;
    let out_path = opts.out_dir.join("comparison.csv");
    let tmp = out_path.with_extension("tmp");
    std::fs::write(&tmp, &out)
        .map_err(|e| RunError::Io { path: tmp.display().to_string(), source: e })?;
    std::fs::rename(&tmp, &out_path)
        .map_err(|e| RunError::Io { path: out_path.display().to_string(), source: e })?;

    if let Some(svg_dir) = &opts.svg_dir {
        std::fs::create_dir_all(svg_dir).map_err(|e| RunError::Io {
            path: svg_dir.display().to_string(),
            source: e,
        })?;
        let mut plot_series = Vec::new();
        for (t, name) in tables.iter().zip(&names) {
            for (scheme, by_key) in &t.series {
                let label =
                    if scheme.is_empty() { name.clone() } else { format!("{name}:{scheme}") };
                let pts: Vec<(f64, f64)> = by_key.values().copied().collect();
                plot_series.push((label, pts));
            }
        }
        let svg = crate::svg::line_plot(
            &plot_series,
            &key_column,
            &tables[0].value_column,
            "comparison",
        );
        let svg_path = svg_dir.join("comparison.svg");
        std::fs::write(&svg_path, svg)
            .map_err(|e| RunError::Io { path: svg_path.display().to_string(), source: e })?;
    }
    Ok(out_path)
}
