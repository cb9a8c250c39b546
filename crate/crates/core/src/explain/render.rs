use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{LayerGrid, MaskStats, PathwayTrace};
use crate::error::{Error, Result};

/// Plain (P2) greymap: kept weights are 255, pruned weights 0.
pub fn pgm(grid: &LayerGrid) -> String {
    let mut out = format!("P2\n{} {}\n255\n", grid.cols, grid.rows);
    for r in 0..grid.rows {
        let row = &grid.bits[r * grid.cols..(r + 1) * grid.cols];
        let line: Vec<&str> = row.iter().map(|&b| if b { "255" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Token-saliency matrix as CSV: a header of token strings, then one row per
/// concept.
pub fn saliency_csv(trace: &PathwayTrace) -> String {
    let mut out = String::from("concept");
    for t in &trace.tokens {
        out.push(',');
        out.push_str(&csv_field(t));
    }
    out.push('\n');
    for (c, row) in trace.concepts.iter().zip(&trace.token_saliency) {
        out.push_str(&csv_field(&c.name));
        for v in row {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    out
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::Data {
        message: e.to_string(),
        path: Some(path),
        line: None,
    })
}

/// Writes `report.json`, `saliency.csv` and one `mask_k{k}_{layer}.pgm` per
/// concept and encoder layer into `dir`. Returns the written paths.
pub fn render_report(trace: &PathwayTrace, stats: &MaskStats, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Data {
        message: e.to_string(),
        path: Some(dir.to_path_buf()),
        line: None,
    })?;
    let mut written = Vec::new();
    let json = serde_json::to_string_pretty(trace).expect("trace serializes") + "\n";
    let p = dir.join("report.json");
    write(p.clone(), &json)?;
    written.push(p);
    let p = dir.join("saliency.csv");
    write(p.clone(), &saliency_csv(trace))?;
    written.push(p);
    for (k, layers) in stats.grids.iter().enumerate() {
        for grid in layers {
            let name = grid.name.replace('.', "_");
            let p = dir.join(format!("mask_k{k}_{name}.pgm"));
            write(p.clone(), &pgm(grid))?;
            written.push(p);
        }
    }
    Ok(written)
}
