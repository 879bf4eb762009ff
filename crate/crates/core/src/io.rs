//! Dataset directories and atomic file writes.
//!
//! A dataset lives in a directory holding `meta.json` plus one
//! `surface_NNNN.csv` per surface, each with `M₀` rows `t1,t2,value` in
//! row-major grid order.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DiregError, Result};
use crate::grid::{build_grid, DatasetMeta, FunctionalDataset, Surface};

pub const META_FILE: &str = "meta.json";
const HEADER: &str = "t1,t2,value";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFile {
    pub side_count: usize,
    pub n_surfaces: usize,
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub generator: serde_json::Value,
}

pub fn surface_file_name(i: usize) -> String {
    format!("surface_{i:04}.csv")
}

/// Writes `contents` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| DiregError::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(DiregError::io(path, e));
    }
    Ok(())
}

pub fn surface_to_csv(surface: &Surface) -> String {
    let mut s = String::with_capacity(surface.values.len() * 72);
    s.push_str(HEADER);
    s.push('\n');
    for (p, v) in surface.grid.points().zip(&surface.values) {
        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e}", p.t1, p.t2, v);
    }
    s
}

pub fn write_dataset(dataset: &FunctionalDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DiregError::io(dir, e))?;
    for (i, surface) in dataset.surfaces.iter().enumerate() {
        write_atomic(&dir.join(surface_file_name(i)), surface_to_csv(surface).as_bytes())?;
    }
    let meta = MetaFile {
        side_count: dataset.grid.side_count(),
        n_surfaces: dataset.n_surfaces(),
        noise_sd: dataset.noise_sd,
        seed: dataset.meta.seed,
        generator: dataset.meta.generator.clone(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_atomic(&dir.join(META_FILE), json.as_bytes())
}

fn format_err(path: &Path, message: impl Into<String>) -> DiregError {
    DiregError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parses one surface file; the header line is optional.
pub fn parse_surface_csv(path: &Path, text: &str, expected: usize) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(expected);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.eq_ignore_ascii_case(HEADER)) {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(_), Some(_), Some(v), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
            return Err(format_err(path, format!("line {}: expected 3 columns", lineno + 1)));
        };
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| format_err(path, format!("line {}: bad value {v:?}", lineno + 1)))?;
        values.push(v);
    }
    if values.len() != expected {
        return Err(format_err(path, format!("expected {expected} rows, found {}", values.len())));
    }
    Ok(values)
}

pub fn read_dataset(dir: &Path) -> Result<FunctionalDataset> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| DiregError::io(&meta_path, e))?;
    let meta: MetaFile = serde_json::from_str(&text).map_err(|e| format_err(&meta_path, e.to_string()))?;
    let grid = build_grid(meta.side_count)?;
    let mut surfaces = Vec::with_capacity(meta.n_surfaces);
    for i in 0..meta.n_surfaces {
        let path = dir.join(surface_file_name(i));
        let text = fs::read_to_string(&path).map_err(|e| DiregError::io(&path, e))?;
        let values = parse_surface_csv(&path, &text, grid.len())?;
        surfaces.push(Surface::new(grid, values)?);
    }
    FunctionalDataset::new(
        grid,
        surfaces,
        meta.noise_sd,
        DatasetMeta {
            seed: meta.seed,
            generator: meta.generator,
        },
    )
}
