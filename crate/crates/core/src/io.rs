//! Persisted artifacts: the binary field format, CSV tables, JSON manifests and
//! simple SVG plots. Every file is written to a temporary sibling and renamed.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::field::{ScalarField, TorusGrid};
use crate::harness::SweepRecord;
use crate::model::EnergyBudget;
use crate::record::{RunKind, RunRecord};

pub const FIELD_MAGIC: &[u8; 4] = b"TFLD";
pub const FIELD_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: String,
        source: std::io::Error,
    },
    #[error("not a field file: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.display().to_string(),
        source,
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(fs_err(path))
}

/// What a stored field holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    Density = 0,
    Velocity = 1,
    Momentum = 2,
}

impl FieldRole {
    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Self::Density),
            1 => Some(Self::Velocity),
            2 => Some(Self::Momentum),
            _ => None,
        }
    }
}

/// Encode components as: 32-byte header (`TFLD`, version, dim, n, role,
/// component count as little-endian u32, 8 zero bytes), then each component's
/// values as little-endian f64 in row-major order (last axis fastest).
pub fn encode_field(role: FieldRole, components: &[&ScalarField]) -> Vec<u8> {
    let grid = components[0].grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * grid.len() * components.len());
    out.extend_from_slice(FIELD_MAGIC);
    for v in [FIELD_VERSION, grid.dim() as u32, grid.n() as u32, role as u32, components.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&[0u8; 8]);
    for c in components {
        for v in c.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<(FieldRole, Vec<ScalarField>), IoError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != FIELD_MAGIC {
        return Err(IoError::BadHeader("missing magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if word(1) != FIELD_VERSION {
        return Err(IoError::BadHeader(format!("unsupported version {}", word(1))));
    }
    let grid = TorusGrid::new(word(2) as usize, word(3) as usize).map_err(|e| IoError::BadHeader(e.to_string()))?;
    let role = FieldRole::from_code(word(4)).ok_or_else(|| IoError::BadHeader(format!("role {}", word(4))))?;
    let count = word(5) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * grid.len() * count {
        return Err(IoError::BadHeader(format!("expected {} payload bytes, found {}", 8 * grid.len() * count, body.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let fields = values
        .chunks_exact(grid.len())
        .map(|c| ScalarField::new(&grid, c.to_vec()).expect("length checked"))
        .collect();
    Ok((role, fields))
}

/// Lattice coordinates followed by one column per component.
pub fn field_csv(components: &[&ScalarField]) -> String {
    let grid = components[0].grid();
    let axes = ["x", "y", "z"];
    let mut s = String::new();
    let mut header: Vec<String> = axes[..grid.dim()].iter().map(|a| a.to_string()).collect();
    header.extend((0..components.len()).map(|c| format!("v{c}")));
    s.push_str(&header.join(","));
    s.push('\n');
    for i in 0..grid.len() {
        let x = grid.coords(i);
        let mut row: Vec<String> = x[..grid.dim()].iter().map(|v| format!("{v:.17e}")).collect();
        row.extend(components.iter().map(|c| format!("{:.17e}", c.values()[i])));
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Budget rows; limit runs get an extra `q` column.
pub fn budgets_csv(record: &RunRecord) -> String {
    let limit = record.kind == RunKind::Limit;
    let mut s = String::from(EnergyBudget::CSV_HEADER);
    if limit {
        s.push_str(",q");
    }
    s.push('\n');
    for (b, r) in record.budgets.iter().zip(&record.residuals) {
        s.push_str(&b.csv_row());
        if limit {
            let _ = write!(s, ",{r:.17e}");
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: RunKind,
    pub config: RunConfig,
    pub inputs_hash: String,
    pub crate_version: String,
    pub files: Vec<String>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub initial_energy: f64,
    /// `max|q|` for limit runs, `max(0, r)` for scaled runs.
    pub residual: f64,
    pub relative_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub mass_drift: f64,
    pub min_density: f64,
    pub slaving_defect: f64,
    pub floor_activations: usize,
}

pub fn config_hash(config: &RunConfig) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(config).expect("config serializes")))
}

pub fn summarize(record: &RunRecord, config: &RunConfig) -> RunSummary {
    let (initial, residual, tolerance) = match record.kind {
        RunKind::Limit => (
            record.initial_budget().internal,
            record.max_abs_residual(),
            config.tolerances.limit_energy,
        ),
        RunKind::Scaled => (
            record.initial_budget().energy(),
            record.max_positive_residual(),
            config.tolerances.scaled_energy,
        ),
    };
    let relative = if initial > 0.0 { residual / initial } else { residual };
    RunSummary {
        steps: record.audit.steps,
        initial_energy: initial,
        residual,
        relative_residual: relative,
        tolerance,
        pass: relative <= tolerance,
        mass_drift: record.audit.mass_drift,
        min_density: record.audit.min_density,
        slaving_defect: record.audit.slaving_defect,
        floor_activations: record.audit.floor_activations,
    }
}

/// Write `budgets.csv`, the checkpoint fields and `manifest.json` into `dir`.
pub fn write_run(dir: &Path, record: &RunRecord, config: &RunConfig) -> Result<RunManifest, IoError> {
    let mut files = vec!["budgets.csv".to_string()];
    atomic_write(&dir.join("budgets.csv"), budgets_csv(record).as_bytes())?;
    for (k, snap) in record.snapshots.iter().enumerate() {
        let mut put = |stem: &str, role: FieldRole, comps: Vec<&ScalarField>| -> Result<(), IoError> {
            let name = format!("fields/{stem}_{k:03}.tfld");
            atomic_write(&dir.join(&name), &encode_field(role, &comps))?;
            files.push(name);
            Ok(())
        };
        put("rho", FieldRole::Density, vec![&snap.rho])?;
        put("velocity", FieldRole::Velocity, snap.velocity.components().iter().collect())?;
        if let Some(m) = &snap.momentum {
            put("momentum", FieldRole::Momentum, m.components().iter().collect())?;
        }
    }
    let manifest = RunManifest {
        kind: record.kind,
        config: config.clone(),
        inputs_hash: config_hash(config),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        files: {
            files.push("manifest.json".into());
            files
        },
        summary: summarize(record, config),
    };
    atomic_write(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// `epsilon,t,kinetic_scaled,l1_gap,energy_residual`, where `kinetic_scaled`
/// is `(ε/2)∫ρ|u|²`, half of the sweep's `K`.
pub fn metrics_csv(record: &SweepRecord) -> String {
    let mut s = String::from("epsilon,t,kinetic_scaled,l1_gap,energy_residual\n");
    for e in record.successful() {
        for k in 0..e.times.len() {
            let _ = writeln!(
                s,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                e.epsilon,
                e.times[k],
                0.5 * e.kinetic[k],
                e.l1_gap[k],
                e.energy_residual[k]
            );
        }
    }
    s
}

pub fn fits_csv(record: &SweepRecord) -> String {
    let mut s = String::from("quantity,t,slope,stderr\n");
    for f in &record.fits {
        let _ = writeln!(s, "{},{:.17e},{:.17e},{:.17e}", f.quantity, f.t, f.slope, f.stderr);
    }
    s
}

/// Log-log line plot, one polyline per series.
pub fn loglog_svg(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.1.iter().copied())
        .filter(|p| p.0 > 0.0 && p.1 > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label} (log10)</text>\n",
        w / 2.0,
        w / 2.0,
        h - 12.0
    );
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let bounds = |sel: fn(&(f64, f64)) -> f64| {
        let lo = pts.iter().map(sel).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(sel).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = bounds(|p| p.1);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let _ = writeln!(
        svg,
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let _ = writeln!(svg, "<text x=\"{pad}\" y=\"{}\">{x0:.2}</text>", h - pad + 16.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x1:.2}</text>", w - pad, h - pad + 16.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y0:.2}</text>", pad - 4.0, h - pad);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.2}</text>", pad - 4.0, pad + 10.0);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    for (i, (name, data)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let line: Vec<String> = data
            .iter()
            .filter(|p| p.0 > 0.0 && p.1 > 0.0)
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x.log10()), sy(y.log10())))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            line.join(" ")
        );
        for p in &line {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(svg, "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"{color}\"/>");
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>",
            w - pad + 4.0,
            pad + 16.0 * (i as f64 + 1.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// `sweep.json`, `metrics.csv`, `fits.csv` and two plots. Returns the paths written.
pub fn write_sweep(dir: &Path, record: &SweepRecord) -> Result<Vec<PathBuf>, IoError> {
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<(), IoError> {
        let path = dir.join(name);
        atomic_write(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    put("sweep.json", serde_json::to_string_pretty(record)?.as_bytes())?;
    put("metrics.csv", metrics_csv(record).as_bytes())?;
    put("fits.csv", fits_csv(record).as_bytes())?;
    let times: Vec<f64> = record.config.base.control.output_times();
    let kinetic: Vec<(String, Vec<(f64, f64)>)> = times.iter().map(|&t| (format!("t={t}"), record.kinetic_at(t))).collect();
    let gap: Vec<(String, Vec<(f64, f64)>)> = times.iter().map(|&t| (format!("t={t}"), record.gap_at(t))).collect();
    put("plots/kinetic_vs_epsilon.svg", loglog_svg("K = eps * int rho |u|^2", "epsilon", &kinetic).as_bytes())?;
    put("plots/gap_vs_epsilon.svg", loglog_svg("G = ||rho_eps - rho_lim||_1", "epsilon", &gap).as_bytes())?;
    Ok(written)
}

pub fn read_sweep(dir: &Path) -> Result<SweepRecord, IoError> {
    let path = dir.join("sweep.json");
    let text = fs::read_to_string(&path).map_err(fs_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, IoError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(fs_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}
