//! File formats: grayscale images in, `points.json` and `trace.csv` out.

use crate::CliError;
use sdot_core::{BilinearDensity, GridInterp, SolverTrace};
use serde::{Deserialize, Serialize};
use std::fmt::Write;
use std::fs;
use std::path::Path;

/// Loads a PGM/PNG image as a density on Ω. Pixel values are normalized
/// luminance in [0,1]; `invert` maps v ↦ 1−v (classic stippling puts ink
/// where the image is dark, so photographs usually want it). The result is
/// normalized to unit mass.
pub fn load_density(
    path: &Path,
    invert: bool,
    pixels_are_corners: bool,
) -> Result<BilinearDensity, CliError> {
    let img = image::open(path)
        .map_err(|e| CliError::BadInput(format!("cannot read {}: {e}", path.display())))?
        .to_luma16();
    let (width, height) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = img
        .pixels()
        .map(|p| {
            let v = p.0[0] as f64 / 65535.0;
            if invert {
                1.0 - v
            } else {
                v
            }
        })
        .collect();
    let interp = if pixels_are_corners {
        GridInterp::Corner
    } else {
        GridInterp::CellMean
    };
    BilinearDensity::from_image_grid(width, height, &values, interp)
        .map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))
}

/// The `points.json` payload. Field meaning depends on the mode: stippling
/// stores the final Voronoi masses m̃ᵢ = ν(𝒱ᵢ) and zero potentials; blue
/// noise stores the fixed target masses 1/n and the optimal potentials φ*.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointsFile {
    pub schema: u32,
    pub n: usize,
    pub mode: String,
    pub positions: Vec<[f64; 2]>,
    pub masses: Vec<f64>,
    pub potentials: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub seed: u64,
}

pub const POINTS_SCHEMA: u32 = 1;

impl PointsFile {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(format!("serializing {}: {e}", path.display())))?;
        fs::write(path, json + "\n")
            .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| CliError::BadInput(format!("cannot read {}: {e}", path.display())))?;
        let parsed: PointsFile = serde_json::from_str(&raw)
            .map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))?;
        if parsed.schema != POINTS_SCHEMA {
            return Err(CliError::BadInput(format!(
                "{}: unsupported schema {} (expected {})",
                path.display(),
                parsed.schema,
                POINTS_SCHEMA
            )));
        }
        if parsed.positions.len() != parsed.n
            || parsed.masses.len() != parsed.n
            || parsed.potentials.len() != parsed.n
        {
            return Err(CliError::BadInput(format!(
                "{}: inconsistent array lengths for n = {}",
                path.display(),
                parsed.n
            )));
        }
        Ok(parsed)
    }
}

pub const TRACE_HEADER: &str =
    "iter,objective,grad_M_norm,grad_l2_norm,step_sigma,cg_iters,pd_flag,dual_iters,wall_ms";

/// Writes the fixed nine-column CSV; floats use Rust's shortest
/// round-trip formatting so re-parsing reproduces the exact values.
pub fn write_trace(path: &Path, trace: &SolverTrace) -> Result<(), CliError> {
    let mut out = String::with_capacity(64 * (trace.records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        out.write_fmt(format_args!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.iter,
            r.objective,
            r.grad_m_norm,
            r.grad_l2_norm,
            r.step_sigma,
            r.cg_iters,
            r.pd_flag,
            r.dual_iters,
            r.wall_ms
        ))
        .expect("writing to a String cannot fail");
    }
    fs::write(path, out).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}
