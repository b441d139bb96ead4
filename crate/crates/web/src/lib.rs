//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported operation is a thin wrapper over a plain Rust function of
//! the same name with an `_impl` suffix, so the logic is testable natively.

use vlg::evaluation::{aggregate, welch_t};
use vlg::features::synth::{SynthAttributes, SynthConfig, SynthGenerator};
use vlg::training::loss::smoothed_bce;
use vlg::training::{lr_at, TrainConfig};
use vlg::voxel::{assemble_volume, binarize, voxel_iou, OccupancyGrid, GRID};
use wasm_bindgen::prelude::*;

fn generator() -> SynthGenerator {
    SynthGenerator::new(SynthConfig {
        views: 1,
        d_view: 1,
        d_text: 1,
        ..SynthConfig::default()
    })
    .expect("default synthetic config is valid")
}

/// Occupancy of one synthetic object seen along each axis.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct VoxelView {
    projections: [Vec<u32>; 3],
    occupied: usize,
    iou: f64,
}

#[wasm_bindgen]
impl VoxelView {
    /// Row-major `GRID × GRID` counts of occupied cells along `axis`
    /// (0 = x, 1 = y, 2 = z).
    pub fn projection(&self, axis: usize) -> Vec<u32> {
        self.projections.get(axis).cloned().unwrap_or_default()
    }

    #[wasm_bindgen(getter)]
    pub fn occupied(&self) -> usize {
        self.occupied
    }

    /// IoU against the comparison object.
    #[wasm_bindgen(getter)]
    pub fn iou(&self) -> f64 {
        self.iou
    }
}

#[wasm_bindgen]
pub fn grid_size() -> usize {
    GRID
}

#[wasm_bindgen]
pub fn shape_count() -> usize {
    SynthConfig::default().shapes
}

#[wasm_bindgen]
pub fn max_parts() -> usize {
    SynthConfig::default().max_parts
}

fn occupancy(
    gen: &SynthGenerator,
    shape_id: usize,
    part_count: usize,
    seed: u64,
    threshold: f64,
) -> Result<OccupancyGrid, String> {
    let attrs = SynthAttributes {
        color_id: 0,
        shape_id,
        part_count,
    };
    let (object, _) = gen.object("demo", seed, attrs).map_err(|e| e.to_string())?;
    let volume = assemble_volume(&object.factors).map_err(|e| e.to_string())?;
    binarize(&volume, threshold).map_err(|e| e.to_string())
}

fn project(grid: &OccupancyGrid) -> [Vec<u32>; 3] {
    let mut out = [vec![0u32; GRID * GRID], vec![0u32; GRID * GRID], vec![0u32; GRID * GRID]];
    for i in 0..GRID {
        for j in 0..GRID {
            for k in 0..GRID {
                if grid.get(i, j, k) {
                    out[0][j * GRID + k] += 1;
                    out[1][i * GRID + k] += 1;
                    out[2][i * GRID + j] += 1;
                }
            }
        }
    }
    out
}

/// Decodes the factors of object A, thresholds the volume and compares it
/// with object B decoded from the same noise seed.
pub fn explore_voxels_impl(
    shape_a: usize,
    parts_a: usize,
    shape_b: usize,
    parts_b: usize,
    seed: u64,
    threshold: f64,
) -> Result<VoxelView, String> {
    let gen = generator();
    let a = occupancy(&gen, shape_a, parts_a, seed, threshold)?;
    let b = occupancy(&gen, shape_b, parts_b, seed, threshold)?;
    Ok(VoxelView {
        projections: project(&a),
        occupied: a.count(),
        iou: voxel_iou(&a, &b),
    })
}

#[wasm_bindgen]
pub fn explore_voxels(
    shape_a: usize,
    parts_a: usize,
    shape_b: usize,
    parts_b: usize,
    seed: u32,
    threshold: f64,
) -> Result<VoxelView, JsError> {
    explore_voxels_impl(shape_a, parts_a, shape_b, parts_b, u64::from(seed), threshold)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchView {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
    pub mean_a: f64,
    pub std_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
}

fn parse_sample(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

/// Welch's two-tailed t-test on two comma or space separated samples.
pub fn welch_test_impl(a: &str, b: &str) -> Result<WelchView, String> {
    let (a, b) = (parse_sample(a)?, parse_sample(b)?);
    let r = welch_t(&a, &b).map_err(|e| e.to_string())?;
    let sa = aggregate(&a).map_err(|e| e.to_string())?;
    let sb = aggregate(&b).map_err(|e| e.to_string())?;
    Ok(WelchView {
        t: r.t,
        dof: r.dof,
        p: r.p,
        mean_a: sa.mean,
        std_a: sa.std.unwrap_or(0.0),
        mean_b: sb.mean,
        std_b: sb.std.unwrap_or(0.0),
    })
}

#[wasm_bindgen]
pub fn welch_test(a: &str, b: &str) -> Result<WelchView, JsError> {
    welch_test_impl(a, b).map_err(|e| JsError::new(&e))
}

/// `points` samples of the smoothed pair loss along `s_target = 1 − s_distractor`,
/// for `s` evenly spaced over the open interval (0, 1).
pub fn loss_curve_impl(smoothing: f64, points: usize) -> Result<Vec<f64>, String> {
    if !(0.0..0.5).contains(&smoothing) {
        return Err(format!("smoothing {smoothing} outside [0, 0.5)"));
    }
    if points < 2 {
        return Err("need at least 2 points".into());
    }
    Ok((0..points)
        .map(|i| {
            let s = (i + 1) as f64 / (points + 1) as f64;
            smoothed_bce(s, 1.0 - s, smoothing)
        })
        .collect())
}

#[wasm_bindgen]
pub fn loss_curve(smoothing: f64, points: usize) -> Result<Vec<f64>, JsError> {
    loss_curve_impl(smoothing, points).map_err(|e| JsError::new(&e))
}

/// Learning rate at `points` evenly spaced steps in `[0, total_steps]`.
pub fn lr_curve_impl(
    base_lr: f64,
    warmup_steps: u32,
    total_steps: u32,
    points: usize,
) -> Result<Vec<f64>, String> {
    let cfg = TrainConfig {
        base_lr,
        warmup_steps: u64::from(warmup_steps),
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    if points < 2 {
        return Err("need at least 2 points".into());
    }
    Ok((0..points)
        .map(|i| {
            let step = (u64::from(total_steps) * i as u64) / (points as u64 - 1);
            lr_at(step, &cfg)
        })
        .collect())
}

#[wasm_bindgen]
pub fn lr_curve(
    base_lr: f64,
    warmup_steps: u32,
    total_steps: u32,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    lr_curve_impl(base_lr, warmup_steps, total_steps, points).map_err(|e| JsError::new(&e))
}
