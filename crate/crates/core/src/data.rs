//! Seeded synthetic bird's-eye-view scenes.
//!
//! Every scene draws its randomness from `(params.seed, scene index)` only, so
//! generation order never affects content. Objects are axis-aligned boxes
//! whose perimeter is sampled with truncated isotropic Gaussian noise; clutter
//! points are uniform over the square extent.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{parse_json, Error, Result};
use crate::rng::{splitmix64, Xoshiro256};

/// Minimum sampled box side length.
pub const MIN_BOX_SIDE: f64 = 0.1;
/// Surface noise is truncated at this many standard deviations.
pub const NOISE_TRUNCATION: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainParams {
    /// Side of the square world `[0, S] x [0, S]`.
    pub scene_extent: f64,
    /// Inclusive range of object counts.
    pub objects_per_scene: [u32; 2],
    pub points_per_object: f64,
    pub point_noise_sigma: f64,
    /// Mean `(w, l)`; `w` spans x and `l` spans y.
    pub size_mean: [f64; 2],
    pub size_std: [f64; 2],
    pub clutter_points: f64,
    pub seed: u64,
}

impl DomainParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.scene_extent,
            self.points_per_object,
            self.point_noise_sigma,
            self.size_mean[0],
            self.size_mean[1],
            self.size_std[0],
            self.size_std[1],
            self.clutter_points,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("domain parameters must be finite"));
        }
        if self.scene_extent <= 0.0 {
            return Err(Error::config("scene_extent must be positive"));
        }
        let [lo, hi] = self.objects_per_scene;
        if lo > hi {
            return Err(Error::config("objects_per_scene must be an ordered range"));
        }
        if self.points_per_object < 0.0 || self.clutter_points < 0.0 {
            return Err(Error::config("point counts must be non-negative"));
        }
        if self.point_noise_sigma < 0.0 || self.size_std.iter().any(|&s| s < 0.0) {
            return Err(Error::config("standard deviations must be non-negative"));
        }
        if self.size_mean.iter().any(|&s| s <= 0.0) {
            return Err(Error::config("size_mean must be positive"));
        }
        if self.size_mean.iter().any(|&s| s >= self.scene_extent / 2.0) {
            return Err(Error::config(format!(
                "size_mean {:?} must be below half the scene extent {}",
                self.size_mean, self.scene_extent
            )));
        }
        Ok(())
    }

    /// Expected number of points per scene (object surface plus clutter).
    pub fn expected_points(&self) -> f64 {
        let objects = f64::from(self.objects_per_scene[0] + self.objects_per_scene[1]) / 2.0;
        objects * self.points_per_object.max(1.0) + self.clutter_points
    }
}

/// Axis-aligned box in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBev {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub l: f64,
}

impl BoxBev {
    pub fn inside(&self, extent: f64) -> bool {
        self.cx - self.w / 2.0 >= 0.0
            && self.cx + self.w / 2.0 <= extent
            && self.cy - self.l / 2.0 >= 0.0
            && self.cy + self.l / 2.0 <= extent
    }

    /// Euclidean distance from `(x, y)` to the box outline.
    pub fn perimeter_distance(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.cx).abs() - self.w / 2.0;
        let dy = (y - self.cy).abs() - self.l / 2.0;
        if dx > 0.0 || dy > 0.0 {
            dx.max(0.0).hypot(dy.max(0.0))
        } else {
            -dx.max(dy)
        }
    }

    fn perimeter_point(&self, t: f64) -> (f64, f64) {
        let (x0, y0) = (self.cx - self.w / 2.0, self.cy - self.l / 2.0);
        let (w, l) = (self.w, self.l);
        if t < w {
            (x0 + t, y0)
        } else if t < w + l {
            (x0 + w, y0 + (t - w))
        } else if t < 2.0 * w + l {
            (x0 + w - (t - w - l), y0 + l)
        } else {
            (x0, y0 + l - (t - 2.0 * w - l))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub id: u32,
    pub points: Vec<[f64; 2]>,
    pub boxes: Vec<BoxBev>,
}

fn scene_rng(seed: u64, index: u32) -> Xoshiro256 {
    Xoshiro256::seed_from_u64(splitmix64(seed ^ splitmix64(u64::from(index))))
}

fn poisson_like(rng: &mut Xoshiro256, mean: f64, min: f64) -> usize {
    (mean + mean.sqrt() * rng.next_gaussian()).round().max(min) as usize
}

/// Generates scene `index` for the given parameters.
pub fn generate_scene(params: &DomainParams, index: u32) -> Scene {
    let mut rng = scene_rng(params.seed, index);
    let s = params.scene_extent;
    let [lo, hi] = params.objects_per_scene;
    let n_objects = lo + rng.below(u64::from(hi - lo) + 1) as u32;

    let mut boxes = Vec::with_capacity(n_objects as usize);
    let mut points = Vec::new();
    for _ in 0..n_objects {
        let bx = loop {
            let w = (params.size_mean[0] + params.size_std[0] * rng.next_gaussian()).max(MIN_BOX_SIDE);
            let l = (params.size_mean[1] + params.size_std[1] * rng.next_gaussian()).max(MIN_BOX_SIDE);
            if w >= s || l >= s {
                continue;
            }
            let placed = loop {
                let b = BoxBev {
                    cx: rng.next_f64() * s,
                    cy: rng.next_f64() * s,
                    w,
                    l,
                };
                if b.inside(s) {
                    break b;
                }
            };
            break placed;
        };
        let count = poisson_like(&mut rng, params.points_per_object, 1.0);
        let perimeter = 2.0 * (bx.w + bx.l);
        let sigma = params.point_noise_sigma;
        let limit = (NOISE_TRUNCATION * sigma).powi(2);
        for _ in 0..count {
            let (px, py) = bx.perimeter_point(rng.next_f64() * perimeter);
            let (nx, ny) = loop {
                let nx = sigma * rng.next_gaussian();
                let ny = sigma * rng.next_gaussian();
                if nx * nx + ny * ny <= limit {
                    break (nx, ny);
                }
            };
            points.push([(px + nx).clamp(0.0, s), (py + ny).clamp(0.0, s)]);
        }
        boxes.push(bx);
    }
    let clutter = poisson_like(&mut rng, params.clutter_points, 0.0);
    for _ in 0..clutter {
        points.push([rng.next_f64() * s, rng.next_f64() * s]);
    }
    Scene {
        id: index,
        points,
        boxes,
    }
}

pub fn generate_dataset(params: &DomainParams, n_scenes: usize) -> Result<Vec<Scene>> {
    params.validate()?;
    if n_scenes == 0 {
        return Err(Error::config("n_scenes must be at least 1"));
    }
    Ok((0..n_scenes as u32).map(|i| generate_scene(params, i)).collect())
}

/// Fraction of a dataset kept as labeled supervision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub fraction: Ratio<u64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(fraction: Ratio<u64>, seed: u64) -> Result<Self> {
        if *fraction.numer() == 0 || fraction > Ratio::from_integer(1) {
            return Err(Error::config(format!("split fraction {fraction} outside (0, 1]")));
        }
        Ok(Self { fraction, seed })
    }

    /// `percent / 100`.
    pub fn percent(percent: u64, seed: u64) -> Result<Self> {
        Self::new(Ratio::new(percent, 100), seed)
    }

    pub fn size_for(&self, dataset_size: usize) -> usize {
        let n = (self.fraction * Ratio::from_integer(dataset_size as u64)).to_integer() as usize;
        n.max(1).min(dataset_size)
    }
}

/// Seeded permutation prefix of `0..dataset_size`. Splits with equal seeds
/// are nested: a smaller fraction is a prefix of a larger one.
pub fn make_split(dataset_size: usize, spec: &SplitSpec) -> Vec<u32> {
    let mut ids = Xoshiro256::seed_from_u64(spec.seed).permutation(dataset_size);
    ids.truncate(spec.size_for(dataset_size));
    ids
}

/// Formats with 17 significant digits.
pub(crate) fn fmt_f64(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String cannot fail");
}

pub fn scene_to_json_line(scene: &Scene) -> String {
    let mut out = String::with_capacity(32 + scene.points.len() * 48);
    write!(out, "{{\"id\":{},\"points\":[", scene.id).unwrap();
    for (i, p) in scene.points.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        fmt_f64(&mut out, p[0]);
        out.push(',');
        fmt_f64(&mut out, p[1]);
        out.push(']');
    }
    out.push_str("],\"boxes\":[");
    for (i, b) in scene.boxes.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("{\"cx\":");
        fmt_f64(&mut out, b.cx);
        out.push_str(",\"cy\":");
        fmt_f64(&mut out, b.cy);
        out.push_str(",\"w\":");
        fmt_f64(&mut out, b.w);
        out.push_str(",\"l\":");
        fmt_f64(&mut out, b.l);
        out.push('}');
    }
    out.push_str("]}");
    out
}

pub fn write_scenes(mut w: impl Write, scenes: &[Scene]) -> std::io::Result<()> {
    for s in scenes {
        w.write_all(scene_to_json_line(s).as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scenes(r: impl BufRead) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<scenes>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = parse_json(line.as_bytes()).map_err(|e| match e {
            Error::Parse {
                column,
                path,
                message,
                ..
            } => Error::Parse {
                line: i + 1,
                column,
                path,
                message,
            },
            other => other,
        })?;
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn save_scenes(path: &Path, scenes: &[Scene]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_scenes(&mut w, scenes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scenes(std::io::BufReader::new(file))
}
