//! Procedural shapes dataset: shape × object color × background color × size.
//!
//! Images are hard-edged rasters, so every pixel is exactly the object color
//! or exactly the background color. Objects sit at the image center plus a
//! small deterministic jitter.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::KeyedRng;
use crate::schema::{AnnotationRow, AnnotationTable, AttributeSchema, SchemaError};

pub const SHAPES: [&str; 3] = ["square", "ellipse", "heart"];

pub const OBJECT_COLORS: [(&str, [u8; 3]); 3] = [
    ("red", [255, 0, 0]),
    ("yellow", [255, 255, 0]),
    ("blue", [0, 0, 255]),
];

pub const BACKGROUND_COLORS: [(&str, [u8; 3]); 3] = [
    ("orange", [255, 153, 51]),
    ("green", [0, 153, 0]),
    ("purple", [102, 0, 255]),
];

pub const SIZES: [(&str, f64); 3] = [("small", 0.8), ("middle", 0.9), ("big", 1.0)];

// Extent of {(x²+y²−1)³ − x²y³ ≤ 0}: x in ±1.139, y in [−1, 1.236].
const HEART_HALF_WIDTH: f64 = 1.139;
const HEART_Y_MIN: f64 = -1.0;
const HEART_Y_MAX: f64 = 1.236;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("jitter ({dx}, {dy}) exceeds the allowed ±{limit} pixels")]
    JitterOutOfRange { dx: i32, dy: i32, limit: i32 },
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("assignment index out of range: {0:?}")]
    InvalidAssignment([usize; 4]),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub image_side: usize,
    pub per_cell: usize,
    pub jitter_seed: u64,
    /// Largest absolute per-axis jitter in pixels; at most `image_side / 8`.
    pub max_jitter: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_side: 64,
            per_cell: 20,
            jitter_seed: 0,
            max_jitter: 1,
        }
    }
}

/// A rendered RGB image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub side: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = 3 * (y * self.side + x);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn count_color(&self, color: [u8; 3]) -> usize {
        self.pixels.chunks_exact(3).filter(|p| *p == color).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthImage {
    pub instance_id: String,
    /// Indices of (shape, object color, background color, size).
    pub assignment: [usize; 4],
    pub raster: Raster,
}

/// The dSprites-style schema matching this generator's attribute order.
pub fn schema() -> AttributeSchema {
    AttributeSchema::builtin("dsprites").expect("built-in schema is valid")
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.image_side < 8 {
            return Err(SynthError::InvalidSpec(
                "image_side must be at least 8".into(),
            ));
        }
        if self.per_cell == 0 {
            return Err(SynthError::InvalidSpec(
                "per_cell must be at least 1".into(),
            ));
        }
        if self.max_jitter > self.image_side / 8 {
            return Err(SynthError::InvalidSpec(format!(
                "max_jitter {} exceeds image_side / 8",
                self.max_jitter
            )));
        }
        Ok(())
    }

    fn jitter_limit(&self) -> i32 {
        (self.image_side / 8) as i32
    }

    /// Rasterizes one object. Base object size is half the image side.
    pub fn render(&self, assignment: [usize; 4], jitter: (i32, i32)) -> Result<Raster, SynthError> {
        let [shape, obj, bg, size] = assignment;
        if shape >= 3 || obj >= 3 || bg >= 3 || size >= 3 {
            return Err(SynthError::InvalidAssignment(assignment));
        }
        let limit = self.jitter_limit();
        let (dx, dy) = jitter;
        if dx.abs() > limit || dy.abs() > limit {
            return Err(SynthError::JitterOutOfRange { dx, dy, limit });
        }
        let side = self.image_side;
        let scale = SIZES[size].1;
        let base = side as f64 / 2.0;
        let extent = scale * base;
        let cx = (side / 2) as i64 + dx as i64;
        let cy = (side / 2) as i64 + dy as i64;
        let (fcx, fcy) = (cx as f64, cy as f64);

        let inside: Box<dyn Fn(i64, i64) -> bool> = match shape {
            0 => {
                let n = extent.round() as i64;
                let x0 = cx - n / 2;
                let y0 = cy - n / 2;
                Box::new(move |x, y| x >= x0 && x < x0 + n && y >= y0 && y < y0 + n)
            }
            1 => {
                let a = extent / 2.0;
                let b = 0.35 * extent;
                Box::new(move |x, y| {
                    let u = (x as f64 + 0.5 - fcx) / a;
                    let v = (y as f64 + 0.5 - fcy) / b;
                    u * u + v * v <= 1.0
                })
            }
            _ => {
                let width = 2.0 * HEART_HALF_WIDTH;
                let height = HEART_Y_MAX - HEART_Y_MIN;
                let k = extent / width.max(height);
                let y_mid = (HEART_Y_MAX + HEART_Y_MIN) / 2.0;
                Box::new(move |x, y| {
                    let u = (x as f64 + 0.5 - fcx) / k;
                    let v = y_mid - (y as f64 + 0.5 - fcy) / k;
                    let r = u * u + v * v - 1.0;
                    r * r * r - u * u * v * v * v <= 0.0
                })
            }
        };

        let fg = OBJECT_COLORS[obj].1;
        let bgc = BACKGROUND_COLORS[bg].1;
        let mut pixels = Vec::with_capacity(side * side * 3);
        for y in 0..side as i64 {
            for x in 0..side as i64 {
                pixels.extend_from_slice(if inside(x, y) { &fg } else { &bgc });
            }
        }
        Ok(Raster { side, pixels })
    }

    fn jitter_for(&self, index: u64) -> (i32, i32) {
        let j = self.max_jitter as i64;
        let mut rng = KeyedRng::new(self.jitter_seed, "synth-jitter", index);
        let dx = rng.range_inclusive(-j, j) as i32;
        let dy = rng.range_inclusive(-j, j) as i32;
        (dx, dy)
    }

    /// All images and their annotation table, in canonical combination order.
    pub fn generate(&self) -> Result<(Vec<SynthImage>, AnnotationTable), SynthError> {
        self.validate()?;
        let schema = schema();
        let mut images = Vec::with_capacity(schema.cell_count() * self.per_cell);
        let mut rows = Vec::with_capacity(images.capacity());
        for flat in 0..schema.cell_count() {
            let combo = schema.combination(flat);
            let assignment = [combo[0], combo[1], combo[2], combo[3]];
            for k in 0..self.per_cell {
                let index = (flat * self.per_cell + k) as u64;
                let raster = self.render(assignment, self.jitter_for(index))?;
                let instance_id = instance_id(assignment, k);
                rows.push(AnnotationRow {
                    instance_id: instance_id.clone(),
                    values: combo.clone(),
                });
                images.push(SynthImage {
                    instance_id,
                    assignment,
                    raster,
                });
            }
        }
        let table = AnnotationTable::new(schema, rows)?;
        Ok((images, table))
    }
}

pub fn instance_id(assignment: [usize; 4], k: usize) -> String {
    format!(
        "synth_{}-{}-{}-{}_{k}",
        SHAPES[assignment[0]],
        OBJECT_COLORS[assignment[1]].0,
        BACKGROUND_COLORS[assignment[2]].0,
        SIZES[assignment[3]].0
    )
}

/// Writes `images/<id>.png`, `annotations.csv`, `spec.json` and `schema.json`.
pub fn generate_dataset(
    spec: &SynthSpec,
    out_dir: impl AsRef<Path>,
) -> Result<AnnotationTable, SynthError> {
    let out = out_dir.as_ref();
    let (images, table) = spec.generate()?;
    let img_dir = out.join("images");
    fs::create_dir_all(&img_dir)?;
    for img in &images {
        save_png(
            &img.raster,
            img_dir.join(format!("{}.png", img.instance_id)),
        )?;
    }
    crate::schema::write_table(&table, out.join("annotations.csv"))?;
    let mut f = File::create(out.join("spec.json"))?;
    serde_json::to_writer_pretty(&mut f, spec)?;
    f.write_all(b"\n")?;
    table.schema().save(out.join("schema.json"))?;
    Ok(table)
}

pub fn save_png(raster: &Raster, path: impl AsRef<Path>) -> Result<(), SynthError> {
    let side = raster.side as u32;
    let img = image::RgbImage::from_raw(side, side, raster.pixels.clone())
        .expect("raster buffer matches its side");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Raster, SynthError> {
    let img = image::open(path)?.to_rgb8();
    if img.width() != img.height() {
        return Err(SynthError::InvalidSpec(format!(
            "image is {}x{}, expected a square",
            img.width(),
            img.height()
        )));
    }
    Ok(Raster {
        side: img.width() as usize,
        pixels: img.into_raw(),
    })
}
