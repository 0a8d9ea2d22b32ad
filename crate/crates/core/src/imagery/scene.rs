use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{apply_speckle, Dataset, SarImage};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream, Rng};

const MAX_PLACEMENT_ATTEMPTS: usize = 200;

/// The five synthetic target classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Rectangle,
    Ellipse,
    Cross,
    LShape,
    TwoBlob,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 5] = [
        ShapeClass::Rectangle,
        ShapeClass::Ellipse,
        ShapeClass::Cross,
        ShapeClass::LShape,
        ShapeClass::TwoBlob,
    ];

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::config(format!("class_id {id} out of range 0..{}", Self::ALL.len())))
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Rectangle => "rectangle",
            ShapeClass::Ellipse => "ellipse",
            ShapeClass::Cross => "cross",
            ShapeClass::LShape => "l_shape",
            ShapeClass::TwoBlob => "two_blob",
        }
    }

    /// Membership test in shape-local coordinates normalised by the half extent,
    /// so every shape lies inside `[-1, 1]^2`. `aspect` is in (0, 1].
    fn contains(self, u: f64, v: f64, aspect: f64) -> bool {
        match self {
            ShapeClass::Rectangle => u.abs() <= 1.0 && v.abs() <= aspect,
            ShapeClass::Ellipse => u * u + (v / aspect).powi(2) <= 1.0,
            ShapeClass::Cross => {
                let t = 0.3;
                (u.abs() <= 1.0 && v.abs() <= t) || (v.abs() <= 1.0 && u.abs() <= t)
            }
            ShapeClass::LShape => {
                let t = 0.55;
                let in_box = u.abs() <= 1.0 && v.abs() <= 1.0;
                in_box && (v <= -1.0 + t || u <= -1.0 + t)
            }
            ShapeClass::TwoBlob => {
                let r2 = (0.4f64).powi(2);
                (u - 0.6).powi(2) + v * v <= r2 || (u + 0.6).powi(2) + v * v <= r2
            }
        }
    }
}

/// Ranges the random pose is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Half extent of the shape as a fraction of the image side.
    pub size_range: (f64, f64),
    /// Minor/major axis ratio for rectangles and ellipses.
    pub aspect_range: (f64, f64),
    /// Rotation in radians.
    pub orientation_range: (f64, f64),
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            size_range: (0.16, 0.3),
            aspect_range: (0.4, 0.65),
            orientation_range: (0.0, PI),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_size: usize,
    pub class_id: usize,
    pub target_reflectivity: f64,
    pub clutter_reflectivity: f64,
    pub looks: u32,
    #[serde(default)]
    pub geometry: Geometry,
}

impl SceneSpec {
    pub fn new(image_size: usize, class_id: usize, looks: u32) -> Self {
        Self {
            image_size,
            class_id,
            target_reflectivity: 4.0,
            clutter_reflectivity: 1.0,
            looks,
            geometry: Geometry::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ShapeClass::from_id(self.class_id)?;
        if self.image_size < 2 {
            return Err(Error::config("image_size must be >= 2"));
        }
        if !(self.clutter_reflectivity > 0.0) {
            return Err(Error::config("clutter_reflectivity must be > 0"));
        }
        if !(self.target_reflectivity > self.clutter_reflectivity) {
            return Err(Error::config(
                "target_reflectivity must exceed clutter_reflectivity",
            ));
        }
        if self.looks == 0 {
            return Err(Error::config("looks must be >= 1"));
        }
        let g = &self.geometry;
        if !(g.size_range.0 > 0.0 && g.size_range.0 <= g.size_range.1) {
            return Err(Error::config("geometry.size_range must satisfy 0 < min <= max"));
        }
        if !(g.aspect_range.0 > 0.0 && g.aspect_range.0 <= g.aspect_range.1 && g.aspect_range.1 <= 1.0) {
            return Err(Error::config("geometry.aspect_range must satisfy 0 < min <= max <= 1"));
        }
        if !(g.orientation_range.0 <= g.orientation_range.1) {
            return Err(Error::config("geometry.orientation_range must satisfy min <= max"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Same as [`generate_scene`] but also returns the boolean target support.
pub fn generate_scene_with_mask(spec: &SceneSpec, seed: u64) -> Result<(SarImage, usize, Vec<bool>)> {
    spec.validate()?;
    let class = ShapeClass::from_id(spec.class_id)?;
    let size = spec.image_size;
    let side = size as f64;
    let mut rng = rng_from_seed(derive_seed(seed, &[stream::SCENE]));

    let mut placed = None;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let half = uniform(&mut rng, spec.geometry.size_range) * side;
        let aspect = uniform(&mut rng, spec.geometry.aspect_range);
        let theta = uniform(&mut rng, spec.geometry.orientation_range);
        let cy = rng.random_range(0.0..side);
        let cx = rng.random_range(0.0..side);
        // the rotated bounding square of the shape must stay inside the pixel grid
        let (s, c) = theta.sin_cos();
        let reach = half * (s.abs() + c.abs());
        if half >= 1.0
            && cx - reach >= 0.0
            && cy - reach >= 0.0
            && cx + reach <= side - 1.0
            && cy + reach <= side - 1.0
        {
            placed = Some((half, aspect, theta, cy, cx));
            break;
        }
    }
    let (half, aspect, theta, cy, cx) = placed.ok_or_else(|| Error::Placement {
        class: class.name().to_string(),
        size,
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })?;

    let (s, c) = theta.sin_cos();
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let u = (c * dx + s * dy) / half;
            let v = (-s * dx + c * dy) / half;
            mask[y * size + x] = class.contains(u, v, aspect);
        }
    }
    let reflectivity = SarImage::new(
        size,
        size,
        mask.iter()
            .map(|&m| if m { spec.target_reflectivity } else { spec.clutter_reflectivity })
            .collect(),
    )?;
    let img = apply_speckle(&reflectivity, spec.looks, derive_seed(seed, &[stream::SPECKLE]))?;
    Ok((img, spec.class_id, mask))
}

/// One shape of class `spec.class_id` over homogeneous clutter, with speckle.
/// Deterministic in `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<(SarImage, usize)> {
    generate_scene_with_mask(spec, seed).map(|(img, label, _)| (img, label))
}

/// A labelled synthetic corpus: image `i` has class `i % classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub images: usize,
    pub classes: usize,
    pub image_size: usize,
    pub looks: u32,
    pub target_reflectivity: f64,
    pub clutter_reflectivity: f64,
    pub geometry: Geometry,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            images: 2000,
            classes: ShapeClass::ALL.len(),
            image_size: 64,
            looks: 1,
            target_reflectivity: 4.0,
            clutter_reflectivity: 1.0,
            geometry: Geometry::default(),
        }
    }
}

impl CorpusSpec {
    pub fn scene(&self, class_id: usize) -> SceneSpec {
        SceneSpec {
            image_size: self.image_size,
            class_id,
            target_reflectivity: self.target_reflectivity,
            clutter_reflectivity: self.clutter_reflectivity,
            looks: self.looks,
            geometry: self.geometry.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.images == 0 {
            return Err(Error::config("images must be >= 1"));
        }
        if self.classes == 0 || self.classes > ShapeClass::ALL.len() {
            return Err(Error::config(format!(
                "classes must lie in 1..={}",
                ShapeClass::ALL.len()
            )));
        }
        self.scene(0).validate()
    }
}

/// Generates `spec.images` scenes; image `i` uses a seed derived from `(seed, i)`.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut ds = Dataset {
        class_names: ShapeClass::ALL[..spec.classes].iter().map(|c| c.name().to_string()).collect(),
        ..Dataset::default()
    };
    for i in 0..spec.images {
        let class = i % spec.classes;
        let (img, label) = generate_scene(&spec.scene(class), derive_seed(seed, &[stream::SCENE, i as u64]))?;
        ds.images.push(img);
        ds.labels.push(label);
    }
    Ok(ds)
}
