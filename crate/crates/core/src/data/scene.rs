use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;
/// Minimum pixel area of each object as a fraction of the canvas.
pub const MIN_OBJECT_FRACTION: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub shape: ShapeKind,
    pub color: [f64; 3],
    /// Centre `(y, x)` in pixels.
    pub center: (f64, f64),
    /// Extent `(height, width)` in pixels.
    pub size: (f64, f64),
}

impl SceneObject {
    fn covers(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 + 0.5 - self.center.0) / (self.size.0 / 2.0);
        let dx = (x as f64 + 0.5 - self.center.1) / (self.size.1 / 2.0);
        match self.shape {
            ShapeKind::Ellipse => dy * dy + dx * dx <= 1.0,
            ShapeKind::Rectangle => dy.abs() <= 1.0 && dx.abs() <= 1.0,
        }
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        let (cy, cx) = self.center;
        let (h, w) = self.size;
        (cy - h / 2.0, cy + h / 2.0, cx - w / 2.0, cx + w / 2.0)
    }

    fn overlaps(&self, other: &SceneObject, margin: f64) -> bool {
        let (a0, a1, a2, a3) = self.bbox();
        let (b0, b1, b2, b3) = other.bbox();
        a0 < b1 + margin && b0 < a1 + margin && a2 < b3 + margin && b2 < a3 + margin
    }

    pub fn label(&self) -> String {
        let [r, g, b] = self.color;
        let hue = if r >= g && r >= b {
            "reddish"
        } else if g >= b {
            "greenish"
        } else {
            "bluish"
        };
        let kind = match self.shape {
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Rectangle => "rectangle",
        };
        format!("{hue} {kind}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// `(H, W)`.
    pub canvas: (usize, usize),
    /// 1 to 3.
    pub object_count: usize,
}

impl SceneSpec {
    pub fn new(seed: u64, canvas: (usize, usize), object_count: usize) -> Result<Self> {
        if !(1..=3).contains(&object_count) {
            return Err(Error::Config(format!("object_count must be 1..=3, got {object_count}")));
        }
        if canvas.0 < 16 || canvas.1 < 16 {
            return Err(Error::Config(format!("canvas {canvas:?} is smaller than 16x16")));
        }
        Ok(SceneSpec { seed, canvas, object_count })
    }
}

#[derive(Clone, Debug)]
pub struct Scene<T> {
    /// `[3, H, W]` in `[0, 1]`.
    pub clean: Tensor<T>,
    /// `[H, W]`, exactly 1 on object pixels and 0 elsewhere.
    pub mask: Tensor<T>,
    pub objects: Vec<SceneObject>,
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [(); 3].map(|_| lo + (hi - lo) * rng.random::<f64>())
}

/// A smooth two-colour vertical gradient with non-overlapping filled shapes.
pub fn gen_scene<T: Scalar>(spec: &SceneSpec) -> Result<Scene<T>> {
    let (h, w) = spec.canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let top = random_color(&mut rng, 0.15, 0.85);
    let bottom = random_color(&mut rng, 0.15, 0.85);
    let min_area = MIN_OBJECT_FRACTION * (h * w) as f64;
    // busier scenes get smaller objects so they still fit side by side
    let spread = 0.23 / spec.object_count as f64;

    let mut objects: Vec<SceneObject> = Vec::with_capacity(spec.object_count);
    for k in 0..spec.object_count {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let size = (
                h as f64 * (0.22 + spread * rng.random::<f64>()),
                w as f64 * (0.22 + spread * rng.random::<f64>()),
            );
            let center = (
                size.0 / 2.0 + (h as f64 - size.0) * rng.random::<f64>(),
                size.1 / 2.0 + (w as f64 - size.1) * rng.random::<f64>(),
            );
            let shape = if rng.random::<bool>() { ShapeKind::Ellipse } else { ShapeKind::Rectangle };
            let color = random_color(&mut rng, 0.05, 1.0);
            let candidate = SceneObject { shape, color, center, size };
            if objects.iter().any(|o| o.overlaps(&candidate, 1.0)) {
                continue;
            }
            let area = (0..h * w).filter(|i| candidate.covers(i / w, i % w)).count();
            if (area as f64) < min_area {
                continue;
            }
            placed = Some(candidate);
            break;
        }
        let obj = placed.ok_or_else(|| {
            Error::Generation(format!(
                "could not place object {k} of seed {} after {MAX_PLACEMENT_ATTEMPTS} attempts",
                spec.seed
            ))
        })?;
        objects.push(obj);
    }

    let mut clean = vec![T::zero(); 3 * h * w];
    let mut mask = vec![T::zero(); h * w];
    for y in 0..h {
        let t = if h > 1 { y as f64 / (h - 1) as f64 } else { 0.0 };
        for x in 0..w {
            let hit = objects.iter().rev().find(|o| o.covers(y, x));
            let rgb = match hit {
                Some(o) => o.color,
                None => [0, 1, 2].map(|c| top[c] * (1.0 - t) + bottom[c] * t),
            };
            for c in 0..3 {
                clean[c * h * w + y * w + x] = T::lit(rgb[c]);
            }
            if hit.is_some() {
                mask[y * w + x] = T::one();
            }
        }
    }
    Ok(Scene {
        clean: Tensor::new(vec![3, h, w], clean)?,
        mask: Tensor::new(vec![h, w], mask)?,
        objects,
    })
}
