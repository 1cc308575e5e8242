//! Ellipse "persons" on noise, with angular correspondences to a circle mesh.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coco::from_json_bytes;
use crate::error::{invalid, Error, Result};
use crate::geometry::{iou, BBox};
use crate::surface::{CorrespondenceSample, Mesh};

/// Inner edge of the supervised band, as a fraction of the ellipse radius.
pub const BAND_INNER: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Horizontal semi-axis.
    pub a: f64,
    /// Vertical semi-axis.
    pub b: f64,
}

impl Ellipse {
    pub fn bbox(&self) -> BBox {
        BBox {
            x1: self.cx - self.a,
            y1: self.cy - self.b,
            x2: self.cx + self.a,
            y2: self.cy + self.b,
        }
    }

    /// Normalized radius and angular parameter in `[0, 2*pi)` of a point.
    pub fn polar(&self, x: f64, y: f64) -> (f64, f64) {
        let u = (x - self.cx) / self.a;
        let v = (y - self.cy) / self.b;
        (u.hypot(v), v.atan2(u).rem_euclid(TAU))
    }
}

/// Mesh vertex for angular parameter `theta` on a `vertices`-gon.
pub fn angle_to_vertex(theta: f64, vertices: usize) -> usize {
    ((theta * vertices as f64 / TAU).round() as usize) % vertices
}

/// A supervised pixel; `sample.row`/`col` are image pixel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneCorrespondence {
    /// Index into `gt_boxes`.
    pub instance: usize,
    pub sample: CorrespondenceSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub size: usize,
    /// `1 x size x size`, row-major.
    pub image: Vec<f64>,
    pub ellipses: Vec<Ellipse>,
    pub gt_boxes: Vec<BBox>,
    pub mesh: Mesh,
    pub gt_correspondences: Vec<SceneCorrespondence>,
}

/// Deterministic scene for `seed` with a `vertices`-gon mesh.
pub fn generate_synthetic_scene(seed: u64, vertices: usize, image_size: usize) -> Result<SyntheticScene> {
    if vertices < 8 {
        return Err(invalid(format!("mesh needs at least 8 vertices, got {vertices}")));
    }
    if image_size < 32 {
        return Err(invalid(format!("image size must be at least 32, got {image_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = image_size as f64;
    let wanted = rng.gen_range(1..=3);
    let mut ellipses: Vec<Ellipse> = Vec::new();
    let mut intensity = Vec::new();
    for _ in 0..100 {
        if ellipses.len() == wanted {
            break;
        }
        let a = rng.gen_range(0.1 * s..0.25 * s);
        let b = rng.gen_range(0.1 * s..0.25 * s);
        let cx = rng.gen_range(a + 1.0..s - a - 1.0);
        let cy = rng.gen_range(b + 1.0..s - b - 1.0);
        let e = Ellipse { cx, cy, a, b };
        let level = rng.gen_range(0.6..1.0);
        if ellipses.iter().all(|o| iou(&o.bbox(), &e.bbox()) < 0.1) {
            ellipses.push(e);
            intensity.push(level);
        }
    }

    let mut image: Vec<f64> = (0..image_size * image_size)
        .map(|_| rng.gen_range(-0.1..0.1))
        .collect();
    let mut gt_correspondences = Vec::new();
    for py in 0..image_size {
        for px in 0..image_size {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut band_taken = false;
            for (k, e) in ellipses.iter().enumerate() {
                let (r, theta) = e.polar(x, y);
                if r <= 1.0 {
                    image[py * image_size + px] += intensity[k];
                    if r >= BAND_INNER && !band_taken {
                        band_taken = true;
                        gt_correspondences.push(SceneCorrespondence {
                            instance: k,
                            sample: CorrespondenceSample {
                                row: py,
                                col: px,
                                gt_vertex: angle_to_vertex(theta, vertices),
                                image_id: seed,
                            },
                        });
                    }
                }
            }
        }
    }
    Ok(SyntheticScene {
        seed,
        size: image_size,
        image,
        gt_boxes: ellipses.iter().map(Ellipse::bbox).collect(),
        ellipses,
        mesh: Mesh::circle(vertices)?,
        gt_correspondences,
    })
}

/// `grid C H W` header, then one line of `W` values per `(c, row)`.
pub fn write_grid(channels: usize, height: usize, width: usize, values: &[f64]) -> Result<String> {
    if values.len() != channels * height * width {
        return Err(Error::Dimension(format!(
            "grid {channels}x{height}x{width} needs {} values, got {}",
            channels * height * width,
            values.len()
        )));
    }
    let mut s = format!("grid {channels} {height} {width}\n");
    for row in values.chunks(width.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", cells.join(" "));
    }
    Ok(s)
}

/// Inverse of [`write_grid`]; values may be split across lines arbitrarily.
pub fn parse_grid(text: &str) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
    let fmt = |line, message: String| Error::Format { line, message };
    let (n, header) = lines.next().ok_or_else(|| fmt(1, "empty grid file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "grid" {
        return Err(fmt(n, format!("expected `grid C H W`, got `{header}`")));
    }
    let dims = parts[1..]
        .iter()
        .map(|t| t.parse::<usize>().map_err(|e| fmt(n, format!("bad dimension `{t}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    let mut values = Vec::with_capacity(c * h * w);
    let mut last = n;
    for (n, l) in lines {
        last = n;
        for t in l.split_whitespace() {
            values.push(t.parse::<f64>().map_err(|e| fmt(n, format!("bad value `{t}`: {e}")))?);
        }
    }
    if values.len() != c * h * w {
        return Err(fmt(last, format!("expected {} values, found {}", c * h * w, values.len())));
    }
    Ok((c, h, w, values))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    seed: u64,
    size: usize,
    ellipses: Vec<Ellipse>,
    gt_boxes: Vec<BBox>,
    gt_correspondences: Vec<SceneCorrespondence>,
}

const IMAGE_FILE: &str = "image.grid";
const SIDECAR_FILE: &str = "scene.json";
const MESH_FILE: &str = "mesh.txt";

/// Writes `image.grid`, `scene.json` and `mesh.txt` into `dir`.
pub fn save_scene(scene: &SyntheticScene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(IMAGE_FILE), write_grid(1, scene.size, scene.size, &scene.image)?)?;
    let side = Sidecar {
        seed: scene.seed,
        size: scene.size,
        ellipses: scene.ellipses.clone(),
        gt_boxes: scene.gt_boxes.clone(),
        gt_correspondences: scene.gt_correspondences.clone(),
    };
    let json = serde_json::to_string_pretty(&side).map_err(|e| invalid(e.to_string()))?;
    fs::write(dir.join(SIDECAR_FILE), json)?;
    fs::write(dir.join(MESH_FILE), scene.mesh.to_text())?;
    Ok(())
}

pub fn load_scene(dir: &Path) -> Result<SyntheticScene> {
    let (c, h, w, image) = parse_grid(&fs::read_to_string(dir.join(IMAGE_FILE))?)?;
    let side: Sidecar = from_json_bytes(&fs::read(dir.join(SIDECAR_FILE))?)?;
    if c != 1 || h != side.size || w != side.size {
        return Err(Error::Dimension(format!(
            "image grid is {c}x{h}x{w}, sidecar says 1x{0}x{0}",
            side.size
        )));
    }
    let mesh = Mesh::parse(&fs::read_to_string(dir.join(MESH_FILE))?)?;
    Ok(SyntheticScene {
        seed: side.seed,
        size: side.size,
        image,
        ellipses: side.ellipses,
        gt_boxes: side.gt_boxes,
        mesh,
        gt_correspondences: side.gt_correspondences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_scenes_are_identical() {
        let a = generate_synthetic_scene(5, 16, 32).unwrap();
        let b = generate_synthetic_scene(5, 16, 32).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_scene(6, 16, 32).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn constructed_invariants() {
        for seed in 0..50 {
            let s = generate_synthetic_scene(seed, 32, 40).unwrap();
            assert!((1..=3).contains(&s.gt_boxes.len()));
            for b in &s.gt_boxes {
                assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 40.0 && b.y2 <= 40.0);
                assert!(b.area() > 0.0);
            }
            assert!(!s.gt_correspondences.is_empty());
            for c in &s.gt_correspondences {
                let (x, y) = (c.sample.col as f64 + 0.5, c.sample.row as f64 + 0.5);
                assert!(s.gt_boxes[c.instance].contains_point(x, y));
                assert!(c.sample.gt_vertex < 32);
            }
        }
    }

    #[test]
    fn parameter_bounds() {
        assert!(generate_synthetic_scene(0, 7, 32).is_err());
        assert!(generate_synthetic_scene(0, 8, 31).is_err());
    }

    #[test]
    fn vertex_of_cardinal_angles() {
        assert_eq!(angle_to_vertex(0.0, 8), 0);
        assert_eq!(angle_to_vertex(TAU / 4.0, 8), 2);
        assert_eq!(angle_to_vertex(TAU - 1e-9, 8), 0);
    }

    #[test]
    fn grid_round_trip_and_errors() {
        let v = vec![0.1, -2.5, 3.0, 1e-300, 4.0, 5.0];
        let text = write_grid(1, 2, 3, &v).unwrap();
        assert!(text.starts_with("grid 1 2 3\n"));
        assert_eq!(parse_grid(&text).unwrap(), (1, 2, 3, v));
        assert!(matches!(parse_grid("grid 1 1 2\n1.0\n"), Err(Error::Format { line: 2, .. })));
        assert!(matches!(parse_grid("grid 1 1 1\nx\n"), Err(Error::Format { line: 2, .. })));
        assert!(parse_grid("").is_err());
    }
}
