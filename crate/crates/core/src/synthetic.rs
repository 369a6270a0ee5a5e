//! Procedural panoramic corpora for tests, demos and benchmarks.
//!
//! Each room has its own hue and stripe pattern, so block means and gradient
//! histograms both tell rooms apart. Within a room a bright vertical band
//! sweeps around the panorama as the camera advances along a straight
//! trajectory, making position recoverable by nearest-neighbour search.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::derive_seed;
use crate::dataset::{write_file, Condition, Pose, POSE_SIDECAR};
use crate::error::{Error, Result};
use crate::imaging::{hsv_to_rgb, to_u8, Panorama};

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub rooms: usize,
    pub frames_per_room: usize,
    pub width: usize,
    pub height: usize,
    /// Distance between consecutive capture points, meters.
    pub step: f64,
    /// Trajectory offset in units of `step`; 0.5 places frames halfway
    /// between those of an offset-0 corpus.
    pub offset: f64,
    /// Per-channel uniform noise amplitude.
    pub noise: u8,
    /// One subdirectory per condition when more than one is given.
    pub conditions: Vec<Condition>,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            rooms: 9,
            frames_per_room: 10,
            width: 128,
            height: 32,
            step: 0.2,
            offset: 0.0,
            noise: 6,
            conditions: vec![Condition::Cloudy],
            seed: 0,
        }
    }
}

pub fn room_name(index: usize) -> String {
    format!("room{index:02}")
}

/// Pose of frame `k` (possibly fractional) in `room`.
pub fn pose(spec: &CorpusSpec, room: usize, k: f64) -> Pose {
    Pose::new(room as f64 * 10.0 + k * spec.step, room as f64 * 3.0)
}

/// Renders the view from fractional frame position `k` of `room`.
pub fn render(
    spec: &CorpusSpec,
    room: usize,
    k: f64,
    condition: Condition,
    seed: u64,
) -> Result<Panorama> {
    if spec.rooms == 0 || spec.width == 0 || spec.height == 0 {
        return Err(Error::arg(
            "corpus needs at least one room and a non-empty image",
        ));
    }
    let (w, h) = (spec.width as f64, spec.height as f64);
    let hue = 360.0 * room as f64 / spec.rooms as f64;
    let angle = PI * (room % 4) as f64 / 4.0;
    let period = h / (2.0 + (room % 3) as f64);
    let span = spec.frames_per_room.max(1) as f64;
    let band_centre = w * 0.9 * k / span;
    let sigma = w / 24.0;
    let tone = match condition {
        Condition::Cloudy => 1.0,
        Condition::Night => 0.85,
        Condition::Sunny => 1.1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = i32::from(spec.noise);
    Panorama::from_fn(spec.width, spec.height, |x, y| {
        let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
        let u = xf * angle.cos() + yf * angle.sin();
        let stripe = 0.5 + 0.5 * (2.0 * PI * u / period).sin();
        let d = (xf - band_centre).rem_euclid(w);
        let d = d.min(w - d);
        let band = (-(d * d) / (2.0 * sigma * sigma)).exp();
        let value = (0.4 + 0.25 * stripe + 0.3 * band) * tone;
        let rgb = hsv_to_rgb(hue, 0.75, value.min(1.0));
        rgb.map(|c| {
            let n = if amp > 0 {
                rng.gen_range(-amp..=amp)
            } else {
                0
            };
            to_u8(f64::from(c) + f64::from(n))
        })
    })
}

/// Writes the corpus under `root` (`root/<room>/` or, with several
/// conditions, `root/<condition>/<room>/`), each room with a pose sidecar.
pub fn write_corpus(spec: &CorpusSpec, root: &Path) -> Result<usize> {
    if spec.conditions.is_empty() {
        return Err(Error::arg("corpus needs at least one condition"));
    }
    let mut written = 0;
    for &condition in &spec.conditions {
        let base = if spec.conditions.len() > 1 {
            root.join(condition.as_str())
        } else {
            root.to_path_buf()
        };
        for room in 0..spec.rooms {
            let dir = base.join(room_name(room));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut poses = String::from("filename,x,y,timestamp\n");
            for frame in 0..spec.frames_per_room {
                let k = frame as f64 + spec.offset;
                let name = format!("frame{frame:04}.png");
                let id = format!("{}/{}/{name}", condition.as_str(), room_name(room));
                let p = render(spec, room, k, condition, derive_seed(spec.seed, &id, 0))?;
                p.save_png(&dir.join(&name))?;
                let at = pose(spec, room, k);
                let _ = writeln!(poses, "{name},{},{},{frame}", at.x, at.y);
                written += 1;
            }
            write_file(&dir.join(POSE_SIDECAR), poses.as_bytes())?;
        }
    }
    Ok(written)
}
