//! Photometric and rotation effects for growing training sets.
//!
//! Each effect is applied on its own (never stacked) at one of a small grid of
//! levels. Randomized effects (spotlight and shadow disks) draw from a ChaCha
//! stream keyed on `(seed, image id, level)` so the output depends only on its
//! inputs, not on scheduling.

use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{write_file, ImageRecord, Manifest, SplitTag};
use crate::error::{Error, Result};
use crate::imaging::{clamp_add, hsv_to_rgb, rgb_to_hsv, shift_columns, to_u8, Panorama};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Effect {
    Spotlight,
    Shadow,
    Brightness,
    Darkness,
    Contrast,
    Saturation,
    Rotation,
}

impl Effect {
    pub fn name(self) -> &'static str {
        match self {
            Effect::Spotlight => "spotlight",
            Effect::Shadow => "shadow",
            Effect::Brightness => "brightness",
            Effect::Darkness => "darkness",
            Effect::Contrast => "contrast",
            Effect::Saturation => "saturation",
            Effect::Rotation => "rotation",
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameter grids for every effect. Levels are 1-based indices into these.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectGrid {
    /// Additive intensity at the centre of a spotlight (or subtracted for a shadow).
    pub spot_deltas: [i32; 5],
    /// Inclusive range the disk diameter is drawn from, in pixels.
    pub diameter_range: (u32, u32),
    /// Gamma exponents below 1.
    pub brightness_gammas: [f64; 3],
    /// Gamma exponents above 1.
    pub darkness_gammas: [f64; 3],
    pub contrast_factors: [f64; 5],
    pub saturation_factors: [f64; 5],
    pub rotation_step_deg: f64,
    pub rotation_levels: u32,
}

impl Default for EffectGrid {
    fn default() -> Self {
        Self {
            spot_deltas: [160, 145, 130, 115, 100],
            diameter_range: (15, 40),
            brightness_gammas: [0.8, 0.6, 0.4],
            darkness_gammas: [1.25, 1.67, 2.5],
            contrast_factors: [0.4, 0.7, 1.3, 1.6, 2.0],
            saturation_factors: [0.2, 0.6, 1.4, 1.8, 2.2],
            rotation_step_deg: 10.0,
            rotation_levels: 35,
        }
    }
}

/// Pivot intensity of the contrast map `64 + c·(I − 64)`.
pub const CONTRAST_PIVOT: f64 = 64.0;

/// A circular light or shadow spot, centred on a pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Disk {
    pub cx: usize,
    pub cy: usize,
    pub diameter: u32,
}

impl EffectGrid {
    pub fn level_count(&self, effect: Effect) -> u32 {
        match effect {
            Effect::Spotlight | Effect::Shadow => self.spot_deltas.len() as u32,
            Effect::Brightness => self.brightness_gammas.len() as u32,
            Effect::Darkness => self.darkness_gammas.len() as u32,
            Effect::Contrast => self.contrast_factors.len() as u32,
            Effect::Saturation => self.saturation_factors.len() as u32,
            Effect::Rotation => self.rotation_levels,
        }
    }

    fn check_level(&self, effect: Effect, level: u32) -> Result<usize> {
        let n = self.level_count(effect);
        if level == 0 || level > n {
            return Err(Error::arg(format!(
                "{effect} level must be in 1..={n}, got {level}"
            )));
        }
        Ok(level as usize - 1)
    }

    /// Signed per-channel delta at the disk centre.
    pub fn spot_delta(&self, effect: Effect, level: u32) -> Result<i32> {
        let i = self.check_level(effect, level)?;
        match effect {
            Effect::Spotlight => Ok(self.spot_deltas[i]),
            Effect::Shadow => Ok(-self.spot_deltas[i]),
            _ => Err(Error::arg(format!("{effect} has no spot delta"))),
        }
    }

    /// Centre uniform over the pixel grid, diameter uniform over the inclusive range.
    pub fn draw_disk(&self, width: usize, height: usize, seed: u64) -> Disk {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cx = rng.gen_range(0..width);
        let cy = rng.gen_range(0..height);
        let diameter = rng.gen_range(self.diameter_range.0..=self.diameter_range.1);
        Disk { cx, cy, diameter }
    }

    /// Number of columns a rotation level shifts a panorama of `width` by.
    pub fn rotation_shift(&self, width: usize, level: u32) -> Result<usize> {
        self.check_level(Effect::Rotation, level)?;
        let degrees = self.rotation_step_deg * level as f64;
        Ok((width as f64 * degrees / 360.0).round_ties_even() as usize)
    }

    /// Applies one effect at one level. `seed` only matters for spotlight and shadow.
    pub fn apply(&self, p: &Panorama, effect: Effect, level: u32, seed: u64) -> Result<Panorama> {
        let i = self.check_level(effect, level)?;
        Ok(match effect {
            Effect::Spotlight | Effect::Shadow => {
                let delta = self.spot_delta(effect, level)?;
                let disk = self.draw_disk(p.width(), p.height(), seed);
                apply_disk(p, disk, delta)
            }
            Effect::Brightness => p.map_lut(&gamma_lut(self.brightness_gammas[i])),
            Effect::Darkness => p.map_lut(&gamma_lut(self.darkness_gammas[i])),
            Effect::Contrast => p.map_lut(&contrast_lut(self.contrast_factors[i])),
            Effect::Saturation => scale_saturation(p, self.saturation_factors[i]),
            Effect::Rotation => shift_columns(p, self.rotation_shift(p.width(), level)? as i64),
        })
    }
}

/// Adds `delta` with linear radial falloff inside the disk: full strength at
/// the centre pixel, zero at the rim. Horizontal distance wraps around the seam.
pub fn apply_disk(p: &Panorama, disk: Disk, delta: i32) -> Panorama {
    let (w, h) = (p.width(), p.height());
    let radius = disk.diameter as f64 / 2.0;
    let reach = radius.ceil() as usize;
    let y_lo = disk.cy.saturating_sub(reach);
    let y_hi = (disk.cy + reach).min(h - 1);

    let mut out = p.clone();
    for y in y_lo..=y_hi {
        let dy = y as f64 - disk.cy as f64;
        for x in 0..w {
            let adx = x.abs_diff(disk.cx);
            let dx = adx.min(w - adx) as f64;
            let dist = dx.hypot(dy);
            if dist >= radius {
                continue;
            }
            let k = (delta as f64 * (1.0 - dist / radius)).round_ties_even() as i32;
            let px = p.get(x, y);
            out.set(x, y, px.map(|v| clamp_add(v, k)));
        }
    }
    out
}

/// `v' = 255·(v/255)^γ`.
pub fn gamma_lut(gamma: f64) -> [u8; 256] {
    std::array::from_fn(|v| to_u8(255.0 * (v as f64 / 255.0).powf(gamma)))
}

/// `I_s = 64 + c·(I − 64)`, clamped.
pub fn contrast_lut(c: f64) -> [u8; 256] {
    std::array::from_fn(|v| to_u8(CONTRAST_PIVOT + c * (v as f64 - CONTRAST_PIVOT)))
}

/// Multiplies HSV saturation by `s`, capping at 1.
pub fn scale_saturation(p: &Panorama, s: f64) -> Panorama {
    p.map_pixels(|rgb| {
        let (h, sat, v) = rgb_to_hsv(rgb);
        if sat == 0.0 {
            return rgb;
        }
        hsv_to_rgb(h, (s * sat).min(1.0), v)
    })
}

pub fn apply_spotlight(p: &Panorama, level: u32, seed: u64) -> Result<Panorama> {
    EffectGrid::default().apply(p, Effect::Spotlight, level, seed)
}

pub fn apply_shadow(p: &Panorama, level: u32, seed: u64) -> Result<Panorama> {
    EffectGrid::default().apply(p, Effect::Shadow, level, seed)
}

pub fn apply_brightness(p: &Panorama, level: u32) -> Result<Panorama> {
    EffectGrid::default().apply(p, Effect::Brightness, level, 0)
}

pub fn apply_darkness(p: &Panorama, level: u32) -> Result<Panorama> {
    EffectGrid::default().apply(p, Effect::Darkness, level, 0)
}

pub fn apply_contrast(p: &Panorama, level: u32) -> Result<Panorama> {
    EffectGrid::default().apply(p, Effect::Contrast, level, 0)
}

pub fn apply_saturation(p: &Panorama, level: u32) -> Result<Panorama> {
    EffectGrid::default().apply(p, Effect::Saturation, level, 0)
}

pub fn apply_rotation(p: &Panorama, level: u32) -> Result<Panorama> {
    EffectGrid::default().apply(p, Effect::Rotation, level, 0)
}

/// The six augmented training-set recipes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    Spotlight,
    Shadow,
    /// Brightness and darkness levels in one set.
    BrightDark,
    Contrast,
    Saturation,
    Rotation,
}

impl Recipe {
    pub const ALL: [Recipe; 6] = [
        Recipe::Spotlight,
        Recipe::Shadow,
        Recipe::BrightDark,
        Recipe::Contrast,
        Recipe::Saturation,
        Recipe::Rotation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Spotlight => "spotlight",
            Recipe::Shadow => "shadow",
            Recipe::BrightDark => "brightdark",
            Recipe::Contrast => "contrast",
            Recipe::Saturation => "saturation",
            Recipe::Rotation => "rotation",
        }
    }

    /// `(effect, level)` pairs generated per source image, in output order.
    /// `max_levels` keeps only the first N.
    pub fn variants(self, grid: &EffectGrid, max_levels: Option<usize>) -> Vec<(Effect, u32)> {
        let effects: &[Effect] = match self {
            Recipe::Spotlight => &[Effect::Spotlight],
            Recipe::Shadow => &[Effect::Shadow],
            Recipe::BrightDark => &[Effect::Brightness, Effect::Darkness],
            Recipe::Contrast => &[Effect::Contrast],
            Recipe::Saturation => &[Effect::Saturation],
            Recipe::Rotation => &[Effect::Rotation],
        };
        let all = effects
            .iter()
            .flat_map(|&e| (1..=grid.level_count(e)).map(move |l| (e, l)));
        match max_levels {
            Some(n) => all.take(n).collect(),
            None => all.collect(),
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL
            .into_iter()
            .find(|r| r.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::arg(format!("unknown augmentation recipe {s:?}")))
    }
}

/// Seed of the RNG stream for one `(image, level)` pair.
pub fn derive_seed(seed: u64, image_id: &str, level: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    h.update([0u8]);
    h.update(level.to_le_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// Relative output path for a record id: the id with any image extension
/// stripped, rejecting anything that could escape the output directory.
fn output_stem(id: &str) -> Result<PathBuf> {
    let path = Path::new(id);
    if path
        .components()
        .any(|c| !matches!(c, Component::Normal(_)))
    {
        return Err(Error::arg(format!(
            "record id {id:?} is not a relative path"
        )));
    }
    let mut stem = path.to_path_buf();
    if matches!(
        stem.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    ) {
        stem.set_extension("");
    }
    Ok(stem)
}

fn variant_path(out_dir: &Path, stem: &Path, tag: &str) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(format!("__{tag}.png"));
    out_dir.join(stem.with_file_name(name))
}

/// Output manifest of a recipe without touching any pixels: per source record,
/// the original followed by one record per variant.
pub fn plan_augmented(
    m: &Manifest,
    recipe: Recipe,
    out_dir: &Path,
    grid: &EffectGrid,
    max_levels: Option<usize>,
) -> Result<Manifest> {
    let variants = recipe.variants(grid, max_levels);
    let mut records = Vec::with_capacity(m.len() * (variants.len() + 1));
    for r in m.records() {
        let stem = output_stem(&r.id)?;
        let tags = std::iter::once("orig".to_string())
            .chain(variants.iter().map(|(e, l)| format!("{e}{l}")));
        for tag in tags {
            records.push(ImageRecord {
                id: format!("{}#{tag}", r.id),
                path: variant_path(out_dir, &stem, &tag),
                ..r.clone()
            });
        }
    }
    m.with_records(records, SplitTag::Augmented)
}

/// Writes the original plus every recipe variant of each image as PNG under
/// `out_dir`, along with `out_dir/manifest.csv`. Room, pose and condition are
/// inherited from the source image.
pub fn build_augmented_dataset(
    m: &Manifest,
    recipe: Recipe,
    seed: u64,
    out_dir: &Path,
    grid: &EffectGrid,
    max_levels: Option<usize>,
) -> Result<Manifest> {
    let plan = plan_augmented(m, recipe, out_dir, grid, max_levels)?;
    let variants = recipe.variants(grid, max_levels);
    let per_source = variants.len() + 1;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    m.records()
        .par_iter()
        .zip(plan.records().par_chunks(per_source))
        .try_for_each(|(src, outputs)| -> Result<()> {
            let image = Panorama::load(&src.path)?;
            if let Some(dir) = outputs[0].path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            image.save_png(&outputs[0].path)?;
            for (&(effect, level), out) in variants.iter().zip(&outputs[1..]) {
                let s = derive_seed(seed, &src.id, level);
                grid.apply(&image, effect, level, s)?.save_png(&out.path)?;
            }
            Ok(())
        })?;

    let mut buf = Vec::new();
    plan.write_csv(&mut buf)?;
    write_file(&out_dir.join("manifest.csv"), &buf)?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: usize, h: usize) -> Panorama {
        Panorama::from_fn(w, h, |x, y| {
            [
                (x * 7 % 256) as u8,
                (y * 13 % 256) as u8,
                ((x + y) * 3 % 256) as u8,
            ]
        })
        .unwrap()
    }

    #[test]
    fn spot_delta_grid_endpoints() {
        let g = EffectGrid::default();
        assert_eq!(g.spot_delta(Effect::Spotlight, 1).unwrap(), 160);
        assert_eq!(g.spot_delta(Effect::Spotlight, 5).unwrap(), 100);
        assert_eq!(g.spot_delta(Effect::Shadow, 1).unwrap(), -160);
    }

    #[test]
    fn level_ranges_are_enforced() {
        let p = gradient(8, 4);
        for (effect, max) in [
            (Effect::Spotlight, 5),
            (Effect::Shadow, 5),
            (Effect::Brightness, 3),
            (Effect::Darkness, 3),
            (Effect::Contrast, 5),
            (Effect::Saturation, 5),
            (Effect::Rotation, 35),
        ] {
            let g = EffectGrid::default();
            assert!(g.apply(&p, effect, 0, 1).is_err(), "{effect} 0");
            assert!(
                g.apply(&p, effect, max + 1, 1).is_err(),
                "{effect} {}",
                max + 1
            );
            assert!(g.apply(&p, effect, max, 1).is_ok());
        }
    }

    #[test]
    fn saturated_and_black_images_absorb_spots() {
        let white = Panorama::filled(64, 32, [255; 3]).unwrap();
        let black = Panorama::filled(64, 32, [0; 3]).unwrap();
        for level in 1..=5 {
            assert_eq!(apply_spotlight(&white, level, 9).unwrap(), white);
            assert_eq!(apply_shadow(&black, level, 9).unwrap(), black);
        }
    }

    #[test]
    fn spotlight_peak_is_the_level_delta() {
        let black = Panorama::filled(64, 64, [0; 3]).unwrap();
        let g = EffectGrid::default();
        let disk = g.draw_disk(64, 64, 42);
        let out = apply_spotlight(&black, 1, 42).unwrap();
        assert_eq!(out.get(disk.cx, disk.cy), [160; 3]);
        let max = out.pixels().iter().copied().max().unwrap();
        assert_eq!(max, 160);
        assert!((15..=40).contains(&disk.diameter));
    }

    #[test]
    fn gamma_endpoints_and_sample() {
        for g in [0.8, 0.6, 0.4, 1.25, 1.67, 2.5, 0.5] {
            let lut = gamma_lut(g);
            assert_eq!(lut[0], 0);
            assert_eq!(lut[255], 255);
        }
        // 255·(64/255)^0.5 = 127.75
        assert_eq!(gamma_lut(0.5)[64], 128);
    }

    #[test]
    fn brightness_on_white_is_noop() {
        let white = Panorama::filled(4, 4, [255; 3]).unwrap();
        for level in 1..=3 {
            assert_eq!(apply_brightness(&white, level).unwrap(), white);
        }
    }

    #[test]
    fn contrast_examples() {
        for c in EffectGrid::default().contrast_factors {
            assert_eq!(contrast_lut(c)[64], 64);
        }
        let id = contrast_lut(1.0);
        assert!((0..256).all(|v| id[v] as usize == v));
        assert_eq!(contrast_lut(2.0)[200], 255);
    }

    #[test]
    fn saturation_examples() {
        let gray = Panorama::filled(2, 2, [77, 77, 77]).unwrap();
        for level in 1..=5 {
            assert_eq!(apply_saturation(&gray, level).unwrap(), gray);
        }
        let red = Panorama::filled(1, 1, [255, 0, 0]).unwrap();
        assert_eq!(scale_saturation(&red, 0.0).get(0, 0), [255, 255, 255]);
        // (200,100,100) has S=0.5; s=2.2 caps at 1 -> (200,0,0)
        let pink = Panorama::filled(1, 1, [200, 100, 100]).unwrap();
        assert_eq!(scale_saturation(&pink, 2.2).get(0, 0), [200, 0, 0]);
    }

    #[test]
    fn rotation_shift_arithmetic() {
        let g = EffectGrid::default();
        assert_eq!(g.rotation_shift(512, 1).unwrap(), 14);
        assert_eq!(g.rotation_shift(512, 18).unwrap(), 256);
        let p = gradient(512, 4);
        let half = apply_rotation(&p, 18).unwrap();
        assert_eq!(apply_rotation(&half, 18).unwrap(), p);
    }

    #[test]
    fn recipe_variant_counts() {
        let g = EffectGrid::default();
        let counts: Vec<usize> = Recipe::ALL
            .iter()
            .map(|r| r.variants(&g, None).len() + 1)
            .collect();
        assert_eq!(counts, [6, 6, 7, 6, 6, 36]);
        assert_eq!(Recipe::Rotation.variants(&g, Some(30)).len(), 30);
        assert_eq!("brightdark".parse::<Recipe>().unwrap(), Recipe::BrightDark);
        assert!("gan".parse::<Recipe>().is_err());
    }

    #[test]
    fn derived_seeds_differ_by_id_and_level() {
        let a = derive_seed(1, "a", 1);
        assert_eq!(a, derive_seed(1, "a", 1));
        assert_ne!(a, derive_seed(1, "a", 2));
        assert_ne!(a, derive_seed(1, "b", 1));
        assert_ne!(a, derive_seed(2, "a", 1));
    }

    #[test]
    fn output_stem_rejects_escapes() {
        assert!(output_stem("../x.png").is_err());
        assert!(output_stem("/abs.png").is_err());
        assert_eq!(
            output_stem("room/img.PNG").unwrap(),
            PathBuf::from("room/img")
        );
    }

    proptest! {
        #[test]
        fn spotlight_mirrors_shadow(seed: u64, level in 1u32..=5, w in 1usize..70, h in 1usize..50, fill: u8) {
            let p = Panorama::from_fn(w, h, |x, y| [fill.wrapping_add(x as u8), fill.wrapping_mul(y as u8), fill]).unwrap();
            let inverted = p.map_pixels(|c| c.map(|v| 255 - v));
            let shadow = apply_shadow(&inverted, level, seed).unwrap().map_pixels(|c| c.map(|v| 255 - v));
            prop_assert_eq!(apply_spotlight(&p, level, seed).unwrap(), shadow);
        }

        #[test]
        fn effects_preserve_dims_and_are_deterministic(seed: u64, level in 1u32..=3) {
            let p = gradient(37, 11);
            for e in [Effect::Spotlight, Effect::Shadow, Effect::Brightness, Effect::Darkness,
                      Effect::Contrast, Effect::Saturation, Effect::Rotation] {
                let a = EffectGrid::default().apply(&p, e, level, seed).unwrap();
                prop_assert_eq!((a.width(), a.height()), (37, 11));
                prop_assert_eq!(&a, &EffectGrid::default().apply(&p, e, level, seed).unwrap());
            }
        }

        #[test]
        fn tone_maps_are_monotone_and_directional(v in 0usize..256, u in 0usize..256) {
            let g = EffectGrid::default();
            let (lo, hi) = (v.min(u), v.max(u));
            for c in g.contrast_factors {
                let lut = contrast_lut(c);
                prop_assert!(lut[lo] <= lut[hi]);
            }
            for gamma in g.brightness_gammas {
                let lut = gamma_lut(gamma);
                prop_assert!(lut[v] as usize >= v);
                prop_assert!(lut[lo] <= lut[hi]);
            }
            for gamma in g.darkness_gammas {
                let lut = gamma_lut(gamma);
                prop_assert!(lut[v] as usize <= v);
                prop_assert!(lut[lo] <= lut[hi]);
            }
        }
    }
}
