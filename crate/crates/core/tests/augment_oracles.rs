use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hloc_core::augment::{
    apply_brightness, apply_darkness, apply_shadow, apply_spotlight, build_augmented_dataset,
    EffectGrid, Recipe,
};
use hloc_core::dataset::{Condition, ImageRecord, Manifest, Pose, SplitTag};
use hloc_core::imaging::Panorama;

fn noise(w: usize, h: usize, seed: u64) -> Panorama {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Panorama::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap()
}

/// Per-pixel scalar version of the spot effect, visiting every pixel.
fn spot_oracle(p: &Panorama, cx: usize, cy: usize, diameter: u32, delta: i32) -> Panorama {
    let (w, h) = (p.width() as f64, p.height());
    let r = f64::from(diameter) / 2.0;
    let mut out = p.clone();
    for y in 0..h {
        for x in 0..p.width() {
            let raw = (x as f64 - cx as f64).abs();
            let dx = raw.min(w - raw);
            let dy = y as f64 - cy as f64;
            let d = (dx * dx + dy * dy).sqrt();
            if d < r {
                let k = (f64::from(delta) * (1.0 - d / r)).round_ties_even() as i32;
                let px = p.get(x, y).map(|v| (i32::from(v) + k).clamp(0, 255) as u8);
                out.set(x, y, px);
            }
        }
    }
    out
}

#[test]
fn spots_match_scalar_oracle() {
    let grid = EffectGrid::default();
    let deltas = [160, 145, 130, 115, 100];
    for seed in 0..12u64 {
        let p = noise(96, 32, seed);
        let disk = grid.draw_disk(96, 32, seed);
        assert!((15..=40).contains(&disk.diameter));
        for level in 1..=5u32 {
            let delta = deltas[level as usize - 1];
            assert_eq!(
                apply_spotlight(&p, level, seed).unwrap(),
                spot_oracle(&p, disk.cx, disk.cy, disk.diameter, delta)
            );
            assert_eq!(
                apply_shadow(&p, level, seed).unwrap(),
                spot_oracle(&p, disk.cx, disk.cy, disk.diameter, -delta)
            );
        }
    }
}

#[test]
fn gamma_levels_match_formula() {
    let ramp = Panorama::from_fn(256, 1, |x, _| [x as u8; 3]).unwrap();
    for (level, g) in [(1, 0.8), (2, 0.6), (3, 0.4)] {
        let out = apply_brightness(&ramp, level).unwrap();
        for v in 0..256usize {
            let expected = (255.0 * (v as f64 / 255.0).powf(g)).round_ties_even() as u8;
            assert_eq!(out.get(v, 0)[0], expected);
            assert!(out.get(v, 0)[0] as usize >= v);
        }
    }
    for (level, g) in [(1, 1.25), (2, 1.67), (3, 2.5)] {
        let out = apply_darkness(&ramp, level).unwrap();
        for v in 0..256usize {
            let expected = (255.0 * (v as f64 / 255.0).powf(g)).round_ties_even() as u8;
            assert_eq!(out.get(v, 0)[0], expected);
            assert!(out.get(v, 0)[0] as usize <= v);
        }
    }
    assert!(apply_brightness(&ramp, 4).is_err());
    assert!(apply_darkness(&ramp, 0).is_err());
}

#[test]
fn augmented_sets_inherit_labels_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = Vec::new();
    for (i, room) in ["hall", "lab"].iter().enumerate() {
        let path = dir.path().join(format!("src/{room}.png"));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        noise(48, 12, i as u64).save_png(&path).unwrap();
        records.push(ImageRecord {
            id: format!("{room}/0"),
            path,
            room: room.to_string(),
            pose: Pose::new(i as f64, 2.0),
            condition: Condition::Night,
            timestamp: None,
        });
    }
    let m = Manifest::from_records(records, SplitTag::Baseline).unwrap();
    let grid = EffectGrid::default();
    let a = build_augmented_dataset(&m, Recipe::Spotlight, 9, &dir.path().join("a"), &grid, None)
        .unwrap();
    let b = build_augmented_dataset(&m, Recipe::Spotlight, 9, &dir.path().join("b"), &grid, None)
        .unwrap();
    let c = build_augmented_dataset(
        &m,
        Recipe::Spotlight,
        10,
        &dir.path().join("c"),
        &grid,
        None,
    )
    .unwrap();
    assert_eq!(a.len(), 12);
    assert_eq!(a.split_tag, SplitTag::Augmented);
    for r in a.records() {
        let src = m.get(r.id.split('#').next().unwrap()).unwrap();
        assert_eq!(
            (&r.room, r.pose, r.condition),
            (&src.room, src.pose, src.condition)
        );
    }
    let read = |m: &Manifest, i: usize| std::fs::read(&m.records()[i].path).unwrap();
    let mut any_differs = false;
    for i in 0..a.len() {
        assert_eq!(read(&a, i), read(&b, i));
        any_differs |= read(&a, i) != read(&c, i);
    }
    assert!(any_differs);
    let on_disk = Manifest::load(&dir.path().join("a/manifest.csv")).unwrap();
    assert_eq!(on_disk.len(), a.len());
}
