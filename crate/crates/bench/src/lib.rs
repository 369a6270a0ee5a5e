//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hloc_core::classifier::SoftmaxModel;
use hloc_core::dataset::Pose;
use hloc_core::descriptor::Descriptor;
use hloc_core::imaging::Panorama;
use hloc_core::localization::{MapEntry, VisualMap};

/// Images per room in the reference baseline set (556 in total).
pub const ROOM_SIZES: [usize; 9] = [44, 46, 31, 238, 46, 26, 57, 30, 38];

pub fn noise_panorama(width: usize, height: usize, seed: u64) -> Panorama {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Panorama::from_fn(width, height, |_, _| [rng.gen(), rng.gen(), rng.gen()]).expect("non-empty")
}

pub fn random_map(dim: usize, seed: u64) -> VisualMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (r, &n) in ROOM_SIZES.iter().enumerate() {
        for k in 0..n {
            entries.push(MapEntry {
                id: format!("room{r}/{k:04}"),
                room: format!("room{r}"),
                pose: Pose::new(k as f64 * 0.2, r as f64),
                values: (0..dim).map(|_| rng.gen()).collect(),
            });
        }
    }
    VisualMap::from_entries(dim, entries).expect("unique ids")
}

pub fn random_model(dim: usize, seed: u64) -> SoftmaxModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SoftmaxModel::init(
        (0..ROOM_SIZES.len()).map(|r| format!("room{r}")).collect(),
        dim,
        &mut rng,
    )
    .expect("valid shape")
}

pub fn random_queries(count: usize, dim: usize, seed: u64) -> Vec<Descriptor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| Descriptor::new(format!("q{i}"), (0..dim).map(|_| rng.gen()).collect()))
        .collect()
}
