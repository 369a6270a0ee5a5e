//! Coarse-to-fine position retrieval.
//!
//! The coarse stage asks a [`RoomClassifier`] for the room; the fine stage
//! computes the Euclidean distance from the query descriptor to every map
//! entry of that room and returns the pose of the nearest one. The flat
//! [`localize_global`] mode skips the coarse stage and searches all rooms.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::SoftmaxModel;
use crate::dataset::{write_file, Manifest, Pose};
use crate::descriptor::{Descriptor, DescriptorSet};
use crate::error::{Error, Result};

/// The coarse stage: which room was this descriptor captured in?
pub trait RoomClassifier {
    fn classify(&self, query: &Descriptor) -> Result<String>;
}

impl RoomClassifier for SoftmaxModel {
    fn classify(&self, query: &Descriptor) -> Result<String> {
        Ok(self.predict_room(&query.values)?.0.to_owned())
    }
}

/// Answers with the query's true room, looked up by id. Isolates the fine
/// stage from classifier mistakes.
#[derive(Clone, Debug, Default)]
pub struct OracleClassifier {
    rooms: HashMap<String, String>,
}

impl OracleClassifier {
    pub fn new(rooms: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            rooms: rooms.into_iter().collect(),
        }
    }

    pub fn from_manifest(m: &Manifest) -> Self {
        Self::new(m.records().iter().map(|r| (r.id.clone(), r.room.clone())))
    }
}

impl RoomClassifier for OracleClassifier {
    fn classify(&self, query: &Descriptor) -> Result<String> {
        self.rooms
            .get(&query.source_id)
            .cloned()
            .ok_or_else(|| Error::Alignment(query.source_id.clone()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Hierarchical,
    Global,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hierarchical => "hierarchical",
            Mode::Global => "global",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hierarchical" => Ok(Mode::Hierarchical),
            "global" => Ok(Mode::Global),
            other => Err(Error::arg(format!("unknown localization mode {other:?}"))),
        }
    }
}

/// One room's slice of the visual map, entries sorted by id.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomMap {
    pub room: String,
    pub ids: Vec<String>,
    pub poses: Vec<Pose>,
    /// `ids.len() × dim`, row-major.
    values: Vec<f32>,
}

impl RoomMap {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn descriptor(&self, j: usize, dim: usize) -> &[f32] {
        &self.values[j * dim..(j + 1) * dim]
    }
}

/// Stored `(descriptor, pose)` pairs partitioned by room.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualMap {
    dim: usize,
    rooms: Vec<RoomMap>,
}

/// One map entry for [`VisualMap::from_entries`].
#[derive(Clone, Debug, PartialEq)]
pub struct MapEntry {
    pub id: String,
    pub room: String,
    pub pose: Pose,
    pub values: Vec<f32>,
}

impl VisualMap {
    /// Rooms come out sorted by name and entries sorted by id, so results do
    /// not depend on input order. Rooms without entries are left out.
    pub fn from_entries(dim: usize, mut entries: Vec<MapEntry>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid(
                "map descriptor dimension must be positive".into(),
            ));
        }
        entries.sort_by(|a, b| (&a.room, &a.id).cmp(&(&b.room, &b.id)));
        let mut rooms: Vec<RoomMap> = Vec::new();
        for e in entries {
            if e.values.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: e.values.len(),
                });
            }
            if rooms.last().map_or(true, |r| r.room != e.room) {
                rooms.push(RoomMap {
                    room: e.room.clone(),
                    ids: Vec::new(),
                    poses: Vec::new(),
                    values: Vec::new(),
                });
            }
            let room = rooms.last_mut().unwrap();
            if room.ids.last() == Some(&e.id) {
                return Err(Error::Invalid(format!("duplicate map entry {:?}", e.id)));
            }
            room.ids.push(e.id);
            room.poses.push(e.pose);
            room.values.extend_from_slice(&e.values);
        }
        Ok(Self { dim, rooms })
    }

    /// Joins descriptors with the manifest that carries their rooms and poses.
    pub fn build(descriptors: &DescriptorSet, manifest: &Manifest) -> Result<Self> {
        let aligned = descriptors.align(manifest)?;
        let entries = manifest
            .records()
            .iter()
            .zip(aligned.rows())
            .map(|(r, d)| MapEntry {
                id: r.id.clone(),
                room: r.room.clone(),
                pose: r.pose,
                values: d.values.clone(),
            })
            .collect();
        Self::from_entries(descriptors.dim(), entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rooms(&self) -> &[RoomMap] {
        &self.rooms
    }

    pub fn room(&self, name: &str) -> Option<&RoomMap> {
        self.rooms.iter().find(|r| r.room == name)
    }

    pub fn len(&self) -> usize {
        self.rooms.iter().map(RoomMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rooms.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationResult {
    pub query_id: String,
    pub mode: Mode,
    pub predicted_room: String,
    /// Distance to every candidate entry, in map order. In hierarchical mode
    /// these are the predicted room's entries; in global mode all entries.
    pub distances: Vec<f64>,
    /// Index of the nearest candidate within `distances`.
    pub k: usize,
    pub match_id: String,
    pub estimate: Pose,
    pub distance: f64,
    pub elapsed_ms: f64,
}

#[inline]
fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Euclidean distance with f64 accumulation.
pub fn euclidean(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(squared_distance(a, b).sqrt())
}

/// First index of the minimum.
fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

fn room_distances(room: &RoomMap, dim: usize, query: &[f32]) -> Vec<f64> {
    (0..room.len())
        .map(|j| squared_distance(query, room.descriptor(j, dim)).sqrt())
        .collect()
}

fn check_query(map: &VisualMap, query: &Descriptor) -> Result<()> {
    if query.dim() != map.dim {
        return Err(Error::DimensionMismatch {
            expected: map.dim,
            actual: query.dim(),
        });
    }
    Ok(())
}

/// Room prediction, then nearest neighbour among that room's entries.
pub fn localize_hierarchical<C: RoomClassifier + ?Sized>(
    classifier: &C,
    map: &VisualMap,
    query: &Descriptor,
) -> Result<LocalizationResult> {
    let start = Instant::now();
    check_query(map, query)?;
    let predicted = classifier.classify(query)?;
    let room = map
        .room(&predicted)
        .ok_or_else(|| Error::UnknownRoom(predicted.clone()))?;
    let distances = room_distances(room, map.dim, &query.values);
    let k = argmin(&distances);
    Ok(LocalizationResult {
        query_id: query.source_id.clone(),
        mode: Mode::Hierarchical,
        match_id: room.ids[k].clone(),
        estimate: room.poses[k],
        distance: distances[k],
        predicted_room: predicted,
        distances,
        k,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Nearest neighbour over every entry of every room.
pub fn localize_global(map: &VisualMap, query: &Descriptor) -> Result<LocalizationResult> {
    let start = Instant::now();
    if map.is_empty() {
        return Err(Error::Invalid("visual map is empty".into()));
    }
    check_query(map, query)?;
    let mut distances = Vec::with_capacity(map.len());
    for room in &map.rooms {
        distances.extend(room_distances(room, map.dim, &query.values));
    }
    let k = argmin(&distances);
    let mut offset = k;
    let room = map
        .rooms
        .iter()
        .find(|r| {
            if offset < r.len() {
                true
            } else {
                offset -= r.len();
                false
            }
        })
        .expect("k indexes a map entry");
    Ok(LocalizationResult {
        query_id: query.source_id.clone(),
        mode: Mode::Global,
        predicted_room: room.room.clone(),
        match_id: room.ids[offset].clone(),
        estimate: room.poses[offset],
        distance: distances[k],
        distances,
        k,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn localize<C: RoomClassifier + ?Sized>(
    classifier: &C,
    map: &VisualMap,
    query: &Descriptor,
    mode: Mode,
) -> Result<LocalizationResult> {
    match mode {
        Mode::Hierarchical => localize_hierarchical(classifier, map, query),
        Mode::Global => localize_global(map, query),
    }
}

/// Localizes every query in parallel. Output order follows query order and a
/// failing query yields an error entry without stopping the others.
pub fn batch_localize<C: RoomClassifier + Sync + ?Sized>(
    classifier: &C,
    map: &VisualMap,
    queries: &[Descriptor],
    mode: Mode,
) -> Vec<Result<LocalizationResult>> {
    queries
        .par_iter()
        .map(|q| localize(classifier, map, q, mode))
        .collect()
}

/// One line of a results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub query_id: String,
    pub mode: Mode,
    pub pred_room: String,
    pub true_room: String,
    pub match_id: String,
    pub x_est: f64,
    pub y_est: f64,
    pub x_true: f64,
    pub y_true: f64,
    pub distance: f64,
    pub elapsed_ms: f64,
}

impl ResultRow {
    /// Pairs a result with the query's ground truth from `truth`.
    pub fn new(result: &LocalizationResult, truth: &Manifest) -> Result<Self> {
        let rec = truth
            .get(&result.query_id)
            .ok_or_else(|| Error::Alignment(result.query_id.clone()))?;
        Ok(Self {
            query_id: result.query_id.clone(),
            mode: result.mode,
            pred_room: result.predicted_room.clone(),
            true_room: rec.room.clone(),
            match_id: result.match_id.clone(),
            x_est: result.estimate.x,
            y_est: result.estimate.y,
            x_true: rec.pose.x,
            y_true: rec.pose.y,
            distance: result.distance,
            elapsed_ms: result.elapsed_ms,
        })
    }
}

pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Csv {
        path: "<results>".into(),
        message: e.to_string(),
    };
    if rows.is_empty() {
        w.write_record([
            "query_id",
            "mode",
            "pred_room",
            "true_room",
            "match_id",
            "x_est",
            "y_est",
            "x_true",
            "y_true",
            "distance",
            "elapsed_ms",
        ])
        .map_err(err)?;
    }
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<results>", e))
}

pub fn save_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_results(rows, &mut buf)?;
    write_file(path, &buf)
}

pub fn read_results<R: Read>(input: R, origin: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Csv {
                path: origin.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_results(std::io::BufReader::new(f), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, room: &str, x: f64, values: Vec<f32>) -> MapEntry {
        MapEntry {
            id: id.into(),
            room: room.into(),
            pose: Pose::new(x, 0.0),
            values,
        }
    }

    struct Always(&'static str);

    impl RoomClassifier for Always {
        fn classify(&self, _: &Descriptor) -> Result<String> {
            Ok(self.0.to_owned())
        }
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(&[0.0, 0.0, 0.0], &[0.0, 3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean(&[1.5, 2.0], &[1.5, 2.0]).unwrap(), 0.0);
        assert!(euclidean(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn exact_match_returns_its_pose() {
        let map = VisualMap::from_entries(
            2,
            vec![
                entry("a1", "a", 1.0, vec![0.0, 1.0]),
                entry("a2", "a", 2.0, vec![5.0, 5.0]),
            ],
        )
        .unwrap();
        let r = localize_hierarchical(&Always("a"), &map, &Descriptor::new("q", vec![5.0, 5.0]))
            .unwrap();
        assert_eq!(
            (r.match_id.as_str(), r.distance, r.estimate.x),
            ("a2", 0.0, 2.0)
        );
        assert_eq!(r.k, 1);
        assert_eq!(r.distances.len(), 2);
    }

    #[test]
    fn hierarchy_diverges_from_flat_search() {
        // Query belongs to room "a" but sits closest to an entry of room "b".
        let map = VisualMap::from_entries(
            1,
            vec![
                entry("a1", "a", 0.0, vec![0.0]),
                entry("a2", "a", 1.0, vec![4.0]),
                entry("b1", "b", 10.0, vec![6.0]),
                entry("b2", "b", 11.0, vec![20.0]),
            ],
        )
        .unwrap();
        let q = Descriptor::new("q", vec![5.8]);
        let h = localize_hierarchical(&Always("a"), &map, &q).unwrap();
        let g = localize_global(&map, &q).unwrap();
        assert_eq!(h.match_id, "a2");
        assert_eq!(g.match_id, "b1");
        assert_eq!(g.predicted_room, "b");
        assert!(g.distance <= h.distance);
    }

    #[test]
    fn ties_go_to_lowest_index_and_ids_are_sorted() {
        let map = VisualMap::from_entries(
            1,
            vec![
                entry("z", "a", 3.0, vec![1.0]),
                entry("m", "a", 2.0, vec![1.0]),
                entry("b", "a", 1.0, vec![1.0]),
            ],
        )
        .unwrap();
        let r =
            localize_hierarchical(&Always("a"), &map, &Descriptor::new("q", vec![1.0])).unwrap();
        assert_eq!((r.k, r.match_id.as_str()), (0, "b"));
    }

    #[test]
    fn unknown_room_and_empty_map_error() {
        let map = VisualMap::from_entries(1, vec![entry("a1", "a", 0.0, vec![0.0])]).unwrap();
        let q = Descriptor::new("q", vec![0.0]);
        assert!(matches!(
            localize_hierarchical(&Always("zz"), &map, &q),
            Err(Error::UnknownRoom(_))
        ));
        let empty = VisualMap::from_entries(1, vec![]).unwrap();
        assert!(localize_global(&empty, &q).is_err());
        assert!(localize_global(&map, &Descriptor::new("q", vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn single_room_map_modes_agree() {
        let map = VisualMap::from_entries(
            2,
            (0..10)
                .map(|i| {
                    entry(
                        &format!("e{i}"),
                        "a",
                        i as f64,
                        vec![i as f32, (i * i) as f32],
                    )
                })
                .collect(),
        )
        .unwrap();
        let q = Descriptor::new("q", vec![4.2, 17.0]);
        let h = localize_hierarchical(&Always("a"), &map, &q).unwrap();
        let g = localize_global(&map, &q).unwrap();
        assert_eq!((h.match_id, h.distance), (g.match_id, g.distance));
    }

    #[test]
    fn batch_keeps_order_and_reports_errors_inline() {
        let map = VisualMap::from_entries(
            1,
            vec![
                entry("a1", "a", 0.0, vec![0.0]),
                entry("a2", "a", 1.0, vec![1.0]),
            ],
        )
        .unwrap();
        assert!(batch_localize(&Always("a"), &map, &[], Mode::Hierarchical).is_empty());
        let qs = vec![
            Descriptor::new("q0", vec![0.9]),
            Descriptor::new("bad", vec![0.9, 1.0]),
            Descriptor::new("q0", vec![0.9]),
        ];
        let out = batch_localize(&Always("a"), &map, &qs, Mode::Hierarchical);
        assert_eq!(out.len(), 3);
        assert!(out[1].is_err());
        let (a, c) = (out[0].as_ref().unwrap(), out[2].as_ref().unwrap());
        assert_eq!((&a.match_id, a.distance), (&c.match_id, c.distance));
        assert!(a.elapsed_ms > 0.0);
    }

    #[test]
    fn results_csv_round_trip() {
        let rows = vec![ResultRow {
            query_id: "KT-A/0001.png".into(),
            mode: Mode::Global,
            pred_room: "KT-A".into(),
            true_room: "CR-A".into(),
            match_id: "KT-A/0002.png".into(),
            x_est: 1.25,
            y_est: -0.5,
            x_true: 1.0,
            y_true: 0.1,
            distance: 0.75,
            elapsed_ms: 0.012,
        }];
        let mut buf = Vec::new();
        write_results(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "query_id,mode,pred_room,true_room,match_id,x_est,y_est,x_true,y_true,distance,elapsed_ms\n"
        ));
        assert_eq!(read_results(&buf[..], Path::new("r.csv")).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn euclidean_is_symmetric(a in prop::collection::vec(-1e3f32..1e3, 6), b in prop::collection::vec(-1e3f32..1e3, 6)) {
            prop_assert_eq!(euclidean(&a, &b).unwrap(), euclidean(&b, &a).unwrap());
        }

        #[test]
        fn global_never_worse_than_hierarchical(
            pts in prop::collection::vec((0usize..3, -10f32..10.0, -10f32..10.0), 3..30),
            q in (-10f32..10.0, -10f32..10.0),
            room in 0usize..3,
        ) {
            let mut entries: Vec<MapEntry> = pts.iter().enumerate()
                .map(|(i, &(r, x, y))| entry(&format!("e{i:02}"), ["a", "b", "c"][r], i as f64, vec![x, y]))
                .collect();
            entries.push(entry("anchor", ["a", "b", "c"][room], 0.0, vec![0.0, 0.0]));
            let map = VisualMap::from_entries(2, entries).unwrap();
            let qd = Descriptor::new("q", vec![q.0, q.1]);
            let h = localize_hierarchical(&Always(["a", "b", "c"][room]), &map, &qd).unwrap();
            let g = localize_global(&map, &qd).unwrap();
            prop_assert!(g.distance <= h.distance);
        }
    }
}
