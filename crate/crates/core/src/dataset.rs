//! Pose-labelled image manifests.
//!
//! On disk a corpus is laid out one directory per room, each with a pose
//! sidecar `poses.csv` (`filename,x,y[,timestamp]`). [`ingest`] turns such a
//! tree into a [`Manifest`]; [`downsample_by_distance`] and
//! [`interleave_validation`] carve training and validation sets out of a
//! trajectory.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 6] = ["id", "path", "room", "x", "y", "condition"];
pub const POSE_SIDECAR: &str = "poses.csv";

/// Slack for floating-point pose arithmetic in the spacing test, in meters.
const SPACING_EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Cloudy,
    Night,
    Sunny,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Cloudy, Condition::Night, Condition::Sunny];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Cloudy => "cloudy",
            Condition::Night => "night",
            Condition::Sunny => "sunny",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cloudy" => Ok(Condition::Cloudy),
            "night" => Ok(Condition::Night),
            "sunny" => Ok(Condition::Sunny),
            other => Err(Error::arg(format!("unknown lighting condition {other:?}"))),
        }
    }
}

/// Planar capture position in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub room: String,
    pub pose: Pose,
    pub condition: Condition,
    /// Capture time in seconds, when the layout provides one. Not persisted in
    /// manifest files; trajectory order there is file order.
    pub timestamp: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    Baseline,
    Validation,
    Test,
    Augmented,
}

/// An ordered room list (room index = class index) plus the records.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    rooms: Vec<String>,
    records: Vec<ImageRecord>,
    pub split_tag: SplitTag,
}

impl Manifest {
    pub fn new(rooms: Vec<String>, records: Vec<ImageRecord>, split_tag: SplitTag) -> Result<Self> {
        if rooms.is_empty() {
            return Err(Error::Invalid("manifest needs at least one room".into()));
        }
        let mut seen = HashSet::with_capacity(rooms.len());
        for r in &rooms {
            if !seen.insert(r.as_str()) {
                return Err(Error::Invalid(format!("duplicate room {r:?}")));
            }
        }
        let mut ids = HashSet::with_capacity(records.len());
        for rec in &records {
            if !seen.contains(rec.room.as_str()) {
                return Err(Error::UnknownRoom(rec.room.clone()));
            }
            if !ids.insert(rec.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate record id {:?}", rec.id)));
            }
            if !rec.pose.is_finite() {
                return Err(Error::Invalid(format!("non-finite pose for {:?}", rec.id)));
            }
        }
        Ok(Self {
            rooms,
            records,
            split_tag,
        })
    }

    /// Room list = distinct record rooms, sorted.
    pub fn from_records(records: Vec<ImageRecord>, split_tag: SplitTag) -> Result<Self> {
        let rooms: BTreeSet<&str> = records.iter().map(|r| r.room.as_str()).collect();
        let rooms = rooms.into_iter().map(str::to_owned).collect();
        Self::new(rooms, records, split_tag)
    }

    pub fn rooms(&self) -> &[String] {
        &self.rooms
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn room_index(&self, room: &str) -> Option<usize> {
        self.rooms.iter().position(|r| r == room)
    }

    /// Class index of every record, in record order.
    pub fn labels(&self) -> Vec<usize> {
        let index: HashMap<&str, usize> = self
            .rooms
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        self.records
            .iter()
            .map(|r| index[r.room.as_str()])
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Same rooms, different records.
    pub fn with_records(&self, records: Vec<ImageRecord>, split_tag: SplitTag) -> Result<Self> {
        Self::new(self.rooms.clone(), records, split_tag)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Csv {
            path: PathBuf::from("<manifest>"),
            message: e.to_string(),
        };
        w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        for r in &self.records {
            let path = r
                .path
                .to_str()
                .ok_or_else(|| Error::Invalid(format!("path of {:?} is not valid UTF-8", r.id)))?;
            w.write_record([
                r.id.as_str(),
                path,
                r.room.as_str(),
                &format_meters(r.pose.x),
                &format_meters(r.pose.y),
                r.condition.as_str(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<manifest>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        write_file(path, &buf)
    }

    /// Reads a manifest CSV. The room list is the sorted set of rooms present.
    pub fn read_csv<R: Read>(input: R, origin: &Path, split_tag: SplitTag) -> Result<Self> {
        let csv_err = |message: String| Error::Csv {
            path: origin.to_path_buf(),
            message,
        };
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(|e| csv_err(e.to_string()))?;
        if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
            return Err(csv_err(format!(
                "expected header {}, found {}",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| csv_err(e.to_string()))?;
            let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
            let coord = |i: usize| {
                field(i).parse::<f64>().map_err(|_| {
                    csv_err(format!("row {}: bad coordinate {:?}", line + 2, field(i)))
                })
            };
            records.push(ImageRecord {
                id: field(0).to_owned(),
                path: PathBuf::from(field(1)),
                room: field(2).to_owned(),
                pose: Pose::new(coord(3)?, coord(4)?),
                condition: field(5).parse()?,
                timestamp: None,
            });
        }
        if records.is_empty() {
            return Err(Error::NoRecords);
        }
        Self::from_records(records, split_tag)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), path, SplitTag::Baseline)
    }
}

/// Shortest decimal that round-trips the f64 exactly.
fn format_meters(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Where the lighting condition of each image comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionSource {
    /// Every image shares one condition; `root/<room>/…`.
    Fixed(Condition),
    /// `root/<condition>/<room>/…`.
    Subdirectories,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub conditions: ConditionSource,
    pub pose_file: String,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            conditions: ConditionSource::Fixed(Condition::Cloudy),
            pose_file: POSE_SIDECAR.to_owned(),
        }
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.push((name.to_owned(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

struct PoseEntry {
    pose: Pose,
    timestamp: Option<f64>,
}

fn read_pose_sidecar(path: &Path) -> Result<HashMap<String, PoseEntry>> {
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_owned())
        .collect();
    if header.len() < 3 || header[..3] != ["filename", "x", "y"] {
        return Err(csv_err(format!(
            "expected header filename,x,y[,timestamp], found {}",
            header.join(",")
        )));
    }
    let ts_col = header.iter().position(|h| h == "timestamp");
    let mut poses = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            let s = row.get(i).map(str::trim).unwrap_or("");
            s.parse::<f64>()
                .map_err(|_| csv_err(format!("bad number {s:?} for {:?}", row.get(0))))
        };
        let pose = Pose::new(num(1)?, num(2)?);
        if !pose.is_finite() {
            return Err(csv_err(format!("non-finite pose for {:?}", row.get(0))));
        }
        let timestamp = ts_col.map(num).transpose()?;
        poses.insert(
            row.get(0).unwrap_or("").trim().to_owned(),
            PoseEntry { pose, timestamp },
        );
    }
    Ok(poses)
}

fn ingest_room(
    room: &str,
    dir: &Path,
    condition: Condition,
    id_prefix: &str,
    layout: &Layout,
) -> Result<Vec<ImageRecord>> {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                files.push((name.to_owned(), path));
            }
        }
    }
    if files.is_empty() {
        return Ok(Vec::new());
    }
    files.sort();

    let sidecar = dir.join(&layout.pose_file);
    let poses = if sidecar.exists() {
        read_pose_sidecar(&sidecar)?
    } else {
        HashMap::new()
    };

    let mut records = Vec::with_capacity(files.len());
    for (name, path) in files {
        let entry = poses
            .get(&name)
            .ok_or_else(|| Error::MissingPose(path.clone()))?;
        records.push(ImageRecord {
            id: format!("{id_prefix}{room}/{name}"),
            path,
            room: room.to_owned(),
            pose: entry.pose,
            condition,
            timestamp: entry.timestamp,
        });
    }
    if records.iter().all(|r| r.timestamp.is_some()) {
        // Stable: equal timestamps keep filename order.
        records.sort_by(|a, b| a.timestamp.unwrap().total_cmp(&b.timestamp.unwrap()));
    }
    Ok(records)
}

/// Scans a corpus directory into a manifest.
///
/// Records are grouped by condition (when the layout has condition
/// directories), then by room in sorted order; within a room they follow
/// trajectory order (timestamp when every image has one, filename otherwise).
/// Every image header is read to reject unreadable files up front.
pub fn ingest(root: &Path, layout: &Layout) -> Result<Manifest> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "corpus root is not a directory",
            ),
        ));
    }

    let mut groups: Vec<(String, PathBuf, Condition, String)> = Vec::new();
    match layout.conditions {
        ConditionSource::Fixed(c) => {
            for (room, dir) in sorted_subdirs(root)? {
                groups.push((room, dir, c, String::new()));
            }
        }
        ConditionSource::Subdirectories => {
            for (cond_name, cond_dir) in sorted_subdirs(root)? {
                let c: Condition = cond_name.parse()?;
                for (room, dir) in sorted_subdirs(&cond_dir)? {
                    groups.push((room, dir, c, format!("{cond_name}/")));
                }
            }
        }
    }

    let mut records = Vec::new();
    for (room, dir, condition, prefix) in &groups {
        records.extend(ingest_room(room, dir, *condition, prefix, layout)?);
    }
    if records.is_empty() {
        return Err(Error::NoRecords);
    }

    records
        .par_iter()
        .map(|r| {
            image::image_dimensions(&r.path)
                .map(|_| ())
                .map_err(|source| Error::Image {
                    path: r.path.clone(),
                    source,
                })
        })
        .collect::<Result<Vec<()>>>()?;

    Manifest::from_records(records, SplitTag::Baseline)
}

fn check_spacing(spacing: f64) -> Result<()> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::arg(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    Ok(())
}

/// Indices of the records a greedy keep-first pass retains, per room.
fn greedy_keep(m: &Manifest, spacing: f64) -> Vec<usize> {
    let mut last: HashMap<&str, Pose> = HashMap::new();
    let mut kept = Vec::new();
    for (i, r) in m.records.iter().enumerate() {
        let keep = match last.get(r.room.as_str()) {
            None => true,
            Some(prev) => prev.distance(&r.pose) >= spacing - SPACING_EPSILON,
        };
        if keep {
            last.insert(r.room.as_str(), r.pose);
            kept.push(i);
        }
    }
    kept
}

/// Greedy spatial thinning along each room's trajectory: keep the first
/// record, then every record at least `spacing` meters from the last one kept.
pub fn downsample_by_distance(m: &Manifest, spacing: f64) -> Result<Manifest> {
    check_spacing(spacing)?;
    let records = greedy_keep(m, spacing)
        .into_iter()
        .map(|i| m.records[i].clone())
        .collect();
    m.with_records(records, m.split_tag)
}

/// Thins each room at `spacing / 2` and deals the kept records alternately:
/// even positions (0, 2, …) to validation, odd positions to training. Both
/// halves then sit roughly `spacing` apart, interleaved along the trajectory.
pub fn interleave_validation(m: &Manifest, spacing: f64) -> Result<(Manifest, Manifest)> {
    check_spacing(spacing)?;
    let mut position: HashMap<&str, usize> = HashMap::new();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for i in greedy_keep(m, spacing / 2.0) {
        let r = &m.records[i];
        let k = position.entry(r.room.as_str()).or_insert(0);
        if *k % 2 == 1 {
            train.push(r.clone());
        } else {
            val.push(r.clone());
        }
        *k += 1;
    }
    Ok((
        m.with_records(train, SplitTag::Baseline)?,
        m.with_records(val, SplitTag::Validation)?,
    ))
}

/// Record count per room; rooms without records map to zero.
pub fn room_histogram(m: &Manifest) -> BTreeMap<String, usize> {
    let mut hist: BTreeMap<String, usize> = m.rooms.iter().map(|r| (r.clone(), 0)).collect();
    for r in &m.records {
        *hist.entry(r.room.clone()).or_insert(0) += 1;
    }
    hist
}
