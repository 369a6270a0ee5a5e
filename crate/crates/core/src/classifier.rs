//! Room-retrieval head: an R-way linear softmax classifier over descriptors,
//! trained with cross-entropy and minibatch SGD with momentum.
//!
//! The trainer evaluates validation accuracy after every epoch and returns the
//! best checkpoint (earliest epoch on ties).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::write_file;
use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"HLCM";
pub const MODEL_VERSION: u32 = 1;

/// Natural-log floor used by the loss so a zero probability stays finite.
pub const LOG_FLOOR: f64 = -27.631_021_115_928_547; // ln(1e-12)

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 30,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// `R × m` weights (row per room) and an `R` bias.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxModel {
    rooms: Vec<String>,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl SoftmaxModel {
    pub fn new(rooms: Vec<String>, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let r = rooms.len();
        if r == 0 || dim == 0 {
            return Err(Error::Invalid(
                "model needs at least one room and a positive dimension".into(),
            ));
        }
        if weights.len() != r * dim {
            return Err(Error::DimensionMismatch {
                expected: r * dim,
                actual: weights.len(),
            });
        }
        if bias.len() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                actual: bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("model parameters must be finite".into()));
        }
        Ok(Self {
            rooms,
            dim,
            weights,
            bias,
        })
    }

    pub fn zeros(rooms: Vec<String>, dim: usize) -> Result<Self> {
        let r = rooms.len();
        Self::new(rooms, dim, vec![0.0; r * dim], vec![0.0; r])
    }

    /// Weights uniform in `±sqrt(6 / (m + R))`, zero bias.
    pub fn init(rooms: Vec<String>, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let r = rooms.len();
        let limit = (6.0 / (dim + r) as f64).sqrt();
        let weights = (0..r * dim)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Self::new(rooms, dim, weights, vec![0.0; r])
    }

    pub fn rooms(&self) -> &[String] {
        &self.rooms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn check_dim(&self, d: &[f32]) -> Result<()> {
        if d.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: d.len(),
            });
        }
        Ok(())
    }

    /// `z = W·d + b`.
    pub fn logits(&self, d: &[f32]) -> Result<Vec<f64>> {
        self.check_dim(d)?;
        Ok(logits(&self.weights, &self.bias, d))
    }

    pub fn forward(&self, d: &[f32]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(d)?))
    }

    /// Most probable class index and the distribution; ties go to the lowest index.
    pub fn predict(&self, d: &[f32]) -> Result<(usize, Vec<f64>)> {
        let probs = self.forward(d)?;
        Ok((argmax(&probs), probs))
    }

    pub fn predict_room(&self, d: &[f32]) -> Result<(&str, Vec<f64>)> {
        let (k, probs) = self.predict(d)?;
        Ok((self.rooms[k].as_str(), probs))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        for w in [MODEL_VERSION, self.rooms.len() as u32, self.dim as u32] {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        for room in &self.rooms {
            buf.extend_from_slice(&(room.len() as u32).to_le_bytes());
            buf.extend_from_slice(room.as_bytes());
        }
        for v in self.weights.iter().chain(&self.bias) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut cur = Cursor {
            bytes,
            pos: 0,
            origin,
        };
        if cur.take(4)? != MODEL_MAGIC {
            return Err(Error::format(origin, "bad magic, expected \"HLCM\""));
        }
        let version = cur.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported version {version}"),
            ));
        }
        let r = cur.u32()? as usize;
        let m = cur.u32()? as usize;
        let mut rooms = Vec::with_capacity(r.min(1024));
        for _ in 0..r {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::format(origin, "room name is not UTF-8"))?;
            rooms.push(name.to_owned());
        }
        let mut floats = |n: usize| -> Result<Vec<f64>> {
            let raw = cur.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::format(origin, "size overflow"))?,
            )?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect())
        };
        let weights = floats(r * m)?;
        let bias = floats(r)?;
        if cur.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after parameters"));
        }
        Self::new(rooms, m, weights, bias)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.origin, "truncated model file")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn logits(weights: &[f64], bias: &[f64], d: &[f32]) -> Vec<f64> {
    let m = d.len();
    bias.iter()
        .enumerate()
        .map(|(j, b)| {
            let row = &weights[j * m..(j + 1) * m];
            b + row.iter().zip(d).map(|(w, &x)| w * x as f64).sum::<f64>()
        })
        .collect()
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(z: &[f64], k: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z[k] - lse
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean negative log-likelihood of the true classes, `log` floored at
/// `ln 1e-12`. Labels are class indices (the position of the one-hot 1).
pub fn cross_entropy(batch_probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if batch_probs.len() != labels.len() || batch_probs.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: batch_probs.len(),
            actual: labels.len(),
        });
    }
    let mut total = 0.0;
    for (probs, &y) in batch_probs.iter().zip(labels) {
        let p = *probs.get(y).ok_or_else(|| Error::DimensionMismatch {
            expected: probs.len(),
            actual: y + 1,
        })?;
        total -= p.ln().max(LOG_FLOOR);
    }
    Ok(total / labels.len() as f64)
}

/// Loss and its gradient with respect to weights and bias, averaged over the
/// batch. The gradient of softmax-then-cross-entropy w.r.t. the logits is
/// `p − onehot(y)`.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: &[f64],
    rows: &[&[f32]],
    labels: &[usize],
) -> (f64, Vec<f64>, Vec<f64>) {
    let r = bias.len();
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = vec![0.0; r];
    let mut loss = 0.0;
    let scale = 1.0 / rows.len() as f64;
    for (x, &y) in rows.iter().zip(labels) {
        let m = x.len();
        let z = logits(weights, bias, x);
        loss -= log_softmax_at(&z, y).max(LOG_FLOOR);
        let p = softmax(&z);
        for j in 0..r {
            let dz = (p[j] - if j == y { 1.0 } else { 0.0 }) * scale;
            grad_b[j] += dz;
            for (g, &xi) in grad_w[j * m..(j + 1) * m].iter_mut().zip(x.iter()) {
                *g += dz * xi as f64;
            }
        }
    }
    (loss * scale, grad_w, grad_b)
}

/// A descriptor set with one class index per row.
#[derive(Clone, Copy, Debug)]
pub struct Labeled<'a> {
    pub features: &'a DescriptorSet,
    pub labels: &'a [usize],
}

impl<'a> Labeled<'a> {
    pub fn new(features: &'a DescriptorSet, labels: &'a [usize]) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                actual: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    fn rows(&self) -> Vec<&'a [f32]> {
        self.features
            .rows()
            .iter()
            .map(|d| d.values.as_slice())
            .collect()
    }
}

/// Percentage of rows whose prediction matches the label.
pub fn accuracy(model: &SoftmaxModel, data: &Labeled<'_>) -> Result<f64> {
    if data.labels.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut correct = 0usize;
    for (d, &y) in data.features.rows().iter().zip(data.labels) {
        if model.predict(&d.values)?.0 == y {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / data.labels.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SoftmaxModel,
    /// 1-based epoch of the returned checkpoint.
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Minibatch SGD with momentum (`v ← μv − η∇L`, `θ ← θ + v`) over seeded
/// per-epoch shuffles, keeping the checkpoint with the best validation
/// accuracy. Deterministic for a given seed.
pub fn train(
    rooms: &[String],
    train_set: &Labeled<'_>,
    val_set: &Labeled<'_>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let r = rooms.len();
    if r < 2 {
        return Err(Error::Invalid("training needs at least two rooms".into()));
    }
    if train_set.labels.is_empty() || val_set.labels.is_empty() {
        return Err(Error::NoRecords);
    }
    let dim = train_set.features.dim();
    if val_set.features.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: val_set.features.dim(),
        });
    }
    let mut per_class = vec![0usize; r];
    for &y in train_set.labels.iter().chain(val_set.labels) {
        if y >= r {
            return Err(Error::Invalid(format!(
                "label {y} out of range for {r} rooms"
            )));
        }
    }
    for &y in train_set.labels {
        per_class[y] += 1;
    }
    if let Some(empty) = per_class.iter().position(|&c| c == 0) {
        return Err(Error::Invalid(format!(
            "room {:?} has no training samples",
            rooms[empty]
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SoftmaxModel::init(rooms.to_vec(), dim, &mut rng)?;
    let mut vel_w = vec![0.0; model.weights.len()];
    let mut vel_b = vec![0.0; r];

    let rows = train_set.rows();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_rows = Vec::with_capacity(cfg.batch_size);
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batch_rows.clear();
            batch_labels.clear();
            for &i in chunk {
                batch_rows.push(rows[i]);
                batch_labels.push(train_set.labels[i]);
            }
            let (loss, gw, gb) =
                loss_and_gradient(&model.weights, &model.bias, &batch_rows, &batch_labels);
            if !loss.is_finite() {
                return Err(Error::Invalid(format!(
                    "training loss diverged in epoch {epoch}"
                )));
            }
            for ((w, v), g) in model.weights.iter_mut().zip(&mut vel_w).zip(&gw) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *w += *v;
            }
            for ((b, v), g) in model.bias.iter_mut().zip(&mut vel_b).zip(&gb) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *b += *v;
            }
            loss_sum += loss;
            batches += 1;
        }
        let val_accuracy = accuracy(&model, val_set)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_accuracy,
        });
        if val_accuracy > best.2 {
            best = (model.clone(), epoch, val_accuracy);
        }
    }

    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{Descriptor, Method};

    /// Standard normal via Box–Muller.
    fn normal(rng: &mut impl Rng) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn rooms(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("room{i}")).collect()
    }

    #[test]
    fn forward_zero_model_is_uniform() {
        let m = SoftmaxModel::zeros(rooms(9), 4).unwrap();
        let p = m.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
        assert_eq!(m.predict(&[0.0; 4]).unwrap().0, 0);
    }

    #[test]
    fn dominant_bias_wins() {
        let mut bias = vec![0.0; 9];
        bias[0] = 10.0;
        let m = SoftmaxModel::new(rooms(9), 2, vec![0.0; 18], bias).unwrap();
        let (room, p) = m.predict_room(&[0.3, 0.4]).unwrap();
        assert_eq!(room, "room0");
        assert!(p[0] > 0.999);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let m = SoftmaxModel::zeros(rooms(3), 4).unwrap();
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 4,
                actual: 1
            })
        ));
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1e4, -1e4, 9999.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = vec![vec![1.0 / 9.0; 9]; 4];
        let l = cross_entropy(&uniform, &[0, 3, 8, 2]).unwrap();
        assert!((l - 9f64.ln()).abs() < 1e-12);
        assert!((l - 2.19722).abs() < 1e-5);
        assert_eq!(cross_entropy(&[vec![0.0, 1.0]], &[1]).unwrap(), 0.0);
        let floored = cross_entropy(&[vec![1.0, 0.0]], &[1]).unwrap();
        assert!(floored.is_finite());
        assert!((floored - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(cross_entropy(&[vec![0.5, 0.5]], &[0, 1]).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn model_file_round_trip() {
        let m = SoftmaxModel::new(
            vec!["KT-A".into(), "ünï".into()],
            2,
            vec![0.5, -1.25, 3.0, 0.0],
            vec![0.125, -2.0],
        )
        .unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"HLCM");
        assert_eq!(SoftmaxModel::from_bytes(&bytes, Path::new("m")).unwrap(), m);
        assert!(SoftmaxModel::from_bytes(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(SoftmaxModel::from_bytes(&bad, Path::new("m")).is_err());
    }

    fn gaussian_classes(n: usize, seed: u64) -> (DescriptorSet, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n {
            let class = i % 2;
            let centre = if class == 0 { -2.0 } else { 2.0 };
            let v = vec![
                (centre + 0.5 * normal(&mut rng)) as f32,
                (centre + 0.5 * normal(&mut rng)) as f32,
            ];
            rows.push(Descriptor::new(format!("s{i}"), v));
            labels.push(class);
        }
        (
            DescriptorSet::new(Method::Imported, 2, rows).unwrap(),
            labels,
        )
    }

    #[test]
    fn separable_gaussians_train_to_high_accuracy() {
        let (train_ds, train_y) = gaussian_classes(100, 1);
        let (val_ds, val_y) = gaussian_classes(100, 2);
        let out = train(
            &rooms(2),
            &Labeled::new(&train_ds, &train_y).unwrap(),
            &Labeled::new(&val_ds, &val_y).unwrap(),
            &TrainConfig {
                seed: 7,
                ..Default::default()
            },
        )
        .unwrap();
        let acc = accuracy(&out.model, &Labeled::new(&val_ds, &val_y).unwrap()).unwrap();
        assert!(acc >= 99.0, "{acc}");
        assert_eq!(out.history.len(), 30);
        assert!(out.history.iter().all(|e| e.train_loss.is_finite()));
    }

    #[test]
    fn zero_learning_rate_returns_initialization() {
        let (ds, y) = gaussian_classes(10, 3);
        let data = Labeled::new(&ds, &y).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            seed: 11,
            ..Default::default()
        };
        let out = train(&rooms(2), &data, &data, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let init = SoftmaxModel::init(rooms(2), 2, &mut rng).unwrap();
        assert_eq!(out.model, init);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (ds, y) = gaussian_classes(20, 4);
        let data = Labeled::new(&ds, &y).unwrap();
        let cfg = TrainConfig {
            seed: 5,
            epochs: 5,
            ..Default::default()
        };
        let a = train(&rooms(2), &data, &data, &cfg).unwrap().model;
        let b = train(&rooms(2), &data, &data, &cfg).unwrap().model;
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a, b);
    }

    #[test]
    fn training_input_errors() {
        let (ds, y) = gaussian_classes(5, 6);
        let data = Labeled::new(&ds, &y).unwrap();
        let cfg = TrainConfig::default();
        assert!(train(&rooms(1), &data, &data, &cfg).is_err());
        // room2 has no samples
        assert!(train(&rooms(3), &data, &data, &cfg).is_err());
        assert!(train(
            &rooms(2),
            &data,
            &data,
            &TrainConfig {
                batch_size: 0,
                ..cfg
            }
        )
        .is_err());
        assert!(train(
            &rooms(2),
            &data,
            &data,
            &TrainConfig {
                momentum: 1.0,
                ..cfg
            }
        )
        .is_err());
        let empty = DescriptorSet::new(Method::Imported, 2, vec![]).unwrap();
        let none = Labeled::new(&empty, &[]).unwrap();
        assert!(train(&rooms(2), &none, &data, &cfg).is_err());
        let wide = DescriptorSet::new(
            Method::Imported,
            3,
            vec![Descriptor::new("a", vec![0.0; 3])],
        )
        .unwrap();
        assert!(train(&rooms(2), &data, &Labeled::new(&wide, &[0]).unwrap(), &cfg).is_err());
    }
}
