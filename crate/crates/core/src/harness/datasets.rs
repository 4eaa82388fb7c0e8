//! Synthetic low-dimensional datasets and their on-disk formats.

use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingParams {
    pub components: usize,
    pub points_per_component: usize,
    pub radius: f64,
    pub std: f64,
}

impl Default for RingParams {
    fn default() -> Self {
        Self {
            components: 8,
            points_per_component: 100,
            radius: 2.0,
            std: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridParams {
    pub side: usize,
    pub points_per_component: usize,
    pub spacing: f64,
    pub std: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            side: 5,
            points_per_component: 100,
            spacing: 2.0,
            std: 0.05,
        }
    }
}

/// Ring of classes with sizes `max(min_size, floor(base * (c + 1)^-alpha))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LongtailParams {
    pub classes: usize,
    pub base: usize,
    pub alpha: f64,
    pub min_size: usize,
    pub radius: f64,
    pub std: f64,
    /// Draw this many points per class instead (a balanced validation split).
    pub balanced: Option<usize>,
}

impl Default for LongtailParams {
    fn default() -> Self {
        Self {
            classes: 16,
            base: 1000,
            alpha: 1.5,
            min_size: 5,
            radius: 2.0,
            std: 0.05,
            balanced: None,
        }
    }
}

impl LongtailParams {
    pub fn class_sizes(&self) -> Vec<usize> {
        (0..self.classes)
            .map(|c| match self.balanced {
                Some(n) => n,
                None => {
                    let s =
                        (self.base as f64 * ((c + 1) as f64).powf(-self.alpha)).floor() as usize;
                    s.max(self.min_size)
                }
            })
            .collect()
    }
}

/// A ring mixture moved away from the training ring: rotated, translated and
/// restricted to a subset of its components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftedParams {
    pub ring: RingParams,
    pub rotation: f64,
    pub translation: [f64; 2],
    pub active: Vec<usize>,
}

impl Default for ShiftedParams {
    fn default() -> Self {
        Self {
            ring: RingParams::default(),
            rotation: 0.1,
            translation: [0.0, 0.0],
            active: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    Ring8(RingParams),
    Grid25(GridParams),
    LongtailMixture(LongtailParams),
    ShiftedMixture(ShiftedParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    pub fn ring8(seed: u64) -> Self {
        Self {
            kind: DatasetKind::Ring8(RingParams::default()),
            seed,
        }
    }

    pub fn grid25(seed: u64) -> Self {
        Self {
            kind: DatasetKind::Grid25(GridParams::default()),
            seed,
        }
    }

    pub fn longtail(seed: u64) -> Self {
        Self {
            kind: DatasetKind::LongtailMixture(LongtailParams::default()),
            seed,
        }
    }

    pub fn shifted(seed: u64) -> Self {
        Self {
            kind: DatasetKind::ShiftedMixture(ShiftedParams::default()),
            seed,
        }
    }

    /// Same distribution, independent draw: the held-out reference set.
    pub fn held_out(&self) -> Self {
        Self {
            kind: self.kind.clone(),
            seed: derive_seed(self.seed, &[0x4e1d]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn class_counts(&self) -> Option<Vec<usize>> {
        let labels = self.labels.as_ref()?;
        let n = labels.iter().max().map_or(0, |c| c + 1);
        let mut counts = vec![0; n];
        labels.iter().for_each(|&c| counts[c] += 1);
        Some(counts)
    }
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::invalid(format!("{what} must be positive, got {v}")));
    }
    Ok(())
}

fn check_std(v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::invalid(format!("std must be >= 0, got {v}")));
    }
    Ok(())
}

/// Appends `count` isotropic Gaussian points around `centre` with label `label`.
fn push_component<R: Rng>(
    rows: &mut Vec<f64>,
    labels: &mut Vec<usize>,
    centre: [f64; 2],
    std: f64,
    count: usize,
    label: usize,
    rng: &mut R,
) {
    for _ in 0..count {
        for c in centre {
            let e: f64 = rng.sample(StandardNormal);
            rows.push(c + std * e);
        }
        labels.push(label);
    }
}

fn ring_centre(radius: f64, components: usize, c: usize, rotation: f64) -> [f64; 2] {
    let a = TAU * c as f64 / components as f64 + rotation;
    [radius * a.cos(), radius * a.sin()]
}

fn finish(rows: Vec<f64>, labels: Vec<usize>) -> Result<Dataset> {
    if labels.is_empty() {
        return Err(Error::invalid("dataset spec produces no points"));
    }
    Ok(Dataset {
        data: Tensor::matrix(labels.len(), 2, rows)?,
        labels: Some(labels),
    })
}

/// Deterministic given the spec (including its seed).
pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let mut rng = rng_from_seed(spec.seed);
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    match &spec.kind {
        DatasetKind::Ring8(p) => {
            check_positive("radius", p.radius)?;
            check_std(p.std)?;
            for c in 0..p.components {
                let centre = ring_centre(p.radius, p.components, c, 0.0);
                push_component(
                    &mut rows,
                    &mut labels,
                    centre,
                    p.std,
                    p.points_per_component,
                    c,
                    &mut rng,
                );
            }
        }
        DatasetKind::Grid25(p) => {
            check_positive("spacing", p.spacing)?;
            check_std(p.std)?;
            let offset = (p.side as f64 - 1.0) / 2.0;
            for gy in 0..p.side {
                for gx in 0..p.side {
                    let centre = [
                        (gx as f64 - offset) * p.spacing,
                        (gy as f64 - offset) * p.spacing,
                    ];
                    let label = gy * p.side + gx;
                    push_component(
                        &mut rows,
                        &mut labels,
                        centre,
                        p.std,
                        p.points_per_component,
                        label,
                        &mut rng,
                    );
                }
            }
        }
        DatasetKind::LongtailMixture(p) => {
            check_positive("radius", p.radius)?;
            check_positive("alpha", p.alpha)?;
            check_std(p.std)?;
            if p.min_size == 0 {
                return Err(Error::invalid("min_size must be >= 1"));
            }
            for (c, size) in p.class_sizes().into_iter().enumerate() {
                let centre = ring_centre(p.radius, p.classes, c, 0.0);
                push_component(&mut rows, &mut labels, centre, p.std, size, c, &mut rng);
            }
        }
        DatasetKind::ShiftedMixture(p) => {
            let r = &p.ring;
            check_positive("radius", r.radius)?;
            check_std(r.std)?;
            if let Some(&c) = p.active.iter().find(|&&c| c >= r.components) {
                return Err(Error::invalid(format!(
                    "active component {c} out of range for {} components",
                    r.components
                )));
            }
            for &c in &p.active {
                let [x, y] = ring_centre(r.radius, r.components, c, p.rotation);
                let centre = [x + p.translation[0], y + p.translation[1]];
                push_component(
                    &mut rows,
                    &mut labels,
                    centre,
                    r.std,
                    r.points_per_component,
                    c,
                    &mut rng,
                );
            }
        }
    }
    finish(rows, labels)
}

const TEXT_MAGIC: &str = "# icgan-dataset v1";
const BINARY_MAGIC: &[u8; 8] = b"ICGANDS1";

/// Header line, then one whitespace-separated row per sample with the label
/// (if any) as the last column. Floats use shortest round-trip formatting.
pub fn write_dataset_text(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = String::new();
    let has_labels = ds.labels.is_some();
    out.push_str(&format!(
        "{TEXT_MAGIC} rows={} dims={} labels={}\n",
        ds.data.rows(),
        ds.data.cols(),
        u8::from(has_labels)
    ));
    for i in 0..ds.data.rows() {
        let mut fields: Vec<String> = ds.data.row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &ds.labels {
            fields.push(l[i].to_string());
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn header_field(header: &str, key: &str) -> Result<usize> {
    header
        .split_whitespace()
        .find_map(|f| f.strip_prefix(key)?.strip_prefix('='))
        .ok_or_else(|| Error::Corrupt(format!("dataset header lacks {key}")))?
        .parse()
        .map_err(|e| Error::Corrupt(format!("dataset header field {key}: {e}")))
}

pub fn read_dataset_text(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .filter(|h| h.starts_with(TEXT_MAGIC))
        .ok_or_else(|| Error::Corrupt(format!("{}: missing dataset header", path.display())))?;
    let (rows, dims) = (header_field(header, "rows")?, header_field(header, "dims")?);
    let has_labels = header_field(header, "labels")? == 1;
    let mut data = Vec::with_capacity(rows * dims);
    let mut labels = Vec::new();
    let mut seen = 0;
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let expected = dims + usize::from(has_labels);
        if fields.len() != expected {
            return Err(Error::Corrupt(format!(
                "line {}: expected {expected} fields, found {}",
                n + 2,
                fields.len()
            )));
        }
        for f in &fields[..dims] {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| Error::Corrupt(format!("line {}: {e}", n + 2)))?,
            );
        }
        if has_labels {
            labels.push(
                fields[dims]
                    .parse::<usize>()
                    .map_err(|e| Error::Corrupt(format!("line {}: label: {e}", n + 2)))?,
            );
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Truncated {
            expected: rows,
            found: seen,
        });
    }
    Ok(Dataset {
        data: Tensor::matrix(rows, dims, data)?,
        labels: has_labels.then_some(labels),
    })
}

/// Magic, `u64` rows, `u64` dims, `u8` label flag, little-endian `f64` rows,
/// then `u64` labels when present.
pub fn write_dataset_binary(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(ds.data.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.data.cols() as u64).to_le_bytes());
    out.push(u8::from(ds.labels.is_some()));
    for v in ds.data.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(l) = &ds.labels {
        for &c in l {
            out.extend_from_slice(&(c as u64).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_dataset_binary(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 25 || &bytes[..8] != BINARY_MAGIC {
        return Err(Error::Corrupt(format!(
            "{}: not a binary dataset",
            path.display()
        )));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (rows, dims) = (word(8) as usize, word(16) as usize);
    let has_labels = bytes[24] == 1;
    let expected = 25 + rows * dims * 8 + if has_labels { rows * 8 } else { 0 };
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let data: Vec<f64> = (0..rows * dims)
        .map(|i| f64::from_bits(word(25 + 8 * i)))
        .collect();
    let base = 25 + rows * dims * 8;
    let labels = has_labels.then(|| (0..rows).map(|i| word(base + 8 * i) as usize).collect());
    Ok(Dataset {
        data: Tensor::matrix(rows, dims, data)?,
        labels,
    })
}

/// Reads either format, sniffing the magic bytes.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let head = fs::read(path).map_err(|e| Error::io(path, e))?;
    if head.starts_with(BINARY_MAGIC) {
        read_dataset_binary(path)
    } else {
        read_dataset_text(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring8_shape_and_labels() {
        let ds = make_dataset(&DatasetSpec::ring8(0)).unwrap();
        assert_eq!(ds.data.shape(), &[800, 2]);
        assert_eq!(ds.class_counts().unwrap(), vec![100; 8]);
        // Each component sits on the radius-2 circle.
        for i in 0..800 {
            let r = ds.data.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - 2.0).abs() < 0.4);
        }
    }

    #[test]
    fn longtail_sizes() {
        let p = LongtailParams {
            classes: 8,
            ..LongtailParams::default()
        };
        let expected: Vec<usize> = (1..=8)
            .map(|c: i32| ((1000.0 / (c as f64).powf(1.5)).floor() as usize).max(5))
            .collect();
        assert_eq!(p.class_sizes(), expected);
        assert_eq!(p.class_sizes()[..3], [1000, 353, 192]);
        let tiny = LongtailParams {
            base: 10,
            ..LongtailParams::default()
        };
        assert!(tiny.class_sizes().iter().all(|&s| s >= 5));
    }

    #[test]
    fn same_seed_same_data() {
        for spec in [
            DatasetSpec::ring8(3),
            DatasetSpec::grid25(3),
            DatasetSpec::longtail(3),
            DatasetSpec::shifted(3),
        ] {
            assert_eq!(make_dataset(&spec).unwrap(), make_dataset(&spec).unwrap());
            assert_ne!(
                make_dataset(&spec).unwrap(),
                make_dataset(&spec.held_out()).unwrap()
            );
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = DatasetSpec::shifted(0);
        if let DatasetKind::ShiftedMixture(p) = &mut spec.kind {
            p.active = vec![9];
        }
        assert!(make_dataset(&spec).is_err());
        let bad = DatasetSpec {
            kind: DatasetKind::Ring8(RingParams {
                std: -1.0,
                ..RingParams::default()
            }),
            seed: 0,
        };
        assert!(make_dataset(&bad).is_err());
    }

    #[test]
    fn text_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_dataset(&DatasetSpec::shifted(1)).unwrap();
        let t = dir.path().join("d.txt");
        write_dataset_text(&t, &ds).unwrap();
        assert_eq!(read_dataset(&t).unwrap(), ds);
        let b = dir.path().join("d.bin");
        write_dataset_binary(&b, &ds).unwrap();
        assert_eq!(read_dataset(&b).unwrap(), ds);

        let bytes = fs::read(&b).unwrap();
        fs::write(&b, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_dataset(&b), Err(Error::Truncated { .. })));
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = DatasetSpec::longtail(7);
        let s = toml::to_string(&spec).unwrap();
        assert!(s.contains("kind = \"longtail_mixture\""));
        assert_eq!(toml::from_str::<DatasetSpec>(&s).unwrap(), spec);
        let short: DatasetSpec = toml::from_str("kind = \"ring8\"\nseed = 2").unwrap();
        assert_eq!(short, DatasetSpec::ring8(2));
    }
}
