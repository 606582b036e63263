//! Datasets: a synthetic imbalanced generator, manifest files for real
//! label lists, and imbalance statistics.
//!
//! Synthetic samples carry a feature vector drawn from class-conditional
//! isotropic Gaussians: normal samples cluster at one mean, defect samples
//! at another `separation` away, and a configurable fraction of defect
//! samples is drawn from the midpoint cluster so hard-to-classify cases
//! exist as a measurable subpopulation. Manifest datasets describe real
//! items by path and label only; their features stay empty and they serve
//! the evaluation side exclusively — image pixels are never read.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::Label;

/// Dataset partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::All => "all",
        }
    }
}

/// One labeled item. For synthetic corpora `features` is the toy stand-in
/// for the image; manifest-loaded samples keep it empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub object_name: String,
    pub label: Label,
    pub split: Split,
}

/// An immutable collection of samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Index samples by id. Ids are unique in generated and loaded datasets.
    pub fn by_id(&self) -> HashMap<&str, &Sample> {
        self.samples.iter().map(|s| (s.id.as_str(), s)).collect()
    }
}

/// Class counts and the derived defect ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceStats {
    pub defect_count: usize,
    pub normal_count: usize,
    /// `defect / (defect + normal)`; absent for an empty dataset.
    pub defect_ratio: Option<f64>,
}

impl ImbalanceStats {
    pub fn from_counts(defect_count: usize, normal_count: usize) -> Self {
        let total = defect_count + normal_count;
        let defect_ratio = if total > 0 {
            Some(defect_count as f64 / total as f64)
        } else {
            None
        };
        ImbalanceStats {
            defect_count,
            normal_count,
            defect_ratio,
        }
    }

    /// Defect ratio as a percentage, if defined.
    pub fn ratio_percent(&self) -> Option<f64> {
        self.defect_ratio.map(|r| r * 100.0)
    }
}

impl std::fmt::Display for ImbalanceStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.ratio_percent() {
            Some(pct) => write!(
                f,
                "defect {} / normal {} (defect ratio {:.2}%)",
                self.defect_count, self.normal_count, pct
            ),
            None => write!(f, "empty dataset (defect ratio undefined)"),
        }
    }
}

/// Reference imbalance baselines computed from published sample counts.
/// Ratios are always derived from the counts; where the commonly quoted
/// percentage disagrees with the counts, both are kept so the discrepancy
/// can be surfaced instead of silently matching the quote.
pub mod reference {
    /// Counts and the commonly quoted defect percentage for a benchmark.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct ReferenceStats {
        pub name: &'static str,
        pub defect_count: usize,
        pub normal_count: usize,
        pub quoted_ratio_pct: f64,
    }

    impl ReferenceStats {
        /// Ratio actually implied by the counts, in percent.
        pub fn computed_ratio_pct(&self) -> f64 {
            100.0 * self.defect_count as f64 / (self.defect_count + self.normal_count) as f64
        }
    }

    /// MVTec-AD counts give 23.50%, not the quoted 23.8%.
    pub const MVTEC_AD: ReferenceStats = ReferenceStats {
        name: "MVTec-AD",
        defect_count: 1258,
        normal_count: 4096,
        quoted_ratio_pct: 23.8,
    };

    pub const VISA: ReferenceStats = ReferenceStats {
        name: "VisA",
        defect_count: 1200,
        normal_count: 9621,
        quoted_ratio_pct: 11.1,
    };
}

/// Configuration for the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub size: usize,
    pub defect_ratio: f64,
    /// Distance between the normal and defect feature means.
    pub separation: f64,
    /// Fraction of defect samples drawn from the midpoint cluster.
    pub hard_fraction: f64,
    pub feature_dim: usize,
    pub object_names: Vec<String>,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            size: 1000,
            defect_ratio: 0.111,
            separation: 2.0,
            hard_fraction: 0.3,
            feature_dim: 8,
            object_names: default_object_names(),
            seed: 0,
        }
    }
}

pub fn default_object_names() -> Vec<String> {
    ["bottle", "cable", "capsule", "pill", "screw", "zipper"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("defect ratio must be in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("corpus size must be positive")]
    ZeroSize,
    #[error("hard fraction must be in [0, 1], got {0}")]
    InvalidHardFraction(f64),
    #[error("separation must be positive and finite, got {0}")]
    InvalidSeparation(f64),
    #[error("feature dimension must be positive")]
    ZeroFeatureDim,
    #[error("object name list is empty")]
    NoObjectNames,
    #[error("manifest not found: {0}")]
    FileNotFound(String),
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("line {line}: unknown label {value:?} (expected \"defect\" or \"normal\")")]
    UnknownLabel { line: usize, value: String },
    #[error("samples disagree on feature dimension ({0} vs {1})")]
    InconsistentFeatures(usize, usize),
    #[error("feature table has {table} rows but dataset has {dataset} samples")]
    FeatureCountMismatch { table: usize, dataset: usize },
    #[error("feature file is truncated or corrupt")]
    CorruptFeatureFile,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.size == 0 {
            return Err(CorpusError::ZeroSize);
        }
        if !(self.defect_ratio > 0.0 && self.defect_ratio < 1.0) {
            return Err(CorpusError::InvalidRatio(self.defect_ratio));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) || self.hard_fraction.is_nan() {
            return Err(CorpusError::InvalidHardFraction(self.hard_fraction));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(CorpusError::InvalidSeparation(self.separation));
        }
        if self.feature_dim == 0 {
            return Err(CorpusError::ZeroFeatureDim);
        }
        if self.object_names.is_empty() {
            return Err(CorpusError::NoObjectNames);
        }
        Ok(())
    }
}

/// Round half away from zero; the class-count rounding rule.
fn round_half_up(x: f64) -> usize {
    x.round() as usize
}

/// Generate a synthetic imbalanced dataset.
///
/// Deterministic given the seed. Exactly `round(size * defect_ratio)`
/// samples are defects. Normal features are drawn from an isotropic
/// unit-variance Gaussian at `-separation/2` along the unit diagonal,
/// defect features at `+separation/2`; a `hard_fraction` of defect samples
/// is drawn from the midpoint cluster instead. Object names are assigned
/// round-robin, splits are all `Train`.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Dataset, CorpusError> {
    cfg.validate()?;
    let n_defect = round_half_up(cfg.size as f64 * cfg.defect_ratio);
    let n_hard = round_half_up(n_defect as f64 * cfg.hard_fraction);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels = vec![Label::Defect; n_defect];
    labels.resize(cfg.size, Label::Normal);
    labels.shuffle(&mut rng);

    let unit = 1.0 / (cfg.feature_dim as f64).sqrt();
    let offset = cfg.separation / 2.0 * unit;

    let mut samples = Vec::with_capacity(cfg.size);
    let mut defects_seen = 0usize;
    for (idx, &label) in labels.iter().enumerate() {
        let mean = match label {
            Label::Normal => -offset,
            Label::Defect => {
                defects_seen += 1;
                if defects_seen <= n_hard {
                    0.0
                } else {
                    offset
                }
            }
        };
        let features = (0..cfg.feature_dim)
            .map(|_| mean + rng.sample::<f64, _>(StandardNormal))
            .collect();
        samples.push(Sample {
            id: format!("synthetic/{idx:06}"),
            features,
            object_name: cfg.object_names[idx % cfg.object_names.len()].clone(),
            label,
            split: Split::Train,
        });
    }
    Ok(Dataset::new(samples))
}

/// Exact class counts and ratio for a dataset.
pub fn imbalance_stats(dataset: &Dataset) -> ImbalanceStats {
    let defect = dataset
        .iter()
        .filter(|s| s.label == Label::Defect)
        .count();
    ImbalanceStats::from_counts(defect, dataset.len() - defect)
}

/// On-disk manifest record: one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    image_path: String,
    object_name: String,
    label: String,
    split: String,
}

/// A loaded manifest plus non-fatal warnings (currently: empty file).
#[derive(Debug)]
pub struct ManifestLoad {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Load a line-delimited manifest. Every record must carry `image_path`,
/// `object_name`, `label` in {defect, normal} and `split` in {train, test};
/// violations are reported with their 1-based line number. Features are
/// left empty.
pub fn load_manifest(path: &Path) -> Result<ManifestLoad, CorpusError> {
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(err) if err.kind() == io::ErrorKind::NotFound => {
            return Err(CorpusError::FileNotFound(path.display().to_string()))
        }
        Err(err) => return Err(err.into()),
    };

    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(line).map_err(|err| CorpusError::SchemaViolation {
                line: line_no,
                message: err.to_string(),
            })?;
        let label = match record.label.as_str() {
            "defect" => Label::Defect,
            "normal" => Label::Normal,
            other => {
                return Err(CorpusError::UnknownLabel {
                    line: line_no,
                    value: other.to_string(),
                })
            }
        };
        let split = match record.split.as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(CorpusError::SchemaViolation {
                    line: line_no,
                    message: format!("split must be \"train\" or \"test\", got {other:?}"),
                })
            }
        };
        samples.push(Sample {
            id: record.image_path,
            features: Vec::new(),
            object_name: record.object_name,
            label,
            split,
        });
    }

    let mut warnings = Vec::new();
    if samples.is_empty() {
        warnings.push(format!("manifest {} contains no records", path.display()));
    }
    Ok(ManifestLoad {
        dataset: Dataset::new(samples),
        warnings,
    })
}

/// Write a dataset as a line-delimited manifest (ids become `image_path`).
pub fn save_manifest(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    for sample in dataset.iter() {
        let record = ManifestRecord {
            image_path: sample.id.clone(),
            object_name: sample.object_name.clone(),
            label: sample.label.to_string(),
            split: sample.split.as_str().to_string(),
        };
        out.push_str(&serde_json::to_string(&record).expect("manifest record serializes"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Sidecar feature table: `size` and `feature_dim` as little-endian u64,
/// then row-major little-endian f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub size: usize,
    pub feature_dim: usize,
    pub values: Vec<f64>,
}

pub fn save_features(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let dim = dataset.samples.first().map_or(0, |s| s.features.len());
    for sample in dataset.iter() {
        if sample.features.len() != dim {
            return Err(CorpusError::InconsistentFeatures(dim, sample.features.len()));
        }
    }
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    file.write_all(&(dataset.len() as u64).to_le_bytes())?;
    file.write_all(&(dim as u64).to_le_bytes())?;
    for sample in dataset.iter() {
        for &v in &sample.features {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureTable, CorpusError> {
    let mut file = match fs::File::open(path) {
        Ok(f) => f,
        Err(err) if err.kind() == io::ErrorKind::NotFound => {
            return Err(CorpusError::FileNotFound(path.display().to_string()))
        }
        Err(err) => return Err(err.into()),
    };
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(CorpusError::CorruptFeatureFile);
    }
    let size = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = 16 + size * dim * 8;
    if bytes.len() != expected {
        return Err(CorpusError::CorruptFeatureFile);
    }
    let values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureTable {
        size,
        feature_dim: dim,
        values,
    })
}

/// Attach a feature table to a dataset loaded from a manifest, in order.
pub fn apply_features(dataset: &mut Dataset, table: &FeatureTable) -> Result<(), CorpusError> {
    if table.size != dataset.len() {
        return Err(CorpusError::FeatureCountMismatch {
            table: table.size,
            dataset: dataset.len(),
        });
    }
    for (i, sample) in dataset.samples.iter_mut().enumerate() {
        let start = i * table.feature_dim;
        sample.features = table.values[start..start + table.feature_dim].to_vec();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn defect_counts_follow_rounding_rule() {
        for (size, ratio, expected) in [(1000, 0.111, 111), (1000, 0.238, 238), (10, 0.2, 2)] {
            let cfg = CorpusConfig {
                size,
                defect_ratio: ratio,
                ..CorpusConfig::default()
            };
            let ds = generate_corpus(&cfg).unwrap();
            let stats = imbalance_stats(&ds);
            assert_eq!(stats.defect_count, expected, "size={size} ratio={ratio}");
            assert_eq!(ds.len(), size);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = CorpusConfig {
            size: 64,
            seed: 1234,
            ..CorpusConfig::default()
        };
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_ratio = CorpusConfig {
            defect_ratio: 1.5,
            ..CorpusConfig::default()
        };
        assert!(matches!(
            generate_corpus(&bad_ratio),
            Err(CorpusError::InvalidRatio(_))
        ));
        let zero = CorpusConfig {
            size: 0,
            ..CorpusConfig::default()
        };
        assert!(matches!(generate_corpus(&zero), Err(CorpusError::ZeroSize)));
    }

    #[test]
    fn defect_mean_approaches_target() {
        let cfg = CorpusConfig {
            size: 20_000,
            defect_ratio: 0.25,
            separation: 2.0,
            hard_fraction: 0.0,
            feature_dim: 4,
            seed: 7,
            ..CorpusConfig::default()
        };
        let ds = generate_corpus(&cfg).unwrap();
        let defects: Vec<&Sample> = ds.iter().filter(|s| s.label == Label::Defect).collect();
        let n = defects.len() as f64;
        let target = cfg.separation / 2.0 / (cfg.feature_dim as f64).sqrt();
        let tol = 5.0 / n.sqrt();
        for d in 0..cfg.feature_dim {
            let mean = defects.iter().map(|s| s.features[d]).sum::<f64>() / n;
            assert!(
                (mean - target).abs() < tol,
                "dim {d}: mean {mean} vs target {target} (tol {tol})"
            );
        }
    }

    #[test]
    fn generated_ratio_close_to_config() {
        for seed in 0..5 {
            let cfg = CorpusConfig {
                size: 321,
                defect_ratio: 0.17,
                seed,
                ..CorpusConfig::default()
            };
            let ds = generate_corpus(&cfg).unwrap();
            let ratio = imbalance_stats(&ds).defect_ratio.unwrap();
            assert!((ratio - cfg.defect_ratio).abs() <= 1.0 / cfg.size as f64);
        }
    }

    #[test]
    fn stats_match_reference_counts() {
        let visa = ImbalanceStats::from_counts(1200, 9621);
        assert_eq!(visa.defect_ratio.unwrap(), 1200.0 / 10821.0);
        assert!((visa.defect_ratio.unwrap() - 0.11090).abs() < 5e-6);
        let mvtec = ImbalanceStats::from_counts(1258, 4096);
        assert_eq!(mvtec.defect_ratio.unwrap(), 1258.0 / 5354.0);
        assert_eq!(format!("{:.2}", mvtec.ratio_percent().unwrap()), "23.50");
        let none = ImbalanceStats::from_counts(0, 10);
        assert_eq!(none.defect_ratio, Some(0.0));
        let empty = ImbalanceStats::from_counts(0, 0);
        assert_eq!(empty.defect_ratio, None);
    }

    #[test]
    fn reference_tables_expose_discrepancy() {
        let mvtec = reference::MVTEC_AD;
        assert!((mvtec.computed_ratio_pct() - 23.50).abs() < 0.005);
        assert!((mvtec.quoted_ratio_pct - mvtec.computed_ratio_pct()).abs() > 0.25);
        let visa = reference::VISA;
        assert!((visa.computed_ratio_pct() - visa.quoted_ratio_pct).abs() < 0.05);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let dataset = Dataset::new(vec![
            Sample {
                id: "a/1.png".into(),
                features: vec![],
                object_name: "bottle".into(),
                label: Label::Defect,
                split: Split::Train,
            },
            Sample {
                id: "a/2.png".into(),
                features: vec![],
                object_name: "pill".into(),
                label: Label::Normal,
                split: Split::Test,
            },
        ]);
        save_manifest(&dataset, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.dataset, dataset);
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"image_path":"x","object_name":"pill","label":"defect","split":"train"}"#,
                "\n",
                r#"{"image_path":"y","object_name":"pill","label":"broken","split":"train"}"#,
                "\n",
            ),
        )
        .unwrap();
        match load_manifest(&path) {
            Err(CorpusError::UnknownLabel { line, value }) => {
                assert_eq!(line, 2);
                assert_eq!(value, "broken");
            }
            other => panic!("expected UnknownLabel, got {other:?}"),
        }
    }

    #[test]
    fn empty_manifest_warns() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.dataset.len(), 0);
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn missing_manifest_is_file_not_found() {
        let result = load_manifest(Path::new("/nonexistent/manifest.jsonl"));
        assert!(matches!(result, Err(CorpusError::FileNotFound(_))));
    }

    #[test]
    fn feature_sidecar_round_trip() {
        let dir = tempdir().unwrap();
        let manifest = dir.path().join("m.jsonl");
        let features = dir.path().join("f.bin");
        let cfg = CorpusConfig {
            size: 12,
            feature_dim: 3,
            seed: 5,
            ..CorpusConfig::default()
        };
        let ds = generate_corpus(&cfg).unwrap();
        save_manifest(&ds, &manifest).unwrap();
        save_features(&ds, &features).unwrap();

        let mut reloaded = load_manifest(&manifest).unwrap().dataset;
        let table = load_features(&features).unwrap();
        assert_eq!(table.size, 12);
        assert_eq!(table.feature_dim, 3);
        apply_features(&mut reloaded, &table).unwrap();
        assert_eq!(reloaded, ds);
    }
}
