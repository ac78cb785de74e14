//! Plain-text file formats: line-delimited JSON datasets and predictions,
//! a canonical JSON model document, training traces, evaluation reports, and
//! run manifests.
//!
//! Every float that must survive a save/load/save round trip byte-identically
//! is serialized as a decimal string with 17 significant digits; sigma is
//! spelled `"inf"` when the penalty is disabled.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::model::{
    Feature, FeatureParams, LabelSpace, Model, NormStats, PartialLabeling, NUM_CHANNELS,
};
use crate::synth::ScenarioSpec;

pub const DATASET_FORMAT: &str = "chainboost-dataset";
pub const MODEL_FORMAT: &str = "chainboost-model";
pub const PREDICTIONS_FORMAT: &str = "chainboost-predictions";
pub const MANIFEST_FORMAT: &str = "chainboost-manifest";
pub const FORMAT_VERSION: u32 = 1;

/// 17 significant decimal digits: enough to reproduce any f64 exactly, and a
/// stable spelling for byte-identical round trips.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|e| format!("bad float `{s}`: {e}"))
}

/// Serde helper serializing sigma through its Display form, so infinity is
/// spelled "inf" in every file.
pub mod sigma_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse::<f64>().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// dataset files
// ---------------------------------------------------------------------------

/// Provenance of a generated dataset, stored in the header record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub rng: String,
    pub spec: ScenarioSpec,
    pub split: String,
    pub mask_fraction: Option<f64>,
    pub mask_seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    label_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorInfo>,
}

/// One sequence record: raw track, ground-truth labels, observed mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub track: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub observed: Vec<bool>,
}

impl SequenceRecord {
    pub fn clamp(&self) -> PartialLabeling {
        PartialLabeling::from_mask(&self.labels, &self.observed).expect("validated at load")
    }
}

/// In-memory form of a dataset file.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub label_names: Vec<String>,
    pub generator: Option<GeneratorInfo>,
    pub sequences: Vec<SequenceRecord>,
}

impl Dataset {
    pub fn label_space(&self) -> Result<LabelSpace> {
        LabelSpace::new(self.label_names.clone())
    }
}

/// Writes a dataset as line-delimited JSON: one header line, then one record
/// per sequence.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        label_names: dataset.label_names.clone(),
        generator: dataset.generator.clone(),
    };
    let mut write_line = |value: String| -> Result<()> {
        out.write_all(value.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    write_line(serde_json::to_string(&header).expect("header serializes"))?;
    for record in &dataset.sequences {
        write_line(serde_json::to_string(record).expect("record serializes"))?;
    }
    Ok(())
}

/// Reads and validates a dataset file, reporting the offending line on
/// malformed input.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::malformed(path, 1, "empty file, expected a header record"))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first)
        .map_err(|e| Error::malformed(path, 1, format!("header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(Error::malformed(
            path,
            1,
            format!("format `{}`, expected `{DATASET_FORMAT}`", header.format),
        ));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::malformed(
            path,
            1,
            format!("unsupported version {}", header.version),
        ));
    }
    let num_labels = header.label_names.len();
    let mut sequences = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let record: SequenceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, lineno, e.to_string()))?;
        if record.track.is_empty() {
            return Err(Error::malformed(path, lineno, "empty track"));
        }
        if record.labels.len() != record.track.len() || record.observed.len() != record.track.len()
        {
            return Err(Error::malformed(
                path,
                lineno,
                format!(
                    "field lengths differ: track {}, labels {}, observed {}",
                    record.track.len(),
                    record.labels.len(),
                    record.observed.len()
                ),
            ));
        }
        if let Some(&bad) = record.labels.iter().find(|&&l| l >= num_labels) {
            return Err(Error::malformed(
                path,
                lineno,
                format!("label index {bad} out of range for {num_labels} labels"),
            ));
        }
        if record.track.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::malformed(path, lineno, "non-finite track coordinate"));
        }
        sequences.push(record);
    }
    Ok(Dataset {
        label_names: header.label_names,
        generator: header.generator,
        sequences,
    })
}

// ---------------------------------------------------------------------------
// model files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    label_names: Vec<String>,
    norm_mean: Vec<String>,
    norm_std: Vec<String>,
    /// Feature descriptors in id order; ids are implicit positions.
    features: Vec<FeatureParams>,
    /// Weights as decimal strings with 17 significant digits.
    weights: Vec<String>,
}

/// Canonical JSON document for a model. Serialization is deterministic:
/// save -> load -> save is byte-identical.
pub fn model_to_json(model: &Model) -> String {
    let doc = ModelDoc {
        format: MODEL_FORMAT.into(),
        version: FORMAT_VERSION,
        label_names: model.label_space().names().to_vec(),
        norm_mean: model.norm_stats().mean().iter().copied().map(format_f64).collect(),
        norm_std: model.norm_stats().std().iter().copied().map(format_f64).collect(),
        features: model.features().iter().map(|f| f.params()).collect(),
        weights: model.weights().iter().copied().map(format_f64).collect(),
    };
    let mut json = serde_json::to_string_pretty(&doc).expect("model serializes");
    json.push('\n');
    json
}

/// Parses a model document; `origin` names the source in diagnostics.
pub fn model_from_json(json: &str, origin: &Path) -> Result<Model> {
    let doc: ModelDoc = serde_json::from_str(json)
        .map_err(|e| Error::malformed(origin, e.line(), e.to_string()))?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::malformed(
            origin,
            1,
            format!("format `{}`, expected `{MODEL_FORMAT}`", doc.format),
        ));
    }
    if doc.version != FORMAT_VERSION {
        return Err(Error::malformed(origin, 1, format!("unsupported version {}", doc.version)));
    }
    let label_space = LabelSpace::new(doc.label_names)?;
    if doc.norm_mean.len() != NUM_CHANNELS || doc.norm_std.len() != NUM_CHANNELS {
        return Err(Error::malformed(origin, 1, "norm stats must have 5 channels"));
    }
    let mut mean = [0.0; NUM_CHANNELS];
    let mut std = [0.0; NUM_CHANNELS];
    for m in 0..NUM_CHANNELS {
        mean[m] = parse_f64(&doc.norm_mean[m]).map_err(|e| Error::malformed(origin, 1, e))?;
        std[m] = parse_f64(&doc.norm_std[m]).map_err(|e| Error::malformed(origin, 1, e))?;
    }
    let stats = NormStats::new(mean, std)?;
    let features: Vec<Feature> = doc
        .features
        .into_iter()
        .enumerate()
        .map(|(id, params)| Feature::new(id, params))
        .collect();
    for feature in &features {
        let (labels_ok, channel_ok) = match feature.params() {
            FeatureParams::DataAssoc { label, channel } => {
                (label < label_space.size(), channel < NUM_CHANNELS)
            }
            FeatureParams::PersistLabel { label } => (label < label_space.size(), true),
            FeatureParams::Transition { prev, cur, channel } => (
                prev < label_space.size() && cur < label_space.size(),
                channel < NUM_CHANNELS,
            ),
            FeatureParams::Context { prev, cur, channel, .. } => (
                prev < label_space.size() && cur < label_space.size(),
                channel < NUM_CHANNELS,
            ),
            FeatureParams::BridgeLabel { prev, cur } => {
                (prev < label_space.size() && cur < label_space.size(), true)
            }
        };
        if !labels_ok || !channel_ok {
            return Err(Error::malformed(
                origin,
                1,
                format!("feature {} references an out-of-range label or channel", feature.id()),
            ));
        }
    }
    let mut weights = Vec::with_capacity(doc.weights.len());
    for w in &doc.weights {
        weights.push(parse_f64(w).map_err(|e| Error::malformed(origin, 1, e))?);
    }
    Model::with_weights(label_space, features, weights, stats)
}

pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<Model> {
    let mut json = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut json))
        .map_err(|e| Error::io(path, e))?;
    model_from_json(&json, path)
}

// ---------------------------------------------------------------------------
// prediction files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PredictionsHeader {
    format: String,
    version: u32,
    label_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    labels: Vec<usize>,
}

/// Writes decoded label sequences as line-delimited JSON.
pub fn write_predictions(path: &Path, label_names: &[String], predictions: &[Vec<usize>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = PredictionsHeader {
        format: PREDICTIONS_FORMAT.into(),
        version: FORMAT_VERSION,
        label_names: label_names.to_vec(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))
        .map_err(|e| Error::io(path, e))?;
    for labels in predictions {
        let record = PredictionRecord { labels: labels.clone() };
        writeln!(out, "{}", serde_json::to_string(&record).expect("record serializes"))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::malformed(path, 1, "empty file, expected a header record"))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let header: PredictionsHeader = serde_json::from_str(&first)
        .map_err(|e| Error::malformed(path, 1, format!("header: {e}")))?;
    if header.format != PREDICTIONS_FORMAT {
        return Err(Error::malformed(
            path,
            1,
            format!("format `{}`, expected `{PREDICTIONS_FORMAT}`", header.format),
        ));
    }
    let num_labels = header.label_names.len();
    let mut predictions = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let record: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, lineno, e.to_string()))?;
        if let Some(&bad) = record.labels.iter().find(|&&l| l >= num_labels) {
            return Err(Error::malformed(
                path,
                lineno,
                format!("label index {bad} out of range for {num_labels} labels"),
            ));
        }
        predictions.push(record.labels);
    }
    Ok((header.label_names, predictions))
}

// ---------------------------------------------------------------------------
// manifests, traces, reports
// ---------------------------------------------------------------------------

/// Every CLI run writes one of these next to its primary output: the full
/// resolved configuration, sufficient to reproduce the artifacts.
#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub config: serde_json::Value,
}

pub fn write_manifest(path: &Path, command: &str, config: &impl Serialize) -> Result<()> {
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: FORMAT_VERSION,
        command: command.into(),
        config: serde_json::to_value(config).expect("config serializes"),
    };
    write_json(path, &manifest)
}

/// Pretty-printed JSON with a trailing newline (deterministic bytes).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value).expect("value serializes");
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Aligned text rendering of an evaluation report.
pub fn render_report(report: &EvalReport, label_names: &[String]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "slices {}  misclassified {}  per-label error {:.4}  macro F1 {:.4}\n",
        report.total_slices, report.misclassified, report.per_label_error, report.macro_f1
    ));
    if report.excluded_labels > 0 {
        out.push_str(&format!(
            "({} zero-support label(s) excluded from macro F1)\n",
            report.excluded_labels
        ));
    }
    let name_width = label_names.iter().map(|n| n.len()).max().unwrap_or(5).max(5);
    out.push_str(&format!(
        "{:>width$}  {:>9}  {:>9}  {:>9}  {:>8}  {:>9}\n",
        "label",
        "precision",
        "recall",
        "f1",
        "support",
        "predicted",
        width = name_width
    ));
    for m in &report.per_label {
        out.push_str(&format!(
            "{:>width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>8}  {:>9}\n",
            label_names[m.label],
            m.precision,
            m.recall,
            m.f1,
            m.support,
            m.predicted,
            width = name_width
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_feature_set, FeatureSetKind};
    use crate::model::Model;
    use crate::synth::{generate_dataset, ScenarioSpec};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn sample_dataset() -> Dataset {
        let spec = ScenarioSpec::short_meal(3);
        let mut spec = spec;
        spec.n_train = 3;
        spec.n_test = 2;
        let generated = generate_dataset(&spec).unwrap();
        let sequences = generated
            .train
            .iter()
            .map(|s| SequenceRecord {
                track: s.track.clone(),
                labels: s.labels.clone(),
                observed: vec![true; s.labels.len()],
            })
            .collect();
        Dataset {
            label_names: spec.label_names.clone(),
            generator: Some(GeneratorInfo {
                rng: crate::synth::RNG_NAME.into(),
                spec,
                split: "train".into(),
                mask_fraction: Some(1.0),
                mask_seed: Some(3),
            }),
            sequences,
        }
    }

    #[test]
    fn dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let dataset = sample_dataset();
        write_dataset(&path, &dataset).unwrap();
        let loaded = read_dataset(&path).unwrap();
        assert_eq!(loaded.label_names, dataset.label_names);
        assert_eq!(loaded.sequences, dataset.sequences);
        // second write is byte-identical
        let bytes1 = std::fs::read(&path).unwrap();
        let path2 = dir.path().join("data2.jsonl");
        write_dataset(&path2, &loaded).unwrap();
        assert_eq!(bytes1, std::fs::read(&path2).unwrap());
    }

    #[test]
    fn malformed_dataset_lines_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let header = r#"{"format":"chainboost-dataset","version":1,"label_names":["a","b"]}"#;
        std::fs::write(
            &path,
            format!("{header}\n{{\"track\":[[0.0,0.0]],\"labels\":[7],\"observed\":[true]}}\n"),
        )
        .unwrap();
        match read_dataset(&path) {
            Err(Error::Malformed { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("label index 7"), "{message}");
            }
            other => panic!("expected Malformed, got {other:?}"),
        }
        std::fs::write(&path, format!("{header}\n{{\"labels\":[0]}}\n")).unwrap();
        match read_dataset(&path) {
            Err(Error::Malformed { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("track"), "{message}");
            }
            other => panic!("expected Malformed, got {other:?}"),
        }
    }

    #[test]
    fn model_save_load_save_is_byte_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let ls = LabelSpace::new(vec!["1".into(), "2".into(), "3".into()]).unwrap();
        let features = build_feature_set(FeatureSetKind::Context { window: 3 }, &ls).unwrap();
        let mut model = Model::new(ls, features, NormStats::identity());
        for w in model.weights_mut() {
            // irrational-ish values exercise the full 17 digits
            *w = rng.random_range(-5904.9..5904.9) * std::f64::consts::PI;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        write_model(&path, &model).unwrap();
        let loaded = read_model(&path).unwrap();
        assert_eq!(loaded.weights(), model.weights());
        assert_eq!(loaded.features(), model.features());
        let path2 = dir.path().join("model2.json");
        write_model(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn seventeen_digit_floats_round_trip_exactly() {
        for v in [
            0.1,
            -5904.9,
            std::f64::consts::PI,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            -0.0,
            2.425,
        ] {
            let s = format_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} -> {s} -> {back}");
            assert_eq!(s, format_f64(back));
        }
    }

    #[test]
    fn sigma_serializes_as_inf_string() {
        #[derive(Serialize, Deserialize)]
        struct Holder {
            #[serde(with = "sigma_string")]
            sigma: f64,
        }
        let json = serde_json::to_string(&Holder { sigma: f64::INFINITY }).unwrap();
        assert_eq!(json, r#"{"sigma":"inf"}"#);
        let back: Holder = serde_json::from_str(&json).unwrap();
        assert!(back.sigma.is_infinite());
        let finite: Holder = serde_json::from_str(r#"{"sigma":"2"}"#).unwrap();
        assert_eq!(finite.sigma, 2.0);
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.jsonl");
        let names = vec!["a".to_string(), "b".to_string()];
        let preds = vec![vec![0, 1, 1], vec![1, 0]];
        write_predictions(&path, &names, &preds).unwrap();
        let (names2, preds2) = read_predictions(&path).unwrap();
        assert_eq!(names, names2);
        assert_eq!(preds, preds2);
    }

    #[test]
    fn report_rendering_is_aligned() {
        let report = crate::eval::evaluate(&[vec![0, 1, 1]], &[vec![0, 1, 0]], 2).unwrap();
        let names = vec!["short".to_string(), "a-much-longer-name".to_string()];
        let text = render_report(&report, &names);
        assert!(text.contains("per-label error"));
        let lines: Vec<&str> = text.lines().collect();
        // label rows align on the same column width
        assert_eq!(lines[1].find("precision"), lines[1].find("precision"));
        assert!(lines.iter().any(|l| l.contains("a-much-longer-name")));
    }
}
