//! Segments, missing-modality patterns, tag encoding, JSONL ingestion and
//! the synthetic dataset generator.

use std::collections::HashSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

/// Sequence-length caps applied at ingestion: (visual, acoustic, textual).
pub const MAX_LEN_VISUAL: usize = 100;
pub const MAX_LEN_ACOUSTIC: usize = 150;
pub const MAX_LEN_TEXTUAL: usize = 25;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid missing pattern: all three modalities missing")]
    AllMissing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Visual,
    Acoustic,
    Textual,
}

pub const MODALITIES: [Modality; 3] = [Modality::Visual, Modality::Acoustic, Modality::Textual];

/// Which modalities are absent from a sample. Never all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MissingPattern {
    visual: bool,
    acoustic: bool,
    textual: bool,
}

impl MissingPattern {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(visual: bool, acoustic: bool, textual: bool) -> Result<Self, DataError> {
        if visual && acoustic && textual {
            return Err(DataError::AllMissing);
        }
        Ok(Self {
            visual,
            acoustic,
            textual,
        })
    }

    pub fn is_missing(&self, m: Modality) -> bool {
        match m {
            Modality::Visual => self.visual,
            Modality::Acoustic => self.acoustic,
            Modality::Textual => self.textual,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.visual || self.acoustic || self.textual)
    }

    /// All 7 valid patterns (sizes 0, 1 and 2).
    pub fn all_valid() -> Vec<MissingPattern> {
        let mut out = Vec::new();
        for v in [false, true] {
            for a in [false, true] {
                for t in [false, true] {
                    if let Ok(p) = MissingPattern::new(v, a, t) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// 4-digit modality tag: first digit 1 iff nothing is missing, then one digit
/// per (visual, acoustic, textual) set to 1 iff that modality is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tag {
    digits: [u8; 4],
}

impl Tag {
    pub fn digits(&self) -> [u8; 4] {
        self.digits
    }

    pub fn as_floats(&self) -> [f64; 4] {
        [
            self.digits[0] as f64,
            self.digits[1] as f64,
            self.digits[2] as f64,
            self.digits[3] as f64,
        ]
    }

    pub fn as_string(&self) -> String {
        self.digits.iter().map(|d| d.to_string()).collect()
    }

    /// Threshold-decode four real values back into a pattern.
    pub fn decode(values: &[f64]) -> Result<MissingPattern, DataError> {
        assert_eq!(values.len(), 4);
        let bits: Vec<bool> = values.iter().map(|&v| v >= 0.5).collect();
        if bits[0] {
            return MissingPattern::new(false, false, false);
        }
        MissingPattern::new(bits[1], bits[2], bits[3])
    }
}

pub fn encode_tag(p: &MissingPattern) -> Tag {
    if p.is_empty() {
        return Tag {
            digits: [1, 0, 0, 0],
        };
    }
    Tag {
        digits: [
            0,
            p.visual as u8,
            p.acoustic as u8,
            p.textual as u8,
        ],
    }
}

/// One sample: three modality feature sequences plus a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub label: usize,
    pub visual: Tensor,
    pub acoustic: Tensor,
    pub textual: Tensor,
}

impl Segment {
    pub fn modality(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Visual => &self.visual,
            Modality::Acoustic => &self.acoustic,
            Modality::Textual => &self.textual,
        }
    }
}

/// Zero out the missing modalities; present modalities pass through
/// untouched. Idempotent.
pub fn mask_missing(s: &Segment, p: &MissingPattern) -> Segment {
    let zero_if = |missing: bool, t: &Tensor| {
        if missing {
            Tensor::zeros(t.shape().to_vec())
        } else {
            t.clone()
        }
    };
    Segment {
        id: s.id.clone(),
        label: s.label,
        visual: zero_if(p.visual, &s.visual),
        acoustic: zero_if(p.acoustic, &s.acoustic),
        textual: zero_if(p.textual, &s.textual),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingMode {
    Single,
    Multiple,
}

impl std::str::FromStr for MissingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" => Ok(MissingMode::Single),
            "multiple" => Ok(MissingMode::Multiple),
            other => Err(format!("unknown missing mode '{other}'")),
        }
    }
}

/// With probability `1 - eta` the sample stays complete; otherwise a pattern
/// is drawn uniformly from the singletons (single mode) or from all six
/// patterns of size 1 or 2 (multiple mode).
pub fn sample_missing_pattern(rng: &mut impl Rng, eta: f64, mode: MissingMode) -> MissingPattern {
    assert!((0.0..=1.0).contains(&eta), "eta must be in [0, 1]");
    if rng.gen::<f64>() >= eta {
        return MissingPattern::none();
    }
    let singletons = [(true, false, false), (false, true, false), (false, false, true)];
    let pairs = [(true, true, false), (true, false, true), (false, true, true)];
    let (v, a, t) = match mode {
        MissingMode::Single => singletons[rng.gen_range(0..3)],
        MissingMode::Multiple => {
            let k = rng.gen_range(0..6);
            if k < 3 {
                singletons[k]
            } else {
                pairs[k - 3]
            }
        }
    };
    MissingPattern::new(v, a, t).expect("patterns of size 1 or 2 are always valid")
}

/// Immutable collection of segments with homogeneous feature widths.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub segments: Vec<Segment>,
    pub class_count: usize,
    pub width_visual: usize,
    pub width_acoustic: usize,
    pub width_textual: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecord {
    id: String,
    label: usize,
    visual: Vec<Vec<f64>>,
    acoustic: Vec<Vec<f64>>,
    textual: Vec<Vec<f64>>,
}

fn rows_to_tensor(
    rows: &[Vec<f64>],
    max_len: usize,
    name: &str,
    id: &str,
) -> Result<Tensor, DataError> {
    if rows.is_empty() {
        return Err(DataError::Schema(format!(
            "segment {id}: empty {name} sequence"
        )));
    }
    let width = rows[0].len();
    if width == 0 {
        return Err(DataError::Schema(format!(
            "segment {id}: zero-width {name} features"
        )));
    }
    let kept = &rows[..rows.len().min(max_len)];
    let mut data = Vec::with_capacity(kept.len() * width);
    for (ri, row) in kept.iter().enumerate() {
        if row.len() != width {
            return Err(DataError::Schema(format!(
                "segment {id}: {name} row {ri} has width {} but row 0 has width {width}",
                row.len()
            )));
        }
        data.extend_from_slice(row);
    }
    Tensor::matrix(kept.len(), width, data)
        .map_err(|e| DataError::Schema(format!("segment {id}: {e}")))
}

/// Load a dataset from one-JSON-object-per-line. Sequences longer than the
/// per-modality caps are truncated, widths must be constant across the file.
pub fn load_jsonl(path: &Path) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut segments = Vec::new();
    let mut widths: Option<(usize, usize, usize)> = None;
    let mut ids = HashSet::new();
    let mut max_label = 0usize;
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: ln + 1,
            msg: e.to_string(),
        })?;
        let visual = rows_to_tensor(&rec.visual, MAX_LEN_VISUAL, "visual", &rec.id)?;
        let acoustic = rows_to_tensor(&rec.acoustic, MAX_LEN_ACOUSTIC, "acoustic", &rec.id)?;
        let textual = rows_to_tensor(&rec.textual, MAX_LEN_TEXTUAL, "textual", &rec.id)?;
        let w = (visual.cols(), acoustic.cols(), textual.cols());
        match widths {
            None => widths = Some(w),
            Some(expected) if expected != w => {
                return Err(DataError::Schema(format!(
                    "segment {}: widths {w:?} differ from dataset widths {expected:?}",
                    rec.id
                )))
            }
            _ => {}
        }
        if !ids.insert(rec.id.clone()) {
            return Err(DataError::Schema(format!("duplicate segment id {}", rec.id)));
        }
        max_label = max_label.max(rec.label);
        segments.push(Segment {
            id: rec.id,
            label: rec.label,
            visual,
            acoustic,
            textual,
        });
    }
    let (wv, wa, wt) = widths.unwrap_or((0, 0, 0));
    Ok(Dataset {
        class_count: if segments.is_empty() { 0 } else { max_label + 1 },
        segments,
        width_visual: wv,
        width_acoustic: wa,
        width_textual: wt,
    })
}

fn tensor_to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|i| t.data()[i * t.cols()..(i + 1) * t.cols()].to_vec())
        .collect()
}

pub fn write_jsonl(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for s in &dataset.segments {
        let rec = JsonlRecord {
            id: s.id.clone(),
            label: s.label,
            visual: tensor_to_rows(&s.visual),
            acoustic: tensor_to_rows(&s.acoustic),
            textual: tensor_to_rows(&s.textual),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| DataError::Schema(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Synthetic generator parameters.
#[derive(Debug, Clone, Serialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub width_visual: usize,
    pub width_acoustic: usize,
    pub width_textual: usize,
    pub len_visual: usize,
    pub len_acoustic: usize,
    pub len_textual: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            per_class: 100,
            width_visual: 20,
            width_acoustic: 12,
            width_textual: 16,
            len_visual: 8,
            len_acoustic: 10,
            len_textual: 6,
            separation: 5.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws per-class anchor vectors for each modality from one shared class
/// latent so every modality carries (noisy) class signal, then emits each
/// timestep as anchor + Gaussian noise.
pub fn synth_generate(spec: &SynthSpec) -> Dataset {
    assert!(spec.separation >= 0.0 && spec.classes >= 1 && spec.per_class >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let latent_dim = 8;
    let widths = [spec.width_visual, spec.width_acoustic, spec.width_textual];
    let lens = [spec.len_visual, spec.len_acoustic, spec.len_textual];

    // Fixed random projections latent -> modality space, one per modality.
    let projections: Vec<Vec<f64>> = widths
        .iter()
        .map(|&w| normal_vec(&mut rng, w * latent_dim))
        .collect();
    let latents: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| normal_vec(&mut rng, latent_dim))
        .collect();

    let mut anchors: Vec<Vec<Vec<f64>>> = Vec::with_capacity(spec.classes); // [class][modality][dim]
    for z in &latents {
        let mut per_mod = Vec::with_capacity(3);
        for (mi, &w) in widths.iter().enumerate() {
            let proj = &projections[mi];
            let mut v: Vec<f64> = (0..w)
                .map(|r| (0..latent_dim).map(|k| proj[r * latent_dim + k] * z[k]).sum())
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for x in &mut v {
                *x *= spec.separation / norm;
            }
            per_mod.push(v);
        }
        anchors.push(per_mod);
    }

    let mut segments = Vec::with_capacity(spec.classes * spec.per_class);
    for c in 0..spec.classes {
        for s in 0..spec.per_class {
            let mut mods = Vec::with_capacity(3);
            for mi in 0..3 {
                let w = widths[mi];
                let max_len = lens[mi].max(1);
                let len = rng.gen_range(max_len.div_ceil(2)..=max_len);
                let anchor = &anchors[c][mi];
                let mut data = Vec::with_capacity(len * w);
                for _ in 0..len {
                    for &a in anchor.iter() {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        data.push(a + spec.noise * n);
                    }
                }
                mods.push(Tensor::matrix(len, w, data).expect("consistent synth shapes"));
            }
            let textual = mods.pop().unwrap();
            let acoustic = mods.pop().unwrap();
            let visual = mods.pop().unwrap();
            segments.push(Segment {
                id: format!("c{c}-s{s}"),
                label: c,
                visual,
                acoustic,
                textual,
            });
        }
    }
    Dataset {
        segments,
        class_count: spec.classes,
        width_visual: spec.width_visual,
        width_acoustic: spec.width_acoustic,
        width_textual: spec.width_textual,
    }
}
