//! In-season analysis: how early a model commits to a class, and rule-based
//! winter cover detection from NDVI series.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::classifier::{
    attention_nodes, dense_nodes, register_model, step_constants, ModelBundle, Pooling,
};
use crate::data::{Dataset, WindowedSequence};
use crate::error::CoreError;
use crate::fmath;
use crate::tape::Tape;

/// Class probabilities after each prefix of the sequence: row `t` is the
/// model's belief given steps `0..=t` only.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceCurve {
    per_step: Vec<Vec<f64>>,
}

impl ConfidenceCurve {
    /// Assemble a curve from per-step probability rows.
    pub fn from_rows(per_step: Vec<Vec<f64>>) -> Result<Self, CoreError> {
        if per_step.is_empty() || per_step[0].is_empty() {
            return Err(CoreError::invalid("confidence curve must be non-empty"));
        }
        let classes = per_step[0].len();
        for (t, row) in per_step.iter().enumerate() {
            if row.len() != classes {
                return Err(CoreError::shape(format!(
                    "row {t} has {} entries, expected {classes}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(CoreError::domain(format!(
                    "row {t} holds a probability outside [0, 1]"
                )));
            }
        }
        Ok(ConfidenceCurve { per_step })
    }

    pub fn steps(&self) -> usize {
        self.per_step.len()
    }

    pub fn classes(&self) -> usize {
        self.per_step[0].len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.per_step[t]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.per_step
    }

    pub fn final_row(&self) -> &[f64] {
        self.per_step.last().expect("nonempty curve")
    }
}

/// Run the model on every prefix of `seq`.
///
/// The encoder runs once; for attention pooling each prefix re-normalizes the
/// attention scores over the steps seen so far. The full-length prefix goes
/// through the identical op sequence as [`ModelBundle::forward`], so the last
/// row equals the full-sequence prediction bit for bit.
pub fn confidence_progression(
    model: &ModelBundle,
    seq: &WindowedSequence,
) -> Result<ConfidenceCurve, CoreError> {
    model.validate()?;
    if seq.dim() != model.input_dim() {
        return Err(CoreError::shape(format!(
            "sequence dim {} vs model input dim {}",
            seq.dim(),
            model.input_dim()
        )));
    }
    let mut tape = Tape::new();
    let nodes = register_model(&mut tape, model, false);
    let xs = step_constants(&mut tape, seq)?;
    let hiddens = crate::classifier::encode_nodes(&mut tape, &nodes.lstm, &xs)?;
    let mut per_step = Vec::with_capacity(hiddens.len());
    for t in 0..hiddens.len() {
        let context = match (&nodes.att, model.pooling()) {
            (Some(att), Pooling::Attention) => {
                let (_, ctx) = attention_nodes(&mut tape, att, &hiddens[..=t])?;
                ctx
            }
            _ => hiddens[t],
        };
        let logits = dense_nodes(&mut tape, &nodes.head, context)?;
        let probs = tape.softmax(logits)?;
        per_step.push(tape.value(probs).data().to_vec());
    }
    Ok(ConfidenceCurve { per_step })
}

/// First step index (0-based) at which the confidence for `class` stays at or
/// above `threshold` for `patience` consecutive steps. `None` if that never
/// happens.
pub fn earliest_detection(
    curve: &ConfidenceCurve,
    class: usize,
    threshold: f64,
    patience: usize,
) -> Result<Option<usize>, CoreError> {
    if class >= curve.classes() {
        return Err(CoreError::index(format!(
            "class {class} for {} classes",
            curve.classes()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CoreError::domain(format!(
            "threshold {threshold} must be in (0, 1)"
        )));
    }
    if patience == 0 {
        return Err(CoreError::invalid("patience must be at least 1"));
    }
    let mut run = 0usize;
    for (t, row) in curve.rows().iter().enumerate() {
        if row[class] >= threshold {
            run += 1;
            if run >= patience {
                return Ok(Some(t + 1 - patience));
            }
        } else {
            run = 0;
        }
    }
    Ok(None)
}

/// Mean and population standard deviation of the true-class confidence at
/// each step, over every pixel of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortCurve {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

pub fn cohort_confidence(
    model: &ModelBundle,
    data: &Dataset,
    class: usize,
) -> Result<CohortCurve, CoreError> {
    if class >= data.class_count() {
        return Err(CoreError::index(format!(
            "class {class} for {} classes",
            data.class_count()
        )));
    }
    let members: Vec<&WindowedSequence> = data
        .pixels
        .iter()
        .filter(|p| p.label == class)
        .map(|p| &p.sequence)
        .collect();
    if members.is_empty() {
        return Err(CoreError::invalid(format!(
            "no pixels of class {}",
            data.class_names[class]
        )));
    }
    let t = members[0].steps();
    let mut sum = vec![0.0; t];
    let mut sumsq = vec![0.0; t];
    for seq in &members {
        let curve = confidence_progression(model, seq)?;
        for (i, row) in curve.rows().iter().enumerate() {
            sum[i] += row[class];
            sumsq[i] += row[class] * row[class];
        }
    }
    let n = members.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std: Vec<f64> = sumsq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| fmath::sqrt((sq / n - m * m).max(0.0)))
        .collect();
    Ok(CohortCurve {
        mean,
        std,
        count: members.len(),
    })
}

// ---- cover crop detection ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverCropStatus {
    /// Primary crop only; the field goes bare after harvest.
    PrimaryOnly,
    /// A primary crop followed by a green winter cover.
    CoverCropped,
    /// Green the whole season (perennial forage and similar).
    Evergreen,
}

impl CoverCropStatus {
    pub fn name(&self) -> &'static str {
        match self {
            CoverCropStatus::PrimaryOnly => "primary_only",
            CoverCropStatus::CoverCropped => "cover_cropped",
            CoverCropStatus::Evergreen => "evergreen",
        }
    }
}

/// Thresholds for the post-harvest greenness rule. Composite indices, both
/// ends of `growing_season` inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverCropRule {
    /// First composite considered post-harvest.
    pub harvest_step: usize,
    /// Number of composites inspected after `harvest_step`.
    pub post_window: usize,
    /// Mean post-harvest NDVI at or above this means green cover.
    pub green_threshold: f64,
    /// Minimum NDVI a field must hold to count as evergreen, and the peak a
    /// growing season must reach to prove a primary crop grew.
    pub evergreen_min: f64,
    pub growing_season: (usize, usize),
    /// Additionally require a real NDVI dip between season end and harvest,
    /// ruling out fields that simply stayed green throughout.
    pub require_dip: bool,
}

impl Default for CoverCropRule {
    fn default() -> Self {
        CoverCropRule {
            harvest_step: 37,
            post_window: 5,
            green_threshold: 0.35,
            evergreen_min: 0.55,
            growing_season: (18, 32),
            require_dip: false,
        }
    }
}

impl CoverCropRule {
    pub fn validate(&self, series_len: usize) -> Result<(), CoreError> {
        if self.post_window == 0 {
            return Err(CoreError::invalid("post window must be at least 1"));
        }
        if self.harvest_step + self.post_window > series_len {
            return Err(CoreError::invalid(format!(
                "post-harvest window [{}, {}) exceeds series length {series_len}",
                self.harvest_step,
                self.harvest_step + self.post_window
            )));
        }
        let (s, e) = self.growing_season;
        if s > e || e >= series_len {
            return Err(CoreError::invalid(format!(
                "growing season [{s}, {e}] invalid for series length {series_len}"
            )));
        }
        if self.require_dip && e + 1 >= self.harvest_step {
            return Err(CoreError::invalid(
                "dip check needs a gap between season end and harvest",
            ));
        }
        for (name, v) in [
            ("green_threshold", self.green_threshold),
            ("evergreen_min", self.evergreen_min),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CoreError::domain(format!("{name} {v} must be in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Classify one pixel's per-composite NDVI series.
pub fn detect_cover_crop(
    ndvi: &[f64],
    rule: &CoverCropRule,
) -> Result<CoverCropStatus, CoreError> {
    rule.validate(ndvi.len())?;
    if ndvi.iter().any(|v| !v.is_finite() || !(-1.0..=1.0).contains(v)) {
        return Err(CoreError::domain("ndvi values must be finite and in [-1, 1]"));
    }
    let (s, e) = rule.growing_season;
    let season = &ndvi[s..=e];
    let post = &ndvi[rule.harvest_step..rule.harvest_step + rule.post_window];
    let min_of = |xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max_of = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sustained_min = min_of(season).min(min_of(post));
    if sustained_min >= rule.evergreen_min {
        return Ok(CoverCropStatus::Evergreen);
    }
    let post_mean: f64 = post.iter().sum::<f64>() / post.len() as f64;
    let crop_grew = max_of(season) >= rule.evergreen_min;
    let dip_ok = if rule.require_dip {
        min_of(&ndvi[e + 1..rule.harvest_step]) < rule.green_threshold
    } else {
        true
    };
    if crop_grew && post_mean >= rule.green_threshold && dip_ok {
        Ok(CoverCropStatus::CoverCropped)
    } else {
        Ok(CoverCropStatus::PrimaryOnly)
    }
}

/// Area accounting for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverRow {
    pub class_name: alloc::string::String,
    pub total_area: f64,
    pub cover_area: f64,
    pub evergreen_area: f64,
    /// `100 * cover_area / total_area`, zero for empty classes.
    pub cover_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverCropTable {
    pub rows: Vec<CoverRow>,
    pub total: CoverRow,
}

/// Aggregate per-pixel detections into per-class areas and percentages.
pub fn cover_crop_table(
    class_names: &[alloc::string::String],
    labels: &[usize],
    statuses: &[CoverCropStatus],
    areas: &[f64],
) -> Result<CoverCropTable, CoreError> {
    if labels.is_empty() {
        return Err(CoreError::invalid("no pixels to tabulate"));
    }
    if labels.len() != statuses.len() || labels.len() != areas.len() {
        return Err(CoreError::invalid(format!(
            "{} labels vs {} statuses vs {} areas",
            labels.len(),
            statuses.len(),
            areas.len()
        )));
    }
    if class_names.is_empty() {
        return Err(CoreError::invalid("no class names"));
    }
    if areas.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(CoreError::domain("areas must be finite and non-negative"));
    }
    let mut rows: Vec<CoverRow> = class_names
        .iter()
        .map(|n| CoverRow {
            class_name: n.clone(),
            total_area: 0.0,
            cover_area: 0.0,
            evergreen_area: 0.0,
            cover_percent: 0.0,
        })
        .collect();
    for ((&label, &status), &area) in labels.iter().zip(statuses).zip(areas) {
        let row = rows.get_mut(label).ok_or_else(|| {
            CoreError::index(format!(
                "label {label} for {} classes",
                class_names.len()
            ))
        })?;
        row.total_area += area;
        match status {
            CoverCropStatus::CoverCropped => row.cover_area += area,
            CoverCropStatus::Evergreen => row.evergreen_area += area,
            CoverCropStatus::PrimaryOnly => {}
        }
    }
    let mut total = CoverRow {
        class_name: alloc::string::String::from("total"),
        total_area: 0.0,
        cover_area: 0.0,
        evergreen_area: 0.0,
        cover_percent: 0.0,
    };
    for row in rows.iter_mut() {
        if row.total_area > 0.0 {
            row.cover_percent = 100.0 * row.cover_area / row.total_area;
        }
        total.total_area += row.total_area;
        total.cover_area += row.cover_area;
        total.evergreen_area += row.evergreen_area;
    }
    if total.total_area > 0.0 {
        total.cover_percent = 100.0 * total.cover_area / total.total_area;
    }
    Ok(CoverCropTable { rows, total })
}
