//! Sequence containers, sliding-window feature extraction, and dataset splits.
//!
//! A pixel starts life as a raw composite series (`t_raw` composites of `b`
//! bands each). Windowing concatenates `window_composites` consecutive
//! composites per step, sliding by `stride_composites`, which gives the
//! recurrent models a short local context at every step.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::digest::Fnv1a;
use crate::error::CoreError;
use crate::rng::{derive_seed, SplitMix64};

const SPLIT_SALT: u64 = 0x53504c49;

/// Raw composite series for one pixel, row-major `[t_raw, bands]`,
/// reflectance values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSequence {
    t_raw: usize,
    bands: usize,
    composite_period_days: u32,
    values: Vec<f64>,
}

impl SpectralSequence {
    pub fn new(
        t_raw: usize,
        bands: usize,
        composite_period_days: u32,
        values: Vec<f64>,
    ) -> Result<Self, CoreError> {
        if t_raw == 0 || bands == 0 {
            return Err(CoreError::invalid("sequence dimensions must be positive"));
        }
        if composite_period_days == 0 {
            return Err(CoreError::invalid("composite period must be positive"));
        }
        if values.len() != t_raw * bands {
            return Err(CoreError::shape(format!(
                "expected {} values for {t_raw}x{bands}, got {}",
                t_raw * bands,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::domain(format!(
                "reflectance {bad} outside [0, 1]"
            )));
        }
        Ok(SpectralSequence {
            t_raw,
            bands,
            composite_period_days,
            values,
        })
    }

    pub fn t_raw(&self) -> usize {
        self.t_raw
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn composite_period_days(&self) -> u32 {
        self.composite_period_days
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn composite(&self, i: usize) -> &[f64] {
        &self.values[i * self.bands..(i + 1) * self.bands]
    }

    /// Day of year at the center of composite `i`.
    pub fn composite_day(&self, i: usize) -> f64 {
        let p = self.composite_period_days as f64;
        p * i as f64 + p / 2.0
    }
}

/// Windowed feature sequence: `t` steps of dimension `d` where
/// `d = window_composites * bands`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSequence {
    t: usize,
    d: usize,
    window_composites: usize,
    stride_composites: usize,
    values: Vec<f64>,
}

impl WindowedSequence {
    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn window_composites(&self) -> usize {
        self.window_composites
    }

    pub fn stride_composites(&self) -> usize {
        self.stride_composites
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.values[t * self.d..(t + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    /// Same layout, different values. Length must match exactly.
    pub fn with_values(&self, values: Vec<f64>) -> Result<WindowedSequence, CoreError> {
        if values.len() != self.values.len() {
            return Err(CoreError::shape(format!(
                "expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(WindowedSequence {
            values,
            ..self.clone()
        })
    }

    /// Copy of steps `lo..=hi` as a standalone sequence.
    pub fn slice_steps(&self, lo: usize, hi: usize) -> Result<WindowedSequence, CoreError> {
        if lo > hi || hi >= self.t {
            return Err(CoreError::index(format!(
                "step range [{lo}, {hi}] outside 0..{}",
                self.t
            )));
        }
        Ok(WindowedSequence {
            t: hi - lo + 1,
            d: self.d,
            window_composites: self.window_composites,
            stride_composites: self.stride_composites,
            values: self.values[lo * self.d..(hi + 1) * self.d].to_vec(),
        })
    }
}

/// Slide a window over the composite axis and concatenate each window
/// composite-major. `t = (t_raw - window) / stride + 1`.
pub fn window_sequence(
    raw: &SpectralSequence,
    window_composites: usize,
    stride_composites: usize,
) -> Result<WindowedSequence, CoreError> {
    if window_composites == 0 || stride_composites == 0 {
        return Err(CoreError::invalid("window and stride must be positive"));
    }
    if window_composites > raw.t_raw {
        return Err(CoreError::invalid(format!(
            "window of {window_composites} composites exceeds series length {}",
            raw.t_raw
        )));
    }
    let t = (raw.t_raw - window_composites) / stride_composites + 1;
    let d = window_composites * raw.bands;
    let mut values = Vec::with_capacity(t * d);
    for step in 0..t {
        let start = step * stride_composites;
        for c in start..start + window_composites {
            values.extend_from_slice(raw.composite(c));
        }
    }
    Ok(WindowedSequence {
        t,
        d,
        window_composites,
        stride_composites,
        values,
    })
}

/// A labeled raw pixel. `scenario_tag` is generation metadata and is not part
/// of the persisted content (or of digests).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPixel {
    pub pixel_id: String,
    pub class_label: usize,
    pub sequence: SpectralSequence,
    pub scenario_tag: String,
}

/// Raw pixels plus the ordered class name table their labels index into.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub pixels: Vec<LabeledPixel>,
    pub class_names: Vec<String>,
}

impl RawDataset {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.pixels.is_empty() {
            return Err(CoreError::invalid("dataset has no pixels"));
        }
        if self.class_names.is_empty() {
            return Err(CoreError::invalid("dataset has no classes"));
        }
        let first = &self.pixels[0].sequence;
        for p in &self.pixels {
            if p.class_label >= self.class_names.len() {
                return Err(CoreError::index(format!(
                    "pixel {} labeled {} with only {} classes",
                    p.pixel_id,
                    p.class_label,
                    self.class_names.len()
                )));
            }
            if p.sequence.t_raw != first.t_raw {
                return Err(CoreError::invalid(format!(
                    "mixed series lengths: pixel {} has {} composites, pixel {} has {}",
                    self.pixels[0].pixel_id, first.t_raw, p.pixel_id, p.sequence.t_raw
                )));
            }
            if p.sequence.bands != first.bands {
                return Err(CoreError::invalid(format!(
                    "mixed band counts: pixel {} has {}, pixel {} has {}",
                    self.pixels[0].pixel_id, first.bands, p.pixel_id, p.sequence.bands
                )));
            }
        }
        Ok(())
    }

    /// Content digest over ids, class names, labels, and reflectance bits.
    /// Excludes `scenario_tag` and the composite period, neither of which is
    /// carried by the on-disk format.
    pub fn digest(&self) -> String {
        let mut h = Fnv1a::new();
        h.update_str("raw-dataset-v1");
        h.update_u64(self.class_names.len() as u64);
        for name in &self.class_names {
            h.update_str(name);
        }
        h.update_u64(self.pixels.len() as u64);
        for p in &self.pixels {
            h.update_str(&p.pixel_id);
            h.update_u64(p.class_label as u64);
            h.update_u64(p.sequence.t_raw as u64);
            h.update_u64(p.sequence.bands as u64);
            for &v in &p.sequence.values {
                h.update_f64(v);
            }
        }
        h.finish_hex()
    }
}

/// A windowed pixel ready for the models.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPixel {
    pub pixel_id: String,
    pub label: usize,
    pub sequence: WindowedSequence,
}

/// Windowed dataset with uniform layout across pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pixels: Vec<DatasetPixel>,
    pub class_names: Vec<String>,
    /// Digest of the raw dataset this was derived from.
    pub provenance: String,
}

impl Dataset {
    pub fn from_raw(
        raw: &RawDataset,
        window_composites: usize,
        stride_composites: usize,
    ) -> Result<Self, CoreError> {
        raw.validate()?;
        let provenance = raw.digest();
        let mut pixels = Vec::with_capacity(raw.pixels.len());
        for p in &raw.pixels {
            pixels.push(DatasetPixel {
                pixel_id: p.pixel_id.clone(),
                label: p.class_label,
                sequence: window_sequence(&p.sequence, window_composites, stride_composites)?,
            });
        }
        Dataset::from_pixels(pixels, raw.class_names.clone(), provenance)
    }

    pub fn from_pixels(
        pixels: Vec<DatasetPixel>,
        class_names: Vec<String>,
        provenance: String,
    ) -> Result<Self, CoreError> {
        if pixels.is_empty() {
            return Err(CoreError::invalid("dataset has no pixels"));
        }
        let (t, d) = (pixels[0].sequence.steps(), pixels[0].sequence.dim());
        for p in &pixels {
            if p.sequence.steps() != t || p.sequence.dim() != d {
                return Err(CoreError::invalid(format!(
                    "mixed layouts: pixel {} is {}x{}, expected {t}x{d}",
                    p.pixel_id,
                    p.sequence.steps(),
                    p.sequence.dim()
                )));
            }
            if p.label >= class_names.len() {
                return Err(CoreError::index(format!(
                    "pixel {} labeled {} with only {} classes",
                    p.pixel_id,
                    p.label,
                    class_names.len()
                )));
            }
        }
        Ok(Dataset {
            pixels,
            class_names,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// `(steps, dim)` shared by every pixel.
    pub fn layout(&self) -> (usize, usize) {
        (
            self.pixels[0].sequence.steps(),
            self.pixels[0].sequence.dim(),
        )
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Number of pixels carrying each label.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = alloc::vec![0usize; self.class_names.len()];
        for p in &self.pixels {
            hist[p.label] += 1;
        }
        hist
    }

    pub fn digest(&self) -> String {
        let mut h = Fnv1a::new();
        h.update_str("windowed-dataset-v1");
        h.update_u64(self.class_names.len() as u64);
        for name in &self.class_names {
            h.update_str(name);
        }
        h.update_u64(self.pixels.len() as u64);
        for p in &self.pixels {
            h.update_str(&p.pixel_id);
            h.update_u64(p.label as u64);
            h.update_u64(p.sequence.steps() as u64);
            h.update_u64(p.sequence.dim() as u64);
            for &v in p.sequence.values() {
                h.update_f64(v);
            }
        }
        h.finish_hex()
    }

    /// Stratified split into `(train, test)` by the given positive fractions
    /// (sum at most 1; the remainder is dropped). Within each class the
    /// subset sizes deviate from the exact fractions by at most one pixel.
    pub fn split(
        &self,
        fractions: (f64, f64),
        seed: u64,
    ) -> Result<(Dataset, Dataset), CoreError> {
        let (f_train, f_test) = fractions;
        if !(f_train > 0.0) || !(f_test > 0.0) {
            return Err(CoreError::invalid("split fractions must be positive"));
        }
        if f_train + f_test > 1.0 + 1e-9 {
            return Err(CoreError::invalid(format!(
                "split fractions sum to {}, must be at most 1",
                f_train + f_test
            )));
        }
        let hist = self.label_histogram();
        for (label, &n) in hist.iter().enumerate() {
            if n > 0 && n < 2 {
                return Err(CoreError::invalid(format!(
                    "class {} has {n} pixel(s), need at least 2 to split",
                    self.class_names[label]
                )));
            }
        }
        let mut train_idx: Vec<usize> = Vec::new();
        let mut test_idx: Vec<usize> = Vec::new();
        for label in 0..self.class_names.len() {
            let mut members: Vec<usize> = (0..self.pixels.len())
                .filter(|&i| self.pixels[i].label == label)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut rng = SplitMix64::new(derive_seed(seed, SPLIT_SALT + label as u64));
            rng.shuffle(&mut members);
            let n = members.len();
            let n_train = (crate::fmath::round(f_train * n as f64) as usize).clamp(1, n - 1);
            let n_test = (crate::fmath::round(f_test * n as f64) as usize).clamp(1, n - n_train);
            train_idx.extend_from_slice(&members[..n_train]);
            test_idx.extend_from_slice(&members[n_train..n_train + n_test]);
        }
        // Keep the parent's pixel order inside each subset.
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        let take = |idx: &[usize]| -> Result<Dataset, CoreError> {
            Dataset::from_pixels(
                idx.iter().map(|&i| self.pixels[i].clone()).collect(),
                self.class_names.clone(),
                self.provenance.clone(),
            )
        };
        Ok((take(&train_idx)?, take(&test_idx)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn seq(t: usize, b: usize, fill: impl Fn(usize, usize) -> f64) -> SpectralSequence {
        let mut v = Vec::with_capacity(t * b);
        for i in 0..t {
            for j in 0..b {
                v.push(fill(i, j));
            }
        }
        SpectralSequence::new(t, b, 8, v).unwrap()
    }

    #[test]
    fn window_counts() {
        let raw = seq(46, 7, |i, j| ((i * 7 + j) % 97) as f64 / 100.0);
        let w = window_sequence(&raw, 4, 1).unwrap();
        assert_eq!(w.steps(), 43);
        assert_eq!(w.dim(), 28);
        // step t starts with composite t and ends with composite t+3
        assert_eq!(w.step(0)[..7], *raw.composite(0));
        assert_eq!(w.step(42)[21..28], *raw.composite(45));
    }

    #[test]
    fn window_equal_to_length_gives_one_step() {
        let raw = seq(6, 2, |i, j| (i + j) as f64 / 10.0);
        let w = window_sequence(&raw, 6, 1).unwrap();
        assert_eq!(w.steps(), 1);
        assert_eq!(w.dim(), 12);
        assert_eq!(w.step(0), raw.values());
    }

    #[test]
    fn window_larger_than_series_rejected() {
        let raw = seq(4, 2, |_, _| 0.1);
        assert!(matches!(
            window_sequence(&raw, 5, 1),
            Err(CoreError::Invalid(_))
        ));
        assert!(matches!(
            window_sequence(&raw, 0, 1),
            Err(CoreError::Invalid(_))
        ));
    }

    #[test]
    fn stride_two() {
        let raw = seq(10, 1, |i, _| i as f64 / 10.0);
        let w = window_sequence(&raw, 4, 2).unwrap();
        assert_eq!(w.steps(), 4);
        assert_eq!(w.step(1), &[0.2, 0.3, 0.4, 0.5]);
    }

    #[test]
    fn reflectance_bounds_enforced() {
        assert!(matches!(
            SpectralSequence::new(1, 2, 8, vec![0.5, 1.2]),
            Err(CoreError::Domain(_))
        ));
        assert!(matches!(
            SpectralSequence::new(1, 2, 8, vec![-0.1, 0.2]),
            Err(CoreError::Domain(_))
        ));
    }

    fn tiny_dataset(per_class: &[usize]) -> Dataset {
        let mut pixels = Vec::new();
        let mut id = 0;
        for (label, &count) in per_class.iter().enumerate() {
            for _ in 0..count {
                let raw = seq(10, 2, |i, j| ((i + j + id) % 10) as f64 / 10.0);
                pixels.push(DatasetPixel {
                    pixel_id: format!("p{id:03}"),
                    label,
                    sequence: window_sequence(&raw, 4, 1).unwrap(),
                });
                id += 1;
            }
        }
        let names = (0..per_class.len())
            .map(|i| format!("class{i}"))
            .collect();
        Dataset::from_pixels(pixels, names, "test".to_string()).unwrap()
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let ds = tiny_dataset(&[40, 60]);
        let (train, test) = ds.split((0.5, 0.5), 7).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(test.len(), 50);
        assert_eq!(train.label_histogram(), vec![20, 30]);
        assert_eq!(test.label_histogram(), vec![20, 30]);
        let mut seen: Vec<&str> = train
            .pixels
            .iter()
            .chain(test.pixels.iter())
            .map(|p| p.pixel_id.as_str())
            .collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 100, "no pixel may appear in both subsets");
    }

    #[test]
    fn split_deterministic_and_seed_sensitive() {
        let ds = tiny_dataset(&[20, 20]);
        let (a1, _) = ds.split((0.5, 0.5), 1).unwrap();
        let (a2, _) = ds.split((0.5, 0.5), 1).unwrap();
        assert_eq!(a1.digest(), a2.digest());
        let (b1, _) = ds.split((0.5, 0.5), 2).unwrap();
        assert_ne!(a1.digest(), b1.digest());
    }

    #[test]
    fn split_fraction_validation() {
        let ds = tiny_dataset(&[10, 10]);
        assert!(ds.split((0.0, 0.5), 1).is_err());
        assert!(ds.split((0.7, 0.5), 1).is_err());
        assert!(ds.split((0.3, 0.3), 1).is_ok());
    }

    #[test]
    fn split_rejects_singleton_class() {
        let ds = tiny_dataset(&[1, 10]);
        assert!(matches!(
            ds.split((0.5, 0.5), 1),
            Err(CoreError::Invalid(_))
        ));
    }

    #[test]
    fn digest_tracks_content() {
        let ds = tiny_dataset(&[5, 5]);
        let mut other = ds.clone();
        assert_eq!(ds.digest(), other.digest());
        other.pixels[0].label = 1;
        assert_ne!(ds.digest(), other.digest());
    }

    #[test]
    fn slice_steps_bounds() {
        let raw = seq(12, 2, |i, j| (i * 2 + j) as f64 / 30.0);
        let w = window_sequence(&raw, 4, 1).unwrap();
        let s = w.slice_steps(2, 5).unwrap();
        assert_eq!(s.steps(), 4);
        assert_eq!(s.step(0), w.step(2));
        assert!(w.slice_steps(5, 2).is_err());
        assert!(w.slice_steps(0, 99).is_err());
    }
}
