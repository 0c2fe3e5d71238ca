//! Synthetic crop phenology: double-logistic NDVI curves expanded into
//! multi-band composite series with noise, cloud corruption, and per-pixel
//! parameter jitter.
//!
//! Band 0 acts as the near-infrared proxy and band 1 as the red proxy; they
//! are constructed so that the NDVI computed from them reproduces the curve
//! value exactly when the noise level is zero. Higher bands are affine
//! functions of NDVI and only add redundancy.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{LabeledPixel, RawDataset, SpectralSequence};
use crate::error::CoreError;
use crate::fmath;
use crate::rng::{derive_seed, SplitMix64};

pub const BAND_NIR: usize = 0;
pub const BAND_RED: usize = 1;

const PIXEL_SALT: u64 = 0x5049_5845_0000_0000;
const SHUFFLE_SALT: u64 = 0x5348_5546;

/// Day-of-year lag between primary senescence and cover crop emergence.
const COVER_LAG_DAYS: f64 = 25.0;
const COVER_RATE: f64 = 0.15;
const COVER_PEAK: f64 = 0.55;

/// Crop classes the generator knows about, in canonical label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CropClass {
    Corn,
    Soybean,
    Sugarbeet,
    Alfalfa,
    CornCover,
    SoybeanCover,
}

impl CropClass {
    pub const ALL: [CropClass; 6] = [
        CropClass::Corn,
        CropClass::Soybean,
        CropClass::Sugarbeet,
        CropClass::Alfalfa,
        CropClass::CornCover,
        CropClass::SoybeanCover,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CropClass::Corn => "corn",
            CropClass::Soybean => "soybean",
            CropClass::Sugarbeet => "sugarbeet",
            CropClass::Alfalfa => "alfalfa",
            CropClass::CornCover => "corn_cover",
            CropClass::SoybeanCover => "soybean_cover",
        }
    }

    pub fn parse(s: &str) -> Option<CropClass> {
        CropClass::ALL.iter().copied().find(|c| c.name() == s)
    }

    /// Whether a winter cover crop follows the primary crop.
    pub fn has_cover(&self) -> bool {
        matches!(self, CropClass::CornCover | CropClass::SoybeanCover)
    }
}

/// Parameters of one pixel's seasonal NDVI curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CropProfile {
    pub class: CropClass,
    pub baseline_ndvi: f64,
    pub peak_ndvi: f64,
    pub greenup_day: f64,
    pub greenup_rate: f64,
    pub senescence_day: f64,
    pub senescence_rate: f64,
    /// Evergreen curves skip the senescence term entirely.
    pub evergreen: bool,
    /// Adds a second green-up after the primary senescence.
    pub post_harvest_green: bool,
}

impl CropProfile {
    /// Nominal curve for a class. Corn and soybean share peak height and
    /// senescence timing and differ only in green-up, so their separating
    /// evidence is confined to mid-season. Sugarbeet tracks soybean exactly
    /// until senescence and stays green weeks longer, so those two separate
    /// only late in the season.
    pub fn template(class: CropClass) -> CropProfile {
        let base = |class, greenup, rate_up, peak, senescence, rate_down| CropProfile {
            class,
            baseline_ndvi: 0.15,
            peak_ndvi: peak,
            greenup_day: greenup,
            greenup_rate: rate_up,
            senescence_day: senescence,
            senescence_rate: rate_down,
            evergreen: false,
            post_harvest_green: false,
        };
        match class {
            CropClass::Corn => base(class, 138.0, 0.12, 0.82, 262.0, 0.10),
            CropClass::Soybean => base(class, 162.0, 0.06, 0.82, 262.0, 0.10),
            CropClass::Sugarbeet => base(class, 162.0, 0.06, 0.82, 312.0, 0.08),
            CropClass::Alfalfa => CropProfile {
                class,
                baseline_ndvi: 0.30,
                peak_ndvi: 0.75,
                greenup_day: 100.0,
                greenup_rate: 0.06,
                senescence_day: 330.0,
                senescence_rate: 0.05,
                evergreen: true,
                post_harvest_green: false,
            },
            CropClass::CornCover => CropProfile {
                post_harvest_green: true,
                ..CropProfile::template(CropClass::Corn)
            },
            CropClass::SoybeanCover => CropProfile {
                post_harvest_green: true,
                ..CropProfile::template(CropClass::Soybean)
            },
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if !(0.0..=1.0).contains(&self.baseline_ndvi)
            || !(0.0..=1.0).contains(&self.peak_ndvi)
            || self.peak_ndvi <= self.baseline_ndvi
        {
            return Err(CoreError::invalid(format!(
                "need 0 <= baseline < peak <= 1, got {} and {}",
                self.baseline_ndvi, self.peak_ndvi
            )));
        }
        if !(self.greenup_rate > 0.0) || !(self.senescence_rate > 0.0) {
            return Err(CoreError::invalid("logistic rates must be positive"));
        }
        if !self.evergreen && self.senescence_day <= self.greenup_day {
            return Err(CoreError::invalid(format!(
                "senescence day {} must follow green-up day {}",
                self.senescence_day, self.greenup_day
            )));
        }
        Ok(())
    }

    fn shifted(&self, days: f64) -> CropProfile {
        CropProfile {
            greenup_day: self.greenup_day + days,
            senescence_day: self.senescence_day + days,
            ..self.clone()
        }
    }
}

/// Double-logistic NDVI at a day of year, clamped to `[0, 1]`.
pub fn double_logistic_ndvi(day: f64, profile: &CropProfile) -> Result<f64, CoreError> {
    if !day.is_finite() {
        return Err(CoreError::domain("day must be finite"));
    }
    profile.validate()?;
    let up = fmath::sigmoid(profile.greenup_rate * (day - profile.greenup_day));
    let down = if profile.evergreen {
        0.0
    } else {
        fmath::sigmoid(profile.senescence_rate * (day - profile.senescence_day))
    };
    let v = profile.baseline_ndvi + (profile.peak_ndvi - profile.baseline_ndvi) * (up - down);
    Ok(v.clamp(0.0, 1.0))
}

/// Seasonal curve including the optional post-harvest cover green-up.
pub fn seasonal_ndvi(day: f64, profile: &CropProfile) -> Result<f64, CoreError> {
    let primary = double_logistic_ndvi(day, profile)?;
    if !profile.post_harvest_green {
        return Ok(primary);
    }
    let emergence = profile.senescence_day + COVER_LAG_DAYS;
    let cover = COVER_PEAK * fmath::sigmoid(COVER_RATE * (day - emergence));
    Ok(primary.max(cover).clamp(0.0, 1.0))
}

/// Generation settings for one scenario (domain).
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonScenario {
    /// Applied to green-up and senescence days of every pixel.
    pub planting_shift_days: i32,
    /// Per-band additive gaussian noise, in reflectance units.
    pub noise_sigma: f64,
    /// Probability that a composite is replaced by a cloud sample.
    pub cloud_drop_prob: f64,
    pub composites_per_year: usize,
    pub composite_period_days: u32,
    pub bands: usize,
}

impl Default for SeasonScenario {
    fn default() -> Self {
        SeasonScenario {
            planting_shift_days: 0,
            noise_sigma: 0.03,
            cloud_drop_prob: 0.10,
            composites_per_year: 46,
            composite_period_days: 8,
            bands: 7,
        }
    }
}

impl SeasonScenario {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.planting_shift_days.abs() > 60 {
            return Err(CoreError::invalid(format!(
                "planting shift {} days is outside [-60, 60]",
                self.planting_shift_days
            )));
        }
        if !(0.0..=0.5).contains(&self.noise_sigma) {
            return Err(CoreError::invalid("noise sigma must be in [0, 0.5]"));
        }
        if !(0.0..1.0).contains(&self.cloud_drop_prob) {
            return Err(CoreError::invalid("cloud probability must be in [0, 1)"));
        }
        if self.composites_per_year < 2 {
            return Err(CoreError::invalid("need at least 2 composites per year"));
        }
        if self.composite_period_days == 0 {
            return Err(CoreError::invalid("composite period must be positive"));
        }
        if self.bands < 2 {
            return Err(CoreError::invalid(
                "need at least 2 bands for the NIR/red pair",
            ));
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        format!("shift{:+}", self.planting_shift_days)
    }

    pub fn composite_day(&self, i: usize) -> f64 {
        let p = self.composite_period_days as f64;
        p * i as f64 + p / 2.0
    }
}

/// Affine NDVI responses of the redundant bands (base, span).
const EXTRA_BANDS: [(f64, f64); 5] = [
    (0.05, 0.25),
    (0.08, 0.15),
    (0.30, 0.35),
    (0.35, -0.20),
    (0.28, -0.15),
];

/// Expand an NDVI value into `bands` reflectances plus gaussian noise.
/// Bands 0 and 1 are chosen so their normalized difference equals `ndvi`
/// exactly when `sigma == 0`. Always draws `bands` gaussians.
pub fn band_expand(
    ndvi: f64,
    bands: usize,
    sigma: f64,
    rng: &mut SplitMix64,
) -> Result<Vec<f64>, CoreError> {
    if bands < 2 {
        return Err(CoreError::invalid("band expansion needs at least 2 bands"));
    }
    if !(-1.0..=1.0).contains(&ndvi) {
        return Err(CoreError::domain(format!("ndvi {ndvi} outside [-1, 1]")));
    }
    let mut out = Vec::with_capacity(bands);
    for k in 0..bands {
        let clean = match k {
            BAND_NIR => 0.25 * (1.0 + ndvi),
            BAND_RED => 0.25 * (1.0 - ndvi),
            _ => {
                let (base, span) = EXTRA_BANDS[(k - 2) % EXTRA_BANDS.len()];
                base + span * ndvi
            }
        };
        out.push((clean + sigma * rng.gaussian()).clamp(0.0, 1.0));
    }
    Ok(out)
}

/// NDVI from a band vector using the NIR/red convention of [`band_expand`].
pub fn ndvi_from_bands(bands: &[f64]) -> Result<f64, CoreError> {
    if bands.len() < 2 {
        return Err(CoreError::invalid("need NIR and red bands"));
    }
    let (nir, red) = (bands[BAND_NIR], bands[BAND_RED]);
    let denom = nir + red;
    if denom.abs() < 1e-9 {
        return Ok(0.0);
    }
    Ok((nir - red) / denom)
}

/// Per-composite NDVI series of a raw sequence.
pub fn ndvi_series(seq: &SpectralSequence) -> Result<Vec<f64>, CoreError> {
    (0..seq.t_raw()).map(|i| ndvi_from_bands(seq.composite(i))).collect()
}

/// Low-reflectance cloud sample; distorts NDVI toward zero.
fn cloud_bands(bands: usize, rng: &mut SplitMix64) -> Vec<f64> {
    (0..bands)
        .map(|_| (0.06 + 0.02 * rng.gaussian()).clamp(0.005, 0.2))
        .collect()
}

/// Random per-pixel variation. Planting timing varies a little (+-4 days,
/// rates +-10%) so classes stay separable mid-season, while harvest timing
/// (+-12 days, rates +-25%) and brightness levels vary a lot: harvest date
/// and soil background are farmer and field properties, not crop
/// properties, so late-season steps carry large class-free variance.
/// Draws a fixed number of uniforms.
pub fn jitter_profile(profile: &CropProfile, rng: &mut SplitMix64) -> CropProfile {
    let mut p = profile.clone();
    p.greenup_rate *= rng.uniform(0.9, 1.1);
    p.senescence_rate *= rng.uniform(0.75, 1.25);
    p.greenup_day += rng.uniform(-4.0, 4.0);
    p.senescence_day += rng.uniform(-12.0, 12.0);
    p.peak_ndvi = (p.peak_ndvi + rng.uniform(-0.04, 0.04)).clamp(0.0, 1.0);
    p.baseline_ndvi = (p.baseline_ndvi + rng.uniform(-0.05, 0.05)).clamp(0.0, 1.0);
    p
}

fn synth_pixel_with(
    profile: &CropProfile,
    scenario: &SeasonScenario,
    rng: &mut SplitMix64,
    pixel_id: String,
    class_label: usize,
) -> Result<LabeledPixel, CoreError> {
    let effective = profile.shifted(scenario.planting_shift_days as f64);
    effective.validate()?;
    let mut values = Vec::with_capacity(scenario.composites_per_year * scenario.bands);
    for i in 0..scenario.composites_per_year {
        let day = scenario.composite_day(i);
        let cloudy = rng.next_f64() < scenario.cloud_drop_prob;
        let bands = if cloudy {
            cloud_bands(scenario.bands, rng)
        } else {
            let v = seasonal_ndvi(day, &effective)?;
            band_expand(v, scenario.bands, scenario.noise_sigma, rng)?
        };
        values.extend_from_slice(&bands);
    }
    Ok(LabeledPixel {
        pixel_id,
        class_label,
        sequence: SpectralSequence::new(
            scenario.composites_per_year,
            scenario.bands,
            scenario.composite_period_days,
            values,
        )?,
        scenario_tag: scenario.tag(),
    })
}

/// One pixel from an explicit profile. The label is left at zero; dataset
/// assembly is responsible for meaningful label indices.
pub fn synth_pixel(
    profile: &CropProfile,
    scenario: &SeasonScenario,
    seed: u64,
) -> Result<LabeledPixel, CoreError> {
    scenario.validate()?;
    let mut rng = SplitMix64::new(seed);
    synth_pixel_with(profile, scenario, &mut rng, format!("px{seed:016x}"), 0)
}

/// Generate a shuffled dataset from `(class, count)` pairs.
///
/// Class names are ordered canonically (by [`CropClass`] order) regardless of
/// mix order. Each pixel gets an independent seed derived from its global
/// index, so regenerating with a different count for one class leaves other
/// pixels' draws unchanged.
pub fn synth_dataset(
    mix: &[(CropClass, usize)],
    scenario: &SeasonScenario,
    seed: u64,
) -> Result<RawDataset, CoreError> {
    scenario.validate()?;
    if mix.is_empty() {
        return Err(CoreError::invalid("class mix is empty"));
    }
    let mut classes: Vec<CropClass> = mix.iter().map(|(c, _)| *c).collect();
    classes.sort_unstable();
    if classes.windows(2).any(|w| w[0] == w[1]) {
        return Err(CoreError::invalid("class mix lists a class twice"));
    }
    for (class, count) in mix {
        if *count == 0 {
            return Err(CoreError::invalid(format!(
                "class {} has zero pixels",
                class.name()
            )));
        }
        CropProfile::template(*class).validate()?;
    }
    let class_names: Vec<String> = classes.iter().map(|c| String::from(c.name())).collect();
    let mut pixels = Vec::new();
    let mut index: u64 = 0;
    for (label, class) in classes.iter().enumerate() {
        let count = mix
            .iter()
            .find(|(c, _)| c == class)
            .map(|(_, n)| *n)
            .expect("class came from mix");
        for _ in 0..count {
            let mut rng = SplitMix64::new(derive_seed(seed, PIXEL_SALT + index));
            let profile = jitter_profile(&CropProfile::template(*class), &mut rng);
            pixels.push(synth_pixel_with(
                &profile,
                scenario,
                &mut rng,
                format!("px{index:05}"),
                label,
            )?);
            index += 1;
        }
    }
    let mut rng = SplitMix64::new(derive_seed(seed, SHUFFLE_SALT));
    rng.shuffle(&mut pixels);
    let ds = RawDataset {
        pixels,
        class_names,
    };
    ds.validate()?;
    Ok(ds)
}
