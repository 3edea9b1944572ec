//! The 25 synthetic degradations at five levels each, and the dataset plans
//! that schedule them over a set of reference images.

mod apply;
mod params;
mod plan;
mod quantize;
mod wavelet;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use apply::{apply_distortion, apply_distortion_with_warnings, Applied};
pub use params::{DistortionParamTable, Ladder};
pub use plan::{
    derive_seed, generate_kadid_plan, reference_of, generate_kadis_plan, run_manifest, DatasetManifest,
    ManifestRecord, PlanKind, RunOptions, RunReport, KADIS_VERSIONS_PER_REFERENCE,
};
pub use quantize::{minimum_variance_palette, multilevel_otsu};
pub use wavelet::{wavelet_compress, Dwt97};

use crate::error::{Error, Result};

/// Number of severity levels per kind.
pub const LEVELS: u8 = 5;

/// Distortion catalogue; discriminants are the catalogue numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
#[repr(u8)]
pub enum DistortionKind {
    GaussianBlur = 1,
    LensBlur = 2,
    MotionBlur = 3,
    ColorDiffusion = 4,
    ColorShift = 5,
    ColorQuantization = 6,
    ColorSaturationHsv = 7,
    ColorSaturationLab = 8,
    Jpeg2000 = 9,
    Jpeg = 10,
    WhiteNoise = 11,
    WhiteNoiseColor = 12,
    ImpulseNoise = 13,
    MultiplicativeNoise = 14,
    Denoise = 15,
    Brighten = 16,
    Darken = 17,
    MeanShift = 18,
    Jitter = 19,
    NonEccentricityPatch = 20,
    Pixelate = 21,
    Quantization = 22,
    ColorBlock = 23,
    HighSharpen = 24,
    ContrastChange = 25,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 25] = {
        use DistortionKind::*;
        [
            GaussianBlur,
            LensBlur,
            MotionBlur,
            ColorDiffusion,
            ColorShift,
            ColorQuantization,
            ColorSaturationHsv,
            ColorSaturationLab,
            Jpeg2000,
            Jpeg,
            WhiteNoise,
            WhiteNoiseColor,
            ImpulseNoise,
            MultiplicativeNoise,
            Denoise,
            Brighten,
            Darken,
            MeanShift,
            Jitter,
            NonEccentricityPatch,
            Pixelate,
            Quantization,
            ColorBlock,
            HighSharpen,
            ContrastChange,
        ]
    };

    /// Kinds whose severity lowers fidelity to the reference monotonically
    /// (blur, compression, noise, spatial resampling). Color and contrast
    /// kinds alter appearance instead.
    pub const FIDELITY_DEGRADING: [DistortionKind; 11] = {
        use DistortionKind::*;
        [
            GaussianBlur,
            LensBlur,
            MotionBlur,
            Jpeg2000,
            Jpeg,
            WhiteNoise,
            WhiteNoiseColor,
            ImpulseNoise,
            MultiplicativeNoise,
            Jitter,
            Pixelate,
        ]
    };

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(n: u8) -> Option<Self> {
        Self::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        use DistortionKind::*;
        match self {
            GaussianBlur => "gaussian_blur",
            LensBlur => "lens_blur",
            MotionBlur => "motion_blur",
            ColorDiffusion => "color_diffusion",
            ColorShift => "color_shift",
            ColorQuantization => "color_quantization",
            ColorSaturationHsv => "color_saturation_hsv",
            ColorSaturationLab => "color_saturation_lab",
            Jpeg2000 => "jpeg2000",
            Jpeg => "jpeg",
            WhiteNoise => "white_noise",
            WhiteNoiseColor => "white_noise_color",
            ImpulseNoise => "impulse_noise",
            MultiplicativeNoise => "multiplicative_noise",
            Denoise => "denoise",
            Brighten => "brighten",
            Darken => "darken",
            MeanShift => "mean_shift",
            Jitter => "jitter",
            NonEccentricityPatch => "non_eccentricity_patch",
            Pixelate => "pixelate",
            Quantization => "quantization",
            ColorBlock => "color_block",
            HighSharpen => "high_sharpen",
            ContrastChange => "contrast_change",
        }
    }
}

impl TryFrom<u8> for DistortionKind {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, String> {
        Self::from_ordinal(n).ok_or_else(|| format!("distortion kind must be 1..=25, got {n}"))
    }
}

impl From<DistortionKind> for u8 {
    fn from(k: DistortionKind) -> u8 {
        k.ordinal()
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:02} {}", self.ordinal(), self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    /// Accepts a catalogue number (`"7"`, `"07"`) or a kind name.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches('#');
        if let Ok(n) = s.parse::<u8>() {
            return Self::from_ordinal(n)
                .ok_or_else(|| Error::invalid(format!("distortion kind must be 1..=25, got {n}")));
        }
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown distortion kind {s:?}")))
    }
}

/// One fully determined degradation: kind, level and random seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistortionSpec {
    kind: DistortionKind,
    level: u8,
    seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, level: u8, seed: u64) -> Result<Self> {
        if !(1..=LEVELS).contains(&level) {
            return Err(Error::invalid(format!("distortion level must be 1..=5, got {level}")));
        }
        Ok(Self { kind, level, seed })
    }

    pub fn kind(&self) -> DistortionKind {
        self.kind
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordinals_are_catalogue_numbers() {
        for (i, k) in DistortionKind::ALL.iter().enumerate() {
            assert_eq!(k.ordinal() as usize, i + 1);
            assert_eq!(DistortionKind::from_ordinal(k.ordinal()), Some(*k));
            assert_eq!(k.name().parse::<DistortionKind>().unwrap(), *k);
        }
        assert!(DistortionKind::from_ordinal(0).is_none());
        assert!(DistortionKind::from_ordinal(26).is_none());
        assert_eq!("09".parse::<DistortionKind>().unwrap(), DistortionKind::Jpeg2000);
    }

    #[test]
    fn level_validated() {
        assert!(DistortionSpec::new(DistortionKind::Jpeg, 0, 1).is_err());
        assert!(DistortionSpec::new(DistortionKind::Jpeg, 6, 1).is_err());
        assert!(DistortionSpec::new(DistortionKind::Jpeg, 5, 1).is_ok());
    }
}
