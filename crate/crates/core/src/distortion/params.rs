use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DistortionKind;
use crate::error::{Error, Result};

/// Per-level parameter ladder for one distortion kind (levels 1..=5).
pub type Ladder = [f64; 5];

/// Parameters driving every distortion kind at each of the five levels.
///
/// All fields have defaults; a JSON file only needs the entries it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionParamTable {
    pub gaussian_blur_sigma: Ladder,
    pub lens_blur_radius: Ladder,
    pub motion_blur_length: Ladder,
    pub color_diffusion_sigma: Ladder,
    pub color_shift_offset: Ladder,
    pub color_quantization_colors: Ladder,
    pub hsv_saturation_factor: Ladder,
    pub lab_saturation_factor: Ladder,
    pub jpeg2000_step: Ladder,
    pub jpeg_quality: Ladder,
    pub white_noise_sigma: Ladder,
    pub color_noise_sigma: Ladder,
    pub impulse_density: Ladder,
    pub speckle_variance: Ladder,
    pub denoise_noise_sigma: Ladder,
    pub brighten_amount: Ladder,
    pub darken_amount: Ladder,
    pub mean_shift: Ladder,
    pub jitter_amplitude: Ladder,
    pub patch_count: Ladder,
    pub patch_size: usize,
    pub patch_displacement: usize,
    pub pixelate_block: Ladder,
    pub otsu_thresholds: Ladder,
    pub color_block_count: Ladder,
    pub color_block_size: usize,
    pub sharpen_amount: Ladder,
    pub sharpen_sigma: f64,
    pub contrast_gain: Ladder,
}

impl Default for DistortionParamTable {
    fn default() -> Self {
        Self {
            gaussian_blur_sigma: [1.0, 2.0, 4.0, 6.0, 8.0],
            lens_blur_radius: [1.0, 2.0, 4.0, 6.0, 8.0],
            motion_blur_length: [3.0, 7.0, 15.0, 27.0, 45.0],
            color_diffusion_sigma: [1.0, 3.0, 6.0, 9.0, 12.0],
            color_shift_offset: [2.0, 4.0, 8.0, 12.0, 16.0],
            color_quantization_colors: [64.0, 48.0, 32.0, 16.0, 8.0],
            hsv_saturation_factor: [0.4, 0.2, 0.1, 0.05, 0.0],
            lab_saturation_factor: [1.5, 2.0, 3.0, 4.5, 6.0],
            jpeg2000_step: [0.03, 0.06, 0.12, 0.24, 0.48],
            jpeg_quality: [43.0, 12.0, 7.0, 4.0, 1.0],
            white_noise_sigma: [0.02, 0.06, 0.10, 0.15, 0.23],
            color_noise_sigma: [0.02, 0.04, 0.07, 0.10, 0.15],
            impulse_density: [0.01, 0.03, 0.07, 0.12, 0.20],
            speckle_variance: [0.01, 0.03, 0.06, 0.12, 0.25],
            denoise_noise_sigma: [0.03, 0.06, 0.10, 0.15, 0.22],
            brighten_amount: [0.05, 0.10, 0.15, 0.22, 0.30],
            darken_amount: [0.05, 0.10, 0.15, 0.22, 0.30],
            mean_shift: [0.05, 0.10, 0.15, 0.20, 0.25],
            jitter_amplitude: [0.5, 1.0, 2.0, 3.0, 4.0],
            patch_count: [10.0, 20.0, 40.0, 70.0, 100.0],
            patch_size: 16,
            patch_displacement: 16,
            pixelate_block: [2.0, 4.0, 8.0, 16.0, 32.0],
            otsu_thresholds: [7.0, 5.0, 4.0, 3.0, 2.0],
            color_block_count: [4.0, 8.0, 16.0, 32.0, 48.0],
            color_block_size: 32,
            sharpen_amount: [1.0, 2.0, 3.0, 5.0, 8.0],
            sharpen_sigma: 1.5,
            contrast_gain: [3.0, 5.0, 8.0, 12.0, 18.0],
        }
    }
}

impl DistortionParamTable {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: Self =
            serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    /// The ladder that sets the severity of `kind`.
    pub fn ladder(&self, kind: DistortionKind) -> &Ladder {
        use DistortionKind::*;
        match kind {
            GaussianBlur => &self.gaussian_blur_sigma,
            LensBlur => &self.lens_blur_radius,
            MotionBlur => &self.motion_blur_length,
            ColorDiffusion => &self.color_diffusion_sigma,
            ColorShift => &self.color_shift_offset,
            ColorQuantization => &self.color_quantization_colors,
            ColorSaturationHsv => &self.hsv_saturation_factor,
            ColorSaturationLab => &self.lab_saturation_factor,
            Jpeg2000 => &self.jpeg2000_step,
            Jpeg => &self.jpeg_quality,
            WhiteNoise => &self.white_noise_sigma,
            WhiteNoiseColor => &self.color_noise_sigma,
            ImpulseNoise => &self.impulse_density,
            MultiplicativeNoise => &self.speckle_variance,
            Denoise => &self.denoise_noise_sigma,
            Brighten => &self.brighten_amount,
            Darken => &self.darken_amount,
            MeanShift => &self.mean_shift,
            Jitter => &self.jitter_amplitude,
            NonEccentricityPatch => &self.patch_count,
            Pixelate => &self.pixelate_block,
            Quantization => &self.otsu_thresholds,
            ColorBlock => &self.color_block_count,
            HighSharpen => &self.sharpen_amount,
            ContrastChange => &self.contrast_gain,
        }
    }

    /// Parameter value for `kind` at `level` (1..=5).
    pub fn value(&self, kind: DistortionKind, level: u8) -> f64 {
        self.ladder(kind)[usize::from(level.clamp(1, 5)) - 1]
    }

    /// Checks ranges and that every ladder is strictly monotone in level.
    pub fn validate(&self) -> Result<()> {
        for kind in DistortionKind::ALL {
            let l = self.ladder(kind);
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{}: non-finite parameter", kind.name())));
            }
            let up = l.windows(2).all(|w| w[1] > w[0]);
            let down = l.windows(2).all(|w| w[1] < w[0]);
            if !(up || down) {
                return Err(Error::invalid(format!(
                    "{}: parameter ladder {l:?} is not strictly monotone",
                    kind.name()
                )));
            }
        }
        let positive = [
            ("gaussian_blur_sigma", &self.gaussian_blur_sigma),
            ("lens_blur_radius", &self.lens_blur_radius),
            ("color_diffusion_sigma", &self.color_diffusion_sigma),
            ("jpeg2000_step", &self.jpeg2000_step),
            ("pixelate_block", &self.pixelate_block),
            ("color_quantization_colors", &self.color_quantization_colors),
            ("otsu_thresholds", &self.otsu_thresholds),
        ];
        for (name, l) in positive {
            if l.iter().any(|&v| v <= 0.0) {
                return Err(Error::invalid(format!("{name}: values must be > 0")));
            }
        }
        if self.motion_blur_length.iter().any(|&v| v < 1.0) {
            return Err(Error::invalid("motion_blur_length: values must be >= 1"));
        }
        if self.jpeg_quality.iter().any(|&v| !(1.0..=100.0).contains(&v)) {
            return Err(Error::invalid("jpeg_quality: values must lie in 1..=100"));
        }
        let amplitude_cap = 1.0 / std::f64::consts::PI;
        if self
            .brighten_amount
            .iter()
            .chain(&self.darken_amount)
            .any(|&a| !(0.0..=amplitude_cap).contains(&a))
        {
            return Err(Error::invalid(
                "brighten/darken amounts must lie in [0, 1/pi] to keep the curve monotone",
            ));
        }
        if self.patch_size == 0 || self.color_block_size == 0 || self.sharpen_sigma <= 0.0 {
            return Err(Error::invalid("patch/block sizes and sharpen sigma must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_monotone() {
        DistortionParamTable::default().validate().unwrap();
    }

    #[test]
    fn partial_json_overrides_defaults() {
        let t: DistortionParamTable =
            serde_json::from_str(r#"{"gaussian_blur_sigma": [0.5, 1, 2, 3, 4]}"#).unwrap();
        assert_eq!(t.gaussian_blur_sigma, [0.5, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.jpeg_quality, DistortionParamTable::default().jpeg_quality);
    }

    #[test]
    fn non_monotone_ladder_rejected() {
        let t = DistortionParamTable {
            white_noise_sigma: [0.1, 0.05, 0.2, 0.3, 0.4],
            ..Default::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<DistortionParamTable>(r#"{"blur": [1,2,3,4,5]}"#).is_err());
    }
}
