//! Core domain types shared across the pipeline.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreResult, PipelineError};

/// Where an image came from. EXTERNAL covers any user-supplied directory
/// that follows the generic images/masks layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceDataset {
    Drive,
    Stare,
    ChaseDb1,
    Aptos,
    External,
}

impl SourceDataset {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceDataset::Drive => "drive",
            SourceDataset::Stare => "stare",
            SourceDataset::ChaseDb1 => "chase_db1",
            SourceDataset::Aptos => "aptos",
            SourceDataset::External => "external",
        }
    }

    pub fn parse(s: &str) -> CoreResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "drive" => Ok(SourceDataset::Drive),
            "stare" => Ok(SourceDataset::Stare),
            "chase_db1" | "chasedb1" | "chase" => Ok(SourceDataset::ChaseDb1),
            "aptos" => Ok(SourceDataset::Aptos),
            "external" => Ok(SourceDataset::External),
            other => Err(PipelineError::Config(format!(
                "unknown dataset kind '{other}' (expected drive, stare, chase_db1, aptos, or external)"
            ))),
        }
    }
}

/// An RGB fundus photograph, `[H, W, 3]` of 8-bit intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct FundusImage {
    pub id: String,
    pub pixels: Array3<u8>,
    pub source: SourceDataset,
    /// DR severity 0..=4; present for graded (APTOS-style) data only.
    pub grade: Option<u8>,
}

impl FundusImage {
    pub fn new(
        id: impl Into<String>,
        pixels: Array3<u8>,
        source: SourceDataset,
        grade: Option<u8>,
    ) -> CoreResult<Self> {
        let id = id.into();
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(PipelineError::Data(format!(
                "image '{id}': expected nonempty HxWx3 pixels, got {h}x{w}x{c}"
            )));
        }
        if let Some(g) = grade {
            if g > 4 {
                return Err(PipelineError::Data(format!(
                    "image '{id}': grade {g} outside 0..=4"
                )));
            }
        }
        Ok(FundusImage {
            id,
            pixels,
            source,
            grade,
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }
}

/// Binary vessel annotation aligned with a [`FundusImage`]; values are
/// exactly 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct VesselMask {
    pub id: String,
    pub pixels: Array2<u8>,
}

impl VesselMask {
    pub fn new(id: impl Into<String>, pixels: Array2<u8>) -> CoreResult<Self> {
        let id = id.into();
        let (h, w) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(PipelineError::Data(format!("mask '{id}': empty raster")));
        }
        if let Some(v) = pixels.iter().find(|&&v| v > 1) {
            return Err(PipelineError::Data(format!(
                "mask '{id}': contains value {v}, expected only 0/1 (binarize first)"
            )));
        }
        Ok(VesselMask { id, pixels })
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }
}

/// Five per-stage scores plus the decoded grade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinalPrediction {
    pub scores: [f32; 5],
    pub grade: u8,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn rejects_bad_channel_count() {
        let px = Array3::<u8>::zeros((4, 4, 1));
        // Wrong shape is caught even though Array3 typechecks.
        let img = FundusImage::new("x", px, SourceDataset::External, None);
        assert!(img.is_err());
    }

    #[test]
    fn rejects_out_of_range_grade() {
        let px = Array3::<u8>::zeros((4, 4, 3));
        assert!(FundusImage::new("x", px, SourceDataset::Aptos, Some(7)).is_err());
    }

    #[test]
    fn mask_must_be_binary() {
        let mut px = ndarray::Array2::<u8>::zeros((4, 4));
        px[[1, 1]] = 255;
        assert!(VesselMask::new("m", px).is_err());
        let mut ok = ndarray::Array2::<u8>::zeros((4, 4));
        ok[[1, 1]] = 1;
        assert!(VesselMask::new("m", ok).is_ok());
    }

    #[test]
    fn dataset_kind_parse_roundtrip() {
        for kind in [
            SourceDataset::Drive,
            SourceDataset::Stare,
            SourceDataset::ChaseDb1,
            SourceDataset::Aptos,
            SourceDataset::External,
        ] {
            assert_eq!(SourceDataset::parse(kind.as_str()).unwrap(), kind);
        }
        assert!(SourceDataset::parse("messidor").is_err());
    }
}
