//! Per-image nucleus annotations as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::BoundingBox;
use crate::synth::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleusRecord {
    pub center: [f64; 2],
    /// Inclusive `[x0, y0, x1, y1]`.
    #[serde(rename = "box")]
    pub bbox: [i64; 4],
    pub isolated: bool,
}

impl NucleusRecord {
    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::new(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub width: usize,
    pub height: usize,
    pub nuclei: Vec<NucleusRecord>,
    /// Instance mask PNG, relative to the annotation file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

impl AnnotationFile {
    pub fn from_truth(truth: &GroundTruth, width: usize, height: usize, mask: Option<String>) -> Self {
        let nuclei = truth
            .centers
            .iter()
            .zip(&truth.boxes)
            .zip(&truth.isolated)
            .map(|((c, b), &isolated)| NucleusRecord { center: [c.0, c.1], bbox: [b.x0, b.y0, b.x1, b.y1], isolated })
            .collect();
        Self { width, height, nuclei, mask }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nuclei.iter().enumerate() {
            let b = n.bounding_box();
            if b.x0 < 0 || b.y0 < 0 || b.x1 >= self.width as i64 || b.y1 >= self.height as i64 {
                return invalid(format!("nucleus {i}: box outside the image"));
            }
            if !b.contains(n.center[0], n.center[1]) {
                return invalid(format!("nucleus {i}: center outside its box"));
            }
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<(f64, f64)> {
        self.nuclei.iter().map(|n| (n.center[0], n.center[1])).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        a.validate()?;
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
