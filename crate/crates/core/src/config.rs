//! JSON experiment configuration.

use serde::{Deserialize, Serialize};

use crate::density::{DensityParams, EnergyWindow};
use crate::error::{Error, Result};
use crate::experiment::StudyOptions;
use crate::packets::ModerateRegion;
use crate::potential::{PotentialKind, PotentialModel, Side};
use crate::tdse::Sizing;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstTag {
    Const,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteBlock {
    pub j: u32,
    pub eta: f64,
    #[serde(default = "one")]
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AmplitudeBlock {
    Const(ConstTag),
    Hermite { hermite: HermiteBlock },
}

/// `{"g": .., "e0": .., "J": [..], "P": "const" | {"hermite": {"j": .., "eta": ..}}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityBlock {
    #[serde(default)]
    pub g: Option<f64>,
    #[serde(default)]
    pub e0: Option<f64>,
    #[serde(rename = "J", default)]
    pub j: Vec<f64>,
    #[serde(rename = "P")]
    pub p: AmplitudeBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionBlock {
    pub half_width: f64,
    pub launch: f64,
    pub points_per_wavelength: f64,
    pub courant: f64,
    pub probe: f64,
    pub extract_at: f64,
    pub extract_limit: f64,
    pub extend_by: f64,
    pub compare_window: (f64, f64),
    pub max_shift: f64,
}

impl Default for EvolutionBlock {
    fn default() -> Self {
        let s = StudyOptions::<f64>::default();
        Self {
            half_width: s.sizing.half_width,
            launch: s.sizing.launch,
            points_per_wavelength: s.sizing.points_per_wavelength,
            courant: s.sizing.courant,
            probe: s.probe,
            extract_at: s.extract_at,
            extract_limit: s.extract_limit,
            extend_by: s.extend_by,
            compare_window: s.window,
            max_shift: s.max_shift,
        }
    }
}

/// Pass/fail thresholds of the `compare` and `sweep` checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Largest gauged distance between two closed-form approximants.
    pub coherence: f64,
    /// The TDSE error slope in `ln hbar` must exceed this.
    pub min_slope: f64,
    pub min_r2: f64,
    /// Smallest-hbar error over largest-hbar error.
    pub error_ratio: f64,
    /// `|mean_k - k*| <= mean_k_band * sqrt(hbar)`.
    pub mean_k_band: f64,
    pub drift_per_10k_steps: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { coherence: 0.05, min_slope: 0.0, min_r2: 0.9, error_ratio: 0.5, mean_k_band: 0.5, drift_per_10k_steps: 1e-12 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub potential: PotentialKind<f64>,
    /// Declared decay exponent for power-law tails.
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default = "default_strip")]
    pub strip_alpha: f64,
    pub window: EnergyWindow<f64>,
    pub density: DensityBlock,
    pub hbar_list: Vec<f64>,
    #[serde(default)]
    pub evolution: EvolutionBlock,
    #[serde(default)]
    pub moderate: ModerateRegion<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub output_dir: String,
    #[serde(default = "yes")]
    pub deterministic: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_strip() -> f64 {
    0.5
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The canonical sweep: `sech^2 x`, `g = 30`, `E0 = 0.78` on `[0.7, 0.9]`.
    pub fn canonical(output_dir: impl Into<String>) -> Self {
        Self {
            potential: PotentialKind::Eckart { height: 1.0, a: 1.0 },
            nu: None,
            strip_alpha: default_strip(),
            window: EnergyWindow { lo: 0.7, hi: 0.9 },
            density: DensityBlock { g: Some(30.0), e0: Some(0.78), j: Vec::new(), p: AmplitudeBlock::Const(ConstTag::Const) },
            hbar_list: vec![1.0 / 16.0, 1.0 / 24.0, 1.0 / 32.0, 1.0 / 48.0],
            evolution: EvolutionBlock::default(),
            moderate: ModerateRegion::default(),
            tolerances: Tolerances::default(),
            output_dir: output_dir.into(),
            deterministic: true,
        }
    }

    pub fn model(&self) -> Result<PotentialModel<f64>> {
        PotentialModel::new(self.potential.clone(), self.nu).map_err(config_err)
    }

    pub fn window(&self) -> Result<EnergyWindow<f64>> {
        EnergyWindow::new(self.window.lo, self.window.hi).map_err(config_err)
    }

    pub fn density(&self) -> Result<DensityParams<f64>> {
        let window = self.window()?;
        let d = match &self.density.p {
            AmplitudeBlock::Const(_) => {
                let (Some(g), Some(e0)) = (self.density.g, self.density.e0) else {
                    return Err(Error::Config("a constant-P density needs g and e0".into()));
                };
                DensityParams::gaussian(g, e0, window)
            }
            AmplitudeBlock::Hermite { hermite: h } => {
                let v_left = self.model()?.asymptote(Side::Left);
                DensityParams::hermite(h.j, h.eta, h.width, v_left, window)
            }
        }
        .map_err(config_err)?;
        Ok(d.with_phase(self.density.j.clone()))
    }

    pub fn study_options(&self) -> StudyOptions<f64> {
        let e = &self.evolution;
        StudyOptions {
            sizing: Sizing {
                half_width: e.half_width,
                launch: e.launch,
                points_per_wavelength: e.points_per_wavelength,
                courant: e.courant,
            },
            probe: e.probe,
            extract_at: e.extract_at,
            extract_limit: e.extract_limit,
            extend_by: e.extend_by,
            window: e.compare_window,
            region: self.moderate,
            max_shift: e.max_shift,
            compare: true,
        }
    }

    /// Builds every block so that bad input fails before any computation.
    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.density()?;
        if self.hbar_list.is_empty() || self.hbar_list.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Config("hbar_list must hold positive numbers".into()));
        }
        if !(self.strip_alpha > 0.0) {
            return Err(Error::Config("strip_alpha must be positive".into()));
        }
        let e = &self.evolution;
        let positive = [e.half_width, e.points_per_wavelength, e.courant, e.max_shift, e.extend_by];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("evolution sizes must be positive".into()));
        }
        if !(e.launch < 0.0 && e.launch > -e.half_width) {
            return Err(Error::Config("launch point must lie left of the barrier inside the grid".into()));
        }
        if !(e.compare_window.0 < e.compare_window.1) || !(e.probe > 0.0 && e.extract_at >= e.probe && e.extract_limit >= e.extract_at) {
            return Err(Error::Config("comparison window or probe points out of order".into()));
        }
        if !(self.moderate.c > 0.0 && self.moderate.beta > 0.0) {
            return Err(Error::Config("moderate region constants must be positive".into()));
        }
        let t = &self.tolerances;
        if [t.coherence, t.min_r2, t.error_ratio, t.mean_k_band, t.drift_per_10k_steps].iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.output_dir.trim().is_empty() {
            return Err(Error::Config("output_dir is empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANONICAL: &str = r#"{
        "potential": {"kind": "eckart", "params": {"height": 1.0, "a": 1.0}},
        "window": {"lo": 0.7, "hi": 0.9},
        "density": {"g": 30, "e0": 0.78, "J": [], "P": "const"},
        "hbar_list": [0.0625, 0.041666666666666664, 0.03125, 0.020833333333333332],
        "output_dir": "out"
    }"#;

    #[test]
    fn parses_canonical_block() {
        let cfg = ExperimentConfig::from_json(CANONICAL).unwrap();
        assert_eq!(cfg.hbar_list.len(), 4);
        assert_eq!(cfg.density().unwrap(), DensityParams::gaussian(30.0, 0.78, cfg.window).unwrap());
        let round = serde_json::to_string(&ExperimentConfig::canonical("out")).unwrap();
        let back = ExperimentConfig::from_json(&round).unwrap();
        assert_eq!(back.evolution, EvolutionBlock::default());
    }

    #[test]
    fn parses_hermite_amplitude() {
        let text = CANONICAL.replace(r#""P": "const""#, r#""P": {"hermite": {"j": 2, "eta": 1.249, "width": 0.146}}"#);
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert!(matches!(cfg.density.p, AmplitudeBlock::Hermite { hermite: HermiteBlock { j: 2, .. } }));
    }

    #[test]
    fn rejects_bad_blocks() {
        let bad = [
            CANONICAL.replace(r#""lo": 0.7"#, r#""lo": 0.95"#),
            CANONICAL.replace(r#""P": "const""#, r#""P": "linear""#),
            CANONICAL.replace(r#""hbar_list": [0.0625"#, r#""hbar_list": [-0.0625"#),
            CANONICAL.replace(r#""kind": "eckart""#, r#""kind": "square""#),
            CANONICAL.replace(r#""g": 30, "e0": 0.78, "#, ""),
        ];
        for text in bad {
            let err = ExperimentConfig::from_json(&text).unwrap_err();
            assert!(err.is_config(), "{err}");
        }
    }
}
