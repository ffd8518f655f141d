use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::blend::BlendParams;
use crate::compositor::CanvasConfig;
use crate::layout::LayoutConfig;
use crate::refexpr::ExprBackendConfig;
use crate::relight::RelightConfig;

/// Environment variable overriding `global_seed`.
pub const SEED_ENV: &str = "SEGFORGE_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DatasetMode {
    /// Frequent-category pool.
    Fc,
    /// General-category pool.
    Gc,
    /// One frequent category per image, many instances with varied attributes.
    Sfc,
    /// One general category per image, many instances with varied attributes.
    Sgc,
    /// Real and synthetic segments mixed per draw.
    Mix(MixConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub real_manifest: PathBuf,
    pub synth_manifest: PathBuf,
    #[serde(default = "half")]
    pub real_fraction: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibraryConfig {
    pub manifest: Option<PathBuf>,
    /// Quality scores; when set, the library is filtered before sampling.
    pub scores: Option<PathBuf>,
    pub retain_fraction: Option<f64>,
    /// Category pool for FC/SFC. All manifest categories when unset.
    pub frequent_categories: Option<Vec<String>>,
    /// Category pool for GC/SGC. All manifest categories when unset.
    pub general_categories: Option<Vec<String>>,
}

/// Share of annotations labelled with the bare category vs. a short phrase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelTextMix {
    pub category: f64,
    pub phrase: f64,
}

impl Default for LabelTextMix {
    fn default() -> Self {
        Self { category: 0.66, phrase: 0.34 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub global_seed: u64,
    pub num_images: u64,
    pub mode: DatasetMode,
    pub library: LibraryConfig,
    pub layout: LayoutConfig,
    /// Real COCO annotation file for the coco-prior layout strategy or the
    /// count histogram.
    pub prior_annotations: Option<PathBuf>,
    /// Draw object counts from the prior file's per-image histogram.
    pub count_from_prior: bool,
    pub canvas: CanvasConfig,
    pub blend: BlendParams,
    pub relight: RelightConfig,
    pub expressions: ExprBackendConfig,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub label_text_mix: LabelTextMix,
    /// The run fails when more than this fraction of images fail.
    pub failure_threshold: f64,
    /// Scene resamples allowed when a mode requirement is not met.
    pub max_scene_attempts: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            global_seed: 0,
            num_images: 1,
            mode: DatasetMode::Fc,
            library: LibraryConfig::default(),
            layout: LayoutConfig::default(),
            prior_annotations: None,
            count_from_prior: false,
            canvas: CanvasConfig::default(),
            blend: BlendParams::default(),
            relight: RelightConfig::default(),
            expressions: ExprBackendConfig::default(),
            output_dir: PathBuf::from("segforge-out"),
            workers: 1,
            label_text_mix: LabelTextMix::default(),
            failure_threshold: 0.01,
            max_scene_attempts: 8,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config. Relative paths resolve against the file's
    /// directory, and `SEGFORGE_SEED` overrides `global_seed`.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<(), PipelineError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.global_seed = v
                .trim()
                .parse()
                .map_err(|_| PipelineError::Config(format!("{SEED_ENV}={v} is not a 64-bit unsigned integer")))?;
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.library.manifest, &mut self.library.scores, &mut self.prior_annotations]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let DatasetMode::Mix(m) = &mut self.mode {
            fix(&mut m.real_manifest);
            fix(&mut m.synth_manifest);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.num_images == 0 {
            return bad("num_images must be at least 1".into());
        }
        let mix = self.label_text_mix;
        if mix.category < 0.0 || mix.phrase < 0.0 || (mix.category + mix.phrase - 1.0).abs() > 1e-9 {
            return bad("label_text_mix proportions must be non-negative and sum to 1".into());
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return bad("failure_threshold must be in [0, 1]".into());
        }
        self.layout.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.blend.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        match &self.mode {
            DatasetMode::Mix(m) => {
                if !(0.0..=1.0).contains(&m.real_fraction) {
                    return bad("mix real_fraction must be in [0, 1]".into());
                }
            }
            _ if self.library.manifest.is_none() => return bad("library.manifest is required".into()),
            _ => {}
        }
        if let Some(f) = self.library.retain_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("retain_fraction must be in (0, 1], got {f}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_uses_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"num_images": 3, "mode": "SFC"}"#).unwrap();
        assert_eq!(cfg.num_images, 3);
        assert_eq!(cfg.mode, DatasetMode::Sfc);
        assert_eq!(cfg.layout.count_min, 5);
        assert_eq!(cfg.label_text_mix, LabelTextMix { category: 0.66, phrase: 0.34 });
        assert_eq!(cfg.relight.timeout_secs, 120);
    }

    #[test]
    fn mix_mode_parses() {
        let cfg: PipelineConfig = serde_json::from_str(
            r#"{"mode": {"MIX": {"real_manifest": "r.jsonl", "synth_manifest": "s.jsonl"}}}"#,
        )
        .unwrap();
        let DatasetMode::Mix(m) = cfg.mode else { panic!() };
        assert_eq!(m.real_fraction, 0.5);
    }

    #[test]
    fn validation_catches_bad_mix() {
        let cfg = PipelineConfig {
            library: LibraryConfig { manifest: Some("m".into()), ..Default::default() },
            label_text_mix: LabelTextMix { category: 0.5, phrase: 0.6 },
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }
}
