//! Experiment configuration: a TOML document with one section per pipeline
//! stage, plus the resolved-invocation snapshot every command writes.
//!
//! Paths inside a config file are interpreted relative to the file's
//! directory and absolutized on load, so the resolved snapshot written into
//! a run directory can be re-run from anywhere and still find its inputs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use haustra::dataio::AugmentOptions;
use haustra::depthnet::{DepthNetConfig, DepthTrainConfig};
use haustra::miloss::HistogramSpec;
use haustra::translation::{DiscriminatorConfig, GeneratorConfig, TranslationConfig};
use haustra::types::LossWeights;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Ablation cell identifiers mirroring the experiment grid: no translation,
/// full method, method without the structure term, and translation toward
/// an alternate target dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AblationId {
    /// Depth trained directly on untranslated source images.
    #[value(name = "baseline")]
    Baseline,
    /// Translation with the mutual-information structure term.
    #[value(name = "ours")]
    Ours,
    /// Translation with the structure term disabled (lambda_mi = 0).
    #[value(name = "ours_cg")]
    OursCg,
    /// Translation toward the alternate target set (`data.domain_b_alt`).
    #[value(name = "ours_alt_b")]
    OursAltB,
}

impl fmt::Display for AblationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AblationId::Baseline => "baseline",
            AblationId::Ours => "ours",
            AblationId::OursCg => "ours_cg",
            AblationId::OursAltB => "ours_alt_b",
        };
        f.write_str(s)
    }
}

impl FromStr for AblationId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "ours" => Ok(Self::Ours),
            "ours_cg" | "ours-cg" => Ok(Self::OursCg),
            "ours_alt_b" | "ours-alt-b" => Ok(Self::OursAltB),
            other => Err(format!(
                "unknown ablation '{other}' (expected baseline, ours, ours_cg, or ours_alt_b)"
            )),
        }
    }
}

/// Dataset manifest paths.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Paired source-domain manifest (images + depths).
    pub domain_a: Option<PathBuf>,
    /// Unpaired target-domain manifest.
    pub domain_b: Option<PathBuf>,
    /// Alternate target manifest for the `ours_alt_b` cell.
    pub domain_b_alt: Option<PathBuf>,
    /// Paired held-out manifest for depth evaluation.
    pub eval: Option<PathBuf>,
}

impl DataSection {
    fn absolutize(&mut self, base: &Path) {
        for p in [
            &mut self.domain_a,
            &mut self.domain_b,
            &mut self.domain_b_alt,
            &mut self.eval,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_gan: f64,
    pub lambda_cyc: f64,
    pub lambda_mi: f64,
    pub histogram_bins: usize,
    pub depth_min_mm: f64,
    pub depth_max_mm: f64,
    pub soft_bandwidth: f64,
    pub generator_width: usize,
    pub generator_blocks: usize,
    pub discriminator_width: usize,
    pub discriminator_layers: usize,
    pub identity_loss: bool,
    pub fake_pool: bool,
    pub fake_pool_size: usize,
    pub lr_decay: bool,
}

impl Default for TranslationSection {
    fn default() -> Self {
        let t = TranslationConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lambda_gan: t.weights.lambda_gan,
            lambda_cyc: t.weights.lambda_cyc,
            lambda_mi: t.weights.lambda_mi,
            histogram_bins: t.histogram.n_bins,
            depth_min_mm: t.histogram.depth_min,
            depth_max_mm: t.histogram.depth_max,
            soft_bandwidth: t.histogram.soft_bandwidth,
            generator_width: t.generator.base_width,
            generator_blocks: t.generator.res_blocks,
            discriminator_width: t.discriminator.base_width,
            discriminator_layers: t.discriminator.layers,
            identity_loss: t.identity_loss,
            fake_pool: t.fake_pool,
            fake_pool_size: t.fake_pool_size,
            lr_decay: t.lr_decay,
        }
    }
}

impl TranslationSection {
    pub fn to_translation_config(&self, seed: u64) -> Result<TranslationConfig, CliError> {
        let histogram =
            HistogramSpec::new(self.histogram_bins, self.depth_min_mm, self.depth_max_mm)
                .and_then(|h| h.with_bandwidth(self.soft_bandwidth))
                .map_err(|e| CliError::usage(format!("invalid histogram settings: {e}")))?;
        let cfg = TranslationConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weights: LossWeights::new(self.lambda_gan, self.lambda_cyc, self.lambda_mi)
                .map_err(|e| CliError::usage(format!("invalid loss weights: {e}")))?,
            histogram,
            generator: GeneratorConfig {
                base_width: self.generator_width,
                res_blocks: self.generator_blocks,
            },
            discriminator: DiscriminatorConfig {
                base_width: self.discriminator_width,
                layers: self.discriminator_layers,
            },
            seed,
            identity_loss: self.identity_loss,
            fake_pool: self.fake_pool,
            fake_pool_size: self.fake_pool_size,
            lr_decay: self.lr_decay,
        };
        cfg.validate()
            .map_err(|e| CliError::usage(format!("invalid translation settings: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub width: usize,
    pub blocks: Vec<usize>,
    pub output_scale_mm: f64,
    pub augment: bool,
    pub crop_height: usize,
    pub crop_width: usize,
    pub hflip_probability: f64,
    /// With `train-depth --strict`, exit nonzero if the final epoch's mean
    /// loss exceeds this.
    pub max_final_mse: Option<f64>,
}

impl Default for DepthSection {
    fn default() -> Self {
        let d = DepthTrainConfig::default();
        let a = d.augment.expect("default depth config augments");
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            width: d.model.base_width,
            blocks: d.model.stage_blocks.clone(),
            output_scale_mm: d.model.output_scale_mm,
            augment: true,
            crop_height: a.crop_height,
            crop_width: a.crop_width,
            hflip_probability: a.hflip_probability,
            max_final_mse: None,
        }
    }
}

impl DepthSection {
    pub fn to_depth_config(&self, seed: u64) -> Result<DepthTrainConfig, CliError> {
        let cfg = DepthTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            model: DepthNetConfig {
                base_width: self.width,
                stage_blocks: self.blocks.clone(),
                output_scale_mm: self.output_scale_mm,
            },
            augment: self.augment.then_some(AugmentOptions {
                crop_height: self.crop_height,
                crop_width: self.crop_width,
                hflip_probability: self.hflip_probability,
            }),
            seed,
        };
        cfg.validate()
            .map_err(|e| CliError::usage(format!("invalid depth settings: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Seed of the frozen random feature extractor.
    pub extractor_seed: u64,
    /// Seed for kernel-distance subset draws.
    pub kid_seed: u64,
    /// Bins for the reported depth/intensity mutual information.
    pub mi_bins: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            extractor_seed: 0,
            kid_seed: 0,
            mi_bins: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSection {
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationId>,
}

impl Default for SuiteSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            cells: vec![AblationId::Baseline, AblationId::Ours, AblationId::OursCg],
        }
    }
}

/// Full experiment description. Any subset may appear in the TOML file;
/// missing keys take the defaults shown by `Default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ablation: AblationId,
    pub seed: u64,
    pub data: DataSection,
    pub translation: TranslationSection,
    pub depth: DepthSection,
    pub eval: EvalSection,
    pub suite: SuiteSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ablation: AblationId::Ours,
            seed: 0,
            data: DataSection::default(),
            translation: TranslationSection::default(),
            depth: DepthSection::default(),
            eval: EvalSection::default(),
            suite: SuiteSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file; relative data paths become absolute against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(CliError::usage(format!(
                "config file not found: {}",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        let base = absolutize(path.parent().unwrap_or(Path::new(".")));
        cfg.data.absolutize(&base);
        Ok(cfg)
    }

    /// Materializes the ablation cell into concrete settings: `ours_cg`
    /// zeroes the structure weight and `ours_alt_b` retargets translation
    /// at the alternate domain-B manifest.
    pub fn apply_ablation(&mut self) -> Result<(), CliError> {
        match self.ablation {
            AblationId::Baseline | AblationId::Ours => {}
            AblationId::OursCg => self.translation.lambda_mi = 0.0,
            AblationId::OursAltB => {
                let alt = self.data.domain_b_alt.clone().ok_or_else(|| {
                    CliError::usage(
                        "ablation ours_alt_b needs data.domain_b_alt in the config".to_string(),
                    )
                })?;
                self.data.domain_b = Some(alt);
            }
        }
        Ok(())
    }

    pub fn require_path(
        path: &Option<PathBuf>,
        key: &str,
    ) -> Result<PathBuf, CliError> {
        let p = path
            .clone()
            .ok_or_else(|| CliError::usage(format!("config is missing data.{key}")))?;
        if !p.exists() {
            return Err(CliError::usage(format!(
                "data.{key} manifest not found: {}",
                p.display()
            )));
        }
        Ok(p)
    }
}

/// Makes a path absolute against the current directory without touching
/// the filesystem (no symlink resolution, so it works for paths that do
/// not exist yet).
pub fn absolutize(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir()
            .unwrap_or_else(|_| PathBuf::from("."))
            .join(path)
    }
}

/// Serializes a resolved invocation and returns (toml text, sha-256 hex of
/// that text). The hash is the run's `config_hash`.
pub fn snapshot_with_hash<T: Serialize>(value: &T) -> Result<(String, String), CliError> {
    let text = toml::to_string_pretty(value)
        .map_err(|e| CliError::internal(anyhow::anyhow!("cannot serialize snapshot: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    Ok((text, format!("{:x}", hasher.finalize())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_round_trips_with_defaults() {
        let cfg: ExperimentConfig = toml::from_str("seed = 5").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.ablation, AblationId::Ours);
        assert_eq!(cfg.translation.epochs, 30);
        assert_eq!(cfg.translation.lambda_gan, 10.0);
        assert_eq!(cfg.translation.lambda_cyc, 0.5);
        assert_eq!(cfg.translation.lambda_mi, 1.0);
        assert_eq!(cfg.depth.epochs, 20);
        assert_eq!(cfg.suite.seeds, vec![0, 1, 2]);

        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>("lambda_typo = 1.0").unwrap_err();
        assert!(err.to_string().contains("lambda_typo"));
    }

    #[test]
    fn ours_cg_zeroes_the_structure_weight() {
        let mut cfg = ExperimentConfig {
            ablation: AblationId::OursCg,
            ..Default::default()
        };
        cfg.apply_ablation().unwrap();
        assert_eq!(cfg.translation.lambda_mi, 0.0);
    }

    #[test]
    fn alt_target_swap_requires_the_alt_manifest() {
        let mut cfg = ExperimentConfig {
            ablation: AblationId::OursAltB,
            ..Default::default()
        };
        assert!(cfg.apply_ablation().is_err());
        cfg.data.domain_b_alt = Some(PathBuf::from("/tmp/altb/manifest.json"));
        cfg.apply_ablation().unwrap();
        assert_eq!(
            cfg.data.domain_b.as_deref(),
            Some(Path::new("/tmp/altb/manifest.json"))
        );
    }

    #[test]
    fn snapshot_hash_is_stable_and_content_sensitive() {
        let a = ExperimentConfig::default();
        let (text1, h1) = snapshot_with_hash(&a).unwrap();
        let (text2, h2) = snapshot_with_hash(&a).unwrap();
        assert_eq!(text1, text2);
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);

        let b = ExperimentConfig {
            seed: 99,
            ..Default::default()
        };
        assert_ne!(h1, snapshot_with_hash(&b).unwrap().1);
    }

    #[test]
    fn ablation_ids_parse_from_both_spellings() {
        assert_eq!("ours_cg".parse::<AblationId>().unwrap(), AblationId::OursCg);
        assert_eq!("ours-cg".parse::<AblationId>().unwrap(), AblationId::OursCg);
        assert!("nope".parse::<AblationId>().is_err());
        assert_eq!(AblationId::OursAltB.to_string(), "ours_alt_b");
    }
}
