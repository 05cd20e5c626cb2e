//! Pipeline configuration with `desk` and `paper` profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::config_hash;
use crate::curriculum::StageConfig;
use crate::dual_lm::{LmConfig, Sampling};
use crate::error::{Error, Result};
use crate::flow_decoder::{FlowConfig, VaeConfig};
use crate::metrics::{CaspConfig, Thresholds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub duration_s: f64,
    /// Curriculum training scenes (also the VAE and flow training set).
    pub n_train: usize,
    /// Unseen-speaker scenes for probes, generation and evaluation.
    pub n_heldout: usize,
    pub n_casp_train: usize,
    pub n_casp_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub sampling: Sampling,
    pub euler_steps: usize,
    pub write_wav: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub profile: String,
    pub seed: u64,
    pub data: DataConfig,
    pub lm: LmConfig,
    pub stages: Vec<StageConfig>,
    pub vae: VaeConfig,
    pub flow: FlowConfig,
    pub casp: CaspConfig,
    pub generate: GenerateConfig,
    pub thresholds: Thresholds,
}

/// Multiplier applied to every stage's published learning-rate range at
/// desk scale.
pub const DESK_LR_FACTOR: f64 = 10.0;

impl PipelineConfig {
    pub fn desk() -> Self {
        Self {
            profile: "desk".into(),
            seed: 0,
            data: DataConfig { duration_s: 1.0, n_train: 32, n_heldout: 16, n_casp_train: 2000, n_casp_eval: 100 },
            lm: LmConfig::default(),
            stages: vec![
                StageConfig::desk(1, DESK_LR_FACTOR, 300, 8),
                StageConfig::desk(2, DESK_LR_FACTOR, 400, 8),
                StageConfig::desk(3, DESK_LR_FACTOR, 600, 8),
            ],
            vae: VaeConfig::default(),
            flow: FlowConfig::default(),
            casp: CaspConfig { steps: 1200, ..CaspConfig::default() },
            generate: GenerateConfig { sampling: Sampling::Greedy, euler_steps: 32, write_wav: false },
            thresholds: Thresholds::default(),
        }
    }

    /// Published model sizes and schedules. Loadable and hashable, far too
    /// large to train here.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.profile = "paper".into();
        cfg.lm = LmConfig { d: 2048, layers: 24, heads: 16, d_ff: 8192, ..LmConfig::default() };
        cfg.stages = (1..=3)
            .map(|s| {
                let mut st = StageConfig::desk(s, 1.0, 0, 192);
                st.warmup = 4000;
                st.epochs = Some(40);
                st
            })
            .collect();
        cfg.flow = FlowConfig { d: 2048, layers: 8, ..FlowConfig::default() };
        cfg
    }

    /// Small but complete configuration for smoke tests.
    pub fn smoke() -> Self {
        let mut cfg = Self::desk();
        cfg.profile = "smoke".into();
        cfg.data = DataConfig { duration_s: 1.0, n_train: 32, n_heldout: 4, n_casp_train: 40, n_casp_eval: 10 };
        cfg.lm = LmConfig { d: 16, layers: 1, heads: 2, d_ff: 32, ..LmConfig::default() };
        cfg.stages = (1..=3).map(|s| StageConfig::desk(s, DESK_LR_FACTOR, 6, 2)).collect();
        cfg.vae.steps = 20;
        cfg.flow.steps = 10;
        cfg.casp = CaspConfig { steps: 10, batch: 8, layers: 1, ..CaspConfig::default() };
        cfg
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::InvalidArgument(format!("unknown profile `{other}` (desk, paper, smoke)"))),
        }
    }

    /// A JSON file holding either a full config or `{"profile": "<name>"}`
    /// merged over that profile.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        let name = value.get("profile").and_then(|v| v.as_str()).unwrap_or("desk");
        let mut base = serde_json::to_value(Self::profile(name)?)?;
        merge(&mut base, value);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != 3 {
            return Err(Error::InvalidArgument(format!("expected 3 stage configs, got {}", self.stages.len())));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.stage as usize != i + 1 {
                return Err(Error::InvalidArgument(format!("stage entry {i} is tagged stage {}", s.stage)));
            }
            if self.profile != "paper" {
                s.validate()?;
            }
        }
        let d = &self.data;
        if d.n_train == 0 || d.n_heldout == 0 || d.n_casp_train < 2 || d.n_casp_eval == 0 {
            return Err(Error::InvalidArgument("dataset sizes must be positive (CASP training needs 2 pairs)".into()));
        }
        if crate::synthdata::frames_for(d.duration_s) > self.lm.max_t {
            return Err(Error::InvalidArgument(format!("{} s scenes exceed the LM window of {} tokens", d.duration_s, self.lm.max_t)));
        }
        if self.flow.d_lat != self.vae.d_lat || self.flow.vocab != self.lm.codec_vocab {
            return Err(Error::InvalidArgument("flow, VAE and LM dimensions disagree".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_differ() {
        for p in ["desk", "paper", "smoke"] {
            PipelineConfig::profile(p).unwrap().validate().unwrap();
        }
        assert_ne!(PipelineConfig::desk().hash(), PipelineConfig::paper().hash());
        assert_eq!(PipelineConfig::paper().stages[0].lr_max, 2e-4);
        assert!(PipelineConfig::profile("huge").is_err());
    }

    #[test]
    fn partial_json_merges_over_profile() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"profile": "smoke", "seed": 9, "data": {"n_heldout": 3}}"#).unwrap();
        let c = PipelineConfig::load(&p).unwrap();
        assert_eq!((c.seed, c.data.n_heldout, c.data.n_train), (9, 3, 32));
        std::fs::write(&p, r#"{"data": {"n_train": "many"}}"#).unwrap();
        assert!(PipelineConfig::load(&p).unwrap_err().is_validation());
    }
}
