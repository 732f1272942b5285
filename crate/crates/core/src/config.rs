//! Experiment configuration (TOML, unknown keys rejected).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analysis::{CaseRole, CaseSpec};
use crate::error::{DpmError, Result};
use crate::filter::FilterSpec;
use crate::grid::GridSpec;
use crate::io::config_hash;
use crate::neural::{DerivativeSet, OutputMode};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dns_n: usize,
    pub filter_ratio: usize,
    pub domain_length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dns_n: 64,
            filter_ratio: 4,
            domain_length: 2.0 * std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Reference dynamic viscosity μ₀; cases scale it.
    pub base_viscosity: f64,
    pub density: f64,
    /// Target rms velocity of the initial field.
    pub u_rms0: f64,
    /// Peak wavenumber of the initial spectrum.
    pub peak_wavenumber: f64,
    /// CFL number of the DNS step, fixed from the first case's initial field.
    pub cfl: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            base_viscosity: 0.02,
            density: 1.0,
            u_rms0: 1.0,
            peak_wavenumber: 3.0,
            cfl: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnsConfig {
    /// Decay before the first stored snapshot, in initial eddy-turnover times.
    pub initial_decay: f64,
    /// Stored snapshots per case.
    pub snapshots: usize,
    /// LES steps between stored snapshots; defaults to the training window.
    pub snapshot_les_steps: Option<usize>,
    /// Also write the fine fields (otherwise only coarse targets are kept).
    pub store_fine: bool,
}

impl Default for DnsConfig {
    fn default() -> Self {
        Self {
            initial_decay: 0.05,
            snapshots: 24,
            snapshot_les_steps: None,
            store_fine: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub derivative_set: DerivativeSet,
    /// `direct`, `tensor_divergence` or `k18`.
    pub output_mode: String,
    pub output_scale: f64,
    pub init_seed: u64,
    /// Fit feature scales to the training data (unit scales otherwise).
    pub fit_feature_scales: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            derivative_set: DerivativeSet::PaperText,
            output_mode: "tensor_divergence".into(),
            output_scale: 0.01,
            init_seed: 1,
            fit_feature_scales: true,
        }
    }
}

impl ModelConfig {
    pub fn mode(&self) -> Result<OutputMode> {
        OutputMode::parse(&self.output_mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub smagorinsky_cs: f64,
    pub include_dynamic: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            smagorinsky_cs: 0.18,
            include_dynamic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/desk") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub flow: FlowConfig,
    pub dns: DnsConfig,
    pub cases: Vec<CaseSpec>,
    pub training: TrainConfig,
    pub model: ModelConfig,
    pub evaluation: EvalConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let case = |r: f64, seed: u64, role| CaseSpec {
            viscosity_ratio: r,
            seed,
            role,
        };
        Self {
            grid: GridConfig::default(),
            flow: FlowConfig::default(),
            dns: DnsConfig::default(),
            cases: vec![
                case(0.5, 1, CaseRole::Train),
                case(1.0, 2, CaseRole::Train),
                case(2.0, 3, CaseRole::Train),
                case(0.75, 4, CaseRole::Test),
                case(1.25, 5, CaseRole::Test),
                case(1.5, 6, CaseRole::Test),
            ],
            training: TrainConfig {
                les_to_dns_step_ratio: 2,
                ..TrainConfig::default()
            },
            model: ModelConfig::default(),
            evaluation: EvalConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| DpmError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DpmError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the canonical serialization, embedded in every artifact.
    pub fn hash(&self) -> u64 {
        config_hash(&self.to_toml())
    }

    /// Hash of the settings that determine the generated data (grid, flow,
    /// DNS schedule, cases and LES step spacing).
    pub fn data_hash(&self) -> u64 {
        #[derive(Serialize)]
        struct Key<'a> {
            grid: &'a GridConfig,
            flow: &'a FlowConfig,
            dns: &'a DnsConfig,
            cases: &'a [CaseSpec],
            les_to_dns_step_ratio: usize,
            snapshot_les_steps: usize,
        }
        let key = Key {
            grid: &self.grid,
            flow: &self.flow,
            dns: &self.dns,
            cases: &self.cases,
            les_to_dns_step_ratio: self.training.les_to_dns_step_ratio,
            snapshot_les_steps: self.snapshot_les_steps(),
        };
        config_hash(&toml::to_string(&key).expect("data key serializes"))
    }

    // negated comparisons so NaN fails validation
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DpmError::Config(m));
        let fine = GridSpec::new(self.grid.dns_n, self.grid.domain_length)
            .map_err(|e| DpmError::Config(e.to_string()))?;
        FilterSpec::new(self.grid.filter_ratio)
            .and_then(|f| f.coarse_grid(fine))
            .map_err(|e| DpmError::Config(e.to_string()))?;
        let f = &self.flow;
        if !(f.base_viscosity > 0.0 && f.density > 0.0 && f.u_rms0 > 0.0 && f.peak_wavenumber > 0.0) {
            return bad("flow parameters must be positive".into());
        }
        if !(f.cfl > 0.0 && f.cfl <= 1.0) {
            return bad(format!("cfl = {} must lie in (0, 1]", f.cfl));
        }
        if self.cases.is_empty() {
            return bad("at least one case is required".into());
        }
        if let Some(c) = self.cases.iter().find(|c| !(c.viscosity_ratio > 0.0)) {
            return bad(format!("case viscosity ratio {} must be positive", c.viscosity_ratio));
        }
        if self.dns.initial_decay < 0.0 {
            return bad("initial_decay must be nonnegative".into());
        }
        if self.dns.snapshots < 2 {
            return bad("need at least two snapshots per case".into());
        }
        if let Some(s) = self.dns.snapshot_les_steps {
            if s == 0 || !self.training.window_steps.is_multiple_of(s) {
                return bad(format!(
                    "snapshot_les_steps = {s} must divide window_steps = {}",
                    self.training.window_steps
                ));
            }
        }
        self.training.validate()?;
        if self.model.hidden == 0 {
            return bad("model.hidden must be at least 1".into());
        }
        self.model.mode()?;
        if !(self.model.output_scale > 0.0) {
            return bad("model.output_scale must be positive".into());
        }
        if !(self.evaluation.smagorinsky_cs > 0.0) {
            return bad("evaluation.smagorinsky_cs must be positive".into());
        }
        Ok(())
    }

    pub fn fine_grid(&self) -> GridSpec {
        GridSpec::new(self.grid.dns_n, self.grid.domain_length).expect("validated")
    }

    pub fn filter(&self) -> FilterSpec {
        FilterSpec::new(self.grid.filter_ratio).expect("validated")
    }

    pub fn snapshot_les_steps(&self) -> usize {
        self.dns.snapshot_les_steps.unwrap_or(self.training.window_steps)
    }

    pub fn cases_with_role(&self, role: CaseRole) -> impl Iterator<Item = &CaseSpec> {
        self.cases.iter().filter(move |c| c.role == role)
    }

    /// Stable identifier used in file names.
    pub fn case_id(case: &CaseSpec) -> String {
        let role = match case.role {
            CaseRole::Train => "train",
            CaseRole::Test => "test",
        };
        format!("{role}_mu{:.4}_s{}", case.viscosity_ratio, case.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = ExperimentConfig::from_toml_str("[grid]\ndns_n = 32\n[training]\nwindow_steps = 4\n").unwrap();
        assert_eq!(c.grid.dns_n, 32);
        assert_eq!(c.grid.filter_ratio, 4);
        assert_eq!(c.training.window_steps, 4);
        assert_eq!(c.snapshot_les_steps(), 4);
    }

    #[test]
    fn misspelled_key_is_named() {
        let e = ExperimentConfig::from_toml_str("[grid]\ndns_nn = 32\n").unwrap_err();
        assert!(matches!(e, DpmError::Config(_)));
        assert!(e.to_string().contains("dns_nn"), "{e}");
        let e = ExperimentConfig::from_toml_str("[training]\nlearnig_rate = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("learnig_rate"), "{e}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "[grid]\ndns_n = 30\n",
            "[grid]\ndns_n = 8\n",
            "[flow]\ncfl = 2.0\n",
            "[model]\noutput_mode = \"weird\"\n",
            "cases = []\n",
            "[dns]\nsnapshot_les_steps = 3\n",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.training.seed = 99;
        assert_ne!(a.hash(), b.hash());
    }
}
