use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{OpportunityPolicy, ParticipantMode, WorldConfig};
use crate::medium::{
    grid_topology, line_topology, load_topology, load_topology_file, CaptureModel, Channel,
    PathLoss, Topology, TESTBED_19,
};
use crate::timing::{EpochConfig, ProtocolTiming};
use crate::{Error, Micros, NodeId, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Grid { n: usize, spacing: f64 },
    Line { n: usize, rssi_dbm: f64, prr: f64 },
    /// JSON topology file, relative to the scenario file.
    File { path: PathBuf },
    /// The bundled 19-node two-floor layout.
    Testbed19,
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::Grid { n: 30, spacing: 300.0 }
    }
}

/// Everything a run needs. Unset fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_s: u64,
    pub topology: TopologySpec,
    pub path_loss: PathLoss,
    /// Overrides every link's reception ratio.
    pub link_prr: Option<f64>,
    pub controller: Option<NodeId>,
    pub epoch_period_us: Micros,
    /// Defaults to the epoch period.
    pub max_control_us: Option<Micros>,
    /// Start each epoch one inter-phase gap after the previous opportunity.
    pub back_to_back: bool,
    pub policy: OpportunityPolicy,
    pub collect_period_s: u64,
    pub flowtable_lifetime_s: u64,
    pub drop_probability: f64,
    pub drift_max_ppm: f64,
    pub timing: ProtocolTiming,
    pub capture: CaptureModel,
    pub channel_pool: Vec<Channel>,
    pub association_channels: Vec<Channel>,
    pub configure_targets: ParticipantMode,
    pub configure_shared: bool,
    pub react_load: ParticipantMode,
    pub retry_limit: u32,
    pub cold_boot: Vec<NodeId>,
    pub trace: bool,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let w = WorldConfig::default();
        ScenarioConfig {
            seed: 1,
            duration_s: 60,
            topology: TopologySpec::default(),
            path_loss: PathLoss::default(),
            link_prr: None,
            controller: None,
            epoch_period_us: w.epoch.period,
            max_control_us: None,
            back_to_back: false,
            policy: w.policy,
            collect_period_s: w.collect_period / 1_000_000,
            flowtable_lifetime_s: w.flowtable_lifetime / 1_000_000,
            drop_probability: 0.0,
            drift_max_ppm: 0.0,
            timing: w.timing,
            capture: w.capture,
            channel_pool: w.channel_pool,
            association_channels: w.association_channels,
            configure_targets: w.configure_targets,
            configure_shared: w.configure_shared,
            react_load: w.react_load,
            retry_limit: w.retry_limit,
            cold_boot: Vec::new(),
            trace: false,
            base_dir: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn duration_us(&self) -> Micros {
        self.duration_s * 1_000_000
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_s == 0 || self.epoch_period_us == 0 || self.collect_period_s == 0 || self.flowtable_lifetime_s == 0 {
            return Err(Error::Config("durations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::Config(format!("drop_probability {} outside [0,1]", self.drop_probability)));
        }
        if let Some(p) = self.link_prr {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("link_prr {p} outside [0,1]")));
            }
        }
        self.timing.validate()?;
        self.epoch()?;
        Ok(())
    }

    pub fn epoch(&self) -> Result<EpochConfig> {
        EpochConfig::new(self.epoch_period_us, self.max_control_us.unwrap_or(self.epoch_period_us))
    }

    pub fn build_topology(&self) -> Result<Topology> {
        let mut topo = match &self.topology {
            TopologySpec::Grid { n, spacing } => grid_topology(*n, *spacing, &self.path_loss)?,
            TopologySpec::Line { n, rssi_dbm, prr } => line_topology(*n, *rssi_dbm, *prr)?,
            TopologySpec::Testbed19 => load_topology(TESTBED_19, &self.path_loss)?,
            TopologySpec::File { path } => {
                let full = match &self.base_dir {
                    Some(base) if path.is_relative() => base.join(path),
                    _ => path.clone(),
                };
                load_topology_file(&full, &self.path_loss)?
            }
        };
        if let Some(p) = self.link_prr {
            topo.set_all_prr(p);
        }
        Ok(topo)
    }

    pub fn world_config(&self) -> Result<WorldConfig> {
        Ok(WorldConfig {
            timing: self.timing,
            epoch: self.epoch()?,
            capture: self.capture,
            drop_probability: self.drop_probability,
            channel_pool: self.channel_pool.clone(),
            association_channels: self.association_channels.clone(),
            controller: self.controller,
            policy: self.policy.clone(),
            collect_period: self.collect_period_s * 1_000_000,
            flowtable_lifetime: self.flowtable_lifetime_s * 1_000_000,
            configure_targets: self.configure_targets,
            configure_shared: self.configure_shared,
            react_load: self.react_load,
            retry_limit: self.retry_limit,
            drift_max_ppm: self.drift_max_ppm,
            cold_boot: self.cold_boot.clone(),
            trace: self.trace,
        })
    }
}
