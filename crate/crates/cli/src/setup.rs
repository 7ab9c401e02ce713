use std::path::Path;

use mamimo_csi::channel::{load_scatterers, ChannelConfig, NoiseSpec, Scatterer};
use mamimo_csi::config::KeyValues;
use mamimo_csi::precoding::DEFAULT_NOISE_DBM;
use mamimo_csi::topology::{build_topology, SceneLayout, TopologyParams};
use mamimo_csi::{ArrayGeometry, LinkBudget, RadioConfig, Result, TopologyKind};

/// Everything a config file can set.
#[derive(Debug, Clone)]
pub struct Setup {
    pub layout: SceneLayout,
    pub params: TopologyParams,
    pub radio: RadioConfig,
    pub budget: LinkBudget,
    pub channel: ChannelConfig,
}

impl Setup {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let kv = match path {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        let layout = SceneLayout::from_key_values(&kv)?;
        let params = TopologyParams::from_key_values(&kv, &layout)?;
        let radio = RadioConfig::from_key_values(&kv)?;
        let noise_dbm = kv.parsed("noise_dbm")?.unwrap_or(DEFAULT_NOISE_DBM);
        let budget = LinkBudget::from_dbm(radio.tx_power_dbm + radio.rx_gain_db, noise_dbm);
        budget.validate()?;
        let channel = ChannelConfig {
            pattern_exponent: kv.parsed("pattern_exponent")?.unwrap_or(0.0),
            rician_enabled: kv.parsed("rician_enabled")?.unwrap_or(false),
        };
        Ok(Self { layout, params, radio, budget, channel })
    }

    pub fn geometry(&self, kind: impl Into<TopologyKind>) -> Result<ArrayGeometry> {
        build_topology(kind.into(), &self.params)
    }

    /// Channel model with command-line overrides applied. A scatterer file
    /// switches multipath on.
    pub fn channel_with(
        &self,
        pattern_exponent: Option<f64>,
        scatterers: Option<&Path>,
    ) -> Result<(ChannelConfig, Vec<Scatterer>)> {
        let mut cfg = self.channel;
        if let Some(q) = pattern_exponent {
            cfg.pattern_exponent = q;
        }
        let scatterers = match scatterers {
            Some(p) => {
                cfg.rician_enabled = true;
                load_scatterers(p)?
            }
            None => Vec::new(),
        };
        Ok((cfg, scatterers))
    }
}

pub fn noise_spec(snr_db: Option<f64>, seed: u64) -> NoiseSpec {
    match snr_db {
        Some(snr_db) => NoiseSpec { snr_db, seed },
        None => NoiseSpec::noiseless(),
    }
}
