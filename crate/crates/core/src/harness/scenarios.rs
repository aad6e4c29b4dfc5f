//! Scenarios shipped with the simulator.

use super::config::{ConfigError, ScenarioConfig};

pub const SHIPPED: &[(&str, &str)] = &[
    ("coincidental_multicast", include_str!("../../../../scenarios/coincidental_multicast.json")),
    ("hls_failover", include_str!("../../../../scenarios/hls_failover.json")),
    ("iptv_failover", include_str!("../../../../scenarios/iptv_failover.json")),
    ("trial_topology", include_str!("../../../../scenarios/trial_topology.json")),
];

/// Parses one of the shipped scenarios by name.
pub fn shipped(name: &str) -> Option<Result<ScenarioConfig, ConfigError>> {
    SHIPPED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioConfig::from_json(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenarios_validate() {
        for (name, text) in SHIPPED {
            let cfg = ScenarioConfig::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, *name);
        }
    }
}
