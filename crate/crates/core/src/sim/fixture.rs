use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use super::{ClusterState, Resource, ResourceKey, SimError};

/// Declarative cluster fixture, YAML like scenario documents.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub valid_images: BTreeSet<String>,
    #[serde(default)]
    pub credentials: BTreeMap<String, String>,
    pub resources: BTreeMap<ResourceKey, serde_json::Value>,
}

impl Topology {
    pub fn build(&self) -> Result<ClusterState, SimError> {
        let mut resources = BTreeMap::new();
        for (key, spec) in &self.resources {
            let res = Resource::from_value(key.kind, spec.clone())
                .map_err(|e| SimError::Topology(format!("{key}: {e}")))?;
            resources.insert(key.clone(), res);
        }
        Ok(ClusterState::new(resources, self.valid_images.clone(), self.credentials.clone()))
    }
}

pub fn load_topology(document: &str) -> Result<ClusterState, SimError> {
    let topo: Topology = serde_yaml::from_str(document).map_err(|e| SimError::Topology(e.to_string()))?;
    topo.build()
}

pub(crate) const BASELINE: &str = include_str!("../../data/topology/baseline.yaml");

impl ClusterState {
    /// The shipped baseline fixture.
    pub fn baseline() -> ClusterState {
        load_topology(BASELINE).expect("shipped baseline topology is valid")
    }
}
