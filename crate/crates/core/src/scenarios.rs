//! DER operating modes and placements.
//!
//! A base [`Network`] becomes an [`EffectiveCase`] by one of three
//! transformations: DERs are ignored (base), net against the load at their
//! node (home microgrid), or become dispatchable generators (community
//! microgrid).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Generator, GeneratorKind, Network};
use crate::CoreError;

/// Fraction of the original load that always remains after netting.
pub const HOME_LOAD_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementName {
    Uniform,
    Clustered,
    Custom,
}

impl fmt::Display for PlacementName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlacementName::Uniform => "uniform",
            PlacementName::Clustered => "clustered",
            PlacementName::Custom => "custom",
        })
    }
}

/// Where DERs sit and how large they are. `der_nodes` is a multiset: a bus
/// listed twice hosts two DERs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerPlacement {
    pub name: PlacementName,
    pub der_nodes: Vec<usize>,
    /// Active power rating of each DER in MW.
    pub p_max: f64,
    /// Reactive limits of each DER in MVAr.
    pub q_min: f64,
    pub q_max: f64,
}

impl DerPlacement {
    /// Number of DER units at each bus.
    pub fn units_per_bus(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for &b in &self.der_nodes {
            *m.entry(b).or_insert(0) += 1;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerMode {
    Base,
    HomeMicrogrid,
    CommunityMicrogrid,
}

impl DerMode {
    pub const ALL: [DerMode; 3] = [DerMode::Base, DerMode::HomeMicrogrid, DerMode::CommunityMicrogrid];

    pub fn as_str(&self) -> &'static str {
        match self {
            DerMode::Base => "base",
            DerMode::HomeMicrogrid => "home",
            DerMode::CommunityMicrogrid => "community",
        }
    }
}

impl fmt::Display for DerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DerMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(DerMode::Base),
            "home" | "home_microgrid" => Ok(DerMode::HomeMicrogrid),
            "community" | "community_microgrid" => Ok(DerMode::CommunityMicrogrid),
            other => Err(CoreError::Parse(format!("unknown DER mode '{other}'"))),
        }
    }
}

/// A network after one DER mode has been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCase {
    pub network: Network,
    pub mode: DerMode,
    pub placement: DerPlacement,
    pub der_demand_ids: BTreeSet<usize>,
}

impl EffectiveCase {
    pub fn label(&self) -> String {
        format!("{}-{}", self.placement.name, self.mode)
    }

    /// Demands with `has_der` set from the placement, in every mode.
    pub fn grouped_demands(&self) -> Vec<crate::model::Demand> {
        let mut demands = self.network.demands.clone();
        for d in &mut demands {
            d.has_der = self.der_demand_ids.contains(&d.id);
        }
        demands
    }
}

/// Load left at a node after its own DER output is subtracted; never less
/// than 1% of the original load.
pub fn home_microgrid_load(d_org: f64, p_der: f64) -> Result<f64, CoreError> {
    if !(d_org >= 0.0) || !(p_der >= 0.0) {
        return Err(CoreError::NegativeInput(format!("home_microgrid_load({d_org}, {p_der})")));
    }
    Ok((HOME_LOAD_FLOOR * d_org).max(d_org - p_der))
}

/// Applies a DER operating mode to a base network.
pub fn apply_der_mode(network: &Network, placement: &DerPlacement, mode: DerMode) -> Result<EffectiveCase, CoreError> {
    if network.demands.iter().any(|d| d.has_der) || network.generators.iter().any(|g| g.kind == GeneratorKind::CustomerDer)
    {
        return Err(CoreError::AlreadyTransformed);
    }
    let buses: BTreeSet<usize> = network.buses.iter().map(|b| b.id).collect();
    if let Some(&bad) = placement.der_nodes.iter().find(|b| !buses.contains(b)) {
        return Err(CoreError::UnknownId { kind: "bus", id: bad });
    }
    if !(placement.p_max >= 0.0) || !(placement.q_min <= placement.q_max) {
        return Err(CoreError::NegativeInput(format!(
            "DER rating p_max={} q=[{}, {}]",
            placement.p_max, placement.q_min, placement.q_max
        )));
    }
    let mut net = network.clone();
    let base = net.base_mva;
    let units = placement.units_per_bus();
    let der_demand_ids: BTreeSet<usize> = net.demands.iter().filter(|d| units.contains_key(&d.bus)).map(|d| d.id).collect();
    if mode == DerMode::Base {
        // DERs are ignored, but the demands behind them still form the DER group
        return Ok(EffectiveCase { network: net, mode, placement: placement.clone(), der_demand_ids });
    }
    for d in &mut net.demands {
        if let Some(&k) = units.get(&d.bus) {
            d.has_der = true;
            if mode == DerMode::HomeMicrogrid {
                let cap = k as f64 * placement.p_max / base;
                let p_new = home_microgrid_load(d.p, cap)?;
                if d.p > 0.0 {
                    d.q *= p_new / d.p;
                }
                d.p = p_new;
            }
        }
    }
    if mode == DerMode::CommunityMicrogrid {
        let mut next_id = net.generators.iter().map(|g| g.id + 1).max().unwrap_or(1);
        for &bus in &placement.der_nodes {
            net.generators.push(Generator {
                id: next_id,
                bus,
                p_min: 0.0,
                p_max: placement.p_max / base,
                q_min: placement.q_min / base,
                q_max: placement.q_max / base,
                kind: GeneratorKind::CustomerDer,
                damaged: false,
            });
            next_id += 1;
        }
    }
    Ok(EffectiveCase { network: net, mode, placement: placement.clone(), der_demand_ids })
}

/// All placement/mode combinations, placements in the outer loop.
pub fn enumerate_cases(network: &Network, placements: &[DerPlacement], modes: &[DerMode]) -> Result<Vec<EffectiveCase>, CoreError> {
    let mut out = Vec::with_capacity(placements.len() * modes.len());
    for p in placements {
        for &m in modes {
            out.push(apply_der_mode(network, p, m)?);
        }
    }
    Ok(out)
}

/// Scenario document: a placement and optionally a mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub placement: DerPlacement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<DerMode>,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioFile, CoreError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Parse(format!("{}: {e}", path.display())))
}

/// Damage document listing the failed lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DamageFile {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub damaged_lines: Vec<usize>,
}

pub fn load_damage(path: impl AsRef<Path>) -> Result<DamageFile, CoreError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Parse(format!("{}: {e}", path.display())))
}
