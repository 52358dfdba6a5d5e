//! Feeder data model, JSON case format and structural validation.
//!
//! A [`Network`] stores every electrical quantity in per-unit on
//! `base_mva`. Case files use physical units (MW, MVAr, MVA) for powers and
//! per-unit values for admittances; [`parse_case`] and [`case_to_json`]
//! convert between the two.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CoreError;

/// Power factor assumed for demands whose reactive power is not given.
pub const DEFAULT_POWER_FACTOR: f64 = 0.95;
pub const DEFAULT_V_MIN: f64 = 0.9;
pub const DEFAULT_V_MAX: f64 = 1.1;
pub const DEFAULT_ANGLE_LIMIT: f64 = 0.52;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub is_reference: bool,
    pub v_min: f64,
    pub v_max: f64,
    pub damaged: bool,
}

/// A branch with the usual pi-model parameters. `b` and `g` are the series
/// susceptance and conductance; series susceptance is negative for an
/// inductive branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub b: f64,
    pub g: f64,
    pub g_fr: f64,
    pub b_fr: f64,
    pub g_to: f64,
    pub b_to: f64,
    pub t_m: f64,
    pub t_r: f64,
    pub t_i: f64,
    pub thermal_limit: f64,
    pub angle_diff_min: f64,
    pub angle_diff_max: f64,
    pub damaged: bool,
    /// Marks the substation transformer, which is a branch but not a
    /// distribution line.
    pub transformer: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Substation,
    UtilityDer,
    CustomerDer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub kind: GeneratorKind,
    pub damaged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub id: usize,
    pub bus: usize,
    pub p: f64,
    pub q: f64,
    pub has_der: bool,
    pub damaged: bool,
}

/// An immutable feeder description in per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub demands: Vec<Demand>,
}

/// Periods of the restoration horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub n_periods: usize,
    pub step_hours: f64,
}

impl TimeGrid {
    /// The shortest horizon that lets `damaged` components be repaired with
    /// `per_period` repairs allowed in each period after the first.
    pub fn for_damage(damaged: usize, per_period: usize) -> Self {
        let per = per_period.max(1);
        TimeGrid { n_periods: 1 + damaged.div_ceil(per), step_hours: 1.0 }
    }
}

/// One failed structural check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub element: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, element: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { element: element.into(), message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl Network {
    pub fn reference_bus(&self) -> Option<&Bus> {
        self.buses.iter().find(|b| b.is_reference)
    }

    /// Map from bus id to position in `buses`.
    pub fn bus_index(&self) -> BTreeMap<usize, usize> {
        self.buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect()
    }

    pub fn line(&self, id: usize) -> Option<&Line> {
        self.lines.iter().find(|l| l.id == id)
    }

    /// Branches that are distribution lines, i.e. not the substation transformer.
    pub fn distribution_lines(&self) -> impl Iterator<Item = &Line> {
        self.lines.iter().filter(|l| !l.transformer)
    }

    /// Total active demand in MW.
    pub fn total_demand_mw(&self) -> f64 {
        self.demands.iter().map(|d| d.p).sum::<f64>() * self.base_mva
    }

    pub fn damaged_line_ids(&self) -> Vec<usize> {
        self.lines.iter().filter(|l| l.damaged).map(|l| l.id).collect()
    }

    pub fn damaged_count(&self) -> usize {
        self.buses.iter().filter(|b| b.damaged).count()
            + self.lines.iter().filter(|l| l.damaged).count()
            + self.generators.iter().filter(|g| g.damaged).count()
            + self.demands.iter().filter(|d| d.damaged).count()
    }

    /// Checks every structural invariant and lists all violations.
    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        if !(self.base_mva > 0.0) {
            r.push("network", format!("base_mva must be positive, got {}", self.base_mva));
        }
        let mut bus_ids = BTreeSet::new();
        for b in &self.buses {
            let el = format!("bus {}", b.id);
            if !bus_ids.insert(b.id) {
                r.push(&el, "duplicated bus id");
            }
            if !(b.v_min > 0.0 && b.v_min < b.v_max) {
                r.push(&el, format!("voltage bounds must satisfy 0 < v_min < v_max, got [{}, {}]", b.v_min, b.v_max));
            }
        }
        let refs: Vec<usize> = self.buses.iter().filter(|b| b.is_reference).map(|b| b.id).collect();
        if refs.len() != 1 {
            r.push("network", format!("exactly one reference bus required, found {} {:?}", refs.len(), refs));
        }
        let mut line_ids = BTreeSet::new();
        for l in &self.lines {
            let el = format!("line {}", l.id);
            if !line_ids.insert(l.id) {
                r.push(&el, "duplicated line id");
            }
            if l.from_bus == l.to_bus {
                r.push(&el, "from_bus equals to_bus");
            }
            for end in [l.from_bus, l.to_bus] {
                if !bus_ids.contains(&end) {
                    r.push(&el, format!("references unknown bus {end}"));
                }
            }
            if (l.t_m * l.t_m - (l.t_r * l.t_r + l.t_i * l.t_i)).abs() > 1e-9 * (1.0 + l.t_m * l.t_m) {
                r.push(&el, "tap components inconsistent: t_m^2 != t_r^2 + t_i^2");
            }
            if !(l.t_m > 0.0) {
                r.push(&el, "tap magnitude must be positive");
            }
            if !(l.thermal_limit > 0.0) {
                r.push(&el, format!("thermal limit must be positive, got {}", l.thermal_limit));
            }
            if !(l.angle_diff_min < 0.0 && 0.0 < l.angle_diff_max) {
                r.push(&el, "angle limits must satisfy min < 0 < max");
            }
            let params = [l.b, l.g, l.g_fr, l.b_fr, l.g_to, l.b_to, l.t_m, l.t_r, l.t_i, l.thermal_limit];
            if params.iter().any(|v| !v.is_finite()) {
                r.push(&el, "non-finite electrical parameter");
            }
        }
        let mut gen_ids = BTreeSet::new();
        for g in &self.generators {
            let el = format!("generator {}", g.id);
            if !gen_ids.insert(g.id) {
                r.push(&el, "duplicated generator id");
            }
            if !bus_ids.contains(&g.bus) {
                r.push(&el, format!("references unknown bus {}", g.bus));
            }
            if !(g.p_min <= g.p_max) {
                r.push(&el, "p_min exceeds p_max");
            }
            if !(g.q_min <= g.q_max) {
                r.push(&el, "q_min exceeds q_max");
            }
            if g.damaged && g.kind == GeneratorKind::CustomerDer {
                r.push(&el, "customer-owned DERs cannot be damaged");
            }
        }
        let mut dem_ids = BTreeSet::new();
        for d in &self.demands {
            let el = format!("demand {}", d.id);
            if !dem_ids.insert(d.id) {
                r.push(&el, "duplicated demand id");
            }
            if !bus_ids.contains(&d.bus) {
                r.push(&el, format!("references unknown bus {}", d.bus));
            }
            if !(d.p >= 0.0) {
                r.push(&el, format!("active demand must be non-negative, got {}", d.p));
            }
        }
        // radiality
        if !self.buses.is_empty() && self.lines.len() != self.buses.len() - 1 {
            r.push(
                "network",
                format!(
                    "not radial: {} branches on {} buses (a tree needs {})",
                    self.lines.len(),
                    self.buses.len(),
                    self.buses.len() - 1
                ),
            );
        }
        if let Some(rb) = self.reference_bus() {
            let unreached = self.unreachable_from(rb.id);
            if !unreached.is_empty() {
                r.push("network", format!("not connected: buses {unreached:?} unreachable from the reference bus"));
            }
        }
        r
    }

    fn unreachable_from(&self, root: usize) -> Vec<usize> {
        let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for l in &self.lines {
            adj.entry(l.from_bus).or_default().push(l.to_bus);
            adj.entry(l.to_bus).or_default().push(l.from_bus);
        }
        let mut seen = BTreeSet::from([root]);
        let mut queue = VecDeque::from([root]);
        while let Some(b) = queue.pop_front() {
            for &nb in adj.get(&b).map(|v| v.as_slice()).unwrap_or(&[]) {
                if seen.insert(nb) {
                    queue.push_back(nb);
                }
            }
        }
        self.buses.iter().map(|b| b.id).filter(|id| !seen.contains(id)).collect()
    }
}

/// Returns a copy with exactly the listed lines damaged and every other
/// component undamaged.
pub fn apply_damage(network: &Network, damaged_line_ids: &[usize]) -> Result<Network, CoreError> {
    let known: BTreeSet<usize> = network.lines.iter().map(|l| l.id).collect();
    if let Some(&bad) = damaged_line_ids.iter().find(|id| !known.contains(id)) {
        return Err(CoreError::UnknownId { kind: "line", id: bad });
    }
    let set: BTreeSet<usize> = damaged_line_ids.iter().copied().collect();
    let mut out = network.clone();
    for l in &mut out.lines {
        l.damaged = set.contains(&l.id);
    }
    for b in &mut out.buses {
        b.damaged = false;
    }
    for g in &mut out.generators {
        g.damaged = false;
    }
    for d in &mut out.demands {
        d.damaged = false;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// case file format

fn default_v_min() -> f64 {
    DEFAULT_V_MIN
}
fn default_v_max() -> f64 {
    DEFAULT_V_MAX
}
fn default_angle_min() -> f64 {
    -DEFAULT_ANGLE_LIMIT
}
fn default_angle_max() -> f64 {
    DEFAULT_ANGLE_LIMIT
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusRecord {
    id: usize,
    #[serde(default)]
    is_reference: bool,
    #[serde(default = "default_v_min")]
    v_min: f64,
    #[serde(default = "default_v_max")]
    v_max: f64,
    #[serde(default)]
    damaged: bool,
}

/// Admittances and taps are per-unit; `thermal_limit` is in MVA.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineRecord {
    id: usize,
    from_bus: usize,
    to_bus: usize,
    b: f64,
    g: f64,
    #[serde(default)]
    g_fr: f64,
    #[serde(default)]
    b_fr: f64,
    #[serde(default)]
    g_to: f64,
    #[serde(default)]
    b_to: f64,
    #[serde(default = "one")]
    t_m: f64,
    #[serde(default = "one")]
    t_r: f64,
    #[serde(default)]
    t_i: f64,
    thermal_limit: f64,
    #[serde(default = "default_angle_min")]
    angle_diff_min: f64,
    #[serde(default = "default_angle_max")]
    angle_diff_max: f64,
    #[serde(default)]
    damaged: bool,
    #[serde(default)]
    transformer: bool,
}

/// Limits in MW and MVAr.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorRecord {
    id: usize,
    bus: usize,
    p_min: f64,
    p_max: f64,
    q_min: f64,
    q_max: f64,
    kind: GeneratorKind,
    #[serde(default)]
    damaged: bool,
}

/// `p` in MW, `q` in MVAr. A missing `q` is filled at the default power factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandRecord {
    id: usize,
    bus: usize,
    p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    #[serde(default)]
    has_der: bool,
    #[serde(default)]
    damaged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    #[serde(default)]
    name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
    base_mva: f64,
    buses: Vec<BusRecord>,
    lines: Vec<LineRecord>,
    #[serde(default)]
    generators: Vec<GeneratorRecord>,
    #[serde(default)]
    demands: Vec<DemandRecord>,
}

/// Reactive power drawn by `p` at the default lagging power factor.
pub fn default_reactive(p: f64) -> f64 {
    p * DEFAULT_POWER_FACTOR.acos().tan()
}

/// Parses and validates a case document.
pub fn parse_case(text: &str) -> Result<Network, CoreError> {
    let case: CaseFile = serde_json::from_str(text).map_err(|e| CoreError::Parse(e.to_string()))?;
    let base = case.base_mva;
    let net = Network {
        name: case.name,
        base_mva: base,
        buses: case
            .buses
            .into_iter()
            .map(|b| Bus { id: b.id, is_reference: b.is_reference, v_min: b.v_min, v_max: b.v_max, damaged: b.damaged })
            .collect(),
        lines: case
            .lines
            .into_iter()
            .map(|l| Line {
                id: l.id,
                from_bus: l.from_bus,
                to_bus: l.to_bus,
                b: l.b,
                g: l.g,
                g_fr: l.g_fr,
                b_fr: l.b_fr,
                g_to: l.g_to,
                b_to: l.b_to,
                t_m: l.t_m,
                t_r: l.t_r,
                t_i: l.t_i,
                thermal_limit: l.thermal_limit / base,
                angle_diff_min: l.angle_diff_min,
                angle_diff_max: l.angle_diff_max,
                damaged: l.damaged,
                transformer: l.transformer,
            })
            .collect(),
        generators: case
            .generators
            .into_iter()
            .map(|g| Generator {
                id: g.id,
                bus: g.bus,
                p_min: g.p_min / base,
                p_max: g.p_max / base,
                q_min: g.q_min / base,
                q_max: g.q_max / base,
                kind: g.kind,
                damaged: g.damaged,
            })
            .collect(),
        demands: case
            .demands
            .into_iter()
            .map(|d| Demand {
                id: d.id,
                bus: d.bus,
                p: d.p / base,
                q: d.q.unwrap_or_else(|| default_reactive(d.p)) / base,
                has_der: d.has_der,
                damaged: d.damaged,
            })
            .collect(),
    };
    let report = net.validate();
    if report.is_empty() {
        Ok(net)
    } else {
        Err(CoreError::Invalid(report))
    }
}

/// Reads a case file from disk.
pub fn load_case(path: impl AsRef<Path>) -> Result<Network, CoreError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io(format!("{}: {e}", path.display())))?;
    parse_case(&text)
}

/// Renders a network as a case document in physical units.
pub fn case_to_json(net: &Network) -> String {
    let base = net.base_mva;
    let case = CaseFile {
        name: net.name.clone(),
        notes: Vec::new(),
        base_mva: base,
        buses: net
            .buses
            .iter()
            .map(|b| BusRecord { id: b.id, is_reference: b.is_reference, v_min: b.v_min, v_max: b.v_max, damaged: b.damaged })
            .collect(),
        lines: net
            .lines
            .iter()
            .map(|l| LineRecord {
                id: l.id,
                from_bus: l.from_bus,
                to_bus: l.to_bus,
                b: l.b,
                g: l.g,
                g_fr: l.g_fr,
                b_fr: l.b_fr,
                g_to: l.g_to,
                b_to: l.b_to,
                t_m: l.t_m,
                t_r: l.t_r,
                t_i: l.t_i,
                thermal_limit: l.thermal_limit * base,
                angle_diff_min: l.angle_diff_min,
                angle_diff_max: l.angle_diff_max,
                damaged: l.damaged,
                transformer: l.transformer,
            })
            .collect(),
        generators: net
            .generators
            .iter()
            .map(|g| GeneratorRecord {
                id: g.id,
                bus: g.bus,
                p_min: g.p_min * base,
                p_max: g.p_max * base,
                q_min: g.q_min * base,
                q_max: g.q_max * base,
                kind: g.kind,
                damaged: g.damaged,
            })
            .collect(),
        demands: net
            .demands
            .iter()
            .map(|d| DemandRecord { id: d.id, bus: d.bus, p: d.p * base, q: Some(d.q * base), has_der: d.has_der, damaged: d.damaged })
            .collect(),
    };
    serde_json::to_string_pretty(&case).expect("case records always serialize")
}

/// Adjacency view of a network used by graph algorithms.
#[derive(Debug, Clone)]
pub struct Topology {
    pub bus_pos: BTreeMap<usize, usize>,
    /// For each bus position: `(line position, neighbour bus position)`.
    pub adj: Vec<Vec<(usize, usize)>>,
    pub reference: usize,
}

impl Topology {
    pub fn new(net: &Network) -> Self {
        let bus_pos = net.bus_index();
        let mut adj = vec![Vec::new(); net.buses.len()];
        for (k, l) in net.lines.iter().enumerate() {
            let (a, b) = (bus_pos[&l.from_bus], bus_pos[&l.to_bus]);
            adj[a].push((k, b));
            adj[b].push((k, a));
        }
        let reference = net.buses.iter().position(|b| b.is_reference).unwrap_or(0);
        Topology { bus_pos, adj, reference }
    }

    /// Connected components over the lines for which `in_service` holds.
    /// Returns the component label of every bus position.
    pub fn components(&self, in_service: &dyn Fn(usize) -> bool) -> Vec<usize> {
        let n = self.adj.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &(l, v) in &self.adj[u] {
                    if in_service(l) && label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }
}
