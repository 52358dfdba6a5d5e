//! Restoration ordering problem (ROP).
//!
//! A multi-period mixed-integer DC load-shedding model chooses which
//! damaged component to re-energize in each period so that the energy
//! served over the horizon is maximal. Damaged components get one binary
//! status column per period; undamaged ones are constants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use restore_milp::{BuiltinBackend, LinearProgram, MilpBackend, MilpOptions, MilpProblem, Sense, SolveStats, Status};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::{Network, TimeGrid, Topology};
use crate::scenarios::EffectiveCase;
use crate::CoreError;

const INF: f64 = f64::INFINITY;

/// A repairable component: `B3`, `L7`, `G2` or `D4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ComponentId {
    Bus(usize),
    Line(usize),
    Generator(usize),
    Demand(usize),
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentId::Bus(i) => write!(f, "B{i}"),
            ComponentId::Line(i) => write!(f, "L{i}"),
            ComponentId::Generator(i) => write!(f, "G{i}"),
            ComponentId::Demand(i) => write!(f, "D{i}"),
        }
    }
}

impl FromStr for ComponentId {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CoreError::Parse(format!("invalid component id '{s}'"));
        let mut chars = s.chars();
        let tag = chars.next().ok_or_else(bad)?;
        let id: usize = chars.as_str().parse().map_err(|_| bad())?;
        match tag {
            'B' => Ok(ComponentId::Bus(id)),
            'L' => Ok(ComponentId::Line(id)),
            'G' => Ok(ComponentId::Generator(id)),
            'D' => Ok(ComponentId::Demand(id)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for ComponentId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComponentId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ids of the damaged buses, lines, generators and demands.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DamageSets {
    pub buses: Vec<usize>,
    pub lines: Vec<usize>,
    pub generators: Vec<usize>,
    pub demands: Vec<usize>,
}

impl DamageSets {
    pub fn from_network(net: &Network) -> Self {
        DamageSets {
            buses: net.buses.iter().filter(|b| b.damaged).map(|b| b.id).collect(),
            lines: net.lines.iter().filter(|l| l.damaged).map(|l| l.id).collect(),
            generators: net.generators.iter().filter(|g| g.damaged).map(|g| g.id).collect(),
            demands: net.demands.iter().filter(|d| d.damaged).map(|d| d.id).collect(),
        }
    }

    pub fn lines_only(ids: &[usize]) -> Self {
        DamageSets { lines: ids.to_vec(), ..Default::default() }
    }

    /// All damaged components in canonical order.
    pub fn components(&self) -> Vec<ComponentId> {
        let mut v: Vec<ComponentId> = self
            .buses
            .iter()
            .map(|&i| ComponentId::Bus(i))
            .chain(self.lines.iter().map(|&i| ComponentId::Line(i)))
            .chain(self.generators.iter().map(|&i| ComponentId::Generator(i)))
            .chain(self.demands.iter().map(|&i| ComponentId::Demand(i)))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn len(&self) -> usize {
        self.components().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, net: &Network) -> Result<(), CoreError> {
        let check = |kind: &'static str, ids: &[usize], known: BTreeSet<usize>| {
            match ids.iter().find(|i| !known.contains(i)) {
                Some(&id) => Err(CoreError::UnknownId { kind, id }),
                None => Ok(()),
            }
        };
        check("bus", &self.buses, net.buses.iter().map(|b| b.id).collect())?;
        check("line", &self.lines, net.lines.iter().map(|l| l.id).collect())?;
        check("generator", &self.generators, net.generators.iter().map(|g| g.id).collect())?;
        check("demand", &self.demands, net.demands.iter().map(|d| d.id).collect())?;
        for &g in &self.generators {
            let gen = net.generators.iter().find(|x| x.id == g).unwrap();
            if gen.kind == crate::model::GeneratorKind::CustomerDer {
                return Err(CoreError::Invalid(crate::model::ValidationReport {
                    violations: vec![crate::model::Violation {
                        element: format!("generator {g}"),
                        message: "customer-owned DERs cannot be damaged".into(),
                    }],
                }));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopConfig {
    /// New energizations allowed per period; the cumulative budget after
    /// period `t` is `t * repairs_per_period`.
    pub repairs_per_period: usize,
    /// Add supply-side rows for every damaged line: with the line out, the
    /// load beyond it can be served only from sources beyond it. They are
    /// implied by the flow model and tighten its relaxation.
    pub supply_cuts: bool,
}

impl Default for RopConfig {
    fn default() -> Self {
        RopConfig { repairs_per_period: 1, supply_cuts: true }
    }
}

/// The assembled MILP together with its column maps.
#[derive(Debug, Clone)]
pub struct RopInstance {
    pub problem: MilpProblem,
    pub case: EffectiveCase,
    pub damage: DamageSets,
    pub time: TimeGrid,
    pub config: RopConfig,
    pub big_m_theta: f64,
    pub components: Vec<ComponentId>,
    pub demand_ids: Vec<usize>,
    /// Column maps indexed `[period][element position]`.
    pub theta: Vec<Vec<usize>>,
    pub pg: Vec<Vec<usize>>,
    pub pl: Vec<Vec<usize>>,
    pub x: Vec<Vec<usize>>,
    pub z: Vec<Vec<usize>>,
}

/// Per-period energization schedule produced by the ROP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorationPlan {
    /// `schedule[t]` lists the components first energized in period `t`.
    pub schedule: Vec<Vec<ComponentId>>,
    pub energization: BTreeMap<ComponentId, usize>,
    pub demand_ids: Vec<usize>,
    /// Served fraction `[demand][period]` from the ROP solution.
    pub served_fraction: Vec<Vec<f64>>,
    pub objective_mwh: f64,
    pub step_hours: f64,
}

impl RestorationPlan {
    pub fn n_periods(&self) -> usize {
        self.schedule.len()
    }

    /// Whether a component is in service in period `t`. Components that are
    /// not part of the plan are undamaged and always in service.
    pub fn in_service(&self, c: ComponentId, t: usize) -> bool {
        self.energization.get(&c).map_or(true, |&e| e <= t)
    }

    /// Checks the plan against a damage set and per-period budget.
    pub fn check(&self, damage: &DamageSets, repairs_per_period: usize) -> Result<(), CoreError> {
        let comps = damage.components();
        let planned: Vec<ComponentId> = self.energization.keys().copied().collect();
        if planned != comps {
            return Err(CoreError::PlanMismatch(format!(
                "plan covers {} components but the damage set has {}",
                planned.len(),
                comps.len()
            )));
        }
        let t_final = self.n_periods().saturating_sub(1);
        let mut cumulative = 0;
        for (t, set) in self.schedule.iter().enumerate() {
            cumulative += set.len();
            if cumulative > t * repairs_per_period {
                return Err(CoreError::PlanMismatch(format!("budget exceeded in period {t}")));
            }
            for c in set {
                if self.energization.get(c) != Some(&t) {
                    return Err(CoreError::PlanMismatch(format!("{c} scheduled in period {t} inconsistently")));
                }
            }
        }
        if let Some((c, &t)) = self.energization.iter().find(|(_, &t)| t > t_final) {
            return Err(CoreError::PlanMismatch(format!("{c} energized after the final period ({t})")));
        }
        Ok(())
    }
}

/// Angle-decoupling constant: the sum over all branches of the larger
/// angle-difference bound, which bounds any angle spread across a tree.
pub fn compute_big_m(case: &EffectiveCase) -> f64 {
    big_m_for(&case.network)
}

fn big_m_for(net: &Network) -> f64 {
    net.lines.iter().map(|l| l.angle_diff_min.abs().max(l.angle_diff_max)).sum()
}

pub fn build_rop(case: &EffectiveCase, damage: &DamageSets, time: TimeGrid) -> Result<RopInstance, CoreError> {
    build_rop_with(case, damage, time, RopConfig::default())
}

/// A component status: always on, or the value of a column.
#[derive(Clone, Copy)]
enum Gate {
    On,
    Col(usize),
}

pub fn build_rop_with(case: &EffectiveCase, damage: &DamageSets, time: TimeGrid, config: RopConfig) -> Result<RopInstance, CoreError> {
    let net = &case.network;
    damage.check(net)?;
    let per = config.repairs_per_period.max(1);
    let components = damage.components();
    let needed = TimeGrid::for_damage(components.len(), per).n_periods;
    if time.n_periods < needed {
        return Err(CoreError::Horizon { needed, given: time.n_periods });
    }
    if !(time.step_hours > 0.0) {
        return Err(CoreError::Horizon { needed, given: 0 });
    }
    let big_m = big_m_for(net);
    let base = net.base_mva;
    let dt = time.step_hours;
    let n_t = time.n_periods;
    let bus_pos = net.bus_index();
    let comp_pos: BTreeMap<ComponentId, usize> = components.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let damaged_bus: BTreeSet<usize> = damage.buses.iter().copied().collect();

    let mut lp = LinearProgram::new(Sense::Maximize);
    let mut integer = BTreeSet::new();
    let (mut theta, mut pg, mut pl, mut xs, mut zs) = (vec![], vec![], vec![], vec![], vec![]);

    for t in 0..n_t {
        let th: Vec<usize> = net.buses.iter().map(|b| lp.add_col(format!("theta[{},{t}]", b.id), 0.0, -INF, INF)).collect();
        let g_cols: Vec<usize> = net
            .generators
            .iter()
            .map(|g| lp.add_col(format!("pg[{},{t}]", g.id), 0.0, g.p_min.min(0.0), g.p_max.max(0.0)))
            .collect();
        let l_cols: Vec<usize> = net
            .lines
            .iter()
            .map(|l| lp.add_col(format!("pl[{},{t}]", l.id), 0.0, -l.thermal_limit, l.thermal_limit))
            .collect();
        let x_cols: Vec<usize> =
            net.demands.iter().map(|d| lp.add_col(format!("x[{},{t}]", d.id), d.p * base * dt, 0.0, 1.0)).collect();
        let z_cols: Vec<usize> = components
            .iter()
            .map(|c| {
                let fixed = t + 1 == n_t;
                let col = lp.add_col(format!("z[{c},{t}]"), 0.0, if fixed { 1.0 } else { 0.0 }, 1.0);
                integer.insert(col);
                col
            })
            .collect();

        let bus_gate = |id: usize| -> Gate {
            if damaged_bus.contains(&id) {
                Gate::Col(z_cols[comp_pos[&ComponentId::Bus(id)]])
            } else {
                Gate::On
            }
        };

        lp.add_row(format!("ref[{t}]"), 0.0, 0.0, &[(th[bus_pos[&net.reference_bus().unwrap().id]], 1.0)]);

        // nodal balance: generation + inflow - outflow - served load = 0
        let mut bal: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.buses.len()];
        for (k, g) in net.generators.iter().enumerate() {
            bal[bus_pos[&g.bus]].push((g_cols[k], 1.0));
        }
        for (k, l) in net.lines.iter().enumerate() {
            bal[bus_pos[&l.from_bus]].push((l_cols[k], -1.0));
            bal[bus_pos[&l.to_bus]].push((l_cols[k], 1.0));
        }
        for (k, d) in net.demands.iter().enumerate() {
            bal[bus_pos[&d.bus]].push((x_cols[k], -d.p));
        }
        for (i, b) in net.buses.iter().enumerate() {
            lp.add_row(format!("bal[{},{t}]", b.id), 0.0, 0.0, &bal[i]);
        }

        // branch flows
        for (k, l) in net.lines.iter().enumerate() {
            let (i, j) = (th[bus_pos[&l.from_bus]], th[bus_pos[&l.to_bus]]);
            let p = l_cols[k];
            let own = comp_pos.get(&ComponentId::Line(l.id)).map(|&c| z_cols[c]);
            let ends: Vec<usize> = [l.from_bus, l.to_bus]
                .iter()
                .filter_map(|&b| match bus_gate(b) {
                    Gate::Col(c) => Some(c),
                    Gate::On => None,
                })
                .collect();
            let gate = match (own, ends.as_slice()) {
                (Some(z), _) => {
                    for &e in &ends {
                        lp.add_row(format!("prec[{},{t}]", l.id), -INF, 0.0, &[(z, 1.0), (e, -1.0)]);
                    }
                    Gate::Col(z)
                }
                (None, []) => Gate::On,
                (None, [e]) => Gate::Col(*e),
                (None, [a, b]) => {
                    // in service exactly when both end buses are
                    let s = lp.add_col(format!("s[{},{t}]", l.id), 0.0, 0.0, 1.0);
                    lp.add_row(format!("both_a[{},{t}]", l.id), -INF, 0.0, &[(s, 1.0), (*a, -1.0)]);
                    lp.add_row(format!("both_b[{},{t}]", l.id), -INF, 0.0, &[(s, 1.0), (*b, -1.0)]);
                    lp.add_row(format!("both_ab[{},{t}]", l.id), -1.0, INF, &[(s, 1.0), (*a, -1.0), (*b, -1.0)]);
                    Gate::Col(s)
                }
                _ => unreachable!(),
            };
            // p = -b (theta_i - theta_j), relaxed by |b| M when the line is
            // out; rows are divided by |b| to keep coefficients near one
            let scale = if l.b != 0.0 { 1.0 / l.b.abs() } else { 1.0 };
            let coefs = [(p, scale), (i, l.b * scale), (j, -l.b * scale)];
            match gate {
                Gate::On => {
                    lp.add_row(format!("flow[{},{t}]", l.id), 0.0, 0.0, &coefs);
                }
                Gate::Col(z) => {
                    let w = l.b.abs() * big_m * scale;
                    let mut hi = coefs.to_vec();
                    hi.push((z, w));
                    lp.add_row(format!("flow_hi[{},{t}]", l.id), -INF, w, &hi);
                    let mut lo = coefs.to_vec();
                    lo.push((z, -w));
                    lp.add_row(format!("flow_lo[{},{t}]", l.id), -w, INF, &lo);
                    lp.add_row(format!("therm_hi[{},{t}]", l.id), -INF, 0.0, &[(p, 1.0), (z, -l.thermal_limit)]);
                    lp.add_row(format!("therm_lo[{},{t}]", l.id), 0.0, INF, &[(p, 1.0), (z, l.thermal_limit)]);
                }
            }
        }

        // generator gating
        for (k, g) in net.generators.iter().enumerate() {
            let own = comp_pos.get(&ComponentId::Generator(g.id)).map(|&c| z_cols[c]);
            let bus = bus_gate(g.bus);
            if let (Some(z), Gate::Col(bz)) = (own, bus) {
                lp.add_row(format!("prec_g[{},{t}]", g.id), -INF, 0.0, &[(z, 1.0), (bz, -1.0)]);
            }
            let gate = match (own, bus) {
                (Some(z), _) => Some(z),
                (None, Gate::Col(bz)) => Some(bz),
                (None, Gate::On) => None,
            };
            if let Some(z) = gate {
                lp.add_row(format!("gen_hi[{},{t}]", g.id), -INF, 0.0, &[(g_cols[k], 1.0), (z, -g.p_max)]);
                lp.add_row(format!("gen_lo[{},{t}]", g.id), 0.0, INF, &[(g_cols[k], 1.0), (z, -g.p_min)]);
            }
        }

        // demand gating
        for (k, d) in net.demands.iter().enumerate() {
            let own = comp_pos.get(&ComponentId::Demand(d.id)).map(|&c| z_cols[c]);
            let bus = bus_gate(d.bus);
            if let (Some(z), Gate::Col(bz)) = (own, bus) {
                lp.add_row(format!("prec_d[{},{t}]", d.id), -INF, 0.0, &[(z, 1.0), (bz, -1.0)]);
            }
            let gate = match (own, bus) {
                (Some(z), _) => Some(z),
                (None, Gate::Col(bz)) => Some(bz),
                (None, Gate::On) => None,
            };
            if let Some(z) = gate {
                lp.add_row(format!("serve[{},{t}]", d.id), -INF, 0.0, &[(x_cols[k], 1.0), (z, -1.0)]);
            }
        }

        if !z_cols.is_empty() {
            let budget = (t * per).min(components.len()) as f64;
            let coefs: Vec<(usize, f64)> = z_cols.iter().map(|&c| (c, 1.0)).collect();
            lp.add_row(format!("budget[{t}]"), -INF, budget, &coefs);
        }

        theta.push(th);
        pg.push(g_cols);
        pl.push(l_cols);
        xs.push(x_cols);
        zs.push(z_cols);
    }

    if config.supply_cuts {
        add_supply_rows(&mut lp, net, &comp_pos, &xs, &zs, &pl);
        add_island_rows(&mut lp, net, &comp_pos, &xs, &zs);
        let n = components.len();
        if n > 0 && n <= SUBSET_DP_LIMIT {
            let table = CapacityModel::new(net, &components).subset_table(n);
            let best = best_by_count(&table);
            for (t, x_cols) in xs.iter().enumerate() {
                let k = if t + 1 == n_t { n } else { (t * per).min(n) };
                let coefs: Vec<(usize, f64)> = net.demands.iter().zip(x_cols).map(|(d, &c)| (c, d.p)).collect();
                lp.add_row(format!("period_cap[{t}]"), -INF, best[k] + 1e-9, &coefs);
            }
            // the best sequence under the capacity model bounds the whole horizon
            if per == 1 && n_t > n {
                let (_, total) = subset_dp(&table, n, n_t);
                let coefs: Vec<(usize, f64)> =
                    xs.iter().flat_map(|x_cols| net.demands.iter().zip(x_cols).map(|(d, &c)| (c, d.p))).collect();
                lp.add_row("horizon_cap", -INF, total * (1.0 + 1e-9) + 1e-9, &coefs);
            }
        }
    }

    // repaired components stay in service
    for t in 0..n_t.saturating_sub(1) {
        for (c, comp) in components.iter().enumerate() {
            lp.add_row(format!("mono[{comp},{t}]"), -INF, 0.0, &[(zs[t][c], 1.0), (zs[t + 1][c], -1.0)]);
        }
    }

    let mut problem = MilpProblem::new(lp);
    problem.integer_columns = integer;
    Ok(RopInstance {
        problem,
        case: case.clone(),
        damage: damage.clone(),
        time,
        config,
        big_m_theta: big_m,
        components,
        demand_ids: net.demands.iter().map(|d| d.id).collect(),
        theta,
        pg,
        pl,
        x: xs,
        z: zs,
    })
}

/// For each damaged line, the demands on the side away from the reference
/// bus can draw at most the generation capacity on that side while the line
/// is out.
fn add_supply_rows(
    lp: &mut LinearProgram,
    net: &Network,
    comp_pos: &BTreeMap<ComponentId, usize>,
    xs: &[Vec<usize>],
    zs: &[Vec<usize>],
    pl: &[Vec<usize>],
) {
    let topo = Topology::new(net);
    for (k, l) in net.lines.iter().enumerate() {
        let Some(&c) = comp_pos.get(&ComponentId::Line(l.id)) else { continue };
        let labels = topo.components(&|m| m != k);
        let far = |b: usize| labels[topo.bus_pos[&b]] != labels[topo.reference];
        if !far(l.from_bus) && !far(l.to_bus) {
            continue;
        }
        let cap: f64 = net.generators.iter().filter(|g| far(g.bus)).map(|g| g.p_max.max(0.0)).sum();
        let sink: f64 = net.generators.iter().filter(|g| far(g.bus)).map(|g| (-g.p_min).max(0.0)).sum();
        let demands: Vec<(usize, f64)> =
            net.demands.iter().enumerate().filter(|(_, d)| far(d.bus) && d.p > 0.0).map(|(i, d)| (i, d.p)).collect();
        let load: f64 = demands.iter().map(|(_, p)| p).sum();
        // flow towards the far side is bounded by what it can absorb, flow
        // out of it by what it can generate
        let toward = if far(l.to_bus) { 1.0 } else { -1.0 };
        for t in 0..xs.len() {
            let z = zs[t][c];
            let f = pl[t][k];
            lp.add_row(format!("absorb[{},{t}]", l.id), -INF, 0.0, &[(f, toward), (z, -(load + sink))]);
            lp.add_row(format!("export[{},{t}]", l.id), -INF, 0.0, &[(f, -toward), (z, -cap)]);
        }
        if load <= cap {
            continue;
        }
        for t in 0..xs.len() {
            let z = zs[t][c];
            if cap <= 0.0 {
                for &(i, _) in &demands {
                    lp.add_row(format!("reach[{},{},{t}]", l.id, net.demands[i].id), -INF, 0.0, &[(xs[t][i], 1.0), (z, -1.0)]);
                }
            } else {
                let mut coefs: Vec<(usize, f64)> = demands.iter().map(|&(i, p)| (xs[t][i], p)).collect();
                coefs.push((z, -(load - cap)));
                lp.add_row(format!("supply[{},{t}]", l.id), -INF, cap, &coefs);
            }
        }
    }
}

/// Largest number of segments combined into one island-supply row.
const ISLAND_ROW_SEGMENTS: usize = 4;

/// Island-supply rows. A segment is a maximal set of buses joined by
/// undamaged lines. For a connected group `U` of segments away from the
/// substation, the load served inside `U` is at most its own generation plus
/// whatever enters through its repaired boundary lines:
///
/// ```text
///     sum_{d in U} P_d x_{d,t} <= cap_U + sum_{k in boundary} F_k z_{k,t}
/// ```
///
/// `F_k` is the shortfall `load_U - cap_U`, further capped by the generation
/// beyond `k` when that side is cut off from the substation. Groups with a
/// single boundary line are covered by the supply rows.
fn add_island_rows(
    lp: &mut LinearProgram,
    net: &Network,
    comp_pos: &BTreeMap<ComponentId, usize>,
    xs: &[Vec<usize>],
    zs: &[Vec<usize>],
) {
    let topo = Topology::new(net);
    let damaged: Vec<Option<usize>> = net.lines.iter().map(|l| comp_pos.get(&ComponentId::Line(l.id)).copied()).collect();
    let seg = topo.components(&|m| damaged[m].is_none());
    let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
    let root = seg[topo.reference];
    let ends: Vec<(usize, usize)> = net.lines.iter().map(|l| (topo.bus_pos[&l.from_bus], topo.bus_pos[&l.to_bus])).collect();
    let mut seg_adj = vec![BTreeSet::new(); n_seg];
    for (k, &(a, b)) in ends.iter().enumerate() {
        if damaged[k].is_some() && seg[a] != seg[b] {
            seg_adj[seg[a]].insert(seg[b]);
            seg_adj[seg[b]].insert(seg[a]);
        }
    }
    // connected groups of up to ISLAND_ROW_SEGMENTS segments, root excluded
    let mut groups: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut frontier: Vec<Vec<usize>> = (0..n_seg).filter(|&s| s != root).map(|s| vec![s]).collect();
    for _ in 0..ISLAND_ROW_SEGMENTS {
        let mut next = Vec::new();
        for g in frontier {
            if !groups.insert(g.clone()) {
                continue;
            }
            for &s in &g {
                for &u in &seg_adj[s] {
                    if u != root && !g.contains(&u) {
                        let mut h = g.clone();
                        h.push(u);
                        h.sort_unstable();
                        next.push(h);
                    }
                }
            }
        }
        frontier = next;
    }
    let bus_of: BTreeMap<usize, usize> = topo.bus_pos.clone();
    for g in groups {
        let inside = |b: usize| g.contains(&seg[b]);
        let cap: f64 = net.generators.iter().filter(|x| inside(bus_of[&x.bus])).map(|x| x.p_max.max(0.0)).sum();
        let demands: Vec<(usize, f64)> =
            net.demands.iter().enumerate().filter(|(_, d)| inside(bus_of[&d.bus]) && d.p > 0.0).map(|(i, d)| (i, d.p)).collect();
        let load: f64 = demands.iter().map(|(_, p)| p).sum();
        let shortfall = load - cap;
        let boundary: Vec<usize> = (0..ends.len()).filter(|&k| inside(ends[k].0) != inside(ends[k].1)).collect();
        if shortfall <= 1e-12 || boundary.len() < 2 {
            continue;
        }
        // what lies outside the group, split at the group
        let outside = topo.components(&|m| !inside(ends[m].0) && !inside(ends[m].1));
        let mut coefs_z = Vec::with_capacity(boundary.len());
        for &k in &boundary {
            let o = if inside(ends[k].0) { ends[k].1 } else { ends[k].0 };
            let f = if outside[o] == outside[topo.reference] {
                shortfall
            } else {
                let beyond: f64 = net
                    .generators
                    .iter()
                    .filter(|x| {
                        let b = bus_of[&x.bus];
                        !inside(b) && outside[b] == outside[o]
                    })
                    .map(|x| x.p_max.max(0.0))
                    .sum();
                shortfall.min(beyond)
            };
            coefs_z.push((k, f));
        }
        let name: Vec<String> = g.iter().map(|s| s.to_string()).collect();
        for t in 0..xs.len() {
            let mut coefs: Vec<(usize, f64)> = demands.iter().map(|&(i, p)| (xs[t][i], p)).collect();
            for &(k, f) in &coefs_z {
                if f > 0.0 {
                    coefs.push((zs[t][damaged[k].expect("boundary lines are damaged")], -f));
                }
            }
            lp.add_row(format!("island[{},{t}]", name.join("+")), -INF, cap, &coefs);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RopOptions {
    pub milp: MilpOptions,
    /// Seed the search with a greedy repair order.
    pub heuristic_start: bool,
}

impl Default for RopOptions {
    fn default() -> Self {
        RopOptions { milp: MilpOptions::default(), heuristic_start: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RopSolution {
    pub plan: RestorationPlan,
    pub status: Status,
    pub gap: f64,
    pub stats: SolveStats,
    /// Served energy of the heuristic start, when one was used.
    pub heuristic_mwh: Option<f64>,
}

pub fn solve_rop(inst: &RopInstance) -> Result<RopSolution, CoreError> {
    solve_rop_with(inst, &RopOptions::default(), &BuiltinBackend)
}

pub fn solve_rop_with(inst: &RopInstance, opts: &RopOptions, backend: &dyn MilpBackend) -> Result<RopSolution, CoreError> {
    let mut milp = opts.milp.clone();
    let mut heuristic_mwh = None;
    if opts.heuristic_start && milp.initial_solution.is_none() && !inst.components.is_empty() {
        let (order, mwh) = heuristic_order(inst);
        heuristic_mwh = Some(mwh);
        milp.initial_solution = Some(start_vector(inst, &order));
    }
    let sol = backend.solve(&inst.problem, &milp)?;
    match sol.status {
        Status::Infeasible => return Err(CoreError::Infeasible("restoration ordering problem".into())),
        Status::Unbounded => return Err(CoreError::Unbounded),
        Status::Optimal | Status::IncumbentWithGap => {}
    }
    let plan = extract_plan(inst, &sol.values, sol.objective);
    Ok(RopSolution { plan, status: sol.status, gap: sol.gap, stats: sol.stats, heuristic_mwh })
}

fn extract_plan(inst: &RopInstance, values: &[f64], objective: f64) -> RestorationPlan {
    let n_t = inst.time.n_periods;
    let mut schedule = vec![Vec::new(); n_t];
    let mut energization = BTreeMap::new();
    for (c, &comp) in inst.components.iter().enumerate() {
        let t = (0..n_t).find(|&t| values[inst.z[t][c]] > 0.5).unwrap_or(n_t - 1);
        schedule[t].push(comp);
        energization.insert(comp, t);
    }
    // adding 0.0 turns a negative zero from the simplex into a plain zero
    let served_fraction = (0..inst.demand_ids.len())
        .map(|d| (0..n_t).map(|t| values[inst.x[t][d]].clamp(0.0, 1.0) + 0.0).collect())
        .collect();
    RestorationPlan {
        schedule,
        energization,
        demand_ids: inst.demand_ids.clone(),
        served_fraction,
        objective_mwh: objective,
        step_hours: inst.time.step_hours,
    }
}

/// Repair order: components by energization period, ties by id.
pub fn plan_order(plan: &RestorationPlan) -> Vec<ComponentId> {
    let mut v: Vec<(usize, ComponentId)> = plan.energization.iter().map(|(&c, &t)| (t, c)).collect();
    v.sort();
    v.into_iter().map(|(_, c)| c).collect()
}

// ---------------------------------------------------------------------------
// greedy start

/// Evaluates repair orders on the radial network with a capacity model:
/// each energized island serves its load up to the capacity of the sources
/// inside it. Branch limits are ignored.
struct CapacityModel {
    topo: Topology,
    line_comp: Vec<Option<usize>>,
    line_ends: Vec<(usize, usize)>,
    bus_comp: Vec<Option<usize>>,
    load: Vec<(usize, f64, Option<usize>)>,
    gens: Vec<(usize, f64, Option<usize>)>,
}

impl CapacityModel {
    fn new(net: &Network, components: &[ComponentId]) -> Self {
        let topo = Topology::new(net);
        let pos: BTreeMap<ComponentId, usize> = components.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        let bus_comp = net.buses.iter().map(|b| pos.get(&ComponentId::Bus(b.id)).copied()).collect();
        let line_comp = net.lines.iter().map(|l| pos.get(&ComponentId::Line(l.id)).copied()).collect();
        let line_ends = net.lines.iter().map(|l| (topo.bus_pos[&l.from_bus], topo.bus_pos[&l.to_bus])).collect();
        let load = net.demands.iter().map(|d| (topo.bus_pos[&d.bus], d.p, pos.get(&ComponentId::Demand(d.id)).copied())).collect();
        let gens = net
            .generators
            .iter()
            .map(|g| (topo.bus_pos[&g.bus], g.p_max.max(0.0), pos.get(&ComponentId::Generator(g.id)).copied()))
            .collect();
        CapacityModel { topo, line_comp, line_ends, bus_comp, load, gens }
    }

    /// Served power (per-unit) with the components flagged in `on`.
    fn served(&self, on: &[bool]) -> f64 {
        let alive_bus = |b: usize| self.bus_comp[b].map_or(true, |c| on[c]);
        let labels = self.topo.components(&|l| {
            let (a, b) = self.line_ends[l];
            self.line_comp[l].map_or(true, |c| on[c]) && alive_bus(a) && alive_bus(b)
        });
        let n = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut load = vec![0.0; n];
        let mut cap = vec![0.0; n];
        for &(b, p, c) in &self.load {
            if alive_bus(b) && c.map_or(true, |c| on[c]) {
                load[labels[b]] += p;
            }
        }
        for &(b, p, c) in &self.gens {
            if alive_bus(b) && c.map_or(true, |c| on[c]) {
                cap[labels[b]] += p;
            }
        }
        load.iter().zip(&cap).map(|(l, c)| l.min(*c)).sum()
    }

    /// Served power of every subset of components, indexed by bit mask.
    fn subset_table(&self, n: usize) -> Vec<f64> {
        let mut on = vec![false; n];
        (0..1usize << n)
            .map(|s| {
                for (k, v) in on.iter_mut().enumerate() {
                    *v = s >> k & 1 == 1;
                }
                self.served(&on)
            })
            .collect()
    }

    fn order_value(&self, order: &[usize], per: usize, n_t: usize) -> f64 {
        let mut on = vec![false; order.len()];
        let mut total = 0.0;
        for t in 0..n_t {
            let k = (t * per).min(order.len());
            on.iter_mut().for_each(|v| *v = false);
            for &c in &order[..k] {
                on[c] = true;
            }
            if t + 1 == n_t {
                on.iter_mut().for_each(|v| *v = true);
            }
            total += self.served(&on);
        }
        total
    }
}

/// Most power servable with exactly `k` components repaired, for every
/// `k`, from a subset table. The capacity model relaxes the DC flow model,
/// so these bound the served power of any period with that many repairs.
fn best_by_count(table: &[f64]) -> Vec<f64> {
    let n = table.len().trailing_zeros() as usize;
    let mut best = vec![0.0f64; n + 1];
    for (s, &v) in table.iter().enumerate() {
        let k = s.count_ones() as usize;
        best[k] = best[k].max(v);
    }
    best
}

/// Largest damage set for which the start order is found by exhaustive
/// dynamic programming over repaired subsets.
const SUBSET_DP_LIMIT: usize = 20;

/// Best repair order under the capacity model. Small instances with one
/// repair per period are solved exactly over subsets; larger ones use a
/// greedy order refined by single-element moves. Returns the order
/// (component positions) and its capacity-model served energy in MWh.
pub(crate) fn heuristic_order(inst: &RopInstance) -> (Vec<usize>, f64) {
    let model = CapacityModel::new(&inst.case.network, &inst.components);
    let n = inst.components.len();
    let per = inst.config.repairs_per_period.max(1);
    let n_t = inst.time.n_periods;
    let scale = inst.case.network.base_mva * inst.time.step_hours;
    if per == 1 && n <= SUBSET_DP_LIMIT && n_t > n {
        let (order, value) = subset_dp(&model.subset_table(n), n, n_t);
        return (order, value * scale);
    }
    let mut order = Vec::with_capacity(n);
    let mut on = vec![false; n];
    while order.len() < n {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for c in 0..n {
            if !on[c] {
                on[c] = true;
                let v = model.served(&on);
                on[c] = false;
                if v > best.0 + 1e-12 {
                    best = (v, c);
                }
            }
        }
        on[best.1] = true;
        order.push(best.1);
    }
    let mut value = model.order_value(&order, per, n_t);
    for _pass in 0..50 {
        let mut improved = false;
        for from in 0..n {
            for to in 0..n {
                if from == to {
                    continue;
                }
                let mut cand = order.clone();
                let c = cand.remove(from);
                cand.insert(to, c);
                let v = model.order_value(&cand, per, n_t);
                if v > value + 1e-9 {
                    value = v;
                    order = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (order, value * scale)
}

/// Exact order for one repair per period, with its served energy in
/// per-unit periods: `best[S]` is the most energy obtainable from the period
/// in which exactly the set `S` is repaired until the end of the horizon.
/// Served power only grows with repairs, so no schedule that idles the crew
/// does better.
fn subset_dp(table: &[f64], n: usize, n_t: usize) -> (Vec<usize>, f64) {
    let full = (1usize << n) - 1;
    let served = |s: usize| table[s];
    let mut best = vec![0.0; full + 1];
    let mut next = vec![usize::MAX; full + 1];
    best[full] = served(full) * (n_t - n) as f64;
    for s in (0..full).rev() {
        let (mut v, mut arg) = (f64::NEG_INFINITY, usize::MAX);
        for k in 0..n {
            if s >> k & 1 == 0 && best[s | 1 << k] > v + 1e-12 {
                v = best[s | 1 << k];
                arg = k;
            }
        }
        best[s] = served(s) + v;
        next[s] = arg;
    }
    let mut order = Vec::with_capacity(n);
    let mut s = 0;
    while s != full {
        order.push(next[s]);
        s |= 1 << next[s];
    }
    (order, best[0])
}

fn start_vector(inst: &RopInstance, order: &[usize]) -> Vec<f64> {
    let mut x = vec![0.0; inst.problem.lp.num_cols()];
    let per = inst.config.repairs_per_period.max(1);
    for t in 0..inst.time.n_periods {
        let k = (t * per).min(order.len());
        for &c in &order[..k] {
            x[inst.z[t][c]] = 1.0;
        }
        if t + 1 == inst.time.n_periods {
            for c in 0..order.len() {
                x[inst.z[t][c]] = 1.0;
            }
        }
    }
    x
}
