//! Files written by the subcommands. Everything except `metadata.json` is a
//! pure function of the inputs, so repeated runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use restore_core::metrics::{plan_ens, reconnection_times};
use restore_core::rip::RipResult;
use restore_core::rop::RopSolution;
use restore_core::sweep::SweepResult;
use restore_core::{CoreError, DerMode, EffectiveCase};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CoreError {
    CoreError::Io(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CoreError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CoreError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CoreError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

#[derive(Serialize)]
struct RopSummary<'a> {
    case: String,
    status: restore_core::Status,
    gap: f64,
    nodes: u64,
    objective_mwh: f64,
    ens_mwh: f64,
    total_demand_mwh: f64,
    ens_der_mwh: f64,
    ens_non_der_mwh: f64,
    t_der_hours: Option<f64>,
    t_0_hours: Option<f64>,
    order: &'a [String],
}

/// `plan.json` and `rop_ens.json`.
pub fn write_plan(out: &Path, case: &EffectiveCase, sol: &RopSolution) -> Result<(), CoreError> {
    ensure_dir(out)?;
    write_json(&out.join("plan.json"), &sol.plan)?;
    let ens = plan_ens(&sol.plan, case)?;
    let rec = reconnection_times(&sol.plan, case)?;
    let order: Vec<String> = restore_core::rop::plan_order(&sol.plan).iter().map(|c| c.to_string()).collect();
    let summary = RopSummary {
        case: case.label(),
        status: sol.status,
        gap: sol.gap,
        nodes: sol.stats.nodes,
        objective_mwh: sol.plan.objective_mwh,
        ens_mwh: ens.total_ens,
        total_demand_mwh: ens.total_demand_mwh,
        ens_der_mwh: ens.ens_by_group.der,
        ens_non_der_mwh: ens.ens_by_group.non_der,
        t_der_hours: rec.t_der,
        t_0_hours: rec.t_0,
        order: &order,
    };
    write_json(&out.join("rop_ens.json"), &summary)
}

#[derive(Serialize)]
struct ServedRow {
    period: usize,
    demand: usize,
    served_fraction: f64,
}

#[derive(Serialize)]
struct ResidualRow {
    period: usize,
    converged: bool,
    served_mwh: f64,
    balance_p: f64,
    balance_q: f64,
    flow: f64,
    voltage: f64,
    thermal: f64,
    angle: f64,
    bounds: f64,
}

/// `rip_result.json`, `served.csv` and `residuals.csv`.
pub fn write_simulation(out: &Path, _case: &EffectiveCase, rip: &RipResult) -> Result<(), CoreError> {
    ensure_dir(out)?;
    write_json(&out.join("rip_result.json"), rip)?;
    let mut served = Vec::new();
    for t in 0..rip.periods.len() {
        for (k, &d) in rip.demand_ids.iter().enumerate() {
            served.push(ServedRow { period: t, demand: d, served_fraction: rip.served_fraction[k][t] });
        }
    }
    write_csv(&out.join("served.csv"), &served)?;
    let residuals: Vec<ResidualRow> = rip
        .residuals
        .iter()
        .enumerate()
        .map(|(t, r)| ResidualRow {
            period: t,
            converged: rip.converged[t],
            served_mwh: rip.periods[t].served_mwh,
            balance_p: r.balance_p,
            balance_q: r.balance_q,
            flow: r.flow,
            voltage: r.voltage,
            thermal: r.thermal,
            angle: r.angle,
            bounds: r.bounds,
        })
        .collect();
    write_csv(&out.join("residuals.csv"), &residuals)
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsRow {
    case: String,
    placement: String,
    mode: DerMode,
    status: String,
    rop_ens: f64,
    rip_ens: Option<f64>,
    total_demand_mwh: f64,
    ens_der: f64,
    ens_non_der: f64,
    t_der_hours: Option<f64>,
    t_0_hours: Option<f64>,
}

#[derive(Serialize)]
struct ReconnectionRow<'a> {
    case: &'a str,
    demand: usize,
    bus: usize,
    has_der: bool,
    t_d: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SensitivityRow {
    placement: String,
    assumed: DerMode,
    actual: DerMode,
    ens_mwh: f64,
    converged: bool,
}

#[derive(Serialize)]
struct OrderFigure<'a> {
    case: &'a str,
    order: &'a [String],
}

#[derive(Serialize)]
struct ReconnectionFigure<'a> {
    case: &'a str,
    t_der_hours: Option<f64>,
    t_0_hours: Option<f64>,
    der_delay_hours: Option<f64>,
}

#[derive(Serialize)]
struct Timing<'a> {
    case: &'a str,
    seconds: f64,
    nodes: u64,
}

fn ens_rows(r: &SweepResult) -> Vec<EnsRow> {
    r.cases
        .iter()
        .map(|c| EnsRow {
            case: c.label.clone(),
            placement: c.placement.clone(),
            mode: c.mode,
            status: format!("{:?}", c.status),
            rop_ens: c.rop_ens.total_ens,
            rip_ens: r.rip_ens(&c.placement, c.mode),
            total_demand_mwh: c.rop_ens.total_demand_mwh,
            ens_der: c.rop_ens.ens_by_group.der,
            ens_non_der: c.rop_ens.ens_by_group.non_der,
            t_der_hours: c.reconnection.t_der,
            t_0_hours: c.reconnection.t_0,
        })
        .collect()
}

/// Sweep tables, one plan per case, and one plot-data file per figure.
pub fn write_sweep(out: &Path, r: &SweepResult) -> Result<(), CoreError> {
    let plans = out.join("plans");
    let figures = out.join("figures");
    ensure_dir(&plans)?;
    ensure_dir(&figures)?;

    let ens = ens_rows(r);
    write_csv(&out.join("ens_summary.csv"), &ens)?;

    let mut rec = Vec::new();
    for c in &r.cases {
        let rr = &c.reconnection;
        for k in 0..rr.demand_ids.len() {
            rec.push(ReconnectionRow { case: &c.label, demand: rr.demand_ids[k], bus: rr.buses[k], has_der: rr.has_der[k], t_d: rr.hours(k) });
        }
    }
    write_csv(&out.join("reconnection.csv"), &rec)?;

    let sens: Vec<SensitivityRow> = r
        .sensitivity
        .iter()
        .flat_map(|m| {
            m.cells.iter().flatten().map(|cell| SensitivityRow {
                placement: m.placement.clone(),
                assumed: cell.assumed,
                actual: cell.actual,
                ens_mwh: cell.ens_mwh,
                converged: cell.converged,
            })
        })
        .collect();
    write_csv(&out.join("sensitivity.csv"), &sens)?;

    for c in &r.cases {
        write_json(&plans.join(format!("{}.json", c.label)), &c.plan)?;
    }

    write_json(&figures.join("fig2_ens.json"), &ens)?;
    let orders: Vec<OrderFigure> = r.cases.iter().map(|c| OrderFigure { case: &c.label, order: &c.order }).collect();
    write_json(&figures.join("fig3_repair_order.json"), &orders)?;
    let recon: Vec<ReconnectionFigure> = r
        .cases
        .iter()
        .map(|c| ReconnectionFigure {
            case: &c.label,
            t_der_hours: c.reconnection.t_der,
            t_0_hours: c.reconnection.t_0,
            der_delay_hours: c.reconnection.der_delay(),
        })
        .collect();
    write_json(&figures.join("fig4_reconnection.json"), &recon)?;
    let groups: Vec<(&str, f64, f64)> =
        r.cases.iter().map(|c| (c.label.as_str(), c.rop_ens.ens_by_group.der, c.rop_ens.ens_by_group.non_der)).collect();
    write_json(&figures.join("fig5_group_ens.json"), &groups)?;
    write_json(&figures.join("fig6_sensitivity.json"), &r.sensitivity)?;

    let timing: Vec<Timing> = r.cases.iter().map(|c| Timing { case: &c.label, seconds: c.seconds, nodes: c.nodes }).collect();
    write_json(&out.join("metadata.json"), &serde_json::json!({ "timing": timing, "failures": r.failures }))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn ens_table(rows: &[EnsRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<22} {:>10} {:>10} {:>9} {:>9}  status", "case", "rop_ens", "rip_ens", "t_der", "t_0");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<22} {:>10.3} {:>10} {:>9} {:>9}  {}",
            r.case,
            r.rop_ens,
            fmt_opt(r.rip_ens),
            fmt_opt(r.t_der_hours),
            fmt_opt(r.t_0_hours),
            r.status
        );
    }
    s
}

fn sensitivity_table(rows: &[SensitivityRow]) -> String {
    let mut s = String::new();
    let mut placements: Vec<&str> = rows.iter().map(|r| r.placement.as_str()).collect();
    placements.dedup();
    for p in placements {
        let _ = writeln!(s, "\n{p}: ENS [MWh], rows = assumed mode, columns = actual mode");
        let cells: Vec<&SensitivityRow> = rows.iter().filter(|r| r.placement == p).collect();
        let mut actual: Vec<DerMode> = cells.iter().map(|r| r.actual).collect();
        actual.sort();
        actual.dedup();
        let mut assumed: Vec<DerMode> = cells.iter().map(|r| r.assumed).collect();
        assumed.sort();
        assumed.dedup();
        let _ = write!(s, "{:<12}", "");
        for a in &actual {
            let _ = write!(s, "{:>12}", a.as_str());
        }
        s.push('\n');
        for m in &assumed {
            let _ = write!(s, "{:<12}", m.as_str());
            for a in &actual {
                let cell = cells.iter().find(|r| r.assumed == *m && r.actual == *a);
                let text = match cell {
                    Some(c) if c.converged => format!("{:.3}", c.ens_mwh),
                    Some(c) => format!("{:.3}*", c.ens_mwh),
                    None => "-".into(),
                };
                let _ = write!(s, "{text:>12}");
            }
            s.push('\n');
        }
    }
    s
}

pub fn summary_table(r: &SweepResult) -> String {
    let sens: Vec<SensitivityRow> = r
        .sensitivity
        .iter()
        .flat_map(|m| {
            m.cells.iter().flatten().map(|c| SensitivityRow {
                placement: m.placement.clone(),
                assumed: c.assumed,
                actual: c.actual,
                ens_mwh: c.ens_mwh,
                converged: c.converged,
            })
        })
        .collect();
    ens_table(&ens_rows(r)) + &sensitivity_table(&sens)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CoreError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    rd.deserialize().map(|r| r.map_err(|e| CoreError::Parse(format!("{}: {e}", path.display())))).collect()
}

/// The sweep tables of an output directory as text.
pub fn report(out: &Path) -> Result<String, CoreError> {
    let ens: Vec<EnsRow> = read_csv(&out.join("ens_summary.csv"))?;
    let sens: Vec<SensitivityRow> = read_csv(&out.join("sensitivity.csv"))?;
    Ok(ens_table(&ens) + &sensitivity_table(&sens))
}
