//! Domain types for the radial feeder, file ingestion, and structural
//! validation.
//!
//! A feeder is described by a single JSON document (see
//! `docs/feeder-format.md`). All electrical quantities carried by the file
//! are either physical units (kW, kV, km) or per-unit on the feeder base;
//! the power-flow layer works exclusively in per-unit on `base_power_kva`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A network node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Unique identifier within the feeder.
    pub id: String,
    /// Geometric distance from the substation, km. Exactly one bus (the
    /// substation itself) sits at 0.
    pub distance_from_substation: f64,
    /// Nominal line-to-line voltage, kV.
    pub base_voltage: f64,
}

/// A series line segment between two buses, impedance in per-unit on the
/// feeder base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub from_bus: String,
    pub to_bus: String,
    pub resistance: f64,
    pub reactance: f64,
}

/// A constant-power load at fixed power factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: String,
    /// Peak active power, kW. Instantaneous demand is this value times the
    /// shared load shape.
    pub peak_active_power: f64,
    /// Power factor in (0, 1]; reactive demand is derived lagging.
    pub power_factor: f64,
}

/// A PV system with its inverter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvSystem {
    pub bus: String,
    /// Panel DC nameplate at the reference scenario, kW.
    pub dc_rating: f64,
    /// Inverter kVA rating divided by the DC rating.
    pub ac_dc_ratio: f64,
    /// Set per scenario by the SI assignment, never stored in the file.
    #[serde(skip)]
    pub has_smart_inverter: bool,
}

impl PvSystem {
    /// Inverter apparent-power rating, kVA.
    pub fn kva_rating(&self) -> f64 {
        self.ac_dc_ratio * self.dc_rating
    }
}

/// A tap-changing voltage regulator modeled as an ideal in-line
/// autotransformer. `to_bus` is the controlled (downstream) node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regulator {
    pub from_bus: String,
    pub to_bus: String,
    /// Target voltage at `to_bus`, per-unit.
    pub setpoint: f64,
    /// Width of the no-action band around the setpoint, per-unit.
    pub bandwidth: f64,
    /// Ratio change per tap, per-unit.
    pub tap_step: f64,
    pub tap_min: i32,
    pub tap_max: i32,
}

impl Regulator {
    /// Voltage ratio applied from `from_bus` to `to_bus` at a tap position.
    pub fn ratio(&self, tap: i32) -> f64 {
        1.0 + f64::from(tap) * self.tap_step
    }
}

/// An immutable radial network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feeder {
    pub base_power_kva: f64,
    pub buses: Vec<Bus>,
    pub segments: Vec<LineSegment>,
    pub loads: Vec<Load>,
    pub pv_systems: Vec<PvSystem>,
    pub regulators: Vec<Regulator>,
}

impl Feeder {
    /// Coincident peak load, kW (the shared load shape peaks at 1.0).
    pub fn peak_load_kw(&self) -> f64 {
        self.loads.iter().map(|l| l.peak_active_power).sum()
    }

    /// Total installed inverter capacity, kVA.
    pub fn installed_pv_kva(&self) -> f64 {
        self.pv_systems.iter().map(PvSystem::kva_rating).sum()
    }

    /// Index of the substation bus (the unique bus at distance 0).
    pub fn substation_index(&self) -> Option<usize> {
        self.buses
            .iter()
            .position(|b| b.distance_from_substation == 0.0)
    }
}

#[derive(Debug, Error)]
pub enum NetmodelError {
    #[error("feeder file syntax error: {0}")]
    Syntax(String),
    #[error("duplicate bus id {id:?}")]
    DuplicateBusId { id: String },
    #[error("{context} references unknown bus {id:?}")]
    DanglingBusReference { context: String, id: String },
    #[error("cycle detected involving buses {buses:?}")]
    CycleDetected { buses: Vec<String> },
    #[error("buses not reachable from the substation: {buses:?}")]
    DisconnectedBuses { buses: Vec<String> },
    #[error("base power must be positive, got {0}")]
    NonpositiveBase(f64),
    #[error("expected exactly one bus at distance 0, found {count}")]
    SubstationCount { count: usize },
    #[error("bus {id:?}: {reason}")]
    InvalidBus { id: String, reason: String },
    #[error("segment {from:?}->{to:?}: {reason}")]
    InvalidSegment {
        from: String,
        to: String,
        reason: String,
    },
    #[error("load at bus {bus:?}: {reason}")]
    InvalidLoad { bus: String, reason: String },
    #[error("PV system at bus {bus:?}: {reason}")]
    InvalidPv { bus: String, reason: String },
    #[error("regulator {from:?}->{to:?}: {reason}")]
    InvalidRegulator {
        from: String,
        to: String,
        reason: String,
    },
    #[error("feeder peak load must be positive")]
    ZeroPeakLoad,
    #[error("no regulator on the substation branch")]
    NoSubstationRegulator,
    #[error(
        "bus {bus:?} at {child_km} km is closer to the substation than its parent at {parent_km} km"
    )]
    DistanceInconsistency {
        bus: String,
        child_km: f64,
        parent_km: f64,
    },
}

/// Branch connecting a bus to its parent in the radial tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Index into `Feeder::segments`.
    Segment(usize),
    /// Index into `Feeder::regulators`.
    Regulator(usize),
}

/// Tree description of a validated radial feeder: parent map, a
/// depth-ordered bus list, and the id-to-index mapping shared by the
/// solver and the control layer.
///
/// Immutable after construction and safe to share across concurrently
/// running scenarios.
#[derive(Debug, Clone)]
pub struct RadialTree {
    /// Bus id -> index into `Feeder::buses`.
    index: HashMap<String, usize>,
    /// Index of the substation bus.
    pub root: usize,
    /// Breadth-first order from the root; a valid topological order.
    pub order: Vec<usize>,
    /// Parent bus index per bus; `None` only for the root.
    pub parent: Vec<Option<usize>>,
    /// Branch connecting each bus to its parent; `None` only for the root.
    pub parent_branch: Vec<Option<Branch>>,
    /// Bus index of each load, aligned with `Feeder::loads`.
    pub load_bus: Vec<usize>,
    /// Bus index of each PV system, aligned with `Feeder::pv_systems`.
    pub pv_bus: Vec<usize>,
    /// (from, to) bus indices of each regulator, aligned with
    /// `Feeder::regulators`.
    pub regulator_buses: Vec<(usize, usize)>,
}

impl RadialTree {
    pub fn bus_count(&self) -> usize {
        self.parent.len()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

/// Parse a feeder file and check every structural invariant.
pub fn parse_feeder(text: &str) -> Result<Feeder, NetmodelError> {
    let feeder: Feeder =
        serde_json::from_str(text).map_err(|e| NetmodelError::Syntax(e.to_string()))?;
    validate_feeder(&feeder)?;
    Ok(feeder)
}

/// Serialize a feeder to the file format. `parse_feeder` on the output
/// reproduces the input field-for-field.
pub fn serialize_feeder(feeder: &Feeder) -> String {
    let mut s = serde_json::to_string_pretty(feeder).expect("feeder serialization cannot fail");
    s.push('\n');
    s
}

/// Check all per-type invariants and the radial topology. Accepts exactly
/// the feeders that violate no stated invariant.
pub fn validate_feeder(feeder: &Feeder) -> Result<(), NetmodelError> {
    if !(feeder.base_power_kva > 0.0) {
        return Err(NetmodelError::NonpositiveBase(feeder.base_power_kva));
    }

    let mut index: HashMap<String, usize> = HashMap::with_capacity(feeder.buses.len());
    for (i, bus) in feeder.buses.iter().enumerate() {
        if index.insert(bus.id.clone(), i).is_some() {
            return Err(NetmodelError::DuplicateBusId { id: bus.id.clone() });
        }
        if !bus.distance_from_substation.is_finite() || bus.distance_from_substation < 0.0 {
            return Err(NetmodelError::InvalidBus {
                id: bus.id.clone(),
                reason: format!(
                    "distance_from_substation must be finite and >= 0, got {}",
                    bus.distance_from_substation
                ),
            });
        }
        if !(bus.base_voltage > 0.0) {
            return Err(NetmodelError::InvalidBus {
                id: bus.id.clone(),
                reason: format!("base_voltage must be positive, got {}", bus.base_voltage),
            });
        }
    }

    let substations = feeder
        .buses
        .iter()
        .filter(|b| b.distance_from_substation == 0.0)
        .count();
    if substations != 1 {
        return Err(NetmodelError::SubstationCount { count: substations });
    }

    for seg in &feeder.segments {
        let bad = |reason: String| NetmodelError::InvalidSegment {
            from: seg.from_bus.clone(),
            to: seg.to_bus.clone(),
            reason,
        };
        if !seg.resistance.is_finite() || seg.resistance < 0.0 {
            return Err(bad(format!("resistance must be >= 0, got {}", seg.resistance)));
        }
        if !seg.reactance.is_finite() || seg.reactance < 0.0 {
            return Err(bad(format!("reactance must be >= 0, got {}", seg.reactance)));
        }
        if seg.resistance == 0.0 && seg.reactance == 0.0 {
            return Err(bad("resistance and reactance cannot both be zero".into()));
        }
        if seg.from_bus == seg.to_bus {
            return Err(bad("segment endpoints must differ".into()));
        }
    }

    let mut peak = 0.0;
    for load in &feeder.loads {
        let bad = |reason: String| NetmodelError::InvalidLoad {
            bus: load.bus.clone(),
            reason,
        };
        if !load.peak_active_power.is_finite() || load.peak_active_power < 0.0 {
            return Err(bad(format!(
                "peak_active_power must be >= 0, got {}",
                load.peak_active_power
            )));
        }
        if !(load.power_factor > 0.0 && load.power_factor <= 1.0) {
            return Err(bad(format!(
                "power_factor must be in (0, 1], got {}",
                load.power_factor
            )));
        }
        peak += load.peak_active_power;
    }
    if !(peak > 0.0) {
        return Err(NetmodelError::ZeroPeakLoad);
    }

    for pv in &feeder.pv_systems {
        let bad = |reason: String| NetmodelError::InvalidPv {
            bus: pv.bus.clone(),
            reason,
        };
        if !(pv.dc_rating > 0.0) || !pv.dc_rating.is_finite() {
            return Err(bad(format!("dc_rating must be positive, got {}", pv.dc_rating)));
        }
        if !(pv.ac_dc_ratio > 0.0) || !pv.ac_dc_ratio.is_finite() {
            return Err(bad(format!(
                "ac_dc_ratio must be positive, got {}",
                pv.ac_dc_ratio
            )));
        }
    }

    for reg in &feeder.regulators {
        let bad = |reason: String| NetmodelError::InvalidRegulator {
            from: reg.from_bus.clone(),
            to: reg.to_bus.clone(),
            reason,
        };
        if !(reg.tap_min <= 0 && 0 <= reg.tap_max) {
            return Err(bad(format!(
                "tap range must contain 0, got [{}, {}]",
                reg.tap_min, reg.tap_max
            )));
        }
        if !(reg.tap_step > 0.0) {
            return Err(bad(format!("tap_step must be positive, got {}", reg.tap_step)));
        }
        if !(reg.bandwidth > 0.0) {
            return Err(bad(format!("bandwidth must be positive, got {}", reg.bandwidth)));
        }
        let lo = reg.setpoint - reg.bandwidth / 2.0;
        let hi = reg.setpoint + reg.bandwidth / 2.0;
        if lo < 0.9 || hi > 1.1 {
            return Err(bad(format!(
                "setpoint band [{lo}, {hi}] must lie within [0.9, 1.1] p.u."
            )));
        }
    }

    let substation = feeder.substation_index().expect("checked above");
    let substation_id = &feeder.buses[substation].id;
    if !feeder.regulators.iter().any(|r| &r.from_bus == substation_id) {
        return Err(NetmodelError::NoSubstationRegulator);
    }

    // Radiality, dangling references, and regulator orientation.
    validate_radial(feeder)?;
    Ok(())
}

/// Build the tree description of a radial feeder.
///
/// The parent map covers every non-substation bus exactly once, and
/// `order` is a valid topological order from the root. Regulators must be
/// oriented with `from_bus` on the substation side.
pub fn validate_radial(feeder: &Feeder) -> Result<RadialTree, NetmodelError> {
    let n = feeder.buses.len();
    let mut index: HashMap<String, usize> = HashMap::with_capacity(n);
    for (i, bus) in feeder.buses.iter().enumerate() {
        if index.insert(bus.id.clone(), i).is_some() {
            return Err(NetmodelError::DuplicateBusId { id: bus.id.clone() });
        }
    }
    let lookup = |id: &str, context: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| NetmodelError::DanglingBusReference {
                context: context.to_string(),
                id: id.to_string(),
            })
    };

    // Adjacency over segments and regulator branches. Each entry records
    // the branch and whether we traverse it in its stored orientation.
    let mut adjacency: Vec<Vec<(usize, Branch, bool)>> = vec![Vec::new(); n];
    for (i, seg) in feeder.segments.iter().enumerate() {
        let a = lookup(&seg.from_bus, "segment")?;
        let b = lookup(&seg.to_bus, "segment")?;
        adjacency[a].push((b, Branch::Segment(i), true));
        adjacency[b].push((a, Branch::Segment(i), false));
    }
    for (i, reg) in feeder.regulators.iter().enumerate() {
        let a = lookup(&reg.from_bus, "regulator")?;
        let b = lookup(&reg.to_bus, "regulator")?;
        adjacency[a].push((b, Branch::Regulator(i), true));
        adjacency[b].push((a, Branch::Regulator(i), false));
    }
    let mut load_bus = Vec::with_capacity(feeder.loads.len());
    for load in &feeder.loads {
        load_bus.push(lookup(&load.bus, "load")?);
    }
    let mut pv_bus = Vec::with_capacity(feeder.pv_systems.len());
    for pv in &feeder.pv_systems {
        pv_bus.push(lookup(&pv.bus, "PV system")?);
    }

    let root = feeder
        .substation_index()
        .ok_or(NetmodelError::SubstationCount { count: 0 })?;

    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut parent_branch: Vec<Option<Branch>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();
    visited[root] = true;
    queue.push_back(root);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, branch, forward) in &adjacency[u] {
            if Some(branch) == parent_branch[u] {
                continue; // the edge we arrived through
            }
            if let Branch::Regulator(_) = branch {
                if !forward {
                    let reg_idx = match branch {
                        Branch::Regulator(i) => i,
                        Branch::Segment(_) => unreachable!(),
                    };
                    let reg = &feeder.regulators[reg_idx];
                    return Err(NetmodelError::InvalidRegulator {
                        from: reg.from_bus.clone(),
                        to: reg.to_bus.clone(),
                        reason: "from_bus must be on the substation side".into(),
                    });
                }
            }
            if visited[v] {
                // Back edge: walk u's ancestry up to v to name the cycle.
                let mut cycle = vec![feeder.buses[v].id.clone()];
                let mut w = u;
                while w != v {
                    cycle.push(feeder.buses[w].id.clone());
                    match parent[w] {
                        Some(p) => w = p,
                        None => break,
                    }
                }
                cycle.sort();
                return Err(NetmodelError::CycleDetected { buses: cycle });
            }
            visited[v] = true;
            parent[v] = Some(u);
            parent_branch[v] = Some(branch);
            queue.push_back(v);
        }
    }

    if order.len() != n {
        let mut missing: Vec<String> = feeder
            .buses
            .iter()
            .enumerate()
            .filter(|(i, _)| !visited[*i])
            .map(|(_, b)| b.id.clone())
            .collect();
        missing.sort();
        return Err(NetmodelError::DisconnectedBuses { buses: missing });
    }

    let mut regulator_buses = Vec::with_capacity(feeder.regulators.len());
    for reg in &feeder.regulators {
        regulator_buses.push((index[&reg.from_bus], index[&reg.to_bus]));
    }

    Ok(RadialTree {
        index,
        root,
        order,
        parent,
        parent_branch,
        load_bus,
        pv_bus,
        regulator_buses,
    })
}

/// Map bus id to its distance from the substation, verifying that
/// distance never decreases along any root-to-leaf path.
pub fn bus_distances(
    feeder: &Feeder,
    tree: &RadialTree,
) -> Result<BTreeMap<String, f64>, NetmodelError> {
    for &b in &tree.order {
        if let Some(p) = tree.parent[b] {
            let child_km = feeder.buses[b].distance_from_substation;
            let parent_km = feeder.buses[p].distance_from_substation;
            if child_km < parent_km {
                return Err(NetmodelError::DistanceInconsistency {
                    bus: feeder.buses[b].id.clone(),
                    child_km,
                    parent_km,
                });
            }
        }
    }
    Ok(feeder
        .buses
        .iter()
        .map(|b| (b.id.clone(), b.distance_from_substation))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: &str, km: f64) -> Bus {
        Bus {
            id: id.into(),
            distance_from_substation: km,
            base_voltage: 12.47,
        }
    }

    fn segment(from: &str, to: &str) -> LineSegment {
        LineSegment {
            from_bus: from.into(),
            to_bus: to.into(),
            resistance: 0.01,
            reactance: 0.02,
        }
    }

    fn substation_regulator() -> Regulator {
        Regulator {
            from_bus: "sub".into(),
            to_bus: "a".into(),
            setpoint: 0.99,
            bandwidth: 0.0167,
            tap_step: 0.00625,
            tap_min: -16,
            tap_max: 16,
        }
    }

    fn two_bus_feeder() -> Feeder {
        Feeder {
            base_power_kva: 1000.0,
            buses: vec![bus("sub", 0.0), bus("a", 0.1), bus("b", 1.0)],
            segments: vec![segment("a", "b")],
            loads: vec![Load {
                bus: "b".into(),
                peak_active_power: 100.0,
                power_factor: 0.95,
            }],
            pv_systems: vec![],
            regulators: vec![substation_regulator()],
        }
    }

    #[test]
    fn parses_minimal_feeder() {
        let text = serialize_feeder(&two_bus_feeder());
        let feeder = parse_feeder(&text).unwrap();
        assert_eq!(feeder.buses.len(), 3);
        assert_eq!(feeder.segments.len(), 1);
    }

    #[test]
    fn round_trip_is_identity() {
        let feeder = two_bus_feeder();
        let reparsed = parse_feeder(&serialize_feeder(&feeder)).unwrap();
        assert_eq!(feeder, reparsed);
    }

    #[test]
    fn dangling_reference_names_the_bus() {
        let mut feeder = two_bus_feeder();
        feeder.segments.push(segment("a", "b9"));
        let err = validate_feeder(&feeder).unwrap_err();
        match err {
            NetmodelError::DanglingBusReference { id, .. } => assert_eq!(id, "b9"),
            other => panic!("expected dangling reference, got {other}"),
        }
    }

    #[test]
    fn chain_parent_map() {
        let feeder = two_bus_feeder();
        let tree = validate_radial(&feeder).unwrap();
        let a = tree.bus_index("a").unwrap();
        let b = tree.bus_index("b").unwrap();
        let sub = tree.bus_index("sub").unwrap();
        assert_eq!(tree.root, sub);
        assert_eq!(tree.parent[a], Some(sub));
        assert_eq!(tree.parent[b], Some(a));
    }

    #[test]
    fn star_parents_are_substation() {
        let mut feeder = two_bus_feeder();
        feeder.buses.push(bus("c", 0.5));
        feeder.buses.push(bus("d", 0.7));
        feeder.segments.push(segment("a", "c"));
        feeder.segments.push(segment("a", "d"));
        let tree = validate_radial(&feeder).unwrap();
        let a = tree.bus_index("a").unwrap();
        for id in ["b", "c", "d"] {
            assert_eq!(tree.parent[tree.bus_index(id).unwrap()], Some(a));
        }
    }

    #[test]
    fn triangle_reports_cycle_members() {
        let mut feeder = two_bus_feeder();
        feeder.buses.push(bus("c", 1.5));
        feeder.segments.push(segment("b", "c"));
        feeder.segments.push(segment("c", "a"));
        let err = validate_radial(&feeder).unwrap_err();
        match err {
            NetmodelError::CycleDetected { buses } => {
                assert_eq!(buses, vec!["a".to_string(), "b".into(), "c".into()]);
            }
            other => panic!("expected cycle, got {other}"),
        }
    }

    #[test]
    fn disconnected_bus_reported() {
        let mut feeder = two_bus_feeder();
        feeder.buses.push(bus("island", 2.0));
        let err = validate_feeder(&feeder).unwrap_err();
        match err {
            NetmodelError::DisconnectedBuses { buses } => {
                assert_eq!(buses, vec!["island".to_string()]);
            }
            other => panic!("expected disconnection, got {other}"),
        }
    }

    #[test]
    fn substation_distance_is_zero() {
        let feeder = two_bus_feeder();
        let tree = validate_radial(&feeder).unwrap();
        let distances = bus_distances(&feeder, &tree).unwrap();
        assert_eq!(distances["sub"], 0.0);
    }

    #[test]
    fn decreasing_distance_is_inconsistent() {
        let mut feeder = two_bus_feeder();
        // chain sub(0) - a(2) - b(1): b is closer than its parent
        feeder.buses[1].distance_from_substation = 2.0;
        feeder.buses[2].distance_from_substation = 1.0;
        let tree = validate_radial(&feeder).unwrap();
        let err = bus_distances(&feeder, &tree).unwrap_err();
        match err {
            NetmodelError::DistanceInconsistency { bus, .. } => assert_eq!(bus, "b"),
            other => panic!("expected inconsistency, got {other}"),
        }
    }

    #[test]
    fn reversed_regulator_rejected() {
        let mut feeder = two_bus_feeder();
        feeder.regulators[0] = Regulator {
            from_bus: "a".into(),
            to_bus: "sub".into(),
            ..substation_regulator()
        };
        assert!(validate_radial(&feeder).is_err());
    }

    #[test]
    fn nonpositive_base_rejected() {
        let mut feeder = two_bus_feeder();
        feeder.base_power_kva = 0.0;
        assert!(matches!(
            validate_feeder(&feeder),
            Err(NetmodelError::NonpositiveBase(_))
        ));
    }

    #[test]
    fn zero_total_load_rejected() {
        let mut feeder = two_bus_feeder();
        feeder.loads[0].peak_active_power = 0.0;
        assert!(matches!(
            validate_feeder(&feeder),
            Err(NetmodelError::ZeroPeakLoad)
        ));
    }

    #[test]
    fn syntax_error_reports_location() {
        let err = parse_feeder("{ not json").unwrap_err();
        match err {
            NetmodelError::Syntax(msg) => assert!(msg.contains("line"), "got: {msg}"),
            other => panic!("expected syntax error, got {other}"),
        }
    }
}
