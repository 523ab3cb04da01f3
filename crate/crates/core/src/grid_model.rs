//! Static network description and case-file ingestion.
//!
//! Case files carry power quantities in MW / MVAr (and bus shunts in MW /
//! MVAr consumed at 1.0 p.u.), impedances in per-unit and phase shifts in
//! degrees. Everything held in memory is per-unit on `base_mva`, angles in
//! radians.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The IEEE 14-bus test case shipped with the crate.
pub const IEEE14_JSON: &str = include_str!("../data/ieee14.json");

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("failed to read case file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed case file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid case: {}", .0.join("; "))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusRecord {
    /// 1-based bus number.
    pub id: usize,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    /// Shunt conductance, p.u. power consumed at 1.0 p.u. voltage.
    pub g_shunt: f64,
    /// Shunt susceptance, p.u. reactive power injected at 1.0 p.u. voltage.
    pub b_shunt: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    pub b_shunt: f64,
    /// Off-nominal turns ratio on the from side; 1.0 for plain lines.
    pub tap_ratio: f64,
    /// Phase shift in radians.
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorRecord {
    pub bus: usize,
    /// Voltage regulator reference point.
    pub v_set: f64,
    pub p_gen: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub online: bool,
}

/// A network case in per-unit. Immutable once validated; share freely.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub generators: Vec<GeneratorRecord>,
    pub base_mva: f64,
}

// On-disk records. Units as in the module docs.

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BusFile {
    id: usize,
    kind: BusKind,
    p_load: f64,
    q_load: f64,
    #[serde(default)]
    g_shunt: f64,
    #[serde(default)]
    b_shunt: f64,
    v_min: f64,
    v_max: f64,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BranchFile {
    from_bus: usize,
    to_bus: usize,
    r: f64,
    x: f64,
    #[serde(default)]
    b_shunt: f64,
    #[serde(default = "one")]
    tap_ratio: f64,
    #[serde(default)]
    shift: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeneratorFile {
    bus: usize,
    v_set: f64,
    p_gen: f64,
    q_min: f64,
    q_max: f64,
    #[serde(default = "yes")]
    online: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseFile {
    base_mva: f64,
    buses: Vec<BusFile>,
    branches: Vec<BranchFile>,
    generators: Vec<GeneratorFile>,
}

impl CaseFile {
    fn into_case(self) -> GridCase {
        let base = self.base_mva;
        GridCase {
            base_mva: base,
            buses: self
                .buses
                .into_iter()
                .map(|b| BusRecord {
                    id: b.id,
                    kind: b.kind,
                    p_load: b.p_load / base,
                    q_load: b.q_load / base,
                    g_shunt: b.g_shunt / base,
                    b_shunt: b.b_shunt / base,
                    v_min: b.v_min,
                    v_max: b.v_max,
                })
                .collect(),
            branches: self
                .branches
                .into_iter()
                .map(|br| BranchRecord {
                    from_bus: br.from_bus,
                    to_bus: br.to_bus,
                    r: br.r,
                    x: br.x,
                    b_shunt: br.b_shunt,
                    tap_ratio: br.tap_ratio,
                    shift: br.shift.to_radians(),
                })
                .collect(),
            generators: self
                .generators
                .into_iter()
                .map(|g| GeneratorRecord {
                    bus: g.bus,
                    v_set: g.v_set,
                    p_gen: g.p_gen / base,
                    q_min: g.q_min / base,
                    q_max: g.q_max / base,
                    online: g.online,
                })
                .collect(),
        }
    }

    fn from_case(case: &GridCase) -> Self {
        let base = case.base_mva;
        CaseFile {
            base_mva: base,
            buses: case
                .buses
                .iter()
                .map(|b| BusFile {
                    id: b.id,
                    kind: b.kind,
                    p_load: b.p_load * base,
                    q_load: b.q_load * base,
                    g_shunt: b.g_shunt * base,
                    b_shunt: b.b_shunt * base,
                    v_min: b.v_min,
                    v_max: b.v_max,
                })
                .collect(),
            branches: case
                .branches
                .iter()
                .map(|br| BranchFile {
                    from_bus: br.from_bus,
                    to_bus: br.to_bus,
                    r: br.r,
                    x: br.x,
                    b_shunt: br.b_shunt,
                    tap_ratio: br.tap_ratio,
                    shift: br.shift.to_degrees(),
                })
                .collect(),
            generators: case
                .generators
                .iter()
                .map(|g| GeneratorFile {
                    bus: g.bus,
                    v_set: g.v_set,
                    p_gen: g.p_gen * base,
                    q_min: g.q_min * base,
                    q_max: g.q_max * base,
                    online: g.online,
                })
                .collect(),
        }
    }
}

/// Reads, converts and validates a case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase, CaseError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case(&text)
}

/// Parses and validates a case from its JSON text.
pub fn parse_case(text: &str) -> Result<GridCase, CaseError> {
    let file: CaseFile = serde_json::from_str(text)?;
    let case = file.into_case();
    let violations = validate(&case);
    if violations.is_empty() {
        Ok(case)
    } else {
        Err(CaseError::Validation(violations))
    }
}

/// Lists every broken invariant. Empty means the case is usable.
pub fn validate(case: &GridCase) -> Vec<String> {
    let mut out = Vec::new();

    if !(case.base_mva.is_finite() && case.base_mva > 0.0) {
        out.push(format!("base_mva must be positive, got {}", case.base_mva));
    }
    if case.buses.is_empty() {
        out.push("case has no buses".to_string());
        return out;
    }

    let mut ids = HashSet::new();
    for b in &case.buses {
        if !ids.insert(b.id) {
            out.push(format!("bus {}: duplicate id", b.id));
        }
        if !(b.v_min < b.v_max) {
            out.push(format!("bus {}: v_min {} not below v_max {}", b.id, b.v_min, b.v_max));
        }
        if ![b.p_load, b.q_load, b.g_shunt, b.b_shunt].iter().all(|v| v.is_finite()) {
            out.push(format!("bus {}: non-finite load or shunt", b.id));
        }
    }

    let slacks: Vec<usize> = case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .map(|b| b.id)
        .collect();
    match slacks.len() {
        0 => out.push("no slack bus".to_string()),
        1 => {}
        _ => out.push(format!("{} slack buses: {:?}", slacks.len(), slacks)),
    }

    for (k, br) in case.branches.iter().enumerate() {
        let n = k + 1;
        if !ids.contains(&br.from_bus) {
            out.push(format!("branch {n}: unknown from_bus {}", br.from_bus));
        }
        if !ids.contains(&br.to_bus) {
            out.push(format!("branch {n}: unknown to_bus {}", br.to_bus));
        }
        if br.from_bus == br.to_bus {
            out.push(format!("branch {n}: from_bus equals to_bus ({})", br.from_bus));
        }
        if br.r == 0.0 && br.x == 0.0 {
            out.push(format!("branch {n}: zero impedance"));
        }
        if !(br.tap_ratio.is_finite() && br.tap_ratio > 0.0) {
            out.push(format!("branch {n}: tap_ratio must be positive, got {}", br.tap_ratio));
        }
        if ![br.r, br.x, br.b_shunt, br.shift].iter().all(|v| v.is_finite()) {
            out.push(format!("branch {n}: non-finite parameter"));
        }
    }

    let mut gen_buses = HashSet::new();
    for (k, g) in case.generators.iter().enumerate() {
        let n = k + 1;
        if !ids.contains(&g.bus) {
            out.push(format!("generator {n}: unknown bus {}", g.bus));
        }
        if !gen_buses.insert(g.bus) {
            out.push(format!("generator {n}: second generator on bus {}", g.bus));
        }
        if !(g.q_min <= g.q_max) {
            out.push(format!(
                "generator {n} (bus {}): q_min {} exceeds q_max {}",
                g.bus,
                g.q_min * case.base_mva,
                g.q_max * case.base_mva
            ));
        }
        if !(g.v_set.is_finite() && g.v_set > 0.0) || !g.p_gen.is_finite() {
            out.push(format!("generator {n} (bus {}): invalid set point", g.bus));
        }
    }

    if let [slack] = slacks.as_slice() {
        let hosted = case.generators.iter().any(|g| g.bus == *slack && g.online);
        if !hosted {
            out.push(format!("slack bus {slack} has no online generator"));
        }
    }

    if ids.len() == case.buses.len() {
        if let Some(island) = unreachable_buses(case) {
            out.push(format!("network is disconnected; unreachable buses {island:?}"));
        }
    }

    out
}

/// Buses not reachable from the first bus over known-endpoint branches.
fn unreachable_buses(case: &GridCase) -> Option<Vec<usize>> {
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for br in &case.branches {
        adj.entry(br.from_bus).or_default().push(br.to_bus);
        adj.entry(br.to_bus).or_default().push(br.from_bus);
    }
    let start = case.buses[0].id;
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(b) = stack.pop() {
        for &nb in adj.get(&b).into_iter().flatten() {
            if seen.insert(nb) {
                stack.push(nb);
            }
        }
    }
    let missing: Vec<usize> = case
        .buses
        .iter()
        .map(|b| b.id)
        .filter(|id| !seen.contains(id))
        .collect();
    (!missing.is_empty()).then_some(missing)
}

impl GridCase {
    /// The bundled IEEE 14-bus case.
    pub fn ieee14() -> Self {
        parse_case(IEEE14_JSON).expect("bundled IEEE 14-bus case is valid")
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Position of a bus id in `buses`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn generator_at(&self, bus: usize) -> Option<&GeneratorRecord> {
        self.generators.iter().find(|g| g.bus == bus)
    }

    pub fn generator_at_mut(&mut self, bus: usize) -> Option<&mut GeneratorRecord> {
        self.generators.iter_mut().find(|g| g.bus == bus)
    }

    /// Serializes back to the on-disk schema.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CaseFile::from_case(self)).expect("case serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_json())
    }
}
