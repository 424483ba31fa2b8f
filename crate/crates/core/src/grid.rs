//! Per-unit network model and MATPOWER case ingestion.
//!
//! The model is deliberately the reduced AC-OPF network: series branch
//! admittances only. Bus shunts, line charging, tap ratios and phase shifts
//! present in a case file are read, reported through `log::warn!` and
//! dropped.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("case file has no `mpc.{0}` matrix")]
    MissingSection(&'static str),
    #[error("unsupported case feature: {0}")]
    Unsupported(String),
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("branch {from}-{to} has zero series impedance")]
    ZeroImpedance { from: usize, to: usize },
    #[error("zero series impedance")]
    ZeroSeriesImpedance,
    #[error("network json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub index: usize,
    /// Bus number in the source case file.
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub bus_type: BusType,
}

/// Quadratic generation cost in $ with `p` in per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl CostCurve {
    #[inline]
    pub fn eval(&self, p: f64) -> f64 {
        (self.c2 * p + self.c1) * p + self.c0
    }

    #[inline]
    pub fn derivative(&self, p: f64) -> f64 {
        2.0 * self.c2 * p + self.c1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub pg_min: f64,
    pub pg_max: f64,
    pub qg_min: f64,
    pub qg_max: f64,
    pub cost: CostCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub pd_base: f64,
    pub qd_base: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchStatus {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
    /// Apparent-power limit in p.u.; `None` when the case gives no rating.
    pub s_max: Option<f64>,
    pub status: BranchStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub branches: Vec<Branch>,
    /// Generator indices attached to each bus, indexed by bus.
    pub gens_at_bus: Vec<Vec<usize>>,
    pub slack_bus: usize,
}

/// Series admittance `g + jb = 1/(r + jx)`.
pub fn series_admittance(r: f64, x: f64) -> Result<(f64, f64), GridError> {
    let den = r * r + x * x;
    if den == 0.0 || !den.is_finite() {
        return Err(GridError::ZeroSeriesImpedance);
    }
    Ok((r / den, -x / den))
}

impl Network {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    pub fn n_load(&self) -> usize {
        self.loads.len()
    }

    pub fn n_branch(&self) -> usize {
        self.branches.len()
    }

    /// Loads attached to each bus, indexed by bus.
    pub fn loads_at_bus(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_bus()];
        for (k, l) in self.loads.iter().enumerate() {
            out[l.bus].push(k);
        }
        out
    }

    /// Branch indices incident to each bus.
    pub fn branches_at_bus(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_bus()];
        for (k, br) in self.branches.iter().enumerate() {
            out[br.from].push(k);
            out[br.to].push(k);
        }
        out
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let inv = |m: String| Err(GridError::Invalid(m));
        if !(self.base_mva > 0.0) {
            return inv(format!("base_mva must be positive, got {}", self.base_mva));
        }
        let n = self.n_bus();
        for (i, b) in self.buses.iter().enumerate() {
            if b.index != i {
                return inv(format!("bus {i} carries index {}", b.index));
            }
            if !(b.v_min > 0.0 && b.v_min <= b.v_max) {
                return inv(format!("bus {} has voltage limits [{}, {}]", b.id, b.v_min, b.v_max));
            }
        }
        let slacks: Vec<usize> =
            self.buses.iter().filter(|b| b.bus_type == BusType::Slack).map(|b| b.index).collect();
        if slacks != [self.slack_bus] {
            return inv(format!("expected exactly one slack bus (slack_bus = {}), found {slacks:?}", self.slack_bus));
        }
        for (k, g) in self.generators.iter().enumerate() {
            if g.bus >= n {
                return inv(format!("generator {k} references missing bus {}", g.bus));
            }
            if g.pg_min > g.pg_max || g.qg_min > g.qg_max {
                return inv(format!("generator {k} has crossed limits"));
            }
            if g.cost.c2 < 0.0 {
                return inv(format!("generator {k} has concave cost"));
            }
        }
        for (k, l) in self.loads.iter().enumerate() {
            if l.bus >= n || !l.pd_base.is_finite() || !l.qd_base.is_finite() {
                return inv(format!("load {k} is malformed"));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            if br.from >= n || br.to >= n {
                return inv(format!("branch {k} references a missing bus"));
            }
            if br.g == 0.0 && br.b == 0.0 {
                return inv(format!("branch {k} has zero admittance"));
            }
            if let Some(s) = br.s_max {
                if !(s > 0.0) {
                    return inv(format!("branch {k} has non-positive rating"));
                }
            }
        }
        if self.gens_at_bus.len() != n {
            return inv("gens_at_bus length differs from bus count".into());
        }
        let mut seen = vec![false; self.n_gen()];
        for (bus, gens) in self.gens_at_bus.iter().enumerate() {
            for &k in gens {
                if k >= seen.len() || seen[k] || self.generators[k].bus != bus {
                    return inv(format!("gens_at_bus entry {k} at bus {bus} is inconsistent"));
                }
                seen[k] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return inv("gens_at_bus does not cover every generator".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let net: Network = serde_json::from_str(text)?;
        net.validate()?;
        Ok(net)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Loads a `.m` MATPOWER case or a canonical `.json` network.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            parse_matpower(&text)
        }
    }
}

struct Row {
    line: usize,
    vals: Vec<f64>,
}

/// Parses a MATPOWER version-2 case file.
pub fn parse_matpower(text: &str) -> Result<Network, GridError> {
    let mut base_mva: Option<f64> = None;
    let mut sections: HashMap<String, Vec<Row>> = HashMap::new();
    let mut current: Option<(String, Vec<Row>)> = None;
    let mut in_cell = false;

    for (ln0, raw) in text.lines().enumerate() {
        let line_no = ln0 + 1;
        let line = raw.split('%').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if in_cell {
            if line.contains('}') {
                in_cell = false;
            }
            continue;
        }
        if let Some((name, rows)) = current.as_mut() {
            let (body, done) = match line.find(']') {
                Some(pos) => (&line[..pos], true),
                None => (line, false),
            };
            for chunk in body.split(';') {
                let chunk = chunk.trim();
                if chunk.is_empty() {
                    continue;
                }
                let vals = chunk
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|t| !t.is_empty())
                    .map(|t| parse_number(t).ok_or_else(|| GridError::Parse {
                        line: line_no,
                        msg: format!("bad number `{t}` in mpc.{name}"),
                    }))
                    .collect::<Result<Vec<_>, _>>()?;
                rows.push(Row { line: line_no, vals });
            }
            if done {
                let (name, rows) = current.take().expect("section open");
                sections.insert(name, rows);
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("mpc.") {
            let Some((name, rhs)) = rest.split_once('=') else {
                continue;
            };
            let name = name.trim().to_string();
            let rhs = rhs.trim();
            if name == "baseMVA" {
                let v = rhs.trim_end_matches(';').trim();
                base_mva = Some(parse_number(v).ok_or_else(|| GridError::Parse {
                    line: line_no,
                    msg: format!("bad baseMVA `{v}`"),
                })?);
            } else if let Some(after) = rhs.strip_prefix('[') {
                let mut rows = Vec::new();
                let (body, done) = match after.find(']') {
                    Some(pos) => (&after[..pos], true),
                    None => (after, false),
                };
                for chunk in body.split(';').map(str::trim).filter(|c| !c.is_empty()) {
                    let vals = chunk
                        .split(|c: char| c.is_whitespace() || c == ',')
                        .filter(|t| !t.is_empty())
                        .map(|t| parse_number(t).ok_or_else(|| GridError::Parse {
                            line: line_no,
                            msg: format!("bad number `{t}` in mpc.{name}"),
                        }))
                        .collect::<Result<Vec<_>, _>>()?;
                    rows.push(Row { line: line_no, vals });
                }
                if done {
                    sections.insert(name, rows);
                } else {
                    current = Some((name, rows));
                }
            } else if rhs.starts_with('{') {
                in_cell = !rhs.contains('}');
            }
        }
    }
    if let Some((name, _)) = current {
        return Err(GridError::Parse { line: text.lines().count(), msg: format!("unterminated mpc.{name}") });
    }

    let base_mva = base_mva.ok_or(GridError::MissingSection("baseMVA"))?;
    let bus_rows = sections.remove("bus").ok_or(GridError::MissingSection("bus"))?;
    let gen_rows = sections.remove("gen").ok_or(GridError::MissingSection("gen"))?;
    let branch_rows = sections.remove("branch").ok_or(GridError::MissingSection("branch"))?;
    let cost_rows = sections.remove("gencost").ok_or(GridError::MissingSection("gencost"))?;

    let need = |row: &Row, n: usize, what: &str| -> Result<(), GridError> {
        if row.vals.len() < n {
            Err(GridError::Parse {
                line: row.line,
                msg: format!("{what} row has {} columns, need at least {n}", row.vals.len()),
            })
        } else {
            Ok(())
        }
    };

    let mut ignored_shunts = 0;
    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut loads = Vec::new();
    let mut id_to_index = HashMap::new();
    let mut slack = Vec::new();
    for row in &bus_rows {
        need(row, 13, "bus")?;
        let v = &row.vals;
        let id = as_index(v[0], row.line)?;
        let index = buses.len();
        let bus_type = match v[1] as i64 {
            1 => BusType::Pq,
            2 => BusType::Pv,
            3 => BusType::Slack,
            4 => return Err(GridError::Unsupported(format!("isolated bus {id} (type 4)"))),
            t => return Err(GridError::Parse { line: row.line, msg: format!("unknown bus type {t}") }),
        };
        if bus_type == BusType::Slack {
            slack.push(index);
        }
        if id_to_index.insert(id, index).is_some() {
            return Err(GridError::Parse { line: row.line, msg: format!("duplicate bus number {id}") });
        }
        if v[4] != 0.0 || v[5] != 0.0 {
            ignored_shunts += 1;
        }
        if v[2] != 0.0 || v[3] != 0.0 {
            loads.push(Load { bus: index, pd_base: v[2] / base_mva, qd_base: v[3] / base_mva });
        }
        buses.push(Bus { index, id, v_min: v[12], v_max: v[11], bus_type });
    }
    let slack_bus = match slack.as_slice() {
        [s] => *s,
        _ => return Err(GridError::Invalid(format!("expected exactly one type-3 bus, found {}", slack.len()))),
    };
    let lookup = |id: f64, line: usize| -> Result<usize, GridError> {
        let id = as_index(id, line)?;
        id_to_index
            .get(&id)
            .copied()
            .ok_or_else(|| GridError::Parse { line, msg: format!("reference to unknown bus {id}") })
    };

    if cost_rows.len() < gen_rows.len() {
        return Err(GridError::MissingSection("gencost"));
    }
    let mut generators = Vec::new();
    for (row, crow) in gen_rows.iter().zip(&cost_rows) {
        need(row, 10, "gen")?;
        need(crow, 4, "gencost")?;
        let v = &row.vals;
        if v[7] <= 0.0 {
            continue;
        }
        let bus = lookup(v[0], row.line)?;
        let cost = parse_cost(crow, base_mva)?;
        generators.push(Generator {
            bus,
            pg_min: v[9] / base_mva,
            pg_max: v[8] / base_mva,
            qg_min: v[4] / base_mva,
            qg_max: v[3] / base_mva,
            cost,
        });
    }

    let (mut ignored_charging, mut ignored_taps) = (0, 0);
    let mut branches = Vec::new();
    for row in &branch_rows {
        need(row, 11, "branch")?;
        let v = &row.vals;
        if v[10] <= 0.0 {
            continue;
        }
        let from = lookup(v[0], row.line)?;
        let to = lookup(v[1], row.line)?;
        let (g, b) = series_admittance(v[2], v[3]).map_err(|_| GridError::ZeroImpedance {
            from: buses[from].id,
            to: buses[to].id,
        })?;
        if v[4] != 0.0 {
            ignored_charging += 1;
        }
        if (v[8] != 0.0 && v[8] != 1.0) || v[9] != 0.0 {
            ignored_taps += 1;
        }
        let s_max = (v[5] > 0.0).then(|| v[5] / base_mva);
        branches.push(Branch { from, to, g, b, s_max, status: BranchStatus::On });
    }

    if ignored_shunts > 0 {
        log::warn!("ignoring bus shunts on {ignored_shunts} buses");
    }
    if ignored_charging > 0 {
        log::warn!("ignoring line charging on {ignored_charging} branches");
    }
    if ignored_taps > 0 {
        log::warn!("ignoring tap ratio / phase shift on {ignored_taps} branches");
    }

    let mut gens_at_bus = vec![Vec::new(); buses.len()];
    for (k, g) in generators.iter().enumerate() {
        gens_at_bus[g.bus].push(k);
    }
    let net = Network { base_mva, buses, generators, loads, branches, gens_at_bus, slack_bus };
    net.validate()?;
    Ok(net)
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => tok.parse().ok(),
    }
}

fn as_index(v: f64, line: usize) -> Result<usize, GridError> {
    if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(GridError::Parse { line, msg: format!("expected a bus number, got {v}") })
    }
}

fn parse_cost(row: &Row, base: f64) -> Result<CostCurve, GridError> {
    let v = &row.vals;
    match v[0] as i64 {
        1 => Err(GridError::Unsupported("piecewise-linear generator cost (model 1)".into())),
        2 => {
            let n = v[3] as usize;
            if v.len() < 4 + n {
                return Err(GridError::Parse { line: row.line, msg: format!("gencost declares {n} coefficients") });
            }
            let c = &v[4..4 + n];
            // c holds c(n-1) .. c0 in $/MW^k
            let (c2, c1, c0) = match n {
                0 => (0.0, 0.0, 0.0),
                1 => (0.0, 0.0, c[0]),
                2 => (0.0, c[0], c[1]),
                3 => (c[0], c[1], c[2]),
                _ => return Err(GridError::Unsupported(format!("polynomial cost of degree {}", n - 1))),
            };
            Ok(CostCurve { c2: c2 * base * base, c1: c1 * base, c0 })
        }
        m => Err(GridError::Parse { line: row.line, msg: format!("unknown cost model {m}") }),
    }
}
