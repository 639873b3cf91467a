//! Panel, repeated cross-section, and staggered-adoption datasets.
//!
//! All loaders map string unit identifiers to dense indices in first-seen
//! order and retain the mapping, so graph edge files written in terms of the
//! original identifiers can be resolved against any dataset and per-node
//! output can be written back under the original names.
//!
//! Expected CSV layouts (headers are mandatory and checked):
//!
//! ```text
//! panel:      id,d,y_pre,y_post,x1,...,xp
//! cross-sec:  id,d,t,y,x1,...,xp          (t in {0,1})
//! staggered:  id,adopt_time,y_1,...,y_T,x1,...,xp   (empty adopt_time = never)
//! edges:      src,dst
//! ```
//!
//! Numeric fields must be finite; treatment and wave indicators must be 0/1;
//! identifiers must be unique (per wave, for the cross-section layout).

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Mapping between original string identifiers and dense node indices.
#[derive(Debug, Clone, Default)]
pub struct IdMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    /// Number of distinct identifiers.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    /// True when no identifier has been interned.
    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Original identifier for dense index `i`.
    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    /// All identifiers in dense-index order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Dense index for an identifier, if present.
    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Interns `name`, assigning the next dense index on first sight.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }
}

/// Two-period panel: one row per unit with outcomes in both periods.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    /// Number of units.
    pub n: usize,
    /// Number of covariate columns.
    pub p: usize,
    /// Treatment indicator per unit, 0 or 1.
    pub d: Vec<u8>,
    /// Pre-period outcome per unit.
    pub y_pre: Vec<f64>,
    /// Post-period outcome per unit.
    pub y_post: Vec<f64>,
    /// Covariates, row-major `n x p`.
    pub x: Vec<f64>,
    /// Identifier mapping (dense index -> original id).
    pub ids: IdMap,
}

impl PanelDataset {
    /// Validates field lengths and values; returns the dataset on success.
    pub fn new(
        d: Vec<u8>,
        y_pre: Vec<f64>,
        y_post: Vec<f64>,
        x: Vec<f64>,
        p: usize,
        ids: IdMap,
    ) -> Result<Self> {
        let n = d.len();
        check_len("y_pre", y_pre.len(), n)?;
        check_len("y_post", y_post.len(), n)?;
        check_len("x", x.len(), n * p)?;
        if !ids.is_empty() {
            check_len("ids", ids.len(), n)?;
        }
        for (row, &v) in d.iter().enumerate() {
            if v > 1 {
                return Err(Error::InvalidData(format!(
                    "treatment indicator must be 0 or 1, got {v} at row {row}"
                )));
            }
        }
        check_finite("y_pre", &y_pre)?;
        check_finite("y_post", &y_post)?;
        check_finite("covariates", &x)?;
        let ids = if ids.is_empty() {
            default_ids(n)
        } else {
            ids
        };
        Ok(PanelDataset {
            n,
            p,
            d,
            y_pre,
            y_post,
            x,
            ids,
        })
    }

    /// Covariate `j` of unit `i`.
    pub fn x(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.p + j]
    }

    /// Covariate row of unit `i`.
    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

/// Outcome first difference `y_post - y_pre` per unit.
pub fn delta_y(panel: &PanelDataset) -> Vec<f64> {
    panel
        .y_post
        .iter()
        .zip(&panel.y_pre)
        .map(|(post, pre)| post - pre)
        .collect()
}

/// Repeated cross sections: one row per sampled unit, observed in exactly one
/// wave `t in {0, 1}`.
#[derive(Debug, Clone)]
pub struct RcsDataset {
    /// Number of rows (units across both waves).
    pub n: usize,
    /// Number of covariate columns.
    pub p: usize,
    /// Treatment indicator per row.
    pub d: Vec<u8>,
    /// Wave indicator per row, 0 (pre) or 1 (post).
    pub t: Vec<u8>,
    /// Observed outcome per row.
    pub y: Vec<f64>,
    /// Covariates, row-major `n x p`.
    pub x: Vec<f64>,
    /// Identifier mapping.
    pub ids: IdMap,
}

impl RcsDataset {
    /// Validates field lengths and values; both waves must be non-empty.
    pub fn new(
        d: Vec<u8>,
        t: Vec<u8>,
        y: Vec<f64>,
        x: Vec<f64>,
        p: usize,
        ids: IdMap,
    ) -> Result<Self> {
        let n = d.len();
        check_len("t", t.len(), n)?;
        check_len("y", y.len(), n)?;
        check_len("x", x.len(), n * p)?;
        if !ids.is_empty() {
            check_len("ids", ids.len(), n)?;
        }
        for (row, &v) in d.iter().enumerate() {
            if v > 1 {
                return Err(Error::InvalidData(format!(
                    "treatment indicator must be 0 or 1, got {v} at row {row}"
                )));
            }
        }
        for (row, &v) in t.iter().enumerate() {
            if v > 1 {
                return Err(Error::InvalidData(format!(
                    "wave indicator must be 0 or 1, got {v} at row {row}"
                )));
            }
        }
        check_finite("y", &y)?;
        check_finite("covariates", &x)?;
        let pre = t.iter().filter(|&&w| w == 0).count();
        if pre == 0 || pre == n {
            return Err(Error::InvalidData(
                "repeated cross sections need at least one row in each wave".into(),
            ));
        }
        let ids = if ids.is_empty() {
            default_ids(n)
        } else {
            ids
        };
        Ok(RcsDataset {
            n,
            p,
            d,
            t,
            y,
            x,
            ids,
        })
    }

    /// Covariate row of unit `i`.
    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

/// Staggered adoption panel: `T` outcome waves per unit and an absorbing
/// adoption period.
#[derive(Debug, Clone)]
pub struct StaggeredPanel {
    /// Number of units.
    pub n: usize,
    /// Number of outcome waves.
    pub t_max: usize,
    /// Number of covariate columns.
    pub p: usize,
    /// First treated period per unit (1-based), `None` for never-adopters.
    /// Treatment is absorbing: a unit with `adopt_time = a` is treated in
    /// every period `t >= a`.
    pub adopt_time: Vec<Option<usize>>,
    /// Outcomes, row-major `n x t_max`; column `t-1` holds period `t`.
    pub y: Vec<f64>,
    /// Covariates, row-major `n x p`.
    pub x: Vec<f64>,
    /// Identifier mapping.
    pub ids: IdMap,
}

impl StaggeredPanel {
    /// Validates shapes, adoption periods (must lie in `1..=t_max`), and
    /// requires at least one never-adopter to anchor comparisons.
    pub fn new(
        adopt_time: Vec<Option<usize>>,
        y: Vec<f64>,
        t_max: usize,
        x: Vec<f64>,
        p: usize,
        ids: IdMap,
    ) -> Result<Self> {
        let n = adopt_time.len();
        if t_max < 2 {
            return Err(Error::InvalidData(
                "staggered panel needs at least two outcome waves".into(),
            ));
        }
        check_len("y", y.len(), n * t_max)?;
        check_len("x", x.len(), n * p)?;
        if !ids.is_empty() {
            check_len("ids", ids.len(), n)?;
        }
        for (row, a) in adopt_time.iter().enumerate() {
            if let Some(a) = a {
                if *a < 1 || *a > t_max {
                    return Err(Error::InvalidData(format!(
                        "adoption period {a} at row {row} outside 1..={t_max}"
                    )));
                }
            }
        }
        if !adopt_time.iter().any(|a| a.is_none()) {
            return Err(Error::InvalidData(
                "staggered panel needs at least one never-adopter".into(),
            ));
        }
        check_finite("y", &y)?;
        check_finite("covariates", &x)?;
        let ids = if ids.is_empty() {
            default_ids(n)
        } else {
            ids
        };
        Ok(StaggeredPanel {
            n,
            t_max,
            p,
            adopt_time,
            y,
            x,
            ids,
        })
    }

    /// Outcome of unit `i` in period `t` (1-based).
    pub fn y_at(&self, i: usize, t: usize) -> f64 {
        self.y[i * self.t_max + (t - 1)]
    }

    /// Treatment status of unit `i` in period `t`: adopted at or before `t`.
    pub fn treated_at(&self, i: usize, t: usize) -> bool {
        matches!(self.adopt_time[i], Some(a) if a <= t)
    }
}

/// Loads a two-period panel from `path`.
pub fn load_panel(path: &Path) -> Result<PanelDataset> {
    let file = std::fs::File::open(path)?;
    read_panel(file)
}

/// Reads a two-period panel from any CSV source; see the module docs for the
/// layout.
pub fn read_panel<R: Read>(reader: R) -> Result<PanelDataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let p = check_header(&headers, &["id", "d", "y_pre", "y_post"])?;
    let mut ids = IdMap::default();
    let (mut d, mut y_pre, mut y_post, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 4 + p {
            return Err(ragged(row, record.len(), 4 + p));
        }
        intern_unique(&mut ids, &record[0], row)?;
        d.push(parse_binary(&record[1], "d", row)?);
        y_pre.push(parse_finite(&record[2], "y_pre", row)?);
        y_post.push(parse_finite(&record[3], "y_post", row)?);
        for j in 0..p {
            x.push(parse_finite(&record[4 + j], "covariate", row)?);
        }
    }
    PanelDataset::new(d, y_pre, y_post, x, p, ids)
}

/// Loads repeated cross sections from `path`.
pub fn load_rcs(path: &Path) -> Result<RcsDataset> {
    let file = std::fs::File::open(path)?;
    read_rcs(file)
}

/// Reads repeated cross sections from any CSV source.
pub fn read_rcs<R: Read>(reader: R) -> Result<RcsDataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let p = check_header(&headers, &["id", "d", "t", "y"])?;
    let mut ids = IdMap::default();
    let (mut d, mut t, mut y, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 4 + p {
            return Err(ragged(row, record.len(), 4 + p));
        }
        intern_unique(&mut ids, &record[0], row)?;
        d.push(parse_binary(&record[1], "d", row)?);
        t.push(parse_binary(&record[2], "t", row)?);
        y.push(parse_finite(&record[3], "y", row)?);
        for j in 0..p {
            x.push(parse_finite(&record[4 + j], "covariate", row)?);
        }
    }
    RcsDataset::new(d, t, y, x, p, ids)
}

/// Loads a staggered adoption panel from `path`.
pub fn load_staggered(path: &Path) -> Result<StaggeredPanel> {
    let file = std::fs::File::open(path)?;
    read_staggered(file)
}

/// Reads a staggered adoption panel from any CSV source. Wave columns are
/// `y_1..y_T` in order, followed by covariates `x1..xp`; an empty
/// `adopt_time` field marks a never-adopter.
pub fn read_staggered<R: Read>(reader: R) -> Result<StaggeredPanel> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 2 || cols[0] != "id" || cols[1] != "adopt_time" {
        return Err(Error::InvalidData(
            "staggered header must start with id,adopt_time".into(),
        ));
    }
    let mut t_max = 0;
    for (k, col) in cols[2..].iter().enumerate() {
        if *col == format!("y_{}", k + 1) {
            t_max = k + 1;
        } else {
            break;
        }
    }
    if t_max == 0 {
        return Err(Error::InvalidData(
            "staggered header needs wave columns y_1,y_2,...".into(),
        ));
    }
    let p = cols.len() - 2 - t_max;
    for (j, col) in cols[2 + t_max..].iter().enumerate() {
        if *col != format!("x{}", j + 1) {
            return Err(Error::InvalidData(format!(
                "unexpected staggered column '{col}', expected x{}",
                j + 1
            )));
        }
    }
    let mut ids = IdMap::default();
    let (mut adopt, mut y, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 2 + t_max + p {
            return Err(ragged(row, record.len(), 2 + t_max + p));
        }
        intern_unique(&mut ids, &record[0], row)?;
        let a = record[1].trim();
        if a.is_empty() {
            adopt.push(None);
        } else {
            let v: usize = a.parse().map_err(|_| {
                Error::InvalidData(format!("bad adopt_time '{a}' at row {row}"))
            })?;
            adopt.push(Some(v));
        }
        for k in 0..t_max {
            y.push(parse_finite(&record[2 + k], "y", row)?);
        }
        for j in 0..p {
            x.push(parse_finite(&record[2 + t_max + j], "covariate", row)?);
        }
    }
    StaggeredPanel::new(adopt, y, t_max, x, p, ids)
}

/// Loads an edge list whose endpoints are identifiers already interned in
/// `ids` (from the accompanying dataset), and builds the graph on those
/// units. Unknown identifiers are an error.
pub fn load_edges(path: &Path, ids: &IdMap) -> Result<Graph> {
    let file = std::fs::File::open(path)?;
    read_edges(file, ids)
}

/// Reads an edge list against an existing identifier mapping.
pub fn read_edges<R: Read>(reader: R, ids: &IdMap) -> Result<Graph> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?;
    if headers.len() != 2 || &headers[0] != "src" || &headers[1] != "dst" {
        return Err(Error::InvalidData("edge header must be src,dst".into()));
    }
    let mut edges = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(ragged(row, record.len(), 2));
        }
        let a = ids.get(record[0].trim()).ok_or_else(|| {
            Error::InvalidData(format!("unknown node id '{}' at edge row {row}", &record[0]))
        })?;
        let b = ids.get(record[1].trim()).ok_or_else(|| {
            Error::InvalidData(format!("unknown node id '{}' at edge row {row}", &record[1]))
        })?;
        edges.push((a, b));
    }
    Graph::from_edges(ids.len(), &edges)
}

/// Reads a standalone edge list, interning identifiers in first-seen order.
/// Used by graph-only commands that have no accompanying dataset.
pub fn read_edges_standalone<R: Read>(reader: R) -> Result<(Graph, IdMap)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?;
    if headers.len() != 2 || &headers[0] != "src" || &headers[1] != "dst" {
        return Err(Error::InvalidData("edge header must be src,dst".into()));
    }
    let mut ids = IdMap::default();
    let mut raw = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(ragged(row, record.len(), 2));
        }
        let a = ids.intern(record[0].trim());
        let b = ids.intern(record[1].trim());
        raw.push((a, b));
    }
    let graph = Graph::from_edges(ids.len(), &raw)?;
    Ok((graph, ids))
}

/// Loads a standalone edge list from `path`.
pub fn load_edges_standalone(path: &Path) -> Result<(Graph, IdMap)> {
    let file = std::fs::File::open(path)?;
    read_edges_standalone(file)
}

fn default_ids(n: usize) -> IdMap {
    let mut ids = IdMap::default();
    for i in 0..n {
        ids.intern(&i.to_string());
    }
    ids
}

fn ragged(row: usize, got: usize, expected: usize) -> Error {
    Error::InvalidData(format!(
        "row {row} has {got} fields, expected {expected}"
    ))
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::LengthMismatch {
            what,
            got,
            expected,
        });
    }
    Ok(())
}

fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    for (row, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { what, row });
        }
    }
    Ok(())
}

fn check_header(headers: &csv::StringRecord, fixed: &[&str]) -> Result<usize> {
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < fixed.len() {
        return Err(Error::InvalidData(format!(
            "header has {} columns, expected at least {}",
            cols.len(),
            fixed.len()
        )));
    }
    for (got, want) in cols.iter().zip(fixed) {
        if got != want {
            return Err(Error::InvalidData(format!(
                "unexpected header column '{got}', expected '{want}'"
            )));
        }
    }
    let p = cols.len() - fixed.len();
    for (j, col) in cols[fixed.len()..].iter().enumerate() {
        if *col != format!("x{}", j + 1) {
            return Err(Error::InvalidData(format!(
                "unexpected covariate column '{col}', expected x{}",
                j + 1
            )));
        }
    }
    Ok(p)
}

fn intern_unique(ids: &mut IdMap, name: &str, row: usize) -> Result<usize> {
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::InvalidData(format!("empty id at row {row}")));
    }
    if ids.get(name).is_some() {
        return Err(Error::InvalidData(format!(
            "duplicate id '{name}' at row {row}"
        )));
    }
    Ok(ids.intern(name))
}

fn parse_binary(field: &str, what: &str, row: usize) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::InvalidData(format!(
            "field {what} must be 0 or 1, got '{other}' at row {row}"
        ))),
    }
}

fn parse_finite(field: &str, what: &'static str, row: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| {
        Error::InvalidData(format!("bad numeric field '{}' for {what} at row {row}", field))
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite { what, row });
    }
    Ok(v)
}
