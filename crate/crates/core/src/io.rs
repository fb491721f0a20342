//! CSV and GeoJSON readers and writers for inputs, draws and reports.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::Value;

use crate::cluster::{Category, ClusterReport};
use crate::diagnostics::{QuantitySummary, QUANTILES};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::membership::MembershipMatrix;
use crate::model::{compute_offsets, Dataset};
use crate::sampler::PosteriorSamples;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn parse_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        row,
        message: message.into(),
    }
}

/// A CSV file with its header, iterated with 1-based line numbers.
struct Table<'a> {
    path: &'a Path,
    headers: Vec<String>,
    reader: csv::Reader<std::fs::File>,
}

impl<'a> Table<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| parse_err(path, 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        Ok(Self { path, headers, reader })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(self.path, 1, format!("missing column `{name}`")))
    }

    /// Calls `f(line, record)` for every data row.
    fn for_each(&mut self, mut f: impl FnMut(usize, &csv::StringRecord) -> Result<()>) -> Result<()> {
        let path = self.path;
        let mut record = csv::StringRecord::new();
        loop {
            let more = self.reader.read_record(&mut record).map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(path, line, e.to_string())
            })?;
            if !more {
                return Ok(());
            }
            let line = record.position().map_or(0, |p| p.line() as usize);
            f(line, &record)?;
        }
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
    let raw = rec.get(col).ok_or_else(|| parse_err(path, line, format!("missing `{name}`")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse `{name}` value {raw:?}")))
}

fn finite(path: &Path, line: usize, name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("`{name}` must be finite, got {v}")))
    }
}

pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut t = Table::open(path)?;
    let (a, b) = (t.column("area_a")?, t.column("area_b")?);
    let mut edges = Vec::new();
    t.for_each(|line, rec| {
        edges.push((field(path, line, rec, a, "area_a")?, field(path, line, rec, b, "area_b")?));
        Ok(())
    })?;
    Ok(edges)
}

pub fn read_graph(path: &Path, n: usize) -> Result<SpatialGraph> {
    SpatialGraph::from_edges(&read_edges(path)?, n)
}

pub fn read_weights(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    let mut t = Table::open(path)?;
    let (j, i, w) = (t.column("membership")?, t.column("area")?, t.column("weight")?);
    let mut out = Vec::new();
    t.for_each(|line, rec| {
        let weight = finite(path, line, "weight", field(path, line, rec, w, "weight")?)?;
        out.push((field(path, line, rec, j, "membership")?, field(path, line, rec, i, "area")?, weight));
        Ok(())
    })?;
    Ok(out)
}

pub fn read_membership(path: &Path, m: usize, n: usize) -> Result<MembershipMatrix> {
    MembershipMatrix::from_triplets(&read_weights(path)?, m, n, false)
}

/// Rows keyed by a 0-based id column that must cover `0..len` exactly once.
fn place<T: Clone>(path: &Path, rows: Vec<(usize, usize, T)>, what: &str) -> Result<Vec<T>> {
    let len = rows.len();
    let mut slots: Vec<Option<T>> = vec![None; len];
    for (line, id, value) in rows {
        if id >= len {
            return Err(parse_err(path, line, format!("{what} id {id} out of range for {len} rows")));
        }
        if slots[id].is_some() {
            return Err(parse_err(path, line, format!("duplicate {what} id {id}")));
        }
        slots[id] = Some(value);
    }
    Ok(slots.into_iter().map(|s| s.expect("every id placed")).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArealTable {
    pub y1: Vec<u64>,
    pub e1: Vec<f64>,
    pub x: Option<DMatrix<f64>>,
}

/// `area,y1,E1,x1..xp`.
pub fn read_areal_data(path: &Path) -> Result<ArealTable> {
    let mut t = Table::open(path)?;
    let (a, y, e) = (t.column("area")?, t.column("y1")?, t.column("E1")?);
    let mut xcols = Vec::new();
    for k in 1.. {
        match t.headers.iter().position(|h| *h == format!("x{k}")) {
            Some(c) => xcols.push(c),
            None => break,
        }
    }
    let mut rows = Vec::new();
    t.for_each(|line, rec| {
        let id: usize = field(path, line, rec, a, "area")?;
        let y1: u64 = field(path, line, rec, y, "y1")?;
        let e1 = finite(path, line, "E1", field(path, line, rec, e, "E1")?)?;
        if e1 <= 0.0 {
            return Err(parse_err(path, line, format!("offset must be positive, got {e1}")));
        }
        let mut x = Vec::with_capacity(xcols.len());
        for (k, &c) in xcols.iter().enumerate() {
            let name = format!("x{}", k + 1);
            x.push(finite(path, line, &name, field(path, line, rec, c, &name)?)?);
        }
        rows.push((line, id, (y1, e1, x)));
        Ok(())
    })?;
    let rows = place(path, rows, "area")?;
    let n = rows.len();
    let x = (!xcols.is_empty()).then(|| DMatrix::from_fn(n, xcols.len(), |i, k| rows[i].2[k]));
    Ok(ArealTable {
        y1: rows.iter().map(|r| r.0).collect(),
        e1: rows.iter().map(|r| r.1).collect(),
        x,
    })
}

/// `membership,y2,E2`.
pub fn read_mm_data(path: &Path) -> Result<(Vec<u64>, Vec<f64>)> {
    let mut t = Table::open(path)?;
    let (j, y, e) = (t.column("membership")?, t.column("y2")?, t.column("E2")?);
    let mut rows = Vec::new();
    t.for_each(|line, rec| {
        let id: usize = field(path, line, rec, j, "membership")?;
        let y2: u64 = field(path, line, rec, y, "y2")?;
        let e2 = finite(path, line, "E2", field(path, line, rec, e, "E2")?)?;
        if e2 <= 0.0 {
            return Err(parse_err(path, line, format!("offset must be positive, got {e2}")));
        }
        rows.push((line, id, (y2, e2)));
        Ok(())
    })?;
    let rows = place(path, rows, "membership")?;
    Ok(rows.into_iter().unzip())
}

/// Offsets per unit from `unit,age_group,rate,population`.
pub fn read_age_table(path: &Path) -> Result<Vec<f64>> {
    let mut t = Table::open(path)?;
    let (u, r, p) = (t.column("unit")?, t.column("rate")?, t.column("population")?);
    t.column("age_group")?;
    let mut units: Vec<(Vec<f64>, Vec<f64>, usize)> = Vec::new();
    t.for_each(|line, rec| {
        let unit: usize = field(path, line, rec, u, "unit")?;
        let rate = finite(path, line, "rate", field(path, line, rec, r, "rate")?)?;
        let pop = finite(path, line, "population", field(path, line, rec, p, "population")?)?;
        if unit >= units.len() {
            units.resize_with(unit + 1, || (Vec::new(), Vec::new(), 0));
        }
        units[unit].0.push(rate);
        units[unit].1.push(pop);
        units[unit].2 = line;
        Ok(())
    })?;
    units
        .iter()
        .enumerate()
        .map(|(i, (rates, pops, line))| {
            if rates.is_empty() {
                return Err(parse_err(path, 0, format!("unit {i} has no age groups")));
            }
            compute_offsets(rates, pops).map_err(|e| parse_err(path, *line, format!("unit {i}: {e}")))
        })
        .collect()
}

/// Reads graph, memberships and both data tables.
pub fn read_inputs(graph: &Path, membership: &Path, areal: &Path, mm: &Path) -> Result<(SpatialGraph, MembershipMatrix, Dataset)> {
    let areal_t = read_areal_data(areal)?;
    let (y2, e2) = read_mm_data(mm)?;
    let n = areal_t.y1.len();
    let g = read_graph(graph, n)?;
    let h = read_membership(membership, y2.len(), n)?;
    Ok((
        g,
        h,
        Dataset {
            y1: areal_t.y1,
            e1: areal_t.e1,
            y2,
            e2,
            x: areal_t.x,
        },
    ))
}

fn write_err(e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: "<output>".into(),
        message: e.to_string(),
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

macro_rules! row {
    ($wtr:expr, $($v:expr),+ $(,)?) => {
        $wtr.write_record(&[$($v.to_string()),+]).map_err(write_err)?
    };
}

pub fn write_edges<W: Write>(w: W, graph: &SpatialGraph) -> Result<()> {
    let mut wtr = csv_writer(w);
    row!(wtr, "area_a", "area_b");
    for &(a, b) in graph.edges() {
        row!(wtr, a, b);
    }
    wtr.flush().map_err(write_err)
}

pub fn write_weights<W: Write>(w: W, h: &MembershipMatrix) -> Result<()> {
    let mut wtr = csv_writer(w);
    row!(wtr, "membership", "area", "weight");
    for (j, i, v) in h.triplets() {
        row!(wtr, j, i, v);
    }
    wtr.flush().map_err(write_err)
}

pub fn write_areal_data<W: Write>(w: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv_writer(w);
    let p = data.p();
    let mut header = vec!["area".to_string(), "y1".into(), "E1".into()];
    header.extend((1..=p).map(|k| format!("x{k}")));
    wtr.write_record(&header).map_err(write_err)?;
    for i in 0..data.n() {
        let mut rec = vec![i.to_string(), data.y1[i].to_string(), data.e1[i].to_string()];
        if let Some(x) = &data.x {
            rec.extend((0..p).map(|k| x[(i, k)].to_string()));
        }
        wtr.write_record(&rec).map_err(write_err)?;
    }
    wtr.flush().map_err(write_err)
}

pub fn write_mm_data<W: Write>(w: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv_writer(w);
    row!(wtr, "membership", "y2", "E2");
    for j in 0..data.m() {
        row!(wtr, j, data.y2[j], data.e2[j]);
    }
    wtr.flush().map_err(write_err)
}

/// Long-format parameter draws `chain,iteration,name,value`.
pub fn write_posterior<W: Write>(w: W, samples: &PosteriorSamples) -> Result<()> {
    let mut wtr = csv_writer(w);
    row!(wtr, "chain", "iteration", "name", "value");
    let names = samples.parameter_names();
    let draws: Vec<Vec<Vec<f64>>> = names
        .iter()
        .map(|n| samples.scalar_draws(n).expect("listed names resolve"))
        .collect();
    for c in 0..samples.num_chains() {
        for t in 0..samples.chains[c].states.len() {
            for (name, d) in names.iter().zip(&draws) {
                row!(wtr, c, t, name, d[c][t]);
            }
        }
    }
    wtr.flush().map_err(write_err)
}

/// Named draws, each chains × iterations, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DrawTable {
    pub names: Vec<String>,
    pub draws: Vec<Vec<Vec<f64>>>,
}

impl DrawTable {
    pub fn get(&self, name: &str) -> Option<&Vec<Vec<f64>>> {
        self.names.iter().position(|n| n == name).map(|i| &self.draws[i])
    }
}

fn push_cell(table: &mut Vec<Vec<f64>>, chain: usize, iter: usize, value: f64) -> bool {
    if chain >= table.len() {
        table.resize_with(chain + 1, Vec::new);
    }
    let c = &mut table[chain];
    if iter != c.len() {
        return false;
    }
    c.push(value);
    true
}

pub fn read_posterior(path: &Path) -> Result<DrawTable> {
    let mut t = Table::open(path)?;
    let (c, i, n, v) = (t.column("chain")?, t.column("iteration")?, t.column("name")?, t.column("value")?);
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out = DrawTable::default();
    t.for_each(|line, rec| {
        let chain: usize = field(path, line, rec, c, "chain")?;
        let iter: usize = field(path, line, rec, i, "iteration")?;
        let name: String = field(path, line, rec, n, "name")?;
        let value: f64 = field(path, line, rec, v, "value")?;
        let k = *index.entry(name.clone()).or_insert_with(|| {
            out.names.push(name);
            out.draws.push(Vec::new());
            out.draws.len() - 1
        });
        if !push_cell(&mut out.draws[k], chain, iter, value) {
            return Err(parse_err(path, line, "draws must be listed in iteration order"));
        }
        Ok(())
    })?;
    Ok(out)
}

/// Per-draw derived vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derived {
    Rho1,
    Zeta2,
    Rho2,
    Yrep1,
    Yrep2,
    Loglik,
}

impl Derived {
    pub const ALL: [Derived; 6] = [
        Derived::Rho1,
        Derived::Zeta2,
        Derived::Rho2,
        Derived::Yrep1,
        Derived::Yrep2,
        Derived::Loglik,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Derived::Rho1 => "rho1.csv",
            Derived::Zeta2 => "zeta2.csv",
            Derived::Rho2 => "rho2.csv",
            Derived::Yrep1 => "yrep1.csv",
            Derived::Yrep2 => "yrep2.csv",
            Derived::Loglik => "loglik.csv",
        }
    }
}

/// `chain,iteration,index,value` rows for one derived quantity.
pub fn write_derived<W: Write>(w: W, samples: &PosteriorSamples, what: Derived) -> Result<()> {
    let mut wtr = csv_writer(w);
    row!(wtr, "chain", "iteration", "index", "value");
    for (c, chain) in samples.chains.iter().enumerate() {
        for t in 0..chain.states.len() {
            match what {
                Derived::Yrep1 | Derived::Yrep2 => {
                    let v = if what == Derived::Yrep1 { &chain.yrep1[t] } else { &chain.yrep2[t] };
                    for (i, y) in v.iter().enumerate() {
                        row!(wtr, c, t, i, y);
                    }
                }
                _ => {
                    let v = match what {
                        Derived::Rho1 => &chain.rho1[t],
                        Derived::Zeta2 => &chain.zeta2[t],
                        Derived::Rho2 => &chain.rho2[t],
                        _ => &chain.loglik[t],
                    };
                    for (i, x) in v.iter().enumerate() {
                        row!(wtr, c, t, i, x);
                    }
                }
            }
        }
    }
    wtr.flush().map_err(write_err)
}

/// Derived draws as chains × iterations × index.
pub fn read_derived(path: &Path) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut t = Table::open(path)?;
    let (c, i, k, v) = (t.column("chain")?, t.column("iteration")?, t.column("index")?, t.column("value")?);
    let mut out: Vec<Vec<Vec<f64>>> = Vec::new();
    t.for_each(|line, rec| {
        let chain: usize = field(path, line, rec, c, "chain")?;
        let iter: usize = field(path, line, rec, i, "iteration")?;
        let idx: usize = field(path, line, rec, k, "index")?;
        let value: f64 = field(path, line, rec, v, "value")?;
        if chain >= out.len() {
            out.resize_with(chain + 1, Vec::new);
        }
        let ch = &mut out[chain];
        if iter == ch.len() && idx == 0 {
            ch.push(Vec::new());
        }
        let last = iter + 1 == ch.len();
        match ch.get_mut(iter) {
            Some(row) if last && row.len() == idx => row.push(value),
            _ => return Err(parse_err(path, line, "rows must be ordered by chain, iteration and index")),
        }
        Ok(())
    })?;
    Ok(out)
}

const SUMMARY_HEADER: [&str; 10] = ["name", "mean", "se_mean", "sd", "q2.5", "q5", "q95", "q97.5", "rhat", "ess_bulk"];

pub fn write_summary<W: Write>(w: W, rows: &[QuantitySummary]) -> Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(SUMMARY_HEADER).map_err(write_err)?;
    for q in rows {
        row!(
            wtr, q.name, q.mean, q.se_mean, q.sd, q.quantiles[0], q.quantiles[1], q.quantiles[2], q.quantiles[3], q.rhat, q.ess_bulk
        );
    }
    wtr.flush().map_err(write_err)
}

pub fn read_summary(path: &Path) -> Result<Vec<QuantitySummary>> {
    let mut t = Table::open(path)?;
    let cols = SUMMARY_HEADER
        .iter()
        .map(|h| t.column(h))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    t.for_each(|line, rec| {
        let num = |k: usize| -> Result<f64> { field(path, line, rec, cols[k], SUMMARY_HEADER[k]) };
        let mut quantiles = [0.0; QUANTILES.len()];
        for (q, slot) in quantiles.iter_mut().enumerate() {
            *slot = num(4 + q)?;
        }
        out.push(QuantitySummary {
            name: field(path, line, rec, cols[0], "name")?,
            mean: num(1)?,
            se_mean: num(2)?,
            sd: num(3)?,
            quantiles,
            rhat: num(8)?,
            ess_bulk: num(9)?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_clusters<W: Write>(w: W, report: &ClusterReport) -> Result<()> {
    let mut wtr = csv_writer(w);
    row!(wtr, "area", "outcome", "p_area", "p_locality", "category");
    for oc in [&report.y1, &report.y2] {
        for i in 0..oc.p_area.len() {
            row!(wtr, i, oc.outcome.label(), oc.p_area[i], oc.p_locality[i], oc.categories[i]);
        }
    }
    wtr.flush().map_err(write_err)
}

pub fn write_bivariate<W: Write>(w: W, report: &ClusterReport) -> Result<()> {
    let mut wtr = csv_writer(w);
    row!(wtr, "area", "cell", "collapsed_label");
    for (i, b) in report.bivariate.iter().enumerate() {
        row!(wtr, i, b.cell(), b.collapsed());
    }
    wtr.flush().map_err(write_err)
}

/// Cluster rows `(area, outcome, p_area, p_locality, category)`.
pub fn read_clusters(path: &Path) -> Result<Vec<(usize, String, f64, f64, Category)>> {
    let mut t = Table::open(path)?;
    let cols = ["area", "outcome", "p_area", "p_locality", "category"]
        .iter()
        .map(|h| t.column(h))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    t.for_each(|line, rec| {
        out.push((
            field(path, line, rec, cols[0], "area")?,
            field(path, line, rec, cols[1], "outcome")?,
            field(path, line, rec, cols[2], "p_area")?,
            field(path, line, rec, cols[3], "p_locality")?,
            field(path, line, rec, cols[4], "category")?,
        ));
        Ok(())
    })?;
    Ok(out)
}

/// Adds cluster properties to every feature whose `area` property matches an
/// area id.
pub fn geojson_join(geojson: &str, report: &ClusterReport) -> Result<String> {
    let bad = |m: &str| Error::InvalidParameter(format!("boundary file: {m}"));
    let mut doc: Value = serde_json::from_str(geojson).map_err(|e| bad(&e.to_string()))?;
    let features = doc
        .get_mut("features")
        .and_then(Value::as_array_mut)
        .ok_or_else(|| bad("expected a FeatureCollection"))?;
    let n = report.bivariate.len();
    for feature in features {
        let Some(props) = feature.get_mut("properties").and_then(Value::as_object_mut) else {
            continue;
        };
        let area = match props.get("area") {
            Some(Value::Number(x)) => x.as_u64().map(|v| v as usize),
            Some(Value::String(s)) => s.parse().ok(),
            _ => None,
        };
        let Some(i) = area.filter(|&i| i < n) else {
            continue;
        };
        for oc in [&report.y1, &report.y2] {
            let label = oc.outcome.label();
            props.insert(format!("p_area_{label}"), oc.p_area[i].into());
            props.insert(format!("p_locality_{label}"), oc.p_locality[i].into());
            props.insert(format!("category_{label}"), oc.categories[i].to_string().into());
        }
        props.insert("cell".into(), report.bivariate[i].cell().into());
        props.insert("collapsed_label".into(), report.bivariate[i].collapsed().into());
    }
    serde_json::to_string_pretty(&doc).map_err(|e| bad(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::cluster_from_draws;
    use crate::simulate::{simulate_study, StudyDesign, TruthSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::fs;

    fn write_to(dir: &Path, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> std::path::PathBuf {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        let p = dir.join(name);
        fs::write(&p, buf).unwrap();
        p
    }

    #[test]
    fn inputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let design = StudyDesign {
            rows: 3,
            cols: 4,
            memberships: 9,
            sparsity: 3.0,
            ..StudyDesign::default()
        };
        let s = simulate_study(&TruthSpec::gmcar_covariates(), &design, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let d = &s.simulated.data;
        let g = write_to(dir.path(), "edges.csv", |b| write_edges(b, &s.graph));
        let h = write_to(dir.path(), "weights.csv", |b| write_weights(b, &s.membership));
        let a = write_to(dir.path(), "areal.csv", |b| write_areal_data(b, d));
        let m = write_to(dir.path(), "mm.csv", |b| write_mm_data(b, d));
        let (g2, h2, d2) = read_inputs(&g, &h, &a, &m).unwrap();
        assert_eq!(g2.edges(), s.graph.edges());
        assert_eq!(h2, s.membership);
        assert_eq!(&d2, d);
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("areal.csv");
        fs::write(&p, "area,y1,E1\n0,3,10.0\n1,abc,4.0\n").unwrap();
        match read_areal_data(&p) {
            Err(Error::Parse { row, message, .. }) => {
                assert_eq!(row, 3);
                assert!(message.contains("y1"));
            }
            other => panic!("{other:?}"),
        }
        fs::write(&p, "area,y1,E1\n0,3,10.0\n0,1,4.0\n").unwrap();
        assert!(matches!(read_areal_data(&p), Err(Error::Parse { row: 3, .. })));
        fs::write(&p, "area,y1\n0,3\n").unwrap();
        assert!(matches!(read_areal_data(&p), Err(Error::Parse { row: 1, .. })));
        assert!(matches!(read_areal_data(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn unordered_areal_rows_are_placed_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("areal.csv");
        fs::write(&p, "area,y1,E1,x1\n1,5,2.5,0.1\n0,3,10,0.7\n").unwrap();
        let t = read_areal_data(&p).unwrap();
        assert_eq!(t.y1, vec![3, 5]);
        assert_eq!(t.x.unwrap()[(1, 0)], 0.1);
    }

    #[test]
    fn age_table_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("age.csv");
        fs::write(&p, "unit,age_group,rate,population\n0,a,0.01,100\n0,b,0.02,50\n1,a,0.5,4\n").unwrap();
        let e = read_age_table(&p).unwrap();
        assert!((e[0] - 2.0).abs() < 1e-12);
        assert!((e[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn derived_and_summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "chain,iteration,index,value\n0,0,0,1.5\n0,0,1,2\n0,1,0,3\n0,1,1,4\n1,0,0,5\n1,0,1,6\n").unwrap();
        let d = read_derived(&p).unwrap();
        assert_eq!(d, vec![vec![vec![1.5, 2.0], vec![3.0, 4.0]], vec![vec![5.0, 6.0]]]);
        fs::write(&p, "chain,iteration,index,value\n0,0,1,1.5\n").unwrap();
        assert!(read_derived(&p).is_err());

        let q = QuantitySummary {
            name: "tau1".into(),
            mean: 0.1 + 0.2,
            se_mean: 1e-17,
            sd: 3.0,
            quantiles: [-1.0, 0.5, 2.0, 1.0 / 3.0],
            rhat: f64::NAN,
            ess_bulk: 1234.5,
        };
        let s = write_to(dir.path(), "s.csv", |b| write_summary(b, std::slice::from_ref(&q)));
        let back = read_summary(&s).unwrap();
        assert_eq!(back[0].mean, q.mean);
        assert_eq!(back[0].quantiles, q.quantiles);
        assert!(back[0].rhat.is_nan());
    }

    #[test]
    fn clusters_round_trip_and_geojson() {
        let g = crate::simulate::make_lattice(1, 3).unwrap();
        let r1 = vec![vec![2.0, 0.5, 2.0]; 4];
        let r2 = vec![vec![0.5, 2.0, 0.5]; 4];
        let rep = cluster_from_draws(&r1, &r2, &g, 1.0, 0.9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = write_to(dir.path(), "c.csv", |b| write_clusters(b, &rep));
        let rows = read_clusters(&p).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0], (0, "y1".into(), 1.0, 0.0, Category::HL));
        assert_eq!(rows[4].4, Category::HL);
        let geo = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"area":1},"geometry":null},{"type":"Feature","properties":{"area":"7"},"geometry":null}]}"#;
        let joined: Value = serde_json::from_str(&geojson_join(geo, &rep).unwrap()).unwrap();
        let props = &joined["features"][0]["properties"];
        assert_eq!(props["category_y1"], "LH");
        assert_eq!(props["collapsed_label"], "M:L-P:H");
        assert!(joined["features"][1]["properties"].get("cell").is_none());
    }
}
