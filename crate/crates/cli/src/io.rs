//! File formats.
//!
//! * data CSV: `region,y,x1..xp`, one row per region, any order.
//! * draws CSV: `sigma2,rho,beta1..betap,gamma_<label>..`, one row per draw.
//! * draws binary: 16-byte header (`b"BYMD"`, version u32, N u32, dim u32, all
//!   little-endian) then the same columns, column-major, as little-endian f64.
//! * truth CSV: `region_i,region_j,std_diff`.

use crate::error::{CliError, Result};
use disparity_core::exact::{DrawMeta, DrawMethod, PosteriorDraws};
use disparity_core::graph::AdjacencyGraph;
use nalgebra::{DMatrix, DVector};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DRAWS_MAGIC: [u8; 4] = *b"BYMD";
pub const DRAWS_VERSION: u32 = 1;

/// Formats with 6 significant digits, plain decimal notation where practical.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..=15).contains(&exp) {
        // Rounding may carry into the next decade (9.999995 -> 10.0000).
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        let reparsed: f64 = s.parse().unwrap_or(x);
        let exp2 = reparsed.abs().log10().floor() as i32;
        if exp2 != exp {
            let decimals = (5 - exp2).max(0) as usize;
            return trim_zeros(format!("{x:.decimals$}"));
        }
        trim_zeros(s)
    } else {
        format!("{x:.5e}")
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Rounds to the value [`fmt6`] would print.
pub fn quantize6(x: f64) -> f64 {
    fmt6(x).parse().expect("fmt6 output parses")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn parse_f64(path: &Path, row: usize, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Data(format!("{} row {row}: '{field}' is not a finite number", path.display())))
}

pub fn write_edges(path: &Path, g: &AdjacencyGraph) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    for &(i, j) in g.edges() {
        w.write_record([&g.labels()[i], &g.labels()[j]]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Response and design aligned to the graph's region order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionData {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
}

pub fn write_data(path: &Path, g: &AdjacencyGraph, y: &DVector<f64>, x: &DMatrix<f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["region".to_string(), "y".to_string()];
    header.extend((1..=x.ncols()).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, label) in g.labels().iter().enumerate() {
        let mut row = vec![label.clone(), y[i].to_string()];
        row.extend((0..x.ncols()).map(|k| x[(i, k)].to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_data(path: &Path, g: &AdjacencyGraph) -> Result<RegionData> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let p = header.len().saturating_sub(2);
    let expected: Vec<String> =
        ["region".to_string(), "y".to_string()].into_iter().chain((1..=p).map(|k| format!("x{k}"))).collect();
    if p == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(CliError::Data(format!(
            "{}: header must be region,y,x1..xp, got {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>()
        )));
    }
    let n = g.n();
    let mut y = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, p);
    let mut seen = vec![false; n];
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = row + 2;
        let i = g
            .index_of(&rec[0])
            .ok_or_else(|| CliError::Data(format!("{} row {line}: region '{}' is not in the graph", path.display(), &rec[0])))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(CliError::Data(format!("{} row {line}: duplicate region '{}'", path.display(), &rec[0])));
        }
        y[i] = parse_f64(path, line, &rec[1])?;
        for k in 0..p {
            x[(i, k)] = parse_f64(path, line, &rec[2 + k])?;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CliError::Data(format!("{}: no row for region '{}'", path.display(), g.labels()[i])));
    }
    Ok(RegionData { y, x })
}

/// Columns `σ², ρ, β, γ` per draw.
fn draw_columns(d: &PosteriorDraws) -> usize {
    2 + d.p() + d.n()
}

fn draw_value(d: &PosteriorDraws, t: usize, col: usize) -> f64 {
    let p = d.p();
    match col {
        0 => d.sigma2[t],
        1 => d.rho[t],
        c if c < 2 + p => d.beta[(t, c - 2)],
        c => d.gamma[(t, c - 2 - p)],
    }
}

/// Full-precision draws; `f64` display round-trips exactly.
pub fn write_draws_csv(path: &Path, d: &PosteriorDraws, g: &AdjacencyGraph) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["sigma2".to_string(), "rho".to_string()];
    header.extend((1..=d.p()).map(|k| format!("beta{k}")));
    header.extend(g.labels().iter().map(|l| format!("gamma_{l}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let cols = draw_columns(d);
    let mut row = Vec::with_capacity(cols);
    for t in 0..d.len() {
        row.clear();
        row.extend((0..cols).map(|c| draw_value(d, t, c).to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_draws_binary(path: &Path, d: &PosteriorDraws) -> Result<()> {
    let mut w = create(path)?;
    let (len, cols) = (d.len(), draw_columns(d));
    let too_big = |what| CliError::Data(format!("{what} does not fit the 32-bit draws header"));
    let len32 = u32::try_from(len).map_err(|_| too_big("draw count"))?;
    let cols32 = u32::try_from(cols).map_err(|_| too_big("dimension"))?;
    let mut buf = Vec::with_capacity(16 + 8 * len * cols);
    buf.extend_from_slice(&DRAWS_MAGIC);
    buf.extend_from_slice(&DRAWS_VERSION.to_le_bytes());
    buf.extend_from_slice(&len32.to_le_bytes());
    buf.extend_from_slice(&cols32.to_le_bytes());
    for c in 0..cols {
        for t in 0..len {
            buf.extend_from_slice(&draw_value(d, t, c).to_le_bytes());
        }
    }
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn assemble(cols: Vec<Vec<f64>>, n: usize, meta: DrawMeta) -> Result<PosteriorDraws> {
    let len = cols[0].len();
    let p = cols.len() - 2 - n;
    let beta = DMatrix::from_fn(len, p, |t, k| cols[2 + k][t]);
    let gamma = DMatrix::from_fn(len, n, |t, i| cols[2 + p + i][t]);
    if cols[0].iter().any(|&s| !(s > 0.0)) || cols[1].iter().any(|&r| !(r > 0.0 && r < 1.0)) {
        return Err(CliError::Data("draws contain sigma2 <= 0 or rho outside (0,1)".into()));
    }
    let mut it = cols.into_iter();
    let sigma2 = it.next().unwrap();
    let rho = it.next().unwrap();
    Ok(PosteriorDraws::from_parts(beta, gamma, sigma2, rho, meta)?)
}

fn default_meta(rho: &[f64]) -> DrawMeta {
    let fixed = rho.windows(2).all(|w| w[0] == w[1]);
    DrawMeta {
        seed: 0,
        method: if fixed { DrawMethod::Exact } else { DrawMethod::Mcmc },
        burn_in: 0,
        thin: 1,
        chains: 1,
        acceptance_rate: None,
    }
}

pub fn read_draws_csv(path: &Path, g: &AdjacencyGraph, meta: Option<DrawMeta>) -> Result<PosteriorDraws> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let n = g.n();
    let p = header.len().checked_sub(2 + n).filter(|&p| p > 0).ok_or_else(|| {
        CliError::Data(format!("{}: {} columns cannot hold sigma2, rho, beta and {n} gamma columns", path.display(), header.len()))
    })?;
    for (i, label) in g.labels().iter().enumerate() {
        if header[2 + p + i] != format!("gamma_{label}") {
            return Err(CliError::Data(format!(
                "{}: column {} is '{}', expected 'gamma_{label}' (draws/graph mismatch)",
                path.display(),
                3 + p + i,
                &header[2 + p + i]
            )));
        }
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for (c, field) in rec.iter().enumerate() {
            cols[c].push(parse_f64(path, row + 2, field)?);
        }
    }
    if cols[0].is_empty() {
        return Err(CliError::Data(format!("{}: no draws", path.display())));
    }
    let meta = meta.unwrap_or_else(|| default_meta(&cols[1]));
    assemble(cols, n, meta)
}

pub fn read_draws_binary(path: &Path, g: &AdjacencyGraph, meta: Option<DrawMeta>) -> Result<PosteriorDraws> {
    let mut bytes = Vec::new();
    File::open(path)
        .map(BufReader::new)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(path, e))?;
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || bytes[..4] != DRAWS_MAGIC {
        return Err(bad("not a draws file (bad magic)".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    let (version, len, cols) = (word(1), word(2) as usize, word(3) as usize);
    if version != DRAWS_VERSION {
        return Err(bad(format!("unsupported draws version {version}")));
    }
    if bytes.len() != 16 + 8 * len * cols {
        return Err(bad(format!("expected {} bytes for {len} x {cols} draws, found {}", 16 + 8 * len * cols, bytes.len())));
    }
    if len == 0 || cols <= 2 + g.n() {
        return Err(bad(format!("dimension {cols} does not match a graph of {} regions (draws/graph mismatch)", g.n())));
    }
    let values: Vec<f64> =
        bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let cols: Vec<Vec<f64>> = values.chunks_exact(len).map(|c| c.to_vec()).collect();
    if cols.iter().flatten().any(|v| !v.is_finite()) {
        return Err(bad("draws contain non-finite values".into()));
    }
    let meta = meta.unwrap_or_else(|| default_meta(&cols[1]));
    assemble(cols, g.n(), meta)
}

/// Picks the reader from the file's leading bytes.
pub fn read_draws(path: &Path, g: &AdjacencyGraph, meta: Option<DrawMeta>) -> Result<PosteriorDraws> {
    let mut head = [0u8; 4];
    let is_binary = File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| CliError::io(path, e))?
        == 4
        && head == DRAWS_MAGIC;
    if is_binary {
        read_draws_binary(path, g, meta)
    } else {
        read_draws_csv(path, g, meta)
    }
}

pub fn write_truth(path: &Path, g: &AdjacencyGraph, pairs: &[(usize, usize)], std_diff: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["region_i", "region_j", "std_diff"]).map_err(|e| csv_err(path, e))?;
    for (&(i, j), s) in pairs.iter().zip(std_diff) {
        w.write_record([&g.labels()[i], &g.labels()[j], &s.to_string()]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Standardized true differences aligned to `pairs`.
pub fn read_truth(path: &Path, g: &AdjacencyGraph, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let mut r = csv_reader(path)?;
    let index: std::collections::HashMap<(usize, usize), usize> =
        pairs.iter().enumerate().map(|(k, &ij)| (ij, k)).collect();
    let mut out = vec![f64::NAN; pairs.len()];
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = row + 2;
        let lookup = |s: &str| {
            g.index_of(s)
                .ok_or_else(|| CliError::Data(format!("{} row {line}: unknown region '{s}'", path.display())))
        };
        let (a, b) = (lookup(&rec[0])?, lookup(&rec[1])?);
        let k = index
            .get(&(a.min(b), a.max(b)))
            .ok_or_else(|| CliError::Data(format!("{} row {line}: {} and {} are not neighbors", path.display(), &rec[0], &rec[1])))?;
        out[*k] = parse_f64(path, line, &rec[2])?;
    }
    if let Some(k) = out.iter().position(|v| v.is_nan()) {
        let (i, j) = pairs[k];
        return Err(CliError::Data(format!(
            "{}: no row for pair {},{}",
            path.display(),
            g.labels()[i],
            g.labels()[j]
        )));
    }
    Ok(out)
}

/// One row of the ranked disparity table.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityRow {
    pub region_i: String,
    pub region_j: String,
    pub v: f64,
    pub decision: bool,
}

/// Sorts by `v` descending, then by `(region_i, region_j)`.
pub fn rank_rows(rows: &mut [DisparityRow]) {
    rows.sort_by(|a, b| {
        b.v.total_cmp(&a.v).then_with(|| (&a.region_i, &a.region_j).cmp(&(&b.region_i, &b.region_j)))
    });
}

pub fn write_disparities(path: &Path, rows: &[DisparityRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["region_i", "region_j", "v_ij", "decision"]).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([r.region_i.as_str(), r.region_j.as_str(), &fmt6(r.v), if r.decision { "1" } else { "0" }])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_disparities(path: &Path) -> Result<Vec<DisparityRow>> {
    let mut r = csv_reader(path)?;
    let mut rows = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let decision = match &rec[3] {
            "1" => true,
            "0" => false,
            other => return Err(CliError::Data(format!("{} row {}: decision '{other}'", path.display(), row + 2))),
        };
        rows.push(DisparityRow {
            region_i: rec[0].to_string(),
            region_j: rec[1].to_string(),
            v: parse_f64(path, row + 2, &rec[2])?,
            decision,
        });
    }
    Ok(rows)
}

/// Writes a headed table of numbers with 6 significant digits.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|&v| fmt6(v))).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
