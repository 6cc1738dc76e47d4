//! File formats: tick panels, volatility matrix series, eigenvalue
//! series, fitted coefficients, forecasts and evaluation outputs.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a
//! file back reproduces the values bit for bit.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, FivarError, Result};
use crate::eval::{BacktestReport, StudyReport};
use crate::forecast::ForecastResult;
use crate::matutil::SymMatrix;
use crate::poet::EigenSeries;
use crate::robustvar::{Method, Standardization, TuningSummary, VarFit};
use crate::rv::VolMatrixSeries;
use crate::sim::TickPanel;

const FVMS_MAGIC: &[u8; 4] = b"FVMS";

fn csv_err(e: csv::Error) -> FivarError {
    FivarError::Parse(e.to_string())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| FivarError::Parse(format!("{what}: cannot parse {s:?} as a number")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| FivarError::Parse(format!("{what}: cannot parse {s:?} as an index")))
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?)))
}

fn write_rows<I, R>(path: &Path, header: Option<Vec<String>>, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    if let Some(h) = header {
        w.write_record(h).map_err(csv_err)?;
    }
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Header (if `has_header`) and records of a numeric CSV.
fn read_rows(path: &Path, has_header: bool) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| FivarError::Parse(format!("{}: {e}", path.display())))?;
    let header = if has_header {
        rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect()
    } else {
        Vec::new()
    };
    let rows = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(csv_err)?;
    Ok((header, rows))
}

fn num(v: f64) -> String {
    v.to_string()
}

// Tick panels

/// `day,k,asset_1..asset_p`, days 1-based, `k = 0..m` per day.
pub fn write_panel_csv(panel: &TickPanel, path: &Path) -> Result<()> {
    panel.validate()?;
    let mut header = vec!["day".to_string(), "k".to_string()];
    header.extend((1..=panel.p).map(|j| format!("asset_{j}")));
    let rows = panel.prices.iter().enumerate().flat_map(|(d, day)| {
        (0..day.nrows()).map(move |k| {
            let mut row = vec![(d + 1).to_string(), k.to_string()];
            row.extend(day.row(k).iter().map(|v| num(*v)));
            row
        })
    });
    write_rows(path, Some(header), rows)
}

/// Reads a panel written by [`write_panel_csv`] (or any file in that
/// layout). Days must be contiguous with `k` running `0..=m`.
pub fn read_panel_csv(path: &Path) -> Result<TickPanel> {
    let (header, rows) = read_rows(path, true)?;
    if header.len() < 3 || header[0] != "day" || header[1] != "k" {
        return Err(FivarError::Parse(format!(
            "{}: expected header day,k,asset_1..",
            path.display()
        )));
    }
    let p = header.len() - 2;
    let mut days: Vec<Vec<Vec<f64>>> = Vec::new();
    for (line, rec) in rows.iter().enumerate() {
        check_dim(p + 2, rec.len())?;
        let day = parse_usize(&rec[0], "day")?;
        let k = parse_usize(&rec[1], "k")?;
        if day == 0 || day > days.len() + 1 || day + 1 < days.len() + 1 {
            return Err(FivarError::Parse(format!("line {}: day {day} out of order", line + 2)));
        }
        if day == days.len() + 1 {
            days.push(Vec::new());
        }
        let cur = days.last_mut().expect("pushed");
        if k != cur.len() {
            return Err(FivarError::Parse(format!(
                "line {}: expected k={}, got {k}",
                line + 2,
                cur.len()
            )));
        }
        cur.push(
            rec.iter()
                .skip(2)
                .map(|s| parse_f64(s, "price"))
                .collect::<Result<_>>()?,
        );
    }
    if days.is_empty() {
        return Err(invalid("panel file has no rows"));
    }
    let m = days[0].len() - 1;
    let prices = days
        .iter()
        .map(|rows| {
            check_dim(m + 1, rows.len())?;
            Ok(DMatrix::from_fn(m + 1, p, |k, j| rows[k][j]))
        })
        .collect::<Result<Vec<_>>>()?;
    let panel = TickPanel {
        n: prices.len(),
        m,
        p,
        prices,
        truth: None,
    };
    panel.validate()?;
    Ok(panel)
}

/// `day,xi_1..xi_{p+r}` with the true daily integrated eigenvalues.
pub fn write_truth_csv(xi: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut header = vec!["day".to_string()];
    header.extend((1..=xi.ncols()).map(|i| format!("xi_{i}")));
    let rows = (0..xi.nrows()).map(|d| {
        let mut row = vec![(d + 1).to_string()];
        row.extend(xi.row(d).iter().map(|v| num(*v)));
        row
    });
    write_rows(path, Some(header), rows)
}

pub fn read_truth_csv(path: &Path) -> Result<DMatrix<f64>> {
    let (header, rows) = read_rows(path, true)?;
    let cols = header.len().saturating_sub(1);
    let mut out = DMatrix::zeros(rows.len(), cols);
    for (d, rec) in rows.iter().enumerate() {
        check_dim(cols + 1, rec.len())?;
        for j in 0..cols {
            out[(d, j)] = parse_f64(&rec[j + 1], "xi")?;
        }
    }
    Ok(out)
}

// Dense matrices

pub fn write_matrix_csv(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    write_rows(
        path,
        None,
        m.row_iter().map(|r| r.iter().map(|v| num(*v)).collect::<Vec<_>>()),
    )
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let (_, rows) = read_rows(path, false)?;
    let ncols = rows.first().map_or(0, |r| r.len());
    let mut out = DMatrix::zeros(rows.len(), ncols);
    for (i, rec) in rows.iter().enumerate() {
        check_dim(ncols, rec.len())?;
        for j in 0..ncols {
            out[(i, j)] = parse_f64(&rec[j], "matrix entry")?;
        }
    }
    Ok(out)
}

fn read_square(path: &Path) -> Result<SymMatrix> {
    let m = read_matrix_csv(path)?;
    check_dim(m.nrows(), m.ncols())?;
    SymMatrix::try_new(m)
}

// Volatility matrix series

fn day_file(d: usize) -> String {
    format!("day_{:05}.csv", d + 1)
}

/// One dense CSV per day: `day_00001.csv`, ...
pub fn write_series_csv(series: &VolMatrixSeries, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (d, m) in series.matrices.iter().enumerate() {
        write_matrix_csv(m.as_matrix(), &dir.join(day_file(d)))?;
    }
    Ok(())
}

pub fn read_series_csv(dir: &Path) -> Result<VolMatrixSeries> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("day_") && n.ends_with(".csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(invalid(format!("no day_*.csv files in {}", dir.display())));
    }
    let matrices = files
        .iter()
        .map(|f| read_square(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(VolMatrixSeries::new(matrices))
}

/// Binary container: magic `FVMS`, u32 n, u32 p, then n·p·p little-endian
/// f64 in row-major order.
pub fn write_series_bin(series: &VolMatrixSeries, path: &Path) -> Result<()> {
    let n = u32::try_from(series.len()).map_err(|_| invalid("too many days for the binary container"))?;
    let p = u32::try_from(series.dim()).map_err(|_| invalid("dimension too large for the binary container"))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FVMS_MAGIC)?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&p.to_le_bytes())?;
    for m in &series.matrices {
        for i in 0..m.dim() {
            for j in 0..m.dim() {
                w.write_all(&m[(i, j)].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_bin(path: &Path) -> Result<VolMatrixSeries> {
    let mut r = BufReader::new(File::open(path)?);
    read_fvms(&mut r).map_err(|e| match e {
        FivarError::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            FivarError::Parse(format!("{}: truncated FVMS file", path.display()))
        }
        FivarError::Parse(msg) => FivarError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn read_fvms(r: &mut impl Read) -> Result<VolMatrixSeries> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FVMS_MAGIC {
        return Err(FivarError::Parse("not an FVMS file".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let n = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let p = u32::from_le_bytes(word) as usize;
    let mut buf = [0u8; 8];
    let mut matrices = Vec::with_capacity(n);
    for _ in 0..n {
        let mut m = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                r.read_exact(&mut buf)?;
                m[(i, j)] = f64::from_le_bytes(buf);
            }
        }
        matrices.push(SymMatrix::try_new(m)?);
    }
    if r.read(&mut buf)? != 0 {
        return Err(FivarError::Parse(format!("trailing bytes after {n} matrices")));
    }
    Ok(VolMatrixSeries::new(matrices))
}

// Eigenvalue series

/// `values.csv` (`day,i,xi`, 1-based), `factor_vectors.csv`,
/// `idio_vectors.csv`.
pub fn write_eigen_series(series: &EigenSeries, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let values = &series.values;
    let rows = (0..values.nrows()).flat_map(|d| {
        (0..values.ncols()).map(move |i| vec![(d + 1).to_string(), (i + 1).to_string(), num(values[(d, i)])])
    });
    write_rows(
        &dir.join("values.csv"),
        Some(vec!["day".into(), "i".into(), "xi".into()]),
        rows,
    )?;
    write_matrix_csv(&series.factor_vectors, &dir.join("factor_vectors.csv"))?;
    write_matrix_csv(&series.idio_vectors, &dir.join("idio_vectors.csv"))
}

pub fn read_eigen_series(dir: &Path) -> Result<EigenSeries> {
    let factor_vectors = read_matrix_csv(&dir.join("factor_vectors.csv"))?;
    let idio_vectors = read_matrix_csv(&dir.join("idio_vectors.csv"))?;
    let (p, r) = (factor_vectors.nrows(), factor_vectors.ncols());
    let (_, rows) = read_rows(&dir.join("values.csv"), true)?;
    let dim = p + r;
    if rows.len() % dim.max(1) != 0 {
        return Err(FivarError::Parse(format!(
            "values.csv has {} rows, not a multiple of {dim}",
            rows.len()
        )));
    }
    let n = rows.len() / dim;
    let mut values = DMatrix::zeros(n, dim);
    let mut seen = vec![false; n * dim];
    for rec in &rows {
        check_dim(3, rec.len())?;
        let d = parse_usize(&rec[0], "day")?;
        let i = parse_usize(&rec[1], "i")?;
        if d == 0 || d > n || i == 0 || i > dim || seen[(d - 1) * dim + i - 1] {
            return Err(FivarError::Parse(format!(
                "values.csv: bad or repeated entry ({d},{i})"
            )));
        }
        seen[(d - 1) * dim + i - 1] = true;
        values[(d - 1, i - 1)] = parse_f64(&rec[2], "xi")?;
    }
    let out = EigenSeries {
        factor_vectors,
        idio_vectors,
        values,
        idio_matrices: None,
    };
    out.validate()?;
    Ok(out)
}

// Fitted coefficients

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitHeader {
    method: Method,
    h: usize,
    p: usize,
    r: usize,
    idio_fitted: bool,
    n_obs: usize,
    #[serde(with = "json_f64")]
    spectral_radius: f64,
    standardization: Standardization,
    tuning: Option<TuningRecord>,
}

/// [`TuningSummary`] with non-finite values kept readable (LASSO fits carry
/// infinite Huber levels).
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TuningRecord {
    #[serde(with = "json_f64")]
    tau_f: f64,
    #[serde(with = "json_f64")]
    varpi_f: f64,
    #[serde(with = "json_f64")]
    tau_i: f64,
    #[serde(with = "json_f64")]
    varpi_i: f64,
    #[serde(with = "json_f64")]
    c_eta: f64,
    #[serde(with = "json_f64")]
    eta_i: f64,
}

impl From<&TuningSummary> for TuningRecord {
    fn from(t: &TuningSummary) -> Self {
        TuningRecord {
            tau_f: t.tau_f,
            varpi_f: t.varpi_f,
            tau_i: t.tau_i,
            varpi_i: t.varpi_i,
            c_eta: t.c_eta,
            eta_i: t.eta_i,
        }
    }
}

impl From<TuningRecord> for TuningSummary {
    fn from(t: TuningRecord) -> Self {
        TuningSummary {
            tau_f: t.tau_f,
            varpi_f: t.varpi_f,
            tau_i: t.tau_i,
            varpi_i: t.varpi_i,
            c_eta: t.c_eta,
            eta_i: t.eta_i,
        }
    }
}

/// JSON numbers for finite values, `"inf"`, `"-inf"` or `"nan"` otherwise.
mod json_f64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string().to_lowercase())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t
                .parse::<f64>()
                .map_err(|_| D::Error::custom(format!("not a number: {t:?}"))),
        }
    }
}

/// `beta.csv` with nonzero `(row,col,value)` triplets (0-based; column 0 is
/// the intercept) and `fit.json` with the remaining fields.
pub fn write_fit(fit: &VarFit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let beta = &fit.beta;
    let rows = (0..beta.nrows()).flat_map(|i| {
        (0..beta.ncols())
            .filter(move |&j| beta[(i, j)] != 0.0)
            .map(move |j| vec![i.to_string(), j.to_string(), num(beta[(i, j)])])
    });
    write_rows(
        &dir.join("beta.csv"),
        Some(vec!["row".into(), "col".into(), "value".into()]),
        rows,
    )?;
    let header = FitHeader {
        method: fit.method,
        h: fit.h,
        p: fit.p,
        r: fit.r,
        idio_fitted: fit.idio_fitted,
        n_obs: fit.n_obs,
        spectral_radius: fit.spectral_radius,
        standardization: fit.standardization.clone(),
        tuning: fit.tuning.as_ref().map(TuningRecord::from),
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| FivarError::Parse(e.to_string()))?;
    fs::write(dir.join("fit.json"), json + "\n")?;
    Ok(())
}

/// Reads a fit written by [`write_fit`]. Row diagnostics are not stored.
pub fn read_fit(dir: &Path) -> Result<VarFit> {
    let text = fs::read_to_string(dir.join("fit.json"))?;
    let header: FitHeader = serde_json::from_str(&text).map_err(|e| FivarError::Parse(format!("fit.json: {e}")))?;
    let dim = header.p + header.r;
    let cols = header.h * dim + 1;
    let mut beta = DMatrix::zeros(dim, cols);
    let (_, rows) = read_rows(&dir.join("beta.csv"), true)?;
    for rec in &rows {
        check_dim(3, rec.len())?;
        let i = parse_usize(&rec[0], "row")?;
        let j = parse_usize(&rec[1], "col")?;
        if i >= dim || j >= cols {
            return Err(FivarError::Parse(format!(
                "beta.csv: entry ({i},{j}) outside {dim}x{cols}"
            )));
        }
        beta[(i, j)] = parse_f64(&rec[2], "value")?;
    }
    check_dim(dim, header.standardization.mean.len())?;
    Ok(VarFit {
        method: header.method,
        h: header.h,
        p: header.p,
        r: header.r,
        beta,
        idio_fitted: header.idio_fitted,
        standardization: header.standardization,
        tuning: header.tuning.map(TuningSummary::from),
        diagnostics: Vec::new(),
        n_obs: header.n_obs,
        spectral_radius: header.spectral_radius,
    })
}

// Forecasts

/// `gamma.csv`, `psi.csv`, `sigma.csv` (dense) and `xi.csv` (`i,xi`).
pub fn write_forecast(f: &ForecastResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix_csv(f.gamma_next.as_matrix(), &dir.join("gamma.csv"))?;
    write_matrix_csv(f.psi_next.as_matrix(), &dir.join("psi.csv"))?;
    write_matrix_csv(f.sigma_next.as_matrix(), &dir.join("sigma.csv"))?;
    write_vector(&f.xi_next, "xi", &dir.join("xi.csv"))
}

fn write_vector(v: &DVector<f64>, name: &str, path: &Path) -> Result<()> {
    let rows = v.iter().enumerate().map(|(i, x)| vec![(i + 1).to_string(), num(*x)]);
    write_rows(path, Some(vec!["i".into(), name.into()]), rows)
}

// Evaluation outputs

/// `mspe.csv`, `risk_curve.csv`, `risk_by_period.csv`, `active_set.csv`
/// and `weights/<day>.csv` (days 1-based).
pub fn write_backtest(report: &BacktestReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let grid = &report.exposure_grid;
    write_rows(
        &dir.join("mspe.csv"),
        Some(vec!["method".into(), "period".into(), "value".into()]),
        report.summaries.iter().flat_map(|s| {
            s.mspe_by_period
                .iter()
                .enumerate()
                .map(move |(q, v)| vec![s.estimator.name().to_string(), (q + 1).to_string(), num(*v)])
        }),
    )?;
    write_rows(
        &dir.join("risk_curve.csv"),
        Some(vec!["method".into(), "c0".into(), "risk".into()]),
        report.summaries.iter().flat_map(|s| {
            grid.iter()
                .zip(&s.risk)
                .map(move |(c, r)| vec![s.estimator.name().to_string(), num(*c), num(*r)])
        }),
    )?;
    write_rows(
        &dir.join("risk_by_period.csv"),
        Some(vec!["method".into(), "period".into(), "c0".into(), "risk".into()]),
        report.summaries.iter().flat_map(|s| {
            s.risk_by_period.iter().enumerate().flat_map(move |(q, risks)| {
                grid.iter()
                    .zip(risks)
                    .map(move |(c, r)| vec![s.estimator.name().to_string(), (q + 1).to_string(), num(*c), num(*r)])
            })
        }),
    )?;
    write_rows(
        &dir.join("active_set.csv"),
        Some(vec!["method".into(), "mean_active".into()]),
        report
            .summaries
            .iter()
            .filter_map(|s| s.mean_active.map(|a| vec![s.estimator.name().to_string(), num(a)])),
    )?;
    let wdir = dir.join("weights");
    fs::create_dir_all(&wdir)?;
    for rec in &report.days {
        let p = rec
            .methods
            .first()
            .and_then(|m| m.weights.first())
            .map_or(0, |w| w.len());
        let mut header = vec!["method".to_string(), "c0".to_string()];
        header.extend((1..=p).map(|j| format!("asset_{j}")));
        let rows = rec.methods.iter().flat_map(|md| {
            grid.iter().zip(&md.weights).map(move |(c, w)| {
                let mut row = vec![md.estimator.name().to_string(), num(*c)];
                row.extend(w.iter().map(|v| num(*v)));
                row
            })
        });
        write_rows(&wdir.join(format!("{}.csv", rec.day + 1)), Some(header), rows)?;
    }
    Ok(())
}

/// `study_cells.csv` with replication means and `study_records.csv` with
/// every replication.
pub fn write_study(report: &StudyReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    write_rows(
        &dir.join("study_cells.csv"),
        Some(
            [
                "n",
                "m",
                "method",
                "beta_frobenius",
                "beta_max",
                "beta_spectral",
                "frobenius",
                "max",
                "relative_frobenius",
                "spectral",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        ),
        report.cells.iter().map(|c| {
            vec![
                c.n.to_string(),
                c.m.to_string(),
                c.estimator.name().to_string(),
                opt(c.beta.map(|b| b.frobenius)),
                opt(c.beta.map(|b| b.max)),
                opt(c.beta.map(|b| b.spectral)),
                num(c.forecast.frobenius),
                num(c.forecast.max),
                opt(c.forecast.relative_frobenius),
                num(c.forecast.spectral),
            ]
        }),
    )?;
    write_rows(
        &dir.join("study_records.csv"),
        Some(
            [
                "replication",
                "n",
                "m",
                "method",
                "beta_frobenius",
                "beta_max",
                "beta_spectral",
                "frobenius",
                "max",
                "relative_frobenius",
                "spectral",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        ),
        report.records.iter().map(|r| {
            vec![
                (r.replication + 1).to_string(),
                r.n.to_string(),
                r.m.to_string(),
                r.estimator.name().to_string(),
                opt(r.beta.map(|b| b.frobenius)),
                opt(r.beta.map(|b| b.max)),
                opt(r.beta.map(|b| b.spectral)),
                num(r.forecast.frobenius),
                num(r.forecast.max),
                opt(r.forecast.relative_frobenius),
                num(r.forecast.spectral),
            ]
        }),
    )
}
