//! File formats: numeric matrix CSV with missing cells, parameter files,
//! scenario definitions, and the CSV tables written by the command-line
//! front end. Lines starting with `#` are comments everywhere; floating
//! point values are written in Rust's shortest round-trip form, so reading
//! back a written file reproduces the numbers exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::data::TwoWayArray;
use crate::error::{Error, Result};
use crate::fit::{FitResult, Method};
use crate::model::{ModelDims, ModelParams};
use crate::predict::Prediction;
use crate::select::SelectionTable;
use crate::sim::{AccuracyReport, Scenario};

/// Flags controlling matrix ingestion.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReadOptions {
    /// First non-comment line holds column names.
    pub header: bool,
    /// First field of every data line is a row name.
    pub rownames: bool,
}

/// A parsed matrix with any names found alongside it.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub data: TwoWayArray,
    pub row_names: Option<Vec<String>>,
    pub col_names: Option<Vec<String>>,
}

/// Parse a numeric CSV. Empty fields and the token `NA` denote missing
/// cells; `#` lines are skipped.
pub fn read_array_str(text: &str, options: &ReadOptions) -> Result<Dataset> {
    let mut col_names: Option<Vec<String>> = None;
    let mut row_names: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut expected_fields: Option<usize> = None;
    let mut saw_header = false;

    for (line_idx, raw) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if options.header && !saw_header {
            saw_header = true;
            let skip = usize::from(options.rownames);
            col_names = Some(fields.iter().skip(skip).map(|f| f.trim().to_string()).collect());
            continue;
        }
        match expected_fields {
            None => expected_fields = Some(fields.len()),
            Some(n) if n != fields.len() => {
                return Err(Error::RaggedRows {
                    line: line_no,
                    got: fields.len(),
                    expected: n,
                })
            }
            _ => {}
        }
        let mut iter = fields.iter();
        if options.rownames {
            row_names.push(iter.next().unwrap_or(&"").trim().to_string());
        }
        let mut row = Vec::new();
        for (f_idx, field) in iter.enumerate() {
            let trimmed = field.trim();
            if trimmed.is_empty() || trimmed == "NA" {
                row.push(None);
            } else {
                let value: f64 = trimmed.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    column: f_idx + 1 + usize::from(options.rownames),
                    message: format!("expected a number, found {trimmed:?}"),
                })?;
                row.push(Some(value));
            }
        }
        rows.push(row);
    }

    let r = rows.len();
    let s = rows.first().map_or(0, Vec::len);
    if r == 0 || s == 0 {
        return Err(Error::EmptyMatrix);
    }
    if let Some(names) = &col_names {
        if names.len() != s {
            return Err(Error::RaggedRows {
                line: 1,
                got: names.len(),
                expected: s,
            });
        }
    }
    let mut values = Array2::zeros((r, s));
    let mut mask = Array2::from_elem((r, s), false);
    for (i, row) in rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                values[(i, j)] = *v;
                mask[(i, j)] = true;
            }
        }
    }
    Ok(Dataset {
        data: TwoWayArray::with_mask(values, mask)?,
        row_names: if options.rownames { Some(row_names) } else { None },
        col_names,
    })
}

pub fn read_array(path: &Path, options: &ReadOptions) -> Result<Dataset> {
    read_array_str(&fs::read_to_string(path)?, options)
}

/// Render a matrix as CSV; missing cells become `NA`.
pub fn write_array_string(
    data: &TwoWayArray,
    col_names: Option<&[String]>,
    row_names: Option<&[String]>,
    comment: Option<&str>,
) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    if let Some(names) = col_names {
        if row_names.is_some() {
            out.push_str("row,");
        }
        let _ = writeln!(out, "{}", names.join(","));
    }
    for i in 0..data.nrows() {
        let mut fields: Vec<String> = Vec::with_capacity(data.ncols() + 1);
        if let Some(names) = row_names {
            fields.push(names[i].clone());
        }
        for j in 0..data.ncols() {
            if data.observed(i, j) {
                fields.push(format!("{}", data.value(i, j)));
            } else {
                fields.push("NA".to_string());
            }
        }
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn write_array(
    path: &Path,
    data: &TwoWayArray,
    col_names: Option<&[String]>,
    row_names: Option<&[String]>,
    comment: Option<&str>,
) -> Result<()> {
    fs::write(path, write_array_string(data, col_names, row_names, comment))?;
    Ok(())
}

fn join_floats(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Parameter file: one tagged line per block plus the derived stationary
/// vector for reference.
pub fn write_params_string(params: &ModelParams, comment: Option<&str>) -> Result<String> {
    let mut out = String::new();
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "lambda,{}", join_floats(params.lambda.iter().cloned()));
    for row in params.pi.rows() {
        let _ = writeln!(out, "pi,{}", join_floats(row.iter().cloned()));
    }
    for row in params.psi.rows() {
        let _ = writeln!(out, "psi,{}", join_floats(row.iter().cloned()));
    }
    let _ = writeln!(out, "sigma2,{}", params.sigma2);
    let rho = params.stationary()?;
    let _ = writeln!(out, "rho,{}", join_floats(rho.iter().cloned()));
    Ok(out)
}

pub fn write_params(path: &Path, params: &ModelParams, comment: Option<&str>) -> Result<()> {
    fs::write(path, write_params_string(params, comment)?)?;
    Ok(())
}

/// Read a parameter file produced by [`write_params`]. The `rho` line is
/// ignored: the stationary vector is always derived from the transitions.
pub fn read_params_str(text: &str) -> Result<ModelParams> {
    let mut lambda: Option<Vec<f64>> = None;
    let mut pi_rows: Vec<Vec<f64>> = Vec::new();
    let mut psi_rows: Vec<Vec<f64>> = Vec::new();
    let mut sigma2: Option<f64> = None;

    for (line_idx, raw) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let tag = fields.next().unwrap_or("").trim();
        let values: Vec<f64> = fields
            .enumerate()
            .map(|(k, f)| {
                f.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    column: k + 2,
                    message: format!("expected a number, found {:?}", f.trim()),
                })
            })
            .collect::<Result<_>>()?;
        match tag {
            "lambda" => lambda = Some(values),
            "pi" => pi_rows.push(values),
            "psi" => psi_rows.push(values),
            "sigma2" => sigma2 = values.first().copied(),
            "rho" => {}
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    column: 1,
                    message: format!("unknown parameter block {other:?}"),
                })
            }
        }
    }

    let lambda = lambda.ok_or_else(|| missing_block("lambda"))?;
    let sigma2 = sigma2.ok_or_else(|| missing_block("sigma2"))?;
    if pi_rows.is_empty() || psi_rows.is_empty() {
        return Err(missing_block("pi/psi"));
    }
    let k2 = pi_rows[0].len();
    let k1 = psi_rows.len();
    if pi_rows.len() != k2 || pi_rows.iter().any(|r| r.len() != k2) {
        return Err(Error::DimensionMismatch(
            "transition block is not square".into(),
        ));
    }
    if psi_rows.iter().any(|r| r.len() != k2) || lambda.len() != k1 {
        return Err(Error::DimensionMismatch(
            "mean block does not match lambda/pi".into(),
        ));
    }
    let params = ModelParams::new(
        Array1::from(lambda),
        Array2::from_shape_fn((k2, k2), |(i, j)| pi_rows[i][j]),
        Array2::from_shape_fn((k1, k2), |(i, j)| psi_rows[i][j]),
        sigma2,
    );
    params.validate(&ModelDims::new(1, 1, k1, k2)?)?;
    Ok(params)
}

fn missing_block(name: &str) -> Error {
    Error::Parse {
        line: 0,
        column: 0,
        message: format!("missing parameter block {name:?}"),
    }
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    read_params_str(&fs::read_to_string(path)?)
}

/// Objective trace as `iteration,objective`.
pub fn write_trace(path: &Path, fit: &FitResult, comment: Option<&str>) -> Result<()> {
    let mut out = String::new();
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "iteration,objective");
    for (t, obj) in fit.trace.iter().enumerate() {
        let _ = writeln!(out, "{t},{obj}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Selection table as `k1,k2,n_params,cl_cv,n_cv,q`; flagged candidates
/// render their undefined summaries as `NA`.
pub fn write_selection_string(table: &SelectionTable, comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "k1,k2,n_params,cl_cv,n_cv,q");
    for (g, &(k1, k2)) in table.grid.iter().enumerate() {
        let fmt = |x: f64| {
            if x.is_finite() {
                format!("{x}")
            } else {
                "NA".to_string()
            }
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            k1,
            k2,
            table.n_params[g],
            fmt(table.cl_cv[g]),
            table.n_cv[g],
            fmt(table.q[g])
        );
    }
    out
}

pub fn write_selection(path: &Path, table: &SelectionTable, comment: Option<&str>) -> Result<()> {
    fs::write(path, write_selection_string(table, comment))?;
    Ok(())
}

/// Accuracy report as `method,parameter,bias,rmse` with 1-based indices in
/// the parameter names.
pub fn write_report_string(report: &AccuracyReport, comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "method,parameter,bias,rmse");
    for m in &report.methods {
        let mut push = |name: String, st: &crate::sim::ParamAccuracy| {
            let _ = writeln!(out, "{},{},{},{}", m.method, name, st.bias, st.rmse);
        };
        for (u, st) in m.lambda.iter().enumerate() {
            push(format!("lambda[{}]", u + 1), st);
        }
        for (vb, row) in m.pi.iter().enumerate() {
            for (v, st) in row.iter().enumerate() {
                push(format!("pi[{},{}]", vb + 1, v + 1), st);
            }
        }
        for (u, row) in m.psi.iter().enumerate() {
            for (v, st) in row.iter().enumerate() {
                push(format!("psi[{},{}]", u + 1, v + 1), st);
            }
        }
        push("sigma2".to_string(), &m.sigma2);
    }
    out
}

/// Timing summary as `method,median_seconds,mad_seconds,n_excluded,n_used`.
pub fn write_timing_string(report: &AccuracyReport, comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "method,median_seconds,mad_seconds,n_excluded,n_used");
    for m in &report.methods {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{}",
            m.method, m.median_seconds, m.mad_seconds, m.n_excluded, m.n_used
        );
    }
    out
}

/// Prediction outputs: labels, posteriors (one block per axis), and the
/// fitted cell means.
pub fn write_prediction(
    dir: &Path,
    pred: &Prediction,
    row_names: Option<&[String]>,
    col_names: Option<&[String]>,
    comment: Option<&str>,
) -> Result<()> {
    let name_of = |names: Option<&[String]>, idx: usize, prefix: &str| -> String {
        names
            .and_then(|n| n.get(idx).cloned())
            .unwrap_or_else(|| format!("{prefix}{}", idx + 1))
    };

    let mut labels = String::new();
    if let Some(c) = comment {
        let _ = writeln!(labels, "# {c}");
    }
    let _ = writeln!(labels, "axis,index,name,label");
    for (i, &l) in pred.row_labels.iter().enumerate() {
        let _ = writeln!(labels, "row,{},{},{}", i + 1, name_of(row_names, i, "r"), l);
    }
    for (j, &l) in pred.col_labels.iter().enumerate() {
        let _ = writeln!(labels, "col,{},{},{}", j + 1, name_of(col_names, j, "c"), l);
    }
    fs::write(dir.join("labels.csv"), labels)?;

    let mut post = String::new();
    if let Some(c) = comment {
        let _ = writeln!(post, "# {c}");
    }
    let _ = writeln!(post, "axis,index,name,posteriors...");
    for i in 0..pred.row_posteriors.nrows() {
        let _ = writeln!(
            post,
            "row,{},{},{}",
            i + 1,
            name_of(row_names, i, "r"),
            join_floats(pred.row_posteriors.row(i).iter().cloned())
        );
    }
    for j in 0..pred.col_posteriors.nrows() {
        let _ = writeln!(
            post,
            "col,{},{},{}",
            j + 1,
            name_of(col_names, j, "c"),
            join_floats(pred.col_posteriors.row(j).iter().cloned())
        );
    }
    fs::write(dir.join("posteriors.csv"), post)?;

    let means = TwoWayArray::complete(pred.cell_means.clone())?;
    write_array(
        &dir.join("cell_means.csv"),
        &means,
        col_names,
        row_names,
        comment,
    )?;
    Ok(())
}

/// Scenario files are `key = value` lines; matrices use `;` between rows.
///
/// ```text
/// r = 10
/// s = 200
/// k1 = 2
/// k2 = 2
/// lambda = 0.5 0.5
/// pi = 0.8808 0.1192 ; 0.1192 0.8808
/// psi = 1 2 ; 3 4
/// sigma2 = 0.5
/// n_replicates = 1000
/// methods = full row rowcol
/// seed = 20260810
/// ```
pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    let mut fields: std::collections::HashMap<String, String> = Default::default();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::ScenarioFormat(format!("expected key = value, got {line:?}")))?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| -> Result<&String> {
        fields
            .get(key)
            .ok_or_else(|| Error::ScenarioFormat(format!("missing key {key:?}")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::ScenarioFormat(format!("{key} must be a positive integer")))
    };
    let parse_vector = |key: &str| -> Result<Vec<f64>> {
        get(key)?
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::ScenarioFormat(format!("bad number {t:?} in {key}")))
            })
            .collect()
    };
    let parse_matrix = |key: &str| -> Result<Vec<Vec<f64>>> {
        get(key)?
            .split(';')
            .map(|row| {
                row.split_whitespace()
                    .map(|t| {
                        t.parse().map_err(|_| {
                            Error::ScenarioFormat(format!("bad number {t:?} in {key}"))
                        })
                    })
                    .collect()
            })
            .collect()
    };

    let dims = ModelDims::new(
        parse_usize("r")?,
        parse_usize("s")?,
        parse_usize("k1")?,
        parse_usize("k2")?,
    )?;
    let lambda = parse_vector("lambda")?;
    let pi = parse_matrix("pi")?;
    let psi = parse_matrix("psi")?;
    let sigma2: f64 = get("sigma2")?
        .parse()
        .map_err(|_| Error::ScenarioFormat("sigma2 must be a number".into()))?;
    if lambda.len() != dims.k1
        || pi.len() != dims.k2
        || pi.iter().any(|r| r.len() != dims.k2)
        || psi.len() != dims.k1
        || psi.iter().any(|r| r.len() != dims.k2)
    {
        return Err(Error::ScenarioFormat(
            "parameter blocks do not match the declared dimensions".into(),
        ));
    }
    let methods: Vec<Method> = get("methods")?
        .split_whitespace()
        .map(|t| {
            Method::parse(t)
                .ok_or_else(|| Error::ScenarioFormat(format!("unknown method {t:?}")))
        })
        .collect::<Result<_>>()?;
    let truth = ModelParams::new(
        Array1::from(lambda),
        Array2::from_shape_fn((dims.k2, dims.k2), |(i, j)| pi[i][j]),
        Array2::from_shape_fn((dims.k1, dims.k2), |(i, j)| psi[i][j]),
        sigma2,
    );
    Ok(Scenario {
        dims,
        truth,
        n_replicates: parse_usize("n_replicates")?,
        methods,
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::ScenarioFormat("seed must be a 64-bit integer".into()))?,
    })
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario_str(&fs::read_to_string(path)?)
}
