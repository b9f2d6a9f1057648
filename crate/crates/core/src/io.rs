//! CSV datasets in, problems and reports out.
//!
//! Row indices are 0-based here; user-facing 1-based numbering is applied by
//! callers at the presentation boundary.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::RegressionProblem;

/// Column selection and preprocessing for a CSV dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Response column; defaults to the last numeric column.
    pub response: Option<String>,
    /// Feature columns; defaults to every other numeric column.
    pub features: Option<Vec<String>>,
    /// Prepend an all-ones column.
    pub intercept: bool,
    /// Natural log of the response and every feature before fitting.
    pub log_transform: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            response: None,
            features: None,
            intercept: true,
            log_transform: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub response: String,
    /// Design column names, `"(intercept)"` first when present.
    pub columns: Vec<String>,
    pub problem: RegressionProblem,
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("cannot parse {raw:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("non-finite value {raw:?}"),
        });
    }
    Ok(v)
}

/// Parses CSV text with a header row. Parse errors report the 1-based line
/// number in the file (the header is line 1).
pub fn load_csv_str(text: &str, spec: &DatasetSpec) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            column: String::new(),
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i + 2,
            column: String::new(),
            message: e.to_string(),
        })?;
        records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    if records.is_empty() {
        return domain("dataset has no data rows");
    }
    // A column is numeric when its first data cell parses; later cells must then parse too.
    let numeric = |c: usize| records[0].get(c).is_some_and(|v| v.trim().parse::<f64>().is_ok());
    let col_index = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_string(),
            message: "no such column".into(),
        })
    };
    let response = match &spec.response {
        Some(name) => col_index(name)?,
        None => (0..header.len())
            .rev()
            .find(|&c| numeric(c))
            .ok_or_else(|| Error::Domain("dataset has no numeric column".into()))?,
    };
    let features: Vec<usize> = match &spec.features {
        Some(names) => names.iter().map(|n| col_index(n)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&c| c != response && numeric(c)).collect(),
    };
    if features.contains(&response) {
        return domain(format!("column {} is both response and feature", header[response]));
    }
    let n = records.len();
    let offset = usize::from(spec.intercept);
    let p = features.len() + offset;
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let value = |row: usize, c: usize| -> Result<f64> {
        let raw = records[row].get(c).map(String::as_str).unwrap_or("");
        let v = parse_cell(raw, row + 2, &header[c])?;
        if !spec.log_transform {
            return Ok(v);
        }
        if v <= 0.0 {
            return Err(Error::Parse {
                row: row + 2,
                column: header[c].clone(),
                message: format!("log transform needs a positive value, got {v}"),
            });
        }
        Ok(v.ln())
    };
    for row in 0..n {
        y[row] = value(row, response)?;
        if spec.intercept {
            x[(row, 0)] = 1.0;
        }
        for (j, &c) in features.iter().enumerate() {
            x[(row, j + offset)] = value(row, c)?;
        }
    }
    let mut columns = Vec::with_capacity(p);
    if spec.intercept {
        columns.push("(intercept)".to_string());
    }
    columns.extend(features.iter().map(|&c| header[c].clone()));
    Ok(Dataset {
        response: header[response].clone(),
        columns,
        problem: RegressionProblem::new(y, x)?,
    })
}

pub fn load_csv_path(path: &Path, spec: &DatasetSpec) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    load_csv_str(&text, spec)
}

/// Datasets bundled with the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    /// Brownlee's stack loss plant data, 21 × 3.
    StackLoss,
    /// Hertzsprung-Russell star cluster CYG OB1, 47 × 1.
    Stars,
    /// Brain and body weights of 27 animals, fit on the log-log scale.
    BrainBody,
    /// Atkinson and Riani's 60 × 3 example; the fixture is not bundled.
    Ar2000,
}

const STACKLOSS: &str = include_str!("../data/stackloss.csv");
const STARS: &str = include_str!("../data/stars.csv");
const BRAINBODY: &str = include_str!("../data/brainbody.csv");

impl Builtin {
    pub const ALL: [Builtin; 4] = [Builtin::StackLoss, Builtin::Stars, Builtin::BrainBody, Builtin::Ar2000];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::StackLoss => "stackloss",
            Builtin::Stars => "stars",
            Builtin::BrainBody => "brainbody",
            Builtin::Ar2000 => "ar2000",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn spec(self) -> DatasetSpec {
        let (response, features, log_transform): (&str, &[&str], bool) = match self {
            Builtin::StackLoss => ("stack_loss", &["air_flow", "water_temp", "acid_conc"], false),
            Builtin::Stars => ("log_light", &["log_te"], false),
            Builtin::BrainBody => ("brain", &["body"], true),
            Builtin::Ar2000 => ("y", &["x1", "x2", "x3"], false),
        };
        DatasetSpec {
            response: Some(response.into()),
            features: Some(features.iter().map(|s| s.to_string()).collect()),
            intercept: true,
            log_transform,
        }
    }

    /// CSV text of the dataset. AR2000 is read from `data/ar2000.csv` under
    /// the core crate if someone has placed it there.
    pub fn csv(self) -> Result<String> {
        match self {
            Builtin::StackLoss => Ok(STACKLOSS.into()),
            Builtin::Stars => Ok(STARS.into()),
            Builtin::BrainBody => Ok(BRAINBODY.into()),
            Builtin::Ar2000 => {
                let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/ar2000.csv");
                std::fs::read_to_string(&path)
                    .map_err(|_| Error::Io(format!("AR2000 fixture unavailable at {}", path.display())))
            }
        }
    }

    pub fn load(self) -> Result<Dataset> {
        load_csv_str(&self.csv()?, &self.spec())
    }
}

/// Writes `[y, x1, …, xp]` with a header, every value to 17 significant digits.
pub fn problem_to_csv(problem: &RegressionProblem) -> String {
    let mut out = String::from("y");
    for j in 0..problem.p() {
        out.push_str(&format!(",x{}", j + 1));
    }
    out.push('\n');
    for i in 0..problem.n() {
        out.push_str(&format!("{:.16e}", problem.y()[i]));
        for j in 0..problem.p() {
            out.push_str(&format!(",{:.16e}", problem.x()[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`problem_to_csv`].
pub fn problem_from_csv(text: &str) -> Result<RegressionProblem> {
    let spec = DatasetSpec {
        response: Some("y".into()),
        features: None,
        intercept: false,
        log_transform: false,
    };
    Ok(load_csv_str(text, &spec)?.problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_have_expected_shapes() {
        let s = Builtin::StackLoss.load().unwrap();
        assert_eq!((s.problem.n(), s.problem.p()), (21, 4));
        assert_eq!(s.problem.y()[0], 42.0);
        let st = Builtin::Stars.load().unwrap();
        assert_eq!((st.problem.n(), st.problem.p()), (47, 2));
        let b = Builtin::BrainBody.load().unwrap();
        assert_eq!((b.problem.n(), b.problem.p()), (27, 2));
        assert!((b.problem.y()[0] - 8.1f64.ln()).abs() < 1e-15);
        assert_eq!(b.columns, vec!["(intercept)", "body"]);
    }

    #[test]
    fn default_columns_skip_text() {
        let text = "name,a,b\nx,1,2\ny,2,5\nz,3,7\nw,5,1\n";
        let d = load_csv_str(text, &DatasetSpec::default()).unwrap();
        assert_eq!(d.response, "b");
        assert_eq!(d.columns, vec!["(intercept)", "a"]);
    }

    #[test]
    fn parse_error_reports_row_and_column() {
        let text = "a,b\n1,2\n3,oops\n4,5\n6,1\n";
        match load_csv_str(text, &DatasetSpec::default()).unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column.as_str()), (3, "b")),
            other => panic!("unexpected {other:?}"),
        }
        let spec = DatasetSpec {
            response: Some("b".into()),
            features: Some(vec!["a".into()]),
            ..DatasetSpec::default()
        };
        match load_csv_str(text, &spec).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_column_and_bad_log() {
        let text = "a,b\n1,2\n3,4\n4,5\n6,-1\n";
        let spec = DatasetSpec {
            response: Some("c".into()),
            ..DatasetSpec::default()
        };
        assert!(matches!(load_csv_str(text, &spec), Err(Error::Parse { row: 1, .. })));
        let spec = DatasetSpec {
            log_transform: true,
            ..DatasetSpec::default()
        };
        assert!(matches!(load_csv_str(text, &spec), Err(Error::Parse { row: 5, .. })));
    }

    #[test]
    fn missing_ar2000_is_an_io_error() {
        if !Path::new(env!("CARGO_MANIFEST_DIR")).join("data/ar2000.csv").exists() {
            assert!(matches!(Builtin::Ar2000.load(), Err(Error::Io(_))));
        }
    }
}
