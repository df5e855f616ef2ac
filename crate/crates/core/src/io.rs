//! File formats: person-level microdata CSV, error-truth sidecar, traces,
//! report tables and parameter checkpoints.
//!
//! A microdata file has one row per person with columns `household_id`,
//! `person_index`, `is_head` and one column per schema variable. Rows of a
//! household are contiguous and numbered `1..=n`. When head characteristics
//! are household-level variables, the head row leaves the individual
//! columns empty. Missing values are written as a sentinel token (`NA` by
//! default). Categories are written as labels where the schema has them and
//! as values otherwise.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analyze::ReportRow;
use crate::contaminate::ErrorTruth;
use crate::data::{Code, Dataset, Household, MISSING};
use crate::error::{Error, IoError};
use crate::model::NdpmpmParams;
use crate::sampler::TracePoint;
use crate::schema::{HeadLayout, Level, Schema};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Where household-level values appear in a microdata file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HouseholdValues {
    /// Repeated on every person row.
    #[default]
    Repeated,
    /// Only on the first row; other rows leave them empty.
    FirstRow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvOptions {
    pub missing: String,
    pub household_values: HouseholdValues,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            missing: "NA".into(),
            household_values: HouseholdValues::Repeated,
        }
    }
}

const FIXED: [&str; 3] = ["household_id", "person_index", "is_head"];

/// Flat cell index behind each variable column of a person row, or `None`
/// where the column does not apply.
fn row_layout(schema: &Schema, row: usize, opts: &CsvOptions) -> Vec<Option<usize>> {
    let member = match schema.head_layout() {
        HeadLayout::Member => Some(row),
        HeadLayout::Household => row.checked_sub(1),
    };
    (0..schema.variables().len())
        .map(|v| match schema.variable(v).level {
            Level::Household => (row == 0 || opts.household_values == HouseholdValues::Repeated)
                .then(|| schema.position(v)),
            Level::Individual => member.map(|j| schema.q() + j * schema.p() + schema.position(v)),
        })
        .collect()
}

fn header(schema: &Schema) -> Vec<String> {
    FIXED
        .iter()
        .map(|s| s.to_string())
        .chain(schema.variables().iter().map(|v| v.name.clone()))
        .collect()
}

/// Text for one code.
pub fn format_code(schema: &Schema, var: usize, code: Code, missing: &str) -> String {
    if code == MISSING {
        return missing.to_string();
    }
    match &schema.variable(var).labels {
        Some(l) => l[code as usize - 1].clone(),
        None => schema.value(var, code).to_string(),
    }
}

/// Code for one field; `None` for an empty field.
pub fn parse_code(
    schema: &Schema,
    var: usize,
    text: &str,
    missing: &str,
) -> Result<Option<Code>, String> {
    let t = text.trim();
    if t.is_empty() {
        return Ok(None);
    }
    if t == missing {
        return Ok(Some(MISSING));
    }
    let v = schema.variable(var);
    if let Some(c) = v.code_of_label(t) {
        return Ok(Some(c));
    }
    t.parse::<i32>()
        .ok()
        .and_then(|x| schema.code_for_value(var, x))
        .map(Some)
        .ok_or_else(|| format!("'{t}' is not a category of '{}'", v.name))
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn write_microdata<W: Write>(
    out: W,
    schema: &Schema,
    data: &Dataset,
    opts: &CsvOptions,
) -> Result<(), IoError> {
    let mut w = writer(out);
    w.write_record(header(schema))?;
    for h in &data.households {
        for row in 0..h.size {
            let mut rec = vec![
                h.id.clone(),
                (row + 1).to_string(),
                if row == 0 { "1" } else { "0" }.to_string(),
            ];
            for (v, cell) in row_layout(schema, row, opts).into_iter().enumerate() {
                rec.push(match cell {
                    Some(c) => format_code(schema, v, h.cells[c], &opts.missing),
                    None => String::new(),
                });
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| IoError::File {
        path: "<output>".into(),
        source: e,
    })
}

fn format_err(line: u64, message: impl Into<String>) -> IoError {
    IoError::Format {
        line: line as usize,
        message: message.into(),
    }
}

/// Reads and checks a microdata file.
pub fn read_microdata<R: Read>(
    input: R,
    schema: &Schema,
    opts: &CsvOptions,
) -> Result<Dataset, Error> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let head: Vec<String> = rdr
        .headers()
        .map_err(IoError::from)?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let want = header(schema);
    let mut col = vec![usize::MAX; want.len()];
    for (i, name) in head.iter().enumerate() {
        match want.iter().position(|w| w == name) {
            Some(k) if col[k] == usize::MAX => col[k] = i,
            Some(_) => return Err(format_err(1, format!("duplicate column '{name}'")).into()),
            None => return Err(format_err(1, format!("unknown column '{name}'")).into()),
        }
    }
    if let Some(k) = col.iter().position(|&c| c == usize::MAX) {
        return Err(format_err(1, format!("missing column '{}'", want[k])).into());
    }

    struct Pending {
        id: String,
        line: u64,
        rows: Vec<(u64, Vec<Option<Code>>)>,
    }
    let mut households = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let finish = |p: Pending, out: &mut Vec<Household>| -> Result<(), Error> {
        let n = p.rows.len();
        let size_var = schema.size_var();
        let declared = p.rows[0].1[size_var]
            .filter(|&c| c != MISSING)
            .ok_or_else(|| {
                format_err(p.line, format!("household '{}': size is not given", p.id))
            })?;
        let size = schema.size_of_code(declared);
        if size != n {
            return Err(format_err(
                p.line,
                format!("household '{}' has {n} rows but size {size}", p.id),
            )
            .into());
        }
        let mut cells: Vec<Option<Code>> = vec![None; schema.cell_count(size)];
        for (row, (line, fields)) in p.rows.iter().enumerate() {
            let layout = row_layout(schema, row, opts);
            for (v, cell) in layout.into_iter().enumerate() {
                let what = &schema.variable(v).name;
                match (cell, fields[v]) {
                    (Some(c), Some(code)) => match cells[c] {
                        Some(prev) if prev != code => {
                            return Err(format_err(
                                *line,
                                format!("household '{}': inconsistent values for '{what}'", p.id),
                            )
                            .into())
                        }
                        _ => cells[c] = Some(code),
                    },
                    (Some(_), None) => {
                        return Err(format_err(
                            *line,
                            format!("household '{}': '{what}' is empty", p.id),
                        )
                        .into())
                    }
                    (None, Some(_)) => {
                        return Err(format_err(
                            *line,
                            format!("household '{}': '{what}' must be empty on this row", p.id),
                        )
                        .into())
                    }
                    (None, None) => {}
                }
            }
        }
        let cells = cells.into_iter().map(|c| c.unwrap()).collect();
        let h = Household::new(schema, p.id, size, cells)
            .map_err(|e| format_err(p.line, e.to_string()))?;
        out.push(h);
        Ok(())
    };

    let mut cur: Option<Pending> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(IoError::from)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| rec.get(col[k]).unwrap_or("").trim();
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(format_err(line, "empty household_id").into());
        }
        let index: usize = field(1)
            .parse()
            .map_err(|_| format_err(line, format!("bad person_index '{}'", field(1))))?;
        let is_head = match field(2) {
            "1" => true,
            "0" => false,
            other => return Err(format_err(line, format!("bad is_head '{other}'")).into()),
        };
        let mut codes = Vec::with_capacity(schema.variables().len());
        for v in 0..schema.variables().len() {
            codes.push(
                parse_code(schema, v, field(3 + v), &opts.missing)
                    .map_err(|m| format_err(line, m))?,
            );
        }
        if cur.as_ref().is_some_and(|p| p.id != id) {
            finish(cur.take().unwrap(), &mut households)?;
        }
        let p = cur.get_or_insert_with(|| Pending {
            id: id.clone(),
            line,
            rows: Vec::new(),
        });
        if p.rows.is_empty() && !seen.insert(id.clone()) {
            return Err(format_err(line, format!("household '{id}' is not contiguous")).into());
        }
        if index != p.rows.len() + 1 {
            return Err(format_err(
                line,
                format!(
                    "household '{id}': expected person_index {}",
                    p.rows.len() + 1
                ),
            )
            .into());
        }
        if is_head != (index == 1) {
            return Err(
                format_err(line, format!("household '{id}': the head must be person 1")).into(),
            );
        }
        p.rows.push((line, codes));
    }
    if let Some(p) = cur {
        finish(p, &mut households)?;
    }
    Ok(Dataset::new(households))
}

fn open(path: &Path) -> Result<fs::File, IoError> {
    fs::File::open(path).map_err(|e| IoError::File {
        path: path.display().to_string(),
        source: e,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::File {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| IoError::File {
            path: path.display().to_string(),
            source: e,
        })
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::File {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_microdata(path: &Path, schema: &Schema, opts: &CsvOptions) -> Result<Dataset, Error> {
    read_microdata(std::io::BufReader::new(open(path)?), schema, opts).map_err(|e| match e {
        Error::Io(IoError::Format { line, message }) => Error::Io(IoError::Format {
            line,
            message: format!("{}: {message}", path.display()),
        }),
        other => other,
    })
}

pub fn save_microdata(
    path: &Path,
    schema: &Schema,
    data: &Dataset,
    opts: &CsvOptions,
) -> Result<(), IoError> {
    write_microdata(create(path)?, schema, data, opts)
}

/// Error flags in the microdata grid: `z` per household and `1`/`0` per cell.
pub fn write_truth_flags<W: Write>(
    out: W,
    schema: &Schema,
    data: &Dataset,
    truth: &ErrorTruth,
) -> Result<(), IoError> {
    let mut w = writer(out);
    let mut head = vec![
        "household_id".to_string(),
        "person_index".into(),
        "z".into(),
    ];
    head.extend(schema.variables().iter().map(|v| v.name.clone()));
    w.write_record(&head)?;
    let opts = CsvOptions {
        household_values: HouseholdValues::FirstRow,
        ..CsvOptions::default()
    };
    for (i, h) in data.households.iter().enumerate() {
        for row in 0..h.size {
            let mut rec = vec![
                h.id.clone(),
                (row + 1).to_string(),
                (truth.z[i] as u8).to_string(),
            ];
            for cell in row_layout(schema, row, &opts) {
                rec.push(match cell {
                    Some(c) => (truth.e[i][c] as u8).to_string(),
                    None => String::new(),
                });
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| IoError::File {
        path: "<output>".into(),
        source: e,
    })
}

pub fn save_truth_flags(
    path: &Path,
    schema: &Schema,
    data: &Dataset,
    truth: &ErrorTruth,
) -> Result<(), IoError> {
    write_truth_flags(create(path)?, schema, data, truth)
}

/// Tidy trace table `iteration,name,value`.
pub fn write_trace<W: Write>(out: W, trace: &[TracePoint]) -> Result<(), IoError> {
    let mut w = writer(out);
    w.write_record(["iteration", "name", "value"])?;
    for t in trace {
        w.write_record([
            t.iteration.to_string(),
            t.name.clone(),
            format!("{}", t.value),
        ])?;
    }
    w.flush().map_err(|e| IoError::File {
        path: "<output>".into(),
        source: e,
    })
}

pub fn save_trace(path: &Path, trace: &[TracePoint]) -> Result<(), IoError> {
    write_trace(create(path)?, trace)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Report table with one row per estimand.
pub fn write_report<W: Write>(out: W, rows: &[ReportRow]) -> Result<(), IoError> {
    let mut w = writer(out);
    w.write_record([
        "query", "kind", "truth", "estimate", "within", "between", "total", "df", "lower", "upper",
        "covered",
    ])?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.kind.to_string(),
            opt(r.truth),
            r.mi.estimate.to_string(),
            r.mi.within.to_string(),
            r.mi.between.to_string(),
            r.mi.total.to_string(),
            r.mi.df.to_string(),
            r.mi.lower.to_string(),
            r.mi.upper.to_string(),
            r.covered()
                .map(|c| (c as u8).to_string())
                .unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| IoError::File {
        path: "<output>".into(),
        source: e,
    })
}

pub fn save_report(path: &Path, rows: &[ReportRow]) -> Result<(), IoError> {
    write_report(create(path)?, rows)
}

/// Saved model state for synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub schema_fingerprint: String,
    pub params: NdpmpmParams,
    /// Posterior mean error rate per error-prone variable.
    pub epsilon: BTreeMap<String, f64>,
}

impl Checkpoint {
    pub fn new(schema: &Schema, params: NdpmpmParams, epsilon: BTreeMap<String, f64>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            schema_fingerprint: schema.fingerprint(),
            params,
            epsilon,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    /// Parses a checkpoint and checks it belongs to `schema`.
    pub fn from_json(text: &str, schema: &Schema) -> Result<Self, IoError> {
        let c: Checkpoint =
            serde_json::from_str(text).map_err(|e| IoError::Checkpoint(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(IoError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        if c.schema_fingerprint != schema.fingerprint() {
            return Err(IoError::Checkpoint(
                "checkpoint was written for a different schema".into(),
            ));
        }
        c.params
            .validate()
            .map_err(|e| IoError::Checkpoint(e.to_string()))?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let mut f = create(path)?;
        f.write_all(self.to_json().as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| IoError::File {
                path: path.display().to_string(),
                source: e,
            })
    }

    pub fn load(path: &Path, schema: &Schema) -> Result<Self, IoError> {
        Self::from_json(&read_text(path)?, schema)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::default_acs_schema;

    fn sample() -> &'static str {
        "household_id,person_index,is_head,Ownership,HouseholdSize,HeadGender,HeadRace,HeadHispanic,HeadAge,Gender,Race,Hispanic,Age,Relationship\n\
         h1,1,1,owned,2,male,white,not_hispanic,40,,,,,\n\
         h1,2,0,owned,2,male,white,not_hispanic,40,female,white,not_hispanic,38,spouse\n\
         h2,1,1,rented,3,female,black,NA,30,,,,,\n\
         h2,2,0,rented,3,female,black,NA,30,male,black,not_hispanic,NA,biological_child\n\
         h2,3,0,rented,3,female,black,NA,30,NA,black,not_hispanic,2,biological_child\n"
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let s = default_acs_schema();
        let opts = CsvOptions::default();
        let d = read_microdata(sample().as_bytes(), &s, &opts).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.missing_cells(), 3);
        let mut out = Vec::new();
        write_microdata(&mut out, &s, &d, &opts).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), sample());
    }

    #[test]
    fn first_row_layout_round_trips() {
        let s = default_acs_schema();
        let d = read_microdata(sample().as_bytes(), &s, &CsvOptions::default()).unwrap();
        let opts = CsvOptions {
            household_values: HouseholdValues::FirstRow,
            ..CsvOptions::default()
        };
        let mut out = Vec::new();
        write_microdata(&mut out, &s, &d, &opts).unwrap();
        let back = read_microdata(out.as_slice(), &s, &opts).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn structural_errors_are_reported() {
        let s = default_acs_schema();
        let opts = CsvOptions::default();
        let inconsistent = sample().replace("h1,2,0,owned", "h1,2,0,rented");
        let e = read_microdata(inconsistent.as_bytes(), &s, &opts).unwrap_err();
        assert!(e.to_string().contains("inconsistent"), "{e}");
        let short = sample()
            .replace("h2,1,1,rented,3", "h2,1,1,rented,4")
            .replace("h2,2,0,rented,3", "h2,2,0,rented,4")
            .replace("h2,3,0,rented,3", "h2,3,0,rented,4");
        assert!(read_microdata(short.as_bytes(), &s, &opts).is_err());
        let gap = sample().replace("h1,2,0", "h1,3,0");
        assert!(read_microdata(gap.as_bytes(), &s, &opts).is_err());
        let bad = sample().replace(",spouse", ",husband");
        let e = read_microdata(bad.as_bytes(), &s, &opts).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn checkpoint_round_trip() {
        use rand::SeedableRng;
        let s = default_acs_schema();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = NdpmpmParams::draw_prior(&s, 3, 2, &Default::default(), &mut rng);
        let c = Checkpoint::new(&s, p, BTreeMap::from([("Age".to_string(), 0.3)]));
        let back = Checkpoint::from_json(&c.to_json(), &s).unwrap();
        assert_eq!(back, c);
        let bad = c.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(Checkpoint::from_json(&bad, &s).is_err());
    }
}
