//! Delimited-text ingestion and emission for observation sets: comma
//! separated, UTF-8, header row, `.` decimal separator. Responses are
//! converted to radians and wrapped on ingest; floats are written with
//! shortest round-trip formatting, so a radians file survives a
//! write/parse cycle bit for bit.

use std::path::PathBuf;

use crate::angle::Angle;
use crate::error::Error;
use crate::estimator::ObservationSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleUnit {
    Radians,
    Degrees,
}

/// A dataset on disk together with the column selection to read from it.
#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub path: PathBuf,
    pub angle_unit: AngleUnit,
    pub response_column: String,
    pub covariate_columns: Vec<String>,
}

/// Reads the selected columns into an observation set, preserving row
/// order. The response column is interpreted per `angle_unit` and wrapped
/// into `[0, 2pi)`.
pub fn parse_dataset(file: &DatasetFile) -> Result<ObservationSet, Error> {
    if file.covariate_columns.is_empty() {
        return Err(Error::InvalidInput(
            "at least one covariate column is required".into(),
        ));
    }
    let mut seen = vec![file.response_column.as_str()];
    for c in &file.covariate_columns {
        if seen.contains(&c.as_str()) {
            return Err(Error::InvalidInput(format!(
                "column {c:?} selected more than once"
            )));
        }
        seen.push(c);
    }

    let mut reader = csv::Reader::from_path(&file.path)?;
    let headers = reader.headers()?.clone();
    let column_index = |name: &str| -> Result<usize, Error> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let response_index = column_index(&file.response_column)?;
    let covariate_indices: Vec<usize> = file
        .covariate_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_, _>>()?;

    let dim = covariate_indices.len();
    let mut covariates = Vec::new();
    let mut responses = Vec::new();
    for (row_number, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_number + 1;
        let cell = |index: usize| -> Result<f64, Error> {
            let text = record.get(index).ok_or_else(|| Error::RowParse {
                row,
                message: format!("row has only {} fields", record.len()),
            })?;
            text.trim().parse::<f64>().map_err(|_| Error::RowParse {
                row,
                message: format!("cannot parse {text:?} as a number"),
            })
        };
        let raw = cell(response_index)?;
        let radians = match file.angle_unit {
            AngleUnit::Radians => raw,
            AngleUnit::Degrees => raw.to_radians(),
        };
        responses.push(Angle::new(radians).map_err(|e| Error::RowParse {
            row,
            message: e.to_string(),
        })?);
        for &index in &covariate_indices {
            let value = cell(index)?;
            if !value.is_finite() {
                return Err(Error::RowParse {
                    row,
                    message: format!("covariate value {value} is not finite"),
                });
            }
            covariates.push(value);
        }
    }

    if responses.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: responses.len(),
        });
    }
    ObservationSet::new(covariates, dim, crate::angle::AngleSeries::new(responses))
}

/// Writes an observation set as CSV, response column first. Radians mode
/// round-trips exactly through [`parse_dataset`]; degrees mode is for
/// interoperability and loses the last bit to the unit conversion.
pub fn write_dataset<W: std::io::Write>(
    data: &ObservationSet,
    response_column: &str,
    covariate_columns: &[String],
    unit: AngleUnit,
    out: W,
) -> Result<(), Error> {
    if covariate_columns.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: covariate_columns.len(),
        });
    }
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![response_column.to_string()];
    header.extend_from_slice(covariate_columns);
    writer.write_record(&header)?;
    for i in 0..data.n() {
        let response = match unit {
            AngleUnit::Radians => data.responses()[i].radians(),
            AngleUnit::Degrees => data.responses()[i].radians().to_degrees(),
        };
        let mut record = vec![response.to_string()];
        for v in data.covariate_row(i) {
            record.push(v.to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
