use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{fuel_union, parse_timestamp, format_timestamp, FuelKind, HourlyObservation, IngestError, Result};

/// Maps logical fields to CSV column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSchema {
    pub timestamp: String,
    pub region: String,
    pub demand: String,
    pub demand_forecast: String,
    pub net_imports: String,
    pub co2: String,
    /// Explicit fuel columns. When empty, every `gen_<fuel>_mwh` column in
    /// the header is picked up.
    pub generation: BTreeMap<FuelKind, String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            timestamp: "timestamp".into(),
            region: "region".into(),
            demand: "demand_mwh".into(),
            demand_forecast: "demand_forecast_mwh".into(),
            net_imports: "net_imports_mwh".into(),
            co2: "co2_tonnes".into(),
            generation: BTreeMap::new(),
        }
    }
}

fn generation_column(fuel: FuelKind) -> String {
    format!("gen_{}_mwh", fuel.name())
}

struct Columns {
    timestamp: usize,
    region: usize,
    demand: usize,
    demand_forecast: Option<usize>,
    net_imports: Option<usize>,
    co2: usize,
    generation: Vec<(FuelKind, usize)>,
}

impl Columns {
    fn resolve(header: &csv::StringRecord, schema: &CsvSchema) -> Result<Columns> {
        let find = |name: &str| header.iter().position(|h| h == name);
        let require = |name: &str| find(name).ok_or_else(|| IngestError::MissingColumn(name.to_string()));

        let generation = if schema.generation.is_empty() {
            header
                .iter()
                .enumerate()
                .filter_map(|(i, h)| {
                    let fuel = h.strip_prefix("gen_")?.strip_suffix("_mwh")?;
                    Some(fuel.parse::<FuelKind>().map(|f| (f, i)))
                })
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| IngestError::Row { line: 1, message: e })?
        } else {
            schema
                .generation
                .iter()
                .map(|(f, col)| require(col).map(|i| (*f, i)))
                .collect::<Result<Vec<_>>>()?
        };

        Ok(Columns {
            timestamp: require(&schema.timestamp)?,
            region: require(&schema.region)?,
            demand: require(&schema.demand)?,
            demand_forecast: find(&schema.demand_forecast),
            net_imports: find(&schema.net_imports),
            co2: require(&schema.co2)?,
            generation,
        })
    }
}

fn parse_value(cell: Option<&str>, column: &str, line: u64) -> Result<Option<f64>> {
    match cell.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => {
            let v: f64 = s.parse().map_err(|_| IngestError::Row {
                line,
                message: format!("column `{column}`: unparseable number `{s}`"),
            })?;
            if !v.is_finite() {
                return Err(IngestError::Row {
                    line,
                    message: format!("column `{column}`: non-finite value `{s}`"),
                });
            }
            Ok(Some(v))
        }
    }
}

/// Parses hourly observations from CSV with a header row. Rows are returned
/// in file order; duplicates are kept. Empty numeric cells become NaN (or an
/// absent fuel / forecast). A row whose numeric cells are all empty becomes a
/// sentinel hour.
pub fn parse_csv<R: Read>(content: R, schema: &CsvSchema) -> Result<Vec<HourlyObservation>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(content);
    let header = reader.headers()?.clone();
    let cols = Columns::resolve(&header, schema)?;

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(i);
        let ts_raw = cell(cols.timestamp).unwrap_or("");
        let timestamp = parse_timestamp(ts_raw).map_err(|message| IngestError::Row { line, message })?;
        let region = cell(cols.region).unwrap_or("").to_string();

        let demand = parse_value(cell(cols.demand), &schema.demand, line)?;
        let demand_forecast = match cols.demand_forecast {
            Some(i) => parse_value(cell(i), &schema.demand_forecast, line)?,
            None => None,
        };
        let net_imports = match cols.net_imports {
            Some(i) => parse_value(cell(i), &schema.net_imports, line)?,
            None => None,
        };
        let co2 = parse_value(cell(cols.co2), &schema.co2, line)?;
        let mut generation = BTreeMap::new();
        for &(fuel, i) in &cols.generation {
            if let Some(v) = parse_value(cell(i), header.get(i).unwrap_or(""), line)? {
                generation.insert(fuel, v);
            }
        }

        let all_empty = demand.is_none()
            && demand_forecast.is_none()
            && net_imports.is_none()
            && co2.is_none()
            && generation.is_empty();
        if all_empty {
            out.push(HourlyObservation::sentinel(
                timestamp,
                &region,
                cols.generation.iter().map(|(f, _)| *f),
            ));
            continue;
        }
        out.push(HourlyObservation {
            timestamp,
            region,
            demand: demand.unwrap_or(f64::NAN),
            demand_forecast,
            net_imports: net_imports.unwrap_or(f64::NAN),
            generation,
            co2: co2.unwrap_or(f64::NAN),
        });
    }
    Ok(out)
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Writes observations in the documented column layout. Fuel columns are
/// the union of fuels present, in enumeration order.
pub fn serialize_csv<W: Write>(observations: &[HourlyObservation], out: W) -> Result<()> {
    let fuels = fuel_union(observations);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);

    let mut header = vec![
        "timestamp".to_string(),
        "region".into(),
        "demand_mwh".into(),
        "demand_forecast_mwh".into(),
        "net_imports_mwh".into(),
    ];
    header.extend(fuels.iter().map(|f| generation_column(*f)));
    header.push("co2_tonnes".into());
    w.write_record(&header)?;

    for o in observations {
        let mut row = vec![
            format_timestamp(o.timestamp),
            o.region.clone(),
            cell(o.demand),
            o.demand_forecast.map(cell).unwrap_or_default(),
            cell(o.net_imports),
        ];
        row.extend(fuels.iter().map(|f| o.generation.get(f).copied().map(cell).unwrap_or_default()));
        row.push(cell(o.co2));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}
