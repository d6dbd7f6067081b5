//! Domain types and flat-file ingestion for the region and experiment datasets.
//!
//! Both datasets are plain CSV with a fixed header:
//!
//! - `region.csv`: `sub_region_id,lat,lon,year,temperature,precipitation,solar_radiation,soil_ph,soil_organic_matter,soil_cec`
//! - `experiments.csv`: `sub_region_id,year,variety_id,temperature,precipitation,solar_radiation,soil_ph,soil_organic_matter,soil_cec,yield`
//!
//! Region rows are one per (sub-region, year); soil columns repeat on every
//! row and must agree, since soil is static.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weather attributes, in column order.
pub const WEATHER_ATTRIBUTES: [&str; 3] = ["temperature", "precipitation", "solar_radiation"];
/// Static soil attributes, in column order.
pub const SOIL_ATTRIBUTES: [&str; 3] = ["soil_ph", "soil_organic_matter", "soil_cec"];

pub const REGION_HEADER: [&str; 10] = [
    "sub_region_id",
    "lat",
    "lon",
    "year",
    "temperature",
    "precipitation",
    "solar_radiation",
    "soil_ph",
    "soil_organic_matter",
    "soil_cec",
];

pub const EXPERIMENT_HEADER: [&str; 10] = [
    "sub_region_id",
    "year",
    "variety_id",
    "temperature",
    "precipitation",
    "solar_radiation",
    "soil_ph",
    "soil_organic_matter",
    "soil_cec",
    "yield",
];

pub const REGION_FILE: &str = "region.csv";
pub const EXPERIMENT_FILE: &str = "experiments.csv";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("parse error at row {row}, column `{column}`: cannot parse {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },
    #[error("conflict for sub-region {id}: {message}")]
    Conflict { id: String, message: String },
    #[error("integrity error at row {row}: unknown sub-region {id:?}")]
    UnknownSubRegion { row: usize, id: String },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Seed variety code, e.g. `V156774`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarietyId(String);

impl VarietyId {
    pub fn new(code: impl Into<String>) -> Result<Self, DataError> {
        let code = code.into();
        if code.trim().is_empty() {
            return Err(DataError::Argument("variety code must be non-empty".into()));
        }
        Ok(Self(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VarietyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A geolocated planning unit with a yearly weather history and static soil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubRegion {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    /// year -> weather values in [`WEATHER_ATTRIBUTES`] order.
    pub weather: BTreeMap<i32, [f64; 3]>,
    /// values in [`SOIL_ATTRIBUTES`] order.
    pub soil: [f64; 3],
}

impl SubRegion {
    /// Year-ordered values of one weather attribute.
    pub fn series(&self, attribute: usize) -> Vec<(i32, f64)> {
        self.weather
            .iter()
            .map(|(&year, values)| (year, values[attribute]))
            .collect()
    }

    pub fn year_range(&self) -> Option<(i32, i32)> {
        let first = *self.weather.keys().next()?;
        let last = *self.weather.keys().next_back()?;
        Some((first, last))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("lat out of range: {}", self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("lon out of range: {}", self.lon));
        }
        if let Some((first, last)) = self.year_range() {
            if (last - first + 1) as usize != self.weather.len() {
                return Err(format!("weather years {first}..={last} are not contiguous"));
            }
        }
        Ok(())
    }
}

/// One historical field trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub sub_region: String,
    pub year: i32,
    pub variety: VarietyId,
    pub weather: [f64; 3],
    pub soil: [f64; 3],
    /// bushels per acre
    pub observed_yield: f64,
}

impl ExperimentRecord {
    /// Weather then soil, the numeric feature order used by the yield model.
    pub fn conditions(&self) -> [f64; 6] {
        let [a, b, c] = self.weather;
        let [d, e, f] = self.soil;
        [a, b, c, d, e, f]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub sub_regions: BTreeMap<String, SubRegion>,
    pub experiments: Vec<ExperimentRecord>,
    pub varieties: BTreeSet<VarietyId>,
    pub weather_attribute_names: Vec<String>,
    pub soil_attribute_names: Vec<String>,
}

impl Catalog {
    pub fn new(sub_regions: BTreeMap<String, SubRegion>, experiments: Vec<ExperimentRecord>) -> Self {
        let varieties = experiments.iter().map(|e| e.variety.clone()).collect();
        Self {
            sub_regions,
            experiments,
            varieties,
            weather_attribute_names: WEATHER_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
            soil_attribute_names: SOIL_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Loads `region.csv` and `experiments.csv` from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, DataError> {
        let dir = dir.as_ref();
        let regions = load_region_dataset(dir.join(REGION_FILE))?;
        let experiments = load_experiment_dataset(dir.join(EXPERIMENT_FILE), &regions)?;
        Ok(Self::new(regions, experiments))
    }

    /// Writes both CSV files into `dir`, each via a temporary file and rename.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), DataError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut region = Vec::new();
        write_region_csv(&mut region, self.sub_regions.values())?;
        write_atomic(&dir.join(REGION_FILE), &region)?;
        let mut experiments = Vec::new();
        write_experiment_csv(&mut experiments, &self.experiments)?;
        write_atomic(&dir.join(EXPERIMENT_FILE), &experiments)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.weather_attribute_names.len() != 3 || self.soil_attribute_names.len() != 3 {
            return Err("attribute name lists must have length 3".into());
        }
        for region in self.sub_regions.values() {
            region.validate().map_err(|m| format!("{}: {m}", region.id))?;
        }
        for (i, e) in self.experiments.iter().enumerate() {
            if !self.sub_regions.contains_key(&e.sub_region) {
                return Err(format!("experiment {i}: unknown sub-region {}", e.sub_region));
            }
            if !self.varieties.contains(&e.variety) {
                return Err(format!("experiment {i}: variety {} not in catalog", e.variety));
            }
            if !e.observed_yield.is_finite() || e.observed_yield < 0.0 {
                return Err(format!("experiment {i}: invalid yield {}", e.observed_yield));
            }
        }
        Ok(())
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(bytes).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

struct Columns(Vec<usize>);

impl Columns {
    fn resolve(headers: &csv::StringRecord, expected: &[&str]) -> Result<Self, DataError> {
        expected
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h.trim() == *name)
                    .ok_or_else(|| DataError::MissingColumn(name.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Columns)
    }

    fn text<'r>(&self, record: &'r csv::StringRecord, idx: usize) -> &'r str {
        record.get(self.0[idx]).unwrap_or("").trim()
    }
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    cols: &Columns,
    idx: usize,
    names: &[&str],
    row: usize,
) -> Result<T, DataError> {
    let raw = cols.text(record, idx);
    raw.parse().map_err(|_| DataError::Parse {
        row,
        column: names[idx].to_string(),
        value: raw.to_string(),
    })
}

fn parse_f64(
    record: &csv::StringRecord,
    cols: &Columns,
    idx: usize,
    names: &[&str],
    row: usize,
) -> Result<f64, DataError> {
    let v: f64 = parse_field(record, cols, idx, names, row)?;
    if !v.is_finite() {
        return Err(DataError::Parse {
            row,
            column: names[idx].to_string(),
            value: cols.text(record, idx).to_string(),
        });
    }
    Ok(v)
}

pub fn load_region_dataset(path: impl AsRef<Path>) -> Result<BTreeMap<String, SubRegion>, DataError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_region_csv(file)
}

/// Parses region rows, merging all rows of one id into a single [`SubRegion`].
///
/// Row numbers in errors are 1-based data rows (the header is row 0).
pub fn read_region_csv<R: Read>(reader: R) -> Result<BTreeMap<String, SubRegion>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let cols = Columns::resolve(rdr.headers()?, &REGION_HEADER)?;
    let mut regions: BTreeMap<String, SubRegion> = BTreeMap::new();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let id = cols.text(&record, 0).to_string();
        if id.is_empty() {
            return Err(DataError::Validation {
                row,
                message: "empty sub_region_id".into(),
            });
        }
        let lat = parse_f64(&record, &cols, 1, &REGION_HEADER, row)?;
        let lon = parse_f64(&record, &cols, 2, &REGION_HEADER, row)?;
        let year: i32 = parse_field(&record, &cols, 3, &REGION_HEADER, row)?;
        let mut weather = [0.0; 3];
        for (a, slot) in weather.iter_mut().enumerate() {
            *slot = parse_f64(&record, &cols, 4 + a, &REGION_HEADER, row)?;
        }
        let mut soil = [0.0; 3];
        for (a, slot) in soil.iter_mut().enumerate() {
            *slot = parse_f64(&record, &cols, 7 + a, &REGION_HEADER, row)?;
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(DataError::Validation {
                row,
                message: format!("lat out of range: {lat}"),
            });
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(DataError::Validation {
                row,
                message: format!("lon out of range: {lon}"),
            });
        }

        let entry = regions.entry(id.clone()).or_insert_with(|| SubRegion {
            id: id.clone(),
            lat,
            lon,
            weather: BTreeMap::new(),
            soil,
        });
        if entry.lat != lat || entry.lon != lon {
            return Err(DataError::Conflict {
                id,
                message: format!("row {row}: centroid differs from earlier rows"),
            });
        }
        if entry.soil != soil {
            return Err(DataError::Conflict {
                id,
                message: format!("row {row}: soil attributes differ from earlier rows"),
            });
        }
        if entry.weather.insert(year, weather).is_some() {
            return Err(DataError::Conflict {
                id,
                message: format!("row {row}: duplicate weather values for year {year}"),
            });
        }
    }

    for region in regions.values() {
        region.validate().map_err(|message| DataError::Conflict {
            id: region.id.clone(),
            message,
        })?;
    }
    Ok(regions)
}

pub fn load_experiment_dataset(
    path: impl AsRef<Path>,
    regions: &BTreeMap<String, SubRegion>,
) -> Result<Vec<ExperimentRecord>, DataError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_experiment_csv(file, regions)
}

pub fn read_experiment_csv<R: Read>(
    reader: R,
    regions: &BTreeMap<String, SubRegion>,
) -> Result<Vec<ExperimentRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let cols = Columns::resolve(rdr.headers()?, &EXPERIMENT_HEADER)?;
    let mut out = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let sub_region = cols.text(&record, 0).to_string();
        if !regions.contains_key(&sub_region) {
            return Err(DataError::UnknownSubRegion { row, id: sub_region });
        }
        let year: i32 = parse_field(&record, &cols, 1, &EXPERIMENT_HEADER, row)?;
        let variety = VarietyId::new(cols.text(&record, 2)).map_err(|_| DataError::Validation {
            row,
            message: "empty variety_id".into(),
        })?;
        let mut weather = [0.0; 3];
        for (a, slot) in weather.iter_mut().enumerate() {
            *slot = parse_f64(&record, &cols, 3 + a, &EXPERIMENT_HEADER, row)?;
        }
        let mut soil = [0.0; 3];
        for (a, slot) in soil.iter_mut().enumerate() {
            *slot = parse_f64(&record, &cols, 6 + a, &EXPERIMENT_HEADER, row)?;
        }
        let observed_yield = parse_f64(&record, &cols, 9, &EXPERIMENT_HEADER, row)?;
        if observed_yield < 0.0 {
            return Err(DataError::Validation {
                row,
                message: format!("negative yield {observed_yield}"),
            });
        }
        out.push(ExperimentRecord {
            sub_region,
            year,
            variety,
            weather,
            soil,
            observed_yield,
        });
    }
    Ok(out)
}

pub fn write_region_csv<'a, W: Write>(
    writer: W,
    regions: impl IntoIterator<Item = &'a SubRegion>,
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REGION_HEADER)?;
    for region in regions {
        for (year, weather) in &region.weather {
            let mut row = vec![
                region.id.clone(),
                region.lat.to_string(),
                region.lon.to_string(),
                year.to_string(),
            ];
            row.extend(weather.iter().map(f64::to_string));
            row.extend(region.soil.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<region writer>".into(),
        source,
    })
}

pub fn write_experiment_csv<W: Write>(writer: W, records: &[ExperimentRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EXPERIMENT_HEADER)?;
    for r in records {
        let mut row = vec![r.sub_region.clone(), r.year.to_string(), r.variety.to_string()];
        row.extend(r.weather.iter().map(f64::to_string));
        row.extend(r.soil.iter().map(f64::to_string));
        row.push(r.observed_yield.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<experiment writer>".into(),
        source,
    })
}

/// Shuffled train/validation/test partition.
///
/// Validation and test get `floor(n * ratio)` items; train takes the rest.
pub fn split_dataset<T: Clone>(
    records: &[T],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), DataError> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(DataError::Argument(format!("ratios must be positive: {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::Argument(format!("ratios must sum to 1, got {total}")));
    }
    let n = records.len();
    // The small slack absorbs representation error such as 0.29 * 100 = 28.999..
    let size = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let n_valid = size(ratios[1]);
    let n_test = size(ratios[2]);
    let n_train = n - n_valid - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_valid]),
        pick(&order[n_train + n_valid..]),
    ))
}
