//! Surveillance data model: trap sites, tested mosquito pools, and human cases.
//!
//! Ingestion reads three comma-separated files with header rows:
//!
//! * `sites.csv`: `trap_id,latitude,longitude,<covariate columns...>`
//! * `pools.csv`: `trap_id,year,week,day_of_week,pool_size,test_positive,mosquito_count_week,pools_in_week,pools_on_day`
//! * `cases.csv`: `latitude,longitude,year,week`
//!
//! Booleans are encoded as `0`/`1`. Week numbers are taken as given; nothing
//! here converts calendar dates to weeks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius (WGS-84 sphere), kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Default labelling radius around a trap.
pub const DEFAULT_RADIUS_KM: f64 = 1.5;
/// Default number of weeks after a pool in which a case counts.
pub const DEFAULT_LEAD_WEEKS: u32 = 2;

/// Largest number of mosquitoes tested together in one pool.
pub const MAX_POOL_SIZE: u32 = 50;

pub const SITES_COLUMNS: [&str; 3] = ["trap_id", "latitude", "longitude"];
pub const POOLS_COLUMNS: [&str; 9] = [
    "trap_id",
    "year",
    "week",
    "day_of_week",
    "pool_size",
    "test_positive",
    "mosquito_count_week",
    "pools_in_week",
    "pools_on_day",
];
pub const CASES_COLUMNS: [&str; 4] = ["latitude", "longitude", "year", "week"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: malformed CSV: {message}")]
    Csv { file: String, message: String },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file}: row {row}, column `{column}`: cannot parse {value:?}")]
    Parse {
        file: String,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{file}: row {row}: invariant violated: {invariant}")]
    Invariant {
        file: String,
        row: usize,
        invariant: String,
    },
    #[error("{file}: duplicate trap_id {trap_id:?} at row {row}")]
    DuplicateTrap {
        file: String,
        row: usize,
        trap_id: String,
    },
    #[error("pools reference unknown trap ids: {}", .0.join(", "))]
    UnknownTraps(Vec<String>),
    #[error("invalid labelling parameter: {0}")]
    InvalidParameter(String),
}

/// A trap location with its per-trap covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapSite {
    pub trap_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub covariates: BTreeMap<String, f64>,
}

impl TrapSite {
    pub fn location(&self) -> GeoPoint {
        GeoPoint::new(self.latitude, self.longitude)
    }
}

/// One tested pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolObservation {
    pub trap_id: String,
    pub year: i32,
    pub week: u32,
    pub day_of_week: u32,
    pub pool_size: u32,
    pub test_positive: bool,
    pub mosquito_count_week: u32,
    pub pools_in_week: u32,
    pub pools_on_day: u32,
    /// Vector-index risk; `None` until annotated.
    pub risk: Option<f64>,
    /// Whether a human case followed this pool nearby.
    pub response: bool,
}

impl PoolObservation {
    fn check(&self) -> Result<(), String> {
        if self.pool_size < 1 {
            return Err("pool_size ≥ 1".into());
        }
        if self.pool_size > MAX_POOL_SIZE {
            return Err(format!("pool_size ≤ {MAX_POOL_SIZE}"));
        }
        if !(1..=53).contains(&self.week) {
            return Err("week ∈ [1, 53]".into());
        }
        if self.day_of_week > 6 {
            return Err("day_of_week ∈ [0, 6]".into());
        }
        if self.pools_on_day < 1 {
            return Err("pools_on_day ≥ 1".into());
        }
        if self.pools_in_week < self.pools_on_day {
            return Err("pools_in_week ≥ pools_on_day".into());
        }
        if self.mosquito_count_week < self.pool_size {
            return Err("mosquito_count_week ≥ pool_size".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanCase {
    pub latitude: f64,
    pub longitude: f64,
    pub year: i32,
    pub week: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sites: Vec<TrapSite>,
    pub pools: Vec<PoolObservation>,
    pub cases: Vec<HumanCase>,
}

impl Dataset {
    /// Checks every invariant of the data model.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = BTreeSet::new();
        for (i, site) in self.sites.iter().enumerate() {
            check_coordinates(site.latitude, site.longitude).map_err(|invariant| {
                DataError::Invariant {
                    file: "sites".into(),
                    row: i + 2,
                    invariant,
                }
            })?;
            if !seen.insert(site.trap_id.as_str()) {
                return Err(DataError::DuplicateTrap {
                    file: "sites".into(),
                    row: i + 2,
                    trap_id: site.trap_id.clone(),
                });
            }
        }
        for (i, pool) in self.pools.iter().enumerate() {
            pool.check().map_err(|invariant| DataError::Invariant {
                file: "pools".into(),
                row: i + 2,
                invariant,
            })?;
        }
        let unknown: BTreeSet<&str> = self
            .pools
            .iter()
            .map(|p| p.trap_id.as_str())
            .filter(|id| !seen.contains(id))
            .collect();
        if !unknown.is_empty() {
            return Err(DataError::UnknownTraps(
                unknown.into_iter().map(String::from).collect(),
            ));
        }
        for (i, case) in self.cases.iter().enumerate() {
            check_coordinates(case.latitude, case.longitude)
                .and_then(|_| {
                    if (1..=53).contains(&case.week) {
                        Ok(())
                    } else {
                        Err("week ∈ [1, 53]".to_string())
                    }
                })
                .map_err(|invariant| DataError::Invariant {
                    file: "cases".into(),
                    row: i + 2,
                    invariant,
                })?;
        }
        Ok(())
    }

    pub fn site_index(&self) -> HashMap<&str, &TrapSite> {
        self.sites.iter().map(|s| (s.trap_id.as_str(), s)).collect()
    }

    /// Covariate column names, in sorted order, present on every site.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut names: Option<BTreeSet<String>> = None;
        for site in &self.sites {
            let keys: BTreeSet<String> = site.covariates.keys().cloned().collect();
            names = Some(match names {
                None => keys,
                Some(acc) => acc.intersection(&keys).cloned().collect(),
            });
        }
        names.unwrap_or_default().into_iter().collect()
    }
}

fn check_coordinates(lat: f64, lon: f64) -> Result<(), String> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err("latitude ∈ [-90, 90]".into());
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err("longitude ∈ [-180, 180]".into());
    }
    Ok(())
}

/// A point on the sphere in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Self {
        Self {
            latitude,
            longitude,
        }
    }

    /// Great-circle (haversine) distance in kilometres.
    pub fn distance_km(&self, other: &GeoPoint) -> f64 {
        haversine_km(self.latitude, self.longitude, other.latitude, other.longitude)
    }

    /// Point reached by travelling `distance_km` from `self` along `bearing_rad`
    /// (clockwise from north).
    pub fn destination(&self, distance_km: f64, bearing_rad: f64) -> GeoPoint {
        let delta = distance_km / EARTH_RADIUS_KM;
        let lat1 = self.latitude.to_radians();
        let lon1 = self.longitude.to_radians();
        let lat2 =
            (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * bearing_rad.cos()).asin();
        let lon2 = lon1
            + (bearing_rad.sin() * delta.sin() * lat1.cos())
                .atan2(delta.cos() - lat1.sin() * lat2.sin());
        GeoPoint::new(lat2.to_degrees(), normalize_longitude(lon2.to_degrees()))
    }
}

fn normalize_longitude(lon: f64) -> f64 {
    let mut l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if l == -180.0 && lon > 0.0 {
        l = 180.0;
    }
    l
}

pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Number of ISO weeks (52 or 53) in `year`.
pub fn iso_weeks_in_year(year: i32) -> u32 {
    let p = |y: i32| (y + y.div_euclid(4) - y.div_euclid(100) + y.div_euclid(400)).rem_euclid(7);
    if p(year) == 4 || p(year - 1) == 3 {
        53
    } else {
        52
    }
}

/// Weeks from `(year, week)` forward to `(later_year, later_week)`, or `None`
/// when the second is not later or more than one year ahead.
pub fn weeks_between(year: i32, week: u32, later_year: i32, later_week: u32) -> Option<u32> {
    if later_year == year {
        later_week.checked_sub(week).filter(|d| *d > 0)
    } else if later_year == year + 1 {
        let remaining = iso_weeks_in_year(year).checked_sub(week)?;
        Some(remaining + later_week)
    } else {
        None
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Drop rows that violate an invariant instead of failing.
    pub skip_invalid: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub warnings: Vec<String>,
}

/// Reads and validates the three input tables.
pub fn parse_dataset(
    pools_csv: &Path,
    sites_csv: &Path,
    cases_csv: &Path,
) -> Result<Dataset, DataError> {
    parse_dataset_with(pools_csv, sites_csv, cases_csv, &ParseOptions::default()).map(|(d, _)| d)
}

pub fn parse_dataset_with(
    pools_csv: &Path,
    sites_csv: &Path,
    cases_csv: &Path,
    options: &ParseOptions,
) -> Result<(Dataset, ParseReport), DataError> {
    let mut report = ParseReport::default();
    let sites = read_sites(sites_csv, options, &mut report)?;
    let pools = read_pools(pools_csv, options, &mut report)?;
    let cases = read_cases(cases_csv, options, &mut report)?;

    let known: BTreeSet<&str> = sites.iter().map(|s| s.trap_id.as_str()).collect();
    let unknown: BTreeSet<String> = pools
        .iter()
        .filter(|p| !known.contains(p.trap_id.as_str()))
        .map(|p| p.trap_id.clone())
        .collect();
    let pools = if unknown.is_empty() {
        pools
    } else if options.skip_invalid {
        report.warnings.push(format!(
            "dropping pools for unknown traps: {}",
            unknown.iter().cloned().collect::<Vec<_>>().join(", ")
        ));
        pools
            .into_iter()
            .filter(|p| known.contains(p.trap_id.as_str()))
            .collect()
    } else {
        return Err(DataError::UnknownTraps(unknown.into_iter().collect()));
    };

    let dataset = Dataset {
        sites,
        pools,
        cases,
    };
    dataset.validate()?;
    Ok((dataset, report))
}

/// Writes the three input tables in the ingestion schema. Site covariate
/// columns follow [`Dataset::covariate_names`].
pub fn write_dataset(
    dataset: &Dataset,
    pools_csv: &Path,
    sites_csv: &Path,
    cases_csv: &Path,
) -> Result<(), DataError> {
    let flag = |b: bool| if b { "1" } else { "0" };
    let covariates = dataset.covariate_names();

    let mut sites = Vec::with_capacity(dataset.sites.len() + 1);
    let mut header: Vec<String> = SITES_COLUMNS.iter().map(|c| c.to_string()).collect();
    header.extend(covariates.iter().cloned());
    sites.push(header);
    for site in &dataset.sites {
        let mut row = vec![
            site.trap_id.clone(),
            site.latitude.to_string(),
            site.longitude.to_string(),
        ];
        row.extend(covariates.iter().map(|c| site.covariates[c].to_string()));
        sites.push(row);
    }

    let mut pools = vec![POOLS_COLUMNS.iter().map(|c| c.to_string()).collect::<Vec<_>>()];
    for p in &dataset.pools {
        pools.push(vec![
            p.trap_id.clone(),
            p.year.to_string(),
            p.week.to_string(),
            p.day_of_week.to_string(),
            p.pool_size.to_string(),
            flag(p.test_positive).to_string(),
            p.mosquito_count_week.to_string(),
            p.pools_in_week.to_string(),
            p.pools_on_day.to_string(),
        ]);
    }

    let mut cases = vec![CASES_COLUMNS.iter().map(|c| c.to_string()).collect::<Vec<_>>()];
    for c in &dataset.cases {
        cases.push(vec![
            c.latitude.to_string(),
            c.longitude.to_string(),
            c.year.to_string(),
            c.week.to_string(),
        ]);
    }

    write_rows(sites_csv, &sites)?;
    write_rows(pools_csv, &pools)?;
    write_rows(cases_csv, &cases)
}

pub(crate) fn write_rows(path: &Path, rows: &[Vec<String>]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(source),
        other => DataError::Csv {
            file: path.display().to_string(),
            message: format!("{other:?}"),
        },
    })?;
    for row in rows {
        writer.write_record(row).map_err(|e| DataError::Csv {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    writer.flush().map_err(io_err)
}

struct Table {
    file: String,
    headers: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, DataError> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| DataError::Csv {
                file: file.clone(),
                message: e.to_string(),
            })?
            .iter()
            .map(|h| h.trim_start_matches('\u{feff}').to_string())
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| DataError::Csv {
                file: file.clone(),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            rows.push((line, record));
        }
        Ok(Self {
            file,
            headers,
            rows,
        })
    }

    fn require(&self, columns: &[&str]) -> Result<Vec<usize>, DataError> {
        columns
            .iter()
            .map(|c| {
                self.headers
                    .iter()
                    .position(|h| h == c)
                    .ok_or_else(|| DataError::MissingColumn {
                        file: self.file.clone(),
                        column: (*c).to_string(),
                    })
            })
            .collect()
    }

    fn field<T: std::str::FromStr>(
        &self,
        row: usize,
        record: &csv::StringRecord,
        idx: usize,
    ) -> Result<T, DataError> {
        let raw = record.get(idx).unwrap_or("");
        raw.parse::<T>().map_err(|_| DataError::Parse {
            file: self.file.clone(),
            row,
            column: self.headers[idx].clone(),
            value: raw.to_string(),
        })
    }

    fn flag(&self, row: usize, record: &csv::StringRecord, idx: usize) -> Result<bool, DataError> {
        match record.get(idx).unwrap_or("") {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(DataError::Parse {
                file: self.file.clone(),
                row,
                column: self.headers[idx].clone(),
                value: other.to_string(),
            }),
        }
    }
}

/// Handles a row-level invariant failure according to `skip_invalid`.
fn reject(
    file: &str,
    row: usize,
    invariant: String,
    options: &ParseOptions,
    report: &mut ParseReport,
) -> Result<(), DataError> {
    if options.skip_invalid {
        report
            .warnings
            .push(format!("{file}: row {row}: skipped ({invariant})"));
        Ok(())
    } else {
        Err(DataError::Invariant {
            file: file.to_string(),
            row,
            invariant,
        })
    }
}

fn read_sites(
    path: &Path,
    options: &ParseOptions,
    report: &mut ParseReport,
) -> Result<Vec<TrapSite>, DataError> {
    let table = Table::read(path)?;
    let idx = table.require(&SITES_COLUMNS)?;
    let covariate_cols: Vec<usize> = (0..table.headers.len())
        .filter(|i| !idx.contains(i))
        .collect();
    let mut seen = BTreeSet::new();
    let mut sites = Vec::with_capacity(table.rows.len());
    for (row, record) in &table.rows {
        let trap_id = record.get(idx[0]).unwrap_or("").to_string();
        if trap_id.is_empty() {
            reject(&table.file, *row, "trap_id non-empty".into(), options, report)?;
            continue;
        }
        let latitude: f64 = table.field(*row, record, idx[1])?;
        let longitude: f64 = table.field(*row, record, idx[2])?;
        let mut covariates = BTreeMap::new();
        for &c in &covariate_cols {
            covariates.insert(table.headers[c].clone(), table.field(*row, record, c)?);
        }
        if let Err(invariant) = check_coordinates(latitude, longitude) {
            reject(&table.file, *row, invariant, options, report)?;
            continue;
        }
        if !seen.insert(trap_id.clone()) {
            if options.skip_invalid {
                report
                    .warnings
                    .push(format!("{}: row {row}: duplicate trap_id {trap_id:?} skipped", table.file));
                continue;
            }
            return Err(DataError::DuplicateTrap {
                file: table.file.clone(),
                row: *row,
                trap_id,
            });
        }
        sites.push(TrapSite {
            trap_id,
            latitude,
            longitude,
            covariates,
        });
    }
    Ok(sites)
}

fn read_pools(
    path: &Path,
    options: &ParseOptions,
    report: &mut ParseReport,
) -> Result<Vec<PoolObservation>, DataError> {
    let table = Table::read(path)?;
    let idx = table.require(&POOLS_COLUMNS)?;
    let mut pools = Vec::with_capacity(table.rows.len());
    for (row, record) in &table.rows {
        let pool = PoolObservation {
            trap_id: record.get(idx[0]).unwrap_or("").to_string(),
            year: table.field(*row, record, idx[1])?,
            week: table.field(*row, record, idx[2])?,
            day_of_week: table.field(*row, record, idx[3])?,
            pool_size: table.field(*row, record, idx[4])?,
            test_positive: table.flag(*row, record, idx[5])?,
            mosquito_count_week: table.field(*row, record, idx[6])?,
            pools_in_week: table.field(*row, record, idx[7])?,
            pools_on_day: table.field(*row, record, idx[8])?,
            risk: None,
            response: false,
        };
        match pool.check() {
            Ok(()) => pools.push(pool),
            Err(invariant) => reject(&table.file, *row, invariant, options, report)?,
        }
    }
    Ok(pools)
}

fn read_cases(
    path: &Path,
    options: &ParseOptions,
    report: &mut ParseReport,
) -> Result<Vec<HumanCase>, DataError> {
    let table = Table::read(path)?;
    let idx = table.require(&CASES_COLUMNS)?;
    let mut cases = Vec::with_capacity(table.rows.len());
    for (row, record) in &table.rows {
        let case = HumanCase {
            latitude: table.field(*row, record, idx[0])?,
            longitude: table.field(*row, record, idx[1])?,
            year: table.field(*row, record, idx[2])?,
            week: table.field(*row, record, idx[3])?,
        };
        let check = check_coordinates(case.latitude, case.longitude).and_then(|_| {
            if (1..=53).contains(&case.week) {
                Ok(())
            } else {
                Err("week ∈ [1, 53]".to_string())
            }
        });
        match check {
            Ok(()) => cases.push(case),
            Err(invariant) => reject(&table.file, *row, invariant, options, report)?,
        }
    }
    Ok(cases)
}

/// Sets each pool's response: true iff a human case lies within `radius_km`
/// of the pool's trap during the `lead_weeks` weeks strictly after the pool's
/// week (rolling into the next year).
pub fn label_responses(
    dataset: &Dataset,
    radius_km: f64,
    lead_weeks: u32,
) -> Result<Dataset, DataError> {
    if !(radius_km > 0.0 && radius_km.is_finite()) {
        return Err(DataError::InvalidParameter(format!(
            "radius_km must be positive, got {radius_km}"
        )));
    }
    if lead_weeks < 1 {
        return Err(DataError::InvalidParameter("lead_weeks must be ≥ 1".into()));
    }
    let sites = dataset.site_index();
    let mut by_week: HashMap<(i32, u32), Vec<GeoPoint>> = HashMap::new();
    for case in &dataset.cases {
        by_week
            .entry((case.year, case.week))
            .or_default()
            .push(GeoPoint::new(case.latitude, case.longitude));
    }

    let mut out = dataset.clone();
    for pool in &mut out.pools {
        let Some(site) = sites.get(pool.trap_id.as_str()) else {
            return Err(DataError::UnknownTraps(vec![pool.trap_id.clone()]));
        };
        let here = site.location();
        pool.response = window_weeks(pool.year, pool.week, lead_weeks)
            .filter_map(|key| by_week.get(&key))
            .flatten()
            .any(|c| here.distance_km(c) <= radius_km);
    }
    Ok(out)
}

/// The `(year, week)` keys of the `lead` weeks strictly after `(year, week)`.
pub fn window_weeks(year: i32, week: u32, lead: u32) -> impl Iterator<Item = (i32, u32)> {
    let mut y = year;
    let mut w = week;
    (0..lead).map(move |_| {
        if w >= iso_weeks_in_year(y) {
            y += 1;
            w = 1;
        } else {
            w += 1;
        }
        (y, w)
    })
}
