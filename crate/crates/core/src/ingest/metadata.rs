use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{line_of, open_csv, IngestError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingMeta {
    pub building_id: String,
    pub site_id: String,
    /// Kept verbatim, including categories outside the usual vocabulary.
    pub primary_use: String,
    pub square_feet: f64,
    pub year_built: Option<i32>,
    pub floor_count: Option<u32>,
}

/// Building metadata keyed by `building_id`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildingTable {
    buildings: BTreeMap<String, BuildingMeta>,
}

impl BuildingTable {
    pub fn get(&self, building_id: &str) -> Option<&BuildingMeta> {
        self.buildings.get(building_id)
    }

    pub fn len(&self) -> usize {
        self.buildings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buildings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BuildingMeta> {
        self.buildings.values()
    }

    pub fn insert(&mut self, meta: BuildingMeta) -> Option<BuildingMeta> {
        self.buildings.insert(meta.building_id.clone(), meta)
    }
}

impl FromIterator<BuildingMeta> for BuildingTable {
    fn from_iter<T: IntoIterator<Item = BuildingMeta>>(iter: T) -> Self {
        let mut table = BuildingTable::default();
        for meta in iter {
            table.insert(meta);
        }
        table
    }
}

fn parse_optional<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    column: &str,
    raw: Option<&str>,
) -> Result<Option<T>, IngestError> {
    match raw.map(str::trim) {
        None | Some("") => Ok(None),
        Some(value) => {
            // Integers sometimes arrive as "1990.0".
            let value = value.strip_suffix(".0").unwrap_or(value);
            value
                .parse()
                .map(Some)
                .map_err(|_| IngestError::InvalidField {
                    path: path.to_path_buf(),
                    line,
                    message: format!("{column}: cannot parse `{value}`"),
                })
        }
    }
}

pub fn load_building_metadata(path: &Path) -> Result<BuildingTable, IngestError> {
    let (mut reader, header) = open_csv(path)?;
    let col_building = header.require(path, "building_id")?;
    let col_site = header.require(path, "site_id")?;
    let col_use = header.require(path, "primary_use")?;
    let col_sqft = header.require(path, "square_feet")?;
    let col_year = header.find("year_built");
    let col_floors = header.find("floor_count");

    let mut table = BuildingTable::default();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::csv(path, e))?;
        let line = line_of(&record);
        let building_id = record[col_building].to_string();
        let square_feet: f64 = record[col_sqft].parse().map_err(|_| IngestError::InvalidField {
            path: path.to_path_buf(),
            line,
            message: format!("square_feet: cannot parse `{}`", &record[col_sqft]),
        })?;
        if !(square_feet > 0.0 && square_feet.is_finite()) {
            return Err(IngestError::InvalidField {
                path: path.to_path_buf(),
                line,
                message: format!("square_feet must be > 0, got {square_feet}"),
            });
        }
        let meta = BuildingMeta {
            building_id: building_id.clone(),
            site_id: record[col_site].to_string(),
            primary_use: record[col_use].to_string(),
            square_feet,
            year_built: parse_optional(path, line, "year_built", col_year.map(|c| &record[c]))?,
            floor_count: parse_optional(path, line, "floor_count", col_floors.map(|c| &record[c]))?,
        };
        if table.insert(meta).is_some() {
            return Err(IngestError::DuplicateBuilding {
                path: path.to_path_buf(),
                line,
                building_id,
            });
        }
    }
    Ok(table)
}
