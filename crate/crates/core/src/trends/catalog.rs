use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrendsError;

const DEFAULT_CATALOG: &str = include_str!("../../data/topic_catalog.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicCategory {
    BuildingType,
    ProductivityTool,
}

impl TopicCategory {
    fn parse(value: &str) -> Option<Self> {
        match value.trim().to_ascii_lowercase().as_str() {
            "building_type" => Some(TopicCategory::BuildingType),
            "productivity_tool" => Some(TopicCategory::ProductivityTool),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendTopic {
    pub topic_id: String,
    pub display_name: String,
    pub category: TopicCategory,
}

/// The 39 building-type and productivity-tool topics shipped with the crate.
pub fn default_catalog() -> Vec<TrendTopic> {
    parse_topic_catalog(DEFAULT_CATALOG.as_bytes(), Path::new("<default catalog>"))
        .expect("shipped catalog is valid")
}

pub fn load_topic_catalog(path: &Path) -> Result<Vec<TrendTopic>, TrendsError> {
    let file = std::fs::File::open(path).map_err(|e| TrendsError::Csv {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    parse_topic_catalog(file, path)
}

pub fn parse_topic_catalog<R: Read>(input: R, path: &Path) -> Result<Vec<TrendTopic>, TrendsError> {
    let csv_err = |source| TrendsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_ascii_lowercase)
        .collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TrendsError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let (c_id, c_name, c_cat) = (col("topic_id")?, col("display_name")?, col("category")?);

    let mut seen = BTreeSet::new();
    let mut topics = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let category = TopicCategory::parse(&record[c_cat]).ok_or_else(|| TrendsError::UnknownCategory {
            path: path.to_path_buf(),
            line,
            value: record[c_cat].to_string(),
        })?;
        let topic_id = record[c_id].to_string();
        if !seen.insert(topic_id.clone()) {
            return Err(TrendsError::DuplicateTopic {
                path: path.to_path_buf(),
                topic_id,
            });
        }
        topics.push(TrendTopic {
            topic_id,
            display_name: record[c_name].to_string(),
            category,
        });
    }
    if topics.is_empty() {
        return Err(TrendsError::EmptyCatalog {
            path: path.to_path_buf(),
        });
    }
    Ok(topics)
}
