pub mod evaluate;
pub mod generate;
pub mod kl_budget;
pub mod model_change;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}
