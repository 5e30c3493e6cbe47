use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{FeatureError, Result};

/// Reads an embedding CSV: a header `item_id,<dim>` (or the literal
/// `item_id,dim`), then one `token_id,v1,…,vdim` row per item.
pub fn load_precomputed_embeddings(path: &Path, expected_dim: usize) -> Result<BTreeMap<String, Vec<f64>>> {
    let file = File::open(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_embeddings(file, expected_dim, &path.display().to_string())
}

pub fn parse_embeddings<R: Read>(
    reader: R,
    expected_dim: usize,
    source: &str,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: usize, message: String| FeatureError::Parse {
        path: source.into(),
        line,
        message,
    };
    let header = csv.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    match (header.get(0), header.get(1)) {
        (Some("item_id"), Some(d)) => {
            if let Ok(dim) = d.parse::<usize>() {
                if dim != expected_dim {
                    return Err(FeatureError::DimensionMismatch {
                        item: "<header>".into(),
                        expected: expected_dim,
                        found: dim,
                    });
                }
            } else if d != "dim" {
                return Err(parse_err(1, format!("bad dimension field {d:?}")));
            }
        }
        _ => return Err(parse_err(1, "header must start with item_id,dim".into())),
    }

    let mut out = BTreeMap::new();
    for (k, row) in csv.records().enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        let mut fields = row.iter();
        let item = fields.next().unwrap_or_default().to_string();
        let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| parse_err(line, format!("item {item}: {e}")))?;
        if values.len() != expected_dim {
            return Err(FeatureError::DimensionMismatch {
                item,
                expected: expected_dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(format!("embedding of {item}")));
        }
        if out.insert(item.clone(), values).is_some() {
            return Err(FeatureError::DuplicateItem(item));
        }
    }
    Ok(out)
}

/// Writes vectors in the embedding CSV format with a numeric dim header.
pub fn write_embeddings(path: &Path, vectors: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let dim = vectors.values().next().map_or(0, Vec::len);
    let mut text = format!("item_id,{dim}\n");
    for (item, v) in vectors {
        if v.len() != dim {
            return Err(FeatureError::DimensionMismatch {
                item: item.clone(),
                expected: dim,
                found: v.len(),
            });
        }
        text.push_str(item);
        for x in v {
            text.push(',');
            text.push_str(&x.to_string());
        }
        text.push('\n');
    }
    let io = |source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    };
    File::create(path).map_err(io)?.write_all(text.as_bytes()).map_err(io)
}
