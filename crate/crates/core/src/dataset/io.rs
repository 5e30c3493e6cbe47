use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{DatasetError, Interaction, InteractionMatrix, Result, Split, SplitAssignment};

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_field<T: std::str::FromStr>(row: &csv::StringRecord, k: usize, name: &str) -> Result<T> {
    let line = row.position().map_or(0, |p| p.line());
    row.get(k)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| DatasetError::Parse {
            line,
            column: name.to_string(),
            message: format!("bad value {:?}", row.get(k).unwrap_or_default()),
        })
}

/// Writes purchase events as `user,item,timestamp,price_eth,label`.
pub fn write_interactions(m: &InteractionMatrix, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let mut text = String::from("user,item,timestamp,price_eth,label\n");
    for ev in m.interactions() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            m.users()[ev.user],
            m.items()[ev.item],
            ev.timestamp,
            ev.price_eth,
            ev.label
        ));
    }
    out.write_all(text.as_bytes()).map_err(io_err(path))
}

pub fn read_interactions(path: &Path) -> Result<InteractionMatrix> {
    let mut reader = open(path)?;
    let mut raw = Vec::new();
    for row in reader.records() {
        let row = row?;
        let user: String = parse_field(&row, 0, "user")?;
        let item: String = parse_field(&row, 1, "item")?;
        let timestamp: i64 = parse_field(&row, 2, "timestamp")?;
        let price: f64 = parse_field(&row, 3, "price_eth")?;
        let label: u8 = parse_field(&row, 4, "label")?;
        raw.push((user, item, timestamp, price, label));
    }
    let users: BTreeMap<String, usize> = raw.iter().map(|r| (r.0.clone(), 0)).collect();
    let items: BTreeMap<String, usize> = raw.iter().map(|r| (r.1.clone(), 0)).collect();
    let users: BTreeMap<String, usize> = users.into_keys().enumerate().map(|(k, u)| (u, k)).collect();
    let items: BTreeMap<String, usize> = items.into_keys().enumerate().map(|(k, i)| (i, k)).collect();
    let interactions = raw
        .iter()
        .map(|r| Interaction {
            user: users[&r.0],
            item: items[&r.1],
            timestamp: r.2,
            price_eth: r.3,
            label: r.4,
        })
        .collect();
    InteractionMatrix::new(users.into_keys().collect(), items.into_keys().collect(), interactions)
}

/// Writes one `user,item,timestamp,split` row per feedback pair.
pub fn write_split(m: &InteractionMatrix, split: &SplitAssignment, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let mut text = String::from("user,item,timestamp,split\n");
    for (p, tag) in m.pairs().iter().zip(split.tags()) {
        text.push_str(&format!("{},{},{},{}\n", m.users()[p.user], m.items()[p.item], p.timestamp, tag));
    }
    out.write_all(text.as_bytes()).map_err(io_err(path))
}

pub fn read_split(path: &Path, m: &InteractionMatrix) -> Result<SplitAssignment> {
    let mut reader = open(path)?;
    let mut tags: BTreeMap<(String, String), Split> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let user: String = parse_field(&row, 0, "user")?;
        let item: String = parse_field(&row, 1, "item")?;
        let tag: String = parse_field(&row, 3, "split")?;
        let line = row.position().map_or(0, |p| p.line());
        let tag: Split = tag.parse().map_err(|message| DatasetError::Parse {
            line,
            column: "split".into(),
            message,
        })?;
        tags.insert((user, item), tag);
    }
    let ordered = m
        .pairs()
        .iter()
        .map(|p| {
            let key = (m.users()[p.user].clone(), m.items()[p.item].clone());
            tags.get(&key).copied().ok_or_else(|| {
                DatasetError::Empty(format!("split file has no entry for user {} item {}", key.0, key.1))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SplitAssignment::new(m, ordered)
}
