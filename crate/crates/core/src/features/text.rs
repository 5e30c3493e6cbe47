use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::{FeatureError, Result};

pub const WORD_VECTOR_DIM: usize = 300;
/// Trait types kept per collection.
pub const MAX_TRAITS: usize = 6;

/// Pretrained word vectors keyed by word.
#[derive(Clone, Debug, Default)]
pub struct WordVectorStore {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorStore {
    pub fn new(dim: usize) -> Self {
        WordVectorStore {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(FeatureError::DimensionMismatch {
                item: word.to_string(),
                expected: self.dim,
                found: vector.len(),
            });
        }
        self.vectors.insert(word.to_string(), vector);
        Ok(())
    }

    /// Exact lookup, falling back to the lowercased word.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors
            .get(word)
            .or_else(|| self.vectors.get(&word.to_lowercase()))
            .map(Vec::as_slice)
    }

    /// Reads `word v1 … vN` lines. A leading `count dim` header line, as
    /// written by word2vec, is skipped.
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let file = File::open(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(file, dim, &path.display().to_string())
    }

    pub fn parse<R: Read>(reader: R, dim: usize, source: &str) -> Result<Self> {
        let mut store = WordVectorStore::new(dim);
        for (k, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| FeatureError::Parse {
                path: source.into(),
                line: k + 1,
                message: e.to_string(),
            })?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| FeatureError::Parse {
                path: source.into(),
                line: k + 1,
                message: e.to_string(),
            })?;
            if k == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
                continue;
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::NonFinite(format!("word vector {word}")));
            }
            store.insert(word, values)?;
        }
        Ok(store)
    }
}

/// Trait name → value for each token.
pub type TraitTable = BTreeMap<String, BTreeMap<String, String>>;

pub fn load_traits(path: &Path) -> Result<TraitTable> {
    let file = File::open(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_traits(file, &path.display().to_string())
}

/// Parses a `token_id,trait_name,value` CSV.
pub fn parse_traits<R: Read>(reader: R, source: &str) -> Result<TraitTable> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut table = TraitTable::new();
    for (k, row) in csv.records().enumerate() {
        let row = row.map_err(|e| FeatureError::Parse {
            path: source.into(),
            line: k + 2,
            message: e.to_string(),
        })?;
        let (Some(token), Some(name), Some(value)) = (row.get(0), row.get(1), row.get(2)) else {
            return Err(FeatureError::Parse {
                path: source.into(),
                line: k + 2,
                message: "expected token_id,trait_name,value".into(),
            });
        };
        if value.is_empty() {
            continue;
        }
        table
            .entry(token.to_string())
            .or_default()
            .insert(name.to_string(), value.to_string());
    }
    Ok(table)
}

/// Picks up to six trait types with the fewest items missing them, ties
/// broken by name. The result is ordered by that ranking.
pub fn select_traits(table: &TraitTable, items: &[String]) -> Vec<String> {
    let mut names: Vec<&str> = table
        .values()
        .flat_map(|traits| traits.keys().map(String::as_str))
        .collect();
    names.sort_unstable();
    names.dedup();
    let mut ranked: Vec<(usize, &str)> = names
        .into_iter()
        .map(|name| {
            let missing = items
                .iter()
                .filter(|item| !table.get(*item).is_some_and(|t| t.contains_key(name)))
                .count();
            (missing, name)
        })
        .collect();
    ranked.sort();
    ranked.into_iter().take(MAX_TRAITS).map(|(_, n)| n.to_string()).collect()
}

/// Concatenates one summed word-vector block per selected trait.
///
/// Multi-word values sum their words' vectors; unknown words and absent
/// traits contribute zeros.
pub fn assemble_text_embedding(
    traits: &BTreeMap<String, String>,
    store: &WordVectorStore,
    selected: &[String],
) -> Vec<f64> {
    let dim = store.dim();
    let mut out = vec![0.0; dim * selected.len()];
    for (block, name) in out.chunks_mut(dim).zip(selected) {
        let Some(phrase) = traits.get(name) else { continue };
        for word in phrase.split_whitespace() {
            if let Some(v) = store.get(word) {
                for (o, x) in block.iter_mut().zip(v) {
                    *o += x;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> WordVectorStore {
        let mut s = WordVectorStore::new(WORD_VECTOR_DIM);
        for (k, w) in ["short", "red", "hair", "gold"].iter().enumerate() {
            let v: Vec<f64> = (0..WORD_VECTOR_DIM).map(|j| (k * 1000 + j) as f64 * 1e-3).collect();
            s.insert(w, v).unwrap();
        }
        s
    }

    fn traits(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn six_traits_give_1800_dims() {
        let selected: Vec<String> = (0..6).map(|k| format!("trait{k}")).collect();
        let v = assemble_text_embedding(&traits(&[("trait0", "gold")]), &store(), &selected);
        assert_eq!(v.len(), 1800);
    }

    #[test]
    fn multi_word_phrase_sums_vectors() {
        let s = store();
        let selected = vec!["hair".to_string()];
        let v = assemble_text_embedding(&traits(&[("hair", "short red hair")]), &s, &selected);
        for j in 0..WORD_VECTOR_DIM {
            let expect = s.get("short").unwrap()[j] + s.get("red").unwrap()[j] + s.get("hair").unwrap()[j];
            assert_eq!(v[j], expect);
        }
    }

    #[test]
    fn unknown_words_give_zeros() {
        let v = assemble_text_embedding(
            &traits(&[("fur", "zzz qqq")]),
            &store(),
            &["fur".to_string(), "absent".to_string()],
        );
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn selection_prefers_fewest_missing_then_name() {
        let mut table = TraitTable::new();
        let items: Vec<String> = (0..3).map(|k| format!("i{k}")).collect();
        for (k, item) in items.iter().enumerate() {
            let mut t = BTreeMap::new();
            for name in ["b", "a", "c", "d", "e", "f"] {
                t.insert(name.to_string(), "x".to_string());
            }
            if k == 2 {
                t.insert("rare".to_string(), "x".to_string());
            }
            if k == 0 {
                t.remove("b");
                t.remove("c");
            }
            table.insert(item.clone(), t);
        }
        assert_eq!(select_traits(&table, &items), vec!["a", "d", "e", "f", "b", "c"]);
    }

    #[test]
    fn word2vec_header_is_skipped() {
        let text = "2 3\nfoo 1 2 3\nbar 4 5 6\n";
        let s = WordVectorStore::parse(text.as_bytes(), 3, "mem").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get("Foo").unwrap(), &[1.0, 2.0, 3.0]);
        assert!(WordVectorStore::parse("foo 1 2\n".as_bytes(), 3, "mem").is_err());
    }

    #[test]
    fn traits_csv_skips_empty_values() {
        let csv = "token_id,trait_name,value\n1,Fur,gold\n1,Hat,\n2,Fur,\"dark brown\"\n";
        let t = parse_traits(csv.as_bytes(), "mem").unwrap();
        assert_eq!(t["1"].len(), 1);
        assert_eq!(t["2"]["Fur"], "dark brown");
    }
}
