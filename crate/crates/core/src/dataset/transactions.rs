use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::{DatasetError, Result};

/// Users with fewer purchases than this are dropped.
pub const MIN_USER_INTERACTIONS: usize = 5;

const COLUMNS: [&str; 7] = ["collection", "token_id", "buyer", "seller", "price", "currency", "timestamp"];

/// One sale event.
#[derive(Clone, Debug, PartialEq)]
pub struct TransactionRecord {
    pub collection: String,
    pub token_id: String,
    pub buyer: String,
    pub seller: String,
    pub price: f64,
    pub currency: String,
    /// Unix seconds.
    pub timestamp: i64,
}

/// Prices quoted in anything but ETH or WETH are valued at zero.
pub fn price_in_eth(price: f64, currency: &str) -> f64 {
    let c = currency.trim();
    if c.eq_ignore_ascii_case("ETH") || c.eq_ignore_ascii_case("WETH") {
        price
    } else {
        0.0
    }
}

impl TransactionRecord {
    pub fn price_eth(&self) -> f64 {
        price_in_eth(self.price, &self.currency)
    }
}

/// Chronologically ordered sale events of one collection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransactionLog {
    records: Vec<TransactionRecord>,
}

impl TransactionLog {
    /// Sorts by timestamp; events sharing a timestamp keep their input order.
    pub fn new(mut records: Vec<TransactionRecord>) -> Self {
        records.sort_by_key(|r| r.timestamp);
        TransactionLog { records }
    }

    pub fn records(&self) -> &[TransactionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tokens(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.token_id.as_str()).collect()
    }

    pub fn buyers(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.buyer.as_str()).collect()
    }

    /// Latest timestamp in the log, or 0 when empty.
    pub fn end_timestamp(&self) -> i64 {
        self.records.last().map_or(0, |r| r.timestamp)
    }

    /// Events grouped per token, each group in chronological order.
    pub fn by_token(&self) -> BTreeMap<&str, Vec<&TransactionRecord>> {
        let mut groups: BTreeMap<&str, Vec<&TransactionRecord>> = BTreeMap::new();
        for r in &self.records {
            groups.entry(r.token_id.as_str()).or_default().push(r);
        }
        groups
    }
}

pub fn load_transactions(path: &Path, collection: &str) -> Result<TransactionLog> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_transactions(file, collection)
}

/// Parses the transaction CSV, keeping rows of `collection` only.
///
/// An empty `collection` keeps every row.
pub fn parse_transactions<R: Read>(reader: R, collection: &str) -> Result<TransactionLog> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let mut position = [0usize; COLUMNS.len()];
    for (slot, name) in position.iter_mut().zip(COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| DatasetError::Parse {
            line: 1,
            column: name.to_string(),
            message: "missing header column".into(),
        })?;
    }

    let mut records = Vec::new();
    let mut rows = 0usize;
    for row in csv.records() {
        let row = row?;
        rows += 1;
        let line = row.position().map_or(0, |p| p.line());
        let field = |k: usize| -> Result<&str> {
            match row.get(position[k]) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(DatasetError::Parse {
                    line,
                    column: COLUMNS[k].to_string(),
                    message: "missing value".into(),
                }),
            }
        };
        let coll = field(0)?;
        if !collection.is_empty() && coll != collection {
            continue;
        }
        let price: f64 = field(4)?.parse().map_err(|_| DatasetError::Parse {
            line,
            column: "price".into(),
            message: format!("not a number: {:?}", row.get(position[4]).unwrap_or_default()),
        })?;
        let timestamp: i64 = field(6)?.parse().map_err(|_| DatasetError::Parse {
            line,
            column: "timestamp".into(),
            message: format!("not an integer: {:?}", row.get(position[6]).unwrap_or_default()),
        })?;
        let record = TransactionRecord {
            collection: coll.to_string(),
            token_id: field(1)?.to_string(),
            buyer: field(2)?.to_string(),
            seller: field(3)?.to_string(),
            price,
            currency: field(5)?.to_string(),
            timestamp,
        };
        if !(record.price.is_finite() && record.price >= 0.0) {
            return Err(DatasetError::InvalidRecord {
                line,
                message: format!("price must be nonnegative, got {}", record.price),
            });
        }
        if record.timestamp <= 0 {
            return Err(DatasetError::InvalidRecord {
                line,
                message: format!("timestamp must be positive, got {}", record.timestamp),
            });
        }
        if record.buyer == record.seller {
            return Err(DatasetError::InvalidRecord {
                line,
                message: format!("buyer and seller are both {}", record.buyer),
            });
        }
        records.push(record);
    }
    if rows == 0 {
        return Err(DatasetError::Empty("transaction file has no rows".into()));
    }
    if records.is_empty() {
        return Err(DatasetError::Empty(format!("no transactions for collection {collection:?}")));
    }
    Ok(TransactionLog::new(records))
}

/// Keeps only events of tokens that have every item feature available.
pub fn drop_incomplete_items(log: &TransactionLog, complete: &BTreeSet<String>) -> TransactionLog {
    TransactionLog {
        records: log
            .records
            .iter()
            .filter(|r| complete.contains(&r.token_id))
            .cloned()
            .collect(),
    }
}

/// Drops buyers with fewer than `min_interactions` purchases.
///
/// When `complete_items` is given, events of tokens outside that set are
/// removed before counting. The threshold is applied once; the result is
/// not iterated to a fixpoint.
pub fn filter_users(
    log: &TransactionLog,
    min_interactions: usize,
    complete_items: Option<&BTreeSet<String>>,
) -> Result<TransactionLog> {
    if min_interactions == 0 {
        return Err(DatasetError::Empty("min_interactions must be at least 1".into()));
    }
    let base = match complete_items {
        Some(set) => drop_incomplete_items(log, set),
        None => log.clone(),
    };
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &base.records {
        *counts.entry(r.buyer.as_str()).or_default() += 1;
    }
    let kept: BTreeSet<&str> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_interactions)
        .map(|(b, _)| b)
        .collect();
    if kept.is_empty() {
        return Err(DatasetError::NoUsers(min_interactions));
    }
    let records = base
        .records
        .iter()
        .filter(|r| kept.contains(r.buyer.as_str()))
        .cloned()
        .collect();
    Ok(TransactionLog { records })
}

/// Identifies one purchase event.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventKey {
    pub token_id: String,
    pub buyer: String,
    pub timestamp: i64,
}

impl EventKey {
    pub fn of(r: &TransactionRecord) -> Self {
        EventKey {
            token_id: r.token_id.clone(),
            buyer: r.buyer.clone(),
            timestamp: r.timestamp,
        }
    }
}

pub type PriceLabels = BTreeMap<EventKey, u8>;

/// Labels each sale 1 when the token's next sale is strictly more
/// expensive (in ETH terms) and 0 otherwise, including the last sale.
pub fn compute_price_labels(log: &TransactionLog) -> PriceLabels {
    let mut labels = PriceLabels::new();
    for events in log.by_token().values() {
        for (k, ev) in events.iter().enumerate() {
            let up = events
                .get(k + 1)
                .is_some_and(|next| next.price_eth() > ev.price_eth());
            labels.insert(EventKey::of(ev), u8::from(up));
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sale(token: &str, buyer: &str, seller: &str, price: f64, ts: i64) -> TransactionRecord {
        TransactionRecord {
            collection: "C".into(),
            token_id: token.into(),
            buyer: buyer.into(),
            seller: seller.into(),
            price,
            currency: "ETH".into(),
            timestamp: ts,
        }
    }

    #[test]
    fn parses_and_sorts_three_rows() {
        let csv = "collection,token_id,buyer,seller,price,currency,timestamp\n\
                   C,1,a,b,1.5,ETH,300\n\
                   C,2,b,c,2.0,WETH,100\n\
                   C,\"3\",c,a,0.5,USDC,200\n";
        let log = parse_transactions(csv.as_bytes(), "C").unwrap();
        let ts: Vec<i64> = log.records().iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![100, 200, 300]);
        assert_eq!(log.records()[1].price_eth(), 0.0);
    }

    #[test]
    fn negative_price_names_the_row() {
        let csv = "collection,token_id,buyer,seller,price,currency,timestamp\n\
                   C,1,a,b,1.5,ETH,300\n\
                   C,2,b,c,-2.0,ETH,100\n";
        let err = parse_transactions(csv.as_bytes(), "C").unwrap_err();
        assert!(matches!(err, DatasetError::InvalidRecord { line: 3, .. }), "{err}");
    }

    #[test]
    fn missing_field_reports_line_and_column() {
        let csv = "collection,token_id,buyer,seller,price,currency,timestamp\nC,1,,b,1.5,ETH,300\n";
        match parse_transactions(csv.as_bytes(), "C").unwrap_err() {
            DatasetError::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, "buyer");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let csv = "collection,token_id,buyer,seller,price,currency,timestamp\n";
        assert!(matches!(parse_transactions(csv.as_bytes(), "C"), Err(DatasetError::Empty(_))));
    }

    #[test]
    fn other_collections_are_skipped() {
        let csv = "collection,token_id,buyer,seller,price,currency,timestamp\n\
                   C,1,a,b,1.5,ETH,300\nD,2,b,c,2.0,ETH,100\n";
        assert_eq!(parse_transactions(csv.as_bytes(), "C").unwrap().len(), 1);
        assert_eq!(parse_transactions(csv.as_bytes(), "").unwrap().len(), 2);
    }

    #[test]
    fn threshold_keeps_five_and_drops_four() {
        let mut records = Vec::new();
        for k in 0..5 {
            records.push(sale(&format!("t{k}"), "five", "s", 1.0, 10 + k));
        }
        for k in 0..4 {
            records.push(sale(&format!("t{k}"), "four", "s", 1.0, 100 + k));
        }
        let log = TransactionLog::new(records);
        let kept = filter_users(&log, MIN_USER_INTERACTIONS, None).unwrap();
        assert_eq!(kept.buyers().into_iter().collect::<Vec<_>>(), vec!["five"]);
    }

    #[test]
    fn buyers_with_counts_one_to_ten_leave_six() {
        let mut records = Vec::new();
        let mut ts = 1;
        for b in 1..=10 {
            for k in 0..b {
                records.push(sale(&format!("t{k}"), &format!("u{b}"), "s", 1.0, ts));
                ts += 1;
            }
        }
        let kept = filter_users(&TransactionLog::new(records), 5, None).unwrap();
        assert_eq!(kept.buyers().len(), 6);
    }

    #[test]
    fn incomplete_items_are_dropped_before_counting() {
        let records: Vec<_> = (0..5).map(|k| sale(&format!("t{k}"), "u", "s", 1.0, k + 1)).collect();
        let log = TransactionLog::new(records);
        let complete: BTreeSet<String> = (0..4).map(|k| format!("t{k}")).collect();
        assert!(matches!(filter_users(&log, 5, Some(&complete)), Err(DatasetError::NoUsers(5))));
    }

    fn labels_for(prices: &[f64]) -> Vec<u8> {
        let records: Vec<_> = prices
            .iter()
            .enumerate()
            .map(|(k, &p)| sale("tok", &format!("b{k}"), &format!("s{k}"), p, 10 * (k as i64 + 1)))
            .collect();
        let log = TransactionLog::new(records);
        let labels = compute_price_labels(&log);
        log.records().iter().map(|r| labels[&EventKey::of(r)]).collect()
    }

    #[test]
    fn price_labels_follow_next_sale() {
        assert_eq!(labels_for(&[1.0, 1.5, 1.2]), vec![1, 0, 0]);
        assert_eq!(labels_for(&[3.0]), vec![0]);
        assert_eq!(labels_for(&[2.0, 2.0]), vec![0, 0]);
    }
}
