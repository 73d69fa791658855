//! Ledger and label-book ingestion.
//!
//! The ledger wire format is one JSON object per line:
//!
//! ```text
//! {"tx":"<id>","t":<seconds>,"in":[["<addr>",<sats>],...],"out":[["<addr>",<sats>],...]}
//! ```
//!
//! A coinbase transaction has `"in":[]`. Values are integer satoshis
//! throughout; nothing is converted to floating point until featurization.
//! Label books are CSV with the header `address,entity,class`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Satoshis per BTC; monetary features divide by this at featurization time.
pub const SATS_PER_BTC: u64 = 100_000_000;

/// Convert satoshis to BTC as a double. Only used when emitting features.
pub fn sats_to_btc(sats: u64) -> f64 {
    sats as f64 / SATS_PER_BTC as f64
}

/// The six entity behaviour classes.
///
/// The declaration order is the canonical class order used by confusion
/// matrices, enrichment blocks and serialized reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityClass {
    Exchange,
    Gambling,
    Marketplace,
    MiningPool,
    Mixer,
    Service,
}

/// Number of entity classes.
pub const N_CLASSES: usize = 6;

impl EntityClass {
    pub const ALL: [EntityClass; N_CLASSES] = [
        EntityClass::Exchange,
        EntityClass::Gambling,
        EntityClass::Marketplace,
        EntityClass::MiningPool,
        EntityClass::Mixer,
        EntityClass::Service,
    ];

    /// Index in the canonical class order.
    pub fn index(self) -> usize {
        match self {
            EntityClass::Exchange => 0,
            EntityClass::Gambling => 1,
            EntityClass::Marketplace => 2,
            EntityClass::MiningPool => 3,
            EntityClass::Mixer => 4,
            EntityClass::Service => 5,
        }
    }

    pub fn from_index(index: usize) -> Option<EntityClass> {
        EntityClass::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityClass::Exchange => "Exchange",
            EntityClass::Gambling => "Gambling",
            EntityClass::Marketplace => "Marketplace",
            EntityClass::MiningPool => "MiningPool",
            EntityClass::Mixer => "Mixer",
            EntityClass::Service => "Service",
        }
    }

    /// Strict parse: only the canonical names are accepted, no abbreviations.
    pub fn parse(s: &str) -> Option<EntityClass> {
        EntityClass::ALL.iter().copied().find(|c| c.name() == s)
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One input or output slot of a transaction: an address and a satoshi value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxEntry {
    pub address: String,
    pub value: u64,
}

impl TxEntry {
    pub fn new(address: impl Into<String>, value: u64) -> TxEntry {
        TxEntry { address: address.into(), value }
    }
}

/// One ledger entry. A transaction with no inputs is a coinbase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTransaction {
    pub tx_id: String,
    pub timestamp: i64,
    pub inputs: Vec<TxEntry>,
    pub outputs: Vec<TxEntry>,
}

impl RawTransaction {
    pub fn is_coinbase(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_total(&self) -> u64 {
        self.inputs.iter().map(|e| e.value).sum()
    }

    pub fn output_total(&self) -> u64 {
        self.outputs.iter().map(|e| e.value).sum()
    }
}

/// Non-negative transaction fee in satoshis. Zero for coinbase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fee(pub u64);

impl Fee {
    pub fn as_btc(self) -> f64 {
        sats_to_btc(self.0)
    }
}

/// Fee of a valid transaction: input total minus output total, zero for coinbase.
pub fn compute_fee(tx: &RawTransaction) -> Fee {
    if tx.is_coinbase() {
        Fee(0)
    } else {
        Fee(tx.input_total() - tx.output_total())
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("line {line}: negative value {value} for address {address:?}")]
    NegativeValue { line: usize, address: String, value: i64 },
    #[error("line {line}: duplicate transaction id {tx_id:?}")]
    DuplicateTxId { line: usize, tx_id: String },
    #[error("line {line}: transaction {tx_id:?} outputs exceed inputs")]
    NegativeFee { line: usize, tx_id: String },
    #[error("label book row {row}: unknown class {value:?}")]
    UnknownClass { row: usize, value: String },
    #[error("label book row {row}: duplicate address {address:?}")]
    DuplicateAddress { row: usize, address: String },
    #[error("label book: entity {entity:?} labelled both {first} and {second}")]
    ConflictingClass { entity: String, first: EntityClass, second: EntityClass },
    #[error("label book: expected header `address,entity,class`, found {found:?}")]
    BadLabelHeader { found: String },
    #[error("label book: {0}")]
    LabelCsv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serde mirror of the wire format. Values are read as i64 so a negative
/// value can be reported as `NegativeValue` rather than a generic parse error.
#[derive(Serialize, Deserialize)]
struct WireTx {
    tx: String,
    t: i64,
    #[serde(rename = "in")]
    inputs: Vec<(String, i64)>,
    #[serde(rename = "out")]
    outputs: Vec<(String, i64)>,
}

fn validate_entries(
    entries: Vec<(String, i64)>,
    line: usize,
) -> Result<Vec<TxEntry>, IngestError> {
    entries
        .into_iter()
        .map(|(address, value)| {
            if value < 0 {
                Err(IngestError::NegativeValue { line, address, value })
            } else {
                Ok(TxEntry { address, value: value as u64 })
            }
        })
        .collect()
}

/// Parse a line-delimited ledger stream.
///
/// The result is sorted ascending by `(timestamp, tx_id)`; ties on timestamp
/// are broken by the lexicographic transaction id, so the order is total and
/// identical across runs and platforms. Blank lines are skipped.
pub fn parse_ledger(reader: impl BufRead) -> Result<Vec<RawTransaction>, IngestError> {
    let mut txs: Vec<RawTransaction> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireTx = serde_json::from_str(&line).map_err(|e| {
            IngestError::MalformedRecord { line: line_no, msg: e.to_string() }
        })?;
        let tx = RawTransaction {
            tx_id: wire.tx,
            timestamp: wire.t,
            inputs: validate_entries(wire.inputs, line_no)?,
            outputs: validate_entries(wire.outputs, line_no)?,
        };
        if tx.outputs.is_empty() {
            return Err(IngestError::MalformedRecord {
                line: line_no,
                msg: format!("transaction {:?} has no outputs", tx.tx_id),
            });
        }
        if !tx.is_coinbase() && (tx.input_total() as i128) < (tx.output_total() as i128) {
            return Err(IngestError::NegativeFee { line: line_no, tx_id: tx.tx_id });
        }
        if !seen.insert(tx.tx_id.clone()) {
            return Err(IngestError::DuplicateTxId { line: line_no, tx_id: tx.tx_id });
        }
        txs.push(tx);
    }
    txs.sort_by(|a, b| (a.timestamp, &a.tx_id).cmp(&(b.timestamp, &b.tx_id)));
    Ok(txs)
}

/// Write transactions in the ledger wire format, one JSON object per line.
pub fn serialize_ledger(txs: &[RawTransaction], mut w: impl Write) -> std::io::Result<()> {
    for tx in txs {
        let wire = WireTx {
            tx: tx.tx_id.clone(),
            t: tx.timestamp,
            inputs: tx.inputs.iter().map(|e| (e.address.clone(), e.value as i64)).collect(),
            outputs: tx.outputs.iter().map(|e| (e.address.clone(), e.value as i64)).collect(),
        };
        serde_json::to_writer(&mut w, &wire)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Ground-truth label for one address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelEntry {
    pub entity_name: String,
    pub class: EntityClass,
}

/// Address to entity-name/class mapping loaded from a label book.
///
/// Every address maps to exactly one entity name, and every entity name
/// carries exactly one class across all of its addresses.
#[derive(Debug, Clone, Default)]
pub struct LabelBook {
    entries: BTreeMap<String, LabelEntry>,
    entity_class: BTreeMap<String, EntityClass>,
}

impl LabelBook {
    pub fn new() -> LabelBook {
        LabelBook::default()
    }

    pub fn get(&self, address: &str) -> Option<&LabelEntry> {
        self.entries.get(address)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LabelEntry)> {
        self.entries.iter().map(|(a, e)| (a.as_str(), e))
    }

    /// Insert one address label, enforcing both book invariants.
    pub fn insert(
        &mut self,
        address: String,
        entity_name: String,
        class: EntityClass,
        row: usize,
    ) -> Result<(), IngestError> {
        if self.entries.contains_key(&address) {
            return Err(IngestError::DuplicateAddress { row, address });
        }
        match self.entity_class.get(&entity_name) {
            Some(&existing) if existing != class => {
                return Err(IngestError::ConflictingClass {
                    entity: entity_name,
                    first: existing,
                    second: class,
                });
            }
            Some(_) => {}
            None => {
                self.entity_class.insert(entity_name.clone(), class);
            }
        }
        self.entries.insert(address, LabelEntry { entity_name, class });
        Ok(())
    }

    /// Write the book as `address,entity,class` CSV.
    pub fn write_csv(&self, w: impl Write) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["address", "entity", "class"])?;
        for (address, entry) in &self.entries {
            wtr.write_record([address.as_str(), &entry.entity_name, entry.class.name()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Load a label book from `address,entity,class` CSV.
pub fn load_labels(reader: impl std::io::Read) -> Result<LabelBook, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = rdr.headers()?;
        let found: Vec<&str> = headers.iter().collect();
        if found.is_empty() || found == [""] {
            // zero-byte stream: empty book
            return Ok(LabelBook::new());
        }
        if found != ["address", "entity", "class"] {
            return Err(IngestError::BadLabelHeader { found: found.join(",") });
        }
    }
    let mut book = LabelBook::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2; // header is row 1
        let record = record?;
        let address = record.get(0).unwrap_or("").to_string();
        let entity = record.get(1).unwrap_or("").to_string();
        let class_str = record.get(2).unwrap_or("");
        let class = EntityClass::parse(class_str).ok_or_else(|| IngestError::UnknownClass {
            row,
            value: class_str.to_string(),
        })?;
        book.insert(address, entity, class, row)?;
    }
    Ok(book)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(id: &str, t: i64, inputs: &[(&str, u64)], outputs: &[(&str, u64)]) -> RawTransaction {
        RawTransaction {
            tx_id: id.to_string(),
            timestamp: t,
            inputs: inputs.iter().map(|&(a, v)| TxEntry::new(a, v)).collect(),
            outputs: outputs.iter().map(|&(a, v)| TxEntry::new(a, v)).collect(),
        }
    }

    #[test]
    fn empty_stream_yields_empty_ledger() {
        let txs = parse_ledger(std::io::Cursor::new("")).unwrap();
        assert!(txs.is_empty());
    }

    #[test]
    fn coinbase_parses_with_zero_fee() {
        let line = r#"{"tx":"cb","t":10,"in":[],"out":[["miner",5000000000]]}"#;
        let txs = parse_ledger(std::io::Cursor::new(line)).unwrap();
        assert_eq!(txs.len(), 1);
        assert!(txs[0].is_coinbase());
        assert_eq!(compute_fee(&txs[0]), Fee(0));
    }

    #[test]
    fn ledger_is_sorted_by_timestamp_then_id() {
        let lines = concat!(
            r#"{"tx":"b","t":20,"in":[["x",10]],"out":[["y",9]]}"#, "\n",
            r#"{"tx":"a","t":20,"in":[["x",10]],"out":[["y",9]]}"#, "\n",
            r#"{"tx":"c","t":5,"in":[["x",10]],"out":[["y",9]]}"#, "\n",
        );
        let txs = parse_ledger(std::io::Cursor::new(lines)).unwrap();
        let ids: Vec<&str> = txs.iter().map(|t| t.tx_id.as_str()).collect();
        // hand-sorted: (5,"c") < (20,"a") < (20,"b")
        assert_eq!(ids, ["c", "a", "b"]);
        let mut expect: Vec<(i64, String)> =
            txs.iter().map(|t| (t.timestamp, t.tx_id.clone())).collect();
        expect.sort();
        let got: Vec<(i64, String)> =
            txs.iter().map(|t| (t.timestamp, t.tx_id.clone())).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn fee_is_input_minus_output() {
        assert_eq!(compute_fee(&tx("t", 0, &[("a", 100)], &[("b", 90)])), Fee(10));
        assert_eq!(compute_fee(&tx("t", 0, &[], &[("b", 5_000_000_000)])), Fee(0));
        assert_eq!(
            compute_fee(&tx("t", 0, &[("a", 60), ("b", 40)], &[("c", 30), ("d", 30), ("e", 30)])),
            Fee(10)
        );
    }

    #[test]
    fn negative_fee_is_rejected() {
        let line = r#"{"tx":"t","t":1,"in":[["a",5]],"out":[["b",9]]}"#;
        match parse_ledger(std::io::Cursor::new(line)) {
            Err(IngestError::NegativeFee { line: 1, tx_id }) => assert_eq!(tx_id, "t"),
            other => panic!("expected NegativeFee, got {other:?}"),
        }
    }

    #[test]
    fn negative_value_is_reported_with_line() {
        let lines = concat!(
            r#"{"tx":"ok","t":1,"in":[],"out":[["b",9]]}"#, "\n",
            r#"{"tx":"bad","t":2,"in":[["a",-5]],"out":[["b",1]]}"#, "\n",
        );
        match parse_ledger(std::io::Cursor::new(lines)) {
            Err(IngestError::NegativeValue { line: 2, value: -5, .. }) => {}
            other => panic!("expected NegativeValue, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_tx_id_is_rejected() {
        let lines = concat!(
            r#"{"tx":"t","t":1,"in":[],"out":[["b",9]]}"#, "\n",
            r#"{"tx":"t","t":2,"in":[],"out":[["b",1]]}"#, "\n",
        );
        assert!(matches!(
            parse_ledger(std::io::Cursor::new(lines)),
            Err(IngestError::DuplicateTxId { line: 2, .. })
        ));
    }

    #[test]
    fn missing_outputs_is_malformed() {
        let line = r#"{"tx":"t","t":1,"in":[["a",5]],"out":[]}"#;
        assert!(matches!(
            parse_ledger(std::io::Cursor::new(line)),
            Err(IngestError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn parsed_transactions_satisfy_fee_invariant() {
        let lines = concat!(
            r#"{"tx":"a","t":1,"in":[["x",100]],"out":[["y",90]]}"#, "\n",
            r#"{"tx":"b","t":2,"in":[],"out":[["m",50]]}"#, "\n",
        );
        for tx in parse_ledger(std::io::Cursor::new(lines)).unwrap() {
            let Fee(_) = compute_fee(&tx); // must not underflow
        }
    }

    #[test]
    fn empty_label_book_loads() {
        let book = load_labels(std::io::Cursor::new("address,entity,class\n")).unwrap();
        assert!(book.is_empty());
    }

    #[test]
    fn label_book_fixture_loads_two_rows() {
        let csv = "address,entity,class\na1,AcmeMix,Mixer\na2,AcmeMix,Mixer\n";
        let book = load_labels(std::io::Cursor::new(csv)).unwrap();
        assert_eq!(book.len(), 2);
        assert_eq!(book.get("a1").unwrap().entity_name, "AcmeMix");
        assert_eq!(book.get("a2").unwrap().class, EntityClass::Mixer);
    }

    #[test]
    fn conflicting_class_is_rejected() {
        let csv = "address,entity,class\na1,Acme,Mixer\na2,Acme,Exchange\n";
        assert!(matches!(
            load_labels(std::io::Cursor::new(csv)),
            Err(IngestError::ConflictingClass { .. })
        ));
    }

    #[test]
    fn duplicate_address_is_rejected() {
        let csv = "address,entity,class\na1,Acme,Mixer\na1,Acme,Mixer\n";
        assert!(matches!(
            load_labels(std::io::Cursor::new(csv)),
            Err(IngestError::DuplicateAddress { .. })
        ));
    }

    #[test]
    fn abbreviated_class_names_are_rejected() {
        let csv = "address,entity,class\na1,Acme,Mxr\n";
        assert!(matches!(
            load_labels(std::io::Cursor::new(csv)),
            Err(IngestError::UnknownClass { row: 2, .. })
        ));
    }

    #[test]
    fn class_order_is_stable() {
        for (i, class) in EntityClass::ALL.iter().enumerate() {
            assert_eq!(class.index(), i);
            assert_eq!(EntityClass::from_index(i), Some(*class));
            assert_eq!(EntityClass::parse(class.name()), Some(*class));
        }
    }
}
