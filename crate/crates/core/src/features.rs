//! Feature frames: tabular samples extracted from graphs and motif streams.
//!
//! Four frames feed the classifiers: entity, address, 1-motif and 2-motif.
//! Every row carries its owning entity and that entity's class label, so
//! first-level predictions can be grouped back per entity during enrichment.
//! Monetary features are BTC doubles (satoshis / 1e8, converted only here);
//! counts are integers widened to doubles; booleans are encoded 0/1.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{AddressClustering, EntityId, LabeledEntitySet};
use crate::graph::{AddressTransactionGraph, EntityTransactionGraph};
use crate::ingest::{sats_to_btc, EntityClass};
use crate::motifs::{Motif1Record, Motif2Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Numeric,
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

impl Feature {
    pub fn numeric(name: &str) -> Feature {
        Feature { name: name.to_string(), kind: FeatureKind::Numeric }
    }

    pub fn boolean(name: &str) -> Feature {
        Feature { name: name.to_string(), kind: FeatureKind::Boolean }
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("frame row {row}: {msg}")]
    Malformed { row: usize, msg: String },
    #[error("frame row {row}: unknown class {value:?}")]
    UnknownClass { row: usize, value: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Column-major table of numeric samples with per-row entity and label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    schema: Vec<Feature>,
    owners: Vec<EntityId>,
    labels: Vec<EntityClass>,
    columns: Vec<Vec<f64>>,
}

impl FeatureFrame {
    pub fn new(schema: Vec<Feature>) -> FeatureFrame {
        let columns = schema.iter().map(|_| Vec::new()).collect();
        FeatureFrame { schema, owners: Vec::new(), labels: Vec::new(), columns }
    }

    pub fn push_row(&mut self, owner: EntityId, label: EntityClass, values: &[f64]) {
        assert_eq!(values.len(), self.schema.len(), "row width must match schema");
        self.owners.push(owner);
        self.labels.push(label);
        for (col, &v) in self.columns.iter_mut().zip(values) {
            col.push(v);
        }
    }

    pub fn n_rows(&self) -> usize {
        self.owners.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[Feature] {
        &self.schema
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.schema.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }

    pub fn column(&self, feature: usize) -> &[f64] {
        &self.columns[feature]
    }

    /// All columns, column-major. Training code iterates these directly.
    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn owner(&self, row: usize) -> EntityId {
        self.owners[row]
    }

    pub fn label(&self, row: usize) -> EntityClass {
        self.labels[row]
    }

    pub fn owners(&self) -> &[EntityId] {
        &self.owners
    }

    pub fn labels(&self) -> &[EntityClass] {
        &self.labels
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn class_counts(&self) -> [usize; crate::ingest::N_CLASSES] {
        let mut counts = [0; crate::ingest::N_CLASSES];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        counts
    }

    /// Rows restricted to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> FeatureFrame {
        FeatureFrame {
            schema: self.schema.clone(),
            owners: rows.iter().map(|&r| self.owners[r]).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }

    /// Row indices sorted by `(owner, label, feature vector, index)`.
    ///
    /// Seeded shuffles and fold assignment work on this order instead of raw
    /// row positions, which makes every reported metric invariant under a
    /// permutation of the input rows.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_rows()).collect();
        order.sort_by(|&a, &b| {
            (self.owners[a], self.labels[a].index())
                .cmp(&(self.owners[b], self.labels[b].index()))
                .then_with(|| {
                    for col in &self.columns {
                        match col[a].total_cmp(&col[b]) {
                            std::cmp::Ordering::Equal => continue,
                            other => return other,
                        }
                    }
                    a.cmp(&b)
                })
        });
        order
    }

    /// New frame with extra columns appended to every row.
    pub fn with_columns(&self, extra: Vec<Feature>, columns: Vec<Vec<f64>>) -> FeatureFrame {
        assert_eq!(extra.len(), columns.len());
        for c in &columns {
            assert_eq!(c.len(), self.n_rows());
        }
        let mut schema = self.schema.clone();
        schema.extend(extra);
        let mut cols = self.columns.clone();
        cols.extend(columns);
        FeatureFrame { schema, owners: self.owners.clone(), labels: self.labels.clone(), columns: cols }
    }

    /// CSV with header `entity_id,label,<feature names...>`.
    ///
    /// Doubles print in shortest round-trip form (at most 17 significant
    /// digits), so reading the file back reproduces every value bit-exactly.
    pub fn write_csv(&self, w: impl Write) -> Result<(), FeatureError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["entity_id".to_string(), "label".to_string()];
        header.extend(self.schema.iter().map(|f| f.name.clone()));
        wtr.write_record(&header)?;
        for row in 0..self.n_rows() {
            let mut record = vec![self.owners[row].0.to_string(), self.labels[row].name().to_string()];
            record.extend(self.columns.iter().map(|c| format!("{}", c[row])));
            wtr.write_record(&record)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Read a frame written by [`FeatureFrame::write_csv`]. Feature kinds are
    /// not stored in the file; every column reads back as numeric.
    pub fn read_csv(r: impl std::io::Read) -> Result<FeatureFrame, FeatureError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().collect();
        if names.len() < 2 || names[0] != "entity_id" || names[1] != "label" {
            return Err(FeatureError::Malformed {
                row: 1,
                msg: "expected header starting with entity_id,label".into(),
            });
        }
        let schema: Vec<Feature> = names[2..].iter().map(|n| Feature::numeric(n)).collect();
        let mut frame = FeatureFrame::new(schema);
        for (idx, record) in rdr.records().enumerate() {
            let row = idx + 2;
            let record = record?;
            let parse_err = |msg: String| FeatureError::Malformed { row, msg };
            let owner: u32 = record
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|e| parse_err(format!("bad entity id: {e}")))?;
            let label_str = record.get(1).unwrap_or("");
            let label = EntityClass::parse(label_str).ok_or_else(|| FeatureError::UnknownClass {
                row,
                value: label_str.to_string(),
            })?;
            let mut values = Vec::with_capacity(frame.n_features());
            for i in 0..frame.n_features() {
                let field = record.get(i + 2).ok_or_else(|| parse_err("short row".into()))?;
                values.push(
                    field.parse::<f64>().map_err(|e| parse_err(format!("bad value: {e}")))?,
                );
            }
            frame.push_row(EntityId(owner), label, &values);
        }
        Ok(frame)
    }
}

pub fn entity_schema() -> Vec<Feature> {
    vec![
        Feature::numeric("btc_received"),
        Feature::numeric("btc_sent"),
        Feature::numeric("balance"),
        Feature::numeric("n_tx_receiver"),
        Feature::numeric("n_tx_sender"),
        Feature::numeric("n_addr_receiving"),
        Feature::numeric("n_addr_sending"),
    ]
}

/// One row per labeled entity: volumes, balance, transaction and address
/// counts on each side. Rows are ordered by entity id.
pub fn entity_features(g: &EntityTransactionGraph, labels: &LabeledEntitySet) -> FeatureFrame {
    let mut frame = FeatureFrame::new(entity_schema());
    for (entity, _, class) in labels.iter() {
        let mut received: u128 = 0;
        let mut sent: u128 = 0;
        let mut recv_addrs: Vec<u32> = Vec::new();
        let mut send_addrs: Vec<u32> = Vec::new();
        for &tx in g.receiver_txs(entity) {
            let edges = g.output_edges(tx as usize);
            let e = &edges[edges.binary_search_by_key(&entity, |e| e.entity).unwrap()];
            received += e.value as u128;
            recv_addrs.extend_from_slice(&e.addresses);
        }
        for &tx in g.sender_txs(entity) {
            let edges = g.input_edges(tx as usize);
            let e = &edges[edges.binary_search_by_key(&entity, |e| e.entity).unwrap()];
            sent += e.value as u128;
            send_addrs.extend_from_slice(&e.addresses);
        }
        recv_addrs.sort_unstable();
        recv_addrs.dedup();
        send_addrs.sort_unstable();
        send_addrs.dedup();
        let balance_sats = received as i128 - sent as i128;
        frame.push_row(
            entity,
            class,
            &[
                sats_to_btc(received as u64),
                sats_to_btc(sent as u64),
                balance_sats as f64 / crate::ingest::SATS_PER_BTC as f64,
                g.receiver_txs(entity).len() as f64,
                g.sender_txs(entity).len() as f64,
                recv_addrs.len() as f64,
                send_addrs.len() as f64,
            ],
        );
    }
    frame
}

pub fn address_schema() -> Vec<Feature> {
    vec![
        Feature::numeric("n_tx_receiver"),
        Feature::numeric("n_tx_sender"),
        Feature::numeric("btc_received"),
        Feature::numeric("btc_sent"),
        Feature::numeric("balance"),
        Feature::boolean("uniqueness"),
        Feature::numeric("siblings"),
    ]
}

/// One row per address owned by a labeled entity. `uniqueness` is 1 iff the
/// address appears in exactly one transaction on either side; `siblings` is
/// its cluster size minus one. Rows are ordered by (owner, address).
pub fn address_features(
    g: &AddressTransactionGraph,
    clustering: &AddressClustering,
    labels: &LabeledEntitySet,
) -> FeatureFrame {
    #[derive(Default, Clone)]
    struct Acc {
        n_recv: u32,
        n_sent: u32,
        received: u64,
        sent: u64,
        tx_seen: u32,
        last_tx: u32,
    }
    let mut acc = vec![Acc { last_tx: u32::MAX, ..Acc::default() }; g.n_addresses()];
    for tx in 0..g.n_txs() {
        for e in g.input_edges(tx) {
            let a = &mut acc[e.address as usize];
            a.n_sent += 1;
            a.sent += e.value;
            if a.last_tx != tx as u32 {
                a.last_tx = tx as u32;
                a.tx_seen += 1;
            }
        }
        for e in g.output_edges(tx) {
            let a = &mut acc[e.address as usize];
            a.n_recv += 1;
            a.received += e.value;
            if a.last_tx != tx as u32 {
                a.last_tx = tx as u32;
                a.tx_seen += 1;
            }
        }
    }

    let mut frame = FeatureFrame::new(address_schema());
    for (entity, _, class) in labels.iter() {
        let members = clustering.addresses(entity);
        let siblings = (members.len() - 1) as f64;
        for addr in members {
            let Some(id) = g.address_id(addr) else { continue };
            let a = &acc[id as usize];
            frame.push_row(
                entity,
                class,
                &[
                    a.n_recv as f64,
                    a.n_sent as f64,
                    sats_to_btc(a.received),
                    sats_to_btc(a.sent),
                    (a.received as i128 - a.sent as i128) as f64
                        / crate::ingest::SATS_PER_BTC as f64,
                    if a.tx_seen == 1 { 1.0 } else { 0.0 },
                    siblings,
                ],
            );
        }
    }
    frame
}

/// Multiplicity of transactions linking each ordered entity pair: the number
/// of distinct transactions that `from` funds and `to` receives from.
#[derive(Debug, Clone, Default)]
pub struct PairIndex {
    counts: HashMap<(EntityId, EntityId), u32>,
}

impl PairIndex {
    pub fn build(g: &EntityTransactionGraph) -> PairIndex {
        let mut counts: HashMap<(EntityId, EntityId), u32> = HashMap::new();
        for tx in 0..g.n_txs() {
            for e_in in g.input_edges(tx).iter().filter(|e| e.value > 0) {
                for e_out in g.output_edges(tx).iter().filter(|e| e.value > 0) {
                    *counts.entry((e_in.entity, e_out.entity)).or_insert(0) += 1;
                }
            }
        }
        PairIndex { counts }
    }

    pub fn multiplicity(&self, from: EntityId, to: EntityId) -> u32 {
        self.counts.get(&(from, to)).copied().unwrap_or(0)
    }
}

pub fn motif1_schema() -> Vec<Feature> {
    vec![
        Feature::numeric("amount_sent"),
        Feature::numeric("amount_received"),
        Feature::numeric("n_addr_sending"),
        Feature::numeric("n_addr_receiving"),
        Feature::numeric("n_similar_sent"),
        Feature::numeric("n_similar_received"),
        Feature::numeric("fee"),
        Feature::boolean("is_direct_loop"),
    ]
}

/// One row per 1-motif record whose spending entity is labeled. The row is
/// owned by the spender; similarity counts come from the whole-graph pair
/// index (`sent` for the branch pair, `received` for the reverse pair).
pub fn motif1_features(
    records: impl IntoIterator<Item = Motif1Record>,
    pairs: &PairIndex,
    labels: &LabeledEntitySet,
) -> FeatureFrame {
    let mut frame = FeatureFrame::new(motif1_schema());
    for r in records {
        let b = &r.branch;
        let Some(class) = labels.class_of(b.e_in) else { continue };
        frame.push_row(
            b.e_in,
            class,
            &[
                sats_to_btc(b.value_in),
                sats_to_btc(b.value_out),
                b.addr_in_count as f64,
                b.addr_out_count as f64,
                pairs.multiplicity(b.e_in, b.e_out) as f64,
                pairs.multiplicity(b.e_out, b.e_in) as f64,
                b.fee.as_btc(),
                if b.is_direct_loop { 1.0 } else { 0.0 },
            ],
        );
    }
    frame
}

pub fn motif2_schema() -> Vec<Feature> {
    vec![
        Feature::numeric("n_addr_in_first"),
        Feature::numeric("n_addr_out_first"),
        Feature::numeric("n_addr_in_second"),
        Feature::numeric("n_addr_out_second"),
        Feature::numeric("amount_sent_first"),
        Feature::numeric("amount_received_first"),
        Feature::numeric("amount_sent_second"),
        Feature::numeric("amount_received_second"),
        Feature::numeric("fee_first"),
        Feature::numeric("fee_second"),
        Feature::numeric("n_similar_sent_first"),
        Feature::numeric("n_similar_sent_second"),
        Feature::boolean("is_loop_first"),
        Feature::boolean("is_loop_second"),
        Feature::boolean("is_loop_whole"),
    ]
}

/// One row per 2-motif record whose first entity is labeled; the path's
/// first entity owns the row.
pub fn motif2_features(
    records: impl IntoIterator<Item = Motif2Record>,
    pairs: &PairIndex,
    labels: &LabeledEntitySet,
) -> FeatureFrame {
    let mut frame = FeatureFrame::new(motif2_schema());
    for r in records {
        let Some(class) = labels.class_of(r.first.e_in) else { continue };
        frame.push_row(
            r.first.e_in,
            class,
            &[
                r.first.addr_in_count as f64,
                r.first.addr_out_count as f64,
                r.second.addr_in_count as f64,
                r.second.addr_out_count as f64,
                sats_to_btc(r.first.value_in),
                sats_to_btc(r.first.value_out),
                sats_to_btc(r.second.value_in),
                sats_to_btc(r.second.value_out),
                r.first.fee.as_btc(),
                r.second.fee.as_btc(),
                pairs.multiplicity(r.first.e_in, r.first.e_out) as f64,
                pairs.multiplicity(r.second.e_in, r.second.e_out) as f64,
                if r.first.is_direct_loop { 1.0 } else { 0.0 },
                if r.second.is_direct_loop { 1.0 } else { 0.0 },
                if r.whole_is_loop { 1.0 } else { 0.0 },
            ],
        );
    }
    frame
}
