//! Address-transaction and entity-transaction bipartite graphs.
//!
//! Both graphs share the same shape: transaction vertices carry a timestamp
//! and fee, and directed valued edges run from the sending side into the
//! transaction (incoming) and from the transaction out to the receiving side
//! (outgoing). Entity edges additionally record which of the entity's
//! addresses took part, because per-branch distinct-address counts are
//! motif features. Transactions keep the `(timestamp, tx_id)` order
//! established at ingestion, so a transaction index is also a time index.

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

use crate::clustering::{AddressClustering, EntityId};
use crate::ingest::{compute_fee, Fee, RawTransaction};

/// Interned address identifier, local to one graph.
pub type AddrId = u32;

/// A transaction vertex.
#[derive(Debug, Clone)]
pub struct TxVertex {
    pub tx_id: String,
    pub timestamp: i64,
    pub fee: Fee,
    pub is_coinbase: bool,
}

/// One directed edge between an address and a transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddrEdge {
    pub address: AddrId,
    pub value: u64,
}

/// One directed edge between an entity and a transaction, with the entity
/// addresses that appeared on that side of the transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityEdge {
    pub entity: EntityId,
    pub value: u64,
    /// Sorted, distinct address ids of the owning entity used on this side.
    pub addresses: Vec<AddrId>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("address {address:?} is missing from the clustering")]
    UnknownAddress { address: String },
    #[error("transaction {tx_id:?} violates value conservation: in {inflow} out {outflow} fee {fee}")]
    ConservationViolated { tx_id: String, inflow: u64, outflow: u64, fee: u64 },
}

/// Bipartite graph between addresses and transactions.
#[derive(Debug, Clone)]
pub struct AddressTransactionGraph {
    addresses: Vec<String>,
    index: HashMap<String, AddrId>,
    txs: Vec<TxVertex>,
    /// per transaction: edges address -> tx (senders), sorted by address id
    inputs: Vec<Vec<AddrEdge>>,
    /// per transaction: edges tx -> address (receivers), sorted by address id
    outputs: Vec<Vec<AddrEdge>>,
}

impl AddressTransactionGraph {
    pub fn n_addresses(&self) -> usize {
        self.addresses.len()
    }

    pub fn n_txs(&self) -> usize {
        self.txs.len()
    }

    pub fn address(&self, id: AddrId) -> &str {
        &self.addresses[id as usize]
    }

    pub fn address_id(&self, address: &str) -> Option<AddrId> {
        self.index.get(address).copied()
    }

    pub fn tx(&self, idx: usize) -> &TxVertex {
        &self.txs[idx]
    }

    pub fn txs(&self) -> &[TxVertex] {
        &self.txs
    }

    pub fn input_edges(&self, tx: usize) -> &[AddrEdge] {
        &self.inputs[tx]
    }

    pub fn output_edges(&self, tx: usize) -> &[AddrEdge] {
        &self.outputs[tx]
    }

    pub fn n_edges(&self) -> usize {
        self.inputs.iter().map(Vec::len).sum::<usize>()
            + self.outputs.iter().map(Vec::len).sum::<usize>()
    }
}

fn aggregate_addr_edges(
    entries: &[crate::ingest::TxEntry],
    intern: &mut impl FnMut(&str) -> AddrId,
) -> Vec<AddrEdge> {
    let mut by_addr: HashMap<AddrId, u64> = HashMap::new();
    for e in entries {
        *by_addr.entry(intern(&e.address)).or_insert(0) += e.value;
    }
    let mut edges: Vec<AddrEdge> =
        by_addr.into_iter().map(|(address, value)| AddrEdge { address, value }).collect();
    edges.sort_unstable_by_key(|e| e.address);
    edges
}

/// Build the address-transaction graph: one vertex per distinct address,
/// one edge per `(address, tx, direction)` with values aggregated when an
/// address appears several times on one side.
pub fn build_address_graph(txs: &[RawTransaction]) -> AddressTransactionGraph {
    let mut addresses: Vec<String> = Vec::new();
    let mut index: HashMap<String, AddrId> = HashMap::new();
    let mut vertices = Vec::with_capacity(txs.len());
    let mut inputs = Vec::with_capacity(txs.len());
    let mut outputs = Vec::with_capacity(txs.len());
    for tx in txs {
        let mut intern = |addr: &str| -> AddrId {
            if let Some(&id) = index.get(addr) {
                id
            } else {
                let id = addresses.len() as AddrId;
                addresses.push(addr.to_string());
                index.insert(addr.to_string(), id);
                id
            }
        };
        inputs.push(aggregate_addr_edges(&tx.inputs, &mut intern));
        outputs.push(aggregate_addr_edges(&tx.outputs, &mut intern));
        vertices.push(TxVertex {
            tx_id: tx.tx_id.clone(),
            timestamp: tx.timestamp,
            fee: compute_fee(tx),
            is_coinbase: tx.is_coinbase(),
        });
    }
    AddressTransactionGraph { addresses, index, txs: vertices, inputs, outputs }
}

/// Bipartite graph between entities and transactions.
#[derive(Debug, Clone)]
pub struct EntityTransactionGraph {
    addresses: Vec<String>,
    txs: Vec<TxVertex>,
    inputs: Vec<Vec<EntityEdge>>,
    outputs: Vec<Vec<EntityEdge>>,
    n_entities: usize,
    /// per entity: transactions where it appears on the input side
    sender_txs: Vec<Vec<u32>>,
    /// per entity: transactions where it appears on the output side
    receiver_txs: Vec<Vec<u32>>,
}

impl EntityTransactionGraph {
    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_txs(&self) -> usize {
        self.txs.len()
    }

    pub fn address(&self, id: AddrId) -> &str {
        &self.addresses[id as usize]
    }

    pub fn tx(&self, idx: usize) -> &TxVertex {
        &self.txs[idx]
    }

    pub fn txs(&self) -> &[TxVertex] {
        &self.txs
    }

    /// Edges entity -> tx (the entities funding this transaction).
    pub fn input_edges(&self, tx: usize) -> &[EntityEdge] {
        &self.inputs[tx]
    }

    /// Edges tx -> entity (the entities paid by this transaction).
    pub fn output_edges(&self, tx: usize) -> &[EntityEdge] {
        &self.outputs[tx]
    }

    pub fn sender_txs(&self, entity: EntityId) -> &[u32] {
        &self.sender_txs[entity.index()]
    }

    pub fn receiver_txs(&self, entity: EntityId) -> &[u32] {
        &self.receiver_txs[entity.index()]
    }

    pub fn n_edges(&self) -> usize {
        self.inputs.iter().map(Vec::len).sum::<usize>()
            + self.outputs.iter().map(Vec::len).sum::<usize>()
    }

    /// Check conservation and address-ownership invariants. Used by tests
    /// and available for audits; construction already guarantees both.
    pub fn validate(&self, clustering: &AddressClustering) -> Result<(), GraphError> {
        for (idx, tx) in self.txs.iter().enumerate() {
            if tx.is_coinbase {
                continue;
            }
            let inflow: u64 = self.inputs[idx].iter().map(|e| e.value).sum();
            let outflow: u64 = self.outputs[idx].iter().map(|e| e.value).sum();
            if inflow != outflow + tx.fee.0 {
                return Err(GraphError::ConservationViolated {
                    tx_id: tx.tx_id.clone(),
                    inflow,
                    outflow,
                    fee: tx.fee.0,
                });
            }
            for edge in self.inputs[idx].iter().chain(self.outputs[idx].iter()) {
                for &addr in &edge.addresses {
                    let owner = clustering.entity_of(self.address(addr));
                    if owner != Some(edge.entity) {
                        return Err(GraphError::UnknownAddress {
                            address: self.address(addr).to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Debug dump: one CSV row per edge.
    pub fn write_edges_csv(&self, w: impl Write) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["tx_id", "direction", "entity_id", "value", "n_addresses"])?;
        for (idx, tx) in self.txs.iter().enumerate() {
            for e in &self.inputs[idx] {
                wtr.write_record([
                    tx.tx_id.as_str(),
                    "in",
                    &e.entity.0.to_string(),
                    &e.value.to_string(),
                    &e.addresses.len().to_string(),
                ])?;
            }
            for e in &self.outputs[idx] {
                wtr.write_record([
                    tx.tx_id.as_str(),
                    "out",
                    &e.entity.0.to_string(),
                    &e.value.to_string(),
                    &e.addresses.len().to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn collapse_by_entity(
    entries: &[crate::ingest::TxEntry],
    clustering: &AddressClustering,
    intern: &mut impl FnMut(&str) -> AddrId,
) -> Result<Vec<EntityEdge>, GraphError> {
    let mut by_entity: HashMap<EntityId, (u64, Vec<AddrId>)> = HashMap::new();
    for e in entries {
        let entity = clustering
            .entity_of(&e.address)
            .ok_or_else(|| GraphError::UnknownAddress { address: e.address.clone() })?;
        let slot = by_entity.entry(entity).or_default();
        slot.0 += e.value;
        slot.1.push(intern(&e.address));
    }
    let mut edges: Vec<EntityEdge> = by_entity
        .into_iter()
        .map(|(entity, (value, mut addresses))| {
            addresses.sort_unstable();
            addresses.dedup();
            EntityEdge { entity, value, addresses }
        })
        .collect();
    edges.sort_unstable_by_key(|e| e.entity);
    Ok(edges)
}

/// Collapse the address graph by entity: values summed, address sets unioned.
/// Self-transfers keep both their incoming and outgoing edges.
pub fn build_entity_graph(
    txs: &[RawTransaction],
    clustering: &AddressClustering,
) -> Result<EntityTransactionGraph, GraphError> {
    let n_entities = clustering.n_entities();
    let mut addresses: Vec<String> = Vec::new();
    let mut index: HashMap<String, AddrId> = HashMap::new();
    let mut vertices = Vec::with_capacity(txs.len());
    let mut inputs = Vec::with_capacity(txs.len());
    let mut outputs = Vec::with_capacity(txs.len());
    let mut sender_txs = vec![Vec::new(); n_entities];
    let mut receiver_txs = vec![Vec::new(); n_entities];
    for (idx, tx) in txs.iter().enumerate() {
        let mut intern = |addr: &str| -> AddrId {
            if let Some(&id) = index.get(addr) {
                id
            } else {
                let id = addresses.len() as AddrId;
                addresses.push(addr.to_string());
                index.insert(addr.to_string(), id);
                id
            }
        };
        let in_edges = collapse_by_entity(&tx.inputs, clustering, &mut intern)?;
        let out_edges = collapse_by_entity(&tx.outputs, clustering, &mut intern)?;
        for e in &in_edges {
            sender_txs[e.entity.index()].push(idx as u32);
        }
        for e in &out_edges {
            receiver_txs[e.entity.index()].push(idx as u32);
        }
        inputs.push(in_edges);
        outputs.push(out_edges);
        vertices.push(TxVertex {
            tx_id: tx.tx_id.clone(),
            timestamp: tx.timestamp,
            fee: compute_fee(tx),
            is_coinbase: tx.is_coinbase(),
        });
    }
    Ok(EntityTransactionGraph {
        addresses,
        txs: vertices,
        inputs,
        outputs,
        n_entities,
        sender_txs,
        receiver_txs,
    })
}
