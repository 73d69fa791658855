//! Temporal motif enumeration over the entity-transaction graph.
//!
//! A branch is an entity -> transaction -> entity sub-path. A 1-motif is a
//! single branch. A 2-motif is a pair of branches glued at a middle entity,
//! subject to three constraints:
//!
//! * continuity: the first branch ends at the entity the second starts from,
//! * strict temporal order: the first transaction's timestamp is strictly
//!   below the second's (equal timestamps never form a motif),
//! * address chaining: at least one output address of the first transaction
//!   is an input address of the second.
//!
//! A branch whose endpoints are the same entity is a Direct Loop, otherwise
//! a Direct Distinct. Edges with zero aggregate value do not form branches.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use log::warn;

use crate::clustering::EntityId;
use crate::graph::{EntityEdge, EntityTransactionGraph};
use crate::ingest::Fee;

/// Entity -> transaction -> entity sub-path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branch {
    pub e_in: EntityId,
    /// Index into the graph's transaction array (time-ordered).
    pub tx: u32,
    pub e_out: EntityId,
    /// Satoshis `e_in` contributed to the transaction.
    pub value_in: u64,
    /// Satoshis `e_out` received from the transaction.
    pub value_out: u64,
    /// Distinct `e_in` addresses on the input side.
    pub addr_in_count: u32,
    /// Distinct `e_out` addresses on the output side.
    pub addr_out_count: u32,
    pub fee: Fee,
    pub is_direct_loop: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    DirectLoop,
    DirectDistinct,
}

/// Direct Loop iff the branch starts and ends at the same entity.
pub fn classify_branch(branch: &Branch) -> BranchKind {
    if branch.e_in == branch.e_out {
        BranchKind::DirectLoop
    } else {
        BranchKind::DirectDistinct
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Motif1Record {
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Motif2Record {
    pub first: Branch,
    pub second: Branch,
    /// True iff the path starts and ends at the same entity.
    pub whole_is_loop: bool,
}

/// Enumeration options. The per-entity cap bounds the quadratic blow-up a
/// hub entity can cause in 2-motif enumeration; hitting it logs a warning,
/// truncation is never silent.
#[derive(Debug, Clone, Default)]
pub struct ExtractOptions {
    pub max_pairs_per_middle_entity: Option<usize>,
}

fn branch(g: &EntityTransactionGraph, tx: u32, e_in: &EntityEdge, e_out: &EntityEdge) -> Branch {
    Branch {
        e_in: e_in.entity,
        tx,
        e_out: e_out.entity,
        value_in: e_in.value,
        value_out: e_out.value,
        addr_in_count: e_in.addresses.len() as u32,
        addr_out_count: e_out.addresses.len() as u32,
        fee: g.tx(tx as usize).fee,
        is_direct_loop: e_in.entity == e_out.entity,
    }
}

/// Enumerate all 1-motifs: one record per (incoming edge, outgoing edge)
/// pair of every transaction, Direct Loops included. The stream is ordered
/// by `(timestamp, tx_id, e_in, e_out)`.
pub fn extract_1motifs(
    g: &EntityTransactionGraph,
) -> impl Iterator<Item = Motif1Record> + '_ {
    (0..g.n_txs() as u32).flat_map(move |tx| {
        g.input_edges(tx as usize)
            .iter()
            .filter(|e| e.value > 0)
            .flat_map(move |e_in| {
                g.output_edges(tx as usize)
                    .iter()
                    .filter(|e| e.value > 0)
                    .map(move |e_out| Motif1Record { branch: branch(g, tx, e_in, e_out) })
            })
    })
}

fn positive_entities(edges: &[EntityEdge]) -> impl Iterator<Item = &EntityEdge> {
    edges.iter().filter(|e| e.value > 0)
}

/// Enumerate all 2-motifs.
///
/// Candidate transaction pairs come from an address index (an address that
/// is an output of one transaction and an input of a strictly later one),
/// so only chained pairs are ever inspected. Records are ordered by
/// `(first tx, second tx, first e_in, middle, second e_out)`.
pub fn extract_2motifs(
    g: &EntityTransactionGraph,
    options: &ExtractOptions,
) -> Vec<Motif2Record> {
    // address id -> transactions using it on each side
    let mut out_txs: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut in_txs: HashMap<u32, Vec<u32>> = HashMap::new();
    for tx in 0..g.n_txs() as u32 {
        for edge in g.output_edges(tx as usize) {
            for &a in &edge.addresses {
                out_txs.entry(a).or_default().push(tx);
            }
        }
        for edge in g.input_edges(tx as usize) {
            for &a in &edge.addresses {
                in_txs.entry(a).or_default().push(tx);
            }
        }
    }

    // chained pairs with strict temporal order; timestamps equal -> no motif
    let mut pairs: HashSet<(u32, u32)> = HashSet::new();
    for (addr, firsts) in &out_txs {
        let Some(seconds) = in_txs.get(addr) else { continue };
        for &t1 in firsts {
            for &t2 in seconds {
                if g.tx(t1 as usize).timestamp < g.tx(t2 as usize).timestamp {
                    pairs.insert((t1, t2));
                }
            }
        }
    }
    let mut pairs: Vec<(u32, u32)> = pairs.into_iter().collect();
    // transaction indices are already (timestamp, tx_id)-ordered
    pairs.sort_unstable();

    let mut per_middle: HashMap<EntityId, usize> = HashMap::new();
    let mut warned: HashSet<EntityId> = HashSet::new();
    let mut records = Vec::new();
    for (t1, t2) in pairs {
        let out1 = g.output_edges(t1 as usize);
        let in2 = g.input_edges(t2 as usize);
        for e_a in positive_entities(g.input_edges(t1 as usize)) {
            // walk the two sorted edge lists for middle entities
            let (mut i, mut j) = (0, 0);
            while i < out1.len() && j < in2.len() {
                match out1[i].entity.cmp(&in2[j].entity) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        if out1[i].value > 0 && in2[j].value > 0 {
                            let middle = out1[i].entity;
                            for e_c in positive_entities(g.output_edges(t2 as usize)) {
                                if let Some(cap) = options.max_pairs_per_middle_entity {
                                    let count = per_middle.entry(middle).or_insert(0);
                                    if *count >= cap {
                                        if warned.insert(middle) {
                                            warn!(
                                                "2-motif cap of {cap} reached for entity {middle}; \
                                                 further records through it are dropped"
                                            );
                                        }
                                        continue;
                                    }
                                    *count += 1;
                                }
                                let first = branch(g, t1, e_a, &out1[i]);
                                let second = branch(g, t2, &in2[j], e_c);
                                let whole_is_loop = first.e_in == second.e_out;
                                records.push(Motif2Record { first, second, whole_is_loop });
                            }
                        }
                        i += 1;
                        j += 1;
                    }
                }
            }
        }
    }
    records
}

/// Audit dump of 1-motif records, one CSV row per record.
pub fn write_motif1_csv(
    g: &EntityTransactionGraph,
    records: impl IntoIterator<Item = Motif1Record>,
    w: impl Write,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "e_in", "tx_id", "e_out", "value_in", "value_out", "addr_in_count", "addr_out_count",
        "fee", "is_direct_loop",
    ])?;
    for r in records {
        let b = &r.branch;
        wtr.write_record([
            b.e_in.0.to_string().as_str(),
            g.tx(b.tx as usize).tx_id.as_str(),
            &b.e_out.0.to_string(),
            &b.value_in.to_string(),
            &b.value_out.to_string(),
            &b.addr_in_count.to_string(),
            &b.addr_out_count.to_string(),
            &b.fee.0.to_string(),
            if b.is_direct_loop { "1" } else { "0" },
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Audit dump of 2-motif records, one CSV row per record.
pub fn write_motif2_csv(
    g: &EntityTransactionGraph,
    records: &[Motif2Record],
    w: impl Write,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "e_in", "tx1_id", "e_mid", "tx2_id", "e_out", "value_in_first", "value_out_first",
        "value_in_second", "value_out_second", "fee_first", "fee_second", "is_loop_first",
        "is_loop_second", "whole_is_loop",
    ])?;
    for r in records {
        wtr.write_record([
            r.first.e_in.0.to_string().as_str(),
            g.tx(r.first.tx as usize).tx_id.as_str(),
            &r.first.e_out.0.to_string(),
            g.tx(r.second.tx as usize).tx_id.as_str(),
            &r.second.e_out.0.to_string(),
            &r.first.value_in.to_string(),
            &r.first.value_out.to_string(),
            &r.second.value_in.to_string(),
            &r.second.value_out.to_string(),
            &r.first.fee.0.to_string(),
            &r.second.fee.0.to_string(),
            if r.first.is_direct_loop { "1" } else { "0" },
            if r.second.is_direct_loop { "1" } else { "0" },
            if r.whole_is_loop { "1" } else { "0" },
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
