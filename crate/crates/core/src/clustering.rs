//! Common-input-ownership address clustering.
//!
//! Addresses spent together as inputs of one non-coinbase transaction are
//! assumed to share an owner. The transitive closure of that relation
//! partitions all observed addresses into entities. Only the multi-input
//! heuristic is applied; change-address detection is out of scope.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EntityClass, LabelBook, RawTransaction};

/// Dense identifier of one entity (a cluster of addresses).
///
/// Ids are assigned in ascending order of each cluster's smallest member
/// address, so they do not depend on ledger record order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error(
        "entity {entity} spans label-book entities of different classes: \
         {first_name:?} is {first_class}, {second_name:?} is {second_class}"
    )]
    InconsistentEntityLabel {
        entity: EntityId,
        first_name: String,
        first_class: EntityClass,
        second_name: String,
        second_class: EntityClass,
    },
}

struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> UnionFind {
        UnionFind { parent: (0..n as u32).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        // path compression
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (ra, rb) = if self.rank[ra as usize] < self.rank[rb as usize] {
            (rb, ra)
        } else {
            (ra, rb)
        };
        self.parent[rb as usize] = ra;
        if self.rank[ra as usize] == self.rank[rb as usize] {
            self.rank[ra as usize] += 1;
        }
    }
}

/// Partition of all observed addresses into entities.
#[derive(Debug, Clone)]
pub struct AddressClustering {
    /// entity id -> sorted member addresses
    entities: Vec<Vec<String>>,
    by_address: HashMap<String, EntityId>,
}

impl AddressClustering {
    /// Build a clustering from an explicit partition, e.g. one imported from
    /// an external labelling service instead of the co-spend heuristic.
    /// Clusters are re-ordered by smallest member address and ids reassigned.
    pub fn from_partition(clusters: Vec<Vec<String>>) -> AddressClustering {
        let mut entities: Vec<Vec<String>> = clusters
            .into_iter()
            .filter(|c| !c.is_empty())
            .map(|mut c| {
                c.sort_unstable();
                c.dedup();
                c
            })
            .collect();
        entities.sort_unstable_by(|a, b| a[0].cmp(&b[0]));
        let mut by_address = HashMap::new();
        for (i, addrs) in entities.iter().enumerate() {
            for addr in addrs {
                let previous = by_address.insert(addr.clone(), EntityId(i as u32));
                assert!(previous.is_none(), "address {addr:?} in two clusters");
            }
        }
        AddressClustering { entities, by_address }
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn entity_of(&self, address: &str) -> Option<EntityId> {
        self.by_address.get(address).copied()
    }

    /// Sorted member addresses of one entity.
    pub fn addresses(&self, entity: EntityId) -> &[String] {
        &self.entities[entity.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, &[String])> {
        self.entities
            .iter()
            .enumerate()
            .map(|(i, addrs)| (EntityId(i as u32), addrs.as_slice()))
    }

    /// Audit dump: `entity_id,address` CSV.
    pub fn write_csv(&self, w: impl Write) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["entity_id", "address"])?;
        for (id, addrs) in self.iter() {
            for addr in addrs {
                wtr.write_record([id.0.to_string().as_str(), addr])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Cluster addresses by the common-input-ownership heuristic.
///
/// Addresses seen only in outputs become singleton entities. The result is
/// invariant to ledger record order and to input order within a transaction.
pub fn cluster_addresses(txs: &[RawTransaction]) -> AddressClustering {
    let mut index: HashMap<&str, u32> = HashMap::new();
    let mut names: Vec<&str> = Vec::new();
    for tx in txs {
        for entry in tx.inputs.iter().chain(tx.outputs.iter()) {
            if !index.contains_key(entry.address.as_str()) {
                index.insert(entry.address.as_str(), names.len() as u32);
                names.push(entry.address.as_str());
            }
        }
    }

    let mut uf = UnionFind::new(names.len());
    for tx in txs {
        if tx.is_coinbase() {
            continue;
        }
        let mut inputs = tx.inputs.iter();
        if let Some(first) = inputs.next() {
            let anchor = index[first.address.as_str()];
            for entry in inputs {
                uf.union(anchor, index[entry.address.as_str()]);
            }
        }
    }

    // group members per root, then order clusters by smallest member address
    let mut members: HashMap<u32, Vec<u32>> = HashMap::new();
    for i in 0..names.len() as u32 {
        members.entry(uf.find(i)).or_default().push(i);
    }
    let mut clusters: Vec<Vec<String>> = members
        .into_values()
        .map(|ids| {
            let mut addrs: Vec<String> =
                ids.into_iter().map(|i| names[i as usize].to_string()).collect();
            addrs.sort_unstable();
            addrs
        })
        .collect();
    clusters.sort_unstable_by(|a, b| a[0].cmp(&b[0]));

    let mut by_address = HashMap::with_capacity(names.len());
    for (i, addrs) in clusters.iter().enumerate() {
        for addr in addrs {
            by_address.insert(addr.clone(), EntityId(i as u32));
        }
    }
    AddressClustering { entities: clusters, by_address }
}

/// Entities with resolved ground-truth labels, plus the discarded remainder.
#[derive(Debug, Clone)]
pub struct LabeledEntitySet {
    labels: BTreeMap<EntityId, (String, EntityClass)>,
    discarded: BTreeSet<EntityId>,
}

impl LabeledEntitySet {
    pub fn class_of(&self, entity: EntityId) -> Option<EntityClass> {
        self.labels.get(&entity).map(|(_, c)| *c)
    }

    pub fn name_of(&self, entity: EntityId) -> Option<&str> {
        self.labels.get(&entity).map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, &str, EntityClass)> {
        self.labels.iter().map(|(id, (n, c))| (*id, n.as_str(), *c))
    }

    pub fn discarded(&self) -> &BTreeSet<EntityId> {
        &self.discarded
    }
}

/// Attach label-book ground truth to clustered entities.
///
/// An entity is labeled iff at least one of its addresses appears in the
/// book. A cluster whose addresses map to different classes is an error;
/// a cluster spanning several same-class book entities takes the
/// lexicographically smallest entity name. Unlabeled entities are discarded.
pub fn label_entities(
    clustering: &AddressClustering,
    book: &LabelBook,
) -> Result<LabeledEntitySet, ClusterError> {
    let mut labels = BTreeMap::new();
    let mut discarded = BTreeSet::new();
    for (entity, addrs) in clustering.iter() {
        let mut resolved: Option<(String, EntityClass)> = None;
        for addr in addrs {
            let Some(entry) = book.get(addr) else { continue };
            match &mut resolved {
                None => resolved = Some((entry.entity_name.clone(), entry.class)),
                Some((name, class)) => {
                    if *class != entry.class {
                        return Err(ClusterError::InconsistentEntityLabel {
                            entity,
                            first_name: name.clone(),
                            first_class: *class,
                            second_name: entry.entity_name.clone(),
                            second_class: entry.class,
                        });
                    }
                    if entry.entity_name < *name {
                        *name = entry.entity_name.clone();
                    }
                }
            }
        }
        match resolved {
            Some(label) => {
                labels.insert(entity, label);
            }
            None => {
                discarded.insert(entity);
            }
        }
    }
    Ok(LabeledEntitySet { labels, discarded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TxEntry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tx(id: &str, t: i64, inputs: &[(&str, u64)], outputs: &[(&str, u64)]) -> RawTransaction {
        RawTransaction {
            tx_id: id.to_string(),
            timestamp: t,
            inputs: inputs.iter().map(|&(a, v)| TxEntry::new(a, v)).collect(),
            outputs: outputs.iter().map(|&(a, v)| TxEntry::new(a, v)).collect(),
        }
    }

    #[test]
    fn co_spent_inputs_merge_transitively() {
        let txs = vec![
            tx("t1", 1, &[("a", 5), ("b", 5)], &[("x", 9)]),
            tx("t2", 2, &[("b", 5), ("c", 5)], &[("y", 9)]),
        ];
        let clustering = cluster_addresses(&txs);
        let ea = clustering.entity_of("a").unwrap();
        assert_eq!(clustering.entity_of("b"), Some(ea));
        assert_eq!(clustering.entity_of("c"), Some(ea));
        assert_eq!(clustering.addresses(ea), ["a", "b", "c"]);
    }

    #[test]
    fn disjoint_inputs_stay_separate() {
        let txs = vec![
            tx("t1", 1, &[("a", 5)], &[("x", 4)]),
            tx("t2", 2, &[("b", 5)], &[("y", 4)]),
        ];
        let clustering = cluster_addresses(&txs);
        assert_ne!(clustering.entity_of("a"), clustering.entity_of("b"));
        // output-only addresses become singletons
        assert_eq!(clustering.n_entities(), 4);
    }

    /// Independent oracle: connected components of the co-input graph by BFS.
    pub(crate) fn bfs_components(txs: &[RawTransaction]) -> Vec<Vec<String>> {
        let mut addrs: BTreeSet<&str> = BTreeSet::new();
        for tx in txs {
            for e in tx.inputs.iter().chain(tx.outputs.iter()) {
                addrs.insert(&e.address);
            }
        }
        let mut adj: HashMap<&str, BTreeSet<&str>> = HashMap::new();
        for tx in txs.iter().filter(|t| !t.is_coinbase()) {
            for a in &tx.inputs {
                for b in &tx.inputs {
                    if a.address != b.address {
                        adj.entry(&a.address).or_default().insert(&b.address);
                    }
                }
            }
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut components = Vec::new();
        for &start in &addrs {
            if seen.contains(start) {
                continue;
            }
            let mut queue = std::collections::VecDeque::from([start]);
            let mut comp = Vec::new();
            seen.insert(start);
            while let Some(node) = queue.pop_front() {
                comp.push(node.to_string());
                if let Some(next) = adj.get(node) {
                    for &n in next {
                        if seen.insert(n) {
                            queue.push_back(n);
                        }
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components.sort_unstable_by(|a, b| a[0].cmp(&b[0]));
        components
    }

    fn random_ledger(seed: u64, n_txs: usize, n_addrs: usize) -> Vec<RawTransaction> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_txs)
            .map(|i| {
                let coinbase = rng.random_range(0..10) == 0;
                let n_in = if coinbase { 0 } else { rng.random_range(1..=4) };
                let n_out = rng.random_range(1..=3usize);
                let pick =
                    |rng: &mut ChaCha8Rng| format!("a{:03}", rng.random_range(0..n_addrs));
                let mut inputs = Vec::new();
                let mut used = BTreeSet::new();
                for _ in 0..n_in {
                    let a = pick(&mut rng);
                    if used.insert(a.clone()) {
                        inputs.push(TxEntry::new(a, 100));
                    }
                }
                let outputs: Vec<TxEntry> = (0..n_out)
                    .map(|_| TxEntry::new(pick(&mut rng), 10))
                    .collect();
                RawTransaction {
                    tx_id: format!("t{i:04}"),
                    timestamp: i as i64,
                    inputs,
                    outputs,
                }
            })
            .collect()
    }

    #[test]
    fn matches_bfs_oracle_on_random_fixture() {
        let txs = random_ledger(7, 15, 12);
        let clustering = cluster_addresses(&txs);
        let ours: Vec<Vec<String>> =
            clustering.iter().map(|(_, a)| a.to_vec()).collect();
        assert_eq!(ours, bfs_components(&txs));
    }

    #[test]
    fn clustering_is_permutation_invariant_and_idempotent() {
        let txs = random_ledger(11, 40, 25);
        let base = cluster_addresses(&txs);
        let mut shuffled = txs.clone();
        shuffled.reverse();
        for t in shuffled.iter_mut() {
            t.inputs.reverse();
        }
        let again = cluster_addresses(&shuffled);
        assert_eq!(base.n_entities(), again.n_entities());
        for (id, addrs) in base.iter() {
            assert_eq!(again.addresses(id), addrs);
            for a in addrs {
                assert_eq!(again.entity_of(a), Some(id));
            }
        }
        let third = cluster_addresses(&txs);
        for (id, addrs) in base.iter() {
            assert_eq!(third.addresses(id), addrs);
        }
    }

    fn book(rows: &[(&str, &str, EntityClass)]) -> LabelBook {
        let mut b = LabelBook::new();
        for (i, &(a, e, c)) in rows.iter().enumerate() {
            b.insert(a.to_string(), e.to_string(), c, i + 1).unwrap();
        }
        b
    }

    #[test]
    fn labels_attach_when_any_member_is_known() {
        let txs = vec![tx("t1", 1, &[("a", 5), ("b", 5)], &[("x", 9)])];
        let clustering = cluster_addresses(&txs);
        let book = book(&[("a", "X", EntityClass::Mixer)]);
        let set = label_entities(&clustering, &book).unwrap();
        let e = clustering.entity_of("a").unwrap();
        assert_eq!(set.class_of(e), Some(EntityClass::Mixer));
        assert_eq!(set.name_of(e), Some("X"));
        // the output-only singleton is discarded
        let x = clustering.entity_of("x").unwrap();
        assert!(set.discarded().contains(&x));
    }

    #[test]
    fn conflicting_classes_within_one_cluster_fail() {
        let txs = vec![tx("t1", 1, &[("a", 5), ("b", 5)], &[("x", 9)])];
        let clustering = cluster_addresses(&txs);
        let book = book(&[
            ("a", "X", EntityClass::Mixer),
            ("b", "Y", EntityClass::Exchange),
        ]);
        assert!(matches!(
            label_entities(&clustering, &book),
            Err(ClusterError::InconsistentEntityLabel { .. })
        ));
    }

    #[test]
    fn same_class_spanning_names_resolves_to_smallest_name() {
        let txs = vec![tx("t1", 1, &[("a", 5), ("b", 5)], &[("x", 9)])];
        let clustering = cluster_addresses(&txs);
        let book = book(&[
            ("a", "Zeta", EntityClass::Mixer),
            ("b", "Alpha", EntityClass::Mixer),
        ]);
        let set = label_entities(&clustering, &book).unwrap();
        let e = clustering.entity_of("a").unwrap();
        assert_eq!(set.name_of(e), Some("Alpha"));
    }
}
