//! Seeded synthetic ledgers with class-dependent behaviour profiles.
//!
//! Every entity runs a planned stream of spend events (plus mining events
//! for pools); there are no hidden counterparty transactions, so per-class
//! tx counts and self-transfer rates land where the config puts them. Six
//! profile dimensions shape the classes: address reuse, chaining of recent
//! receipts into later spends, counterparty concentration, fan-in/fan-out,
//! amount and fee distributions, and coinbase income.
//!
//! Wallet mechanics guarantee exact cluster recovery: an entity co-spends
//! only its own addresses, every spend includes the entity's anchor address,
//! unconnected receive addresses are consumed as consolidation inputs, and
//! one final sweep per entity joins whatever is left. Value is not
//! UTXO-tracked; inputs are free (address, value) pairs with fee = in - out
//! held non-negative by construction.
//!
//! Two pairs of classes are configured to overlap in all seven entity-level
//! features (Gambling/Service and Marketplace/Mixer) while their address
//! and motif behaviour differs, so enrichment has signal the baseline lacks.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EntityClass, LabelBook, RawTransaction, TxEntry, SATS_PER_BTC};
use crate::ml::derive_seed;

const MIN_AMOUNT_SATS: u64 = 1_000;
const MAX_AMOUNT_SATS: u64 = 200 * SATS_PER_BTC;
const MIN_FEE_SATS: u64 = 100;
const MAX_FEE_SATS: u64 = 5_000_000;
const SWEEP_INPUT_SATS: u64 = 10_000;
const SWEEP_FEE_SATS: u64 = 1_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("tx budget {got} cannot cover {needed} transactions (entities + coinbases + sweeps)")]
    BudgetTooSmall { needed: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Behaviour knobs for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassProfile {
    pub n_entities: usize,
    /// Relative share of the spend budget per entity of this class.
    pub spend_weight: f64,
    /// Fraction of spends that pay the entity itself.
    pub self_transfer_rate: f64,
    /// Probability an incoming payment lands on an already-used address.
    pub address_reuse_rate: f64,
    /// Fixed preferred-counterparty set size (None picks uniformly).
    pub partner_pool: Option<usize>,
    /// Probability a non-self spend targets a preferred counterparty.
    pub partner_bias: f64,
    /// Probability a spend re-spends a recent receipt as its primary input.
    pub chain_rate: f64,
    /// Forward the exact received amount (mixing); implies chaining.
    pub forward_received: bool,
    /// Target range for input slots per spend (anchor included).
    pub fan_in: (usize, usize),
    /// Range for output slots per spend.
    pub fan_out: (usize, usize),
    /// ln-mean / ln-sigma of the BTC amount distribution.
    pub amount_ln_mean: f64,
    pub amount_ln_sigma: f64,
    /// ln-mean / ln-sigma of the satoshi fee distribution.
    pub fee_ln_mean: f64,
    pub fee_ln_sigma: f64,
    pub coinbase_per_entity: usize,
    pub coinbase_value: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub profiles: BTreeMap<EntityClass, ClassProfile>,
    pub tx_budget: usize,
    pub timestamp_start: i64,
    pub timestamp_span: i64,
    pub seed: u64,
}

fn profile(
    n_entities: usize,
    self_rate: f64,
    reuse: f64,
    partners: Option<usize>,
    chain_rate: f64,
    forward: bool,
    fan_in: (usize, usize),
    fan_out: (usize, usize),
    amount_btc: f64,
    amount_sigma: f64,
    fee_sats: f64,
    fee_sigma: f64,
) -> ClassProfile {
    ClassProfile {
        n_entities,
        spend_weight: 1.0,
        self_transfer_rate: self_rate,
        address_reuse_rate: reuse,
        partner_pool: partners,
        partner_bias: if partners.is_some() { 0.9 } else { 0.0 },
        chain_rate,
        forward_received: forward,
        fan_in,
        fan_out,
        amount_ln_mean: amount_btc.ln(),
        amount_ln_sigma: amount_sigma,
        fee_ln_mean: fee_sats.ln(),
        fee_ln_sigma: fee_sigma,
        coinbase_per_entity: 0,
        coinbase_value: 0,
    }
}

impl SynthConfig {
    /// Desk-scale default: 10 entities per class, ~50k transactions.
    ///
    /// Gambling/Service and Marketplace/Mixer draw entity-level behaviour
    /// from identical distributions and differ only in fees, counterparty
    /// concentration and chaining style.
    pub fn default_desk_scale() -> SynthConfig {
        let mut profiles = BTreeMap::new();
        profiles.insert(
            EntityClass::Exchange,
            profile(10, 0.03, 0.02, None, 0.0, false, (3, 6), (2, 4), 2.0, 0.9, 30_000.0, 0.4),
        );
        profiles.insert(
            EntityClass::Gambling,
            profile(10, 0.05, 0.90, Some(3), 0.25, false, (2, 3), (1, 2), 0.02, 0.6, 600.0, 0.25),
        );
        profiles.insert(
            EntityClass::Service,
            profile(10, 0.05, 0.90, None, 0.25, false, (2, 3), (1, 2), 0.02, 0.6, 45_000.0, 0.25),
        );
        profiles.insert(
            EntityClass::Marketplace,
            profile(10, 0.01, 0.70, Some(3), 1.0, true, (2, 3), (1, 2), 0.7, 0.7, 900.0, 0.25),
        );
        profiles.insert(
            EntityClass::Mixer,
            profile(10, 0.01, 0.70, None, 1.0, true, (2, 3), (1, 2), 0.7, 0.7, 12_000.0, 0.25),
        );
        let mut pool =
            profile(10, 0.02, 0.50, None, 0.5, false, (4, 8), (2, 3), 1.0, 0.6, 5_000.0, 0.3);
        pool.coinbase_per_entity = 40;
        pool.coinbase_value = 1_250_000_000;
        profiles.insert(EntityClass::MiningPool, pool);
        SynthConfig {
            profiles,
            tx_budget: 50_000,
            timestamp_start: 1_600_000_000,
            timestamp_span: 90 * 24 * 3600,
            seed: 7,
        }
    }

    pub fn total_entities(&self) -> usize {
        self.profiles.values().map(|p| p.n_entities).sum()
    }

    fn total_coinbases(&self) -> usize {
        self.profiles.values().map(|p| p.n_entities * p.coinbase_per_entity).sum()
    }

    /// Spend transactions available after coinbases and sweep reserve.
    fn spend_budget(&self) -> usize {
        self.tx_budget
            .saturating_sub(self.total_coinbases())
            .saturating_sub(self.total_entities())
    }

    /// Configured mean spend count per entity of each class; generated
    /// ledgers land within a few percent of these.
    pub fn target_spends_per_entity(&self) -> BTreeMap<EntityClass, f64> {
        let weight_total: f64 = self
            .profiles
            .values()
            .map(|p| p.n_entities as f64 * p.spend_weight)
            .sum();
        let budget = self.spend_budget() as f64;
        self.profiles
            .iter()
            .map(|(&c, p)| (c, budget * p.spend_weight / weight_total))
            .collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.profiles.is_empty() {
            return Err(SynthError::InvalidConfig("no class profiles".into()));
        }
        for (class, p) in &self.profiles {
            let rates = [
                ("self_transfer_rate", p.self_transfer_rate),
                ("address_reuse_rate", p.address_reuse_rate),
                ("partner_bias", p.partner_bias),
                ("chain_rate", p.chain_rate),
            ];
            for (name, r) in rates {
                if !(0.0..=1.0).contains(&r) {
                    return Err(SynthError::InvalidConfig(format!(
                        "{class}: {name} = {r} outside [0, 1]"
                    )));
                }
            }
            if p.n_entities == 0 {
                return Err(SynthError::InvalidConfig(format!("{class}: zero entities")));
            }
            if p.fan_in.0 < 1 || p.fan_in.0 > p.fan_in.1 || p.fan_out.0 < 1 || p.fan_out.1 < p.fan_out.0
            {
                return Err(SynthError::InvalidConfig(format!("{class}: bad fan ranges")));
            }
            if p.spend_weight <= 0.0 {
                return Err(SynthError::InvalidConfig(format!("{class}: spend_weight <= 0")));
            }
            if p.coinbase_per_entity > 0 && p.coinbase_value == 0 {
                return Err(SynthError::InvalidConfig(format!("{class}: zero coinbase value")));
            }
        }
        if self.timestamp_span <= 0 {
            return Err(SynthError::InvalidConfig("timestamp_span must be positive".into()));
        }
        if self.spend_budget() < self.total_entities() {
            return Err(SynthError::BudgetTooSmall {
                needed: self.total_coinbases() + 2 * self.total_entities(),
                got: self.tx_budget,
            });
        }
        Ok(())
    }
}

/// A generated ledger with its ground truth.
pub struct SynthOutput {
    pub ledger: Vec<RawTransaction>,
    pub labels: LabelBook,
    /// entity name -> class
    pub truth: BTreeMap<String, EntityClass>,
}

fn class_slug(class: EntityClass) -> &'static str {
    match class {
        EntityClass::Exchange => "exchange",
        EntityClass::Gambling => "gambling",
        EntityClass::Marketplace => "marketplace",
        EntityClass::MiningPool => "miningpool",
        EntityClass::Mixer => "mixer",
        EntityClass::Service => "service",
    }
}

struct EntityState {
    name: String,
    class: EntityClass,
    rng: ChaCha8Rng,
    addrs: Vec<String>,
    /// union-find over own addresses, tracking co-spend connectivity
    parent: Vec<u32>,
    /// receive pool for reuse draws
    recv_pool: Vec<u32>,
    /// receive addresses not yet co-spent (consolidation candidates)
    pending: VecDeque<u32>,
    /// recent receipts: (address, amount), consumed FIFO by chaining
    receipts: VecDeque<(u32, u64)>,
    /// the anchor address joining every spend
    anchor: u32,
    partners: Vec<usize>,
    planned_spends: usize,
}

impl EntityState {
    fn new(name: String, class: EntityClass, rng: ChaCha8Rng) -> EntityState {
        let mut e = EntityState {
            name,
            class,
            rng,
            addrs: Vec::new(),
            parent: Vec::new(),
            recv_pool: Vec::new(),
            pending: VecDeque::new(),
            receipts: VecDeque::new(),
            anchor: 0,
            partners: Vec::new(),
            planned_spends: 0,
        };
        e.anchor = e.new_addr();
        e
    }

    fn new_addr(&mut self) -> u32 {
        let id = self.addrs.len() as u32;
        self.addrs.push(format!("{}:a{}", self.name, id));
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let next = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = next;
            x = next;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb as usize] = ra;
        }
    }

    fn is_connected(&mut self, x: u32) -> bool {
        let anchor = self.anchor;
        self.find(x) == self.find(anchor)
    }

    /// Address for an incoming payment, honoring the reuse rate.
    fn receive_addr(&mut self, reuse: f64) -> u32 {
        if !self.recv_pool.is_empty() && self.rng.random::<f64>() < reuse {
            self.recv_pool[self.rng.random_range(0..self.recv_pool.len())]
        } else {
            let id = self.new_addr();
            self.recv_pool.push(id);
            self.pending.push_back(id);
            id
        }
    }

    /// Unconnected receive addresses to consolidate, at most `limit`.
    fn take_pending(&mut self, limit: usize, exclude: u32) -> Vec<u32> {
        let mut out = Vec::new();
        while out.len() < limit {
            let Some(cand) = self.pending.pop_front() else { break };
            if cand != exclude && !self.is_connected(cand) {
                out.push(cand);
            }
        }
        out
    }
}

fn sample_amount(p: &ClassProfile, rng: &mut ChaCha8Rng) -> u64 {
    let dist = LogNormal::new(p.amount_ln_mean, p.amount_ln_sigma).unwrap();
    let btc: f64 = dist.sample(rng);
    ((btc * SATS_PER_BTC as f64).round() as u64).clamp(MIN_AMOUNT_SATS, MAX_AMOUNT_SATS)
}

fn sample_fee(p: &ClassProfile, rng: &mut ChaCha8Rng) -> u64 {
    let dist = LogNormal::new(p.fee_ln_mean, p.fee_ln_sigma).unwrap();
    let sats: f64 = dist.sample(rng);
    (sats.round() as u64).clamp(MIN_FEE_SATS, MAX_FEE_SATS)
}

/// Split `amount` into `parts` positive shares with random proportions.
fn split_amount(amount: u64, parts: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let parts = parts.min(amount as usize).max(1);
    let mut weights = Vec::with_capacity(parts);
    let mut total = 0u64;
    for _ in 0..parts {
        let w = rng.random_range(1..=4u64);
        weights.push(w);
        total += w;
    }
    let mut out = Vec::with_capacity(parts);
    let mut assigned = 0u64;
    for (i, &w) in weights.iter().enumerate() {
        let share = if i + 1 == parts {
            amount - assigned
        } else {
            ((amount as u128 * w as u128 / total as u128) as u64)
                .clamp(1, amount - assigned - (parts - i - 1) as u64)
        };
        out.push(share);
        assigned += share;
    }
    out
}

/// Generate a ledger, its label book and the ground-truth class table.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let seed = config.seed;
    let mut master = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synth-master", 0));

    // entities in canonical class order
    let mut entities: Vec<EntityState> = Vec::new();
    for (&class, p) in &config.profiles {
        for i in 0..p.n_entities {
            let name = format!("{}_{:02}", class_slug(class), i);
            let rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                "synth-entity",
                entities.len() as u64,
            ));
            entities.push(EntityState::new(name, class, rng));
        }
    }
    let n_entities = entities.len();

    // per-entity plans: jittered spend counts and partner sets
    let targets = config.target_spends_per_entity();
    for idx in 0..n_entities {
        let class = entities[idx].class;
        let p = &config.profiles[&class];
        let target = targets[&class];
        // downward-only jitter keeps the total inside the budget
        let jitter = 0.90 + 0.10 * entities[idx].rng.random::<f64>();
        entities[idx].planned_spends = ((target * jitter).round() as usize).max(1);
        if let Some(k) = p.partner_pool {
            let k = k.min(n_entities.saturating_sub(1));
            let mut set = Vec::new();
            while set.len() < k {
                let cand = entities[idx].rng.random_range(0..n_entities);
                if cand != idx && !set.contains(&cand) {
                    set.push(cand);
                }
            }
            entities[idx].partners = set;
        }
    }

    #[derive(Clone, Copy)]
    enum Event {
        Spend(usize),
        Mine(usize),
    }
    let mut events: Vec<Event> = Vec::new();
    for (idx, e) in entities.iter().enumerate() {
        let p = &config.profiles[&e.class];
        events.extend(std::iter::repeat_n(Event::Spend(idx), e.planned_spends));
        events.extend(std::iter::repeat_n(Event::Mine(idx), p.coinbase_per_entity));
    }
    // Fisher-Yates with the master stream
    for i in (1..events.len()).rev() {
        let j = master.random_range(0..=i);
        events.swap(i, j);
    }

    let step = (config.timestamp_span / events.len().max(1) as i64).max(1);
    let mut clock = config.timestamp_start;
    let mut seq = 0u64;
    let mut ledger: Vec<RawTransaction> = Vec::with_capacity(events.len() + n_entities);
    let next_id = |seq: &mut u64| {
        let id = format!("tx{:07}", *seq);
        *seq += 1;
        id
    };

    for event in events {
        clock += master.random_range(1..=2 * step);
        match event {
            Event::Mine(idx) => {
                let p = config.profiles[&entities[idx].class].clone();
                let slots = {
                    let e = &mut entities[idx];
                    e.rng.random_range(p.fan_out.0..=p.fan_out.1)
                };
                let shares = {
                    let e = &mut entities[idx];
                    split_amount(p.coinbase_value, slots, &mut e.rng)
                };
                let mut outputs = Vec::with_capacity(shares.len());
                for share in shares {
                    let e = &mut entities[idx];
                    let addr = e.receive_addr(p.address_reuse_rate);
                    e.receipts.push_back((addr, share));
                    outputs.push(TxEntry::new(e.addrs[addr as usize].clone(), share));
                }
                ledger.push(RawTransaction {
                    tx_id: next_id(&mut seq),
                    timestamp: clock,
                    inputs: Vec::new(),
                    outputs,
                });
            }
            Event::Spend(idx) => {
                let p = config.profiles[&entities[idx].class].clone();
                let fee = sample_fee(&p, &mut entities[idx].rng);

                // primary input: a chained receipt, or nothing
                let chain_roll = entities[idx].rng.random::<f64>();
                let wants_chain = p.forward_received || chain_roll < p.chain_rate;
                let receipt = if wants_chain { entities[idx].receipts.pop_front() } else { None };
                let (primary, amount) = match receipt {
                    Some((addr, recv_amount)) if p.forward_received => {
                        (Some((addr, recv_amount)), recv_amount)
                    }
                    Some((addr, recv_amount)) => {
                        let amount = sample_amount(&p, &mut entities[idx].rng);
                        (Some((addr, recv_amount.min(amount + fee))), amount)
                    }
                    None => (None, sample_amount(&p, &mut entities[idx].rng)),
                };

                // recipient: self, preferred partner, or uniform other
                let is_self = entities[idx].rng.random::<f64>() < p.self_transfer_rate;
                let recipient = if is_self || n_entities == 1 {
                    idx
                } else {
                    let partner_roll = entities[idx].rng.random::<f64>();
                    if partner_roll < p.partner_bias && !entities[idx].partners.is_empty() {
                        let n_partners = entities[idx].partners.len();
                        let k = entities[idx].rng.random_range(0..n_partners);
                        entities[idx].partners[k]
                    } else {
                        let pick = entities[idx].rng.random_range(0..n_entities - 1);
                        if pick >= idx {
                            pick + 1
                        } else {
                            pick
                        }
                    }
                };

                // inputs: anchor + primary + consolidation of unconnected addrs
                let fan_target = {
                    let e = &mut entities[idx];
                    e.rng.random_range(p.fan_in.0..=p.fan_in.1)
                };
                let mut input_ids: Vec<u32> = vec![entities[idx].anchor];
                if let Some((addr, _)) = primary {
                    if addr != entities[idx].anchor {
                        input_ids.push(addr);
                    }
                }
                let room = fan_target.saturating_sub(input_ids.len());
                let exclude = primary.map(|(a, _)| a).unwrap_or(u32::MAX);
                let reps = entities[idx].take_pending(room, exclude);
                input_ids.extend(&reps);

                // distribute amount + fee: the primary claims its share, the
                // rest spreads over the remaining inputs
                let total_in = amount + fee;
                let primary_claim = primary.map(|(_, v)| v.min(total_in)).unwrap_or(0);
                let others = input_ids.len() - usize::from(primary.is_some());
                let mut remainder = total_in - primary_claim;
                let mut inputs = Vec::with_capacity(input_ids.len());
                for &id in &input_ids {
                    let value = if primary.map(|(a, _)| a) == Some(id) {
                        primary_claim
                    } else {
                        let share = remainder / others.max(1) as u64;
                        remainder -= share.min(remainder);
                        share
                    };
                    inputs.push((id, value));
                }
                // rounding leftovers land on the anchor
                if remainder > 0 {
                    inputs[0].1 += remainder;
                }

                // union all inputs into the wallet component
                for i in 1..input_ids.len() {
                    let (a, b) = (input_ids[0], input_ids[i]);
                    entities[idx].union(a, b);
                }

                // outputs on the recipient side
                let slots = {
                    let e = &mut entities[idx];
                    e.rng.random_range(p.fan_out.0..=p.fan_out.1)
                };
                let shares = {
                    let e = &mut entities[idx];
                    split_amount(amount, slots, &mut e.rng)
                };
                let recipient_reuse = config.profiles[&entities[recipient].class].address_reuse_rate;
                let mut outputs = Vec::with_capacity(shares.len());
                for share in shares {
                    let r = &mut entities[recipient];
                    let addr = r.receive_addr(recipient_reuse);
                    r.receipts.push_back((addr, share));
                    outputs.push(TxEntry::new(r.addrs[addr as usize].clone(), share));
                }

                let sender = &entities[idx];
                ledger.push(RawTransaction {
                    tx_id: next_id(&mut seq),
                    timestamp: clock,
                    inputs: inputs
                        .iter()
                        .map(|&(id, v)| TxEntry::new(sender.addrs[id as usize].clone(), v))
                        .collect(),
                    outputs,
                });
            }
        }
    }

    // final sweep per entity: co-spend one representative of every
    // still-unconnected component with the anchor
    for e in entities.iter_mut() {
        let mut reps: Vec<u32> = Vec::new();
        let ids: Vec<u32> = (0..e.addrs.len() as u32).collect();
        for id in ids {
            if !e.is_connected(id) {
                let root = e.find(id);
                if !reps.iter().any(|&r| e.find(r) == root) {
                    reps.push(id);
                }
            }
        }
        if reps.is_empty() {
            continue;
        }
        clock += 1;
        let mut inputs = vec![TxEntry::new(e.addrs[e.anchor as usize].clone(), SWEEP_INPUT_SATS)];
        for &rep in &reps {
            inputs.push(TxEntry::new(e.addrs[rep as usize].clone(), SWEEP_INPUT_SATS));
            let anchor = e.anchor;
            e.union(anchor, rep);
        }
        let total: u64 = SWEEP_INPUT_SATS * inputs.len() as u64;
        let outputs =
            vec![TxEntry::new(e.addrs[e.anchor as usize].clone(), total - SWEEP_FEE_SATS)];
        ledger.push(RawTransaction {
            tx_id: next_id(&mut seq),
            timestamp: clock,
            inputs,
            outputs,
        });
    }

    ledger.sort_by(|a, b| (a.timestamp, &a.tx_id).cmp(&(b.timestamp, &b.tx_id)));

    let mut labels = LabelBook::new();
    let mut truth = BTreeMap::new();
    for e in &entities {
        truth.insert(e.name.clone(), e.class);
        for addr in &e.addrs {
            labels
                .insert(addr.clone(), e.name.clone(), e.class, 0)
                .expect("synthetic addresses are unique");
        }
    }
    Ok(SynthOutput { ledger, labels, truth })
}

/// Write `truth.csv` (`entity,class`).
pub fn write_truth_csv(
    truth: &BTreeMap<String, EntityClass>,
    w: impl std::io::Write,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["entity", "class"])?;
    for (name, class) in truth {
        wtr.write_record([name.as_str(), class.name()])?;
    }
    wtr.flush()?;
    Ok(())
}
