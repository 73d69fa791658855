//! Entity classification for Bitcoin-style transaction ledgers.
//!
//! The pipeline runs in stages, each with its own module:
//!
//! 1. [`ingest`] parses line-delimited ledgers and label books.
//! 2. [`clustering`] groups addresses into entities with the
//!    common-input-ownership heuristic and attaches ground-truth labels.
//! 3. [`graph`] builds the address-transaction and entity-transaction
//!    bipartite graphs with valued, directed edges.
//! 4. [`motifs`] enumerates temporally ordered 1-motif and 2-motif paths.
//! 5. [`features`] materializes the four tabular feature frames
//!    (entity, address, 1-motif, 2-motif).
//! 6. [`ml`] holds the CART trees and the three ensemble learners.
//! 7. [`eval`] implements stratified K-fold cross-validation and the
//!    multiclass metrics, including the Matthews correlation coefficient.
//! 8. [`cascade`] orchestrates the baseline experiment and the enrichment
//!    cascade that feeds first-level predictions back into the entity frame.
//! 9. [`synth`] generates seeded synthetic ledgers with known entity classes
//!    so the whole pipeline can be validated end to end at desk scale.

pub mod cascade;
pub mod clustering;
pub mod eval;
pub mod features;
pub mod graph;
pub mod ingest;
pub mod ml;
pub mod motifs;
pub mod synth;

pub use clustering::EntityId;
pub use ingest::EntityClass;
