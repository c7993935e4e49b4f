//! The honest-but-curious view of a deployment: an eavesdropper linking
//! pseudonyms by lifetime, and coalitions of authorities joining their
//! records.

pub mod collusion;
pub mod fixtures;
pub mod linkage;
pub mod table;
pub mod transcript;

pub use collusion::{collusion_closure, parse_entities, ClosureError, Entity, KnowledgeSet, KnowledgeSummary};
pub use linkage::{link_by_lifetime, score_linkage, LinkageScore, Partition, ScoreError};
pub use table::{check_table, RowCheck};
pub use transcript::{Observation, Owner, PseudonymRef, Transcript};
