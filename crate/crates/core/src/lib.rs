//! Benchmarking toolkit for lexical semantic change detection over Word
//! Usage Graphs.
//!
//! The crate covers the whole evaluation path: reading annotated datasets,
//! building usage graphs, scoring usage pairs, clustering graphs into senses,
//! turning clusterings into change scores, and comparing predictions to gold
//! labels.
//!
//! ```
//! use lscd_core::wug::{edge_weight, Aggregation, Ordinal};
//!
//! let labels = [Some(Ordinal::new(3).unwrap()), Some(Ordinal::new(4).unwrap()), None];
//! assert_eq!(edge_weight(&labels, Aggregation::Median).unwrap(), 3.5);
//! ```

pub mod clustering;
pub mod embed;
pub mod error;
pub mod fixture;
pub mod ingest;
pub mod measures;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod wic;
pub mod wug;

pub use error::{Error, ErrorKind, Result};

// The guide's chapters double as doctests so their snippets stay in sync.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/usage-graphs.md")]
    mod usage_graphs {}
    #[doc = include_str!("../../../book/src/wic.md")]
    mod wic {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/change-measures.md")]
    mod change_measures {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
