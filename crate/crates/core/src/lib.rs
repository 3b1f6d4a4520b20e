//! Join-DAG query optimizer.
//!
//! Join orders are enumerated once into an AND/OR DAG (the "join DAG"),
//! either from the whole foreign-key schema graph or incrementally from the
//! joins seen in queries. Selections, grouping, ordering and projections are
//! then placed onto that DAG at cost-minimal positions. An exhaustive
//! permutation builder serves as the reference baseline.

pub mod analytics;
pub mod catalog;
pub mod costplan;
pub mod enumerate;
pub mod error;
pub mod expr;
pub mod joindag;
pub mod memo;
pub mod naive;
pub mod optimizer;
pub mod predicate;
pub mod sprinkle;
pub mod sqlfront;

pub use catalog::{load_catalog, Catalog};
pub use costplan::{best_plan, Plan};
pub use error::{Error, Result};
pub use joindag::{
    build_complete_history, build_incremental, load_history, save_history, HistoryDag,
};
pub use memo::{Dag, EqId, OpId, OpKind};
pub use naive::build_naive_dag;
pub use optimizer::{
    all_base_joins, optimize_joindag, optimize_naive, Mode, OptimizeOptions, Optimized,
    QueryMetrics,
};
pub use sprinkle::{sprinkle_groupby_orderby, sprinkle_projects, sprinkle_selects};
pub use sqlfront::{extract_join_set, parse_query, render, Query};
