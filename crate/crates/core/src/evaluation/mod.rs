//! Cosine-similarity retrieval, CMC/mAP/mINP and the SYSU-MM01 and RegDB
//! evaluation protocols.

mod dump;
mod metrics;
mod protocols;

pub use dump::{feature_sets, format_dump, parse_dump, read_dump, write_dump, EmbeddingRecord};
pub use metrics::{cmc_map_minp, evaluate, rank, MetricsReport, QueryMetrics, TrialMetrics, DEFAULT_MAX_RANK};
pub use protocols::{
    evaluate_direction, protocol_regdb, protocol_sysu, Direction, FeatureSet, RegdbProtocol, RegdbReport, Shot,
    SysuMode, SysuProtocol,
};
