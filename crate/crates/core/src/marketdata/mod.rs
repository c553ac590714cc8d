//! Price ingestion, feature and label construction, relation encodings,
//! chronological splits and synthetic markets.

pub mod dataset;
pub mod features;
pub mod prices;
pub mod relations;
pub mod split;
pub mod synth;

pub use dataset::Dataset;
pub use features::{build_features, build_labels, FeatureTensor, ReturnMatrix, MA_WINDOWS, N_FEATURES, WARMUP_DAYS};
pub use prices::{align_calendar, load_prices, parse_price_csv, price_csv, write_prices, PriceSeries};
pub use relations::{load_relations, parse_relations, relations_json, RelationLoadReport, RelationTensor, RelationType};
pub use split::{chronological_split, fractional_split, DatasetSplit};
pub use synth::{business_days, synth_market, FactorMap, SynthConfig, SynthMarket, NOISE, SAME_FACTOR};
