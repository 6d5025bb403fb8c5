//! Synthetic world, base logs and the ground-truth delivery simulator.

pub mod io;
pub mod logs;
pub mod records;
pub mod simulate;
pub mod world;

pub use io::{read_logs, write_logs, LogManifest};
pub use logs::{gen_action_log, gen_day_logs, uts_records};
pub use records::{ActionRecord, AuctionRecord, UrfRecord, UtsRecord};
pub use simulate::{
    simulate_true_delivery, StrategyConfig, TrueDelivery, TruePerformance, WorldResponses,
};
pub use world::{gen_world, hash_unit, subseed, Context, Field, World, WorldConfig};
