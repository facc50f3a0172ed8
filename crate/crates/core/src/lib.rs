//! Optimal multi-agent path finding with Conflict-Based Search, the WDG
//! heuristic, lookahead conflict-selection oracles and a linear ranking
//! function trained to imitate them.

pub mod cbs;
pub mod dataset;
pub mod feature;
pub mod gridmap;
pub mod harness;
pub mod oracle;
pub mod pathing;
pub mod ranker;
