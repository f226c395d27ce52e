//! A resumable, stage-based pipeline that turns raw video metadata, quality
//! scores, and VLM annotation responses into validated, spatially grounded
//! GUI interaction trajectories, exported as pretraining samples.
//!
//! Stages run strictly in order; each writes a manifest so interrupted runs
//! resume without re-spending annotation calls:
//!
//! 1. `filter` — coarse metadata filtering (built-in hashed-feature logistic
//!    classifier, or a remote classifier backend)
//! 2. `scorer` — duration gate plus three-dimension content quality scoring
//! 3. `extract` — 4-minute segmentation, sliding-window annotation requests,
//!    two-part response parsing, cross-segment task merging, validation
//! 4. `ground` — frame-triplet spatial grounding of coordinate-bearing actions
//! 5. `assemble` — export into three pretraining sample formats, JSONL shards
//! 6. `stats` — dataset statistics report
//!
//! [`model`] holds the shared domain types and [`actions`] the platform
//! action-space tables both of which everything else validates against;
//! [`backend`] is the uniform annotation-model protocol with retries, rate
//! limiting, caching, and a deterministic mock.

pub mod actions;
pub mod assemble;
pub mod backend;
pub mod extract;
pub mod filter;
pub mod ground;
pub mod mock;
pub mod model;
pub mod pipeline;
pub mod scorer;
pub mod stats;
pub mod util;
