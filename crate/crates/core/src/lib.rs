//! Seed-variety mix planning.
//!
//! The pipeline forecasts next-season weather per sub-region, predicts a
//! binned yield distribution for every (sub-region, variety) pair, picks the
//! most promising varieties, and solves a small linear program for the
//! planting proportions under a variability budget. Solutions are scored for
//! spatial cohesion against neighbouring sub-regions and collected into a
//! [`pipeline::SolutionAtlas`].

pub mod data;
pub mod datagen;
pub mod forecast;
pub mod yieldmodel;
pub mod optimizer;
pub mod cohesion;
pub mod pipeline;
