//! Cluster-based, leakage-free partitioning of video-derived frame datasets.
//!
//! Pipeline: per-frame features ([`descriptors`], [`vlad`]) are projected
//! with [`pacmap`], grouped with [`hdbscan`], and whole groups are assigned
//! to train/validation/test partitions by [`splitter`]. [`metrics`] scores
//! a clustering against ground-truth video identity, and [`testkit`] holds
//! independent reference implementations used to audit those scores.

pub mod corpus;
pub mod descriptors;
pub mod hdbscan;
pub mod knn;
pub mod matrix;
pub mod metrics;
pub mod pacmap;
pub mod splitter;
pub mod testkit;
pub mod vlad;

pub use matrix::Matrix;
