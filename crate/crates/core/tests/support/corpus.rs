//! Toy pipeline definitions covering every toy algorithm and port kind.

#![allow(dead_code)]

pub const TOY_PIPELINES: &[(&str, &str)] = &[
    ("cohort-summary", include_str!("pipelines/cohort-summary.pipe")),
    ("count-rows", include_str!("pipelines/count-rows.pipe")),
    ("merge-and-count", include_str!("pipelines/merge-and-count.pipe")),
    ("filter-stamp", include_str!("pipelines/filter-stamp.pipe")),
    ("scalar-chain", include_str!("pipelines/scalar-chain.pipe")),
    ("diamond", include_str!("pipelines/diamond.pipe")),
];
