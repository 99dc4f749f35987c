//! Reference inference schemes for comparison.
