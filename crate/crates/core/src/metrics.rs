//! Error metrics and divergences.
