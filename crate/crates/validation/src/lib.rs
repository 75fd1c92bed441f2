//! Holder crate for the `acceptance` test target.
