//! Empty library; see `tests/acceptance.rs`.
