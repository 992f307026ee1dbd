//! Holds the `acceptance` integration target; no library code.
//!
//! The target prints one `ACCEPTANCE PASS|FAIL` line per criterion to
//! stderr, uncaptured, so the lines survive `cargo test`'s output capture.
