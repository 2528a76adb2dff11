//! Holds the `acceptance` test target (`tests/acceptance.rs`), kept apart
//! from the library's own tests because it runs desk-scale simulations.
