//! Release gate: one test per shipping criterion, each printing a single
//! PASS line (or failing loudly) so the whole bar is readable at a glance.
//!
//! Run with `cargo test -p coral-acceptance --test acceptance -- --nocapture`.

mod bus_properties;
mod tick_semantics;

/// Prints the criterion verdict. On failure the panic carries the same
/// prefix so FAIL lines are greppable too.
pub(crate) fn report(number: u32, label: &str, outcome: Result<String, String>) {
    match outcome {
        Ok(detail) => println!("criterion {number} ({label}): PASS — {detail}"),
        Err(detail) => panic!("criterion {number} ({label}): FAIL — {detail}"),
    }
}
