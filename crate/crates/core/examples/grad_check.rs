//! Finite-difference gradient checks for every trainable component.

use svkit::training::{grad_check, GRADCHECK_COMPONENTS};

fn main() -> svkit::Result<()> {
    for c in GRADCHECK_COMPONENTS {
        let r = grad_check(c, 1, 1e-5, 0)?;
        println!("{c:<12} max rel error {:.2e}  ({} kink-crossing coords skipped)", r.max_error(), r.skipped);
        for (name, e) in &r.errors {
            println!("    {name:<28} {e:.2e}");
        }
    }
    Ok(())
}
