//! Stability margin of a single update and how a bounded correction changes it.
//!
//! Run: `cargo run --example lyapunov_margin`

use strol::lyapunov::{lyapunov_candidate, lyapunov_difference, stability_margin};
use strol::model::{ErrorVector, ParamDelta, ParamVector};

fn main() -> strol::Result<()> {
    let theta_star = ParamVector(vec![1.0, -1.0]);
    let theta = ParamVector(vec![0.0, 0.0]);
    let e = ErrorVector::between(&theta_star, &theta)?;
    println!("V(e) = {:.4}", lyapunov_candidate(&e));

    // A noisy correction points partly the wrong way; the corrected step does not.
    let g = ParamDelta(vec![0.6, 0.3]);
    let gtilde = ParamDelta(vec![0.6, -0.2]);
    for alpha in [0.1, 0.5, 1.0, 2.0] {
        println!(
            "alpha {alpha:>4}: margin(g) {:+.4}  margin(g~) {:+.4}  check {:+.4}",
            stability_margin(&e, &g, alpha),
            stability_margin(&e, &gtilde, alpha),
            lyapunov_difference(&e, &gtilde, alpha),
        );
    }
    println!("a negative margin means the error shrinks on that step");
    Ok(())
}
