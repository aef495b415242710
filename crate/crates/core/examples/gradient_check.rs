//! Compares analytic backpropagation through a correction network with
//! central finite differences.
//!
//! Run: `cargo run --release --example gradient_check`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strol::net::CorrectionNet;

fn main() -> strol::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = CorrectionNet::random(6, &[16, 16, 16, 16], 2, 1.0, &mut rng)?;
    let input = [0.3, -0.2, 0.5, 0.1, -0.7, 0.4];
    let upstream = [1.0, -0.5];
    let grads = net.backward(&input, &upstream)?;
    let objective = |n: &CorrectionNet| -> f64 {
        let out = n.forward(&input).expect("input has the right size");
        out.iter().zip(upstream).map(|(o, u)| o * u).sum()
    };

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let analytic: Vec<f64> = grads.iter().copied().collect();
    let mut k = 0;
    for layer in net.params() {
        for _ in layer {
            let mut plus = net.clone();
            let mut minus = net.clone();
            *plus.params_mut().flatten().nth(k).expect("index in range") += h;
            *minus.params_mut().flatten().nth(k).expect("index in range") -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let scale = analytic[k].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[k] - numeric).abs() / scale);
            k += 1;
        }
    }
    println!("{} parameters, worst relative error {worst:.2e}", net.param_count());
    Ok(())
}
