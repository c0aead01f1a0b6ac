//! Norm clipping and the Gaussian mechanism on a gradient matrix.
//!
//! cargo run --example clip_and_noise

use dplora::numerics::{gaussian_sample, Matrix, Rng};
use dplora::privacy::{clip_gradient, gaussian_mechanism};

fn main() -> anyhow::Result<()> {
    let mut rng = Rng::new(11);
    let (sigma, c) = (2.0, 10.0);
    for scale in [0.5, 5.0, 50.0] {
        let g = gaussian_sample(&mut rng, 8, 4, 0.0, scale)?;
        let clipped = clip_gradient(&g, c)?;
        println!("|g| = {:>8.3}  ->  |clip(g)| = {:>7.3}", g.frobenius_norm(), clipped.frobenius_norm());
    }

    let zeros = Matrix::zeros(500, 200);
    let noise = gaussian_mechanism(&zeros, sigma, c, &mut rng)?;
    let v = noise.as_slice();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
    println!("\nnoise per entry: mean {mean:.4}, std {std:.3} (sigma*C = {})", sigma * c);
    Ok(())
}
