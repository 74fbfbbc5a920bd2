//! Samples von Mises-Fisher distributions and compares the empirical mean
//! resultant length with the Bessel ratio; prints a few ELK similarities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use urlbench::vmf::{elk_sim, log_norm_const, mean_resultant_length, VonMisesFisher};
use urlbench::Result;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    println!("{:>4} {:>7} {:>10} {:>10} {:>12}", "p", "kappa", "empirical", "A_p", "log C_p");
    for p in [3, 16, 128] {
        let mut mu = vec![0.0; p];
        mu[0] = 1.0;
        for kappa in [1.0, 10.0, 100.0] {
            let (xs, _) = VonMisesFisher::new(mu.clone(), kappa)?.sample(5000, &mut rng)?;
            let emp = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
            println!(
                "{p:>4} {kappa:>7} {emp:>10.4} {:>10.4} {:>12.4}",
                mean_resultant_length(p, kappa),
                log_norm_const(p, kappa)?
            );
        }
    }

    let a = VonMisesFisher::from_direction(&[1.0, 0.0, 0.0], 20.0)?;
    for (dir, kappa) in [([1.0, 0.0, 0.0], 20.0), ([1.0, 1.0, 0.0], 20.0), ([0.0, 1.0, 0.0], 20.0), ([0.0, 1.0, 0.0], 1.0)] {
        let b = VonMisesFisher::from_direction(&dir, kappa)?;
        println!("log ELK(a, b = {dir:?}, kappa {kappa}) = {:.4}", elk_sim(&a, &b)?);
    }
    Ok(())
}
