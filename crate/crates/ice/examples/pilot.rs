// Throwaway geometry probe: how hash margins move as a trail accumulates.
use ice::latent::{simhash, AutoencoderParams, HashScheme};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let cells = 1600usize;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ae = AutoencoderParams::new(cells, 256, 128, 16, 0.5, 0.3, 3, 1e-3, 16, &mut rng).unwrap();
    let scheme = HashScheme::new(16, 128, 0.0, 0).unwrap();

    // Discovery order: random-walk-ish spread from a corner.
    let mut order: Vec<usize> = (0..cells).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(7));

    let mut trail = vec![0.0f64; cells];
    let mut prev = simhash(&ae.encode(&trail).unwrap(), &scheme, &mut rng).unwrap();
    let mut flips_at = Vec::new();
    for (d, &cell) in order.iter().take(260).enumerate() {
        trail[cell] = 1.0;
        let dense = ae.encode(&trail).unwrap();
        let code = simhash(&dense, &scheme, &mut rng).unwrap();
        let flips = code
            .bits
            .iter()
            .zip(&prev.bits)
            .filter(|(a, b)| a != b)
            .count();
        if flips > 0 {
            flips_at.push((d + 1, flips));
        }
        prev = code;
        if [1, 5, 25, 50, 100, 150, 200, 250].contains(&(d + 1)) {
            // margins = A * (dense dev); report |margin| stats and drift step size
            let proj = scheme.projection();
            let margins: Vec<f64> = proj
                .chunks_exact(128)
                .map(|row| row.iter().zip(&dense).map(|(&w, &y)| w * y).sum::<f64>())
                .collect();
            let mabs: Vec<f64> = margins.iter().map(|m| m.abs()).collect();
            let mean_abs = mabs.iter().sum::<f64>() / 16.0;
            let dev: Vec<f64> = dense.iter().map(|&y| y - 0.5).collect();
            let dev_norm = dev.iter().map(|x| x * x).sum::<f64>().sqrt();
            println!(
                "d={:3}  |margin| mean {:.4}  max {:.4}  ||dev|| {:.4}",
                d + 1,
                mean_abs,
                mabs.iter().cloned().fold(0.0, f64::max),
                dev_norm
            );
        }
    }
    println!("flip events (discovery#, bits): {:?}", flips_at);

    // Step size: margin motion per discovery, averaged.
    let mut trail = vec![0.0f64; cells];
    let mut last: Option<Vec<f64>> = None;
    let mut steps = Vec::new();
    for &cell in order.iter().take(200) {
        trail[cell] = 1.0;
        let dense = ae.encode(&trail).unwrap();
        let margins: Vec<f64> = scheme
            .projection()
            .chunks_exact(128)
            .map(|row| row.iter().zip(&dense).map(|(&w, &y)| w * y).sum::<f64>())
            .collect();
        if let Some(prev) = &last {
            let d: f64 = margins
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / 16.0;
            steps.push(d);
        }
        last = Some(margins);
    }
    let mean_step = steps.iter().sum::<f64>() / steps.len() as f64;
    println!("mean |margin step| per discovery: {:.5}", mean_step);
}
