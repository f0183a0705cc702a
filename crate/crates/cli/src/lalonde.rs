//! Synthetic job-training data with the column layout of the classic LaLonde extract.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, LogNormal, Normal};

use crate::error::CliResult;

pub const COLUMNS: [&str; 12] = [
    "age", "educ", "black", "hisp", "married", "nodegr", "re74", "re75", "u74", "u75", "treat", "re78",
];

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn bern(rng: &mut ChaCha8Rng, p: f64) -> f64 {
    f64::from(u8::from(Bernoulli::new(p.clamp(0.0, 1.0)).expect("p in [0, 1]").sample(rng)))
}

/// `n` rows of synthetic data, deterministic in `seed`.
pub fn generate(n: usize, seed: u64) -> Vec<[f64; 12]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let earn = LogNormal::new(8.3_f64, 0.9).expect("valid");
    let unit = Normal::new(0.0_f64, 1.0).expect("valid");
    let noise = Normal::new(0.0_f64, 3000.0).expect("valid");
    (0..n)
        .map(|_| {
            let age = (17.0 + 21.0 * rng.random::<f64>().powf(1.6)).round();
            let educ = (10.2 + 1.8 * unit.sample(&mut rng)).round().clamp(3.0, 16.0);
            let black = bern(&mut rng, 0.83);
            let hisp = if black == 1.0 { 0.0 } else { bern(&mut rng, 0.55) };
            let married = bern(&mut rng, 0.17);
            let nodegr = f64::from(u8::from(educ < 12.0));
            let u74 = bern(&mut rng, 0.73);
            let u75 = bern(&mut rng, if u74 == 1.0 { 0.75 } else { 0.35 });
            let re74 = if u74 == 1.0 { 0.0 } else { earn.sample(&mut rng).round() };
            let re75 = if u75 == 1.0 { 0.0 } else { earn.sample(&mut rng).round() };
            let score = -0.3 + 0.03 * (age - 25.0) + 0.1 * (educ - 10.0) - 0.4 * nodegr + 0.2 * married - 0.2 * u75;
            let treat = bern(&mut rng, sigmoid(score));
            let lin = 4200.0 + 1700.0 * treat + 120.0 * (age - 25.0) + 350.0 * (educ - 10.0) - 1300.0 * black
                + 900.0 * married - 600.0 * nodegr
                + 0.15 * re74
                + 0.25 * re75
                + treat * (450.0 * (age - 25.0) + 800.0 * (educ - 10.0) - 3000.0 * nodegr - 0.4 * re74);
            let zero = bern(&mut rng, sigmoid(-1.2 - 0.5 * treat + 0.6 * u75 + 0.4 * black));
            let re78 = if zero == 1.0 {
                0.0
            } else {
                (lin + noise.sample(&mut rng)).max(0.0).round()
            };
            [age, educ, black, hisp, married, nodegr, re74, re75, u74, u75, treat, re78]
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[[f64; 12]], w: W) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(COLUMNS)?;
    for r in rows {
        wtr.write_record(r.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}
