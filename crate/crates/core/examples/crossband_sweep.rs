//! Prints held-out cross-band reconstruction error against neighbourhood
//! radius for a synthetic impulse response.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rts_dereverb::crossband::{
    identify_crossband_filters, reconstruction_error_db, IdentifyOptions,
};
use rts_dereverb::rir::{synth_polack_rir, PolackParams};
use rts_dereverb::{StftConfig, Waveform};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let probe_seconds: f64 = args.get(1).map_or(100.0, |s| s.parse().unwrap());
    let mut params = PolackParams::new(0.5, 7);
    params.duration_s = 0.5;
    let rir = synth_polack_rir(&params).unwrap();
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let test = Waveform::new(
        (0..16000 * 5)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect(),
        16000,
    )
    .unwrap();
    let opts = IdentifyOptions {
        probe_seconds,
        seed: 1,
        ..Default::default()
    };
    for l in [0usize, 1, 2, 4, 8] {
        let t = Instant::now();
        let (bank, diag) = identify_crossband_filters(rir.wave(), &cfg, l, &opts).unwrap();
        let fit = t.elapsed();
        let err = reconstruction_error_db(&bank, rir.wave(), &test).unwrap();
        println!(
            "l={l} error_db={err:.3} taps={} rows={} deficient={} fit={:?} total={:?}",
            bank.n_taps(),
            diag.rows,
            diag.rank_deficient_bands.len(),
            fit,
            t.elapsed()
        );
    }
}
