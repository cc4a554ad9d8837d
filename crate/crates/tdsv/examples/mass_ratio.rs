// One-off: phoneme/silence attention mass ratio for a trained checkpoint.
// Usage: mass_ratio <config-file> <checkpoint>

use std::path::Path;

use tdsv::cli;
use tdsv::config::RunConfig;
use tdsv::features::Split;
use tdsv::model::Model;

fn main() {
    let mut args = std::env::args().skip(1);
    let cfg_path = args.next().expect("config path");
    let ckpt = args.next().expect("checkpoint path");
    let config = RunConfig::load(Path::new(&cfg_path)).unwrap();
    let model = Model::load(config.model_config(), Path::new(&ckpt)).unwrap();

    let corpus = cli::load_split(&config, Split::Heldout).unwrap();
    let (mut mass_p, mut n_p, mut mass_s, mut n_s) = (0.0, 0usize, 0.0, 0usize);
    for u in &corpus.utterances {
        let (_, alpha) = model.embed(&u.features);
        let alpha = alpha.expect("attention model");
        for (t, &a) in alpha.iter().enumerate() {
            if u.features.is_silence(t).expect("labeled corpus") {
                mass_s += a;
                n_s += 1;
            } else {
                mass_p += a;
                n_p += 1;
            }
        }
    }
    let ratio = (mass_p / n_p as f64) / (mass_s / n_s as f64);
    println!("phoneme frames {n_p}, silence frames {n_s}, mass ratio {ratio:.4}");
}
