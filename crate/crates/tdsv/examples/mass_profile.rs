// One-off: where does attention mass sit? Splits silence into leading
// (before the first phoneme frame) and trailing, and prints mean pooled
// weight per frame index.
// Usage: mass_profile <config-file> <checkpoint>

use std::path::Path;

use tdsv::cli;
use tdsv::config::RunConfig;
use tdsv::features::Split;
use tdsv::model::Model;

fn main() {
    let mut args = std::env::args().skip(1);
    let cfg_path = args.next().expect("config path");
    let ckpt = args.next().expect("checkpoint path");
    let raw = args.next().as_deref() == Some("raw");
    let config = RunConfig::load(Path::new(&cfg_path)).unwrap();
    let mut model_config = config.model_config();
    if raw {
        model_config.dvec.pooling = tdsv::pooling::PoolingConfig::none();
    }
    let model = Model::load(model_config, Path::new(&ckpt)).unwrap();

    let corpus = cli::load_split(&config, Split::Heldout).unwrap();
    let frames = config.frames;
    let mut by_index = vec![0.0f64; frames];
    let (mut lead, mut n_lead, mut phon, mut n_phon, mut trail, mut n_trail) =
        (0.0, 0usize, 0.0, 0usize, 0.0, 0usize);
    for u in &corpus.utterances {
        let (_, alpha) = model.embed(&u.features);
        let alpha = alpha.expect("attention model");
        let first_phoneme = (0..frames)
            .find(|&t| !u.features.is_silence(t).unwrap())
            .unwrap_or(frames);
        for (t, &a) in alpha.iter().enumerate() {
            by_index[t] += a;
            if u.features.is_silence(t).unwrap() {
                if t < first_phoneme {
                    lead += a;
                    n_lead += 1;
                } else {
                    trail += a;
                    n_trail += 1;
                }
            } else {
                phon += a;
                n_phon += 1;
            }
        }
    }
    let n = corpus.utterances.len() as f64;
    println!(
        "mean per-frame mass: leading silence {:.6} ({n_lead}), phoneme {:.6} ({n_phon}), trailing silence {:.6} ({n_trail})",
        lead / n_lead as f64,
        phon / n_phon as f64,
        trail / n_trail as f64,
    );
    for (t, m) in by_index.iter().enumerate() {
        println!("{t},{:.6}", m / n);
    }
}
