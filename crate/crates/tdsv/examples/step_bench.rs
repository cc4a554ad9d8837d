use std::time::Instant;
use tdsv::attention::{AttentionMode, DVectorConfig, ScoringKind};
use tdsv::features::{generate_corpus, SynthSpec};
use tdsv::loss::{train_step, want_positive_at, OptimizerConfig, TupleSampler};
use tdsv::model::{Model, ModelConfig};
use tdsv::pooling::PoolingConfig;

fn main() {
    let spec = SynthSpec { num_speakers: 8, utterances_per_speaker: 8, seed: 1, ..SynthSpec::default() };
    let corpus = generate_corpus(&spec, 0).unwrap();
    let config = ModelConfig::standard(DVectorConfig {
        mode: AttentionMode::DividedLayer,
        scoring: ScoringKind::SharedNonLinear { hidden: 64 },
        pooling: PoolingConfig::sliding(10, 5),
    });
    let mut model = Model::init(config, 1).unwrap();
    let opt = OptimizerConfig::default();
    let mut sampler = TupleSampler::new(2, opt.tuple_size);
    let start = Instant::now();
    let n = 20;
    let mut last = 0.0;
    for step in 0..n {
        let tuple = sampler.build_tuple(&corpus, want_positive_at(step)).unwrap();
        last = train_step(&mut model, &tuple, &opt).unwrap().loss;
    }
    let dt = start.elapsed().as_secs_f64();
    println!("{} steps in {:.2}s => {:.0} ms/step (last loss {:.4})", n, dt, 1000.0*dt/n as f64, last);
}
