//! Temporary: inspect per-layer splits of the trained model.
use styleflow_core::data::{generate_synthetic_corpus, Corpus};
use styleflow_core::flow::LayerSplit;
use styleflow_core::model::{Model, ModelConfig};
use styleflow_core::scorer::{train_scorer, ScorerTrainConfig};
use styleflow_core::train::{train, TrainConfig};
use styleflow_core::transfer::{encode, self_reconstruct};

#[test]
#[ignore]
fn diag_layer_splits() {
    let train_corpus = generate_synthetic_corpus(0xA11CE, 1000, 200).unwrap();
    let test = Corpus {
        rows: generate_synthetic_corpus(0x7E57, 40, 200).unwrap().rows,
        vocab: train_corpus.vocab.clone(),
        style_names: train_corpus.style_names.clone(),
    };
    let (scorer, _) = train_scorer(&train_corpus, &ScorerTrainConfig {
        embed_dim: 32, hidden: 32, epochs: 4, seed: 11, ..ScorerTrainConfig::default()
    }).unwrap();
    let mut model = Model::new(ModelConfig {
        model_dim: 32, heads: 2, chain_len: 4, ff_dim: 32, ..ModelConfig::default()
    }, train_corpus.vocab.clone(), train_corpus.style_names.clone(), scorer, 101).unwrap();

    let report = |model: &Model, tag: &str| {
        for seq in test.rows.iter().take(4) {
            let z = encode(model, seq).unwrap();
            let splits: Vec<Vec<usize>> = z.splits.iter().map(|s| match s {
                LayerSplit::Tokens(p) => p.style.clone(),
                LayerSplit::Channel => vec![],
            }).collect();
            eprintln!("{tag} {:?} | layer styles {:?} | disentangle {:?}",
                seq.text(&model.vocab).unwrap(), splits, z.partition.style);
        }
        // recon accuracy
        let mut hit = 0; let mut tot = 0;
        for seq in &test.rows {
            let rec = self_reconstruct(model, seq).unwrap();
            hit += rec.output.ids.iter().zip(&seq.ids).filter(|(a, b)| a == b).count();
            tot += seq.ids.len();
        }
        eprintln!("{tag}: self-recon token accuracy {:.4}", hit as f64 / tot as f64);
    };
    report(&model, "untrained");
    let tcfg = TrainConfig { lr: 2e-3, batch: 16, steps: Some(3000), seed: 7, ..TrainConfig::default() };
    train(&mut model, &train_corpus, &tcfg, None).unwrap();
    report(&model, "trained");
}
