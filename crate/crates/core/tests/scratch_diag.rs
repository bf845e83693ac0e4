//! Temporary calibration diagnostics.
use styleflow_core::data::{generate_synthetic_corpus, Corpus};
use styleflow_core::model::{Model, ModelConfig};
use styleflow_core::scorer::{train_scorer, ScorerTrainConfig, attention_split, TokenScorer};
use styleflow_core::train::{train, TrainConfig};
use styleflow_core::transfer::{encode, transfer};
use styleflow_core::data::StyleId;

#[test]
#[ignore]
fn diag_split_and_decode() {
    let train_corpus = generate_synthetic_corpus(0xA11CE, 1000, 200).unwrap();
    let test = Corpus {
        rows: generate_synthetic_corpus(0x7E57, 30, 200).unwrap().rows,
        vocab: train_corpus.vocab.clone(),
        style_names: train_corpus.style_names.clone(),
    };
    let (scorer, _) = train_scorer(&train_corpus, &ScorerTrainConfig {
        embed_dim: 32, hidden: 32, epochs: 4, seed: 11, input_noise: 0.3, ..ScorerTrainConfig::default()
    }).unwrap();
    let mut model = Model::new(ModelConfig {
        model_dim: 32, heads: 2, chain_len: 4, ff_dim: 32, ..ModelConfig::default()
    }, train_corpus.vocab.clone(), train_corpus.style_names.clone(), scorer, 101).unwrap();

    let polarity_words = ["great","good","wonderful","amazing","delicious","friendly","lovely","perfect","fantastic","excellent","awesome","tasty","charming","pleasant","superb","delightful","brilliant","cozy","fresh","generous","bad","awful","terrible","horrible","bland","rude","dirty","boring","mediocre","stale","cold","slow","greasy","noisy","cramped","overpriced","disappointing","sour","messy","broken"];
    let pol_ids: Vec<u32> = polarity_words.iter().filter_map(|w| train_corpus.vocab.id(w)).collect();

    let check = |model: &Model, tag: &str| {
        let mut in_style = 0; let mut total = 0;
        for seq in &test.rows {
            let z = encode(model, seq).unwrap();
            let p = z.partition.clone();
            let pol_pos: Vec<usize> = seq.ids.iter().enumerate().filter(|(_, id)| pol_ids.contains(id)).map(|(i, _)| i).collect();
            if pol_pos.len() == 1 {
                total += 1;
                if p.style.contains(&pol_pos[0]) { in_style += 1; }
            }
        }
        eprintln!("{tag}: polarity token in disentangle style-set {in_style}/{total}");
    };
    check(&model, "untrained");

    let tcfg = TrainConfig { lr: 2e-3, batch: 16, steps: Some(3000), seed: 7, ..TrainConfig::default() };
    let (m, _) = train(&mut model, &train_corpus, &tcfg, None).unwrap();
    eprintln!("phase1 losses: {:?}", m.last().unwrap().loss);
    check(&model, "trained");

    // Inspect a few transfers.
    for seq in test.rows.iter().take(6) {
        let target = StyleId(model.opposite_style(seq.label.0));
        let rec = transfer(&model, seq, target).unwrap();
        eprintln!("  src({}): {}", seq.label.0, seq.text(&model.vocab).unwrap());
        eprintln!("  out({}): {}", target.0, rec.output.text(&model.vocab).unwrap());
    }
}
