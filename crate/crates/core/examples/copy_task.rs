//! Memorizes a 50-pair copy corpus, then decodes it back.
//!
//! ```text
//! cargo run --release --example copy_task
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhnmt::data::{encode_corpus, VocabOptions, Vocabulary};
use rhnmt::decode::{translate_all, DecodeConfig};
use rhnmt::metrics::{corpus_bleu, corpus_perplexity, Brevity};
use rhnmt::model::{ModelConfig, NmtModel};
use rhnmt::train::{train, TrainingConfig};

fn main() -> rhnmt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
    let lines: Vec<String> = (0..50)
        .map(|_| {
            let len = rng.random_range(3..=6);
            (0..len)
                .map(|_| words[rng.random_range(0..8)].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let vocab = Vocabulary::build(lines.iter().map(String::as_str), &VocabOptions::default())?;
    let pairs = encode_corpus(&lines.iter().map(|l| (l, l)).collect::<Vec<_>>(), &vocab, &vocab, 100);

    let mut model = NmtModel::new(
        ModelConfig {
            hidden: 32,
            depth: 2,
            layers: 1,
            src_vocab_size: vocab.len(),
            tgt_vocab_size: vocab.len(),
            coupled_carry: false,
            dropout: 0.0,
            beta: 0.0,
        },
        1,
    )?;
    let config = TrainingConfig {
        dropout: 0.0,
        beta: 0.0,
        epochs: 1000,
        max_steps: Some(300),
        ..TrainingConfig::default()
    };
    let log = train(&mut model, &pairs, None, &config, &mut ())?;
    for r in log.steps.iter().step_by(50).chain(log.steps.last()) {
        println!("step {:4}  L_d {:8.4}  ppl {:7.4}", r.step, r.l_d, r.perplexity);
    }

    let sources: Vec<Vec<usize>> = pairs.iter().map(|p| p.source_tokens().to_vec()).collect();
    let out = translate_all(&model, &sources, &DecodeConfig::default(), 4)?;
    let hyps: Vec<Vec<usize>> = out.iter().map(|n| n[0].tokens.clone()).collect();
    let exact = hyps.iter().zip(&sources).filter(|(h, s)| h == s).count();
    println!("perplexity {:.4}", corpus_perplexity(&model, &pairs, 32)?);
    println!("exact copies {exact}/{}", sources.len());
    println!("{}", corpus_bleu(&hyps, &sources, Brevity::Ratio)?);
    println!("{}  ->  {}", lines[0], vocab.decode(&hyps[0]).join(" "));
    Ok(())
}
