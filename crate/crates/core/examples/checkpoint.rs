//! Saves a briefly trained model with its vocabularies, reloads it, and
//! checks that the reloaded model translates identically.
//!
//! ```text
//! cargo run --release --example checkpoint
//! ```

use rhnmt::data::{encode_corpus, VocabOptions, Vocabulary};
use rhnmt::decode::{translate, DecodeConfig};
use rhnmt::model::{load_checkpoint, save_checkpoint, ModelConfig, NmtModel};
use rhnmt::train::{train, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lines = [
        ("ich sehe das haus", "i see the house"),
        ("das haus ist gross", "the house is big"),
        ("ich bin gross", "i am big"),
        ("das ist gut", "that is good"),
    ];
    let opts = VocabOptions::default();
    let src = Vocabulary::build(lines.iter().map(|(s, _)| *s), &opts)?;
    let tgt = Vocabulary::build(lines.iter().map(|(_, t)| *t), &opts)?;
    let pairs = encode_corpus(&lines, &src, &tgt, 100);
    let config = ModelConfig {
        hidden: 32,
        depth: 2,
        layers: 2,
        src_vocab_size: src.len(),
        tgt_vocab_size: tgt.len(),
        coupled_carry: false,
        dropout: 0.0,
        beta: 0.1,
    };
    let mut model = NmtModel::new(config, 2)?;
    let training = TrainingConfig {
        batch_size: 4,
        epochs: 300,
        dropout: 0.0,
        ..TrainingConfig::default()
    };
    let log = train(&mut model, &pairs, None, &training, &mut ())?;
    let last = log.steps.last().expect("at least one step");
    println!("trained {} steps, L_d {:.4}", last.step, last.l_d);

    let dir = std::env::temp_dir().join(format!("rhnmt-checkpoint-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&path, &model, &src, &tgt)?;
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    let restored = load_checkpoint(&path)?;
    restored.verify_vocabs(&src, &tgt)?;
    let beam = DecodeConfig {
        beam_width: 3,
        max_len: None,
    };
    for pair in &pairs {
        let before = translate(&model, pair.source_tokens(), &beam)?;
        let after = translate(&restored.model, pair.source_tokens(), &beam)?;
        assert_eq!(before, after);
        println!(
            "{:<22} -> {}",
            src.decode(pair.source_tokens()).join(" "),
            tgt.decode(&after[0].tokens).join(" ")
        );
    }
    println!("reloaded model decodes identically");
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
