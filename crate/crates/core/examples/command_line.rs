//! Drives the `rhnmt` command line in-process: trains on a small parallel
//! corpus written to a scratch directory, translates with beam search,
//! scores the output and reruns training from the recorded manifest.
//!
//! The same steps with the binary:
//!
//! ```text
//! rhnmt train --src train.src --tgt train.tgt --hidden 32 --depth 2 --layers 1 --epochs 60 --out run
//! rhnmt translate --checkpoint run/model.ckpt --input train.src --output hyp.txt --beam-width 5
//! rhnmt score --candidate hyp.txt --reference train.tgt
//! rhnmt train --manifest run/run_manifest.json --out rerun
//! ```

use rhnmt::cli::run;
use rhnmt::data::write_lines;

fn rhnmt(args: &[&str]) {
    println!("$ rhnmt {}", args.join(" "));
    let code = run(std::iter::once("rhnmt").chain(args.iter().copied()));
    assert_eq!(code, 0, "rhnmt {} exited with {code}", args[0]);
}

fn main() -> rhnmt::Result<()> {
    let dir = std::env::temp_dir().join(format!("rhnmt-cli-{}", std::process::id()));
    let path = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let src = [
        "le chat dort",
        "le chien dort",
        "un chat mange",
        "un chien mange",
        "le chat mange le pain",
        "le chien voit un chat",
        "un chien dort",
        "le pain",
    ];
    let tgt = [
        "the cat sleeps",
        "the dog sleeps",
        "a cat eats",
        "a dog eats",
        "the cat eats the bread",
        "the dog sees a cat",
        "a dog sleeps",
        "the bread",
    ];
    std::fs::create_dir_all(&dir).map_err(|e| rhnmt::Error::Data(e.to_string()))?;
    write_lines(path("train.src"), &src)?;
    write_lines(path("train.tgt"), &tgt)?;

    let out = path("run");
    rhnmt(&[
        "train",
        "--src",
        &path("train.src"),
        "--tgt",
        &path("train.tgt"),
        "--hidden",
        "32",
        "--depth",
        "2",
        "--layers",
        "1",
        "--dropout",
        "0",
        "--batch-size",
        "4",
        "--epochs",
        "60",
        "--out",
        &out,
    ]);
    let checkpoint = format!("{out}/model.ckpt");
    rhnmt(&[
        "translate",
        "--checkpoint",
        &checkpoint,
        "--input",
        &path("train.src"),
        "--output",
        &path("hyp.txt"),
        "--beam-width",
        "5",
        "--nbest",
        &path("nbest.txt"),
    ]);
    for (s, h) in src.iter().zip(rhnmt::data::read_lines(path("hyp.txt"))?) {
        println!("  {s:<24} -> {h}");
    }
    rhnmt(&[
        "score",
        "--candidate",
        &path("hyp.txt"),
        "--reference",
        &path("train.tgt"),
    ]);
    rhnmt(&[
        "evaluate",
        "--checkpoint",
        &checkpoint,
        "--src",
        &path("train.src"),
        "--tgt",
        &path("train.tgt"),
    ]);

    let rerun = path("rerun");
    rhnmt(&[
        "train",
        "--manifest",
        &format!("{out}/run_manifest.json"),
        "--out",
        &rerun,
    ]);
    let a = std::fs::read(format!("{out}/train_log.tsv")).map_err(|e| rhnmt::Error::Data(e.to_string()))?;
    let b = std::fs::read(format!("{rerun}/train_log.tsv")).map_err(|e| rhnmt::Error::Data(e.to_string()))?;
    println!("rerun log identical: {}", a == b);
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
