//! Identification with a 60-20-20 split and multi-beat fusion.

use pulsegate::beats::{segment_annotated, subjects};
use pulsegate::identify::{
    evaluate_identify, fused_accuracy, select, train_identify, IdentifyArch, IdentifyModel,
    Partition, SplitPlan,
};
use pulsegate::signal::{synth_corpus, SynthConfig};
use pulsegate::train::TrainConfig;

fn main() -> pulsegate::Result<()> {
    let records = synth_corpus(&SynthConfig {
        subjects: 4,
        beats: 60,
        ..SynthConfig::default()
    })?;
    let beats = segment_annotated(&records)?.beats;
    let plan = SplitPlan::train_val_test(&beats, 0.6, 0.2, 7)?;
    let run = &plan.runs()[0];
    let mut model = IdentifyModel::new(subjects(&beats), IdentifyArch::default(), 7)?;
    let history = train_identify(
        &mut model,
        &select(&beats, run, Partition::Train),
        &select(&beats, run, Partition::Val),
        &TrainConfig::new(12, 7),
    )?;
    for e in &history {
        println!(
            "epoch {} loss {:.4} val acc {:?}",
            e.epoch, e.train_loss, e.val_accuracy
        );
    }
    let test = select(&beats, run, Partition::Test);
    let eval = evaluate_identify(&model, &test)?;
    println!(
        "test accuracy {:.3}, macro F1 {:.3}",
        eval.metrics.accuracy, eval.metrics.f1
    );
    for k in [1, 3, 5] {
        let f = fused_accuracy(&model, &test, k)?;
        println!(
            "{k}-beat fusion: {:.3} over {} decisions",
            f.accuracy, f.decisions
        );
    }
    print!("{}", eval.confusion.to_csv(&model.classes));
    Ok(())
}
