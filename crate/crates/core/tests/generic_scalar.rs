//! The training pipeline in single precision.

use mmdcal::data::{split, synth_heteroscedastic, SplitSpec, SynthSpec};
use mmdcal::metrics::{ConfidenceGrid, CalibrationReport};
use mmdcal::model::HnnModel;
use mmdcal::train::{evaluate_nll, train_two_stage, TrainConfig};

#[test]
fn two_stage_training_in_f32() {
    let data = synth_heteroscedastic(&SynthSpec::new(600, 4)).unwrap();
    let s = split::<f32>(&data, &SplitSpec::default()).unwrap();
    let cfg = TrainConfig {
        lr: 1e-2,
        stage1_epochs: 30,
        stage2_epochs: 5,
        batch_size: 64,
        ..Default::default()
    };
    let init = HnnModel::<f32>::init(1, 16, 4).unwrap();
    let before = evaluate_nll(&init, &s.val).unwrap();
    let (model, trace) = train_two_stage(init, &s.train, &s.val, &cfg).unwrap();
    assert!(evaluate_nll(&model, &s.val).unwrap() < before);
    assert!(trace.stage(2).next().is_some());

    let preds = model.predict_distribution(&s.test.x).unwrap();
    let r = CalibrationReport::gaussian("hnn+mmd", &preds, &s.test.y, &ConfidenceGrid::default()).unwrap();
    assert!(r.ecpe.is_finite() && r.ecpe < 0.5);
}
