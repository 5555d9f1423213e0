mod common;

use common::*;
use gestalt_core::dataio::synth::SynthConfig;
use gestalt_core::dataio::AugmentationPolicy;
use gestalt_core::gestaltnet::{
    finetune_region, pretrain_region, top1_accuracy, train_step, transfer, LayerState, Phase, RegionModel,
};
use gestalt_core::nn::{batch_softmax_cross_entropy, Checkpoint, OptimizerKind, OptimizerState, Tensor4};
use gestalt_core::preproc::{RegionCrop, RegionTag};
use gestalt_core::rng::stream;
use std::sync::OnceLock;

/// One pretrained eyes model on ten synthetic identities, shared by tests.
fn pretrained() -> &'static (RegionModel, f64) {
    static CELL: OnceLock<(RegionModel, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let all = samples(&SynthConfig::identities(10, 20, 11));
        let (train, val) = split_tail(all, 20, 4);
        let (t, v) = (crops_of(&train, RegionTag::Eyes), crops_of(&val, RegionTag::Eyes));
        let (model, metrics) = pretrain_region(&small_arch(), &t, Some(&v), &schedule(4, 1, 1), 5).unwrap();
        assert_eq!(metrics.len(), 5);
        let acc = top1_accuracy(&model, &v).unwrap();
        (model, acc)
    })
}

#[test]
fn short_pretraining_beats_chance() {
    let (model, acc) = pretrained();
    assert_eq!(model.phase, Phase::Pretrained);
    assert!(*acc > 0.1, "held-out top-1 {acc} not above 1/10");
}

fn classes(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

#[test]
fn transfer_keeps_everything_but_the_head() {
    let (base, _) = pretrained();
    let ft = transfer(base, &classes(4), 0.3, 9).unwrap();
    assert_eq!(ft.phase, Phase::Finetuned);
    let (a, b) = (base.net.layers(), ft.net.layers());
    assert_eq!(a.len(), b.len());
    let last = a.len() - 1;
    for i in 0..last {
        assert!(a[i] == b[i], "layer {i} changed");
    }
    match &b[last] {
        LayerState::Dense { weight, bias } => {
            assert_eq!(weight.shape()[0], 4);
            assert!(bias.iter().all(|&x| x == 0.0));
        }
        other => panic!("last layer is not dense: {other:?}"),
    }
    assert!(transfer(&ft, &classes(4), 0.3, 9).is_err(), "fine-tuned models are not bases");
}

fn probe_crops(n: usize) -> Vec<RegionCrop> {
    let s = samples(&SynthConfig::syndromes(2, n, 21));
    crops_of(&s, RegionTag::Eyes).crops
}

#[test]
fn zero_head_scale_gives_uniform_scores() {
    let (base, _) = pretrained();
    let ft = transfer(base, &classes(5), 0.0, 1).unwrap();
    let crops = probe_crops(3);
    let refs: Vec<&RegionCrop> = crops.iter().collect();
    for s in ft.predict_many(&refs).unwrap() {
        for &p in s.scores() {
            assert!((p - 0.2).abs() < 1e-12, "score {p}");
        }
    }
}

#[test]
fn full_batch_loss_does_not_increase() {
    let (base, _) = pretrained();
    let data = crops_of(&samples(&SynthConfig::syndromes(3, 6, 4)), RegionTag::Eyes);
    let mut model = transfer(base, &data.classes, 0.3, 2).unwrap();
    // Dropout off so every step sees the same function.
    let mut arch = model.net.arch().clone();
    for l in &mut arch.layers {
        if let gestalt_core::gestaltnet::LayerSpec::Dropout { rate } = l {
            *rate = 0.0;
        }
    }
    model.net = gestalt_core::gestaltnet::Network::from_parts(arch, model.net.layers().to_vec()).unwrap();
    let batch = Tensor4::stack(
        &data
            .crops
            .iter()
            .map(|c| Tensor4::from_vec([1, 1, SIDE, SIDE], c.pixels.data().to_vec()).unwrap())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let loss_of = |net: &mut gestalt_core::gestaltnet::Network<f32>| {
        let (logits, _) = net.clone().forward_train(&batch, &mut stream(0, &[])).unwrap();
        batch_softmax_cross_entropy(&logits, &data.labels, None).unwrap().0 as f64
    };
    let mut opt = OptimizerState::new(OptimizerKind::sgd(1e-3, 0.0), &model.net.param_sizes());
    let mut prev = loss_of(&mut model.net);
    for step in 0..10 {
        train_step(&mut model.net, &mut opt, &batch, &data.labels, None, 0).unwrap();
        let now = loss_of(&mut model.net);
        assert!(now <= prev + 1e-7, "step {step}: loss rose {prev} -> {now}");
        prev = now;
    }
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let (base, _) = pretrained();
    let data = crops_of(&samples(&SynthConfig::syndromes(3, 8, 6)), RegionTag::Eyes);
    let mut sched = schedule(1, 1, 2);
    sched.augmentation = AugmentationPolicy::disabled();
    let (ft, _) = finetune_region(base, &data, None, &sched, 0.3, 3).unwrap();
    let bytes = ft.to_checkpoint().encode().unwrap();
    let back = RegionModel::from_checkpoint(&Checkpoint::decode(&bytes).unwrap()).unwrap();
    assert_eq!(back.to_checkpoint().encode().unwrap(), bytes);
    let refs: Vec<&RegionCrop> = data.crops.iter().collect();
    let (a, b) = (ft.logits(&refs).unwrap(), back.logits(&refs).unwrap());
    assert!(a == b, "logits differ after reload");
}

#[test]
fn inference_ignores_batch_composition() {
    let (base, _) = pretrained();
    let crops = probe_crops(20);
    let all: Vec<&RegionCrop> = crops.iter().collect();
    let together = base.logits(&all).unwrap();
    for (i, c) in crops.iter().enumerate() {
        let alone = base.logits(&[c]).unwrap();
        assert!(alone[0] == together[i], "crop {i} scored differently alone");
    }
    let reversed: Vec<&RegionCrop> = crops.iter().rev().collect();
    let mut back = base.logits(&reversed).unwrap();
    back.reverse();
    assert!(back == together);
}
