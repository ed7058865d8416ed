// Scratch experiment for sizing the desk-scale run; not part of the suite.
#![allow(dead_code)]

use std::time::Instant;

use eggscan_core::categories::CategoryId;
use eggscan_core::classifier::{classify, create_feature_extractor, train_svm, SvmConfig};
use eggscan_core::dataset::{
    crop_box, preprocess_for_classifier, split_dataset, synth_generate, AnnotatedImage,
    SplitSpec, SynthConfig,
};
use eggscan_core::detector::{detect, train_detector, DetectorConfig};
use eggscan_core::eval::{build_report, iou, match_detections};
use eggscan_core::fusion::{final_label, fuse_average};

#[test]
#[ignore]
fn desk_scale_experiment() {
    let t0 = Instant::now();
    let synth = SynthConfig {
        image_size: 256,
        per_class_count: 60,
        noise_sigma: 8.0,
        seed: 31,
    };
    let images = synth_generate(&synth, 31).unwrap();
    let spec = SplitSpec {
        train_frac: 5.0 / 6.0,
        val_frac: 0.0,
        test_frac: 1.0 / 6.0,
        seed: 7,
    };
    let (train, _val, test) = split_dataset(images, &spec).unwrap();
    println!("split: {} train / {} test, {:?}", train.len(), test.len(), t0.elapsed());

    let det_config = DetectorConfig {
        epochs: std::env::var("EXP_EPOCHS").ok().and_then(|s| s.parse().ok()).unwrap_or(20),
        learning_rate: std::env::var("EXP_LR").ok().and_then(|s| s.parse().ok()).unwrap_or(2e-4),
        batch_size: 4,
        ..Default::default()
    };
    let t1 = Instant::now();
    let det_model = train_detector(&train, &[], &det_config, 99).unwrap();
    println!(
        "detector trained in {:?}; first/last loss {:.4} -> {:.4}",
        t1.elapsed(),
        det_model.training_log.entries.first().unwrap().train_loss,
        det_model.training_log.entries.last().unwrap().train_loss
    );

    let t2 = Instant::now();
    let extractor = create_feature_extractor("tiny-frozen").unwrap();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for img in &train {
        for (b, c) in &img.annotations {
            let crop = crop_box(img, b).unwrap();
            let normalized = preprocess_for_classifier(&crop).unwrap();
            feats.push(extractor.extract(&normalized).unwrap());
            labels.push(*c);
        }
    }
    println!("features extracted in {:?}", t2.elapsed());
    let t3 = Instant::now();
    let svm = train_svm(&feats, &labels, &SvmConfig::default(), &[], &[]).unwrap();
    println!(
        "svm trained in {:?}; train accuracy {:.4}",
        t3.elapsed(),
        svm.train_accuracy
    );

    // End-to-end on test.
    let t4 = Instant::now();
    let mut matched = 0usize;
    let mut det_label_ok = 0usize;
    let mut svm_label_ok = 0usize;
    let mut fused_ok = 0usize;
    let mut no_det = 0usize;
    let mut iou_sum = 0.0;
    for img in &test {
        let dets = detect(&det_model, img).unwrap();
        let (gt_box, gt_cat) = img.annotations[0];
        let Some(best) = dets.first() else {
            no_det += 1;
            continue;
        };
        let overlap = iou(&best.bbox, &gt_box);
        iou_sum += overlap;
        if overlap >= 0.5 {
            matched += 1;
        }
        let crop = crop_box(img, &best.bbox).unwrap();
        let normalized = preprocess_for_classifier(&crop).unwrap();
        let f = extractor.extract(&normalized).unwrap();
        let svm_scores = classify(&svm, &f).unwrap();
        let fused = fuse_average(&best.scores, &svm_scores).unwrap();
        if best.scores.argmax().0 == gt_cat {
            det_label_ok += 1;
        }
        if svm_scores.argmax().0 == gt_cat {
            svm_label_ok += 1;
        }
        if final_label(&fused).0 == gt_cat {
            fused_ok += 1;
        }
    }
    let n = test.len();
    println!(
        "eval in {:?}: matched {}/{} mean-iou {:.3} | det-label {}/{} svm-label {}/{} fused {}/{} | no-det {}",
        t4.elapsed(), matched, n, iou_sum / n as f64, det_label_ok, n, svm_label_ok, n, fused_ok, n, no_det
    );
    println!("TOTAL {:?}", t0.elapsed());

    let _ = (match_detections("x", &[], &[], 0.5), build_report(&[], 20));
    let _ = CategoryId::new(0);
}
