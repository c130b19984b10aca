use caggnet::data_io::{gen_synthetic, read_dataset, split, write_dataset, Dataset, Sample, SynthConfig};
use caggnet::metrics::MetricsReport;
use caggnet::Tensor4;

fn dataset() -> Dataset<f64> {
    let samples: Vec<Sample<f64>> = gen_synthetic(&SynthConfig {
        count: 8,
        size: 16,
        radius_min: 2.0,
        radius_max: 4.0,
        ..Default::default()
    })
    .unwrap();
    let (train, val) = split(samples, 0.75, 3).unwrap();
    Dataset { train, val }
}

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["images", "masks"] {
        for e in std::fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            out.push((
                format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()),
                std::fs::read(&p).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

#[test]
fn dataset_round_trip_is_stable() {
    let t = tempfile::tempdir().unwrap();
    let d = dataset();
    write_dataset(&t.path().join("a"), &d).unwrap();
    let back: Dataset<f64> = read_dataset(&t.path().join("a"), None).unwrap();
    assert_eq!((back.train.len(), back.val.len()), (6, 2));
    for (a, b) in d.train.iter().chain(&d.val).zip(back.train.iter().chain(&back.val)) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.mask, b.mask);
        // images are quantised to 8 bits on disk
        assert!(a.image.max_abs_diff(&b.image).unwrap() <= 0.5 / 255.0 + 1e-12);
    }
    write_dataset(&t.path().join("b"), &back).unwrap();
    assert_eq!(files(&t.path().join("a")), files(&t.path().join("b")));

    let small: Dataset<f64> = read_dataset(&t.path().join("a"), Some((8, 8))).unwrap();
    for s in small.train.iter().chain(&small.val) {
        assert_eq!((s.image.shape().h, s.image.shape().w, s.mask.shape().h), (8, 8, 8));
    }
}

#[test]
fn perfect_and_inverted_predictions() {
    let d = dataset();
    let all: Vec<&Sample<f64>> = d.train.iter().chain(&d.val).collect();
    let ids: Vec<String> = all.iter().map(|s| s.id.clone()).collect();
    let masks: Vec<Tensor4<f64>> = all.iter().map(|s| s.mask.clone()).collect();

    let perfect = MetricsReport::evaluate(&ids, &masks, &masks, 0.5).unwrap();
    assert_eq!((perfect.mean_iou, perfect.mean_f1, perfect.pooled.iou), (1.0, 1.0, 1.0));

    let inverted: Vec<Tensor4<f64>> = masks.iter().map(|m| m.map("invert", |v| 1.0 - v).unwrap()).collect();
    let worst = MetricsReport::evaluate(&ids, &inverted, &masks, 0.5).unwrap();
    assert_eq!((worst.mean_iou, worst.pooled.iou), (0.0, 0.0));
    let pixels: u64 = masks.iter().map(|m| m.len() as u64).sum();
    assert_eq!(worst.pooled.counts.total(), pixels);
    assert_eq!(worst.pooled.counts.tp + worst.pooled.counts.tn, 0);

    let csv = perfect.to_csv();
    assert_eq!(csv.lines().count(), 1 + ids.len() + 2);
}
