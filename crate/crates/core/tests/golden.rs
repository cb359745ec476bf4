use std::collections::BTreeMap;
use std::path::PathBuf;

use dietwise_core::analytics::{compute_metrics, parse_responses, sample_size, survey_summary, ConfusionCounts, SampleSizeSpec};
use dietwise_core::coco::{format_id_list, parse_coco, split, SplitSpec};
use dietwise_core::detection::{evaluate_reference, food_category_prompt};
use serde_json::Value;

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn read(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap()
}

#[test]
fn split_of_10596_matches_committed_golden_files() {
    let ids: Vec<u64> = (1..=10_596).collect();
    let s = split(&ids, &SplitSpec::standard(42)).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7418, 1589, 1589));
    assert_eq!(format_id_list(&s.train), read("splits/ids-10596-seed-42/train.txt"));
    assert_eq!(format_id_list(&s.val), read("splits/ids-10596-seed-42/val.txt"));
    assert_eq!(format_id_list(&s.test), read("splits/ids-10596-seed-42/test.txt"));
}

#[test]
fn food_fixture_split_matches_committed_golden_files() {
    let dataset = parse_coco(&read("coco/food.json")).unwrap();
    let s = split(&dataset.image_ids(), &SplitSpec::standard(7)).unwrap();
    for (name, ids) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        assert_eq!(format_id_list(ids), read(&format!("splits/food-seed-7/{name}.txt")), "{name}");
    }
}

/// Per-item `(sum, count)`.
type ItemSums = BTreeMap<String, (u64, u64)>;

/// Means and NPS straight from the raw JSON lines with integer arithmetic.
fn survey_oracle(document: &str) -> (ItemSums, (u64, u64, u64)) {
    let mut sums: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let (mut promoters, mut detractors, mut n) = (0, 0, 0);
    for line in document.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).unwrap();
        let item = v["item_id"].as_str().unwrap().to_string();
        let rating = v["rating"].as_u64().unwrap();
        if item == "nps" {
            n += 1;
            if rating >= 4 {
                promoters += 1;
            } else if rating <= 2 {
                detractors += 1;
            }
        } else {
            let e = sums.entry(item).or_default();
            e.0 += rating;
            e.1 += 1;
        }
    }
    (sums, (promoters, detractors, n))
}

/// `round(num / den, 2)` half-up, as hundredths.
fn hundredths(num: u64, den: u64) -> u64 {
    (200 * num + den) / (2 * den)
}

#[test]
fn survey_fixture_reproduces_reported_means_and_nps() {
    let document = read("survey/responses-385.jsonl");
    let (sums, (promoters, detractors, n)) = survey_oracle(&document);
    let expected = [
        ("user-friendliness", 420),
        ("suggestion-accuracy", 413),
        ("personalized-guidance", 404),
        ("privacy-trust", 447),
        ("contentment", 452),
        ("recommend-likelihood", 438),
    ];
    let summary = survey_summary(&parse_responses(&document).unwrap()).unwrap();
    assert_eq!(summary.respondents, 385);
    for (item, want) in expected {
        let (sum, count) = sums[item];
        assert_eq!(count, 385);
        assert_eq!(hundredths(sum, count), want, "oracle {item}");
        assert_eq!(summary.items[item].mean, want as f64 / 100.0, "library {item}");
    }
    let nps = summary.nps.unwrap();
    // Tenths of a point, half-up.
    let tenths = (2 * 1000 * (promoters - detractors) + n) / (2 * n);
    assert_eq!(tenths, 413);
    assert_eq!(nps.score, 41.3);
    assert_eq!((nps.promoters, nps.detractors), (promoters, detractors));
}

#[test]
fn reported_metrics_and_sample_size() {
    let m = compute_metrics(ConfusionCounts::new(1144, 254, 116, 75)).unwrap();
    let rendered: BTreeMap<_, _> = m.rendered().into_iter().collect();
    assert_eq!(rendered["precision"], "90.79%");
    assert_eq!(rendered["accuracy"], "87.98%");
    assert_eq!(rendered["f1"], "92.30%");
    // 1144 / 1219 = 93.847…%, which rounds to 93.85 rather than 93.84.
    assert_eq!(rendered["recall"], "93.85%");
    assert!((m.recall * 100.0 - 93.84).abs() <= 0.01);
    assert_eq!(sample_size(SampleSizeSpec { z: 1.96, p: 0.5, e: 0.05 }).unwrap(), 385);
}

#[test]
fn reference_detector_is_exact_on_the_food_fixture() {
    let dataset = parse_coco(&read("coco/food.json")).unwrap();
    assert_eq!(food_category_prompt(&dataset).phrases().len(), 10);
    let ids = dataset.image_ids();
    let counts = evaluate_reference(&dataset, &ids, 0.5).unwrap();
    assert_eq!((counts.fp, counts.fn_), (0, 0));
    assert_eq!(counts.tp, ids.len() as u64);
    let m = compute_metrics(counts).unwrap();
    assert_eq!((m.precision, m.recall), (1.0, 1.0));
}

#[test]
fn small_split_vector() {
    let ids: Vec<u64> = (1..=20).collect();
    let s = split(&ids, &SplitSpec::standard(42)).unwrap();
    assert_eq!(s.train, [17, 4, 9, 12, 18, 19, 5, 7, 20, 8, 11, 2, 15, 10]);
    assert_eq!(s.val, [13, 3, 6]);
    assert_eq!(s.test, [1, 16, 14]);
}
