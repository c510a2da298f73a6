//! Calibration metrics: record validation, the binning convention, the
//! calibration-error estimators, ranking separation, and the file formats —
//! each checked against hand computations or a brute-force rebuild.

use adh_core::metrics::{
    accuracy, auroc, bin_records, confidence_entropy, ece, ece2, ece2_binned, nll,
    read_records_jsonl, read_reliability_csv, records_from_logits, reliability_rows,
    top_confidences, write_confidence_histogram_csv, write_records_jsonl, write_reliability_csv,
    BinPopulation, ConfidencePmf, PredictionRecord, NLL_CLAMP,
};
use ndarray::array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rec(confidences: &[f64], truth: usize) -> PredictionRecord {
    PredictionRecord::new(confidences.to_vec(), truth).unwrap()
}

fn assert_close(got: f64, want: f64, tol: f64, what: &str) {
    assert!((got - want).abs() <= tol, "{what}: got {got}, want {want}");
}

// ---------------------------------------------------------------- records

#[test]
fn record_validates_the_simplex_with_a_fixed_tolerance() {
    // Inside the 1e-9 tolerance band the record is accepted...
    assert!(PredictionRecord::new(vec![0.6, 0.4 + 5e-10], 0).is_ok());
    assert!(PredictionRecord::new(vec![0.6, 0.4 - 5e-10], 0).is_ok());
    // ...outside it the sum check fires.
    assert!(PredictionRecord::new(vec![0.6, 0.4 + 5e-9], 0).is_err());
    assert!(PredictionRecord::new(vec![0.6, 0.4 - 5e-9], 0).is_err());
    // Components may dip below zero only within the same tolerance.
    assert!(PredictionRecord::new(vec![1.0 + 5e-10, -5e-10], 0).is_ok());
    assert!(PredictionRecord::new(vec![1.01, -0.01], 0).is_err());
    // NaN and infinity never pass.
    assert!(PredictionRecord::new(vec![f64::NAN, 1.0], 0).is_err());
    assert!(PredictionRecord::new(vec![f64::INFINITY, 0.0], 0).is_err());
    // Structural checks: at least two classes, truth in range.
    assert!(PredictionRecord::new(vec![1.0], 0).is_err());
    assert!(PredictionRecord::new(vec![0.5, 0.5], 2).is_err());
}

#[test]
fn record_derives_prediction_as_lowest_argmax() {
    let r = rec(&[0.2, 0.5, 0.3], 2);
    assert_eq!(r.predicted(), 1);
    assert_eq!(r.top_confidence(), 0.5);
    assert!(!r.is_correct());
    // Ties resolve to the lowest index.
    let tied = rec(&[0.4, 0.4, 0.2], 0);
    assert_eq!(tied.predicted(), 0);
    assert!(tied.is_correct());
}

#[test]
fn records_from_logits_applies_row_softmax() {
    let logits = array![[2.0, 0.0, -1.0], [0.0, 0.0, 3.0]];
    let records = records_from_logits(&logits, &[0, 1]).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].predicted(), 0);
    assert_eq!(records[1].predicted(), 2);
    // Row softmax, spelled out for the first row.
    let e: Vec<f64> = [2.0f64, 0.0, -1.0].iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    for (got, want) in records[0].confidences().iter().zip(&e) {
        assert_close(*got, want / s, 1e-15, "softmax component");
    }
    assert_eq!(records[0].truth(), 0);
    assert!(records[0].is_correct());
    assert!(!records[1].is_correct());
    // Row/label count mismatch is rejected.
    assert!(records_from_logits(&logits, &[0]).is_err());
}

#[test]
fn top_confidences_reads_records_in_order() {
    let records = vec![rec(&[0.9, 0.1], 0), rec(&[0.3, 0.7], 1)];
    assert_eq!(top_confidences(&records), vec![0.9, 0.7]);
}

// ---------------------------------------------------------------- binning

#[test]
fn bins_are_right_closed_with_the_first_closed_at_zero() {
    // Three bins: (0, 1/3] (including 0 itself), (1/3, 2/3], (2/3, 1].
    // Three-class records place any top confidence >= 1/3 on a valid simplex.
    let third = 1.0 / 3.0;
    let two_thirds = 2.0 / 3.0;
    let cases = [
        (third, 0usize),      // exactly on the first edge -> first bin
        (0.34, 1usize),       // just past the edge -> second bin
        (0.5, 1usize),
        (two_thirds, 1usize), // exactly on the second edge -> second bin
        (0.67, 2usize),
        (1.0, 2usize),
    ];
    for (c, want_bin) in cases {
        let r = rec(&[c, (1.0 - c) / 2.0, (1.0 - c) / 2.0], 0);
        let binned = bin_records(&[r], 3, BinPopulation::MaxComponent).unwrap();
        for b in 0..3 {
            let want = usize::from(b == want_bin);
            assert_eq!(binned.count(b), want, "confidence {c}, bin {b}");
        }
    }
}

#[test]
fn all_components_population_bins_every_class_entry() {
    // One record (0.7, 0.3, 0.0), truth 0, three bins:
    //   0.7 -> bin 2, correct; 0.3 -> bin 0, wrong; 0.0 -> bin 0, wrong.
    let binned =
        bin_records(&[rec(&[0.7, 0.3, 0.0], 0)], 3, BinPopulation::AllComponents).unwrap();
    assert_eq!(binned.total(), 3);
    assert_eq!((binned.count(0), binned.count(1), binned.count(2)), (2, 0, 1));
    assert_close(binned.mean_confidence(0), 0.15, 1e-15, "bin 0 mean confidence");
    assert_eq!(binned.accuracy(0), 0.0);
    assert_eq!(binned.accuracy(2), 1.0);
    // ECE = 2/3 * |0 - 0.15| + 1/3 * |1 - 0.7| = 0.2.
    assert_close(ece(&binned), 0.2, 1e-15, "all-components ece");
}

#[test]
fn binning_rejects_degenerate_inputs() {
    assert!(bin_records(&[], 3, BinPopulation::MaxComponent).is_err());
    assert!(bin_records(&[rec(&[0.5, 0.5], 0)], 0, BinPopulation::MaxComponent).is_err());
    // Mixed class counts cannot share a table.
    let mixed = vec![rec(&[0.5, 0.5], 0), rec(&[0.4, 0.3, 0.3], 0)];
    assert!(bin_records(&mixed, 3, BinPopulation::MaxComponent).is_err());
}

#[test]
fn ece_matches_a_hand_computed_table() {
    // Both records land in the upper of two bins: mean confidence 0.75,
    // accuracy 1/2, so ECE = |1/2 - 3/4| = 1/4.
    let records = vec![rec(&[0.9, 0.1], 0), rec(&[0.6, 0.4], 1)];
    let binned = bin_records(&records, 2, BinPopulation::MaxComponent).unwrap();
    assert_eq!(binned.count(0), 0);
    assert_eq!(binned.count(1), 2);
    assert_close(ece(&binned), 0.25, 1e-15, "two-record ece");
}

#[test]
fn ece_matches_brute_force_on_random_records() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..50 {
        let n_bins = rng.random_range(1..=20);
        let records: Vec<PredictionRecord> = (0..rng.random_range(1..=120))
            .map(|_| {
                let a: f64 = rng.random();
                let top = 0.5 + a / 2.0;
                rec(&[top, 1.0 - top], usize::from(rng.random::<f64>() < 0.5))
            })
            .collect();
        let binned = bin_records(&records, n_bins, BinPopulation::MaxComponent).unwrap();

        // Brute force: re-bin from scratch with the documented convention.
        let mut conf = vec![0.0; n_bins];
        let mut correct = vec![0usize; n_bins];
        let mut count = vec![0usize; n_bins];
        for r in &records {
            let c = r.top_confidence();
            let b = (((c * n_bins as f64).ceil() as isize - 1).clamp(0, n_bins as isize - 1)) as usize;
            conf[b] += c;
            correct[b] += usize::from(r.is_correct());
            count[b] += 1;
        }
        let mut want = 0.0;
        let mut want2 = 0.0;
        for b in 0..n_bins {
            if count[b] == 0 {
                continue;
            }
            let gap = correct[b] as f64 / count[b] as f64 - conf[b] / count[b] as f64;
            let w = count[b] as f64 / records.len() as f64;
            want += w * gap.abs();
            want2 += w * gap * gap;
        }
        assert_close(ece(&binned), want, 1e-13, &format!("ece case {case}"));
        assert_close(ece2_binned(&binned), want2.sqrt(), 1e-13, &format!("ece2 case {case}"));
    }
}

// ---------------------------------------------------------------- L2 error

#[test]
fn discrete_l2_error_matches_a_hand_value() {
    let pmf = ConfidencePmf::new(vec![0.5, 1.0], vec![0.5, 0.5]).unwrap();
    // sqrt(0.5 * (0.5-0.5)^2 + 0.5 * (0.75-1)^2) = sqrt(0.03125).
    assert_eq!(ece2(&pmf, &[0.5, 0.75]).unwrap(), 0.03125f64.sqrt());
    // Perfectly calibrated support: zero.
    assert_eq!(ece2(&pmf, &[0.5, 1.0]).unwrap(), 0.0);
}

#[test]
fn discrete_l2_error_validates_its_inputs() {
    assert!(ConfidencePmf::new(vec![], vec![]).is_err());
    assert!(ConfidencePmf::new(vec![0.5], vec![0.5, 0.5]).is_err());
    assert!(ConfidencePmf::new(vec![1.5], vec![1.0]).is_err());
    assert!(ConfidencePmf::new(vec![0.5, 0.6], vec![1.0, 0.0]).is_err());
    assert!(ConfidencePmf::new(vec![0.5, 0.6], vec![0.7, 0.2]).is_err());
    let pmf = ConfidencePmf::new(vec![0.5, 1.0], vec![0.5, 0.5]).unwrap();
    assert!(ece2(&pmf, &[0.5]).is_err(), "length mismatch");
    assert!(ece2(&pmf, &[0.5, 1.5]).is_err(), "accuracy outside [0, 1]");
}

// ---------------------------------------------------------------- entropy

#[test]
fn entropy_of_uniform_confidences_is_log_n() {
    for n in [2usize, 4, 10] {
        let r = rec(&vec![1.0 / n as f64; n], 0);
        assert_close(
            confidence_entropy(&[r]).unwrap(),
            (n as f64).ln(),
            1e-14,
            &format!("uniform entropy, {n} classes"),
        );
    }
}

#[test]
fn entropy_matches_a_hand_value_and_ignores_zero_components() {
    // -(1/2 ln 1/2 + 1/4 ln 1/4 + 1/4 ln 1/4) = 3/2 ln 2.
    let r = rec(&[0.5, 0.25, 0.25], 0);
    assert_close(
        confidence_entropy(&[r]).unwrap(),
        1.5 * std::f64::consts::LN_2,
        1e-15,
        "hand entropy",
    );
    // A degenerate one-hot vector has zero entropy, with no NaN from 0 ln 0.
    assert_eq!(confidence_entropy(&[rec(&[1.0, 0.0], 0)]).unwrap(), 0.0);
    // Mean across records.
    let two = vec![rec(&[0.5, 0.5], 0), rec(&[1.0, 0.0], 0)];
    assert_close(
        confidence_entropy(&two).unwrap(),
        std::f64::consts::LN_2 / 2.0,
        1e-15,
        "mean entropy",
    );
    assert!(confidence_entropy(&[]).is_err());
}

// ---------------------------------------------------------------- nll

#[test]
fn nll_means_true_class_log_loss_and_counts_clamps() {
    let summary = nll(&[rec(&[0.5, 0.5], 0)]).unwrap();
    assert_close(summary.mean, std::f64::consts::LN_2, 1e-15, "nll of a fair coin");
    assert_eq!(summary.clamped, 0);

    // A true-class probability of exactly zero is clamped before the log,
    // keeping the mean finite and flagging the record.
    let clamped = nll(&[rec(&[1.0, 0.0], 1), rec(&[0.5, 0.5], 0)]).unwrap();
    assert_eq!(clamped.clamped, 1);
    let want = (-NLL_CLAMP.ln() + std::f64::consts::LN_2) / 2.0;
    assert_close(clamped.mean, want, 1e-12, "clamped mean");
    assert!(clamped.mean.is_finite());
    assert!(nll(&[]).is_err());
}

#[test]
fn accuracy_is_the_correct_fraction() {
    let records = vec![rec(&[0.9, 0.1], 0), rec(&[0.9, 0.1], 1), rec(&[0.2, 0.8], 1), rec(&[0.8, 0.2], 0)];
    assert_eq!(accuracy(&records).unwrap(), 0.75);
    assert!(accuracy(&[]).is_err());
}

// ---------------------------------------------------------------- auroc

#[test]
fn auroc_hand_cases() {
    // Perfect separation.
    assert_eq!(auroc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
    // Perfectly inverted.
    assert_eq!(auroc(&[0.1, 0.2], &[0.9, 0.8]).unwrap(), 0.0);
    // All scores tied: chance.
    assert_eq!(auroc(&[0.5, 0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.5);
    // Mixed: 3 of 4 pairs won.
    assert_eq!(auroc(&[0.9, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
    // A tie counts half: 3.5 of 4.
    assert_eq!(auroc(&[0.5, 0.9], &[0.5, 0.1]).unwrap(), 0.875);
}

/// All-pairs definition: P(in-dist score > shifted score) + P(equal)/2.
fn brute_force_auroc(in_dist: &[f64], shifted: &[f64]) -> f64 {
    let mut wins = 0usize;
    let mut ties = 0usize;
    for &a in in_dist {
        for &b in shifted {
            if a > b {
                wins += 1;
            } else if a == b {
                ties += 1;
            }
        }
    }
    (wins as f64 + ties as f64 / 2.0) / (in_dist.len() * shifted.len()) as f64
}

#[test]
fn auroc_equals_the_all_pairs_definition_exactly() {
    // The rank-sum with midranks is algebraically the all-pairs count, and
    // both sides are exact in floating point (half-integer numerators), so
    // the comparison is exact equality — including heavy ties from the
    // lattice scores.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| f64::from(rng.random_range(0..=20i32)) / 20.0).collect()
        };
        let n1 = rng.random_range(1..=40);
        let n2 = rng.random_range(1..=40);
        let in_dist = draw(&mut rng, n1);
        let shifted = draw(&mut rng, n2);
        let got = auroc(&in_dist, &shifted).unwrap();
        let want = brute_force_auroc(&in_dist, &shifted);
        assert_eq!(got, want, "case {case}: rank-sum {got} vs all-pairs {want}");
    }
}

#[test]
fn auroc_complement_symmetry() {
    let a = [0.9, 0.5, 0.5, 0.3];
    let b = [0.5, 0.2, 0.8];
    let fwd = auroc(&a, &b).unwrap();
    let rev = auroc(&b, &a).unwrap();
    assert_close(fwd + rev, 1.0, 1e-15, "complement symmetry");
}

#[test]
fn auroc_rejects_empty_or_non_finite_scores() {
    assert!(auroc(&[], &[0.5]).is_err());
    assert!(auroc(&[0.5], &[]).is_err());
    assert!(auroc(&[f64::NAN], &[0.5]).is_err());
    assert!(auroc(&[0.5], &[f64::INFINITY]).is_err());
}

// ---------------------------------------------------------------- files

#[test]
fn reliability_csv_roundtrip_preserves_populated_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reliability.csv");
    let records = vec![rec(&[0.95, 0.05], 0), rec(&[0.6, 0.4], 1), rec(&[0.7, 0.3], 0)];
    let binned = bin_records(&records, 4, BinPopulation::MaxComponent).unwrap();
    write_reliability_csv(&path, &binned).unwrap();
    let rows = read_reliability_csv(&path).unwrap();
    let want = reliability_rows(&binned);
    assert_eq!(rows.len(), want.len());
    for (got, want) in rows.iter().zip(&want) {
        assert_eq!((got.bin_low, got.bin_high, got.count), (want.bin_low, want.bin_high, want.count));
        if want.count > 0 {
            assert_eq!(got.mean_confidence, want.mean_confidence);
            assert_eq!(got.accuracy, want.accuracy);
            assert_eq!(got.gap, want.gap);
        } else {
            // Empty bins carry NaN statistics; NaN round-trips as NaN.
            assert!(got.mean_confidence.is_nan() && got.accuracy.is_nan() && got.gap.is_nan());
        }
    }
}

#[test]
fn reliability_csv_rejects_malformed_tables() {
    let dir = tempfile::tempdir().unwrap();
    let bad_header = dir.path().join("bad_header.csv");
    std::fs::write(&bad_header, "a,b,c\n").unwrap();
    assert!(read_reliability_csv(&bad_header).is_err());

    let bad_field = dir.path().join("bad_field.csv");
    std::fs::write(
        &bad_field,
        "bin_low,bin_high,count,mean_confidence,accuracy,gap\n0,0.5,two,0.4,0.5,-0.1\n",
    )
    .unwrap();
    let err = bad_field;
    let msg = read_reliability_csv(&err).unwrap_err().to_string();
    assert!(msg.contains("row 2"), "row number in `{msg}`");
}

#[test]
fn confidence_histogram_lists_every_bin_with_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hist.csv");
    let records = vec![rec(&[0.95, 0.05], 0), rec(&[0.6, 0.4], 1)];
    let binned = bin_records(&records, 4, BinPopulation::MaxComponent).unwrap();
    write_confidence_histogram_csv(&path, &binned).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "bin_low,bin_high,count,fraction");
    let rows: Vec<Vec<String>> =
        lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 4);
    let total: usize = rows.iter().map(|r| r[2].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 2);
    let fraction_sum: f64 = rows.iter().map(|r| r[3].parse::<f64>().unwrap()).sum();
    assert_close(fraction_sum, 1.0, 1e-12, "fractions sum to one");
}

#[test]
fn records_jsonl_roundtrip_and_revalidation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    let records = vec![rec(&[0.2, 0.5, 0.3], 2), rec(&[0.9, 0.05, 0.05], 0)];
    write_records_jsonl(&path, &records).unwrap();
    assert_eq!(read_records_jsonl(&path).unwrap(), records);

    // The reader re-validates every line: a stored prediction that is not
    // the argmax of its confidences is rejected, with the line number.
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(
        &tampered,
        "{\"confidences\":[0.2,0.8],\"predicted\":0,\"truth\":0}\n",
    )
    .unwrap();
    let msg = read_records_jsonl(&tampered).unwrap_err().to_string();
    assert!(msg.contains("row 1"), "line number in `{msg}`");

    // Blank lines are skipped, not errors.
    let blanks = dir.path().join("blanks.jsonl");
    std::fs::write(
        &blanks,
        "\n{\"confidences\":[0.2,0.8],\"predicted\":1,\"truth\":0}\n\n",
    )
    .unwrap();
    assert_eq!(read_records_jsonl(&blanks).unwrap().len(), 1);
}
