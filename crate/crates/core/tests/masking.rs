use offense_core::encoder::tokenizer::{is_special, BEGIN_ID, END_ID, MASK_ID, PAD_ID};
use offense_core::mlm::{mask_count, mask_tokens, MaskAction, MaskedBatch, IGNORE_ID};
use proptest::prelude::*;

fn sequence() -> impl Strategy<Value = Vec<u32>> {
    // Interior sentinels are rare in practice but must never be selected.
    prop::collection::vec(prop_oneof![8 => 5u32..2048, 1 => 0u32..5], 1..60).prop_map(|mut body| {
        if body.iter().all(|&t| is_special(t)) {
            body.push(77);
        }
        let mut s = vec![BEGIN_ID];
        s.extend(body);
        s.push(END_ID);
        s
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn sentinels_untouched_and_count_exact(seq in sequence(), seed in any::<u64>()) {
        let row = mask_tokens(&seq, 0.15, 2048, seed).unwrap();
        let maskable = seq.iter().filter(|&&t| !is_special(t)).count();
        prop_assert_eq!(row.selections.len(), mask_count(maskable, 0.15));
        prop_assert_eq!(row.selections.len(), ((0.15 * maskable as f64).round() as usize).max(1));
        for (i, &t) in seq.iter().enumerate() {
            if is_special(t) {
                prop_assert!(!row.mask_positions[i]);
                prop_assert_eq!(row.input_ids[i], t);
            }
            if row.mask_positions[i] {
                prop_assert_eq!(row.target_ids[i], t);
            } else {
                prop_assert_eq!(row.target_ids[i], IGNORE_ID);
                prop_assert_eq!(row.input_ids[i], t);
            }
        }
        for &(pos, action) in &row.selections {
            match action {
                MaskAction::Mask => prop_assert_eq!(row.input_ids[pos], MASK_ID),
                MaskAction::Random => prop_assert!(!is_special(row.input_ids[pos])),
                MaskAction::Keep => prop_assert_eq!(row.input_ids[pos], seq[pos]),
            }
        }
        prop_assert_eq!(&mask_tokens(&seq, 0.15, 2048, seed).unwrap(), &row);
    }
}

#[test]
fn mean_selected_fraction_over_long_sequences() {
    let mut total = 0.0;
    for i in 0..1000u64 {
        let len = 20 + (i as usize % 40);
        let mut seq = vec![BEGIN_ID];
        seq.extend((0..len as u32).map(|t| 5 + (t * 7 + i as u32) % 2000));
        seq.push(END_ID);
        let row = mask_tokens(&seq, 0.15, 2048, i).unwrap();
        total += row.selections.len() as f64 / len as f64;
    }
    let mean = total / 1000.0;
    assert!((0.13..=0.17).contains(&mean), "{mean}");
}

#[test]
fn batch_padding_is_ignored() {
    let a = mask_tokens(&[BEGIN_ID, 9, 10, 11, END_ID], 0.15, 2048, 1).unwrap();
    let b = mask_tokens(&[BEGIN_ID, 9, END_ID], 0.15, 2048, 2).unwrap();
    let batch = MaskedBatch::from_rows(vec![a, b]);
    assert_eq!(batch.lengths, vec![5, 3]);
    assert_eq!(batch.input_ids[1][3..], [PAD_ID, PAD_ID]);
    assert_eq!(batch.target_ids[1][3..], [IGNORE_ID, IGNORE_ID]);
    assert_eq!(batch.num_masked(), 2);
}
