//! Cumulative ("ordinal") grade encoding for the 5-output multilabel heads.
//!
//! Grade `g` is encoded as ones at positions `0..=g` and zeros after, so a
//! higher grade's target is a superset of every milder grade's target.
//! Decoding walks the scores left to right and stops at the first value
//! below the threshold; the grade is the number of leading above-threshold
//! scores minus one, clamped to 0.

use crate::error::{CoreResult, PipelineError};
use crate::types::OrdinalPrediction;

/// Number of severity grades (0..=4).
pub const NUM_GRADES: usize = 5;

/// Default decode threshold.
pub const DECODE_THRESHOLD: f32 = 0.5;

/// Encode a grade as its cumulative 5-vector target.
pub fn encode_ordinal(grade: u8) -> CoreResult<[f32; NUM_GRADES]> {
    if grade as usize >= NUM_GRADES {
        return Err(PipelineError::Data(format!(
            "grade must be in 0..=4, got {grade}"
        )));
    }
    let mut v = [0.0; NUM_GRADES];
    for slot in v.iter_mut().take(grade as usize + 1) {
        *slot = 1.0;
    }
    Ok(v)
}

/// Decode a 5-score vector: count the leading scores `>= threshold`, then
/// subtract one (clamped to 0).
pub fn decode_ordinal(scores: &[f32; NUM_GRADES], threshold: f32) -> u8 {
    let leading = scores
        .iter()
        .take_while(|&&s| s >= threshold)
        .count();
    leading.saturating_sub(1) as u8
}

/// Wrap raw scores into an [`OrdinalPrediction`], deriving the grade via
/// [`decode_ordinal`] at the default threshold.
pub fn prediction_from_scores(scores: [f32; NUM_GRADES]) -> OrdinalPrediction {
    OrdinalPrediction {
        grade: decode_ordinal(&scores, DECODE_THRESHOLD),
        scores,
    }
}

/// The idealized prediction for a known grade: cumulative 0/1 scores and
/// the grade itself. Useful for building fusion inputs from bare grades.
pub fn prediction_from_grade(grade: u8) -> CoreResult<OrdinalPrediction> {
    Ok(prediction_from_scores(encode_ordinal(grade)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_matches_the_cumulative_scheme() {
        assert_eq!(encode_ordinal(0).unwrap(), [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(encode_ordinal(2).unwrap(), [1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(encode_ordinal(4).unwrap(), [1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(encode_ordinal(5).err().unwrap().exit_code(), 3);
    }

    #[test]
    fn decode_examples_from_the_stopping_rule() {
        assert_eq!(decode_ordinal(&[0.99, 0.94, 0.83, 0.61, 0.57], 0.5), 4);
        // First sub-threshold at index 2; the high 0.7 after it is ignored.
        assert_eq!(decode_ordinal(&[0.9, 0.8, 0.3, 0.7, 0.1], 0.5), 1);
        // Sub-threshold leading score clamps to grade 0.
        assert_eq!(decode_ordinal(&[0.2, 0.9, 0.9, 0.9, 0.9], 0.5), 0);
    }

    #[test]
    fn decode_inverts_encode_for_every_grade() {
        for g in 0..NUM_GRADES as u8 {
            let v = encode_ordinal(g).unwrap();
            assert_eq!(decode_ordinal(&v, DECODE_THRESHOLD), g);
        }
    }

    #[test]
    fn raising_any_score_never_decreases_the_grade() {
        // Exhaustive over a coarse score lattice.
        let levels = [0.0f32, 0.3, 0.5, 0.7, 1.0];
        let mut vectors = Vec::new();
        for a in levels {
            for b in levels {
                for c in levels {
                    for d in levels {
                        for e in levels {
                            vectors.push([a, b, c, d, e]);
                        }
                    }
                }
            }
        }
        for v in &vectors {
            let base = decode_ordinal(v, 0.5);
            for i in 0..NUM_GRADES {
                for bump in [0.2f32, 0.5, 1.0] {
                    let mut raised = *v;
                    raised[i] = (raised[i] + bump).min(1.0);
                    assert!(
                        decode_ordinal(&raised, 0.5) >= base,
                        "raising index {i} of {v:?} decreased the grade"
                    );
                }
            }
        }
    }

    #[test]
    fn prediction_wrapper_keeps_grade_consistent_with_scores() {
        let p = prediction_from_scores([0.9, 0.6, 0.55, 0.2, 0.8]);
        assert_eq!(p.grade, 2);
        assert_eq!(p.grade, decode_ordinal(&p.scores, DECODE_THRESHOLD));
    }
}
