//! Small shared helpers for image math.

/// Map a possibly out-of-range index onto [0, n) by symmetric (half-sample)
/// reflection: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2. Folds repeatedly, so
/// offsets larger than the axis are handled too.
pub(crate) fn reflect_index(mut i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Clip to [0,255] and round to the nearest 8-bit value.
pub(crate) fn quantize_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Largest group count `<= cap` that divides `channels`; used to reduce a
/// requested group-norm group count to a valid per-layer value.
pub(crate) fn groups_capped(channels: usize, cap: usize) -> usize {
    (1..=cap.min(channels))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_examples() {
        assert_eq!(reflect_index(0, 5), 0);
        assert_eq!(reflect_index(4, 5), 4);
        assert_eq!(reflect_index(-1, 5), 0);
        assert_eq!(reflect_index(-2, 5), 1);
        assert_eq!(reflect_index(5, 5), 4);
        assert_eq!(reflect_index(6, 5), 3);
        // Deep folds: period 2n pattern.
        assert_eq!(reflect_index(-6, 5), 4); // -6 -> 5 -> 4
        assert_eq!(reflect_index(12, 5), 2); // 12 -> -3 -> 2
    }

    #[test]
    fn quantize_rounds_and_clips() {
        assert_eq!(quantize_u8(-3.2), 0);
        assert_eq!(quantize_u8(254.5), 255);
        assert_eq!(quantize_u8(300.0), 255);
        assert_eq!(quantize_u8(127.49), 127);
    }
}
