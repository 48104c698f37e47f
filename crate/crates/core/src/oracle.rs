//! Direct integer lifting formulas, independent of the network machinery.
//! The self-test and the test suites compare initialized flows against them.

use crate::flow::round_nearest;

/// One lifting level on a 1D signal, returning `(s, d)`.
pub type LevelFn = fn(&[i64]) -> (Vec<i64>, Vec<i64>);

/// One Haar lifting level: `d = e − o`, `s = o + ⌊d/2⌉`.
pub fn haar_1d(x: &[i64]) -> (Vec<i64>, Vec<i64>) {
    let (o, e) = split(x);
    let d: Vec<i64> = e.iter().zip(&o).map(|(&e, &o)| e - o).collect();
    let s = o
        .iter()
        .zip(&d)
        .map(|(&o, &d)| o + round_nearest(d as f64 / 2.0))
        .collect();
    (s, d)
}

/// One LeGall 5/3 lifting level with replicated boundaries:
/// `d_k = e_k − ⌊(o_k + o_{k+1})/2⌉`, `s_k = o_k + ⌊(d_{k−1} + d_k)/4⌉`.
pub fn legall_1d(x: &[i64]) -> (Vec<i64>, Vec<i64>) {
    let (o, e) = split(x);
    let n = o.len();
    let d: Vec<i64> = (0..n)
        .map(|k| e[k] - round_nearest((o[k] + o[(k + 1).min(n - 1)]) as f64 / 2.0))
        .collect();
    let s = (0..n)
        .map(|k| o[k] + round_nearest((d[k.saturating_sub(1)] + d[k]) as f64 / 4.0))
        .collect();
    (s, d)
}

fn split(x: &[i64]) -> (Vec<i64>, Vec<i64>) {
    assert!(
        x.len().is_multiple_of(2) && !x.is_empty(),
        "even-length signal required"
    );
    (
        x.iter().step_by(2).copied().collect(),
        x.iter().skip(1).step_by(2).copied().collect(),
    )
}

/// Applies `level` to every row, then to every column of both halves.
/// Returns `[LL, HL, LH, HH]` planes, each `h/2 × w/2` row-major; the order
/// matches the flow's `[A, B, C, D]`.
pub fn separable_2d(img: &[i64], h: usize, w: usize, level: LevelFn) -> [Vec<i64>; 4] {
    let (hw, hh) = (w / 2, h / 2);
    let mut low = vec![0; h * hw];
    let mut high = vec![0; h * hw];
    for r in 0..h {
        let (s, d) = level(&img[r * w..(r + 1) * w]);
        low[r * hw..(r + 1) * hw].copy_from_slice(&s);
        high[r * hw..(r + 1) * hw].copy_from_slice(&d);
    }
    let columns = |plane: &[i64]| {
        let mut s_out = vec![0; hh * hw];
        let mut d_out = vec![0; hh * hw];
        for c in 0..hw {
            let col: Vec<i64> = (0..h).map(|r| plane[r * hw + c]).collect();
            let (s, d) = level(&col);
            for r in 0..hh {
                s_out[r * hw + c] = s[r];
                d_out[r * hw + c] = d[r];
            }
        }
        (s_out, d_out)
    };
    let (ll, lh) = columns(&low);
    let (hl, hh_) = columns(&high);
    [ll, hl, lh, hh_]
}
