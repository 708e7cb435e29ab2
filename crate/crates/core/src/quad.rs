//! One-dimensional quadrature rules.

use crate::error::{Error, Result};

/// Nodes and weights of the 3-point Gauss–Legendre rule on `[-1, 1]`.
pub const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// 3-point Gauss–Legendre approximation of `∫_a^b f`.
pub fn gauss3(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    GAUSS3.iter().map(|&(x, w)| w * f(c + r * x)).sum::<f64>() * r
}

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const GAUSS7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15(a: f64, b: f64, f: &mut impl FnMut(f64) -> f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut k = KRONROD_WEIGHTS[7] * fc;
    let mut g = GAUSS7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = r * KRONROD_NODES[i];
        let s = f(c - dx) + f(c + dx);
        k += KRONROD_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += GAUSS7_WEIGHTS[i / 2] * s;
        }
    }
    (k * r, ((k - g) * r).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration to absolute tolerance `tol`.
pub fn integrate(a: f64, b: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> Result<f64> {
    const MAX_SPLITS: usize = 4000;
    let (v, e) = kronrod15(a, b, &mut f);
    let mut parts = vec![(a, b, v, e)];
    let mut splits = 0;
    loop {
        let total_err: f64 = parts.iter().map(|p| p.3).sum();
        if total_err <= tol {
            break;
        }
        if splits >= MAX_SPLITS {
            return Err(Error::IterationLimit {
                limit: MAX_SPLITS,
                context: format!("adaptive quadrature on [{a}, {b}], error {total_err:e}"),
            });
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod15(lo, mid, &mut f);
        let (v2, e2) = kronrod15(mid, hi, &mut f);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
        splits += 1;
    }
    parts.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(crate::sum::compensated(parts.iter().map(|p| p.2)))
}
