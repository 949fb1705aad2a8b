//! Bivariate normal rectangle probabilities.
//!
//! `bvnd` follows Genz's double-precision refinement of the
//! Drezner–Wesolowsky method: Gauss–Legendre quadrature over the tilt angle
//! for moderate correlation, and a Taylor expansion about `|r| = 1` plus a
//! correction integral when `|r| >= 0.925`.  Accuracy is about 5e-16 over
//! the whole parameter range.

use crate::numerics::cdf::std_normal_cdf;

const QUAD_6: [(f64, f64); 3] = [
    (0.171_324_492_379_170_5, -0.932_469_514_203_152_2),
    (0.360_761_573_048_138_4, -0.661_209_386_466_264_7),
    (0.467_913_934_572_690_4, -0.238_619_186_083_197_0),
];

const QUAD_12: [(f64, f64); 6] = [
    (0.047_175_336_386_511_77, -0.981_560_634_246_719_1),
    (0.106_939_325_995_318_3, -0.904_117_256_370_475_0),
    (0.160_078_328_543_346_4, -0.769_902_674_194_305_0),
    (0.203_167_426_723_065_9, -0.587_317_954_286_617_1),
    (0.233_492_536_538_354_7, -0.367_831_498_998_180_2),
    (0.249_147_045_813_402_9, -0.125_233_408_511_469_2),
];

const QUAD_20: [(f64, f64); 10] = [
    (0.017_614_007_139_152_12, -0.993_128_599_185_094_9),
    (0.040_601_429_800_386_94, -0.963_971_927_277_913_8),
    (0.062_672_048_334_109_06, -0.912_234_428_251_325_9),
    (0.083_276_741_576_704_75, -0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, -0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, -0.636_053_680_726_515_0),
    (0.131_688_638_449_176_6, -0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, -0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, -0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, -0.076_526_521_133_497_33),
];

fn select_quadrature(rho_abs: f64) -> &'static [(f64, f64)] {
    if rho_abs < 0.3 {
        &QUAD_6
    } else if rho_abs < 0.75 {
        &QUAD_12
    } else {
        &QUAD_20
    }
}

fn phid(x: f64) -> f64 {
    // Limits passed here are finite by construction.
    std_normal_cdf(x).expect("finite argument")
}

/// Upper-quadrant probability P[X > dh, Y > dk] for standard bivariate
/// normal (X, Y) with correlation `r`.
pub fn bvnd(dh: f64, dk: f64, r: f64) -> f64 {
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let quad = select_quadrature(r.abs());
    let mut bvn = 0.0;

    if r.abs() < 0.925 {
        if r.abs() > 0.0 {
            let hs = (h * h + k * k) / 2.0;
            let asr = 0.5 * r.asin();
            for &(w, x) in quad {
                for is in [-1.0, 1.0] {
                    let sn = (asr * (is * x + 1.0)).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / (2.0 * std::f64::consts::PI);
        }
        bvn += phid(-h) * phid(-k);
        bvn
    } else {
        // Near-singular correlation: expand about |r| = 1.  For negative r
        // the identity P[X > h, Y > k] = P[X > h] - P[X > h, -Y > -k] is
        // applied by flipping the sign of k and of the product hk.
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let a_s = (1.0 - r) * (1.0 + r);
            let mut a = a_s.sqrt();
            let b_s = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            let asr = -0.5 * (b_s / a_s + hk);
            if asr > -100.0 {
                bvn = a
                    * asr.exp()
                    * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0
                        + c * d * a_s * a_s / 5.0);
            }
            if -hk < 100.0 {
                let b = b_s.sqrt();
                bvn -= (-0.5 * hk).exp()
                    * (2.0 * std::f64::consts::PI).sqrt()
                    * phid(-b / a)
                    * b
                    * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
            }
            a /= 2.0;
            for &(w, x) in quad {
                for is in [-1.0, 1.0] {
                    let x = a * (is * x + 1.0);
                    let x_s = x * x;
                    let r_s = (1.0 - x_s).sqrt();
                    let asr = -0.5 * (b_s / x_s + hk);
                    if asr > -100.0 {
                        bvn += a
                            * w
                            * asr.exp()
                            * ((-hk * (1.0 - r_s) / (2.0 * (1.0 + r_s))).exp() / r_s
                                - (1.0 + c * x_s * (1.0 + d * x_s)));
                    }
                }
            }
            bvn *= -1.0 / (2.0 * std::f64::consts::PI);
        }
        if r > 0.0 {
            bvn += phid(-h.max(k));
        } else {
            bvn = -bvn;
            if k > h {
                bvn += phid(k) - phid(h);
            }
        }
        bvn
    }
}

/// Rectangle probability P[a1 < X < b1, a2 < Y < b2] for standard bivariate
/// normal with correlation `r`, by inclusion-exclusion over `bvnd`.
pub fn bvn_rectangle(a1: f64, b1: f64, a2: f64, b2: f64, r: f64) -> f64 {
    let p = bvnd(a1, a2, r) - bvnd(b1, a2, r) - bvnd(a1, b2, r) + bvnd(b1, b2, r);
    p.clamp(0.0, 1.0)
}
