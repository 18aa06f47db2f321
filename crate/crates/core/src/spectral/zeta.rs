//! Hurwitz zeta `ζ(s, a) = Σ_{k ≥ 0} (a + k)^{-s}` for `s > 1`, `a ≥ 1`,
//! by direct summation up to a shift followed by Euler–Maclaurin.

const SHIFT: f64 = 32.0;

/// `B_{2j} / (2j)!` for `j = 1..=6`.
const BERNOULLI_OVER_FACTORIAL: [f64; 6] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30240.0,
    -1.0 / 1209600.0,
    1.0 / 47900160.0,
    -691.0 / 1307674368000.0,
];

pub(crate) fn hurwitz(s: f64, a: f64) -> f64 {
    debug_assert!(s > 1.0 && a >= 1.0);
    let mut head = 0.0;
    let mut start = a;
    while start < SHIFT {
        head += start.powf(-s);
        start += 1.0;
    }
    // Euler–Maclaurin for Σ_{k ≥ 0} (start + k)^{-s}
    let mut tail = start.powf(1.0 - s) / (s - 1.0) + 0.5 * start.powf(-s);
    // rising product s (s+1) ... (s+2j-2) times start^{-s-2j+1}
    let mut rising = s;
    let mut power = start.powf(-s - 1.0);
    let inv_sq = 1.0 / (start * start);
    for (j, c) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        tail += c * rising * power;
        let k = 2.0 * j as f64;
        rising *= (s + k + 1.0) * (s + k + 2.0);
        power *= inv_sq;
    }
    head + tail
}
