//! Fixed Gauss–Legendre rule on [0, 1].

const NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Eight-point rule mapped to [0, 1] as `(t, w)` pairs.
pub fn gauss8() -> [(f64, f64); 8] {
    let mut out = [(0.0, 0.0); 8];
    for k in 0..4 {
        out[2 * k] = (0.5 * (1.0 - NODES[k]), 0.5 * WEIGHTS[k]);
        out[2 * k + 1] = (0.5 * (1.0 + NODES[k]), 0.5 * WEIGHTS[k]);
    }
    out
}

/// `∫_0^1 g(t) dt` by the eight-point rule.
pub fn integrate01<F: FnMut(f64) -> f64>(mut g: F) -> f64 {
    gauss8().iter().map(|&(t, w)| w * g(t)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_degree_fifteen() {
        let v = integrate01(|t| t.powi(15));
        assert!((v - 1.0 / 16.0).abs() < 1e-15);
        let s: f64 = gauss8().iter().map(|p| p.1).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }
}
