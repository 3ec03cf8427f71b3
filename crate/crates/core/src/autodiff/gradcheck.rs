//! Central finite differences, used as an independent oracle for `backward`.

/// Central-difference gradient of `f` at `x`, perturbing one coordinate at a time.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// True when `|a - n| <= max(abs_floor, rel * max(|a|, |n|))`.
pub fn close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= abs_floor.max(rel * analytic.abs().max(numeric.abs()))
}

/// Every coordinate where the two gradients disagree beyond tolerance.
pub fn mismatches(analytic: &[f64], numeric: &[f64], rel: f64, abs_floor: f64) -> Vec<Mismatch> {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .filter(|(_, (&a, &n))| !close(a, n, rel, abs_floor))
        .map(|(index, (&analytic, &numeric))| Mismatch {
            index,
            analytic,
            numeric,
        })
        .collect()
}
