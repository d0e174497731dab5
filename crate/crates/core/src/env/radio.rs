//! Okumura-Hata propagation, SNR normalization, rate and QoE.

use super::SimConfig;

/// Lower clamp applied to distances before evaluating the path loss.
pub const MIN_DISTANCE_M: f64 = 1.0;
/// Margin keeping normalized SNR strictly inside (0, 1).
pub const SNR_EPS: f64 = 1e-6;
/// Rates below this are treated as this value inside the QoE logarithm.
pub const MIN_RATE: f64 = 1e-9;
pub const QOE_BOUND: f64 = 20.0;

/// Small/medium-city mobile antenna correction `a(h_m)`.
pub fn mobile_antenna_correction(carrier_mhz: f64, ue_height_m: f64) -> f64 {
    let lf = carrier_mhz.log10();
    (1.1 * lf - 0.7) * ue_height_m - (1.56 * lf - 0.8)
}

/// Okumura-Hata urban path loss in dB for a link of `distance_m` metres.
pub fn okumura_hata_db(distance_m: f64, carrier_mhz: f64, bs_height_m: f64, ue_height_m: f64) -> f64 {
    let d_km = distance_m.max(MIN_DISTANCE_M) / 1000.0;
    let lhb = bs_height_m.log10();
    69.55 + 26.16 * carrier_mhz.log10()
        - 13.82 * lhb
        - mobile_antenna_correction(carrier_mhz, ue_height_m)
        + (44.9 - 6.55 * lhb) * d_km.log10()
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn path_loss_db(ue_pos: [f64; 2], bs_pos: [f64; 2], config: &SimConfig) -> f64 {
    okumura_hata_db(
        distance(ue_pos, bs_pos),
        config.carrier_mhz,
        config.bs_height_m,
        config.ue_height_m,
    )
}

pub fn snr_db(ue_pos: [f64; 2], bs_pos: [f64; 2], config: &SimConfig) -> f64 {
    config.tx_power_dbm - path_loss_db(ue_pos, bs_pos, config) - config.noise_dbm
}

/// Maps an SNR in dB linearly onto `(0, 1)` using `snr_db_range`.
pub fn normalize_snr(snr_db: f64, range: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    ((snr_db - lo) / (hi - lo)).clamp(SNR_EPS, 1.0 - SNR_EPS)
}

pub fn snr_observed(ue_pos: [f64; 2], bs_pos: [f64; 2], config: &SimConfig) -> f64 {
    normalize_snr(snr_db(ue_pos, bs_pos, config), config.snr_db_range)
}

/// Shannon capacity of a `bandwidth_hz` share at the given SNR.
pub fn shannon_rate(bandwidth_hz: f64, snr_db: f64) -> f64 {
    bandwidth_hz * (1.0 + 10f64.powf(snr_db / 10.0)).log2()
}

/// Logarithmic quality of experience, clamped to `[-20, 20]`.
pub fn qoe(rate: f64, config: &SimConfig) -> f64 {
    let r = rate.max(MIN_RATE);
    (config.qoe_scale * (r / config.target_rate).log10()).clamp(-QOE_BOUND, QOE_BOUND)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_distance_adds_fixed_loss() {
        let c = SimConfig::default();
        let expected = (44.9 - 6.55 * c.bs_height_m.log10()) * 2f64.log10();
        for d in [1.0, 7.5, 40.0, 150.0] {
            let a = okumura_hata_db(d, c.carrier_mhz, c.bs_height_m, c.ue_height_m);
            let b = okumura_hata_db(2.0 * d, c.carrier_mhz, c.bs_height_m, c.ue_height_m);
            assert!((b - a - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn path_loss_is_monotone_in_distance() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..2000 {
            let d = 0.5 + i as f64 * 0.37;
            let pl = okumura_hata_db(d, 1500.0, 50.0, 1.5);
            assert!(pl >= prev);
            prev = pl;
        }
    }

    #[test]
    fn hand_evaluated_reference_point() {
        // f = 1500 MHz, h_b = 50 m, h_m = 1.5 m, d = 1 km:
        //   a(h_m) = (1.1·3.1760913 − 0.7)·1.5 − (1.56·3.1760913 − 0.8) = 0.0358482
        //   PL = 69.55 + 83.0865473 − 23.4797655 − 0.0358482 + 0 = 129.1209337
        let pl = okumura_hata_db(1000.0, 1500.0, 50.0, 1.5);
        assert!((pl - 129.1209337).abs() < 1e-6, "{pl}");
    }

    #[test]
    fn distances_below_one_metre_are_clamped() {
        let a = okumura_hata_db(0.0, 1500.0, 50.0, 1.5);
        let b = okumura_hata_db(1.0, 1500.0, 50.0, 1.5);
        assert_eq!(a, b);
    }

    #[test]
    fn snr_normalization() {
        assert_eq!(normalize_snr(60.0, (0.0, 120.0)), 0.5);
        assert_eq!(normalize_snr(-50.0, (0.0, 120.0)), SNR_EPS);
        assert_eq!(normalize_snr(500.0, (0.0, 120.0)), 1.0 - SNR_EPS);
        for s in [-1e9, -3.0, 0.0, 1.0, 119.9, 1e9] {
            let v = normalize_snr(s, (0.0, 120.0));
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn qoe_anchor_points() {
        let c = SimConfig::default();
        assert_eq!(qoe(c.target_rate, &c), 0.0);
        assert_eq!(qoe(0.0, &c), -20.0);
        let top = c.target_rate * 10f64.powf(20.0 / c.qoe_scale);
        assert!((qoe(top, &c) - 20.0).abs() < 1e-12);
        assert_eq!(qoe(top * 10.0, &c), 20.0);
    }
}
