//! Number formatting shared by every writer.

/// Formats `x` with 17 significant digits, which is enough for any `f64`
/// to parse back to the identical value. Trailing zeros are dropped.
/// Positional notation is used for magnitudes between 1e-5 and 1e17,
/// scientific otherwise.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.16e}", x);
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let (mantissa, e) = sci.split_once('e').expect("scientific format");
        format!("{}e{e}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(mut s: String) -> String {
    if s.contains('.') {
        let keep = s.trim_end_matches('0').trim_end_matches('.').len();
        s.truncate(keep);
    }
    s
}

/// Rounds half away from zero to `decimals` places ("half-up" on magnitude).
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    // 1e-9 absorbs representation error such as 4.325 stored as 4.32499999...
    let r = (x.abs() * scale + 0.5 + 1e-9).floor() / scale;
    r.copysign(x)
}

/// Display form with two decimals after half-up rounding.
pub fn fmt_2dp(x: f64) -> String {
    let r = round_half_up(x, 2);
    // avoid "-0.00"
    if r == 0.0 {
        "0.00".to_string()
    } else {
        format!("{:.2}", r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[
            0.1,
            1.0 / 3.0,
            9822750.0,
            -2.5e-9,
            6.02214076e23,
            1.0,
            123456789.12345679,
            f64::MIN_POSITIVE,
        ] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_f64(0.5), "0.5");
        assert_eq!(fmt_f64(0.1), "0.10000000000000001");
        assert_eq!(fmt_f64(1e20), "1e20");
        assert_eq!(fmt_f64(10.0), "10");
        assert_eq!(fmt_f64(0.0), "0");
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(fmt_2dp(100.0 * 348.0 / 8043.0), "4.33");
        assert_eq!(fmt_2dp(100.0 * 34.0 / 401.0), "8.48");
        assert_eq!(fmt_2dp(4.325), "4.33");
        assert_eq!(fmt_2dp(-4.325), "-4.33");
        assert_eq!(fmt_2dp(0.0), "0.00");
        assert_eq!(fmt_2dp(-0.001), "0.00");
        assert_eq!(fmt_2dp(2.5), "2.50");
    }
}
