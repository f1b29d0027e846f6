//! Human-readable number formatting (6 significant digits).

use num_complex::Complex64;

/// Formats `x` with `sig` significant digits, trimming trailing zeros.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { format!("{x}") };
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..=9).contains(&mag) {
        return format!("{:.*e}", sig.saturating_sub(1), x);
    }
    let decimals = (sig as i32 - 1 - mag).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// Formats a complex amplitude, omitting a negligible real or imaginary part.
pub fn fmt_complex(z: Complex64) -> String {
    const EPS: f64 = 1e-12;
    let re = z.re.abs() >= EPS;
    let im = z.im.abs() >= EPS;
    match (re, im) {
        (false, false) => "0".into(),
        (true, false) => fmt_sig(z.re, 6),
        (false, true) => format!("{}i", fmt_sig(z.im, 6)),
        (true, true) => {
            let sign = if z.im < 0.0 { '-' } else { '+' };
            format!("({}{}{}i)", fmt_sig(z.re, 6), sign, fmt_sig(z.im.abs(), 6))
        }
    }
}
