//! Field-unit conversions. Everything inside the crate is SI; these are only
//! used at the configuration and export boundaries.

/// One millidarcy in m².
pub const MILLIDARCY: f64 = 9.869233e-16;
/// One bar in Pa.
pub const BAR: f64 = 1.0e5;
/// One mPa·s in Pa·s.
pub const MILLIPASCAL_SECOND: f64 = 1.0e-3;
/// One day in seconds.
pub const DAY: f64 = 86_400.0;

pub fn md_to_m2(md: f64) -> f64 {
    md * MILLIDARCY
}

pub fn m2_to_md(m2: f64) -> f64 {
    m2 / MILLIDARCY
}

pub fn bar_to_pa(bar: f64) -> f64 {
    bar * BAR
}

pub fn pa_to_bar(pa: f64) -> f64 {
    pa / BAR
}

pub fn mpas_to_pas(mpas: f64) -> f64 {
    mpas * MILLIPASCAL_SECOND
}

pub fn pas_to_mpas(pas: f64) -> f64 {
    pas / MILLIPASCAL_SECOND
}

/// m³/day → m³/s
pub fn m3_per_day_to_si(q: f64) -> f64 {
    q / DAY
}

/// m³/s → m³/day
pub fn m3_per_s_to_per_day(q: f64) -> f64 {
    q * DAY
}

/// 1/bar → 1/Pa
pub fn per_bar_to_per_pa(c: f64) -> f64 {
    c / BAR
}

/// 1/Pa → 1/bar
pub fn per_pa_to_per_bar(c: f64) -> f64 {
    c * BAR
}

pub fn days_to_s(days: f64) -> f64 {
    days * DAY
}

pub fn s_to_days(s: f64) -> f64 {
    s / DAY
}
