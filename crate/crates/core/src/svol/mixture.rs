//! Seven-component normal mixture approximating the log chi-square(1) law
//! of `log eps_t^2` (Kim, Shephard & Chib, 1998, Table 4).

/// Mixture weights.
pub const WEIGHTS: [f64; 7] = [
    0.00730, 0.10556, 0.00002, 0.04395, 0.34001, 0.24566, 0.25750,
];

/// Component means before the common offset.
pub const MEANS: [f64; 7] = [
    -10.12999, -3.97281, -8.56686, 2.77786, 0.61942, 1.79518, -1.08819,
];

/// Component variances.
pub const VARIANCES: [f64; 7] = [
    5.79596, 2.61369, 5.17950, 0.16735, 0.64009, 0.34023, 1.26261,
];

/// Common shift: component `i` has mean `MEANS[i] - MEAN_OFFSET`.
pub const MEAN_OFFSET: f64 = 1.2704;

pub const N_COMPONENTS: usize = 7;

/// Mean of component `i` after the offset.
#[inline]
pub fn component_mean(i: usize) -> f64 {
    MEANS[i] - MEAN_OFFSET
}

/// Per-component constants for evaluating log weights quickly:
/// `ln q_i - 0.5 ln v_i`, `m_i`, `-0.5 / v_i`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Component {
    pub log_norm: f64,
    pub mean: f64,
    pub neg_half_prec: f64,
}

pub(crate) fn components() -> [Component; N_COMPONENTS] {
    std::array::from_fn(|i| Component {
        log_norm: WEIGHTS[i].ln() - 0.5 * VARIANCES[i].ln(),
        mean: component_mean(i),
        neg_half_prec: -0.5 / VARIANCES[i],
    })
}
