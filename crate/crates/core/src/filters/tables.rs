//! Coefficient tables for the built-in wavelets.
//!
//! Analysis filters are stored in correlation order (the transform computes
//! `a[k] = sum_i f[i] * s[2k + i]`); synthesis filters are stored in
//! convolution order. Values are the standard Daubechies and
//! Cohen-Daubechies-Feauveau tables.

pub(crate) const HAAR_LO_DEC: [f64; 2] = [
    0.7071067811865476,
    0.7071067811865476,
];
pub(crate) const HAAR_HI_DEC: [f64; 2] = [
    0.7071067811865476,
    -0.7071067811865476,
];
pub(crate) const HAAR_LO_REC: [f64; 2] = [
    0.7071067811865476,
    0.7071067811865476,
];
pub(crate) const HAAR_HI_REC: [f64; 2] = [
    0.7071067811865476,
    -0.7071067811865476,
];

pub(crate) const DB2_LO_DEC: [f64; 4] = [
    0.48296291314453416,
    0.8365163037378079,
    0.2241438680420134,
    -0.12940952255126037,
];
pub(crate) const DB2_HI_DEC: [f64; 4] = [
    -0.12940952255126037,
    -0.2241438680420134,
    0.8365163037378079,
    -0.48296291314453416,
];
pub(crate) const DB2_LO_REC: [f64; 4] = [
    0.48296291314453416,
    0.8365163037378079,
    0.2241438680420134,
    -0.12940952255126037,
];
pub(crate) const DB2_HI_REC: [f64; 4] = [
    -0.12940952255126037,
    -0.2241438680420134,
    0.8365163037378079,
    -0.48296291314453416,
];

pub(crate) const DB3_LO_DEC: [f64; 6] = [
    0.33267055295008263,
    0.8068915093110925,
    0.45987750211849154,
    -0.13501102001025458,
    -0.08544127388202666,
    0.03522629188570953,
];
pub(crate) const DB3_HI_DEC: [f64; 6] = [
    0.03522629188570953,
    0.08544127388202666,
    -0.13501102001025458,
    -0.45987750211849154,
    0.8068915093110925,
    -0.33267055295008263,
];
pub(crate) const DB3_LO_REC: [f64; 6] = [
    0.33267055295008263,
    0.8068915093110925,
    0.45987750211849154,
    -0.13501102001025458,
    -0.08544127388202666,
    0.03522629188570953,
];
pub(crate) const DB3_HI_REC: [f64; 6] = [
    0.03522629188570953,
    0.08544127388202666,
    -0.13501102001025458,
    -0.45987750211849154,
    0.8068915093110925,
    -0.33267055295008263,
];

pub(crate) const DB4_LO_DEC: [f64; 8] = [
    0.2303778133088965,
    0.7148465705529157,
    0.6308807679298589,
    -0.027983769416859854,
    -0.18703481171909309,
    0.030841381835560764,
    0.0328830116668852,
    -0.010597401785069032,
];
pub(crate) const DB4_HI_DEC: [f64; 8] = [
    -0.010597401785069032,
    -0.0328830116668852,
    0.030841381835560764,
    0.18703481171909309,
    -0.027983769416859854,
    -0.6308807679298589,
    0.7148465705529157,
    -0.2303778133088965,
];
pub(crate) const DB4_LO_REC: [f64; 8] = [
    0.2303778133088965,
    0.7148465705529157,
    0.6308807679298589,
    -0.027983769416859854,
    -0.18703481171909309,
    0.030841381835560764,
    0.0328830116668852,
    -0.010597401785069032,
];
pub(crate) const DB4_HI_REC: [f64; 8] = [
    -0.010597401785069032,
    -0.0328830116668852,
    0.030841381835560764,
    0.18703481171909309,
    -0.027983769416859854,
    -0.6308807679298589,
    0.7148465705529157,
    -0.2303778133088965,
];

pub(crate) const CH2_2_LO_DEC: [f64; 6] = [
    -0.1767766952966369,
    0.3535533905932738,
    1.0606601717798212,
    0.3535533905932738,
    -0.1767766952966369,
    0.0,
];
pub(crate) const CH2_2_HI_DEC: [f64; 6] = [
    0.0,
    0.0,
    0.3535533905932738,
    -0.7071067811865476,
    0.3535533905932738,
    0.0,
];
pub(crate) const CH2_2_LO_REC: [f64; 6] = [
    0.0,
    0.3535533905932738,
    0.7071067811865476,
    0.3535533905932738,
    0.0,
    0.0,
];
pub(crate) const CH2_2_HI_REC: [f64; 6] = [
    0.0,
    0.1767766952966369,
    0.3535533905932738,
    -1.0606601717798212,
    0.3535533905932738,
    0.1767766952966369,
];

pub(crate) const CH4_4_LO_DEC: [f64; 10] = [
    0.03782845550726404,
    -0.023849465019556843,
    -0.11062440441843718,
    0.37740285561283066,
    0.8526986790088938,
    0.37740285561283066,
    -0.11062440441843718,
    -0.023849465019556843,
    0.03782845550726404,
    0.0,
];
pub(crate) const CH4_4_HI_DEC: [f64; 10] = [
    0.0,
    0.0,
    -0.06453888262869706,
    0.04068941760916406,
    0.41809227322161724,
    -0.7884856164055829,
    0.41809227322161724,
    0.04068941760916406,
    -0.06453888262869706,
    0.0,
];
pub(crate) const CH4_4_LO_REC: [f64; 10] = [
    0.0,
    -0.06453888262869706,
    -0.04068941760916406,
    0.41809227322161724,
    0.7884856164055829,
    0.41809227322161724,
    -0.04068941760916406,
    -0.06453888262869706,
    0.0,
    0.0,
];
pub(crate) const CH4_4_HI_REC: [f64; 10] = [
    0.0,
    -0.03782845550726404,
    -0.023849465019556843,
    0.11062440441843718,
    0.37740285561283066,
    -0.8526986790088938,
    0.37740285561283066,
    0.11062440441843718,
    -0.023849465019556843,
    -0.03782845550726404,
];
