//! Periodized orthonormal Daubechies wavelet transform.

use crate::error::{Error, Result};

/// Daubechies scaling filter with 8 vanishing moments (16 taps).
pub const DB8: [f64; 16] = [
    0.054415842243104009955,
    0.31287159091429997066,
    0.67563073629728980681,
    0.58535468365420671277,
    -0.015829105256349305667,
    -0.28401554296154692652,
    0.00047248457391328277036,
    0.12874742662047845886,
    -0.01736930100180754617,
    -0.044088253930794751507,
    0.013981027917398281649,
    0.0087460940474057767164,
    -0.0048703529934515743104,
    -0.0003917403733769470463,
    0.00067544940645056936637,
    -0.00011747678412476953373,
];

/// Daubechies scaling filter with 2 vanishing moments (4 taps).
pub const DB2: [f64; 4] = [
    0.48296291314453414337,
    0.83651630373780790557,
    0.22414386804201338102,
    -0.12940952255126038117,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Family {
    #[default]
    Db8,
    Db2,
}

impl Family {
    pub fn lowpass(self) -> &'static [f64] {
        match self {
            Family::Db8 => &DB8,
            Family::Db2 => &DB2,
        }
    }

    fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let l = h.len();
        (0..l)
            .map(|m| if m % 2 == 0 { h[l - 1 - m] } else { -h[l - 1 - m] })
            .collect()
    }
}

/// Maximum number of levels that leaves at least 4 approximation coefficients.
pub fn max_levels(n: usize) -> usize {
    (n.trailing_zeros() as usize).saturating_sub(2)
}

fn check_length(n: usize, levels: usize) -> Result<()> {
    if n < 4 || !n.is_power_of_two() {
        return Err(Error::invalid(format!("wavelet transform needs a power-of-two length >= 4, got {n}")));
    }
    if levels > max_levels(n) {
        return Err(Error::invalid(format!(
            "{levels} levels requested, at most {} allowed for length {n}",
            max_levels(n)
        )));
    }
    Ok(())
}

/// Forward transform. Output layout is `[a_J, d_J, d_{J-1}, ..., d_1]`.
pub fn dwt_forward(v: &[f64], levels: usize, family: Family) -> Result<Vec<f64>> {
    let n = v.len();
    check_length(n, levels)?;
    let h = family.lowpass();
    let g = family.highpass();
    let mut out = v.to_vec();
    let mut len = n;
    let mut buf = vec![0.0; n];
    for _ in 0..levels {
        let half = len / 2;
        for k in 0..half {
            let mut a = 0.0;
            let mut d = 0.0;
            for (m, (&hm, &gm)) in h.iter().zip(&g).enumerate() {
                let x = out[(2 * k + m) % len];
                a += hm * x;
                d += gm * x;
            }
            buf[k] = a;
            buf[half + k] = d;
        }
        out[..len].copy_from_slice(&buf[..len]);
        len = half;
    }
    Ok(out)
}

pub fn dwt_inverse(coeffs: &[f64], levels: usize, family: Family) -> Result<Vec<f64>> {
    let n = coeffs.len();
    check_length(n, levels)?;
    let h = family.lowpass();
    let g = family.highpass();
    let mut out = coeffs.to_vec();
    let mut len = n >> levels;
    let mut buf = vec![0.0; n];
    for _ in 0..levels {
        let full = 2 * len;
        buf[..full].fill(0.0);
        for k in 0..len {
            let a = out[k];
            let d = out[len + k];
            for (m, (&hm, &gm)) in h.iter().zip(&g).enumerate() {
                buf[(2 * k + m) % full] += hm * a + gm * d;
            }
        }
        out[..full].copy_from_slice(&buf[..full]);
        len = full;
    }
    Ok(out)
}

/// Noise std estimated from the finest detail level: `median(|d_1|) / 0.6745`.
pub fn estimate_noise_scale(v: &[f64], family: Family) -> Result<f64> {
    let c = dwt_forward(v, 1, family)?;
    let mut d: Vec<f64> = c[v.len() / 2..].iter().map(|x| x.abs()).collect();
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    Ok(med / 0.6745)
}
