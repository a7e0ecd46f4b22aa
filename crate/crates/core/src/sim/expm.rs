//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! (degrees 3, 5, 7, 9, 13), following Higham's 2005 selection thresholds.

use nalgebra::DMatrix;

use crate::error::SimError;

const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `e^M` for a square matrix with finite entries.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>, SimError> {
    if m.nrows() != m.ncols() {
        return Err(SimError::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite);
    }
    let n = m.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    if n == 0 {
        return Ok(id);
    }
    let norm = one_norm(m);
    if norm == 0.0 {
        return Ok(id);
    }

    for (deg, theta) in THETA {
        if norm <= theta {
            let coeffs: &[f64] = match deg {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let (u, v) = pade_low(m, coeffs, &id);
            return solve_pade(&u, &v);
        }
    }

    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
    let scaled = m / 2f64.powi(s);
    let (u, v) = pade13(&scaled, &id);
    let mut x = solve_pade(&u, &v)?;
    for _ in 0..s {
        x = &x * &x;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite);
    }
    Ok(x)
}

fn pade_low(a: &DMatrix<f64>, b: &[f64], id: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let a2 = a * a;
    let mut even_pow = id.clone();
    let mut u_inner = id * b[1];
    let mut v = id * b[0];
    let mut k = 2;
    while k < b.len() {
        even_pow = &even_pow * &a2;
        v += &even_pow * b[k];
        u_inner += &even_pow * b[k + 1];
        k += 2;
    }
    (a * u_inner, v)
}

fn pade13(a: &DMatrix<f64>, id: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &B13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u_inner = &a6 * u_hi + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + id * b[1];
    let u = a * u_inner;
    let v_hi = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * v_hi + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + id * b[0];
    (u, v)
}

fn solve_pade(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>, SimError> {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).ok_or(SimError::NonFinite)
}
