//! Cosine similarity, NT-Xent and binary cross entropy.

use super::real::Real;
use crate::error::{Error, Result};

pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

fn norm<R: Real>(a: &[R]) -> R {
    a.iter().map(|&x| x * x).sum::<R>().sqrt()
}

/// `a·b / (‖a‖‖b‖)`; zero when either vector has zero norm.
pub fn cosine_similarity<R: Real>(a: &[R], b: &[R]) -> R {
    let (na, nb) = (norm(a), norm(b));
    if na == R::zero() || nb == R::zero() {
        log::warn!("cosine similarity of a zero-norm vector taken as 0");
        return R::zero();
    }
    let dot: R = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    dot / (na * nb)
}

/// NT-Xent over `2N` row vectors of width `d`, where rows `2i` and `2i+1`
/// are the two views of instance `i`. Returns the mean loss over all `2N`
/// anchors and its gradient with respect to `z`.
pub fn ntxent<R: Real>(z: &[R], d: usize, tau: R) -> Result<(R, Vec<R>)> {
    if !(tau > R::zero()) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if d == 0 || !z.len().is_multiple_of(d) {
        return Err(Error::InputSize(format!("{} values do not form rows of width {d}", z.len())));
    }
    let m = z.len() / d;
    if m == 0 || !m.is_multiple_of(2) {
        return Err(Error::InputSize(format!("need an even, non-zero number of views, got {m}")));
    }
    let norms: Vec<R> = z.chunks(d).map(norm).collect();
    let u: Vec<R> = z
        .chunks(d)
        .zip(&norms)
        .flat_map(|(row, &n)| {
            row.iter().map(move |&x| if n > R::zero() { x / n } else { R::zero() })
        })
        .collect();
    let mut sim = vec![R::zero(); m * m];
    for i in 0..m {
        for j in i..m {
            let s: R = u[i * d..(i + 1) * d].iter().zip(&u[j * d..(j + 1) * d]).map(|(&a, &b)| a * b).sum();
            sim[i * m + j] = s;
            sim[j * m + i] = s;
        }
    }

    // g[i][k] = ∂L/∂s_ik as seen from anchor i.
    let scale = R::one() / R::from_usize(m).unwrap();
    let mut g = vec![R::zero(); m * m];
    let mut loss = R::zero();
    for i in 0..m {
        let pos = i ^ 1;
        let logits = |k: usize| sim[i * m + k] / tau;
        let mx = (0..m).filter(|&k| k != i).map(logits).fold(R::neg_infinity(), R::max);
        let denom: R = (0..m).filter(|&k| k != i).map(|k| (logits(k) - mx).exp()).sum();
        loss = loss + (mx + denom.ln() - logits(pos));
        for k in (0..m).filter(|&k| k != i) {
            let p = (logits(k) - mx).exp() / denom;
            let ind = if k == pos { R::one() } else { R::zero() };
            g[i * m + k] = scale * (p - ind) / tau;
        }
    }
    loss = loss * scale;

    let mut du = vec![R::zero(); m * d];
    for i in 0..m {
        for k in 0..m {
            let w = g[i * m + k] + g[k * m + i];
            if w == R::zero() {
                continue;
            }
            for (o, &x) in du[i * d..(i + 1) * d].iter_mut().zip(&u[k * d..(k + 1) * d]) {
                *o = *o + w * x;
            }
        }
    }
    let mut dz = vec![R::zero(); m * d];
    for i in 0..m {
        let n = norms[i];
        if n == R::zero() {
            continue;
        }
        let ui = &u[i * d..(i + 1) * d];
        let dui = &du[i * d..(i + 1) * d];
        let radial: R = ui.iter().zip(dui).map(|(&a, &b)| a * b).sum();
        for ((o, &g), &x) in dz[i * d..(i + 1) * d].iter_mut().zip(dui).zip(ui) {
            *o = (g - radial * x) / n;
        }
    }
    Ok((loss, dz))
}

/// Mean binary cross entropy of logits against 0/1 labels, and its gradient.
pub fn bce<R: Real>(logits: &[R], labels: &[u8]) -> (R, Vec<R>) {
    let inv = R::one() / R::from_usize(logits.len().max(1)).unwrap();
    let mut loss = R::zero();
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&x, &y)| {
            let y = if y != 0 { R::one() } else { R::zero() };
            loss = loss + x.max(R::zero()) - x * y + (-x.abs()).exp().ln_1p();
            (sigmoid(x) - y) * inv
        })
        .collect();
    (loss * inv, grad)
}
