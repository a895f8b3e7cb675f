//! Log-space CTC forward-backward over blank-interleaved labels.

use ndarray::Array2;

use crate::error::{Error, Result};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Frames needed to emit `labels`: one per label plus a blank between repeats.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `labels` and its gradient with respect to the
/// raw (pre-softmax) logits.
pub fn ctc_loss_and_grad(
    logits: &Array2<f64>,
    labels: &[usize],
    blank: usize,
) -> Result<(f64, Array2<f64>)> {
    let (t_len, classes) = logits.dim();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes || l == blank) {
        return Err(Error::domain(format!("label {bad} is blank or out of range")));
    }
    let required = min_frames(labels);
    if t_len < required || t_len == 0 {
        return Err(Error::Infeasible {
            frames: t_len,
            required,
        });
    }
    let lp = log_softmax(logits);
    let s_len = 2 * labels.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { blank } else { labels[s / 2] })
        .collect();
    // Skip transition s-2 -> s is allowed onto a non-blank that differs from
    // the previous non-blank.
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = Array2::from_elem((t_len, s_len), ninf);
    alpha[[0, 0]] = lp[[0, ext[0]]];
    if s_len > 1 {
        alpha[[0, 1]] = lp[[0, ext[1]]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[[t - 1, s]];
            if s >= 1 {
                a = log_add(a, alpha[[t - 1, s - 1]]);
            }
            if can_skip(s) {
                a = log_add(a, alpha[[t - 1, s - 2]]);
            }
            if a != ninf {
                alpha[[t, s]] = a + lp[[t, ext[s]]];
            }
        }
    }

    // beta[t, s]: log-probability of emitting the remaining frames t+1.. given
    // state s at frame t (excludes the emission at t).
    let mut beta = Array2::from_elem((t_len, s_len), ninf);
    beta[[t_len - 1, s_len - 1]] = 0.0;
    if s_len > 1 {
        beta[[t_len - 1, s_len - 2]] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[[t + 1, s]] + lp[[t + 1, ext[s]]];
            if s + 1 < s_len {
                b = log_add(b, beta[[t + 1, s + 1]] + lp[[t + 1, ext[s + 1]]]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, beta[[t + 1, s + 2]] + lp[[t + 1, ext[s + 2]]]);
            }
            beta[[t, s]] = b;
        }
    }

    let mut log_p = alpha[[t_len - 1, s_len - 1]];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[[t_len - 1, s_len - 2]]);
    }
    if log_p == ninf {
        return Err(Error::Infeasible {
            frames: t_len,
            required,
        });
    }

    let mut grad = lp.mapv(f64::exp);
    let mut occ = vec![ninf; classes];
    for t in 0..t_len {
        occ.fill(ninf);
        for s in 0..s_len {
            occ[ext[s]] = log_add(occ[ext[s]], alpha[[t, s]] + beta[[t, s]]);
        }
        for (c, &o) in occ.iter().enumerate() {
            if o != ninf {
                grad[[t, c]] -= (o - log_p).exp();
            }
        }
    }
    Ok((-log_p, grad))
}

pub fn ctc_loss_labels(logits: &Array2<f64>, labels: &[usize], blank: usize) -> Result<f64> {
    ctc_loss_and_grad(logits, labels, blank).map(|(l, _)| l)
}
