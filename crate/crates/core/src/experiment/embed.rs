use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocessing::{Epoch, EpochKey};

/// Two-dimensional principal-component coordinates of a set of epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub keys: Vec<EpochKey>,
    pub labels: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    /// Variance along each of the two components.
    pub explained_variance: [f64; 2],
}

/// Projects the centred epoch vectors onto the two leading eigenvectors of
/// their covariance. Each component's sign is fixed so that its largest
/// loading is positive.
pub fn pca_embed(epochs: &[&Epoch]) -> Result<Embedding> {
    let n = epochs.len();
    if n < 2 {
        return Err(Error::invalid("embedding needs at least two epochs"));
    }
    let d = epochs[0].data.len();
    if d < 2 || epochs.iter().any(|e| e.data.len() != d) {
        return Err(Error::invalid("epochs must share one length of at least two values"));
    }
    let x = DMatrix::from_fn(n, d, |i, j| epochs[i].data[j]);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Vec::with_capacity(2);
    for &k in &order[..2] {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.neg_mut();
        }
        axes.push(v);
    }
    let coords = (0..n)
        .map(|i| {
            let row = centred.row(i);
            [row.dot(&axes[0].transpose()), row.dot(&axes[1].transpose())]
        })
        .collect();
    Ok(Embedding {
        keys: epochs.iter().map(|e| e.key()).collect(),
        labels: epochs.iter().map(|e| e.label).collect(),
        coords,
        explained_variance: [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)],
    })
}

/// `subject,session,index,label,pc1,pc2`
pub fn write_embedding_csv<W: Write>(w: W, emb: &Embedding) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["subject", "session", "index", "label", "pc1", "pc2"])?;
    for ((k, label), c) in emb.keys.iter().zip(&emb.labels).zip(&emb.coords) {
        out.write_record([
            k.subject.clone(),
            k.session.to_string(),
            k.index.to_string(),
            label.to_string(),
            c[0].to_string(),
            c[1].to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch(index: usize, data: Vec<f64>) -> Epoch {
        Epoch {
            subject: "S01".into(),
            session: 1,
            index,
            label: index % 2,
            rate_hz: 1.0,
            channels: 1,
            data,
        }
    }

    #[test]
    fn points_on_a_line_have_one_component() {
        // x = t * (1, 2, 2) / 3 for t in -2..=2: variance along the line is 2.5.
        let epochs: Vec<Epoch> = (-2..=2)
            .map(|t| {
                let t = t as f64;
                epoch((t + 2.0) as usize, vec![t / 3.0, 2.0 * t / 3.0, 2.0 * t / 3.0])
            })
            .collect();
        let refs: Vec<&Epoch> = epochs.iter().collect();
        let e = pca_embed(&refs).unwrap();
        assert!((e.explained_variance[0] - 2.5).abs() < 1e-12);
        assert!(e.explained_variance[1].abs() < 1e-12);
        for (i, c) in e.coords.iter().enumerate() {
            assert!((c[0] - (i as f64 - 2.0)).abs() < 1e-12, "{c:?}");
            assert!(c[1].abs() < 1e-12);
        }
        let mut buf = Vec::new();
        write_embedding_csv(&mut buf, &e).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }

    #[test]
    fn rejects_tiny_input() {
        let a = epoch(0, vec![1.0, 2.0]);
        assert!(pca_embed(&[&a]).is_err());
    }
}
