//! Labeled feature export with an optional principal-component projection.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

use crate::attnio::{FeatureTable, HeadMask};
use crate::error::{Error, Result};
use crate::matcher::Instance;

/// Leading principal axes and the data projected onto them.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Unit vectors, one per row, by decreasing variance.
    pub components: Array2<f64>,
    /// `n x 2` coordinates; missing axes are zero.
    pub coords: Array2<f64>,
}

/// Projects the rows of `x` onto their two leading principal components.
///
/// Each axis is signed so that its largest-magnitude entry is positive.
pub fn pca_2d(x: ArrayView2<f64>) -> Projection {
    let (n, d) = x.dim();
    let k = d.min(2);
    let mut components = Array2::zeros((k, d));
    let mut coords = Array2::zeros((n, 2));
    if n < 2 || d == 0 {
        return Projection { components, coords };
    }
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let m = DMatrix::from_fn(n, d, |i, j| centered[[i, j]]);
    let cov = (m.transpose() * &m) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    for (c, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let pivot = v.iter().copied().fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[c, j]] = sign * v[j];
        }
    }
    let proj = centered.dot(&components.t());
    coords.slice_mut(ndarray::s![.., ..k]).assign(&proj);
    Projection { components, coords }
}

/// CSV of `instance_id,label` and one column per masked head (`l1h1` is the
/// first head of the first layer), plus `pc1,pc2` when requested.
pub fn export_projection(
    instances: &[Instance],
    features: &FeatureTable,
    mask: &HeadMask,
    with_pca: bool,
    out: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["instance_id".to_string(), "label".to_string()];
    header.extend(mask.iter().map(|(l, a)| format!("l{}h{}", l + 1, a + 1)));
    if with_pca {
        header.extend(["pc1".to_string(), "pc2".to_string()]);
    }
    w.write_record(&header)?;
    if !instances.is_empty() {
        let ids: Vec<&str> = instances.iter().map(|i| i.instance_id.as_str()).collect();
        let x = features.select(&ids, mask)?;
        let pcs = with_pca.then(|| pca_2d(x.view()).coords);
        for (r, inst) in instances.iter().enumerate() {
            let mut record = vec![inst.instance_id.clone(), inst.label.as_str().to_string()];
            record.extend(x.row(r).iter().map(|v| v.to_string()));
            if let Some(p) = &pcs {
                record.push(p[[r, 0]].to_string());
                record.push(p[[r, 1]].to_string());
            }
            w.write_record(&record)?;
        }
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}
