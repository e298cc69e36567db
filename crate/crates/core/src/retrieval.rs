//! PCA reduction and cosine-distance ranking.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How many dimensions descriptors are reduced to before ranking.
pub const PCA_TARGET_DIMS: usize = 400;

/// Fitted PCA basis: `k = min(400, d, n_train - 1)` orthonormal components
/// of the centered training features, variance-sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f32>,
    /// `(k, d)`, rows orthonormal.
    pub components: Array2<f32>,
    /// Non-increasing, one entry per component.
    pub explained_variance: Array1<f32>,
}

/// Fit on training features only (rows are samples). Deterministic: the
/// eigensolver is pure Rust and each component's sign is fixed by making
/// its largest-magnitude coordinate positive.
pub fn fit_pca(train_features: &Array2<f32>) -> Result<PcaModel> {
    fit_pca_k(train_features, PCA_TARGET_DIMS)
}

pub fn fit_pca_k(train_features: &Array2<f32>, target: usize) -> Result<PcaModel> {
    let (n, d) = train_features.dim();
    if n < 2 {
        return Err(Error::Data(format!("PCA needs at least 2 samples, got {n}")));
    }
    let k = target.min(d).min(n - 1);

    // Everything in f64: covariance spectra collapse quickly in f32.
    let x = train_features.mapv(|v| v as f64);
    let mean = x.sum_axis(ndarray::Axis(0)) / n as f64;
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);

    let mut sym = nalgebra::DMatrix::<f64>::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            sym[(r, c)] = 0.5 * (cov[[r, c]] + cov[[c, r]]);
        }
    }
    let eig = nalgebra::SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut components = Array2::zeros((k, d));
    let mut explained = Array1::zeros(k);
    for (row, &ei) in order.iter().take(k).enumerate() {
        let col = eig.eigenvectors.column(ei);
        // Sign convention: largest-|coordinate| positive.
        let mut max_abs = 0.0f64;
        let mut sign = 1.0f64;
        for &v in col.iter() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                sign = if v < 0.0 { -1.0 } else { 1.0 };
            }
        }
        for c in 0..d {
            components[[row, c]] = (sign * col[c]) as f32;
        }
        explained[row] = eig.eigenvalues[ei].max(0.0) as f32;
    }

    Ok(PcaModel {
        mean: mean.mapv(|v| v as f32),
        components,
        explained_variance: explained,
    })
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }

    /// `components * (x - mean)`.
    pub fn project(&self, feature: &Array1<f32>) -> Result<Array1<f32>> {
        if feature.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "feature has {} dims, PCA expects {}",
                feature.len(),
                self.input_dim()
            )));
        }
        let centered = feature - &self.mean;
        Ok(self.components.dot(&centered))
    }

    pub fn project_rows(&self, features: &Array2<f32>) -> Result<Array2<f32>> {
        if features.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "features have {} dims, PCA expects {}",
                features.ncols(),
                self.input_dim()
            )));
        }
        let centered = features - &self.mean;
        Ok(centered.dot(&self.components.t()))
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.mean.iter().chain(self.components.iter()).chain(self.explained_variance.iter()) {
            h.update(v.to_le_bytes());
        }
        crate::checkpoint::hex_digest(h)
    }

    /// `pca.bin` (mean, components, variances as LE f32) + `pca.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        for v in self.mean.iter().chain(self.components.iter()).chain(self.explained_variance.iter()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(dir.join("pca.bin"), &bytes).map_err(|e| Error::io(dir.join("pca.bin"), e))?;
        let meta = serde_json::json!({ "d": self.input_dim(), "k": self.k() });
        std::fs::write(dir.join("pca.json"), serde_json::to_string_pretty(&meta)?)
            .map_err(|e| Error::io(dir.join("pca.json"), e))
    }

    pub fn load(dir: &Path) -> Result<PcaModel> {
        let meta: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.join("pca.json")).map_err(|e| Error::io(dir.join("pca.json"), e))?)?;
        let d = meta["d"].as_u64().ok_or_else(|| Error::Data("pca.json missing d".into()))? as usize;
        let k = meta["k"].as_u64().ok_or_else(|| Error::Data("pca.json missing k".into()))? as usize;
        let bytes = std::fs::read(dir.join("pca.bin")).map_err(|e| Error::io(dir.join("pca.bin"), e))?;
        let want = 4 * (d + k * d + k);
        if bytes.len() != want {
            return Err(Error::Data(format!("pca.bin has {} bytes, expected {want}", bytes.len())));
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(PcaModel {
            mean: Array1::from_vec(floats[..d].to_vec()),
            components: Array2::from_shape_vec((k, d), floats[d..d + k * d].to_vec()).unwrap(),
            explained_variance: Array1::from_vec(floats[d + k * d..].to_vec()),
        })
    }
}

/// `1 - cos(a, b)`, in `[0, 2]`. Exact zero vectors are rejected.
pub fn cosine_distance(a: &Array1<f32>, b: &Array1<f32>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} vs {}", a.len(), b.len())));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Index("cosine distance of a zero vector".into()));
    }
    Ok(1.0 - dot / (na.sqrt() * nb.sqrt()))
}

/// Immutable matrix of reduced descriptors with ids and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    vectors: Array2<f32>,
    ids: Vec<String>,
    labels: Vec<u32>,
    pca_checksum: String,
}

/// Ranked query result: `(id, distance)` with non-decreasing distance,
/// ties broken by ascending id; never contains the query's own id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub entries: Vec<(String, f64)>,
}

/// Project raw features and freeze them into an index. Ids must be unique
/// and aligned with `labels`.
pub fn build_index(
    features: &Array2<f32>,
    ids: Vec<String>,
    labels: Vec<u32>,
    pca: &PcaModel,
) -> Result<RetrievalIndex> {
    if features.nrows() != ids.len() || ids.len() != labels.len() {
        return Err(Error::Index(format!(
            "misaligned inputs: {} features, {} ids, {} labels",
            features.nrows(),
            ids.len(),
            labels.len()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for id in &ids {
        if !seen.insert(id.clone()) {
            return Err(Error::Index(format!("duplicate id {id:?}")));
        }
    }
    Ok(RetrievalIndex {
        vectors: pca.project_rows(features)?,
        ids,
        labels,
        pca_checksum: pca.checksum(),
    })
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn vector(&self, row: usize) -> Array1<f32> {
        self.vectors.row(row).to_owned()
    }

    pub fn pca_checksum(&self) -> &str {
        &self.pca_checksum
    }

    /// Construct directly from already reduced vectors (tests, file loads).
    pub fn from_reduced(vectors: Array2<f32>, ids: Vec<String>, labels: Vec<u32>) -> Result<Self> {
        if vectors.nrows() != ids.len() || ids.len() != labels.len() {
            return Err(Error::Index("misaligned index inputs".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.clone()) {
                return Err(Error::Index(format!("duplicate id {id:?}")));
            }
        }
        Ok(RetrievalIndex {
            vectors,
            ids,
            labels,
            pca_checksum: String::new(),
        })
    }

    /// Rank every item except `query_id` by ascending cosine distance to an
    /// already projected query feature.
    pub fn query(&self, query_feature: &Array1<f32>, query_id: &str) -> Result<RankedList> {
        let mut entries = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            if self.ids[i] == query_id {
                continue;
            }
            let d = cosine_distance(query_feature, &self.vectors.row(i).to_owned())?;
            entries.push((self.ids[i].clone(), d));
        }
        entries.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        Ok(RankedList { entries })
    }

    /// Class label of a stored id.
    pub fn label_of(&self, id: &str) -> Option<u32> {
        self.ids.iter().position(|i| i == id).map(|i| self.labels[i])
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingsSidecar {
    m: usize,
    k: usize,
    ids: Vec<String>,
    labels: Vec<u32>,
    pca_checksum: String,
    #[serde(default)]
    ckpt_checksum: Option<String>,
    #[serde(default)]
    manifest_checksum: Option<String>,
}

/// Write `embeddings.bin` (row-major LE f32) plus the `embeddings.json`
/// sidecar carrying ids, labels and lineage checksums.
pub fn save_index(
    index: &RetrievalIndex,
    dir: &Path,
    ckpt_checksum: Option<String>,
    manifest_checksum: Option<String>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::with_capacity(4 * index.vectors.len());
    for v in index.vectors.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(dir.join("embeddings.bin"), &bytes)
        .map_err(|e| Error::io(dir.join("embeddings.bin"), e))?;
    let sidecar = EmbeddingsSidecar {
        m: index.len(),
        k: index.k(),
        ids: index.ids.clone(),
        labels: index.labels.clone(),
        pca_checksum: index.pca_checksum.clone(),
        ckpt_checksum,
        manifest_checksum,
    };
    std::fs::write(
        dir.join("embeddings.json"),
        serde_json::to_string_pretty(&sidecar)?,
    )
    .map_err(|e| Error::io(dir.join("embeddings.json"), e))
}

/// Lineage recorded alongside an index.
pub struct IndexLineage {
    pub pca_checksum: String,
    pub ckpt_checksum: Option<String>,
    pub manifest_checksum: Option<String>,
}

pub fn load_index(dir: &Path) -> Result<(RetrievalIndex, IndexLineage)> {
    let sidecar_path = dir.join("embeddings.json");
    if !sidecar_path.exists() {
        return Err(Error::MissingArtifact {
            what: "retrieval index".into(),
            stage: "index".into(),
            path: dir.to_path_buf(),
        });
    }
    let sidecar: EmbeddingsSidecar = serde_json::from_slice(
        &std::fs::read(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?,
    )?;
    let bytes = std::fs::read(dir.join("embeddings.bin"))
        .map_err(|e| Error::io(dir.join("embeddings.bin"), e))?;
    if bytes.len() != 4 * sidecar.m * sidecar.k {
        return Err(Error::Data(format!(
            "embeddings.bin has {} bytes, sidecar says {}x{}",
            bytes.len(),
            sidecar.m,
            sidecar.k
        )));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let vectors = Array2::from_shape_vec((sidecar.m, sidecar.k), floats).unwrap();
    let mut index = RetrievalIndex::from_reduced(vectors, sidecar.ids, sidecar.labels)?;
    index.pca_checksum = sidecar.pca_checksum.clone();
    Ok((
        index,
        IndexLineage {
            pca_checksum: sidecar.pca_checksum,
            ckpt_checksum: sidecar.ckpt_checksum,
            manifest_checksum: sidecar.manifest_checksum,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(n: usize, d: usize, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || rng.gen::<f32>() - 0.5)
    }

    #[test]
    fn pca_k_rules() {
        let f = random_features(1000, 10, 1);
        assert_eq!(fit_pca(&f).unwrap().k(), 10);
        let f = random_features(5, 10, 2);
        assert_eq!(fit_pca(&f).unwrap().k(), 4); // n - 1
        let f = random_features(3, 2, 3);
        assert_eq!(fit_pca_k(&f, 400).unwrap().k(), 2);
        assert!(fit_pca(&random_features(1, 4, 4)).is_err());
    }

    #[test]
    fn pca_components_are_orthonormal() {
        let f = random_features(50, 12, 5);
        let pca = fit_pca(&f).unwrap();
        let gram = pca.components.dot(&pca.components.t());
        for r in 0..pca.k() {
            for c in 0..pca.k() {
                let want = if r == c { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[[r, c]], want, epsilon = 1e-5);
            }
        }
        // Variances are non-increasing.
        for w in pca.explained_variance.as_slice().unwrap().windows(2) {
            assert!(w[0] >= w[1] - 1e-9);
        }
    }

    #[test]
    fn planar_data_has_exactly_two_nonzero_variances() {
        // Analytic oracle: data = mean + a*u + b*v with u orthogonal to v,
        // so the covariance spectrum is {var(a), var(b), 0, 0, 0}.
        let u = array![1.0f32, 0.0, 0.0, 0.0, 0.0];
        let v = array![0.0f32, 1.0, 1.0, 0.0, 0.0] / 2.0f32.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 40;
        let mut data = Array2::zeros((n, 5));
        let mut coeffs = Vec::new();
        for i in 0..n {
            let a = rng.gen::<f32>() * 4.0 - 2.0;
            let b = rng.gen::<f32>() * 2.0 - 1.0;
            coeffs.push((a as f64, b as f64));
            for c in 0..5 {
                data[[i, c]] = 0.3 + a * u[c] + b * v[c];
            }
        }
        let pca = fit_pca(&data).unwrap();
        assert_eq!(pca.k(), 5);
        for i in 2..5 {
            assert!(
                pca.explained_variance[i].abs() < 1e-8,
                "variance {i} = {}",
                pca.explained_variance[i]
            );
        }
        // Leading variances equal the eigenvalues of the 2x2 coefficient
        // covariance matrix (a and b are not exactly uncorrelated in
        // sample), closed form for a symmetric 2x2.
        let asv: Vec<f64> = coeffs.iter().map(|c| c.0).collect();
        let bsv: Vec<f64> = coeffs.iter().map(|c| c.1).collect();
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let (ma, mb) = (mean(&asv), mean(&bsv));
        let mut va = 0.0;
        let mut vb = 0.0;
        let mut cab = 0.0;
        for i in 0..n {
            va += (asv[i] - ma) * (asv[i] - ma);
            vb += (bsv[i] - mb) * (bsv[i] - mb);
            cab += (asv[i] - ma) * (bsv[i] - mb);
        }
        let denom = (n - 1) as f64;
        let (va, vb, cab) = (va / denom, vb / denom, cab / denom);
        let tr = va + vb;
        let disc = ((va - vb) * (va - vb) + 4.0 * cab * cab).sqrt();
        let (hi, lo) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
        assert_abs_diff_eq!(pca.explained_variance[0] as f64, hi, epsilon = 1e-4);
        assert_abs_diff_eq!(pca.explained_variance[1] as f64, lo, epsilon = 1e-4);
    }

    #[test]
    fn projection_cases() {
        let f = random_features(30, 6, 7);
        let pca = fit_pca(&f).unwrap();
        // The training mean projects to (numerically) zero.
        let z = pca.project(&pca.mean.clone()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-5));
        // mean + component_i projects to e_i.
        for i in [0usize, 3] {
            let x = &pca.mean + &pca.components.row(i);
            let p = pca.project(&x).unwrap();
            for (j, v) in p.iter().enumerate() {
                let want = if j == i { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(*v, want, epsilon = 1e-4);
            }
        }
        assert!(pca.project(&Array1::zeros(5)).is_err());
    }

    #[test]
    fn full_rank_projection_is_isometric() {
        let f = random_features(60, 8, 8); // k = d = 8
        let pca = fit_pca(&f).unwrap();
        assert_eq!(pca.k(), 8);
        let proj = pca.project_rows(&f).unwrap();
        for i in 0..10 {
            for j in (i + 1)..10 {
                let orig: f32 = (&f.row(i) - &f.row(j)).mapv(|v| v * v).sum();
                let red: f32 = (&proj.row(i) - &proj.row(j)).mapv(|v| v * v).sum();
                assert!(
                    (orig.sqrt() - red.sqrt()).abs() < 1e-3 + 1e-6 * orig.sqrt(),
                    "{} vs {}",
                    orig.sqrt(),
                    red.sqrt()
                );
            }
        }
    }

    #[test]
    fn full_rank_projection_preserves_cosine_ordering() {
        // Rotations preserve inner products of centered vectors, so the
        // cosine ordering wrt centered originals survives exactly.
        let f = random_features(40, 6, 9);
        let pca = fit_pca(&f).unwrap();
        assert_eq!(pca.k(), 6);
        let proj = pca.project_rows(&f).unwrap();
        let centered = &f - &pca.mean;
        let q = 0usize;
        let mut d_orig: Vec<(usize, f64)> = (1..f.nrows())
            .map(|i| {
                (
                    i,
                    cosine_distance(&centered.row(q).to_owned(), &centered.row(i).to_owned()).unwrap(),
                )
            })
            .collect();
        let mut d_proj: Vec<(usize, f64)> = (1..f.nrows())
            .map(|i| {
                (
                    i,
                    cosine_distance(&proj.row(q).to_owned(), &proj.row(i).to_owned()).unwrap(),
                )
            })
            .collect();
        d_orig.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        d_proj.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let order_a: Vec<usize> = d_orig.iter().map(|e| e.0).collect();
        let order_b: Vec<usize> = d_proj.iter().map(|e| e.0).collect();
        assert_eq!(order_a, order_b);
    }

    #[test]
    fn pca_fit_is_deterministic() {
        let f = random_features(25, 7, 10);
        assert_eq!(fit_pca(&f).unwrap(), fit_pca(&f).unwrap());
    }

    #[test]
    fn cosine_distance_cases() {
        let v = array![1.0f32, 2.0, 3.0];
        assert_abs_diff_eq!(cosine_distance(&v, &v).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cosine_distance(&v, &v.mapv(|x| -x)).unwrap(), 2.0, epsilon = 1e-12);
        let e1 = array![1.0f32, 0.0];
        let e2 = array![0.0f32, 1.0];
        assert_abs_diff_eq!(cosine_distance(&e1, &e2).unwrap(), 1.0, epsilon = 1e-12);
        assert!(cosine_distance(&e1, &array![0.0f32, 0.0]).is_err());
    }

    fn identity_pca(d: usize) -> PcaModel {
        PcaModel {
            mean: Array1::zeros(d),
            components: Array2::eye(d),
            explained_variance: Array1::ones(d),
        }
    }

    #[test]
    fn build_index_contracts() {
        let f = random_features(4, 3, 11);
        let pca = identity_pca(3);
        let idx = build_index(
            &f,
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![0, 0, 1, 1],
            &pca,
        )
        .unwrap();
        assert_eq!(idx.len(), 4);

        let dup = build_index(
            &f,
            vec!["a".into(), "a".into(), "c".into(), "d".into()],
            vec![0, 0, 1, 1],
            &pca,
        );
        assert!(dup.is_err());

        let rebuilt = build_index(
            &f,
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![0, 0, 1, 1],
            &pca,
        )
        .unwrap();
        assert_eq!(idx, rebuilt);
    }

    #[test]
    fn query_excludes_self_and_ranks_duplicates_first() {
        let vectors = array![
            [1.0f32, 0.0],
            [1.0, 0.0], // exact duplicate of the query
            [0.0, 1.0],
        ];
        let idx = RetrievalIndex::from_reduced(
            vectors,
            vec!["q".into(), "dup".into(), "far".into()],
            vec![0, 0, 1],
        )
        .unwrap();
        let ranked = idx.query(&array![1.0f32, 0.0], "q").unwrap();
        assert_eq!(ranked.entries.len(), 2);
        assert_eq!(ranked.entries[0].0, "dup");
        assert_abs_diff_eq!(ranked.entries[0].1, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn query_order_matches_hand_computed_angles() {
        // Vectors at 0, 10, 40, 90 degrees from the query.
        let deg = |d: f64| {
            let r = d.to_radians();
            array![r.cos() as f32, r.sin() as f32]
        };
        let idx = RetrievalIndex::from_reduced(
            ndarray::stack![
                ndarray::Axis(0),
                deg(40.0),
                deg(0.0),
                deg(90.0),
                deg(10.0)
            ],
            vec!["c".into(), "a".into(), "d".into(), "b".into()],
            vec![0, 1, 2, 3],
        )
        .unwrap();
        let ranked = idx.query(&deg(0.0), "none").unwrap();
        let order: Vec<&str> = ranked.entries.iter().map(|e| e.0.as_str()).collect();
        assert_eq!(order, vec!["a", "b", "c", "d"]);
        // cos distances: 0, 1-cos10, 1-cos40, 1.
        assert_abs_diff_eq!(ranked.entries[2].1, 1.0 - 40f64.to_radians().cos(), epsilon = 1e-6);
    }

    #[test]
    fn tie_break_is_ascending_id() {
        let vectors = array![[1.0f32, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let idx = RetrievalIndex::from_reduced(
            vectors,
            vec!["z".into(), "m".into(), "a".into()],
            vec![0, 1, 2],
        )
        .unwrap();
        let ranked = idx.query(&array![1.0f32, 0.0], "none").unwrap();
        let order: Vec<&str> = ranked.entries.iter().map(|e| e.0.as_str()).collect();
        assert_eq!(order, vec!["a", "m", "z"]);
    }

    #[test]
    fn ranking_is_scale_invariant_and_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20;
        let f = random_features(n, 5, 13);
        let ids: Vec<String> = (0..n).map(|i| format!("item{i:02}")).collect();
        let labels: Vec<u32> = (0..n as u32).collect();
        let idx = RetrievalIndex::from_reduced(f.clone(), ids.clone(), labels.clone()).unwrap();
        let q = f.row(0).to_owned();
        let base = idx.query(&q, "item00").unwrap();
        assert_eq!(base, idx.query(&q, "item00").unwrap());

        // Independent positive rescaling of every vector and the query.
        let mut scaled = f.clone();
        for mut row in scaled.rows_mut() {
            let s = rng.gen_range(0.1f32..10.0);
            row.mapv_inplace(|v| v * s);
        }
        let idx2 = RetrievalIndex::from_reduced(scaled, ids, labels).unwrap();
        let q2 = q.mapv(|v| v * 3.7);
        let rescaled = idx2.query(&q2, "item00").unwrap();
        let order_a: Vec<&String> = base.entries.iter().map(|e| &e.0).collect();
        let order_b: Vec<&String> = rescaled.entries.iter().map(|e| &e.0).collect();
        assert_eq!(order_a, order_b);
    }

    #[test]
    fn index_and_pca_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let f = random_features(6, 4, 14);
        let pca = fit_pca(&f).unwrap();
        pca.save(dir.path()).unwrap();
        let pca2 = PcaModel::load(dir.path()).unwrap();
        assert_eq!(pca, pca2);

        let idx = build_index(
            &f,
            (0..6).map(|i| format!("i{i}")).collect(),
            vec![0, 0, 1, 1, 2, 2],
            &pca,
        )
        .unwrap();
        save_index(&idx, dir.path(), Some("ck".into()), Some("mf".into())).unwrap();
        let (idx2, lineage) = load_index(dir.path()).unwrap();
        assert_eq!(idx, idx2);
        assert_eq!(lineage.ckpt_checksum.as_deref(), Some("ck"));
        assert_eq!(lineage.pca_checksum, pca.checksum());
    }
}
