//! Finite-element operators for the Matérn SPDE and the resulting GMRF
//! precision matrices.
//!
//! With piecewise-linear elements, a lumped (diagonal) mass matrix `C` and
//! the stiffness matrix `G`, the α = 1 field has precision
//! `Q = τ²(κ²C + G)`, which keeps the sparsity of the mesh graph.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Projector};
use crate::sparse::{Cholesky, SymMatrix};

/// Lumped mass and stiffness matrices of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct FemOperators {
    /// Diagonal of the lumped mass matrix (km²).
    pub c: Vec<f64>,
    /// Stiffness matrix; its pattern includes the full diagonal.
    pub g: SymMatrix,
}

impl FemOperators {
    pub fn n_vertices(&self) -> usize {
        self.c.len()
    }
}

/// Smoothness of the SPDE field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpdeOrder {
    #[default]
    Alpha1,
    Alpha2,
}

pub fn assemble_fem(mesh: &Mesh) -> Result<FemOperators> {
    let n = mesh.n_vertices();
    let mut c = vec![0.0; n];
    let mut triplets: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 0.0)).collect();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.triangle_area(t);
        if !(area > 0.0) {
            return Err(Error::DegenerateTriangle(t));
        }
        let p = mesh.corners(t);
        // gradient of the barycentric coordinate of corner i, times 2·area
        let grad: [(f64, f64); 3] = std::array::from_fn(|i| {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            (p[j].y - p[k].y, p[k].x - p[j].x)
        });
        for i in 0..3 {
            c[tri[i]] += area / 3.0;
            for j in 0..=i {
                let dot = grad[i].0 * grad[j].0 + grad[i].1 * grad[j].1;
                triplets.push((tri[i], tri[j], dot / (4.0 * area)));
            }
        }
    }
    Ok(FemOperators {
        c,
        g: SymMatrix::from_triplets(n, &triplets),
    })
}

/// A GMRF precision matrix with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Precision {
    pub q: SymMatrix,
    pub kappa: f64,
    pub tau: f64,
    pub order: SpdeOrder,
}

/// `Q = τ²(κ²C + G)`.
pub fn precision(ops: &FemOperators, kappa: f64, tau: f64) -> Result<Precision> {
    precision_with_order(ops, kappa, tau, SpdeOrder::Alpha1)
}

pub fn precision_with_order(
    ops: &FemOperators,
    kappa: f64,
    tau: f64,
    order: SpdeOrder,
) -> Result<Precision> {
    if !(kappa > 0.0 && kappa.is_finite()) || !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "kappa and tau must be positive, got kappa = {kappa}, tau = {tau}"
        )));
    }
    let k = shifted_stiffness(ops, kappa);
    let q = match order {
        SpdeOrder::Alpha1 => k.scaled(tau * tau),
        SpdeOrder::Alpha2 => {
            // K C⁻¹ K, accumulated through the middle index
            let n = ops.n_vertices();
            let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            for (i, j, v) in k.iter() {
                cols[j].push((i, v));
                if i != j {
                    cols[i].push((j, v));
                }
            }
            let mut triplets = Vec::new();
            for (mid, col) in cols.iter().enumerate() {
                for &(i, vi) in col {
                    for &(j, vj) in col {
                        if i >= j {
                            triplets.push((i, j, tau * tau * vi * vj / ops.c[mid]));
                        }
                    }
                }
            }
            SymMatrix::from_triplets(n, &triplets)
        }
    };
    Ok(Precision {
        q,
        kappa,
        tau,
        order,
    })
}

/// `κ²C + G` on the pattern of `G`.
fn shifted_stiffness(ops: &FemOperators, kappa: f64) -> SymMatrix {
    let mut k = ops.g.clone();
    let k2 = kappa * kappa;
    for (i, &ci) in ops.c.iter().enumerate() {
        let p = k.position(i, i).expect("stiffness pattern has a full diagonal");
        k.values_mut()[p] += k2 * ci;
    }
    k
}

/// Draws `count` vectors from `N(0, Q⁻¹)` via a sparse Cholesky factor of `Q`.
pub fn sample_gmrf<R: Rng + ?Sized>(q: &Precision, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let chol = Cholesky::new(&q.q)?;
    let n = chol.n();
    Ok((0..count)
        .map(|_| {
            let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            chol.sample_with(&z)
        })
        .collect())
}

/// Sparse design matrix given by its rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Design {
    pub n_cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl Design {
    pub fn new(n_cols: usize) -> Self {
        Design {
            n_cols,
            rows: Vec::new(),
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }

    pub fn t_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (row, &yi) in self.rows.iter().zip(y) {
            for &(j, a) in row {
                out[j] += a * yi;
            }
        }
        out
    }

    /// Lower-triangle triplets of `scale · AᵀA`.
    pub fn gram_triplets(&self, scale: f64) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::new();
        for row in &self.rows {
            for &(i, a) in row {
                for &(j, b) in row {
                    if i >= j {
                        t.push((i, j, scale * a * b));
                    }
                }
            }
        }
        t
    }
}

impl From<&Projector> for Design {
    fn from(p: &Projector) -> Self {
        Design {
            n_cols: p.n_vertices,
            rows: p.rows.clone(),
        }
    }
}

/// Posterior of `x ~ N(0, Q⁻¹)` given `y = A x + e`, `e ~ N(0, I/noise_prec)`:
/// returns the mean and `Q + noise_prec · AᵀA`.
pub fn conditional_gaussian(
    q_prior: &SymMatrix,
    a: &Design,
    noise_prec: f64,
    y: &[f64],
) -> Result<(Vec<f64>, SymMatrix)> {
    if a.n_cols != q_prior.n() {
        return Err(Error::DimensionMismatch {
            expected: q_prior.n(),
            found: a.n_cols,
        });
    }
    if a.rows.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: a.rows.len(),
            found: y.len(),
        });
    }
    let mut triplets: Vec<(usize, usize, f64)> = q_prior.iter().collect();
    triplets.extend(a.gram_triplets(noise_prec));
    let q_post = SymMatrix::from_triplets(q_prior.n(), &triplets);
    let chol = Cholesky::new(&q_post)?;
    let rhs: Vec<f64> = a.t_mul(y).into_iter().map(|v| v * noise_prec).collect();
    Ok((chol.solve(&rhs), q_post))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, MeshConfig, Point};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_triangle() -> Mesh {
        Mesh {
            vertices: vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)],
            triangles: vec![[0, 1, 2]],
            boundary: vec![[0, 1], [1, 2], [2, 0]],
            site_vertex: vec![0, 1, 2],
        }
    }

    fn random_mesh(n: usize, seed: u64, scale: f64) -> Mesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point> = (0..n)
            .map(|_| Point::new(scale * rng.random::<f64>(), scale * rng.random::<f64>()))
            .collect();
        build_mesh(&pts, &MeshConfig::default()).unwrap()
    }

    fn dense(m: &SymMatrix) -> DMatrix<f64> {
        let d = m.to_dense();
        DMatrix::from_fn(m.n(), m.n(), |i, j| d[i][j])
    }

    #[test]
    fn unit_right_triangle_matches_analytic_integrals() {
        let ops = assemble_fem(&unit_triangle()).unwrap();
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((ops.g.get(i, j) - expected[i][j]).abs() < 1e-12);
            }
            assert!((ops.c[i] - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let mut mesh = unit_triangle();
        mesh.vertices[2] = Point::new(2.0, 0.0);
        assert!(matches!(assemble_fem(&mesh), Err(Error::DegenerateTriangle(0))));
    }

    #[test]
    fn stiffness_is_a_psd_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..4 {
            let ops = assemble_fem(&random_mesh(20, seed, 10.0)).unwrap();
            let ones = vec![1.0; ops.n_vertices()];
            assert!(ops.g.mul_vec(&ones).iter().all(|v| v.abs() < 1e-10));
            for _ in 0..20 {
                let x: Vec<f64> = (0..ops.n_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
                assert!(ops.g.quad_form(&x) >= -1e-12);
            }
            let total: f64 = ops.c.iter().sum();
            let mesh = random_mesh(20, seed, 10.0);
            assert!((total - mesh.area()).abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_coordinates() {
        let mesh = random_mesh(12, 3, 1.0);
        let mut scaled = mesh.clone();
        scaled.vertices.iter_mut().for_each(|p| *p = Point::new(3.0 * p.x, 3.0 * p.y));
        let a = assemble_fem(&mesh).unwrap();
        let b = assemble_fem(&scaled).unwrap();
        for ((_, _, u), (_, _, v)) in a.g.iter().zip(b.g.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
        for (u, v) in a.c.iter().zip(&b.c) {
            assert!((9.0 * u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn precision_parameter_identities() {
        let ops = assemble_fem(&random_mesh(10, 1, 5.0)).unwrap();
        let q = precision(&ops, 1.0, 1.0).unwrap();
        for (i, j, v) in q.q.iter() {
            let c = if i == j { ops.c[i] } else { 0.0 };
            assert!((v - (c + ops.g.get(i, j))).abs() < 1e-14);
        }
        let q2 = precision(&ops, 1.3, 2.0).unwrap();
        let q1 = precision(&ops, 1.3, 1.0).unwrap();
        for ((_, _, a), (_, _, b)) in q2.q.iter().zip(q1.q.iter()) {
            assert!((a - 4.0 * b).abs() < 1e-12);
        }
        assert!(q.q.same_pattern(&ops.g));
        assert!(precision(&ops, 0.0, 1.0).is_err());
        assert!(precision(&ops, 1.0, -1.0).is_err());
    }

    #[test]
    fn large_kappa_eigenvalue_growth() {
        let ops = assemble_fem(&random_mesh(8, 2, 3.0)).unwrap();
        let cmin = ops.c.iter().copied().fold(f64::INFINITY, f64::min);
        let tau = 0.7;
        for kappa in [10.0, 100.0, 1000.0] {
            let q = precision(&ops, kappa, tau).unwrap();
            let eig = dense(&q.q).symmetric_eigen().eigenvalues;
            let lmin = eig.iter().copied().fold(f64::INFINITY, f64::min);
            let floor = tau * tau * kappa * kappa * cmin;
            assert!(lmin >= floor * (1.0 - 1e-10));
            if kappa == 1000.0 {
                assert!(lmin / floor < 1.001, "{}", lmin / floor);
            }
        }
    }

    #[test]
    fn alpha2_matches_dense_product() {
        let ops = assemble_fem(&random_mesh(9, 4, 4.0)).unwrap();
        let q = precision_with_order(&ops, 0.8, 1.5, SpdeOrder::Alpha2).unwrap();
        let k = dense(&ops.g) + DMatrix::from_diagonal(&DVector::from_vec(ops.c.clone())) * 0.64;
        let cinv = DMatrix::from_diagonal(&DVector::from_iterator(ops.c.len(), ops.c.iter().map(|c| 1.0 / c)));
        let expected = &k * cinv * &k * 2.25;
        assert!((dense(&q.q) - expected).norm() < 1e-10);
    }

    #[test]
    fn scalar_gmrf_variance() {
        let q = Precision {
            q: SymMatrix::diagonal(&[4.0]),
            kappa: 1.0,
            tau: 1.0,
            order: SpdeOrder::Alpha1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = sample_gmrf(&q, 100_000, &mut rng).unwrap();
        let var = draws.iter().map(|d| d[0] * d[0]).sum::<f64>() / draws.len() as f64;
        assert!((var / 0.25 - 1.0).abs() < 0.03, "{var}");
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_gmrf(&q, 5, &mut r1).unwrap(), sample_gmrf(&q, 5, &mut r2).unwrap());
    }

    #[test]
    fn gmrf_coordinate_variances() {
        let ops = assemble_fem(&random_mesh(12, 8, 4.0)).unwrap();
        let q = precision(&ops, 0.9, 0.6).unwrap();
        let cov = dense(&q.q).try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = sample_gmrf(&q, 50_000, &mut rng).unwrap();
        for i in 0..ops.n_vertices() {
            let v = draws.iter().map(|d| d[i] * d[i]).sum::<f64>() / draws.len() as f64;
            assert!((v / cov[(i, i)] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn non_pd_precision_fails() {
        let q = Precision {
            q: SymMatrix::diagonal(&[1.0, -1.0]),
            kappa: 1.0,
            tau: 1.0,
            order: SpdeOrder::Alpha1,
        };
        let err = sample_gmrf(&q, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(err.to_string().contains("precision not positive definite"));
    }

    #[test]
    fn relabeling_permutes_precision() {
        let mesh = random_mesh(10, 6, 5.0);
        let n = mesh.n_vertices();
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut relabeled = mesh.clone();
        relabeled.vertices = (0..n).map(|new| mesh.vertices[perm[new]]).collect();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        relabeled.triangles = mesh.triangles.iter().map(|t| t.map(|v| inv[v])).collect();
        let a = precision(&assemble_fem(&mesh).unwrap(), 0.7, 1.2).unwrap();
        let b = precision(&assemble_fem(&relabeled).unwrap(), 0.7, 1.2).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((a.q.get(perm[i], perm[j]) - b.q.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conditioning_cases() {
        let prior = SymMatrix::diagonal(&[1.0]);
        let (mean, post) = conditional_gaussian(&prior, &Design::new(1), 1.0, &[]).unwrap();
        assert_eq!(mean, vec![0.0]);
        assert_eq!(post, prior);

        let a = Design { n_cols: 1, rows: vec![vec![(0, 1.0)]] };
        let (mean, post) = conditional_gaussian(&prior, &a, 1.0, &[2.0]).unwrap();
        assert!((mean[0] - 1.0).abs() < 1e-15);
        assert!((post.get(0, 0) - 2.0).abs() < 1e-15);

        assert!(matches!(
            conditional_gaussian(&prior, &Design::new(2), 1.0, &[]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn conditioning_matches_dense_algebra() {
        let mesh = {
            let pts = [
                Point::new(0.0, 0.0),
                Point::new(2.0, 0.0),
                Point::new(2.0, 2.0),
                Point::new(0.0, 2.0),
                Point::new(1.0, 1.2),
            ];
            crate::mesh::delaunay(&pts).unwrap()
        };
        assert_eq!(mesh.n_vertices(), 5);
        let q = precision(&assemble_fem(&mesh).unwrap(), 1.1, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs: Vec<Point> = (0..8)
            .map(|_| Point::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)))
            .collect();
        let design = Design::from(&crate::mesh::projector(&mesh, &obs).unwrap());
        let y: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (mean, post) = conditional_gaussian(&q.q, &design, 2.5, &y).unwrap();

        let a = DMatrix::from_fn(8, 5, |i, j| {
            design.rows[i].iter().find(|e| e.0 == j).map_or(0.0, |e| e.1)
        });
        let qd = dense(&q.q) + a.transpose() * &a * 2.5;
        let md = qd.clone().cholesky().unwrap().solve(&(a.transpose() * DVector::from_vec(y) * 2.5));
        assert!((dense(&post) - qd).norm() < 1e-8);
        for i in 0..5 {
            assert!((mean[i] - md[i]).abs() < 1e-8);
        }
    }
}
