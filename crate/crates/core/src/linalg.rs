//! Small dense linear-algebra helpers shared by the registration stages.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};

use crate::geometry::{Point3, RigidTransform, Vector3};

pub(crate) fn skew(v: &Vector3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Polar factor of `m`: the rotation closest to `m` in Frobenius norm.
pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        r = u * d * v_t;
    }
    r
}

/// Rotation for a small-angle step `ω`: `I + [ω]×` projected onto SO(3).
pub(crate) fn small_angle_rotation(omega: &Vector3) -> Matrix3<f64> {
    nearest_rotation(&(Matrix3::identity() + skew(omega)))
}

/// Population covariance of `points` about `center`.
pub(crate) fn covariance<'a>(points: impl Iterator<Item = &'a Point3>, center: &Point3) -> Matrix3<f64> {
    let mut cov = Matrix3::zeros();
    let mut n = 0usize;
    for p in points {
        let d = p - center;
        cov += d * d.transpose();
        n += 1;
    }
    if n > 0 {
        cov /= n as f64;
    }
    cov
}

/// Unit eigenvector of the smallest eigenvalue, plus all eigenvalues
/// sorted ascending.
pub(crate) fn smallest_eigenvector(cov: &Matrix3<f64>) -> (Vector3, [f64; 3]) {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let v = eig.eigenvectors.column(order[0]).normalize();
    (
        v,
        [
            eig.eigenvalues[order[0]],
            eig.eigenvalues[order[1]],
            eig.eigenvalues[order[2]],
        ],
    )
}

/// Least-norm solution of the 6×6 normal equations `A x = b`; directions
/// the data does not constrain are left at zero.
pub(crate) fn solve_normal_equations(a: &Matrix6<f64>, b: &Vector6<f64>) -> Vector6<f64> {
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    let svd = a.svd(true, true);
    svd.solve(b, 1e-10 * scale).unwrap_or_else(|_| Vector6::zeros())
}

/// Applies the twist `(ω, v)` about `center` after `t`:
/// `Tr(c) ∘ (R(ω), v) ∘ Tr(−c) ∘ t`.
pub(crate) fn centered_update(t: &RigidTransform, delta: &Vector6<f64>, center: &Vector3) -> RigidTransform {
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let v = Vector3::new(delta[3], delta[4], delta[5]);
    let rd = small_angle_rotation(&omega);
    let rotation = rd * t.rotation();
    let translation = rd * (t.translation() - center) + v + center;
    RigidTransform::from_projected(&rotation, translation)
}
