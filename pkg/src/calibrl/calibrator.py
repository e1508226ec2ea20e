"""Camera intrinsic and camera-IMU extrinsic estimation with covariance extraction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, UnobservableMotionError
from .geometry import euler_to_matrix, exp_so3, log_so3, skew, wrap_angle
from .sensorsim import GRAVITY, CameraIntrinsics, Checkerboard, ImageObservation, ImuData

log = logging.getLogger(__name__)

NORMALIZE_EPS = 1e-3
MIN_CORNERS = 6


@dataclass
class OptimalityMetrics:
    a_opt: float
    d_opt: float
    e_opt: float


@dataclass
class CalibrationResult:
    theta_star: np.ndarray
    covariance: np.ndarray
    normalized_covariance: np.ndarray
    reprojection_rms: float
    converged: bool
    cost_history: list = field(default_factory=list)

    @property
    def metrics(self) -> OptimalityMetrics:
        return optimality(self.normalized_covariance)

    def to_json(self) -> str:
        m = self.metrics
        return json.dumps(
            {
                "theta_star": self.theta_star.tolist(),
                "covariance": self.covariance.tolist(),
                "normalized_covariance": self.normalized_covariance.tolist(),
                "metrics": {"a_opt": m.a_opt, "d_opt": m.d_opt, "e_opt": m.e_opt},
                "reprojection_rms": self.reprojection_rms,
                "converged": self.converged,
            },
            indent=2,
        )


# ----------------------------------------------------------------------------
# information metrics


def normalize_covariance(sigma, theta_ref, eps: float = NORMALIZE_EPS) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    theta_ref = np.asarray(theta_ref, dtype=float).reshape(-1)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1] or sigma.shape[0] != theta_ref.size:
        raise ValueError(f"covariance shape {sigma.shape} does not match reference length {theta_ref.size}")
    d = 1.0 / np.maximum(np.abs(theta_ref), eps)
    return sigma * np.outer(d, d)


def optimality(sigma_bar) -> OptimalityMetrics:
    S = np.asarray(sigma_bar, dtype=float)
    scale = max(np.abs(S).max(), np.finfo(float).tiny)
    if np.abs(S - S.T).max() > 1e-9 * scale:
        raise ValueError("covariance is not symmetric")
    eig = np.linalg.eigvalsh(0.5 * (S + S.T))
    return OptimalityMetrics(float(np.trace(S)), float(np.linalg.det(S)), float(eig[-1]))


def relative_error(theta_star, theta_truth, angle_mask=None) -> float:
    """||estimate - truth|| / ||truth||; masked entries are compared as wrapped angles."""
    est = np.asarray(theta_star, dtype=float)
    truth = np.asarray(theta_truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError("dimension mismatch")
    norm = np.linalg.norm(truth)
    if norm == 0:
        raise ValueError("ground truth has zero norm")
    diff = est - truth
    if angle_mask is not None:
        mask = np.asarray(angle_mask, dtype=bool)
        diff[mask] = wrap_angle(diff[mask])
    return float(np.linalg.norm(diff) / norm)


# ----------------------------------------------------------------------------
# Levenberg-Marquardt


@dataclass
class LMResult:
    x: object
    cost: float
    converged: bool
    cost_history: list


def levenberg_marquardt(linearize, cost_fn, solve, retract, x0, max_iterations=100, max_retries=50, tol=1e-12):
    """Generic LM loop.

    ``linearize(x) -> (cost, gradient, hessian_like)``, ``solve(lin, lam) -> step``,
    ``retract(x, step) -> x_new``, ``cost_fn(x) -> float``.  Accepted iterations
    strictly decrease the cost; ``cost_history`` records every accepted cost.
    """
    x = x0
    lin = linearize(x)
    cost = lin[0]
    history = [cost]
    lam = None
    converged = False
    for _ in range(max_iterations):
        grad = lin[1]
        if np.max(np.abs(grad)) <= tol * max(1.0, cost) or cost <= 1e-30:
            converged = True
            break
        if lam is None:
            lam = 1e-4
        accepted = False
        for _ in range(max_retries):
            step = solve(lin, lam)
            x_new = retract(x, step)
            new_cost = cost_fn(x_new)
            if np.isfinite(new_cost) and new_cost < cost:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            # no damped step decreases the cost: either at a minimum or stuck
            converged = bool(np.max(np.abs(grad)) <= 1e-6 * max(1.0, cost))
            break
        rel = (cost - new_cost) / max(cost, np.finfo(float).tiny)
        x, cost = x_new, new_cost
        history.append(cost)
        lam = max(lam / 3.0, 1e-12)
        lin = linearize(x)
        if rel < tol:
            converged = True
            break
    else:
        grad = lin[1]
        converged = converged or np.max(np.abs(grad)) <= tol * max(1.0, cost)
    return LMResult(x, cost, converged, history)


def _damped_solve(H, g, lam):
    D = np.diag(np.diag(H)) + 1e-12 * np.eye(len(H)) * max(1.0, np.abs(np.diag(H)).max())
    return np.linalg.solve(H + lam * D, -g)


# ----------------------------------------------------------------------------
# observation padding


def _pad_observations(frames: list[ImageObservation], board: Checkerboard):
    """Padded (F, N, 3) board points, (F, N, 2) pixels and (F, N) mask."""
    n = max(len(f.ids) for f in frames)
    P = np.zeros((len(frames), n, 3))
    uv = np.zeros((len(frames), n, 2))
    mask = np.zeros((len(frames), n))
    corners = board.corners_board()
    for i, f in enumerate(frames):
        k = len(f.ids)
        P[i, :k] = corners[f.ids]
        uv[i, :k] = f.uv
        mask[i, :k] = 1.0
    return P, uv, mask


def _project(k, R, t, P):
    """Project board points P (F, N, 3) through poses R (F, 3, 3), t (F, 3)."""
    X = np.einsum("fij,fnj->fni", R, P) + t[:, None, :]
    z = X[..., 2]
    u = k[0] * X[..., 0] / z + k[2]
    v = k[1] * X[..., 1] / z + k[3]
    return np.stack([u, v], axis=-1), X


def _pose_jacobian(k, R, P, X):
    """d(u, v)/d(rot, trans) (F, N, 2, 6) and d(u, v)/d(fx, fy, cx, cy) (F, N, 2, 4)."""
    x, y, z = X[..., 0], X[..., 1], X[..., 2]
    dproj = np.zeros(X.shape[:-1] + (2, 3))
    dproj[..., 0, 0] = k[0] / z
    dproj[..., 0, 2] = -k[0] * x / z**2
    dproj[..., 1, 1] = k[1] / z
    dproj[..., 1, 2] = -k[1] * y / z**2
    RP = np.einsum("fij,fnj->fni", R, P)
    dX = np.concatenate([-skew(RP), np.broadcast_to(np.eye(3), RP.shape[:-1] + (3, 3))], axis=-1)
    Jp = dproj @ dX
    Jk = np.zeros(X.shape[:-1] + (2, 4))
    Jk[..., 0, 0] = x / z
    Jk[..., 1, 1] = y / z
    Jk[..., 0, 2] = 1.0
    Jk[..., 1, 3] = 1.0
    return Jp, Jk


# ----------------------------------------------------------------------------
# PnP


def _homography_pose(obs: ImageObservation, intr: CameraIntrinsics, board: Checkerboard):
    """Board-in-camera pose from a normalized DLT homography."""
    P = board.corners_board()[obs.ids][:, :2]
    m = np.column_stack([(obs.uv[:, 0] - intr.cx) / intr.fx, (obs.uv[:, 1] - intr.cy) / intr.fy])
    sP, sm = P.std() + 1e-12, m.std() + 1e-12
    Pn, mn = (P - P.mean(0)) / sP, (m - m.mean(0)) / sm
    A = []
    for (x, y), (u, v) in zip(Pn, mn):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    Hn = np.linalg.svd(np.asarray(A))[2][-1].reshape(3, 3)
    Tp = np.array([[1 / sP, 0, -P.mean(0)[0] / sP], [0, 1 / sP, -P.mean(0)[1] / sP], [0, 0, 1]])
    Tm_inv = np.array([[sm, 0, m.mean(0)[0]], [0, sm, m.mean(0)[1]], [0, 0, 1]])
    H = Tm_inv @ Hn @ Tp
    scale = 0.5 * (np.linalg.norm(H[:, 0]) + np.linalg.norm(H[:, 1]))
    H = H / scale
    if H[2, 2] < 0:
        H = -H
    r1, r2, t = H[:, 0], H[:, 1], H[:, 2]
    U, _, Vt = np.linalg.svd(np.column_stack([r1, r2, np.cross(r1, r2)]))
    R = U @ np.diag([1, 1, np.linalg.det(U @ Vt)]) @ Vt
    return R, t


def solve_pnp(frames: list[ImageObservation], intr: CameraIntrinsics, board: Checkerboard, iterations: int = 30):
    """Board-in-camera poses for each frame: (R (F, 3, 3), t (F, 3), rms (F,))."""
    init = [_homography_pose(f, intr, board) for f in frames]
    R = np.array([r for r, _ in init])
    t = np.array([t for _, t in init])
    P, uv, mask = _pad_observations(frames, board)
    k = intr.as_vector()
    lam = np.full(len(frames), 1e-4)

    def cost_of(R_, t_):
        pred, _ = _project(k, R_, t_, P)
        r = (pred - uv) * mask[..., None]
        return np.einsum("fni,fni->f", r, r)

    cost = cost_of(R, t)
    for _ in range(iterations):
        pred, X = _project(k, R, t, P)
        r = (pred - uv) * mask[..., None]
        Jp, _ = _pose_jacobian(k, R, P, X)
        Jp = Jp * mask[..., None, None]
        H = np.einsum("fnia,fnib->fab", Jp, Jp)
        g = np.einsum("fnia,fni->fa", Jp, r)
        D = np.einsum("faa->fa", H)[:, :, None] * np.eye(6)
        step = np.linalg.solve(H + lam[:, None, None] * D, -g[..., None])[..., 0]
        R_new = exp_so3(step[:, :3]) @ R
        t_new = t + step[:, 3:]
        new_cost = cost_of(R_new, t_new)
        better = new_cost < cost
        R[better], t[better], cost[better] = R_new[better], t_new[better], new_cost[better]
        lam = np.where(better, lam / 3.0, lam * 4.0)
        if np.all(cost < 1e-24) or np.all(lam > 1e12):
            break
    n = mask.sum(axis=1)
    return R, t, np.sqrt(cost / n)


# ----------------------------------------------------------------------------
# intrinsics


def calibrate_intrinsics(
    kept_frames: list[ImageObservation],
    board: Checkerboard,
    init: CameraIntrinsics | None = None,
    theta_ref=None,
    max_iterations: int = 100,
) -> CalibrationResult:
    """Joint LM over (fx, fy, cx, cy) and every frame's board pose.

    Per-frame poses are eliminated with a Schur complement, so the reduced
    system is always 4x4.
    """
    frames = [f for f in kept_frames if f.n_corners >= MIN_CORNERS]
    if len(frames) < 3:
        raise InsufficientDataError(f"need >= 3 frames with >= {MIN_CORNERS} corners, got {len(frames)}")
    w, h = frames[0].image_size
    if init is None:
        init = CameraIntrinsics.from_fov(1.0, w, h)
    R0, t0, _ = solve_pnp(frames, init, board)
    P, uv, mask = _pad_observations(frames, board)
    F = len(frames)

    def residuals(state):
        k, R, t = state
        pred, X = _project(k, R, t, P)
        return (pred - uv) * mask[..., None], X

    def cost_fn(state):
        r, X = residuals(state)
        if np.any(X[..., 2][mask > 0] <= 0):
            return np.inf
        return float(np.sum(r * r))

    def linearize(state):
        k, R, t = state
        r, X = residuals(state)
        Jp, Jk = _pose_jacobian(k, R, P, X)
        Jp = Jp * mask[..., None, None]
        Jk = Jk * mask[..., None, None]
        A = np.einsum("fnia,fnib->ab", Jk, Jk)
        B = np.einsum("fnia,fnib->fab", Jk, Jp)
        C = np.einsum("fnia,fnib->fab", Jp, Jp)
        gk = np.einsum("fnia,fni->a", Jk, r)
        gp = np.einsum("fnia,fni->fa", Jp, r)
        g = np.concatenate([gk, gp.ravel()])
        return float(np.sum(r * r)), g, (A, B, C, gk, gp)

    def solve(lin, lam):
        A, B, C, gk, gp = lin[2]
        Ad = A + lam * np.diag(np.diag(A)) + 1e-12 * np.eye(4)
        Cd = C + lam * np.einsum("faa->fa", C)[:, :, None] * np.eye(6) + 1e-12 * np.eye(6)
        Cinv = np.linalg.inv(Cd)
        BCinv = B @ Cinv
        S = Ad - np.einsum("fab,fcb->ac", BCinv, B)
        rhs = -gk + np.einsum("fab,fb->a", BCinv, gp)
        dk = np.linalg.solve(S, rhs)
        dp = np.einsum("fab,fb->fa", Cinv, -gp - np.einsum("fba,b->fa", B, dk))
        return dk, dp

    def retract(state, step):
        k, R, t = state
        dk, dp = step
        return k + dk, exp_so3(dp[:, :3]) @ R, t + dp[:, 3:]

    res = levenberg_marquardt(linearize, cost_fn, solve, retract, (init.as_vector(), R0, t0), max_iterations)
    k, R, t = res.x
    _, _, (A, B, C, _, _) = linearize(res.x)
    S = A - np.einsum("fab,fbc,fdc->ad", B, np.linalg.pinv(C), B)
    n_obs = int(mask.sum())
    dof = max(2 * n_obs - (4 + 6 * F), 1)
    sigma2 = res.cost / dof
    cov = np.linalg.pinv(S) * sigma2
    cov = 0.5 * (cov + cov.T)
    if theta_ref is None:
        theta_ref = k
    return CalibrationResult(
        theta_star=k,
        covariance=cov,
        normalized_covariance=normalize_covariance(cov, theta_ref),
        reprojection_rms=float(np.sqrt(res.cost / n_obs)),
        converged=res.converged,
        cost_history=res.cost_history,
    )


# ----------------------------------------------------------------------------
# extrinsics


@dataclass
class SensorSegment:
    """Camera frames and the IMU block recorded during one action.

    Frame timestamps must coincide with IMU sample times.
    """

    frames: list[ImageObservation]
    imu: ImuData


@dataclass(frozen=True)
class ExtrinsicSettings:
    acc_spacing: int = 3  # frames between second-difference samples
    # residual scales measured at truth with 0.5 px corner noise
    rot_sigma: float = 0.03  # rad
    acc_sigma: float = 1.5  # m/s^2
    prior_sigma: tuple | None = (0.01, 0.01, 0.01, 0.10, 0.10, 0.10)
    min_segments: int = 2
    fd_step: float = 1e-6


@dataclass
class _SegmentTerms:
    Rcum_frames: np.ndarray  # (nf, 3, 3) gyro-integrated IMU rotation from segment start
    R_wc: np.ndarray  # (nf, 3, 3) PnP camera rotations
    anchor0: np.ndarray  # initial IMU orientation at segment start (for nominal extrinsics)
    Rcum3: np.ndarray  # (nc, 3, 3, 3) gyro rotations at (k - s, k, k + s)
    p_wc3: np.ndarray  # (nc, 3, 3) PnP camera positions at (k - s, k, k + s)
    Rcum_c: np.ndarray  # (nc, 3, 3) gyro rotation at window centres
    F: np.ndarray  # (nc, 3) weighted specific-force sum in the IMU frame at k
    W: np.ndarray  # (nc, 3, 3) weighted rotation sum (bias coupling)
    weight_sum: float
    span: float  # (s * n * dt)^2
    rms: float


def _cumulative_rotations(gyro: np.ndarray, dt: float) -> np.ndarray:
    inc = exp_so3(gyro * dt)
    out = np.empty((len(gyro) + 1, 3, 3))
    out[0] = np.eye(3)
    for i, Ri in enumerate(inc):
        out[i + 1] = out[i] @ Ri
    return out


def _chordal_mean(Rs: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(Rs.sum(axis=0))
    return U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt


def _segment_terms(seg: SensorSegment, intr, board, settings: ExtrinsicSettings, R_bc0):
    imu = seg.imu
    dt = 1.0 / imu.rate
    valid = [f for f in seg.frames if f.n_corners >= MIN_CORNERS]
    if not valid:
        return None, 0, len(seg.frames)
    R_cb, t_cb, rms = solve_pnp(valid, intr, board)
    R_wc, p_wc = board.rotation @ np.transpose(R_cb, (0, 2, 1)), None
    p_wc = board.center - np.einsum("nij,nj->ni", R_wc, t_cb)
    idx = np.rint((np.array([f.timestamp for f in valid]) - imu.timestamps[0]) * imu.rate).astype(int)
    Rcum = _cumulative_rotations(imu.gyro, dt)
    Rf = Rcum[idx]
    anchor0 = _chordal_mean(R_wc @ R_bc0.T @ np.transpose(Rf, (0, 2, 1)))

    pos = {int(i): n for n, i in enumerate(idx)}
    frame_step = int(np.rint(np.median(np.diff(idx)))) if len(idx) > 1 else 1
    n = settings.acc_spacing * frame_step
    j = np.arange(-n + 1, n)
    w = (n - np.abs(j)).astype(float)
    centres = [int(i) for i in idx if (i - n) in pos and (i + n) in pos and i - n + 1 >= 0 and i + n - 1 < len(imu.accel)]
    nc = len(centres)
    F = np.zeros((nc, 3))
    W = np.zeros((nc, 3, 3))
    for c, i in enumerate(centres):
        samples = i + j
        dR = np.einsum("ji,njk->nik", Rcum[i], Rcum[samples])
        F[c] = np.einsum("n,nij,nj->i", w, dR, imu.accel[samples])
        W[c] = np.einsum("n,nij->ij", w, dR)
    cidx = np.array(centres, dtype=int).reshape(-1)
    trip = np.stack([cidx - n, cidx, cidx + n], axis=1) if nc else np.zeros((0, 3), dtype=int)
    p3 = p_wc[np.vectorize(pos.get, otypes=[int])(trip)] if nc else np.zeros((0, 3, 3))
    terms = _SegmentTerms(
        Rf, R_wc, anchor0, Rcum[trip] if nc else np.zeros((0, 3, 3, 3)), p3, Rcum[cidx] if nc else np.zeros((0, 3, 3)),
        F, W, float(w.sum()), float((n * dt) ** 2), float(np.sqrt(np.mean(rms**2))),
    )
    return terms, len(valid), len(seg.frames)


def _rotation_residuals(terms, R0, R_bc):
    # predicted camera orientation: anchor * gyro * extrinsic rotation
    pred = np.einsum("ij,njk,kl->nil", R0, terms.Rcum_frames, R_bc)
    return log_so3(np.einsum("nji,njk->nik", pred, terms.R_wc)).ravel()


def _accel_residuals(terms, R0, R_bc, t_bc, bias):
    if len(terms.F) == 0:
        return np.zeros(0)
    # camera origin sits at t_bc in the IMU frame
    p_i = terms.p_wc3 - np.einsum("ij,nkjl,l->nki", R0, terms.Rcum3, t_bc)
    d2p = p_i[:, 2] - 2.0 * p_i[:, 1] + p_i[:, 0]
    R_wi = np.einsum("ij,njk->nik", R0, terms.Rcum_c)
    integrated = np.einsum("nij,nj->ni", R_wi, terms.F - terms.W @ bias) + terms.weight_sum * GRAVITY
    dt2 = terms.span / terms.weight_sum
    return ((d2p - dt2 * integrated) / terms.span).ravel()


def calibrate_extrinsics(
    segments: list[SensorSegment],
    intr: CameraIntrinsics,
    board: Checkerboard,
    init=None,
    theta_ref=None,
    max_iterations: int = 10,
    settings: ExtrinsicSettings = ExtrinsicSettings(),
    prior_mean=None,
) -> CalibrationResult:
    """Batch estimate of the camera-in-IMU transform (x, y, z, roll, pitch, yaw).

    Stage one recovers camera poses from the board (PnP).  Stage two runs LM
    over the extrinsics plus, per segment, an accelerometer bias and the IMU
    orientation at the segment start.  IMU orientation elsewhere follows from
    the integrated gyro, so noisy PnP rotations never enter the gravity or
    lever-arm terms.  Residuals: camera orientation vs anchor * gyro *
    extrinsic rotation, and camera-derived second differences of IMU position
    vs triangle-weighted specific-force sums (exact on noiseless,
    finite-differenced data).
    """
    if len(segments) < settings.min_segments:
        raise InsufficientDataError(f"need data from >= {settings.min_segments} actions")
    theta0 = np.array([0.06, 0.0, -0.10, 0.0, 0.0, 1.5708]) if init is None else np.asarray(init, dtype=float)
    R_bc0 = euler_to_matrix(theta0[3:6])
    terms, n_valid, n_total = [], 0, 0
    for seg in segments:
        tm, nv, nt = _segment_terms(seg, intr, board, settings, R_bc0)
        n_valid += nv
        n_total += nt
        if tm is not None:
            terms.append(tm)
    if n_total == 0 or n_valid < 0.5 * n_total:
        raise InsufficientDataError("board visible in fewer than half of the frames")
    nseg = len(terms)
    prior_mean = theta0.copy() if prior_mean is None else np.asarray(prior_mean, dtype=float)
    # x = [theta(6), per segment: anchor correction(3), accel bias(3)]
    x0 = np.concatenate([theta0, np.zeros(6 * nseg)])

    def anchors(x):
        return [exp_so3(x[6 + 6 * s : 9 + 6 * s]) @ tm.anchor0 for s, tm in enumerate(terms)]

    def rot_res(x):
        R_bc = euler_to_matrix(x[3:6])
        return np.concatenate([_rotation_residuals(tm, R0, R_bc) for tm, R0 in zip(terms, anchors(x))])

    def res(x):
        R_bc = euler_to_matrix(x[3:6])
        parts = [rot_res(x) / settings.rot_sigma]
        for s, (tm, R0) in enumerate(zip(terms, anchors(x))):
            parts.append(_accel_residuals(tm, R0, R_bc, x[:3], x[9 + 6 * s : 12 + 6 * s]) / settings.acc_sigma)
        if settings.prior_sigma is not None:
            d = x[:6] - prior_mean
            d[3:] = wrap_angle(d[3:])
            parts.append(d / np.asarray(settings.prior_sigma))
        return np.concatenate(parts)

    def jac(fun, x, cols):
        h = settings.fd_step
        out = []
        for c in cols:
            e = np.zeros_like(x)
            e[c] = h
            out.append((fun(x + e) - fun(x - e)) / (2 * h))
        return np.column_stack(out)

    _check_rotation_excitation(jac(rot_res, x0, range(len(x0))), nseg)

    def linearize(x):
        r = res(x)
        J = jac(res, x, range(len(x)))
        return float(r @ r), J.T @ r, J.T @ J

    def cost_fn(x):
        r = res(x)
        return float(r @ r)

    result = levenberg_marquardt(
        linearize, cost_fn, lambda lin, lam: _damped_solve(lin[2], lin[1], lam), lambda x, d: x + d, x0, max_iterations
    )
    x = result.x.copy()
    r = res(x)
    J = jac(res, x, range(len(x)))
    dof = max(len(r) - len(x), 1)
    sigma2 = float(r @ r) / dof
    cov = np.linalg.pinv(J.T @ J)[:6, :6] * sigma2
    cov = 0.5 * (cov + cov.T)
    theta = x[:6].copy()
    theta[3:] = wrap_angle(theta[3:])
    if theta_ref is None:
        theta_ref = theta
    rms = float(np.sqrt(np.mean([tm.rms**2 for tm in terms])))
    return CalibrationResult(theta, cov, normalize_covariance(cov, theta_ref), rms, result.converged, result.cost_history)


def _check_rotation_excitation(J_rot: np.ndarray, nseg: int) -> None:
    """Raise if the extrinsic rotation is indistinguishable from the segment anchors."""
    J_theta = J_rot[:, 3:6]
    J_anchor = J_rot[:, [6 + 6 * s + k for s in range(nseg) for k in range(3)]]
    if J_anchor.size:
        coef, *_ = np.linalg.lstsq(J_anchor, J_theta, rcond=None)
        J_theta = J_theta - J_anchor @ coef
    if J_theta.size == 0 or np.linalg.svd(J_theta, compute_uv=False).max() < 1e-8:
        raise UnobservableMotionError("rotation between the sensors is not excited")
