"""Identification of discrete-time bilinear Koopman surrogates.

Given sampled trajectories of a control-affine subsystem, the lifted
snapshots are regressed onto the one-step-ahead template

    explicit:  z[k+1] = A z[k] + sum_i u_i[k+1] B_i z[k]
    implicit:  z[k+1] = A z[k] + sum_i u_i[k+1] B_i z[k+1]

by a least-squares solve whose pseudoinverse is regularized through
singular value truncation. Retaining ``r`` singular values optionally
yields an ``r``-dimensional reduced model that shares the nonzero
spectrum of the unreduced one.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import EmptyDataError, IllConditionedError, NonDiagonalizableError
from .observables import ObservableDictionary, build_monomial_dictionary

EXPLICIT = "explicit"
IMPLICIT = "implicit"

#: eigenvector matrices with condition numbers beyond this are treated as
#: defective; eigenfunction coefficients would be numerically meaningless
DIAGONALIZABILITY_CONDITION_LIMIT = 1e12


# ---------------------------------------------------------------------------
# trajectory data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySegment:
    """One uniformly sampled trajectory piece.

    ``states`` is ``(n_states, N)``, ``inputs`` is ``(m, N)`` with
    ``inputs[:, k]`` the input that acted over the step ending at sample
    ``k`` (zero-order hold). ``frame_angle`` records the DQ rotation applied
    during preprocessing.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    frame_angle: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.size == 0:
            inputs = inputs.reshape(0, times.size)
        inputs = np.atleast_2d(inputs)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        if states.shape[1] != times.size or inputs.shape[1] != times.size:
            raise ValueError("states/inputs column count must match times")

    @property
    def n_samples(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class TrajectoryDataset:
    """Collection of segments sharing sample spacing and dimensions."""

    segments: tuple[TrajectorySegment, ...]
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise EmptyDataError("dataset has no segments")
        n = self.segments[0].states.shape[0]
        m = self.segments[0].inputs.shape[0]
        for seg in self.segments:
            if seg.states.shape[0] != n or seg.inputs.shape[0] != m:
                raise ValueError("all segments must share state/input dims")
            if seg.n_samples >= 2:
                spacing = np.diff(seg.times)
                if not np.allclose(spacing, self.dt, rtol=1e-9, atol=1e-12):
                    raise ValueError("segment sampling does not match dt")

    @property
    def n_states(self) -> int:
        return self.segments[0].states.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.segments[0].inputs.shape[0]


@dataclass(frozen=True)
class DataMatrices:
    """Lifted snapshot matrices for the least-squares identification.

    ``X1``/``X2`` hold current/next lifted states column-wise; the
    input-weighted blocks are ``Gamma_i = u_i[k+1] * X1`` columns for the
    explicit form and ``u_i[k+1] * X2`` for the implicit form. ``Omega``
    is the vertical stack ``[X1; Gamma_1; ...; Gamma_m]``. Both are exposed
    as computed properties; only ``X1``, ``X2`` and the inputs are stored.
    """

    X1: np.ndarray
    X2: np.ndarray
    inputs: np.ndarray          # (m, M), input sampled at the later step
    form: str
    dt: float
    dictionary: ObservableDictionary
    skipped_segments: int = 0

    @property
    def q(self) -> int:
        return self.X1.shape[0]

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.X1.shape[1]

    @property
    def _gamma_basis(self) -> np.ndarray:
        return self.X1 if self.form == EXPLICIT else self.X2

    @property
    def Gammas(self) -> list[np.ndarray]:
        basis = self._gamma_basis
        return [basis * self.inputs[i][None, :] for i in range(self.m)]

    @property
    def Omega(self) -> np.ndarray:
        return np.vstack([self.X1] + self.Gammas)


def assemble_data_matrices(dataset: TrajectoryDataset,
                           dictionary: ObservableDictionary,
                           form: str = EXPLICIT) -> DataMatrices:
    """Lift a trajectory dataset into snapshot matrices.

    Snapshot pairs never straddle segment boundaries. Segments with fewer
    than two samples contribute nothing and are counted in
    ``skipped_segments``.
    """
    if form not in (EXPLICIT, IMPLICIT):
        raise ValueError(f"form must be '{EXPLICIT}' or '{IMPLICIT}'")
    if dictionary.n_states != dataset.n_states:
        raise ValueError("dictionary n_states does not match dataset")

    x1_parts, x2_parts, u_parts = [], [], []
    skipped = 0
    for seg in dataset.segments:
        if seg.n_samples < 2:
            skipped += 1
            continue
        lifted = dictionary.lift_many(seg.states)
        x1_parts.append(lifted[:, :-1])
        x2_parts.append(lifted[:, 1:])
        u_parts.append(seg.inputs[:, 1:])
    if skipped:
        _warnings.warn(f"skipped {skipped} segment(s) shorter than 2 samples")
    if not x1_parts:
        raise EmptyDataError("no segment provides a snapshot pair")

    return DataMatrices(
        X1=np.ascontiguousarray(np.hstack(x1_parts)),
        X2=np.ascontiguousarray(np.hstack(x2_parts)),
        inputs=np.ascontiguousarray(np.hstack(u_parts)),
        form=form,
        dt=dataset.dt,
        dictionary=dictionary,
        skipped_segments=skipped,
    )


# ---------------------------------------------------------------------------
# identified model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KbfModel:
    """Identified discrete-time bilinear model in lifted coordinates.

    For a reduced model the state is ``zbar = P_pinv @ T(x)`` and original
    states are recovered through ``Cx @ P @ zbar``; unreduced models carry
    ``P = I``. Eigen-related fields are populated by :func:`eigen_analysis`.
    """

    form: str
    dt: float
    A: np.ndarray
    B: tuple[np.ndarray, ...]
    P: np.ndarray
    P_pinv: np.ndarray
    dictionary: ObservableDictionary
    reduced: bool
    r: int
    residual: float
    singular_values: np.ndarray
    warnings: tuple[str, ...] = ()
    eigenvalues_discrete: np.ndarray | None = None
    eigenvalues_continuous: np.ndarray | None = None
    left_eigenvectors: np.ndarray | None = None
    eigenfunction_coefficients: np.ndarray | None = None
    basis_change: np.ndarray | None = None

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.dictionary.dimension

    @property
    def m(self) -> int:
        return len(self.B)

    @property
    def n_states(self) -> int:
        return self.dictionary.n_states

    @property
    def state_map(self) -> np.ndarray:
        """Matrix taking the model state to the original state vector."""
        return self.dictionary.state_extractor() @ self.P

    def to_dict(self) -> dict:
        def mat(a):
            return None if a is None else _encode_array(a)
        return {
            "form": self.form,
            "dt": self.dt,
            "reduced": self.reduced,
            "r": self.r,
            "residual": self.residual,
            "A": mat(self.A),
            "B": [mat(b) for b in self.B],
            "P": mat(self.P),
            "P_pinv": mat(self.P_pinv),
            "singular_values": mat(self.singular_values),
            "warnings": list(self.warnings),
            "dictionary": self.dictionary.to_dict(),
            "eigenvalues_discrete": mat(self.eigenvalues_discrete),
            "eigenvalues_continuous": mat(self.eigenvalues_continuous),
            "left_eigenvectors": mat(self.left_eigenvectors),
            "eigenfunction_coefficients": mat(self.eigenfunction_coefficients),
            "basis_change": mat(self.basis_change),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KbfModel":
        def arr(v):
            return None if v is None else _decode_array(v)
        return cls(
            form=data["form"],
            dt=data["dt"],
            A=arr(data["A"]),
            B=tuple(arr(b) for b in data["B"]),
            P=arr(data["P"]),
            P_pinv=arr(data["P_pinv"]),
            dictionary=ObservableDictionary.from_dict(data["dictionary"]),
            reduced=data["reduced"],
            r=data["r"],
            residual=data["residual"],
            singular_values=arr(data["singular_values"]),
            warnings=tuple(data.get("warnings", ())),
            eigenvalues_discrete=arr(data.get("eigenvalues_discrete")),
            eigenvalues_continuous=arr(data.get("eigenvalues_continuous")),
            left_eigenvectors=arr(data.get("left_eigenvectors")),
            eigenfunction_coefficients=arr(data.get("eigenfunction_coefficients")),
            basis_change=arr(data.get("basis_change")),
        )


def _encode_array(a: np.ndarray):
    """Row-major nested lists; complex entries become [re, im] pairs."""
    a = np.asarray(a)
    if np.iscomplexobj(a):
        stacked = np.stack([a.real, a.imag], axis=-1)
        return {"complex": True, "data": stacked.tolist()}
    return {"complex": False, "data": a.tolist()}


def _decode_array(v) -> np.ndarray:
    data = np.asarray(v["data"], dtype=float)
    if v["complex"]:
        return data[..., 0] + 1j * data[..., 1]
    return data


# ---------------------------------------------------------------------------
# least squares with singular value truncation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _OmegaSvd:
    """Left singular subspace of the stacked regressor matrix, plus the
    cross products needed to form models at any retained order."""

    U: np.ndarray                # (q*(m+1), k) descending
    sigma: np.ndarray            # (k,) descending
    X2V: np.ndarray              # X2 @ V, columns scaled consistently with U
    x2_sq: float                 # ||X2||_F^2
    rank: int

    def truncate(self, r: int):
        eps = np.finfo(float).eps
        cutoff = eps * self.sigma[0] if self.sigma.size else 0.0
        if r < 1 or r > self.sigma.size:
            raise ValueError(
                f"truncation order r={r} outside 1..{self.sigma.size}")
        bad = np.nonzero(self.sigma[:r] <= cutoff)[0]
        if bad.size:
            raise IllConditionedError(
                int(bad[0]),
                f"singular value #{int(bad[0])} "
                f"({self.sigma[bad[0]]:.3e}) is below machine epsilon times "
                f"the largest singular value ({self.sigma[0]:.3e})")
        return self.U[:, :r], self.sigma[:r], self.X2V[:, :r]


def _svd_omega(dm: DataMatrices, method: str = "auto") -> _OmegaSvd:
    """Singular triplets of Omega together with ``X2 @ V``.

    For short-and-wide data the decomposition runs on the Gram matrix
    ``Omega @ Omega.T`` which avoids materializing singular vectors of
    length ``M``; small problems use a dense LAPACK SVD for full accuracy.
    """
    m_cols = dm.n_pairs
    rows = dm.q * (dm.m + 1)
    if method == "auto":
        method = "svd" if m_cols <= 5000 else "gram"

    if method == "svd":
        omega = dm.Omega
        u, s, vt = np.linalg.svd(omega, full_matrices=False)
        x2v = dm.X2 @ vt.T
    elif method == "gram":
        basis = dm._gamma_basis
        u_rows = dm.inputs
        nb = dm.m + 1
        q = dm.q
        gram = np.empty((rows, rows))
        cross = np.empty((dm.q, rows))

        def block(i):
            if i == 0:
                return dm.X1
            return basis * u_rows[i - 1][None, :]

        for i in range(nb):
            bi = block(i)
            cross[:, i * q:(i + 1) * q] = dm.X2 @ bi.T
            for j in range(i, nb):
                prod = bi @ block(j).T
                gram[i * q:(i + 1) * q, j * q:(j + 1) * q] = prod
                if j != i:
                    gram[j * q:(j + 1) * q, i * q:(i + 1) * q] = prod.T
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1]
        evals = np.clip(evals[order], 0.0, None)
        u = evecs[:, order]
        s = np.sqrt(evals)
        # X2 @ V = X2 @ (Omega.T U Sigma^-1) = cross @ U / sigma; columns
        # with numerically zero sigma are zeroed rather than amplified.
        safe = np.where(s > 0, s, 1.0)
        x2v = (cross @ u) / safe[None, :]
        x2v[:, s == 0] = 0.0
    else:
        raise ValueError(f"unknown method {method!r}")

    x2_sq = float(np.sum(dm.X2 * dm.X2))
    tol = max(rows, m_cols) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return _OmegaSvd(U=u, sigma=s, X2V=x2v, x2_sq=x2_sq, rank=rank)


def solve_kbf(dm: DataMatrices, r: int | None = None, reduce: bool = False,
              method: str = "auto", _svd: _OmegaSvd | None = None) -> KbfModel:
    """Solve the truncated least-squares problem for the bilinear model.

    ``r`` is the number of retained singular values (default: numerical
    rank). With ``reduce=True`` the returned model lives in the
    ``r``-dimensional coordinates ``zbar = P_pinv z`` and carries the
    expansion map ``P``; otherwise the model stays ``q``-dimensional with
    ``P = I``. The Frobenius residual of the regression is recorded on the
    model, and a rank-deficient ``P`` is flagged with a linear-consistency
    warning.
    """
    svd = _svd if _svd is not None else _svd_omega(dm, method=method)
    if r is None:
        r = svd.rank
    if r < 1:
        raise ValueError("need at least one retained singular value")
    if dm.n_pairs < r:
        raise ValueError(f"number of snapshot pairs ({dm.n_pairs}) is below "
                         f"the requested order r={r}")
    u_t, sigma_t, p_mat = svd.truncate(r)

    q = dm.q
    blocks = [u_t[i * q:(i + 1) * q, :] for i in range(dm.m + 1)]
    residual = math.sqrt(max(svd.x2_sq - float(np.sum(p_mat * p_mat)), 0.0))

    warn: list[str] = []
    if reduce:
        a_mat = (blocks[0].T @ p_mat) / sigma_t[:, None]
        b_mats = tuple((blk.T @ p_mat) / sigma_t[:, None]
                       for blk in blocks[1:])
        p_rank = np.linalg.matrix_rank(p_mat)
        if p_rank < r:
            warn.append(
                f"linear consistency at risk: P has column rank {p_rank} < "
                f"r={r}; the data matrices may not satisfy the kernel "
                "inclusion required for exact reduction")
        p = p_mat
        p_pinv = np.linalg.pinv(p_mat)
    else:
        scaled = p_mat / sigma_t[None, :]
        a_mat = scaled @ blocks[0].T
        b_mats = tuple(scaled @ blk.T for blk in blocks[1:])
        p = np.eye(q)
        p_pinv = np.eye(q)

    return KbfModel(
        form=dm.form,
        dt=dm.dt,
        A=a_mat,
        B=b_mats,
        P=p,
        P_pinv=p_pinv,
        dictionary=dm.dictionary,
        reduced=reduce,
        r=r,
        residual=residual,
        singular_values=sigma_t.copy(),
        warnings=tuple(warn),
    )


# ---------------------------------------------------------------------------
# eigenstructure
# ---------------------------------------------------------------------------

def eigen_analysis(model: KbfModel) -> KbfModel:
    """Attach eigenvalues, left eigenvectors and eigenfunction coefficients.

    Rows of ``W*`` (composed with ``P_pinv`` for reduced models) are the
    coefficient vectors of the identified eigenfunctions with respect to the
    observable basis. Continuous-time eigenvalues are ``log(mu)/dt`` on the
    principal branch; everything is sorted by descending real part of the
    continuous eigenvalue.
    """
    evals, evecs = np.linalg.eig(model.A)
    cond = np.linalg.cond(evecs)
    if not np.isfinite(cond) or cond > DIAGONALIZABILITY_CONDITION_LIMIT:
        raise NonDiagonalizableError(
            f"eigenvector condition number {cond:.3e} exceeds "
            f"{DIAGONALIZABILITY_CONDITION_LIMIT:.0e}; the state matrix is "
            "treated as defective")

    with np.errstate(divide="ignore", invalid="ignore"):
        continuous = np.log(evals.astype(complex)) / model.dt
    # zero discrete eigenvalues map to Re = -inf and sort last
    order = np.lexsort((-continuous.imag, -continuous.real))
    evals = evals[order]
    continuous = continuous[order]
    w = np.linalg.inv(evecs).conj().T[:, order]

    coeffs = w.conj().T @ model.P_pinv
    return replace(
        model,
        eigenvalues_discrete=evals,
        eigenvalues_continuous=continuous,
        left_eigenvectors=w,
        eigenfunction_coefficients=coeffs,
    )


def canonical_transform(model: KbfModel) -> KbfModel:
    """Re-express the model in real coordinates that block-diagonalize A.

    Complex-conjugate eigenpairs ``a +- jb`` become 2x2 blocks
    ``[[a, b], [-b, a]]`` and real eigenvalues become scalars on the
    diagonal. The change of basis is stored so lifted trajectories of the
    transformed system can be mapped back to the original coordinates.
    """
    if model.eigenvalues_discrete is None:
        raise ValueError("run eigen_analysis before canonical_transform")

    evals, evecs = np.linalg.eig(model.A)
    # align the fresh decomposition with the stored (sorted) eigenvalues
    evals_sorted = model.eigenvalues_discrete
    used = np.zeros(evals.size, dtype=bool)
    perm = []
    for lam in evals_sorted:
        cands = np.nonzero(~used)[0]
        j = cands[np.argmin(np.abs(evals[cands] - lam))]
        used[j] = True
        perm.append(j)
    evals = evals[perm]
    evecs = evecs[:, perm]

    n = evals.size
    t_cols = np.zeros((n, n))
    a_blocks = np.zeros((n, n))
    scale = max(1.0, float(np.max(np.abs(evals))))
    consumed = np.zeros(n, dtype=bool)
    col = 0
    for i in range(n):
        if consumed[i]:
            continue
        lam = evals[i]
        if abs(lam.imag) <= 1e-12 * scale:
            t_cols[:, col] = _normalized_real(evecs[:, i])
            a_blocks[col, col] = lam.real
            consumed[i] = True
            col += 1
            continue
        # find the conjugate partner among the unconsumed eigenvalues
        remaining = np.nonzero(~consumed)[0]
        remaining = remaining[remaining != i]
        if remaining.size == 0:
            raise NonDiagonalizableError(
                "complex eigenvalue without a conjugate partner")
        j = remaining[np.argmin(np.abs(evals[remaining] - lam.conjugate()))]
        consumed[i] = consumed[j] = True
        lam_use, vec = (lam, evecs[:, i]) if lam.imag > 0 else \
            (evals[j], evecs[:, j])
        vr, vi = vec.real, vec.imag
        norm = max(np.linalg.norm(vr), np.linalg.norm(vi), 1e-300)
        t_cols[:, col] = vr / norm
        t_cols[:, col + 1] = vi / norm
        a, b = lam_use.real, lam_use.imag
        a_blocks[col:col + 2, col:col + 2] = [[a, b], [-b, a]]
        col += 2

    t_inv = np.linalg.inv(t_cols)
    b_new = tuple(t_inv @ b @ t_cols for b in model.B)
    w_new = t_cols.T @ model.left_eigenvectors \
        if model.left_eigenvectors is not None else None

    return replace(
        model,
        A=a_blocks,
        B=b_new,
        P=model.P @ t_cols,
        P_pinv=t_inv @ model.P_pinv,
        left_eigenvectors=w_new,
        basis_change=t_cols,
    )


def _normalized_real(vec: np.ndarray) -> np.ndarray:
    """Real direction of an (almost) real eigenvector."""
    # rotate the complex vector so its largest entry is real, then project
    k = int(np.argmax(np.abs(vec)))
    phase = vec[k] / abs(vec[k]) if abs(vec[k]) > 0 else 1.0
    v = (vec / phase).real
    return v / max(np.linalg.norm(v), 1e-300)


# ---------------------------------------------------------------------------
# truncation order heuristic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationSuggestion:
    """Recommended retained order plus the evidence used to pick it.

    ``spectrum`` holds the continuous-time eigenvalues of the untruncated
    solution sorted by descending real part; ``sum_distances[k]`` is the
    distance from eigenvalue ``k`` to the nearest pairwise sum of earlier
    eigenvalues (NaN where no sums exist yet). ``flag`` is set when the
    spectrum was too short to analyze.
    """

    recommended_r: int
    spectrum: np.ndarray
    sum_distances: np.ndarray
    rank: int
    flag: str | None = None


def suggest_truncation_order(dm: DataMatrices, rel_tol: float = 1e-2,
                             method: str = "auto") -> TruncationSuggestion:
    """Pick the retained order where the eigenvalue spectrum starts repeating.

    Sums of two Koopman eigenvalues are themselves eigenvalues (of
    higher-order eigenfunctions), so the untruncated spectrum repeats once
    the genuine low-order content is exhausted. The recommendation is the
    largest ``r`` such that no eigenvalue up to index ``r`` lies within
    ``rel_tol`` times the largest retained decay rate of a pairwise sum of
    earlier eigenvalues; near-zero eigenvalues (the constant observable)
    are not used as summands.
    """
    svd = _svd_omega(dm, method=method)
    model = solve_kbf(dm, r=svd.rank, reduce=False, _svd=svd)
    model = eigen_analysis(model)
    spectrum = model.eigenvalues_continuous
    finite = spectrum[np.isfinite(spectrum.real)]

    q = dm.q
    distances = np.full(finite.size, np.nan)
    if q < 4:
        return TruncationSuggestion(
            recommended_r=q, spectrum=spectrum, sum_distances=distances,
            rank=svd.rank, flag="spectrum too short to analyze")

    scale = float(np.max(np.abs(finite.real))) if finite.size else 0.0
    zero_floor = 1e-9 * max(scale, 1.0)

    recommended = min(finite.size, svd.rank)
    for k in range(finite.size):
        gens = finite[:k]
        gens = gens[np.abs(gens.real) > zero_floor]
        if gens.size == 0:
            continue
        sums = gens[:, None] + gens[None, :]
        dist = float(np.min(np.abs(finite[k] - sums)))
        distances[k] = dist
        delta = rel_tol * float(np.max(np.abs(finite[:k].real)))
        if dist <= delta:
            recommended = k
            break

    recommended = max(1, min(recommended, svd.rank))
    return TruncationSuggestion(
        recommended_r=recommended, spectrum=spectrum,
        sum_distances=distances, rank=svd.rank)


__all__ = [
    "EXPLICIT", "IMPLICIT",
    "TrajectorySegment", "TrajectoryDataset", "DataMatrices",
    "assemble_data_matrices", "KbfModel", "solve_kbf", "eigen_analysis",
    "canonical_transform", "TruncationSuggestion", "suggest_truncation_order",
    "build_monomial_dictionary",
]
