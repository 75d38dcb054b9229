"""Quantum Fisher information of pure displaced-squeezed probes"""

import dataclasses
import logging
import typing

import numpy as np

from qlidar.errors import UnsupportedError
from qlidar.fim import CrbResult, InfoMatrix, analytic_homodyne_fim, crb
from qlidar.modes import (
    PARAMETERS,
    ModeBasis,
    envelope_time_derivative,
    envelopes,
    gamma_matrix,
    )
from qlidar.receiver import ReceiverSetup
from qlidar.state import StateSpec, signal_grid


logger = logging.getLogger("qlidar")


@dataclasses.dataclass(frozen=True, eq=False)
class QfimResult:
    info: InfoMatrix

    @property
    def entries(self) -> np.ndarray:
        return self.info.entries

    @property
    def qcrb(self) -> CrbResult:
        return crb(self.info)

    @property
    def qcrb_tau(self) -> float:
        return self.qcrb.var_tau

    @property
    def qcrb_omega(self) -> float:
        return self.qcrb.var_omega


def pure_gaussian_qfim(alpha: np.ndarray, r: np.ndarray, phi: np.ndarray,
                       gammas: typing.Sequence[np.ndarray]) -> np.ndarray:
    """QFIM of a product of displaced squeezed modes

    `gammas[i][k, n]` expands the derivative of mode k in mode n.  The
    result is 4 Re of the displacement contraction sum_m q_i^* q_j
    (q = Gamma^T alpha cosh r - Gamma alpha^* e^{i phi} sinh r) plus
    the two squeezing contractions.
    """
    c = np.cosh(r)
    s = np.sinh(r)
    e = s * np.exp(1j * phi)
    q = [(g.T @ alpha) * c - (g @ alpha.conj()) * e for g in gammas]
    pair = np.outer(c * e, c * e.conj())
    spread = np.outer(s ** 2, c ** 2)

    size = len(gammas)
    out = np.empty((size, size))
    for i in range(size):
        for j in range(size):
            total = (np.vdot(q[i], q[j])
                     + np.sum(gammas[i].T.conj() * gammas[j] * pair)
                     + np.sum(gammas[i].conj() * gammas[j] * spread))
            out[i, j] = 4 * total.real
    return 0.5 * (out + out.T)


def displaced_squeezed_qfim(spec: StateSpec, basis: ModeBasis,
                            kappa: float = 1.0) -> QfimResult:
    if kappa != 1:
        raise UnsupportedError("quantum Fisher information is only "
                               "available for a lossless channel")
    alpha = spec.displacement_vector(basis.n_max)
    r, phi = spec.squeezing_vectors(basis.n_max)
    if alpha[-1] != 0 or r[-1] > 0:
        logger.warning(f"Mode {basis.n_max} is populated; derivative "
                       "weight beyond the basis is dropped")
    gammas = [gamma_matrix(name, basis) for name in PARAMETERS]
    return QfimResult(InfoMatrix(pure_gaussian_qfim(alpha, r, phi, gammas)))


def coherent_qfim(spec: StateSpec, basis: ModeBasis) -> QfimResult:
    """4 Re <d_i s|d_j s> of a classical pulse, integrated in time"""
    if not spec.is_coherent:
        raise UnsupportedError("coherent_qfim does not accept squeezing")
    p = basis.params
    alpha = spec.displacement_vector(basis.n_max)
    t, dt = signal_grid(basis)
    signal = alpha @ envelopes(basis.n_max, t, p)
    # carrier cancels in the overlaps
    grads = np.array([
        -(alpha @ envelope_time_derivative(basis.n_max, t, p)),
        -1j * t * signal,
        -1j * signal,
    ])
    entries = 4 * np.real(grads.conj() @ grads.T) * dt
    return QfimResult(InfoMatrix(0.5 * (entries + entries.T)))


class GapReport(typing.NamedTuple):
    gap: np.ndarray
    eigenvalues: np.ndarray
    relative_diagonal: np.ndarray
    # largest QFIM entry
    scale: float

    def is_psd(self, tolerance: float = 1e-6) -> bool:
        return bool(self.eigenvalues[0] >= -tolerance * self.scale)


def qfim_vs_fim_gap(spec: StateSpec, basis: ModeBasis, rx: ReceiverSetup,
                    fim: typing.Optional[InfoMatrix] = None) -> GapReport:
    """QFIM minus a classical FIM of the same probe

    Without `fim` the homodyne FIM at zero detuning is used.
    """
    if rx.kappa != 1:
        raise UnsupportedError("the gap needs a lossless channel")
    if fim is None:
        if rx.delta_omega != 0 or rx.delta_theta != 0:
            raise UnsupportedError(
                "pass the FIM explicitly for a detuned receiver")
        fim = analytic_homodyne_fim(spec, basis, rx)
    quantum = displaced_squeezed_qfim(spec, basis).entries
    gap = quantum - fim.entries
    diag = np.diag(quantum)
    with np.errstate(divide="ignore", invalid="ignore"):
        relative = np.where(diag > 0, np.diag(gap) / diag, 0.0)
    return GapReport(gap, np.linalg.eigvalsh(gap), relative,
                     float(np.max(np.abs(quantum))))
