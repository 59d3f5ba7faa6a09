"""Polaron master equation (PME): the third correlator mode.

The exciton-phonon coupling is removed by the polaron transform
``exp[sigma^dag sigma sum_k (g_k/w_k)(b_k^dag - b_k)]``.  In that frame the
drive is renormalized to ``B Omega(t)`` and the residual interaction is

    H_I(t) = X_g(t) zeta_g + X_u(t) zeta_u,
    X_g = (Omega/2) sigma_x,    X_u = (Omega/2) sigma_y,

with bath operators whose correlation functions follow from the phonon
propagator ``phi(t)``:

    G_g(t) = B^2 (cosh phi(t) - 1),    G_u(t) = B^2 sinh phi(t).

Second-order time-convolutionless perturbation theory in ``H_I``, with the
system evolution inside the memory integral frozen at the instantaneous
Hamiltonian ``H_S(t) = -delta sigma^dag sigma - (B Omega(t) / 2) sigma_x``,
gives the time-local equation

    d rho/dt = -i [H_S, rho] + gamma D[sigma] rho
               - sum_m ( [X_m, L_m rho] - [X_m, rho L_m^dag] ),
    L_m = sum_{a,b} |a><a| X_m |b><b| Ghat_m(E_a - E_b),
    Ghat_m(nu) = int_0^inf G_m(s) exp(-i nu s) ds,

where ``|a>`` are the eigenvectors of ``H_S(t)`` with energies ``E_a``.  Outside
the pulses ``X_m = 0`` and the equation reduces to the bare Lindblad form;
at zero coupling ``B = 1``, ``phi = 0`` and it coincides with the lab-frame
generator for every ``t``.

Two-time correlators follow from the regression theorem applied in the
polaron frame; the lab-frame G1 carries the extra factor ``B^2 exp(phi(tau))``
(applied in :mod:`qdphotons.correlators`) while G2 is frame invariant.
"""
from __future__ import annotations

import logging

import numpy as np

from .influence import _gl_panels, polaron_displacement_functions
from .liouville import (NUMBER, SIGMA, SIGMA_X, SIGMA_Y, StepPropagators, commutator, dissipator,
                        left, right)
from .model import PhononBath, PhysicsConfig, drive_windows, pulse_envelope

log = logging.getLogger(__name__)

#: extent of the kernel integrals; phi(t) has decayed to < 1e-12 of phi(0)
#: long before this for all temperatures >= 1 K
KERNEL_SPAN = 40.0  # ps


class PolaronKernels:
    """Half-sided Fourier transforms of the polaron-frame bath correlations.

    Parameters
    ----------
    bath : PhononBath
    span : float
        Upper limit of the time integrals (ps).
    panel : float
        Panel width of the composite Gauss-Legendre rule in time (ps).
    """

    def __init__(self, bath: PhononBath, span: float = KERNEL_SPAN, panel: float = 0.25):
        self.bath = bath
        panels = int(np.ceil(span / panel))
        # _gl_panels integrates over [0, span] with a fixed 16-point rule per panel
        s, w = _gl_panels(float(span), panels)
        phi = np.empty(s.size, dtype=complex)
        for lo in range(0, s.size, 256):
            phi[lo:lo + 256], _ = polaron_displacement_functions(s[lo:lo + 256], bath)
        _, b = polaron_displacement_functions(np.zeros(1), bath)
        self.B = b
        self.s = s
        self.w_g = w * b * b * (np.cosh(phi) - 1.0)
        self.w_u = w * b * b * np.sinh(phi)

    def __call__(self, nu) -> tuple[np.ndarray, np.ndarray]:
        """``(Ghat_g(nu), Ghat_u(nu))`` for an array of frequencies."""
        ph = np.exp(-1j * np.multiply.outer(np.asarray(nu, dtype=float), self.s))
        return ph @ self.w_g, ph @ self.w_u


class PolaronGenerator:
    """Time-dependent 4x4 Liouvillian of the polaron master equation.

    Attributes
    ----------
    B : float
        Franck-Condon renormalization of the Rabi frequency.
    free : ndarray
        Generator outside the drive windows (Lindblad decay and detuning).
    """

    def __init__(self, config: PhysicsConfig):
        self.config = config
        self.detuning = -config.system.detuning
        gamma = config.system.radiative_rate
        self.free = -1j * commutator(self.detuning * NUMBER) + gamma * dissipator(SIGMA)
        if config.bath.scale == 0:
            self.kernels = None
            self.B = 1.0
        else:
            self.kernels = PolaronKernels(config.bath)
            self.B = self.kernels.B

    def hamiltonian(self, omega: float) -> np.ndarray:
        return self.detuning * NUMBER - 0.5 * self.B * omega * SIGMA_X

    def phonon_part(self, omega: float) -> np.ndarray:
        """Phonon-induced Liouvillian for the instantaneous Rabi frequency ``omega``."""
        if self.kernels is None or omega == 0.0:
            return np.zeros((4, 4), dtype=complex)
        energies, vecs = np.linalg.eigh(self.hamiltonian(omega))
        nu = energies[:, None] - energies[None, :]
        g_hat, u_hat = self.kernels(nu.ravel())
        out = np.zeros((4, 4), dtype=complex)
        for x_op, kern in ((0.5 * omega * SIGMA_X, g_hat), (0.5 * omega * SIGMA_Y, u_hat)):
            x_eig = vecs.conj().T @ x_op @ vecs
            lam = vecs @ (x_eig * kern.reshape(2, 2)) @ vecs.conj().T
            lam_dag = lam.conj().T
            # -[X, L rho] + [X, rho L^dag]
            out += -left(x_op @ lam) + left(lam) @ right(x_op)
            out += left(x_op) @ right(lam_dag) - right(lam_dag @ x_op)
        return out

    def __call__(self, t: float) -> np.ndarray:
        omega = pulse_envelope(t, self.config.pulses)
        coherent = -1j * commutator(self.hamiltonian(omega))
        return coherent + self.config.system.radiative_rate * dissipator(SIGMA) + self.phonon_part(omega)


def pme_step_propagators(config: PhysicsConfig, substeps: int = 16) -> StepPropagators:
    """Per-step PME propagators on the path-integral time grid (4th-order Magnus)."""
    gen = PolaronGenerator(config)
    windows = drive_windows(config.pulses) if config.pulses.area > 0 else []
    return StepPropagators(gen, gen.free, windows, config.grid.dt, substeps,
                           full_pattern=np.ones((4, 4)))


def pme_propagate(config: PhysicsConfig, t_max: float | None = None, check_invariants: bool = True):
    """Single-time PME trajectory of the reduced density matrix (polaron frame).

    The populations are frame invariant; the coherences are those of the
    polaron frame.
    """
    from .pathint import propagate_single_time
    return propagate_single_time(config, "pme", t_max=t_max, check_invariants=check_invariants)


def pme_correlators(config: PhysicsConfig, stride: int | None = None):
    """t-averaged lab-frame correlators from the regression theorem in the polaron frame."""
    from .correlators import averaged_correlators
    return averaged_correlators(config, "pme", stride=stride)
